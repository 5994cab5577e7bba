//! Bundled desk-scale scenarios. Channel entries are literal values written
//! into the generated files, so runs are reproducible from the file alone.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::model::{InputSpec, Scenario, ScenarioFile, Tolerances, UserFile};

/// Names accepted by `scenario-init`.
pub const PRESET_NAMES: [&str; 5] = [
    "k1-bpsk",
    "k2-bpsk",
    "k2-qpsk-mimo2",
    "k3-bpsk",
    "k2-gaussian-mimo2",
];

/// 16 log-spaced snr points in [0.1, 10].
pub fn default_grid() -> Vec<f64> {
    (0..16)
        .map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 15.0))
        .collect()
}

fn default_tolerances() -> Tolerances<f64> {
    let mut t = Tolerances::default();
    t.0.insert("abs_tol".into(), 5e-3);
    t.0.insert("z_tol".into(), 3.0);
    t.0.insert("gaussian_rel_tol".into(), 1e-7);
    t.0.insert("gap_rel_tol".into(), 0.02);
    t.0.insert("gap_grid_points".into(), 48.0);
    t
}

fn c(re: f64, im: f64) -> Complex<f64> {
    Complex::new(re, im)
}

fn scalar_user(gain: f64, input: InputSpec<f64>) -> UserFile<f64> {
    UserFile {
        channel: ComplexMatrix::scalar(gain),
        precoder: ComplexMatrix::scalar(1.0),
        input,
    }
}

fn named(name: &str) -> InputSpec<f64> {
    InputSpec::Constellation {
        name: Some(name.to_string()),
        points: None,
        probs: None,
    }
}

fn mimo_user(rows: [[Complex<f64>; 2]; 2], input: InputSpec<f64>) -> UserFile<f64> {
    UserFile {
        channel: ComplexMatrix::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).unwrap(),
        precoder: ComplexMatrix::identity(2),
        input,
    }
}

/// Build the named bundled scenario file.
pub fn preset(name: &str) -> Result<ScenarioFile<f64>> {
    let base = |n_r: usize, users: Vec<UserFile<f64>>| ScenarioFile {
        n_r,
        users,
        snr_grid: default_grid(),
        samples: 200_000,
        seed: 42,
        fd_step_rel: 1e-3,
        tolerances: default_tolerances(),
    };
    match name {
        "k1-bpsk" => Ok(base(1, vec![scalar_user(1.0, named("bpsk"))])),
        "k2-bpsk" => Ok(base(
            1,
            vec![
                scalar_user(1.0, named("bpsk")),
                scalar_user(0.8, named("bpsk")),
            ],
        )),
        "k3-bpsk" => Ok(base(
            1,
            vec![
                scalar_user(1.0, named("bpsk")),
                scalar_user(0.8, named("bpsk")),
                scalar_user(0.6, named("bpsk")),
            ],
        )),
        "k2-qpsk-mimo2" => Ok(base(
            2,
            vec![
                mimo_user(
                    [[c(1.0, 0.0), c(0.25, 0.15)], [c(-0.10, 0.20), c(0.90, 0.0)]],
                    named("qpsk"),
                ),
                mimo_user(
                    [
                        [c(0.70, 0.0), c(-0.20, 0.10)],
                        [c(0.15, -0.25), c(0.60, 0.0)],
                    ],
                    named("qpsk"),
                ),
            ],
        )),
        "k2-gaussian-mimo2" => {
            let mut file = base(
                2,
                vec![
                    mimo_user(
                        [[c(0.90, 0.0), c(0.25, 0.15)], [c(0.0, -0.20), c(1.10, 0.0)]],
                        InputSpec::Gaussian,
                    ),
                    mimo_user(
                        [[c(0.60, 0.0), c(0.10, 0.0)], [c(0.30, -0.10), c(0.80, 0.0)]],
                        InputSpec::Gaussian,
                    ),
                ],
            );
            file.samples = 1_000; // closed forms; the budget is unused
            Ok(file)
        }
        other => Err(Error::InvalidScenario(format!(
            "unknown scenario name `{other}`; valid names: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// The named scenario, resolved and validated.
pub fn preset_scenario(name: &str) -> Result<Scenario<f64>> {
    preset(name)?.into_scenario(false)
}
