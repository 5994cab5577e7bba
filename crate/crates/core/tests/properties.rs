//! Property tests for the structural invariants.

use immse::bayes::posterior;
use immse::identities::{quadrature, quadrature_weights};
use immse::inputs::{InputLaw, StandardName, enumerate_joint, standard_constellation};
use immse::model::{SystemModel, UserLink};
use immse::{Matrix64, SystemModel64};
use num_complex::Complex;
use proptest::prelude::*;

type C64 = Complex<f64>;

fn small_entry() -> impl Strategy<Value = C64> {
    (-1.5f64..1.5, -1.5f64..1.5).prop_map(|(re, im)| C64::new(re, im))
}

fn scalar_bpsk_system(gains: Vec<C64>) -> SystemModel64 {
    let users = gains
        .into_iter()
        .map(|g| UserLink {
            channel: Matrix64::from_rows(&[vec![g]]).unwrap(),
            precoder: Matrix64::scalar(1.0),
            input: InputLaw::Discrete(standard_constellation(StandardName::Bpsk, 1).unwrap()),
        })
        .collect();
    SystemModel { n_r: 1, users }
}

proptest! {
    #[test]
    fn effective_gain_is_homogeneous_in_snr(
        h in small_entry(),
        snr in 1e-3f64..10.0,
        c in 1e-3f64..10.0,
    ) {
        let sys = scalar_bpsk_system(vec![h]);
        let scaled = sys.effective_gain(0, c * snr);
        let expect = sys.effective_gain(0, snr).scaled(c.sqrt());
        prop_assert!(scaled.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn effective_gain_is_linear_in_channel(
        h1 in small_entry(),
        h2 in small_entry(),
        snr in 1e-3f64..10.0,
    ) {
        let a = scalar_bpsk_system(vec![h1]).effective_gain(0, snr);
        let b = scalar_bpsk_system(vec![h2]).effective_gain(0, snr);
        let sum = scalar_bpsk_system(vec![h1 + h2]).effective_gain(0, snr);
        prop_assert!(sum.max_abs_diff(&a.add(&b)) < 1e-12);
    }

    #[test]
    fn joint_enumeration_is_a_pmf(k in 1usize..4) {
        let sys = scalar_bpsk_system(vec![C64::new(1.0, 0.0); k]);
        let joint = enumerate_joint(&sys).unwrap();
        prop_assert_eq!(joint.len(), 1 << k);
        let total: f64 = joint.iter().map(|(_, p)| *p).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!(joint.iter().all(|(_, p)| *p > 0.0));
    }

    #[test]
    fn standard_constellations_always_validate(dim in 1usize..3) {
        for name in [StandardName::Bpsk, StandardName::Qpsk, StandardName::Qam16] {
            let c = standard_constellation::<f64>(name, dim).unwrap();
            prop_assert!(c.violations().is_empty());
        }
    }

    #[test]
    fn posterior_matches_direct_density_sums(
        g2 in 0.2f64..1.0,
        yre in -3.0f64..3.0,
        yim in -3.0f64..3.0,
        snr in 0.05f64..8.0,
    ) {
        let sys = scalar_bpsk_system(vec![C64::new(1.0, 0.0), C64::new(g2, 0.0)]);
        let y = vec![C64::new(yre, yim)];
        let stats = posterior(&y, &sys, snr).unwrap();

        // direct sums, no log domain
        let mut z = 0.0;
        let mut m1 = C64::new(0.0, 0.0);
        for &x1 in &[1.0, -1.0] {
            for &x2 in &[1.0, -1.0] {
                let mean = snr.sqrt() * (x1 + g2 * x2);
                let d = y[0] - C64::new(mean, 0.0);
                let wt = 0.25 * (-d.norm_sqr()).exp() / std::f64::consts::PI;
                z += wt;
                m1 += C64::new(x1 * wt, 0.0);
            }
        }
        prop_assert!((stats.log_evidence - z.ln()).abs() < 1e-9);
        prop_assert!((stats.means[0][0] - m1 / z).norm() < 1e-9);

        // conditional covariance stays PSD with unit-power alphabets
        for k in 0..2 {
            let cov = stats.conditional_covariance(k);
            prop_assert!(cov.hermitian_defect() < 1e-10);
            prop_assert!(cov.get(0, 0).re >= -1e-12);
            prop_assert!(cov.get(0, 0).re <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn quadrature_is_linear(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let grid = [0.5f64, 1.0, 2.0, 4.0];
        let f = [1.0f64, 2.0, 0.5, -1.0];
        let g = [0.3f64, -0.4, 1.1, 0.2];
        let combo: Vec<f64> = f.iter().zip(g.iter()).map(|(x, y)| a * x + b * y).collect();
        let lhs = quadrature(&combo, &grid).unwrap();
        let rhs = a * quadrature(&f, &grid).unwrap() + b * quadrature(&g, &grid).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn quadrature_weights_cover_the_interval(n in 2usize..12) {
        let grid: Vec<f64> = (0..n).map(|i| 0.25 * (i as f64 + 1.0)).collect();
        let w = quadrature_weights(&grid).unwrap();
        // a constant integrand (its own extrapolation) covers [0, max]
        let total: f64 = w.iter().sum();
        prop_assert!((total - grid[n - 1]).abs() < 1e-12);
    }
}
