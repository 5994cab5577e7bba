//! Core domain types: the K-user channel y = Σ √snr·H_k·P_k·x_k + n with
//! circularly-symmetric unit-covariance complex noise, scenario
//! configuration, and structural validation.
//!
//! User order is the SIC decoding order (user 0 decoded first); reordering
//! is done by building a permuted model, never by a hidden field. All types
//! are immutable after construction and safe to share across workers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inputs::{Constellation, InputLaw, StandardName, standard_constellation};
use crate::linalg::ComplexMatrix;
use crate::scalar::Scalar;

/// Slack allowed on the precoder power trace check.
const POWER_TOL: f64 = 1e-9;

/// One transmitter: channel gains (n_r x n_t), precoder (n_t x n_t) and the
/// input distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLink<T> {
    pub channel: ComplexMatrix<T>,
    pub precoder: ComplexMatrix<T>,
    pub input: InputLaw<T>,
}

impl<T: Scalar> UserLink<T> {
    pub fn n_t(&self) -> usize {
        self.channel.cols()
    }

    /// Channel after precoding, H_k·P_k.
    pub fn effective_channel(&self) -> ComplexMatrix<T> {
        self.channel.mul(&self.precoder)
    }
}

/// The full K-user model. `users` is ordered by SIC decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel<T> {
    pub n_r: usize,
    pub users: Vec<UserLink<T>>,
}

/// A single violated invariant; `user` is the offending user index when the
/// violation is user-specific.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub user: Option<usize>,
    pub message: String,
}

/// Outcome of structural validation. Violations are data, not failures.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, user: Option<usize>, message: String) {
        self.violations.push(Violation { user, message });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            match v.user {
                Some(k) => writeln!(f, "user {}: {}", k + 1, v.message)?,
                None => writeln!(f, "{}", v.message)?,
            }
        }
        Ok(())
    }
}

impl<T: Scalar> SystemModel<T> {
    pub fn k_users(&self) -> usize {
        self.users.len()
    }

    pub fn all_discrete(&self) -> bool {
        self.users.iter().all(|u| u.input.is_discrete())
    }

    pub fn all_gaussian(&self) -> bool {
        self.users.iter().all(|u| !u.input.is_discrete())
    }

    /// Deterministic, side-effect-free structural validation. Returns every
    /// violated invariant with the offending user index.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.users.is_empty() {
            report.push(None, "system needs at least one user".into());
            return report;
        }
        if self.n_r == 0 {
            report.push(None, "receive dimension must be positive".into());
        }
        for (k, u) in self.users.iter().enumerate() {
            if u.channel.rows() != self.n_r {
                report.push(
                    Some(k),
                    format!(
                        "channel row mismatch user {}: {} rows, expected {}",
                        k + 1,
                        u.channel.rows(),
                        self.n_r
                    ),
                );
            }
            let n_t = u.channel.cols();
            if u.precoder.rows() != n_t || u.precoder.cols() != n_t {
                report.push(
                    Some(k),
                    format!(
                        "precoder must be {n_t}x{n_t} to match the channel, got {}x{}",
                        u.precoder.rows(),
                        u.precoder.cols()
                    ),
                );
            }
            if !u.channel.is_finite() || !u.precoder.is_finite() {
                report.push(Some(k), "matrix entries must be finite".into());
            }
            if u.precoder.rows() == n_t && u.precoder.cols() == n_t {
                let power = u.precoder.gram().trace().re;
                let budget = T::from_usize(n_t).unwrap() + T::lit(POWER_TOL);
                if power > budget {
                    report.push(
                        Some(k),
                        format!(
                            "precoder power exceeds n_t: trace(P·P†) = {} > {}",
                            power, n_t
                        ),
                    );
                }
            }
            if u.input.dim() != n_t {
                report.push(
                    Some(k),
                    format!(
                        "input law dimension {} does not match n_t = {}",
                        u.input.dim(),
                        n_t
                    ),
                );
            }
            if let InputLaw::Discrete(c) = &u.input {
                for msg in c.violations() {
                    report.push(Some(k), format!("constellation: {msg}"));
                }
            }
        }
        report
    }

    /// Effective gain A_k(snr) = √snr · H_k · P_k. snr = 0 gives the zero
    /// matrix.
    pub fn effective_gain(&self, k: usize, snr: T) -> ComplexMatrix<T> {
        assert!(snr >= T::zero(), "snr must be nonnegative");
        self.users[k].effective_channel().scaled(snr.sqrt())
    }

    /// A new model with users reordered according to `order` (a permutation
    /// of 0..K); position i of the result is decoded i-th.
    pub fn permuted(&self, order: &[usize]) -> SystemModel<T> {
        assert_eq!(order.len(), self.users.len());
        SystemModel {
            n_r: self.n_r,
            users: order.iter().map(|&k| self.users[k].clone()).collect(),
        }
    }
}

/// Named tolerance map with pinned defaults. Unknown names are carried
/// through untouched so scenario files can tune auxiliary knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tolerances<T>(pub BTreeMap<String, T>);

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        Tolerances(BTreeMap::new())
    }
}

impl<T: Scalar> Tolerances<T> {
    pub fn get(&self, name: &str, default: f64) -> T {
        self.0.get(name).copied().unwrap_or_else(|| T::lit(default))
    }

    /// Absolute floor on identity residuals.
    pub fn abs_tol(&self) -> T {
        self.get("abs_tol", 5e-3)
    }

    /// Z-score multiplier on Monte Carlo standard errors.
    pub fn z_tol(&self) -> T {
        self.get("z_tol", 3.0)
    }

    /// Relative tolerance for closed-form-vs-finite-difference Gaussian checks.
    pub fn gaussian_rel_tol(&self) -> T {
        self.get("gaussian_rel_tol", 1e-7)
    }

    /// Relative tolerance for exact algebraic Gaussian identities
    /// (telescoping, stage sums).
    pub fn gaussian_exact_rel_tol(&self) -> T {
        self.get("gaussian_exact_rel_tol", 1e-10)
    }

    /// Relative tolerance on the SIC gap-vs-integral self-consistency check.
    pub fn gap_rel_tol(&self) -> T {
        self.get("gap_rel_tol", 0.02)
    }

    /// Finite-difference relative step for closed-form functions.
    pub fn fd_step_rel_closed(&self) -> T {
        self.get("fd_step_rel_closed", 1e-5)
    }

    /// Number of log-grid points for the gap integral.
    pub fn gap_grid_points(&self) -> usize {
        self.get("gap_grid_points", 16.0).to_usize().unwrap_or(16)
    }

    /// Cap on enumerated joint tuples.
    pub fn enum_cap(&self) -> u64 {
        self.get("enum_cap", crate::inputs::DEFAULT_ENUM_CAP as f64)
            .to_u64()
            .unwrap_or(crate::inputs::DEFAULT_ENUM_CAP)
    }
}

/// The CLI's unit of work: a system plus the sweep configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub system: SystemModel<T>,
    pub snr_grid: Vec<T>,
    pub samples: u64,
    pub seed: u64,
    pub fd_step_rel: T,
    pub tolerances: Tolerances<T>,
}

impl<T: Scalar> Scenario<T> {
    /// System validation plus the scenario-level invariants.
    pub fn validate(&self) -> ValidationReport {
        let mut report = self.system.validate();
        if self.snr_grid.is_empty() {
            report.push(None, "snr_grid must be non-empty".into());
        }
        for w in self.snr_grid.windows(2) {
            if !(w[0] < w[1]) {
                report.push(None, "snr_grid must be strictly increasing".into());
                break;
            }
        }
        if self
            .snr_grid
            .first()
            .map(|s| *s <= T::zero())
            .unwrap_or(false)
        {
            report.push(None, "snr_grid values must be positive".into());
        }
        if self.samples < 1 {
            report.push(None, "sample budget must be at least 1".into());
        }
        if !(self.fd_step_rel > T::zero() && self.fd_step_rel < T::lit(0.5)) {
            report.push(None, "fd_step_rel must lie in (0, 0.5)".into());
        }
        // zero is tolerated so a tampered threshold fails checks downstream
        // instead of being rejected here
        for (name, v) in &self.tolerances.0 {
            if !(*v >= T::zero()) || !v.is_finite() {
                report.push(
                    None,
                    format!("tolerance `{name}` must be a nonnegative finite real"),
                );
            }
        }
        report
    }

    /// Position of an snr value on the grid, used to derive per-point rng
    /// substreams.
    pub fn grid_position(&self, snr: T) -> Option<usize> {
        self.snr_grid.iter().position(|s| *s == snr)
    }
}

// ---------------------------------------------------------------------------
// Scenario file schema.
//
// JSON object with keys `n_r`, `users` (array of {channel, precoder, input}),
// `snr_grid`, `samples`, `seed`, `fd_step_rel`, `tolerances`. Complex scalars
// are 2-element [re, im] arrays; matrices are row-major arrays of rows.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct ScenarioFile<T: Scalar> {
    pub n_r: usize,
    pub users: Vec<UserFile<T>>,
    pub snr_grid: Vec<T>,
    pub samples: u64,
    pub seed: u64,
    pub fd_step_rel: T,
    #[serde(default)]
    pub tolerances: Tolerances<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct UserFile<T: Scalar> {
    pub channel: ComplexMatrix<T>,
    pub precoder: ComplexMatrix<T>,
    pub input: InputSpec<T>,
}

/// Input law as written in scenario files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(
    tag = "type",
    rename_all = "lowercase",
    deny_unknown_fields,
    bound = "T: Scalar"
)]
pub enum InputSpec<T: Scalar> {
    Constellation {
        #[serde(skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        points: Option<Vec<Vec<[T; 2]>>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        probs: Option<Vec<T>>,
    },
    Gaussian,
}

impl<T: Scalar> ScenarioFile<T> {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::InvalidScenario(format!(
                "schema error at line {} column {}: {}",
                e.line(),
                e.column(),
                root_message(&e)
            ))
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Resolve the file into a validated scenario. `normalize` re-centers
    /// and rescales explicit point constellations instead of rejecting them.
    pub fn into_scenario(self, normalize: bool) -> Result<Scenario<T>> {
        let mut users = Vec::with_capacity(self.users.len());
        for (k, uf) in self.users.into_iter().enumerate() {
            let n_t = uf.channel.cols();
            let input = match uf.input {
                InputSpec::Gaussian => InputLaw::Gaussian { dim: n_t },
                InputSpec::Constellation {
                    name: Some(name),
                    points: None,
                    probs: None,
                } => {
                    let parsed = StandardName::parse(&name).map_err(|e| {
                        Error::InvalidScenario(format!("users[{k}].input.name: {e}"))
                    })?;
                    InputLaw::Discrete(standard_constellation(parsed, n_t)?)
                }
                InputSpec::Constellation {
                    name: None,
                    points: Some(points),
                    probs: Some(probs),
                } => {
                    let points: Vec<Vec<num_complex::Complex<T>>> = points
                        .into_iter()
                        .map(|p| {
                            p.into_iter()
                                .map(|[re, im]| num_complex::Complex::new(re, im))
                                .collect()
                        })
                        .collect();
                    let built = if normalize {
                        Constellation::normalized(n_t, points, probs)
                    } else {
                        Constellation::new(n_t, points, probs)
                    };
                    InputLaw::Discrete(
                        built.map_err(|e| {
                            Error::InvalidScenario(format!("users[{k}].input: {e}"))
                        })?,
                    )
                }
                _ => {
                    return Err(Error::InvalidScenario(format!(
                        "users[{k}].input: a constellation needs either `name` or both `points` and `probs`"
                    )));
                }
            };
            users.push(UserLink {
                channel: uf.channel,
                precoder: uf.precoder,
                input,
            });
        }
        let scenario = Scenario {
            system: SystemModel {
                n_r: self.n_r,
                users,
            },
            snr_grid: self.snr_grid,
            samples: self.samples,
            seed: self.seed,
            fd_step_rel: self.fd_step_rel,
            tolerances: self.tolerances,
        };
        let report = scenario.validate();
        if !report.is_ok() {
            let joined: Vec<String> = report
                .violations
                .iter()
                .map(|v| match v.user {
                    Some(k) => format!("users[{}]: {}", k, v.message),
                    None => v.message.clone(),
                })
                .collect();
            return Err(Error::InvalidScenario(joined.join("; ")));
        }
        Ok(scenario)
    }
}

fn root_message(e: &serde_json::Error) -> String {
    // serde_json repeats the location in its Display; strip it for a cleaner
    // wrapped message.
    let full = e.to_string();
    match full.find(" at line ") {
        Some(idx) => full[..idx].to_string(),
        None => full,
    }
}
