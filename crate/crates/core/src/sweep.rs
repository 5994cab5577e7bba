//! Grid-point evaluation driving the CLI sweep: one pass per snr computes
//! the joint information, its paired finite-difference derivative, the
//! estimation report, the aggregate oracle, and the per-user SIC columns,
//! all with common random numbers. Gaussian scenarios take the closed-form
//! route instead; mixed scenarios are rejected.

use serde::Serialize;

use crate::bayes::{DiscreteEngine, EngineRequest, ScalarEstimate};
use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianStageReport};
use crate::identities::fd_derivative;
use crate::linalg::ComplexMatrix;
use crate::mi::{MiEstimate, MiKind};
use crate::model::Scenario;
use crate::scalar::Scalar;

/// Per-user sweep columns at one snr.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UserColumns<T> {
    pub mmse: T,
    pub i_cond: T,
    pub i_marg: T,
    pub gap: T,
}

/// Everything the sweep knows about one grid point.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct SweepPoint<T> {
    pub snr: T,
    pub samples: u64,
    pub gaussian: bool,
    pub i_joint: ScalarEstimate<T>,
    pub mmse_total: T,
    pub psi: T,
    pub didsnr_fd: ScalarEstimate<T>,
    /// dI/dsnr − (mmse_total + psi); analytic-vs-fd for Gaussian points.
    pub residual_thm1: T,
    /// Combined standard error behind residual_thm1 (zero for Gaussian).
    pub residual_se: T,
    pub pass: bool,
    pub per_user: Vec<UserColumns<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_residual: Option<ScalarEstimate<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate_trace: Option<ScalarEstimate<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_decomposition_residual: Option<T>,
    /// Mean posterior cross moments E[x_k x_j†|y] per user pair (k < j).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_moment_mean: Option<Vec<ComplexMatrix<T>>>,
    /// Entrywise standard errors, packed as se(re) + i·se(im).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_moment_se: Option<Vec<ComplexMatrix<T>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_matrices: Option<Vec<ComplexMatrix<T>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_correlations: Option<Vec<Vec<ComplexMatrix<T>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<GaussianStageReport<T>>>,
}

/// Evaluate the whole snr grid of a scenario.
pub fn sweep_scenario<T: Scalar>(scenario: &Scenario<T>) -> Result<Vec<SweepPoint<T>>> {
    let system = &scenario.system;
    if system.all_discrete() {
        let engine = DiscreteEngine::new(system, scenario.tolerances.enum_cap())?;
        scenario
            .snr_grid
            .iter()
            .enumerate()
            .map(|(p, &snr)| {
                Ok(discrete_point(
                    scenario,
                    &engine,
                    snr,
                    ((p as u64) + 1) << 32,
                ))
            })
            .collect()
    } else if system.all_gaussian() {
        scenario
            .snr_grid
            .iter()
            .map(|&snr| gaussian_point(scenario, snr))
            .collect()
    } else {
        Err(Error::InvalidScenario(
            "mixed input laws unsupported".into(),
        ))
    }
}

fn discrete_point<T: Scalar>(
    scenario: &Scenario<T>,
    engine: &DiscreteEngine<T>,
    snr: T,
    stream_base: u64,
) -> SweepPoint<T> {
    let req = EngineRequest {
        snr,
        fd_step_rel: Some(scenario.fd_step_rel),
        want_joint_fd: true,
        want_user_mi: true,
        want_moments: true,
        want_user_fd: false,
        known_prefix: 0,
    };
    let out = engine.run(&req, scenario.samples, scenario.seed, stream_base);
    let fd = out.joint_fd.expect("fd requested");
    let m = out.moments.expect("moments requested");
    let residual = fd.mean - m.rhs.mean;
    let se = (fd.se * fd.se + m.rhs.se * m.rhs.se).sqrt();
    let pass = residual.abs()
        <= scenario
            .tolerances
            .abs_tol()
            .max(scenario.tolerances.z_tol() * se);
    let k = engine.k_users();
    let per_user = (0..k)
        .map(|u| UserColumns {
            mmse: m.mmse_per_user[u].mean,
            i_cond: out.cond_mi[u].mean,
            i_marg: out.marg_mi[u].mean,
            gap: out.gap[u].mean,
        })
        .collect();
    let mut cross = vec![vec![ComplexMatrix::zeros(1, 1); k]; k];
    for (a, row) in cross.iter_mut().enumerate() {
        for (b, slot) in row.iter_mut().enumerate() {
            *slot = ComplexMatrix::zeros(m.error_matrices[a].rows(), m.error_matrices[b].rows());
        }
    }
    for (pi, &(a, b)) in m.pairs.iter().enumerate() {
        cross[a][b] = m.cross_correlations[pi].clone();
        cross[b][a] = m.cross_correlations[pi].adjoint();
    }
    SweepPoint {
        snr,
        samples: out.samples,
        gaussian: false,
        i_joint: ScalarEstimate {
            value: out.joint_mi.mean,
            std_error: out.joint_mi.se,
        },
        mmse_total: m.mmse_total.mean,
        psi: m.psi.mean,
        didsnr_fd: ScalarEstimate {
            value: fd.mean,
            std_error: fd.se,
        },
        residual_thm1: residual,
        residual_se: se,
        pass,
        per_user,
        chain_residual: Some(out.chain_residual.estimate()),
        aggregate_trace: Some(m.aggregate_trace.estimate()),
        max_decomposition_residual: Some(m.max_rel_residual),
        cross_moment_mean: Some(m.cross_moment_mean),
        cross_moment_se: Some(m.cross_moment_se),
        error_matrices: Some(m.error_matrices),
        cross_correlations: Some(cross),
        stages: None,
    }
}

fn gaussian_point<T: Scalar>(scenario: &Scenario<T>, snr: T) -> Result<SweepPoint<T>> {
    let system = &scenario.system;
    let stages = gaussian::gaussian_report(system, snr)?;
    let joint = gaussian::mi_gaussian_joint(system, snr);
    let analytic = gaussian::mi_gaussian_joint_derivative(system, snr);
    let probe = |s: T| MiEstimate {
        value: gaussian::mi_gaussian_joint(system, s),
        std_error: T::zero(),
        samples: 0,
        kind: MiKind::Joint,
    };
    let fd = fd_derivative(probe, snr, scenario.tolerances.fd_step_rel_closed())?;
    let residual = analytic - fd.value;
    let rel = residual.abs() / analytic.abs().max(T::lit(1e-300));
    let pass = rel <= scenario.tolerances.gaussian_rel_tol();
    let per_user = stages
        .iter()
        .map(|st| {
            let marg = gaussian::mi_gaussian_marginal(system, st.user, snr);
            UserColumns {
                mmse: st.didsnr,
                i_cond: st.mi,
                i_marg: marg,
                gap: st.mi - marg,
            }
        })
        .collect();
    Ok(SweepPoint {
        snr,
        samples: 0,
        gaussian: true,
        i_joint: ScalarEstimate {
            value: joint,
            std_error: T::zero(),
        },
        mmse_total: analytic,
        psi: T::zero(),
        didsnr_fd: ScalarEstimate {
            value: fd.value,
            std_error: T::zero(),
        },
        residual_thm1: residual,
        residual_se: T::zero(),
        pass,
        per_user,
        chain_residual: None,
        aggregate_trace: None,
        max_decomposition_residual: None,
        cross_moment_mean: None,
        cross_moment_se: None,
        error_matrices: None,
        cross_correlations: None,
        stages: Some(stages),
    })
}
