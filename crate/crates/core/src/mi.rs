//! Monte Carlo mutual-information estimators for discrete inputs: the joint
//! I(x_1..x_K; y), per-user marginals I(x_k; y) with the other users treated
//! as unknown interference, and the SIC conditional terms
//! I(x_k; y | x_1..x_{k-1}).
//!
//! All estimators average exact log-density differences over sampled
//! (inputs, noise); the marginalized densities come from enumeration over
//! the remaining users' product support, so the estimates are unbiased.
//! Estimators sharing a seed consume the same sample stream, which is what
//! makes identity residuals (chain rule, gaps) cancel first-order Monte
//! Carlo noise.
//!
//! Natural log throughout; bit conversion is an output concern.

use serde::Serialize;

use crate::bayes::{DiscreteEngine, EngineRequest, ScalarEstimate};
use crate::error::Result;
use crate::inputs::DEFAULT_ENUM_CAP;
use crate::model::SystemModel;
use crate::scalar::Scalar;

/// What a mutual-information estimate measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MiKind {
    Joint,
    /// I(x_k; y), user index 0-based.
    Marginal(usize),
    /// I(x_k; y | x_1..x_{k-1}), user index 0-based.
    Conditional(usize),
}

/// A Monte Carlo mutual-information estimate in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub samples: u64,
    pub kind: MiKind,
}

/// I(x_1, ..., x_K; y) at the given snr.
pub fn mi_joint<T: Scalar>(
    system: &SystemModel<T>,
    snr: T,
    samples: u64,
    seed: u64,
) -> Result<MiEstimate<T>> {
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let out = engine.run(&EngineRequest::values_only(snr), samples, seed, 0);
    Ok(MiEstimate {
        value: out.joint_mi.mean,
        std_error: out.joint_mi.se,
        samples: out.samples,
        kind: MiKind::Joint,
    })
}

/// I(x_k; y) with every other user marginalized over its prior.
pub fn mi_marginal<T: Scalar>(
    system: &SystemModel<T>,
    k: usize,
    snr: T,
    samples: u64,
    seed: u64,
) -> Result<MiEstimate<T>> {
    assert!(k < system.k_users());
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let req = EngineRequest {
        want_user_mi: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(&req, samples, seed, 0);
    Ok(MiEstimate {
        value: out.marg_mi[k].mean,
        std_error: out.marg_mi[k].se,
        samples: out.samples,
        kind: MiKind::Marginal(k),
    })
}

/// I(x_k; y | x_1..x_{k-1}); k = 0 reduces to the marginal of user 0.
pub fn mi_conditional<T: Scalar>(
    system: &SystemModel<T>,
    k: usize,
    snr: T,
    samples: u64,
    seed: u64,
) -> Result<MiEstimate<T>> {
    assert!(k < system.k_users());
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let req = EngineRequest {
        want_user_mi: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(&req, samples, seed, 0);
    Ok(MiEstimate {
        value: out.cond_mi[k].mean,
        std_error: out.cond_mi[k].se,
        samples: out.samples,
        kind: MiKind::Conditional(k),
    })
}

/// Paired central-difference estimate of d mi_joint / d snr: both evaluation
/// points consume the same (inputs, noise) realizations, so the per-sample
/// difference quotient has the correlation-reduced variance.
pub fn mi_joint_derivative<T: Scalar>(
    system: &SystemModel<T>,
    snr: T,
    rel_step: T,
    samples: u64,
    seed: u64,
) -> Result<ScalarEstimate<T>> {
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let req = EngineRequest {
        fd_step_rel: Some(rel_step),
        want_joint_fd: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(&req, samples, seed, 0);
    let fd = out.joint_fd.expect("joint fd requested");
    Ok(ScalarEstimate {
        value: fd.mean,
        std_error: fd.se,
    })
}

/// Paired central-difference estimate of d mi_conditional(k) / d snr.
pub fn mi_conditional_derivative<T: Scalar>(
    system: &SystemModel<T>,
    k: usize,
    snr: T,
    rel_step: T,
    samples: u64,
    seed: u64,
) -> Result<ScalarEstimate<T>> {
    assert!(k < system.k_users());
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let req = EngineRequest {
        fd_step_rel: Some(rel_step),
        want_user_fd: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(&req, samples, seed, 0);
    Ok(ScalarEstimate {
        value: out.cond_fd[k].mean,
        std_error: out.cond_fd[k].se,
    })
}

/// Paired central-difference estimate of d mi_marginal(k) / d snr.
pub fn mi_marginal_derivative<T: Scalar>(
    system: &SystemModel<T>,
    k: usize,
    snr: T,
    rel_step: T,
    samples: u64,
    seed: u64,
) -> Result<ScalarEstimate<T>> {
    assert!(k < system.k_users());
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let req = EngineRequest {
        fd_step_rel: Some(rel_step),
        want_user_fd: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(&req, samples, seed, 0);
    Ok(ScalarEstimate {
        value: out.marg_fd[k].mean,
        std_error: out.marg_fd[k].se,
    })
}
