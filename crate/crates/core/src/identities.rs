//! The verification harness: finite-difference snr derivatives, the
//! derivative-equals-mmse-plus-psi identity, classical single-user
//! reductions, SIC chain-rule and gap checks, and trapezoid quadrature for
//! rate-gap integrals.
//!
//! Every report carries lhs, rhs, the residual, a combined standard error
//! and a pass flag; pass means |residual| ≤ max(abs_tol, z_tol·std_error)
//! with the tolerances taken from the scenario. One-sided checks store only
//! the violating part of the residual so the same rule applies.

use serde::Serialize;

use crate::bayes::{DiscreteEngine, EngineRequest, ScalarEstimate};
use crate::error::{Error, Result};
use crate::gaussian;
use crate::mi::MiEstimate;
use crate::model::Scenario;
use crate::scalar::Scalar;

/// Outcome of one identity check at one snr.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport<T> {
    pub id: String,
    pub snr: T,
    pub lhs: T,
    pub rhs: T,
    pub residual: T,
    pub std_error: T,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Breakdown<T>>,
}

/// Component values behind a derivative-identity check.
#[derive(Debug, Clone, Serialize)]
pub struct Breakdown<T> {
    pub mmse_total: T,
    pub psi: T,
    pub mmse_per_user: Vec<T>,
}

fn passes<T: Scalar>(residual: T, std_error: T, abs_tol: T, z_tol: T) -> bool {
    residual.abs() <= abs_tol.max(z_tol * std_error)
}

/// Central finite difference (f(snr(1+h)) − f(snr(1−h))) / (2·snr·h).
///
/// The returned standard error combines the two evaluations as if they were
/// independent, which is exact for closed-form probes (se = 0) and an upper
/// bound otherwise. Monte Carlo identity checks use the paired per-sample
/// estimators instead, which measure the correlation-reduced error
/// directly.
pub fn fd_derivative<T: Scalar, F>(f: F, snr: T, rel_step: T) -> Result<ScalarEstimate<T>>
where
    F: Fn(T) -> MiEstimate<T>,
{
    let half = T::lit(0.5);
    if !(rel_step > T::zero()) || rel_step >= half || snr * (T::one() - rel_step) <= T::zero() {
        return Err(Error::StepTooLarge {
            snr: snr.to_f64().unwrap_or(f64::NAN),
            step: rel_step.to_f64().unwrap_or(f64::NAN),
        });
    }
    let up = f(snr * (T::one() + rel_step));
    let down = f(snr * (T::one() - rel_step));
    let denom = (T::one() + T::one()) * snr * rel_step;
    Ok(ScalarEstimate {
        value: (up.value - down.value) / denom,
        std_error: (up.std_error * up.std_error + down.std_error * down.std_error).sqrt() / denom,
    })
}

/// Composite trapezoid over [0, max(grid)]. The integrands here are finite
/// and continuous at snr = 0, so the implicit zero endpoint takes the limit
/// linearly extrapolated from the two leftmost samples.
pub fn quadrature<T: Scalar>(values: &[T], grid: &[T]) -> Result<T> {
    let w = quadrature_weights(grid)?;
    assert_eq!(values.len(), grid.len(), "one value per grid point");
    Ok(values.iter().zip(w.iter()).map(|(&v, &wi)| v * wi).sum())
}

/// Trapezoid weights for [`quadrature`], aligned with the grid points (the
/// zero-endpoint extrapolation is folded into the first two weights).
pub fn quadrature_weights<T: Scalar>(grid: &[T]) -> Result<Vec<T>> {
    if grid.len() < 2 {
        return Err(Error::GridTooSmall(grid.len()));
    }
    assert!(grid[0] > T::zero(), "grid values must be positive");
    assert!(
        grid.windows(2).all(|w| w[0] < w[1]),
        "grid must be sorted increasing"
    );
    let half = T::lit(0.5);
    let mut w = vec![T::zero(); grid.len()];
    // strip [0, s0]: ∫ = s0·(f(0) + f0)/2 with f(0) = f0 − s0·(f1 − f0)/(s1 − s0)
    let s0 = grid[0];
    let corr = s0 * s0 / ((T::one() + T::one()) * (grid[1] - grid[0]));
    w[0] += s0 + corr;
    w[1] -= corr;
    for i in 0..grid.len() - 1 {
        let dx = (grid[i + 1] - grid[i]) * half;
        w[i] += dx;
        w[i + 1] += dx;
    }
    Ok(w)
}

/// Derive a per-grid-point rng substream base so grid points consume
/// independent streams while every estimator at one point shares one.
fn stream_base_for<T: Scalar>(scenario: &Scenario<T>, snr: T) -> u64 {
    match scenario.grid_position(snr) {
        Some(p) => ((p as u64) + 1) << 32,
        None => 0,
    }
}

/// Check dI/dsnr = mmse_total + psi at one snr, plus the aggregate-signal
/// cross-check and the vanishing of the mean conditional cross moments.
pub fn verify_derivative_identity<T: Scalar>(
    scenario: &Scenario<T>,
    snr: T,
) -> Result<Vec<IdentityReport<T>>> {
    let engine = DiscreteEngine::new(&scenario.system, scenario.tolerances.enum_cap())?;
    let req = EngineRequest {
        snr,
        fd_step_rel: Some(scenario.fd_step_rel),
        want_joint_fd: true,
        want_moments: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(
        &req,
        scenario.samples,
        scenario.seed,
        stream_base_for(scenario, snr),
    );
    let fd = out.joint_fd.expect("fd requested");
    let m = out.moments.as_ref().expect("moments requested");

    let abs_tol = scenario.tolerances.abs_tol();
    let z = scenario.tolerances.z_tol();
    let mut reports = Vec::new();

    let lhs = fd.mean;
    let rhs = m.rhs.mean;
    let residual = lhs - rhs;
    let se = (fd.se * fd.se + m.rhs.se * m.rhs.se).sqrt();
    reports.push(IdentityReport {
        id: "derivative_identity".into(),
        snr,
        lhs,
        rhs,
        residual,
        std_error: se,
        pass: passes(residual, se, abs_tol, z),
        breakdown: Some(Breakdown {
            mmse_total: m.mmse_total.mean,
            psi: m.psi.mean,
            mmse_per_user: m.mmse_per_user.iter().map(|s| s.mean).collect(),
        }),
    });

    // (mmse_total + psi) vs tr E_z of the aggregate signal; the difference
    // stream is zero-mean by the tower rule, so its own se is the yardstick.
    let diff = m.rhs_minus_aggregate;
    let floor = T::lit(1e-12) * (T::one() + m.rhs.mean.abs());
    reports.push(IdentityReport {
        id: "aggregate_crosscheck".into(),
        snr,
        lhs: m.rhs.mean,
        rhs: m.aggregate_trace.mean,
        residual: diff.mean,
        std_error: diff.se,
        pass: passes(diff.mean, diff.se, floor, z),
        breakdown: None,
    });

    // mean posterior cross moments must vanish entrywise
    let mut worst = T::zero();
    let mut worst_se = T::zero();
    let mut ok = true;
    for (mean, se) in m.cross_moment_mean.iter().zip(m.cross_moment_se.iter()) {
        for i in 0..mean.rows() {
            for j in 0..mean.cols() {
                let mv = mean.get(i, j);
                let sv = se.get(i, j);
                for (v, s) in [(mv.re, sv.re), (mv.im, sv.im)] {
                    if v.abs() > worst {
                        worst = v.abs();
                        worst_se = s;
                    }
                    ok &= v.abs() <= (z * s).max(T::lit(1e-12));
                }
            }
        }
    }
    reports.push(IdentityReport {
        id: "cross_moment_mean_zero".into(),
        snr,
        lhs: worst,
        rhs: T::zero(),
        residual: worst,
        std_error: worst_se,
        pass: ok,
        breakdown: None,
    });
    Ok(reports)
}

/// SIC checks at one snr: the chain rule, per-user gap signs and, for each
/// user, the gap against the integral of the derivative difference over
/// (0, snr] on an internal log grid.
pub fn verify_sic<T: Scalar>(scenario: &Scenario<T>, snr: T) -> Result<Vec<IdentityReport<T>>> {
    verify_sic_with(scenario, snr, true)
}

/// [`verify_sic`] with the (comparatively expensive) gap-integral family
/// optional.
pub fn verify_sic_with<T: Scalar>(
    scenario: &Scenario<T>,
    snr: T,
    gap_integrals: bool,
) -> Result<Vec<IdentityReport<T>>> {
    let engine = DiscreteEngine::new(&scenario.system, scenario.tolerances.enum_cap())?;
    let k_users = scenario.system.k_users();
    let req = EngineRequest {
        snr,
        want_user_mi: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(
        &req,
        scenario.samples,
        scenario.seed,
        stream_base_for(scenario, snr),
    );

    let abs_floor = T::lit(1e-12);
    let z = scenario.tolerances.z_tol();
    let mut reports = Vec::new();

    let chain = out.chain_residual;
    reports.push(IdentityReport {
        id: "chain_rule".into(),
        snr,
        lhs: out.joint_mi.mean,
        rhs: out.joint_mi.mean - chain.mean,
        residual: chain.mean,
        std_error: chain.se,
        pass: passes(chain.mean, chain.se, abs_floor, z),
        breakdown: None,
    });

    for k in 0..k_users {
        let gap = out.gap[k];
        // one-sided: only a negative gap violates; store the negative part
        let violation = gap.mean.min(T::zero());
        reports.push(IdentityReport {
            id: format!("gap_sign_user{}", k + 1),
            snr,
            lhs: gap.mean,
            rhs: T::zero(),
            residual: violation,
            std_error: gap.se,
            pass: passes(violation, gap.se, abs_floor, z),
            breakdown: None,
        });
    }

    if gap_integrals {
        let grid = gap_grid(scenario, snr);
        let weights = quadrature_weights(&grid)?;
        let mut integrand = vec![Vec::with_capacity(grid.len()); k_users];
        let mut integrand_se = vec![Vec::with_capacity(grid.len()); k_users];
        // every integrand point shares the gap evaluation's sample stream:
        // with common random numbers the Monte Carlo noise of the integral
        // telescopes against the gap itself, leaving only quadrature bias
        let base = stream_base_for(scenario, snr);
        for &s in grid.iter() {
            let req = EngineRequest {
                snr: s,
                fd_step_rel: Some(scenario.fd_step_rel),
                want_user_fd: true,
                ..EngineRequest::values_only(s)
            };
            let o = engine.run(&req, scenario.samples, scenario.seed, base);
            for k in 0..k_users {
                integrand[k].push(o.gap_fd[k].mean);
                integrand_se[k].push(o.gap_fd[k].se);
            }
        }
        for k in 0..k_users {
            let integral = quadrature(&integrand[k], &grid)?;
            let int_se = weights
                .iter()
                .zip(integrand_se[k].iter())
                .map(|(&w, &s)| (w * s) * (w * s))
                .sum::<T>()
                .sqrt();
            let gap = out.gap[k];
            let lhs = gap.mean;
            let residual = lhs - integral;
            let se = (gap.se * gap.se + int_se * int_se).sqrt();
            // relative criterion with Monte Carlo noise and fp dust floors
            let tol = (scenario.tolerances.gap_rel_tol() * lhs.abs().max(integral.abs()))
                .max(T::lit(1e-12));
            reports.push(IdentityReport {
                id: format!("gap_integral_user{}", k + 1),
                snr,
                lhs,
                rhs: integral,
                residual,
                std_error: se,
                pass: passes(residual, se, tol, z),
                breakdown: None,
            });
        }
    }
    Ok(reports)
}

/// Internal log grid over (0, snr] for the gap integral: two decades below
/// the endpoint, point count from the scenario tolerances. The default
/// 16-point density is calibrated against the 2% tolerance for endpoints
/// near snr = 4; larger endpoints need more points (the bundled scenarios
/// ship 48).
fn gap_grid<T: Scalar>(scenario: &Scenario<T>, snr: T) -> Vec<T> {
    let n = scenario.tolerances.gap_grid_points().max(2);
    let hi = snr.to_f64().unwrap();
    let lo = hi * 1e-2;
    (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            T::lit(lo * (hi / lo).powf(f))
        })
        .collect()
}

/// Gaussian closed-form checks at one snr: per-stage analytic derivative vs
/// a closed-form finite difference, telescoping of stage informations, the
/// stage-derivative sum, and the per-stage zero covariance correction.
pub fn verify_gaussian<T: Scalar>(
    scenario: &Scenario<T>,
    snr: T,
) -> Result<Vec<IdentityReport<T>>> {
    let system = &scenario.system;
    if let Some(k) = system.users.iter().position(|u| u.input.is_discrete()) {
        return Err(Error::NonGaussianInput(k));
    }
    let rel_tol = scenario.tolerances.gaussian_rel_tol();
    let exact_tol = scenario.tolerances.gaussian_exact_rel_tol();
    let step = scenario.tolerances.fd_step_rel_closed();
    let stages = gaussian::gaussian_report(system, snr)?;
    let mut reports = Vec::new();

    for st in &stages {
        let probe = |s: T| MiEstimate {
            value: gaussian::mi_gaussian_stage(system, st.user, s),
            std_error: T::zero(),
            samples: 0,
            kind: crate::mi::MiKind::Conditional(st.user),
        };
        let fd = fd_derivative(probe, snr, step)?;
        let rel = (st.didsnr - fd.value).abs() / st.didsnr.abs().max(T::lit(1e-300));
        reports.push(IdentityReport {
            id: format!("gauss_stage_derivative_user{}", st.user + 1),
            snr,
            lhs: st.didsnr,
            rhs: fd.value,
            residual: rel,
            std_error: T::zero(),
            pass: rel <= rel_tol,
            breakdown: None,
        });
        let psi_rel = st.psi_correction.abs() / st.didsnr.abs().max(T::one());
        reports.push(IdentityReport {
            id: format!("gauss_psi_zero_user{}", st.user + 1),
            snr,
            lhs: st.psi_correction,
            rhs: T::zero(),
            residual: psi_rel,
            std_error: T::zero(),
            pass: psi_rel <= exact_tol,
            breakdown: None,
        });
    }

    let stage_sum: T = stages.iter().map(|s| s.mi).sum();
    let joint = gaussian::mi_gaussian_joint(system, snr);
    let rel = (stage_sum - joint).abs() / joint.abs().max(T::one());
    reports.push(IdentityReport {
        id: "gauss_telescoping".into(),
        snr,
        lhs: stage_sum,
        rhs: joint,
        residual: rel,
        std_error: T::zero(),
        pass: rel <= exact_tol,
        breakdown: None,
    });

    let deriv_sum: T = stages.iter().map(|s| s.didsnr).sum();
    let joint_deriv = gaussian::mi_gaussian_joint_derivative(system, snr);
    let rel = (deriv_sum - joint_deriv).abs() / joint_deriv.abs().max(T::lit(1e-300));
    reports.push(IdentityReport {
        id: "gauss_stage_sum_derivative".into(),
        snr,
        lhs: deriv_sum,
        rhs: joint_deriv,
        residual: rel,
        std_error: T::zero(),
        pass: rel <= exact_tol,
        breakdown: None,
    });
    Ok(reports)
}
