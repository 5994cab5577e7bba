//! Closed forms for Gaussian inputs: per-stage SIC log-det mutual
//! informations, interference-plus-noise covariances, linear MMSE traces,
//! and exact snr-derivatives.
//!
//! Conventions. With S_i = H_i P_i P_i† H_i†, the stage-k covariance is
//! Γ_k = I + snr·Σ_{i>k} S_i (snr included so the stage informations
//! telescope to the joint log det of the actual model; the snr-free forms
//! are recovered at snr = 1). Stage information is
//!
//!   I(x_k; y | x_1..x_{k-1}) = log det(Γ_k + snr·S_k) − log det(Γ_k),
//!
//! and the stage derivative comes from d/dsnr log det(I + snr·B)
//! = tr{(I + snr·B)⁻¹ B} applied to the telescoped difference. The same
//! derivative also equals tr{(Γ_k + snr·S_k)⁻¹ S_k Γ_k⁻¹}, the properly
//! scaled linear-MMSE form; both routes are computed so their agreement is
//! the per-stage "no covariance correction needed" certificate.
//!
//! All log-dets go through Hermitian positive-definite Cholesky
//! factorizations; there is no general-matrix determinant path.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::model::SystemModel;
use crate::scalar::Scalar;

/// Per-stage closed-form summary for Gaussian inputs.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct GaussianStageReport<T> {
    /// 0-based user index in decoding order.
    pub user: usize,
    /// Noise-plus-residual-interference covariance Γ_k.
    pub gamma: ComplexMatrix<T>,
    /// Stage information I(x_k; y | x_1..x_{k-1}) in nats.
    pub mi: T,
    /// Linear MMSE trace tr{A'_k (Γ_k + snr·S_k)⁻¹ A'_k†}, A'_k = H_k P_k.
    pub linear_mmse: T,
    /// Exact d/dsnr of the stage information.
    pub didsnr: T,
    /// Residual between the two derivative routes; the covariance-type
    /// correction for Gaussian inputs, zero in closed form.
    pub psi_correction: T,
}

fn interference_sum<T: Scalar>(system: &SystemModel<T>, from: usize, snr: T) -> ComplexMatrix<T> {
    let mut m = ComplexMatrix::identity(system.n_r);
    for i in from..system.k_users() {
        m.add_scaled_assign(&system.users[i].effective_channel().gram(), snr);
    }
    m
}

/// Γ_k = I + snr·Σ_{i>k} H_i P_i P_i† H_i†; the identity at the last stage.
pub fn gamma<T: Scalar>(system: &SystemModel<T>, k: usize, snr: T) -> ComplexMatrix<T> {
    assert!(k < system.k_users());
    interference_sum(system, k + 1, snr)
}

/// Stage-k SIC information for Gaussian inputs, in nats.
pub fn mi_gaussian_stage<T: Scalar>(system: &SystemModel<T>, k: usize, snr: T) -> T {
    assert!(k < system.k_users());
    // telescoped form: both matrices are Hermitian PD by construction
    let with_k = interference_sum(system, k, snr);
    let without_k = interference_sum(system, k + 1, snr);
    with_k.logdet_hpd().expect("I + snr·Σ S is PD") - without_k.logdet_hpd().expect("PD")
}

/// Joint Gaussian information log det(I + snr·Σ_i S_i), in nats.
pub fn mi_gaussian_joint<T: Scalar>(system: &SystemModel<T>, snr: T) -> T {
    interference_sum(system, 0, snr).logdet_hpd().expect("PD")
}

/// Marginal information I(x_k; y) with all other users treated as Gaussian
/// interference.
pub fn mi_gaussian_marginal<T: Scalar>(system: &SystemModel<T>, k: usize, snr: T) -> T {
    assert!(k < system.k_users());
    let mut others = ComplexMatrix::identity(system.n_r);
    for i in 0..system.k_users() {
        if i != k {
            others.add_scaled_assign(&system.users[i].effective_channel().gram(), snr);
        }
    }
    mi_gaussian_joint(system, snr) - others.logdet_hpd().expect("PD")
}

/// d/dsnr log det(I + snr·B) = tr{(I + snr·B)⁻¹ B} for Hermitian PSD B.
fn logdet_derivative<T: Scalar>(system: &SystemModel<T>, from: usize, snr: T) -> T {
    let m = interference_sum(system, from, snr);
    let inv = m.inverse_hpd().expect("I + snr·Σ S is PD");
    let mut b = ComplexMatrix::zeros(system.n_r, system.n_r);
    for i in from..system.k_users() {
        b.add_scaled_assign(&system.users[i].effective_channel().gram(), T::one());
    }
    inv.mul(&b).trace().re
}

/// Exact d/dsnr of the stage-k information (the scaled per-stage MMSE that
/// makes the Gaussian SIC derivative identities hold).
pub fn mmse_gaussian_stage<T: Scalar>(system: &SystemModel<T>, k: usize, snr: T) -> T {
    assert!(k < system.k_users());
    logdet_derivative(system, k, snr) - logdet_derivative(system, k + 1, snr)
}

/// d/dsnr of the joint Gaussian information.
pub fn mi_gaussian_joint_derivative<T: Scalar>(system: &SystemModel<T>, snr: T) -> T {
    logdet_derivative(system, 0, snr)
}

/// Full per-stage report. Requires every user Gaussian.
pub fn gaussian_report<T: Scalar>(
    system: &SystemModel<T>,
    snr: T,
) -> Result<Vec<GaussianStageReport<T>>> {
    if let Some(k) = system.users.iter().position(|u| u.input.is_discrete()) {
        return Err(Error::NonGaussianInput(k));
    }
    let mut out = Vec::with_capacity(system.k_users());
    for k in 0..system.k_users() {
        let g = gamma(system, k, snr);
        let a = system.users[k].effective_channel();
        let s_k = a.gram();
        let denom = g.add(&s_k.scaled(snr));
        let denom_inv = denom.inverse_hpd().expect("Γ + snr·S is PD");
        let linear_mmse = a.adjoint().mul(&denom_inv).mul(&a).trace().re;
        let didsnr = mmse_gaussian_stage(system, k, snr);
        // second derivative route through the Γ-scaled linear form
        let g_inv = g.inverse_hpd().expect("Γ is PD");
        let scaled = denom_inv.mul(&s_k).mul(&g_inv).trace().re;
        out.push(GaussianStageReport {
            user: k,
            gamma: g,
            mi: mi_gaussian_stage(system, k, snr),
            linear_mmse,
            didsnr,
            psi_correction: didsnr - scaled,
        });
    }
    Ok(out)
}
