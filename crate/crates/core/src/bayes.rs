//! The estimation-theoretic engine: exact enumeration posteriors for
//! discrete inputs, per-user MMSE matrices, posterior cross moments, the
//! interference covariance scalar psi, and the aggregate-signal MMSE oracle.
//!
//! All posterior weights are computed in the log domain with log-sum-exp;
//! direct likelihoods underflow on double precision once snr grows past a
//! few tens.
//!
//! Sign and scaling conventions, fixed crate-wide:
//!   * noise is circularly-symmetric complex with identity covariance, so
//!     the mutual-information derivative identity carries no factor 1/2;
//!   * per-user mmse_k = tr{H_k P_k E_k (H_k P_k)†} lives in the receive
//!     space WITHOUT an snr factor — the √snr sits only in the likelihood —
//!     which makes dI/dsnr = Σ_k mmse_k + psi hold with no extra scaling;
//!   * psi = −Σ_k Σ_{j≠k} tr{H_k P_k E_y[x̂_k x̂_j†] (H_j P_j)†}, the
//!     product of marginal posterior means, not the joint posterior cross
//!     moment (the latter appears only inside the aggregate oracle).

use num_complex::Complex;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inputs::{DEFAULT_ENUM_CAP, InputLaw, sample_index};
use crate::linalg::{CVec, ComplexMatrix, vec_norm_sqr};
use crate::mc;
use crate::model::SystemModel;
use crate::scalar::{Scalar, ln_pi};

/// A Monte Carlo scalar with its standard error (sample std / √n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarEstimate<T> {
    pub value: T,
    pub std_error: T,
}

/// Exact posterior statistics for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats<T> {
    /// Conditional means x̂_k.
    pub means: Vec<CVec<T>>,
    /// E[x_k x_k† | y].
    pub second_moments: Vec<ComplexMatrix<T>>,
    /// Entry (k, j) holds E[x_k x_j† | y] for k ≠ j; the diagonal repeats
    /// the second moments.
    pub cross_moments: Vec<Vec<ComplexMatrix<T>>>,
    /// log p(y) in nats, pi-constant included.
    pub log_evidence: T,
}

impl<T: Scalar> PosteriorStats<T> {
    /// E[x_k x_k†|y] − x̂_k x̂_k†, Hermitian PSD up to rounding.
    pub fn conditional_covariance(&self, k: usize) -> ComplexMatrix<T> {
        let mut m = self.second_moments[k].clone();
        let mut outer = ComplexMatrix::zeros(m.rows(), m.cols());
        outer.outer_acc(&self.means[k], &self.means[k], T::one());
        m = m.sub(&outer);
        m
    }
}

/// Monte Carlo estimation summary over (inputs, noise) draws.
///
/// For `known_prefix = m > 0` the statistics are those of the reduced system
/// of users m+1..K with the revealed prefix contribution subtracted from the
/// observation; averaging runs over the revealed prefix as well.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: crate::scalar::Scalar")]
pub struct EstimationReport<T> {
    pub snr: T,
    pub samples: u64,
    pub known_prefix: usize,
    /// Global indices of the reported (un-revealed) users.
    pub users: Vec<usize>,
    /// Per-user error matrices E_k (symbol space, n_t x n_t).
    pub error_matrices: Vec<ComplexMatrix<T>>,
    /// Entry (a, b) holds E_y[x̂_a x̂_b†] for a ≠ b (local indices); zero on
    /// the diagonal.
    pub cross_correlations: Vec<Vec<ComplexMatrix<T>>>,
    /// tr{H_k P_k E_k (H_k P_k)†} per reported user.
    pub mmse_per_user: Vec<ScalarEstimate<T>>,
    pub mmse_total: ScalarEstimate<T>,
    pub psi: ScalarEstimate<T>,
    /// mmse_total + psi accumulated as one per-sample stream — the right
    /// side of the derivative identity with a properly reduced variance.
    pub identity_rhs: ScalarEstimate<T>,
}

/// The aggregate-signal MMSE oracle: z = Σ_k H_k P_k x_k estimated from y.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: crate::scalar::Scalar")]
pub struct AggregateMmse<T> {
    pub snr: T,
    pub samples: u64,
    /// tr E_z, estimated from per-sample conditional covariances.
    pub trace: ScalarEstimate<T>,
    /// Worst per-sample relative residual between the direct conditional
    /// variance of z and its per-user decomposition, measured against
    /// max(|direct|, |decomposed|, 1e-4·E[‖z‖²|y]). Algebraically zero.
    pub max_relative_residual: T,
    /// MC mean of E[x_k x_j†|y] per pair (a < b, local indices); must
    /// vanish since the priors are independent and zero-mean.
    pub cross_moment_mean: Vec<ComplexMatrix<T>>,
    /// Per-entry standard errors, packed as se(re) + i·se(im).
    pub cross_moment_se: Vec<ComplexMatrix<T>>,
    /// (mmse_total + psi) − tr E_z as one per-sample difference stream;
    /// zero-mean by the tower rule, so its se is the right yardstick for
    /// the cross-check between the two routes.
    pub rhs_minus_trace: ScalarEstimate<T>,
}

/// log p(y | x_1..x_K) = −n_r·log π − ‖y − Σ_k A_k(snr)·x_k‖², in nats.
pub fn log_likelihood<T: Scalar>(
    y: &[Complex<T>],
    xs: &[CVec<T>],
    system: &SystemModel<T>,
    snr: T,
) -> T {
    assert_eq!(y.len(), system.n_r, "observation dimension mismatch");
    assert_eq!(xs.len(), system.k_users(), "one input vector per user");
    let mut resid: CVec<T> = y.to_vec();
    for (k, x) in xs.iter().enumerate() {
        let ax = system.effective_gain(k, snr).mul_vec(x);
        for (r, a) in resid.iter_mut().zip(ax.iter()) {
            *r -= *a;
        }
    }
    -T::from_usize(system.n_r).unwrap() * ln_pi::<T>() - vec_norm_sqr(&resid)
}

/// Exact posterior over the joint discrete support, by enumeration with
/// log-sum-exp normalization. Rejects Gaussian users.
pub fn posterior<T: Scalar>(
    y: &[Complex<T>],
    system: &SystemModel<T>,
    snr: T,
) -> Result<PosteriorStats<T>> {
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    engine.posterior(y, snr)
}

/// Monte Carlo estimation report over both inputs and noise.
pub fn estimation_report<T: Scalar>(
    system: &SystemModel<T>,
    snr: T,
    samples: u64,
    seed: u64,
) -> Result<EstimationReport<T>> {
    conditional_estimation_report(system, snr, 0, samples, seed)
}

/// Estimation report with users 1..m revealed: their contribution is
/// subtracted from y and the posterior runs over the remaining users only.
pub fn conditional_estimation_report<T: Scalar>(
    system: &SystemModel<T>,
    snr: T,
    known_prefix: usize,
    samples: u64,
    seed: u64,
) -> Result<EstimationReport<T>> {
    assert!(
        known_prefix < system.k_users(),
        "known prefix must leave at least one user"
    );
    assert!(samples >= 2, "need at least 2 samples for standard errors");
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let req = EngineRequest {
        snr,
        known_prefix,
        want_moments: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(&req, samples, seed, 0);
    Ok(out.into_estimation_report(snr, known_prefix))
}

/// The aggregate-signal oracle for the same sample stream as
/// [`estimation_report`].
pub fn aggregate_mmse<T: Scalar>(
    system: &SystemModel<T>,
    snr: T,
    samples: u64,
    seed: u64,
) -> Result<AggregateMmse<T>> {
    assert!(samples >= 2, "need at least 2 samples for standard errors");
    let engine = DiscreteEngine::new(system, DEFAULT_ENUM_CAP)?;
    let req = EngineRequest {
        snr,
        want_moments: true,
        ..EngineRequest::values_only(snr)
    };
    let out = engine.run(&req, samples, seed, 0);
    Ok(out.into_aggregate(snr))
}

// ---------------------------------------------------------------------------
// Tuple tables: enumerated supports over a subset of users.
// ---------------------------------------------------------------------------

/// Enumerated support over a subset of users, with per-tuple log-priors and
/// receive-space signal contributions Σ H_u P_u x_u precomputed. An empty
/// subset is the single zero-signal tuple with log-prior 0.
pub(crate) struct TupleTable<T> {
    users: Vec<usize>,
    radix: Vec<usize>,
    strides: Vec<usize>,
    log_prior: Vec<T>,
    signal: Vec<CVec<T>>,
    signal_norm: Vec<T>,
    n_r: usize,
}

impl<T: Scalar> TupleTable<T> {
    fn build(
        users: &[usize],
        contrib: &[Vec<CVec<T>>],
        log_probs: &[Vec<T>],
        n_r: usize,
        cap: u64,
    ) -> Result<Self> {
        let radix: Vec<usize> = users.iter().map(|&u| contrib[u].len()).collect();
        let total: u128 = radix.iter().map(|&r| r as u128).product();
        if total > cap as u128 {
            return Err(Error::EnumerationCapExceeded {
                required: total,
                cap,
            });
        }
        let total = total as usize;
        let mut strides = vec![1usize; users.len()];
        for p in (0..users.len().saturating_sub(1)).rev() {
            strides[p] = strides[p + 1] * radix[p + 1];
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut log_prior = Vec::with_capacity(total);
        let mut signal = Vec::with_capacity(total);
        let mut signal_norm = Vec::with_capacity(total);
        for t in 0..total {
            let mut lp = T::zero();
            let mut sig = vec![zero; n_r];
            for (p, &u) in users.iter().enumerate() {
                let idx = (t / strides[p]) % radix[p];
                lp += log_probs[u][idx];
                for (s, c) in sig.iter_mut().zip(contrib[u][idx].iter()) {
                    *s += *c;
                }
            }
            log_prior.push(lp);
            signal_norm.push(vec_norm_sqr(&sig));
            signal.push(sig);
        }
        Ok(Self {
            users: users.to_vec(),
            radix,
            strides,
            log_prior,
            signal,
            signal_norm,
            n_r,
        })
    }

    fn len(&self) -> usize {
        self.log_prior.len()
    }

    #[inline]
    fn point_of(&self, t: usize, position: usize) -> usize {
        (t / self.strides[position]) % self.radix[position]
    }

    /// Fill lw with log(prior·likelihood) for the observation residual base
    /// rb (the observation minus any revealed-prefix contribution) and
    /// return the log-sum-exp: log p(rb | revealed prefix).
    fn log_marginal(&self, rb: &[Complex<T>], sqrt_snr: T, lw: &mut Vec<T>) -> T {
        let c = -T::from_usize(self.n_r).unwrap() * ln_pi::<T>();
        lw.clear();
        for t in 0..self.len() {
            let mut d = T::zero();
            let sig = &self.signal[t];
            for i in 0..self.n_r {
                let r = rb[i] - sig[i].scale(sqrt_snr);
                d += r.norm_sqr();
            }
            lw.push(self.log_prior[t] + c - d);
        }
        log_sum_exp(lw)
    }

    /// Like [`log_marginal`] but also fills `w` with normalized posterior
    /// weights.
    fn posterior_weights(
        &self,
        rb: &[Complex<T>],
        sqrt_snr: T,
        lw: &mut Vec<T>,
        w: &mut Vec<T>,
    ) -> T {
        let log_z = self.log_marginal(rb, sqrt_snr, lw);
        w.clear();
        w.extend(lw.iter().map(|&l| (l - log_z).exp()));
        log_z
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(lw: &[T]) -> T {
    let m = lw.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    let s: T = lw.iter().map(|&l| (l - m).exp()).sum();
    m + s.ln()
}

// ---------------------------------------------------------------------------
// The unified per-sample engine.
//
// One pass draws (inputs, noise) and evaluates every requested per-sample
// quantity from the same realization, so estimators compared against each
// other automatically share common random numbers.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct EngineRequest<T> {
    pub snr: T,
    /// Some(h): also evaluate at snr·(1 ± h) for paired central differences.
    pub fd_step_rel: Option<T>,
    pub want_joint_fd: bool,
    pub want_user_fd: bool,
    pub want_user_mi: bool,
    pub want_moments: bool,
    pub known_prefix: usize,
}

impl<T: Scalar> EngineRequest<T> {
    pub fn values_only(snr: T) -> Self {
        EngineRequest {
            snr,
            fd_step_rel: None,
            want_joint_fd: false,
            want_user_fd: false,
            want_user_mi: false,
            want_moments: false,
            known_prefix: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub(crate) struct Stat<T> {
    pub mean: T,
    pub se: T,
}

impl<T: Scalar> Stat<T> {
    pub fn estimate(&self) -> ScalarEstimate<T> {
        ScalarEstimate {
            value: self.mean,
            std_error: self.se,
        }
    }
}

pub(crate) struct MomentsOutput<T> {
    pub users: Vec<usize>,
    pub error_matrices: Vec<ComplexMatrix<T>>,
    /// Pair list (a < b, local indices) shared by the matrix vectors below.
    pub pairs: Vec<(usize, usize)>,
    pub cross_correlations: Vec<ComplexMatrix<T>>,
    pub cross_moment_mean: Vec<ComplexMatrix<T>>,
    pub cross_moment_se: Vec<ComplexMatrix<T>>,
    pub mmse_per_user: Vec<Stat<T>>,
    pub mmse_total: Stat<T>,
    pub psi: Stat<T>,
    pub rhs: Stat<T>,
    pub aggregate_trace: Stat<T>,
    pub rhs_minus_aggregate: Stat<T>,
    pub max_rel_residual: T,
}

pub(crate) struct EngineOutput<T> {
    pub samples: u64,
    pub joint_mi: Stat<T>,
    pub joint_fd: Option<Stat<T>>,
    pub cond_mi: Vec<Stat<T>>,
    pub marg_mi: Vec<Stat<T>>,
    pub gap: Vec<Stat<T>>,
    pub cond_fd: Vec<Stat<T>>,
    pub marg_fd: Vec<Stat<T>>,
    pub gap_fd: Vec<Stat<T>>,
    pub chain_residual: Stat<T>,
    pub moments: Option<MomentsOutput<T>>,
}

impl<T: Scalar> EngineOutput<T> {
    pub fn into_estimation_report(self, snr: T, known_prefix: usize) -> EstimationReport<T> {
        let m = self.moments.expect("moments were requested");
        let k_local = m.users.len();
        let mut cross = vec![vec![ComplexMatrix::zeros(1, 1); k_local]; k_local];
        for (a, row) in cross.iter_mut().enumerate() {
            for (b, slot) in row.iter_mut().enumerate() {
                let (ra, rb) = (m.error_matrices[a].rows(), m.error_matrices[b].rows());
                *slot = ComplexMatrix::zeros(ra, rb);
            }
        }
        for (pi, &(a, b)) in m.pairs.iter().enumerate() {
            cross[a][b] = m.cross_correlations[pi].clone();
            cross[b][a] = m.cross_correlations[pi].adjoint();
        }
        EstimationReport {
            snr,
            samples: self.samples,
            known_prefix,
            users: m.users,
            error_matrices: m.error_matrices,
            cross_correlations: cross,
            mmse_per_user: m.mmse_per_user.iter().map(Stat::estimate).collect(),
            mmse_total: m.mmse_total.estimate(),
            psi: m.psi.estimate(),
            identity_rhs: m.rhs.estimate(),
        }
    }

    pub fn into_aggregate(self, snr: T) -> AggregateMmse<T> {
        let m = self.moments.expect("moments were requested");
        AggregateMmse {
            snr,
            samples: self.samples,
            trace: m.aggregate_trace.estimate(),
            max_relative_residual: m.max_rel_residual,
            cross_moment_mean: m.cross_moment_mean,
            cross_moment_se: m.cross_moment_se,
            rhs_minus_trace: m.rhs_minus_aggregate.estimate(),
        }
    }
}

/// Scalar accumulator: running sum and sum of squares.
#[derive(Clone, Copy)]
struct Acc<T> {
    s: T,
    q: T,
}

impl<T: Scalar> Acc<T> {
    fn new() -> Self {
        Acc {
            s: T::zero(),
            q: T::zero(),
        }
    }

    #[inline]
    fn push(&mut self, x: T) {
        self.s += x;
        self.q += x * x;
    }

    fn merge(&mut self, o: &Self) {
        self.s += o.s;
        self.q += o.q;
    }

    fn stat(&self, n: u64) -> Stat<T> {
        let nt = T::from_u64(n).unwrap();
        let mean = self.s / nt;
        if n < 2 {
            return Stat {
                mean,
                se: T::zero(),
            };
        }
        let var = ((self.q - self.s * self.s / nt) / (nt - T::one())).max(T::zero());
        Stat {
            mean,
            se: (var / nt).sqrt(),
        }
    }
}

fn merge_vec<T: Scalar>(a: &mut [Acc<T>], b: &[Acc<T>]) {
    for (x, y) in a.iter_mut().zip(b.iter()) {
        x.merge(y);
    }
}

fn stats<T: Scalar>(accs: &[Acc<T>], n: u64) -> Vec<Stat<T>> {
    accs.iter().map(|a| a.stat(n)).collect()
}

struct BatchAcc<T> {
    n: u64,
    joint: Acc<T>,
    joint_fd: Acc<T>,
    chain: Acc<T>,
    cond: Vec<Acc<T>>,
    marg: Vec<Acc<T>>,
    gap: Vec<Acc<T>>,
    cond_fd: Vec<Acc<T>>,
    marg_fd: Vec<Acc<T>>,
    gap_fd: Vec<Acc<T>>,
    mmse: Vec<Acc<T>>,
    mmse_total: Acc<T>,
    psi: Acc<T>,
    rhs: Acc<T>,
    trez: Acc<T>,
    diff: Acc<T>,
    max_rel_resid: T,
    err_mats: Vec<ComplexMatrix<T>>,
    c_mats: Vec<ComplexMatrix<T>>,
    s_sum: Vec<ComplexMatrix<T>>,
    s_sq: Vec<ComplexMatrix<T>>,
}

impl<T: Scalar> BatchAcc<T> {
    fn new(k: usize, reported: &[usize], dims: &[usize], pairs: &[(usize, usize)]) -> Self {
        let mat = |a: usize, b: usize| ComplexMatrix::zeros(dims[reported[a]], dims[reported[b]]);
        BatchAcc {
            n: 0,
            joint: Acc::new(),
            joint_fd: Acc::new(),
            chain: Acc::new(),
            cond: vec![Acc::new(); k],
            marg: vec![Acc::new(); k],
            gap: vec![Acc::new(); k],
            cond_fd: vec![Acc::new(); k],
            marg_fd: vec![Acc::new(); k],
            gap_fd: vec![Acc::new(); k],
            mmse: vec![Acc::new(); reported.len()],
            mmse_total: Acc::new(),
            psi: Acc::new(),
            rhs: Acc::new(),
            trez: Acc::new(),
            diff: Acc::new(),
            max_rel_resid: T::zero(),
            err_mats: (0..reported.len()).map(|a| mat(a, a)).collect(),
            c_mats: pairs.iter().map(|&(a, b)| mat(a, b)).collect(),
            s_sum: pairs.iter().map(|&(a, b)| mat(a, b)).collect(),
            s_sq: pairs.iter().map(|&(a, b)| mat(a, b)).collect(),
        }
    }

    fn merge(&mut self, o: &Self) {
        self.n += o.n;
        self.joint.merge(&o.joint);
        self.joint_fd.merge(&o.joint_fd);
        self.chain.merge(&o.chain);
        merge_vec(&mut self.cond, &o.cond);
        merge_vec(&mut self.marg, &o.marg);
        merge_vec(&mut self.gap, &o.gap);
        merge_vec(&mut self.cond_fd, &o.cond_fd);
        merge_vec(&mut self.marg_fd, &o.marg_fd);
        merge_vec(&mut self.gap_fd, &o.gap_fd);
        merge_vec(&mut self.mmse, &o.mmse);
        self.mmse_total.merge(&o.mmse_total);
        self.psi.merge(&o.psi);
        self.rhs.merge(&o.rhs);
        self.trez.merge(&o.trez);
        self.diff.merge(&o.diff);
        self.max_rel_resid = self.max_rel_resid.max(o.max_rel_resid);
        for (a, b) in self.err_mats.iter_mut().zip(o.err_mats.iter()) {
            a.add_scaled_assign(b, T::one());
        }
        for (a, b) in self.c_mats.iter_mut().zip(o.c_mats.iter()) {
            a.add_scaled_assign(b, T::one());
        }
        for (a, b) in self.s_sum.iter_mut().zip(o.s_sum.iter()) {
            a.add_scaled_assign(b, T::one());
        }
        for (a, b) in self.s_sq.iter_mut().zip(o.s_sq.iter()) {
            a.add_scaled_assign(b, T::one());
        }
    }
}

/// Precomputed per-system data for the exact discrete posterior.
pub(crate) struct DiscreteEngine<T> {
    n_r: usize,
    k: usize,
    dims: Vec<usize>,
    points: Vec<Vec<CVec<T>>>,
    probs: Vec<Vec<T>>,
    /// contrib[u][p] = H_u P_u · x_p in the receive space.
    contrib: Vec<Vec<CVec<T>>>,
    contrib_norm: Vec<Vec<T>>,
    /// suffix[m] enumerates users m..K (suffix[K] is the empty table).
    suffix: Vec<TupleTable<T>>,
    /// loo[k] enumerates every user except k.
    loo: Vec<TupleTable<T>>,
    /// Pairs (a < b) of ALL users, global indices.
    all_pairs: Vec<(usize, usize)>,
    /// pair_inner[pi][p·radix_b + q] = ⟨contrib_a[p], contrib_b[q]⟩.
    pair_inner: Vec<Vec<Complex<T>>>,
    /// Residual-floor scale: Σ_k tr{(H_kP_k)(H_kP_k)†}.
    scale0: T,
}

impl<T: Scalar> DiscreteEngine<T> {
    pub fn new(system: &SystemModel<T>, cap: u64) -> Result<Self> {
        let k = system.k_users();
        assert!(k >= 1, "system needs at least one user");
        let n_r = system.n_r;
        let mut points = Vec::with_capacity(k);
        let mut probs = Vec::with_capacity(k);
        for (u, link) in system.users.iter().enumerate() {
            match &link.input {
                InputLaw::Discrete(c) => {
                    points.push(c.points().to_vec());
                    probs.push(c.probs().to_vec());
                }
                InputLaw::Gaussian { .. } => return Err(Error::GaussianInputPresent(u)),
            }
        }
        let log_probs: Vec<Vec<T>> = probs
            .iter()
            .map(|ps| ps.iter().map(|p| p.ln()).collect())
            .collect();
        let mut contrib = Vec::with_capacity(k);
        let mut scale0 = T::zero();
        for (u, link) in system.users.iter().enumerate() {
            let a = link.effective_channel();
            scale0 += a.gram().trace().re;
            contrib.push(points[u].iter().map(|x| a.mul_vec(x)).collect::<Vec<_>>());
        }
        let contrib_norm: Vec<Vec<T>> = contrib
            .iter()
            .map(|cs| cs.iter().map(|c| vec_norm_sqr(c)).collect())
            .collect();
        let all_users: Vec<usize> = (0..k).collect();
        let mut suffix = Vec::with_capacity(k + 1);
        for m in 0..=k {
            suffix.push(TupleTable::build(
                &all_users[m..],
                &contrib,
                &log_probs,
                n_r,
                cap,
            )?);
        }
        let mut loo = Vec::with_capacity(k);
        for u in 0..k {
            let others: Vec<usize> = (0..k).filter(|&i| i != u).collect();
            loo.push(TupleTable::build(&others, &contrib, &log_probs, n_r, cap)?);
        }
        let mut all_pairs = Vec::new();
        let mut pair_inner = Vec::new();
        for a in 0..k {
            for b in (a + 1)..k {
                all_pairs.push((a, b));
                let mut tbl = Vec::with_capacity(contrib[a].len() * contrib[b].len());
                for pa in &contrib[a] {
                    for pb in &contrib[b] {
                        let mut acc = Complex::new(T::zero(), T::zero());
                        for i in 0..n_r {
                            acc += pa[i] * pb[i].conj();
                        }
                        tbl.push(acc);
                    }
                }
                pair_inner.push(tbl);
            }
        }
        let dims = system.users.iter().map(|u| u.n_t()).collect();
        Ok(Self {
            n_r,
            k,
            dims,
            points,
            probs,
            contrib,
            contrib_norm,
            suffix,
            loo,
            all_pairs,
            pair_inner,
            scale0,
        })
    }

    pub fn k_users(&self) -> usize {
        self.k
    }

    /// Exact posterior statistics at a fixed observation.
    pub fn posterior(&self, y: &[Complex<T>], snr: T) -> Result<PosteriorStats<T>> {
        assert_eq!(y.len(), self.n_r, "observation dimension mismatch");
        assert!(snr >= T::zero());
        let table = &self.suffix[0];
        let mut lw = Vec::new();
        let mut w = Vec::new();
        let log_evidence = table.posterior_weights(y, snr.sqrt(), &mut lw, &mut w);
        let zero = Complex::new(T::zero(), T::zero());
        let mut means: Vec<CVec<T>> = self.dims.iter().map(|&d| vec![zero; d]).collect();
        let mut cross: Vec<Vec<ComplexMatrix<T>>> = (0..self.k)
            .map(|a| {
                (0..self.k)
                    .map(|b| ComplexMatrix::zeros(self.dims[a], self.dims[b]))
                    .collect()
            })
            .collect();
        for (t, &wt) in w.iter().enumerate() {
            for a in 0..self.k {
                let xa = &self.points[a][table.point_of(t, a)];
                for (m, x) in means[a].iter_mut().zip(xa.iter()) {
                    *m += x.scale(wt);
                }
                for b in 0..self.k {
                    let xb = &self.points[b][table.point_of(t, b)];
                    cross[a][b].outer_acc(xa, xb, wt);
                }
            }
        }
        let second_moments: Vec<ComplexMatrix<T>> =
            (0..self.k).map(|a| cross[a][a].clone()).collect();
        Ok(PosteriorStats {
            means,
            second_moments,
            cross_moments: cross,
            log_evidence,
        })
    }

    /// One Monte Carlo pass computing every requested per-sample stream.
    pub fn run(
        &self,
        req: &EngineRequest<T>,
        samples: u64,
        seed: u64,
        stream_base: u64,
    ) -> EngineOutput<T> {
        assert!(samples >= 1);
        assert!(req.snr > T::zero() || !(req.want_joint_fd || req.want_user_fd));
        assert!(req.known_prefix < self.k);
        let fd = req
            .fd_step_rel
            .filter(|_| req.want_joint_fd || req.want_user_fd);
        if req.want_joint_fd || req.want_user_fd {
            assert!(fd.is_some(), "finite differences need fd_step_rel");
        }
        let m0 = req.known_prefix;
        let reported: Vec<usize> = (m0..self.k).collect();
        let rep_pairs: Vec<(usize, usize)> = {
            let mut v = Vec::new();
            for a in 0..reported.len() {
                for b in (a + 1)..reported.len() {
                    v.push((a, b));
                }
            }
            v
        };

        let partials = mc::run_batched(samples, seed, stream_base, |rng, count| {
            let mut acc = BatchAcc::new(self.k, &reported, &self.dims, &rep_pairs);
            let mut ws = Workspace::new(self, &reported, &rep_pairs);
            for _ in 0..count {
                self.eval_sample(req, fd, m0, &reported, &rep_pairs, rng, &mut ws, &mut acc);
            }
            acc
        });
        let mut total: Option<BatchAcc<T>> = None;
        for p in partials {
            match total.as_mut() {
                None => total = Some(p),
                Some(t) => t.merge(&p),
            }
        }
        let acc = total.expect("at least one batch");
        self.finalize(req, acc, &reported, &rep_pairs)
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_sample(
        &self,
        req: &EngineRequest<T>,
        fd: Option<T>,
        m0: usize,
        reported: &[usize],
        rep_pairs: &[(usize, usize)],
        rng: &mut ChaCha8Rng,
        ws: &mut Workspace<T>,
        acc: &mut BatchAcc<T>,
    ) {
        let zero = Complex::new(T::zero(), T::zero());
        // Fixed draw order: one uniform per user, then 2·n_r normals.
        for u in 0..self.k {
            ws.idx[u] = sample_index(&self.probs[u], rng);
        }
        let nstd = T::lit(0.5).sqrt();
        for i in 0..self.n_r {
            let re = T::standard_normal(rng) * nstd;
            let im = T::standard_normal(rng) * nstd;
            ws.noise[i] = Complex::new(re, im);
        }
        // u_true from the full table keeps the summation order identical to
        // the enumerated signals.
        let full = &self.suffix[0];
        let t_true: usize = (0..self.k).map(|u| ws.idx[u] * full.strides[u]).sum();
        let u_true = &full.signal[t_true];
        let ll_true = -T::from_usize(self.n_r).unwrap() * ln_pi::<T>() - vec_norm_sqr(&ws.noise);

        let h = fd.unwrap_or_else(T::zero);
        let n_evals = if fd.is_some() { 3 } else { 1 };
        let snrs = [req.snr, req.snr * (T::one() + h), req.snr * (T::one() - h)];

        let want_cond_at = |e: usize| match e {
            0 => req.want_user_mi,
            _ => req.want_user_fd,
        };
        let want_marg_at = want_cond_at;

        for e in 0..n_evals {
            let s = snrs[e];
            let sqrt_s = s.sqrt();
            for i in 0..self.n_r {
                ws.y[i] = u_true[i].scale(sqrt_s) + ws.noise[i];
            }
            // Joint evidence; at the center with moments over the full
            // support, reuse the same pass for the posterior weights.
            let weights_here = e == 0 && req.want_moments && m0 == 0;
            let lp = if weights_here {
                full.posterior_weights(&ws.y, sqrt_s, &mut ws.lw, &mut ws.w)
            } else {
                full.log_marginal(&ws.y, sqrt_s, &mut ws.lw)
            };
            ws.g_joint[e] = ll_true - lp;

            if want_cond_at(e) {
                // Prefix conditionals: lpfx[m] = log p(y | x_1..x_m true).
                // The last entry IS the full likelihood, taken verbatim so
                // the telescoped terms cancel exactly against the joint.
                ws.lpfx[0] = lp;
                ws.lpfx[self.k] = ll_true;
                for i in 0..self.n_r {
                    ws.prefix[i] = zero;
                }
                for m in 1..self.k {
                    let u = m - 1;
                    for (p, c) in ws.prefix.iter_mut().zip(self.contrib[u][ws.idx[u]].iter()) {
                        *p += *c;
                    }
                    for i in 0..self.n_r {
                        ws.rb[i] = ws.y[i] - ws.prefix[i].scale(sqrt_s);
                    }
                    ws.lpfx[m] = self.suffix[m].log_marginal(&ws.rb, sqrt_s, &mut ws.lw);
                }
                for u in 0..self.k {
                    ws.g_cond[e][u] = ws.lpfx[u + 1] - ws.lpfx[u];
                }
            }
            if want_marg_at(e) {
                for u in 0..self.k {
                    if self.loo[u].users.is_empty() {
                        // No other users: p(y|x_k) is the full likelihood and
                        // the marginal information coincides with the joint.
                        ws.g_marg[e][u] = ws.g_joint[e];
                        continue;
                    }
                    for i in 0..self.n_r {
                        ws.rb[i] = ws.y[i] - self.contrib[u][ws.idx[u]][i].scale(sqrt_s);
                    }
                    let lmk = self.loo[u].log_marginal(&ws.rb, sqrt_s, &mut ws.lw);
                    ws.g_marg[e][u] = lmk - lp;
                }
            }
            if e == 0 && req.want_moments {
                if m0 > 0 {
                    for i in 0..self.n_r {
                        ws.prefix[i] = zero;
                    }
                    for u in 0..m0 {
                        for (p, c) in ws.prefix.iter_mut().zip(self.contrib[u][ws.idx[u]].iter()) {
                            *p += *c;
                        }
                    }
                    for i in 0..self.n_r {
                        ws.rb[i] = ws.y[i] - ws.prefix[i].scale(sqrt_s);
                    }
                    self.suffix[m0].posterior_weights(&ws.rb, sqrt_s, &mut ws.lw, &mut ws.w);
                }
                self.accumulate_moments(m0, reported, rep_pairs, ws, acc);
            }
        }

        acc.n += 1;
        acc.joint.push(ws.g_joint[0]);
        if req.want_user_mi {
            let mut sum_cond = T::zero();
            for u in 0..self.k {
                acc.cond[u].push(ws.g_cond[0][u]);
                acc.marg[u].push(ws.g_marg[0][u]);
                acc.gap[u].push(ws.g_cond[0][u] - ws.g_marg[0][u]);
                sum_cond += ws.g_cond[0][u];
            }
            acc.chain.push(ws.g_joint[0] - sum_cond);
        }
        if fd.is_some() {
            let denom = (T::one() + T::one()) * req.snr * h;
            if req.want_joint_fd {
                acc.joint_fd.push((ws.g_joint[1] - ws.g_joint[2]) / denom);
            }
            if req.want_user_fd {
                for u in 0..self.k {
                    let dc = (ws.g_cond[1][u] - ws.g_cond[2][u]) / denom;
                    let dm = (ws.g_marg[1][u] - ws.g_marg[2][u]) / denom;
                    acc.cond_fd[u].push(dc);
                    acc.marg_fd[u].push(dm);
                    acc.gap_fd[u].push(dc - dm);
                }
            }
        }
    }

    /// Accumulate moment streams from the weights in ws.w, which cover the
    /// suffix table for users m0..K.
    fn accumulate_moments(
        &self,
        m0: usize,
        reported: &[usize],
        rep_pairs: &[(usize, usize)],
        ws: &mut Workspace<T>,
        acc: &mut BatchAcc<T>,
    ) {
        let table = &self.suffix[m0];
        let zero = Complex::new(T::zero(), T::zero());
        let kr = reported.len();
        for a in 0..kr {
            for q in ws.qk[a].iter_mut() {
                *q = T::zero();
            }
        }
        for (pi, _) in rep_pairs.iter().enumerate() {
            for q in ws.qp[pi].iter_mut() {
                *q = T::zero();
            }
        }
        let mut e_z2 = T::zero();
        for z in ws.zhat.iter_mut() {
            *z = zero;
        }
        for (t, &wt) in ws.w.iter().enumerate() {
            for a in 0..kr {
                ws.qk[a][table.point_of(t, a)] += wt;
            }
            for (pi, &(a, b)) in rep_pairs.iter().enumerate() {
                let ra = table.point_of(t, a);
                let rb = table.point_of(t, b);
                ws.qp[pi][ra * table.radix[b] + rb] += wt;
            }
            e_z2 += wt * table.signal_norm[t];
            for (z, sig) in ws.zhat.iter_mut().zip(table.signal[t].iter()) {
                *z += sig.scale(wt);
            }
        }
        // Per-user posterior means in symbol and receive space.
        for (a, &u) in reported.iter().enumerate() {
            for x in ws.xhat[a].iter_mut() {
                *x = zero;
            }
            for c in ws.ahat[a].iter_mut() {
                *c = zero;
            }
            let mut sq = T::zero();
            for (p, &q) in ws.qk[a].iter().enumerate() {
                for (x, xp) in ws.xhat[a].iter_mut().zip(self.points[u][p].iter()) {
                    *x += xp.scale(q);
                }
                for (c, cp) in ws.ahat[a].iter_mut().zip(self.contrib[u][p].iter()) {
                    *c += cp.scale(q);
                }
                sq += q * self.contrib_norm[u][p];
            }
            ws.cond_var[a] = sq - vec_norm_sqr(&ws.ahat[a]);
        }
        // Direct conditional variance of the aggregate signal.
        let direct = e_z2 - vec_norm_sqr(&ws.zhat);
        // Decomposition across users and pairs.
        let mut decomp: T = ws.cond_var.iter().copied().sum();
        for (pi, &(a, b)) in rep_pairs.iter().enumerate() {
            let (ua, ub) = (reported[a], reported[b]);
            let gpi = self.pair_index(ua, ub);
            let mut cross = zero;
            let radix_b = table.radix[b];
            for pa in 0..table.radix[a] {
                let row = pa * radix_b;
                for pb in 0..radix_b {
                    let q = ws.qp[pi][row + pb];
                    if q > T::zero() {
                        cross += self.pair_inner[gpi][pa * self.contrib[ub].len() + pb].scale(q);
                    }
                }
            }
            let mut hat = zero;
            for i in 0..self.n_r {
                hat += ws.ahat[a][i] * ws.ahat[b][i].conj();
            }
            let two = T::one() + T::one();
            decomp += two * (cross - hat).re;
        }
        // Both routes sum terms of magnitude ~E[‖z‖²|y], so their fp error is
        // eps at that scale. Floor the denominator there: once the posterior
        // is fully resolved the conditional variance collapses to rounding
        // dust and a bare ratio of the two sides stops being meaningful.
        let floor = T::lit(1e-4) * e_z2 + T::lit(1e-12) * self.scale0;
        let rel = (direct - decomp).abs() / direct.abs().max(decomp.abs()).max(floor);
        acc.max_rel_resid = acc.max_rel_resid.max(rel);
        acc.trez.push(direct);

        // Raw per-user error terms and psi from the marginal posterior means.
        let mut mtot = T::zero();
        for (a, &u) in reported.iter().enumerate() {
            let true_c = &self.contrib[u][ws.idx[u]];
            let mut err = T::zero();
            for i in 0..self.n_r {
                err += (true_c[i] - ws.ahat[a][i]).norm_sqr();
            }
            acc.mmse[a].push(err);
            mtot += err;
            // symbol-space raw error outer product
            let xp = &self.points[u][ws.idx[u]];
            for (d, (x, xh)) in xp.iter().zip(ws.xhat[a].iter()).enumerate() {
                ws.err_vec[d] = *x - *xh;
            }
            acc.err_mats[a].outer_acc(&ws.err_vec[..xp.len()], &ws.err_vec[..xp.len()], T::one());
        }
        for z in ws.sum_ahat.iter_mut() {
            *z = zero;
        }
        let mut sum_norms = T::zero();
        for a in 0..kr {
            for (sz, az) in ws.sum_ahat.iter_mut().zip(ws.ahat[a].iter()) {
                *sz += *az;
            }
            sum_norms += vec_norm_sqr(&ws.ahat[a]);
        }
        let psi = sum_norms - vec_norm_sqr(&ws.sum_ahat);
        acc.psi.push(psi);
        acc.mmse_total.push(mtot);
        acc.rhs.push(mtot + psi);
        acc.diff.push(mtot + psi - decomp);

        // Cross-correlation and posterior cross-moment matrices.
        for (pi, &(a, b)) in rep_pairs.iter().enumerate() {
            acc.c_mats[pi].outer_acc(&ws.xhat[a], &ws.xhat[b], T::one());
            let (ua, ub) = (reported[a], reported[b]);
            let radix_b = table.radix[b];
            let mut s_ab = ComplexMatrix::zeros(self.dims[ua], self.dims[ub]);
            for pa in 0..table.radix[a] {
                let row = pa * radix_b;
                for pb in 0..radix_b {
                    let q = ws.qp[pi][row + pb];
                    if q > T::zero() {
                        s_ab.outer_acc(&self.points[ua][pa], &self.points[ub][pb], q);
                    }
                }
            }
            acc.s_sum[pi].add_scaled_assign(&s_ab, T::one());
            for i in 0..s_ab.rows() {
                for j in 0..s_ab.cols() {
                    let z = s_ab.get(i, j);
                    let prev = acc.s_sq[pi].get(i, j);
                    acc.s_sq[pi].set(i, j, prev + Complex::new(z.re * z.re, z.im * z.im));
                }
            }
        }
    }

    fn pair_index(&self, a: usize, b: usize) -> usize {
        self.all_pairs
            .iter()
            .position(|&p| p == (a, b))
            .expect("pair exists")
    }

    fn finalize(
        &self,
        req: &EngineRequest<T>,
        acc: BatchAcc<T>,
        reported: &[usize],
        rep_pairs: &[(usize, usize)],
    ) -> EngineOutput<T> {
        let n = acc.n;
        let nt = T::from_u64(n).unwrap();
        let inv = T::one() / nt;
        let moments = if req.want_moments {
            let mut cross_se = Vec::with_capacity(rep_pairs.len());
            for pi in 0..rep_pairs.len() {
                let sum = &acc.s_sum[pi];
                let sq = &acc.s_sq[pi];
                let mut se = ComplexMatrix::zeros(sum.rows(), sum.cols());
                if n >= 2 {
                    for i in 0..sum.rows() {
                        for j in 0..sum.cols() {
                            let s = sum.get(i, j);
                            let q = sq.get(i, j);
                            let var_re =
                                ((q.re - s.re * s.re * inv) / (nt - T::one())).max(T::zero());
                            let var_im =
                                ((q.im - s.im * s.im * inv) / (nt - T::one())).max(T::zero());
                            se.set(
                                i,
                                j,
                                Complex::new((var_re * inv).sqrt(), (var_im * inv).sqrt()),
                            );
                        }
                    }
                }
                cross_se.push(se);
            }
            Some(MomentsOutput {
                users: reported.to_vec(),
                error_matrices: acc.err_mats.iter().map(|m| m.scaled(inv)).collect(),
                pairs: rep_pairs.to_vec(),
                cross_correlations: acc.c_mats.iter().map(|m| m.scaled(inv)).collect(),
                cross_moment_mean: acc.s_sum.iter().map(|m| m.scaled(inv)).collect(),
                cross_moment_se: cross_se,
                mmse_per_user: stats(&acc.mmse, n),
                mmse_total: acc.mmse_total.stat(n),
                psi: acc.psi.stat(n),
                rhs: acc.rhs.stat(n),
                aggregate_trace: acc.trez.stat(n),
                rhs_minus_aggregate: acc.diff.stat(n),
                max_rel_residual: acc.max_rel_resid,
            })
        } else {
            None
        };
        EngineOutput {
            samples: n,
            joint_mi: acc.joint.stat(n),
            joint_fd: req.want_joint_fd.then(|| acc.joint_fd.stat(n)),
            cond_mi: if req.want_user_mi {
                stats(&acc.cond, n)
            } else {
                Vec::new()
            },
            marg_mi: if req.want_user_mi {
                stats(&acc.marg, n)
            } else {
                Vec::new()
            },
            gap: if req.want_user_mi {
                stats(&acc.gap, n)
            } else {
                Vec::new()
            },
            cond_fd: if req.want_user_fd {
                stats(&acc.cond_fd, n)
            } else {
                Vec::new()
            },
            marg_fd: if req.want_user_fd {
                stats(&acc.marg_fd, n)
            } else {
                Vec::new()
            },
            gap_fd: if req.want_user_fd {
                stats(&acc.gap_fd, n)
            } else {
                Vec::new()
            },
            chain_residual: acc.chain.stat(n),
            moments,
        }
    }
}

/// Per-batch scratch buffers so the sample loop never allocates.
struct Workspace<T> {
    idx: Vec<usize>,
    noise: CVec<T>,
    y: CVec<T>,
    rb: CVec<T>,
    prefix: CVec<T>,
    lw: Vec<T>,
    w: Vec<T>,
    lpfx: Vec<T>,
    g_joint: [T; 3],
    g_cond: [Vec<T>; 3],
    g_marg: [Vec<T>; 3],
    qk: Vec<Vec<T>>,
    qp: Vec<Vec<T>>,
    xhat: Vec<CVec<T>>,
    ahat: Vec<CVec<T>>,
    cond_var: Vec<T>,
    err_vec: CVec<T>,
    zhat: CVec<T>,
    sum_ahat: CVec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(engine: &DiscreteEngine<T>, reported: &[usize], rep_pairs: &[(usize, usize)]) -> Self {
        let zero = Complex::new(T::zero(), T::zero());
        let k = engine.k;
        let n_r = engine.n_r;
        let max_dim = engine.dims.iter().copied().max().unwrap_or(1);
        Workspace {
            idx: vec![0; k],
            noise: vec![zero; n_r],
            y: vec![zero; n_r],
            rb: vec![zero; n_r],
            prefix: vec![zero; n_r],
            lw: Vec::with_capacity(engine.suffix[0].len()),
            w: Vec::with_capacity(engine.suffix[0].len()),
            lpfx: vec![T::zero(); k + 1],
            g_joint: [T::zero(); 3],
            g_cond: [vec![T::zero(); k], vec![T::zero(); k], vec![T::zero(); k]],
            g_marg: [vec![T::zero(); k], vec![T::zero(); k], vec![T::zero(); k]],
            qk: reported
                .iter()
                .map(|&u| vec![T::zero(); engine.points[u].len()])
                .collect(),
            qp: rep_pairs
                .iter()
                .map(|&(a, b)| {
                    vec![
                        T::zero();
                        engine.points[reported[a]].len() * engine.points[reported[b]].len()
                    ]
                })
                .collect(),
            xhat: reported
                .iter()
                .map(|&u| vec![zero; engine.dims[u]])
                .collect(),
            ahat: reported.iter().map(|_| vec![zero; n_r]).collect(),
            cond_var: vec![T::zero(); reported.len()],
            err_vec: vec![zero; max_dim],
            zhat: vec![zero; n_r],
            sum_ahat: vec![zero; n_r],
        }
    }
}
