//! Test-only oracles, independent of the library's estimation paths.
//!
//! Gauss-Hermite quadrature over the complex noise plus direct-density
//! posterior sums (no log-domain computation anywhere) for scalar-channel
//! systems. Everything here recomputes the quantities from first principles
//! so it can stand as an oracle for the Monte Carlo engine.
#![allow(dead_code)] // shared by several test binaries, not all use every oracle

use immse::SystemModel64;
use immse::inputs::InputLaw;
use num_complex::Complex;

type C64 = Complex<f64>;

const PIM4: f64 = 0.7511255444649425; // pi^(-1/4)

/// Physicists' Gauss-Hermite rule: ∫ e^{-x²} f(x) dx ≈ Σ w_i f(x_i).
/// Newton iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    // the unscaled orthonormal recurrence overflows f64 near n = 200
    assert!((2..=180).contains(&n));
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.into_iter().zip(w).collect()
}

/// Everything the quadrature oracle computes for one snr.
#[derive(Debug, Clone)]
pub struct OracleValues {
    pub mi: f64,
    pub mmse_per_user: Vec<f64>,
    pub psi: f64,
    pub tr_ez: f64,
    pub mi_cond: Vec<f64>,
    pub mi_marg: Vec<f64>,
}

/// Quadrature oracle for scalar-channel discrete systems (n_r = 1, every
/// user single-antenna). Expectations over the complex noise use a 2-D
/// Gauss-Hermite product rule; posteriors are direct density sums.
pub struct ScalarSystemOracle {
    gains: Vec<C64>,
    points: Vec<Vec<C64>>,
    probs: Vec<Vec<f64>>,
}

impl ScalarSystemOracle {
    /// Extracts alphabets and effective gains; all math below is oracle-own.
    pub fn from_system(system: &SystemModel64) -> Self {
        assert_eq!(system.n_r, 1, "oracle handles scalar channels only");
        let mut gains = Vec::new();
        let mut points = Vec::new();
        let mut probs = Vec::new();
        for u in &system.users {
            assert_eq!(u.n_t(), 1, "oracle handles single-antenna users only");
            gains.push(u.effective_channel().get(0, 0));
            match &u.input {
                InputLaw::Discrete(c) => {
                    points.push(c.points().iter().map(|p| p[0]).collect::<Vec<_>>());
                    probs.push(c.probs().to_vec());
                }
                InputLaw::Gaussian { .. } => panic!("oracle handles discrete inputs only"),
            }
        }
        ScalarSystemOracle {
            gains,
            points,
            probs,
        }
    }

    fn tuples(&self) -> Vec<(Vec<usize>, f64, C64)> {
        // every tuple with its prior and its aggregate mean Σ g_k x_k
        let k = self.gains.len();
        let mut out = vec![(vec![0usize; k], 1.0, C64::new(0.0, 0.0))];
        for u in 0..k {
            let mut next = Vec::with_capacity(out.len() * self.points[u].len());
            for (idx, p, m) in &out {
                for (pi, x) in self.points[u].iter().enumerate() {
                    let mut idx2 = idx.clone();
                    idx2[u] = pi;
                    next.push((idx2, p * self.probs[u][pi], m + self.gains[u] * x));
                }
            }
            out = next;
        }
        out
    }

    pub fn evaluate(&self, snr: f64, nodes: usize) -> OracleValues {
        let k = self.gains.len();
        let gh = gauss_hermite(nodes);
        let tuples = self.tuples();
        let rt = snr.sqrt();
        let inv_pi = 1.0 / std::f64::consts::PI;

        let mut mi = 0.0;
        let mut mmse = vec![0.0; k];
        let mut psi = 0.0;
        let mut tr_ez = 0.0;
        let mut mi_cond = vec![0.0; k];
        let mut mi_marg = vec![0.0; k];

        for (true_idx, true_prob, true_mean) in &tuples {
            for &(xa, wa) in &gh {
                for &(xb, wb) in &gh {
                    let noise = C64::new(xa, xb);
                    let y = rt * true_mean + noise;
                    // E over n ~ CN(0,1): (1/π)·Σ_a Σ_b w_a w_b f(x_a + i·x_b)
                    let weight = true_prob * wa * wb * inv_pi;
                    // direct posterior over all tuples
                    let mut z = 0.0;
                    let mut xhat = vec![C64::new(0.0, 0.0); k];
                    let mut e_z2 = 0.0;
                    let mut zhat = C64::new(0.0, 0.0);
                    // conditional evidences p(y | x_1..x_m true) and p(y | x_k true)
                    let mut pfx = vec![0.0; k + 1];
                    let mut pmg = vec![0.0; k];
                    for (idx, prob, mean) in &tuples {
                        let d = y - rt * mean;
                        let lik = (-d.norm_sqr()).exp() * inv_pi;
                        let wt = prob * lik;
                        z += wt;
                        for u in 0..k {
                            xhat[u] += self.points[u][idx[u]].scale(wt);
                        }
                        e_z2 += wt * mean.norm_sqr();
                        zhat += mean.scale(wt);
                        // prefixes: renormalize by the prefix prior
                        let mut prefix_prob = 1.0;
                        let mut matches = true;
                        for m in 0..=k {
                            if m > 0 {
                                matches &= idx[m - 1] == true_idx[m - 1];
                                prefix_prob *= self.probs[m - 1][idx[m - 1]];
                            }
                            if matches {
                                pfx[m] += if m > 0 { prob / prefix_prob * lik } else { wt };
                            }
                        }
                        for u in 0..k {
                            if idx[u] == true_idx[u] {
                                pmg[u] += prob / self.probs[u][idx[u]] * lik;
                            }
                        }
                    }
                    for u in 0..k {
                        xhat[u] = xhat[u].unscale(z);
                    }
                    let lik_true = (-noise.norm_sqr()).exp() * inv_pi;
                    mi += weight * (lik_true.ln() - z.ln());
                    for u in 0..k {
                        let err = self.points[u][true_idx[u]] - xhat[u];
                        mmse[u] += weight * self.gains[u].norm_sqr() * err.norm_sqr();
                        mi_cond[u] += weight * (pfx[u + 1].ln() - pfx[u].ln());
                        mi_marg[u] += weight * (pmg[u].ln() - z.ln());
                    }
                    let mut sum_ahat = C64::new(0.0, 0.0);
                    let mut sum_norms = 0.0;
                    for u in 0..k {
                        let a = self.gains[u] * xhat[u];
                        sum_ahat += a;
                        sum_norms += a.norm_sqr();
                    }
                    psi += weight * (sum_norms - sum_ahat.norm_sqr());
                    tr_ez += weight * (e_z2 / z - (zhat / z).norm_sqr());
                }
            }
        }
        OracleValues {
            mi,
            mmse_per_user: mmse,
            psi,
            tr_ez,
            mi_cond,
            mi_marg,
        }
    }
}

/// Closed-form cross-check for single-user BPSK on a unit scalar channel:
/// the posterior mean is tanh(2·√snr·Re y), so by input symmetry
/// mmse(snr) = E[(1 − tanh(2·snr + 2·√snr·t))²] with t ~ N(0, 1/2).
pub fn bpsk_mmse_tanh(snr: f64, nodes: usize) -> f64 {
    let gh = gauss_hermite(nodes);
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    gh.iter()
        .map(|&(t, w)| {
            let e = 1.0 - (2.0 * snr + 2.0 * snr.sqrt() * t).tanh();
            w * inv_sqrt_pi * e * e
        })
        .sum()
}
