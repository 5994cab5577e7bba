//! Per-user input distributions: finite constellations and the standard
//! circularly-symmetric complex Gaussian, with exact joint enumeration and
//! seeded sampling.

use num_complex::Complex;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::model::SystemModel;
use crate::scalar::Scalar;

/// Default cap on the number of enumerated joint tuples.
pub const DEFAULT_ENUM_CAP: u64 = 65536;

const PROB_SUM_TOL: f64 = 1e-12;
const MOMENT_TOL: f64 = 1e-9;

/// Finite input alphabet with priors. Points are complex vectors of a fixed
/// dimension; the law must be zero-mean with unit average power per
/// component (Σ p‖x‖² = dim).
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation<T> {
    dim: usize,
    points: Vec<CVec<T>>,
    probs: Vec<T>,
}

impl<T: Scalar> Constellation<T> {
    /// Build and validate. Violations are rejected, not repaired; see
    /// [`Constellation::normalized`] for the repairing path.
    pub fn new(dim: usize, points: Vec<CVec<T>>, probs: Vec<T>) -> Result<Self> {
        let c = Self { dim, points, probs };
        let violations = c.violations();
        if violations.is_empty() {
            Ok(c)
        } else {
            Err(Error::InvalidScenario(violations.join("; ")))
        }
    }

    /// Re-center to zero mean and rescale to unit average power, then
    /// validate. Used by the `--normalize` CLI switch.
    pub fn normalized(dim: usize, points: Vec<CVec<T>>, probs: Vec<T>) -> Result<Self> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(Error::InvalidScenario(
                "constellation needs matching, non-empty points and probs".into(),
            ));
        }
        let total: T = probs.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::InvalidScenario(
                "probabilities must have positive mass".into(),
            ));
        }
        let probs: Vec<T> = probs.iter().map(|p| *p / total).collect();
        let mut mean = vec![Complex::new(T::zero(), T::zero()); dim];
        for (x, p) in points.iter().zip(probs.iter()) {
            for (m, xi) in mean.iter_mut().zip(x.iter()) {
                *m += xi.scale(*p);
            }
        }
        let mut centered: Vec<CVec<T>> = points
            .iter()
            .map(|x| x.iter().zip(mean.iter()).map(|(xi, m)| *xi - *m).collect())
            .collect();
        let mut power = T::zero();
        for (x, p) in centered.iter().zip(probs.iter()) {
            power += crate::linalg::vec_norm_sqr(x) * *p;
        }
        if !(power > T::zero()) {
            return Err(Error::InvalidScenario(
                "constellation has zero power after centering".into(),
            ));
        }
        let scale = (T::from_usize(dim).unwrap() / power).sqrt();
        for x in centered.iter_mut() {
            for xi in x.iter_mut() {
                *xi = xi.scale(scale);
            }
        }
        Self::new(dim, centered, probs)
    }

    /// Every violated invariant, as human-readable strings.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.points.is_empty() || self.points.len() != self.probs.len() {
            out.push(format!(
                "point/prob counts mismatch: {} points, {} probs",
                self.points.len(),
                self.probs.len()
            ));
            return out;
        }
        if self.dim == 0 {
            out.push("dimension must be positive".into());
            return out;
        }
        for (i, x) in self.points.iter().enumerate() {
            if x.len() != self.dim {
                out.push(format!(
                    "point {} has dimension {}, expected {}",
                    i,
                    x.len(),
                    self.dim
                ));
                return out;
            }
            if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                out.push(format!("point {} has non-finite entries", i));
            }
        }
        if self.probs.iter().any(|p| *p < T::zero() || !p.is_finite()) {
            out.push("probabilities must be nonnegative and finite".into());
        }
        let total: T = self.probs.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(PROB_SUM_TOL) {
            out.push(format!("probabilities sum to {}, expected 1", total));
        }
        for d in 0..self.dim {
            let mut m = Complex::new(T::zero(), T::zero());
            for (x, p) in self.points.iter().zip(self.probs.iter()) {
                m += x[d].scale(*p);
            }
            if m.norm() > T::lit(MOMENT_TOL) {
                out.push(format!(
                    "component {} mean is {} (must be zero)",
                    d,
                    m.norm()
                ));
            }
        }
        let mut power = T::zero();
        for (x, p) in self.points.iter().zip(self.probs.iter()) {
            power += crate::linalg::vec_norm_sqr(x) * *p;
        }
        if (power - T::from_usize(self.dim).unwrap()).abs() > T::lit(MOMENT_TOL) {
            out.push(format!("average power is {}, expected {}", power, self.dim));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[CVec<T>] {
        &self.points
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

/// Per-user input distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum InputLaw<T> {
    Discrete(Constellation<T>),
    /// Zero-mean identity-covariance circularly-symmetric complex Gaussian,
    /// unit variance per component.
    Gaussian {
        dim: usize,
    },
}

impl<T: Scalar> InputLaw<T> {
    pub fn dim(&self) -> usize {
        match self {
            InputLaw::Discrete(c) => c.dim(),
            InputLaw::Gaussian { dim } => *dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, InputLaw::Discrete(_))
    }
}

/// Named per-component alphabets for desk-scale experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardName {
    Bpsk,
    Qpsk,
    Qam16,
}

impl StandardName {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            "qam16" => Ok(Self::Qam16),
            other => Err(Error::UnknownConstellation(other.to_string())),
        }
    }
}

fn base_alphabet<T: Scalar>(name: StandardName) -> Vec<Complex<T>> {
    match name {
        StandardName::Bpsk => vec![
            Complex::new(T::one(), T::zero()),
            Complex::new(-T::one(), T::zero()),
        ],
        StandardName::Qpsk => {
            let s = T::lit(0.5).sqrt();
            vec![
                Complex::new(s, s),
                Complex::new(s, -s),
                Complex::new(-s, s),
                Complex::new(-s, -s),
            ]
        }
        StandardName::Qam16 => {
            let s = (T::one() / T::lit(10.0)).sqrt();
            let levels = [T::lit(-3.0), -T::one(), T::one(), T::lit(3.0)];
            let mut pts = Vec::with_capacity(16);
            for a in levels {
                for b in levels {
                    pts.push(Complex::new(a * s, b * s));
                }
            }
            pts
        }
    }
}

/// Product constellation: the per-component alphabet replicated across `dim`
/// components with uniform priors. Component 0 varies slowest.
pub fn standard_constellation<T: Scalar>(
    name: StandardName,
    dim: usize,
) -> Result<Constellation<T>> {
    assert!(dim >= 1, "dim must be at least 1");
    let base = base_alphabet::<T>(name);
    let b = base.len();
    let count = (b as u128).pow(dim as u32);
    if count > DEFAULT_ENUM_CAP as u128 {
        return Err(Error::EnumerationCapExceeded {
            required: count,
            cap: DEFAULT_ENUM_CAP,
        });
    }
    let count = count as usize;
    let prob = T::one() / T::from_usize(count).unwrap();
    let mut points = Vec::with_capacity(count);
    for t in 0..count {
        let mut x = Vec::with_capacity(dim);
        let mut rem = t;
        let mut stride = count / b;
        for _ in 0..dim {
            x.push(base[rem / stride]);
            rem %= stride;
            stride = (stride / b).max(1);
        }
        points.push(x);
    }
    Constellation::new(dim, points, vec![prob; count])
}

/// Exhaustive joint support: every tuple (x_1, ..., x_K) with its prior
/// probability, the product of per-user priors.
pub fn enumerate_joint<T: Scalar>(system: &SystemModel<T>) -> Result<Vec<(Vec<CVec<T>>, T)>> {
    enumerate_joint_with_cap(system, DEFAULT_ENUM_CAP)
}

pub fn enumerate_joint_with_cap<T: Scalar>(
    system: &SystemModel<T>,
    cap: u64,
) -> Result<Vec<(Vec<CVec<T>>, T)>> {
    let laws: Vec<&Constellation<T>> = system
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| match &u.input {
            InputLaw::Discrete(c) => Ok(c),
            InputLaw::Gaussian { .. } => Err(Error::GaussianInputPresent(k)),
        })
        .collect::<Result<_>>()?;
    let required: u128 = laws.iter().map(|c| c.len() as u128).product();
    if required > cap as u128 {
        return Err(Error::EnumerationCapExceeded { required, cap });
    }
    let total = required as usize;
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; laws.len()];
    for _ in 0..total {
        let tuple: Vec<CVec<T>> = laws
            .iter()
            .zip(idx.iter())
            .map(|(c, &i)| c.points()[i].clone())
            .collect();
        let prob = laws
            .iter()
            .zip(idx.iter())
            .map(|(c, &i)| c.probs()[i])
            .fold(T::one(), |a, b| a * b);
        out.push((tuple, prob));
        // odometer, last user fastest
        for k in (0..laws.len()).rev() {
            idx[k] += 1;
            if idx[k] < laws[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(out)
}

/// One independent draw per user from its input law. Deterministic given the
/// rng state; the draw count per call is fixed, so common-random-number
/// schemes stay aligned.
pub fn sample_inputs<T: Scalar, R: Rng + ?Sized>(
    system: &SystemModel<T>,
    rng: &mut R,
) -> Vec<CVec<T>> {
    system
        .users
        .iter()
        .map(|u| sample_law(&u.input, rng))
        .collect()
}

pub(crate) fn sample_law<T: Scalar, R: Rng + ?Sized>(law: &InputLaw<T>, rng: &mut R) -> CVec<T> {
    match law {
        InputLaw::Discrete(c) => c.points()[sample_index(c.probs(), rng)].clone(),
        InputLaw::Gaussian { dim } => {
            let s = T::lit(0.5).sqrt();
            (0..*dim)
                .map(|_| {
                    let re = T::standard_normal(rng) * s;
                    let im = T::standard_normal(rng) * s;
                    Complex::new(re, im)
                })
                .collect()
        }
    }
}

/// Inverse-CDF draw from a finite pmf; exactly one uniform consumed.
pub(crate) fn sample_index<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = T::uniform_01(rng);
    let mut acc = T::zero();
    for (i, p) in probs.iter().enumerate() {
        acc += *p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::linalg::ComplexMatrix;
    use crate::model::{SystemModel, UserLink};

    fn scalar_user(gain: f64, law: InputLaw<f64>) -> UserLink<f64> {
        UserLink {
            channel: ComplexMatrix::scalar(gain),
            precoder: ComplexMatrix::scalar(1.0),
            input: law,
        }
    }

    fn bpsk_system(k: usize) -> SystemModel<f64> {
        let users = (0..k)
            .map(|_| {
                scalar_user(
                    1.0,
                    InputLaw::Discrete(standard_constellation(StandardName::Bpsk, 1).unwrap()),
                )
            })
            .collect();
        SystemModel { n_r: 1, users }
    }

    #[test]
    fn bpsk_scalar_points() {
        let c = standard_constellation::<f64>(StandardName::Bpsk, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points()[0][0], Complex::new(1.0, 0.0));
        assert_eq!(c.points()[1][0], Complex::new(-1.0, 0.0));
        assert_eq!(c.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn qpsk_unit_modulus_uniform() {
        let c = standard_constellation::<f64>(StandardName::Qpsk, 1).unwrap();
        assert_eq!(c.len(), 4);
        for p in c.points() {
            assert!((p[0].norm() - 1.0).abs() < 1e-12);
        }
        assert!(c.probs().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn bpsk_two_antennas_is_product() {
        let c = standard_constellation::<f64>(StandardName::Bpsk, 2).unwrap();
        assert_eq!(c.len(), 4);
        let signs: Vec<(f64, f64)> = c.points().iter().map(|p| (p[0].re, p[1].re)).collect();
        assert_eq!(
            signs,
            vec![(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
        );
        assert!(c.probs().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn standard_constellations_satisfy_invariants_tightly() {
        for name in [StandardName::Bpsk, StandardName::Qpsk, StandardName::Qam16] {
            for dim in 1..=2 {
                let c = standard_constellation::<f64>(name, dim).unwrap();
                // construction already validated at 1e-9; re-check tighter
                let total: f64 = c.probs().iter().sum();
                assert!((total - 1.0).abs() < 1e-14);
                let mut power = 0.0;
                for (x, p) in c.points().iter().zip(c.probs()) {
                    power += p * crate::linalg::vec_norm_sqr(x);
                }
                assert!((power - dim as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            StandardName::parse("8psk"),
            Err(Error::UnknownConstellation(_))
        ));
    }

    #[test]
    fn joint_enumeration_two_bpsk_users() {
        let sys = bpsk_system(2);
        let joint = enumerate_joint(&sys).unwrap();
        assert_eq!(joint.len(), 4);
        for (_, p) in &joint {
            assert_eq!(*p, 0.25);
        }
        let total: f64 = joint.iter().map(|(_, p)| *p).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn joint_enumeration_three_qpsk_users() {
        let users = (0..3)
            .map(|_| {
                scalar_user(
                    1.0,
                    InputLaw::Discrete(standard_constellation(StandardName::Qpsk, 1).unwrap()),
                )
            })
            .collect();
        let sys = SystemModel { n_r: 1, users };
        assert_eq!(enumerate_joint(&sys).unwrap().len(), 64);
    }

    #[test]
    fn gaussian_user_blocks_enumeration() {
        let users = vec![
            scalar_user(
                1.0,
                InputLaw::Discrete(standard_constellation(StandardName::Bpsk, 1).unwrap()),
            ),
            scalar_user(1.0, InputLaw::Gaussian { dim: 1 }),
        ];
        let sys = SystemModel { n_r: 1, users };
        assert!(matches!(
            enumerate_joint(&sys),
            Err(Error::GaussianInputPresent(1))
        ));
    }

    #[test]
    fn enumeration_cap_reports_required_cardinality() {
        let sys = bpsk_system(3);
        match enumerate_joint_with_cap(&sys, 4) {
            Err(Error::EnumerationCapExceeded { required, cap }) => {
                assert_eq!(required, 8);
                assert_eq!(cap, 4);
            }
            other => panic!("expected cap error, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let sys = bpsk_system(2);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_inputs(&sys, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn discrete_sampling_frequencies_match_priors() {
        let c = standard_constellation::<f64>(StandardName::Qpsk, 1).unwrap();
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![0usize; c.len()];
        for _ in 0..n {
            counts[sample_index(c.probs(), &mut rng)] += 1;
        }
        // binomial 4-sigma band around p = 1/4
        let p = 0.25;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for &cnt in &counts {
            let freq = cnt as f64 / n as f64;
            assert!((freq - p).abs() < 4.0 * sigma, "freq {} vs {}", freq, p);
        }
    }

    #[test]
    fn joint_sampling_passes_chi_square() {
        // empirical joint tuple counts vs the enumerated pmf
        let sys = bpsk_system(2);
        let joint = enumerate_joint(&sys).unwrap();
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut counts = vec![0usize; joint.len()];
        for _ in 0..n {
            let draw = sample_inputs(&sys, &mut rng);
            let hit = joint
                .iter()
                .position(|(tuple, _)| tuple.iter().zip(draw.iter()).all(|(a, b)| a == b))
                .unwrap();
            counts[hit] += 1;
        }
        let chi2: f64 = joint
            .iter()
            .zip(counts.iter())
            .map(|((_, p), &c)| {
                let expect = p * n as f64;
                (c as f64 - expect).powi(2) / expect
            })
            .sum();
        // 99.9th percentile of chi-square with 3 degrees of freedom
        assert!(chi2 < 16.27, "chi-square statistic {chi2}");
    }

    #[test]
    fn gaussian_sampling_variance_is_unit() {
        let law = InputLaw::<f64>::Gaussian { dim: 2 };
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = [0.0f64; 2];
        for _ in 0..n {
            let x = sample_law(&law, &mut rng);
            acc[0] += x[0].norm_sqr();
            acc[1] += x[1].norm_sqr();
        }
        for a in acc {
            let var = a / n as f64;
            assert!((var - 1.0).abs() < 0.01, "component variance {}", var);
        }
    }

    #[test]
    fn normalized_recovers_invariants() {
        // off-center, badly scaled 3-point law
        let points = vec![
            vec![Complex::new(3.0, 0.0)],
            vec![Complex::new(1.0, 0.0)],
            vec![Complex::new(2.0, 2.0)],
        ];
        let probs = vec![1.0, 1.0, 2.0];
        assert!(Constellation::new(1, points.clone(), probs.clone()).is_err());
        let c = Constellation::normalized(1, points, probs).unwrap();
        assert!(c.violations().is_empty());
    }
}
