//! Dense complex matrices and the small set of operations the engine needs.
//!
//! Matrices here are tiny (receive/transmit dimensions of a few), so
//! everything is plain row-major storage with straightforward loops.
//! Hermitian positive-definite factorization goes through a complex
//! Cholesky; there is deliberately no general-matrix determinant path.

use num_complex::Complex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Complex column vector.
pub type CVec<T> = Vec<Complex<T>>;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex::new(T::one(), T::zero()));
        }
        m
    }

    /// Build from rows; fails on an empty or ragged layout.
    pub fn from_rows(rows: &[Vec<Complex<T>>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::Shape(
                "matrix must have at least one row and one column".into(),
            ));
        }
        let cols = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// 1x1 matrix from a real gain, handy for scalar channels.
    pub fn scalar(x: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![Complex::new(x, T::zero())],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex<T>) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex<T>) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..rhs.cols {
                    let v = out.get(i, j) + a * rhs.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex<T>]) -> CVec<T> {
        assert_eq!(self.cols, v.len(), "vector length must match columns");
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.rows];
        for i in 0..self.rows {
            let mut acc = Complex::new(T::zero(), T::zero());
            for j in 0..self.cols {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a -= *b;
        }
        out
    }

    pub fn add_scaled_assign(&mut self, rhs: &Self, w: T) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b.scale(w);
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a = a.scale(s);
        }
        out
    }

    pub fn trace(&self) -> Complex<T> {
        assert_eq!(self.rows, self.cols, "trace needs a square matrix");
        (0..self.rows)
            .map(|i| self.get(i, i))
            .fold(Complex::new(T::zero(), T::zero()), |acc, z| acc + z)
    }

    /// Gram matrix A·A† (rows x rows).
    pub fn gram(&self) -> Self {
        let mut out = Self::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..self.cols {
                    acc += self.get(i, k) * self.get(j, k).conj();
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// self += w · a·b† for column vectors a, b.
    pub fn outer_acc(&mut self, a: &[Complex<T>], b: &[Complex<T>], w: T) {
        assert_eq!(self.rows, a.len());
        assert_eq!(self.cols, b.len());
        for i in 0..self.rows {
            let ai = a[i].scale(w);
            for j in 0..self.cols {
                self.data[i * self.cols + j] += ai * b[j].conj();
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }

    /// Largest deviation from Hermitian symmetry, |a_ij - conj(a_ji)|.
    pub fn hermitian_defect(&self) -> T {
        assert_eq!(self.rows, self.cols);
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = (self.get(i, j) - self.get(j, i).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Lower-triangular complex Cholesky factor of a Hermitian PD matrix.
    pub fn cholesky(&self) -> Result<Self> {
        assert_eq!(self.rows, self.cols, "cholesky needs a square matrix");
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l.get(j, k).norm_sqr();
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let djj = d.sqrt();
            l.set(j, j, Complex::new(djj, T::zero()));
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, s.unscale(djj));
            }
        }
        Ok(l)
    }

    /// log det of a Hermitian PD matrix via its Cholesky factor.
    pub fn logdet_hpd(&self) -> Result<T> {
        let l = self.cholesky()?;
        let mut acc = T::zero();
        for i in 0..self.rows {
            acc += l.get(i, i).re.ln();
        }
        Ok(acc + acc)
    }

    /// Inverse of a Hermitian PD matrix via Cholesky solves.
    pub fn inverse_hpd(&self) -> Result<Self> {
        let n = self.rows;
        let l = self.cholesky()?;
        let mut inv = Self::zeros(n, n);
        let mut col = vec![Complex::new(T::zero(), T::zero()); n];
        for c in 0..n {
            for x in col.iter_mut() {
                *x = Complex::new(T::zero(), T::zero());
            }
            col[c] = Complex::new(T::one(), T::zero());
            // forward: L z = e_c
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= l.get(i, k) * col[k];
                }
                col[i] = s.unscale(l.get(i, i).re);
            }
            // backward: L† x = z
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in (i + 1)..n {
                    s -= l.get(k, i).conj() * col[k];
                }
                col[i] = s.unscale(l.get(i, i).re);
            }
            for i in 0..n {
                inv.set(i, c, col[i]);
            }
        }
        Ok(inv)
    }

    /// Positive semidefiniteness within a diagonal slack, checked by
    /// factorizing self + tol·I.
    pub fn is_psd_within(&self, tol: T) -> bool {
        let shifted = self.add(&Self::identity(self.rows).scaled(tol));
        shifted.cholesky().is_ok()
    }
}

/// Squared Euclidean norm of a complex vector.
pub fn vec_norm_sqr<T: Scalar>(v: &[Complex<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).fold(T::zero(), |a, b| a + b)
}

/// tr(G·M) for G (p x q) and M (q x p).
pub fn trace_product<T: Scalar>(g: &ComplexMatrix<T>, m: &ComplexMatrix<T>) -> Complex<T> {
    assert_eq!(g.cols(), m.rows());
    assert_eq!(g.rows(), m.cols());
    let mut acc = Complex::new(T::zero(), T::zero());
    for a in 0..g.rows() {
        for b in 0..g.cols() {
            acc += g.get(a, b) * m.get(b, a);
        }
    }
    acc
}

// JSON form: row-major array of rows, each entry a 2-element [re, im] array.
impl<T: Scalar> Serialize for ComplexMatrix<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[T; 2]>> = (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| [self.get(i, j).re, self.get(i, j).im])
                    .collect()
            })
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for ComplexMatrix<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[T; 2]>> = Vec::deserialize(deserializer)?;
        let built: Vec<Vec<Complex<T>>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| Complex::new(re, im)).collect())
            .collect();
        ComplexMatrix::from_rows(&built).map_err(|e| D::Error::custom(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    type M = ComplexMatrix<f64>;
    type C = Complex<f64>;

    fn c(re: f64, im: f64) -> C {
        Complex::new(re, im)
    }

    #[test]
    fn mul_and_adjoint() {
        let a = M::from_rows(&[
            vec![c(1.0, 1.0), c(0.0, 2.0)],
            vec![c(3.0, 0.0), c(1.0, -1.0)],
        ])
        .unwrap();
        let id = M::identity(2);
        assert_eq!(a.mul(&id), a);
        let adj = a.adjoint();
        assert_eq!(adj.get(0, 1), c(3.0, 0.0));
        assert_eq!(adj.get(1, 0), c(0.0, -2.0));
        // (A†)† = A
        assert_eq!(adj.adjoint(), a);
    }

    #[test]
    fn gram_is_hermitian_psd() {
        let a = M::from_rows(&[
            vec![c(1.0, 0.5), c(-0.2, 0.1)],
            vec![c(0.0, 1.0), c(2.0, 0.0)],
        ])
        .unwrap();
        let g = a.gram();
        assert!(g.hermitian_defect() < 1e-15);
        assert!(g.is_psd_within(1e-12));
    }

    #[test]
    fn cholesky_reconstructs_hermitian_pd() {
        let m = M::from_rows(&[
            vec![c(4.0, 0.0), c(0.0, 1.0), c(-3.0, 1.0)],
            vec![c(0.0, -1.0), c(3.0, 0.0), c(1.0, 0.0)],
            vec![c(-3.0, -1.0), c(1.0, 0.0), c(4.0, 0.0)],
        ])
        .unwrap();
        let l = m.cholesky().unwrap();
        let back = l.mul(&l.adjoint());
        assert!(back.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = M::from_rows(&[
            vec![c(1.0, 0.0), c(2.0, 0.0)],
            vec![c(2.0, 0.0), c(1.0, 0.0)],
        ])
        .unwrap();
        assert!(matches!(m.cholesky(), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn logdet_matches_scalar_case() {
        let m = M::from_rows(&[vec![c(3.0, 0.0)]]).unwrap();
        assert!((m.logdet_hpd().unwrap() - 3.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn inverse_hpd_inverts() {
        let a = M::from_rows(&[
            vec![c(1.0, 0.2), c(-0.4, 0.1)],
            vec![c(0.3, 1.0), c(2.0, 0.0)],
        ])
        .unwrap();
        let m = a.gram().add(&M::identity(2)); // HPD by construction
        let inv = m.inverse_hpd().unwrap();
        let eye = m.mul(&inv);
        assert!(eye.max_abs_diff(&M::identity(2)) < 1e-12);
    }

    #[test]
    fn serde_round_trip_preserves_layout() {
        let a = M::from_rows(&[vec![c(1.0, -2.0), c(0.5, 0.0)]]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[[[1.0,-2.0],[0.5,0.0]]]");
        let back: M = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_ragged_rows() {
        let r = M::from_rows(&[vec![c(1.0, 0.0)], vec![c(1.0, 0.0), c(2.0, 0.0)]]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
