//! Dense complex matrix helpers shared by the propagation and design code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<C64>;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITERS: usize = 10_000;

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn zeros(dim: usize) -> CMat {
    CMat::zeros(dim, dim)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Largest absolute entry.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// max |M - M†|
pub fn hermitian_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// max |U†U - I|
pub fn unitarity_deviation(u: &CMat) -> f64 {
    let p = u.adjoint() * u;
    max_abs(&(p - identity(u.nrows())))
}

pub fn trace(m: &CMat) -> C64 {
    m.trace()
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Frobenius inner product Tr(A†B).
pub fn inner(a: &CMat, b: &CMat) -> C64 {
    a.iter()
        .zip(b.iter())
        .fold(C64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

/// Tr(A·B) without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn frobenius_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugation U·ρ·U†.
pub fn conjugate(u: &CMat, rho: &CMat) -> CMat {
    u * rho * u.adjoint()
}

/// Eigendecomposition H = V·diag(λ)·V† of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(h: &CMat) -> Result<Self> {
        let eig = SymmetricEigen::try_new(h.clone(), EIGEN_EPS, EIGEN_MAX_ITERS).ok_or(Error::Eigen)?;
        Ok(Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Phases e^{-iλ·dt} of the exponential in the eigenbasis.
    pub fn phases(&self, dt: f64) -> Vec<C64> {
        self.values
            .iter()
            .map(|&l| C64::from_polar(1.0, -l * dt))
            .collect()
    }

    /// exp(-iH·dt) reassembled from the eigenbasis.
    pub fn exp_minus_i(&self, dt: f64) -> CMat {
        let phases = self.phases(dt);
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * self.vectors.adjoint()
    }

    /// Divided-difference kernel of exp(-iH·dt) in the eigenbasis:
    /// the directional derivative along a perturbation P is
    /// V·(G ∘ V†PV)·V†.
    pub fn derivative_kernel(&self, dt: f64) -> CMat {
        let n = self.dim();
        let phases = self.phases(dt);
        CMat::from_fn(n, n, |a, b| {
            let theta = dt * (self.values[a] - self.values[b]);
            // (e^{-iλa dt} - e^{-iλb dt}) / (λa - λb), written through
            // expm1(iθ)/(iθ) so that near-degenerate pairs stay accurate.
            -phases[a] * C64::new(0.0, dt) * expm1_i_over_i(theta)
        })
    }
}

/// (e^{iθ} - 1)/(iθ), evaluated without cancellation.
fn expm1_i_over_i(theta: f64) -> C64 {
    if theta.abs() < 1e-8 {
        C64::new(1.0 - theta * theta / 6.0, theta / 2.0)
    } else {
        let half = 0.5 * theta;
        C64::new(theta.sin() / theta, 2.0 * half.sin() * half.sin() / theta)
    }
}
