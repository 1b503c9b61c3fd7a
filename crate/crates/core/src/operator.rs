use std::ops::{Add, Mul};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    State,
    Hamiltonian,
    Propagator,
    Observable,
}

/// A 2ⁿ×2ⁿ complex matrix tagged with what it represents.
///
/// States are traceless deviation density matrices, Hamiltonians are in
/// rad/s, propagators are unitary. The constructors enforce these.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    matrix: CMat,
    role: Role,
}

impl OperatorMatrix {
    pub fn new(matrix: CMat, role: Role) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("operator entry".into()));
        }
        // Tolerances are relative to the entry scale and dimension, so that
        // Hamiltonians in rad/s and long propagation chains are judged fairly.
        let scale = matrix.nrows() as f64 * linalg::max_abs(&matrix).max(1.0);
        match role {
            Role::State | Role::Hamiltonian => {
                let dev = linalg::hermitian_deviation(&matrix);
                if dev > HERMITIAN_TOL * scale {
                    return Err(Error::Property {
                        property: "Hermitian",
                        deviation: dev,
                    });
                }
                if role == Role::State {
                    let tr = linalg::trace(&matrix).norm();
                    if tr > TRACE_TOL * scale {
                        return Err(Error::Property {
                            property: "traceless",
                            deviation: tr,
                        });
                    }
                }
            }
            Role::Propagator => {
                let dev = linalg::unitarity_deviation(&matrix);
                if dev > UNITARY_TOL {
                    return Err(Error::Property {
                        property: "unitary",
                        deviation: dev,
                    });
                }
            }
            Role::Observable => {}
        }
        Ok(Self { matrix, role })
    }

    pub fn state(matrix: CMat) -> Result<Self> {
        Self::new(matrix, Role::State)
    }

    pub fn hamiltonian(matrix: CMat) -> Result<Self> {
        Self::new(matrix, Role::Hamiltonian)
    }

    pub fn propagator(matrix: CMat) -> Result<Self> {
        Self::new(matrix, Role::Propagator)
    }

    pub fn observable(matrix: CMat) -> Self {
        Self {
            matrix,
            role: Role::Observable,
        }
    }

    /// Re-tag without re-validating; for values produced by trusted routines.
    pub(crate) fn from_trusted(matrix: CMat, role: Role) -> Self {
        Self { matrix, role }
    }

    pub fn with_role(self, role: Role) -> Result<Self> {
        Self::new(self.matrix, role)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn diagonal(&self) -> Vec<C64> {
        self.matrix.diagonal().iter().copied().collect()
    }

    /// Real parts of the diagonal.
    pub fn real_diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    /// U·self·U†, keeping the role.
    pub fn conjugated_by(&self, u: &OperatorMatrix) -> OperatorMatrix {
        Self::from_trusted(linalg::conjugate(&u.matrix, &self.matrix), self.role)
    }

    /// Re Tr(O·self).
    pub fn expectation(&self, observable: &OperatorMatrix) -> f64 {
        linalg::trace_product(&observable.matrix, &self.matrix).re
    }

    pub fn scaled(&self, factor: f64) -> OperatorMatrix {
        Self::from_trusted(&self.matrix * C64::new(factor, 0.0), self.role)
    }

    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        linalg::max_abs(&(&self.matrix - &other.matrix))
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix::from_trusted(&self.matrix + &rhs.matrix, self.role)
    }
}

impl Mul for &OperatorMatrix {
    type Output = CMat;

    fn mul(self, rhs: &OperatorMatrix) -> CMat {
        &self.matrix * &rhs.matrix
    }
}
