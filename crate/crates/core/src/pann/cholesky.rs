//! Lower-triangular factors of isotropic stiffness matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::error::{Error, Result};

/// `2 / sqrt(3)`: the factor pair is admissible iff `g11 > RATIO * g44`.
pub const RATIO: f64 = 1.154_700_538_379_251_5;

/// The two independent entries of the Cholesky factor of an isotropic
/// stiffness, `g11 = sqrt(C11)` and `g44 = sqrt(C44)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CholeskyPair {
    pub g11: f64,
    pub g44: f64,
}

impl CholeskyPair {
    pub fn new(g11: f64, g44: f64) -> Result<Self> {
        let p = CholeskyPair { g11, g44 };
        if !p.is_admissible() {
            return Err(Error::Constraint(format!("need g11 > 2/sqrt(3) g44 > 0, got g11 = {g11}, g44 = {g44}")));
        }
        Ok(p)
    }

    pub fn is_admissible(&self) -> bool {
        self.g44 > 0.0 && self.g11 > RATIO * self.g44 && self.g11.is_finite()
    }

    /// Factor pair of an isotropic Voigt matrix.
    pub fn from_isotropic(c: &DMatrix<f64>) -> Result<Self> {
        if c.nrows() != 6 || c.ncols() != 6 {
            return Err(Error::DimensionMismatch { expected: 6, got: c.nrows() });
        }
        if !(c[(0, 0)] > 0.0) || !(c[(3, 3)] > 0.0) {
            return Err(Error::Constraint("isotropic stiffness has a non-positive diagonal".into()));
        }
        Self::new(c[(0, 0)].sqrt(), c[(3, 3)].sqrt())
    }
}

/// Dependent entries of the factor, `(g21, g22, g32, g33)`; `g31 = g21` and
/// `g55 = g66 = g44`.
pub fn dependent_entries<T: Real>(g11: T, g44: T) -> (T, T, T, T) {
    let r = g44 / g11;
    let r2 = r * r;
    let one = T::cst(1.0);
    let q = one - r2;
    let sq = q.sqrt();
    let h = one - r2.scale(2.0);
    let g21 = g11 * h;
    let g22 = g44.scale(2.0) * sq;
    let g32 = g44 * h / sq;
    let g33 = g44 * ((T::cst(3.0) - r2.scale(4.0)) / q).sqrt();
    (g21, g22, g32, g33)
}

/// The 6x6 lower-triangular factor.
pub fn cholesky_matrix(pair: &CholeskyPair) -> Result<DMatrix<f64>> {
    if !pair.is_admissible() {
        return Err(Error::Constraint(format!("g11 = {} must exceed 2/sqrt(3) g44 = {}", pair.g11, RATIO * pair.g44)));
    }
    let (g21, g22, g32, g33) = dependent_entries(pair.g11, pair.g44);
    let mut g = DMatrix::zeros(6, 6);
    g[(0, 0)] = pair.g11;
    g[(1, 0)] = g21;
    g[(1, 1)] = g22;
    g[(2, 0)] = g21;
    g[(2, 1)] = g32;
    g[(2, 2)] = g33;
    for i in 3..6 {
        g[(i, i)] = pair.g44;
    }
    Ok(g)
}

/// `G G^T` written out entry by entry, so it also runs on dual numbers.
pub fn stiffness_entries<T: Real>(g11: T, g44: T) -> [[T; 6]; 6] {
    let (g21, g22, g32, g33) = dependent_entries(g11, g44);
    let z = T::cst(0.0);
    let mut c = [[z; 6]; 6];
    let c11 = g11 * g11;
    let c12 = g21 * g11;
    let c22 = g21 * g21 + g22 * g22;
    let c23 = g21 * g21 + g32 * g22;
    let c33 = g21 * g21 + g32 * g32 + g33 * g33;
    let c44 = g44 * g44;
    c[0][0] = c11;
    c[1][1] = c22;
    c[2][2] = c33;
    c[0][1] = c12;
    c[1][0] = c12;
    c[0][2] = c12;
    c[2][0] = c12;
    c[1][2] = c23;
    c[2][1] = c23;
    for i in 3..6 {
        c[i][i] = c44;
    }
    c
}

pub fn stiffness_matrix(pair: &CholeskyPair) -> DMatrix<f64> {
    let c = stiffness_entries(pair.g11, pair.g44);
    DMatrix::from_fn(6, 6, |i, j| c[i][j])
}
