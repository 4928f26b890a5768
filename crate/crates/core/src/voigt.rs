//! Voigt notation for symmetric stiffness tensors.
//!
//! Components are ordered (11, 22, 33, 23, 13, 12) in 3D and (11, 22, 12) in
//! plane strain. Shear strains are engineering strains, so `sigma = C eps`
//! holds with no extra factors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positions of (11, 22, 12) in the 3D ordering.
pub const PLANE_STRAIN_INDICES: [usize; 3] = [0, 1, 5];

const SYM_TOL: f64 = 1e-9;

/// A symmetric positive definite stiffness in Voigt form (3x3 or 6x6).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct VoigtStiffness {
    m: DMatrix<f64>,
}

impl VoigtStiffness {
    /// Validates size, symmetry and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n || (n != 3 && n != 6) {
            return Err(Error::invalid(format!("Voigt stiffness must be 3x3 or 6x6, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Voigt stiffness".into()));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SYM_TOL * scale {
                    return Err(Error::invalid(format!("Voigt stiffness not symmetric at ({i},{j})")));
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        if sym.clone().cholesky().is_none() {
            return Err(Error::invalid("Voigt stiffness is not positive definite"));
        }
        Ok(VoigtStiffness { m: sym })
    }

    /// Skips the definiteness check. Used for penalized tensors that may be
    /// vanishingly small but are known to be PSD by construction.
    pub fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.nrows() == m.ncols() && (m.nrows() == 3 || m.nrows() == 6));
        VoigtStiffness { m }
    }

    /// Isotropic 3D stiffness from Young's modulus and Poisson's ratio.
    pub fn isotropic(e: f64, nu: f64) -> Result<Self> {
        if !(e > 0.0) || !(nu > -1.0 && nu < 0.5) {
            return Err(Error::invalid(format!("invalid isotropic constants E={e}, nu={nu}")));
        }
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        Ok(Self::from_matrix_unchecked(isotropic_matrix(lambda + 2.0 * mu, lambda, mu)))
    }

    pub fn size(&self) -> usize {
        self.m.nrows()
    }

    pub fn is_3d(&self) -> bool {
        self.m.nrows() == 6
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn scaled(&self, s: f64) -> Self {
        VoigtStiffness { m: &self.m * s }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    /// Double contraction with another Voigt matrix of the same size.
    pub fn contract(&self, other: &DMatrix<f64>) -> f64 {
        self.m.dot(other)
    }

    /// The (11, 22, 12) block of a 3D tensor, i.e. the plane strain stiffness.
    pub fn plane_strain(&self) -> Result<Self> {
        if !self.is_3d() {
            return Err(Error::DimensionMismatch { expected: 6, got: self.size() });
        }
        Ok(Self::from_matrix_unchecked(plane_strain_block(&self.m)))
    }
}

impl TryFrom<Vec<Vec<f64>>> for VoigtStiffness {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("Voigt stiffness rows must form a square matrix"));
        }
        VoigtStiffness::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

impl From<VoigtStiffness> for Vec<Vec<f64>> {
    fn from(c: VoigtStiffness) -> Self {
        (0..c.size()).map(|i| (0..c.size()).map(|j| c.m[(i, j)]).collect()).collect()
    }
}

/// Cubic-symmetric 6x6 matrix with the given normal, off-diagonal and shear
/// entries. Isotropy is the special case `c11 = c12 + 2 c44`.
pub fn isotropic_matrix(c11: f64, c12: f64, c44: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = if i == j { c11 } else { c12 };
        }
        m[(i + 3, i + 3)] = c44;
    }
    m
}

pub fn plane_strain_block(m: &DMatrix<f64>) -> DMatrix<f64> {
    let p = PLANE_STRAIN_INDICES;
    DMatrix::from_fn(3, 3, |i, j| m[(p[i], p[j])])
}

/// Index pair (i, j) of a Voigt component, i <= j.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
