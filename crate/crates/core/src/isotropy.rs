//! Closest isotropic tensor, relative anisotropy and engineering moduli.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::voigt::{isotropic_matrix, VoigtStiffness};

/// The constant matrices Q, A1, A2 of the isotropic projection. A1 and A2
/// are orthonormal under `<X, Y> = tr(Q X Q Y)`.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    pub q: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn new() -> Self {
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]));
        let a1 = isotropic_matrix(1.0, 1.0, 0.0) / 3.0;
        let a2 = isotropic_matrix(4.0, -2.0, 3.0) / (6.0 * 5f64.sqrt());
        ProjectionBasis { q, a1, a2 }
    }

    pub fn inner(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        (&self.q * x * &self.q * y).trace()
    }
}

impl Default for ProjectionBasis {
    fn default() -> Self {
        Self::new()
    }
}

/// Projection of a symmetric 6x6 matrix onto the isotropic subspace. The
/// result is not checked for definiteness.
pub fn project_matrix(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.nrows() != 6 || c.ncols() != 6 {
        return Err(Error::DimensionMismatch { expected: 6, got: c.nrows() });
    }
    let b = ProjectionBasis::new();
    let k1 = b.inner(c, &b.a1);
    let k2 = b.inner(c, &b.a2);
    // rebuild from the coefficients so the pattern is exact
    let s = 1.0 / (6.0 * 5f64.sqrt());
    let c11 = k1 / 3.0 + 4.0 * k2 * s;
    let c12 = k1 / 3.0 - 2.0 * k2 * s;
    let c44 = 3.0 * k2 * s;
    let mut m = isotropic_matrix(c11, c12, c44);
    // enforce c11 = c12 + 2 c44 to the last bit
    let c11 = m[(0, 1)] + 2.0 * m[(3, 3)];
    for i in 0..3 {
        m[(i, i)] = c11;
    }
    Ok(m)
}

/// Closest isotropic tensor (in the tensorial Frobenius norm).
pub fn project_isotropic(c: &VoigtStiffness) -> Result<VoigtStiffness> {
    let m = project_matrix(c.matrix())?;
    VoigtStiffness::new(m).map_err(|_| Error::Constraint("isotropic projection is not positive definite".into()))
}

/// `||C - C_iso|| / ||C||` with the Frobenius norm of the Voigt matrices.
pub fn relative_anisotropy(c: &VoigtStiffness) -> Result<f64> {
    let n = c.frobenius_norm();
    if !(n > 0.0) {
        return Err(Error::invalid("relative anisotropy of a zero tensor"));
    }
    let p = project_matrix(c.matrix())?;
    Ok((c.matrix() - p).norm() / n)
}

/// Young's modulus and Poisson's ratio of an isotropic Voigt stiffness.
pub fn effective_moduli(c: &VoigtStiffness) -> Result<(f64, f64)> {
    if !c.is_3d() {
        return Err(Error::DimensionMismatch { expected: 6, got: c.size() });
    }
    let c12 = c.get(0, 1);
    let c66 = c.get(5, 5);
    let den = c12 + c66;
    if den == 0.0 {
        return Err(Error::invalid("C12 + C66 vanishes"));
    }
    Ok((c66 * (3.0 * c12 + 2.0 * c66) / den, c12 / (2.0 * den)))
}

/// Plane strain stiffness (11, 22, 12) of an isotropic material.
pub fn plane_strain_reduce(e: f64, nu: f64) -> Result<VoigtStiffness> {
    if !(nu < 0.5) || !(nu > -1.0) || !(e > 0.0) {
        return Err(Error::invalid(format!("plane strain needs E > 0 and -1 < nu < 0.5, got E={e}, nu={nu}")));
    }
    let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mut m = DMatrix::zeros(3, 3);
    m[(0, 0)] = f * (1.0 - nu);
    m[(1, 1)] = f * (1.0 - nu);
    m[(0, 1)] = f * nu;
    m[(1, 0)] = f * nu;
    m[(2, 2)] = f * (1.0 - 2.0 * nu) / 2.0;
    VoigtStiffness::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Isotropic part from the 4th order tensor: bulk and shear moduli from
    /// the invariants C_iijj and C_ijij.
    fn tensor_oracle(c: &DMatrix<f64>) -> (f64, f64, f64) {
        let voigt = |i: usize, j: usize| match (i.min(j), i.max(j)) {
            (0, 0) => 0,
            (1, 1) => 1,
            (2, 2) => 2,
            (1, 2) => 3,
            (0, 2) => 4,
            _ => 5,
        };
        let mut iijj = 0.0;
        let mut ijij = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                iijj += c[(voigt(i, i), voigt(j, j))];
                ijij += c[(voigt(i, j), voigt(i, j))];
            }
        }
        let k = iijj / 9.0;
        let mu = (ijij - iijj / 3.0) / 10.0;
        (k + 4.0 * mu / 3.0, k - 2.0 * mu / 3.0, mu)
    }

    fn random_sym(vals: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(6, 6);
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                m[(i, j)] = vals[k];
                m[(j, i)] = vals[k];
                k += 1;
            }
        }
        m
    }

    #[test]
    fn basis_is_orthonormal() {
        let b = ProjectionBasis::new();
        assert!((b.inner(&b.a1, &b.a1) - 1.0).abs() < 1e-12);
        assert!((b.inner(&b.a2, &b.a2) - 1.0).abs() < 1e-12);
        assert!(b.inner(&b.a1, &b.a2).abs() < 1e-12);
    }

    #[test]
    fn identity_projection() {
        let p = project_matrix(&DMatrix::identity(6, 6)).unwrap();
        assert!((p[(0, 0)] - 1.4).abs() < 1e-12);
        assert!((p[(0, 1)] + 0.2).abs() < 1e-12);
        assert!((p[(3, 3)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn isotropic_input_is_fixed() {
        let c = VoigtStiffness::isotropic(210.0, 0.3).unwrap();
        let p = project_isotropic(&c).unwrap();
        assert_relative_eq!(p.matrix(), c.matrix(), max_relative = 1e-12);
        assert!(relative_anisotropy(&c).unwrap() < 1e-12);
    }

    #[test]
    fn diag_anisotropy_matches_direct_formula() {
        let mut m = DMatrix::identity(6, 6);
        m[(0, 0)] = 10.0;
        let c = VoigtStiffness::new(m.clone()).unwrap();
        let (c11, c12, c44) = tensor_oracle(&m);
        let mut r2 = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let iso = if i < 3 && j < 3 {
                    if i == j {
                        c11
                    } else {
                        c12
                    }
                } else if i == j {
                    c44
                } else {
                    0.0
                };
                r2 += (m[(i, j)] - iso).powi(2);
            }
        }
        let expected = r2.sqrt() / 105f64.sqrt();
        assert!((relative_anisotropy(&c).unwrap() - expected).abs() < 1e-12);
        assert!(expected > 0.0);
    }

    #[test]
    fn effective_moduli_examples() {
        let c = VoigtStiffness::from_matrix_unchecked(isotropic_matrix(3.0, 1.0, 1.0));
        let (e, nu) = effective_moduli(&c).unwrap();
        assert!((e - 2.5).abs() < 1e-15 && (nu - 0.25).abs() < 1e-15);
        let c = VoigtStiffness::from_matrix_unchecked(isotropic_matrix(4.0, 2.0, 1.0));
        let (e, nu) = effective_moduli(&c).unwrap();
        assert!((e - 8.0 / 3.0).abs() < 1e-15 && (nu - 1.0 / 3.0).abs() < 1e-15);
        let (e, nu) = effective_moduli(&VoigtStiffness::isotropic(123.0, 0.27).unwrap()).unwrap();
        assert_relative_eq!(e, 123.0, max_relative = 1e-12);
        assert_relative_eq!(nu, 0.27, max_relative = 1e-12);
    }

    #[test]
    fn plane_strain_examples() {
        let p = plane_strain_reduce(2.0, 0.0).unwrap();
        assert_eq!(p.get(0, 0), 2.0);
        assert_eq!(p.get(2, 2), 1.0);
        assert_eq!(p.get(0, 1), 0.0);
        let p = plane_strain_reduce(1.0, 0.3).unwrap();
        assert!((p.get(0, 0) - 1.346153846153846).abs() < 1e-12);
        assert!((p.get(0, 1) - 0.576923076923077).abs() < 1e-12);
        let sub = VoigtStiffness::isotropic(1.0, 0.3).unwrap().plane_strain().unwrap();
        assert_relative_eq!(p.matrix(), sub.matrix(), epsilon = 1e-12);
        assert!(plane_strain_reduce(1.0, 0.5).is_err());
    }

    #[test]
    fn plain_frobenius_is_not_the_projection_metric() {
        // the projection minimizes the tensorial norm; in plain Voigt
        // Frobenius norm a different isotropic matrix can be closer
        let c = DMatrix::<f64>::identity(6, 6);
        let p = project_matrix(&c).unwrap();
        let m = isotropic_matrix(1.2, 0.0, 0.6);
        assert!((&c - &m).norm() < (&c - &p).norm());
    }

    proptest! {
        #[test]
        fn projection_properties(
            v1 in proptest::collection::vec(-1.0f64..1.0, 21),
            v2 in proptest::collection::vec(-1.0f64..1.0, 21),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            m in (-2.0f64..2.0, -2.0f64..2.0),
        ) {
            let c1 = random_sym(&v1);
            let c2 = random_sym(&v2);
            let p1 = project_matrix(&c1).unwrap();
            // pattern and isotropy condition
            prop_assert!((p1[(0, 0)] - p1[(0, 1)] - 2.0 * p1[(3, 3)]).abs() < 1e-12);
            prop_assert_eq!(p1[(0, 3)], 0.0);
            // independent tensor oracle
            let (o11, o12, o44) = tensor_oracle(&c1);
            prop_assert!((p1[(0, 0)] - o11).abs() < 1e-12);
            prop_assert!((p1[(0, 1)] - o12).abs() < 1e-12);
            prop_assert!((p1[(3, 3)] - o44).abs() < 1e-12);
            // idempotence
            let pp = project_matrix(&p1).unwrap();
            prop_assert!((&pp - &p1).amax() < 1e-12);
            // linearity
            let lhs = project_matrix(&(&c1 * alpha + &c2 * beta)).unwrap();
            let rhs = &p1 * alpha + project_matrix(&c2).unwrap() * beta;
            prop_assert!((lhs - rhs).amax() < 1e-12);
            // minimality in the tensorial norm against a random isotropic M
            let b = ProjectionBasis::new();
            let miso = isotropic_matrix(m.0 + 2.0 * m.1, m.0, m.1);
            let d_p = &c1 - &p1;
            let d_m = &c1 - &miso;
            prop_assert!(b.inner(&d_p, &d_p) <= b.inner(&d_m, &d_m) + 1e-12);
        }
    }
}
