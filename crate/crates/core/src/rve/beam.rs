//! Euler-Bernoulli space frame element.

use nalgebra::{SMatrix, Vector3};

use super::BeamMaterial;
use crate::error::{Error, Result};

pub type Mat12 = SMatrix<f64, 12, 12>;

/// Element stiffness in the local frame (axis along x), dofs ordered
/// (u, v, w, rx, ry, rz) at each end.
pub fn local_stiffness(mat: &BeamMaterial, len: f64) -> Mat12 {
    let e = mat.youngs_modulus;
    let ea = e * mat.area() / len;
    let gj = mat.shear_modulus() * mat.torsion_constant() / len;
    let ei = e * mat.inertia();
    let (k1, k2, k3, k4) = (12.0 * ei / len.powi(3), 6.0 * ei / len.powi(2), 4.0 * ei / len, 2.0 * ei / len);
    let mut k = Mat12::zeros();
    let mut set = |i: usize, j: usize, v: f64| {
        k[(i, j)] = v;
        k[(j, i)] = v;
    };
    set(0, 0, ea);
    set(6, 6, ea);
    set(0, 6, -ea);
    set(3, 3, gj);
    set(9, 9, gj);
    set(3, 9, -gj);
    // bending in the x-y plane: v, rz
    set(1, 1, k1);
    set(7, 7, k1);
    set(1, 7, -k1);
    set(1, 5, k2);
    set(1, 11, k2);
    set(5, 7, -k2);
    set(7, 11, -k2);
    set(5, 5, k3);
    set(11, 11, k3);
    set(5, 11, k4);
    // bending in the x-z plane: w, ry
    set(2, 2, k1);
    set(8, 8, k1);
    set(2, 8, -k1);
    set(2, 4, -k2);
    set(2, 10, -k2);
    set(4, 8, k2);
    set(8, 10, k2);
    set(4, 4, k3);
    set(10, 10, k3);
    set(4, 10, k4);
    k
}

/// Rows are the local axes expressed in global coordinates.
pub fn local_frame(xa: &[f64; 3], xb: &[f64; 3]) -> Result<(f64, [[f64; 3]; 3])> {
    let d = Vector3::new(xb[0] - xa[0], xb[1] - xa[1], xb[2] - xa[2]);
    let len = d.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::invalid("zero-length strut"));
    }
    let e1 = d / len;
    let k = (0..3).min_by(|&i, &j| e1[i].abs().partial_cmp(&e1[j].abs()).unwrap()).unwrap();
    let mut helper = Vector3::zeros();
    helper[k] = 1.0;
    let e2 = (helper - e1 * e1.dot(&helper)).normalize();
    let e3 = e1.cross(&e2);
    Ok((len, [[e1.x, e1.y, e1.z], [e2.x, e2.y, e2.z], [e3.x, e3.y, e3.z]]))
}

/// Global 12x12 stiffness of the strut from `xa` to `xb`, scaled by `weight`.
pub fn beam_element_stiffness(mat: &BeamMaterial, xa: &[f64; 3], xb: &[f64; 3], weight: f64) -> Result<Mat12> {
    let (len, r) = local_frame(xa, xb)?;
    let kl = local_stiffness(mat, len);
    let mut t = Mat12::zeros();
    for blk in 0..4 {
        for i in 0..3 {
            for j in 0..3 {
                t[(3 * blk + i, 3 * blk + j)] = r[i][j];
            }
        }
    }
    Ok(t.transpose() * kl * t * weight)
}
