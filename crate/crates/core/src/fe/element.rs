use nalgebra::DMatrix;

use super::GridModel;
use crate::error::{Error, Result};
use crate::voigt::VoigtStiffness;

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Strain-displacement data of the (identical) elements of a uniform grid.
///
/// The stiffness is linear in the constitutive matrix, so the element matrix
/// is kept as a sum of basis matrices `K = sum_ij C_ij K^(ij)`.
#[derive(Debug, Clone)]
pub struct ElementKernel {
    dim: usize,
    nstrain: usize,
    ndof: usize,
    /// (weight * det J, B) per Gauss point
    points: Vec<(f64, DMatrix<f64>)>,
    /// K^(ii) and K^(ij) + K^(ji) for i < j, in `pairs` order
    basis: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
}

impl ElementKernel {
    pub fn new(dim: usize, h: [f64; 3]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("unsupported dimension {dim}")));
        }
        let nnode = 1 << dim;
        let ndof = nnode * dim;
        let nstrain = if dim == 2 { 3 } else { 6 };
        let signs = node_signs(dim);
        let det = h[..dim].iter().product::<f64>() / (nnode as f64);

        let mut points = Vec::new();
        let nz = if dim == 3 { 2 } else { 1 };
        for gz in 0..nz {
            for gy in 0..2 {
                for gx in 0..2 {
                    let xi = [GAUSS[gx], GAUSS[gy], if dim == 3 { GAUSS[gz] } else { 0.0 }];
                    let mut b = DMatrix::zeros(nstrain, ndof);
                    for (a, s) in signs.iter().enumerate() {
                        let mut dn = [0.0; 3];
                        for k in 0..dim {
                            let mut v = s[k] / nnode as f64;
                            for m in 0..dim {
                                if m != k {
                                    v *= 1.0 + s[m] * xi[m];
                                }
                            }
                            dn[k] = v * 2.0 / h[k];
                        }
                        fill_b(&mut b, a, dim, dn);
                    }
                    points.push((det, b));
                }
            }
        }

        let mut pairs = Vec::new();
        for i in 0..nstrain {
            pairs.push((i, i));
        }
        for i in 0..nstrain {
            for j in i + 1..nstrain {
                pairs.push((i, j));
            }
        }
        let basis = pairs
            .iter()
            .map(|&(i, j)| {
                let mut k = vec![0.0; ndof * ndof];
                for (w, b) in &points {
                    for p in 0..ndof {
                        for q in 0..ndof {
                            let mut v = b[(i, p)] * b[(j, q)];
                            if i != j {
                                v += b[(j, p)] * b[(i, q)];
                            }
                            k[p * ndof + q] += w * v;
                        }
                    }
                }
                k
            })
            .collect();
        Ok(ElementKernel { dim, nstrain, ndof, points, basis, pairs })
    }

    pub fn for_grid(grid: &GridModel) -> Result<Self> {
        Self::new(grid.dim(), grid.element_size())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn nstrain(&self) -> usize {
        self.nstrain
    }

    /// Element matrix for constitutive matrix `c`, written row-major into `out`.
    pub fn stiffness_into(&self, c: &DMatrix<f64>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&(i, j), k) in self.pairs.iter().zip(&self.basis) {
            let cij = c[(i, j)];
            if cij == 0.0 {
                continue;
            }
            for (o, kv) in out.iter_mut().zip(k) {
                *o += cij * kv;
            }
        }
    }

    pub fn stiffness(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = vec![0.0; self.ndof * self.ndof];
        self.stiffness_into(c, &mut out);
        DMatrix::from_row_slice(self.ndof, self.ndof, &out)
    }

    /// Element matrix by direct quadrature of B^T C B.
    pub fn stiffness_by_quadrature(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.ndof, self.ndof);
        for (w, b) in &self.points {
            k += b.transpose() * c * b * *w;
        }
        k
    }

    /// Strain energy matrix `S = sum_g w eps eps^T` of the element displacement
    /// `ue`, so that `ue^T K(C) ue = C : S`.
    pub fn strain_energy_matrix(&self, ue: &[f64]) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.nstrain, self.nstrain);
        let mut eps = vec![0.0; self.nstrain];
        for (w, b) in &self.points {
            for (i, e) in eps.iter_mut().enumerate() {
                *e = (0..self.ndof).map(|p| b[(i, p)] * ue[p]).sum();
            }
            for i in 0..self.nstrain {
                for j in 0..self.nstrain {
                    s[(i, j)] += w * eps[i] * eps[j];
                }
            }
        }
        s
    }
}

/// Element stiffness matrix of element `e` of `grid` for the tensor `c`.
pub fn element_stiffness(grid: &GridModel, e: usize, c: &VoigtStiffness) -> Result<DMatrix<f64>> {
    if e >= grid.n_elements() {
        return Err(Error::invalid(format!("element {e} out of range")));
    }
    let nstrain = if grid.dim() == 2 { 3 } else { 6 };
    if c.size() != nstrain {
        return Err(Error::DimensionMismatch { expected: nstrain, got: c.size() });
    }
    Ok(ElementKernel::for_grid(grid)?.stiffness_by_quadrature(c.matrix()))
}

/// Natural coordinates (+-1) of the element nodes, matching
/// `GridModel::element_nodes`.
fn node_signs(dim: usize) -> Vec<[f64; 3]> {
    let quad = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let layers: &[f64] = if dim == 3 { &[-1.0, 1.0] } else { &[0.0] };
    layers.iter().flat_map(|&z| quad.iter().map(move |&(x, y)| [x, y, z])).collect()
}

fn fill_b(b: &mut DMatrix<f64>, a: usize, dim: usize, dn: [f64; 3]) {
    if dim == 2 {
        let c = 2 * a;
        b[(0, c)] = dn[0];
        b[(1, c + 1)] = dn[1];
        b[(2, c)] = dn[1];
        b[(2, c + 1)] = dn[0];
    } else {
        let c = 3 * a;
        b[(0, c)] = dn[0];
        b[(1, c + 1)] = dn[1];
        b[(2, c + 2)] = dn[2];
        b[(3, c + 1)] = dn[2];
        b[(3, c + 2)] = dn[1];
        b[(4, c)] = dn[2];
        b[(4, c + 2)] = dn[0];
        b[(5, c)] = dn[1];
        b[(5, c + 1)] = dn[0];
    }
}
