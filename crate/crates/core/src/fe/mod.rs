//! Structured-grid linear elasticity: bilinear quads (plane strain) and
//! trilinear hexahedra with full Gauss quadrature.

mod assembly;
mod element;

pub use assembly::{assemble_and_solve, compliance, element_energies, Assembler, LinearSystem, SolverKind};
pub use element::{element_stiffness, ElementKernel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletBc {
    pub node: usize,
    pub dof: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodalLoad {
    pub node: usize,
    pub dof: usize,
    pub value: f64,
}

/// Uniform grid of `n[0] x n[1] (x n[2])` elements on a box anchored at the
/// origin. Elements and nodes are numbered x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    dim: usize,
    n: [usize; 3],
    size: [f64; 3],
    active: Vec<bool>,
    pub dirichlet: Vec<DirichletBc>,
    pub loads: Vec<NodalLoad>,
}

impl GridModel {
    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::build(2, [nx, ny, 1], [lx, ly, 1.0])
    }

    pub fn new_3d(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, lz: f64) -> Result<Self> {
        Self::build(3, [nx, ny, nz], [lx, ly, lz])
    }

    fn build(dim: usize, n: [usize; 3], size: [f64; 3]) -> Result<Self> {
        if n.contains(&0) {
            return Err(Error::invalid(format!("element counts must be positive, got {n:?}")));
        }
        if size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("domain lengths must be positive, got {size:?}")));
        }
        let ne = n[0] * n[1] * n[2];
        Ok(GridModel { dim, n, size, active: vec![true; ne], dirichlet: vec![], loads: vec![] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> [usize; 3] {
        self.n
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.size
    }

    pub fn element_size(&self) -> [f64; 3] {
        let mut h = [1.0; 3];
        for k in 0..self.dim {
            h[k] = self.size[k] / self.n[k] as f64;
        }
        h
    }

    pub fn n_elements(&self) -> usize {
        self.active.len()
    }

    fn node_counts(&self) -> [usize; 3] {
        let mut c = [1; 3];
        for k in 0..self.dim {
            c[k] = self.n[k] + 1;
        }
        c
    }

    pub fn n_nodes(&self) -> usize {
        self.node_counts().iter().product()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes() * self.dim
    }

    pub fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let c = self.node_counts();
        i + c[0] * (j + c[1] * k)
    }

    pub fn node_ijk(&self, node: usize) -> [usize; 3] {
        let c = self.node_counts();
        [node % c[0], (node / c[0]) % c[1], node / (c[0] * c[1])]
    }

    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let ijk = self.node_ijk(node);
        let h = self.element_size();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = ijk[k] as f64 * h[k];
        }
        x
    }

    pub fn element_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn element_ijk(&self, e: usize) -> [usize; 3] {
        [e % self.n[0], (e / self.n[0]) % self.n[1], e / (self.n[0] * self.n[1])]
    }

    /// Node numbers of element `e`, counter-clockwise on the bottom face, then
    /// the top face in 3D.
    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let [i, j, k] = self.element_ijk(e);
        let quad = [(0, 0), (1, 0), (1, 1), (0, 1)];
        let layers = if self.dim == 3 { 2 } else { 1 };
        let mut out = Vec::with_capacity(4 * layers);
        for dk in 0..layers {
            for &(di, dj) in &quad {
                out.push(self.node_index(i + di, j + dj, k + dk));
            }
        }
        out
    }

    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        self.element_nodes(e).into_iter().flat_map(|nd| (0..self.dim).map(move |d| nd * self.dim + d)).collect()
    }

    pub fn element_center(&self, e: usize) -> [f64; 3] {
        let ijk = self.element_ijk(e);
        let h = self.element_size();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = (ijk[k] as f64 + 0.5) * h[k];
        }
        x
    }

    /// Area in 2D (unit thickness), volume in 3D.
    pub fn element_volume(&self) -> f64 {
        self.element_size()[..self.dim].iter().product()
    }

    pub fn is_active(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn set_active_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.n_elements() {
            return Err(Error::DimensionMismatch { expected: self.n_elements(), got: mask.len() });
        }
        self.active = mask;
        Ok(())
    }

    pub fn fix(&mut self, node: usize, dof: usize, value: f64) {
        self.dirichlet.push(DirichletBc { node, dof, value });
    }

    pub fn fix_node(&mut self, node: usize) {
        for d in 0..self.dim {
            self.fix(node, d, 0.0);
        }
    }

    pub fn add_load(&mut self, node: usize, dof: usize, value: f64) {
        self.loads.push(NodalLoad { node, dof, value });
    }

    /// Nodes whose coordinates satisfy `pred`.
    pub fn nodes_where(&self, pred: impl Fn([f64; 3]) -> bool) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&nd| pred(self.node_coords(nd))).collect()
    }

    pub fn nearest_node(&self, x: [f64; 3]) -> usize {
        let h = self.element_size();
        let c = self.node_counts();
        let mut ijk = [0usize; 3];
        for k in 0..self.dim {
            ijk[k] = ((x[k] / h[k]).round().max(0.0) as usize).min(c[k] - 1);
        }
        self.node_index(ijk[0], ijk[1], ijk[2])
    }

    /// Consistent nodal forces of a uniform traction acting on the
    /// rectangle `lo..hi` of the boundary face `coord[axis] = lengths[axis]`
    /// (or 0 when `at_max` is false). `lo`/`hi` give the two in-face
    /// coordinates in increasing axis order. 3D only.
    pub fn add_face_traction(&mut self, axis: usize, at_max: bool, lo: [f64; 2], hi: [f64; 2], traction: [f64; 3]) -> Result<()> {
        if self.dim != 3 || axis > 2 {
            return Err(Error::invalid("face tractions need a 3D grid and axis < 3"));
        }
        let tang: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
        let h = self.element_size();
        let layer = if at_max { self.n[axis] } else { 0 };
        let mut forces = std::collections::BTreeMap::<usize, [f64; 3]>::new();
        for a in 0..self.n[tang[0]] {
            let (ia, wa) = overlap_weights(a, h[tang[0]], lo[0], hi[0]);
            if wa == [0.0, 0.0] {
                continue;
            }
            for b in 0..self.n[tang[1]] {
                let (ib, wb) = overlap_weights(b, h[tang[1]], lo[1], hi[1]);
                if wb == [0.0, 0.0] {
                    continue;
                }
                for (sa, &na) in ia.iter().enumerate() {
                    for (sb, &nb) in ib.iter().enumerate() {
                        let mut ijk = [0; 3];
                        ijk[axis] = layer;
                        ijk[tang[0]] = na;
                        ijk[tang[1]] = nb;
                        let node = self.node_index(ijk[0], ijk[1], ijk[2]);
                        let f = forces.entry(node).or_insert([0.0; 3]);
                        for d in 0..3 {
                            f[d] += traction[d] * wa[sa] * wb[sb];
                        }
                    }
                }
            }
        }
        if forces.is_empty() {
            return Err(Error::invalid("traction patch does not overlap the face"));
        }
        for (node, f) in forces {
            for (d, &v) in f.iter().enumerate() {
                if v != 0.0 {
                    self.add_load(node, d, v);
                }
            }
        }
        Ok(())
    }

    /// Total active volume.
    pub fn active_volume(&self) -> f64 {
        self.active.iter().filter(|&&a| a).count() as f64 * self.element_volume()
    }

    pub fn validate(&self) -> Result<()> {
        let nn = self.n_nodes();
        if !self.active.iter().any(|&a| a) {
            return Err(Error::invalid("grid has no active elements"));
        }
        let mut seen = std::collections::BTreeMap::new();
        for bc in &self.dirichlet {
            if bc.node >= nn || bc.dof >= self.dim {
                return Err(Error::invalid(format!("Dirichlet condition out of range: {bc:?}")));
            }
            if !bc.value.is_finite() {
                return Err(Error::NonFinite("Dirichlet value".into()));
            }
            if let Some(prev) = seen.insert((bc.node, bc.dof), bc.value) {
                if prev != bc.value {
                    return Err(Error::invalid(format!("conflicting Dirichlet values on node {} dof {}", bc.node, bc.dof)));
                }
            }
        }
        for l in &self.loads {
            if l.node >= nn || l.dof >= self.dim {
                return Err(Error::invalid(format!("load out of range: {l:?}")));
            }
            if !l.value.is_finite() {
                return Err(Error::NonFinite("nodal load".into()));
            }
        }
        Ok(())
    }

    /// Load vector assembled from the nodal loads.
    pub fn load_vector(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.n_dofs()];
        for l in &self.loads {
            f[l.node * self.dim + l.dof] += l.value;
        }
        f
    }
}

/// Node indices and shape function integrals of the 1D element `a` of width
/// `h` over its intersection with `[lo, hi]`.
fn overlap_weights(a: usize, h: f64, lo: f64, hi: f64) -> ([usize; 2], [f64; 2]) {
    let x0 = a as f64 * h;
    let s = lo.max(x0);
    let t = hi.min(x0 + h);
    if t <= s {
        return ([a, a + 1], [0.0, 0.0]);
    }
    let w1 = ((t - x0).powi(2) - (s - x0).powi(2)) / (2.0 * h);
    ([a, a + 1], [(t - s) - w1, w1])
}
