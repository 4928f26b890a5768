use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Par, Side};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ElementKernel, GridModel};
use crate::error::{ensure_finite, Error, Result};
use crate::voigt::VoigtStiffness;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum SolverKind {
    /// Sparse Cholesky, symbolic analysis reused across solves.
    #[default]
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    Pcg { tol: f64, max_iter: usize },
}

#[derive(Debug)]
struct Pattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl Pattern {
    fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()].binary_search(&row).ok().map(|k| range.start + k)
    }
}

/// Assembled system after Dirichlet elimination, with its solution.
///
/// The matrix keeps the full symmetric pattern. Rows and columns of
/// constrained dofs are zero except for the retained diagonal.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
    pub f: Vec<f64>,
    pub u: Vec<f64>,
}

impl LinearSystem {
    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matrix(&self) -> SparseColMatRef<'_, usize, f64> {
        let p = &*self.pattern;
        SparseColMatRef::new(SymbolicSparseColMatRef::new_checked(p.n, p.n, &p.col_ptr, None, &p.row_idx), &self.values)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.position(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.pattern, &self.values, x)
    }

    /// `||K u - f|| / ||f||` (absolute when f vanishes).
    pub fn relative_residual(&self) -> f64 {
        let ku = self.matvec(&self.u);
        let r: f64 = ku.iter().zip(&self.f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let fnorm = norm(&self.f);
        if fnorm > 0.0 {
            r / fnorm
        } else {
            r
        }
    }
}

/// `f . u`, the work of the external loads.
pub fn compliance(sys: &LinearSystem) -> f64 {
    sys.f.iter().zip(&sys.u).map(|(a, b)| a * b).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn matvec(p: &Pattern, values: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p.n];
    for col in 0..p.n {
        let xc = x[col];
        if xc == 0.0 {
            continue;
        }
        for k in p.col_ptr[col]..p.col_ptr[col + 1] {
            y[p.row_idx[k]] += values[k] * xc;
        }
    }
    y
}

/// Reusable assembly and solution machinery for a fixed grid, support and
/// load configuration. Only the constitutive matrices change between solves.
pub struct Assembler {
    dim: usize,
    kernel: ElementKernel,
    active: Vec<usize>,
    elem_dofs: Vec<Vec<usize>>,
    pattern: Arc<Pattern>,
    constrained: Vec<bool>,
    prescribed: Vec<f64>,
    orphan: Vec<bool>,
    loads: Vec<f64>,
    solver: SolverKind,
    symbolic: Option<SymbolicLlt<usize>>,
    last_u: Option<Vec<f64>>,
}

impl Assembler {
    pub fn new(grid: &GridModel, solver: SolverKind) -> Result<Self> {
        grid.validate()?;
        faer::set_global_parallelism(Par::Seq);
        let dim = grid.dim();
        let ndof = grid.n_dofs();
        let kernel = ElementKernel::for_grid(grid)?;
        let active: Vec<usize> = (0..grid.n_elements()).filter(|&e| grid.is_active(e)).collect();
        let elem_dofs: Vec<Vec<usize>> = active.iter().map(|&e| grid.element_dofs(e)).collect();

        let mut touched = vec![false; ndof];
        for dofs in &elem_dofs {
            for &d in dofs {
                touched[d] = true;
            }
        }
        let orphan: Vec<bool> = touched.iter().map(|t| !t).collect();
        let mut constrained = orphan.clone();
        let mut prescribed = vec![0.0; ndof];
        for bc in &grid.dirichlet {
            let d = bc.node * dim + bc.dof;
            constrained[d] = true;
            prescribed[d] = if orphan[d] { 0.0 } else { bc.value };
        }
        check_rigid_modes(grid, &touched, &constrained)?;

        let mut cols: Vec<Vec<usize>> = (0..ndof).map(|d| vec![d]).collect();
        for dofs in &elem_dofs {
            for &q in dofs {
                if constrained[q] {
                    continue;
                }
                for &p in dofs {
                    if !constrained[p] {
                        cols[q].push(p);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(ndof + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut c in cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(&c);
            col_ptr.push(row_idx.len());
        }
        let pattern = Arc::new(Pattern { n: ndof, col_ptr, row_idx });

        let mut loads = grid.load_vector();
        for d in 0..ndof {
            if orphan[d] && loads[d] != 0.0 {
                log::warn!("load on dof {d} not attached to any active element is ignored");
                loads[d] = 0.0;
            }
        }
        Ok(Assembler {
            dim,
            kernel,
            active,
            elem_dofs,
            pattern,
            constrained,
            prescribed,
            orphan,
            loads,
            solver,
            symbolic: None,
            last_u: None,
        })
    }

    pub fn kernel(&self) -> &ElementKernel {
        &self.kernel
    }

    pub fn n_dofs(&self) -> usize {
        self.pattern.n
    }

    pub fn active_elements(&self) -> &[usize] {
        &self.active
    }

    /// Assembles with one constitutive matrix per grid element (inactive
    /// entries are ignored) and solves.
    pub fn solve(&mut self, tensors: &[DMatrix<f64>]) -> Result<LinearSystem> {
        let nstrain = self.kernel.nstrain();
        let n_elem_total = self.active.iter().max().map_or(0, |&e| e + 1);
        if tensors.len() < n_elem_total {
            return Err(Error::DimensionMismatch { expected: n_elem_total, got: tensors.len() });
        }
        let (values, f) = self.assemble(|e| &tensors[e], nstrain)?;
        let u = if f.iter().all(|&v| v == 0.0) {
            vec![0.0; f.len()]
        } else {
            match self.solver {
                SolverKind::Direct => self.solve_direct(&values, &f)?,
                SolverKind::Pcg { tol, max_iter } => self.solve_pcg(&values, &f, tol, max_iter)?,
            }
        };
        ensure_finite(&u, "displacement solution")?;
        self.last_u = Some(u.clone());
        Ok(LinearSystem { pattern: self.pattern.clone(), values, f, u })
    }

    fn assemble<'a>(&self, tensor: impl Fn(usize) -> &'a DMatrix<f64>, nstrain: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let pat = &*self.pattern;
        let nd = self.kernel.ndof();
        let mut values = vec![0.0; pat.row_idx.len()];
        let mut rhs = self.loads.clone();
        let mut ke = vec![0.0; nd * nd];
        let mut diag = vec![0.0; pat.n];
        for (&e, dofs) in self.active.iter().zip(&self.elem_dofs) {
            let c = tensor(e);
            if c.nrows() != nstrain || c.ncols() != nstrain {
                return Err(Error::DimensionMismatch { expected: nstrain, got: c.nrows() });
            }
            self.kernel.stiffness_into(c, &mut ke);
            for (a, &p) in dofs.iter().enumerate() {
                let row = &ke[a * nd..(a + 1) * nd];
                diag[p] += row[a];
                if self.constrained[p] {
                    continue;
                }
                for (b, &q) in dofs.iter().enumerate() {
                    if !self.constrained[q] {
                        if p != q {
                            let k = pat.position(p, q).expect("pattern entry");
                            values[k] += row[b];
                        }
                    } else if self.prescribed[q] != 0.0 {
                        rhs[p] -= row[b] * self.prescribed[q];
                    }
                }
            }
        }
        for d in 0..pat.n {
            let k = pat.position(d, d).expect("diagonal entry");
            values[k] = if self.orphan[d] { 1.0 } else { diag[d] };
            if self.constrained[d] {
                rhs[d] = values[k] * self.prescribed[d];
            }
        }
        ensure_finite(&values, "stiffness matrix")?;
        Ok((values, rhs))
    }

    fn solve_direct(&mut self, values: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        let pat = &*self.pattern;
        let sym = SymbolicSparseColMatRef::new_checked(pat.n, pat.n, &pat.col_ptr, None, &pat.row_idx);
        let mat = SparseColMatRef::new(sym, values);
        if self.symbolic.is_none() {
            let s = SymbolicLlt::try_new(sym, Side::Lower).map_err(|e| Error::Singular(format!("symbolic analysis failed: {e:?}")))?;
            self.symbolic = Some(s);
        }
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone().unwrap(), mat, Side::Lower).map_err(|e| {
            Error::Singular(format!("stiffness matrix is not positive definite ({e}); check supports and disconnected regions"))
        })?;
        let mut u = f.to_vec();
        llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut u, pat.n, 1));
        crate::simd::clear_upper_state();
        // one step of iterative refinement
        let ku = matvec(pat, values, &u);
        let mut r: Vec<f64> = f.iter().zip(&ku).map(|(a, b)| a - b).collect();
        if norm(&r) > 1e-14 * norm(f) {
            llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut r, pat.n, 1));
            crate::simd::clear_upper_state();
            for (ui, ri) in u.iter_mut().zip(&r) {
                *ui += ri;
            }
        }
        Ok(u)
    }

    fn solve_pcg(&self, values: &[f64], f: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let pat = &*self.pattern;
        let n = pat.n;
        let mut dinv = vec![0.0; n];
        for (d, di) in dinv.iter_mut().enumerate() {
            let v = values[pat.position(d, d).unwrap()];
            if !(v > 0.0) {
                return Err(Error::Singular(format!("non-positive diagonal at dof {d}")));
            }
            *di = 1.0 / v;
        }
        let fnorm = norm(f);
        let mut x = match &self.last_u {
            Some(u) if u.len() == n => u.clone(),
            _ => vec![0.0; n],
        };
        for d in 0..n {
            if self.constrained[d] {
                x[d] = f[d] * dinv[d];
            }
        }
        let ax = matvec(pat, values, &x);
        let mut r: Vec<f64> = f.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..max_iter {
            if norm(&r) <= tol * fnorm {
                return Ok(x);
            }
            let ap = matvec(pat, values, &p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(Error::Singular("conjugate gradients hit a non-positive curvature".into()));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] = r[i] * dinv[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if norm(&r) <= tol * fnorm {
            Ok(x)
        } else {
            Err(Error::NoConvergence(format!(
                "conjugate gradients reached {max_iter} iterations at relative residual {:.3e}",
                norm(&r) / fnorm
            )))
        }
    }

    /// Element displacement vector of grid element `e`.
    pub fn element_displacement(&self, u: &[f64], slot: usize) -> Vec<f64> {
        self.elem_dofs[slot].iter().map(|&d| u[d]).collect()
    }

    /// Strain energy matrices of all active elements, in `active_elements`
    /// order.
    pub fn strain_energy_matrices(&self, u: &[f64]) -> Vec<DMatrix<f64>> {
        use rayon::prelude::*;
        (0..self.active.len()).into_par_iter().map(|slot| self.kernel.strain_energy_matrix(&self.element_displacement(u, slot))).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Element-wise energies `u_e^T K_e u_e` for the given tensors.
pub fn element_energies(grid: &GridModel, tensors: &[VoigtStiffness], u: &[f64]) -> Result<Vec<f64>> {
    let kernel = ElementKernel::for_grid(grid)?;
    (0..grid.n_elements())
        .map(|e| {
            if !grid.is_active(e) {
                return Ok(0.0);
            }
            let ue: Vec<f64> = grid.element_dofs(e).iter().map(|&d| u[d]).collect();
            Ok(tensors[e].contract(&kernel.strain_energy_matrix(&ue)))
        })
        .collect()
}

/// Assembles the global system for per-element tensors, applies the grid's
/// supports and loads, and solves it with the sparse direct solver.
pub fn assemble_and_solve(grid: &GridModel, tensors: &[VoigtStiffness]) -> Result<LinearSystem> {
    if tensors.len() != grid.n_elements() {
        return Err(Error::DimensionMismatch { expected: grid.n_elements(), got: tensors.len() });
    }
    let mats: Vec<DMatrix<f64>> = tensors.iter().map(|c| c.matrix().clone()).collect();
    Assembler::new(grid, SolverKind::Direct)?.solve(&mats)
}

/// Fails when the supports leave a rigid-body motion of the active part of
/// the grid unrestrained.
fn check_rigid_modes(grid: &GridModel, touched: &[bool], constrained: &[bool]) -> Result<()> {
    let dim = grid.dim();
    let l = grid.lengths();
    let scale = l[..dim].iter().cloned().fold(0.0, f64::max);
    let nmodes = if dim == 2 { 3 } else { 6 };
    let mut gram = DMatrix::<f64>::zeros(nmodes, nmodes);
    for d in 0..touched.len() {
        if !touched[d] || !constrained[d] {
            continue;
        }
        let node = d / dim;
        let comp = d % dim;
        let x = grid.node_coords(node);
        let y: Vec<f64> = (0..3).map(|k| (x[k] - 0.5 * l[k]) / scale).collect();
        let mut row = vec![0.0; nmodes];
        row[comp] = 1.0;
        if dim == 2 {
            row[2] = if comp == 0 { -y[1] } else { y[0] };
        } else {
            // rotations about x, y, z: omega x y
            match comp {
                0 => {
                    row[4] = y[2];
                    row[5] = -y[1];
                }
                1 => {
                    row[3] = -y[2];
                    row[5] = y[0];
                }
                _ => {
                    row[3] = y[1];
                    row[4] = -y[0];
                }
            }
        }
        for i in 0..nmodes {
            for j in 0..nmodes {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    let eig = gram.symmetric_eigenvalues();
    let top = eig.iter().cloned().fold(0.0, f64::max);
    let free = eig.iter().filter(|&&v| v <= 1e-12 * top.max(1.0)).count();
    if free > 0 {
        return Err(Error::Singular(format!("supports leave {free} rigid-body mode(s) unrestrained")));
    }
    Ok(())
}
