//! Effective stiffness of a periodic lattice from six unit load cases.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::beam::{beam_element_stiffness, Mat12};
use super::periodic::{apply_periodic_bcs, PeriodicConstraints};
use super::{BeamMaterial, RveModel};
use crate::error::{ensure_finite, Error, Result};
use crate::voigt::{VoigtStiffness, VOIGT_PAIRS};

/// Relative asymmetry of the raw stiffness above which a warning is issued.
pub const ASYMMETRY_WARN: f64 = 0.05;

/// Imposed macroscopic strain and the resulting volume-averaged stress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub strain: [[f64; 3]; 3],
    pub stress: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadCaseReport {
    pub state: MacroState,
    /// `|S - S^T| / |S|` of the averaged stress
    pub stress_asymmetry: f64,
    /// `E : S`
    pub macro_work: f64,
    /// `u^T K u / V`
    pub micro_energy: f64,
}

impl LoadCaseReport {
    /// Relative violation of the Hill-Mandel condition.
    pub fn hill_error(&self) -> f64 {
        (self.macro_work - self.micro_energy).abs() / self.micro_energy.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationReport {
    /// symmetrized effective stiffness
    pub stiffness: VoigtStiffness,
    /// raw column-by-column stiffness before symmetrization
    pub raw: Vec<Vec<f64>>,
    /// `|C - C^T| / |C|` of the raw stiffness
    pub asymmetry: f64,
    pub cases: Vec<LoadCaseReport>,
    pub warnings: Vec<String>,
}

/// Effective 6x6 stiffness with unit macroscopic strains.
pub fn homogenize(rve: &RveModel, mat: &BeamMaterial) -> Result<VoigtStiffness> {
    Ok(homogenize_with(rve, mat, 1.0)?.stiffness)
}

struct ReducedSystem {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl ReducedSystem {
    fn position(&self, row: usize, col: usize) -> usize {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        range.start + self.row_idx[range].binary_search(&row).expect("pattern entry")
    }
}

fn case_strain(case: usize, eps: f64) -> [[f64; 3]; 3] {
    let (i, j) = VOIGT_PAIRS[case];
    let mut e = [[0.0; 3]; 3];
    e[i][j] = eps;
    e[j][i] = eps;
    e
}

fn rel_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / n
    }
}

/// Solves the six load cases with strain magnitude `eps_star` and returns the
/// stiffness with its diagnostics.
pub fn homogenize_with(rve: &RveModel, mat: &BeamMaterial, eps_star: f64) -> Result<HomogenizationReport> {
    if !(eps_star > 0.0) || !eps_star.is_finite() {
        return Err(Error::invalid(format!("load case strain must be positive, got {eps_star}")));
    }
    let pc = apply_periodic_bcs(rve, [[0.0; 3]; 3])?;
    let nn = rve.nodes.len();

    // reduced dof numbering over the masters
    let mut dof = vec![[usize::MAX; 6]; nn];
    let mut n = 0;
    for m in pc.masters() {
        for k in 0..6 {
            if m == pc.pinned && k < 3 {
                continue;
            }
            dof[m][k] = n;
            n += 1;
        }
    }
    let map = |node: usize, k: usize| dof[pc.master[node]][k];

    let kes: Vec<Mat12> = rve
        .struts
        .iter()
        .map(|s| beam_element_stiffness(mat, &rve.nodes[s.nodes[0]], &rve.nodes[s.nodes[1]], s.weight))
        .collect::<Result<_>>()?;

    let mut sys = reduced_pattern(rve, &map, n);
    for (s, ke) in rve.struts.iter().zip(&kes) {
        let idx: Vec<usize> = (0..12).map(|a| map(s.nodes[a / 6], a % 6)).collect();
        for (a, &p) in idx.iter().enumerate() {
            if p == usize::MAX {
                continue;
            }
            for (b, &q) in idx.iter().enumerate() {
                if q != usize::MAX {
                    let k = sys.position(p, q);
                    sys.values[k] += ke[(a, b)];
                }
            }
        }
    }
    ensure_finite(&sys.values, "lattice stiffness")?;

    // right-hand sides: -K g with g the affine jump field of each case
    let cases: Vec<PeriodicConstraints> = (0..6).map(|c| PeriodicConstraints { strain: case_strain(c, eps_star), ..pc.clone() }).collect();
    let mut rhs = vec![0.0; n * 6];
    for (c, case) in cases.iter().enumerate() {
        let col = &mut rhs[c * n..(c + 1) * n];
        for (s, ke) in rve.struts.iter().zip(&kes) {
            let g = affine_part(case, s.nodes);
            for a in 0..12 {
                let p = map(s.nodes[a / 6], a % 6);
                if p == usize::MAX {
                    continue;
                }
                col[p] -= (0..12).map(|b| ke[(a, b)] * g[b]).sum::<f64>();
            }
        }
    }

    let sym = SymbolicSparseColMatRef::new_checked(n, n, &sys.col_ptr, None, &sys.row_idx);
    let kmat = SparseColMatRef::new(sym, &sys.values);
    let symbolic = SymbolicLlt::try_new(sym, Side::Lower).map_err(|e| Error::Singular(format!("symbolic analysis failed: {e:?}")))?;
    let llt = Llt::try_new_with_symbolic(symbolic, kmat, Side::Lower)
        .map_err(|e| Error::Singular(format!("lattice stiffness is not positive definite ({e}); is the lattice connected?")))?;
    let mut sol = rhs.clone();
    llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut sol, n, 6));
    crate::simd::clear_upper_state();
    ensure_finite(&sol, "lattice displacements")?;

    let volume = rve.volume();
    let mut raw = DMatrix::zeros(6, 6);
    let mut reports = Vec::with_capacity(6);
    for (c, case) in cases.iter().enumerate() {
        let red = &sol[c * n..(c + 1) * n];
        let disp = |node: usize, k: usize| {
            let p = map(node, k);
            let base = if p == usize::MAX { 0.0 } else { red[p] };
            if k < 3 {
                base + case.jump(node)[k]
            } else {
                base
            }
        };
        let mut force = vec![[0.0; 3]; nn];
        let mut energy = 0.0;
        for (s, ke) in rve.struts.iter().zip(&kes) {
            let ue: Vec<f64> = (0..12).map(|a| disp(s.nodes[a / 6], a % 6)).collect();
            for a in 0..12 {
                let fa: f64 = (0..12).map(|b| ke[(a, b)] * ue[b]).sum();
                energy += ue[a] * fa;
                if a % 6 < 3 {
                    force[s.nodes[a / 6]][a % 6] += fa;
                }
            }
        }
        let mut stress = [[0.0; 3]; 3];
        for node in (0..nn).filter(|&k| rve.is_boundary_node(k)) {
            let x = rve.nodes[node];
            for i in 0..3 {
                for j in 0..3 {
                    stress[i][j] += force[node][i] * x[j] / volume;
                }
            }
        }
        let smat = DMatrix::from_fn(3, 3, |i, j| stress[i][j]);
        let macro_work: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| case.strain[i][j] * stress[i][j]).sum();
        let scale = if c < 3 { eps_star } else { 2.0 * eps_star };
        for (r, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            raw[(r, c)] = 0.5 * (stress[i][j] + stress[j][i]) / scale;
        }
        reports.push(LoadCaseReport {
            state: MacroState { strain: case.strain, stress },
            stress_asymmetry: rel_asymmetry(&smat),
            macro_work,
            micro_energy: energy / volume,
        });
    }
    ensure_finite(raw.as_slice(), "effective stiffness")?;

    let asymmetry = rel_asymmetry(&raw);
    let mut warnings = Vec::new();
    if asymmetry > ASYMMETRY_WARN {
        let msg = format!("effective stiffness asymmetry {:.2}% exceeds {:.0}%", 100.0 * asymmetry, 100.0 * ASYMMETRY_WARN);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let stiffness =
        VoigtStiffness::new((&raw + raw.transpose()) * 0.5).map_err(|e| Error::Singular(format!("effective stiffness: {e}")))?;
    Ok(HomogenizationReport {
        stiffness,
        raw: (0..6).map(|i| (0..6).map(|j| raw[(i, j)]).collect()).collect(),
        asymmetry,
        cases: reports,
        warnings,
    })
}

fn affine_part(case: &PeriodicConstraints, nodes: [usize; 2]) -> [f64; 12] {
    let mut g = [0.0; 12];
    for (e, &node) in nodes.iter().enumerate() {
        let j = case.jump(node);
        g[6 * e..6 * e + 3].copy_from_slice(&j);
    }
    g
}

fn reduced_pattern(rve: &RveModel, map: &impl Fn(usize, usize) -> usize, n: usize) -> ReducedSystem {
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in &rve.struts {
        let idx: Vec<usize> = (0..12).map(|a| map(s.nodes[a / 6], a % 6)).filter(|&p| p != usize::MAX).collect();
        for &q in &idx {
            cols[q].extend_from_slice(&idx);
        }
    }
    let mut col_ptr = vec![0];
    let mut row_idx = Vec::new();
    for (q, c) in cols.iter_mut().enumerate() {
        c.push(q);
        c.sort_unstable();
        c.dedup();
        row_idx.extend_from_slice(c);
        col_ptr.push(row_idx.len());
    }
    let nnz = row_idx.len();
    ReducedSystem { col_ptr, row_idx, values: vec![0.0; nnz] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rve::{FacePair, Strut};

    /// Simple cubic lattice of period 1 with a single node: three struts
    /// joining it to its images, one per axis.
    fn simple_cubic() -> RveModel {
        let mut nodes = Vec::new();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    nodes.push([i as f64, j as f64, k as f64]);
                }
            }
        }
        let id = |i: usize, j: usize, k: usize| i + 2 * j + 4 * k;
        let mut struts = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                // every cube edge lies on two faces, so carries 1/4
                struts.push(Strut { nodes: [id(0, a, b), id(1, a, b)], length: 1.0, weight: 0.25 });
                struts.push(Strut { nodes: [id(a, 0, b), id(a, 1, b)], length: 1.0, weight: 0.25 });
                struts.push(Strut { nodes: [id(a, b, 0), id(a, b, 1)], length: 1.0, weight: 0.25 });
            }
        }
        let mut pairs = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                pairs.push(FacePair { axis: 0, plus: id(1, a, b), minus: id(0, a, b) });
                pairs.push(FacePair { axis: 1, plus: id(a, 1, b), minus: id(a, 0, b) });
                pairs.push(FacePair { axis: 2, plus: id(a, b, 1), minus: id(a, b, 0) });
            }
        }
        RveModel {
            format_version: super::super::RVE_FORMAT_VERSION,
            seed: 0,
            cube_size: 1.0,
            strut_length: 1.0,
            tol_len: 0.0,
            nodes,
            struts,
            pairs,
            cell_count: 0,
            max_length_deviation: 0.0,
        }
    }

    #[test]
    fn simple_cubic_matches_beam_theory() {
        // one strut per axis per unit cell: C11 = EA, no Poisson coupling,
        // shear carried by bending of two struts in series with a rigid node.
        let rve = simple_cubic();
        rve.validate().unwrap();
        let mat = BeamMaterial::new(100.0, 0.3, 0.1).unwrap();
        let rep = homogenize_with(&rve, &mat, 1.0).unwrap();
        let c = rep.stiffness.matrix();
        let ea = 100.0 * mat.area();
        for i in 0..3 {
            assert!((c[(i, i)] - ea).abs() < 1e-9 * ea, "C{i}{i} = {}", c[(i, i)]);
            for j in 0..3 {
                if i != j {
                    assert!(c[(i, j)].abs() < 1e-9 * ea);
                }
            }
        }
        // shear: two struts bend with chord rotations +-gamma/2 and the node
        // rotation stays zero, W = 6EI/l (gamma/2)^2 * 2 = C44 gamma^2 / 2
        let ei = 100.0 * mat.inertia();
        for i in 3..6 {
            assert!((c[(i, i)] - 6.0 * ei).abs() < 1e-6 * ei, "C{i}{i} = {} vs {}", c[(i, i)], 6.0 * ei);
        }
        for case in &rep.cases {
            assert!(case.hill_error() < 1e-9);
            assert!(case.stress_asymmetry < 1e-9);
        }
    }

    #[test]
    fn random_lattice_is_consistent() {
        let rve = crate::rve::small_rve();
        let mat = BeamMaterial::from_aspect(1.0, 0.3, 0.05, 1.0).unwrap();
        let rep = homogenize_with(rve, &mat, 1.0).unwrap();
        assert!(rep.asymmetry < 1e-6, "asymmetry {}", rep.asymmetry);
        for case in &rep.cases {
            assert!(case.hill_error() < 1e-8, "hill {}", case.hill_error());
        }
        for eps in [0.5, 2.0] {
            let other = homogenize_with(rve, &mat, eps).unwrap();
            let d = (rep.stiffness.matrix() - other.stiffness.matrix()).norm() / rep.stiffness.frobenius_norm();
            assert!(d < 1e-10, "eps {eps}: {d}");
        }
    }

    #[test]
    fn thicker_struts_are_stiffer() {
        let rve = crate::rve::small_rve();
        let c: Vec<DMatrix<f64>> = [0.02, 0.05, 0.1]
            .iter()
            .map(|&a| homogenize(rve, &BeamMaterial::from_aspect(1.0, 0.3, a, 1.0).unwrap()).unwrap().into_matrix())
            .collect();
        for w in c.windows(2) {
            let diff = &w[1] - &w[0];
            let eig = diff.symmetric_eigenvalues();
            assert!(eig.min() > -1e-12 * w[1].norm());
        }
    }

    #[test]
    fn stiffness_scales_with_modulus() {
        let rve = crate::rve::small_rve();
        let m1 = BeamMaterial::new(1.0, 0.3, 0.04).unwrap();
        let m2 = BeamMaterial::new(7.0, 0.3, 0.04).unwrap();
        let c1 = homogenize(rve, &m1).unwrap();
        let c2 = homogenize(rve, &m2).unwrap();
        let d = (c2.matrix() - c1.matrix() * 7.0).norm() / c2.frobenius_norm();
        assert!(d < 1e-10);
        assert!(homogenize_with(rve, &m1, 0.0).is_err());
    }
}
