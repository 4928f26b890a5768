//! Quasi-stochastic periodic beam lattices and their homogenization.

pub mod beam;
pub mod delaunay;
mod generate;
pub mod homogenize;
pub mod periodic;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use beam::beam_element_stiffness;
pub use generate::{generate_rve, generate_rve_with, RveParams, DEFAULT_TOL_LEN};
pub use homogenize::{homogenize, homogenize_with, HomogenizationReport, LoadCaseReport, MacroState};
pub use periodic::{apply_periodic_bcs, PeriodicConstraints};

use crate::error::{Error, Result};

pub const RVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strut {
    pub nodes: [usize; 2],
    pub length: f64,
    /// 1 inside the cube, 1/2 on a face, 1/4 on an edge of the cube
    pub weight: f64,
}

/// `plus` lies on the face `x[axis] = L` and is the image of `minus` on
/// `x[axis] = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacePair {
    pub axis: usize,
    pub plus: usize,
    pub minus: usize,
}

/// Cubic periodic beam lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RveModel {
    pub format_version: u32,
    pub seed: u64,
    /// edge length L of the cube
    pub cube_size: f64,
    /// nominal strut length l (the mean strut length)
    pub strut_length: f64,
    pub tol_len: f64,
    pub nodes: Vec<[f64; 3]>,
    pub struts: Vec<Strut>,
    pub pairs: Vec<FacePair>,
    /// number of tetrahedral cells in the cube
    pub cell_count: usize,
    /// achieved max |length - l| / l
    pub max_length_deviation: f64,
}

/// Isotropic base material and strut diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamMaterial {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub diameter: f64,
}

impl BeamMaterial {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, diameter: f64) -> Result<Self> {
        if !(youngs_modulus > 0.0) || !youngs_modulus.is_finite() {
            return Err(Error::invalid(format!("Young's modulus must be positive, got {youngs_modulus}")));
        }
        if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
            return Err(Error::invalid(format!("Poisson ratio must lie in (-1, 0.5), got {poisson_ratio}")));
        }
        if !(diameter > 0.0) || !diameter.is_finite() {
            return Err(Error::invalid(format!("strut diameter must be positive, got {diameter}")));
        }
        Ok(BeamMaterial { youngs_modulus, poisson_ratio, diameter })
    }

    /// Diameter from the aspect ratio `a = d / l`.
    pub fn from_aspect(youngs_modulus: f64, poisson_ratio: f64, aspect: f64, strut_length: f64) -> Result<Self> {
        Self::new(youngs_modulus, poisson_ratio, aspect * strut_length)
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(2) / 4.0
    }

    pub fn inertia(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(4) / 64.0
    }

    pub fn torsion_constant(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(4) / 32.0
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }
}

impl RveModel {
    pub fn volume(&self) -> f64 {
        self.cube_size.powi(3)
    }

    pub fn strut_vector(&self, s: &Strut) -> [f64; 3] {
        let (a, b) = (self.nodes[s.nodes[0]], self.nodes[s.nodes[1]]);
        [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
    }

    /// Nodes on at least one face of the cube.
    pub fn is_boundary_node(&self, n: usize) -> bool {
        let l = self.cube_size;
        self.nodes[n].iter().any(|&x| x == 0.0 || x == l)
    }

    /// Sum of strut volumes over the cube volume, with face weights.
    pub fn naive_density(&self, aspect: f64) -> f64 {
        let d = aspect * self.strut_length;
        let area = std::f64::consts::PI * d * d / 4.0;
        self.struts.iter().map(|s| s.weight * s.length * area).sum::<f64>() / self.volume()
    }

    pub fn mean_strut_length(&self) -> f64 {
        self.struts.iter().map(|s| s.length).sum::<f64>() / self.struts.len() as f64
    }

    /// Checks the structural invariants: strut lengths and weights, and a
    /// per-face bijective pairing of boundary nodes.
    pub fn validate(&self) -> Result<()> {
        let l = self.cube_size;
        let tol = 1e-9 * l.max(1.0);
        if self.nodes.is_empty() || self.struts.is_empty() {
            return Err(Error::invalid("RVE has no nodes or struts"));
        }
        for s in &self.struts {
            let [a, b] = s.nodes;
            if a >= self.nodes.len() || b >= self.nodes.len() || a == b {
                return Err(Error::invalid(format!("bad strut {:?}", s.nodes)));
            }
            let v = self.strut_vector(s);
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if (len - s.length).abs() > tol {
                return Err(Error::invalid("stored strut length disagrees with node positions"));
            }
            if (s.length - self.strut_length).abs() > self.tol_len * self.strut_length + tol {
                return Err(Error::invalid(format!(
                    "strut length {} outside tolerance {} of {}",
                    s.length, self.tol_len, self.strut_length
                )));
            }
            let (pa, pb) = (self.nodes[a], self.nodes[b]);
            let shared = (0..3).filter(|&k| pa[k] == pb[k] && (pa[k] == 0.0 || pa[k] == l)).count();
            let expected = [1.0, 0.5, 0.25][shared.min(2)];
            if s.weight != expected {
                return Err(Error::invalid(format!("strut {:?} has weight {} but expected {expected}", s.nodes, s.weight)));
            }
        }
        for axis in 0..3 {
            let mut plus: Vec<usize> = vec![];
            let mut minus: Vec<usize> = vec![];
            for p in self.pairs.iter().filter(|p| p.axis == axis) {
                let (xp, xm) = (self.nodes[p.plus], self.nodes[p.minus]);
                for k in 0..3 {
                    let want = if k == axis { l } else { 0.0 };
                    if ((xp[k] - xm[k]) - want).abs() > tol {
                        return Err(Error::Pairing(format!("pair {p:?} is not a translation by L along axis {axis}")));
                    }
                }
                if xp[axis] != l || xm[axis] != 0.0 {
                    return Err(Error::Pairing(format!("pair {p:?} does not join opposite faces")));
                }
                plus.push(p.plus);
                minus.push(p.minus);
            }
            let on_plus: Vec<usize> = (0..self.nodes.len()).filter(|&n| self.nodes[n][axis] == l).collect();
            let on_minus: Vec<usize> = (0..self.nodes.len()).filter(|&n| self.nodes[n][axis] == 0.0).collect();
            plus.sort_unstable();
            minus.sort_unstable();
            let unique = |v: &Vec<usize>| v.windows(2).all(|w| w[0] != w[1]);
            if plus != on_plus || minus != on_minus || !unique(&plus) || !unique(&minus) {
                return Err(Error::Pairing(format!("pairing on axis {axis} is not a bijection between faces")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RveModel = serde_json::from_str(s)?;
        if m.format_version != RVE_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported RVE format version {}", m.format_version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Small lattice shared by the unit tests.
#[cfg(test)]
pub(crate) fn small_rve() -> &'static RveModel {
    static RVE: std::sync::OnceLock<RveModel> = std::sync::OnceLock::new();
    RVE.get_or_init(|| generate_rve(3, 250, 1.0, 1.0).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_rve_is_valid_and_deterministic() {
        let a = small_rve();
        a.validate().unwrap();
        let b = generate_rve(3, 250, 1.0, 1.0).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!((a.mean_strut_length() - 1.0).abs() < 1e-12);
        let back = RveModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(*a, back);
        assert!(a.struts.iter().any(|s| s.weight == 0.5));
        assert!(a.struts.iter().any(|s| s.weight == 0.25));
    }

    #[test]
    fn degenerate_target_is_rejected() {
        assert!(generate_rve(1, 1, 1.0, 0.5).is_err());
        assert!(generate_rve(1, 500, -1.0, 0.5).is_err());
    }

    #[test]
    fn material_sections() {
        let m = BeamMaterial::new(200.0, 0.25, 0.1).unwrap();
        assert!((m.area() - std::f64::consts::PI * 0.0025).abs() < 1e-15);
        assert!((m.torsion_constant() - 2.0 * m.inertia()).abs() < 1e-20);
        assert_eq!(m.shear_modulus(), 80.0);
        assert!(BeamMaterial::new(1.0, 0.5, 0.1).is_err());
        assert!(BeamMaterial::new(1.0, 0.3, 0.0).is_err());
    }
}
