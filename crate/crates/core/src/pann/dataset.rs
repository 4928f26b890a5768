//! Training data from homogenized, isotropically projected RVE stiffness.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cholesky::CholeskyPair;
use crate::error::{Error, Result};
use crate::isotropy::project_isotropic;
use crate::rve::{homogenize_with, BeamMaterial, RveModel};

/// Tensor grid of aspect ratio, Young's modulus and Poisson ratio values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamGrid {
    pub aspect: Vec<f64>,
    pub youngs: Vec<f64>,
    pub poisson: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid { aspect: linspace(0.02, 0.30, 12), youngs: linspace(50.0, 400.0, 6), poisson: linspace(0.20, 0.45, 4) }
    }
}

impl ParamGrid {
    pub fn uniform(aspect: (f64, f64, usize), youngs: (f64, f64, usize), poisson: (f64, f64, usize)) -> Self {
        ParamGrid {
            aspect: linspace(aspect.0, aspect.1, aspect.2),
            youngs: linspace(youngs.0, youngs.1, youngs.2),
            poisson: linspace(poisson.0, poisson.1, poisson.2),
        }
    }

    pub fn len(&self) -> usize {
        self.aspect.len() * self.youngs.len() * self.poisson.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("parameter grid is empty"));
        }
        let bad = |v: &[f64], ok: &dyn Fn(f64) -> bool| v.iter().any(|&x| !x.is_finite() || !ok(x));
        if bad(&self.aspect, &|a| a > 0.0) || bad(&self.youngs, &|e| e > 0.0) || bad(&self.poisson, &|n| n > -1.0 && n < 0.5) {
            return Err(Error::invalid("parameter grid holds values outside the physical range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub a: f64,
    pub e: f64,
    pub nu: f64,
    pub g11: f64,
    pub g44: f64,
    pub rve_seed: u64,
}

impl TrainingRecord {
    pub fn input(&self) -> [f64; 3] {
        [self.a, self.e, self.nu]
    }

    pub fn target(&self) -> [f64; 2] {
        [self.g11, self.g44]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub train: Vec<TrainingRecord>,
    pub validation: Vec<TrainingRecord>,
    pub rve_seed: u64,
    pub eps_star: f64,
    pub split_seed: u64,
}

impl TrainingSet {
    /// Shuffles `records` with `seed` and keeps `round(0.1 n)` (at least one
    /// when n > 1) for validation.
    pub fn split(mut records: Vec<TrainingRecord>, seed: u64, rve_seed: u64, eps_star: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no training records"));
        }
        for r in &records {
            CholeskyPair::new(r.g11, r.g44)?;
        }
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = records.len();
        let nv = if n > 1 { ((n as f64 * 0.1).round() as usize).max(1) } else { 0 };
        let validation = records.split_off(n - nv);
        Ok(TrainingSet { train: records, validation, rve_seed, eps_star, split_seed: seed })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &TrainingRecord> {
        self.train.iter().chain(&self.validation)
    }
}

/// Isotropic Cholesky targets for one triple.
pub fn targets_for(rve: &RveModel, a: f64, e: f64, nu: f64, eps_star: f64) -> Result<CholeskyPair> {
    let mat = BeamMaterial::from_aspect(e, nu, a, rve.strut_length)?;
    let c = homogenize_with(rve, &mat, eps_star)?.stiffness;
    CholeskyPair::from_isotropic(project_isotropic(&c)?.matrix())
}

/// Homogenizes the RVE over the grid and splits 90/10 with `split_seed`.
///
/// The beam stiffness is linear in `E` at fixed `nu`, so each `(a, nu)` pair
/// is homogenized once at `E = 1` and the targets are scaled by `sqrt(E)`.
pub fn generate_dataset(rve: &RveModel, grid: &ParamGrid, split_seed: u64) -> Result<TrainingSet> {
    grid.validate()?;
    let eps_star = 1.0;
    let base: Vec<(f64, f64)> = grid.aspect.iter().flat_map(|&a| grid.poisson.iter().map(move |&nu| (a, nu))).collect();
    let solved: Vec<Result<CholeskyPair>> = base.par_iter().map(|&(a, nu)| targets_for(rve, a, 1.0, nu, eps_star)).collect();
    let mut records = Vec::with_capacity(grid.len());
    for (&(a, nu), pair) in base.iter().zip(solved) {
        let pair = match pair {
            Ok(p) => p,
            Err(e) if e.is_numerical() || matches!(e, Error::Constraint(_)) => {
                log::warn!("excluding a = {a}, nu = {nu} from the dataset: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        for &e in &grid.youngs {
            let s = e.sqrt();
            records.push(TrainingRecord { a, e, nu, g11: pair.g11 * s, g44: pair.g44 * s, rve_seed: rve.seed });
        }
    }
    TrainingSet::split(records, split_seed, rve.seed, eps_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isotropy::project_isotropic;
    use crate::rve::{homogenize, small_rve};

    #[test]
    fn targets_are_roots_of_projected_diagonal() {
        let rve = small_rve();
        let grid = ParamGrid { aspect: vec![0.05, 0.1], youngs: vec![100.0, 200.0], poisson: vec![0.3] };
        let set = generate_dataset(rve, &grid, 4).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.validation.len(), 1);
        for r in set.records() {
            assert!(CholeskyPair::new(r.g11, r.g44).is_ok());
            let mat = BeamMaterial::from_aspect(r.e, r.nu, r.a, rve.strut_length).unwrap();
            let c = project_isotropic(&homogenize(rve, &mat).unwrap()).unwrap();
            assert!((r.g11 - c.get(0, 0).sqrt()).abs() <= 1e-10 * r.g11);
            assert!((r.g44 - c.get(3, 3).sqrt()).abs() <= 1e-10 * r.g44);
        }
        let at = |e: f64| *set.records().find(|r| r.a == 0.1 && r.e == e).unwrap();
        let (lo, hi) = (at(100.0), at(200.0));
        assert!((hi.g11 - 2f64.sqrt() * lo.g11).abs() <= 1e-8 * hi.g11);
        assert!((hi.g44 - 2f64.sqrt() * lo.g44).abs() <= 1e-8 * hi.g44);
    }

    #[test]
    fn split_is_seeded() {
        let recs: Vec<TrainingRecord> =
            (0..40).map(|i| TrainingRecord { a: i as f64, e: 1.0, nu: 0.3, g11: 2.0, g44: 1.0, rve_seed: 0 }).collect();
        let a = TrainingSet::split(recs.clone(), 9, 0, 1.0).unwrap();
        let b = TrainingSet::split(recs.clone(), 9, 0, 1.0).unwrap();
        let c = TrainingSet::split(recs, 10, 0, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.validation, c.validation);
        assert_eq!((a.train.len(), a.validation.len()), (36, 4));
        let bad = vec![TrainingRecord { a: 0.1, e: 1.0, nu: 0.3, g11: 1.0, g44: 1.0, rve_seed: 0 }];
        assert!(TrainingSet::split(bad, 0, 0, 1.0).is_err());
    }

    #[test]
    fn default_grid_matches_ranges() {
        let g = ParamGrid::default();
        assert_eq!(g.len(), 12 * 6 * 4);
        assert_eq!((g.aspect[0], *g.aspect.last().unwrap()), (0.02, 0.30));
        assert!(ParamGrid { poisson: vec![0.5], ..g }.validate().is_err());
    }
}
