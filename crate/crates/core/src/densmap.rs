//! Relative density of a strut lattice as a function of the aspect ratio, by
//! Monte Carlo sampling, and the inverse-sigmoid map `a(kappa)`.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{Dyn, OMatrix, OVector, Vector3, U3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rve::RveModel;

/// Default number of points per Monte Carlo batch.
pub const DEFAULT_BATCH: usize = 100_000;
/// Relative change of the running estimate between batches that stops sampling.
pub const STOP_TOL: f64 = 1e-3;
/// A zero estimate after this many points is an error.
pub const MAX_EMPTY_POINTS: usize = 1_000_000;
/// Hard cap on sampled points per estimate.
pub const MAX_POINTS: usize = 50_000_000;
/// Levenberg-Marquardt starting point for `(c1, c2, c3)`.
pub const INITIAL_GUESS: [f64; 3] = [0.12, 0.92, 0.06];
/// Samples needed by [`fit_sigmoid`].
pub const MIN_SAMPLES: usize = 5;
/// Smallest admitted spread `max kappa - min kappa` of the fitted samples.
pub const MIN_KAPPA_SPAN: f64 = 0.375;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub aspect: f64,
    pub kappa: f64,
    /// points drawn
    pub points: usize,
    pub seed: u64,
}

/// Strut volume over cube volume, ignoring overlaps at the joints.
pub fn naive_density(rve: &RveModel, aspect: f64) -> f64 {
    rve.naive_density(aspect)
}

#[derive(Clone, Copy)]
struct Segment {
    a: [f64; 3],
    d: [f64; 3],
    dd: f64,
}

impl Segment {
    fn dist2(&self, p: &[f64; 3]) -> f64 {
        let w = [p[0] - self.a[0], p[1] - self.a[1], p[2] - self.a[2]];
        let t = ((w[0] * self.d[0] + w[1] * self.d[1] + w[2] * self.d[2]) / self.dd).clamp(0.0, 1.0);
        (0..3).map(|k| (w[k] - t * self.d[k]).powi(2)).sum()
    }
}

/// Uniform bucket grid over the cube holding every strut image whose capsule
/// reaches into a cell.
struct SegmentGrid {
    n: usize,
    h: f64,
    segs: Vec<Segment>,
    start: Vec<usize>,
    items: Vec<u32>,
}

impl SegmentGrid {
    fn new(rve: &RveModel, radius: f64) -> Self {
        let l = rve.cube_size;
        let n = ((l / rve.strut_length.max(2.0 * radius)).floor() as usize).clamp(1, 64);
        let h = l / n as f64;
        let mut segs = Vec::new();
        let mut cells: Vec<Vec<u32>> = vec![Vec::new(); n * n * n];
        for s in &rve.struts {
            let a0 = rve.nodes[s.nodes[0]];
            let b0 = rve.nodes[s.nodes[1]];
            for sx in -1..=1 {
                for sy in -1..=1 {
                    for sz in -1..=1 {
                        let sh = [sx as f64 * l, sy as f64 * l, sz as f64 * l];
                        let a = [a0[0] + sh[0], a0[1] + sh[1], a0[2] + sh[2]];
                        let b = [b0[0] + sh[0], b0[1] + sh[1], b0[2] + sh[2]];
                        let lo: Vec<f64> = (0..3).map(|k| a[k].min(b[k]) - radius).collect();
                        let hi: Vec<f64> = (0..3).map(|k| a[k].max(b[k]) + radius).collect();
                        if (0..3).any(|k| hi[k] < 0.0 || lo[k] > l) {
                            continue;
                        }
                        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                        let id = segs.len() as u32;
                        segs.push(Segment { a, d, dd: d[0] * d[0] + d[1] * d[1] + d[2] * d[2] });
                        let idx = |x: f64| ((x / h).floor().max(0.0) as usize).min(n - 1);
                        for i in idx(lo[0])..=idx(hi[0]) {
                            for j in idx(lo[1])..=idx(hi[1]) {
                                for k in idx(lo[2])..=idx(hi[2]) {
                                    cells[(k * n + j) * n + i].push(id);
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut start = vec![0];
        let mut items = Vec::new();
        for c in cells {
            items.extend(c);
            start.push(items.len());
        }
        SegmentGrid { n, h, segs, start, items }
    }

    fn hit(&self, p: &[f64; 3], r2: f64) -> bool {
        let idx = |x: f64| ((x / self.h) as usize).min(self.n - 1);
        let c = (idx(p[2]) * self.n + idx(p[1])) * self.n + idx(p[0]);
        self.items[self.start[c]..self.start[c + 1]].iter().any(|&s| self.segs[s as usize].dist2(p) <= r2)
    }
}

/// Monte Carlo estimate of the solid volume fraction for struts of diameter
/// `aspect * l`. Points are drawn in batches of `batch` until the running
/// estimate changes by less than [`STOP_TOL`] relative between batches.
pub fn estimate_density(rve: &RveModel, aspect: f64, batch: usize, seed: u64) -> Result<DensitySample> {
    if !(aspect > 0.0) || !aspect.is_finite() {
        return Err(Error::invalid(format!("aspect ratio must be positive, got {aspect}")));
    }
    if batch < 1000 {
        return Err(Error::invalid(format!("batch must hold at least 1000 points, got {batch}")));
    }
    let radius = 0.5 * aspect * rve.strut_length;
    let r2 = radius * radius;
    let grid = SegmentGrid::new(rve, radius);
    let l = rve.cube_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut drawn = 0usize;
    let mut prev: Option<f64> = None;
    let mut pts = vec![[0.0; 3]; batch];
    loop {
        for p in pts.iter_mut() {
            *p = [rng.gen::<f64>() * l, rng.gen::<f64>() * l, rng.gen::<f64>() * l];
        }
        hits += pts.par_chunks(4096).map(|c| c.iter().filter(|p| grid.hit(p, r2)).count()).sum::<usize>();
        drawn += batch;
        let kappa = hits as f64 / drawn as f64;
        if hits == 0 {
            if drawn >= MAX_EMPTY_POINTS {
                return Err(Error::NoConvergence(format!("no point hit a strut after {drawn} samples at aspect ratio {aspect}")));
            }
            continue;
        }
        let done = matches!(prev, Some(k) if k > 0.0 && (kappa - k).abs() / k < STOP_TOL);
        if done || drawn >= MAX_POINTS {
            return Ok(DensitySample { aspect, kappa, points: drawn, seed });
        }
        prev = Some(kappa);
    }
}

/// One sample per aspect ratio, sample `i` seeded with `seed + i`.
pub fn sample_sweep(rve: &RveModel, aspects: &[f64], batch: usize, seed: u64) -> Result<Vec<DensitySample>> {
    aspects.iter().enumerate().map(|(i, &a)| estimate_density(rve, a, batch, seed.wrapping_add(i as u64))).collect()
}

/// `a(kappa) = c1 ln(1/(c2 c3) - 1) - c1 ln(1/(c2 (kappa + c3)) - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// RMS residual in `a` over the fitted samples
    pub rms: f64,
}

fn logit_inv(u: f64) -> f64 {
    (1.0 / u - 1.0).ln()
}

impl SigmoidFit {
    pub fn new(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        let f = SigmoidFit { c1, c2, c3, rms: 0.0 };
        f.check()?;
        Ok(f)
    }

    fn check(&self) -> Result<()> {
        let (c1, c2, c3) = (self.c1, self.c2, self.c3);
        if ![c1, c2, c3].iter().all(|v| v.is_finite()) || !(c1 > 0.0) || !(c2 > 0.0) {
            return Err(Error::invalid(format!("invalid density map constants ({c1}, {c2}, {c3})")));
        }
        let u0 = c2 * c3;
        if !(u0 > 0.0 && u0 < 1.0) {
            return Err(Error::DensityDomain(u0));
        }
        Ok(())
    }

    /// Largest density for which the map is defined.
    pub fn kappa_max(&self) -> f64 {
        1.0 / self.c2 - self.c3
    }

    /// Aspect ratio and its derivative at `kappa`.
    pub fn aspect(&self, kappa: f64) -> Result<(f64, f64)> {
        if !(kappa >= 0.0) {
            return Err(Error::invalid(format!("density must be non-negative, got {kappa}")));
        }
        let u = self.c2 * (kappa + self.c3);
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::DensityDomain(u));
        }
        // the two logarithms coincide at kappa = 0, so a(0) is exactly zero
        let a = self.c1 * logit_inv(self.c2 * self.c3) - self.c1 * logit_inv(u);
        let da = self.c1 * self.c2 / (u * (1.0 - u));
        Ok((a, da))
    }
}

pub fn aspect_from_density(fit: &SigmoidFit, kappa: f64) -> Result<(f64, f64)> {
    fit.aspect(kappa)
}

struct FitProblem<'a> {
    samples: &'a [DensitySample],
    c: Vector3<f64>,
}

impl FitProblem<'_> {
    fn valid(&self) -> bool {
        let (c1, c2, c3) = (self.c[0], self.c[1], self.c[2]);
        let ok = |u: f64| u > 0.0 && u < 1.0;
        c1 > 0.0 && c2 > 0.0 && ok(c2 * c3) && self.samples.iter().all(|s| ok(c2 * (s.kappa + c3)))
    }
}

impl LeastSquaresProblem<f64, Dyn, U3> for FitProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U3>;
    type ParameterStorage = Owned<f64, U3>;

    fn set_params(&mut self, c: &Vector3<f64>) {
        self.c = *c;
    }

    fn params(&self) -> Vector3<f64> {
        self.c
    }

    fn residuals(&self) -> Option<OVector<f64, Dyn>> {
        let m = self.samples.len();
        if !self.valid() {
            // outside the domain every trial step is rejected
            return Some(OVector::<f64, Dyn>::from_element(m, 1e6));
        }
        let f = SigmoidFit { c1: self.c[0], c2: self.c[1], c3: self.c[2], rms: 0.0 };
        Some(OVector::<f64, Dyn>::from_iterator(m, self.samples.iter().map(|s| f.aspect(s.kappa).unwrap().0 - s.aspect)))
    }

    fn jacobian(&self) -> Option<OMatrix<f64, Dyn, U3>> {
        if !self.valid() {
            return None;
        }
        let (c1, c2, c3) = (self.c[0], self.c[1], self.c[2]);
        let dg = |u: f64| -1.0 / (u * (1.0 - u));
        let u0 = c2 * c3;
        let mut j = OMatrix::<f64, Dyn, U3>::zeros(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let u = c2 * (s.kappa + c3);
            j[(i, 0)] = logit_inv(u0) - logit_inv(u);
            j[(i, 1)] = c1 * (dg(u0) * c3 - dg(u) * (s.kappa + c3));
            j[(i, 2)] = c1 * c2 * (dg(u0) - dg(u));
        }
        Some(j)
    }
}

/// Least-squares fit of the inverse sigmoid to `(kappa, aspect)` samples.
pub fn fit_sigmoid(samples: &[DensitySample]) -> Result<SigmoidFit> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!("need at least {MIN_SAMPLES} density samples, got {}", samples.len())));
    }
    let lo = samples.iter().map(|s| s.kappa).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.kappa).fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo >= MIN_KAPPA_SPAN) || !(lo >= 0.0) || !(hi <= 1.0) {
        return Err(Error::invalid(format!("density samples span [{lo:.3}, {hi:.3}], need a spread of at least {MIN_KAPPA_SPAN}")));
    }
    let problem = FitProblem { samples, c: Vector3::from(INITIAL_GUESS) };
    if !problem.valid() {
        return Err(Error::invalid("initial guess outside the map domain for these samples"));
    }
    let (solved, report) = LevenbergMarquardt::new().with_patience(500).minimize(problem);
    if !report.termination.was_successful() {
        return Err(Error::NoConvergence(format!("density map fit stopped: {:?}", report.termination)));
    }
    let c = solved.params();
    let mut fit = SigmoidFit { c1: c[0], c2: c[1], c3: c[2], rms: 0.0 };
    fit.check()?;
    let mut ss = 0.0;
    for s in samples {
        let (a, _) = fit.aspect(s.kappa)?;
        ss += (a - s.aspect).powi(2);
    }
    fit.rms = (ss / samples.len() as f64).sqrt();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rve::{RveModel, Strut, RVE_FORMAT_VERSION};
    use proptest::prelude::*;

    const REF: [f64; 3] = [0.11882, 0.91991, 0.05956];

    fn reference() -> SigmoidFit {
        SigmoidFit::new(REF[0], REF[1], REF[2]).unwrap()
    }

    /// Cube of edge `l` holding the given straight struts (no pairing).
    fn lattice(l: f64, struts: &[([f64; 3], [f64; 3])]) -> RveModel {
        let mut nodes = Vec::new();
        let mut list = Vec::new();
        for (a, b) in struts {
            nodes.push(*a);
            nodes.push(*b);
            let len = (0..3).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>().sqrt();
            list.push(Strut { nodes: [nodes.len() - 2, nodes.len() - 1], length: len, weight: 1.0 });
        }
        RveModel {
            format_version: RVE_FORMAT_VERSION,
            seed: 0,
            cube_size: l,
            strut_length: l,
            tol_len: 1.0,
            nodes,
            struts: list,
            pairs: vec![],
            cell_count: 0,
            max_length_deviation: 0.0,
        }
    }

    #[test]
    fn single_spanning_strut_matches_cylinder() {
        let rve = lattice(1.0, &[([0.0, 0.4, 0.55], [1.0, 0.4, 0.55])]);
        let a = 0.2;
        let exact = std::f64::consts::PI * a * a / 4.0;
        assert!((naive_density(&rve, a) - exact).abs() < 1e-15);
        let s = estimate_density(&rve, a, 100_000, 1).unwrap();
        assert!((s.kappa - exact).abs() / exact < 0.02, "{} vs {exact}", s.kappa);
    }

    #[test]
    fn strut_on_a_face_uses_its_periodic_image() {
        // only half of the cylinder lies inside, the other half re-enters
        // through the opposite face
        let rve = lattice(1.0, &[([0.0, 0.0, 0.5], [1.0, 0.0, 0.5])]);
        let exact = std::f64::consts::PI * 0.01 / 4.0;
        let s = estimate_density(&rve, 0.1, 100_000, 2).unwrap();
        assert!((s.kappa - exact).abs() / exact < 0.02, "{} vs {exact}", s.kappa);
    }

    #[test]
    fn disjoint_struts_add_up() {
        let rve = lattice(1.0, &[([0.0, 0.25, 0.25], [1.0, 0.25, 0.25]), ([0.5, 0.75, 0.0], [0.5, 0.75, 1.0])]);
        let exact = 2.0 * std::f64::consts::PI * 0.15f64.powi(2) / 4.0;
        let s = estimate_density(&rve, 0.15, 100_000, 3).unwrap();
        assert!((s.kappa - exact).abs() / exact < 0.02);
    }

    #[test]
    fn vanishing_struts() {
        let rve = lattice(1.0, &[([0.0, 0.4, 0.55], [1.0, 0.4, 0.55])]);
        match estimate_density(&rve, 1e-9, 100_000, 1) {
            Ok(s) => assert!(s.kappa < 1e-4),
            Err(e) => assert!(matches!(e, Error::NoConvergence(_))),
        }
        assert!(naive_density(&rve, 1e-9) < 1e-17);
        assert!(estimate_density(&rve, 0.1, 10, 1).is_err());
        assert!(estimate_density(&rve, 0.0, 100_000, 1).is_err());
    }

    #[test]
    fn lattice_density_is_seed_stable_and_below_naive() {
        let rve = crate::rve::small_rve();
        let a = 0.25;
        let s1 = estimate_density(rve, a, 100_000, 1).unwrap();
        let s2 = estimate_density(rve, a, 100_000, 2).unwrap();
        assert!(s1.kappa > 0.1);
        assert!((s1.kappa - s2.kappa).abs() / s1.kappa < 0.01);
        assert!(naive_density(rve, a) > s1.kappa);
        for a in [0.02, 0.08] {
            let s = estimate_density(rve, a, 100_000, 5).unwrap();
            assert!(naive_density(rve, a) >= s.kappa * 0.98);
        }
    }

    #[test]
    fn reference_constants() {
        let f = reference();
        assert_eq!(f.aspect(0.0).unwrap().0, 0.0);
        let (a, _) = f.aspect(0.5).unwrap();
        // direct evaluation of the closed form
        let u = REF[1] * 0.55956;
        let want = REF[0] * ((1.0 / (REF[1] * REF[2]) - 1.0).ln() - (1.0 / u - 1.0).ln());
        assert!((a - want).abs() < 1e-15);
        assert!((a - 0.345).abs() < 1e-3);
        assert!(matches!(f.aspect(f.kappa_max() + 0.01), Err(Error::DensityDomain(_))));
        assert!(SigmoidFit::new(0.1, 2.0, 0.6).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let f = reference();
        for k in [0.1, 0.3, 0.6] {
            let h = 1e-5;
            let fd = (f.aspect(k + h).unwrap().0 - f.aspect(k - h).unwrap().0) / (2.0 * h);
            let (_, da) = f.aspect(k).unwrap();
            assert!((fd - da).abs() / da < 1e-8, "{k}: {fd} vs {da}");
        }
    }

    fn synthetic(c: [f64; 3], n: usize) -> Vec<DensitySample> {
        let f = SigmoidFit::new(c[0], c[1], c[2]).unwrap();
        (0..n)
            .map(|i| {
                let kappa = 0.05 + 0.75 * i as f64 / (n - 1) as f64;
                DensitySample { aspect: f.aspect(kappa).unwrap().0, kappa, points: 1, seed: 0 }
            })
            .collect()
    }

    #[test]
    fn fit_recovers_generating_constants() {
        for c in [REF, [0.1, 0.95, 0.04], [0.14, 0.9, 0.08]] {
            let fit = fit_sigmoid(&synthetic(c, 12)).unwrap();
            assert!((fit.c1 - c[0]).abs() < 1e-6 && (fit.c2 - c[1]).abs() < 1e-6 && (fit.c3 - c[2]).abs() < 1e-6, "{fit:?}");
            assert!(fit.rms < 1e-9);
        }
    }

    #[test]
    fn fit_preconditions() {
        let s = synthetic(REF, 24);
        assert!(fit_sigmoid(&s[..4]).is_err());
        let narrow: Vec<DensitySample> = s.iter().filter(|x| x.kappa < 0.3).cloned().collect();
        assert!(narrow.len() >= 5);
        assert!(fit_sigmoid(&narrow).is_err());
    }

    proptest! {
        #[test]
        fn map_is_increasing(k1 in 0.0f64..0.9, dk in 1e-6f64..0.1) {
            let f = reference();
            let k2 = k1 + dk;
            prop_assume!(k2 < f.kappa_max());
            let (a1, d1) = f.aspect(k1).unwrap();
            let (a2, d2) = f.aspect(k2).unwrap();
            prop_assert!(a2 > a1);
            prop_assert!(d1 > 0.0 && d2 > 0.0);
        }
    }
}
