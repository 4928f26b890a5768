//! Feed-forward network from `(a, E, nu)` to an admissible Cholesky pair.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cholesky::{stiffness_entries, CholeskyPair, RATIO};
use crate::densmap::SigmoidFit;
use crate::dual::{sigmoid, softplus, Dual, Real};
use crate::error::{Error, Result};
use crate::voigt::{VoigtStiffness, PLANE_STRAIN_INDICES};

pub const NET_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 64, 64];

/// Dense layer `z = W x + b` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn w(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }
}

/// Per-input standardization `(x - mean) / scale`, with the input box seen
/// in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: [0.0; 3], scale: [1.0; 3], lo: [f64::MIN; 3], hi: [f64::MAX; 3] }
    }
}

impl Normalization {
    /// Zero mean and unit variance over `inputs`. Constant inputs keep scale 1.
    pub fn fit(inputs: &[[f64; 3]]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("cannot normalize an empty input set"));
        }
        let n = inputs.len() as f64;
        let mut out = Normalization::default();
        for k in 0..3 {
            let mean = inputs.iter().map(|x| x[k]).sum::<f64>() / n;
            let var = inputs.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / n;
            out.mean[k] = mean;
            out.scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
            out.lo[k] = inputs.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min);
            out.hi[k] = inputs.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(out)
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub init_seed: u64,
    pub rve_seed: Option<u64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_mse: Option<f64>,
    pub validation_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialNet {
    pub format_version: u32,
    pub layers: Vec<Layer>,
    pub normalization: Normalization,
    pub density_map: Option<SigmoidFit>,
    #[serde(default)]
    pub meta: TrainingMeta,
}

/// The head keeps `g11 - 2/sqrt(3) g44 = s(v1) > 0`, but in floating point
/// the sum can round onto the boundary when `s(v1)` is below one ulp of
/// `g11`, and `s(v2)` underflows for very negative `v2`. Nudge such results
/// back inside.
fn guard(g11: f64, g44: f64) -> CholeskyPair {
    let g44 = g44.max(f64::MIN_POSITIVE);
    let lim = RATIO * g44;
    let g11 = if g11 > lim { g11 } else { lim.next_up() };
    CholeskyPair { g11, g44 }
}

impl MaterialNet {
    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn new(hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![3];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let lim = (6.0 / (rows + cols) as f64).sqrt();
                let weights = (0..rows * cols).map(|_| rng.gen_range(-lim..lim)).collect();
                Layer { rows, cols, weights, bias: vec![0.0; rows] }
            })
            .collect();
        Ok(MaterialNet {
            format_version: NET_FORMAT_VERSION,
            layers,
            normalization: Normalization::default(),
            density_map: None,
            meta: TrainingMeta { init_seed: seed, ..Default::default() },
        })
    }

    pub fn standard(seed: u64) -> Self {
        Self::new(&DEFAULT_HIDDEN, seed).expect("default widths are valid")
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Raw network outputs `v` for any scalar type.
    pub fn outputs_generic<T: Real>(&self, p: [T; 3]) -> [T; 2] {
        let nz = &self.normalization;
        let mut x: Vec<T> = (0..3).map(|k| (p[k] - T::cst(nz.mean[k])).scale(1.0 / nz.scale[k])).collect();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z: Vec<T> = Vec::with_capacity(layer.rows);
            for i in 0..layer.rows {
                let mut acc = T::cst(layer.bias[i]);
                for (j, xj) in x.iter().enumerate() {
                    acc += xj.scale(layer.w(i, j));
                }
                z.push(if li < last { acc.softplus() } else { acc });
            }
            x = z;
        }
        [x[0], x[1]]
    }

    /// `(g11, g44)` with `g44 = s(v2)` and `g11 = s(v1) + 2/sqrt(3) s(v2)`.
    pub fn pair_generic<T: Real>(&self, p: [T; 3]) -> (T, T) {
        let [v1, v2] = self.outputs_generic(p);
        let g44 = v2.softplus();
        (v1.softplus() + g44.scale(RATIO), g44)
    }

    pub fn forward(&self, p: [f64; 3]) -> CholeskyPair {
        if !self.normalization.contains(&p) {
            log::debug!("material net evaluated outside its training box at {p:?}");
        }
        let (g11, g44) = self.pair_generic(p);
        guard(g11, g44)
    }

    /// Isotropic 6x6 stiffness `G G^T`.
    pub fn stiffness_from_params(&self, p: [f64; 3]) -> Result<VoigtStiffness> {
        let pair = self.forward(p);
        if !pair.is_admissible() {
            return Err(Error::Constraint(format!("network output {pair:?} is not admissible")));
        }
        let c = stiffness_entries(pair.g11, pair.g44);
        Ok(VoigtStiffness::from_matrix_unchecked(DMatrix::from_fn(6, 6, |i, j| c[i][j])))
    }

    /// Stiffness and its derivative with respect to the aspect ratio.
    pub fn stiffness_and_da(&self, p: [f64; 3]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (g11, g44) = self.pair_generic([Dual::variable(p[0]), Dual::cst(p[1]), Dual::cst(p[2])]);
        let c = stiffness_entries(g11, g44);
        (DMatrix::from_fn(6, 6, |i, j| c[i][j].re), DMatrix::from_fn(6, 6, |i, j| c[i][j].eps))
    }

    /// `dC/dkappa = dC/da da/dkappa` through the density map.
    pub fn dstiffness_dkappa(&self, kappa: f64, e: f64, nu: f64, fit: &SigmoidFit) -> Result<DMatrix<f64>> {
        Ok(self.kappa_stiffness(kappa, e, nu, fit)?.1)
    }

    /// Stiffness at density `kappa` and its `kappa` derivative.
    pub fn kappa_stiffness(&self, kappa: f64, e: f64, nu: f64, fit: &SigmoidFit) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (a, da) = fit.aspect(kappa)?;
        let (c, dc) = self.stiffness_and_da([a, e, nu]);
        Ok((c, dc * da))
    }

    /// Batched evaluation of `(C, dC/dkappa)` over many densities, in 3D
    /// (6x6) or plane strain (3x3). Equivalent to calling
    /// [`kappa_stiffness`](Self::kappa_stiffness) per entry.
    pub fn kappa_stiffness_batch(
        &self,
        kappas: &[f64],
        e: f64,
        nu: f64,
        fit: &SigmoidFit,
        plane: bool,
    ) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        let mut inputs = Vec::with_capacity(kappas.len());
        let mut dadk = Vec::with_capacity(kappas.len());
        for &k in kappas {
            let (a, da) = fit.aspect(k)?;
            inputs.push([a, e, nu]);
            dadk.push(da);
        }
        let pairs = self.pairs_batch(&inputs);
        Ok(pairs
            .into_iter()
            .zip(dadk)
            .map(|((g11, g44), da)| {
                let c = stiffness_entries(g11, g44);
                if plane {
                    let ix = PLANE_STRAIN_INDICES;
                    (DMatrix::from_fn(3, 3, |i, j| c[ix[i]][ix[j]].re), DMatrix::from_fn(3, 3, |i, j| c[ix[i]][ix[j]].eps * da))
                } else {
                    (DMatrix::from_fn(6, 6, |i, j| c[i][j].re), DMatrix::from_fn(6, 6, |i, j| c[i][j].eps * da))
                }
            })
            .collect())
    }

    /// Pairs with their tangent along the aspect ratio for a batch of inputs,
    /// as dense matrix products.
    pub fn pairs_batch(&self, inputs: &[[f64; 3]]) -> Vec<(Dual, Dual)> {
        let n = inputs.len();
        if n == 0 {
            return vec![];
        }
        let nz = &self.normalization;
        let mut x = Mat::<f64>::from_fn(3, n, |k, s| (inputs[s][k] - nz.mean[k]) / nz.scale[k]);
        let mut dx = Mat::<f64>::from_fn(3, n, |k, _| if k == 0 { 1.0 / nz.scale[0] } else { 0.0 });
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let w = Mat::<f64>::from_fn(layer.rows, layer.cols, |i, j| layer.w(i, j));
            let mut z = Mat::<f64>::from_fn(layer.rows, n, |i, _| layer.bias[i]);
            let mut dz = Mat::<f64>::zeros(layer.rows, n);
            matmul(z.as_mut(), Accum::Add, w.as_ref(), x.as_ref(), 1.0, Par::Seq);
            matmul(dz.as_mut(), Accum::Replace, w.as_ref(), dx.as_ref(), 1.0, Par::Seq);
            crate::simd::clear_upper_state();
            if li < last {
                for s in 0..n {
                    for i in 0..layer.rows {
                        let v = z[(i, s)];
                        dz[(i, s)] *= sigmoid(v);
                        z[(i, s)] = softplus(v);
                    }
                }
            }
            x = z;
            dx = dz;
        }
        (0..n)
            .map(|s| {
                let v1 = Dual::new(x[(0, s)], dx[(0, s)]);
                let v2 = Dual::new(x[(1, s)], dx[(1, s)]);
                let g44 = v2.softplus();
                (v1.softplus() + g44.scale(RATIO), g44)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: MaterialNet = serde_json::from_str(s)?;
        if net.format_version != NET_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported network format version {}", net.format_version)));
        }
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 3;
        for (i, l) in self.layers.iter().enumerate() {
            if l.cols != prev || l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::invalid(format!("layer {i} has inconsistent shapes")));
            }
            prev = l.rows;
        }
        if prev != 2 || self.layers.len() < 2 {
            return Err(Error::invalid("network must end in a 2-output layer"));
        }
        if self.normalization.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("normalization scales must be positive"));
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::{guard, Dual, Error, MaterialNet, Normalization, Real, Rng, SeedableRng, SigmoidFit, RATIO};
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn fit() -> SigmoidFit {
        SigmoidFit::new(0.11882, 0.91991, 0.05956).unwrap()
    }

    #[test]
    fn zero_network() {
        let mut net = MaterialNet::standard(1);
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let p = net.forward([0.1, 200.0, 0.3]);
        let ln2 = 2f64.ln();
        assert!((p.g44 - ln2).abs() < 1e-15);
        assert!((p.g11 - ln2 * (1.0 + 2.0 / 3f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn shapes_and_round_trip() {
        let net = MaterialNet::standard(3);
        let dims: Vec<(usize, usize)> = net.layers.iter().map(|l| (l.rows, l.cols)).collect();
        assert_eq!(dims, vec![(64, 3), (64, 64), (64, 64), (2, 64)]);
        let back = MaterialNet::from_json(&net.to_json().unwrap()).unwrap();
        let p = [0.13, 120.0, 0.31];
        assert_eq!(net.forward(p), back.forward(p));
        let mut bad = net.clone();
        bad.layers[1].bias.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn batch_matches_scalar_path() {
        let mut net = MaterialNet::standard(5);
        net.normalization = Normalization { mean: [0.15, 200.0, 0.3], scale: [0.08, 100.0, 0.1], ..Default::default() };
        let inputs = [[0.05, 80.0, 0.25], [0.2, 300.0, 0.4], [0.12, 150.0, 0.33]];
        let batch = net.pairs_batch(&inputs);
        for (p, (g11, g44)) in inputs.iter().zip(batch) {
            let (s11, s44) = net.pair_generic([Dual::variable(p[0]), Dual::cst(p[1]), Dual::cst(p[2])]);
            assert!((g11.re - s11.re).abs() < 1e-12 * s11.re.abs());
            assert!((g44.re - s44.re).abs() < 1e-12 * s44.re.abs());
            assert!((g11.eps - s11.eps).abs() < 1e-10 * (1.0 + s11.eps.abs()));
            assert!((g44.eps - s44.eps).abs() < 1e-10 * (1.0 + s44.eps.abs()));
        }
        let f = fit();
        let kappas = [0.1, 0.3, 0.55];
        let rows = net.kappa_stiffness_batch(&kappas, 200.0, 0.3, &f, false).unwrap();
        let plane = net.kappa_stiffness_batch(&kappas, 200.0, 0.3, &f, true).unwrap();
        for ((k, (c, dc)), (c2, dc2)) in kappas.iter().zip(&rows).zip(&plane) {
            let (c1, dc1) = net.kappa_stiffness(*k, 200.0, 0.3, &f).unwrap();
            assert!((c - &c1).amax() < 1e-12 * c1.amax());
            assert!((dc - &dc1).amax() < 1e-10 * dc1.amax());
            assert_eq!(c2[(2, 2)], c[(5, 5)]);
            assert_eq!(dc2[(0, 1)], dc[(0, 1)]);
        }
    }

    #[test]
    fn kappa_derivative_matches_finite_differences() {
        let mut net = MaterialNet::standard(7);
        net.normalization = Normalization { mean: [0.15, 200.0, 0.3], scale: [0.08, 100.0, 0.1], ..Default::default() };
        let f = fit();
        for k in [0.1, 0.3, 0.6] {
            let dc = net.dstiffness_dkappa(k, 150.0, 0.3, &f).unwrap();
            let h = 1e-6;
            let cp = net.kappa_stiffness(k + h, 150.0, 0.3, &f).unwrap().0;
            let cm = net.kappa_stiffness(k - h, 150.0, 0.3, &f).unwrap().0;
            let fd = (cp - cm) / (2.0 * h);
            assert!((&dc - &fd).norm() / fd.norm() < 1e-5, "kappa {k}");
            assert!((&dc - dc.transpose()).amax() <= 1e-12 * dc.amax());
        }
        assert!(matches!(net.dstiffness_dkappa(f.kappa_max(), 150.0, 0.3, &f), Err(Error::DensityDomain(_))));
    }

    #[test]
    fn guard_keeps_boundary_cases_admissible() {
        assert!(guard(RATIO, 1.0).is_admissible());
        assert!(guard(0.0, 0.0).is_admissible());
        assert_eq!(guard(3.0, 1.0), crate::pann::CholeskyPair { g11: 3.0, g44: 1.0 });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn constraint_holds_for_any_weights(seed in 0u64..u64::MAX, a in -1.0f64..1.0, e in -500.0f64..500.0, nu in -1.0f64..1.0) {
            let mut net = MaterialNet::new(&[8, 8, 8], seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5555);
            for l in &mut net.layers {
                l.weights.iter_mut().for_each(|w| *w = rng.gen_range(-5.0..5.0));
                l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-5.0..5.0));
            }
            let p = net.forward([a, e, nu]);
            prop_assert!(p.g44 > 0.0 && p.g11 > RATIO * p.g44);
            prop_assert!(p.is_admissible());
        }
    }

    proptest! {

        #[test]
        fn stiffness_is_positive_definite(seed in 0u64..1000, a in 0.01f64..0.4, e in 1.0f64..400.0, nu in 0.1f64..0.45) {
            let mut net = MaterialNet::new(&[16, 16, 16], seed).unwrap();
            net.normalization = Normalization::fit(&[[0.02, 50.0, 0.2], [0.3, 400.0, 0.45]]).unwrap();
            let c = net.stiffness_from_params([a, e, nu]).unwrap();
            prop_assert!(c.matrix().clone().symmetric_eigenvalues().min() > 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..10 {
                let eps = nalgebra::DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
                prop_assert!(0.5 * eps.dot(&(c.matrix() * &eps)) > 0.0);
            }
        }
    }
}
