//! Full-batch AMSGrad on the squared error of the Cholesky targets.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use serde::{Deserialize, Serialize};

use super::cholesky::RATIO;
use super::dataset::{TrainingRecord, TrainingSet};
use super::net::{MaterialNet, Normalization};
use crate::dual::sigmoid;
use crate::error::{Error, Result};
use crate::simd::clear_upper_state;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `decay` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250_000,
            learning_rate: 1e-3,
            decay_every: 50_000,
            decay: 0.5,
            beta1: 0.9,
            beta2: 0.9,
            epsilon: 1e-8,
            patience: 20_000,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.learning_rate > 0.0
            && self.decay_every > 0
            && self.decay > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.eval_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LossPoint>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
    pub stopped_early: bool,
}

/// Normalized inputs (3 x n) and targets (2 x n).
struct Batch {
    x: Mat<f64>,
    t: Mat<f64>,
}

impl Batch {
    fn new(records: &[TrainingRecord], norm: &Normalization) -> Self {
        let n = records.len();
        Batch {
            x: Mat::from_fn(3, n, |k, s| (records[s].input()[k] - norm.mean[k]) / norm.scale[k]),
            t: Mat::from_fn(2, n, |k, s| records[s].target()[k]),
        }
    }

    fn len(&self) -> usize {
        self.x.ncols()
    }
}

fn weights(l: &super::net::Layer) -> MatRef<'_, f64> {
    MatRef::from_row_major_slice(&l.weights, l.rows, l.cols)
}

fn affine(l: &super::net::Layer, x: &Mat<f64>) -> Mat<f64> {
    let mut z = Mat::from_fn(l.rows, x.ncols(), |i, _| l.bias[i]);
    matmul(z.as_mut(), Accum::Add, weights(l), x.as_ref(), 1.0, Par::Seq);
    clear_upper_state();
    z
}

/// Layer activations and, per hidden layer, the softplus slopes.
fn forward(net: &MaterialNet, x: &Mat<f64>) -> (Vec<Mat<f64>>, Vec<Mat<f64>>) {
    let last = net.layers.len() - 1;
    let mut acts = vec![x.clone()];
    let mut slopes = Vec::with_capacity(last);
    for (li, l) in net.layers.iter().enumerate() {
        let mut z = affine(l, &acts[li]);
        if li < last {
            let mut s = Mat::<f64>::zeros(z.nrows(), z.ncols());
            for j in 0..z.ncols() {
                let zc = z.col_as_slice_mut(j);
                let sc = s.col_as_slice_mut(j);
                for (zi, si) in zc.iter_mut().zip(sc) {
                    let v = *zi;
                    if v > 30.0 {
                        *si = 1.0;
                    } else {
                        let e = v.exp();
                        *zi = e.ln_1p();
                        *si = e / (1.0 + e);
                    }
                }
            }
            slopes.push(s);
        }
        acts.push(z);
    }
    (acts, slopes)
}

fn head(v1: f64, v2: f64) -> (f64, f64) {
    let g44 = crate::dual::softplus(v2);
    (crate::dual::softplus(v1) + RATIO * g44, g44)
}

/// `1/(2n) sum (G - T)^2` over both outputs.
fn batch_loss(net: &MaterialNet, b: &Batch) -> f64 {
    let n = b.len();
    if n == 0 {
        return 0.0;
    }
    let (acts, _) = forward(net, &b.x);
    let v = acts.last().expect("output layer");
    let mut sum = 0.0;
    for s in 0..n {
        let (g11, g44) = head(v[(0, s)], v[(1, s)]);
        sum += (g11 - b.t[(0, s)]).powi(2) + (g44 - b.t[(1, s)]).powi(2);
    }
    sum / (2.0 * n as f64)
}

/// Per-layer `(dW, db)` with `dW` row-major.
pub type Gradient = Vec<(Vec<f64>, Vec<f64>)>;

fn loss_and_grad_batch(net: &MaterialNet, b: &Batch) -> (f64, Gradient) {
    let n = b.len();
    let (acts, slopes) = forward(net, &b.x);
    let v = acts.last().expect("output layer");
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut delta = Mat::<f64>::zeros(2, n);
    for s in 0..n {
        let (v1, v2) = (v[(0, s)], v[(1, s)]);
        let (g11, g44) = head(v1, v2);
        let (r11, r44) = (g11 - b.t[(0, s)], g44 - b.t[(1, s)]);
        loss += r11 * r11 + r44 * r44;
        let (d11, d44) = (r11 * inv, r44 * inv);
        delta[(0, s)] = d11 * sigmoid(v1);
        delta[(1, s)] = (d44 + RATIO * d11) * sigmoid(v2);
    }
    loss *= 0.5 * inv;

    let mut grads: Gradient = Vec::with_capacity(net.layers.len());
    for li in (0..net.layers.len()).rev() {
        let l = &net.layers[li];
        let mut dw = Mat::<f64>::zeros(l.rows, l.cols);
        matmul(dw.as_mut(), Accum::Replace, delta.as_ref(), acts[li].transpose(), 1.0, Par::Seq);
        clear_upper_state();
        let db: Vec<f64> = (0..l.rows).map(|i| (0..n).map(|s| delta[(i, s)]).sum()).collect();
        let dw_rows: Vec<f64> = (0..l.rows * l.cols).map(|k| dw[(k / l.cols, k % l.cols)]).collect();
        grads.push((dw_rows, db));
        if li > 0 {
            let mut prev = Mat::<f64>::zeros(l.cols, n);
            matmul(prev.as_mut(), Accum::Replace, weights(l).transpose(), delta.as_ref(), 1.0, Par::Seq);
            clear_upper_state();
            let sl = &slopes[li - 1];
            for j in 0..n {
                let sc = sl.col_as_slice(j);
                for (p, s) in prev.col_as_slice_mut(j).iter_mut().zip(sc) {
                    *p *= s;
                }
            }
            delta = prev;
        }
    }
    grads.reverse();
    (loss, grads)
}

/// Loss and its gradient with respect to every weight and bias, using the
/// network's stored normalization.
pub fn loss_and_grad(net: &MaterialNet, records: &[TrainingRecord]) -> Result<(f64, Gradient)> {
    if records.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(loss_and_grad_batch(net, &Batch::new(records, &net.normalization)))
}

pub fn mse(net: &MaterialNet, records: &[TrainingRecord]) -> f64 {
    batch_loss(net, &Batch::new(records, &net.normalization))
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    vmax: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments { m: vec![0.0; n], v: vec![0.0; n], vmax: vec![0.0; n] }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            self.vmax[k] = self.vmax[k].max(self.v[k]);
            params[k] -= lr * self.m[k] / (self.vmax[k].sqrt() + cfg.epsilon);
        }
    }
}

/// Trains a copy of `net` on `set.train`, fitting the input normalization to
/// the training split first. Keeps the weights with the best validation loss
/// (training loss when there is no validation split).
pub fn train(net: &MaterialNet, set: &TrainingSet, cfg: &TrainConfig) -> Result<(MaterialNet, TrainReport)> {
    cfg.validate()?;
    if set.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut net = net.clone();
    let inputs: Vec<[f64; 3]> = set.train.iter().map(|r| r.input()).collect();
    net.normalization = Normalization::fit(&inputs)?;
    let tb = Batch::new(&set.train, &net.normalization);
    let vb = Batch::new(&set.validation, &net.normalization);
    let has_val = vb.len() > 0;

    let mut moments: Vec<(Moments, Moments)> =
        net.layers.iter().map(|l| (Moments::new(l.weights.len()), Moments::new(l.bias.len()))).collect();
    let initial_loss = batch_loss(&net, &tb);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, net.clone());
    let mut lr = cfg.learning_rate;
    let mut epochs_run = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % cfg.decay_every == 0 {
            lr *= cfg.decay;
        }
        let (loss, grads) = loss_and_grad_batch(&net, &tb);
        if !loss.is_finite() || grads.iter().any(|(w, b)| w.iter().chain(b).any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch} (loss {loss}, lr {lr})")));
        }
        if epoch % cfg.eval_every == 0 {
            let val = has_val.then(|| batch_loss(&net, &vb));
            history.push(LossPoint { epoch, train: loss, validation: val });
            let score = val.unwrap_or(loss);
            if score < best.0 {
                best = (score, epoch, net.clone());
            } else if epoch - best.1 >= cfg.patience {
                log::info!("validation loss stalled since epoch {}, stopping at {epoch}", best.1);
                stopped_early = true;
                epochs_run = epoch;
                break;
            }
            if epoch % (cfg.eval_every * 100) == 0 {
                log::debug!("epoch {epoch}: train {loss:.3e} validation {val:?}");
            }
        }
        for (l, ((gw, gb), (mw, mb))) in net.layers.iter_mut().zip(grads.iter().zip(moments.iter_mut())) {
            mw.step(&mut l.weights, gw, lr, cfg);
            mb.step(&mut l.bias, gb, lr, cfg);
        }
        epochs_run = epoch + 1;
    }

    let last = batch_loss(&net, &tb);
    let last_val = has_val.then(|| batch_loss(&net, &vb));
    if last_val.unwrap_or(last) < best.0 {
        best = (last_val.unwrap_or(last), epochs_run, net.clone());
    }
    let mut net = best.2;
    let train_mse = batch_loss(&net, &tb);
    let validation_mse = has_val.then(|| batch_loss(&net, &vb));
    net.meta.rve_seed = Some(set.rve_seed);
    net.meta.epochs_run = epochs_run;
    net.meta.best_epoch = best.1;
    net.meta.train_mse = Some(train_mse);
    net.meta.validation_mse = validation_mse;
    let report = TrainReport { history, epochs_run, best_epoch: best.1, initial_loss, train_mse, validation_mse, stopped_early };
    Ok((net, report))
}
