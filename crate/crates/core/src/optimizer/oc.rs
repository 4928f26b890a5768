use super::design::DesignField;
use super::sensitivity::SensitivityField;
use super::OptConfig;
use crate::error::{Error, Result};

pub const LAMBDA_MIN: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 64;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct OcStep {
    pub field: DesignField,
    pub lambda: f64,
    pub volume: f64,
    /// Sensitivities below zero that were clamped.
    pub clamped: usize,
}

fn clamp_move(x: f64, scale: f64, mu: f64, lo: f64, hi: f64) -> f64 {
    let down = ((1.0 - mu) * x).max(lo);
    let up = ((1.0 + mu) * x).min(hi);
    let t = x * scale;
    if t <= down {
        down
    } else if t >= up {
        up
    } else {
        t
    }
}

/// Updated design for a trial multiplier.
fn trial(field: &DesignField, ag: &[f64], ak: &[f64], lambda: f64, cfg: &OptConfig, elem_vol: f64) -> DesignField {
    let mut out = field.clone();
    for e in 0..field.len() {
        if !field.is_design(e) {
            continue;
        }
        let (g, k) = (field.gamma[e], field.kappa[e]);
        let bg = (ag[e] / (lambda * k * elem_vol)).powf(cfg.damping);
        let bk = (ak[e] / (lambda * g * elem_vol)).powf(cfg.damping);
        out.gamma[e] = clamp_move(g, bg, cfg.move_limit, field.rho_void, 1.0);
        out.kappa[e] = clamp_move(k, bk, cfg.move_limit, field.rho_min, field.rho_max);
    }
    out
}

/// Optimality-criteria update of both fields with one shared multiplier,
/// found by bisection (in log space) on the volume constraint.
pub fn oc_update(field: &DesignField, sens: &SensitivityField, cfg: &OptConfig, elem_vol: f64) -> Result<OcStep> {
    if sens.len() != field.len() {
        return Err(Error::DimensionMismatch { expected: field.len(), got: sens.len() });
    }
    let mut clamped = 0;
    let mut clean = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                if a < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    a
                }
            })
            .collect()
    };
    let ag = clean(&sens.gamma_hat);
    let ak = clean(&sens.kappa_hat);
    if ag.iter().chain(&ak).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sensitivities".into()));
    }
    if clamped > 0 {
        log::warn!("{clamped} negative sensitivities clamped to zero");
    }
    let target = cfg.volume_fraction;
    let tol = cfg.bisection_tol;
    let vol = |f: &DesignField| f.volume_fraction(cfg.count_frozen_volume);
    let at = |l: f64| {
        let f = trial(field, &ag, &ak, l, cfg, elem_vol);
        let v = vol(&f);
        (f, v)
    };

    let (f_lo, v_lo) = at(LAMBDA_MIN);
    if v_lo <= target + tol {
        return Ok(OcStep { field: f_lo, lambda: LAMBDA_MIN, volume: v_lo, clamped });
    }
    // every element on its lower move limit
    let (f_floor, v_floor) = at(f64::MAX);
    if v_floor > target + tol {
        // target out of reach this iteration
        return Ok(OcStep { field: f_floor, lambda: f64::MAX, volume: v_floor, clamped });
    }
    let mut lo = LAMBDA_MIN;
    let mut hi = 1.0f64.max(2.0 * LAMBDA_MIN);
    let (mut f_hi, mut v_hi) = at(hi);
    let mut doublings = 0;
    while v_hi > target + tol {
        lo = hi;
        hi *= 2.0;
        (f_hi, v_hi) = at(hi);
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::NoConvergence(format!(
                "multiplier bracket not found after {MAX_DOUBLINGS} doublings (volume {v_hi}, target {target})"
            )));
        }
    }
    if (v_hi - target).abs() <= tol {
        return Ok(OcStep { field: f_hi, lambda: hi, volume: v_hi, clamped });
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let (f, v) = at(mid);
        if (v - target).abs() <= tol {
            return Ok(OcStep { field: f, lambda: mid, volume: v, clamped });
        }
        if v > target {
            lo = mid;
        } else {
            hi = mid;
            f_hi = f;
            v_hi = v;
        }
    }
    // bracket collapsed onto a jump; keep the feasible side
    Ok(OcStep { field: f_hi, lambda: hi, volume: v_hi, clamped })
}

/// `sum_i |c_(k-i+1) - c_(k-N-i+1)| / sum_i c_(k-i+1)` over the last `2N`
/// entries, `None` while the history is shorter.
pub fn convergence_measure(history: &[f64], n: usize) -> Option<f64> {
    if n == 0 || history.len() < 2 * n {
        return None;
    }
    let k = history.len() - 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..=n {
        num += (history[k + 1 - i] - history[k + 1 - n - i]).abs();
        den += history[k + 1 - i];
    }
    Some(if den == 0.0 && num == 0.0 { 0.0 } else { num / den })
}

pub fn check_convergence(history: &[f64], n: usize, eps: f64) -> bool {
    convergence_measure(history, n).is_some_and(|m| m <= eps)
}
