use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::DesignField;
use super::material::ElementTensors;
use crate::error::{Error, Result};
use crate::fe::{Assembler, GridModel, LinearSystem};

/// Sensitivity numbers (negated compliance gradients). `gamma`/`kappa` hold
/// the raw values; `gamma_hat`/`kappa_hat` the filtered and averaged ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityField {
    pub gamma: Vec<f64>,
    pub kappa: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub kappa_hat: Vec<f64>,
}

impl SensitivityField {
    pub fn from_raw(gamma: Vec<f64>, kappa: Vec<f64>) -> Self {
        SensitivityField { gamma_hat: gamma.clone(), kappa_hat: kappa.clone(), gamma, kappa }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Adjoint sensitivities of the compliance for the solved system `sys`.
///
/// `alpha_gamma = p gamma^(p-1) u_e^T K_e(C) u_e` and
/// `alpha_kappa = gamma^p u_e^T K_e(dC/dkappa) u_e`.
pub fn sensitivities(
    asm: &Assembler,
    sys: &LinearSystem,
    field: &DesignField,
    tensors: &[Option<ElementTensors>],
    penalty: f64,
) -> Result<SensitivityField> {
    let n = field.len();
    if tensors.len() != n || sys.u.len() != asm.n_dofs() {
        return Err(Error::DimensionMismatch { expected: n, got: tensors.len() });
    }
    let active = asm.active_elements();
    let per_slot: Vec<(usize, f64, f64)> = active
        .par_iter()
        .enumerate()
        .filter(|(_, &e)| field.is_design(e))
        .map(|(slot, &e)| {
            let t = tensors[e].as_ref().expect("design element has tensors");
            let s = asm.kernel().strain_energy_matrix(&asm.element_displacement(&sys.u, slot));
            let g = field.gamma[e];
            let ag = penalty * g.powf(penalty - 1.0) * t.c.dot(&s);
            let ak = g.powf(penalty) * t.dc.dot(&s);
            (e, ag, ak)
        })
        .collect();
    let mut gamma = vec![0.0; n];
    let mut kappa = vec![0.0; n];
    for (e, ag, ak) in per_slot {
        gamma[e] = ag;
        kappa[e] = ak;
    }
    Ok(SensitivityField::from_raw(gamma, kappa))
}

/// Precomputed neighbourhoods `H_e' = r_min - dist(e, e')` of the design
/// elements.
#[derive(Debug, Clone)]
pub struct Filter {
    r_min: f64,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl Filter {
    pub fn new(grid: &GridModel, field: &DesignField, r_min: f64) -> Result<Self> {
        if !(r_min >= 0.0) || !r_min.is_finite() {
            return Err(Error::invalid(format!("filter radius must be non-negative, got {r_min}")));
        }
        if grid.n_elements() != field.len() {
            return Err(Error::DimensionMismatch { expected: grid.n_elements(), got: field.len() });
        }
        let h = grid.element_size();
        let counts = grid.counts();
        let reach: Vec<usize> = (0..3).map(|k| if k < grid.dim() { (r_min / h[k]).floor() as usize } else { 0 }).collect();
        let neighbors = (0..field.len())
            .into_par_iter()
            .map(|e| {
                if !field.is_design(e) {
                    return vec![];
                }
                let ijk = grid.element_ijk(e);
                let mut out = vec![];
                let range = |k: usize| ijk[k].saturating_sub(reach[k])..=(ijk[k] + reach[k]).min(counts[k] - 1);
                for kk in range(2) {
                    for jj in range(1) {
                        for ii in range(0) {
                            let f = grid.element_index(ii, jj, kk);
                            if !field.is_design(f) {
                                continue;
                            }
                            let d = [ii as f64 - ijk[0] as f64, jj as f64 - ijk[1] as f64, kk as f64 - ijk[2] as f64];
                            let dist = (0..3).map(|k| (d[k] * h[k]).powi(2)).sum::<f64>().sqrt();
                            if dist <= r_min {
                                out.push((f, r_min - dist));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Ok(Filter { r_min, neighbors })
    }

    pub fn neighbors(&self, e: usize) -> &[(usize, f64)] {
        &self.neighbors[e]
    }

    /// Density-weighted average of both sensitivity fields, with `rho` from
    /// `field`. Writes `gamma_hat`/`kappa_hat`.
    pub fn apply(&self, raw: &SensitivityField, field: &DesignField) -> SensitivityField {
        let smooth = |alpha: &[f64]| -> Vec<f64> {
            (0..alpha.len())
                .map(|e| {
                    let nb = &self.neighbors[e];
                    if self.r_min == 0.0 || nb.is_empty() {
                        return alpha[e];
                    }
                    let mut num = 0.0;
                    let mut hsum = 0.0;
                    for &(f, h) in nb {
                        num += field.density(f) * h * alpha[f];
                        hsum += h;
                    }
                    num / (field.density(e) * hsum)
                })
                .collect()
        };
        SensitivityField {
            gamma: raw.gamma.clone(),
            kappa: raw.kappa.clone(),
            gamma_hat: smooth(&raw.gamma),
            kappa_hat: smooth(&raw.kappa),
        }
    }
}

/// Mean of the current and previous smoothed sensitivities; the first
/// iteration passes through.
pub fn history_average(current: &SensitivityField, previous: Option<&SensitivityField>) -> SensitivityField {
    let mut out = current.clone();
    if let Some(prev) = previous {
        for (o, p) in out.gamma_hat.iter_mut().zip(&prev.gamma_hat) {
            *o = 0.5 * (*o + p);
        }
        for (o, p) in out.kappa_hat.iter_mut().zip(&prev.kappa_hat) {
            *o = 0.5 * (*o + p);
        }
    }
    out
}
