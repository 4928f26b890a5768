//! Relaxed two-field minimum-compliance optimization.
//!
//! Each element carries a topology variable `gamma` (penalized, pushed
//! towards 0 or 1) and a lattice density `kappa` (graded between the
//! manufacturable bounds). One optimality-criteria step updates both under a
//! single volume constraint on `gamma kappa`.

mod design;
mod material;
mod oc;
pub mod presets;
mod sensitivity;

pub use design::{DesignField, ElementRole, RHO_VOID};
pub use material::{penalized_tensor, ElementTensors, MaterialModel};
pub use oc::{check_convergence, convergence_measure, oc_update, OcStep, LAMBDA_MIN};
pub use sensitivity::{history_average, sensitivities, Filter, SensitivityField};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::{compliance, Assembler, GridModel, SolverKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub penalty: f64,
    pub r_min: f64,
    pub move_limit: f64,
    pub damping: f64,
    pub volume_fraction: f64,
    /// Convergence tolerance on the relative compliance change.
    pub tolerance: f64,
    /// Convergence window; the check spans `2 * window` iterations.
    pub window: usize,
    pub max_iter: usize,
    pub bisection_tol: f64,
    /// Count frozen-solid elements in the volume fraction.
    pub count_frozen_volume: bool,
    /// Keep a design snapshot every this many iterations (0 keeps none).
    pub snapshot_every: usize,
    pub solver: SolverKind,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            penalty: 3.0,
            r_min: 0.06,
            move_limit: 0.05,
            damping: 0.5,
            volume_fraction: 0.15,
            tolerance: 1e-4,
            window: 5,
            max_iter: 100,
            bisection_tol: 1e-6,
            count_frozen_volume: false,
            snapshot_every: 1,
            solver: SolverKind::Direct,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.penalty > 1.0, "penalty must exceed 1"),
            (self.r_min >= 0.0 && self.r_min.is_finite(), "filter radius must be non-negative"),
            (self.move_limit > 0.0 && self.move_limit < 1.0, "move limit must lie in (0, 1)"),
            (self.damping > 0.0 && self.damping <= 1.0, "damping must lie in (0, 1]"),
            (self.volume_fraction > 0.0 && self.volume_fraction <= 1.0, "volume fraction must lie in (0, 1]"),
            (self.tolerance > 0.0, "convergence tolerance must be positive"),
            (self.window >= 1, "convergence window must be at least 1"),
            (self.max_iter >= 1, "need at least one iteration"),
            (self.bisection_tol > 0.0, "bisection tolerance must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(*msg)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub compliance: f64,
    /// Volume fraction of the design the compliance belongs to.
    pub volume: f64,
    /// Multiplier of the update that followed (0 when none was made).
    pub lambda: f64,
    pub convergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRun {
    pub history: Vec<IterationRecord>,
    pub snapshots: Vec<(usize, DesignField)>,
    /// Design of the last evaluated iteration.
    pub field: DesignField,
    pub compliance: f64,
    pub converged: bool,
    pub iterations: usize,
    /// First iteration whose design satisfied the volume constraint.
    pub first_feasible: Option<usize>,
}

impl OptRun {
    pub fn final_volume(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.volume)
    }
}

/// Reusable solver state for one grid and one material.
pub struct Evaluator<'a> {
    pub grid: GridModel,
    pub model: &'a MaterialModel,
    pub asm: Assembler,
}

/// Compliance, solved system and element tensors of one design.
pub struct Evaluation {
    pub compliance: f64,
    pub system: crate::fe::LinearSystem,
    pub tensors: Vec<Option<ElementTensors>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(grid: &GridModel, field: &DesignField, model: &'a MaterialModel, solver: SolverKind) -> Result<Self> {
        if grid.n_elements() != field.len() {
            return Err(Error::DimensionMismatch { expected: grid.n_elements(), got: field.len() });
        }
        if grid.dim() != model.dim {
            return Err(Error::DimensionMismatch { expected: grid.dim(), got: model.dim });
        }
        let mut grid = grid.clone();
        let mask: Vec<bool> = grid.active_mask().iter().zip(field.active_mask()).map(|(&a, b)| a && b).collect();
        grid.set_active_mask(mask)?;
        let asm = Assembler::new(&grid, solver)?;
        Ok(Evaluator { grid, model, asm })
    }

    pub fn evaluate(&mut self, field: &DesignField, penalty: f64) -> Result<Evaluation> {
        let tensors = self.model.evaluate(field)?;
        let mats = self.model.penalized(field, &tensors, penalty)?;
        let system = self.asm.solve(&mats)?;
        Ok(Evaluation { compliance: compliance(&system), system, tensors })
    }

    pub fn sensitivities(&self, eval: &Evaluation, field: &DesignField, penalty: f64) -> Result<SensitivityField> {
        sensitivities(&self.asm, &eval.system, field, &eval.tensors, penalty)
    }
}

/// Compliance of a single design.
pub fn compliance_of(grid: &GridModel, field: &DesignField, model: &MaterialModel, cfg: &OptConfig) -> Result<f64> {
    Ok(Evaluator::new(grid, field, model, cfg.solver)?.evaluate(field, cfg.penalty)?.compliance)
}

/// Compliance of the uniform design `gamma = 1`, `kappa = V_frac` on the
/// roles of `field`.
pub fn baseline_compliance(grid: &GridModel, field: &DesignField, model: &MaterialModel, cfg: &OptConfig) -> Result<f64> {
    let mut base = field.clone();
    for e in 0..base.len() {
        if base.is_design(e) {
            base.gamma[e] = 1.0;
            base.kappa[e] = cfg.volume_fraction;
        }
    }
    base.validate().map_err(|e| Error::invalid(format!("uniform baseline is not admissible: {e}")))?;
    compliance_of(grid, &base, model, cfg)
}

/// Runs the optimization from `field0` until the compliance history settles
/// with the volume constraint met, or `max_iter` designs were evaluated.
pub fn run(grid: &GridModel, field0: &DesignField, model: &MaterialModel, cfg: &OptConfig) -> Result<OptRun> {
    cfg.validate()?;
    field0.validate()?;
    let mut ev = Evaluator::new(grid, field0, model, cfg.solver)?;
    let filter = Filter::new(grid, field0, cfg.r_min)?;
    let elem_vol = grid.element_volume();

    let mut field = field0.clone();
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut compliances = Vec::new();
    let mut snapshots = Vec::new();
    let mut previous: Option<SensitivityField> = None;
    let mut first_feasible = None;
    let mut converged = false;

    for iter in 0..cfg.max_iter {
        let eval = ev.evaluate(&field, cfg.penalty).map_err(|e| annotate(e, iter))?;
        let c = eval.compliance;
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("compliance at iteration {iter}")));
        }
        let volume = field.volume_fraction(cfg.count_frozen_volume);
        let feasible = volume <= cfg.volume_fraction + cfg.bisection_tol;
        if feasible && first_feasible.is_none() {
            first_feasible = Some(iter);
        }
        if cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0 {
            snapshots.push((iter, field.clone()));
        }
        compliances.push(c);
        let measure = convergence_measure(&compliances, cfg.window);
        let mut record = IterationRecord { iter, compliance: c, volume, lambda: 0.0, convergence: measure };
        if c == 0.0 || (feasible && measure.is_some_and(|m| m <= cfg.tolerance)) {
            history.push(record);
            converged = true;
            break;
        }
        if iter + 1 == cfg.max_iter {
            history.push(record);
            break;
        }
        let raw = ev.sensitivities(&eval, &field, cfg.penalty).map_err(|e| annotate(e, iter))?;
        let smooth = filter.apply(&raw, &field);
        let avg = history_average(&smooth, previous.as_ref());
        let step = oc_update(&field, &avg, cfg, elem_vol).map_err(|e| annotate(e, iter))?;
        record.lambda = step.lambda;
        log::info!("iter {iter}: compliance {c:.6e} volume {volume:.6} lambda {:.4e}", step.lambda);
        history.push(record);
        previous = Some(avg);
        field = step.field;
    }
    let last = history.last().expect("at least one iteration");
    Ok(OptRun { compliance: last.compliance, iterations: history.len(), history, snapshots, field, converged, first_feasible })
}

fn annotate(e: Error, iter: usize) -> Error {
    match e {
        Error::Singular(m) => Error::Singular(format!("iteration {iter}: {m}")),
        Error::NonFinite(m) => Error::NonFinite(format!("iteration {iter}: {m}")),
        Error::NoConvergence(m) => Error::NoConvergence(format!("iteration {iter}: {m}")),
        other => other,
    }
}
