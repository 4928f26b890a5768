use std::path::Path;

use latticeopt::densmap::{fit_sigmoid, sample_sweep, DensitySample};
use latticeopt::isotropy::{effective_moduli, project_isotropic, relative_anisotropy};
use latticeopt::optimizer::{self, baseline_compliance, presets, MaterialModel, OptRun};
use latticeopt::pann::{generate_dataset, stiffness_matrix, train, TrainReport, TrainingSet};
use latticeopt::rve::{generate_rve_with, homogenize_with, RveParams};
use latticeopt::{BeamMaterial, DesignField, MaterialNet, RveModel, SigmoidFit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::export::{self, num};
use crate::voxel::VoxelMask;

fn ensure_output(cfg: &RunConfig) -> CliResult<()> {
    let out = &cfg.paths.output;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn io_at(path: &Path) -> impl Fn(CliError) -> CliError + '_ {
    move |e| match e {
        CliError::Io { path: p, source } if p.as_os_str().is_empty() => CliError::io(path, source),
        other => other,
    }
}

pub fn obtain_rve(cfg: &RunConfig) -> CliResult<RveModel> {
    if let Some(p) = &cfg.rve.file {
        return RveModel::load(p).map_err(CliError::from).map_err(io_at(p));
    }
    let params = RveParams {
        seed: cfg.seeds.rve,
        target_cells: cfg.rve.cells,
        strut_length: cfg.rve.strut_length,
        tol_len: cfg.rve.tol_len,
        ..Default::default()
    };
    Ok(generate_rve_with(&params)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizeRow {
    pub a: f64,
    pub e: f64,
    pub nu: f64,
    /// upper triangle of the 6x6 stiffness, row by row
    pub c: Vec<f64>,
    pub delta_iso: f64,
    pub e_star: f64,
    pub nu_star: f64,
    pub hill_error: f64,
}

/// Homogenizes the lattice over the configured parameter grid and writes
/// `homogenize.csv` and `rve.json`.
pub fn homogenize(cfg: &RunConfig) -> CliResult<Vec<HomogenizeRow>> {
    ensure_output(cfg)?;
    let rve = obtain_rve(cfg)?;
    let rve_path = cfg.paths.output.join("rve.json");
    rve.save(&rve_path).map_err(CliError::from).map_err(io_at(&rve_path))?;
    let g = &cfg.homogenize.grid;
    let mut rows = vec![];
    for &a in &g.aspect {
        for &e in &g.youngs {
            for &nu in &g.poisson {
                let mat = BeamMaterial::from_aspect(e, nu, a, rve.mean_strut_length())?;
                let rep = homogenize_with(&rve, &mat, cfg.homogenize.eps_star)?;
                let c = &rep.stiffness;
                let (e_star, nu_star) = effective_moduli(&project_isotropic(c)?)?;
                let m = c.matrix();
                rows.push(HomogenizeRow {
                    a,
                    e,
                    nu,
                    c: (0..6).flat_map(|i| (i..6).map(move |j| m[(i, j)])).collect(),
                    delta_iso: relative_anisotropy(c)?,
                    e_star,
                    nu_star,
                    hill_error: rep.cases.iter().map(|l| l.hill_error()).fold(0.0, f64::max),
                });
            }
        }
    }
    let path = cfg.paths.output.join("homogenize.csv");
    let mut w = export::csv_writer(&path, &cfg.hash())?;
    let mut header: Vec<String> = ["a", "E", "nu"].map(String::from).to_vec();
    header.extend((1..=6).flat_map(|i| (i..=6).map(move |j| format!("C{i}{j}"))));
    header.extend(["delta_iso", "E_star", "nu_star", "hill_error"].map(String::from));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![num(r.a), num(r.e), num(r.nu)];
        rec.extend(r.c.iter().copied().map(num));
        rec.extend([num(r.delta_iso), num(r.e_star), num(r.nu_star), num(r.hill_error)]);
        w.write_record(&rec)?;
    }
    export::finish(w, &path)?;
    Ok(rows)
}

/// Monte Carlo density sweep and sigmoid fit; writes `density_fit.json` and
/// `density_samples.csv`.
pub fn fit_density(cfg: &RunConfig) -> CliResult<(SigmoidFit, Vec<DensitySample>)> {
    ensure_output(cfg)?;
    let rve = obtain_rve(cfg)?;
    let samples = sample_sweep(&rve, &cfg.density.aspects, cfg.density.batch, cfg.seeds.density)?;
    let fit = fit_sigmoid(&samples)?;
    let hash = cfg.hash();
    let path = cfg.paths.output.join("density_samples.csv");
    let mut w = export::csv_writer(&path, &hash)?;
    w.write_record(["aspect", "kappa", "points", "seed"])?;
    for s in &samples {
        w.write_record([num(s.aspect), num(s.kappa), s.points.to_string(), s.seed.to_string()])?;
    }
    export::finish(w, &path)?;
    export::write_json(&cfg.paths.output.join("density_fit.json"), &fit)?;
    if cfg.checks.enabled {
        check_fit(&fit, cfg.checks.max_fit_rms)?;
    }
    Ok((fit, samples))
}

pub fn check_fit(fit: &SigmoidFit, max_rms: f64) -> CliResult<()> {
    let (a0, _) = fit.aspect(0.0)?;
    if a0 != 0.0 {
        return Err(CliError::Invariant(format!("density map gives a(0) = {a0:e}")));
    }
    if !(fit.rms <= max_rms) {
        return Err(CliError::Invariant(format!("density fit RMS {:.3e} exceeds {max_rms:e}", fit.rms)));
    }
    Ok(())
}

fn load_fit(path: &Path) -> CliResult<SigmoidFit> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let f: SigmoidFit = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(SigmoidFit { rms: f.rms, ..SigmoidFit::new(f.c1, f.c2, f.c3)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub records: usize,
    pub train_records: usize,
    pub validation_records: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
    pub stopped_early: bool,
}

/// Builds (or reads) the dataset, trains the network and writes `net.json`,
/// `dataset.csv`, `loss.csv` and `train_summary.json`. The density map is
/// read from `density_fit.json` when present and computed otherwise.
pub fn train_net(cfg: &RunConfig) -> CliResult<(MaterialNet, TrainReport)> {
    ensure_output(cfg)?;
    let fit_path = cfg.density_fit_path();
    let mut rve = None;
    let fit = if fit_path.exists() {
        load_fit(&fit_path)?
    } else {
        let r = obtain_rve(cfg)?;
        let samples = sample_sweep(&r, &cfg.density.aspects, cfg.density.batch, cfg.seeds.density)?;
        let fit = fit_sigmoid(&samples)?;
        export::write_json(&cfg.paths.output.join("density_fit.json"), &fit)?;
        rve = Some(r);
        fit
    };
    let set = match &cfg.dataset.file {
        Some(p) => {
            let records = export::read_dataset(p)?;
            let seed = records.first().map(|r| r.rve_seed).unwrap_or(cfg.seeds.rve);
            TrainingSet::split(records, cfg.seeds.split, seed, cfg.homogenize.eps_star)?
        }
        None => {
            let r = match rve {
                Some(r) => r,
                None => obtain_rve(cfg)?,
            };
            generate_dataset(&r, &cfg.dataset.grid, cfg.seeds.split)?
        }
    };
    let hash = cfg.hash();
    export::write_dataset(&cfg.paths.output.join("dataset.csv"), &hash, set.records())?;
    let (mut net, report) = train(&MaterialNet::standard(cfg.seeds.init), &set, &cfg.train)?;
    net.density_map = Some(fit);
    export::write_loss(&cfg.paths.output.join("loss.csv"), &hash, &report.history)?;
    let net_path = cfg.net_path();
    net.save(&net_path).map_err(CliError::from).map_err(io_at(&net_path))?;
    let summary = TrainSummary {
        config_hash: hash,
        records: set.len(),
        train_records: set.train.len(),
        validation_records: set.validation.len(),
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        initial_loss: report.initial_loss,
        train_mse: report.train_mse,
        validation_mse: report.validation_mse,
        stopped_early: report.stopped_early,
    };
    export::write_json(&cfg.paths.output.join("train_summary.json"), &summary)?;
    if cfg.checks.enabled {
        let finite = report.history.iter().all(|p| p.train.is_finite() && p.validation.is_none_or(f64::is_finite));
        if !finite {
            return Err(CliError::Invariant("loss history contains non-finite values".into()));
        }
        check_net(&net, &cfg.dataset.grid, cfg.checks.probes, cfg.seeds.init)?;
    }
    Ok((net, report))
}

/// Network outputs on random inputs from the bounding box of `grid` must be
/// admissible and give positive definite stiffness tensors; a JSON round
/// trip must reproduce the outputs bitwise.
pub fn check_net(net: &MaterialNet, grid: &latticeopt::pann::ParamGrid, probes: usize, seed: u64) -> CliResult<()> {
    let span = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let ranges = [span(&grid.aspect), span(&grid.youngs), span(&grid.poisson)];
    let back = MaterialNet::from_json(&net.to_json()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let p: [f64; 3] = std::array::from_fn(|k| {
            let (lo, hi) = ranges[k];
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        });
        let pair = net.forward(p);
        if !pair.is_admissible() {
            return Err(CliError::Invariant(format!("network output at {p:?} violates the constraint: {pair:?}")));
        }
        if stiffness_matrix(&pair).cholesky().is_none() {
            return Err(CliError::Invariant(format!("stiffness at {p:?} is not positive definite")));
        }
        let q = back.forward(p);
        if q.g11.to_bits() != pair.g11.to_bits() || q.g44.to_bits() != pair.g44.to_bits() {
            return Err(CliError::Invariant("reloaded network changes its outputs".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptSummary {
    pub config_hash: String,
    pub problem: String,
    pub elements: usize,
    pub design_elements: usize,
    pub iterations: usize,
    pub converged: bool,
    pub compliance: f64,
    pub baseline_compliance: f64,
    /// `1 - c / c_baseline`
    pub improvement: f64,
    pub volume_fraction: f64,
    pub volume_target: f64,
    pub constraint_active: bool,
    pub first_feasible: Option<usize>,
    pub binary_fraction: f64,
    pub void_fraction: f64,
}

/// Builds the configured problem: a preset or a voxel mask with its
/// supports and loads, then the bound and start overrides.
pub fn build_problem(cfg: &RunConfig) -> CliResult<presets::Problem> {
    let s = &cfg.optimize;
    let mut p = match s.problem.as_str() {
        "voxel" => {
            let path = s.mask.as_ref().ok_or_else(|| CliError::Config("voxel problems need optimize.mask".into()))?;
            let mask = VoxelMask::load(path)?;
            let mut grid = mask.grid()?;
            let dim = grid.dim();
            if s.supports.is_empty() || s.loads.is_empty() {
                return Err(CliError::Config("voxel problems need optimize.supports and optimize.loads".into()));
            }
            let tol = 1e-9 * mask.edge;
            for sup in &s.supports {
                if sup.dofs.iter().any(|&d| d >= dim) {
                    return Err(CliError::Config(format!("support dof out of range for a {dim}D grid")));
                }
                let nodes = grid.nodes_where(|x| (0..dim).all(|k| x[k] >= sup.min[k] - tol && x[k] <= sup.max[k] + tol));
                if nodes.is_empty() {
                    return Err(CliError::Config(format!("support box {:?}..{:?} contains no nodes", sup.min, sup.max)));
                }
                for n in nodes {
                    for &d in &sup.dofs {
                        grid.fix(n, d, 0.0);
                    }
                }
            }
            for l in &s.loads {
                if l.dof >= dim {
                    return Err(CliError::Config(format!("load dof out of range for a {dim}D grid")));
                }
                grid.add_load(grid.nearest_node(l.at), l.dof, l.value);
            }
            let (lo, hi) = match (s.rho_min, s.rho_max) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(CliError::Config("voxel problems need optimize.rho_min and optimize.rho_max".into())),
            };
            let field = DesignField::uniform(grid.n_elements(), 1.0, hi, lo, hi)?.with_roles(mask.roles)?;
            presets::Problem { name: "voxel".into(), grid, field, config: Default::default() }
        }
        name => {
            if !s.supports.is_empty() || !s.loads.is_empty() || s.mask.is_some() {
                return Err(CliError::Config("supports, loads and mask only apply to voxel problems".into()));
            }
            presets::by_name(name, s.counts)?
        }
    };
    let f = &mut p.field;
    f.rho_min = s.rho_min.unwrap_or(f.rho_min);
    f.rho_max = s.rho_max.unwrap_or(f.rho_max);
    for e in 0..f.len() {
        if f.is_design(e) {
            f.gamma[e] = s.gamma0.unwrap_or(f.gamma[e]);
            f.kappa[e] = s.kappa0.unwrap_or(f.kappa[e]);
        }
    }
    f.validate()?;
    p.config = s.apply(&p.config);
    p.config.validate()?;
    Ok(p)
}

/// Runs the optimizer and writes `history.csv`, `field_final.vtk` (plus
/// `field_NNNN.vtk` every `vtk_every` iterations), `field.json` and
/// `summary.json`.
pub fn optimize(cfg: &RunConfig) -> CliResult<(OptSummary, OptRun)> {
    ensure_output(cfg)?;
    let mut p = build_problem(cfg)?;
    let net_path = cfg.net_path();
    if !net_path.exists() {
        return Err(CliError::Config(format!("no material network at {} (run train first)", net_path.display())));
    }
    let net = MaterialNet::load(&net_path).map_err(CliError::from).map_err(io_at(&net_path))?;
    let model = MaterialModel::new(net, cfg.material.youngs, cfg.material.poisson, p.grid.dim())?;
    p.config.snapshot_every = if cfg.checks.enabled { 1 } else { cfg.optimize.vtk_every };
    let base = baseline_compliance(&p.grid, &p.field, &model, &p.config)?;
    let run = optimizer::run(&p.grid, &p.field, &model, &p.config)?;

    let hash = cfg.hash();
    let out = &cfg.paths.output;
    export::write_history(&out.join("history.csv"), &hash, &run.history)?;
    if cfg.optimize.vtk_every > 0 {
        for (iter, field) in run.snapshots.iter().filter(|(i, _)| i % cfg.optimize.vtk_every == 0) {
            export::write_vtk(&out.join(format!("field_{iter:04}.vtk")), &hash, &p.grid, field)?;
        }
    }
    export::write_vtk(&out.join("field_final.vtk"), &hash, &p.grid, &run.field)?;
    export::write_json(&out.join("field.json"), &run.field)?;

    let field = &run.field;
    let design: Vec<usize> = (0..field.len()).filter(|&e| field.is_design(e)).collect();
    let volume = run.final_volume();
    let cfg_o = &p.config;
    let summary = OptSummary {
        config_hash: hash,
        problem: p.name.clone(),
        elements: p.grid.n_elements(),
        design_elements: design.len(),
        iterations: run.iterations,
        converged: run.converged,
        compliance: run.compliance,
        baseline_compliance: base,
        improvement: 1.0 - run.compliance / base,
        volume_fraction: volume,
        volume_target: cfg_o.volume_fraction,
        constraint_active: (volume - cfg_o.volume_fraction).abs() <= 10.0 * cfg_o.bisection_tol,
        first_feasible: run.first_feasible,
        binary_fraction: field.binary_fraction(),
        void_fraction: design.iter().filter(|&&e| field.density(e) < field.rho_min).count() as f64 / design.len() as f64,
    };
    export::write_json(&out.join("summary.json"), &summary)?;
    if cfg.checks.enabled {
        check_run(&run, cfg_o.volume_fraction, cfg_o.bisection_tol)?;
    }
    Ok((summary, run))
}

/// Bounds of every recorded iterate and monotone feasibility.
pub fn check_run(run: &OptRun, v_frac: f64, tol: f64) -> CliResult<()> {
    for (iter, f) in &run.snapshots {
        f.validate().map_err(|e| CliError::Invariant(format!("iteration {iter}: {e}")))?;
    }
    run.field.validate().map_err(|e| CliError::Invariant(format!("final design: {e}")))?;
    if let Some(k) = run.first_feasible {
        if let Some(h) = run.history[k..].iter().find(|h| h.volume > v_frac + tol) {
            return Err(CliError::Invariant(format!(
                "volume {} exceeds {v_frac} at iteration {} after becoming feasible",
                h.volume, h.iter
            )));
        }
    }
    if run.history.iter().any(|h| !h.compliance.is_finite()) {
        return Err(CliError::Invariant("non-finite compliance in history".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub result: Result<(), String>,
}

/// Re-checks the artifacts found in the output directory. Fails with an
/// invariant error if any check fails.
pub fn validate(cfg: &RunConfig) -> CliResult<Vec<CheckOutcome>> {
    let mut out = vec![CheckOutcome { name: "config".into(), result: Ok(()) }];
    let mut push = |name: &str, r: CliResult<()>| out.push(CheckOutcome { name: name.into(), result: r.map_err(|e| e.to_string()) });
    let fit_path = cfg.density_fit_path();
    if fit_path.exists() {
        push("density_fit", load_fit(&fit_path).and_then(|f| check_fit(&f, cfg.checks.max_fit_rms)));
    }
    let net_path = cfg.net_path();
    if net_path.exists() {
        let r = MaterialNet::load(&net_path)
            .map_err(CliError::from)
            .and_then(|n| check_net(&n, &cfg.dataset.grid, cfg.checks.probes, cfg.seeds.init));
        push("network", r);
    }
    let field_path = cfg.paths.output.join("field.json");
    if field_path.exists() {
        let r = std::fs::read_to_string(&field_path)
            .map_err(|e| CliError::io(&field_path, e))
            .and_then(|t| serde_json::from_str::<DesignField>(&t).map_err(|e| CliError::Config(e.to_string())))
            .and_then(|f| f.validate().map_err(|e| CliError::Invariant(e.to_string())));
        push("design_field", r);
    }
    let summary_path = cfg.paths.output.join("summary.json");
    if summary_path.exists() {
        let r = std::fs::read_to_string(&summary_path)
            .map_err(|e| CliError::io(&summary_path, e))
            .and_then(|t| serde_json::from_str::<OptSummary>(&t).map_err(|e| CliError::Config(e.to_string())))
            .and_then(|s| {
                if s.volume_fraction <= s.volume_target + 1e-6 && s.compliance.is_finite() {
                    Ok(())
                } else {
                    Err(CliError::Invariant(format!("final volume {} above target {}", s.volume_fraction, s.volume_target)))
                }
            });
        push("summary", r);
    }
    Ok(out)
}
