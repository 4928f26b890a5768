use latticeopt::densmap::SigmoidFit;
use latticeopt::fe::SolverKind;
use latticeopt::optimizer::{compliance_of, presets, run, Evaluator, MaterialModel, OptConfig};
use latticeopt::pann::{MaterialNet, Normalization};
use latticeopt::DesignField;
use proptest::prelude::*;

fn model(seed: u64, dim: usize) -> MaterialModel {
    let mut net = MaterialNet::new(&[8, 8], seed).unwrap();
    net.normalization = Normalization::fit(&[[0.02, 50.0, 0.2], [0.3, 400.0, 0.45]]).unwrap();
    let fit = SigmoidFit::new(0.11882, 0.91991, 0.05956).unwrap();
    MaterialModel::with_fit(net, fit, 210.0, 0.3, dim).unwrap()
}

#[test]
fn adjoint_holds_along_a_live_run() {
    let p = presets::mbb(8, 4).unwrap();
    let m = model(4, 2);
    let cfg = OptConfig { max_iter: 12, r_min: 0.3, tolerance: f64::MIN_POSITIVE, ..p.config.clone() };
    let r = run(&p.grid, &p.field, &m, &cfg).unwrap();
    assert_eq!(r.snapshots.len(), 12);
    for iter in [3, 7, 11] {
        let field = &r.snapshots[iter].1;
        let mut ev = Evaluator::new(&p.grid, field, &m, SolverKind::Direct).unwrap();
        let eval = ev.evaluate(field, cfg.penalty).unwrap();
        let sens = ev.sensitivities(&eval, field, cfg.penalty).unwrap();
        let c = |f: &DesignField| compliance_of(&p.grid, f, &m, &cfg).unwrap();
        for e in [0, 5, 13, 20, 31] {
            for kappa in [false, true] {
                let (mut fp, mut fm) = (field.clone(), field.clone());
                let h = 1e-6 * if kappa { field.kappa[e] } else { field.gamma[e] };
                if kappa {
                    fp.kappa[e] += h;
                    fm.kappa[e] -= h;
                } else {
                    fp.gamma[e] += h;
                    fm.gamma[e] -= h;
                }
                let fd = -(c(&fp) - c(&fm)) / (2.0 * h);
                let a = if kappa { sens.kappa[e] } else { sens.gamma[e] };
                assert!((a - fd).abs() <= 1e-3 * fd.abs(), "iter {iter} element {e} kappa {kappa}: {a} vs {fd}");
            }
        }
    }
}

#[test]
fn identical_runs_are_bitwise_equal() {
    let p = presets::cantilever(6, 3, 3).unwrap();
    let m = model(2, 3);
    let cfg = OptConfig { max_iter: 8, r_min: 0.5, ..p.config.clone() };
    let a = run(&p.grid, &p.field, &m, &cfg).unwrap();
    let b = run(&p.grid, &p.field, &m, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.history).unwrap(), serde_json::to_string(&b.history).unwrap());
    assert_eq!(a.field, b.field);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn feasibility_is_kept_and_bounds_hold(
        seed in 0u64..50,
        v_frac in 0.08f64..0.2,
        kappa0 in 0.1f64..0.25,
        gamma0 in 0.3f64..1.0,
    ) {
        let mut p = presets::mbb(10, 5).unwrap();
        for e in 0..p.field.len() {
            p.field.gamma[e] = gamma0;
            p.field.kappa[e] = kappa0;
        }
        let cfg = OptConfig { volume_fraction: v_frac, max_iter: 25, ..p.config.clone() };
        let r = run(&p.grid, &p.field, &model(seed, 2), &cfg).unwrap();
        for (_, f) in &r.snapshots {
            prop_assert!(f.validate().is_ok());
        }
        if let Some(k) = r.first_feasible {
            for h in &r.history[k..] {
                prop_assert!(h.volume <= v_frac + cfg.bisection_tol, "iteration {}: {} > {}", h.iter, h.volume, v_frac);
            }
        }
        prop_assert!(r.history.iter().all(|h| h.compliance.is_finite() && h.compliance > 0.0));
    }
}
