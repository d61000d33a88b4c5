use cardiotwin_core::exec::Sequential;
use cardiotwin_core::neural::TrainConfig;
use cardiotwin_core::params::{FixedParams, LvadParams, ParamBounds, PatientParams, N_LEARNABLE};
use cardiotwin_core::pipeline::{
    backbone_network, ef_mae_points, fit_surrogate, lvad_run, omega_sweep, predict_twin, pretrain_surrogate,
    run_lvad_trial, spearman, surrogate_network, surrogate_volumes, twin_from_params,
};
use cardiotwin_core::solver::{simulate, SimSettings};
use cardiotwin_core::synthetic::{pretext_example, MEASUREMENT_DIM};
use cardiotwin_core::{ed_es_volumes, ejection_fraction};
use proptest::prelude::*;

fn settings() -> SimSettings {
    SimSettings::default()
}

fn baseline_ef(p: &PatientParams) -> f64 {
    ejection_fraction(&ed_es_volumes(&simulate(p, None, &settings()).unwrap()).unwrap()).unwrap()
}

#[test]
fn closed_pump_branch_leaves_ef_unchanged() {
    let p = PatientParams::REFERENCE;
    let lvad = LvadParams { p_bar: 500.0, ..LvadParams::default() };
    let run = lvad_run(&p, &lvad, &settings()).unwrap();
    let diff = (run.ef - baseline_ef(&p)).abs();
    assert!(diff < 0.02, "EF difference {diff}");
}

#[test]
fn sweep_and_trial_agree_at_zero_speed() {
    let p = PatientParams::REFERENCE;
    let lvad = LvadParams::default();
    let sweep = omega_sweep(&p, &lvad, &[0.0], &settings()).unwrap();
    let sweep_ef = sweep[0].outcome.as_ref().unwrap().ef;
    let trial = run_lvad_trial(&[p], &lvad.with_constant_omega(0.0), &settings(), &Sequential).unwrap();
    assert_eq!(sweep_ef, trial.rows[0].ef_lvad);
    assert_eq!(trial.rows[0].ef_baseline, baseline_ef(&p));
}

#[test]
fn forward_pump_flow_raises_reference_ef() {
    let p = PatientParams::REFERENCE;
    let rows = omega_sweep(&p, &LvadParams::default(), &[14000.0, 0.0], &settings()).unwrap();
    assert_eq!(rows[0].omega, 0.0);
    let (off, on) = (rows[0].outcome.as_ref().unwrap(), rows[1].outcome.as_ref().unwrap());
    assert!(on.min_pump_flow > 0.0, "pump flow reverses at 14000: {}", on.min_pump_flow);
    assert!(off.mean_pump_flow < 0.0);
    assert!(on.ef > off.ef, "{} vs {}", on.ef, off.ef);
    assert!(on.edes.v_ed < baseline_v_ed(&p));
}

fn baseline_v_ed(p: &PatientParams) -> f64 {
    ed_es_volumes(&simulate(p, None, &settings()).unwrap()).unwrap().v_ed
}

#[test]
fn invalid_sweep_levels_rejected() {
    let p = PatientParams::REFERENCE;
    let l = LvadParams::default();
    assert!(omega_sweep(&p, &l, &[], &settings()).is_err());
    assert!(omega_sweep(&p, &l, &[-1.0], &settings()).is_err());
    assert!(omega_sweep(&p, &l, &[f64::NAN], &settings()).is_err());
    assert!(run_lvad_trial(&[], &l, &settings(), &Sequential).is_err());
}

#[test]
fn surrogate_memorizes_a_repeated_example() {
    let bounds = ParamBounds::default();
    let ex = pretext_example(&PatientParams::REFERENCE, &settings()).unwrap();
    let train = vec![ex; 100];
    let cfg = TrainConfig { epochs: 300, batch_size: 20, learning_rate: 1e-3, seed: 1, ..TrainConfig::default() };
    let report = fit_surrogate(surrogate_network(&bounds, 1).unwrap(), &train, &[ex], &cfg).unwrap();
    let [v_ed, v_es] = surrogate_volumes(&report.net, &ex.theta).unwrap();
    assert!((v_ed - ex.v_ed).abs() < 0.1 && (v_es - ex.v_es).abs() < 0.1, "{v_ed} {v_es} vs {ex:?}");
    assert!(report.metrics.eval_ef_mae < 0.1);
}

#[test]
fn surrogate_needs_enough_examples() {
    let ex = pretext_example(&PatientParams::REFERENCE, &settings()).unwrap();
    assert!(pretrain_surrogate(&vec![ex; 10], &[ex], &ParamBounds::default(), &TrainConfig::default()).is_err());
}

#[test]
fn twin_prediction_is_deterministic_and_closes() {
    let bounds = ParamBounds::default();
    let backbone = backbone_network(MEASUREMENT_DIM, &bounds, 3).unwrap();
    let y: Vec<f64> = (0..MEASUREMENT_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = predict_twin(&y, &backbone, &FixedParams::default(), &settings()).unwrap();
    let b = predict_twin(&y, &backbone, &FixedParams::default(), &settings()).unwrap();
    assert_eq!(a, b);
    assert!(a.theta_hat.check_bounds(&bounds).is_ok());
    assert!(a.pv_loop.closure_gap() < 0.01 * a.edes.v_ed);
    let direct = twin_from_params(a.theta_hat, &settings()).unwrap();
    assert_eq!(direct.ef, a.ef);
    assert!(predict_twin(&y[..10], &backbone, &FixedParams::default(), &settings()).is_err());
}

#[test]
fn metric_helpers() {
    let truth = [[100.0, 40.0], [120.0, 60.0]];
    let pred = [[100.0, 45.0], [120.0, 60.0]];
    // EF 0.60 vs 0.55 on the first pair, exact on the second.
    assert!((ef_mae_points(&pred, &truth) - 2.5).abs() < 1e-12);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backbone_output_always_inside_box(seed in 0u64..1000, y in prop::collection::vec(-100.0f64..100.0, MEASUREMENT_DIM)) {
        let bounds = ParamBounds::default();
        let net = backbone_network(MEASUREMENT_DIM, &bounds, seed).unwrap();
        let theta = net.forward(&y).unwrap();
        prop_assert_eq!(theta.len(), N_LEARNABLE);
        for (v, iv) in theta.iter().zip(bounds.intervals()) {
            prop_assert!(iv.contains(*v), "{} outside [{}, {}]", v, iv.lo, iv.hi);
        }
    }

    #[test]
    fn spearman_is_rank_invariant(xs in prop::collection::vec(-1e3f64..1e3, 3..40), k in 0.1f64..10.0) {
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let rho = spearman(&xs, &ys);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
        // Strictly increasing transform of one argument keeps every rank.
        let warped: Vec<f64> = xs.iter().map(|x| x * x * x + k * x).collect();
        prop_assert!((spearman(&warped, &ys) - rho).abs() < 1e-12);
    }
}
