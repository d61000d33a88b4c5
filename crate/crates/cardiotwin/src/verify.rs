//! Acceptance checks shared by `cardiotwin verify` and the `acceptance`
//! test target. Each check reports pass/fail with the measured numbers.

use std::fmt;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use cardiotwin_core::analysis::ed_es_volumes;
use cardiotwin_core::elastance::ElastanceSpec;
use cardiotwin_core::exec::Sequential;
use cardiotwin_core::identifiability::{identify, StateSeries};
use cardiotwin_core::model::{valve_flows, Circuit};
use cardiotwin_core::neural::{composite_loss_and_grad, Activation, Head, Mlp, TrainConfig};
use cardiotwin_core::params::{LvadParams, PatientParams};
use cardiotwin_core::pipeline::{
    finetune_backbone, fit_surrogate, low_ef_cohort, predict_twin, pretrain_surrogate, run_lvad_trial, FinetuneReport,
    SurrogateReport,
};
use cardiotwin_core::solver::{integrate, simulate, simulate_cycles, SimSettings};
use cardiotwin_core::synthetic::{
    generate_finetune_dataset, generate_pretext_dataset, generate_pretext_with_mode, sample_params, FinetuneSpec,
    PretextExample, SamplingMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commands::trial_pipeline;
use crate::config::RunConfig;
use crate::io::{self, Checkpoint, NetRole, Provenance};
use crate::parallel::Rayon;

#[derive(Debug, thiserror::Error)]
#[error("acceptance criteria failed: {0}")]
pub struct VerifyFailed(pub String);

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {} [{status}] {}: {} ({:.1} s)", self.id, self.name, self.detail, self.seconds)
    }
}

pub const NAMES: [&str; 8] = [
    "surrogate pretext fidelity",
    "gradient correctness",
    "solver order",
    "limit-cycle convergence",
    "parameter recovery oracle",
    "end-to-end composite inverse",
    "LVAD trial direction",
    "invariant suite",
];

/// Trained networks shared between checks.
pub struct VerifyContext {
    cfg: RunConfig,
    surrogate: Option<Result<SurrogateReport, String>>,
    finetune: Option<Result<FinetuneReport, String>>,
}

impl VerifyContext {
    pub fn new(cfg: &RunConfig) -> Self {
        VerifyContext { cfg: cfg.clone(), surrogate: None, finetune: None }
    }

    fn surrogate(&mut self) -> Result<&SurrogateReport> {
        if self.surrogate.is_none() {
            self.surrogate = Some(train_surrogate(&self.cfg).map_err(|e| format!("{e:#}")));
        }
        match self.surrogate.as_ref().unwrap() {
            Ok(r) => Ok(r),
            Err(e) => Err(anyhow::anyhow!("surrogate training failed: {e}")),
        }
    }

    fn finetune(&mut self) -> Result<&FinetuneReport> {
        if self.finetune.is_none() {
            let res = self.surrogate().map(|s| s.net.clone()).and_then(|net| train_backbone(&self.cfg, &net));
            self.finetune = Some(res.map_err(|e| format!("{e:#}")));
        }
        match self.finetune.as_ref().unwrap() {
            Ok(r) => Ok(r),
            Err(e) => Err(anyhow::anyhow!("backbone training failed: {e}")),
        }
    }
}

fn train_surrogate(cfg: &RunConfig) -> Result<SurrogateReport> {
    let bounds = cfg.param_bounds();
    let p = &cfg.pretext;
    let train = generate_pretext_with_mode(p.n, &bounds, p.seed, p.mode, &cfg.sim, &Rayon)?;
    let eval = generate_pretext_with_mode(p.eval_n, &bounds, p.eval_seed, SamplingMode::Uniform, &cfg.sim, &Rayon)?;
    Ok(pretrain_surrogate(&train.examples, &eval.examples, &bounds, &cfg.pretrain)?)
}

fn finetune_spec(cfg: &RunConfig) -> FinetuneSpec {
    FinetuneSpec { noise_sigma: 0.0, ..cfg.finetune_data }
}

fn train_backbone(cfg: &RunConfig, surrogate: &Mlp) -> Result<FinetuneReport> {
    let bounds = cfg.param_bounds();
    let ds = generate_finetune_dataset(&finetune_spec(cfg), &bounds, &cfg.sim, &Rayon)?;
    Ok(finetune_backbone(&ds, surrogate, &bounds, &cfg.finetune, &cfg.sim, &Rayon)?)
}

type Check = fn(&mut VerifyContext) -> Result<(bool, String)>;

const CHECKS: [Check; 8] = [
    surrogate_fidelity,
    gradient_correctness,
    solver_order,
    limit_cycle,
    recovery_oracle,
    composite_inverse,
    lvad_direction,
    invariants,
];

/// Run all eight checks in order, calling `on_report` as each finishes.
pub fn run_all(cfg: &RunConfig, mut on_report: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    let mut ctx = VerifyContext::new(cfg);
    let mut out = Vec::with_capacity(CHECKS.len());
    for (i, check) in CHECKS.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match check(&mut ctx) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        let report =
            CriterionReport { id: i as u8 + 1, name: NAMES[i], passed, detail, seconds: start.elapsed().as_secs_f64() };
        on_report(&report);
        out.push(report);
    }
    out
}

/// Run a single check by number (1 to 8).
pub fn run_one(cfg: &RunConfig, id: u8) -> Result<CriterionReport> {
    ensure!((1..=8).contains(&id), "criterion must be 1..=8");
    let mut ctx = VerifyContext::new(cfg);
    let start = Instant::now();
    let (passed, detail) = match CHECKS[id as usize - 1](&mut ctx) {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e:#}")),
    };
    Ok(CriterionReport { id, name: NAMES[id as usize - 1], passed, detail, seconds: start.elapsed().as_secs_f64() })
}

pub const SURROGATE_EF_MAE_LIMIT: f64 = 3.5;

fn surrogate_fidelity(ctx: &mut VerifyContext) -> Result<(bool, String)> {
    let m = &ctx.surrogate()?.metrics;
    Ok((
        m.eval_ef_mae <= SURROGATE_EF_MAE_LIMIT && m.eval_size == 1000,
        format!(
            "held-out EF MAE {:.3} points on {} samples (limit {SURROGATE_EF_MAE_LIMIT}); train V_ED/V_ES MAE {:.2}/{:.2} ml",
            m.eval_ef_mae, m.eval_size, m.train_volume_mae[0], m.train_volume_mae[1]
        ),
    ))
}

pub const GRADIENT_REL_LIMIT: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Largest relative mismatch between analytic and central-difference gradients.
pub fn gradient_mismatch(net: &Mlp, tail: Option<&Mlp>, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    let (_, grads) = composite_loss_and_grad(net, tail, xs, ys)?;
    let analytic = grads.flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.parameter_mut(i);
        *probe.parameter_mut(i) = orig + h;
        let up = composite_loss_and_grad(&probe, tail, xs, ys)?.0;
        *probe.parameter_mut(i) = orig - h;
        let down = composite_loss_and_grad(&probe, tail, xs, ys)?.0;
        *probe.parameter_mut(i) = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn random_net(rng: &mut ChaCha8Rng, input: usize, output: usize, act: Activation, range_head: bool) -> Result<Mlp> {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![input];
    for _ in 1..depth {
        dims.push(rng.random_range(2..=6));
    }
    dims.push(output);
    let head = if range_head {
        let lo: Vec<f64> = (0..output).map(|_| rng.random_range(-2.0..1.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.5..3.0)).collect();
        Head::RangeSigmoid { lo, hi }
    } else {
        Head::Linear
    };
    Ok(Mlp::new(&dims, act, head, rng.random())?)
}

fn gradient_correctness(_: &mut VerifyContext) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut combos = std::collections::BTreeSet::new();
    for k in 0..50 {
        let act = if k % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let range_head = (k / 2) % 2 == 1;
        let with_tail = (k / 4) % 2 == 1;
        combos.insert((k % 2, range_head, with_tail));
        let (input, output) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let net = random_net(&mut rng, input, output, act, range_head)?;
        let tail = if with_tail {
            let tail_act = if rng.random() { Activation::Tanh } else { Activation::Relu };
            let tail_head: bool = rng.random();
            let out = rng.random_range(1..=3);
            Some(random_net(&mut rng, output, out, tail_act, tail_head)?)
        } else {
            None
        };
        let out_dim = tail.as_ref().map_or(output, |t| t.output_dim());
        let batch = rng.random_range(1..=4);
        let xs: Vec<Vec<f64>> = (0..batch).map(|_| (0..input).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let ys: Vec<Vec<f64>> =
            (0..batch).map(|_| (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        worst = worst.max(gradient_mismatch(&net, tail.as_ref(), &xs, &ys)?);
    }
    Ok((
        worst < GRADIENT_REL_LIMIT && combos.len() == 8,
        format!("50 networks, {} head/activation/tail combinations, max relative error {worst:.2e}", combos.len()),
    ))
}

/// Longest stretch of the final cycle with both valves closed (isovolumic
/// phase), shrunk by 10% at each end. Returns `(t_start, t_end, state at t_start)`.
pub fn smooth_window(params: &PatientParams) -> Result<(f64, f64, [f64; 5])> {
    let traj = simulate_cycles(params, None, 3, 2000)?;
    let circuit = Circuit::new(params);
    let range = traj.last_cycle()?;
    let flags: Vec<(usize, (bool, bool))> = range
        .clone()
        .map(|k| {
            let x = traj.states[k].five();
            let e = circuit.elastance().at(traj.time(k));
            let (p1, p2) = valve_flows(x[0], x[1], x[3], e, params.r_m, params.r_a);
            (k, (p1 > 0.0, p2 > 0.0))
        })
        .collect();
    let (mut best, mut start) = ((0, 0), 0);
    for i in 1..=flags.len() {
        if i == flags.len() || flags[i].1 != flags[start].1 {
            if flags[start].1 == (false, false) && i - start > best.1 - best.0 {
                best = (start, i);
            }
            start = i;
        }
    }
    ensure!(best.1 > best.0, "no isovolumic interval found");
    let (a, b) = (flags[best.0].0, flags[best.1 - 1].0);
    let shrink = (b - a) / 10;
    let (a, b) = (a + shrink, b - shrink);
    ensure!(b > a + 10, "isovolumic interval too short");
    Ok((traj.time(a), traj.time(b), traj.states[a].five()))
}

/// Ratios `‖x_h − x_{h/2}‖ / ‖x_{h/2} − x_{h/4}‖` for successive halvings from `n0` steps.
pub fn richardson_ratios(params: &PatientParams, n0: usize, halvings: usize) -> Result<Vec<f64>> {
    let (t0, t1, x0) = smooth_window(params)?;
    let circuit = Circuit::new(params);
    let end = |n: usize| -> Result<[f64; 5]> {
        let dt = (t1 - t0) / n as f64;
        Ok(*integrate(|t, x: &[f64; 5]| circuit.rhs5(t, x), x0, t0, t1, dt)?.last())
    };
    let ends: Vec<[f64; 5]> = (0..halvings + 3).map(|k| end(n0 << k)).collect::<Result<_>>()?;
    let dist = |a: &[f64; 5], b: &[f64; 5]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok((0..=halvings).map(|k| dist(&ends[k], &ends[k + 1]) / dist(&ends[k + 1], &ends[k + 2])).collect())
}

fn solver_order(_: &mut VerifyContext) -> Result<(bool, String)> {
    let p = PatientParams::REFERENCE;
    let (t0, t1, _) = smooth_window(&p)?;
    let ratios = richardson_ratios(&p, 40, 2)?;
    let ok = ratios.iter().all(|r| (12.0..=20.0).contains(r));
    Ok((ok, format!("isovolumic window [{t0:.4}, {t1:.4}] s, ratios {:?} (want [12, 20])", round3(&ratios))))
}

fn round3(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

fn limit_cycle(_: &mut VerifyContext) -> Result<(bool, String)> {
    let traj = simulate(&PatientParams::REFERENCE, None, &SimSettings::default())?;
    let edes = ed_es_volumes(&traj)?;
    let spc = traj.steps_per_cycle();
    let mut dv: f64 = 0.0;
    let mut dp: f64 = 0.0;
    let mut p_max: f64 = 0.0;
    for k in traj.last_cycle()? {
        let (p1, v1) = traj.pressure_volume(k);
        let (p0, v0) = traj.pressure_volume(k - spc);
        dv = dv.max((v1 - v0).abs());
        dp = dp.max((p1 - p0).abs());
        p_max = p_max.max(p1.abs());
    }
    let rel = dv / edes.v_ed;
    Ok((
        rel < 0.01,
        format!(
            "max |ΔV| {dv:.4} ml = {:.3}% of V_ED, max |ΔP| {dp:.3} mmHg ({:.3}% of peak)",
            rel * 100.0,
            dp / p_max * 100.0
        ),
    ))
}

fn recovery_oracle(_: &mut VerifyContext) -> Result<(bool, String)> {
    let p = PatientParams::REFERENCE;
    let traj = simulate_cycles(&p, None, 20, 2000)?;
    let r = identify(&StateSeries::from_trajectory(&traj), Some(&p))?;
    let err = r.relative_error.context("truth missing")?;
    let e = err.to_array();
    let elastance_ok = err.e_max < 0.01 && err.e_min < 0.01 && err.v_d < 0.01;
    let t_c_ok = (r.values.t_c - p.t_c).abs() <= traj.dt;
    let statics_ok = e[4..].iter().all(|&x| x < 0.02);
    let residual = r.residuals.iter().copied().fold(0.0, f64::max);
    let ok = elastance_ok && t_c_ok && statics_ok && residual < 1e-3;
    Ok((
        ok,
        format!(
            "elastance/v_d max rel err {:.2e}, |Δt_c| {:.2e} s (dt {:.1e}), statics max rel err {:.2e}, max row residual {residual:.2e}",
            err.e_max.max(err.e_min).max(err.v_d),
            (r.values.t_c - p.t_c).abs(),
            traj.dt,
            e[4..].iter().copied().fold(0.0, f64::max)
        ),
    ))
}

fn composite_inverse(ctx: &mut VerifyContext) -> Result<(bool, String)> {
    let m = &ctx.finetune()?.metrics;
    let ok = m.test_ef_mae_resim <= 7.0 && m.test_v_ed_mae <= 15.0 && m.test_v_es_mae <= 15.0 && m.resim_failures == 0;
    Ok((
        ok,
        format!(
            "test n={}: EF MAE {:.3} points re-simulated ({:.3} via surrogate), V_ED MAE {:.2} ml, V_ES MAE {:.2} ml, {} failed re-simulations",
            m.test_size, m.test_ef_mae_resim, m.test_ef_mae_surrogate, m.test_v_ed_mae, m.test_v_es_mae, m.resim_failures
        ),
    ))
}

fn lvad_direction(ctx: &mut VerifyContext) -> Result<(bool, String)> {
    let cfg = &ctx.cfg;
    ensure!(cfg.trial.cohort_size == 100, "criterion is defined on 100 patients");
    let (trial, _, omega) = trial_pipeline(cfg, None)?;
    let ok = trial.mean_delta_ef > 0.0 && trial.spearman_baseline_delta < 0.0;
    Ok((
        ok,
        format!(
            "calibrated ω={omega}: mean ΔEF {:+.4} over {} patients (baseline EF {:.3}), Spearman(EF, ΔEF) {:.3}",
            trial.mean_delta_ef,
            trial.rows.len(),
            trial.mean_ef_baseline,
            trial.spearman_baseline_delta
        ),
    ))
}

fn invariants(ctx: &mut VerifyContext) -> Result<(bool, String)> {
    let mut failures: Vec<String> = Vec::new();
    let mut note = |name: &str, r: Result<()>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e:#}"));
        }
    };
    let cfg = ctx.cfg.clone();
    note("sampled bounds", sampled_bounds(&cfg));
    note("elastance", elastance_range(&cfg));
    note("flow balance", flow_balance());
    note("predicted bounds", predicted_bounds(ctx));
    note("frozen surrogate", frozen_surrogate(ctx));
    note("determinism", determinism(&cfg));
    note("round trips", round_trips(&cfg));
    let ok = failures.is_empty();
    let detail = if ok {
        "bounds, elastance, flow balance, frozen surrogate, determinism and CSV/JSON round trips hold".to_string()
    } else {
        failures.join("; ")
    };
    Ok((ok, detail))
}

fn sampled_bounds(cfg: &RunConfig) -> Result<()> {
    let b = cfg.param_bounds();
    for (mode, n) in [(SamplingMode::Uniform, 2000), (SamplingMode::Grid, 3840)] {
        for p in sample_params(n, &b, 99, mode) {
            p.check_bounds(&b)?;
        }
    }
    Ok(())
}

fn elastance_range(cfg: &RunConfig) -> Result<()> {
    let b = cfg.param_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let e_max = rng.random_range(b.e_max.lo..=b.e_max.hi);
        let e_min = rng.random_range(b.e_min.lo..=b.e_min.hi);
        let t_c = rng.random_range(b.t_c.lo..=b.t_c.hi);
        let spec = ElastanceSpec::new(e_max, e_min, t_c);
        let t = rng.random_range(0.0..10.0);
        let e = spec.at(t);
        ensure!(e >= e_min && e <= e_max, "E({t}) = {e} outside [{e_min}, {e_max}]");
        let shifted = spec.at(t + t_c);
        ensure!((shifted - e).abs() <= 1e-9 * e_max, "E not periodic at t={t}: {e} vs {shifted}");
    }
    Ok(())
}

fn flow_balance() -> Result<()> {
    let p = PatientParams::REFERENCE;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..2000 {
        let y: [f64; 6] = [
            rng.random_range(1.0..250.0),
            rng.random_range(0.0..40.0),
            rng.random_range(0.0..120.0),
            rng.random_range(20.0..150.0),
            rng.random_range(-500.0..500.0),
            rng.random_range(-300.0..300.0),
        ];
        let t = rng.random_range(0.0..3.0);
        let omega = rng.random_range(0.0..20_000.0);
        let c5 = Circuit::new(&p);
        let c6 = Circuit::with_lvad(&p, &LvadParams::default().with_constant_omega(omega))?;
        let d5 = c5.rhs5(t, &[y[0], y[1], y[2], y[3], y[4]]);
        let d6 = c6.rhs6(t, &y);
        let (p1, p2) = valve_flows(y[0], y[1], y[3], c5.elastance().at(t), p.r_m, p.r_a);
        let scale = 1.0 + p1 + p2 + y[4].abs() + y[5].abs();
        let volume = |d: &[f64]| d[0] + p.c_r * d[1] + p.c_s * d[2] + p.c_a * d[3];
        ensure!(p1 >= 0.0 && p2 >= 0.0, "negative valve flow");
        ensure!((d5[0] - (p1 - p2)).abs() <= 1e-9 * scale, "rhs5 LV row is not p1 − p2");
        ensure!(volume(&d5).abs() <= 1e-9 * scale, "rhs5 does not conserve volume");
        ensure!(volume(&d6).abs() <= 1e-9 * scale, "rhs6 does not conserve volume");
        ensure!((d6[0] - (d5[0] - y[5])).abs() <= 1e-9 * scale, "rhs6 LV row differs from rhs5 − x6");
        ensure!((d6[3] - (d5[3] + y[5] / p.c_a)).abs() <= 1e-9 * scale, "rhs6 aortic row differs from rhs5 + x6/c_a");
        ensure!(d6[1] == d5[1] && d6[2] == d5[2] && d6[4] == d5[4], "rhs6 rows 2, 3, 5 differ from rhs5");
    }
    Ok(())
}

fn predicted_bounds(ctx: &mut VerifyContext) -> Result<()> {
    let bounds = ctx.cfg.param_bounds();
    let sim = ctx.cfg.sim;
    let ds = generate_finetune_dataset(&FinetuneSpec { n: 200, ..finetune_spec(&ctx.cfg) }, &bounds, &sim, &Rayon)?;
    let net = &ctx.finetune()?.net;
    for m in &ds.measurements {
        let theta = net.forward(&m.y)?;
        let mut a = [0.0; 7];
        a.copy_from_slice(&theta);
        bounds.params(&a).check_bounds(&bounds)?;
    }
    Ok(())
}

fn frozen_surrogate(ctx: &mut VerifyContext) -> Result<()> {
    let before = serde_json::to_vec(&ctx.surrogate()?.net)?;
    let bits_before: Vec<u64> = ctx.surrogate()?.net.parameters().iter().map(|p| p.to_bits()).collect();
    // Train a fresh backbone through the stored surrogate and compare afterwards.
    let cfg = RunConfig { finetune: TrainConfig { epochs: 2, ..ctx.cfg.finetune }, ..ctx.cfg.clone() };
    let bounds = cfg.param_bounds();
    let ds = generate_finetune_dataset(&FinetuneSpec { n: 60, ..finetune_spec(&cfg) }, &bounds, &cfg.sim, &Rayon)?;
    let surrogate = &ctx.surrogate()?.net;
    finetune_backbone(&ds, surrogate, &bounds, &cfg.finetune, &cfg.sim, &Rayon)?;
    ctx.finetune()?;
    let after = serde_json::to_vec(&ctx.surrogate()?.net)?;
    let bits_after: Vec<u64> = ctx.surrogate()?.net.parameters().iter().map(|p| p.to_bits()).collect();
    ensure!(before == after && bits_before == bits_after, "surrogate changed during finetuning");
    Ok(())
}

/// Outputs of a small end-to-end run, compared bitwise between repetitions.
#[derive(Debug, PartialEq)]
struct PipelineFingerprint {
    pretext: Vec<PretextExample>,
    surrogate: Vec<u64>,
    backbone: Vec<u64>,
    twin: (Vec<u64>, u64),
    trial: Vec<(u64, u64)>,
}

fn small_pipeline(cfg: &RunConfig, parallel: bool) -> Result<PipelineFingerprint> {
    let bounds = cfg.param_bounds();
    let sim = SimSettings { n_cycles: 2, steps_per_cycle: 400 };
    let pretext = if parallel {
        generate_pretext_dataset(120, &bounds, 3, &sim, &Rayon)?
    } else {
        generate_pretext_dataset(120, &bounds, 3, &sim, &Sequential)?
    };
    let tc = TrainConfig { epochs: 3, batch_size: 16, seed: 9, ..TrainConfig::default() };
    let net = cardiotwin_core::pipeline::surrogate_network(&bounds, 1)?;
    let sur = fit_surrogate(net, &pretext.examples, &pretext.examples[..10], &tc)?;
    let spec = FinetuneSpec { n: 30, seed: 4, render_seed: 5, noise_sigma: 0.01 };
    let ds = generate_finetune_dataset(&spec, &bounds, &sim, &Rayon)?;
    let ft = finetune_backbone(&ds, &sur.net, &bounds, &tc, &sim, &Rayon)?;
    let twin = predict_twin(&ds.measurements[0].y, &ft.net, &bounds.fixed, &sim)?;
    let cohort = low_ef_cohort(3, &bounds, 8, &sim, &Rayon)?;
    let trial = run_lvad_trial(&cohort, &cfg.lvad.with_constant_omega(14_000.0), &sim, &Rayon)?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    Ok(PipelineFingerprint {
        pretext: pretext.examples,
        surrogate: bits(&sur.net.parameters()),
        backbone: bits(&ft.net.parameters()),
        twin: (bits(&twin.theta_hat.learnable()), twin.ef.to_bits()),
        trial: trial.rows.iter().map(|r| (r.ef_baseline.to_bits(), r.ef_lvad.to_bits())).collect(),
    })
}

fn determinism(cfg: &RunConfig) -> Result<()> {
    let a = small_pipeline(cfg, true)?;
    let b = small_pipeline(cfg, true)?;
    let c = small_pipeline(cfg, false)?;
    ensure!(a == b, "repeated seeded run differs");
    ensure!(a == c, "parallel and sequential runs differ");
    Ok(())
}

fn close9(a: f64, b: f64) -> bool {
    (a - b).abs() <= 5e-9 * a.abs().max(b.abs())
}

fn round_trips(cfg: &RunConfig) -> Result<()> {
    let meta = Provenance::new(cfg, &[("seed", 1)]);
    let traj =
        simulate_cycles(&PatientParams::REFERENCE, Some(&LvadParams::default().with_constant_omega(9000.0)), 1, 300)?;
    let mut buf = Vec::new();
    io::write_trajectory(&mut buf, &traj, &meta)?;
    let back = io::read_trajectory(buf.as_slice())?;
    for k in 0..traj.len() {
        let s = traj.states[k].as_slice();
        ensure!(back.states[k].len() == s.len(), "trajectory dimension lost");
        ensure!(s.iter().zip(&back.states[k]).all(|(a, b)| close9(*a, *b)), "trajectory row {k} lost precision");
    }

    let examples = generate_pretext_dataset(
        20,
        &cfg.param_bounds(),
        2,
        &SimSettings { n_cycles: 2, steps_per_cycle: 400 },
        &Rayon,
    )?
    .examples;
    let mut buf = Vec::new();
    io::write_pretext(&mut buf, &examples, &meta)?;
    let back = io::read_pretext(buf.as_slice())?;
    for (a, b) in examples.iter().zip(&back) {
        let pa = a.theta.iter().chain([&a.v_ed, &a.v_es]);
        let pb = b.theta.iter().chain([&b.v_ed, &b.v_es]);
        ensure!(pa.zip(pb).all(|(x, y)| close9(*x, *y)), "pretext row lost precision");
    }

    let net = Mlp::new(&[7, 5, 2], Activation::Tanh, Head::Linear, 3)?;
    let ckpt = Checkpoint { meta: meta.clone(), role: NetRole::Surrogate, bounds: cfg.param_bounds(), net };
    let text = serde_json::to_string(&ckpt)?;
    let back: Checkpoint = serde_json::from_str(&text)?;
    ensure!(back == ckpt, "checkpoint JSON round trip is not exact");
    let bits = |c: &Checkpoint| c.net.parameters().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&back) == bits(&ckpt), "checkpoint weights changed bits");

    let cfg_back = RunConfig::from_json(&serde_json::to_string(cfg)?)?;
    ensure!(&cfg_back == cfg, "config JSON round trip is not exact");
    let p_back: PatientParams = serde_json::from_str(&serde_json::to_string(&PatientParams::REFERENCE)?)?;
    ensure!(p_back == PatientParams::REFERENCE, "params JSON round trip is not exact");
    Ok(())
}
