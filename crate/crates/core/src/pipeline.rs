//! Two-stage surrogate training, twin prediction and in-silico LVAD trials.
//!
//! Stage one fits a surrogate `θ → (V_ED, V_ES)` on forward solves. Stage
//! two trains a measurement → θ backbone by backpropagating the volume loss
//! through the frozen surrogate. Predictions are always re-simulated with
//! the full ODE; the surrogate is only used for training and diagnostics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::analysis::{ed_es_volumes, ejection_fraction, pv_loop, EdEs, PvLoop};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::neural::{self, Activation, Head, InputScaling, Mlp, TrainConfig};
use crate::params::{FixedParams, LvadParams, OmegaSchedule, ParamBounds, PatientParams, N_LEARNABLE};
use crate::solver::{simulate, SimSettings, Trajectory};
use crate::synthetic::{sample_params, FinetuneDataset, Measurement, PretextExample, SamplingMode};

/// Volume targets are divided by this before training (ml).
pub const TARGET_SCALE: f64 = 100.0;
pub const SURROGATE_HIDDEN: usize = 64;
pub const BACKBONE_HIDDEN: usize = 128;
/// Default calibration grid: 0 to 24000 in steps of 2000.
pub fn default_omega_levels() -> Vec<f64> {
    (0..=12).map(|k| f64::from(k) * 2000.0).collect()
}

/// Smallest pretext set accepted by [`pretrain_surrogate`].
pub const MIN_PRETEXT: usize = 500;

/// `θ (7) → 64 → 64 → (V_ED, V_ES)/100`, tanh, inputs scaled from `bounds`.
pub fn surrogate_network(bounds: &ParamBounds, seed: u64) -> Result<Mlp> {
    Mlp::new(&[N_LEARNABLE, SURROGATE_HIDDEN, SURROGATE_HIDDEN, 2], Activation::Tanh, Head::Linear, seed)?
        .with_input_scaling(InputScaling::from_bounds(&bounds.lo(), &bounds.hi()))
}

/// `y → 128 → 128 → θ (7)`, relu, sigmoid head over the learnable box.
pub fn backbone_network(input_dim: usize, bounds: &ParamBounds, seed: u64) -> Result<Mlp> {
    let head = Head::RangeSigmoid { lo: bounds.lo().to_vec(), hi: bounds.hi().to_vec() };
    Mlp::new(&[input_dim, BACKBONE_HIDDEN, BACKBONE_HIDDEN, N_LEARNABLE], Activation::Relu, head, seed)
}

/// Surrogate volume prediction in ml.
pub fn surrogate_volumes(surrogate: &Mlp, theta: &[f64]) -> Result<[f64; 2]> {
    let out = surrogate.forward(theta)?;
    Ok([out[0] * TARGET_SCALE, out[1] * TARGET_SCALE])
}

fn ef_of(v_ed: f64, v_es: f64) -> f64 {
    (v_ed - v_es) / v_ed
}

/// Mean absolute EF error in percentage points.
pub fn ef_mae_points(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(truth).map(|(p, t)| (ef_of(p[0], p[1]) - ef_of(t[0], t[1])).abs()).sum::<f64>() * 100.0 / n
}

/// Mean absolute error per volume channel (ml).
pub fn volume_mae(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> [f64; 2] {
    let n = pred.len().max(1) as f64;
    let mut acc = [0.0; 2];
    for (p, t) in pred.iter().zip(truth) {
        acc[0] += (p[0] - t[0]).abs();
        acc[1] += (p[1] - t[1]).abs();
    }
    [acc[0] / n, acc[1] / n]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMetrics {
    pub eval_ef_mae: f64,
    pub eval_volume_mae: [f64; 2],
    pub train_volume_mae: [f64; 2],
    pub train_size: usize,
    pub eval_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateReport {
    pub net: Mlp,
    pub history: Vec<f64>,
    pub metrics: SurrogateMetrics,
}

fn pretext_arrays(examples: &[PretextExample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    examples.iter().map(|e| (e.theta.to_vec(), vec![e.v_ed / TARGET_SCALE, e.v_es / TARGET_SCALE])).unzip()
}

/// Predicted and true `[v_ed, v_es]` pairs.
type VolumePairs = (Vec<[f64; 2]>, Vec<[f64; 2]>);

fn surrogate_predictions(net: &Mlp, examples: &[PretextExample]) -> Result<VolumePairs> {
    let pred = examples.iter().map(|e| surrogate_volumes(net, &e.theta)).collect::<Result<Vec<_>>>()?;
    let truth = examples.iter().map(|e| [e.v_ed, e.v_es]).collect();
    Ok((pred, truth))
}

/// Fit the surrogate on `train` and score it on the disjoint `eval` set.
pub fn pretrain_surrogate(
    train: &[PretextExample],
    eval: &[PretextExample],
    bounds: &ParamBounds,
    config: &TrainConfig,
) -> Result<SurrogateReport> {
    if train.len() < MIN_PRETEXT {
        return Err(Error::invalid(
            "pretext dataset",
            format!("need at least {MIN_PRETEXT} examples, got {}", train.len()),
        ));
    }
    let net = surrogate_network(bounds, config.seed)?;
    fit_surrogate(net, train, eval, config)
}

/// Training step of [`pretrain_surrogate`] without the size check.
pub fn fit_surrogate(
    net: Mlp,
    train: &[PretextExample],
    eval: &[PretextExample],
    config: &TrainConfig,
) -> Result<SurrogateReport> {
    let (xs, ys) = pretext_arrays(train);
    let out = neural::train(&net, &xs, &ys, config, None)?;
    let (train_pred, train_truth) = surrogate_predictions(&out.net, train)?;
    let (eval_pred, eval_truth) = surrogate_predictions(&out.net, eval)?;
    let metrics = SurrogateMetrics {
        eval_ef_mae: ef_mae_points(&eval_pred, &eval_truth),
        eval_volume_mae: volume_mae(&eval_pred, &eval_truth),
        train_volume_mae: volume_mae(&train_pred, &train_truth),
        train_size: train.len(),
        eval_size: eval.len(),
    };
    Ok(SurrogateReport { net: out.net, history: out.history, metrics })
}

/// Patient-specific twin obtained from a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinPrediction {
    pub theta_hat: PatientParams,
    pub trajectory: Trajectory,
    pub pv_loop: PvLoop,
    pub edes: EdEs,
    pub ef: f64,
}

/// Twin for a fully specified parameter vector.
pub fn twin_from_params(theta_hat: PatientParams, settings: &SimSettings) -> Result<TwinPrediction> {
    let trajectory = simulate(&theta_hat, None, settings)?;
    let edes = ed_es_volumes(&trajectory)?;
    let ef = ejection_fraction(&edes)?;
    let pv_loop = pv_loop(&trajectory)?;
    Ok(TwinPrediction { theta_hat, trajectory, pv_loop, edes, ef })
}

/// Predict θ̂ with the backbone, complete it with `fixed`, and simulate.
pub fn predict_twin(y: &[f64], backbone: &Mlp, fixed: &FixedParams, settings: &SimSettings) -> Result<TwinPrediction> {
    let raw = backbone.forward(y)?;
    if raw.len() != N_LEARNABLE {
        return Err(Error::Dimension { expected: N_LEARNABLE, got: raw.len() });
    }
    let mut theta = [0.0; N_LEARNABLE];
    theta.copy_from_slice(&raw);
    let params = PatientParams::from_parts(&theta, fixed);
    twin_from_params(params, settings).map_err(|e| Error::TwinSimulation { theta, reason: format!("{e}") })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMetrics {
    /// EF MAE (points) of `surrogate(backbone(y))` against the labels.
    pub test_ef_mae_surrogate: f64,
    /// EF MAE (points) of the re-simulated twins against the labels.
    pub test_ef_mae_resim: f64,
    pub test_v_ed_mae: f64,
    pub test_v_es_mae: f64,
    pub resim_failures: usize,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub net: Mlp,
    pub history: Vec<f64>,
    pub metrics: FinetuneMetrics,
    /// Re-simulated `(v_ed, v_es)` per test sample; `None` where simulation failed.
    pub test_volumes: Vec<Option<[f64; 2]>>,
}

fn measurement_arrays(ms: &[Measurement]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    ms.iter().map(|m| (m.y.clone(), vec![m.v_ed / TARGET_SCALE, m.v_es / TARGET_SCALE])).unzip()
}

/// Train the backbone through the frozen surrogate on the training split
/// and evaluate both EF paths on the test split.
pub fn finetune_backbone<E: Executor>(
    dataset: &FinetuneDataset,
    surrogate: &Mlp,
    bounds: &ParamBounds,
    config: &TrainConfig,
    settings: &SimSettings,
    exec: &E,
) -> Result<FinetuneReport> {
    let train = dataset.train_set();
    let test = dataset.test_set();
    let first = train.first().ok_or(Error::Empty("training split"))?;
    let backbone = backbone_network(first.y.len(), bounds, config.seed)?;
    let (xs, ys) = measurement_arrays(train);
    let out = neural::train(&backbone, &xs, &ys, config, Some(surrogate))?;
    let net = out.net;

    let truth: Vec<[f64; 2]> = test.iter().map(Measurement::labels).collect();
    let mut through_surrogate = Vec::with_capacity(test.len());
    for m in test {
        let theta = net.forward(&m.y)?;
        through_surrogate.push(surrogate_volumes(surrogate, &theta)?);
    }
    let fixed = bounds.fixed;
    let test_volumes: Vec<Option<[f64; 2]>> = exec.map_indexed(test.len(), |i| {
        predict_twin(&test[i].y, &net, &fixed, settings).ok().map(|t| [t.edes.v_ed, t.edes.v_es])
    });
    let (resim, resim_truth): (Vec<[f64; 2]>, Vec<[f64; 2]>) =
        test_volumes.iter().zip(&truth).filter_map(|(p, t)| p.map(|p| (p, *t))).unzip();
    let vmae = volume_mae(&resim, &resim_truth);
    let metrics = FinetuneMetrics {
        test_ef_mae_surrogate: ef_mae_points(&through_surrogate, &truth),
        test_ef_mae_resim: ef_mae_points(&resim, &resim_truth),
        test_v_ed_mae: vmae[0],
        test_v_es_mae: vmae[1],
        resim_failures: test.len() - resim.len(),
        train_size: train.len(),
        test_size: test.len(),
    };
    Ok(FinetuneReport { net, history: out.history, metrics, test_volumes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub patient_id: usize,
    pub ef_baseline: f64,
    pub ef_lvad: f64,
    pub delta_ef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub rows: Vec<TrialRow>,
    /// Patients whose baseline or pump simulation failed.
    pub failed: Vec<usize>,
    pub mean_delta_ef: f64,
    pub mean_ef_baseline: f64,
    pub mean_ef_lvad: f64,
    /// Spearman rank correlation between baseline EF and ΔEF.
    pub spearman_baseline_delta: f64,
    pub omega_schedule: OmegaSchedule,
}

/// Final-cycle summary of one intervention run.
#[derive(Debug, Clone, PartialEq)]
pub struct LvadRun {
    pub edes: EdEs,
    pub ef: f64,
    pub mean_pump_flow: f64,
    pub min_pump_flow: f64,
    pub pv_loop: PvLoop,
}

pub fn lvad_run(patient: &PatientParams, lvad: &LvadParams, settings: &SimSettings) -> Result<LvadRun> {
    let traj = simulate(patient, Some(lvad), settings)?;
    let edes = ed_es_volumes(&traj)?;
    let ef = ejection_fraction(&edes)?;
    let range = traj.last_cycle()?;
    let flows: Vec<f64> = range.map(|k| traj.states[k].x6().unwrap_or(0.0)).collect();
    let mean_pump_flow = flows.iter().sum::<f64>() / flows.len() as f64;
    let min_pump_flow = flows.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LvadRun { edes, ef, mean_pump_flow, min_pump_flow, pv_loop: pv_loop(&traj)? })
}

fn baseline_ef(patient: &PatientParams, settings: &SimSettings) -> Result<f64> {
    let traj = simulate(patient, None, settings)?;
    ejection_fraction(&ed_es_volumes(&traj)?)
}

/// Baseline vs pump-assisted EF for every cohort member, identical solver settings in both arms.
pub fn run_lvad_trial<E: Executor>(
    cohort: &[PatientParams],
    lvad: &LvadParams,
    settings: &SimSettings,
    exec: &E,
) -> Result<TrialResult> {
    if cohort.is_empty() {
        return Err(Error::Empty("trial cohort"));
    }
    lvad.validate()?;
    let outcomes = exec.map_indexed(cohort.len(), |i| -> Result<TrialRow> {
        let ef_baseline = baseline_ef(&cohort[i], settings)?;
        let ef_lvad = lvad_run(&cohort[i], lvad, settings)?.ef;
        Ok(TrialRow { patient_id: i, ef_baseline, ef_lvad, delta_ef: ef_lvad - ef_baseline })
    });
    let mut rows = Vec::with_capacity(cohort.len());
    let mut failed = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => rows.push(r),
            Err(_) => failed.push(i),
        }
    }
    let limit = cohort.len() * 5 / 100;
    if failed.len() > limit {
        return Err(Error::TooManyFailures { failed: failed.len(), total: cohort.len(), limit });
    }
    if rows.is_empty() {
        return Err(Error::Empty("no successful trial arms"));
    }
    let n = rows.len() as f64;
    let base: Vec<f64> = rows.iter().map(|r| r.ef_baseline).collect();
    let delta: Vec<f64> = rows.iter().map(|r| r.delta_ef).collect();
    Ok(TrialResult {
        mean_delta_ef: delta.iter().sum::<f64>() / n,
        mean_ef_baseline: base.iter().sum::<f64>() / n,
        mean_ef_lvad: rows.iter().map(|r| r.ef_lvad).sum::<f64>() / n,
        spearman_baseline_delta: spearman(&base, &delta),
        rows,
        failed,
        omega_schedule: lvad.omega_schedule,
    })
}

/// Fractional ranks (ties share their mean rank), 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / crate::math::sqrt(va * vb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub omega: f64,
    pub outcome: Result<LvadRun>,
}

fn check_levels(levels: &[f64]) -> Result<Vec<f64>> {
    if levels.is_empty() {
        return Err(Error::Empty("omega levels"));
    }
    if levels.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("omega", "levels must be finite and non-negative"));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// One constant-speed intervention per level, ascending in ω.
pub fn omega_sweep(
    patient: &PatientParams,
    lvad: &LvadParams,
    levels: &[f64],
    settings: &SimSettings,
) -> Result<Vec<SweepRow>> {
    let sorted = check_levels(levels)?;
    Ok(sorted
        .into_iter()
        .map(|omega| {
            let l = lvad.with_constant_omega(omega);
            let outcome = lvad_run(patient, &l, settings);
            SweepRow { omega, outcome }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLevel {
    pub omega: f64,
    pub failures: usize,
    pub mean_delta_ef: f64,
    pub mean_pump_flow: f64,
    /// Fraction of patients whose pump flow never reverses in the final cycle.
    pub forward_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Chosen level, `None` when no level qualified.
    pub omega: Option<f64>,
    pub levels: Vec<CalibrationLevel>,
}

/// Pick the smallest constant ω at which every cohort member simulates
/// without failure, no patient's pump flow reverses during the final cycle,
/// and the cohort-mean ΔEF is positive.
pub fn calibrate_omega<E: Executor>(
    cohort: &[PatientParams],
    lvad: &LvadParams,
    levels: &[f64],
    settings: &SimSettings,
    exec: &E,
) -> Result<Calibration> {
    if cohort.is_empty() {
        return Err(Error::Empty("calibration cohort"));
    }
    let sorted = check_levels(levels)?;
    let baseline: Vec<Result<f64>> = exec.map_indexed(cohort.len(), |i| baseline_ef(&cohort[i], settings));
    let mut out = Vec::with_capacity(sorted.len());
    let mut chosen = None;
    for omega in sorted {
        let l = lvad.with_constant_omega(omega);
        let runs = exec.map_indexed(cohort.len(), |i| {
            lvad_run(&cohort[i], &l, settings).map(|r| (r.ef, r.mean_pump_flow, r.min_pump_flow))
        });
        let mut failures = 0;
        let (mut d_sum, mut f_sum, mut forward, mut count) = (0.0, 0.0, 0usize, 0usize);
        for (b, r) in baseline.iter().zip(&runs) {
            match (b, r) {
                (Ok(b), Ok((ef, flow, min_flow))) => {
                    d_sum += ef - b;
                    f_sum += flow;
                    forward += usize::from(*min_flow >= 0.0);
                    count += 1;
                }
                _ => failures += 1,
            }
        }
        let c = count.max(1) as f64;
        let level = CalibrationLevel {
            omega,
            failures,
            mean_delta_ef: d_sum / c,
            mean_pump_flow: f_sum / c,
            forward_fraction: forward as f64 / c,
        };
        if chosen.is_none() && failures == 0 && forward == count && level.mean_delta_ef > 0.0 {
            chosen = Some(omega);
        }
        out.push(level);
    }
    Ok(Calibration { omega: chosen, levels: out })
}

/// `n` patients drawn uniformly from `bounds` whose baseline EF lies below
/// the median of a `4n` candidate pool, kept in sampling order.
pub fn low_ef_cohort<E: Executor>(
    n: usize,
    bounds: &ParamBounds,
    seed: u64,
    settings: &SimSettings,
    exec: &E,
) -> Result<Vec<PatientParams>> {
    if n == 0 {
        return Err(Error::Empty("cohort size"));
    }
    let pool = sample_params(4 * n, bounds, seed, SamplingMode::Uniform);
    let efs = exec.map_indexed(pool.len(), |i| baseline_ef(&pool[i], settings).ok());
    let mut finite: Vec<f64> = efs.iter().flatten().copied().collect();
    if finite.len() < 2 * n {
        return Err(Error::TooManyFailures { failed: pool.len() - finite.len(), total: pool.len(), limit: 2 * n });
    }
    finite.sort_by(f64::total_cmp);
    let median = finite[finite.len() / 2];
    Ok(pool.iter().zip(&efs).filter(|(_, ef)| matches!(ef, Some(e) if *e < median)).map(|(p, _)| *p).take(n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0], &[2.0, 3.0]), 0.0);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn ef_mae_in_points() {
        let p = [[100.0, 50.0], [100.0, 40.0]];
        let t = [[100.0, 45.0], [100.0, 40.0]];
        assert!((ef_mae_points(&p, &t) - 2.5).abs() < 1e-12);
        assert_eq!(volume_mae(&p, &t), [0.0, 2.5]);
    }

    #[test]
    fn sweep_levels_are_sorted_and_checked() {
        let s = SimSettings { n_cycles: 2, steps_per_cycle: 400 };
        let rows = omega_sweep(&PatientParams::REFERENCE, &LvadParams::default(), &[9000.0, 0.0, 3000.0], &s).unwrap();
        assert_eq!(rows.iter().map(|r| r.omega).collect::<Vec<_>>(), vec![0.0, 3000.0, 9000.0]);
        assert!(omega_sweep(&PatientParams::REFERENCE, &LvadParams::default(), &[], &s).is_err());
        assert!(omega_sweep(&PatientParams::REFERENCE, &LvadParams::default(), &[-1.0], &s).is_err());
    }

    #[test]
    fn surrogate_needs_enough_data() {
        let ex = PretextExample { theta: PatientParams::REFERENCE.learnable(), v_ed: 120.0, v_es: 60.0 };
        let small = vec![ex; 10];
        assert!(pretrain_surrogate(&small, &small, &ParamBounds::default(), &TrainConfig::default()).is_err());
    }
}
