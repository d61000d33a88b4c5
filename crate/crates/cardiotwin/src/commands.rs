//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cardiotwin_core::analysis::{ed_es_volumes, ejection_fraction, pv_loop, EdEs, PvLoop};
use cardiotwin_core::identifiability::{identify_with_tolerance, RecoveredParams};
use cardiotwin_core::params::{LvadParams, PatientParams, N_LEARNABLE};
use cardiotwin_core::pipeline::{
    calibrate_omega, finetune_backbone, low_ef_cohort, omega_sweep, predict_twin, pretrain_surrogate, run_lvad_trial,
    Calibration, FinetuneMetrics, SurrogateMetrics, TrialResult,
};
use cardiotwin_core::solver::{simulate, SimSettings};
use cardiotwin_core::synthetic::{
    generate_finetune_dataset, generate_pretext_with_mode, FinetuneDataset, FinetuneSpec, Measurement, SamplingMode,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{self, Checkpoint, NetRole, Provenance};
use crate::parallel::Rayon;
use crate::svg::emit_pv_svg;
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "cardiotwin", version, about = "Cardiac digital-twin simulation, training and LVAD trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one patient and write trajectory, PV loop and summary.
    Simulate(SimulateArgs),
    /// Generate the surrogate pretext dataset.
    GenPretext(GenPretextArgs),
    /// Generate rendered measurements for backbone finetuning.
    GenFinetune(GenFinetuneArgs),
    /// Train the volume surrogate on a pretext dataset.
    Pretrain(PretrainArgs),
    /// Train the measurement backbone through the frozen surrogate.
    Finetune(FinetuneArgs),
    /// Predict a twin from one measurement and re-simulate it.
    Predict(PredictArgs),
    /// Run a baseline vs LVAD trial on a low-EF synthetic cohort.
    Trial(TrialArgs),
    /// Sweep constant pump speeds for one patient.
    Sweep(SweepArgs),
    /// Recover static parameters from a full-state trajectory CSV.
    Identify(IdentifyArgs),
    /// Run the acceptance checks and print one line per criterion.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// PatientParams JSON; the reference patient when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Attach the LVAD at this constant speed.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Number of heart cycles (overrides sim.n_cycles).
    #[arg(long)]
    pub cycles: Option<usize>,
    /// RK4 output steps per cycle (overrides sim.steps_per_cycle).
    #[arg(long)]
    pub steps_per_cycle: Option<usize>,
    /// Directory for output files; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Uniform,
    Grid,
}

#[derive(Debug, Args)]
pub struct GenPretextArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter sampling scheme.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Output CSV; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenFinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the frozen measurement renderer.
    #[arg(long)]
    pub render_seed: Option<u64>,
    /// Standard deviation of additive measurement noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Pretext CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out pretext CSV; generated from the config when omitted.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Finetune CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Surrogate checkpoint from `pretrain`.
    #[arg(long)]
    pub surrogate: PathBuf,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Backbone checkpoint from `finetune`.
    #[arg(long)]
    pub backbone: PathBuf,
    /// Finetune CSV to take the measurement from (with `--row`).
    #[arg(long, requires = "row")]
    pub data: Option<PathBuf>,
    /// Zero-based row of `--data`.
    #[arg(long)]
    pub row: Option<usize>,
    /// JSON array with one measurement vector.
    #[arg(long, conflicts_with_all = ["data", "row"])]
    pub measurement: Option<PathBuf>,
    /// Directory for output files; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrialArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fixed pump speed; calibrated on the cohort when omitted.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Number of low-EF patients in the cohort.
    #[arg(long)]
    pub cohort_size: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// PatientParams JSON; the reference patient when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Comma-separated pump speeds; the config grid when omitted.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Directory for output files; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trajectory CSV as written by `simulate`.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// PatientParams JSON used for relative errors.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run only this criterion (1 to 8).
    #[arg(long)]
    pub criterion: Option<u8>,
    /// Write the per-criterion report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Summary line printed on success.
pub type Outcome = String;

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::GenPretext(a) => gen_pretext_cmd(a),
        Command::GenFinetune(a) => gen_finetune_cmd(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Trial(a) => trial_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Identify(a) => identify_cmd(a),
        Command::Verify(a) => verify_cmd(a),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    RunConfig::load_or_default(common.config.as_deref())
}

fn load_params(path: Option<&Path>) -> Result<PatientParams> {
    let p = match path {
        Some(p) => io::read_json::<PatientParams>(p)?,
        None => PatientParams::REFERENCE,
    };
    p.validate().context("patient parameters")?;
    Ok(p)
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub meta: Provenance,
    pub params: PatientParams,
    pub lvad: Option<LvadParams>,
    pub sim: SimSettings,
    pub edes: EdEs,
    pub ef: f64,
    pub pv_closure_gap: f64,
}

fn simulate_cmd(a: SimulateArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    cfg.sim.n_cycles = a.cycles.unwrap_or(cfg.sim.n_cycles);
    cfg.sim.steps_per_cycle = a.steps_per_cycle.unwrap_or(cfg.sim.steps_per_cycle);
    cfg.validate()?;
    let params = load_params(a.params.as_deref())?;
    let lvad = a.omega.map(|w| cfg.lvad.with_constant_omega(w));
    let traj = simulate(&params, lvad.as_ref(), &cfg.sim)?;
    let edes = ed_es_volumes(&traj)?;
    let ef = ejection_fraction(&edes)?;
    let pv = pv_loop(&traj)?;
    let meta = Provenance::new(&cfg, &[]);
    io::write_file(&a.out_dir.join("trajectory.csv"), |w| io::write_trajectory(w, &traj, &meta))?;
    io::write_file(&a.out_dir.join("pv_loop.csv"), |w| io::write_pv_loop(w, &pv, &meta))?;
    let label = match a.omega {
        Some(w) => format!("LVAD ω={w}"),
        None => "baseline".to_string(),
    };
    emit_pv_svg(&[&pv], &[label], &a.out_dir.join("pv_loop.svg"))?;
    let summary = SimulationSummary { meta, params, lvad, sim: cfg.sim, edes, ef, pv_closure_gap: pv.closure_gap() };
    io::write_json(&a.out_dir.join("summary.json"), &summary)?;
    Ok(format!("simulate: v_ed={:.3} v_es={:.3} ef={:.4}", edes.v_ed, edes.v_es, ef))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PretextSidecar {
    pub meta: Provenance,
    pub n: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    pub failures: usize,
    pub sim: SimSettings,
    pub bounds: cardiotwin_core::params::ParamBounds,
}

fn gen_pretext_cmd(a: GenPretextArgs) -> Result<Outcome> {
    let cfg = load_config(&a.common)?;
    let n = a.n.unwrap_or(cfg.pretext.n);
    let seed = a.seed.unwrap_or(cfg.pretext.seed);
    let mode = match a.mode {
        Some(ModeArg::Uniform) => SamplingMode::Uniform,
        Some(ModeArg::Grid) => SamplingMode::Grid,
        None => cfg.pretext.mode,
    };
    let bounds = cfg.param_bounds();
    let ds = generate_pretext_with_mode(n, &bounds, seed, mode, &cfg.sim, &Rayon)?;
    let meta = Provenance::new(&cfg, &[("seed", seed)]);
    io::write_file(&a.out, |w| io::write_pretext(w, &ds.examples, &meta))?;
    let side = PretextSidecar { meta, n, seed, mode, failures: ds.failures, sim: cfg.sim, bounds };
    io::write_json(&sidecar_path(&a.out), &side)?;
    Ok(format!("gen-pretext: {} examples, {} failures", ds.examples.len(), ds.failures))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinetuneSidecar {
    pub meta: Provenance,
    pub spec: FinetuneSpec,
    pub failures: usize,
    pub split: [[usize; 2]; 3],
    pub sim: SimSettings,
    pub bounds: cardiotwin_core::params::ParamBounds,
}

fn gen_finetune_cmd(a: GenFinetuneArgs) -> Result<Outcome> {
    let cfg = load_config(&a.common)?;
    let mut spec = cfg.finetune_data;
    spec.n = a.n.unwrap_or(spec.n);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.render_seed = a.render_seed.unwrap_or(spec.render_seed);
    spec.noise_sigma = a.noise_sigma.unwrap_or(spec.noise_sigma);
    let bounds = cfg.param_bounds();
    let ds = generate_finetune_dataset(&spec, &bounds, &cfg.sim, &Rayon)?;
    let meta = Provenance::new(&cfg, &[("seed", spec.seed), ("render_seed", spec.render_seed)]);
    io::write_file(&a.out, |w| io::write_finetune(w, &ds.measurements, &meta))?;
    let split = [[ds.train.start, ds.train.end], [ds.val.start, ds.val.end], [ds.test.start, ds.test.end]];
    let side = FinetuneSidecar { meta, spec, failures: ds.failures, split, sim: cfg.sim, bounds };
    io::write_json(&sidecar_path(&a.out), &side)?;
    Ok(format!("gen-finetune: {} measurements, {} failures", ds.measurements.len(), ds.failures))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsFile<M> {
    pub meta: Provenance,
    pub metrics: M,
    pub final_loss: Option<f64>,
}

fn pretrain_cmd(a: PretrainArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    cfg.pretrain.epochs = a.epochs.unwrap_or(cfg.pretrain.epochs);
    cfg.pretrain.seed = a.seed.unwrap_or(cfg.pretrain.seed);
    cfg.validate()?;
    let bounds = cfg.param_bounds();
    let train = io::read_file(&a.data, io::read_pretext)?;
    let eval = match &a.eval {
        Some(p) => io::read_file(p, io::read_pretext)?,
        None => {
            generate_pretext_with_mode(
                cfg.pretext.eval_n,
                &bounds,
                cfg.pretext.eval_seed,
                SamplingMode::Uniform,
                &cfg.sim,
                &Rayon,
            )?
            .examples
        }
    };
    let report = pretrain_surrogate(&train, &eval, &bounds, &cfg.pretrain)?;
    let meta = Provenance::new(&cfg, &[("train_seed", cfg.pretrain.seed), ("eval_seed", cfg.pretext.eval_seed)]);
    let ckpt = Checkpoint { meta: meta.clone(), role: NetRole::Surrogate, bounds, net: report.net };
    io::write_json(&a.out_dir.join("surrogate.json"), &ckpt)?;
    io::write_file(&a.out_dir.join("loss.csv"), |w| io::write_loss(w, &report.history, &meta))?;
    let m: MetricsFile<SurrogateMetrics> =
        MetricsFile { meta, metrics: report.metrics.clone(), final_loss: report.history.last().copied() };
    io::write_json(&a.out_dir.join("metrics.json"), &m)?;
    Ok(format!("pretrain: eval EF MAE {:.3} points", report.metrics.eval_ef_mae))
}

fn finetune_cmd(a: FinetuneArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    cfg.finetune.epochs = a.epochs.unwrap_or(cfg.finetune.epochs);
    cfg.finetune.seed = a.seed.unwrap_or(cfg.finetune.seed);
    cfg.validate()?;
    let surrogate = Checkpoint::load(&a.surrogate, NetRole::Surrogate)?;
    let measurements = io::read_file(&a.data, io::read_finetune)?;
    ensure!(!measurements.is_empty(), "{} has no rows", a.data.display());
    let ds = FinetuneDataset::from_measurements(measurements, 0);
    let report = finetune_backbone(&ds, &surrogate.net, &surrogate.bounds, &cfg.finetune, &cfg.sim, &Rayon)?;
    let meta = Provenance::new(&cfg, &[("train_seed", cfg.finetune.seed)]);
    let ckpt = Checkpoint { meta: meta.clone(), role: NetRole::Backbone, bounds: surrogate.bounds, net: report.net };
    io::write_json(&a.out_dir.join("backbone.json"), &ckpt)?;
    io::write_file(&a.out_dir.join("loss.csv"), |w| io::write_loss(w, &report.history, &meta))?;
    let m: MetricsFile<FinetuneMetrics> =
        MetricsFile { meta, metrics: report.metrics.clone(), final_loss: report.history.last().copied() };
    io::write_json(&a.out_dir.join("metrics.json"), &m)?;
    Ok(format!(
        "finetune: test EF MAE {:.3} points (re-simulated), {:.3} (surrogate)",
        report.metrics.test_ef_mae_resim, report.metrics.test_ef_mae_surrogate
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TwinFile {
    pub meta: Provenance,
    pub theta_hat: PatientParams,
    pub true_theta: Option<[f64; N_LEARNABLE]>,
    pub edes: EdEs,
    pub ef: f64,
    pub pv_loop: PvLoop,
}

fn predict_cmd(a: PredictArgs) -> Result<Outcome> {
    let cfg = load_config(&a.common)?;
    let backbone = Checkpoint::load(&a.backbone, NetRole::Backbone)?;
    let m: Measurement = match (&a.measurement, &a.data, a.row) {
        (Some(p), _, _) => {
            let y: Vec<f64> = io::read_json(p)?;
            Measurement { y, v_ed: f64::NAN, v_es: f64::NAN, true_theta: None }
        }
        (None, Some(p), Some(row)) => {
            let all = io::read_file(p, io::read_finetune)?;
            let n = all.len();
            all.into_iter().nth(row).with_context(|| format!("row {row} out of range ({n} rows)"))?
        }
        _ => bail!("need --measurement or --data with --row"),
    };
    let twin = predict_twin(&m.y, &backbone.net, &backbone.bounds.fixed, &cfg.sim)?;
    let meta = Provenance::new(&cfg, &[]);
    io::write_file(&a.out_dir.join("pv_loop.csv"), |w| io::write_pv_loop(w, &twin.pv_loop, &meta))?;
    emit_pv_svg(&[&twin.pv_loop], &["predicted twin".to_string()], &a.out_dir.join("pv_loop.svg"))?;
    let file = TwinFile {
        meta,
        theta_hat: twin.theta_hat,
        true_theta: m.true_theta,
        edes: twin.edes,
        ef: twin.ef,
        pv_loop: twin.pv_loop,
    };
    io::write_json(&a.out_dir.join("twin.json"), &file)?;
    Ok(format!("predict: ef={:.4} v_ed={:.3} v_es={:.3}", twin.ef, twin.edes.v_ed, twin.edes.v_es))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrialSummary {
    pub meta: Provenance,
    pub omega: f64,
    pub calibration: Option<Calibration>,
    pub cohort_size: usize,
    pub failed: Vec<usize>,
    pub mean_delta_ef: f64,
    pub mean_ef_baseline: f64,
    pub mean_ef_lvad: f64,
    pub spearman_baseline_delta: f64,
    pub sim: SimSettings,
    pub lvad: LvadParams,
}

/// Cohort, calibration (unless `omega` is fixed) and trial.
pub fn trial_pipeline(cfg: &RunConfig, omega: Option<f64>) -> Result<(TrialResult, Option<Calibration>, f64)> {
    let bounds = cfg.param_bounds();
    let cohort = low_ef_cohort(cfg.trial.cohort_size, &bounds, cfg.trial.cohort_seed, &cfg.sim, &Rayon)?;
    let (omega, calibration) = match omega {
        Some(w) => (w, None),
        None => {
            let cal = calibrate_omega(&cohort, &cfg.lvad, &cfg.trial.omega_levels, &cfg.sim, &Rayon)?;
            let w = cal.omega.context("no pump speed in the sweep met the calibration rule")?;
            (w, Some(cal))
        }
    };
    let trial = run_lvad_trial(&cohort, &cfg.lvad.with_constant_omega(omega), &cfg.sim, &Rayon)?;
    Ok((trial, calibration, omega))
}

fn trial_cmd(a: TrialArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    cfg.trial.cohort_size = a.cohort_size.unwrap_or(cfg.trial.cohort_size);
    cfg.trial.cohort_seed = a.seed.unwrap_or(cfg.trial.cohort_seed);
    let (trial, calibration, omega) = trial_pipeline(&cfg, a.omega.or(cfg.trial.omega))?;
    let meta = Provenance::new(&cfg, &[("cohort_seed", cfg.trial.cohort_seed)]);
    io::write_file(&a.out_dir.join("trial.csv"), |w| io::write_trial(w, &trial, &meta))?;
    io::write_file(&a.out_dir.join("ef_histogram.csv"), |w| io::write_ef_histogram(w, &trial, 20, &meta))?;
    let summary = TrialSummary {
        meta,
        omega,
        calibration,
        cohort_size: cfg.trial.cohort_size,
        failed: trial.failed.clone(),
        mean_delta_ef: trial.mean_delta_ef,
        mean_ef_baseline: trial.mean_ef_baseline,
        mean_ef_lvad: trial.mean_ef_lvad,
        spearman_baseline_delta: trial.spearman_baseline_delta,
        sim: cfg.sim,
        lvad: cfg.lvad.with_constant_omega(omega),
    };
    io::write_json(&a.out_dir.join("summary.json"), &summary)?;
    Ok(format!(
        "trial: omega={omega} mean ΔEF={:.4} spearman={:.3}",
        trial.mean_delta_ef, trial.spearman_baseline_delta
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub meta: Provenance,
    pub params: PatientParams,
    pub levels: Vec<f64>,
    pub failed: Vec<(f64, String)>,
    pub mean_pump_flow: Vec<(f64, f64)>,
}

fn sweep_cmd(a: SweepArgs) -> Result<Outcome> {
    let cfg = load_config(&a.common)?;
    let params = load_params(a.params.as_deref())?;
    let levels = a.levels.unwrap_or_else(|| cfg.trial.omega_levels.clone());
    let rows = omega_sweep(&params, &cfg.lvad, &levels, &cfg.sim)?;
    let meta = Provenance::new(&cfg, &[]);
    io::write_file(&a.out_dir.join("sweep.csv"), |w| io::write_sweep(w, &rows, &meta))?;
    let ok: Vec<_> = rows.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| (r.omega, o))).collect();
    if !ok.is_empty() {
        let loops: Vec<&PvLoop> = ok.iter().map(|(_, o)| &o.pv_loop).collect();
        let labels: Vec<String> = ok.iter().map(|(w, _)| format!("ω={w}")).collect();
        emit_pv_svg(&loops, &labels, &a.out_dir.join("pv_loops.svg"))?;
    }
    let summary = SweepSummary {
        meta,
        params,
        levels: rows.iter().map(|r| r.omega).collect(),
        failed: rows.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| (r.omega, e.to_string()))).collect(),
        mean_pump_flow: ok.iter().map(|(w, o)| (*w, o.mean_pump_flow)).collect(),
    };
    io::write_json(&a.out_dir.join("summary.json"), &summary)?;
    Ok(format!("sweep: {} levels, {} failed", rows.len(), summary.failed.len()))
}

/// Relative tolerance on `V_LV − x1` for CSV input stored at 9 significant digits.
pub const CSV_VD_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Serialize, Deserialize)]
pub struct RecoveredFile {
    pub meta: Provenance,
    #[serde(flatten)]
    pub recovered: RecoveredParams,
}

fn identify_cmd(a: IdentifyArgs) -> Result<Outcome> {
    let cfg = load_config(&a.common)?;
    let table = io::read_file(&a.trajectory, io::read_trajectory)?;
    let series = table.state_series()?;
    let truth = a.truth.as_deref().map(|p| load_params(Some(p))).transpose()?;
    let recovered = identify_with_tolerance(&series, truth.as_ref(), CSV_VD_TOLERANCE)?;
    let worst = recovered.relative_error.map(|e| e.to_array().into_iter().fold(0.0, f64::max));
    io::write_json(&a.out, &RecoveredFile { meta: Provenance::new(&cfg, &[]), recovered })?;
    Ok(match worst {
        Some(w) => format!("identify: max relative error {w:.2e}"),
        None => "identify: done".to_string(),
    })
}

fn verify_cmd(a: VerifyArgs) -> Result<Outcome> {
    let cfg = load_config(&a.common)?;
    let reports = match a.criterion {
        Some(id) => {
            let r = verify::run_one(&cfg, id)?;
            println!("{r}");
            vec![r]
        }
        None => verify::run_all(&cfg, |r| println!("{r}")),
    };
    if let Some(p) = &a.report {
        io::write_json(p, &reports)?;
    }
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
    if failed.is_empty() {
        Ok(format!("verify: all {} criteria passed", reports.len()))
    } else {
        Err(verify::VerifyFailed(failed.join(",")).into())
    }
}
