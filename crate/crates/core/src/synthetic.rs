//! Synthetic training data: parameter sampling, forward solves, and a
//! fixed random measurement operator standing in for imaging.

use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::ed_es_volumes;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math::{floor, powf, sqrt, tanh};
use crate::params::{ParamBounds, PatientParams, N_LEARNABLE};
use crate::solver::{simulate, SimSettings, Trajectory};

/// Default pretext dataset size.
pub const PRETEXT_SIZE: usize = 3840;
/// Volume samples per cycle fed to the measurement operator.
pub const RENDER_SAMPLES: usize = 32;
pub const RENDER_HIDDEN: usize = 48;
pub const MEASUREMENT_DIM: usize = 64;
/// Fixed affine normalization of volumes before rendering (ml).
pub const VOLUME_CENTER: f64 = 100.0;
pub const VOLUME_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Uniform,
    Grid,
}

/// Per-axis level counts for a tensor grid with at least `n` points,
/// as equal as possible (earlier axes get the extra level).
pub fn grid_counts(n: usize) -> [usize; N_LEARNABLE] {
    let mut base = floor(powf(n as f64, 1.0 / N_LEARNABLE as f64)) as usize;
    // guard against pow rounding just above an exact root
    while base > 1 && base.pow(N_LEARNABLE as u32) > n {
        base -= 1;
    }
    let mut counts = [base.max(1); N_LEARNABLE];
    let mut axis = 0;
    while counts.iter().product::<usize>() < n {
        counts[axis] += 1;
        axis = (axis + 1) % N_LEARNABLE;
    }
    counts
}

/// Draw `n` parameter vectors from the learnable box.
///
/// `Uniform` draws every coordinate independently; `Grid` enumerates a
/// tensor grid (last coordinate fastest) with endpoints at the interval
/// edges and keeps the first `n` points. The grid ignores `seed`.
pub fn sample_params(n: usize, bounds: &ParamBounds, seed: u64, mode: SamplingMode) -> Vec<PatientParams> {
    let ivs = bounds.intervals();
    match mode {
        SamplingMode::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let mut theta = [0.0; N_LEARNABLE];
                    for (x, iv) in theta.iter_mut().zip(&ivs) {
                        let u: f64 = rng.random();
                        *x = (iv.lo + u * iv.width()).min(iv.hi);
                    }
                    bounds.params(&theta)
                })
                .collect()
        }
        SamplingMode::Grid => {
            let counts = grid_counts(n);
            (0..n)
                .map(|mut idx| {
                    let mut theta = [0.0; N_LEARNABLE];
                    for axis in (0..N_LEARNABLE).rev() {
                        let k = counts[axis];
                        let level = idx % k;
                        idx /= k;
                        let iv = ivs[axis];
                        theta[axis] = if k == 1 {
                            iv.mid()
                        } else if level == k - 1 {
                            iv.hi
                        } else {
                            iv.lo + iv.width() * level as f64 / (k - 1) as f64
                        };
                    }
                    bounds.params(&theta)
                })
                .collect()
        }
    }
}

/// One forward-model solve: learnable parameters and resulting volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretextExample {
    pub theta: [f64; N_LEARNABLE],
    pub v_ed: f64,
    pub v_es: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextDataset {
    pub examples: Vec<PretextExample>,
    pub failures: usize,
}

pub fn pretext_example(params: &PatientParams, settings: &SimSettings) -> Result<PretextExample> {
    let traj = simulate(params, None, settings)?;
    let e = ed_es_volumes(&traj)?;
    Ok(PretextExample { theta: params.learnable(), v_ed: e.v_ed, v_es: e.v_es })
}

/// Keep successful results; fail when more than 1% of `results` are errors.
pub fn keep_successes<T>(results: Vec<Result<T>>) -> Result<(Vec<T>, usize)> {
    let total = results.len();
    let limit = total / 100;
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(_) => failed += 1,
        }
    }
    if failed > limit {
        return Err(Error::TooManyFailures { failed, total, limit });
    }
    Ok((ok, failed))
}

/// Uniform samples from `bounds`, each solved with `settings`.
pub fn generate_pretext_dataset<E: Executor>(
    n: usize,
    bounds: &ParamBounds,
    seed: u64,
    settings: &SimSettings,
    exec: &E,
) -> Result<PretextDataset> {
    generate_pretext_with_mode(n, bounds, seed, SamplingMode::Uniform, settings, exec)
}

pub fn generate_pretext_with_mode<E: Executor>(
    n: usize,
    bounds: &ParamBounds,
    seed: u64,
    mode: SamplingMode,
    settings: &SimSettings,
    exec: &E,
) -> Result<PretextDataset> {
    if n == 0 {
        return Err(Error::Empty("dataset size must be at least 1"));
    }
    let params = sample_params(n, bounds, seed, mode);
    let results = exec.map_indexed(n, |i| pretext_example(&params[i], settings));
    let (examples, failures) = keep_successes(results)?;
    Ok(PretextDataset { examples, failures })
}

/// Imaging stand-in: a feature vector plus volume labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub y: Vec<f64>,
    pub v_ed: f64,
    pub v_es: f64,
    pub true_theta: Option<[f64; N_LEARNABLE]>,
}

impl Measurement {
    pub fn labels(&self) -> [f64; 2] {
        [self.v_ed, self.v_es]
    }
}

/// Frozen two-layer random map `y = tanh(W2 relu(W1 v + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Renderer {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Renderer {
    pub fn new(render_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(render_seed);
        let mut uniform = |n: usize, a: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-a..a)).collect() };
        let w1 = uniform(RENDER_HIDDEN * RENDER_SAMPLES, sqrt(3.0 / RENDER_SAMPLES as f64));
        let b1 = uniform(RENDER_HIDDEN, 0.5);
        let w2 = uniform(MEASUREMENT_DIM * RENDER_HIDDEN, sqrt(6.0 / RENDER_HIDDEN as f64));
        let b2 = uniform(MEASUREMENT_DIM, 0.2);
        Renderer { w1, b1, w2, b2 }
    }

    /// Noise-free feature vector for normalized volume samples.
    pub fn features(&self, v: &[f64; RENDER_SAMPLES]) -> Vec<f64> {
        let hidden: Vec<f64> = (0..RENDER_HIDDEN)
            .map(|i| {
                let row = &self.w1[i * RENDER_SAMPLES..(i + 1) * RENDER_SAMPLES];
                let z: f64 = row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + self.b1[i];
                z.max(0.0)
            })
            .collect();
        (0..MEASUREMENT_DIM)
            .map(|i| {
                let row = &self.w2[i * RENDER_HIDDEN..(i + 1) * RENDER_HIDDEN];
                let z: f64 = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[i];
                tanh(z)
            })
            .collect()
    }

    /// Render a trajectory's final cycle. `noise` supplies the Gaussian
    /// perturbation source when `noise_sigma > 0`.
    pub fn render<R: Rng>(&self, traj: &Trajectory, noise_sigma: f64, noise: &mut R) -> Result<Measurement> {
        let v = normalized_volume_samples(traj)?;
        let mut y = self.features(&v);
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).map_err(|_| Error::invalid("noise_sigma", "invalid"))?;
            for yi in y.iter_mut() {
                *yi += normal.sample(noise);
            }
        }
        let e = ed_es_volumes(traj)?;
        Ok(Measurement { y, v_ed: e.v_ed, v_es: e.v_es, true_theta: None })
    }
}

/// `RENDER_SAMPLES` volumes at uniform phases of the final cycle,
/// normalized as `(V - 100) / 100`.
pub fn normalized_volume_samples(traj: &Trajectory) -> Result<[f64; RENDER_SAMPLES]> {
    let range = traj.last_cycle()?;
    let start = *range.start();
    let spc = (range.end() - start) as f64;
    let v_d = traj.params.v_d;
    let mut out = [0.0; RENDER_SAMPLES];
    for (j, o) in out.iter_mut().enumerate() {
        let pos = spc * j as f64 / RENDER_SAMPLES as f64;
        let i = floor(pos) as usize;
        let w = pos - i as f64;
        let a = traj.states[start + i].x1();
        let b = traj.states[(start + i + 1).min(*range.end())].x1();
        let v = a + w * (b - a) + v_d;
        *o = (v - VOLUME_CENTER) / VOLUME_SCALE;
    }
    Ok(out)
}

fn noise_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_655f_7267);
    rng.set_stream(index as u64);
    rng
}

/// Render with weights materialized from `render_seed`; noise drawn from
/// `noise_seed`.
pub fn render_measurement(
    traj: &Trajectory,
    render_seed: u64,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<Measurement> {
    Renderer::new(render_seed).render(traj, noise_sigma, &mut noise_rng(noise_seed, 0))
}

/// Labelled measurements with an 80/10/10 split by index.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneDataset {
    pub measurements: Vec<Measurement>,
    pub failures: usize,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl FinetuneDataset {
    pub fn split(n: usize) -> (Range<usize>, Range<usize>, Range<usize>) {
        let train = n * 8 / 10;
        let val = n / 10;
        (0..train, train..train + val, train + val..n)
    }

    pub fn from_measurements(measurements: Vec<Measurement>, failures: usize) -> Self {
        let (train, val, test) = Self::split(measurements.len());
        FinetuneDataset { measurements, failures, train, val, test }
    }

    pub fn train_set(&self) -> &[Measurement] {
        &self.measurements[self.train.clone()]
    }

    pub fn val_set(&self) -> &[Measurement] {
        &self.measurements[self.val.clone()]
    }

    pub fn test_set(&self) -> &[Measurement] {
        &self.measurements[self.test.clone()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSpec {
    pub n: usize,
    pub seed: u64,
    pub render_seed: u64,
    pub noise_sigma: f64,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        FinetuneSpec { n: 1000, seed: 3, render_seed: 4, noise_sigma: 0.0 }
    }
}

pub fn generate_finetune_dataset<E: Executor>(
    spec: &FinetuneSpec,
    bounds: &ParamBounds,
    settings: &SimSettings,
    exec: &E,
) -> Result<FinetuneDataset> {
    if spec.n == 0 {
        return Err(Error::Empty("dataset size must be at least 1"));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma", "must be non-negative"));
    }
    let params = sample_params(spec.n, bounds, spec.seed, SamplingMode::Uniform);
    let renderer = Renderer::new(spec.render_seed);
    let results = exec.map_indexed(spec.n, |i| {
        let traj = simulate(&params[i], None, settings)?;
        let mut m = renderer.render(&traj, spec.noise_sigma, &mut noise_rng(spec.seed, i))?;
        m.true_theta = Some(params[i].learnable());
        Ok(m)
    });
    let (measurements, failures) = keep_successes(results)?;
    Ok(FinetuneDataset::from_measurements(measurements, failures))
}
