//! Fixed-step classical Runge–Kutta integration and multi-cycle simulation.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{ceil, floor, round};
use crate::model::{initial_state, CardiacState, Circuit};
use crate::params::{LvadParams, PatientParams};

/// Largest `|λ|·h` allowed per internal RK4 substep; the real-axis stability
/// limit is about 2.785.
const STABLE_LAMBDA_H: f64 = 1.0;

/// Uniformly sampled solution of a generic `N`-dimensional system.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<const N: usize> {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<[f64; N]>,
}

impl<const N: usize> Samples<N> {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn last(&self) -> &[f64; N] {
        self.states.last().expect("samples are never empty")
    }
}

#[inline]
fn axpy<const N: usize>(x: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *x;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

/// One classical RK4 step of size `h`.
#[inline]
pub fn rk4_step<const N: usize, F>(system: &F, t: f64, x: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k1 = system(t, x);
    let k2 = system(t + 0.5 * h, &axpy(x, 0.5 * h, &k1));
    let k3 = system(t + 0.5 * h, &axpy(x, 0.5 * h, &k2));
    let k4 = system(t + h, &axpy(x, h, &k3));
    let mut out = *x;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::SolverSettings("dt must be positive"));
    }
    if !(t1 > t0) {
        return Err(Error::SolverSettings("t1 must exceed t0"));
    }
    if dt > t1 - t0 {
        return Err(Error::SolverSettings("dt exceeds the integration span"));
    }
    // relative slack so that spans that are exact multiples of dt keep their last sample
    Ok(floor((t1 - t0) / dt * (1.0 + 1e-12)) as usize)
}

/// Integrate `system` with plain RK4 from `t0` to the last grid point
/// `t0 + k·dt <= t1`.
pub fn integrate<const N: usize, F>(system: F, x0: [f64; N], t0: f64, t1: f64, dt: f64) -> Result<Samples<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let n = step_count(t0, t1, dt)?;
    integrate_steps(&system, x0, t0, dt, n, |_, _| 1)
}

/// Core stepping loop. `substeps(t, x)` splits each output interval into
/// that many equal RK4 steps.
pub(crate) fn integrate_steps<const N: usize, F, S>(
    system: &F,
    x0: [f64; N],
    t0: f64,
    dt: f64,
    n_steps: usize,
    substeps: S,
) -> Result<Samples<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    S: Fn(f64, &[f64; N]) -> usize,
{
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0, t: t0 });
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0);
    let mut x = x0;
    for k in 0..n_steps {
        let t_k = t0 + k as f64 * dt;
        let m = substeps(t_k, &x).max(1);
        let h = dt / m as f64;
        for j in 0..m {
            x = rk4_step(system, t_k + j as f64 * h, &x, h);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1, t: t0 + (k + 1) as f64 * dt });
        }
        states.push(x);
    }
    Ok(Samples { t0, dt, states })
}

/// Cycle count and resolution for [`simulate_cycles`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub n_cycles: usize,
    pub steps_per_cycle: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings { n_cycles: 3, steps_per_cycle: 2000 }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_cycles < 1 {
            return Err(Error::SolverSettings("n_cycles must be at least 1"));
        }
        if self.steps_per_cycle < 100 {
            return Err(Error::SolverSettings("steps_per_cycle must be at least 100"));
        }
        Ok(())
    }
}

/// Simulated states on a uniform grid, with the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<CardiacState>,
    pub params: PatientParams,
    pub lvad: Option<LvadParams>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(5, |s| s.dim())
    }

    /// Grid samples per cardiac cycle.
    pub fn steps_per_cycle(&self) -> usize {
        round(self.params.t_c / self.dt) as usize
    }

    /// `(P_LV, V_LV)` at sample `k`.
    pub fn pressure_volume(&self, k: usize) -> (f64, f64) {
        crate::model::pressure_volume(&self.states[k], self.time(k), &self.params)
    }

    pub fn p_lv(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.pressure_volume(k).0).collect()
    }

    pub fn v_lv(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.states[k].x1() + self.params.v_d).collect()
    }

    /// Index range (inclusive of both ends) of the final complete cycle.
    pub fn last_cycle(&self) -> Result<core::ops::RangeInclusive<usize>> {
        let spc = self.steps_per_cycle();
        if spc == 0 || self.len() < spc + 1 {
            return Err(Error::TooShort { have: self.len(), need: spc + 1 });
        }
        let end = self.len() - 1;
        Ok(end - spc..=end)
    }
}

/// Substeps needed so every internal RK4 step satisfies `|λ|·h <= 1`.
fn stable_substeps(circuit: &Circuit, dt: f64, t: f64, state: &[f64; 6]) -> usize {
    let lambda = circuit.stiffness_bound(t, state);
    (ceil(lambda * dt / STABLE_LAMBDA_H) as usize).max(1)
}

/// Simulate `n_cycles` heartbeats from the end-diastolic initial state,
/// sampled at `dt = t_c / steps_per_cycle`.
///
/// Each grid interval is split into enough RK4 substeps to stay inside the
/// stability region of the stiff valve couplings (small `r_a` or `r_m`);
/// the stored samples always sit on the requested grid.
pub fn simulate_cycles(
    params: &PatientParams,
    lvad: Option<&LvadParams>,
    n_cycles: usize,
    steps_per_cycle: usize,
) -> Result<Trajectory> {
    SimSettings { n_cycles, steps_per_cycle }.validate()?;
    params.validate()?;
    let dt = params.t_c / steps_per_cycle as f64;
    let n = n_cycles * steps_per_cycle;
    let x0 = initial_state(params);
    let states = match lvad {
        None => {
            let circuit = Circuit::new(params);
            let full = [0.0; 6];
            let base = stable_substeps(&circuit, dt, 0.0, &full);
            let samples = integrate_steps(&|t, x: &[f64; 5]| circuit.rhs5(t, x), x0.five(), 0.0, dt, n, |_, _| base)?;
            samples.states.into_iter().map(CardiacState::baseline).collect()
        }
        Some(lvad) => {
            let circuit = Circuit::with_lvad(params, lvad)?;
            let samples =
                integrate_steps(&|t, y: &[f64; 6]| circuit.rhs6(t, y), x0.attach_lvad().six(), 0.0, dt, n, |t, y| {
                    stable_substeps(&circuit, dt, t, y)
                })?;
            samples.states.into_iter().map(CardiacState::with_lvad).collect()
        }
    };
    Ok(Trajectory { t0: 0.0, dt, states, params: *params, lvad: lvad.copied() })
}

/// [`simulate_cycles`] with bundled settings.
pub fn simulate(params: &PatientParams, lvad: Option<&LvadParams>, settings: &SimSettings) -> Result<Trajectory> {
    simulate_cycles(params, lvad, settings.n_cycles, settings.steps_per_cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp;

    #[test]
    fn zero_dynamics_stay_constant() {
        let x0 = [1.0, -2.0, 3.5];
        let s = integrate(|_, _: &[f64; 3]| [0.0; 3], x0, 0.0, 1.0, 0.1).unwrap();
        assert_eq!(s.states.len(), 11);
        assert!(s.states.iter().all(|x| *x == x0));
    }

    #[test]
    fn exponential_decay() {
        let s = integrate(|_, x: &[f64; 1]| [-x[0]], [1.0], 0.0, 1.0, 0.001).unwrap();
        assert_eq!(s.states.len(), 1001);
        assert!((s.last()[0] - exp(-1.0)).abs() < 1e-9);
    }

    #[test]
    fn last_sample_not_past_t1() {
        let s = integrate(|_, _: &[f64; 1]| [1.0], [0.0], 0.0, 1.05, 0.1).unwrap();
        assert_eq!(s.states.len(), 11);
        assert!(s.time(10) <= 1.05);
    }

    #[test]
    fn bad_settings_are_rejected() {
        let f = |_, _: &[f64; 1]| [0.0];
        assert!(integrate(f, [0.0], 0.0, 1.0, 0.0).is_err());
        assert!(integrate(f, [0.0], 1.0, 1.0, 0.1).is_err());
        assert!(integrate(f, [0.0], 0.0, 1.0, 2.0).is_err());
        assert!(simulate_cycles(&PatientParams::REFERENCE, None, 0, 2000).is_err());
        assert!(simulate_cycles(&PatientParams::REFERENCE, None, 1, 50).is_err());
    }

    #[test]
    fn blowup_reports_step() {
        let err = integrate(|_, x: &[f64; 1]| [x[0] * x[0]], [1.0], 0.0, 2.0, 0.01).unwrap_err();
        match err {
            Error::NonFinite { step, .. } => assert!(step > 50 && step <= 200),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deterministic_prefix() {
        let p = PatientParams::REFERENCE;
        let one = simulate_cycles(&p, None, 1, 400).unwrap();
        let two = simulate_cycles(&p, None, 2, 400).unwrap();
        assert_eq!(one.len(), 401);
        assert_eq!(&two.states[..401], &one.states[..]);
    }
}
