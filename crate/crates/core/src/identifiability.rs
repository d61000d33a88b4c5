//! Constructive recovery of the twelve static parameters from a fully
//! observed trajectory.
//!
//! The elastance waveform and dead volume come straight from the pressure
//! and volume series. With E(t) known, the diode signals
//! `q1 = max(x2 − E·x1, 0)` and `q2 = max(E·x1 − x4, 0)` are data, and each
//! state equation becomes linear in two combinations of the unknowns after a
//! truncated Laplace transform. Every row is solved by least squares over
//! several transform variables.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::elastance::SHAPE_PEAK;
use crate::error::{Error, Result};
use crate::math;
use crate::params::PatientParams;
use crate::solver::Trajectory;

/// Transform variables (1/s).
pub const LAPLACE_S: [f64; 3] = [2.0, 4.0, 8.0];
/// Per-row condition number limit (column-normalized).
pub const MAX_CONDITION: f64 = 1e10;
/// Tolerance on the constancy of `V_LV − x1`.
pub const VD_TOLERANCE: f64 = 1e-9;

/// Trapezoidal `∫₀^T e^(−st) f(t) dt` with `T = (n − 1)·dt`.
pub fn truncated_laplace(series: &[f64], dt: f64, s: f64) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let decay = math::exp(-s * dt);
    let mut w = 1.0;
    let mut acc = 0.0;
    for (k, &f) in series.iter().enumerate() {
        let edge = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        acc += edge * w * f;
        w *= decay;
    }
    acc * dt
}

/// Exact truncated transform of a derivative: `s·L_T(x) − x(0) + e^(−sT)·x(T)`.
fn laplace_of_derivative(series: &[f64], dt: f64, s: f64) -> f64 {
    let t_end = (series.len() - 1) as f64 * dt;
    s * truncated_laplace(series, dt, s) - series[0] + math::exp(-s * t_end) * series[series.len() - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElastanceEstimate {
    pub e_max: f64,
    pub e_min: f64,
    pub t_c: f64,
    pub v_d: f64,
    /// Pointwise `p_lv / x1`.
    #[serde(skip)]
    pub series: Vec<f64>,
}

/// Sample autocovariance of a mean-removed series at `lag`, fixed window.
fn autocov(x: &[f64], window: usize, lag: usize) -> f64 {
    x[..window].iter().zip(&x[lag..lag + window]).map(|(a, b)| a * b).sum()
}

/// Period (in samples, fractional) of the dominant repetition of `x`.
fn period_samples(x: &[f64]) -> Result<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let window = n / 2;
    let r0 = autocov(&centred, window, 0);
    if !(r0 > 0.0) || r0 < 1e-24 * window as f64 {
        return Err(Error::Degenerate("signal has no variation"));
    }
    let stride = (window / 2048).max(1);
    let coarse: Vec<(usize, f64)> =
        (1..=window / stride).map(|j| (j * stride, autocov(&centred, window, j * stride))).collect();
    // First lag past the initial decorrelation where the correlation returns above half its zero-lag value.
    let neg = coarse.iter().position(|&(_, r)| r < 0.0).ok_or(Error::Degenerate("no oscillation"))?;
    let first = coarse[neg..]
        .iter()
        .position(|&(_, r)| r > 0.5 * r0)
        .map(|p| p + neg)
        .ok_or(Error::Degenerate("no repeat within half the record"))?;
    // Climb to the local maximum on the coarse grid, then refine sample by sample.
    let mut j = first;
    while j + 1 < coarse.len() && coarse[j + 1].1 > coarse[j].1 {
        j += 1;
    }
    let lo = coarse[j].0.saturating_sub(stride).max(1);
    let hi = (coarse[j].0 + stride).min(window - 1);
    let mut best = (lo, autocov(&centred, window, lo));
    for k in lo + 1..=hi {
        let r = autocov(&centred, window, k);
        if r > best.1 {
            best = (k, r);
        }
    }
    let k = best.0;
    if k <= 1 || k >= window - 1 {
        return Ok(k as f64);
    }
    let (a, b, c) = (autocov(&centred, window, k - 1), best.1, autocov(&centred, window, k + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Ok(k as f64 + shift)
}

/// Dead volume, elastance waveform and its parameters from `(p_lv, v_lv, x1)` series.
///
/// `e_min` and the peak of E are read over the last detected cycle; the
/// peak is converted to `e_max` through the known peak of the shape function.
pub fn recover_elastance(p_lv: &[f64], v_lv: &[f64], x1: &[f64], dt: f64) -> Result<ElastanceEstimate> {
    recover_elastance_with_tolerance(p_lv, v_lv, x1, dt, VD_TOLERANCE)
}

/// [`recover_elastance`] with an explicit relative tolerance on `V_LV − x1`,
/// for series that were stored at reduced precision.
pub fn recover_elastance_with_tolerance(
    p_lv: &[f64],
    v_lv: &[f64],
    x1: &[f64],
    dt: f64,
    vd_tolerance: f64,
) -> Result<ElastanceEstimate> {
    let n = p_lv.len();
    if v_lv.len() != n || x1.len() != n {
        return Err(Error::Dimension { expected: n, got: if v_lv.len() != n { v_lv.len() } else { x1.len() } });
    }
    if n < 8 {
        return Err(Error::TooShort { have: n, need: 8 });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive and finite"));
    }
    let diffs: Vec<f64> = v_lv.iter().zip(x1).map(|(v, x)| v - x).collect();
    let v_d = diffs.iter().sum::<f64>() / n as f64;
    let scale = v_lv.iter().fold(v_d.abs(), |m, v| m.max(v.abs())).max(1.0);
    if diffs.iter().any(|d| (d - v_d).abs() > vd_tolerance * scale) {
        return Err(Error::Inconsistent("V_LV − x1 is not constant"));
    }
    if x1.iter().any(|&x| x.abs() < 1e-12) {
        return Err(Error::Degenerate("x1 vanishes; elastance undefined"));
    }
    let series: Vec<f64> = p_lv.iter().zip(x1).map(|(p, x)| p / x).collect();
    let period = period_samples(&series)?;
    let t_c = period * dt;
    let cycle = math::round(period) as usize;
    if 2 * cycle > n {
        return Err(Error::TooShort { have: n, need: 2 * cycle });
    }
    let last = &series[n - cycle - 1..];
    let peak = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e_min = last.iter().copied().fold(f64::INFINITY, f64::min);
    let e_max = e_min + (peak - e_min) / SHAPE_PEAK;
    Ok(ElastanceEstimate { e_max, e_min, t_c, v_d, series })
}

/// Full-state record on a uniform grid starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    pub dt: f64,
    pub x: Vec<[f64; 5]>,
    pub p_lv: Vec<f64>,
    pub v_lv: Vec<f64>,
}

impl StateSeries {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let x = traj.states.iter().map(|s| s.five()).collect();
        Self { dt: traj.dt, x, p_lv: traj.p_lv(), v_lv: traj.v_lv() }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|s| s[i]).collect()
    }

    /// Keep every `k`-th sample.
    pub fn decimate(&self, k: usize) -> Self {
        let k = k.max(1);
        Self {
            dt: self.dt * k as f64,
            x: self.x.iter().step_by(k).copied().collect(),
            p_lv: self.p_lv.iter().step_by(k).copied().collect(),
            v_lv: self.v_lv.iter().step_by(k).copied().collect(),
        }
    }
}

/// Twelve recovered parameters, in the order of the model's parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticValues {
    pub e_max: f64,
    pub e_min: f64,
    pub t_c: f64,
    pub v_d: f64,
    pub r_m: f64,
    pub r_a: f64,
    pub r_s: f64,
    pub c_r: f64,
    pub c_s: f64,
    pub c_a: f64,
    pub l_s: f64,
    pub r_c: f64,
}

pub const STATIC_NAMES: [&str; 12] =
    ["e_max", "e_min", "t_c", "v_d", "r_m", "r_a", "r_s", "c_r", "c_s", "c_a", "l_s", "r_c"];

impl StaticValues {
    pub fn from_params(p: &PatientParams) -> Self {
        Self {
            e_max: p.e_max,
            e_min: p.e_min,
            t_c: p.t_c,
            v_d: p.v_d,
            r_m: p.r_m,
            r_a: p.r_a,
            r_s: p.r_s,
            c_r: p.c_r,
            c_s: p.c_s,
            c_a: p.c_a,
            l_s: p.l_s,
            r_c: p.r_c,
        }
    }

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.e_max, self.e_min, self.t_c, self.v_d, self.r_m, self.r_a, self.r_s, self.c_r, self.c_s, self.c_a,
            self.l_s, self.r_c,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        let [e_max, e_min, t_c, v_d, r_m, r_a, r_s, c_r, c_s, c_a, l_s, r_c] = a;
        Self { e_max, e_min, t_c, v_d, r_m, r_a, r_s, c_r, c_s, c_a, l_s, r_c }
    }

    /// Componentwise `|self − truth| / |truth|`.
    pub fn relative_error(&self, truth: &Self) -> Self {
        let (a, b) = (self.to_array(), truth.to_array());
        Self::from_array(core::array::from_fn(|i| (a[i] - b[i]).abs() / b[i].abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredParams {
    pub values: StaticValues,
    /// r_s as implied by the systemic-artery row alone.
    pub r_s_row3: f64,
    /// r_a as implied by the aortic row alone.
    pub r_a_row4: f64,
    /// Relative least-squares residual `‖A·u − b‖ / ‖b‖` per state row.
    pub residuals: [f64; 5],
    /// Condition number of each column-normalized row system.
    pub conditions: [f64; 5],
    pub truth: Option<StaticValues>,
    pub relative_error: Option<StaticValues>,
}

#[derive(Debug)]
struct RowFit {
    u: [f64; 2],
    residual: f64,
    cond: f64,
}

/// Least squares `A·u ≈ b` for two columns via modified Gram-Schmidt on
/// column-normalized A.
fn solve_row(row: &'static str, a: &[[f64; 2]], b: &[f64]) -> Result<RowFit> {
    let norm = |j: usize| math::sqrt(a.iter().map(|r| r[j] * r[j]).sum::<f64>());
    let d = [norm(0), norm(1)];
    if !(d[0] > 0.0 && d[1] > 0.0) {
        return Err(Error::IllConditioned { row, cond: f64::INFINITY });
    }
    let mut q0: Vec<f64> = a.iter().map(|r| r[0] / d[0]).collect();
    let mut q1: Vec<f64> = a.iter().map(|r| r[1] / d[1]).collect();
    let r00 = math::sqrt(q0.iter().map(|v| v * v).sum());
    q0.iter_mut().for_each(|v| *v /= r00);
    let r01: f64 = q0.iter().zip(&q1).map(|(x, y)| x * y).sum();
    q1.iter_mut().zip(&q0).for_each(|(v, q)| *v -= r01 * q);
    let r11 = math::sqrt(q1.iter().map(|v| v * v).sum());
    // Singular values of the 2×2 triangle give the condition number.
    let (fro2, det) = (r00 * r00 + r01 * r01 + r11 * r11, (r00 * r11).abs());
    let disc = math::sqrt((fro2 * fro2 - 4.0 * det * det).max(0.0));
    let s_min2 = (fro2 - disc) / 2.0;
    let cond = if s_min2 > 0.0 { math::sqrt((fro2 + disc) / 2.0 / s_min2) } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { row, cond });
    }
    q1.iter_mut().for_each(|v| *v /= r11);
    let c0: f64 = q0.iter().zip(b).map(|(q, y)| q * y).sum();
    let c1: f64 = q1.iter().zip(b).map(|(q, y)| q * y).sum();
    let z1 = c1 / r11;
    let z0 = (c0 - r01 * z1) / r00;
    let u = [z0 / d[0], z1 / d[1]];
    let res2: f64 = a
        .iter()
        .zip(b)
        .map(|(r, y)| {
            let e = r[0] * u[0] + r[1] * u[1] - y;
            e * e
        })
        .sum();
    let b2: f64 = b.iter().map(|y| y * y).sum();
    Ok(RowFit { u, residual: math::sqrt(res2 / b2), cond })
}

/// Recover the eight circuit constants given the elastance series aligned with `series`.
pub fn recover_static_params(
    series: &StateSeries,
    elastance: &ElastanceEstimate,
    truth: Option<&PatientParams>,
) -> Result<RecoveredParams> {
    let n = series.len();
    if n < 8 {
        return Err(Error::TooShort { have: n, need: 8 });
    }
    if elastance.series.len() != n {
        return Err(Error::Dimension { expected: n, got: elastance.series.len() });
    }
    let dt = series.dt;
    let xs: Vec<Vec<f64>> = (0..5).map(|i| series.component(i)).collect();
    let e = &elastance.series;
    let p_lv: Vec<f64> = (0..n).map(|k| e[k] * xs[0][k]).collect();
    let q1: Vec<f64> = (0..n).map(|k| (xs[1][k] - p_lv[k]).max(0.0)).collect();
    let q2: Vec<f64> = (0..n).map(|k| (p_lv[k] - xs[3][k]).max(0.0)).collect();

    let m = LAPLACE_S.len();
    let lap = |f: &[f64], s: f64| truncated_laplace(f, dt, s);
    let mut lx = [[0.0; 5]; 3];
    let mut ldx = [[0.0; 5]; 3];
    let mut lq = [[0.0; 2]; 3];
    for (j, &s) in LAPLACE_S.iter().enumerate() {
        for i in 0..5 {
            lx[j][i] = lap(&xs[i], s);
            ldx[j][i] = laplace_of_derivative(&xs[i], dt, s);
        }
        lq[j] = [lap(&q1, s), lap(&q2, s)];
    }
    let rows = |f: &dyn Fn(usize) -> ([f64; 2], f64)| -> (Vec<[f64; 2]>, Vec<f64>) { (0..m).map(f).unzip() };

    // ẋ1 = q1/r_m − q2/r_a
    let (a, b) = rows(&|j| ([lq[j][0], -lq[j][1]], ldx[j][0]));
    let f1 = solve_row("left ventricle", &a, &b)?;
    let (r_m, r_a) = (1.0 / f1.u[0], 1.0 / f1.u[1]);

    // ẋ2 = (x3 − x2)/(r_s c_r) − q1/(r_m c_r)
    let (a, b) = rows(&|j| ([lx[j][2] - lx[j][1], -lq[j][0] / r_m], ldx[j][1]));
    let f2 = solve_row("left atrium", &a, &b)?;
    let c_r = 1.0 / f2.u[1];
    let r_s = f2.u[1] / f2.u[0];

    // ẋ3 = (x2 − x3)/(r_s c_s) + x5/c_s
    let (a, b) = rows(&|j| ([lx[j][1] - lx[j][2], lx[j][4]], ldx[j][2]));
    let f3 = solve_row("systemic arteries", &a, &b)?;
    let c_s = 1.0 / f3.u[1];
    let r_s_row3 = f3.u[1] / f3.u[0];

    // ẋ4 = −x5/c_a + q2/(r_a c_a)
    let (a, b) = rows(&|j| ([-lx[j][4], lq[j][1]], ldx[j][3]));
    let f4 = solve_row("aorta", &a, &b)?;
    let c_a = 1.0 / f4.u[0];
    let r_a_row4 = f4.u[0] / f4.u[1];

    // ẋ5 = (x4 − x3)/l_s − (r_c/l_s) x5
    let (a, b) = rows(&|j| ([lx[j][3] - lx[j][2], -lx[j][4]], ldx[j][4]));
    let f5 = solve_row("total flow", &a, &b)?;
    let l_s = 1.0 / f5.u[0];
    let r_c = f5.u[1] * l_s;

    let values = StaticValues {
        e_max: elastance.e_max,
        e_min: elastance.e_min,
        t_c: elastance.t_c,
        v_d: elastance.v_d,
        r_m,
        r_a,
        r_s,
        c_r,
        c_s,
        c_a,
        l_s,
        r_c,
    };
    if values.to_array().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Degenerate("recovered a non-positive parameter"));
    }
    let truth = truth.map(StaticValues::from_params);
    Ok(RecoveredParams {
        values,
        r_s_row3,
        r_a_row4,
        residuals: [f1.residual, f2.residual, f3.residual, f4.residual, f5.residual],
        conditions: [f1.cond, f2.cond, f3.cond, f4.cond, f5.cond],
        relative_error: truth.map(|t| values.relative_error(&t)),
        truth,
    })
}

/// Elastance extraction followed by the static-parameter solve.
pub fn identify(series: &StateSeries, truth: Option<&PatientParams>) -> Result<RecoveredParams> {
    identify_with_tolerance(series, truth, VD_TOLERANCE)
}

pub fn identify_with_tolerance(
    series: &StateSeries,
    truth: Option<&PatientParams>,
    vd_tolerance: f64,
) -> Result<RecoveredParams> {
    let x1 = series.component(0);
    let e = recover_elastance_with_tolerance(&series.p_lv, &series.v_lv, &x1, series.dt, vd_tolerance)?;
    recover_static_params(series, &e, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn laplace_of_constant() {
        let (dt, s, c) = (1e-3, 2.0, 3.0);
        let f = vec![c; 5001];
        let t = 5.0;
        let exact = c * (1.0 - math::exp(-s * t)) / s;
        assert!((truncated_laplace(&f, dt, s) - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn laplace_of_exponential() {
        let dt = 1e-3;
        let f: Vec<f64> = (0..=20_000).map(|k| math::exp(-(k as f64) * dt)).collect();
        assert!((truncated_laplace(&f, dt, 1.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn derivative_identity_for_linear() {
        // Exact in continuous time; the trapezoid error here is about 1e-5 relative.
        let dt = 1e-3;
        let f: Vec<f64> = (0..=3000).map(|k| 2.0 + 0.5 * k as f64 * dt).collect();
        let ones = vec![0.5; f.len()];
        let lhs = laplace_of_derivative(&f, dt, 3.0);
        let rhs = truncated_laplace(&ones, dt, 3.0);
        assert!((lhs - rhs).abs() < 1e-4 * rhs);
    }

    #[test]
    fn least_squares_row_exact() {
        let a = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let u = [0.7, -1.3];
        let b: Vec<f64> = a.iter().map(|r| r[0] * u[0] + r[1] * u[1]).collect();
        let fit = solve_row("t", &a, &b).unwrap();
        assert!((fit.u[0] - u[0]).abs() < 1e-12 && (fit.u[1] - u[1]).abs() < 1e-12);
        assert!(fit.residual < 1e-14);
    }

    #[test]
    fn collinear_row_is_rejected() {
        let a = [[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let err = solve_row("collinear", &a, &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { row: "collinear", .. }));
    }

    #[test]
    fn period_of_sine() {
        let p: Vec<f64> = (0..4000).map(|k| libm::sin(2.0 * core::f64::consts::PI * k as f64 / 123.4)).collect();
        assert!((period_samples(&p).unwrap() - 123.4).abs() < 0.5);
    }

    #[test]
    fn constant_signal_is_degenerate() {
        let p = vec![3.0; 1000];
        let x1 = vec![2.0; 1000];
        let v: Vec<f64> = x1.iter().map(|x| x + 10.0).collect();
        assert!(matches!(recover_elastance(&p, &v, &x1, 1e-3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn non_constant_dead_volume_rejected() {
        let x1: Vec<f64> = (0..100).map(|k| 50.0 + k as f64).collect();
        let mut v: Vec<f64> = x1.iter().map(|x| x + 10.0).collect();
        v[40] += 1e-3;
        let p = vec![1.0; 100];
        assert!(matches!(recover_elastance(&p, &v, &x1, 1e-3), Err(Error::Inconsistent(_))));
    }
}
