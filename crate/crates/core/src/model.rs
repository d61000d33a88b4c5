//! Right-hand sides of the five-state circuit and its LVAD extension.
//!
//! State layout: `x1 = V_LV - V_d` (ml), `x2 = P_LA`, `x3 = P_A`,
//! `x4 = P_Ao` (mmHg), `x5 = Q_T` (ml/s) and, with a pump attached,
//! `x6` = pump flow (ml/s).

use crate::elastance::ElastanceSpec;
use crate::error::{Error, Result};
use crate::params::{LvadParams, PatientParams};

/// Instantaneous circuit state, 5 entries or 6 with an LVAD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardiacState {
    values: [f64; 6],
    lvad: bool,
}

impl CardiacState {
    pub fn baseline(x: [f64; 5]) -> Self {
        CardiacState { values: [x[0], x[1], x[2], x[3], x[4], 0.0], lvad: false }
    }

    pub fn with_lvad(y: [f64; 6]) -> Self {
        CardiacState { values: y, lvad: true }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.len() {
            5 => Ok(Self::baseline([v[0], v[1], v[2], v[3], v[4]])),
            6 => Ok(Self::with_lvad([v[0], v[1], v[2], v[3], v[4], v[5]])),
            n => Err(Error::Dimension { expected: 5, got: n }),
        }
    }

    pub fn dim(&self) -> usize {
        if self.lvad {
            6
        } else {
            5
        }
    }

    pub fn has_lvad(&self) -> bool {
        self.lvad
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim()]
    }

    pub fn five(&self) -> [f64; 5] {
        let v = &self.values;
        [v[0], v[1], v[2], v[3], v[4]]
    }

    pub fn six(&self) -> [f64; 6] {
        self.values
    }

    pub fn x1(&self) -> f64 {
        self.values[0]
    }

    pub fn x6(&self) -> Option<f64> {
        self.lvad.then_some(self.values[5])
    }

    /// Attach a pump branch with zero initial flow.
    pub fn attach_lvad(&self) -> Self {
        let v = self.values;
        Self::with_lvad([v[0], v[1], v[2], v[3], v[4], 0.0])
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}

/// End-diastolic initial state.
pub fn initial_state(params: &PatientParams) -> CardiacState {
    CardiacState::baseline([params.start_v, params.start_v * params.e_min, params.start_pao, params.start_pao, 0.0])
}

/// Mitral (`p1`, into the LV) and aortic (`p2`, out of the LV) diode flows.
#[inline]
pub fn valve_flows(x1: f64, x2: f64, x4: f64, e: f64, r_m: f64, r_a: f64) -> (f64, f64) {
    let p_lv = x1 * e;
    let p1 = (x2 - p_lv).max(0.0) / r_m;
    let p2 = (p_lv - x4).max(0.0) / r_a;
    (p1, p2)
}

/// Pump suction resistance: nonzero only once LV pressure drops below `p_bar`.
#[inline]
pub fn r_k(t: f64, x1: f64, spec: &ElastanceSpec, lvad: &LvadParams) -> f64 {
    r_k_at_pressure(x1 * spec.at(t), lvad)
}

#[inline]
fn r_k_at_pressure(p_lv: f64, lvad: &LvadParams) -> f64 {
    (lvad.alpha * (p_lv - lvad.p_bar)).max(0.0)
}

/// Precomputed coefficients for repeated right-hand-side evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Circuit {
    params: PatientParams,
    spec: ElastanceSpec,
    lvad: Option<LvadParams>,
    inv_rs_cr: f64,
    inv_rs_cs: f64,
    inv_den: f64,
}

impl Circuit {
    pub fn new(params: &PatientParams) -> Self {
        Circuit {
            params: *params,
            spec: ElastanceSpec::from_params(params),
            lvad: None,
            inv_rs_cr: 1.0 / (params.r_s * params.c_r),
            inv_rs_cs: 1.0 / (params.r_s * params.c_s),
            inv_den: 0.0,
        }
    }

    /// Circuit with the pump branch; fails on a singular pump equation.
    pub fn with_lvad(params: &PatientParams, lvad: &LvadParams) -> Result<Self> {
        lvad.validate()?;
        let mut c = Self::new(params);
        c.inv_den = 1.0 / lvad.denominator();
        c.lvad = Some(*lvad);
        Ok(c)
    }

    pub fn params(&self) -> &PatientParams {
        &self.params
    }

    pub fn elastance(&self) -> &ElastanceSpec {
        &self.spec
    }

    pub fn lvad(&self) -> Option<&LvadParams> {
        self.lvad.as_ref()
    }

    #[inline]
    fn base(&self, e: f64, x: &[f64; 6]) -> ([f64; 6], f64) {
        let p = &self.params;
        let [x1, x2, x3, x4, x5, _] = *x;
        let (p1, p2) = valve_flows(x1, x2, x4, e, p.r_m, p.r_a);
        let d = [
            p1 - p2,
            (x3 - x2) * self.inv_rs_cr - p1 / p.c_r,
            (x2 - x3) * self.inv_rs_cs + x5 / p.c_s,
            (p2 - x5) / p.c_a,
            (x4 - x3 - p.r_c * x5) / p.l_s,
            0.0,
        ];
        (d, e)
    }

    pub fn rhs5(&self, t: f64, x: &[f64; 5]) -> [f64; 5] {
        let e = self.spec.at(t);
        let (d, _) = self.base(e, &[x[0], x[1], x[2], x[3], x[4], 0.0]);
        [d[0], d[1], d[2], d[3], d[4]]
    }

    /// Six-state right-hand side; panics if the circuit has no pump.
    pub fn rhs6(&self, t: f64, y: &[f64; 6]) -> [f64; 6] {
        let lvad = self.lvad.as_ref().expect("circuit built without LVAD");
        let e = self.spec.at(t);
        let (mut d, _) = self.base(e, y);
        let x6 = y[5];
        let omega = lvad.omega_schedule.at(t);
        let p_lv = y[0] * e;
        let rk = r_k_at_pressure(p_lv, lvad);
        d[0] -= x6;
        d[3] += x6 / self.params.c_a;
        d[5] =
            (-p_lv + y[3] + (lvad.r_i + lvad.r_o + rk - lvad.beta0) * x6 - lvad.beta2 * omega * omega) * self.inv_den;
        d
    }

    /// Upper bound on the magnitude of the stiffest local eigenvalue, used to
    /// keep explicit steps inside the RK4 stability region.
    pub fn stiffness_bound(&self, t: f64, state: &[f64; 6]) -> f64 {
        let p = &self.params;
        let aortic = (p.e_max + 1.0 / p.c_a) / p.r_a;
        let mitral = (p.e_max + 1.0 / p.c_r) / p.r_m;
        let windkessel = p.r_c / p.l_s + crate::math::sqrt((1.0 / p.c_a + 1.0 / p.c_s) / p.l_s);
        let mut lambda = aortic.max(mitral).max(windkessel);
        if let Some(lvad) = &self.lvad {
            let e = self.spec.at(t);
            let rk = r_k_at_pressure(state[0] * e, lvad);
            let inv_den = self.inv_den.abs();
            let pump = (lvad.r_i + lvad.r_o + rk - lvad.beta0).abs() * inv_den
                + if rk > 0.0 { lvad.alpha.abs() * e * state[5].abs() * inv_den } else { 0.0 };
            lambda = lambda.max(pump);
        }
        lambda
    }
}

/// Five-state right-hand side at `t`.
pub fn rhs5(t: f64, x: &[f64; 5], params: &PatientParams) -> [f64; 5] {
    Circuit::new(params).rhs5(t, x)
}

/// Six-state right-hand side with the pump branch.
pub fn rhs6(t: f64, y: &[f64; 6], params: &PatientParams, lvad: &LvadParams) -> Result<[f64; 6]> {
    Ok(Circuit::with_lvad(params, lvad)?.rhs6(t, y))
}

/// `(P_LV, V_LV)` for a state at time `t`.
pub fn pressure_volume(state: &CardiacState, t: f64, params: &PatientParams) -> (f64, f64) {
    let e = ElastanceSpec::from_params(params).at(t);
    (e * state.x1(), state.x1() + params.v_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REF: PatientParams = PatientParams::REFERENCE;

    #[test]
    fn initial_state_reference() {
        let x0 = initial_state(&REF);
        assert_eq!(x0.as_slice(), &[140.0, 140.0 * 0.05, 75.0, 75.0, 0.0][..]);
        assert!((x0.five()[1] - 7.0).abs() < 1e-12);
        assert_eq!(x0.five()[2], x0.five()[3]);
        assert_eq!(x0.attach_lvad().x6(), Some(0.0));
    }

    #[test]
    fn rhs5_at_end_diastole() {
        let x0 = initial_state(&REF).five();
        let d = rhs5(0.0, &x0, &REF);
        assert!(d[0].abs() < 1e-9);
        assert_eq!(d[4], 0.0);
        let d = rhs5(0.0, &[140.0, 7.0, 75.0, 75.0, 0.0], &REF);
        assert!((d[1] - 68.0 / 4.4).abs() < 1e-12);
        assert!((d[1] - 15.4545).abs() < 1e-4);
    }

    #[test]
    fn r_k_examples() {
        let lvad = LvadParams::default();
        // E(0) = e_min, so x1 = 0.5 / e_min gives LV pressure 0.5
        let spec = ElastanceSpec::new(2.0, 0.05, 0.8);
        assert!((r_k(0.0, 10.0, &spec, &lvad) - 1.75).abs() < 1e-12);
        assert_eq!(r_k(0.0, 100.0, &spec, &lvad), 0.0);
        assert_eq!(r_k(0.0, 20.0, &spec, &lvad), 0.0);
    }

    #[test]
    fn rhs6_matches_rhs5_with_idle_pump() {
        let x0 = initial_state(&REF);
        let y0 = x0.attach_lvad().six();
        let d6 = rhs6(0.0, &y0, &REF, &LvadParams::default()).unwrap();
        let d5 = rhs5(0.0, &x0.five(), &REF);
        for i in 0..5 {
            assert!((d6[i] - d5[i]).abs() < 1e-12);
        }
        let expected = (-7.0 + 75.0) / (-0.0127 - 0.0127 - 0.027);
        assert!((d6[5] - expected).abs() < 1e-9);
        assert!((d6[5] + 1297.7).abs() < 0.05);
    }

    #[test]
    fn rhs6_rejects_singular_pump() {
        let lvad = LvadParams { beta1: 0.0254, ..LvadParams::default() };
        assert_eq!(rhs6(0.0, &[0.0; 6], &REF, &lvad), Err(Error::SingularLvad));
    }

    #[test]
    fn pressure_volume_conversion() {
        let s = CardiacState::baseline([130.0, 0.0, 0.0, 0.0, 0.0]);
        let (_, v) = pressure_volume(&s, 0.1, &REF);
        assert_eq!(v, 140.0);
        let s = initial_state(&REF);
        let (p, _) = pressure_volume(&s, 0.0, &REF);
        assert_eq!(p, REF.start_v * REF.e_min);
        let s = CardiacState::baseline([100.0, 0.0, 0.0, 0.0, 0.0]);
        let (p, _) = pressure_volume(&s, 0.224, &REF);
        let e = ElastanceSpec::from_params(&REF).at(0.224);
        assert!((p - 100.0 * e).abs() < 1e-12);
        assert!((p - 156.1).abs() < 0.05);
    }

    #[test]
    fn v_d_only_shifts_volume() {
        let s = CardiacState::baseline([80.0, 1.0, 2.0, 3.0, 4.0]);
        let shifted = PatientParams { v_d: REF.v_d + 7.5, ..REF };
        for t in [0.0, 0.13, 0.3, 0.77] {
            let (p0, v0) = pressure_volume(&s, t, &REF);
            let (p1, v1) = pressure_volume(&s, t, &shifted);
            assert_eq!(p0, p1);
            assert!((v1 - v0 - 7.5).abs() < 1e-12);
        }
    }

    fn state6() -> impl Strategy<Value = [f64; 6]> {
        (0.0f64..250.0, 0.0f64..40.0, 20.0f64..150.0, 20.0f64..150.0, -300.0f64..600.0, -50.0f64..300.0)
            .prop_map(|(a, b, c, d, e, f)| [a, b, c, d, e, f])
    }

    proptest! {
        #[test]
        fn flow_balance_and_diodes(t in 0.0f64..3.0, y in state6(), omega in 0.0f64..12_000.0) {
            let c5 = Circuit::new(&REF);
            let e = c5.elastance().at(t);
            let (p1, p2) = valve_flows(y[0], y[1], y[3], e, REF.r_m, REF.r_a);
            prop_assert!(p1 >= 0.0 && p2 >= 0.0);
            let d5 = c5.rhs5(t, &[y[0], y[1], y[2], y[3], y[4]]);
            prop_assert!((d5[0] - (p1 - p2)).abs() <= 1e-9 * (p1 + p2).max(1.0));
            let lvad = LvadParams::default().with_constant_omega(omega);
            let c6 = Circuit::with_lvad(&REF, &lvad).unwrap();
            let d6 = c6.rhs6(t, &y);
            prop_assert!((d6[0] - (p1 - p2 - y[5])).abs() <= 1e-9 * (p1 + p2 + y[5].abs()).max(1.0));
        }

        #[test]
        fn lipschitz_on_bounded_box(t in 0.0f64..3.0, a in state6(), b in state6()) {
            let lvad = LvadParams::default().with_constant_omega(8000.0);
            let c6 = Circuit::with_lvad(&REF, &lvad).unwrap();
            let da = c6.rhs6(t, &a);
            let db = c6.rhs6(t, &b);
            let num: f64 = da.iter().zip(&db).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            let den: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            prop_assume!(den > 1e-9);
            // generous empirical constant: dominated by 1/(r_a c_a) and the pump suction term
            prop_assert!(num / den < 1e6);
        }
    }
}
