//! Circuit parameters, LVAD constants and the learnable-parameter box.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of parameters inferred per patient.
pub const N_LEARNABLE: usize = 7;

/// Order of the learnable coordinates in every `theta` vector.
pub const LEARNABLE_NAMES: [&str; N_LEARNABLE] = ["r_m", "r_a", "e_max", "e_min", "v_d", "t_c", "start_v"];

/// The 14 parameters of the five-state circuit.
///
/// Resistances in mmHg·s/ml, compliances in ml/mmHg, inertance in
/// mmHg·s²/ml, elastances in mmHg/ml, `t_c` in s, volumes in ml and
/// `start_pao` in mmHg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientParams {
    pub r_m: f64,
    pub r_a: f64,
    pub r_c: f64,
    pub r_s: f64,
    pub c_a: f64,
    pub c_s: f64,
    pub c_r: f64,
    pub l_s: f64,
    pub e_max: f64,
    pub e_min: f64,
    pub t_c: f64,
    pub v_d: f64,
    pub start_v: f64,
    pub start_pao: f64,
}

impl PatientParams {
    /// Literature reference patient.
    pub const REFERENCE: PatientParams = PatientParams {
        r_m: 0.005,
        r_a: 0.001,
        r_c: 0.0398,
        r_s: 1.0,
        c_a: 0.08,
        c_s: 1.33,
        c_r: 4.4,
        l_s: 0.0005,
        e_max: 2.0,
        e_min: 0.05,
        t_c: 0.8,
        v_d: 10.0,
        start_v: 140.0,
        start_pao: 75.0,
    };

    pub fn reference() -> Self {
        Self::REFERENCE
    }

    /// Combine a learnable vector (in [`LEARNABLE_NAMES`] order) with fixed values.
    pub fn from_parts(theta: &[f64; N_LEARNABLE], fixed: &FixedParams) -> Self {
        PatientParams {
            r_m: theta[0],
            r_a: theta[1],
            e_max: theta[2],
            e_min: theta[3],
            v_d: theta[4],
            t_c: theta[5],
            start_v: theta[6],
            r_c: fixed.r_c,
            r_s: fixed.r_s,
            c_a: fixed.c_a,
            c_s: fixed.c_s,
            c_r: fixed.c_r,
            l_s: fixed.l_s,
            start_pao: fixed.start_pao,
        }
    }

    pub fn learnable(&self) -> [f64; N_LEARNABLE] {
        [self.r_m, self.r_a, self.e_max, self.e_min, self.v_d, self.t_c, self.start_v]
    }

    pub fn fixed(&self) -> FixedParams {
        FixedParams {
            r_c: self.r_c,
            r_s: self.r_s,
            c_a: self.c_a,
            c_s: self.c_s,
            c_r: self.c_r,
            l_s: self.l_s,
            start_pao: self.start_pao,
        }
    }

    fn fields(&self) -> [(&'static str, f64); 14] {
        [
            ("r_m", self.r_m),
            ("r_a", self.r_a),
            ("r_c", self.r_c),
            ("r_s", self.r_s),
            ("c_a", self.c_a),
            ("c_s", self.c_s),
            ("c_r", self.c_r),
            ("l_s", self.l_s),
            ("e_max", self.e_max),
            ("e_min", self.e_min),
            ("t_c", self.t_c),
            ("v_d", self.v_d),
            ("start_v", self.start_v),
            ("start_pao", self.start_pao),
        ]
    }

    /// Positivity and elastance ordering. `start_v` may be zero, the lower
    /// edge of its allowed range.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.fields() {
            if !value.is_finite() {
                return Err(Error::invalid(name, "not finite"));
            }
            let ok = if name == "start_v" { value >= 0.0 } else { value > 0.0 };
            if !ok {
                return Err(Error::invalid(name, format!("must be positive, got {value}")));
            }
        }
        if self.e_max <= self.e_min {
            return Err(Error::invalid("e_max", "must exceed e_min"));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus closed-interval membership of the
    /// learnable coordinates.
    pub fn check_bounds(&self, bounds: &ParamBounds) -> Result<()> {
        self.validate()?;
        let theta = self.learnable();
        for (i, iv) in bounds.intervals().iter().enumerate() {
            if !iv.contains(theta[i]) {
                return Err(Error::invalid(LEARNABLE_NAMES[i], format!("{} outside [{}, {}]", theta[i], iv.lo, iv.hi)));
            }
        }
        Ok(())
    }
}

impl Default for PatientParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// The seven circuit values held fixed across patients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedParams {
    pub r_c: f64,
    pub r_s: f64,
    pub c_a: f64,
    pub c_s: f64,
    pub c_r: f64,
    pub l_s: f64,
    pub start_pao: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        PatientParams::REFERENCE.fixed()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Allowed box for the learnable parameters plus the fixed remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub r_m: Interval,
    pub r_a: Interval,
    pub e_max: Interval,
    pub e_min: Interval,
    pub v_d: Interval,
    pub t_c: Interval,
    pub start_v: Interval,
    #[serde(default)]
    pub fixed: FixedParams,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            r_m: Interval::new(0.005, 0.1),
            r_a: Interval::new(0.0001, 0.25),
            e_max: Interval::new(0.5, 3.5),
            e_min: Interval::new(0.02, 0.1),
            v_d: Interval::new(4.0, 25.0),
            t_c: Interval::new(0.4, 1.7),
            start_v: Interval::new(0.0, 280.0),
            fixed: FixedParams::default(),
        }
    }
}

impl ParamBounds {
    /// Intervals in [`LEARNABLE_NAMES`] order.
    pub fn intervals(&self) -> [Interval; N_LEARNABLE] {
        [self.r_m, self.r_a, self.e_max, self.e_min, self.v_d, self.t_c, self.start_v]
    }

    pub fn lo(&self) -> [f64; N_LEARNABLE] {
        self.intervals().map(|iv| iv.lo)
    }

    pub fn hi(&self) -> [f64; N_LEARNABLE] {
        self.intervals().map(|iv| iv.hi)
    }

    /// `lo <= hi` everywhere; degenerate intervals pin a coordinate.
    pub fn validate(&self) -> Result<()> {
        for (i, iv) in self.intervals().iter().enumerate() {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                return Err(Error::invalid(LEARNABLE_NAMES[i], format!("bad interval [{}, {}]", iv.lo, iv.hi)));
            }
        }
        Ok(())
    }

    /// Strict variant used for user overrides: every interval must be open.
    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        for (i, iv) in self.intervals().iter().enumerate() {
            if iv.lo >= iv.hi {
                return Err(Error::invalid(LEARNABLE_NAMES[i], "lo must be < hi"));
            }
        }
        Ok(())
    }

    pub fn params(&self, theta: &[f64; N_LEARNABLE]) -> PatientParams {
        PatientParams::from_parts(theta, &self.fixed)
    }
}

/// Pump speed as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OmegaSchedule {
    Constant {
        level: f64,
    },
    /// Linear ramp from `start` to `end` over `duration` seconds, then held.
    Ramp {
        start: f64,
        end: f64,
        duration: f64,
    },
}

impl OmegaSchedule {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            OmegaSchedule::Constant { level } => level,
            OmegaSchedule::Ramp { start, end, duration } => {
                if duration <= 0.0 || t >= duration {
                    end
                } else if t <= 0.0 {
                    start
                } else {
                    start + (end - start) * (t / duration)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OmegaSchedule::Constant { level } => level.is_finite() && level >= 0.0,
            OmegaSchedule::Ramp { start, end, duration } => {
                start.is_finite() && end.is_finite() && start >= 0.0 && end >= 0.0 && duration >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("omega_schedule", "pump speeds must be finite and non-negative"))
        }
    }
}

/// Constants of the rotary LVAD branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LvadParams {
    pub r_o: f64,
    pub r_i: f64,
    /// s/ml, negative.
    pub alpha: f64,
    pub p_bar: f64,
    pub l_i: f64,
    pub l_o: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub omega_schedule: OmegaSchedule,
}

impl Default for LvadParams {
    fn default() -> Self {
        LvadParams {
            r_o: 0.0677,
            r_i: 0.0677,
            alpha: -3.5,
            p_bar: 1.0,
            l_i: 0.0127,
            l_o: 0.0127,
            beta0: -0.296,
            beta1: -0.027,
            beta2: 9.9025e-7,
            omega_schedule: OmegaSchedule::Constant { level: 0.0 },
        }
    }
}

impl LvadParams {
    pub fn with_omega(mut self, schedule: OmegaSchedule) -> Self {
        self.omega_schedule = schedule;
        self
    }

    pub fn with_constant_omega(self, level: f64) -> Self {
        self.with_omega(OmegaSchedule::Constant { level })
    }

    /// `-l_i - l_o + beta1`, the inertance term dividing the pump-flow equation.
    pub fn denominator(&self) -> f64 {
        -self.l_i - self.l_o + self.beta1
    }

    pub fn validate(&self) -> Result<()> {
        let values =
            [self.r_o, self.r_i, self.alpha, self.p_bar, self.l_i, self.l_o, self.beta0, self.beta1, self.beta2];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("lvad", "non-finite constant"));
        }
        let den = self.denominator();
        if den == 0.0 || !den.is_finite() {
            return Err(Error::SingularLvad);
        }
        self.omega_schedule.validate()
    }
}
