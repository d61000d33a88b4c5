//! Time-varying ventricular elastance.

use crate::math::powf;
use crate::params::PatientParams;

/// Double-Hill elastance waveform. `t_max` is derived from `t_c` and kept in
/// sync by the constructor and [`set_t_c`](Self::set_t_c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElastanceSpec {
    e_max: f64,
    e_min: f64,
    t_c: f64,
    t_max: f64,
}

/// Peak of the normalized shape function, reached near `t_n ≈ 0.997`.
pub const SHAPE_PEAK: f64 = 0.996_062;

impl ElastanceSpec {
    pub fn new(e_max: f64, e_min: f64, t_c: f64) -> Self {
        ElastanceSpec { e_max, e_min, t_c, t_max: Self::t_max_for(t_c) }
    }

    pub fn from_params(p: &PatientParams) -> Self {
        Self::new(p.e_max, p.e_min, p.t_c)
    }

    /// Time to peak elastance for a given cycle length.
    pub fn t_max_for(t_c: f64) -> f64 {
        0.2 + 0.15 * t_c
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn e_min(&self) -> f64 {
        self.e_min
    }

    pub fn t_c(&self) -> f64 {
        self.t_c
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn set_t_c(&mut self, t_c: f64) {
        self.t_c = t_c;
        self.t_max = Self::t_max_for(t_c);
    }

    /// Position within the current cycle, in `[0, t_c)`.
    pub fn cycle_time(&self, t: f64) -> f64 {
        let r = t % self.t_c;
        if r < 0.0 {
            r + self.t_c
        } else {
            r
        }
    }

    /// Normalized activation in `[0, 1)`.
    pub fn shape(&self, t: f64) -> f64 {
        let tn = self.cycle_time(t) / self.t_max;
        let rise = powf(tn / 0.7, 1.9);
        let decay = powf(tn / 1.17, 21.9);
        1.55 * (rise / (1.0 + rise)) * (1.0 / (1.0 + decay))
    }

    pub fn at(&self, t: f64) -> f64 {
        (self.e_max - self.e_min) * self.shape(t) + self.e_min
    }
}

/// `E(t)` in mmHg/ml, periodic with period `t_c`.
pub fn elastance(spec: &ElastanceSpec, t: f64) -> f64 {
    spec.at(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn starts_at_e_min() {
        let spec = ElastanceSpec::new(2.0, 0.05, 0.8);
        assert_eq!(elastance(&spec, 0.0), 0.05);
    }

    #[test]
    fn value_at_t_n_point_seven() {
        // second bracket 1/(1 + (0.7/1.17)^21.9), first bracket 1/2
        let spec = ElastanceSpec::new(2.0, 0.05, 0.8);
        assert!((spec.t_max() - 0.32).abs() < 1e-15);
        let expected = 1.95 * 1.55 * 0.5 / (1.0 + powf(0.7 / 1.17, 21.9)) + 0.05;
        let e = elastance(&spec, 0.224);
        assert!((e - expected).abs() < 1e-12);
        assert!((e - 1.561).abs() < 1e-3);
    }

    #[test]
    fn t_max_follows_t_c() {
        let mut spec = ElastanceSpec::new(2.0, 0.05, 0.8);
        spec.set_t_c(1.2);
        assert!((spec.t_max() - 0.38).abs() < 1e-15);
    }

    #[test]
    fn shape_peak_is_below_one() {
        let spec = ElastanceSpec::new(2.0, 0.0, 10.0);
        let mut best: f64 = 0.0;
        for i in 0..200_000 {
            best = best.max(spec.shape(i as f64 * 1e-5 * spec.t_max() * 3.0));
        }
        assert!(best < 1.0);
        assert!((best - SHAPE_PEAK).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn bounded_and_periodic(
            e_min in 0.02f64..0.1,
            span in 0.4f64..3.4,
            t_c in 0.4f64..1.7,
            t in 0.0f64..5.0,
            k in 1u32..6,
        ) {
            let spec = ElastanceSpec::new(e_min + span, e_min, t_c);
            let e = spec.at(t);
            prop_assert!(e >= spec.e_min() && e <= spec.e_max());
            let shifted = spec.at(t + k as f64 * t_c);
            prop_assert!((e - shifted).abs() <= 1e-9 * spec.e_max());
        }
    }
}
