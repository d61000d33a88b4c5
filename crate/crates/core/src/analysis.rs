//! End-diastolic/end-systolic volumes, ejection fraction and PV loops.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{floor, round};
use crate::solver::Trajectory;

/// Resolution of the common phase grid used when averaging loops.
pub const AVERAGE_LOOP_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdEs {
    pub v_ed: f64,
    pub v_es: f64,
    pub t_ed: f64,
    pub t_es: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvPoint {
    /// Fraction of the cycle elapsed, in `[0, 1]`.
    pub phase: f64,
    pub volume: f64,
    pub pressure: f64,
}

/// One cycle of `(V_LV, P_LV)` pairs in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvLoop {
    pub points: Vec<PvPoint>,
    pub cycle_index: usize,
}

impl PvLoop {
    pub fn volume_range(&self) -> (f64, f64) {
        extent(self.points.iter().map(|p| p.volume))
    }

    pub fn pressure_range(&self) -> (f64, f64) {
        extent(self.points.iter().map(|p| p.pressure))
    }

    /// Distance in volume between the first and last point.
    pub fn closure_gap(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => (a.volume - b.volume).abs(),
            _ => 0.0,
        }
    }

    /// Linear interpolation of (volume, pressure) at a phase in `[0, 1]`.
    pub fn at_phase(&self, phase: f64) -> (f64, f64) {
        let pts = &self.points;
        if pts.len() == 1 {
            return (pts[0].volume, pts[0].pressure);
        }
        // points are uniform in phase
        let pos = phase.clamp(0.0, 1.0) * (pts.len() - 1) as f64;
        let i = (floor(pos) as usize).min(pts.len() - 2);
        let w = pos - i as f64;
        let (a, b) = (&pts[i], &pts[i + 1]);
        (a.volume + w * (b.volume - a.volume), a.pressure + w * (b.pressure - a.pressure))
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Volume extrema over the final simulated cycle.
pub fn ed_es_volumes(traj: &Trajectory) -> Result<EdEs> {
    let range = traj.last_cycle()?;
    let mut ed = (f64::NEG_INFINITY, 0);
    let mut es = (f64::INFINITY, 0);
    for k in range {
        let v = traj.states[k].x1() + traj.params.v_d;
        if v > ed.0 {
            ed = (v, k);
        }
        if v < es.0 {
            es = (v, k);
        }
    }
    Ok(EdEs { v_ed: ed.0, v_es: es.0, t_ed: traj.time(ed.1), t_es: traj.time(es.1) })
}

/// `(v_ed - v_es) / v_ed`.
pub fn ejection_fraction(edes: &EdEs) -> Result<f64> {
    if !(edes.v_ed > 0.0) {
        return Err(Error::invalid("v_ed", "end-diastolic volume must be positive"));
    }
    Ok((edes.v_ed - edes.v_es) / edes.v_ed)
}

/// PV loop over the final simulated cycle.
pub fn pv_loop(traj: &Trajectory) -> Result<PvLoop> {
    let range = traj.last_cycle()?;
    let start = *range.start();
    let spc = (range.end() - start) as f64;
    let points = range
        .map(|k| {
            let (pressure, volume) = traj.pressure_volume(k);
            PvPoint { phase: (k - start) as f64 / spc, volume, pressure }
        })
        .collect();
    let cycle_index = round(start as f64 / spc) as usize;
    Ok(PvLoop { points, cycle_index })
}

/// Resample a loop onto `n` points uniform in phase.
pub fn resample(pv: &PvLoop, n: usize) -> PvLoop {
    let points = (0..n)
        .map(|j| {
            let phase = j as f64 / (n - 1) as f64;
            let (volume, pressure) = pv.at_phase(phase);
            PvPoint { phase, volume, pressure }
        })
        .collect();
    PvLoop { points, cycle_index: pv.cycle_index }
}

/// Pointwise mean of loops aligned by cycle-time fraction.
pub fn average_pv_loop(loops: &[PvLoop]) -> Result<PvLoop> {
    let first = loops.first().ok_or(Error::Empty("no loops to average"))?;
    if loops.iter().any(|l| l.points.is_empty()) {
        return Err(Error::Empty("loop without points"));
    }
    let n = AVERAGE_LOOP_POINTS;
    let scale = 1.0 / loops.len() as f64;
    let mut out = resample(first, n);
    for p in out.points.iter_mut() {
        p.volume = 0.0;
        p.pressure = 0.0;
    }
    for l in loops {
        for p in out.points.iter_mut() {
            let (v, pr) = l.at_phase(p.phase);
            p.volume += v * scale;
            p.pressure += pr * scale;
        }
    }
    out.cycle_index = 0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CardiacState;
    use crate::params::PatientParams;
    use proptest::prelude::*;

    fn volume_wave(volumes: &[f64], dt: f64, v_d: f64) -> Trajectory {
        let params = PatientParams { t_c: dt * (volumes.len() - 1) as f64, v_d, ..PatientParams::REFERENCE };
        let states = volumes.iter().map(|&v| CardiacState::baseline([v - v_d, 0.0, 0.0, 0.0, 0.0])).collect();
        Trajectory { t0: 0.0, dt, states, params, lvad: None }
    }

    fn triangle() -> Vec<f64> {
        // 120 at k=0, down to 50 at k=50, back up to 120 at k=100
        (0..=100).map(|k: i32| 50.0 + 70.0 * ((k - 50).abs() as f64) / 50.0).collect()
    }

    #[test]
    fn triangular_wave_extrema() {
        let traj = volume_wave(&triangle(), 0.01, 10.0);
        let e = ed_es_volumes(&traj).unwrap();
        assert!((e.v_ed - 120.0).abs() < 1e-12);
        assert!((e.v_es - 50.0).abs() < 1e-12);
        assert!((e.t_es - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_volume_has_zero_ef() {
        let traj = volume_wave(&[90.0; 101], 0.01, 10.0);
        let e = ed_es_volumes(&traj).unwrap();
        assert_eq!(e.v_ed, e.v_es);
        assert_eq!(ejection_fraction(&e).unwrap(), 0.0);
    }

    #[test]
    fn ejection_fraction_examples() {
        let e = |v_ed, v_es| EdEs { v_ed, v_es, t_ed: 0.0, t_es: 0.0 };
        assert_eq!(ejection_fraction(&e(120.0, 0.0)).unwrap(), 1.0);
        assert!((ejection_fraction(&e(120.0, 50.0)).unwrap() - 0.583_333_333_333_333_4).abs() < 1e-15);
        assert!(ejection_fraction(&e(0.0, 0.0)).is_err());
    }

    #[test]
    fn too_short_trajectory_errors() {
        let mut traj = volume_wave(&triangle(), 0.01, 10.0);
        traj.states.truncate(50);
        assert!(matches!(ed_es_volumes(&traj), Err(Error::TooShort { .. })));
        assert!(pv_loop(&traj).is_err());
    }

    #[test]
    fn loop_uses_final_cycle_only() {
        let mut vols = triangle();
        let mut early: Vec<f64> = (0..100).map(|_| 500.0).collect();
        early.append(&mut vols);
        let mut traj = volume_wave(&early, 0.01, 10.0);
        traj.params.t_c = 1.0;
        let e = ed_es_volumes(&traj).unwrap();
        assert!((e.v_ed - 120.0).abs() < 1e-12);
        let pv = pv_loop(&traj).unwrap();
        assert_eq!(pv.points.len(), 101);
        assert_eq!(pv.cycle_index, 1);
        assert_eq!(pv.volume_range(), (e.v_es, e.v_ed));
    }

    #[test]
    fn v_d_shift_moves_loop_volumes() {
        let a = volume_wave(&triangle(), 0.01, 10.0);
        let mut b = a.clone();
        b.params.v_d += 3.0;
        let (la, lb) = (pv_loop(&a).unwrap(), pv_loop(&b).unwrap());
        for (p, q) in la.points.iter().zip(&lb.points) {
            assert!((q.volume - p.volume - 3.0).abs() < 1e-12);
            assert_eq!(p.pressure, q.pressure);
        }
    }

    fn synthetic_loop(n: usize, offset: f64) -> PvLoop {
        let points = (0..n)
            .map(|k| {
                let phase = k as f64 / (n - 1) as f64;
                let v = 90.0 + 30.0 * libm::cos(core::f64::consts::TAU * phase) + offset;
                let p = 60.0 + 50.0 * libm::sin(core::f64::consts::TAU * phase);
                PvPoint { phase, volume: v, pressure: p }
            })
            .collect();
        PvLoop { points, cycle_index: 2 }
    }

    #[test]
    fn average_of_single_loop_is_itself() {
        let l = synthetic_loop(257, 0.0);
        let avg = average_pv_loop(core::slice::from_ref(&l)).unwrap();
        assert_eq!(avg.points.len(), AVERAGE_LOOP_POINTS);
        for p in &avg.points {
            let (v, pr) = l.at_phase(p.phase);
            assert!((p.volume - v).abs() <= 1e-6 * v.abs());
            assert!((p.pressure - pr).abs() <= 1e-6 * pr.abs().max(1.0));
        }
        let twice = average_pv_loop(&[l.clone(), l.clone()]).unwrap();
        for (a, b) in twice.points.iter().zip(&avg.points) {
            assert!((a.volume - b.volume).abs() < 1e-12);
        }
    }

    #[test]
    fn average_is_linear_in_volume() {
        let a = synthetic_loop(300, 0.0);
        let b = synthetic_loop(300, 10.0);
        let avg = average_pv_loop(&[a.clone(), b]).unwrap();
        for p in &avg.points {
            let (v, _) = a.at_phase(p.phase);
            assert!((p.volume - (v + 5.0)).abs() < 1e-9);
        }
        assert!(average_pv_loop(&[]).is_err());
    }

    proptest! {
        #[test]
        fn average_commutes_with_affine_maps(scale in 0.1f64..3.0, shift in -50.0f64..50.0, n1 in 120usize..400, n2 in 120usize..400) {
            let loops = [synthetic_loop(n1, 0.0), synthetic_loop(n2, 7.0)];
            let map = |l: &PvLoop| PvLoop {
                points: l.points.iter().map(|p| PvPoint { phase: p.phase, volume: scale * p.volume + shift, pressure: scale * p.pressure + shift }).collect(),
                cycle_index: l.cycle_index,
            };
            let mapped: Vec<PvLoop> = loops.iter().map(map).collect();
            let lhs = average_pv_loop(&mapped).unwrap();
            let rhs = map(&average_pv_loop(&loops).unwrap());
            for (a, b) in lhs.points.iter().zip(&rhs.points) {
                prop_assert!((a.volume - b.volume).abs() < 1e-9 * (1.0 + b.volume.abs()));
                prop_assert!((a.pressure - b.pressure).abs() < 1e-9 * (1.0 + b.pressure.abs()));
            }
        }

        #[test]
        fn ef_ignores_time_reparameterization(stretch in 0.2f64..5.0) {
            let a = volume_wave(&triangle(), 0.01, 10.0);
            let mut b = a.clone();
            b.dt *= stretch;
            b.params.t_c *= stretch;
            let ea = ejection_fraction(&ed_es_volumes(&a).unwrap()).unwrap();
            let eb = ejection_fraction(&ed_es_volumes(&b).unwrap()).unwrap();
            prop_assert_eq!(ea, eb);
        }
    }
}
