//! Patient-specific cardiovascular digital twins on a lumped-parameter
//! left-ventricle circuit.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical
//! piece: the five-state heart/circulation ODE and its six-state LVAD
//! extension, a fixed-step RK4 integrator, PV-loop analysis, synthetic
//! dataset generation, a small MLP with exact backpropagation, the
//! surrogate-based inverse pipeline, and constructive parameter recovery
//! from full-state trajectories via truncated Laplace transforms.
//!
//! File formats, plotting and the command line live in the `cardiotwin`
//! crate.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod elastance;
mod error;
pub mod exec;
pub mod identifiability;
pub mod math;
pub mod model;
pub mod neural;
pub mod params;
pub mod pipeline;
pub mod solver;
pub mod synthetic;

pub use analysis::{average_pv_loop, ed_es_volumes, ejection_fraction, pv_loop, EdEs, PvLoop, PvPoint};
pub use elastance::{elastance, ElastanceSpec};
pub use error::{Error, Result};
pub use model::{initial_state, pressure_volume, r_k, rhs5, rhs6, CardiacState};
pub use params::{FixedParams, Interval, LvadParams, OmegaSchedule, ParamBounds, PatientParams};
pub use solver::{integrate, simulate_cycles, SimSettings, Trajectory};
