//! Synthetic sim-to-real testbed: a point mass that must reach a target and
//! hold there, observed through a randomizable linear "renderer".

mod domain;
mod env;
mod expert;
mod protocol;
mod trainer;

pub use domain::*;
pub use env::*;
pub use expert::*;
pub use protocol::*;
pub use trainer::*;

pub const OBS_DIM: usize = 24;
pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 3;
/// Observation channels that depend on the state in the nominal domain.
pub const INFO_ROWS: usize = 8;
pub const N_STEPS: usize = 20;
pub const GOAL_RADIUS: f64 = 0.05;
pub const STEP_SCALE: f64 = 0.1;
/// Targets lie in `[-TARGET_BOX, TARGET_BOX]^2`.
pub const TARGET_BOX: f64 = 0.6;
/// Agent start positions lie in `[-START_JITTER, START_JITTER]^2`.
pub const START_JITTER: f64 = 0.1;
/// Ground-truth evaluation grid side.
pub const GT_GRID: usize = 7;
