use super::env::{Action, State};
use super::{GOAL_RADIUS, STEP_SCALE};

/// Proportional gain: an unsaturated command covers the whole remaining
/// offset in one drag-free step.
pub const EXPERT_GAIN: f64 = 1.0 / STEP_SCALE;

/// Scripted controller reading the true state.
pub fn scripted_expert(state: &State) -> Action {
    let dx = (EXPERT_GAIN * (state.target[0] - state.pos[0])).clamp(-1.0, 1.0);
    let dy = (EXPERT_GAIN * (state.target[1] - state.pos[1])).clamp(-1.0, 1.0);
    let hold = if state.distance() <= GOAL_RADIUS { 1.0 } else { 0.0 };
    [dx, dy, hold]
}

/// Anything that can drive the testbed: learned policies read the rendered
/// observation, the scripted expert reads the true state.
pub trait Agent: Sync {
    fn agent_id(&self) -> &str;
    fn controller(&self) -> Box<dyn FnMut(&[f64], &State) -> Action + '_>;
}

/// [`scripted_expert`] as an [`Agent`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertAgent;

impl Agent for ExpertAgent {
    fn agent_id(&self) -> &str {
        "scripted-expert"
    }

    fn controller(&self) -> Box<dyn FnMut(&[f64], &State) -> Action + '_> {
        Box::new(|_, s| scripted_expert(s))
    }
}
