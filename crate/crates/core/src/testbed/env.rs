//! Point-mass reach-and-hold dynamics, rendering and episode rollouts.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::domain::{DomainParams, DomainSource};
use super::{ACTION_DIM, GOAL_RADIUS, OBS_DIM, START_JITTER, STEP_SCALE, TARGET_BOX};
use crate::seeding::Rng;
use crate::sim_validation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub pos: [f64; 2],
    pub target: [f64; 2],
}

impl State {
    pub fn distance(&self) -> f64 {
        (self.pos[0] - self.target[0]).hypot(self.pos[1] - self.target[1])
    }

    pub fn as_vec(&self) -> [f64; 4] {
        [self.pos[0], self.pos[1], self.target[0], self.target[1]]
    }
}

pub type Action = [f64; ACTION_DIM];

pub fn clamp_action(a: Action) -> Action {
    a.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) })
}

/// `gain * (R [pos; target] + b) + noise * N(0, I)`.
pub fn render(state: &State, phi: &DomainParams, rng: &mut Rng) -> Vec<f64> {
    let s = state.as_vec();
    phi.render_matrix
        .iter()
        .zip(&phi.render_bias)
        .map(|(row, &b)| {
            let clean: f64 = row.iter().zip(&s).map(|(w, x)| w * x).sum::<f64>() + b;
            let noise = if phi.noise_scale > 0.0 { phi.noise_scale * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            phi.gain * clean + noise
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: State,
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Within the goal radius with hold engaged.
    pub goal_met: bool,
}

/// One environment step. The action is clamped to `[-1, 1]^3` first.
pub fn step(state: &State, action: Action, phi: &DomainParams, rng: &mut Rng) -> Transition {
    let a = clamp_action(action);
    let speed = STEP_SCALE * (1.0 - phi.drag);
    let next = State { pos: [state.pos[0] + speed * a[0], state.pos[1] + speed * a[1]], target: state.target };
    let dist = next.distance();
    let goal_met = dist <= GOAL_RADIUS && a[2] > 0.0;
    let reward = -dist + if goal_met { 1.0 } else { 0.0 };
    let obs = render(&next, phi, rng);
    Transition { next, obs, reward, goal_met }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    pub goal_met: bool,
}

/// One rollout. `steps[t].obs` is the observation the action was chosen from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub domain_id: String,
    pub steps: Vec<Step>,
    pub success: bool,
    pub strict_success: bool,
    pub cumulative_reward: f64,
}

impl EpisodeRecord {
    /// Builds a record with its summary fields derived from the steps.
    pub fn from_steps(domain_id: impl Into<String>, steps: Vec<Step>) -> Self {
        let m = sim_validation::metrics_of_steps(&steps);
        Self {
            domain_id: domain_id.into(),
            steps,
            success: m.success,
            strict_success: m.strict_success,
            cumulative_reward: m.reward,
        }
    }
}

/// Uniform initial-state distribution: the agent near the origin, target anywhere in the box.
pub fn sample_initial_state(rng: &mut Rng) -> State {
    State {
        pos: [rng.random_range(-START_JITTER..=START_JITTER), rng.random_range(-START_JITTER..=START_JITTER)],
        target: [rng.random_range(-TARGET_BOX..=TARGET_BOX), rng.random_range(-TARGET_BOX..=TARGET_BOX)],
    }
}

/// `n x n` grid of target positions over the box, agent at the origin.
pub fn initial_grid(n: usize) -> Vec<State> {
    let coord = |i: usize| if n == 1 { 0.0 } else { -TARGET_BOX + 2.0 * TARGET_BOX * i as f64 / (n - 1) as f64 };
    (0..n)
        .flat_map(|i| (0..n).map(move |j| State { pos: [0.0, 0.0], target: [coord(i), coord(j)] }))
        .collect()
}

/// How the domain evolves within an episode.
pub enum DomainSchedule<'a> {
    /// One domain for the whole episode.
    Fixed { id: &'a str, params: &'a DomainParams },
    /// Drawn at reset, then redrawn every `frequency` steps (never if 0).
    Randomized(&'a DomainSource),
}

/// Rolls out `controller` for `horizon` steps. The controller sees the rendered
/// observation and the true state; learned policies use only the former.
pub fn rollout(
    controller: &mut dyn FnMut(&[f64], &State) -> Action,
    init: State,
    schedule: DomainSchedule<'_>,
    horizon: usize,
    rng: &mut Rng,
) -> EpisodeRecord {
    let (domain_id, mut phi, source) = match schedule {
        DomainSchedule::Fixed { id, params } => (id.to_owned(), params.clone(), None),
        DomainSchedule::Randomized(src) => ("sampled".to_owned(), src.draw(rng), Some(src)),
    };
    let mut state = init;
    let mut obs = render(&state, &phi, rng);
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let action = clamp_action(controller(&obs, &state));
        if let Some(src) = source {
            let f = src.frequency() as usize;
            if f > 0 && t > 0 && t % f == 0 {
                phi = src.draw(rng);
            }
        }
        let tr = step(&state, action, &phi, rng);
        steps.push(Step {
            obs: std::mem::replace(&mut obs, tr.obs),
            action,
            reward: tr.reward,
            done: t + 1 == horizon,
            goal_met: tr.goal_met,
        });
        state = tr.next;
    }
    debug_assert_eq!(steps.first().map_or(OBS_DIM, |s| s.obs.len()), OBS_DIM);
    EpisodeRecord::from_steps(domain_id, steps)
}

pub fn rollout_with_source(
    controller: &mut dyn FnMut(&[f64], &State) -> Action,
    init: State,
    source: &DomainSource,
    horizon: usize,
    rng: &mut Rng,
) -> EpisodeRecord {
    rollout(controller, init, DomainSchedule::Randomized(source), horizon, rng)
}
