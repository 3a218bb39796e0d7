//! Episode metrics and the simulation validation score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::testbed::{rollout, sample_initial_state, Agent, DomainSchedule, EpisodeRecord, NamedDomain, Step, N_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Reward,
    Success,
    StrictSuccess,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Reward, Metric::Success, Metric::StrictSuccess];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Reward => "reward",
            Metric::Success => "success",
            Metric::StrictSuccess => "strict-success",
        })
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reward" => Ok(Metric::Reward),
            "success" => Ok(Metric::Success),
            "strict-success" | "strict_success" => Ok(Metric::StrictSuccess),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// Which validation domain set a simulation score was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationType {
    Heavy,
    Mild,
    Off,
}

impl ValidationType {
    pub const ALL: [ValidationType; 3] = [ValidationType::Heavy, ValidationType::Mild, ValidationType::Off];
}

impl fmt::Display for ValidationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationType::Heavy => "heavy",
            ValidationType::Mild => "mild",
            ValidationType::Off => "off",
        })
    }
}

impl FromStr for ValidationType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "heavy" => Ok(ValidationType::Heavy),
            "mild" => Ok(ValidationType::Mild),
            "off" => Ok(ValidationType::Off),
            other => Err(format!("unknown validation type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub reward: f64,
    pub success: bool,
    pub strict_success: bool,
}

impl EpisodeMetrics {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Reward => self.reward,
            Metric::Success => f64::from(u8::from(self.success)),
            Metric::StrictSuccess => f64::from(u8::from(self.strict_success)),
        }
    }
}

/// Reward is the undiscounted sum. Success: the goal criterion held at some
/// step. Strict success: it held at some step and at every later step.
pub fn metrics_of_steps(steps: &[Step]) -> EpisodeMetrics {
    let met: Vec<bool> = steps.iter().map(|s| s.goal_met).collect();
    let success = met.iter().any(|&m| m);
    let strict_success = (0..met.len()).any(|n| met[n] && met[n + 1..].iter().all(|&m| m));
    EpisodeMetrics { reward: steps.iter().map(|s| s.reward).sum(), success, strict_success }
}

pub fn evaluate_metrics(episode: &EpisodeRecord) -> EpisodeMetrics {
    metrics_of_steps(&episode.steps)
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("validation domain set is empty")]
    NoDomains,
    #[error("n_episodes must be at least 1")]
    NoEpisodes,
}

/// Per-episode metrics of `agent` on `n_episodes` validation episodes.
///
/// The domain and initial state of episode `i` depend only on `(seed, i)`, so
/// all agents face identical conditions; observation noise is keyed by agent id.
pub fn validation_episodes(
    agent: &dyn Agent,
    domains: &[NamedDomain],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>, ValidationError> {
    if domains.is_empty() {
        return Err(ValidationError::NoDomains);
    }
    if n_episodes == 0 {
        return Err(ValidationError::NoEpisodes);
    }
    let agent_hash = seeding::hash_str(agent.agent_id());
    let mut ctl = agent.controller();
    Ok((0..n_episodes)
        .map(|i| {
            let mut common = seeding::rng_from(&[seed, 0x7A1, i as u64]);
            let d = &domains[rand::Rng::random_range(&mut common, 0..domains.len())];
            let init = sample_initial_state(&mut common);
            let mut noise = seeding::rng_from(&[seed, agent_hash, i as u64]);
            let ep = rollout(
                &mut *ctl,
                init,
                DomainSchedule::Fixed { id: &d.id, params: &d.params },
                N_STEPS,
                &mut noise,
            );
            evaluate_metrics(&ep)
        })
        .collect())
}

pub fn mean_metric(episodes: &[EpisodeMetrics], metric: Metric) -> f64 {
    episodes.iter().map(|e| e.value(metric)).sum::<f64>() / episodes.len() as f64
}

/// The validation score `s`: mean of `metric` over the validation episodes.
pub fn validate(
    agent: &dyn Agent,
    domains: &[NamedDomain],
    n_episodes: usize,
    metric: Metric,
    seed: u64,
) -> Result<f64, ValidationError> {
    Ok(mean_metric(&validation_episodes(agent, domains, n_episodes, seed)?, metric))
}
