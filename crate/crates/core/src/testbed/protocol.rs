//! Fixed real-analog observation sets built from expert demonstrations.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::domain::NamedDomain;
use super::env::{initial_grid, rollout, DomainSchedule, EpisodeRecord};
use super::expert::scripted_expert;
use crate::matrix::Matrix;
use crate::seeding;

/// Steps per expert demonstration.
pub const EXPERT_HORIZON: usize = 11;
pub const EXPERT_GRID: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Expert,
    SparseExpert,
    Initial,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Expert, Protocol::SparseExpert, Protocol::Initial];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Expert => "expert",
            Protocol::SparseExpert => "sparse-expert",
            Protocol::Initial => "initial",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "expert" => Ok(Protocol::Expert),
            "sparse-expert" | "sparse_expert" => Ok(Protocol::SparseExpert),
            "initial" => Ok(Protocol::Initial),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("no expert episodes")]
    NoEpisodes,
    #[error("k = {k} exceeds the pooled {pool} observations")]
    KTooLarge { k: usize, pool: usize },
}

/// Expert demonstrations on the real-analog domain over the initial grid.
pub fn expert_demonstrations(real: &NamedDomain, grid: usize, horizon: usize, seed: u64) -> Vec<EpisodeRecord> {
    initial_grid(grid)
        .into_iter()
        .enumerate()
        .map(|(i, init)| {
            let mut rng = seeding::rng_from(&[seed, 0xE4, i as u64]);
            let mut ctl = |_: &[f64], s: &_| scripted_expert(s);
            rollout(&mut ctl, init, DomainSchedule::Fixed { id: &real.id, params: &real.params }, horizon, &mut rng)
        })
        .collect()
}

/// Extracts the observation set for `protocol`. `k` applies to `SparseExpert` only.
pub fn collect_protocol(
    episodes: &[EpisodeRecord],
    protocol: Protocol,
    k: usize,
    seed: u64,
) -> Result<Matrix<f64>, ProtocolError> {
    if episodes.is_empty() {
        return Err(ProtocolError::NoEpisodes);
    }
    let pooled: Vec<Vec<f64>> = episodes.iter().flat_map(|e| e.steps.iter().map(|s| s.obs.clone())).collect();
    let rows = match protocol {
        Protocol::Expert => pooled,
        Protocol::Initial => episodes.iter().filter_map(|e| e.steps.first().map(|s| s.obs.clone())).collect(),
        Protocol::SparseExpert => {
            if k > pooled.len() {
                return Err(ProtocolError::KTooLarge { k, pool: pooled.len() });
            }
            let mut rng = seeding::rng_from(&[seed, 0x5A]);
            let mut idx = sample(&mut rng, pooled.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pooled[i].clone()).collect()
        }
    };
    Ok(Matrix::from_rows(&rows).expect("observations share one width"))
}
