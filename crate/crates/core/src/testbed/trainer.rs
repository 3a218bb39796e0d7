//! Cross-entropy weight search producing the policy population.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::domain::{DRConfig, DomainParams, DomainSource};
use super::env::{rollout_with_source, sample_initial_state};
use super::{ACTION_DIM, N_STEPS, OBS_DIM};
use crate::policy_net::{default_architecture, MlpPolicy, PolicyMeta};
use crate::seeding;

pub const HIDDEN_DIM: usize = 32;

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub population: usize,
    pub elites: usize,
    /// Number of search iterations (the training budget).
    pub iterations: usize,
    pub episodes_per_eval: usize,
    pub init_std: f64,
    pub min_std: f64,
    pub dr_config: DRConfig,
    /// Shared training domains, used when `dr_config.use_train_pool` is set.
    pub train_pool: Option<Arc<Vec<DomainParams>>>,
    /// Seed index; part of the policy id.
    pub seed: u64,
    /// Run-wide seed mixed into every random stream.
    pub master_seed: u64,
}

impl TrainerConfig {
    pub fn new(dr_config: DRConfig, seed: u64) -> Self {
        Self {
            population: 48,
            elites: 8,
            iterations: 40,
            episodes_per_eval: 6,
            init_std: 0.1,
            min_std: 0.04,
            dr_config,
            train_pool: None,
            seed,
            master_seed: 0,
        }
    }

    pub fn policy_id(&self) -> String {
        format!("{}-s{}", self.dr_config.name, self.seed)
    }

    pub fn domain_source(&self) -> DomainSource {
        match (&self.train_pool, self.dr_config.use_train_pool) {
            (Some(pool), true) => DomainSource::with_pool(self.dr_config.clone(), pool.clone()),
            _ => DomainSource::new(self.dr_config.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.elites == 0 || self.elites > self.population {
            return Err(format!("elites ({}) must be in 1..=population ({})", self.elites, self.population));
        }
        if self.episodes_per_eval == 0 {
            return Err("episodes_per_eval must be >= 1".into());
        }
        self.dr_config.validate()
    }
}

/// Mean undiscounted episode reward of `policy` over `k` episodes drawn from `source`.
pub fn mean_return(policy: &MlpPolicy<f64>, source: &DomainSource, stream: &[u64], k: usize) -> f64 {
    let mut scratch = policy.scratch();
    let mut total = 0.0;
    for ep in 0..k {
        let mut parts = stream.to_vec();
        parts.push(ep as u64);
        let mut rng = seeding::rng_from(&parts);
        let init = sample_initial_state(&mut rng);
        let mut ctl = |obs: &[f64], _: &_| {
            let a = policy.run(obs, &mut scratch);
            [a[0], a[1], a[2]]
        };
        total += rollout_with_source(&mut ctl, init, source, N_STEPS, &mut rng).cumulative_reward;
    }
    total / k as f64
}

/// Trains one policy. With `iterations == 0` the random initialization is returned.
pub fn train_policy(cfg: &TrainerConfig) -> MlpPolicy<f64> {
    let arch = default_architecture(OBS_DIM, HIDDEN_DIM, ACTION_DIM);
    let meta = PolicyMeta { dr_config: cfg.dr_config.name.clone(), seed: cfg.seed, budget: cfg.iterations };
    let id = cfg.policy_id();
    let mut init_rng = seeding::rng_from(&[cfg.master_seed, cfg.seed, seeding::hash_str(&id), 0]);
    let mut policy = MlpPolicy::random(id.clone(), &arch, meta, &mut init_rng).expect("default architecture is valid");
    if cfg.iterations == 0 {
        return policy;
    }
    let source = cfg.domain_source();
    let mut mean = policy.flat_params();
    let mut std = vec![cfg.init_std; mean.len()];
    let id_hash = seeding::hash_str(&id);

    for iter in 0..cfg.iterations {
        let stream = [cfg.master_seed, cfg.seed, id_hash, 1, iter as u64];
        let scored: Vec<(f64, Vec<f64>)> = (0..cfg.population)
            .into_par_iter()
            .map(|c| {
                let mut rng = seeding::rng_from(&[cfg.master_seed, cfg.seed, id_hash, 2, iter as u64, c as u64]);
                let theta: Vec<f64> = mean
                    .iter()
                    .zip(&std)
                    .map(|(&m, &s)| m + s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                let mut cand = policy.clone();
                cand.set_flat_params(&theta).expect("finite candidate");
                (mean_return(&cand, &source, &stream, cfg.episodes_per_eval), theta)
            })
            .collect();
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
        let elites = &order[..cfg.elites];
        let n = cfg.elites as f64;
        for j in 0..mean.len() {
            let m = elites.iter().map(|&e| scored[e].1[j]).sum::<f64>() / n;
            let v = elites.iter().map(|&e| (scored[e].1[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = v.sqrt().max(cfg.min_std);
        }
    }
    policy.set_flat_params(&mean).expect("finite mean");
    policy
}

/// Trains every configuration, in parallel; output order follows `configs`.
pub fn train_population(configs: &[TrainerConfig]) -> Vec<MlpPolicy<f64>> {
    configs.par_iter().map(train_policy).collect()
}
