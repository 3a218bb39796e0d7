//! Off-policy classification baselines (OPC and SoftOPC) driven by a
//! Monte-Carlo-fitted critic.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy_net::{LayerKind, LayerSpec, MlpPolicy, PolicyMeta};
use crate::seeding;
use crate::testbed::{Action, EpisodeRecord, ACTION_DIM, OBS_DIM};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no rollouts to fit the critic on")]
    EmptyRollouts,
    #[error("labeled transition set is empty")]
    EmptyData,
    #[error("OPC needs both successful and failed transitions")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub hidden: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub init_std: f64,
    pub min_std: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { hidden: 16, population: 32, elites: 6, iterations: 30, init_std: 0.1, min_std: 0.005 }
    }
}

/// `Q(obs, action) = target_mean + target_scale * net([obs; action])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub policy_id: String,
    net: MlpPolicy<f64>,
    target_mean: f64,
    target_scale: f64,
    /// Mean squared error on the fitting data.
    pub fit_loss: f64,
}

impl Critic {
    /// A critic that ignores its input and predicts `value`.
    pub fn constant(policy_id: &str, value: f64, hidden: usize) -> Self {
        let net = MlpPolicy::zeros(policy_id, &critic_arch(hidden), PolicyMeta::default())
            .expect("valid critic architecture")
            .unbounded();
        Self { policy_id: policy_id.to_owned(), net, target_mean: value, target_scale: 1.0, fit_loss: f64::NAN }
    }

    pub fn q(&self, obs: &[f64], action: &Action) -> f64 {
        let mut x = Vec::with_capacity(OBS_DIM + ACTION_DIM);
        x.extend_from_slice(obs);
        x.extend_from_slice(action);
        self.target_mean + self.target_scale * self.net.forward(&x).expect("critic input width")[0]
    }

    pub fn q_all(&self, data: &LabeledTransitionSet) -> Vec<f64> {
        data.transitions.par_iter().map(|t| self.q(&t.obs, &t.action)).collect()
    }
}

fn critic_arch(hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new("fc0", LayerKind::AffineRelu, OBS_DIM + ACTION_DIM, hidden),
        LayerSpec::new("q", LayerKind::Affine, hidden, 1),
    ]
}

/// Undiscounted return-to-go targets: each step's reward plus all later rewards.
pub fn returns_to_go(episode: &EpisodeRecord) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = episode
        .steps
        .iter()
        .rev()
        .map(|s| {
            acc += s.reward;
            acc
        })
        .collect();
    out.reverse();
    out
}

fn mse(net: &MlpPolicy<f64>, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
    let mut scratch = net.scratch();
    inputs
        .iter()
        .zip(targets)
        .map(|(x, &y)| {
            let d = net.run(x, &mut scratch)[0] - y;
            d * d
        })
        .sum::<f64>()
        / targets.len() as f64
}

/// Least-squares regression of `Q(s_t, a_t)` onto the return-to-go by
/// cross-entropy weight search. Returns the best network seen.
pub fn fit_critic(
    policy_id: &str,
    rollouts: &[EpisodeRecord],
    seed: u64,
    cfg: &CriticConfig,
) -> Result<Critic, BaselineError> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for ep in rollouts {
        for (s, g) in ep.steps.iter().zip(returns_to_go(ep)) {
            let mut x = s.obs.clone();
            x.extend_from_slice(&s.action);
            inputs.push(x);
            targets.push(g);
        }
    }
    if targets.is_empty() {
        return Err(BaselineError::EmptyRollouts);
    }
    let n = targets.len() as f64;
    let target_mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - target_mean).powi(2)).sum::<f64>() / n;
    let target_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let z: Vec<f64> = targets.iter().map(|y| (y - target_mean) / target_scale).collect();

    let id_hash = seeding::hash_str(policy_id);
    let mut net = MlpPolicy::random(
        policy_id,
        &critic_arch(cfg.hidden),
        PolicyMeta::default(),
        &mut seeding::rng_from(&[seed, id_hash, 0xC1]),
    )
    .expect("valid critic architecture")
    .unbounded();
    let mut mean = net.flat_params();
    let mut std = vec![cfg.init_std; mean.len()];
    let mut best_loss = mse(&net, &inputs, &z);
    let mut best = mean.clone();

    for iter in 0..cfg.iterations {
        let scored: Vec<(f64, Vec<f64>)> = (0..cfg.population)
            .into_par_iter()
            .map(|c| {
                let mut rng = seeding::rng_from(&[seed, id_hash, 0xC2, iter as u64, c as u64]);
                let theta: Vec<f64> = mean
                    .iter()
                    .zip(&std)
                    .map(|(&m, &s)| m + s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                let mut cand = net.clone();
                cand.set_flat_params(&theta).expect("finite candidate");
                (mse(&cand, &inputs, &z), theta)
            })
            .collect();
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0).then(a.cmp(&b)));
        if scored[order[0]].0 < best_loss {
            best_loss = scored[order[0]].0;
            best = scored[order[0]].1.clone();
        }
        let k = cfg.elites.min(order.len()) as f64;
        for j in 0..mean.len() {
            let m = order[..cfg.elites].iter().map(|&e| scored[e].1[j]).sum::<f64>() / k;
            let v = order[..cfg.elites].iter().map(|&e| (scored[e].1[j] - m).powi(2)).sum::<f64>() / k;
            mean[j] = m;
            std[j] = v.sqrt().max(cfg.min_std);
        }
    }
    net.set_flat_params(&best).expect("finite best");
    Ok(Critic {
        policy_id: policy_id.to_owned(),
        net,
        target_mean,
        target_scale,
        fit_loss: best_loss * target_scale * target_scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTransition {
    pub obs: Vec<f64>,
    pub action: Action,
    /// Success label of the episode the transition came from.
    pub label: bool,
    pub episode_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledTransitionSet {
    pub transitions: Vec<LabeledTransition>,
}

impl LabeledTransitionSet {
    pub fn labels(&self) -> Vec<bool> {
        self.transitions.iter().map(|t| t.label).collect()
    }

    pub fn success_fraction_by_episode(&self) -> f64 {
        let mut seen = std::collections::BTreeMap::new();
        for t in &self.transitions {
            seen.insert(t.episode_id.as_str(), t.label);
        }
        seen.values().filter(|&&l| l).count() as f64 / seen.len().max(1) as f64
    }
}

/// Pools every policy's ground-truth episodes into one labeled set.
pub fn build_labeled_set(gt_episodes: &[(String, Vec<EpisodeRecord>)]) -> LabeledTransitionSet {
    let mut transitions = Vec::new();
    for (policy_id, episodes) in gt_episodes {
        for (i, ep) in episodes.iter().enumerate() {
            let episode_id = format!("{policy_id}#{i}");
            for s in &ep.steps {
                transitions.push(LabeledTransition {
                    obs: s.obs.clone(),
                    action: s.action,
                    label: ep.success,
                    episode_id: episode_id.clone(),
                });
            }
        }
    }
    LabeledTransitionSet { transitions }
}

/// Mean critic value on successful transitions minus the mean on all transitions.
pub fn soft_opc_from_q(q: &[f64], labels: &[bool]) -> Result<f64, BaselineError> {
    if q.is_empty() {
        return Err(BaselineError::EmptyData);
    }
    let all = q.iter().sum::<f64>() / q.len() as f64;
    let succ: Vec<f64> = q.iter().zip(labels).filter(|(_, &l)| l).map(|(&v, _)| v).collect();
    if succ.is_empty() {
        // No successes: the success mean is undefined, so no signal.
        return Ok(0.0);
    }
    Ok(succ.iter().sum::<f64>() / succ.len() as f64 - all)
}

/// Best balanced accuracy of the rule "success iff Q > b" over thresholds `b`
/// taken from the observed Q values.
pub fn opc_from_q(q: &[f64], labels: &[bool]) -> Result<f64, BaselineError> {
    if q.is_empty() {
        return Err(BaselineError::EmptyData);
    }
    let n_s = labels.iter().filter(|&&l| l).count();
    let n_f = labels.len() - n_s;
    if n_s == 0 || n_f == 0 {
        return Err(BaselineError::SingleClass);
    }
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[a].total_cmp(&q[b]));
    // Sweep thresholds upward: after consuming every value <= b, count the
    // successes and failures at or below b.
    let (mut s_le, mut f_le) = (0usize, 0usize);
    let mut best = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let b = q[order[i]];
        while i < order.len() && q[order[i]] == b {
            if labels[order[i]] { s_le += 1 } else { f_le += 1 }
            i += 1;
        }
        let tpr = (n_s - s_le) as f64 / n_s as f64;
        let tnr = f_le as f64 / n_f as f64;
        best = best.max(0.5 * tpr + 0.5 * tnr);
    }
    Ok(best)
}

pub fn soft_opc(critic: &Critic, data: &LabeledTransitionSet) -> Result<f64, BaselineError> {
    soft_opc_from_q(&critic.q_all(data), &data.labels())
}

pub fn opc(critic: &Critic, data: &LabeledTransitionSet) -> Result<f64, BaselineError> {
    opc_from_q(&critic.q_all(data), &data.labels())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over every threshold, independent of the sweep.
    fn opc_brute(q: &[f64], labels: &[bool]) -> f64 {
        let n_s = labels.iter().filter(|&&l| l).count() as f64;
        let n_f = labels.len() as f64 - n_s;
        q.iter()
            .map(|&b| {
                let tp = q.iter().zip(labels).filter(|(&v, &l)| l && v > b).count() as f64;
                let tn = q.iter().zip(labels).filter(|(&v, &l)| !l && v <= b).count() as f64;
                0.5 * tp / n_s + 0.5 * tn / n_f
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn opc_worked_example() {
        let q = [0.1, 0.4, 0.6, 0.9];
        let l = [false, true, false, true];
        assert_eq!(opc_brute(&q, &l), 0.75);
        assert_eq!(opc_from_q(&q, &l).unwrap(), 0.75);
    }

    #[test]
    fn opc_edge_cases() {
        assert_eq!(opc_from_q(&[0.0, 0.1, 0.9, 1.0], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(opc_from_q(&[3.0; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(opc_from_q(&[1.0, 2.0], &[true, true]), Err(BaselineError::SingleClass));
        assert_eq!(opc_from_q(&[], &[]), Err(BaselineError::EmptyData));
    }

    #[test]
    fn soft_opc_cases() {
        assert_eq!(soft_opc_from_q(&[1.0, 5.0, -2.0], &[true; 3]).unwrap(), 0.0);
        assert_eq!(soft_opc_from_q(&[4.0; 4], &[true, false, false, true]).unwrap(), 0.0);
        assert_eq!(soft_opc_from_q(&[1.0, 1.0, 0.0, 0.0], &[true, true, false, false]).unwrap(), 0.5);
    }

    proptest::proptest! {
        #[test]
        fn opc_sweep_matches_brute_force(
            pairs in proptest::collection::vec((0u8..6, proptest::bool::ANY), 2..40)
        ) {
            let q: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) * 0.25).collect();
            let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            proptest::prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let fast = opc_from_q(&q, &l).unwrap();
            proptest::prop_assert!((fast - opc_brute(&q, &l)).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&fast));
            // Strictly monotone transforms leave OPC unchanged.
            let warped: Vec<f64> = q.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            proptest::prop_assert_eq!(opc_from_q(&warped, &l).unwrap(), fast);
        }

        #[test]
        fn soft_opc_shift_invariant(
            pairs in proptest::collection::vec((-50i32..50, proptest::bool::ANY), 1..30),
            c in -100i32..100,
        ) {
            let q: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 8.0).collect();
            let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let shifted: Vec<f64> = q.iter().map(|v| v + f64::from(c)).collect();
            let a = soft_opc_from_q(&q, &l).unwrap();
            let b = soft_opc_from_q(&shifted, &l).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
