use vsdr::baselines::{build_labeled_set, fit_critic, opc, soft_opc, CriticConfig};
use vsdr::policy_net::{default_architecture, MlpPolicy, PolicyMeta};
use vsdr::rank_eval::ground_truth_eval;
use vsdr::testbed::*;
use vsdr::seeding;

fn random_policy(seed: u64) -> MlpPolicy<f64> {
    let arch = default_architecture(OBS_DIM, HIDDEN_DIM, ACTION_DIM);
    MlpPolicy::random(format!("p{seed}"), &arch, PolicyMeta::default(), &mut seeding::rng_from(&[seed])).unwrap()
}

fn synthetic_episode(len: usize, reward: f64, success: bool) -> EpisodeRecord {
    let steps = (0..len)
        .map(|t| Step {
            obs: vec![0.1 * t as f64; OBS_DIM],
            action: [0.0, 0.0, 0.0],
            reward,
            done: t + 1 == len,
            goal_met: success && t + 1 == len,
        })
        .collect();
    EpisodeRecord::from_steps("synthetic", steps)
}

fn rollouts(policy: &MlpPolicy<f64>, n: usize, seed: u64) -> Vec<EpisodeRecord> {
    let source = DomainSource::new(DRConfig::heavy("heavy", 0, DomainRanges::heavy()));
    let mut ctl = policy.controller();
    (0..n)
        .map(|i| {
            let mut rng = seeding::rng_from(&[seed, i as u64]);
            let init = sample_initial_state(&mut rng);
            rollout_with_source(&mut *ctl, init, &source, N_STEPS, &mut rng)
        })
        .collect()
}

#[test]
fn constant_target_is_learned() {
    let c = -0.7;
    let eps: Vec<EpisodeRecord> = (0..40).map(|_| synthetic_episode(1, c, false)).collect();
    let critic = fit_critic("c", &eps, 1, &CriticConfig::default()).unwrap();
    assert!(critic.fit_loss <= c * c);
    assert!((critic.q(&eps[0].steps[0].obs, &[0.0, 0.0, 0.0]) - c).abs() < 0.05);
}

#[test]
fn critic_fit_is_deterministic() {
    let eps = rollouts(&random_policy(1), 10, 3);
    let cfg = CriticConfig { iterations: 5, ..CriticConfig::default() };
    let a = fit_critic("p1", &eps, 9, &cfg).unwrap();
    let b = fit_critic("p1", &eps, 9, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn held_out_error_beats_target_variance() {
    let p = random_policy(2);
    let eps = rollouts(&p, 200, 5);
    let (train, test) = eps.split_at(160);
    let critic = fit_critic(&p.id, train, 4, &CriticConfig::default()).unwrap();
    let mut sq = 0.0;
    let mut targets = Vec::new();
    for ep in test {
        for (s, g) in ep.steps.iter().zip(vsdr::baselines::returns_to_go(ep)) {
            sq += (critic.q(&s.obs, &s.action) - g).powi(2);
            targets.push(g);
        }
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    assert!(sq / n < var, "held-out mse {} vs target variance {var}", sq / n);
}

#[test]
fn pooled_labeled_set_has_every_episode() {
    // 60 policies x 49 attempts; policy i succeeds on its first i % 50 attempts.
    let pooled: Vec<(String, Vec<EpisodeRecord>)> = (0..60)
        .map(|i| (format!("p{i}"), (0..49).map(|e| synthetic_episode(N_STEPS, -0.1, e < i % 50)).collect()))
        .collect();
    let set = build_labeled_set(&pooled);
    let ids: std::collections::HashSet<&str> = set.transitions.iter().map(|t| t.episode_id.as_str()).collect();
    assert_eq!(ids.len(), 2940);
    assert_eq!(set.transitions.len(), 2940 * N_STEPS);
    let population_mean = pooled
        .iter()
        .map(|(_, eps)| eps.iter().filter(|e| e.success).count() as f64 / eps.len() as f64)
        .sum::<f64>()
        / 60.0;
    assert!((set.success_fraction_by_episode() - population_mean).abs() < 1e-12);
}

#[test]
fn baselines_on_a_real_labeled_set() {
    let sets = make_domain_sets(3, &DomainRanges::heavy(), false);
    let mut pooled = vec![("expert".to_owned(), expert_demonstrations(&sets.real, GT_GRID, N_STEPS, 3))];
    let p = random_policy(3);
    pooled.push((p.id.clone(), ground_truth_eval(&[p.clone()], &sets.real, GT_GRID, 1, 3)[0].episodes[0].clone()));
    let set = build_labeled_set(&pooled);
    let critic = fit_critic(&p.id, &rollouts(&p, 20, 1), 2, &CriticConfig { iterations: 5, ..CriticConfig::default() })
        .unwrap();
    let o = opc(&critic, &set).unwrap();
    assert!((0.0..=1.0).contains(&o));
    assert!(soft_opc(&critic, &set).unwrap().is_finite());
}

#[test]
fn ground_truth_shapes_and_noise_free_repeatability() {
    let sets = make_domain_sets(4, &DomainRanges::heavy(), false);
    let mut real = sets.real.clone();
    real.params.noise_scale = 0.0;
    let policies: Vec<MlpPolicy<f64>> = (0..3).map(random_policy).collect();
    let runs = ground_truth_eval(&policies, &real, GT_GRID, 2, 4);
    assert_eq!(runs.len(), 2);
    for run in &runs {
        assert!(run.episodes.iter().all(|e| e.len() == 49));
    }
    // Without observation noise both runs see identical episodes.
    for (i, s) in runs[0].truth.success.iter().enumerate() {
        if *s == 0.0 {
            assert_eq!(runs[1].truth.success[i], 0.0);
        }
    }
    assert_eq!(runs[0].truth.reward, runs[1].truth.reward);
}
