//! Pipeline configuration: a TOML file with one section per stage. Every
//! field has a default, so a config file only lists what it overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::CriticConfig;
use crate::mixture::EmConfig;
use crate::policy_net::TAP_LAYERS;
use crate::sim_validation::{Metric, ValidationType};
use crate::testbed::{preset_suite, Protocol, EXPERT_GRID, EXPERT_HORIZON, GT_GRID};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: Box<toml::de::Error> },
    #[error("unknown preset `{0}` (expected one of: paper-analog, default, acceptance, minimal)")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestbedSection {
    /// DR preset names; empty means the full preset suite.
    pub presets: Vec<String>,
    pub seeds: usize,
    /// Training iterations by seed index, cycled when there are more seeds.
    pub budgets: Vec<usize>,
    pub population: usize,
    pub elites: usize,
    pub episodes_per_eval: usize,
    pub init_std: f64,
    pub min_std: f64,
    /// Place the real-analog gain outside the heavy range.
    pub out_of_support: bool,
}

impl Default for TestbedSection {
    fn default() -> Self {
        Self {
            presets: Vec::new(),
            seeds: 3,
            budgets: vec![60, 120, 180],
            population: 48,
            elites: 8,
            episodes_per_eval: 6,
            init_std: 0.1,
            min_std: 0.04,
            out_of_support: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthSection {
    pub grid: usize,
    pub runs: usize,
}

impl Default for GroundTruthSection {
    fn default() -> Self {
        Self { grid: GT_GRID, runs: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertSection {
    pub grid: usize,
    pub horizon: usize,
    /// Protocol used for the main sweep.
    pub protocol: Protocol,
    pub sparse_k: usize,
}

impl Default for ExpertSection {
    fn default() -> Self {
        Self { grid: EXPERT_GRID, horizon: EXPERT_HORIZON, protocol: Protocol::Expert, sparse_k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub types: Vec<ValidationType>,
    pub metrics: Vec<Metric>,
    pub n_episodes: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self { types: ValidationType::ALL.to_vec(), metrics: Metric::ALL.to_vec(), n_episodes: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSection {
    pub layers: Vec<String>,
    pub components: Vec<usize>,
    /// Training-distribution activation rows per policy and layer.
    pub n_activations: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub n_restarts: usize,
    pub variance_floor: f64,
    pub standardize: bool,
}

impl Default for MixtureSection {
    fn default() -> Self {
        let em = EmConfig::default();
        Self {
            layers: TAP_LAYERS.iter().map(|s| s.to_string()).collect(),
            components: vec![1, 2, 3, 5, 10],
            n_activations: 2000,
            max_iters: em.max_iters,
            tol: em.tol,
            n_restarts: em.n_restarts,
            variance_floor: em.variance_floor,
            standardize: em.standardize,
        }
    }
}

impl MixtureSection {
    pub fn em_config(&self, rng_seed: u64) -> EmConfig {
        EmConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            n_restarts: self.n_restarts,
            variance_floor: self.variance_floor,
            rng_seed,
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesSection {
    pub enabled: bool,
    /// Training-distribution rollouts used to fit each policy's critic.
    pub critic_episodes: usize,
    pub critic: CriticConfig,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        Self { enabled: true, critic_episodes: 50, critic: CriticConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Compare Expert, SparseExpert and Initial observation sets.
    pub protocols: bool,
    /// Mixture size used by the protocol and stability analyses.
    pub protocol_components: usize,
    pub sparse_redraws: usize,
    pub stability_k: usize,
    pub separability: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { protocols: true, protocol_components: 2, sparse_redraws: 10, stability_k: 64, separability: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub testbed: TestbedSection,
    pub ground_truth: GroundTruthSection,
    pub expert: ExpertSection,
    pub validation: ValidationSection,
    pub mixture: MixtureSection,
    pub baselines: BaselinesSection,
    pub analysis: AnalysisSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            testbed: TestbedSection::default(),
            ground_truth: GroundTruthSection::default(),
            expert: ExpertSection::default(),
            validation: ValidationSection::default(),
            mixture: MixtureSection::default(),
            baselines: BaselinesSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl Config {
    /// Named configurations:
    /// * `default`: 60 policies, the full 225-cell sweep.
    /// * `paper-analog` (alias `acceptance`): 60 policies, 5 layers x {1,2,5}
    ///   components x {heavy, off} validation x {reward, success}.
    /// * `minimal`: 2 policies, a single cell, no analyses.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "default" => Ok(Self::default()),
            "paper-analog" | "acceptance" => {
                let mut c = Self::default();
                c.mixture.components = vec![1, 2, 5];
                c.validation.types = vec![ValidationType::Heavy, ValidationType::Off];
                c.validation.metrics = vec![Metric::Reward, Metric::Success];
                Ok(c)
            }
            "minimal" => {
                let mut c = Self::default();
                c.testbed.presets = vec!["heavy-freq-0".into(), "off".into()];
                c.testbed.seeds = 1;
                c.testbed.budgets = vec![5];
                c.testbed.population = 12;
                c.testbed.elites = 3;
                c.testbed.episodes_per_eval = 2;
                c.validation.types = vec![ValidationType::Heavy];
                c.validation.metrics = vec![Metric::Reward];
                c.validation.n_episodes = 20;
                c.mixture.layers = vec!["fc0".into()];
                c.mixture.components = vec![1];
                c.mixture.n_activations = 200;
                c.mixture.n_restarts = 2;
                c.baselines.critic_episodes = 4;
                c.baselines.critic.iterations = 3;
                c.baselines.critic.population = 8;
                c.baselines.critic.elites = 2;
                c.analysis.protocols = false;
                c.analysis.separability = false;
                Ok(c)
            }
            other => Err(ConfigError::UnknownPreset(other.to_owned())),
        }
    }

    pub fn from_toml_str(text: &str, path: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_owned(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Preset names to train, in order.
    pub fn preset_names(&self) -> Vec<String> {
        if self.testbed.presets.is_empty() {
            preset_suite().into_iter().map(|c| c.name).collect()
        } else {
            self.testbed.presets.clone()
        }
    }

    pub fn budget_for_seed(&self, seed_index: usize) -> usize {
        self.testbed.budgets[seed_index % self.testbed.budgets.len()]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let t = &self.testbed;
        let suite: Vec<String> = preset_suite().into_iter().map(|c| c.name).collect();
        if let Some(p) = t.presets.iter().find(|p| !suite.contains(p)) {
            return bad(format!("testbed.presets: unknown preset `{p}`"));
        }
        if t.seeds == 0 || t.budgets.is_empty() {
            return bad("testbed.seeds and testbed.budgets must be non-empty".into());
        }
        if t.budgets.contains(&0) {
            return bad("testbed.budgets entries must be >= 1".into());
        }
        if t.elites == 0 || t.elites > t.population || t.episodes_per_eval == 0 {
            return bad("testbed: need 1 <= elites <= population and episodes_per_eval >= 1".into());
        }
        if self.ground_truth.grid == 0 || self.ground_truth.runs == 0 {
            return bad("ground_truth.grid and ground_truth.runs must be >= 1".into());
        }
        if self.expert.grid == 0 || self.expert.horizon == 0 {
            return bad("expert.grid and expert.horizon must be >= 1".into());
        }
        let v = &self.validation;
        if v.types.is_empty() || v.metrics.is_empty() || v.n_episodes == 0 {
            return bad("validation: types, metrics and n_episodes must be non-empty".into());
        }
        let m = &self.mixture;
        if let Some(l) = m.layers.iter().find(|l| !TAP_LAYERS.contains(&l.as_str())) {
            return bad(format!("mixture.layers: unknown layer `{l}`"));
        }
        if m.layers.is_empty() || m.components.is_empty() || m.components.contains(&0) {
            return bad("mixture: layers and components must be non-empty, components >= 1".into());
        }
        if let Some(&n) = m.components.iter().find(|&&n| n > m.n_activations) {
            return bad(format!("mixture: {n} components exceed n_activations = {}", m.n_activations));
        }
        m.em_config(0).validate().map_err(|e| ConfigError::Invalid(format!("mixture: {e}")))?;
        let b = &self.baselines;
        if b.enabled && (b.critic_episodes == 0 || b.critic.elites == 0 || b.critic.elites > b.critic.population) {
            return bad("baselines: need critic_episodes >= 1 and 1 <= critic.elites <= critic.population".into());
        }
        let a = &self.analysis;
        if a.protocols && (a.sparse_redraws == 0 || a.protocol_components == 0) {
            return bad("analysis: sparse_redraws and protocol_components must be >= 1".into());
        }
        Ok(())
    }
}
