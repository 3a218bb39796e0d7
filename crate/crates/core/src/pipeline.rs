//! The end-to-end pipeline. Each stage reads its inputs from the output
//! directory and writes its results back there, so stages can run one at a
//! time (one CLI subcommand each) or all in order via [`run_pipeline`].
//!
//! Output layout (relative to the output directory):
//!
//! ```text
//! domains/{train,validation-heavy,validation-mild,validation-off}.json, domains/real.json
//! policies/index.json, policies/<id>.weights (+ .key), policies/<id>.json
//! gt/run-<r>.csv, gt/labeled_set.jsonl
//! expert/episodes.jsonl, expert/obs-<set>.txt
//! validation/scores.csv
//! cache/<id>/<layer>/activations.txt, cache/<id>/<layer>/gmm_<n>.json (+ .key)
//! ood/<set>.csv, ood/in-distribution.csv
//! baselines/scores.csv
//! scores/index.csv, scores/<cell>.csv
//! report/{rankings,summary,boxplots,protocols,stability,separability,ood_gap}.csv
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{build_labeled_set, fit_critic, opc, soft_opc, LabeledTransition, LabeledTransitionSet};
use crate::cache::{sha256_hex, Cache, KeyBuilder};
use crate::combiner::ScoreTable;
use crate::config::Config;
use crate::io::{
    self, atomic_write, fmt_f64, fmt_opt, matrix_to_string, parse_matrix, read_json, read_jsonl, read_to_string,
    write_json, write_jsonl, IoError,
};
use crate::matrix::Matrix;
use crate::mixture::{fit_gmm, mean_log_likelihood, ActivationDataset, Gmm, GmmFile};
use crate::policy_net::{collect_activations, MlpPolicy, PolicyManifest, PolicyMeta};
use crate::rank_eval::{
    ground_truth_eval, separability_analysis, sweep_report, BoxSummary, CellKey, GroundTruth, Method, PolicySubset,
    RankingReport, SubsetSummary,
};
use crate::real_probe::ood_score_with;
use crate::seeding;
use crate::sim_validation::{mean_metric, validation_episodes, Metric, ValidationType};
use crate::testbed::{
    collect_protocol, expert_demonstrations, make_domain_sets, preset, rollout_with_source, sample_initial_state,
    train_policy, validation_set_for, DRConfig, DomainParams, DomainRanges, DomainSource, EpisodeRecord, NamedDomain,
    Protocol, TrainerConfig, MILD_SCALE, N_STEPS,
};

/// Bumped when an algorithm change must invalidate cached artifacts.
const CACHE_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    GenDomains,
    Train,
    GtEval,
    ExpertData,
    Validate,
    CollectActs,
    FitGmm,
    OodScore,
    Baselines,
    Combine,
    Report,
}

impl Stage {
    /// Execution order of [`run_pipeline`].
    pub const ALL: [Stage; 11] = [
        Stage::GenDomains,
        Stage::Train,
        Stage::GtEval,
        Stage::ExpertData,
        Stage::Validate,
        Stage::CollectActs,
        Stage::FitGmm,
        Stage::OodScore,
        Stage::Baselines,
        Stage::Combine,
        Stage::Report,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::GenDomains => "gen-domains",
            Stage::Train => "train",
            Stage::GtEval => "gt-eval",
            Stage::ExpertData => "expert-data",
            Stage::Validate => "validate",
            Stage::CollectActs => "collect-acts",
            Stage::FitGmm => "fit-gmm",
            Stage::OodScore => "ood-score",
            Stage::Baselines => "baselines",
            Stage::Combine => "combine",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub struct PipelineError {
    pub stage: Stage,
    /// Offending policy, cell or file, when there is one.
    pub item: Option<String>,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.item {
            Some(item) => write!(f, "stage {} failed at {item}: {}", self.stage, self.message),
            None => write!(f, "stage {} failed: {}", self.stage, self.message),
        }
    }
}

fn fail(stage: Stage, item: impl Into<Option<String>>, e: impl fmt::Display) -> PipelineError {
    PipelineError { stage, item: item.into(), message: e.to_string() }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// An output directory plus the configuration that governs it.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub out: PathBuf,
    pub cfg: Config,
    cache: Cache,
}

/// Everything a sweep-cell or analysis needs to know about one stored policy.
#[derive(Debug, Clone)]
pub struct PolicyEntry {
    pub policy: MlpPolicy<f64>,
    pub manifest: PolicyManifest,
    /// Content key of the weights (the training inputs).
    pub key: String,
    pub source: DomainSource,
}

#[derive(Debug, Clone)]
pub struct Domains {
    pub train: Vec<NamedDomain>,
    pub validation: BTreeMap<ValidationType, Vec<NamedDomain>>,
    pub real: NamedDomain,
}

/// A fixed real-analog observation set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObsSetSpec {
    pub name: String,
    pub protocol: Protocol,
    pub k: usize,
    pub draw: u64,
}

impl ObsSetSpec {
    fn file(&self) -> PathBuf {
        PathBuf::from("expert").join(format!("obs-{}.txt", self.name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodRow {
    pub policy_id: String,
    pub layer: String,
    pub n_components: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodGapRow {
    pub policy_id: String,
    pub dr_config: String,
    pub seed: u64,
    pub layer: String,
    pub n_components: usize,
    pub in_distribution_ll: f64,
    pub real_ll: f64,
}

impl OodGapRow {
    pub fn gap(&self) -> f64 {
        self.in_distribution_ll - self.real_ll
    }
}

/// Results of the report stage.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub ranking: RankingReport,
    pub gt: Vec<GroundTruth>,
    /// Box-plot summary of the VSDR correlations per observation set.
    pub protocols: Vec<(String, BoxSummary)>,
    /// Per-cell standard deviation of the VSDR correlation across sparse re-draws.
    pub stability: Vec<(CellKey, Option<f64>)>,
    pub separability: Vec<SubsetSummary>,
    pub ood_gaps: Vec<OodGapRow>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: ReportBundle,
    pub timings: Vec<(Stage, Duration)>,
}

impl PipelineOutcome {
    pub fn timing(&self, stage: Stage) -> Duration {
        self.timings.iter().find(|(s, _)| *s == stage).map_or(Duration::ZERO, |(_, d)| *d)
    }
}

fn vt_file(t: ValidationType) -> PathBuf {
    PathBuf::from("domains").join(format!("validation-{t}.json"))
}

fn cell_file(cell: &CellKey) -> PathBuf {
    PathBuf::from("scores").join(format!("{}.csv", cell.label()))
}

fn parse_f64(stage: Stage, file: &Path, t: &str) -> Result<f64> {
    t.parse::<f64>().map_err(|e| fail(stage, file.display().to_string(), format!("`{t}`: {e}")))
}

fn parse_opt(stage: Stage, file: &Path, t: &str) -> Result<Option<f64>> {
    if t.is_empty() || t == "NA" {
        Ok(None)
    } else {
        parse_f64(stage, file, t).map(Some)
    }
}

/// Reads a CSV with a known header into field vectors.
fn read_csv(stage: Stage, path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = read_to_string(path).map_err(|e| fail(stage, None, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(fail(stage, path.display().to_string(), format!("expected header `{header}`")));
    }
    let width = header.split(',').count();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<String> = l.split(',').map(str::to_owned).collect();
            if f.len() == width {
                Ok(f)
            } else {
                Err(fail(stage, path.display().to_string(), format!("expected {width} fields in `{l}`")))
            }
        })
        .collect()
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>, cfg: Config) -> Self {
        let out = out.into();
        Self { cache: Cache::new(&out), out, cfg }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    fn write(&self, stage: Stage, rel: impl AsRef<Path>, text: &str) -> Result<()> {
        atomic_write(&self.path(rel), text.as_bytes()).map_err(|e| fail(stage, None, e))
    }

    fn read(&self, stage: Stage, rel: impl AsRef<Path>) -> Result<String> {
        read_to_string(&self.path(rel)).map_err(|e| fail(stage, None, e))
    }

    /// Observation sets this configuration needs: the main one first.
    pub fn observation_sets(&self) -> Vec<ObsSetSpec> {
        let e = &self.cfg.expert;
        let spec = |p: Protocol| ObsSetSpec { name: p.to_string(), protocol: p, k: e.sparse_k, draw: 0 };
        let mut sets = vec![spec(e.protocol)];
        let a = &self.cfg.analysis;
        if a.protocols {
            for p in Protocol::ALL {
                if p != e.protocol {
                    sets.push(spec(p));
                }
            }
            for d in 0..a.sparse_redraws as u64 {
                sets.push(ObsSetSpec {
                    name: format!("sparse-k{}-d{d}", a.stability_k),
                    protocol: Protocol::SparseExpert,
                    k: a.stability_k,
                    draw: d + 1,
                });
            }
        }
        sets
    }

    /// Component counts to fit: the sweep axis plus the analysis size.
    pub fn fitted_components(&self) -> Vec<usize> {
        let mut n = self.cfg.mixture.components.clone();
        if self.cfg.analysis.protocols && !n.contains(&self.cfg.analysis.protocol_components) {
            n.push(self.cfg.analysis.protocol_components);
        }
        n
    }

    /// Sweep cells in report order.
    pub fn expected_cells(&self) -> Vec<CellKey> {
        let c = &self.cfg;
        let mut cells = Vec::new();
        for &validation in &c.validation.types {
            for &metric in &c.validation.metrics {
                for layer in &c.mixture.layers {
                    for &n in &c.mixture.components {
                        cells.push(CellKey {
                            validation,
                            metric,
                            layer: layer.clone(),
                            n_components: n,
                            protocol: c.expert.protocol,
                        });
                    }
                }
            }
        }
        cells
    }

    // ---- domains -------------------------------------------------------

    pub fn gen_domains(&self) -> Result<()> {
        let st = Stage::GenDomains;
        let seed = self.cfg.seed;
        let sets = make_domain_sets(seed, &DomainRanges::heavy(), self.cfg.testbed.out_of_support);
        let w = |rel: PathBuf, v: &dyn erased::Json| -> Result<()> {
            atomic_write(&self.path(&rel), v.to_json().as_bytes()).map_err(|e| fail(st, rel.display().to_string(), e))
        };
        w("domains/train.json".into(), &sets.train)?;
        w("domains/real.json".into(), &sets.real)?;
        w(vt_file(ValidationType::Heavy), &sets.validation)?;
        let mild = DRConfig::mild("mild-validation", 0, MILD_SCALE);
        w(vt_file(ValidationType::Mild), &validation_set_for(&mild, seed))?;
        w(vt_file(ValidationType::Off), &validation_set_for(&DRConfig::off(), seed))?;
        Ok(())
    }

    pub fn load_domains(&self, st: Stage) -> Result<Domains> {
        let r = |rel: &str| self.path(rel);
        let train: Vec<NamedDomain> = read_json(&r("domains/train.json")).map_err(|e| fail(st, None, e))?;
        let real: NamedDomain = read_json(&r("domains/real.json")).map_err(|e| fail(st, None, e))?;
        let mut validation = BTreeMap::new();
        for t in ValidationType::ALL {
            let v: Vec<NamedDomain> = read_json(&self.path(vt_file(t))).map_err(|e| fail(st, None, e))?;
            validation.insert(t, v);
        }
        Ok(Domains { train, validation, real })
    }

    fn train_pool(&self, st: Stage) -> Result<(Arc<Vec<DomainParams>>, String)> {
        let bytes = self.read(st, "domains/train.json")?;
        let train: Vec<NamedDomain> = serde_json::from_str(&bytes).map_err(|e| fail(st, "domains/train.json".to_owned(), e))?;
        Ok((Arc::new(train.into_iter().map(|d| d.params).collect()), sha256_hex(bytes.as_bytes())))
    }

    // ---- training ------------------------------------------------------

    /// One trainer configuration per (preset, seed index), in output order.
    pub fn trainer_configs(&self, pool: Arc<Vec<DomainParams>>) -> Result<Vec<TrainerConfig>> {
        let t = &self.cfg.testbed;
        let mut out = Vec::new();
        for name in self.cfg.preset_names() {
            let dr = preset(&name).ok_or_else(|| fail(Stage::Train, name.clone(), "unknown DR preset"))?;
            for s in 0..t.seeds {
                let mut tc = TrainerConfig::new(dr.clone(), s as u64);
                tc.iterations = self.cfg.budget_for_seed(s);
                tc.population = t.population;
                tc.elites = t.elites;
                tc.episodes_per_eval = t.episodes_per_eval;
                tc.init_std = t.init_std;
                tc.min_std = t.min_std;
                tc.train_pool = Some(pool.clone());
                tc.master_seed = self.cfg.seed;
                out.push(tc);
            }
        }
        Ok(out)
    }

    fn trainer_key(tc: &TrainerConfig, pool_hash: &str) -> String {
        let dr = serde_json::to_string(&tc.dr_config).expect("serializable");
        KeyBuilder::new("policy")
            .add_str(CACHE_VERSION)
            .add_str(&dr)
            .add_str(if tc.dr_config.use_train_pool { pool_hash } else { "" })
            .add_str(&format!(
                "{} {} {} {} {:e} {:e} {} {}",
                tc.population, tc.elites, tc.iterations, tc.episodes_per_eval, tc.init_std, tc.min_std, tc.seed, tc.master_seed
            ))
            .finish()
    }

    pub fn train(&self) -> Result<()> {
        let st = Stage::Train;
        let (pool, pool_hash) = self.train_pool(st)?;
        let configs = self.trainer_configs(pool)?;
        for tc in &configs {
            tc.validate().map_err(|e| fail(st, tc.policy_id(), e))?;
        }
        configs.par_iter().try_for_each(|tc| -> Result<()> {
            let id = tc.policy_id();
            let key = Self::trainer_key(tc, &pool_hash);
            let rel = PathBuf::from("policies").join(format!("{id}.weights"));
            self.cache
                .get_or_compute::<IoError>(&rel, &key, || Ok(train_policy(tc).weights_to_string().into_bytes()))
                .map_err(|e| fail(st, id.clone(), e))?;
            let policy = MlpPolicy::<f64>::zeros(
                id.clone(),
                &crate::policy_net::default_architecture(crate::testbed::OBS_DIM, crate::testbed::HIDDEN_DIM, crate::testbed::ACTION_DIM),
                PolicyMeta { dr_config: tc.dr_config.name.clone(), seed: tc.seed, budget: tc.iterations },
            )
            .map_err(|e| fail(st, id.clone(), e))?;
            write_json(&self.path(format!("policies/{id}.json")), &policy.manifest(&format!("{id}.weights")))
                .map_err(|e| fail(st, id.clone(), e))
        })?;
        let ids: Vec<String> = configs.iter().map(TrainerConfig::policy_id).collect();
        write_json(&self.path("policies/index.json"), &ids).map_err(|e| fail(st, None, e))
    }

    pub fn load_policies(&self, st: Stage) -> Result<Vec<PolicyEntry>> {
        let ids: Vec<String> = read_json(&self.path("policies/index.json")).map_err(|e| fail(st, None, e))?;
        let (pool, _) = self.train_pool(st)?;
        ids.par_iter()
            .map(|id| {
                let manifest: PolicyManifest =
                    read_json(&self.path(format!("policies/{id}.json"))).map_err(|e| fail(st, id.clone(), e))?;
                let wrel = PathBuf::from("policies").join(&manifest.weights_file);
                let text = self.read(st, &wrel)?;
                let key = read_to_string(&self.path(format!("policies/{}.key", manifest.weights_file)))
                    .map_err(|e| fail(st, id.clone(), e))?
                    .trim()
                    .to_owned();
                let meta = PolicyMeta { dr_config: manifest.dr_config.clone(), seed: manifest.seed, budget: manifest.budget };
                let policy = MlpPolicy::from_weights_str(id.clone(), &text, meta).map_err(|e| fail(st, id.clone(), e))?;
                let dr = preset(&manifest.dr_config)
                    .ok_or_else(|| fail(st, id.clone(), format!("unknown DR preset `{}`", manifest.dr_config)))?;
                let source = if dr.use_train_pool { DomainSource::with_pool(dr, pool.clone()) } else { DomainSource::new(dr) };
                Ok(PolicyEntry { policy, manifest, key, source })
            })
            .collect()
    }

    // ---- ground truth --------------------------------------------------

    pub fn gt_eval(&self) -> Result<()> {
        let st = Stage::GtEval;
        let domains = self.load_domains(st)?;
        let entries = self.load_policies(st)?;
        let policies: Vec<MlpPolicy<f64>> = entries.into_iter().map(|e| e.policy).collect();
        let g = &self.cfg.ground_truth;
        let runs = ground_truth_eval(&policies, &domains.real, g.grid, g.runs, self.cfg.seed);
        for run in &runs {
            self.write(st, format!("gt/run-{}.csv", run.truth.run), &run.truth.to_csv())?;
        }
        let pooled: Vec<(String, Vec<EpisodeRecord>)> =
            policies.iter().map(|p| p.id.clone()).zip(runs[0].episodes.iter().cloned()).collect();
        let set = build_labeled_set(&pooled);
        write_jsonl(&self.path("gt/labeled_set.jsonl"), &set.transitions).map_err(|e| fail(st, None, e))
    }

    pub fn load_gt(&self, st: Stage) -> Result<Vec<GroundTruth>> {
        (0..self.cfg.ground_truth.runs)
            .map(|r| {
                let rel = format!("gt/run-{r}.csv");
                GroundTruth::from_csv(r, self.cfg.ground_truth.grid, &self.read(st, &rel)?).map_err(|e| fail(st, rel, e))
            })
            .collect()
    }

    // ---- expert data ---------------------------------------------------

    pub fn expert_data(&self) -> Result<()> {
        let st = Stage::ExpertData;
        let domains = self.load_domains(st)?;
        let e = &self.cfg.expert;
        let episodes = expert_demonstrations(&domains.real, e.grid, e.horizon, self.cfg.seed);
        write_jsonl(&self.path("expert/episodes.jsonl"), &episodes).map_err(|err| fail(st, None, err))?;
        for set in self.observation_sets() {
            let obs = collect_protocol(&episodes, set.protocol, set.k, seeding::derive(&[self.cfg.seed, set.draw]))
                .map_err(|err| fail(st, set.name.clone(), err))?;
            self.write(st, set.file(), &matrix_to_string("observation", &obs))?;
        }
        Ok(())
    }

    fn load_obs(&self, st: Stage, set: &ObsSetSpec) -> Result<Matrix<f64>> {
        io::read_observations(&self.path(set.file())).map_err(|e| fail(st, set.name.clone(), e))
    }

    // ---- simulation validation -----------------------------------------

    pub const VALIDATION_HEADER: &'static str = "policy_id,validation,metric,s";

    pub fn validate(&self) -> Result<()> {
        let st = Stage::Validate;
        let domains = self.load_domains(st)?;
        let entries = self.load_policies(st)?;
        let v = &self.cfg.validation;
        let rows: Vec<String> = entries
            .par_iter()
            .map(|e| -> Result<String> {
                let mut out = String::new();
                for &t in &v.types {
                    let eps = validation_episodes(&e.policy, &domains.validation[&t], v.n_episodes, self.cfg.seed)
                        .map_err(|err| fail(st, e.policy.id.clone(), err))?;
                    for &m in &v.metrics {
                        out.push_str(&format!("{},{t},{m},{}\n", e.policy.id, fmt_f64(mean_metric(&eps, m))));
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        self.write(st, "validation/scores.csv", &format!("{}\n{}", Self::VALIDATION_HEADER, rows.concat()))
    }

    /// `(validation, metric) -> policy -> s`.
    pub fn load_validation(&self, st: Stage) -> Result<HashMap<(ValidationType, Metric), HashMap<String, f64>>> {
        let path = self.path("validation/scores.csv");
        let mut out: HashMap<_, HashMap<String, f64>> = HashMap::new();
        for f in read_csv(st, &path, Self::VALIDATION_HEADER)? {
            let t: ValidationType = f[1].parse().map_err(|e: String| fail(st, path.display().to_string(), e))?;
            let m: Metric = f[2].parse().map_err(|e: String| fail(st, path.display().to_string(), e))?;
            out.entry((t, m)).or_default().insert(f[0].clone(), parse_f64(st, &path, &f[3])?);
        }
        Ok(out)
    }

    // ---- activations and mixtures --------------------------------------

    fn activations_key(&self, e: &PolicyEntry, layer: &str) -> String {
        let pool_hash = match (&e.source.pool, e.source.config.use_train_pool) {
            (Some(pool), true) => sha256_hex(serde_json::to_string(pool.as_ref()).expect("serializable").as_bytes()),
            _ => String::new(),
        };
        KeyBuilder::new("activations")
            .add_str(CACHE_VERSION)
            .add_str(&e.key)
            .add_str(&serde_json::to_string(&e.source.config).expect("serializable"))
            .add_str(&pool_hash)
            .add_str(layer)
            .add_u64(self.cfg.mixture.n_activations as u64)
            .add_u64(self.cfg.seed)
            .finish()
    }

    fn gmm_seed(&self, policy_id: &str, layer: &str, n: usize) -> u64 {
        seeding::derive(&[self.cfg.seed, seeding::hash_str(policy_id), seeding::hash_str(layer), n as u64])
    }

    fn gmm_key(&self, acts_key: &str, policy_id: &str, layer: &str, n: usize) -> String {
        let em = self.cfg.mixture.em_config(self.gmm_seed(policy_id, layer, n));
        KeyBuilder::new("gmm")
            .add_str(CACHE_VERSION)
            .add_str(acts_key)
            .add_u64(n as u64)
            .add_str(&serde_json::to_string(&em).expect("serializable"))
            .finish()
    }

    fn selected<'a>(entries: &'a [PolicyEntry], filter: &Filter) -> Vec<&'a PolicyEntry> {
        entries.iter().filter(|e| filter.policy.as_ref().is_none_or(|p| *p == e.policy.id)).collect()
    }

    fn layers(&self, filter: &Filter) -> Vec<String> {
        self.cfg.mixture.layers.iter().filter(|l| filter.layer.as_ref().is_none_or(|f| f == *l)).cloned().collect()
    }

    pub fn collect_acts(&self, filter: &Filter) -> Result<()> {
        let st = Stage::CollectActs;
        let entries = self.load_policies(st)?;
        let jobs: Vec<(&PolicyEntry, String)> = Self::selected(&entries, filter)
            .into_iter()
            .flat_map(|e| self.layers(filter).into_iter().map(move |l| (e, l)))
            .collect();
        jobs.par_iter().try_for_each(|(e, layer)| -> Result<()> {
            let id = &e.policy.id;
            let item = format!("{id}/{layer}");
            let key = self.activations_key(e, layer);
            self.cache
                .get_or_compute::<Wrapped>(Cache::activations_rel(id, layer), &key, || {
                    let seed = seeding::derive(&[self.cfg.seed, 0xAC7]);
                    let ds = collect_activations(&e.policy, &e.source, self.cfg.mixture.n_activations, layer, seed)
                        .map_err(|err| Wrapped::Stage(fail(st, item.clone(), err)))?;
                    Ok(matrix_to_string(layer, ds.data()).into_bytes())
                })
                .map(|_| ())
                .map_err(|w| w.into_stage(st, &item))
        })
    }

    fn load_acts(&self, st: Stage, e: &PolicyEntry, layer: &str) -> Result<(ActivationDataset<f64>, String)> {
        let rel = Cache::activations_rel(&e.policy.id, layer);
        let key = self.activations_key(e, layer);
        let item = format!("{}/{layer}", e.policy.id);
        if !self.cache.is_fresh(&rel, &key) {
            return Err(fail(st, item, format!("missing or stale input file {} (run collect-acts)", self.path(&rel).display())));
        }
        let path = self.path(&rel);
        let (name, m) = parse_matrix::<f64>(&path, &self.read(st, &rel)?).map_err(|err| fail(st, item.clone(), err))?;
        let ds = ActivationDataset::new(name, m).map_err(|err| fail(st, item, err))?;
        Ok((ds, key))
    }

    pub fn fit_gmms(&self, filter: &Filter) -> Result<()> {
        let st = Stage::FitGmm;
        let entries = self.load_policies(st)?;
        let comps: Vec<usize> =
            self.fitted_components().into_iter().filter(|n| filter.components.is_none_or(|f| f == *n)).collect();
        let jobs: Vec<(&PolicyEntry, String)> = Self::selected(&entries, filter)
            .into_iter()
            .flat_map(|e| self.layers(filter).into_iter().map(move |l| (e, l)))
            .collect();
        jobs.par_iter().try_for_each(|(e, layer)| -> Result<()> {
            let (acts, acts_key) = self.load_acts(st, e, layer)?;
            comps.par_iter().try_for_each(|&n| {
                let id = &e.policy.id;
                let item = format!("{id}/{layer}/n{n}");
                let key = self.gmm_key(&acts_key, id, layer, n);
                self.cache
                    .get_or_compute::<IoError>(Cache::gmm_rel(id, layer, n), &key, || {
                        let em = self.cfg.mixture.em_config(self.gmm_seed(id, layer, n));
                        let g = fit_gmm(&acts, n, &em)?;
                        Ok(gmm_json(&g).into_bytes())
                    })
                    .map(|_| ())
                    .map_err(|err| fail(st, item, err))
            })
        })
    }

    fn load_gmm(&self, st: Stage, e: &PolicyEntry, layer: &str, n: usize, acts_key: &str) -> Result<Gmm<f64>> {
        let rel = Cache::gmm_rel(&e.policy.id, layer, n);
        let item = format!("{}/{layer}/n{n}", e.policy.id);
        if !self.cache.is_fresh(&rel, &self.gmm_key(acts_key, &e.policy.id, layer, n)) {
            return Err(fail(st, item, format!("missing or stale input file {} (run fit-gmm)", self.path(&rel).display())));
        }
        let file: GmmFile = serde_json::from_str(&self.read(st, &rel)?).map_err(|err| fail(st, item.clone(), err))?;
        file.into_gmm().map_err(|err| fail(st, item, err))
    }

    // ---- OOD scores ----------------------------------------------------

    pub const OOD_HEADER: &'static str = "policy_id,layer,n_components,r";
    pub const IN_DIST_HEADER: &'static str = "policy_id,layer,n_components,mean_ll";

    pub fn ood_score(&self) -> Result<()> {
        let st = Stage::OodScore;
        let entries = self.load_policies(st)?;
        let sets = self.observation_sets();
        let obs: Vec<Matrix<f64>> = sets.iter().map(|s| self.load_obs(st, s)).collect::<Result<_>>()?;
        let main_comps = &self.cfg.mixture.components;
        let pc = self.cfg.analysis.protocol_components;
        // Per policy: (main-set rows, per-extra-set rows, in-distribution rows).
        type PolicyRows = (Vec<OodRow>, Vec<Vec<OodRow>>, Vec<OodRow>);
        let per_policy: Vec<PolicyRows> = entries
            .par_iter()
            .map(|e| -> Result<PolicyRows> {
                let mut main = Vec::new();
                let mut extra = vec![Vec::new(); sets.len() - 1];
                let mut in_dist = Vec::new();
                for layer in &self.cfg.mixture.layers {
                    let (acts, acts_key) = self.load_acts(st, e, layer)?;
                    for n in self.fitted_components() {
                        let gmm = self.load_gmm(st, e, layer, n, &acts_key)?;
                        let item = || format!("{}/{layer}/n{n}", e.policy.id);
                        let row = |value| OodRow { policy_id: e.policy.id.clone(), layer: layer.clone(), n_components: n, value };
                        if main_comps.contains(&n) {
                            let r = ood_score_with(&e.policy, &gmm, &obs[0]).map_err(|err| fail(st, item(), err))?;
                            main.push(row(r));
                            let ll = mean_log_likelihood(&gmm, &acts).map_err(|err| fail(st, item(), err))?;
                            in_dist.push(row(ll));
                        }
                        if n == pc {
                            for (k, o) in obs.iter().enumerate().skip(1) {
                                let r = ood_score_with(&e.policy, &gmm, o).map_err(|err| fail(st, item(), err))?;
                                extra[k - 1].push(row(r));
                            }
                        }
                    }
                }
                Ok((main, extra, in_dist))
            })
            .collect::<Result<_>>()?;
        let fmt_rows = |header: &str, rows: &mut dyn Iterator<Item = &OodRow>| {
            let mut s = format!("{header}\n");
            for r in rows {
                s.push_str(&format!("{},{},{},{}\n", r.policy_id, r.layer, r.n_components, fmt_f64(r.value)));
            }
            s
        };
        self.write(st, format!("ood/{}.csv", sets[0].name), &fmt_rows(Self::OOD_HEADER, &mut per_policy.iter().flat_map(|p| &p.0)))?;
        for (k, set) in sets.iter().enumerate().skip(1) {
            let text = fmt_rows(Self::OOD_HEADER, &mut per_policy.iter().flat_map(|p| &p.1[k - 1]));
            self.write(st, format!("ood/{}.csv", set.name), &text)?;
        }
        self.write(st, "ood/in-distribution.csv", &fmt_rows(Self::IN_DIST_HEADER, &mut per_policy.iter().flat_map(|p| &p.2)))
    }

    fn load_ood(&self, st: Stage, file: &str, header: &str) -> Result<HashMap<(String, usize), HashMap<String, f64>>> {
        let path = self.path(format!("ood/{file}.csv"));
        let mut out: HashMap<(String, usize), HashMap<String, f64>> = HashMap::new();
        for f in read_csv(st, &path, header)? {
            let n: usize = f[2].parse().map_err(|e| fail(st, path.display().to_string(), e))?;
            out.entry((f[1].clone(), n)).or_default().insert(f[0].clone(), parse_f64(st, &path, &f[3])?);
        }
        Ok(out)
    }

    // ---- baselines -----------------------------------------------------

    pub const BASELINE_HEADER: &'static str = "policy_id,opc,soft_opc,fit_loss";

    pub fn baselines(&self) -> Result<()> {
        let st = Stage::Baselines;
        if !self.cfg.baselines.enabled {
            return Ok(());
        }
        let entries = self.load_policies(st)?;
        let text = self.read(st, "gt/labeled_set.jsonl")?;
        let labeled_hash = sha256_hex(text.as_bytes());
        let transitions: Vec<LabeledTransition> =
            read_jsonl(&self.path("gt/labeled_set.jsonl")).map_err(|e| fail(st, None, e))?;
        drop(text);
        let data = LabeledTransitionSet { transitions };
        let b = &self.cfg.baselines;
        let rows: Vec<String> = entries
            .par_iter()
            .map(|e| -> Result<String> {
                let id = &e.policy.id;
                let key = KeyBuilder::new("baseline")
                    .add_str(CACHE_VERSION)
                    .add_str(&e.key)
                    .add_str(&labeled_hash)
                    .add_str(&serde_json::to_string(b).expect("serializable"))
                    .add_u64(self.cfg.seed)
                    .finish();
                let rel = PathBuf::from("cache").join(id).join("baseline.csv");
                let (bytes, _) = self
                    .cache
                    .get_or_compute::<Wrapped>(&rel, &key, || {
                        let h = seeding::hash_str(id);
                        let mut ctl = crate::testbed::Agent::controller(&e.policy);
                        let rollouts: Vec<EpisodeRecord> = (0..b.critic_episodes)
                            .map(|i| {
                                let mut rng = seeding::rng_from(&[self.cfg.seed, h, 0xC1, i as u64]);
                                let init = sample_initial_state(&mut rng);
                                rollout_with_source(&mut *ctl, init, &e.source, N_STEPS, &mut rng)
                            })
                            .collect();
                        let critic = fit_critic(id, &rollouts, seeding::derive(&[self.cfg.seed, h, 0xC2]), &b.critic)
                            .map_err(|err| Wrapped::Stage(fail(st, id.clone(), err)))?;
                        let o = opc(&critic, &data).ok();
                        let so = soft_opc(&critic, &data).map_err(|err| Wrapped::Stage(fail(st, id.clone(), err)))?;
                        Ok(format!("{id},{},{},{}\n", fmt_opt(o), fmt_f64(so), fmt_f64(critic.fit_loss)).into_bytes())
                    })
                    .map_err(|w| w.into_stage(st, id))?;
                String::from_utf8(bytes).map_err(|err| fail(st, id.clone(), err))
            })
            .collect::<Result<_>>()?;
        self.write(st, "baselines/scores.csv", &format!("{}\n{}", Self::BASELINE_HEADER, rows.concat()))
    }

    /// `policy -> (opc, soft_opc)`; `None` when baselines are disabled.
    pub fn load_baselines(&self, st: Stage) -> Result<Option<HashMap<String, (Option<f64>, Option<f64>)>>> {
        if !self.cfg.baselines.enabled {
            return Ok(None);
        }
        let path = self.path("baselines/scores.csv");
        let mut out = HashMap::new();
        for f in read_csv(st, &path, Self::BASELINE_HEADER)? {
            out.insert(f[0].clone(), (parse_opt(st, &path, &f[1])?, parse_opt(st, &path, &f[2])?));
        }
        Ok(Some(out))
    }

    // ---- fusion --------------------------------------------------------

    pub const SCORE_INDEX_HEADER: &'static str = "validation,metric,layer,n_components,protocol,file";

    pub fn combine(&self) -> Result<()> {
        let st = Stage::Combine;
        let ids: Vec<String> = read_json(&self.path("policies/index.json")).map_err(|e| fail(st, None, e))?;
        let val = self.load_validation(st)?;
        let main = self.observation_sets().remove(0);
        let ood = self.load_ood(st, &main.name, Self::OOD_HEADER)?;
        let base = self.load_baselines(st)?;
        let column = |f: &dyn Fn(&(Option<f64>, Option<f64>)) -> Option<f64>| -> Option<Vec<f64>> {
            let b = base.as_ref()?;
            ids.iter().map(|id| b.get(id).and_then(f)).collect()
        };
        let opc_col = column(&|b| b.0);
        let soft_col = column(&|b| b.1);
        let mut index = format!("{}\n", Self::SCORE_INDEX_HEADER);
        for cell in self.expected_cells() {
            let label = cell.label();
            let lookup = |m: Option<&HashMap<String, f64>>, what: &str| -> Result<Vec<f64>> {
                let m = m.ok_or_else(|| fail(st, label.clone(), format!("no {what} scores")))?;
                ids.iter()
                    .map(|id| m.get(id).copied().ok_or_else(|| fail(st, format!("{label}/{id}"), format!("no {what} score"))))
                    .collect()
            };
            let s = lookup(val.get(&(cell.validation, cell.metric)), "validation")?;
            let r = lookup(ood.get(&(cell.layer.clone(), cell.n_components)), "OOD")?;
            let table = ScoreTable::build(label.clone(), &ids, &s, &r, opc_col.as_deref(), soft_col.as_deref())
                .map_err(|e| fail(st, label.clone(), e))?;
            let file = cell_file(&cell);
            self.write(st, &file, &table.to_csv())?;
            index.push_str(&format!("{},{}\n", cell.csv_prefix(), file.display()));
        }
        self.write(st, "scores/index.csv", &index)
    }

    // ---- report --------------------------------------------------------

    pub fn report(&self) -> Result<ReportBundle> {
        let st = Stage::Report;
        // The index is written last by `combine`; its absence means combine never ran.
        let index_path = self.path("scores/index.csv");
        let listed: Vec<String> =
            read_csv(st, &index_path, Self::SCORE_INDEX_HEADER)?.into_iter().map(|f| f[5].clone()).collect();
        let gt = self.load_gt(st)?;
        let expected = self.expected_cells();
        let mut tables = Vec::new();
        for cell in &expected {
            let file = cell_file(cell);
            if !listed.contains(&file.display().to_string()) || !self.path(&file).exists() {
                continue;
            }
            let t = ScoreTable::from_csv(cell.label(), &self.read(st, &file)?).map_err(|e| fail(st, cell.label(), e))?;
            tables.push((cell.clone(), t));
        }
        let ranking = sweep_report(&tables, &expected, &gt).map_err(|e| fail(st, None, e))?;
        self.write(st, "report/rankings.csv", &ranking.rankings_csv())?;
        self.write(st, "report/summary.csv", &ranking.summary_csv())?;

        let mut box_csv = format!("{}\n", BoxSummary::CSV_HEADER);
        for m in Method::ALL {
            let rhos: Vec<Option<f64>> = ranking.rows.iter().filter(|r| r.method == m).map(|r| r.rho).collect();
            box_csv.push_str(&BoxSummary::of(&rhos).csv_row("method", &m.to_string(), rhos.len()));
            for &t in &self.cfg.validation.types {
                let rhos: Vec<Option<f64>> =
                    ranking.rows.iter().filter(|r| r.method == m && r.cell.validation == t).map(|r| r.rho).collect();
                box_csv.push_str(&BoxSummary::of(&rhos).csv_row("method-by-validation", &format!("{m}@{t}"), rhos.len()));
            }
        }
        self.write(st, "report/boxplots.csv", &box_csv)?;

        let ood_gaps = self.ood_gaps(st)?;
        let mut gap_csv = String::from("policy_id,dr_config,seed,layer,n_components,in_distribution_ll,real_ll,gap\n");
        for g in &ood_gaps {
            gap_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                g.policy_id,
                g.dr_config,
                g.seed,
                g.layer,
                g.n_components,
                fmt_f64(g.in_distribution_ll),
                fmt_f64(g.real_ll),
                fmt_f64(g.gap())
            ));
        }
        self.write(st, "report/ood_gap.csv", &gap_csv)?;

        let (protocols, stability) = if self.cfg.analysis.protocols { self.protocol_analyses(st, &gt[0])? } else { (vec![], vec![]) };
        let separability = if self.cfg.analysis.separability { self.separability(st, &tables, &gt[0])? } else { vec![] };
        Ok(ReportBundle { ranking, gt, protocols, stability, separability, ood_gaps })
    }

    fn ood_gaps(&self, st: Stage) -> Result<Vec<OodGapRow>> {
        let ids: Vec<String> = read_json(&self.path("policies/index.json")).map_err(|e| fail(st, None, e))?;
        let main = self.observation_sets().remove(0);
        let real = self.load_ood(st, &main.name, Self::OOD_HEADER)?;
        let in_dist = self.load_ood(st, "in-distribution", Self::IN_DIST_HEADER)?;
        let mut rows = Vec::new();
        for id in &ids {
            let manifest: PolicyManifest =
                read_json(&self.path(format!("policies/{id}.json"))).map_err(|e| fail(st, id.clone(), e))?;
            for layer in &self.cfg.mixture.layers {
                for &n in &self.cfg.mixture.components {
                    let key = (layer.clone(), n);
                    let get = |m: &HashMap<(String, usize), HashMap<String, f64>>| {
                        m.get(&key).and_then(|v| v.get(id)).copied().ok_or_else(|| fail(st, format!("{id}/{layer}/n{n}"), "missing OOD row"))
                    };
                    rows.push(OodGapRow {
                        policy_id: id.clone(),
                        dr_config: manifest.dr_config.clone(),
                        seed: manifest.seed,
                        layer: layer.clone(),
                        n_components: n,
                        in_distribution_ll: get(&in_dist)?,
                        real_ll: get(&real)?,
                    });
                }
            }
        }
        Ok(rows)
    }

    /// VSDR correlation for each (validation, metric, layer) cell at the analysis
    /// mixture size, using the OOD scores of observation set `set`.
    fn analysis_rhos(
        &self,
        st: Stage,
        set: &ObsSetSpec,
        ids: &[String],
        val: &HashMap<(ValidationType, Metric), HashMap<String, f64>>,
        gt: &GroundTruth,
    ) -> Result<Vec<(CellKey, Option<f64>)>> {
        let ood = self.load_ood(st, &set.name, Self::OOD_HEADER)?;
        let n = self.cfg.analysis.protocol_components;
        let mut out = Vec::new();
        for &t in &self.cfg.validation.types {
            for &m in &self.cfg.validation.metrics {
                for layer in &self.cfg.mixture.layers {
                    let cell = CellKey { validation: t, metric: m, layer: layer.clone(), n_components: n, protocol: set.protocol };
                    let item = format!("{}/{}", set.name, cell.label());
                    let pick = |map: Option<&HashMap<String, f64>>| -> Result<Vec<f64>> {
                        let map = map.ok_or_else(|| fail(st, item.clone(), "missing scores"))?;
                        ids.iter().map(|id| map.get(id).copied().ok_or_else(|| fail(st, format!("{item}/{id}"), "missing score"))).collect()
                    };
                    let s = pick(val.get(&(t, m)))?;
                    let r = pick(ood.get(&(layer.clone(), n)))?;
                    let table = ScoreTable::build(cell.label(), ids, &s, &r, None, None).map_err(|e| fail(st, item.clone(), e))?;
                    let rho = crate::rank_eval::method_rho(&table, Method::Vsdr, gt, m).map_err(|e| fail(st, item.clone(), e))?;
                    out.push((cell, rho));
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn protocol_analyses(
        &self,
        st: Stage,
        gt: &GroundTruth,
    ) -> Result<(Vec<(String, BoxSummary)>, Vec<(CellKey, Option<f64>)>)> {
        let ids: Vec<String> = read_json(&self.path("policies/index.json")).map_err(|e| fail(st, None, e))?;
        let val = self.load_validation(st)?;
        let sets = self.observation_sets();
        let mut summaries = Vec::new();
        let mut csv = format!("{}\n", BoxSummary::CSV_HEADER);
        for p in Protocol::ALL {
            let set = sets.iter().find(|s| s.protocol == p && s.draw == 0).expect("all protocols present");
            let rhos = self.analysis_rhos(st, set, &ids, &val, gt)?;
            let vals: Vec<Option<f64>> = rhos.iter().map(|(_, r)| *r).collect();
            let b = BoxSummary::of(&vals);
            csv.push_str(&b.csv_row("protocol", &p.to_string(), ids.len()));
            summaries.push((p.to_string(), b));
        }
        self.write(st, "report/protocols.csv", &csv)?;

        let draws: Vec<Vec<(CellKey, Option<f64>)>> = sets
            .iter()
            .filter(|s| s.draw > 0)
            .map(|s| self.analysis_rhos(st, s, &ids, &val, gt))
            .collect::<Result<_>>()?;
        let per_draw: Vec<Vec<Option<f64>>> = draws.iter().map(|d| d.iter().map(|(_, r)| *r).collect()).collect();
        let stds = crate::rank_eval::resample_stability(&per_draw);
        let cells: Vec<CellKey> = draws.first().map(|d| d.iter().map(|(c, _)| c.clone()).collect()).unwrap_or_default();
        let mut csv = String::from("validation,metric,layer,n_components,protocol,draws,k,rho_std\n");
        for (c, s) in cells.iter().zip(&stds) {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                c.csv_prefix(),
                draws.len(),
                self.cfg.analysis.stability_k,
                fmt_opt(*s)
            ));
        }
        self.write(st, "report/stability.csv", &csv)?;
        Ok((summaries, cells.into_iter().zip(stds).collect()))
    }

    /// Nested subsets: all seeds, then fewer seeds, then one policy per DR family.
    pub fn separability_subsets(&self, ids: &[String], manifests: &[PolicyManifest]) -> Vec<PolicySubset> {
        let mut subsets = vec![PolicySubset { name: "all".into(), policy_ids: ids.to_vec() }];
        let seeds = self.cfg.testbed.seeds as u64;
        for keep in (1..seeds).rev() {
            subsets.push(PolicySubset {
                name: format!("seeds<{keep}"),
                policy_ids: manifests.iter().filter(|m| m.seed < keep).map(|m| m.id.clone()).collect(),
            });
        }
        let family = |name: &str| -> String {
            match name.rsplit_once('-') {
                Some((head, _)) if name.starts_with("heavy-freq") || name.starts_with("mild-freq") => head.to_owned(),
                _ if name.starts_with("heavy-wide") => "heavy-wide".to_owned(),
                _ => name.to_owned(),
            }
        };
        let mut seen = Vec::new();
        let mut distinct = Vec::new();
        for m in manifests.iter().filter(|m| m.seed == 0) {
            let f = family(&m.dr_config);
            if !seen.contains(&f) {
                seen.push(f);
                distinct.push(m.id.clone());
            }
        }
        subsets.push(PolicySubset { name: "seeds<1,similar-removed".into(), policy_ids: distinct });
        subsets
    }

    fn separability(&self, st: Stage, tables: &[(CellKey, ScoreTable)], gt: &GroundTruth) -> Result<Vec<SubsetSummary>> {
        let ids: Vec<String> = read_json(&self.path("policies/index.json")).map_err(|e| fail(st, None, e))?;
        let manifests: Vec<PolicyManifest> = ids
            .iter()
            .map(|id| read_json(&self.path(format!("policies/{id}.json"))).map_err(|e| fail(st, id.clone(), e)))
            .collect::<Result<_>>()?;
        let subsets = self.separability_subsets(&ids, &manifests);
        let eval = |idx: &[usize]| -> Vec<Option<f64>> {
            tables
                .iter()
                .map(|(cell, t)| {
                    let rows = idx.iter().filter_map(|&i| t.rows.iter().find(|r| r.policy_id == ids[i])).collect::<Vec<_>>();
                    let sub_ids: Vec<String> = rows.iter().map(|r| r.policy_id.clone()).collect();
                    let s: Vec<f64> = rows.iter().map(|r| r.s).collect();
                    let r: Vec<f64> = rows.iter().map(|r| r.r).collect();
                    let sub = ScoreTable::build(cell.label(), &sub_ids, &s, &r, None, None).ok()?;
                    crate::rank_eval::method_rho(&sub, Method::Vsdr, gt, cell.metric).ok().flatten()
                })
                .collect()
        };
        let out = separability_analysis(&subsets, &ids, eval).map_err(|e| fail(st, None, e))?;
        let mut csv = format!("{}\n", BoxSummary::CSV_HEADER);
        for s in &out {
            csv.push_str(&s.summary.csv_row("separability", &s.name, s.size));
        }
        self.write(st, "report/separability.csv", &csv)?;
        Ok(out)
    }
}

/// Error carrier for cached computations that can fail in non-I/O ways.
enum Wrapped {
    Io(IoError),
    Stage(PipelineError),
}

impl From<IoError> for Wrapped {
    fn from(e: IoError) -> Self {
        Wrapped::Io(e)
    }
}

impl Wrapped {
    fn into_stage(self, st: Stage, item: &str) -> PipelineError {
        match self {
            Wrapped::Io(e) => fail(st, item.to_owned(), e),
            Wrapped::Stage(e) => e,
        }
    }
}

/// Restricts the per-policy stages to a subset of their work.
#[derive(Debug, Clone, Default)]
pub struct Filter {
    pub policy: Option<String>,
    pub layer: Option<String>,
    pub components: Option<usize>,
}

pub fn gmm_json(g: &Gmm<f64>) -> String {
    let mut s = serde_json::to_string_pretty(&GmmFile::from(g)).expect("serializable");
    s.push('\n');
    s
}

/// Runs every stage in order. Stages reuse cached artifacts, so a rerun with
/// an unchanged configuration recomputes nothing expensive and rewrites
/// byte-identical outputs.
pub fn run_pipeline(ws: &Workspace) -> Result<PipelineOutcome> {
    ws.cfg.validate().map_err(|e| fail(Stage::GenDomains, "config".to_owned(), e))?;
    atomic_write(&ws.path("config.toml"), ws.cfg.to_toml().as_bytes()).map_err(|e| fail(Stage::GenDomains, None, e))?;
    let all = Filter::default();
    let mut timings = Vec::new();
    let mut report = None;
    for stage in Stage::ALL {
        let t = Instant::now();
        match stage {
            Stage::GenDomains => ws.gen_domains()?,
            Stage::Train => ws.train()?,
            Stage::GtEval => ws.gt_eval()?,
            Stage::ExpertData => ws.expert_data()?,
            Stage::Validate => ws.validate()?,
            Stage::CollectActs => ws.collect_acts(&all)?,
            Stage::FitGmm => ws.fit_gmms(&all)?,
            Stage::OodScore => ws.ood_score()?,
            Stage::Baselines => ws.baselines()?,
            Stage::Combine => ws.combine()?,
            Stage::Report => report = Some(ws.report()?),
        }
        timings.push((stage, t.elapsed()));
    }
    Ok(PipelineOutcome { report: report.expect("report stage ran"), timings })
}

/// Runs the pipeline on a dedicated thread pool of `jobs` workers (0 = all cores).
pub fn run_pipeline_with_jobs(ws: &Workspace, jobs: usize) -> Result<PipelineOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| fail(Stage::GenDomains, "thread pool".to_owned(), e))?;
    pool.install(|| run_pipeline(ws))
}

mod erased {
    /// Object-safe JSON serialization for the heterogeneous domain files.
    pub trait Json {
        fn to_json(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> String {
            let mut s = serde_json::to_string_pretty(self).expect("serializable");
            s.push('\n');
            s
        }
    }
}
