use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vsdr::cache::{sha256_hex, KeyBuilder};
use vsdr::io::read_activations;
use vsdr::mixture::fit_gmm;
use vsdr::pipeline::{gmm_json, Filter, PipelineError, Workspace};
use vsdr::{seeding, Config};

#[derive(Debug, Parser)]
#[command(name = "vsdr", version, about = "Rank sim-trained policies for real-world transfer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Master seed; overrides the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory holding every artifact and the cache.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML configuration file. Defaults to `<out>/config.toml` when present.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named configuration: default, paper-analog, acceptance or minimal.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the training pool, validation sets and the real-analog domain.
    GenDomains,
    /// Train the policy population.
    Train,
    /// Ground-truth evaluation on the real-analog domain.
    GtEval,
    /// Collect expert demonstrations and the real observation sets.
    ExpertData,
    /// Simulation validation scores.
    Validate,
    /// Record layer activations on training-distribution observations.
    CollectActs(Selection),
    /// Fit Gaussian mixtures to recorded activations.
    FitGmm(FitGmm),
    /// Score each policy's real observations under its mixtures.
    OodScore,
    /// Fuse validation and OOD scores into per-cell score tables.
    Combine,
    /// Off-policy classification baselines.
    Baselines,
    /// Rank correlations against ground truth and the analyses.
    Report,
    /// Run every stage in order.
    Pipeline,
}

#[derive(Debug, Args)]
struct Selection {
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    layer: Option<String>,
}

#[derive(Debug, Args)]
struct FitGmm {
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    layer: Option<String>,
    #[arg(long)]
    components: Option<usize>,
    /// Fit this activation file directly instead of the cached activations.
    #[arg(long, requires_all = ["layer", "components"])]
    activations: Option<PathBuf>,
}

fn load_config(c: &Common) -> anyhow::Result<Config> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(name)) => Config::preset(name)?,
        (None, None) => {
            let saved = c.out.join("config.toml");
            if saved.exists() {
                Config::load(&saved)?
            } else {
                Config::default()
            }
        }
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Fits one mixture to an explicit activation file and stores it in the cache
/// under `cache/<policy>/<layer>/gmm_<n>.json`.
fn fit_file(ws: &Workspace, file: &Path, policy: &str, layer: &str, n: usize) -> anyhow::Result<PathBuf> {
    let text = std::fs::read(file).with_context(|| format!("missing input file {}", file.display()))?;
    let acts = read_activations::<f64>(file)?;
    let em = ws.cfg.mixture.em_config(seeding::derive(&[ws.cfg.seed, seeding::hash_str(policy), n as u64]));
    let gmm = fit_gmm(&acts, n, &em)?;
    let key = KeyBuilder::new("gmm-file")
        .add_str(&sha256_hex(&text))
        .add_u64(n as u64)
        .add_str(&serde_json::to_string(&em)?)
        .finish();
    let rel = vsdr::cache::Cache::gmm_rel(policy, layer, n);
    ws.cache().put(&rel, &key, gmm_json(&gmm).as_bytes())?;
    Ok(ws.path(rel))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.common)?;
    let ws = Workspace::new(&cli.common.out, cfg);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.common.jobs).build()?;
    pool.install(|| -> anyhow::Result<()> {
        match cli.command {
            Command::GenDomains => {
                std::fs::create_dir_all(&ws.out)?;
                vsdr::io::atomic_write(&ws.path("config.toml"), ws.cfg.to_toml().as_bytes())?;
                ws.gen_domains()?
            }
            Command::Train => ws.train()?,
            Command::GtEval => ws.gt_eval()?,
            Command::ExpertData => ws.expert_data()?,
            Command::Validate => ws.validate()?,
            Command::CollectActs(s) => ws.collect_acts(&Filter { policy: s.policy, layer: s.layer, components: None })?,
            Command::FitGmm(f) => match f.activations {
                Some(file) => {
                    let (Some(layer), Some(n)) = (f.layer, f.components) else {
                        bail!("--activations requires --layer and --components");
                    };
                    let policy = f.policy.unwrap_or_else(|| "adhoc".to_owned());
                    let path = fit_file(&ws, &file, &policy, &layer, n)?;
                    println!("{}", path.display());
                }
                None => ws.fit_gmms(&Filter { policy: f.policy, layer: f.layer, components: f.components })?,
            },
            Command::OodScore => ws.ood_score()?,
            Command::Combine => ws.combine()?,
            Command::Baselines => ws.baselines()?,
            Command::Report => {
                let r = ws.report()?;
                print_summary(&r.ranking);
            }
            Command::Pipeline => {
                let outcome = vsdr::run_pipeline(&ws)?;
                for (stage, d) in &outcome.timings {
                    eprintln!("{:<12} {:>8.1}s", stage.to_string(), d.as_secs_f64());
                }
                print_summary(&outcome.report.ranking);
            }
        }
        Ok(())
    })
}

fn print_summary(r: &vsdr::rank_eval::RankingReport) {
    for w in &r.win_rates {
        println!("vsdr beats {:<14} {:>4}/{:<4} cells", w.versus.to_string(), w.wins, w.compared);
    }
    if !r.missing.is_empty() {
        println!("missing cells: {}", r.missing.len());
    }
}

/// One JSON object per failure so scripts can parse it.
fn error_line(e: &anyhow::Error) -> String {
    match e.downcast_ref::<PipelineError>() {
        Some(p) => json!({ "error": p.message, "stage": p.stage.to_string(), "item": p.item }).to_string(),
        None => json!({ "error": format!("{e:#}") }).to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind().to_string(), "stage": "args" }));
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
