//! Acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! The expensive criteria share one `paper-analog` pipeline run whose cache
//! lives under the cargo target directory, so reruns only redo the report.
//! Set `VSDR_ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero exit.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use vsdr::combiner::{minmax_normalize, vsdr_scores};
use vsdr::mixture::{fit_gmm_traced, ActivationDataset, EmConfig, Gmm};
use vsdr::pipeline::{run_pipeline, PipelineOutcome, Stage, Workspace};
use vsdr::policy_net::{default_architecture, MlpPolicy, PolicyMeta};
use vsdr::rank_eval::{CellKey, Method};
use vsdr::sim_validation::{metrics_of_steps, validation_episodes, Metric};
use vsdr::testbed::*;
use vsdr::{seeding, spearman, Config, Matrix};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, name: &'static str, pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { id, name, pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// Oracles

/// Average ranks by counting (rank 1 = largest), then textbook Pearson.
fn oracle_spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let greater = v.iter().filter(|y| *y > x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                greater + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Policy order by descending score, ties broken by index.
fn ranking(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
    idx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Property criteria

fn c1_em() -> Verdict {
    let start = Instant::now();
    let mut rng = seeding::rng_from(&[2024]);
    let lo = Normal::new(-5.0, 0.5).unwrap();
    let hi = Normal::new(5.0, 0.5).unwrap();
    let mut rows: Vec<Vec<f64>> = (0..200).map(|_| vec![lo.sample(&mut rng)]).collect();
    rows.extend((0..200).map(|_| vec![hi.sample(&mut rng)]));
    let data = ActivationDataset::from_rows("x", &rows).unwrap();
    let out = fit_gmm_traced(&data, 2, &EmConfig { rng_seed: 1, ..EmConfig::default() }).unwrap();
    let elapsed = start.elapsed();

    let mut means: Vec<f64> = (0..2).map(|k| out.gmm.means()[(k, 0)]).collect();
    means.sort_by(f64::total_cmp);
    let means_ok = (means[0] + 5.0).abs() < 0.2 && (means[1] - 5.0).abs() < 0.2;
    let worst_drop = out
        .restarts
        .iter()
        .flat_map(|t| t.log_likelihoods.windows(2).map(|w| w[0] - w[1]))
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = worst_drop <= 1e-7;
    let fast = elapsed < Duration::from_secs(1);
    verdict(
        1,
        "EM correctness",
        means_ok && monotone && fast,
        format!("means {:.4} {:.4}, worst LL drop {worst_drop:.2e}, {:.0} ms", means[0], means[1], elapsed.as_secs_f64() * 1e3),
    )
}

fn c2_density() -> Verdict {
    let mut worst_int: f64 = 0.0;
    let mut worst_mode: f64 = 0.0;
    for (mu, var) in [(0.0f64, 1.0f64), (3.0, 0.25), (-2.0, 9.0)] {
        let g = Gmm::new("x", vec![1.0], Matrix::from_rows(&[vec![mu]]).unwrap(), Matrix::from_rows(&[vec![var]]).unwrap())
            .unwrap();
        let sigma = var.sqrt();
        let (a, b) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |x: f64| g.log_likelihood(&[x]).unwrap().exp();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        worst_int = worst_int.max((s * h / 3.0 - 1.0).abs());
        let mode = g.log_likelihood(&[mu]).unwrap();
        worst_mode = worst_mode.max((mode + 0.5 * (2.0 * std::f64::consts::PI * var).ln()).abs());
    }
    verdict(
        2,
        "density sanity",
        worst_int < 1e-3 && worst_mode < 1e-9,
        format!("integral error {worst_int:.2e}, mode error {worst_mode:.2e}"),
    )
}

fn c3_spearman() -> Verdict {
    let mut rng = seeding::rng_from(&[33]);
    let mut worst: f64 = 0.0;
    let mut na_mismatch = 0;
    for _ in 0..1000 {
        // Draw from a small value set so ties are common.
        let levels = rng.random_range(2..8);
        let a: Vec<f64> = (0..10).map(|_| rng.random_range(0..levels) as f64).collect();
        let b: Vec<f64> = (0..10).map(|_| rng.random_range(0..levels) as f64 * 0.5 - 1.0).collect();
        match (spearman(&a, &b).unwrap(), oracle_spearman(&a, &b)) {
            (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
            (None, None) => {}
            _ => na_mismatch += 1,
        }
    }
    let base = [0.3, -1.2, 4.5, 2.0];
    let mut perm = [0usize, 1, 2, 3];
    let mut total = 0.0;
    let mut count = 0;
    // Heap's algorithm over all 24 orderings.
    let mut c = [0usize; 4];
    let mut visit = |p: &[usize; 4]| {
        let q: Vec<f64> = p.iter().map(|&i| base[i]).collect();
        total += spearman(&base, &q).unwrap().unwrap();
        count += 1;
    };
    visit(&perm);
    let mut i = 0;
    while i < 4 {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let mean = total / count as f64;
    verdict(
        3,
        "Spearman oracle",
        worst < 1e-12 && na_mismatch == 0 && count == 24 && mean.abs() < 1e-12,
        format!("max |diff| {worst:.1e} over 1000 pairs, NA mismatches {na_mismatch}, mean over {count} perms {mean:.1e}"),
    )
}

fn c4_fusion() -> Verdict {
    let mm_ok = minmax_normalize(&[2.0, 4.0, 6.0]).unwrap() == vec![0.0, 0.5, 1.0];
    let mut rng = seeding::rng_from(&[44]);
    let mut affine_bad = 0;
    let mut constant_bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(3..40);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..0.0)).collect();
        let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0));
        let (c, d) = (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0));
        let s2: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let r2: Vec<f64> = r.iter().map(|x| c * x + d).collect();
        if ranking(&vsdr_scores(&s, &r).unwrap()) != ranking(&vsdr_scores(&s2, &r2).unwrap()) {
            affine_bad += 1;
        }
        let k = rng.random_range(-20.0..20.0);
        if ranking(&vsdr_scores(&s, &vec![k; n]).unwrap()) != ranking(&s) {
            constant_bad += 1;
        }
    }
    verdict(
        4,
        "fusion identities",
        mm_ok && affine_bad == 0 && constant_bad == 0,
        format!("minmax ok {mm_ok}, affine rank mismatches {affine_bad}/100, constant-R mismatches {constant_bad}/100"),
    )
}

fn c10_metric_logic() -> Verdict {
    // Exhaustive over every 20-step met/unmet pattern.
    let mut steps: Vec<Step> = (0..N_STEPS)
        .map(|t| Step { obs: Vec::new(), action: [0.0; 3], reward: -1.0, done: t + 1 == N_STEPS, goal_met: false })
        .collect();
    let mut table_bad = 0u32;
    for mask in 0u32..(1 << N_STEPS) {
        let met: Vec<bool> = (0..N_STEPS).map(|t| mask >> t & 1 == 1).collect();
        for (s, &m) in steps.iter_mut().zip(&met) {
            s.goal_met = m;
        }
        let m = metrics_of_steps(&steps);
        let success = mask != 0;
        // Strict: some step t where the goal holds from t to the end.
        let strict = (0..N_STEPS).any(|t| met[t..].iter().all(|&x| x));
        if m.success != success || m.strict_success != strict {
            table_bad += 1;
        }
    }
    let mut final_only = vec![false; N_STEPS];
    final_only[N_STEPS - 1] = true;
    let mut then_lost = vec![false; N_STEPS];
    then_lost[5..12].iter_mut().for_each(|v| *v = true);
    let case = |met: &[bool]| {
        let s: Vec<Step> = met
            .iter()
            .enumerate()
            .map(|(t, &m)| Step { obs: Vec::new(), action: [0.0; 3], reward: 0.0, done: t + 1 == met.len(), goal_met: m })
            .collect();
        let m = metrics_of_steps(&s);
        (m.success, m.strict_success)
    };
    let named_ok = case(&final_only) == (true, true) && case(&then_lost) == (true, false);

    // Strict implies success over randomized rollouts.
    let arch = default_architecture(OBS_DIM, HIDDEN_DIM, ACTION_DIM);
    let domains = make_domain_sets(10, &DomainRanges::heavy(), false).validation;
    let mut n_eps = 0;
    let mut implication_bad = 0;
    for seed in 0..8u64 {
        let p = MlpPolicy::random(format!("r{seed}"), &arch, PolicyMeta::default(), &mut seeding::rng_from(&[seed])).unwrap();
        for e in validation_episodes(&p, &domains, 50, seed).unwrap() {
            n_eps += 1;
            if e.strict_success && !e.success {
                implication_bad += 1;
            }
        }
    }
    verdict(
        10,
        "metric logic",
        table_bad == 0 && named_ok && implication_bad == 0,
        format!(
            "{} patterns, {table_bad} wrong; named cases ok {named_ok}; strict=>success violated {implication_bad}/{n_eps}",
            1u32 << N_STEPS
        ),
    )
}

// ---------------------------------------------------------------------------
// Pipeline criteria

struct AnalogRun {
    outcome: PipelineOutcome,
    cold: bool,
}

fn analog_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-paper-analog")
}

fn analog_run() -> AnalogRun {
    let dir = analog_dir();
    let cold = !dir.join("policies").exists();
    let ws = Workspace::new(&dir, Config::preset("paper-analog").unwrap());
    let outcome = run_pipeline(&ws).expect("paper-analog pipeline");
    AnalogRun { outcome, cold }
}

fn runtime_note(run: &AnalogRun, stages: &[Stage], limit: Duration) -> (bool, String) {
    let t: Duration = stages.iter().map(|&s| run.outcome.timing(s)).sum();
    if run.cold {
        (t < limit, format!("{:.0} s (limit {} s)", t.as_secs_f64(), limit.as_secs()))
    } else {
        (true, format!("cached rerun, runtime not re-measured (delete {} to time it)", analog_dir().display()))
    }
}

fn c5_ceiling(run: &AnalogRun) -> Verdict {
    let r = &run.outcome.report.ranking;
    let get = |m: Metric| r.ceiling.iter().find(|(x, _)| *x == m).and_then(|(_, v)| *v);
    let (rw, su, st) = (get(Metric::Reward), get(Metric::Success), get(Metric::StrictSuccess));
    let ok = |v: Option<f64>, t: f64| v.is_some_and(|x| x >= t);
    let (fast, timing) = runtime_note(run, &[Stage::GenDomains, Stage::Train, Stage::GtEval], Duration::from_secs(300));
    let n = run.outcome.report.gt[0].policy_ids.len();
    let fmt = |v: Option<f64>| v.map_or("NA".into(), |x| format!("{x:.4}"));
    verdict(
        5,
        "ground-truth ceiling",
        n >= 20 && ok(rw, 0.90) && ok(su, 0.85) && ok(st, 0.85) && fast,
        format!(
            "{n} policies; reward {} (>=0.90), success {} (>=0.85), strict-success {} (>=0.85); {timing}",
            fmt(rw),
            fmt(su),
            fmt(st)
        ),
    )
}

fn c6_components(run: &AnalogRun) -> Verdict {
    let r = &run.outcome.report.ranking;
    let cells = r.cells();
    let wins = |m: Method| {
        let w = r.win_rate(m).unwrap();
        (w.wins, w.compared)
    };
    let (ws, ns) = wins(Method::SimOnly);
    let (wo, no) = wins(Method::OodOnly);
    let frac = |w: usize, n: usize| w as f64 / n.max(1) as f64;
    let (fast, timing) = runtime_note(run, &Stage::ALL, Duration::from_secs(1800));
    verdict(
        6,
        "VSDR beats components",
        cells.len() == 60 && ns == 60 && no == 60 && frac(ws, ns) >= 0.6 && frac(wo, no) >= 0.6 && fast,
        format!(
            "{} cells; vs sim-only {ws}/{ns} ({:.0}%), vs OOD-only {wo}/{no} ({:.0}%), need 60%; {timing}",
            cells.len(),
            100.0 * frac(ws, ns),
            100.0 * frac(wo, no)
        ),
    )
}

fn c7_baselines(run: &AnalogRun) -> Verdict {
    let r = &run.outcome.report.ranking;
    let cells = r.cells();
    let beats = |c: &CellKey, m: Method| match (r.rho(c, Method::Vsdr), r.rho(c, m)) {
        (Some(v), Some(b)) => v > b,
        _ => false,
    };
    let both = cells.iter().filter(|c| beats(c, Method::Opc) && beats(c, Method::SoftOpc)).count();
    let opc = cells.iter().filter(|c| beats(c, Method::Opc)).count();
    let soft = cells.iter().filter(|c| beats(c, Method::SoftOpc)).count();
    let frac = both as f64 / cells.len().max(1) as f64;
    verdict(
        7,
        "VSDR beats OPC and SoftOPC",
        !cells.is_empty() && frac >= 0.8,
        format!(
            "both {both}/{} ({:.0}%, need 80%); vs OPC {opc}, vs SoftOPC {soft}",
            cells.len(),
            100.0 * frac
        ),
    )
}

fn c8_ood_gap(run: &AnalogRun) -> Verdict {
    let gaps = &run.outcome.report.ood_gaps;
    let pick = |f: &dyn Fn(&str) -> bool| -> Vec<f64> {
        gaps.iter().filter(|g| g.layer == "encoder" && g.n_components == 2 && f(&g.dr_config)).map(|g| g.gap()).collect()
    };
    let off = pick(&|c| c == "off");
    let heavy = pick(&|c| c.starts_with("heavy-freq-"));
    if off.is_empty() || heavy.is_empty() {
        return verdict(8, "DR-hypothesis OOD gap", false, "missing encoder n=2 gaps");
    }
    let (mo, mh) = (median(off.clone()), median(heavy.clone()));
    verdict(
        8,
        "DR-hypothesis OOD gap",
        mo > mh,
        format!("median gap off {mo:.3e} ({} policies) vs heavy-freq {mh:.3e} ({} policies)", off.len(), heavy.len()),
    )
}

fn c9_protocols(run: &AnalogRun) -> Verdict {
    let rep = &run.outcome.report;
    let stds: Vec<f64> = rep.stability.iter().filter_map(|(_, s)| *s).collect();
    let max_std = stds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let std_ok = !stds.is_empty() && stds.len() == rep.stability.len() && max_std < 0.05;
    let medians: Vec<(String, f64)> = rep.protocols.iter().filter_map(|(n, b)| b.median.map(|m| (n.clone(), m))).collect();
    let lo = medians.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let hi = medians.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let med_ok = medians.len() == 3 && hi - lo <= 0.1;
    let listed: Vec<String> = medians.iter().map(|(n, m)| format!("{n} {m:.3}")).collect();
    verdict(
        9,
        "protocol robustness",
        std_ok && med_ok,
        format!("max redraw std {max_std:.4} over {} cells (<0.05); medians {} (spread {:.3}, <=0.1)", stds.len(), listed.join(", "), hi - lo),
    )
}

fn csv_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["scores", "report"] {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect();
        entries.sort();
        for p in entries {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
        }
    }
    out
}

fn c11_determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        run_pipeline(&Workspace::new(d.path(), Config::preset("minimal").unwrap())).expect("minimal pipeline");
    }
    let (x, y) = (csv_bytes(a.path()), csv_bytes(b.path()));
    let same = !x.is_empty() && x == y;
    verdict(11, "pipeline determinism", same, format!("{} score/report CSVs compared across two fresh runs", x.len()))
}

fn main() {
    let strict = std::env::var("VSDR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut verdicts = vec![c1_em(), c2_density(), c3_spearman(), c4_fusion(), c10_metric_logic(), c11_determinism()];

    eprintln!("acceptance: running the paper-analog pipeline in {}", analog_dir().display());
    let run = analog_run();
    verdicts.extend([c5_ceiling(&run), c6_components(&run), c7_baselines(&run), c8_ood_gap(&run), c9_protocols(&run)]);
    verdicts.sort_by_key(|v| v.id);

    for v in &verdicts {
        println!("criterion {:>2} {}: {} ({})", v.id, if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria passed", verdicts.len());
    if strict && passed < verdicts.len() {
        std::process::exit(1);
    }
}
