//! Rank statistics, ground-truth evaluation on the real-analog domain, and
//! the sweep / protocol / separability reports.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combiner::{combine_generic, ScoreTable};
use crate::io::{fmt_f64, fmt_opt};
use crate::policy_net::MlpPolicy;
use crate::scalar::Scalar;
use crate::seeding;
use crate::sim_validation::{evaluate_metrics, Metric, ValidationType};
use crate::testbed::{initial_grid, rollout, Agent, DomainSchedule, EpisodeRecord, NamedDomain, Protocol, N_STEPS};

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("unknown policy id `{0}`")]
    UnknownPolicy(String),
}

/// Descending ranks starting at 1; tied values share the mean of their positions.
pub fn rank_with_ties<T: Scalar>(scores: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut ranks = vec![T::zero(); scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share rank mean(i+1..=j+1).
        let avg = T::of((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let n = T::of(a.len() as f64);
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).max(-T::one()).min(T::one()))
}

/// Tie-corrected Spearman correlation (Pearson on average ranks).
///
/// `Ok(None)` marks an undefined coefficient: fewer than two entries, or a
/// vector whose entries are all equal.
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<Option<T>, RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    for v in [a, b] {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(RankError::NonFinite(i));
        }
    }
    if a.len() < 2 {
        return Ok(None);
    }
    Ok(pearson(&rank_with_ties(a), &rank_with_ties(b)))
}

/// Real-analog performance of every policy for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub run: usize,
    pub grid: usize,
    pub policy_ids: Vec<String>,
    pub reward: Vec<f64>,
    pub success: Vec<f64>,
    pub strict_success: Vec<f64>,
}

impl GroundTruth {
    pub fn metric(&self, m: Metric) -> &[f64] {
        match m {
            Metric::Reward => &self.reward,
            Metric::Success => &self.success,
            Metric::StrictSuccess => &self.strict_success,
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.policy_ids.iter().position(|p| p == id)
    }

    /// Restricts to the given policy indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect();
        Self {
            run: self.run,
            grid: self.grid,
            policy_ids: idx.iter().map(|&i| self.policy_ids[i].clone()).collect(),
            reward: pick(&self.reward),
            success: pick(&self.success),
            strict_success: pick(&self.strict_success),
        }
    }

    pub const CSV_HEADER: &'static str = "policy_id,reward,success,strict_success";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for i in 0..self.policy_ids.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.policy_ids[i],
                fmt_f64(self.reward[i]),
                fmt_f64(self.success[i]),
                fmt_f64(self.strict_success[i])
            ));
        }
        s
    }

    pub fn from_csv(run: usize, grid: usize, text: &str) -> Result<Self, String> {
        let mut gt = Self { run, grid, policy_ids: vec![], reward: vec![], success: vec![], strict_success: vec![] };
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err("missing ground-truth header".into());
        }
        for l in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(format!("expected 4 fields in `{l}`"));
            }
            let p = |t: &str| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
            gt.policy_ids.push(f[0].to_owned());
            gt.reward.push(p(f[1])?);
            gt.success.push(p(f[2])?);
            gt.strict_success.push(p(f[3])?);
        }
        Ok(gt)
    }
}

#[derive(Debug, Clone)]
pub struct GtRun {
    pub truth: GroundTruth,
    /// Per policy, one episode per grid cell.
    pub episodes: Vec<Vec<EpisodeRecord>>,
}

/// Rolls each policy out once per grid cell on the real-analog domain, for
/// each of `n_runs` runs with run-specific observation noise.
pub fn ground_truth_eval(
    policies: &[MlpPolicy<f64>],
    real: &NamedDomain,
    grid: usize,
    n_runs: usize,
    seed: u64,
) -> Vec<GtRun> {
    let cells = initial_grid(grid);
    (0..n_runs)
        .map(|run| {
            let episodes: Vec<Vec<EpisodeRecord>> = policies
                .par_iter()
                .map(|p| {
                    let mut ctl = p.controller();
                    let h = seeding::hash_str(&p.id);
                    cells
                        .iter()
                        .enumerate()
                        .map(|(c, &init)| {
                            let mut rng = seeding::rng_from(&[seed, 0x67, run as u64, h, c as u64]);
                            let sched = DomainSchedule::Fixed { id: &real.id, params: &real.params };
                            rollout(&mut *ctl, init, sched, N_STEPS, &mut rng)
                        })
                        .collect()
                })
                .collect();
            let mean = |eps: &[EpisodeRecord], f: &dyn Fn(&EpisodeRecord) -> f64| {
                eps.iter().map(f).sum::<f64>() / eps.len() as f64
            };
            let truth = GroundTruth {
                run,
                grid,
                policy_ids: policies.iter().map(|p| p.id.clone()).collect(),
                reward: episodes.iter().map(|e| mean(e, &|x| evaluate_metrics(x).reward)).collect(),
                success: episodes.iter().map(|e| mean(e, &|x| f64::from(u8::from(x.success)))).collect(),
                strict_success: episodes.iter().map(|e| mean(e, &|x| f64::from(u8::from(x.strict_success)))).collect(),
            };
            GtRun { truth, episodes }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    SimOnly,
    OodOnly,
    Vsdr,
    Opc,
    SoftOpc,
    SimOpc,
    SimSoftOpc,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::SimOnly, Method::OodOnly, Method::Vsdr, Method::Opc, Method::SoftOpc, Method::SimOpc, Method::SimSoftOpc];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::SimOnly => "sim-only",
            Method::OodOnly => "ood-only",
            Method::Vsdr => "vsdr",
            Method::Opc => "opc",
            Method::SoftOpc => "soft-opc",
            Method::SimOpc => "sim+opc",
            Method::SimSoftOpc => "sim+soft-opc",
        })
    }
}

/// One hyper-parameter combination of the sweep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub validation: ValidationType,
    pub metric: Metric,
    pub layer: String,
    pub n_components: usize,
    pub protocol: Protocol,
}

impl CellKey {
    /// File-name-safe label.
    pub fn label(&self) -> String {
        format!("{}_{}_{}_n{}_{}", self.validation, self.metric, self.layer, self.n_components, self.protocol)
    }

    pub fn csv_prefix(&self) -> String {
        format!("{},{},{},{},{}", self.validation, self.metric, self.layer, self.n_components, self.protocol)
    }
}

/// Scores of every method in a table, aligned with the table's row order.
pub fn method_scores(table: &ScoreTable, method: Method) -> Option<Vec<f64>> {
    let s = table.column(|r| r.s);
    let opc: Option<Vec<f64>> = table.rows.iter().map(|r| r.opc).collect();
    let soft: Option<Vec<f64>> = table.rows.iter().map(|r| r.soft_opc).collect();
    match method {
        Method::SimOnly => Some(s),
        Method::OodOnly => Some(table.column(|r| r.r)),
        Method::Vsdr => Some(table.column(|r| r.vsdr)),
        Method::Opc => opc,
        Method::SoftOpc => soft,
        Method::SimOpc => opc.and_then(|b| combine_generic(&s, &b).ok()),
        Method::SimSoftOpc => soft.and_then(|b| combine_generic(&s, &b).ok()),
    }
}

/// Spearman correlation of a table's method ranking with the ground truth.
pub fn method_rho(table: &ScoreTable, method: Method, gt: &GroundTruth, metric: Metric) -> Result<Option<f64>, RankError> {
    let Some(scores) = method_scores(table, method) else { return Ok(None) };
    let truth = gt.metric(metric);
    let aligned = table
        .rows
        .iter()
        .map(|r| gt.index_of(&r.policy_id).map(|i| truth[i]).ok_or_else(|| RankError::UnknownPolicy(r.policy_id.clone())))
        .collect::<Result<Vec<f64>, _>>()?;
    spearman(&scores, &aligned)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub cell: CellKey,
    pub method: Method,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinRate {
    pub versus: Method,
    /// Cells where the VSDR correlation is strictly higher.
    pub wins: usize,
    /// Cells where both correlations are defined.
    pub compared: usize,
}

impl WinRate {
    pub fn fraction(&self) -> Option<f64> {
        (self.compared > 0).then(|| self.wins as f64 / self.compared as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisBreakdown {
    pub axis: &'static str,
    pub value: String,
    pub win_vs_sim: WinRate,
    pub win_vs_ood: WinRate,
    /// Mean of `(rho_vsdr - rho_sim) / |rho_sim|` over cells where both are defined and `rho_sim != 0`.
    pub mean_relative_improvement_vs_sim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub rows: Vec<RankRow>,
    pub win_rates: Vec<WinRate>,
    pub breakdowns: Vec<AxisBreakdown>,
    /// Run-to-run ground-truth correlation per metric.
    pub ceiling: Vec<(Metric, Option<f64>)>,
    pub missing: Vec<CellKey>,
}

fn win_rate(pairs: impl Iterator<Item = (Option<f64>, Option<f64>)>, versus: Method) -> WinRate {
    let mut w = WinRate { versus, wins: 0, compared: 0 };
    for (v, o) in pairs {
        if let (Some(v), Some(o)) = (v, o) {
            w.compared += 1;
            if v > o {
                w.wins += 1;
            }
        }
    }
    w
}

impl RankingReport {
    pub fn rho(&self, cell: &CellKey, method: Method) -> Option<f64> {
        self.rows.iter().find(|r| &r.cell == cell && r.method == method).and_then(|r| r.rho)
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut out: Vec<CellKey> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.cell) && !out.contains(&r.cell) {
                out.push(r.cell.clone());
            }
        }
        out
    }

    pub fn win_rate(&self, versus: Method) -> Option<&WinRate> {
        self.win_rates.iter().find(|w| w.versus == versus)
    }

    pub fn rankings_csv(&self) -> String {
        let mut s = String::from("validation,metric,layer,n_components,protocol,method,rho\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.cell.csv_prefix(), r.method, fmt_opt(r.rho)));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("statistic,group,value\n");
        let opt_line = |stat: &str, group: &str, v: Option<f64>| format!("{stat},{group},{}\n", fmt_opt(v));
        for (m, rho) in &self.ceiling {
            s.push_str(&opt_line("gt_run_to_run_rho", &m.to_string(), *rho));
        }
        for w in &self.win_rates {
            s.push_str(&format!("vsdr_wins_vs,{},{}\n", w.versus, w.wins));
            s.push_str(&format!("cells_compared_vs,{},{}\n", w.versus, w.compared));
            s.push_str(&opt_line("vsdr_win_rate_vs", &w.versus.to_string(), w.fraction()));
        }
        for b in &self.breakdowns {
            let g = format!("{}={}", b.axis, b.value);
            s.push_str(&opt_line("win_rate_vs_sim", &g, b.win_vs_sim.fraction()));
            s.push_str(&opt_line("win_rate_vs_ood", &g, b.win_vs_ood.fraction()));
            s.push_str(&opt_line("mean_relative_improvement_vs_sim", &g, b.mean_relative_improvement_vs_sim));
        }
        for c in &self.missing {
            s.push_str(&format!("missing_cell,{},NA\n", c.label()));
        }
        s
    }
}

/// Correlates every method with the cell's ground-truth metric and aggregates
/// VSDR win rates. Cells in `expected` without a table are listed as missing.
pub fn sweep_report(
    tables: &[(CellKey, ScoreTable)],
    expected: &[CellKey],
    gt_runs: &[GroundTruth],
) -> Result<RankingReport, RankError> {
    let gt = &gt_runs[0];
    let mut rows = Vec::new();
    for (cell, table) in tables {
        for m in Method::ALL {
            rows.push(RankRow { cell: cell.clone(), method: m, rho: method_rho(table, m, gt, cell.metric)? });
        }
    }
    let lookup: BTreeMap<(&CellKey, Method), Option<f64>> = rows.iter().map(|r| ((&r.cell, r.method), r.rho)).collect();
    let cells: Vec<&CellKey> = tables.iter().map(|(c, _)| c).collect();
    let pair = |c: &CellKey, m: Method| (lookup[&(c, Method::Vsdr)], lookup[&(c, m)]);

    let win_rates = Method::ALL
        .iter()
        .filter(|&&m| m != Method::Vsdr)
        .map(|&m| win_rate(cells.iter().map(|c| pair(c, m)), m))
        .collect();

    let mut breakdowns = Vec::new();
    let axes: [(&'static str, fn(&CellKey) -> String); 4] = [
        ("layer", |c| c.layer.clone()),
        ("n_components", |c| c.n_components.to_string()),
        ("validation", |c| c.validation.to_string()),
        ("metric", |c| c.metric.to_string()),
    ];
    for (axis, key) in axes {
        let mut values: Vec<String> = Vec::new();
        for c in &cells {
            let k = key(c);
            if !values.contains(&k) {
                values.push(k);
            }
        }
        for value in values {
            let group: Vec<&&CellKey> = cells.iter().filter(|c| key(c) == value).collect();
            let rel: Vec<f64> = group
                .iter()
                .filter_map(|c| match pair(c, Method::SimOnly) {
                    (Some(v), Some(s)) if s != 0.0 => Some((v - s) / s.abs()),
                    _ => None,
                })
                .collect();
            breakdowns.push(AxisBreakdown {
                axis,
                value,
                win_vs_sim: win_rate(group.iter().map(|c| pair(c, Method::SimOnly)), Method::SimOnly),
                win_vs_ood: win_rate(group.iter().map(|c| pair(c, Method::OodOnly)), Method::OodOnly),
                mean_relative_improvement_vs_sim: (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64),
            });
        }
    }

    let ceiling = match gt_runs.get(1) {
        Some(second) => Metric::ALL
            .iter()
            .map(|&m| Ok((m, spearman(gt.metric(m), second.metric(m))?)))
            .collect::<Result<_, RankError>>()?,
        None => Metric::ALL.iter().map(|&m| (m, None)).collect(),
    };
    let missing = expected.iter().filter(|c| !cells.contains(c)).cloned().collect();
    Ok(RankingReport { rows, win_rates, breakdowns, ceiling, missing })
}

/// Five-number summary of a set of correlations; undefined ones are counted, not used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub n: usize,
    pub na: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxSummary {
    pub fn of(values: &[Option<f64>]) -> Self {
        let mut v: Vec<f64> = values.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        let na = values.len() - v.len();
        if v.is_empty() {
            return Self { n: 0, na, min: None, q1: None, median: None, q3: None, max: None };
        }
        Self {
            n: v.len(),
            na,
            min: Some(v[0]),
            q1: Some(quantile(&v, 0.25)),
            median: Some(quantile(&v, 0.5)),
            q3: Some(quantile(&v, 0.75)),
            max: Some(v[v.len() - 1]),
        }
    }

    pub const CSV_HEADER: &'static str = "analysis,group,size,n,na,min,q1,median,q3,max";

    pub fn csv_row(&self, analysis: &str, group: &str, size: usize) -> String {
        format!(
            "{analysis},{group},{size},{},{},{},{},{},{},{}\n",
            self.n,
            self.na,
            fmt_opt(self.min),
            fmt_opt(self.q1),
            fmt_opt(self.median),
            fmt_opt(self.q3),
            fmt_opt(self.max)
        )
    }
}

/// Box-plot summary of the VSDR correlations obtained under each protocol.
pub fn protocol_comparison(runs: &[(Protocol, Vec<Option<f64>>)]) -> Vec<(Protocol, BoxSummary)> {
    runs.iter().map(|(p, rhos)| (*p, BoxSummary::of(rhos))).collect()
}

/// Population standard deviation of each cell's correlation across repeated
/// draws (`draws[d][cell]`). `None` if the cell is undefined in any draw.
pub fn resample_stability(draws: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let n_cells = draws.first().map_or(0, Vec::len);
    (0..n_cells)
        .map(|c| {
            let vals: Option<Vec<f64>> = draws.iter().map(|d| d[c]).collect();
            let vals = vals?;
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            Some((vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySubset {
    pub name: String,
    pub policy_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSummary {
    pub name: String,
    pub size: usize,
    pub summary: BoxSummary,
}

/// Recomputes the correlation distribution on each subset (via `eval`, which
/// receives indices into `known_ids`) and returns the summaries from the
/// largest subset to the smallest.
pub fn separability_analysis(
    subsets: &[PolicySubset],
    known_ids: &[String],
    eval: impl Fn(&[usize]) -> Vec<Option<f64>>,
) -> Result<Vec<SubsetSummary>, RankError> {
    let mut out = Vec::with_capacity(subsets.len());
    for s in subsets {
        let idx = s
            .policy_ids
            .iter()
            .map(|id| known_ids.iter().position(|k| k == id).ok_or_else(|| RankError::UnknownPolicy(id.clone())))
            .collect::<Result<Vec<usize>, _>>()?;
        out.push(SubsetSummary { name: s.name.clone(), size: idx.len(), summary: BoxSummary::of(&eval(&idx)) });
    }
    out.sort_by(|a, b| b.size.cmp(&a.size));
    Ok(out)
}
