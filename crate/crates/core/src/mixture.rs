//! Diagonal-covariance Gaussian mixture models fitted by expectation-maximization.
//!
//! A fitted [`Gmm`] is the density model over one layer's activations; its
//! mean log-likelihood on a probe set is the out-of-distribution score.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seeding;

/// Responsibility mass below `EMPTY_COMPONENT_FRACTION * M` marks a component as empty.
const EMPTY_COMPONENT_FRACTION: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("dataset has zero feature columns")]
    ZeroDimension,
    #[error("layer name must be non-empty")]
    EmptyLayerName,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("requested {requested} components but only {rows} observations")]
    TooManyComponents { requested: usize, rows: usize },
    #[error("n_components must be at least 1")]
    NoComponents,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer mismatch: model is for `{model}`, dataset is `{data}`")]
    LayerMismatch { model: String, data: String },
    #[error("invalid mixture parameters: {0}")]
    InvalidModel(String),
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
}

/// Activations tapped from one named layer: `M` observations by `D` features.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset<T> {
    layer_name: String,
    data: Matrix<T>,
}

impl<T: Scalar> ActivationDataset<T> {
    pub fn new(layer_name: impl Into<String>, data: Matrix<T>) -> Result<Self, MixtureError> {
        let layer_name = layer_name.into();
        if layer_name.is_empty() {
            return Err(MixtureError::EmptyLayerName);
        }
        if data.rows() == 0 {
            return Err(MixtureError::EmptyDataset);
        }
        if data.cols() == 0 {
            return Err(MixtureError::ZeroDimension);
        }
        for (row, r) in data.iter_rows().enumerate() {
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(MixtureError::NonFinite { row, col });
            }
        }
        Ok(Self { layer_name, data })
    }

    pub fn from_rows(layer_name: impl Into<String>, rows: &[Vec<T>]) -> Result<Self, MixtureError> {
        let data = Matrix::from_rows(rows).ok_or_else(|| {
            MixtureError::DimensionMismatch {
                expected: rows.first().map_or(0, Vec::len),
                got: rows.iter().map(Vec::len).find(|&l| l != rows[0].len()).unwrap_or(0),
            }
        })?;
        Self::new(layer_name, data)
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn data(&self) -> &Matrix<T> {
        &self.data
    }

    pub fn n_rows(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub n_restarts: usize,
    pub variance_floor: f64,
    pub rng_seed: u64,
    /// Standardize each feature before fitting (off by default).
    #[serde(default)]
    pub standardize: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            n_restarts: 5,
            variance_floor: 1e-6,
            rng_seed: 0,
            standardize: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.max_iters < 1 {
            return Err(MixtureError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(MixtureError::InvalidConfig("tol must be > 0".into()));
        }
        if self.n_restarts < 1 {
            return Err(MixtureError::InvalidConfig("n_restarts must be >= 1".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(MixtureError::InvalidConfig("variance_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-feature affine transform applied before evaluating the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization<T> {
    pub shift: Vec<T>,
    pub scale: Vec<T>,
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm<T> {
    layer_name: String,
    weights: Vec<T>,
    means: Matrix<T>,
    variances: Matrix<T>,
    standardization: Option<Standardization<T>>,
    // ln w_k - 0.5 * sum_d ln(2 pi var_kd), cached for evaluation.
    log_norms: Vec<T>,
}

impl<T: Scalar> Gmm<T> {
    pub fn new(
        layer_name: impl Into<String>,
        weights: Vec<T>,
        means: Matrix<T>,
        variances: Matrix<T>,
    ) -> Result<Self, MixtureError> {
        let layer_name = layer_name.into();
        if layer_name.is_empty() {
            return Err(MixtureError::EmptyLayerName);
        }
        let n = weights.len();
        if n == 0 {
            return Err(MixtureError::NoComponents);
        }
        if means.rows() != n || variances.rows() != n || means.cols() != variances.cols() {
            return Err(MixtureError::InvalidModel("inconsistent shapes".into()));
        }
        if means.cols() == 0 {
            return Err(MixtureError::ZeroDimension);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(MixtureError::InvalidModel("weights must be finite and non-negative".into()));
        }
        let total: T = weights.iter().copied().sum();
        let slack = (T::epsilon() * T::of(16.0 * n as f64)).max(T::of(1e-9));
        if (total - T::one()).abs() > slack {
            return Err(MixtureError::InvalidModel(format!("weights sum to {total}")));
        }
        if !means.all_finite() {
            return Err(MixtureError::InvalidModel("non-finite mean".into()));
        }
        if variances.as_slice().iter().any(|v| !v.is_finite() || *v <= T::zero()) {
            return Err(MixtureError::InvalidModel("variances must be finite and positive".into()));
        }
        let mut gmm = Self {
            layer_name,
            weights,
            means,
            variances,
            standardization: None,
            log_norms: Vec::new(),
        };
        gmm.refresh_norms();
        Ok(gmm)
    }

    pub fn with_standardization(mut self, s: Standardization<T>) -> Result<Self, MixtureError> {
        let d = self.dim();
        if s.shift.len() != d || s.scale.len() != d {
            return Err(MixtureError::DimensionMismatch { expected: d, got: s.shift.len() });
        }
        if s.scale.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
            return Err(MixtureError::InvalidModel("standardization scale must be positive".into()));
        }
        self.standardization = Some(s);
        Ok(self)
    }

    fn refresh_norms(&mut self) {
        let two_pi = T::of(2.0 * PI);
        self.log_norms = (0..self.n_components())
            .map(|k| {
                let log_det: T = self.variances.row(k).iter().map(|&v| (two_pi * v).ln()).sum();
                self.weights[k].ln() - T::of(0.5) * log_det
            })
            .collect();
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix<T> {
        &self.means
    }

    pub fn diag_covariances(&self) -> &Matrix<T> {
        &self.variances
    }

    pub fn standardization(&self) -> Option<&Standardization<T>> {
        self.standardization.as_ref()
    }

    /// Per-component log joint densities `ln w_k + ln N(x; mu_k, Sigma_k)` of an
    /// already-standardized point, written into `out`.
    fn component_log_densities(&self, x: &[T], out: &mut [T]) {
        let half = T::of(0.5);
        for k in 0..self.n_components() {
            let maha: T = self
                .means
                .row(k)
                .iter()
                .zip(self.variances.row(k))
                .zip(x)
                .map(|((&m, &v), &xi)| {
                    let d = xi - m;
                    d * d / v
                })
                .sum();
            out[k] = self.log_norms[k] - half * maha;
        }
    }

    /// `log sum_k w_k N(x; mu_k, diag Sigma_k)`, stabilized by log-sum-exp.
    pub fn log_likelihood(&self, x: &[T]) -> Result<T, MixtureError> {
        if x.len() != self.dim() {
            return Err(MixtureError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if let Some(col) = x.iter().position(|v| !v.is_finite()) {
            return Err(MixtureError::NonFinite { row: 0, col });
        }
        let mut buf = vec![T::zero(); self.n_components()];
        Ok(match &self.standardization {
            None => {
                self.component_log_densities(x, &mut buf);
                log_sum_exp(&buf)
            }
            Some(s) => {
                let z: Vec<T> = x
                    .iter()
                    .zip(&s.shift)
                    .zip(&s.scale)
                    .map(|((&xi, &m), &sd)| (xi - m) / sd)
                    .collect();
                self.component_log_densities(&z, &mut buf);
                let log_jac: T = s.scale.iter().map(|v| v.ln()).sum();
                log_sum_exp(&buf) - log_jac
            }
        })
    }
}

/// Numerically stable `ln sum_i exp(v_i)`. Entries equal to `-inf` are ignored.
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Mean of [`Gmm::log_likelihood`] over the rows of `dataset`.
pub fn mean_log_likelihood<T: Scalar>(
    gmm: &Gmm<T>,
    dataset: &ActivationDataset<T>,
) -> Result<T, MixtureError> {
    if dataset.layer_name() != gmm.layer_name() {
        return Err(MixtureError::LayerMismatch {
            model: gmm.layer_name().to_owned(),
            data: dataset.layer_name().to_owned(),
        });
    }
    mean_log_likelihood_rows(gmm, dataset.data())
}

/// Layer-agnostic variant of [`mean_log_likelihood`] over raw rows.
pub fn mean_log_likelihood_rows<T: Scalar>(gmm: &Gmm<T>, rows: &Matrix<T>) -> Result<T, MixtureError> {
    if rows.rows() == 0 {
        return Err(MixtureError::EmptyDataset);
    }
    let mut total = T::zero();
    for r in rows.iter_rows() {
        total = total + gmm.log_likelihood(r)?;
    }
    Ok(total / T::of(rows.rows() as f64))
}

/// Log-likelihood trace of one EM restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace<T> {
    /// Total training log-likelihood at each E-step.
    pub log_likelihoods: Vec<T>,
    pub converged: bool,
    pub reseeds: usize,
}

impl<T: Scalar> RestartTrace<T> {
    pub fn final_log_likelihood(&self) -> T {
        *self.log_likelihoods.last().expect("at least one E-step")
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub gmm: Gmm<T>,
    pub restarts: Vec<RestartTrace<T>>,
    pub best_restart: usize,
}

/// Fits an `n_components` mixture by EM, keeping the best of `cfg.n_restarts`
/// k-means++-seeded restarts.
pub fn fit_gmm<T: Scalar>(
    data: &ActivationDataset<T>,
    n_components: usize,
    cfg: &EmConfig,
) -> Result<Gmm<T>, MixtureError> {
    fit_gmm_traced(data, n_components, cfg).map(|o| o.gmm)
}

pub fn fit_gmm_traced<T: Scalar>(
    data: &ActivationDataset<T>,
    n_components: usize,
    cfg: &EmConfig,
) -> Result<FitOutcome<T>, MixtureError> {
    cfg.validate()?;
    if n_components == 0 {
        return Err(MixtureError::NoComponents);
    }
    if n_components > data.n_rows() {
        return Err(MixtureError::TooManyComponents { requested: n_components, rows: data.n_rows() });
    }
    let standardization = cfg.standardize.then(|| standardization_of(data.data()));
    let x = match &standardization {
        Some(s) => apply_standardization(data.data(), s),
        None => data.data().clone(),
    };
    let floor = T::of(cfg.variance_floor);
    let base_var = column_variances(&x, floor);

    let mut best: Option<(Params<T>, usize, T)> = None;
    let mut restarts = Vec::with_capacity(cfg.n_restarts);
    for r in 0..cfg.n_restarts {
        let mut rng = seeding::rng_from(&[cfg.rng_seed, r as u64]);
        let centers = kmeans_pp_indices(&x, n_components, &mut rng);
        let init = Params::seeded(&x, &centers, &base_var);
        let (params, trace) = run_em(&x, init, &base_var, cfg);
        let ll = trace.final_log_likelihood();
        restarts.push(trace);
        if best.as_ref().is_none_or(|(_, _, b)| ll > *b) {
            best = Some((params, r, ll));
        }
    }
    let (params, best_restart, _) = best.expect("n_restarts >= 1");
    let mut gmm = params.into_gmm(data.layer_name())?;
    if let Some(s) = standardization {
        gmm = gmm.with_standardization(s)?;
    }
    Ok(FitOutcome { gmm, restarts, best_restart })
}

/// Runs EM from explicit starting parameters (no restarts, no seeding).
pub fn fit_gmm_from<T: Scalar>(
    data: &ActivationDataset<T>,
    init: &Gmm<T>,
    cfg: &EmConfig,
) -> Result<(Gmm<T>, RestartTrace<T>), MixtureError> {
    cfg.validate()?;
    if init.dim() != data.dim() {
        return Err(MixtureError::DimensionMismatch { expected: init.dim(), got: data.dim() });
    }
    let floor = T::of(cfg.variance_floor);
    let base_var = column_variances(data.data(), floor);
    let params = Params {
        weights: init.weights.clone(),
        means: init.means.clone(),
        variances: init.variances.clone(),
    };
    let (params, trace) = run_em(data.data(), params, &base_var, cfg);
    Ok((params.into_gmm(data.layer_name())?, trace))
}

fn standardization_of<T: Scalar>(x: &Matrix<T>) -> Standardization<T> {
    let n = T::of(x.rows() as f64);
    let shift: Vec<T> = (0..x.cols())
        .map(|j| x.iter_rows().map(|r| r[j]).sum::<T>() / n)
        .collect();
    let scale = (0..x.cols())
        .map(|j| {
            let var = x.iter_rows().map(|r| (r[j] - shift[j]).powi(2)).sum::<T>() / n;
            if var > T::zero() { var.sqrt() } else { T::one() }
        })
        .collect();
    Standardization { shift, scale }
}

fn apply_standardization<T: Scalar>(x: &Matrix<T>, s: &Standardization<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - s.shift[j]) / s.scale[j];
        }
    }
    out
}

/// Population variance of each column, clamped at `floor`.
fn column_variances<T: Scalar>(x: &Matrix<T>, floor: T) -> Vec<T> {
    let n = T::of(x.rows() as f64);
    (0..x.cols())
        .map(|j| {
            let mean = x.iter_rows().map(|r| r[j]).sum::<T>() / n;
            let var = x.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<T>() / n;
            var.max(floor)
        })
        .collect()
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, then each next center drawn with
/// probability proportional to its squared distance to the nearest chosen one.
pub fn kmeans_pp_indices<T: Scalar>(x: &Matrix<T>, k: usize, rng: &mut seeding::Rng) -> Vec<usize> {
    let m = x.rows();
    let mut centers = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, x.row(centers[0])).as_f64()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            // Guard against rounding landing on an already-chosen point.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.push(next);
        for (i, r) in x.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(next)).as_f64());
        }
    }
    centers
}

struct Params<T> {
    weights: Vec<T>,
    means: Matrix<T>,
    variances: Matrix<T>,
}

impl<T: Scalar> Params<T> {
    fn seeded(x: &Matrix<T>, centers: &[usize], base_var: &[T]) -> Self {
        let k = centers.len();
        let mut variances = Matrix::zeros(k, x.cols());
        for c in 0..k {
            variances.row_mut(c).copy_from_slice(base_var);
        }
        Self {
            weights: vec![T::one() / T::of(k as f64); k],
            means: x.select_rows(centers),
            variances,
        }
    }

    fn into_gmm(self, layer: &str) -> Result<Gmm<T>, MixtureError> {
        Gmm::new(layer, self.weights, self.means, self.variances)
    }

    fn log_norms(&self) -> Vec<T> {
        let two_pi = T::of(2.0 * PI);
        (0..self.weights.len())
            .map(|k| {
                let log_det: T = self.variances.row(k).iter().map(|&v| (two_pi * v).ln()).sum();
                self.weights[k].ln() - T::of(0.5) * log_det
            })
            .collect()
    }
}

fn run_em<T: Scalar>(
    x: &Matrix<T>,
    mut p: Params<T>,
    base_var: &[T],
    cfg: &EmConfig,
) -> (Params<T>, RestartTrace<T>) {
    let (m, d) = (x.rows(), x.cols());
    let k = p.weights.len();
    let floor = T::of(cfg.variance_floor);
    let half = T::of(0.5);
    let mut resp = Matrix::<T>::zeros(m, k);
    let mut point_ll = vec![T::zero(); m];
    let mut trace = RestartTrace { log_likelihoods: Vec::new(), converged: false, reseeds: 0 };

    for iter in 0..cfg.max_iters {
        // E-step
        let norms = p.log_norms();
        let mut total = T::zero();
        for i in 0..m {
            let xi = x.row(i);
            let row = resp.row_mut(i);
            for c in 0..k {
                let maha: T = p
                    .means
                    .row(c)
                    .iter()
                    .zip(p.variances.row(c))
                    .zip(xi)
                    .map(|((&mu, &v), &xv)| (xv - mu) * (xv - mu) / v)
                    .sum();
                row[c] = norms[c] - half * maha;
            }
            let lse = log_sum_exp(row);
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
            point_ll[i] = lse;
            total = total + lse;
        }
        if let Some(&prev) = trace.log_likelihoods.last() {
            trace.log_likelihoods.push(total);
            let scale = prev.abs().max(T::min_positive_value());
            if (total - prev) / scale < T::of(cfg.tol) {
                trace.converged = true;
                break;
            }
        } else {
            trace.log_likelihoods.push(total);
        }
        if iter + 1 == cfg.max_iters {
            break;
        }

        // M-step
        let mass: Vec<T> = (0..k).map(|c| resp.iter_rows().map(|r| r[c]).sum()).collect();
        let empty_cut = T::of(EMPTY_COMPONENT_FRACTION * m as f64);
        let mut worst: Vec<usize> = Vec::new();
        for c in 0..k {
            if mass[c] < empty_cut {
                if worst.is_empty() {
                    worst = (0..m).collect();
                    worst.sort_by(|&a, &b| point_ll[a].partial_cmp(&point_ll[b]).unwrap().then(a.cmp(&b)));
                    worst.reverse();
                }
                let idx = worst.pop().unwrap_or(0);
                p.means.row_mut(c).copy_from_slice(x.row(idx));
                p.variances.row_mut(c).copy_from_slice(base_var);
                p.weights[c] = T::one() / T::of(k as f64);
                trace.reseeds += 1;
                continue;
            }
            let mut mean = vec![T::zero(); d];
            for (r, xi) in resp.iter_rows().zip(x.iter_rows()) {
                let w = r[c];
                for (mj, &xj) in mean.iter_mut().zip(xi) {
                    *mj = *mj + w * xj;
                }
            }
            for mj in &mut mean {
                *mj = *mj / mass[c];
            }
            let mut var = vec![T::zero(); d];
            for (r, xi) in resp.iter_rows().zip(x.iter_rows()) {
                let w = r[c];
                for ((vj, &xj), &mj) in var.iter_mut().zip(xi).zip(&mean) {
                    let dv = xj - mj;
                    *vj = *vj + w * dv * dv;
                }
            }
            for vj in &mut var {
                *vj = (*vj / mass[c]).max(floor);
            }
            p.means.row_mut(c).copy_from_slice(&mean);
            p.variances.row_mut(c).copy_from_slice(&var);
            p.weights[c] = mass[c] / T::of(m as f64);
        }
        let wsum: T = p.weights.iter().copied().sum();
        for w in &mut p.weights {
            *w = *w / wsum;
        }
    }
    (p, trace)
}

/// JSON wire form of a [`Gmm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub n_components: usize,
    pub layer_name: String,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub diag_covariances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_shift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_scale: Option<Vec<f64>>,
}

impl<T: Scalar> From<&Gmm<T>> for GmmFile {
    fn from(g: &Gmm<T>) -> Self {
        let to64 = |m: &Matrix<T>| -> Vec<Vec<f64>> {
            m.iter_rows().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
        };
        let vec64 = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.as_f64()).collect() };
        Self {
            n_components: g.n_components(),
            layer_name: g.layer_name.clone(),
            weights: vec64(&g.weights),
            means: to64(&g.means),
            diag_covariances: to64(&g.variances),
            feature_shift: g.standardization.as_ref().map(|s| vec64(&s.shift)),
            feature_scale: g.standardization.as_ref().map(|s| vec64(&s.scale)),
        }
    }
}

impl GmmFile {
    pub fn into_gmm<T: Scalar>(self) -> Result<Gmm<T>, MixtureError> {
        if self.n_components != self.weights.len() {
            return Err(MixtureError::InvalidModel(format!(
                "n_components = {} but {} weights",
                self.n_components,
                self.weights.len()
            )));
        }
        let conv = |v: Vec<f64>| -> Vec<T> { v.into_iter().map(T::of).collect() };
        let mat = |rows: Vec<Vec<f64>>| -> Result<Matrix<T>, MixtureError> {
            let rows: Vec<Vec<T>> = rows.into_iter().map(conv).collect();
            Matrix::from_rows(&rows).ok_or_else(|| MixtureError::InvalidModel("ragged matrix".into()))
        };
        let gmm = Gmm::new(self.layer_name, conv(self.weights), mat(self.means)?, mat(self.diag_covariances)?)?;
        match (self.feature_shift, self.feature_scale) {
            (Some(shift), Some(scale)) => {
                gmm.with_standardization(Standardization { shift: conv(shift), scale: conv(scale) })
            }
            (None, None) => Ok(gmm),
            _ => Err(MixtureError::InvalidModel("feature_shift and feature_scale must appear together".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(values: &[f64]) -> ActivationDataset<f64> {
        ActivationDataset::from_rows("fc0", &values.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    fn std_normal() -> Gmm<f64> {
        Gmm::new("fc0", vec![1.0], Matrix::from_rows(&[vec![0.0]]).unwrap(), Matrix::from_rows(&[vec![1.0]]).unwrap())
            .unwrap()
    }

    #[test]
    fn single_gaussian_mle_of_two_points() {
        let g = fit_gmm(&one_d(&[-1.0, 1.0]), 1, &EmConfig::default()).unwrap();
        assert!((g.means()[(0, 0)]).abs() < 1e-12);
        assert!((g.diag_covariances()[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(g.weights(), &[1.0]);
    }

    #[test]
    fn constant_data_engages_floor() {
        let cfg = EmConfig::default();
        let g = fit_gmm(&one_d(&[3.5; 10]), 1, &cfg).unwrap();
        assert_eq!(g.means()[(0, 0)], 3.5);
        assert_eq!(g.diag_covariances()[(0, 0)], cfg.variance_floor);
        assert!(g.log_likelihood(&[1e3]).unwrap().is_finite());
    }

    #[test]
    fn standard_normal_log_density() {
        let g = std_normal();
        let c = -0.5 * (2.0 * PI).ln();
        assert!((g.log_likelihood(&[0.0]).unwrap() - c).abs() < 1e-12);
        assert!((g.log_likelihood(&[2.0]).unwrap() - (c - 2.0)).abs() < 1e-12);
        assert!((c + 0.918939).abs() < 1e-6);
    }

    #[test]
    fn two_component_matches_direct_sum() {
        let g = Gmm::new(
            "fc0",
            vec![0.5, 0.5],
            Matrix::from_rows(&[vec![-5.0], vec![5.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
        )
        .unwrap();
        let pdf = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * PI).sqrt();
        let direct = (0.5 * pdf(0.0, -5.0) + 0.5 * pdf(0.0, 5.0)).ln();
        assert!((g.log_likelihood(&[0.0]).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn mean_log_likelihood_symmetry_and_errors() {
        let g = std_normal();
        let ds = one_d(&[-2.0, 2.0]);
        let v = mean_log_likelihood(&g, &ds).unwrap();
        assert!((v - (-0.5 * (2.0 * PI).ln() - 2.0)).abs() < 1e-12);
        let other = ActivationDataset::from_rows("relu0", &[vec![0.0]]).unwrap();
        assert!(matches!(mean_log_likelihood(&g, &other), Err(MixtureError::LayerMismatch { .. })));
        assert!(matches!(g.log_likelihood(&[0.0, 1.0]), Err(MixtureError::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            fit_gmm(&one_d(&[1.0, 2.0]), 3, &EmConfig::default()).unwrap_err(),
            MixtureError::TooManyComponents { requested: 3, rows: 2 }
        );
        assert!(matches!(
            ActivationDataset::from_rows("fc0", &[vec![f64::NAN]]),
            Err(MixtureError::NonFinite { row: 0, col: 0 })
        ));
        assert_eq!(
            ActivationDataset::<f64>::from_rows("", &[vec![1.0]]).unwrap_err(),
            MixtureError::EmptyLayerName
        );
        let bad = EmConfig { tol: 0.0, ..EmConfig::default() };
        assert!(fit_gmm(&one_d(&[1.0, 2.0]), 1, &bad).is_err());
    }

    #[test]
    fn standardized_fit_is_still_a_density_in_raw_space() {
        let vals: Vec<f64> = (0..50).map(|i| 100.0 + 0.3 * i as f64).collect();
        let plain = fit_gmm(&one_d(&vals), 1, &EmConfig::default()).unwrap();
        let cfg = EmConfig { standardize: true, ..EmConfig::default() };
        let std = fit_gmm(&one_d(&vals), 1, &cfg).unwrap();
        for x in [95.0, 105.0, 112.0] {
            let a = plain.log_likelihood(&[x]).unwrap();
            let b = std.log_likelihood(&[x]).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn json_wire_round_trip() {
        let g = fit_gmm(&one_d(&[-1.0, 0.5, 2.0, 4.0]), 2, &EmConfig::default()).unwrap();
        let text = serde_json::to_string(&GmmFile::from(&g)).unwrap();
        let back: Gmm<f64> = serde_json::from_str::<GmmFile>(&text).unwrap().into_gmm().unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn works_in_single_precision() {
        let ds = ActivationDataset::<f32>::from_rows("fc0", &[vec![-1.0], vec![1.0]]).unwrap();
        let g = fit_gmm(&ds, 1, &EmConfig::default()).unwrap();
        assert!((g.diag_covariances()[(0, 0)] - 1.0).abs() < 1e-6);
    }
}
