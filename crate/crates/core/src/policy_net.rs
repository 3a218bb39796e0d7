//! Feed-forward policy network with named activation taps.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::mixture::{ActivationDataset, MixtureError};
use crate::scalar::Scalar;
use crate::seeding;
use crate::testbed::{self, Action, Agent, DomainSource, State};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch at `{layer}`: expected {expected}, got {got}")]
    DimensionMismatch { layer: String, expected: usize, got: usize },
    #[error("non-finite parameter in layer `{0}`")]
    NonFiniteWeights(String),
    #[error("non-finite observation entry at index {0}")]
    NonFiniteObservation(usize),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("relu layer `{0}` must have in_dim == out_dim")]
    ReluShape(String),
    #[error("policy has no layers")]
    Empty,
    #[error("weights file parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Affine,
    /// Affine map followed by a rectifier; the tap is post-rectifier.
    AffineRelu,
    Relu,
}

impl LayerKind {
    pub fn has_params(self) -> bool {
        !matches!(self, LayerKind::Relu)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Affine => "affine",
            LayerKind::AffineRelu => "affine_relu",
            LayerKind::Relu => "relu",
        })
    }
}

impl FromStr for LayerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "affine" => Ok(LayerKind::Affine),
            "affine_relu" => Ok(LayerKind::AffineRelu),
            "relu" => Ok(LayerKind::Relu),
            other => Err(format!("unknown layer kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn new(name: &str, kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Self { name: name.to_owned(), kind, in_dim, out_dim }
    }

    fn n_params(&self) -> usize {
        if self.kind.has_params() { self.out_dim * (self.in_dim + 1) } else { 0 }
    }
}

/// Layer names eligible for activation tapping in the default architecture.
pub const TAP_LAYERS: [&str; 5] = ["encoder", "fc0", "relu0", "fc1", "relu1"];

/// encoder(obs→32, rectified), fc0, relu0, fc1, relu1, fc_out(→action).
pub fn default_architecture(obs_dim: usize, hidden: usize, action_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new("encoder", LayerKind::AffineRelu, obs_dim, hidden),
        LayerSpec::new("fc0", LayerKind::Affine, hidden, hidden),
        LayerSpec::new("relu0", LayerKind::Relu, hidden, hidden),
        LayerSpec::new("fc1", LayerKind::Affine, hidden, hidden),
        LayerSpec::new("relu1", LayerKind::Relu, hidden, hidden),
        LayerSpec::new("fc_out", LayerKind::Affine, hidden, action_dim),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    /// `out_dim x in_dim`; empty for relu layers.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn affine(spec: LayerSpec, weights: Matrix<T>, bias: Vec<T>) -> Self {
        Self { spec, weights, bias }
    }

    pub fn relu(name: &str, dim: usize) -> Self {
        Self {
            spec: LayerSpec::new(name, LayerKind::Relu, dim, dim),
            weights: Matrix::zeros(0, 0),
            bias: Vec::new(),
        }
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        match self.spec.kind {
            LayerKind::Relu => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.max(T::zero());
                }
            }
            kind => {
                self.weights.mul_vec_into(x, out);
                for (o, &b) in out.iter_mut().zip(&self.bias) {
                    *o = *o + b;
                }
                if kind == LayerKind::AffineRelu {
                    for o in out.iter_mut() {
                        *o = o.max(T::zero());
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub dr_config: String,
    pub seed: u64,
    /// Trainer iterations spent on this policy.
    pub budget: usize,
}

/// Deterministic feed-forward policy; the final layer output is clamped to
/// `[-action_bound, action_bound]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy<T> {
    pub id: String,
    layers: Vec<Layer<T>>,
    pub meta: PolicyMeta,
    /// `None` leaves the output unclamped (used for value networks).
    action_bound: Option<T>,
}

/// Activations keyed by layer name, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps<T>(Vec<(String, Vec<T>)>);

impl<T> Taps<T> {
    pub fn get(&self, layer: &str) -> Option<&[T]> {
        self.0.iter().find(|(n, _)| n == layer).map(|(_, v)| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.0.iter().map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reusable activation buffers for allocation-free inference.
#[derive(Debug, Clone)]
pub struct Scratch<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Scalar> MlpPolicy<T> {
    pub fn new(id: impl Into<String>, layers: Vec<Layer<T>>, meta: PolicyMeta) -> Result<Self, PolicyError> {
        if layers.is_empty() {
            return Err(PolicyError::Empty);
        }
        for (i, l) in layers.iter().enumerate() {
            let s = &l.spec;
            if s.kind == LayerKind::Relu && s.in_dim != s.out_dim {
                return Err(PolicyError::ReluShape(s.name.clone()));
            }
            if s.kind.has_params() {
                if l.weights.rows() != s.out_dim || l.weights.cols() != s.in_dim {
                    return Err(PolicyError::DimensionMismatch {
                        layer: s.name.clone(),
                        expected: s.out_dim * s.in_dim,
                        got: l.weights.rows() * l.weights.cols(),
                    });
                }
                if l.bias.len() != s.out_dim {
                    return Err(PolicyError::DimensionMismatch {
                        layer: s.name.clone(),
                        expected: s.out_dim,
                        got: l.bias.len(),
                    });
                }
                if !l.weights.all_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                    return Err(PolicyError::NonFiniteWeights(s.name.clone()));
                }
            }
            if i > 0 && layers[i - 1].spec.out_dim != s.in_dim {
                return Err(PolicyError::DimensionMismatch {
                    layer: s.name.clone(),
                    expected: layers[i - 1].spec.out_dim,
                    got: s.in_dim,
                });
            }
        }
        Ok(Self { id: id.into(), layers, meta, action_bound: Some(T::one()) })
    }

    /// Zero-initialized network with the given architecture.
    pub fn zeros(id: impl Into<String>, arch: &[LayerSpec], meta: PolicyMeta) -> Result<Self, PolicyError> {
        let layers = arch
            .iter()
            .map(|s| match s.kind {
                LayerKind::Relu => Layer { spec: s.clone(), weights: Matrix::zeros(0, 0), bias: Vec::new() },
                _ => Layer::affine(s.clone(), Matrix::zeros(s.out_dim, s.in_dim), vec![T::zero(); s.out_dim]),
            })
            .collect();
        Self::new(id, layers, meta)
    }

    /// He-style uniform initialization; the output layer is scaled down so the
    /// initial policy acts gently.
    pub fn random(
        id: impl Into<String>,
        arch: &[LayerSpec],
        meta: PolicyMeta,
        rng: &mut seeding::Rng,
    ) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(id, arch, meta)?;
        let last = p.layers.len() - 1;
        for (i, l) in p.layers.iter_mut().enumerate() {
            if !l.spec.kind.has_params() {
                continue;
            }
            let mut bound = (6.0 / l.spec.in_dim as f64).sqrt();
            if i == last {
                bound *= 0.1;
            }
            for w in l.weights.as_mut_slice() {
                *w = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn unbounded(mut self) -> Self {
        self.action_bound = None;
        self
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize, PolicyError> {
        self.layers
            .iter()
            .position(|l| l.spec.name == name)
            .ok_or_else(|| PolicyError::UnknownLayer(name.to_owned()))
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec.out_dim
    }

    pub fn layer_dim(&self, name: &str) -> Result<usize, PolicyError> {
        Ok(self.layers[self.layer_index(name)?].spec.out_dim)
    }

    pub fn scratch(&self) -> Scratch<T> {
        Scratch { bufs: self.layers.iter().map(|l| vec![T::zero(); l.spec.out_dim]).collect() }
    }

    fn check_obs(&self, obs: &[T]) -> Result<(), PolicyError> {
        if obs.len() != self.input_dim() {
            return Err(PolicyError::DimensionMismatch {
                layer: self.layers[0].spec.name.clone(),
                expected: self.input_dim(),
                got: obs.len(),
            });
        }
        if let Some(i) = obs.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteObservation(i));
        }
        Ok(())
    }

    /// Runs every layer into `scratch`, leaving each layer's output in place.
    /// Returns the clamped action. Inputs are assumed validated.
    pub fn run(&self, obs: &[T], scratch: &mut Scratch<T>) -> Vec<T> {
        for i in 0..self.layers.len() {
            let (prev, rest) = scratch.bufs.split_at_mut(i);
            let input = if i == 0 { obs } else { prev[i - 1].as_slice() };
            self.layers[i].apply(input, &mut rest[0]);
        }
        let out = scratch.bufs.last().expect("non-empty");
        match self.action_bound {
            Some(b) => out.iter().map(|v| v.max(-b).min(b)).collect(),
            None => out.clone(),
        }
    }

    /// Output of layer `idx` after the last [`MlpPolicy::run`] on `scratch`.
    pub fn tap<'a>(&self, scratch: &'a Scratch<T>, idx: usize) -> &'a [T] {
        &scratch.bufs[idx]
    }

    pub fn forward(&self, obs: &[T]) -> Result<Vec<T>, PolicyError> {
        self.check_obs(obs)?;
        Ok(self.run(obs, &mut self.scratch()))
    }

    /// Action plus every named layer's post-operation output.
    pub fn forward_with_taps(&self, obs: &[T]) -> Result<(Vec<T>, Taps<T>), PolicyError> {
        self.check_obs(obs)?;
        let mut scratch = self.scratch();
        let action = self.run(obs, &mut scratch);
        let taps = self.layers.iter().map(|l| l.spec.name.clone()).zip(scratch.bufs).collect();
        Ok((action, Taps(taps)))
    }

    /// Taps one layer for each observation row.
    pub fn tap_rows(&self, obs: &Matrix<T>, layer: &str) -> Result<ActivationDataset<T>, PolicyError> {
        let idx = self.layer_index(layer)?;
        let mut scratch = self.scratch();
        let dim = self.layers[idx].spec.out_dim;
        let mut out = Matrix::zeros(obs.rows(), dim);
        for (i, row) in obs.iter_rows().enumerate() {
            self.check_obs(row)?;
            self.run(row, &mut scratch);
            out.row_mut(i).copy_from_slice(&scratch.bufs[idx]);
        }
        Ok(ActivationDataset::new(layer, out)?)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.spec.n_params()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn flat_params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in self.layers.iter().filter(|l| l.spec.kind.has_params()) {
            v.extend_from_slice(l.weights.as_slice());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat_params(&mut self, params: &[T]) -> Result<(), PolicyError> {
        if params.len() != self.n_params() {
            return Err(PolicyError::DimensionMismatch {
                layer: "<all>".into(),
                expected: self.n_params(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::NonFiniteWeights("<flat>".into()));
        }
        let mut off = 0;
        for l in self.layers.iter_mut().filter(|l| l.spec.kind.has_params()) {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Text weights: per layer `layer <name> <kind> <in> <out>`, then for
    /// parameterized layers `out` weight rows and one bias row.
    pub fn weights_to_string(&self) -> String {
        let mut s = String::new();
        for l in &self.layers {
            let sp = &l.spec;
            s.push_str(&format!("layer {} {} {} {}\n", sp.name, sp.kind, sp.in_dim, sp.out_dim));
            if sp.kind.has_params() {
                for row in l.weights.iter_rows() {
                    push_row(&mut s, row);
                }
                push_row(&mut s, &l.bias);
            }
        }
        s
    }

    pub fn from_weights_str(id: impl Into<String>, text: &str, meta: PolicyMeta) -> Result<Self, PolicyError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut layers = Vec::new();
        while let Some((ln, header)) = lines.next() {
            let perr = |msg: String| PolicyError::Parse { line: ln + 1, msg };
            let f: Vec<&str> = header.split_whitespace().collect();
            if f.len() != 5 || f[0] != "layer" {
                return Err(perr(format!("expected layer header, got `{header}`")));
            }
            let kind: LayerKind = f[2].parse().map_err(perr)?;
            let in_dim: usize = f[3].parse().map_err(|e| perr(format!("{e}")))?;
            let out_dim: usize = f[4].parse().map_err(|e| perr(format!("{e}")))?;
            let spec = LayerSpec::new(f[1], kind, in_dim, out_dim);
            if !kind.has_params() {
                layers.push(Layer { spec, weights: Matrix::zeros(0, 0), bias: Vec::new() });
                continue;
            }
            let mut read_row = |want: usize| -> Result<Vec<T>, PolicyError> {
                let (ln, line) = lines.next().ok_or(PolicyError::Parse { line: ln + 1, msg: "truncated layer".into() })?;
                let row = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map(T::of))
                    .collect::<Result<Vec<T>, _>>()
                    .map_err(|e| PolicyError::Parse { line: ln + 1, msg: e.to_string() })?;
                if row.len() != want {
                    return Err(PolicyError::Parse {
                        line: ln + 1,
                        msg: format!("expected {want} values, got {}", row.len()),
                    });
                }
                Ok(row)
            };
            let mut rows = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                rows.push(read_row(in_dim)?);
            }
            let bias = read_row(out_dim)?;
            let weights = if out_dim == 0 { Matrix::zeros(0, in_dim) } else { Matrix::from_rows(&rows).expect("checked widths") };
            layers.push(Layer::affine(spec, weights, bias));
        }
        Self::new(id, layers, meta)
    }
}

fn push_row<T: Scalar>(s: &mut String, row: &[T]) {
    let parts: Vec<String> = row.iter().map(|v| crate::io::fmt_f64(v.as_f64())).collect();
    s.push_str(&parts.join(" "));
    s.push('\n');
}

impl Agent for MlpPolicy<f64> {
    fn agent_id(&self) -> &str {
        &self.id
    }

    fn controller(&self) -> Box<dyn FnMut(&[f64], &State) -> Action + '_> {
        let mut scratch = self.scratch();
        Box::new(move |obs, _| {
            let a = self.run(obs, &mut scratch);
            [a[0], a[1], a[2]]
        })
    }
}

/// JSON manifest describing a stored policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub id: String,
    pub dr_config: String,
    pub seed: u64,
    pub weights_file: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub budget: usize,
}

impl<T: Scalar> MlpPolicy<T> {
    pub fn manifest(&self, weights_file: &str) -> PolicyManifest {
        PolicyManifest {
            id: self.id.clone(),
            dr_config: self.meta.dr_config.clone(),
            seed: self.meta.seed,
            weights_file: weights_file.to_owned(),
            layers: self.specs(),
            budget: self.meta.budget,
        }
    }
}

/// Runs `policy` in the testbed under its training domain distribution and
/// records the `layer` activation at every step until `n_obs` rows exist.
pub fn collect_activations(
    policy: &MlpPolicy<f64>,
    source: &DomainSource,
    n_obs: usize,
    layer: &str,
    seed: u64,
) -> Result<ActivationDataset<f64>, PolicyError> {
    let idx = policy.layer_index(layer)?;
    let dim = policy.layers[idx].spec.out_dim;
    let mut out = Matrix::zeros(n_obs, dim);
    let mut filled = 0;
    let mut scratch = policy.scratch();
    let mut episode = 0u64;
    while filled < n_obs {
        let mut rng = seeding::rng_from(&[seed, seeding::hash_str(&policy.id), episode]);
        let init = testbed::sample_initial_state(&mut rng);
        let mut controller = |obs: &[f64], _: &State| -> [f64; testbed::ACTION_DIM] {
            let a = policy.run(obs, &mut scratch);
            if filled < n_obs {
                out.row_mut(filled).copy_from_slice(&scratch.bufs[idx]);
                filled += 1;
            }
            [a[0], a[1], a[2]]
        };
        testbed::rollout_with_source(&mut controller, init, source, testbed::N_STEPS, &mut rng);
        episode += 1;
    }
    Ok(ActivationDataset::new(layer, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer(rng_seed: u64) -> MlpPolicy<f64> {
        let arch = vec![
            LayerSpec::new("fc0", LayerKind::Affine, 4, 6),
            LayerSpec::new("relu0", LayerKind::Relu, 6, 6),
            LayerSpec::new("fc_out", LayerKind::Affine, 6, 3),
        ];
        MlpPolicy::random("p", &arch, PolicyMeta::default(), &mut seeding::rng_from(&[rng_seed])).unwrap()
    }

    #[test]
    fn zero_network_outputs_zeros() {
        let arch = default_architecture(24, 32, 3);
        let p = MlpPolicy::<f64>::zeros("z", &arch, PolicyMeta::default()).unwrap();
        let obs: Vec<f64> = (0..24).map(|i| i as f64 - 7.0).collect();
        let (a, taps) = p.forward_with_taps(&obs).unwrap();
        assert_eq!(a, vec![0.0; 3]);
        assert_eq!(taps.len(), 6);
        for (_, t) in taps.iter() {
            assert!(t.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_layer_taps_observation() {
        let spec = LayerSpec::new("fc0", LayerKind::Affine, 3, 3);
        let p = MlpPolicy::new("id", vec![Layer::affine(spec, Matrix::identity(3), vec![0.0; 3])], PolicyMeta::default())
            .unwrap();
        let obs = [0.25, -0.5, 0.75];
        let (a, taps) = p.forward_with_taps(&obs).unwrap();
        assert_eq!(taps.get("fc0").unwrap(), &obs);
        assert_eq!(a, obs.to_vec());
    }

    #[test]
    fn relu_tap_recomputed_from_serialized_weights() {
        let p = two_layer(7);
        let text = p.weights_to_string();
        let q = MlpPolicy::<f64>::from_weights_str("p", &text, PolicyMeta::default()).unwrap();
        assert_eq!(p, q);
        let obs = [0.3, -1.2, 0.8, 0.05];
        let (_, taps) = q.forward_with_taps(&obs).unwrap();
        // Parse the fc0 block by hand and redo the arithmetic.
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("layer fc0 affine 4 6"));
        let rows: Vec<Vec<f64>> =
            lines[1..8].iter().map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect()).collect();
        for j in 0..6 {
            let pre: f64 = rows[j].iter().zip(&obs).map(|(w, x)| w * x).sum::<f64>() + rows[6][j];
            assert!((taps.get("fc0").unwrap()[j] - pre).abs() < 1e-12);
            assert!((taps.get("relu0").unwrap()[j] - pre.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn action_is_clamped() {
        let spec = LayerSpec::new("fc_out", LayerKind::Affine, 1, 3);
        let w = Matrix::from_rows(&[vec![10.0], vec![-10.0], vec![0.5]]).unwrap();
        let p = MlpPolicy::new("c", vec![Layer::affine(spec, w, vec![0.0; 3])], PolicyMeta::default()).unwrap();
        assert_eq!(p.forward(&[1.0]).unwrap(), vec![1.0, -1.0, 0.5]);
    }

    #[test]
    fn validation_errors() {
        let p = two_layer(1);
        assert!(matches!(p.forward(&[1.0]), Err(PolicyError::DimensionMismatch { .. })));
        assert!(matches!(p.forward(&[f64::NAN, 0.0, 0.0, 0.0]), Err(PolicyError::NonFiniteObservation(0))));
        assert_eq!(p.layer_index("nope"), Err(PolicyError::UnknownLayer("nope".into())));
        let mut flat = p.flat_params();
        flat[0] = f64::INFINITY;
        let mut q = p.clone();
        assert!(matches!(q.set_flat_params(&flat), Err(PolicyError::NonFiniteWeights(_))));
        let bad = vec![LayerSpec::new("r", LayerKind::Relu, 2, 3)];
        assert!(matches!(MlpPolicy::<f64>::zeros("b", &bad, PolicyMeta::default()), Err(PolicyError::ReluShape(_))));
    }

    #[test]
    fn flat_params_round_trip() {
        let p = two_layer(3);
        let mut q = MlpPolicy::<f64>::zeros("p", &p.specs(), PolicyMeta::default()).unwrap();
        q.set_flat_params(&p.flat_params()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.n_params(), 4 * 6 + 6 + 6 * 3 + 3);
    }

    #[test]
    fn single_precision_forward() {
        let arch = default_architecture(4, 5, 3);
        let p = MlpPolicy::<f32>::random("f", &arch, PolicyMeta::default(), &mut seeding::rng_from(&[2])).unwrap();
        let (_, taps) = p.forward_with_taps(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let fc0 = taps.get("fc0").unwrap();
        let relu0 = taps.get("relu0").unwrap();
        assert!(fc0.iter().zip(relu0).all(|(a, b)| a.max(0.0) == *b));
    }
}
