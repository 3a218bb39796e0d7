//! Domain parameters, randomization configurations and domain sets.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{INFO_ROWS, OBS_DIM, STATE_DIM};
use crate::seeding::{self, Rng};

pub const MAX_DRAG: f64 = 0.9;
/// Half-width of the heavy ranges on the state-dependent channels. Larger
/// values make the goal radius unreachable for any observation-based policy.
pub const INFO_JITTER: f64 = 0.02;
/// Magnitude of the nominal state-dependent rendering weights.
pub const INFO_SCALE: f64 = 3.0;
/// Seed of the fixed nominal rendering.
const NOMINAL_SEED: u64 = 0x6E6F_6D69_6E61_6C;

/// One environment variation: how the state is rendered and how the agent moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    /// `OBS_DIM` rows mapping `[agent x, agent y, target x, target y]` to observation channels.
    pub render_matrix: Vec<[f64; STATE_DIM]>,
    pub render_bias: Vec<f64>,
    /// Global observation scale (lighting analog).
    pub gain: f64,
    pub noise_scale: f64,
    /// Fraction of each commanded displacement lost to friction.
    pub drag: f64,
}

impl DomainParams {
    /// The nominal simulator: the first `INFO_ROWS` channels encode the state,
    /// the rest are fixed "texture" channels with no state dependence.
    pub fn nominal() -> Self {
        let mut rng = seeding::rng_from(&[NOMINAL_SEED]);
        let mut render_matrix = vec![[0.0; STATE_DIM]; OBS_DIM];
        let mut render_bias = vec![0.0; OBS_DIM];
        for (i, row) in render_matrix.iter_mut().enumerate().take(INFO_ROWS) {
            // Alternate between agent-heavy and target-heavy channels so the
            // relative position is linearly recoverable.
            for (j, w) in row.iter_mut().enumerate() {
                *w = INFO_SCALE * rng.random_range(-1.0..1.0);
                if (j < 2) == (i % 2 == 0) {
                    *w *= 2.0;
                }
            }
        }
        for b in render_bias.iter_mut().skip(INFO_ROWS) {
            *b = rng.random_range(-1.0..1.0);
        }
        Self { render_matrix, render_bias, gain: 1.0, noise_scale: 0.0, drag: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        self.render_matrix.len() == OBS_DIM
            && self.render_bias.len() == OBS_DIM
            && self.render_matrix.iter().flatten().all(|v| v.is_finite())
            && self.render_bias.iter().all(|v| v.is_finite())
            && self.gain.is_finite()
            && self.noise_scale.is_finite()
            && self.noise_scale >= 0.0
            && (0.0..=MAX_DRAG).contains(&self.drag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.hi > self.lo { self.lo + (self.hi - self.lo) * rng.random::<f64>() } else { self.lo }
    }
}

/// Per-entry sampling intervals for heavy randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRanges {
    pub render_matrix: Vec<[Interval; STATE_DIM]>,
    pub render_bias: Vec<Interval>,
    pub gain: Interval,
    pub noise_scale: Interval,
    pub drag: Interval,
}

/// Widening factors applied on top of the default heavy ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Widen {
    pub gain: f64,
    pub noise: f64,
    pub texture: f64,
}

impl Default for Widen {
    fn default() -> Self {
        Self { gain: 1.0, noise: 1.0, texture: 1.0 }
    }
}

impl DomainRanges {
    /// Default heavy ranges around the nominal domain.
    pub fn heavy() -> Self {
        Self::heavy_widened(Widen::default())
    }

    pub fn heavy_widened(w: Widen) -> Self {
        let nominal = DomainParams::nominal();
        let render_matrix = nominal
            .render_matrix
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let half = if i < INFO_ROWS { INFO_JITTER } else { 0.1 * w.texture };
                row.map(|v| Interval::new(v - half, v + half))
            })
            .collect();
        let render_bias = (0..OBS_DIM)
            .map(|i| if i < INFO_ROWS { Interval::new(-INFO_JITTER, INFO_JITTER) } else { Interval::new(-w.texture, w.texture) })
            .collect();
        Self {
            render_matrix,
            render_bias,
            gain: Interval::new(1.0 - 0.2 * w.gain, 1.0 + 0.2 * w.gain),
            noise_scale: Interval::new(0.0, 0.05 * w.noise),
            drag: Interval::new(0.0, 0.2),
        }
    }

    /// Only the texture channels vary; everything else stays nominal.
    pub fn texture_only(texture: f64) -> Self {
        let nominal = DomainParams::nominal();
        let point = |v: f64| Interval::new(v, v);
        Self {
            render_matrix: nominal.render_matrix.iter().map(|row| row.map(point)).collect(),
            render_bias: (0..OBS_DIM)
                .map(|i| if i < INFO_ROWS { point(nominal.render_bias[i]) } else { Interval::new(-texture, texture) })
                .collect(),
            gain: point(nominal.gain),
            noise_scale: point(nominal.noise_scale),
            drag: point(nominal.drag),
        }
    }

    pub fn contains(&self, d: &DomainParams) -> bool {
        d.render_matrix.len() == self.render_matrix.len()
            && d.render_matrix
                .iter()
                .zip(&self.render_matrix)
                .all(|(row, iv)| row.iter().zip(iv).all(|(&v, i)| i.contains(v)))
            && d.render_bias.iter().zip(&self.render_bias).all(|(&v, i)| i.contains(v))
            && self.gain.contains(d.gain)
            && self.noise_scale.contains(d.noise_scale)
            && self.drag.contains(d.drag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrMode {
    Heavy,
    Mild,
    Off,
}

/// A domain-randomization configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DRConfig {
    pub name: String,
    pub mode: DrMode,
    /// Steps between domain changes during training; 0 = once per episode at reset.
    pub frequency: u32,
    pub perturbation_scale: f64,
    pub nominal: DomainParams,
    pub ranges: DomainRanges,
    /// Draw training domains from the shared training set rather than fresh samples.
    #[serde(default)]
    pub use_train_pool: bool,
}

pub const FREQUENCIES: [u32; 4] = [0, 1, 2, 5];
pub const MILD_SCALE: f64 = 0.1;

impl DRConfig {
    pub fn heavy(name: &str, frequency: u32, ranges: DomainRanges) -> Self {
        Self {
            name: name.to_owned(),
            mode: DrMode::Heavy,
            frequency,
            perturbation_scale: 0.0,
            nominal: DomainParams::nominal(),
            ranges,
            use_train_pool: false,
        }
    }

    pub fn mild(name: &str, frequency: u32, scale: f64) -> Self {
        Self {
            mode: DrMode::Mild,
            perturbation_scale: scale,
            ..Self::heavy(name, frequency, DomainRanges::heavy())
        }
    }

    pub fn off() -> Self {
        Self { mode: DrMode::Off, ..Self::heavy("off", 0, DomainRanges::heavy()) }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !FREQUENCIES.contains(&self.frequency) {
            return Err(format!("{}: frequency {} not in {{0,1,2,5}}", self.name, self.frequency));
        }
        if self.mode == DrMode::Mild && !(self.perturbation_scale > 0.0) {
            return Err(format!("{}: mild mode needs perturbation_scale > 0", self.name));
        }
        Ok(())
    }
}

/// Draws one domain according to `cfg`.
pub fn sample_domain(cfg: &DRConfig, rng: &mut Rng) -> DomainParams {
    match cfg.mode {
        DrMode::Off => cfg.nominal.clone(),
        DrMode::Heavy => {
            let r = &cfg.ranges;
            DomainParams {
                render_matrix: r.render_matrix.iter().map(|row| row.map(|i| i.sample(rng))).collect(),
                render_bias: r.render_bias.iter().map(|i| i.sample(rng)).collect(),
                gain: r.gain.sample(rng),
                noise_scale: r.noise_scale.sample(rng),
                drag: r.drag.sample(rng),
            }
        }
        DrMode::Mild => {
            let s = cfg.perturbation_scale;
            let n = &cfg.nominal;
            let mut jitter = |v: f64| if s > 0.0 { v + s * rng.random_range(-1.0..1.0) } else { v };
            DomainParams {
                render_matrix: n.render_matrix.iter().map(|row| row.map(&mut jitter)).collect(),
                render_bias: n.render_bias.iter().map(|&v| jitter(v)).collect(),
                gain: jitter(n.gain),
                noise_scale: jitter(n.noise_scale).max(0.0),
                drag: jitter(n.drag).clamp(0.0, MAX_DRAG),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDomain {
    pub id: String,
    pub params: DomainParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSets {
    pub train: Vec<NamedDomain>,
    pub validation: Vec<NamedDomain>,
    pub real: NamedDomain,
}

pub const N_TRAIN: usize = 50;
pub const N_VAL: usize = 20;
/// Distance of an out-of-support real gain beyond the heavy gain range.
pub const OUT_OF_SUPPORT_GAIN_MARGIN: f64 = 0.25;

/// Draws the shared training and validation domain sets and the real-analog domain.
pub fn make_domain_sets(seed: u64, ranges: &DomainRanges, out_of_support: bool) -> DomainSets {
    let heavy = DRConfig::heavy("heavy", 0, ranges.clone());
    let draw = |tag: u64, i: usize| sample_domain(&heavy, &mut seeding::rng_from(&[seed, tag, i as u64]));
    let train = (0..N_TRAIN).map(|i| NamedDomain { id: format!("train-{i:03}"), params: draw(1, i) }).collect();
    let validation = (0..N_VAL).map(|i| NamedDomain { id: format!("val-{i:03}"), params: draw(2, i) }).collect();
    let mut real = draw(3, 0);
    if out_of_support {
        real.gain = ranges.gain.hi + OUT_OF_SUPPORT_GAIN_MARGIN;
    }
    DomainSets { train, validation, real: NamedDomain { id: "real".into(), params: real } }
}

/// `N_VAL` domains drawn from an arbitrary configuration (used for mild and off validation).
pub fn validation_set_for(cfg: &DRConfig, seed: u64) -> Vec<NamedDomain> {
    if cfg.mode == DrMode::Off {
        return vec![NamedDomain { id: "nominal".into(), params: cfg.nominal.clone() }];
    }
    (0..N_VAL)
        .map(|i| NamedDomain {
            id: format!("{}-val-{i:03}", cfg.name),
            params: sample_domain(cfg, &mut seeding::rng_from(&[seed, 4, i as u64])),
        })
        .collect()
}

/// Where a policy's training (and activation-collection) domains come from.
#[derive(Debug, Clone)]
pub struct DomainSource {
    pub config: DRConfig,
    pub pool: Option<Arc<Vec<DomainParams>>>,
}

impl DomainSource {
    pub fn new(config: DRConfig) -> Self {
        Self { config, pool: None }
    }

    pub fn with_pool(config: DRConfig, pool: Arc<Vec<DomainParams>>) -> Self {
        Self { config, pool: Some(pool) }
    }

    pub fn frequency(&self) -> u32 {
        self.config.frequency
    }

    pub fn draw(&self, rng: &mut Rng) -> DomainParams {
        match &self.pool {
            Some(pool) if !pool.is_empty() && self.config.mode == DrMode::Heavy => {
                pool[rng.random_range(0..pool.len())].clone()
            }
            _ => sample_domain(&self.config, rng),
        }
    }
}

/// The preset suite: twenty configurations mirroring the usual DR categories.
pub fn preset_suite() -> Vec<DRConfig> {
    let mut out = Vec::new();
    for f in FREQUENCIES {
        let mut c = DRConfig::heavy(&format!("heavy-freq-{f}"), f, DomainRanges::heavy());
        c.use_train_pool = true;
        out.push(c);
    }
    for f in FREQUENCIES {
        out.push(DRConfig::mild(&format!("mild-freq-{f}"), f, MILD_SCALE));
    }
    out.push(DRConfig::heavy("heavy-texture-only", 1, DomainRanges::texture_only(1.0)));
    out.push(DRConfig::heavy("heavy-texture-narrow", 1, DomainRanges::heavy_widened(Widen { texture: 0.5, ..Widen::default() })));
    let mut lights_on = DomainRanges::heavy();
    lights_on.gain = Interval::new(1.0, lights_on.gain.hi);
    out.push(DRConfig::heavy("heavy-lights-on", 1, lights_on));
    // Stronger randomization of each property alone and in every combination.
    let sweep: [(&str, Widen); 8] = [
        ("gain", Widen { gain: 2.0, ..Widen::default() }),
        ("noise", Widen { noise: 2.0, ..Widen::default() }),
        ("texture", Widen { texture: 1.5, ..Widen::default() }),
        ("gain-noise", Widen { gain: 2.0, noise: 2.0, ..Widen::default() }),
        ("gain-texture", Widen { gain: 2.0, texture: 1.5, ..Widen::default() }),
        ("noise-texture", Widen { noise: 2.0, texture: 1.5, ..Widen::default() }),
        ("all", Widen { gain: 2.0, noise: 2.0, texture: 1.5 }),
        ("all-strong", Widen { gain: 2.5, noise: 3.0, texture: 2.0 }),
    ];
    for (tag, w) in sweep {
        out.push(DRConfig::heavy(&format!("heavy-wide-{tag}"), 1, DomainRanges::heavy_widened(w)));
    }
    out.push(DRConfig::off());
    out
}

/// Names of the widened-range presets that change a single property.
pub const SINGLE_PROPERTY_SWEEP: [&str; 3] = ["heavy-wide-gain", "heavy-wide-noise", "heavy-wide-texture"];

pub fn preset(name: &str) -> Option<DRConfig> {
    preset_suite().into_iter().find(|c| c.name == name)
}
