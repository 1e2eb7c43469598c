//! Parametric stand-in for a diffusion LM's first-step confidence.
//!
//! The mean confidence at length `L` is the bias curve lifted by a peak at
//! the oracle length, plus optional noise:
//!
//! ```text
//! μ(L) = clip( B(L)·(1 + A·peak(L − L*; σ)) ⊕ η_L , [ε, 1] )
//! ```
//!
//! where `⊕` is `+` for additive noise and `·(1 + η)` for multiplicative
//! noise. Per-position values scatter symmetrically around `μ(L)` and are
//! recentred so their mean is `μ(L)` to rounding.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BackendError, Capabilities, Probe, ProbeBackend};
use crate::confidence::calibrate;
use crate::rng::keyed_stream;
use crate::types::{BiasModel, DomainTag, InfillTask};

/// Smallest confidence the simulator will emit.
pub const CLIP_FLOOR: f64 = 1e-6;

fn default_spread() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakShape {
    /// `exp(−x²/(2σ²))`
    #[default]
    Gaussian,
    /// `1/(1 + (x/σ)²)`; heavy tails keep the landscape strictly unimodal
    /// in floating point far from the peak.
    Lorentzian,
}

impl PeakShape {
    fn eval(self, offset: f64, width: f64) -> f64 {
        let z = offset / width;
        match self {
            PeakShape::Gaussian => (-0.5 * z * z).exp(),
            PeakShape::Lorentzian => 1.0 / (1.0 + z * z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLandscapeSpec {
    /// The "true" length bias of the simulated model.
    pub bias: BiasModel,
    /// Used for tasks that do not carry their own oracle length.
    pub oracle_length: usize,
    pub peak_amplitude: f64,
    pub peak_width: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
    #[serde(default)]
    pub peak_shape: PeakShape,
    /// Half-width of the per-position scatter around the mean.
    #[serde(default = "default_spread")]
    pub position_spread: f64,
}

impl SyntheticLandscapeSpec {
    pub fn new(
        bias: BiasModel,
        oracle_length: usize,
        peak_amplitude: f64,
        peak_width: f64,
    ) -> Self {
        SyntheticLandscapeSpec {
            bias,
            oracle_length,
            peak_amplitude,
            peak_width,
            noise_sigma: 0.0,
            seed: 0,
            noise_kind: NoiseKind::Additive,
            peak_shape: PeakShape::Gaussian,
            position_spread: default_spread(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(format!("synthetic spec: {m}")));
        self.bias
            .validate()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        if self.oracle_length == 0 {
            return bad("oracle_length must be >= 1");
        }
        if !(self.peak_amplitude >= 0.0 && self.peak_amplitude.is_finite()) {
            return bad("peak_amplitude must be >= 0");
        }
        if !(self.peak_width > 0.0 && self.peak_width.is_finite()) {
            return bad("peak_width must be > 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.position_spread >= 0.0 && self.position_spread.is_finite()) {
            return bad("position_spread must be >= 0");
        }
        Ok(())
    }

    /// Noise-free, unclipped mean at `length`.
    pub fn landscape(&self, oracle_length: usize, length: usize) -> f64 {
        let offset = length as f64 - oracle_length as f64;
        self.bias.evaluate(length)
            * (1.0 + self.peak_amplitude * self.peak_shape.eval(offset, self.peak_width))
    }

    /// Returns `(μ(L), clipped)` and leaves `rng` positioned after the noise draw.
    fn target_mean(
        &self,
        oracle_length: usize,
        length: usize,
        rng: &mut ChaCha8Rng,
    ) -> (f64, bool) {
        let clean = self.landscape(oracle_length, length);
        let raw = if self.noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            let eta = self.noise_sigma * z;
            match self.noise_kind {
                NoiseKind::Additive => clean + eta,
                NoiseKind::Multiplicative => clean * (1.0 + eta),
            }
        } else {
            clean
        };
        let clipped = !(CLIP_FLOOR..=1.0).contains(&raw);
        (raw.clamp(CLIP_FLOOR, 1.0), clipped)
    }

    fn confidences(&self, task_id: &str, oracle_length: usize, length: usize) -> (Vec<f64>, bool) {
        let mut rng = keyed_stream(self.seed, task_id, length);
        let (mu, clipped) = self.target_mean(oracle_length, length, &mut rng);
        if length == 1 {
            return (vec![mu], clipped);
        }
        let draws: Vec<f64> = (0..length).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let centre = draws.iter().sum::<f64>() / length as f64;
        let centred: Vec<f64> = draws.iter().map(|u| u - centre).collect();
        // Largest scale that keeps every position inside [ε, 1].
        let scale = centred.iter().fold(self.position_spread, |s, &c| {
            if c > 0.0 {
                s.min((1.0 - mu) / c)
            } else if c < 0.0 {
                s.min((mu - CLIP_FLOOR) / -c)
            } else {
                s
            }
        });
        let values = centred
            .iter()
            .map(|c| (mu + scale * c).clamp(CLIP_FLOOR, 1.0))
            .collect();
        (values, clipped)
    }
}

/// Simulator backend. Tasks may carry their own landscape; all others use
/// the default spec with their own oracle length when present.
#[derive(Debug)]
pub struct SyntheticBackend {
    default: SyntheticLandscapeSpec,
    per_task: HashMap<String, SyntheticLandscapeSpec>,
    capabilities: Capabilities,
    clipped: AtomicU64,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticLandscapeSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        Ok(SyntheticBackend {
            default: spec,
            per_task: HashMap::new(),
            capabilities: Capabilities {
                model_id: "synthetic".to_string(),
                max_length: u32::MAX as usize,
                supports_decode: true,
                supports_tokenize: true,
                max_concurrency: 64,
            },
            clipped: AtomicU64::new(0),
        })
    }

    pub fn with_task_spec(
        mut self,
        task_id: impl Into<String>,
        spec: SyntheticLandscapeSpec,
    ) -> Result<Self, BackendError> {
        spec.validate()?;
        self.per_task.insert(task_id.into(), spec);
        Ok(self)
    }

    pub fn spec_for(&self, task_id: &str) -> &SyntheticLandscapeSpec {
        self.per_task.get(task_id).unwrap_or(&self.default)
    }

    fn oracle_for(&self, task: &InfillTask) -> usize {
        match self.per_task.get(&task.task_id) {
            Some(spec) => spec.oracle_length,
            None => task.oracle_length.unwrap_or(self.default.oracle_length),
        }
    }

    /// Number of probes whose target mean had to be clipped into `[ε, 1]`.
    pub fn clipped_probes(&self) -> u64 {
        self.clipped.load(Ordering::Relaxed)
    }

    /// Per-position confidences at `length`, without touching the counter.
    pub fn synthetic_probe(&self, task: &InfillTask, length: usize) -> Vec<f64> {
        self.spec_for(&task.task_id)
            .confidences(&task.task_id, self.oracle_for(task), length)
            .0
    }
}

impl ProbeBackend for SyntheticBackend {
    fn backend_id(&self) -> &str {
        "synthetic"
    }

    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn probe(&self, task: &InfillTask, length: usize) -> Result<Probe, BackendError> {
        if length == 0 {
            return Err(BackendError::Contract("mask length must be >= 1".into()));
        }
        let spec = self.spec_for(&task.task_id);
        let (values, clipped) = spec.confidences(&task.task_id, self.oracle_for(task), length);
        if clipped {
            self.clipped.fetch_add(1, Ordering::Relaxed);
        }
        Probe::from_confidences(length, values)
    }

    /// Emits `length` whitespace tokens: the ground truth cut short or
    /// repeated to fill the span, mimicking truncation and redundancy.
    fn decode(&self, task: &InfillTask, length: usize) -> Result<String, BackendError> {
        let words: Vec<String> = match &task.ground_truth_middle {
            Some(gt) if gt.split_whitespace().next().is_some() => {
                gt.split_whitespace().map(str::to_string).collect()
            }
            _ => vec!["<unk>".to_string()],
        };
        Ok((0..length)
            .map(|i| words[i % words.len()].as_str())
            .collect::<Vec<_>>()
            .join(" "))
    }

    fn tokenize(&self, text: &str) -> Result<usize, BackendError> {
        Ok(text.split_whitespace().count())
    }
}

const WORDS: [&str; 16] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
    "lambda", "mu", "nu", "xi", "omicron", "pi",
];

/// `n` synthetic tasks whose ground truth has exactly `oracle_length`
/// whitespace tokens, with oracle lengths drawn uniformly from `oracle_range`.
pub fn synthetic_tasks(n: usize, seed: u64, oracle_range: (usize, usize)) -> Vec<InfillTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let oracle = rng.gen_range(oracle_range.0..=oracle_range.1);
            let middle: Vec<&str> = (0..oracle)
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect();
            InfillTask::new(
                format!("syn-{i:05}"),
                format!("prefix {i}"),
                format!("suffix {i}"),
                DomainTag::Synthetic,
            )
            .expect("non-empty id")
            .with_ground_truth(middle.join(" "))
            .with_oracle_length(oracle)
            .expect("oracle >= 1")
        })
        .collect()
}

/// Parameter ranges for a randomized landscape suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRanges {
    pub amplitude: (f64, f64),
    pub width: (f64, f64),
    pub oracle: (usize, usize),
    pub l_inits: Vec<usize>,
    pub l_max: usize,
}

impl Default for SuiteRanges {
    fn default() -> Self {
        SuiteRanges {
            amplitude: (0.1, 0.8),
            width: (0.5, 3.0),
            oracle: (3, 40),
            l_inits: vec![4, 8, 16, 32],
            l_max: 64,
        }
    }
}

/// One member of a landscape suite.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub task: InfillTask,
    pub l_init: usize,
}

/// Seeded suite of landscapes sharing one template (bias, shape, noise).
///
/// Draws are rejected until the noise-free calibrated curve over
/// `[1, l_max]` is strictly unimodal with its peak at the oracle length and
/// no clipping occurs. Initial lengths cycle through `ranges.l_inits`.
#[derive(Debug)]
pub struct SyntheticSuite {
    pub backend: SyntheticBackend,
    pub cases: Vec<SuiteCase>,
    /// Draws rejected before `cases` was filled.
    pub rejected: usize,
}

impl SyntheticSuite {
    pub fn sample(
        n: usize,
        seed: u64,
        ranges: &SuiteRanges,
        template: &SyntheticLandscapeSpec,
    ) -> Result<Self, BackendError> {
        if ranges.l_inits.is_empty() {
            return Err(BackendError::Config(
                "suite needs at least one l_init".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backend = SyntheticBackend::new(template.clone())?;
        let mut cases = Vec::with_capacity(n);
        let mut rejected = 0usize;
        while cases.len() < n {
            let mut spec = template.clone();
            spec.peak_amplitude = rng.gen_range(ranges.amplitude.0..=ranges.amplitude.1);
            spec.peak_width = rng.gen_range(ranges.width.0..=ranges.width.1);
            spec.oracle_length = rng.gen_range(ranges.oracle.0..=ranges.oracle.1);
            spec.seed = rng.gen();
            let id = format!("suite-{:05}", cases.len());
            if !strictly_unimodal(&spec, &id, ranges.l_max) {
                rejected += 1;
                if rejected > 1000 * n.max(1) {
                    return Err(BackendError::Config(
                        "suite ranges admit no unimodal landscape".into(),
                    ));
                }
                continue;
            }
            let task = InfillTask::new(&id, "", "", DomainTag::Synthetic)
                .expect("non-empty id")
                .with_oracle_length(spec.oracle_length)
                .expect("oracle >= 1");
            let l_init = ranges.l_inits[cases.len() % ranges.l_inits.len()];
            backend = backend.with_task_spec(&id, spec)?;
            cases.push(SuiteCase { task, l_init });
        }
        Ok(SyntheticSuite {
            backend,
            cases,
            rejected,
        })
    }
}

/// Noise-free calibrated curve through the probe path is strictly unimodal on
/// `[1, l_max]`, peaks at the oracle length and never clips.
fn strictly_unimodal(spec: &SyntheticLandscapeSpec, task_id: &str, l_max: usize) -> bool {
    let mut clean = spec.clone();
    clean.noise_sigma = 0.0;
    let mut curve = Vec::with_capacity(l_max);
    for length in 1..=l_max {
        if clean.landscape(spec.oracle_length, length) > 1.0 {
            return false;
        }
        let (values, clipped) = clean.confidences(task_id, spec.oracle_length, length);
        if clipped {
            return false;
        }
        let phi = match Probe::from_confidences(length, values) {
            Ok(p) => p.phi,
            Err(_) => return false,
        };
        match calibrate(phi, length, &spec.bias) {
            Ok(c) => curve.push(c),
            Err(_) => return false,
        }
    }
    let peak = spec.oracle_length.min(l_max) - 1;
    curve[..=peak].windows(2).all(|w| w[0] < w[1]) && curve[peak..].windows(2).all(|w| w[0] > w[1])
}
