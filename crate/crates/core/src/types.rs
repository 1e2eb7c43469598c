//! Shared value types.
//!
//! Every type here is an immutable value once constructed. Constructors and
//! deserialization both run the same validation, so a value that exists is a
//! value that satisfies its invariants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance when checking a stored `phi` against its confidences.
pub const PHI_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("task_id must be non-empty")]
    EmptyTaskId,
    #[error("duplicate task_id `{0}`")]
    DuplicateTaskId(String),
    #[error("length must be >= 1")]
    ZeroLength,
    #[error("oracle_length must be >= 1 (task `{0}`)")]
    ZeroOracleLength(String),
    #[error("confidence {value} at position {position} is outside (0, 1]")]
    ConfidenceOutOfRange { position: usize, value: f64 },
    #[error("expected {expected} confidences, found {found}")]
    ConfidenceCount { expected: usize, found: usize },
    #[error("phi {phi} is outside (0, 1]")]
    PhiOutOfRange { phi: f64 },
    #[error("phi {stored} disagrees with the mean of confidences {mean}")]
    PhiMismatch { stored: f64, mean: f64 },
    #[error("curve-only record must not carry confidences")]
    CurveOnlyWithConfidences,
    #[error("bias parameter {name} = {value} violates {rule}")]
    BiasParameter {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("bias curve is not strictly positive (a + c + e = 0)")]
    BiasNotPositive,
    #[error("search config: {0}")]
    SearchConfig(&'static str),
    #[error("curve point at length {length} has phi {phi} outside (0, 1]")]
    CurvePoint { length: usize, phi: f64 },
}

fn in_unit_interval(x: f64) -> bool {
    x > 0.0 && x <= 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Code,
    Text,
    Synthetic,
}

/// One infilling instance: generate the middle between `prefix` and `suffix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTask")]
pub struct InfillTask {
    pub task_id: String,
    pub prefix: String,
    pub suffix: String,
    pub ground_truth_middle: Option<String>,
    /// Token count of the ground-truth middle under the model's tokenizer.
    pub oracle_length: Option<usize>,
    pub domain_tag: DomainTag,
}

#[derive(Deserialize)]
pub(crate) struct RawTask {
    task_id: String,
    prefix: String,
    suffix: String,
    #[serde(default)]
    ground_truth_middle: Option<String>,
    #[serde(default)]
    oracle_length: Option<usize>,
    domain_tag: DomainTag,
}

impl TryFrom<RawTask> for InfillTask {
    type Error = ValidationError;

    fn try_from(raw: RawTask) -> Result<Self, Self::Error> {
        let task = InfillTask {
            task_id: raw.task_id,
            prefix: raw.prefix,
            suffix: raw.suffix,
            ground_truth_middle: raw.ground_truth_middle,
            oracle_length: raw.oracle_length,
            domain_tag: raw.domain_tag,
        };
        task.validate()?;
        Ok(task)
    }
}

impl InfillTask {
    pub fn new(
        task_id: impl Into<String>,
        prefix: impl Into<String>,
        suffix: impl Into<String>,
        domain_tag: DomainTag,
    ) -> Result<Self, ValidationError> {
        let task = InfillTask {
            task_id: task_id.into(),
            prefix: prefix.into(),
            suffix: suffix.into(),
            ground_truth_middle: None,
            oracle_length: None,
            domain_tag,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn with_ground_truth(mut self, middle: impl Into<String>) -> Self {
        self.ground_truth_middle = Some(middle.into());
        self
    }

    pub fn with_oracle_length(mut self, length: usize) -> Result<Self, ValidationError> {
        self.oracle_length = Some(length);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.task_id.is_empty() {
            return Err(ValidationError::EmptyTaskId);
        }
        if self.oracle_length == Some(0) {
            return Err(ValidationError::ZeroOracleLength(self.task_id.clone()));
        }
        Ok(())
    }
}

/// One probe: the first-step confidences at a single mask length.
///
/// A record either carries the per-position confidences (and `phi` is their
/// mean) or is curve-only, in which case only `phi` is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProbeRecord")]
pub struct ProbeRecord {
    task_id: String,
    length: usize,
    confidences: Vec<f64>,
    phi: f64,
    backend_id: String,
    curve_only: bool,
}

#[derive(Deserialize)]
pub(crate) struct RawProbeRecord {
    task_id: String,
    length: usize,
    #[serde(default)]
    confidences: Vec<f64>,
    phi: f64,
    backend_id: String,
    #[serde(default)]
    curve_only: bool,
}

impl TryFrom<RawProbeRecord> for ProbeRecord {
    type Error = ValidationError;

    fn try_from(raw: RawProbeRecord) -> Result<Self, Self::Error> {
        ProbeRecord::from_parts(
            raw.task_id,
            raw.length,
            raw.confidences,
            raw.phi,
            raw.backend_id,
            raw.curve_only,
        )
    }
}

impl ProbeRecord {
    /// Builds a record from per-position confidences, computing `phi`.
    pub fn new(
        task_id: impl Into<String>,
        length: usize,
        confidences: Vec<f64>,
        backend_id: impl Into<String>,
    ) -> Result<Self, ValidationError> {
        check_confidences(length, &confidences)?;
        let phi = crate::confidence::mean_first_step_confidence(&confidences)
            .expect("confidences already checked");
        Self::from_parts(
            task_id.into(),
            length,
            confidences,
            phi,
            backend_id.into(),
            false,
        )
    }

    /// Builds a record that only knows the mean confidence at `length`.
    pub fn curve_only(
        task_id: impl Into<String>,
        length: usize,
        phi: f64,
        backend_id: impl Into<String>,
    ) -> Result<Self, ValidationError> {
        Self::from_parts(
            task_id.into(),
            length,
            Vec::new(),
            phi,
            backend_id.into(),
            true,
        )
    }

    pub fn from_parts(
        task_id: String,
        length: usize,
        confidences: Vec<f64>,
        phi: f64,
        backend_id: String,
        curve_only: bool,
    ) -> Result<Self, ValidationError> {
        if task_id.is_empty() {
            return Err(ValidationError::EmptyTaskId);
        }
        if length == 0 {
            return Err(ValidationError::ZeroLength);
        }
        if !in_unit_interval(phi) {
            return Err(ValidationError::PhiOutOfRange { phi });
        }
        if curve_only {
            if !confidences.is_empty() {
                return Err(ValidationError::CurveOnlyWithConfidences);
            }
        } else {
            check_confidences(length, &confidences)?;
            let mean = crate::confidence::mean_first_step_confidence(&confidences)
                .expect("confidences already checked");
            if (mean - phi).abs() > PHI_TOLERANCE {
                return Err(ValidationError::PhiMismatch { stored: phi, mean });
            }
        }
        Ok(ProbeRecord {
            task_id,
            length,
            confidences,
            phi,
            backend_id,
            curve_only,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn is_curve_only(&self) -> bool {
        self.curve_only
    }
}

pub(crate) fn check_confidences(length: usize, confidences: &[f64]) -> Result<(), ValidationError> {
    if length == 0 {
        return Err(ValidationError::ZeroLength);
    }
    if confidences.len() != length {
        return Err(ValidationError::ConfidenceCount {
            expected: length,
            found: confidences.len(),
        });
    }
    if let Some((position, &value)) = confidences
        .iter()
        .enumerate()
        .find(|(_, &v)| !in_unit_interval(v))
    {
        return Err(ValidationError::ConfidenceOutOfRange { position, value });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub n_points: usize,
    pub weighted_sse: f64,
    pub excluded_window: usize,
    pub source: String,
}

impl Default for FitMeta {
    fn default() -> Self {
        FitMeta {
            n_points: 0,
            weighted_sse: 0.0,
            excluded_window: 0,
            source: "manual".to_string(),
        }
    }
}

/// Length-bias curve `B(L) = a·exp(−b·L) + c·exp(−d·L) + e`.
///
/// The fast-decay term is always `(a, b)`: `b > d` is part of the invariant so
/// that the two exponentials cannot be relabelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBiasModel")]
pub struct BiasModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub fit_meta: FitMeta,
}

#[derive(Deserialize)]
struct RawBiasModel {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    #[serde(default)]
    fit_meta: FitMeta,
}

impl TryFrom<RawBiasModel> for BiasModel {
    type Error = ValidationError;

    fn try_from(raw: RawBiasModel) -> Result<Self, Self::Error> {
        BiasModel::with_meta(raw.a, raw.b, raw.c, raw.d, raw.e, raw.fit_meta)
    }
}

impl BiasModel {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64) -> Result<Self, ValidationError> {
        let meta = FitMeta {
            n_points: 0,
            weighted_sse: 0.0,
            excluded_window: 0,
            source: "manual".to_string(),
        };
        Self::with_meta(a, b, c, d, e, meta)
    }

    pub fn with_meta(
        a: f64,
        b: f64,
        c: f64,
        d: f64,
        e: f64,
        fit_meta: FitMeta,
    ) -> Result<Self, ValidationError> {
        let model = BiasModel {
            a,
            b,
            c,
            d,
            e,
            fit_meta,
        };
        model.validate()?;
        Ok(model)
    }

    /// Reference constants (a=1.00, b=1.77, c=0.56, d=0.06, e=0.24).
    pub fn reference() -> Self {
        let meta = FitMeta {
            n_points: 0,
            weighted_sse: 0.0,
            excluded_window: 4,
            source: "reference".to_string(),
        };
        Self::with_meta(1.00, 1.77, 0.56, 0.06, 0.24, meta).expect("reference constants are valid")
    }

    pub fn params(&self) -> [f64; 5] {
        [self.a, self.b, self.c, self.d, self.e]
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let checks: [(&'static str, f64, bool, &'static str); 5] = [
            ("a", self.a, self.a >= 0.0, "a >= 0"),
            ("c", self.c, self.c >= 0.0, "c >= 0"),
            ("e", self.e, self.e >= 0.0, "e >= 0"),
            ("d", self.d, self.d >= 0.0, "d >= 0"),
            ("b", self.b, self.b > self.d, "b > d"),
        ];
        for (name, value, ok, rule) in checks {
            if !value.is_finite() || !ok {
                return Err(ValidationError::BiasParameter { name, value, rule });
            }
        }
        if self.a + self.c + self.e <= 0.0 {
            return Err(ValidationError::BiasNotPositive);
        }
        Ok(())
    }
}

/// Hill-climb hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSearchConfig")]
pub struct SearchConfig {
    pub step: usize,
    /// Consecutive non-improving probes tolerated before a direction stops.
    pub tolerance: usize,
    pub l_init: usize,
    pub l_max: usize,
}

#[derive(Deserialize)]
struct RawSearchConfig {
    step: usize,
    tolerance: usize,
    l_init: usize,
    l_max: usize,
}

impl TryFrom<RawSearchConfig> for SearchConfig {
    type Error = ValidationError;

    fn try_from(raw: RawSearchConfig) -> Result<Self, Self::Error> {
        SearchConfig::new(raw.step, raw.tolerance, raw.l_init, raw.l_max)
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            step: 1,
            tolerance: 4,
            l_init: 8,
            l_max: 64,
        }
    }
}

impl SearchConfig {
    pub fn new(
        step: usize,
        tolerance: usize,
        l_init: usize,
        l_max: usize,
    ) -> Result<Self, ValidationError> {
        let config = SearchConfig {
            step,
            tolerance,
            l_init,
            l_max,
        };
        config.validate()?;
        Ok(config)
    }

    /// Code infilling defaults: unit step, tolerance 4.
    pub fn code(l_init: usize, l_max: usize) -> Result<Self, ValidationError> {
        Self::new(1, 4, l_init, l_max)
    }

    /// Text infilling defaults: unit step, tolerance 2.
    pub fn text(l_init: usize, l_max: usize) -> Result<Self, ValidationError> {
        Self::new(1, 2, l_init, l_max)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.step == 0 {
            return Err(ValidationError::SearchConfig("step must be >= 1"));
        }
        if self.tolerance == 0 {
            return Err(ValidationError::SearchConfig("tolerance must be >= 1"));
        }
        if self.l_init == 0 {
            return Err(ValidationError::SearchConfig("l_init must be >= 1"));
        }
        if self.l_init > self.l_max {
            return Err(ValidationError::SearchConfig(
                "l_init must not exceed l_max",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub length: usize,
    pub phi: f64,
    pub phi_c: f64,
}

/// Outcome of a length search, with every probe in issue order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub l_hat: usize,
    pub phi_c_hat: f64,
    pub trace: Vec<TraceEntry>,
    pub probe_count: usize,
}

impl SearchResult {
    pub fn probed_lengths(&self) -> Vec<usize> {
        self.trace.iter().map(|t| t.length).collect()
    }
}

/// Sampled `Φ(L)` values keyed by length.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<usize, f64>", into = "BTreeMap<usize, f64>")]
pub struct ConfidenceCurve {
    points: BTreeMap<usize, f64>,
}

impl TryFrom<BTreeMap<usize, f64>> for ConfidenceCurve {
    type Error = ValidationError;

    fn try_from(points: BTreeMap<usize, f64>) -> Result<Self, Self::Error> {
        for (&length, &phi) in &points {
            if length == 0 {
                return Err(ValidationError::ZeroLength);
            }
            if !in_unit_interval(phi) {
                return Err(ValidationError::CurvePoint { length, phi });
            }
        }
        Ok(ConfidenceCurve { points })
    }
}

impl From<ConfidenceCurve> for BTreeMap<usize, f64> {
    fn from(curve: ConfidenceCurve) -> Self {
        curve.points
    }
}

impl ConfidenceCurve {
    pub fn from_points<I: IntoIterator<Item = (usize, f64)>>(
        points: I,
    ) -> Result<Self, ValidationError> {
        Self::try_from(points.into_iter().collect::<BTreeMap<_, _>>())
    }

    pub fn get(&self, length: usize) -> Option<f64> {
        self.points.get(&length).copied()
    }

    pub fn points(&self) -> &BTreeMap<usize, f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
