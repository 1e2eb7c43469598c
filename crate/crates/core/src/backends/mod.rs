//! Probe backends.
//!
//! A backend answers "what are the first-step confidences over a mask of
//! length L for this prefix/suffix". Three implementations ship here: a
//! synthetic landscape simulator, a replay of recorded probe logs, and an
//! HTTP client for an external model bridge.

mod recorder;
mod remote;
mod replay;
mod synthetic;

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use recorder::Recorder;
pub use remote::{RemoteBackend, RemoteOptions, DEFAULT_RETRIES, DEFAULT_TIMEOUT, TIMEOUT_ENV};
pub use replay::ReplayBackend;
pub use synthetic::{
    synthetic_tasks, NoiseKind, PeakShape, SuiteCase, SuiteRanges, SyntheticBackend,
    SyntheticLandscapeSpec, SyntheticSuite, CLIP_FLOOR,
};

use crate::confidence::mean_first_step_confidence;
use crate::types::InfillTask;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("replay miss: no recorded probe for task `{task_id}` at length {length}")]
    ReplayMiss { task_id: String, length: usize },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("protocol error: {message} (body: {body_excerpt})")]
    Protocol {
        message: String,
        body_excerpt: String,
    },
    #[error("remote error (HTTP {status}): {message}")]
    Remote { status: u16, message: String },
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("probe contract violated: {0}")]
    Contract(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// What a backend can do, as declared at construction (or by the bridge's
/// capabilities handshake).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub model_id: String,
    pub max_length: usize,
    pub supports_decode: bool,
    pub supports_tokenize: bool,
    pub max_concurrency: usize,
}

/// Result of one probe. `confidences` is empty for curve-level replays, in
/// which case only `phi` is known.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub confidences: Vec<f64>,
    pub phi: f64,
}

impl Probe {
    /// Checks the length/range contract and computes `phi`.
    pub fn from_confidences(length: usize, confidences: Vec<f64>) -> Result<Self, BackendError> {
        validate_confidences(length, &confidences)?;
        let phi = mean_first_step_confidence(&confidences)
            .map_err(|e| BackendError::Contract(e.to_string()))?;
        Ok(Probe { confidences, phi })
    }

    pub fn curve_only(phi: f64) -> Self {
        Probe {
            confidences: Vec::new(),
            phi,
        }
    }
}

pub(crate) fn validate_confidences(length: usize, confidences: &[f64]) -> Result<(), BackendError> {
    if confidences.len() != length {
        return Err(BackendError::Contract(format!(
            "requested {length} confidences, got {}",
            confidences.len()
        )));
    }
    if let Some((i, v)) = confidences
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v <= 1.0))
    {
        return Err(BackendError::Contract(format!(
            "confidence {v} at position {i} outside (0, 1]"
        )));
    }
    Ok(())
}

pub trait ProbeBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn capabilities(&self) -> &Capabilities;

    /// First-step confidences over a mask of `length` positions. Identical
    /// arguments must give identical results.
    fn probe(&self, task: &InfillTask, length: usize) -> Result<Probe, BackendError>;

    /// Full fixed-length decoding of the middle.
    fn decode(&self, _task: &InfillTask, _length: usize) -> Result<String, BackendError> {
        Err(BackendError::Unsupported("decode"))
    }

    fn tokenize(&self, _text: &str) -> Result<usize, BackendError> {
        Err(BackendError::Unsupported("tokenize"))
    }
}

impl<B: ProbeBackend + ?Sized> ProbeBackend for &B {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }
    fn probe(&self, task: &InfillTask, length: usize) -> Result<Probe, BackendError> {
        (**self).probe(task, length)
    }
    fn decode(&self, task: &InfillTask, length: usize) -> Result<String, BackendError> {
        (**self).decode(task, length)
    }
    fn tokenize(&self, text: &str) -> Result<usize, BackendError> {
        (**self).tokenize(text)
    }
}

impl<B: ProbeBackend + ?Sized> ProbeBackend for Box<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }
    fn probe(&self, task: &InfillTask, length: usize) -> Result<Probe, BackendError> {
        (**self).probe(task, length)
    }
    fn decode(&self, task: &InfillTask, length: usize) -> Result<String, BackendError> {
        (**self).decode(task, length)
    }
    fn tokenize(&self, text: &str) -> Result<usize, BackendError> {
        (**self).tokenize(text)
    }
}

/// `synthetic:<spec.json>`, `replay:<log>` or `remote:<url>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Synthetic(PathBuf),
    Replay(PathBuf),
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| {
            BackendError::Config(format!("backend spec `{s}` has no kind prefix"))
        })?;
        if rest.is_empty() {
            return Err(BackendError::Config(format!(
                "backend spec `{s}` has an empty target"
            )));
        }
        match kind {
            "synthetic" => Ok(BackendSpec::Synthetic(rest.into())),
            "replay" => Ok(BackendSpec::Replay(rest.into())),
            "remote" => Ok(BackendSpec::Remote(rest.to_string())),
            other => Err(BackendError::Config(format!(
                "unknown backend kind `{other}` (expected synthetic, replay or remote)"
            ))),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = BackendError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(spec: BackendSpec) -> Self {
        spec.to_string()
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Synthetic(p) => write!(f, "synthetic:{}", p.display()),
            BackendSpec::Replay(p) => write!(f, "replay:{}", p.display()),
            BackendSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

impl BackendSpec {
    /// Builds the backend. `seed` overrides a synthetic spec's own seed.
    pub fn open(
        &self,
        seed: Option<u64>,
        remote: &RemoteOptions,
    ) -> Result<Box<dyn ProbeBackend>, BackendError> {
        let read = |p: &PathBuf| {
            std::fs::read_to_string(p)
                .map_err(|e| BackendError::Config(format!("{}: {e}", p.display())))
        };
        Ok(match self {
            BackendSpec::Synthetic(path) => {
                let mut spec: SyntheticLandscapeSpec = serde_json::from_str(&read(path)?)
                    .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                if let Some(seed) = seed {
                    spec.seed = seed;
                }
                Box::new(SyntheticBackend::new(spec)?)
            }
            BackendSpec::Replay(path) => {
                let records = crate::formats::parse_probe_log(&read(path)?)
                    .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                Box::new(ReplayBackend::from_records(records))
            }
            BackendSpec::Remote(url) => Box::new(RemoteBackend::connect(url, remote.clone())?),
        })
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendSpec::Remote(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_specs() {
        assert_eq!(
            "synthetic:a.json".parse::<BackendSpec>().unwrap(),
            BackendSpec::Synthetic("a.json".into())
        );
        assert_eq!(
            "remote:http://127.0.0.1:8000"
                .parse::<BackendSpec>()
                .unwrap(),
            BackendSpec::Remote("http://127.0.0.1:8000".into())
        );
        assert!("replay:".parse::<BackendSpec>().is_err());
        assert!("gpu:x".parse::<BackendSpec>().is_err());
        assert!("nothing".parse::<BackendSpec>().is_err());
        let s = BackendSpec::Replay("x.jsonl".into());
        assert_eq!(s.to_string().parse::<BackendSpec>().unwrap(), s);
    }

    #[test]
    fn probe_contract() {
        assert!(Probe::from_confidences(2, vec![0.5]).is_err());
        assert!(Probe::from_confidences(2, vec![0.5, 1.01]).is_err());
        let p = Probe::from_confidences(2, vec![0.5, 0.7]).unwrap();
        assert!((p.phi - 0.6).abs() < 1e-15);
    }
}
