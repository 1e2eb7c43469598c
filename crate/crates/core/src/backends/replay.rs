//! Replays recorded probes verbatim.

use std::collections::HashMap;

use super::{BackendError, Capabilities, Probe, ProbeBackend};
use crate::types::{ConfidenceCurve, InfillTask, ProbeRecord};

/// Serves probes from a log, keyed by `(task_id, length)`, or from a single
/// curve shared by every task. Any request that was not recorded is a
/// replay miss.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    by_task: HashMap<(String, usize), Probe>,
    shared: Option<ConfidenceCurve>,
    capabilities: Capabilities,
}

impl ReplayBackend {
    /// Later records for the same `(task_id, length)` replace earlier ones.
    pub fn from_records<I: IntoIterator<Item = ProbeRecord>>(records: I) -> Self {
        let by_task = records
            .into_iter()
            .map(|r| {
                let probe = if r.is_curve_only() {
                    Probe::curve_only(r.phi())
                } else {
                    Probe {
                        confidences: r.confidences().to_vec(),
                        phi: r.phi(),
                    }
                };
                ((r.task_id().to_string(), r.length()), probe)
            })
            .collect();
        ReplayBackend {
            by_task,
            shared: None,
            capabilities: Self::caps(),
        }
    }

    pub fn from_curve(curve: ConfidenceCurve) -> Self {
        ReplayBackend {
            by_task: HashMap::new(),
            shared: Some(curve),
            capabilities: Self::caps(),
        }
    }

    fn caps() -> Capabilities {
        Capabilities {
            model_id: "replay".to_string(),
            max_length: u32::MAX as usize,
            supports_decode: false,
            supports_tokenize: false,
            max_concurrency: 64,
        }
    }

    pub fn replay_probe(&self, task_id: &str, length: usize) -> Result<Probe, BackendError> {
        if let Some(p) = self.by_task.get(&(task_id.to_string(), length)) {
            return Ok(p.clone());
        }
        if let Some(phi) = self.shared.as_ref().and_then(|c| c.get(length)) {
            return Ok(Probe::curve_only(phi));
        }
        Err(BackendError::ReplayMiss {
            task_id: task_id.to_string(),
            length,
        })
    }
}

impl ProbeBackend for ReplayBackend {
    fn backend_id(&self) -> &str {
        "replay"
    }

    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn probe(&self, task: &InfillTask, length: usize) -> Result<Probe, BackendError> {
        self.replay_probe(&task.task_id, length)
    }
}
