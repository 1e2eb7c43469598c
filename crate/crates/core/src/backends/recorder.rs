use std::sync::Mutex;

use super::{BackendError, Capabilities, Probe, ProbeBackend};
use crate::types::{InfillTask, ProbeRecord};

/// Wraps a backend and keeps a probe log of every successful probe.
#[derive(Debug)]
pub struct Recorder<B> {
    inner: B,
    log: Mutex<Vec<ProbeRecord>>,
}

impl<B: ProbeBackend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Recorder {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<ProbeRecord> {
        self.log.lock().expect("recorder lock").clone()
    }

    pub fn into_inner(self) -> (B, Vec<ProbeRecord>) {
        let log = self.log.into_inner().expect("recorder lock");
        (self.inner, log)
    }
}

impl<B: ProbeBackend> ProbeBackend for Recorder<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn capabilities(&self) -> &Capabilities {
        self.inner.capabilities()
    }

    fn probe(&self, task: &InfillTask, length: usize) -> Result<Probe, BackendError> {
        let probe = self.inner.probe(task, length)?;
        let record = if probe.confidences.is_empty() {
            ProbeRecord::curve_only(&task.task_id, length, probe.phi, self.backend_id())
        } else {
            ProbeRecord::from_parts(
                task.task_id.clone(),
                length,
                probe.confidences.clone(),
                probe.phi,
                self.backend_id().to_string(),
                false,
            )
        }
        .map_err(|e| BackendError::Contract(e.to_string()))?;
        self.log.lock().expect("recorder lock").push(record);
        Ok(probe)
    }

    fn decode(&self, task: &InfillTask, length: usize) -> Result<String, BackendError> {
        self.inner.decode(task, length)
    }

    fn tokenize(&self, text: &str) -> Result<usize, BackendError> {
        self.inner.tokenize(text)
    }
}
