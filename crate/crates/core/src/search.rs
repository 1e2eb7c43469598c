//! Length discovery by bidirectional hill climbing on calibrated confidence.

use thiserror::Error;

use crate::backends::{BackendError, ProbeBackend};
use crate::confidence::{calibrate, ConfidenceError};
use crate::types::{
    BiasModel, InfillTask, SearchConfig, SearchResult, TraceEntry, ValidationError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Calibration(#[from] ConfidenceError),
    #[error(transparent)]
    Config(#[from] ValidationError),
}

/// A failed search, with every probe that completed before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{failure} (after {} probe(s))", partial_trace.len())]
pub struct SearchError {
    pub failure: SearchFailure,
    pub partial_trace: Vec<TraceEntry>,
}

struct Prober<'a, B: ?Sized> {
    backend: &'a B,
    task: &'a InfillTask,
    model: &'a BiasModel,
    trace: Vec<TraceEntry>,
}

impl<B: ProbeBackend + ?Sized> Prober<'_, B> {
    fn probe(&mut self, length: usize) -> Result<f64, SearchFailure> {
        let phi = self.backend.probe(self.task, length)?.phi;
        let phi_c = calibrate(phi, length, self.model)?;
        self.trace.push(TraceEntry { length, phi, phi_c });
        Ok(phi_c)
    }

    fn fail(self, failure: SearchFailure) -> SearchError {
        SearchError {
            failure,
            partial_trace: self.trace,
        }
    }
}

/// Hill-climbs `Φ_c(L) = Φ(L)/B(L)` outward from `config.l_init`: first
/// upward, then downward, each direction stopping after `tolerance`
/// consecutive probes that fail to beat the best seen so far or when it
/// leaves `[1, l_max]`. The incumbent is shared by both directions and only
/// a strictly greater score replaces it.
pub fn discover_length<B: ProbeBackend + ?Sized>(
    backend: &B,
    task: &InfillTask,
    config: &SearchConfig,
    model: &BiasModel,
) -> Result<SearchResult, SearchError> {
    let mut prober = Prober {
        backend,
        task,
        model,
        trace: Vec::new(),
    };
    if let Err(e) = config.validate() {
        return Err(prober.fail(e.into()));
    }
    let mut best_len = config.l_init;
    let mut best = match prober.probe(config.l_init) {
        Ok(v) => v,
        Err(e) => return Err(prober.fail(e)),
    };

    for upward in [true, false] {
        let mut failures = 0;
        let mut next = step_from(config.l_init, config.step, upward);
        while let Some(length) = next.filter(|&l| l >= 1 && l <= config.l_max) {
            if failures >= config.tolerance {
                break;
            }
            let phi_c = match prober.probe(length) {
                Ok(v) => v,
                Err(e) => return Err(prober.fail(e)),
            };
            if phi_c > best {
                best = phi_c;
                best_len = length;
                failures = 0;
            } else {
                failures += 1;
            }
            next = step_from(length, config.step, upward);
        }
    }

    let probe_count = prober.trace.len();
    Ok(SearchResult {
        l_hat: best_len,
        phi_c_hat: best,
        trace: prober.trace,
        probe_count,
    })
}

fn step_from(length: usize, step: usize, upward: bool) -> Option<usize> {
    if upward {
        length.checked_add(step)
    } else {
        length.checked_sub(step)
    }
}

/// Probes every length in `[lo, hi]` and returns the earliest maximizer of
/// the calibrated confidence, with the full trace.
pub fn exhaustive_argmax<B: ProbeBackend + ?Sized>(
    backend: &B,
    task: &InfillTask,
    lo: usize,
    hi: usize,
    model: &BiasModel,
) -> Result<SearchResult, SearchError> {
    let mut prober = Prober {
        backend,
        task,
        model,
        trace: Vec::new(),
    };
    if lo == 0 || lo > hi {
        return Err(prober
            .fail(ValidationError::SearchConfig("exhaustive range needs 1 <= lo <= hi").into()));
    }
    let mut best = (lo, f64::NEG_INFINITY);
    for length in lo..=hi {
        let phi_c = match prober.probe(length) {
            Ok(v) => v,
            Err(e) => return Err(prober.fail(e)),
        };
        if phi_c > best.1 {
            best = (length, phi_c);
        }
    }
    let probe_count = prober.trace.len();
    Ok(SearchResult {
        l_hat: best.0,
        phi_c_hat: best.1,
        trace: prober.trace,
        probe_count,
    })
}
