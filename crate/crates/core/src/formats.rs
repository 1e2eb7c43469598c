//! On-disk formats: probe logs and task files (line-delimited JSON) and the
//! bias-model file (a single JSON object).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::types::{BiasModel, InfillTask, ProbeRecord, RawProbeRecord, RawTask, ValidationError};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: ValidationError,
    },
    #[error("bias model: {0}")]
    BiasModel(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, FormatError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes one JSON object per line. Empty input yields an empty string.
pub fn serialize_probe_log(records: &[ProbeRecord]) -> String {
    to_json_lines(records)
}

pub(crate) fn to_json_lines<T: serde::Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("value types always serialize"));
        out.push('\n');
    }
    out
}

fn parse_lines<R, T, F>(input: &str, convert: F) -> Result<Vec<T>, FormatError>
where
    R: DeserializeOwned,
    F: Fn(R) -> Result<T, ValidationError>,
{
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: R = serde_json::from_str(line).map_err(|e| FormatError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let value = convert(raw).map_err(|source| FormatError::Validation {
            line: line_no,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn parse_probe_log(input: &str) -> Result<Vec<ProbeRecord>, FormatError> {
    parse_lines::<RawProbeRecord, _, _>(input, ProbeRecord::try_from)
}

pub fn read_probe_log(path: &Path) -> Result<Vec<ProbeRecord>, FormatError> {
    parse_probe_log(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_probe_log(path: &Path, records: &[ProbeRecord]) -> Result<(), FormatError> {
    fs::write(path, serialize_probe_log(records)).map_err(io_err(path))
}

/// Parses a task file, additionally enforcing unique task ids.
pub fn parse_tasks(input: &str) -> Result<Vec<InfillTask>, FormatError> {
    let tasks = parse_lines::<RawTask, _, _>(input, InfillTask::try_from)?;
    let mut seen = HashSet::new();
    for (idx, task) in tasks.iter().enumerate() {
        if !seen.insert(task.task_id.as_str()) {
            // Blank lines are skipped, so report the record ordinal.
            return Err(FormatError::Validation {
                line: idx + 1,
                source: ValidationError::DuplicateTaskId(task.task_id.clone()),
            });
        }
    }
    Ok(tasks)
}

pub fn serialize_tasks(tasks: &[InfillTask]) -> String {
    to_json_lines(tasks)
}

pub fn read_tasks(path: &Path) -> Result<Vec<InfillTask>, FormatError> {
    parse_tasks(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_tasks(path: &Path, tasks: &[InfillTask]) -> Result<(), FormatError> {
    fs::write(path, serialize_tasks(tasks)).map_err(io_err(path))
}

pub fn parse_bias_model(input: &str) -> Result<BiasModel, FormatError> {
    serde_json::from_str(input).map_err(|e| FormatError::BiasModel(e.to_string()))
}

pub fn read_bias_model(path: &Path) -> Result<BiasModel, FormatError> {
    parse_bias_model(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_bias_model(path: &Path, model: &BiasModel) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(model).expect("bias model serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
