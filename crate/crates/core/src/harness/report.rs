use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub seed: u64,
    /// Hex SHA-256 of the canonical JSON of the evaluated configuration.
    pub fingerprint: String,
    pub metrics: BTreeMap<String, f64>,
    pub per_sequence: Vec<BTreeMap<String, f64>>,
}

/// One line of a serialized report.
#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum Line {
    Header {
        task: String,
        seed: u64,
        fingerprint: String,
    },
    Metric {
        name: String,
        value: f64,
    },
    Sequence {
        index: usize,
        values: BTreeMap<String, f64>,
    },
}

/// SHA-256 over the JSON form of `config`. Struct fields serialize in
/// declaration order and maps are sorted, so equal configs hash equally.
pub fn fingerprint<T: Serialize>(config: &T) -> Result<String, HarnessError> {
    let json = serde_json::to_string(config).map_err(|e| HarnessError::Format(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

impl EvalReport {
    pub fn new<T: Serialize>(task: &str, seed: u64, config: &T) -> Result<Self, HarnessError> {
        Ok(Self {
            task: task.into(),
            seed,
            fingerprint: fingerprint(config)?,
            ..Default::default()
        })
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.metrics.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Line-delimited JSON: a header, one line per metric, one per sequence.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("report lines serialize"));
            out.push('\n');
        };
        push(&Line::Header {
            task: self.task.clone(),
            seed: self.seed,
            fingerprint: self.fingerprint.clone(),
        });
        for (name, value) in &self.metrics {
            push(&Line::Metric {
                name: name.clone(),
                value: *value,
            });
        }
        for (index, values) in self.per_sequence.iter().enumerate() {
            push(&Line::Sequence {
                index,
                values: values.clone(),
            });
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, HarnessError> {
        let mut report: Option<Self> = None;
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line =
                serde_json::from_str(raw).map_err(|e| HarnessError::Format(format!("line {}: {e}", i + 1)))?;
            match (line, report.as_mut()) {
                (
                    Line::Header {
                        task,
                        seed,
                        fingerprint,
                    },
                    None,
                ) => {
                    report = Some(Self {
                        task,
                        seed,
                        fingerprint,
                        ..Default::default()
                    })
                }
                (Line::Metric { name, value }, Some(r)) => {
                    r.metrics.insert(name, value);
                }
                (Line::Sequence { index, values }, Some(r)) if index == r.per_sequence.len() => {
                    r.per_sequence.push(values)
                }
                _ => return Err(HarnessError::Format(format!("line {}: unexpected record", i + 1))),
            }
        }
        report.ok_or_else(|| HarnessError::Format("report has no header".into()))
    }

    /// Human-readable table of the summary metrics.
    pub fn table(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!(
            "{} (seed {}, config {})\n",
            self.task,
            self.seed,
            &self.fingerprint[..self.fingerprint.len().min(12)]
        );
        for (name, value) in &self.metrics {
            let _ = writeln!(out, "  {name:<width$}  {value:>12.4}");
        }
        out
    }
}
