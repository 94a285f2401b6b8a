//! Structured-text run reports and scene manifests.
//!
//! A report is a sequence of named sections. `[config]` and `[metrics]` hold
//! `key value` pairs; `[cost_trace]` holds `iteration cost` rows. Values are
//! stored verbatim as strings, and the numeric helpers format floats with
//! shortest round-trip notation, so write-then-read preserves every field
//! exactly.

use std::collections::BTreeMap;
use std::path::Path;

use cluster_ba::{Error, Result};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    /// Echo of the run configuration, in insertion order.
    pub config: Vec<(String, String)>,
    /// Run metrics, in insertion order.
    pub metrics: Vec<(String, String)>,
    /// Total cost after each accepted iteration, starting at the initial cost.
    pub cost_trace: Vec<f64>,
}

impl RunReport {
    pub fn new() -> Self {
        RunReport::default()
    }

    pub fn config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.push((key.to_string(), value.to_string()));
        self
    }

    pub fn metric(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.metrics.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get_metric(&self, key: &str) -> Option<&str> {
        self.metrics
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_config(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# cluster-ba run report\n");
        out.push_str(&format!("artifact_version {ARTIFACT_VERSION}\n"));
        out.push_str("[config]\n");
        for (k, v) in &self.config {
            out.push_str(&format!("{k} {v}\n"));
        }
        out.push_str("[metrics]\n");
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k} {v}\n"));
        }
        out.push_str("[cost_trace]\n");
        for (i, c) in self.cost_trace.iter().enumerate() {
            out.push_str(&format!("{i} {c}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let mut report = RunReport::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg,
            };
            if let Some(name) = line.strip_prefix('[') {
                section = name
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?
                    .to_string();
                continue;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err(format!("expected 'key value', found {line:?}")))?;
            let value = value.trim();
            match section.as_str() {
                "" => {
                    if key != "artifact_version" {
                        return Err(err(format!("unexpected key {key:?} before any section")));
                    }
                }
                "config" => report.config.push((key.to_string(), value.to_string())),
                "metrics" => report.metrics.push((key.to_string(), value.to_string())),
                "cost_trace" => {
                    let idx: usize = key
                        .parse()
                        .map_err(|_| err(format!("bad trace index {key:?}")))?;
                    if idx != report.cost_trace.len() {
                        return Err(err(format!(
                            "trace rows out of order: expected {}, found {idx}",
                            report.cost_trace.len()
                        )));
                    }
                    let cost: f64 = value
                        .parse()
                        .map_err(|_| err(format!("bad trace cost {value:?}")))?;
                    report.cost_trace.push(cost);
                }
                other => return Err(err(format!("unknown section [{other}]"))),
            }
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Formats an f64 so it parses back to the identical bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Simple `key value` manifest, one pair per line.
pub fn write_manifest(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::from("# cluster-ba scene manifest\n");
    for (k, v) in pairs {
        out.push_str(&format!("{k} {v}\n"));
    }
    std::fs::write(path, out)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("expected 'key value', found {line:?}"),
        })?;
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}
