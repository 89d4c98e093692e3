//! Machine-readable verdicts shared by every check: pass / fail /
//! inconclusive entries with witnesses and numeric payloads.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub witnesses: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub payload: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Report {
    pub entries: Vec<CheckEntry>,
}

impl Report {
    pub fn new() -> Report {
        Report { entries: Vec::new() }
    }

    pub fn pass(&mut self, name: &str, detail: impl Into<String>) {
        self.entries.push(CheckEntry {
            name: name.to_string(),
            verdict: Verdict::Pass,
            witnesses: vec![],
            detail: Some(detail.into()),
            payload: None,
            horizon: None,
        });
    }

    pub fn fail(&mut self, name: &str, witnesses: Vec<String>) {
        self.entries.push(CheckEntry {
            name: name.to_string(),
            verdict: Verdict::Fail,
            witnesses,
            detail: None,
            payload: None,
            horizon: None,
        });
    }

    pub fn inconclusive(&mut self, name: &str, detail: impl Into<String>) {
        self.entries.push(CheckEntry {
            name: name.to_string(),
            verdict: Verdict::Inconclusive,
            witnesses: vec![],
            detail: Some(detail.into()),
            payload: None,
            horizon: None,
        });
    }

    pub fn push(&mut self, entry: CheckEntry) {
        self.entries.push(entry);
    }

    pub fn merge(&mut self, other: Report) {
        self.entries.extend(other.entries);
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.verdict == Verdict::Pass)
    }

    pub fn any_failed(&self) -> bool {
        self.entries.iter().any(|e| e.verdict == Verdict::Fail)
    }

    pub fn stamp_horizon(&mut self, horizon: f64) {
        for e in &mut self.entries {
            e.horizon.get_or_insert(horizon);
        }
    }
}
