//! JSONL records for queries and trajectories.
//!
//! One JSON object per line. Writing a parsed file back produces the same
//! bytes: field order is fixed and floats use shortest round-trip
//! formatting.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Query, QueryMeta, StepSpan, TokenId, TokenTrajectory};
use crate::potential::Phase;
use crate::probe::ProbeRecord;

/// Trajectory line with optional analysis fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub query_id: u64,
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub reasoning_end: usize,
    pub steps: Vec<StepSpan>,
    pub reward: u8,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    /// Ground-truth answer of the query (with EOT).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Analytic solving step of the trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_gt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Vec<ProbeRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<Phase>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv_raw: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv_final: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &TokenTrajectory) -> Self {
        TrajectoryRecord {
            query_id: t.query_id,
            tokens: t.tokens.clone(),
            logprobs: t.logprobs.clone(),
            reasoning_end: t.reasoning_end,
            steps: t.steps.clone(),
            reward: t.reward,
            truncated: t.truncated,
            answer: None,
            method: None,
            k_gt: None,
            probe: None,
            phi: None,
            phases: None,
            adv_raw: None,
            adv_final: None,
        }
    }

    /// The core trajectory, checked against its structural invariants.
    pub fn trajectory(&self) -> Result<TokenTrajectory> {
        let t = TokenTrajectory {
            query_id: self.query_id,
            tokens: self.tokens.clone(),
            logprobs: self.logprobs.clone(),
            reasoning_end: self.reasoning_end,
            steps: self.steps.clone(),
            reward: self.reward,
            truncated: self.truncated,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Query line: the prompt tokens under `tokens` plus the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub query_id: u64,
    pub tokens: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    pub seed: u64,
    pub modulus: u32,
    pub chain_length: usize,
}

impl From<&Query> for QueryRecord {
    fn from(q: &Query) -> Self {
        QueryRecord {
            query_id: q.id,
            tokens: q.prompt.clone(),
            answer: q.answer.clone(),
            seed: q.meta.seed,
            modulus: q.meta.modulus,
            chain_length: q.meta.chain_length,
        }
    }
}

impl From<QueryRecord> for Query {
    fn from(r: QueryRecord) -> Self {
        Query {
            id: r.query_id,
            prompt: r.tokens,
            answer: r.answer,
            meta: QueryMeta {
                seed: r.seed,
                modulus: r.modulus,
                chain_length: r.chain_length,
            },
        }
    }
}

/// Serializes `items` as JSONL text.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSONL text; blank lines are skipped and errors name the 1-based
/// line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let text = to_jsonl(items)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads trajectory records and checks each core trajectory.
pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let records: Vec<TrajectoryRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.trajectory().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(records)
}
