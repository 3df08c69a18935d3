use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Classification, EnsembleDecision, EnsembleError, PerKind, Result, Threshold, VoteRecord};
use crate::corpus::Dimension;

/// One line of a decisions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub para_id: String,
    pub dim: Dimension,
    pub votes: PerKind<u8>,
    pub positive_votes: u8,
    pub decision: u8,
    pub threshold: Threshold,
    pub scores: PerKind<f64>,
}

impl From<&Classification> for DecisionRecord {
    fn from(c: &Classification) -> Self {
        Self {
            para_id: c.votes.para_id.clone(),
            dim: c.votes.dimension,
            votes: c.votes.votes.map(|_, &v| u8::from(v)),
            positive_votes: c.decision.positive_votes,
            decision: u8::from(c.decision.decision),
            threshold: c.decision.threshold_used,
            scores: c.votes.scores,
        }
    }
}

impl DecisionRecord {
    pub fn into_classification(self) -> Result<Classification> {
        let bad = |what: &str| EnsembleError::InconsistentInputs(format!("{}/{}: {what}", self.para_id, self.dim));
        if self.votes.iter().any(|(_, &v)| v > 1) || self.decision > 1 {
            return Err(bad("votes and decision must be 0 or 1"));
        }
        let votes = VoteRecord {
            para_id: self.para_id.clone(),
            dimension: self.dim,
            votes: self.votes.map(|_, &v| v == 1),
            scores: self.scores,
        };
        let decision = EnsembleDecision {
            para_id: self.para_id.clone(),
            dimension: self.dim,
            positive_votes: self.positive_votes,
            decision: self.decision == 1,
            threshold_used: self.threshold,
        };
        if votes.positive_votes() != self.positive_votes {
            return Err(bad("positive_votes disagrees with votes"));
        }
        if decision.decision != (self.positive_votes >= self.threshold.get()) {
            return Err(bad("decision disagrees with threshold"));
        }
        Ok(Classification { votes, decision })
    }
}

pub fn write_decisions_jsonl<W: Write>(mut writer: W, classified: &[Classification]) -> Result<()> {
    for c in classified {
        serde_json::to_writer(&mut writer, &DecisionRecord::from(c))
            .map_err(|e| EnsembleError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_decisions_jsonl<R: BufRead>(reader: R) -> Result<Vec<Classification>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DecisionRecord =
            serde_json::from_str(&line).map_err(|source| EnsembleError::Json { line: i + 1, source })?;
        out.push(record.into_classification()?);
    }
    Ok(out)
}
