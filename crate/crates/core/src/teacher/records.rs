use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TokenLogProbSequence, Variant};
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq)]
pub struct LogprobRecord {
    pub triplet_id: String,
    pub variant: Variant,
    pub sequence: TokenLogProbSequence,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    triplet_id: String,
    variant: Variant,
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl From<&LogprobRecord> for RawRecord {
    fn from(r: &LogprobRecord) -> Self {
        RawRecord {
            triplet_id: r.triplet_id.clone(),
            variant: r.variant.clone(),
            tokens: r.sequence.tokens().to_vec(),
            logprobs: r.sequence.logprobs().to_vec(),
        }
    }
}

pub fn load_logprob_records(path: &Path) -> Result<Vec<LogprobRecord>> {
    jsonl::read::<RawRecord>(path)?
        .into_iter()
        .map(|(_, raw)| {
            let sequence = TokenLogProbSequence::new(raw.tokens, raw.logprobs).map_err(|e| {
                Error::InvalidRecord {
                    id: format!("{}/{}", raw.triplet_id, raw.variant.as_str()),
                    message: e.to_string(),
                }
            })?;
            Ok(LogprobRecord {
                triplet_id: raw.triplet_id,
                variant: raw.variant,
                sequence,
            })
        })
        .collect()
}

pub fn records_to_string(records: &[LogprobRecord]) -> Result<String> {
    let raw: Vec<RawRecord> = records.iter().map(RawRecord::from).collect();
    jsonl::to_string(&raw)
}

pub fn write_logprob_records(path: &Path, records: &[LogprobRecord]) -> Result<()> {
    jsonl::write_text(path, &records_to_string(records)?)
}
