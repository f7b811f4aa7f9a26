//! Alignment (A) score from caption token log-probabilities.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural-log probabilities of each caption token for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRecord {
    pub image_id: String,
    pub token_logprobs: Vec<f64>,
}

impl LogProbRecord {
    pub fn validate(&self) -> Result<()> {
        if self.token_logprobs.is_empty() {
            return Err(Error::domain(format!(
                "image {} has no caption tokens",
                self.image_id
            )));
        }
        if let Some(v) = self
            .token_logprobs
            .iter()
            .find(|v| !v.is_finite() || **v > 0.0)
        {
            return Err(Error::domain(format!(
                "image {} has invalid log-probability {v}",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// Mean token log-likelihood for one image.
pub fn a_score_image(rec: &LogProbRecord) -> Result<f64> {
    rec.validate()?;
    Ok(rec.token_logprobs.iter().sum::<f64>() / rec.token_logprobs.len() as f64)
}

/// Mean over images of the per-image score; every image has equal weight
/// regardless of caption length.
pub fn a_score(records: &[LogProbRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::domain("no log-probability records"));
    }
    let sum = records.iter().map(a_score_image).sum::<Result<f64>>()?;
    Ok(sum / records.len() as f64)
}

/// Reads a log-prob JSONL file. Lines without `token_logprobs` (for example
/// an extractor header record) are skipped.
pub fn read_logprobs_jsonl(path: impl AsRef<Path>) -> Result<Vec<LogProbRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            Error::format(
                "logprobs",
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        if value.get("token_logprobs").is_none() {
            continue;
        }
        let rec: LogProbRecord = serde_json::from_value(value).map_err(|e| {
            Error::format(
                "logprobs",
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, v: &[f64]) -> LogProbRecord {
        LogProbRecord {
            image_id: id.into(),
            token_logprobs: v.to_vec(),
        }
    }

    #[test]
    fn per_image_mean() {
        assert_eq!(a_score_image(&rec("a", &[-1.0, -2.0, -3.0])).unwrap(), -2.0);
        assert_eq!(a_score_image(&rec("a", &[-0.5])).unwrap(), -0.5);
        assert!(a_score_image(&rec("a", &[])).is_err());
        assert!(a_score_image(&rec("a", &[0.1])).is_err());
        assert!(a_score_image(&rec("a", &[f64::NAN])).is_err());
    }

    #[test]
    fn mean_of_means() {
        let recs = [rec("a", &[-1.0]), rec("b", &[-2.0, -4.0, -3.0])];
        assert_eq!(a_score(&recs).unwrap(), -2.0);
        assert!(a_score(&[]).is_err());
    }

    #[test]
    fn jsonl_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lp.jsonl");
        std::fs::write(
            &p,
            "{\"template\": \"USER: <image> ASSISTANT: {caption}\"}\n\
             {\"image_id\": \"x\", \"token_logprobs\": [-1.0, -3.0]}\n\n",
        )
        .unwrap();
        let recs = read_logprobs_jsonl(&p).unwrap();
        assert_eq!(recs, vec![rec("x", &[-1.0, -3.0])]);
    }
}
