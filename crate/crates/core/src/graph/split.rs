use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::error::{Error, Result};

/// Half-open time windows: train `t < train_end`, validation
/// `train_end <= t < val_end`, test `t >= val_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSplit {
    pub train_end: i64,
    pub val_end: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitParts {
    pub train: Vec<Interaction>,
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

impl TemporalSplit {
    pub fn validate(&self) -> Result<()> {
        if self.train_end >= self.val_end {
            return Err(Error::Config(format!(
                "train_end ({}) must be earlier than val_end ({})",
                self.train_end, self.val_end
            )));
        }
        Ok(())
    }
}

pub fn temporal_split(interactions: &[Interaction], split: TemporalSplit) -> Result<SplitParts> {
    split.validate()?;
    let mut parts = SplitParts::default();
    for x in interactions {
        let t = x.timestamp.ok_or(Error::MissingTimestamp {
            user: x.user,
            item: x.item,
        })?;
        if t < split.train_end {
            parts.train.push(*x);
        } else if t < split.val_end {
            parts.val.push(*x);
        } else {
            parts.test.push(*x);
        }
    }
    if parts.val.is_empty() || parts.test.is_empty() {
        log::warn!(
            "temporal split left val={} test={} interactions",
            parts.val.len(),
            parts.test.len()
        );
    }
    Ok(parts)
}
