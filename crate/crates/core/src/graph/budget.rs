use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a condensation ratio is turned into per-class node counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetRule {
    /// Truncate the total to `base * C` so every class gets the same count.
    pub equal_classes: bool,
    /// Fail instead of clamping up to one node per class when `ratio * N < 1`.
    pub strict: bool,
}

impl Default for BudgetRule {
    fn default() -> Self {
        Self {
            equal_classes: true,
            strict: false,
        }
    }
}

/// Per-class synthetic node counts for a condensation ratio.
///
/// `total = max(C, floor(ratio * N))`, `base = total / C`; with `equal_classes` every class
/// gets `base`, otherwise the remainder goes round-robin to the lowest class indices.
pub fn derive_budget(ratio: f64, num_nodes: usize, num_classes: usize, rule: BudgetRule) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "condensation ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if num_classes == 0 {
        return Err(Error::InvalidArgument("number of classes must be positive".into()));
    }
    let raw = ratio * num_nodes as f64;
    if raw < 1.0 && rule.strict {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} of {num_nodes} nodes selects less than one node"
        )));
    }
    split_budget((raw.floor() as usize).max(num_classes), num_classes, rule)
}

/// Per-class counts for a fixed synthetic node total, at least one per class.
pub fn split_budget(total: usize, num_classes: usize, rule: BudgetRule) -> Result<Vec<usize>> {
    if num_classes == 0 {
        return Err(Error::InvalidArgument("number of classes must be positive".into()));
    }
    if total < num_classes {
        return Err(Error::InvalidArgument(format!(
            "{total} synthetic nodes cannot cover {num_classes} classes"
        )));
    }
    let base = total / num_classes;
    if rule.equal_classes {
        return Ok(vec![base; num_classes]);
    }
    let remainder = total - base * num_classes;
    Ok((0..num_classes)
        .map(|c| base + usize::from(c < remainder))
        .collect())
}
