//! Reward functions: bounded scalars abstracted from raw outcomes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{RawOutcome, Reward, RewardBounds, RewardFunction, RewardOutcome};
use crate::ids::ItemId;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid reward spec: {0}")]
pub struct InvalidSpec(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardKind {
    /// Feedback of the first slot.
    Rating,
    /// 1 if the first slot's feedback is at least `threshold`, else 0.
    BinaryClick { threshold: f64 },
    /// Sum of slot feedbacks.
    SlateSum,
    /// `sum_j rel_j / log2(j + 1)` with 1-based slots, feedback as relevance.
    SlateDcg,
    /// Sum of prices of slots whose feedback is positive. Unpriced items
    /// are worth 0.
    Revenue { prices: BTreeMap<ItemId, f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    TreatAsZero,
    /// Missing slots take the lower end of the feedback range.
    TreatAsMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub missing_policy: MissingPolicy,
    pub bounds: [f64; 2],
    /// Map the kind's natural range affinely onto `bounds`.
    pub normalize: bool,
}

/// A compiled [`RewardSpec`]. Stateless; `evaluate` reports clamping so the
/// environment can count it.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFn {
    spec: RewardSpec,
    bounds: RewardBounds,
    feedback_range: [f64; 2],
    /// Prices sorted descending, for the revenue normalizer.
    sorted_prices: Vec<f64>,
}

pub fn make_reward_fn(spec: RewardSpec, feedback_range: [f64; 2]) -> Result<RewardFn, InvalidSpec> {
    let bounds = RewardBounds::new(spec.bounds[0], spec.bounds[1])
        .map_err(|_| InvalidSpec(format!("bounds {:?} must be finite with min < max", spec.bounds)))?;
    let [f_min, f_max] = feedback_range;
    if !f_min.is_finite() || !f_max.is_finite() || f_min > f_max {
        return Err(InvalidSpec(format!("feedback range {feedback_range:?} must be finite and ordered")));
    }
    let mut sorted_prices = Vec::new();
    match &spec.kind {
        RewardKind::BinaryClick { threshold } => {
            if !(f_min <= *threshold && *threshold <= f_max) {
                return Err(InvalidSpec(format!(
                    "click threshold {threshold} outside feedback range [{f_min}, {f_max}]"
                )));
            }
        }
        RewardKind::Revenue { prices } => {
            if let Some((item, p)) = prices.iter().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
                return Err(InvalidSpec(format!("price of `{item}` must be finite and non-negative, got {p}")));
            }
            sorted_prices = prices.values().copied().collect();
            sorted_prices.sort_by(|a, b| b.total_cmp(a));
        }
        RewardKind::Rating | RewardKind::SlateSum | RewardKind::SlateDcg => {
            if spec.normalize && f_min >= f_max {
                return Err(InvalidSpec(format!(
                    "normalization needs a non-degenerate feedback range, got [{f_min}, {f_max}]"
                )));
            }
        }
    }
    Ok(RewardFn {
        spec,
        bounds,
        feedback_range,
        sorted_prices,
    })
}

fn dcg_discount(slot: usize) -> f64 {
    // 1-based slot j has discount 1 / log2(j + 1).
    1.0 / ((slot + 2) as f64).log2()
}

impl RewardFn {
    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    fn resolve(&self, slot: Option<f64>) -> f64 {
        slot.unwrap_or(match self.spec.missing_policy {
            MissingPolicy::TreatAsZero => 0.0,
            MissingPolicy::TreatAsMin => self.feedback_range[0],
        })
    }

    /// The kind's raw value and its natural range for a slate of `n` slots.
    fn raw_value(&self, x: &RawOutcome) -> (f64, [f64; 2]) {
        let slots: Vec<f64> = x.feedback.iter().map(|s| self.resolve(*s)).collect();
        let first = || slots.first().copied().unwrap_or_else(|| self.resolve(None));
        let [f_min, f_max] = self.feedback_range;
        let n = slots.len();
        match &self.spec.kind {
            RewardKind::Rating => (first(), [f_min, f_max]),
            RewardKind::BinaryClick { threshold } => {
                (if first() >= *threshold { 1.0 } else { 0.0 }, [0.0, 1.0])
            }
            RewardKind::SlateSum => (
                slots.iter().sum(),
                [n as f64 * f_min, n as f64 * f_max],
            ),
            RewardKind::SlateDcg => {
                let discounts: f64 = (0..n).map(dcg_discount).sum();
                let dcg = slots
                    .iter()
                    .enumerate()
                    .map(|(j, rel)| rel * dcg_discount(j))
                    .sum();
                (dcg, [f_min * discounts, f_max * discounts])
            }
            RewardKind::Revenue { prices } => {
                let slate = x.action_taken.as_ref().map(|a| a.slate()).unwrap_or(&[]);
                let revenue = slate
                    .iter()
                    .zip(&slots)
                    .filter(|(_, fb)| **fb > 0.0)
                    .map(|(item, _)| prices.get(item).copied().unwrap_or(0.0))
                    .sum();
                let max_slate_sum = self.sorted_prices.iter().take(n).sum();
                (revenue, [0.0, max_slate_sum])
            }
        }
    }
}

impl RewardFunction for RewardFn {
    fn bounds(&self) -> RewardBounds {
        self.bounds
    }

    fn evaluate(&self, x: &RawOutcome) -> RewardOutcome {
        let (r_min, r_max) = (self.bounds.min(), self.bounds.max());
        let (value, [lo, hi]) = self.raw_value(x);
        let mapped = if !self.spec.normalize {
            value
        } else if hi <= lo {
            r_min
        } else {
            let t = (value - lo) / (hi - lo);
            // Exact at t == 1; the a + t(b - a) form is monotone in t.
            if t == 1.0 {
                r_max
            } else {
                r_min + t * (r_max - r_min)
            }
        };
        let reward = mapped.clamp(r_min, r_max);
        RewardOutcome {
            reward: Reward(reward),
            clamped: reward != mapped,
        }
    }
}
