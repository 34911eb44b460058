//! Pareto dominance and frontier extraction over cost-quality points.
//!
//! Lower cost and higher accuracy are better. The frontier keeps exactly the
//! non-dominated points, sorted by ascending cost (and therefore ascending
//! accuracy); exact duplicates collapse to one representative chosen by
//! label order. The sweep here is O(n log n); tests check it against the
//! O(n^2) all-pairs filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    /// Normalized compute or memory cost; strictly positive.
    pub cost: f64,
    /// Quality, higher is better. Loss-style metrics enter negated.
    pub accuracy: f64,
    pub label: String,
}

impl TradeoffPoint {
    pub fn new(cost: f64, accuracy: f64, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if !(cost > 0.0) || !cost.is_finite() || !accuracy.is_finite() {
            return Err(Error::InvalidPoint {
                label,
                cost,
                accuracy,
            });
        }
        Ok(TradeoffPoint {
            cost,
            accuracy,
            label,
        })
    }

    /// Ingest a loss-style metric (lower is better) by negation, so a single
    /// dominance direction serves both metric kinds.
    pub fn from_loss(cost: f64, loss: f64, label: impl Into<String>) -> Result<Self> {
        Self::new(cost, -loss, label)
    }
}

/// True iff `a` is at least as good on both axes and strictly better on one.
pub fn dominates(a: &TradeoffPoint, b: &TradeoffPoint) -> bool {
    a.cost <= b.cost
        && a.accuracy >= b.accuracy
        && (a.cost < b.cost || a.accuracy > b.accuracy)
}

/// Non-dominated subset, ascending in both cost and accuracy.
pub fn pareto_frontier(points: &[TradeoffPoint]) -> Result<Vec<TradeoffPoint>> {
    if points.is_empty() {
        return Err(Error::EmptyPoints);
    }
    {
        let mut labels: Vec<&str> = points.iter().map(|p| p.label.as_str()).collect();
        labels.sort_unstable();
        for w in labels.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateLabel(w[0].to_string()));
            }
        }
    }

    // collapse exact (cost, accuracy) duplicates to the first label in order
    let mut work: Vec<&TradeoffPoint> = points.iter().collect();
    work.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap()
            .then(b.accuracy.partial_cmp(&a.accuracy).unwrap())
            .then(a.label.cmp(&b.label))
    });
    work.dedup_by(|a, b| a.cost == b.cost && a.accuracy == b.accuracy);

    // sweep in cost order keeping strictly improving accuracy; the result
    // is already ascending in both fields
    let mut frontier: Vec<TradeoffPoint> = Vec::new();
    let mut best_acc = f64::NEG_INFINITY;
    for p in work {
        if p.accuracy > best_acc {
            best_acc = p.accuracy;
            frontier.push(p.clone());
        }
    }
    Ok(frontier)
}
