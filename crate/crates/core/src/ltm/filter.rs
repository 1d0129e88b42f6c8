use crate::idf::DataObject;
use crate::layout::flatten;
use crate::model::EntitySnapshot;

/// Admission policy applied to snapshots before they reach the long-term tier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPolicy {
    /// Maximum kept frequency in Hz; `f64::INFINITY` disables rate limiting.
    pub max_hz: f64,
    /// Minimum L2 distance between flattened numeric leaves of consecutive kept snapshots.
    pub similarity_epsilon: f64,
}

impl FilterPolicy {
    pub fn new(max_hz: f64, similarity_epsilon: f64) -> Self {
        assert!(max_hz > 0.0, "max_hz must be positive");
        assert!(similarity_epsilon >= 0.0, "similarity_epsilon must be non-negative");
        FilterPolicy {
            max_hz,
            similarity_epsilon,
        }
    }

    pub fn keep_all() -> Self {
        FilterPolicy::new(f64::INFINITY, 0.0)
    }
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy::keep_all()
    }
}

fn snapshot_value(s: &EntitySnapshot) -> DataObject {
    DataObject::List(s.data().cloned().collect())
}

/// Indices of the snapshots kept from a strictly time-ordered sequence.
pub fn filter(snapshots: &[EntitySnapshot], policy: &FilterPolicy) -> Vec<usize> {
    let mut kept = Vec::new();
    let mut last: Option<(i64, crate::layout::Layout, Vec<f64>)> = None;
    for (i, s) in snapshots.iter().enumerate() {
        let (layout, x) = flatten(&snapshot_value(s));
        let keep = match &last {
            None => true,
            Some((t_last, last_layout, last_x)) => {
                let dt_us = (s.timestamp.0 - t_last) as f64;
                let rate_ok = policy.max_hz.is_infinite() || dt_us * policy.max_hz >= 1e6;
                let distinct = if *last_layout != layout {
                    true
                } else {
                    let d2: f64 = x.iter().zip(last_x).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2.sqrt() >= policy.similarity_epsilon
                };
                rate_ok && distinct
            }
        };
        if keep {
            kept.push(i);
            last = Some((s.timestamp.0, layout, x));
        }
    }
    kept
}
