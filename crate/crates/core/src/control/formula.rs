use crate::estimators::BacklogEstimate;
use crate::sim::ControlAction;

/// ACB factor `min(1, R / N)` with the denominator floored at one device.
pub fn acb_factor(backlog: f64, r: u32) -> f64 {
    (r as f64 / backlog.max(1.0)).min(1.0)
}

/// ACB rule on an estimate. Back-off window and channel count come from `base`;
/// `r` is the channel count the rule divides by.
pub fn formula_acb(estimate: &BacklogEstimate, r: u32, base: ControlAction) -> ControlAction {
    ControlAction { acb_factor: acb_factor(estimate.value, r), num_channels: r, ..base }
}

/// ACB rule fed with the true backlog.
pub fn genie_acb(true_backlog: u64, r: u32, base: ControlAction) -> ControlAction {
    ControlAction { acb_factor: acb_factor(true_backlog as f64, r), num_channels: r, ..base }
}

/// Smallest channel level that covers the estimated backlog, or the largest level.
pub fn dra_channels(backlog: f64, levels: &[u32]) -> u32 {
    levels
        .iter()
        .copied()
        .find(|&l| l as f64 >= backlog)
        .or_else(|| levels.last().copied())
        .unwrap_or(1)
}
