use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const DEFAULT_WINDOW: usize = 5;
pub const MIN_EPISODES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// 1-based episode at which the curve settles; `None` means not converged.
    pub converged_at: Option<usize>,
    pub window: usize,
    pub tolerance: f64,
    pub final_mean: f64,
    pub episodes: usize,
}

/// Finds where a training curve reaches its plateau.
///
/// The trailing mean at episode `e` averages episodes `max(1, e-w+1)..=e`.
/// The curve converges at the first episode of the earliest trailing window
/// such that it, and every later trailing window, stays within `tolerance`
/// (relative) of the final window's mean. Curves that only settle in the
/// final window, or whose final mean is not positive, are reported as not
/// converged.
pub fn convergence_report(curve: &[f64], tolerance: f64, window: usize) -> Result<ConvergenceReport> {
    let n = curve.len();
    if n < MIN_EPISODES {
        return Err(Error::InvalidArgument(format!("a convergence report needs at least {MIN_EPISODES} episodes, got {n}")));
    }
    if !(tolerance > 0.0) || window == 0 || window > n / 2 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive and the window in 1..={}",
            n / 2
        )));
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training curve contains non-finite values".into()));
    }
    let trailing = |e: usize| -> f64 {
        let start = (e + 1).saturating_sub(window);
        curve[start..=e].iter().sum::<f64>() / (e + 1 - start) as f64
    };
    let final_mean = trailing(n - 1);
    let mut report = ConvergenceReport { converged_at: None, window, tolerance, final_mean, episodes: n };
    if !(final_mean > 0.0) {
        return Ok(report);
    }
    let within = |e: usize| (trailing(e) - final_mean).abs() <= tolerance * final_mean;
    // Walk back from the end to find the earliest window after which all stay within.
    let mut first = n - 1;
    while first > 0 && within(first - 1) {
        first -= 1;
    }
    if first < n - 1 {
        report.converged_at = Some((first + 1).saturating_sub(window) + 1);
    }
    Ok(report)
}

/// Reads `successes` per episode for each trial from an episode CSV.
pub fn read_episode_curves(path: &Path) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::InvalidArgument(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("episode CSV has no `{name}` column")))
    };
    let (trial_col, episode_col, success_col) = (column("trial")?, column("episode")?, column("successes")?);
    let mut curves: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad value `{}`: {e}", &record[i])))
        };
        curves.entry(parse(trial_col)? as usize).or_default().push((parse(episode_col)? as usize, parse(success_col)?));
    }
    Ok(curves
        .into_iter()
        .map(|(trial, mut rows)| {
            rows.sort_by_key(|r| r.0);
            (trial, rows.into_iter().map(|r| r.1).collect())
        })
        .collect())
}

/// Episode-wise mean over trials (curves must have equal length).
pub fn mean_curve(curves: &BTreeMap<usize, Vec<f64>>) -> Result<Vec<f64>> {
    let len = curves.values().next().map_or(0, Vec::len);
    if curves.values().any(|c| c.len() != len) {
        return Err(Error::InvalidArgument("trials have different episode counts".into()));
    }
    let k = curves.len() as f64;
    Ok((0..len).map(|e| curves.values().map(|c| c[e]).sum::<f64>() / k).collect())
}
