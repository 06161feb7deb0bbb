//! Arrival processes. The default is a time-limited Beta(3, 4) burst of
//! `A` devices spread over a `P`-frame period and repeated every period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    BetaPeriodic,
    Constant,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    #[serde(default = "default_kind")]
    pub kind: TrafficKind,
    #[serde(default = "default_total")]
    pub total_per_period: u64,
    #[serde(default = "default_period")]
    pub period: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_deterministic")]
    pub deterministic: bool,
}

fn default_kind() -> TrafficKind {
    TrafficKind::BetaPeriodic
}
fn default_total() -> u64 {
    200
}
fn default_period() -> u64 {
    10
}
fn default_alpha() -> f64 {
    3.0
}
fn default_beta() -> f64 {
    4.0
}
fn default_deterministic() -> bool {
    true
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            total_per_period: default_total(),
            period: default_period(),
            alpha: default_alpha(),
            beta: default_beta(),
            deterministic: default_deterministic(),
        }
    }
}

impl TrafficProfile {
    pub fn beta(total_per_period: u64, period: u64) -> Self {
        Self { total_per_period, period, ..Self::default() }
    }

    pub fn constant(total_per_period: u64, period: u64) -> Self {
        Self { kind: TrafficKind::Constant, total_per_period, period, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::config("traffic.period", "must be at least 1"));
        }
        if self.kind == TrafficKind::BetaPeriodic {
            if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                return Err(Error::config("traffic.alpha", "must be a positive finite number"));
            }
            if !(self.beta > 0.0 && self.beta.is_finite()) {
                return Err(Error::config("traffic.beta", "must be a positive finite number"));
            }
        }
        Ok(())
    }

    /// Mean arrivals per frame.
    pub fn mean_rate(&self) -> f64 {
        self.total_per_period as f64 / self.period as f64
    }
}

/// Per-frame weights of the Beta(alpha, beta) density sampled at the
/// midpoints `(i + 0.5) / P`, normalized to sum to one.
pub fn beta_weights(profile: &TrafficProfile) -> Vec<f64> {
    let p = profile.period as usize;
    // The Beta function cancels under normalization; work in log space so
    // large shapes do not underflow.
    let logs: Vec<f64> = (0..p)
        .map(|i| {
            let x = (i as f64 + 0.5) / p as f64;
            (profile.alpha - 1.0) * x.ln() + (profile.beta - 1.0) * (1.0 - x).ln()
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Splits `total` into integer counts proportional to `weights`, handing the
/// leftover units to the largest fractional parts (ties to the lower index).
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Stateful arrival generator; caches the current period's split in
/// multinomial mode.
#[derive(Debug, Clone)]
pub struct TrafficSource {
    profile: TrafficProfile,
    weights: Vec<f64>,
    fixed_counts: Vec<u64>,
    period_index: Option<u64>,
    period_counts: Vec<u64>,
}

impl TrafficSource {
    pub fn new(profile: TrafficProfile) -> Result<Self> {
        profile.validate()?;
        let p = profile.period as usize;
        let weights = match profile.kind {
            TrafficKind::BetaPeriodic => beta_weights(&profile),
            TrafficKind::Constant | TrafficKind::Poisson => vec![1.0 / p as f64; p],
        };
        let fixed_counts = largest_remainder(profile.total_per_period, &weights);
        Ok(Self { profile, weights, fixed_counts, period_index: None, period_counts: Vec::new() })
    }

    pub fn profile(&self) -> &TrafficProfile {
        &self.profile
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Arrivals in frame `t`.
    pub fn arrivals_at(&mut self, t: u64, rng: &mut RngStream) -> u64 {
        let period = self.profile.period;
        let offset = (t % period) as usize;
        match self.profile.kind {
            TrafficKind::Poisson => rng.poisson(self.profile.mean_rate()),
            TrafficKind::Constant => self.fixed_counts[offset],
            TrafficKind::BetaPeriodic if self.profile.deterministic => self.fixed_counts[offset],
            TrafficKind::BetaPeriodic => {
                let index = t / period;
                if self.period_index != Some(index) {
                    self.period_counts = self.multinomial(rng);
                    self.period_index = Some(index);
                }
                self.period_counts[offset]
            }
        }
    }

    fn multinomial(&self, rng: &mut RngStream) -> Vec<u64> {
        let mut cdf = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let mut counts = vec![0u64; self.weights.len()];
        for _ in 0..self.profile.total_per_period {
            let u = rng.next_f64() * acc;
            let slot = cdf.iter().position(|&c| u < c).unwrap_or(counts.len() - 1);
            counts[slot] += 1;
        }
        counts
    }
}
