//! Backlog estimators that work from a single frame's idle/success/collision
//! counts: drift tracking, moment matching and exact maximum likelihood.
//!
//! Observations reveal transmitters, not backlog. Every estimator here first
//! infers the transmitter count and then divides by the applied ACB factor
//! (clamped below at [`P_MIN`]) to report backlog.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{expected_moments, Observation};

/// Lower clamp on the ACB factor used for de-barring.
pub const P_MIN: f64 = 1.0 / 64.0;
/// Largest transmitter count the likelihood tables cover.
pub const MLE_MAX_TRANSMITTERS: u32 = 300;
/// Largest channel count the likelihood tables cover.
pub const MLE_MAX_CHANNELS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimateSource {
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "MoM_full")]
    MomFull,
    #[serde(rename = "MoM_idle")]
    MomIdle,
    #[serde(rename = "MLE")]
    Mle,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "DNN")]
    Dnn,
    #[serde(rename = "genie")]
    Genie,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacklogEstimate {
    pub value: f64,
    pub source: EstimateSource,
    /// Set when the observation carried no upper-bound information (no idle channel).
    pub saturated: bool,
}

impl BacklogEstimate {
    pub fn new(value: f64, source: EstimateSource) -> Self {
        debug_assert!(value.is_finite() && value >= 0.0, "estimate {value}");
        Self { value, source, saturated: false }
    }
}

fn debar(transmitters: f64, obs: &Observation) -> f64 {
    transmitters / obs.action.acb_factor.max(P_MIN)
}

/// State of the drift-analysis tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaState {
    pub current_estimate: f64,
    /// Devices added per unit of excess collisions.
    pub drift_coefficient: f64,
    /// Arrivals per frame added on every update.
    pub arrival_rate_estimate: f64,
    /// When set, `arrival_rate_estimate` tracks an exponential moving
    /// average of observed successes with this weight.
    pub rate_smoothing: Option<f64>,
}

/// Expected colliders per collided channel for Poisson(1) channel load.
pub const DA_DEFAULT_DRIFT: f64 = 2.39;

impl DaState {
    pub fn new(arrival_rate: f64) -> Self {
        Self {
            current_estimate: 0.0,
            drift_coefficient: DA_DEFAULT_DRIFT,
            arrival_rate_estimate: arrival_rate,
            rate_smoothing: None,
        }
    }

    pub fn adaptive(smoothing: f64) -> Self {
        Self { rate_smoothing: Some(smoothing), ..Self::new(0.0) }
    }

    pub fn estimate(&self) -> BacklogEstimate {
        BacklogEstimate::new(self.current_estimate, EstimateSource::Da)
    }
}

/// One drift-analysis step: remove the observed successes, add the arrival
/// estimate, and correct by the gap between observed and expected collisions.
pub fn da_update(state: &DaState, obs: &Observation) -> DaState {
    let r = obs.channels();
    let p = obs.action.acb_factor;
    let (_, _, expected_collisions) = expected_moments(state.current_estimate * p, r);
    let mut next = *state;
    if let Some(w) = state.rate_smoothing {
        next.arrival_rate_estimate = (1.0 - w) * state.arrival_rate_estimate + w * obs.success as f64;
    }
    let drift = state.drift_coefficient * (obs.collision as f64 - expected_collisions);
    let value = (state.current_estimate - obs.success as f64).max(0.0) + next.arrival_rate_estimate + drift;
    next.current_estimate = if value.is_finite() { value.max(0.0) } else { 0.0 };
    next
}

/// Transmitter count that makes the expected idle count equal the observed one.
fn idle_inverse(idle: f64, r: u32) -> f64 {
    (idle / r as f64).ln() / (1.0 - 1.0 / r as f64).ln()
}

/// Closed-form estimate from the idle count alone.
pub fn mom_closed_form(obs: &Observation) -> Result<BacklogEstimate> {
    let r = obs.channels();
    if r < 2 {
        return Err(Error::InvalidArgument("idle-moment inversion needs at least 2 channels".into()));
    }
    if obs.idle >= r {
        return Ok(BacklogEstimate::new(0.0, EstimateSource::MomIdle));
    }
    if obs.idle == 0 {
        let m = idle_inverse(0.5, r);
        return Ok(BacklogEstimate { value: debar(m, obs), source: EstimateSource::MomIdle, saturated: true });
    }
    let m = idle_inverse(obs.idle as f64, r);
    Ok(BacklogEstimate::new(debar(m, obs), EstimateSource::MomIdle))
}

fn moment_discrepancy(m: f64, r: u32, counts: (f64, f64, f64)) -> f64 {
    let (ei, es, ec) = expected_moments(m, r);
    let di = ei - counts.0;
    let ds = es - counts.1;
    let dc = ec - counts.2;
    di * di + ds * ds + dc * dc
}

/// Moment matching on real-valued (I, S, C) counts: the integer transmitter
/// count in `[lower, search_max]` with the smallest squared discrepancy,
/// ties to the smaller count.
pub fn mom_full_counts(counts: (f64, f64, f64), r: u32, lower: u32, search_max: u32) -> u32 {
    let mut best = lower;
    let mut best_err = f64::INFINITY;
    for m in lower..=search_max {
        let err = moment_discrepancy(m as f64, r, counts);
        if err < best_err {
            best_err = err;
            best = m;
        }
    }
    best
}

/// Transmitter count in `[S, search_max]` minimizing the squared distance
/// between expected and observed (I, S, C).
pub fn mom_full_transmitters(obs: &Observation, search_max: u32) -> Result<u32> {
    if search_max < obs.success {
        return Err(Error::InvalidArgument(format!(
            "search_max {search_max} below the observed success count {}",
            obs.success
        )));
    }
    let counts = (obs.idle as f64, obs.success as f64, obs.collision as f64);
    Ok(mom_full_counts(counts, obs.channels(), obs.success, search_max))
}

pub fn mom_full(obs: &Observation, search_max: u32) -> Result<BacklogEstimate> {
    let m = mom_full_transmitters(obs, search_max)?;
    let mut est = BacklogEstimate::new(debar(m as f64, obs), EstimateSource::MomFull);
    est.saturated = obs.idle == 0;
    Ok(est)
}

/// Exact joint law of (idle, singleton) channel counts after `m`
/// sequential uniform placements into `r` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    r: u32,
    /// `probs[idle * (r + 1) + success]`
    probs: Vec<f64>,
}

impl OutcomeDistribution {
    fn empty(r: u32) -> Self {
        let n = (r as usize + 1) * (r as usize + 1);
        let mut probs = vec![0.0; n];
        probs[Self::slot(r, r, 0)] = 1.0;
        Self { r, probs }
    }

    fn slot(r: u32, idle: u32, success: u32) -> usize {
        idle as usize * (r as usize + 1) + success as usize
    }

    pub fn channels(&self) -> u32 {
        self.r
    }

    pub fn prob(&self, idle: u32, success: u32) -> f64 {
        if idle > self.r || success > self.r || idle + success > self.r {
            return 0.0;
        }
        self.probs[Self::slot(self.r, idle, success)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Nonzero entries as `((idle, success), probability)`.
    pub fn support(&self) -> Vec<((u32, u32), f64)> {
        let mut out = Vec::new();
        for idle in 0..=self.r {
            for success in 0..=(self.r - idle) {
                let p = self.prob(idle, success);
                if p > 0.0 {
                    out.push(((idle, success), p));
                }
            }
        }
        out
    }

    /// Adds one device: an empty channel becomes a singleton with
    /// probability e/r, a singleton becomes collided with probability s/r,
    /// otherwise the device lands on an already-collided channel.
    fn place_one(&self) -> Self {
        let r = self.r;
        let rf = r as f64;
        let mut next = vec![0.0; self.probs.len()];
        for e in 0..=r {
            for s in 0..=(r - e) {
                let p = self.probs[Self::slot(r, e, s)];
                if p == 0.0 {
                    continue;
                }
                let collided = (r - e - s) as f64;
                if e > 0 {
                    next[Self::slot(r, e - 1, s + 1)] += p * e as f64 / rf;
                }
                if s > 0 {
                    next[Self::slot(r, e, s - 1)] += p * s as f64 / rf;
                }
                if collided > 0.0 {
                    next[Self::slot(r, e, s)] += p * collided / rf;
                }
            }
        }
        Self { r, probs: next }
    }
}

fn check_mle_domain(m: u32, r: u32) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidArgument("zero channels".into()));
    }
    if r > MLE_MAX_CHANNELS {
        return Err(Error::InvalidArgument(format!("{r} channels exceeds {MLE_MAX_CHANNELS}")));
    }
    if m > MLE_MAX_TRANSMITTERS {
        return Err(Error::InvalidArgument(format!("{m} transmitters exceeds {MLE_MAX_TRANSMITTERS}")));
    }
    Ok(())
}

pub fn mle_outcome_distribution(m: u32, r: u32) -> Result<OutcomeDistribution> {
    check_mle_domain(m, r)?;
    let mut dist = OutcomeDistribution::empty(r);
    for _ in 0..m {
        dist = dist.place_one();
    }
    Ok(dist)
}

/// Likelihood tables P(I, S | m) for m = 0..=max, one channel count.
#[derive(Debug, Clone)]
pub struct LikelihoodTable {
    by_count: Vec<OutcomeDistribution>,
}

impl LikelihoodTable {
    pub fn new(r: u32, max_transmitters: u32) -> Result<Self> {
        check_mle_domain(max_transmitters, r)?;
        let mut by_count = Vec::with_capacity(max_transmitters as usize + 1);
        let mut dist = OutcomeDistribution::empty(r);
        by_count.push(dist.clone());
        for _ in 0..max_transmitters {
            dist = dist.place_one();
            by_count.push(dist.clone());
        }
        Ok(Self { by_count })
    }

    pub fn channels(&self) -> u32 {
        self.by_count[0].r
    }

    pub fn max_transmitters(&self) -> u32 {
        self.by_count.len() as u32 - 1
    }

    pub fn distribution(&self, m: u32) -> &OutcomeDistribution {
        &self.by_count[m as usize]
    }

    /// Maximum-likelihood transmitter count in `[S + 2C, search_max]`, ties to the smaller count.
    pub fn argmax(&self, obs: &Observation, search_max: u32) -> Result<u32> {
        if obs.channels() != self.channels() {
            return Err(Error::ShapeMismatch { expected: self.channels() as usize, actual: obs.channels() as usize });
        }
        let upper = search_max.min(self.max_transmitters());
        let lower = obs.success + 2 * obs.collision;
        let mut best = None;
        let mut best_p = 0.0;
        for m in lower..=upper {
            let p = self.by_count[m as usize].prob(obs.idle, obs.success);
            if p > best_p {
                best_p = p;
                best = Some(m);
            }
        }
        best.ok_or(Error::InconsistentObservation)
    }
}

/// Maximum-likelihood backlog estimate. Builds the table on each call; use
/// [`MleEstimator`] to amortize it across frames.
pub fn mle_estimate(obs: &Observation, search_max: u32) -> Result<BacklogEstimate> {
    let table = LikelihoodTable::new(obs.channels(), search_max.min(MLE_MAX_TRANSMITTERS))?;
    mle_from_table(&table, obs, search_max)
}

fn mle_from_table(table: &LikelihoodTable, obs: &Observation, search_max: u32) -> Result<BacklogEstimate> {
    if obs.idle == obs.channels() {
        return Ok(BacklogEstimate::new(0.0, EstimateSource::Mle));
    }
    let m = table.argmax(obs, search_max)?;
    let mut est = BacklogEstimate::new(debar(m as f64, obs), EstimateSource::Mle);
    est.saturated = obs.idle == 0;
    Ok(est)
}

/// Caches likelihood tables per channel count.
#[derive(Debug, Clone, Default)]
pub struct MleEstimator {
    search_max: u32,
    tables: Vec<LikelihoodTable>,
}

impl MleEstimator {
    pub fn new(search_max: u32) -> Self {
        Self { search_max: search_max.min(MLE_MAX_TRANSMITTERS), tables: Vec::new() }
    }

    pub fn estimate(&mut self, obs: &Observation) -> Result<BacklogEstimate> {
        let r = obs.channels();
        let pos = match self.tables.iter().position(|t| t.channels() == r) {
            Some(pos) => pos,
            None => {
                self.tables.push(LikelihoodTable::new(r, self.search_max)?);
                self.tables.len() - 1
            }
        };
        mle_from_table(&self.tables[pos], obs, self.search_max)
    }
}
