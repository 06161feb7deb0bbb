use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ActionGrid, ControlSetup, DqnSettings, EpsilonSchedule, Factorization, Scheme};
use crate::error::{Error, Result};
use crate::estimators::{MLE_MAX_CHANNELS, MLE_MAX_TRANSMITTERS};
use crate::predictor::PredictorSettings;
use crate::traffic::TrafficProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "genie")]
    Genie,
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "MoM_idle")]
    MomIdle,
    #[serde(rename = "MoM_full")]
    MomFull,
    #[serde(rename = "MLE")]
    Mle,
    #[serde(rename = "SL_formula")]
    SlFormula,
    #[serde(rename = "tabularQ")]
    TabularQ,
    #[serde(rename = "DQN")]
    Dqn,
    #[serde(rename = "CPCL")]
    Cpcl,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Genie => "genie",
            OptimizerKind::Da => "DA",
            OptimizerKind::MomIdle => "MoM_idle",
            OptimizerKind::MomFull => "MoM_full",
            OptimizerKind::Mle => "MLE",
            OptimizerKind::SlFormula => "SL_formula",
            OptimizerKind::TabularQ => "tabularQ",
            OptimizerKind::Dqn => "DQN",
            OptimizerKind::Cpcl => "CPCL",
        }
    }

    /// Optimizers that choose every controlled variable themselves.
    pub fn learns_actions(self) -> bool {
        matches!(self, OptimizerKind::TabularQ | OptimizerKind::Dqn | OptimizerKind::Cpcl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    #[serde(rename = "MoM_idle")]
    MomIdle,
    #[serde(rename = "MoM_full")]
    MomFull,
    #[serde(rename = "MLE")]
    Mle,
    #[serde(rename = "DNN")]
    Dnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub window: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub replay: usize,
    pub horizon: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { window: 10, hidden: 32, learning_rate: 1e-3, replay: 1, horizon: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Labelled frames simulated for the correction network.
    pub dnn_frames: usize,
    pub dnn_epochs: usize,
    pub dnn_batch: usize,
    pub dnn_learning_rate: f64,
    /// Fraction of the labelled frames held out for evaluation.
    pub dnn_holdout: f64,
    /// Training episodes for agent pretraining.
    pub agent_episodes: usize,
    /// Greedy evaluation episodes used to report the pretraining margin.
    pub eval_episodes: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dnn_frames: 100_000,
            dnn_epochs: 20,
            dnn_batch: 64,
            dnn_learning_rate: 1e-3,
            dnn_holdout: 0.1,
            agent_episodes: 100,
            eval_episodes: 10,
        }
    }
}

/// Tunables with declared defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub action_grid: Option<ActionGrid>,
    /// Back-off window for optimizers that do not choose one (ACB_BO only).
    pub default_backoff: u32,
    /// Estimates and predictions are clamped to `cap_factor * channels`.
    pub cap_factor: f64,
    /// Moment-matching and MLE search limit; defaults to the cap.
    pub search_max: Option<u32>,
    pub da_drift: f64,
    /// DA arrival rate per frame; defaults to the traffic's mean rate.
    pub da_rate: Option<f64>,
    pub predictor: PredictorConfig,
    /// Defaults to MoM_full for SL_formula and DNN for CPCL.
    pub label_source: Option<LabelSource>,
    /// Frames of online adaptation (in episodes) before recorded episodes start.
    pub warmup_frames: u64,
    pub dqn: DqnSettings,
    pub epsilon: EpsilonSchedule,
    pub factorization: Factorization,
    /// Multiplier on per-frame successes when used as a learning reward;
    /// defaults to `1 / channels`.
    pub reward_scale: Option<f64>,
    pub tabular_alpha: f64,
    pub tabular_gamma: f64,
    /// Also feed the raw observation window to the CPCL agents.
    pub cpcl_observations: bool,
    pub corrector_checkpoint: Option<String>,
    pub agent_checkpoint: Option<String>,
    /// Exploration rate after loading a pretrained agent; defaults to the schedule floor.
    pub pretrained_epsilon: Option<f64>,
    pub learning: bool,
    pub exploration: bool,
    pub pretrain: PretrainConfig,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            action_grid: None,
            default_backoff: 0,
            cap_factor: 10.0,
            search_max: None,
            da_drift: crate::estimators::DA_DEFAULT_DRIFT,
            da_rate: None,
            predictor: PredictorConfig::default(),
            label_source: None,
            warmup_frames: 0,
            dqn: DqnSettings::default(),
            epsilon: EpsilonSchedule::default(),
            factorization: Factorization::Cooperative,
            reward_scale: None,
            tabular_alpha: 0.1,
            tabular_gamma: 0.9,
            cpcl_observations: false,
            corrector_checkpoint: None,
            agent_checkpoint: None,
            pretrained_epsilon: None,
            learning: true,
            exploration: true,
            pretrain: PretrainConfig::default(),
        }
    }
}

fn default_channels() -> u32 {
    54
}
fn default_limit() -> u32 {
    10
}
fn default_episode_length() -> u64 {
    100
}
fn default_episodes() -> usize {
    10
}
fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub scheme: Scheme,
    pub optimizer: OptimizerKind,
    #[serde(default = "default_channels")]
    pub channels: u32,
    #[serde(default = "default_limit")]
    pub retransmission_limit: u32,
    #[serde(default)]
    pub traffic: TrafficProfile,
    #[serde(default = "default_episode_length")]
    pub episode_length: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub hyper: Hyper,
}

impl ExperimentConfig {
    pub fn new(scheme: Scheme, optimizer: OptimizerKind) -> Self {
        Self {
            name: None,
            scheme,
            optimizer,
            channels: default_channels(),
            retransmission_limit: default_limit(),
            traffic: TrafficProfile::default(),
            episode_length: default_episode_length(),
            episodes: default_episodes(),
            seed: 0,
            trials: default_trials(),
            hyper: Hyper::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::config(json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}:{}", self.scheme.as_str(), self.optimizer.as_str()))
    }

    pub fn grid(&self) -> ActionGrid {
        match &self.hyper.action_grid {
            Some(g) => g.clone(),
            None => ControlSetup::new(self.scheme, self.channels).grid,
        }
    }

    pub fn setup(&self) -> ControlSetup {
        let cap = self.hyper.cap_factor * self.channels as f64;
        ControlSetup {
            scheme: self.scheme,
            channels: self.channels,
            grid: self.grid(),
            default_backoff: self.hyper.default_backoff,
            cap,
            search_max: self.hyper.search_max.unwrap_or(cap.ceil() as u32),
        }
    }

    pub fn reward_scale(&self) -> f64 {
        self.hyper.reward_scale.unwrap_or(1.0 / self.channels as f64)
    }

    pub fn predictor_settings(&self) -> PredictorSettings {
        let p = &self.hyper.predictor;
        PredictorSettings {
            window: p.window,
            hidden: p.hidden,
            learning_rate: p.learning_rate,
            scale: self.channels as f64,
            cap: self.hyper.cap_factor * self.channels as f64,
            replay: p.replay,
            horizon: p.horizon,
        }
    }

    pub fn label_source(&self) -> LabelSource {
        self.hyper.label_source.unwrap_or(match self.optimizer {
            OptimizerKind::Cpcl => LabelSource::Dnn,
            _ => LabelSource::MomFull,
        })
    }

    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("channels", "must be at least 1"));
        }
        if self.retransmission_limit == 0 {
            return Err(Error::config("retransmission_limit", "must be at least 1"));
        }
        if self.episode_length == 0 {
            return Err(Error::config("episode_length", "must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        self.traffic.validate()?;
        let h = &self.hyper;
        if let Some(grid) = &h.action_grid {
            grid.validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::config(format!("hyper.{field}"), reason),
                other => other,
            })?;
            if self.scheme != Scheme::AcbBo && grid.bo_levels.iter().any(|&w| w > 0) {
                return Err(Error::config(
                    "hyper.action_grid.bo_levels",
                    format!("back-off window control requires scheme ACB_BO, not {}", self.scheme.as_str()),
                ));
            }
            if self.scheme != Scheme::Dra && grid.channel_levels.is_some() {
                return Err(Error::config(
                    "hyper.action_grid.channel_levels",
                    format!("channel control requires scheme DRA, not {}", self.scheme.as_str()),
                ));
            }
            if self.scheme == Scheme::Dra && grid.channel_levels.is_none() {
                return Err(Error::config("hyper.action_grid.channel_levels", "scheme DRA needs channel levels"));
            }
        }
        if self.scheme != Scheme::AcbBo && h.default_backoff > 0 {
            return Err(Error::config(
                "hyper.default_backoff",
                format!("back-off window control requires scheme ACB_BO, not {}", self.scheme.as_str()),
            ));
        }
        if !(h.cap_factor > 0.0 && h.cap_factor.is_finite()) {
            return Err(Error::config("hyper.cap_factor", "must be positive"));
        }
        if !(h.da_drift > 0.0) {
            return Err(Error::config("hyper.da_drift", "must be positive"));
        }
        if h.predictor.window == 0 || h.predictor.hidden == 0 {
            return Err(Error::config("hyper.predictor", "window and hidden size must be positive"));
        }
        if !(h.predictor.learning_rate > 0.0) {
            return Err(Error::config("hyper.predictor.learning_rate", "must be positive"));
        }
        if h.predictor.horizon == 0 {
            return Err(Error::config("hyper.predictor.horizon", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&h.dqn.gamma) {
            return Err(Error::config("hyper.dqn.gamma", "must lie in [0, 1)"));
        }
        if h.dqn.batch_size == 0 || h.dqn.buffer_capacity < h.dqn.batch_size {
            return Err(Error::config("hyper.dqn.batch_size", "must be positive and fit in the buffer"));
        }
        if h.dqn.hidden.iter().any(|&n| n == 0) {
            return Err(Error::config("hyper.dqn.hidden", "layer sizes must be positive"));
        }
        let e = &h.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.floor) || !(e.decay > 0.0 && e.decay <= 1.0) {
            return Err(Error::config("hyper.epsilon", "start and floor must lie in [0, 1], decay in (0, 1]"));
        }
        if let Some(pe) = h.pretrained_epsilon {
            if !(0.0..=1.0).contains(&pe) {
                return Err(Error::config("hyper.pretrained_epsilon", "must lie in [0, 1]"));
            }
        }
        if !(h.tabular_alpha > 0.0 && h.tabular_alpha <= 1.0) {
            return Err(Error::config("hyper.tabular_alpha", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&h.tabular_gamma) {
            return Err(Error::config("hyper.tabular_gamma", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&h.pretrain.dnn_holdout) {
            return Err(Error::config("hyper.pretrain.dnn_holdout", "must lie in [0, 1)"));
        }
        if self.optimizer == OptimizerKind::Mle && self.channels > MLE_MAX_CHANNELS {
            return Err(Error::config("channels", format!("MLE supports at most {MLE_MAX_CHANNELS} channels")));
        }
        if self.optimizer == OptimizerKind::Mle && self.setup().search_max > MLE_MAX_TRANSMITTERS {
            // Searches are truncated to the likelihood table size.
            log::debug!("MLE search truncated to {MLE_MAX_TRANSMITTERS} transmitters");
        }
        if self.optimizer == OptimizerKind::SlFormula
            && self.label_source() == LabelSource::Dnn
            && h.corrector_checkpoint.is_none()
        {
            return Err(Error::config(
                "hyper.corrector_checkpoint",
                "label_source DNN needs a pretrained correction network",
            ));
        }
        if h.agent_checkpoint.is_some() && !matches!(self.optimizer, OptimizerKind::Dqn | OptimizerKind::Cpcl) {
            return Err(Error::config("hyper.agent_checkpoint", "only DQN and CPCL optimizers load agents"));
        }
        Ok(())
    }
}

fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports unknown keys as "unknown field `x`"
    if let Some(rest) = msg.split("field `").nth(1) {
        if let Some(name) = rest.split('`').next() {
            return name.to_string();
        }
    }
    "config".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cfg = ExperimentConfig::from_json(r#"{"scheme": "ACB", "optimizer": "genie"}"#).unwrap();
        assert_eq!(cfg.channels, 54);
        assert_eq!(cfg.retransmission_limit, 10);
        assert_eq!(cfg.episode_length, 100);
        assert_eq!(cfg.traffic.total_per_period, 200);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_json(r#"{"scheme": "ACB", "optimizer": "genie", "chanels": 3}"#).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "chanels"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn backoff_under_plain_acb_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{"scheme": "ACB", "optimizer": "DQN", "hyper": {"default_backoff": 4}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "hyper.default_backoff"), "{err}");
        let err = ExperimentConfig::from_json(
            r#"{"scheme": "ACB", "optimizer": "DQN", "hyper": {"action_grid": {"acb_levels": [0.5, 1.0], "bo_levels": [0, 8]}}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "hyper.action_grid.bo_levels"), "{err}");
    }

    #[test]
    fn round_trip_is_field_equal() {
        let mut cfg = ExperimentConfig::new(Scheme::AcbBo, OptimizerKind::Cpcl);
        cfg.hyper.default_backoff = 4;
        cfg.hyper.epsilon.floor = 0.1;
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
