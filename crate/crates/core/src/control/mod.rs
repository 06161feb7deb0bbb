//! Access-control configuration: formula and genie ACB, tabular
//! Q-learning, DQN agents (joint or cooperative), and the CPCL pipeline
//! that feeds an online LSTM prediction into the agents.

mod cpcl;
mod dqn;
mod formula;
mod grid;
mod policies;
mod replay;
mod tabular;

pub use cpcl::{cpcl_step, ActionPolicy, BacklogSource, Cpcl, CpclStep};
pub use dqn::{
    bellman_target, dqn_select_action, dqn_train_step, AgentSet, DqnAgent, DqnSettings, EpsilonSchedule, Factorization,
};
pub use formula::{acb_factor, dra_channels, formula_acb, genie_acb};
pub use grid::{ActionGrid, ActionSpace, ActionVariable};
pub use policies::{DqnController, EstimatorFormula, Genie, LabelEstimator, SlFormula, TabularQ};
pub use replay::{ReplayBuffer, Transition};
pub use tabular::{tabular_q_update, QTable, TabularTransition};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::neural::LayerRecord;
use crate::sim::{ControlAction, FrameReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "ACB")]
    Acb,
    #[serde(rename = "ACB_BO")]
    AcbBo,
    #[serde(rename = "DRA")]
    Dra,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Acb => "ACB",
            Scheme::AcbBo => "ACB_BO",
            Scheme::Dra => "DRA",
        }
    }

    pub fn variables(self) -> Vec<ActionVariable> {
        match self {
            Scheme::Acb => vec![ActionVariable::Acb],
            Scheme::AcbBo => vec![ActionVariable::Acb, ActionVariable::Backoff],
            Scheme::Dra => vec![ActionVariable::Acb, ActionVariable::Channels],
        }
    }
}

/// Static facts every controller needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSetup {
    pub scheme: Scheme,
    pub channels: u32,
    pub grid: ActionGrid,
    /// Back-off window used by controllers that do not choose one.
    pub default_backoff: u32,
    /// Upper clamp for every backlog estimate and prediction.
    pub cap: f64,
    /// Largest transmitter count searched by moment matching and MLE.
    pub search_max: u32,
}

impl ControlSetup {
    pub fn new(scheme: Scheme, channels: u32) -> Self {
        let grid = match scheme {
            Scheme::Dra => ActionGrid {
                channel_levels: Some(vec![channels / 3, 2 * channels / 3, channels].into_iter().filter(|&c| c > 0).collect()),
                ..ActionGrid::default()
            },
            _ => ActionGrid::default(),
        };
        Self { scheme, channels, grid, default_backoff: 0, cap: 10.0 * channels as f64, search_max: 10 * channels }
    }

    pub fn base_action(&self) -> ControlAction {
        let backoff = if self.scheme == Scheme::AcbBo { self.default_backoff } else { 0 };
        ControlAction::new(1.0, backoff, self.max_channels())
    }

    pub fn max_channels(&self) -> u32 {
        match (&self.scheme, &self.grid.channel_levels) {
            (Scheme::Dra, Some(levels)) => *levels.last().unwrap_or(&self.channels),
            _ => self.channels,
        }
    }

    pub fn space(&self) -> ActionSpace {
        ActionSpace::new(self.grid.clone(), self.scheme.variables(), self.base_action())
    }

    /// ACB rule on a backlog value; under DRA the channel count is picked first.
    pub fn formula_action(&self, backlog: f64) -> ControlAction {
        let r = match (&self.scheme, &self.grid.channel_levels) {
            (Scheme::Dra, Some(levels)) => dra_channels(backlog, levels),
            _ => self.channels,
        };
        ControlAction { acb_factor: acb_factor(backlog, r), num_channels: r, ..self.base_action() }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        if value.is_finite() {
            value.clamp(0.0, self.cap)
        } else {
            self.cap
        }
    }
}

/// What a controller may look at when choosing frame `t`'s action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameContext {
    pub frame: u64,
    /// Only the genie baseline reads this.
    pub true_backlog: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: ControlAction,
    /// Backlog value the decision was based on, when the controller has one.
    pub predicted_backlog: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Feedback {
    /// Approximate label produced from this frame's observation.
    pub label: Option<f64>,
}

/// A per-frame access-control strategy.
pub trait Controller: Send {
    fn decide(&mut self, ctx: &FrameContext) -> Result<Decision>;
    fn observe(&mut self, report: &FrameReport) -> Result<Feedback>;
    /// Called before each episode once the simulator's backlog is cleared.
    fn start_episode(&mut self) {}
    /// Turns online parameter updates on or off.
    fn set_learning(&mut self, _on: bool) {}
    /// Turns exploration on or off (off means greedy).
    fn set_exploration(&mut self, _on: bool) {}
    /// Learned network layers, in checkpoint order, if the controller has any.
    fn checkpoint(&self) -> Option<Vec<LayerRecord>> {
        None
    }
    /// Learned Q-table, for tabular controllers.
    fn q_table(&self) -> Option<&QTable> {
        None
    }
}
