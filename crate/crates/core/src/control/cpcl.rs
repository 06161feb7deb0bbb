//! Two-step optimizer: an online LSTM predicts the frame's backlog, the
//! prediction (with the last applied action) is the agents' state, and a
//! pretrained single-frame network supplies the one-frame-late labels that
//! keep the predictor adapting.

use log::warn;

use crate::error::Result;
use crate::neural::LayerRecord;
use crate::estimators::{mom_full, EstimateSource};
use crate::predictor::{DnnCorrector, LabelRecord, LstmPredictor, ObservationWindow};
use crate::rng::RngStream;
use crate::sim::{ControlAction, FrameReport};

use super::dqn::AgentSet;
use super::{ControlSetup, Controller, Decision, Feedback, FrameContext};

/// Where the frame's backlog prediction comes from.
#[derive(Debug, Clone)]
pub enum BacklogSource {
    Lstm(Box<LstmPredictor>),
    /// Reads the true backlog; used to check the pipeline's wiring.
    Genie,
}

/// How the action is chosen from the prediction.
#[derive(Debug, Clone)]
pub enum ActionPolicy {
    Agents(AgentSet),
    /// The ACB rule applied to the prediction.
    Formula,
}

#[derive(Debug, Clone)]
pub struct Cpcl {
    setup: ControlSetup,
    pub backlog: BacklogSource,
    pub corrector: Option<DnnCorrector>,
    pub policy: ActionPolicy,
    window: ObservationWindow,
    last_action: ControlAction,
    next_prediction: Option<f64>,
    pending: Option<(Vec<f64>, Vec<usize>)>,
    record: Option<LabelRecord>,
    rng: RngStream,
    reward_scale: f64,
    include_observations: bool,
    learning: bool,
    exploring: bool,
    warned: bool,
}

/// Output of one decision: the action and the record awaiting its label.
#[derive(Debug, Clone, PartialEq)]
pub struct CpclStep {
    pub action: ControlAction,
    pub predicted: f64,
    pub record: Option<LabelRecord>,
}

impl Cpcl {
    pub fn new(
        setup: ControlSetup,
        backlog: BacklogSource,
        corrector: Option<DnnCorrector>,
        policy: ActionPolicy,
        window_len: usize,
        reward_scale: f64,
        rng: RngStream,
    ) -> Self {
        let window = ObservationWindow::new(window_len, setup.grid.max_backoff());
        let last_action = setup.base_action();
        Self {
            setup,
            backlog,
            corrector,
            policy,
            window,
            last_action,
            next_prediction: None,
            pending: None,
            record: None,
            rng,
            reward_scale,
            include_observations: false,
            learning: true,
            exploring: true,
            warned: false,
        }
    }

    /// Also feed the raw observation window to the agents.
    pub fn with_observations(mut self, on: bool) -> Self {
        self.include_observations = on;
        self
    }

    /// Dimension of the agents' state for a given action space.
    pub fn state_dim(setup: &ControlSetup, window_len: usize, include_observations: bool) -> usize {
        let obs = if include_observations { window_len * crate::predictor::FEATURES } else { 0 };
        1 + setup.scheme.variables().len() + obs
    }

    pub fn pending_record(&self) -> Option<&LabelRecord> {
        self.record.as_ref()
    }

    fn agent_state(&self, predicted: f64) -> Vec<f64> {
        let mut s = vec![predicted / self.setup.cap];
        s.extend(self.setup.space().encode(&self.last_action));
        if self.include_observations {
            s.extend(self.window.input().flatten());
        }
        s
    }

    fn predict(&self, ctx: &FrameContext) -> Result<f64> {
        match &self.backlog {
            BacklogSource::Lstm(p) => Ok(p.predict(&self.window.input())?.value),
            BacklogSource::Genie => Ok(ctx.true_backlog as f64),
        }
    }

    fn label(&mut self, report: &FrameReport) -> Result<f64> {
        let obs = &report.observation;
        let value = match &self.corrector {
            Some(net) => net.estimate(obs)?.value,
            None => {
                if !self.warned {
                    warn!("no pretrained correction network; labelling with moment matching");
                    self.warned = true;
                }
                mom_full(obs, self.setup.search_max.max(obs.success))?.value
            }
        };
        Ok(self.setup.clamp(value))
    }
}

/// Steps 1 and 2 for frame `ctx.frame`: predict the backlog and choose the action.
pub fn cpcl_step(cpcl: &mut Cpcl, ctx: &FrameContext) -> Result<CpclStep> {
    let predicted = match cpcl.next_prediction.take() {
        Some(p) => p,
        None => cpcl.predict(ctx)?,
    };
    let source = match cpcl.corrector {
        Some(_) => EstimateSource::Dnn,
        None => EstimateSource::MomFull,
    };
    cpcl.record = match cpcl.backlog {
        BacklogSource::Lstm(_) => Some(LabelRecord {
            frame: ctx.frame,
            predicted,
            label: 0.0,
            label_source: source,
            input: cpcl.window.input(),
        }),
        BacklogSource::Genie => None,
    };
    let action = match &cpcl.policy {
        ActionPolicy::Formula => cpcl.setup.formula_action(predicted),
        ActionPolicy::Agents(agents) => {
            let state = cpcl.agent_state(predicted);
            let eps = if cpcl.exploring { agents.epsilon.value() } else { 0.0 };
            let (action, chosen) = agents.select(&state, eps, &mut cpcl.rng)?;
            cpcl.pending = Some((state, chosen));
            action
        }
    };
    cpcl.last_action = action;
    Ok(CpclStep { action, predicted, record: cpcl.record.clone() })
}

impl Controller for Cpcl {
    fn decide(&mut self, ctx: &FrameContext) -> Result<Decision> {
        let step = cpcl_step(self, ctx)?;
        Ok(Decision { action: step.action, predicted_backlog: Some(step.predicted) })
    }

    /// Steps 3 and 4: label frame `t` from its observation, update the
    /// predictor with it, and train the agents on reward `S_t`.
    fn observe(&mut self, report: &FrameReport) -> Result<Feedback> {
        let label = self.label(report)?;
        self.window.push(&report.observation);
        let next_frame = report.observation.frame + 1;
        if let Some(mut record) = self.record.take() {
            record.label = label;
            if self.learning {
                if let BacklogSource::Lstm(p) = &mut self.backlog {
                    p.online_update(record, next_frame)?;
                }
            }
        }
        if let Some((state, chosen)) = self.pending.take() {
            if self.learning {
                let ctx = FrameContext { frame: next_frame, true_backlog: report.remaining_backlog() };
                let next_prediction = self.predict(&ctx)?;
                let next_state = self.agent_state(next_prediction);
                self.next_prediction = Some(next_prediction);
                let reward = report.observation.success as f64 * self.reward_scale;
                if let ActionPolicy::Agents(agents) = &mut self.policy {
                    agents.record(&state, &chosen, reward, &next_state, false);
                    agents.learn(&mut self.rng)?;
                }
            }
        }
        Ok(Feedback { label: Some(label) })
    }

    fn start_episode(&mut self) {
        self.window.clear();
        self.next_prediction = None;
        self.pending = None;
        self.record = None;
        self.last_action = self.setup.base_action();
    }

    fn set_learning(&mut self, on: bool) {
        self.learning = on;
    }

    fn set_exploration(&mut self, on: bool) {
        self.exploring = on;
    }

    /// Predictor layers (when it is learned) followed by the agents' layers.
    fn checkpoint(&self) -> Option<Vec<LayerRecord>> {
        let mut layers = match &self.backlog {
            BacklogSource::Lstm(p) => p.to_records(),
            BacklogSource::Genie => Vec::new(),
        };
        if let ActionPolicy::Agents(agents) = &self.policy {
            layers.extend(agents.to_records());
        }
        Some(layers)
    }
}
