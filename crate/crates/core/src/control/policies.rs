use crate::error::Result;
use crate::neural::LayerRecord;
use crate::estimators::{da_update, mom_closed_form, mom_full, DaState, EstimateSource, MleEstimator};
use crate::predictor::{DnnCorrector, LabelRecord, LstmPredictor, ObservationWindow};
use crate::rng::RngStream;
use crate::sim::{FrameReport, Observation};

use super::dqn::{AgentSet, EpsilonSchedule};
use super::grid::ActionSpace;
use super::tabular::{argmax, tabular_q_update, QTable, TabularTransition};
use super::{ControlSetup, Controller, Decision, Feedback, FrameContext};

/// Source of approximate backlog labels computed from one observation.
#[derive(Debug, Clone)]
pub enum LabelEstimator {
    MomIdle,
    MomFull,
    Mle(MleEstimator),
    Dnn(DnnCorrector),
}

impl LabelEstimator {
    pub fn source(&self) -> EstimateSource {
        match self {
            LabelEstimator::MomIdle => EstimateSource::MomIdle,
            LabelEstimator::MomFull => EstimateSource::MomFull,
            LabelEstimator::Mle(_) => EstimateSource::Mle,
            LabelEstimator::Dnn(_) => EstimateSource::Dnn,
        }
    }

    /// Backlog estimate clamped to `[0, cap]`.
    pub fn estimate(&mut self, obs: &Observation, setup: &ControlSetup) -> Result<f64> {
        let value = match self {
            LabelEstimator::MomIdle => mom_closed_form(obs)?.value,
            LabelEstimator::MomFull => mom_full(obs, setup.search_max.max(obs.success))?.value,
            LabelEstimator::Mle(mle) => match mle.estimate(obs) {
                Ok(e) => e.value,
                // Observations beyond the likelihood tables fall back to moment matching.
                Err(_) => mom_full(obs, setup.search_max.max(obs.success))?.value,
            },
            LabelEstimator::Dnn(net) => net.estimate(obs)?.value,
        };
        Ok(setup.clamp(value))
    }
}

/// ACB rule driven by the true backlog.
#[derive(Debug, Clone)]
pub struct Genie {
    setup: ControlSetup,
}

impl Genie {
    pub fn new(setup: ControlSetup) -> Self {
        Self { setup }
    }
}

impl Controller for Genie {
    fn decide(&mut self, ctx: &FrameContext) -> Result<Decision> {
        let n = ctx.true_backlog as f64;
        Ok(Decision { action: self.setup.formula_action(n), predicted_backlog: Some(n) })
    }

    fn observe(&mut self, _report: &FrameReport) -> Result<Feedback> {
        Ok(Feedback::default())
    }
}

#[derive(Debug, Clone)]
enum Tracker {
    Da(DaState),
    Label(LabelEstimator),
}

/// ACB rule driven by a non-learning estimator; the estimate from frame
/// `t` is used as the prediction for frame `t + 1`.
#[derive(Debug, Clone)]
pub struct EstimatorFormula {
    setup: ControlSetup,
    tracker: Tracker,
    estimate: f64,
}

impl EstimatorFormula {
    pub fn drift(setup: ControlSetup, state: DaState) -> Self {
        Self { setup, tracker: Tracker::Da(state), estimate: 0.0 }
    }

    pub fn with_estimator(setup: ControlSetup, estimator: LabelEstimator) -> Self {
        Self { setup, tracker: Tracker::Label(estimator), estimate: 0.0 }
    }
}

impl Controller for EstimatorFormula {
    fn decide(&mut self, _ctx: &FrameContext) -> Result<Decision> {
        Ok(Decision { action: self.setup.formula_action(self.estimate), predicted_backlog: Some(self.estimate) })
    }

    fn observe(&mut self, report: &FrameReport) -> Result<Feedback> {
        let obs = &report.observation;
        self.estimate = match &mut self.tracker {
            Tracker::Da(state) => {
                *state = da_update(state, obs);
                state.current_estimate = self.setup.clamp(state.current_estimate);
                state.current_estimate
            }
            Tracker::Label(est) => est.estimate(obs, &self.setup)?,
        };
        Ok(Feedback::default())
    }

    fn start_episode(&mut self) {
        self.estimate = 0.0;
        if let Tracker::Da(state) = &mut self.tracker {
            state.current_estimate = 0.0;
        }
    }
}

/// ACB rule driven by the online LSTM predictor, trained with labels
/// computed one frame late from each observation.
#[derive(Debug, Clone)]
pub struct SlFormula {
    setup: ControlSetup,
    pub predictor: LstmPredictor,
    labeler: LabelEstimator,
    window: ObservationWindow,
    pending: Option<LabelRecord>,
    learning: bool,
}

impl SlFormula {
    pub fn new(setup: ControlSetup, predictor: LstmPredictor, labeler: LabelEstimator) -> Self {
        let window = ObservationWindow::new(predictor.settings.window, setup.grid.max_backoff());
        Self { setup, predictor, labeler, window, pending: None, learning: true }
    }
}

impl Controller for SlFormula {
    fn decide(&mut self, ctx: &FrameContext) -> Result<Decision> {
        let input = self.window.input();
        let predicted = self.predictor.predict(&input)?.value;
        self.pending = Some(LabelRecord {
            frame: ctx.frame,
            predicted,
            label: 0.0,
            label_source: self.labeler.source(),
            input,
        });
        Ok(Decision { action: self.setup.formula_action(predicted), predicted_backlog: Some(predicted) })
    }

    fn observe(&mut self, report: &FrameReport) -> Result<Feedback> {
        let obs = &report.observation;
        let label = self.labeler.estimate(obs, &self.setup)?;
        self.window.push(obs);
        if let Some(mut record) = self.pending.take() {
            record.label = label;
            if self.learning {
                self.predictor.online_update(record, obs.frame + 1)?;
            }
        }
        Ok(Feedback { label: Some(label) })
    }

    fn start_episode(&mut self) {
        self.window.clear();
        self.pending = None;
    }

    fn set_learning(&mut self, on: bool) {
        self.learning = on;
    }

    fn checkpoint(&self) -> Option<Vec<LayerRecord>> {
        Some(self.predictor.to_records())
    }
}

/// Tabular Q-learning over buckets of the moment-matching estimate.
#[derive(Debug, Clone)]
pub struct TabularQ {
    setup: ControlSetup,
    space: ActionSpace,
    pub table: QTable,
    pub epsilon: EpsilonSchedule,
    alpha: f64,
    gamma: f64,
    bucket_width: f64,
    buckets: u64,
    estimate: f64,
    pending: Option<(u64, usize)>,
    rng: RngStream,
    learning: bool,
    exploring: bool,
}

impl TabularQ {
    pub fn new(setup: ControlSetup, alpha: f64, gamma: f64, epsilon: EpsilonSchedule, rng: RngStream) -> Self {
        let space = setup.space();
        let bucket_width = setup.channels as f64 / 4.0;
        let buckets = (setup.cap / bucket_width).ceil() as u64 + 1;
        Self {
            table: QTable::new(space.joint_size()),
            space,
            setup,
            epsilon,
            alpha,
            gamma,
            bucket_width,
            buckets,
            estimate: 0.0,
            pending: None,
            rng,
            learning: true,
            exploring: true,
        }
    }

    pub fn bucket(&self, backlog: f64) -> u64 {
        ((backlog / self.bucket_width).floor() as u64).min(self.buckets - 1)
    }
}

impl Controller for TabularQ {
    fn decide(&mut self, _ctx: &FrameContext) -> Result<Decision> {
        let state = self.bucket(self.estimate);
        let eps = if self.exploring { self.epsilon.value() } else { 0.0 };
        let action = if self.rng.next_f64() < eps {
            self.rng.index(self.space.joint_size())
        } else {
            argmax(&self.table.row(state))
        };
        self.pending = Some((state, action));
        let indices = self.space.split(action);
        Ok(Decision { action: self.space.action(&indices), predicted_backlog: Some(self.estimate) })
    }

    fn observe(&mut self, report: &FrameReport) -> Result<Feedback> {
        let obs = &report.observation;
        self.estimate = self.setup.clamp(mom_full(obs, self.setup.search_max.max(obs.success))?.value);
        if let Some((state, action)) = self.pending.take() {
            if self.learning {
                let t = TabularTransition {
                    state,
                    action,
                    reward: obs.success as f64,
                    next_state: self.bucket(self.estimate),
                    terminal: false,
                };
                tabular_q_update(&mut self.table, &t, self.alpha, self.gamma);
                self.epsilon.advance();
            }
        }
        Ok(Feedback::default())
    }

    fn start_episode(&mut self) {
        self.estimate = 0.0;
        self.pending = None;
    }

    fn set_learning(&mut self, on: bool) {
        self.learning = on;
    }

    fn set_exploration(&mut self, on: bool) {
        self.exploring = on;
    }

    fn q_table(&self) -> Option<&QTable> {
        Some(&self.table)
    }
}

/// One-step DQN optimizer: agents act on the flattened window of raw
/// observation features.
#[derive(Debug, Clone)]
pub struct DqnController {
    pub agents: AgentSet,
    window: ObservationWindow,
    pending: Option<(Vec<f64>, Vec<usize>)>,
    rng: RngStream,
    reward_scale: f64,
    learning: bool,
    exploring: bool,
}

impl DqnController {
    pub fn new(agents: AgentSet, window_len: usize, max_backoff: u32, reward_scale: f64, rng: RngStream) -> Self {
        Self {
            agents,
            window: ObservationWindow::new(window_len, max_backoff),
            pending: None,
            rng,
            reward_scale,
            learning: true,
            exploring: true,
        }
    }
}

impl Controller for DqnController {
    fn decide(&mut self, _ctx: &FrameContext) -> Result<Decision> {
        let state = self.window.input().flatten();
        let eps = if self.exploring { self.agents.epsilon.value() } else { 0.0 };
        let (action, chosen) = self.agents.select(&state, eps, &mut self.rng)?;
        self.pending = Some((state, chosen));
        Ok(Decision { action, predicted_backlog: None })
    }

    fn observe(&mut self, report: &FrameReport) -> Result<Feedback> {
        self.window.push(&report.observation);
        if let Some((state, chosen)) = self.pending.take() {
            if self.learning {
                let next = self.window.input().flatten();
                let reward = report.observation.success as f64 * self.reward_scale;
                self.agents.record(&state, &chosen, reward, &next, false);
                self.agents.learn(&mut self.rng)?;
            }
        }
        Ok(Feedback::default())
    }

    fn start_episode(&mut self) {
        self.window.clear();
        self.pending = None;
    }

    fn set_learning(&mut self, on: bool) {
        self.learning = on;
    }

    fn set_exploration(&mut self, on: bool) {
        self.exploring = on;
    }

    fn checkpoint(&self) -> Option<Vec<LayerRecord>> {
        Some(self.agents.to_records())
    }
}
