use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::control::{
    ActionPolicy, AgentSet, BacklogSource, ControlSetup, Controller, Cpcl, DqnController, EstimatorFormula,
    FrameContext, Genie, LabelEstimator, SlFormula, TabularQ,
};
use crate::error::{Error, Result};
use crate::estimators::{DaState, MleEstimator, MLE_MAX_TRANSMITTERS};
use crate::neural::{read_checkpoint, LayerRecord, LstmRegressor, Mlp};
use crate::predictor::{DnnCorrector, LstmPredictor, FEATURES};
use crate::rng::{trial_seed, RngStream};
use crate::sim::Simulator;
use crate::traffic::TrafficSource;

use super::config::{ExperimentConfig, LabelSource, OptimizerKind};

pub const SIM_STREAM: u64 = 1;
pub const TRAFFIC_STREAM: u64 = 2;
pub const CONTROL_STREAM: u64 = 3;
pub const INIT_STREAM: u64 = 4;

pub const FRAME_HEADER: &str = "trial,episode,frame,scheme,optimizer,p_acb,bo_window,channels,idle,success,collision,arrivals,true_backlog,predicted_backlog,label_backlog,drops,transmissions,reward";
pub const EPISODE_HEADER: &str = "trial,episode,successes,access_success_prob,mean_delay,transmissions,drops,pred_mae";

/// One frame of one episode; `frame` counts from 0 within the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub trial: usize,
    pub episode: usize,
    pub frame: u64,
    pub p_acb: f64,
    pub bo_window: u32,
    pub channels: u32,
    pub idle: u32,
    pub success: u32,
    pub collision: u32,
    pub arrivals: u64,
    pub true_backlog: u64,
    pub predicted_backlog: Option<f64>,
    pub label_backlog: Option<f64>,
    pub drops: u64,
    pub transmissions: u64,
    pub reward: f64,
}

/// Per-episode KPIs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub trial: usize,
    pub episode: usize,
    pub successes: u64,
    /// Successes over devices that arrived during the episode (1 when none arrived).
    pub access_success_prob: f64,
    /// Mean frames from arrival to success; `None` without successes.
    pub mean_delay: Option<f64>,
    pub transmissions: u64,
    pub drops: u64,
    /// Mean |predicted - true backlog| over frames with a prediction.
    pub pred_mae: Option<f64>,
}

/// Accumulates frame outcomes into [`EpisodeMetrics`].
#[derive(Debug, Clone, Default)]
pub struct EpisodeAccumulator {
    successes: u64,
    arrivals: u64,
    delay_sum: u64,
    transmissions: u64,
    drops: u64,
    abs_err_sum: f64,
    predictions: u64,
}

impl EpisodeAccumulator {
    pub fn add(&mut self, row: &FrameRow, delay_sum: u64) {
        self.successes += row.success as u64;
        self.arrivals += row.arrivals;
        self.delay_sum += delay_sum;
        self.transmissions += row.transmissions;
        self.drops += row.drops;
        if let Some(p) = row.predicted_backlog {
            self.abs_err_sum += (p - row.true_backlog as f64).abs();
            self.predictions += 1;
        }
    }

    pub fn finish(&self, trial: usize, episode: usize) -> EpisodeMetrics {
        EpisodeMetrics {
            trial,
            episode,
            successes: self.successes,
            access_success_prob: if self.arrivals == 0 {
                1.0
            } else {
                self.successes as f64 / self.arrivals as f64
            },
            mean_delay: (self.successes > 0).then(|| self.delay_sum as f64 / self.successes as f64),
            transmissions: self.transmissions,
            drops: self.drops,
            pred_mae: (self.predictions > 0).then(|| self.abs_err_sum / self.predictions as f64),
        }
    }
}

/// Pretrained networks shared (by cloning) across trials.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub corrector: Option<DnnCorrector>,
    pub agent_layers: Option<Vec<LayerRecord>>,
}

impl Resources {
    /// Reads the checkpoints named in the config.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let corrector = match &cfg.hyper.corrector_checkpoint {
            Some(path) => Some(corrector_from_layers(cfg, read_checkpoint(Path::new(path))?)?),
            None => None,
        };
        let agent_layers = match &cfg.hyper.agent_checkpoint {
            Some(path) => Some(read_checkpoint(Path::new(path))?),
            None => None,
        };
        Ok(Self { corrector, agent_layers })
    }
}

/// Rebuilds a correction network from checkpoint layers.
pub fn corrector_from_layers(cfg: &ExperimentConfig, layers: Vec<LayerRecord>) -> Result<DnnCorrector> {
    let count = layers.len();
    let mut queue: VecDeque<LayerRecord> = layers.into();
    let model = Mlp::take_from(&mut queue, count)?;
    if model.in_dim() != FEATURES || model.out_dim() != 1 {
        return Err(Error::Checkpoint(format!(
            "correction network maps {} -> {}, expected {FEATURES} -> 1",
            model.in_dim(),
            model.out_dim()
        )));
    }
    Ok(DnnCorrector { model, scale: cfg.channels as f64, max_backoff: cfg.grid().max_backoff() })
}

fn label_estimator(cfg: &ExperimentConfig, res: &Resources) -> Result<LabelEstimator> {
    let setup = cfg.setup();
    Ok(match cfg.label_source() {
        LabelSource::MomIdle => LabelEstimator::MomIdle,
        LabelSource::MomFull => LabelEstimator::MomFull,
        LabelSource::Mle => LabelEstimator::Mle(MleEstimator::new(setup.search_max.min(MLE_MAX_TRANSMITTERS))),
        LabelSource::Dnn => match &res.corrector {
            Some(c) => LabelEstimator::Dnn(c.clone()),
            None => {
                return Err(Error::config("hyper.corrector_checkpoint", "label_source DNN needs a correction network"))
            }
        },
    })
}

fn new_agents(cfg: &ExperimentConfig, setup: &ControlSetup, state_dim: usize, rng: &mut RngStream) -> AgentSet {
    AgentSet::new(setup.space(), cfg.hyper.factorization, state_dim, &cfg.hyper.dqn, cfg.hyper.epsilon, rng)
}

fn load_predictor(cfg: &ExperimentConfig, queue: &mut VecDeque<LayerRecord>) -> Result<LstmPredictor> {
    let settings = cfg.predictor_settings();
    let model = LstmRegressor::take_from(queue)?;
    if model.cell.input_size() != FEATURES || model.cell.hidden_size() != settings.hidden {
        return Err(Error::Checkpoint("predictor shape does not match the config".into()));
    }
    Ok(LstmPredictor::with_model(model, settings))
}

fn finish_loading(agents: &mut AgentSet, cfg: &ExperimentConfig, queue: &mut VecDeque<LayerRecord>) -> Result<()> {
    agents.load_records(queue)?;
    if !queue.is_empty() {
        return Err(Error::Checkpoint(format!("{} unexpected trailing layers", queue.len())));
    }
    agents.epsilon.set(cfg.hyper.pretrained_epsilon.unwrap_or(cfg.hyper.epsilon.floor));
    Ok(())
}

/// Builds the configured optimizer for one trial.
pub fn build_controller(cfg: &ExperimentConfig, seed: u64, res: &Resources) -> Result<Box<dyn Controller>> {
    let setup = cfg.setup();
    let control_rng = RngStream::new(seed, CONTROL_STREAM);
    let mut init_rng = RngStream::new(seed, INIT_STREAM);
    let window = cfg.hyper.predictor.window;
    let mut controller: Box<dyn Controller> = match cfg.optimizer {
        OptimizerKind::Genie => Box::new(Genie::new(setup)),
        OptimizerKind::Da => {
            let mut state = DaState::new(cfg.hyper.da_rate.unwrap_or_else(|| cfg.traffic.mean_rate()));
            state.drift_coefficient = cfg.hyper.da_drift;
            Box::new(EstimatorFormula::drift(setup, state))
        }
        OptimizerKind::MomIdle => Box::new(EstimatorFormula::with_estimator(setup, LabelEstimator::MomIdle)),
        OptimizerKind::MomFull => Box::new(EstimatorFormula::with_estimator(setup, LabelEstimator::MomFull)),
        OptimizerKind::Mle => {
            let mle = MleEstimator::new(setup.search_max.min(MLE_MAX_TRANSMITTERS));
            Box::new(EstimatorFormula::with_estimator(setup, LabelEstimator::Mle(mle)))
        }
        OptimizerKind::SlFormula => {
            let predictor = LstmPredictor::new(cfg.predictor_settings(), &mut init_rng);
            let labeler = label_estimator(cfg, res)?;
            Box::new(SlFormula::new(setup, predictor, labeler))
        }
        OptimizerKind::TabularQ => Box::new(TabularQ::new(
            setup,
            cfg.hyper.tabular_alpha,
            cfg.hyper.tabular_gamma,
            cfg.hyper.epsilon,
            control_rng,
        )),
        OptimizerKind::Dqn => {
            let mut agents = new_agents(cfg, &setup, window * FEATURES, &mut init_rng);
            if let Some(layers) = &res.agent_layers {
                let mut queue: VecDeque<LayerRecord> = layers.clone().into();
                finish_loading(&mut agents, cfg, &mut queue)?;
            }
            Box::new(DqnController::new(agents, window, setup.grid.max_backoff(), cfg.reward_scale(), control_rng))
        }
        OptimizerKind::Cpcl => {
            let include = cfg.hyper.cpcl_observations;
            let state_dim = Cpcl::state_dim(&setup, window, include);
            let mut predictor = LstmPredictor::new(cfg.predictor_settings(), &mut init_rng);
            let mut agents = new_agents(cfg, &setup, state_dim, &mut init_rng);
            if let Some(layers) = &res.agent_layers {
                let mut queue: VecDeque<LayerRecord> = layers.clone().into();
                predictor = load_predictor(cfg, &mut queue)?;
                finish_loading(&mut agents, cfg, &mut queue)?;
            }
            let cpcl = Cpcl::new(
                setup,
                BacklogSource::Lstm(Box::new(predictor)),
                res.corrector.clone(),
                ActionPolicy::Agents(agents),
                window,
                cfg.reward_scale(),
                control_rng,
            )
            .with_observations(include);
            Box::new(cpcl)
        }
    };
    controller.set_learning(cfg.hyper.learning);
    controller.set_exploration(cfg.hyper.exploration);
    Ok(controller)
}

/// Simulator, traffic and controller for one trial.
pub struct EpisodeRunner {
    pub trial: usize,
    pub controller: Box<dyn Controller>,
    sim: Simulator,
    traffic: TrafficSource,
    traffic_rng: RngStream,
    setup: ControlSetup,
    episode_length: u64,
    check_grid: bool,
    episodes_run: usize,
}

impl EpisodeRunner {
    pub fn new(cfg: &ExperimentConfig, trial: usize, seed: u64, controller: Box<dyn Controller>) -> Result<Self> {
        Ok(Self {
            trial,
            controller,
            sim: Simulator::new(cfg.retransmission_limit, RngStream::new(seed, SIM_STREAM)),
            traffic: TrafficSource::new(cfg.traffic.clone())?,
            traffic_rng: RngStream::new(seed, TRAFFIC_STREAM),
            setup: cfg.setup(),
            episode_length: cfg.episode_length,
            check_grid: cfg.optimizer.learns_actions(),
            episodes_run: 0,
        })
    }

    /// Runs one episode from an empty backlog.
    pub fn run_episode(&mut self, frames: Option<&mut Vec<FrameRow>>) -> Result<EpisodeMetrics> {
        let episode = self.episodes_run;
        self.episodes_run += 1;
        self.sim.clear_backlog();
        self.controller.start_episode();
        let mut acc = EpisodeAccumulator::default();
        let mut sink = frames;
        for k in 0..self.episode_length {
            let t = self.sim.frame();
            let arrivals = self.traffic.arrivals_at(t, &mut self.traffic_rng);
            let true_backlog = self.sim.admit(arrivals);
            let decision = self.controller.decide(&FrameContext { frame: t, true_backlog })?;
            if let Some(p) = decision.predicted_backlog {
                if !p.is_finite() {
                    return Err(Error::Numeric(format!("non-finite backlog prediction at frame {t}")));
                }
            }
            let action = decision.action;
            action.validate(Some(self.setup.max_channels()))?;
            if self.check_grid && !self.setup.grid.contains(&action) {
                return Err(Error::InvalidAction(format!("{action:?} is not on the action grid")));
            }
            let report = self.sim.resolve(&action)?;
            let feedback = self.controller.observe(&report)?;
            let obs = &report.observation;
            let row = FrameRow {
                trial: self.trial,
                episode,
                frame: k,
                p_acb: action.acb_factor,
                bo_window: action.backoff_window,
                channels: action.num_channels,
                idle: obs.idle,
                success: obs.success,
                collision: obs.collision,
                arrivals: report.new_arrivals,
                true_backlog: report.true_backlog,
                predicted_backlog: decision.predicted_backlog,
                label_backlog: feedback.label,
                drops: report.drops,
                transmissions: report.transmissions,
                reward: obs.success as f64,
            };
            acc.add(&row, report.successes.iter().map(|s| s.delay).sum());
            if let Some(rows) = sink.as_deref_mut() {
                rows.push(row);
            }
        }
        Ok(acc.finish(self.trial, episode))
    }
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub frames: Vec<FrameRow>,
    pub episodes: Vec<EpisodeMetrics>,
    /// Final learned layers, for optimizers that learn networks.
    pub checkpoint: Option<Vec<LayerRecord>>,
    /// Final Q-table as CSV, for tabular Q-learning.
    pub q_table_csv: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub record_frames: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record_frames: true }
    }
}

/// Runs warm-up (unrecorded) and then the recorded episodes of one trial.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize, res: &Resources, opts: RunOptions) -> Result<TrialResult> {
    let seed = trial_seed(cfg.seed, trial as u64);
    let controller = build_controller(cfg, seed, res)?;
    let mut runner = EpisodeRunner::new(cfg, trial, seed, controller)?;
    let warmup = cfg.hyper.warmup_frames.div_ceil(cfg.episode_length);
    for _ in 0..warmup {
        runner.run_episode(None)?;
    }
    runner.episodes_run = 0;
    let mut frames = Vec::new();
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let sink = opts.record_frames.then_some(&mut frames);
        episodes.push(runner.run_episode(sink)?);
    }
    let q_table_csv = match runner.controller.q_table() {
        Some(table) => {
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            Some(buf)
        }
        None => None,
    };
    Ok(TrialResult { trial, seed, frames, episodes, checkpoint: runner.controller.checkpoint(), q_table_csv })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub mean_successes: f64,
    pub mean_access_success_prob: f64,
    pub mean_delay: Option<f64>,
    pub mean_transmissions: f64,
    pub mean_drops: f64,
    pub mean_pred_mae: Option<f64>,
}

/// Trial means and their across-trial mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub scheme: String,
    pub optimizer: String,
    pub trials: usize,
    pub episodes: usize,
    pub successes: MeanStd,
    pub access_success_prob: MeanStd,
    pub mean_delay: Option<MeanStd>,
    pub transmissions: MeanStd,
    pub drops: MeanStd,
    pub pred_mae: Option<MeanStd>,
    pub per_trial: Vec<TrialSummary>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    mean_std(&v).mean
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean_std(&v).mean)
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, trials: &[TrialResult]) -> Self {
        let per_trial: Vec<TrialSummary> = trials
            .iter()
            .map(|t| {
                let e = &t.episodes;
                TrialSummary {
                    trial: t.trial,
                    seed: t.seed,
                    mean_successes: mean_of(e.iter().map(|m| m.successes as f64)),
                    mean_access_success_prob: mean_of(e.iter().map(|m| m.access_success_prob)),
                    mean_delay: mean_opt(e.iter().map(|m| m.mean_delay)),
                    mean_transmissions: mean_of(e.iter().map(|m| m.transmissions as f64)),
                    mean_drops: mean_of(e.iter().map(|m| m.drops as f64)),
                    mean_pred_mae: mean_opt(e.iter().map(|m| m.pred_mae)),
                }
            })
            .collect();
        let col = |f: &dyn Fn(&TrialSummary) -> f64| mean_std(&per_trial.iter().map(f).collect::<Vec<_>>());
        let opt_col = |f: &dyn Fn(&TrialSummary) -> Option<f64>| {
            let v: Vec<f64> = per_trial.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| mean_std(&v))
        };
        Self {
            name: cfg.label(),
            scheme: cfg.scheme.as_str().to_string(),
            optimizer: cfg.optimizer.as_str().to_string(),
            trials: trials.len(),
            episodes: cfg.episodes,
            successes: col(&|t| t.mean_successes),
            access_success_prob: col(&|t| t.mean_access_success_prob),
            mean_delay: opt_col(&|t| t.mean_delay),
            transmissions: col(&|t| t.mean_transmissions),
            drops: col(&|t| t.mean_drops),
            pred_mae: opt_col(&|t| t.mean_pred_mae),
            per_trial,
        }
    }
}

/// Result of a full experiment, trials in index order.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
}

/// Runs every trial (in parallel) and collects results in trial order.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let res = Resources::load(cfg)?;
    run_experiment_with(cfg, &res, opts)
}

/// As [`run_experiment`] with already loaded pretrained networks.
pub fn run_experiment_with(cfg: &ExperimentConfig, res: &Resources, opts: RunOptions) -> Result<ExperimentResult> {
    let trials: Vec<TrialResult> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let r = run_trial(cfg, k, res, opts);
            log::info!("trial {k} finished");
            r
        })
        .collect::<Result<_>>()?;
    let summary = Summary::new(cfg, &trials);
    Ok(ExperimentResult { config: cfg.clone(), trials, summary })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn frame_csv_line(scheme: &str, optimizer: &str, r: &FrameRow) -> String {
    let mut s = String::with_capacity(128);
    write!(
        s,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.trial,
        r.episode,
        r.frame,
        scheme,
        optimizer,
        r.p_acb,
        r.bo_window,
        r.channels,
        r.idle,
        r.success,
        r.collision,
        r.arrivals,
        r.true_backlog,
        opt(r.predicted_backlog),
        opt(r.label_backlog),
        r.drops,
        r.transmissions,
        r.reward
    )
    .expect("write to string");
    s
}

pub fn episode_csv_line(m: &EpisodeMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        m.trial,
        m.episode,
        m.successes,
        m.access_success_prob,
        opt(m.mean_delay),
        m.transmissions,
        m.drops,
        opt(m.pred_mae)
    )
}

pub fn write_frame_csv<W: Write>(mut out: W, cfg: &ExperimentConfig, trials: &[TrialResult]) -> Result<()> {
    writeln!(out, "{FRAME_HEADER}")?;
    let (scheme, optimizer) = (cfg.scheme.as_str(), cfg.optimizer.as_str());
    for t in trials {
        for r in &t.frames {
            writeln!(out, "{}", frame_csv_line(scheme, optimizer, r))?;
        }
    }
    Ok(())
}

pub fn write_episode_csv<W: Write>(mut out: W, trials: &[TrialResult]) -> Result<()> {
    writeln!(out, "{EPISODE_HEADER}")?;
    for t in trials {
        for m in &t.episodes {
            writeln!(out, "{}", episode_csv_line(m))?;
        }
    }
    Ok(())
}

/// Writes `frames.csv`, `episodes.csv`, `summary.json`, `config.json` and
/// per-trial learned models into `dir`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let buffered = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
    };
    let mut f = buffered("frames.csv")?;
    write_frame_csv(&mut f, &result.config, &result.trials)?;
    f.flush()?;
    let mut f = buffered("episodes.csv")?;
    write_episode_csv(&mut f, &result.trials)?;
    f.flush()?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)? + "\n")?;
    std::fs::write(dir.join("config.json"), result.config.to_json() + "\n")?;
    for t in &result.trials {
        if let Some(layers) = &t.checkpoint {
            crate::neural::write_checkpoint(&dir.join(format!("model_trial{}.rachnn", t.trial)), layers)?;
        }
        if let Some(csv) = &t.q_table_csv {
            std::fs::write(dir.join(format!("qtable_trial{}.csv", t.trial)), csv)?;
        }
    }
    Ok(())
}
