use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::{ActionVariable, ControlSetup};
use crate::error::{Error, Result};
use crate::estimators::mom_full;
use crate::neural::LayerRecord;
use crate::predictor::{pretrain_dnn, DnnCorrector, DnnTrainReport, DnnTrainSettings};
use crate::rng::{trial_seed, RngStream};
use crate::sim::{ControlAction, Observation, Simulator};
use crate::traffic::TrafficSource;

use super::config::ExperimentConfig;
use super::runner::{
    build_controller, EpisodeMetrics, EpisodeRunner, Resources, SIM_STREAM, TRAFFIC_STREAM,
};

/// Log-normal spread of the behaviour policy's ACB factor.
const BEHAVIOUR_NOISE: f64 = 0.5;

/// Mixed into the master seed so pretraining never shares streams with evaluation trials.
pub const PRETRAIN_SALT: u64 = 0x5052_4554_5241_494E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainTarget {
    DnnCorrector,
    DqnAgent,
}

pub fn pretrain_seed(master: u64, index: u64) -> u64 {
    trial_seed(master ^ PRETRAIN_SALT, index)
}

/// Behaviour policy for dataset generation: the true-backlog ACB rule with
/// log-normal noise on the factor, so that both under- and over-barred
/// frames appear; back-off and channel count are random grid levels when
/// controlled.
fn behaviour_action(setup: &ControlSetup, true_backlog: u64, rng: &mut RngStream) -> ControlAction {
    let grid = &setup.grid;
    let vars = setup.scheme.variables();
    let mut action = setup.base_action();
    if vars.contains(&ActionVariable::Channels) {
        if let Some(levels) = &grid.channel_levels {
            action.num_channels = levels[rng.index(levels.len())];
        }
    }
    let exact = (action.num_channels as f64 / (true_backlog as f64).max(1.0)).min(1.0);
    action.acb_factor = (exact * (BEHAVIOUR_NOISE * rng.normal()).exp()).clamp(grid.acb_levels[0], 1.0);
    if vars.contains(&ActionVariable::Backoff) {
        action.backoff_window = grid.bo_levels[rng.index(grid.bo_levels.len())];
    }
    action
}

/// Simulates `frames` labelled frames: each observation paired with the
/// true backlog at the start of its frame.
pub fn generate_corrector_dataset(cfg: &ExperimentConfig, frames: usize, seed: u64) -> Result<Vec<(Observation, f64)>> {
    let setup = cfg.setup();
    let mut sim = Simulator::new(cfg.retransmission_limit, RngStream::new(seed, SIM_STREAM));
    let mut traffic = TrafficSource::new(cfg.traffic.clone())?;
    let mut traffic_rng = RngStream::new(seed, TRAFFIC_STREAM);
    let mut policy_rng = RngStream::new(seed, 5);
    let mut data = Vec::with_capacity(frames);
    for k in 0..frames {
        if k as u64 % cfg.episode_length == 0 {
            sim.clear_backlog();
        }
        let t = sim.frame();
        let n = sim.admit(traffic.arrivals_at(t, &mut traffic_rng));
        let action = behaviour_action(&setup, n, &mut policy_rng);
        let report = sim.resolve(&action)?;
        data.push((report.observation, n as f64));
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectorSummary {
    pub train_frames: usize,
    pub holdout_frames: usize,
    pub epochs: usize,
    pub final_train_mse: f64,
    pub holdout_mae: f64,
    pub mom_full_holdout_mae: f64,
}

#[derive(Debug, Clone)]
pub struct CorrectorPretrain {
    pub corrector: DnnCorrector,
    pub report: DnnTrainReport,
    pub summary: CorrectorSummary,
}

/// Generates a labelled dataset, trains the correction network and scores
/// it (and moment matching) on a held-out split.
pub fn pretrain_corrector(cfg: &ExperimentConfig) -> Result<CorrectorPretrain> {
    let p = &cfg.hyper.pretrain;
    let seed = pretrain_seed(cfg.seed, 0);
    let mut data = generate_corrector_dataset(cfg, p.dnn_frames, seed)?;
    RngStream::new(seed, 6).shuffle(&mut data);
    let holdout = (data.len() as f64 * p.dnn_holdout).round() as usize;
    let (test, train) = data.split_at(holdout);
    if train.len() < p.dnn_batch {
        return Err(Error::InvalidArgument(format!(
            "training set of {} frames is smaller than one batch of {}",
            train.len(),
            p.dnn_batch
        )));
    }
    let hidden = [
        *cfg.hyper.dqn.hidden.first().unwrap_or(&64),
        *cfg.hyper.dqn.hidden.get(1).unwrap_or(&64),
    ];
    let settings = DnnTrainSettings {
        epochs: p.dnn_epochs,
        batch_size: p.dnn_batch,
        learning_rate: p.dnn_learning_rate,
        hidden,
        seed,
    };
    let setup = cfg.setup();
    let (corrector, report) = pretrain_dnn(train, cfg.channels as f64, setup.grid.max_backoff(), &settings)?;
    let mut dnn_err = 0.0;
    let mut mom_err = 0.0;
    for (obs, n) in test {
        dnn_err += (corrector.estimate(obs)?.value - n).abs();
        let mom = mom_full(obs, setup.search_max.max(obs.success))?.value;
        mom_err += (setup.clamp(mom) - n).abs();
    }
    let k = test.len().max(1) as f64;
    let summary = CorrectorSummary {
        train_frames: train.len(),
        holdout_frames: test.len(),
        epochs: p.dnn_epochs,
        final_train_mse: report.final_mse(),
        holdout_mae: dnn_err / k,
        mom_full_holdout_mae: mom_err / k,
    };
    Ok(CorrectorPretrain { corrector, report, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub training_episodes: usize,
    pub eval_episodes: usize,
    pub trained_eval_successes: f64,
    pub untrained_eval_successes: f64,
    /// Trained minus untrained greedy evaluation successes per episode.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct AgentPretrain {
    pub layers: Vec<LayerRecord>,
    pub curve: Vec<EpisodeMetrics>,
    pub summary: AgentSummary,
}

fn greedy_eval(cfg: &ExperimentConfig, res: &Resources, seed: u64) -> Result<f64> {
    let mut eval = cfg.clone();
    eval.hyper.learning = false;
    eval.hyper.exploration = false;
    let controller = build_controller(&eval, seed, res)?;
    let mut runner = EpisodeRunner::new(&eval, 0, seed, controller)?;
    let mut total = 0.0;
    for _ in 0..cfg.hyper.pretrain.eval_episodes {
        total += runner.run_episode(None)?.successes as f64;
    }
    Ok(total / cfg.hyper.pretrain.eval_episodes.max(1) as f64)
}

/// Trains the configured DQN or CPCL optimizer from scratch on a dedicated
/// seed, then compares greedy evaluation of the trained and untrained agents.
pub fn pretrain_agents(cfg: &ExperimentConfig, res: &Resources) -> Result<AgentPretrain> {
    if !matches!(cfg.optimizer, super::OptimizerKind::Dqn | super::OptimizerKind::Cpcl) {
        return Err(Error::config("optimizer", "agent pretraining needs a DQN or CPCL optimizer"));
    }
    let mut train = cfg.clone();
    train.hyper.learning = true;
    train.hyper.exploration = true;
    let fresh = Resources { corrector: res.corrector.clone(), agent_layers: None };
    let seed = pretrain_seed(cfg.seed, 1);
    let controller = build_controller(&train, seed, &fresh)?;
    let mut runner = EpisodeRunner::new(&train, 0, seed, controller)?;
    let mut curve = Vec::with_capacity(cfg.hyper.pretrain.agent_episodes);
    for _ in 0..cfg.hyper.pretrain.agent_episodes {
        curve.push(runner.run_episode(None)?);
    }
    let layers = runner.controller.checkpoint().unwrap_or_default();
    let trained = Resources { corrector: res.corrector.clone(), agent_layers: Some(layers.clone()) };
    let eval_seed = pretrain_seed(cfg.seed, 2);
    let trained_eval = greedy_eval(cfg, &trained, eval_seed)?;
    let untrained_eval = greedy_eval(cfg, &fresh, eval_seed)?;
    Ok(AgentPretrain {
        layers,
        curve,
        summary: AgentSummary {
            training_episodes: cfg.hyper.pretrain.agent_episodes,
            eval_episodes: cfg.hyper.pretrain.eval_episodes,
            trained_eval_successes: trained_eval,
            untrained_eval_successes: untrained_eval,
            margin: trained_eval - untrained_eval,
        },
    })
}

pub fn write_corrector_curve<W: Write>(mut out: W, report: &DnnTrainReport) -> Result<()> {
    writeln!(out, "epoch,train_mse")?;
    for (i, mse) in report.epoch_mse.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, mse)?;
    }
    Ok(())
}
