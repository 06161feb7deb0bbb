//! Deep Q-learning: epsilon-greedy selection, replay, a periodically
//! refreshed target network, and agent sets that split the action space
//! across cooperating agents sharing one reward.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::neural::{Activation, Adam, LayerRecord, Loss, Mlp, Parameters};
use crate::rng::RngStream;
use crate::sim::ControlAction;

use super::grid::ActionSpace;
use super::replay::{ReplayBuffer, Transition};
use super::tabular::argmax;

/// Multiplicative exploration decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
    #[serde(skip)]
    current: Option<f64>,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, decay: 0.999, floor: 0.05, current: None }
    }
}

impl EpsilonSchedule {
    pub fn value(&self) -> f64 {
        self.current.unwrap_or(self.start)
    }

    pub fn advance(&mut self) {
        self.current = Some((self.value() * self.decay).max(self.floor));
    }

    pub fn set(&mut self, value: f64) {
        self.current = Some(value);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnSettings {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub target_refresh: u64,
    pub buffer_capacity: usize,
    /// Gradient steps per environment step.
    pub train_every: u64,
}

impl Default for DqnSettings {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            gamma: 0.9,
            batch_size: 32,
            target_refresh: 100,
            buffer_capacity: 10_000,
            train_every: 1,
        }
    }
}

/// With probability `epsilon` a uniform action, otherwise the greedy one
/// (ties to the lowest index). One uniform draw is always consumed, plus one
/// index draw when exploring.
pub fn dqn_select_action(net: &Mlp, state: &[f64], epsilon: f64, rng: &mut RngStream) -> Result<usize> {
    let q = net.forward(state)?;
    if rng.next_f64() < epsilon {
        return Ok(rng.index(q.len()));
    }
    Ok(argmax(&q))
}

/// `r + gamma * max_a' Q_target(s', a')`, without the bootstrap for terminal states.
pub fn bellman_target(reward: f64, gamma: f64, max_next: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * max_next
    }
}

/// One Adam step on the Huber loss between `Q(s, a)` and the Bellman
/// target for a uniformly sampled batch. Returns `None` (and does nothing)
/// when the buffer holds fewer than `batch_size` transitions.
pub fn dqn_train_step(
    net: &mut Mlp,
    target: &Mlp,
    buffer: &ReplayBuffer,
    batch_size: usize,
    gamma: f64,
    optimizer: &mut Adam,
    rng: &mut RngStream,
) -> Result<Option<f64>> {
    if batch_size == 0 || buffer.len() < batch_size {
        return Ok(None);
    }
    let batch = buffer.sample(batch_size, rng);
    let mut grads = net.zero_grads();
    let n = batch.len() as f64;
    let mut total = 0.0;
    for t in batch {
        let max_next = if t.terminal {
            0.0
        } else {
            target.forward(&t.next_state)?.into_iter().fold(f64::NEG_INFINITY, f64::max)
        };
        let y = bellman_target(t.reward, gamma, max_next, t.terminal);
        let trace = net.forward_trace(&t.state)?;
        let q = trace.output()[t.action];
        total += Loss::Huber.value(q, y);
        let mut dy = vec![0.0; net.out_dim()];
        dy[t.action] = Loss::Huber.gradient(q, y) / n;
        net.backward(&trace, &dy, &mut grads);
    }
    optimizer.step(net.tensors_mut(), &grads)?;
    Ok(Some(total / n))
}

/// Online network, target network, replay buffer and optimizer for one agent.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub net: Mlp,
    pub target: Mlp,
    pub buffer: ReplayBuffer,
    optimizer: Adam,
    settings: DqnSettings,
    train_steps: u64,
}

impl DqnAgent {
    pub fn new(state_dim: usize, actions: usize, settings: &DqnSettings, rng: &mut RngStream) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend(&settings.hidden);
        sizes.push(actions);
        let net = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng);
        Self::from_net(net, settings)
    }

    pub fn from_net(net: Mlp, settings: &DqnSettings) -> Self {
        Self {
            target: net.clone(),
            net,
            buffer: ReplayBuffer::new(settings.buffer_capacity),
            optimizer: Adam::new(settings.learning_rate),
            settings: settings.clone(),
            train_steps: 0,
        }
    }

    pub fn actions(&self) -> usize {
        self.net.out_dim()
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Trains once and refreshes the target every `target_refresh` steps.
    pub fn train(&mut self, rng: &mut RngStream) -> Result<Option<f64>> {
        let loss = dqn_train_step(
            &mut self.net,
            &self.target,
            &self.buffer,
            self.settings.batch_size,
            self.settings.gamma,
            &mut self.optimizer,
            rng,
        )?;
        if loss.is_some() {
            self.train_steps += 1;
            if self.train_steps % self.settings.target_refresh.max(1) == 0 {
                self.target.copy_from(&self.net);
            }
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factorization {
    /// One agent over the product of all controlled variables.
    Joint,
    /// One agent per controlled variable, all trained on the shared reward.
    Cooperative,
}

/// A set of DQN agents jointly choosing one [`ControlAction`].
#[derive(Debug, Clone)]
pub struct AgentSet {
    pub space: ActionSpace,
    /// Variable positions (into `space.variables`) owned by each agent.
    groups: Vec<Vec<usize>>,
    pub agents: Vec<DqnAgent>,
    pub epsilon: EpsilonSchedule,
    state_dim: usize,
    env_steps: u64,
    train_every: u64,
}

impl AgentSet {
    pub fn new(
        space: ActionSpace,
        factorization: Factorization,
        state_dim: usize,
        settings: &DqnSettings,
        epsilon: EpsilonSchedule,
        rng: &mut RngStream,
    ) -> Self {
        let groups: Vec<Vec<usize>> = match factorization {
            Factorization::Joint => vec![(0..space.variables.len()).collect()],
            Factorization::Cooperative => (0..space.variables.len()).map(|k| vec![k]).collect(),
        };
        let sizes = space.sizes();
        let agents = groups
            .iter()
            .map(|g| {
                let actions = g.iter().map(|&k| sizes[k]).product();
                DqnAgent::new(state_dim, actions, settings, rng)
            })
            .collect();
        Self { space, groups, agents, epsilon, state_dim, env_steps: 0, train_every: settings.train_every.max(1) }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Output sizes of each agent.
    pub fn agent_outputs(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.actions()).collect()
    }

    /// Each agent independently picks its own variables epsilon-greedily.
    /// Returns the joint action and the per-agent indices.
    pub fn select(&self, state: &[f64], epsilon: f64, rng: &mut RngStream) -> Result<(ControlAction, Vec<usize>)> {
        let sizes = self.space.sizes();
        let mut per_var = vec![0usize; sizes.len()];
        let mut chosen = Vec::with_capacity(self.agents.len());
        for (agent, group) in self.agents.iter().zip(&self.groups) {
            let mut idx = dqn_select_action(&agent.net, state, epsilon, rng)?;
            chosen.push(idx);
            for &k in group.iter().rev() {
                per_var[k] = idx % sizes[k];
                idx /= sizes[k];
            }
        }
        Ok((self.space.action(&per_var), chosen))
    }

    /// Stores the shared-reward transition for every agent.
    pub fn record(&mut self, state: &[f64], chosen: &[usize], reward: f64, next_state: &[f64], terminal: bool) {
        for (agent, &a) in self.agents.iter_mut().zip(chosen) {
            agent.buffer.push(Transition {
                state: state.to_vec(),
                action: a,
                reward,
                next_state: next_state.to_vec(),
                terminal,
            });
        }
    }

    /// Advances exploration and, every `train_every` steps, trains each agent once.
    pub fn learn(&mut self, rng: &mut RngStream) -> Result<()> {
        self.env_steps += 1;
        self.epsilon.advance();
        if self.env_steps % self.train_every == 0 {
            for agent in &mut self.agents {
                agent.train(rng)?;
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.agents.iter().flat_map(|a| a.net.to_records()).collect()
    }

    /// Loads online (and target) weights from checkpoint layers in agent order.
    pub fn load_records(&mut self, records: &mut std::collections::VecDeque<LayerRecord>) -> Result<()> {
        for agent in &mut self.agents {
            let net = Mlp::take_from(records, agent.net.layers.len())?;
            if net.in_dim() != agent.net.in_dim() || net.out_dim() != agent.net.out_dim() {
                return Err(crate::Error::Checkpoint("agent network shape does not match".into()));
            }
            agent.net = net.clone();
            agent.target = net;
        }
        Ok(())
    }
}
