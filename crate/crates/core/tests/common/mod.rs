//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rachsim::neural::{Activation, LstmRegressor, Loss, Mlp, Parameters};
use rachsim::rng::RngStream;

/// Relative error with a floor of 1e-6 on the scale, so gradients that are
/// zero up to rounding compare on an absolute footing.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between analytic gradients and central
/// differences with step 1e-5, over every parameter of `model`.
pub fn gradient_check<M: Parameters + Clone>(model: &M, loss_and_grads: impl Fn(&M) -> (f64, Vec<Vec<f64>>)) -> f64 {
    let (_, analytic) = loss_and_grads(model);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in shapes.iter().enumerate() {
        for j in 0..len {
            let mut plus = model.clone();
            plus.tensors_mut()[ti][j] += h;
            let mut minus = model.clone();
            minus.tensors_mut()[ti][j] -= h;
            let numeric = (loss_and_grads(&plus).0 - loss_and_grads(&minus).0) / (2.0 * h);
            worst = worst.max(rel_err(analytic[ti][j], numeric));
        }
    }
    worst
}

/// Adds uniform noise to every parameter so that freshly zeroed biases do
/// not put ReLU pre-activations exactly on the kink, where the gradient is undefined.
fn jitter<M: Parameters>(model: &mut M, rng: &mut RngStream) {
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.2 * (2.0 * rng.next_f64() - 1.0);
        }
    }
}

fn random_vec(rng: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.next_f64() - 1.0)).collect()
}

/// One randomized gradient-check instance; returns (description, worst error).
pub fn gradient_instance(kind: usize, seed: u64) -> (String, f64) {
    let mut rng = RngStream::new(seed, 42);
    let loss = if seed % 2 == 0 { Loss::Mse } else { Loss::Huber };
    match kind % 3 {
        0 => {
            let (i, o) = (1 + rng.index(5), 1 + rng.index(4));
            let act = [Activation::Identity, Activation::Tanh, Activation::Relu][rng.index(3)];
            let mut net = Mlp::new(&[i, o], act, act, &mut rng);
            jitter(&mut net, &mut rng);
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                (0..3).map(|_| (random_vec(&mut rng, i, 1.0), random_vec(&mut rng, o, 2.0))).collect();
            let err = gradient_check(&net, |m| {
                let (l, g) = m.loss_and_grads(&batch, loss).unwrap();
                (l, g.0)
            });
            (format!("dense {i}->{o} {act:?} {loss:?}"), err)
        }
        1 => {
            let sizes = [1 + rng.index(4), 2 + rng.index(6), 2 + rng.index(6), 1 + rng.index(3)];
            let hidden = [Activation::Tanh, Activation::Relu][rng.index(2)];
            let mut net = Mlp::new(&sizes, hidden, Activation::Identity, &mut rng);
            jitter(&mut net, &mut rng);
            let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
                .map(|_| (random_vec(&mut rng, sizes[0], 1.0), random_vec(&mut rng, sizes[3], 2.0)))
                .collect();
            let err = gradient_check(&net, |m| {
                let (l, g) = m.loss_and_grads(&batch, loss).unwrap();
                (l, g.0)
            });
            (format!("mlp {sizes:?} {hidden:?} {loss:?}"), err)
        }
        _ => {
            let (d, h, t) = (1 + rng.index(5), 1 + rng.index(6), 1 + rng.index(10));
            let mut net = LstmRegressor::new(d, h, 1, &mut rng);
            jitter(&mut net, &mut rng);
            let batch: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..2)
                .map(|_| ((0..t).map(|_| random_vec(&mut rng, d, 1.0)).collect(), random_vec(&mut rng, 1, 2.0)))
                .collect();
            let err = gradient_check(&net, |m| {
                let (l, g) = m.loss_and_grads(&batch, loss).unwrap();
                (l, g.0)
            });
            (format!("lstm d={d} h={h} window={t} {loss:?}"), err)
        }
    }
}

/// Two-state, two-action deterministic MDP. From either state, action 0
/// stays (reward 1 in state 0, 0 in state 1) and action 1 switches (reward
/// 0 from state 0, 2 from state 1).
pub const TOY_GAMMA: f64 = 0.9;

pub fn toy_step(state: usize, action: usize) -> (usize, f64) {
    match (state, action) {
        (0, 0) => (0, 1.0),
        (0, _) => (1, 0.0),
        (1, 0) => (1, 0.0),
        _ => (0, 2.0),
    }
}

/// Q* by value iteration to machine precision.
pub fn toy_value_iteration() -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        let mut next = q;
        for (s, row) in next.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let (s2, r) = toy_step(s, a);
                *v = r + TOY_GAMMA * q[s2][0].max(q[s2][1]);
            }
        }
        q = next;
    }
    q
}

pub fn greedy(row: &[f64]) -> usize {
    if row[1] > row[0] {
        1
    } else {
        0
    }
}

/// Tabular Q-learning on the toy MDP from uniformly sampled (state, action) pairs.
pub fn toy_tabular(updates: usize, seed: u64) -> rachsim::control::QTable {
    use rachsim::control::{tabular_q_update, QTable, TabularTransition};
    let mut rng = rachsim::rng::RngStream::new(seed, 0);
    let mut q = QTable::new(2);
    for _ in 0..updates {
        let (s, a) = (rng.index(2), rng.index(2));
        let (s2, r) = toy_step(s, a);
        let t = TabularTransition { state: s as u64, action: a, reward: r, next_state: s2 as u64, terminal: false };
        tabular_q_update(&mut q, &t, 0.1, TOY_GAMMA);
    }
    q
}

fn one_hot(s: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2];
    v[s] = 1.0;
    v
}

/// DQN on the toy MDP: a replay buffer filled by a uniformly random
/// behaviour policy, then gradient steps with a periodically refreshed target.
/// Returns the learned Q-values per state.
pub fn toy_dqn(seed: u64) -> [[f64; 2]; 2] {
    use rachsim::control::{DqnAgent, DqnSettings};
    use rachsim::control::Transition;
    let settings = DqnSettings { hidden: vec![16], learning_rate: 3e-3, gamma: TOY_GAMMA, ..DqnSettings::default() };
    let mut rng = rachsim::rng::RngStream::new(seed, 0);
    let mut agent = DqnAgent::new(2, 2, &settings, &mut rng);
    let mut s = 0;
    for _ in 0..2000 {
        let a = rng.index(2);
        let (s2, r) = toy_step(s, a);
        agent.buffer.push(Transition { state: one_hot(s), action: a, reward: r, next_state: one_hot(s2), terminal: false });
        s = s2;
    }
    for _ in 0..20_000 {
        agent.train(&mut rng).unwrap();
    }
    let mut q = [[0.0; 2]; 2];
    for (s, row) in q.iter_mut().enumerate() {
        let out = agent.net.forward(&one_hot(s)).unwrap();
        row.copy_from_slice(&out);
    }
    q
}

/// Counts (idle, singleton, collided) channels of one placement.
pub fn outcome(placement: &[usize], r: usize) -> (u32, u32, u32) {
    let mut load = vec![0u32; r];
    for &c in placement {
        load[c] += 1;
    }
    let idle = load.iter().filter(|&&l| l == 0).count() as u32;
    let single = load.iter().filter(|&&l| l == 1).count() as u32;
    (idle, single, r as u32 - idle - single)
}

/// Every one of the r^m equally likely placements.
pub fn placements(m: usize, r: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    for _ in 0..m {
        all = all.into_iter().flat_map(|p| (0..r).map(move |c| [p.clone(), vec![c]].concat())).collect();
    }
    all
}

/// Exact (idle, singleton) law of `m` transmitters over `r` channels by enumeration.
pub fn enumerated_law(m: usize, r: usize) -> HashMap<(u32, u32), f64> {
    let all = placements(m, r);
    let w = 1.0 / all.len() as f64;
    let mut law = HashMap::new();
    for p in &all {
        let (i, s, _) = outcome(p, r);
        *law.entry((i, s)).or_insert(0.0) += w;
    }
    law
}
