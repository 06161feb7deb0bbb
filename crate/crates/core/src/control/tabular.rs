use std::collections::BTreeMap;
use std::io::Write;

use crate::error::Result;

/// Q-table keyed by discretized state bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    actions: usize,
    values: BTreeMap<u64, Vec<f64>>,
}

/// One tabular transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularTransition {
    pub state: u64,
    pub action: usize,
    pub reward: f64,
    pub next_state: u64,
    pub terminal: bool,
}

impl QTable {
    pub fn new(actions: usize) -> Self {
        Self { actions, values: BTreeMap::new() }
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Q-values of a bucket; unknown buckets read as all zeros.
    pub fn row(&self, state: u64) -> Vec<f64> {
        self.values.get(&state).cloned().unwrap_or_else(|| vec![0.0; self.actions])
    }

    pub fn get(&self, state: u64, action: usize) -> f64 {
        self.values.get(&state).map_or(0.0, |r| r[action])
    }

    pub fn max(&self, state: u64) -> f64 {
        self.values.get(&state).map_or(0.0, |r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Greedy action, ties to the lowest index.
    pub fn greedy(&self, state: u64) -> usize {
        argmax(&self.row(state))
    }

    fn row_mut(&mut self, state: u64) -> &mut Vec<f64> {
        let n = self.actions;
        self.values.entry(state).or_insert_with(|| vec![0.0; n])
    }

    /// Writes `state_bucket,action,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "state_bucket,action,value")?;
        for (state, row) in &self.values {
            for (a, v) in row.iter().enumerate() {
                writeln!(out, "{state},{a},{v}")?;
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))`; terminal
/// transitions drop the bootstrap term.
pub fn tabular_q_update(table: &mut QTable, t: &TabularTransition, alpha: f64, gamma: f64) {
    let bootstrap = if t.terminal { 0.0 } else { gamma * table.max(t.next_state) };
    let row = table.row_mut(t.state);
    row[t.action] += alpha * (t.reward + bootstrap - row[t.action]);
}
