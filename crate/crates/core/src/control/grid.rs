use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ControlAction;

/// One controllable variable of a [`ControlAction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionVariable {
    Acb,
    Backoff,
    Channels,
}

/// Discrete levels each controllable variable may take.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionGrid {
    #[serde(default = "sixteenths")]
    pub acb_levels: Vec<f64>,
    /// When omitted from a config, back-off stays fixed at 0.
    #[serde(default = "no_backoff")]
    pub bo_levels: Vec<u32>,
    #[serde(default)]
    pub channel_levels: Option<Vec<u32>>,
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self {
            acb_levels: sixteenths(),
            bo_levels: vec![0, 2, 4, 8, 16, 32],
            channel_levels: None,
        }
    }
}

fn sixteenths() -> Vec<f64> {
    (1..=16).map(|k| k as f64 / 16.0).collect()
}

fn no_backoff() -> Vec<u32> {
    vec![0]
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ActionGrid {
    pub fn validate(&self) -> Result<()> {
        if self.acb_levels.is_empty() || !strictly_increasing(&self.acb_levels) {
            return Err(Error::config("action_grid.acb_levels", "must be nonempty and strictly increasing"));
        }
        if self.acb_levels.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::config("action_grid.acb_levels", "levels must lie in (0, 1]"));
        }
        if self.bo_levels.is_empty() || !strictly_increasing(&self.bo_levels) {
            return Err(Error::config("action_grid.bo_levels", "must be nonempty and strictly increasing"));
        }
        if let Some(ch) = &self.channel_levels {
            if ch.is_empty() || !strictly_increasing(ch) || ch[0] == 0 {
                return Err(Error::config(
                    "action_grid.channel_levels",
                    "must be nonempty, strictly increasing and positive",
                ));
            }
        }
        Ok(())
    }

    pub fn levels(&self, var: ActionVariable) -> usize {
        match var {
            ActionVariable::Acb => self.acb_levels.len(),
            ActionVariable::Backoff => self.bo_levels.len(),
            ActionVariable::Channels => self.channel_levels.as_ref().map_or(1, |c| c.len()),
        }
    }

    pub fn max_backoff(&self) -> u32 {
        *self.bo_levels.last().unwrap_or(&0)
    }

    /// Index of the ACB level closest to `p` (ties to the lower level).
    pub fn nearest_acb(&self, p: f64) -> usize {
        let mut best = 0;
        for (i, &lvl) in self.acb_levels.iter().enumerate() {
            if (lvl - p).abs() < (self.acb_levels[best] - p).abs() {
                best = i;
            }
        }
        best
    }

    pub fn contains(&self, action: &ControlAction) -> bool {
        self.acb_levels.contains(&action.acb_factor)
            && self.bo_levels.contains(&action.backoff_window)
            && self.channel_levels.as_ref().map_or(true, |c| c.contains(&action.num_channels))
    }
}

/// Assignment of grid level indices to the variables an optimizer controls;
/// anything not controlled keeps the base action's value.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub grid: ActionGrid,
    pub variables: Vec<ActionVariable>,
    pub base: ControlAction,
}

impl ActionSpace {
    pub fn new(grid: ActionGrid, variables: Vec<ActionVariable>, base: ControlAction) -> Self {
        Self { grid, variables, base }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.variables.iter().map(|&v| self.grid.levels(v)).collect()
    }

    pub fn joint_size(&self) -> usize {
        self.sizes().iter().product()
    }

    /// Mixed-radix split of a joint index, first variable most significant.
    pub fn split(&self, mut joint: usize) -> Vec<usize> {
        let sizes = self.sizes();
        let mut out = vec![0; sizes.len()];
        for k in (0..sizes.len()).rev() {
            out[k] = joint % sizes[k];
            joint /= sizes[k];
        }
        out
    }

    pub fn join(&self, indices: &[usize]) -> usize {
        self.sizes().iter().zip(indices).fold(0, |acc, (s, i)| acc * s + i)
    }

    /// Builds the action with `indices[k]` applied to `variables[k]`.
    pub fn action(&self, indices: &[usize]) -> ControlAction {
        let mut a = self.base;
        for (&var, &idx) in self.variables.iter().zip(indices) {
            match var {
                ActionVariable::Acb => a.acb_factor = self.grid.acb_levels[idx],
                ActionVariable::Backoff => a.backoff_window = self.grid.bo_levels[idx],
                ActionVariable::Channels => {
                    if let Some(ch) = &self.grid.channel_levels {
                        a.num_channels = ch[idx];
                    }
                }
            }
        }
        a
    }

    /// Encoding of an applied action as features in [0, 1]:
    /// one value per controlled variable.
    pub fn encode(&self, action: &ControlAction) -> Vec<f64> {
        self.variables
            .iter()
            .map(|var| match var {
                ActionVariable::Acb => action.acb_factor,
                ActionVariable::Backoff => {
                    let max = self.grid.max_backoff();
                    if max == 0 {
                        0.0
                    } else {
                        action.backoff_window as f64 / max as f64
                    }
                }
                ActionVariable::Channels => {
                    let max = self.grid.channel_levels.as_ref().and_then(|c| c.last().copied()).unwrap_or(1);
                    action.num_channels as f64 / max as f64
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = ActionGrid::default();
        g.validate().unwrap();
        assert_eq!(g.acb_levels.len(), 16);
        assert_eq!(g.acb_levels[0], 1.0 / 16.0);
        assert_eq!(g.acb_levels[15], 1.0);
        assert_eq!(g.bo_levels, vec![0, 2, 4, 8, 16, 32]);
    }

    #[test]
    fn invalid_grids_rejected() {
        let g = ActionGrid { acb_levels: vec![0.5, 0.25], ..Default::default() };
        assert!(g.validate().is_err());
        let g = ActionGrid { acb_levels: vec![0.0, 0.5], ..Default::default() };
        assert!(g.validate().is_err());
        let g = ActionGrid { bo_levels: vec![], ..Default::default() };
        assert!(g.validate().is_err());
    }

    #[test]
    fn joint_index_round_trip() {
        let space = ActionSpace::new(
            ActionGrid::default(),
            vec![ActionVariable::Acb, ActionVariable::Backoff],
            ControlAction::new(1.0, 0, 54),
        );
        assert_eq!(space.joint_size(), 96);
        for j in 0..96 {
            assert_eq!(space.join(&space.split(j)), j);
        }
        let a = space.action(&space.split(95));
        assert_eq!((a.acb_factor, a.backoff_window, a.num_channels), (1.0, 32, 54));
    }
}
