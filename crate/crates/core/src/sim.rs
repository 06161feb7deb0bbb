//! Frame-by-frame framed-ALOHA contention under ACB, back-off and a
//! variable channel count.
//!
//! Draw order inside [`run_frame`] (all from the caller's [`RngStream`]):
//!
//! 1. For each device in backlog order whose back-off has expired, one
//!    `next_f64` for the ACB gate; if it passes, one `below(R)` for its channel.
//! 2. After channel resolution, for each collider in backlog order that is
//!    not dropped, one `below(W + 1)` for its back-off offset. No draw is
//!    made when `W == 0`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A device with a pending access attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Device {
    pub id: u64,
    pub arrival_frame: u64,
    /// Collisions suffered so far.
    pub attempts: u32,
    /// The device may transmit in frame `t` only when `backoff_until <= t`.
    pub backoff_until: u64,
}

impl Device {
    pub fn new(id: u64, frame: u64) -> Self {
        Self { id, arrival_frame: frame, attempts: 0, backoff_until: frame }
    }

    pub fn eligible_at(&self, frame: u64) -> bool {
        self.backoff_until <= frame
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub acb_factor: f64,
    pub backoff_window: u32,
    pub num_channels: u32,
}

impl ControlAction {
    pub fn new(acb_factor: f64, backoff_window: u32, num_channels: u32) -> Self {
        Self { acb_factor, backoff_window, num_channels }
    }

    pub fn validate(&self, max_channels: Option<u32>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.acb_factor) {
            return Err(Error::InvalidAction(format!(
                "ACB factor {} outside [0, 1]",
                self.acb_factor
            )));
        }
        if self.num_channels == 0 {
            return Err(Error::InvalidAction("zero contention channels".into()));
        }
        if let Some(max) = max_channels {
            if self.num_channels > max {
                return Err(Error::InvalidAction(format!(
                    "{} channels exceeds the configured maximum {max}",
                    self.num_channels
                )));
            }
        }
        Ok(())
    }
}

/// What the base station sees after frame `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: u64,
    pub idle: u32,
    pub success: u32,
    pub collision: u32,
    pub action: ControlAction,
}

impl Observation {
    pub fn channels(&self) -> u32 {
        self.action.num_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Success {
    pub device_id: u64,
    /// Frames from the start of the arrival frame to the end of the success frame.
    pub delay: u64,
    /// Transmissions made, including the successful one.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub observation: Observation,
    /// Devices in the backlog at frame start (arrivals of this frame included).
    pub true_backlog: u64,
    pub new_arrivals: u64,
    pub successes: Vec<Success>,
    pub drops: u64,
    pub transmissions: u64,
}

impl FrameReport {
    /// Backlog left after this frame resolves.
    pub fn remaining_backlog(&self) -> u64 {
        self.true_backlog - self.successes.len() as u64 - self.drops
    }
}

/// Appends `arrivals` fresh devices that become eligible in `frame`.
/// Ids continue from `next_id`, which is advanced.
pub fn advance_backlog(backlog: &mut Vec<Device>, next_id: &mut u64, arrivals: u64, frame: u64) {
    backlog.reserve(arrivals as usize);
    for _ in 0..arrivals {
        backlog.push(Device::new(*next_id, frame));
        *next_id += 1;
    }
}

fn check_unique_ids(backlog: &[Device]) -> Result<()> {
    let increasing = backlog.windows(2).all(|w| w[0].id < w[1].id);
    if increasing {
        return Ok(());
    }
    let mut seen = HashSet::with_capacity(backlog.len());
    for d in backlog {
        if !seen.insert(d.id) {
            return Err(Error::DuplicateDevice(d.id));
        }
    }
    Ok(())
}

/// Runs one contention frame over `backlog`, removing successful and
/// dropped devices in place.
pub fn run_frame(
    backlog: &mut Vec<Device>,
    frame: u64,
    action: &ControlAction,
    limit: u32,
    rng: &mut RngStream,
) -> Result<FrameReport> {
    action.validate(None)?;
    check_unique_ids(backlog)?;

    let channels = action.num_channels as usize;
    let true_backlog = backlog.len() as u64;
    let new_arrivals = backlog.iter().filter(|d| d.arrival_frame == frame).count() as u64;

    // chosen[i] = channel picked by device i, if it transmitted.
    let mut chosen: Vec<Option<u32>> = vec![None; backlog.len()];
    let mut load = vec![0u32; channels];
    let mut transmissions = 0u64;
    for (slot, device) in chosen.iter_mut().zip(backlog.iter()) {
        if !device.eligible_at(frame) {
            continue;
        }
        if !rng.bernoulli(action.acb_factor) {
            continue;
        }
        let ch = rng.below(channels as u64) as u32;
        load[ch as usize] += 1;
        *slot = Some(ch);
        transmissions += 1;
    }

    let mut idle = 0u32;
    let mut success = 0u32;
    let mut collision = 0u32;
    for &n in &load {
        match n {
            0 => idle += 1,
            1 => success += 1,
            _ => collision += 1,
        }
    }

    let mut successes = Vec::with_capacity(success as usize);
    let mut drops = 0u64;
    let mut kept = Vec::with_capacity(backlog.len());
    for (device, slot) in backlog.iter().zip(chosen) {
        let Some(ch) = slot else {
            kept.push(*device);
            continue;
        };
        if load[ch as usize] == 1 {
            successes.push(Success {
                device_id: device.id,
                delay: frame - device.arrival_frame + 1,
                attempts: device.attempts + 1,
            });
            continue;
        }
        let mut d = *device;
        d.attempts += 1;
        if d.attempts > limit {
            drops += 1;
            continue;
        }
        let offset = if action.backoff_window > 0 {
            rng.below(action.backoff_window as u64 + 1)
        } else {
            0
        };
        d.backoff_until = frame + 1 + offset;
        kept.push(d);
    }
    *backlog = kept;

    Ok(FrameReport {
        observation: Observation { frame, idle, success, collision, action: *action },
        true_backlog,
        new_arrivals,
        successes,
        drops,
        transmissions,
    })
}

/// Expected idle, success and collision channel counts when `n`
/// transmitters each pick one of `r` channels uniformly. `n` may be real.
pub fn expected_moments(n: f64, r: u32) -> (f64, f64, f64) {
    let rf = r as f64;
    if r == 1 {
        let idle = if n <= 0.0 { 1.0 } else { 0.0 };
        let success = if (n - 1.0).abs() < f64::EPSILON { 1.0 } else { 0.0 };
        return (idle, success, 1.0 - idle - success);
    }
    let q = 1.0 - 1.0 / rf;
    let idle = rf * q.powf(n);
    let success = if n <= 0.0 { 0.0 } else { n * q.powf(n - 1.0) };
    let collision = (rf - idle - success).max(0.0);
    (idle, success, collision)
}

/// Owns a backlog, a frame counter and the contention RNG stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    backlog: Vec<Device>,
    next_id: u64,
    frame: u64,
    limit: u32,
    rng: RngStream,
}

impl Simulator {
    pub fn new(limit: u32, rng: RngStream) -> Self {
        Self { backlog: Vec::new(), next_id: 0, frame: 0, limit, rng }
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn backlog(&self) -> &[Device] {
        &self.backlog
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    /// Adds this frame's arrivals without running contention, returning
    /// the backlog size at frame start.
    pub fn admit(&mut self, arrivals: u64) -> u64 {
        advance_backlog(&mut self.backlog, &mut self.next_id, arrivals, self.frame);
        self.backlog.len() as u64
    }

    /// Resolves the current frame (after [`Simulator::admit`]) and advances the clock.
    pub fn resolve(&mut self, action: &ControlAction) -> Result<FrameReport> {
        let report = run_frame(&mut self.backlog, self.frame, action, self.limit, &mut self.rng)?;
        self.frame += 1;
        Ok(report)
    }

    pub fn step(&mut self, arrivals: u64, action: &ControlAction) -> Result<FrameReport> {
        self.admit(arrivals);
        self.resolve(action)
    }

    /// Clears all pending devices (episode isolation). The clock keeps running.
    pub fn clear_backlog(&mut self) {
        self.backlog.clear();
    }
}
