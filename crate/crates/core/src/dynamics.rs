//! Longitudinal vehicle kinematics with a first-order actuator lag, and
//! collision checks over a platoon.
//!
//! Positions are front-bumper coordinates; the clear distance to the vehicle
//! ahead is the bumper difference minus the front vehicle's length.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_VEHICLE_LENGTH_M: f64 = 5.0;
pub const DEFAULT_A_BOUND: f64 = 3.0;
pub const DEFAULT_TAU_S: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub length_m: f64,
}

impl VehicleState {
    pub fn new(position_m: f64, speed_mps: f64, length_m: f64) -> Self {
        Self {
            position_m,
            speed_mps,
            accel_mps2: 0.0,
            length_m,
        }
    }
}

/// Who drives a follower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerTag {
    AvTd3,
    AvHcfs,
    AvAkHcfs,
    HvIdm,
}

impl ControllerTag {
    pub fn is_av(self) -> bool {
        !matches!(self, ControllerTag::HvIdm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Follower {
    pub state: VehicleState,
    pub tag: ControllerTag,
}

/// Leader plus ordered followers. Vehicle index 0 is the leader and
/// follower `i` (0-based in `followers`) is vehicle `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonState {
    pub leader: VehicleState,
    pub followers: Vec<Follower>,
    pub sim_time_s: f64,
    pub step_index: usize,
}

impl PlatoonState {
    pub fn vehicle_count(&self) -> usize {
        self.followers.len() + 1
    }

    /// State of vehicle `idx` (0 = leader).
    pub fn vehicle(&self, idx: usize) -> &VehicleState {
        if idx == 0 {
            &self.leader
        } else {
            &self.followers[idx - 1].state
        }
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        std::iter::once(&self.leader).chain(self.followers.iter().map(|f| &f.state))
    }
}

/// Actuator model shared by all vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Actuator {
    /// Lag time constant; 0 disables the lag.
    pub tau_s: f64,
    pub a_bound: f64,
}

impl Default for Actuator {
    fn default() -> Self {
        Self {
            tau_s: DEFAULT_TAU_S,
            a_bound: DEFAULT_A_BOUND,
        }
    }
}

/// One explicit-Euler step of `tau * da/dt + a = a_cmd`, clamped to
/// `[-a_bound, a_bound]`. The step fraction `dt / tau` is capped at 1 so the
/// response never overshoots the command.
pub fn apply_actuator_lag(a_actual: f64, a_cmd: f64, tau: f64, dt: f64, a_bound: f64) -> Result<f64> {
    if !(a_actual.is_finite() && a_cmd.is_finite() && tau.is_finite() && dt.is_finite()) {
        return Err(Error::NonFinite("actuator lag input"));
    }
    if !(tau > 0.0 && dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "actuator lag needs tau > 0 and dt > 0, got tau={tau}, dt={dt}"
        )));
    }
    Ok(lag_step(a_actual, a_cmd, tau, dt, a_bound))
}

fn lag_step(a_actual: f64, a_cmd: f64, tau: f64, dt: f64, a_bound: f64) -> f64 {
    let frac = (dt / tau).min(1.0);
    (a_actual + frac * (a_cmd - a_actual)).clamp(-a_bound, a_bound)
}

/// Advance one vehicle by `dt` under command `a_cmd`. Speed never goes
/// negative: if it would, the applied acceleration is reduced to the value
/// that stops the vehicle exactly.
pub fn step_vehicle(state: &VehicleState, a_cmd: f64, actuator: &Actuator, dt: f64) -> VehicleState {
    let a_cmd = if a_cmd.is_finite() { a_cmd } else { 0.0 };
    let mut a = if actuator.tau_s > 0.0 {
        lag_step(state.accel_mps2, a_cmd, actuator.tau_s, dt, actuator.a_bound)
    } else {
        a_cmd.clamp(-actuator.a_bound, actuator.a_bound)
    };
    let v = state.speed_mps;
    let mut v_next = v + a * dt;
    if v_next < 0.0 {
        v_next = 0.0;
        a = -v / dt;
    }
    VehicleState {
        position_m: state.position_m + v * dt + 0.5 * a * dt * dt,
        speed_mps: v_next,
        accel_mps2: a,
        length_m: state.length_m,
    }
}

pub fn clear_distance(front: &VehicleState, ego: &VehicleState) -> f64 {
    front.position_m - ego.position_m - front.length_m
}

/// First adjacent pair `(i, i + 1)`, scanning from the leader, whose clear
/// distance is not positive.
pub fn detect_collision(platoon: &PlatoonState) -> Option<(usize, usize)> {
    let mut front = &platoon.leader;
    for (i, f) in platoon.followers.iter().enumerate() {
        if clear_distance(front, &f.state) <= 0.0 {
            return Some((i, i + 1));
        }
        front = &f.state;
    }
    None
}

/// CSV header for per-vehicle trajectory dumps.
pub const TRAJECTORY_CSV_HEADER: &str = "step,time_s,vehicle,position_m,speed_mps,accel_mps2,clear_distance_m";

/// Append one row per vehicle; the leader's clear distance is left empty.
pub fn trajectory_rows(platoon: &PlatoonState, out: &mut String) {
    use std::fmt::Write;
    let mut front: Option<&VehicleState> = None;
    for (idx, v) in platoon.vehicles().enumerate() {
        let gap = front.map(|f| format!("{}", clear_distance(f, v))).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            platoon.step_index,
            platoon.sim_time_s,
            idx,
            v.position_m,
            v.speed_mps,
            v.accel_mps2,
            gap
        );
        front = Some(v);
    }
}
