//! Car-following MDP over a mixed platoon.
//!
//! The observation of a follower is its spacing and speed error to the
//! vehicle directly ahead, its own speed, and its spacing and speed error to
//! the platoon leader. The per-step reward is the sum of stability, comfort,
//! safety and efficiency terms, each non-positive, plus a terminal penalty
//! on the step a follower runs into the vehicle ahead.
//!
//! All vehicles are advanced simultaneously from the pre-step snapshot, so
//! the order in which followers are processed never matters.

use std::fmt::Write as _;
use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::controllers::{cacc_accel, idm_accel, CaccParams, CaccState, IdmParams};
use crate::dynamics::{
    clear_distance, detect_collision, step_vehicle, Actuator, ControllerTag, Follower, PlatoonState, VehicleState,
    DEFAULT_VEHICLE_LENGTH_M,
};
use crate::traj_data::LeaderProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub v_max: f64,
    pub x_max: f64,
    pub t_desire: f64,
    pub ttc_threshold_s: f64,
    pub safety_floor: f64,
    pub collision_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            v_max: 40.0,
            x_max: 100.0,
            t_desire: 0.6,
            ttc_threshold_s: 2.7,
            safety_floor: -5.0,
            collision_penalty: -10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x_error: f64,
    pub v_error: f64,
    pub v_ego: f64,
    pub x_error_0: f64,
    pub v_error_0: f64,
}

impl Observation {
    /// Network input: each component scaled by its nominal range.
    pub fn normalized(&self, p: &RewardParams) -> [f64; 5] {
        [
            self.x_error / p.x_max,
            self.v_error / p.v_max,
            self.v_ego / p.v_max,
            self.x_error_0 / (2.0 * p.x_max),
            self.v_error_0 / p.v_max,
        ]
    }
}

/// Observation of follower `follower` (0-based).
pub fn observe(platoon: &PlatoonState, follower: usize) -> Observation {
    let ego = &platoon.followers[follower].state;
    let front = platoon.vehicle(follower);
    observe_parts(&platoon.leader, front, ego, lengths_ahead(platoon, follower))
}

/// Summed lengths of the leader and every follower ahead of `follower`.
pub fn lengths_ahead(platoon: &PlatoonState, follower: usize) -> f64 {
    platoon.vehicles().take(follower + 1).map(|v| v.length_m).sum()
}

/// Observation of `ego` from its predecessor and the leader.
pub fn observe_parts(leader: &VehicleState, front: &VehicleState, ego: &VehicleState, lengths_ahead: f64) -> Observation {
    Observation {
        x_error: clear_distance(front, ego),
        v_error: front.speed_mps - ego.speed_mps,
        v_ego: ego.speed_mps,
        x_error_0: leader.position_m - ego.position_m - lengths_ahead,
        v_error_0: leader.speed_mps - ego.speed_mps,
    }
}

pub fn reward_stability(v_error_0: f64, v_max: f64) -> f64 {
    -v_error_0.abs() / v_max
}

/// Returns `(reward, jerk)`. The normalizer `2 a_bound / dt` is the largest
/// one-step jerk, so the reward lies in `[-1, 0]`.
pub fn reward_comfort(a_k: f64, a_prev: f64, a_bound: f64, dt: f64) -> (f64, f64) {
    let jerk = (a_k - a_prev) / dt;
    (-jerk.abs() / (2.0 * a_bound / dt), jerk)
}

/// Finite only while closing in (`v_error < 0`).
pub fn time_to_collision(x_error: f64, v_error: f64) -> Option<f64> {
    (v_error < 0.0).then(|| -x_error / v_error)
}

pub fn reward_safety(ttc: Option<f64>, threshold_s: f64, floor: f64) -> f64 {
    match ttc {
        Some(t) if (0.0..=threshold_s).contains(&t) => (t / threshold_s).ln().max(floor),
        _ => 0.0,
    }
}

pub fn reward_efficiency(v_ego: f64, x_actual: f64, t_desire: f64, x_max: f64) -> f64 {
    let x_exp = v_ego * t_desire;
    -(x_exp - x_actual).abs() / x_max
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub stability: f64,
    pub comfort: f64,
    pub safety: f64,
    pub efficiency: f64,
    /// Terminal collision penalty, zero on ordinary steps.
    pub collision: f64,
    pub total: f64,
}

pub fn total_reward(
    stability: f64,
    comfort: f64,
    safety: f64,
    efficiency: f64,
    collided: bool,
    penalty: f64,
) -> RewardBreakdown {
    let collision = if collided { penalty } else { 0.0 };
    RewardBreakdown {
        stability,
        comfort,
        safety,
        efficiency,
        collision,
        total: stability + comfort + safety + efficiency + collision,
    }
}

/// Reward of one follower after a step.
pub fn step_reward(
    obs: &Observation,
    a_k: f64,
    a_prev: f64,
    collided: bool,
    reward: &RewardParams,
    a_bound: f64,
    dt: f64,
) -> RewardBreakdown {
    let ttc = time_to_collision(obs.x_error, obs.v_error);
    total_reward(
        reward_stability(obs.v_error_0, reward.v_max),
        reward_comfort(a_k, a_prev, a_bound, dt).0,
        reward_safety(ttc, reward.ttc_threshold_s, reward.safety_floor),
        reward_efficiency(obs.v_ego, obs.x_error, reward.t_desire, reward.x_max),
        collided,
        reward.collision_penalty,
    )
}

/// How the leader moves when the environment advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LeaderMotion {
    /// Follow the recorded profile; hold the last speed past its end.
    #[default]
    Replay,
    ConstantVelocity,
    ConstantAcceleration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub dt_s: f64,
    pub vehicle_length_m: f64,
    pub initial_headway_s: f64,
    /// Smallest initial clear gap, used when the leader starts at rest.
    pub d_min_m: f64,
    pub min_profile_s: f64,
    pub actuator: Actuator,
    /// Apply the actuator lag to human-driven vehicles as well.
    pub lag_for_hv: bool,
    pub reward: RewardParams,
    pub cacc: CaccParams,
    pub idm: IdmParams,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            dt_s: 0.1,
            vehicle_length_m: DEFAULT_VEHICLE_LENGTH_M,
            initial_headway_s: 0.6,
            d_min_m: 2.0,
            min_profile_s: 20.0,
            actuator: Actuator::default(),
            lag_for_hv: true,
            reward: RewardParams::default(),
            cacc: CaccParams::default(),
            idm: IdmParams::default(),
        }
    }
}

impl EnvParams {
    /// Propagate the shared step and acceleration bound into the controller
    /// parameter blocks.
    pub fn synced(mut self) -> Self {
        self.cacc.dt = self.dt_s;
        self.cacc.a_bound = self.actuator.a_bound;
        self.idm.a_bound = self.actuator.a_bound;
        self
    }

    pub fn a_bound(&self) -> f64 {
        self.actuator.a_bound
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_s", self.dt_s),
            ("vehicle_length_m", self.vehicle_length_m),
            ("a_bound", self.actuator.a_bound),
            ("v_max", self.reward.v_max),
            ("x_max", self.reward.x_max),
            ("kp", self.cacc.kp),
            ("kd", self.cacc.kd),
            ("t_hw", self.cacc.t_hw),
            ("idm.a_max", self.idm.a_max),
            ("idm.b", self.idm.b),
            ("idm.v_desire", self.idm.v_desire),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.actuator.tau_s < 0.0 {
            return Err(Error::InvalidParameter("actuator.tau_s must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub leader: Arc<LeaderProfile>,
    pub mix: Vec<ControllerTag>,
    pub seed: u64,
}

/// Parse a mix string such as `HAAA`: `A` is an autonomous vehicle driven by
/// `av`, `H` a human driver.
pub fn parse_mix(mix: &str, av: ControllerTag) -> Result<Vec<ControllerTag>> {
    if mix.is_empty() {
        return Err(Error::InvalidParameter("empty mix".into()));
    }
    mix.chars()
        .map(|c| match c.to_ascii_uppercase() {
            'A' => Ok(av),
            'H' => Ok(ControllerTag::HvIdm),
            other => Err(Error::InvalidParameter(format!("mix character `{other}` is not A or H"))),
        })
        .collect()
}

pub fn mix_string(mix: &[ControllerTag]) -> String {
    mix.iter().map(|t| if t.is_av() { 'A' } else { 'H' }).collect()
}

/// All `2^n - 1` AV/HV assignments of `n` followers with at least one AV,
/// ordered by the binary mask with follower 0 as the most significant bit.
pub fn enumerate_mixes(n: usize) -> Vec<String> {
    (1u32..(1 << n))
        .map(|mask| {
            (0..n)
                .map(|i| if mask & (1 << (n - 1 - i)) != 0 { 'A' } else { 'H' })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// One entry per follower; HV entries are informative only.
    pub observations: Vec<Observation>,
    pub rewards: Vec<RewardBreakdown>,
    pub done: bool,
    pub collision: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct CarFollowingEnv {
    params: EnvParams,
    profile: Arc<LeaderProfile>,
    platoon: PlatoonState,
    cacc: Vec<CaccState>,
    profile_index: usize,
    leader_motion: LeaderMotion,
    clamped_actions: usize,
    done: bool,
    collision: Option<(usize, usize)>,
}

impl CarFollowingEnv {
    /// Place the leader at the start of its profile and every follower at
    /// the initial headway behind its predecessor, all at the leader's speed.
    pub fn reset(config: &EpisodeConfig, params: &EnvParams) -> Result<(Self, Vec<Observation>)> {
        let params = params.clone().synced();
        params.validate()?;
        let profile = Arc::clone(&config.leader);
        if profile.len() < 2 || profile.duration_s() < params.min_profile_s - 1e-9 {
            return Err(Error::ProfileTooShort {
                event_id: profile.event_id.clone(),
                duration_s: profile.duration_s(),
                min_s: params.min_profile_s,
            });
        }
        if config.mix.is_empty() {
            return Err(Error::InvalidParameter("platoon needs at least one follower".into()));
        }
        let v0 = profile.speeds_mps[0];
        let len = params.vehicle_length_m;
        let gap = (params.initial_headway_s * v0).max(params.d_min_m);
        let leader = VehicleState::new(profile.positions_m[0], v0, len);
        let mut followers = Vec::with_capacity(config.mix.len());
        let mut front = leader;
        for &tag in &config.mix {
            let state = VehicleState::new(front.position_m - front.length_m - gap, v0, len);
            followers.push(Follower { state, tag });
            front = state;
        }
        let cacc = vec![CaccState::initial(gap, v0, &params.cacc); followers.len()];
        let platoon = PlatoonState {
            leader,
            followers,
            sim_time_s: profile.t0_s,
            step_index: 0,
        };
        let env = Self {
            params,
            profile,
            platoon,
            cacc,
            profile_index: 0,
            leader_motion: LeaderMotion::Replay,
            clamped_actions: 0,
            done: false,
            collision: None,
        };
        let obs = env.observations();
        Ok((env, obs))
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn platoon(&self) -> &PlatoonState {
        &self.platoon
    }

    pub fn profile(&self) -> &LeaderProfile {
        &self.profile
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn collision(&self) -> Option<(usize, usize)> {
        self.collision
    }

    /// Number of out-of-range AV actions clamped so far.
    pub fn clamped_actions(&self) -> usize {
        self.clamped_actions
    }

    pub fn follower_count(&self) -> usize {
        self.platoon.followers.len()
    }

    pub fn av_indices(&self) -> Vec<usize> {
        (0..self.follower_count())
            .filter(|&i| self.platoon.followers[i].tag.is_av())
            .collect()
    }

    pub fn observe(&self, follower: usize) -> Observation {
        observe(&self.platoon, follower)
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.follower_count()).map(|i| self.observe(i)).collect()
    }

    pub fn normalized_observation(&self, follower: usize) -> [f64; 5] {
        self.observe(follower).normalized(&self.params.reward)
    }

    /// Steps left before the leader profile is exhausted (replay mode).
    pub fn remaining_steps(&self) -> usize {
        self.profile.len() - 1 - self.profile_index.min(self.profile.len() - 1)
    }

    /// CACC command for `follower` at the current snapshot, with the state
    /// the controller would carry into the next step.
    pub fn cacc_candidate(&self, follower: usize) -> Result<(f64, CaccState)> {
        let front = self.platoon.vehicle(follower);
        let ego = &self.platoon.followers[follower].state;
        cacc_accel(
            front.position_m,
            ego.position_m,
            front.length_m,
            ego.speed_mps,
            &self.cacc[follower],
            &self.params.cacc,
        )
    }

    fn idm_command(&self, follower: usize) -> f64 {
        let front = self.platoon.vehicle(follower);
        let ego = &self.platoon.followers[follower].state;
        let gap = clear_distance(front, ego);
        idm_accel(ego.speed_mps, ego.speed_mps - front.speed_mps, gap, &self.params.idm)
            .unwrap_or(-self.params.idm.a_bound)
    }

    /// Copy of the first `follower + 1` followers with the leader driven by
    /// `motion`. Vehicles behind `follower` cannot influence it, so rollouts
    /// for `follower` only need this prefix.
    pub fn truncated(&self, follower: usize, motion: LeaderMotion) -> Self {
        self.prefix(follower + 1, motion)
    }

    /// Copy keeping only the first `count` followers (possibly none).
    pub fn prefix(&self, count: usize, motion: LeaderMotion) -> Self {
        let mut env = self.clone();
        env.platoon.followers.truncate(count);
        env.cacc.truncate(count);
        env.leader_motion = motion;
        env
    }

    /// CACC controller state carried by `follower`.
    pub fn cacc_state(&self, follower: usize) -> CaccState {
        self.cacc[follower]
    }

    pub fn set_leader_motion(&mut self, motion: LeaderMotion) {
        self.leader_motion = motion;
    }

    fn advance_leader(&mut self) {
        let dt = self.params.dt_s;
        let leader = &mut self.platoon.leader;
        match self.leader_motion {
            LeaderMotion::Replay if self.profile_index + 1 < self.profile.len() => {
                let k = self.profile_index + 1;
                leader.position_m = self.profile.positions_m[k];
                leader.speed_mps = self.profile.speeds_mps[k];
                leader.accel_mps2 = self.profile.accel_at(k);
            }
            LeaderMotion::Replay | LeaderMotion::ConstantVelocity => {
                leader.position_m += leader.speed_mps * dt;
                leader.accel_mps2 = 0.0;
            }
            LeaderMotion::ConstantAcceleration => {
                let mut a = leader.accel_mps2;
                let v = leader.speed_mps;
                let mut v_next = v + a * dt;
                if v_next < 0.0 {
                    v_next = 0.0;
                    a = -v / dt;
                }
                leader.position_m += v * dt + 0.5 * a * dt * dt;
                leader.speed_mps = v_next;
                // keep the extrapolated rate for the next step even after a stop
                if v_next == 0.0 {
                    leader.accel_mps2 = 0.0;
                }
            }
        }
        self.profile_index += 1;
    }

    /// Advance every vehicle by one step. `av_actions` holds one command per
    /// AV follower in platoon order; out-of-range commands are clamped and
    /// counted.
    pub fn step(&mut self, av_actions: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::InvalidParameter("episode already finished".into()));
        }
        let n = self.follower_count();
        let a_bound = self.params.a_bound();
        let dt = self.params.dt_s;

        let mut commands = Vec::with_capacity(n);
        let mut next_cacc = self.cacc.clone();
        let mut actions = av_actions.iter();
        for i in 0..n {
            if self.platoon.followers[i].tag.is_av() {
                let &a = actions.next().ok_or_else(|| {
                    Error::InvalidParameter(format!("expected {} AV actions, got {}", self.av_indices().len(), av_actions.len()))
                })?;
                if !a.is_finite() {
                    return Err(Error::NonFinite("AV action"));
                }
                if a.abs() > a_bound {
                    self.clamped_actions += 1;
                    log::debug!("clamping AV action {a} for follower {i}");
                }
                commands.push(a.clamp(-a_bound, a_bound));
                next_cacc[i] = self.cacc_candidate(i)?.1;
            } else {
                commands.push(self.idm_command(i));
            }
        }
        if actions.next().is_some() {
            return Err(Error::InvalidParameter(format!(
                "expected {} AV actions, got {}",
                self.av_indices().len(),
                av_actions.len()
            )));
        }

        let prev_accel: Vec<f64> = self.platoon.followers.iter().map(|f| f.state.accel_mps2).collect();
        let hv_actuator = if self.params.lag_for_hv {
            self.params.actuator
        } else {
            Actuator {
                tau_s: 0.0,
                ..self.params.actuator
            }
        };
        for (f, &cmd) in self.platoon.followers.iter_mut().zip(&commands) {
            let act = if f.tag.is_av() { &self.params.actuator } else { &hv_actuator };
            f.state = step_vehicle(&f.state, cmd, act, dt);
        }
        self.advance_leader();
        self.cacc = next_cacc;
        self.platoon.step_index += 1;
        self.platoon.sim_time_s = self.profile.time_at(self.platoon.step_index);

        self.collision = detect_collision(&self.platoon);
        let observations = self.observations();
        let rewards = observations
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let collided = self.collision.is_some_and(|(_, rear)| rear == i + 1);
                step_reward(
                    obs,
                    self.platoon.followers[i].state.accel_mps2,
                    prev_accel[i],
                    collided,
                    &self.params.reward,
                    a_bound,
                    dt,
                )
            })
            .collect();
        let exhausted = self.leader_motion == LeaderMotion::Replay && self.profile_index + 1 >= self.profile.len();
        self.done = self.collision.is_some() || exhausted;
        Ok(StepOutcome {
            observations,
            rewards,
            done: self.done,
            collision: self.collision,
        })
    }
}

pub const REWARD_CSV_HEADER: &str = "step,vehicle,stab,cft,safe,eff,total";

/// Append reward rows for the AV followers; vehicle ids count the leader as 0.
pub fn reward_rows(step: usize, platoon: &PlatoonState, rewards: &[RewardBreakdown], out: &mut String) {
    for (i, r) in rewards.iter().enumerate() {
        if platoon.followers[i].tag.is_av() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                step,
                i + 1,
                r.stability,
                r.comfort,
                r.safety,
                r.efficiency,
                r.total
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_profile(v: f64, seconds: f64) -> Arc<LeaderProfile> {
        let n = (seconds / 0.1).round() as usize;
        Arc::new(LeaderProfile {
            event_id: "const".into(),
            dt_s: 0.1,
            t0_s: 0.0,
            positions_m: (0..=n).map(|k| 100.0 + v * k as f64 * 0.1).collect(),
            speeds_mps: vec![v; n + 1],
        })
    }

    fn episode(v: f64, mix: &str) -> EpisodeConfig {
        EpisodeConfig {
            leader: constant_profile(v, 25.0),
            mix: parse_mix(mix, ControllerTag::AvTd3).unwrap(),
            seed: 0,
        }
    }

    fn platoon_of(states: &[(f64, f64)]) -> PlatoonState {
        PlatoonState {
            leader: VehicleState::new(states[0].0, states[0].1, 5.0),
            followers: states[1..]
                .iter()
                .map(|&(x, v)| Follower {
                    state: VehicleState::new(x, v, 5.0),
                    tag: ControllerTag::AvTd3,
                })
                .collect(),
            sim_time_s: 0.0,
            step_index: 0,
        }
    }

    #[test]
    fn first_follower_sees_leader_twice() {
        let p = platoon_of(&[(100.0, 12.0), (80.0, 10.0)]);
        let o = observe(&p, 0);
        assert_eq!(o.x_error, o.x_error_0);
        assert_eq!(o.v_error, o.v_error_0);
    }

    #[test]
    fn equal_speeds_zero_errors() {
        let p = platoon_of(&[(100.0, 12.0), (80.0, 12.0), (60.0, 12.0)]);
        let o = observe(&p, 1);
        assert_eq!((o.v_error, o.v_error_0), (0.0, 0.0));
    }

    #[test]
    fn observation_hand_example() {
        let p = platoon_of(&[(100.0, 12.0), (80.0, 10.0), (60.0, 11.0)]);
        let o = observe(&p, 1);
        assert_eq!(o.x_error, 15.0);
        assert_eq!(o.v_error, -1.0);
        assert_eq!(o.x_error_0, 30.0);
        assert_eq!(o.v_error_0, 1.0);
        assert_eq!(o.v_ego, 11.0);
    }

    #[test]
    fn stability_values() {
        assert_eq!(reward_stability(0.0, 40.0), 0.0);
        assert_eq!(reward_stability(40.0, 40.0), -1.0);
        assert!((reward_stability(-8.0, 40.0) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn comfort_values() {
        assert_eq!(reward_comfort(1.5, 1.5, 3.0, 0.1), (0.0, 0.0));
        let (r, j) = reward_comfort(3.0, -3.0, 3.0, 0.1);
        assert!((j - 60.0).abs() < 1e-12);
        assert!((r + 1.0).abs() < 1e-12);
        let (r, j) = reward_comfort(1.0, 0.0, 3.0, 0.1);
        assert!((j - 10.0).abs() < 1e-12);
        assert!((r + 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ttc_values() {
        assert_eq!(time_to_collision(20.0, -5.0), Some(4.0));
        assert_eq!(time_to_collision(20.0, 3.0), None);
        assert_eq!(time_to_collision(20.0, 0.0), None);
        assert_eq!(time_to_collision(0.0, -1.0), Some(0.0));
    }

    #[test]
    fn safety_values() {
        assert_eq!(reward_safety(Some(2.7), 2.7, -5.0), 0.0);
        assert!((reward_safety(Some(0.27), 2.7, -5.0) - 0.1f64.ln()).abs() < 1e-12);
        assert_eq!(reward_safety(None, 2.7, -5.0), 0.0);
        assert_eq!(reward_safety(Some(0.0), 2.7, -5.0), -5.0);
        assert_eq!(reward_safety(Some(3.0), 2.7, -5.0), 0.0);
    }

    #[test]
    fn efficiency_values() {
        assert_eq!(reward_efficiency(10.0, 6.0, 0.6, 100.0), 0.0);
        assert!((reward_efficiency(10.0, 16.0, 0.6, 100.0) + 0.1).abs() < 1e-12);
        assert_eq!(reward_efficiency(0.0, 0.0, 0.6, 100.0), 0.0);
    }

    #[test]
    fn total_values() {
        assert_eq!(total_reward(0.0, 0.0, 0.0, 0.0, false, -10.0).total, 0.0);
        let r = total_reward(-0.2, -1.0 / 6.0, 0.1f64.ln(), -0.1, false, -10.0);
        assert!((r.total + 2.769_251_7).abs() < 1e-6);
        assert_eq!(total_reward(0.0, 0.0, 0.0, 0.0, true, -10.0).total, -10.0);
    }

    #[test]
    fn reset_spacing() {
        let (env, obs) = CarFollowingEnv::reset(&episode(10.0, "AAA"), &EnvParams::default()).unwrap();
        let rel: Vec<f64> = env.platoon().vehicles().map(|v| v.position_m - 100.0).collect();
        for (got, want) in rel.iter().zip([0.0, -11.0, -22.0, -33.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(obs.iter().all(|o| (o.x_error - 6.0).abs() < 1e-12));
    }

    #[test]
    fn reset_floors_standstill_gap() {
        let (env, obs) = CarFollowingEnv::reset(&episode(0.0, "AHA"), &EnvParams::default()).unwrap();
        assert!(obs.iter().all(|o| (o.x_error - 2.0).abs() < 1e-12));
        assert!(env.platoon().followers.iter().all(|f| f.state.speed_mps == 0.0));
    }

    #[test]
    fn reset_rejects_short_profile() {
        let cfg = EpisodeConfig {
            leader: constant_profile(10.0, 19.0),
            mix: parse_mix("AAA", ControllerTag::AvTd3).unwrap(),
            seed: 0,
        };
        assert!(matches!(
            CarFollowingEnv::reset(&cfg, &EnvParams::default()),
            Err(Error::ProfileTooShort { .. })
        ));
    }

    #[test]
    fn reset_is_deterministic() {
        let a = CarFollowingEnv::reset(&episode(13.0, "HAAH"), &EnvParams::default()).unwrap();
        let b = CarFollowingEnv::reset(&episode(13.0, "HAAH"), &EnvParams::default()).unwrap();
        assert_eq!(a.0.platoon(), b.0.platoon());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn equilibrium_rewards_near_zero() {
        let (mut env, _) = CarFollowingEnv::reset(&episode(15.0, "AAAA"), &EnvParams::default()).unwrap();
        loop {
            let actions: Vec<f64> = env.av_indices().iter().map(|&i| env.cacc_candidate(i).unwrap().0).collect();
            let out = env.step(&actions).unwrap();
            assert!(out.rewards.iter().all(|r| r.total.abs() < 0.02));
            if out.done {
                assert!(out.collision.is_none());
                break;
            }
        }
    }

    #[test]
    fn done_when_profile_ends() {
        let (mut env, _) = CarFollowingEnv::reset(&episode(15.0, "AAA"), &EnvParams::default()).unwrap();
        let k = env.profile().len() - 1;
        for step in 1..=k {
            let out = env.step(&[0.0, 0.0, 0.0]).unwrap();
            assert_eq!(out.done, step == k, "step {step}");
        }
        assert!(env.step(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn forced_overlap_ends_episode() {
        let (mut env, _) = CarFollowingEnv::reset(&episode(15.0, "AAA"), &EnvParams::default()).unwrap();
        let mut out = env.step(&[0.0, 0.0, 3.0]).unwrap();
        let mut steps = 1;
        while !out.done {
            out = env.step(&[0.0, 0.0, 3.0]).unwrap();
            steps += 1;
        }
        assert_eq!(out.collision, Some((2, 3)));
        assert!(steps < 40);
        assert!(out.rewards[2].collision == -10.0);
        assert_eq!(out.rewards[0].collision, 0.0);
    }

    #[test]
    fn out_of_range_actions_are_clamped_and_counted() {
        let (mut env, _) = CarFollowingEnv::reset(&episode(15.0, "AHA"), &EnvParams::default()).unwrap();
        env.step(&[7.0, -9.0]).unwrap();
        assert_eq!(env.clamped_actions(), 2);
        assert!(env.step(&[0.0]).is_err());
    }

    #[test]
    fn idm_followers_drop_back_from_short_headway() {
        let (mut env, _) = CarFollowingEnv::reset(&episode(20.0, "HHH"), &EnvParams::default()).unwrap();
        for _ in 0..10 {
            env.step(&[]).unwrap();
        }
        assert!(env.platoon().followers.iter().all(|f| f.state.accel_mps2 < 0.0));
    }

    #[test]
    fn truncation_keeps_prefix() {
        let (env, _) = CarFollowingEnv::reset(&episode(15.0, "AHAH"), &EnvParams::default()).unwrap();
        let t = env.truncated(1, LeaderMotion::ConstantVelocity);
        assert_eq!(t.follower_count(), 2);
        assert_eq!(t.av_indices(), vec![0]);
        assert_eq!(t.observe(1), env.observe(1));
    }

    #[test]
    fn mixes() {
        let m = enumerate_mixes(4);
        assert_eq!(m.len(), 15);
        assert!(m.iter().all(|s| s.contains('A')));
        assert_eq!(m.first().unwrap(), "HHHA");
        assert_eq!(m.last().unwrap(), "AAAA");
        let tags = parse_mix("haaa", ControllerTag::AvAkHcfs).unwrap();
        assert_eq!(tags[0], ControllerTag::HvIdm);
        assert_eq!(mix_string(&tags), "HAAA");
        assert!(parse_mix("HAXA", ControllerTag::AvTd3).is_err());
    }

    proptest! {
        #[test]
        fn reward_terms_are_bounded(
            x in -10.0f64..200.0, v_front in 0.0f64..40.0, v_ego in 0.0f64..40.0,
            x0 in -10.0f64..200.0, v_lead in 0.0f64..40.0,
            a_k in -3.0f64..3.0, a_prev in -3.0f64..3.0, collided in any::<bool>(),
        ) {
            let obs = Observation {
                x_error: x, v_error: v_front - v_ego, v_ego, x_error_0: x0, v_error_0: v_lead - v_ego,
            };
            let r = step_reward(&obs, a_k, a_prev, collided, &RewardParams::default(), 3.0, 0.1);
            prop_assert!(r.stability <= 0.0 && r.stability >= -1.0);
            prop_assert!(r.comfort <= 0.0 && r.comfort >= -1.0);
            prop_assert!(r.safety <= 0.0 && r.safety >= -5.0);
            prop_assert!(r.efficiency <= 0.0);
            prop_assert!(r.total <= 0.0);
            let sum = r.stability + r.comfort + r.safety + r.efficiency + r.collision;
            prop_assert_eq!(r.total, sum);
        }

        #[test]
        fn safety_monotone_in_ttc(a in 1e-6f64..2.7, b in 1e-6f64..2.7) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(reward_safety(Some(lo), 2.7, -5.0) <= reward_safety(Some(hi), 2.7, -5.0));
        }

        #[test]
        fn ttc_none_iff_opening(x in -5.0f64..100.0, v in -20.0f64..20.0) {
            prop_assert_eq!(time_to_collision(x, v).is_none(), v >= 0.0);
        }

        #[test]
        fn update_order_does_not_matter(actions in prop::collection::vec(-3.0f64..3.0, 4)) {
            let params = EnvParams::default();
            let (mut env, _) = CarFollowingEnv::reset(&episode(14.0, "AAAA"), &params).unwrap();
            let before = env.platoon().clone();
            env.step(&actions).unwrap();
            // step each follower alone against the same snapshot, in reverse order
            let mut manual = before.clone();
            for i in (0..4).rev() {
                manual.followers[i].state = step_vehicle(&before.followers[i].state, actions[i], &params.actuator, 0.1);
            }
            for i in 0..4 {
                prop_assert_eq!(manual.followers[i].state, env.platoon().followers[i].state);
            }
        }
    }
}
