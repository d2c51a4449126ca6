//! Blending of the TD3 and CACC commands.
//!
//! AK-HCFS predicts both controllers a few steps ahead, finds the first step
//! at which CACC's discounted return overtakes TD3's, iterates a scalar
//! Kalman covariance that many steps, lets [`mcts`](crate::mcts) pick the
//! measurement noise `R`, and blends with `H = P_N / (P_N + R)`. HCFS is the
//! fixed 50/50 blend picked by a one-step reward comparison.

use std::collections::HashMap;

use rand::SeedableRng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::controllers::{cacc_accel, CaccState};
use crate::dynamics::{clear_distance, step_vehicle, VehicleState};
use crate::env::{lengths_ahead, observe_parts, step_reward, CarFollowingEnv, EnvParams, LeaderMotion};
use crate::mcts::{self, MctsConfig, RSimulator, SimOutcome};
use crate::rng::SimRng;
use crate::td3::Policy;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct KfConstants {
    pub q_measure: f64,
    pub r_measure: f64,
    pub a1: f64,
}

impl Default for KfConstants {
    fn default() -> Self {
        Self {
            q_measure: 0.01,
            r_measure: 0.01,
            a1: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Rollout horizon M in steps.
    pub horizon_steps: usize,
    /// Discount for the rollout returns.
    pub gamma: f64,
    pub leader_prediction: LeaderMotion,
    pub kf: KfConstants,
    /// HCFS blend weight on CACC when CACC wins the one-step comparison.
    pub hcfs_beta: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 10,
            gamma: 0.99,
            leader_prediction: LeaderMotion::ConstantVelocity,
            kf: KfConstants::default(),
            hcfs_beta: 0.5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(Error::InvalidParameter("fusion.horizon_steps must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!("fusion.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.hcfs_beta) {
            return Err(Error::InvalidParameter("fusion.hcfs_beta must lie in [0, 1]".into()));
        }
        let kf = &self.kf;
        if !(kf.q_measure >= 0.0 && kf.a1 >= 0.0 && kf.r_measure > 0.0) {
            return Err(Error::InvalidParameter("fusion.kf needs q_measure, a1 >= 0 and r_measure > 0".into()));
        }
        Ok(())
    }
}

/// Discounted return `sum gamma^(t-1) r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut weight = 1.0;
    for r in rewards {
        acc += weight * r;
        weight *= gamma;
    }
    acc
}

/// First 1-based step at which CACC's discounted partial sum strictly
/// exceeds TD3's. A branch that ended early contributes zero afterwards.
pub fn crossover_step(r_td3: &[f64], r_cacc: &[f64], gamma: f64) -> Option<usize> {
    let len = r_td3.len().max(r_cacc.len());
    let (mut s_td3, mut s_cacc, mut weight) = (0.0, 0.0, 1.0);
    for t in 0..len {
        s_td3 += weight * r_td3.get(t).copied().unwrap_or(0.0);
        s_cacc += weight * r_cacc.get(t).copied().unwrap_or(0.0);
        if s_cacc > s_td3 {
            return Some(t + 1);
        }
        weight *= gamma;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub r_td3: f64,
    pub r_cacc: f64,
    pub crossover: Option<usize>,
    pub rewards_td3: Vec<f64>,
    pub rewards_cacc: Vec<f64>,
}

impl RolloutResult {
    pub fn from_rewards(rewards_td3: Vec<f64>, rewards_cacc: Vec<f64>, gamma: f64) -> Self {
        Self {
            r_td3: discounted_return(&rewards_td3, gamma),
            r_cacc: discounted_return(&rewards_cacc, gamma),
            crossover: crossover_step(&rewards_td3, &rewards_cacc, gamma),
            rewards_td3,
            rewards_cacc,
        }
    }
}

/// Ego command source inside a predicted rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EgoControl {
    Cacc,
    Td3,
    /// Blend with `H = p_n / (p_n + r)`.
    Fused { p_n: f64, r: f64 },
}

/// Predicted motion of everything ahead of the ego. Index 0 is the
/// snapshot, index `k` the state after `k` steps.
#[derive(Debug, Clone)]
struct AheadTrace {
    leader: Vec<VehicleState>,
    front: Vec<VehicleState>,
    /// A collision among the vehicles ahead happened on this step.
    collided: Vec<bool>,
    /// The environment is finished after this step.
    done: Vec<bool>,
}

/// Forward model for one AV follower. Vehicles ahead of the ego never react
/// to it, so their motion over the horizon is simulated once (other AVs
/// with the deterministic actor, HVs with IDM, the leader by the prediction
/// mode) and each branch only integrates the ego. Results are identical to
/// stepping a full copy of the environment.
#[derive(Debug, Clone)]
pub struct EgoRollout<'a, P: Policy + ?Sized> {
    params: EnvParams,
    policy: &'a P,
    ego: VehicleState,
    cacc: CaccState,
    lengths_ahead: f64,
    trace: AheadTrace,
}

impl<'a, P: Policy + ?Sized> EgoRollout<'a, P> {
    /// Prepare rollouts of up to `horizon` steps for AV follower `ego`.
    pub fn new(env: &CarFollowingEnv, ego: usize, policy: &'a P, motion: LeaderMotion, horizon: usize) -> Result<Self> {
        if let Some((front, rear)) = env.collision() {
            return Err(Error::SnapshotCollided(front, rear));
        }
        if ego >= env.follower_count() || !env.platoon().followers[ego].tag.is_av() {
            return Err(Error::InvalidParameter(format!("follower {ego} is not an AV")));
        }
        let mut ahead = env.prefix(ego, motion);
        let snapshot = ahead.platoon();
        let mut trace = AheadTrace {
            leader: vec![snapshot.leader],
            front: vec![*snapshot.vehicle(ego)],
            collided: vec![false],
            done: vec![env.is_done()],
        };
        for _ in 0..horizon {
            if ahead.is_done() {
                break;
            }
            let actions: Vec<f64> = ahead
                .av_indices()
                .into_iter()
                .map(|i| policy.act(&ahead.normalized_observation(i)))
                .collect();
            let out = ahead.step(&actions)?;
            let platoon = ahead.platoon();
            trace.leader.push(platoon.leader);
            trace.front.push(*platoon.vehicle(ego));
            trace.collided.push(out.collision.is_some());
            trace.done.push(out.done);
        }
        Ok(Self {
            params: env.params().clone(),
            policy,
            ego: env.platoon().followers[ego].state,
            cacc: env.cacc_state(ego),
            lengths_ahead: lengths_ahead(env.platoon(), ego),
            trace,
        })
    }

    /// State at the snapshot.
    pub fn initial_state(&self) -> EgoState {
        EgoState {
            t: 0,
            ego: self.ego,
            cacc: self.cacc,
        }
    }

    /// One ego step from `s`; `None` once the environment is finished or
    /// the horizon is used up.
    pub fn advance(&self, s: &EgoState, control: EgoControl) -> Result<Option<EgoStep>> {
        let tr = &self.trace;
        let t = s.t;
        if t + 1 >= tr.front.len() || tr.done[t] {
            return Ok(None);
        }
        let p = &self.params;
        let a_bound = p.a_bound();
        let front = &tr.front[t];
        let (a_cacc, next_cacc) =
            cacc_accel(front.position_m, s.ego.position_m, front.length_m, s.ego.speed_mps, &s.cacc, &p.cacc)?;
        let td3 = || {
            let obs = observe_parts(&tr.leader[t], front, &s.ego, self.lengths_ahead).normalized(&p.reward);
            self.policy.act(&obs)
        };
        let cmd = match control {
            EgoControl::Cacc => a_cacc,
            EgoControl::Td3 => td3(),
            EgoControl::Fused { p_n, r } => fuse_action(td3(), a_cacc, p_n / (p_n + r), a_bound)?,
        };
        if !cmd.is_finite() {
            return Err(Error::NonFinite("AV action"));
        }
        let next = step_vehicle(&s.ego, cmd.clamp(-a_bound, a_bound), &p.actuator, p.dt_s);
        let front_next = &tr.front[t + 1];
        let hit = !tr.collided[t + 1] && clear_distance(front_next, &next) <= 0.0;
        let obs = observe_parts(&tr.leader[t + 1], front_next, &next, self.lengths_ahead);
        let r = step_reward(&obs, next.accel_mps2, s.ego.accel_mps2, hit, &p.reward, a_bound, p.dt_s);
        Ok(Some(EgoStep {
            reward: r.total,
            collided: hit || tr.collided[t + 1],
            next: EgoState {
                t: t + 1,
                ego: next,
                cacc: next_cacc,
            },
        }))
    }

    /// Run up to `steps` steps with the ego command chosen by `control(t)`.
    /// Returns the ego's per-step rewards and the 1-based step of a
    /// collision, after which the branch stops.
    pub fn run(&self, steps: usize, control: impl Fn(usize) -> EgoControl) -> Result<(Vec<f64>, Option<usize>)> {
        let mut state = self.initial_state();
        let mut rewards = Vec::with_capacity(steps);
        for t in 0..steps {
            let Some(step) = self.advance(&state, control(t))? else {
                break;
            };
            rewards.push(step.reward);
            if step.collided {
                return Ok((rewards, Some(t + 1)));
            }
            state = step.next;
        }
        Ok((rewards, None))
    }
}

/// Ego position in a rollout: step index, vehicle and controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub t: usize,
    pub ego: VehicleState,
    pub cacc: CaccState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoStep {
    pub reward: f64,
    pub collided: bool,
    pub next: EgoState,
}

/// Predict the ego under pure CACC and under the deterministic actor for
/// `horizon_steps` steps from the current snapshot.
pub fn predict_rollout<P: Policy + ?Sized>(
    env: &CarFollowingEnv,
    ego: usize,
    policy: &P,
    config: &FusionConfig,
) -> Result<RolloutResult> {
    let m = config.horizon_steps;
    let rollout = EgoRollout::new(env, ego, policy, config.leader_prediction, m)?;
    rollout_result(&rollout, m, config.gamma)
}

fn rollout_result<P: Policy + ?Sized>(rollout: &EgoRollout<'_, P>, m: usize, gamma: f64) -> Result<RolloutResult> {
    let (cacc, _) = rollout.run(m, |_| EgoControl::Cacc)?;
    let (td3, _) = rollout.run(m, |_| EgoControl::Td3)?;
    Ok(RolloutResult::from_rewards(td3, cacc, gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanTrace {
    /// `P_1 ..= P_N`.
    pub p: Vec<f64>,
    /// `K_1 .. K_{N-1}`.
    pub k: Vec<f64>,
    /// `A_1 ..= A_N`.
    pub a: Vec<f64>,
    pub q_measure: f64,
    pub r_measure: f64,
    pub p_n: f64,
}

/// Iterate `P_n = A_n + Q`, `K_n = P_n / (P_n + R)`, `A_{n+1} = (1 - K_n) P_n`
/// for `n = 1 .. N-1`, then `P_N = A_N + Q`.
pub fn kf_iterate(n: usize, q: f64, r_measure: f64, a1: f64) -> Result<KalmanTrace> {
    if n == 0 {
        return Err(Error::InvalidParameter("KF step count N must be >= 1".into()));
    }
    if !(q >= 0.0 && a1 >= 0.0 && r_measure > 0.0 && q.is_finite() && a1.is_finite() && r_measure.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "KF constants need Q >= 0, A1 >= 0, R > 0 (got {q}, {a1}, {r_measure})"
        )));
    }
    let mut trace = KalmanTrace {
        p: Vec::with_capacity(n),
        k: Vec::with_capacity(n - 1),
        a: Vec::with_capacity(n),
        q_measure: q,
        r_measure,
        p_n: 0.0,
    };
    let mut a = a1;
    for _ in 1..n {
        let p = a + q;
        let k = p / (p + r_measure);
        trace.a.push(a);
        trace.p.push(p);
        trace.k.push(k);
        a = (1.0 - k) * p;
    }
    trace.a.push(a);
    trace.p_n = a + q;
    trace.p.push(trace.p_n);
    Ok(trace)
}

/// `H = P_N / (P_N + R)` when CACC overtook TD3 within the horizon, else 0.
pub fn kalman_gain(p_n: f64, r: f64, crossover: Option<usize>) -> Result<f64> {
    if !(p_n >= 0.0 && p_n.is_finite()) || !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("gain needs P_N >= 0 and R > 0 (got {p_n}, {r})")));
    }
    Ok(match crossover {
        Some(_) => p_n / (p_n + r),
        None => 0.0,
    })
}

/// `a_TD3 + H (a_CACC - a_TD3)` before clamping; the endpoints return the
/// respective source unchanged.
pub fn blend(a_td3: f64, a_cacc: f64, h: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::InvalidParameter(format!("blend weight H = {h} outside [0, 1]")));
    }
    Ok(if h == 0.0 {
        a_td3
    } else if h == 1.0 {
        a_cacc
    } else {
        a_td3 + h * (a_cacc - a_td3)
    })
}

/// Blended command clamped to `[-a_bound, a_bound]`.
pub fn fuse_action(a_td3: f64, a_cacc: f64, h: f64, a_bound: f64) -> Result<f64> {
    Ok(blend(a_td3, a_cacc, h)?.clamp(-a_bound, a_bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AkDecision {
    pub action: f64,
    pub a_td3: f64,
    pub a_cacc: f64,
    #[serde(rename = "N")]
    pub crossover: Option<usize>,
    #[serde(rename = "P_N")]
    pub p_n: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "H")]
    pub h: f64,
}

/// Gain and blend for a finished rollout. `select_r(N, P_N)` is only
/// called when the rollout crossed over.
pub fn akhcfs_combine(
    rollout: &RolloutResult,
    a_td3: f64,
    a_cacc: f64,
    kf: &KfConstants,
    a_bound: f64,
    select_r: impl FnOnce(usize, f64) -> Result<f64>,
) -> Result<AkDecision> {
    let Some(n) = rollout.crossover else {
        return Ok(AkDecision {
            action: a_td3.clamp(-a_bound, a_bound),
            a_td3,
            a_cacc,
            crossover: None,
            p_n: None,
            r: None,
            h: 0.0,
        });
    };
    let p_n = kf_iterate(n, kf.q_measure, kf.r_measure, kf.a1)?.p_n;
    let r = select_r(n, p_n)?;
    let h = kalman_gain(p_n, r, Some(n))?;
    Ok(AkDecision {
        action: fuse_action(a_td3, a_cacc, h, a_bound)?,
        a_td3,
        a_cacc,
        crossover: Some(n),
        p_n: Some(p_n),
        r: Some(r),
        h,
    })
}

/// Scores a path of `R` choices by rolling the fused ego forward: step `t`
/// uses `path[t]`, later steps keep the last choice.
///
/// The first `len - 1` steps of a path coincide with its parent path's
/// rollout, so every evaluation stores the state reached after `len` steps
/// and children resume from it. A child that repeats its parent's last `R`
/// has the parent's outcome.
pub struct FusedRollout<'r, 'a, P: Policy + ?Sized> {
    rollout: &'r EgoRollout<'a, P>,
    p_n: f64,
    gamma: f64,
    steps: usize,
    memo: HashMap<Vec<u64>, Memo>,
}

#[derive(Debug, Clone, Copy)]
struct Memo {
    outcome: SimOutcome,
    /// State after `path.len()` steps with the discounted sum and weight
    /// accumulated so far; `None` if the rollout ended earlier.
    resume: Option<(EgoState, f64, f64)>,
}

impl<'r, 'a, P: Policy + ?Sized> FusedRollout<'r, 'a, P> {
    pub fn new(rollout: &'r EgoRollout<'a, P>, p_n: f64, gamma: f64, steps: usize) -> Self {
        Self {
            rollout,
            p_n,
            gamma,
            steps,
            memo: HashMap::new(),
        }
    }

    fn key(path: &[f64]) -> Vec<u64> {
        path.iter().map(|r| r.to_bits()).collect()
    }

    fn simulate(&self, path: &[f64]) -> Result<Memo> {
        let l = path.len();
        let start = match l {
            1 => Some((self.rollout.initial_state(), 0.0, 1.0)),
            _ => self.memo.get(&Self::key(&path[..l - 1])).and_then(|m| m.resume),
        };
        let (mut state, mut acc, mut weight, first) = match start {
            Some((s, acc, w)) => (s, acc, w, l - 1),
            None => (self.rollout.initial_state(), 0.0, 1.0, 0),
        };
        let mut resume = None;
        let mut collided_at = None;
        for t in first..self.steps {
            if t == l {
                resume = Some((state, acc, weight));
            }
            let control = EgoControl::Fused {
                p_n: self.p_n,
                r: path[t.min(l - 1)],
            };
            let Some(step) = self.rollout.advance(&state, control)? else {
                break;
            };
            acc += weight * step.reward;
            weight *= self.gamma;
            if step.collided {
                collided_at = Some(t + 1);
                break;
            }
            state = step.next;
        }
        if collided_at.is_none() && resume.is_none() && state.t == l {
            resume = Some((state, acc, weight));
        }
        Ok(Memo {
            outcome: SimOutcome {
                value: acc,
                collided_at,
            },
            resume,
        })
    }
}

impl<P: Policy + ?Sized> RSimulator for FusedRollout<'_, '_, P> {
    fn evaluate(&mut self, path: &[f64]) -> Result<SimOutcome> {
        if path.is_empty() {
            return Err(Error::InvalidParameter("empty R path".into()));
        }
        let l = path.len();
        if l >= 2 && path[l - 1].to_bits() == path[l - 2].to_bits() {
            if let Some(parent) = self.memo.get(&Self::key(&path[..l - 1])).copied() {
                let resume = parent.resume.and_then(|(s, acc, w)| {
                    // advance the stored state by one more step of the same R
                    let control = EgoControl::Fused {
                        p_n: self.p_n,
                        r: path[l - 1],
                    };
                    match self.rollout.advance(&s, control) {
                        Ok(Some(step)) if !step.collided => Some((step.next, acc + w * step.reward, w * self.gamma)),
                        _ => None,
                    }
                });
                self.memo.insert(Self::key(path), Memo { outcome: parent.outcome, resume });
                return Ok(parent.outcome);
            }
        }
        let memo = self.simulate(path)?;
        self.memo.insert(Self::key(path), memo);
        Ok(memo.outcome)
    }
}

/// Full AK-HCFS decision for AV follower `ego`. `seed` drives the tree
/// search only.
pub fn akhcfs_decide<P: Policy + ?Sized>(
    env: &CarFollowingEnv,
    ego: usize,
    policy: &P,
    config: &FusionConfig,
    mcts_config: &MctsConfig,
    seed: u64,
) -> Result<AkDecision> {
    let a_bound = env.params().a_bound();
    let a_td3 = policy.act(&env.normalized_observation(ego));
    let a_cacc = env.cacc_candidate(ego)?.0;
    let m = config.horizon_steps;
    let rollout = EgoRollout::new(env, ego, policy, config.leader_prediction, m)?;
    let prediction = rollout_result(&rollout, m, config.gamma)?;
    akhcfs_combine(&prediction, a_td3, a_cacc, &config.kf, a_bound, |n, p_n| {
        let depth = m + 1 - n;
        let mut sim = FusedRollout::new(&rollout, p_n, config.gamma, depth);
        let mut rng = SimRng::seed_from_u64(seed);
        Ok(mcts::search(&mut sim, mcts_config, depth, &mut rng)?.r)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HcfsDecision {
    pub action: f64,
    pub a_td3: f64,
    pub a_cacc: f64,
    pub r_td3: f64,
    pub r_cacc: f64,
}

/// HCFS choice from already computed one-step rewards.
pub fn hcfs_combine(a_td3: f64, a_cacc: f64, r_td3: f64, r_cacc: f64, beta: f64, a_bound: f64) -> Result<f64> {
    let a = if r_td3 > r_cacc {
        a_td3
    } else {
        blend(a_td3, a_cacc, beta)?
    };
    Ok(a.clamp(-a_bound, a_bound))
}

/// HCFS decision: compare the ego's one-step reward under each candidate
/// command and blend when CACC does at least as well.
pub fn hcfs_decide<P: Policy + ?Sized>(
    env: &CarFollowingEnv,
    ego: usize,
    policy: &P,
    config: &FusionConfig,
) -> Result<HcfsDecision> {
    let rollout = EgoRollout::new(env, ego, policy, config.leader_prediction, 1)?;
    let a_td3 = policy.act(&env.normalized_observation(ego));
    let a_cacc = env.cacc_candidate(ego)?.0;
    let (td3, _) = rollout.run(1, |_| EgoControl::Td3)?;
    let (cacc, _) = rollout.run(1, |_| EgoControl::Cacc)?;
    let (r_td3, r_cacc) = (td3.first().copied().unwrap_or(0.0), cacc.first().copied().unwrap_or(0.0));
    Ok(HcfsDecision {
        action: hcfs_combine(a_td3, a_cacc, r_td3, r_cacc, config.hcfs_beta, env.params().a_bound())?,
        a_td3,
        a_cacc,
        r_td3,
        r_cacc,
    })
}
