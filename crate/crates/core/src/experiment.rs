//! Episode runner, TD3 training loop and the evaluation sweep over test
//! events and AV/HV mixes.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynamics::{trajectory_rows, ControllerTag, TRAJECTORY_CSV_HEADER};
use crate::env::{
    enumerate_mixes, parse_mix, reward_rows, CarFollowingEnv, EnvParams, EpisodeConfig, REWARD_CSV_HEADER,
};
use crate::fusion::{akhcfs_decide, hcfs_decide, FusionConfig};
use crate::mcts::MctsConfig;
use crate::metrics::{EventMetrics, FollowerSeries, MetricsConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::td3::{Policy, ReplayBuffer, Td3Agent, Td3Hyper, Transition};
use crate::traj_data::LeaderProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td3,
    Hcfs,
    Akhcfs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Td3, Algorithm::Hcfs, Algorithm::Akhcfs];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Td3 => "td3",
            Algorithm::Hcfs => "hcfs",
            Algorithm::Akhcfs => "akhcfs",
        }
    }

    pub fn tag(self) -> ControllerTag {
        match self {
            Algorithm::Td3 => ControllerTag::AvTd3,
            Algorithm::Hcfs => ControllerTag::AvHcfs,
            Algorithm::Akhcfs => ControllerTag::AvAkHcfs,
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm `{s}` (expected td3, hcfs or akhcfs)")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter blocks shared by training, evaluation and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentParams {
    /// Followers behind the leader.
    pub followers: usize,
    pub env: EnvParams,
    pub td3: Td3Hyper,
    pub fusion: FusionConfig,
    pub mcts: MctsConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            followers: 4,
            env: EnvParams::default(),
            td3: Td3Hyper::default(),
            fusion: FusionConfig::default(),
            mcts: MctsConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        if self.followers == 0 || self.followers > 16 {
            return Err(Error::InvalidParameter(format!(
                "followers must lie in 1..=16, got {}",
                self.followers
            )));
        }
        self.env.validate()?;
        self.td3.validate()?;
        self.fusion.validate()?;
        self.mcts.validate()?;
        self.metrics.validate()
    }

    pub fn mixes(&self) -> Vec<String> {
        enumerate_mixes(self.followers)
    }
}

/// One logged AV decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub vehicle: usize,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "P_N")]
    pub p_n: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "H")]
    pub h: f64,
    pub a_td3: f64,
    pub a_cacc: f64,
    pub a_fused: f64,
}

/// Command for AV follower `follower` under `algorithm` with the
/// deterministic actor `policy`.
pub fn decide<P: Policy + ?Sized>(
    env: &CarFollowingEnv,
    follower: usize,
    algorithm: Algorithm,
    policy: &P,
    params: &ExperimentParams,
    seed: u64,
) -> Result<DecisionRecord> {
    let step = env.platoon().step_index;
    let vehicle = follower + 1;
    match algorithm {
        Algorithm::Td3 => {
            let a = policy.act(&env.normalized_observation(follower));
            let a = a.clamp(-params.env.a_bound(), params.env.a_bound());
            Ok(DecisionRecord {
                step,
                vehicle,
                n: None,
                p_n: None,
                r: None,
                h: 0.0,
                a_td3: a,
                a_cacc: env.cacc_candidate(follower)?.0,
                a_fused: a,
            })
        }
        Algorithm::Hcfs => {
            let d = hcfs_decide(env, follower, policy, &params.fusion)?;
            let h = if d.r_td3 > d.r_cacc { 0.0 } else { params.fusion.hcfs_beta };
            Ok(DecisionRecord {
                step,
                vehicle,
                n: None,
                p_n: None,
                r: None,
                h,
                a_td3: d.a_td3,
                a_cacc: d.a_cacc,
                a_fused: d.action,
            })
        }
        Algorithm::Akhcfs => {
            let d = akhcfs_decide(env, follower, policy, &params.fusion, &params.mcts, seed)?;
            Ok(DecisionRecord {
                step,
                vehicle,
                n: d.crossover,
                p_n: d.p_n,
                r: d.r,
                h: d.h,
                a_td3: d.a_td3,
                a_cacc: d.a_cacc,
                a_fused: d.action,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub metrics: EventMetrics,
    /// Trajectory CSV, reward CSV and decision JSON lines when logging.
    pub logs: Option<EpisodeLogs>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLogs {
    pub trajectory_csv: String,
    pub reward_csv: String,
    pub decisions_jsonl: String,
}

fn record_snapshot(env: &CarFollowingEnv, series: &mut [FollowerSeries], leader_speed: &mut Vec<f64>) {
    let platoon = env.platoon();
    leader_speed.push(platoon.leader.speed_mps);
    for (i, s) in series.iter_mut().enumerate() {
        let obs = env.observe(i);
        let state = &platoon.followers[i].state;
        s.x_error.push(obs.x_error);
        s.v_error.push(obs.v_error);
        s.accel.push(state.accel_mps2);
        s.speed.push(state.speed_mps);
    }
}

/// Run one evaluation episode with every AV driven by `algorithm`.
pub fn run_episode<P: Policy + ?Sized>(
    leader: Arc<LeaderProfile>,
    mix: &str,
    algorithm: Algorithm,
    policy: &P,
    params: &ExperimentParams,
    seed: u64,
    with_logs: bool,
) -> Result<EpisodeResult> {
    let tags = parse_mix(mix, algorithm.tag())?;
    let event_id = leader.event_id.clone();
    let config = EpisodeConfig {
        leader,
        mix: tags.clone(),
        seed,
    };
    let (mut env, _) = CarFollowingEnv::reset(&config, &params.env)?;
    let n = env.follower_count();
    let mut series = vec![FollowerSeries::default(); n];
    let mut leader_speed = Vec::new();
    record_snapshot(&env, &mut series, &mut leader_speed);

    let mut logs = with_logs.then(|| {
        let mut l = EpisodeLogs {
            trajectory_csv: format!("{TRAJECTORY_CSV_HEADER}\n"),
            reward_csv: format!("{REWARD_CSV_HEADER}\n"),
            decisions_jsonl: String::new(),
        };
        trajectory_rows(env.platoon(), &mut l.trajectory_csv);
        l
    });

    while !env.is_done() {
        let step = env.platoon().step_index;
        let mut actions = Vec::new();
        for i in env.av_indices() {
            let d = decide(&env, i, algorithm, policy, params, derive_seed(seed, &[step as u64, i as u64]))?;
            if let Some(l) = logs.as_mut() {
                l.decisions_jsonl.push_str(&serde_json::to_string(&d)?);
                l.decisions_jsonl.push('\n');
            }
            actions.push(d.a_fused);
        }
        let out = env.step(&actions)?;
        if out.rewards.iter().any(|r| !r.total.is_finite()) {
            return Err(Error::NonFinite("step reward"));
        }
        record_snapshot(&env, &mut series, &mut leader_speed);
        if let Some(l) = logs.as_mut() {
            trajectory_rows(env.platoon(), &mut l.trajectory_csv);
            reward_rows(env.platoon().step_index, env.platoon(), &out.rewards, &mut l.reward_csv);
        }
    }

    let collision = env.collision();
    let dt = params.env.dt_s;
    let followers = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let collided = collision.is_some_and(|(_, rear)| rear == i + 1);
            s.metrics(i + 1, tags[i].is_av(), collided, dt, &params.metrics)
        })
        .collect();
    let leader_mean_speed = leader_speed.iter().sum::<f64>() / leader_speed.len() as f64;
    Ok(EpisodeResult {
        metrics: EventMetrics {
            algorithm: algorithm.name().to_string(),
            event_id,
            mix: mix.to_string(),
            steps: env.platoon().step_index,
            collision: collision.is_some(),
            leader_mean_speed,
            followers,
        },
        logs,
    })
}

/// Seed of the episode for test event `event` and mix `mix`; shared by all
/// algorithms so they face identical conditions.
pub fn episode_seed(seed: u64, event: usize, mix: usize) -> u64 {
    derive_seed(seed, &[0xE7A1, event as u64, mix as u64])
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))
}

/// Every `(algorithm, event, mix)` episode, in that nesting order. The
/// result order does not depend on `jobs`.
pub fn evaluate<P: Policy + Sync + ?Sized>(
    events: &[Arc<LeaderProfile>],
    algorithms: &[Algorithm],
    mixes: &[String],
    policy: &P,
    params: &ExperimentParams,
    seed: u64,
    jobs: usize,
) -> Result<Vec<EventMetrics>> {
    params.validate()?;
    let work: Vec<(Algorithm, usize, usize)> = algorithms
        .iter()
        .flat_map(|&a| (0..events.len()).flat_map(move |e| (0..mixes.len()).map(move |m| (a, e, m))))
        .collect();
    let run = |&(alg, e, m): &(Algorithm, usize, usize)| -> Result<EventMetrics> {
        let result = run_episode(
            Arc::clone(&events[e]),
            &mixes[m],
            alg,
            policy,
            params,
            episode_seed(seed, e, m),
            false,
        )?;
        log::debug!("{} {} {} collision={}", alg, events[e].event_id, mixes[m], result.metrics.collision);
        Ok(result.metrics)
    };
    if jobs <= 1 {
        work.iter().map(run).collect()
    } else {
        thread_pool(jobs)?.install(|| work.par_iter().map(run).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Environment step budget; `None` means unlimited.
    pub steps: Option<u64>,
    /// Episode budget; `None` means unlimited.
    pub episodes: Option<u64>,
    /// Steps with uniformly random AV actions before the actor takes over.
    pub warmup_steps: u64,
    /// Write a checkpoint every this many episodes (0 disables).
    pub checkpoint_every_episodes: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: Some(50_000),
            episodes: None,
            warmup_steps: 1_000,
            checkpoint_every_episodes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: u64,
    pub total_steps: u64,
    pub event_id: String,
    pub mix: String,
    pub steps: usize,
    pub collision: bool,
    /// Mean over AVs of the summed per-step reward.
    pub av_return: f64,
    pub critic_loss: f64,
}

pub const CURVE_CSV_HEADER: &str = "episode,total_steps,event_id,mix,steps,collision,av_return,critic_loss";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = format!("{CURVE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.episode, r.total_steps, r.event_id, r.mix, r.steps, r.collision, r.av_return, r.critic_loss
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Td3Agent,
    pub curve: Vec<CurveRow>,
    pub total_steps: u64,
}

/// Train `agent` on randomly drawn profiles and mixes. Under `hcfs` and
/// `akhcfs` the wrapper shapes the executed action and the agent learns
/// from the executed transitions. `on_checkpoint` is called with the agent
/// and the episode count at each checkpoint interval.
pub fn train(
    mut agent: Td3Agent,
    profiles: &[Arc<LeaderProfile>],
    algorithm: Algorithm,
    params: &ExperimentParams,
    config: &TrainConfig,
    seed: u64,
    mut on_checkpoint: impl FnMut(&Td3Agent, u64) -> Result<()>,
) -> Result<TrainOutcome> {
    params.validate()?;
    if profiles.is_empty() {
        return Err(Error::TooFewEvents { needed: 1, got: 0 });
    }
    let mixes = params.mixes();
    let a_bound = params.env.a_bound();
    let mut rng = stream_rng(seed, &[0x7EA1]);
    let mut buffer = ReplayBuffer::new(params.td3.memory_size);
    let mut curve = Vec::new();
    let mut total_steps = 0u64;
    let mut episode = 0u64;
    let step_budget = config.steps.unwrap_or(u64::MAX);
    let episode_budget = config.episodes.unwrap_or(u64::MAX);

    while episode < episode_budget && total_steps < step_budget {
        let leader = Arc::clone(&profiles[rng.random_range(0..profiles.len())]);
        let mix = &mixes[rng.random_range(0..mixes.len())];
        let event_id = leader.event_id.clone();
        let ep_seed = derive_seed(seed, &[0x7EA2, episode]);
        let episode_config = EpisodeConfig {
            leader,
            mix: parse_mix(mix, algorithm.tag())?,
            seed: ep_seed,
        };
        let (mut env, _) = CarFollowingEnv::reset(&episode_config, &params.env)?;
        let avs = env.av_indices();
        let mut returns = vec![0.0; avs.len()];
        let mut critic_loss = f64::NAN;
        while !env.is_done() && total_steps < step_budget {
            let step = env.platoon().step_index;
            let obs: Vec<[f64; 5]> = avs.iter().map(|&i| env.normalized_observation(i)).collect();
            let mut actions = Vec::with_capacity(avs.len());
            for (k, &i) in avs.iter().enumerate() {
                let a = if total_steps < config.warmup_steps {
                    rng.random_range(-a_bound..=a_bound)
                } else {
                    match algorithm {
                        Algorithm::Td3 => agent.select_action(&obs[k], true, &mut rng),
                        _ => {
                            let d = decide(&env, i, algorithm, &agent.actor, params, derive_seed(ep_seed, &[step as u64, i as u64]))?;
                            let noisy = agent.select_action(&obs[k], true, &mut rng) - agent.actor_forward(&obs[k]);
                            (d.a_fused + noisy).clamp(-a_bound, a_bound)
                        }
                    }
                };
                actions.push(a);
            }
            let out = env.step(&actions)?;
            for (k, &i) in avs.iter().enumerate() {
                let reward = out.rewards[i].total;
                returns[k] += reward;
                buffer.push(Transition {
                    obs: obs[k],
                    action: actions[k],
                    reward,
                    next_obs: env.normalized_observation(i),
                    done: out.collision.is_some_and(|(_, rear)| rear == i + 1),
                });
            }
            total_steps += 1;
            if total_steps >= config.warmup_steps && buffer.len() >= params.td3.batch_size {
                critic_loss = agent.update(&buffer)?.critic_loss;
            }
        }
        if !agent.is_finite() {
            return Err(Error::NonFinite("TD3 parameters"));
        }
        episode += 1;
        let row = CurveRow {
            episode,
            total_steps,
            event_id,
            mix: mix.clone(),
            steps: env.platoon().step_index,
            collision: env.collision().is_some(),
            av_return: returns.iter().sum::<f64>() / returns.len().max(1) as f64,
            critic_loss,
        };
        log::info!(
            "episode {} steps {} {} {} return {:.3} collision {}",
            row.episode,
            row.total_steps,
            row.event_id,
            row.mix,
            row.av_return,
            row.collision
        );
        curve.push(row);
        if config.checkpoint_every_episodes > 0 && episode % config.checkpoint_every_episodes == 0 {
            on_checkpoint(&agent, episode)?;
        }
    }
    Ok(TrainOutcome {
        agent,
        curve,
        total_steps,
    })
}
