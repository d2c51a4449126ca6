//! The `ingest`, `train`, `evaluate`, `replay` and `report` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use akhcfs_core::env::parse_mix;
use akhcfs_core::experiment::{curve_csv, episode_seed, evaluate, run_episode, train, Algorithm};
use akhcfs_core::metrics::{aggregate, emit_aggregate, emit_report, read_report, AggregateReport, EventMetrics};
use akhcfs_core::rng::derive_seed;
use akhcfs_core::td3::Td3Agent;
use akhcfs_core::traj_data::{
    extract_follow_events, parse_trajectory_csv, read_profiles_json, split_train_test, synthetic_profiles,
    write_profiles_json, LeaderProfile,
};
use akhcfs_core::Error;

use crate::config::RunConfig;
use crate::CliError;

/// Sub-seed coordinates of the root seed.
const SEED_SYNTHETIC_TRAIN: u64 = 1;
const SEED_SYNTHETIC_TEST: u64 = 2;
const SEED_AGENT_INIT: u64 = 3;
const SEED_TRAINING: u64 = 4;
const SEED_EVALUATION: u64 = 5;
const SEED_SPLIT: u64 = 6;
const SEED_TRAIN_REPLAY: u64 = 7;

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Train and test leader profiles resolved from the configuration.
#[derive(Debug, Clone)]
pub struct ProfileSets {
    pub train: Vec<LeaderProfile>,
    pub test: Vec<LeaderProfile>,
    pub source: &'static str,
}

pub fn load_profiles(config: &RunConfig) -> Result<ProfileSets, CliError> {
    let paths = &config.paths;
    if let (Some(train), Some(test)) = (&paths.train_profiles, &paths.test_profiles) {
        return Ok(ProfileSets {
            train: read_profiles_json(train)?,
            test: read_profiles_json(test)?,
            source: "profile files",
        });
    }
    if paths.train_profiles.is_some() || paths.test_profiles.is_some() {
        return Err(CliError::Usage(
            "paths.train_profiles and paths.test_profiles must be given together".into(),
        ));
    }
    match (&paths.data, config.data.synthetic) {
        (Some(data), false) => {
            let records = parse_trajectory_csv(data)?;
            let events = extract_follow_events(&records, &config.extract_options());
            let (train, test) = split_train_test(&events, config.data.train_fraction, derive_seed(config.seed, &[SEED_SPLIT]))?;
            Ok(ProfileSets {
                train,
                test,
                source: "trajectory data",
            })
        }
        (data, _) => {
            if data.is_none() && !config.data.synthetic {
                log::warn!("no trajectory data configured; using synthetic leader profiles");
            }
            let dt = config.env.dt_s;
            Ok(ProfileSets {
                train: synthetic_profiles(
                    config.data.synthetic_train,
                    derive_seed(config.seed, &[SEED_SYNTHETIC_TRAIN]),
                    dt,
                    "syn-train",
                ),
                test: synthetic_profiles(
                    config.data.synthetic_test,
                    derive_seed(config.seed, &[SEED_SYNTHETIC_TEST]),
                    dt,
                    "syn-test",
                ),
                source: "synthetic generator",
            })
        }
    }
}

fn shared(profiles: Vec<LeaderProfile>) -> Vec<Arc<LeaderProfile>> {
    profiles.into_iter().map(Arc::new).collect()
}

pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let sets = load_profiles(config)?;
    let out = &config.paths.output;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write_profiles_json(out.join("profiles_train.json"), &sets.train)?;
    write_profiles_json(out.join("profiles_test.json"), &sets.test)?;
    println!(
        "ingested {} train and {} test profiles from {} into {}",
        sets.train.len(),
        sets.test.len(),
        sets.source,
        out.display()
    );
    Ok(())
}

pub fn train_cmd(config: &RunConfig) -> Result<(), CliError> {
    let sets = load_profiles(config)?;
    let params = config.params();
    let agent = Td3Agent::new(
        params.td3.clone(),
        params.env.a_bound(),
        derive_seed(config.seed, &[SEED_AGENT_INIT]),
    );
    let out = config.paths.output.clone();
    let checkpoint_dir = out.join("checkpoints");
    let outcome = train(
        agent,
        &shared(sets.train),
        config.algorithm,
        &params,
        &config.train,
        derive_seed(config.seed, &[SEED_TRAINING]),
        |agent, episode| {
            fs::create_dir_all(&checkpoint_dir).map_err(|e| Error::Io {
                path: checkpoint_dir.clone(),
                source: e,
            })?;
            agent.save(checkpoint_dir.join(format!("episode_{episode:06}.json")))
        },
    )?;
    let checkpoint = config.checkpoint_path();
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    outcome.agent.save(&checkpoint)?;
    write_file(&out.join("training_curve.csv"), &curve_csv(&outcome.curve))?;
    let collisions = outcome.curve.iter().filter(|r| r.collision).count();
    println!(
        "trained {} ({} episodes, {} steps, {} collisions); checkpoint {}",
        config.algorithm,
        outcome.curve.len(),
        outcome.total_steps,
        collisions,
        checkpoint.display()
    );
    Ok(())
}

fn load_agent(config: &RunConfig) -> Result<Td3Agent, CliError> {
    let path = config.checkpoint_path();
    let agent = Td3Agent::load(&path)?;
    if agent.hyper.hidden != config.td3.hidden {
        return Err(Error::Shape(format!(
            "checkpoint {} has hidden layers {:?}, config expects {:?}",
            path.display(),
            agent.hyper.hidden,
            config.td3.hidden
        ))
        .into());
    }
    if agent.a_bound() != config.env.a_bound() {
        return Err(Error::Shape(format!(
            "checkpoint {} was trained with a_bound {}, config has {}",
            path.display(),
            agent.a_bound(),
            config.env.a_bound()
        ))
        .into());
    }
    Ok(agent)
}

fn check_mix(config: &RunConfig, mix: &str) -> Result<(), CliError> {
    let tags = parse_mix(mix, Algorithm::Td3.tag())?;
    if tags.len() != config.followers {
        return Err(CliError::Usage(format!(
            "mix `{mix}` has {} vehicles, config has {} followers",
            tags.len(),
            config.followers
        )));
    }
    if !tags.iter().any(|t| t.is_av()) {
        return Err(CliError::Usage(format!("mix `{mix}` contains no AV")));
    }
    Ok(())
}

fn selected_mixes(config: &RunConfig) -> Result<Vec<String>, CliError> {
    match &config.eval.mix {
        None => Ok(config.params().mixes()),
        Some(mix) => {
            check_mix(config, mix)?;
            Ok(vec![mix.clone()])
        }
    }
}

/// Runs the sweep, writes the report files and returns the aggregate with
/// the per-episode metrics it was built from.
pub fn evaluate_cmd(config: &RunConfig, jobs: usize) -> Result<(AggregateReport, Vec<EventMetrics>), CliError> {
    let sets = load_profiles(config)?;
    let agent = load_agent(config)?;
    let params = config.params();
    let mixes = selected_mixes(config)?;
    let events = evaluate(
        &shared(sets.test),
        &config.eval.algorithms,
        &mixes,
        &agent.actor,
        &params,
        derive_seed(config.seed, &[SEED_EVALUATION]),
        jobs,
    )?;
    let report = aggregate(&events, &params.metrics);
    emit_report(&report, &events, &config.paths.output)?;
    print!("{}", summary_text(&report));
    Ok((report, events))
}

/// Output directory of one replay.
pub fn replay_dir(config: &RunConfig, event: &str, mix: &str, algorithm: Algorithm) -> PathBuf {
    config
        .paths
        .output
        .join("replay")
        .join(format!("{event}_{mix}_{algorithm}"))
}

pub fn replay_cmd(config: &RunConfig) -> Result<PathBuf, CliError> {
    let event = config
        .eval
        .event
        .clone()
        .ok_or_else(|| CliError::Usage("replay needs --event ID".into()))?;
    let mix = config
        .eval
        .mix
        .clone()
        .unwrap_or_else(|| "A".repeat(config.followers));
    check_mix(config, &mix)?;
    let sets = load_profiles(config)?;
    let mix_index = config.params().mixes().iter().position(|m| *m == mix).unwrap_or(0);
    let (leader, seed) = if let Some(e) = sets.test.iter().position(|p| p.event_id == event) {
        (
            sets.test[e].clone(),
            episode_seed(derive_seed(config.seed, &[SEED_EVALUATION]), e, mix_index),
        )
    } else if let Some(e) = sets.train.iter().position(|p| p.event_id == event) {
        (
            sets.train[e].clone(),
            episode_seed(derive_seed(config.seed, &[SEED_TRAIN_REPLAY]), e, mix_index),
        )
    } else {
        let available: Vec<&str> = sets
            .test
            .iter()
            .chain(&sets.train)
            .map(|p| p.event_id.as_str())
            .collect();
        return Err(Error::UnknownEvent {
            requested: event,
            available: available.join(", "),
        }
        .into());
    };
    let agent = load_agent(config)?;
    let result = run_episode(Arc::new(leader), &mix, config.algorithm, &agent.actor, &config.params(), seed, true)?;
    let logs = result.logs.unwrap_or_default();
    let dir = replay_dir(config, &event, &mix, config.algorithm);
    write_file(&dir.join("trajectory.csv"), &logs.trajectory_csv)?;
    write_file(&dir.join("rewards.csv"), &logs.reward_csv)?;
    write_file(&dir.join("decisions.jsonl"), &logs.decisions_jsonl)?;
    let mut metrics = serde_json::to_string_pretty(&result.metrics).map_err(Error::from)?;
    metrics.push('\n');
    write_file(&dir.join("metrics.json"), &metrics)?;
    println!(
        "replayed {event} {mix} under {}: {} steps, collision {}; logs in {}",
        config.algorithm,
        result.metrics.steps,
        result.metrics.collision,
        dir.display()
    );
    Ok(dir)
}

pub fn report_cmd(config: &RunConfig) -> Result<AggregateReport, CliError> {
    let path = config.paths.output.join("report.json");
    let report = read_report(&path)?;
    emit_aggregate(&report, &config.paths.output)?;
    print!("{}", summary_text(&report));
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Plain-text table of the headline numbers per algorithm.
pub fn summary_text(report: &AggregateReport) -> String {
    let mut s = format!(
        "{:<8} {:>8} {:>10} {:>10} {:>12} {:>12} {:>12}\n",
        "algo", "episodes", "collisions", "jerk>thr", "ttc median", "jerk median", "speed median"
    );
    for a in &report.algorithms {
        s.push_str(&format!(
            "{:<8} {:>8} {:>10} {:>10} {:>12} {:>12} {:>12}\n",
            a.algorithm,
            a.episodes,
            a.collisions,
            a.jerk_violations,
            fmt_opt(a.ttc.map(|q| q.median)),
            fmt_opt(a.jerk.map(|q| q.median)),
            fmt_opt(a.speed.map(|q| q.median)),
        ));
    }
    s
}
