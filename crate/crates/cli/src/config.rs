//! Run configuration: a JSON file whose every key is optional, overridden by
//! command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use akhcfs_core::env::EnvParams;
use akhcfs_core::experiment::{Algorithm, ExperimentParams, TrainConfig};
use akhcfs_core::fusion::FusionConfig;
use akhcfs_core::mcts::MctsConfig;
use akhcfs_core::metrics::MetricsConfig;
use akhcfs_core::td3::Td3Hyper;
use akhcfs_core::traj_data::{ExtractOptions, DEFAULT_LANES, DEFAULT_MIN_DURATION_S};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Committed JSON schema of [`RunConfig`].
pub const SCHEMA_FILE: &str = "config.schema.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Trajectory CSV (`vehicle_id,frame,time_s,position_m,speed_mps,lane,length_m`).
    /// Synthetic leader profiles are used when absent.
    pub data: Option<PathBuf>,
    /// Pre-extracted train profiles (JSON written by `ingest`); overrides `data`.
    pub train_profiles: Option<PathBuf>,
    /// Pre-extracted test profiles (JSON written by `ingest`); overrides `data`.
    pub test_profiles: Option<PathBuf>,
    /// Directory for every output file.
    pub output: PathBuf,
    /// Checkpoint written by `train` and read by `evaluate` and `replay`;
    /// `<output>/checkpoint.json` when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: None,
            train_profiles: None,
            test_profiles: None,
            output: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Ignore `paths.data` and generate leader profiles.
    pub synthetic: bool,
    /// Synthetic train profile count.
    pub synthetic_train: usize,
    /// Synthetic test profile count.
    pub synthetic_test: usize,
    /// Share of extracted events that go to the train set.
    pub train_fraction: f64,
    /// Lanes kept when extracting follow events.
    pub lanes: BTreeSet<i64>,
    pub min_duration_s: f64,
    /// 5-sample moving average on resampled profiles.
    pub smoothing: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: false,
            synthetic_train: 20,
            synthetic_test: 10,
            train_fraction: 0.7,
            lanes: DEFAULT_LANES.into_iter().collect(),
            min_duration_s: DEFAULT_MIN_DURATION_S,
            smoothing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Strategies compared by `evaluate`.
    pub algorithms: Vec<Algorithm>,
    /// Restrict `evaluate` to one mix string such as `HAAA`; all mixes with
    /// at least one AV when absent. Also the mix used by `replay`.
    pub mix: Option<String>,
    /// Event replayed by `replay`.
    pub event: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            mix: None,
            event: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every random stream derives from it.
    pub seed: u64,
    /// Strategy wrapping the TD3 agent in `train` and `replay`.
    pub algorithm: Algorithm,
    pub paths: Paths,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Followers behind the leader.
    pub followers: usize,
    pub env: EnvParams,
    pub td3: Td3Hyper,
    pub fusion: FusionConfig,
    pub mcts: MctsConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = ExperimentParams::default();
        Self {
            seed: 0,
            algorithm: Algorithm::Akhcfs,
            paths: Paths::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            followers: params.followers,
            env: params.env,
            td3: params.td3,
            fusion: params.fusion,
            mcts: params.mcts,
            metrics: params.metrics,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn params(&self) -> ExperimentParams {
        ExperimentParams {
            followers: self.followers,
            env: self.env.clone(),
            td3: self.td3.clone(),
            fusion: self.fusion.clone(),
            mcts: self.mcts.clone(),
            metrics: self.metrics.clone(),
        }
    }

    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            lanes: self.data.lanes.clone(),
            min_duration_s: self.data.min_duration_s,
            dt_s: self.env.dt_s,
            smooth: self.data.smoothing,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.output.join("checkpoint.json"))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.params().validate()?;
        if self.eval.algorithms.is_empty() {
            return Err(CliError::Usage("eval.algorithms must not be empty".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::Usage(format!(
                "data.train_fraction must lie in (0, 1), got {}",
                self.data.train_fraction
            )));
        }
        if self.data.synthetic_train == 0 || self.data.synthetic_test == 0 {
            return Err(CliError::Usage("data.synthetic_train and data.synthetic_test must be positive".into()));
        }
        Ok(())
    }
}

/// Pretty JSON schema of [`RunConfig`], as committed in [`SCHEMA_FILE`].
pub fn schema_json() -> String {
    let schema = schemars::schema_for!(RunConfig);
    let mut s = serde_json::to_string_pretty(&schema).expect("schema serializes");
    s.push('\n');
    s
}

/// Every leaf key of the default configuration as `(dotted.key, default)`.
pub fn default_keys() -> Vec<(String, String)> {
    let value = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut out = Vec::new();
    flatten(&value, String::new(), &mut out);
    out
}

fn flatten(value: &Value, prefix: String, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(v, key, out);
            }
        }
        other => out.push((prefix, other.to_string())),
    }
}

/// Text appended to `--help`.
pub fn keys_help() -> String {
    let keys = default_keys();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from(
        "Configuration keys for --config (JSON, every key optional) with defaults.\n\
         Flags override the file. Log verbosity comes from AKHCFS_LOG.\n\n",
    );
    for (k, v) in keys {
        s.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sead": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mcts": {"iteration": 5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"env": {"reward": {"vmax": 5}}}"#).is_err());
    }

    #[test]
    fn partial_files_keep_other_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 9, "mcts": {"iterations": 50}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.mcts.iterations, 50);
        assert_eq!(c.mcts.exploration_c, MctsConfig::default().exploration_c);
        assert_eq!(c.followers, 4);
    }

    #[test]
    fn key_listing_covers_nested_blocks() {
        let keys = default_keys();
        let names: Vec<&str> = keys.iter().map(|(k, _)| k.as_str()).collect();
        for k in ["seed", "mcts.iterations", "fusion.kf.r_measure", "env.reward.v_max", "td3.hidden", "paths.output"] {
            assert!(names.contains(&k), "missing {k}");
        }
        assert!(keys_help().contains("mcts.exploration_c"));
    }
}
