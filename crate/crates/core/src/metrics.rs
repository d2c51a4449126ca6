//! Evaluation indicators: collisions, mean TTC inside the safety band, mean
//! absolute jerk and mean speed, aggregated per algorithm into quartile
//! tables, TTC histograms and leader-speed breakdowns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::env::time_to_collision;
use crate::svg;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Upper (inclusive) edge of the TTC band; the lower edge is 0 (open).
    pub ttc_band_s: f64,
    pub ttc_bin_width_s: f64,
    pub jerk_threshold: f64,
    pub speed_bin_width_mps: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ttc_band_s: 2.7,
            ttc_bin_width_s: 0.3,
            jerk_threshold: 2.0,
            speed_bin_width_mps: 1.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ttc_band_s", self.ttc_band_s),
            ("ttc_bin_width_s", self.ttc_bin_width_s),
            ("jerk_threshold", self.jerk_threshold),
            ("speed_bin_width_mps", self.speed_bin_width_mps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("metrics.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn ttc_bins(&self) -> usize {
        ((self.ttc_band_s / self.ttc_bin_width_s).round() as usize).max(1)
    }
}

/// Elementwise time to collision of `(x_error, v_error)` pairs.
pub fn per_step_ttc(series: &[(f64, f64)]) -> Vec<Option<f64>> {
    series.iter().map(|&(x, v)| time_to_collision(x, v)).collect()
}

/// Mean over the steps whose TTC lies in `(0, band]`.
pub fn mean_ttc_in_band(ttc: &[Option<f64>], band: f64) -> Option<f64> {
    let (sum, n) = ttc
        .iter()
        .flatten()
        .filter(|&&t| t > 0.0 && t <= band)
        .fold((0.0, 0usize), |(s, n), t| (s + t, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean of `|a_k - a_{k-1}| / dt`.
pub fn mean_abs_jerk(accel: &[f64], dt: f64) -> Result<f64> {
    if accel.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "mean jerk needs at least 2 samples, got {}",
            accel.len()
        )));
    }
    let sum: f64 = accel.windows(2).map(|w| ((w[1] - w[0]) / dt).abs()).sum();
    Ok(sum / (accel.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear interpolation between closest ranks: the `p` quantile of sorted
/// `xs` sits at position `p (n - 1)`.
pub fn quantile_sorted(xs: &[f64], p: f64) -> f64 {
    let pos = p * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    Some(Quartiles {
        count: xs.len(),
        min: xs[0],
        q1: quantile_sorted(&xs, 0.25),
        median: quantile_sorted(&xs, 0.5),
        q3: quantile_sorted(&xs, 0.75),
        max: xs[xs.len() - 1],
    })
}

/// Counts of `values` in bins `[k w, (k+1) w)` over `(0, band]`; the last
/// bin is closed. Values outside the band are ignored.
pub fn ttc_histogram(values: &[f64], config: &MetricsConfig) -> Vec<u64> {
    let bins = config.ttc_bins();
    let mut counts = vec![0u64; bins];
    for &v in values {
        if v > 0.0 && v <= config.ttc_band_s {
            let k = ((v / config.ttc_bin_width_s).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts
}

/// Per-follower indicators for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerMetrics {
    /// 1-based vehicle id (the leader is 0).
    pub vehicle: usize,
    pub is_av: bool,
    pub collided: bool,
    pub mean_ttc_in_band: Option<f64>,
    pub mean_abs_jerk: f64,
    pub mean_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub algorithm: String,
    pub event_id: String,
    pub mix: String,
    pub steps: usize,
    pub collision: bool,
    pub leader_mean_speed: f64,
    pub followers: Vec<FollowerMetrics>,
}

impl EventMetrics {
    pub fn av_followers(&self) -> impl Iterator<Item = &FollowerMetrics> {
        self.followers.iter().filter(|f| f.is_av)
    }

    /// Mean of the AV followers' mean |jerk|.
    pub fn av_mean_abs_jerk(&self) -> Option<f64> {
        mean(self.av_followers().map(|f| f.mean_abs_jerk))
    }

    pub fn av_mean_speed(&self) -> Option<f64> {
        mean(self.av_followers().map(|f| f.mean_speed))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Raw per-step series of one follower.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FollowerSeries {
    pub x_error: Vec<f64>,
    pub v_error: Vec<f64>,
    pub accel: Vec<f64>,
    pub speed: Vec<f64>,
}

impl FollowerSeries {
    pub fn metrics(&self, vehicle: usize, is_av: bool, collided: bool, dt: f64, config: &MetricsConfig) -> FollowerMetrics {
        let pairs: Vec<(f64, f64)> = self.x_error.iter().copied().zip(self.v_error.iter().copied()).collect();
        FollowerMetrics {
            vehicle,
            is_av,
            collided,
            mean_ttc_in_band: mean_ttc_in_band(&per_step_ttc(&pairs), config.ttc_band_s),
            mean_abs_jerk: mean_abs_jerk(&self.accel, dt).unwrap_or(0.0),
            mean_speed: mean(self.speed.iter().copied()).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedBin {
    pub lo_mps: f64,
    pub hi_mps: f64,
    pub episodes: usize,
    pub collisions: usize,
    pub av_mean_speed: Option<f64>,
    pub av_mean_abs_jerk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub episodes: usize,
    /// Episodes that ended in a collision.
    pub collisions: usize,
    pub timesteps: usize,
    pub av_instances: usize,
    /// AV follower instances whose mean |jerk| exceeds the comfort threshold.
    pub jerk_violations: usize,
    pub ttc_histogram: Vec<u64>,
    pub ttc: Option<Quartiles>,
    pub jerk: Option<Quartiles>,
    pub speed: Option<Quartiles>,
    pub speed_bins: Vec<SpeedBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config: MetricsConfig,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl AggregateReport {
    pub fn summary(&self, algorithm: &str) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|s| s.algorithm == algorithm)
    }
}

fn summarize(algorithm: &str, events: &[&EventMetrics], config: &MetricsConfig) -> AlgorithmSummary {
    let avs: Vec<&FollowerMetrics> = events.iter().flat_map(|e| e.av_followers()).collect();
    let ttc: Vec<f64> = avs.iter().filter_map(|f| f.mean_ttc_in_band).collect();
    let jerk: Vec<f64> = avs.iter().map(|f| f.mean_abs_jerk).collect();
    let speed: Vec<f64> = avs.iter().map(|f| f.mean_speed).collect();

    let width = config.speed_bin_width_mps;
    let mut speed_bins: Vec<SpeedBin> = Vec::new();
    let mut keyed: Vec<(i64, &EventMetrics)> = events
        .iter()
        .map(|e| ((e.leader_mean_speed / width).floor() as i64, *e))
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    for chunk in keyed.chunk_by(|a, b| a.0 == b.0) {
        let k = chunk[0].0;
        let members = chunk.iter().map(|(_, e)| *e);
        speed_bins.push(SpeedBin {
            lo_mps: k as f64 * width,
            hi_mps: (k + 1) as f64 * width,
            episodes: chunk.len(),
            collisions: members.clone().filter(|e| e.collision).count(),
            av_mean_speed: mean(members.clone().flat_map(|e| e.av_followers().map(|f| f.mean_speed))),
            av_mean_abs_jerk: mean(members.flat_map(|e| e.av_followers().map(|f| f.mean_abs_jerk))),
        });
    }

    AlgorithmSummary {
        algorithm: algorithm.to_string(),
        episodes: events.len(),
        collisions: events.iter().filter(|e| e.collision).count(),
        timesteps: events.iter().map(|e| e.steps).sum(),
        av_instances: avs.len(),
        jerk_violations: jerk.iter().filter(|&&j| j > config.jerk_threshold).count(),
        ttc_histogram: ttc_histogram(&ttc, config),
        ttc: quartiles(&ttc),
        jerk: quartiles(&jerk),
        speed: quartiles(&speed),
        speed_bins,
    }
}

/// Group events by algorithm (in order of first appearance) and summarize.
pub fn aggregate(events: &[EventMetrics], config: &MetricsConfig) -> AggregateReport {
    let mut names: Vec<&str> = Vec::new();
    for e in events {
        if !names.contains(&e.algorithm.as_str()) {
            names.push(&e.algorithm);
        }
    }
    let algorithms = names
        .iter()
        .map(|name| {
            let group: Vec<&EventMetrics> = events.iter().filter(|e| e.algorithm == *name).collect();
            summarize(name, &group, config)
        })
        .collect();
    AggregateReport {
        config: config.clone(),
        algorithms,
    }
}

pub const TABLES_CSV_HEADER: &str = "algorithm,metric,min,q1,median,q3,max";
pub const EPISODES_CSV_HEADER: &str =
    "algorithm,event_id,mix,steps,collision,leader_mean_speed,av_mean_speed,av_mean_abs_jerk";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn tables_csv(report: &AggregateReport) -> String {
    let mut out = format!("{TABLES_CSV_HEADER}\n");
    for s in &report.algorithms {
        for (metric, q) in [("mean_ttc_s", s.ttc), ("mean_abs_jerk", s.jerk), ("mean_speed", s.speed)] {
            if let Some(q) = q {
                let _ = writeln!(out, "{},{},{},{},{},{},{}", s.algorithm, metric, q.min, q.q1, q.median, q.q3, q.max);
            }
        }
    }
    out
}

pub fn ttc_histogram_csv(report: &AggregateReport) -> String {
    let mut out = String::from("algorithm,bin_lo_s,bin_hi_s,count\n");
    let w = report.config.ttc_bin_width_s;
    for s in &report.algorithms {
        for (k, c) in s.ttc_histogram.iter().enumerate() {
            let hi = ((k + 1) as f64 * w).min(report.config.ttc_band_s);
            let _ = writeln!(out, "{},{},{},{}", s.algorithm, k as f64 * w, hi, c);
        }
    }
    out
}

pub fn collisions_csv(report: &AggregateReport) -> String {
    let mut out = String::from("algorithm,episodes,collisions,timesteps,jerk_violations\n");
    for s in &report.algorithms {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.algorithm, s.episodes, s.collisions, s.timesteps, s.jerk_violations
        );
    }
    out
}

pub fn speed_bins_csv(report: &AggregateReport) -> String {
    let mut out = String::from("algorithm,leader_speed_lo,leader_speed_hi,episodes,collisions,av_mean_speed,av_mean_abs_jerk\n");
    for s in &report.algorithms {
        for b in &s.speed_bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.algorithm,
                b.lo_mps,
                b.hi_mps,
                b.episodes,
                b.collisions,
                opt(b.av_mean_speed),
                opt(b.av_mean_abs_jerk)
            );
        }
    }
    out
}

pub fn episodes_csv(events: &[EventMetrics]) -> String {
    let mut out = format!("{EPISODES_CSV_HEADER}\n");
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.algorithm,
            e.event_id,
            e.mix,
            e.steps,
            e.collision,
            e.leader_mean_speed,
            opt(e.av_mean_speed()),
            opt(e.av_mean_abs_jerk())
        );
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// Write `report.json`, `tables.csv`, figure data CSVs, SVG plots and the
/// per-episode `episodes.csv`.
pub fn emit_report(report: &AggregateReport, events: &[EventMetrics], dir: &Path) -> Result<()> {
    emit_aggregate(report, dir)?;
    write(dir, "episodes.csv", &episodes_csv(events))
}

/// Every output of [`emit_report`] that derives from the aggregate alone.
pub fn emit_aggregate(report: &AggregateReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write(dir, "report.json", &json)?;
    write(dir, "tables.csv", &tables_csv(report))?;
    write(dir, "collisions.csv", &collisions_csv(report))?;
    write(dir, "ttc_histogram.csv", &ttc_histogram_csv(report))?;
    write(dir, "speed_bins.csv", &speed_bins_csv(report))?;

    let w = report.config.ttc_bin_width_s;
    let labels: Vec<String> = (0..report.config.ttc_bins())
        .map(|k| format!("{:.1}", k as f64 * w))
        .collect();
    let series: Vec<(String, Vec<f64>)> = report
        .algorithms
        .iter()
        .map(|s| (s.algorithm.clone(), s.ttc_histogram.iter().map(|&c| c as f64).collect()))
        .collect();
    write(
        dir,
        "ttc_histogram.svg",
        &svg::grouped_bars("Mean TTC in band (s)", &labels, &series),
    )?;
    for (name, title, pick) in [
        ("jerk_boxplot.svg", "Mean |jerk| (m/s^3)", (|s: &AlgorithmSummary| s.jerk) as fn(&AlgorithmSummary) -> Option<Quartiles>),
        ("speed_boxplot.svg", "Mean speed (m/s)", |s: &AlgorithmSummary| s.speed),
        ("ttc_boxplot.svg", "Mean TTC in band (s)", |s: &AlgorithmSummary| s.ttc),
    ] {
        let boxes: Vec<(String, Quartiles)> = report
            .algorithms
            .iter()
            .filter_map(|s| pick(s).map(|q| (s.algorithm.clone(), q)))
            .collect();
        write(dir, name, &svg::boxplot(title, &boxes))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<AggregateReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
