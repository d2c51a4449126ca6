//! Trajectory ingestion: CSV parsing, car-following event extraction,
//! resampling onto the simulation grid and train/test splitting.
//!
//! Input rows follow `vehicle_id,frame,time_s,position_m,speed_mps,lane,length_m`.
//! Each vehicle that stays in one admissible lane for at least the minimum
//! duration becomes a leader profile sampled every `dt_s` seconds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::seeded_rng;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 7] = [
    "vehicle_id",
    "frame",
    "time_s",
    "position_m",
    "speed_mps",
    "lane",
    "length_m",
];

/// Lanes kept by default; the ramp-influenced lanes 5 and up are dropped.
pub const DEFAULT_LANES: [i64; 4] = [1, 2, 3, 4];
pub const DEFAULT_MIN_DURATION_S: f64 = 20.0;
pub const DEFAULT_DT_S: f64 = 0.1;

const GRID_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub vehicle_id: i64,
    pub frame: i64,
    pub time_s: f64,
    pub position_m: f64,
    pub speed_mps: f64,
    pub lane: i64,
    pub length_m: f64,
}

/// Leader motion sampled on a fixed time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderProfile {
    pub event_id: String,
    pub dt_s: f64,
    pub t0_s: f64,
    pub positions_m: Vec<f64>,
    pub speeds_mps: Vec<f64>,
}

impl LeaderProfile {
    pub fn len(&self) -> usize {
        self.positions_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_m.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.dt_s
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0_s + k as f64 * self.dt_s
    }

    /// Leader acceleration implied by the speed samples (backward difference,
    /// zero at the first sample).
    pub fn accel_at(&self, k: usize) -> f64 {
        if k == 0 || k >= self.len() {
            0.0
        } else {
            (self.speeds_mps[k] - self.speeds_mps[k - 1]) / self.dt_s
        }
    }

    pub fn mean_speed(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.speeds_mps.iter().sum::<f64>() / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub lanes: BTreeSet<i64>,
    pub min_duration_s: f64,
    pub dt_s: f64,
    /// Symmetric 5-sample moving average on the resampled series.
    pub smooth: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            lanes: DEFAULT_LANES.into_iter().collect(),
            min_duration_s: DEFAULT_MIN_DURATION_S,
            dt_s: DEFAULT_DT_S,
            smooth: false,
        }
    }
}

pub fn parse_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory_csv(file)
}

/// Parse trajectory rows from any reader. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn read_trajectory_csv<R: Read>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Schema {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut out = Vec::new();
    let mut last_time: HashMap<i64, f64> = HashMap::new();
    for result in rdr.records() {
        let raw = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            Error::MalformedRow {
                row,
                message: e.to_string(),
            }
        })?;
        let row = raw.position().map_or(0, |p| p.line() as usize);
        let rec: TrajectoryRecord = raw.deserialize(Some(&header)).map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        validate_record(&rec, row)?;
        if let Some(&prev) = last_time.get(&rec.vehicle_id) {
            if rec.time_s <= prev {
                return Err(Error::NonMonotoneTime {
                    vehicle_id: rec.vehicle_id,
                    row,
                });
            }
        }
        last_time.insert(rec.vehicle_id, rec.time_s);
        out.push(rec);
    }
    Ok(out)
}

fn validate_record(rec: &TrajectoryRecord, row: usize) -> Result<()> {
    let bad = |message: &str| Error::MalformedRow {
        row,
        message: message.to_string(),
    };
    if !(rec.time_s.is_finite() && rec.position_m.is_finite() && rec.speed_mps.is_finite()) {
        return Err(bad("non-finite value"));
    }
    if rec.speed_mps < 0.0 {
        return Err(bad("negative speed"));
    }
    if !(rec.length_m > 0.0 && rec.length_m.is_finite()) {
        return Err(bad("vehicle length must be positive"));
    }
    Ok(())
}

fn group_by_vehicle(records: &[TrajectoryRecord]) -> BTreeMap<i64, Vec<TrajectoryRecord>> {
    let mut groups: BTreeMap<i64, Vec<TrajectoryRecord>> = BTreeMap::new();
    for rec in records {
        groups.entry(rec.vehicle_id).or_default().push(*rec);
    }
    for recs in groups.values_mut() {
        recs.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    }
    groups
}

/// Keep the records of vehicles that stay in one admissible lane for at
/// least `min_duration_s`. Applying this twice gives the same result.
pub fn filter_follow_records(
    records: &[TrajectoryRecord],
    lanes: &BTreeSet<i64>,
    min_duration_s: f64,
) -> Vec<TrajectoryRecord> {
    let keep: BTreeSet<i64> = group_by_vehicle(records)
        .into_iter()
        .filter(|(_, recs)| is_follow_event(recs, lanes, min_duration_s))
        .map(|(id, _)| id)
        .collect();
    records
        .iter()
        .filter(|r| keep.contains(&r.vehicle_id))
        .copied()
        .collect()
}

fn is_follow_event(recs: &[TrajectoryRecord], lanes: &BTreeSet<i64>, min_duration_s: f64) -> bool {
    let (Some(first), Some(last)) = (recs.first(), recs.last()) else {
        return false;
    };
    lanes.contains(&first.lane)
        && recs.iter().all(|r| r.lane == first.lane)
        && last.time_s - first.time_s >= min_duration_s - GRID_EPS
}

pub fn extract_follow_events(records: &[TrajectoryRecord], opts: &ExtractOptions) -> Vec<LeaderProfile> {
    let filtered = filter_follow_records(records, &opts.lanes, opts.min_duration_s);
    group_by_vehicle(&filtered)
        .into_iter()
        .filter_map(|(id, recs)| {
            let mut profile = resample(&format!("v{id}"), &recs, opts.dt_s)?;
            if opts.smooth {
                profile.positions_m = moving_average(&profile.positions_m, 2);
                profile.speeds_mps = moving_average(&profile.speeds_mps, 2);
            }
            if profile.duration_s() < opts.min_duration_s - GRID_EPS {
                return None;
            }
            if profile.positions_m.windows(2).any(|w| w[1] < w[0]) {
                log::warn!("dropping event {}: positions decrease", profile.event_id);
                return None;
            }
            Some(profile)
        })
        .collect()
}

/// Linear interpolation of one vehicle's records onto `t0 + k*dt`.
/// When the source span is a whole number of steps the last grid sample
/// coincides with the last record.
fn resample(event_id: &str, recs: &[TrajectoryRecord], dt: f64) -> Option<LeaderProfile> {
    let first = recs.first()?;
    let last = recs.last()?;
    let t0 = first.time_s;
    let span = last.time_s - t0;
    let steps = (span / dt + GRID_EPS).floor() as usize;

    let mut positions = Vec::with_capacity(steps + 1);
    let mut speeds = Vec::with_capacity(steps + 1);
    let mut j = 0;
    for k in 0..=steps {
        let t = t0 + k as f64 * dt;
        if k == steps && (last.time_s - t).abs() <= GRID_EPS {
            positions.push(last.position_m);
            speeds.push(last.speed_mps);
            break;
        }
        while j + 1 < recs.len() && recs[j + 1].time_s <= t {
            j += 1;
        }
        if j + 1 >= recs.len() {
            positions.push(recs[j].position_m);
            speeds.push(recs[j].speed_mps);
            continue;
        }
        let (a, b) = (&recs[j], &recs[j + 1]);
        let w = (t - a.time_s) / (b.time_s - a.time_s);
        positions.push(a.position_m + w * (b.position_m - a.position_m));
        speeds.push(a.speed_mps + w * (b.speed_mps - a.speed_mps));
    }
    Some(LeaderProfile {
        event_id: event_id.to_string(),
        dt_s: dt,
        t0_s: t0,
        positions_m: positions,
        speeds_mps: speeds,
    })
}

/// Centered moving average whose half-width shrinks near the ends, so the
/// first and last samples are left untouched.
pub fn moving_average(xs: &[f64], half_width: usize) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let h = half_width.min(i).min(n - 1 - i);
            let window = &xs[i - h..=i + h];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

/// Uniform random split; the train side gets `round(n * train_fraction)`
/// events, kept in [1, n-1].
pub fn split_train_test<T: Clone>(events: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if events.len() < 2 {
        return Err(Error::TooFewEvents {
            needed: 2,
            got: events.len(),
        });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = events.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let (train_idx, test_idx) = idx.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        train_idx.iter().map(|&i| events[i].clone()).collect(),
        test_idx.iter().map(|&i| events[i].clone()).collect(),
    ))
}

pub fn write_profiles_json(path: impl AsRef<Path>, profiles: &[LeaderProfile]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), profiles)?;
    Ok(())
}

pub fn read_profiles_json(path: impl AsRef<Path>) -> Result<Vec<LeaderProfile>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Constant,
    Sinusoidal,
    EmergencyBrake,
    StopAndGo,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [
        SyntheticKind::Constant,
        SyntheticKind::Sinusoidal,
        SyntheticKind::EmergencyBrake,
        SyntheticKind::StopAndGo,
    ];

    fn tag(self) -> &'static str {
        match self {
            SyntheticKind::Constant => "const",
            SyntheticKind::Sinusoidal => "sine",
            SyntheticKind::EmergencyBrake => "brake",
            SyntheticKind::StopAndGo => "stopgo",
        }
    }
}

/// Speed follows a piecewise-constant acceleration plan: each segment is
/// `(duration_s, accel)`. Speeds are floored at zero.
fn speeds_from_plan(v0: f64, plan: &[(f64, f64)], steps: usize, dt: f64) -> Vec<f64> {
    let mut speeds = Vec::with_capacity(steps + 1);
    let mut v = v0;
    speeds.push(v);
    let mut seg = 0;
    let mut seg_end = plan.first().map_or(f64::INFINITY, |s| s.0);
    for k in 1..=steps {
        let t = (k - 1) as f64 * dt;
        while t >= seg_end - 1e-9 && seg + 1 < plan.len() {
            seg += 1;
            seg_end += plan[seg].0;
        }
        let a = if t < seg_end - 1e-9 { plan.get(seg).map_or(0.0, |s| s.1) } else { 0.0 };
        v = (v + a * dt).max(0.0);
        speeds.push(v);
    }
    speeds
}

fn integrate_positions(speeds: &[f64], dt: f64) -> Vec<f64> {
    let mut x = 0.0;
    let mut out = Vec::with_capacity(speeds.len());
    out.push(x);
    for w in speeds.windows(2) {
        x += 0.5 * (w[0] + w[1]) * dt;
        out.push(x);
    }
    out
}

pub fn synthetic_profile<R: Rng + ?Sized>(
    kind: SyntheticKind,
    event_id: String,
    duration_s: f64,
    dt: f64,
    rng: &mut R,
) -> LeaderProfile {
    let steps = (duration_s / dt).round() as usize;
    let speeds = match kind {
        SyntheticKind::Constant => vec![rng.random_range(8.0..28.0); steps + 1],
        SyntheticKind::Sinusoidal => {
            let mean = rng.random_range(12.0..24.0);
            let amp = rng.random_range(2.0..4.0);
            let period = rng.random_range(12.0..25.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (0..=steps)
                .map(|k| {
                    let t = k as f64 * dt;
                    (mean + amp * (std::f64::consts::TAU * t / period + phase).sin()
                        - amp * phase.sin())
                    .max(0.0)
                })
                .collect()
        }
        SyntheticKind::EmergencyBrake => {
            let cruise = rng.random_range(15.0..28.0);
            let brake_at = rng.random_range(5.0..10.0);
            let decel = rng.random_range(1.5..2.5);
            let low = rng.random_range(0.0..8.0);
            let brake_time = (cruise - low) / decel;
            let hold = rng.random_range(2.0..5.0);
            let plan = [(brake_at, 0.0), (brake_time, -decel), (hold, 0.0), (f64::INFINITY, 1.2)];
            let mut v = speeds_from_plan(cruise, &plan, steps, dt);
            for s in &mut v {
                *s = s.min(cruise);
            }
            v
        }
        SyntheticKind::StopAndGo => {
            let high = rng.random_range(8.0..15.0);
            let accel = rng.random_range(1.0..2.0);
            let mut plan = Vec::new();
            let mut t = 0.0;
            while t < duration_s {
                let cruise = rng.random_range(3.0..6.0);
                let dwell = rng.random_range(1.0..3.0);
                let ramp = high / accel;
                plan.extend([(cruise, 0.0), (ramp, -accel), (dwell, 0.0), (ramp, accel)]);
                t += cruise + dwell + 2.0 * ramp;
            }
            let mut v = speeds_from_plan(high, &plan, steps, dt);
            for s in &mut v {
                *s = s.min(high);
            }
            v
        }
    };
    LeaderProfile {
        event_id,
        dt_s: dt,
        t0_s: 0.0,
        positions_m: integrate_positions(&speeds, dt),
        speeds_mps: speeds,
    }
}

/// `count` profiles cycling through every [`SyntheticKind`], with durations
/// drawn from `[25, 40)` s.
pub fn synthetic_profiles(count: usize, seed: u64, dt: f64, prefix: &str) -> Vec<LeaderProfile> {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|i| {
            let kind = SyntheticKind::ALL[i % SyntheticKind::ALL.len()];
            let duration = rng.random_range(25.0..40.0_f64).round();
            synthetic_profile(kind, format!("{prefix}-{i:03}-{}", kind.tag()), duration, dt, &mut rng)
        })
        .collect()
}
