//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --test acceptance`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use akhcfs_cli::commands::{evaluate_cmd, train_cmd};
use akhcfs_cli::config::RunConfig;
use akhcfs_core::controllers::{cacc_accel, idm_accel, CaccParams, CaccState, IdmParams};
use akhcfs_core::dynamics::{step_vehicle, Actuator, ControllerTag, Follower, PlatoonState, VehicleState};
use akhcfs_core::env::{
    enumerate_mixes, observe, reward_comfort, reward_efficiency, reward_safety, reward_stability, time_to_collision,
    total_reward,
};
use akhcfs_core::experiment::{evaluate, Algorithm, ExperimentParams};
use akhcfs_core::fusion::{akhcfs_combine, blend, crossover_step, kalman_gain, kf_iterate, KfConstants, RolloutResult};
use akhcfs_core::mcts::{search, MctsConfig, SimOutcome};
use akhcfs_core::metrics::EventMetrics;
use akhcfs_core::nn::Mlp;
use akhcfs_core::rng::seeded_rng;
use akhcfs_core::td3::{actor_loss, critic_input, critic_loss, Td3Agent, Td3Hyper, OBS_DIM};
use akhcfs_core::traj_data::{synthetic_profiles, LeaderProfile};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol})"))
}

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact rational P_N for Q = R = 1/100, A_1 = 1.
fn exact_p_n(n: usize) -> BigRational {
    let q = ratio(1, 100);
    let r = ratio(1, 100);
    let one = ratio(1, 1);
    let mut a = one.clone();
    for _ in 1..n {
        let p = &a + &q;
        let k = &p / (&p + &r);
        a = (&one - k) * p;
    }
    a + q
}

fn criterion_1() -> Check {
    let kf = KfConstants::default();
    let trace = kf_iterate(2, kf.q_measure, kf.r_measure, kf.a1).map_err(|e| e.to_string())?;
    close(trace.p[0], 1.01, 1e-12, "P1")?;
    close(trace.k[0], 1.01 / 1.02, 1e-12, "K1")?;
    close(trace.k[0], 0.990196, 1e-6, "K1 rounded")?;
    close(trace.p_n, (1.0 - 1.01 / 1.02) * 1.01 + 0.01, 1e-12, "P2")?;
    // The exact P2 is 203/10200 = 0.019901960784...
    close(trace.p_n, 203.0 / 10200.0, 1e-12, "P2 exact")?;
    let mut worst = 0.0f64;
    for n in 1..=20 {
        let got = kf_iterate(n, kf.q_measure, kf.r_measure, kf.a1).map_err(|e| e.to_string())?.p_n;
        let want = exact_p_n(n).to_f64().ok_or("rational to f64")?;
        worst = worst.max((got - want).abs());
        close(got, want, 1e-12, &format!("P_{n}"))?;
    }
    Ok(format!("P2 = {:.10}, max |err| vs exact rationals over N=1..20: {worst:.1e}", trace.p_n))
}

fn criterion_2() -> Check {
    let mut rng = seeded_rng(2);
    for _ in 0..1000 {
        let p: f64 = 10f64.powf(rng.random_range(-4.0..1.0));
        let r: f64 = 10f64.powf(rng.random_range(-4.0..1.0));
        let grow: f64 = rng.random_range(1.001..3.0);
        let h = kalman_gain(p, r, Some(1)).map_err(|e| e.to_string())?;
        ensure(h > 0.0 && h < 1.0, || format!("H({p}, {r}) = {h} outside (0, 1)"))?;
        let hp = kalman_gain(p * grow, r, Some(1)).map_err(|e| e.to_string())?;
        let hr = kalman_gain(p, r * grow, Some(1)).map_err(|e| e.to_string())?;
        ensure(hp > h, || format!("H not increasing in P_N at ({p}, {r})"))?;
        ensure(hr < h, || format!("H not decreasing in R at ({p}, {r})"))?;
        ensure(kalman_gain(p, r, None).map_err(|e| e.to_string())? == 0.0, || "no-crossover gain".into())?;
    }
    // Rigged reward sequences: TD3 ahead at every prefix never crosses.
    let kf = KfConstants::default();
    let never = [
        (vec![0.0; 10], vec![-0.1; 10]),
        (vec![-0.1, -0.2, -0.3], vec![-0.5, -0.5, -0.5]),
        (vec![-1.0; 10], vec![-1.0; 10]),
    ];
    for (td3, cacc) in never {
        ensure(crossover_step(&td3, &cacc, 0.99).is_none(), || "unexpected crossover".into())?;
        let rollout = RolloutResult::from_rewards(td3, cacc, 0.99);
        let d = akhcfs_combine(&rollout, 1.25, -2.0, &kf, 3.0, |_, _| Err(akhcfs_core::Error::NonFinite("unused")))
            .map_err(|e| e.to_string())?;
        ensure(d.h == 0.0 && d.action == 1.25, || format!("H = {} action = {}", d.h, d.action))?;
    }
    let crossing = RolloutResult::from_rewards(vec![0.0, -1.0, -1.0], vec![-0.2, 0.0, 0.0], 0.99);
    ensure(crossing.crossover == Some(2), || format!("crossover {:?}", crossing.crossover))?;
    let d = akhcfs_combine(&crossing, 1.0, -1.0, &kf, 3.0, |_, _| Ok(0.01)).map_err(|e| e.to_string())?;
    ensure(d.h > 0.0 && d.h < 1.0, || format!("crossing H = {}", d.h))?;
    Ok("1000 draws in (0,1), monotone; rigged never-crossing rollouts give H = 0".into())
}

fn criterion_3() -> Check {
    let mut rng = seeded_rng(3);
    for _ in 0..1000 {
        let a_td3: f64 = rng.random_range(-10.0..10.0);
        let a_cacc: f64 = rng.random_range(-10.0..10.0);
        let at0 = blend(a_td3, a_cacc, 0.0).map_err(|e| e.to_string())?;
        let at1 = blend(a_td3, a_cacc, 1.0).map_err(|e| e.to_string())?;
        ensure(at0.to_bits() == a_td3.to_bits(), || format!("H=0: {at0} vs {a_td3}"))?;
        ensure(at1.to_bits() == a_cacc.to_bits(), || format!("H=1: {at1} vs {a_cacc}"))?;
    }
    Ok("1000 pairs bitwise equal at both endpoints".into())
}

/// Elementwise relative error with the denominator floored at `floor`.
/// Largest elementwise relative error with the analytic and numeric values
/// of the offending element.
fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, f64, f64) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| ((a - n).abs() / a.abs().max(n.abs()).max(floor), a, n))
        .fold((0.0, 0.0, 0.0), |best, e| if e.0 > best.0 { e } else { best })
}

fn numeric_gradient(net: &Mlp, h: f64, loss: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut params = base.clone();
    (0..base.len())
        .map(|i| {
            params[i] = base[i] + h;
            probe.set_flat_params(&params);
            let up = loss(&probe);
            params[i] = base[i] - h;
            probe.set_flat_params(&params);
            let down = loss(&probe);
            params[i] = base[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
// A central difference of a loss of size L carries roundoff near
// f64::EPSILON * L / h, about 2e-10 for these losses, so relative errors
// are only resolvable for gradients well above 1e-6.
const GRAD_FLOOR: f64 = 1e-5;

fn criterion_4() -> Check {
    let mut rng = seeded_rng(4);
    let mut worst = 0.0f64;
    for draw in 0..20u64 {
        let agent = Td3Agent::new(Td3Hyper::default(), 3.0, 1000 + draw);
        let states: Vec<[f64; OBS_DIM]> = (0..8)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let inputs: Vec<[f64; OBS_DIM + 1]> = states
            .iter()
            .map(|s| critic_input(s, rng.random_range(-3.0..3.0), 3.0))
            .collect();
        let targets: Vec<f64> = (0..states.len()).map(|_| rng.random_range(-5.0..0.0)).collect();

        for (name, critic) in [("critic1", &agent.critic1), ("critic2", &agent.critic2)] {
            let analytic = critic_loss(critic, &inputs, &targets).grads.flat();
            let numeric = numeric_gradient(critic, GRAD_H, |c| critic_loss(c, &inputs, &targets).loss);
            let (err, a, n) = max_rel_error(&analytic, &numeric, GRAD_FLOOR);
            worst = worst.max(err);
            ensure(err < GRAD_TOL, || {
                format!("draw {draw} {name}: relative error {err:.2e} (analytic {a:.6e}, numeric {n:.6e})")
            })?;
        }
        let analytic = actor_loss(&agent.actor, &agent.critic1, &states).1.flat();
        let numeric = numeric_gradient(&agent.actor, GRAD_H, |a| actor_loss(a, &agent.critic1, &states).0);
        let (err, a, n) = max_rel_error(&analytic, &numeric, GRAD_FLOOR);
        worst = worst.max(err);
        ensure(err < GRAD_TOL, || {
            format!("draw {draw} actor: relative error {err:.2e} (analytic {a:.6e}, numeric {n:.6e})")
        })?;
    }
    Ok(format!("20 draws, actor + both critics, max relative error {worst:.1e}"))
}

fn cacc_bumper_gap_after(v: f64, initial_clear_gap: f64, seconds: f64) -> f64 {
    let params = CaccParams::default();
    let actuator = Actuator::default();
    let dt = params.dt;
    let length = 5.0;
    let mut leader = VehicleState::new(500.0, v, length);
    let mut ego = VehicleState::new(500.0 - length - initial_clear_gap, v, length);
    let mut state = CaccState::initial(initial_clear_gap, v, &params);
    for _ in 0..(seconds / dt).round() as usize {
        let (a, next) = cacc_accel(leader.position_m, ego.position_m, length, ego.speed_mps, &state, &params)
            .expect("finite CACC inputs");
        state = next;
        ego = step_vehicle(&ego, a, &actuator, dt);
        leader = step_vehicle(&leader, 0.0, &actuator, dt);
    }
    leader.position_m - ego.position_m
}

fn criterion_5() -> Check {
    let mut worst_gap = 0.0f64;
    for v in [5.0, 15.0, 25.0] {
        let target = 5.0 + 0.6 * v;
        for start in [0.5, 1.5, 2.5] {
            let gap = cacc_bumper_gap_after(v, start * 0.6 * v, 60.0);
            let rel = (gap - target).abs() / target;
            worst_gap = worst_gap.max(rel);
            ensure(rel <= 0.02, || format!("CACC v={v} start={start}: gap {gap} vs {target}"))?;
        }
    }
    let p = IdmParams::default();
    let mut worst_a = 0.0f64;
    for v in [5.0, 15.0, 30.0] {
        let s_e = (p.d0 + p.t_headway * v) / (1.0 - (v / p.v_desire).powi(4)).sqrt();
        let a = idm_accel(v, 0.0, s_e, &p).map_err(|e| e.to_string())?;
        worst_a = worst_a.max(a.abs());
        ensure(a.abs() < 1e-9, || format!("IDM v={v}: accel {a} at gap {s_e}"))?;
    }
    Ok(format!(
        "CACC worst relative gap error {worst_gap:.1e} at 60 s; IDM worst |a| {worst_a:.1e}"
    ))
}

fn criterion_6() -> Check {
    let config = MctsConfig::default();
    ensure(
        config.iterations == 1000 && config.exploration_c == 7.0 && config.c_decay == 0.995 && config.epsilon == 0.1,
        || "defaults differ from 1000 / 7 / 0.995 / 0.1".into(),
    )?;
    let candidates = config.candidates.clone();
    let mut hits = 0;
    for run in 0..100u64 {
        let optimal = candidates[run as usize % candidates.len()];
        let mut sim = |path: &[f64]| {
            Ok(SimOutcome {
                value: if path[0] == optimal { 0.0 } else { -1.0 },
                collided_at: None,
            })
        };
        let result = search(&mut sim, &config, 10, &mut seeded_rng(run)).map_err(|e| e.to_string())?;
        if result.r == optimal {
            hits += 1;
        }
    }
    ensure(hits >= 95, || format!("optimal R recovered in {hits}/100 runs"))?;
    Ok(format!("optimal R recovered in {hits}/100 runs"))
}

fn criterion_7() -> Check {
    let tol = 1e-12;
    let platoon = PlatoonState {
        leader: VehicleState::new(100.0, 12.0, 5.0),
        followers: vec![
            Follower {
                state: VehicleState::new(80.0, 10.0, 5.0),
                tag: ControllerTag::HvIdm,
            },
            Follower {
                state: VehicleState::new(60.0, 11.0, 5.0),
                tag: ControllerTag::AvAkHcfs,
            },
        ],
        sim_time_s: 0.0,
        step_index: 0,
    };
    let obs = observe(&platoon, 1);
    close(obs.x_error, 15.0, tol, "x_error")?;
    close(obs.v_error, -1.0, tol, "v_error")?;
    close(obs.x_error_0, 30.0, tol, "x_error_0")?;
    close(obs.v_error_0, 1.0, tol, "v_error_0")?;

    close(reward_stability(0.0, 40.0), 0.0, tol, "stability at 0")?;
    close(reward_stability(40.0, 40.0), -1.0, tol, "stability at v_max")?;
    close(reward_stability(-8.0, 40.0), -0.2, tol, "stability -8")?;

    let (c, j) = reward_comfort(1.5, 1.5, 3.0, 0.1);
    close(c, 0.0, tol, "comfort equal")?;
    close(j, 0.0, tol, "jerk equal")?;
    let (c, j) = reward_comfort(3.0, -3.0, 3.0, 0.1);
    close(j, 60.0, tol, "max jerk")?;
    close(c, -1.0, tol, "max-jerk comfort")?;
    let (c, j) = reward_comfort(1.0, 0.0, 3.0, 0.1);
    close(j, 10.0, tol, "jerk 10")?;
    close(c, -1.0 / 6.0, tol, "comfort -1/6")?;

    close(time_to_collision(20.0, -5.0).ok_or("ttc none")?, 4.0, tol, "ttc 4")?;
    ensure(time_to_collision(20.0, 3.0).is_none(), || "opening ttc".into())?;
    close(time_to_collision(0.0, -1.0).ok_or("ttc none")?, 0.0, tol, "ttc contact")?;

    close(reward_safety(Some(2.7), 2.7, -5.0), 0.0, tol, "safety at 2.7")?;
    close(reward_safety(Some(0.27), 2.7, -5.0), 0.1f64.ln(), tol, "safety 0.27")?;
    close(reward_safety(Some(0.27), 2.7, -5.0), -2.3026, 1e-4, "safety 0.27 rounded")?;
    close(reward_safety(None, 2.7, -5.0), 0.0, tol, "safety none")?;

    close(reward_efficiency(10.0, 6.0, 0.6, 100.0), 0.0, tol, "efficiency on target")?;
    close(reward_efficiency(10.0, 16.0, 0.6, 100.0), -0.1, tol, "efficiency -0.1")?;
    close(reward_efficiency(0.0, 0.0, 0.6, 100.0), 0.0, tol, "efficiency standstill")?;

    close(total_reward(0.0, 0.0, 0.0, 0.0, false, -10.0).total, 0.0, tol, "total zero")?;
    let sum = total_reward(-0.2, -1.0 / 6.0, 0.1f64.ln(), -0.1, false, -10.0).total;
    close(sum, -0.2 - 1.0 / 6.0 + 0.1f64.ln() - 0.1, tol, "total sum")?;
    close(sum, -2.7693, 1e-4, "total rounded")?;
    close(total_reward(0.0, 0.0, 0.0, 0.0, true, -10.0).total, -10.0, tol, "collision total")?;
    Ok("observation, four reward terms, TTC and totals match the hand values".into())
}

fn zero_policy() -> Mlp {
    Mlp::zeros(
        &[OBS_DIM, 4, 1],
        akhcfs_core::nn::Activation::Tanh,
        akhcfs_core::nn::Activation::Tanh,
        3.0,
    )
}

fn criterion_8() -> Check {
    let mixes = enumerate_mixes(4);
    ensure(mixes.len() == 15, || format!("{} mixes", mixes.len()))?;
    ensure(mixes.iter().all(|m| m.contains('A')), || "a mix without AV".into())?;
    ensure(mixes.len() * 456 == 6840, || "456 x 15".into())?;
    let params = ExperimentParams {
        mcts: MctsConfig {
            iterations: 20,
            ..MctsConfig::default()
        },
        ..ExperimentParams::default()
    };
    let events: Vec<Arc<LeaderProfile>> = synthetic_profiles(2, 8, 0.1, "c8").into_iter().map(Arc::new).collect();
    let results = evaluate(&events, &Algorithm::ALL, &params.mixes(), &zero_policy(), &params, 8, 1)
        .map_err(|e| e.to_string())?;
    for alg in Algorithm::ALL {
        for e in &events {
            let per: Vec<&EventMetrics> = results
                .iter()
                .filter(|m| m.algorithm == alg.name() && m.event_id == e.event_id)
                .collect();
            ensure(per.len() == 15, || format!("{alg} {}: {} episodes", e.event_id, per.len()))?;
            let mut seen: Vec<&str> = per.iter().map(|m| m.mix.as_str()).collect();
            seen.sort_unstable();
            seen.dedup();
            ensure(seen.len() == 15, || "duplicate mixes".into())?;
        }
    }
    Ok(format!("{} episodes = 3 algorithms x 2 events x 15 mixes", results.len()))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn criterion_9(work: &Path) -> Check {
    let mut config = RunConfig::default();
    config.seed = 9;
    config.algorithm = Algorithm::Td3;
    config.data.synthetic = true;
    config.data.synthetic_train = 20;
    config.data.synthetic_test = 10;
    config.train.steps = Some(50_000);
    config.td3.policy_delay = 2;
    config.paths.output = work.join("c9");
    let started = Instant::now();
    train_cmd(&config).map_err(|e| e.to_string())?;
    let trained = started.elapsed();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (report, events) = evaluate_cmd(&config, jobs).map_err(|e| e.to_string())?;
    let collisions = |a: Algorithm| report.summary(a.name()).map_or(usize::MAX, |s| s.collisions);
    let (td3, hcfs, ak) = (collisions(Algorithm::Td3), collisions(Algorithm::Hcfs), collisions(Algorithm::Akhcfs));
    let av_speed = |a: Algorithm| {
        mean(
            events
                .iter()
                .filter(|e| e.algorithm == a.name())
                .flat_map(|e| e.av_followers())
                .map(|f| f.mean_speed),
        )
    };
    let (speed_ak, speed_td3) = (av_speed(Algorithm::Akhcfs), av_speed(Algorithm::Td3));
    let speed_gap = (speed_ak - speed_td3).abs() / speed_td3;
    let worst_jerk = events
        .iter()
        .filter(|e| e.algorithm == Algorithm::Akhcfs.name())
        .flat_map(|e| e.av_followers())
        .map(|f| f.mean_abs_jerk)
        .fold(0.0, f64::max);
    let detail = format!(
        "collisions td3={td3} hcfs={hcfs} akhcfs={ak}; AV mean speed akhcfs={speed_ak:.3} td3={speed_td3:.3} \
         ({:.2}%); worst akhcfs mean |jerk| {worst_jerk:.3}; train {:.0}s, total {:.0}s",
        100.0 * speed_gap,
        trained.as_secs_f64(),
        started.elapsed().as_secs_f64()
    );
    ensure(ak <= hcfs && hcfs <= td3, || format!("ordering violated: {detail}"))?;
    ensure(ak <= 1, || format!("akhcfs collisions > 1: {detail}"))?;
    ensure(speed_gap <= 0.05, || format!("speed gap > 5%: {detail}"))?;
    ensure(worst_jerk <= 2.0, || format!("jerk above 2: {detail}"))?;
    Ok(detail)
}

fn run_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_akhcfs"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("akhcfs {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn dir_files(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(|e| e.to_string())?;
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (dir_files(a)?, dir_files(b)?);
    ensure(!fa.is_empty(), || format!("{} is empty", a.display()))?;
    ensure(fa.len() == fb.len(), || format!("{} vs {} files", fa.len(), fb.len()))?;
    for ((pa, ba), (pb, bb)) in fa.iter().zip(&fb) {
        ensure(pa == pb && ba == bb, || format!("{} differs", pa.display()))?;
    }
    Ok(fa.len())
}

fn criterion_10(work: &Path) -> Check {
    let config = work.join("c10.json");
    fs::write(
        &config,
        r#"{"mcts": {"iterations": 100}, "data": {"synthetic_train": 3, "synthetic_test": 2}}"#,
    )
    .map_err(|e| e.to_string())?;
    let config = config.to_str().ok_or("non-UTF-8 temp path")?.to_string();
    let mut compared = 0;
    for jobs in ["1", "4"] {
        for run in ["a", "b"] {
            let out = work.join(format!("c10-{jobs}-{run}"));
            let out = out.to_str().ok_or("non-UTF-8 temp path")?;
            let common = ["--config", &config, "--seed", "10", "--synthetic", "--jobs", jobs, "--out", out];
            run_bin(&[&["ingest"][..], &common].concat())?;
            run_bin(&[&["train", "--algo", "akhcfs", "--steps", "1500"][..], &common].concat())?;
            run_bin(&[&["evaluate"][..], &common].concat())?;
            run_bin(&[&["replay", "--event", "syn-test-001-sine", "--mix", "HAAA"][..], &common].concat())?;
        }
    }
    let base = work.join("c10-1-a");
    for other in ["c10-1-b", "c10-4-a", "c10-4-b"] {
        compared = same_tree(&base, &work.join(other))?;
    }
    Ok(format!(
        "ingest/train/evaluate/replay repeated with --jobs 1 and 4: {compared} files byte-identical"
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("KF oracle", Box::new(criterion_1)),
        ("gain law", Box::new(criterion_2)),
        ("fusion endpoints", Box::new(criterion_3)),
        ("gradient check", Box::new(criterion_4)),
        ("controller equilibria", Box::new(criterion_5)),
        ("MCTS argmax recovery", Box::new(criterion_6)),
        ("reward oracle", Box::new(criterion_7)),
        ("mix enumeration", Box::new(criterion_8)),
        ("desk-scale safety ordering", Box::new(|| criterion_9(work.path()))),
        ("determinism", Box::new(|| criterion_10(work.path()))),
    ];
    // `AKHCFS_ACCEPTANCE_ONLY=1,4` runs a subset while iterating locally.
    let only: Option<Vec<usize>> = std::env::var("AKHCFS_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut verdicts = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        let took = fmt_duration(started.elapsed());
        let verdict = if outcome.is_ok() { "PASS" } else { "FAIL" };
        let detail = outcome.unwrap_or_else(|why| {
            failed += 1;
            why
        });
        println!("criterion {:>2} {verdict}  {name} [{took}]: {detail}", i + 1);
        verdicts.push(format!("criterion {:>2} {verdict}  {name}", i + 1));
    }
    println!("\nsummary:");
    for v in &verdicts {
        println!("{v}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    if d.as_secs() >= 1 {
        format!("{:.1}s", d.as_secs_f64())
    } else {
        format!("{}ms", d.as_millis())
    }
}
