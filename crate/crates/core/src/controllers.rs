//! Rule-based longitudinal controllers: CACC for autonomous vehicles and
//! IDM for human drivers. Both clamp their output to `[-a_bound, a_bound]`
//! so every control source shares one action space.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynamics::DEFAULT_A_BOUND;
use crate::{Error, Result};

/// Which speed enters the CACC speed update and the headway term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SpeedFeedback {
    /// Measured ego speed.
    #[default]
    Measured,
    /// The controller's own previous (unclamped) speed command.
    Commanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CaccParams {
    pub kp: f64,
    pub kd: f64,
    pub t_hw: f64,
    /// Set from the environment step.
    #[serde(skip)]
    pub dt: f64,
    #[serde(skip)]
    pub a_bound: f64,
    pub feedback: SpeedFeedback,
}

impl Default for CaccParams {
    fn default() -> Self {
        Self {
            kp: 0.45,
            kd: 0.25,
            t_hw: 0.6,
            dt: 0.1,
            a_bound: DEFAULT_A_BOUND,
            feedback: SpeedFeedback::Measured,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccState {
    pub v_cmd_prev: f64,
    pub e_prev: f64,
}

impl CaccState {
    /// State for a vehicle that starts at speed `v` with clear gap `gap`, so
    /// the first error derivative is zero.
    pub fn initial(gap: f64, v: f64, params: &CaccParams) -> Self {
        Self {
            v_cmd_prev: v,
            e_prev: gap - params.t_hw * v,
        }
    }
}

/// One CACC update.
///
/// The spacing error uses the previous-step speed in the headway term, which
/// keeps the update causal; solving the implicit form for the current speed
/// would give `e = (gap - t_hw (v - kd e_prev / dt)) / (1 + t_hw (kp + kd / dt))`
/// instead. Returns the clamped acceleration and the next state, whose speed
/// command is kept unclamped.
pub fn cacc_accel(
    x_front: f64,
    x_ego: f64,
    front_length: f64,
    v_ego: f64,
    state: &CaccState,
    params: &CaccParams,
) -> Result<(f64, CaccState)> {
    if !(x_front.is_finite() && x_ego.is_finite() && front_length.is_finite() && v_ego.is_finite()) {
        return Err(Error::NonFinite("CACC input"));
    }
    if !(state.v_cmd_prev.is_finite() && state.e_prev.is_finite()) {
        return Err(Error::NonFinite("CACC state"));
    }
    if !(params.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("CACC dt must be positive, got {}", params.dt)));
    }
    let v_ref = match params.feedback {
        SpeedFeedback::Measured => v_ego,
        SpeedFeedback::Commanded => state.v_cmd_prev,
    };
    let e = x_front - x_ego - front_length - params.t_hw * v_ref;
    let e_dot = (e - state.e_prev) / params.dt;
    let v_cmd = v_ref + params.kp * e + params.kd * e_dot;
    let accel = ((v_cmd - v_ref) / params.dt).clamp(-params.a_bound, params.a_bound);
    Ok((accel, CaccState { v_cmd_prev: v_cmd, e_prev: e }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    pub a_max: f64,
    pub d0: f64,
    pub b: f64,
    pub v_desire: f64,
    pub t_headway: f64,
    #[serde(skip)]
    pub a_bound: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 3.79,
            d0: 1.08,
            b: 3.5,
            v_desire: 39.48,
            t_headway: 1.22,
            a_bound: DEFAULT_A_BOUND,
        }
    }
}

impl IdmParams {
    /// Desired gap; the dynamic part is floored at zero so a fast-opening
    /// gap never yields a desired distance below `d0`.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        self.d0 + (self.t_headway * v + v * dv / (2.0 * (self.a_max * self.b).sqrt())).max(0.0)
    }

    /// Gap at which a vehicle cruising at `v` behind an equal-speed leader
    /// has zero acceleration.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        self.desired_gap(v, 0.0) / (1.0 - (v / self.v_desire).powi(4)).sqrt()
    }
}

/// IDM acceleration for speed `v`, approach rate `dv = v_ego - v_front` and
/// clear gap `d`.
pub fn idm_accel(v: f64, dv: f64, d: f64, params: &IdmParams) -> Result<f64> {
    if !(v.is_finite() && dv.is_finite() && d.is_finite()) {
        return Err(Error::NonFinite("IDM input"));
    }
    if d <= 0.0 {
        return Err(Error::Overlap { gap_m: d });
    }
    let d_star = params.desired_gap(v, dv);
    let a = params.a_max * (1.0 - (v / params.v_desire).powi(4) - (d_star / d).powi(2));
    Ok(a.clamp(-params.a_bound, params.a_bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_vehicle, Actuator, VehicleState};

    #[test]
    fn cacc_equilibrium_is_zero() {
        let p = CaccParams::default();
        let v = 12.0;
        let gap = p.t_hw * v;
        let state = CaccState::initial(gap, v, &p);
        let (a, next) = cacc_accel(100.0, 100.0 - 5.0 - gap, 5.0, v, &state, &p).unwrap();
        assert!(a.abs() < 1e-12);
        assert!(next.e_prev.abs() < 1e-12);
    }

    #[test]
    fn cacc_hand_example() {
        for feedback in [SpeedFeedback::Measured, SpeedFeedback::Commanded] {
            let p = CaccParams { feedback, ..Default::default() };
            let state = CaccState { v_cmd_prev: 10.0, e_prev: 19.0 };
            let (a, next) = cacc_accel(30.0, 0.0, 5.0, 10.0, &state, &p).unwrap();
            assert!((next.e_prev - 19.0).abs() < 1e-12);
            assert!((next.v_cmd_prev - 18.55).abs() < 1e-12);
            assert_eq!(a, 3.0);
        }
    }

    #[test]
    fn cacc_too_close_brakes() {
        let p = CaccParams::default();
        let state = CaccState { v_cmd_prev: 10.0, e_prev: -1.0 };
        // gap 5 m vs desired 6 m, error unchanged
        let (a, _) = cacc_accel(10.0, 0.0, 5.0, 10.0, &state, &p).unwrap();
        assert!(a < 0.0);
    }

    #[test]
    fn cacc_rejects_non_finite() {
        let p = CaccParams::default();
        let s = CaccState { v_cmd_prev: 0.0, e_prev: 0.0 };
        assert!(cacc_accel(f64::NAN, 0.0, 5.0, 0.0, &s, &p).is_err());
    }

    fn cacc_settled_gap(v: f64, initial_gap: f64) -> f64 {
        let p = CaccParams::default();
        let act = Actuator::default();
        let mut leader = VehicleState::new(200.0, v, 5.0);
        let mut ego = VehicleState::new(200.0 - 5.0 - initial_gap, v, 5.0);
        let mut state = CaccState::initial(initial_gap, v, &p);
        for _ in 0..600 {
            let (a, next) = cacc_accel(leader.position_m, ego.position_m, 5.0, ego.speed_mps, &state, &p).unwrap();
            state = next;
            ego = step_vehicle(&ego, a, &act, 0.1);
            leader = step_vehicle(&leader, 0.0, &act, 0.1);
        }
        leader.position_m - ego.position_m
    }

    #[test]
    fn cacc_converges_to_headway_gap() {
        for v in [5.0, 15.0, 25.0] {
            let target = 5.0 + 0.6 * v;
            for start in [0.5, 1.5, 2.5] {
                let bumper = cacc_settled_gap(v, start * 0.6 * v);
                assert!((bumper - target).abs() <= 0.02 * target, "v={v} start={start} gap={bumper}");
            }
        }
    }

    #[test]
    fn idm_standstill_at_min_gap() {
        let a = idm_accel(0.0, 0.0, 1.08, &IdmParams::default()).unwrap();
        assert!(a.abs() < 1e-15);
    }

    #[test]
    fn idm_free_road_at_desired_speed() {
        let p = IdmParams::default();
        let a = idm_accel(39.48, 0.0, 1000.0, &p).unwrap();
        let d_star = 1.08 + 1.22 * 39.48;
        let expected = -3.79 * (d_star / 1000.0_f64).powi(2);
        assert!((a - expected).abs() < 1e-12);
        assert!((a + 0.00919).abs() < 1e-5);
    }

    #[test]
    fn idm_closing_brakes_harder() {
        let p = IdmParams::default();
        let closing = idm_accel(10.0, 5.0, 20.0, &p).unwrap();
        let opening = idm_accel(10.0, -5.0, 20.0, &p).unwrap();
        assert!(closing < opening);
    }

    #[test]
    fn idm_overlap_is_error() {
        assert!(matches!(
            idm_accel(10.0, 0.0, 0.0, &IdmParams::default()),
            Err(Error::Overlap { .. })
        ));
    }

    /// Bisection on the unclamped IDM law; independent of `equilibrium_gap`.
    fn bisect_equilibrium(v: f64, p: &IdmParams) -> f64 {
        let f = |d: f64| {
            let d_star = p.d0 + p.t_headway * v;
            1.0 - (v / p.v_desire).powi(4) - (d_star / d).powi(2)
        };
        let (mut lo, mut hi) = (0.1, 1e4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn idm_equilibrium_gap_matches_root() {
        let p = IdmParams::default();
        for v in [5.0, 15.0, 30.0] {
            let root = bisect_equilibrium(v, &p);
            let closed = p.equilibrium_gap(v);
            assert!((root - closed).abs() < 1e-9, "v={v}: {root} vs {closed}");
            assert!(idm_accel(v, 0.0, closed, &p).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn idm_monotone_on_grid() {
        let p = IdmParams::default();
        for v in [0.0, 5.0, 15.0, 30.0] {
            for d in [2.0, 5.0, 10.0, 30.0, 80.0] {
                let mut prev = f64::INFINITY;
                for i in -20..=20 {
                    let a = idm_accel(v, i as f64 * 0.5, d, &p).unwrap();
                    assert!(a <= prev, "dv monotonicity v={v} d={d}");
                    prev = a;
                }
            }
            for dv in [-5.0, 0.0, 5.0] {
                let floor = 0.1 * p.desired_gap(v, dv);
                let mut prev = f64::NEG_INFINITY;
                for i in 1..400 {
                    let d = floor + i as f64 * 0.25;
                    let a = idm_accel(v, dv, d, &p).unwrap();
                    assert!(a >= prev, "d monotonicity v={v} dv={dv}");
                    prev = a;
                }
            }
        }
    }
}
