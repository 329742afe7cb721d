//! The five mode control laws: go-round, follow-leader, change-u,
//! go-towards-goal, loiter-at-goal. All are pure maps from (own state,
//! neighbor info, mode-entry snapshot, time) to a saturated control input.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, ControlInput, InfeasibleParams, Params};
use crate::geometry::{wrap_angle, Vec2};
use crate::AgentId;

/// Circular orbit used by go-round and loiter-at-goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub center: Vec2,
    pub radius: f64,
}

/// Limit-cycle vector field attracting to the circle of `orbit.radius`
/// around `orbit.center`:
/// F = (−y + x(r²−x²−y²), x + y(r²−x²−y²)) with (x, y) = pos − center.
pub fn limit_cycle_field(pos: Vec2, orbit: &OrbitSpec) -> Vec2 {
    let p = pos - orbit.center;
    let rho = orbit.radius * orbit.radius - p.norm_squared();
    Vec2::new(-p.y + p.x * rho, p.x + p.y * rho)
}

/// Orientation φ of the limit-cycle field at `pos`.
pub fn limit_cycle_heading(pos: Vec2, orbit: &OrbitSpec) -> f64 {
    limit_cycle_field(pos, orbit).bearing()
}

/// Analytic φ̇ of the limit-cycle field along a trajectory with velocity
/// `vel` at `pos` (chain rule through atan2 of the field components).
pub fn limit_cycle_heading_rate(pos: Vec2, vel: Vec2, orbit: &OrbitSpec) -> f64 {
    let p = pos - orbit.center;
    let rho = orbit.radius * orbit.radius - p.norm_squared();
    let f = Vec2::new(-p.y + p.x * rho, p.x + p.y * rho);
    let norm_sq = f.norm_squared();
    if norm_sq < 1e-30 {
        return 0.0;
    }
    let rho_dot = -2.0 * (p.x * vel.x + p.y * vel.y);
    let fx_dot = -vel.y + vel.x * rho + p.x * rho_dot;
    let fy_dot = vel.x + vel.y * rho + p.y * rho_dot;
    (f.x * fy_dot - f.y * fx_dot) / norm_sq
}

/// Bearing of the globally attractive goal field (unit vector toward goal).
pub fn goal_bearing(pos: Vec2, goal: Vec2) -> f64 {
    (goal - pos).bearing()
}

/// Analytic φ̇ of the goal bearing along a trajectory with velocity `vel`.
pub fn goal_bearing_rate(pos: Vec2, vel: Vec2, goal: Vec2) -> f64 {
    let e = pos - goal;
    let dist_sq = e.norm_squared();
    if dist_sq < 1e-30 {
        return 0.0;
    }
    (e.x * vel.y - e.y * vel.x) / dist_sq
}

/// Speed gain freezing linear-speed continuity at a switch into an orbit
/// mode: k_v · ‖F(pos at switch)‖ = v at switch.
pub fn orbit_speed_gain(v_at_switch: f64, pos: Vec2, orbit: &OrbitSpec) -> f64 {
    let f = limit_cycle_field(pos, orbit).norm();
    v_at_switch / f.max(1e-12)
}

/// Cubic speed profile f(s) = a s³ + b s² + c s + d on s ∈ [0, 1], holding
/// `terminal` beyond. Built so that f(0) = f1, f(1) = f2, f′(0) = f′(1) = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicProfile {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t_start: f64,
    pub duration: f64,
    pub terminal: f64,
}

/// Closed-form solution of the boundary-value system for the cubic
/// coefficients: a = 2(f1−f2), b = 3(f2−f1), c = 0, d = f1.
pub fn solve_cubic(f1: f64, f2: f64) -> (f64, f64, f64, f64) {
    (2.0 * (f1 - f2), 3.0 * (f2 - f1), 0.0, f1)
}

impl CubicProfile {
    pub fn new(f1: f64, f2: f64, t_start: f64, duration: f64) -> Self {
        let (a, b, c, d) = solve_cubic(f1, f2);
        CubicProfile {
            a,
            b,
            c,
            d,
            t_start,
            duration,
            terminal: f2,
        }
    }

    /// Profile value at absolute time `t`; holds the terminal value for
    /// s > 1 and the initial value for t before the start.
    pub fn eval(&self, t: f64) -> f64 {
        let s = ((t - self.t_start) / self.duration).clamp(0.0, 1.0);
        if s >= 1.0 {
            self.terminal
        } else {
            ((self.a * s + self.b) * s + self.c) * s + self.d
        }
    }

    pub fn finished(&self, t: f64) -> bool {
        t - self.t_start >= self.duration
    }

    /// Exact integral of the profile over one full transient, from the
    /// closed-form antiderivative: duration · (a/4 + b/3 + c/2 + d).
    pub fn transient_integral(&self) -> f64 {
        self.duration * (self.a / 4.0 + self.b / 3.0 + self.c / 2.0 + self.d)
    }
}

/// Role taken at change-u entry; fixed for the episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeURole {
    Decelerate,
    Accelerate,
}

impl ChangeURole {
    pub fn terminal_speed(self, params: &Params) -> f64 {
        match self {
            ChangeURole::Decelerate => params.v_min,
            ChangeURole::Accelerate => params.v_max,
        }
    }
}

/// Turn-rate feedback gains for the modes that use heading feedback
/// (change-u flies straight). Speed gains k_v1/k_v5 are frozen per switch
/// and live in the mode-entry snapshot instead.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GainSet {
    pub k_w1: f64,
    pub k_w2: f64,
    pub k_w4: f64,
    pub k_w5: f64,
}

/// Gains at 90% of their envelopes for the modes with closed-form
/// envelopes (k_w2 is pinned to Δ/(2π) exactly, the value its envelope
/// derivation produces).
///
/// The go-round gain has no closed-form envelope (its bound depends on
/// the runtime orbit), and at envelope-scale feedback the mode cannot
/// perform its function: the heading never locks onto the ring, so the
/// line-of-sight exit guard never sweeps true and the episode cannot end.
/// It is set at the saturation scale ω_max instead; the final hard
/// clamp keeps the output admissible everywhere.
pub fn default_gains(params: &Params) -> Result<GainSet, InfeasibleParams> {
    let two_pi = 2.0 * PI;
    let omega_phi = params.omega_max * params.v_max / (params.v_min + params.v_max);
    let env_w4 = (params.omega_max - omega_phi - params.cap_delta) / two_pi;
    let env_w5 = (params.omega_max * (1.0 - params.v_min / (params.v_min + params.v_max))
        - params.cap_delta)
        / two_pi;
    for (mode, value) in [("q4", env_w4), ("q1/q5", env_w5)] {
        if value <= 0.0 {
            return Err(InfeasibleParams::GainEnvelope { mode, value });
        }
    }
    Ok(GainSet {
        k_w1: params.omega_max,
        k_w2: params.cap_delta / two_pi,
        k_w4: 0.9 * env_w4,
        k_w5: 0.9 * env_w5,
    })
}

/// Data frozen at the instant an agent switches mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEntrySnapshot {
    /// Time of the switch.
    pub t_s: f64,
    /// Linear speed applied just before the switch; the new mode's law is
    /// constructed to take this exact value at t_s.
    pub v_at_switch: f64,
    /// Orbit for q1/q5.
    pub orbit: Option<OrbitSpec>,
    /// Frozen speed gain for q1/q5.
    pub k_v: f64,
    /// Change-u role for q3.
    pub role: Option<ChangeURole>,
    /// Conflict partner for q1/q3 pair episodes.
    pub partner: Option<AgentId>,
    /// Formation leader for q2.
    pub leader: Option<AgentId>,
}

impl ModeEntrySnapshot {
    pub fn basic(t_s: f64, v_at_switch: f64) -> Self {
        ModeEntrySnapshot {
            t_s,
            v_at_switch,
            orbit: None,
            k_v: 0.0,
            role: None,
            partner: None,
            leader: None,
        }
    }
}

/// Shared law for go-round (q1) and loiter-at-goal (q5): track the
/// limit-cycle field with frozen speed gain and heading feedback. The
/// speed is capped at the switch speed — the field magnitude is quartic
/// in the radial offset, and without the cap every off-ring transient
/// saturates the speed at v_max, which the input-bound analysis already
/// rules out (it bounds the orbit speed by the entry speed).
/// Returns None at the center singularity (caller holds the previous
/// input and flags the event).
fn orbit_guidance(
    state: &AgentState,
    orbit: &OrbitSpec,
    snapshot: &ModeEntrySnapshot,
    k_w: f64,
    params: &Params,
) -> Option<ControlInput> {
    let f = limit_cycle_field(state.pos, orbit);
    let norm = f.norm();
    if norm < 1e-12 {
        return None;
    }
    let cap = snapshot.v_at_switch.clamp(params.v_min, params.v_max);
    let v = (snapshot.k_v * norm).clamp(params.v_min, cap);
    let phi = f.bearing();
    let phi_dot = limit_cycle_heading_rate(state.pos, state.heading.unit() * v, orbit);
    let omega = -k_w * wrap_angle(state.heading.rad() - phi) + phi_dot;
    Some(ControlInput::saturated(v, omega, params))
}

/// Go-round (q1).
pub fn go_round_control(
    state: &AgentState,
    snapshot: &ModeEntrySnapshot,
    gains: &GainSet,
    params: &Params,
) -> Option<ControlInput> {
    let orbit = snapshot.orbit.as_ref().expect("q1 snapshot carries an orbit");
    orbit_guidance(state, orbit, snapshot, gains.k_w1, params)
}

/// Loiter-at-goal (q5): same structure as go-round with its own gain.
pub fn loiter_control(
    state: &AgentState,
    snapshot: &ModeEntrySnapshot,
    gains: &GainSet,
    params: &Params,
) -> Option<ControlInput> {
    let orbit = snapshot.orbit.as_ref().expect("q5 snapshot carries an orbit");
    orbit_guidance(state, orbit, snapshot, gains.k_w5, params)
}

/// Change-u (q3): straight flight, cubic speed transient to the role's
/// terminal speed.
pub fn change_u_control(profile: &CubicProfile, t: f64, params: &Params) -> ControlInput {
    ControlInput::saturated(profile.eval(t), 0.0, params)
}

/// Follow-leader (q2): cubic speed tracking re-fit each δ_t interval
/// (the protocol owns the re-fit), heading feedback toward the leader's
/// orientation plus the leader's turn rate as feedforward.
pub fn follow_leader_control(
    state: &AgentState,
    profile: &CubicProfile,
    t: f64,
    leader_heading: f64,
    leader_omega: f64,
    gains: &GainSet,
    params: &Params,
) -> ControlInput {
    let v = profile.eval(t);
    let omega = -gains.k_w2 * wrap_angle(state.heading.rad() - leader_heading) + leader_omega;
    ControlInput::saturated(v, omega, params)
}

/// Go-towards-goal (q4): constant speed frozen at the switch, heading
/// feedback toward the goal bearing with analytic feedforward. Degenerate
/// pos = goal returns straight flight (the protocol switches to q5 before
/// this can occur).
pub fn go_to_goal_control(
    state: &AgentState,
    goal: Vec2,
    snapshot: &ModeEntrySnapshot,
    gains: &GainSet,
    params: &Params,
) -> ControlInput {
    let v = snapshot.v_at_switch.clamp(params.v_min, params.v_max);
    if (goal - state.pos).norm_squared() < 1e-24 {
        return ControlInput::saturated(v, 0.0, params);
    }
    let phi = goal_bearing(state.pos, goal);
    let phi_dot = goal_bearing_rate(state.pos, state.heading.unit() * v, goal);
    let omega = -gains.k_w4 * wrap_angle(state.heading.rad() - phi) + phi_dot;
    ControlInput::saturated(v, omega, params)
}
