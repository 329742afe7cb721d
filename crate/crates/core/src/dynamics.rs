//! Agent continuous state, parameter derivation/validation, and fixed-step
//! integration of the planar unicycle kinematics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Angle, Vec2};

/// Continuous state of one agent: planar position plus heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub pos: Vec2,
    pub heading: Angle,
}

impl AgentState {
    pub fn new(pos: Vec2, heading: f64) -> Self {
        AgentState {
            pos,
            heading: Angle::new(heading),
        }
    }

    /// Velocity vector for a given linear speed.
    pub fn velocity(&self, v: f64) -> Vec2 {
        self.heading.unit() * v
    }
}

/// Saturated control input: linear speed and turn rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    /// Clamps into the admissible box [v_min, v_max] × [−ω_max, ω_max].
    pub fn saturated(v: f64, omega: f64, params: &Params) -> Self {
        ControlInput {
            v: v.clamp(params.v_min, params.v_max),
            omega: omega.clamp(-params.omega_max, params.omega_max),
        }
    }

    pub fn within_bounds(&self, params: &Params) -> bool {
        self.v >= params.v_min && self.v <= params.v_max && self.omega.abs() <= params.omega_max
    }
}

/// Raw parameter set as given in a scenario document. `derive` validates it
/// and computes the derived quantities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ParamsSpec {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Minimum allowed inter-agent distance.
    pub d_m: f64,
    /// Speed-profile transient duration.
    #[serde(default = "default_delta_t")]
    pub delta_t: f64,
    /// Turn-rate margin reserved by the gain envelopes.
    /// Default: 5% of the admissible upper bound ω_max·v_min/(v_min+v_max).
    #[serde(default)]
    pub cap_delta: Option<f64>,
    /// Line-of-sight tolerance for the orbit exit guard (radians).
    #[serde(default = "default_delta_los")]
    pub delta_los: f64,
    /// Slack added to the derived communication radius.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Explicit communication radius; derived from delta_t when absent.
    #[serde(default)]
    pub r_comm: Option<f64>,
}

fn default_delta_t() -> f64 {
    1.0
}
fn default_delta_los() -> f64 {
    0.05
}
fn default_epsilon() -> f64 {
    0.01
}

impl ParamsSpec {
    /// Base parameters from the paper-style bounds with all small constants
    /// at their defaults.
    pub fn new(v_min: f64, v_max: f64, omega_max: f64, d_m: f64) -> Self {
        ParamsSpec {
            v_min,
            v_max,
            omega_max,
            d_m,
            delta_t: default_delta_t(),
            cap_delta: None,
            delta_los: default_delta_los(),
            epsilon: default_epsilon(),
            r_comm: None,
        }
    }

    pub fn with_r_comm(mut self, r_comm: f64) -> Self {
        self.r_comm = Some(r_comm);
        self
    }

    pub fn derive(&self) -> Result<Params, InfeasibleParams> {
        Params::derive(self)
    }
}

/// Validated parameter set with derived quantities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Params {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub d_m: f64,
    pub delta_t: f64,
    pub cap_delta: f64,
    pub delta_los: f64,
    pub epsilon: f64,
    /// Loiter radius (v_min+v_max)/(2ω_max).
    pub r_c: f64,
    /// Minimum turning radius v_min/ω_max.
    pub r_min: f64,
    /// Communication / sensing radius.
    pub r_comm: f64,
    /// Critical angular separation between go-round and change-u resolution.
    pub theta_c: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum InfeasibleParams {
    #[error("speed bounds must satisfy 0 < v_min < v_max (got v_min={v_min}, v_max={v_max})")]
    SpeedOrder { v_min: f64, v_max: f64 },
    #[error("{name} must be positive (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("turn-rate margin must satisfy 0 < Δ < ω_max·v_min/(v_min+v_max) = {bound} (got {value})")]
    MarginTooLarge { value: f64, bound: f64 },
    #[error("d_m/R_c must lie in (0,1) (got {0})")]
    DistanceRatio(f64),
    #[error("v_min/v_max must lie in (0,1) (got {0})")]
    SpeedRatio(f64),
    #[error("critical-angle discriminant negative ({0}): parameter set cannot guarantee change-u safety")]
    NegativeDiscriminant(f64),
    #[error("turning-radius bound violated: r_min = {r_min} < d_m/(2 sin θ_c) = {bound}")]
    TurningRadius { r_min: f64, bound: f64 },
    #[error("communication radius too small: R_c = {r_comm} < (δ_t/2)(v_max−v_min) + d_m = {bound}")]
    CommRadius { r_comm: f64, bound: f64 },
    #[error("gain envelope for {mode} is non-positive ({value})")]
    GainEnvelope { mode: &'static str, value: f64 },
}

/// Critical angular separation θ_c = arccos(b + √(b²−c)) with
/// b = v_r(1−d_r²), c = v_r² − d_r²(1+v_r²).
pub fn critical_angle(
    v_min: f64,
    v_max: f64,
    d_m: f64,
    r_comm: f64,
) -> Result<f64, InfeasibleParams> {
    let d_r = d_m / r_comm;
    let v_r = v_min / v_max;
    if !(0.0 < d_r && d_r < 1.0) {
        return Err(InfeasibleParams::DistanceRatio(d_r));
    }
    if !(0.0 < v_r && v_r < 1.0) {
        return Err(InfeasibleParams::SpeedRatio(v_r));
    }
    let b = v_r * (1.0 - d_r * d_r);
    let c = v_r * v_r - d_r * d_r * (1.0 + v_r * v_r);
    let disc = b * b - c;
    if disc < -1e-12 {
        return Err(InfeasibleParams::NegativeDiscriminant(disc));
    }
    let arg = (b + disc.max(0.0).sqrt()).clamp(-1.0, 1.0);
    Ok(arg.acos())
}

impl Params {
    pub fn derive(spec: &ParamsSpec) -> Result<Self, InfeasibleParams> {
        if !(spec.v_min > 0.0 && spec.v_min < spec.v_max) {
            return Err(InfeasibleParams::SpeedOrder {
                v_min: spec.v_min,
                v_max: spec.v_max,
            });
        }
        for (name, value) in [
            ("omega_max", spec.omega_max),
            ("d_m", spec.d_m),
            ("delta_t", spec.delta_t),
            ("delta_los", spec.delta_los),
            ("epsilon", spec.epsilon),
        ] {
            if !(value > 0.0) {
                return Err(InfeasibleParams::NonPositive { name, value });
            }
        }

        let margin_bound = spec.omega_max * spec.v_min / (spec.v_min + spec.v_max);
        let cap_delta = spec.cap_delta.unwrap_or(0.05 * margin_bound);
        if !(cap_delta > 0.0 && cap_delta < margin_bound) {
            return Err(InfeasibleParams::MarginTooLarge {
                value: cap_delta,
                bound: margin_bound,
            });
        }

        let r_c = (spec.v_min + spec.v_max) / (2.0 * spec.omega_max);
        let r_min = spec.v_min / spec.omega_max;
        let comm_floor = 0.5 * spec.delta_t * (spec.v_max - spec.v_min) + spec.d_m;
        let r_comm = spec.r_comm.unwrap_or(comm_floor + spec.epsilon);
        if r_comm < comm_floor {
            return Err(InfeasibleParams::CommRadius {
                r_comm,
                bound: comm_floor,
            });
        }

        let theta_c = critical_angle(spec.v_min, spec.v_max, spec.d_m, r_comm)?;
        let turn_bound = spec.d_m / (2.0 * theta_c.sin());
        if r_min < turn_bound {
            return Err(InfeasibleParams::TurningRadius {
                r_min,
                bound: turn_bound,
            });
        }

        Ok(Params {
            v_min: spec.v_min,
            v_max: spec.v_max,
            omega_max: spec.omega_max,
            d_m: spec.d_m,
            delta_t: spec.delta_t,
            cap_delta,
            delta_los: spec.delta_los,
            epsilon: spec.epsilon,
            r_c,
            r_min,
            r_comm,
            theta_c,
        })
    }

    /// Midpoint of the admissible speed range; default initial speed.
    pub fn v_mid(&self) -> f64 {
        0.5 * (self.v_min + self.v_max)
    }
}

/// One classical RK4 step of ẋ = v cosθ, ẏ = v sinθ, θ̇ = ω with the input
/// held constant over the step. Heading is re-wrapped afterwards.
pub fn step(state: AgentState, input: ControlInput, dt: f64) -> AgentState {
    debug_assert!(dt > 0.0);
    let (v, omega) = (input.v, input.omega);
    let theta0 = state.heading.rad();

    // θ(t) = θ0 + ωt exactly; the position integrand is a pure function of
    // time, so the RK4 stages only need the intermediate headings.
    let deriv = |theta: f64| Vec2::new(v * theta.cos(), v * theta.sin());
    let k1 = deriv(theta0);
    let k2 = deriv(theta0 + 0.5 * dt * omega);
    let k3 = k2;
    let k4 = deriv(theta0 + dt * omega);

    let pos = state.pos + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    AgentState {
        pos,
        heading: Angle::new(theta0 + omega * dt),
    }
}
