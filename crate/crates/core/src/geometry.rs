//! Planar vector and angle primitives shared by the controllers and guards.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// 2D position / displacement vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Polar angle atan2(y, x).
    pub fn bearing(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit vector with the given polar angle.
    pub fn from_bearing(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Heading angle, canonically wrapped to (−π, π].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Angle(f64);

impl Angle {
    /// Wraps a raw angle into (−π, π]. Non-finite input is rejected by
    /// debug assertion; callers validate scenario input up front.
    pub fn new(raw: f64) -> Self {
        Angle(wrap_angle(raw))
    }

    pub fn rad(self) -> f64 {
        self.0
    }

    pub fn unit(self) -> Vec2 {
        Vec2::from_bearing(self.0)
    }
}

/// Wraps a raw angle (radians) into (−π, π].
pub fn wrap_angle(raw: f64) -> f64 {
    debug_assert!(raw.is_finite(), "wrap_angle: non-finite input {raw}");
    let r = raw.rem_euclid(2.0 * PI); // [0, 2π)
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Shortest angle between two orientations: min(|θi−θj|, 2π−|θi−θj|) ∈ [0, π].
pub fn angular_separation(theta_i: f64, theta_j: f64) -> f64 {
    let d = (theta_i - theta_j).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Relative velocity below this (squared) magnitude counts as "no approach",
/// avoiding the division by zero implicit in the closest-approach formula.
pub const REL_VEL_TOL_SQ: f64 = 1e-12;

/// Time of closest approach under straight-line extrapolation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClosestApproach {
    /// Relative velocity is (numerically) zero: the pair neither closes
    /// nor separates.
    NoApproach,
    /// t_min = −(r_ij·ṙ_ij)/|ṙ_ij|²; negative means the pair is already
    /// past its closest point (callers clamp to 0).
    At(f64),
}

/// t_min for two agents moving with constant velocities.
pub fn time_to_closest_approach(r_i: Vec2, r_j: Vec2, v_i: Vec2, v_j: Vec2) -> ClosestApproach {
    let r_ij = r_i - r_j;
    let v_ij = v_i - v_j;
    let speed_sq = v_ij.norm_squared();
    if speed_sq < REL_VEL_TOL_SQ {
        ClosestApproach::NoApproach
    } else {
        ClosestApproach::At(-r_ij.dot(v_ij) / speed_sq)
    }
}

/// Minimum distance over t ≥ 0 between two straight-line extrapolations.
/// Equals the current distance when the pair is not approaching.
pub fn predicted_min_distance(r_i: Vec2, r_j: Vec2, v_i: Vec2, v_j: Vec2) -> f64 {
    match time_to_closest_approach(r_i, r_j, v_i, v_j) {
        ClosestApproach::NoApproach => (r_i - r_j).norm(),
        ClosestApproach::At(t_min) => {
            if t_min <= 0.0 {
                (r_i - r_j).norm()
            } else {
                let d = (r_i - r_j) + (v_i - v_j) * t_min;
                d.norm()
            }
        }
    }
}
