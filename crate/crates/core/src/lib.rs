//! Deterministic simulation engine for de-conflicting multiple planar
//! vehicles with speed and turn-rate constraints.
//!
//! Each agent is a hybrid automaton with five control modes (go-round,
//! follow-leader, change-u, go-towards-goal, loiter-at-goal) switched by
//! geometric guards over a broadcast communication package, plus a
//! temporary goal-assignment scheme that breaks deadlocks at occupied
//! goals. Runtime monitors check the safety-distance, input-bound,
//! smoothness, dwell-time, and convergence claims on every run.

pub mod controllers;
pub mod dynamics;
pub mod geometry;
pub mod io;
pub mod monitor;
pub mod protocol;
pub mod scenario;
pub mod trace;

/// Agent label; the total order on labels breaks protocol ties.
pub type AgentId = u32;

pub use controllers::{
    default_gains, ChangeURole, CubicProfile, GainSet, ModeEntrySnapshot, OrbitSpec,
};
pub use dynamics::{step, AgentState, ControlInput, InfeasibleParams, Params, ParamsSpec};
pub use geometry::{wrap_angle, Angle, Vec2};
pub use monitor::{run_all, MonitorReport};
pub use protocol::{simulate, ModeId, World};
pub use scenario::{generate_random_scenario, Scenario, ScenarioError};
pub use trace::{Event, EventKind, ResetKind, TraceRow, WorldTrace};
