//! Time-indexed world trace: per-tick agent records plus the switch/reset
//! event log. Monitors are pure functions over this structure; the
//! serialized trajectory/event files are projections of it.

use serde::{Deserialize, Serialize};

use crate::controllers::OrbitSpec;
use crate::dynamics::Params;
use crate::geometry::Vec2;
use crate::protocol::ModeId;
use crate::AgentId;

/// One agent at one tick: the state at t = tick·dt and the input applied
/// over the following interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub agent: AgentId,
    pub pos: Vec2,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub mode: ModeId,
    pub temp_goal: Vec2,
    /// Active orbit while in q1/q5 (not part of the trajectory-file schema,
    /// but the smoothness monitor needs it).
    pub orbit: Option<OrbitSpec>,
}

/// Goal-reassignment kinds, one per reset in the switching law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResetKind {
    /// R(q1,q4): adopt the goal of the innermost clean orbit neighbor.
    InnerGoalSwap,
    /// R(q2,q4): perpendicular offset onto the formation's free side.
    FreeSideOffset,
    /// R(q5,q4): random offset of norm r_c from the actual goal.
    RandomOffset,
    /// R(q4,q4): conflict-free temporary goal reverts to the actual goal.
    ClearToActual,
}

impl ResetKind {
    pub fn label(self) -> &'static str {
        match self {
            ResetKind::InnerGoalSwap => "inner_goal_swap",
            ResetKind::FreeSideOffset => "free_side_offset",
            ResetKind::RandomOffset => "random_offset",
            ResetKind::ClearToActual => "clear_to_actual",
        }
    }
}

/// Virtual controller a q2 leader runs against agents outside the formation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaderSubMode {
    GoRound,
    ChangeU,
    GoalSeek,
}

impl LeaderSubMode {
    pub fn label(self) -> &'static str {
        match self {
            LeaderSubMode::GoRound => "lead_go_round",
            LeaderSubMode::ChangeU => "lead_change_u",
            LeaderSubMode::GoalSeek => "lead_goal_seek",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    /// Mode transition (from = None for the initial q4 entry), possibly
    /// coupled with a goal reset. R(q4,q4) appears as q4→q4 with a reset.
    Switch {
        from: Option<ModeId>,
        to: ModeId,
        reset: Option<ResetKind>,
        new_goal: Option<Vec2>,
    },
    /// A q2 leader changed its virtual sub-controller.
    LeaderSub { sub: LeaderSubMode },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub tick: u64,
    pub agent: AgentId,
    pub kind: EventKind,
}

impl Event {
    /// True for anything the dwell-time and chattering analysis treats as
    /// a switch: every real transition and every leader sub-mode change.
    /// Pure goal resets (q4→q4) are bookkeeping, not switches.
    pub fn is_switch(&self) -> bool {
        match self.kind {
            EventKind::Switch { from, to, .. } => from != Some(to),
            EventKind::LeaderSub { .. } => true,
        }
    }
}

/// Static per-agent scenario data echoed into the trace.
#[derive(Clone, Copy, Debug)]
pub struct AgentMeta {
    pub id: AgentId,
    pub goal: Vec2,
}

/// Complete record of one simulation run.
#[derive(Clone, Debug)]
pub struct WorldTrace {
    pub params: Params,
    pub dt: f64,
    pub seed: u64,
    pub agents: Vec<AgentMeta>,
    /// Tick-major, agent order within a tick; (ticks+1)·n rows.
    pub rows: Vec<TraceRow>,
    pub events: Vec<Event>,
    /// Number of integration steps taken.
    pub ticks: u64,
}

impl WorldTrace {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// All agent rows at one tick.
    pub fn rows_at(&self, tick: u64) -> &[TraceRow] {
        let n = self.n_agents();
        let start = tick as usize * n;
        &self.rows[start..start + n]
    }

    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.dt
    }

    /// Index into `agents` / per-tick slices for an agent id.
    pub fn agent_index(&self, id: AgentId) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn events_for(&self, id: AgentId) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.agent == id)
    }
}
