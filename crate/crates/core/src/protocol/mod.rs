//! The hybrid automaton: per-agent discrete modes, guard evaluation over
//! frozen communication packages, resets (including temporary goal
//! assignment), leader bookkeeping, and the synchronous per-tick world
//! update.
//!
//! Every decision in a tick reads the same frozen picture (the packages
//! built at the end of the previous tick), so symmetric conflicts resolve
//! symmetrically and runs are deterministic for a fixed (scenario, seed, dt).

pub mod rules;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{
    change_u_control, default_gains, follow_leader_control, go_round_control, go_to_goal_control,
    loiter_control, orbit_speed_gain, ChangeURole, CubicProfile, GainSet, ModeEntrySnapshot,
    OrbitSpec,
};
use crate::dynamics::{step, AgentState, ControlInput, Params};
use crate::geometry::Vec2;
use crate::scenario::Scenario;
use crate::trace::{AgentMeta, Event, EventKind, LeaderSubMode, ResetKind, TraceRow, WorldTrace};
use crate::AgentId;
use rules::{
    a41_predicts_conflict, assign_changeu_roles, effective_neighbors, elect_leader, free_side_offset,
    head_on_like, join_orbit, neighbors_of, orbit_exit_line_of_sight, pair_orbit, separation_rate,
    AgentView,
};

/// Discrete mode labels q1..q5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeId {
    /// q1: orbit a shared circle to resolve a head-on-like conflict.
    GoRound,
    /// q2: fly in formation behind an elected leader.
    FollowLeader,
    /// q3: hold heading, smoothly change linear speed.
    ChangeU,
    /// q4: fly toward the assigned goal.
    GoToGoal,
    /// q5: loiter on the r_c circle around the assigned goal.
    Loiter,
}

impl ModeId {
    pub fn label(self) -> &'static str {
        match self {
            ModeId::GoRound => "q1",
            ModeId::FollowLeader => "q2",
            ModeId::ChangeU => "q3",
            ModeId::GoToGoal => "q4",
            ModeId::Loiter => "q5",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "q1" => ModeId::GoRound,
            "q2" => ModeId::FollowLeader,
            "q3" => ModeId::ChangeU,
            "q4" => ModeId::GoToGoal,
            "q5" => ModeId::Loiter,
            _ => return None,
        })
    }
}

/// The record each agent broadcasts at the end of a tick and every agent
/// reads, frozen, during the next one.
#[derive(Clone, Debug)]
pub struct CommPackage {
    pub id: AgentId,
    pub at_goal: bool,
    pub at_obstacle: bool,
    pub ifw: BTreeSet<AgentId>,
    pub icw: BTreeSet<AgentId>,
    pub orbit: Option<OrbitSpec>,
    pub pos: Vec2,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub temp_goal: Vec2,
    pub actual_goal: Vec2,
    pub mode: ModeId,
    pub leader: Option<AgentId>,
}

/// Actual vs currently assigned goal location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalAssignment {
    pub actual: Vec2,
    pub assigned: Vec2,
}

/// Virtual controller state for a q2 leader resolving conflicts on behalf
/// of its formation.
#[derive(Clone, Debug)]
pub struct LeaderSubState {
    pub mode: LeaderSubMode,
    pub snapshot: ModeEntrySnapshot,
    pub profile: Option<CubicProfile>,
    pub target: Option<AgentId>,
    pub entered_tick: u64,
}

/// One agent of the hybrid system: continuous state plus discrete data.
#[derive(Clone, Debug)]
pub struct AgentAutomaton {
    pub id: AgentId,
    pub mode: ModeId,
    pub state: AgentState,
    /// Input applied over the last integration interval.
    pub input: ControlInput,
    pub snapshot: ModeEntrySnapshot,
    pub goals: GoalAssignment,
    /// Speed profile for q3 and for q2 followers (re-fit each δ_t).
    pub profile: Option<CubicProfile>,
    /// Formation membership (q2 only; includes self).
    pub ifw: BTreeSet<AgentId>,
    pub leader: Option<AgentId>,
    pub sub: Option<LeaderSubState>,
    pub last_switch_tick: u64,
}

/// Pending goal reset chosen by a guard; random offsets draw from the
/// world's stream at commit time, in label order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PendingReset {
    InnerGoalSwap(Vec2),
    FreeSideOffset(Vec2),
    RandomOffset,
}

/// New virtual controller for a q2 leader.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NewSub {
    GoalSeek,
    GoRound {
        orbit: OrbitSpec,
        /// q4 agent to force into real q1 alongside this virtual entry.
        force: Option<usize>,
        target: AgentId,
    },
    ChangeU {
        partner: usize,
    },
}

/// Transition selected by guard evaluation for one agent (at most one per
/// tick).
#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    ToQ5,
    ToQ4 { reset: Option<PendingReset> },
    GoRoundPair { partner: usize, orbit: OrbitSpec },
    GoRoundJoin { orbit: OrbitSpec, anchor: AgentId },
    ChangeUPair { partner: usize },
    ToQ2 { members: BTreeSet<AgentId> },
    SubChange { sub: NewSub },
}

/// Output of one world tick: the rows recorded for the tick that just ran
/// (pre-integration state + applied inputs) and the transition events.
pub struct TickOutput {
    pub rows: Vec<TraceRow>,
    pub events: Vec<Event>,
}

/// Minimum ticks an agent dwells in a mode (and a leader in a sub-mode)
/// before guards are evaluated again. Keeps the tick-quantized automaton
/// clear of one-tick chattering.
pub const MIN_DWELL_TICKS: u64 = 2;

pub struct World {
    pub params: Params,
    pub gains: GainSet,
    pub dt: f64,
    pub clock_tick: u64,
    pub agents: Vec<AgentAutomaton>,
    comm: Vec<CommPackage>,
    rng: ChaCha8Rng,
}

impl World {
    /// Builds the initial world from a validated scenario. Every agent
    /// starts in q4 bound for its actual goal.
    pub fn new(scenario: &Scenario) -> Self {
        let params = scenario.params();
        let gains = default_gains(&params).expect("validated scenario has feasible gains");
        let mut agents: Vec<AgentAutomaton> = scenario
            .agents
            .iter()
            .map(|a| {
                let v0 = a.speed.unwrap_or(params.v_mid()).clamp(params.v_min, params.v_max);
                AgentAutomaton {
                    id: a.id,
                    mode: ModeId::GoToGoal,
                    state: AgentState::new(a.start, a.heading),
                    input: ControlInput { v: v0, omega: 0.0 },
                    snapshot: ModeEntrySnapshot::basic(0.0, v0),
                    goals: GoalAssignment {
                        actual: a.goal,
                        assigned: a.goal,
                    },
                    profile: None,
                    ifw: BTreeSet::new(),
                    leader: None,
                    sub: None,
                    last_switch_tick: 0,
                }
            })
            .collect();
        agents.sort_by_key(|a| a.id);
        let mut world = World {
            params,
            gains,
            dt: scenario.dt,
            clock_tick: 0,
            agents,
            comm: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        };
        world.rebuild_comm();
        world
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    fn idx_of(&self, id: AgentId) -> usize {
        self.agents
            .binary_search_by_key(&id, |a| a.id)
            .expect("known agent id")
    }

    /// Physical neighbor set of agent `i` (live positions).
    pub fn neighbors(&self, i: usize) -> BTreeSet<AgentId> {
        let me = &self.agents[i];
        self.agents
            .iter()
            .filter(|a| a.id != me.id && a.state.pos.distance(me.state.pos) <= self.params.r_comm)
            .map(|a| a.id)
            .collect()
    }

    fn view(&self, i: usize) -> AgentView {
        AgentView::from_comm(&self.comm[i])
    }

    fn dwell_ok(&self, i: usize) -> bool {
        self.clock_tick - self.agents[i].last_switch_tick >= MIN_DWELL_TICKS
    }

    fn sub_dwell_ok(&self, i: usize) -> bool {
        match &self.agents[i].sub {
            Some(sub) => self.clock_tick - sub.entered_tick >= MIN_DWELL_TICKS,
            None => true,
        }
    }

    /// Advances the world one tick. Sequence: refresh formation
    /// bookkeeping, evaluate all guards on the frozen packages, commit
    /// transitions in label order, compute controls, record rows,
    /// integrate, rebuild packages.
    pub fn tick(&mut self) -> TickOutput {
        let tick = self.clock_tick;
        let mut events = Vec::new();

        self.refresh_formations();

        let decisions: Vec<Option<Decision>> = (0..self.n())
            .map(|i| self.evaluate_guards(i))
            .collect();
        self.commit(decisions, tick, &mut events);

        self.compute_controls();

        let rows = self.current_rows(tick);
        for a in &mut self.agents {
            a.state = step(a.state, a.input, self.dt);
        }
        self.rebuild_comm();
        self.clock_tick += 1;

        TickOutput { rows, events }
    }

    /// Rows describing the current (post-integration) states with the
    /// last applied inputs; used for the final trace row.
    pub fn final_rows(&self) -> Vec<TraceRow> {
        self.current_rows(self.clock_tick)
    }

    fn current_rows(&self, tick: u64) -> Vec<TraceRow> {
        self.agents
            .iter()
            .map(|a| TraceRow {
                tick,
                agent: a.id,
                pos: a.state.pos,
                heading: a.state.heading.rad(),
                v: a.input.v,
                omega: a.input.omega,
                mode: a.mode,
                temp_goal: a.goals.assigned,
                orbit: match a.mode {
                    ModeId::GoRound | ModeId::Loiter => a.snapshot.orbit,
                    _ => None,
                },
            })
            .collect()
    }

    /// Drops departed members from q2 formations, admits members that list
    /// us, and keeps the leader stable while it remains a member.
    fn refresh_formations(&mut self) {
        let n = self.n();
        for i in 0..n {
            if self.agents[i].mode != ModeId::FollowLeader {
                continue;
            }
            let me = self.agents[i].id;
            let my_pos = self.comm[i].pos;
            let mut ifw: BTreeSet<AgentId> = BTreeSet::new();
            ifw.insert(me);
            for p in &self.comm {
                if p.id == me
                    || p.mode != ModeId::FollowLeader
                    || p.pos.distance(my_pos) > self.params.r_comm
                {
                    continue;
                }
                if self.agents[i].ifw.contains(&p.id) || p.ifw.contains(&me) {
                    ifw.insert(p.id);
                }
            }
            let leader_still_in = self.agents[i]
                .leader
                .map(|l| ifw.contains(&l))
                .unwrap_or(false);
            let leader = if leader_still_in {
                self.agents[i].leader.unwrap()
            } else {
                let members: Vec<(AgentId, Vec2)> = ifw
                    .iter()
                    .map(|&id| (id, self.comm[self.idx_of(id)].pos))
                    .collect();
                elect_leader(&members)
            };
            let a = &mut self.agents[i];
            a.ifw = ifw;
            a.leader = Some(leader);
        }
    }

    /// Evaluates the guard set for agent `i` against the frozen packages.
    /// Returns at most one enabled transition, at the spec's priority.
    pub fn evaluate_guards(&self, i: usize) -> Option<Decision> {
        if !self.dwell_ok(i) {
            return None;
        }
        match self.agents[i].mode {
            ModeId::GoToGoal => self.guards_from_q4(i),
            ModeId::GoRound => self.guards_from_q1(i),
            ModeId::ChangeU => self.guards_from_q3(i),
            ModeId::FollowLeader => self.guards_from_q2(i),
            ModeId::Loiter => self.guards_from_q5(i),
        }
    }

    fn guards_from_q4(&self, i: usize) -> Option<Decision> {
        let me = self.view(i);
        let my = &self.agents[i];

        // G(q4,q5): first crossing into the closed r_c ball of the
        // assigned goal. Highest priority: goal arrival preempts conflicts.
        if me.pos.distance(my.goals.assigned) <= self.params.r_c {
            return Some(Decision::ToQ5);
        }

        let empty = BTreeSet::new();
        let eff = effective_neighbors(&self.comm, i, self.params.r_comm, &empty);

        // G(q4,q1): a head-on-like or at-obstacle neighbor with a
        // predicted conflict (A_41). Among qualifying partners take the
        // one with the smallest predicted miss distance.
        let mut best: Option<(f64, usize)> = None;
        for &id in &eff {
            let j = self.idx_of(id);
            let them = self.view(j);
            let trigger = head_on_like(&me, &them, &self.params)
                || self.comm[j].at_obstacle
                || self.comm[j].at_goal;
            if !trigger || !a41_predicts_conflict(&me, &them, &self.params) {
                continue;
            }
            let eligible = self.comm[j].at_obstacle
                || (self.comm[j].mode == ModeId::GoToGoal && self.dwell_ok(j));
            if !eligible {
                continue;
            }
            let miss = crate::geometry::predicted_min_distance(
                me.pos,
                them.pos,
                me.velocity(),
                them.velocity(),
            );
            if best.map_or(true, |(d, _)| miss < d) {
                best = Some((miss, j));
            }
        }
        if let Some((_, j)) = best {
            let them = self.view(j);
            if self.comm[j].at_obstacle {
                let anchor = self.comm[j].orbit.expect("at-obstacle broadcasts an orbit");
                let phys = neighbors_of(&self.comm, i, self.params.r_comm);
                let orbit = join_orbit(&self.comm, &phys, &anchor, &self.params);
                return Some(Decision::GoRoundJoin {
                    orbit,
                    anchor: them.id,
                });
            }
            let orbit = pair_orbit(&me, &them, &self.params);
            return Some(Decision::GoRoundPair { partner: j, orbit });
        }

        // G(q4,q3): exactly one mutual neighbor at small angular
        // separation, still closing.
        if eff.len() == 1 {
            let id = *eff.iter().next().unwrap();
            let j = self.idx_of(id);
            let them = self.view(j);
            let their_formation = if self.comm[j].mode == ModeId::FollowLeader {
                self.comm[j].ifw.clone()
            } else {
                BTreeSet::new()
            };
            let their_eff =
                effective_neighbors(&self.comm, j, self.params.r_comm, &their_formation);
            let mutual = their_eff.len() == 1 && their_eff.contains(&me.id);
            let small_angle = !head_on_like(&me, &them, &self.params);
            let closing = separation_rate(&me, &them) <= 0.0;
            // The partner either pairs from q4 or is a q2 leader running
            // the change-u side virtually.
            let pairable = (self.comm[j].mode == ModeId::GoToGoal && self.dwell_ok(j))
                || (self.comm[j].mode == ModeId::FollowLeader
                    && self.comm[j].leader == Some(them.id)
                    && self.sub_dwell_ok(j));
            if mutual && small_angle && closing && pairable {
                return Some(Decision::ChangeUPair { partner: j });
            }
        }
        None
    }

    fn guards_from_q1(&self, i: usize) -> Option<Decision> {
        let me = self.view(i);
        let my = &self.agents[i];
        let orbit = my.snapshot.orbit.expect("q1 carries an orbit");
        let phys = neighbors_of(&self.comm, i, self.params.r_comm);

        // Not on a ring inside any orbiting neighbor's: the wider ring
        // leaves first.
        for &id in &phys {
            let p = &self.comm[self.idx_of(id)];
            if let Some(other) = &p.orbit {
                if other.radius > orbit.radius {
                    return None;
                }
            }
        }

        let los = orbit_exit_line_of_sight(
            me.pos,
            me.heading,
            orbit.center,
            my.goals.assigned,
            &self.params,
        );
        let near_goal = me.pos.distance(my.goals.assigned) <= 2.0 * orbit.radius;
        if !(los || near_goal) {
            return None;
        }

        // R(q1,q4): adopt the goal of the smallest-label conflict
        // neighbor circling a not-wider ring whose assignment is clean.
        let mut reset = None;
        if near_goal {
            for &id in &phys {
                let p = &self.comm[self.idx_of(id)];
                let Some(other) = &p.orbit else { continue };
                if other.radius <= orbit.radius && p.temp_goal == p.actual_goal {
                    reset = Some(PendingReset::InnerGoalSwap(p.actual_goal));
                    break; // phys iterates in label order
                }
            }
        }
        Some(Decision::ToQ4 { reset })
    }

    fn guards_from_q3(&self, i: usize) -> Option<Decision> {
        let me = self.view(i);
        let my = &self.agents[i];
        let partner = my.snapshot.partner.expect("q3 carries a partner");
        let phys = neighbors_of(&self.comm, i, self.params.r_comm);

        if !phys.contains(&partner) {
            // Partner beyond sensing range: separation exceeds R_c.
            return Some(Decision::ToQ4 { reset: None });
        }
        let j = self.idx_of(partner);
        let them = self.view(j);

        if phys.len() == 1 && separation_rate(&me, &them) > 0.0 {
            return Some(Decision::ToQ4 { reset: None });
        }

        // G(q3,q2): a third agent in conflict with the pair.
        let has_third = phys
            .iter()
            .chain(self.comm[j].icw.iter())
            .any(|&k| k != me.id && k != partner);
        if has_third {
            let mut members: BTreeSet<AgentId> = BTreeSet::new();
            members.insert(me.id);
            members.insert(partner);
            members.extend(my.ifw.iter().copied());
            members.extend(self.comm[j].ifw.iter().copied());
            return Some(Decision::ToQ2 { members });
        }
        None
    }

    fn guards_from_q5(&self, i: usize) -> Option<Decision> {
        let my = &self.agents[i];
        let phys = neighbors_of(&self.comm, i, self.params.r_comm);
        for &id in &phys {
            let p = &self.comm[self.idx_of(id)];
            if p.actual_goal == my.goals.assigned {
                return Some(Decision::ToQ4 {
                    reset: Some(PendingReset::RandomOffset),
                });
            }
        }
        None
    }

    fn guards_from_q2(&self, i: usize) -> Option<Decision> {
        let me = self.view(i);
        let my = &self.agents[i];
        let leader_id = my.leader.expect("q2 carries a leader");

        if my.ifw.len() <= 1 {
            // Formation dissolved underneath us.
            return Some(Decision::ToQ4 { reset: None });
        }

        // G(q2,q4): every neighbor of every member is a member, and this
        // agent is the farthest from the leader.
        let externally_clear = my.ifw.iter().all(|&m| {
            let p = &self.comm[self.idx_of(m)];
            p.icw.iter().all(|k| my.ifw.contains(k))
        });
        if externally_clear {
            let lead_pos = self.comm[self.idx_of(leader_id)].pos;
            let my_dist = me.pos.distance(lead_pos);
            let farthest = my
                .ifw
                .iter()
                .all(|&m| self.comm[self.idx_of(m)].pos.distance(lead_pos) <= my_dist);
            if farthest && me.id != leader_id {
                let free_side = (my.goals.assigned - me.pos).dot(lead_pos - me.pos) < 0.0;
                let reset = if free_side {
                    None
                } else {
                    Some(PendingReset::FreeSideOffset(free_side_offset(
                        me.pos,
                        me.heading,
                        my.goals.assigned,
                        self.params.r_c,
                    )))
                };
                return Some(Decision::ToQ4 { reset });
            }
        }

        if me.id == leader_id {
            return self.leader_sub_decision(i);
        }
        None
    }

    /// Maintains the leader's virtual controller against agents outside
    /// the formation.
    fn leader_sub_decision(&self, i: usize) -> Option<Decision> {
        if !self.sub_dwell_ok(i) {
            return None;
        }
        let me = self.view(i);
        let my = &self.agents[i];
        let externals = effective_neighbors(&self.comm, i, self.params.r_comm, &my.ifw);

        // Is the current sub-mode still resolving a live conflict?
        let current = my.sub.as_ref().expect("q2 leader carries a sub state");
        let valid = match (&current.mode, current.target) {
            (LeaderSubMode::GoRound, Some(t)) => {
                externals.contains(&t)
                    && !orbit_exit_line_of_sight(
                        me.pos,
                        me.heading,
                        current.snapshot.orbit.unwrap().center,
                        my.goals.assigned,
                        &self.params,
                    )
            }
            (LeaderSubMode::ChangeU, Some(t)) => {
                externals.contains(&t)
                    && separation_rate(&me, &self.view(self.idx_of(t))) <= 0.0
            }
            (LeaderSubMode::GoalSeek, _) => {
                // Stay until an external triggers an engagement below.
                true
            }
            _ => false,
        };
        if valid && current.mode != LeaderSubMode::GoalSeek {
            return None;
        }

        // Go-round engagement: head-on-like or at-obstacle external with a
        // predicted conflict. Most urgent (smallest miss distance) first.
        let mut best: Option<(f64, usize)> = None;
        for &id in &externals {
            let j = self.idx_of(id);
            let them = self.view(j);
            let trigger = (head_on_like(&me, &them, &self.params) || self.comm[j].at_obstacle)
                && a41_predicts_conflict(&me, &them, &self.params);
            if !trigger {
                continue;
            }
            let miss = crate::geometry::predicted_min_distance(
                me.pos,
                them.pos,
                me.velocity(),
                them.velocity(),
            );
            if best.map_or(true, |(d, _)| miss < d) {
                best = Some((miss, j));
            }
        }
        if let Some((_, j)) = best {
            let them = self.view(j);
            let orbit = if self.comm[j].at_obstacle {
                let anchor = self.comm[j].orbit.expect("at-obstacle broadcasts an orbit");
                let phys = neighbors_of(&self.comm, i, self.params.r_comm);
                join_orbit(&self.comm, &phys, &anchor, &self.params)
            } else {
                pair_orbit(&me, &them, &self.params)
            };
            let force = (self.comm[j].mode == ModeId::GoToGoal && self.dwell_ok(j)).then_some(j);
            return Some(Decision::SubChange {
                sub: NewSub::GoRound {
                    orbit,
                    force,
                    target: them.id,
                },
            });
        }

        // Change-u engagement mirrors the pair guard: a single mutual
        // external at small angular separation, still closing.
        if externals.len() == 1 {
            let id = *externals.iter().next().unwrap();
            let j = self.idx_of(id);
            let them = self.view(j);
            let pairable = (self.comm[j].mode == ModeId::GoToGoal && self.dwell_ok(j))
                || (self.comm[j].mode == ModeId::FollowLeader
                    && self.comm[j].leader == Some(them.id)
                    && self.sub_dwell_ok(j));
            if pairable
                && !head_on_like(&me, &them, &self.params)
                && separation_rate(&me, &them) <= 0.0
                && current.mode == LeaderSubMode::GoalSeek
            {
                return Some(Decision::SubChange {
                    sub: NewSub::ChangeU { partner: j },
                });
            }
        }

        if current.mode == LeaderSubMode::GoalSeek {
            None
        } else {
            Some(Decision::SubChange { sub: NewSub::GoalSeek })
        }
    }

    /// Applies decisions in label order. Pair entries bind both agents on
    /// the same tick; an agent whose chosen partner was already bound this
    /// tick simply re-evaluates next tick.
    fn commit(&mut self, decisions: Vec<Option<Decision>>, tick: u64, events: &mut Vec<Event>) {
        let n = self.n();
        let t_now = tick as f64 * self.dt;
        let mut taken = vec![false; n];

        for i in 0..n {
            if taken[i] {
                continue;
            }
            let Some(decision) = decisions[i].clone() else {
                self.maybe_clear_goal(i, tick, events);
                continue;
            };
            match decision {
                Decision::ToQ5 => {
                    self.enter_q5(i, t_now, tick, events);
                    taken[i] = true;
                }
                Decision::ToQ4 { reset } => {
                    self.enter_q4(i, reset, t_now, tick, events);
                    taken[i] = true;
                }
                Decision::GoRoundJoin { orbit, anchor } => {
                    self.enter_q1(i, orbit, Some(anchor), t_now, tick, events);
                    taken[i] = true;
                }
                Decision::GoRoundPair { partner: j, orbit } => {
                    if taken[j] {
                        continue; // partner bound earlier this tick
                    }
                    let mutual = matches!(
                        decisions[j],
                        Some(Decision::GoRoundPair { partner: p, .. }) if p == i
                    );
                    if !mutual
                        && !(self.agents[j].mode == ModeId::GoToGoal && self.dwell_ok(j))
                    {
                        continue;
                    }
                    // Each side of a fresh pair circles its own forward
                    // orbit; the radii agree by symmetry of the formula.
                    let partner_orbit = match decisions[j] {
                        Some(Decision::GoRoundPair { partner: p, orbit: o }) if p == i => o,
                        _ => pair_orbit(&self.view(j), &self.view(i), &self.params),
                    };
                    let partner_id = self.agents[j].id;
                    let my_id = self.agents[i].id;
                    self.enter_q1(i, orbit, Some(partner_id), t_now, tick, events);
                    self.enter_q1(j, partner_orbit, Some(my_id), t_now, tick, events);
                    taken[i] = true;
                    taken[j] = true;
                }
                Decision::ChangeUPair { partner: j } => {
                    if taken[j] {
                        continue;
                    }
                    let me = self.view(i);
                    let them = self.view(j);
                    let (decel, _) = assign_changeu_roles(&me, &them, &self.params);
                    let my_role = if decel == me.id {
                        ChangeURole::Decelerate
                    } else {
                        ChangeURole::Accelerate
                    };
                    let their_role = if my_role == ChangeURole::Decelerate {
                        ChangeURole::Accelerate
                    } else {
                        ChangeURole::Decelerate
                    };
                    match decisions[j] {
                        Some(Decision::ChangeUPair { partner: p }) if p == i => {
                            self.enter_q3(i, them.id, my_role, t_now, tick, events);
                            self.enter_q3(j, me.id, their_role, t_now, tick, events);
                            taken[i] = true;
                            taken[j] = true;
                        }
                        Some(Decision::SubChange {
                            sub: NewSub::ChangeU { partner: p },
                        }) if p == i => {
                            // Partner is a q2 leader running its side
                            // virtually.
                            self.enter_q3(i, them.id, my_role, t_now, tick, events);
                            self.set_leader_sub(
                                j,
                                LeaderSubMode::ChangeU,
                                None,
                                Some(me.id),
                                Some(their_role),
                                t_now,
                                tick,
                                events,
                            );
                            taken[i] = true;
                            taken[j] = true;
                        }
                        _ => {}
                    }
                }
                Decision::ToQ2 { members } => {
                    let positions: Vec<(AgentId, Vec2)> = members
                        .iter()
                        .map(|&id| (id, self.comm[self.idx_of(id)].pos))
                        .collect();
                    let leader = elect_leader(&positions);
                    self.enter_q2(i, members, leader, t_now, tick, events);
                    taken[i] = true;
                }
                Decision::SubChange { sub } => {
                    match sub {
                        NewSub::GoalSeek => {
                            self.set_leader_sub(
                                i,
                                LeaderSubMode::GoalSeek,
                                None,
                                None,
                                None,
                                t_now,
                                tick,
                                events,
                            );
                        }
                        NewSub::GoRound { orbit, force, target } => {
                            self.set_leader_sub(
                                i,
                                LeaderSubMode::GoRound,
                                Some(orbit),
                                Some(target),
                                None,
                                t_now,
                                tick,
                                events,
                            );
                            if let Some(k) = force {
                                if !taken[k]
                                    && self.agents[k].mode == ModeId::GoToGoal
                                    && self.dwell_ok(k)
                                {
                                    let my_id = self.agents[i].id;
                                    let their_orbit =
                                        pair_orbit(&self.view(k), &self.view(i), &self.params);
                                    self.enter_q1(k, their_orbit, Some(my_id), t_now, tick, events);
                                    taken[k] = true;
                                }
                            }
                        }
                        NewSub::ChangeU { partner } => {
                            if !taken[partner] {
                                match decisions[partner] {
                                    // A q4 partner commits both sides when its
                                    // own (later) turn comes.
                                    Some(Decision::ChangeUPair { partner: p }) if p == i => {
                                        continue;
                                    }
                                    // Leader vs leader: both run change-u
                                    // virtually, with mirrored roles.
                                    Some(Decision::SubChange {
                                        sub: NewSub::ChangeU { partner: p },
                                    }) if p == i => {
                                        let me = self.view(i);
                                        let them = self.view(partner);
                                        let (decel, _) =
                                            assign_changeu_roles(&me, &them, &self.params);
                                        let (my_role, their_role) = if decel == me.id {
                                            (ChangeURole::Decelerate, ChangeURole::Accelerate)
                                        } else {
                                            (ChangeURole::Accelerate, ChangeURole::Decelerate)
                                        };
                                        self.set_leader_sub(
                                            i,
                                            LeaderSubMode::ChangeU,
                                            None,
                                            Some(them.id),
                                            Some(my_role),
                                            t_now,
                                            tick,
                                            events,
                                        );
                                        self.set_leader_sub(
                                            partner,
                                            LeaderSubMode::ChangeU,
                                            None,
                                            Some(me.id),
                                            Some(their_role),
                                            t_now,
                                            tick,
                                            events,
                                        );
                                        taken[partner] = true;
                                    }
                                    // Otherwise drop and re-evaluate next tick.
                                    _ => {}
                                }
                            }
                        }
                    }
                    taken[i] = true;
                }
            }
        }
    }

    /// R(q4,q4): a conflict-free q4 agent whose assigned goal is stale and
    /// not any other agent's actual goal reverts to its own goal.
    fn maybe_clear_goal(&mut self, i: usize, tick: u64, events: &mut Vec<Event>) {
        let a = &self.agents[i];
        if a.mode != ModeId::GoToGoal || a.goals.assigned == a.goals.actual {
            return;
        }
        if !neighbors_of(&self.comm, i, self.params.r_comm).is_empty() {
            return;
        }
        let someones_goal = self
            .agents
            .iter()
            .any(|b| b.id != a.id && b.goals.actual == a.goals.assigned);
        if someones_goal {
            return;
        }
        let actual = a.goals.actual;
        self.agents[i].goals.assigned = actual;
        events.push(Event {
            tick,
            agent: self.agents[i].id,
            kind: EventKind::Switch {
                from: Some(ModeId::GoToGoal),
                to: ModeId::GoToGoal,
                reset: Some(ResetKind::ClearToActual),
                new_goal: Some(actual),
            },
        });
    }

    fn enter_q5(&mut self, i: usize, t_now: f64, tick: u64, events: &mut Vec<Event>) {
        let from = self.agents[i].mode;
        let v = self.agents[i].input.v;
        let orbit = OrbitSpec {
            center: self.agents[i].goals.assigned,
            radius: self.params.r_c,
        };
        let mut snap = ModeEntrySnapshot::basic(t_now, v);
        snap.orbit = Some(orbit);
        snap.k_v = orbit_speed_gain(v, self.agents[i].state.pos, &orbit);
        self.apply_switch(i, ModeId::Loiter, snap, None, tick);
        events.push(Event {
            tick,
            agent: self.agents[i].id,
            kind: EventKind::Switch {
                from: Some(from),
                to: ModeId::Loiter,
                reset: None,
                new_goal: None,
            },
        });
    }

    fn enter_q4(
        &mut self,
        i: usize,
        reset: Option<PendingReset>,
        t_now: f64,
        tick: u64,
        events: &mut Vec<Event>,
    ) {
        let from = self.agents[i].mode;
        let (kind, new_goal) = match reset {
            None => (None, None),
            Some(PendingReset::InnerGoalSwap(goal)) => {
                self.agents[i].goals.assigned = goal;
                (Some(ResetKind::InnerGoalSwap), Some(goal))
            }
            Some(PendingReset::FreeSideOffset(goal)) => {
                self.agents[i].goals.assigned = goal;
                (Some(ResetKind::FreeSideOffset), Some(goal))
            }
            Some(PendingReset::RandomOffset) => {
                let angle = self.rng.random_range(0.0..std::f64::consts::TAU);
                let goal = self.agents[i].goals.actual + Vec2::from_bearing(angle) * self.params.r_c;
                self.agents[i].goals.assigned = goal;
                (Some(ResetKind::RandomOffset), Some(goal))
            }
        };
        let v = self.agents[i].input.v;
        let snap = ModeEntrySnapshot::basic(t_now, v);
        self.apply_switch(i, ModeId::GoToGoal, snap, None, tick);
        events.push(Event {
            tick,
            agent: self.agents[i].id,
            kind: EventKind::Switch {
                from: Some(from),
                to: ModeId::GoToGoal,
                reset: kind,
                new_goal,
            },
        });
    }

    fn enter_q1(
        &mut self,
        i: usize,
        orbit: OrbitSpec,
        partner: Option<AgentId>,
        t_now: f64,
        tick: u64,
        events: &mut Vec<Event>,
    ) {
        let from = self.agents[i].mode;
        let v = self.agents[i].input.v;
        let mut snap = ModeEntrySnapshot::basic(t_now, v);
        snap.orbit = Some(orbit);
        snap.k_v = orbit_speed_gain(v, self.agents[i].state.pos, &orbit);
        snap.partner = partner;
        self.apply_switch(i, ModeId::GoRound, snap, None, tick);
        events.push(Event {
            tick,
            agent: self.agents[i].id,
            kind: EventKind::Switch {
                from: Some(from),
                to: ModeId::GoRound,
                reset: None,
                new_goal: None,
            },
        });
    }

    fn enter_q3(
        &mut self,
        i: usize,
        partner: AgentId,
        role: ChangeURole,
        t_now: f64,
        tick: u64,
        events: &mut Vec<Event>,
    ) {
        let from = self.agents[i].mode;
        let v = self.agents[i].input.v;
        let mut snap = ModeEntrySnapshot::basic(t_now, v);
        snap.role = Some(role);
        snap.partner = Some(partner);
        let profile = CubicProfile::new(
            v,
            role.terminal_speed(&self.params),
            t_now,
            self.params.delta_t,
        );
        self.apply_switch(i, ModeId::ChangeU, snap, Some(profile), tick);
        events.push(Event {
            tick,
            agent: self.agents[i].id,
            kind: EventKind::Switch {
                from: Some(from),
                to: ModeId::ChangeU,
                reset: None,
                new_goal: None,
            },
        });
    }

    fn enter_q2(
        &mut self,
        i: usize,
        members: BTreeSet<AgentId>,
        leader: AgentId,
        t_now: f64,
        tick: u64,
        events: &mut Vec<Event>,
    ) {
        let from = self.agents[i].mode;
        let v = self.agents[i].input.v;
        let mut snap = ModeEntrySnapshot::basic(t_now, v);
        snap.leader = Some(leader);
        let me = self.agents[i].id;
        let profile = if me == leader {
            None
        } else {
            let leader_v = self.comm[self.idx_of(leader)].v;
            Some(CubicProfile::new(v, leader_v, t_now, self.params.delta_t))
        };
        self.apply_switch(i, ModeId::FollowLeader, snap, profile, tick);
        let a = &mut self.agents[i];
        a.ifw = members;
        a.leader = Some(leader);
        if me == leader {
            a.sub = Some(LeaderSubState {
                mode: LeaderSubMode::GoalSeek,
                snapshot: ModeEntrySnapshot::basic(t_now, v),
                profile: None,
                target: None,
                entered_tick: tick,
            });
        }
        events.push(Event {
            tick,
            agent: me,
            kind: EventKind::Switch {
                from: Some(from),
                to: ModeId::FollowLeader,
                reset: None,
                new_goal: None,
            },
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn set_leader_sub(
        &mut self,
        i: usize,
        mode: LeaderSubMode,
        orbit: Option<OrbitSpec>,
        target: Option<AgentId>,
        role: Option<ChangeURole>,
        t_now: f64,
        tick: u64,
        events: &mut Vec<Event>,
    ) {
        let v = self.agents[i].input.v;
        let mut snap = ModeEntrySnapshot::basic(t_now, v);
        let mut profile = None;
        match mode {
            LeaderSubMode::GoRound => {
                let orbit = orbit.expect("go-round sub carries an orbit");
                snap.orbit = Some(orbit);
                snap.k_v = orbit_speed_gain(v, self.agents[i].state.pos, &orbit);
            }
            LeaderSubMode::ChangeU => {
                let role = role.expect("change-u sub carries a role");
                snap.role = Some(role);
                profile = Some(CubicProfile::new(
                    v,
                    role.terminal_speed(&self.params),
                    t_now,
                    self.params.delta_t,
                ));
            }
            LeaderSubMode::GoalSeek => {}
        }
        self.agents[i].sub = Some(LeaderSubState {
            mode,
            snapshot: snap,
            profile,
            target,
            entered_tick: tick,
        });
        events.push(Event {
            tick,
            agent: self.agents[i].id,
            kind: EventKind::LeaderSub { sub: mode },
        });
    }

    fn apply_switch(
        &mut self,
        i: usize,
        to: ModeId,
        snapshot: ModeEntrySnapshot,
        profile: Option<CubicProfile>,
        tick: u64,
    ) {
        let a = &mut self.agents[i];
        a.mode = to;
        a.snapshot = snapshot;
        a.profile = profile;
        a.last_switch_tick = tick;
        if to != ModeId::FollowLeader {
            a.ifw.clear();
            a.leader = None;
            a.sub = None;
        }
    }

    /// Per-agent control laws evaluated against the frozen leader data,
    /// then held for the integration step.
    fn compute_controls(&mut self) {
        let t_now = self.clock_tick as f64 * self.dt;
        for i in 0..self.n() {
            let input = match self.agents[i].mode {
                ModeId::GoToGoal => {
                    let a = &self.agents[i];
                    go_to_goal_control(
                        &a.state,
                        a.goals.assigned,
                        &a.snapshot,
                        &self.gains,
                        &self.params,
                    )
                }
                ModeId::GoRound => {
                    let a = &self.agents[i];
                    go_round_control(&a.state, &a.snapshot, &self.gains, &self.params)
                        .unwrap_or(a.input)
                }
                ModeId::Loiter => {
                    let a = &self.agents[i];
                    loiter_control(&a.state, &a.snapshot, &self.gains, &self.params)
                        .unwrap_or(a.input)
                }
                ModeId::ChangeU => {
                    let a = &self.agents[i];
                    change_u_control(
                        a.profile.as_ref().expect("q3 has a profile"),
                        t_now,
                        &self.params,
                    )
                }
                ModeId::FollowLeader => {
                    let leader = self.agents[i].leader.expect("q2 carries a leader");
                    if leader == self.agents[i].id {
                        self.leader_control(i, t_now)
                    } else {
                        self.follower_control(i, leader, t_now)
                    }
                }
            };
            self.agents[i].input = input;
        }
    }

    fn leader_control(&self, i: usize, t_now: f64) -> ControlInput {
        let a = &self.agents[i];
        let sub = a.sub.as_ref().expect("q2 leader carries a sub state");
        match sub.mode {
            LeaderSubMode::GoalSeek => go_to_goal_control(
                &a.state,
                a.goals.assigned,
                &sub.snapshot,
                &self.gains,
                &self.params,
            ),
            LeaderSubMode::GoRound => {
                go_round_control(&a.state, &sub.snapshot, &self.gains, &self.params)
                    .unwrap_or(a.input)
            }
            LeaderSubMode::ChangeU => change_u_control(
                sub.profile.as_ref().expect("change-u sub has a profile"),
                t_now,
                &self.params,
            ),
        }
    }

    fn follower_control(&mut self, i: usize, leader: AgentId, t_now: f64) -> ControlInput {
        let leader_idx = self.idx_of(leader);
        let leader_v = self.comm[leader_idx].v;
        let leader_heading = self.comm[leader_idx].heading;
        let leader_omega = self.comm[leader_idx].omega;

        let delta_t = self.params.delta_t;
        let profile = self.agents[i]
            .profile
            .get_or_insert_with(|| CubicProfile::new(leader_v, leader_v, t_now, delta_t));
        // Re-fit on the δ_t grid: new start value is the old profile's
        // terminal, keeping the tracking profile C¹ across intervals.
        while t_now - profile.t_start >= delta_t {
            *profile = CubicProfile::new(profile.terminal, leader_v, profile.t_start + delta_t, delta_t);
        }
        let profile = *profile;
        follow_leader_control(
            &self.agents[i].state,
            &profile,
            t_now,
            leader_heading,
            leader_omega,
            &self.gains,
            &self.params,
        )
    }

    fn rebuild_comm(&mut self) {
        let n = self.n();
        let mut packages: Vec<CommPackage> = self
            .agents
            .iter()
            .map(|a| CommPackage {
                id: a.id,
                at_goal: a.mode == ModeId::Loiter,
                at_obstacle: matches!(a.mode, ModeId::GoRound | ModeId::Loiter),
                ifw: if a.mode == ModeId::FollowLeader {
                    a.ifw.clone()
                } else {
                    BTreeSet::new()
                },
                icw: BTreeSet::new(),
                orbit: match a.mode {
                    ModeId::GoRound | ModeId::Loiter => a.snapshot.orbit,
                    _ => None,
                },
                pos: a.state.pos,
                heading: a.state.heading.rad(),
                v: a.input.v,
                omega: a.input.omega,
                temp_goal: a.goals.assigned,
                actual_goal: a.goals.actual,
                mode: a.mode,
                leader: if a.mode == ModeId::FollowLeader {
                    a.leader
                } else {
                    None
                },
            })
            .collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if packages[i].pos.distance(packages[j].pos) <= self.params.r_comm {
                    let (id_i, id_j) = (packages[i].id, packages[j].id);
                    packages[i].icw.insert(id_j);
                    packages[j].icw.insert(id_i);
                }
            }
        }
        self.comm = packages;
    }
}

/// Runs a validated scenario to completion and returns the full trace.
pub fn simulate(scenario: &Scenario) -> WorldTrace {
    let mut world = World::new(scenario);
    let n = world.n();
    let mut trace = WorldTrace {
        params: world.params,
        dt: world.dt,
        seed: scenario.seed,
        agents: world
            .agents
            .iter()
            .map(|a| AgentMeta {
                id: a.id,
                goal: a.goals.actual,
            })
            .collect(),
        rows: Vec::with_capacity((scenario.horizon as usize + 1) * n),
        events: Vec::new(),
        ticks: scenario.horizon,
    };
    for a in &world.agents {
        trace.events.push(Event {
            tick: 0,
            agent: a.id,
            kind: EventKind::Switch {
                from: None,
                to: ModeId::GoToGoal,
                reset: None,
                new_goal: None,
            },
        });
    }
    for _ in 0..scenario.horizon {
        let out = world.tick();
        trace.rows.extend(out.rows);
        trace.events.extend(out.events);
    }
    trace.rows.extend(world.final_rows());
    trace
}
