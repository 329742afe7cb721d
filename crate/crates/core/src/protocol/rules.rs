//! Pure decision rules of the switching law: neighbor sets, leader
//! election, change-u role assignment, orbit construction, and the
//! goal-reset formulas. Everything here reads only frozen per-tick data,
//! so symmetric conflicts resolve symmetrically on both sides.

use std::collections::BTreeSet;

use crate::controllers::OrbitSpec;
use crate::dynamics::Params;
use crate::geometry::{
    angular_separation, predicted_min_distance, time_to_closest_approach, wrap_angle,
    ClosestApproach, Vec2,
};
use crate::protocol::{CommPackage, ModeId};
use crate::AgentId;

/// Kinematic facts one agent needs about another, extracted from a frozen
/// communication package.
#[derive(Clone, Copy, Debug)]
pub struct AgentView {
    pub id: AgentId,
    pub pos: Vec2,
    pub heading: f64,
    pub v: f64,
}

impl AgentView {
    pub fn from_comm(c: &CommPackage) -> Self {
        AgentView {
            id: c.id,
            pos: c.pos,
            heading: c.heading,
            v: c.v,
        }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_bearing(self.heading) * self.v
    }
}

/// Physical neighbor set: agents within the closed communication ball.
pub fn neighbors_of(packages: &[CommPackage], i: usize, r_comm: f64) -> BTreeSet<AgentId> {
    let me = &packages[i];
    packages
        .iter()
        .filter(|p| p.id != me.id && p.pos.distance(me.pos) <= r_comm)
        .map(|p| p.id)
        .collect()
}

/// Neighbor set for guard evaluation: members of a formation are replaced
/// by their leader (decisions about a formation are made with respect to
/// its leader), and members of `own_formation` are dropped entirely.
pub fn effective_neighbors(
    packages: &[CommPackage],
    i: usize,
    r_comm: f64,
    own_formation: &BTreeSet<AgentId>,
) -> BTreeSet<AgentId> {
    let me = &packages[i];
    let mut out = BTreeSet::new();
    for p in packages {
        if p.id == me.id || p.pos.distance(me.pos) > r_comm {
            continue;
        }
        if own_formation.contains(&p.id) {
            continue;
        }
        let repr = if p.mode == ModeId::FollowLeader {
            p.leader.unwrap_or(p.id)
        } else {
            p.id
        };
        if repr != me.id && !own_formation.contains(&repr) {
            out.insert(repr);
        }
    }
    out
}

/// Leader election: the member nearest the geometric center wins, ties by
/// smallest label.
pub fn elect_leader(members: &[(AgentId, Vec2)]) -> AgentId {
    assert!(!members.is_empty());
    let inv = 1.0 / members.len() as f64;
    let centroid = members
        .iter()
        .fold(Vec2::ZERO, |acc, (_, p)| acc + *p * inv);
    members
        .iter()
        .min_by(|(ida, pa), (idb, pb)| {
            let da = pa.distance(centroid);
            let db = pb.distance(centroid);
            da.partial_cmp(&db).unwrap().then(ida.cmp(idb))
        })
        .unwrap()
        .0
}

/// True when `other` sits ahead of `me`, within arcsin(d_m/R_c) of `me`'s
/// heading.
pub fn is_ahead(me: &AgentView, other: &AgentView, params: &Params) -> bool {
    let bearing = (other.pos - me.pos).bearing();
    let cone = (params.d_m / params.r_comm).asin();
    wrap_angle(me.heading - bearing).abs() <= cone
}

/// Change-u role assignment. Returns (decelerator, accelerator).
pub fn assign_changeu_roles(a: &AgentView, b: &AgentView, params: &Params) -> (AgentId, AgentId) {
    if is_ahead(a, b, params) {
        // b is in front of a: a slows down, b speeds up.
        (a.id, b.id)
    } else if is_ahead(b, a, params) {
        (b.id, a.id)
    } else if a.v < b.v {
        (a.id, b.id)
    } else if b.v < a.v {
        (b.id, a.id)
    } else if a.id < b.id {
        (a.id, b.id)
    } else {
        (b.id, a.id)
    }
}

/// Fresh-pair orbit radius from the time to closest approach:
/// ((v_i+v_j)/2)·t_min. Falls back to max(r_min, distance/2) for
/// non-approaching pairs.
pub fn pair_orbit_radius(decider: &AgentView, other: &AgentView, params: &Params) -> f64 {
    match time_to_closest_approach(
        decider.pos,
        other.pos,
        decider.velocity(),
        other.velocity(),
    ) {
        ClosestApproach::At(t_min) if t_min > 0.0 => 0.5 * (decider.v + other.v) * t_min,
        _ => params.r_min.max(0.5 * decider.pos.distance(other.pos)),
    }
}

/// Orbit for one side of a fresh pair conflict: center one radius ahead
/// of the agent's own heading, so the agent sits on its ring and the
/// counter-clockwise circulation opens with a decisive right-hand swing;
/// a symmetric head-on pair produces mirrored orbits and a point-symmetric
/// sidestep. The radius (identical for both sides, the formula is
/// symmetric) is floored at the minimum turning radius r_min — the
/// go-round safety argument presumes a flyable circle, and at
/// sensing-range entry the raw formula yields radii well below what the
/// turn-rate bound can track.
pub fn pair_orbit(decider: &AgentView, other: &AgentView, params: &Params) -> OrbitSpec {
    let radius = pair_orbit_radius(decider, other, params).max(params.r_min);
    OrbitSpec {
        center: decider.pos + Vec2::from_bearing(decider.heading) * radius,
        radius,
    }
}

/// Orbit for joining an existing stack: same center, one ring outside the
/// largest same-center orbit broadcast by any neighbor.
pub fn join_orbit(
    packages: &[CommPackage],
    neighbor_ids: &BTreeSet<AgentId>,
    anchor: &OrbitSpec,
    params: &Params,
) -> OrbitSpec {
    let mut max_radius = anchor.radius;
    for p in packages {
        if !neighbor_ids.contains(&p.id) {
            continue;
        }
        if let Some(orbit) = &p.orbit {
            if orbit.center == anchor.center && orbit.radius > max_radius {
                max_radius = orbit.radius;
            }
        }
    }
    OrbitSpec {
        center: anchor.center,
        radius: max_radius + 2.0 * params.d_m,
    }
}

/// A_41: straight-line extrapolation predicts the pair closing within d_m.
pub fn a41_predicts_conflict(a: &AgentView, b: &AgentView, params: &Params) -> bool {
    predicted_min_distance(a.pos, b.pos, a.velocity(), b.velocity()) <= params.d_m
}

/// Rate of change of the squared pair distance, in the guard's form
/// v_i r_ijᵀη_i − v_j r_ijᵀη_j. Positive means separating.
pub fn separation_rate(a: &AgentView, b: &AgentView) -> f64 {
    let r_ij = a.pos - b.pos;
    a.v * r_ij.dot(Vec2::from_bearing(a.heading)) - b.v * r_ij.dot(Vec2::from_bearing(b.heading))
}

/// True when the pair's angular separation mandates go-round resolution.
pub fn head_on_like(a: &AgentView, b: &AgentView, params: &Params) -> bool {
    angular_separation(a.heading, b.heading) >= params.theta_c
}

/// Line-of-sight exit test for an orbit mode: heading within δ of the
/// bearing to the (assigned) goal, with the orbit center falling behind
/// (cosine of the bearing difference negative) so the agent does not
/// re-enter the ring it just left.
pub fn orbit_exit_line_of_sight(
    pos: Vec2,
    heading: f64,
    orbit_center: Vec2,
    goal: Vec2,
    params: &Params,
) -> bool {
    let goal_bearing = (goal - pos).bearing();
    let los = wrap_angle(heading - goal_bearing).abs() < params.delta_los;
    let center_bearing = (orbit_center - pos).bearing();
    los && wrap_angle(center_bearing - goal_bearing).cos() < 0.0
}

/// R(q2,q4): perpendicular offset of length r_c onto the side of the
/// agent's heading away from the goal bearing. sign(0) resolves to +1.
pub fn free_side_offset(pos: Vec2, heading: f64, goal: Vec2, r_c: f64) -> Vec2 {
    let bearing = (goal - pos).bearing();
    let s = wrap_angle(bearing - heading).sin();
    let m = if s >= 0.0 { 1.0 } else { -1.0 };
    pos + Vec2::new(m * heading.sin(), -m * heading.cos()) * r_c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ParamsSpec;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vi_params() -> Params {
        ParamsSpec::new(1.2, 1.8, 0.5, 0.41)
            .with_r_comm(1.64)
            .derive()
            .unwrap()
    }

    fn view(id: AgentId, pos: Vec2, heading: f64, v: f64) -> AgentView {
        AgentView {
            id,
            pos,
            heading,
            v,
        }
    }

    #[test]
    fn elect_leader_tie_breaks_by_label() {
        let a = (7, Vec2::new(0.0, 0.0));
        let b = (3, Vec2::new(2.0, 0.0));
        assert_eq!(elect_leader(&[a, b]), 3);
    }

    #[test]
    fn elect_leader_collinear_middle_wins() {
        let members = [
            (1, Vec2::new(-1.0, 0.0)),
            (2, Vec2::new(0.0, 0.0)),
            (3, Vec2::new(1.0, 0.0)),
        ];
        assert_eq!(elect_leader(&members), 2);
    }

    #[test]
    fn elect_leader_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let members: Vec<(AgentId, Vec2)> = (0..5)
                .map(|k| {
                    (
                        k + 1,
                        Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
                    )
                })
                .collect();
            let inv = 1.0 / members.len() as f64;
            let centroid = members
                .iter()
                .fold(Vec2::ZERO, |acc, (_, p)| acc + *p * inv);
            let mut best = members[0];
            for m in &members[1..] {
                if m.1.distance(centroid) < best.1.distance(centroid) {
                    *(&mut best) = *m;
                }
            }
            assert_eq!(elect_leader(&members), best.0);
        }
    }

    #[test]
    fn changeu_roles_front_agent_accelerates() {
        let params = vi_params();
        let behind = view(1, Vec2::ZERO, 0.0, 1.5);
        let front = view(2, Vec2::new(1.0, 0.0), 0.1, 1.5);
        // front is dead ahead of behind: behind decelerates.
        assert_eq!(assign_changeu_roles(&behind, &front, &params), (1, 2));
        assert_eq!(assign_changeu_roles(&front, &behind, &params), (1, 2));
    }

    #[test]
    fn changeu_roles_slower_decelerates() {
        let params = vi_params();
        let a = view(1, Vec2::ZERO, 0.0, 1.3);
        let b = view(2, Vec2::new(0.0, 1.0), 0.2, 1.6);
        assert_eq!(assign_changeu_roles(&a, &b, &params), (1, 2));
    }

    #[test]
    fn changeu_roles_label_tie_break() {
        let params = vi_params();
        let a = view(7, Vec2::ZERO, 0.0, 1.5);
        let b = view(2, Vec2::new(0.0, 1.0), 0.2, 1.5);
        assert_eq!(assign_changeu_roles(&a, &b, &params), (2, 7));
    }

    #[test]
    fn pair_radius_formula_symmetric_head_on() {
        // Closed form D/(v_i+v_j) for the time, giving r_ob = D/2 with the
        // raw formula; the midway center follows from symmetry.
        let params = vi_params();
        let a = view(1, Vec2::ZERO, 0.0, 1.5);
        let b = view(2, Vec2::new(1.64, 0.0), std::f64::consts::PI, 1.5);
        assert_abs_diff_eq!(pair_orbit_radius(&a, &b, &params), 0.82, epsilon = 1e-12);
        assert_abs_diff_eq!(pair_orbit_radius(&b, &a, &params), 0.82, epsilon = 1e-12);
        let mid_a = a.pos + Vec2::from_bearing(a.heading) * 0.82;
        let mid_b = b.pos + Vec2::from_bearing(b.heading) * 0.82;
        assert_abs_diff_eq!(mid_a.x, mid_b.x, epsilon = 1e-12);
        // The flyable orbit floors that radius at r_min.
        let orbit = pair_orbit(&a, &b, &params);
        assert_abs_diff_eq!(orbit.radius, params.r_min, epsilon = 1e-12);
        assert_abs_diff_eq!(orbit.center.x, params.r_min, epsilon = 1e-12);
    }

    #[test]
    fn pair_orbit_receding_uses_fallback() {
        let params = vi_params();
        let a = view(1, Vec2::ZERO, std::f64::consts::PI, 1.5);
        let b = view(2, Vec2::new(1.0, 0.0), 0.0, 1.5);
        assert_abs_diff_eq!(
            pair_orbit_radius(&a, &b, &params),
            params.r_min,
            epsilon = 1e-12
        ); // max(r_min, 0.5)
        let orbit = pair_orbit(&a, &b, &params);
        assert_abs_diff_eq!(orbit.radius, params.r_min, epsilon = 1e-12);
    }

    #[test]
    fn free_side_offset_example() {
        // Heading 0, goal at bearing +90°: m = +1, offset (0, −r_c).
        let p = free_side_offset(Vec2::ZERO, 0.0, Vec2::new(0.0, 5.0), 3.0);
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn separation_rate_sign() {
        let closing_a = view(1, Vec2::ZERO, 0.0, 1.5);
        let closing_b = view(2, Vec2::new(2.0, 0.0), std::f64::consts::PI, 1.5);
        assert!(separation_rate(&closing_a, &closing_b) < 0.0);
        let receding_b = view(2, Vec2::new(2.0, 0.0), 0.0, 1.8);
        assert!(separation_rate(&closing_a, &receding_b) > 0.0);
        // Symmetric under swapping the pair.
        assert_abs_diff_eq!(
            separation_rate(&closing_a, &closing_b),
            separation_rate(&closing_b, &closing_a),
            epsilon = 1e-12
        );
    }
}
