//! Scenario definition, validation against the initial-condition and goal
//! assumptions, named built-in scenarios, and random scenario generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{InfeasibleParams, Params, ParamsSpec};
use crate::geometry::Vec2;
use crate::AgentId;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub id: AgentId,
    pub start: Vec2,
    pub heading: f64,
    pub goal: Vec2,
    /// Initial linear speed; defaults to (v_min+v_max)/2.
    #[serde(default)]
    pub speed: Option<f64>,
}

/// One simulation setup: parameters, agents, seed, horizon, and step size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub dt: f64,
    /// Number of integration steps.
    pub horizon: u64,
    pub params: ParamsSpec,
    pub agents: Vec<ScenarioAgent>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario document is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Params(#[from] InfeasibleParams),
    #[error("duplicate agent id {0}")]
    DuplicateId(AgentId),
    #[error("agent {0} has a non-finite field")]
    NonFinite(AgentId),
    #[error("agent {id} initial speed {speed} outside [{v_min}, {v_max}]")]
    BadSpeed {
        id: AgentId,
        speed: f64,
        v_min: f64,
        v_max: f64,
    },
    #[error("dt must be positive (got {0})")]
    BadDt(f64),
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("scenario needs at least one agent")]
    NoAgents,
    #[error(
        "goal separation assumption violated: agents {a} and {b} have goals {dist} apart, need > {bound} (R_c + 2 r_c)"
    )]
    GoalAssumption { a: AgentId, b: AgentId, dist: f64, bound: f64 },
    #[error(
        "initial separation assumption violated: agents {a} and {b} start {dist} apart, need > {bound} (R_c)"
    )]
    InitAssumption { a: AgentId, b: AgentId, dist: f64, bound: f64 },
    #[error("unknown built-in scenario '{0}' (expected table2, reassign3, or random-N)")]
    UnknownBuiltin(String),
    #[error("could not place {kind} for agent {index} after {attempts} rejection-sampling attempts; box too dense for the separation constraint")]
    Infeasible {
        kind: &'static str,
        index: usize,
        attempts: usize,
    },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Scenario {
    /// Validates the document: feasible parameters, unique ids, finite
    /// fields, both separation assumptions. Returns the derived params.
    pub fn validate(&self) -> Result<Params, ScenarioError> {
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(ScenarioError::BadDt(self.dt));
        }
        if self.horizon == 0 {
            return Err(ScenarioError::BadHorizon);
        }
        if self.agents.is_empty() {
            return Err(ScenarioError::NoAgents);
        }
        let params = self.params.derive()?;

        let mut seen = std::collections::BTreeSet::new();
        for a in &self.agents {
            if !seen.insert(a.id) {
                return Err(ScenarioError::DuplicateId(a.id));
            }
            if !(a.start.is_finite() && a.goal.is_finite() && a.heading.is_finite()) {
                return Err(ScenarioError::NonFinite(a.id));
            }
            if let Some(s) = a.speed {
                if !(params.v_min..=params.v_max).contains(&s) {
                    return Err(ScenarioError::BadSpeed {
                        id: a.id,
                        speed: s,
                        v_min: params.v_min,
                        v_max: params.v_max,
                    });
                }
            }
        }

        let goal_bound = params.r_comm + 2.0 * params.r_c;
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                let dist = a.goal.distance(b.goal);
                if dist <= goal_bound {
                    return Err(ScenarioError::GoalAssumption {
                        a: a.id,
                        b: b.id,
                        dist,
                        bound: goal_bound,
                    });
                }
                let dist = a.start.distance(b.start);
                if dist <= params.r_comm {
                    return Err(ScenarioError::InitAssumption {
                        a: a.id,
                        b: b.id,
                        dist,
                        bound: params.r_comm,
                    });
                }
            }
        }
        Ok(params)
    }

    /// Derived params for a scenario that has already been validated.
    pub fn params(&self) -> Params {
        self.params.derive().expect("scenario was validated")
    }

    pub fn from_toml(doc: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(doc)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let doc = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&doc)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_toml()).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Resolves a built-in name: "table2", "reassign3", or "random-N".
    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        match name {
            "table2" => Ok(table2()),
            "reassign3" => Ok(reassign3()),
            _ => {
                if let Some(n) = name.strip_prefix("random-").and_then(|s| s.parse().ok()) {
                    let params = reference_params();
                    generate_random_scenario(
                        n,
                        1,
                        &params,
                        (Vec2::new(-60.0, -60.0), Vec2::new(60.0, 60.0)),
                    )
                } else {
                    Err(ScenarioError::UnknownBuiltin(name.to_string()))
                }
            }
        }
    }
}

/// The reference parameter set used by the built-in scenarios:
/// v ∈ [1.2, 1.8], ω_max = 0.5, d_m = 0.41, R_c = 1.64.
pub fn reference_params() -> ParamsSpec {
    ParamsSpec::new(1.2, 1.8, 0.5, 0.41).with_r_comm(1.64)
}

fn agent(id: AgentId, start: (f64, f64), goal: (f64, f64), speed: Option<f64>) -> ScenarioAgent {
    let start = Vec2::new(start.0, start.1);
    let goal = Vec2::new(goal.0, goal.1);
    ScenarioAgent {
        id,
        start,
        heading: (goal - start).bearing(),
        goal,
        speed,
    }
}

/// Ten-agent crossover scenario. Initial headings point at the goals (the
/// source gives positions only).
pub fn table2() -> Scenario {
    Scenario {
        seed: 1,
        dt: 0.01,
        horizon: 50_000,
        params: reference_params(),
        agents: vec![
            agent(1, (25.0, 37.5), (-30.0, -60.0), None),
            agent(2, (50.0, 20.0), (-60.0, -30.0), None),
            agent(3, (50.0, 0.0), (-60.0, 0.0), None),
            agent(4, (50.0, -20.0), (-60.0, 30.0), None),
            agent(5, (25.0, -37.5), (-30.0, 60.0), None),
            agent(6, (-25.0, -37.5), (30.0, 60.0), None),
            agent(7, (-50.0, -20.0), (60.0, 30.0), None),
            agent(8, (-50.0, 0.0), (60.0, 0.0), None),
            agent(9, (-50.0, 20.0), (60.0, -30.0), None),
            agent(10, (-25.0, 37.5), (30.0, -60.0), None),
        ],
    }
}

/// Three-agent temporary-goal-reassignment scenario: agents 1 and 2 meet
/// near goal 1 while still in transit, get re-pointed at goal 2, meet
/// agent 3 near goal 2, end up all bound for goal 3, and unwind once the
/// slower agent 3 arrives. Agents 1 and 2 run faster than agent 3.
pub fn reassign3() -> Scenario {
    Scenario {
        seed: 7,
        dt: 0.01,
        horizon: 50_000,
        params: reference_params(),
        agents: vec![
            agent(1, (-18.0, 0.0), (0.0, 0.0), Some(1.55)),
            agent(2, (-13.33, -9.71), (5.0, 10.0), Some(1.5)),
            agent(3, (10.0, -31.8), (0.0, 22.0), Some(1.25)),
        ],
    }
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Random scenario: n agents with starts and goals uniform in the box,
/// rejection-sampled to satisfy both separation assumptions; headings
/// uniform in (−π, π].
pub fn generate_random_scenario(
    n: usize,
    seed: u64,
    params: &ParamsSpec,
    bounds: (Vec2, Vec2),
) -> Result<Scenario, ScenarioError> {
    let derived = params.derive()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = bounds;
    let sample = |rng: &mut ChaCha8Rng| {
        Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y))
    };

    let mut starts: Vec<Vec2> = Vec::with_capacity(n);
    let mut goals: Vec<Vec2> = Vec::with_capacity(n);
    let goal_bound = derived.r_comm + 2.0 * derived.r_c;
    for index in 0..n {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = sample(&mut rng);
            if starts.iter().all(|q| q.distance(p) > derived.r_comm) {
                starts.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::Infeasible {
                kind: "a start position",
                index,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
        placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = sample(&mut rng);
            if goals.iter().all(|q| q.distance(p) > goal_bound) {
                goals.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::Infeasible {
                kind: "a goal position",
                index,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    let agents = (0..n)
        .map(|k| ScenarioAgent {
            id: k as AgentId + 1,
            start: starts[k],
            heading: crate::geometry::wrap_angle(
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            ),
            goal: goals[k],
            speed: None,
        })
        .collect();

    let scenario = Scenario {
        seed,
        dt: 0.01,
        horizon: 50_000,
        params: *params,
        agents,
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table2_validates_and_matches_source() {
        let s = table2();
        s.validate().unwrap();
        assert_eq!(s.agents[0].start, Vec2::new(25.0, 37.5));
        assert_eq!(s.agents[0].goal, Vec2::new(-30.0, -60.0));
        assert_eq!(s.agents.len(), 10);
        assert_eq!(s.horizon, 50_000);
        assert_eq!(s.dt, 0.01);
    }

    #[test]
    fn reassign3_validates() {
        reassign3().validate().unwrap();
    }

    #[test]
    fn goal_assumption_boundary_rejected() {
        let mut s = table2();
        let params = s.params();
        let bound = params.r_comm + 2.0 * params.r_c;
        // Place two goals just inside the bound.
        s.agents[1].goal = s.agents[0].goal + Vec2::new(bound - 0.01, 0.0);
        match s.validate() {
            Err(ScenarioError::GoalAssumption { a: 1, b: 2, .. }) => {}
            other => panic!("expected GoalAssumption, got {other:?}"),
        }
    }

    #[test]
    fn init_assumption_rejected() {
        let mut s = table2();
        s.agents[1].start = s.agents[0].start + Vec2::new(1.0, 0.0);
        match s.validate() {
            Err(ScenarioError::InitAssumption { .. }) => {}
            other => panic!("expected InitAssumption, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut s = table2();
        s.agents[1].id = s.agents[0].id;
        match s.validate() {
            Err(ScenarioError::DuplicateId(_)) => {}
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn toml_round_trip() {
        let s = table2();
        let doc = s.to_toml();
        let back = Scenario::from_toml(&doc).unwrap();
        assert_eq!(back.agents.len(), s.agents.len());
        for (a, b) in s.agents.iter().zip(back.agents.iter()) {
            assert_eq!(a.start, b.start);
            assert_eq!(a.goal, b.goal);
            assert_eq!(a.heading, b.heading);
        }
        assert_eq!(back.seed, s.seed);
    }

    #[test]
    fn random_generation_validates_for_many_seeds() {
        let params = reference_params();
        let bounds = (Vec2::new(-60.0, -60.0), Vec2::new(60.0, 60.0));
        for n in [2usize, 5, 10, 20] {
            for seed in 0..25 {
                let s = generate_random_scenario(n, seed, &params, bounds)
                    .unwrap_or_else(|e| panic!("n={n} seed={seed}: {e}"));
                s.validate().unwrap();
                assert_eq!(s.agents.len(), n);
            }
        }
    }

    #[test]
    fn random_generation_single_agent_always_succeeds() {
        let params = reference_params();
        let s = generate_random_scenario(
            1,
            99,
            &params,
            (Vec2::new(-5.0, -5.0), Vec2::new(5.0, 5.0)),
        )
        .unwrap();
        assert_eq!(s.agents.len(), 1);
    }

    #[test]
    fn random_generation_overdense_fails() {
        let params = reference_params();
        let err = generate_random_scenario(
            100,
            1,
            &params,
            (Vec2::new(-5.0, -5.0), Vec2::new(5.0, 5.0)),
        )
        .unwrap_err();
        match err {
            ScenarioError::Infeasible { .. } => {}
            other => panic!("expected Infeasible, got {other:?}"),
        }
    }

    #[test]
    fn builtin_names_resolve() {
        assert!(Scenario::builtin("table2").is_ok());
        assert!(Scenario::builtin("reassign3").is_ok());
        let r = Scenario::builtin("random-5").unwrap();
        assert_eq!(r.agents.len(), 5);
        assert!(matches!(
            Scenario::builtin("nope"),
            Err(ScenarioError::UnknownBuiltin(_))
        ));
    }
}
