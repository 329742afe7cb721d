use skylane_core::monitor;
use skylane_core::protocol::World;
use skylane_core::scenario;
use skylane_core::trace::{AgentMeta, Event, EventKind, WorldTrace};
use skylane_core::protocol::ModeId;

fn run_with(s: &scenario::Scenario, k_w1: f64) -> WorldTrace {
    let mut world = World::new(s);
    world.gains.k_w1 = k_w1;
    let n = world.n();
    let mut trace = WorldTrace {
        params: world.params,
        dt: world.dt,
        seed: s.seed,
        agents: world
            .agents
            .iter()
            .map(|a| AgentMeta { id: a.id, goal: a.goals.actual })
            .collect(),
        rows: Vec::with_capacity((s.horizon as usize + 1) * n),
        events: Vec::new(),
        ticks: s.horizon,
    };
    for a in &world.agents {
        trace.events.push(Event {
            tick: 0,
            agent: a.id,
            kind: EventKind::Switch { from: None, to: ModeId::GoToGoal, reset: None, new_goal: None },
        });
    }
    for _ in 0..s.horizon {
        let out = world.tick();
        trace.rows.extend(out.rows);
        trace.events.extend(out.events);
    }
    trace.rows.extend(world.final_rows());
    trace
}

#[test]
fn diagnose_best() {
    let mut s = scenario::table2();
    for (k, agent) in s.agents.iter_mut().enumerate() {
        agent.speed = Some(1.2 + 0.35 * k as f64 / 9.0);
    }
    s.validate().unwrap();
    let trace = run_with(&s, 0.5);
    let report = monitor::run_all(&trace);
    for (a, z) in report
        .convergence
        .per_agent
        .iter()
        .zip(report.zeno.per_agent.iter())
    {
        let idx = trace.agent_index(a.id).unwrap();
        let last = &trace.rows_at(trace.ticks)[idx];
        println!(
            "agent {:2}: conv={:?} mode={} dist={:.3} v={:.3} temp=({:.1},{:.1}) goal=({:.1},{:.1}) sw={}",
            a.id,
            a.converged_at,
            last.mode.label(),
            a.final_goal_distance,
            last.v,
            last.temp_goal.x,
            last.temp_goal.y,
            trace.agents[idx].goal.x,
            trace.agents[idx].goal.y,
            z.switches,
        );
    }
    // When did each agent last switch and to what?
    for meta in &trace.agents {
        let last_ev = trace
            .events_for(meta.id)
            .filter(|e| e.is_switch())
            .last()
            .unwrap();
        println!(
            "agent {:2}: last switch t={:.1} {:?}",
            meta.id,
            trace.time_of(last_ev.tick),
            last_ev.kind
        );
    }

    // Zoom into the critical encounter between agents 1 and 8.
    let (ia, ib) = (
        trace.agent_index(1).unwrap(),
        trace.agent_index(8).unwrap(),
    );
    for tick in (34_50..37_60).step_by(20) {
        let rows = trace.rows_at(tick as u64 * 1);
        let (a, b) = (&rows[ia], &rows[ib]);
        println!(
            "t={:6.2} d={:5.3} | a1 p=({:6.2},{:6.2}) th={:5.2} v={:.2} w={:+.2} {} orb={:?} | a8 p=({:6.2},{:6.2}) th={:5.2} v={:.2} w={:+.2} {} orb={:?}",
            trace.time_of(a.tick),
            a.pos.distance(b.pos),
            a.pos.x, a.pos.y, a.heading, a.v, a.omega, a.mode.label(),
            a.orbit.map(|o| ((o.center.x * 100.0).round() / 100.0, (o.center.y * 100.0).round() / 100.0, o.radius)),
            b.pos.x, b.pos.y, b.heading, b.v, b.omega, b.mode.label(),
            b.orbit.map(|o| ((o.center.x * 100.0).round() / 100.0, (o.center.y * 100.0).round() / 100.0, o.radius)),
        );
    }
    for e in &trace.events {
        let t = trace.time_of(e.tick);
        if (30.0..45.0).contains(&t) && (e.agent == 1 || e.agent == 8) {
            println!("event t={t:.2} agent {} {:?}", e.agent, e.kind);
        }
    }
}

#[test]
fn tune_table2() {
    for (label, speeds) in [
        ("uniform 1.5", vec![1.5; 10]),
        (
            "spread 1.2..1.55",
            (0..10).map(|k| 1.2 + 0.35 * k as f64 / 9.0).collect::<Vec<_>>(),
        ),
        (
            "alt 1.25/1.5",
            (0..10).map(|k| if k % 2 == 0 { 1.25 } else { 1.5 }).collect(),
        ),
        (
            "spread shuffled",
            vec![1.33, 1.5, 1.24, 1.42, 1.55, 1.28, 1.47, 1.36, 1.52, 1.21],
        ),
    ] {
        for k_w1 in [0.0415, 0.15, 0.5] {
            let mut s = scenario::table2();
            for (agent, v) in s.agents.iter_mut().zip(speeds.iter()) {
                agent.speed = Some(*v);
            }
            s.validate().unwrap();
            let trace = run_with(&s, k_w1);
            let report = monitor::run_all(&trace);
            let min = report.safety.min.as_ref().unwrap();
            let conv = report
                .convergence
                .per_agent
                .iter()
                .filter(|a| a.converged_at.is_some())
                .count();
            let max_switch = report.zeno.per_agent.iter().map(|a| a.switches).max().unwrap();
            let dwell_ok = report.zeno.pass;
            println!(
                "{label:<18} k_w1={k_w1:<7}: min_d={:.3} (t={:6.1} {:?}) conv={conv}/10 max_sw={max_switch} zeno_ok={dwell_ok} smooth={}",
                min.value, min.time, min.pair, report.smoothness.pass
            );
        }
    }
}
