use skylane_core::monitor;
use skylane_core::protocol::simulate;
use skylane_core::scenario;

#[test]
fn table2_diagnostics() {
    let s = scenario::table2();
    s.validate().unwrap();
    let start = std::time::Instant::now();
    let trace = simulate(&s);
    let elapsed = start.elapsed();
    println!("simulated {} ticks x {} agents in {elapsed:?}", trace.ticks, trace.n_agents());

    let report = monitor::run_all(&trace);
    println!(
        "verdicts: safety={} bounds={} smooth={} zeno={} conv={}",
        report.safety.pass,
        report.bounds.pass,
        report.smoothness.pass,
        report.zeno.pass,
        report.convergence.pass
    );
    if let Some(m) = &report.safety.min {
        println!("min distance {:.4} at t={:.2} pair {:?}", m.value, m.time, m.pair);
    }
    for a in &report.convergence.per_agent {
        println!(
            "agent {:2}: conv={:?} final_mode={:?} final_dist={:.3}",
            a.id, a.converged_at, a.final_mode, a.final_goal_distance
        );
    }
    for a in &report.zeno.per_agent {
        println!("agent {:2}: switches={} min_dwell={:?}", a.id, a.switches, a.min_dwell);
    }
    for a in &report.smoothness.per_agent {
        println!(
            "agent {:2}: max_jump={:.2e} rate_viol={} omega_jumps={}/{}",
            a.id, a.max_switch_jump, a.rate_violations, a.omega_jumps, a.omega_jump_allowance
        );
    }
    // Mode histogram over time and arrival speeds.
    let n = trace.n_agents();
    let mut final_speeds = vec![0.0; n];
    for (k, row) in trace.rows_at(trace.ticks).iter().enumerate() {
        final_speeds[k] = row.v;
    }
    println!("final speeds: {final_speeds:?}");
    let mut event_count = std::collections::BTreeMap::new();
    for e in &trace.events {
        let label = match &e.kind {
            skylane_core::trace::EventKind::Switch { from, to, reset, .. } => format!(
                "{}->{}{}",
                from.map_or("init", |m| m.label()),
                to.label(),
                reset.map(|r| format!(" [{}]", r.label())).unwrap_or_default()
            ),
            skylane_core::trace::EventKind::LeaderSub { sub } => format!("sub {}", sub.label()),
        };
        *event_count.entry(label).or_insert(0usize) += 1;
    }
    println!("event histogram: {event_count:#?}");
}
