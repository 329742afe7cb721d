use skylane_core::controllers::*;
use skylane_core::dynamics::{step, AgentState, ParamsSpec};
use skylane_core::geometry::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sweep() {
    let params = ParamsSpec::new(1.2, 1.8, 0.5, 0.41)
        .with_r_comm(1.64)
        .derive()
        .unwrap();
    let r = params.r_c;
    let orbit = OrbitSpec { center: Vec2::ZERO, radius: r };
    let dt = 0.01;
    for k_w in [0.0415, 0.1, 0.2, 0.35, 0.5, 0.8] {
        let mut worst: f64 = 0.0;
        let mut worst_final: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let rho = rng.random_range(0.2 * r..3.0 * r);
            let ang = rng.random_range(-3.14..3.14);
            let pos = Vec2::from_bearing(ang) * rho;
            let v0 = rng.random_range(1.2..1.4);
            let mut state = AgentState::new(pos, limit_cycle_heading(pos, &orbit));
            let k_v = orbit_speed_gain(v0, pos, &orbit);
            let mut snap = ModeEntrySnapshot::basic(0.0, v0);
            snap.orbit = Some(orbit);
            snap.k_v = k_v;
            let gains = GainSet { k_w1: k_w, k_w2: 0.001, k_w4: 0.027, k_w5: k_w };
            let mut t_conv = f64::INFINITY;
            let total = 40.0;
            let n = (total / dt) as usize;
            let mut sustained_from = f64::INFINITY;
            for k in 0..n {
                let u = loiter_control(&state, &snap, &gains, &params).unwrap();
                state = step(state, u, dt);
                let err = ((state.pos).norm() - r).abs();
                let t = (k + 1) as f64 * dt;
                if err < 1e-3 {
                    if sustained_from.is_infinite() {
                        sustained_from = t;
                    }
                } else {
                    sustained_from = f64::INFINITY;
                }
                let _ = t_conv;
                t_conv = sustained_from;
            }
            let final_err = ((state.pos).norm() - r).abs();
            if t_conv > worst {
                worst = t_conv;
            }
            if final_err > worst_final {
                worst_final = final_err;
            }
        }
        println!("k_w={k_w:<7} worst time-to-sustained-1e-3 = {worst:>8.2}  worst final err = {worst_final:.2e}");
    }
}

#[test]
fn monotone_invariant_at_defaults() {
    let params = ParamsSpec::new(1.2, 1.8, 0.5, 0.41)
        .with_r_comm(1.64)
        .derive()
        .unwrap();
    let mut gains = default_gains(&params).unwrap();
    gains.k_w5 = 0.5;
    let r = params.r_c;
    let orbit = OrbitSpec { center: Vec2::ZERO, radius: r };
    let dt = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for trial in 0..100 {
        let rho = rng.random_range(0.2 * r..3.0 * r);
        let ang = rng.random_range(-3.14..3.14);
        let pos = Vec2::from_bearing(ang) * rho;
        let v0 = rng.random_range(1.2..1.4);
        let mut state = AgentState::new(pos, limit_cycle_heading(pos, &orbit));
        let mut snap = ModeEntrySnapshot::basic(0.0, v0);
        snap.orbit = Some(orbit);
        snap.k_v = orbit_speed_gain(v0, pos, &orbit);
        let total = 45.0;
        let n = (total / dt) as usize;
        let mut errs = Vec::with_capacity(n + 1);
        errs.push((state.pos.norm() - r).abs());
        for _ in 0..n {
            let u = loiter_control(&state, &snap, &gains, &params).unwrap();
            state = step(state, u, dt);
            errs.push((state.pos.norm() - r).abs());
        }
        let step20 = (20.0 / dt) as usize;
        let start = (5.0 / dt) as usize;
        let mut bad = 0;
        for k in start..(n - step20) {
            if errs[k + step20] >= errs[k] && errs[k] > 1e-3 {
                bad += 1;
                let ratio = errs[k + step20] / errs[k];
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                }
            }
        }
        if bad > 0 {
            violations += 1;
            if violations < 5 {
                println!("trial {trial}: {bad} violations, rho0={rho:.2} v0={v0:.2}");
            }
        }
    }
    println!("trials with violations: {violations}/100, worst ratio {worst_ratio:.3}");
}
