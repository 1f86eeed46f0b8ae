use std::path::PathBuf;

use nalgebra::DVector;

use eeformation::certificate::phi1;
use eeformation::control::ControllerVariant;
use eeformation::error::SimError;
use eeformation::linalg::stack;
use eeformation::scenario::{parse_scenario, Scenario};
use eeformation::sim::{diagnostics, Actuation, NetworkState};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"));
    parse_scenario(&path).unwrap()
}

fn final_positions(s: &Scenario, variant: ControllerVariant, dt: f64, t_final: f64) -> DVector<f64> {
    let net = s.network_with(variant).unwrap();
    let mut cfg = s.sim.clone();
    cfg.dt = dt;
    cfg.t_final = t_final;
    cfg.stride = 1000;
    let trace = net.run(net.initial_state(&s.q0, Some(&s.qdot0)).unwrap(), &cfg).unwrap();
    stack(&trace.last().unwrap().x)
}

/// Spot check of fourth-order self-convergence on the 30 s square run. The
/// base step is 2.5e-4 s: at 1e-3 s the first milliseconds (dt·ω ≈ 1.4 for
/// the stiffest mode) are outside the asymptotic regime.
#[test]
fn halving_the_step_changes_the_square_final_positions_by_at_most_1e_6() {
    let s = scenario("square2d");
    let a = final_positions(&s, ControllerVariant::Adaptive, 2.5e-4, 30.0);
    let b = final_positions(&s, ControllerVariant::Adaptive, 1.25e-4, 30.0);
    let diff = (a - b).amax();
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn halving_the_step_converges_at_fourth_order() {
    // Self-convergence on a transient: successive differences shrink ~16x.
    let s = scenario("vertical2d");
    let x: Vec<_> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&dt| final_positions(&s, ControllerVariant::Approx, dt, 1.0))
        .collect();
    let d1 = (&x[0] - &x[1]).amax();
    let d2 = (&x[1] - &x[2]).amax();
    assert!(d2 <= 1e-6, "{d2}");
    assert!(d1 / d2 > 10.0, "ratio {}", d1 / d2);
}

#[test]
fn error_rate_matches_the_end_effector_velocities() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let mut state = net.initial_state(&s.q0, None).unwrap();
    for a in &mut state.agents {
        a.qdot = DVector::from_vec(vec![0.3, -0.2]);
    }
    let g = net.graph();
    let x = stack(&net.positions(&state));
    let xdot = stack(
        &state
            .agents
            .iter()
            .zip(net.models())
            .map(|(a, m)| m.true_jacobian(&a.q) * &a.qdot)
            .collect::<Vec<_>>(),
    );
    // ė = 2 D_zᵀ B̄ᵀ ẋ, here through the rigidity matrix.
    let edot = 2.0 * g.rigidity_matrix(&x).unwrap() * &xdot;
    let h = 1e-7;
    let next = net.step(&state, h).unwrap();
    let e0 = g.edge_errors(&x).unwrap().into_stacked();
    let e1 = g.edge_errors(&stack(&net.positions(&next))).unwrap().into_stacked();
    let fd = (e1 - e0) / h;
    assert!((fd - &edot).amax() < 1e-5 * (1.0 + edot.amax()), "{edot}");
}

#[test]
fn near_singular_start_is_flagged_and_the_run_continues() {
    let s = scenario("square2d_compact");
    let net = s.network().unwrap();
    let mut q0 = s.q0.clone();
    q0[1][1] = 0.01;
    let sigma0 = net.models()[1].singularity_distance(&q0[1]);
    let mut cfg = s.sim.clone();
    cfg.t_final = 3.0;
    // With 1.5 m links σ_min ≈ 0.27 q₂ here, above the default 1e-3 floor.
    assert!(sigma0 > cfg.sigma_floor);
    cfg.sigma_floor = 1e-2;
    let trace = net.run(net.initial_state(&q0, None).unwrap(), &cfg).unwrap();
    let d = diagnostics(&trace, &cfg);
    assert!(d.singularity_warnings > 0, "min sigma {}", d.min_sigma);
    let w = trace.singularity_warnings.iter().find(|w| w.agent == 1).unwrap();
    assert_eq!(w.t, 0.0);
    assert_eq!(w.sigma_min, sigma0);
    assert!((d.final_time - 3.0).abs() < 1e-12);
    assert!(trace.final_max_error().is_finite());
}

#[test]
fn non_finite_state_aborts_with_blow_up() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let mut q0 = s.q0.clone();
    q0[2][0] = f64::NAN;
    let err = net.run(net.initial_state(&q0, None).unwrap(), &s.sim).unwrap_err();
    assert!(matches!(err, SimError::BlowUp { agent: 2, .. }), "{err}");
    let mut q0 = s.q0.clone();
    q0[0][0] = 1e300;
    let mut state = net.initial_state(&q0, None).unwrap();
    state.agents[0].qdot[0] = f64::INFINITY;
    assert!(matches!(net.step(&state, 1e-3), Err(SimError::BlowUp { agent: 0, .. })));
}

#[test]
fn rejects_nonpositive_steps() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let state = net.initial_state(&s.q0, None).unwrap();
    for dt in [0.0, -1e-3, f64::NAN] {
        assert!(matches!(net.step(&state, dt), Err(SimError::BadStep(_))));
    }
}

#[test]
fn energy_is_conserved_under_gravity_compensation() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap().with_actuation(Actuation::GravityCompensation);
    let qdot: Vec<DVector<f64>> = s.q0.iter().map(|_| DVector::from_vec(vec![0.4, -0.7])).collect();
    let mut cfg = s.sim.clone();
    cfg.t_final = 3.0;
    let trace = net.run(net.initial_state(&s.q0, Some(&qdot)).unwrap(), &cfg).unwrap();
    let (a, b) = (trace.first().unwrap(), trace.last().unwrap());
    assert!(a.kinetic_energy > 0.1);
    let drift = (b.kinetic_energy - a.kinetic_energy).abs() / b.t;
    assert!(drift <= 1e-6, "{drift}");
}

#[test]
fn exact_law_decreases_u1() {
    let s = scenario("square2d_compact");
    let net = s.network_with(ControllerVariant::Exact).unwrap();
    let mut cfg = s.sim.clone();
    cfg.t_final = 10.0;
    let trace = net.run(net.initial_state(&s.q0, None).unwrap(), &cfg).unwrap();
    let d = diagnostics(&trace, &cfg);
    assert_eq!(d.lyapunov_name, "U1");
    assert_eq!(d.monotonicity_violations, 0, "max increase {}", d.max_lyapunov_increase);
    let first = trace.first().unwrap().lyapunov.u1;
    let last = trace.last().unwrap().lyapunov.u1;
    assert!(last < 1e-3 * first);
}

/// With the exact law, `K_I = 0` and no gravity, the time derivative of `U₁`
/// is `−K_D‖ξ‖² − αK_P‖Jᵀê‖² + αφ₁`. Compared against central differences of
/// the recorded `U₁`; the step is small enough to resolve the initial jolt.
#[test]
fn u1_rate_matches_its_closed_form() {
    let s = scenario("square2d_compact");
    let net = s.network_with(ControllerVariant::Exact).unwrap();
    let g = net.controller().gains;
    assert_eq!(g.ki, 0.0);
    let mut cfg = s.sim.clone();
    cfg.t_final = 0.2;
    cfg.dt = 2e-5;
    cfg.stride = 1;
    let trace = net.run(net.initial_state(&s.q0, None).unwrap(), &cfg).unwrap();
    let m = net.graph().dim();
    let u: Vec<f64> = trace.samples.iter().map(|x| x.lyapunov.u1).collect();
    let mut worst = 0.0f64;
    // Skip the first 5 ms, where ξ jumps from rest and U₁ has large curvature.
    for k in (250..u.len() - 1).step_by(250) {
        let smp = &trace.samples[k];
        let numeric = (u[k + 1] - u[k - 1]) / (2.0 * cfg.dt);
        let xi = stack(&smp.qdot);
        let mut closed = -g.kd * xi.norm_squared();
        for (i, model) in net.models().iter().enumerate() {
            let jt_e = model.true_jacobian(&smp.q[i]).transpose() * smp.e_hat.rows(i * m, m);
            closed -= g.alpha * g.kp * jt_e.norm_squared();
        }
        closed += g.alpha * phi1(&net, &stack(&smp.x), &smp.q, &xi).unwrap();
        worst = worst.max((numeric - closed).abs() / closed.abs().max(1.0));
        assert!(closed < 0.0);
    }
    assert!(worst < 1e-5, "relative mismatch {worst}");
}

#[test]
fn compensated_law_matches_its_pid_form() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let mut cfg = s.sim.clone();
    cfg.t_final = 5.0;
    let trace = net.run(net.initial_state(&s.q0, None).unwrap(), &cfg).unwrap();
    let d = diagnostics(&trace, &cfg);
    assert!(d.pid_discrepancy.unwrap() <= 1e-6);
}

#[test]
fn naive_law_leaves_an_offset_that_the_compensator_removes() {
    let s = scenario("vertical2d");
    let mut cfg = s.sim.clone();
    cfg.t_final = 30.0;
    cfg.stride = 100;
    let run = |v| {
        let net = s.network_with(v).unwrap();
        let trace = net.run(net.initial_state(&s.q0, None).unwrap(), &cfg).unwrap();
        diagnostics(&trace, &cfg).final_max_error
    };
    let naive = run(ControllerVariant::Naive);
    let compensated = run(ControllerVariant::Approx);
    assert!(naive > 1e-3, "{naive}");
    assert!(compensated < 1e-2 * naive, "{compensated} vs {naive}");
}

#[test]
fn tetrahedron_converges_with_the_adaptive_law() {
    let s = scenario("tetra3d");
    let net = s.network().unwrap();
    let trace = net.run(net.initial_state(&s.q0, None).unwrap(), &s.sim).unwrap();
    let d = diagnostics(&trace, &s.sim);
    assert!(d.final_max_error < 1e-4, "{}", d.final_max_error);
    assert!(d.min_sigma > 1e-3);
    assert!(d.centroid_drift > 1e-3);
}

#[test]
fn samples_follow_the_stride_and_end_at_t_final() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let mut cfg = s.sim.clone();
    cfg.t_final = 0.1;
    cfg.stride = 7;
    let trace = net.run(net.initial_state(&s.q0, None).unwrap(), &cfg).unwrap();
    let times: Vec<f64> = trace.samples.iter().map(|x| x.t).collect();
    assert_eq!(times[0], 0.0);
    assert!((times[1] - 7e-3).abs() < 1e-15);
    assert!((times.last().unwrap() - 0.1).abs() < 1e-15);
    assert_eq!(times.len(), 100 / 7 + 2);
    let state: &NetworkState = trace.final_state.as_ref().unwrap();
    assert!((state.t - 0.1).abs() < 1e-15);
}
