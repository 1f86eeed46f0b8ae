use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eeformation::certificate::{
    certify, check_gain_conditions, estimate_eta_bounds, estimate_gravity_lipschitz, estimate_phi_bounds,
    estimate_spectral_constants, inertia_bounds_torus, lyapunov_values, phi1, sandwich_constants, AgentSampling,
    GridSpec, LyapunovContext, SampleGrid,
};
use eeformation::control::ControllerVariant;
use eeformation::linalg::{spectral_norm, stack};
use eeformation::scenario::{parse_scenario, parse_scenario_str, Scenario};
use eeformation::sim::Network;

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"));
    parse_scenario(&path).unwrap()
}

fn scenario_text(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"));
    std::fs::read_to_string(path).unwrap()
}

/// vertical2d on a small grid: `‖e‖² ≤ 0.01`, equal-width joint boxes.
/// Lockstep sampling with a halved step still contains the coarse tuples
/// because every agent's box has the same width.
fn small_spec(s: &Scenario, z_step: f64, q_step: f64) -> GridSpec {
    let mut spec = s.grid_spec().unwrap();
    spec.r1 = 0.01;
    spec.z_step = z_step;
    spec.q_step = q_step;
    spec.q_boxes = GridSpec::boxes_around(&s.q0, PI / 12.0);
    spec.sampling = AgentSampling::Lockstep;
    spec
}

fn random_xi(rng: &mut ChaCha8Rng, len: usize, radius: f64) -> DVector<f64> {
    let v = DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0));
    let target = rng.gen_range(0.0..radius);
    v.normalize() * target
}

#[test]
fn refining_the_grid_only_widens_the_extrema() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let coarse = SampleGrid::build(net.graph(), net.models(), &small_spec(&s, 0.2, PI / 12.0)).unwrap();
    let fine = SampleGrid::build(net.graph(), net.models(), &small_spec(&s, 0.1, PI / 24.0)).unwrap();
    assert!(fine.configurations.len() > coarse.configurations.len());
    assert!(fine.joints.len() > coarse.joints.len());

    let (a, b) = (
        estimate_spectral_constants(&net, &coarse).unwrap(),
        estimate_spectral_constants(&net, &fine).unwrap(),
    );
    let up = |c: f64, f: f64| f >= c * (1.0 - 1e-9);
    let down = |c: f64, f: f64| f <= c * (1.0 + 1e-9);
    assert!(up(a.lambda1, b.lambda1));
    assert!(up(a.lambda_j, b.lambda_j));
    assert!(up(a.lambda_j_hat, b.lambda_j_hat));
    assert!(down(a.lambda2, b.lambda2));
    assert!(down(a.lambda4, b.lambda4));

    let (pa, pb) = (
        estimate_phi_bounds(&net, &coarse).unwrap(),
        estimate_phi_bounds(&net, &fine).unwrap(),
    );
    assert!(up(pa.k11, pb.k11));
    assert!(up(pa.k12, pb.k12));
    for (c, f) in [
        (pa.beta11, pb.beta11),
        (pa.beta12, pb.beta12),
        (pa.beta13, pb.beta13),
        (pa.beta14, pb.beta14),
    ] {
        assert!(up(c, f));
    }
}

#[test]
fn phi1_is_bounded_pointwise_by_k11_and_k12() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let grid = SampleGrid::build(net.graph(), net.models(), &small_spec(&s, 0.1, PI / 12.0)).unwrap();
    let phi = estimate_phi_bounds(&net, &grid).unwrap();
    let dof: usize = net.models().iter().map(|m| m.dof()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tight = 0.0f64;
    for _ in 0..400 {
        let x = &grid.configurations[rng.gen_range(0..grid.configurations.len())];
        let q = &grid.joints[rng.gen_range(0..grid.joints.len())];
        let xi = random_xi(&mut rng, dof, grid.r2.sqrt());
        let value = phi1(&net, x, q, &xi).unwrap();
        let e = net.graph().edge_errors(x).unwrap().into_stacked();
        let bound = phi.k11 * e.norm_squared() + phi.k12 * xi.norm_squared();
        assert!(value.abs() <= bound * (1.0 + 1e-9) + 1e-12, "phi1 {value} exceeds {bound}");
        if bound > 0.0 {
            tight = tight.max(value.abs() / bound);
        }
    }
    // The bound should not be vacuous by orders of magnitude on this grid.
    assert!(tight > 1e-4, "largest phi1/bound ratio {tight}");
}

#[test]
fn kappa2_bounds_gravity_differences_on_the_samples() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let grid = SampleGrid::build(net.graph(), net.models(), &small_spec(&s, 0.2, PI / 24.0)).unwrap();
    let q_star = s.q_star();
    let kappa2 = estimate_gravity_lipschitz(net.models(), &grid, &q_star);
    assert!(kappa2 > 0.0);
    for ((model, samples), qs) in net.models().iter().zip(&grid.agent_joints).zip(&q_star) {
        for q in samples {
            let dg = (model.gravity(q) - model.gravity(qs)).norm();
            let dh = (model.forward_kinematics(q) - model.forward_kinematics(qs)).norm();
            assert!(dg <= kappa2 * dh * (1.0 + 1e-12) + 1e-12);
        }
    }
}

#[test]
fn horizontal_plane_has_no_gravity_terms() {
    let text = scenario_text("square2d_compact").replace("ki = 0.0", "ki = 1.0");
    let s = parse_scenario_str(&text).unwrap();
    assert_eq!(s.controller.gains.ki, 1.0);
    let net = s.network().unwrap();
    let mut spec = s.grid_spec().unwrap();
    spec.r1 = 0.5;
    spec.z_step = 0.25;
    spec.a_hat_step = 0.5;
    let grid = SampleGrid::build(net.graph(), net.models(), &spec).unwrap();
    let eta = estimate_eta_bounds(&net, &grid, 1.0, &s.q_star()).unwrap();
    assert_eq!(eta.kappa2, 0.0);
    assert_eq!(eta.beta21, 0.0);
    assert_eq!(eta.k21, 0.0);
    assert_eq!(eta.k32, 0.0);
}

#[test]
fn fixed_jacobian_variants_sample_a_single_parameter_vector() {
    let s = scenario("vertical2d");
    let spec = s.grid_spec().unwrap();
    let fixed = spec.fixed_a_hat.as_ref().expect("approximate law uses its nominal parameters");
    assert_eq!(fixed, &s.controller.a_hat0);
    let net = s.network().unwrap();
    let grid = SampleGrid::build(net.graph(), net.models(), &small_spec(&s, 0.2, PI / 12.0)).unwrap();
    assert_eq!(grid.a_hats.len(), 1);
    // Nominal lengths equal the true ones here, so the Jacobian mismatch vanishes.
    assert_eq!(estimate_spectral_constants(&net, &grid).unwrap().delta, 0.0);
}

#[test]
fn report_conditions_follow_their_margins() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let grid = SampleGrid::build(net.graph(), net.models(), &small_spec(&s, 0.2, PI / 12.0)).unwrap();
    let report = certify(&net, &grid, &s.q_star()).unwrap();
    assert!(!report.conditions.is_empty());
    for c in &report.conditions {
        assert_eq!(c.passed, c.margin > 0.0, "{}", c.label);
    }
    assert_eq!(report.passed(), report.conditions.iter().all(|c| c.passed));
    // Recomputing the conditions from the same report is idempotent.
    let again = check_gain_conditions(&report, &report.gains, ControllerVariant::Approx);
    assert_eq!(again.len(), report.conditions.len());
    for (a, b) in again.iter().zip(&report.conditions) {
        assert_eq!(a.margin, b.margin);
    }
    let kv = report.to_key_value_file();
    assert!(kv.lines().any(|l| l.starts_with("k11")));
}

fn network_state(net: &Network, q: &[DVector<f64>], qdot: &[DVector<f64>]) -> eeformation::sim::NetworkState {
    net.initial_state(q, Some(qdot)).unwrap()
}

#[test]
fn sandwich_bounds_hold_with_pointwise_constants() {
    let s = scenario("square2d_compact");
    let net = s.network_with(ControllerVariant::Exact).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut c_min, mut c_max) = (f64::INFINITY, 0.0f64);
    for m in net.models() {
        let (lo, hi) = inertia_bounds_torus(m, PI / 36.0);
        c_min = c_min.min(lo);
        c_max = c_max.max(hi);
    }
    let ctx = LyapunovContext::new(&net, s.q0.clone(), 1.0);
    for _ in 0..200 {
        let q: Vec<DVector<f64>> = s
            .q0
            .iter()
            .map(|q0| q0.map(|v| v + rng.gen_range(-0.3..0.3)))
            .collect();
        let qdot: Vec<DVector<f64>> = q.iter().map(|v| random_xi(&mut rng, v.len(), 1.0)).collect();
        let state = network_state(&net, &q, &qdot);
        let sample = net.sample(&state).unwrap();
        let x = stack(&sample.x);
        let r = net.graph().rigidity_matrix(&x).unwrap();
        let lambda1 = 4.0 * spectral_norm(&r).powi(2);
        let lambda_j = net
            .models()
            .iter()
            .zip(&q)
            .map(|(m, qi)| spectral_norm(&m.true_jacobian(qi)).powi(2))
            .fold(0.0, f64::max);
        let c = sandwich_constants(&ctx.gains, c_min, c_max, lambda1, lambda_j);
        let e2 = sample.e.norm_squared();
        let xi2 = stack(&qdot).norm_squared();
        let u1 = lyapunov_values(&net, &ctx, &sample).u1;
        let lower = 0.5 * c[0] * e2 + 0.5 * c[1] * xi2;
        let upper = 0.5 * c[2] * e2 + 0.5 * c[3] * xi2;
        let slack = 1e-9 * upper.abs().max(1.0);
        assert!(lower <= u1 + slack, "lower {lower} > U1 {u1}");
        assert!(u1 <= upper + slack, "U1 {u1} > upper {upper}");
    }
}

#[test]
fn lyapunov_functions_vanish_at_the_target_state() {
    let s = scenario("square2d_compact");
    let net = s.network().unwrap();
    let state = net.initial_state(&s.q0, Some(&s.qdot0)).unwrap();
    let mut cfg = s.sim.clone();
    cfg.t_final = 20.0;
    let trace = net.run(state, &cfg).unwrap();
    let mut fin = trace.final_state.clone().unwrap();
    assert!(trace.final_max_error() < 1e-8);
    for (agent, m) in fin.agents.iter_mut().zip(net.models()) {
        agent.qdot.fill(0.0);
        agent.a_hat = Some(m.kinematic_params());
    }
    let sample = net.sample(&fin).unwrap();
    let ctx = LyapunovContext::new(&net, sample.q.clone(), 1.0);
    let l = lyapunov_values(&net, &ctx, &sample);
    assert!(l.u1.abs() < 1e-9, "U1 = {}", l.u1);
    assert_eq!(l.u3, l.u2);
    assert_eq!(l.v_eta, 0.0);
}

#[test]
fn with_zero_velocity_u3_is_the_scaled_error_energy() {
    let s = scenario("square2d_compact");
    let net = s.network().unwrap();
    let mut state = net.initial_state(&s.q0, None).unwrap();
    for (agent, m) in state.agents.iter_mut().zip(net.models()) {
        agent.a_hat = Some(m.kinematic_params());
    }
    let sample = net.sample(&state).unwrap();
    let ctx = LyapunovContext::new(&net, s.q0.clone(), 1.0);
    let l = lyapunov_values(&net, &ctx, &sample);
    let g = ctx.gains;
    let expected = 0.5 * (g.kp + g.alpha * g.kd) * sample.e.norm_squared();
    assert!((l.u3 - expected).abs() <= 1e-12 * expected.max(1.0));
    assert!(expected > 0.0);
}

#[test]
fn compensator_energy_is_zero_at_eta_star() {
    let s = scenario("vertical2d");
    let net = s.network().unwrap();
    let mut state = net.initial_state(&s.q0, None).unwrap();
    let ki = net.controller().gains.ki;
    for (agent, m) in state.agents.iter_mut().zip(net.models()) {
        agent.eta = Some(m.gravity(&agent.q) / ki);
    }
    let sample = net.sample(&state).unwrap();
    let ctx = LyapunovContext::new(&net, s.q0.clone(), 0.3);
    let l = lyapunov_values(&net, &ctx, &sample);
    assert!(l.v_eta.abs() < 1e-24);
    assert!((l.u2 - l.u1).abs() < 1e-12);
}
