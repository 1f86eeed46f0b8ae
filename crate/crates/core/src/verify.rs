//! Property and invariant suites run against a scenario.
//!
//! Each check returns the worst residual it saw and the tolerance it was
//! held to. Random states come from a seeded ChaCha generator, so the suites
//! are reproducible.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{self, ControllerVariant, Gains};
use crate::graph::Flavor;
use crate::linalg::{rotation_matrix, stack};
use crate::model::{JointState, ManipulatorModel};
use crate::scenario::Scenario;
use crate::sim::{diagnostics, Actuation, ControllerConfig, Network, SimConfig};
use crate::trace_io::{render_trace, RunSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, residual: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            residual,
            tolerance,
            passed: residual <= tolerance,
            detail,
        }
    }

    fn skipped(name: &'static str, why: &str) -> Self {
        Self {
            name,
            residual: 0.0,
            tolerance: 0.0,
            passed: true,
            detail: format!("not applicable: {why}"),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<22} residual {:.3e} (tol {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.residual,
            self.tolerance,
            self.detail
        )
    }
}

/// Sample counts and tolerances of the suites.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub skew_states: usize,
    pub regressor_states: usize,
    pub jacobian_states: usize,
    pub gradient_states: usize,
    pub local_states: usize,
    /// Duration of the short runs used by the energy, PID and determinism checks, s.
    pub run_time: f64,
}

impl VerifyConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            skew_states: 1000,
            regressor_states: 1000,
            jacobian_states: 100,
            gradient_states: 100,
            local_states: 100,
            run_time: 2.0,
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

/// `max |ξᵀ(Ḣ − 2C)ξ|` and `max |N + Nᵀ|` over random `(q, q̇)`, with `Ḣ`
/// assembled from the inertia partials.
pub fn check_skew_symmetry(models: &[ManipulatorModel], states: usize, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for k in 0..states {
        let m = &models[k % models.len()];
        let q = random_vec(rng, m.dof(), -PI, PI);
        let qd = random_vec(rng, m.dof(), -3.0, 3.0);
        let partials = m.arm().inertia_partials(&q);
        let hdot = partials
            .iter()
            .zip(qd.iter())
            .fold(DMatrix::zeros(m.dof(), m.dof()), |acc, (p, v)| acc + p * *v);
        let n = hdot - 2.0 * m.coriolis(&q, &qd);
        worst = worst.max((&n + n.transpose()).amax());
        let x = random_vec(rng, m.dof(), -1.0, 1.0);
        worst = worst.max(x.dot(&(&n * &x)).abs());
    }
    CheckResult::new("skew-symmetry", worst, 1e-10, format!("{states} states"))
}

/// `max ‖Jᵀ(q,a)ζ − Z(q,ζ)a‖∞` over random `(q, ζ, a)`.
pub fn check_regressor(models: &[ManipulatorModel], states: usize, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for k in 0..states {
        let m = &models[k % models.len()];
        let q = random_vec(rng, m.dof(), -PI, PI);
        let zeta = random_vec(rng, m.task_dim(), -2.0, 2.0);
        let a = random_vec(rng, m.num_kinematic_params(), 0.2, 3.0);
        let lhs = m.jacobian(&q, &a).transpose() * &zeta;
        let rhs = m.kinematic_regressor(&q, &zeta) * &a;
        worst = worst.max((lhs - rhs).amax());
    }
    CheckResult::new("regressor identity", worst, 1e-12, format!("{states} states"))
}

/// Jacobian against central differences of the forward kinematics.
pub fn check_jacobian(models: &[ManipulatorModel], states: usize, rng: &mut ChaCha8Rng) -> CheckResult {
    const H: f64 = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..states {
        let m = &models[k % models.len()];
        let q = random_vec(rng, m.dof(), -PI, PI);
        let j = m.true_jacobian(&q);
        for c in 0..m.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += H;
            qm[c] -= H;
            let fd = (m.forward_kinematics(&qp) - m.forward_kinematics(&qm)) / (2.0 * H);
            worst = worst.max((j.column(c) - fd).amax());
        }
    }
    CheckResult::new("jacobian vs FD", worst, 1e-6, format!("{states} states"))
}

/// Formation gradient `ê` against central differences of `V`.
pub fn check_gradient(scenario: &Scenario, states: usize, rng: &mut ChaCha8Rng) -> CheckResult {
    const H: f64 = 1e-6;
    let graph = &scenario.graph;
    let centre = match &scenario.reference {
        Some(r) => stack(r),
        None => stack(
            &scenario
                .models
                .iter()
                .zip(&scenario.q0)
                .map(|(m, q)| m.forward_kinematics(q))
                .collect::<Vec<_>>(),
        ),
    };
    let mut worst = 0.0f64;
    for _ in 0..states {
        let x = &centre + random_vec(rng, centre.len(), -0.5, 0.5);
        let g = match graph.formation_gradient(&x) {
            Ok(g) => g,
            Err(e) => return CheckResult::new("gradient vs FD", f64::INFINITY, 1e-6, e.to_string()),
        };
        for c in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += H;
            xm[c] -= H;
            let fd = (graph.potential(&xp).unwrap() - graph.potential(&xm).unwrap()) / (2.0 * H);
            worst = worst.max((g[c] - fd).abs());
        }
    }
    CheckResult::new("gradient vs FD", worst, 1e-6, format!("{states} states"))
}

fn short_config(scenario: &Scenario, t: f64) -> SimConfig {
    SimConfig {
        t_final: t.min(scenario.sim.t_final.max(scenario.sim.dt)),
        ..scenario.sim.clone()
    }
}

/// Kinetic energy balance with gravity-compensating torques and a random
/// initial velocity: `|ΔT − W| / t`.
pub fn check_energy(scenario: &Scenario, run_time: f64, rng: &mut ChaCha8Rng) -> CheckResult {
    let net = match scenario.network() {
        Ok(n) => n.with_actuation(Actuation::GravityCompensation),
        Err(e) => return CheckResult::new("energy balance", f64::INFINITY, 1e-6, e.to_string()),
    };
    let qd0: Vec<_> = scenario
        .models
        .iter()
        .map(|m| random_vec(rng, m.dof(), -0.5, 0.5))
        .collect();
    let cfg = short_config(scenario, run_time);
    let result = net
        .initial_state(&scenario.q0, Some(&qd0))
        .and_then(|s| net.run(s, &cfg));
    match result {
        Ok(trace) => {
            let d = diagnostics(&trace, &cfg);
            let drift = trace
                .last()
                .zip(trace.first())
                .map_or(0.0, |(b, a)| (b.kinetic_energy - a.kinetic_energy).abs() / b.t.max(1e-12));
            CheckResult::new(
                "energy balance",
                d.energy_residual_rate,
                1e-6,
                format!("{} s, |dT|/t = {drift:.2e} J/s", cfg.t_final),
            )
        }
        Err(e) => CheckResult::new("energy balance", f64::INFINITY, 1e-6, e.to_string()),
    }
}

/// Network whose controller carries an integral compensator, for the PID check.
fn compensated_network(scenario: &Scenario) -> Result<Network, crate::error::SimError> {
    let c = &scenario.controller;
    let variant = if c.variant.uses_compensator() {
        c.variant
    } else {
        ControllerVariant::Approx
    };
    let gains = Gains {
        ki: if c.gains.ki > 0.0 { c.gains.ki } else { 1.0 },
        ..c.gains
    };
    Network::new(
        scenario.graph.clone(),
        scenario.models.clone(),
        scenario.nominal.clone(),
        ControllerConfig {
            variant,
            gains,
            a_hat0: c.a_hat0.clone(),
        },
    )
}

/// PID reading against the integrator form along a recorded run.
pub fn check_pid(scenario: &Scenario, run_time: f64) -> CheckResult {
    let cfg = short_config(scenario, run_time);
    let result = compensated_network(scenario).and_then(|net| {
        let s = net.initial_state(&scenario.q0, Some(&scenario.qdot0))?;
        net.run(s, &cfg)
    });
    match result {
        Ok(trace) => {
            let d = diagnostics(&trace, &cfg);
            CheckResult::new(
                "PID vs integrator",
                d.pid_discrepancy.unwrap_or(f64::INFINITY),
                1e-6,
                format!("{} s, {} samples", cfg.t_final, trace.samples.len()),
            )
        }
        Err(e) => CheckResult::new("PID vs integrator", f64::INFINITY, 1e-6, e.to_string()),
    }
}

/// Local-frame law (relative measurements in each base frame) against the
/// global-frame law, with bases rotated by 0°, 30°, 60°, −30° in turn.
pub fn check_local_frame(scenario: &Scenario, states: usize, rng: &mut ChaCha8Rng) -> CheckResult {
    const NAME: &str = "local vs global frame";
    if scenario.graph.flavor() != Flavor::Distance {
        return CheckResult::skipped(NAME, "displacement formations need a common frame");
    }
    let m = scenario.graph.dim();
    let angles = [0.0f64, 30.0, 60.0, -30.0];
    let rotate = |i: usize, model: &ManipulatorModel| {
        let a = angles[i % angles.len()].to_radians();
        let r = if m == 2 {
            rotation_matrix(2, &[a])
        } else {
            rotation_matrix(3, &[0.0, 0.0, a])
        };
        model.with_base(model.base_position().clone(), r).expect("rotation is proper")
    };
    let models: Vec<_> = scenario.models.iter().enumerate().map(|(i, md)| rotate(i, md)).collect();
    let nominal: Vec<_> = scenario.nominal.iter().enumerate().map(|(i, md)| rotate(i, md)).collect();
    let c = &scenario.controller;
    let variant = c.variant;
    let mut worst = 0.0f64;
    for _ in 0..states {
        let joint: Vec<JointState> = models
            .iter()
            .map(|md| {
                JointState::new(
                    random_vec(rng, md.dof(), -PI, PI),
                    random_vec(rng, md.dof(), -1.0, 1.0),
                )
            })
            .collect();
        let positions: Vec<_> = models.iter().zip(&joint).map(|(md, s)| md.forward_kinematics(&s.q)).collect();
        let e_hat = scenario.graph.formation_gradient(&stack(&positions)).expect("dimensions checked");
        for (i, md) in models.iter().enumerate() {
            let eta = variant
                .uses_compensator()
                .then(|| random_vec(rng, md.dof(), -1.0, 1.0));
            let a_hat = (variant != ControllerVariant::Exact).then(|| {
                if variant.uses_estimate() {
                    random_vec(rng, md.num_kinematic_params(), 0.5, 2.5)
                } else {
                    c.a_hat0[i].clone()
                }
            });
            let nom = nominal.get(i);
            let global = control::evaluate(
                variant,
                md,
                nom,
                &joint[i],
                &e_hat.rows(i * m, m).into_owned(),
                eta.as_ref(),
                a_hat.as_ref(),
                &c.gains,
            );
            let local = control::measure_local(&scenario.graph, md, &positions, i).and_then(|meas| {
                control::local_frame_control(
                    variant,
                    md,
                    nom,
                    &meas,
                    &joint[i],
                    eta.as_ref(),
                    a_hat.as_ref(),
                    &c.gains,
                )
            });
            match (global, local) {
                (Ok(g), Ok(l)) => {
                    // Differences are scaled by max(1, |value|) so that large
                    // torques are compared to rounding rather than in N·m.
                    let rel = |a: &DVector<f64>, b: &DVector<f64>| (a - b).amax() / a.amax().max(1.0);
                    worst = worst.max(rel(&g.torque, &l.torque));
                    if let (Some(a), Some(b)) = (&g.eta_dot, &l.eta_dot) {
                        worst = worst.max(rel(a, b));
                    }
                    if let (Some(a), Some(b)) = (&g.a_hat_dot, &l.a_hat_dot) {
                        worst = worst.max(rel(a, b));
                    }
                }
                (Err(e), _) | (_, Err(e)) => {
                    return CheckResult::new(NAME, f64::INFINITY, 1e-9, e.to_string());
                }
            }
        }
    }
    CheckResult::new(NAME, worst, 1e-9, format!("{states} states, bases at 0/30/60/-30 deg"))
}

/// `ê = 0 ⇒ â̇ = 0` exactly, for any `q`, `ξ` and `â`.
pub fn check_adaptive_freeze(models: &[ManipulatorModel], rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for k in 0..100 {
        let m = &models[k % models.len()];
        let state = JointState::new(random_vec(rng, m.dof(), -PI, PI), random_vec(rng, m.dof(), -2.0, 2.0));
        let a_hat = random_vec(rng, m.num_kinematic_params(), 0.5, 2.5);
        let rate = control::adaptation_rate(m, &state, &DVector::zeros(m.task_dim()), &a_hat, 0.05);
        worst = worst.max(rate.amax());
    }
    CheckResult::new("adaptive freeze", worst, 0.0, "100 states, exact zero required".into())
}

/// Two runs of the scenario render to byte-identical trace files.
pub fn check_determinism(scenario: &Scenario, run_time: f64) -> CheckResult {
    const NAME: &str = "determinism";
    let cfg = short_config(scenario, run_time);
    let render = || -> Result<Vec<(&'static str, String)>, String> {
        let net = scenario.network().map_err(|e| e.to_string())?;
        let s = net
            .initial_state(&scenario.q0, Some(&scenario.qdot0))
            .map_err(|e| e.to_string())?;
        let trace = net.run(s, &cfg).map_err(|e| e.to_string())?;
        let summary = RunSummary::new(scenario.name(), &trace, &diagnostics(&trace, &cfg));
        Ok(render_trace(&trace, &summary))
    };
    match (render(), render()) {
        (Ok(a), Ok(b)) => {
            let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            let bytes: usize = a.iter().map(|(_, s)| s.len()).sum();
            CheckResult::new(
                NAME,
                differing as f64,
                0.0,
                format!("{} files, {bytes} bytes, {} s", a.len(), cfg.t_final),
            )
        }
        (Err(e), _) | (_, Err(e)) => CheckResult::new(NAME, f64::INFINITY, 0.0, e),
    }
}

/// Runs every suite.
pub fn run_all(scenario: &Scenario, config: &VerifyConfig) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let models = &scenario.models;
    vec![
        check_skew_symmetry(models, config.skew_states, &mut rng),
        check_regressor(models, config.regressor_states, &mut rng),
        check_jacobian(models, config.jacobian_states, &mut rng),
        check_gradient(scenario, config.gradient_states, &mut rng),
        check_energy(scenario, config.run_time, &mut rng),
        check_pid(scenario, config.run_time),
        check_local_frame(scenario, config.local_states, &mut rng),
        check_adaptive_freeze(models, &mut rng),
        check_determinism(scenario, config.run_time),
    ]
}
