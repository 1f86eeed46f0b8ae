//! Fixed-step RK4 integration of the closed-loop network.
//!
//! The per-agent state is `(q, ξ)` plus the compensator `η` and the PID
//! running integral `∫y` when the law uses a compensator, and `â` for the
//! adaptive law. One extra scalar accumulates the actuator work
//! `∫ Σ ξᵀ(u − G) dt` for the energy-balance check.

use nalgebra::DVector;

use crate::certificate::{self, LyapunovContext, LyapunovValues};
use crate::control::{self, ControllerVariant, Gains};
use crate::error::{ControlError, SimError};
use crate::graph::{Flavor, FormationGraph};
use crate::linalg::stack;
use crate::model::{JointState, ManipulatorModel, DEFAULT_SIGMA_FLOOR};

/// What drives the joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actuation {
    /// The configured formation controller.
    Controller,
    /// `u = G(q)`: the arms coast under exact gravity compensation.
    GravityCompensation,
    /// `u = 0`.
    Passive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub variant: ControllerVariant,
    pub gains: Gains,
    /// Nominal kinematic parameters per agent: fixed for the approximate and
    /// naive laws, initial estimate for the adaptive law. Ignored by the
    /// exact law.
    pub a_hat0: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_final: f64,
    pub dt: f64,
    pub stride: usize,
    /// Bound on `max_k |e_k(T)|` for convergence, in the edge-error unit.
    pub error_tolerance: f64,
    /// Bound on `‖ξ(T)‖`, rad/s.
    pub velocity_tolerance: f64,
    pub sigma_floor: f64,
    /// Allowed increase of the Lyapunov value between recorded samples.
    pub monotonicity_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_final: 30.0,
            dt: 1e-3,
            stride: 10,
            error_tolerance: 1e-2,
            velocity_tolerance: 1e-2,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            monotonicity_tolerance: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn num_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub eta: Option<DVector<f64>>,
    pub a_hat: Option<DVector<f64>>,
    /// Running integral of the PID output `y`, tracked alongside `η`.
    pub y_integral: Option<DVector<f64>>,
}

impl AgentState {
    pub fn joint(&self) -> JointState {
        JointState::new(self.q.clone(), self.qdot.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: f64,
    pub agents: Vec<AgentState>,
    /// `∫ Σ_i ξ_iᵀ(u_i − G_i) dt` since the start of the run.
    pub work: f64,
}

impl NetworkState {
    pub fn kinetic_energy(&self, models: &[ManipulatorModel]) -> f64 {
        self.agents
            .iter()
            .zip(models)
            .map(|(a, m)| 0.5 * a.qdot.dot(&(m.inertia(&a.q) * &a.qdot)))
            .sum()
    }
}

/// Closed-loop network: graph, plants and controller.
#[derive(Debug, Clone)]
pub struct Network {
    graph: FormationGraph,
    models: Vec<ManipulatorModel>,
    /// Nominal plants used by the naive law for gravity compensation.
    nominal: Vec<ManipulatorModel>,
    controller: ControllerConfig,
    actuation: Actuation,
}

/// Everything computed at one state: positions, gradient, torques and the
/// state derivative.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub positions: Vec<DVector<f64>>,
    pub e_hat: DVector<f64>,
    pub torques: Vec<DVector<f64>>,
    derivative: Vec<AgentState>,
    power: f64,
}

impl Network {
    pub fn new(
        graph: FormationGraph,
        models: Vec<ManipulatorModel>,
        nominal: Vec<ManipulatorModel>,
        controller: ControllerConfig,
    ) -> Result<Self, SimError> {
        let n = graph.num_agents();
        let bad = |what: &str, expected: usize, got: usize| {
            SimError::Graph(crate::error::GraphError::Dimension {
                what: what.into(),
                expected,
                got,
            })
        };
        if models.len() != n {
            return Err(bad("agent models", n, models.len()));
        }
        for m in &models {
            if m.task_dim() != graph.dim() {
                return Err(bad("agent task dimension", graph.dim(), m.task_dim()));
            }
        }
        if graph.flavor() == Flavor::Displacement {
            if let Some(agent) = models.iter().position(|m| !m.has_identity_rotation()) {
                return Err(ControlError::FrameMisaligned { agent }.into());
            }
        }
        controller.gains.validate(controller.variant)?;
        if controller.variant != ControllerVariant::Exact {
            if controller.a_hat0.len() != n {
                return Err(bad("nominal kinematic parameters", n, controller.a_hat0.len()));
            }
            for (a, m) in controller.a_hat0.iter().zip(&models) {
                if a.len() != m.num_kinematic_params() {
                    return Err(bad("nominal kinematic parameters", m.num_kinematic_params(), a.len()));
                }
            }
        }
        if controller.variant == ControllerVariant::Naive && nominal.len() != n {
            return Err(ControlError::MissingState("nominal model").into());
        }
        Ok(Self {
            graph,
            models,
            nominal,
            controller,
            actuation: Actuation::Controller,
        })
    }

    pub fn with_actuation(mut self, actuation: Actuation) -> Self {
        self.actuation = actuation;
        self
    }

    pub fn graph(&self) -> &FormationGraph {
        &self.graph
    }

    pub fn models(&self) -> &[ManipulatorModel] {
        &self.models
    }

    pub fn nominal(&self) -> &[ManipulatorModel] {
        &self.nominal
    }

    pub fn controller(&self) -> &ControllerConfig {
        &self.controller
    }

    pub fn actuation(&self) -> Actuation {
        self.actuation
    }

    /// Kinematic parameters the law plugs into the Jacobian for `agent`.
    fn a_used(&self, agent: usize, state: &AgentState) -> DVector<f64> {
        match self.controller.variant {
            ControllerVariant::Exact => self.models[agent].kinematic_params(),
            ControllerVariant::Adaptive => state.a_hat.clone().expect("adaptive state carries â"),
            _ => self.controller.a_hat0[agent].clone(),
        }
    }

    /// State at `t = 0` with `η = 0`, `∫y = 0` and `â = â(0)`.
    pub fn initial_state(
        &self,
        q0: &[DVector<f64>],
        qdot0: Option<&[DVector<f64>]>,
    ) -> Result<NetworkState, SimError> {
        let n = self.graph.num_agents();
        if q0.len() != n {
            return Err(SimError::Graph(crate::error::GraphError::Dimension {
                what: "initial joint positions".into(),
                expected: n,
                got: q0.len(),
            }));
        }
        let variant = self.controller.variant;
        let agents = q0
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let dof = self.models[i].dof();
                let qdot = qdot0.map(|v| v[i].clone()).unwrap_or_else(|| DVector::zeros(dof));
                let comp = variant.uses_compensator();
                AgentState {
                    q: q.clone(),
                    qdot,
                    eta: comp.then(|| DVector::zeros(dof)),
                    a_hat: variant.uses_estimate().then(|| self.controller.a_hat0[i].clone()),
                    y_integral: comp.then(|| DVector::zeros(dof)),
                }
            })
            .collect();
        Ok(NetworkState {
            t: 0.0,
            agents,
            work: 0.0,
        })
    }

    pub fn positions(&self, state: &NetworkState) -> Vec<DVector<f64>> {
        state
            .agents
            .iter()
            .zip(&self.models)
            .map(|(a, m)| m.forward_kinematics(&a.q))
            .collect()
    }

    /// Evaluates positions, gradient, torques and the full state derivative.
    pub fn evaluate(&self, state: &NetworkState) -> Result<Evaluation, SimError> {
        let positions = self.positions(state);
        let e_hat = self.graph.formation_gradient(&stack(&positions))?;
        let m = self.graph.dim();
        let gains = &self.controller.gains;
        let variant = self.controller.variant;
        let mut torques = Vec::with_capacity(state.agents.len());
        let mut derivative = Vec::with_capacity(state.agents.len());
        let mut power = 0.0;
        for (i, (agent, model)) in state.agents.iter().zip(&self.models).enumerate() {
            let joint = agent.joint();
            let e_i = e_hat.rows(i * m, m).into_owned();
            let gravity = model.gravity(&agent.q);
            let (torque, eta_dot, a_hat_dot) = match self.actuation {
                Actuation::Passive => (DVector::zeros(model.dof()), None, None),
                Actuation::GravityCompensation => (gravity.clone(), None, None),
                Actuation::Controller => {
                    let a_used = self.a_used(i, agent);
                    let out = control::evaluate(
                        variant,
                        model,
                        self.nominal.get(i),
                        &joint,
                        &e_i,
                        agent.eta.as_ref(),
                        Some(&a_used),
                        gains,
                    )?;
                    (out.torque, out.eta_dot, out.a_hat_dot)
                }
            };
            let coriolis = model.coriolis(&agent.q, &agent.qdot);
            let rhs = &torque - coriolis * &agent.qdot - &gravity;
            let h = model.inertia(&agent.q);
            let accel = h
                .lu()
                .solve(&rhs)
                .filter(|a| a.iter().all(|v| v.is_finite()))
                .ok_or(SimError::BlowUp { t: state.t, agent: i })?;
            power += agent.qdot.dot(&(&torque - &gravity));
            let y_dot = agent.y_integral.as_ref().map(|_| {
                let a_used = self.a_used(i, agent);
                control::pid_output(model, &joint, &e_i, &a_used, gains)
            });
            let d = AgentState {
                q: agent.qdot.clone(),
                qdot: accel,
                eta: agent.eta.as_ref().map(|eta| eta_dot.unwrap_or_else(|| eta * 0.0)),
                a_hat: agent
                    .a_hat
                    .as_ref()
                    .map(|a| a_hat_dot.unwrap_or_else(|| a * 0.0)),
                y_integral: y_dot,
            };
            if !finite_agent(&d) || !torque.iter().all(|v| v.is_finite()) {
                return Err(SimError::BlowUp { t: state.t, agent: i });
            }
            torques.push(torque);
            derivative.push(d);
        }
        Ok(Evaluation {
            positions,
            e_hat,
            torques,
            derivative,
            power,
        })
    }

    /// One RK4 step. Every stage re-evaluates the controller at its own state.
    pub fn step(&self, state: &NetworkState, dt: f64) -> Result<NetworkState, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::BadStep(dt));
        }
        let k1 = self.evaluate(state)?;
        let s2 = advance(state, &k1, 0.5 * dt);
        let k2 = self.evaluate(&s2)?;
        let s3 = advance(state, &k2, 0.5 * dt);
        let k3 = self.evaluate(&s3)?;
        let s4 = advance(state, &k3, dt);
        let k4 = self.evaluate(&s4)?;
        let mut next = state.clone();
        for (i, agent) in next.agents.iter_mut().enumerate() {
            let parts = [
                &k1.derivative[i],
                &k2.derivative[i],
                &k3.derivative[i],
                &k4.derivative[i],
            ];
            combine(agent, parts, dt);
        }
        next.work += dt / 6.0 * (k1.power + 2.0 * k2.power + 2.0 * k3.power + k4.power);
        next.t = state.t + dt;
        if let Some(agent) = next.agents.iter().position(|a| !finite_agent(a)) {
            return Err(SimError::BlowUp { t: next.t, agent });
        }
        Ok(next)
    }

    /// Integrates over `[0, T]` and records every `stride`-th step.
    pub fn run(&self, initial: NetworkState, config: &SimConfig) -> Result<SimulationTrace, SimError> {
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(SimError::BadStep(config.dt));
        }
        let stride = config.stride.max(1);
        let steps = config.num_steps();
        let mut trace = SimulationTrace::new(self, config);
        let mut warnings = SingularityLog::new(self.models.len());
        if let Some(agent) = initial.agents.iter().position(|a| !finite_agent(a)) {
            return Err(SimError::BlowUp { t: initial.t, agent });
        }
        let mut state = initial;
        warnings.check(self, &state, config.sigma_floor);
        trace.push(self.sample(&state)?);
        for k in 1..=steps {
            let mut next = self.step(&state, config.dt)?;
            // Pin the clock to the grid so long runs do not drift.
            next.t = k as f64 * config.dt;
            state = next;
            warnings.check(self, &state, config.sigma_floor);
            if k % stride == 0 || k == steps {
                trace.push(self.sample(&state)?);
            }
        }
        trace.singularity_warnings = warnings.warnings;
        trace.final_state = Some(state);
        self.attach_lyapunov(&mut trace);
        Ok(trace)
    }

    pub fn sample(&self, state: &NetworkState) -> Result<TraceSample, SimError> {
        let eval = self.evaluate(state)?;
        let x = stack(&eval.positions);
        let errors = self.graph.edge_errors(&x)?;
        let m = self.graph.dim();
        let centroid = eval
            .positions
            .iter()
            .fold(DVector::zeros(m), |acc, p| acc + p)
            / eval.positions.len() as f64;
        let pid_torque = if self.controller.variant.uses_compensator()
            && self.actuation == Actuation::Controller
        {
            Some(
                state
                    .agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        control::pid_equivalent_form(
                            &self.models[i],
                            &a.joint(),
                            &eval.e_hat.rows(i * m, m).into_owned(),
                            &self.a_used(i, a),
                            a.y_integral.as_ref().expect("compensated state carries ∫y"),
                            &self.controller.gains,
                        )
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(TraceSample {
            t: state.t,
            q: state.agents.iter().map(|a| a.q.clone()).collect(),
            qdot: state.agents.iter().map(|a| a.qdot.clone()).collect(),
            x: eval.positions,
            e: errors.into_stacked(),
            e_hat: eval.e_hat,
            u: eval.torques,
            eta: state.agents.iter().map(|a| a.eta.clone()).collect(),
            a_hat: state.agents.iter().map(|a| a.a_hat.clone()).collect(),
            sigma_min: state
                .agents
                .iter()
                .zip(&self.models)
                .map(|(a, m)| m.singularity_distance(&a.q))
                .collect(),
            centroid,
            kinetic_energy: state.kinetic_energy(&self.models),
            work: state.work,
            pid_torque,
            lyapunov: LyapunovValues::default(),
        })
    }

    /// Fills in the Lyapunov values with `q*` taken as the final joint state.
    fn attach_lyapunov(&self, trace: &mut SimulationTrace) {
        let Some(last) = trace.samples.last() else {
            return;
        };
        let q_star = last.q.clone();
        let gains = self.controller.gains;
        let epsilon = if gains.ki > 0.0 {
            let c_max = self
                .models
                .iter()
                .map(|m| certificate::inertia_bounds_torus(m, std::f64::consts::PI / 6.0).1)
                .fold(0.0, f64::max);
            let lambda3 = trace
                .samples
                .iter()
                .filter_map(|s| self.graph.gradient_map(&stack(&s.x)).ok())
                .map(|g| crate::linalg::max_eigenvalue(&(g.transpose() * &g)) / 4.0)
                .fold(0.0, f64::max);
            certificate::epsilon_for(gains.ki, gains.alpha, c_max, lambda3)
        } else {
            1.0
        };
        let ctx = LyapunovContext::new(self, q_star, epsilon);
        for s in &mut trace.samples {
            s.lyapunov = certificate::lyapunov_values(self, &ctx, s);
        }
    }
}

fn finite_agent(a: &AgentState) -> bool {
    let opt = |v: &Option<DVector<f64>>| v.as_ref().is_none_or(|v| v.iter().all(|x| x.is_finite()));
    a.q.iter().chain(a.qdot.iter()).all(|v| v.is_finite())
        && opt(&a.eta)
        && opt(&a.a_hat)
        && opt(&a.y_integral)
}

fn axpy_opt(base: &Option<DVector<f64>>, d: &Option<DVector<f64>>, h: f64) -> Option<DVector<f64>> {
    match (base, d) {
        (Some(b), Some(d)) => Some(b + d * h),
        (b, _) => b.clone(),
    }
}

fn advance(state: &NetworkState, eval: &Evaluation, h: f64) -> NetworkState {
    NetworkState {
        t: state.t + h,
        work: state.work + h * eval.power,
        agents: state
            .agents
            .iter()
            .zip(&eval.derivative)
            .map(|(a, d)| AgentState {
                q: &a.q + &d.q * h,
                qdot: &a.qdot + &d.qdot * h,
                eta: axpy_opt(&a.eta, &d.eta, h),
                a_hat: axpy_opt(&a.a_hat, &d.a_hat, h),
                y_integral: axpy_opt(&a.y_integral, &d.y_integral, h),
            })
            .collect(),
    }
}

fn combine(agent: &mut AgentState, k: [&AgentState; 4], dt: f64) {
    let w = dt / 6.0;
    let mix = |f: &dyn Fn(&AgentState) -> &DVector<f64>| {
        (f(k[0]) + f(k[1]) * 2.0 + f(k[2]) * 2.0 + f(k[3])) * w
    };
    agent.q += mix(&|s| &s.q);
    agent.qdot += mix(&|s| &s.qdot);
    if let Some(eta) = agent.eta.as_mut() {
        *eta += mix(&|s| s.eta.as_ref().unwrap());
    }
    if let Some(a) = agent.a_hat.as_mut() {
        *a += mix(&|s| s.a_hat.as_ref().unwrap());
    }
    if let Some(y) = agent.y_integral.as_mut() {
        *y += mix(&|s| s.y_integral.as_ref().unwrap());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularityWarning {
    pub agent: usize,
    pub t: f64,
    pub sigma_min: f64,
}

/// Records entries into the near-singular region (one warning per entry).
struct SingularityLog {
    inside: Vec<bool>,
    warnings: Vec<SingularityWarning>,
}

impl SingularityLog {
    fn new(n: usize) -> Self {
        Self {
            inside: vec![false; n],
            warnings: Vec::new(),
        }
    }

    fn check(&mut self, net: &Network, state: &NetworkState, floor: f64) {
        for (i, (a, m)) in state.agents.iter().zip(&net.models).enumerate() {
            let sigma = m.singularity_distance(&a.q);
            let below = sigma < floor;
            if below && !self.inside[i] {
                self.warnings.push(SingularityWarning {
                    agent: i,
                    t: state.t,
                    sigma_min: sigma,
                });
            }
            self.inside[i] = below;
        }
    }
}

/// One recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub q: Vec<DVector<f64>>,
    pub qdot: Vec<DVector<f64>>,
    /// Global end-effector positions.
    pub x: Vec<DVector<f64>>,
    /// Stacked edge errors.
    pub e: DVector<f64>,
    /// Stacked formation gradient.
    pub e_hat: DVector<f64>,
    pub u: Vec<DVector<f64>>,
    pub eta: Vec<Option<DVector<f64>>>,
    pub a_hat: Vec<Option<DVector<f64>>>,
    pub sigma_min: Vec<f64>,
    pub centroid: DVector<f64>,
    pub kinetic_energy: f64,
    pub work: f64,
    /// Torque reconstructed from the PID reading, when a compensator is present.
    pub pid_torque: Option<Vec<DVector<f64>>>,
    pub lyapunov: LyapunovValues,
}

/// Shape of a trace, independent of its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLayout {
    pub num_agents: usize,
    pub dim: usize,
    pub dof: Vec<usize>,
    pub num_params: Vec<usize>,
    pub num_edges: usize,
    pub per_edge: usize,
    pub variant: ControllerVariant,
    pub dt: f64,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub layout: TraceLayout,
    pub samples: Vec<TraceSample>,
    pub singularity_warnings: Vec<SingularityWarning>,
    pub final_state: Option<NetworkState>,
}

impl SimulationTrace {
    fn new(net: &Network, config: &SimConfig) -> Self {
        Self {
            layout: TraceLayout {
                num_agents: net.graph.num_agents(),
                dim: net.graph.dim(),
                dof: net.models.iter().map(|m| m.dof()).collect(),
                num_params: net.models.iter().map(|m| m.num_kinematic_params()).collect(),
                num_edges: net.graph.num_edges(),
                per_edge: net.graph.error_dim(),
                variant: net.controller.variant,
                dt: config.dt,
                stride: config.stride.max(1),
            },
            samples: Vec::new(),
            singularity_warnings: Vec::new(),
            final_state: None,
        }
    }

    pub fn empty(layout: TraceLayout) -> Self {
        Self {
            layout,
            samples: Vec::new(),
            singularity_warnings: Vec::new(),
            final_state: None,
        }
    }

    fn push(&mut self, s: TraceSample) {
        self.samples.push(s);
    }

    pub fn first(&self) -> Option<&TraceSample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&TraceSample> {
        self.samples.last()
    }

    /// `max_k |e_k|` at the last sample.
    pub fn final_max_error(&self) -> f64 {
        self.last().map_or(f64::NAN, |s| s.e.amax())
    }

    /// `‖ξ‖` of the stacked joint velocities at the last sample.
    pub fn final_velocity_norm(&self) -> f64 {
        self.last()
            .map_or(f64::NAN, |s| s.qdot.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt())
    }

    pub fn centroid_drift(&self) -> f64 {
        match (self.first(), self.last()) {
            (Some(a), Some(b)) => (&b.centroid - &a.centroid).norm(),
            _ => f64::NAN,
        }
    }
}

/// Aggregated run metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub final_time: f64,
    pub final_max_error: f64,
    pub final_velocity_norm: f64,
    /// Start of the tail window (last 10 % of the run).
    pub tail_start: f64,
    /// `sup_t |e_k(t)|` over the tail window, per edge component.
    pub tail_edge_sup: Vec<f64>,
    /// Which Lyapunov function the variant is analysed with.
    pub lyapunov_name: &'static str,
    pub monotonicity_violations: usize,
    pub max_lyapunov_increase: f64,
    pub min_sigma: f64,
    pub min_sigma_per_agent: Vec<f64>,
    pub singularity_warnings: usize,
    pub centroid_drift: f64,
    pub pid_discrepancy: Option<f64>,
    /// `|ΔT_kin − W| / t_final`.
    pub energy_residual_rate: f64,
    pub converged: bool,
}

pub fn diagnostics(trace: &SimulationTrace, config: &SimConfig) -> Diagnostics {
    let samples = &trace.samples;
    let final_time = trace.last().map_or(0.0, |s| s.t);
    let tail_start = 0.9 * final_time;
    let width = trace.last().map_or(0, |s| s.e.len());
    let mut tail_edge_sup = vec![0.0f64; width];
    for s in samples.iter().filter(|s| s.t >= tail_start) {
        for (k, v) in s.e.iter().enumerate() {
            tail_edge_sup[k] = tail_edge_sup[k].max(v.abs());
        }
    }
    let name = match trace.layout.variant {
        ControllerVariant::Exact | ControllerVariant::Naive => "U1",
        ControllerVariant::Approx => "U2",
        ControllerVariant::Adaptive => "U3",
    };
    let pick = |l: &LyapunovValues| match name {
        "U1" => l.u1,
        "U2" => l.u2,
        _ => l.u3,
    };
    let mut violations = 0;
    let mut max_increase = f64::NEG_INFINITY;
    for w in samples.windows(2) {
        let inc = pick(&w[1].lyapunov) - pick(&w[0].lyapunov);
        max_increase = max_increase.max(inc);
        if inc > config.monotonicity_tolerance {
            violations += 1;
        }
    }
    let n = trace.layout.num_agents;
    let mut min_sigma_per_agent = vec![f64::INFINITY; n];
    for s in samples {
        for (i, v) in s.sigma_min.iter().enumerate() {
            min_sigma_per_agent[i] = min_sigma_per_agent[i].min(*v);
        }
    }
    let pid_discrepancy = samples
        .iter()
        .filter_map(|s| {
            s.pid_torque.as_ref().map(|pid| {
                pid.iter()
                    .zip(&s.u)
                    .map(|(a, b)| (a - b).amax())
                    .fold(0.0, f64::max)
            })
        })
        .reduce(f64::max);
    let energy_residual_rate = match (trace.first(), trace.last()) {
        (Some(a), Some(b)) if b.t > 0.0 => {
            ((b.kinetic_energy - a.kinetic_energy) - (b.work - a.work)).abs() / b.t
        }
        _ => 0.0,
    };
    let final_max_error = trace.final_max_error();
    let final_velocity_norm = trace.final_velocity_norm();
    Diagnostics {
        final_time,
        final_max_error,
        final_velocity_norm,
        tail_start,
        tail_edge_sup,
        lyapunov_name: name,
        monotonicity_violations: violations,
        max_lyapunov_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
        min_sigma: min_sigma_per_agent.iter().copied().fold(f64::INFINITY, f64::min),
        min_sigma_per_agent,
        singularity_warnings: trace.singularity_warnings.len(),
        centroid_drift: trace.centroid_drift(),
        pid_discrepancy,
        energy_residual_rate,
        converged: final_max_error <= config.error_tolerance
            && final_velocity_norm <= config.velocity_tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::model::{GravityMode, PlanarParams, PlanarTwoLink};
    use std::sync::Arc;

    fn planar(base: [f64; 2], gravity: GravityMode) -> ManipulatorModel {
        ManipulatorModel::new(
            Arc::new(PlanarTwoLink::new(PlanarParams::table_one().with_gravity(gravity))),
            DVector::from_row_slice(&base),
            nalgebra::DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    /// Two arms, one edge, bases 2 m apart.
    fn pair(variant: ControllerVariant, gravity: GravityMode) -> Network {
        let graph = FormationGraph::new(
            2,
            2,
            vec![Edge::new(0, 1)],
            crate::graph::DesiredGeometry::SquaredDistance(vec![0.25]),
        )
        .unwrap();
        let models = vec![planar([0.0, 0.0], gravity), planar([2.0, 0.0], gravity)];
        let a0 = vec![DVector::from_vec(vec![1.6, 1.4]); 2];
        Network::new(
            graph,
            models,
            Vec::new(),
            ControllerConfig {
                variant,
                gains: Gains::new(50.0, 20.0, 1.0, 0.02),
                a_hat0: a0,
            },
        )
        .unwrap()
    }

    fn q0() -> Vec<DVector<f64>> {
        vec![
            DVector::from_vec(vec![0.2, 1.2]),
            DVector::from_vec(vec![2.0, 1.0]),
        ]
    }

    #[test]
    fn gravity_compensated_rest_is_stationary() {
        let net = pair(ControllerVariant::Exact, GravityMode::Vertical)
            .with_actuation(Actuation::GravityCompensation);
        let mut s = net.initial_state(&q0(), None).unwrap();
        let start = s.clone();
        for _ in 0..100 {
            s = net.step(&s, 1e-3).unwrap();
        }
        for (a, b) in s.agents.iter().zip(&start.agents) {
            assert!((&a.q - &b.q).norm() < 1e-14);
            assert!(a.qdot.norm() < 1e-14);
        }
    }

    #[test]
    fn zero_length_run_has_initial_sample_only() {
        let net = pair(ControllerVariant::Exact, GravityMode::Horizontal);
        let s = net.initial_state(&q0(), None).unwrap();
        let cfg = SimConfig {
            t_final: 0.0,
            ..SimConfig::default()
        };
        let trace = net.run(s.clone(), &cfg).unwrap();
        assert_eq!(trace.samples.len(), 1);
        assert_eq!(trace.samples[0].q, q0());
    }

    #[test]
    fn rejects_bad_step() {
        let net = pair(ControllerVariant::Exact, GravityMode::Horizontal);
        let s = net.initial_state(&q0(), None).unwrap();
        assert!(matches!(net.step(&s, 0.0), Err(SimError::BadStep(_))));
    }

    #[test]
    fn passive_horizontal_conserves_energy() {
        let net = pair(ControllerVariant::Exact, GravityMode::Horizontal)
            .with_actuation(Actuation::Passive);
        let qd = vec![
            DVector::from_vec(vec![1.0, -0.5]),
            DVector::from_vec(vec![-0.3, 0.8]),
        ];
        let s = net.initial_state(&q0(), Some(&qd)).unwrap();
        let e0 = s.kinetic_energy(net.models());
        let cfg = SimConfig {
            t_final: 10.0,
            ..SimConfig::default()
        };
        let trace = net.run(s, &cfg).unwrap();
        for sample in &trace.samples {
            assert!((sample.kinetic_energy - e0).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_pair_converges() {
        let net = pair(ControllerVariant::Exact, GravityMode::Vertical);
        let s = net.initial_state(&q0(), None).unwrap();
        let cfg = SimConfig {
            t_final: 20.0,
            ..SimConfig::default()
        };
        let trace = net.run(s, &cfg).unwrap();
        let d = diagnostics(&trace, &cfg);
        assert!(d.converged, "{d:?}");
    }

    #[test]
    fn compensated_runs_track_pid_form() {
        let net = pair(ControllerVariant::Adaptive, GravityMode::Vertical);
        let s = net.initial_state(&q0(), None).unwrap();
        let cfg = SimConfig {
            t_final: 2.0,
            ..SimConfig::default()
        };
        let d = diagnostics(&net.run(s, &cfg).unwrap(), &cfg);
        assert!(d.pid_discrepancy.unwrap() < 1e-9, "{d:?}");
    }

    #[test]
    fn displacement_requires_aligned_frames() {
        let graph = FormationGraph::new(
            2,
            2,
            vec![Edge::new(0, 1)],
            crate::graph::DesiredGeometry::Displacement(vec![DVector::from_vec(vec![0.5, 0.0])]),
        )
        .unwrap();
        let rotated = planar([2.0, 0.0], GravityMode::Horizontal)
            .with_base(DVector::from_vec(vec![2.0, 0.0]), crate::linalg::rotation_matrix(2, &[0.5]))
            .unwrap();
        let err = Network::new(
            graph,
            vec![planar([0.0, 0.0], GravityMode::Horizontal), rotated],
            Vec::new(),
            ControllerConfig {
                variant: ControllerVariant::Exact,
                gains: Gains::new(1.0, 1.0, 0.0, 0.1),
                a_hat0: Vec::new(),
            },
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Control(ControlError::FrameMisaligned { agent: 1 })));
    }
}
