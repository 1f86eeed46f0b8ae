//! Sample-based estimates of the Lyapunov-analysis constants and the gain
//! inequalities they feed.
//!
//! Every constant here is an extremum over a finite grid. Minima are
//! under-approximations of the true infimum and maxima of the true supremum,
//! so the report is a numerical estimate, not a certificate in the formal
//! sense. The ξ-dependence of the bounding factors is handled analytically:
//! for `f(ξ) = Σ_j ξ_j F_j`, `‖f(ξ)‖ ≤ ‖ξ‖ (Σ_j ‖F_j‖²)^½`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::control::{ControllerVariant, Gains};
use crate::error::CertificateError;
use crate::graph::{DesiredGeometry, FormationGraph};
use crate::linalg::{block_diag, max_eigenvalue, min_eigenvalue, spectral_norm, stack};
use crate::model::{ManipulatorModel, DEFAULT_SIGMA_FLOOR};
use crate::sim::{Network, TraceSample};

/// How per-agent grids are combined into network samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentSampling {
    /// All agents take the same index into their own grid.
    Lockstep,
    /// Full Cartesian product across agents. Grows exponentially in `N`.
    Product,
}

impl AgentSampling {
    pub fn name(self) -> &'static str {
        match self {
            AgentSampling::Lockstep => "lockstep",
            AgentSampling::Product => "product",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lockstep" => Some(AgentSampling::Lockstep),
            "product" => Some(AgentSampling::Product),
            _ => None,
        }
    }
}

/// Ranges and steps of the grid method.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Reference end-effector positions `x*` (global frame), one per agent.
    pub reference: Vec<DVector<f64>>,
    /// Radius of the error ball, `‖e‖² ≤ r₁`.
    pub r1: f64,
    /// Radius of the velocity ball, `‖ξ‖² ≤ r₂`.
    pub r2: f64,
    /// Lattice step for end-effector offsets from `x*`, m.
    pub z_step: f64,
    /// Joint-angle step, rad.
    pub q_step: f64,
    /// Per-agent, per-joint closed intervals for `q`.
    pub q_boxes: Vec<Vec<(f64, f64)>>,
    pub a_hat_range: (f64, f64),
    pub a_hat_step: f64,
    /// When set, the single nominal-parameter sample (one vector per agent)
    /// used instead of the `â` range. Fixed-Jacobian laws use their `â(0)`.
    pub fixed_a_hat: Option<Vec<DVector<f64>>>,
    pub sampling: AgentSampling,
    /// Joint step of the full-torus sweep used for the inertia bounds.
    pub inertia_q_step: f64,
    /// Joint samples with `σ_min(J)` at or below this are discarded.
    pub sigma_floor: f64,
    /// Upper limit on the number of `z` samples.
    pub max_configurations: usize,
}

impl GridSpec {
    /// Defaults: `r₁ = 16`, `r₂ = 1`, `z` step 0.5 m, `q` step π/6,
    /// `â ∈ [1.5, 2.5]` step 0.2, lockstep sampling.
    pub fn new(reference: Vec<DVector<f64>>, q_boxes: Vec<Vec<(f64, f64)>>) -> Self {
        Self {
            reference,
            r1: 16.0,
            r2: 1.0,
            z_step: 0.5,
            q_step: PI / 6.0,
            q_boxes,
            a_hat_range: (1.5, 2.5),
            a_hat_step: 0.2,
            fixed_a_hat: None,
            sampling: AgentSampling::Lockstep,
            inertia_q_step: PI / 6.0,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            max_configurations: 2_000_000,
        }
    }

    /// Boxes of half-width `half` around each agent's joint vector.
    pub fn boxes_around(q0: &[DVector<f64>], half: f64) -> Vec<Vec<(f64, f64)>> {
        q0.iter()
            .map(|q| q.iter().map(|&v| (v - half, v + half)).collect())
            .collect()
    }
}

/// Inclusive arithmetic progression `lo, lo + step, …, ≤ hi`.
fn progression(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || hi < lo {
        return vec![lo];
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| lo + k as f64 * step).collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out.into_iter().map(DVector::from_vec).collect()
}

/// Combines per-agent lists into network samples.
fn combine_agents<T: Clone>(per_agent: &[Vec<T>], sampling: AgentSampling) -> Vec<Vec<T>> {
    match sampling {
        AgentSampling::Lockstep => {
            let longest = per_agent.iter().map(|v| v.len()).max().unwrap_or(0);
            (0..longest)
                .map(|k| {
                    per_agent
                        .iter()
                        .map(|v| v[k.min(v.len() - 1)].clone())
                        .collect()
                })
                .collect()
        }
        AgentSampling::Product => {
            let mut out: Vec<Vec<T>> = vec![Vec::new()];
            for list in per_agent {
                let mut next = Vec::with_capacity(out.len() * list.len());
                for prefix in &out {
                    for item in list {
                        let mut p = prefix.clone();
                        p.push(item.clone());
                        next.push(p);
                    }
                }
                out = next;
            }
            out
        }
    }
}

/// Realized sample points of the grid method.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    /// Stacked end-effector configurations with `‖e‖² ≤ r₁`.
    pub configurations: Vec<DVector<f64>>,
    /// Per-agent joint samples inside the boxes and off the singular set.
    pub agent_joints: Vec<Vec<DVector<f64>>>,
    /// Network joint samples (per-agent vectors).
    pub joints: Vec<Vec<DVector<f64>>>,
    /// Network nominal-parameter samples (per-agent vectors).
    pub a_hats: Vec<Vec<DVector<f64>>>,
    pub r1: f64,
    pub r2: f64,
    pub inertia_q_step: f64,
    pub reference: DVector<f64>,
}

impl SampleGrid {
    pub fn build(
        graph: &FormationGraph,
        models: &[ManipulatorModel],
        spec: &GridSpec,
    ) -> Result<Self, CertificateError> {
        let n = graph.num_agents();
        let m = graph.dim();
        if spec.reference.len() != n || spec.reference.iter().any(|x| x.len() != m) {
            return Err(CertificateError::Setup(format!(
                "reference needs {n} positions of dimension {m}"
            )));
        }
        if spec.q_boxes.len() != n {
            return Err(CertificateError::Setup(format!(
                "q boxes given for {} agents, formation has {n}",
                spec.q_boxes.len()
            )));
        }
        if !(spec.r1 > 0.0 && spec.r2 > 0.0 && spec.z_step > 0.0 && spec.q_step > 0.0) {
            return Err(CertificateError::Setup(
                "r1, r2, z_step and q_step must be positive".into(),
            ));
        }
        let reference = stack(&spec.reference);
        let e_ref = graph.edge_errors(&reference)?;
        if e_ref.max_abs() > 1e-9 {
            return Err(CertificateError::Setup(format!(
                "reference does not realize the desired geometry (max |e| = {:.3e})",
                e_ref.max_abs()
            )));
        }

        let configurations = lattice_configurations(graph, spec)?;
        if configurations.is_empty() {
            return Err(CertificateError::EmptyGrid("no z samples".into()));
        }

        let mut agent_joints = Vec::with_capacity(n);
        for (i, (boxes, model)) in spec.q_boxes.iter().zip(models).enumerate() {
            if boxes.len() != model.dof() {
                return Err(CertificateError::Setup(format!(
                    "agent {}: {} joint intervals for a {}-joint arm",
                    i + 1,
                    boxes.len(),
                    model.dof()
                )));
            }
            let axes: Vec<Vec<f64>> = boxes
                .iter()
                .map(|&(lo, hi)| progression(lo, hi, spec.q_step))
                .collect();
            let samples: Vec<_> = cartesian(&axes)
                .into_iter()
                .filter(|q| model.singularity_distance(q) > spec.sigma_floor)
                .collect();
            if samples.is_empty() {
                return Err(CertificateError::EmptyGrid(format!(
                    "agent {}: every joint sample is singular",
                    i + 1
                )));
            }
            agent_joints.push(samples);
        }
        let joints = combine_agents(&agent_joints, spec.sampling);

        let a_hats = match &spec.fixed_a_hat {
            Some(fixed) => {
                if fixed.len() != n
                    || fixed.iter().zip(models).any(|(a, m)| a.len() != m.num_kinematic_params())
                {
                    return Err(CertificateError::Setup(
                        "fixed a_hat needs one parameter vector per agent".into(),
                    ));
                }
                vec![fixed.clone()]
            }
            None => {
                let (lo, hi) = spec.a_hat_range;
                let per_agent_a: Vec<Vec<DVector<f64>>> = models
                    .iter()
                    .map(|mdl| {
                        let axis = progression(lo, hi, spec.a_hat_step);
                        cartesian(&vec![axis; mdl.num_kinematic_params()])
                    })
                    .collect();
                combine_agents(&per_agent_a, spec.sampling)
            }
        };

        Ok(Self {
            configurations,
            agent_joints,
            joints,
            a_hats,
            r1: spec.r1,
            r2: spec.r2,
            inertia_q_step: spec.inertia_q_step,
            reference,
        })
    }

    pub fn num_points(&self) -> usize {
        self.configurations.len() * self.joints.len() * self.a_hats.len()
    }
}

/// Squared error contribution of edge `k` given placed positions.
fn edge_error_sq(graph: &FormationGraph, k: usize, xa: &DVector<f64>, xb: &DVector<f64>) -> f64 {
    let z = xa - xb;
    match graph.desired() {
        DesiredGeometry::SquaredDistance(d) => (z.norm_squared() - d[k]).powi(2),
        DesiredGeometry::Displacement(zs) => (z - &zs[k]).norm_squared(),
    }
}

/// Configurations `x = x* + step·k` (agent 1 pinned at `x*₁`) with
/// `Σ‖e_k‖² ≤ r₁`, enumerated agent by agent in breadth-first order and
/// pruned on the partial error sum.
fn lattice_configurations(
    graph: &FormationGraph,
    spec: &GridSpec,
) -> Result<Vec<DVector<f64>>, CertificateError> {
    let n = graph.num_agents();
    let m = graph.dim();
    let mut order = vec![0usize];
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut head = 0;
    while head < order.len() {
        let a = order[head];
        head += 1;
        for (_, b) in graph.neighbors(a) {
            if !seen[b] {
                seen[b] = true;
                parent[b] = a;
                order.push(b);
            }
        }
    }
    let edges = graph.edges().to_vec();
    let reach = |child: usize, par: usize| -> f64 {
        // Radius around the parent within which the edge error can stay ≤ √r₁.
        let k = edges
            .iter()
            .position(|e| (e.tail == child && e.head == par) || (e.tail == par && e.head == child))
            .expect("BFS parent is a neighbour");
        match graph.desired() {
            DesiredGeometry::SquaredDistance(d) => (d[k] + spec.r1.sqrt()).sqrt(),
            DesiredGeometry::Displacement(zs) => zs[k].norm() + spec.r1.sqrt(),
        }
    };

    let mut out = Vec::new();
    let mut placed: Vec<Option<DVector<f64>>> = vec![None; n];
    placed[0] = Some(spec.reference[0].clone());

    struct Ctx<'a> {
        graph: &'a FormationGraph,
        spec: &'a GridSpec,
        order: &'a [usize],
        parent: &'a [usize],
        m: usize,
    }

    fn recurse(
        ctx: &Ctx<'_>,
        reach: &dyn Fn(usize, usize) -> f64,
        depth: usize,
        partial: f64,
        placed: &mut Vec<Option<DVector<f64>>>,
        out: &mut Vec<DVector<f64>>,
    ) -> Result<(), CertificateError> {
        if depth == ctx.order.len() {
            let parts: Vec<DVector<f64>> = placed.iter().map(|p| p.clone().unwrap()).collect();
            out.push(stack(&parts));
            if out.len() > ctx.spec.max_configurations {
                return Err(CertificateError::Setup(format!(
                    "z grid exceeds {} samples; raise z_step or lower r1",
                    ctx.spec.max_configurations
                )));
            }
            return Ok(());
        }
        let a = ctx.order[depth];
        let par = ctx.parent[a];
        let centre = placed[par].clone().unwrap();
        let rho = reach(a, par);
        let step = ctx.spec.z_step;
        let base = &ctx.spec.reference[a];
        // Integer offset range per axis so that base + step·k lies in the box around `centre`.
        let ranges: Vec<(i64, i64)> = (0..ctx.m)
            .map(|d| {
                let lo = ((centre[d] - rho - base[d]) / step).ceil() as i64;
                let hi = ((centre[d] + rho - base[d]) / step).floor() as i64;
                (lo, hi)
            })
            .collect();
        let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        if ranges.iter().any(|r| r.0 > r.1) {
            return Ok(());
        }
        loop {
            let x = DVector::from_iterator(
                ctx.m,
                (0..ctx.m).map(|d| base[d] + step * k[d] as f64),
            );
            if (&x - &centre).norm() <= rho + 1e-12 {
                let mut sum = partial;
                for (ke, e) in ctx.graph.edges().iter().enumerate() {
                    let other = if e.tail == a {
                        e.head
                    } else if e.head == a {
                        e.tail
                    } else {
                        continue;
                    };
                    if let Some(xo) = &placed[other] {
                        sum += if e.tail == a {
                            edge_error_sq(ctx.graph, ke, &x, xo)
                        } else {
                            edge_error_sq(ctx.graph, ke, xo, &x)
                        };
                    }
                }
                if sum <= ctx.spec.r1 {
                    placed[a] = Some(x);
                    recurse(ctx, reach, depth + 1, sum, placed, out)?;
                    placed[a] = None;
                }
            }
            // Odometer increment.
            let mut d = 0;
            loop {
                if d == ctx.m {
                    return Ok(());
                }
                k[d] += 1;
                if k[d] <= ranges[d].1 {
                    break;
                }
                k[d] = ranges[d].0;
                d += 1;
            }
        }
    }

    let ctx = Ctx {
        graph,
        spec,
        order: &order,
        parent: &parent,
        m,
    };
    recurse(&ctx, &reach, 1, 0.0, &mut placed, &mut out)?;
    Ok(out)
}

/// `(c_min, c_max)`: extreme eigenvalues of `H(q)` over the given samples.
pub fn estimate_inertia_bounds(model: &ManipulatorModel, samples: &[DVector<f64>]) -> (f64, f64) {
    samples.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), q| {
        let h = model.inertia(q);
        (lo.min(min_eigenvalue(&h)), hi.max(max_eigenvalue(&h)))
    })
}

/// Inertia bounds over the full joint torus `[0, 2π)ⁿ` at the given step.
pub fn inertia_bounds_torus(model: &ManipulatorModel, step: f64) -> (f64, f64) {
    let axis = progression(0.0, 2.0 * PI - 1e-12, step);
    let samples = cartesian(&vec![axis; model.dof()]);
    estimate_inertia_bounds(model, &samples)
}

/// `ε = 0.9 / (2 (1 + k₃₁ + α k₄₁))`, the largest admissible value with a 10 % margin.
pub fn epsilon_for(ki: f64, alpha: f64, c_max: f64, lambda3: f64) -> f64 {
    let k31 = 0.5 * ki + ki * c_max;
    let k41 = lambda3.sqrt() * ki;
    0.9 / (2.0 * (1.0 + k31 + alpha * k41))
}

/// Quantities that depend on a network joint sample only.
struct JointData {
    j: DMatrix<f64>,
    h: DMatrix<f64>,
    dj: Vec<DMatrix<f64>>,
    c_unit: Vec<DMatrix<f64>>,
    j_hat: Vec<DMatrix<f64>>,
}

fn joint_data(
    graph: &FormationGraph,
    models: &[ManipulatorModel],
    q: &[DVector<f64>],
    a_hats: &[Vec<DVector<f64>>],
) -> JointData {
    let m = graph.dim();
    let blocks_j: Vec<_> = models.iter().zip(q).map(|(md, qi)| md.true_jacobian(qi)).collect();
    let blocks_h: Vec<_> = models.iter().zip(q).map(|(md, qi)| md.inertia(qi)).collect();
    let total_dof: usize = models.iter().map(|md| md.dof()).sum();
    let total_task = m * models.len();
    let mut dj = Vec::with_capacity(total_dof);
    let mut c_unit = Vec::with_capacity(total_dof);
    let (mut row, mut col) = (0, 0);
    for (md, qi) in models.iter().zip(q) {
        let a = md.kinematic_params();
        for k in 0..md.dof() {
            const STEP: f64 = 1e-6;
            let mut qp = qi.clone();
            let mut qm = qi.clone();
            qp[k] += STEP;
            qm[k] -= STEP;
            let d = (md.jacobian(&qp, &a) - md.jacobian(&qm, &a)) / (2.0 * STEP);
            let mut full = DMatrix::zeros(total_task, total_dof);
            full.view_mut((row, col), d.shape()).copy_from(&d);
            dj.push(full);
            let mut unit = DVector::zeros(md.dof());
            unit[k] = 1.0;
            let c = md.coriolis(qi, &unit);
            let mut cf = DMatrix::zeros(total_dof, total_dof);
            cf.view_mut((col, col), c.shape()).copy_from(&c);
            c_unit.push(cf);
        }
        row += m;
        col += md.dof();
    }
    let j_hat = a_hats
        .iter()
        .map(|a| {
            let blocks: Vec<_> = models
                .iter()
                .zip(q)
                .zip(a)
                .map(|((md, qi), ai)| md.jacobian(qi, ai))
                .collect();
            block_diag(&blocks)
        })
        .collect();
    JointData {
        j: block_diag(&blocks_j),
        h: block_diag(&blocks_h),
        dj,
        c_unit,
        j_hat,
    }
}

/// Running extrema of the grid scan.
#[derive(Debug, Clone, Copy)]
struct Extrema {
    lambda1: f64,
    lambda2: f64,
    lambda4: f64,
    beta12: f64,
    beta13: f64,
    beta14: f64,
    kappa1: f64,
}

impl Extrema {
    fn identity() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: f64::INFINITY,
            lambda4: f64::INFINITY,
            beta12: 0.0,
            beta13: 0.0,
            beta14: 0.0,
            kappa1: 0.0,
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            lambda1: self.lambda1.max(o.lambda1),
            lambda2: self.lambda2.min(o.lambda2),
            lambda4: self.lambda4.min(o.lambda4),
            beta12: self.beta12.max(o.beta12),
            beta13: self.beta13.max(o.beta13),
            beta14: self.beta14.max(o.beta14),
            kappa1: self.kappa1.max(o.kappa1),
        }
    }
}

fn root_sum_sq_norms<'a>(mats: impl Iterator<Item = DMatrix<f64>> + 'a) -> f64 {
    mats.map(|f| spectral_norm(&f).powi(2)).sum::<f64>().sqrt()
}

/// Constants that depend on the formation and kinematics only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConstants {
    /// `max λ_max(4 D_zᵀB̄ᵀB̄D_z)`.
    pub lambda1: f64,
    /// `min λ_min(D_zᵀB̄ᵀ J(q,a) Jᵀ(q,a) B̄D_z)`.
    pub lambda2: f64,
    /// `λ₁ / 4`.
    pub lambda3: f64,
    /// As `λ₂` with `J(q, â)` over the `â` grid.
    pub lambda4: f64,
    /// `max λ_max(J(q,a) Jᵀ(q,a))`.
    pub lambda_j: f64,
    /// `max ‖J(q, â)‖`.
    pub lambda_j_hat: f64,
    /// `max ‖J(q, â) − J(q, a)‖`.
    pub delta: f64,
}

/// `β₁₁ … β₁₄` and the assembled `k₁₁`, `k₁₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiBounds {
    pub beta11: f64,
    pub beta12: f64,
    pub beta13: f64,
    pub beta14: f64,
    pub k11: f64,
    pub k12: f64,
}

impl PhiBounds {
    fn assemble(beta11: f64, beta12: f64, beta13: f64, beta14: f64) -> Self {
        Self {
            beta11,
            beta12,
            beta13,
            beta14,
            k11: beta11 + beta13 + beta14,
            k12: beta11 + 4.0 * beta12 + beta13 + beta14,
        }
    }
}

/// Constants of the compensator analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaBounds {
    pub kappa1: f64,
    pub kappa2: f64,
    pub beta21: f64,
    pub beta22: f64,
    pub beta31: f64,
    pub k21: f64,
    pub k22: f64,
    pub k31: f64,
    pub k32: f64,
    pub k33: f64,
    pub k41: f64,
    pub k42: f64,
    pub k43: f64,
    /// `ε`; only meaningful when `K_I > 0`.
    pub epsilon: f64,
}

impl EtaBounds {
    /// Assembly of the η-related constants. With `K_I = 0` there is no
    /// compensator and every η term vanishes.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        ki: f64,
        alpha: f64,
        c_max: f64,
        lambda3: f64,
        kappa1: f64,
        kappa2: f64,
        beta22: f64,
        phi: &PhiBounds,
    ) -> Self {
        let beta31 = lambda3.sqrt();
        if ki <= 0.0 {
            return Self {
                kappa1,
                kappa2,
                beta21: 0.0,
                beta22: 0.0,
                beta31,
                k21: 0.0,
                k22: 0.0,
                k31: 0.0,
                k32: 0.0,
                k33: 0.0,
                k41: 0.0,
                k42: phi.k11,
                k43: phi.k12,
                epsilon: f64::INFINITY,
            };
        }
        let beta21 = kappa1 * kappa2 / ki;
        let k31 = 0.5 * ki + ki * c_max;
        let k41 = beta31 * ki;
        Self {
            kappa1,
            kappa2,
            beta21,
            beta22,
            beta31,
            k21: beta21 * beta21,
            k22: beta22 * beta22,
            k31,
            k32: 0.5 * ki * beta21 * beta21,
            k33: ki,
            k41,
            k42: phi.k11 + beta31 * ki + beta31 * ki * c_max + beta31 * ki * beta21,
            k43: phi.k12 + beta31 * ki * c_max,
            epsilon: epsilon_for(ki, alpha, c_max, lambda3),
        }
    }

    /// `ε⁻¹`, zero when there is no compensator.
    pub fn inv_epsilon(&self) -> f64 {
        if self.epsilon.is_finite() {
            1.0 / self.epsilon
        } else {
            0.0
        }
    }
}

/// Everything the gain conditions need, from one pass over the grid.
#[derive(Debug, Clone)]
struct Scan {
    spectral: SpectralConstants,
    phi: PhiBounds,
    kappa1: f64,
    beta22_parts: (f64, f64),
}

fn scan(net: &Network, grid: &SampleGrid) -> Result<Scan, CertificateError> {
    let graph = net.graph();
    let models = net.models();
    if grid.joints.is_empty() || grid.configurations.is_empty() || grid.a_hats.is_empty() {
        return Err(CertificateError::EmptyGrid("grid has an empty axis".into()));
    }
    let bbar = graph.kron_incidence();
    let bbar_t = bbar.transpose();
    let joint_data: Vec<JointData> = grid
        .joints
        .par_iter()
        .map(|q| joint_data(graph, models, q, &grid.a_hats))
        .collect();

    // z-independent quantities.
    let mut lambda_j = 0.0f64;
    let mut lambda_j_hat = 0.0f64;
    let mut delta = 0.0f64;
    let mut beta11 = 0.0f64;
    let mut h_norm = 0.0f64;
    let mut c_norm = 0.0f64;
    for jd in &joint_data {
        lambda_j = lambda_j.max(max_eigenvalue(&(&jd.j * jd.j.transpose())));
        for jh in &jd.j_hat {
            lambda_j_hat = lambda_j_hat.max(spectral_norm(jh));
            delta = delta.max(spectral_norm(&(jh - &jd.j)));
        }
        let jh = &jd.j * &jd.h;
        let bj = &bbar_t * &jd.j;
        let b11 = root_sum_sq_norms((0..bj.ncols()).map(|c| {
            let zc: Vec<DVector<f64>> = split_edges(&bj.column(c).into_owned(), graph.dim());
            graph.block_diag_relative(&zc).transpose() * &bbar_t * &jh
        }));
        beta11 = beta11.max(b11);
        h_norm = h_norm.max(spectral_norm(&jd.h));
        c_norm = c_norm.max(root_sum_sq_norms(jd.c_unit.iter().map(|c| c.transpose())));
    }

    let reference = &grid.reference;
    let ext = grid
        .configurations
        .par_iter()
        .map(|x| -> Result<Extrema, CertificateError> {
            let r = graph.rigidity_matrix(x)?;
            let rrt = &r * r.transpose();
            let mut ex = Extrema::identity();
            ex.lambda1 = 4.0 * max_eigenvalue(&rrt);
            let e_norm = graph.edge_errors(x)?.stacked().norm();
            if e_norm > 1e-9 {
                ex.kappa1 = (x - reference).norm() / e_norm;
            }
            for jd in &joint_data {
                let rj = &r * &jd.j;
                ex.lambda2 = ex.lambda2.min(min_eigenvalue(&(&rj * rj.transpose())));
                ex.beta12 = ex.beta12.max(spectral_norm(&(rj.transpose() * &rj * &jd.h)));
                let rh = &r;
                ex.beta13 = ex
                    .beta13
                    .max(root_sum_sq_norms(jd.dj.iter().map(|d| rh * d * &jd.h)));
                ex.beta14 = ex
                    .beta14
                    .max(root_sum_sq_norms(jd.c_unit.iter().map(|c| &rj * c.transpose())));
                for jh in &jd.j_hat {
                    let rjh = &r * jh;
                    ex.lambda4 = ex.lambda4.min(min_eigenvalue(&(&rjh * rjh.transpose())));
                }
            }
            Ok(ex)
        })
        .try_reduce(Extrema::identity, |a, b| Ok(a.merge(b)))?;

    let sqrt_r2 = grid.r2.sqrt();
    let phi = PhiBounds::assemble(
        beta11 * sqrt_r2,
        ext.beta12,
        ext.beta13 * sqrt_r2,
        ext.beta14 * sqrt_r2,
    );
    Ok(Scan {
        spectral: SpectralConstants {
            lambda1: ext.lambda1,
            lambda2: ext.lambda2,
            lambda3: ext.lambda1 / 4.0,
            lambda4: ext.lambda4,
            lambda_j,
            lambda_j_hat,
            delta,
        },
        phi,
        kappa1: ext.kappa1,
        beta22_parts: (h_norm, c_norm * sqrt_r2),
    })
}

fn split_edges(v: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    (0..v.len() / m).map(|k| v.rows(k * m, m).into_owned()).collect()
}

/// Spectral constants of the formation/kinematics over the grid.
pub fn estimate_spectral_constants(
    net: &Network,
    grid: &SampleGrid,
) -> Result<SpectralConstants, CertificateError> {
    Ok(scan(net, grid)?.spectral)
}

/// `β₁₁ … β₁₄` and `(k₁₁, k₁₂)` over `{‖e‖² ≤ r₁, ‖ξ‖² ≤ r₂}` and the `q` grid.
pub fn estimate_phi_bounds(net: &Network, grid: &SampleGrid) -> Result<PhiBounds, CertificateError> {
    Ok(scan(net, grid)?.phi)
}

/// `κ₂`: largest ratio `‖G_i(q) − G_i(q*)‖ / ‖h_i(q) − h_i(q*)‖` over each agent's joint samples.
pub fn estimate_gravity_lipschitz(
    models: &[ManipulatorModel],
    grid: &SampleGrid,
    q_star: &[DVector<f64>],
) -> f64 {
    let mut kappa2 = 0.0f64;
    for ((md, samples), qs) in models.iter().zip(&grid.agent_joints).zip(q_star) {
        let g_star = md.gravity(qs);
        let h_star = md.forward_kinematics(qs);
        for q in samples {
            let dh = (md.forward_kinematics(q) - &h_star).norm();
            if dh > 1e-9 {
                kappa2 = kappa2.max((md.gravity(q) - &g_star).norm() / dh);
            }
        }
    }
    kappa2
}

/// η-subsystem constants for a given `K_I` and `q*`.
pub fn estimate_eta_bounds(
    net: &Network,
    grid: &SampleGrid,
    ki: f64,
    q_star: &[DVector<f64>],
) -> Result<EtaBounds, CertificateError> {
    let s = scan(net, grid)?;
    let (_, c_max) = network_inertia_bounds(net.models(), grid.inertia_q_step);
    Ok(eta_from_scan(net, grid, &s, ki, c_max, q_star))
}

fn eta_from_scan(
    net: &Network,
    grid: &SampleGrid,
    s: &Scan,
    ki: f64,
    c_max: f64,
    q_star: &[DVector<f64>],
) -> EtaBounds {
    let kappa2 = estimate_gravity_lipschitz(net.models(), grid, q_star);
    let beta22 = if ki > 0.0 {
        s.beta22_parts.0 + s.beta22_parts.1 / ki
    } else {
        0.0
    };
    EtaBounds::assemble(
        ki,
        net.controller().gains.alpha,
        c_max,
        s.spectral.lambda3,
        s.kappa1,
        kappa2,
        beta22,
        &s.phi,
    )
}

fn network_inertia_bounds(models: &[ManipulatorModel], step: f64) -> (f64, f64) {
    models.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), m| {
        let (a, b) = inertia_bounds_torus(m, step);
        (lo.min(a), hi.max(b))
    })
}

/// One evaluated gain inequality. Passes iff `margin > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCondition {
    pub label: String,
    pub margin: f64,
    pub passed: bool,
}

impl GainCondition {
    fn new(label: &str, margin: f64) -> Self {
        Self {
            label: label.into(),
            margin,
            passed: margin > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub variant: ControllerVariant,
    pub gains: Gains,
    pub z_samples: usize,
    pub q_samples: usize,
    pub a_hat_samples: usize,
    pub r1: f64,
    pub r2: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub spectral: SpectralConstants,
    pub phi: PhiBounds,
    pub eta: EtaBounds,
    /// `λ₄ / (4 λ_Ĵ λ₃)`.
    pub delta_star: f64,
    /// Upper end of the admissible `α` interval, `c_min / c_max`.
    pub alpha_max: f64,
    pub kp_min: f64,
    pub kd_min: f64,
    pub conditions: Vec<GainCondition>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    /// Human-readable report.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gain certificate ({} controller)", self.variant.name());
        let _ = writeln!(
            s,
            "gains: K_P = {}, K_D = {}, K_I = {}, alpha = {}",
            self.gains.kp, self.gains.kd, self.gains.ki, self.gains.alpha
        );
        let _ = writeln!(
            s,
            "grid: {} z samples, {} q samples, {} a_hat samples, r1 = {}, r2 = {}",
            self.z_samples, self.q_samples, self.a_hat_samples, self.r1, self.r2
        );
        let _ = writeln!(s, "(all constants are grid extrema: sample-based, not certified)");
        let _ = writeln!(s);
        for (k, v) in self.key_values() {
            let _ = writeln!(s, "  {k:<14} {v:>14.6e}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "conditions:");
        for c in &self.conditions {
            let _ = writeln!(
                s,
                "  [{}] {:<48} margin {:+.6e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.label,
                c.margin
            );
        }
        let _ = writeln!(
            s,
            "overall: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }

    /// Named constants in a fixed order.
    pub fn key_values(&self) -> Vec<(&'static str, f64)> {
        let sp = &self.spectral;
        let e = &self.eta;
        vec![
            ("c_min", self.c_min),
            ("c_max", self.c_max),
            ("alpha_max", self.alpha_max),
            ("lambda1", sp.lambda1),
            ("lambda2", sp.lambda2),
            ("lambda3", sp.lambda3),
            ("lambda4", sp.lambda4),
            ("lambda_J", sp.lambda_j),
            ("lambda_J_hat", sp.lambda_j_hat),
            ("delta", sp.delta),
            ("delta_star", self.delta_star),
            ("beta11", self.phi.beta11),
            ("beta12", self.phi.beta12),
            ("beta13", self.phi.beta13),
            ("beta14", self.phi.beta14),
            ("k11", self.phi.k11),
            ("k12", self.phi.k12),
            ("kappa1", e.kappa1),
            ("kappa2", e.kappa2),
            ("beta21", e.beta21),
            ("beta22", e.beta22),
            ("beta31", e.beta31),
            ("k21", e.k21),
            ("k22", e.k22),
            ("k31", e.k31),
            ("k32", e.k32),
            ("k33", e.k33),
            ("k41", e.k41),
            ("k42", e.k42),
            ("k43", e.k43),
            ("epsilon", e.epsilon),
            ("kp_min", self.kp_min),
            ("kd_min", self.kd_min),
        ]
    }

    /// Machine-readable `key = value` lines, conditions included.
    pub fn to_key_value_file(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant.name());
        let _ = writeln!(s, "z_samples = {}", self.z_samples);
        let _ = writeln!(s, "q_samples = {}", self.q_samples);
        let _ = writeln!(s, "a_hat_samples = {}", self.a_hat_samples);
        for (k, v) in self.key_values() {
            let _ = writeln!(s, "{k} = {v:e}");
        }
        for (i, c) in self.conditions.iter().enumerate() {
            let _ = writeln!(s, "condition{}.label = {}", i + 1, c.label);
            let _ = writeln!(s, "condition{}.margin = {:e}", i + 1, c.margin);
            let _ = writeln!(s, "condition{}.passed = {}", i + 1, c.passed);
        }
        let _ = writeln!(s, "passed = {}", self.passed());
        s
    }
}

/// Evaluates the inequalities for `variant` with the report's constants.
pub fn check_gain_conditions(
    report: &CertificateReport,
    gains: &Gains,
    variant: ControllerVariant,
) -> Vec<GainCondition> {
    let sp = &report.spectral;
    let phi = &report.phi;
    let eta = &report.eta;
    let (kp, kd, alpha) = (gains.kp, gains.kd, gains.alpha);
    let inv_eps = eta.inv_epsilon();
    let mut out = vec![
        GainCondition::new("alpha < c_min/c_max", report.alpha_max - alpha),
        GainCondition::new(
            "K_D > 2 c_max lambda1 lambda_J",
            kd - 2.0 * report.c_max * sp.lambda1 * sp.lambda_j,
        ),
    ];
    match variant {
        ControllerVariant::Exact | ControllerVariant::Naive => {
            out.push(GainCondition::new(
                "lambda2 K_P - k11 > 1",
                sp.lambda2 * kp - phi.k11 - 1.0,
            ));
            out.push(GainCondition::new("K_D - alpha k12 > 1", kd - alpha * phi.k12 - 1.0));
        }
        ControllerVariant::Approx => {
            out.push(GainCondition::new("delta < delta*", report.delta_star - sp.delta));
            out.push(GainCondition::new(
                "K_P(a l4 - 4a lJh l3 d) - k21/eps - k32 - a k42 > 1",
                kp * (alpha * sp.lambda4 - 4.0 * alpha * sp.lambda_j_hat * sp.lambda3 * sp.delta)
                    - inv_eps * eta.k21
                    - eta.k32
                    - alpha * eta.k42
                    - 1.0,
            ));
            out.push(GainCondition::new(
                "K_D - k22/eps - k33 - a k43 - K_P l3 d > 1",
                kd - inv_eps * eta.k22 - eta.k33 - alpha * eta.k43 - kp * sp.lambda3 * sp.delta - 1.0,
            ));
        }
        ControllerVariant::Adaptive => {
            out.push(GainCondition::new(
                "a l4 K_P - k21/eps - k32 - a k42 > 1",
                alpha * sp.lambda4 * kp - inv_eps * eta.k21 - eta.k32 - alpha * eta.k42 - 1.0,
            ));
            out.push(GainCondition::new(
                "K_D - k22/eps - k33 - a k43 > 1",
                kd - inv_eps * eta.k22 - eta.k33 - alpha * eta.k43 - 1.0,
            ));
        }
    }
    out
}

fn minimal_gains(
    variant: ControllerVariant,
    gains: &Gains,
    c_max: f64,
    sp: &SpectralConstants,
    phi: &PhiBounds,
    eta: &EtaBounds,
) -> (f64, f64) {
    let alpha = gains.alpha;
    let inv_eps = eta.inv_epsilon();
    let positivity = 2.0 * c_max * sp.lambda1 * sp.lambda_j;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    match variant {
        ControllerVariant::Exact | ControllerVariant::Naive => (
            ratio(phi.k11 + 1.0, sp.lambda2),
            (alpha * phi.k12 + 1.0).max(positivity),
        ),
        ControllerVariant::Approx => {
            let kp_min = ratio(
                inv_eps * eta.k21 + eta.k32 + alpha * eta.k42 + 1.0,
                alpha * sp.lambda4 - 4.0 * alpha * sp.lambda_j_hat * sp.lambda3 * sp.delta,
            );
            let kd_min = (inv_eps * eta.k22 + eta.k33 + alpha * eta.k43
                + gains.kp * sp.lambda3 * sp.delta
                + 1.0)
                .max(positivity);
            (kp_min, kd_min)
        }
        ControllerVariant::Adaptive => (
            ratio(
                inv_eps * eta.k21 + eta.k32 + alpha * eta.k42 + 1.0,
                alpha * sp.lambda4,
            ),
            (inv_eps * eta.k22 + eta.k33 + alpha * eta.k43 + 1.0).max(positivity),
        ),
    }
}

/// Runs the full grid method for the network's controller. `q_star` is the
/// joint configuration at the desired shape, used for the gravity Lipschitz
/// constant; it only matters when `K_I > 0`.
pub fn certify(
    net: &Network,
    grid: &SampleGrid,
    q_star: &[DVector<f64>],
) -> Result<CertificateReport, CertificateError> {
    let s = scan(net, grid)?;
    let (c_min, c_max) = network_inertia_bounds(net.models(), grid.inertia_q_step);
    let gains = net.controller().gains;
    let variant = net.controller().variant;
    let eta = eta_from_scan(net, grid, &s, gains.ki, c_max, q_star);
    let sp = s.spectral;
    let delta_star = if sp.lambda_j_hat > 0.0 && sp.lambda3 > 0.0 {
        sp.lambda4 / (4.0 * sp.lambda_j_hat * sp.lambda3)
    } else {
        0.0
    };
    let (kp_min, kd_min) = minimal_gains(variant, &gains, c_max, &sp, &s.phi, &eta);
    let mut report = CertificateReport {
        variant,
        gains,
        z_samples: grid.configurations.len(),
        q_samples: grid.joints.len(),
        a_hat_samples: grid.a_hats.len(),
        r1: grid.r1,
        r2: grid.r2,
        c_min,
        c_max,
        spectral: sp,
        phi: s.phi,
        eta,
        delta_star,
        alpha_max: c_min / c_max,
        kp_min,
        kd_min,
        conditions: Vec::new(),
    };
    report.conditions = check_gain_conditions(&report, &gains, variant);
    Ok(report)
}

/// Lower and upper quadratic bounds of `U₁`:
/// `½c₀₁‖e‖² + ½c₀₂‖ξ‖² ≤ U₁ ≤ ½c₀₃‖e‖² + ½c₀₄‖ξ‖²`.
pub fn sandwich_constants(
    gains: &Gains,
    c_min: f64,
    c_max: f64,
    lambda1: f64,
    lambda_j: f64,
) -> [f64; 4] {
    let a = gains.alpha;
    let lead = gains.kp + a * gains.kd;
    let cross = a * c_max * lambda1 * lambda_j;
    [lead - cross, c_min - a * c_max, lead + cross, c_max + a * c_max]
}

/// Values of the Lyapunov functions at one state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LyapunovValues {
    pub u1: f64,
    pub v_eta: f64,
    pub u2: f64,
    pub u3: f64,
}

/// Fixed data for evaluating the Lyapunov functions along a run.
#[derive(Debug, Clone)]
pub struct LyapunovContext {
    pub gains: Gains,
    pub epsilon: f64,
    /// `η* = K_I⁻¹ G(q*)` per agent (zero without compensator).
    pub eta_star: Vec<DVector<f64>>,
    pub a_true: Vec<DVector<f64>>,
}

impl LyapunovContext {
    pub fn new(net: &Network, q_star: Vec<DVector<f64>>, epsilon: f64) -> Self {
        let gains = net.controller().gains;
        let eta_star = net
            .models()
            .iter()
            .zip(&q_star)
            .map(|(m, q)| {
                if gains.ki > 0.0 {
                    m.gravity(q) / gains.ki
                } else {
                    DVector::zeros(m.dof())
                }
            })
            .collect();
        Self {
            gains,
            epsilon,
            eta_star,
            a_true: net.models().iter().map(|m| m.kinematic_params()).collect(),
        }
    }
}

/// `U₁ = ½eᵀ(K_P + αK_D)e + ½ξᵀHξ + α êᵀJ(q,a)Hξ`,
/// `V_η = ½η̃ᵀK_I⁻¹η̃` with `η̃ = η − η* − Hξ`, `U₂ = ε⁻¹V_η + U₁`,
/// `U₃ = ½K_P‖â − a‖² + U₂`.
///
/// The ½ on the error term is what makes the `K_P` cross terms cancel
/// against `ξᵀu`, given `ê = ∇_x ½‖e‖²`.
pub fn lyapunov_values(net: &Network, ctx: &LyapunovContext, s: &TraceSample) -> LyapunovValues {
    let g = &ctx.gains;
    let m = net.graph().dim();
    let mut u1 = 0.5 * (g.kp + g.alpha * g.kd) * s.e.norm_squared();
    let mut eta_sq = 0.0;
    let mut a_sq = 0.0;
    for (i, model) in net.models().iter().enumerate() {
        let q = &s.q[i];
        let xi = &s.qdot[i];
        let h = model.inertia(q);
        let hxi = &h * xi;
        u1 += 0.5 * xi.dot(&hxi);
        let e_i = s.e_hat.rows(i * m, m);
        u1 += g.alpha * (model.true_jacobian(q) * &hxi).dot(&e_i);
        if let Some(eta) = &s.eta[i] {
            eta_sq += (eta - &ctx.eta_star[i] - &hxi).norm_squared();
        }
        if let Some(a) = &s.a_hat[i] {
            a_sq += (a - &ctx.a_true[i]).norm_squared();
        }
    }
    let v_eta = if g.ki > 0.0 { 0.5 * eta_sq / g.ki } else { 0.0 };
    let u2 = if g.ki > 0.0 { u1 + v_eta / ctx.epsilon } else { u1 };
    LyapunovValues {
        u1,
        v_eta,
        u2,
        u3: u2 + 0.5 * g.kp * a_sq,
    }
}

/// Cross-term function `φ₁ = ê̇ᵀJHξ + êᵀJ̇Hξ + êᵀJCᵀξ` evaluated directly at
/// an end-effector configuration `x`, joint sample `q` and velocity `ξ`
/// (treated as independent, as in the grid method). Distance formations only.
pub fn phi1(
    net: &Network,
    x: &DVector<f64>,
    q: &[DVector<f64>],
    xi: &DVector<f64>,
) -> Result<f64, CertificateError> {
    let graph = net.graph();
    let models = net.models();
    let z = graph.relative_positions(x)?;
    let e = graph.edge_errors(x)?.into_stacked();
    let bbar = graph.kron_incidence();
    let dz = graph.block_diag_relative(&z);
    let jd = joint_data(graph, models, q, &[]);
    let jxi = &jd.j * xi;
    let zdot = split_edges(&(bbar.transpose() * &jxi), graph.dim());
    let edot = 2.0 * dz.transpose() * bbar.transpose() * &jxi;
    let e_hat = 2.0 * &bbar * &dz * &e;
    let e_hat_dot = 2.0 * &bbar * graph.block_diag_relative(&zdot) * &e + 2.0 * &bbar * &dz * edot;
    let jdot = jd
        .dj
        .iter()
        .zip(xi.iter())
        .fold(DMatrix::zeros(jd.j.nrows(), jd.j.ncols()), |acc, (d, v)| acc + d * *v);
    let c = jd
        .c_unit
        .iter()
        .zip(xi.iter())
        .fold(DMatrix::zeros(jd.h.nrows(), jd.h.ncols()), |acc, (cu, v)| acc + cu * *v);
    let hxi = &jd.h * xi;
    Ok(e_hat_dot.dot(&(&jd.j * &hxi))
        + e_hat.dot(&(jdot * &hxi))
        + e_hat.dot(&(&jd.j * c.transpose() * xi)))
}
