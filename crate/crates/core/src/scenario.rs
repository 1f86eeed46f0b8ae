//! Scenario files: a TOML document with `[graph]`, `[model]`, `[[agents]]`,
//! `[controller]`, `[simulation]` and `[certificate]` sections.
//!
//! Unknown keys are rejected. Angles are radians and may be written as
//! numbers or as simple expressions in `pi` (`"pi/3"`, `"-3pi/2"`, `"2*pi/3"`).
//! Agent indices in edge lists are 1-based.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::{AgentSampling, GridSpec};
use crate::control::{ControllerVariant, Gains};
use crate::error::{FieldError, ScenarioError};
use crate::graph::{DesiredGeometry, Edge, Flavor, FormationGraph};
use crate::linalg::{rotation_matrix, stack};
use crate::model::{
    ArmModel, GravityMode, ManipulatorModel, PlanarParams, PlanarTwoLink, SpatialElbow,
    SpatialParams,
};
use crate::sim::{ControllerConfig, Network, SimConfig};

/// A number, or a string expression in `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Angle {
    Value(f64),
    Expr(String),
}

impl Angle {
    pub fn resolve(&self) -> Option<f64> {
        match self {
            Angle::Value(v) => Some(*v),
            Angle::Expr(s) => parse_angle(s),
        }
    }
}

/// Parses `[-][coef][*]pi[/den]` or a plain number.
pub fn parse_angle(s: &str) -> Option<f64> {
    let t: String = s
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '*')
        .collect::<String>()
        .to_ascii_lowercase();
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, t.strip_prefix('+').unwrap_or(&t)),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok().filter(|d| *d != 0.0)?),
        None => (body, 1.0),
    };
    let value = match num.split_once("pi") {
        Some((coef, "")) => {
            let c = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().ok()? };
            c * std::f64::consts::PI
        }
        Some(_) => return None,
        None => num.parse::<f64>().ok()?,
    };
    let v = sign * value / den;
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub agents: usize,
    pub dim: usize,
    /// `"distance"` or `"displacement"`.
    pub flavor: String,
    /// 1-based `[tail, head]` pairs.
    pub edges: Vec<[usize; 2]>,
    /// Desired edge lengths, m (distance flavor).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<f64>>,
    /// Desired `x_tail − x_head`, m (displacement flavor).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacements: Option<Vec<Vec<f64>>>,
    /// A realization of the desired shape, m. Derives the desired geometry
    /// when the above are absent; required by the certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"planar2"` or `"spatial3"`.
    pub kind: String,
    /// `"horizontal"` or `"vertical"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub com: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    /// Spatial arm only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shoulder_height: Option<f64>,
    /// Spatial arm only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_inertia: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Base position, m.
    pub base: Vec<f64>,
    /// `[θ]` in 2-D, `[roll, pitch, yaw]` in 3-D.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Vec<Angle>>,
    pub q0: Vec<Angle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qdot0: Option<Vec<f64>>,
    /// Overrides `controller.a_hat0` for this agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_hat0: Option<Vec<f64>>,
    /// Per-joint `[lo, hi]` sampling box for the certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_box: Option<Vec<[Angle; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// `"exact"`, `"approx"`, `"adaptive"` or `"naive"`.
    pub variant: String,
    pub kp: f64,
    pub kd: f64,
    #[serde(default)]
    pub ki: f64,
    #[serde(default)]
    pub alpha: f64,
    /// Nominal kinematic parameters shared by all agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_hat0: Option<Vec<f64>>,
    /// Mass/inertia scale of the nominal model used by the naive law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_mass_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotonicity_tolerance: Option<f64>,
    /// Seed for randomized checks (`verify`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_step: Option<Angle>,
    /// Half-width of the default per-joint box around `q0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_box_half_width: Option<Angle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_hat_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_hat_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_hat_step: Option<f64>,
    /// `"lockstep"` or `"product"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia_q_step: Option<Angle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_configurations: Option<usize>,
}

/// The document as written, before cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub graph: Option<GraphSection>,
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub agents: Vec<AgentSection>,
    pub controller: Option<ControllerSection>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub certificate: CertificateSection,
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub graph: FormationGraph,
    pub reference: Option<Vec<DVector<f64>>>,
    pub models: Vec<ManipulatorModel>,
    pub nominal: Vec<ManipulatorModel>,
    pub controller: ControllerConfig,
    pub q0: Vec<DVector<f64>>,
    pub qdot0: Vec<DVector<f64>>,
    pub q_boxes: Vec<Vec<(f64, f64)>>,
    pub sim: SimConfig,
    pub seed: u64,
}

struct Errors(Vec<FieldError>);

impl Errors {
    fn push(&mut self, field: impl fmt::Display, message: impl fmt::Display) {
        self.0.push(FieldError {
            field: field.to_string(),
            message: message.to_string(),
        });
    }

    fn angles(&mut self, field: &str, v: &[Angle]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(k, a)| {
                a.resolve().unwrap_or_else(|| {
                    self.push(format!("{field}[{k}]"), format!("cannot read angle {a:?}"));
                    0.0
                })
            })
            .collect()
    }

    fn angle(&mut self, field: &str, a: &Angle) -> f64 {
        a.resolve().unwrap_or_else(|| {
            self.push(field, format!("cannot read angle {a:?}"));
            0.0
        })
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
    Scenario::from_file(file)
}

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let mut err = Errors(Vec::new());
        let Some(gs) = file.graph.clone() else {
            err.push("graph", "missing graph section");
            return Err(ScenarioError::Invalid(err.0));
        };
        let Some(ms) = file.model.clone() else {
            err.push("model", "missing model section");
            return Err(ScenarioError::Invalid(err.0));
        };
        let Some(cs) = file.controller.clone() else {
            err.push("controller", "missing controller section");
            return Err(ScenarioError::Invalid(err.0));
        };

        let n = gs.agents;
        let m = gs.dim;
        if n < 2 {
            err.push("graph.agents", "need at least two agents");
        }
        if m != 2 && m != 3 {
            err.push("graph.dim", "must be 2 or 3");
        }
        let flavor = match gs.flavor.as_str() {
            "distance" => Some(Flavor::Distance),
            "displacement" => Some(Flavor::Displacement),
            other => {
                err.push("graph.flavor", format!("unknown flavor {other:?}"));
                None
            }
        };
        let mut edges = Vec::new();
        for (k, &[t, h]) in gs.edges.iter().enumerate() {
            for (end, a) in [("tail", t), ("head", h)] {
                if a == 0 || a > n {
                    err.push(
                        format!("graph.edges[{}]", k + 1),
                        format!("{end} references agent {a}, valid agents are 1..={n}"),
                    );
                }
            }
            edges.push(Edge::new(t.wrapping_sub(1), h.wrapping_sub(1)));
        }
        if gs.edges.is_empty() {
            err.push("graph.edges", "no edges");
        }
        let reference = gs.reference.as_ref().map(|r| {
            if r.len() != n {
                err.push("graph.reference", format!("{} positions for {n} agents", r.len()));
            }
            for (i, p) in r.iter().enumerate() {
                if p.len() != m {
                    err.push(format!("graph.reference[{}]", i + 1), format!("expected {m} coordinates"));
                }
            }
            r.iter().map(|p| dvec(p)).collect::<Vec<_>>()
        });
        let desired = match (&gs.distances, &gs.displacements, flavor) {
            (Some(d), None, Some(Flavor::Distance)) => {
                if d.len() != gs.edges.len() {
                    err.push(
                        "graph.distances",
                        format!("{} entries for {} edges", d.len(), gs.edges.len()),
                    );
                }
                for (k, &v) in d.iter().enumerate() {
                    if !(v > 0.0 && v.is_finite()) {
                        err.push(format!("graph.distances[{}]", k + 1), "must be positive");
                    }
                }
                Some(DesiredGeometry::SquaredDistance(d.iter().map(|v| v * v).collect()))
            }
            (None, Some(z), Some(Flavor::Displacement)) => {
                if z.len() != gs.edges.len() {
                    err.push(
                        "graph.displacements",
                        format!("{} entries for {} edges", z.len(), gs.edges.len()),
                    );
                }
                for (k, v) in z.iter().enumerate() {
                    if v.len() != m {
                        err.push(format!("graph.displacements[{}]", k + 1), format!("expected {m} coordinates"));
                    }
                }
                Some(DesiredGeometry::Displacement(z.iter().map(|v| dvec(v)).collect()))
            }
            (None, None, Some(_)) if reference.is_some() => None,
            (None, None, _) => {
                err.push("graph", "give distances, displacements or reference");
                None
            }
            (Some(_), _, Some(Flavor::Displacement)) => {
                err.push("graph.distances", "not allowed for a displacement formation");
                None
            }
            (_, Some(_), Some(Flavor::Distance)) => {
                err.push("graph.displacements", "not allowed for a distance formation");
                None
            }
            _ => None,
        };

        // Model template.
        let gravity = match ms.gravity.as_deref() {
            None | Some("horizontal") => GravityMode::Horizontal,
            Some("vertical") => GravityMode::Vertical,
            Some(other) => {
                err.push("model.gravity", format!("unknown gravity mode {other:?}"));
                GravityMode::Horizontal
            }
        };
        let arm: Option<Arc<dyn ArmModel>> = match ms.kind.as_str() {
            "planar2" => {
                let mut p = PlanarParams::table_one().with_gravity(gravity);
                if let Some(v) = ms.mass {
                    p.mass = v;
                }
                if let Some(v) = ms.inertia {
                    p.inertia = v;
                }
                if let Some(v) = ms.length {
                    p.length = v;
                }
                if let Some(v) = ms.com {
                    p.com = v;
                }
                if let Some(v) = ms.g {
                    p.g = v;
                }
                if ms.shoulder_height.is_some() || ms.base_inertia.is_some() {
                    err.push("model", "shoulder_height/base_inertia apply to spatial3 only");
                }
                if m != 2 {
                    err.push("model.kind", "planar2 needs graph.dim = 2");
                }
                match PlanarTwoLink::try_new(p) {
                    Ok(a) => Some(Arc::new(a)),
                    Err(e) => {
                        err.push("model", e);
                        None
                    }
                }
            }
            "spatial3" => {
                let mut p = SpatialParams::compact().with_gravity(gravity);
                if let Some(v) = ms.mass {
                    p.mass = v;
                }
                if let Some(v) = ms.inertia {
                    p.inertia = v;
                }
                if let Some(v) = ms.length {
                    p.length = v;
                }
                if let Some(v) = ms.com {
                    p.com = v;
                }
                if let Some(v) = ms.g {
                    p.g = v;
                }
                if let Some(v) = ms.shoulder_height {
                    p.shoulder_height = v;
                }
                if let Some(v) = ms.base_inertia {
                    p.base_inertia = v;
                }
                if m != 3 {
                    err.push("model.kind", "spatial3 needs graph.dim = 3");
                }
                match SpatialElbow::try_new(p) {
                    Ok(a) => Some(Arc::new(a)),
                    Err(e) => {
                        err.push("model", e);
                        None
                    }
                }
            }
            other => {
                err.push("model.kind", format!("unknown model {other:?}"));
                None
            }
        };
        let scale = cs.nominal_mass_scale.unwrap_or(1.0);
        if !(scale > 0.0 && scale.is_finite()) {
            err.push("controller.nominal_mass_scale", "must be positive");
        }
        let nominal_arm = arm.as_ref().map(|a| {
            if scale == 1.0 {
                a.clone()
            } else {
                a.with_mass_scale(scale).unwrap_or_else(|| {
                    err.push("controller.nominal_mass_scale", "model does not support mass scaling");
                    a.clone()
                })
            }
        });

        // Controller.
        let variant = ControllerVariant::parse(&cs.variant).unwrap_or_else(|| {
            err.push("controller.variant", format!("unknown variant {:?}", cs.variant));
            ControllerVariant::Exact
        });
        let gains = Gains::new(cs.kp, cs.kd, cs.ki, cs.alpha);
        if let Err(e) = gains.validate(variant) {
            err.push("controller", e);
        }

        // Agents.
        if file.agents.len() != n {
            err.push("agents", format!("{} agents listed, graph has {n}", file.agents.len()));
        }
        let dof = arm.as_ref().map_or(0, |a| a.dof());
        let np = arm.as_ref().map_or(0, |a| a.num_kinematic_params());
        let mut models = Vec::new();
        let mut nominal = Vec::new();
        let mut q0 = Vec::new();
        let mut qdot0 = Vec::new();
        let mut a_hat0 = Vec::new();
        let mut q_boxes = Vec::new();
        let half = file
            .certificate
            .q_box_half_width
            .as_ref()
            .map(|a| err.angle("certificate.q_box_half_width", a))
            .unwrap_or(std::f64::consts::PI / 6.0);
        for (i, ag) in file.agents.iter().enumerate() {
            let f = |s: &str| format!("agents[{}].{s}", i + 1);
            if ag.base.len() != m {
                err.push(f("base"), format!("expected {m} coordinates"));
            }
            let rot_angles = ag
                .rotation
                .as_ref()
                .map(|r| err.angles(&f("rotation"), r))
                .unwrap_or_default();
            let want_rot = if m == 2 { 1 } else { 3 };
            if ag.rotation.is_some() && rot_angles.len() != want_rot {
                err.push(f("rotation"), format!("expected {want_rot} angles"));
            }
            let q = err.angles(&f("q0"), &ag.q0);
            if q.len() != dof {
                err.push(f("q0"), format!("expected {dof} joint angles"));
            }
            let qd = ag.qdot0.clone().unwrap_or_else(|| vec![0.0; dof]);
            if qd.len() != dof {
                err.push(f("qdot0"), format!("expected {dof} joint rates"));
            }
            let a0 = ag
                .a_hat0
                .clone()
                .or_else(|| cs.a_hat0.clone())
                .or_else(|| arm.as_ref().map(|a| a.kinematic_params().as_slice().to_vec()))
                .unwrap_or_default();
            if a0.len() != np {
                err.push(f("a_hat0"), format!("expected {np} kinematic parameters"));
            }
            let qbox: Vec<(f64, f64)> = match &ag.q_box {
                Some(b) => b
                    .iter()
                    .enumerate()
                    .map(|(k, [lo, hi])| {
                        let field = format!("agents[{}].q_box[{}]", i + 1, k + 1);
                        let (lo, hi) = (err.angle(&field, lo), err.angle(&field, hi));
                        if hi < lo {
                            err.push(&field, "upper bound below lower bound");
                        }
                        (lo, hi)
                    })
                    .collect(),
                None => q.iter().map(|v| (v - half, v + half)).collect(),
            };
            if qbox.len() != dof {
                err.push(f("q_box"), format!("expected {dof} intervals"));
            }
            if let (Some(arm), Some(nom), true) = (&arm, &nominal_arm, ag.base.len() == m) {
                let r = if ag.rotation.is_some() && rot_angles.len() == want_rot {
                    rotation_matrix(m, &rot_angles)
                } else {
                    DMatrix::identity(m, m)
                };
                match ManipulatorModel::new(arm.clone(), dvec(&ag.base), r.clone()) {
                    Ok(mm) => models.push(mm),
                    Err(e) => err.push(f("rotation"), e),
                }
                if let Ok(mm) = ManipulatorModel::new(nom.clone(), dvec(&ag.base), r) {
                    nominal.push(mm);
                }
            }
            q0.push(dvec(&q));
            qdot0.push(dvec(&qd));
            a_hat0.push(dvec(&a0));
            q_boxes.push(qbox);
        }

        // Simulation.
        let ss = &file.simulation;
        let d = SimConfig::default();
        let sim = SimConfig {
            t_final: ss.t_final.unwrap_or(d.t_final),
            dt: ss.dt.unwrap_or(d.dt),
            stride: ss.stride.unwrap_or(d.stride),
            error_tolerance: ss.error_tolerance.unwrap_or(d.error_tolerance),
            velocity_tolerance: ss.velocity_tolerance.unwrap_or(d.velocity_tolerance),
            sigma_floor: ss.sigma_floor.unwrap_or(d.sigma_floor),
            monotonicity_tolerance: ss.monotonicity_tolerance.unwrap_or(d.monotonicity_tolerance),
        };
        if !(sim.t_final >= 0.0 && sim.t_final.is_finite()) {
            err.push("simulation.t_final", "must be non-negative");
        }
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            err.push("simulation.dt", "must be positive");
        }
        if sim.stride == 0 {
            err.push("simulation.stride", "must be at least 1");
        }

        // Certificate fields that can be checked without a grid build.
        let c = &file.certificate;
        for (name, v) in [
            ("certificate.r1", c.r1),
            ("certificate.r2", c.r2),
            ("certificate.z_step", c.z_step),
            ("certificate.a_hat_step", c.a_hat_step),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    err.push(name, "must be positive");
                }
            }
        }
        if let Some(s) = &c.sampling {
            if AgentSampling::parse(s).is_none() {
                err.push("certificate.sampling", format!("unknown sampling {s:?}"));
            }
        }

        if !err.0.is_empty() {
            return Err(ScenarioError::Invalid(err.0));
        }

        let flavor = flavor.expect("checked");
        let graph = match desired {
            Some(d) => FormationGraph::new(n, m, edges, d),
            None => FormationGraph::from_reference(
                n,
                m,
                edges,
                flavor,
                &stack(reference.as_ref().expect("checked")),
            ),
        }
        .map_err(|e| ScenarioError::Invalid(vec![FieldError {
            field: "graph".into(),
            message: e.to_string(),
        }]))?;
        if let Some(r) = &reference {
            let e = graph.edge_errors(&stack(r)).map_err(|e| {
                ScenarioError::Invalid(vec![FieldError {
                    field: "graph.reference".into(),
                    message: e.to_string(),
                }])
            })?;
            if e.max_abs() > 1e-9 {
                return Err(ScenarioError::Invalid(vec![FieldError {
                    field: "graph.reference".into(),
                    message: format!("does not realize the desired geometry (max |e| = {:.3e})", e.max_abs()),
                }]));
            }
        }
        if flavor == Flavor::Displacement && models.iter().any(|mm| !mm.has_identity_rotation()) {
            return Err(ScenarioError::Invalid(vec![FieldError {
                field: "agents.rotation".into(),
                message: "displacement formations need a common frame orientation".into(),
            }]));
        }

        Ok(Self {
            graph,
            reference,
            models,
            nominal,
            controller: ControllerConfig {
                variant,
                gains,
                a_hat0,
            },
            q0,
            qdot0,
            q_boxes,
            sim,
            seed: ss.seed.unwrap_or(0),
            file,
        })
    }

    pub fn name(&self) -> &str {
        self.file.name.as_deref().unwrap_or("scenario")
    }

    pub fn num_agents(&self) -> usize {
        self.graph.num_agents()
    }

    pub fn network(&self) -> Result<Network, crate::error::SimError> {
        Network::new(
            self.graph.clone(),
            self.models.clone(),
            self.nominal.clone(),
            self.controller.clone(),
        )
    }

    /// Network with a different controller variant (same gains and `â(0)`).
    pub fn network_with(&self, variant: ControllerVariant) -> Result<Network, crate::error::SimError> {
        let mut c = self.controller.clone();
        c.variant = variant;
        Network::new(self.graph.clone(), self.models.clone(), self.nominal.clone(), c)
    }

    /// Grid specification from `[certificate]` and the per-agent boxes.
    pub fn grid_spec(&self) -> Result<GridSpec, crate::error::CertificateError> {
        let reference = self.reference.clone().ok_or_else(|| {
            crate::error::CertificateError::Setup("graph.reference is required for the certificate".into())
        })?;
        let c = &self.file.certificate;
        let mut g = GridSpec::new(reference, self.q_boxes.clone());
        if let Some(v) = c.r1 {
            g.r1 = v;
        }
        if let Some(v) = c.r2 {
            g.r2 = v;
        }
        if let Some(v) = c.z_step {
            g.z_step = v;
        }
        if let Some(v) = c.q_step.as_ref().and_then(Angle::resolve) {
            g.q_step = v;
        }
        if let Some(v) = c.inertia_q_step.as_ref().and_then(Angle::resolve) {
            g.inertia_q_step = v;
        }
        g.a_hat_range = (
            c.a_hat_min.unwrap_or(g.a_hat_range.0),
            c.a_hat_max.unwrap_or(g.a_hat_range.1),
        );
        if let Some(v) = c.a_hat_step {
            g.a_hat_step = v;
        }
        if let Some(s) = c.sampling.as_deref().and_then(AgentSampling::parse) {
            g.sampling = s;
        }
        if let Some(v) = c.max_configurations {
            g.max_configurations = v;
        }
        g.sigma_floor = self.sim.sigma_floor;
        g.fixed_a_hat = match self.controller.variant {
            ControllerVariant::Adaptive => None,
            ControllerVariant::Exact => Some(self.models.iter().map(|m| m.kinematic_params()).collect()),
            ControllerVariant::Approx | ControllerVariant::Naive => Some(self.controller.a_hat0.clone()),
        };
        Ok(g)
    }

    /// Box centres, used as `q*` for the gravity Lipschitz estimate.
    pub fn q_star(&self) -> Vec<DVector<f64>> {
        self.q_boxes
            .iter()
            .map(|b| DVector::from_iterator(b.len(), b.iter().map(|(lo, hi)| 0.5 * (lo + hi))))
            .collect()
    }

    /// Normalized TOML: angle expressions resolved to numbers, defaults left implicit.
    pub fn to_toml(&self) -> String {
        let mut f = self.file.clone();
        let num = |a: &mut Angle| {
            if let Some(v) = a.resolve() {
                *a = Angle::Value(v);
            }
        };
        for ag in &mut f.agents {
            ag.q0.iter_mut().for_each(num);
            if let Some(r) = &mut ag.rotation {
                r.iter_mut().for_each(num);
            }
            if let Some(b) = &mut ag.q_box {
                for pair in b.iter_mut() {
                    pair.iter_mut().for_each(num);
                }
            }
        }
        for a in [
            &mut f.certificate.q_step,
            &mut f.certificate.q_box_half_width,
            &mut f.certificate.inertia_q_step,
        ]
        .into_iter()
        .flatten()
        {
            num(a);
        }
        toml::to_string_pretty(&f).expect("scenario serializes")
    }
}
