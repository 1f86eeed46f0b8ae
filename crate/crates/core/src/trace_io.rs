//! Trace files: one CSV per signal group plus `summary.json`.
//!
//! Header cells carry units in brackets (`t [s]`, `e1 [m^2]`). Floats are
//! written in shortest round-trip form, so reading a trace back is exact and
//! reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certificate::LyapunovValues;
use crate::control::ControllerVariant;
use crate::error::IoError;
use crate::sim::{Diagnostics, SimulationTrace, SingularityWarning, TraceLayout, TraceSample};

pub const FILES: [&str; 6] = [
    "positions.csv",
    "errors.csv",
    "joints.csv",
    "estimates.csv",
    "controls.csv",
    "lyapunov.csv",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub num_agents: usize,
    pub dim: usize,
    pub dof: Vec<usize>,
    pub num_params: Vec<usize>,
    pub num_edges: usize,
    pub per_edge: usize,
    pub variant: String,
    pub dt: f64,
    pub stride: usize,
    pub has_eta: bool,
    pub has_a_hat: bool,
    pub has_pid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningRecord {
    pub agent: usize,
    pub t: f64,
    pub sigma_min: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub layout: LayoutRecord,
    pub samples: usize,
    pub final_time: f64,
    pub final_max_error: f64,
    pub final_velocity_norm: f64,
    pub tail_start: f64,
    pub tail_edge_sup: Vec<f64>,
    pub lyapunov: String,
    pub monotonicity_violations: usize,
    pub max_lyapunov_increase: f64,
    pub min_sigma: f64,
    pub min_sigma_per_agent: Vec<f64>,
    pub centroid_drift: f64,
    pub pid_discrepancy: Option<f64>,
    pub energy_residual_rate: f64,
    pub converged: bool,
    pub singularity_warnings: Vec<WarningRecord>,
}

impl RunSummary {
    pub fn new(scenario: &str, trace: &SimulationTrace, d: &Diagnostics) -> Self {
        Self {
            scenario: scenario.into(),
            layout: layout_record(trace),
            samples: trace.samples.len(),
            final_time: d.final_time,
            final_max_error: d.final_max_error,
            final_velocity_norm: d.final_velocity_norm,
            tail_start: d.tail_start,
            tail_edge_sup: d.tail_edge_sup.clone(),
            lyapunov: d.lyapunov_name.into(),
            monotonicity_violations: d.monotonicity_violations,
            max_lyapunov_increase: d.max_lyapunov_increase,
            min_sigma: d.min_sigma,
            min_sigma_per_agent: d.min_sigma_per_agent.clone(),
            centroid_drift: d.centroid_drift,
            pid_discrepancy: d.pid_discrepancy,
            energy_residual_rate: d.energy_residual_rate,
            converged: d.converged,
            singularity_warnings: trace
                .singularity_warnings
                .iter()
                .map(|w| WarningRecord {
                    agent: w.agent + 1,
                    t: w.t,
                    sigma_min: w.sigma_min,
                })
                .collect(),
        }
    }
}

fn layout_record(trace: &SimulationTrace) -> LayoutRecord {
    let l = &trace.layout;
    LayoutRecord {
        num_agents: l.num_agents,
        dim: l.dim,
        dof: l.dof.clone(),
        num_params: l.num_params.clone(),
        num_edges: l.num_edges,
        per_edge: l.per_edge,
        variant: l.variant.name().into(),
        dt: l.dt,
        stride: l.stride,
        has_eta: l.variant.uses_compensator(),
        has_a_hat: l.variant.uses_estimate(),
        has_pid: l.variant.uses_compensator(),
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];

fn columns(layout: &LayoutRecord) -> [Vec<String>; 6] {
    let n = layout.num_agents;
    let mut positions = vec!["t [s]".to_string()];
    for i in 1..=n {
        for a in AXES.iter().take(layout.dim) {
            positions.push(format!("{a}{i} [m]"));
        }
    }
    for a in AXES.iter().take(layout.dim) {
        positions.push(format!("p_{a} [m]"));
    }
    let mut errors = vec!["t [s]".to_string()];
    for k in 1..=layout.num_edges {
        if layout.per_edge == 1 {
            errors.push(format!("e{k} [m^2]"));
        } else {
            for a in AXES.iter().take(layout.per_edge) {
                errors.push(format!("e{k}_{a} [m]"));
            }
        }
    }
    let mut joints = vec!["t [s]".to_string()];
    for (i, &d) in layout.dof.iter().enumerate() {
        for j in 1..=d {
            joints.push(format!("q{}_{j} [rad]", i + 1));
        }
    }
    for (i, &d) in layout.dof.iter().enumerate() {
        for j in 1..=d {
            joints.push(format!("qdot{}_{j} [rad/s]", i + 1));
        }
    }
    for i in 1..=n {
        joints.push(format!("sigma{i} [m]"));
    }
    let mut estimates = vec!["t [s]".to_string()];
    if layout.has_a_hat {
        for (i, &p) in layout.num_params.iter().enumerate() {
            for k in 1..=p {
                estimates.push(format!("a_hat{}_{k} [m]", i + 1));
            }
        }
    }
    if layout.has_eta {
        for (i, &d) in layout.dof.iter().enumerate() {
            for j in 1..=d {
                estimates.push(format!("eta{}_{j} [N*m*s]", i + 1));
            }
        }
    }
    let mut controls = vec!["t [s]".to_string()];
    for (i, &d) in layout.dof.iter().enumerate() {
        for j in 1..=d {
            controls.push(format!("u{}_{j} [N*m]", i + 1));
        }
    }
    if layout.has_pid {
        for (i, &d) in layout.dof.iter().enumerate() {
            for j in 1..=d {
                controls.push(format!("u_pid{}_{j} [N*m]", i + 1));
            }
        }
    }
    let lyapunov = ["t [s]", "U1 [J]", "V_eta [J]", "U2 [J]", "U3 [J]", "T_kin [J]", "W [J]"]
        .map(String::from)
        .to_vec();
    [positions, errors, joints, estimates, controls, lyapunov]
}

fn rows(s: &TraceSample) -> [Vec<f64>; 6] {
    let flat = |v: &[DVector<f64>]| v.iter().flat_map(|x| x.iter().copied()).collect::<Vec<_>>();
    let mut positions = vec![s.t];
    positions.extend(flat(&s.x));
    positions.extend(s.centroid.iter());
    let mut errors = vec![s.t];
    errors.extend(s.e.iter());
    let mut joints = vec![s.t];
    joints.extend(flat(&s.q));
    joints.extend(flat(&s.qdot));
    joints.extend(&s.sigma_min);
    let mut estimates = vec![s.t];
    for a in s.a_hat.iter().flatten() {
        estimates.extend(a.iter());
    }
    for e in s.eta.iter().flatten() {
        estimates.extend(e.iter());
    }
    let mut controls = vec![s.t];
    controls.extend(flat(&s.u));
    if let Some(p) = &s.pid_torque {
        controls.extend(flat(p));
    }
    let l = &s.lyapunov;
    let lyapunov = vec![s.t, l.u1, l.v_eta, l.u2, l.u3, s.kinetic_energy, s.work];
    [positions, errors, joints, estimates, controls, lyapunov]
}

fn file_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Renders the six CSV tables and `summary.json` as `(file name, contents)`.
pub fn render_trace(trace: &SimulationTrace, summary: &RunSummary) -> Vec<(&'static str, String)> {
    let headers = columns(&summary.layout);
    let mut writers: Vec<csv::Writer<Vec<u8>>> = headers
        .iter()
        .map(|h| {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(h).expect("in-memory write");
            w
        })
        .collect();
    for s in &trace.samples {
        for (w, row) in writers.iter_mut().zip(rows(s)) {
            w.write_record(row.iter().map(|v| v.to_string()))
                .expect("in-memory write");
        }
    }
    let mut out: Vec<(&'static str, String)> = FILES
        .iter()
        .zip(writers)
        .map(|(name, w)| {
            let bytes = w.into_inner().expect("in-memory flush");
            (*name, String::from_utf8(bytes).expect("csv output is utf-8"))
        })
        .collect();
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    out.push(("summary.json", json + "\n"));
    out
}

/// Writes the six CSV tables and `summary.json` into `dir` (created if needed).
pub fn write_trace(trace: &SimulationTrace, summary: &RunSummary, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let mut paths = Vec::new();
    for (name, text) in render_trace(trace, summary) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(file_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

fn read_table(path: &Path, expected: usize) -> Result<Vec<Vec<f64>>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let width = r.headers().map_err(csv_err(path))?.len();
    if width != expected {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            message: format!("{width} columns, layout implies {expected}"),
        });
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IoError::Format {
                path: path.to_path_buf(),
                message: format!("row {}: {e}", line + 2),
            })?;
        out.push(row);
    }
    Ok(out)
}

/// Reads `summary.json` from a trace directory.
pub fn read_summary(dir: &Path) -> Result<RunSummary, IoError> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(file_err(&path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Format {
        path: path.clone(),
        message: e.to_string(),
    })
}

/// Rebuilds a trace from a directory written by [`write_trace`]. The
/// formation gradient is not stored and comes back as zeros.
pub fn read_trace(dir: &Path) -> Result<(SimulationTrace, RunSummary), IoError> {
    let summary = read_summary(dir)?;
    let l = &summary.layout;
    let variant = ControllerVariant::parse(&l.variant).ok_or_else(|| IoError::Format {
        path: dir.join("summary.json"),
        message: format!("unknown variant {:?}", l.variant),
    })?;
    let headers = columns(l);
    let mut tables = Vec::new();
    for (name, h) in FILES.iter().zip(&headers) {
        tables.push(read_table(&dir.join(name), h.len())?);
    }
    let count = tables[0].len();
    if tables.iter().any(|t| t.len() != count) {
        return Err(IoError::Format {
            path: dir.to_path_buf(),
            message: "tables have different row counts".into(),
        });
    }
    let n = l.num_agents;
    let take = |row: &[f64], at: &mut usize, len: usize| {
        let v = DVector::from_row_slice(&row[*at..*at + len]);
        *at += len;
        v
    };
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let [p, e, j, est, c, ly] = [0, 1, 2, 3, 4, 5].map(|t| tables[t][k].as_slice());
        let mut at = 1;
        let x: Vec<_> = (0..n).map(|_| take(p, &mut at, l.dim)).collect();
        let centroid = take(p, &mut at, l.dim);
        let mut at = 1;
        let q: Vec<_> = l.dof.iter().map(|&d| take(j, &mut at, d)).collect();
        let qdot: Vec<_> = l.dof.iter().map(|&d| take(j, &mut at, d)).collect();
        let sigma_min = j[at..at + n].to_vec();
        let mut at = 1;
        let a_hat: Vec<_> = l
            .num_params
            .iter()
            .map(|&p| l.has_a_hat.then(|| take(est, &mut at, p)))
            .collect();
        let eta: Vec<_> = l
            .dof
            .iter()
            .map(|&d| l.has_eta.then(|| take(est, &mut at, d)))
            .collect();
        let mut at = 1;
        let u: Vec<_> = l.dof.iter().map(|&d| take(c, &mut at, d)).collect();
        let pid_torque = l
            .has_pid
            .then(|| l.dof.iter().map(|&d| take(c, &mut at, d)).collect());
        let e_vec = DVector::from_row_slice(&e[1..]);
        samples.push(TraceSample {
            t: p[0],
            q,
            qdot,
            e_hat: DVector::zeros(n * l.dim),
            x,
            e: e_vec,
            u,
            eta,
            a_hat,
            sigma_min,
            centroid,
            kinetic_energy: ly[5],
            work: ly[6],
            pid_torque,
            lyapunov: LyapunovValues {
                u1: ly[1],
                v_eta: ly[2],
                u2: ly[3],
                u3: ly[4],
            },
        });
    }
    let trace = SimulationTrace {
        layout: TraceLayout {
            num_agents: n,
            dim: l.dim,
            dof: l.dof.clone(),
            num_params: l.num_params.clone(),
            num_edges: l.num_edges,
            per_edge: l.per_edge,
            variant,
            dt: l.dt,
            stride: l.stride,
        },
        samples,
        singularity_warnings: summary
            .singularity_warnings
            .iter()
            .map(|w| SingularityWarning {
                agent: w.agent - 1,
                t: w.t,
                sigma_min: w.sigma_min,
            })
            .collect(),
        final_state: None,
    };
    Ok((trace, summary))
}
