//! Static SVG plots of a trace: end-effector paths, edge errors, parameter
//! estimates, and joint positions/velocities.

use std::path::{Path, PathBuf};

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::error::IoError;
use crate::sim::SimulationTrace;

const SIZE: (u32, u32) = (900, 640);

fn palette(k: usize) -> RGBColor {
    const C: [RGBColor; 8] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
        RGBColor(227, 119, 194),
        RGBColor(127, 127, 127),
    ];
    C[k % C.len()]
}

fn draw_err(path: &Path) -> impl Fn(String) -> IoError + '_ {
    move |message| IoError::Format {
        path: path.to_path_buf(),
        message,
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// One line per series against time.
fn time_panel(
    area: &DrawingArea<SVGBackend<'_>, Shift>,
    title: &str,
    y_label: &str,
    t: &[f64],
    series: &[(String, Vec<f64>)],
) -> Result<(), String> {
    let (t0, t1) = (t.first().copied().unwrap_or(0.0), t.last().copied().unwrap_or(1.0));
    let t1 = if t1 > t0 { t1 } else { t0 + 1.0 };
    let (y0, y1) = range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(t0..t1, y0..y1)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc(y_label)
        .draw()
        .map_err(|e| e.to_string())?;
    for (k, (name, v)) in series.iter().enumerate() {
        let c = palette(k);
        chart
            .draw_series(LineSeries::new(t.iter().copied().zip(v.iter().copied()), c.stroke_width(2)))
            .map_err(|e| e.to_string())?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
    }
    if !series.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn trajectories(trace: &SimulationTrace, path: &Path) -> Result<(), String> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let n = trace.layout.num_agents;
    let s = &trace.samples;
    let coord = |i: usize, d: usize| s.iter().map(move |x| x.x[i][d]);
    if trace.layout.dim == 2 {
        let (x0, x1) = range((0..n).flat_map(|i| coord(i, 0)));
        let (y0, y1) = range((0..n).flat_map(|i| coord(i, 1)));
        let mut chart = ChartBuilder::on(&root)
            .caption("End-effector trajectories", ("sans-serif", 22))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc("x [m]")
            .y_desc("y [m]")
            .draw()
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            let c = palette(i);
            let pts: Vec<(f64, f64)> = coord(i, 0).zip(coord(i, 1)).collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), c.stroke_width(2)))
                .map_err(|e| e.to_string())?
                .label(format!("agent {}", i + 1))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
            if let (Some(&a), Some(&b)) = (pts.first(), pts.last()) {
                chart
                    .draw_series([Cross::new(a, 7, c.stroke_width(2))])
                    .map_err(|e| e.to_string())?;
                chart
                    .draw_series([Circle::new(b, 6, c.stroke_width(2))])
                    .map_err(|e| e.to_string())?;
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    } else {
        let (x0, x1) = range((0..n).flat_map(|i| coord(i, 0)));
        let (y0, y1) = range((0..n).flat_map(|i| coord(i, 1)));
        let (z0, z1) = range((0..n).flat_map(|i| coord(i, 2)));
        let mut chart = ChartBuilder::on(&root)
            .caption("End-effector trajectories", ("sans-serif", 22))
            .margin(20)
            .build_cartesian_3d(x0..x1, z0..z1, y0..y1)
            .map_err(|e| e.to_string())?;
        chart.with_projection(|mut p| {
            p.yaw = 0.6;
            p.pitch = 0.35;
            p.scale = 0.85;
            p.into_matrix()
        });
        chart
            .configure_axes()
            .draw()
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            let c = palette(i);
            let pts: Vec<(f64, f64, f64)> = s.iter().map(|x| (x.x[i][0], x.x[i][2], x.x[i][1])).collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), c.stroke_width(2)))
                .map_err(|e| e.to_string())?
                .label(format!("agent {}", i + 1))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
            if let (Some(&a), Some(&b)) = (pts.first(), pts.last()) {
                chart
                    .draw_series([Cross::new(a, 7, c.stroke_width(2))])
                    .map_err(|e| e.to_string())?;
                chart
                    .draw_series([Circle::new(b, 6, c.stroke_width(2))])
                    .map_err(|e| e.to_string())?;
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    root.present().map_err(|e| e.to_string())
}

fn errors(trace: &SimulationTrace, path: &Path) -> Result<(), String> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let t: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();
    let width = trace.layout.num_edges * trace.layout.per_edge;
    let series: Vec<(String, Vec<f64>)> = (0..width)
        .map(|k| {
            let name = if trace.layout.per_edge == 1 {
                format!("e{}", k + 1)
            } else {
                format!("e{}_{}", k / trace.layout.per_edge + 1, k % trace.layout.per_edge + 1)
            };
            (name, trace.samples.iter().map(|s| s.e[k]).collect())
        })
        .collect();
    let unit = if trace.layout.per_edge == 1 { "e [m^2]" } else { "e [m]" };
    time_panel(&root, "Edge errors", unit, &t, &series)?;
    root.present().map_err(|e| e.to_string())
}

fn estimates(trace: &SimulationTrace, path: &Path) -> Result<(), String> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let t: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();
    let l = &trace.layout;
    let mut series = Vec::new();
    let (title, unit) = if l.variant.uses_estimate() {
        for (i, &p) in l.num_params.iter().enumerate() {
            for k in 0..p {
                let v = trace
                    .samples
                    .iter()
                    .map(|s| s.a_hat[i].as_ref().map_or(f64::NAN, |a| a[k]))
                    .collect();
                series.push((format!("a_hat{}_{}", i + 1, k + 1), v));
            }
        }
        ("Kinematic parameter estimates", "a_hat [m]")
    } else if l.variant.uses_compensator() {
        for (i, &d) in l.dof.iter().enumerate() {
            for j in 0..d {
                let v = trace
                    .samples
                    .iter()
                    .map(|s| s.eta[i].as_ref().map_or(f64::NAN, |e| e[j]))
                    .collect();
                series.push((format!("eta{}_{}", i + 1, j + 1), v));
            }
        }
        ("Compensator states", "eta [N*m*s]")
    } else {
        ("No adaptive or compensator states", "-")
    };
    time_panel(&root, title, unit, &t, &series)?;
    root.present().map_err(|e| e.to_string())
}

fn joints(trace: &SimulationTrace, path: &Path) -> Result<(), String> {
    let root = SVGBackend::new(path, (SIZE.0, SIZE.1 * 3 / 2)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let (top, bottom) = root.split_vertically(SIZE.1 * 3 / 4);
    let t: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();
    let mut q = Vec::new();
    let mut qd = Vec::new();
    for (i, &d) in trace.layout.dof.iter().enumerate() {
        for j in 0..d {
            q.push((format!("q{}_{}", i + 1, j + 1), trace.samples.iter().map(|s| s.q[i][j]).collect()));
            qd.push((
                format!("qdot{}_{}", i + 1, j + 1),
                trace.samples.iter().map(|s| s.qdot[i][j]).collect(),
            ));
        }
    }
    time_panel(&top, "Joint positions", "q [rad]", &t, &q)?;
    time_panel(&bottom, "Joint velocities", "qdot [rad/s]", &t, &qd)?;
    root.present().map_err(|e| e.to_string())
}

/// Writes `trajectories.svg`, `errors.svg`, `estimates.svg` and `joints.svg`.
pub fn emit_plots(trace: &SimulationTrace, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    if trace.samples.is_empty() {
        return Err(IoError::Format {
            path: dir.to_path_buf(),
            message: "trace has no samples".into(),
        });
    }
    type Painter = fn(&SimulationTrace, &Path) -> Result<(), String>;
    let jobs: [(&str, Painter); 4] = [
        ("trajectories.svg", trajectories),
        ("errors.svg", errors),
        ("estimates.svg", estimates),
        ("joints.svg", joints),
    ];
    let mut out = Vec::new();
    for (name, paint) in jobs {
        let path = dir.join(name);
        paint(trace, &path).map_err(draw_err(&path))?;
        out.push(path);
    }
    Ok(out)
}
