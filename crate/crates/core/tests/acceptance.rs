//! Acceptance criteria. Runs as a plain binary (`harness = false`) so that
//! every criterion prints one PASS/FAIL line even when others fail; the
//! process exits nonzero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use eeformation::certificate::{certify, SampleGrid};
use eeformation::control::ControllerVariant;
use eeformation::scenario::{parse_scenario, Scenario};
use eeformation::sim::{diagnostics, Diagnostics, SimulationTrace};
use eeformation::verify::{run_all, VerifyConfig};

/// Drift below this is indistinguishable from accumulated rounding in the
/// centroid of positions of order 1-10 m.
const DRIFT_FLOOR: f64 = 1e-9;

struct Outcome {
    passed: bool,
    detail: String,
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"));
    parse_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(s: &Scenario, variant: ControllerVariant) -> Result<(SimulationTrace, Diagnostics), String> {
    let net = s.network_with(variant).map_err(|e| e.to_string())?;
    let state = net.initial_state(&s.q0, Some(&s.qdot0)).map_err(|e| e.to_string())?;
    let trace = net.run(state, &s.sim).map_err(|e| e.to_string())?;
    let d = diagnostics(&trace, &s.sim);
    Ok((trace, d))
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn convergence(s: &Scenario, variant: ControllerVariant, check_u1: bool) -> Outcome {
    let (trace, d) = match run(s, variant) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: format!("run failed: {e}"),
            }
        }
    };
    let sigma_end = trace.last().map(|x| x.sigma_min.clone()).unwrap_or_default();
    let sigma_ok = !sigma_end.is_empty() && sigma_end.iter().all(|&v| v > 1e-3);
    let mut passed = d.final_time >= s.sim.t_final - 1e-9
        && d.final_max_error <= 1e-2
        && d.final_velocity_norm <= 1e-2
        && sigma_ok;
    let mut detail = format!(
        "max|e(T)| = {:.3e} m^2 (<= 1e-2), |xi(T)| = {:.3e} rad/s (<= 1e-2), min sigma(T) = {:.3e} (> 1e-3)",
        d.final_max_error,
        d.final_velocity_norm,
        sigma_end.iter().copied().fold(f64::INFINITY, f64::min)
    );
    if check_u1 {
        passed &= d.lyapunov_name == "U1" && d.max_lyapunov_increase <= 1e-6;
        detail.push_str(&format!(
            ", max U1 step increase = {:.3e} (<= 1e-6)",
            d.max_lyapunov_increase
        ));
    }
    Outcome { passed, detail }
}

fn criterion_1() -> Outcome {
    convergence(&scenario("square2d"), ControllerVariant::Adaptive, false)
}

fn criterion_2() -> Outcome {
    convergence(&scenario("square2d"), ControllerVariant::Exact, true)
}

fn criterion_3() -> Outcome {
    let s = scenario("vertical2d");
    let (Ok((_, with_ki)), Ok((_, naive))) = (
        run(&s, ControllerVariant::Approx),
        run(&s, ControllerVariant::Naive),
    ) else {
        return Outcome {
            passed: false,
            detail: "run failed".into(),
        };
    };
    let ratio = naive.final_max_error / with_ki.final_max_error;
    Outcome {
        passed: s.controller.gains.ki == 1.0
            && with_ki.final_max_error <= 1e-2
            && naive.final_max_error >= 10.0 * with_ki.final_max_error,
        detail: format!(
            "compensated max|e(60)| = {:.3e} (<= 1e-2), naive max|e(60)| = {:.3e}, ratio {:.2e} (>= 10)",
            with_ki.final_max_error, naive.final_max_error, ratio
        ),
    }
}

fn criterion_4() -> Outcome {
    let s = scenario("square2d");
    let report = (|| {
        let net = s.network().map_err(|e| e.to_string())?;
        let spec = s.grid_spec().map_err(|e| e.to_string())?;
        let grid = SampleGrid::build(net.graph(), net.models(), &spec).map_err(|e| e.to_string())?;
        certify(&net, &grid, &s.q_star()).map_err(|e| e.to_string())
    })();
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: format!("certify failed: {e}"),
            }
        }
    };
    let checks = [
        ("c_min", report.c_min, 0.16, 0.10),
        ("c_max", report.c_max, 7.8, 0.10),
        ("lambda4", report.spectral.lambda4, 0.5, 0.25),
        ("k11", report.phi.k11, 450.0, 0.25),
        ("k12", report.phi.k12, 9000.0, 0.25),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, value, target, rel) in checks {
        let ok = within(value, target, rel);
        passed &= ok;
        parts.push(format!(
            "{name} = {value:.4e} ({} vs {target} +/- {:.0}%)",
            if ok { "ok" } else { "off" },
            rel * 100.0
        ));
    }
    let positivity = report
        .conditions
        .iter()
        .map(|c| format!("{}: {:+.3e}", c.label, c.margin))
        .collect::<Vec<_>>()
        .join("; ");
    parts.push(format!("raw margins [{positivity}]"));
    Outcome {
        passed,
        detail: parts.join(", "),
    }
}

fn criterion_5() -> Outcome {
    let s = scenario("square2d");
    let results = run_all(&s, &VerifyConfig::new(s.seed));
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    for r in &results {
        println!("      {r}");
    }
    Outcome {
        passed: failed.is_empty() && !results.is_empty(),
        detail: if failed.is_empty() {
            format!("{} checks", results.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

fn criterion_6() -> Outcome {
    let s = scenario("square2d");
    match run(&s, ControllerVariant::Adaptive) {
        Ok((trace, _)) => {
            let drift = trace.centroid_drift();
            Outcome {
                passed: drift > DRIFT_FLOOR,
                detail: format!("|p(30) - p(0)| = {drift:.3e} m (> {DRIFT_FLOOR:e}, rounding floor)"),
            }
        }
        Err(e) => Outcome {
            passed: false,
            detail: format!("run failed: {e}"),
        },
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("1 square scenario, adaptive controller", criterion_1),
        ("2 square scenario, exact parameters", criterion_2),
        ("3 integral compensator vs naive law", criterion_3),
        ("4 certificate constants", criterion_4),
        ("5 property suites", criterion_5),
        ("6 centroid drift", criterion_6),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let o = f();
        if !o.passed {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {} ({:.1} s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 6 criteria passed", 6 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
