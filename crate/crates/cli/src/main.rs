use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use eeformation::certificate::{certify, SampleGrid};
use eeformation::control::ControllerVariant;
use eeformation::error::SimError;
use eeformation::plot::emit_plots;
use eeformation::scenario::{parse_scenario, Scenario};
use eeformation::sim::diagnostics;
use eeformation::trace_io::{read_trace, write_trace, RunSummary};
use eeformation::verify::{run_all, VerifyConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_BLOW_UP: u8 = 3;
const EXIT_CERTIFICATE: u8 = 4;

#[derive(Parser)]
#[command(name = "eeform", version, about = "End-effector formation control of robot-arm networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write trace tables, a summary and plots.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Step size, s.
        #[arg(long)]
        dt: Option<f64>,
        /// Final time, s.
        #[arg(long = "T", alias = "t-final")]
        t_final: Option<f64>,
        /// Accepted for symmetry with `verify`; simulations have no random inputs.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the controller variant (exact, approx, adaptive, naive).
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Estimate the analysis constants on the sample grid and check the gain conditions.
    Certify {
        scenario: PathBuf,
        /// Text report path; a `.kv` key-value file is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property and invariant suites.
    Verify {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render plots from a trace directory.
    Plot {
        trace_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<Scenario, ExitCode> {
    parse_scenario(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_VALIDATION)
    })
}

fn simulate(
    path: &Path,
    out: &Path,
    dt: Option<f64>,
    t_final: Option<f64>,
    variant: Option<&str>,
    plots: bool,
) -> Result<(), ExitCode> {
    let mut scenario = load(path)?;
    if let Some(dt) = dt {
        if !(dt > 0.0 && dt.is_finite()) {
            eprintln!("error: --dt must be positive");
            return Err(ExitCode::from(EXIT_VALIDATION));
        }
        scenario.sim.dt = dt;
    }
    if let Some(t) = t_final {
        if !(t >= 0.0 && t.is_finite()) {
            eprintln!("error: --T must be non-negative");
            return Err(ExitCode::from(EXIT_VALIDATION));
        }
        scenario.sim.t_final = t;
    }
    let net = match variant {
        Some(v) => {
            let Some(v) = ControllerVariant::parse(v) else {
                eprintln!("error: unknown variant {v:?}");
                return Err(ExitCode::from(EXIT_VALIDATION));
            };
            scenario.network_with(v)
        }
        None => scenario.network(),
    }
    .map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_VALIDATION)
    })?;
    let start = Instant::now();
    let state = net
        .initial_state(&scenario.q0, Some(&scenario.qdot0))
        .map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        })?;
    let trace = net.run(state, &scenario.sim).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            SimError::BlowUp { .. } => ExitCode::from(EXIT_BLOW_UP),
            SimError::BadStep(_) => ExitCode::from(EXIT_VALIDATION),
            _ => ExitCode::from(EXIT_FAILURE),
        }
    })?;
    let d = diagnostics(&trace, &scenario.sim);
    let summary = RunSummary::new(scenario.name(), &trace, &d);
    write_trace(&trace, &summary, out).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_FAILURE)
    })?;
    if plots && !trace.samples.is_empty() {
        emit_plots(&trace, out).map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        })?;
    }
    println!(
        "{}: {} controller, T = {} s, dt = {} s ({:.1} s wall)",
        scenario.name(),
        net.controller().variant.name(),
        d.final_time,
        scenario.sim.dt,
        start.elapsed().as_secs_f64()
    );
    println!("  max |e_k(T)|        {:.3e}", d.final_max_error);
    println!("  |xi(T)|             {:.3e} rad/s", d.final_velocity_norm);
    println!("  centroid drift      {:.3e} m", d.centroid_drift);
    println!("  min sigma_min(J)    {:.3e}", d.min_sigma);
    println!(
        "  {} increases > tol  {} (max increase {:.3e})",
        d.lyapunov_name, d.monotonicity_violations, d.max_lyapunov_increase
    );
    if let Some(p) = d.pid_discrepancy {
        println!("  PID discrepancy     {p:.3e}");
    }
    println!("  singularity entries {}", d.singularity_warnings);
    println!("  converged           {}", d.converged);
    println!("  trace written to    {}", out.display());
    Ok(())
}

fn run_certify(path: &Path, out: &Path) -> Result<(), ExitCode> {
    let scenario = load(path)?;
    let cert_err = |e: &dyn std::fmt::Display| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CERTIFICATE)
    };
    let net = scenario.network().map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_VALIDATION)
    })?;
    let start = Instant::now();
    let spec = scenario.grid_spec().map_err(|e| cert_err(&e))?;
    let grid = SampleGrid::build(net.graph(), net.models(), &spec).map_err(|e| cert_err(&e))?;
    let report = certify(&net, &grid, &scenario.q_star()).map_err(|e| cert_err(&e))?;
    let text = report.to_text();
    print!("{text}");
    println!("({:.1} s)", start.elapsed().as_secs_f64());
    let write = |p: &Path, s: &str| {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, s)
    };
    write(out, &text).map_err(|e| {
        eprintln!("error: {}: {e}", out.display());
        ExitCode::from(EXIT_FAILURE)
    })?;
    let kv = out.with_extension("kv");
    write(&kv, &report.to_key_value_file()).map_err(|e| {
        eprintln!("error: {}: {e}", kv.display());
        ExitCode::from(EXIT_FAILURE)
    })?;
    if report.passed() {
        Ok(())
    } else {
        Err(ExitCode::from(EXIT_CERTIFICATE))
    }
}

fn run_verify(path: &Path, seed: Option<u64>) -> Result<(), ExitCode> {
    let scenario = load(path)?;
    let config = VerifyConfig::new(seed.unwrap_or(scenario.seed));
    let results = run_all(&scenario, &config);
    for r in &results {
        println!("{r}");
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(ExitCode::from(EXIT_FAILURE))
    }
}

fn run_plot(dir: &Path, out: &Path) -> Result<(), ExitCode> {
    let (trace, _) = read_trace(dir).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_FAILURE)
    })?;
    let files = emit_plots(&trace, out).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_FAILURE)
    })?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate {
            scenario,
            out,
            dt,
            t_final,
            seed: _,
            variant,
            no_plots,
        } => simulate(scenario, out, *dt, *t_final, variant.as_deref(), !no_plots),
        Command::Certify { scenario, out } => run_certify(scenario, out),
        Command::Verify { scenario, seed } => run_verify(scenario, *seed),
        Command::Plot { trace_dir, out } => run_plot(trace_dir, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
