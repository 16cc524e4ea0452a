//! `gridpass` — command-line harness for the stability toolkit.
//!
//! Subcommands: `analyze`, `sweep`, `boundary`, `simulate`, `assess`,
//! `powerflow`. Exit codes: 0 success, 2 bad input (parse/validation),
//! 3 numerical failure (divergence, singularity, integration abort).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use gridpass::case::{load_case, CaseFormat, PowerSystemCase};
use gridpass::criteria::{assemble_sdev, run_two_level_assessment, AssessmentMode};
use gridpass::network::{build_admittance, solve_power_flow};
use gridpass::pipeline::{
    analyze_case, boundary_sweep, evaluate_sweep_point, prepare_operating_point, Analysis,
    BoundarySpec, SweepAxis, SweepSpec, VerdictSet,
};
use gridpass::sim::{
    default_surrogate_weights, format_significant, lyapunov_surrogate_trace, simulate_on,
    trajectory_csv, Disturbance, Scenario,
};

#[derive(Parser)]
#[command(
    name = "gridpass",
    version,
    about = "Passivity-based small-signal stability certification for power systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: power flow, reduction, passivity matrices, both
    /// criteria, and the eigenvalue oracle.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        /// Emit the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// 2-D stability-region sweep over two device parameters.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        /// First axis, `path:start:stop:steps` (varies slowest).
        #[arg(long)]
        axis1: String,
        /// Second axis, `path:start:stop:steps` (varies fastest).
        #[arg(long)]
        axis2: String,
        /// Comma-separated subset of {eigen,semi,fully}; default all.
        #[arg(long)]
        verdicts: Option<String>,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate grid points sequentially instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
    /// Load-scaling boundary: minimal uniform passivity level certifying the
    /// matrix criterion vs. the minimal eigen-stable level, per load scale.
    Boundary {
        #[command(flatten)]
        input: InputArgs,
        /// Smallest load scale (> 0).
        #[arg(long, default_value_t = 0.8)]
        s_min: f64,
        /// Largest load scale.
        #[arg(long, default_value_t = 1.2)]
        s_max: f64,
        /// Number of evenly spaced scales.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nonlinear time-domain simulation around the case equilibrium.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        /// Simulation horizon in seconds.
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        /// Upper bound on the adaptive integrator step, seconds.
        #[arg(long, default_value_t = 0.01)]
        dt_max: f64,
        /// State perturbation `bus:channel:magnitude` at t = 0.
        #[arg(long, conflicts_with = "fault")]
        perturb: Option<String>,
        /// Ground fault `bus:r_fault:t_on[:t_off]` (default duration 0.1 s).
        #[arg(long)]
        fault: Option<String>,
        /// Output trajectory CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-level assessment protocol; emits the report (with message log) as
    /// JSON.
    Assess {
        #[command(flatten)]
        input: InputArgs,
        /// Protocol variant to run.
        #[arg(long, value_enum, default_value_t = ModeArg::Semi)]
        mode: ModeArg,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the power flow on the full network and print the bus solution.
    Powerflow {
        #[command(flatten)]
        input: InputArgs,
        /// Emit the solution as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Case file.
    #[arg(long)]
    case: PathBuf,
    /// Case file format.
    #[arg(long, value_enum, default_value_t = FormatArg::Native)]
    format: FormatArg,
    /// Device-assignment JSON (required with --format matpower).
    #[arg(long)]
    devices: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Native,
    Matpower,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Semi,
    Fully,
}

impl InputArgs {
    fn load(&self) -> anyhow::Result<PowerSystemCase> {
        let format = match self.format {
            FormatArg::Native => {
                if self.devices.is_some() {
                    bail!("--devices only applies to --format matpower");
                }
                CaseFormat::Native
            }
            FormatArg::Matpower => CaseFormat::Matpower {
                device_assignment: self
                    .devices
                    .clone()
                    .ok_or_else(|| anyhow!("--format matpower requires --devices"))?,
            },
        };
        gp(load_case(&self.case, &format))
    }
}

/// Pipeline stage a core error belongs to, for error reporting.
fn stage_of(e: &gridpass::Error) -> &'static str {
    use gridpass::Error::*;
    match e {
        Parse { .. } => "load",
        Validation(_) => "validate",
        PowerFlowDiverged { .. } => "power-flow",
        Singular(_) | Eigen(_) => "linear-algebra",
        Dimension(_) => "assembly",
        Domain(_) => "device-model",
        Integration { .. } => "simulate",
    }
}

/// Lift a core result into `anyhow`, tagging it with its pipeline stage.
fn gp<T>(r: gridpass::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| {
        let stage = stage_of(&e);
        anyhow::Error::new(e).context(format!("stage {stage}"))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// 2 for bad input (parse, validation, argument, I/O), 3 for numerical
/// failures.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<gridpass::Error>() {
            return if core.is_input_error() { 2 } else { 3 };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Analyze { input, json } => cmd_analyze(&input, json),
        Command::Sweep { input, axis1, axis2, verdicts, out, serial } => {
            cmd_sweep(&input, &axis1, &axis2, verdicts.as_deref(), out.as_deref(), serial)
        }
        Command::Boundary { input, s_min, s_max, samples, out } => {
            cmd_boundary(&input, s_min, s_max, samples, out.as_deref())
        }
        Command::Simulate { input, t_end, dt_max, perturb, fault, out } => cmd_simulate(
            &input,
            t_end,
            dt_max,
            perturb.as_deref(),
            fault.as_deref(),
            out.as_deref(),
        ),
        Command::Assess { input, mode, out } => cmd_assess(&input, mode, out.as_deref()),
        Command::Powerflow { input, json } => cmd_powerflow(&input, json),
    }
}

fn write_output(out: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display())),
        None => emit_stdout(content),
    }
}

/// Write to stdout, treating a closed pipe (e.g. `| head`) as a clean exit.
fn emit_stdout(content: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match std::io::stdout().write_all(content.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        r => r.context("writing to stdout"),
    }
}

// ---------------------------------------------------------------------------
// analyze

fn verdict_word(certified: bool, gated: bool) -> &'static str {
    if certified && gated {
        "CERTIFIED"
    } else {
        "NOT CERTIFIED"
    }
}

fn cmd_analyze(input: &InputArgs, json: bool) -> anyhow::Result<()> {
    let case = input.load()?;
    let analysis = gp(analyze_case(&case))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&analysis_json(&case, &analysis))?);
    } else {
        print!("{}", analysis_text(&case, &analysis));
    }
    Ok(())
}

fn analysis_text(case: &PowerSystemCase, a: &Analysis) -> String {
    let op = &a.operating_point;
    let all_valid = op.odpms.iter().all(|o| o.valid);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "case: {} buses, {} devices ({} buses after reduction)",
        case.buses.len(),
        case.devices.len(),
        op.reduced.buses.len()
    );
    let _ = writeln!(
        s,
        "power flow: converged in {} iterations, residual {:.3e}",
        op.solution.iterations, op.solution.residual
    );
    let _ = writeln!(s, "device passivity indices:");
    for report in &a.device_reports {
        let status = if report.odpm.valid {
            "conditions hold".to_string()
        } else {
            format!("conditions fail: {}", report.odpm.violated_conditions.join("; "))
        };
        let _ = writeln!(
            s,
            "  bus {:>3} {:<2}  sigma = {:>10.6}  ({status})",
            report.bus_id, report.kind, report.scalar_index
        );
    }
    let _ = writeln!(s, "network passivity index sigma(S_net) = {:.6}", op.idpm.sigma_net);
    let _ = writeln!(
        s,
        "semi-distributed criterion:  {:<14} margin = {:.6}",
        verdict_word(a.semi.certified, all_valid),
        a.semi.margin
    );
    let _ = writeln!(
        s,
        "fully-distributed criterion: {:<14} margin = {:.6}",
        verdict_word(a.fully.certified, all_valid),
        a.fully.margin
    );
    let oracle_word = if a.eigen.unstable {
        "UNSTABLE"
    } else if a.eigen.certified {
        "STABLE"
    } else {
        "MARGINAL"
    };
    let _ = writeln!(
        s,
        "eigenvalue oracle:           {:<14} max Re(lambda) = {:.6}",
        oracle_word, a.spectrum.max_real
    );
    if !all_valid {
        let _ = writeln!(
            s,
            "note: passivity-matrix validity conditions fail at some buses; the \
             criteria certificates are withheld there"
        );
    }
    s
}

fn analysis_json(case: &PowerSystemCase, a: &Analysis) -> serde_json::Value {
    let op = &a.operating_point;
    let all_valid = op.odpms.iter().all(|o| o.valid);
    serde_json::json!({
        "case": {
            "buses": case.buses.len(),
            "devices": case.devices.len(),
            "reduced_buses": op.reduced.buses.len(),
        },
        "power_flow": {
            "iterations": op.solution.iterations,
            "residual": op.solution.residual,
        },
        "devices": a.device_reports,
        "sigma_net": op.idpm.sigma_net,
        "lossless": op.idpm.lossless,
        "semi": {
            "certified": a.semi.certified && all_valid,
            "margin": a.semi.margin,
        },
        "fully": {
            "certified": a.fully.certified && all_valid,
            "margin": a.fully.margin,
            "locals": a.fully.details,
        },
        "eigen": {
            "stable": a.eigen.certified,
            "unstable": a.eigen.unstable,
            "max_real": a.spectrum.max_real,
        },
    })
}

// ---------------------------------------------------------------------------
// sweep

fn parse_axis(text: &str) -> anyhow::Result<SweepAxis> {
    let parts: Vec<&str> = text.rsplitn(4, ':').collect();
    if parts.len() != 4 {
        bail!("axis must be path:start:stop:steps, got {text:?}");
    }
    let (steps, stop, start, path) = (parts[0], parts[1], parts[2], parts[3]);
    Ok(SweepAxis {
        path: path.to_string(),
        start: start.parse().with_context(|| format!("axis start {start:?}"))?,
        stop: stop.parse().with_context(|| format!("axis stop {stop:?}"))?,
        steps: steps.parse().with_context(|| format!("axis steps {steps:?}"))?,
    })
}

fn parse_verdicts(text: Option<&str>) -> anyhow::Result<VerdictSet> {
    let Some(text) = text else {
        return Ok(VerdictSet::default());
    };
    let mut set = VerdictSet { eigen: false, semi: false, fully: false };
    for word in text.split(',') {
        match word.trim() {
            "eigen" => set.eigen = true,
            "semi" => set.semi = true,
            "fully" => set.fully = true,
            other => bail!("unknown verdict {other:?} (expected eigen, semi, fully)"),
        }
    }
    if !(set.eigen || set.semi || set.fully) {
        bail!("verdict set is empty");
    }
    Ok(set)
}

fn code_cell(code: Option<i8>) -> String {
    code.map(|c| c.to_string()).unwrap_or_default()
}

fn cmd_sweep(
    input: &InputArgs,
    axis1: &str,
    axis2: &str,
    verdicts: Option<&str>,
    out: Option<&Path>,
    serial: bool,
) -> anyhow::Result<()> {
    let case = input.load()?;
    let spec = SweepSpec {
        axis1: parse_axis(axis1)?,
        axis2: parse_axis(axis2)?,
        verdicts: parse_verdicts(verdicts)?,
    };
    gp(spec.validate(&case))?;

    let grid = spec.grid();
    let points: Vec<_> = if serial {
        grid.iter().map(|&(p1, p2)| evaluate_sweep_point(&case, &spec, p1, p2)).collect()
    } else {
        grid.par_iter().map(|&(p1, p2)| evaluate_sweep_point(&case, &spec, p1, p2)).collect()
    };

    let mut csv = String::from("p1,p2,eigen,semi,fully\n");
    for pt in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            format_significant(pt.p1, 12),
            format_significant(pt.p2, 12),
            code_cell(pt.eigen),
            code_cell(pt.semi),
            code_cell(pt.fully)
        );
    }
    write_output(out, &csv)?;
    if out.is_some() {
        eprintln!("sweep: {} points ({}x{})", points.len(), spec.axis1.steps, spec.axis2.steps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// boundary

fn cmd_boundary(
    input: &InputArgs,
    s_min: f64,
    s_max: f64,
    samples: usize,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let case = input.load()?;
    let spec = BoundarySpec { s_min, s_max, samples };
    let rows = gp(boundary_sweep(&case, &spec))?;

    let mut csv = String::from("s,level_semi,level_eigen,error\n");
    for row in &rows {
        let level = |v: Option<f64>| v.map(|x| format_significant(x, 12)).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            format_significant(row.scale, 12),
            level(row.level_semi),
            level(row.level_eigen),
            row.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    write_output(out, &csv)?;
    if out.is_some() {
        eprintln!("boundary: {} load scales in [{s_min}, {s_max}]", rows.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn parse_perturb(text: &str) -> anyhow::Result<Disturbance> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--perturb must be bus:channel:magnitude, got {text:?}");
    }
    Ok(Disturbance::StatePerturbation {
        bus: parts[0].parse().with_context(|| format!("perturb bus {:?}", parts[0]))?,
        channel: parts[1].parse().with_context(|| format!("perturb channel {:?}", parts[1]))?,
        magnitude: parts[2].parse().with_context(|| format!("perturb magnitude {:?}", parts[2]))?,
    })
}

fn parse_fault(text: &str) -> anyhow::Result<Disturbance> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 && parts.len() != 4 {
        bail!("--fault must be bus:r_fault:t_on[:t_off], got {text:?}");
    }
    Ok(Disturbance::GroundFault {
        bus: parts[0].parse().with_context(|| format!("fault bus {:?}", parts[0]))?,
        r_fault: parts[1].parse().with_context(|| format!("fault resistance {:?}", parts[1]))?,
        t_on: parts[2].parse().with_context(|| format!("fault t_on {:?}", parts[2]))?,
        t_off: parts
            .get(3)
            .map(|t| t.parse().with_context(|| format!("fault t_off {t:?}")))
            .transpose()?,
    })
}

fn cmd_simulate(
    input: &InputArgs,
    t_end: f64,
    dt_max: f64,
    perturb: Option<&str>,
    fault: Option<&str>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let case = input.load()?;
    let disturbance = match (perturb, fault) {
        (Some(p), None) => Some(parse_perturb(p)?),
        (None, Some(f)) => Some(parse_fault(f)?),
        (None, None) => None,
        (Some(_), Some(_)) => bail!("--perturb and --fault are mutually exclusive"),
    };
    let scenario = Scenario { t_end, dt_max, disturbance };

    let op = gp(prepare_operating_point(&case))?;
    let equilibrium = gp(op.equilibrium())?;
    let traj = gp(simulate_on(&op.reduced, &op.admittance, &equilibrium, &scenario))?;

    let weights = default_surrogate_weights(&op.reduced);
    let s_dev = assemble_sdev(&op.odpms);
    let trace = gp(lyapunov_surrogate_trace(&traj, &s_dev, &op.idpm.matrix, &weights, 1e-6))?;

    let csv = gp(trajectory_csv(&traj, &trace.values))?;
    write_output(out, &csv)?;

    let peak = traj.max_deviation();
    let last = traj.states.last().expect("trajectory has samples");
    let final_dev = (last - &traj.x_star).amax();
    let settled = final_dev <= f64::max(1e-9, 0.01 * peak);
    eprintln!(
        "simulate: {} samples over {t_end} s; max deviation = {peak:.6e}; settled = {settled}",
        traj.times.len()
    );
    eprintln!(
        "energy surrogate: non-increasing = {} (max forward difference {:.3e})",
        trace.non_increasing, trace.max_forward_difference
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// assess

fn cmd_assess(input: &InputArgs, mode: ModeArg, out: Option<&Path>) -> anyhow::Result<()> {
    let case = input.load()?;
    let mode = match mode {
        ModeArg::Semi => AssessmentMode::Semi,
        ModeArg::Fully => AssessmentMode::Fully,
    };
    let report = gp(run_two_level_assessment(&case, mode))?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_output(out, &text)
}

// ---------------------------------------------------------------------------
// powerflow

fn cmd_powerflow(input: &InputArgs, json: bool) -> anyhow::Result<()> {
    let case = input.load()?;
    let y = gp(build_admittance(&case))?;
    let sol = gp(solve_power_flow(&case, &y))?;

    if json {
        let buses: Vec<serde_json::Value> = case
            .buses
            .iter()
            .map(|b| {
                let i = b.id - 1;
                serde_json::json!({
                    "bus": b.id,
                    "theta": sol.theta[i],
                    "v": sol.v[i],
                    "p": sol.p[i],
                    "q": sol.q[i],
                })
            })
            .collect();
        let doc = serde_json::json!({
            "iterations": sol.iterations,
            "residual": sol.residual,
            "buses": buses,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!(
            "power flow: converged in {} iterations, residual {:.3e}",
            sol.iterations, sol.residual
        );
        println!("{:>5} {:>12} {:>10} {:>12} {:>12}", "bus", "theta[rad]", "V[pu]", "P[pu]", "Q[pu]");
        for b in &case.buses {
            let i = b.id - 1;
            println!(
                "{:>5} {:>12.6} {:>10.6} {:>12.6} {:>12.6}",
                b.id, sol.theta[i], sol.v[i], sol.p[i], sol.q[i]
            );
        }
    }
    Ok(())
}
