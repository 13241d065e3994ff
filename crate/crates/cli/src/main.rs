//! `it2mof`: design, simulate, sweep, verify and report.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 infeasible design,
//! 3 numerical failure, 4 verification failed.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use it2mof_core::config::Case;
use it2mof_core::lmi::verify::verify_design;
use it2mof_core::sim::{self, SimSummary};
use it2mof_core::study::{self, DesignFile};
use it2mof_core::synth::{backend_by_name, SolverSettings};
use it2mof_core::{fixtures, parse, DesignStatus, Method, SdpBackend, ToolkitConfig};
use serde::Serialize;

const EXIT_INVALID: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_UNVERIFIED: u8 = 4;

#[derive(Parser)]
#[command(name = "it2mof", version, about = "Memory output-feedback co-design for IT2 T-S fuzzy systems")]
struct Cli {
    /// SDP backend: auto, clarabel or barrier.
    #[arg(long, global = true, env = "IT2MOF_BACKEND", default_value = "auto")]
    backend: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a controller and write a design file.
    Design(DesignArgs),
    /// Simulate the closed loop of a design file.
    Simulate(SimulateArgs),
    /// Design every case over a range of memory depths.
    Sweep(SweepArgs),
    /// Re-check a design file's certificates at sampled premise points.
    Verify(VerifyArgs),
    /// Validate CSV/JSON artifacts and write a markdown summary.
    Report(report::ReportArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Configuration file, or `example1` for the bundled example.
    #[arg(long, default_value = "example1")]
    config: String,
}

impl ConfigArg {
    fn load(&self) -> Result<ToolkitConfig> {
        if self.config == "example1" {
            return Ok(fixtures::example1_config());
        }
        Ok(ToolkitConfig::load(Path::new(&self.config))?)
    }
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Comparison case 1-4; sets weights, E, F and method.
    #[arg(long)]
    case: Option<u8>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    /// Comma-separated theta values to search.
    #[arg(long, value_delimiter = ',')]
    theta_grid: Option<Vec<f64>>,
    /// Partition cells per premise (sets both p and q).
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long, default_value = "design.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    /// First fading seed; defaults to the configured root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Ensemble size; defaults to `sim.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
    /// Disturbance expression in `t`, overriding the configured one.
    #[arg(long)]
    disturbance: Option<String>,
    /// CSV trace of the first seed.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON summary; printed to stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Memory depths: `1..4` or `1,2,4`.
    #[arg(long, default_value = "1..4")]
    kappa: String,
    /// Comma-separated case numbers.
    #[arg(long, default_value = "1,2,3,4")]
    cases: String,
    /// Seeds per cell for the triggering rate; defaults to `sim.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
    /// Output directory for `gamma.csv`, `tr.csv` and `cells.json`.
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s.to_ascii_lowercase().as_str() {
        "mfi" => Ok(Method::Mfi),
        "mfd" => Ok(Method::Mfd),
        _ => Err(format!("unknown method `{s}` (expected mfi or mfd)")),
    }
}

fn parse_kappas(s: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        (a..=b).collect()
    } else {
        s.split(',').map(|k| k.trim().parse()).collect::<Result<_, _>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        bail!("trigger.kappa: memory depths must be a non-empty list of values >= 1");
    }
    Ok(ks)
}

fn backend(name: &str) -> Result<Box<dyn SdpBackend>> {
    Ok(backend_by_name(name, SolverSettings::default())?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn status_code(status: DesignStatus) -> u8 {
    match status {
        DesignStatus::Optimal => 0,
        DesignStatus::Infeasible => EXIT_INFEASIBLE,
        DesignStatus::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn cmd_design(args: &DesignArgs, backend_name: &str) -> Result<u8> {
    let mut cfg = args.config.load()?;
    if let Some(n) = args.case {
        let case = Case::from_number(n).with_context(|| format!("--case: {n} is not in 1..4"))?;
        let kappa = case.effective_kappa(args.kappa.unwrap_or(cfg.kappa()));
        cfg = cfg.with_case(case, kappa)?;
    } else if let Some(k) = args.kappa {
        cfg = cfg.with_kappa(k)?;
    }
    if let Some(m) = args.method {
        cfg.design.method = m;
    }
    if let Some(t) = args.theta {
        cfg.design.theta = t;
    }
    if let Some(g) = &args.theta_grid {
        cfg.design.theta_grid = Some(g.clone());
    }
    if let Some(c) = args.cells {
        cfg.design.partition.p = c;
        cfg.design.partition.q = c;
    }
    cfg.validate()?;
    let file = study::design(&cfg, backend(backend_name)?.as_ref())?;
    write_file(&args.out, &file.to_json())?;
    let r = &file.result;
    println!(
        "status {:?}  gamma {}  kappa {}  method {:?}  backend {}  solve {:.2}s",
        r.status,
        r.gamma.map_or("NA".into(), |g| format!("{g:.6}")),
        r.kappa,
        r.method,
        r.backend,
        r.timings.solve_s
    );
    for m in &r.messages {
        log::info!("{m}");
    }
    Ok(status_code(r.status))
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    seeds: Vec<u64>,
    horizon: usize,
    triggers: Vec<usize>,
    #[serde(flatten)]
    summary: &'a SimSummary,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let mut design = DesignFile::load(&args.design)?;
    if let Some(h) = args.horizon {
        design.config.sim.horizon = h;
    }
    if let Some(d) = &args.disturbance {
        design.config.sim.disturbance = parse(d).context("--disturbance")?;
    }
    design.config.validate()?;
    let first = args.seed.unwrap_or(design.config.seed);
    let seeds = args.seeds.unwrap_or(design.config.sim.seeds).max(1);
    let (traces, summary) = study::evaluate(&design, first, seeds)?;
    if let Some(path) = &args.trace {
        let mut buf = Vec::new();
        sim::write_trace_csv(&traces[0], &mut buf)?;
        write_file(path, std::str::from_utf8(&buf)?)?;
    }
    let out = SimulateOutput {
        seeds: traces.iter().map(|t| t.seed).collect(),
        horizon: design.config.sim.horizon,
        triggers: traces.iter().map(|t| t.triggers()).collect(),
        summary: &summary,
    };
    let json = serde_json::to_string_pretty(&out)?;
    match &args.summary {
        Some(p) => write_file(p, &json)?,
        None => println!("{json}"),
    }
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs, backend_name: &str) -> Result<u8> {
    let cases: Vec<Case> = args
        .cases
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .ok()
                .and_then(Case::from_number)
                .with_context(|| format!("--cases: `{s}` is not in 1..4"))
        })
        .collect::<Result<_>>()?;
    if cases.is_empty() {
        bail!("--cases: the case list is empty");
    }
    let kappas = parse_kappas(&args.kappa)?;
    let mut cfg = args.config.load()?;
    if let Some(c) = args.cells {
        cfg.design.partition.p = c;
        cfg.design.partition.q = c;
    }
    let seeds = args.seeds.unwrap_or(cfg.sim.seeds);
    let cells = study::sweep(&cfg, &cases, &kappas, backend(backend_name)?.as_ref(), seeds);
    write_file(&args.out.join("gamma.csv"), &study::sweep_table(&cells, |c| c.gamma))?;
    write_file(&args.out.join("tr.csv"), &study::sweep_table(&cells, |c| c.tr))?;
    write_file(&args.out.join("cells.json"), &serde_json::to_string_pretty(&cells)?)?;
    let mut stdout = std::io::stdout().lock();
    for c in &cells {
        writeln!(
            stdout,
            "case {} kappa {}: gamma {} tr {} ({:.1}s){}",
            c.case,
            c.kappa,
            c.gamma.map_or("NA".into(), |g| format!("{g:.4}")),
            c.tr.map_or("NA".into(), |t| format!("{t:.3}")),
            c.seconds,
            if c.note.is_empty() { String::new() } else { format!(" {}", c.note) }
        )?;
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let design = DesignFile::load(&args.design)?;
    let r = &design.result;
    let Some(cert) = &r.certificates else {
        eprintln!("design has no certificates (status {:?})", r.status);
        return Ok(EXIT_UNVERIFIED);
    };
    let plant = design.config.plant()?;
    let report = verify_design(
        cert,
        &r.gains,
        &plant,
        &r.controller_memberships,
        &r.givens,
        args.samples,
        args.seed.unwrap_or(design.config.seed),
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.passed { 0 } else { EXIT_UNVERIFIED })
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Design(a) => cmd_design(a, &cli.backend),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a, &cli.backend),
        Command::Verify(a) => cmd_verify(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
