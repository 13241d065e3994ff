//! `report`: schema checks over emitted artifacts and a markdown digest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use clap::Args;
use it2mof_core::sim::SimSummary;
use it2mof_core::study::{DesignFile, SweepCell};
use serde_json::Value;

#[derive(Args)]
pub struct ReportArgs {
    /// Trace or sweep CSVs, design or summary JSON files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report.md")]
    out: PathBuf,
    /// External figure renderer, invoked as `<cmd> <figure-dir> <inputs..>`.
    #[arg(long)]
    plotter: Option<String>,
    #[arg(long, default_value = "figures")]
    figures: PathBuf,
}

#[derive(Debug, PartialEq)]
pub enum Artifact {
    Trace { rows: usize, triggers: usize, max_abs_x: f64 },
    Table { cases: usize, kappas: Vec<String>, missing: usize },
    Design(Box<DesignFile>),
    Summary(SimSummary),
    Cells(Vec<SweepCell>),
}

const TRACE_GROUPS: [&str; 7] = ["x", "y", "y_trig", "u", "uf", "z", "d"];

fn num(field: &str, row: usize, col: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .with_context(|| format!("row {row}, column `{col}`: `{field}` is not a number"))
}

fn check_trace(header: &[String], rows: &[csv::StringRecord]) -> Result<Artifact> {
    let last = header.len().saturating_sub(3);
    if header.len() < 4 || header[last..] != ["varpi", "triggered", "xi"] {
        bail!("trace must end with varpi,triggered,xi");
    }
    // groups appear in order, each `prefix_1..prefix_n` with n >= 1
    let mut col = 1;
    for g in TRACE_GROUPS {
        let mut i = 1;
        while col < last && header[col] == format!("{g}_{i}") {
            col += 1;
            i += 1;
        }
        if i == 1 {
            bail!("missing column `{g}_1`");
        }
    }
    if col != last {
        bail!("unexpected column `{}`", header[col]);
    }
    let xs: Vec<usize> = (0..header.len()).filter(|c| header[*c].starts_with("x_")).collect();
    let mut triggers = 0;
    let mut max_abs_x: f64 = 0.0;
    for (r, rec) in rows.iter().enumerate() {
        if rec.len() != header.len() {
            bail!("row {r}: {} fields, header has {}", rec.len(), header.len());
        }
        if rec[0].parse::<usize>().ok() != Some(r) {
            bail!("row {r}: t = `{}`, expected {r}", &rec[0]);
        }
        for c in 1..=last {
            num(&rec[c], r, &header[c])?;
        }
        for c in &xs {
            max_abs_x = max_abs_x.max(num(&rec[*c], r, &header[*c])?.abs());
        }
        match &rec[last + 1] {
            "1" => {
                triggers += 1;
                num(&rec[last + 2], r, "xi")?;
            }
            "0" if rec[last + 2].is_empty() => {}
            "0" => bail!("row {r}: xi set without a release"),
            other => bail!("row {r}: triggered = `{other}`, expected 0 or 1"),
        }
    }
    Ok(Artifact::Trace {
        rows: rows.len(),
        triggers,
        max_abs_x,
    })
}

fn check_table(header: &[String], rows: &[csv::StringRecord]) -> Result<Artifact> {
    let kappas: Vec<String> = header[1..].to_vec();
    if kappas.is_empty() || kappas.iter().any(|k| k.strip_prefix("kappa_").and_then(|v| v.parse::<usize>().ok()).is_none()) {
        bail!("table columns must be kappa_<n>");
    }
    let mut missing = 0;
    for (r, rec) in rows.iter().enumerate() {
        if rec.len() != header.len() {
            bail!("row {r}: {} fields, header has {}", rec.len(), header.len());
        }
        rec[0].parse::<u8>().with_context(|| format!("row {r}: bad case `{}`", &rec[0]))?;
        for c in 1..rec.len() {
            if &rec[c] == "NA" {
                missing += 1;
            } else {
                num(&rec[c], r, &header[c])?;
            }
        }
    }
    Ok(Artifact::Table {
        cases: rows.len(),
        kappas,
        missing,
    })
}

pub fn classify(path: &Path) -> Result<Artifact> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let ctx = || format!("{}", path.display());
    match ext {
        "csv" => {
            let mut rd = csv::Reader::from_reader(text.as_bytes());
            let header: Vec<String> = rd.headers().with_context(ctx)?.iter().map(String::from).collect();
            let rows: Vec<csv::StringRecord> = rd.records().collect::<Result<_, _>>().with_context(ctx)?;
            match header.first().map(String::as_str) {
                Some("t") => check_trace(&header, &rows),
                Some("case") => check_table(&header, &rows),
                _ => bail!("unrecognized CSV header"),
            }
            .with_context(ctx)
        }
        "json" => {
            let v: Value = serde_json::from_str(&text).with_context(ctx)?;
            if v.get("result").is_some() {
                let d: DesignFile = serde_json::from_value(v).with_context(ctx)?;
                d.config.validate().with_context(ctx)?;
                Ok(Artifact::Design(Box::new(d)))
            } else if v.is_array() {
                Ok(Artifact::Cells(serde_json::from_value(v).with_context(ctx)?))
            } else {
                Ok(Artifact::Summary(serde_json::from_value(v).with_context(ctx)?))
            }
        }
        _ => bail!("{}: expected a .csv or .json file", path.display()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v:.4}"))
}

pub fn markdown(items: &[(PathBuf, Artifact)]) -> String {
    let mut s = String::from("# it2mof report\n");
    for (path, a) in items {
        let _ = writeln!(s, "\n## {}\n", path.display());
        match a {
            Artifact::Trace {
                rows,
                triggers,
                max_abs_x,
            } => {
                let _ = writeln!(s, "Trace: {rows} samples, {triggers} releases (TR {:.3}), max |x_i| {max_abs_x:.4e}.", *triggers as f64 / (*rows).max(1) as f64);
            }
            Artifact::Table { cases, kappas, missing } => {
                let _ = writeln!(s, "Sweep table: {cases} cases x {} depths, {missing} NA cells.", kappas.len());
            }
            Artifact::Design(d) => {
                let r = &d.result;
                let _ = writeln!(s, "| field | value |\n|---|---|");
                let _ = writeln!(s, "| status | {:?} |", r.status);
                let _ = writeln!(s, "| method | {:?} |", r.method);
                let _ = writeln!(s, "| kappa | {} |", r.kappa);
                let _ = writeln!(s, "| gamma | {} |", fmt_opt(r.gamma));
                let _ = writeln!(s, "| theta | {} |", r.givens.theta);
                let _ = writeln!(s, "| backend | {} ({}) |", r.backend, r.solver_detail);
                if let Some(v) = &r.verification {
                    let _ = writeln!(s, "| verified | {} |", v.passed);
                }
            }
            Artifact::Summary(m) => {
                let _ = writeln!(s, "TR {:.4}, empirical H-infinity ratio {}, max state norm {:.4e}.", m.tr, fmt_opt(m.empirical_hinf), m.max_state_norm);
                if let Some(f) = &m.decay_fit {
                    let _ = writeln!(s, "Decay: fitted factor {:.4} vs envelope {:.4} over {} runs (within: {}).", f.fitted_factor, f.envelope_factor, f.runs, f.within_envelope);
                }
            }
            Artifact::Cells(cells) => {
                let _ = writeln!(s, "| case | kappa | gamma | TR | seconds |\n|---|---|---|---|---|");
                for c in cells {
                    let _ = writeln!(s, "| {} | {} | {} | {} | {:.1} |", c.case, c.kappa, fmt_opt(c.gamma), fmt_opt(c.tr), c.seconds);
                }
            }
        }
    }
    s
}

pub fn run(args: &ReportArgs) -> Result<u8> {
    let items: Vec<(PathBuf, Artifact)> = args
        .inputs
        .iter()
        .map(|p| classify(p).map(|a| (p.clone(), a)))
        .collect::<Result<_>>()?;
    fs::write(&args.out, markdown(&items)).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(cmd) = &args.plotter {
        fs::create_dir_all(&args.figures)?;
        let status = Command::new(cmd)
            .arg(&args.figures)
            .args(&args.inputs)
            .status()
            .with_context(|| format!("running plotter `{cmd}`"))?;
        if !status.success() {
            bail!("plotter `{cmd}` exited with {status}");
        }
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}
