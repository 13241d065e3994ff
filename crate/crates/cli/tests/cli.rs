use std::path::Path;
use std::process::{Command, Output};

use it2mof_core::study::DesignFile;

fn it2mof(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_it2mof"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn design_case1(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("d1.json");
    let o = it2mof(&["design", "--case", "1", "--out", out.to_str().unwrap()], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn design_writes_a_lossless_result_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = design_case1(dir.path());
    let text = std::fs::read_to_string(&path).unwrap();
    let file = DesignFile::from_json(&text).unwrap();
    let gamma = file.result.gamma.unwrap();
    assert!((gamma - 23.493).abs() <= 0.15 * 23.493, "gamma {gamma}");
    assert_eq!(file.to_json(), text);
    assert_eq!(DesignFile::from_json(&file.to_json()).unwrap(), file);
}

#[test]
fn zero_memory_depth_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = it2mof(&["design", "--kappa", "0"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trigger.kappa"));
    assert!(!dir.path().join("design.json").exists());
}

#[test]
fn infeasible_design_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = it2mof_core::fixtures::EXAMPLE1_TOML.replace("rho = 0.1", "rho = 0.9");
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let o = it2mof(&["design", "--config", "c.toml", "--out", "d.json"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
    let file = DesignFile::load(&dir.path().join("d.json")).unwrap();
    assert!(file.result.gamma.is_none());
}

#[test]
fn unknown_backend_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_it2mof"))
        .args(["design", "--case", "1"])
        .env("IT2MOF_BACKEND", "mosek")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn mfd_records_partition_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = it2mof(&["design", "--method", "mfd", "--cells", "1", "--out", "m.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let file = DesignFile::load(&dir.path().join("m.json")).unwrap();
    let part = file.result.partition.expect("partition summary");
    assert_eq!((part.p, part.q, part.wp), (1, 1, 1));
    assert!(part.corner_inequalities > 0);
}

#[test]
fn simulate_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = design_case1(dir.path());
    let o = it2mof(
        &[
            "simulate", "--design", d.to_str().unwrap(), "--seed", "7", "--horizon", "1", "--seeds", "3", "--trace",
            "t.csv", "--summary", "s.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "t,x_1,x_2,y_1,y_trig_1,u_1,uf_1,z_1,d_1,varpi,triggered,xi");
    assert!(lines[1].starts_with("0,"));
    assert!(lines[2].starts_with("1,"));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    for key in ["tr", "empirical_hinf", "decay_fit", "max_state_norm"] {
        assert!(s.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn zero_disturbance_from_rest_stays_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = design_case1(dir.path());
    // varpi(0) = 0 puts every sample on the equality case (release); a
    // positive start leaves only the forced first release.
    for (varpi0, expected) in [(0.0, 101), (0.5, 1)] {
        let mut file = DesignFile::load(&d).unwrap();
        file.config.trigger.varpi0 = varpi0;
        std::fs::write(&d, file.to_json()).unwrap();
        let o = it2mof(
            &["simulate", "--design", d.to_str().unwrap(), "--disturbance", "0", "--seeds", "1", "--trace", "t.csv"],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let trace = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        let mut rd = csv::Reader::from_reader(trace.as_bytes());
        let mut triggers = 0;
        for rec in rd.records() {
            let rec = rec.unwrap();
            for v in rec.iter().skip(1).take(8) {
                assert_eq!(v.parse::<f64>().unwrap(), 0.0);
            }
            triggers += usize::from(&rec[10] == "1");
        }
        assert_eq!(triggers, expected, "varpi0 {varpi0}");
    }
}

#[test]
fn simulate_without_design_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = it2mof(&["simulate", "--design", "missing.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

#[test]
fn simulate_rejects_mismatched_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let d = design_case1(dir.path());
    let mut file = DesignFile::load(&d).unwrap();
    file.config.sim.x0 = Some(vec![1.0, 2.0, 3.0]);
    std::fs::write(&d, serde_json::to_string(&file).unwrap()).unwrap();
    let o = it2mof(&["simulate", "--design", d.to_str().unwrap(), "--seeds", "1"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_passes_on_a_fresh_design() {
    let dir = tempfile::tempdir().unwrap();
    let d = design_case1(dir.path());
    let o = it2mof(&["verify", "--design", d.to_str().unwrap(), "--samples", "200"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn verify_fails_on_tampered_gains() {
    let dir = tempfile::tempdir().unwrap();
    let d = design_case1(dir.path());
    let mut file = DesignFile::load(&d).unwrap();
    file.result.gains[0][0] *= 3.0;
    std::fs::write(&d, serde_json::to_string(&file).unwrap()).unwrap();
    let o = it2mof(&["verify", "--design", d.to_str().unwrap(), "--samples", "50"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn sweep_tables_and_empty_case_list() {
    let dir = tempfile::tempdir().unwrap();
    let o = it2mof(&["sweep", "--cases", "", "--out", "sw"], dir.path());
    assert_eq!(code(&o), 1);
    let o = it2mof(&["sweep", "--cases", "2", "--kappa", "1..2", "--seeds", "2", "--out", "sw"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let gamma = std::fs::read_to_string(dir.path().join("sw/gamma.csv")).unwrap();
    let lines: Vec<&str> = gamma.lines().collect();
    assert_eq!(lines[0], "case,kappa_1,kappa_2");
    let vals: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!(vals[1] < vals[0], "{vals:?}");
    assert!(dir.path().join("sw/tr.csv").exists());
}

#[test]
fn report_validates_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let d = design_case1(dir.path());
    let o = it2mof(
        &["simulate", "--design", d.to_str().unwrap(), "--seeds", "2", "--trace", "t.csv", "--summary", "s.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let o = it2mof(&["report", "t.csv", "s.json", d.to_str().unwrap(), "--out", "r.md"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = std::fs::read_to_string(dir.path().join("r.md")).unwrap();
    assert!(md.contains("| gamma |"));
    assert!(md.contains("Trace: 101 samples"));

    std::fs::write(dir.path().join("bad.csv"), "t,x_1,varpi,triggered,xi\n0,1,0,1,0.8\n").unwrap();
    let o = it2mof(&["report", "bad.csv", "--out", "r2.md"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("y_1"));
}
