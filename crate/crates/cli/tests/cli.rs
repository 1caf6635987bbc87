use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ngkit(args: &[&str]) -> Output {
    ngkit_env(args, None)
}

fn ngkit_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ngkit"));
    c.args(args).env_remove("NGKIT_SEED");
    if let Some(s) = seed {
        c.env("NGKIT_SEED", s);
    }
    c.output().expect("run ngkit")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const MINIMAL: &str = "seed = 3\nduration_ms = 1000\nsnr_db = 20\n[cell.1]\nbandwidth_mhz = 5\n[ue.0x100]\ntraffic = cbr\nrate_bps = 2e6\n";

const TWO_CELLS: &str = "seed = 4\nduration_ms = 600\nsnr_db = 20\n[cell.1]\nbandwidth_mhz = 5\n[cell.2]\nbandwidth_mhz = 5\n[ue.0x100]\ncells = 1,2\ntraffic = full\n[ue.0x200]\ncells = 2\ntraffic = cbr\nrate_bps = 1e6\n";

fn simulate(dir: &Path, cfg_text: &str, extra: &[&str]) -> PathBuf {
    let cfg = write_config(dir, "sim.cfg", cfg_text);
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&ngkit(&args));
    out
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(p).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

/// Message identity without decoder-only columns.
fn message_keys(p: &Path) -> HashSet<String> {
    csv_rows(p).into_iter().skip(1).map(|r| r[..12].join(",")).collect()
}

#[test]
fn minimal_config_gives_one_thousand_subframes() {
    let dir = TempDir::new().unwrap();
    let out = simulate(dir.path(), MINIMAL, &[]);
    // 5 MHz pads 12 CCEs to 16: 8-byte header, then sfn + 16 * 72 floats each.
    let size = fs::metadata(out.join("cell1.llr")).unwrap().len();
    assert_eq!(size, 8 + 1000 * (8 + 16 * 72 * 4));
    let rows = csv_rows(&out.join("truth.csv"));
    assert_eq!(rows[0].join(","), "sfn,cell_id,rnti,format,L,cce_start,mcs1,mcs2,nof_prb,tbs,ndi,harq");
    assert!(rows.len() > 100);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=3\n"));
    assert!(manifest.contains("config_sha256="));
}

#[test]
fn same_seed_same_bytes_and_env_seed_overrides() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let oa = simulate(a.path(), MINIMAL, &[]);
    let ob = simulate(b.path(), MINIMAL, &[]);
    for f in ["truth.csv", "cell1.llr", "manifest.txt"] {
        assert_eq!(fs::read(oa.join(f)).unwrap(), fs::read(ob.join(f)).unwrap(), "{f}");
    }
    let cfg = write_config(c.path(), "sim.cfg", MINIMAL);
    let oc = c.path().join("sim");
    ok(&ngkit_env(&["simulate", "--config", s(&cfg), "--out", s(&oc)], Some("99")));
    assert!(fs::read_to_string(oc.join("manifest.txt")).unwrap().contains("seed=99\n"));
    assert_ne!(fs::read(oa.join("truth.csv")).unwrap(), fs::read(oc.join("truth.csv")).unwrap());
}

#[test]
fn missing_required_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "[cell.1]\nbandwidth_mhz = 5\n[ue.256]\ntraffic = full\n");
    let o = ngkit(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duration_ms"));
    let o = ngkit(&["simulate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn decode_recovers_the_ground_truth() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), MINIMAL, &[]);
    let out = dir.path().join("dec");
    ok(&ngkit(&["decode", "--llr", s(&sim.join("cell1.llr")), "--out", s(&out), "--pool", "2"]));
    let truth = message_keys(&sim.join("truth.csv"));
    let decoded = message_keys(&out.join("decoded.csv"));
    assert!(decoded.is_subset(&truth), "decoded messages absent from the truth");
    // Past the tracker window nothing may be missing.
    let missing: Vec<&String> = truth
        .difference(&decoded)
        .filter(|k| k.split(',').next().unwrap().parse::<u64>().unwrap() >= 16)
        .collect();
    assert!(missing.is_empty(), "missing {missing:?}");
    let header = csv_rows(&out.join("decoded.csv"))[0].join(",");
    assert!(header.ends_with("flip_ratio,attempts,validated_by"));
    assert_eq!(csv_rows(&out.join("reports.csv")).len(), 1001);
    let ues = fs::read_to_string(out.join("ues.csv")).unwrap();
    assert!(ues.contains(",256,promoted,"));
}

#[test]
fn corrupt_llr_header_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.llr");
    let mut bytes = 1u32.to_le_bytes().to_vec();
    bytes.extend_from_slice(&13u32.to_le_bytes());
    fs::write(&bad, bytes).unwrap();
    let o = ngkit(&["decode", "--llr", s(&bad), "--out", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn max_attempts_caps_work_per_subframe() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), MINIMAL, &[]);
    let out = dir.path().join("dec");
    ok(&ngkit(&[
        "decode",
        "--llr",
        s(&sim.join("cell1.llr")),
        "--out",
        s(&out),
        "--max-attempts",
        "3",
    ]));
    for r in csv_rows(&out.join("reports.csv")).iter().skip(1) {
        assert!(r[2].parse::<usize>().unwrap() <= 3);
    }
}

#[test]
fn capacity_rows_match_subframes_and_ca_adds_a_column() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), TWO_CELLS, &["--truth-only"]);
    let truth = sim.join("truth.csv");
    let out = dir.path().join("cap");
    // Two cells without --ca is ambiguous.
    let o = ngkit(&["capacity", "--log", s(&truth), "--target", "0x100", "--bandwidth", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    ok(&ngkit(&[
        "capacity", "--log", s(&truth), "--target", "0x100", "--bandwidth", "5", "--ca", "--subframes", "600", "--out",
        s(&out),
    ]));
    let rows = csv_rows(&out.join("capacity.csv"));
    assert_eq!(rows.len(), 1 + 3 * 600);
    let ca: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "CA").collect();
    assert_eq!(ca.len(), 600);
    // The CA row is the sum of the two cell rows of its subframe.
    for sfn in [0usize, 300, 599] {
        let cells: f64 = rows[1 + 3 * sfn..3 + 3 * sfn].iter().map(|r| r[5].parse::<f64>().unwrap()).sum();
        let agg: f64 = rows[3 + 3 * sfn][5].parse().unwrap();
        assert!((cells - agg).abs() < 1e-6);
    }
    assert!(fs::read_to_string(out.join("trace.txt")).unwrap().lines().count() > 100);
}

#[test]
fn capacity_drop_changes_the_estimate() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), MINIMAL, &["--truth-only"]);
    let truth = sim.join("truth.csv");
    let run = |name: &str, drop: &str| {
        let out = dir.path().join(name);
        ok(&ngkit(&[
            "capacity", "--log", s(&truth), "--target", "0x100", "--bandwidth", "5", "--drop", drop, "--out", s(&out),
        ]));
        fs::read_to_string(out.join("capacity.csv")).unwrap()
    };
    let full = run("a", "0");
    let dropped = run("b", "0.3");
    assert_eq!(full.lines().count(), 1001);
    assert_eq!(dropped.lines().count(), 1001);
    assert_ne!(full, dropped);
    let o = ngkit(&["capacity", "--log", s(&truth), "--target", "256", "--drop", "0.7", "--out", s(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
}

fn constant_trace(dir: &Path, packets_per_ms: usize, ms: usize) -> PathBuf {
    let p = dir.join("trace.txt");
    let mut text = String::new();
    for t in 1..=ms {
        for _ in 0..packets_per_ms {
            text.push_str(&format!("{t}\n"));
        }
    }
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn emulate_emits_both_controllers_and_a_comparison() {
    let dir = TempDir::new().unwrap();
    let trace = constant_trace(dir.path(), 2, 3000);
    let out = dir.path().join("emu");
    ok(&ngkit(&["emulate", "--trace", s(&trace), "--out", s(&out)]));
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows[0].join(","), "algorithm,run,throughput_bps,p95_delay_ms");
    let algs: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(algs, vec!["ngcc", "cubic", "ngcc_minus_cubic"]);
    let ngcc_tput: f64 = rows[1][2].parse().unwrap();
    assert!(ngcc_tput >= 0.95 * 24e6, "{ngcc_tput}");
}

#[test]
fn emulate_sweeps_message_drop() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), MINIMAL, &["--truth-only"]);
    let out = dir.path().join("emu");
    ok(&ngkit(&[
        "emulate",
        "--sweep-drop",
        "0:0.5:0.1",
        "--log",
        s(&sim.join("truth.csv")),
        "--target",
        "0x100",
        "--bandwidth",
        "5",
        "--cc",
        "ngcc",
        "--out",
        s(&out),
    ]));
    let rows = csv_rows(&out.join("metrics.csv"));
    let runs: Vec<&str> = rows[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(runs, vec!["drop=0", "drop=0.1", "drop=0.2", "drop=0.3", "drop=0.4", "drop=0.5"]);
    let o = ngkit(&["emulate", "--sweep-drop", "0:0.5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn abr_three_policies_three_metrics() {
    let dir = TempDir::new().unwrap();
    let trace = constant_trace(dir.path(), 1, 5000);
    let out = dir.path().join("abr");
    ok(&ngkit(&["abr", "--trace", s(&trace), "--chunks", "8", "--out", s(&out)]));
    let rows = csv_rows(&out.join("qoe.csv"));
    assert_eq!(rows[0].join(","), "policy,metric,mean,stdev");
    for metric in ["linear", "log", "hd"] {
        let mut policies: Vec<&str> = rows[1..].iter().filter(|r| r[1] == metric).map(|r| r[0].as_str()).collect();
        policies.sort();
        assert_eq!(policies, vec!["buffer", "mpc", "ngmpc"], "{metric}");
    }
    let o = ngkit(&["abr", "--trace", s(&trace), "--policy", "nope", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_reports_attempt_percentiles() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), MINIMAL, &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&ngkit(&["bench", "--llr", s(&sim.join("cell1.llr")), "--out", s(&out)]));
        (
            fs::read_to_string(out.join("attempts.csv")).unwrap(),
            csv_rows(&out.join("summary.csv")),
        )
    };
    let (hist, summary) = run("b1");
    assert_eq!(summary[1][0], "1000");
    assert!(summary[1][3].parse::<f64>().unwrap() <= 80.0);
    assert_eq!(run("b2").0, hist);

    let empty = dir.path().join("empty.llr");
    let mut bytes = 1u32.to_le_bytes().to_vec();
    bytes.extend_from_slice(&16u32.to_le_bytes());
    fs::write(&empty, bytes).unwrap();
    let out = dir.path().join("b3");
    ok(&ngkit(&["bench", "--llr", s(&empty), "--bandwidth", "5", "--out", s(&out)]));
    assert_eq!(fs::read_to_string(out.join("attempts.csv")).unwrap(), "attempts,subframes\n");
}

#[test]
fn fuse_recovers_the_clock_offset() {
    let dir = TempDir::new().unwrap();
    let cfg = "seed = 8\nduration_ms = 4000\nber = 2e-5\n[cell.1]\nbandwidth_mhz = 10\n[ue.0x100]\ntraffic = full\n[ue.0x200]\ntraffic = full\n";
    let sim = simulate(dir.path(), cfg, &["--truth-only", "--packet-log", "0x100", "--clock-offset-ms", "-23"]);
    let out = dir.path().join("fuse");
    ok(&ngkit(&[
        "fuse",
        "--packets",
        s(&sim.join("packets.csv")),
        "--log",
        s(&sim.join("truth.csv")),
        "--out",
        s(&out),
    ]));
    let rows = csv_rows(&out.join("alignment.csv"));
    assert_eq!(rows[1][0], "256");
    assert_eq!(rows[1][1], "-23");
    assert!(csv_rows(&out.join("fused.csv")).len() > 100);
}
