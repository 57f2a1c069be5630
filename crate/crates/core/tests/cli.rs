use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ccsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccsim")).args(args).output().expect("spawn ccsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn count_run_dirs(root: &Path) -> usize {
    let mut n = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            let is_run = path.file_name().unwrap().to_string_lossy().starts_with("run-");
            n += if is_run { 1 } else { count_run_dirs(&path) };
        }
    }
    n
}

#[test]
fn stats_prints_capacity_line() {
    let o = ccsim(&["trace", "stats", "const:48:1000"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "48.000 Mbps avg, 4000 opportunities");
}

#[test]
fn validate_reports_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.trace");
    fs::write(&path, "1\n2\nfoo\n4\n").unwrap();
    let o = ccsim(&["trace", "validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&path, "1\n1\n2\n").unwrap();
    let o = ccsim(&["trace", "validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn synth_then_validate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("step.trace");
    let o = ccsim(&["trace", "synth", "step:24x500,48x500", "-o", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = ccsim(&["trace", "validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("36.000 Mbps"), "{}", stdout(&o));
}

#[test]
fn convert_probe_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("probe.log");
    let text: String = (0..40_000u64).map(|i| format!("{}\n", 5_000 + i * 250)).collect();
    fs::write(&log, text).unwrap();
    let out = dir.path().join("probe.trace");
    let o = ccsim(&["trace", "convert", log.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("48.000 Mbps"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 40_000);
}

#[test]
fn campaign_writes_one_directory_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let campaign = dir.path().join("c.toml");
    fs::write(
        &campaign,
        r#"
seed = 5
runs = 20
jobs = 2
duration_s = 2
scenarios = ["cubic", "bbr", "copa"]
buffers = ["bdp:2"]
[[traces]]
name = "flat"
spec = "const:12:1000"
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = ccsim(&["run", "--campaign", campaign.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(count_run_dirs(&out), 60);
    let run0 = out.join("flat/cubic/bdp-2/run-0");
    for f in ["delays.csv", "throughput.csv", "queue.csv", "meta.json"] {
        assert!(run0.join(f).is_file(), "missing {f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 61);
    let significance = fs::read_to_string(out.join("significance.csv")).unwrap();
    // three pairs, throughput and delay each
    assert_eq!(significance.lines().count(), 7, "{significance}");

    let o = ccsim(&["plotdata", out.to_str().unwrap(), "scatter"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 61);
}

#[test]
fn same_seed_gives_identical_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = vec![];
    for (name, jobs) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        let o = ccsim(&[
            "run", "--trace", "step:24x500,12x500", "--cc", "cubic", "--cc", "vivace", "--buffer", "bdp:1",
            "--buffer", "inf", "--duration-s", "3", "--runs", "4", "--seed", "9", "--jobs", jobs, "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(["summary.csv", "manifest.csv"].map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    let no_cc = ccsim(&["run", "--trace", "const:12:1000", "--out", out]);
    assert_eq!(no_cc.status.code(), Some(1));
    let bad_cc = ccsim(&["run", "--trace", "const:12:1000", "--cc", "vegas", "--out", out]);
    assert_eq!(bad_cc.status.code(), Some(1), "{}", stderr(&bad_cc));
    let bad_buffer = ccsim(&["run", "--trace", "const:12:1000", "--cc", "reno", "--buffer", "lots", "--out", out]);
    assert_eq!(bad_buffer.status.code(), Some(1));
    let kind = ccsim(&["plotdata", out, "pie"]);
    assert_eq!(kind.status.code(), Some(1));
    assert!(stderr(&kind).contains("unknown figure kind"));
}

#[test]
fn sweep_writes_share_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = ccsim(&[
        "sweep", "--trace", "const:24:1000", "--cc", "bbr", "--cc", "cubic", "--multiples", "1,4", "--duration-s",
        "4", "--runs", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3, "{sweep}");
    let o = ccsim(&["plotdata", out.to_str().unwrap(), "sweep"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
