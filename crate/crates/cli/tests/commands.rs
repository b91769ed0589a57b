use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[model]
p = 1.5
eta = 0.1
horizon = 5.0
hazard = "constant_rate"
hazard_rate = 1.0
claims = "exponential"
claim_mean = 1.0

[solver]
n_s = 40
n_x = 40
n_q = 11
n_quad = 32

[simulate]
n_paths = 2000
seed = 11
points = [[0.0, 0.2, 0.0], [1.0, 0.3, 0.5]]

[validate]
n_paths = 4000
seed = 11
eps_grid = 0.1
refine = false
"#;

fn ruinctl(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ruinctl"));
    cmd.args(args).env("RUST_LOG", "warn");
    match workers {
        Some(n) => cmd.env("RUIN_WORKERS", n),
        None => cmd.env_remove("RUIN_WORKERS"),
    };
    cmd.output().expect("ruinctl runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_is_byte_identical_across_runs_and_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let mut files = Vec::new();
    for (n, workers) in [Some("1"), Some("1"), Some("4"), None].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{n}"));
        assert_ok(&ruinctl(&["solve", "--config", s(&cfg), "--out", s(&out)], workers));
        files.push(fs::read(out.join("value.csv")).unwrap());
        assert!(out.join("solve.json").exists());
    }
    assert!(files.windows(2).all(|w| w[0] == w[1]));
    let text = String::from_utf8(files[0].clone()).unwrap();
    assert!(text.starts_with("# ruin-core "));
    assert_eq!(text.lines().nth(1), Some("s,x,w,V,q_star"));
}

#[test]
fn provenance_hash_ignores_layout_but_tracks_values() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(tmp.path(), "a.toml", SMALL);
    let b = write_config(tmp.path(), "b.toml", &format!("# comment\n{}", SMALL.replace("p = 1.5", "p   =   1.50")));
    let c = write_config(tmp.path(), "c.toml", &SMALL.replace("eta = 0.1", "eta = 0.2"));
    let mut heads = Vec::new();
    for (n, cfg) in [&a, &b, &c].into_iter().enumerate() {
        let out = tmp.path().join(format!("o{n}"));
        assert_ok(&ruinctl(&["solve", "--config", s(cfg), "--out", s(&out)], None));
        let text = fs::read_to_string(out.join("value.csv")).unwrap();
        heads.push(text.lines().next().unwrap().to_string());
    }
    assert_eq!(heads[0], heads[1]);
    assert_ne!(heads[0], heads[2]);
}

#[test]
fn checkpoint_resume_matches_a_full_solve() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let full = tmp.path().join("full");
    assert_ok(&ruinctl(&["solve", "--config", s(&cfg), "--out", s(&full), "--checkpoint-every", "7"], None));
    let segments: Vec<_> = fs::read_dir(full.join("checkpoint")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(segments.len(), 6, "41 slices in runs of 7");

    // keep only the segments nearest the horizon, as if the run had stopped early
    let partial = tmp.path().join("partial");
    fs::create_dir_all(&partial).unwrap();
    for seg in &segments {
        let name = seg.file_name().unwrap().to_str().unwrap();
        let lo: usize = name["slices_".len()..][..5].parse().unwrap();
        if lo >= 20 {
            fs::copy(seg, partial.join(name)).unwrap();
        }
    }
    let resumed = tmp.path().join("resumed");
    assert_ok(&ruinctl(&["solve", "--config", s(&cfg), "--out", s(&resumed), "--resume", s(&partial)], None));
    assert_eq!(fs::read(full.join("value.csv")).unwrap(), fs::read(resumed.join("value.csv")).unwrap());
}

#[test]
fn resume_rejects_a_gap_in_the_segments() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let full = tmp.path().join("full");
    assert_ok(&ruinctl(&["solve", "--config", s(&cfg), "--out", s(&full), "--checkpoint-every", "10"], None));
    let dir = full.join("checkpoint");
    let mut segs: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    segs.sort();
    fs::remove_file(&segs[segs.len() - 2]).unwrap();
    let out = ruinctl(&["solve", "--config", s(&cfg), "--out", s(&tmp.path().join("r")), "--resume", s(&dir)], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing slices"));
}

#[test]
fn simulate_writes_summary_and_stable_path_dump() {
    let tmp = TempDir::new().unwrap();
    let body = SMALL.replace("n_paths = 2000", "n_paths = 1").replace(
        "points = [[0.0, 0.2, 0.0], [1.0, 0.3, 0.5]]",
        "points = [[0.0, 0.2, 0.0], [1.0, 0.3, 0.5]]\npolicy = \"constant\"\nretention = 0.5",
    );
    let cfg = write_config(tmp.path(), "c.toml", &body);
    let mut dumps = Vec::new();
    for (n, workers) in ["1", "4"].into_iter().enumerate() {
        let out = tmp.path().join(format!("sim{n}"));
        assert_ok(&ruinctl(&["simulate", "--config", s(&cfg), "--out", s(&out), "--dump-paths"], Some(workers)));
        dumps.push(fs::read_to_string(out.join("paths.csv")).unwrap());
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 4);
        assert!(summary.lines().nth(2).unwrap().contains("constant:0.5"));
    }
    assert_eq!(dumps[0], dumps[1]);
    let ids: Vec<&str> = dumps[0].lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert!(ids.contains(&"0") && ids.contains(&"1"));
}

#[test]
fn simulate_reads_a_policy_table_from_a_solve() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let solved = tmp.path().join("solved");
    assert_ok(&ruinctl(&["solve", "--config", s(&cfg), "--out", s(&solved)], None));
    let table = solved.join("value.csv");
    let body = SMALL.replace(
        "points = [[0.0, 0.2, 0.0], [1.0, 0.3, 0.5]]",
        &format!("points = [[0.0, 0.2, 0.0]]\ntable = {:?}", s(&table)),
    );
    let cfg2 = write_config(tmp.path(), "t.toml", &body);
    let inline = tmp.path().join("inline");
    let from_file = tmp.path().join("file");
    let cfg_inline = write_config(
        tmp.path(),
        "i.toml",
        &SMALL.replace("points = [[0.0, 0.2, 0.0], [1.0, 0.3, 0.5]]", "points = [[0.0, 0.2, 0.0]]"),
    );
    assert_ok(&ruinctl(&["simulate", "--config", s(&cfg2), "--out", s(&from_file)], None));
    assert_ok(&ruinctl(&["simulate", "--config", s(&cfg_inline), "--out", s(&inline)], None));
    let row = |dir: &Path| fs::read_to_string(dir.join("summary.csv")).unwrap().lines().nth(2).unwrap().to_string();
    // the file stores the table to 17 significant digits; both estimates agree path for path
    let mean = |r: String| r.split(',').nth(4).unwrap().parse::<f64>().unwrap();
    assert_eq!(mean(row(&from_file)), mean(row(&inline)));
}

#[test]
fn validate_passes_on_a_small_reference_model() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("v");
    let res = ruinctl(&["validate", "--config", s(&cfg), "--out", s(&out)], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));
    assert_eq!(report["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn validate_exits_one_when_a_check_fails() {
    let tmp = TempDir::new().unwrap();
    // a Weibull shape above one has a hazard that vanishes at w = 0
    let body = SMALL.replace(
        "hazard = \"constant_rate\"\nhazard_rate = 1.0",
        "hazard = \"weibull\"\nhazard_shape = 2.0\nhazard_scale = 1.0",
    );
    let cfg = write_config(tmp.path(), "c.toml", &body);
    let out = tmp.path().join("v");
    let res = ruinctl(&["validate", "--config", s(&cfg), "--out", s(&out)], None);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"passed\": false"));
}

#[test]
fn unknown_key_is_named_and_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &SMALL.replace("[solver]", "[solver]\nfoo = 3"));
    let res = ruinctl(&["solve", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("foo"));
}

#[test]
fn invalid_values_and_usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let o = tmp.path().join("o");
    let bad = write_config(tmp.path(), "bad.toml", &SMALL.replace("eta = 0.1", "eta = 0.0"));
    let res = ruinctl(&["solve", "--config", s(&bad), "--out", s(&o)], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("eta"));

    let missing = ruinctl(&["solve", "--config", s(&tmp.path().join("nope.toml")), "--out", s(&o)], None);
    assert_eq!(missing.status.code(), Some(2));

    let good = write_config(tmp.path(), "good.toml", SMALL);
    let no_out = ruinctl(&["solve", "--config", s(&good)], None);
    assert_eq!(no_out.status.code(), Some(2));

    let workers = ruinctl(&["solve", "--config", s(&good), "--out", s(&o)], Some("zero"));
    assert_eq!(workers.status.code(), Some(2));
}

#[test]
fn output_dir_can_come_from_the_config() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("from_config");
    let cfg = write_config(tmp.path(), "c.toml", &format!("{SMALL}\n[output]\ndir = {:?}\nformats = [\"csv\"]\n", s(&dir)));
    assert_ok(&ruinctl(&["solve", "--config", s(&cfg)], None));
    assert!(dir.join("value.csv").exists());
    assert!(!dir.join("solve.json").exists());
}

#[test]
fn sweep_writes_one_solve_per_value() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &SMALL.replace("n_s = 40\nn_x = 40", "n_s = 20\nn_x = 20"));
    let out = tmp.path().join("sw");
    assert_ok(&ruinctl(&["sweep", "--config", s(&cfg), "--axis", "eta", "--values", "0.1,0.2,0.3", "--out", s(&out)], None));
    for n in 0..3 {
        assert!(out.join(format!("eta_{n:03}")).join("value.csv").exists());
    }
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.starts_with("eta,")));

    let bad = ruinctl(&["sweep", "--config", s(&cfg), "--axis", "eta", "--values", "-1", "--out", s(&out)], None);
    assert_eq!(bad.status.code(), Some(2));
}
