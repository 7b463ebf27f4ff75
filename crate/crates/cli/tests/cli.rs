use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncergodic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn certify_max_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = cli(&[
        "certify-max", "--family", "sphere", "--epsilon", "0.5", "--horizon", "6", "--seed", "4",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    for key in ["deficit_measured", "deficit_bound", "margins", "peels", "epsilon", "horizon"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["horizon"], 6);
    assert!(dir.path().join("report-margins.csv").exists());
}

#[test]
fn bau_report_schema_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bau.json");
    let o = cli(&[
        "bau", "--kind", "rd", "--seed", "5", "--epsilon", "0.1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    assert_eq!(v["kind"], "rd");
    assert_eq!(v["seed"], 5);
    assert_eq!(v["verdict"], "achieved");
    assert!(v["deficit"].as_f64().unwrap() < 0.1);
    let tail = v["tail"].as_array().unwrap();
    assert_eq!(tail[0][0], 1);
    assert_eq!(tail.len(), 21);
}

#[test]
fn run_from_flags_and_config_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "kind = \"bau\"\nseed = 7\nk = 3\nepsilon = 0.1\n").unwrap();
    let a = cli(&["run", "--config", cfg.to_str().unwrap()]);
    let b = cli(&["run", "--kind", "bau", "--seed", "7", "--k", "3", "--epsilon", "0.1"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v.get("verdict").is_some());
}

#[test]
fn invalid_configuration_exits_with_two() {
    assert_eq!(cli(&["bau", "--epsilon=-1"]).status.code(), Some(2));
    assert_eq!(cli(&["sphere", "--w", "1/3"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--kind", "nonsense"]).status.code(), Some(2));
    assert_eq!(cli(&["run"]).status.code(), Some(2));
    assert_eq!(cli(&["mean-limit", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.toml");
    fs::write(&m, "[[run]]\nkind = \"bau\"\nk = 1\n").unwrap();
    assert_eq!(cli(&["suite", "--manifest", m.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_with_one_and_dumps_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bau.json");
    // a tolerance no finite tail can meet
    let o = cli(&[
        "bau", "--kind", "zd", "--seed", "1", "--tail-tol", "1e-30", "--max-log2", "6", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[tails]"));
    let v = json(&out);
    assert_eq!(v["verdict"], "not-achieved");
    assert!(v["projection"]["re"].is_array());
}

#[test]
fn suite_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.toml");
    fs::write(
        &m,
        "[[run]]\nkind = \"brunel-table\"\nn_max = 4\ntruncation = 30\n\n\
         [[run]]\nkind = \"mean-limit\"\nseed = 3\nmax_log2 = 8\n\n\
         [[run]]\nkind = \"sphere\"\nseed = 2\nn_max = 40\n\n\
         [[run]]\nkind = \"bau\"\nfamily = \"sphere\"\nseed = 9\nmax_log2 = 16\ntail_tol = 1e-2\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = cli(&["suite", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn broken_kernel_surfaces_stage_label() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = dir.path().join("kernel.json");
    // swap conjugation on a non-tracial density does not preserve the state
    fs::write(
        &kernel,
        r#"{"seed": null, "orientation": "predual",
            "density": {"re": [[1.5, 0.0], [0.0, 0.5]], "im": [[0.0, 0.0], [0.0, 0.0]]},
            "maps": [{"kraus": [{"re": [[0.0, 1.0], [1.0, 0.0]], "im": [[0.0, 0.0], [0.0, 0.0]]}],
                      "superop": null,
                      "flags": {"cp": "unknown", "positive": "unknown", "sub_unital": "unknown",
                                "rho_preserving": "unknown", "rho_selfadjoint": "unknown",
                                "tau_preserving": "unknown"}}]}"#,
    )
    .unwrap();
    let m = dir.path().join("m.toml");
    fs::write(&m, "[[run]]\nkind = \"mean-limit\"\nkernel = \"kernel.json\"\n").unwrap();
    let out = dir.path().join("out");
    let o = cli(&["suite", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("[kernel]"), "{stderr}");
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["passed"], false);
}
