use adl::term::{SymOp, SymbolicModel, Term};
use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn adl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adl"))
        .args(args)
        .current_dir(root())
        .env_remove("ADL_CONFIG")
        .output()
        .unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(name),
    )
    .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn check_accepts_the_minimal_program() {
    let o = adl(&["check", "corpus/minimal.adl"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), golden("check_minimal.txt"));
}

#[test]
fn check_rejects_every_broken_program() {
    let broken: Vec<String> = std::fs::read_dir(root().join("corpus/broken"))
        .unwrap()
        .map(|e| format!("corpus/broken/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    assert!(broken.len() >= 10);
    for f in &broken {
        let o = adl(&["check", f]);
        assert_eq!(o.status.code(), Some(1), "{f}");
        assert!(!stdout(&o).contains(": ok"), "{f}");
    }
    let mut sorted = broken.clone();
    sorted.sort();
    let args: Vec<&str> = std::iter::once("check")
        .chain(sorted.iter().map(String::as_str))
        .collect();
    assert_eq!(stdout(&adl(&args)), golden("check_broken.txt"));
}

#[test]
fn check_accepts_the_whole_corpus() {
    let files: Vec<String> = std::fs::read_dir(root().join("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "adl"))
        .map(|p| p.display().to_string())
        .collect();
    let mut args = vec!["check"];
    args.extend(files.iter().map(String::as_str));
    let o = adl(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn equiv_reports_a_leak_with_a_witness() {
    let o = adl(&[
        "equiv",
        "corpus/leak0.adl",
        "corpus/leak1.adl",
        "--budget",
        "2",
        "--recipe-depth",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert_eq!(out, golden("equiv_leak.json"));

    let w: serde_json::Value = serde_json::from_str(&out).unwrap();
    let recipe: SymOp = w["mismatch"]["recipe"].as_str().unwrap().parse().unwrap();
    let model = SymbolicModel::core(8);
    let outs = |side: usize| -> Vec<Term> {
        w["views"][side]
            .as_array()
            .unwrap()
            .iter()
            .filter_map(|e| e.get("out"))
            .flat_map(|o| o["terms"].as_array().unwrap().clone())
            .map(|t| t.as_str().unwrap().parse().unwrap())
            .collect()
    };
    let left = model.eval_checked(&recipe, &outs(0)).is_some();
    let right = model.eval_checked(&recipe, &outs(1)).is_some();
    assert_ne!(left, right);
    assert_eq!(w["mismatch"]["left"].as_bool(), Some(left));
}

#[test]
fn equal_programs_are_equivalent() {
    let o = adl(&["equiv", "corpus/leak1.adl", "corpus/leak1.adl", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "equivalent");
}

#[test]
fn runs_repeat_byte_for_byte() {
    let a = adl(&["run", "corpus/minimal.adl", "--seed", "42"]);
    let b = adl(&["run", "corpus/minimal.adl", "--seed", "42"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a), golden("run_minimal.txt"));
}

#[test]
fn exact_distribution_golden() {
    let o = adl(&[
        "dist",
        "corpus/otp1.adl",
        "--attacker",
        "echo",
        "--width",
        "4",
        "--exhaustive",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), golden("dist_otp1.txt"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(adl(&["--bogus"]).status.code(), Some(2));
    assert_eq!(adl(&["run"]).status.code(), Some(2));
    assert_eq!(adl(&["run", "corpus/nothing.adl"]).status.code(), Some(2));
    assert_eq!(
        adl(&["run", "corpus/minimal.adl", "--width", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        adl(&["run", "corpus/minimal.adl", "--reg", "x"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn config_file_sets_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("adl.toml");
    std::fs::write(&cfg, "width = 4\n").unwrap();
    let run = |env: Option<&PathBuf>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_adl"));
        c.args(["symrun", "corpus/leak1.adl", "--json"])
            .current_dir(root());
        match env {
            Some(p) => c.env("ADL_CONFIG", p),
            None => c.env_remove("ADL_CONFIG"),
        };
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        stdout(&o)
    };
    assert!(run(Some(&cfg)).contains("\"string_0(string_0(string_0(string_1(emp))))\""));
    assert!(!run(None).contains("\"string_0(string_0(string_0(string_1(emp))))\""));

    std::fs::write(&cfg, "width = 99\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_adl"))
        .args(["check", "corpus/minimal.adl"])
        .current_dir(root())
        .env("ADL_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn embed_writes_a_tree_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tree.json");
    let o = adl(&[
        "embed",
        "corpus/sealed0.adl",
        "--max-nodes",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let tree = adl::cosp::import_tree(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(tree.nodes.len(), 15);
    assert!(tree.truncated);
}

#[test]
fn harmonize_flags_a_corrupted_library() {
    let ok = adl(&[
        "harmonize",
        "corpus/keyleak.adl",
        "--width",
        "4",
        "--samples",
        "300",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = adl(&[
        "harmonize",
        "corpus/keyleak.adl",
        "--width",
        "4",
        "--samples",
        "300",
        "--flip",
        "1",
        "--json",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let r: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(r["harmonizes"], false);
    assert!(r["counterexample"].is_object());
}

#[test]
fn tv_separates_a_leak_from_a_pad() {
    let tv = |a: &str, b: &str| -> serde_json::Value {
        let o = adl(&["tv", a, b, "--width", "4", "--trials", "400", "--json"]);
        assert_eq!(o.status.code(), Some(0));
        serde_json::from_slice(&o.stdout).unwrap()
    };
    let leak = tv("corpus/leak0.adl", "corpus/leak1.adl");
    assert!(leak["ci"][1].as_f64().unwrap() >= 1.0 - 1e-9);
    let pad = tv("corpus/otp0.adl", "corpus/otp1.adl");
    assert!(pad["ci"][0].as_f64().unwrap() <= 0.0);
}
