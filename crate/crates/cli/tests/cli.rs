use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn hlv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlv"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("HLV_SEED")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or("").to_string()
}

fn checksums(dir: &Path) -> Vec<(String, String)> {
    json(&dir.join("manifest.json"))["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn classical_pair_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let o = hlv(&["check"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("check.json"));
    assert_eq!(r["sign_pattern"], "PP");
    assert_eq!(r["cone_condition"]["feasible"], true);
    assert_eq!(r["certified"], true);
}

#[test]
fn infeasible_cone_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sys.json");
    fs::write(&input, r#"{"N":1,"M":1,"r":[1],"rbar":[-1],"A":[[1]],"B":[[1]]}"#).unwrap();
    let o = hlv(&["check", "--input", input.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let r = json(&dir.path().join("out/check.json"));
    assert_eq!(r["cone_condition"]["feasible"], false);
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn unit_star_classification_reports_turning_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = hlv(&["star", "classify", "--E", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = json(&dir.path().join("classify.json"));
    assert_eq!(r["class"], "periodic");
    // e^q - q = 2 at both turning points.
    for key in ["q_minus", "q_plus"] {
        let q = r[key].as_f64().unwrap();
        assert!((q.exp() - q - 2.0).abs() < 1e-10, "{key} = {q}");
    }
    assert!((r["period"].as_f64().unwrap() - 7.368852434).abs() < 1e-8);
}

#[test]
fn census_is_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["ensemble", "census", "--trials", "200", "--seed", "7"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(hlv(&args, &a).status.code(), Some(0));
    let mut with_workers = args.to_vec();
    with_workers.extend(["--workers", "3"]);
    assert_eq!(hlv(&with_workers, &b).status.code(), Some(0));
    assert_eq!(checksums(&a), checksums(&b));
    assert_eq!(fs::read(a.join("census.json")).unwrap(), fs::read(b.join("census.json")).unwrap());
}

#[test]
fn every_ensemble_report_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, extra) in [("curves", vec!["--N", "8", "--mix-step", "0.25"]), ("theorem2", vec![]), ("theorem3", vec![])] {
        let mut runs = Vec::new();
        for w in ["1", "4"] {
            let out = dir.path().join(format!("{sub}-{w}"));
            let mut args = vec!["ensemble", sub, "--trials", "24", "--workers", w];
            args.extend(&extra);
            assert_eq!(hlv(&args, &out).status.code(), Some(0), "{sub}");
            runs.push(checksums(&out));
        }
        assert_eq!(runs[0], runs[1], "{sub}");
    }
}

#[test]
fn manifest_checksums_match_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hlv(&["simulate", "--t-end", "2", "--samples", "21", "--format", "svg"], dir.path()).status.code(), Some(0));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["tool"], "hlv");
    assert_eq!(m["seed"]["value"], 42);
    assert_eq!(m["seed"]["source"], "default");
    assert_eq!(m["config"]["global"]["rtol"], 1e-10);
    assert_eq!(m["input"]["path"], "builtin:classical_pair.json");
    let outputs = checksums(dir.path());
    assert_eq!(outputs.len(), 2);
    for (name, sum) in outputs {
        let bytes = fs::read(dir.path().join(&name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), sum, "{name}");
    }
}

#[test]
fn rerunning_a_manifest_reproduces_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(hlv(&["ensemble", "theorem3", "--N", "6", "--trials", "40", "--seed", "3"], &first).status.code(), Some(0));
    let m = json(&first.join("manifest.json"));
    // Replay the recorded arguments, dropping the output directory.
    let argv: Vec<String> = m["argv"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let mut replay = Vec::new();
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else {
            replay.push(a.as_str());
        }
    }
    let second = dir.path().join("second");
    assert_eq!(hlv(&replay, &second).status.code(), Some(0));
    assert_eq!(checksums(&first), checksums(&second));
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str], env: Option<&str>, out: &Path| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_hlv"));
        c.args(["netgen", "--nodes", "50"]).args(extra).arg("--out").arg(out).env_remove("HLV_SEED");
        if let Some(v) = env {
            c.env("HLV_SEED", v);
        }
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        json(&out.join("manifest.json"))["seed"].clone()
    };
    let s = run(&[], Some("9"), &dir.path().join("env"));
    assert_eq!((s["value"].as_u64(), s["source"].as_str()), (Some(9), Some("env")));
    let s = run(&["--seed", "5"], Some("9"), &dir.path().join("flag"));
    assert_eq!((s["value"].as_u64(), s["source"].as_str()), (Some(5), Some("flag")));
    let s = run(&[], None, &dir.path().join("default"));
    assert_eq!((s["value"].as_u64(), s["source"].as_str()), (Some(42), Some("default")));
}

#[test]
fn errors_exit_with_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = hlv(&["check", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let input = dir.path().join("bad.json");
    fs::write(&input, r#"{"N":1,"M":1,"rbar":[1],"A":[[1]],"B":[[1]]}"#).unwrap();
    let o = hlv(&["check", "--input", input.to_str().unwrap()], &dir.path().join("o1"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`r`"), "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(&input, r#"{"a":[1],"b":[1],"rbar":1,"mew":1}"#).unwrap();
    let o = hlv(&["star", "period", "--E", "3", "--input", input.to_str().unwrap()], &dir.path().join("o2"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mew"));

    // Below the well minimum there is no orbit.
    let o = hlv(&["star", "classify", "--E", "1"], &dir.path().join("o3"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn table_schemas_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [(&[&str], &str, &str); 6] = [
        (&["simulate", "--t-end", "1", "--samples", "3"], "trajectory.csv", "t,x1,v1"),
        (&["average", "--steps", "5", "--tau-end", "0.1"], "averaged.csv", "tau,E,C1"),
        (&["resonance", "--tau-end", "1", "--samples", "5"], "slow.csv", "tau,Q1,Q2,phi1,phi2"),
        (
            &["ensemble", "curves", "--trials", "4", "--mix-step", "0.5"],
            "curves.csv",
            "mix,P_periodic,P_periodic_lo,P_periodic_hi,P_soliton,P_soliton_lo,P_soliton_hi",
        ),
        (&["star", "profile", "--points", "11"], "potential.csv", "q,Phi"),
        (&["netgen", "--nodes", "30"], "degrees.csv", "degree,count"),
    ];
    for (k, (args, file, header)) in cases.iter().enumerate() {
        let out = d.join(k.to_string());
        assert_eq!(hlv(args, &out).status.code(), Some(0), "{args:?}");
        assert_eq!(first_line(&out.join(file)), *header, "{args:?}");
    }
}

#[test]
fn json_and_svg_formats() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("j");
    assert_eq!(hlv(&["star", "profile", "--points", "11", "--format", "json"], &j).status.code(), Some(0));
    assert_eq!(json(&j.join("potential.json")).as_array().unwrap().len(), 11);
    let s = dir.path().join("s");
    assert_eq!(hlv(&["star", "profile", "--points", "11", "--format", "svg"], &s).status.code(), Some(0));
    let svg = fs::read_to_string(s.join("potential.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn resonance_suite_case_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    for (case, verdict) in [("1", "stable"), ("4", "unstable"), ("8", "damped")] {
        let out = dir.path().join(case);
        assert_eq!(hlv(&["resonance", "--case", case, "--tau-end", "1"], &out).status.code(), Some(0));
        assert_eq!(json(&out.join("resonance.json"))["stability"]["verdict"], verdict, "case {case}");
    }
}

#[test]
fn averaging_with_direct_run_writes_bursts() {
    let dir = tempfile::tempdir().unwrap();
    let o = hlv(&["average", "--tau-end", "0.2", "--steps", "10", "--direct"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first_line(&dir.path().join("direct.csv")), "t,q,p,C1,H");
    let b = json(&dir.path().join("bursts.json"));
    assert!(b["bursts"].is_array());
}

#[test]
fn canonical_run_on_a_star_is_symplectic() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hlv(&["canonical", "--x0", "2", "--v0", "1", "--t-end", "5"], dir.path()).status.code(), Some(0));
    let r = json(&dir.path().join("canonical.json"));
    assert_eq!(r["integrator"], "stormer-verlet");
    assert_eq!(r["reduction_valid"], true);
}
