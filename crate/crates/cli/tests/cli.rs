use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clgbn::dataset::{compute_deltas, write_table};
use clgbn::synthetic::{reference_network, synthetic_table};
use clgbn::TreatmentCoding;
use serde_json::Value;

fn clgbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clgbn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = clgbn(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(rows: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let m = reference_network();
        fs::write(dir.path().join("model.json"), m.to_json_string()).unwrap();
        let t = synthetic_table(&m, rows, 11).unwrap();
        write_table(&t, fs::File::create(dir.path().join("visits.csv")).unwrap(), b',').unwrap();
        compute_deltas(&t, TreatmentCoding::Binary)
            .write_csv(fs::File::create(dir.path().join("deltas.csv")).unwrap(), b',')
            .unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_twice_gives_identical_files() {
    let f = Fixture::new(10);
    for run in ["a", "b"] {
        let out = f.path(run);
        ok(&["simulate", "--model", &f.path("model.json"), "-n", "100", "--seed", "1", "--out", &out]);
    }
    let a = fs::read(f.out("a").join("simulated.csv")).unwrap();
    let b = fs::read(f.out("b").join("simulated.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 101);
}

#[test]
fn every_run_records_its_config() {
    let f = Fixture::new(10);
    let out = f.path("o");
    ok(&["simulate", "--model", &f.path("model.json"), "-n", "5", "--out", &out]);
    let cfg = json(&f.out("o").join("run_config.json"));
    assert!(cfg["seed"].as_u64().is_some());
    assert_eq!(cfg["command"]["simulate"]["rows"], 5);
    // The recorded seed replays the run.
    let seed = cfg["seed"].as_u64().unwrap().to_string();
    let again = f.path("p");
    ok(&["simulate", "--model", &f.path("model.json"), "-n", "5", "--seed", &seed, "--out", &again]);
    assert_eq!(
        fs::read(f.out("o").join("simulated.csv")).unwrap(),
        fs::read(f.out("p").join("simulated.csv")).unwrap()
    );
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(clgbn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(clgbn(&["average"]).status.code(), Some(2));
    let f = Fixture::new(10);
    let out = f.path("o");
    let o = clgbn(&["query", "--model", &f.path("model.json"), "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_three_with_the_diagnostic() {
    let f = Fixture::new(10);
    let out = f.path("o");
    let o = clgbn(&["learn", "--input", &f.path("missing.csv"), "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    let o = clgbn(&[
        "query", "--model", &f.path("model.json"), "--event", "Growth=Great", "--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Great"));
}

#[test]
fn numerical_errors_exit_four() {
    let f = Fixture::new(10);
    let constant = f.path("constant.csv");
    fs::write(&constant, "a,b\n1,2\n1,3\n1,5\n").unwrap();
    let out = f.path("o");
    let o = clgbn(&["corrnet", "--input", &constant, "--format", "deltas", "--out", &out]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn query_and_expectation_write_json() {
    let f = Fixture::new(10);
    let out = f.path("q");
    ok(&[
        "query", "--model", &f.path("model.json"), "--samples", "10000", "--seed", "3",
        "--evidence", "Treatment=treated", "--event", "Growth=Good", "--out", &out,
    ]);
    let q = json(&f.out("q").join("query.json"));
    assert_eq!(q["kind"], "probability");
    assert_eq!(q["result"]["outcome"], "estimated");
    let p = q["result"]["estimate"].as_f64().unwrap();
    assert!((p - 0.5).abs() < 0.05, "{p}");

    let out = f.path("e");
    ok(&[
        "query", "--model", &f.path("model.json"), "--seed", "3", "--expect", "dT", "--out", &out,
    ]);
    let e = json(&f.out("e").join("query.json"));
    let mean = e["result"]["mean"].as_f64().unwrap();
    assert!((mean - 5.0).abs() < 0.1, "{mean}");

    let out = f.path("none");
    ok(&[
        "query", "--model", &f.path("model.json"), "--seed", "3", "--samples", "100",
        "--evidence", "dT>=100", "--event", "Growth=Good", "--out", &out,
    ]);
    let n = json(&f.out("none").join("query.json"));
    assert_eq!(n["result"]["outcome"], "no-matches");
}

#[test]
fn intervene_writes_mutilated_model_and_query() {
    let f = Fixture::new(10);
    let out = f.path("i");
    ok(&[
        "intervene", "--model", &f.path("model.json"), "--node", "dANB", "--value", "0",
        "--event", "Growth=Good", "--evidence", "Treatment=treated", "--seed", "5", "--out", &out,
    ]);
    let m = json(&f.out("i").join("intervened_model.json"));
    let arcs = m["arcs"].as_array().unwrap();
    assert!(arcs.iter().all(|a| a["to"] != "dANB"));
    let q = json(&f.out("i").join("query.json"));
    let p = q["result"]["estimate"].as_f64().unwrap();
    assert!((p - 0.5).abs() < 0.05, "{p}");
}

#[test]
fn learning_pipeline_from_longitudinal_input() {
    let f = Fixture::new(400);
    let input = f.path("visits.csv");

    let out = f.path("corr");
    ok(&["corrnet", "--input", &input, "--out", &out]);
    assert_eq!(
        listing(&f.out("corr")),
        ["correlation_matrix.csv", "correlation_network.dot", "correlation_network.json", "run_config.json"]
    );

    let out = f.path("learn");
    ok(&["learn", "--input", &input, "--seed", "1", "--out", &out]);
    let trace = fs::read_to_string(f.out("learn").join("search_trace.jsonl")).unwrap();
    assert!(trace.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    let g = json(&f.out("learn").join("network.json"));
    assert!(g["arcs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a["from"] == "dT" && a["to"] == "Growth"));

    let out = f.path("avg");
    ok(&["average", "--input", &input, "--B", "10", "--seed", "2", "--threshold", "0.5", "--out", &out]);
    let c = json(&f.out("avg").join("consensus.json"));
    assert_eq!(c["threshold"], 0.5);
    assert_eq!(c["replicates_requested"], 10);
    let dot = fs::read_to_string(f.out("avg").join("consensus.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(f.out("avg").join("arc_strengths.csv").exists());

    // A consensus file doubles as a structure for `fit`.
    let graph = f.out("avg").join("consensus.json");
    let out = f.path("fit");
    ok(&[
        "fit", "--input", &f.path("deltas.csv"), "--format", "deltas",
        "--graph", graph.to_str().unwrap(), "--out", &out,
    ]);
    let reg = fs::read_to_string(f.out("fit").join("regression.csv")).unwrap();
    assert!(reg.starts_with("node,configuration,term,value"));
}

#[test]
fn cv_and_subgroups_produce_reports() {
    let f = Fixture::new(300);
    let input = f.path("deltas.csv");
    let out = f.path("cv");
    ok(&[
        "cv", "--input", &input, "--format", "deltas", "--learner", "single", "--folds", "5",
        "--seed", "4", "--out", &out,
    ]);
    let r = json(&f.out("cv").join("cv_report.json"));
    assert_eq!(r["folds"], 5);
    let summary = fs::read_to_string(f.out("cv").join("cv_summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("dANB,predictive_correlation,")));
    assert!(summary.lines().any(|l| l.starts_with("Growth,classification_error,")));

    let out = f.path("sub");
    ok(&["subgroups", "--input", &input, "--format", "deltas", "--B", "5", "--seed", "4", "--out", &out]);
    let files = listing(&f.out("sub"));
    assert!(files.contains(&"subgroup_treated.json".to_string()), "{files:?}");
    assert!(files.contains(&"subgroup_untreated.dot".to_string()), "{files:?}");
}

#[test]
fn adjust_subtracts_atlas_references() {
    let f = Fixture::new(20);
    let atlas = f.path("atlas.csv");
    let mut body = String::from("feature,age,value\n");
    for feat in clgbn::synthetic::FEATURES {
        body.push_str(&format!("{feat},0,0\n{feat},30,30\n"));
    }
    fs::write(&atlas, body).unwrap();
    let out = f.path("adj");
    ok(&["adjust", "--input", &f.path("visits.csv"), "--atlas", &atlas, "--out", &out]);
    let adjusted = fs::read_to_string(f.out("adj").join("adjusted.csv")).unwrap();
    let original = fs::read_to_string(f.path("visits.csv")).unwrap();
    assert_eq!(adjusted.lines().count(), original.lines().count());
    assert_ne!(adjusted, original);
}

#[test]
fn outputs_stay_inside_the_output_directory() {
    let f = Fixture::new(200);
    let out = f.path("nested/out");
    ok(&[
        "average", "--input", &f.path("deltas.csv"), "--format", "deltas", "--B", "4",
        "--seed", "1", "--out", &out,
    ]);
    let mut top = listing(f.dir.path());
    top.sort();
    assert_eq!(top, ["deltas.csv", "model.json", "nested", "visits.csv"]);
    assert_eq!(listing(&f.out("nested")), ["out"]);
}
