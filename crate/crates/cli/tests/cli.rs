use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use v2g_core::eval::Comparison;
use v2g_core::ppo::train::read_report_jsonl;
use v2g_core::{Checkpoint, EvaluationReport};

fn v2g(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2g"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = v2g(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn train(dir: &Path, seed: &str) {
    ok(&[
        "--out",
        dir.to_str().unwrap(),
        "train",
        "--episodes",
        "200",
        "--seed",
        seed,
        "--emit-plot-data",
    ]);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_evaluate_and_transfer() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("train");
    train(&run, "11");

    let text = fs::read_to_string(run.join("report.jsonl")).unwrap();
    let records = read_report_jsonl(&text).unwrap();
    assert_eq!(records.len(), 200);
    assert_eq!(records.last().unwrap().episode, 199);
    let ck = Checkpoint::load(&run.join("checkpoint.json")).unwrap();
    assert_eq!(ck.meta.episode, 200);
    assert_eq!(json(&run.join("config.json"))["meta"]["config_hash"], ck.meta.config_hash.as_str());
    let curve = fs::read_to_string(run.join("plot/training_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 201);
    assert!(run.join("journal.log").exists());

    let ckp = run.join("checkpoint.json");
    let ev = tmp.path().join("eval");
    ok(&["--out", s(&ev), "eval", "--checkpoint", s(&ckp), "--seed", "3", "--markdown", "--emit-plot-data"]);
    let c: Comparison = serde_json::from_value(json(&ev.join("comparison.json"))).unwrap();
    assert_eq!(c.policy.trace.len(), 20);
    assert_eq!(c.policy.soc_violations, 0);
    assert!(c.policy.latency.is_none());
    assert!(fs::read_to_string(ev.join("report.md")).unwrap().contains("| ppo |"));
    for f in ["trace.csv", "baseline_trace.csv", "plot/load_profile.csv", "plot/soc_quantiles.csv"] {
        assert!(ev.join(f).exists(), "{f}");
    }
    let trace = v2g_core::env::read_trace_csv(fs::File::open(ev.join("trace.csv")).unwrap()).unwrap();
    assert_eq!(trace, c.policy.trace);

    let sim = tmp.path().join("sim");
    ok(&["--out", s(&sim), "simulate", "--preset", "res", "--checkpoint", s(&ckp), "--seed", "3"]);
    let r: EvaluationReport = serde_json::from_value(json(&sim.join("report.json"))).unwrap();
    assert_eq!(r.policy, "ppo");
    assert_eq!(r.trace.len(), 20);

    let tf = tmp.path().join("transfer");
    ok(&["--out", s(&tf), "transfer", "--checkpoint", s(&ckp), "--targets", "weekly,res", "--markdown"]);
    let summary = json(&tf.join("transfer.json"));
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["slots"], 168);
    let weekly = fs::read_to_string(tf.join("weekly/trace.csv")).unwrap();
    assert_eq!(weekly.lines().count(), 169);
    assert!(tf.join("res/comparison.json").exists());
    assert!(tf.join("transfer.md").exists());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&a, "5");
    train(&b, "5");
    for f in ["report.jsonl", "checkpoint.json", "summary.json", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_picks_up_the_episode_count() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    train(&first, "2");
    let second = tmp.path().join("second");
    ok(&[
        "--out",
        s(&second),
        "train",
        "--episodes",
        "300",
        "--seed",
        "2",
        "--resume",
        s(&first.join("checkpoint.json")),
    ]);
    let records = read_report_jsonl(&fs::read_to_string(second.join("report.jsonl")).unwrap()).unwrap();
    assert_eq!(records.len(), 100);
    assert_eq!(records[0].episode, 200);
    assert_eq!(json(&second.join("summary.json"))["first_episode"], 200);
}

#[test]
fn bad_inputs_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.json");
    let out = v2g(&["--out", s(&tmp.path().join("x")), "simulate", "--scenario", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"mode\": \"baseload\"}").unwrap();
    let out = v2g(&["--out", s(&tmp.path().join("y")), "simulate", "--scenario", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    let out = v2g(&["--out", s(&tmp.path().join("z")), "train", "--ppo", "{\"gamma\": 2.0}", "--episodes", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

fn fleet_csv(path: &Path, n: usize) {
    let mut text = String::from("id,capacity_kwh,p_ch_max_kw,p_dis_max_kw,soc,arrival_slot,departure_slot\n");
    for i in 0..n {
        let q = 20.0 + (i % 17) as f64;
        let p = 3.0 + (i % 5) as f64;
        let soc = 0.25 + 0.5 * ((i * 37) % 100) as f64 / 100.0;
        writeln!(text, "{i},{q},{p},{},{soc},18,8", -p).unwrap();
    }
    fs::write(path, text).unwrap();
}

fn allocation(dir: &Path) -> Vec<(u32, f64)> {
    let mut r = csv::Reader::from_path(dir.join("allocation.csv")).unwrap();
    r.records()
        .map(|row| {
            let row = row.unwrap();
            (row[1].parse().unwrap(), row[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn allocate_splits_the_command() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one.csv");
    fs::write(
        &one,
        "id,capacity_kwh,p_ch_max_kw,p_dis_max_kw,soc,arrival_slot,departure_slot\n7,24,6,-6,0.5,18,8\n",
    )
    .unwrap();
    let d = tmp.path().join("a1");
    let out = ok(&["--out", s(&d), "allocate", "--fleet", s(&one), "--power", "4"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("kappa"));
    let rows = allocation(&d);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].0, 7);
    assert!((rows[0].1 - 4.0).abs() < 1e-12);

    let many = tmp.path().join("many.csv");
    fleet_csv(&many, 1000);
    let d = tmp.path().join("a0");
    ok(&["--out", s(&d), "allocate", "--fleet", s(&many), "--power", "0"]);
    assert!(allocation(&d).iter().all(|(_, p)| *p == 0.0));

    for power in ["1234.5", "-987.25"] {
        let d = tmp.path().join(format!("a{power}"));
        ok(&["--out", s(&d), "allocate", "--fleet", s(&many), "--power", power]);
        let total: f64 = allocation(&d).iter().map(|(_, p)| p).sum();
        let want: f64 = power.parse().unwrap();
        assert!((total - want).abs() <= 1e-9 * want.abs().max(1.0), "{total} vs {want}");
        let summary = json(&d.join("summary.json"));
        assert!(summary["residual_kw"].as_f64().unwrap().abs() <= 1e-9);
    }

    let d = tmp.path().join("ax");
    let out = v2g(&["--out", s(&d), "allocate", "--fleet", s(&many), "--power", "1e7"]);
    assert_eq!(out.status.code(), Some(3));

    let d = tmp.path().join("ah");
    let out = v2g(&["--out", s(&d), "allocate", "--fleet", s(&many), "--power", "10", "--hour", "12"]);
    assert_eq!(out.status.code(), Some(3), "nobody is parked at noon");
}

#[test]
fn presets_print_valid_json() {
    for name in ["baseload", "res", "weekly-res", "large-scale", "ppo-desk", "ppo-reference"] {
        let out = ok(&["preset", name]);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v.is_object(), "{name}");
    }
    let out = ok(&["preset", "weekly", "--n-evs", "80"]);
    let spec: v2g_core::EpisodeSpec = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(spec.fleet.n_evs, 80);
    assert_eq!(spec.length_slots, 168);
}
