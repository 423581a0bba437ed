use std::fs;
use std::process::Command;

use vfgl_core::metrics::{impv, read_results};
use vfgl_lab::compare::{check_consistent, compare_methods};
use vfgl_lab::{run_experiment, RunConfig};

fn small(method: &str) -> RunConfig {
    RunConfig::parse(&format!(
        "run_id = {method}\nmanipulation = {method}\nattack = fga\nseeds = 0,1\ntargets = 8\nshadow_epochs = 60\n"
    ))
    .unwrap()
}

#[test]
fn persisted_config_replays_identically() {
    let out = tempfile::tempdir().unwrap();
    let cfg = small("na2");
    let runs = run_experiment(&cfg, out.path(), 2).unwrap();
    let saved = RunConfig::load(out.path().join("na2/config.txt")).unwrap();
    assert_eq!(saved, cfg);
    let again = run_experiment(&saved, out.path(), 1).unwrap();
    let rows = read_results(out.path().join("results.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], rows[2]);
    assert_eq!(rows[1], rows[3]);
    for (a, b) in runs.iter().zip(&again) {
        assert_eq!(a.outcomes.len(), b.outcomes.len());
        for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
            assert_eq!((x.target, x.success, &x.flips), (y.target, y.success, &y.flips));
        }
        assert_eq!(a.malicious_queries, 1);
        assert_eq!(a.record.aq, 1.0);
    }
    let plan = fs::read_to_string(out.path().join("na2/seed_0/plan.json")).unwrap();
    let plan: serde_json::Value = serde_json::from_str(&plan).unwrap();
    for key in ["target_path", "candidates", "features", "gamma", "tau"] {
        assert!(plan.get(key).is_some(), "{key}");
    }
    let lines = fs::read_to_string(out.path().join("na2/outcomes.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), runs.iter().map(|r| r.outcomes.len()).sum::<usize>());
    let log = fs::read_to_string(out.path().join("na2/seed_1/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 200);
}

#[test]
fn results_header_matches_schema() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse("run_id = h\nmanipulation = clean\nattack = none\nseeds = 0\n").unwrap();
    run_experiment(&cfg, out.path(), 1).unwrap();
    let text = fs::read_to_string(out.path().join("results.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "run_id,seed,method,attack,defense,K,gamma,tau,delta,clean_acc,asr,impv,aq,cs_malicious,shadow_mse,weight_norm_diff,dr_flag"
    );
}

#[test]
fn embeddings_export_two_rows_per_node() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = small("na2");
    cfg.seeds = vec![0];
    cfg.attack = None;
    cfg.export_embeddings = true;
    run_experiment(&cfg, out.path(), 1).unwrap();
    let path = out.path().join("na2/seed_0/embeddings.csv");
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 300);
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("node,source,e_0,"));
    let first = fs::read(&path).unwrap();
    run_experiment(&cfg, out.path(), 1).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn compare_checks_settings_and_recomputes_cells() {
    let mut other = small("na2");
    other.gamma = 0.1;
    assert!(check_consistent(&[small("clean"), other]).is_err());
    let mut dataset = small("na2");
    dataset.set("dataset", "sbm:200,3,0.05,0.005,32,1").unwrap();
    assert!(check_consistent(&[small("clean"), dataset]).is_err());

    let out = tempfile::tempdir().unwrap();
    let mut twin = small("clean");
    twin.run_id = "clean_twin".into();
    let configs = [small("clean"), small("na2"), twin];
    let rows = compare_methods(&configs, out.path(), 2).unwrap();
    assert_eq!(rows.len(), 3);
    let (clean, na2, twin) = (&rows[0], &rows[1], &rows[2]);
    assert_eq!((clean.asr, clean.aq, clean.clean_acc), (twin.asr, twin.aq, twin.clean_acc));
    assert_eq!(na2.impv, impv(clean.asr, na2.asr));

    // Clean ASR recomputed from the raw outcome stream.
    let raw = fs::read_to_string(out.path().join("clean/outcomes.jsonl")).unwrap();
    let mut per_seed = std::collections::BTreeMap::<u64, (usize, usize)>::new();
    for line in raw.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let e = per_seed.entry(v["seed"].as_u64().unwrap()).or_default();
        e.0 += usize::from(v["success"].as_bool().unwrap());
        e.1 += 1;
    }
    let mean = per_seed.values().map(|&(s, n)| 100.0 * s as f64 / n as f64).sum::<f64>() / per_seed.len() as f64;
    assert!((mean - clean.asr).abs() < 1e-12);
    let summary = fs::read_to_string(out.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("run_id,method,attack,defense,K,seeds,clean_acc,asr,asr_std,impv,aq,cs_malicious"));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vfgl-lab"))
}

#[test]
fn cli_exit_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.conf");
    fs::write(&good, "manipulation = clean\nattack = none\nseeds = 0\nepochs = 20\n").unwrap();
    let out = dir.path().join("out");

    let ok = cli().args(["run", "--config"]).arg(&good).arg("--out").arg(&out).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(out.join("good/config.txt").exists());

    let bad_value = cli()
        .args(["run", "--config"])
        .arg(&good)
        .args(["--gamma", "2"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(bad_value.code(), Some(2));

    let missing = cli().args(["run", "--config", "/definitely/not/here.conf"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));
    let usage = cli().args(["run"]).status().unwrap();
    assert_eq!(usage.code(), Some(2));
    let workers = cli()
        .env("VFGL_WORKERS", "zero")
        .args(["run", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(workers.code(), Some(2));

    let data = dir.path().join("broken");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("nodes.tsv"), "0\t0\t1.0,2.0\n1\t1\t0.5,0.5\n").unwrap();
    fs::write(data.join("edges.tsv"), "0\t7\n").unwrap();
    let runtime = dir.path().join("runtime.conf");
    fs::write(&runtime, format!("dataset = {}\nmanipulation = clean\nattack = none\nseeds = 0\n", data.display())).unwrap();
    let failed = cli().args(["run", "--config"]).arg(&runtime).arg("--out").arg(&out).status().unwrap();
    assert_eq!(failed.code(), Some(1));

    let grad = cli().args(["gradcheck", "--instances", "1"]).output().unwrap();
    assert_eq!(grad.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&grad.stdout).contains("worst"));
}
