use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use latent_prune::load_dataset;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latent-prune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, samples: &str) {
    ok(&[
        "synth", "--samples", samples, "--test-size", "100", "--seed", "3", "--out-dir", p(dir),
    ]);
}

#[test]
fn abduce_enumerates_and_drops_unsatisfiable_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.jsonl");
    fs::write(
        &input,
        concat!(
            "{\"label_space\":{\"class_count\":10}}\n",
            "{\"id\":\"a\",\"instances\":[\"a1\",\"a2\"],\"constraint\":{\"theory\":\"sum\",\"target\":8,\"arity\":2}}\n",
            "{\"id\":\"b\",\"instances\":[\"b1\",\"b2\"],\"constraint\":{\"theory\":\"max\",\"target\":9,\"arity\":2}}\n",
            "{\"id\":\"c\",\"instances\":[\"c1\",\"c2\"],\"constraint\":{\"theory\":\"sum\",\"target\":19,\"arity\":2}}\n",
        ),
    )
    .unwrap();
    let out = tmp.path().join("out.jsonl");
    let msg = ok(&["abduce", "--dataset", p(&input), "--out", p(&out)]);
    assert!(msg.contains("1 rejected"), "{msg}");
    let d = load_dataset(&out).unwrap();
    let counts: Vec<usize> = d.samples.iter().map(|s| s.preimages.len()).collect();
    assert_eq!(counts, vec![9, 19]);

    let limited = cli(&["abduce", "--dataset", p(&input), "--out", p(&out), "--max-preimages", "5"]);
    assert_eq!(limited.status.code(), Some(2));
}

#[test]
fn knn_and_prune_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "40");
    let dataset = data.join("dataset.jsonl");
    let emb = data.join("embeddings.csv");

    let edges = tmp.path().join("edges.json");
    ok(&["knn", "--dataset", p(&dataset), "--embeddings", p(&emb), "--k", "2", "--out", p(&edges)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&edges).unwrap()).unwrap();
    assert_eq!(json["edges"].as_array().unwrap().len(), 40 * 3 * 2);
    assert_eq!(json["k"], 2);

    let pruned = tmp.path().join("pruned.jsonl");
    let stats = tmp.path().join("stats.json");
    let inc = tmp.path().join("incidence.json");
    ok(&[
        "prune", "--dataset", p(&dataset), "--embeddings", p(&emb), "--batch-size", "16",
        "--out", p(&pruned), "--stats", p(&stats), "--dump-incidence", p(&inc),
    ]);
    let before = load_dataset(&dataset).unwrap();
    let after = load_dataset(&pruned).unwrap();
    assert_eq!(after.n(), before.n());
    for (a, b) in after.samples.iter().zip(&before.samples) {
        assert!(!a.preimages.is_empty() && a.preimages.len() <= b.preimages.len());
    }
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(stats["batches"].as_array().unwrap().len(), 3);
    assert_eq!(stats["aggregate"]["preimages_after"], after.preimage_count());
    let dumps: serde_json::Value = serde_json::from_str(&fs::read_to_string(&inc).unwrap()).unwrap();
    assert_eq!(dumps.as_array().unwrap().len(), 3);
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"label_space\":{\"class_count\":10}}\n{oops\n").unwrap();
    let out = cli(&["abduce", "--dataset", p(&bad), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.jsonl:2:"));

    let missing = cli(&["eval", "--model", "/nonexistent/model.json", "--test", "/nonexistent/t.csv"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_report_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "30");
    fs::write(
        data.join("cfg.json"),
        r#"{"dataset":"dataset.jsonl","features":"features.csv","embeddings":"embeddings.csv","test":"test.csv","epochs":4,"batch_size":16}"#,
    )
    .unwrap();
    let cfg = data.join("cfg.json");
    let mut runs = Vec::new();
    for (mode, seed) in [("baseline", "0"), ("baseline", "1"), ("frozen", "0"), ("frozen", "1")] {
        let dir = tmp.path().join(format!("{mode}{seed}"));
        ok(&["train", "--config", p(&cfg), "--mode", mode, "--seed", seed, "--out-dir", p(&dir)]);
        for f in ["metrics.csv", "run.json", "model.json", "pruned.jsonl", "audit.jsonl"] {
            assert!(dir.join(f).is_file(), "{mode}{seed}: {f}");
        }
        runs.push(dir);
    }
    let metrics = fs::read_to_string(runs[0].join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);

    // a second identical run reproduces the saved model and pruned data
    let again = tmp.path().join("again");
    ok(&["train", "--config", p(&cfg), "--mode", "frozen", "--seed", "0", "--out-dir", p(&again)]);
    for f in ["model.json", "pruned.jsonl", "audit.jsonl"] {
        assert_eq!(fs::read(runs[2].join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let acc: f64 = ok(&["eval", "--model", p(&runs[2].join("model.json")), "--test", p(&data.join("test.csv"))])
        .trim()
        .parse()
        .unwrap();
    let last = metrics_last_accuracy(&runs[2].join("metrics.csv"));
    assert_eq!(acc, last);

    let out = tmp.path().join("report");
    let mut args = vec!["report", "--out-dir", p(&out), "--runs"];
    args.extend(runs.iter().map(|r| p(r)));
    let broken = tmp.path().join("empty-run");
    fs::create_dir(&broken).unwrap();
    args.push(p(&broken));
    let table = ok(&args);
    assert!(table.starts_with("mode,runs,accuracy_mean"));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("baseline,2,"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["skipped"].as_array().unwrap().len(), 1);
}

fn metrics_last_accuracy(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    text.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap()
}

#[test]
fn oracle_check_agrees() {
    for coupling in ["implied", "equality"] {
        let msg = ok(&["oracle-check", "--seeds", "50", "--coupling", coupling]);
        assert!(msg.starts_with("50/50"), "{msg}");
    }
}
