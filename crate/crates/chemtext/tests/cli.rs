use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chemtext"));
    c.env_remove("CHEMTEXT_OUT").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn dataset(dir: &Path) -> PathBuf {
    let frags = ["C", "CC", "O", "N", "c1ccccc1", "Cl", "C(=O)", "CO"];
    let mut text = String::from("name,smiles,logs\n");
    for i in 0..60 {
        let s: String = (0..(i % 5 + 1)).map(|k| frags[(i * 3 + k * 5) % frags.len()]).collect();
        let y = 1.0 - (i % 9) as f64 * 0.9;
        text.push_str(&format!("m{i},{s}{},{y}\n", "C".repeat(i / 8)));
    }
    let p = dir.join("tiny.csv");
    fs::write(&p, text).unwrap();
    p
}

const DESIGN: [&str; 16] = [
    "--labels", "logs", "--arch", "cnn-gru", "--em", "4", "--conv", "4", "--rnn1", "4", "--rnn2", "4", "--epochs",
    "3", "--patience", "1",
];

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--precision", "16", "encode", "--dataset", "x.csv"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["--out-dir", out.to_str().unwrap(), "encode", "--dataset", "/no/such/file.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let data = dataset(dir.path());
    let o = run(&[
        "--out-dir",
        out.to_str().unwrap(),
        "explain",
        "--dataset",
        data.to_str().unwrap(),
        "--base",
        "/no/such/base.model",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/base.model"));
    // on-grid runs refuse widths between grid points
    let o = run(&["--out-dir", out.to_str().unwrap(), "train", "--dataset", data.to_str().unwrap()]
        .into_iter()
        .chain(DESIGN)
        .collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn encode_reports_drops_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    fs::write(&p, "smiles,y\nCCO,1\nC1CC,2\nc1ccccc1,3\n").unwrap();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        ok(&["--out-dir", out.to_str().unwrap(), "encode", "--dataset", p.to_str().unwrap()]);
    }
    assert_eq!(read(dir.path().join("a/vocab.tsv")), read(dir.path().join("b/vocab.tsv")));
    let stats: serde_json::Value = serde_json::from_slice(&read(dir.path().join("a/encoding.json"))).unwrap();
    assert_eq!(stats["load"]["accepted"], 2);
    assert_eq!(stats["load"]["dropped_invalid"], 1);
    assert_eq!(stats["encoded_length"], 270);
    let encoded = String::from_utf8(read(dir.path().join("a/encoded.csv"))).unwrap();
    assert_eq!(encoded.lines().count(), 3);
    assert!(encoded.lines().skip(1).all(|l| l.rsplit(',').next().unwrap().split(' ').count() == 270));
}

#[test]
fn training_is_reproducible_from_seed_and_from_written_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|s| dir.path().join(s)).collect();
    for out in &outs {
        let mut args = vec![
            "--seed",
            "7",
            "--precision",
            "64",
            "--off-grid",
            "--out-dir",
            out.to_str().unwrap(),
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--folds",
            "2",
        ];
        args.extend(DESIGN);
        ok(&args);
    }
    let files = ["cv_report.json", "splits.json", "history_fold0.csv", "history_fold1.csv", "fold0.model", "fold1.model"];
    for f in files {
        assert_eq!(read(outs[0].join(f)), read(outs[1].join(f)), "{f} differs");
    }
    let replay = dir.path().join("replay");
    let cfg = outs[0].join("config.json");
    ok(&["--config", cfg.to_str().unwrap(), "--out-dir", replay.to_str().unwrap(), "train"]);
    for f in files {
        assert_eq!(read(outs[0].join(f)), read(replay.join(f)), "{f} differs on replay");
    }
    let report: serde_json::Value = serde_json::from_slice(&read(outs[0].join("cv_report.json"))).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 2);

    let model = outs[0].join("fold0.model");
    let o = ok(&[
        "--precision",
        "64",
        "--out-dir",
        dir.path().join("eval").to_str().unwrap(),
        "eval",
        "--dataset",
        data.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rmse"));
    let preds = String::from_utf8(read(dir.path().join("eval/predictions.csv"))).unwrap();
    assert_eq!(preds.lines().count(), 61);

    let ex = dir.path().join("explain");
    let base = ["--precision", "64", "--out-dir", ex.to_str().unwrap(), "explain", "--dataset", data.to_str().unwrap()];
    let mut check = base.to_vec();
    check.extend(["--base", model.to_str().unwrap(), "--identity-mask-check"]);
    let o = ok(&check);
    assert!(String::from_utf8_lossy(&o.stdout).contains("identity mask"));
    let mut full = base.to_vec();
    full.extend(["--base", model.to_str().unwrap(), "--width", "2", "--blocks", "1", "--max-epochs", "2"]);
    ok(&full);
    let attributions = String::from_utf8(read(ex.join("attributions.jsonl"))).unwrap();
    assert_eq!(attributions.lines().count(), 60);
    let first: serde_json::Value = serde_json::from_str(attributions.lines().next().unwrap()).unwrap();
    assert_eq!(first["raw_mask"].as_array().unwrap().len(), 270);
    let summary: serde_json::Value = serde_json::from_slice(&read(ex.join("interpretability.json"))).unwrap();
    assert!(summary["per_character"].is_number() && summary["per_molecule_majority"].is_number());
    assert!(ex.join("explainer.model").exists());
}

#[test]
fn search_ledger_holds_the_seeds_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("hpo");
    let common = [
        "--seed",
        "3",
        "--out-dir",
        out.to_str().unwrap(),
        "hpo",
        "--dataset",
        data.to_str().unwrap(),
        "--labels",
        "logs",
        "--arch",
        "gru",
        "--em",
        "10",
        "--rnn1",
        "8",
        "--rnn2",
        "8",
        "--epochs",
        "2",
        "--patience",
        "1",
    ];
    let mut six = common.to_vec();
    six.extend(["--trials", "6"]);
    ok(&six);
    let ledger = String::from_utf8(read(out.join("trials.jsonl"))).unwrap();
    let trials: Vec<serde_json::Value> = ledger.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(trials.len(), 6);
    assert!(trials.iter().all(|t| t["origin"] == "seed"));
    let em: Vec<u64> = trials.iter().map(|t| t["params"]["em_size"].as_u64().unwrap()).collect();
    assert_eq!(em, vec![40; 6]);

    let mut seven = common.to_vec();
    seven.extend(["--trials", "7"]);
    let o = ok(&seven);
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 resumed"));
    let ledger = String::from_utf8(read(out.join("trials.jsonl"))).unwrap();
    let params: Vec<String> = ledger
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["params"].to_string())
        .collect();
    assert_eq!(params.len(), 7);
    let mut unique = params.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 7);
    let scatter = String::from_utf8(read(out.join("scatter.csv"))).unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&read(out.join("search_report.json"))).unwrap();
    assert_eq!(scatter.lines().count() - 1, summary["completed"].as_u64().unwrap() as usize);

    // a different seed must not extend this ledger
    let mut other = seven.clone();
    other[1] = "4";
    assert_eq!(run(&other).status.code(), Some(1));
}
