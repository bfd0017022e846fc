use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affect_mtl::checkpoint::Checkpoint;
use affect_mtl::cli::{parse_log, CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE};
use affect_mtl::metrics::macro_f1;
use affect_mtl::synth::{load_split, Split};
use affect_mtl::trainer::predict;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SMALL_SYNTH: &str = "train_count = 120\nval_count = 40\nimage_size = 8\n";
const SMALL_TRAIN: &str =
    "epochs = 3\nbatch_size = 32\nhidden = 16\nfeature_dim = 8\nexp_hidden = 8\nva_hidden = 8\n";

fn ssmtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssmtl"))
        .args(args)
        .env("SSMTL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn synth(dir: &Path, name: &str, config: &str, seed: u64) -> PathBuf {
    let cfg = write(dir, &format!("{name}.synth.txt"), config);
    let out = dir.join(name);
    let o = ssmtl(&[
        "synth",
        "--out",
        p(&out),
        "--config",
        p(&cfg),
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    out
}

fn train(data: &Path, dir: &Path, name: &str, config: &str) -> PathBuf {
    let cfg = write(dir, &format!("{name}.train.txt"), config);
    let out = dir.join(name);
    let o = ssmtl(&[
        "train",
        "--data",
        p(data),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    out
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_is_reproducible_byte_for_byte() {
    let t = TempDir::new().unwrap();
    let a = synth(t.path(), "a", SMALL_SYNTH, 7);
    let b = synth(t.path(), "b", SMALL_SYNTH, 7);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 2 + 120 + 40);
    assert_eq!(ta, tb);
}

#[test]
fn synth_with_zero_counts_writes_header_only_manifests() {
    let t = TempDir::new().unwrap();
    let d = synth(t.path(), "d", "train_count = 0\nval_count = 0\n", 1);
    for split in ["train.csv", "val.csv"] {
        assert_eq!(
            fs::read_to_string(d.join(split)).unwrap().lines().count(),
            1
        );
    }
}

#[test]
fn synth_stats_report_expression_masking_rate() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "s.txt", "val_count = 10\nimage_size = 4\n");
    let out = t.path().join("d");
    let o = ssmtl(&[
        "synth",
        "--out",
        p(&out),
        "--config",
        p(&cfg),
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let train: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(train["split"], "train");
    let rate = train["invalid_exp"].as_f64().unwrap() / train["total"].as_f64().unwrap();
    assert!((rate - 0.4).abs() <= 0.03, "{rate}");

    let s = ssmtl(&["stats", "--data", p(&out)]);
    assert_eq!(s.status.code(), Some(0));
    assert_eq!(String::from_utf8(s.stdout).unwrap(), stdout);
}

#[test]
fn synth_into_unwritable_path_fails() {
    let t = TempDir::new().unwrap();
    let file = write(t.path(), "plain", "x");
    let o = ssmtl(&["synth", "--out", p(&file.join("sub"))]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!o.stderr.is_empty());
}

#[test]
fn invalid_config_and_unknown_flags_are_usage_errors() {
    let t = TempDir::new().unwrap();
    let bad = write(t.path(), "bad.txt", "mask_exp = 1.5\n");
    let o = ssmtl(&[
        "synth",
        "--out",
        p(&t.path().join("d")),
        "--config",
        p(&bad),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(ssmtl(&["train", "--frobnicate"]).status.code(), Some(1));
    let typo = write(t.path(), "typo.txt", "epoch = 3\n");
    let o = ssmtl(&[
        "train",
        "--data",
        p(t.path()),
        "--config",
        p(&typo),
        "--out",
        p(&t.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "d", SMALL_SYNTH, 5);
    let a = train(&data, t.path(), "a", SMALL_TRAIN);
    let b = train(&data, t.path(), "b", SMALL_TRAIN);
    let log = fs::read_to_string(a.join(LOG_FILE)).unwrap();
    assert_eq!(parse_log(&log).unwrap().len(), 3);
    assert_eq!(log, fs::read_to_string(b.join(LOG_FILE)).unwrap());
    assert_eq!(
        fs::read(a.join(CHECKPOINT_FILE)).unwrap(),
        fs::read(b.join(CHECKPOINT_FILE)).unwrap()
    );

    // the resolved config reproduces the run
    let resolved = fs::read_to_string(a.join(CONFIG_FILE)).unwrap();
    assert!(resolved.contains("lr_heads") && resolved.contains("strong_ops"));
    let c = train(&data, t.path(), "c", &resolved);
    assert_eq!(log, fs::read_to_string(c.join(LOG_FILE)).unwrap());
}

#[test]
fn supervised_mode_logs_zero_semi_supervised_terms() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "d", &format!("{SMALL_SYNTH}mask_exp = 0\n"), 6);
    let r = train(&data, t.path(), "r", &format!("{SMALL_TRAIN}mode = MFAR\n"));
    for rep in parse_log(&fs::read_to_string(r.join(LOG_FILE)).unwrap()).unwrap() {
        assert_eq!((rep.loss.l_exp_unsup, rep.loss.l_exp_cons), (0.0, 0.0));
    }
}

#[test]
fn evaluate_prints_an_additive_record() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "d", SMALL_SYNTH, 8);
    let r = train(&data, t.path(), "r", SMALL_TRAIN);
    let o = ssmtl(&[
        "evaluate",
        "--data",
        p(&data),
        "--checkpoint",
        p(&r.join(CHECKPOINT_FILE)),
        "--split",
        "train",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let f = |k: &str| v[k].as_f64().unwrap();
    assert!((f("p_mtl") - (f("p_va") + f("p_exp") + f("p_au"))).abs() <= 1e-12);
    assert_eq!(v["exp_f1"].as_array().unwrap().len(), 8);
    assert_eq!(v["au_f1"].as_array().unwrap().len(), 12);
    assert!(v["ccc_valence"].is_f64() && v["ccc_arousal"].is_f64());
}

#[test]
fn untrained_checkpoint_scores_at_chance() {
    let t = TempDir::new().unwrap();
    let data = synth(
        t.path(),
        "d",
        "train_count = 40\nval_count = 800\nimage_size = 8\nclass_priors = 1,1,1,1,1,1,1,1\n",
        9,
    );
    let r = train(
        &data,
        t.path(),
        "r",
        &SMALL_TRAIN.replace("epochs = 3", "epochs = 0"),
    );
    let ck = r.join(CHECKPOINT_FILE);
    let o = ssmtl(&["evaluate", "--data", p(&data), "--checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p_exp = v["p_exp"].as_f64().unwrap();

    // chance level: the same predictions scored against shuffled gold labels
    let val = load_split(&data, Split::Val).unwrap();
    let params = Checkpoint::load(&ck).unwrap().params;
    let pred: Vec<usize> = predict(&params, &val.images)
        .unwrap()
        .iter()
        .map(|p| p.expression)
        .collect();
    let mut gold: Vec<usize> = val
        .dataset
        .samples
        .iter()
        .map(|s| s.annotations.expression.unwrap() as usize)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trials = 200;
    let chance = (0..trials)
        .map(|_| {
            gold.shuffle(&mut rng);
            macro_f1(&pred, &gold, 8).0
        })
        .sum::<f64>()
        / trials as f64;
    assert!(
        (p_exp - chance).abs() <= 0.05,
        "p_exp {p_exp}, chance {chance}"
    );
}

#[test]
fn evaluate_rejects_missing_and_mismatched_checkpoints() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "d", SMALL_SYNTH, 10);
    let missing = ssmtl(&[
        "evaluate",
        "--data",
        p(&data),
        "--checkpoint",
        p(&t.path().join("none.json")),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let r = train(
        &data,
        t.path(),
        "r",
        &SMALL_TRAIN.replace("epochs = 3", "epochs = 1"),
    );
    let ck = r.join(CHECKPOINT_FILE);
    let mut json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();
    json["config_hash"] = "00".repeat(16).into();
    let tampered = write(t.path(), "tampered.json", &json.to_string());
    let o = ssmtl(&["evaluate", "--data", p(&data), "--checkpoint", p(&tampered)]);
    assert_eq!(o.status.code(), Some(2));

    let other = synth(
        t.path(),
        "big",
        "train_count = 4\nval_count = 4\nimage_size = 10\n",
        1,
    );
    let o = ssmtl(&["evaluate", "--data", p(&other), "--checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape"));
}

#[test]
fn divergence_exits_with_code_three() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "d", SMALL_SYNTH, 11);
    let cfg = write(
        t.path(),
        "hot.txt",
        &format!("{SMALL_TRAIN}lr_base = 1e300\nlr_heads = 1e300\n"),
    );
    let o = ssmtl(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&t.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("epoch 1") && err.contains("batch"), "{err}");
}

#[test]
fn curves_write_one_row_per_epoch() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "d", SMALL_SYNTH, 12);
    let r = train(&data, t.path(), "r", SMALL_TRAIN);
    let csv = t.path().join("curves.csv");
    let o = ssmtl(&["curves", "--log", p(&r.join(LOG_FILE)), "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let header: Vec<&str> = lines[0].split(',').collect();
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), header.len());
        for c in 0..8 {
            let i = header.iter().position(|h| *h == format!("T{c}")).unwrap();
            let v: f64 = cells[i].parse().unwrap();
            assert!((0.0..0.95).contains(&v), "T{c} = {v}");
        }
    }

    let empty = write(t.path(), "empty.jsonl", "");
    let o = ssmtl(&["curves", "--log", p(&empty), "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1);

    let log = fs::read_to_string(r.join(LOG_FILE)).unwrap();
    let corrupt = write(t.path(), "corrupt.jsonl", &format!("{log}not json\n"));
    let o = ssmtl(&["curves", "--log", p(&corrupt), "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}
