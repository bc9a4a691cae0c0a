use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use socdiff::dataset::{load_split, SplitDataset};
use socdiff::training::{load_checkpoint, Graphs};
use tempfile::TempDir;

fn socdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

/// Small synthetic dataset, ingested into `<root>/data`.
fn synth_split(root: &Path, seed: &str) -> PathBuf {
    let raw = root.join("raw");
    let o = socdiff(&[
        "synth",
        "--users",
        "60",
        "--items",
        "40",
        "--items-per-user",
        "8",
        "--friends-per-user",
        "3",
        "--seed",
        seed,
        "--out",
        s(&raw),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = root.join("data");
    let o = socdiff(&[
        "ingest",
        "--ratings",
        s(&raw.join("ratings.txt")),
        "--trust",
        s(&raw.join("trust.txt")),
        "--seed",
        seed,
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--epochs",
        "3",
        "--set",
        "model.dim=16",
        "--set",
        "train.batch_size=64",
    ];
    args.extend_from_slice(extra);
    socdiff(&args)
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope_ratings.txt");
    let o = socdiff(&[
        "ingest",
        "--ratings",
        s(&missing),
        "--trust",
        s(&fixture("trust.txt")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope_ratings.txt"), "{}", stderr(&o));
}

#[test]
fn ingest_writes_split_files_deterministically() {
    let dir = TempDir::new().unwrap();
    let run = |out: &Path, seed: &str| {
        let o = socdiff(&[
            "ingest",
            "--ratings",
            s(&fixture("ratings.txt")),
            "--trust",
            s(&fixture("trust.txt")),
            "--seed",
            seed,
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a, "3");
    run(&b, "3");
    for f in [
        "train.tsv",
        "val.tsv",
        "test.tsv",
        "social.tsv",
        "idmap.tsv",
        "stats.txt",
    ] {
        let fa = fs::read(a.join(f)).unwrap();
        assert_eq!(fa, fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let stats = fs::read_to_string(a.join("stats.txt")).unwrap();
    assert!(stats.contains("n_users=5"), "{stats}");
    assert!(stats.contains("interaction_density=0.9000000000"), "{stats}");
    assert!(stats.contains("relation_density=0.1600000000"), "{stats}");
}

#[test]
fn stats_command_reports_a_split() {
    let dir = TempDir::new().unwrap();
    let data = synth_split(dir.path(), "1");
    let out = dir.path().join("stats");
    let o = socdiff(&["stats", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("n_users=60"));
    assert!(out.join("stats.csv").exists());
}

#[test]
fn gradcheck_passes_and_detects_a_corrupted_adjoint() {
    let dir = TempDir::new().unwrap();
    let o = socdiff(&["gradcheck", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = String::from_utf8_lossy(&o.stdout).into_owned();
    for loss in ["l_diff", "l_bpr", "l_cl", "joint"] {
        assert!(
            report.lines().any(|l| l.starts_with(&format!("{loss},"))),
            "{report}"
        );
    }
    let o = socdiff(&["gradcheck", "--inject-adjoint-fault", "--out", s(dir.path())]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_owned()).collect()
}

#[test]
fn training_is_repeatable_and_ablation_zeroes_the_diffusion_loss() {
    let dir = TempDir::new().unwrap();
    let data = synth_split(dir.path(), "2");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let o = train(&data, out, &["--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let log = fs::read_to_string(a.join("epochs.csv")).unwrap();
    assert_eq!(log, fs::read_to_string(b.join("epochs.csv")).unwrap());
    assert_eq!(log.lines().count(), 4);
    assert!(column(&log, "l_diff")
        .iter()
        .all(|v| v.parse::<f64>().unwrap() > 0.0));
    assert!(a.join("timing.csv").exists());
    assert!(a.join("checkpoint").exists());

    let o = train(&data, &c, &["--seed", "4", "--ablation", "no_sgm"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(c.join("epochs.csv")).unwrap();
    assert!(column(&log, "l_diff")
        .iter()
        .all(|v| v.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn diverging_training_exits_3() {
    let dir = TempDir::new().unwrap();
    let data = synth_split(dir.path(), "5");
    let o = train(
        &data,
        &dir.path().join("out"),
        &["--set", "train.learning_rate=1e300"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

/// Brute-force Recall@K and NDCG@K from the checkpoint's embeddings.
fn oracle_metrics(
    data: &SplitDataset,
    users: &socdiff::Matrix,
    items: &socdiff::Matrix,
    k: usize,
) -> (f64, f64) {
    let train = SplitDataset::items_by_user(&data.train, data.n_users);
    let val = SplitDataset::items_by_user(&data.val, data.n_users);
    let test = SplitDataset::items_by_user(&data.test, data.n_users);
    let (mut recall, mut ndcg, mut counted) = (0.0, 0.0, 0);
    for u in 0..data.n_users {
        if test[u].is_empty() {
            continue;
        }
        let seen: BTreeSet<usize> = train[u].union(&val[u]).copied().collect();
        let mut ranked: Vec<(f64, usize)> = (0..data.m_items)
            .filter(|i| !seen.contains(i))
            .map(|i| (users.row(u).iter().zip(items.row(i)).map(|(a, b)| a * b).sum(), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let top: Vec<usize> = ranked.iter().take(k).map(|p| p.1).collect();
        let hits: Vec<usize> = (0..top.len()).filter(|&r| test[u].contains(&top[r])).collect();
        recall += hits.len() as f64 / test[u].len() as f64;
        let dcg: f64 = hits.iter().map(|&r| 1.0 / ((r + 2) as f64).log2()).sum();
        let idcg: f64 = (0..test[u].len().min(k))
            .map(|r| 1.0 / ((r + 2) as f64).log2())
            .sum();
        ndcg += dcg / idcg;
        counted += 1;
    }
    (recall / counted as f64, ndcg / counted as f64)
}

#[test]
fn evaluate_matches_the_oracle_and_checks_its_inputs() {
    let dir = TempDir::new().unwrap();
    let data = synth_split(dir.path(), "6");
    let run = dir.path().join("run");
    let o = train(&data, &run, &["--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck_dir = run.join("checkpoint");
    let out = dir.path().join("eval");
    let o = socdiff(&[
        "evaluate",
        "--checkpoint",
        s(&ck_dir),
        "--data",
        s(&data),
        "--phase",
        "test",
        "--ks",
        "5,10",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics_test.csv")).unwrap();
    assert_eq!(csv, String::from_utf8_lossy(&o.stdout));

    let ck = load_checkpoint(&ck_dir).unwrap();
    let split = load_split(&data).unwrap();
    let graphs = Graphs::build(&split).unwrap();
    let (u, i) = ck.model.embeddings(&graphs, &ck.config.train).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for (row, k) in rows.iter().zip([5, 10]) {
        let (r, n) = oracle_metrics(&split, &u, &i, k);
        assert_eq!(*row, format!("{k},{r:.6},{n:.6}"));
    }

    let o = socdiff(&[
        "evaluate",
        "--checkpoint",
        s(&ck_dir),
        "--data",
        s(&data),
        "--phase",
        "train",
    ]);
    assert_eq!(code(&o), 1);

    let other = synth_split(&dir.path().join("other"), "7");
    fs::write(other.join("idmap.tsv"), "user\t0\tx\nitem\t0\ty\n").unwrap();
    fs::write(other.join("train.tsv"), "0\t0\n").unwrap();
    for f in ["val.tsv", "test.tsv", "social.tsv"] {
        fs::write(other.join(f), "").unwrap();
    }
    let o = socdiff(&[
        "evaluate",
        "--checkpoint",
        s(&ck_dir),
        "--data",
        s(&other),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn denoise_writes_one_row_per_user() {
    let dir = TempDir::new().unwrap();
    let data = synth_split(dir.path(), "8");
    let run = dir.path().join("run");
    assert_eq!(code(&train(&data, &run, &[])), 0);
    let out = dir.path().join("den");
    let ck = run.join("checkpoint");
    let args = [
        "denoise",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ];
    let o = socdiff(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("denoised_social.tsv")).unwrap();
    assert_eq!(text.lines().count(), 60);
    assert!(text.lines().all(|l| l.split('\t').count() == 17));
    assert_eq!(code(&socdiff(&args)), 0);
    assert_eq!(text, fs::read_to_string(out.join("denoised_social.tsv")).unwrap());
}

#[test]
fn seed_changes_the_split() {
    let dir = TempDir::new().unwrap();
    let a = synth_split(&dir.path().join("a"), "1");
    let b = synth_split(&dir.path().join("b"), "2");
    assert_ne!(
        fs::read(a.join("train.tsv")).unwrap(),
        fs::read(b.join("train.tsv")).unwrap()
    );
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let o = socdiff(&["gradcheck", "--set", "train.nonsense=1"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
