use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxformer::config::RunConfig;
use ctxformer_cli::commands::{cmd_train, split_sizes, TrainOptions};

const SMALL: &str = "\
[model]
d_model = 16
h = 2
n_blocks = 3
kernel_sizes = 3, 5, 3
dilations = 1, 1, 2
dropout = 0.1
max_len = 16

[train]
warmup_steps = 10
total_steps = 24
accum_steps = 2
checkpoint_every = 3
keep_last = 3
max_tokens = 120

[decode]
beam_size = 3
max_decode_len = 16

[data]
n_pairs = 200
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ctxformer"));
    c.env_remove("CTXFORMER_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    corpus: PathBuf,
}

fn workspace(extra: &str) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus");
    let config = root.join("small.cfg");
    let text = format!("{SMALL}corpus_dir = {}\n{extra}", corpus.display());
    std::fs::write(&config, text).unwrap();
    Workspace {
        _dir: dir,
        root,
        config,
        corpus,
    }
}

fn gen(ws: &Workspace) {
    ok(&["gen", "--config", s(&ws.config)]);
}

#[test]
fn gen_writes_requested_records_reproducibly() {
    let ws = workspace("");
    let out = ws.root.join("ten");
    let cfg = ws.root.join("ten.cfg");
    std::fs::write(
        &cfg,
        "[data]\nn_pairs = 10\ntrain_ratio = 0.6\nvalid_ratio = 0.2\ntest_ratio = 0.2\n",
    )
    .unwrap();
    ok(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    let count = |name: &str| std::fs::read_to_string(out.join(name)).unwrap().lines().count();
    assert_eq!([count("train.txt"), count("valid.txt"), count("test.txt")], [6, 2, 2]);
    assert_eq!(count("test.src"), 2);
    let first: Vec<Vec<u8>> = ["train.txt", "valid.txt", "test.txt", "test.ref"]
        .iter()
        .map(|n| std::fs::read(out.join(n)).unwrap())
        .collect();
    ok(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    for (n, bytes) in ["train.txt", "valid.txt", "test.txt", "test.ref"].iter().zip(first) {
        assert_eq!(std::fs::read(out.join(n)).unwrap(), bytes, "{n}");
    }
    ok(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&ws.root.join("other")),
        "--seed",
        "5",
    ]);
    assert_ne!(
        std::fs::read(ws.root.join("other/train.txt")).unwrap(),
        std::fs::read(out.join("train.txt")).unwrap()
    );
}

#[test]
fn split_sizes_are_exact_for_divisible_counts() {
    assert_eq!(split_sizes(10_000, [0.8, 0.1, 0.1]), [8000, 1000, 1000]);
    assert_eq!(split_sizes(200, [0.5, 0.25, 0.25]), [100, 50, 50]);
    assert_eq!(split_sizes(7, [1.0, 0.0, 0.0]), [7, 0, 0]);
    for n in [1, 3, 17, 99] {
        assert_eq!(split_sizes(n, [0.8, 0.1, 0.1]).iter().sum::<usize>(), n);
    }
}

#[test]
fn exit_codes_follow_error_kinds() {
    let ws = workspace("");
    let bad_cfg = ws.root.join("bad.cfg");
    std::fs::write(&bad_cfg, "[model]\nwidth = 3\n").unwrap();
    let out = run(&["gen", "--config", s(&bad_cfg), "--out", s(&ws.root.join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
    assert!(!ws.root.join("x").exists());

    let out = run(&[
        "translate",
        "--run",
        s(&ws.root.join("missing")),
        "--input",
        s(&ws.config),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let hyp = ws.root.join("h.txt");
    let reference = ws.root.join("r.txt");
    std::fs::write(&hyp, "a b\nc d\n").unwrap();
    std::fs::write(&reference, "a b\n").unwrap();
    let out = run(&["eval", "--hyp", s(&hyp), "--ref", s(&reference)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('2') && err.contains('1'), "{err}");

    let out = bin()
        .env("CTXFORMER_THREADS", "zero")
        .args(["bench", "--n", "8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
}

#[test]
fn invalid_training_config_leaves_no_output() {
    let ws = workspace("");
    gen(&ws);
    let cfg = ws.root.join("broken.cfg");
    let text = std::fs::read_to_string(&ws.config)
        .unwrap()
        .replace("accum_steps = 2", "accum_steps = 0");
    std::fs::write(&cfg, text).unwrap();
    let run_dir = ws.root.join("run");
    let out = run(&["train", "--config", s(&cfg), "--out", s(&run_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!run_dir.exists());
}

#[test]
fn eval_reports_bleu_extremes() {
    let ws = workspace("");
    let a = ws.root.join("a.txt");
    let b = ws.root.join("b.txt");
    std::fs::write(&a, "the cat sat on the mat\na dog runs in the park\n").unwrap();
    std::fs::write(&b, "one two three four five\nsix seven eight nine ten eleven\n").unwrap();
    let same = ok(&["eval", "--hyp", s(&a), "--ref", s(&a)]);
    assert!(same.contains("bleu=100.0000"), "{same}");
    assert!(same.contains("exact_match=1.0000"));
    let disjoint = ok(&["eval", "--hyp", s(&a), "--ref", s(&b)]);
    let bleu: f64 = disjoint
        .lines()
        .next()
        .unwrap()
        .strip_prefix("bleu=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(bleu < 1.0, "{disjoint}");
    assert!(disjoint.contains("exact_match=0.0000"));
}

#[test]
fn bench_table_lists_every_layer() {
    let out = ok(&["bench", "--n", "16,32", "--d", "16", "--f", "3", "--repeats", "1"]);
    for layer in [
        "self_attention",
        "recurrent",
        "convolution",
        "depthwise_separable_convolution",
    ] {
        assert!(out.contains(layer), "{layer} missing from\n{out}");
    }
}

#[test]
fn train_translate_probe_and_metrics_on_a_small_run() {
    let ws = workspace("");
    gen(&ws);
    let run_dir = ws.root.join("run");
    let report = ok(&["train", "--config", s(&ws.config), "--out", s(&run_dir)]);
    assert!(report.contains("step=12"), "{report}");
    let metrics = std::fs::read_to_string(run_dir.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 24 / 2);
    for (i, line) in metrics.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 7);
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(cols[2].parse::<f64>().unwrap().is_finite());
    }
    let ckpts = std::fs::read_dir(run_dir.join("checkpoints"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ckpt"))
        .count();
    assert_eq!(ckpts, 3);
    assert!(run_dir.join("average.ckpt").exists() && run_dir.join("final.ckpt").exists());

    let empty = ws.root.join("empty.src");
    std::fs::write(&empty, "").unwrap();
    let out = ok(&[
        "translate",
        "--config",
        s(&ws.config),
        "--run",
        s(&run_dir),
        "--input",
        s(&empty),
    ]);
    assert!(out.is_empty());

    let input = ws.corpus.join("test.src");
    let n = std::fs::read_to_string(&input).unwrap().lines().count();
    let hyp = ws.root.join("hyp.txt");
    ok(&[
        "translate",
        "--config",
        s(&ws.config),
        "--run",
        s(&run_dir),
        "--input",
        s(&input),
        "--out",
        s(&hyp),
    ]);
    assert_eq!(std::fs::read_to_string(&hyp).unwrap().lines().count(), n);
    let threaded = bin()
        .env("CTXFORMER_THREADS", "3")
        .args([
            "translate",
            "--config",
            s(&ws.config),
            "--run",
            s(&run_dir),
            "--input",
            s(&input),
        ])
        .output()
        .unwrap();
    assert_eq!(threaded.stdout, std::fs::read(&hyp).unwrap());

    let report = ok(&[
        "eval",
        "--config",
        s(&ws.config),
        "--run",
        s(&run_dir),
        "--hyp",
        s(&hyp),
        "--ref",
        s(&ws.corpus.join("test.ref")),
        "--tags",
        s(&ws.corpus.join("test.txt")),
    ]);
    assert!(report.contains("pos_acc=") && report.contains("ner_acc="), "{report}");

    let probe = |a: &str, b: &str| {
        ok(&[
            "probe",
            "--config",
            s(&ws.config),
            "--run",
            s(&run_dir),
            "--sentence",
            "anna sees the red dog",
            "--word-a",
            a,
            "--word-b",
            b,
        ])
    };
    let same = probe("dog", "dog");
    for line in same.lines() {
        let v: f64 = line.split('=').nth(1).unwrap().parse().unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{line}");
    }
    let text = probe("red", "dog");
    for prefix in ["embedding=", "self_head:0:0=", "local_conv:0:0="] {
        assert!(text.contains(prefix), "{text}");
    }
    let missing = run(&[
        "probe",
        "--config",
        s(&ws.config),
        "--run",
        s(&run_dir),
        "--sentence",
        "anna sees",
        "--word-a",
        "anna",
        "--word-b",
        "dog",
    ]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn interrupted_training_resumes_onto_the_same_trajectory() {
    let ws = workspace("");
    gen(&ws);
    let mut cfg = RunConfig::load(&ws.config, None).unwrap();
    cfg.out_dir = ws.root.join("full");
    cmd_train(&cfg, &TrainOptions::default()).unwrap();

    cfg.out_dir = ws.root.join("split");
    let first = cmd_train(
        &cfg,
        &TrainOptions {
            stop_after: Some(7),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(first.interrupted);
    let second = cmd_train(
        &cfg,
        &TrainOptions {
            resume: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(second.resumed_from, 6);

    let strip = |dir: &str| -> Vec<String> {
        std::fs::read_to_string(ws.root.join(dir).join("metrics.tsv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once('\t').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip("split"), strip("full"));
    for f in ["final.ckpt", "average.ckpt"] {
        assert_eq!(
            std::fs::read(ws.root.join("split").join(f)).unwrap(),
            std::fs::read(ws.root.join("full").join(f)).unwrap(),
            "{f}"
        );
    }
}
