use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use privloc_cli::manifest::{manifest_path, RunManifest};

fn privloc(args: &[&str]) -> Output {
    privloc_env(args, None)
}

fn privloc_env(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_privloc"));
    cmd.args(args).env_remove("PRIVLOC_SEED").env_remove("RUST_LOG");
    if let Some(s) = seed_env {
        cmd.env("PRIVLOC_SEED", s);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = privloc(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_manifest(artifact: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(manifest_path(artifact)).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["mine", "dataset", "train", "eval", "localize", "agree", "gradcheck", "synth"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    ok(&["train", "--help"]);

    let out = privloc(&["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
    let out = privloc(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"), "usage lists subcommands");
    assert_eq!(privloc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(privloc(&["train", "--epochs", "many"]).status.code(), Some(1));
    assert_eq!(
        privloc(&["train", "--data", "x.c2s", "--experiment", "L_400", "--out", "m.bin"]).status.code(),
        Some(1)
    );
    assert_eq!(privloc(&["--config", "/nonexistent/cfg", "gradcheck"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = privloc(&[
        "train",
        "--data",
        s(&dir.path().join("missing.c2s")),
        "--experiment",
        "multi_head",
        "--out",
        s(&dir.path().join("m.bin")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());

    let bad = dir.path().join("r.csv");
    std::fs::write(&bad, "who,what\n").unwrap();
    assert_eq!(privloc(&["agree", "--ratings", s(&bad)]).status.code(), Some(2));
}

#[test]
fn mine_writes_samples_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir_all(&src).unwrap();
    std::fs::write(
        src.join("Geo.java"),
        "class Geo {
    void locate(String p) {
        Location loc = lm.getLastKnownLocation(p);
        show(loc);
    }
    void show(Location loc) {
        view.setText(loc.toString());
    }
}
",
    )
    .unwrap();
    let apis = dir.path().join("apis.txt");
    std::fs::write(&apis, "# location\nandroid.location.LocationManager.getLastKnownLocation\n").unwrap();
    let out = dir.path().join("mined.c2s");
    ok(&["mine", "--project", s(&src), "--apis", s(&apis), "--out", s(&out)]);

    let samples = privloc::dataset::load_c2s(&out).unwrap();
    assert_eq!(samples.len(), 1);
    // a chain of two methods; the third hop is empty
    let sizes: Vec<bool> = samples[0].hops.iter().map(|h| h.is_empty()).collect();
    assert_eq!(sizes, vec![false, false, true]);
    assert!(samples[0].label.is_none());

    let m = read_manifest(&out);
    assert_eq!(m.command, "mine");
    assert_eq!(m.outputs, vec![s(&out).to_string()]);
    assert_eq!(m.config["direction"], "callees");
    assert!(m.seed.is_none());

    // labels attach by id
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, format!("id,label\n{},yes\n", samples[0].id)).unwrap();
    ok(&["mine", "--project", s(&src), "--apis", s(&apis), "--out", s(&out), "--labels", s(&labels)]);
    assert_eq!(privloc::dataset::load_c2s(&out).unwrap()[0].label, Some(true));
}

struct Synth {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn synth(n: &str, extra: &[&str]) -> Synth {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("synth");
    let mut args = vec!["synth", "--n", n, "--out-dir", s(&root)];
    args.extend_from_slice(extra);
    ok(&args);
    Synth { _dir: dir, root }
}

#[test]
fn seed_resolution_order() {
    let flag = synth("12", &["--seed", "3"]);
    let samples = |p: &Path| std::fs::read(p.join("samples.c2s")).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let from_env = dir.path().join("env");
    let out = privloc_env(&["synth", "--n", "12", "--out-dir", s(&from_env)], Some("3"));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(samples(&flag.root), samples(&from_env));

    // config file beats the environment, flags beat the config file
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# synth settings\nseed = 3\nn = 12\n").unwrap();
    let from_cfg = dir.path().join("cfg");
    let out = privloc_env(&["--config", s(&cfg), "synth", "--out-dir", s(&from_cfg)], Some("99"));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(samples(&flag.root), samples(&from_cfg));
    assert_eq!(read_manifest(&from_cfg).seed, Some(3));

    let overridden = dir.path().join("flag");
    ok(&["--config", s(&cfg), "synth", "--seed", "4", "--out-dir", s(&overridden)]);
    assert_ne!(samples(&flag.root), samples(&overridden));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "seed = three\n").unwrap();
    assert_eq!(privloc(&["--config", s(&bad), "synth", "--out-dir", s(&overridden)]).status.code(), Some(1));
    let out = privloc_env(&["synth", "--out-dir", s(&overridden)], Some("x"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_dataset_train_eval_localize() {
    let sy = synth("40", &["--seed", "2"]);
    let root = &sy.root;
    assert!(root.join("src").is_dir());
    let truth = std::fs::read_to_string(root.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 41);

    let split = root.join("split");
    ok(&["dataset", "--data", s(&root.join("samples.c2s")), "--out-dir", s(&split), "--embed-epochs", "1", "--embed-size", "4"]);
    for f in ["train.c2s", "val.c2s", "test.c2s", "vocab.tsv", "embeddings.bin", "manifest.json"] {
        assert!(split.join(f).is_file(), "{f}");
    }
    let sizes: Vec<usize> = ["train", "val", "test"]
        .iter()
        .map(|p| privloc::dataset::load_c2s(&split.join(format!("{p}.c2s"))).unwrap().len())
        .collect();
    assert_eq!(sizes, vec![32, 4, 4]);

    let cfg = root.join("train.cfg");
    std::fs::write(&cfg, "epochs = 2\nembed_size = 4\nfc-hidden = 4\nlr = 0.005\nembed-epochs = 1\nhead-mode = weighted_context\n").unwrap();
    let model = root.join("model.bin");
    let metrics = root.join("metrics.json");
    let train = |metrics: &Path| {
        ok(&[
            "--config",
            s(&cfg),
            "train",
            "--data",
            s(&root.join("samples.c2s")),
            "--experiment",
            "multi_head",
            "--seed",
            "2",
            "--out",
            s(&model),
            "--metrics",
            s(metrics),
        ]);
        serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(metrics).unwrap()).unwrap()
    };
    let m1 = train(&metrics);
    for key in ["accuracy", "precision", "recall", "f1", "confusion_matrix", "history", "best_epoch"] {
        assert!(m1.get(key).is_some(), "{key}");
    }
    assert_eq!(m1["history"].as_array().unwrap().len(), 2);
    let again = train(&root.join("metrics2.json"));
    assert_eq!(m1["history"], again["history"]);

    let man = read_manifest(&model);
    assert_eq!(man.command, "train");
    assert_eq!(man.seed, Some(2));
    assert_eq!(man.config["epochs"], 2);
    assert_eq!(man.config["head-mode"], "weighted_context");
    assert_eq!(man.config["batch-size"], 8);
    assert!(manifest_path(&metrics).is_file());

    // eval on stdout
    let out = ok(&["eval", "--model", s(&model), "--data", s(&split.join("test.c2s")), "--seed", "2"]);
    let ev: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = ev["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // localize one positive sample
    let id = truth
        .lines()
        .skip(1)
        .find(|l| l.split(',').nth(1) == Some("1"))
        .unwrap()
        .split(',')
        .next()
        .unwrap();
    let loc = |fmt: &str| {
        ok(&[
            "localize",
            "--model",
            s(&model),
            "--sample",
            s(&root.join("samples.c2s")),
            "--id",
            id,
            "--src",
            s(&root.join("src")),
            "--format",
            fmt,
            "--seed",
            "2",
        ])
        .stdout
    };
    let text = String::from_utf8(loc("text")).unwrap();
    assert!(text.contains(">> [w="), "{text}");
    let json: serde_json::Value = serde_json::from_slice(&loc("json")).unwrap();
    assert_eq!(json["hops"].as_array().unwrap().len(), 3);
    assert!(String::from_utf8(loc("html")).unwrap().contains("<mark"));
    let out = privloc(&["localize", "--model", s(&model), "--sample", s(&root.join("samples.c2s")), "--src", s(&root.join("src"))]);
    assert_eq!(out.status.code(), Some(1), "several samples need --id");
    let out = privloc(&[
        "localize", "--model", s(&model), "--sample", s(&root.join("samples.c2s")), "--id", id, "--src", s(&root.join("src")), "--format", "pdf",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn agree_reports_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ratings.csv");
    std::fs::write(&csv, "item,rater,label\nA,r1,yes\nA,r2,yes\nA,r3,no\nB,r1,no\nB,r2,no\nB,r3,no\n").unwrap();
    let out = dir.path().join("agree.json");
    ok(&["agree", "--ratings", s(&csv), "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((v["items"].as_u64(), v["raters"].as_u64()), (Some(2), Some(3)));
    assert!((v["cases"]["best_case"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!(v["fleiss_kappa"].is_f64());
    assert!(manifest_path(&out).is_file());

    let k = ok(&["agree", "--ratings", s(&csv), "--stats", "kappa"]);
    let k: f64 = serde_json::from_slice(&k.stdout).unwrap();
    assert!((k - v["fleiss_kappa"].as_f64().unwrap()).abs() < 1e-15);
    assert_eq!(privloc(&["agree", "--ratings", s(&csv), "--stats", "median"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--seeds", "2"]);
    let v: privloc_cli::GradcheckSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.passed);
    assert_eq!(v.ops.len(), 14);
    assert_eq!(v.full_graph.len(), 3);
}
