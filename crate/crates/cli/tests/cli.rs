//! Command behavior: artifacts, error paths, determinism, and overwrite
//! protection, exercised through the library entry point plus one spawn of
//! the real binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> anyhow::Result<()> {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    metaspoof_cli::run(&owned)
}

fn write_tiny_config(path: &Path) {
    fs::write(
        path,
        "[gen-data]\n\
         train_per_class = 20\n\
         eval_per_class = 30\n\
         \n\
         [train]\n\
         epochs = 2\n\
         episodes_per_epoch = 4\n\
         n_way = 3\n\
         k_shot = 2\n\
         query_per_class = 2\n\
         val_bank_size = 4\n\
         hidden_dims = 16\n\
         output_dim = 8\n\
         max_epochs = 3\n\
         lr = 0.001\n\
         \n\
         [adapt-eval]\n\
         repeats = 3\n\
         \n\
         [sweep-shots]\n\
         shots = 2,4\n\
         repeats = 2\n\
         steps = 2\n\
         \n\
         [sweep-steps]\n\
         step_values = 0,2\n\
         repeats = 2\n",
    )
    .unwrap();
}

struct World {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
}

impl World {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        write_tiny_config(&root.join("config.txt"));
        World { _dir: dir, root }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn gen_data(&self) {
        run(&[
            "gen-data",
            "--config",
            &self.path("config.txt"),
            "--out",
            &self.path("data"),
            "--seed",
            "1",
        ])
        .unwrap();
    }

    fn train_protonet(&self) {
        run(&[
            "train",
            "--method",
            "protonet",
            "--config",
            &self.path("config.txt"),
            "--dataset",
            &self.path("data"),
            "--out",
            &self.path("model"),
            "--seed",
            "1",
        ])
        .unwrap();
    }
}

#[test]
fn gen_data_writes_three_csvs_and_metadata() {
    let w = World::new();
    w.gen_data();
    for name in ["train.csv", "eval_seen.csv", "eval_unseen.csv", "metadata.txt", "manifest.txt"] {
        assert!(w.root.join("data").join(name).exists(), "{name} missing");
    }
    let train = fs::read_to_string(w.root.join("data/train.csv")).unwrap();
    // 7 classes x 20 records + header.
    assert_eq!(train.lines().count(), 7 * 20 + 1);
    let meta = fs::read_to_string(w.root.join("data/metadata.txt")).unwrap();
    assert!(meta.contains("seed = 1"));
    assert!(meta.contains("train_per_class = 20"));
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let w = World::new();
    w.gen_data();
    run(&[
        "gen-data",
        "--config",
        &w.path("config.txt"),
        "--out",
        &w.path("data2"),
        "--seed",
        "1",
    ])
    .unwrap();
    for name in ["train.csv", "eval_seen.csv", "eval_unseen.csv"] {
        let a = fs::read(w.root.join("data").join(name)).unwrap();
        let b = fs::read(w.root.join("data2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical-seed runs");
    }
}

#[test]
fn train_reports_missing_dataset_path() {
    let w = World::new();
    let err = run(&[
        "train",
        "--method",
        "protonet",
        "--dataset",
        &w.path("nowhere"),
        "--out",
        &w.path("model"),
    ])
    .unwrap_err();
    assert!(err.to_string().contains("nowhere"), "{err}");
}

#[test]
fn train_writes_roundtrippable_checkpoint_and_full_manifest() {
    let w = World::new();
    w.gen_data();
    w.train_protonet();
    let ckpt = w.root.join("model/protonet.ckpt");
    let params = metaspoof_core::backbone::load_checkpoint(&ckpt).unwrap();
    assert_eq!(params.dims(), &[32, 16, 8]);

    let manifest = fs::read_to_string(w.root.join("model/manifest.txt")).unwrap();
    // Defaults are recorded too.
    for key in ["epochs = 2", "weight_decay = 0.01", "base_lr = 0.000001", "seed = 1", "method = protonet"] {
        assert!(manifest.contains(key), "manifest lacks {key:?}:\n{manifest}");
    }
    let log = fs::read_to_string(w.root.join("model/protonet_train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,mean_loss,val_acc,lr\n"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn adapt_eval_rejects_oversized_k_before_any_work() {
    let w = World::new();
    w.gen_data();
    w.train_protonet();
    let err = run(&[
        "adapt-eval",
        "--method",
        "protonet",
        "--config",
        &w.path("config.txt"),
        "--dataset",
        &w.path("data"),
        "--checkpoint",
        &w.path("model/protonet.ckpt"),
        "--out",
        &w.path("eval"),
        "--k",
        "30",
    ])
    .unwrap_err();
    assert!(err.to_string().contains("k=30"), "{err}");
    assert!(!w.root.join("eval/eers.csv").exists());
}

#[test]
fn adapt_eval_writes_per_repeat_scores_and_is_repeatable() {
    let w = World::new();
    w.gen_data();
    w.train_protonet();
    let args = |out: &str| {
        vec![
            "adapt-eval".to_string(),
            "--method".into(),
            "protonet".into(),
            "--config".into(),
            w.path("config.txt"),
            "--dataset".into(),
            w.path("data"),
            "--checkpoint".into(),
            w.path("model/protonet.ckpt"),
            "--out".into(),
            w.path(out),
            "--k".into(),
            "4".into(),
            "--seed".into(),
            "5".into(),
        ]
    };
    metaspoof_cli::run(&args("eval")).unwrap();
    let eers = fs::read_to_string(w.root.join("eval/eers.csv")).unwrap();
    assert!(eers.starts_with("repeat,eer,support_seed\n"));
    assert_eq!(eers.lines().count(), 4, "3 repeats plus header");
    for r in 0..3 {
        assert!(w.root.join(format!("eval/scores_repeat_{r}.csv")).exists());
    }

    metaspoof_cli::run(&args("eval2")).unwrap();
    let eers2 = fs::read_to_string(w.root.join("eval2/eers.csv")).unwrap();
    assert_eq!(eers, eers2);
}

#[test]
fn sweep_shots_covers_requested_ks_and_respects_force() {
    let w = World::new();
    w.gen_data();
    w.train_protonet();
    let base = vec![
        "sweep-shots".to_string(),
        "--method".into(),
        "protonet".into(),
        "--config".into(),
        w.path("config.txt"),
        "--dataset".into(),
        w.path("data"),
        "--checkpoint".into(),
        w.path("model/protonet.ckpt"),
        "--out".into(),
        w.path("sweep"),
    ];
    metaspoof_cli::run(&base).unwrap();
    let summary = fs::read_to_string(w.root.join("sweep/shots_summary.csv")).unwrap();
    assert!(summary.starts_with("k,mean_eer,std_eer\n"));
    assert!(summary.contains("\n2,"));
    assert!(summary.contains("\n4,"));

    let err = metaspoof_cli::run(&base).unwrap_err();
    assert!(err.to_string().contains("--force"), "{err}");

    let mut forced = base.clone();
    forced.push("--force".into());
    metaspoof_cli::run(&forced).unwrap();
}

#[test]
fn sweep_steps_rejects_protonet() {
    let w = World::new();
    w.gen_data();
    w.train_protonet();
    let err = run(&[
        "sweep-steps",
        "--method",
        "protonet",
        "--config",
        &w.path("config.txt"),
        "--dataset",
        &w.path("data"),
        "--checkpoint",
        &w.path("model/protonet.ckpt"),
        "--out",
        &w.path("steps"),
        "--k",
        "2",
    ])
    .unwrap_err();
    assert!(err.to_string().contains("protomaml"), "{err}");
}

#[test]
fn binary_exits_nonzero_on_error_and_zero_on_success() {
    let exe = env!("CARGO_BIN_EXE_metaspoof");
    let out = Command::new(exe).arg("train").output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("data");
    let status = Command::new(exe)
        .args([
            "gen-data",
            "--out",
            out_path.to_str().unwrap(),
            "--seed",
            "2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_path.join("train.csv").exists());
}

#[test]
fn inapplicable_flags_are_rejected() {
    let w = World::new();
    let err = run(&["gen-data", "--out", &w.path("d"), "--method", "protonet"]).unwrap_err();
    assert!(err.to_string().contains("--method"), "{err}");
    let err = run(&["train", "--method", "protonet", "--dataset", &w.path("x"), "--out", &w.path("m"), "--k", "4"]).unwrap_err();
    assert!(err.to_string().contains("--k"), "{err}");
}
