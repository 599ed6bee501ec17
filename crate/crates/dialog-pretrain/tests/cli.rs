//! End-to-end checks of the command-line surface, driving the same entry
//! point the binary wraps.

use dialog_pretrain::harness::cli::run;
use std::path::Path;

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["dialog-pretrain".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    run(full)
}

fn write_small_config(path: &Path) {
    let config = serde_json::json!({
        "pipeline": {
            "vocab_size": 300, "embed": 10, "utt_hidden": 6, "ctx_hidden": 6,
            "dec_hidden": 6, "epochs": 1, "batch_size": 8, "lr": 0.001,
            "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "clip_norm": 5.0,
            "dropout": 0.1, "k_negatives": 2, "hits_k": 4, "max_decode_len": 15,
            "freeze_encoder": false
        },
        "precision": "f64",
        "seeds": [1],
        "fractions": [0.5],
        "target_domain": "restaurant",
        "n_in": 2, "n_out": 4,
        "exclusion": "matched",
        "eval_seed": 8191
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

#[test]
fn unknown_flags_and_commands_are_usage_errors() {
    assert_eq!(cli(&["definitely-not-a-command"]), 2);
    assert_eq!(cli(&["pretrain", "--objective", "nope"]), 2);
    assert_eq!(cli(&["pretrain", "--no-such-flag", "x"]), 2);
}

#[test]
fn report_on_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_ne!(cli(&["report", "--run", dir.path().to_str().unwrap()]), 0);
}

#[test]
fn missing_data_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        cli(&[
            "pretrain",
            "--objective",
            "ini",
            "--data",
            "/nonexistent/corpus.json",
            "--out",
            out.to_str().unwrap(),
        ]),
        1
    );
}

#[test]
fn pretrain_then_finetune_then_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.json");
    let config = dir.path().join("config.json");
    write_small_config(&config);
    assert_eq!(
        cli(&[
            "gen-synthetic",
            "--out",
            corpus.to_str().unwrap(),
            "--dialogs",
            "16",
            "--valid",
            "5",
            "--test",
            "5",
            "--seed",
            "2",
        ]),
        0
    );
    assert!(corpus.exists());

    let pre = dir.path().join("pre");
    assert_eq!(
        cli(&[
            "pretrain",
            "--objective",
            "ini",
            "--data",
            corpus.to_str().unwrap(),
            "--out",
            pre.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "1",
        ]),
        0
    );
    let ckpt = pre.join("checkpoints/pretrain_ini_s1.ckpt");
    assert!(ckpt.exists(), "pretrain must write a checkpoint");
    assert!(pre.join("metrics.csv").exists(), "pretrain must write a loss log");

    let ft = dir.path().join("ft");
    assert_eq!(
        cli(&[
            "finetune",
            "--task",
            "dap",
            "--data",
            corpus.to_str().unwrap(),
            "--out",
            ft.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "1",
            "--init",
            ckpt.to_str().unwrap(),
        ]),
        0
    );
    let ft_ckpt = ft.join("checkpoints/finetune_dap_ini_s1.ckpt");
    assert!(ft_ckpt.exists());
    assert!(ft.join("reports.json").exists());
    assert!(ft.join("curves.csv").exists());

    assert_eq!(
        cli(&[
            "evaluate",
            "--ckpt",
            ft_ckpt.to_str().unwrap(),
            "--data",
            corpus.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--split",
            "test",
        ]),
        0
    );

    // A checkpoint built under a different config/data pair is refused
    // without the override flag.
    let other_corpus = dir.path().join("corpus2.json");
    assert_eq!(
        cli(&[
            "gen-synthetic",
            "--out",
            other_corpus.to_str().unwrap(),
            "--dialogs",
            "16",
            "--valid",
            "5",
            "--test",
            "5",
            "--seed",
            "3",
        ]),
        0
    );
    let ft2 = dir.path().join("ft2");
    assert_eq!(
        cli(&[
            "finetune",
            "--task",
            "dap",
            "--data",
            other_corpus.to_str().unwrap(),
            "--out",
            ft2.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "1",
            "--init",
            ckpt.to_str().unwrap(),
        ]),
        1
    );
    assert_eq!(
        cli(&[
            "finetune",
            "--task",
            "dap",
            "--data",
            other_corpus.to_str().unwrap(),
            "--out",
            ft2.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "1",
            "--init",
            ckpt.to_str().unwrap(),
            "--allow-hash-mismatch",
        ]),
        0
    );
}

#[test]
fn experiment_full_writes_a_report_compatible_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.json");
    let config = dir.path().join("config.json");
    write_small_config(&config);
    assert_eq!(
        cli(&[
            "gen-synthetic",
            "--out",
            corpus.to_str().unwrap(),
            "--dialogs",
            "20",
            "--valid",
            "6",
            "--test",
            "6",
            "--seed",
            "4",
        ]),
        0
    );
    let out = dir.path().join("exp");
    assert_eq!(
        cli(&[
            "experiment",
            "--protocol",
            "full",
            "--data",
            corpus.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seeds",
            "1",
        ]),
        0
    );
    for artifact in [
        "config.json",
        "metrics.csv",
        "curves.csv",
        "reports.json",
        "tables/full.csv",
        "candidates.csv",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }

    // Tables can be wiped and regenerated from the logs alone.
    let table = std::fs::read_to_string(out.join("tables/full.csv")).unwrap();
    std::fs::remove_dir_all(out.join("tables")).unwrap();
    assert_eq!(cli(&["report", "--run", out.to_str().unwrap()]), 0);
    let regenerated = std::fs::read_to_string(out.join("tables/full.csv")).unwrap();
    assert_eq!(table, regenerated);
}
