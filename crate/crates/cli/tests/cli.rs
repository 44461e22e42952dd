use std::path::Path;
use std::process::{Command, Output};

use osrkit_cli::{parse_args, Command as Cmd, EXIT_CONFIG, EXIT_DATA, EXIT_USAGE};

const TINY: &str = "train_per_class = 10\ntest_per_class = 5\nepochs = 1\nbatch_size = 16\nwidths = 4,8\nseeds = 0\n";

fn osrkit(out_root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osrkit")).args(args).env("OSRKIT_OUT", out_root).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn set_overrides_parse_into_the_command() {
    let cli = parse_args(["osrkit", "train", "--config", "c.cfg", "--set", "seed=7"]).unwrap();
    assert_eq!(cli.command, Cmd::Train { data: None, out: None });
    assert_eq!(cli.config.as_deref(), Some(Path::new("c.cfg")));
    assert_eq!(cli.set, vec!["seed=7".to_string()]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["train", "--bogus"], &[]] {
        let o = osrkit(dir.path(), args);
        assert_eq!(code(&o), EXIT_USAGE, "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(code(&osrkit(dir.path(), &["--help"])), 0);
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = osrkit(dir.path(), &["synth", "--set", "k=1.5"]);
    assert_eq!(code(&o), EXIT_CONFIG);
    let msg = String::from_utf8(o.stderr).unwrap();
    assert!(msg.contains("[0, 1]"), "{msg}");
    assert_eq!(msg.lines().count(), 1);
    assert_eq!(code(&osrkit(dir.path(), &["synth", "--set", "colour=red"])), EXIT_CONFIG);
    assert_eq!(code(&osrkit(dir.path(), &["synth", "--config", "/nonexistent.cfg"])), EXIT_CONFIG);
}

#[test]
fn empty_score_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.txt");
    std::fs::write(&scores, "").unwrap();
    let o = osrkit(dir.path(), &["eval", "--scores", scores.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_DATA);
}

#[test]
fn theory_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = osrkit(dir.path(), &["theory-check", "--n", "200"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["theorem1", "theorem2_constant", "theorem2_orthogonal", "chain_rule"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn pipeline_synth_train_score_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, format!("{TINY}augmentation = backmix\n")).unwrap();
    let c = cfg.to_str().unwrap();
    for cmd in ["synth", "train", "score"] {
        let o = osrkit(dir.path(), &[cmd, "--config", c]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.path().join("model/model.osrm").exists());
    assert!(dir.path().join("model/bank.osrb").exists());
    let o = osrkit(dir.path(), &["eval", "--config", c]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("report.tsv")).unwrap();
    assert_eq!(report, String::from_utf8(o.stdout).unwrap());
    for metric in ["accuracy", "auroc", "tnr95", "fpr95", "dtacc", "auin", "auout", "open_f1", "oscr", "ft_cos", "ft_auc"] {
        assert!(report.lines().any(|l| l.split('\t').nth(1) == Some(metric)), "missing {metric}");
    }

    // Re-running eval gives byte-identical reports.
    let again = osrkit(dir.path(), &["eval", "--config", c]);
    assert_eq!(again.stdout, report.as_bytes());

    // Other score functions work off the same model.
    for score in ["energy", "odin", "mahalanobis", "feature_norm"] {
        let out = dir.path().join(format!("{score}.csv"));
        let set = format!("score={score}");
        let o = osrkit(dir.path(), &["score", "--config", c, "--set", &set, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{score}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn training_resumes_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&osrkit(dir.path(), &["synth", "--config", c])), 0);
    assert_eq!(code(&osrkit(dir.path(), &["train", "--config", c, "--set", "epochs=2"])), 0);
    let full = std::fs::read(dir.path().join("model/model.osrm")).unwrap();
    // Drop the last epoch and retrain: the run resumes from epoch 1.
    std::fs::remove_dir_all(dir.path().join("model/checkpoints/epoch-0002")).unwrap();
    let o = osrkit(dir.path(), &["train", "--config", c, "--set", "epochs=2"]);
    let log = String::from_utf8(o.stdout).unwrap();
    assert!(log.contains("epoch 2") && !log.contains("epoch 1 "), "{log}");
    assert_eq!(std::fs::read(dir.path().join("model/model.osrm")).unwrap(), full);
}

#[test]
fn experiment_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, format!("{TINY}s_values = 0,0.25\nk_values = 0.25\nname = sweep\n")).unwrap();
    let o = osrkit(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = dir.path().join("experiments/sweep.tsv");
    assert_eq!(std::fs::read(&table).unwrap(), o.stdout);
    assert!(dir.path().join("experiments/sweep.manifest").exists());
    let o = osrkit(dir.path(), &["report", "--input", table.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("experiment\tmetric\tvalue\n"));
    assert!(text.contains("sweep\tbackmix/s=0.25,k=0.25/auroc\t"), "{text}");
}
