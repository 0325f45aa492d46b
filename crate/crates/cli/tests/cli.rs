use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn din(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_din"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// A small synthetic run: 16 samples per class keeps each epoch fast.
fn write_small_config(dir: &Path) {
    let text = "[model]\ninput_dim = 16\nreduced_dim = 8\nsegments = 8\nwidths = [2, 3]\nchannels = 8\nclasses = 2\n\n\
                [train]\nbatch_size = 8\ninitial_lr = 0.01\nmax_epochs = 3\nseed = 5\n\n\
                [synth]\nsamples_per_class = 16\nval_samples_per_class = 8\nseed = 9\n\n\
                [paths]\nmanifest = \"data/manifest.toml\"\noutput_dir = \"run\"\n";
    fs::write(dir.join("small.toml"), text).unwrap();
}

fn synth_small(dir: &Path) {
    write_small_config(dir);
    let o = din(dir, &["-c", "small.toml", "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = din(dir.path(), &["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("selftest:"));
    assert!(stdout(&o).contains(" 0 failed"));
}

#[test]
fn inspect_params_reports_full_size_total() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("full.toml");
    let o = din(dir.path(), &["-c", cfg.to_str().unwrap(), "inspect-params"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("1609095"), "{}", stdout(&o));
}

#[test]
fn example_configs_parse() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["synthetic.toml", "full.toml"] {
        let cfg = repo_config(name);
        let o = din(dir.path(), &["-c", cfg.to_str().unwrap(), "inspect-params"]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let o = din(dir.path(), &["-c", "small.toml", "--epochs", "0", "train"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = dir.path().join("run");
    assert_eq!(
        fs::read_to_string(run.join("history.csv")).unwrap(),
        "epoch,train_loss,val_loss,val_accuracy,current_lr\n"
    );
    assert_eq!(fs::read(run.join("best.ckpt")).unwrap(), fs::read(run.join("last.ckpt")).unwrap());
    assert!(run.join("config.toml").exists() && run.join("meta.toml").exists());
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let run = dir.path().join("run");
    let artifacts = ["config.toml", "history.csv", "best.ckpt", "last.ckpt"];
    let mut first = Vec::new();
    for round in 0..2 {
        let o = din(dir.path(), &["-c", "small.toml", "train"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let bytes: Vec<Vec<u8>> = artifacts.iter().map(|a| fs::read(run.join(a)).unwrap()).collect();
        if round == 0 {
            first = bytes;
        } else {
            assert_eq!(first, bytes);
        }
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let full = din(dir.path(), &["-c", "small.toml", "--output-dir", "full", "train"]);
    assert!(full.status.success(), "{}", stderr(&full));

    let first = din(dir.path(), &["-c", "small.toml", "--output-dir", "part", "--epochs", "1", "train"]);
    assert!(first.status.success(), "{}", stderr(&first));
    fs::rename(dir.path().join("part/last.ckpt"), dir.path().join("epoch1.ckpt")).unwrap();
    let rest = din(dir.path(), &["-c", "small.toml", "--output-dir", "part", "train", "--resume", "epoch1.ckpt"]);
    assert!(rest.status.success(), "{}", stderr(&rest));

    assert_eq!(
        fs::read(dir.path().join("full/last.ckpt")).unwrap(),
        fs::read(dir.path().join("part/last.ckpt")).unwrap()
    );
}

#[test]
fn eval_reproduces_logged_best_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let o = din(dir.path(), &["-c", "small.toml", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut reader = csv::Reader::from_path(dir.path().join("run/history.csv")).unwrap();
    let best = reader
        .records()
        .map(|r| r.unwrap()[3].parse::<f64>().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);

    let o = din(dir.path(), &["-c", "small.toml", "eval"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let acc: f64 = text.trim().rsplit("accuracy=").next().unwrap().parse().unwrap();
    assert_eq!(acc, best, "{text}");
}

#[test]
fn exports_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    assert!(din(dir.path(), &["-c", "small.toml", "--epochs", "1", "train"]).status.success());

    let o = din(dir.path(), &["-c", "small.toml", "predict", "--split", "val"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("sample_id,label,predicted,p_ascending,p_descending\n"));
    assert_eq!(text.lines().count(), 1 + 16);

    let o = din(dir.path(), &["-c", "small.toml", "export-responses", "--width", "3", "--output", "r.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("r.csv")).unwrap().lines().count(), 1 + 16);

    let o = din(dir.path(), &["-c", "small.toml", "export-features", "--output", "f.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let features = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let header = features.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 2 + 16 + 8);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = din(dir.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("din: "));

    fs::write(dir.path().join("bad.toml"), "[model]\nchannels = \"many\"\n").unwrap();
    let o = din(dir.path(), &["-c", "bad.toml", "inspect-params"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);

    fs::write(dir.path().join("unknown.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(din(dir.path(), &["-c", "unknown.toml", "inspect-params"]).status.code(), Some(2));

    let o = din(dir.path(), &["--manifest", "missing.toml", "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(din(dir.path(), &["--checkpoint", "none.ckpt", "eval"]).status.code(), Some(2));
    assert_eq!(din(dir.path(), &["--help"]).status.code(), Some(0));
}
