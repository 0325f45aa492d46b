use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use din_core::analysis::{cost_report, export_pooled_features, export_responses as write_responses};
use din_core::data_io::{
    load_checkpoint, load_checkpoint_for, load_manifest, save_checkpoint, synth_order_task, Checkpoint, LoadedManifest,
    Sample,
};
use din_core::selftest::run_selftest;
use din_core::trainer::evaluate;
use din_core::{predict as argmax_class, EpochReport, ModelParams, ModelShape, Split, TrainingSession};

use crate::config::RunConfig;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn validation(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| validation(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| validation(format!("cannot write {}: {e}", path.display())))
}

fn csv_error(e: csv::Error) -> Failure {
    validation(format!("csv output failed: {e}"))
}

fn unix_millis() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Loads one split and checks it against the model shape.
fn load_samples(manifest: &LoadedManifest, split: Split, shape: &ModelShape) -> Result<Vec<Sample>, Failure> {
    if manifest.num_classes() != shape.classes {
        return Err(validation(format!(
            "manifest has {} classes but the model has {}",
            manifest.num_classes(),
            shape.classes
        )));
    }
    let samples = manifest.load_split(split)?;
    if let Some(bad) = samples.iter().find(|s| s.features.dim() != shape.input_dim) {
        return Err(validation(format!(
            "sample {:?} has {}-dim features, model expects {}",
            bad.id,
            bad.features.dim(),
            shape.input_dim
        )));
    }
    Ok(samples)
}

fn load_model(cfg: &RunConfig) -> Result<Checkpoint, Failure> {
    Ok(load_checkpoint(cfg.paths.checkpoint())?)
}

pub fn synth(cfg: &RunConfig) -> Outcome {
    let ds = synth_order_task(&cfg.synth)?;
    ds.write_with_manifest(&cfg.paths.manifest)?;
    println!(
        "wrote {} train / {} val samples to {}",
        ds.train.len(),
        ds.val.len(),
        cfg.paths.manifest.display()
    );
    Ok(())
}

fn write_history(path: &Path, history: &[EpochReport]) -> Outcome {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss", "val_accuracy", "current_lr"]).map_err(csv_error)?;
    for r in history {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| validation(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Outcome {
    let started = unix_millis();
    cfg.model.validate()?;
    cfg.train.validate()?;
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let train = load_samples(&manifest, Split::Train, &cfg.model)?;
    let val = load_samples(&manifest, Split::Val, &cfg.model)?;
    if cfg.train.max_epochs > 0 && (train.is_empty() || val.is_empty()) {
        return Err(validation(format!(
            "training needs train and val samples, manifest has {} and {}",
            train.len(),
            val.len()
        )));
    }

    let out = &cfg.paths.output_dir;
    create_dir(out)?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;

    let mut session = match resume {
        Some(path) => {
            let ck = load_checkpoint_for(path, &cfg.model)?;
            TrainingSession::resume(ck.params, ck.optimizer, ck.epochs_completed, cfg.train.clone())?
        }
        None => TrainingSession::new(ModelParams::init(&cfg.model, cfg.train.seed)?, cfg.train.clone())?,
    };

    let best_path = out.join("best.ckpt");
    let last_path = out.join("last.ckpt");
    let history_path = out.join("history.csv");
    if session.epochs_completed >= cfg.train.max_epochs {
        save_checkpoint(&best_path, &session.params, &session.optimizer, &cfg.train, session.epochs_completed)?;
        save_checkpoint(&last_path, &session.params, &session.optimizer, &cfg.train, session.epochs_completed)?;
    }
    write_history(&history_path, &session.history)?;

    while session.epochs_completed < cfg.train.max_epochs {
        let before = session.best.as_ref().map(|b| b.epoch);
        let r = session.run_epoch(&train, &val)?;
        println!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_acc {:.4}  lr {:e}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.current_lr
        );
        if session.best.as_ref().map(|b| b.epoch) != before {
            save_checkpoint(&best_path, &session.params, &session.optimizer, &cfg.train, session.epochs_completed)?;
        }
        save_checkpoint(&last_path, &session.params, &session.optimizer, &cfg.train, session.epochs_completed)?;
        write_history(&history_path, &session.history)?;
    }
    if let Some(b) = &session.best {
        println!("best epoch {} val_accuracy {}", b.epoch, b.val_accuracy);
    }

    let meta = format!(
        "started_unix_ms = {started}\nfinished_unix_ms = {}\ndin_version = \"{}\"\n",
        unix_millis(),
        env!("CARGO_PKG_VERSION")
    );
    write_file(&out.join("meta.toml"), meta.as_bytes())
}

pub fn eval(cfg: &RunConfig, split: Split) -> Outcome {
    let ck = load_model(cfg)?;
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let samples = load_samples(&manifest, split, &ck.config.shape)?;
    if samples.is_empty() {
        return Err(validation(format!("manifest has no {split} samples")));
    }
    let e = evaluate(&ck.params, &samples)?;
    println!("split={split} samples={} loss={} accuracy={}", samples.len(), e.loss, e.accuracy);
    Ok(())
}

pub fn predict(cfg: &RunConfig, split: Split, output: Option<&Path>) -> Outcome {
    let ck = load_model(cfg)?;
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let samples = load_samples(&manifest, split, &ck.config.shape)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string(), "label".to_string(), "predicted".to_string()];
    header.extend(manifest.manifest.classes.iter().map(|c| format!("p_{c}")));
    w.write_record(&header).map_err(csv_error)?;
    for s in &samples {
        let scores = ck.params.forward_eval(&s.features)?.scores;
        let mut rec = vec![s.id.clone(), s.label.to_string(), argmax_class(&scores).to_string()];
        rec.extend(scores.probabilities.iter().map(|p| p.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| validation(e.to_string()))?;
    match output {
        Some(path) => write_file(path, &bytes),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| validation(format!("cannot write predictions: {e}"))),
    }
}

pub fn inspect_params(cfg: &RunConfig) -> Outcome {
    let report = cost_report(&cfg.model, cfg.references.clone())?;
    print!("{report}");
    Ok(())
}

pub fn export_responses(cfg: &RunConfig, width: usize, split: Split, output: &Path) -> Outcome {
    let ck = load_model(cfg)?;
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let samples = load_samples(&manifest, split, &ck.config.shape)?;
    let rows = write_responses(&ck.params, &samples, width, output)?;
    println!("wrote {} response rows to {}", rows.len(), output.display());
    Ok(())
}

pub fn export_features(cfg: &RunConfig, split: Split, output: &Path) -> Outcome {
    let ck = load_model(cfg)?;
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let samples = load_samples(&manifest, split, &ck.config.shape)?;
    let rows = export_pooled_features(&ck.params, &samples, output)?;
    println!("wrote {} feature rows to {}", rows.len(), output.display());
    Ok(())
}

pub fn selftest(cfg: &RunConfig) -> Outcome {
    let report = run_selftest(cfg.train.seed)?;
    for s in &report.suites {
        println!(
            "{:<24} {:>5} passed {:>3} failed  worst error {:.2e}",
            s.name, s.passed, s.failed, s.worst
        );
    }
    println!("selftest: {} passed, {} failed", report.passed(), report.failed());
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::SelfTest(format!("{} selftest checks failed", report.failed())))
    }
}
