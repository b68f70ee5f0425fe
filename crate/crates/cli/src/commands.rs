use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use emoformer_core::audio::{load_wav, resample, save_wav};
use emoformer_core::augment::{augment_set, AugmentPlan};
use emoformer_core::dataset::{Manifest, ManifestEntry};
use emoformer_core::emof::{write_array, DType};
use emoformer_core::experiment::{evaluate_manifest, run_experiment, ExperimentConfig, InferenceBundle};
use emoformer_core::mfcc::{extract_mfcc, segment, MfccConfig, EXPECTED_RATE};
use emoformer_core::model::{EmoFormer, EmoFormerConfig, SequenceMode};
use emoformer_core::xvector::{extract_xvector, XVectorModel, DEFAULT_WEIGHT_SEED};
use emoformer_core::{Error, Result};

use crate::{AudioCommand, Cli, Command, FeaturesCommand, ModelCommand};

const MODEL_FILE: &str = "model.emof";
const BUNDLE_FILE: &str = "bundle.json";

pub fn run(cli: Cli) -> Result<()> {
    let force = cli.force;
    match cli.command {
        Command::Audio(AudioCommand::Resample { rate, input, output }) => {
            claim(&output, force)?;
            let clip = resample(&load_wav(&input)?, rate)?;
            save_wav(&clip, &output)
        }
        Command::Augment { manifest, out_dir, plan } => augment(&manifest, &out_dir, plan.as_deref(), force),
        Command::Features(FeaturesCommand::Mfcc { io, config }) => {
            features_mfcc(&io.manifest, &io.out_dir, config.as_deref(), force)
        }
        Command::Features(FeaturesCommand::Xvector { io, weights, config }) => {
            features_xvector(&io.manifest, &io.out_dir, &weights, config.as_deref(), force)
        }
        Command::Features(FeaturesCommand::XvectorWeights { out, input_dim, seed }) => {
            claim(&out, force)?;
            XVectorModel::seeded(input_dim, seed.unwrap_or(DEFAULT_WEIGHT_SEED)).save(&out)
        }
        Command::Train { manifest, config, out_dir } => train(&manifest, config.as_deref(), &out_dir, force),
        Command::Eval { manifest, model_dir, out_dir } => eval(&manifest, &model_dir, &out_dir, force),
        Command::Infer { model_dir, wav } => infer(&model_dir, &wav),
        Command::Model(ModelCommand::Macs { config }) => macs(config.as_deref()),
        Command::Model(ModelCommand::Shapes { config }) => {
            let cfg: EmoFormerConfig = read_json(config.as_deref())?;
            let model = EmoFormer::build(&cfg)?;
            print_json(&json!({ "config": cfg, "layers": model.shape_chain(), "parameter_count": model.parameter_count() }))
        }
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

/// Refuses to overwrite an existing file unless forced.
fn claim(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Argument(format!("{} already exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
            serde_json::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", p.display())))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// File stems of the manifest entries, which must be distinct.
fn stems(manifest: &Manifest) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    manifest
        .entries
        .iter()
        .map(|e| {
            let stem = e.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if !seen.insert(stem.clone()) {
                return Err(Error::Argument(format!("two manifest entries share the file name {stem:?}")));
            }
            Ok(stem)
        })
        .collect()
}

fn augment(manifest: &Path, out_dir: &Path, plan: Option<&Path>, force: bool) -> Result<()> {
    let manifest = Manifest::read_csv(manifest)?;
    let plan: AugmentPlan = read_json(plan)?;
    plan.validate()?;
    let tags: Vec<String> = plan.transforms()?.iter().map(|t| t.tag()).collect();
    let stems = stems(&manifest)?;
    make_dir(out_dir)?;
    let out_manifest = out_dir.join("manifest.csv");
    claim(&out_manifest, force)?;
    let names: Vec<Vec<String>> =
        stems.iter().map(|s| tags.iter().map(|t| format!("{s}_{t}.wav")).collect()).collect();
    for n in names.iter().flatten() {
        claim(&out_dir.join(n), force)?;
    }
    manifest.entries.par_iter().zip(&names).try_for_each(|(e, files)| -> Result<()> {
        let clips = augment_set(&load_wav(&e.path)?, &plan)?;
        for (clip, name) in clips.iter().zip(files) {
            save_wav(clip, &out_dir.join(name))?;
        }
        log::info!("{}: {} variants", e.path.display(), clips.len());
        Ok(())
    })?;
    let entries = manifest
        .entries
        .iter()
        .zip(&names)
        .flat_map(|(e, files)| {
            files.iter().map(move |f| ManifestEntry {
                path: PathBuf::from(f),
                label: e.label.clone(),
                speaker: e.speaker.clone(),
                duration: plan.target_seconds,
            })
        })
        .collect();
    Manifest::new(entries).write_csv(&out_manifest)
}

#[derive(Serialize)]
struct IndexEntry {
    file: String,
    parent_id: String,
    label: String,
    segment_index: Option<usize>,
}

fn features_mfcc(manifest: &Path, out_dir: &Path, config: Option<&Path>, force: bool) -> Result<()> {
    let manifest = Manifest::read_csv(manifest)?;
    let cfg: MfccConfig = read_json(config)?;
    cfg.validate(EXPECTED_RATE)?;
    let stems = stems(&manifest)?;
    make_dir(out_dir)?;
    let index_path = out_dir.join("index.json");
    claim(&index_path, force)?;
    let per_clip: Vec<Vec<IndexEntry>> = manifest
        .entries
        .par_iter()
        .zip(&stems)
        .map(|(e, stem)| {
            let clip = resample(&load_wav(&e.path)?, EXPECTED_RATE)?;
            let m = extract_mfcc(&clip, &cfg)?;
            segment(&m, cfg.segment_frames, cfg.overlap_frames)?
                .iter()
                .map(|s| {
                    let file = format!("{stem}_seg{:03}.emof", s.index);
                    let path = out_dir.join(&file);
                    claim(&path, force)?;
                    write_array(&path, DType::F32, &[s.data.rows, s.data.cols], &s.data.data)?;
                    Ok(IndexEntry {
                        file,
                        parent_id: e.path.display().to_string(),
                        label: e.label.clone(),
                        segment_index: Some(s.index),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let index: Vec<IndexEntry> = per_clip.into_iter().flatten().collect();
    log::info!("wrote {} segments", index.len());
    write_text(&index_path, &serde_json::to_string_pretty(&index)?)
}

fn features_xvector(manifest: &Path, out_dir: &Path, weights: &Path, config: Option<&Path>, force: bool) -> Result<()> {
    let manifest = Manifest::read_csv(manifest)?;
    let model = XVectorModel::load(weights)?;
    let cfg: MfccConfig = read_json(config)?;
    cfg.validate(EXPECTED_RATE)?;
    let stems = stems(&manifest)?;
    make_dir(out_dir)?;
    let index_path = out_dir.join("index.json");
    claim(&index_path, force)?;
    let index: Vec<IndexEntry> = manifest
        .entries
        .par_iter()
        .zip(&stems)
        .map(|(e, stem)| {
            let clip = resample(&load_wav(&e.path)?, EXPECTED_RATE)?;
            let xv = extract_xvector(&extract_mfcc(&clip, &cfg)?, &model)?;
            let file = format!("{stem}.emof");
            let path = out_dir.join(&file);
            claim(&path, force)?;
            write_array(&path, DType::F32, &[xv.values.len()], &xv.values)?;
            Ok(IndexEntry { file, parent_id: e.path.display().to_string(), label: e.label.clone(), segment_index: None })
        })
        .collect::<Result<_>>()?;
    write_text(&index_path, &serde_json::to_string_pretty(&index)?)
}

fn train(manifest: &Path, config: Option<&Path>, out_dir: &Path, force: bool) -> Result<()> {
    let manifest = Manifest::read_csv(manifest)?;
    let cfg: ExperimentConfig = read_json(config)?;
    let outputs = ["report.json", "metrics.json", MODEL_FILE, BUNDLE_FILE, "confusion.csv", "confusion.pgm"];
    make_dir(out_dir)?;
    for f in outputs {
        claim(&out_dir.join(f), force)?;
    }
    let outcome = run_experiment(&manifest, &cfg)?;
    let report = &outcome.report;
    log::info!(
        "clip accuracy {:.4}, macro F1 {:.4}, best epoch {}",
        report.clip_metrics.accuracy,
        report.clip_metrics.macro_f1,
        report.history.best_epoch
    );
    write_text(&out_dir.join("report.json"), &report.to_json())?;
    write_text(&out_dir.join("metrics.json"), &report.metrics_json())?;
    outcome.model.save_weights(&out_dir.join(MODEL_FILE))?;
    write_text(&out_dir.join(BUNDLE_FILE), &serde_json::to_string_pretty(&outcome.bundle)?)?;
    report.clip_metrics.write_confusion_csv(&out_dir.join("confusion.csv"), &outcome.bundle.emotions)?;
    report.clip_metrics.write_confusion_pgm(&out_dir.join("confusion.pgm"), 16)
}

fn load_trained(model_dir: &Path) -> Result<(EmoFormer, InferenceBundle)> {
    let bundle: InferenceBundle = {
        let path = model_dir.join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        serde_json::from_str(&text)?
    };
    let model = EmoFormer::load_weights(&model_dir.join(MODEL_FILE), None)?;
    if model.config().num_classes != bundle.emotions.len() {
        return Err(Error::ConfigMismatch(format!(
            "model has {} classes but the bundle lists {} emotions",
            model.config().num_classes,
            bundle.emotions.len()
        )));
    }
    Ok((model, bundle))
}

fn eval(manifest: &Path, model_dir: &Path, out_dir: &Path, force: bool) -> Result<()> {
    let manifest = Manifest::read_csv(manifest)?;
    let (model, bundle) = load_trained(model_dir)?;
    make_dir(out_dir)?;
    let files = ["eval.json", "confusion.csv", "confusion.pgm"];
    for f in files {
        claim(&out_dir.join(f), force)?;
    }
    let (segments, clips) = evaluate_manifest(&model, &bundle, &manifest)?;
    let report = json!({ "emotions": bundle.emotions.labels(), "segment_metrics": segments, "clip_metrics": clips });
    write_text(&out_dir.join("eval.json"), &serde_json::to_string_pretty(&report)?)?;
    clips.write_confusion_csv(&out_dir.join("confusion.csv"), &bundle.emotions)?;
    clips.write_confusion_pgm(&out_dir.join("confusion.pgm"), 16)
}

fn infer(model_dir: &Path, wav: &Path) -> Result<()> {
    let (model, bundle) = load_trained(model_dir)?;
    let extractor = bundle.extractor()?;
    let probs = bundle.classify(&model, extractor.as_ref(), &load_wav(wav)?)?;
    let best = probs.iter().enumerate().fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
    print_json(&json!({
        "file": wav.display().to_string(),
        "emotions": bundle.emotions.labels(),
        "probabilities": probs,
        "label": bundle.emotions.labels()[best],
    }))
}

fn macs(config: Option<&Path>) -> Result<()> {
    let cfg: EmoFormerConfig = read_json(config)?;
    let model = EmoFormer::build(&cfg)?;
    let report = model.count_macs();
    let comparison = [SequenceMode::Pooled1, SequenceMode::Tokens58]
        .into_iter()
        .map(|mode| {
            let r = EmoFormer::build(&EmoFormerConfig { sequence_mode: mode, ..cfg.clone() })?.count_macs();
            Ok(r.comparison_line(match mode {
                SequenceMode::Pooled1 => "pooled1",
                SequenceMode::Tokens58 => "tokens58",
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    for line in &comparison {
        log::info!("{line}");
    }
    print_json(&json!({
        "per_layer": report.per_layer,
        "total": report.total,
        "sequence_mode": cfg.sequence_mode,
        "comparison": comparison,
    }))
}

fn gradcheck(seed: u64) -> Result<()> {
    let reports = emoformer_tensor::gradcheck::run_suite(seed)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{}",
            json!({ "op": r.op, "cases": r.cases, "worst_relative_error": r.worst_relative_error, "passed": r.passed() })
        );
        if !r.passed() {
            failed.push(r.op);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Integrity(format!(
            "gradient check exceeded tolerance {} for {}",
            emoformer_tensor::gradcheck::REL_TOLERANCE,
            failed.join(", ")
        )))
    }
}
