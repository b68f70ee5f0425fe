//! End-to-end runs: audio → split → augmentation → features → standardization
//! → training → segment- and clip-level evaluation.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample, AudioClip};
use crate::augment::{augment_set, fix_length, AugmentPlan};
use crate::dataset::{split, standardize_apply, standardize_fit, EmotionSet, FeatureScaler, Manifest};
use crate::error::{Error, Result, StageExt};
use crate::features::{ExtractorContext, ExtractorRegistry, FeatureExtractor, FeatureSample};
use crate::metrics::{argmax_rows, evaluate_predictions, Metrics};
use crate::mfcc::MfccConfig;
use crate::model::{EmoFormer, EmoFormerConfig, MacReport};
use crate::training::{predict_all, train, History, LabeledSet, TrainConfig};
use crate::xvector::XVectorModel;

/// Share of the training partition kept for training when a separate
/// validation partition is requested.
pub const CLEAN_VALIDATION_RATIO: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Registered feature extractor name.
    pub feature: String,
    /// Preset size (5, 7, 10 or 23), ignored when `emotion_labels` is set.
    pub emotion_preset: usize,
    pub emotion_labels: Option<Vec<String>>,
    pub sample_rate: u32,
    pub augment: bool,
    pub augment_plan: AugmentPlan,
    pub mfcc: MfccConfig,
    pub model: EmoFormerConfig,
    /// `None` picks the defaults of the feature kind.
    pub train: Option<TrainConfig>,
    pub xvector_weights: Option<PathBuf>,
    /// Carve validation data out of the training partition instead of
    /// monitoring the test partition.
    pub clean_validation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            feature: "mfcc".into(),
            emotion_preset: 7,
            emotion_labels: None,
            sample_rate: 16000,
            augment: true,
            augment_plan: AugmentPlan::default(),
            mfcc: MfccConfig::default(),
            model: EmoFormerConfig::default(),
            train: None,
            xvector_weights: None,
            clean_validation: false,
        }
    }
}

impl ExperimentConfig {
    pub fn emotion_set(&self) -> Result<EmotionSet> {
        match &self.emotion_labels {
            Some(labels) => EmotionSet::new(labels.clone()),
            None => EmotionSet::preset(self.emotion_preset),
        }
    }

    /// Fills derived fields and applies the seed override.
    pub fn resolve(&self) -> Result<Self> {
        let mut cfg = self.clone();
        let set = cfg.emotion_set()?;
        let ctx = ExtractorContext::new(cfg.mfcc.clone());
        let kind = ExtractorRegistry::default().build(&cfg.feature, &ctx)?.kind();
        cfg.model.num_classes = set.len();
        cfg.model.input_kind = kind;
        cfg.model.mfcc_coeffs = cfg.mfcc.n_coeffs;
        cfg.model.mfcc_frames = cfg.mfcc.segment_frames;
        let train = cfg.train.clone().unwrap_or_else(|| TrainConfig::for_kind(kind)).with_env_seed()?;
        train.validate()?;
        cfg.train = Some(train);
        cfg.mfcc.validate(cfg.sample_rate)?;
        cfg.augment_plan.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| TrainConfig::for_kind(self.model.input_kind))
    }

    fn xvector_model(&self) -> Result<Option<Arc<XVectorModel>>> {
        self.xvector_weights.as_ref().map(|p| XVectorModel::load(p).map(Arc::new)).transpose()
    }

    pub fn extractor(&self) -> Result<Box<dyn FeatureExtractor>> {
        let ctx = ExtractorContext { mfcc: self.mfcc.clone(), xvector: self.xvector_model()? };
        ExtractorRegistry::default().build(&self.feature, &ctx)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub train_clips: usize,
    pub augmented_train_clips: usize,
    pub validation_clips: usize,
    pub test_clips: usize,
    pub train_segments: usize,
    pub validation_segments: usize,
    pub test_segments: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub emotions: Vec<String>,
    pub averaging: &'static str,
    pub validation_source: &'static str,
    pub counts: Counts,
    pub history: History,
    pub segment_metrics: Metrics,
    /// Headline metrics: segment probabilities averaged per clip.
    pub clip_metrics: Metrics,
    pub parameter_count: usize,
    pub macs: MacReport,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct MetricView<'a> {
    seed: u64,
    emotions: &'a [String],
    counts: &'a Counts,
    history: &'a History,
    segment_metrics: &'a Metrics,
    clip_metrics: &'a Metrics,
}

impl ExperimentReport {
    /// Deterministic subset of the report (no timings).
    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&MetricView {
            seed: self.seed,
            emotions: &self.emotions,
            counts: &self.counts,
            history: &self.history,
            segment_metrics: &self.segment_metrics,
            clip_metrics: &self.clip_metrics,
        })
        .expect("metrics serialize")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// What inference needs besides the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceBundle {
    pub emotions: EmotionSet,
    pub feature: String,
    pub sample_rate: u32,
    pub target_seconds: f64,
    pub mfcc: MfccConfig,
    pub scaler: FeatureScaler,
    pub xvector_weights: Option<PathBuf>,
}

impl InferenceBundle {
    pub fn extractor(&self) -> Result<Box<dyn FeatureExtractor>> {
        let xvector = self.xvector_weights.as_ref().map(|p| XVectorModel::load(p).map(Arc::new)).transpose()?;
        ExtractorRegistry::default().build(&self.feature, &ExtractorContext { mfcc: self.mfcc.clone(), xvector })
    }

    /// Clip-level class probabilities (mean over segments).
    pub fn classify(&self, model: &EmoFormer, extractor: &dyn FeatureExtractor, clip: &AudioClip) -> Result<Vec<f64>> {
        let clip = fix_length(&resample(clip, self.sample_rate)?, self.target_seconds);
        let samples = standardize_apply(&self.scaler, &extractor.extract(&clip)?)?;
        let n = samples.len();
        let data = LabeledSet::new(samples, vec![0; n])?;
        let probs = predict_all(model, &data)?;
        Ok(mean_rows(&probs, model.config().num_classes))
    }
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub model: EmoFormer,
    pub bundle: InferenceBundle,
}

fn mean_rows(probs: &[f64], k: usize) -> Vec<f64> {
    let rows = probs.len() / k;
    let mut out = vec![0.0; k];
    for row in probs.chunks(k) {
        out.iter_mut().zip(row).for_each(|(o, p)| *o += p);
    }
    out.iter_mut().for_each(|o| *o /= rows as f64);
    out
}

struct Clip {
    audio: AudioClip,
    label: usize,
}

fn load_clips(manifest: &Manifest, set: &EmotionSet, rate: u32) -> Result<Vec<Clip>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let label = set.index(&e.label)?;
            let audio = resample(&load_wav(&e.path)?, rate)?;
            Ok(Clip { audio, label })
        })
        .collect()
}

/// Features of each clip with the clip's position recorded in `owners`.
fn featurize(clips: &[Clip], extractor: &dyn FeatureExtractor) -> Result<(Vec<FeatureSample>, Vec<usize>, Vec<usize>)> {
    let per_clip: Vec<Vec<FeatureSample>> = clips.par_iter().map(|c| extractor.extract(&c.audio)).collect::<Result<_>>()?;
    let (mut samples, mut labels, mut owners) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (clip, feats)) in clips.iter().zip(per_clip).enumerate() {
        for f in feats {
            samples.push(f);
            labels.push(clip.label);
            owners.push(i);
        }
    }
    Ok((samples, labels, owners))
}

fn clip_metrics(probs: &[f64], owners: &[usize], clips: &[Clip], set: &EmotionSet) -> Result<Metrics> {
    let k = set.len();
    let mut sums = vec![vec![0.0; k]; clips.len()];
    let mut counts = vec![0usize; clips.len()];
    for (row, &o) in probs.chunks(k).zip(owners) {
        sums[o].iter_mut().zip(row).for_each(|(s, p)| *s += p);
        counts[o] += 1;
    }
    let (mut truth, mut flat) = (Vec::new(), Vec::new());
    for ((s, c), clip) in sums.iter().zip(&counts).zip(clips) {
        if *c > 0 {
            truth.push(clip.label);
            flat.extend(s.iter().map(|v| v / *c as f64));
        }
    }
    evaluate_predictions(&truth, &argmax_rows(&flat, k), set)
}

pub fn run_experiment(manifest: &Manifest, config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let cfg = config.resolve().stage("config")?;
    let set = cfg.emotion_set()?;
    let tcfg = cfg.train_config();
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let kept = manifest.filter_to(&set);
    if kept.len() < manifest.len() {
        log::info!("{} manifest entries outside the emotion set were skipped", manifest.len() - kept.len());
    }
    kept.validate(&set).stage("manifest")?;
    let (train_m, test_m) = split(&kept, tcfg.split_ratio, tcfg.seed).stage("split")?;
    let (train_m, val_m) = if cfg.clean_validation {
        let (t, v) = split(&train_m, CLEAN_VALIDATION_RATIO, tcfg.seed.wrapping_add(1)).stage("split")?;
        (t, Some(v))
    } else {
        (train_m, None)
    };
    lap("split", &mut timings);

    let rate = cfg.sample_rate;
    let train_clips = load_clips(&train_m, &set, rate).stage("audio")?;
    let test_clips = load_clips(&test_m, &set, rate).stage("audio")?;
    let val_clips = val_m.as_ref().map(|m| load_clips(m, &set, rate)).transpose().stage("audio")?;
    lap("audio", &mut timings);

    let plan = &cfg.augment_plan;
    let fixed = |clips: Vec<Clip>| -> Vec<Clip> {
        clips.into_iter().map(|c| Clip { audio: fix_length(&c.audio, plan.target_seconds), label: c.label }).collect()
    };
    let train_aug: Vec<Clip> = if cfg.augment {
        let sets: Vec<Vec<AudioClip>> =
            train_clips.par_iter().map(|c| augment_set(&c.audio, plan)).collect::<Result<_>>().stage("augment")?;
        train_clips
            .iter()
            .zip(sets)
            .flat_map(|(c, variants)| variants.into_iter().map(move |audio| Clip { audio, label: c.label }))
            .collect()
    } else {
        fixed(train_clips.iter().map(|c| Clip { audio: c.audio.clone(), label: c.label }).collect())
    };
    let test_clips = fixed(test_clips);
    let val_clips = val_clips.map(fixed);
    lap("augment", &mut timings);

    let extractor = cfg.extractor().stage("features")?;
    let (train_x, train_y, _) = featurize(&train_aug, extractor.as_ref()).stage("features")?;
    let (test_x, test_y, test_owner) = featurize(&test_clips, extractor.as_ref()).stage("features")?;
    let val_feats = val_clips.as_ref().map(|v| featurize(v, extractor.as_ref())).transpose().stage("features")?;
    lap("features", &mut timings);

    let scaler = standardize_fit(&train_x).stage("standardize")?;
    let train_set = LabeledSet::new(standardize_apply(&scaler, &train_x)?, train_y)?;
    let test_set = LabeledSet::new(standardize_apply(&scaler, &test_x)?, test_y)?;
    let val_set = match &val_feats {
        Some((x, y, _)) => Some(LabeledSet::new(standardize_apply(&scaler, x)?, y.clone())?),
        None => None,
    };
    lap("standardize", &mut timings);

    let mut model = EmoFormer::build_seeded(&cfg.model, tcfg.seed).stage("model")?;
    let monitor = val_set.as_ref().unwrap_or(&test_set);
    let history = train(&mut model, &train_set, monitor, &tcfg).stage("train")?;
    lap("train", &mut timings);

    let probs = predict_all(&model, &test_set).stage("evaluate")?;
    let segment_metrics =
        evaluate_predictions(&test_set.labels, &argmax_rows(&probs, set.len()), &set).stage("evaluate")?;
    let clip_metrics = clip_metrics(&probs, &test_owner, &test_clips, &set).stage("evaluate")?;
    lap("evaluate", &mut timings);

    let counts = Counts {
        train_clips: train_m.len(),
        augmented_train_clips: train_aug.len(),
        validation_clips: val_m.as_ref().map_or(0, Manifest::len),
        test_clips: test_clips.len(),
        train_segments: train_set.len(),
        validation_segments: val_set.as_ref().map_or(0, LabeledSet::len),
        test_segments: test_set.len(),
    };
    let bundle = InferenceBundle {
        emotions: set.clone(),
        feature: cfg.feature.clone(),
        sample_rate: rate,
        target_seconds: plan.target_seconds,
        mfcc: cfg.mfcc.clone(),
        scaler,
        xvector_weights: cfg.xvector_weights.clone(),
    };
    let report = ExperimentReport {
        seed: tcfg.seed,
        emotions: set.labels().to_vec(),
        averaging: "macro",
        validation_source: if cfg.clean_validation { "held-out part of the training partition" } else { "test partition" },
        counts,
        history,
        segment_metrics,
        clip_metrics,
        parameter_count: model.parameter_count(),
        macs: model.count_macs(),
        timings,
        config: cfg,
    };
    if report.clip_metrics.total != report.counts.test_clips {
        return Err(Error::Integrity("clip-level confusion total differs from the test clip count".into()));
    }
    Ok(ExperimentOutcome { report, model, bundle })
}

/// Segment- and clip-level metrics of a trained model on every entry of `manifest`.
pub fn evaluate_manifest(model: &EmoFormer, bundle: &InferenceBundle, manifest: &Manifest) -> Result<(Metrics, Metrics)> {
    let set = &bundle.emotions;
    manifest.validate(set).stage("manifest")?;
    let clips: Vec<Clip> = load_clips(manifest, set, bundle.sample_rate)
        .stage("audio")?
        .into_iter()
        .map(|c| Clip { audio: fix_length(&c.audio, bundle.target_seconds), label: c.label })
        .collect();
    let extractor = bundle.extractor().stage("features")?;
    let (x, y, owners) = featurize(&clips, extractor.as_ref()).stage("features")?;
    let data = LabeledSet::new(standardize_apply(&bundle.scaler, &x)?, y)?;
    let probs = predict_all(model, &data).stage("evaluate")?;
    let segments = evaluate_predictions(&data.labels, &argmax_rows(&probs, set.len()), set).stage("evaluate")?;
    let clip = clip_metrics(&probs, &owners, &clips, set).stage("evaluate")?;
    Ok((segments, clip))
}
