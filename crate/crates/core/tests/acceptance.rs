//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::HashSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use emoformer_core::audio::{load_wav, AudioClip};
use emoformer_core::augment::{augment_set, pitch_shift, time_stretch, AugmentPlan};
use emoformer_core::dataset::*;
use emoformer_core::experiment::{run_experiment, ExperimentConfig};
use emoformer_core::features::{ExtractorContext, ExtractorRegistry, FeatureSample};
use emoformer_core::matrix::Matrix;
use emoformer_core::metrics::evaluate_predictions;
use emoformer_core::mfcc::{extract_mfcc, hz_to_mel, mel_to_hz, MfccConfig};
use emoformer_core::model::{EmoFormer, EmoFormerConfig, SequenceMode, REFERENCE_MACS};
use emoformer_core::synthetic::{synthetic_clip, write_corpus};
use emoformer_core::training::{evaluate, train, LabeledSet, TrainConfig};
use emoformer_core::xvector::{stats_pool, xvector_from_coeffs, XVectorModel, DEFAULT_WEIGHT_SEED};
use emoformer_tensor::gradcheck::{run_suite, CASES_PER_OP, REL_TOLERANCE};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(what.into()) }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s as f64, format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn mfcc_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(101);
    let cfg = MfccConfig::default();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let clip = common::random_clip(r.gen_range(0.5..2.0), &mut r, &format!("clip{i}"));
        let fast = extract_mfcc(&clip, &cfg).map_err(|e| e.to_string())?;
        let slow = common::mfcc_oracle(&clip.samples);
        check(fast.num_frames() == slow.len(), format!("frame count {} vs {}", fast.num_frames(), slow.len()))?;
        for (t, row) in slow.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                worst = worst.max((fast.coeffs.get(k, t) - v).abs());
            }
        }
    }
    check(worst <= 1e-5, format!("max abs difference {worst:e}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("20 clips, max abs difference {worst:.2e}, {:.1} s", start.elapsed().as_secs_f64()))
}

fn mel_formula() -> Outcome {
    check(hz_to_mel(0.0) == 0.0, "Mel(0) != 0")?;
    let expected = 2595.0 * 2f64.log10();
    let rel = (hz_to_mel(700.0) - expected).abs() / expected;
    check(rel <= 1e-9, format!("Mel(700) relative error {rel:e}"))?;
    let mut worst = 0.0f64;
    for f in [100.0, 1000.0, 7999.0] {
        worst = worst.max((mel_to_hz(hz_to_mel(f)) - f).abs() / f);
    }
    check(worst <= 1e-6, format!("round-trip relative error {worst:e}"))?;
    Ok(format!("Mel(700) rel err {rel:.1e}, round-trip worst {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let reports = run_suite(2024).map_err(|e| e.to_string())?;
    let worst = reports.iter().map(|r| r.worst_relative_error).fold(0.0, f64::max);
    let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.op).collect();
    check(failing.is_empty(), format!("over tolerance: {}", failing.join(", ")))?;
    check(reports.iter().all(|r| r.cases >= 5), "fewer than 5 cases for some op")?;
    within(start.elapsed(), 120)?;
    Ok(format!(
        "{} ops x {CASES_PER_OP} cases, worst relative error {worst:.2e} (tolerance {REL_TOLERANCE:e})",
        reports.len()
    ))
}

fn shape_chain() -> Outcome {
    let table: [(&str, &[usize], &[usize]); 10] = [
        ("conv2d_1", &[13, 469, 1], &[13, 469, 16]),
        ("conv2d_2", &[13, 469, 16], &[13, 469, 32]),
        ("conv2d_3", &[13, 469, 32], &[6, 234, 32]),
        ("conv2d_4", &[6, 234, 32], &[3, 117, 64]),
        ("conv2d_5", &[3, 117, 64], &[1, 58, 64]),
        ("conv2d_6", &[1, 58, 64], &[1, 58, 64]),
        ("dense", &[1, 58, 64], &[64]),
        ("transformer_encoder", &[64], &[64]),
        ("flatten", &[64], &[64]),
        ("dense_output", &[64], &[7]),
    ];
    let cfg = EmoFormerConfig::default();
    let model = EmoFormer::build(&cfg).map_err(|e| e.to_string())?;
    let mut tape = emoformer_tensor::Tape::new();
    let batch = emoformer_core::model::Batch {
        mfcc: Some(emoformer_tensor::Tensor::from_fn(&[1, 13, 469, 1], |i| ((i % 17) as f64 - 8.0) / 8.0)),
        xvector: None,
    };
    let pass = model
        .forward(&mut tape, &batch, emoformer_core::model::Mode::Infer, false)
        .map_err(|e| e.to_string())?;
    check(pass.trace.len() == table.len(), format!("{} layers traced", pass.trace.len()))?;
    for ((name, input, output), (planned, seen)) in table.iter().zip(model.shape_chain().iter().zip(&pass.trace)) {
        for l in [planned, seen] {
            check(
                l.name == *name && l.input == *input && l.output == *output,
                format!("{name}: expected {input:?} -> {output:?}, got {} {:?} -> {:?}", l.name, l.input, l.output),
            )?;
        }
    }
    Ok(format!("all {} rows reproduced, (13, 469, 1) ... (7,)", table.len()))
}

fn overfit_capability() -> Outcome {
    let start = Instant::now();
    let set = EmotionSet::preset(5).unwrap();
    let mfcc = MfccConfig { segment_frames: 48, overlap_frames: 16, ..MfccConfig::default() };
    let extractor = ExtractorRegistry::default().build("mfcc", &ExtractorContext::new(mfcc)).unwrap();
    let (mut samples, mut labels) = (Vec::new(), Vec::new());
    for v in 0..8 {
        for c in 0..5 {
            for s in extractor.extract(&synthetic_clip(c, v, 0.5, 16000, 7)).map_err(|e| e.to_string())? {
                samples.push(s);
                labels.push(c);
            }
        }
    }
    check(samples.len() == 40, format!("{} samples", samples.len()))?;
    let scaler = standardize_fit(&samples).unwrap();
    let data = LabeledSet::new(standardize_apply(&scaler, &samples).unwrap(), labels).unwrap();
    let model_cfg = EmoFormerConfig { num_classes: 5, mfcc_frames: 48, ..EmoFormerConfig::default() };
    let cfg = TrainConfig { max_epochs: 200, seed: 7, ..TrainConfig::default() };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut model = EmoFormer::build_seeded(&model_cfg, cfg.seed).unwrap();
        let history = train(&mut model, &data, &data, &cfg).map_err(|e| e.to_string())?;
        let acc = evaluate(&model, &data, &set).map_err(|e| e.to_string())?.accuracy;
        runs.push((history, acc));
    }
    check(runs[0].0 == runs[1].0 && runs[0].1 == runs[1].1, "two runs with one seed differ")?;
    let (history, acc) = &runs[0];
    check(*acc >= 0.95, format!("training accuracy {acc}"))?;
    within(start.elapsed(), 600)?;
    Ok(format!(
        "training accuracy {:.3} after {} epochs (best epoch {}), deterministic, {:.1} s",
        acc,
        history.epochs.len(),
        history.best_epoch,
        start.elapsed().as_secs_f64()
    ))
}

fn mac_accounting() -> Outcome {
    let conv: u64 = [
        13 * 469 * 16 * 5 * 5,
        13 * 469 * 32 * 3 * 3 * 16,
        13 * 469 * 32 * 3 * 3 * 32,
        6 * 234 * 64 * 3 * 3 * 32,
        3 * 117 * 64 * 3 * 3 * 64,
        58 * 64 * 3 * 3 * 64,
    ]
    .iter()
    .sum();
    let encoder = |s: u64| s * 64 * 64 + 3 * s * 64 * 64 + 2 * s * s * 64 + s * 64 * 64 + 2 * s * 64 * 128;
    let expected = [(SequenceMode::Pooled1, conv + encoder(1) + 64 * 7), (SequenceMode::Tokens58, conv + encoder(58) + 58 * 64 * 7)];
    let mut lines = Vec::new();
    for (mode, closed_form) in expected {
        let r = EmoFormer::build(&EmoFormerConfig { sequence_mode: mode, ..EmoFormerConfig::default() })
            .map_err(|e| e.to_string())?
            .count_macs();
        check(r.total == r.per_layer.iter().map(|l| l.macs).sum::<u64>(), "total is not the sum of layers")?;
        check(r.total == closed_form, format!("{mode:?}: {} vs closed form {closed_form}", r.total))?;
        let label = if mode == SequenceMode::Pooled1 { "pooled1" } else { "tokens58" };
        println!("    {}", r.comparison_line(label));
        lines.push(format!("{label} {}", r.total));
    }
    Ok(format!("{} (reference {REFERENCE_MACS}, reported only)", lines.join(", ")))
}

/// Strongest frequency between 200 and 800 Hz by direct correlation, 0.5 Hz steps.
fn peak_frequency(clip: &AudioClip) -> f64 {
    let n = clip.len();
    let rate = clip.sample_rate as f64;
    let windowed: Vec<f64> =
        clip.samples.iter().enumerate().map(|(i, &s)| s as f64 * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())).collect();
    let mut best = (0.0, 0.0);
    let mut f = 200.0;
    while f <= 800.0 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in windowed.iter().enumerate() {
            let a = 2.0 * PI * f * i as f64 / rate;
            re += v * a.cos();
            im += v * a.sin();
        }
        let mag = re * re + im * im;
        if mag > best.1 {
            best = (f, mag);
        }
        f += 0.5;
    }
    best.0
}

fn augmentation_suite() -> Outcome {
    let clip = common::tone(440.0, 2.0, 16000);
    let set = augment_set(&clip, &AugmentPlan::default()).map_err(|e| e.to_string())?;
    check(set.len() == 5, format!("{} clips", set.len()))?;
    check(set.iter().all(|c| c.len() == 240_000), "a clip is not 240000 samples")?;
    let mut notes = Vec::new();
    for (semis, target) in [(2.0, 493.88), (-2.0, 392.0)] {
        let shifted = pitch_shift(&clip, semis).map_err(|e| e.to_string())?;
        let f = peak_frequency(&shifted);
        check((f - target).abs() / target <= 0.02, format!("{semis:+} semitones: peak {f} Hz, want {target}"))?;
        notes.push(format!("{semis:+} st -> {f:.1} Hz"));
    }
    for factor in [0.9, 1.1] {
        let out = time_stretch(&clip, factor).map_err(|e| e.to_string())?;
        let ratio = out.len() as f64 / clip.len() as f64;
        let want = 1.0 / factor;
        check((ratio - want).abs() / want <= 0.02, format!("stretch {factor}: duration ratio {ratio}"))?;
        notes.push(format!("x{factor} -> {ratio:.4}"));
    }
    Ok(format!("5 clips of 240000 samples; {}", notes.join(", ")))
}

fn metrics_oracle() -> Outcome {
    let mut r = common::rng(808);
    let ks = [5, 7, 10, 23];
    for i in 0..50 {
        let k = ks[i % ks.len()];
        let set = EmotionSet::new((0..k).map(|c| format!("e{c}")).collect()).unwrap();
        let n = r.gen_range(1..300);
        let truth: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let m = evaluate_predictions(&truth, &pred, &set).map_err(|e| e.to_string())?;
        let o = common::naive_metrics(&truth, &pred, k);
        let same = m.accuracy == o.accuracy
            && m.confusion == o.confusion
            && m.macro_precision == o.macro_precision
            && m.macro_recall == o.macro_recall
            && m.macro_f1 == o.macro_f1
            && m.per_class.iter().enumerate().all(|(c, pc)| pc.precision == o.precision[c] && pc.recall == o.recall[c] && pc.f1 == o.f1[c]);
        check(same, format!("vector {i} (K={k}) differs from the counting oracle"))?;
    }
    Ok("50 random vectors over K = 5, 7, 10, 23 match exactly".into())
}

fn split_hygiene() -> Outcome {
    let entries = |classes: usize, per: usize| {
        Manifest::new(
            (0..classes * per)
                .map(|i| ManifestEntry {
                    path: format!("clip{i}.wav").into(),
                    label: format!("c{}", i % classes),
                    speaker: "s".into(),
                    duration: 1.0,
                })
                .collect(),
        )
    };
    let (train_m, _) = split(&entries(7, 107), 0.7, 1).map_err(|e| e.to_string())?;
    let mut per_class = std::collections::BTreeMap::new();
    for e in &train_m.entries {
        *per_class.entry(e.label.clone()).or_insert(0usize) += 1;
    }
    check(per_class.values().all(|&c| c == 74 || c == 75), format!("per-class train counts {per_class:?}"))?;
    let (a, b) = split(&entries(7, 535), 0.7, 1).map_err(|e| e.to_string())?;
    check((a.len(), b.len()) == (2621, 1124), format!("3745 split into {}/{}", a.len(), b.len()))?;

    // Scaler probe: perturbing test features leaves the fitted scaler unchanged.
    let mut r = common::rng(9);
    let make = |r: &mut rand_chacha::ChaCha8Rng, shift: f64| -> Vec<FeatureSample> {
        (0..30)
            .map(|_| FeatureSample {
                mfcc: Some(Matrix::from_vec(13, 20, (0..260).map(|_| r.gen_range(-2.0..2.0) + shift).collect()).unwrap()),
                xvector: None,
                parent_id: "p".into(),
                index: 0,
            })
            .collect()
    };
    let train_x = make(&mut r, 0.0);
    let mut test_x = make(&mut r, 1.0);
    let before = standardize_fit(&train_x).unwrap();
    let _ = standardize_apply(&before, &test_x).unwrap();
    for s in &mut test_x {
        s.mfcc.as_mut().unwrap().data.iter_mut().for_each(|v| *v *= 100.0);
    }
    let _ = standardize_apply(&before, &test_x).unwrap();
    let after = standardize_fit(&train_x).unwrap();
    check(before == after, "scaler changed after test perturbation")?;

    // Augmented variants inherit the partition of their parent.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let set = EmotionSet::preset(5).unwrap();
    let corpus = write_corpus(dir.path(), &set, 4, 0.3, 16000, 5).map_err(|e| e.to_string())?;
    let (tr, te) = split(&corpus, 0.7, 2).map_err(|e| e.to_string())?;
    let plan = AugmentPlan { target_seconds: 0.3, ..AugmentPlan::default() };
    let test_ids: HashSet<String> =
        te.entries.iter().map(|e| load_wav(&e.path).unwrap().source_id).collect();
    let mut variants = 0;
    for e in &tr.entries {
        let parent = load_wav(&e.path).map_err(|e| e.to_string())?;
        for v in augment_set(&parent, &plan).map_err(|e| e.to_string())? {
            let root = v.source_id.split('#').next().unwrap().to_string();
            check(root == parent.source_id && !test_ids.contains(&root), format!("variant {} escaped", v.source_id))?;
            variants += 1;
        }
    }
    Ok(format!("per-class 74/75, 2621/1124, scaler unchanged by test perturbation, {variants} variants all in train"))
}

fn statistics_pooling() -> Outcome {
    let mut r = common::rng(10);
    let m = Matrix::from_vec(40, 16, (0..640).map(|_| r.gen_range(-3.0..3.0)).collect()).unwrap();
    let base = stats_pool(&m).map_err(|e| e.to_string())?;
    let mut order: Vec<usize> = (0..40).collect();
    order.shuffle(&mut r);
    let mut shuffled = Matrix::zeros(40, 16);
    for (dst, &src) in order.iter().enumerate() {
        shuffled.row_mut(dst).copy_from_slice(m.row(src));
    }
    let mut worst = 0.0f64;
    for z in [stats_pool(&shuffled).unwrap(), {
        let mut tiled = Matrix::zeros(120, 16);
        for t in 0..120 {
            tiled.row_mut(t).copy_from_slice(m.row(t % 40));
        }
        stats_pool(&tiled).unwrap()
    }] {
        worst = worst.max(base.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst <= 1e-9, format!("pooled statistics moved by {worst:e}"))?;
    let model = XVectorModel::seeded(13, DEFAULT_WEIGHT_SEED);
    for secs in [1.0, 5.0, 15.0] {
        let clip = common::random_clip(secs, &mut r, "x");
        let mfcc = extract_mfcc(&clip, &MfccConfig::default()).map_err(|e| e.to_string())?;
        let xv = xvector_from_coeffs(&mfcc.coeffs, &model, "x").map_err(|e| e.to_string())?;
        check(xv.values.len() == 512, format!("{secs} s clip gave length {}", xv.values.len()))?;
    }
    Ok(format!("permutation/tiling drift {worst:.1e}; x-vector length 512 at 1, 5, 15 s"))
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let set = EmotionSet::preset(5).unwrap();
    let manifest = write_corpus(dir.path(), &set, 10, 0.5, 16000, 11).map_err(|e| e.to_string())?;
    check(manifest.len() == 50, format!("{} clips", manifest.len()))?;
    let cfg = ExperimentConfig {
        emotion_preset: 5,
        augment_plan: AugmentPlan { target_seconds: 0.5, ..AugmentPlan::default() },
        mfcc: MfccConfig { segment_frames: 48, overlap_frames: 16, ..MfccConfig::default() },
        train: Some(TrainConfig { max_epochs: 3, patience: 2, seed: 5, ..TrainConfig::default() }),
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&manifest, &cfg).map_err(|e| e.to_string())?;
    let b = run_experiment(&manifest, &cfg).map_err(|e| e.to_string())?;
    let (ja, jb) = (a.report.metrics_json(), b.report.metrics_json());
    check(ja.as_bytes() == jb.as_bytes(), "metric JSON differs between runs")?;
    let clip = &a.report.clip_metrics;
    check(clip.confusion.len() == 5, "confusion is not 5 x 5")?;
    check(clip.confusion.iter().flatten().sum::<usize>() == a.report.counts.test_clips, "confusion total != test clips")?;
    Ok(format!("{} bytes of metric JSON identical across two runs", ja.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("MFCC oracle equivalence", mfcc_oracle_equivalence),
        ("mel-scale formula", mel_formula),
        ("gradient checks", gradient_checks),
        ("shape-chain reproduction", shape_chain),
        ("overfit capability", overfit_capability),
        ("MAC accounting", mac_accounting),
        ("augmentation suite", augmentation_suite),
        ("metrics oracle", metrics_oracle),
        ("split/standardize hygiene", split_hygiene),
        ("statistics pooling", statistics_pooling),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
