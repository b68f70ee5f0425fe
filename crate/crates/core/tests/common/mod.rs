#![allow(dead_code)]

use std::f64::consts::PI;

use emoformer_core::audio::AudioClip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tone(freq: f64, seconds: f64, rate: u32) -> AudioClip {
    let n = (seconds * rate as f64).round() as usize;
    let samples = (0..n).map(|i| (0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32).collect();
    AudioClip::new(samples, rate, format!("tone{freq}")).unwrap()
}

/// Noise plus a few random partials at 16 kHz.
pub fn random_clip(seconds: f64, rng: &mut ChaCha8Rng, id: &str) -> AudioClip {
    let n = (seconds * 16000.0).round() as usize;
    let partials: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(80.0..4000.0), rng.gen_range(0.05..0.3))).collect();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let s: f64 = partials.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum();
            (s + rng.gen_range(-0.05..0.05)) as f32
        })
        .collect();
    AudioClip::new(samples, 16000, id).unwrap()
}

/// Brute-force MFCC at 16 kHz with the default settings: direct DFT,
/// explicit triangles, naive DCT. Returns `[frames][13]`.
pub fn mfcc_oracle(samples: &[f32]) -> Vec<Vec<f64>> {
    let (rate, frame, hop, nfft, n_mels, n_coeffs) = (16000.0, 400usize, 160usize, 512usize, 40usize, 13usize);
    let x: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let mut y = vec![x[0]];
    for i in 1..x.len() {
        y.push(x[i] - 0.97 * x[i - 1]);
    }
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(rate / 2.0);
    let centers: Vec<f64> = (0..n_mels + 2).map(|i| inv(top * i as f64 / (n_mels + 1) as f64)).collect();
    let triangle = |m: usize, f: f64| {
        let (a, b, c) = (centers[m], centers[m + 1], centers[m + 2]);
        if f > a && f <= b {
            (f - a) / (b - a)
        } else if f > b && f < c {
            (c - f) / (c - b)
        } else {
            0.0
        }
    };
    let frames = 1 + (y.len() - frame) / hop;
    let mut out = Vec::new();
    for t in 0..frames {
        let windowed: Vec<f64> = (0..frame)
            .map(|n| y[t * hop + n] * (0.54 - 0.46 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos()))
            .collect();
        let power: Vec<f64> = (0..=nfft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in windowed.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        let log_mel: Vec<f64> = (0..n_mels)
            .map(|m| {
                let e: f64 = power.iter().enumerate().map(|(k, p)| p * triangle(m, k as f64 * rate / nfft as f64)).sum();
                (e + 1e-10).ln()
            })
            .collect();
        let coeffs = (0..n_coeffs)
            .map(|k| {
                let s: f64 = log_mel
                    .iter()
                    .enumerate()
                    .map(|(m, v)| v * (PI * k as f64 * (m as f64 + 0.5) / n_mels as f64).cos())
                    .sum();
                s * if k == 0 { (1.0 / n_mels as f64).sqrt() } else { (2.0 / n_mels as f64).sqrt() }
            })
            .collect();
        out.push(coeffs);
    }
    out
}

pub struct NaiveMetrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// Counts each quantity straight from the label pairs.
pub fn naive_metrics(truth: &[usize], pred: &[usize], k: usize) -> NaiveMetrics {
    let mut confusion = vec![vec![0; k]; k];
    for i in 0..truth.len() {
        confusion[truth[i]][pred[i]] += 1;
    }
    let (mut precision, mut recall, mut f1) = (vec![], vec![], vec![]);
    for c in 0..k {
        let tp = (0..truth.len()).filter(|&i| truth[i] == c && pred[i] == c).count();
        let fp = (0..truth.len()).filter(|&i| truth[i] != c && pred[i] == c).count();
        let fn_ = (0..truth.len()).filter(|&i| truth[i] == c && pred[i] != c).count();
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let correct = (0..truth.len()).filter(|&i| truth[i] == pred[i]).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    NaiveMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        confusion,
    }
}
