//! Training-set augmentation: phase-vocoder time stretch, pitch shift and
//! fixed-length normalization.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::audio::{resample_by_ratio, AudioClip};
use crate::dsp::{hann_periodic, istft, stft, wrap_phase};
use crate::error::{Error, Result};

pub const VOCODER_FFT: usize = 2048;
pub const VOCODER_HOP: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPlan {
    /// Playback-rate factors; output duration is `input / factor`.
    pub stretch_factors: Vec<f64>,
    pub pitch_semitones: Vec<f64>,
    pub target_seconds: f64,
    pub include_original: bool,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            stretch_factors: vec![0.9, 1.1],
            pitch_semitones: vec![-2.0, 2.0],
            target_seconds: 15.0,
            include_original: true,
        }
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.stretch_factors.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(Error::Argument(format!("stretch factor {f} must be positive")));
        }
        if let Some(s) = self.pitch_semitones.iter().find(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("pitch shift {s} must be finite")));
        }
        if !(self.target_seconds.is_finite() && self.target_seconds > 0.0) {
            return Err(Error::Argument(format!("target length {} s must be positive", self.target_seconds)));
        }
        Ok(())
    }

    /// Number of clips [`augment_set`] produces per input.
    pub fn cardinality(&self) -> usize {
        usize::from(self.include_original) + self.stretch_factors.len() + self.pitch_semitones.len()
    }

    /// Instantiates the plan's transforms through the default registry, in output order.
    pub fn transforms(&self) -> Result<Vec<Box<dyn Transform>>> {
        let registry = TransformRegistry::default();
        let mut out = Vec::with_capacity(self.cardinality());
        if self.include_original {
            out.push(registry.build("identity", 0.0)?);
        }
        for &f in &self.stretch_factors {
            out.push(registry.build("time_stretch", f)?);
        }
        for &s in &self.pitch_semitones {
            out.push(registry.build("pitch_shift", s)?);
        }
        Ok(out)
    }
}

/// A deterministic clip-to-clip transform.
pub trait Transform: Send + Sync {
    /// Short tag appended to the source id of every output.
    fn tag(&self) -> String;
    fn apply(&self, clip: &AudioClip) -> Result<AudioClip>;
}

struct Identity;

impl Transform for Identity {
    fn tag(&self) -> String {
        "orig".into()
    }
    fn apply(&self, clip: &AudioClip) -> Result<AudioClip> {
        Ok(clip.with_samples(clip.samples.clone(), &self.tag()))
    }
}

pub struct TimeStretch(pub f64);

impl Transform for TimeStretch {
    fn tag(&self) -> String {
        format!("stretch{}", self.0)
    }
    fn apply(&self, clip: &AudioClip) -> Result<AudioClip> {
        let out = time_stretch(clip, self.0)?;
        Ok(clip.with_samples(out.samples, &self.tag()))
    }
}

pub struct PitchShift(pub f64);

impl Transform for PitchShift {
    fn tag(&self) -> String {
        format!("pitch{:+}", self.0)
    }
    fn apply(&self, clip: &AudioClip) -> Result<AudioClip> {
        let out = pitch_shift(clip, self.0)?;
        Ok(clip.with_samples(out.samples, &self.tag()))
    }
}

type TransformCtor = fn(f64) -> Result<Box<dyn Transform>>;

/// Transforms addressable by name, each taking one numeric parameter.
pub struct TransformRegistry {
    ctors: BTreeMap<&'static str, TransformCtor>,
}

impl Default for TransformRegistry {
    fn default() -> Self {
        let mut r = Self { ctors: BTreeMap::new() };
        r.register("identity", |_| Ok(Box::new(Identity)));
        r.register("time_stretch", |f| {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::Argument(format!("stretch factor {f} must be positive")));
            }
            Ok(Box::new(TimeStretch(f)))
        });
        r.register("pitch_shift", |s| {
            if !s.is_finite() {
                return Err(Error::Argument(format!("pitch shift {s} must be finite")));
            }
            Ok(Box::new(PitchShift(s)))
        });
        r
    }
}

impl TransformRegistry {
    pub fn register(&mut self, name: &'static str, ctor: TransformCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ctors.keys().copied().collect()
    }

    pub fn build(&self, name: &str, param: f64) -> Result<Box<dyn Transform>> {
        let ctor = self.ctors.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "transform",
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        ctor(param)
    }
}

/// Phase-vocoder time stretch. `factor` scales playback rate, so the output
/// lasts `round(len / factor)` samples while pitch is kept.
pub fn time_stretch(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Argument(format!("stretch factor {factor} must be positive")));
    }
    let out_len = (clip.len() as f64 / factor).round() as usize;
    if factor == 1.0 || clip.is_empty() {
        let mut samples = clip.samples.clone();
        samples.resize(out_len, 0.0);
        return Ok(AudioClip { samples, ..clip.clone() });
    }
    let x: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
    let window = hann_periodic(VOCODER_FFT);
    let spec = stft(&x, VOCODER_FFT, VOCODER_HOP, &window);
    let n_frames = spec.len();

    let advance: Vec<f64> = (0..VOCODER_FFT)
        .map(|k| 2.0 * PI * VOCODER_HOP as f64 * k as f64 / VOCODER_FFT as f64)
        .collect();
    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let zero = vec![Complex::new(0.0, 0.0); VOCODER_FFT];
    let mut frames = Vec::new();
    let mut t = 0.0f64;
    while t < n_frames as f64 {
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let left = &spec[i];
        let right = spec.get(i + 1).unwrap_or(&zero);
        let frame: Vec<Complex<f64>> = (0..VOCODER_FFT)
            .map(|k| {
                let mag = (1.0 - alpha) * left[k].norm() + alpha * right[k].norm();
                Complex::from_polar(mag, phase[k])
            })
            .collect();
        for k in 0..VOCODER_FFT {
            let delta = wrap_phase(right[k].arg() - left[k].arg() - advance[k]);
            phase[k] += advance[k] + delta;
        }
        frames.push(frame);
        t += factor;
    }
    let y = istft(&frames, VOCODER_FFT, VOCODER_HOP, &window, out_len);
    Ok(AudioClip {
        samples: y.into_iter().map(|v| v as f32).collect(),
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    })
}

/// Shifts pitch by `semitones`: resample by `r = 2^(semitones/12)`, then
/// stretch by `1/r` to restore the duration. Output length equals input length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip> {
    if !semitones.is_finite() {
        return Err(Error::Argument(format!("pitch shift {semitones} must be finite")));
    }
    if semitones == 0.0 || clip.is_empty() {
        return Ok(clip.clone());
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let squeezed_len = ((clip.len() as f64 / ratio).round() as usize).max(1);
    let squeezed = AudioClip {
        samples: resample_by_ratio(&clip.samples, 1.0 / ratio, squeezed_len),
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    };
    let mut out = time_stretch(&squeezed, 1.0 / ratio)?;
    out.samples.resize(clip.len(), 0.0);
    Ok(out)
}

/// Pads with trailing zeros or truncates the tail to `round(target_seconds · rate)` samples.
pub fn fix_length(clip: &AudioClip, target_seconds: f64) -> AudioClip {
    let n = (target_seconds * clip.sample_rate as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(n, 0.0);
    AudioClip { samples, ..clip.clone() }
}

/// Applies every transform of the plan, then [`fix_length`], in the order
/// original, stretches, pitch shifts.
pub fn augment_set(clip: &AudioClip, plan: &AugmentPlan) -> Result<Vec<AudioClip>> {
    plan.validate()?;
    plan.transforms()?
        .iter()
        .map(|t| Ok(fix_length(&t.apply(clip)?, plan.target_seconds)))
        .collect()
}
