//! Named feature extractors turning a clip into model-ready samples.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mfcc::{extract_mfcc, segment, MfccConfig};
use crate::xvector::{xvector_from_coeffs, XVectorModel, DEFAULT_WEIGHT_SEED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Mfcc,
    Xvector,
    Fused,
}

impl InputKind {
    pub fn name(self) -> &'static str {
        match self {
            InputKind::Mfcc => "mfcc",
            InputKind::Xvector => "xvector",
            InputKind::Fused => "fused",
        }
    }

    pub fn uses_mfcc(self) -> bool {
        matches!(self, InputKind::Mfcc | InputKind::Fused)
    }

    pub fn uses_xvector(self) -> bool {
        matches!(self, InputKind::Xvector | InputKind::Fused)
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One model input: an MFCC window, its x-vector, or both.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSample {
    /// `[n_coeffs × segment_frames]`
    pub mfcc: Option<Matrix>,
    pub xvector: Option<Vec<f64>>,
    pub parent_id: String,
    pub index: usize,
}

pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &'static str;
    fn kind(&self) -> InputKind;
    fn extract(&self, clip: &AudioClip) -> Result<Vec<FeatureSample>>;
}

pub struct MfccExtractor {
    pub config: MfccConfig,
}

pub struct XVectorExtractor {
    pub config: MfccConfig,
    pub model: Arc<XVectorModel>,
}

pub struct FusedExtractor {
    pub config: MfccConfig,
    pub model: Arc<XVectorModel>,
}

fn mfcc_segments(clip: &AudioClip, config: &MfccConfig) -> Result<Vec<crate::mfcc::FeatureSegment>> {
    let m = extract_mfcc(clip, config)?;
    segment(&m, config.segment_frames, config.overlap_frames)
}

impl FeatureExtractor for MfccExtractor {
    fn name(&self) -> &'static str {
        "mfcc"
    }

    fn kind(&self) -> InputKind {
        InputKind::Mfcc
    }

    fn extract(&self, clip: &AudioClip) -> Result<Vec<FeatureSample>> {
        Ok(mfcc_segments(clip, &self.config)?
            .into_iter()
            .map(|s| FeatureSample { mfcc: Some(s.data), xvector: None, parent_id: s.parent_id, index: s.index })
            .collect())
    }
}

impl FeatureExtractor for XVectorExtractor {
    fn name(&self) -> &'static str {
        "xvector"
    }

    fn kind(&self) -> InputKind {
        InputKind::Xvector
    }

    fn extract(&self, clip: &AudioClip) -> Result<Vec<FeatureSample>> {
        mfcc_segments(clip, &self.config)?
            .into_iter()
            .map(|s| {
                let xv = xvector_from_coeffs(&s.data, &self.model, &s.parent_id)?;
                Ok(FeatureSample { mfcc: None, xvector: Some(xv.values), parent_id: s.parent_id, index: s.index })
            })
            .collect()
    }
}

impl FeatureExtractor for FusedExtractor {
    fn name(&self) -> &'static str {
        "fused"
    }

    fn kind(&self) -> InputKind {
        InputKind::Fused
    }

    fn extract(&self, clip: &AudioClip) -> Result<Vec<FeatureSample>> {
        mfcc_segments(clip, &self.config)?
            .into_iter()
            .map(|s| {
                let xv = xvector_from_coeffs(&s.data, &self.model, &s.parent_id)?;
                Ok(FeatureSample { mfcc: Some(s.data), xvector: Some(xv.values), parent_id: s.parent_id, index: s.index })
            })
            .collect()
    }
}

/// Everything an extractor constructor may need.
#[derive(Clone)]
pub struct ExtractorContext {
    pub mfcc: MfccConfig,
    pub xvector: Option<Arc<XVectorModel>>,
}

impl ExtractorContext {
    pub fn new(mfcc: MfccConfig) -> Self {
        Self { mfcc, xvector: None }
    }

    /// The supplied x-vector model, or the seeded default.
    fn xvector_model(&self) -> Result<Arc<XVectorModel>> {
        let model = match &self.xvector {
            Some(m) => m.clone(),
            None => Arc::new(XVectorModel::seeded(self.mfcc.n_coeffs, DEFAULT_WEIGHT_SEED)),
        };
        if model.input_dim() != self.mfcc.n_coeffs {
            return Err(Error::shape("x-vector model input", self.mfcc.n_coeffs, model.input_dim()));
        }
        Ok(model)
    }
}

type ExtractorCtor = fn(&ExtractorContext) -> Result<Box<dyn FeatureExtractor>>;

pub struct ExtractorRegistry {
    ctors: BTreeMap<&'static str, ExtractorCtor>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut r = Self { ctors: BTreeMap::new() };
        r.register("mfcc", |ctx| Ok(Box::new(MfccExtractor { config: ctx.mfcc.clone() })));
        r.register("xvector", |ctx| {
            Ok(Box::new(XVectorExtractor { config: ctx.mfcc.clone(), model: ctx.xvector_model()? }))
        });
        r.register("fused", |ctx| {
            Ok(Box::new(FusedExtractor { config: ctx.mfcc.clone(), model: ctx.xvector_model()? }))
        });
        r
    }
}

impl ExtractorRegistry {
    pub fn register(&mut self, name: &'static str, ctor: ExtractorCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ctors.keys().copied().collect()
    }

    pub fn build(&self, name: &str, ctx: &ExtractorContext) -> Result<Box<dyn FeatureExtractor>> {
        let ctor = self.ctors.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "feature extractor",
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        ctor(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config() -> MfccConfig {
        MfccConfig { segment_frames: 48, overlap_frames: 16, ..MfccConfig::default() }
    }

    fn tone(seconds: f64) -> AudioClip {
        let n = (seconds * 16000.0) as usize;
        let samples = (0..n).map(|i| (0.3 * (2.0 * std::f64::consts::PI * 300.0 * i as f64 / 16000.0).sin()) as f32).collect();
        AudioClip::new(samples, 16000, "tone").unwrap()
    }

    #[test]
    fn registry_lists_and_rejects() {
        let reg = ExtractorRegistry::default();
        assert_eq!(reg.names(), vec!["fused", "mfcc", "xvector"]);
        let ctx = ExtractorContext::new(short_config());
        assert!(matches!(reg.build("wavelet", &ctx), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn extractors_fill_their_fields() {
        let reg = ExtractorRegistry::default();
        let ctx = ExtractorContext::new(short_config());
        let clip = tone(1.0);
        for name in reg.names() {
            let ex = reg.build(name, &ctx).unwrap();
            let samples = ex.extract(&clip).unwrap();
            assert!(!samples.is_empty());
            for s in &samples {
                assert_eq!(s.mfcc.is_some(), ex.kind().uses_mfcc());
                assert_eq!(s.xvector.is_some(), ex.kind().uses_xvector());
                if let Some(m) = &s.mfcc {
                    assert_eq!((m.rows, m.cols), (13, 48));
                }
                if let Some(x) = &s.xvector {
                    assert_eq!(x.len(), 512);
                }
            }
        }
    }
}
