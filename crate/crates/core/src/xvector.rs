//! X-vector embeddings: per-frame dense layers, mean/standard-deviation
//! statistics pooling, then segment-level dense layers.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use emoformer_tensor::init::glorot_uniform;

use crate::emof::{read_archive, write_archive, Archive, NamedArray};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mfcc::MfccMatrix;

pub const EMBEDDING_DIM: usize = 512;
pub const HIDDEN_DIM: usize = 512;
pub const DEFAULT_WEIGHT_SEED: u64 = 0x5EED_0512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// `h = f(W x + b)` with `W` shaped `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows {
            return Err(Error::shape("dense layer bias", weight.rows, bias.len()));
        }
        Ok(Self { weight, bias, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weight.rows)
            .map(|o| {
                let z = self.bias[o] + self.weight.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                match self.activation {
                    Activation::Relu => z.max(0.0),
                    Activation::Linear => z,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct XVectorModel {
    pub frame_layers: Vec<DenseLayer>,
    pub segment_layers: Vec<DenseLayer>,
    pub embedding_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    name: String,
    input: usize,
    output: usize,
    activation: Activation,
}

impl XVectorModel {
    pub fn new(frame_layers: Vec<DenseLayer>, segment_layers: Vec<DenseLayer>) -> Result<Self> {
        if frame_layers.is_empty() || segment_layers.is_empty() {
            return Err(Error::Argument("x-vector model needs frame and segment layers".into()));
        }
        for (i, pair) in frame_layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!("frame layer {}", i + 1), pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        let pooled = 2 * frame_layers.last().unwrap().output_dim();
        if segment_layers[0].input_dim() != pooled {
            return Err(Error::shape("segment layer 0", pooled, segment_layers[0].input_dim()));
        }
        for (i, pair) in segment_layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!("segment layer {}", i + 1), pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        let embedding_dim = segment_layers.last().unwrap().output_dim();
        Ok(Self { frame_layers, segment_layers, embedding_dim })
    }

    /// Deterministic Glorot-uniform weights: frame `d → 512 → 512`, segment `1024 → 512`.
    pub fn seeded(input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |inp: usize, out: usize| {
            let w = glorot_uniform(&[out, inp], inp, out, &mut rng).into_data();
            DenseLayer::new(Matrix::from_vec(out, inp, w).unwrap(), vec![0.0; out], Activation::Relu).unwrap()
        };
        let frame = vec![layer(input_dim, HIDDEN_DIM), layer(HIDDEN_DIM, HIDDEN_DIM)];
        let segment = vec![layer(2 * HIDDEN_DIM, EMBEDDING_DIM)];
        Self::new(frame, segment).unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.frame_layers[0].input_dim()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays = Vec::new();
        let meta = |prefix: &str, layers: &[DenseLayer], arrays: &mut Vec<NamedArray>| -> Vec<LayerMeta> {
            layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let name = format!("{prefix}.{i}");
                    arrays.push(NamedArray::f64(format!("{name}.weight"), &[l.output_dim(), l.input_dim()], l.weight.data.clone()));
                    arrays.push(NamedArray::f64(format!("{name}.bias"), &[l.output_dim()], l.bias.clone()));
                    LayerMeta { name, input: l.input_dim(), output: l.output_dim(), activation: l.activation }
                })
                .collect()
        };
        let frame = meta("frame", &self.frame_layers, &mut arrays);
        let segment = meta("segment", &self.segment_layers, &mut arrays);
        let header = json!({
            "kind": "xvector",
            "embedding_dim": self.embedding_dim,
            "frame_layers": frame,
            "segment_layers": segment,
        });
        write_archive(path, &Archive { header, arrays })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = read_archive(path)?;
        if archive.header.get("kind").and_then(|k| k.as_str()) != Some("xvector") {
            return Err(Error::Integrity(format!("{} is not an x-vector weight file", path.display())));
        }
        let layers = |key: &str| -> Result<Vec<DenseLayer>> {
            let metas: Vec<LayerMeta> = serde_json::from_value(archive.header[key].clone())
                .map_err(|e| Error::Integrity(format!("{key}: {e}")))?;
            metas
                .iter()
                .map(|m| {
                    let w = archive.get(&format!("{}.weight", m.name))?;
                    let b = archive.get(&format!("{}.bias", m.name))?;
                    if w.shape != [m.output, m.input] {
                        return Err(Error::Integrity(format!("{} has shape {:?}", w.name, w.shape)));
                    }
                    DenseLayer::new(Matrix::from_vec(m.output, m.input, w.data.clone())?, b.data.clone(), m.activation)
                })
                .collect()
        };
        Self::new(layers("frame_layers")?, layers("segment_layers")?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct XVector {
    pub values: Vec<f64>,
    pub source_id: String,
}

/// Maps each row of a `[T × d]` feature matrix through every frame layer.
pub fn frame_embed(features: &Matrix, model: &XVectorModel) -> Result<Matrix> {
    if features.cols != model.input_dim() {
        return Err(Error::shape("frame_embed input", format!("[T x {}]", model.input_dim()), format!("[{} x {}]", features.rows, features.cols)));
    }
    if features.rows < 2 {
        return Err(Error::TooShort { what: "frame_embed (frames)", needed: 2, actual: features.rows });
    }
    let out_dim = model.frame_layers.last().unwrap().output_dim();
    let mut out = Matrix::zeros(features.rows, out_dim);
    for t in 0..features.rows {
        let mut h = features.row(t).to_vec();
        for layer in &model.frame_layers {
            h = layer.apply(&h);
        }
        out.row_mut(t).copy_from_slice(&h);
    }
    Ok(out)
}

/// `[μ, σ]` per column, with population standard deviation.
pub fn stats_pool(embeddings: &Matrix) -> Result<Vec<f64>> {
    let t = embeddings.rows;
    if t < 2 {
        return Err(Error::TooShort { what: "stats_pool (frames)", needed: 2, actual: t });
    }
    let d = embeddings.cols;
    let mut mean = vec![0.0; d];
    for r in 0..t {
        for (m, v) in mean.iter_mut().zip(embeddings.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; d];
    for r in 0..t {
        for ((s, v), m) in var.iter_mut().zip(embeddings.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / t as f64).sqrt());
    Ok(mean.iter().copied().chain(std).collect())
}

/// Embeds a `[d × T]` coefficient matrix (coefficients by frames).
pub fn xvector_from_coeffs(coeffs: &Matrix, model: &XVectorModel, source_id: &str) -> Result<XVector> {
    let frames = frame_embed(&coeffs.transpose(), model)?;
    let mut h = stats_pool(&frames)?;
    for layer in &model.segment_layers {
        h = layer.apply(&h);
    }
    Ok(XVector { values: h, source_id: source_id.to_string() })
}

pub fn extract_xvector(m: &MfccMatrix, model: &XVectorModel) -> Result<XVector> {
    xvector_from_coeffs(&m.coeffs, model, &m.source_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(d: usize, bias: Vec<f64>, w_scale: f64) -> DenseLayer {
        let mut w = Matrix::zeros(d, d);
        for i in 0..d {
            w.set(i, i, w_scale);
        }
        DenseLayer::new(w, bias, Activation::Relu).unwrap()
    }

    #[test]
    fn identity_layer_is_relu() {
        let model = XVectorModel::new(
            vec![identity_layer(3, vec![0.0; 3], 1.0)],
            vec![identity_layer(6, vec![0.0; 6], 1.0)],
        )
        .unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, -0.5, 0.0, 4.0]).unwrap();
        let h = frame_embed(&x, &model).unwrap();
        assert_eq!(h.data, vec![1.0, 0.0, 3.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn zero_weights_give_relu_bias() {
        let bias = vec![0.5, -1.0, 2.0];
        let model = XVectorModel::new(
            vec![identity_layer(3, bias.clone(), 0.0)],
            vec![identity_layer(6, vec![0.0; 6], 1.0)],
        )
        .unwrap();
        let x = Matrix::from_vec(4, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        let h = frame_embed(&x, &model).unwrap();
        for t in 0..4 {
            assert_eq!(h.row(t), &[0.5, 0.0, 2.0]);
        }
    }

    #[test]
    fn stats_pool_examples() {
        let rows = Matrix::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(stats_pool(&rows).unwrap(), vec![1.0, 1.0]);
        let constant = Matrix::from_vec(3, 2, vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap();
        assert_eq!(stats_pool(&constant).unwrap(), vec![1.5, -2.0, 0.0, 0.0]);
        assert_eq!(stats_pool(&Matrix::zeros(5, 256)).unwrap().len(), 512);
        assert!(stats_pool(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn dimension_mismatch_is_named() {
        let model = XVectorModel::seeded(13, 1);
        let err = frame_embed(&Matrix::zeros(5, 12), &model).unwrap_err();
        assert!(err.to_string().contains("13"));
    }

    #[test]
    fn chain_validation() {
        let bad = XVectorModel::new(
            vec![identity_layer(3, vec![0.0; 3], 1.0)],
            vec![identity_layer(5, vec![0.0; 5], 1.0)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xv.emof");
        let model = XVectorModel::seeded(13, 42);
        model.save(&path).unwrap();
        assert_eq!(XVectorModel::load(&path).unwrap(), model);
    }
}
