//! The EmoFormer network: a six-block CNN front end, a one-block transformer
//! encoder and a softmax head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use emoformer_tensor::init::glorot_uniform;
use emoformer_tensor::{
    AttentionParams, BatchNormMode, ConvGeometry, DropoutKey, Padding, RunningStats, Tape, Tensor, Var, BN_EPS,
    BN_MOMENTUM,
};

use crate::emof::{read_archive, write_archive, Archive, NamedArray};
use crate::error::{Error, Result};
use crate::features::InputKind;

pub const DEFAULT_INIT_SEED: u64 = 0xE30F_0A11;
/// MAC figure the default model is compared against in reports.
pub const REFERENCE_MACS: u64 = 35_041_444;

/// `(kernel, filters, pool after)` for each convolutional block.
const CONV_BLOCKS: [(usize, usize, bool); 6] = [
    (5, 16, false),
    (3, 32, false),
    (3, 32, true),
    (3, 64, true),
    (3, 64, true),
    (3, 64, false),
];

const DROPOUT_ATTENTION: u64 = 1;
const DROPOUT_FEED_FORWARD: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceMode {
    /// Pooled `(64,)` vector as a single token.
    #[serde(rename = "pooled1")]
    Pooled1,
    /// Every spatial position of the last feature map is a token.
    #[serde(rename = "tokens58")]
    Tokens58,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmoFormerConfig {
    pub num_classes: usize,
    pub input_kind: InputKind,
    pub heads: usize,
    /// Feed-forward hidden width.
    pub attn_dim: usize,
    /// Token width entering the encoder.
    pub model_dim: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    pub sequence_mode: SequenceMode,
    pub mfcc_coeffs: usize,
    pub mfcc_frames: usize,
    pub xvector_dim: usize,
}

impl Default for EmoFormerConfig {
    fn default() -> Self {
        Self {
            num_classes: 7,
            input_kind: InputKind::Mfcc,
            heads: 8,
            attn_dim: 128,
            model_dim: 64,
            dropout: 0.2,
            ln_eps: 1e-6,
            sequence_mode: SequenceMode::Pooled1,
            mfcc_coeffs: 13,
            mfcc_frames: 469,
            xvector_dim: 512,
        }
    }
}

fn build_err(layer: &str, message: impl Into<String>) -> Error {
    Error::Build { layer: layer.to_string(), message: message.into() }
}

impl EmoFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=23).contains(&self.num_classes) {
            return Err(build_err("dense_output", format!("num_classes {} outside [2, 23]", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(build_err("transformer_encoder", format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(build_err(
                "transformer_encoder",
                format!("model dimension {} is not divisible by {} heads", self.model_dim, self.heads),
            ));
        }
        if self.attn_dim == 0 {
            return Err(build_err("transformer_encoder", "feed-forward width must be positive"));
        }
        if !(self.ln_eps > 0.0) {
            return Err(build_err("transformer_encoder", "layer-norm epsilon must be positive"));
        }
        Ok(())
    }

    /// Per-sample `(H, W)` of the convolutional input.
    pub fn input_hw(&self) -> (usize, usize) {
        match self.input_kind {
            InputKind::Mfcc | InputKind::Fused => (self.mfcc_coeffs, self.mfcc_frames),
            InputKind::Xvector => (1, self.xvector_dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerShape {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerMacs {
    pub layer: String,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MacReport {
    pub per_layer: Vec<LayerMacs>,
    pub total: u64,
}

impl MacReport {
    fn from_layers(layers: Vec<(String, u64)>) -> Self {
        let per_layer: Vec<LayerMacs> = layers.into_iter().map(|(layer, macs)| LayerMacs { layer, macs }).collect();
        let total = per_layer.iter().map(|l| l.macs).sum();
        Self { per_layer, total }
    }

    pub fn get(&self, layer: &str) -> Option<u64> {
        self.per_layer.iter().find(|l| l.layer == layer).map(|l| l.macs)
    }

    /// Human-readable comparison with [`REFERENCE_MACS`].
    pub fn comparison_line(&self, label: &str) -> String {
        let diff = self.total as i128 - REFERENCE_MACS as i128;
        format!(
            "{label}: {} MACs vs reference {REFERENCE_MACS} (difference {diff:+}, ratio {:.4})",
            self.total,
            self.total as f64 / REFERENCE_MACS as f64
        )
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    geometry: ConvGeometry,
    pool: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Model inputs for one batch. `mfcc` is `[N, coeffs, frames, 1]`, `xvector` is `[N, dim]`.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub mfcc: Option<Tensor>,
    pub xvector: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.mfcc.as_ref().or(self.xvector.as_ref()).map_or(0, |t| t.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics in BN. `step` keys the dropout masks.
    Train { seed: u64, step: u64 },
    Infer,
}

pub struct ForwardPass {
    /// `[N, num_classes]`
    pub probs: Var,
    /// Parameter handles, in [`EmoFormer::parameters`] order.
    pub params: Vec<Var>,
    /// Batch statistics of each BN layer (train mode only).
    pub bn_stats: Vec<RunningStats>,
    /// Observed per-sample input and output shape of each layer.
    pub trace: Vec<LayerShape>,
}

#[derive(Clone, Debug)]
pub struct EmoFormer {
    config: EmoFormerConfig,
    blocks: Vec<ConvBlock>,
    shapes: Vec<LayerShape>,
    tokens: usize,
    head_in: usize,
    params: Vec<Parameter>,
    running: Vec<RunningStats>,
}

impl EmoFormer {
    pub fn build(config: &EmoFormerConfig) -> Result<Self> {
        Self::build_seeded(config, DEFAULT_INIT_SEED)
    }

    pub fn build_seeded(config: &EmoFormerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut add = |name: String, value: Tensor| params.push(Parameter { name, value });

        let (mut h, mut w) = config.input_hw();
        if h == 0 || w == 0 {
            return Err(build_err("conv2d_1", format!("empty input ({h}, {w})")));
        }
        let mut c = 1;
        let mut shapes = Vec::new();
        let mut blocks = Vec::new();
        for (i, &(k, filters, pooled)) in CONV_BLOCKS.iter().enumerate() {
            let name = format!("conv2d_{}", i + 1);
            let geometry = ConvGeometry::new((h, w), [k, k, c, filters], 1, Padding::Same)
                .map_err(|e| build_err(&name, e.to_string()))?;
            let input = vec![h, w, c];
            let (mut oh, mut ow) = (geometry.out_h, geometry.out_w);
            let pool = if pooled {
                let p = if oh >= 2 { (2, 2) } else { (1, 2) };
                if ow < p.1 {
                    return Err(build_err(&name, format!("width {ow} too small for pooling")));
                }
                oh /= p.0;
                ow /= p.1;
                Some(p)
            } else {
                None
            };
            add(
                format!("{name}.kernel"),
                glorot_uniform(&[k, k, c, filters], k * k * c, k * k * filters, &mut rng),
            );
            add(format!("{name}.bn.gamma"), Tensor::full(&[filters], 1.0));
            add(format!("{name}.bn.beta"), Tensor::zeros(&[filters]));
            shapes.push(LayerShape { name, input, output: vec![oh, ow, filters] });
            blocks.push(ConvBlock { geometry, pool });
            (h, w, c) = (oh, ow, filters);
        }

        let d = config.model_dim;
        let tokens = match config.sequence_mode {
            SequenceMode::Pooled1 => {
                shapes.push(LayerShape { name: "dense".into(), input: vec![h, w, c], output: vec![d] });
                1
            }
            SequenceMode::Tokens58 => {
                shapes.push(LayerShape { name: "dense".into(), input: vec![h, w, c], output: vec![h * w, d] });
                h * w
            }
        };
        let mut dense = |name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            add(format!("{name}.weight"), glorot_uniform(&[fan_in, fan_out], fan_in, fan_out, rng));
            add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        };
        dense("dense", c, d, &mut rng);
        for proj in ["query", "key", "value", "output"] {
            dense(&format!("encoder.attention.{proj}"), d, d, &mut rng);
        }
        dense("encoder.ff1", d, config.attn_dim, &mut rng);
        dense("encoder.ff2", config.attn_dim, d, &mut rng);
        let token_shape = if tokens == 1 { vec![d] } else { vec![tokens, d] };
        shapes.push(LayerShape { name: "transformer_encoder".into(), input: token_shape.clone(), output: token_shape.clone() });
        let flat = tokens * d;
        shapes.push(LayerShape { name: "flatten".into(), input: token_shape, output: vec![flat] });
        let head_in = if config.input_kind == InputKind::Fused {
            shapes.push(LayerShape {
                name: "fusion_concat".into(),
                input: vec![flat],
                output: vec![flat + config.xvector_dim],
            });
            flat + config.xvector_dim
        } else {
            flat
        };
        dense("dense_output", head_in, config.num_classes, &mut rng);
        shapes.push(LayerShape { name: "dense_output".into(), input: vec![head_in], output: vec![config.num_classes] });

        // Layer-norm parameters are appended last so the dense RNG stream is unaffected.
        for ln in ["encoder.ln1", "encoder.ln2"] {
            params.push(Parameter { name: format!("{ln}.gamma"), value: Tensor::full(&[d], 1.0) });
            params.push(Parameter { name: format!("{ln}.beta"), value: Tensor::zeros(&[d]) });
        }

        let running = CONV_BLOCKS.iter().map(|&(_, f, _)| RunningStats::new(f)).collect();
        Ok(Self { config: config.clone(), blocks, shapes, tokens, head_in, params, running })
    }

    pub fn config(&self) -> &EmoFormerConfig {
        &self.config
    }

    /// Per-sample input/output shape of every layer, in order.
    pub fn shape_chain(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn param_values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_param_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape("parameter list", self.params.len(), values.len()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(p.name.clone(), format!("{:?}", p.value.shape()), format!("{:?}", v.shape())));
            }
            p.value = v;
        }
        Ok(())
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn set_running_stats(&mut self, stats: Vec<RunningStats>) {
        self.running = stats;
    }

    /// Folds one training step's batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, batch: &[RunningStats]) {
        for (r, b) in self.running.iter_mut().zip(batch) {
            r.update(b, BN_MOMENTUM);
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<usize> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        let kind = self.config.input_kind;
        if kind.uses_mfcc() {
            let m = batch.mfcc.as_ref().ok_or_else(|| Error::Argument("batch lacks MFCC input".into()))?;
            let want = [n, self.config.mfcc_coeffs, self.config.mfcc_frames, 1];
            if m.shape() != want {
                return Err(Error::shape("model MFCC input", format!("{want:?}"), format!("{:?}", m.shape())));
            }
        }
        if kind.uses_xvector() {
            let x = batch.xvector.as_ref().ok_or_else(|| Error::Argument("batch lacks x-vector input".into()))?;
            let want = [n, self.config.xvector_dim];
            if x.shape() != want {
                return Err(Error::shape("model x-vector input", format!("{want:?}"), format!("{:?}", x.shape())));
            }
        }
        Ok(n)
    }

    /// Records the network on `tape`. Parameters become leaves when
    /// `trainable`, constants otherwise.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, mode: Mode, trainable: bool) -> Result<ForwardPass> {
        let n = self.check_batch(batch)?;
        let cfg = &self.config;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| if trainable { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect();
        let mut next = params.iter().copied();
        let mut take = move || next.next().expect("parameter layout");

        let mut x = match cfg.input_kind {
            InputKind::Mfcc | InputKind::Fused => tape.constant(batch.mfcc.clone().unwrap()),
            InputKind::Xvector => {
                let xv = batch.xvector.as_ref().unwrap().reshaped(&[n, 1, cfg.xvector_dim, 1])?;
                tape.constant(xv)
            }
        };

        let (train, dropout_seed, step) = match mode {
            Mode::Train { seed, step } => (true, seed, step),
            Mode::Infer => (false, 0, 0),
        };
        let mut trace = Vec::new();
        let per_sample = |tape: &Tape, v: Var| tape.shape(v)[1..].to_vec();
        let mut record = |name: &str, input: Vec<usize>, output: Vec<usize>| {
            trace.push(LayerShape { name: name.to_string(), input, output })
        };
        let mut bn_stats = Vec::new();
        for (i, (block, running)) in self.blocks.iter().zip(&self.running).enumerate() {
            let input = per_sample(tape, x);
            let (kernel, gamma, beta) = (take(), take(), take());
            x = tape.conv2d(x, kernel, None, block.geometry.stride, Padding::Same)?;
            let bn_mode = if train { BatchNormMode::Train } else { BatchNormMode::Infer(running) };
            let (normed, stats) = tape.batch_norm(x, gamma, beta, bn_mode)?;
            bn_stats.extend(stats);
            x = tape.relu(normed)?;
            if let Some(p) = block.pool {
                x = tape.max_pool2d(x, p)?;
            }
            record(&format!("conv2d_{}", i + 1), input, per_sample(tape, x));
        }
        let conv_out = per_sample(tape, x);

        let d = cfg.model_dim;
        let (dw, db) = (take(), take());
        let tokens = match cfg.sequence_mode {
            SequenceMode::Pooled1 => tape.global_avg_pool(x)?,
            SequenceMode::Tokens58 => {
                let c = tape.shape(x)[3];
                tape.reshape(x, &[n, self.tokens, c])?
            }
        };
        let projected = tape.dense(tokens, dw, Some(db))?;
        let projected = tape.relu(projected)?;
        let seq = tape.reshape(projected, &[n, self.tokens, d])?;
        let token_shape = if self.tokens == 1 { vec![d] } else { vec![self.tokens, d] };
        record("dense", conv_out, per_sample(tape, projected));

        let attn = AttentionParams {
            wq: take(),
            bq: take(),
            wk: take(),
            bk: take(),
            wv: take(),
            bv: take(),
            wo: take(),
            bo: take(),
        };
        let (f1w, f1b, f2w, f2b) = (take(), take(), take(), take());
        let (head_w, head_b) = (take(), take());
        let (ln1g, ln1b, ln2g, ln2b) = (take(), take(), take(), take());

        let key = |layer| DropoutKey { seed: dropout_seed, layer, step };
        let h = tape.layer_norm(seq, ln1g, ln1b, cfg.ln_eps)?;
        let a = tape.multi_head_attention(h, h, h, &attn, cfg.heads)?.output;
        let a = tape.dropout(a, cfg.dropout, train, key(DROPOUT_ATTENTION))?;
        let res1 = tape.add(seq, a)?;
        let h2 = tape.layer_norm(res1, ln2g, ln2b, cfg.ln_eps)?;
        let f = tape.dense(h2, f1w, Some(f1b))?;
        let f = tape.relu(f)?;
        let f = tape.dropout(f, cfg.dropout, train, key(DROPOUT_FEED_FORWARD))?;
        let f = tape.dense(f, f2w, Some(f2b))?;
        let encoded = tape.add(res1, f)?;
        let encoded_shape = if self.tokens == 1 { vec![d] } else { per_sample(tape, encoded) };
        record("transformer_encoder", token_shape, encoded_shape.clone());

        let mut flat = tape.flatten(encoded)?;
        record("flatten", encoded_shape, per_sample(tape, flat));
        if cfg.input_kind == InputKind::Fused {
            let before = per_sample(tape, flat);
            let xv = tape.constant(batch.xvector.clone().unwrap());
            flat = tape.concat_last(flat, xv)?;
            record("fusion_concat", before, per_sample(tape, flat));
        }
        let logits = tape.dense(flat, head_w, Some(head_b))?;
        let probs = tape.softmax(logits)?;
        record("dense_output", per_sample(tape, flat), per_sample(tape, probs));
        Ok(ForwardPass { probs, params, bn_stats, trace })
    }

    /// Inference-mode class probabilities `[N, num_classes]`.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, batch, Mode::Infer, false)?;
        Ok(tape.value(pass.probs).clone())
    }

    /// Per-sample multiply-accumulate count. Pooling, normalization and
    /// activations count as zero.
    pub fn count_macs(&self) -> MacReport {
        let cfg = &self.config;
        let mut layers = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            layers.push((format!("conv2d_{}", i + 1), b.geometry.macs()));
        }
        let s = self.tokens as u64;
        let d = cfg.model_dim as u64;
        let c = CONV_BLOCKS[CONV_BLOCKS.len() - 1].1 as u64;
        layers.push(("dense".into(), s * c * d));
        layers.push(("encoder.attention.qkv".into(), 3 * s * d * d));
        layers.push(("encoder.attention.scores".into(), s * s * d));
        layers.push(("encoder.attention.context".into(), s * s * d));
        layers.push(("encoder.attention.output".into(), s * d * d));
        layers.push(("encoder.ff1".into(), s * d * cfg.attn_dim as u64));
        layers.push(("encoder.ff2".into(), s * cfg.attn_dim as u64 * d));
        layers.push(("dense_output".into(), self.head_in as u64 * cfg.num_classes as u64));
        MacReport::from_layers(layers)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut arrays: Vec<NamedArray> = self
            .params
            .iter()
            .map(|p| NamedArray::f64(p.name.clone(), p.value.shape(), p.value.data().to_vec()))
            .collect();
        for (i, r) in self.running.iter().enumerate() {
            arrays.push(NamedArray::f64(format!("conv2d_{}.bn.running_mean", i + 1), &[r.mean.len()], r.mean.clone()));
            arrays.push(NamedArray::f64(format!("conv2d_{}.bn.running_var", i + 1), &[r.var.len()], r.var.clone()));
        }
        let header = json!({
            "kind": "emoformer",
            "config": self.config,
            "bn_eps": BN_EPS,
            "bn_momentum": BN_MOMENTUM,
            "parameters": self.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
        });
        write_archive(path, &Archive { header, arrays })
    }

    /// Loads weights; when `expected` is given, the stored config must match it.
    pub fn load_weights(path: &Path, expected: Option<&EmoFormerConfig>) -> Result<Self> {
        let archive = read_archive(path)?;
        if archive.header.get("kind").and_then(|k| k.as_str()) != Some("emoformer") {
            return Err(Error::Integrity(format!("{} is not an EmoFormer weight file", path.display())));
        }
        let stored: EmoFormerConfig = serde_json::from_value(archive.header["config"].clone())
            .map_err(|e| Error::Integrity(format!("config header: {e}")))?;
        if let Some(exp) = expected {
            let differing = config_differences(exp, &stored);
            if !differing.is_empty() {
                return Err(Error::ConfigMismatch(format!(
                    "{} was saved with different {}",
                    path.display(),
                    differing.join(", ")
                )));
            }
        }
        let mut model = Self::build(&stored)?;
        for p in &mut model.params {
            let a = archive.get(&p.name)?;
            if a.shape != p.value.shape() {
                return Err(Error::Integrity(format!("{} has shape {:?}, expected {:?}", p.name, a.shape, p.value.shape())));
            }
            p.value = Tensor::new(&a.shape, a.data.clone())?;
        }
        for (i, r) in model.running.iter_mut().enumerate() {
            let mean = archive.get(&format!("conv2d_{}.bn.running_mean", i + 1))?;
            let var = archive.get(&format!("conv2d_{}.bn.running_var", i + 1))?;
            if mean.data.len() != r.mean.len() || var.data.len() != r.var.len() {
                return Err(Error::Integrity(format!("running statistics of conv2d_{} have wrong length", i + 1)));
            }
            r.mean = mean.data.clone();
            r.var = var.data.clone();
        }
        Ok(model)
    }
}

/// Names of config fields whose values differ.
pub fn config_differences(a: &EmoFormerConfig, b: &EmoFormerConfig) -> Vec<String> {
    let (ja, jb) = (serde_json::to_value(a).unwrap(), serde_json::to_value(b).unwrap());
    let (oa, ob) = (ja.as_object().unwrap(), jb.as_object().unwrap());
    oa.iter()
        .filter(|(k, v)| ob.get(*k) != Some(v))
        .map(|(k, v)| format!("{k} (expected {v}, found {})", ob[k]))
        .collect()
}
