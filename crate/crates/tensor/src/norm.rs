//! Batch and layer normalization.

use crate::error::{shape_err, Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel running statistics used in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running = momentum · running + (1 − momentum) · batch`.
    pub fn update(&mut self, batch: &RunningStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
    }
}

pub enum BatchNormMode<'a> {
    /// Normalize with batch statistics; the statistics are returned for the caller to fold in.
    Train,
    Infer(&'a RunningStats),
}

/// Per-row normalization `(x − μ)/√(σ² + ε)` with the saved quantities needed by backward.
fn normalize_rows(
    data: &[f64],
    rows: usize,
    width: usize,
    stride_row: usize,
    stride_col: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // row r consists of elements r*stride_row + j*stride_col for j in 0..width
    let mut means = vec![0.0; rows];
    let mut vars = vec![0.0; rows];
    let mut xhat = vec![0.0; data.len()];
    for r in 0..rows {
        let mut sum = 0.0;
        for j in 0..width {
            sum += data[r * stride_row + j * stride_col];
        }
        let mean = sum / width as f64;
        let mut sq = 0.0;
        for j in 0..width {
            let d = data[r * stride_row + j * stride_col] - mean;
            sq += d * d;
        }
        let var = sq / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..width {
            let i = r * stride_row + j * stride_col;
            xhat[i] = (data[i] - mean) * inv;
        }
        means[r] = mean;
        vars[r] = var;
    }
    (xhat, means, vars)
}

/// Backward of `xhat = (x − μ)/s` given `dxhat`, along the same row layout.
fn normalize_rows_backward(
    dxhat: &[f64],
    xhat: &[f64],
    vars: &[f64],
    rows: usize,
    width: usize,
    stride_row: usize,
    stride_col: usize,
    eps: f64,
) -> Vec<f64> {
    let mut dx = vec![0.0; dxhat.len()];
    let m = width as f64;
    for r in 0..rows {
        let inv = 1.0 / (vars[r] + eps).sqrt();
        let (mut sum_d, mut sum_dx) = (0.0, 0.0);
        for j in 0..width {
            let i = r * stride_row + j * stride_col;
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * xhat[i];
        }
        for j in 0..width {
            let i = r * stride_row + j * stride_col;
            dx[i] = inv / m * (m * dxhat[i] - sum_d - xhat[i] * sum_dx);
        }
    }
    dx
}

impl Tape {
    /// Batch normalization over every axis except the last (channel) axis.
    ///
    /// In train mode the returned statistics are the batch mean and population variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<RunningStats>)> {
        let vx = self.value(x);
        let c = vx.last_dim();
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(shape_err("batch_norm", format!("[{c}]"), self.value(p).shape()));
            }
        }
        let rows = vx.numel() / c;
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        match mode {
            BatchNormMode::Train => {
                let batch = vx.shape()[0];
                if batch < 2 {
                    return Err(TensorError::DegenerateBatch { op: "batch_norm", size: batch });
                }
                // channel ch is a "row" of `rows` elements strided by c
                let (xhat, means, vars) = normalize_rows(vx.data(), c, rows, 1, c, BN_EPS);
                let out: Vec<f64> = xhat
                    .iter()
                    .enumerate()
                    .map(|(i, xh)| g[i % c] * xh + b[i % c])
                    .collect();
                let out = Tensor::new(vx.shape(), out)?;
                let stats = RunningStats { mean: means, var: vars.clone() };
                let var = self.push(
                    "batch_norm",
                    out,
                    &[x, gamma, beta],
                    Box::new(move |gr, inputs, _, needs| {
                        let gd = gr.data();
                        let gamma = inputs[1].data();
                        let dx = needs[0].then(|| {
                            let dxhat: Vec<f64> =
                                gd.iter().enumerate().map(|(i, v)| v * gamma[i % c]).collect();
                            let dx = normalize_rows_backward(&dxhat, &xhat, &vars, c, rows, 1, c, BN_EPS);
                            Tensor::new(inputs[0].shape(), dx).unwrap()
                        });
                        let mut dg = vec![0.0; c];
                        let mut db = vec![0.0; c];
                        for (i, v) in gd.iter().enumerate() {
                            dg[i % c] += v * xhat[i];
                            db[i % c] += v;
                        }
                        vec![
                            dx,
                            Some(Tensor::new(&[c], dg).unwrap()),
                            Some(Tensor::new(&[c], db).unwrap()),
                        ]
                    }),
                )?;
                Ok((var, Some(stats)))
            }
            BatchNormMode::Infer(running) => {
                if running.mean.len() != c || running.var.len() != c {
                    return Err(shape_err("batch_norm", format!("running stats [{c}]"), &[running.mean.len()]));
                }
                let inv: Vec<f64> = running.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mean = running.mean.clone();
                let xhat: Vec<f64> = vx
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v - mean[i % c]) * inv[i % c])
                    .collect();
                let out: Vec<f64> = xhat
                    .iter()
                    .enumerate()
                    .map(|(i, xh)| g[i % c] * xh + b[i % c])
                    .collect();
                let out = Tensor::new(vx.shape(), out)?;
                let var = self.push(
                    "batch_norm",
                    out,
                    &[x, gamma, beta],
                    Box::new(move |gr, inputs, _, _| {
                        let gd = gr.data();
                        let gamma = inputs[1].data();
                        let dx = gd.iter().enumerate().map(|(i, v)| v * gamma[i % c] * inv[i % c]).collect();
                        let mut dg = vec![0.0; c];
                        let mut db = vec![0.0; c];
                        for (i, v) in gd.iter().enumerate() {
                            dg[i % c] += v * xhat[i];
                            db[i % c] += v;
                        }
                        vec![
                            Some(Tensor::new(inputs[0].shape(), dx).unwrap()),
                            Some(Tensor::new(&[c], dg).unwrap()),
                            Some(Tensor::new(&[c], db).unwrap()),
                        ]
                    }),
                )?;
                Ok((var, None))
            }
        }
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.last_dim();
        for p in [gamma, beta] {
            if self.value(p).shape() != [d] {
                return Err(shape_err("layer_norm", format!("[{d}]"), self.value(p).shape()));
            }
        }
        let rows = vx.numel() / d;
        let (xhat, _, vars) = normalize_rows(vx.data(), rows, d, d, 1, eps);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, xh)| g[i % d] * xh + b[i % d])
            .collect();
        let out = Tensor::new(vx.shape(), out)?;
        self.push(
            "layer_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |gr, inputs, _, needs| {
                let gd = gr.data();
                let gamma = inputs[1].data();
                let dx = needs[0].then(|| {
                    let dxhat: Vec<f64> = gd.iter().enumerate().map(|(i, v)| v * gamma[i % d]).collect();
                    let dx = normalize_rows_backward(&dxhat, &xhat, &vars, rows, d, d, 1, eps);
                    Tensor::new(inputs[0].shape(), dx).unwrap()
                });
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for (i, v) in gd.iter().enumerate() {
                    dg[i % d] += v * xhat[i];
                    db[i % d] += v;
                }
                vec![
                    dx,
                    Some(Tensor::new(&[d], dg).unwrap()),
                    Some(Tensor::new(&[d], db).unwrap()),
                ]
            }),
        )
    }
}
