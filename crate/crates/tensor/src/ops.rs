//! Elementwise, linear-algebra and loss operations.

use crate::error::{shape_err, Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probability floor inside the cross-entropy logarithm.
pub const CE_EPS: f64 = 1e-12;

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?}", va.shape()), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape(), data)?;
        self.push(
            "add",
            out,
            &[a, b],
            Box::new(|g, _, _, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let c = vx.last_dim();
        if vb.shape() != [c] {
            return Err(shape_err("add_bias", format!("[{c}]"), vb.shape()));
        }
        let b = vb.data();
        let data = vx
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let out = Tensor::new(vx.shape(), data)?;
        self.push(
            "add_bias",
            out,
            &[x, bias],
            Box::new(move |g, _, _, needs| {
                let db = needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(&[c], acc).unwrap()
                });
                vec![Some(g.clone()), db]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let vx = self.value(x);
        let out = Tensor::new(vx.shape(), vx.data().iter().map(|v| v * factor).collect())?;
        self.push(
            "scale",
            out,
            &[x],
            Box::new(move |g, _, _, _| {
                let d = g.data().iter().map(|v| v * factor).collect();
                vec![Some(Tensor::new(g.shape(), d).unwrap())]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let out = Tensor::new(vx.shape(), vx.data().iter().map(|v| v.max(0.0)).collect())?;
        self.push(
            "relu",
            out,
            &[x],
            Box::new(|g, inputs, _, _| {
                let d = g
                    .data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(g.shape(), d).unwrap())]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != vx.numel() {
            return Err(shape_err("reshape", format!("{numel} elements"), vx.shape()));
        }
        let out = vx.reshaped(shape)?;
        self.push(
            "reshape",
            out,
            &[x],
            Box::new(|g, inputs, _, _| vec![Some(g.reshaped(inputs[0].shape()).unwrap())]),
        )
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(x, &[n, rest])
    }

    /// Concatenates two `[N, a]` and `[N, b]` matrices into `[N, a + b]`.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[0] != vb.shape()[0] {
            return Err(shape_err(
                "concat_last",
                format!("[{}, _]", va.shape()[0]),
                vb.shape(),
            ));
        }
        let (n, ca, cb) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(&va.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&vb.data()[r * cb..(r + 1) * cb]);
        }
        let out = Tensor::new(&[n, ca + cb], data)?;
        self.push(
            "concat_last",
            out,
            &[a, b],
            Box::new(move |g, _, _, _| {
                let mut ga = Vec::with_capacity(n * ca);
                let mut gb = Vec::with_capacity(n * cb);
                for row in g.data().chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![
                    Some(Tensor::new(&[n, ca], ga).unwrap()),
                    Some(Tensor::new(&[n, cb], gb).unwrap()),
                ]
            }),
        )
    }

    /// Affine map over the last axis: `x · W + b` with `W` shaped `[in, out]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(weight));
        let fan_in = vx.last_dim();
        if vw.ndim() != 2 || vw.shape()[0] != fan_in {
            return Err(shape_err("dense", format!("[{fan_in}, out]"), vw.shape()));
        }
        let fan_out = vw.shape()[1];
        if let Some(b) = bias {
            let vb = self.value(b);
            if vb.shape() != [fan_out] {
                return Err(shape_err("dense", format!("bias [{fan_out}]"), vb.shape()));
            }
        }
        let rows = vx.numel() / fan_in;
        let mut out = vec![0.0; rows * fan_out];
        matmul_into(vx.data(), vw.data(), &mut out, rows, fan_in, fan_out);
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fan_out) {
                for (o, bb) in row.iter_mut().zip(bd) {
                    *o += bb;
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let out = Tensor::new(&shape, out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(
            "dense",
            out,
            &parents,
            Box::new(move |g, inputs, _, needs| {
                let (xd, wd, gd) = (inputs[0].data(), inputs[1].data(), g.data());
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0; rows * fan_in];
                    for r in 0..rows {
                        let grow = &gd[r * fan_out..(r + 1) * fan_out];
                        for i in 0..fan_in {
                            let wrow = &wd[i * fan_out..(i + 1) * fan_out];
                            dx[r * fan_in + i] = dot(grow, wrow);
                        }
                    }
                    Tensor::new(inputs[0].shape(), dx).unwrap()
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![0.0; fan_in * fan_out];
                    for r in 0..rows {
                        let grow = &gd[r * fan_out..(r + 1) * fan_out];
                        for i in 0..fan_in {
                            axpy(xd[r * fan_in + i], grow, &mut dw[i * fan_out..(i + 1) * fan_out]);
                        }
                    }
                    Tensor::new(&[fan_in, fan_out], dw).unwrap()
                });
                let mut grads = vec![dx, dw];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut db = vec![0.0; fan_out];
                        for row in gd.chunks(fan_out) {
                            for (a, v) in db.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::new(&[fan_out], db).unwrap()
                    }));
                }
                grads
            }),
        )
    }

    /// Batched matrix product of `[B, M, K]` and `[B, K, N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 3 || vb.ndim() != 3 || va.shape()[0] != vb.shape()[0] || va.shape()[2] != vb.shape()[1] {
            return Err(shape_err(
                "bmm",
                format!("[{}, {}, N] for lhs {:?}", va.shape().first().unwrap_or(&0), va.shape().last().unwrap_or(&0), va.shape()),
                vb.shape(),
            ));
        }
        let (bs, m, k, n) = (va.shape()[0], va.shape()[1], va.shape()[2], vb.shape()[2]);
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            matmul_into(
                &va.data()[i * m * k..(i + 1) * m * k],
                &vb.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(&[bs, m, n], out)?;
        self.push(
            "bmm",
            out,
            &[a, b],
            Box::new(move |g, inputs, _, needs| {
                let (ad, bd, gd) = (inputs[0].data(), inputs[1].data(), g.data());
                let da = needs[0].then(|| {
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        for r in 0..m {
                            let grow = &gd[i * m * n + r * n..i * m * n + (r + 1) * n];
                            for c in 0..k {
                                let brow = &bd[i * k * n + c * n..i * k * n + (c + 1) * n];
                                da[i * m * k + r * k + c] = dot(grow, brow);
                            }
                        }
                    }
                    Tensor::new(&[bs, m, k], da).unwrap()
                });
                let db = needs[1].then(|| {
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        for r in 0..m {
                            let grow = &gd[i * m * n + r * n..i * m * n + (r + 1) * n];
                            for c in 0..k {
                                let av = ad[i * m * k + r * k + c];
                                axpy(av, grow, &mut db[i * k * n + c * n..i * k * n + (c + 1) * n]);
                            }
                        }
                    }
                    Tensor::new(&[bs, k, n], db).unwrap()
                });
                vec![da, db]
            }),
        )
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 3 {
            return Err(shape_err("transpose_last2", "rank 3", vx.shape()));
        }
        let (b, r, c) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let out = Tensor::new(&[b, c, r], transpose3(vx.data(), b, r, c))?;
        self.push(
            "transpose_last2",
            out,
            &[x],
            Box::new(move |g, _, _, _| {
                vec![Some(Tensor::new(&[b, r, c], transpose3(g.data(), b, c, r)).unwrap())]
            }),
        )
    }

    /// `[N, S, H*dh]` → `[N*H, S, dh]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 3 {
            return Err(shape_err("split_heads", "rank 3", vx.shape()));
        }
        let (n, s, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Config(format!(
                "model dimension {d} is not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let out = Tensor::new(&[n * heads, s, dh], permute_heads(vx.data(), n, s, heads, dh, true))?;
        self.push(
            "split_heads",
            out,
            &[x],
            Box::new(move |g, _, _, _| {
                vec![Some(
                    Tensor::new(&[n, s, d], permute_heads(g.data(), n, s, heads, dh, false)).unwrap(),
                )]
            }),
        )
    }

    /// `[N*H, S, dh]` → `[N, S, H*dh]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 3 || heads == 0 || vx.shape()[0] % heads != 0 {
            return Err(shape_err("merge_heads", format!("[N*{heads}, S, dh]"), vx.shape()));
        }
        let (nh, s, dh) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let n = nh / heads;
        let out = Tensor::new(&[n, s, heads * dh], permute_heads(vx.data(), n, s, heads, dh, false))?;
        self.push(
            "merge_heads",
            out,
            &[x],
            Box::new(move |g, _, _, _| {
                vec![Some(
                    Tensor::new(&[nh, s, dh], permute_heads(g.data(), n, s, heads, dh, true)).unwrap(),
                )]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.last_dim();
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(vx.shape(), out)?;
        self.push(
            "softmax",
            out,
            &[x],
            Box::new(move |g, _, y, _| {
                let mut dx = vec![0.0; y.numel()];
                for ((drow, grow), yrow) in dx.chunks_mut(c).zip(g.data().chunks(c)).zip(y.data().chunks(c)) {
                    let s = dot(grow, yrow);
                    for ((d, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yv * (gv - s);
                    }
                }
                vec![Some(Tensor::new(y.shape(), dx).unwrap())]
            }),
        )
    }

    /// Categorical cross-entropy `-mean_n Σ_k y log(p + 1e-12)` against fixed targets.
    pub fn cross_entropy(&mut self, probs: Var, targets: &Tensor) -> Result<Var> {
        let vp = self.value(probs);
        if vp.ndim() != 2 || vp.shape() != targets.shape() {
            return Err(shape_err("cross_entropy", format!("{:?}", targets.shape()), vp.shape()));
        }
        let n = vp.shape()[0] as f64;
        let loss = -vp
            .data()
            .iter()
            .zip(targets.data())
            .map(|(p, y)| y * (p + CE_EPS).ln())
            .sum::<f64>()
            / n;
        let targets = targets.clone();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            &[probs],
            Box::new(move |g, inputs, _, _| {
                let scale = g.item() / n;
                let d = inputs[0]
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(p, y)| -scale * y / (p + CE_EPS))
                    .collect();
                vec![Some(Tensor::new(inputs[0].shape(), d).unwrap())]
            }),
        )
    }

    /// `Σ x ⊙ w` for a fixed weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape() != weights.shape() {
            return Err(shape_err("weighted_sum", format!("{:?}", weights.shape()), vx.shape()));
        }
        let total = dot(vx.data(), weights.data());
        let weights = weights.clone();
        self.push(
            "weighted_sum",
            Tensor::scalar(total),
            &[x],
            Box::new(move |g, _, _, _| {
                let s = g.item();
                let d = weights.data().iter().map(|w| w * s).collect();
                vec![Some(Tensor::new(weights.shape(), d).unwrap())]
            }),
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.numel() as f64;
        let m = vx.data().iter().sum::<f64>() / n;
        self.push(
            "mean",
            Tensor::scalar(m),
            &[x],
            Box::new(move |g, inputs, _, _| {
                vec![Some(Tensor::full(inputs[0].shape(), g.item() / n))]
            }),
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av != 0.0 {
                axpy(av, &b[c * n..(c + 1) * n], orow);
            }
        }
    }
}

fn transpose3(data: &[f64], b: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..b {
        for x in 0..r {
            for y in 0..c {
                out[i * r * c + y * r + x] = data[i * r * c + x * c + y];
            }
        }
    }
    out
}

/// Moves between `[N, S, H, dh]` (merged) and `[N, H, S, dh]` (split) layouts.
fn permute_heads(data: &[f64], n: usize, s: usize, h: usize, dh: usize, split: bool) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..n {
        for t in 0..s {
            for hh in 0..h {
                let merged = ((b * s + t) * h + hh) * dh;
                let heads = ((b * h + hh) * s + t) * dh;
                let (src, dst) = if split { (merged, heads) } else { (heads, merged) };
                out[dst..dst + dh].copy_from_slice(&data[src..src + dh]);
            }
        }
    }
    out
}
