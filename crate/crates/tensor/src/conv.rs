//! Spatial operations on NHWC tensors.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::ops::{axpy, dot};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`, zero padding split top/left first.
    Same,
    /// No padding.
    Valid,
}

/// Geometry of one convolution, shared by forward and backward.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_out: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        in_hw: (usize, usize),
        kernel: [usize; 4],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [kh, kw, c_in, c_out] = kernel;
        let (in_h, in_w) = in_hw;
        if stride == 0 {
            return Err(shape_err("conv2d", "stride >= 1", &[stride]));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = in_h.div_ceil(stride);
                let ow = in_w.div_ceil(stride);
                let ph = ((oh.saturating_sub(1)) * stride + kh).saturating_sub(in_h);
                let pw = ((ow.saturating_sub(1)) * stride + kw).saturating_sub(in_w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if in_h < kh || in_w < kw {
                    return Err(shape_err(
                        "conv2d",
                        format!("spatial dims >= kernel ({kh}, {kw})"),
                        &[in_h, in_w],
                    ));
                }
                ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Self {
            in_h,
            in_w,
            c_in,
            kh,
            kw,
            c_out,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    /// Multiply-accumulates per sample.
    pub fn macs(&self) -> u64 {
        (self.out_h * self.out_w * self.c_out * self.kh * self.kw * self.c_in) as u64
    }

    /// Input coordinate for an output position and kernel tap, if inside the image.
    #[inline]
    fn input_index(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(pad).filter(|&i| i < limit)
    }

    fn forward_sample(&self, x: &[f64], kernel: &[f64], out: &mut [f64]) {
        let (ci, co) = (self.c_in, self.c_out);
        for oh in 0..self.out_h {
            for ow in 0..self.out_w {
                let orow = &mut out[(oh * self.out_w + ow) * co..(oh * self.out_w + ow + 1) * co];
                for ki in 0..self.kh {
                    let Some(ih) = self.input_index(oh, ki, self.pad_top, self.in_h) else { continue };
                    for kj in 0..self.kw {
                        let Some(iw) = self.input_index(ow, kj, self.pad_left, self.in_w) else { continue };
                        let xrow = &x[(ih * self.in_w + iw) * ci..(ih * self.in_w + iw + 1) * ci];
                        let kbase = (ki * self.kw + kj) * ci * co;
                        for (c, &xv) in xrow.iter().enumerate() {
                            axpy(xv, &kernel[kbase + c * co..kbase + (c + 1) * co], orow);
                        }
                    }
                }
            }
        }
    }

    fn backward_sample(
        &self,
        x: &[f64],
        kernel: &[f64],
        g: &[f64],
        dx: Option<&mut [f64]>,
        dk: Option<&mut [f64]>,
    ) {
        let (ci, co) = (self.c_in, self.c_out);
        let mut dx = dx;
        let mut dk = dk;
        for oh in 0..self.out_h {
            for ow in 0..self.out_w {
                let grow = &g[(oh * self.out_w + ow) * co..(oh * self.out_w + ow + 1) * co];
                for ki in 0..self.kh {
                    let Some(ih) = self.input_index(oh, ki, self.pad_top, self.in_h) else { continue };
                    for kj in 0..self.kw {
                        let Some(iw) = self.input_index(ow, kj, self.pad_left, self.in_w) else { continue };
                        let xoff = (ih * self.in_w + iw) * ci;
                        let kbase = (ki * self.kw + kj) * ci * co;
                        for c in 0..ci {
                            let krow = kbase + c * co..kbase + (c + 1) * co;
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[xoff + c] += dot(grow, &kernel[krow.clone()]);
                            }
                            if let Some(dk) = dk.as_deref_mut() {
                                axpy(x[xoff + c], grow, &mut dk[krow]);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// 2-D cross-correlation of `[N, H, W, C_in]` with `[kh, kw, C_in, C_out]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        if vx.ndim() != 4 {
            return Err(shape_err("conv2d", "input [N, H, W, C]", vx.shape()));
        }
        if vk.ndim() != 4 || vk.shape()[2] != vx.shape()[3] {
            return Err(shape_err(
                "conv2d",
                format!("kernel [kh, kw, {}, C_out]", vx.shape()[3]),
                vk.shape(),
            ));
        }
        let ks = [vk.shape()[0], vk.shape()[1], vk.shape()[2], vk.shape()[3]];
        let geo = ConvGeometry::new((vx.shape()[1], vx.shape()[2]), ks, stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geo.c_out] {
                return Err(shape_err("conv2d", format!("bias [{}]", geo.c_out), self.value(b).shape()));
            }
        }
        let n = vx.shape()[0];
        let in_len = geo.in_h * geo.in_w * geo.c_in;
        let out_len = geo.out_h * geo.out_w * geo.c_out;
        let mut out = vec![0.0; n * out_len];
        let (xd, kd) = (vx.data(), vk.data());
        out.par_chunks_mut(out_len.max(1))
            .enumerate()
            .for_each(|(s, o)| geo.forward_sample(&xd[s * in_len..(s + 1) * in_len], kd, o));
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(geo.c_out) {
                for (o, bb) in row.iter_mut().zip(bd) {
                    *o += bb;
                }
            }
        }
        let out = Tensor::new(&[n, geo.out_h, geo.out_w, geo.c_out], out)?;
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        self.push(
            "conv2d",
            out,
            &parents,
            Box::new(move |g, inputs, _, needs| {
                let (xd, kd, gd) = (inputs[0].data(), inputs[1].data(), g.data());
                let klen = kd.len();
                let mut dx = needs[0].then(|| vec![0.0; n * in_len]);
                let partial_dk: Vec<Option<Vec<f64>>> = match dx.as_mut() {
                    Some(dx) => dx
                        .par_chunks_mut(in_len.max(1))
                        .enumerate()
                        .map(|(s, dxs)| {
                            let mut dk = needs[1].then(|| vec![0.0; klen]);
                            geo.backward_sample(
                                &xd[s * in_len..(s + 1) * in_len],
                                kd,
                                &gd[s * out_len..(s + 1) * out_len],
                                Some(dxs),
                                dk.as_deref_mut(),
                            );
                            dk
                        })
                        .collect(),
                    None => (0..n)
                        .into_par_iter()
                        .map(|s| {
                            let mut dk = needs[1].then(|| vec![0.0; klen]);
                            geo.backward_sample(
                                &xd[s * in_len..(s + 1) * in_len],
                                kd,
                                &gd[s * out_len..(s + 1) * out_len],
                                None,
                                dk.as_deref_mut(),
                            );
                            dk
                        })
                        .collect(),
                };
                // per-sample partials are summed in sample order
                let dk = needs[1].then(|| {
                    let mut acc = vec![0.0; klen];
                    for p in partial_dk.into_iter().flatten() {
                        for (a, v) in acc.iter_mut().zip(&p) {
                            *a += v;
                        }
                    }
                    Tensor::new(inputs[1].shape(), acc).unwrap()
                });
                let mut grads = vec![
                    dx.map(|d| Tensor::new(inputs[0].shape(), d).unwrap()),
                    dk,
                ];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut db = vec![0.0; geo.c_out];
                        for row in gd.chunks(geo.c_out) {
                            for (a, v) in db.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::new(&[geo.c_out], db).unwrap()
                    }));
                }
                grads
            }),
        )
    }

    /// Non-overlapping max pooling with window `(ph, pw)` and equal stride.
    /// Ties route the gradient to the first maximal element.
    pub fn max_pool2d(&mut self, x: Var, pool: (usize, usize)) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 4 {
            return Err(shape_err("max_pool2d", "input [N, H, W, C]", vx.shape()));
        }
        let (n, h, w, c) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (ph, pw) = pool;
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(shape_err(
                "max_pool2d",
                format!("spatial dims >= pool ({ph}, {pw})"),
                vx.shape(),
            ));
        }
        let (oh, ow) = (h / ph, w / pw);
        let xd = vx.data();
        let mut out = vec![0.0; n * oh * ow * c];
        let mut argmax = vec![0usize; out.len()];
        for s in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for a in 0..ph {
                            for b in 0..pw {
                                let idx = ((s * h + i * ph + a) * w + j * pw + b) * c + ch;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((s * oh + i) * ow + j) * c + ch;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        let out = Tensor::new(&[n, oh, ow, c], out)?;
        self.push(
            "max_pool2d",
            out,
            &[x],
            Box::new(move |g, inputs, _, _| {
                let mut dx = vec![0.0; inputs[0].numel()];
                for (gv, &idx) in g.data().iter().zip(&argmax) {
                    dx[idx] += gv;
                }
                vec![Some(Tensor::new(inputs[0].shape(), dx).unwrap())]
            }),
        )
    }

    /// Mean over the spatial axes: `[N, H, W, C]` → `[N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 4 {
            return Err(shape_err("global_avg_pool", "input [N, H, W, C]", vx.shape()));
        }
        let (n, h, w, c) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let area = (h * w) as f64;
        let mut out = vec![0.0; n * c];
        for s in 0..n {
            let orow = &mut out[s * c..(s + 1) * c];
            for px in vx.data()[s * h * w * c..(s + 1) * h * w * c].chunks(c) {
                for (o, v) in orow.iter_mut().zip(px) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o /= area;
            }
        }
        let out = Tensor::new(&[n, c], out)?;
        self.push(
            "global_avg_pool",
            out,
            &[x],
            Box::new(move |g, inputs, _, _| {
                let mut dx = Vec::with_capacity(n * h * w * c);
                for grow in g.data().chunks(c) {
                    for _ in 0..h * w {
                        dx.extend(grow.iter().map(|v| v / area));
                    }
                }
                vec![Some(Tensor::new(inputs[0].shape(), dx).unwrap())]
            }),
        )
    }
}
