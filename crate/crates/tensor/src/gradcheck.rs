//! Central finite-difference checks of every differentiable operation.
//!
//! The numeric side only ever calls forward passes, so it stays independent
//! of the backward implementations it audits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionParams;
use crate::conv::Padding;
use crate::dropout::DropoutKey;
use crate::error::Result;
use crate::init::uniform;
use crate::norm::{BatchNormMode, RunningStats};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Finite-difference step in 64-bit mode.
pub const FD_STEP: f64 = 1e-6;
/// Maximum accepted relative error in 64-bit mode.
pub const REL_TOLERANCE: f64 = 1e-5;
/// Denominator floor. Central differences at this step carry ~1e-10 absolute
/// rounding noise, so gradients below the floor are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-4;
/// Random shapes drawn per operation.
pub const CASES_PER_OP: usize = 5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Worst relative error between backward and central differences of a scalar function.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub worst_relative_error: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.worst_relative_error <= REL_TOLERANCE
    }
}

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Reduces an op output to a scalar through a fixed random projection and checks it.
fn check_projected(build: Builder, inputs: Vec<Tensor>, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let proj = uniform(tape.shape(out), -1.0, 1.0, rng);
    check_gradients(
        move |tape, vars| {
            let out = build(tape, vars)?;
            tape.weighted_sum(out, &proj)
        },
        &inputs,
        FD_STEP,
    )
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, -1.0, 1.0, rng)
}

fn case(op: &'static str, rng: &mut ChaCha8Rng) -> (Builder, Vec<Tensor>) {
    match op {
        "add" => {
            let s = [rng.gen_range(1..4), rng.gen_range(1..5)];
            (Box::new(|t, v| t.add(v[0], v[1])), vec![rand_t(&s, rng), rand_t(&s, rng)])
        }
        "add_bias" => {
            let (n, c) = (rng.gen_range(1..4), rng.gen_range(1..5));
            (Box::new(|t, v| t.add_bias(v[0], v[1])), vec![rand_t(&[n, c], rng), rand_t(&[c], rng)])
        }
        "scale" => {
            let f = rng.gen_range(-2.0..2.0);
            (Box::new(move |t, v| t.scale(v[0], f)), vec![rand_t(&[rng.gen_range(1..6)], rng)])
        }
        "relu" => (Box::new(|t, v| t.relu(v[0])), vec![rand_t(&[rng.gen_range(2..5), rng.gen_range(2..5)], rng)]),
        "flatten" => {
            let s = [rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..4)];
            (Box::new(|t, v| t.flatten(v[0])), vec![rand_t(&s, rng)])
        }
        "concat_last" => {
            let n = rng.gen_range(1..4);
            let a = rand_t(&[n, rng.gen_range(1..4)], rng);
            let b = rand_t(&[n, rng.gen_range(1..4)], rng);
            (Box::new(|t, v| t.concat_last(v[0], v[1])), vec![a, b])
        }
        "dense" => {
            let (n, i, o) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
            (
                Box::new(|t, v| t.dense(v[0], v[1], Some(v[2]))),
                vec![rand_t(&[n, i], rng), rand_t(&[i, o], rng), rand_t(&[o], rng)],
            )
        }
        "bmm" => {
            let (b, m, k, n) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
            (Box::new(|t, v| t.bmm(v[0], v[1])), vec![rand_t(&[b, m, k], rng), rand_t(&[b, k, n], rng)])
        }
        "transpose_last2" => {
            let s = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4)];
            (Box::new(|t, v| t.transpose_last2(v[0])), vec![rand_t(&s, rng)])
        }
        "split_heads" => {
            let h = rng.gen_range(1..4);
            let s = [rng.gen_range(1..3), rng.gen_range(1..4), h * rng.gen_range(1..3)];
            (Box::new(move |t, v| t.split_heads(v[0], h)), vec![rand_t(&s, rng)])
        }
        "merge_heads" => {
            let h = rng.gen_range(1..4);
            let s = [h * rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..3)];
            (Box::new(move |t, v| t.merge_heads(v[0], h)), vec![rand_t(&s, rng)])
        }
        "softmax" => {
            let s = [rng.gen_range(1..4), rng.gen_range(2..6)];
            (Box::new(|t, v| t.softmax(v[0])), vec![uniform(&s, -3.0, 3.0, rng)])
        }
        "cross_entropy" => {
            let (n, k) = (rng.gen_range(1..5), rng.gen_range(2..6));
            let targets = Tensor::from_fn(&[n, k], |_| 0.0);
            let mut targets = targets;
            for r in 0..n {
                let c = rng.gen_range(0..k);
                targets.data_mut()[r * k + c] = 1.0;
            }
            (
                Box::new(move |t, v| t.cross_entropy(v[0], &targets)),
                vec![uniform(&[n, k], 0.05, 1.0, rng)],
            )
        }
        "mean" => (Box::new(|t, v| t.mean(v[0])), vec![rand_t(&[rng.gen_range(1..7)], rng)]),
        "conv2d" => {
            let n = rng.gen_range(1..3);
            let (h, w) = (rng.gen_range(3..6), rng.gen_range(3..6));
            let (ci, co) = (rng.gen_range(1..3), rng.gen_range(1..3));
            let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let stride = rng.gen_range(1..3);
            let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
            (
                Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, padding)),
                vec![rand_t(&[n, h, w, ci], rng), rand_t(&[kh, kw, ci, co], rng), rand_t(&[co], rng)],
            )
        }
        "max_pool2d" => {
            let s = [rng.gen_range(1..3), rng.gen_range(2..6), rng.gen_range(2..6), rng.gen_range(1..3)];
            let pool = (rng.gen_range(1..3), 2);
            (Box::new(move |t, v| t.max_pool2d(v[0], pool)), vec![rand_t(&s, rng)])
        }
        "global_avg_pool" => {
            let s = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)];
            (Box::new(|t, v| t.global_avg_pool(v[0])), vec![rand_t(&s, rng)])
        }
        "batch_norm_train" => {
            let c = rng.gen_range(1..4);
            let s = [rng.gen_range(2..5), rng.gen_range(1..3), c];
            (
                Box::new(|t, v| Ok(t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train)?.0)),
                vec![rand_t(&s, rng), uniform(&[c], 0.5, 1.5, rng), rand_t(&[c], rng)],
            )
        }
        "batch_norm_infer" => {
            let c = rng.gen_range(1..4);
            let s = [rng.gen_range(1..4), c];
            let stats = RunningStats {
                mean: rand_t(&[c], rng).into_data(),
                var: uniform(&[c], 0.5, 2.0, rng).into_data(),
            };
            (
                Box::new(move |t, v| Ok(t.batch_norm(v[0], v[1], v[2], BatchNormMode::Infer(&stats))?.0)),
                vec![rand_t(&s, rng), uniform(&[c], 0.5, 1.5, rng), rand_t(&[c], rng)],
            )
        }
        "layer_norm" => {
            let d = rng.gen_range(2..6);
            let s = [rng.gen_range(1..4), d];
            (
                Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-6)),
                vec![rand_t(&s, rng), uniform(&[d], 0.5, 1.5, rng), rand_t(&[d], rng)],
            )
        }
        "dropout" => {
            let key = DropoutKey { seed: rng.gen(), layer: 1, step: 0 };
            let s = [rng.gen_range(1..4), rng.gen_range(2..6)];
            (Box::new(move |t, v| t.dropout(v[0], 0.3, true, key)), vec![rand_t(&s, rng)])
        }
        "multi_head_attention" => {
            let heads = rng.gen_range(1..3);
            let d = heads * rng.gen_range(1..3);
            let (n, s) = (rng.gen_range(1..3), rng.gen_range(1..4));
            let mut inputs = vec![rand_t(&[n, s, d], rng)];
            for _ in 0..4 {
                inputs.push(rand_t(&[d, d], rng));
                inputs.push(rand_t(&[d], rng));
            }
            (
                Box::new(move |t, v| {
                    let p = AttentionParams {
                        wq: v[1],
                        bq: v[2],
                        wk: v[3],
                        bk: v[4],
                        wv: v[5],
                        bv: v[6],
                        wo: v[7],
                        bo: v[8],
                    };
                    Ok(t.multi_head_attention(v[0], v[0], v[0], &p, heads)?.output)
                }),
                inputs,
            )
        }
        other => unreachable!("no gradcheck case for {other}"),
    }
}

/// Every differentiable operation covered by the suite.
pub const OPS: &[&str] = &[
    "add",
    "add_bias",
    "scale",
    "relu",
    "flatten",
    "concat_last",
    "dense",
    "bmm",
    "transpose_last2",
    "split_heads",
    "merge_heads",
    "softmax",
    "cross_entropy",
    "mean",
    "conv2d",
    "max_pool2d",
    "global_avg_pool",
    "batch_norm_train",
    "batch_norm_infer",
    "layer_norm",
    "dropout",
    "multi_head_attention",
];

/// Runs [`CASES_PER_OP`] random shapes for every entry of [`OPS`].
pub fn run_suite(seed: u64) -> Result<Vec<OpReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OPS.iter()
        .map(|&op| {
            let mut worst = 0.0f64;
            for _ in 0..CASES_PER_OP {
                let (build, inputs) = case(op, &mut rng);
                worst = worst.max(check_projected(build, inputs, &mut rng)?);
            }
            Ok(OpReport {
                op,
                cases: CASES_PER_OP,
                worst_relative_error: worst,
            })
        })
        .collect()
}
