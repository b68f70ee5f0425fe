use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};

/// Projection weights of one multi-head attention block, each `[D, D]` with `[D]` bias.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

pub struct AttentionOutput {
    /// `[N, S, D]`
    pub output: Var,
    /// `[N * heads, S, S]` row-stochastic attention weights.
    pub weights: Var,
}

impl Tape {
    /// Scaled dot-product attention over `heads` heads of width `D / heads`,
    /// followed by the output projection.
    pub fn multi_head_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        params: &AttentionParams,
        heads: usize,
    ) -> Result<AttentionOutput> {
        let d = self.value(q).last_dim();
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Config(format!(
                "attention dimension {d} is not divisible by {heads} heads"
            )));
        }
        let qp = self.dense(q, params.wq, Some(params.bq))?;
        let kp = self.dense(k, params.wk, Some(params.bk))?;
        let vp = self.dense(v, params.wv, Some(params.bv))?;
        let qh = self.split_heads(qp, heads)?;
        let kh = self.split_heads(kp, heads)?;
        let vh = self.split_heads(vp, heads)?;
        let kt = self.transpose_last2(kh)?;
        let scores = self.bmm(qh, kt)?;
        let scaled = self.scale(scores, 1.0 / ((d / heads) as f64).sqrt())?;
        let weights = self.softmax(scaled)?;
        let context = self.bmm(weights, vh)?;
        let merged = self.merge_heads(context, heads)?;
        let output = self.dense(merged, params.wo, Some(params.bo))?;
        Ok(AttentionOutput { output, weights })
    }
}
