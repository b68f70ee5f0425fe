use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Identifies one dropout draw. Masks are a pure function of the key and the
/// element index, so they do not depend on evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub layer: u64,
    pub step: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DropoutKey {
    /// Uniform draw in `[0, 1)` for element `index`.
    pub fn uniform(&self, index: u64) -> f64 {
        let h = splitmix64(
            splitmix64(splitmix64(splitmix64(self.seed) ^ self.layer) ^ self.step) ^ index,
        );
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Tape {
    /// Inverted dropout. Identity when `train` is false or `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, key: DropoutKey) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let vx = self.value(x);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..vx.numel() as u64)
            .map(|i| if key.uniform(i) < rate { 0.0 } else { keep })
            .collect();
        let out = Tensor::new(vx.shape(), vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
        self.push(
            "dropout",
            out,
            &[x],
            Box::new(move |g, _, _, _| {
                let d = g.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                vec![Some(Tensor::new(g.shape(), d).unwrap())]
            }),
        )
    }
}
