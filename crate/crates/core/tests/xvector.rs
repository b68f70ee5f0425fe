mod common;

use emoformer_core::matrix::Matrix;
use emoformer_core::mfcc::{extract_mfcc, MfccConfig};
use emoformer_core::xvector::*;
use rand::Rng;

fn random_layer(inp: usize, out: usize, r: &mut rand_chacha::ChaCha8Rng) -> DenseLayer {
    let w = Matrix::from_vec(out, inp, (0..inp * out).map(|_| r.gen_range(-0.5..0.5)).collect()).unwrap();
    DenseLayer::new(w, (0..out).map(|_| r.gen_range(-0.1..0.1)).collect(), Activation::Relu).unwrap()
}

#[test]
fn three_layer_frames_match_loop_oracle() {
    let mut r = common::rng(11);
    let dims = [24, 20, 16, 12];
    let frame: Vec<DenseLayer> = dims.windows(2).map(|d| random_layer(d[0], d[1], &mut r)).collect();
    let model = XVectorModel::new(frame.clone(), vec![random_layer(24, 8, &mut r)]).unwrap();
    let x = Matrix::from_vec(5, 24, (0..120).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let got = frame_embed(&x, &model).unwrap();
    for t in 0..5 {
        let mut h: Vec<f64> = x.row(t).to_vec();
        for layer in &frame {
            let mut next = vec![0.0; layer.output_dim()];
            for o in 0..layer.output_dim() {
                let mut z = layer.bias[o];
                for i in 0..layer.input_dim() {
                    z += layer.weight.get(o, i) * h[i];
                }
                next[o] = if z > 0.0 { z } else { 0.0 };
            }
            h = next;
        }
        for (a, b) in got.row(t).iter().zip(&h) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn shipped_weights_give_finite_512_vectors() {
    let model = XVectorModel::seeded(13, DEFAULT_WEIGHT_SEED);
    let clip = common::random_clip(1.0, &mut common::rng(2), "a");
    let m = extract_mfcc(&clip, &MfccConfig::default()).unwrap();
    let a = extract_xvector(&m, &model).unwrap();
    assert_eq!(a.values.len(), 512);
    assert!(a.values.iter().all(|v| v.is_finite()));
    assert_eq!(a, extract_xvector(&m, &model).unwrap());
}

#[test]
fn tiled_features_give_the_same_embedding() {
    let model = XVectorModel::seeded(13, DEFAULT_WEIGHT_SEED);
    let clip = common::random_clip(0.5, &mut common::rng(3), "a");
    let m = extract_mfcc(&clip, &MfccConfig::default()).unwrap();
    let once = xvector_from_coeffs(&m.coeffs, &model, "a").unwrap();
    let twice = xvector_from_coeffs(&m.coeffs.tile_columns(2), &model, "a").unwrap();
    for (a, b) in once.values.iter().zip(&twice.values) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn too_few_frames_are_rejected() {
    let model = XVectorModel::seeded(13, 1);
    assert!(xvector_from_coeffs(&Matrix::zeros(13, 1), &model, "x").is_err());
}
