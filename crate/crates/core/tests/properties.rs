use emoformer_core::dataset::EmotionSet;
use emoformer_core::matrix::Matrix;
use emoformer_core::metrics::evaluate_predictions;
use emoformer_core::mfcc::{hz_to_mel, mel_to_hz};
use emoformer_core::xvector::stats_pool;
use proptest::prelude::*;

fn labels(k: usize) -> EmotionSet {
    EmotionSet::new((0..k).map(|i| format!("e{i}")).collect()).unwrap()
}

proptest! {
    #[test]
    fn stats_pool_ignores_frame_order(rows in 2usize..12, seed in any::<u64>()) {
        let cols = 4;
        let data: Vec<f64> = (0..rows * cols).map(|i| ((i as u64 ^ seed) % 97) as f64 / 7.0 - 5.0).collect();
        let m = Matrix::from_vec(rows, cols, data).unwrap();
        let mut reversed = Matrix::zeros(rows, cols);
        for r in 0..rows {
            reversed.row_mut(r).copy_from_slice(m.row(rows - 1 - r));
        }
        let (a, b) = (stats_pool(&m).unwrap(), stats_pool(&reversed).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn macro_f1_is_invariant_to_relabeling(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let set = labels(5);
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let tp: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
        let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let a = evaluate_predictions(&t, &p, &set).unwrap();
        let b = evaluate_predictions(&tp, &pp, &set).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn confusion_entries_sum_to_count(pairs in prop::collection::vec((0usize..7, 0usize..7), 1..80)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let m = evaluate_predictions(&t, &p, &labels(7)).unwrap();
        prop_assert_eq!(m.confusion.iter().flatten().sum::<usize>(), t.len());
        let trace: usize = (0..7).map(|i| m.confusion[i][i]).sum();
        prop_assert_eq!(m.accuracy, trace as f64 / t.len() as f64);
        for c in &m.per_class {
            prop_assert!((0.0..=1.0).contains(&c.precision) && (0.0..=1.0).contains(&c.recall) && (0.0..=1.0).contains(&c.f1));
        }
    }

    #[test]
    fn mel_round_trip(f in 0.0f64..24000.0) {
        let back = mel_to_hz(hz_to_mel(f));
        prop_assert!((back - f).abs() <= 1e-6 * f.max(1.0));
    }
}
