mod common;

use mstok::codec::{encode, CodecCheckpoint, ScaleConfig};
use mstok::generator::remask_count;
use mstok::harness::{feature_frechet, retrieval, FeatureVector};
use mstok::motiondata::{decompose, reassemble, Skeleton, DEFAULT_FPS};
use mstok::numerics::{conv1d, interp_linear, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(rows: usize, cols: usize, values: &[f64]) -> Tensor {
    Tensor::new(&[rows, cols], values[..rows * cols].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(
        t in 4usize..12,
        stride in 1usize..3,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        xs in prop::collection::vec(-1.0f64..1.0, 2 * 12 * 3),
        ks in prop::collection::vec(-1.0f64..1.0, 3 * 3 * 2),
    ) {
        let x = tensor(t, 3, &xs);
        let y = tensor(t, 3, &xs[12 * 3..]);
        let k = Tensor::new(&[3, 3, 2], ks).unwrap();
        let mix = Tensor::new(&[t, 3], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv1d(&mix, &k, stride, 1).unwrap();
        let (cx, cy) = (conv1d(&x, &k, stride, 1).unwrap(), conv1d(&y, &k, stride, 1).unwrap());
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-10);
        }
    }

    #[test]
    fn interp_through_refined_grid_is_exact_on_ramps(t in 2usize..40, d in 1usize..4, slope in -20i32..20, start in -50i32..50) {
        let x = Tensor::from_fn(t, d, |r, c| f64::from(start) + f64::from(slope) * r as f64 + c as f64);
        let fine = interp_linear(&x, 2 * t - 1).unwrap();
        prop_assert_eq!(interp_linear(&fine, t).unwrap(), x);
    }

    #[test]
    fn decompose_then_reassemble_is_identity(seed in any::<u64>(), frames in 1usize..20, scales in prop::sample::select(vec![1usize, 2, 4, 6, 8])) {
        let x = common::random_motion(&mut ChaCha8Rng::seed_from_u64(seed), frames);
        let config = ScaleConfig::preset(scales, 64).unwrap();
        let parts: Vec<_> = config.scales.iter().map(|s| s.parts).collect();
        let features = decompose(&x, &Skeleton::standard(), &parts).unwrap();
        prop_assert!(features.windows(2).all(|w| w[0].dim() <= w[1].dim()));
        prop_assert_eq!(reassemble(&features, frames, DEFAULT_FPS).unwrap(), x);
    }

    #[test]
    fn frechet_is_symmetric(seed in any::<u64>(), na in 20usize..40, nb in 20usize..40) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = |n: usize, shift: f64| -> Vec<FeatureVector> {
            (0..n).map(|_| FeatureVector((0..18).map(|_| rng.gen_range(-1.0..1.0) + shift).collect())).collect()
        };
        let a = set(na, 0.0);
        let b = set(nb, 0.3);
        let ab = feature_frechet(&a, &b).unwrap();
        let ba = feature_frechet(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9, "{} vs {}", ab, ba);
    }

    #[test]
    fn recall_is_nested(seed in any::<u64>(), n in 1usize..30) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = || -> Vec<FeatureVector> { (0..n).map(|_| FeatureVector(vec![rng.gen_range(0..3) as f64, rng.gen()])).collect() };
        let (q, g) = (set(), set());
        let r = retrieval(&q, &g, &[1, 2, 3]).unwrap();
        prop_assert!(r.recall[0].1 <= r.recall[1].1 && r.recall[1].1 <= r.recall[2].1);
        prop_assert!(r.avg_rank >= 1.0 && r.avg_rank <= n as f64);
    }

    #[test]
    fn remasking_ends_at_zero_and_never_grows(iterations in 1usize..12, n in 0usize..1000) {
        prop_assert_eq!(remask_count(iterations, iterations, n).unwrap(), 0);
        for k in 1..iterations {
            prop_assert!(remask_count(k + 1, iterations, n).unwrap() <= remask_count(k, iterations, n).unwrap());
            prop_assert!(remask_count(k, iterations, n).unwrap() <= n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn encoding_is_a_pure_function(seed in any::<u64>()) {
        let codec = CodecCheckpoint::init(ScaleConfig::preset(6, 32).unwrap(), 5).unwrap();
        let x = common::random_motion(&mut ChaCha8Rng::seed_from_u64(seed), 32);
        let y = encode(&x, &codec).unwrap();
        prop_assert_eq!(encode(&x, &codec.clone()).unwrap(), y);
    }
}
