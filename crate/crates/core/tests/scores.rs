//! Joint and distribution metrics.

use hmt_core::mano::Joints21;
use hmt_core::metrics::{frechet_distance, mpjpe, mwte, pa_mpjpe, retrieval_topk};
use hmt_core::rotations::Vec3;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(rng: &mut ChaCha8Rng, n: usize) -> Vec<Joints21> {
    (0..n)
        .map(|_| {
            Joints21(std::array::from_fn(|_| {
                Vec3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            }))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn joint_errors_are_symmetric_and_order_free(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = frames(&mut rng, n);
        let b = frames(&mut rng, n);
        let near = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
        prop_assert!(near(mpjpe(&a, &b).unwrap(), mpjpe(&b, &a).unwrap()));
        prop_assert!(near(mwte(&a, &b).unwrap(), mwte(&b, &a).unwrap()));
        let (ra, rb): (Vec<_>, Vec<_>) = a.iter().cloned().zip(b.iter().cloned()).rev().unzip();
        prop_assert!(near(mpjpe(&a, &b).unwrap(), mpjpe(&ra, &rb).unwrap()));
        prop_assert!((pa_mpjpe(&a, &b).unwrap() - pa_mpjpe(&ra, &rb).unwrap()).abs() < 1e-8);
        prop_assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        // the wrist error is the mean wrist distance, reported in cm
        let wrist = a.iter().zip(&b).map(|(p, q)| (p.0[0] - q.0[0]).norm()).sum::<f64>() * 100.0 / n as f64;
        prop_assert!(near(mwte(&a, &b).unwrap(), wrist));
    }

    #[test]
    fn frechet_is_zero_on_itself_and_never_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((40, 4), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((30, 4), |_| rng.random_range(-1.0..1.5));
        prop_assert!(frechet_distance(a.view(), a.view()).unwrap().abs() < 1e-8);
        prop_assert!(frechet_distance(a.view(), b.view()).unwrap() > -1e-8);
    }
}

#[test]
fn retrieval_finds_exact_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Array2::from_shape_fn((10, 6), |_| rng.random_range(-1.0..1.0));
    let pairs: Vec<usize> = (0..10).collect();
    assert_eq!(retrieval_topk(g.view(), g.view(), &pairs, 1).unwrap(), 1.0);
    assert!(retrieval_topk(g.view(), g.view(), &pairs, 0).is_err());
}

#[test]
fn mismatched_lengths_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = frames(&mut rng, 2);
    assert!(mpjpe(&a, &a[..1]).is_err());
    assert!(pa_mpjpe(&[], &[]).is_err());
}
