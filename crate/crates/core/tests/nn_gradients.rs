mod common;

use common::{gradient_suite, naive_conv2d, oracle_suite, random_tensor};
use rand::SeedableRng;
use routecast::nn::{self, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    let cases = gradient_suite(11, 5);
    let mut ops: Vec<_> = cases.iter().map(|c| c.op).collect();
    ops.sort();
    ops.dedup();
    assert_eq!(ops.len(), 19);
    let worst = cases.iter().map(|c| c.err).fold(0.0, f64::max);
    eprintln!("worst relative error {worst:e}");
    for c in &cases {
        assert!(c.err < 1e-4, "{} {} rel err {:e}", c.op, c.shape, c.err);
    }
}

#[test]
fn fast_kernels_equal_loop_reference_bitwise() {
    for c in oracle_suite(5, 30) {
        assert!(c.bitwise, "{} {}", c.op, c.shape);
    }
}

#[test]
fn single_precision_tracks_double() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, &[1, 3, 9, 9]);
    let w = random_tensor(&mut rng, &[4, 3, 4, 4]);
    let d = naive_conv2d(&x, &w, None, 2, 1);
    let f = nn::conv2d(&x.cast::<f32>(), &w.cast::<f32>(), None, 2, 1).unwrap();
    for (a, b) in f.data().iter().zip(d.data()) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
    let dy: Tensor<f32> = Tensor::full(f.shape(), 1.0);
    let g32 = nn::conv2d_backward(&x.cast::<f32>(), &w.cast::<f32>(), &dy, 2, 1, true).unwrap();
    let g64 = nn::conv2d_backward(&x, &w, &dy.cast::<f64>(), 2, 1, true).unwrap();
    let rel = common::max_rel_err(&g32.dw.cast::<f64>().into_data(), g64.dw.data());
    assert!(rel < 1e-2);
}
