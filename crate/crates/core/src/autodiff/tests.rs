use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::check_gradients;
use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_hand_cases() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = tape.constant(Tensor::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]));
    let c = tape.matmul(eye, b).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

    let row = tape.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
    let col = tape.constant(Tensor::from_rows(&[&[3.0], &[4.0]]));
    let dot = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(dot).shape(), &[1, 1]);
    assert_eq!(tape.value(dot).item(), 11.0);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let params = [random(&[3, 4], 1), random(&[4, 2], 2), random(&[3, 2], 3)];
    let check = check_gradients(&params, 1e-6, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        let w = t.mul(c, v[2])?;
        Ok(t.sum(w))
    })
    .unwrap();
    assert!(check.max_rel_err < 1e-6, "{check:?}");
}

#[test]
fn conv_identity_kernel() {
    let mut tape = Tape::new();
    let x = random(&[1, 3, 3], 4);
    let input = tape.constant(x.clone());
    let k = tape.constant(Tensor::filled(&[1, 1, 1, 1], 1.0));
    let y = tape.conv2d(input, k, 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv_all_ones_counts_neighbours() {
    let mut tape = Tape::new();
    let input = tape.constant(Tensor::filled(&[1, 3, 3], 1.0));
    let k = tape.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
    let y = tape.conv2d(input, k, 1, 1).unwrap();
    let out = tape.value(y).data();
    assert_eq!(out[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(out[corner], 4.0);
    }
    assert_eq!(out[1], 6.0);
}

#[test]
fn conv_rejects_fractional_output() {
    let mut tape = Tape::new();
    let input = tape.constant(Tensor::zeros(&[1, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(matches!(tape.conv2d(input, k, 2, 0), Err(Error::Dimension(_))));
    let even = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(matches!(tape.conv2d(input, even, 1, 0), Err(Error::Dimension(_))));
}

#[test]
fn conv_stride_two_shape() {
    let mut tape = Tape::new();
    let input = tape.constant(Tensor::zeros(&[2, 5, 5]));
    let k = tape.constant(Tensor::zeros(&[3, 2, 3, 3]));
    let y = tape.conv2d(input, k, 2, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[3, 3, 3]);
}

#[test]
fn conv_gradient_matches_finite_differences() {
    for (stride, padding, hw) in [(1, 1, 5), (2, 1, 5), (1, 0, 4)] {
        let params = [
            random(&[2, hw, hw], 5),
            random(&[3, 2, 3, 3], 6),
            random(&[3], 7),
        ];
        let out_hw = (hw + 2 * padding - 3) / stride + 1;
        let weights = random(&[3, out_hw, out_hw], 8);
        let check = check_gradients(&params, 1e-6, |t, v| {
            let y = t.conv2d(v[0], v[1], stride, padding)?;
            let y = t.add_channel_bias(y, v[2])?;
            let w = t.constant(weights.clone());
            let z = t.mul(y, w)?;
            Ok(t.sum(z))
        })
        .unwrap();
        assert!(check.max_rel_err < 1e-5, "stride {stride}: {check:?}");
    }
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::filled(&[4, 2, 2], 0.7));
    let p = tape.softmax(z).unwrap();
    assert!(tape.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn softmax_is_stable_for_huge_logits() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![2, 1], vec![1000.0, -1000.0]).unwrap());
    let p = tape.softmax(z).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 0.0]);
}

#[test]
fn cross_entropy_of_one_hot_is_zero() {
    let mut tape = Tape::new();
    let probs = tape.constant(Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let loss = tape.cross_entropy(probs, &[0, 2]).unwrap();
    assert_eq!(tape.value(loss).item(), 0.0);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let mut tape = Tape::new();
    let probs = tape.constant(Tensor::filled(&[3, 2], 1.0 / 3.0));
    assert!(matches!(tape.cross_entropy(probs, &[0, 3]), Err(Error::Validation(_))));
    let logits = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(
        tape.softmax_cross_entropy(logits, &[5, 0]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn softmax_cross_entropy_gradients_match_finite_differences() {
    let labels: Vec<usize> = (0..16).map(|i| (i * 7) % 3).collect();
    let params = [random(&[3, 4, 4], 9)];
    let composed = check_gradients(&params, 1e-6, |t, v| {
        let p = t.softmax(v[0])?;
        t.cross_entropy(p, &labels)
    })
    .unwrap();
    assert!(composed.max_rel_err < 1e-6, "{composed:?}");

    let fused = check_gradients(&params, 1e-6, |t, v| t.softmax_cross_entropy(v[0], &labels)).unwrap();
    assert!(fused.max_rel_err < 1e-6, "{fused:?}");
}

#[test]
fn fused_and_composed_cross_entropy_agree() {
    let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let mut tape = Tape::new();
    let z = tape.constant(random(&[3, 4, 4], 10));
    let p = tape.softmax(z).unwrap();
    let a = tape.cross_entropy(p, &labels).unwrap();
    let b = tape.softmax_cross_entropy(z, &labels).unwrap();
    assert!((tape.value(a).item() - tape.value(b).item()).abs() < 1e-12);
}

#[test]
fn pooling_upsampling_concat_relu_gradients() {
    let params = [random(&[2, 4, 4], 11), random(&[1, 4, 4], 12)];
    let weights = random(&[3, 4, 4], 13);
    let check = check_gradients(&params, 1e-6, |t, v| {
        let pooled = t.max_pool2(v[0])?;
        let up = t.upsample2(pooled)?;
        let r = t.relu(up);
        let cat = t.concat_channels(r, v[1])?;
        let w = t.constant(weights.clone());
        let z = t.mul(cat, w)?;
        let z = t.scale(z, 0.5);
        let z2 = t.add(z, cat)?;
        Ok(t.sum(z2))
    })
    .unwrap();
    assert!(check.max_rel_err < 1e-6, "{check:?}");
}

#[test]
fn max_pool_needs_even_dims() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4]));
    assert!(matches!(tape.max_pool2(x), Err(Error::Dimension(_))));
}

#[test]
fn dropout_zero_rate_and_inactive_are_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let x = tape.constant(random(&[2, 3, 3], 14));
    let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let z = tape.dropout(x, 0.7, false, &mut rng).unwrap();
    assert_eq!(tape.value(z), tape.value(x));
}

#[test]
fn dropout_rejects_rate_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(tape.dropout(x, 1.0, true, &mut rng), Err(Error::Validation(_))));
}

#[test]
fn dropout_preserves_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(&[1_000_000], 1.0));
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let mean = tape.value(y).data().iter().sum::<f64>() / 1e6;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
}

#[test]
fn dropout_gradient_uses_saved_mask() {
    let params = [random(&[3, 4, 4], 15)];
    let check = check_gradients(&params, 1e-6, |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = t.dropout(v[0], 0.3, true, &mut rng)?;
        let sq = t.mul(d, d)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    assert!(check.max_rel_err < 1e-6, "{check:?}");
}

#[test]
fn backward_of_sum_and_half_norm() {
    let theta = random(&[5], 16);
    let mut tape = Tape::new();
    let v = tape.param(theta.clone());
    let s = tape.sum(v);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap().data(), &[1.0; 5]);

    let mut tape = Tape::new();
    let v = tape.param(theta.clone());
    let sq = tape.mul(v, v).unwrap();
    let half = tape.scale(sq, 0.5);
    let loss = tape.sum(half);
    let g = tape.backward(loss).unwrap();
    for (a, b) in g.get(v).unwrap().data().iter().zip(theta.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let v = tape.param(Tensor::zeros(&[3]));
    assert!(matches!(tape.backward(v), Err(Error::Usage(_))));
}

#[test]
fn constants_get_no_gradient() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::filled(&[2], 2.0));
    let b = tape.param(Tensor::filled(&[2], 3.0));
    let p = tape.mul(a, b).unwrap();
    let s = tape.sum(p);
    let g = tape.backward(s).unwrap();
    assert!(g.get(a).is_none());
    assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn shared_node_gradient_is_summed_over_consumers() {
    // loss = sum(x) + sum(3x) -> d/dx = 4
    let mut tape = Tape::new();
    let x = tape.param(Tensor::filled(&[3], 1.5));
    let s1 = tape.sum(x);
    let t3 = tape.scale(x, 3.0);
    let s2 = tape.sum(t3);
    let loss = tape.add(s1, s2).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[4.0; 3]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(seed in 0u64..10_000, c in 2usize..6, px in 1usize..20) {
        let mut tape = Tape::new();
        let mut t = random(&[c, px], seed);
        t.data_mut().iter_mut().for_each(|v| *v *= 30.0);
        let z = tape.constant(t);
        let p = tape.softmax(z).unwrap();
        let probs = tape.value(p).data();
        for i in 0..px {
            let total: f64 = (0..c).map(|k| probs[k * px + i]).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!((0..c).all(|k| probs[k * px + i] >= 0.0));
        }
    }

    #[test]
    fn identity_kernel_is_identity(seed in 0u64..10_000, c in 1usize..4, h in 1usize..9, w in 1usize..9) {
        let x = random(&[c, h, w], seed);
        let mut kernel = Tensor::zeros(&[c, c, 3, 3]);
        for ch in 0..c {
            kernel.data_mut()[((ch * c + ch) * 3 + 1) * 3 + 1] = 1.0;
        }
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let k = tape.constant(kernel);
        let y = tape.conv2d(input, k, 1, 1).unwrap();
        prop_assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn dropout_is_reproducible(seed in 0u64..10_000, rate in 0.0f64..0.95) {
        let x = random(&[64], 17);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let y = tape.dropout(v, rate, true, &mut rng).unwrap();
            tape.value(y).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
