use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_row_sum() {
    let mut t = Tape::new();
    let i = t.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let p = t.matmul(i, a).unwrap();
    assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = t.constant(m(&[&[1.0, 2.0, 3.0]]));
    let ones = t.constant(m(&[&[1.0], &[1.0], &[1.0]]));
    let s = t.matmul(r, ones).unwrap();
    assert_eq!(t.value(s).data(), &[6.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    match t.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_is_b_transpose_broadcast() {
    let b = random(&[3, 4], 11);
    let a = random(&[2, 3], 12);
    let mut t = Tape::new();
    let av = t.leaf(a.clone(), true);
    let bv = t.constant(b.clone());
    let p = t.matmul(av, bv).unwrap();
    let s = t.sum_all(p);
    let g = t.backward(s).unwrap().wrt(av);
    for i in 0..2 {
        for k in 0..3 {
            let expected: f64 = (0..4).map(|j| b.at2(k, j)).sum();
            assert!((g.at2(i, k) - expected).abs() < 1e-12);
        }
    }
    let err = grad_check(
        |t, x| {
            let bv = t.constant(b.clone());
            let p = t.matmul(x, bv)?;
            Ok(t.sum_all(p))
        },
        &a,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let s = t.softmax(x, 0).unwrap();
    for v in t.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = t.constant(Tensor::vector(vec![0.0, 2f64.ln()]));
    let s = t.softmax(x, 0).unwrap();
    assert!((t.value(s).data()[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((t.value(s).data()[1] - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_shift_invariant_and_normalized_along_axis() {
    let x = random(&[3, 5], 3);
    let mut t = Tape::new();
    let a = t.constant(x.clone());
    let b = t.add_scalar(a, 123.456);
    for axis in 0..2 {
        let sa = t.softmax(a, axis).unwrap();
        let sb = t.softmax(b, axis).unwrap();
        assert!(t.value(sa).max_abs_diff(t.value(sb)) < 1e-12);
        let total = t.sum_axis(sa, axis).unwrap();
        for v in t.value(total).data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
    let big = t.constant(Tensor::vector(vec![1000.0, 1000.0]));
    let s = t.softmax(big, 0).unwrap();
    assert!(t.value(s).is_finite());
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0), true);
    let y = t.mul(x, x).unwrap();
    assert_eq!(t.backward(y).unwrap().wrt(x).item(), 6.0);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(0.0), true);
    let y = t.sigmoid(x);
    assert_eq!(t.backward(y).unwrap().wrt(x).item(), 0.25);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(2.0), true);
    let c = t.constant(Tensor::scalar(5.0));
    let k = t.tanh(c);
    let y = t.add(x, k).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.wrt(c).item(), 0.0);
    assert_eq!(g.wrt(x).item(), 1.0);
    assert_eq!(g.wrt(y).item(), 1.0);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(t.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_is_bitwise_deterministic() {
    let x = random(&[4, 6], 5);
    let run = || {
        let mut t = Tape::new();
        let v = t.leaf(x.clone(), true);
        let s = t.softmax(v, 1).unwrap();
        let h = t.tanh(s);
        let w = t.transpose(h).unwrap();
        let p = t.matmul(v, w).unwrap();
        let l = t.sum_all(p);
        t.backward(l).unwrap().wrt(v)
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn grad_check_square_sum() {
    let x = random(&[7], 9);
    let err = grad_check(
        |t, x| {
            let s = t.square(x)?;
            Ok(t.sum_all(s))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_sum_has_zero_gradient() {
    let x = random(&[5], 1);
    let mut t = Tape::new();
    let v = t.leaf(x.clone(), true);
    let s = t.softmax(v, 0).unwrap();
    let l = t.sum_all(s);
    let g = t.backward(l).unwrap().wrt(v);
    assert!(g.data().iter().all(|v| v.abs() < 1e-15));
    let err = grad_check(
        |t, x| {
            let s = t.softmax(x, 0)?;
            Ok(t.sum_all(s))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-9);
}

#[test]
fn spline_clamping_is_counted() {
    let grid = Arc::new(SplineGrid::uniform(-1.0, 1.0, 4, 3).unwrap());
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![-2.0, 0.0, 0.5, 7.0]));
    let b = t.spline_basis(x, grid).unwrap();
    assert_eq!(t.shape(b), &[4 * 7]);
    assert_eq!(t.clamp_count(), 2);
}

#[test]
fn layer_norm_output_is_normalized() {
    let x = random(&[3, 8], 2);
    let mut t = Tape::new();
    let v = t.constant(x);
    let g = t.constant(Tensor::full(&[8], 1.0));
    let b = t.constant(Tensor::zeros(&[8]));
    let y = t.layer_norm(v, g, b).unwrap();
    for r in 0..3 {
        let row = t.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn slice_concat_roundtrip() {
    let x = random(&[3, 6], 8);
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let a = t.slice(v, 1, 0, 2).unwrap();
    let b = t.slice(v, 1, 2, 4).unwrap();
    let c = t.concat(&[a, b], 1).unwrap();
    assert_eq!(t.value(c), &x);
    assert!(t.slice(v, 1, 5, 2).is_err());
}
