//! Forward-value checks for each op against independent hand or
//! brute-force evaluations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorlab::{Graph, Tensor, IGNORE_INDEX};

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "index {i}: actual {a} vs expected {e}"
        );
    }
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new(true);
    let i2 = g.input(Tensor::eye(2)).unwrap();
    let m = g
        .input(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let out = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_orthogonal_rows() {
    let mut g = Graph::new(true);
    let a = g.input(Tensor::row(&[1.0, 0.0])).unwrap();
    let b = g.input(Tensor::col(&[0.0, 5.0])).unwrap();
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[0.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (p, q, r) = (3, 4, 2);
    let a: Vec<f64> = (0..p * q).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..q * r).map(|_| rng.gen_range(-2.0..2.0)).collect();

    // Independent oracle: naive j-outer triple loop.
    let mut expected = vec![0.0; p * r];
    for j in 0..r {
        for i in 0..p {
            let mut s = 0.0;
            for k in 0..q {
                s += a[i * q + k] * b[k * r + j];
            }
            expected[i * r + j] = s;
        }
    }

    let mut g = Graph::new(true);
    let na = g.input(Tensor::new(p, q, a).unwrap()).unwrap();
    let nb = g.input(Tensor::new(q, r, b).unwrap()).unwrap();
    let out = g.matmul(na, nb).unwrap();
    assert_close(g.value(out).data(), &expected, 1e-12);
}

#[test]
fn matmul_shape_mismatch_is_an_error() {
    let mut g = Graph::new(true);
    let a = g.input(Tensor::zeros(2, 3)).unwrap();
    let b = g.input(Tensor::zeros(2, 3)).unwrap();
    assert!(g.matmul(a, b).is_err());
}

#[test]
fn softmax_symmetry() {
    let mut g = Graph::new(true);
    let x = g.input(Tensor::row(&[0.0, 0.0])).unwrap();
    let s = g.softmax_rows(x, None).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_is_overflow_safe() {
    let mut g = Graph::new(true);
    let x = g.input(Tensor::row(&[1000.0, 1000.0])).unwrap();
    let s = g.softmax_rows(x, None).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_matches_exp_normalize_oracle() {
    // High-precision scalar evaluation of softmax([1, 2, 3]).
    let exps = [1.0f64.exp(), 2.0f64.exp(), 3.0f64.exp()];
    let z: f64 = exps.iter().sum();
    let expected: Vec<f64> = exps.iter().map(|e| e / z).collect();

    let mut g = Graph::new(true);
    let x = g.input(Tensor::row(&[1.0, 2.0, 3.0])).unwrap();
    let s = g.softmax_rows(x, None).unwrap();
    assert_close(g.value(s).data(), &expected, 1e-12);
}

#[test]
fn masked_softmax_zeroes_masked_positions() {
    let mut g = Graph::new(true);
    let x = g.input(Tensor::row(&[3.0, 1.0, 2.0])).unwrap();
    let mask = tensorlab::Mask::new(vec![true, false, true]);
    let s = g.softmax_rows(x, Some(mask)).unwrap();
    let v = g.value(s).data();
    assert_eq!(v[1], 0.0);
    assert!((v[0] + v[2] - 1.0).abs() < 1e-12);

    // Fully masked row falls back to all zeros.
    let x2 = g.input(Tensor::row(&[3.0, 1.0])).unwrap();
    let s2 = g
        .softmax_rows(x2, Some(tensorlab::Mask::new(vec![false, false])))
        .unwrap();
    assert_eq!(g.value(s2).data(), &[0.0, 0.0]);
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::new(true);
    let x = g.input(Tensor::scalar(0.0)).unwrap();
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s).item(), 0.5);
}

#[test]
fn mean_pool_last_axis() {
    let mut g = Graph::new(true);
    let x = g.input(Tensor::row(&[1.0, 3.0])).unwrap();
    let m = g.mean_pool(x, 1).unwrap();
    assert_eq!(g.value(m).shape(), (1, 1));
    assert_eq!(g.value(m).item(), 2.0);
}

#[test]
fn mean_pool_rows_axis() {
    let mut g = Graph::new(true);
    let x = g
        .input(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let m = g.mean_pool(x, 0).unwrap();
    assert_eq!(g.value(m).data(), &[2.0, 3.0]);
}

#[test]
fn cross_entropy_uniform_logits_is_ln_v() {
    let mut g = Graph::new(true);
    let logits = g.input(Tensor::zeros(2, 4)).unwrap();
    let loss = g.cross_entropy(logits, vec![1, 3], IGNORE_INDEX).unwrap();
    assert!((g.value(loss).item() - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_respects_ignore_index() {
    let mut g = Graph::new(true);
    let logits = g
        .input(Tensor::new(2, 3, vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0]).unwrap())
        .unwrap();
    // Only the first row is scored.
    let loss_first = g
        .cross_entropy(logits, vec![0, IGNORE_INDEX], IGNORE_INDEX)
        .unwrap();
    let logits_single = g
        .input(Tensor::new(1, 3, vec![5.0, 0.0, 0.0]).unwrap())
        .unwrap();
    let loss_single = g
        .cross_entropy(logits_single, vec![0], IGNORE_INDEX)
        .unwrap();
    assert_eq!(g.value(loss_first).item(), g.value(loss_single).item());
}

#[test]
fn cross_entropy_rejects_out_of_range_label() {
    let mut g = Graph::new(true);
    let logits = g.input(Tensor::zeros(1, 3)).unwrap();
    assert!(g.cross_entropy(logits, vec![3], IGNORE_INDEX).is_err());
}

#[test]
fn embed_gathers_rows() {
    let mut g = Graph::new(true);
    let table = g
        .input(Tensor::new(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap())
        .unwrap();
    let e = g.embed(table, vec![2, 0, 2]).unwrap();
    assert_eq!(g.value(e).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
    assert!(g.embed(table, vec![3]).is_err());
}

#[test]
fn layer_norm_normalizes_rows() {
    let mut g = Graph::new(true);
    let x = g
        .input(Tensor::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let gain = g.input(Tensor::full(1, 4, 1.0)).unwrap();
    let bias = g.input(Tensor::zeros(1, 4)).unwrap();
    let y = g.layer_norm(x, gain, bias).unwrap();
    let v = g.value(y).data();
    let mean: f64 = v.iter().sum::<f64>() / 4.0;
    let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-4); // eps slightly deflates the variance
}

#[test]
fn checked_mode_rejects_non_finite() {
    let mut g = Graph::new(true);
    assert!(g.input(Tensor::scalar(f64::NAN)).is_err());

    let mut unchecked = Graph::new(false);
    assert!(unchecked.input(Tensor::scalar(f64::NAN)).is_ok());
}

#[test]
fn scale_cols_and_mul_col_oracle() {
    let mut g = Graph::new(true);
    let a = g
        .input(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let w = g.input(Tensor::col(&[10.0, 0.5])).unwrap();
    let sc = g.scale_cols(a, w).unwrap();
    assert_eq!(g.value(sc).data(), &[10.0, 1.0, 30.0, 2.0]);

    let col = g.input(Tensor::col(&[2.0, -1.0])).unwrap();
    let mc = g.mul_col(col, a).unwrap();
    assert_eq!(g.value(mc).data(), &[2.0, 4.0, -3.0, -4.0]);
}
