use super::*;
use crate::rng::SeedRng;

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn close_all(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (&x, &y) in a.iter().zip(b) {
        close(x, y, tol);
    }
}

#[test]
fn oneplus_values() {
    let mut t = Tape::new();
    let x = t.leaf(vec![0.0, -1000.0, 5.0], vec![3]);
    let y = t.oneplus(x);
    close(t.data(y)[0], 1.693147, 1e-6);
    close(t.data(y)[1], 1.0, 0.0); // no overflow, exact underflow to 1
    close(t.data(y)[2], 6.006715, 1e-6);
    assert!(t.data(y).iter().all(|&v| v >= 1.0));
}

#[test]
fn layer_norm_values() {
    let mut t = Tape::new();
    let x = t.leaf(vec![2.0, 4.0, 6.0], vec![3]);
    let gain = t.leaf(vec![1.0; 3], vec![3]);
    let bias = t.leaf(vec![0.0; 3], vec![3]);
    let y = t.layer_norm(x, gain, bias, 1e-5);
    close_all(t.data(y), &[-1.224745, 0.0, 1.224745], 1e-4);

    let x2 = t.leaf(vec![1.0, -1.0], vec![2]);
    let gain2 = t.leaf(vec![1.0; 2], vec![2]);
    let bias2 = t.leaf(vec![0.0; 2], vec![2]);
    let y2 = t.layer_norm(x2, gain2, bias2, 1e-5);
    close_all(t.data(y2), &[0.999995, -0.999995], 1e-6);
}

#[test]
fn layer_norm_constant_input_gives_bias() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3.5; 4], vec![4]);
    let gain = t.leaf(vec![2.0; 4], vec![4]);
    let bias = t.leaf(vec![0.25, -0.5, 0.0, 1.0], vec![4]);
    let y = t.layer_norm(x, gain, bias, 1e-5);
    close_all(t.data(y), t.data(bias), 1e-12);
}

#[test]
fn softmax_normalizes_and_is_shift_invariant() {
    let mut t = Tape::new();
    let x = t.leaf(vec![0.3, -1.2, 2.0, 0.0], vec![4]);
    let y = t.softmax(x);
    close(t.data(y).iter().sum::<f64>(), 1.0, 1e-12);

    let shifted = t.add_c(x, 100.0);
    let y2 = t.softmax(shifted);
    close_all(t.data(y), t.data(y2), 1e-12);
}

#[test]
fn softmax_chunks_normalizes_per_chunk() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0], vec![6]);
    let y = t.softmax_chunks(x, 3);
    let d = t.data(y);
    close(d[0] + d[1] + d[2], 1.0, 1e-12);
    close(d[3] + d[4] + d[5], 1.0, 1e-12);
    // both chunks are shifts of [1,2,3], so the distributions match
    close_all(&d[0..3], &d[3..6], 1e-12);
}

#[test]
fn backward_quadratic() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 2.0], vec![2]);
    let sq = t.mul(x, x);
    let loss = t.sum(sq);
    t.backward(loss);
    close_all(t.grad(x).unwrap(), &[2.0, 4.0], 1e-12);
}

#[test]
fn backward_softmax_sum_is_zero() {
    let mut t = Tape::new();
    let x = t.leaf(vec![0.3, -1.2, 2.0], vec![3]);
    let y = t.softmax(x);
    let s = t.sum(y);
    t.backward(s);
    for &g in t.grad(x).unwrap() {
        close(g, 0.0, 1e-12);
    }
}

#[test]
fn backward_reuse_accumulates() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3.0], vec![1]);
    let y = t.add(x, x);
    t.backward(y);
    close(t.grad(x).unwrap()[0], 2.0, 1e-12);
}

#[test]
fn backward_sigmoid_at_zero() {
    let mut t = Tape::new();
    let x = t.leaf(vec![0.0], vec![1]);
    let y = t.sigmoid(x);
    close(t.data(y)[0], 0.5, 1e-12);
    t.backward(y);
    close(t.grad(x).unwrap()[0], 0.25, 1e-12);
}

#[test]
fn matvec_small() {
    let mut t = Tape::new();
    let m = t.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
    let v = t.leaf(vec![5.0, 6.0], vec![2]);
    let y = t.matvec(m, v);
    close_all(t.data(y), &[17.0, 39.0], 1e-12);
}

#[test]
fn transpose_roundtrip() {
    let mut t = Tape::new();
    let m = t.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3]);
    let mt = t.transpose(m);
    assert_eq!(t.shape(mt), &[3, 2]);
    let back = t.transpose(mt);
    close_all(t.data(back), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 0.0);
}

#[test]
fn concat_slice_roundtrip() {
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, 2.0], vec![2]);
    let b = t.leaf(vec![3.0], vec![1]);
    let cat = t.concat(&[a, b]);
    close_all(t.data(cat), &[1.0, 2.0, 3.0], 0.0);
    let mid = t.slice(cat, 1, 2);
    close_all(t.data(mid), &[2.0, 3.0], 0.0);
    let s = t.sum(mid);
    t.backward(s);
    close_all(t.grad(a).unwrap(), &[0.0, 1.0], 0.0);
    close_all(t.grad(b).unwrap(), &[1.0], 0.0);
}

#[test]
fn nll_loss_uniform_logits() {
    let mut t = Tape::new();
    let z = t.leaf(vec![0.0, 0.0], vec![2]);
    let l = t.nll_loss(z, 0);
    close(t.data(l)[0], std::f64::consts::LN_2, 1e-12);
    t.backward(l);
    close_all(t.grad(z).unwrap(), &[-0.5, 0.5], 1e-12);
}

#[test]
fn nll_loss_matches_log_softmax() {
    let mut t = Tape::new();
    let z = t.leaf(vec![1.5, -0.3, 0.7], vec![3]);
    let l = t.nll_loss(z, 2);
    let sm = t.softmax(z);
    let expected = -t.data(sm)[2].ln();
    close(t.data(l)[0], expected, 1e-12);
}

#[test]
fn cosine_rows_basis_and_zero_row() {
    let mut t = Tape::new();
    let m = t.leaf(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![3, 2]);
    let k = t.leaf(vec![2.0, 0.0], vec![2]);
    let y = t.cosine_rows(m, k, 1e-8);
    close(t.data(y)[0], 1.0, 1e-7);
    close(t.data(y)[1], 0.0, 1e-12);
    close(t.data(y)[2], 0.0, 0.0); // zero row: similarity 0, no NaN
    let s = t.sum(y);
    t.backward(s);
    assert!(t.grad(m).unwrap().iter().all(|v| v.is_finite()));
    assert!(t.grad(k).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn allocation_orders_by_usage() {
    let mut t = Tape::new();
    let u = t.leaf(vec![0.2, 0.8], vec![2]);
    let a = t.allocation(u);
    close_all(t.data(a), &[0.8, 0.04], 1e-12);
}

#[test]
fn allocation_sum_identity() {
    // sum(a) telescopes to 1 - prod(u)
    let mut rng = SeedRng::new(11);
    for _ in 0..20 {
        let u: Vec<f64> = (0..16).map(|_| rng.uniform()).collect();
        let prod: f64 = u.iter().product();
        let mut t = Tape::new();
        let uid = t.leaf(u, vec![16]);
        let a = t.allocation(uid);
        close(t.data(a).iter().sum::<f64>(), 1.0 - prod, 1e-12);
    }
}

#[test]
fn allocation_all_free_picks_first() {
    let mut t = Tape::new();
    let u = t.leaf(vec![0.0, 0.0, 0.0], vec![3]);
    let a = t.allocation(u);
    close_all(t.data(a), &[1.0, 0.0, 0.0], 0.0);
}

#[test]
fn dropout_mask_statistics() {
    let mut rng = SeedRng::new(42);
    let n = 1_000_000;
    let keep = 0.7;
    let mask = dropout_mask(n, keep, &mut rng);
    let nonzero = mask.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    close(nonzero, keep, 2e-3);
    let mean = mask.iter().sum::<f64>() / n as f64;
    close(mean, 1.0, 5e-3); // inverted scaling keeps the expectation at 1
    for &v in &mask {
        assert!(v == 0.0 || (v - 1.0 / keep).abs() < 1e-12);
    }
}

#[test]
fn dropout_mask_keep_one_is_identity() {
    let mut rng = SeedRng::new(1);
    let mask = dropout_mask(100, 1.0, &mut rng);
    assert!(mask.iter().all(|&v| v == 1.0));
}

#[test]
fn scale_and_broadcast_backward() {
    let mut t = Tape::new();
    let v = t.leaf(vec![1.0, 2.0], vec![2]);
    let m = t.broadcast_rows(v, 3);
    assert_eq!(t.shape(m), &[3, 2]);
    let s = t.sum(m);
    close(t.data(s)[0], 9.0, 1e-12);
    t.backward(s);
    close_all(t.grad(v).unwrap(), &[3.0, 3.0], 1e-12);
}
