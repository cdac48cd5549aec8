use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::{check_gradients, DEFAULT_STEP};

fn arr(shape: &[usize], data: &[f64]) -> DiffArray {
    DiffArray::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> DiffArray {
    let n = numel(shape);
    arr(shape, &(0..n).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<_>>())
}

#[test]
fn exp_of_zeros_is_ones() {
    let mut t = Tape::new();
    let y = t.exp(&arr(&[2], &[0.0, 0.0])).unwrap();
    assert_eq!(y.data(), &[1.0, 1.0]);
    assert!(t.is_empty(), "untracked inputs must not be recorded");
}

#[test]
fn add_vectors() {
    let mut t = Tape::new();
    let y = t.add(&arr(&[2], &[1.0, 2.0]), &arr(&[2], &[3.0, 4.0])).unwrap();
    assert_eq!(y.data(), &[4.0, 6.0]);
}

#[test]
fn silu_matches_scalar_oracle() {
    let oracle = 1.0 / (1.0 + (-1.0f64).exp());
    let mut t = Tape::new();
    let y = t.silu(&DiffArray::scalar(1.0)).unwrap();
    assert_abs_diff_eq!(y.item().unwrap(), oracle, epsilon = 1e-15);
    assert_abs_diff_eq!(oracle, 0.731058, epsilon = 1e-6);
}

#[test]
fn trailing_broadcast_and_mismatch_error() {
    let mut t = Tape::new();
    let x = arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let y = t.add(&x, &arr(&[3], &[10.0, 20.0, 30.0])).unwrap();
    assert_eq!(y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let err = t.add(&x, &arr(&[2], &[1.0, 1.0])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
}

#[test]
fn matmul_examples() {
    let mut t = Tape::new();
    let eye = arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let m = arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(t.matmul(&eye, &m).unwrap().data(), m.data());
    let r = t.matmul(&arr(&[1, 2], &[1.0, 2.0]), &arr(&[2, 1], &[3.0, 4.0])).unwrap();
    assert_eq!(r.shape(), &[1, 1]);
    assert_eq!(r.data(), &[11.0]);
    assert!(matches!(
        t.matmul(&m, &arr(&[3, 1], &[1.0, 2.0, 3.0])),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn matmul_gradient_wrt_lhs() {
    let a = arr(&[1, 2], &[1.0, 1.0]);
    let b = arr(&[2, 1], &[2.0, 5.0]);
    let mut t = Tape::new();
    let la = t.param(&a).unwrap();
    let y = t.matmul(&la, &b).unwrap();
    let loss = t.sum_all(&y).unwrap();
    let g = t.backward(&loss).unwrap();
    assert_eq!(g.get(&la).unwrap(), &[2.0, 5.0]);
    // finite-difference oracle
    let report = check_gradients(
        |t, xs| {
            let y = t.matmul(&xs[0], &xs[1])?;
            t.sum_all(&y)
        },
        &[a, b],
        DEFAULT_STEP,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn nlm_loop_oracle(
    hist: &DiffArray,
    w1: &DiffArray,
    b1: &DiffArray,
    w2: &DiffArray,
    b2: &DiffArray,
    act: Activation,
) -> Vec<f64> {
    let (d, m, h) = (w1.shape()[0], w1.shape()[1], w1.shape()[2]);
    (0..d)
        .map(|n| {
            let mut z = b2.at(&[n]);
            for j in 0..h {
                let mut u = b1.at(&[n, j]);
                for k in 0..m {
                    u += w1.at(&[n, k, j]) * hist.at(&[n, k]);
                }
                z += w2.at(&[n, j]) * act.apply(u);
            }
            z
        })
        .collect()
}

#[test]
fn nlm_zero_weights_emit_bias() {
    let (d, m, h) = (4, 3, 2);
    let mut t = Tape::new();
    let hist = arr(&[d, m], &[0.7; 12]);
    let z = t
        .batched_nlm_contract(
            &hist,
            &DiffArray::zeros([d, m, h]),
            &DiffArray::full([d, h], 0.3),
            &DiffArray::zeros([d, h]),
            &DiffArray::full([d], 2.5),
            Activation::Silu,
        )
        .unwrap();
    assert_eq!(z.data(), &[2.5; 4]);
}

#[test]
fn nlm_identity_unit_passes_input() {
    let mut t = Tape::new();
    let z = t
        .batched_nlm_contract(
            &arr(&[1, 1], &[-0.42]),
            &arr(&[1, 1, 1], &[1.0]),
            &arr(&[1, 1], &[0.0]),
            &arr(&[1, 1], &[1.0]),
            &arr(&[1], &[0.0]),
            Activation::Identity,
        )
        .unwrap();
    assert_eq!(z.data(), &[-0.42]);
}

#[test]
fn nlm_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (d, m, h) = (3, 4, 2);
    for act in [Activation::Silu, Activation::Tanh, Activation::Identity] {
        let hist = random(&mut rng, &[d, m]);
        let w1 = random(&mut rng, &[d, m, h]);
        let b1 = random(&mut rng, &[d, h]);
        let w2 = random(&mut rng, &[d, h]);
        let b2 = random(&mut rng, &[d]);
        let mut t = Tape::new();
        let z = t.batched_nlm_contract(&hist, &w1, &b1, &w2, &b2, act).unwrap();
        let want = nlm_loop_oracle(&hist, &w1, &b1, &w2, &b2, act);
        for (a, b) in z.data().iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn nlm_dimension_mismatch() {
    let mut t = Tape::new();
    let err = t.batched_nlm_contract(
        &DiffArray::zeros([3, 4]),
        &DiffArray::zeros([3, 5, 2]),
        &DiffArray::zeros([3, 2]),
        &DiffArray::zeros([3, 2]),
        &DiffArray::zeros([3]),
        Activation::Silu,
    );
    assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
}

#[test]
fn axis_op_examples() {
    let mut t = Tape::new();
    assert_eq!(t.softmax(&arr(&[2], &[0.0, 0.0]), 0).unwrap().data(), &[0.5, 0.5]);
    assert_eq!(t.layer_norm(&arr(&[3], &[1.0, 1.0, 1.0]), 0).unwrap().data(), &[0.0; 3]);
    assert_eq!(argmax(&arr(&[3], &[2.0, 7.0, 7.0]), 0).unwrap(), vec![1]);
    assert!(matches!(
        t.softmax(&arr(&[2], &[0.0, 0.0]), 1),
        Err(Error::AxisOutOfRange { axis: 1, rank: 1 })
    ));
    assert!(matches!(
        t.sum(&DiffArray::zeros([2, 0]), 1),
        Err(Error::EmptyReduction(_))
    ));
    let x = arr(&[2, 3], &[1.0, 5.0, 2.0, 4.0, 0.0, 6.0]);
    assert_eq!(t.sum(&x, 0).unwrap().data(), &[5.0, 5.0, 8.0]);
    assert_eq!(t.mean(&x, 1).unwrap().data(), &[8.0 / 3.0, 10.0 / 3.0]);
    assert_eq!(t.max(&x, 1).unwrap().data(), &[5.0, 6.0]);
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[4, 16]);
    let mut t = Tape::new();
    let y = t.layer_norm(&x, 1).unwrap();
    for row in y.data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-3);
    }
}

#[test]
fn structural_ops() {
    let mut t = Tape::new();
    let x = arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(t.permute(&x, &[1, 0]).unwrap().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    assert_eq!(t.slice(&x, 1, 1, 2).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    assert_eq!(t.index_select(&x, 1, &[2, 0, 2]).unwrap().data(), &[3.0, 1.0, 3.0, 6.0, 4.0, 6.0]);
    let c = t.concat(&[&x, &arr(&[2, 1], &[9.0, 8.0])], 1).unwrap();
    assert_eq!(c.shape(), &[2, 4]);
    assert_eq!(c.data(), &[1.0, 2.0, 3.0, 9.0, 4.0, 5.0, 6.0, 8.0]);
    let y = arr(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>());
    let p = t.permute(&y, &[2, 0, 1]).unwrap();
    assert_eq!(p.shape(), &[4, 2, 3]);
    assert_eq!(p.at(&[3, 1, 2]), y.at(&[1, 2, 3]));
}

#[test]
fn backward_examples() {
    let x = arr(&[2, 3], &[0.1, -2.0, 3.0, 4.0, 0.5, 6.0]);
    let mut t = Tape::new();
    let lx = t.param(&x).unwrap();
    let s = t.sum_all(&lx).unwrap();
    assert_eq!(t.backward(&s).unwrap().get(&lx).unwrap(), &[1.0; 6]);

    let mut t = Tape::new();
    let lx = t.param(&arr(&[2], &[1.0, 2.0])).unwrap();
    let sq = t.mul(&lx, &lx).unwrap();
    let s = t.sum_all(&sq).unwrap();
    let g = t.backward(&s).unwrap();
    assert_eq!(g.wrt(&lx).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_errors() {
    let mut t = Tape::new();
    assert!(matches!(t.backward(&DiffArray::scalar(1.0)), Err(Error::EmptyTape)));
    let lx = t.param(&arr(&[2], &[1.0, 2.0])).unwrap();
    let y = t.exp(&lx).unwrap();
    assert!(matches!(t.backward(&y), Err(Error::NonScalarLoss(_))));
    let s = t.sum_all(&y).unwrap();
    t.backward(&s).unwrap();
    assert!(matches!(t.backward(&s), Err(Error::TapeConsumed)));
    assert!(matches!(t.exp(&lx), Err(Error::TapeConsumed)));
}

#[test]
fn unused_trainable_leaf_gets_zero_gradient() {
    let mut t = Tape::new();
    let a = t.param(&arr(&[2], &[1.0, 2.0])).unwrap();
    let unused = t.param(&arr(&[3], &[1.0, 2.0, 3.0])).unwrap();
    let frozen = t.leaf(&arr(&[2], &[1.0, 1.0]), false).unwrap();
    let y = t.mul(&a, &frozen).unwrap();
    let s = t.sum_all(&y).unwrap();
    let g = t.backward(&s).unwrap();
    assert_eq!(g.get(&unused).unwrap(), &[0.0; 3]);
    assert!(g.get(&frozen).is_none());
}

/// A graph that touches most primitives at once.
fn composite(t: &mut Tape, xs: &[DiffArray]) -> crate::Result<DiffArray> {
    let (x, w, v) = (&xs[0], &xs[1], &xs[2]);
    let h = t.matmul(x, w)?; // [3×4]
    let h = t.silu(&h)?;
    let n = t.layer_norm(&h, 1)?;
    let n = t.mul(&n, v)?; // broadcast [4]
    let s = t.softmax(&n, 1)?;
    let l = t.log_softmax(&h, 0)?;
    let e = t.tanh(&l)?;
    let p = t.permute(&e, &[1, 0])?; // [4×3]
    let q = t.matmul(&s, &p)?; // [3×3]
    let r = t.sigmoid(&q)?;
    let c = t.concat(&[&r, &s], 1)?; // [3×7]
    let sl = t.slice(&c, 1, 1, 5)?;
    let g = t.index_select(&sl, 0, &[2, 0, 2])?;
    let m = t.max(&g, 1)?;
    let a = t.exp(&m)?;
    let pos = t.add_scalar(&a, 1.0)?;
    let lg = t.log(&pos)?;
    let dv = t.div(&lg, &pos)?;
    let sq = t.sqrt(&pos)?;
    let total = t.sub(&dv, &sq)?;
    let mean = t.mean(&total, 0)?;
    let rl = t.clamp_min_zero(&g)?;
    let rs = t.sum_all(&rl)?;
    t.add(&mean, &rs)
}

#[test]
fn composite_graph_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = [random(&mut rng, &[3, 5]), random(&mut rng, &[5, 4]), random(&mut rng, &[4])];
        let report = check_gradients(composite, &xs, DEFAULT_STEP, 1e-4).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn nlm_and_batch_matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs = [
        random(&mut rng, &[2, 3, 4]),
        random(&mut rng, &[3, 4, 2]),
        random(&mut rng, &[3, 2]),
        random(&mut rng, &[3, 2]),
        random(&mut rng, &[3]),
    ];
    let report = check_gradients(
        |t, xs| {
            let z = t.batched_nlm_contract(&xs[0], &xs[1], &xs[2], &xs[3], &xs[4], Activation::Silu)?;
            let zz = t.mul(&z, &z)?;
            t.sum_all(&zz)
        },
        &xs,
        DEFAULT_STEP,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);

    let xs = [random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 4, 5])];
    let report = check_gradients(
        |t, xs| {
            let y = t.batch_matmul(&xs[0], &xs[1])?;
            let y = t.tanh(&y)?;
            t.sum_all(&y)
        },
        &xs,
        DEFAULT_STEP,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}

#[test]
fn untracked_forward_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs = [random(&mut rng, &[3, 5]), random(&mut rng, &[5, 4]), random(&mut rng, &[4])];
    let a = composite(&mut Tape::new(), &xs).unwrap();
    let b = composite(&mut Tape::new(), &xs).unwrap();
    assert!(a.bit_eq(&b));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..9,
        seed in any::<u64>(),
        scale in 0.1f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let x = arr(&[rows, cols], &data);
        let y = Tape::new().softmax(&x, 1).unwrap();
        for row in y.data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn permute_roundtrip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 3, 4]);
        let mut t = Tape::new();
        let p = t.permute(&x, &[1, 2, 0]).unwrap();
        let back = t.permute(&p, &[2, 0, 1]).unwrap();
        prop_assert!(back.bit_eq(&x));
    }
}
