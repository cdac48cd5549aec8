//! Finite-difference cases for every tape primitive, shared by the gradient
//! tests and the acceptance binary.

#![allow(dead_code)]

use ctm::autodiff::{Activation, DiffArray, Tape};
use ctm::gradcheck::{check_gradients, GradCheckReport, DEFAULT_STEP};
use ctm::losses::{batch_loss, LossMode, Targets};
use ctm::model::{BackboneConfig, Ctm, CtmConfig, OutputSpec, Pairing, SyncMode, Variant};
use ctm::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;

pub type Case = fn(u64) -> Result<GradCheckReport>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng, shape: &[usize]) -> DiffArray {
    let n = shape.iter().product();
    DiffArray::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
}

fn positive(r: &mut ChaCha8Rng, shape: &[usize]) -> DiffArray {
    let n = shape.iter().product();
    DiffArray::new(shape.to_vec(), (0..n).map(|_| r.random_range(0.2..3.0)).collect()).unwrap()
}

/// Magnitudes in `[lo, hi]` with random sign.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> DiffArray {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(lo..hi);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    DiffArray::new(shape.to_vec(), data).unwrap()
}

/// Distinct values at least 0.1 apart, so maxima are unique.
fn spread(r: &mut ChaCha8Rng, shape: &[usize]) -> DiffArray {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    v.shuffle(r);
    let v = v.into_iter().map(|x| x + r.random_range(-0.02..0.02)).collect();
    DiffArray::new(shape.to_vec(), v).unwrap()
}

fn shape(r: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| r.random_range(1..=4)).collect()
}

/// `Σ y ⊙ w` with fixed pseudo-random weights, so every output element
/// reaches the loss with a distinct coefficient.
fn weigh(tape: &mut Tape, y: &DiffArray) -> Result<DiffArray> {
    let mut r = rng(0x5eed ^ y.len() as u64);
    let w = normal(&mut r, y.shape());
    let prod = tape.mul(y, &w)?;
    tape.sum_all(&prod)
}

fn check(inputs: Vec<DiffArray>, f: impl Fn(&mut Tape, &[DiffArray]) -> Result<DiffArray>) -> Result<GradCheckReport> {
    check_gradients(
        |tape, x| {
            let y = f(tape, x)?;
            weigh(tape, &y)
        },
        &inputs,
        DEFAULT_STEP,
        TOLERANCE,
    )
}

fn binary(seed: u64, op: fn(&mut Tape, &DiffArray, &DiffArray) -> Result<DiffArray>, denominator: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a_shape = shape(&mut r, 3);
    // Every other seed broadcasts a trailing suffix of `a`'s shape.
    let b_shape = if seed % 2 == 0 { a_shape.clone() } else { a_shape[1..].to_vec() };
    let a = normal(&mut r, &a_shape);
    let b = if denominator {
        away_from_zero(&mut r, &b_shape, 0.5, 2.0)
    } else {
        normal(&mut r, &b_shape)
    };
    check(vec![a, b], move |t, x| op(t, &x[0], &x[1]))
}

fn unary(seed: u64, op: fn(&mut Tape, &DiffArray) -> Result<DiffArray>, domain: fn(&mut ChaCha8Rng, &[usize]) -> DiffArray) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 2);
    check(vec![domain(&mut r, &s)], move |t, x| op(t, &x[0]))
}

fn axis_op(seed: u64, op: fn(&mut Tape, &DiffArray, usize) -> Result<DiffArray>, domain: fn(&mut ChaCha8Rng, &[usize]) -> DiffArray) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 3);
    let axis = r.random_range(0..3);
    check(vec![domain(&mut r, &s)], move |t, x| op(t, &x[0], axis))
}

pub fn add(seed: u64) -> Result<GradCheckReport> {
    binary(seed, Tape::add, false)
}

pub fn sub(seed: u64) -> Result<GradCheckReport> {
    binary(seed, Tape::sub, false)
}

pub fn mul(seed: u64) -> Result<GradCheckReport> {
    binary(seed, Tape::mul, false)
}

pub fn div(seed: u64) -> Result<GradCheckReport> {
    binary(seed, Tape::div, true)
}

pub fn scale(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 2);
    let c = r.random_range(-3.0..3.0);
    check(vec![normal(&mut r, &s)], move |t, x| t.scale(&x[0], c))
}

pub fn add_scalar(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 2);
    let c = r.random_range(-3.0..3.0);
    check(vec![normal(&mut r, &s)], move |t, x| t.add_scalar(&x[0], c))
}

pub fn exp(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::exp, normal)
}

pub fn log(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::log, positive)
}

pub fn neg(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::neg, normal)
}

pub fn silu(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::silu, normal)
}

pub fn sigmoid(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::sigmoid, normal)
}

pub fn tanh(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::tanh, normal)
}

pub fn clamp_min_zero(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::clamp_min_zero, |r, s| away_from_zero(r, s, 0.05, 2.0))
}

pub fn sqrt(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::sqrt, positive)
}

pub fn matmul(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let [m, k, n] = [r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4)];
    check(vec![normal(&mut r, &[m, k]), normal(&mut r, &[k, n])], |t, x| t.matmul(&x[0], &x[1]))
}

pub fn batch_matmul(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let [b, m, k, n] = [1, 2, 3, 4].map(|_| r.random_range(1..=3));
    check(vec![normal(&mut r, &[b, m, k]), normal(&mut r, &[b, k, n])], |t, x| t.batch_matmul(&x[0], &x[1]))
}

pub fn linear(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let [b, i, o] = [r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4)];
    let inputs = vec![normal(&mut r, &[b, i]), normal(&mut r, &[i, o]), normal(&mut r, &[o])];
    check(inputs, |t, x| t.linear(&x[0], &x[1], Some(&x[2])))
}

pub fn softmax(seed: u64) -> Result<GradCheckReport> {
    axis_op(seed, Tape::softmax, normal)
}

pub fn log_softmax(seed: u64) -> Result<GradCheckReport> {
    axis_op(seed, Tape::log_softmax, normal)
}

pub fn layer_norm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut s = shape(&mut r, 2);
    s[1] += 1;
    check(vec![normal(&mut r, &s)], |t, x| t.layer_norm(&x[0], 1))
}

pub fn sum(seed: u64) -> Result<GradCheckReport> {
    axis_op(seed, Tape::sum, normal)
}

pub fn mean(seed: u64) -> Result<GradCheckReport> {
    axis_op(seed, Tape::mean, normal)
}

pub fn max(seed: u64) -> Result<GradCheckReport> {
    axis_op(seed, Tape::max, spread)
}

pub fn sum_all(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::sum_all, normal)
}

pub fn mean_all(seed: u64) -> Result<GradCheckReport> {
    unary(seed, Tape::mean_all, normal)
}

pub fn reshape(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 3);
    let flat = [s[0] * s[1], s[2]];
    check(vec![normal(&mut r, &s)], move |t, x| t.reshape(&x[0], &flat))
}

pub fn concat(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 3);
    let axis = r.random_range(0..3);
    let mut s2 = s.clone();
    s2[axis] = r.random_range(1..=3);
    check(vec![normal(&mut r, &s), normal(&mut r, &s2)], move |t, x| t.concat(&[&x[0], &x[1]], axis))
}

pub fn slice(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 3);
    let axis = r.random_range(0..3);
    let start = r.random_range(0..s[axis]);
    let len = r.random_range(1..=s[axis] - start);
    check(vec![normal(&mut r, &s)], move |t, x| t.slice(&x[0], axis, start, len))
}

pub fn index_select(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 2);
    let axis = r.random_range(0..2);
    // Repeats exercise gradient accumulation.
    let idx: Vec<usize> = (0..r.random_range(1..=5)).map(|_| r.random_range(0..s[axis])).collect();
    check(vec![normal(&mut r, &s)], move |t, x| t.index_select(&x[0], axis, &idx))
}

pub fn permute(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = shape(&mut r, 3);
    let mut perm = vec![0, 1, 2];
    perm.shuffle(&mut r);
    check(vec![normal(&mut r, &s)], move |t, x| t.permute(&x[0], &perm))
}

pub fn batched_nlm_contract(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let [b, d, m, h] = [1, 2, 3, 4].map(|_| r.random_range(1..=3));
    let act = [Activation::Silu, Activation::Tanh, Activation::Identity][seed as usize % 3];
    let inputs = vec![
        normal(&mut r, &[b, d, m]),
        normal(&mut r, &[d, m, h]),
        normal(&mut r, &[d, h]),
        normal(&mut r, &[d, h]),
        normal(&mut r, &[d]),
    ];
    check(inputs, move |t, x| t.batched_nlm_contract(&x[0], &x[1], &x[2], &x[3], &x[4], act))
}

fn loss_case(seed: u64, mode: LossMode) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (batch, ticks) = (2, r.random_range(1..=4));
    let spec = match mode {
        LossMode::Ctc => OutputSpec { positions: 1, classes: 4 },
        _ => OutputSpec { positions: 3, classes: 5 },
    };
    let labels: Vec<usize> = match mode {
        LossMode::Ctc => (0..batch).flat_map(|_| {
            let a = r.random_range(0..3);
            [a, (a + 1) % 3]
        }).collect(),
        _ => (0..batch * spec.positions).map(|_| r.random_range(0..spec.classes)).collect(),
    };
    let per = labels.len() / batch;
    let targets = Targets::new(labels, per)?;
    let ticks = if mode == LossMode::Ctc { ticks.max(2) } else { ticks };
    let inputs: Vec<DiffArray> = (0..ticks).map(|_| spread(&mut r, &[batch, spec.width()])).collect();
    check_gradients(
        |tape, x| Ok(batch_loss(tape, x, &targets, spec, mode)?.loss),
        &inputs,
        DEFAULT_STEP,
        TOLERANCE,
    )
}

pub fn loss_two_tick(seed: u64) -> Result<GradCheckReport> {
    loss_case(seed, LossMode::TwoTick)
}

pub fn loss_final_tick(seed: u64) -> Result<GradCheckReport> {
    loss_case(seed, LossMode::FinalTick)
}

pub fn loss_curriculum(seed: u64) -> Result<GradCheckReport> {
    loss_case(seed, LossMode::Curriculum)
}

pub fn loss_ctc(seed: u64) -> Result<GradCheckReport> {
    loss_case(seed, LossMode::Ctc)
}

pub const PRIMITIVES: &[(&str, Case)] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("div", div),
    ("scale", scale),
    ("add_scalar", add_scalar),
    ("exp", exp),
    ("log", log),
    ("neg", neg),
    ("silu", silu),
    ("sigmoid", sigmoid),
    ("tanh", tanh),
    ("clamp_min_zero", clamp_min_zero),
    ("sqrt", sqrt),
    ("matmul", matmul),
    ("batch_matmul", batch_matmul),
    ("linear", linear),
    ("softmax", softmax),
    ("log_softmax", log_softmax),
    ("layer_norm", layer_norm),
    ("sum", sum),
    ("mean", mean),
    ("max", max),
    ("sum_all", sum_all),
    ("mean_all", mean_all),
    ("reshape", reshape),
    ("concat", concat),
    ("slice", slice),
    ("index_select", index_select),
    ("permute", permute),
    ("batched_nlm_contract", batched_nlm_contract),
    ("loss/two-tick", loss_two_tick),
    ("loss/final-tick", loss_final_tick),
    ("loss/curriculum", loss_curriculum),
    ("loss/ctc", loss_ctc),
];

/// D=8, T=3, M=3 CTM over ±1 tokens.
pub fn small_ctm(seed: u64) -> Result<Ctm> {
    let config = CtmConfig {
        d_model: 8,
        ticks: 3,
        memory: 3,
        synapse_depth: 1,
        d_input: 4,
        d_hidden: 2,
        n_heads: 2,
        pairing: Pairing::Dense { j_out: 4, j_action: 4 },
        dropout: 0.0,
        backbone: BackboneConfig::Tokens { seq_len: 4, d_embed: 3 },
        output: OutputSpec { positions: 4, classes: 2 },
        activation: Activation::Silu,
        variant: Variant::Standard,
        sync_mode: SyncMode::Recursive,
    };
    let mut model = Ctm::new(config, seed)?;
    // Raw decays start at the clamp kink; move them off it.
    let mut r = rng(seed ^ 0xdeca);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        if model.params.name(id).ends_with("decay_raw") {
            let n = model.params.get(id).len();
            let v = (0..n).map(|_| r.random_range(0.1..1.5)).collect();
            model.params.set(id, DiffArray::from_vec(v))?;
        }
    }
    Ok(model)
}

/// Gradient of a weighted sum of every tick's logits with respect to every
/// parameter of [`small_ctm`].
pub fn full_ctm(seed: u64) -> Result<GradCheckReport> {
    let model = small_ctm(seed)?;
    let mut r = rng(seed);
    let x = DiffArray::new(vec![2, 4], (0..8).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect())?;
    let store = model.params.clone();
    check_gradients(
        |tape, values| {
            let params = store.with_values(values)?;
            let run = model.run(tape, &params, &x, None)?;
            let mut total: Option<DiffArray> = None;
            for tick in &run.ticks {
                let s = weigh(tape, &tick.logits)?;
                total = Some(match total {
                    None => s,
                    Some(acc) => tape.add(&acc, &s)?,
                });
            }
            Ok(total.expect("at least one tick"))
        },
        store.values(),
        DEFAULT_STEP,
        TOLERANCE,
    )
}
