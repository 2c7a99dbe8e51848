//! Central finite-difference oracle for every differentiable op kind.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speechsem::autodiff::{AutodiffError, OpKind, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>>;

pub struct Case {
    pub kind: OpKind,
    pub inputs: Vec<Tensor>,
    /// Inputs excluded from checking (integer-like or constant).
    pub frozen: Vec<usize>,
    pub build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values with pairwise gaps of at least 0.05 (no pooling ties).
fn well_separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let data = idx.iter().map(|&i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn cases(seed: u64) -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    vec![
        Case {
            kind: OpKind::MatMul,
            inputs: vec![uniform(r, &[3, 4]), uniform(r, &[4, 2])],
            frozen: vec![],
            build: Box::new(|t, v| t.matmul(v[0], v[1])),
        },
        Case {
            kind: OpKind::AddBias,
            inputs: vec![uniform(r, &[2, 3, 4]), uniform(r, &[4])],
            frozen: vec![],
            build: Box::new(|t, v| t.add_bias(v[0], v[1])),
        },
        Case {
            kind: OpKind::Add,
            inputs: vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])],
            frozen: vec![],
            build: Box::new(|t, v| t.add(v[0], v[1])),
        },
        Case {
            kind: OpKind::Mul,
            inputs: vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])],
            frozen: vec![],
            build: Box::new(|t, v| t.mul(v[0], v[1])),
        },
        Case {
            kind: OpKind::Scale,
            inputs: vec![uniform(r, &[5])],
            frozen: vec![],
            build: Box::new(|t, v| t.scale(v[0], -1.7)),
        },
        Case {
            kind: OpKind::BroadcastAdd,
            inputs: vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 4])],
            frozen: vec![],
            build: Box::new(|t, v| t.broadcast_add(v[0], v[1])),
        },
        Case {
            kind: OpKind::Tanh,
            inputs: vec![uniform(r, &[6])],
            frozen: vec![],
            build: Box::new(|t, v| t.tanh(v[0])),
        },
        Case {
            kind: OpKind::Sigmoid,
            inputs: vec![uniform(r, &[6])],
            frozen: vec![],
            build: Box::new(|t, v| t.sigmoid(v[0])),
        },
        Case {
            kind: OpKind::Relu,
            inputs: vec![away_from_zero(r, &[8])],
            frozen: vec![],
            build: Box::new(|t, v| t.relu(v[0])),
        },
        Case {
            kind: OpKind::Softmax,
            inputs: vec![uniform(r, &[2, 5])],
            frozen: vec![],
            build: Box::new(|t, v| {
                let mask = [true, true, false, true, true, true, true, true, true, false];
                let a = t.softmax(v[0], Some(&mask))?;
                let b = t.softmax(v[0], None)?;
                t.add(a, b)
            }),
        },
        Case {
            kind: OpKind::Conv1d,
            inputs: vec![uniform(r, &[2, 6, 2]), uniform(r, &[3, 2, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.conv1d(v[0], v[1])),
        },
        Case {
            kind: OpKind::Conv2d,
            inputs: vec![uniform(r, &[2, 4, 5, 2]), uniform(r, &[3, 3, 2, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.conv2d(v[0], v[1])),
        },
        Case {
            kind: OpKind::MaxPool2,
            inputs: vec![well_separated(r, &[1, 3, 5, 2])],
            frozen: vec![],
            build: Box::new(|t, v| t.max_pool2(v[0])),
        },
        Case {
            kind: OpKind::Embedding,
            inputs: vec![uniform(r, &[5, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.embedding(v[0], &[0, 3, 3, 1])),
        },
        Case {
            kind: OpKind::Concat,
            inputs: vec![uniform(r, &[2, 3]), uniform(r, &[2, 2])],
            frozen: vec![],
            build: Box::new(|t, v| {
                let a = t.concat(&[v[0], v[1]], 1)?;
                let b = t.concat(&[v[0], v[0]], 0)?;
                let s = t.sum(b)?;
                let s = t.reshape(s, &[1, 1])?;
                let s5 = t.concat(&[s, s, s, s, s], 1)?;
                let s5 = t.concat(&[s5, s5], 0)?;
                t.mul(a, s5)
            }),
        },
        Case {
            kind: OpKind::Reshape,
            inputs: vec![uniform(r, &[2, 6])],
            frozen: vec![],
            build: Box::new(|t, v| t.reshape(v[0], &[3, 4])),
        },
        Case {
            kind: OpKind::Slice,
            inputs: vec![uniform(r, &[2, 5, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.slice(v[0], 1, 1, 3)),
        },
        Case {
            kind: OpKind::Subsample,
            inputs: vec![uniform(r, &[2, 5, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.subsample(v[0], 2)),
        },
        Case {
            kind: OpKind::GatherRows,
            inputs: vec![uniform(r, &[4, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2])),
        },
        Case {
            kind: OpKind::WeightedSum,
            inputs: vec![uniform(r, &[2, 4]), uniform(r, &[2, 4, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.weighted_sum(v[0], v[1])),
        },
        Case {
            kind: OpKind::LstmCell,
            inputs: vec![uniform(r, &[2, 12]), uniform(r, &[2, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.lstm_cell(v[0], v[1])),
        },
        Case {
            kind: OpKind::CrossEntropy,
            inputs: vec![uniform(r, &[3, 5])],
            frozen: vec![],
            build: Box::new(|t, v| t.cross_entropy(v[0], &[1, 4, 0], &[1.0, 0.5, 0.0])),
        },
        Case {
            kind: OpKind::Sum,
            inputs: vec![uniform(r, &[3, 3])],
            frozen: vec![],
            build: Box::new(|t, v| t.sum(v[0])),
        },
        Case {
            kind: OpKind::NormalizePower,
            inputs: vec![uniform(r, &[8])],
            frozen: vec![],
            build: Box::new(|t, v| t.normalize_power(v[0])),
        },
        Case {
            kind: OpKind::ComplexScale,
            inputs: vec![uniform(r, &[8])],
            frozen: vec![],
            build: Box::new(|t, v| t.complex_scale(v[0], Complex64::new(0.3, -0.8))),
        },
    ]
}

/// Runs `build`, then reduces its output to a scalar with fixed random
/// weights so every output element contributes a distinct gradient.
fn scalar_loss(case: &Case, inputs: &[Tensor], weights: &Tensor) -> Result<(Tape, Vec<Var>, Var), AutodiffError> {
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if case.frozen.contains(&i) {
                tape.constant(t.clone())
            } else {
                tape.param(t.clone())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    let w = tape.constant(weights.clone().reshaped(tape.value(out).shape())?)?;
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod)?;
    Ok((tape, vars, loss))
}

/// Max relative error `|a−n| / max(|a|, |n|, 1e-2)` over every input element.
pub fn max_relative_error(case: &Case, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let probe = {
        let mut t = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|x| t.param(x.clone()).unwrap()).collect();
        let out = (case.build)(&mut t, &vars).unwrap();
        t.value(out).len()
    };
    let weights = Tensor::from_vec((0..probe).map(|_| rng.gen_range(0.5..1.5)).collect());
    let (mut tape, vars, loss) = scalar_loss(case, &case.inputs, &weights).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in case.inputs.iter().enumerate() {
        if case.frozen.contains(&i) {
            continue;
        }
        let analytic = grads.get_or_zero(vars[i]);
        for j in 0..input.len() {
            let eval = |delta: f64| {
                let mut perturbed = case.inputs.clone();
                perturbed[i].data_mut()[j] += delta;
                let (t, _, l) = scalar_loss(case, &perturbed, &weights).unwrap();
                t.value(l).data()[0]
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max(rel);
        }
    }
    worst
}
