use std::sync::Arc;

use proptest::prelude::*;
use trecon::diffmath::{
    finite_diff_check, sigmoid, Activation, FdOptions, MlpParams, OptimKind, OptimState, SparseMatrix, StepDecay,
    Tape, Tensor, Var, ADAM_DEFAULT_LR, RMSPROP_DEFAULT_LR,
};
use trecon::rng::Stream;

fn random_tensor(shape: &[usize], rng: &mut Stream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

/// Plain loops over the stored weights, one output row at a time.
fn straight_line_forward(net: &MlpParams, x: &[f64]) -> Vec<f64> {
    let sizes = net.layer_sizes();
    let mut h = x.to_vec();
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = net.tensors()[2 * l].data();
        let b = net.tensors()[2 * l + 1].data();
        let last = l + 2 == sizes.len();
        let mut out = vec![0.0; n_out];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..n_in {
                acc += h[k] * w[k * n_out + j];
            }
            let z = acc + b[j];
            *o = if last {
                sigmoid(z)
            } else if z > 0.0 {
                z
            } else {
                0.0
            };
        }
        h = out;
    }
    h
}

#[test]
fn mlp_matches_straight_line_oracle() {
    let net = MlpParams::init(&[4, 8, 1], Activation::Relu, Activation::Sigmoid, 11).unwrap();
    let mut rng = Stream::new(5);
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let got = net.forward(&Tensor::matrix(1, 4, x.clone()).unwrap()).unwrap();
        assert_eq!(got.data(), straight_line_forward(&net, &x).as_slice());
    }
}

#[test]
fn parameter_count_is_sum_over_layers() {
    let sizes = [28, 128, 64, 32, 1];
    let net = MlpParams::init(&sizes, Activation::Relu, Activation::Sigmoid, 0).unwrap();
    let expect: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    assert_eq!(net.parameter_count(), expect);
}

/// Loss of a network whose parameters are replaced by `p`.
fn mlp_mse(net: &MlpParams, x: &Tensor, y: &Arc<[f64]>, p: &[Tensor]) -> f64 {
    let mut n = net.clone();
    n.tensors_mut().clone_from_slice(p);
    let out = n.forward(x).unwrap();
    out.data().iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

#[test]
fn mlp_mse_gradients_match_finite_differences() {
    let net = MlpParams::init(&[5, 7, 6, 1], Activation::Relu, Activation::Sigmoid, 3).unwrap();
    let mut rng = Stream::new(9);
    let x = random_tensor(&[12, 5], &mut rng);
    let y: Arc<[f64]> = (0..12).map(|_| rng.uniform()).collect();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let tr = net.forward_tape(&mut tape, xv).unwrap();
    let loss = tape.mse(tr.output, y.clone()).unwrap();
    let g = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = tr
        .params
        .iter()
        .zip(net.tensors())
        .map(|(&v, t)| g.get_or_zeros(v, t.shape()))
        .collect();
    let rep = finite_diff_check(net.tensors(), &analytic, |p| mlp_mse(&net, &x, &y, p), FdOptions::default());
    assert!(rep.passes(1e-4), "{rep:?}");
    assert_eq!(rep.checked, net.parameter_count());
}

#[test]
fn corrupted_gradient_is_flagged() {
    let net = MlpParams::init(&[3, 4, 1], Activation::Sigmoid, Activation::Sigmoid, 8).unwrap();
    let mut rng = Stream::new(1);
    let x = random_tensor(&[6, 3], &mut rng);
    let y: Arc<[f64]> = (0..6).map(|_| rng.uniform()).collect();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let tr = net.forward_tape(&mut tape, xv).unwrap();
    let loss = tape.mse(tr.output, y.clone()).unwrap();
    let g = tape.backward(loss).unwrap();
    let mut analytic: Vec<Tensor> = tr.params.iter().map(|&v| g.get(v).unwrap().clone()).collect();
    let clean = finite_diff_check(net.tensors(), &analytic, |p| mlp_mse(&net, &x, &y, p), FdOptions::default());
    assert!(clean.passes(1e-4));
    // Double the largest entry so the fault is well above the noise floor.
    let (t, i) = (0..analytic.len())
        .flat_map(|t| (0..analytic[t].len()).map(move |i| (t, i)))
        .max_by(|a, b| {
            analytic[a.0].data()[a.1]
                .abs()
                .total_cmp(&analytic[b.0].data()[b.1].abs())
        })
        .unwrap();
    analytic[t].data_mut()[i] *= 2.0;
    let bad = finite_diff_check(net.tensors(), &analytic, |p| mlp_mse(&net, &x, &y, p), FdOptions::default());
    assert!(bad.max_rel_error > 0.1);
    assert_eq!(bad.worst, Some((t, i)));
}

/// Gradient of a scalar built by `f` from one input, checked against central differences.
fn check_unary(shape: &[usize], seed: u64, f: impl Fn(&mut Tape, Var) -> Var) {
    let mut rng = Stream::new(seed);
    let x0 = random_tensor(shape, &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let loss = f(&mut tape, x);
    let g = tape.backward(loss).unwrap();
    let analytic = vec![g.get_or_zeros(x, shape)];
    let eval = |p: &[Tensor]| {
        let mut t = Tape::new();
        let v = t.param(p[0].clone());
        let l = f(&mut t, v);
        t.value(l).item()
    };
    let rep = finite_diff_check(&[x0], &analytic, eval, FdOptions::default());
    assert!(rep.passes(1e-4), "{rep:?}");
}

#[test]
fn every_operation_passes_finite_differences() {
    let w = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let bias = Tensor::vector(vec![0.1, -0.2, 0.3]);
    let other = Tensor::new(vec![5, 4], (0..20).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
    let targets: Arc<[f64]> = (0..20).map(|i| (i % 2) as f64).collect();
    let pairs: Arc<[(u32, u32)]> = (0..20u32).map(|i| (i, (i * 7) % 20)).collect();
    let mut sm = SparseMatrix::new(20);
    for r in 0..6 {
        sm.push_row([(r, 0.5), ((r * 3 + 1) % 20, -1.5), (19 - r, 0.25)]);
    }
    let sm = Arc::new(sm);

    check_unary(&[5, 4], 1, |t, x| {
        let w = t.constant(w.clone());
        let y = t.matmul(x, w).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum(y)
    });
    check_unary(&[5, 3], 2, |t, x| {
        let b = t.constant(bias.clone());
        let y = t.add_bias(x, b).unwrap();
        let y = t.sigmoid(y);
        t.mean(y)
    });
    check_unary(&[5, 4], 3, |t, x| {
        let o = t.constant(other.clone());
        let y = t.sub(x, o).unwrap();
        let y = t.relu(y);
        let z = t.scale(y, 1.7);
        let z = t.add(z, x).unwrap();
        let z = t.mul(z, z).unwrap();
        t.sum(z)
    });
    check_unary(&[20], 4, |t, x| {
        let s = t.sigmoid(x);
        t.weighted_bce(s, targets.clone(), None, 0.7, 1e-7).unwrap()
    });
    check_unary(&[20], 5, |t, x| t.mse(x, targets.clone()).unwrap());
    check_unary(&[20], 6, |t, x| {
        let mask: Arc<[bool]> = (0..20).map(|i| i % 3 != 0).collect();
        t.mean_abs(x, targets.clone(), Some(mask), 7.0).unwrap()
    });
    check_unary(&[20], 7, |t, x| {
        let y = t.sigmoid(x);
        t.paired_sq_diff(x, y, pairs.clone(), 20.0).unwrap()
    });
    check_unary(&[20], 8, |t, x| {
        let y = t.sparse(x, sm.clone(), &[3, 2]).unwrap();
        let z = t.concat_cols(&[y, y]).unwrap();
        let z = t.mul(z, z).unwrap();
        t.sum(z)
    });
}

#[test]
fn backward_is_bitwise_repeatable() {
    let net = MlpParams::init(&[6, 16, 1], Activation::Relu, Activation::Sigmoid, 21).unwrap();
    let mut rng = Stream::new(2);
    let x = random_tensor(&[32, 6], &mut rng);
    let y: Arc<[f64]> = (0..32).map(|_| rng.uniform()).collect();
    let grads = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tr = net.forward_tape(&mut tape, xv).unwrap();
        let loss = tape.mse(tr.output, y.clone()).unwrap();
        let g = tape.backward(loss).unwrap();
        tr.params.iter().map(|&v| g.get(v).unwrap().clone()).collect::<Vec<_>>()
    };
    assert_eq!(grads(), grads());
}

#[test]
fn optimizer_defaults_and_decay() {
    assert_eq!(ADAM_DEFAULT_LR, 2.5e-4);
    assert_eq!(RMSPROP_DEFAULT_LR, 1e-3);
    assert!(matches!(OptimState::adam(ADAM_DEFAULT_LR).kind(), OptimKind::Adam { .. }));
    let mut opt = OptimState::rmsprop(1e-3).with_decay(StepDecay {
        factor: 0.1,
        interval: 3,
    });
    let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
    let g = vec![Tensor::vector(vec![0.5, -0.5])];
    let mut rates = Vec::new();
    for _ in 0..7 {
        rates.push(opt.learning_rate());
        opt.step(&mut p, &g).unwrap();
    }
    assert_eq!(opt.steps(), 7);
    let want = [1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-5];
    for (r, w) in rates.iter().zip(want) {
        assert!((r - w).abs() < 1e-18, "{rates:?}");
    }
}

#[test]
fn nan_gradient_leaves_parameters_untouched() {
    let mut opt = OptimState::adam(0.1);
    let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
    let before = p.clone();
    assert!(opt.step(&mut p, &[Tensor::vector(vec![f64::NAN, 0.0])]).is_err());
    assert_eq!(p, before);
    assert_eq!(opt.steps(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigmoid_stays_strictly_inside(x in -1e4f64..1e4) {
        let s = sigmoid(x);
        prop_assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_w(w in prop::collection::vec(-10f64..10.0, 1..20)) {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::vector(w.clone()));
        let sq = tape.mul(v, v).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        for (gi, wi) in g.get(v).unwrap().data().iter().zip(&w) {
            prop_assert_eq!(*gi, 2.0 * wi);
        }
    }

    #[test]
    fn random_mlp_gradients_pass(seed in 0u64..1000) {
        let net = MlpParams::init(&[3, 5, 1], Activation::Relu, Activation::Sigmoid, seed).unwrap();
        let mut rng = Stream::new(seed ^ 0x55);
        let x = random_tensor(&[4, 3], &mut rng);
        let y: Arc<[f64]> = (0..4).map(|_| rng.uniform()).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tr = net.forward_tape(&mut tape, xv).unwrap();
        let loss = tape.mse(tr.output, y.clone()).unwrap();
        let g = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> =
            tr.params.iter().zip(net.tensors()).map(|(&v, t)| g.get_or_zeros(v, t.shape())).collect();
        let rep = finite_diff_check(net.tensors(), &analytic, |p| mlp_mse(&net, &x, &y, p), FdOptions::default());
        prop_assert!(rep.passes(1e-4), "{:?}", rep);
    }
}
