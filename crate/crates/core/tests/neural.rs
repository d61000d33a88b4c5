use cardiotwin_core::neural::{
    composite_loss_and_grad, loss_and_grad, range_sigmoid, train, Activation, Head, InputScaling, Mlp, Optimizer,
    TrainConfig,
};
use proptest::prelude::*;

fn net(dims: &[usize], act: Activation, range: bool, seed: u64) -> Mlp {
    let out = *dims.last().unwrap();
    let head = if range {
        Head::RangeSigmoid {
            lo: (0..out).map(|i| -1.0 - i as f64).collect(),
            hi: (0..out).map(|i| 2.0 + i as f64).collect(),
        }
    } else {
        Head::Linear
    };
    Mlp::new(dims, act, head, seed).unwrap()
}

fn batch(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..dim).map(|j| (seed as f64 + 1.3 * i as f64 + 0.7 * j as f64).sin()).collect()).collect()
}

/// Central-difference gradient of the loss with respect to every parameter.
fn numeric_grad(net: &Mlp, tail: Option<&Mlp>, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<f64> {
    let h = 1e-5;
    (0..net.parameter_count())
        .map(|i| {
            let mut plus = net.clone();
            *plus.parameter_mut(i) += h;
            let mut minus = net.clone();
            *minus.parameter_mut(i) -= h;
            let lp = composite_loss_and_grad(&plus, tail, xs, ys).unwrap().0;
            let lm = composite_loss_and_grad(&minus, tail, xs, ys).unwrap().0;
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

fn max_rel_mismatch(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6)).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backprop_matches_finite_differences(
        seed in 0u64..1000, tanh in any::<bool>(), range in any::<bool>(), with_tail in any::<bool>(),
        hidden in 2usize..7,
    ) {
        let act = if tanh { Activation::Tanh } else { Activation::Relu };
        let head = net(&[3, hidden, 4], act, range, seed);
        let tail = with_tail.then(|| net(&[4, 5, 2], Activation::Tanh, false, seed + 1));
        let out_dim = if with_tail { 2 } else { 4 };
        let xs = batch(5, 3, seed);
        let ys = batch(5, out_dim, seed + 7);
        let (_, g) = composite_loss_and_grad(&head, tail.as_ref(), &xs, &ys).unwrap();
        let fd = numeric_grad(&head, tail.as_ref(), &xs, &ys);
        prop_assert!(max_rel_mismatch(&g.flat(), &fd) < 1e-4);
    }

    #[test]
    fn range_head_stays_inside_bounds(seed in 0u64..1000, x in prop::collection::vec(-1e3f64..1e3, 3)) {
        let n = net(&[3, 8, 4], Activation::Relu, true, seed);
        let y = n.forward(&x).unwrap();
        for (i, v) in y.iter().enumerate() {
            prop_assert!(*v >= -1.0 - i as f64 && *v <= 2.0 + i as f64);
        }
    }

    #[test]
    fn range_sigmoid_is_monotone_and_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0, lo in -5.0f64..5.0, w in 0.1f64..10.0) {
        let (ya, yb) = (range_sigmoid(a, lo, lo + w), range_sigmoid(b, lo, lo + w));
        prop_assert!(ya >= lo && ya <= lo + w);
        if a < b { prop_assert!(ya <= yb); }
    }
}

#[test]
fn input_scaling_maps_box_to_unit_cube() {
    let s = InputScaling::from_bounds(&[0.0, 10.0], &[2.0, 30.0]);
    let n = Mlp::identity(2).with_input_scaling(s).unwrap();
    assert_eq!(n.forward(&[0.0, 30.0]).unwrap(), vec![-1.0, 1.0]);
    assert_eq!(n.forward(&[1.0, 20.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn dimension_errors() {
    let n = net(&[3, 4, 2], Activation::Tanh, false, 0);
    assert!(n.forward(&[1.0, 2.0]).is_err());
    assert!(loss_and_grad(&n, &[vec![0.0; 3]], &[vec![0.0; 3]]).is_err());
    assert!(Mlp::new(&[3], Activation::Tanh, Head::Linear, 0).is_err());
    assert!(Mlp::new(&[3, 0, 2], Activation::Tanh, Head::Linear, 0).is_err());
}

fn regression_task() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xs = batch(64, 2, 3);
    let ys = xs.iter().map(|x| vec![x[0] * x[1], x[0] - 0.5 * x[1]]).collect();
    (xs, ys)
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let (xs, ys) = regression_task();
    let n = net(&[2, 16, 2], Activation::Tanh, false, 5);
    let cfg = TrainConfig { epochs: 200, batch_size: 16, seed: 9, learning_rate: 1e-2, ..TrainConfig::default() };
    let a = train(&n, &xs, &ys, &cfg, None).unwrap();
    let b = train(&n, &xs, &ys, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 200);
    assert!(a.history[199] < 0.1 * a.history[0], "{} -> {}", a.history[0], a.history[199]);
    let c = train(&n, &xs, &ys, &TrainConfig { seed: 10, ..cfg }, None).unwrap();
    assert_ne!(a.net, c.net);

    let sgd = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 0.1, ..cfg };
    let s = train(&n, &xs, &ys, &sgd, None).unwrap();
    assert!(s.history[199] < s.history[0]);
}

#[test]
fn frozen_tail_is_never_updated() {
    let (xs, ys) = regression_task();
    let head = net(&[2, 8, 3], Activation::Relu, false, 1);
    let tail = net(&[3, 8, 2], Activation::Tanh, false, 2);
    let snapshot = tail.clone();
    let cfg = TrainConfig { epochs: 50, batch_size: 8, seed: 4, learning_rate: 1e-2, ..TrainConfig::default() };
    let out = train(&head, &xs, &ys, &cfg, Some(&tail)).unwrap();
    assert_eq!(tail, snapshot);
    assert_ne!(out.net, head);
    assert!(out.history.last().unwrap() < &out.history[0]);
}

#[test]
fn invalid_training_config_rejected() {
    let (xs, ys) = regression_task();
    let n = net(&[2, 4, 2], Activation::Tanh, false, 0);
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
    ] {
        assert!(train(&n, &xs, &ys, &bad, None).is_err());
    }
    assert!(train(&n, &[], &[], &TrainConfig::default(), None).is_err());
}

#[test]
fn checkpoint_json_round_trip_is_exact() {
    let n = net(&[3, 5, 2], Activation::Tanh, true, 42);
    let text = serde_json::to_string(&n).unwrap();
    let back: Mlp = serde_json::from_str(&text).unwrap();
    assert_eq!(n, back);
    let x = [0.3, -0.2, 0.9];
    assert_eq!(n.forward(&x).unwrap(), back.forward(&x).unwrap());
}
