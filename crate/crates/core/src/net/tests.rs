use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// conv → relu → pool → flatten → linear → relu → linear; every layer kind once.
fn toy_cnn(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        Layer::Conv2d(Conv2d::new(random_tensor(&[3, 2, 3, 3], &mut rng), 1, 1)),
        Layer::Relu,
        Layer::MaxPool2d { size: 2 },
        Layer::Flatten,
        Layer::Linear(Linear::new(random_tensor(&[5, 27], &mut rng))),
        Layer::Relu,
        Layer::Linear(Linear::new(random_tensor(&[4, 5], &mut rng))),
    ];
    Network::new(Architecture::Custom, vec![2, 6, 6], layers).unwrap()
}

fn loss_of(net: &Network, x: &Tensor, y: &[usize]) -> f64 {
    let logits = net.logits(x).unwrap();
    softmax_cross_entropy(&logits, y).unwrap().0
}

#[test]
fn zero_weight_mlp_gives_zero_logits() {
    let mut net = Network::mlp_mnist(3);
    for l in &mut net.layers {
        if let Some(w) = l.weight_mut() {
            w.fill(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&[4, 784], &mut rng);
    let logits = net.logits(&x).unwrap();
    assert_eq!(logits.shape(), &[4, 10]);
    assert!(logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn two_by_two_linear_picks_first_weight_column() {
    let w = Tensor::from_vec(&[2, 2], vec![0.3, -0.7, 1.5, 2.5]).unwrap();
    let net = Network::new(Architecture::Custom, vec![2], vec![Layer::Linear(Linear::new(w))]).unwrap();
    let x = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
    assert_eq!(net.logits(&x).unwrap().data(), &[0.3, 1.5]);
}

#[test]
fn mlp_forward_matches_naive_loops() {
    let net = Network::mlp_mnist(42);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_vec(&[3, 784], (0..3 * 784).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let logits = net.logits(&x).unwrap();

    for b in 0..3 {
        let mut act: Vec<f64> = x.row(b).to_vec();
        for layer in &net.layers {
            act = match layer {
                Layer::Linear(l) => {
                    let (o, i) = (l.out_features(), l.in_features());
                    let w = l.weight.data();
                    let mut out = vec![0.0; o];
                    for r in 0..o {
                        for c in 0..i {
                            out[r] += w[r * i + c] * act[c];
                        }
                    }
                    out
                }
                Layer::Relu => act.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                _ => unreachable!(),
            };
        }
        for (a, e) in logits.row(b).iter().zip(&act) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }
}

#[test]
fn cnn_cifar_shapes() {
    let net = Network::cnn_cifar(1);
    let shapes = net.boundary_shapes().unwrap();
    assert_eq!(shapes[3], vec![16, 16, 16]);
    assert_eq!(shapes[4], vec![4096]);
    assert_eq!(net.output_shape().unwrap(), vec![10]);
    assert_eq!(net.num_weights(), 16 * 27 + 4096 * 64 + 64 * 64 + 640);
}

#[test]
fn forward_rejects_wrong_shape() {
    let net = Network::mlp_mnist(0);
    let x = Tensor::zeros(&[2, 783]);
    assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
}

#[test]
fn forward_rejects_non_finite_output() {
    let net = Network::mlp_mnist(0);
    let mut x = Tensor::zeros(&[1, 784]);
    x.data_mut()[0] = f64::INFINITY;
    assert!(net.forward(&x).is_err());
}

#[test]
fn conv_matches_six_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(stride, padding) in &[(1, 1), (1, 0), (2, 1)] {
        let w = random_tensor(&[4, 3, 3, 3], &mut rng);
        let conv = Conv2d::new(w.clone(), stride, padding);
        let x = random_tensor(&[2, 3, 8, 8], &mut rng);
        let y = kernels::conv_forward(&conv, &x);
        let (oh, ow) = conv.output_hw(8, 8);
        for b in 0..2 {
            for o in 0..4 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for c in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= 8 || ix >= 8 {
                                        continue;
                                    }
                                    let xv = x.data()[((b * 3 + c) * 8 + iy as usize) * 8 + ix as usize];
                                    s += w.data()[((o * 3 + c) * 3 + ky) * 3 + kx] * xv;
                                }
                            }
                        }
                        let got = y.data()[((b * 4 + o) * oh + oy) * ow + ox];
                        assert!((got - s).abs() < 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn uniform_logits_give_ln10() {
    let logits = Tensor::zeros(&[3, 10]);
    let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
    assert!((loss - 2.302585).abs() < 1e-6);
}

#[test]
fn single_parameter_gradient_matches_finite_difference() {
    // 1→2 linear: logits = [w·x, 0·x]
    let w = Tensor::from_vec(&[2, 1], vec![0.8, 0.0]).unwrap();
    let mut net = Network::new(Architecture::Custom, vec![1], vec![Layer::Linear(Linear::new(w))]).unwrap();
    let x = Tensor::from_vec(&[1, 1], vec![1.3]).unwrap();
    let trace = net.forward(&x).unwrap();
    net.backward(&trace, &[1]).unwrap();
    let analytic = net.linear(0).unwrap().grad.data()[0];
    let h = 1e-4;
    let mut plus = net.clone();
    plus.linear_mut(0).unwrap().weight.data_mut()[0] += h;
    let mut minus = net.clone();
    minus.linear_mut(0).unwrap().weight.data_mut()[0] -= h;
    let numeric = (loss_of(&plus, &x, &[1]) - loss_of(&minus, &x, &[1])) / (2.0 * h);
    assert!(((analytic - numeric) / numeric).abs() < 1e-5, "{analytic} vs {numeric}");
}

#[test]
fn duplicated_batch_has_same_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut one = toy_cnn(9);
    let mut two = one.clone();
    let x1 = random_tensor(&[1, 2, 6, 6], &mut rng);
    let mut d = x1.data().to_vec();
    d.extend_from_slice(x1.data());
    let x2 = Tensor::from_vec(&[2, 2, 6, 6], d).unwrap();
    let l1 = one.backward(&one.forward(&x1).unwrap(), &[2]).unwrap();
    let l2 = two.backward(&two.forward(&x2).unwrap(), &[2, 2]).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    for (a, b) in one.layers.iter().zip(&two.layers) {
        if let (Some(ga), Some(gb)) = (a.grad(), b.grad()) {
            for (u, v) in ga.data().iter().zip(gb.data()) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Central-difference check on `samples` random weights of every parameterized layer.
pub(crate) fn gradient_check(net: &Network, x: &Tensor, y: &[usize], samples: usize, seed: u64) -> f64 {
    let mut work = net.clone();
    let trace = work.forward(x).unwrap();
    work.backward(&trace, y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for li in net.param_layer_indices() {
        let n = net.layers[li].weight().unwrap().len();
        for _ in 0..samples {
            let p = rng.random_range(0..n);
            let analytic = work.layers[li].grad().unwrap().data()[p];
            let mut plus = net.clone();
            plus.layers[li].weight_mut().unwrap().data_mut()[p] += h;
            let mut minus = net.clone();
            minus.layers[li].weight_mut().unwrap().data_mut()[p] -= h;
            let numeric = (loss_of(&plus, x, y) - loss_of(&minus, x, y)) / (2.0 * h);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

#[test]
fn gradient_check_every_layer_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = toy_cnn(4);
    let x = random_tensor(&[3, 2, 6, 6], &mut rng);
    let worst = gradient_check(&net, &x, &[0, 3, 1], 50, 99);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn gradient_check_strided_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layers = vec![
        Layer::Conv2d(Conv2d::new(random_tensor(&[2, 1, 3, 3], &mut rng), 2, 0)),
        Layer::Flatten,
        Layer::Linear(Linear::new(random_tensor(&[3, 18], &mut rng))),
    ];
    let net = Network::new(Architecture::Custom, vec![1, 7, 7], layers).unwrap();
    let x = random_tensor(&[2, 1, 7, 7], &mut rng);
    let worst = gradient_check(&net, &x, &[2, 0], 50, 3);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn gradient_check_mlp_mnist() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Network::mlp_mnist(13);
    let x = Tensor::from_vec(&[4, 784], (0..4 * 784).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let worst = gradient_check(&net, &x, &[1, 7, 7, 3], 50, 17);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn backward_rejects_foreign_trace() {
    let mut net = Network::mlp_mnist(0);
    let other = toy_cnn(0);
    let trace = other.forward(&Tensor::zeros(&[1, 2, 6, 6])).unwrap();
    assert!(net.backward(&trace, &[0]).is_err());
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut net = toy_cnn(1);
    let before = net.clone();
    let mut state = AdamState::new(&net, 1e-3);
    adam_step(&mut net, &mut state);
    assert_eq!(net, before);
    assert_eq!(state.step, 1);
}

#[test]
fn adam_matches_scalar_trace() {
    let w = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
    let mut net = Network::new(Architecture::Custom, vec![1], vec![Layer::Linear(Linear::new(w))]).unwrap();
    let mut state = AdamState::new(&net, 1e-3);
    let g = 0.37;
    let (mut m, mut v, mut p) = (0.0f64, 0.0f64, 0.5f64);
    for t in 1..=5 {
        net.linear_mut(0).unwrap().grad.data_mut()[0] = g;
        adam_step(&mut net, &mut state);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let step = 1e-3 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        if t == 1 {
            assert!((step - 1e-3).abs() < 1e-10, "first step {step}");
        }
        p -= step;
        assert!((net.linear(0).unwrap().weight.data()[0] - p).abs() < 1e-15);
        assert_eq!(net.linear(0).unwrap().grad.data()[0], 0.0);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let run = || {
        let mut net = toy_cnn(31);
        let mut state = AdamState::new(&net, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let x = random_tensor(&[2, 2, 6, 6], &mut rng);
            let y = [rng.random_range(0..4), rng.random_range(0..4)];
            let trace = net.forward(&x).unwrap();
            net.backward(&trace, &y).unwrap();
            adam_step(&mut net, &mut state);
        }
        net
    };
    let a = run();
    let b = run();
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        if let (Some(wa), Some(wb)) = (la.weight(), lb.weight()) {
            let ba: Vec<u64> = wa.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = wb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let net = Network::cnn_cifar(5);
    let mut adam = AdamState::new(&net, 1e-3);
    adam.step = 17;
    adam.first[1].data_mut()[3] = 0.25;
    let ckpt = Checkpoint { network: net, seed: 5, epochs_completed: 2, adam: Some(adam) };
    let bytes = serialize(&ckpt);
    let back = deserialize(&bytes).unwrap();
    assert_eq!(back, ckpt);
}

#[test]
fn truncated_checkpoint_is_parse_error() {
    let ckpt = Checkpoint { network: toy_cnn(2), seed: 1, epochs_completed: 0, adam: None };
    let bytes = serialize(&ckpt);
    for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(deserialize(&bytes[..cut]), Err(Error::Parse(_))), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(deserialize(&bad), Err(Error::Parse(m)) if m.contains("version")));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(row in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_random(seed in any::<u64>(), epochs in 0u32..100) {
        let ckpt = Checkpoint { network: toy_cnn(seed), seed, epochs_completed: epochs, adam: None };
        let back = deserialize(&serialize(&ckpt)).unwrap();
        prop_assert_eq!(back, ckpt);
    }
}
