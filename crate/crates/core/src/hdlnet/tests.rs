use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::physics::{sampled_point_kernel, PhysicsParams};
use crate::spectral::convolve_same;
use crate::ImpulseKernel;

fn kernel(hw: usize) -> ImpulseKernel {
    sampled_point_kernel(&PhysicsParams::default(), 0.0, 0.8, hw).unwrap()
}

fn random_input(cfg: &NetConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.input_len()).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn toy_tensor(cfg: &NetConfig, seed: u64) -> Tensor<f64> {
    Tensor::from_vec(&[cfg.input_channels, cfg.input_time], random_input(cfg, seed)).unwrap()
}

#[test]
fn config_validation() {
    assert!(NetConfig::paper().validate().is_ok());
    assert!(NetConfig::toy().validate().is_ok());
    let bad = NetConfig {
        input_channels: 18,
        ..NetConfig::toy()
    };
    assert!(bad.validate().is_err());
    let bad = NetConfig {
        dense_width: 16,
        ..NetConfig::toy()
    };
    assert!(bad.validate().is_err());
    let time = NetConfig {
        recurrence: RecurrenceAxis::Time,
        dense_width: 16,
        ..NetConfig::toy()
    };
    assert!(time.validate().is_ok());
    assert!(ModelParams::<f32>::init(
        &NetConfig {
            conv_kernel: (2, 5),
            ..NetConfig::toy()
        },
        0
    )
    .is_err());
}

#[test]
fn paper_level_sizes() {
    let cfg = NetConfig::paper();
    let sizes: Vec<(usize, usize)> = (0..=3).map(|l| cfg.level_size(l)).collect();
    assert_eq!(sizes, vec![(360, 1024), (180, 256), (90, 64), (45, 16)]);
    assert_eq!(cfg.bottleneck_shape(), (64, 45, 16));
}

#[test]
fn param_count_matches_specs() {
    let p = ModelParams::<f32>::init(&NetConfig::toy(), 1).unwrap();
    let from_specs: usize = param_specs(&NetConfig::toy())
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum();
    assert_eq!(p.param_count(), from_specs);
    // conv 1->2, 2->4, bottleneck 4->8, up 8->4 + conv 8->4, up 4->2 + conv 4->2, out 2->1
    let convs = (2 * 15 + 2)
        + (4 * 2 * 15 + 4)
        + (8 * 4 * 15 + 8)
        + (8 * 4 * 8 + 4)
        + (4 * 8 * 15 + 4)
        + (4 * 2 * 8 + 2)
        + (2 * 4 * 15 + 2)
        + (2 * 15 + 1);
    let lstm = 16 * 32 + 16 * 4 + 16 + 32 * 4 + 32;
    assert_eq!(p.param_count(), convs + lstm);
    let b = p.get("lstm.bias").unwrap().data();
    assert_eq!(&b[4..8], &[1.0; 4]);
    assert!(b[..4].iter().chain(&b[8..]).all(|&v| v == 0.0));
}

#[test]
fn init_is_seeded() {
    let a = ModelParams::<f32>::init(&NetConfig::toy(), 3).unwrap();
    let b = ModelParams::<f32>::init(&NetConfig::toy(), 3).unwrap();
    let c = ModelParams::<f32>::init(&NetConfig::toy(), 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn toy_shapes() {
    let cfg = NetConfig::toy();
    let p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let x = toy_tensor(&cfg, 1);
    assert_eq!(unet_forward(&p, &x).unwrap().shape(), &[16, 32]);
    assert_eq!(lstm_forward(&p, &x).unwrap().shape(), &[16, 32]);
    let y = hdlnet_forward(&p, &x).unwrap();
    assert_eq!(y.shape(), &[16, 32]);
    assert_eq!(y, hdlnet_forward(&p, &x).unwrap());
    let cache = forward_cached(&p, x.data()).unwrap();
    assert_eq!(cache.bottleneck_len(), 8 * 4 * 2);
    assert!(forward(&p, &x.data()[1..]).is_err());
}

#[test]
fn zero_weights_give_zero_output() {
    let cfg = NetConfig::toy();
    let p = ModelParams::<f64>::zeros(&cfg).unwrap();
    let x = toy_tensor(&cfg, 2);
    assert!(unet_forward(&p, &x).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(lstm_forward(&p, &x).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(hdlnet_forward(&p, &x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_lstm_by_hand() {
    // one step, one feature, one unit: every weight is a scalar
    let cfg = NetConfig {
        input_channels: 1,
        input_time: 1,
        base_channels: 1,
        depth: 0,
        conv_kernel: (1, 1),
        pool_kernel: (1, 1),
        lstm_units: 1,
        dense_width: 1,
        recurrence: RecurrenceAxis::Channel,
    };
    let mut p = ModelParams::<f64>::zeros(&cfg).unwrap();
    p.slice_mut("lstm.w_ih").copy_from_slice(&[0.5, -0.3, 0.8, 1.2]);
    p.slice_mut("lstm.bias").copy_from_slice(&[0.1, 1.0, -0.2, 0.05]);
    p.slice_mut("dense.weight").copy_from_slice(&[2.0]);
    p.slice_mut("dense.bias").copy_from_slice(&[-0.25]);
    let x = 0.7;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let i = sig(0.5 * x + 0.1);
    let g = (0.8 * x - 0.2f64).tanh();
    let o = sig(1.2 * x + 0.05);
    let c = i * g;
    let expect = 2.0 * o * c.tanh() - 0.25;
    let got = lstm_forward(&p, &Tensor::from_vec(&[1, 1], vec![x]).unwrap()).unwrap();
    assert!((got.data()[0] - expect).abs() < 1e-15);
}

#[test]
fn loss_special_cases() {
    let cfg = NetConfig::toy();
    let zero = ModelParams::<f64>::zeros(&cfg).unwrap();
    let ys = [random_input(&cfg, 5), random_input(&cfg, 6)];
    let mean_sq = ys.iter().map(|y| y.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 2.0;
    let l = batch_loss(&zero, &kernel(5), &ys, 0.0).unwrap();
    assert!((l - mean_sq).abs() < 1e-9 * mean_sq);
}

#[test]
fn loss_matches_independent_recomputation() {
    let cfg = NetConfig::toy();
    let p = ModelParams::<f64>::init(&cfg, 7).unwrap();
    let k = kernel(5);
    let lambda = 0.02;
    let ys = [random_input(&cfg, 8), random_input(&cfg, 9)];
    let mut expect = 0.0;
    for y in &ys {
        let x = forward(&p, y).unwrap();
        let (nd, nt) = (cfg.input_channels, cfg.input_time);
        for t in 0..nt {
            let col: Vec<f64> = (0..nd).map(|c| x[c * nt + t]).collect();
            let kx = convolve_same(&col, k.taps()).unwrap();
            expect += (0..nd).map(|c| (kx[c] - y[c * nt + t]).powi(2)).sum::<f64>();
        }
        expect += lambda * x.iter().map(|v| v.abs()).sum::<f64>();
    }
    expect /= 2.0;
    let got = batch_loss(&p, &k, &ys, lambda).unwrap();
    assert!((got - expect).abs() < 1e-9 * expect, "{got} vs {expect}");
}

#[test]
fn zero_input_has_zero_gradients() {
    let cfg = NetConfig::toy();
    // biases must be zero so that the network maps zero to zero
    let mut p = ModelParams::<f64>::init(&cfg, 3).unwrap();
    p.slice_mut("lstm.bias").fill(0.0);
    let (loss, g) = batch_gradients(&p, &kernel(5), &[vec![0.0; cfg.input_len()]], 0.0).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.entries().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn duplicated_batch_keeps_gradients() {
    let cfg = NetConfig::toy();
    let p = ModelParams::<f64>::init(&cfg, 3).unwrap();
    let y = random_input(&cfg, 4);
    let (l1, g1) = batch_gradients(&p, &kernel(5), &[y.clone()], 0.01).unwrap();
    let (l2, g2) = batch_gradients(&p, &kernel(5), &[y.clone(), y], 0.01).unwrap();
    assert!((l1 - l2).abs() < 1e-12 * l1);
    for ((_, a), (_, b)) in g1.entries().iter().zip(g2.entries()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
        }
    }
}

fn patterns(p: &ModelParams<f64>, ys: &[Vec<f64>]) -> Vec<Vec<usize>> {
    ys.iter()
        .map(|y| forward_cached(p, y).unwrap().activation_pattern())
        .collect()
}

/// Central differences against the reverse pass on parameters sampled from
/// every tensor. A sample whose perturbation flips a ReLU, a pooling choice
/// or an output sign straddles a kink, has no two-sided derivative there,
/// and is redrawn. Biases are checked when a smooth sample exists.
fn gradient_check(cfg: &NetConfig, seed: u64, per_tensor: usize) -> (usize, f64) {
    let p = ModelParams::<f64>::init(cfg, seed).unwrap();
    let k = kernel(5);
    let lambda = 0.01;
    let ys = vec![random_input(cfg, seed + 100), random_input(cfg, seed + 200)];
    let (_, g) = batch_gradients(&p, &k, &ys, lambda).unwrap();
    let base = patterns(&p, &ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, (name, t)) in p.entries().iter().enumerate() {
        let mut done = 0;
        let mut draws = 0;
        while done < per_tensor.min(t.len()) && draws < 50 * per_tensor {
            draws += 1;
            let j = rng.random_range(0..t.len());
            let mut plus = p.clone();
            plus.entries_mut()[ti].1.data_mut()[j] += h;
            let mut minus = p.clone();
            minus.entries_mut()[ti].1.data_mut()[j] -= h;
            if patterns(&plus, &ys) != base || patterns(&minus, &ys) != base {
                continue;
            }
            let numeric = (batch_loss(&plus, &k, &ys, lambda).unwrap() - batch_loss(&minus, &k, &ys, lambda).unwrap())
                / (2.0 * h);
            let analytic = g.get(name).unwrap().data()[j];
            let denom = numeric.abs().max(analytic.abs()).max(1e-5);
            let rel = (numeric - analytic).abs() / denom;
            assert!(rel < 1e-4, "{name}[{j}]: analytic {analytic} numeric {numeric}");
            worst = worst.max(rel);
            checked += 1;
            done += 1;
        }
        // A bias shifts every unit of its layer, so almost every step crosses
        // some kink. Weight tensors must be covered.
        assert!(
            done > 0 || !name.ends_with("weight") && !name.starts_with("lstm"),
            "no smooth sample for {name}"
        );
    }
    (checked, worst)
}

#[test]
fn gradients_match_finite_differences() {
    let (n, _) = gradient_check(&NetConfig::toy(), 11, 8);
    assert!(n >= 100);
}

#[test]
fn gradients_match_finite_differences_time_axis() {
    let cfg = NetConfig {
        recurrence: RecurrenceAxis::Time,
        dense_width: 16,
        ..NetConfig::toy()
    };
    gradient_check(&cfg, 12, 3);
}

#[test]
fn adam_first_steps() {
    let cfg = NetConfig::toy();
    let mut p = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let before = p.clone();
    let mut adam = Adam::new(&p, AdamConfig::default());
    let zero = p.zeros_like();
    adam.step(&mut p, &zero);
    assert_eq!(p, before);

    // scalar recursion for a constant gradient g over two steps
    let mut g = p.zeros_like();
    g.slice_mut("dense.bias")[0] = 0.3;
    let mut adam = Adam::new(&p, AdamConfig::default());
    let x0 = p.slice("dense.bias")[0];
    adam.step(&mut p, &g);
    let step1 = 5e-4 * 0.3 / (0.3 + 1e-8);
    assert!((p.slice("dense.bias")[0] - (x0 - step1)).abs() < 1e-15);
    adam.step(&mut p, &g);
    let m2 = 0.9 * (0.1 * 0.3) + 0.1 * 0.3;
    let v2 = 0.999 * (0.001 * 0.09) + 0.001 * 0.09;
    let mhat = m2 / (1.0 - 0.81);
    let vhat = v2 / (1.0 - 0.999f64 * 0.999);
    let step2 = 5e-4 * mhat / (vhat.sqrt() + 1e-8);
    assert!((p.slice("dense.bias")[0] - (x0 - step1 - step2)).abs() < 1e-15);
    assert_eq!(p.slice("dense.bias")[1], before.slice("dense.bias")[1]);
}

fn toy_dataset(n: usize, seed: u64) -> Vec<crate::Waterfall> {
    let cfg = NetConfig::toy();
    (0..n)
        .map(|i| {
            let v = random_input(&cfg, seed + i as u64);
            crate::Waterfall::from_values(cfg.input_channels, cfg.input_time, v, 0.8, 11.0).unwrap()
        })
        .collect()
}

#[test]
fn zero_epochs_returns_initial_params() {
    let cfg = NetConfig::toy();
    let tc = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (p, h) = train(&toy_dataset(5, 0), &kernel(5), &cfg, &tc).unwrap();
    assert_eq!(p, ModelParams::<f64>::init(&cfg, tc.seed).unwrap().cast());
    assert!(h.epochs.is_empty());
}

#[test]
fn training_history_and_determinism() {
    let cfg = NetConfig::toy();
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let data = toy_dataset(10, 1);
    let (p1, h1) = train(&data, &kernel(5), &cfg, &tc).unwrap();
    let (p2, h2) = train(&data, &kernel(5), &cfg, &tc).unwrap();
    assert_eq!(h1.epochs.len(), 3);
    assert!(h1.epochs.iter().all(|e| e.validation.is_some()));
    assert_eq!(p1, p2);
    assert_eq!(h1, h2);
}

#[test]
fn training_rejects_unnormalized_input() {
    let mut data = toy_dataset(3, 2);
    data[1].values_mut()[0] = 1.5;
    let err = train(&data, &kernel(5), &NetConfig::toy(), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, crate::Error::InvalidParameter(_)));
}

#[test]
fn split_is_eighty_twenty() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (tr, va) = split_dataset(64, 0.2, &mut rng);
    assert_eq!((tr.len(), va.len()), (51, 13));
    let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..64).collect::<Vec<_>>());
}
