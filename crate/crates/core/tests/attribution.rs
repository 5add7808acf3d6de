use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsxil_core::attribution::{
    attribution_with, explain, forecast_attribution, frequency_attribution, integrated_gradients,
    Attribution, AttributionTarget, IgConfig,
};
use tsxil_core::autodiff::{idft, Tape};
use tsxil_core::models::{Activation, Architecture, FcnConfig, MlpConfig, Network};

mod common;
use common::*;

#[test]
fn quadratic_midpoint_integral() {
    let tape = Tape::new();
    let cfg = IgConfig::with_steps(64);
    let e = attribution_with(&tape, |x| x.square(), 1, &[2.0], &[1.0], 1, &cfg).unwrap();
    assert!((e.item() - 4.0).abs() < 1e-6, "{}", e.item());
}

#[test]
fn step_doubling_converges_on_smooth_models() {
    let net = Network::new(Architecture::Mlp(MlpConfig { lookback: 8, horizon: 2, hidden: vec![16], activation: Activation::Tanh }), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let x: Vec<f64> = random_vec(&mut rng, 8).into_iter().map(|v| 3.0 * v).collect();
        let at = |m| integrated_gradients(&net, &x, 0, &IgConfig::with_steps(m)).unwrap().values;
        let mut prev = f64::INFINITY;
        for m in [2, 4, 8, 16, 32] {
            let diff: f64 = at(m).iter().zip(at(2 * m)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < prev, "M={m}: {diff} vs {prev}");
            prev = diff;
        }
    }
}

#[test]
fn forecast_mean_matches_explicit_average() {
    let cfg = IgConfig::with_steps(16);
    let single = Network::new(Architecture::Mlp(MlpConfig { hidden: vec![12], ..MlpConfig::new(6, 1) }), 3).unwrap();
    let x = [0.4, -1.0, 0.3, 0.9, -0.2, 0.5];
    assert_eq!(forecast_attribution(&single, &x, &cfg).unwrap().values, integrated_gradients(&single, &x, 0, &cfg).unwrap().values);

    let net = Network::new(Architecture::Mlp(MlpConfig { hidden: vec![12, 12], ..MlpConfig::new(6, 3) }), 8).unwrap();
    let mean = forecast_attribution(&net, &x, &cfg).unwrap();
    let parts: Vec<Attribution> = (0..3).map(|i| integrated_gradients(&net, &x, i, &cfg).unwrap()).collect();
    for t in 0..6 {
        let explicit = parts.iter().map(|p| p.values[t]).sum::<f64>() / 3.0;
        assert!((mean.values[t] - explicit).abs() < 1e-12);
    }
}

#[test]
fn identical_outputs_share_their_attribution() {
    // final layer with identical columns makes every forecast step the same function
    let arch = Architecture::Mlp(MlpConfig { hidden: vec![5], ..MlpConfig::new(4, 3) });
    let base = Network::new(arch.clone(), 1).unwrap();
    let mut flat = base.flat_params();
    let (w1, b1) = (4 * 5, 5);
    for r in 0..5 {
        let v = flat[w1 + b1 + r * 3];
        for c in 0..3 {
            flat[w1 + b1 + r * 3 + c] = v;
        }
    }
    let net = Network::from_flat(arch, &flat).unwrap();
    let x = [0.2, -0.7, 1.1, 0.05];
    let cfg = IgConfig::with_steps(8);
    let mean = forecast_attribution(&net, &x, &cfg).unwrap();
    for i in 0..3 {
        let e = integrated_gradients(&net, &x, i, &cfg).unwrap();
        for (a, b) in mean.values.iter().zip(&e.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn argmax_target_resolves_to_a_class() {
    let net = Network::new(Architecture::Fcn(FcnConfig { channels: vec![4], kernels: vec![3], num_classes: 3, ..Default::default() }), 4).unwrap();
    let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
    let logits = tsxil_core::models::classify(&net, &x).unwrap();
    let e = explain(&net, &x, AttributionTarget::Argmax, &IgConfig::with_steps(4)).unwrap();
    assert_eq!(e.target, AttributionTarget::Output(tsxil_core::models::argmax(&logits)));
}

#[test]
fn frequency_attribution_cases() {
    let constant = Attribution { values: vec![0.5; 16], target: AttributionTarget::OutputMean };
    let f = frequency_attribution(&constant).spectrum;
    assert!((f.re[0] - 8.0).abs() < 1e-12);
    assert!(f.re.iter().skip(1).chain(&f.im).all(|v| v.abs() < 1e-9));

    let tone = Attribution { values: (0..16).map(|n| (2.0 * PI * 3.0 * n as f64 / 16.0).cos()).collect(), target: AttributionTarget::OutputMean };
    let f = frequency_attribution(&tone).spectrum;
    for (k, m) in f.magnitudes().iter().enumerate() {
        if k == 3 || k == 13 {
            assert!((m - 8.0).abs() < 1e-9);
        } else {
            assert!(*m < 1e-9, "bin {k}: {m}");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_vec(&mut rng, 20);
    let b = random_vec(&mut rng, 20);
    let wrap = |v: Vec<f64>| Attribution { values: v, target: AttributionTarget::OutputMean };
    let sum = frequency_attribution(&wrap(a.iter().zip(&b).map(|(x, y)| x + y).collect())).spectrum;
    let fa = frequency_attribution(&wrap(a.clone())).spectrum;
    let fb = frequency_attribution(&wrap(b)).spectrum;
    for k in 0..20 {
        assert!((sum.re[k] - fa.re[k] - fb.re[k]).abs() < 1e-9);
        assert!((sum.im[k] - fa.im[k] - fb.im[k]).abs() < 1e-9);
    }
    let back = idft(&fa);
    assert!(back.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-9));
}

#[test]
fn attribution_is_zero_where_input_and_baseline_vanish() {
    let net = Network::new(Architecture::Fcn(FcnConfig { channels: vec![3, 3], kernels: vec![5, 3], ..Default::default() }), 6).unwrap();
    let x = [0.0, 1.0, -2.0, 0.0, 0.5, 0.0, 0.0, 3.0];
    let e = integrated_gradients(&net, &x, 1, &IgConfig::with_steps(8)).unwrap();
    for (v, xv) in e.values.iter().zip(x) {
        if xv == 0.0 {
            assert_eq!(*v, 0.0);
        }
    }
}

fn check_against_differences(arch: Architecture, len: usize, freq: bool, probes: usize) {
    let errors = rr_gradient_errors(arch, len, freq, probes);
    assert!(errors.len() >= probes / 2);
    for (i, err) in errors.iter().enumerate() {
        assert!(*err < 1e-3, "probe {i}: relative error {err:e}");
    }
}

#[test]
fn spatial_rr_gradient_on_two_layer_net() {
    let arch = Architecture::Mlp(MlpConfig { lookback: 16, horizon: 2, hidden: vec![8], activation: Activation::Softplus });
    check_against_differences(arch, 16, false, 40);
}

#[test]
fn spatial_rr_gradient_on_small_conv_net() {
    let arch = Architecture::Fcn(FcnConfig { channels: vec![3, 4], kernels: vec![5, 3], num_classes: 2, activation: Activation::Softplus });
    check_against_differences(arch, 12, false, 40);
}

#[test]
fn frequency_rr_gradient_on_small_conv_net() {
    let arch = Architecture::Fcn(FcnConfig { channels: vec![3], kernels: vec![3], num_classes: 2, activation: Activation::Tanh });
    check_against_differences(arch, 10, true, 20);
}
