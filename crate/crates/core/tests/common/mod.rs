//! Finite-difference checks shared by the gradient tests and the
//! acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsxil_core::attribution::{attribution_batch, IgConfig};
use tsxil_core::autodiff::{grad, GradMode, Tape, Var};
use tsxil_core::losses::{rr_frequency_var, rr_spatial_var};
use tsxil_core::models::{Architecture, Network};

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central differences of a scalar function of a flat input.
pub fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            xs[i] = x[i] + h;
            let plus = f(&xs);
            xs[i] = x[i] - h;
            let minus = f(&xs);
            xs[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub type UnaryCase = (&'static str, Vec<usize>, fn(Var<'_>) -> Var<'_>, fn(&mut ChaCha8Rng) -> f64);

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-2.0..2.0)
}

pub fn positive(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.3..3.0)
}

pub fn away_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = rng.random_range(0.2..2.0);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

pub fn unary_cases() -> Vec<UnaryCase> {
    vec![
        ("neg", vec![3, 4], |x| -x, uniform),
        ("scale", vec![3, 4], |x| x.scale(-1.7), uniform),
        ("square", vec![3, 4], |x| x.square(), uniform),
        ("transpose", vec![3, 4], |x| x.t(), uniform),
        ("exp", vec![3, 4], |x| x.exp(), uniform),
        ("ln", vec![3, 4], |x| x.ln(), positive),
        ("recip", vec![3, 4], |x| x.recip(), away_from_zero),
        ("sigmoid", vec![3, 4], |x| x.sigmoid(), uniform),
        ("softplus", vec![3, 4], |x| x.softplus(), uniform),
        ("tanh", vec![3, 4], |x| x.tanh(), uniform),
        ("relu", vec![3, 4], |x| x.relu(), away_from_zero),
        ("sum", vec![3, 4], |x| x.sum(), uniform),
        ("mean", vec![3, 4], |x| x.mean(), uniform),
        ("broadcast", vec![1], |x| x.broadcast_to(vec![2, 3]), uniform),
        ("group_sum_rows", vec![6, 2], |x| x.group_sum_rows(3), uniform),
        ("repeat_rows", vec![2, 3], |x| x.repeat_rows(3), uniform),
        ("sum_cols", vec![3, 4], |x| x.sum_cols(), uniform),
        ("repeat_cols", vec![3, 1], |x| x.repeat_cols(4), uniform),
        ("unfold", vec![10, 2], |x| x.unfold(3, 5), uniform),
        ("fold", vec![10, 6], |x| x.fold(3, 5), uniform),
        ("reshape", vec![3, 4], |x| x.reshape(vec![2, 6]), uniform),
        ("logsumexp_cols", vec![3, 4], |x| x.logsumexp_cols(), uniform),
        ("dft_rows", vec![2, 6], |x| {
            let (re, im) = x.dft_rows();
            re.square() + im
        }, uniform),
        ("idft_rows", vec![2, 6], |x| Var::idft_rows(x, x.scale(0.5)), uniform),
    ]
}

/// f(x) = Σ w ⊙ op(x) with random weights.
pub fn check_first_order(case: &UnaryCase, rng: &mut ChaCha8Rng) -> f64 {
    let (_, shape, op, sample) = case;
    let n: usize = shape.iter().product();
    let x: Vec<f64> = (0..n).map(|_| sample(rng)).collect();
    let out_len = {
        let tape = Tape::new();
        op(tape.constant(shape.clone(), x.clone())).numel()
    };
    let w: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out_shape = {
        let tape = Tape::new();
        op(tape.constant(shape.clone(), x.clone())).shape()
    };
    let f = |xs: &[f64]| {
        let tape = Tape::new();
        let y = op(tape.constant(shape.clone(), xs.to_vec()));
        let w = tape.constant(out_shape.clone(), w.clone());
        (y * w).sum().item()
    };
    let tape = Tape::new();
    let xv = tape.variable(shape.clone(), x.clone());
    let wv = tape.constant(out_shape.clone(), w.clone());
    let y = (op(xv) * wv).sum();
    let g = grad(y, xv).unwrap();
    rel_err(&g.value(), &finite_diff(&f, &x, 1e-4))
}

pub type BinaryCase = (&'static str, for<'a> fn(Var<'a>, Var<'a>) -> Var<'a>, [usize; 2], [usize; 2]);

pub fn binary_cases() -> Vec<BinaryCase> {
    vec![
        ("add", |a, b| a + b, [3, 4], [3, 4]),
        ("sub", |a, b| a - b, [3, 4], [3, 4]),
        ("mul", |a, b| a * b, [3, 4], [3, 4]),
        ("matmul", |a, b| a.matmul(b), [3, 4], [4, 2]),
    ]
}

/// f(a, b) = Σ op(a, b)², differentiated in both operands.
pub fn check_binary(case: &BinaryCase, rng: &mut ChaCha8Rng) -> f64 {
    let (_, op, sa, sb) = *case;
    let na = sa[0] * sa[1];
    let nb = sb[0] * sb[1];
    let a: Vec<f64> = (0..na).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..nb).map(|_| rng.random_range(-2.0..2.0)).collect();
    let f = |ab: &[f64]| {
        let tape = Tape::new();
        let a = tape.constant(sa.to_vec(), ab[..na].to_vec());
        let b = tape.constant(sb.to_vec(), ab[na..].to_vec());
        op(a, b).square().sum().item()
    };
    let tape = Tape::new();
    let av = tape.variable(sa.to_vec(), a.clone());
    let bv = tape.variable(sb.to_vec(), b.clone());
    let y = op(av, bv).square().sum();
    let g = tape.grad(y, &[av, bv], GradMode::FirstOrder).unwrap();
    let mut analytic = g[0].value().to_vec();
    analytic.extend_from_slice(&g[1].value());
    let ab: Vec<f64> = a.iter().chain(&b).cloned().collect();
    rel_err(&analytic, &finite_diff(&f, &ab, 1e-4))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Right-reason loss at `flat` plus its parameter gradient through the
/// recorded input gradients.
pub fn rr_loss_and_grad(arch: &Architecture, flat: &[f64], inputs: &[f64], targets: &[usize], mask: &[f64], freq: bool) -> (f64, Vec<f64>) {
    let net = Network::from_flat(arch.clone(), flat).unwrap();
    let tape = Tape::new();
    let params = net.param_vars(&tape);
    let outputs = net.output_len();
    let batch = targets.len();
    let mut weights = vec![0.0; batch * outputs];
    for (b, &y) in targets.iter().enumerate() {
        weights[b * outputs + y] = 1.0;
    }
    let e = attribution_batch(&net, &params, inputs, &weights, batch, &IgConfig::with_steps(4)).unwrap();
    let loss = if freq {
        let (re, im) = e.dft_rows();
        rr_frequency_var(re, im, mask, mask, batch)
    } else {
        rr_spatial_var(e, mask, batch)
    };
    let grads = tape.mixed_partial_grad(loss, &params).unwrap();
    (loss.item(), grads.iter().flat_map(|g| g.value().to_vec()).collect())
}

/// Relative errors of the double-backprop parameter gradient of the
/// right-reason loss against central differences, on up to `probes`
/// randomly chosen parameters.
pub fn rr_gradient_errors(arch: Architecture, len: usize, freq: bool, probes: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = Network::new(arch.clone(), 13).unwrap();
    let mut flat = net.flat_params();
    // nonzero biases so every parameter matters
    flat.iter_mut().for_each(|p| *p += rng.random_range(-0.1..0.1));
    let batch = 2;
    let inputs = random_vec(&mut rng, batch * len);
    let targets = [0, net.output_len() - 1];
    let mask: Vec<f64> = (0..batch * len).map(|i| if i % len < len / 3 + 1 { 1.0 } else { 0.0 }).collect();
    let (_, grad) = rr_loss_and_grad(&arch, &flat, &inputs, &targets, &mask, freq);
    let h = 1e-4;
    let mut errors = Vec::new();
    for i in 0..flat.len() {
        if errors.len() >= probes {
            break;
        }
        if rng.random_range(0.0..1.0) > probes as f64 / flat.len() as f64 * 1.5 {
            continue;
        }
        let mut up = flat.clone();
        up[i] += h;
        let mut down = flat.clone();
        down[i] -= h;
        let fd = (rr_loss_and_grad(&arch, &up, &inputs, &targets, &mask, freq).0
            - rr_loss_and_grad(&arch, &down, &inputs, &targets, &mask, freq).0)
            / (2.0 * h);
        errors.push((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6));
    }
    errors
}
