//! Finite-difference checks shared by the gradient tests and the acceptance run.
#![allow(dead_code)]

use pops_core::nn::Gradients;
use pops_core::{kl_loss, kl_loss_grad, Activation, DenseNetwork, NetworkSpec};
use rand::Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Small random network; every other instance uses tanh and some carry masks.
pub fn random_net<R: Rng>(rng: &mut R, instance: usize) -> DenseNetwork {
    let depth = rng.random_range(0..3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..7)).collect();
    let input = rng.random_range(1..5);
    let output = rng.random_range(1..4);
    let activation = if instance.is_multiple_of(2) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let spec = NetworkSpec::new(input, hidden, output, activation).unwrap();
    let mut net = DenseNetwork::new(spec, rng).unwrap();
    for g in 0..net.layers().len() {
        let b: Vec<f64> = (0..net.layers()[g].fan_out())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        net.set_biases(g, &b).unwrap();
        if instance.is_multiple_of(3) {
            let mask: Vec<bool> = (0..net.layers()[g].size()).map(|_| rng.random_bool(0.7)).collect();
            net.set_mask(g, &mask).unwrap();
        }
    }
    net
}

fn objective(net: &DenseNetwork, state: &[f64], coeffs: &[f64]) -> f64 {
    net.forward(state).unwrap().iter().zip(coeffs).map(|(o, c)| o * c).sum()
}

fn flatten(g: &Gradients) -> Vec<f64> {
    g.iter().collect()
}

/// Relative error between backprop and central differences of `Σ cᵢ·outᵢ`
/// over every unmasked weight and every bias.
pub fn backprop_error<R: Rng>(net: &DenseNetwork, rng: &mut R) -> f64 {
    let state: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let coeffs: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let analytic = flatten(&net.backward(&state, &coeffs).unwrap());

    let mut numeric = Vec::with_capacity(analytic.len());
    for g in 0..net.layers().len() {
        let layer = &net.layers()[g];
        for i in 0..layer.size() {
            if !layer.mask()[i] {
                numeric.push(0.0);
                continue;
            }
            let mut w = layer.weights().to_vec();
            let mut plus = net.clone();
            w[i] += STEP;
            plus.set_weights(g, &w).unwrap();
            let mut minus = net.clone();
            w[i] -= 2.0 * STEP;
            minus.set_weights(g, &w).unwrap();
            numeric.push((objective(&plus, &state, &coeffs) - objective(&minus, &state, &coeffs)) / (2.0 * STEP));
        }
        for i in 0..layer.fan_out() {
            let mut b = layer.biases().to_vec();
            let mut plus = net.clone();
            b[i] += STEP;
            plus.set_biases(g, &b).unwrap();
            let mut minus = net.clone();
            b[i] -= 2.0 * STEP;
            minus.set_biases(g, &b).unwrap();
            numeric.push((objective(&plus, &state, &coeffs) - objective(&minus, &state, &coeffs)) / (2.0 * STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Relative error of `kl_loss_grad` against central differences of `kl_loss`
/// in the student outputs.
pub fn kl_error<R: Rng>(rng: &mut R) -> f64 {
    let n = rng.random_range(2..6);
    let tau = [0.5, 1.0, 2.0][rng.random_range(0..3)];
    let qt: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let qs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let analytic = kl_loss_grad(&qt, &qs, tau).unwrap();
    let numeric: Vec<f64> = (0..n)
        .map(|i| {
            let mut p = qs.clone();
            p[i] += STEP;
            let mut m = qs.clone();
            m[i] -= STEP;
            (kl_loss(&qt, &p, tau).unwrap() - kl_loss(&qt, &m, tau).unwrap()) / (2.0 * STEP)
        })
        .collect();
    relative_error(&analytic, &numeric)
}
