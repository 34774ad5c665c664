//! Dense feed-forward networks with per-weight binary masks.
//!
//! Weights of layer `g` are stored row-major with shape `fan_in × fan_out`, so a
//! batch of row vectors `X` maps to `X·W + b`. Every mutation path re-applies the
//! mask, which keeps masked entries at exactly `0.0`; forward and backward passes
//! can therefore use the stored weights directly as `W ⊙ M`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Layer widths and hidden activation of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::param(format!(
                "all layer widths must be positive, got {}",
                self.describe()
            )));
        }
        Ok(())
    }

    /// Widths `d_0, d_1, ..., d_G` from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_widths);
        w.push(self.output_dim);
        w
    }

    /// `(fan_in, fan_out)` of every weight matrix.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Number of weight matrices, `G`.
    pub fn layer_count(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.hidden_widths.iter().sum::<usize>() + self.output_dim
    }

    /// Compact `4→256→256→128→2` rendering.
    pub fn describe(&self) -> String {
        self.widths()
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join("→")
    }
}

/// Multiplications in one forward pass: `K·d_1 + Σ d_g·d_{g+1}`.
pub fn mult_count(spec: &NetworkSpec) -> usize {
    spec.weight_count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    mask: Vec<bool>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
            mask: vec![true; fan_in * fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    /// Number of weight positions, `fan_in · fan_out`.
    pub fn size(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Positions with an active mask bit and a nonzero weight.
    pub fn nonzero(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.mask)
            .filter(|(w, m)| **m && **w != 0.0)
            .count()
    }

    /// Fraction of positions removed by the mask.
    pub fn mask_sparsity(&self) -> f64 {
        self.mask.iter().filter(|m| !**m).count() as f64 / self.size() as f64
    }

    fn enforce_mask(&mut self) {
        for (w, m) in self.weights.iter_mut().zip(&self.mask) {
            if !*m {
                *w = 0.0;
            }
        }
    }
}

/// Per-layer nonzero weight counts plus the (never pruned) bias count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonzeroCount {
    pub per_layer: Vec<usize>,
    pub weights: usize,
    pub biases: usize,
}

impl NonzeroCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl DenseNetwork {
    /// Glorot-uniform weights, zero biases, all-ones masks.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = DenseNetwork::zeros(spec)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(DenseNetwork { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn layer_mut(&mut self, g: usize) -> Result<&mut Layer> {
        let count = self.layers.len();
        self.layers
            .get_mut(g)
            .ok_or_else(|| Error::param(format!("layer {g} out of range (network has {count})")))
    }

    /// Replaces the weights of layer `g`; masked positions are zeroed.
    pub fn set_weights(&mut self, g: usize, weights: &[f64]) -> Result<()> {
        let layer = self.layer_mut(g)?;
        if weights.len() != layer.size() {
            return Err(Error::shape(format!(
                "layer {g} expects {} weights, got {}",
                layer.size(),
                weights.len()
            )));
        }
        layer.weights.copy_from_slice(weights);
        layer.enforce_mask();
        Ok(())
    }

    pub fn set_biases(&mut self, g: usize, biases: &[f64]) -> Result<()> {
        let layer = self.layer_mut(g)?;
        if biases.len() != layer.fan_out {
            return Err(Error::shape(format!(
                "layer {g} expects {} biases, got {}",
                layer.fan_out,
                biases.len()
            )));
        }
        layer.biases.copy_from_slice(biases);
        Ok(())
    }

    /// Installs a mask for layer `g` and zeroes the weights it removes.
    pub fn set_mask(&mut self, g: usize, mask: &[bool]) -> Result<()> {
        let layer = self.layer_mut(g)?;
        if mask.len() != layer.size() {
            return Err(Error::shape(format!(
                "layer {g} expects a mask of {} entries, got {}",
                layer.size(),
                mask.len()
            )));
        }
        layer.mask.copy_from_slice(mask);
        layer.enforce_mask();
        Ok(())
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(state, 1)?.into_output())
    }

    /// Runs `batch` row-major states through the network, keeping every
    /// layer's activations for a subsequent [`DenseNetwork::backward_batch`].
    pub fn forward_batch(&self, states: &[f64], batch: usize) -> Result<ForwardPass> {
        let input_dim = self.spec.input_dim;
        if batch == 0 || states.len() != batch * input_dim {
            return Err(Error::shape(format!(
                "expected {batch} states of length {input_dim} ({} values), got {}",
                batch * input_dim,
                states.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(states.to_vec());
        for (g, layer) in self.layers.iter().enumerate() {
            let input = &activations[g];
            let mut out = Vec::with_capacity(batch * layer.fan_out);
            for _ in 0..batch {
                out.extend_from_slice(&layer.biases);
            }
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                input,
                (layer.fan_in as isize, 1),
                &layer.weights,
                (layer.fan_out as isize, 1),
                1.0,
                &mut out,
            );
            if g != last {
                let act = self.spec.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            activations.push(out);
        }
        Ok(ForwardPass { batch, activations })
    }

    /// Gradient of `output · output_grad` for a single state.
    pub fn backward(&self, state: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        let pass = self.forward_batch(state, 1)?;
        self.backward_batch(&pass, output_grad)
    }

    /// Gradient of `Σ_i output_i · output_grad_i` over the batch held in `pass`.
    pub fn backward_batch(&self, pass: &ForwardPass, output_grads: &[f64]) -> Result<Gradients> {
        let batch = pass.batch;
        if pass.activations.len() != self.layers.len() + 1 || pass.activations[0].len() != batch * self.spec.input_dim {
            return Err(Error::shape("forward pass does not belong to this network"));
        }
        if output_grads.len() != batch * self.spec.output_dim {
            return Err(Error::shape(format!(
                "expected {} output gradient entries, got {}",
                batch * self.spec.output_dim,
                output_grads.len()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grads.to_vec();
        for g in (0..self.layers.len()).rev() {
            let layer = &self.layers[g];
            let input = &pass.activations[g];
            let lg = &mut grads.layers[g];
            // dW = Xᵀ · δ
            gemm(
                layer.fan_in,
                batch,
                layer.fan_out,
                input,
                (1, layer.fan_in as isize),
                &delta,
                (layer.fan_out as isize, 1),
                0.0,
                &mut lg.weights,
            );
            for row in delta.chunks_exact(layer.fan_out) {
                for (db, d) in lg.biases.iter_mut().zip(row) {
                    *db += d;
                }
            }
            for (dw, m) in lg.weights.iter_mut().zip(&layer.mask) {
                if !*m {
                    *dw = 0.0;
                }
            }
            if g > 0 {
                // δ_prev = (δ · Wᵀ) ⊙ σ'(a_prev)
                let mut prev = vec![0.0; batch * layer.fan_in];
                gemm(
                    batch,
                    layer.fan_out,
                    layer.fan_in,
                    &delta,
                    (layer.fan_out as isize, 1),
                    &layer.weights,
                    (1, layer.fan_out as isize),
                    0.0,
                    &mut prev,
                );
                let act = self.spec.activation;
                for (d, a) in prev.iter_mut().zip(input) {
                    *d *= act.derivative_from_output(*a);
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(state)?))
    }

    pub fn count_nonzero(&self) -> NonzeroCount {
        let per_layer: Vec<usize> = self.layers.iter().map(Layer::nonzero).collect();
        NonzeroCount {
            weights: per_layer.iter().sum(),
            per_layer,
            biases: self.spec.bias_count(),
        }
    }

    /// Fraction of all weight positions removed by masks.
    pub fn mask_sparsity(&self) -> f64 {
        let pruned: usize = self.layers.iter().map(|l| l.mask.iter().filter(|m| !**m).count()).sum();
        pruned as f64 / self.spec.weight_count() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// All parameters in layer order (weights then biases per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }
}

/// First index of the maximum entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Layer activations recorded by [`DenseNetwork::forward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    batch: usize,
    activations: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `batch × output_dim` outputs.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.activations.pop().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.size()],
                    biases: vec![0.0; l.fan_out],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.biases.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|v| v == 0.0)
    }

    fn matches(&self, net: &DenseNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.size() && g.biases.len() == l.fan_out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

/// Optimizer rule plus accumulated state; one instance per trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: u64,
    moments: Vec<Moments>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::with_kind(OptimizerKind::Sgd, learning_rate)
    }

    /// Adam with moments (0.9, 0.999) and epsilon 1e-8.
    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::with_kind(OptimizerKind::Adam, learning_rate)
    }

    pub fn with_kind(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(Error::param(format!(
                "learning rate must lie in (0, 1], got {learning_rate}"
            )));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            moments: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Takes one descent step along `grads`. Nothing is modified when the
    /// gradients contain a non-finite entry.
    pub fn apply_gradients(&mut self, net: &mut DenseNetwork, grads: &Gradients) -> Result<()> {
        if !grads.matches(net) {
            return Err(Error::shape("gradients do not match network layout"));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("gradient contains NaN or infinity".into()));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                    for ((w, dw), m) in layer.weights.iter_mut().zip(&g.weights).zip(&layer.mask) {
                        *w = if *m { *w - lr * dw } else { 0.0 };
                    }
                    for (b, db) in layer.biases.iter_mut().zip(&g.biases) {
                        *b -= lr * db;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.moments.len() != net.layers.len()
                    || self
                        .moments
                        .iter()
                        .zip(&net.layers)
                        .any(|(m, l)| m.m_w.len() != l.size() || m.m_b.len() != l.fan_out)
                {
                    self.moments = net
                        .layers
                        .iter()
                        .map(|l| Moments {
                            m_w: vec![0.0; l.size()],
                            v_w: vec![0.0; l.size()],
                            m_b: vec![0.0; l.fan_out],
                            v_b: vec![0.0; l.fan_out],
                        })
                        .collect();
                }
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let t = self.steps as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for ((layer, g), mom) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.moments) {
                    for i in 0..layer.weights.len() {
                        if !layer.mask[i] {
                            layer.weights[i] = 0.0;
                            mom.m_w[i] = 0.0;
                            mom.v_w[i] = 0.0;
                            continue;
                        }
                        let d = g.weights[i];
                        mom.m_w[i] = b1 * mom.m_w[i] + (1.0 - b1) * d;
                        mom.v_w[i] = b2 * mom.v_w[i] + (1.0 - b2) * d * d;
                        let step = lr * (mom.m_w[i] / c1) / ((mom.v_w[i] / c2).sqrt() + eps);
                        layer.weights[i] -= step;
                    }
                    for i in 0..layer.biases.len() {
                        let d = g.biases[i];
                        mom.m_b[i] = b1 * mom.m_b[i] + (1.0 - b1) * d;
                        mom.v_b[i] = b2 * mom.v_b[i] + (1.0 - b2) * d * d;
                        let step = lr * (mom.m_b[i] / c1) / ((mom.v_b[i] / c2).sqrt() + eps);
                        layer.biases[i] -= step;
                    }
                }
            }
        }
        Ok(())
    }
}

/// `softmax(values / tau)`, stabilized by subtracting the maximum.
pub fn softmax_temperature(values: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("temperature must be positive, got {tau}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input contains NaN or infinity".into()));
    }
    Ok(log_softmax(values, tau).into_iter().map(f64::exp).collect())
}

/// `log softmax(values / tau)` without overflow.
pub(crate) fn log_softmax(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = values.iter().map(|v| (v - max) / tau).collect();
    let log_z = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - log_z).collect()
}

/// `c = a·b + beta·c` for a row-major `m × n` output, with `a` (`m × k`) and
/// `b` (`k × n`) addressed through `(row, column)` strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    let last = |rows: usize, cols: usize, (rs, cs): (isize, isize)| (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(m > 0 && k > 0 && n > 0, "gemm dimensions must be positive");
    assert!(last(m, k, a_strides) < a.len() as isize);
    assert!(last(k, n, b_strides) < b.len() as isize);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every element index that the kernel
    // reads from `a`, `b` and writes to `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(input: usize, hidden: &[usize], output: usize) -> NetworkSpec {
        NetworkSpec::new(input, hidden.to_vec(), output, Activation::Relu).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = DenseNetwork::zeros(spec(3, &[5, 4], 2)).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut net = DenseNetwork::zeros(spec(2, &[], 2)).unwrap();
        net.set_weights(0, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_computed_two_layer_output() {
        let mut net = DenseNetwork::zeros(spec(2, &[1], 1)).unwrap();
        net.set_weights(0, &[1.0, 1.0]).unwrap();
        net.set_biases(0, &[0.5]).unwrap();
        net.set_weights(1, &[2.0]).unwrap();
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), vec![11.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = DenseNetwork::zeros(spec(3, &[2], 2)).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNetwork::new(spec(3, &[6, 5], 2), &mut rng).unwrap();
        let g = net.backward(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn masked_weight_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = DenseNetwork::new(spec(2, &[3], 2), &mut rng).unwrap();
        let mut mask = vec![true; 6];
        mask[0] = false;
        net.set_mask(0, &mask).unwrap();
        for s in [[1.0, 2.0], [-3.0, 0.5], [10.0, 10.0]] {
            let g = net.backward(&s, &[1.0, -1.0]).unwrap();
            assert_eq!(g.layers[0].weights[0], 0.0);
        }
    }

    #[test]
    fn masked_entries_do_not_affect_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNetwork::new(spec(3, &[4], 2), &mut rng).unwrap();
        let mut mask = vec![true; 12];
        mask[1] = false;
        mask[7] = false;
        net.set_mask(0, &mask).unwrap();
        let before = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let mut w = net.layers()[0].weights().to_vec();
        w[1] = 123.0;
        w[7] = -55.0;
        net.set_weights(0, &w).unwrap();
        assert_eq!(net.forward(&[0.1, 0.2, 0.3]).unwrap(), before);
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut net = DenseNetwork::zeros(spec(1, &[], 1)).unwrap();
        net.set_weights(0, &[1.0]).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[0] = 2.0;
        let mut opt = Optimizer::sgd(0.1).unwrap();
        opt.apply_gradients(&mut net, &g).unwrap();
        assert!((net.layers()[0].weights()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_network_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = DenseNetwork::new(spec(3, &[4], 2), &mut rng).unwrap();
        let before = net.clone();
        let g = Gradients::zeros_like(&net);
        for mut opt in [Optimizer::sgd(0.1).unwrap(), Optimizer::adam(1e-3).unwrap()] {
            opt.apply_gradients(&mut net, &g).unwrap();
            assert_eq!(net, before);
        }
    }

    #[test]
    fn masked_position_stays_zero_under_updates() {
        let mut net = DenseNetwork::zeros(spec(2, &[], 1)).unwrap();
        net.set_weights(0, &[0.5, 0.5]).unwrap();
        net.set_mask(0, &[false, true]).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights = vec![4.0, 1.0];
        let mut opt = Optimizer::adam(0.1).unwrap();
        for _ in 0..5 {
            opt.apply_gradients(&mut net, &g).unwrap();
        }
        assert_eq!(net.layers()[0].weights()[0], 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts_update() {
        let mut net = DenseNetwork::zeros(spec(2, &[], 1)).unwrap();
        net.set_weights(0, &[0.5, 0.5]).unwrap();
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[1] = f64::NAN;
        let mut opt = Optimizer::sgd(0.1).unwrap();
        assert!(matches!(opt.apply_gradients(&mut net, &g), Err(Error::Numeric(_))));
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn learning_rate_must_be_positive() {
        assert!(Optimizer::adam(0.0).is_err());
        assert!(Optimizer::sgd(-1.0).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_temperature(&[2.5, 2.5, 2.5], 0.3).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_temperature(&[10.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.9999546).abs() < 1e-6);
        assert!((p[1] - 0.0000454).abs() < 1e-6);
        let sharp = softmax_temperature(&[1.0, 2.0], 1e-3).unwrap();
        assert!(sharp[1] > 1.0 - 1e-12);
        assert!(matches!(softmax_temperature(&[1.0], 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn nonzero_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DenseNetwork::new(spec(4, &[256, 256, 128], 2), &mut rng).unwrap();
        let c = net.count_nonzero();
        assert_eq!(c.weights, 99_584);
        assert_eq!(c.biases, 642);

        let mut pruned = DenseNetwork::zeros(spec(4, &[], 1)).unwrap();
        pruned.set_weights(0, &[0.5, 0.0, 0.3, 0.0]).unwrap();
        assert_eq!(pruned.count_nonzero().weights, 2);
        pruned.set_mask(0, &[false; 4]).unwrap();
        assert_eq!(pruned.count_nonzero().weights, 0);
    }

    #[test]
    fn multiplication_counts() {
        assert_eq!(mult_count(&spec(4, &[256, 256, 128], 2)), 99_584);
        assert_eq!(mult_count(&spec(7, &[], 1)), 7);
        assert_eq!(mult_count(&spec(2, &[3], 2)), 12);
    }

    #[test]
    fn fresh_mask_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = DenseNetwork::new(spec(3, &[4, 4], 2), &mut rng).unwrap();
        assert!(net.layers().iter().all(|l| l.mask().iter().all(|m| *m)));
        assert_eq!(net.mask_sparsity(), 0.0);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(NetworkSpec::new(0, vec![], 2, Activation::Relu).is_err());
        assert!(NetworkSpec::new(2, vec![3, 0], 2, Activation::Relu).is_err());
    }
}
