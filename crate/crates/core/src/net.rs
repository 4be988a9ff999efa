//! A small fully-connected Q-network evaluated and differentiated by hand:
//! affine layers with rectifier hidden activations and a linear output,
//! Huber regression loss on the taken action, and Adam with an
//! exponentially decaying learning rate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Layer sizes of the Q-network: 32 inputs, two hidden layers, 5 outputs.
pub const Q_LAYER_SIZES: [usize; 4] = [32, 20, 10, 5];

/// One affine layer; weights are row-major `[outputs x inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub layers: Vec<Layer>,
}

impl QNetwork {
    /// Uniform initialization in +-sqrt(6 / (fan_in + fan_out)), seeded.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map(|l| l.inputs).unwrap_or(0)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn assert_finite(&self) {
        for (i, l) in self.layers.iter().enumerate() {
            assert!(
                l.weights.iter().chain(l.biases.iter()).all(|p| p.is_finite()),
                "non-finite parameter in layer {i}"
            );
        }
    }

    /// Forward pass: rectifier on every hidden layer, identity on the output.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_width(), "input width mismatch");
        let mut activation = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.outputs];
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let mut z = layer.biases[o];
                for (w, a) in row.iter().zip(activation.iter()) {
                    z += w * a;
                }
                *out = if i < last { z.max(0.0) } else { z };
            }
            activation = next;
        }
        activation
    }

    /// Forward pass keeping every layer's post-activation values (the input
    /// counts as layer 0), as needed for backpropagation.
    fn forward_cached(&self, input: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(input.len(), self.input_width(), "input width mismatch");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().unwrap();
            let mut next = vec![0.0; layer.outputs];
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let mut z = layer.biases[o];
                for (w, a) in row.iter().zip(prev.iter()) {
                    z += w * a;
                }
                *out = if i < last { z.max(0.0) } else { z };
            }
            activations.push(next);
        }
        activations
    }
}

/// Huber loss of a single regression target (knee at |delta| = 1).
pub fn huber_loss(q_target: f64, q_pred: f64) -> f64 {
    let delta = q_target - q_pred;
    if delta.abs() < 1.0 {
        0.5 * delta * delta
    } else {
        delta.abs() - 0.5
    }
}

/// d(huber)/d(q_pred) = -clamp(delta, -1, 1); its magnitude never exceeds 1.
pub fn huber_grad_pred(q_target: f64, q_pred: f64) -> f64 {
    -(q_target - q_pred).clamp(-1.0, 1.0)
}

/// Per-layer gradients, same shapes as the corresponding `Layer`.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    fn zeros_like(net: &QNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn assert_finite(&self) {
        for (i, l) in self.layers.iter().enumerate() {
            assert!(
                l.weights.iter().chain(l.biases.iter()).all(|g| g.is_finite()),
                "non-finite gradient in layer {i}"
            );
        }
    }
}

/// One training sample: an input, the output index the loss applies to, and
/// the regression target for that output.
pub struct BatchSample<'a> {
    pub input: &'a [f64],
    pub action_index: usize,
    pub target: f64,
}

/// Exact reverse-mode gradients of the mean Huber loss over the batch with
/// respect to every weight and bias. The rectifier subgradient at exactly
/// zero is taken as zero. Returns the gradients and the mean loss.
pub fn backward(net: &QNetwork, batch: &[BatchSample<'_>]) -> (Gradients, f64) {
    assert!(!batch.is_empty(), "empty batch");
    let mut grads = Gradients::zeros_like(net);
    let mut loss_sum = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for sample in batch {
        let activations = net.forward_cached(sample.input);
        let output = activations.last().unwrap();
        let q_pred = output[sample.action_index];
        loss_sum += huber_loss(sample.target, q_pred);

        // Seed: d(mean loss)/d(output); only the taken action's output
        // participates, with the Huber slope clipped to [-1, 1].
        let mut delta = vec![0.0; output.len()];
        delta[sample.action_index] = huber_grad_pred(sample.target, q_pred) * scale;

        for i in (0..net.layers.len()).rev() {
            let layer = &net.layers[i];
            let below = &activations[i];
            let mut delta_below = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.layers[i].biases[o] += d;
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut grads.layers[i].weights[o * layer.inputs..(o + 1) * layer.inputs];
                for j in 0..layer.inputs {
                    grow[j] += d * below[j];
                    delta_below[j] += d * row[j];
                }
            }
            if i > 0 {
                // Rectifier gate of the layer below: active iff its
                // post-activation is strictly positive.
                for (db, a) in delta_below.iter_mut().zip(below.iter()) {
                    if *a <= 0.0 {
                        *db = 0.0;
                    }
                }
            }
            delta = delta_below;
        }
    }

    grads.assert_finite();
    (grads, loss_sum * scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate_initial: f64,
    /// Multiplicative decay applied smoothly: the effective rate is
    /// `initial * factor^(learn_step / period)`.
    pub learning_rate_decay_factor: f64,
    pub learning_rate_decay_period: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate_initial: 1e-3,
            learning_rate_decay_factor: 0.99,
            learning_rate_decay_period: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn effective_rate(&self, learn_step: u64) -> f64 {
        self.learning_rate_initial
            * self
                .learning_rate_decay_factor
                .powf(learn_step as f64 / self.learning_rate_decay_period as f64)
    }
}

/// First and second moment accumulators, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<LayerMoments>,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    pub m_weights: Vec<f64>,
    pub v_weights: Vec<f64>,
    pub m_biases: Vec<f64>,
    pub v_biases: Vec<f64>,
}

impl AdamState {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Self {
            m: net
                .layers
                .iter()
                .map(|l| LayerMoments {
                    m_weights: vec![0.0; l.weights.len()],
                    v_weights: vec![0.0; l.weights.len()],
                    m_biases: vec![0.0; l.biases.len()],
                    v_biases: vec![0.0; l.biases.len()],
                })
                .collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. `learn_step` drives only the
/// learning-rate decay; the bias correction uses the optimizer's own counter.
pub fn adam_step(
    net: &mut QNetwork,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
    learn_step: u64,
) {
    state.t += 1;
    let t = state.t as f64;
    let lr = cfg.effective_rate(learn_step);
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((layer, grad), moments) in net.layers.iter_mut().zip(&grads.layers).zip(&mut state.m) {
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        };
        for i in 0..layer.weights.len() {
            update(
                &mut layer.weights[i],
                grad.weights[i],
                &mut moments.m_weights[i],
                &mut moments.v_weights[i],
            );
        }
        for i in 0..layer.biases.len() {
            update(
                &mut layer.biases[i],
                grad.biases[i],
                &mut moments.m_biases[i],
                &mut moments.v_biases[i],
            );
        }
    }
}
