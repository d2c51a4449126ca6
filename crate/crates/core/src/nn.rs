//! Small dense feed-forward networks with hand-written reverse-mode
//! gradients, in double precision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

const STACK_WIDTH: usize = 64;

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let biases = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            biases,
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| Self::neuron(row, x, *b)));
    }

    fn neuron(row: &[f64], x: &[f64], bias: f64) -> f64 {
        row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + bias
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Multi-layer perceptron: hidden layers share one activation, the output
/// layer has its own and is multiplied by `output_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
    pub output_scale: f64,
}

/// Per-layer activations recorded by [`Mlp::forward_cached`]. `values[0]` is
/// the input and `values[l + 1]` the output of layer `l` before scaling.
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self, scale: f64) -> Vec<f64> {
        self.values.last().map_or_else(Vec::new, |v| v.iter().map(|y| y * scale).collect())
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.params_mut().zip(b.params()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.params_mut().for_each(|x| *x *= k);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }
}

impl Mlp {
    /// Randomly initialized network with layer widths `sizes`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        Self {
            layers: sizes.windows(2).map(|w| Dense::uniform(w[0], w[1], rng)).collect(),
            hidden,
            output,
            output_scale,
        }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation, output_scale: f64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            hidden,
            output,
            output_scale,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        s.extend(self.layers.last().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).output(self.output_scale)
    }

    /// First output, computed without heap allocation for layers up to
    /// `STACK_WIDTH` wide; bitwise equal to `forward(x)[0]`.
    pub fn forward1(&self, x: &[f64]) -> f64 {
        if x.len() > STACK_WIDTH || self.layers.iter().any(|l| l.outputs > STACK_WIDTH) {
            return self.forward(x)[0];
        }
        let mut a = [0.0; STACK_WIDTH];
        let mut b = [0.0; STACK_WIDTH];
        a[..x.len()].copy_from_slice(x);
        let mut width = x.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            for (o, (row, bias)) in layer.weights.chunks_exact(layer.inputs).zip(&layer.biases).enumerate() {
                b[o] = act.apply(Dense::neuron(row, &a[..width], *bias));
            }
            width = layer.outputs;
            std::mem::swap(&mut a, &mut b);
        }
        a[0] * self.output_scale
    }

    pub fn forward_cached(&self, x: &[f64]) -> Tape {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(values.last().unwrap(), &mut z);
            let act = self.activation(l);
            z.iter_mut().for_each(|v| *v = act.apply(*v));
            values.push(z);
        }
        Tape { values }
    }

    /// Reverse pass for the upstream gradient `grad_out` of the (scaled)
    /// output. Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64]) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let mut delta: Vec<f64> = grad_out.iter().map(|g| g * self.output_scale).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = self.activation(l);
            let y = &tape.values[l + 1];
            let x = &tape.values[l];
            for (d, &yi) in delta.iter_mut().zip(y) {
                *d *= act.derivative_from_output(yi);
            }
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                g.biases[o] = d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w = d * xi;
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        (grads, delta)
    }

    /// Plain gradient descent step.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, gi) in layer.params_mut().zip(g.params()) {
                *p -= lr * gi;
            }
        }
    }

    /// `self <- rate * online + (1 - rate) * self`, elementwise.
    pub fn soft_update(&mut self, online: &Mlp, rate: f64) -> Result<()> {
        if self.sizes() != online.sizes() {
            return Err(Error::Shape(format!(
                "soft update between {:?} and {:?}",
                self.sizes(),
                online.sizes()
            )));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tp, op) in t.params_mut().zip(o.params()) {
                *tp = rate * op + (1.0 - rate) * *tp;
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count());
        for (p, v) in self.layers.iter_mut().flat_map(|l| l.params_mut()).zip(values) {
            *p = *v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.params().all(|p| p.is_finite()))
    }
}

/// Adam first and second moment estimates of one network, in flat
/// parameter order, with the step count used for bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(net: &Mlp) -> Self {
        let n = net.param_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.m.len() == net.param_count() && self.v.len() == net.param_count()
    }

    /// One bias-corrected Adam step on `net`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powf(self.t as f64);
        let c2 = 1.0 - Self::BETA2.powf(self.t as f64);
        let params = net.layers.iter_mut().flat_map(|l| l.params_mut());
        let g = grads.layers.iter().flat_map(|l| l.params());
        for (((p, g), m), v) in params.zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPSILON);
        }
    }
}
