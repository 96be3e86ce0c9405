//! Dense feedforward classifier with hand-derived backpropagation.
//!
//! Hidden layers use ReLU, the output layer softmax. Only the weight matrices
//! take part in weight sharing and pruning; biases are trained but otherwise
//! left at full precision.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softmax => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out × in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Gradient buffers laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// A minibatch of flattened inputs with their class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::Config(format!(
                "batch inputs must be a matrix, got shape {:?}",
                inputs.shape()
            )));
        }
        if inputs.rows() == 0 {
            return Err(Error::Config("batch must hold at least one example".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Config(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(v) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("input value {v} outside [0, 1]")));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.shape().len() != 2 || layer.bias.shape() != [layer.outputs()] {
                return Err(Error::Config(format!(
                    "layer {i}: weight shape {:?} and bias shape {:?} do not match",
                    layer.weights.shape(),
                    layer.bias.shape()
                )));
            }
            let last = i + 1 == layers.len();
            match (last, layer.activation) {
                (true, Activation::Softmax) | (false, Activation::Relu) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "layer {i}: only the final layer may (and must) use softmax"
                    )))
                }
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Config(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Network { layers })
    }

    /// All-zero network with the given layer widths, e.g. `[784, 300, 100, 10]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::build(sizes, |_, _| 0.0)
    }

    /// He-normal initialised weights and zero biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(sizes, |fan_in, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * (2.0 / fan_in as f64).sqrt()
        })
    }

    fn build(sizes: &[usize], mut init: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let depth = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let data = (0..fan_in * fan_out).map(|_| init(fan_in, fan_out)).collect();
                Layer {
                    weights: Tensor::new(vec![fan_out, fan_in], data).expect("finite init"),
                    bias: Tensor::zeros(vec![fan_out]),
                    activation: if i + 1 == depth {
                        Activation::Softmax
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    /// Total number of weight-matrix entries (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Weight matrices concatenated in layer order.
    pub fn flat_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weight_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
        }
        out
    }

    pub fn set_flat_weights(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.weight_count() {
            return Err(Error::Config(format!(
                "expected {} weights, got {}",
                self.weight_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Pre-softmax activations of every layer; index 0 is the input itself.
    fn activations(&self, inputs: &Tensor) -> Result<Vec<Vec<f64>>> {
        if inputs.cols() != self.input_width() {
            return Err(Error::Config(format!(
                "input width {} does not match first layer width {}",
                inputs.cols(),
                self.input_width()
            )));
        }
        let b = inputs.rows();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.data().to_vec());
        for layer in &self.layers {
            let (fan_in, fan_out) = (layer.inputs(), layer.outputs());
            let mut z = vec![0.0; b * fan_out];
            for row in z.chunks_exact_mut(fan_out) {
                row.copy_from_slice(layer.bias.data());
            }
            let x = acts.last().expect("input present");
            gemm(
                b,
                fan_in,
                fan_out,
                x,
                (fan_in, 1),
                layer.weights.data(),
                (1, fan_in),
                &mut z,
                true,
            );
            if layer.activation == Activation::Relu {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Class probabilities, one row per example.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut acts = self.activations(inputs)?;
        let mut logits = acts.pop().expect("output layer");
        let k = self.output_width();
        for row in logits.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        Tensor::new(vec![inputs.rows(), k], logits)
    }

    /// Index of the largest output per example.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        let acts = self.activations(inputs)?;
        let logits = acts.last().expect("output layer");
        Ok(logits
            .chunks_exact(self.output_width())
            .map(argmax)
            .collect())
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn error_loss_and_grad(&self, batch: &Batch) -> Result<(f64, Gradients)> {
        let acts = self.activations(&batch.inputs)?;
        let b = batch.len();
        let k = self.output_width();
        let logits = acts.last().expect("output layer");

        let mut loss = 0.0;
        let mut delta = vec![0.0; b * k];
        for (n, (row, d)) in logits.chunks_exact(k).zip(delta.chunks_exact_mut(k)).enumerate() {
            let label = batch.labels[n];
            if label >= k {
                return Err(Error::Input(format!("label {label} out of range for {k} classes")));
            }
            d.copy_from_slice(row);
            softmax_in_place(d);
            loss -= d[label].max(PROB_FLOOR).ln();
            d[label] -= 1.0;
            d.iter_mut().for_each(|v| *v /= b as f64);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite error loss; {}",
                self.diagnose(&acts)
            )));
        }

        let mut grads = Gradients::zeros_like(self);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (fan_in, fan_out) = (layer.inputs(), layer.outputs());
            let x = &acts[li];
            gemm(
                fan_out,
                b,
                fan_in,
                &delta,
                (1, fan_out),
                x,
                (fan_in, 1),
                &mut grads.weights[li],
                false,
            );
            let gb = &mut grads.biases[li];
            for row in delta.chunks_exact(fan_out) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if li > 0 {
                let mut prev = vec![0.0; b * fan_in];
                gemm(
                    b,
                    fan_out,
                    fan_in,
                    &delta,
                    (fan_out, 1),
                    layer.weights.data(),
                    (fan_in, 1),
                    &mut prev,
                    false,
                );
                // ReLU derivative: the stored activation is zero where the unit is off.
                prev.iter_mut().zip(x).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                });
                delta = prev;
            }
        }
        Ok((loss, grads))
    }

    fn diagnose(&self, acts: &[Vec<f64>]) -> String {
        acts.iter()
            .enumerate()
            .skip(1)
            .map(|(i, a)| {
                let bad = a.iter().filter(|v| !v.is_finite()).count();
                let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                format!("layer {}: {bad} non-finite, max |a| = {max:e}", i - 1)
            })
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Top-1 error rate over a stream of batches.
    pub fn evaluate<'a, I>(&self, batches: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a Batch>,
    {
        let mut wrong = 0usize;
        let mut total = 0usize;
        for batch in batches {
            let pred = self.predict(&batch.inputs)?;
            wrong += pred.iter().zip(&batch.labels).filter(|(p, t)| p != t).count();
            total += batch.len();
        }
        if total == 0 {
            return Err(Error::Input("cannot evaluate on an empty data stream".into()));
        }
        Ok(wrong as f64 / total as f64)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// First index of the maximum; ties go to the lower index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
