//! Densely connected MLP with layer normalization.
//!
//! Every hidden layer sees the network input concatenated with the outputs of
//! all previous hidden layers:
//!
//! ```text
//! h_k = act(LN(W_k [x, h_1, .., h_{k-1}] + b_k))
//! y   = W_out [x, h_1, .., h_L] + b_out
//! ```
//!
//! The output layer is affine. All inputs to a layer live in one contiguous
//! feature buffer, so layer `k` simply reads a prefix of it.

use rand::Rng;

use super::matrix::{axpy, dot, Matrix};
use super::optim::ParamTensors;
use crate::error::{Error, Result};

/// Nonlinearity used between all hidden layers.
pub const ACTIVATION: Activation = Activation::Gelu;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Scale applied to the output layer at initialization.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Tanh approximation of the Gaussian error linear unit.
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Shape `(out, in)`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// Present on hidden layers only.
    pub norm: Option<LayerNorm>,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    output_dim: usize,
    hidden: Vec<usize>,
    layers: Vec<DenseLayer>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `[x, h_1, .., h_L]`; layer `k` reads the first `in_dim(k)` entries.
    pub features: Vec<f64>,
    /// Per hidden layer: affine output before normalization.
    pub pre_norm: Vec<Vec<f64>>,
    /// Per hidden layer: normalized activations before gain/shift.
    pub normalized: Vec<Vec<f64>>,
    /// Per hidden layer: `gain * normalized + shift`, the nonlinearity input.
    pub scaled: Vec<Vec<f64>>,
    pub inv_std: Vec<f64>,
    pub output: Vec<f64>,
}

impl ForwardCache {
    /// Offset of hidden layer `k`'s output inside `features`.
    fn hidden_offset(&self, input_dim: usize, k: usize) -> usize {
        input_dim + self.scaled[..k].iter().map(Vec::len).sum::<usize>()
    }
}

/// Gradients laid out exactly like the layers of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

impl Mlp {
    /// Fan-in scaled uniform init; the output layer is shrunk by
    /// [`OUTPUT_INIT_SCALE`].
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("mlp dimensions must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(DenseLayer {
                weight: uniform_matrix(width, fan_in, 1.0, rng),
                bias: vec![0.0; width],
                norm: Some(LayerNorm {
                    gain: vec![1.0; width],
                    shift: vec![0.0; width],
                }),
            });
            fan_in += width;
        }
        layers.push(DenseLayer {
            weight: uniform_matrix(output_dim, fan_in, OUTPUT_INIT_SCALE, rng),
            bias: vec![0.0; output_dim],
            norm: None,
        });
        Ok(Self {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            layers,
        })
    }

    /// Assembles a network from explicit layers, checking the dense wiring.
    pub fn from_layers(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let Some((last, hidden_layers)) = layers.split_last() else {
            return Err(Error::Config("mlp needs at least one layer".into()));
        };
        let mut fan_in = input_dim;
        let mut hidden = Vec::with_capacity(hidden_layers.len());
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim() != fan_in {
                return Err(Error::shape(format!("layer {k} input"), fan_in, layer.in_dim()));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(format!("layer {k} bias"), layer.out_dim(), layer.bias.len()));
            }
            let is_output = k + 1 == layers.len();
            match (&layer.norm, is_output) {
                (Some(_), true) => {
                    return Err(Error::Config("output layer must not be normalized".into()))
                }
                (None, false) => {
                    return Err(Error::Config(format!("hidden layer {k} is missing its layer norm")))
                }
                (Some(n), false) => {
                    if n.gain.len() != layer.out_dim() || n.shift.len() != layer.out_dim() {
                        return Err(Error::shape(format!("layer {k} norm"), layer.out_dim(), n.gain.len()));
                    }
                    hidden.push(layer.out_dim());
                    fan_in += layer.out_dim();
                }
                (None, true) => {}
            }
        }
        Ok(Self {
            input_dim,
            output_dim: last.out_dim(),
            hidden,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn output_layer_mut(&mut self) -> &mut DenseLayer {
        self.layers.last_mut().expect("mlp has an output layer")
    }

    pub fn num_params(&self) -> usize {
        self.shapes().iter().sum()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let norm_len = if l.norm.is_some() { l.out_dim() } else { 0 };
                    LayerGrads {
                        weight: vec![0.0; l.weight.values().len()],
                        bias: vec![0.0; l.out_dim()],
                        gain: vec![0.0; norm_len],
                        shift: vec![0.0; norm_len],
                    }
                })
                .collect(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim {
            return Err(Error::shape("mlp input (layer 0)", self.input_dim, input.len()));
        }
        let total: usize = self.input_dim + self.hidden.iter().sum::<usize>();
        let mut features = Vec::with_capacity(total);
        features.extend_from_slice(input);
        let n_hidden = self.hidden.len();
        let mut pre_norm = Vec::with_capacity(n_hidden);
        let mut normalized = Vec::with_capacity(n_hidden);
        let mut scaled = Vec::with_capacity(n_hidden);
        let mut inv_std = Vec::with_capacity(n_hidden);

        for layer in &self.layers[..n_hidden] {
            let norm = layer.norm.as_ref().expect("hidden layers are normalized");
            let width = layer.out_dim();
            let mut z = vec![0.0; width];
            layer.weight.matvec_into(&features[..layer.in_dim()], &mut z);
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let mean = z.iter().sum::<f64>() / width as f64;
            let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let xhat: Vec<f64> = z.iter().map(|v| (v - mean) * istd).collect();
            let y: Vec<f64> = xhat
                .iter()
                .zip(norm.gain.iter().zip(&norm.shift))
                .map(|(x, (g, s))| g * x + s)
                .collect();
            features.extend(y.iter().map(|&v| ACTIVATION.apply(v)));
            pre_norm.push(z);
            normalized.push(xhat);
            scaled.push(y);
            inv_std.push(istd);
        }

        let out_layer = self.layers.last().expect("mlp has an output layer");
        let mut output = vec![0.0; self.output_dim];
        out_layer.weight.matvec_into(&features, &mut output);
        for (o, b) in output.iter_mut().zip(&out_layer.bias) {
            *o += b;
        }
        if let Some(i) = output.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mlp output {i}")));
        }
        let cache = ForwardCache {
            features,
            pre_norm,
            normalized,
            scaled,
            inv_std,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Recomputes the output layer from a cache's feature buffer.
    pub fn replay(&self, cache: &ForwardCache) -> Result<Vec<f64>> {
        let out_layer = self.layers.last().expect("mlp has an output layer");
        if cache.features.len() != out_layer.in_dim() {
            return Err(Error::shape("cache features", out_layer.in_dim(), cache.features.len()));
        }
        let mut output = vec![0.0; self.output_dim];
        out_layer.weight.matvec_into(&cache.features, &mut output);
        for (o, b) in output.iter_mut().zip(&out_layer.bias) {
            *o += b;
        }
        Ok(output)
    }

    /// Accumulates the gradient of `output . grad_output` into `grads` and
    /// returns the gradient with respect to the network input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        let out_layer = self.layers.last().expect("mlp has an output layer");
        if grad_output.len() != self.output_dim {
            return Err(Error::shape("grad_output", self.output_dim, grad_output.len()));
        }
        if cache.features.len() != out_layer.in_dim() || cache.scaled.len() != self.hidden.len() {
            return Err(Error::shape(
                "stale forward cache",
                out_layer.in_dim(),
                cache.features.len(),
            ));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape("gradient layers", self.layers.len(), grads.layers.len()));
        }

        let mut dfeat = vec![0.0; cache.features.len()];
        let n_hidden = self.hidden.len();
        {
            let g = &mut grads.layers[n_hidden];
            let cols = out_layer.in_dim();
            for (r, &go) in grad_output.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                axpy(go, &cache.features, &mut g.weight[r * cols..(r + 1) * cols]);
                g.bias[r] += go;
                axpy(go, out_layer.weight.row(r), &mut dfeat);
            }
        }

        for k in (0..n_hidden).rev() {
            let layer = &self.layers[k];
            let norm = layer.norm.as_ref().expect("hidden layers are normalized");
            let width = layer.out_dim();
            let offset = cache.hidden_offset(self.input_dim, k);
            let xhat = &cache.normalized[k];
            let y = &cache.scaled[k];
            let istd = cache.inv_std[k];
            let g = &mut grads.layers[k];

            let mut dxhat = vec![0.0; width];
            for i in 0..width {
                let dy = dfeat[offset + i] * ACTIVATION.derivative(y[i]);
                g.gain[i] += dy * xhat[i];
                g.shift[i] += dy;
                dxhat[i] = dy * norm.gain[i];
            }
            let mean_d = dxhat.iter().sum::<f64>() / width as f64;
            let mean_dx = dot(&dxhat, xhat) / width as f64;
            let cols = layer.in_dim();
            let inputs = &cache.features[..cols];
            for i in 0..width {
                let dz = istd * (dxhat[i] - mean_d - xhat[i] * mean_dx);
                if dz == 0.0 {
                    continue;
                }
                axpy(dz, inputs, &mut g.weight[i * cols..(i + 1) * cols]);
                g.bias[i] += dz;
                axpy(dz, layer.weight.row(i), &mut dfeat[..cols]);
            }
        }

        dfeat.truncate(self.input_dim);
        Ok(dfeat)
    }

    /// Gradients of `output . grad_output` for a single sample.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
    ) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let input_grad = self.backward_into(cache, grad_output, &mut grads)?;
        Ok((grads, input_grad))
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    let limit = scale / (cols as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(rows, cols, values).expect("shape is consistent by construction")
}

impl ParamTensors for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.values());
            out.push(l.bias.as_slice());
            if let Some(n) = &l.norm {
                out.push(n.gain.as_slice());
                out.push(n.shift.as_slice());
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.values_mut());
            out.push(l.bias.as_mut_slice());
            if let Some(n) = &mut l.norm {
                out.push(n.gain.as_mut_slice());
                out.push(n.shift.as_mut_slice());
            }
        }
        out
    }
}

impl ParamTensors for MlpGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if !l.gain.is_empty() {
                out.push(l.gain.as_slice());
                out.push(l.shift.as_slice());
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if !l.gain.is_empty() {
                out.push(l.gain.as_mut_slice());
                out.push(l.shift.as_mut_slice());
            }
        }
        out
    }
}
