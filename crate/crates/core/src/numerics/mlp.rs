use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{axpy, dot, sigmoid, softmax_in_place, Tensor};
use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputTransform {
    Identity,
    Sigmoid,
    Softmax,
}

/// Fully connected layer. `weight` is `[fan_in, fan_out]`, row `i` holding the
/// outgoing weights of input unit `i`, so sparse inputs skip whole rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    fan_in: usize,
    fan_out: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(fan_in: usize, fan_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::Config("dense layer dimensions must be positive".into()));
        }
        if weight.len() != fan_in * fan_out || bias.len() != fan_out {
            return Err(Error::Config(format!(
                "dense layer {fan_in}x{fan_out} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Config("dense layer parameters must be finite".into()));
        }
        Ok(Self {
            fan_in,
            fan_out,
            weight,
            bias,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        Self {
            fan_in,
            fan_out,
            weight,
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// `out = x W + b` for one row.
    #[inline]
    pub(crate) fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, &self.weight[i * self.fan_out..(i + 1) * self.fan_out], out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients with the same layout as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Weights then bias, layer by layer; same order as [`Mlp::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    /// `acts[l]` is the input of layer `l` (post-activation of layer `l - 1`).
    acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Post-transform output, `[batch, output_dim]`.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Feed-forward network: dense layers, an activation between consecutive
/// layers and a transform on the final output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    activations: Vec<Activation>,
    output: OutputTransform,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.activations == other.activations && self.output == other.output
    }
}

impl Mlp {
    /// Randomly initialised network with `sizes = [input, hidden.., output]`
    /// and the same activation after every hidden layer.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: OutputTransform,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect::<Vec<_>>();
        let activations = vec![hidden; layers.len() - 1];
        Self::from_layers(layers, activations, output)
    }

    pub fn from_layers(layers: Vec<Dense>, activations: Vec<Activation>, output: OutputTransform) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::Config(format!(
                "{} layers need {} activations, got {}",
                layers.len(),
                layers.len() - 1,
                activations.len()
            )));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out != w[1].fan_in {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].fan_out,
                    i + 1,
                    w[1].fan_in
                )));
            }
        }
        Ok(Self {
            layers,
            activations,
            output,
            version: next_version(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn output_transform(&self) -> OutputTransform {
        self.output
    }

    /// Layer widths including input and output.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.fan_out))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("parameters must be finite".into()));
        }
        let mut offset = 0;
        for l in self.layers_mut() {
            let n = l.weight.len();
            l.weight.copy_from_slice(&values[offset..offset + n]);
            offset += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Mutable layer access; invalidates outstanding forward caches.
    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        self.version = next_version();
        &mut self.layers
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        if batch == 0 || len != batch * self.input_dim() {
            return Err(Error::Config(format!(
                "input of {len} values does not form {batch} rows of width {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn apply_activation(act: Activation, values: &mut [f64]) {
        if act == Activation::Relu {
            for v in values {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    fn apply_transform(&self, values: &mut [f64]) {
        match self.output {
            OutputTransform::Identity => {}
            OutputTransform::Sigmoid => values.iter_mut().for_each(|v| *v = sigmoid(*v)),
            OutputTransform::Softmax => {
                for row in values.chunks_mut(self.output_dim()) {
                    softmax_in_place(row);
                }
            }
        }
    }

    /// Batched forward pass over `batch` rows of `input`.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input.len(), batch)?;
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let x = &acts[l];
            let mut out = vec![0.0; batch * layer.fan_out];
            for (xr, or) in x.chunks(layer.fan_in).zip(out.chunks_mut(layer.fan_out)) {
                layer.apply_row(xr, or);
            }
            if l < last {
                Self::apply_activation(self.activations[l], &mut out);
                acts.push(out);
            } else {
                self.apply_transform(&mut out);
                let cache = ForwardCache {
                    version: self.version,
                    batch,
                    acts,
                    output: out.clone(),
                };
                return Ok((out, cache));
            }
        }
        unreachable!("network has at least one layer")
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(input.len(), batch)?;
        let mut cur = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.fan_out];
            for (xr, or) in cur.chunks(layer.fan_in).zip(out.chunks_mut(layer.fan_out)) {
                layer.apply_row(xr, or);
            }
            if l < last {
                Self::apply_activation(self.activations[l], &mut out);
            } else {
                self.apply_transform(&mut out);
            }
            cur = out;
        }
        Ok(cur)
    }

    /// Forward pass on a `[in]` or `[batch, in]` tensor.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if input.row_len() != self.input_dim() || input.shape().len() > 2 {
            return Err(Error::Config(format!(
                "input shape {:?} does not match network input width {}",
                input.shape(),
                self.input_dim()
            )));
        }
        let batch = input.rows();
        let (out, cache) = self.forward_batch(input.data(), batch)?;
        let shape = if input.shape().len() == 1 {
            vec![self.output_dim()]
        } else {
            vec![batch, self.output_dim()]
        };
        Ok((Tensor::from_parts_unchecked(shape, out), cache))
    }

    fn check_cache(&self, cache: &ForwardCache, grad_len: usize) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::Usage(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        if cache.acts.len() != self.layers.len() || grad_len != cache.batch * self.output_dim() {
            return Err(Error::Usage(format!(
                "output gradient of {grad_len} values does not match cached batch {} x {}",
                cache.batch,
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Backward pass from the gradient w.r.t. the post-transform output.
    /// Parameter gradients are accumulated into `grads`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut MlpGrads,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.check_cache(cache, output_grad.len())?;
        let width = self.output_dim();
        let delta: Vec<f64> = match self.output {
            OutputTransform::Identity => output_grad.to_vec(),
            OutputTransform::Sigmoid => output_grad
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
            OutputTransform::Softmax => {
                let mut d = vec![0.0; output_grad.len()];
                for ((g, y), dr) in output_grad
                    .chunks(width)
                    .zip(cache.output.chunks(width))
                    .zip(d.chunks_mut(width))
                {
                    let gy = dot(g, y);
                    for j in 0..width {
                        dr[j] = y[j] * (g[j] - gy);
                    }
                }
                d
            }
        };
        self.backward_pre_transform(cache, delta, grads, want_input_grad)
    }

    /// Backward pass from the gradient w.r.t. the pre-transform output
    /// (the logits). Use with losses that fold the transform in.
    pub fn backward_logits(
        &self,
        cache: &ForwardCache,
        logit_grad: &[f64],
        grads: &mut MlpGrads,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.check_cache(cache, logit_grad.len())?;
        self.backward_pre_transform(cache, logit_grad.to_vec(), grads, want_input_grad)
    }

    fn backward_pre_transform(
        &self,
        cache: &ForwardCache,
        mut delta: Vec<f64>,
        grads: &mut MlpGrads,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Usage("gradient buffer does not match network".into()));
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            let x = &cache.acts[l];
            for (xr, dr) in x.chunks(layer.fan_in).zip(delta.chunks(layer.fan_out)) {
                axpy(1.0, dr, &mut g.bias);
                for (i, &xi) in xr.iter().enumerate() {
                    if xi != 0.0 {
                        axpy(xi, dr, &mut g.weight[i * layer.fan_out..(i + 1) * layer.fan_out]);
                    }
                }
            }
            if l == 0 && !want_input_grad {
                return Ok(None);
            }
            let mut dx = vec![0.0; cache.batch * layer.fan_in];
            for (dr, dxr) in delta.chunks(layer.fan_out).zip(dx.chunks_mut(layer.fan_in)) {
                for (i, v) in dxr.iter_mut().enumerate() {
                    *v = dot(&layer.weight[i * layer.fan_out..(i + 1) * layer.fan_out], dr);
                }
            }
            if l > 0 && self.activations[l - 1] == Activation::Relu {
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok(Some(delta))
    }

    /// Tensor-level backward: returns fresh parameter gradients and the input
    /// gradient shaped like the forward input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<(MlpGrads, Tensor)> {
        let mut grads = MlpGrads::zeros_like(self);
        let dx = self
            .backward_batch(cache, output_grad.data(), &mut grads, true)?
            .expect("input gradient requested");
        let shape = if output_grad.shape().len() == 1 {
            vec![self.input_dim()]
        } else {
            vec![cache.batch, self.input_dim()]
        };
        Ok((grads, Tensor::from_parts_unchecked(shape, dx)))
    }
}
