//! Feed-forward networks over a flat parameter vector.
//!
//! Differentiation is layer-wise: every layer knows its forward map, its
//! vector-Jacobian product (reverse mode) and its Jacobian-vector product
//! with respect to a parameter tangent (forward mode). Samples are processed
//! one at a time in batch order, so every batch reduction is deterministic.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::loss::LossKind;
use crate::rng::Rng;

/// Flat vector of all network parameters.
pub type ParamVector = Vec<f64>;

/// Default memory cap for a dense output Jacobian: 2 GiB.
pub const DEFAULT_JACOBIAN_CAP: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// `x` for `x >= 0`, `alpha (eˣ − 1)` otherwise.
    Elu { alpha: f64 },
    /// `x` for `x >= 0`, `slope · x` otherwise.
    LeakyRelu { slope: f64 },
    Identity,
}

impl Activation {
    pub const ELU: Activation = Activation::Elu { alpha: 1.0 };
    pub const LEAKY_RELU: Activation = Activation::LeakyRelu { slope: 0.1 };

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu { alpha } if z < 0.0 => alpha * z.exp_m1(),
            Activation::LeakyRelu { slope } if z < 0.0 => slope * z,
            _ => z,
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu { alpha } if z < 0.0 => alpha * z.exp(),
            Activation::LeakyRelu { slope } if z < 0.0 => slope,
            _ => 1.0,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Activation::Elu { alpha } if !(alpha > 0.0) => {
                Err(Error::InvalidNetwork(format!("ELU alpha must be positive, got {alpha}")))
            }
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(
                Error::InvalidNetwork(format!("leaky ReLU slope must be in (0, 1), got {slope}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Activation tensor shape, channel-major. Flat vectors are `(d, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(len: usize) -> Self {
        Self::image(len, 1, 1)
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_flat(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Valid-padding 2-D convolution with a square kernel.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    /// Non-overlapping max pooling; trailing rows/columns that do not fill a
    /// window are dropped.
    MaxPool2d { window: usize },
    Flatten,
}

impl LayerSpec {
    fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => inputs * outputs,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel,
            _ => 0,
        }
    }

    fn bias_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2d { out_channels, .. } => out_channels,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |msg: String| Err(Error::InvalidNetwork(msg));
        match *self {
            LayerSpec::Dense {
                inputs,
                outputs,
                activation,
            } => {
                activation.validate()?;
                if inputs == 0 || outputs == 0 {
                    return bad("dense layer with zero width".into());
                }
                if !input.is_flat() || input.channels != inputs {
                    return bad(format!("dense layer expects {inputs} flat inputs, got {input:?}"));
                }
                Ok(Shape::flat(outputs))
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                activation,
            } => {
                activation.validate()?;
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("conv layer with zero dimension".into());
                }
                if input.channels != in_channels || input.height < kernel || input.width < kernel {
                    return bad(format!(
                        "conv layer ({in_channels} channels, kernel {kernel}) cannot take {input:?}"
                    ));
                }
                Ok(Shape::image(
                    out_channels,
                    (input.height - kernel) / stride + 1,
                    (input.width - kernel) / stride + 1,
                ))
            }
            LayerSpec::MaxPool2d { window } => {
                if window == 0 || input.height < window || input.width < window {
                    return bad(format!("max pool window {window} cannot take {input:?}"));
                }
                Ok(Shape::image(
                    input.channels,
                    input.height / window,
                    input.width / window,
                ))
            }
            LayerSpec::Flatten => Ok(Shape::flat(input.len())),
        }
    }
}

/// A validated layer stack with its parameter layout.
///
/// Each parametrised layer owns a contiguous slice of θ: weights first
/// (dense: `out × in` row-major; conv: `out_ch × in_ch × k × k`), then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    /// `shapes[l]` is the input of layer `l`; the last entry is the output.
    shapes: Vec<Shape>,
    /// `offsets[l]` is where layer `l` starts in θ; the last entry is `n`.
    offsets: Vec<usize>,
}

impl Network {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() || input.is_empty() {
            return Err(Error::InvalidNetwork("empty network".into()));
        }
        let mut shapes = vec![input];
        let mut offsets = vec![0];
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
            offsets.push(offsets.last().unwrap() + layer.param_count());
        }
        if !shapes.last().unwrap().is_flat() {
            return Err(Error::InvalidNetwork("network output must be flat".into()));
        }
        Ok(Self {
            layers,
            shapes,
            offsets,
        })
    }

    /// `1 → hidden → 1` MLP with an ELU hidden layer.
    pub fn sine_mlp(hidden: usize) -> Result<Self> {
        Self::new(
            Shape::flat(1),
            vec![
                LayerSpec::Dense {
                    inputs: 1,
                    outputs: hidden,
                    activation: Activation::ELU,
                },
                LayerSpec::Dense {
                    inputs: hidden,
                    outputs: 1,
                    activation: Activation::Identity,
                },
            ],
        )
    }

    /// Reference MNIST CNN: two 5×5 conv layers with 8 channels, each followed
    /// by leaky ReLU and 2×2 max pooling, then a dense layer to 10 logits.
    pub fn mnist_cnn() -> Self {
        let conv = |in_channels| LayerSpec::Conv2d {
            in_channels,
            out_channels: 8,
            kernel: 5,
            stride: 1,
            activation: Activation::LEAKY_RELU,
        };
        Self::new(
            Shape::image(1, 28, 28),
            vec![
                conv(1),
                LayerSpec::MaxPool2d { window: 2 },
                conv(8),
                LayerSpec::MaxPool2d { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: 10,
                    activation: Activation::Identity,
                },
            ],
        )
        .expect("reference CNN is well formed")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    /// Parameter slice owned by layer `l`.
    pub fn layer_params<'a>(&self, l: usize, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.offsets[l]..self.offsets[l + 1]]
    }

    fn check(&self, theta: &[f64], batch: &Batch) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a network with {}",
                theta.len(),
                self.param_count()
            )));
        }
        if batch.inputs.cols() != self.input_len() || batch.targets.cols() != self.output_len() {
            return Err(Error::ShapeMismatch(format!(
                "batch of {}-dim inputs / {}-dim targets for a {} -> {} network",
                batch.inputs.cols(),
                batch.targets.cols(),
                self.input_len(),
                self.output_len()
            )));
        }
        Ok(())
    }

    fn forward_sample(&self, theta: &[f64], x: &[f64]) -> Trace {
        let depth = self.layers.len();
        let mut trace = Trace {
            values: Vec::with_capacity(depth + 1),
            pre: Vec::with_capacity(depth),
            argmax: Vec::with_capacity(depth),
        };
        trace.values.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &trace.values[l];
            let params = self.layer_params(l, theta);
            let (in_shape, out_shape) = (self.shapes[l], self.shapes[l + 1]);
            let mut pre = Vec::new();
            let mut argmax = Vec::new();
            let out = match *layer {
                LayerSpec::Dense {
                    inputs,
                    outputs,
                    activation,
                } => {
                    let (w, b) = params.split_at(inputs * outputs);
                    pre = (0..outputs)
                        .map(|o| b[o] + dot(&w[o * inputs..(o + 1) * inputs], input))
                        .collect();
                    pre.iter().map(|&z| activation.apply(z)).collect()
                }
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    activation,
                    ..
                } => {
                    let (w, b) = params.split_at(layer.weight_count());
                    let conv = Conv {
                        input: in_shape,
                        output: out_shape,
                        kernel,
                        stride,
                    };
                    pre = conv.bias_init(b);
                    conv.accumulate(w, input, &mut pre);
                    pre.iter().map(|&z| activation.apply(z)).collect()
                }
                LayerSpec::MaxPool2d { window } => {
                    let (out, idx) = max_pool(input, in_shape, out_shape, window);
                    argmax = idx;
                    out
                }
                LayerSpec::Flatten => input.clone(),
            };
            trace.pre.push(pre);
            trace.argmax.push(argmax);
            trace.values.push(out);
        }
        trace
    }

    /// Adds `(∂ŷ/∂θ)ᵀ · dout` for one traced sample into `grad`.
    fn backward_sample(&self, theta: &[f64], trace: &Trace, dout: &[f64], grad: &mut [f64]) {
        let mut delta = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input = &trace.values[l];
            let params = self.layer_params(l, theta);
            let g = &mut grad[self.offsets[l]..self.offsets[l + 1]];
            let need_input_grad = l > 0;
            let (in_shape, out_shape) = (self.shapes[l], self.shapes[l + 1]);
            delta = match layer {
                LayerSpec::Dense {
                    inputs,
                    outputs,
                    activation,
                } => {
                    let pre = &trace.pre[l];
                    let dz: Vec<f64> = delta
                        .iter()
                        .zip(pre)
                        .map(|(d, &z)| d * activation.derivative(z))
                        .collect();
                    let (gw, gb) = g.split_at_mut(inputs * outputs);
                    let w = &params[..inputs * outputs];
                    let mut dx = vec![0.0; if need_input_grad { inputs } else { 0 }];
                    for (o, &d) in dz.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        axpy(d, input, &mut gw[o * inputs..(o + 1) * inputs]);
                        gb[o] += d;
                        if need_input_grad {
                            axpy(d, &w[o * inputs..(o + 1) * inputs], &mut dx);
                        }
                    }
                    dx
                }
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    activation,
                    ..
                } => {
                    let pre = &trace.pre[l];
                    let dz: Vec<f64> = delta
                        .iter()
                        .zip(pre)
                        .map(|(d, &z)| d * activation.derivative(z))
                        .collect();
                    let conv = Conv {
                        input: in_shape,
                        output: out_shape,
                        kernel,
                        stride,
                    };
                    let (gw, gb) = g.split_at_mut(layer.weight_count());
                    let w = &params[..layer.weight_count()];
                    conv.backward(w, input, &dz, gw, gb, need_input_grad)
                }
                LayerSpec::MaxPool2d { .. } => {
                    let mut dx = vec![0.0; in_shape.len()];
                    for (&src, d) in trace.argmax[l].iter().zip(&delta) {
                        dx[src] += d;
                    }
                    dx
                }
                LayerSpec::Flatten => delta,
            };
        }
    }

    /// Forward-mode output tangent `(∂ŷ/∂θ) · v` for one traced sample.
    fn tangent_sample(&self, theta: &[f64], trace: &Trace, v: &[f64]) -> Vec<f64> {
        // Input tangent is zero; `None` stands for that before the first
        // parametrised layer.
        let mut tangent: Option<Vec<f64>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &trace.values[l];
            let params = self.layer_params(l, theta);
            let dparams = &v[self.offsets[l]..self.offsets[l + 1]];
            let (in_shape, out_shape) = (self.shapes[l], self.shapes[l + 1]);
            tangent = match *layer {
                LayerSpec::Dense {
                    inputs,
                    outputs,
                    activation,
                } => {
                    let (w, _) = params.split_at(inputs * outputs);
                    let (dw, db) = dparams.split_at(inputs * outputs);
                    let pre = &trace.pre[l];
                    let out = (0..outputs)
                        .map(|o| {
                            let row = o * inputs..(o + 1) * inputs;
                            let mut dz = db[o] + dot(&dw[row.clone()], input);
                            if let Some(dx) = &tangent {
                                dz += dot(&w[row], dx);
                            }
                            activation.derivative(pre[o]) * dz
                        })
                        .collect();
                    Some(out)
                }
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    activation,
                    ..
                } => {
                    let nw = layer.weight_count();
                    let conv = Conv {
                        input: in_shape,
                        output: out_shape,
                        kernel,
                        stride,
                    };
                    let mut dz = conv.bias_init(&dparams[nw..]);
                    conv.accumulate(&dparams[..nw], input, &mut dz);
                    if let Some(dx) = &tangent {
                        conv.accumulate(&params[..nw], dx, &mut dz);
                    }
                    for (d, &z) in dz.iter_mut().zip(&trace.pre[l]) {
                        *d *= activation.derivative(z);
                    }
                    Some(dz)
                }
                LayerSpec::MaxPool2d { .. } => tangent
                    .map(|dx| trace.argmax[l].iter().map(|&src| dx[src]).collect()),
                LayerSpec::Flatten => tangent,
            };
        }
        tangent.unwrap_or_else(|| vec![0.0; self.output_len()])
    }
}

struct Trace {
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    values: Vec<Vec<f64>>,
    /// Pre-activations of dense and conv layers.
    pre: Vec<Vec<f64>>,
    /// Source index of every max-pool output.
    argmax: Vec<Vec<usize>>,
}

impl Trace {
    fn output(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

struct Conv {
    input: Shape,
    output: Shape,
    kernel: usize,
    stride: usize,
}

impl Conv {
    fn bias_init(&self, b: &[f64]) -> Vec<f64> {
        let plane = self.output.height * self.output.width;
        b.iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect()
    }

    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.input.channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    /// `z += conv(x, w)` without bias.
    fn accumulate(&self, w: &[f64], x: &[f64], z: &mut [f64]) {
        let (ih, iw) = (self.input.height, self.input.width);
        let (oh, ow) = (self.output.height, self.output.width);
        let s = self.stride;
        for oc in 0..self.output.channels {
            for ic in 0..self.input.channels {
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let wv = w[self.weight_index(oc, ic, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let xrow = &x[(ic * ih + oy * s + ky) * iw + kx..];
                            let zrow = &mut z[(oc * oh + oy) * ow..(oc * oh + oy + 1) * ow];
                            if s == 1 {
                                for (zv, xv) in zrow.iter_mut().zip(xrow) {
                                    *zv += wv * xv;
                                }
                            } else {
                                for (ox, zv) in zrow.iter_mut().enumerate() {
                                    *zv += wv * xrow[ox * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates weight and bias gradients and returns the input gradient
    /// (empty when not requested).
    fn backward(
        &self,
        w: &[f64],
        x: &[f64],
        dz: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
        need_input_grad: bool,
    ) -> Vec<f64> {
        let (ih, iw) = (self.input.height, self.input.width);
        let (oh, ow) = (self.output.height, self.output.width);
        let s = self.stride;
        let plane = oh * ow;
        let mut dx = vec![0.0; if need_input_grad { self.input.len() } else { 0 }];
        for oc in 0..self.output.channels {
            let dzc = &dz[oc * plane..(oc + 1) * plane];
            gb[oc] += dzc.iter().sum::<f64>();
            for ic in 0..self.input.channels {
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let wi = self.weight_index(oc, ic, ky, kx);
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let base = (ic * ih + oy * s + ky) * iw + kx;
                            let drow = &dzc[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                acc += dot(drow, &x[base..base + ow]);
                            } else {
                                for (ox, d) in drow.iter().enumerate() {
                                    acc += d * x[base + ox * s];
                                }
                            }
                            if need_input_grad {
                                let wv = w[wi];
                                for (ox, d) in drow.iter().enumerate() {
                                    dx[base + ox * s] += wv * d;
                                }
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        dx
    }
}

fn max_pool(x: &[f64], input: Shape, output: Shape, window: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(output.len());
    let mut idx = Vec::with_capacity(output.len());
    for c in 0..output.channels {
        for oy in 0..output.height {
            for ox in 0..output.width {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        let i = (c * input.height + oy * window + dy) * input.width + ox * window + dx;
                        if best == usize::MAX || x[i] > best_v {
                            best = i;
                            best_v = x[i];
                        }
                    }
                }
                out.push(best_v);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

/// A set of input/target pairs, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Matrix,
    targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() == 0 || inputs.rows() != targets.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs with {} targets",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }

    /// Copies the given rows, in order, into a new batch.
    pub fn select(&self, rows: &[usize]) -> Result<Batch> {
        let pick = |m: &Matrix| {
            let mut data = Vec::with_capacity(rows.len() * m.cols());
            for &r in rows {
                data.extend_from_slice(m.row(r));
            }
            Matrix::new(rows.len(), m.cols(), data)
        };
        Batch::new(pick(&self.inputs)?, pick(&self.targets)?)
    }
}

/// Loss and, for classification, accuracy of a network on a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_loss(loss: LossKind, out: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    loss.value_and_output_grad(out, target).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFiniteLoss,
        other => other,
    })
}

fn finite_mean(sum: f64, n: usize) -> Result<f64> {
    let f = sum / n as f64;
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFiniteLoss)
    }
}

/// Weights ~ U(−√(6/fan_in), √(6/fan_in)) in layout order, biases zero.
pub fn init_params(net: &Network, seed: u64) -> ParamVector {
    let mut rng = Rng::new(seed);
    let mut theta = vec![0.0; net.param_count()];
    for (l, layer) in net.layers.iter().enumerate() {
        let nw = layer.weight_count();
        if nw == 0 {
            continue;
        }
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        let start = net.offsets[l];
        for w in &mut theta[start..start + nw] {
            *w = rng.uniform(-bound, bound);
        }
    }
    theta
}

/// Network outputs, one row per sample.
pub fn forward(net: &Network, theta: &[f64], batch: &Batch) -> Result<Matrix> {
    net.check(theta, batch)?;
    let c = net.output_len();
    let mut out = Matrix::zeros(batch.len(), c);
    for i in 0..batch.len() {
        let trace = net.forward_sample(theta, batch.input(i));
        out.row_mut(i).copy_from_slice(trace.output());
    }
    Ok(out)
}

/// Mean loss over the batch using forward passes only.
pub fn loss_value(net: &Network, theta: &[f64], batch: &Batch, loss: LossKind) -> Result<f64> {
    Ok(evaluate(net, theta, batch, loss)?.loss)
}

pub fn evaluate(net: &Network, theta: &[f64], batch: &Batch, loss: LossKind) -> Result<Evaluation> {
    net.check(theta, batch)?;
    let mut sum = 0.0;
    let mut correct = 0usize;
    for i in 0..batch.len() {
        let trace = net.forward_sample(theta, batch.input(i));
        let (e, _) = sample_loss(loss, trace.output(), batch.target(i))?;
        sum += e;
        if argmax(trace.output()) == argmax(batch.target(i)) {
            correct += 1;
        }
    }
    let accuracy = match loss {
        LossKind::SoftmaxCrossEntropy => Some(correct as f64 / batch.len() as f64),
        LossKind::Mse => None,
    };
    Ok(Evaluation {
        loss: finite_mean(sum, batch.len())?,
        accuracy,
    })
}

/// Mean loss `f = (1/N) Σ ε(ŷ_i, y_i)` and its gradient by reverse mode.
pub fn grad(net: &Network, theta: &[f64], batch: &Batch, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    net.check(theta, batch)?;
    let n = net.param_count();
    let mut g = vec![0.0; n];
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let trace = net.forward_sample(theta, batch.input(i));
        let (e, de) = sample_loss(loss, trace.output(), batch.target(i))?;
        sum += e;
        net.backward_sample(theta, &trace, &de, &mut g);
    }
    let f = finite_mean(sum, batch.len())?;
    let inv = 1.0 / batch.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok((f, g))
}

/// Per-sample gradients together with the batch loss and mean gradient.
#[derive(Debug, Clone)]
pub struct SampleGradients {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Row `i` is `∇f_i`.
    pub per_sample: Matrix,
}

pub fn per_sample_grads(
    net: &Network,
    theta: &[f64],
    batch: &Batch,
    loss: LossKind,
) -> Result<SampleGradients> {
    net.check(theta, batch)?;
    let n = net.param_count();
    let mut per_sample = Matrix::zeros(batch.len(), n);
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let trace = net.forward_sample(theta, batch.input(i));
        let (e, de) = sample_loss(loss, trace.output(), batch.target(i))?;
        sum += e;
        net.backward_sample(theta, &trace, &de, per_sample.row_mut(i));
    }
    let f = finite_mean(sum, batch.len())?;
    let mut g = vec![0.0; n];
    for i in 0..batch.len() {
        axpy(1.0, per_sample.row(i), &mut g);
    }
    let inv = 1.0 / batch.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(SampleGradients {
        loss: f,
        grad: g,
        per_sample,
    })
}

fn check_jacobian_size(net: &Network, batch: &Batch, cap: usize) -> Result<()> {
    let needed = batch
        .len()
        .saturating_mul(net.output_len())
        .saturating_mul(net.param_count())
        .saturating_mul(std::mem::size_of::<f64>());
    if needed > cap {
        return Err(Error::JacobianTooLarge { needed, cap });
    }
    Ok(())
}

/// Stacked output Jacobian (`N·c × n`) under the default memory cap.
pub fn output_jacobian(net: &Network, theta: &[f64], batch: &Batch) -> Result<Matrix> {
    output_jacobian_capped(net, theta, batch, DEFAULT_JACOBIAN_CAP)
}

/// Row `i·c + j` holds `∂(ŷ_i)_j/∂θ`, computed by one reverse pass per output.
pub fn output_jacobian_capped(
    net: &Network,
    theta: &[f64],
    batch: &Batch,
    cap_bytes: usize,
) -> Result<Matrix> {
    net.check(theta, batch)?;
    check_jacobian_size(net, batch, cap_bytes)?;
    let c = net.output_len();
    let mut jac = Matrix::zeros(batch.len() * c, net.param_count());
    let mut seed = vec![0.0; c];
    for i in 0..batch.len() {
        let trace = net.forward_sample(theta, batch.input(i));
        for j in 0..c {
            seed[j] = 1.0;
            net.backward_sample(theta, &trace, &seed, jac.row_mut(i * c + j));
            seed[j] = 0.0;
        }
    }
    Ok(jac)
}

/// Everything a Jacobian-based curvature step needs from one pass over the batch.
#[derive(Debug, Clone)]
pub struct JacobianSystem {
    pub loss: f64,
    /// Mean gradient, accumulated as `(1/N) Σ J_iᵀ ∂ε/∂ŷ_i`.
    pub grad: Vec<f64>,
    pub jacobian: Matrix,
    /// Network outputs, `N × c`.
    pub outputs: Matrix,
}

pub fn jacobian_system(
    net: &Network,
    theta: &[f64],
    batch: &Batch,
    loss: LossKind,
    cap_bytes: usize,
) -> Result<JacobianSystem> {
    net.check(theta, batch)?;
    check_jacobian_size(net, batch, cap_bytes)?;
    let c = net.output_len();
    let n = net.param_count();
    let mut jac = Matrix::zeros(batch.len() * c, n);
    let mut outputs = Matrix::zeros(batch.len(), c);
    let mut g = vec![0.0; n];
    let mut sum = 0.0;
    let mut seed = vec![0.0; c];
    for i in 0..batch.len() {
        let trace = net.forward_sample(theta, batch.input(i));
        let (e, de) = sample_loss(loss, trace.output(), batch.target(i))?;
        sum += e;
        outputs.row_mut(i).copy_from_slice(trace.output());
        for j in 0..c {
            seed[j] = 1.0;
            net.backward_sample(theta, &trace, &seed, jac.row_mut(i * c + j));
            seed[j] = 0.0;
            if de[j] != 0.0 {
                axpy(de[j], jac.row(i * c + j), &mut g);
            }
        }
    }
    let f = finite_mean(sum, batch.len())?;
    let inv = 1.0 / batch.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(JacobianSystem {
        loss: f,
        grad: g,
        jacobian: jac,
        outputs,
    })
}

/// Matrix-free Gauss-Newton product `(1/N) Σ J_iᵀ H_i J_i v`: a tangent pass
/// for `J_i v`, the loss output Hessian, then a reverse pass.
pub fn gn_vector_product(
    net: &Network,
    theta: &[f64],
    batch: &Batch,
    loss: LossKind,
    v: &[f64],
) -> Result<Vec<f64>> {
    net.check(theta, batch)?;
    if v.len() != net.param_count() {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} for {} parameters",
            v.len(),
            net.param_count()
        )));
    }
    let mut out = vec![0.0; v.len()];
    for i in 0..batch.len() {
        let trace = net.forward_sample(theta, batch.input(i));
        let jv = net.tangent_sample(theta, &trace, v);
        let hjv = loss.output_hessian_vec(trace.output(), &jv);
        net.backward_sample(theta, &trace, &hjv, &mut out);
    }
    let inv = 1.0 / batch.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}
