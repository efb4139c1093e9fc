//! Layered differentiable classifiers: forward evaluation of class logits
//! and exact reverse-mode gradients with respect to the input image.
//!
//! The layer set is deliberately small: dense, 2-D convolution (stride 1,
//! configurable padding), 2x2 max-pool, ReLU, and flatten. Every forward
//! call builds a fresh activation trace; nothing is cached across calls, so
//! a shared model can serve any number of concurrent evaluations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Logits, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Stride-1 square convolution with symmetric zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    MaxPool2x2,
    Relu,
    Flatten,
}

impl LayerSpec {
    /// Output shape produced from `input`, or a spec error if the shapes do
    /// not compose.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(Error::Spec(format!(
                        "dense layer expects 1-D input of {inputs}, got {input:?}"
                    )));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                let [c, h, w] = three_d(input, "conv2d")?;
                if c != *in_channels {
                    return Err(Error::Spec(format!(
                        "conv2d expects {in_channels} input channels, got {c}"
                    )));
                }
                if *kernel == 0 {
                    return Err(Error::Spec("conv2d kernel must be positive".into()));
                }
                let ho = (h + 2 * padding).checked_sub(*kernel - 1);
                let wo = (w + 2 * padding).checked_sub(*kernel - 1);
                match (ho, wo) {
                    (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(vec![*out_channels, ho, wo]),
                    _ => Err(Error::Spec(format!(
                        "conv2d kernel {kernel} too large for {h}x{w} input with padding {padding}"
                    ))),
                }
            }
            LayerSpec::MaxPool2x2 => {
                let [c, h, w] = three_d(input, "max-pool")?;
                if h < 2 || w < 2 {
                    return Err(Error::Spec(format!(
                        "max-pool needs at least 2x2 input, got {h}x{w}"
                    )));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of this layer's parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                vec![vec![*outputs, *inputs], vec![*outputs]]
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![*out_channels, *in_channels, *kernel, *kernel],
                vec![*out_channels],
            ],
            _ => vec![],
        }
    }
}

fn three_d(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(Error::Spec(format!(
            "{what} expects [channels, height, width], got {other:?}"
        ))),
    }
}

/// Architecture description: input shape, ordered layers, class count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

impl ModelSpec {
    /// Shape after every layer, starting with the input shape. Errors if any
    /// adjacent pair fails to compose or the final layer does not emit
    /// `class_count` logits.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Spec("model has no layers".into()));
        }
        if self.class_count == 0 {
            return Err(Error::Spec("class count must be positive".into()));
        }
        let mut shapes = vec![self.input_shape.to_vec()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        if shapes.last().unwrap() != &[self.class_count] {
            return Err(Error::Spec(format!(
                "final layer emits {:?}, expected [{}] logits",
                shapes.last().unwrap(),
                self.class_count
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Parameter tensor shapes for the whole model, in layer order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .collect()
    }

    /// For each layer, the index of its first parameter tensor.
    fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut next = 0;
        for layer in &self.layers {
            offsets.push(next);
            next += layer.param_shapes().len();
        }
        offsets
    }
}

/// Provenance carried alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_accuracy: Option<f64>,
    pub distill_temperature: Option<f64>,
}

/// A classifier: spec, parameters, and training metadata. Immutable during
/// inference; all evaluation entry points take `&self`.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    params: Vec<Tensor<T>>,
    meta: ModelMeta,
}

/// Per-layer activations recorded by one forward pass. `acts[0]` is the
/// input; `acts[i + 1]` is the output of layer `i`.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    acts: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("trace has activations")
    }

    pub fn logits(&self) -> Logits<T> {
        Logits::new(self.output().clone()).expect("model output is 1-D")
    }
}

impl<T: Scalar> Model<T> {
    /// Assemble a model, checking that the parameter tensors match the spec
    /// exactly.
    pub fn new(spec: ModelSpec, params: Vec<Tensor<T>>, meta: ModelMeta) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Spec(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (want, have)) in expected.iter().zip(&params).enumerate() {
            if want.as_slice() != have.shape() {
                return Err(Error::ShapeMismatch {
                    context: "model parameter",
                    expected: want.clone(),
                    got: [have.shape(), &[i]].concat(),
                });
            }
        }
        Ok(Model { spec, params, meta })
    }

    /// Affine classifier `f(x) = Wx + b` over a flat `D`-dimensional input
    /// presented as a `[1, 1, D]` image.
    pub fn affine(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [classes, dim] = match weights.shape() {
            [c, d] => [*c, *d],
            other => {
                return Err(Error::ShapeMismatch {
                    context: "affine weights",
                    expected: vec![2],
                    got: other.to_vec(),
                })
            }
        };
        let spec = ModelSpec {
            input_shape: [1, 1, dim],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: dim,
                    outputs: classes,
                },
            ],
            class_count: classes,
        };
        Model::new(spec, vec![weights, bias], ModelMeta::default())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.spec.input_shape {
            return Err(Error::ShapeMismatch {
                context: "model input",
                expected: self.spec.input_shape.to_vec(),
                got: x.shape().to_vec(),
            });
        }
        x.ensure_finite("model input")
    }

    /// Pre-softmax activations for every class. Deterministic for fixed
    /// `(model, x)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Logits<T>> {
        Ok(self.forward_trace(x)?.logits())
    }

    /// Forward pass that records every intermediate activation for reuse by
    /// the backward passes.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let offsets = self.spec.param_offsets();
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(x.clone());
        for (layer, &p0) in self.spec.layers.iter().zip(&offsets) {
            let out = self.layer_forward(layer, acts.last().unwrap(), p0)?;
            acts.push(out);
        }
        Ok(ForwardTrace { acts })
    }

    fn layer_forward(&self, layer: &LayerSpec, input: &Tensor<T>, p0: usize) -> Result<Tensor<T>> {
        let out_shape = layer.output_shape(input.shape())?;
        let mut out = Tensor::zeros(&out_shape);
        match layer {
            LayerSpec::Dense { .. } => {
                dense_forward(
                    input.data(),
                    self.params[p0].data(),
                    self.params[p0 + 1].data(),
                    out.data_mut(),
                );
            }
            LayerSpec::Conv2d {
                kernel, padding, ..
            } => {
                let [c, h, w] = three_d(input.shape(), "conv2d")?;
                let [co, ho, wo] = three_d(&out_shape, "conv2d")?;
                conv2d_forward(
                    input.data(),
                    (c, h, w),
                    self.params[p0].data(),
                    self.params[p0 + 1].data(),
                    *kernel,
                    *padding,
                    out.data_mut(),
                    (co, ho, wo),
                );
            }
            LayerSpec::MaxPool2x2 => {
                let [c, h, w] = three_d(input.shape(), "max-pool")?;
                maxpool_forward(input.data(), (c, h, w), out.data_mut());
            }
            LayerSpec::Relu => {
                for (o, v) in out.data_mut().iter_mut().zip(input.data()) {
                    *o = if *v > T::zero() { *v } else { T::zero() };
                }
            }
            LayerSpec::Flatten => {
                out.data_mut().copy_from_slice(input.data());
            }
        }
        Ok(out)
    }

    /// Exact reverse-mode gradient of the pre-softmax logit `class` with
    /// respect to the input image.
    pub fn grad_logit(&self, x: &Tensor<T>, class: usize) -> Result<Tensor<T>> {
        let trace = self.forward_trace(x)?;
        self.backward_logit(&trace, class)
    }

    /// Input gradient of one logit, reusing an existing trace.
    pub fn backward_logit(&self, trace: &ForwardTrace<T>, class: usize) -> Result<Tensor<T>> {
        if class >= self.spec.class_count {
            return Err(Error::ClassIndex {
                index: class,
                class_count: self.spec.class_count,
            });
        }
        let mut seed = vec![T::zero(); self.spec.class_count];
        seed[class] = T::one();
        Ok(self.backward(trace, &seed, None))
    }

    /// Backpropagate `grad_output` (gradient at the logits) through the
    /// trace. When `param_grads` is supplied, per-parameter gradients are
    /// accumulated into it; the input gradient is returned either way.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_output: &[T],
        mut param_grads: Option<&mut [Tensor<T>]>,
    ) -> Tensor<T> {
        let offsets = self.spec.param_offsets();
        let mut grad = Tensor::from_vec(trace.output().shape(), grad_output.to_vec())
            .expect("seed gradient matches output shape");
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let p0 = offsets[i];
            grad = self.layer_backward(layer, input, &grad, p0, param_grads.as_deref_mut());
        }
        grad
    }

    fn layer_backward(
        &self,
        layer: &LayerSpec,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        p0: usize,
        param_grads: Option<&mut [Tensor<T>]>,
    ) -> Tensor<T> {
        let mut grad_in = Tensor::zeros(input.shape());
        match layer {
            LayerSpec::Dense { .. } => {
                let (gw, gb) = split_param_grads(param_grads, p0);
                dense_backward(
                    input.data(),
                    self.params[p0].data(),
                    grad_out.data(),
                    grad_in.data_mut(),
                    gw,
                    gb,
                );
            }
            LayerSpec::Conv2d {
                kernel, padding, ..
            } => {
                let [c, h, w] = three_d(input.shape(), "conv2d").expect("validated");
                let [co, ho, wo] = three_d(grad_out.shape(), "conv2d").expect("validated");
                let (gw, gb) = split_param_grads(param_grads, p0);
                conv2d_backward(
                    input.data(),
                    (c, h, w),
                    self.params[p0].data(),
                    *kernel,
                    *padding,
                    grad_out.data(),
                    (co, ho, wo),
                    grad_in.data_mut(),
                    gw,
                    gb,
                );
            }
            LayerSpec::MaxPool2x2 => {
                let [c, h, w] = three_d(input.shape(), "max-pool").expect("validated");
                maxpool_backward(input.data(), (c, h, w), grad_out.data(), grad_in.data_mut());
            }
            LayerSpec::Relu => {
                // Subgradient at exactly zero is taken as zero.
                for ((gi, go), v) in grad_in
                    .data_mut()
                    .iter_mut()
                    .zip(grad_out.data())
                    .zip(input.data())
                {
                    *gi = if *v > T::zero() { *go } else { T::zero() };
                }
            }
            LayerSpec::Flatten => {
                grad_in.data_mut().copy_from_slice(grad_out.data());
            }
        }
        grad_in
    }

    /// Central-difference approximation of `d f_class / d x`, one forward
    /// pair per input coordinate. Intended for the 64-bit oracle mode.
    pub fn finite_diff_grad(&self, x: &Tensor<T>, class: usize, eps: T) -> Result<Tensor<T>> {
        if eps <= T::zero() {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        if class >= self.spec.class_count {
            return Err(Error::ClassIndex {
                index: class,
                class_count: self.spec.class_count,
            });
        }
        let mut probe = x.clone();
        let mut grad = Tensor::zeros(x.shape());
        let two = lit::<T>(2.0);
        for i in 0..x.len() {
            let original = probe.data()[i];
            probe.data_mut()[i] = original + eps;
            let plus = self.forward(&probe)?.get(class)?;
            probe.data_mut()[i] = original - eps;
            let minus = self.forward(&probe)?.get(class)?;
            probe.data_mut()[i] = original;
            grad.data_mut()[i] = (plus - minus) / (two * eps);
        }
        Ok(grad)
    }

    /// Hash of the discrete routing decisions (ReLU activity, pool argmax)
    /// made by a forward pass. Two inputs in the same linear region of the
    /// piecewise-linear network share a signature; finite-difference checks
    /// use this to recognise brackets that straddle a kink.
    pub fn activation_signature(&self, trace: &ForwardTrace<T>) -> u64 {
        let mut hash = Fnv::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = &trace.acts[i];
            match layer {
                LayerSpec::Relu => {
                    for v in input.data() {
                        hash.push(u8::from(*v > T::zero()));
                    }
                }
                LayerSpec::MaxPool2x2 => {
                    let [c, h, w] = three_d(input.shape(), "max-pool").expect("validated");
                    for_each_pool_window(input.data(), (c, h, w), |_, choice| {
                        hash.push(choice as u8);
                    });
                }
                _ => {}
            }
        }
        hash.finish()
    }
}

fn split_param_grads<T>(
    param_grads: Option<&mut [Tensor<T>]>,
    p0: usize,
) -> (Option<&mut Tensor<T>>, Option<&mut Tensor<T>>) {
    match param_grads {
        Some(grads) => {
            let (left, right) = grads.split_at_mut(p0 + 1);
            (Some(&mut left[p0]), Some(&mut right[0]))
        }
        None => (None, None),
    }
}

fn dense_forward<T: Scalar>(x: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let inputs = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weights[j * inputs..(j + 1) * inputs];
        let mut acc = bias[j];
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        *o = acc;
    }
}

fn dense_backward<T: Scalar>(
    x: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_in: &mut [T],
    grad_w: Option<&mut Tensor<T>>,
    grad_b: Option<&mut Tensor<T>>,
) {
    let inputs = x.len();
    for (j, g) in grad_out.iter().enumerate() {
        let row = &weights[j * inputs..(j + 1) * inputs];
        for (gi, wv) in grad_in.iter_mut().zip(row) {
            *gi += *g * *wv;
        }
    }
    if let Some(gw) = grad_w {
        let gw = gw.data_mut();
        for (j, g) in grad_out.iter().enumerate() {
            let row = &mut gw[j * inputs..(j + 1) * inputs];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += *g * *xv;
            }
        }
    }
    if let Some(gb) = grad_b {
        for (b, g) in gb.data_mut().iter_mut().zip(grad_out) {
            *b += *g;
        }
    }
}

/// One kernel row accumulated into one output row. `K = 0` falls back to
/// the runtime kernel width; `K = 3` and `K = 5` get fully unrolled taps.
fn conv_row_pass<T: Scalar, const K: usize>(
    w_row: &[T],
    x_row: &[T],
    o_row: &mut [T],
    padding: usize,
    w: usize,
    wo: usize,
) {
    if K != 0 {
        // Interior columns where every tap stays in bounds get an unrolled
        // K-wide dot; the padded edges fall through to the tap loop below.
        let mid_lo = padding.min(wo);
        let mid_hi = (w + padding + 1).saturating_sub(K).min(wo);
        if mid_lo < mid_hi {
            let w_arr: &[T; K] = w_row.try_into().expect("kernel width");
            let base = mid_lo - padding;
            for i in 0..mid_hi - mid_lo {
                let xs = &x_row[base + i..base + i + K];
                let mut acc = T::zero();
                for j in 0..K {
                    acc += w_arr[j] * xs[j];
                }
                o_row[mid_lo + i] += acc;
            }
            conv_row_taps(w_row, x_row, &mut o_row[..mid_lo], 0, padding, w);
            conv_row_taps(w_row, x_row, o_row, mid_hi, padding, w);
            return;
        }
    }
    conv_row_taps(w_row, x_row, o_row, 0, padding, w);
}

/// Tap-by-tap accumulation over output columns `[from, o_row.len())`, with
/// bounds guards for the padded borders.
fn conv_row_taps<T: Scalar>(
    w_row: &[T],
    x_row: &[T],
    o_row: &mut [T],
    from: usize,
    padding: usize,
    w: usize,
) {
    let wo = o_row.len();
    for (kx, wv) in w_row.iter().enumerate() {
        let ox_lo = padding.saturating_sub(kx).max(from);
        let ox_hi = (w + padding - kx).min(wo);
        if ox_lo >= ox_hi {
            continue;
        }
        let xs = &x_row[ox_lo + kx - padding..ox_hi + kx - padding];
        for (o, xv) in o_row[ox_lo..ox_hi].iter_mut().zip(xs) {
            *o += *wv * *xv;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward_k<T: Scalar, const K: usize>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    weights: &[T],
    bias: &[T],
    kernel: usize,
    padding: usize,
    out: &mut [T],
    (cout, ho, wo): (usize, usize, usize),
) {
    for oc in 0..cout {
        let out_plane = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
        out_plane.fill(bias[oc]);
        for ic in 0..cin {
            let x_plane = &x[ic * h * w..(ic + 1) * h * w];
            let w_base = (oc * cin + ic) * kernel * kernel;
            for ky in 0..kernel {
                let w_row = &weights[w_base + ky * kernel..w_base + (ky + 1) * kernel];
                for oy in 0..ho {
                    let iy = oy + ky;
                    if iy < padding || iy - padding >= h {
                        continue;
                    }
                    let x_row = &x_plane[(iy - padding) * w..(iy - padding) * w + w];
                    let o_row = &mut out_plane[oy * wo..oy * wo + wo];
                    conv_row_pass::<T, K>(w_row, x_row, o_row, padding, w, wo);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    weights: &[T],
    bias: &[T],
    kernel: usize,
    padding: usize,
    out: &mut [T],
    out_dims: (usize, usize, usize),
) {
    match kernel {
        3 => conv2d_forward_k::<T, 3>(x, dims, weights, bias, kernel, padding, out, out_dims),
        5 => conv2d_forward_k::<T, 5>(x, dims, weights, bias, kernel, padding, out, out_dims),
        _ => conv2d_forward_k::<T, 0>(x, dims, weights, bias, kernel, padding, out, out_dims),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Scalar>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    weights: &[T],
    kernel: usize,
    padding: usize,
    grad_out: &[T],
    (cout, ho, wo): (usize, usize, usize),
    grad_in: &mut [T],
    grad_w: Option<&mut Tensor<T>>,
    grad_b: Option<&mut Tensor<T>>,
) {
    let mut gw = grad_w.map(|t| t.data_mut());
    for oc in 0..cout {
        let g_plane = &grad_out[oc * ho * wo..(oc + 1) * ho * wo];
        for ic in 0..cin {
            let x_plane = &x[ic * h * w..(ic + 1) * h * w];
            let gi_plane = &mut grad_in[ic * h * w..(ic + 1) * h * w];
            let w_base = (oc * cin + ic) * kernel * kernel;
            for ky in 0..kernel {
                for oy in 0..ho {
                    let iy = oy + ky;
                    if iy < padding || iy - padding >= h {
                        continue;
                    }
                    let row0 = (iy - padding) * w;
                    let g_row = &g_plane[oy * wo..oy * wo + wo];
                    for kx in 0..kernel {
                        let ox_lo = padding.saturating_sub(kx);
                        let ox_hi = (w + padding - kx).min(wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let x_lo = row0 + ox_lo + kx - padding;
                        let x_hi = row0 + ox_hi + kx - padding;
                        let wv = weights[w_base + ky * kernel + kx];
                        for (gi, g) in gi_plane[x_lo..x_hi].iter_mut().zip(&g_row[ox_lo..ox_hi]) {
                            *gi += wv * *g;
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            let mut acc = T::zero();
                            for (xv, g) in x_plane[x_lo..x_hi].iter().zip(&g_row[ox_lo..ox_hi]) {
                                acc += *xv * *g;
                            }
                            gw[w_base + ky * kernel + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    if let Some(gb) = grad_b {
        for (oc, b) in gb.data_mut().iter_mut().enumerate() {
            let g_plane = &grad_out[oc * ho * wo..(oc + 1) * ho * wo];
            let mut acc = T::zero();
            for g in g_plane {
                acc += *g;
            }
            *b += acc;
        }
    }
}

/// Visit every 2x2 pool window; `f` receives the flat input index of the
/// selected element and the within-window choice (0..4, row-major, first
/// maximum wins).
fn for_each_pool_window<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    mut f: impl FnMut(usize, usize),
) {
    let (ho, wo) = (h / 2, w / 2);
    for ch in 0..c {
        let plane = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let base = plane + (2 * oy) * w + 2 * ox;
                let candidates = [base, base + 1, base + w, base + w + 1];
                let mut pick = 0;
                for (i, &idx) in candidates.iter().enumerate().skip(1) {
                    if x[idx] > x[candidates[pick]] {
                        pick = i;
                    }
                }
                f(candidates[pick], pick);
            }
        }
    }
}

fn maxpool_forward<T: Scalar>(x: &[T], dims: (usize, usize, usize), out: &mut [T]) {
    let mut cursor = 0;
    for_each_pool_window(x, dims, |idx, _| {
        out[cursor] = x[idx];
        cursor += 1;
    });
}

fn maxpool_backward<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    grad_out: &[T],
    grad_in: &mut [T],
) {
    let mut cursor = 0;
    for_each_pool_window(x, dims, |idx, _| {
        grad_in[idx] += grad_out[cursor];
        cursor += 1;
    });
}

/// FNV-1a accumulator for activation signatures.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn push(&mut self, byte: u8) {
        self.0 ^= u64::from(byte);
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
