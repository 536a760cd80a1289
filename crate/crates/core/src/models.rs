//! Desk-scale architectures and per-example forward/backward.
//!
//! A [`Model`] is a validated [`ModelSpec`] plus the layout of its parameters
//! inside one flat vector. Parameters live in a [`ParamSet`]; gradients come
//! back as [`FlatGradient`]s in the same coordinate order, with one extent per
//! parameterized layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dp_engine::{Extent, FlatGradient};
use crate::error::{Error, Result};
use crate::tensor::{
    self, conv2d_layer_forward, flatten_forward, group_norm_forward, linear_forward, max_pool_forward,
    relu_forward, softmax_cross_entropy, LayerTape, Scalar, Tensor,
};

pub const DEFAULT_GROUP_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_GROUPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GroupNorm {
        groups: usize,
        channels: usize,
        eps: f64,
    },
    /// Accepted by the spec parser only so that it can be rejected: batch
    /// statistics couple the examples of a batch.
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
}

impl LayerSpec {
    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::GroupNorm { .. } => "group_norm",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Shapes of the parameter tensors, in gradient order.
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::GroupNorm { channels, .. } => vec![vec![channels], vec![channels]],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Fully connected network `input → hidden... → classes` with ReLU
    /// between layers.
    pub fn mlp(input: usize, hidden: &[usize], num_classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec::Linear {
                inputs: prev,
                outputs: h,
            });
            layers.push(LayerSpec::Relu);
            prev = h;
        }
        layers.push(LayerSpec::Linear {
            inputs: prev,
            outputs: num_classes,
        });
        Self {
            input_shape: vec![input],
            num_classes,
            layers,
        }
    }

    /// Four conv → group_norm → relu blocks (3×3, padding 1) with 2×2 max
    /// pooling after the second and fourth block, then a linear head.
    pub fn cnn(input: [usize; 3], channels: [usize; 4], groups: usize, num_classes: usize) -> Self {
        Self::cnn_with_norm(input, channels, groups, num_classes, false)
    }

    pub(crate) fn cnn_with_norm(
        input: [usize; 3],
        channels: [usize; 4],
        groups: usize,
        num_classes: usize,
        batch_norm: bool,
    ) -> Self {
        let [c, h, w] = input;
        let mut layers = Vec::new();
        let mut prev = c;
        for (i, &ch) in channels.iter().enumerate() {
            layers.push(LayerSpec::Conv2d {
                in_channels: prev,
                out_channels: ch,
                kernel: 3,
                stride: 1,
                padding: 1,
            });
            layers.push(if batch_norm {
                LayerSpec::BatchNorm { channels: ch }
            } else {
                LayerSpec::GroupNorm {
                    groups,
                    channels: ch,
                    eps: DEFAULT_GROUP_NORM_EPS,
                }
            });
            layers.push(LayerSpec::Relu);
            if i % 2 == 1 {
                layers.push(LayerSpec::MaxPool { size: 2 });
            }
            prev = ch;
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Linear {
            inputs: prev * (h / 4) * (w / 4),
            outputs: num_classes,
        });
        Self {
            input_shape: vec![c, h, w],
            num_classes,
            layers,
        }
    }
}

/// Where one layer's parameters live in the flat vector.
#[derive(Debug, Clone, PartialEq)]
struct ParamSlot {
    extent: Extent,
    /// Offset and shape of each parameter tensor (absolute offsets).
    tensors: Vec<(usize, Vec<usize>)>,
}

impl ParamSlot {
    fn tensor<'a, T>(&self, values: &'a [T], i: usize) -> &'a [T] {
        let (off, ref shape) = self.tensors[i];
        &values[off..off + shape.iter().product::<usize>()]
    }
}

/// A validated architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    /// Output shape of each layer.
    shapes: Vec<Vec<usize>>,
    slots: Vec<Option<ParamSlot>>,
    extents: Vec<Extent>,
    dim: usize,
}

/// Flattened model parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub values: Vec<T>,
    /// One extent per parameterized layer; tiles `[0, dim)`.
    pub layer_extents: Vec<Extent>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Little-endian dump: magic `NBPARAMS`, element width in bytes (u8),
    /// element count (u64), then the values.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let width = std::mem::size_of::<T>();
        let mut out = Vec::with_capacity(17 + width * self.values.len());
        out.extend_from_slice(b"NBPARAMS");
        out.push(width as u8);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for &v in &self.values {
            v.write_le(&mut out);
        }
        out
    }
}

/// Validates `spec` and draws initial parameters from `seed`.
pub fn build_model<T: Scalar>(spec: ModelSpec, seed: u64) -> Result<(Model, ParamSet<T>)> {
    let model = Model::new(spec)?;
    let params = model.init_params(seed);
    Ok((model, params))
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::config("model.classes", "need at least 2 classes"));
        }
        if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
            return Err(Error::config("model.input_shape", "extents must be >= 1"));
        }
        let mut shapes = Vec::with_capacity(spec.layers.len());
        let mut slots = Vec::with_capacity(spec.layers.len());
        let mut extents = Vec::new();
        let mut shape = spec.input_shape.clone();
        let mut offset = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            let key = || format!("model.layers[{i}].{}", layer.name());
            let mismatch = |shape: &[usize]| Error::config(key(), format!("does not accept input of shape {shape:?}"));
            shape = match *layer {
                LayerSpec::BatchNorm { .. } => {
                    return Err(Error::Privacy(format!(
                        "layer {i} is batch_norm; batch statistics mix information across examples \
                         (use group_norm)"
                    )))
                }
                LayerSpec::Linear { inputs, outputs } => {
                    if shape != [inputs] || outputs == 0 {
                        return Err(mismatch(&shape));
                    }
                    vec![outputs]
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels || out_channels == 0 {
                        return Err(mismatch(&shape));
                    }
                    let oh = tensor::conv2d_output_extent(shape[1], kernel, stride, padding);
                    let ow = tensor::conv2d_output_extent(shape[2], kernel, stride, padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => vec![out_channels, oh, ow],
                        _ => return Err(Error::config(key(), "non-integer output extent")),
                    }
                }
                LayerSpec::GroupNorm { groups, channels, eps } => {
                    if shape.len() < 2 || shape[0] != channels {
                        return Err(mismatch(&shape));
                    }
                    if groups == 0 || channels % groups != 0 {
                        return Err(Error::config(
                            key(),
                            format!("{channels} channels not divisible into {groups} groups"),
                        ));
                    }
                    if !(eps > 0.0) {
                        return Err(Error::config(key(), "eps must be > 0"));
                    }
                    shape
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool { size } => {
                    if shape.len() != 3 || size == 0 || shape[1] < size || shape[2] < size {
                        return Err(mismatch(&shape));
                    }
                    vec![shape[0], shape[1] / size, shape[2] / size]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
            };
            let pshapes = layer.param_shapes();
            if pshapes.is_empty() {
                slots.push(None);
            } else {
                let start = offset;
                let tensors = pshapes
                    .into_iter()
                    .map(|s| {
                        let at = offset;
                        offset += s.iter().product::<usize>();
                        (at, s)
                    })
                    .collect();
                let extent = Extent::new(start, offset - start);
                extents.push(extent);
                slots.push(Some(ParamSlot { extent, tensors }));
            }
            shapes.push(shape.clone());
        }
        if shape != [spec.num_classes] {
            return Err(Error::config(
                "model.layers",
                format!("final output shape {shape:?} does not match {} classes", spec.num_classes),
            ));
        }
        Ok(Self {
            spec,
            shapes,
            slots,
            extents,
            dim: offset,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Total number of parameters `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_extents(&self) -> &[Extent] {
        &self.extents
    }

    pub fn num_param_layers(&self) -> usize {
        self.extents.len()
    }

    /// He-style init: weights ~ N(0, 2 / fan_in), biases 0, norm gamma 1 and
    /// beta 0. Draws are made in `f64` so both precisions start from the same
    /// values up to rounding.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![T::zero(); self.dim];
        for (layer, slot) in self.spec.layers.iter().zip(&self.slots) {
            let Some(slot) = slot else { continue };
            let (w_off, ref w_shape) = slot.tensors[0];
            let w_len: usize = w_shape.iter().product();
            match *layer {
                LayerSpec::Linear { inputs, .. } => fill_he(&mut values[w_off..w_off + w_len], inputs, &mut rng),
                LayerSpec::Conv2d {
                    in_channels, kernel, ..
                } => fill_he(
                    &mut values[w_off..w_off + w_len],
                    in_channels * kernel * kernel,
                    &mut rng,
                ),
                LayerSpec::GroupNorm { .. } => values[w_off..w_off + w_len].fill(T::one()),
                _ => {}
            }
        }
        ParamSet {
            values,
            layer_extents: self.extents.clone(),
        }
    }

    fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        if params.values.len() != self.dim {
            return Err(Error::Dimension {
                op: "parameter set",
                lhs: vec![self.dim],
                rhs: vec![params.values.len()],
            });
        }
        Ok(())
    }

    fn forward<'p, T: Scalar>(&self, params: &'p [T], example: &Tensor<T>) -> Result<(Tensor<T>, Vec<LayerTape<'p, T>>)> {
        if example.shape() != self.spec.input_shape.as_slice() {
            return Err(Error::Input(format!(
                "example shape {:?} does not match model input {:?}",
                example.shape(),
                self.spec.input_shape
            )));
        }
        let mut x = example.clone();
        let mut tapes = Vec::with_capacity(self.spec.layers.len());
        for (layer, slot) in self.spec.layers.iter().zip(&self.slots) {
            let (y, tape) = match (*layer, slot) {
                (LayerSpec::Linear { .. }, Some(slot)) => {
                    linear_forward(x, slot.tensor(params, 0), slot.tensor(params, 1))?
                }
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Some(slot),
                ) => conv2d_layer_forward(
                    x,
                    slot.tensor(params, 0),
                    [out_channels, in_channels, kernel, kernel],
                    slot.tensor(params, 1),
                    stride,
                    padding,
                )?,
                (LayerSpec::GroupNorm { groups, eps, .. }, Some(slot)) => {
                    let shape = x.shape().to_vec();
                    let batched = x.reshape(&[&[1], shape.as_slice()].concat())?;
                    let (y, tape) =
                        group_norm_forward(&batched, groups, slot.tensor(params, 0), slot.tensor(params, 1), eps)?;
                    (y.reshape(&shape)?, tape)
                }
                (LayerSpec::Relu, _) => relu_forward(x),
                (LayerSpec::MaxPool { size }, _) => max_pool_forward(&x, size)?,
                (LayerSpec::Flatten, _) => flatten_forward(x),
                (layer, _) => return Err(Error::Internal(format!("no kernel for {}", layer.name()))),
            };
            tapes.push(tape);
            x = y;
        }
        Ok((x, tapes))
    }

    /// Class scores for one example.
    pub fn logits<T: Scalar>(&self, params: &ParamSet<T>, example: &Tensor<T>) -> Result<Vec<T>> {
        self.check_params(params)?;
        Ok(self.forward(&params.values, example)?.0.into_data())
    }

    /// Single-example softmax cross-entropy loss.
    pub fn loss<T: Scalar>(&self, params: &ParamSet<T>, example: &Tensor<T>, label: usize) -> Result<T> {
        let logits = self.logits(params, example)?;
        Ok(softmax_cross_entropy(&logits, label)?.0)
    }

    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, example: &Tensor<T>) -> Result<usize> {
        let logits = self.logits(params, example)?;
        Ok(argmax(&logits))
    }

    /// Loss and gradient of one example's loss. The gradient is flattened in
    /// parameter order and records one extent per parameterized layer.
    pub fn per_example_gradient<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        example: &Tensor<T>,
        label: usize,
    ) -> Result<(T, FlatGradient<T>)> {
        self.check_params(params)?;
        if label >= self.spec.num_classes {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                self.spec.num_classes
            )));
        }
        let (logits, tapes) = self.forward(&params.values, example)?;
        let (loss, dlogits) = softmax_cross_entropy(logits.data(), label)?;
        let mut grad = vec![T::zero(); self.dim];
        let mut upstream = Tensor::new(vec![self.spec.num_classes], dlogits)?;
        for (i, tape) in tapes.into_iter().enumerate().rev() {
            // Group norm records a leading batch axis of 1.
            let expected = tape.output_shape();
            if upstream.shape() != expected.as_slice() {
                upstream = upstream.reshape(&expected)?;
            }
            let (dx, pgrads) = tensor::layers_backward(tape, &upstream, i > 0)?;
            if let Some(slot) = &self.slots[i] {
                for ((off, _), g) in slot.tensors.iter().zip(&pgrads) {
                    grad[*off..*off + g.len()].copy_from_slice(g.data());
                }
            }
            if i > 0 {
                upstream = dx.expect("input gradient requested");
                let prev = &self.shapes[i - 1];
                if upstream.shape() != prev.as_slice() {
                    upstream = upstream.reshape(prev)?;
                }
            }
        }
        Ok((loss, FlatGradient::with_layers(grad, self.extents.clone())?))
    }
}

/// First index of the maximum; NaN entries never win.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn fill_he<T: Scalar>(dst: &mut [T], fan_in: usize, rng: &mut ChaCha8Rng) {
    let std = (2.0 / fan_in as f64).sqrt();
    for v in dst {
        let z: f64 = StandardNormal.sample(rng);
        *v = T::of(z * std);
    }
}
