//! Per-layer forward kernels that record a [`LayerTape`], and the matching
//! reverse-mode backward pass.

use super::ops::{conv2d_backward_raw, conv2d_raw, ConvGeometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Conv2d,
    GroupNorm,
    Relu,
    MaxPool,
    Flatten,
}

/// Values saved by a forward call for its backward. Parameter slices are
/// borrowed from the caller's parameter storage, so a tape cannot outlive the
/// parameters it was recorded against.
#[derive(Debug)]
pub enum LayerTape<'a, T> {
    Linear {
        input: Tensor<T>,
        weight: &'a [T],
        out_features: usize,
    },
    Conv2d {
        input: Tensor<T>,
        kernels: &'a [T],
        geometry: ConvGeometry,
    },
    GroupNorm {
        normalized: Tensor<T>,
        inv_std: Vec<T>,
        gamma: &'a [T],
        groups: usize,
    },
    Relu {
        mask: Vec<bool>,
        shape: Vec<usize>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
}

impl<T> LayerTape<'_, T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerTape::Linear { .. } => LayerKind::Linear,
            LayerTape::Conv2d { .. } => LayerKind::Conv2d,
            LayerTape::GroupNorm { .. } => LayerKind::GroupNorm,
            LayerTape::Relu { .. } => LayerKind::Relu,
            LayerTape::MaxPool { .. } => LayerKind::MaxPool,
            LayerTape::Flatten { .. } => LayerKind::Flatten,
        }
    }

    /// Shape of the tensor the backward pass expects as upstream gradient.
    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            LayerTape::Linear { out_features, .. } => vec![*out_features],
            LayerTape::Conv2d { geometry: g, .. } => vec![g.c_out, g.out_h, g.out_w],
            LayerTape::GroupNorm { normalized, .. } => normalized.shape.clone(),
            LayerTape::Relu { shape, .. } => shape.clone(),
            LayerTape::MaxPool { output_shape, .. } => output_shape.clone(),
            LayerTape::Flatten { input_shape } => vec![input_shape.iter().product()],
        }
    }
}

fn param_len_error(op: &'static str, expected: usize, got: usize) -> Error {
    Error::Dimension {
        op,
        lhs: vec![expected],
        rhs: vec![got],
    }
}

/// `y = W·x + b` for a single example vector `x` of length `in_features`.
/// `weight` is `out × in`, row-major.
pub fn linear_forward<'a, T: Scalar>(
    input: Tensor<T>,
    weight: &'a [T],
    bias: &[T],
) -> Result<(Tensor<T>, LayerTape<'a, T>)> {
    let in_features = input.len();
    let out_features = bias.len();
    if input.shape().len() != 1 || weight.len() != in_features * out_features {
        return Err(Error::Dimension {
            op: "linear",
            lhs: input.shape().to_vec(),
            rhs: vec![out_features, weight.len() / out_features.max(1)],
        });
    }
    let mut out = vec![T::zero(); out_features];
    super::ops::matmul_into(weight, input.data(), out_features, in_features, 1, &mut out);
    for (o, &b) in out.iter_mut().zip(bias) {
        *o = *o + b;
    }
    let y = Tensor::new(vec![out_features], out)?;
    Ok((
        y,
        LayerTape::Linear {
            input,
            weight,
            out_features,
        },
    ))
}

/// Convolution layer with per-output-channel bias.
pub fn conv2d_layer_forward<'a, T: Scalar>(
    input: Tensor<T>,
    kernels: &'a [T],
    kernel_shape: [usize; 4],
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, LayerTape<'a, T>)> {
    let s = input.shape();
    let [c_out, c_in, kh, kw] = kernel_shape;
    if s.len() != 3 || s[0] != c_in {
        return Err(Error::Dimension {
            op: "conv2d layer",
            lhs: s.to_vec(),
            rhs: kernel_shape.to_vec(),
        });
    }
    if kernels.len() != c_out * c_in * kh * kw {
        return Err(param_len_error("conv2d kernels", c_out * c_in * kh * kw, kernels.len()));
    }
    if bias.len() != c_out {
        return Err(param_len_error("conv2d bias", c_out, bias.len()));
    }
    let geometry = ConvGeometry::new([s[0], s[1], s[2]], [c_out, kh, kw], stride, padding)?;
    let mut out = conv2d_raw(input.data(), kernels, &geometry);
    let plane = geometry.out_h * geometry.out_w;
    for (oc, &b) in bias.iter().enumerate() {
        for v in &mut out[oc * plane..(oc + 1) * plane] {
            *v = *v + b;
        }
    }
    let y = Tensor::new(vec![c_out, geometry.out_h, geometry.out_w], out)?;
    Ok((
        y,
        LayerTape::Conv2d {
            input,
            kernels,
            geometry,
        },
    ))
}

/// Group normalization over `b × c × (spatial...)`.
///
/// Mean and variance are taken over one sample's channels in one group and
/// its spatial positions; nothing is shared between samples.
pub fn group_norm_forward<'a, T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &'a [T],
    beta: &[T],
    eps: f64,
) -> Result<(Tensor<T>, LayerTape<'a, T>)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::Dimension {
            op: "group_norm (needs batch and channel axes)",
            lhs: s.to_vec(),
            rhs: vec![],
        });
    }
    let (batch, channels) = (s[0], s[1]);
    if groups == 0 || channels % groups != 0 {
        return Err(Error::config(
            "group_norm.groups",
            format!("{channels} channels are not divisible into {groups} groups"),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::config("group_norm.eps", "must be > 0"));
    }
    if gamma.len() != channels || beta.len() != channels {
        return Err(param_len_error("group_norm affine", channels, gamma.len().min(beta.len())));
    }
    let spatial: usize = s[2..].iter().product();
    let per_group = channels / groups;
    let n = per_group * spatial;
    let n_t = T::of(n as f64);
    let eps_t = T::of(eps);

    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(batch * groups);
    for b in 0..batch {
        for g in 0..groups {
            let start = (b * channels + g * per_group) * spatial;
            let block = &x.data()[start..start + n];
            let mean = block.iter().fold(T::zero(), |acc, &v| acc + v) / n_t;
            let var = block
                .iter()
                .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
                / n_t;
            let istd = T::one() / (var + eps_t).sqrt();
            inv_std.push(istd);
            for (i, &v) in block.iter().enumerate() {
                let c = g * per_group + i / spatial;
                let xh = (v - mean) * istd;
                normalized[start + i] = xh;
                out[start + i] = gamma[c] * xh + beta[c];
            }
        }
    }
    Ok((
        Tensor::new(s.to_vec(), out)?,
        LayerTape::GroupNorm {
            normalized: Tensor::new(s.to_vec(), normalized)?,
            inv_std,
            gamma,
            groups,
        },
    ))
}

pub fn relu_forward<'a, T: Scalar>(mut x: Tensor<T>) -> (Tensor<T>, LayerTape<'a, T>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    for (v, &keep) in x.data_mut().iter_mut().zip(&mask) {
        if !keep {
            *v = T::zero();
        }
    }
    let shape = x.shape().to_vec();
    (x, LayerTape::Relu { mask, shape })
}

/// Non-overlapping `size × size` max pooling over a `c × h × w` example.
/// Trailing rows/columns that do not fill a window are dropped.
pub fn max_pool_forward<'a, T: Scalar>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, LayerTape<'a, T>)> {
    let s = x.shape();
    if s.len() != 3 || size == 0 || s[1] < size || s[2] < size {
        return Err(Error::Dimension {
            op: "max_pool",
            lhs: s.to_vec(),
            rhs: vec![size, size],
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + (oy * size) * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let at = ch * h * w + (oy * size + dy) * w + ox * size + dx;
                        if x.data()[at] > x.data()[best] {
                            best = at;
                        }
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
    }
    let output_shape = vec![c, oh, ow];
    Ok((
        Tensor::new(output_shape.clone(), out)?,
        LayerTape::MaxPool {
            input_shape: s.to_vec(),
            output_shape,
            argmax,
        },
    ))
}

pub fn flatten_forward<'a, T: Scalar>(x: Tensor<T>) -> (Tensor<T>, LayerTape<'a, T>) {
    let input_shape = x.shape().to_vec();
    let n = x.len();
    let y = x.reshape(&[n]).expect("flatten preserves length");
    (y, LayerTape::Flatten { input_shape })
}

/// Reverse pass through one recorded layer. Returns the gradient with respect
/// to the layer input and the parameter gradients in declaration order
/// (weight then bias, or gamma then beta).
pub fn backward_layer<T: Scalar>(tape: LayerTape<'_, T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let (dx, grads) = backward_layer_impl(tape, upstream, true)?;
    Ok((dx.expect("input gradient requested"), grads))
}

pub(crate) fn backward_layer_impl<T: Scalar>(
    tape: LayerTape<'_, T>,
    upstream: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
    let expected = tape.output_shape();
    if upstream.shape() != expected.as_slice() {
        return Err(Error::Internal(format!(
            "{:?} backward expected upstream gradient of shape {:?}, got {:?}",
            tape.kind(),
            expected,
            upstream.shape()
        )));
    }
    let dy = upstream.data();
    match tape {
        LayerTape::Linear {
            input,
            weight,
            out_features,
        } => {
            let in_features = input.len();
            let x = input.data();
            let mut dw = vec![T::zero(); weight.len()];
            for (o, &g) in dy.iter().enumerate() {
                let row = &mut dw[o * in_features..(o + 1) * in_features];
                for (d, &xi) in row.iter_mut().zip(x) {
                    *d = g * xi;
                }
            }
            let dx = need_input_grad.then(|| {
                let mut dx = vec![T::zero(); in_features];
                for (o, &g) in dy.iter().enumerate() {
                    let row = &weight[o * in_features..(o + 1) * in_features];
                    for (d, &w) in dx.iter_mut().zip(row) {
                        *d = *d + w * g;
                    }
                }
                dx
            });
            let grads = vec![
                Tensor::new(vec![out_features, in_features], dw)?,
                Tensor::new(vec![out_features], dy.to_vec())?,
            ];
            Ok((dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?, grads))
        }
        LayerTape::Conv2d {
            input,
            kernels,
            geometry: g,
        } => {
            let (dk, dx) = conv2d_backward_raw(input.data(), kernels, dy, &g, need_input_grad);
            let plane = g.out_h * g.out_w;
            let db: Vec<T> = (0..g.c_out)
                .map(|oc| dy[oc * plane..(oc + 1) * plane].iter().fold(T::zero(), |a, &v| a + v))
                .collect();
            let grads = vec![
                Tensor::new(vec![g.c_out, g.c_in, g.kh, g.kw], dk)?,
                Tensor::new(vec![g.c_out], db)?,
            ];
            let dx = if need_input_grad {
                Some(Tensor::new(input.shape().to_vec(), dx)?)
            } else {
                None
            };
            Ok((dx, grads))
        }
        LayerTape::GroupNorm {
            normalized,
            inv_std,
            gamma,
            groups,
        } => {
            let s = normalized.shape().to_vec();
            let (batch, channels) = (s[0], s[1]);
            let spatial: usize = s[2..].iter().product();
            let per_group = channels / groups;
            let n = per_group * spatial;
            let n_t = T::of(n as f64);
            let xh = normalized.data();

            let mut dgamma = vec![T::zero(); channels];
            let mut dbeta = vec![T::zero(); channels];
            for b in 0..batch {
                for c in 0..channels {
                    let start = (b * channels + c) * spatial;
                    for i in start..start + spatial {
                        dgamma[c] = dgamma[c] + dy[i] * xh[i];
                        dbeta[c] = dbeta[c] + dy[i];
                    }
                }
            }
            let dx = need_input_grad.then(|| {
                let mut dx = vec![T::zero(); xh.len()];
                for b in 0..batch {
                    for g in 0..groups {
                        let start = (b * channels + g * per_group) * spatial;
                        let istd = inv_std[b * groups + g];
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for i in 0..n {
                            let c = g * per_group + i / spatial;
                            let d = dy[start + i] * gamma[c];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xh[start + i];
                        }
                        for i in 0..n {
                            let c = g * per_group + i / spatial;
                            let d = dy[start + i] * gamma[c];
                            dx[start + i] = istd * (n_t * d - sum_d - xh[start + i] * sum_dx) / n_t;
                        }
                    }
                }
                dx
            });
            let grads = vec![
                Tensor::new(vec![channels], dgamma)?,
                Tensor::new(vec![channels], dbeta)?,
            ];
            Ok((dx.map(|d| Tensor::new(s, d)).transpose()?, grads))
        }
        LayerTape::Relu { mask, shape } => {
            let dx = dy
                .iter()
                .zip(&mask)
                .map(|(&g, &keep)| if keep { g } else { T::zero() })
                .collect();
            Ok((Some(Tensor::new(shape, dx)?), Vec::new()))
        }
        LayerTape::MaxPool {
            input_shape, argmax, ..
        } => {
            let mut dx = vec![T::zero(); input_shape.iter().product()];
            for (&g, &at) in dy.iter().zip(&argmax) {
                dx[at] = dx[at] + g;
            }
            Ok((Some(Tensor::new(input_shape, dx)?), Vec::new()))
        }
        LayerTape::Flatten { input_shape } => Ok((Some(Tensor::new(input_shape, dy.to_vec())?), Vec::new())),
    }
}

/// Softmax cross-entropy for one example. Returns the loss and its gradient
/// with respect to the logits. Uses the log-sum-exp shift so any finite logits
/// give a finite loss.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum = logits.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    let lse = max + sum.ln();
    let loss = lse - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&v| (v - lse).exp()).collect();
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Checks the input gradient of `forward` against central differences of
    /// the scalar objective `sum(y * r)`.
    fn check_input_grad(x: Tensor<f64>, forward: impl Fn(Tensor<f64>) -> (Tensor<f64>, LayerTape<'static, f64>)) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (y, tape) = forward(x.clone());
        let r = random(y.shape(), &mut rng);
        let (dx, _) = backward_layer(tape, &r).unwrap();
        let objective = |x: Tensor<f64>| -> f64 {
            let (y, _) = forward(x);
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (objective(xp) - objective(xm)) / (2.0 * h);
            assert!(rel_err(dx.data()[i], fd) < 1e-4, "coord {i}: {} vs {fd}", dx.data()[i]);
        }
    }

    #[test]
    fn linear_zero_upstream_gives_zero_grads() {
        let w = vec![0.5, -1.0, 2.0, 0.25, 1.0, -3.0];
        let b = vec![0.1, 0.2];
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let (_, tape) = linear_forward(x, &w, &b).unwrap();
        let (dx, grads) = backward_layer(tape, &Tensor::zeros(&[2])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(grads.iter().flat_map(|g| g.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_relu_chain_matches_hand_derivative() {
        // y = relu(w * x): dy/dw = x, dy/dx = w while w*x > 0.
        let w = [3.0];
        let b = [0.0];
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        let (z, t1) = linear_forward(x, &w, &b).unwrap();
        let (y, t2) = relu_forward(z);
        assert_eq!(y.data(), &[6.0]);
        let one = Tensor::new(vec![1], vec![1.0]).unwrap();
        let (dz, _) = backward_layer(t2, &one).unwrap();
        let (dx, grads) = backward_layer(t1, &dz).unwrap();
        assert_eq!(dx.data(), &[3.0]);
        assert_eq!(grads[0].data(), &[2.0]);
        assert_eq!(grads[1].data(), &[1.0]);

        let neg = Tensor::new(vec![1], vec![-2.0]).unwrap();
        let (z, t1) = linear_forward(neg, &w, &b).unwrap();
        let (_, t2) = relu_forward(z);
        let (dz, _) = backward_layer(t2, &one).unwrap();
        let (dx, grads) = backward_layer(t1, &dz).unwrap();
        assert_eq!(dx.data(), &[0.0]);
        assert_eq!(grads[0].data(), &[0.0]);
    }

    #[test]
    fn linear_input_grad_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: &'static [f64] = Box::leak(random(&[4, 6], &mut rng).into_data().into_boxed_slice());
        let b: Vec<f64> = random(&[4], &mut rng).into_data();
        let x = random(&[6], &mut rng);
        check_input_grad(x, |x| linear_forward(x, w, &b).unwrap());
    }

    #[test]
    fn conv_input_grad_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k: &'static [f64] = Box::leak(random(&[3, 2, 3, 3], &mut rng).into_data().into_boxed_slice());
        let b: Vec<f64> = random(&[3], &mut rng).into_data();
        let x = random(&[2, 5, 5], &mut rng);
        check_input_grad(x, |x| conv2d_layer_forward(x, k, [3, 2, 3, 3], &b, 2, 1).unwrap());
    }

    #[test]
    fn group_norm_input_grad_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gamma: &'static [f64] = Box::leak(random(&[4], &mut rng).into_data().into_boxed_slice());
        let beta = random(&[4], &mut rng).into_data();
        let x = random(&[2, 4, 3, 2], &mut rng);
        check_input_grad(x, |x| group_norm_forward(&x, 2, gamma, &beta, 1e-5).unwrap());
    }

    #[test]
    fn pool_and_flatten_input_grad_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 4, 5], &mut rng);
        check_input_grad(x.clone(), |x| max_pool_forward(&x, 2).unwrap());
        check_input_grad(x, flatten_forward);
    }

    #[test]
    fn group_norm_constant_input_gives_beta() {
        let gamma = [1.5, 0.5, 2.0, 1.0];
        let beta = [0.25, -1.0, 3.0, 0.5];
        // Group 0 holds 2.0 everywhere, group 1 holds -4.0.
        let x = Tensor::from_fn(&[1, 4, 2, 2], |i| if i < 8 { 2.0 } else { -4.0 });
        let (y, _) = group_norm_forward(&x, 2, &gamma, &beta, 1e-5).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            assert_eq!(v, beta[i / 4]);
        }
    }

    #[test]
    fn group_norm_matches_direct_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[2, 4, 2, 2], &mut rng);
        let gamma = random(&[4], &mut rng).into_data();
        let beta = random(&[4], &mut rng).into_data();
        let eps = 1e-5;
        let (y, _) = group_norm_forward(&x, 2, &gamma, &beta, eps).unwrap();
        for b in 0..2 {
            for g in 0..2 {
                let idx: Vec<usize> = (0..8).map(|i| b * 16 + g * 8 + i).collect();
                let vals: Vec<f64> = idx.iter().map(|&i| x.data()[i]).collect();
                let mean = vals.iter().sum::<f64>() / 8.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
                for &i in &idx {
                    let c = (i / 4) % 4;
                    let want = gamma[c] * (x.data()[i] - mean) / (var + eps).sqrt() + beta[c];
                    assert!((y.data()[i] - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn group_norm_isolates_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(&[2, 4, 3, 3], &mut rng);
        let gamma = random(&[4], &mut rng).into_data();
        let beta = random(&[4], &mut rng).into_data();
        let (before, _) = group_norm_forward(&x, 2, &gamma, &beta, 1e-5).unwrap();
        let mut changed = x.clone();
        for v in &mut changed.data_mut()[36..] {
            *v = *v * 100.0 + 7.0;
        }
        let (after, _) = group_norm_forward(&changed, 2, &gamma, &beta, 1e-5).unwrap();
        assert_eq!(before.data()[..36], after.data()[..36]);
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let x = Tensor::<f64>::zeros(&[1, 6, 2, 2]);
        let g = [1.0; 6];
        let err = group_norm_forward(&x, 4, &g, &g, 1e-5).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let x = Tensor::<f64>::zeros(&[3]);
        let (_, tape) = relu_forward(x);
        assert!(matches!(
            backward_layer(tape, &Tensor::zeros(&[4])),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn cross_entropy_is_finite_for_extreme_logits() {
        let (loss, grad) = softmax_cross_entropy(&[1e30f32, -1e30, 0.0], 1).unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = softmax_cross_entropy(&[0.0f64; 10], 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        assert!(softmax_cross_entropy(&[0.0f64; 3], 3).is_err());
    }
}
