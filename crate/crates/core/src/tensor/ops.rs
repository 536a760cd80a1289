use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Standard matrix product. The inner sum runs left to right over `k`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    matmul_into(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = T::zero();
            for (p, &av) in row.iter().enumerate() {
                acc = acc + av * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

/// Output extent of a strided, zero-padded window; `None` when the window
/// does not tile the padded input exactly.
pub fn conv2d_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// 2-D cross-correlation (no kernel flip) of one `c_in × h × w` example with
/// `c_out × c_in × kh × kw` kernels under zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (si, sk) = (input.shape(), kernels.shape());
    if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] {
        return Err(Error::Dimension {
            op: "conv2d",
            lhs: si.to_vec(),
            rhs: sk.to_vec(),
        });
    }
    let geom = ConvGeometry::new([si[0], si[1], si[2]], [sk[0], sk[2], sk[3]], stride, padding)?;
    let out = conv2d_raw(input.data(), kernels.data(), &geom);
    Tensor::new(vec![geom.c_out, geom.out_h, geom.out_w], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
/// Validated shapes of one convolution.
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 3], kernel: [usize; 3], stride: usize, padding: usize) -> Result<Self> {
        let [c_in, h, w] = input;
        let [c_out, kh, kw] = kernel;
        let out_h = conv2d_output_extent(h, kh, stride, padding);
        let out_w = conv2d_output_extent(w, kw, stride, padding);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) => Ok(Self {
                c_in,
                h,
                w,
                c_out,
                kh,
                kw,
                stride,
                padding,
                out_h,
                out_w,
            }),
            _ => Err(Error::config(
                "conv2d",
                format!(
                    "input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding} \
                     gives a non-integer output extent"
                ),
            )),
        }
    }

    /// Input coordinate hit by output position `o` and kernel tap `k`, if it
    /// lies inside the unpadded input.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.padding)?;
        (pos < extent).then_some(pos)
    }
}

// Accumulation order per output element is (c_in, ky, kx), outermost first.
pub(crate) fn conv2d_raw<T: Scalar>(input: &[T], kernels: &[T], g: &ConvGeometry) -> Vec<T> {
    let plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.c_out * plane];
    for oc in 0..g.c_out {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        for ic in 0..g.c_in {
            let src = &input[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let kv = kernels[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ky, g.h) else { continue };
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kx, g.w) {
                                let d = &mut dst[oy * g.out_w + ox];
                                *d = *d + kv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv2d_raw` w.r.t. its kernels and (optionally) its input.
pub(crate) fn conv2d_backward_raw<T: Scalar>(
    input: &[T],
    kernels: &[T],
    upstream: &[T],
    g: &ConvGeometry,
    need_input_grad: bool,
) -> (Vec<T>, Vec<T>) {
    let plane = g.out_h * g.out_w;
    let mut dk = vec![T::zero(); kernels.len()];
    let mut dx = if need_input_grad {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    for oc in 0..g.c_out {
        let up = &upstream[oc * plane..(oc + 1) * plane];
        for ic in 0..g.c_in {
            let base = ic * g.h * g.w;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let kidx = ((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx;
                    let kv = kernels[kidx];
                    let mut acc = T::zero();
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ky, g.h) else { continue };
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kx, g.w) {
                                let u = up[oy * g.out_w + ox];
                                let at = base + iy * g.w + ix;
                                acc = acc + u * input[at];
                                if need_input_grad {
                                    dx[at] = dx[at] + u * kv;
                                }
                            }
                        }
                    }
                    dk[kidx] = acc;
                }
            }
        }
    }
    (dk, dx)
}
