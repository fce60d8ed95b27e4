//! Convolution and max-pooling kernels (NHWC).

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(len / stride)`; zero padding split floor before, ceil after.
    #[default]
    Same,
    /// No padding; output extent `floor((len - k) / stride) + 1`.
    Valid,
}

/// Output extent and leading pad along one spatial axis.
pub fn output_extent(len: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 || k == 0 {
        return Err(Error::Argument(format!(
            "kernel {k} and stride {stride} must be >= 1"
        )));
    }
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let pad_total = ((out - 1) * stride + k).saturating_sub(len);
            Ok((out, pad_total / 2))
        }
        Padding::Valid => {
            if k > len {
                return Err(shape_err!("window {k} larger than spatial extent {len}"));
            }
            Ok(((len - k) / stride + 1, 0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window2d {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Window2d {
    pub fn new(
        input: (usize, usize, usize, usize),
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (n, h, w, c) = input;
        let (oh, pad_top) = output_extent(h, kh, stride, padding)?;
        let (ow, pad_left) = output_extent(w, kw, stride, padding)?;
        Ok(Self {
            n,
            h,
            w,
            c,
            kh,
            kw,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Input coordinate for output `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < len).then_some(pos)
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Unfolds every receptive field into a row of `kh*kw*c` values.
fn im2col<T: Scalar>(x: &[T], g: &Window2d) -> Vec<T> {
    let patch = g.patch_len();
    let mut col = vec![T::zero(); g.rows() * patch];
    let mut row = 0;
    for b in 0..g.n {
        let img = &x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut col[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let Some(iy) = Window2d::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = Window2d::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let s = (iy * g.w + ix) * g.c;
                        let d = (ky * g.kw + kx) * g.c;
                        dst[d..d + g.c].copy_from_slice(&img[s..s + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], g: &Window2d) -> Vec<T> {
    let patch = g.patch_len();
    let mut x = vec![T::zero(); g.n * g.h * g.w * g.c];
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &col[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let Some(iy) = Window2d::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = Window2d::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let d = (iy * g.w + ix) * g.c;
                        let s = (ky * g.kw + kx) * g.c;
                        for (acc, &v) in img[d..d + g.c].iter_mut().zip(&src[s..s + g.c]) {
                            *acc = *acc + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

pub(crate) fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Window2d> {
    let dims = input.dims4()?;
    let (kh, kw, kc, f) = kernel.dims4().map_err(|_| {
        shape_err!("conv kernel must be [kh,kw,C,F], got {:?}", kernel.shape())
    })?;
    if kc != dims.3 {
        return Err(shape_err!(
            "conv kernel expects {kc} input channels, input {:?} has {}",
            input.shape(),
            dims.3
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(shape_err!("conv bias {:?} does not match {f} filters", b.shape()));
        }
    }
    Window2d::new(dims, kh, kw, stride, padding)
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &Window2d,
) -> Result<Tensor<T>> {
    let f = kernel.shape()[3];
    let rows = g.rows();
    let k = g.patch_len();
    let mut out = vec![T::zero(); rows * f];
    if g.is_pointwise() {
        T::gemm(rows, k, f, x.data(), false, kernel.data(), false, &mut out, false);
    } else {
        let col = im2col(x.data(), g);
        T::gemm(rows, k, f, &col, false, kernel.data(), false, &mut out, false);
    }
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(f) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
    }
    Tensor::new(&[g.n, g.oh, g.ow, f], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    g: &Window2d,
    want: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let f = kernel.shape()[3];
    let rows = g.rows();
    let k = g.patch_len();
    let (want_x, want_k, want_b) = want;

    let input = if want_x {
        let mut dcol = vec![T::zero(); rows * k];
        T::gemm(rows, f, k, dy.data(), false, kernel.data(), true, &mut dcol, false);
        let dx = if g.is_pointwise() { dcol } else { col2im(&dcol, g) };
        Some(Tensor::new(x.shape(), dx)?)
    } else {
        None
    };

    let kernel_grad = if want_k {
        let mut dk = vec![T::zero(); k * f];
        if g.is_pointwise() {
            T::gemm(k, rows, f, x.data(), true, dy.data(), false, &mut dk, false);
        } else {
            let col = im2col(x.data(), g);
            T::gemm(k, rows, f, &col, true, dy.data(), false, &mut dk, false);
        }
        Some(Tensor::new(kernel.shape(), dk)?)
    } else {
        None
    };

    let bias = if want_b {
        let mut db = vec![T::zero(); f];
        for row in dy.data().chunks_exact(f) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        Some(Tensor::new(&[f], db)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input,
        kernel: kernel_grad,
        bias,
    })
}

/// Max-pool forward; returns the output and, per output element, the flat
/// input index that won (first occurrence in scan order on ties).
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let g = Window2d::new(x.dims4()?, window, window, stride, padding)?;
    let data = x.data();
    let mut out = Vec::with_capacity(g.rows() * g.c);
    let mut argmax = Vec::with_capacity(g.rows() * g.c);
    for b in 0..g.n {
        let base = b * g.h * g.w * g.c;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                for ch in 0..g.c {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..g.kh {
                        let Some(iy) = Window2d::src(oy, ky, g.stride, g.pad_top, g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let Some(ix) = Window2d::src(ox, kx, g.stride, g.pad_left, g.w) else {
                                continue;
                            };
                            let idx = base + (iy * g.w + ix) * g.c + ch;
                            let v = data[idx];
                            if best.is_none_or(|(bv, _)| v > bv) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    let (v, idx) = best.expect("every pooling window overlaps the input");
                    out.push(v);
                    argmax.push(idx);
                }
            }
        }
    }
    Ok((Tensor::new(&[g.n, g.oh, g.ow, g.c], out)?, argmax))
}

pub(crate) fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx[idx] = dx[idx] + g;
    }
    Tensor::new(input_shape, dx)
}
