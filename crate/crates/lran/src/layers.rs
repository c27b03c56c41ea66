//! 5×5 convolution primitives on `[channels, height·width]` activations.
//!
//! A transposed convolution is the adjoint of an ordinary convolution, so
//! both are described by one [`ConvGeom`]: the geometry of the forward
//! (downsampling or same-size) convolution.

use ndarray::{Array2, ArrayView2, Axis};

pub const KERNEL: usize = 5;
pub const PAD: usize = 2;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, h_in: usize, w_in: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            h_in,
            w_in,
            stride,
        }
    }

    pub fn h_out(&self) -> usize {
        (self.h_in + 2 * PAD - KERNEL) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w_in + 2 * PAD - KERNEL) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.h_in * self.w_in
    }

    #[cfg(test)]
    pub fn out_len(&self) -> usize {
        self.h_out() * self.w_out()
    }

    /// Source pixel of output `(oy, ox)` under tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(PAD)?;
        let ix = (ox * self.stride + kx).checked_sub(PAD)?;
        (iy < self.h_in && ix < self.w_in).then(|| iy * self.w_in + ix)
    }

    /// `[cin, h_in·w_in]` to `[cin·25, h_out·w_out]`, zero padded.
    pub fn im2col(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (ho, wo) = (self.h_out(), self.w_out());
        let mut cols = Array2::zeros((self.cin * TAPS, ho * wo));
        for c in 0..self.cin {
            let src = x.row(c);
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let mut dst = cols.row_mut(c * TAPS + ky * KERNEL + kx);
                    for oy in 0..ho {
                        for ox in 0..wo {
                            if let Some(i) = self.source(oy, ox, ky, kx) {
                                dst[oy * wo + ox] = src[i];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back onto the
    /// input grid, summing overlaps.
    pub fn col2im(&self, cols: ArrayView2<f64>) -> Array2<f64> {
        let (ho, wo) = (self.h_out(), self.w_out());
        let mut x = Array2::zeros((self.cin, self.in_len()));
        for c in 0..self.cin {
            let mut dst = x.row_mut(c);
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let src = cols.row(c * TAPS + ky * KERNEL + kx);
                    for oy in 0..ho {
                        for ox in 0..wo {
                            if let Some(i) = self.source(oy, ox, ky, kx) {
                                dst[i] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Adds `bias[c]` to every entry of row `c`.
pub fn add_bias(y: &mut Array2<f64>, bias: &[f64]) {
    for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(bias) {
        row.mapv_inplace(|v| v + b);
    }
}

/// Row sums, the bias gradient of a channel-major activation.
pub fn accumulate_bias_grad(grad: &mut [f64], dy: ArrayView2<f64>) {
    for (g, row) in grad.iter_mut().zip(dy.axis_iter(Axis(0))) {
        *g += row.sum();
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
