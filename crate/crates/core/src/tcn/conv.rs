//! Same-length 1-D convolution over time with zero padding.
//!
//! Inputs are `T x C_in` matrices (frames by channels). Weights are stored
//! tap-major as `[kernel][out][in]` so that each tap is a contiguous
//! `C_out x C_in` block.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{self, CHUNK_ROWS};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape("convolution channels must be positive".into()));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "kernel size {kernel_size} must be odd"
            )));
        }
        if dilation == 0 {
            return Err(Error::Shape("dilation must be at least 1".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
        })
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, 1, 1)
    }

    /// Zero padding on each side; keeps the output as long as the input.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }

    pub fn weight_len(&self) -> usize {
        self.kernel_size * self.out_channels * self.in_channels
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size
    }

    /// Frame offset read by tap `k`.
    #[inline]
    fn offset(&self, k: usize) -> isize {
        (k as isize - (self.kernel_size / 2) as isize) * self.dilation as isize
    }

    #[inline]
    fn tap<'a, F>(&self, w: &'a [F], k: usize) -> &'a [F] {
        let n = self.out_channels * self.in_channels;
        &w[k * n..(k + 1) * n]
    }
}

#[inline]
fn source(t: usize, off: isize, len: usize) -> Option<usize> {
    let s = t as isize + off;
    (s >= 0 && (s as usize) < len).then_some(s as usize)
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Unchecked forward kernel; callers guarantee shapes.
pub(crate) fn forward<F: Scalar>(
    spec: &ConvSpec,
    input: &Matrix<F>,
    w: &[F],
    b: &[F],
) -> Matrix<F> {
    let (len, cin, cout) = (input.rows(), spec.in_channels, spec.out_channels);
    let mut out = Matrix::zeros(len, cout);
    par::for_each_chunk_mut(out.as_mut_slice(), CHUNK_ROWS * cout, |ci, chunk| {
        for (r, orow) in chunk.chunks_exact_mut(cout).enumerate() {
            let t = ci * CHUNK_ROWS + r;
            orow.copy_from_slice(b);
            for k in 0..spec.kernel_size {
                let Some(s) = source(t, spec.offset(k), len) else {
                    continue;
                };
                let irow = input.row(s);
                let wk = spec.tap(w, k);
                for (o, acc) in orow.iter_mut().enumerate() {
                    *acc += dot(&wk[o * cin..(o + 1) * cin], irow);
                }
            }
        }
    });
    out
}

/// Unchecked backward kernel. Accumulates into `grad_w` / `grad_b` and
/// returns the gradient with respect to `input`.
///
/// Weight gradients are reduced per fixed-size time chunk and summed in
/// chunk order, which makes the result independent of thread scheduling.
pub(crate) fn backward<F: Scalar>(
    spec: &ConvSpec,
    input: &Matrix<F>,
    grad_out: &Matrix<F>,
    w: &[F],
    grad_w: &mut [F],
    grad_b: &mut [F],
) -> Matrix<F> {
    let (len, cin, cout) = (input.rows(), spec.in_channels, spec.out_channels);

    let mut grad_in = Matrix::zeros(len, cin);
    par::for_each_chunk_mut(grad_in.as_mut_slice(), CHUNK_ROWS * cin, |ci, chunk| {
        for (r, irow) in chunk.chunks_exact_mut(cin).enumerate() {
            let s = ci * CHUNK_ROWS + r;
            for k in 0..spec.kernel_size {
                // Frame t reads s through tap k when t + offset(k) == s.
                let Some(t) = source(s, -spec.offset(k), len) else {
                    continue;
                };
                let wk = spec.tap(w, k);
                for (o, &g) in grad_out.row(t).iter().enumerate() {
                    if g != F::zero() {
                        axpy(irow, g, &wk[o * cin..(o + 1) * cin]);
                    }
                }
            }
        }
    });

    let wlen = spec.weight_len();
    let chunks = len.div_ceil(CHUNK_ROWS);
    let partials = par::map_range(chunks, |ci| {
        let mut acc = vec![F::zero(); wlen + cout];
        let (gw, gb) = acc.split_at_mut(wlen);
        for t in ci * CHUNK_ROWS..((ci + 1) * CHUNK_ROWS).min(len) {
            let grow = grad_out.row(t);
            for (o, &g) in grow.iter().enumerate() {
                gb[o] += g;
            }
            for k in 0..spec.kernel_size {
                let Some(s) = source(t, spec.offset(k), len) else {
                    continue;
                };
                let irow = input.row(s);
                let base = k * cout * cin;
                for (o, &g) in grow.iter().enumerate() {
                    if g != F::zero() {
                        axpy(&mut gw[base + o * cin..base + (o + 1) * cin], g, irow);
                    }
                }
            }
        }
        acc
    });
    for p in partials {
        for (d, s) in grad_w.iter_mut().zip(&p[..wlen]) {
            *d += *s;
        }
        for (d, s) in grad_b.iter_mut().zip(&p[wlen..]) {
            *d += *s;
        }
    }
    grad_in
}

/// Checked convolution: `out[t, o] = bias[o] + sum_{k, i} w[k][o][i] * in[t + (k - K/2) * dilation, i]`,
/// reading frames outside the sequence as zero.
pub fn conv1d_forward<F: Scalar>(
    input: &Matrix<F>,
    spec: &ConvSpec,
    weights: &[F],
    bias: &[F],
) -> Result<Matrix<F>> {
    if input.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    if input.cols() != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, convolution expects {}",
            input.cols(),
            spec.in_channels
        )));
    }
    if weights.len() != spec.weight_len() {
        return Err(Error::Shape(format!(
            "weights have {} values, expected {}",
            weights.len(),
            spec.weight_len()
        )));
    }
    if bias.len() != spec.out_channels {
        return Err(Error::Shape(format!(
            "bias has {} values, expected {}",
            bias.len(),
            spec.out_channels
        )));
    }
    Ok(forward(spec, input, weights, bias))
}
