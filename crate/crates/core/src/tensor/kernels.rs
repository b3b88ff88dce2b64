//! Convolution kernels lowered onto GEMM via im2col / col2im.
//!
//! Layouts: activations `[B, C, T]`, conv weights `[Cout, Cin, K]`, transposed
//! conv weights `[Cin, Cout, K]`, all row-major.

use super::Scalar;
use crate::error::{Error, Result};

pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::invalid("stride and kernel must be >= 1"));
    }
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(format!(
            "conv1d: padded length {padded} shorter than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn tconv1d_out_len(
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::invalid("stride and kernel must be >= 1"));
    }
    if out_pad >= stride {
        return Err(Error::invalid(format!(
            "tconv1d: out_pad {out_pad} must be < stride {stride}"
        )));
    }
    let full = (len - 1) * stride + kernel + out_pad;
    if full <= 2 * pad {
        return Err(Error::shape("tconv1d: output length would be < 1"));
    }
    Ok(full - 2 * pad)
}

#[derive(Clone, Copy)]
pub(crate) enum Trans {
    No,
    Yes,
}

/// `c[m,n] (+)= op(a)[m,k] * op(b)[k,n]` with row-major storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: Trans,
    b: &[T],
    tb: Trans,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths were asserted above and the strides stay within them.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one strided 1D correlation between a long and a short axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Length of the sampled (input-side) signal.
    pub long: usize,
    /// Number of window positions.
    pub short: usize,
}

impl Window {
    /// Source index for window position `t` and tap `k`, if inside the signal.
    #[inline]
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        let pos = t * self.stride + k;
        pos.checked_sub(self.pad).filter(|&p| p < self.long)
    }
}

/// `col[c*K + k, t] = x[c, t*stride + k - pad]`, zero outside.
pub(crate) fn im2col<T: Scalar>(x: &[T], channels: usize, win: Window, col: &mut [T]) {
    debug_assert_eq!(x.len(), channels * win.long);
    debug_assert_eq!(col.len(), channels * win.kernel * win.short);
    for c in 0..channels {
        let xrow = &x[c * win.long..(c + 1) * win.long];
        for k in 0..win.kernel {
            let row = &mut col[(c * win.kernel + k) * win.short..][..win.short];
            if win.stride == 1 {
                // valid positions form one contiguous run
                let lo = win.pad.saturating_sub(k).min(win.short);
                let hi = (win.long + win.pad).saturating_sub(k).min(win.short).max(lo);
                row[..lo].fill(T::zero());
                row[hi..].fill(T::zero());
                if lo < hi {
                    let src = lo + k - win.pad;
                    row[lo..hi].copy_from_slice(&xrow[src..src + (hi - lo)]);
                }
            } else {
                for (t, out) in row.iter_mut().enumerate() {
                    *out = win.source(t, k).map_or(T::zero(), |p| xrow[p]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the signal.
pub(crate) fn col2im<T: Scalar>(col: &[T], channels: usize, win: Window, x: &mut [T]) {
    debug_assert_eq!(x.len(), channels * win.long);
    debug_assert_eq!(col.len(), channels * win.kernel * win.short);
    for c in 0..channels {
        let xrow = &mut x[c * win.long..(c + 1) * win.long];
        for k in 0..win.kernel {
            let row = &col[(c * win.kernel + k) * win.short..][..win.short];
            for (t, &v) in row.iter().enumerate() {
                if let Some(p) = win.source(t, k) {
                    xrow[p] += v;
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub win: Window,
}

/// Direct convolution: `y[b] = W[Cout, Cin*K] * im2col(x[b]) + bias`.
pub(crate) fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let ConvDims { batch, cin, cout, win } = *d;
    let ck = cin * win.kernel;
    let mut col = vec![T::zero(); ck * win.short];
    let mut y = vec![T::zero(); batch * cout * win.short];
    for b in 0..batch {
        im2col(&x[b * cin * win.long..][..cin * win.long], cin, win, &mut col);
        let yb = &mut y[b * cout * win.short..][..cout * win.short];
        for (o, row) in yb.chunks_exact_mut(win.short).enumerate() {
            row.fill(bias[o]);
        }
        gemm(cout, ck, win.short, w, Trans::No, &col, Trans::No, yb, true);
    }
    y
}

/// Gradients of [`conv1d_forward`]; each requested buffer is accumulated into.
pub(crate) fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    d: &ConvDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let ConvDims { batch, cin, cout, win } = *d;
    let ck = cin * win.kernel;
    let mut col = vec![T::zero(); ck * win.short];
    if let Some(db) = db {
        for b in 0..batch {
            for (o, row) in dy[b * cout * win.short..][..cout * win.short]
                .chunks_exact(win.short)
                .enumerate()
            {
                db[o] += row.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..batch {
            im2col(&x[b * cin * win.long..][..cin * win.long], cin, win, &mut col);
            let dyb = &dy[b * cout * win.short..][..cout * win.short];
            // dW[Cout, CK] += dY[Cout, T'] * col^T[T', CK]
            gemm(cout, win.short, ck, dyb, Trans::No, &col, Trans::Yes, dw, true);
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            let dyb = &dy[b * cout * win.short..][..cout * win.short];
            // dcol[CK, T'] = W^T[CK, Cout] * dY[Cout, T']
            gemm(ck, cout, win.short, w, Trans::Yes, dyb, Trans::No, &mut col, false);
            col2im(&col, cin, win, &mut dx[b * cin * win.long..][..cin * win.long]);
        }
    }
}

/// Transposed convolution. Here `win.short` is the input length and
/// `win.long` the output length; weights are `[Cin, Cout*K]`.
pub(crate) fn tconv1d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let ConvDims { batch, cin, cout, win } = *d;
    let ok = cout * win.kernel;
    let mut col = vec![T::zero(); ok * win.short];
    let mut y = vec![T::zero(); batch * cout * win.long];
    for b in 0..batch {
        let xb = &x[b * cin * win.short..][..cin * win.short];
        // col[Cout*K, T] = W^T[Cout*K, Cin] * x[Cin, T]
        gemm(ok, cin, win.short, w, Trans::Yes, xb, Trans::No, &mut col, false);
        let yb = &mut y[b * cout * win.long..][..cout * win.long];
        for (o, row) in yb.chunks_exact_mut(win.long).enumerate() {
            row.fill(bias[o]);
        }
        col2im(&col, cout, win, yb);
    }
    y
}

pub(crate) fn tconv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    d: &ConvDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let ConvDims { batch, cin, cout, win } = *d;
    let ok = cout * win.kernel;
    if let Some(db) = db {
        for b in 0..batch {
            for (o, row) in dy[b * cout * win.long..][..cout * win.long]
                .chunks_exact(win.long)
                .enumerate()
            {
                db[o] += row.iter().copied().sum::<T>();
            }
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let mut col = vec![T::zero(); ok * win.short];
    let mut dx = dx;
    let mut dw = dw;
    for b in 0..batch {
        im2col(&dy[b * cout * win.long..][..cout * win.long], cout, win, &mut col);
        if let Some(dx) = dx.as_deref_mut() {
            // dx[Cin, T] += W[Cin, Cout*K] * dcol[Cout*K, T]
            let dxb = &mut dx[b * cin * win.short..][..cin * win.short];
            gemm(cin, ok, win.short, w, Trans::No, &col, Trans::No, dxb, true);
        }
        if let Some(dw) = dw.as_deref_mut() {
            // dW[Cin, Cout*K] += x[Cin, T] * dcol^T[T, Cout*K]
            let xb = &x[b * cin * win.short..][..cin * win.short];
            gemm(cin, win.short, ok, xb, Trans::No, &col, Trans::Yes, dw, true);
        }
    }
}
