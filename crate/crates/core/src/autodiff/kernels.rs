//! Raw numeric kernels behind the recorded ops. Every reduction runs in a
//! fixed index order so results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

/// `[m, k] x [k, n] -> [m, n]`. Single-threaded GEMM, so the summation
/// order depends only on the shapes.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: the slices hold m*k, k*n and m*n elements laid out row-major,
    // matching the strides passed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Left padding of a "same" convolution with the given kernel width.
pub(crate) fn pad_left(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Sliding-window gather: `[b*len, c] -> [b*len, kernel*c]` with zero padding.
pub(crate) fn unfold(src: &[f64], channels: usize, kernel: usize, len: usize) -> Vec<f64> {
    let rows = src.len() / channels;
    let width = kernel * channels;
    let pad = pad_left(kernel) as isize;
    let mut out = vec![0.0; rows * width];
    for r in 0..rows {
        let base = r - r % len;
        let t = (r % len) as isize;
        for j in 0..kernel {
            let s = t + j as isize - pad;
            if s < 0 || s >= len as isize {
                continue;
            }
            let from = (base + s as usize) * channels;
            let to = r * width + j * channels;
            out[to..to + channels].copy_from_slice(&src[from..from + channels]);
        }
    }
    out
}

/// Adjoint of [`unfold`]: `[b*len, kernel*c] -> [b*len, c]` by scatter-add.
pub(crate) fn fold(src: &[f64], channels: usize, kernel: usize, len: usize) -> Vec<f64> {
    let width = kernel * channels;
    let rows = src.len() / width;
    let pad = pad_left(kernel) as isize;
    let mut out = vec![0.0; rows * channels];
    for r in 0..rows {
        let base = r - r % len;
        let t = (r % len) as isize;
        for j in 0..kernel {
            let s = t + j as isize - pad;
            if s < 0 || s >= len as isize {
                continue;
            }
            let to = (base + s as usize) * channels;
            let from = r * width + j * channels;
            for c in 0..channels {
                out[to + c] += src[from + c];
            }
        }
    }
    out
}

/// `[n*group, c] -> [n, c]`, summing each run of `group` consecutive rows.
pub(crate) fn group_sum_rows(src: &[f64], cols: usize, group: usize) -> Vec<f64> {
    let rows = src.len() / cols;
    let n = rows / group;
    let mut out = vec![0.0; n * cols];
    for r in 0..rows {
        let dst = &mut out[(r / group) * cols..(r / group + 1) * cols];
        for (d, s) in dst.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
            *d += s;
        }
    }
    out
}

/// `[n, c] -> [n*times, c]`, each row repeated `times` times consecutively.
pub(crate) fn repeat_rows(src: &[f64], cols: usize, times: usize) -> Vec<f64> {
    let rows = src.len() / cols;
    let mut out = Vec::with_capacity(rows * times * cols);
    for r in 0..rows {
        for _ in 0..times {
            out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
    }
    out
}

pub(crate) fn sum_cols(src: &[f64], cols: usize) -> Vec<f64> {
    src.chunks(cols).map(|row| row.iter().sum()).collect()
}

pub(crate) fn repeat_cols(src: &[f64], times: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(src.len() * times);
    for &v in src {
        out.extend(core::iter::repeat_n(v, times));
    }
    out
}

pub(crate) fn logsumexp_cols(src: &[f64], cols: usize) -> Vec<f64> {
    src.chunks(cols)
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
            max + libm::log(s)
        })
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}
