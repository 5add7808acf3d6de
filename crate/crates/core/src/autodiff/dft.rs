//! Full-length discrete Fourier transform, both as plain functions and as a
//! differentiable op on the tape.
//!
//! Convention: `X[k] = Σ_n x[n]·e^{-2πi·kn/T}`, inverse carries the `1/T`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), im.len(), "real and imaginary parts differ in length");
        Self { re, im }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| libm::hypot(*r, *i)).collect()
    }
}

/// `cos` and `sin` of `2π·(n·k mod T)/T`; reducing the index first keeps
/// symmetric entries bit-identical.
fn twiddle(n: usize, k: usize, len: usize) -> (f64, f64) {
    let angle = 2.0 * PI * ((n * k) % len) as f64 / len as f64;
    (libm::cos(angle), libm::sin(angle))
}

pub fn dft(signal: &[f64]) -> ComplexVector {
    let len = signal.len();
    let mut re = alloc::vec![0.0; len];
    let mut im = alloc::vec![0.0; len];
    for k in 0..len {
        for (n, &x) in signal.iter().enumerate() {
            let (c, s) = twiddle(n, k, len);
            re[k] += x * c;
            im[k] -= x * s;
        }
    }
    ComplexVector { re, im }
}

/// Inverse transform of a full spectrum; returns the complex result.
pub fn idft_complex(spectrum: &ComplexVector) -> ComplexVector {
    let len = spectrum.len();
    let scale = 1.0 / len as f64;
    let mut re = alloc::vec![0.0; len];
    let mut im = alloc::vec![0.0; len];
    for n in 0..len {
        for k in 0..len {
            let (c, s) = twiddle(n, k, len);
            let (a, b) = (spectrum.re[k], spectrum.im[k]);
            re[n] += a * c - b * s;
            im[n] += a * s + b * c;
        }
        re[n] *= scale;
        im[n] *= scale;
    }
    ComplexVector { re, im }
}

/// Inverse transform keeping the real part (exact for spectra of real signals).
pub fn idft(spectrum: &ComplexVector) -> Vec<f64> {
    idft_complex(spectrum).re
}

/// Transform matrices `C[n][k] = cos`, `S[n][k] = -sin`, so that for row
/// signals `re = x·C` and `im = x·S`.
pub fn dft_matrices(len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut c = alloc::vec![0.0; len * len];
    let mut s = alloc::vec![0.0; len * len];
    for n in 0..len {
        for k in 0..len {
            let (cv, sv) = twiddle(n, k, len);
            c[n * len + k] = cv;
            s[n * len + k] = -sv;
        }
    }
    (c, s)
}

impl<'t> Var<'t> {
    /// Row-wise DFT of a `[rows, T]` tensor, returning `(re, im)`.
    pub fn dft_rows(self) -> (Var<'t>, Var<'t>) {
        let shape = self.shape();
        assert_eq!(shape.len(), 2, "dft_rows expects [rows, T]");
        let len = shape[1];
        let (c, s) = dft_matrices(len);
        let tape: &'t Tape = self.tape();
        let c = tape.constant(alloc::vec![len, len], c);
        let s = tape.constant(alloc::vec![len, len], s);
        (self.matmul(c), self.matmul(s))
    }

    /// Row-wise inverse DFT; real part of the result.
    pub fn idft_rows(re: Var<'t>, im: Var<'t>) -> Var<'t> {
        let len = re.shape()[1];
        let (c, s) = dft_matrices(len);
        let tape = re.tape();
        let c = tape.constant(alloc::vec![len, len], c);
        let s = tape.constant(alloc::vec![len, len], s);
        // x[n] = (1/T) Σ_k re[k]·cos − im[k]·sin, and S already holds −sin.
        (re.matmul(c) + im.matmul(s)).scale(1.0 / len as f64)
    }
}
