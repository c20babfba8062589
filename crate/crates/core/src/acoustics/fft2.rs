//! Square 2-D FFT that leaves the spectrum transposed: a field stored
//! `[y][x]` transforms to a spectrum stored `[kx][ky]`. Skipping the second
//! transpose halves the memory traffic; the wavenumber operators are laid out
//! to match.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Fft2 {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::default(); len],
        }
    }

    /// `[y][x]` field to `[kx][ky]` spectrum, unnormalized.
    pub fn forward(&mut self, buf: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
        transpose(buf, self.n);
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// `[kx][ky]` spectrum back to a `[y][x]` field, normalized by `1/n^2`.
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        transpose(buf, self.n);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        let norm = 1.0 / (self.n * self.n) as f64;
        buf.iter_mut().for_each(|v| *v *= norm);
    }
}

/// FFT bin index to signed wavenumber index (`n/2` maps to `-n/2`).
pub fn signed_index(i: usize, n: usize) -> f64 {
    if i >= n.div_ceil(2) {
        i as f64 - n as f64
    } else {
        i as f64
    }
}
