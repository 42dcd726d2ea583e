//! Radix-2 complex FFT for power-of-two lengths, in one and two dimensions.
//!
//! Transforms are unnormalized. [`Sign::Positive`] computes
//! `X_m = Σ_j x_j e^{+2πi jm/n}`, [`Sign::Negative`] the conjugate kernel.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    /// `e^{+2πi k/n}` for `k < n/2`.
    twiddles: Vec<Complex64>,
    bitrev: Vec<u32>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::GridSize { n });
        }
        let bits = n.trailing_zeros();
        let twiddles = (0..n / 2)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                Complex64::new(t.cos(), t.sin())
            })
            .collect();
        let bitrev = (0..n as u32).map(|i| i.reverse_bits() >> (32 - bits)).collect();
        Ok(Fft { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn process(&self, data: &mut [Complex64], sign: Sign) {
        assert_eq!(data.len(), self.n, "fft length mismatch");
        for (i, &r) in self.bitrev.iter().enumerate() {
            let r = r as usize;
            if i < r {
                data.swap(i, r);
            }
        }
        let mut half = 1;
        while half < self.n {
            let stride = self.n / (2 * half);
            for start in (0..self.n).step_by(2 * half) {
                for j in 0..half {
                    let mut w = self.twiddles[j * stride];
                    if sign == Sign::Negative {
                        w = w.conj();
                    }
                    let a = data[start + j];
                    let b = data[start + j + half] * w;
                    data[start + j] = a + b;
                    data[start + j + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}

/// Row-column 2-D transform of an `n × n` row-major array.
#[derive(Debug, Clone)]
pub struct Fft2 {
    fft: Fft,
}

impl Fft2 {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Fft2 { fft: Fft::new(n)? })
    }

    pub fn size(&self) -> usize {
        self.fft.n
    }

    pub fn process(&self, data: &mut [Complex64], sign: Sign) {
        let n = self.fft.n;
        assert_eq!(data.len(), n * n, "fft2 length mismatch");
        for row in data.chunks_exact_mut(n) {
            self.fft.process(row, sign);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for (r, v) in column.iter_mut().enumerate() {
                *v = data[r * n + c];
            }
            self.fft.process(&mut column, sign);
            for (r, v) in column.iter().enumerate() {
                data[r * n + c] = *v;
            }
        }
    }
}
