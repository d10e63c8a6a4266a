//! FFT plumbing for periodic blocks.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Spectral {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    len: usize,
}

impl Spectral {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Spectral {
            fwd,
            inv,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward DFT, in place.
    pub fn forward(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.fwd.process_with_scratch(buf, &mut self.scratch);
    }

    /// Inverse DFT including the 1/N factor, in place.
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inv.process_with_scratch(buf, &mut self.scratch);
        let s = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// DFT bin frequencies in Hz, in FFT order (non-negative bins first).
pub fn bin_freqs(len: usize, dt: f64) -> Vec<f64> {
    let df = 1.0 / (len as f64 * dt);
    (0..len)
        .map(|k| {
            let kk = if k <= (len - 1) / 2 { k as f64 } else { k as f64 - len as f64 };
            kk * df
        })
        .collect()
}

pub fn bin_omegas(len: usize, dt: f64) -> Vec<f64> {
    bin_freqs(len, dt).into_iter().map(|f| 2.0 * PI * f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_freqs() {
        let mut sp = Spectral::new(8);
        let orig: Vec<Complex64> = (0..8).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut buf = orig.clone();
        sp.forward(&mut buf);
        sp.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
        let f = bin_freqs(8, 0.5);
        assert_eq!(f, vec![0.0, 0.25, 0.5, 0.75, -1.0, -0.75, -0.5, -0.25]);
    }
}
