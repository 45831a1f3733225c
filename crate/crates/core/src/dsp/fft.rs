use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Direct O(n²) DFT of `frame` zero-padded to `nfft` points.
pub fn dft_oracle(frame: &[f64], nfft: usize) -> Vec<Complex64> {
    assert!(nfft >= frame.len(), "nfft shorter than frame");
    (0..nfft)
        .map(|k| {
            frame
                .iter()
                .enumerate()
                .map(|(n, &x)| {
                    let angle = -2.0 * PI * ((k * n) % nfft) as f64 / nfft as f64;
                    Complex64::new(x * angle.cos(), x * angle.sin())
                })
                .sum()
        })
        .collect()
}

/// Planned forward FFT of a fixed length, reused across frames.
#[derive(Clone)]
pub struct RealFft {
    nfft: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFft").field("nfft", &self.nfft).finish()
    }
}

impl RealFft {
    pub fn new(nfft: usize) -> Self {
        let plan = FftPlanner::new().plan_fft_forward(nfft);
        Self { nfft, plan }
    }

    pub fn len(&self) -> usize {
        self.nfft
    }

    pub fn is_empty(&self) -> bool {
        self.nfft == 0
    }

    /// Full complex spectrum of `frame` zero-padded to the planned length.
    pub fn transform(&self, frame: &[f64]) -> Vec<Complex64> {
        assert!(frame.len() <= self.nfft, "frame longer than nfft");
        let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        buf.resize(self.nfft, Complex64::new(0.0, 0.0));
        self.plan.process(&mut buf);
        buf
    }
}
