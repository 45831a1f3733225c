use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fft::RealFft;
use super::DspError;

/// Floor added to power before log compression.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub fs_hz: f64,
    pub window_len: usize,
    pub overlap_frac: f64,
    pub nfft: usize,
    pub kept_bins: usize,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            fs_hz: 200.0,
            window_len: 60,
            overlap_frac: 0.91,
            nfft: 1024,
            kept_bins: 60,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let ok = (0.0..1.0).contains(&self.overlap_frac)
            && self.window_len >= 1
            && self.window_len <= self.nfft
            && self.kept_bins >= 1
            && self.kept_bins <= self.nfft / 2 + 1
            && self.fs_hz > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DspError::InvalidSpec(format!("{self:?}")))
        }
    }

    /// Frame advance: nearest integer to `window_len * (1 - overlap)`, at least 1.
    pub fn hop(&self) -> usize {
        ((self.window_len as f64 * (1.0 - self.overlap_frac)).round() as usize).max(1)
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len {
            0
        } else {
            (n_samples - self.window_len) / self.hop() + 1
        }
    }

    pub fn bin_hz(&self) -> f64 {
        self.fs_hz / self.nfft as f64
    }
}

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Normalized time-frequency image: `n_bins` rows by `n_frames` columns,
/// row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    n_bins: usize,
    n_frames: usize,
    pub bin_hz: f64,
    pub frame_hop: usize,
}

impl Spectrogram {
    pub fn from_values(
        values: Vec<f64>,
        n_bins: usize,
        n_frames: usize,
        bin_hz: f64,
        frame_hop: usize,
    ) -> Result<Self, DspError> {
        if values.len() != n_bins * n_frames {
            return Err(DspError::InvalidSpec(format!(
                "{} values for {n_bins}x{n_frames}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_bins,
            n_frames,
            bin_hz,
            frame_hop,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }

    /// One frame's frequency vector.
    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.n_bins).map(|b| self.get(b, frame)).collect()
    }

    /// Frame-major copy: `n_frames` rows of `n_bins`.
    pub fn frames_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for f in 0..self.n_frames {
            out.extend((0..self.n_bins).map(|b| self.get(b, f)));
        }
        out
    }
}

/// Reusable Welch-style spectrogram computer (window and FFT plan cached).
#[derive(Clone, Debug)]
pub struct WelchSpectrogram {
    cfg: SpectrogramConfig,
    window: Vec<f64>,
    window_energy: f64,
    fft: RealFft,
}

impl WelchSpectrogram {
    pub fn new(cfg: SpectrogramConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        let window = hann(cfg.window_len);
        let window_energy = window.iter().map(|w| w * w).sum();
        let fft = RealFft::new(cfg.nfft);
        Ok(Self {
            cfg,
            window,
            window_energy,
            fft,
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.cfg
    }

    /// Per-frame power of bins `0..kept_bins`, before log compression;
    /// frame-major.
    pub fn power_frames(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, DspError> {
        let cfg = &self.cfg;
        if samples.len() < cfg.window_len {
            return Err(DspError::TooShort {
                needed: cfg.window_len,
                found: samples.len(),
            });
        }
        let hop = cfg.hop();
        let n_frames = cfg.n_frames(samples.len());
        let mut frames = Vec::with_capacity(n_frames);
        let mut buf = vec![0.0; cfg.window_len];
        for f in 0..n_frames {
            let seg = &samples[f * hop..f * hop + cfg.window_len];
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = x * w;
            }
            let spec = self.fft.transform(&buf);
            frames.push(
                spec[..cfg.kept_bins]
                    .iter()
                    .map(|c| c.norm_sqr() / self.window_energy)
                    .collect(),
            );
        }
        Ok(frames)
    }

    pub fn compute(&self, samples: &[f64]) -> Result<Spectrogram, DspError> {
        let frames = self.power_frames(samples)?;
        let n_frames = frames.len();
        let n_bins = self.cfg.kept_bins;
        let mut values = vec![0.0; n_bins * n_frames];
        for (f, frame) in frames.iter().enumerate() {
            for (b, &p) in frame.iter().enumerate() {
                values[b * n_frames + f] = 10.0 * (p + LOG_EPS).log10();
            }
        }
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 0.0 && range.is_finite() {
            values.iter_mut().for_each(|v| *v = ((*v - lo) / range).clamp(0.0, 1.0));
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
        Spectrogram::from_values(values, n_bins, n_frames, self.cfg.bin_hz(), self.cfg.hop())
    }
}

/// Hann window, zero padding to `nfft`, log power, per-image min-max.
pub fn welch_spectrogram(samples: &[f64], cfg: &SpectrogramConfig) -> Result<Spectrogram, DspError> {
    WelchSpectrogram::new(cfg.clone())?.compute(samples)
}

/// Sidecar stored next to a cached spectrogram blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramSidecar {
    pub config: SpectrogramConfig,
    pub n_bins: usize,
    pub n_frames: usize,
    pub record_id: String,
    pub start_index: usize,
    pub source_fs: f64,
    pub label: crate::signal_io::RhythmClass,
}

/// Writes the row-major (bins x frames) image as little-endian f32 plus a
/// `.json` sidecar with the same stem.
pub fn write_spectrogram(path: &Path, spec: &Spectrogram, sidecar: &SpectrogramSidecar) -> Result<(), DspError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let bytes: Vec<u8> = spec.values().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    fs::write(path.with_extension("json"), serde_json::to_vec_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_spectrogram(path: &Path) -> Result<(Spectrogram, SpectrogramSidecar), DspError> {
    let sidecar: SpectrogramSidecar = serde_json::from_slice(&fs::read(path.with_extension("json"))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * sidecar.n_bins * sidecar.n_frames {
        return Err(DspError::InvalidSpec(format!(
            "{}: {} bytes for {}x{} image",
            path.display(),
            bytes.len(),
            sidecar.n_bins,
            sidecar.n_frames
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    let spec = Spectrogram::from_values(
        values,
        sidecar.n_bins,
        sidecar.n_frames,
        sidecar.config.bin_hz(),
        sidecar.config.hop(),
    )?;
    Ok((spec, sidecar))
}
