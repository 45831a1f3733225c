//! Front end: resample to the working rate, remove baseline wander with a
//! linear-phase high-pass FIR, and render the normalized log-power
//! spectrogram that the network consumes.

mod fft;
mod fir;
mod resample;
mod spectrogram;

pub use fft::{dft_oracle, RealFft};
pub use fir::{apply_fir, design_highpass_fir, magnitude_db, magnitude_response, FilterSpec};
pub use resample::{bessel_i0, resample};
pub use spectrogram::{
    hann, read_spectrogram, welch_spectrogram, write_spectrogram, Spectrogram, SpectrogramConfig,
    SpectrogramSidecar, WelchSpectrogram, LOG_EPS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite input sample")]
    NonFinite,
    #[error("invalid sample rates {src_hz} -> {dst_hz}")]
    InvalidRate { src_hz: f64, dst_hz: f64 },
    #[error("invalid configuration: {0}")]
    InvalidSpec(String),
    #[error("{n_taps} taps give {achieved_db:.1} dB at {freq_hz} Hz (limit {required_db:.1} dB)")]
    InfeasibleSpec {
        n_taps: usize,
        freq_hz: f64,
        achieved_db: f64,
        required_db: f64,
    },
    #[error("signal too short: need {needed} samples, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Resample → high-pass → spectrogram, with the filter taps and FFT plan
/// built once.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    filter: FilterSpec,
    taps: Vec<f64>,
    welch: WelchSpectrogram,
}

impl Preprocessor {
    pub fn new(filter: &FilterSpec, spectrogram: SpectrogramConfig) -> Result<Self, DspError> {
        if (filter.fs_hz - spectrogram.fs_hz).abs() > 1e-9 {
            return Err(DspError::InvalidSpec(format!(
                "filter designed for {} Hz but spectrogram expects {} Hz",
                filter.fs_hz, spectrogram.fs_hz
            )));
        }
        Ok(Self {
            filter: filter.clone(),
            taps: design_highpass_fir(filter)?,
            welch: WelchSpectrogram::new(spectrogram)?,
        })
    }

    pub fn working_rate(&self) -> f64 {
        self.welch.config().fs_hz
    }

    pub fn spectrogram_config(&self) -> &SpectrogramConfig {
        self.welch.config()
    }

    pub fn filter_spec(&self) -> &FilterSpec {
        &self.filter
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Resampled and filtered signal at the working rate.
    pub fn condition(&self, samples: &[f64], fs_hz: f64) -> Result<Vec<f64>, DspError> {
        let resampled = resample(samples, fs_hz, self.working_rate())?;
        apply_fir(&resampled, &self.taps)
    }

    pub fn run(&self, samples: &[f64], fs_hz: f64) -> Result<Spectrogram, DspError> {
        self.welch.compute(&self.condition(samples, fs_hz)?)
    }
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(&FilterSpec::default(), SpectrogramConfig::default()).expect("default front end is valid")
    }
}
