use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DspError;

/// Minimum gain accepted at the pass edge.
const PASS_EDGE_MIN_DB: f64 = -3.0;

/// High-pass specification for baseline-wander removal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub fs_hz: f64,
    pub stop_freq_hz: f64,
    pub stop_atten_db: f64,
    pub pass_freq_hz: f64,
    pub n_taps: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            fs_hz: 200.0,
            stop_freq_hz: 0.05,
            stop_atten_db: 24.0,
            pass_freq_hz: 0.67,
            n_taps: 1001,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), DspError> {
        let ok = self.stop_freq_hz > 0.0
            && self.stop_freq_hz < self.pass_freq_hz
            && self.pass_freq_hz < self.fs_hz / 2.0
            && self.n_taps % 2 == 1
            && self.stop_atten_db > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DspError::InvalidSpec(format!("{self:?}")))
        }
    }
}

/// `|H(f)|` of `taps` at `freq_hz`, by direct DTFT sum.
pub fn magnitude_response(taps: &[f64], freq_hz: f64, fs_hz: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / fs_hz;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &h)| {
        let a = w * n as f64;
        (re + h * a.cos(), im - h * a.sin())
    });
    re.hypot(im)
}

pub fn magnitude_db(taps: &[f64], freq_hz: f64, fs_hz: f64) -> f64 {
    20.0 * magnitude_response(taps, freq_hz, fs_hz).max(1e-300).log10()
}

/// Linear-phase high-pass by spectral inversion of a Hamming-windowed
/// low-pass whose cutoff sits midway between the stop and pass edges.
pub fn design_highpass_fir(spec: &FilterSpec) -> Result<Vec<f64>, DspError> {
    spec.validate()?;
    let n = spec.n_taps;
    let mid = (n - 1) / 2;
    let cutoff = 0.5 * (spec.stop_freq_hz + spec.pass_freq_hz) / spec.fs_hz;
    let mut lowpass: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - mid as f64;
            let ideal = if m == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * m).sin() / (PI * m)
            };
            let window = if n == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()
            };
            ideal * window
        })
        .collect();
    let dc: f64 = lowpass.iter().sum();
    lowpass.iter_mut().for_each(|h| *h /= dc);
    let mut taps: Vec<f64> = lowpass.iter().map(|h| -h).collect();
    taps[mid] += 1.0;
    // Enforce exact symmetry against rounding in the window evaluation.
    for i in 0..mid {
        let avg = 0.5 * (taps[i] + taps[n - 1 - i]);
        taps[i] = avg;
        taps[n - 1 - i] = avg;
    }
    let stop_db = magnitude_db(&taps, spec.stop_freq_hz, spec.fs_hz);
    if stop_db > -spec.stop_atten_db {
        return Err(DspError::InfeasibleSpec {
            n_taps: n,
            freq_hz: spec.stop_freq_hz,
            achieved_db: stop_db,
            required_db: -spec.stop_atten_db,
        });
    }
    // A too-short filter attenuates the stop point trivially but never opens up.
    let pass_db = magnitude_db(&taps, spec.pass_freq_hz, spec.fs_hz);
    if pass_db < PASS_EDGE_MIN_DB {
        return Err(DspError::InfeasibleSpec {
            n_taps: n,
            freq_hz: spec.pass_freq_hz,
            achieved_db: pass_db,
            required_db: PASS_EDGE_MIN_DB,
        });
    }
    Ok(taps)
}

/// Index into a signal of length `len` with whole-sample symmetric
/// reflection about the end points (`-1 -> 1`, `len -> len - 2`).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Zero-phase application of a symmetric odd-length FIR: convolution with
/// reflected edges, shifted by the group delay so output aligns with input.
pub fn apply_fir(samples: &[f64], taps: &[f64]) -> Result<Vec<f64>, DspError> {
    if taps.len().is_multiple_of(2) || taps.is_empty() {
        return Err(DspError::InvalidSpec(format!("tap count {} must be odd", taps.len())));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let half = (taps.len() / 2) as isize;
    let len = samples.len();
    let out = (0..len as isize)
        .map(|t| {
            taps.iter()
                .enumerate()
                .map(|(k, &h)| h * samples[reflect(t + half - k as isize, len)])
                .sum()
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_design_meets_stop_point() {
        let taps = design_highpass_fir(&FilterSpec::default()).unwrap();
        assert_eq!(taps.len(), 1001);
        assert!(magnitude_db(&taps, 0.05, 200.0) <= -24.0);
        assert!(taps.iter().sum::<f64>().abs() <= 1e-6);
        for i in 0..500 {
            assert_eq!(taps[i], taps[1000 - i]);
        }
    }

    #[test]
    fn too_short_is_infeasible() {
        let spec = FilterSpec {
            n_taps: 101,
            ..FilterSpec::default()
        };
        assert!(matches!(design_highpass_fir(&spec), Err(DspError::InfeasibleSpec { .. })));
    }

    #[test]
    fn invalid_specs() {
        let even = FilterSpec {
            n_taps: 1000,
            ..FilterSpec::default()
        };
        assert!(design_highpass_fir(&even).is_err());
        let inverted = FilterSpec {
            stop_freq_hz: 1.0,
            ..FilterSpec::default()
        };
        assert!(design_highpass_fir(&inverted).is_err());
        assert!(apply_fir(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn reflection_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-9, 5), 1);
        assert_eq!(reflect(2, 1), 0);
    }
}
