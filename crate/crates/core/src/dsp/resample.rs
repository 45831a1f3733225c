use std::collections::HashMap;
use std::f64::consts::PI;

use super::DspError;

const KAISER_BETA: f64 = 8.0;
/// Kernel half-width in zero crossings of the lower of the two rates.
const HALF_WIDTH_ZEROS: f64 = 32.0;
const MAX_CACHED_PHASES: usize = 4096;

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64) -> f64 {
    // u in [-1, 1]
    if u.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc interpolation from `src_hz` to `dst_hz`, evaluated at the
/// target sample instants. Output length is `round(n * dst / src)`.
pub fn resample(samples: &[f64], src_hz: f64, dst_hz: f64) -> Result<Vec<f64>, DspError> {
    if samples.is_empty() {
        return Err(DspError::EmptyInput);
    }
    if !(src_hz > 0.0 && dst_hz > 0.0) {
        return Err(DspError::InvalidRate { src_hz, dst_hz });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite);
    }
    let n_out = (samples.len() as f64 * dst_hz / src_hz).round() as usize;
    if src_hz == dst_hz {
        return Ok(samples.to_vec());
    }
    // Cutoff at min(src, dst)/2, expressed in input-sample units.
    let ratio = (dst_hz / src_hz).min(1.0);
    let half_width = HALF_WIDTH_ZEROS / ratio;
    let n = samples.len() as isize;
    let reach = half_width.floor() as isize;
    // kernel taps depend only on the fractional part of t
    let mut kernels: HashMap<u64, Vec<f64>> = HashMap::new();
    let kernel_for = |frac: f64| -> Vec<f64> {
        (-reach - 1..=reach + 1)
            .map(|k| {
                let d = frac - k as f64;
                if d.abs() > half_width {
                    0.0
                } else {
                    ratio * sinc(ratio * d) * kaiser(d / half_width)
                }
            })
            .collect()
    };
    let out = (0..n_out)
        .map(|j| {
            let t = j as f64 * src_hz / dst_hz;
            let base = t.floor();
            let frac = t - base;
            let kernel = match kernels.get(&frac.to_bits()) {
                Some(k) => k,
                None => {
                    let k = kernel_for(frac);
                    if kernels.len() >= MAX_CACHED_PHASES {
                        kernels.clear();
                    }
                    kernels.entry(frac.to_bits()).or_insert(k)
                }
            };
            let base = base as isize;
            kernel
                .iter()
                .enumerate()
                .filter_map(|(o, &w)| {
                    let i = base + o as isize - reach - 1;
                    (i >= 0 && i < n && w != 0.0).then(|| samples[i as usize] * w)
                })
                .sum()
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-14);
    }

    #[test]
    fn identity_rate() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = resample(&x, 250.0, 250.0).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn length_scaling() {
        let x = vec![0.0; 3250];
        assert_eq!(resample(&x, 250.0, 200.0).unwrap().len(), 2600);
        assert!(matches!(resample(&[], 250.0, 200.0), Err(DspError::EmptyInput)));
    }
}
