//! Band-limited sample-rate conversion.

use super::Waveform;
use crate::error::{Error, Result};

/// Taps per output sample (kernel support in source samples).
const TAPS: usize = 64;
const HALF_TAPS: isize = (TAPS / 2) as isize;

/// Resample a waveform with a windowed-sinc kernel (64 taps per phase,
/// Hann-windowed, cutoff at the lower of the two Nyquist frequencies).
///
/// Output length is round(input_length * target / source). Equal rates
/// return the input samples unchanged.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Config("target_rate must be positive".into()));
    }
    if wave.sample_rate == 0 {
        return Err(Error::Config("source sample_rate must be positive".into()));
    }
    if target_rate == wave.sample_rate {
        return Ok(wave.clone());
    }

    let src = &wave.samples;
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let out_len = (src.len() as f64 * ratio).round() as usize;
    if src.is_empty() || out_len == 0 {
        return Ok(Waveform::new(Vec::new(), target_rate));
    }

    // Anti-aliasing cutoff as a fraction of the source Nyquist.
    let cutoff = ratio.min(1.0);

    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let t = j as f64 / ratio;
        let i0 = t.floor() as isize;
        let frac = t - i0 as f64;

        let mut acc = 0.0;
        for k in (1 - HALF_TAPS)..=HALF_TAPS {
            let idx = i0 + k;
            if idx < 0 || idx as usize >= src.len() {
                continue;
            }
            let dt = k as f64 - frac;
            acc += src[idx as usize] * kernel(dt, cutoff);
        }
        out.push(acc);
    }
    Ok(Waveform::new(out, target_rate))
}

/// Hann-windowed sinc, unit DC gain at cutoff 1.
fn kernel(dt: f64, cutoff: f64) -> f64 {
    let u = dt / HALF_TAPS as f64;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let window = 0.5 + 0.5 * (std::f64::consts::PI * u).cos();
    cutoff * sinc(cutoff * dt) * window
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}
