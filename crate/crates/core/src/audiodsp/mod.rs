//! Aural preprocessing: resampling, mel spectrograms and frame-aligned
//! sub-spectrogram windows.
//!
//! All DSP details are fixed explicitly so results are bit-reproducible:
//! periodic Hann window, reflect-centered framing, magnitude-squared
//! (power) spectra, HTK-scale triangular mel filters spanning 0 Hz to
//! Nyquist, and no log compression.

mod fft;
mod mel;
mod resample;
mod wav;

pub use fft::{fft_in_place, real_fft_power};
pub use mel::{
    column_energy, extract_subspectrogram, mel_filterbank, mel_spectrogram, read_mels, write_mels,
    MelSpectrogram, SubSpectrogram,
};
pub use resample::resample;
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Waveform {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Mel spectrogram settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    /// Analysis window length in seconds.
    pub window_secs: f64,
    /// Hop between consecutive columns in seconds.
    pub stride_secs: f64,
    pub n_fft: usize,
}

impl Default for MelConfig {
    fn default() -> MelConfig {
        MelConfig {
            sample_rate: 41_000,
            n_mels: 64,
            window_secs: 0.020,
            stride_secs: 0.010,
            n_fft: 1024,
        }
    }
}

impl MelConfig {
    /// Window length in samples.
    pub fn window_samples(&self) -> usize {
        (self.window_secs * self.sample_rate as f64).round() as usize
    }

    /// Hop length in samples.
    pub fn hop_samples(&self) -> usize {
        (self.stride_secs * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(Error::Config(format!(
                "n_fft must be a power of two, got {}",
                self.n_fft
            )));
        }
        if self.n_fft < self.window_samples() {
            return Err(Error::Config(format!(
                "n_fft ({}) must cover the window ({} samples)",
                self.n_fft,
                self.window_samples()
            )));
        }
        if self.stride_secs > self.window_secs {
            return Err(Error::Config("stride must not exceed the window".into()));
        }
        if self.hop_samples() == 0 {
            return Err(Error::Config("stride too small for the sample rate".into()));
        }
        Ok(())
    }
}
