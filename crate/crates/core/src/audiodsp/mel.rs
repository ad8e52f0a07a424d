//! Mel spectrogram computation and frame-aligned sub-spectrogram windows.

use std::io::Read;
use std::path::Path;

use super::fft::real_fft_power;
use super::{MelConfig, Waveform};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the FFT bins 0..=n_fft/2.
///
/// Filters are mel-uniform from 0 Hz to Nyquist with peak weight 1 (no area
/// normalization). Stored sparse: each filter keeps its first nonzero bin
/// and the contiguous weights.
pub struct Filterbank {
    filters: Vec<(usize, Vec<f64>)>,
    center_hz: Vec<f64>,
}

impl Filterbank {
    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    /// Center frequency of each triangle, in Hz.
    pub fn center_hz(&self) -> &[f64] {
        &self.center_hz
    }

    /// Apply to a power spectrum of n_fft/2 + 1 bins.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (filter, o) in self.filters.iter().zip(out.iter_mut()) {
            let (start, weights) = filter;
            let mut acc = 0.0;
            for (w, p) in weights.iter().zip(&power[*start..]) {
                acc += w * p;
            }
            *o = acc;
        }
    }
}

/// Build the triangular filterbank for a configuration.
pub fn mel_filterbank(cfg: &MelConfig) -> Filterbank {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;

    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(nyquist);
    let hz_pts: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let mut filters = Vec::with_capacity(cfg.n_mels);
    let mut center_hz = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]);
        center_hz.push(center);
        let mut start = None;
        let mut weights = Vec::new();
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (center - lo);
            let down = (hi - f) / (hi - center);
            let w = up.min(down).max(0.0);
            if w > 0.0 {
                if start.is_none() {
                    start = Some(k);
                }
                weights.push(w);
            } else if start.is_some() {
                break;
            }
        }
        filters.push((start.unwrap_or(0), weights));
    }
    Filterbank { filters, center_hz }
}

/// Time-frequency grid of mel power; one column per hop.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    columns: usize,
    n_mels: usize,
    /// Columns per second (1 / stride).
    column_rate: f64,
    /// Row-major: column index varies slowest.
    data: Vec<f64>,
}

impl MelSpectrogram {
    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn column_rate(&self) -> f64 {
        self.column_rate
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_mels..(c + 1) * self.n_mels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn from_grid(columns: usize, n_mels: usize, column_rate: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != columns * n_mels {
            return Err(Error::Shape(format!(
                "grid data has {} entries, expected {}",
                data.len(),
                columns * n_mels
            )));
        }
        Ok(MelSpectrogram {
            columns,
            n_mels,
            column_rate,
            data,
        })
    }

    /// CSV export: one line per column, mel energies comma-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in 0..self.columns {
            let fields: Vec<String> = self.column(c).iter().map(|v| format!("{v}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Index into a slice with reflection at both ends (no edge repeat).
fn reflect(idx: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = idx % period;
    if m < 0 {
        m += period;
    }
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Compute the mel power spectrogram of a waveform.
///
/// Frames are centered on multiples of the hop with reflect padding, windowed
/// by a periodic Hann of `window_secs`, zero-padded into `n_fft` points and
/// squared; the triangular filterbank then folds the power spectrum into
/// `n_mels` bands. The column count is floor(num_samples / hop) + 1.
pub fn mel_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::Shape(format!(
            "waveform rate {} does not match config rate {}",
            wave.sample_rate, cfg.sample_rate
        )));
    }

    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    let n_fft = cfg.n_fft;
    let pad = (n_fft - win) / 2;
    let columns = wave.samples.len() / hop + 1;

    // periodic Hann
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();

    let bank = mel_filterbank(cfg);
    let mut data = vec![0.0; columns * cfg.n_mels];

    if wave.samples.is_empty() {
        return MelSpectrogram::from_grid(columns, cfg.n_mels, 1.0 / cfg.stride_secs, data);
    }

    let mut frame = vec![0.0f64; n_fft];
    for c in 0..columns {
        let center = (c * hop) as isize;
        frame.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..win {
            let src = center - (win / 2) as isize + i as isize;
            frame[pad + i] = wave.samples[reflect(src, wave.samples.len())] * hann[i];
        }
        let power = real_fft_power(&frame)?;
        bank.apply(&power, &mut data[c * cfg.n_mels..(c + 1) * cfg.n_mels]);
    }

    MelSpectrogram::from_grid(columns, cfg.n_mels, 1.0 / cfg.stride_secs, data)
}

/// Fixed-length spectrogram window centered on a video frame time.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSpectrogram {
    rows: usize,
    n_mels: usize,
    /// Spectrogram column aligned with the window center (row (rows-1)/2).
    center_column: i64,
    window_secs: f64,
    data: Vec<f64>,
}

impl SubSpectrogram {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn center_column(&self) -> i64 {
        self.center_column
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_mels..(r + 1) * self.n_mels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Cut a window of `window_secs` out of a spectrogram, centered on the time
/// of `frame_index` (at `fps`). Rows outside the spectrogram are zero; the
/// output always has round(window_secs * column_rate) + 1 rows.
pub fn extract_subspectrogram(
    spec: &MelSpectrogram,
    frame_index: u32,
    fps: f64,
    window_secs: f64,
) -> Result<SubSpectrogram> {
    if window_secs <= 0.0 {
        return Err(Error::Config("window_secs must be positive".into()));
    }
    let span = (window_secs * spec.column_rate).round() as usize;
    let rows = span + 1;
    let center = (frame_index as f64 / fps * spec.column_rate).round() as i64;
    let start = center - (span / 2) as i64;

    let mut data = vec![0.0; rows * spec.n_mels];
    for r in 0..rows {
        let col = start + r as i64;
        if col >= 0 && (col as usize) < spec.columns {
            data[r * spec.n_mels..(r + 1) * spec.n_mels]
                .copy_from_slice(spec.column(col as usize));
        }
    }
    Ok(SubSpectrogram {
        rows,
        n_mels: spec.n_mels,
        center_column: center,
        window_secs,
        data,
    })
}

const MELS_MAGIC: &[u8; 4] = b"MELS";

/// Write the binary spectrogram format: magic `MELS`, u32 rows, u32 cols,
/// little-endian f32 row-major payload.
pub fn write_mels(path: &Path, spec: &MelSpectrogram) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + spec.data.len() * 4);
    buf.extend_from_slice(MELS_MAGIC);
    buf.extend_from_slice(&(spec.columns as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.n_mels as u32).to_le_bytes());
    for &v in &spec.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read the binary spectrogram format back as (rows, cols, data).
pub fn read_mels(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != MELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: "bad magic, expected MELS".into(),
        });
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != rows * cols * 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: format!("payload is {} bytes, expected {}", payload.len(), rows * cols * 4),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((rows, cols, data))
}

/// Total energy of one column, for sanity checks.
pub fn column_energy(spec: &MelSpectrogram, c: usize) -> f64 {
    spec.column(c).iter().sum()
}
