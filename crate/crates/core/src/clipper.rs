//! Dilated 4-channel video clip assembly and training-time augmentation.
//!
//! A clip anchored at frame `t` stacks the aligned face image (channels 0-2)
//! and the landmark mask (channel 3) of `l` frames sampled backwards with
//! dilation `d`. Augmentation applies one flip decision and one color jitter
//! to the whole clip so frames stay temporally coherent.

use std::io::Read;
use std::path::Path;

use image::{GrayImage, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};

/// Per-video store of aligned face images and their masks.
#[derive(Debug, Clone, Default)]
pub struct FrameStore {
    faces: Vec<RgbImage>,
    masks: Vec<GrayImage>,
}

impl FrameStore {
    pub fn new() -> FrameStore {
        FrameStore::default()
    }

    pub fn push(&mut self, face: RgbImage, mask: GrayImage) -> Result<()> {
        if face.dimensions() != mask.dimensions() {
            return Err(Error::Shape(format!(
                "face {:?} and mask {:?} dimensions differ",
                face.dimensions(),
                mask.dimensions()
            )));
        }
        if let Some(first) = self.faces.first() {
            if first.dimensions() != face.dimensions() {
                return Err(Error::Shape(format!(
                    "frame {:?} does not match store dimensions {:?}",
                    face.dimensions(),
                    first.dimensions()
                )));
            }
        }
        self.faces.push(face);
        self.masks.push(mask);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face(&self, i: usize) -> &RgbImage {
        &self.faces[i]
    }

    pub fn mask(&self, i: usize) -> &GrayImage {
        &self.masks[i]
    }
}

/// Clip sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    /// Frames per clip (l).
    pub frames: usize,
    /// Sampling dilation (d): distance between consecutive source frames.
    pub dilation: usize,
    pub height: u32,
    pub width: u32,
    pub fps: f64,
}

impl Default for ClipConfig {
    fn default() -> ClipConfig {
        ClipConfig {
            frames: 8,
            dilation: 6,
            height: 112,
            width: 112,
            fps: 30.0,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.dilation == 0 {
            return Err(Error::Config("clip frames and dilation must be >= 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.fps <= 0.0 {
            return Err(Error::Config("clip dimensions and fps must be positive".into()));
        }
        Ok(())
    }
}

/// l x H x W x 4 tensor of face + mask channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: usize,
    pub height: u32,
    pub width: u32,
    /// Anchor frame index t.
    pub anchor: u32,
    /// Layout: ((frame * H + y) * W + x) * 4 + channel; channel 3 is the mask.
    pub data: Vec<f32>,
}

impl Clip {
    fn index(&self, frame: usize, y: u32, x: u32, ch: usize) -> usize {
        (((frame as u32 * self.height + y) * self.width + x) * 4) as usize + ch
    }

    pub fn get(&self, frame: usize, y: u32, x: u32, ch: usize) -> f32 {
        self.data[self.index(frame, y, x, ch)]
    }
}

/// Source frame indices for a clip at `t`: {t - d*k : k = l-1..0} in
/// chronological order, with negative indices clamped to frame 0.
pub fn clip_source_indices(t: usize, cfg: &ClipConfig) -> Vec<usize> {
    (0..cfg.frames)
        .rev()
        .map(|k| t.saturating_sub(cfg.dilation * k))
        .collect()
}

/// Span of time a clip covers, in seconds: l * d / fps.
pub fn clip_span_seconds(cfg: &ClipConfig) -> f64 {
    (cfg.frames * cfg.dilation) as f64 / cfg.fps
}

/// Assemble the clip anchored at frame `t`.
pub fn sample_clip(store: &FrameStore, t: usize, cfg: &ClipConfig) -> Result<Clip> {
    cfg.validate()?;
    if t >= store.len() {
        return Err(Error::FrameOutOfRange {
            frame: t,
            len: store.len(),
        });
    }
    let (w, h) = store.face(0).dimensions();
    if (h, w) != (cfg.height, cfg.width) {
        return Err(Error::Shape(format!(
            "store frames are {w}x{h}, config wants {}x{}",
            cfg.width, cfg.height
        )));
    }

    let indices = clip_source_indices(t, cfg);
    let mut data = vec![0.0f32; cfg.frames * (h * w) as usize * 4];
    let mut offset = 0;
    for &src in &indices {
        let face = store.face(src);
        let mask = store.mask(src);
        for y in 0..h {
            for x in 0..w {
                let px = face.get_pixel(x, y);
                data[offset] = px[0] as f32 / 255.0;
                data[offset + 1] = px[1] as f32 / 255.0;
                data[offset + 2] = px[2] as f32 / 255.0;
                data[offset + 3] = mask.get_pixel(x, y)[0] as f32 / 255.0;
                offset += 4;
            }
        }
    }
    Ok(Clip {
        frames: cfg.frames,
        height: h,
        width: w,
        anchor: t as u32,
        data,
    })
}

/// One draw of augmentation parameters, shared by every frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Hue rotation in degrees.
    pub hue_degrees: f64,
    /// Saturation scale.
    pub saturation: f64,
    /// Lightness scale.
    pub lightness: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        hue_degrees: 0.0,
        saturation: 1.0,
        lightness: 1.0,
    };

    /// Flip with probability 0.5; hue shift within +-18 degrees; saturation
    /// and lightness scales within [0.9, 1.1].
    pub fn sample(rng: &mut impl Rng) -> AugmentParams {
        AugmentParams {
            flip: rng.random::<bool>(),
            hue_degrees: rng.random_range(-18.0..=18.0),
            saturation: rng.random_range(0.9..=1.1),
            lightness: rng.random_range(0.9..=1.1),
        }
    }
}

/// Sample augmentation parameters and apply them to the clip.
pub fn augment_clip(clip: &Clip, rng: &mut impl Rng) -> Clip {
    augment_clip_with(clip, &AugmentParams::sample(rng))
}

/// Apply fixed augmentation parameters: an optional horizontal flip of all
/// four channels, then an HSL jitter of the face channels only. All frames
/// receive identical per-pixel transform parameters.
pub fn augment_clip_with(clip: &Clip, params: &AugmentParams) -> Clip {
    let mut out = clip.clone();
    let (w, h) = (clip.width, clip.height);

    if params.flip {
        for f in 0..clip.frames {
            for y in 0..h {
                for x in 0..w {
                    let mirrored = w - 1 - x;
                    for ch in 0..4 {
                        let idx = out.index(f, y, x, ch);
                        out.data[idx] = clip.get(f, y, mirrored, ch);
                    }
                }
            }
        }
    }

    let jitter =
        params.hue_degrees != 0.0 || params.saturation != 1.0 || params.lightness != 1.0;
    if jitter {
        for f in 0..out.frames {
            for y in 0..h {
                for x in 0..w {
                    let i = out.index(f, y, x, 0);
                    let (r, g, b) = (
                        out.data[i] as f64,
                        out.data[i + 1] as f64,
                        out.data[i + 2] as f64,
                    );
                    let (mut hue, mut sat, mut light) = rgb_to_hsl(r, g, b);
                    hue = (hue + params.hue_degrees).rem_euclid(360.0);
                    sat = (sat * params.saturation).clamp(0.0, 1.0);
                    light = (light * params.lightness).clamp(0.0, 1.0);
                    let (r, g, b) = hsl_to_rgb(hue, sat, light);
                    out.data[i] = r as f32;
                    out.data[i + 1] = g as f32;
                    out.data[i + 2] = b as f32;
                }
            }
        }
    }
    out
}

/// RGB in [0,1] to (hue degrees, saturation, lightness).
pub fn rgb_to_hsl(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let light = (max + min) / 2.0;
    if max == min {
        return (0.0, 0.0, light);
    }
    let delta = max - min;
    let sat = delta / (1.0 - (2.0 * light - 1.0).abs());
    let hue = if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (hue, sat, light)
}

/// (hue degrees, saturation, lightness) to RGB in [0,1].
pub fn hsl_to_rgb(hue: f64, sat: f64, light: f64) -> (f64, f64, f64) {
    let c = (1.0 - (2.0 * light - 1.0).abs()) * sat;
    let hp = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = light - c / 2.0;
    (r1 + m, g1 + m, b1 + m)
}

const CLP4_MAGIC: &[u8; 4] = b"CLP4";

/// Write the clip binary format: magic `CLP4`, u32 l, H, W, f32 LE payload.
pub fn write_clip(path: &Path, clip: &Clip) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + clip.data.len() * 4);
    buf.extend_from_slice(CLP4_MAGIC);
    buf.extend_from_slice(&(clip.frames as u32).to_le_bytes());
    buf.extend_from_slice(&clip.height.to_le_bytes());
    buf.extend_from_slice(&clip.width.to_le_bytes());
    for &v in &clip.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a clip back; the anchor comes from the JSON sidecar, not this file.
pub fn read_clip(path: &Path) -> Result<Clip> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != CLP4_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: "bad magic, expected CLP4".into(),
        });
    }
    let frames = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let width = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected = frames * (height * width) as usize * 4 * 4;
    if payload.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: format!("payload is {} bytes, expected {expected}", payload.len()),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Clip {
        frames,
        height,
        width,
        anchor: 0,
        data,
    })
}
