//! Browser bindings for three interactive views of the pipeline kernels:
//! mel sub-spectrogram extraction, valence-arousal label fusion, and
//! similarity-transform face alignment with mask rendering.
//!
//! Every export is a pure function of its arguments (seeds included), so the
//! page stays stateless and reloads reproduce exactly what was on screen.

use wasm_bindgen::prelude::wasm_bindgen;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use auravis_core::annotations::{ExpressionLabel, ValenceArousal, EXPRESSION_NAMES};
use auravis_core::audiodsp::{
    extract_subspectrogram, mel_spectrogram, resample, MelConfig, Waveform,
};
use auravis_core::geometry::{
    align_face, canonical_landmarks, estimate_similarity, five_points_from_68, render_mask,
    Landmarks68, MaskSpec, SimilarityTransform, Template5,
};
use auravis_core::labelfusion::{
    filter_record, sample_pseudo_va, soft_expression, VaHistogramSet,
};
use auravis_core::synth::render_face;

/// RGBA pixel buffer handed to a canvas via `ImageData`.
#[wasm_bindgen]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

#[wasm_bindgen]
impl ImageBuffer {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }
}

fn rgba(width: u32, height: u32) -> ImageBuffer {
    ImageBuffer {
        width,
        height,
        pixels: vec![0; (width * height * 4) as usize],
    }
}

/// Perceptual-ish heat colormap from dark blue through teal to yellow.
fn heat(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * t - 0.3).clamp(0.0, 1.0)) as u8;
    let g = (255.0 * (1.4 * t).clamp(0.0, 1.0).powf(1.2)) as u8;
    let b = (255.0 * (0.4 + 0.6 * (1.0 - t).powf(1.5))) as u8;
    [r, g, b]
}

// --- sub-spectrogram explorer ----------------------------------------------

const DEMO_AUDIO_SECS: f64 = 3.0;
const DEMO_SOURCE_RATE: u32 = 48_000;

fn demo_mel_config() -> MelConfig {
    MelConfig::default() // 41 kHz, 64 mels, 20 ms window, 10 ms stride
}

fn demo_waveform(freq_a: f64, freq_b: f64) -> Waveform {
    let n = (DEMO_AUDIO_SECS * DEMO_SOURCE_RATE as f64) as usize;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / DEMO_SOURCE_RATE as f64;
            // second tone fades in over the clip so time structure is visible
            let fade = (t / DEMO_AUDIO_SECS).clamp(0.0, 1.0);
            0.45 * (std::f64::consts::TAU * freq_a * t).sin()
                + 0.35 * fade * (std::f64::consts::TAU * freq_b * t).sin()
        })
        .collect();
    Waveform::new(samples, DEMO_SOURCE_RATE)
}

/// Number of rows the sub-spectrogram window will have, for canvas sizing.
#[wasm_bindgen]
pub fn subspectrogram_rows(window_secs: f64) -> u32 {
    let cfg = demo_mel_config();
    (window_secs / cfg.stride_secs).round() as u32 + 1
}

/// Synthesize a two-tone waveform at 48 kHz, resample to 41 kHz, compute the
/// mel spectrogram and cut the window centered on `frame_index` (30 fps).
/// Rows run left to right as time; mel bands bottom to top.
#[wasm_bindgen]
pub fn render_subspectrogram(
    freq_a: f64,
    freq_b: f64,
    frame_index: u32,
    window_secs: f64,
) -> Result<ImageBuffer, String> {
    let cfg = demo_mel_config();
    let wave = demo_waveform(freq_a, freq_b);
    let wave = resample(&wave, cfg.sample_rate).map_err(|e| e.to_string())?;
    let spec = mel_spectrogram(&wave, &cfg).map_err(|e| e.to_string())?;
    let sub = extract_subspectrogram(&spec, frame_index, 30.0, window_secs)
        .map_err(|e| e.to_string())?;

    let (rows, mels) = (sub.rows(), sub.n_mels());
    let peak = sub.data().iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let mut img = rgba(rows as u32, mels as u32);
    for r in 0..rows {
        for m in 0..mels {
            // log compression for display only
            let v = (1.0 + sub.row(r)[m] / peak * 400.0).ln() / (401.0f64).ln();
            let [red, green, blue] = heat(v);
            let y = mels - 1 - m;
            let idx = ((y * rows + r) * 4) as usize;
            img.pixels[idx] = red;
            img.pixels[idx + 1] = green;
            img.pixels[idx + 2] = blue;
            img.pixels[idx + 3] = 255;
        }
    }
    Ok(img)
}

/// Spectrogram metadata for the caption: column count, center column, rows.
#[wasm_bindgen]
pub fn subspectrogram_info(frame_index: u32, window_secs: f64) -> String {
    let cfg = demo_mel_config();
    let columns = (DEMO_AUDIO_SECS * cfg.sample_rate as f64) as usize / cfg.hop_samples() + 1;
    let center = (frame_index as f64 / 30.0 / cfg.stride_secs).round() as i64;
    serde_json::json!({
        "spectrogram_columns": columns,
        "center_column": center,
        "rows": (window_secs / cfg.stride_secs).round() as u64 + 1,
        "n_mels": cfg.n_mels,
    })
    .to_string()
}

// --- label fusion explorer ---------------------------------------------------

/// Seeded synthetic (EX, VA) corpus shared by the histogram views.
fn demo_histograms(bins: usize, samples_per_class: u32, seed: u32) -> VaHistogramSet {
    use rand_distr::{Distribution, Normal};
    let means = [
        (0.0, 0.0),   // neutral
        (-0.5, 0.6),  // anger
        (-0.6, 0.2),  // disgust
        (-0.4, 0.7),  // fear
        (0.7, 0.4),   // happiness
        (-0.6, -0.3), // sadness
        (0.3, 0.8),   // surprise
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let mut hist = VaHistogramSet::new(bins.max(1)).expect("bins >= 1");
    for (class, (mv, ma)) in means.iter().enumerate() {
        let nv = Normal::new(*mv, 0.16).expect("finite std");
        let na = Normal::new(*ma, 0.16).expect("finite std");
        let ex = ExpressionLabel::new(class as i64).expect("class in range");
        for _ in 0..samples_per_class {
            let v: f64 = nv.sample(&mut rng);
            let a: f64 = na.sample(&mut rng);
            hist.add(ex, ValenceArousal::new(v.clamp(-1.0, 1.0), a.clamp(-1.0, 1.0)));
        }
    }
    hist
}

/// Heatmap of one expression's VA histogram (valence left to right, arousal
/// bottom to top), one pixel per bin.
#[wasm_bindgen]
pub fn render_va_histogram(
    ex_class: usize,
    bins: usize,
    samples_per_class: u32,
    seed: u32,
) -> Result<ImageBuffer, String> {
    let ex = ExpressionLabel::new(ex_class as i64).ok_or("class index outside 0..=6")?;
    let hist = demo_histograms(bins, samples_per_class, seed);
    let b = hist.bins_per_axis();
    let peak = (0..b)
        .flat_map(|v| (0..b).map(move |a| (v, a)))
        .map(|(v, a)| hist.count_in_bin(ex, v, a))
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let mut img = rgba(b as u32, b as u32);
    for vb in 0..b {
        for ab in 0..b {
            let t = hist.count_in_bin(ex, vb, ab) as f64 / peak;
            let [red, green, blue] = heat(t);
            let y = b - 1 - ab;
            let idx = ((y * b + vb) * 4) as usize;
            img.pixels[idx] = red;
            img.pixels[idx + 1] = green;
            img.pixels[idx + 2] = blue;
            img.pixels[idx + 3] = 255;
        }
    }
    Ok(img)
}

/// Soft expression label for a (v, a) point: seven probabilities plus the
/// class names, or the empty-bin error message.
#[wasm_bindgen]
pub fn soft_label_at(
    v: f64,
    a: f64,
    bins: usize,
    samples_per_class: u32,
    seed: u32,
) -> Result<String, String> {
    let hist = demo_histograms(bins, samples_per_class, seed);
    let soft = soft_expression(&hist, ValenceArousal::new(v, a)).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({
        "names": EXPRESSION_NAMES,
        "probs": soft.probs().to_vec(),
    })
    .to_string())
}

/// Draw pseudo (v, a) labels for an expression; returns flattened pairs.
#[wasm_bindgen]
pub fn sample_pseudo_labels(
    ex_class: usize,
    bins: usize,
    samples_per_class: u32,
    seed: u32,
    draw_seed: u32,
    count: u32,
) -> Result<Vec<f64>, String> {
    let ex = ExpressionLabel::new(ex_class as i64).ok_or("class index outside 0..=6")?;
    let hist = demo_histograms(bins, samples_per_class, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed as u64);
    let mut out = Vec::with_capacity(count as usize * 2);
    for _ in 0..count {
        let va = sample_pseudo_va(&hist, ex, &mut rng).map_err(|e| e.to_string())?;
        out.push(va.valence);
        out.push(va.arousal);
    }
    Ok(out)
}

/// Contradiction-filter verdict for a hypothetical (EX, v, a) annotation.
#[wasm_bindgen]
pub fn filter_verdict(ex_class: usize, v: f64, a: f64) -> String {
    let raw = auravis_core::annotations::RawLabels {
        va: Some((v, a)),
        ex: Some(ex_class as i64),
        au: None,
    };
    let record = auravis_core::annotations::validate_record("demo", 0, &raw);
    let (out, rule) = filter_record(&record);
    serde_json::json!({
        "excluded": out.excluded,
        "rule": rule.map(|r| format!("{r:?}")),
    })
    .to_string()
}

// --- alignment explorer -----------------------------------------------------

const SOURCE_SIZE: u32 = 160;

/// Landmarks in source-image coordinates for the chosen pose.
fn posed_landmarks(rotation_deg: f64, scale: f64, tx: f64, ty: f64, jitter: f64, seed: u32) -> Landmarks68 {
    use rand::Rng;
    let pose_scale = SOURCE_SIZE as f64 / 112.0 * 0.7 * scale;
    let rotation = rotation_deg.to_radians();
    let (sin, cos) = rotation.sin_cos();
    // keep the canonical face center at the image center before shifting
    let (cx, cy) = (56.0, 56.0);
    let center = SOURCE_SIZE as f64 / 2.0;
    let pose = SimilarityTransform::new(
        pose_scale,
        rotation,
        (
            center + tx - pose_scale * (cos * cx - sin * cy),
            center + ty - pose_scale * (sin * cx + cos * cy),
        ),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let points: Vec<(f64, f64)> = canonical_landmarks()
        .points()
        .iter()
        .map(|&p| {
            let (x, y) = pose.apply(p);
            (
                x + rng.random_range(-1.0..1.0) * jitter,
                y + rng.random_range(-1.0..1.0) * jitter,
            )
        })
        .collect();
    Landmarks68::new(points).expect("68 finite points")
}

fn to_rgba(img: &image::RgbImage) -> ImageBuffer {
    let mut out = rgba(img.width(), img.height());
    for (i, px) in img.pixels().enumerate() {
        out.pixels[i * 4] = px[0];
        out.pixels[i * 4 + 1] = px[1];
        out.pixels[i * 4 + 2] = px[2];
        out.pixels[i * 4 + 3] = 255;
    }
    out
}

/// Source view: procedural face with its five template correspondences
/// marked.
#[wasm_bindgen]
pub fn render_source_face(
    rotation_deg: f64,
    scale: f64,
    tx: f64,
    ty: f64,
    jitter: f64,
    ex_class: usize,
    seed: u32,
) -> ImageBuffer {
    let lm = posed_landmarks(rotation_deg, scale, tx, ty, jitter, seed);
    let mut img = render_face(SOURCE_SIZE, &lm, ex_class.min(6));
    for (x, y) in five_points_from_68(&lm) {
        mark_cross(&mut img, x, y);
    }
    to_rgba(&img)
}

fn mark_cross(img: &mut image::RgbImage, x: f64, y: f64) {
    let (w, h) = img.dimensions();
    for d in -2i64..=2 {
        for (px, py) in [
            (x.round() as i64 + d, y.round() as i64),
            (x.round() as i64, y.round() as i64 + d),
        ] {
            if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                img.put_pixel(px as u32, py as u32, image::Rgb([255, 40, 40]));
            }
        }
    }
}

/// Aligned 112x112 crop produced by the estimated similarity transform.
#[wasm_bindgen]
pub fn render_aligned_face(
    rotation_deg: f64,
    scale: f64,
    tx: f64,
    ty: f64,
    jitter: f64,
    ex_class: usize,
    seed: u32,
) -> Result<ImageBuffer, String> {
    let lm = posed_landmarks(rotation_deg, scale, tx, ty, jitter, seed);
    let img = render_face(SOURCE_SIZE, &lm, ex_class.min(6));
    let five = five_points_from_68(&lm);
    let (to_template, _) =
        estimate_similarity(&five, &Template5::default().points).map_err(|e| e.to_string())?;
    Ok(to_rgba(&align_face(&img, &to_template.inverse(), (112, 112))))
}

/// Landmark mask rendered into the aligned frame.
#[wasm_bindgen]
pub fn render_aligned_mask(
    rotation_deg: f64,
    scale: f64,
    tx: f64,
    ty: f64,
    jitter: f64,
    thickness: f64,
    seed: u32,
) -> Result<ImageBuffer, String> {
    let lm = posed_landmarks(rotation_deg, scale, tx, ty, jitter, seed);
    let five = five_points_from_68(&lm);
    let (to_template, _) =
        estimate_similarity(&five, &Template5::default().points).map_err(|e| e.to_string())?;
    let spec = MaskSpec {
        thickness: thickness.max(0.5),
        ..MaskSpec::default()
    };
    let mask = render_mask(&lm, &to_template, &spec, (112, 112)).map_err(|e| e.to_string())?;

    let mut out = rgba(112, 112);
    for (i, px) in mask.pixels().enumerate() {
        let v = px[0];
        out.pixels[i * 4] = v;
        out.pixels[i * 4 + 1] = v;
        out.pixels[i * 4 + 2] = v;
        out.pixels[i * 4 + 3] = 255;
    }
    Ok(out)
}

/// Applied pose vs recovered transform, as JSON for the caption.
#[wasm_bindgen]
pub fn alignment_info(
    rotation_deg: f64,
    scale: f64,
    tx: f64,
    ty: f64,
    jitter: f64,
    seed: u32,
) -> Result<String, String> {
    let lm = posed_landmarks(rotation_deg, scale, tx, ty, jitter, seed);
    let five = five_points_from_68(&lm);
    let (to_template, residual) =
        estimate_similarity(&five, &Template5::default().points).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({
        "recovered_scale": to_template.scale,
        "recovered_rotation_deg": to_template.rotation.to_degrees(),
        "recovered_translation": [to_template.translation.0, to_template.translation.1],
        "rms_residual": residual,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subspectrogram_buffer_has_expected_dims() {
        let img = render_subspectrogram(440.0, 1000.0, 45, 1.0).unwrap();
        assert_eq!(img.height, 64);
        assert_eq!(img.width, subspectrogram_rows(1.0));
        assert_eq!(img.pixels.len() as u32, img.width * img.height * 4);
    }

    #[test]
    fn histogram_view_is_opaque_and_square() {
        let img = render_va_histogram(4, 24, 500, 1).unwrap();
        assert_eq!((img.width, img.height), (24, 24));
        assert!(img.pixels.chunks(4).all(|px| px[3] == 255));
    }

    #[test]
    fn soft_labels_normalize_or_error() {
        match soft_label_at(0.7, 0.4, 16, 400, 1) {
            Ok(json) => {
                let v: serde_json::Value = serde_json::from_str(&json).unwrap();
                let sum: f64 = v["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
            Err(e) => panic!("dense corpus should populate the happy bin: {e}"),
        }
        // far corner of the square is empty with few samples
        assert!(soft_label_at(0.999, -0.999, 40, 10, 1).is_err());
    }

    #[test]
    fn pseudo_draws_stay_in_range_and_reproduce() {
        let a = sample_pseudo_labels(4, 20, 300, 1, 9, 50).unwrap();
        let b = sample_pseudo_labels(4, 20, 300, 1, 9, 50).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn filter_verdict_reports_rules() {
        let v: serde_json::Value =
            serde_json::from_str(&filter_verdict(4, -0.5, 0.0)).unwrap();
        assert_eq!(v["excluded"], true);
        assert_eq!(v["rule"], "HappyNegativeValence");
        let v: serde_json::Value = serde_json::from_str(&filter_verdict(4, 0.5, 0.0)).unwrap();
        assert_eq!(v["excluded"], false);
    }

    #[test]
    fn alignment_recovers_the_inverse_pose() {
        let info = alignment_info(15.0, 1.2, 8.0, -5.0, 0.0, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&info).unwrap();
        // the estimated transform undoes the pose: scale is the reciprocal
        // of the applied source scale, rotation its negation
        let applied_scale = 160.0 / 112.0 * 0.7 * 1.2;
        let got = v["recovered_scale"].as_f64().unwrap();
        assert!((got - 1.0 / applied_scale).abs() < 1e-9, "{got}");
        let rot = v["recovered_rotation_deg"].as_f64().unwrap();
        assert!((rot + 15.0).abs() < 1e-9, "{rot}");
        assert!(v["rms_residual"].as_f64().unwrap() < 1e-9);
    }

    #[test]
    fn aligned_views_have_canonical_size() {
        let img = render_aligned_face(10.0, 1.0, 0.0, 0.0, 1.0, 2, 3).unwrap();
        assert_eq!((img.width, img.height), (112, 112));
        let mask = render_aligned_mask(10.0, 1.0, 0.0, 0.0, 1.0, 2.0, 3).unwrap();
        assert_eq!((mask.width, mask.height), (112, 112));
        assert!(mask.pixels.iter().any(|&v| v > 0));
    }
}
