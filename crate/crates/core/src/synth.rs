//! Synthetic corpus generation: annotation files with controlled coverage
//! and injected contradictions, procedural face frames with landmarks, and
//! per-class tone audio. The generator records ground truth (which frames
//! were made contradictory, and how) so pipeline runs can be checked against
//! it exactly.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::annotations::{AnnotationFile, LABEL_ABSENT, NUM_EXPRESSIONS, VA_ABSENT};
use crate::audiodsp::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::geometry::{
    canonical_landmarks, write_landmarks_text, Landmarks68, SimilarityTransform,
};
use crate::labelfusion::FilterRule;

/// Per-class valence/arousal distribution used for label synthesis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassGaussian {
    pub mean_valence: f64,
    pub mean_arousal: f64,
    pub std: f64,
}

/// How many contradictory frames to inject, per rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ContradictionCounts {
    pub happy_neg: usize,
    pub sad_pos: usize,
    pub neutral_highnorm: usize,
    pub invalid: usize,
}

impl ContradictionCounts {
    pub fn total(&self) -> usize {
        self.happy_neg + self.sad_pos + self.neutral_highnorm + self.invalid
    }
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub frames_per_video: usize,
    /// Fraction of frames per video carrying a VA label (written exactly:
    /// round(coverage * frames)).
    pub va_coverage: f64,
    pub ex_coverage: f64,
    pub au_coverage: f64,
    pub au_count: usize,
    pub class_gaussians: Vec<ClassGaussian>,
    pub contradictions: ContradictionCounts,
    /// Source frame edge length in pixels.
    pub image_size: u32,
    /// WAV sample rate; the pipeline resamples, so any positive rate works.
    pub audio_sample_rate: u32,
}

impl Default for SyntheticSpec {
    fn default() -> SyntheticSpec {
        SyntheticSpec {
            n_videos: 10,
            frames_per_video: 100,
            va_coverage: 0.75,
            ex_coverage: 0.59,
            au_coverage: 0.5,
            au_count: 8,
            class_gaussians: vec![
                ClassGaussian { mean_valence: 0.0, mean_arousal: 0.0, std: 0.12 }, // neutral
                ClassGaussian { mean_valence: -0.5, mean_arousal: 0.6, std: 0.15 }, // anger
                ClassGaussian { mean_valence: -0.6, mean_arousal: 0.2, std: 0.15 }, // disgust
                ClassGaussian { mean_valence: -0.4, mean_arousal: 0.7, std: 0.15 }, // fear
                ClassGaussian { mean_valence: 0.7, mean_arousal: 0.4, std: 0.15 }, // happiness
                ClassGaussian { mean_valence: -0.6, mean_arousal: -0.3, std: 0.15 }, // sadness
                ClassGaussian { mean_valence: 0.3, mean_arousal: 0.8, std: 0.12 }, // surprise
            ],
            contradictions: ContradictionCounts::default(),
            image_size: 128,
            audio_sample_rate: 48_000,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("va_coverage", self.va_coverage),
            ("ex_coverage", self.ex_coverage),
            ("au_coverage", self.au_coverage),
        ] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {c}")));
            }
        }
        if self.class_gaussians.len() != NUM_EXPRESSIONS {
            return Err(Error::Config(format!(
                "need {NUM_EXPRESSIONS} class gaussians, got {}",
                self.class_gaussians.len()
            )));
        }
        if self.au_count == 0 {
            return Err(Error::Config("au_count must be >= 1".into()));
        }
        if self.image_size < 32 {
            return Err(Error::Config("image_size must be >= 32".into()));
        }
        if self.audio_sample_rate == 0 {
            return Err(Error::Config("audio_sample_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One injected contradiction and the rule it must trip.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InjectedContradiction {
    pub video_id: String,
    pub frame_index: u32,
    pub rule: FilterRule,
}

/// Labels written to disk, per task (absent markers not counted; invalid
/// injections are).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WrittenCounts {
    pub va: usize,
    pub ex: usize,
    pub au: usize,
}

/// Ground truth the generator emits next to the corpus.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthManifest {
    pub videos: Vec<String>,
    pub frames_per_video: usize,
    /// Labels written, including the injected invalid ones.
    pub written: WrittenCounts,
    /// Labels that survive validation (written minus invalid injections).
    pub valid: WrittenCounts,
    pub contradictions: Vec<InjectedContradiction>,
}

struct FramePlan {
    class: usize,
    valence: f64,
    arousal: f64,
    has_va: bool,
    has_ex: bool,
    has_au: bool,
    au_bits: Vec<i64>,
    /// Raw file overrides for injected contradictions.
    forced_va: Option<(f64, f64)>,
    forced_ex: Option<i64>,
}

/// Generate a corpus on disk and return its ground-truth manifest.
///
/// Layout under `out_dir`: `manifest.json`, `annotations/{va,ex,au}/<video>.csv`,
/// `landmarks/<video>/<frame>.csv`, `frames/<video>/<frame>.png`,
/// `audio/<video>.wav`.
pub fn synth_dataset(
    spec: &SyntheticSpec,
    out_dir: &Path,
    rng: &mut impl Rng,
) -> Result<SynthManifest> {
    spec.validate()?;
    let manifest_path = out_dir.join("manifest.json");
    if manifest_path.exists() {
        return Err(Error::Config(format!(
            "output collision: {} already exists",
            manifest_path.display()
        )));
    }
    for sub in [
        "annotations/va",
        "annotations/ex",
        "annotations/au",
        "landmarks",
        "frames",
        "audio",
    ] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let n = spec.frames_per_video;
    let mut manifest = SynthManifest {
        videos: (0..spec.n_videos).map(|v| format!("video{v:03}")).collect(),
        frames_per_video: n,
        ..SynthManifest::default()
    };

    let mut plans: Vec<Vec<FramePlan>> = Vec::with_capacity(spec.n_videos);
    for v in 0..spec.n_videos {
        plans.push(plan_video(spec, v, rng));
    }

    inject_contradictions(spec, &mut plans, &mut manifest, rng)?;

    for (v, video_id) in manifest.videos.clone().iter().enumerate() {
        let plan = &plans[v];
        write_annotations(spec, out_dir, video_id, plan, &mut manifest)?;
        write_frames_and_landmarks(spec, out_dir, video_id, plan, rng)?;
        write_audio(spec, out_dir, video_id, plan)?;
    }

    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Latent class sequence: runs of 5 frames cycling through the 7 classes,
/// offset per video.
fn latent_class(video: usize, frame: usize) -> usize {
    (frame / 5 + video) % NUM_EXPRESSIONS
}

fn plan_video(spec: &SyntheticSpec, video: usize, rng: &mut impl Rng) -> Vec<FramePlan> {
    let n = spec.frames_per_video;
    let n_va = (spec.va_coverage * n as f64).round() as usize;
    let n_ex = (spec.ex_coverage * n as f64).round() as usize;
    let n_au = (spec.au_coverage * n as f64).round() as usize;
    // independent-coverage overlap, clamped so every label fits: the
    // va-only + ex-only + both groups may not exceed n frames
    let n_both = ((spec.va_coverage * spec.ex_coverage) * n as f64).round() as usize;
    let n_both = n_both
        .max((n_va + n_ex).saturating_sub(n))
        .min(n_va)
        .min(n_ex);

    // shuffled frame order with one representative of every class moved to
    // the front, so each class present in the corpus also appears in the
    // both-labeled set (keeps per-class histograms nonempty)
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut front = Vec::new();
    for class in 0..NUM_EXPRESSIONS {
        if let Some(pos) = order.iter().position(|&f| latent_class(video, f) == class) {
            front.push(order.remove(pos));
        }
    }
    front.append(&mut order);
    let order = front;

    let mut has_va = vec![false; n];
    let mut has_ex = vec![false; n];
    let mut has_au = vec![false; n];
    for (rank, &frame) in order.iter().enumerate() {
        if rank < n_both {
            has_va[frame] = true;
            has_ex[frame] = true;
        } else if rank < n_va {
            has_va[frame] = true;
        } else if rank < n_va + (n_ex - n_both) {
            has_ex[frame] = true;
        }
    }
    // AU labels are independent of the VA/EX split
    let mut au_order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        au_order.swap(i, rng.random_range(0..=i));
    }
    for &frame in au_order.iter().take(n_au) {
        has_au[frame] = true;
    }

    (0..n)
        .map(|frame| {
            let class = latent_class(video, frame);
            let g = spec.class_gaussians[class];
            let (valence, arousal) = consistent_va(class, g, rng);
            let au_bits = (0..spec.au_count)
                .map(|k| {
                    let p = 0.15 + 0.1 * ((class + k) % 3) as f64;
                    (rng.random::<f64>() < p) as i64
                })
                .collect();
            FramePlan {
                class,
                valence,
                arousal,
                has_va: has_va[frame],
                has_ex: has_ex[frame],
                has_au: has_au[frame],
                au_bits,
                forced_va: None,
                forced_ex: None,
            }
        })
        .collect()
}

/// Draw a VA pair from the class Gaussian, then nudge it so no
/// contradiction rule fires on an honest frame.
fn consistent_va(class: usize, g: ClassGaussian, rng: &mut impl Rng) -> (f64, f64) {
    use rand_distr::{Distribution, Normal};
    let nv = Normal::new(g.mean_valence, g.std).expect("std is finite");
    let na = Normal::new(g.mean_arousal, g.std).expect("std is finite");
    let mut v: f64 = nv.sample(rng).clamp(-1.0, 1.0);
    let mut a: f64 = na.sample(rng).clamp(-1.0, 1.0);
    match class {
        4 => v = v.abs().clamp(0.05, 1.0),      // happiness needs v >= 0
        5 => v = (-v.abs()).clamp(-1.0, -0.05), // sadness needs v <= 0
        0 => {
            // neutral needs norm <= 0.5; shrink toward the origin
            let norm = (v * v + a * a).sqrt();
            if norm > 0.45 {
                let s = 0.45 / norm;
                v *= s;
                a *= s;
            }
        }
        _ => {}
    }
    (v, a)
}

fn inject_contradictions(
    spec: &SyntheticSpec,
    plans: &mut [Vec<FramePlan>],
    manifest: &mut SynthManifest,
    rng: &mut impl Rng,
) -> Result<()> {
    let total = spec.contradictions.total();
    if total == 0 {
        return Ok(());
    }

    // eligible: both-labeled frames, minus the first both-labeled frame of
    // every class per video (those keep the class histograms populated)
    let mut eligible: Vec<(usize, usize)> = Vec::new();
    for (v, plan) in plans.iter().enumerate() {
        let mut seen = [false; NUM_EXPRESSIONS];
        for (f, fp) in plan.iter().enumerate() {
            if fp.has_va && fp.has_ex {
                if !seen[fp.class] {
                    seen[fp.class] = true;
                } else {
                    eligible.push((v, f));
                }
            }
        }
    }
    if eligible.len() < total {
        return Err(Error::Config(format!(
            "cannot inject {total} contradictions: only {} eligible frames",
            eligible.len()
        )));
    }
    for i in (1..eligible.len()).rev() {
        eligible.swap(i, rng.random_range(0..=i));
    }

    let mut queue = eligible.into_iter();
    let rules = [
        (spec.contradictions.happy_neg, FilterRule::HappyNegativeValence),
        (spec.contradictions.sad_pos, FilterRule::SadPositiveValence),
        (spec.contradictions.neutral_highnorm, FilterRule::NeutralHighNorm),
        (spec.contradictions.invalid, FilterRule::InvalidLabel),
    ];
    for (count, rule) in rules {
        for _ in 0..count {
            let (v, f) = queue.next().expect("eligibility checked above");
            let fp = &mut plans[v][f];
            match rule {
                FilterRule::HappyNegativeValence => {
                    fp.forced_ex = Some(4);
                    fp.forced_va = Some((-(0.1 + 0.8 * rng.random::<f64>()), fp.arousal));
                }
                FilterRule::SadPositiveValence => {
                    fp.forced_ex = Some(5);
                    fp.forced_va = Some((0.1 + 0.8 * rng.random::<f64>(), fp.arousal));
                }
                FilterRule::NeutralHighNorm => {
                    let angle = rng.random::<f64>() * std::f64::consts::TAU;
                    let radius = 0.6 + 0.3 * rng.random::<f64>();
                    fp.forced_ex = Some(0);
                    fp.forced_va = Some((
                        (radius * angle.cos()).clamp(-0.95, 0.95),
                        (radius * angle.sin()).clamp(-0.95, 0.95),
                    ));
                }
                FilterRule::InvalidLabel => {
                    // alternate between an out-of-range VA and an
                    // out-of-range EX so both flavors appear
                    if manifest.contradictions.len() % 2 == 0 {
                        fp.forced_va = Some((3.0, fp.arousal));
                    } else {
                        fp.forced_ex = Some(9);
                    }
                }
            }
            manifest.contradictions.push(InjectedContradiction {
                video_id: format!("video{v:03}"),
                frame_index: f as u32,
                rule,
            });
        }
    }

    manifest
        .contradictions
        .sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
    Ok(())
}

fn write_annotations(
    spec: &SyntheticSpec,
    out_dir: &Path,
    video_id: &str,
    plan: &[FramePlan],
    manifest: &mut SynthManifest,
) -> Result<()> {
    let mut va_rows = Vec::with_capacity(plan.len());
    let mut ex_rows = Vec::with_capacity(plan.len());
    let mut au_rows = Vec::with_capacity(plan.len());

    for fp in plan {
        let va = if fp.has_va {
            let (v, a) = fp.forced_va.unwrap_or((fp.valence, fp.arousal));
            manifest.written.va += 1;
            if v.abs() <= 1.0 && a.abs() <= 1.0 {
                manifest.valid.va += 1;
            }
            // fixed precision keeps annotation files compact and diffable
            (round4(v), round4(a))
        } else {
            (VA_ABSENT, VA_ABSENT)
        };
        va_rows.push(va);

        let ex = if fp.has_ex {
            let e = fp.forced_ex.unwrap_or(fp.class as i64);
            manifest.written.ex += 1;
            if (0..NUM_EXPRESSIONS as i64).contains(&e) {
                manifest.valid.ex += 1;
            }
            e
        } else {
            LABEL_ABSENT
        };
        ex_rows.push(ex);

        let au = if fp.has_au {
            manifest.written.au += 1;
            manifest.valid.au += 1;
            fp.au_bits.clone()
        } else {
            vec![LABEL_ABSENT; spec.au_count]
        };
        au_rows.push(au);
    }

    let files = [
        ("va", crate::annotations::write_annotation_text(&AnnotationFile::Va(va_rows))),
        ("ex", crate::annotations::write_annotation_text(&AnnotationFile::Ex(ex_rows))),
        ("au", crate::annotations::write_annotation_text(&AnnotationFile::Au(au_rows))),
    ];
    for (kind, text) in files {
        let path = out_dir.join(format!("annotations/{kind}/{video_id}.csv"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

/// Head pose animation for a frame: gentle scale/rotation/translation drift.
fn frame_pose(spec: &SyntheticSpec, video: usize, frame: usize) -> SimilarityTransform {
    let s = spec.image_size as f64;
    let phase = frame as f64 / 30.0 + video as f64;
    let scale = s / 112.0 * (0.78 + 0.04 * (phase * 0.9).sin());
    let rotation = 0.08 * (phase * 1.3 + video as f64).sin();
    // keep the face centered: map the 112-frame center to the image center
    let (sin, cos) = rotation.sin_cos();
    let (cx, cy) = (56.0, 56.0);
    let tx = s / 2.0 + 2.0 * (phase * 0.7).cos() - scale * (cos * cx - sin * cy);
    let ty = s / 2.0 + 2.0 * (phase * 1.1).sin() - scale * (sin * cx + cos * cy);
    SimilarityTransform::new(scale, rotation, (tx, ty))
}

fn write_frames_and_landmarks(
    spec: &SyntheticSpec,
    out_dir: &Path,
    video_id: &str,
    plan: &[FramePlan],
    rng: &mut impl Rng,
) -> Result<()> {
    let lm_dir = out_dir.join("landmarks").join(video_id);
    let frame_dir = out_dir.join("frames").join(video_id);
    std::fs::create_dir_all(&lm_dir).map_err(|e| Error::io(&lm_dir, e))?;
    std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;

    let canonical = canonical_landmarks();
    let video: usize = video_id.trim_start_matches("video").parse().unwrap_or(0);
    for (frame, fp) in plan.iter().enumerate() {
        let pose = frame_pose(spec, video, frame);
        let jittered: Vec<(f64, f64)> = canonical
            .points()
            .iter()
            .map(|&p| {
                let (x, y) = pose.apply(p);
                (
                    x + rng.random_range(-0.3..0.3),
                    y + rng.random_range(-0.3..0.3),
                )
            })
            .collect();
        let lm = Landmarks68::new(jittered)?;

        let lm_path = lm_dir.join(format!("{frame:06}.csv"));
        std::fs::write(&lm_path, write_landmarks_text(&lm)).map_err(|e| Error::io(&lm_path, e))?;

        let image = render_face(spec.image_size, &lm, fp.class);
        let png_path = frame_dir.join(format!("{frame:06}.png"));
        image.save(&png_path)?;
    }
    Ok(())
}

/// Procedural face: filled head ellipse from the jaw extent plus dark
/// feature strokes, tinted by expression class.
pub fn render_face(size: u32, lm: &Landmarks68, class: usize) -> RgbImage {
    let jaw: Vec<(f64, f64)> = (0..17).map(|i| lm.point(i)).collect();
    let min_x = jaw.iter().map(|p| p.0).fold(f64::MAX, f64::min);
    let max_x = jaw.iter().map(|p| p.0).fold(f64::MIN, f64::max);
    let min_y = lm.points()[17..27].iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let max_y = jaw.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let (rx, ry) = ((max_x - min_x) / 2.0 + 4.0, (max_y - min_y) / 2.0 + 10.0);

    let tint = [
        (200u8, 186u8, 170u8),
        (205, 170, 160),
        (190, 186, 160),
        (185, 175, 180),
        (215, 190, 170),
        (180, 175, 175),
        (210, 185, 180),
    ][class % NUM_EXPRESSIONS];

    let mut img = RgbImage::from_fn(size, size, |x, y| {
        let g = 40 + ((x + y) % 32) as u8; // background texture
        Rgb([g / 2, g / 2, g])
    });
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 - cx) / rx.max(1.0);
            let dy = (y as f64 - cy) / ry.max(1.0);
            if dx * dx + dy * dy <= 1.0 {
                img.put_pixel(x, y, Rgb([tint.0, tint.1, tint.2]));
            }
        }
    }

    // feature strokes drawn directly in source coordinates
    let spec = crate::geometry::MaskSpec::default();
    if let Ok(strokes) =
        crate::geometry::render_mask(lm, &SimilarityTransform::IDENTITY, &spec, (size, size))
    {
        for (x, y, px) in img.enumerate_pixels_mut() {
            let s = strokes.get_pixel(x, y)[0] as u32;
            if s > 0 {
                let blend = |c: u8| ((c as u32 * (255 - s) + 30 * s) / 255) as u8;
                *px = Rgb([blend(px[0]), blend(px[1]), blend(px[2])]);
            }
        }
    }
    img
}

fn write_audio(
    spec: &SyntheticSpec,
    out_dir: &Path,
    video_id: &str,
    plan: &[FramePlan],
) -> Result<()> {
    let rate = spec.audio_sample_rate;
    let total = (plan.len() as f64 / 30.0 * rate as f64).round() as usize;
    let mut samples = Vec::with_capacity(total);
    let mut phase = 0.0f64;
    for i in 0..total {
        let t = i as f64 / rate as f64;
        let frame = ((t * 30.0) as usize).min(plan.len().saturating_sub(1));
        let class = plan.get(frame).map_or(0, |fp| fp.class);
        let freq = 220.0 + 60.0 * class as f64;
        phase += std::f64::consts::TAU * freq / rate as f64;
        // deterministic low-level dither keeps the spectrum from being a
        // pure line without pulling in a random source
        let dither = 0.01 * ((i as f64 * 12.9898).sin() * 43758.5453).fract();
        samples.push(0.4 * phase.sin() + 0.1 * (2.0 * phase).sin() + dither);
    }
    let path = audio_path(out_dir, video_id);
    write_wav(&path, &Waveform::new(samples, rate))
}

pub fn audio_path(corpus: &Path, video_id: &str) -> PathBuf {
    corpus.join("audio").join(format!("{video_id}.wav"))
}
