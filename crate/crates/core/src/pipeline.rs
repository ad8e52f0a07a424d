//! The end-to-end deterministic run: parse, validate, filter, histogram,
//! pseudo-label, preprocess audio and video, forward with fixture weights,
//! evaluate, and write every artifact plus a JSON report. Each stage is also
//! exposed on its own so the command line can exercise the parts separately.
//!
//! Determinism contract: a fixed seed fixes the pseudo-label draws and the
//! fixture weights; per-video work is independent, results are merged in
//! video-id order, and all artifacts are written atomically, so identical
//! seeds yield byte-identical output trees regardless of the worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annotations::{
    build_dataset_index, parse_annotation_file, records_from_files, AnnotationKind, DatasetIndex,
    FrameRecord, TaskCounts, NUM_EXPRESSIONS,
};
use crate::audiodsp::{
    extract_subspectrogram, mel_spectrogram, read_wav, resample, write_mels, MelConfig,
    MelSpectrogram,
};
use crate::clipper::{augment_clip, sample_clip, write_clip, ClipConfig, FrameStore};
use crate::error::{Error, Result};
use crate::fsutil::{write_file_atomic, write_file_atomic_mkdirs};
use crate::geometry::{
    align_face, estimate_similarity, five_points_from_68, read_landmarks, render_mask, MaskSpec,
    Template5,
};
use crate::labelfusion::{
    apply_pseudo_policy, build_va_histograms, filter_index, FilterReport, PseudoPolicy,
    VaHistogramSet,
};
use crate::metrics::{evaluate_predictions, targets_from_records, BatchPredictions, EvalReport};
use crate::netkernels::{
    generate_fixture_weights, load_weights, save_weights, two_stream_forward, TwoStreamConfig,
    WeightStore,
};

/// Everything a full run needs. Paths name the corpus and the output tree;
/// the rest selects stage behavior. A fixed seed makes the run byte-exact.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads for per-video stages (1 = sequential).
    pub jobs: usize,
    pub filter: bool,
    pub pseudo: PseudoPolicy,
    /// Histogram bins per axis.
    pub bins: usize,
    pub mel: MelConfig,
    pub clip: ClipConfig,
    pub net: TwoStreamConfig,
    /// Sub-spectrogram window length in seconds.
    pub subspec_window_secs: f64,
    /// Forward inference runs on every `forward_stride`-th frame.
    pub forward_stride: usize,
    pub mask_thickness: f64,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            corpus: PathBuf::new(),
            out: PathBuf::new(),
            seed: 0,
            jobs: 1,
            filter: true,
            pseudo: PseudoPolicy::ValenceOnly,
            bins: VaHistogramSet::DEFAULT_BINS,
            mel: MelConfig::default(),
            clip: ClipConfig::default(),
            net: TwoStreamConfig::default(),
            subspec_window_secs: 10.0,
            forward_stride: 25,
            mask_thickness: 2.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.corpus.as_os_str().is_empty() {
            return Err(Error::Config("corpus path is required".into()));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("out path is required".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be >= 1".into()));
        }
        if self.forward_stride == 0 {
            return Err(Error::Config("forward_stride must be >= 1".into()));
        }
        if self.subspec_window_secs <= 0.0 {
            return Err(Error::Config("subspec_window_secs must be positive".into()));
        }
        if self.mask_thickness <= 0.0 {
            return Err(Error::Config("mask_thickness must be positive".into()));
        }
        self.mel.validate()?;
        self.clip.validate()?;
        self.net.validate()?;
        Ok(())
    }

    /// Load from a JSON file.
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Seed stream for the pseudo-label draws (the base stream feeds weights).
const STREAM_PSEUDO: u64 = 1;
/// Seed stream for clip augmentation in the standalone clips stage.
const STREAM_AUGMENT: u64 = 2;

/// Config echo embedded in the report; paths and worker counts are execution
/// details and stay out so equal-seed runs compare byte-identical.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct ConfigEcho {
    seed: u64,
    filter: bool,
    pseudo: PseudoPolicy,
    bins: usize,
    mel: MelConfig,
    clip: ClipConfig,
    net: TwoStreamConfig,
    subspec_window_secs: f64,
    forward_stride: usize,
    mask_thickness: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VideoSummary {
    pub id: String,
    pub frames: usize,
    pub anchors: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PseudoCounts {
    pub valence: usize,
    pub arousal: usize,
    pub soft_ex: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ArtifactCounts {
    pub spectrograms: usize,
    pub aligned_frames: usize,
    pub masks: usize,
    pub clips: usize,
}

/// Summary of one full run, serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    config: ConfigEcho,
    pub videos: Vec<VideoSummary>,
    pub total_frames: usize,
    pub label_counts: TaskCounts,
    pub filter: FilterReport,
    pub histogram_totals: Vec<u64>,
    pub pseudo: PseudoCounts,
    pub artifacts: ArtifactCounts,
    pub eval: EvalReport,
}

struct VideoOutput {
    id: String,
    frames: usize,
    anchors: Vec<u32>,
    predictions: Vec<(u32, Vec<f64>)>,
    artifacts: ArtifactCounts,
}

/// Video ids discovered from the corpus layout (annotation file stems, with
/// the frames directory as fallback for label-free corpora).
pub fn discover_videos(corpus: &Path) -> Result<Vec<String>> {
    if !corpus.is_dir() {
        return Err(Error::Config(format!(
            "corpus directory {} does not exist",
            corpus.display()
        )));
    }
    let mut ids = std::collections::BTreeSet::new();
    for kind in ["va", "ex", "au"] {
        let dir = corpus.join("annotations").join(kind);
        let entries = match std::fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(_) => continue, // a corpus may omit a whole task
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "csv") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.insert(stem.to_string());
                }
            }
        }
    }
    if ids.is_empty() {
        if let Ok(entries) = std::fs::read_dir(corpus.join("frames")) {
            for entry in entries.flatten() {
                if entry.path().is_dir() {
                    if let Some(name) = entry.file_name().to_str() {
                        ids.insert(name.to_string());
                    }
                }
            }
        }
    }
    Ok(ids.into_iter().collect())
}

/// Parse and validate every video's annotation files into a dataset index.
pub fn load_corpus_index(corpus: &Path) -> Result<DatasetIndex> {
    let videos = discover_videos(corpus)?;
    let mut records = Vec::new();
    for id in &videos {
        records.extend(load_video_records(corpus, id)?);
    }
    build_dataset_index(records)
}

fn load_video_records(corpus: &Path, video_id: &str) -> Result<Vec<FrameRecord>> {
    let read = |kind: AnnotationKind| -> Result<Option<crate::annotations::AnnotationFile>> {
        let path = corpus
            .join("annotations")
            .join(kind.dir_name())
            .join(format!("{video_id}.csv"));
        if path.exists() {
            parse_annotation_file(&path, kind).map(Some)
        } else {
            Ok(None)
        }
    };
    let va = read(AnnotationKind::Va)?;
    let ex = read(AnnotationKind::Ex)?;
    let au = read(AnnotationKind::Au)?;
    records_from_files(video_id, va.as_ref(), ex.as_ref(), au.as_ref())
}

/// Frames on disk for one video, in index order.
fn video_frame_count(corpus: &Path, video_id: &str) -> Result<usize> {
    let dir = corpus.join("frames").join(video_id);
    let mut count = 0usize;
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        if entry.path().extension().is_some_and(|e| e == "png") {
            count += 1;
        }
    }
    Ok(count)
}

/// Forward anchors for a video of `n` frames: every `stride`-th frame,
/// anchored at the end of each window; short videos keep their last frame.
pub fn forward_anchors(n: usize, stride: usize) -> Vec<u32> {
    let mut anchors: Vec<u32> = (0..n)
        .filter(|t| t % stride == stride - 1)
        .map(|t| t as u32)
        .collect();
    if anchors.is_empty() && n > 0 {
        anchors.push(n as u32 - 1);
    }
    anchors
}

/// Summary returned by the standalone labels stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelsSummary {
    pub label_counts: TaskCounts,
    pub total_frames: usize,
    pub filter: FilterReport,
    pub histogram_totals: Vec<u64>,
    pub pseudo: PseudoCounts,
}

/// Labels-only run: parse, validate, filter, histogram, pseudo-label; writes
/// the label artifacts and histogram exports. Returns the processed index
/// with the histogram set for callers that keep going.
pub fn run_labels_stage(
    corpus: &Path,
    out: &Path,
    filter: bool,
    pseudo: PseudoPolicy,
    bins: usize,
    seed: u64,
) -> Result<(DatasetIndex, VaHistogramSet, LabelsSummary)> {
    for sub in ["labels", "histograms"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let index =
        load_corpus_index(corpus).map_err(|e| e.in_stage("parse", corpus.display().to_string()))?;
    let label_counts = index.counts();

    let (index, filter_report) = if filter {
        filter_index(&index).map_err(|e| e.in_stage("filter", "corpus"))?
    } else {
        (
            index.clone(),
            FilterReport {
                kept: index.total_records(),
                ..FilterReport::default()
            },
        )
    };

    let hist =
        build_va_histograms(&index, bins).map_err(|e| e.in_stage("histograms", "corpus"))?;
    export_histograms(out, &hist)?;

    let mut pseudo_rng = ChaCha8Rng::seed_from_u64(seed);
    pseudo_rng.set_stream(STREAM_PSEUDO);
    let index = apply_pseudo_policy(&index, &hist, pseudo, &mut pseudo_rng)
        .map_err(|e| e.in_stage("pseudo", "corpus"))?;

    let pseudo_counts = PseudoCounts {
        valence: index.records().filter(|r| r.pseudo_valence.is_some()).count(),
        arousal: index.records().filter(|r| r.pseudo_arousal.is_some()).count(),
        soft_ex: index.records().filter(|r| r.soft_ex.is_some()).count(),
    };
    write_label_artifacts(out, &index, &filter_report, label_counts, pseudo_counts)?;

    let summary = LabelsSummary {
        label_counts,
        total_frames: index.total_records(),
        filter: filter_report,
        histogram_totals: hist.totals().to_vec(),
        pseudo: pseudo_counts,
    };
    Ok((index, hist, summary))
}

/// Compute the mel spectrogram of one video's audio track (resampling to
/// the configured rate first).
pub fn video_spectrogram(corpus: &Path, mel: &MelConfig, video_id: &str) -> Result<MelSpectrogram> {
    let wave = read_wav(&crate::synth::audio_path(corpus, video_id))?;
    let wave = resample(&wave, mel.sample_rate)?;
    mel_spectrogram(&wave, mel)
}

/// Audio-only stage: spectrogram per video, written as `.mels` (and
/// optionally CSV). Returns the number of spectrograms written.
pub fn run_audio_stage(corpus: &Path, out: &Path, mel: &MelConfig, csv: bool) -> Result<usize> {
    mel.validate()?;
    let dir = out.join("spectrograms");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = 0;
    for id in discover_videos(corpus)? {
        let spec =
            video_spectrogram(corpus, mel, &id).map_err(|e| e.in_stage("audio", id.clone()))?;
        write_mels(&dir.join(format!("{id}.mels")), &spec)?;
        if csv {
            write_file_atomic(&dir.join(format!("{id}.csv")), spec.to_csv().as_bytes())?;
        }
        written += 1;
    }
    Ok(written)
}

/// Align one video's frames and render their masks, optionally writing the
/// results under `write_to` (aligned/ and masks/). Returns the frame store.
pub fn build_frame_store(
    corpus: &Path,
    video_id: &str,
    out_size: (u32, u32),
    mask_thickness: f64,
    expected_frames: Option<usize>,
    write_to: Option<&Path>,
) -> Result<FrameStore> {
    let n = video_frame_count(corpus, video_id)?;
    if let Some(expected) = expected_frames {
        if n != expected {
            return Err(Error::Index(format!(
                "video '{video_id}' has {n} frames on disk but {expected} annotation rows"
            )));
        }
    }

    let template = Template5::default();
    let mask_spec = MaskSpec {
        thickness: mask_thickness,
        ..MaskSpec::default()
    };
    let mut store = FrameStore::new();
    for frame in 0..n {
        let lm_path = corpus
            .join("landmarks")
            .join(video_id)
            .join(format!("{frame:06}.csv"));
        let lm = read_landmarks(&lm_path)?;

        let img_path = corpus
            .join("frames")
            .join(video_id)
            .join(format!("{frame:06}.png"));
        let img = image::open(&img_path)?.to_rgb8();

        let five = five_points_from_68(&lm);
        let (to_template, _residual) = estimate_similarity(&five, &template.points)?;
        let aligned = align_face(&img, &to_template.inverse(), out_size);
        let mask = render_mask(&lm, &to_template, &mask_spec, out_size)?;

        if let Some(out) = write_to {
            write_png_atomic(&out.join(format!("aligned/{video_id}/{frame:06}.png")), &aligned)?;
            write_pgm_atomic(&out.join(format!("masks/{video_id}/{frame:06}.pgm")), &mask)?;
        }
        store.push(aligned, mask)?;
    }
    Ok(store)
}

/// Align-only stage over the whole corpus. Returns aligned frame count.
pub fn run_align_stage(
    corpus: &Path,
    out: &Path,
    out_size: (u32, u32),
    mask_thickness: f64,
) -> Result<usize> {
    let mut frames = 0;
    for id in discover_videos(corpus)? {
        let store = build_frame_store(corpus, &id, out_size, mask_thickness, None, Some(out))
            .map_err(|e| e.in_stage("align", id.clone()))?;
        frames += store.len();
    }
    Ok(frames)
}

/// Clips-only stage: sample (optionally augmented) clips at the forward
/// anchors of every video. Returns the clip count.
pub fn run_clips_stage(
    corpus: &Path,
    out: &Path,
    clip_cfg: &ClipConfig,
    stride: usize,
    mask_thickness: f64,
    augment_seed: Option<u64>,
) -> Result<usize> {
    clip_cfg.validate()?;
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let mut written = 0;
    for id in discover_videos(corpus)? {
        let store = build_frame_store(
            corpus,
            &id,
            (clip_cfg.width, clip_cfg.height),
            mask_thickness,
            None,
            None,
        )
        .map_err(|e| e.in_stage("align", id.clone()))?;
        for t in forward_anchors(store.len(), stride) {
            let mut clip = sample_clip(&store, t as usize, clip_cfg)
                .map_err(|e| e.in_stage("clips", format!("{id}@{t}")))?;
            if let Some(seed) = augment_seed {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64) ^ hash_id(&id));
                rng.set_stream(STREAM_AUGMENT);
                clip = augment_clip(&clip, &mut rng);
            }
            write_clip_with_sidecar(out, &id, t, &clip, clip_cfg)?;
            written += 1;
        }
    }
    Ok(written)
}

fn hash_id(id: &str) -> u64 {
    // FNV-1a; stable across runs and platforms
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn write_clip_with_sidecar(
    out: &Path,
    video_id: &str,
    t: u32,
    clip: &crate::clipper::Clip,
    clip_cfg: &ClipConfig,
) -> Result<()> {
    let clip_path = out.join(format!("clips/{video_id}/{t:06}.clp4"));
    if let Some(parent) = clip_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_clip(&clip_path, clip)?;
    let sidecar = serde_json::json!({
        "video_id": video_id,
        "anchor": t,
        "config": clip_cfg,
    });
    write_file_atomic(
        &clip_path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )
}

/// Forward-only stage: preprocess in memory, run the two-stream model at the
/// anchors and write `predictions.csv`. Weights come from the manifest pair
/// when given, otherwise from the seeded fixture generator.
pub fn run_forward_stage(
    config: &PipelineConfig,
    weight_files: Option<(&Path, &Path)>,
) -> Result<usize> {
    config.validate()?;
    let weights = match weight_files {
        Some((json, blob)) => load_weights(json, blob)?,
        None => generate_fixture_weights(&config.net, config.seed)?,
    };
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;

    let mut outputs = Vec::new();
    for id in discover_videos(&config.corpus)? {
        let spec = video_spectrogram(&config.corpus, &config.mel, &id)
            .map_err(|e| e.in_stage("audio", id.clone()))?;
        let store = build_frame_store(
            &config.corpus,
            &id,
            (config.clip.width, config.clip.height),
            config.mask_thickness,
            None,
            None,
        )
        .map_err(|e| e.in_stage("align", id.clone()))?;
        let anchors = forward_anchors(store.len(), config.forward_stride);
        let mut predictions = Vec::new();
        for &t in &anchors {
            let clip = sample_clip(&store, t as usize, &config.clip)
                .map_err(|e| e.in_stage("clips", format!("{id}@{t}")))?;
            let sub =
                extract_subspectrogram(&spec, t, config.clip.fps, config.subspec_window_secs)
                    .map_err(|e| e.in_stage("forward", format!("{id}@{t}")))?;
            let row = two_stream_forward(&clip, &sub, &config.net, &weights)
                .map_err(|e| e.in_stage("forward", format!("{id}@{t}")))?;
            predictions.push((t, row));
        }
        outputs.push(VideoOutput {
            id,
            frames: store.len(),
            anchors,
            predictions,
            artifacts: ArtifactCounts::default(),
        });
    }
    outputs.sort_by(|a, b| a.id.cmp(&b.id));
    let total: usize = outputs.iter().map(|o| o.predictions.len()).sum();
    write_predictions_csv(&config.out.join("predictions.csv"), &outputs, config.net.au_count)?;
    Ok(total)
}

/// Run the full pipeline. See the module docs for the stage order.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let out = &config.out;
    if out.join("report.json").exists() {
        return Err(Error::Config(format!(
            "output collision: {} already exists",
            out.join("report.json").display()
        )));
    }
    for sub in ["spectrograms", "aligned", "masks", "clips", "weights"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let (index, _hist, labels_summary) = run_labels_stage(
        &config.corpus,
        out,
        config.filter,
        config.pseudo,
        config.bins,
        config.seed,
    )?;

    let weights = generate_fixture_weights(&config.net, config.seed)
        .map_err(|e| e.in_stage("weights", "fixture"))?;
    save_weights(
        &out.join("weights/fixture.json"),
        &out.join("weights/fixture.bin"),
        &weights,
    )?;

    // per-video heavy stages
    let video_refs: Vec<(&str, &[FrameRecord])> = index.videos().collect();
    let jobs = config.jobs.max(1).min(video_refs.len().max(1));
    let mut outputs: Vec<VideoOutput> = if jobs <= 1 {
        video_refs
            .iter()
            .map(|(id, records)| process_video(config, &weights, id, records))
            .collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<VideoOutput>>> =
            (0..video_refs.len()).map(|_| None).collect();
        let slot_refs: Vec<_> = slots.iter_mut().collect();
        std::thread::scope(|scope| {
            for chunk in distribute(slot_refs, jobs) {
                let video_refs = &video_refs;
                let weights = &weights;
                scope.spawn(move || {
                    for (index_in_list, slot) in chunk {
                        let (id, records) = video_refs[index_in_list];
                        *slot = Some(process_video(config, weights, id, records));
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.expect("every slot filled"))
            .collect::<Result<_>>()?
    };
    outputs.sort_by(|a, b| a.id.cmp(&b.id));

    // evaluation over anchor frames, in (video, frame) order
    let mut rows = Vec::new();
    let mut anchor_records: Vec<&FrameRecord> = Vec::new();
    for output in &outputs {
        let records = index.video(&output.id).expect("video ids come from the index");
        for (t, row) in &output.predictions {
            rows.push(row.clone());
            anchor_records.push(&records[*t as usize]);
        }
    }
    let eval = if rows.is_empty() {
        EvalReport {
            per_class_f1: vec![0.0; NUM_EXPRESSIONS],
            ..EvalReport::default()
        }
    } else {
        let preds = BatchPredictions::from_rows(&rows, config.net.au_count)
            .map_err(|e| e.in_stage("eval", "predictions"))?;
        let blank = blank_record();
        // excluded frames still get predictions but never count as truth
        let targets = targets_from_records(
            anchor_records
                .iter()
                .map(|r| if r.excluded { &blank } else { *r }),
        );
        evaluate_predictions(&preds, &targets).map_err(|e| e.in_stage("eval", "batch"))?
    };

    write_predictions_csv(&out.join("predictions.csv"), &outputs, config.net.au_count)?;
    write_file_atomic(
        &out.join("eval.json"),
        serde_json::to_string_pretty(&eval)?.as_bytes(),
    )?;

    let report = RunReport {
        config: ConfigEcho {
            seed: config.seed,
            filter: config.filter,
            pseudo: config.pseudo,
            bins: config.bins,
            mel: config.mel,
            clip: config.clip,
            net: config.net,
            subspec_window_secs: config.subspec_window_secs,
            forward_stride: config.forward_stride,
            mask_thickness: config.mask_thickness,
        },
        videos: outputs
            .iter()
            .map(|o| VideoSummary {
                id: o.id.clone(),
                frames: o.frames,
                anchors: o.anchors.clone(),
            })
            .collect(),
        total_frames: labels_summary.total_frames,
        label_counts: labels_summary.label_counts,
        filter: labels_summary.filter,
        histogram_totals: labels_summary.histogram_totals.clone(),
        pseudo: labels_summary.pseudo,
        artifacts: outputs.iter().fold(ArtifactCounts::default(), |mut acc, o| {
            acc.spectrograms += o.artifacts.spectrograms;
            acc.aligned_frames += o.artifacts.aligned_frames;
            acc.masks += o.artifacts.masks;
            acc.clips += o.artifacts.clips;
            acc
        }),
        eval,
    };
    write_file_atomic(
        &out.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(report)
}

fn blank_record() -> FrameRecord {
    FrameRecord {
        video_id: String::new(),
        frame_index: 0,
        va: None,
        ex: None,
        au: None,
        soft_ex: None,
        pseudo_valence: None,
        pseudo_arousal: None,
        raw_invalid_va: false,
        raw_invalid_ex: false,
        excluded: false,
    }
}

/// Round-robin split of work items across `jobs` workers.
fn distribute<T>(items: Vec<T>, jobs: usize) -> Vec<Vec<(usize, T)>> {
    let mut chunks: Vec<Vec<(usize, T)>> = (0..jobs).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        chunks[i % jobs].push((i, item));
    }
    chunks
}

fn process_video(
    config: &PipelineConfig,
    weights: &WeightStore,
    video_id: &str,
    records: &[FrameRecord],
) -> Result<VideoOutput> {
    let mut artifacts = ArtifactCounts::default();

    let spec = video_spectrogram(&config.corpus, &config.mel, video_id)
        .map_err(|e| e.in_stage("audio", video_id.to_string()))?;
    write_mels(&config.out.join(format!("spectrograms/{video_id}.mels")), &spec)?;
    artifacts.spectrograms += 1;

    let store = build_frame_store(
        &config.corpus,
        video_id,
        (config.clip.width, config.clip.height),
        config.mask_thickness,
        Some(records.len()),
        Some(&config.out),
    )
    .map_err(|e| e.in_stage("align", video_id.to_string()))?;
    artifacts.aligned_frames += store.len();
    artifacts.masks += store.len();

    let anchors = forward_anchors(store.len(), config.forward_stride);
    let mut predictions = Vec::with_capacity(anchors.len());
    for &t in &anchors {
        let clip = sample_clip(&store, t as usize, &config.clip)
            .map_err(|e| e.in_stage("clips", format!("{video_id}@{t}")))?;
        write_clip_with_sidecar(&config.out, video_id, t, &clip, &config.clip)?;
        artifacts.clips += 1;

        let sub = extract_subspectrogram(&spec, t, config.clip.fps, config.subspec_window_secs)
            .map_err(|e| e.in_stage("forward", format!("{video_id}@{t}")))?;
        let row = two_stream_forward(&clip, &sub, &config.net, weights)
            .map_err(|e| e.in_stage("forward", format!("{video_id}@{t}")))?;
        predictions.push((t, row));
    }

    Ok(VideoOutput {
        id: video_id.to_string(),
        frames: store.len(),
        anchors,
        predictions,
        artifacts,
    })
}

fn write_png_atomic(path: &Path, img: &image::RgbImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_file_atomic_mkdirs(path, &bytes)
}

fn write_pgm_atomic(path: &Path, img: &image::GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend_from_slice(img.as_raw());
    write_file_atomic_mkdirs(path, &bytes)
}

fn export_histograms(out: &Path, hist: &VaHistogramSet) -> Result<()> {
    for ex in crate::annotations::ExpressionLabel::all() {
        let path = out.join(format!("histograms/{}.txt", ex.name()));
        write_file_atomic(&path, hist.export_grid(ex).as_bytes())?;
    }
    let summary = serde_json::to_string_pretty(&hist.summary_json())?;
    write_file_atomic(&out.join("histograms/summary.json"), summary.as_bytes())
}

fn write_label_artifacts(
    out: &Path,
    index: &DatasetIndex,
    filter_report: &FilterReport,
    label_counts: TaskCounts,
    pseudo: PseudoCounts,
) -> Result<()> {
    write_file_atomic(
        &out.join("labels/filter_report.json"),
        serde_json::to_string_pretty(filter_report)?.as_bytes(),
    )?;
    let counts = serde_json::json!({
        "labeled": label_counts,
        "pseudo": pseudo,
        "total_records": index.total_records(),
    });
    write_file_atomic(
        &out.join("labels/counts.json"),
        serde_json::to_string_pretty(&counts)?.as_bytes(),
    )?;

    let mut csv = String::from("video,frame,pseudo_valence,pseudo_arousal,soft_ex\n");
    for r in index.records() {
        if r.pseudo_valence.is_none() && r.pseudo_arousal.is_none() && r.soft_ex.is_none() {
            continue;
        }
        let soft = r.soft_ex.as_ref().map_or(String::new(), |s| {
            s.probs()
                .iter()
                .map(|p| format!("{p}"))
                .collect::<Vec<_>>()
                .join(";")
        });
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.video_id,
            r.frame_index,
            r.pseudo_valence.map_or(String::new(), |v| format!("{v}")),
            r.pseudo_arousal.map_or(String::new(), |v| format!("{v}")),
            soft
        );
    }
    write_file_atomic(&out.join("labels/pseudo_labels.csv"), csv.as_bytes())
}

fn write_predictions_csv(path: &Path, outputs: &[VideoOutput], au_count: usize) -> Result<()> {
    let mut csv = String::from("video,frame,valence,arousal");
    for i in 0..NUM_EXPRESSIONS {
        let _ = write!(csv, ",ex{i}");
    }
    for i in 1..=au_count {
        let _ = write!(csv, ",au{i}");
    }
    csv.push('\n');
    for output in outputs {
        for (t, row) in &output.predictions {
            let _ = write!(csv, "{},{t}", output.id);
            for v in row {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
    }
    write_file_atomic(path, csv.as_bytes())
}

/// Parse a predictions CSV written by [`run_pipeline`] (or the forward
/// stage) back into rows.
pub fn read_predictions_csv(path: &Path) -> Result<Vec<(String, u32, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        line: 1,
        message: "empty predictions file".into(),
    })?;
    if !header.starts_with("video,frame,valence,arousal") {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header '{header}'"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: idx + 2,
                message: format!("short row '{line}'"),
            });
        }
        let frame: u32 = fields[1].parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            line: idx + 2,
            message: format!("bad frame index '{}'", fields[1]),
        })?;
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Format {
                    path: path.to_path_buf(),
                    line: idx + 2,
                    message: format!("non-numeric value '{f}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((fields[0].to_string(), frame, values));
    }
    Ok(rows)
}

/// Score stored predictions against the corpus labels.
pub fn evaluate_prediction_file(
    corpus: &Path,
    predictions: &Path,
    filter: bool,
    au_count: usize,
) -> Result<EvalReport> {
    let index = load_corpus_index(corpus)?;
    let index = if filter { filter_index(&index)?.0 } else { index };
    let rows = read_predictions_csv(predictions)?;

    let mut pred_rows = Vec::with_capacity(rows.len());
    let mut records = Vec::with_capacity(rows.len());
    for (video, frame, values) in &rows {
        let video_records = index.video(video).ok_or_else(|| {
            Error::Index(format!("predictions reference unknown video '{video}'"))
        })?;
        let record = video_records
            .get(*frame as usize)
            .ok_or_else(|| Error::Index(format!("frame {frame} outside video '{video}'")))?;
        pred_rows.push(values.clone());
        records.push(record);
    }
    let preds = BatchPredictions::from_rows(&pred_rows, au_count)?;
    let blank = blank_record();
    let targets =
        targets_from_records(records.iter().map(|r| if r.excluded { &blank } else { *r }));
    evaluate_predictions(&preds, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_anchor_spacing() {
        assert_eq!(forward_anchors(100, 25), vec![24, 49, 74, 99]);
        assert_eq!(forward_anchors(10, 25), vec![9]);
        assert_eq!(forward_anchors(0, 25), Vec::<u32>::new());
        assert_eq!(forward_anchors(50, 1).len(), 50);
    }

    #[test]
    fn config_validation_rejects_missing_paths() {
        let cfg = PipelineConfig::default();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig {
            corpus: PathBuf::from("/tmp/corpus"),
            out: PathBuf::from("/tmp/out"),
            seed: 9,
            ..PipelineConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_files_use_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"corpus": "/tmp/c", "out": "/tmp/o", "bins": 10}"#).unwrap();
        assert_eq!(cfg.bins, 10);
        assert_eq!(cfg.forward_stride, PipelineConfig::default().forward_stride);
        assert!(cfg.filter);
    }

    #[test]
    fn distribute_round_robin_covers_all() {
        let chunks = distribute((0..7).collect::<Vec<_>>(), 3);
        assert_eq!(chunks.len(), 3);
        let total: usize = chunks.iter().map(Vec::len).sum();
        assert_eq!(total, 7);
        assert_eq!(chunks[0].iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![0, 3, 6]);
    }
}
