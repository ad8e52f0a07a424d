//! `auravis` command line: synthetic corpus generation and the affect
//! analysis pipeline, whole or stage by stage.
//!
//! Exit codes: 0 on success, 1 on a stage failure, 2 on a configuration
//! error (including command-line usage errors).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use auravis_core::audiodsp::MelConfig;
use auravis_core::clipper::ClipConfig;
use auravis_core::labelfusion::PseudoPolicy;
use auravis_core::pipeline::{
    evaluate_prediction_file, run_audio_stage, run_align_stage, run_clips_stage,
    run_forward_stage, run_labels_stage, run_pipeline, PipelineConfig,
};
use auravis_core::synth::{synth_dataset, ContradictionCounts, SyntheticSpec};
use auravis_core::Error;

#[derive(Parser)]
#[command(name = "auravis", version, about = "Two-stream aural-visual affect analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known label coverage and injected
    /// contradictions.
    Synth(SynthArgs),
    /// Validate labels, filter contradictions, build histograms and apply
    /// the pseudo-label policy.
    Labels(LabelsArgs),
    /// Compute mel spectrograms for every video.
    Audio(AudioArgs),
    /// Align faces to the template and render landmark masks.
    Align(AlignArgs),
    /// Sample dilated clips (optionally augmented) at the forward anchors.
    Clips(ClipsArgs),
    /// Run the two-stream forward pass and write predictions.
    Forward(ForwardArgs),
    /// Score a predictions file against corpus labels.
    Eval(EvalArgs),
    /// Full pipeline: labels, preprocessing, forward, evaluation, report.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    videos: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.75)]
    va_coverage: f64,
    #[arg(long, default_value_t = 0.59)]
    ex_coverage: f64,
    #[arg(long, default_value_t = 0.5)]
    au_coverage: f64,
    #[arg(long, default_value_t = 8)]
    au_count: usize,
    /// Injected happy-with-negative-valence frames.
    #[arg(long, default_value_t = 0)]
    happy_neg: usize,
    /// Injected sad-with-positive-valence frames.
    #[arg(long, default_value_t = 0)]
    sad_pos: usize,
    /// Injected neutral frames with VA norm above 0.5.
    #[arg(long, default_value_t = 0)]
    neutral_norm: usize,
    /// Injected out-of-range labels.
    #[arg(long, default_value_t = 0)]
    invalid: usize,
    #[arg(long, default_value_t = 128)]
    image_size: u32,
    #[arg(long, default_value_t = 48_000)]
    sample_rate: u32,
}

#[derive(Args)]
struct CommonIo {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LabelsArgs {
    #[command(flatten)]
    io: CommonIo,
    /// on | off
    #[arg(long, default_value = "on", value_parser = parse_on_off)]
    filter: bool,
    /// none | valence | va | va+ex
    #[arg(long, default_value = "valence", value_parser = parse_pseudo)]
    pseudo: PseudoPolicy,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args)]
struct AudioArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Also export each spectrogram as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long, default_value_t = 112)]
    size: u32,
    #[arg(long, default_value_t = 2.0)]
    mask_thickness: f64,
}

#[derive(Args)]
struct ClipsArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long, default_value_t = 25)]
    stride: usize,
    /// Apply the training-time augmentation (seeded by --seed).
    #[arg(long)]
    augment: bool,
    #[arg(long, default_value_t = 8)]
    clip_frames: usize,
    #[arg(long, default_value_t = 6)]
    dilation: usize,
}

#[derive(Args)]
struct ForwardArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long, default_value_t = 25)]
    stride: usize,
    /// Sub-spectrogram window in seconds.
    #[arg(long, default_value_t = 10.0)]
    window: f64,
    /// Weight manifest JSON (with --weights-blob); defaults to seeded
    /// fixture weights.
    #[arg(long, requires = "weights_blob")]
    weights_json: Option<PathBuf>,
    #[arg(long, requires = "weights_json")]
    weights_blob: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Where to write eval.json (printed to stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "on", value_parser = parse_on_off)]
    filter: bool,
    #[arg(long, default_value_t = 8)]
    au_count: usize,
}

#[derive(Args)]
struct RunArgs {
    /// JSON pipeline config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_parser = parse_on_off)]
    filter: Option<bool>,
    #[arg(long, value_parser = parse_pseudo)]
    pseudo: Option<PseudoPolicy>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    forward_stride: Option<usize>,
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

fn parse_pseudo(s: &str) -> Result<PseudoPolicy, String> {
    PseudoPolicy::parse(s).ok_or_else(|| format!("expected none|valence|va|va+ex, got '{s}'"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Configuration problems exit 2 even when a stage wrapper added context.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Stage { source, .. } => exit_code_for(source),
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(args) => {
            let spec = SyntheticSpec {
                n_videos: args.videos,
                frames_per_video: args.frames,
                va_coverage: args.va_coverage,
                ex_coverage: args.ex_coverage,
                au_coverage: args.au_coverage,
                au_count: args.au_count,
                contradictions: ContradictionCounts {
                    happy_neg: args.happy_neg,
                    sad_pos: args.sad_pos,
                    neutral_highnorm: args.neutral_norm,
                    invalid: args.invalid,
                },
                image_size: args.image_size,
                audio_sample_rate: args.sample_rate,
                ..SyntheticSpec::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let manifest = synth_dataset(&spec, &args.out, &mut rng)?;
            println!(
                "synthesized {} videos x {} frames at {}",
                manifest.videos.len(),
                manifest.frames_per_video,
                args.out.display()
            );
            println!(
                "labels written: va={} ex={} au={}; contradictions={}",
                manifest.written.va,
                manifest.written.ex,
                manifest.written.au,
                manifest.contradictions.len()
            );
            Ok(())
        }
        Command::Labels(args) => {
            let (_, _, summary) = run_labels_stage(
                &args.io.corpus,
                &args.io.out,
                args.filter,
                args.pseudo,
                args.bins,
                args.io.seed,
            )?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Audio(args) => {
            let written = run_audio_stage(&args.io.corpus, &args.io.out, &MelConfig::default(), args.csv)?;
            println!("wrote {written} spectrograms to {}", args.io.out.display());
            Ok(())
        }
        Command::Align(args) => {
            let frames = run_align_stage(
                &args.io.corpus,
                &args.io.out,
                (args.size, args.size),
                args.mask_thickness,
            )?;
            println!("aligned {frames} frames into {}", args.io.out.display());
            Ok(())
        }
        Command::Clips(args) => {
            let clip_cfg = ClipConfig {
                frames: args.clip_frames,
                dilation: args.dilation,
                ..ClipConfig::default()
            };
            let written = run_clips_stage(
                &args.io.corpus,
                &args.io.out,
                &clip_cfg,
                args.stride,
                2.0,
                args.augment.then_some(args.io.seed),
            )?;
            println!("wrote {written} clips to {}", args.io.out.display());
            Ok(())
        }
        Command::Forward(args) => {
            let config = PipelineConfig {
                corpus: args.io.corpus,
                out: args.io.out,
                seed: args.io.seed,
                forward_stride: args.stride,
                subspec_window_secs: args.window,
                ..PipelineConfig::default()
            };
            let weight_files = args.weights_json.as_deref().zip(args.weights_blob.as_deref());
            let rows = run_forward_stage(&config, weight_files)?;
            println!(
                "wrote {rows} prediction rows to {}",
                config.out.join("predictions.csv").display()
            );
            Ok(())
        }
        Command::Eval(args) => {
            let report =
                evaluate_prediction_file(&args.corpus, &args.predictions, args.filter, args.au_count)?;
            let json = serde_json::to_string_pretty(&report)?;
            match args.out {
                Some(path) => {
                    std::fs::create_dir_all(path.parent().unwrap_or(&path)).ok();
                    std::fs::write(&path, &json)
                        .map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    println!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Run(args) => {
            let mut config = match &args.config {
                Some(path) => PipelineConfig::from_file(path)?,
                None => PipelineConfig::default(),
            };
            if let Some(corpus) = args.corpus {
                config.corpus = corpus;
            }
            if let Some(out) = args.out {
                config.out = out;
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(jobs) = args.jobs {
                config.jobs = jobs;
            }
            if let Some(filter) = args.filter {
                config.filter = filter;
            }
            if let Some(pseudo) = args.pseudo {
                config.pseudo = pseudo;
            }
            if let Some(bins) = args.bins {
                config.bins = bins;
            }
            if let Some(stride) = args.forward_stride {
                config.forward_stride = stride;
            }
            let report = run_pipeline(&config)?;
            println!(
                "processed {} videos ({} frames); kept {} / removed {} frames; {} predictions",
                report.videos.len(),
                report.total_frames,
                report.filter.kept,
                report.filter.removed(),
                report.videos.iter().map(|v| v.anchors.len()).sum::<usize>()
            );
            println!(
                "eval: ccc_mean={:.4} ex_criterion={:.4} au_criterion={:.4}",
                report.eval.ccc_mean, report.eval.ex_criterion, report.eval.au_criterion
            );
            println!("report: {}", config.out.join("report.json").display());
            Ok(())
        }
    }
}
