use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskood::pipeline::{self, Command, Method, Precision, RunConfig, Threshold};
use maskood::{Detector, EnergyInput, PasteMode, PasteSpec, SceneConfig};

/// Mask-level outlier scoring, open-set fusion and evaluation.
#[derive(Parser, Debug)]
#[command(name = "maskood", version)]
struct Cli {
    /// Manifest to read (JSON array of records).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 = all cores. MASKOOD_WORKERS overrides.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true, value_enum, default_value = "f32")]
    precision: PrecisionArg,
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DetectorArg {
    Max,
    Energy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EnergyInputArg {
    Probs,
    Logprobs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Instance,
    Patch,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Fixed anomaly threshold.
    #[arg(long, conflicts_with = "target_tpr")]
    tau: Option<f64>,
    /// Calibrate the threshold to this outlier TPR.
    #[arg(long, default_value_t = 0.95)]
    target_tpr: f64,
}

impl ThresholdArgs {
    fn threshold(&self) -> Threshold {
        match self.tau {
            Some(t) => Threshold::Fixed(t),
            None => Threshold::Calibrate { target_tpr: self.target_tpr },
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write one anomaly map per record to scores/<image_id>.dtf.
    Score {
        /// am, ahm, aem, eam, msp, maxlogit, entropy, energy or kl.
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long, value_enum, default_value = "max")]
        detector: DetectorArg,
        /// Energy temperature.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, value_enum, default_value = "probs")]
        energy_input: EnergyInputArg,
        /// Also write 16-bit PGM previews.
        #[arg(long)]
        pgm: bool,
    },
    /// Fuse closed-set predictions with thresholded scores into labels/<image_id>.dtf.
    Openset {
        #[command(flatten)]
        threshold: ThresholdArgs,
    },
    /// Assemble outlier-aware panoptic maps into panoptic/<image_id>.{class,inst}.dtf.
    PanopticInfer {
        #[command(flatten)]
        threshold: ThresholdArgs,
        /// Anomaly groups need more than this many pixels.
        #[arg(long, default_value_t = 200)]
        min_pixels: usize,
        /// Minimum top class probability of a mask.
        #[arg(long, default_value_t = 0.0)]
        mask_conf: f64,
        /// JSON list of thing class ids (default: things.json next to the manifest).
        #[arg(long)]
        things: Option<PathBuf>,
    },
    /// AP, FPR@95/90 and AUROC of the scores, plus PR and ROC curves.
    EvalOod {
        /// Force binned accumulation with this many bins.
        #[arg(long)]
        bins: Option<usize>,
    },
    /// mIoU of the open-set labels.
    EvalSeg,
    /// PQ, SQ and RQ of the panoptic maps.
    EvalPanoptic,
    /// Paste negative content into inlier images.
    Paste {
        /// JSON file with "inliers" and "negatives" lists.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long, value_enum, default_value = "instance")]
        mode: ModeArg,
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long, default_value_t = 0.01)]
        scale_min: f64,
        #[arg(long, default_value_t = 0.10)]
        scale_max: f64,
    },
    /// Generate synthetic scenes and a manifest.
    Synth {
        #[arg(long, default_value_t = 100)]
        masks: usize,
        #[arg(long, default_value_t = 19)]
        classes: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 0.1)]
        outlier_rate: f64,
        #[arg(long, default_value_t = 8.0)]
        sharpness: f64,
        #[arg(long, default_value_t = 0.9)]
        class_confidence: f64,
        #[arg(long, default_value_t = 24)]
        regions: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Histograms of the max mask assignment over inlier and outlier pixels.
    Hist {
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: maskood::Error| e.to_string())
}

fn command(cmd: Cmd, seed: u64) -> Command {
    match cmd {
        Cmd::Score { method, detector, beta, energy_input, pgm } => {
            let detector = match detector {
                DetectorArg::Max => Detector::MaxScore,
                DetectorArg::Energy => Detector::Energy {
                    beta,
                    input: match energy_input {
                        EnergyInputArg::Probs => EnergyInput::Probabilities,
                        EnergyInputArg::Logprobs => EnergyInput::LogProbabilities,
                    },
                },
            };
            Command::Score { method, detector, pgm }
        }
        Cmd::Openset { threshold } => Command::Openset { threshold: threshold.threshold() },
        Cmd::PanopticInfer { threshold, min_pixels, mask_conf, things } => Command::PanopticInfer {
            threshold: threshold.threshold(),
            min_pixels,
            mask_conf_threshold: mask_conf,
            things,
        },
        Cmd::EvalOod { bins } => Command::EvalOod { bins },
        Cmd::EvalSeg => Command::EvalSeg,
        Cmd::EvalPanoptic => Command::EvalPanoptic,
        Cmd::Paste { inputs, mode, count, scale_min, scale_max } => Command::Paste {
            inputs,
            spec: PasteSpec {
                mode: match mode {
                    ModeArg::Instance => PasteMode::Instance,
                    ModeArg::Patch => PasteMode::Patch,
                },
                seed,
                count,
                scale: (scale_min, scale_max),
            },
        },
        Cmd::Synth { masks, classes, height, width, outlier_rate, sharpness, class_confidence, regions, count } => {
            Command::Synth {
                scene: SceneConfig {
                    n_masks: masks,
                    n_classes: classes,
                    height,
                    width,
                    outlier_fraction: outlier_rate,
                    sharpness,
                    class_confidence,
                    regions,
                    seed,
                    ..SceneConfig::default()
                },
                count,
            }
        }
        Cmd::Hist { bins } => Command::Hist { bins },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let cfg = RunConfig {
        manifest: cli.manifest,
        out: cli.out,
        workers: cli.workers,
        precision: match cli.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
    };
    match pipeline::run(&cfg, &command(cli.command, cli.seed)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
