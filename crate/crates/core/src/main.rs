//! Thin command-line front end; all work happens in [`proctor::harness`].
//!
//! Exit codes: 0 on success, 1 on validation/parse failures, 2 when an
//! internal self-check fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use proctor::eval::Interpolation;
use proctor::harness::{
    run_bench, run_eval, run_fuse, run_stats, run_verify, BenchOptions, EvalOptions, FuseOptions,
    HarnessError,
};

#[derive(Parser)]
#[command(
    name = "proctor",
    version,
    about = "Routed attention benchmarks, detection evaluation, and behavior-stream fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded routed-attention forward passes and report MAC counts,
    /// the routed/dense ratio, an output digest, and timing.
    Bench {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        /// Region grid side (the map is tiled into s*s regions).
        #[arg(long = "s", default_value_t = 8)]
        regions_per_side: usize,
        /// Number of regions each region attends to.
        #[arg(long = "k", default_value_t = 4)]
        routed_regions: usize,
        #[arg(long, default_value_t = 3)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the kernel self-checks (dense equivalence, sparsity law,
    /// permutation equivariance) and report per-check status.
    Verify {
        /// Corrupt the gather stage to prove the checks can fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Evaluate a predictions file against an annotation directory.
    Eval {
        /// Line-delimited JSON predictions (image_id, class_id, score,
        /// x1, y1, x2, y2 in absolute pixels).
        #[arg(long)]
        pred: PathBuf,
        /// Directory of annotation files (`class_id cx cy w h` per line).
        #[arg(long)]
        gt: PathBuf,
        /// IOU threshold for counting a prediction as a true positive.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Integration of the precision envelope.
        #[arg(long, value_enum, default_value_t = InterpArg::All)]
        interp: InterpArg,
        /// Pixel width assumed when denormalizing ground-truth boxes.
        #[arg(long, default_value_t = 640.0)]
        img_width: f64,
        /// Pixel height assumed when denormalizing ground-truth boxes.
        #[arg(long, default_value_t = 640.0)]
        img_height: f64,
    },
    /// Fuse track, action, and hand-raise streams into behavior records.
    Fuse {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        actions: PathBuf,
        #[arg(long)]
        handraise: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Minimum IOU for an event to claim a track.
        #[arg(long, default_value_t = 0.3)]
        iou_min: f64,
        /// Frames per second of the track stream (keyframe stride).
        #[arg(long, default_value_t = 30)]
        fps: u64,
    },
    /// Summarize an annotation directory: image/label counts and the
    /// per-image hand-raise histogram.
    Stats {
        #[arg(long)]
        annotations: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpArg {
    /// Exact step integral over every achieved recall value.
    All,
    /// 101-point interpolated variant.
    #[value(name = "101")]
    Points101,
}

impl From<InterpArg> for Interpolation {
    fn from(arg: InterpArg) -> Self {
        match arg {
            InterpArg::All => Interpolation::AllPoints,
            InterpArg::Points101 => Interpolation::Points101,
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Bench {
            height,
            width,
            channels,
            regions_per_side,
            routed_regions,
            iters,
            seed,
        } => {
            let report = run_bench(BenchOptions {
                height,
                width,
                channels,
                regions_per_side,
                routed_regions,
                iters,
                seed,
            })?;
            print!("{}", report.render_deterministic());
            print!("{}", report.render_timing());
            Ok(())
        }
        Command::Verify { inject_fault } => {
            let report = run_verify(inject_fault);
            print!("{}", report.render());
            if report.all_passed() {
                Ok(())
            } else {
                Err(HarnessError::CheckFailed(
                    "one or more self-checks failed".to_string(),
                ))
            }
        }
        Command::Eval {
            pred,
            gt,
            iou,
            interp,
            img_width,
            img_height,
        } => {
            let report = run_eval(&EvalOptions {
                predictions: pred,
                ground_truth_dir: gt,
                iou,
                interpolation: interp.into(),
                image_width: img_width,
                image_height: img_height,
            })?;
            print!("{report}");
            Ok(())
        }
        Command::Fuse {
            tracks,
            actions,
            handraise,
            out,
            iou_min,
            fps,
        } => {
            let summary = run_fuse(&FuseOptions {
                tracks,
                actions,
                handraises: handraise,
                output: out,
                iou_min,
                fps,
            })?;
            print!("{summary}");
            Ok(())
        }
        Command::Stats { annotations } => {
            let report = run_stats(&annotations)?;
            print!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
