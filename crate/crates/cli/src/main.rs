use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lineseg_core::config::PipelineConfig;
use lineseg_core::dataio::PageId;
use lineseg_core::eval::{ApMode, Assignment, ScoreMode};
use lineseg_core::raster::ThresholdMode;
use lineseg_core::runner::{evaluate_dirs, pr_curve_csv, run_batch, segment_file, SegmentOptions};

#[derive(Parser)]
#[command(
    name = "lineseg",
    version,
    about = "Text-line segmentation of scanned handwritten pages"
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, env = "LINESEG_CONFIG")]
    config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one page image.
    Segment {
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        seg: SegmentArgs,
    },
    /// Segment every `<Folder>_<Page>` image under a dataset root.
    Batch {
        root: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        seg: SegmentArgs,
    },
    /// Score detected line annotations against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
        /// Acceptance threshold on the match score.
        #[arg(long)]
        ta: Option<f64>,
        #[arg(long, value_enum)]
        score_mode: Option<ScoreArg>,
        #[arg(long, value_enum)]
        assignment: Option<AssignmentArg>,
        #[arg(long, value_enum)]
        ap_mode: Option<ApArg>,
        /// Write the 11-point precision-recall curve as CSV.
        #[arg(long)]
        pr_curve: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(short, long, default_value = "eval_report.json")]
        out: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args)]
struct SegmentArgs {
    /// Write numbered intermediate images to `<page dir>/debug/`.
    #[arg(long)]
    debug_dumps: bool,
    /// Replace existing outputs instead of failing.
    #[arg(long)]
    overwrite: bool,
    /// Threshold per tile of this size instead of one global Otsu threshold.
    #[arg(long, value_name = "TILE")]
    local_threshold: Option<usize>,
}

impl SegmentArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(tile) = self.local_threshold {
            cfg.binarize.threshold = ThresholdMode::Local { tile };
        }
    }

    fn options(&self) -> SegmentOptions {
        SegmentOptions {
            overwrite: self.overwrite,
            debug_dumps: self.debug_dumps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Iou,
    GtCoverage,
}

#[derive(Clone, Copy, ValueEnum)]
enum AssignmentArg {
    Greedy,
    Optimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApArg {
    Paper,
    Interpolated,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Segment { image, out, seg } => {
            seg.apply(&mut cfg);
            cfg.validate()?;
            let page = PageId::from_path(&image);
            let res = segment_file(&image, &page, &out, &cfg, seg.options())
                .with_context(|| format!("segmenting {}", image.display()))?;
            println!(
                "{}: {} lines -> {}",
                image.display(),
                res.manifest.line_count,
                res.dir.display()
            );
        }
        Command::Batch { root, out, jobs, seg } => {
            seg.apply(&mut cfg);
            cfg.validate()?;
            let m = run_batch(&root, &out, &cfg, seg.options(), jobs)
                .with_context(|| format!("batch over {}", root.display()))?;
            println!(
                "{} images: {} ok, {} failed, {} lines",
                m.images, m.succeeded, m.failed, m.total_lines
            );
            if m.images == 0 {
                bail!("no page images found under {}", root.display());
            }
            if m.all_failed() {
                bail!("every image failed");
            }
        }
        Command::Evaluate {
            gt,
            det,
            ta,
            score_mode,
            assignment,
            ap_mode,
            pr_curve,
            out,
        } => {
            let e = &mut cfg.eval;
            if let Some(t) = ta {
                e.matching.t_a = t;
            }
            if let Some(s) = score_mode {
                e.matching.score_mode = match s {
                    ScoreArg::Iou => ScoreMode::Iou,
                    ScoreArg::GtCoverage => ScoreMode::GtCoverage,
                };
            }
            if let Some(a) = assignment {
                e.matching.assignment = match a {
                    AssignmentArg::Greedy => Assignment::Greedy,
                    AssignmentArg::Optimal => Assignment::Optimal,
                };
            }
            if let Some(m) = ap_mode {
                e.ap_mode = match m {
                    ApArg::Paper => ApMode::Paper,
                    ApArg::Interpolated => ApMode::Interpolated,
                };
            }
            cfg.validate()?;
            let report = evaluate_dirs(&gt, &det, &cfg.eval)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            let json = serde_json::to_string_pretty(&report)? + "\n";
            print!("{json}");
            fs::write(&out, &json).with_context(|| format!("writing {}", out.display()))?;
            if let Some(p) = pr_curve {
                fs::write(&p, pr_curve_csv(&report)).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
