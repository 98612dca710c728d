//! The `celltissue` command-line tool.
//!
//! Every command prints a JSON envelope `{command, version, config, result}`
//! on stdout (or `error` instead of `result` on failure) and a short
//! human-readable summary on stderr. Exit codes: 0 success, 1 validation or
//! data error, 2 usage error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub use config::{RunConfig, DATA_ROOT_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// Invalid data, failed checks, I/O; exit code 1.
    Failure(String),
}

impl CliError {
    pub(crate) fn fail(e: impl std::fmt::Display) -> Self {
        CliError::Failure(e.to_string())
    }

    pub(crate) fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// What a command hands back for printing.
pub(crate) struct Outcome {
    pub result: Value,
    pub summary: String,
    /// A completed command whose check did not pass (exit 1 with a result).
    pub failed_check: bool,
}

impl Outcome {
    pub fn ok(result: Value, summary: String) -> Self {
        Self {
            result,
            summary,
            failed_check: false,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "celltissue", version, about = "Cell detection with tissue context")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset root directory.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    pub root: Option<PathBuf>,
    /// Also write the JSON result to this file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-item work; results keep input order.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for splitting, data generation and model initialization.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress the human-readable summary.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Symmetric,
    DemoteOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairMode {
    Overlapping,
    RoiInRegion,
}

/// Geometry overrides for commands working on loose files.
#[derive(Debug, Args, Default)]
pub struct GeometryArgs {
    #[arg(long)]
    pub mpp: Option<f64>,
    #[arg(long)]
    pub cell_side: Option<usize>,
    #[arg(long)]
    pub fov_ratio: Option<usize>,
    #[arg(long)]
    pub store_downsample: Option<usize>,
    #[arg(long)]
    pub c_x: Option<f64>,
    #[arg(long)]
    pub c_y: Option<f64>,
}

/// Synthetic benchmark and training overrides.
#[derive(Debug, Args, Default)]
pub struct NetArgs {
    /// Training samples to generate.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Held-out samples to generate.
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Fraction of cells whose appearance hides their class.
    #[arg(long)]
    pub ambiguity: Option<f64>,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate for both branches.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_cell: Option<f64>,
    #[arg(long)]
    pub lr_tissue: Option<f64>,
    /// Cell-branch dropout probability.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Stop cell-loss gradients at injected tissue predictions.
    #[arg(long)]
    pub detach_injection: bool,
    /// Disable flip/rotation augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset manifest and every file it references.
    Validate,
    /// Organ-stratified WSI-level train/val/test split.
    Split {
        /// `wsi_id,organ` CSV used instead of a dataset root.
        #[arg(long)]
        wsi_list: Option<PathBuf>,
        /// Three comma-separated ratios, e.g. `0.6,0.2,0.2`.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        ratios: Option<Vec<f64>>,
        /// Write the WSI → subset assignment here.
        #[arg(long)]
        assignment_out: Option<PathBuf>,
        /// Rewrite the manifest subsets in place.
        #[arg(long)]
        apply: bool,
    },
    /// Class ratios and cell/tissue co-occurrence of a dataset.
    Stats {
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Rasterize point annotations into a disk label map.
    Rasterize {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        radius_um: Option<f64>,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Colour PNG of the label map.
        #[arg(long)]
        png_out: Option<PathBuf>,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Extract cell detections from probability maps.
    Detect {
        /// Probability map (`.json` field or `.png` with channels bg,TC,BC); repeatable.
        #[arg(long, required = true)]
        prob: Vec<PathBuf>,
        #[arg(long)]
        min_distance: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Directory for `<stem>.csv` detection files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Relabel detections by the tissue class beneath them (TC-on-CA).
    Constrain {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Distance-matched per-class and mean F1.
    Eval {
        /// Detection CSV; pairs positionally with `--gts`.
        #[arg(long)]
        dets: Vec<PathBuf>,
        #[arg(long)]
        gts: Vec<PathBuf>,
        /// Directory of `<pair_id>.csv` detections scored against the dataset root.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        radius_px: Option<f64>,
    },
    /// Merge two annotations of the same patch.
    Consensus {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        radius_px: Option<f64>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Generate cell/tissue pairs from TIGER-style regions.
    PairTiger {
        /// JSON region spec, or a list of them.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum)]
        mode: PairMode,
        #[arg(long)]
        cell_side: Option<usize>,
        #[arg(long)]
        tissue_side: Option<usize>,
    },
    /// Generate the synthetic benchmark.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        /// Fraction of cells whose appearance hides their class.
        #[arg(long)]
        ambiguity: Option<f64>,
        /// Write the samples as a dataset here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train one variant on the synthetic benchmark and score it.
    Train {
        #[arg(long, default_value = "cell-only")]
        variant: String,
        /// Weight file stem; writes `<stem>.json` and `<stem>.bin`.
        #[arg(long)]
        weights_out: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Repeated runs of several variants with significance against cell-only.
    Experiment {
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', default_value = "cell-only,label-leaking,pred-to-inter-2")]
        variants: Vec<String>,
        /// Add all 64 feature-sharing configurations and report the best one.
        #[arg(long)]
        all_sharing: bool,
        /// Seeded runs per variant.
        #[arg(long)]
        runs: Option<usize>,
        /// Directory for `table.json`, `table.csv` and `table.md`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        /// Comma-separated variants; defaults to every baseline plus all-both sharing.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Check all 64 sharing configurations as well.
        #[arg(long)]
        all_sharing: bool,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Split { .. } => "split",
            Command::Stats { .. } => "stats",
            Command::Rasterize { .. } => "rasterize",
            Command::Detect { .. } => "detect",
            Command::Constrain { .. } => "constrain",
            Command::Eval { .. } => "eval",
            Command::Consensus { .. } => "consensus",
            Command::PairTiger { .. } => "pair-tiger",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Experiment { .. } => "experiment",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let name = cli.command.name();
    let quiet = cli.global.quiet;
    let out = cli.global.out.clone();

    let mut cfg = match RunConfig::load(cli.global.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return report_error(name, None, e),
    };
    commands::apply_global(&mut cfg, &cli.global);
    let outcome = commands::apply_command(&mut cfg, &cli.command)
        .and_then(|()| cfg.validate())
        .and_then(|()| commands::dispatch(&cfg, &cli.command));
    match outcome {
        Ok(o) => {
            let envelope = json!({
                "command": name,
                "version": env!("CARGO_PKG_VERSION"),
                "config": cfg,
                "result": o.result,
            });
            if let Err(e) = emit(&envelope, out.as_deref()) {
                return report_error(name, Some(&cfg), e);
            }
            if !quiet {
                eprintln!("{}", o.summary.trim_end());
            }
            if o.failed_check {
                EXIT_FAILURE
            } else {
                EXIT_OK
            }
        }
        Err(e) => report_error(name, Some(&cfg), e),
    }
}

fn emit(envelope: &Value, out: Option<&std::path::Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(envelope).map_err(CliError::fail)?;
    if let Some(path) = out {
        std::fs::write(path, &text).map_err(|e| CliError::fail(format!("{}: {e}", path.display())))?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}").map_err(CliError::fail)
}

fn report_error(name: &str, cfg: Option<&RunConfig>, e: CliError) -> i32 {
    let (code, msg) = match e {
        CliError::Usage(m) => (EXIT_USAGE, m),
        CliError::Failure(m) => (EXIT_FAILURE, m),
    };
    if code == EXIT_FAILURE {
        let envelope = json!({
            "command": name,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "error": msg,
        });
        let _ = writeln!(
            std::io::stdout().lock(),
            "{}",
            serde_json::to_string_pretty(&envelope).unwrap_or_default()
        );
    }
    eprintln!("error: {msg}");
    code
}
