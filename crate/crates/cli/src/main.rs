use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use unmix_stereo::commands::{
    self, load_config, ConfigOverrides, EvalKind, EvalOptions, RunReport, SceneKind, SynthOptions,
    UnmixOptions,
};
use unmix_stereo::metrics::{DEFAULT_MAX_DEPTH, DEFAULT_MIN_DEPTH};
use unmix_stereo::{MixtureOperator, SolverConfig};

/// Recover a stereo pair and disparity maps from a single mixture image.
#[derive(Parser, Debug)]
#[command(name = "unmix-stereo", version)]
struct Cli {
    /// Mixture operator: anaglyph, double, mono-left or mono-right.
    #[arg(long, global = true, default_value = "anaglyph")]
    operator: MixtureOperator,
    /// TOML solver configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (compose) or directory (everything else).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print the run report as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct SolverFlags {
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a mixture from a stereo pair.
    Compose { left: PathBuf, right: PathBuf },
    /// Recover both views and disparities from a mixture.
    Unmix {
        mixture: PathBuf,
        /// Disable the stereo terms (separation only).
        #[arg(long)]
        ablate_separation_only: bool,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Fill the missing anaglyph channels by warping with given disparities.
    Colorize {
        mixture: PathBuf,
        d_left: PathBuf,
        d_right: PathBuf,
    },
    /// Brute-force stereo matching of a pair.
    Oracle {
        left: PathBuf,
        right: PathBuf,
        #[arg(long, default_value_t = 96)]
        d_max: usize,
    },
    /// Score predictions against ground truth.
    Evaluate {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        /// separation, disparity or depth.
        #[arg(long)]
        kind: EvalKind,
        #[arg(long)]
        tau: Option<f64>,
        /// Official KITTI D1 rule (3 px and 5%).
        #[arg(long)]
        official: bool,
        #[arg(long, default_value_t = 0)]
        crop: usize,
        #[arg(long, default_value_t = 1.0)]
        gt_scale: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_DEPTH)]
        min_depth: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: f64,
        #[arg(long)]
        focal: Option<f64>,
        #[arg(long)]
        baseline: Option<f64>,
        /// Also write a per-item CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Joint recovery against the separation-only ablation over a dataset.
    Bench {
        dataset: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Generate a synthetic dataset in the bench layout.
    Synth {
        /// constant or two-plane.
        #[arg(long, default_value = "constant")]
        kind: SceneKind,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 4)]
        disparity: usize,
    },
}

fn solver_config(cli: &Cli, flags: &SolverFlags) -> Result<SolverConfig> {
    let base = match &cli.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => SolverConfig::default(),
    };
    let overrides = ConfigOverrides {
        seed: cli.seed,
        d_max: flags.d_max,
        levels: flags.levels,
        iters_per_level: flags.iters,
        step_size: flags.step_size,
    };
    Ok(overrides.apply(base)?)
}

fn run(cli: &Cli) -> Result<RunReport> {
    let out = &cli.out;
    let report = match &cli.command {
        Command::Compose { left, right } => commands::cmd_compose(left, right, cli.operator, out)?,
        Command::Unmix {
            mixture,
            ablate_separation_only,
            solver,
        } => {
            let cfg = solver_config(cli, solver)?;
            let opts = UnmixOptions {
                ablate_separation_only: *ablate_separation_only,
            };
            commands::cmd_unmix(mixture, cli.operator, &cfg, out, opts)?
        }
        Command::Colorize {
            mixture,
            d_left,
            d_right,
        } => commands::cmd_colorize(mixture, d_left, d_right, out)?,
        Command::Oracle { left, right, d_max } => commands::cmd_oracle(left, right, *d_max, out)?,
        Command::Evaluate {
            pred_dir,
            gt_dir,
            kind,
            tau,
            official,
            crop,
            gt_scale,
            min_depth,
            max_depth,
            focal,
            baseline,
            csv,
        } => {
            let opts = EvalOptions {
                tau: *tau,
                official_d1: *official,
                crop: *crop,
                gt_scale: *gt_scale,
                min_depth: *min_depth,
                max_depth: *max_depth,
                focal: *focal,
                baseline: *baseline,
                csv: csv.clone(),
            };
            commands::cmd_evaluate(pred_dir, gt_dir, *kind, &opts)?
        }
        Command::Bench { dataset, solver } => {
            let cfg = solver_config(cli, solver)?;
            commands::cmd_bench(dataset, cli.operator, &cfg, out)?
        }
        Command::Synth {
            kind,
            count,
            width,
            height,
            disparity,
        } => {
            let opts = SynthOptions {
                kind: *kind,
                count: *count,
                width: *width,
                height: *height,
                disparity: *disparity,
                seed: cli.seed.unwrap_or(0),
            };
            commands::cmd_synth(out, &opts)?
        }
    };
    Ok(report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            for w in &report.warnings {
                log::warn!("{w}");
            }
            if cli.json {
                let printed = report
                    .to_json()
                    .map_err(anyhow::Error::from)
                    .and_then(|s| Ok(writeln!(std::io::stdout(), "{s}")?));
                if let Err(e) = printed {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            let failed = report.failed_items();
            if failed > 0 {
                for item in report.items.iter().filter(|i| i.message.is_some()) {
                    eprintln!(
                        "{}: {}",
                        item.name,
                        item.message.as_deref().unwrap_or_default()
                    );
                }
                eprintln!("error: {failed} item(s) failed");
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
