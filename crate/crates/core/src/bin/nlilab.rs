use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlilab::experiment::{
    cmd_calibrate_noise, cmd_kernels_analytic, cmd_mismatch, cmd_sweep, cmd_train, parse_powers, parse_schemes,
    read_metrics_csv, ExperimentConfig,
};
use nlilab::plot::write_plot;
use nlilab::{NliError, Result};

#[derive(Parser)]
#[command(name = "nlilab", version, about = "Fiber NLI simulation, kernel learning and genie-aided cancellation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Launch powers as `start:stop:step` (dBm, inclusive) or a comma-separated list.
    #[arg(long)]
    powers: Option<String>,
    /// Comma-separated scheme names.
    #[arg(long)]
    schemes: Option<String>,
    /// Worker threads.
    #[arg(long, env = "NLILAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every scheme at every launch power.
    Sweep(Common),
    /// Train one NBGD kernel per launch power.
    Train(Common),
    /// Evaluate fixed trained kernels at other launch powers.
    Mismatch {
        #[command(flatten)]
        common: Common,
        /// Powers the kernels were trained at.
        #[arg(long)]
        train_powers: String,
        /// Powers to evaluate at (defaults to the sweep powers).
        #[arg(long)]
        eval_powers: Option<String>,
    },
    /// Render metrics CSV files as a three-panel SVG.
    Plot {
        /// Metrics CSV files written by `sweep`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// SVG file to write.
        #[arg(long, default_value = "metrics.svg")]
        out: PathBuf,
    },
    /// Choose the noise figure that puts the traditional optimum at the target power.
    CalibrateNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target_dbm: Option<f64>,
    },
    /// Compute the analytic kernels of the configured link.
    KernelsAnalytic(Common),
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = &c.powers {
        cfg.powers_dbm = parse_powers(p)?;
    }
    if let Some(s) = &c.schemes {
        cfg.schemes = parse_schemes(s)?;
    }
    cfg.validate()?;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(NliError::Config("--threads must be ≥ 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep(c) => {
            let cfg = resolve(&c)?;
            let recs = cmd_sweep(&cfg)?;
            println!("wrote {} records to {}", recs.len(), cfg.out_dir.join("metrics.csv").display());
        }
        Command::Train(c) => {
            let cfg = resolve(&c)?;
            for log in cmd_train(&cfg, &cfg.powers_dbm)? {
                println!(
                    "{:>7.2} dBm  loss {:.4e} -> {:.4e}  validation NMSE {:.2} dB  {}",
                    log.power_dbm,
                    log.initial_loss,
                    log.best_loss,
                    log.validation_nmse_db,
                    log.kernel_file.display()
                );
            }
        }
        Command::Mismatch {
            common,
            train_powers,
            eval_powers,
        } => {
            let cfg = resolve(&common)?;
            let train = parse_powers(&train_powers)?;
            let eval = match eval_powers {
                Some(e) => parse_powers(&e)?,
                None => cfg.powers_dbm.clone(),
            };
            let rows = cmd_mismatch(&cfg, &train, &eval)?;
            println!("wrote {} rows to {}", rows.len(), cfg.out_dir.join("mismatch.csv").display());
        }
        Command::Plot { inputs, out } => {
            let mut recs = Vec::new();
            for p in &inputs {
                recs.extend(read_metrics_csv(p)?);
            }
            write_plot(&out, &recs)?;
            println!("wrote {}", out.display());
        }
        Command::CalibrateNoise { common, target_dbm } => {
            let mut cfg = resolve(&common)?;
            if let Some(t) = target_dbm {
                cfg.calibration_target_dbm = t;
            }
            let (cal, _) = cmd_calibrate_noise(&cfg)?;
            println!(
                "noise figure {:.3} dB puts the optimum at {} dBm (NLI slope {:.3}); wrote {}",
                cal.nf_db,
                cal.target_dbm,
                cal.nli_slope,
                cfg.out_dir.join("config.calibrated.json").display()
            );
        }
        Command::KernelsAnalytic(c) => {
            let cfg = resolve(&c)?;
            let k = cmd_kernels_analytic(&cfg)?;
            println!("wrote M={} analytic kernels to {}", k.memory(), cfg.analytic_kernel_path().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
