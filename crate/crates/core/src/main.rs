use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use permuquant::pipeline::synth::{write_synthetic_suite, SynthConfig};
use permuquant::pipeline::{calibrate, evaluate, run_suite, CalibrateOptions, CalibrationReport, Manifest, Suite};
use permuquant::reorder::DEFAULT_ALPHA_GRID;
use permuquant::QuantConfig;

const EXIT_VALIDATION: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "permuquant", version, about = "Per-group quantization with channel reordering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Choose and fold a channel permutation for every manifest layer.
    Calibrate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(2..=8))]
        bits: u32,
        #[arg(long, default_value_t = 32)]
        group_size: usize,
        /// Acceptance threshold in percent.
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// Comma-separated alpha values in [0, 1].
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHA_GRID)]
        alpha_grid: Vec<f64>,
        #[arg(long, value_enum, default_value = "off")]
        hadamard: Switch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        /// Directory for folded weights and norm parameters.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-measure the errors recorded in a report.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Relative tolerance against the stored deployed error.
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
    /// Run a seeded invariant suite (bounds, sorting, folding, hadamard, sandwich, all).
    Validate {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write a synthetic manifest with heavy-tailed layers.
    GenSynthetic {
        #[arg(long, default_value_t = 8)]
        layers: usize,
        #[arg(long, default_value_t = 128)]
        d: usize,
        #[arg(long, default_value_t = 32)]
        dout: usize,
        #[arg(long, default_value_t = 128)]
        tokens: usize,
        /// Standard deviation of the log channel scale.
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Calibrate {
            manifest,
            bits,
            group_size,
            tau,
            alpha_grid,
            hadamard,
            seed,
            jobs,
            artifacts,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            let opts = CalibrateOptions {
                quant: QuantConfig::new(bits, group_size)?,
                tau_percent: tau,
                alpha_grid,
                hadamard: matches!(hadamard, Switch::On),
                seed,
                jobs,
                artifacts_dir: artifacts,
            };
            let report = calibrate(&m, &opts)?;
            report.save(&out)?;
            for layer in &report.layers {
                match (&layer.calibration, &layer.error) {
                    (Some(c), _) => println!(
                        "{:<24} alpha={:.1} e_orig={:.6e} e_reorder={:.6e} rel={:+.4} {}",
                        layer.name,
                        c.alpha,
                        c.e_orig,
                        c.e_reorder,
                        c.rel_improvement,
                        if c.accepted { "accepted" } else { "rejected" }
                    ),
                    (None, err) => println!(
                        "{:<24} skipped: {}",
                        layer.name,
                        err.as_deref().unwrap_or("unknown error")
                    ),
                }
            }
            let s = &report.summary;
            println!(
                "{}/{} layers accepted ({:.1}%), {} skipped; report written to {}",
                s.accepted,
                s.layers,
                100.0 * s.acceptance_rate,
                s.skipped,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            manifest,
            report,
            tolerance,
        } => {
            let m = Manifest::load(&manifest)?;
            let r = CalibrationReport::load(&report)?;
            let rows = evaluate(&m, &r)?;
            println!(
                "{:<24} {:>14} {:>14} {:>14} {:>10}",
                "layer", "e_orig", "e_deployed", "stored", "rel_diff"
            );
            let mut all_match = true;
            for row in &rows {
                let ok = row.matches(tolerance);
                all_match &= ok;
                println!(
                    "{:<24} {:>14.6e} {:>14.6e} {:>14.6e} {:>10.2e}{}",
                    row.name,
                    row.e_orig,
                    row.e_deployed,
                    row.stored_e_deployed,
                    row.rel_diff,
                    if ok { "" } else { "  MISMATCH" }
                );
            }
            Ok(if all_match {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            })
        }
        Command::Validate { suite, seed } => {
            let suites = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse::<Suite>().map_err(anyhow::Error::msg)?]
            };
            let mut ok = true;
            for s in suites {
                let result = run_suite(s, seed)?;
                print!("{result}");
                ok &= result.ok();
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            })
        }
        Command::GenSynthetic {
            layers,
            d,
            dout,
            tokens,
            spread,
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                d,
                d_out: dout,
                tokens,
                spread,
            };
            let path = write_synthetic_suite(&out, layers, &cfg, seed)
                .with_context(|| format!("writing synthetic suite to {}", out.display()))?;
            println!("wrote {layers} layers, manifest {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
