//! Command-line surface. `run` owns the exit-code policy: 0 success, 1 for
//! anything argument-shaped, 2 for runtime failures, each with a one-line
//! diagnostic on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{QfMode, TrainConfig};
use crate::data::ingest;
use crate::error::Error;
use crate::img::{load_png, save_png_atomic};
use crate::jpeg::{compress_roundtrip, estimate_qf, qf_to_qm, ChannelKind, QualityFactor};
use crate::selftest;
use crate::train::{ablation, evaluate, model_from_checkpoint, train};

#[derive(Parser)]
#[command(
    name = "hpgn",
    version,
    about = "Enhance JPEG-compressed low-light images with a priors-guided network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Round-trip a PNG through JPEG quantization at a chosen quality factor.
    Compress {
        /// Input PNG path.
        #[arg(long = "in")]
        input: PathBuf,
        /// Quality factor in [1, 100].
        #[arg(long, value_parser = clap::value_parser!(i64).range(1..=100))]
        qf: i64,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the 8x8 quantization table for a quality factor.
    InspectQm {
        /// Quality factor in [1, 100].
        #[arg(long, value_parser = clap::value_parser!(i64).range(1..=100))]
        qf: i64,
        /// Print the chroma table instead of the luma table.
        #[arg(long)]
        chroma: bool,
    },
    /// Train a model and write the final checkpoint.
    Train {
        /// Training config file (key=value lines).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory containing low/ and high/ PNG pairs.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance one compressed PNG with a trained checkpoint.
    Enhance {
        /// Checkpoint path.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input PNG (already carrying compression damage).
        #[arg(long = "in")]
        input: PathBuf,
        /// Quality factor of the input: an integer or `auto` to estimate.
        #[arg(long)]
        qf: String,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against a paired dataset and write a report.
    Eval {
        /// Checkpoint path.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory containing low/ and high/ PNG pairs.
        #[arg(long)]
        data: PathBuf,
        /// `fixed:Q` or `random:LO,HI`.
        #[arg(long)]
        qf_mode: String,
        /// Report output path.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and score the four filter variants under one seed and budget.
    Ablate {
        /// Training config file; its filter mode field is overridden per variant.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory containing low/ and high/ PNG pairs.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the comparison table and per-variant reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant suite.
    Selftest,
}

enum CliError {
    /// Bad argument content discovered after parsing (exit 1).
    Usage(String),
    /// Everything else (exit 2).
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parse and dispatch; never panics on user input.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Compress { input, qf, out } => {
            let img = load_png(&input)?;
            let qf = QualityFactor::new(qf)?;
            let compressed = compress_roundtrip(&img, qf)?;
            save_png_atomic(&compressed, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::InspectQm { qf, chroma } => {
            let kind = if chroma { ChannelKind::Chroma } else { ChannelKind::Luma };
            let qm = qf_to_qm(QualityFactor::new(qf)?, kind);
            let mut text = String::new();
            for row in qm.entries().chunks(8) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:3}")).collect();
                let _ = writeln!(text, "{}", line.join(" "));
            }
            print!("{text}");
            Ok(())
        }
        Command::Train { config, data, out } => {
            let config = read_config(&config)?;
            let pairs = ingest(&data)?;
            eprintln!("training on {} pairs for {} steps", pairs.len(), config.steps);
            let outcome = train(&config, &pairs, Some(&out), |step, loss| {
                if step % 50 == 0 || step + 1 == config.steps {
                    eprintln!("step {step} loss {loss:.6}");
                }
            })?;
            println!(
                "wrote {} (step {}, final loss {})",
                out.display(),
                outcome.checkpoint.step,
                outcome.losses.last().map_or("n/a".into(), |l| format!("{l:.6}")),
            );
            Ok(())
        }
        Command::Enhance { ckpt, input, qf, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let img = load_png(&input)?;
            let qf = match qf.as_str() {
                "auto" => {
                    let estimated = estimate_qf(&img)?;
                    eprintln!("estimated qf {}", estimated.get());
                    estimated
                }
                other => {
                    let value: i64 = other.parse().map_err(|_| {
                        CliError::Usage(format!("--qf expects an integer or `auto`, got {other:?}"))
                    })?;
                    QualityFactor::new(value)?
                }
            };
            let (store, model) = model_from_checkpoint(&ckpt)?;
            let enhanced = model.enhance_image(&store, &img, qf)?;
            save_png_atomic(&enhanced, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Eval { ckpt, data, qf_mode, report } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let pairs = ingest(&data)?;
            let mode = QfMode::parse(&qf_mode).map_err(|e| CliError::Usage(e.to_string()))?;
            let metrics = evaluate(&ckpt, &pairs, mode)?;
            write_text_atomic(&report, &metrics.to_text()?)?;
            println!(
                "{} images, mean psnr {:.3} dB, mean ssim {:.4} -> {}",
                metrics.records.len(),
                metrics.mean_psnr_db(),
                metrics.mean_ssim(),
                report.display()
            );
            Ok(())
        }
        Command::Ablate { config, data, out } => {
            let config = read_config(&config)?;
            let pairs = ingest(&data)?;
            fs::create_dir_all(&out).map_err(|e| io_at(&out, e))?;
            let outcome = ablation(&config, &pairs, |label| eprintln!("variant {label}"))?;
            for variant in &outcome.variants {
                let name = variant.label.trim_start_matches('+').to_lowercase().replace('-', "_");
                write_text_atomic(&out.join(format!("{name}.metrics")), &variant.report.to_text()?)?;
            }
            write_text_atomic(&out.join("table.txt"), &outcome.table)?;
            print!("{}", outcome.table);
            Ok(())
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            let mut failed = 0;
            for check in &checks {
                match &check.outcome {
                    Ok(()) => println!("ok   {}", check.name),
                    Err(err) => {
                        failed += 1;
                        println!("FAIL {}: {err}", check.name);
                    }
                }
            }
            if failed == 0 {
                println!("all {} checks passed", checks.len());
                Ok(())
            } else {
                Err(CliError::Runtime(Error::Contract(format!(
                    "{failed} of {} checks failed",
                    checks.len()
                ))))
            }
        }
    }
}

fn read_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    Ok(TrainConfig::from_text(&text)?)
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Temp-file-then-rename so interrupted runs never leave truncated output.
fn write_text_atomic(path: &Path, text: &str) -> Result<(), Error> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Contract(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    fs::write(&tmp, text).map_err(|e| io_at(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_at(path, e)
    })
}
