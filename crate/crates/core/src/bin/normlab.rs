//! Command-line entry point: training, sweeps, distributed-step checks,
//! fitting and report generation.

use clap::{Parser, Subcommand};
use normlab::disco::equivalence_check;
use normlab::harness::{
    emit_report, ingest_corpus, run_sweep, run_training, synthetic_corpus, ReportMode,
    ReportOptions, RunConfig, RunSpec, OUT_ROOT_ENV,
};
use normlab::lmo::NewtonSchulzConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "normlab",
    about = "Norm-based optimization lab: duality-map optimizer, simulated distributed steps, byte-level transformer training, and optimal-norm / scaling-rule fitting."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Learning rate (defaults to the first grid entry).
        #[arg(long)]
        eta: Option<f64>,
        /// Batch size in samples (defaults to the first grid entry).
        #[arg(long)]
        batch: Option<usize>,
        /// Seed (defaults to the first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Layer-group LR multipliers as input,hidden,output.
        #[arg(long, value_parser = parse_layout)]
        layout: Option<[f64; 3]>,
        /// Resume from a checkpoint file (decay legs).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory (default: config logging.out_dir under $NORMLAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole (eta, batch, layout, seed) grid of a config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel runs (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Randomized equivalence check of the distributed optimizer steps
    /// against the single-rank reference, with collective counts.
    DiscoCheck {
        #[arg(long, default_value_t = 4)]
        world_size: usize,
        /// Number of random parameters.
        #[arg(long, default_value_t = 7)]
        params: usize,
        #[arg(long, default_value_t = 30)]
        seed: u64,
        /// ddp | fsdp | embedding | experts | all
        #[arg(long, default_value = "all")]
        mode: String,
        /// Write the CSV table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit loss-vs-norm scans (norm-scan mode) from run logs.
    Fit {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Norm key to scan (e.g. output_projection:rms-to-rms).
        #[arg(long, default_value = "output_projection")]
        norm_key: String,
        /// Fit window size around the empirical optimum.
        #[arg(long, default_value_t = 7)]
        n_points: usize,
    },
    /// Scaling-rule reports: lr-bs regression, reach-set fits, power law.
    Scaling {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "output_projection")]
        norm_key: String,
        /// Optimal-norm band in log2 units, as lo,hi.
        #[arg(long, value_parser = parse_band, default_value = "6.8,7.2")]
        band: (f64, f64),
    },
    /// Re-emit the SVG plots of one report mode.
    Plot {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// norm-scan | lr-bs | power-law | layout
        #[arg(long)]
        mode: String,
        #[arg(long, default_value = "output_projection")]
        norm_key: String,
    },
    /// Generate a deterministic synthetic byte corpus for desk runs.
    GenCorpus {
        #[arg(long)]
        bytes: usize,
        #[arg(long, default_value_t = 30)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_layout(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err("layout needs exactly three values: input,hidden,output".into());
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 2 || parts[0] >= parts[1] {
        return Err("band needs lo,hi with lo < hi".into());
    }
    Ok((parts[0], parts[1]))
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(explicit: Option<PathBuf>, default_leaf: &std::path::Path) -> PathBuf {
    explicit.unwrap_or_else(|| out_root().join(default_leaf))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train {
            config,
            eta,
            batch,
            seed,
            layout,
            resume,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let spec = RunSpec {
                eta: eta.unwrap_or(cfg.sweep.etas[0]),
                batch: batch.unwrap_or(cfg.sweep.batch_sizes[0]),
                seed: seed.unwrap_or(cfg.sweep.seeds[0]),
                layout: layout.unwrap_or(cfg.sweep.layouts[0]),
            };
            let out_dir = resolve_out(out, &cfg.logging.out_dir);
            let corpus = ingest_corpus(&cfg.data.corpus)?;
            let outcome = run_training(&cfg, &spec, &corpus, &out_dir, resume.as_deref())?;
            println!("run {} complete:", spec.run_id());
            for row in &outcome.rows {
                println!(
                    "  D={:>10}  loss={:.4}  ||W_out||_rms->inf={:.4}",
                    row.horizon, row.loss, row.norm_output_rms_to_inf
                );
            }
            println!("log: {}", outcome.log_path.display());
            println!("checkpoint: {}", outcome.final_checkpoint.display());
            Ok(())
        }
        Command::Sweep { config, out, jobs } => {
            let cfg = RunConfig::load(&config)?;
            let out_dir = resolve_out(out, &cfg.logging.out_dir);
            let jobs = jobs.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            let outcome = run_sweep(&cfg, &out_dir, jobs)?;
            println!(
                "sweep complete: {} runs ok, {} failed",
                outcome.completed,
                outcome.failed.len()
            );
            for (run_id, err) in &outcome.failed {
                println!("  FAILED {run_id}: {err}");
            }
            println!("summary: {}", outcome.summary_path.display());
            Ok(())
        }
        Command::DiscoCheck {
            world_size,
            params,
            seed,
            mode,
            out,
        } => {
            let ns = NewtonSchulzConfig::default();
            let modes: Vec<&str> = match mode.as_str() {
                "all" => vec!["ddp", "fsdp", "embedding", "experts"],
                m => vec![m],
            };
            let mut csv = String::from(
                "mode,world_size,params,max_abs_err,bitwise,all_gather,all_to_all,\
                 expected_all_gather,expected_all_to_all,pass\n",
            );
            let mut all_pass = true;
            for m in modes {
                let rep = equivalence_check(m, world_size, params, seed, &ns)?;
                println!(
                    "{}: {} (max |err| = {:.3e}, bitwise = {}, collectives = {}+{} vs expected {}+{})",
                    rep.mode,
                    if rep.pass { "PASS" } else { "FAIL" },
                    rep.max_abs_err,
                    rep.bitwise,
                    rep.counts.all_gather,
                    rep.counts.all_to_all,
                    rep.expected_counts.all_gather,
                    rep.expected_counts.all_to_all,
                );
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    rep.mode,
                    rep.world,
                    rep.n_params,
                    rep.max_abs_err,
                    rep.bitwise,
                    rep.counts.all_gather,
                    rep.counts.all_to_all,
                    rep.expected_counts.all_gather,
                    rep.expected_counts.all_to_all,
                    rep.pass
                ));
                all_pass &= rep.pass;
            }
            match out {
                Some(path) => std::fs::write(&path, csv)?,
                None => print!("{csv}"),
            }
            if !all_pass {
                return Err("equivalence check failed".into());
            }
            Ok(())
        }
        Command::Fit {
            logs,
            out,
            norm_key,
            n_points,
        } => {
            let out_dir = resolve_out(out, std::path::Path::new("report"));
            let opts = ReportOptions {
                norm_key,
                n_points,
                ..ReportOptions::default()
            };
            let files = emit_report(&logs, &out_dir, ReportMode::NormScan, &opts)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Scaling {
            logs,
            out,
            norm_key,
            band,
        } => {
            let out_dir = resolve_out(out, std::path::Path::new("report"));
            let opts = ReportOptions {
                norm_key,
                band_log2: band,
                ..ReportOptions::default()
            };
            for mode in [ReportMode::LrBs, ReportMode::PowerLaw] {
                let files = emit_report(&logs, &out_dir, mode, &opts)?;
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            Ok(())
        }
        Command::Plot {
            logs,
            out,
            mode,
            norm_key,
        } => {
            let out_dir = resolve_out(out, std::path::Path::new("report"));
            let mode = ReportMode::parse(&mode)?;
            let opts = ReportOptions {
                norm_key,
                plots: true,
                ..ReportOptions::default()
            };
            let files = emit_report(&logs, &out_dir, mode, &opts)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::GenCorpus { bytes, seed, out } => {
            std::fs::write(&out, synthetic_corpus(bytes, seed))?;
            println!("wrote {} bytes to {}", bytes, out.display());
            Ok(())
        }
    }
}
