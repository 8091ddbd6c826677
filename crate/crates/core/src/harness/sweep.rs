//! Sweep orchestration: runs every (eta, batch, layout, seed) combination
//! of the config grid, optionally across threads (each run owns all of its
//! state), and writes a canonical per-(run, horizon) summary CSV. Partial
//! failures are recorded and do not stop the sweep.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::config::RunConfig;
use super::corpus::{ingest_corpus, Corpus};
use super::train::{run_training, RunSpec, SummaryRow};
use super::HarnessError;

#[derive(Debug)]
pub struct SweepOutcome {
    pub summary_path: PathBuf,
    pub completed: usize,
    pub failed: Vec<(String, String)>,
}

/// All grid combinations in deterministic order.
pub fn enumerate_specs(cfg: &RunConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &eta in &cfg.sweep.etas {
        for &batch in &cfg.sweep.batch_sizes {
            for layout in &cfg.sweep.layouts {
                for &seed in &cfg.sweep.seeds {
                    specs.push(RunSpec {
                        eta,
                        batch,
                        seed,
                        layout: *layout,
                    });
                }
            }
        }
    }
    specs
}

/// Executes the whole grid and writes `summary.csv` under `out_dir`.
pub fn run_sweep(cfg: &RunConfig, out_dir: &Path, jobs: usize) -> Result<SweepOutcome, HarnessError> {
    cfg.validate()?;
    let corpus = ingest_corpus(&cfg.data.corpus)?;
    run_sweep_with_corpus(cfg, &corpus, out_dir, jobs)
}

/// Same as [`run_sweep`] with a pre-loaded corpus (tests build synthetic
/// ones in memory).
pub fn run_sweep_with_corpus(
    cfg: &RunConfig,
    corpus: &Corpus,
    out_dir: &Path,
    jobs: usize,
) -> Result<SweepOutcome, HarnessError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", out_dir.display())))?;
    let specs = enumerate_specs(cfg);
    let jobs = jobs.max(1);

    type RunResult = (String, Result<Vec<SummaryRow>, String>);
    let results: Mutex<Vec<RunResult>> = Mutex::new(Vec::new());
    let next: Mutex<usize> = Mutex::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(specs.len()) {
            scope.spawn(|| loop {
                let idx = {
                    let mut n = next.lock().unwrap();
                    if *n >= specs.len() {
                        return;
                    }
                    let i = *n;
                    *n += 1;
                    i
                };
                let spec = &specs[idx];
                let outcome = run_training(cfg, spec, corpus, out_dir, None)
                    .map(|o| o.rows)
                    .map_err(|e| e.to_string());
                results.lock().unwrap().push((spec.run_id(), outcome));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut failed = Vec::new();
    let mut completed = 0;
    for (run_id, res) in results {
        match res {
            Ok(mut r) => {
                completed += 1;
                rows.append(&mut r);
            }
            Err(e) => failed.push((run_id, e)),
        }
    }
    rows.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.horizon.cmp(&b.horizon)));

    let summary_path = out_dir.join("summary.csv");
    let mut csv = String::from(
        "run_id,eta,batch,seed,lay_input,lay_hidden,lay_output,horizon,loss,\
         norm_output_rms_to_inf,norm_output_rms_to_rms,norm_input_one_to_rms,lr_effective,status\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},ok\n",
            r.run_id,
            r.eta,
            r.batch,
            r.seed,
            r.layout[0],
            r.layout[1],
            r.layout[2],
            r.horizon,
            r.loss,
            r.norm_output_rms_to_inf,
            r.norm_output_rms_to_rms,
            r.norm_input_one_to_rms,
            r.lr_effective
        ));
    }
    for (run_id, err) in &failed {
        csv.push_str(&format!(
            "{run_id},,,,,,,,,,,,,error: {}\n",
            err.replace(',', ";").replace('\n', " ")
        ));
    }
    std::fs::write(&summary_path, csv)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", summary_path.display())))?;

    Ok(SweepOutcome {
        summary_path,
        completed,
        failed,
    })
}
