//! Single training run: constant-LR (or decay-tail) loop emitting one
//! JSONL log line per evaluation point, with per-layer operator norms, and
//! a checkpoint at every horizon for later decay legs.

use crate::linalg::Rng;
use crate::model::{backward, build_model, forward_loss, grads_to_tensors, ParamBundle};
use crate::norms::{op_norm_one_to_rms, op_norm_rms_to_inf, op_norm_rms_to_rms_with};
use crate::scion::{lr_at, scion_step, LayerGroup, ParamGroup, ScheduleSpec, ScionState, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::{Checkpoint, TensorRecord};
use super::config::RunConfig;
use super::corpus::Corpus;
use super::HarnessError;

/// One evaluation record; one JSONL line per eval point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LogLine {
    pub run_id: String,
    pub step: u64,
    pub tokens: u64,
    pub raw_loss: f64,
    /// Assigned operator norm per parameter, plus
    /// `output_projection:rms-to-rms` as the alternative tracked norm.
    pub norms: BTreeMap<String, f64>,
    /// Schedule-resolved base learning rate at this point (multiply by the
    /// layout scale for a group's effective rate).
    pub lr_effective: f64,
    pub wall_ms: u64,
}

/// Sidecar metadata for one run (`<run_id>.meta.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub eta: f64,
    pub batch: usize,
    pub seed: u64,
    /// `[input, hidden, output]` learning-rate multipliers.
    pub layout: [f64; 3],
    pub vocab_size: usize,
    pub context: usize,
    pub horizons: Vec<u64>,
    pub schedule: String,
    pub smoothing: super::config::SmoothingConfig,
}

/// One sweep point.
#[derive(Debug, Clone, Copy)]
pub struct RunSpec {
    pub eta: f64,
    pub batch: usize,
    pub seed: u64,
    pub layout: [f64; 3],
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        format!(
            "lr{:e}_b{}_s{}_lay{:e}-{:e}-{:e}",
            self.eta, self.batch, self.seed, self.layout[0], self.layout[1], self.layout[2]
        )
    }
}

/// Per-horizon summary produced by a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub eta: f64,
    pub batch: usize,
    pub seed: u64,
    pub layout: [f64; 3],
    pub horizon: u64,
    pub loss: f64,
    pub norm_output_rms_to_inf: f64,
    pub norm_output_rms_to_rms: f64,
    pub norm_input_one_to_rms: f64,
    pub lr_effective: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<SummaryRow>,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

pub(crate) fn assigned_norms(bundle: &ParamBundle) -> Result<BTreeMap<String, f64>, HarnessError> {
    let mut norms = BTreeMap::new();
    for p in &bundle.params {
        let m = p.value.as_mat().expect("model params are dense");
        let value = match p.layer_group {
            LayerGroup::Input => op_norm_one_to_rms(m),
            LayerGroup::Hidden => {
                op_norm_rms_to_rms_with(m, crate::linalg::SPECTRAL_TOL, crate::linalg::SPECTRAL_MAX_ITER)
                    .map_err(|e| HarnessError::Io(format!("norm of {}: {e}", p.name)))?
            }
            LayerGroup::Output => op_norm_rms_to_inf(m),
        };
        norms.insert(p.name.clone(), value);
    }
    let out = bundle.output_projection();
    norms.insert(
        "output_projection:rms-to-rms".into(),
        op_norm_rms_to_rms_with(out, crate::linalg::SPECTRAL_TOL, crate::linalg::SPECTRAL_MAX_ITER)
            .map_err(|e| HarnessError::Io(format!("output rms-to-rms norm: {e}")))?,
    );
    Ok(norms)
}

fn schedule_for(cfg: &RunConfig) -> ScheduleSpec {
    match cfg.optimizer.schedule.as_str() {
        "linear-decay-tail" => ScheduleSpec::LinearDecayTail {
            total_horizon: *cfg.sweep.horizons.last().unwrap(),
            decay_fraction: cfg.optimizer.decay_fraction,
        },
        _ => ScheduleSpec::Constant,
    }
}

fn bundle_checkpoint(
    bundle: &ParamBundle,
    state: &ScionState,
    tokens: u64,
    step: u64,
) -> Checkpoint {
    let mut tensors = Vec::new();
    for (i, p) in bundle.params.iter().enumerate() {
        tensors.push(TensorRecord {
            name: p.name.clone(),
            role: 0,
            matrix: p.value.as_mat().unwrap().clone(),
        });
        if let Some(Tensor::Mat(m)) = state.buffer(i) {
            tensors.push(TensorRecord {
                name: p.name.clone(),
                role: 1,
                matrix: m.clone(),
            });
        }
    }
    Checkpoint {
        tokens,
        step,
        tensors,
    }
}

fn restore_checkpoint(
    bundle: &mut ParamBundle,
    state: &mut ScionState,
    ck: &Checkpoint,
) -> Result<(), HarnessError> {
    for t in &ck.tensors {
        let idx = bundle
            .params
            .iter()
            .position(|p| p.name == t.name)
            .ok_or_else(|| HarnessError::Io(format!("checkpoint tensor {} unknown", t.name)))?;
        match t.role {
            0 => bundle.params[idx].value = Tensor::Mat(t.matrix.clone()),
            1 => state.set_buffer(idx, Tensor::Mat(t.matrix.clone())),
            r => return Err(HarnessError::Io(format!("bad tensor role {r}"))),
        }
    }
    Ok(())
}

/// Trains one run to the last configured horizon, logging at every
/// `eval_every_tokens` boundary and at every horizon. Returns per-horizon
/// summary rows. A non-finite loss aborts with a pointer to the last
/// checkpoint written.
pub fn run_training(
    cfg: &RunConfig,
    spec: &RunSpec,
    corpus: &Corpus,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let run_id = spec.run_id();
    let context = cfg.data.context;
    let tokens_per_step = (spec.batch * context) as u64;
    let max_horizon = *cfg.sweep.horizons.last().unwrap();
    for &h in &cfg.sweep.horizons {
        if h % tokens_per_step != 0 {
            return Err(HarnessError::Config(format!(
                "horizon {h} is not a multiple of batch*context = {tokens_per_step}"
            )));
        }
    }
    corpus.check_horizon(context, max_horizon)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", out_dir.display())))?;

    let mut bundle = build_model(&cfg.model, &mut Rng::new(spec.seed))
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let schedule = schedule_for(cfg);
    let mut state = ScionState::new(
        bundle.n_params(),
        spec.eta,
        cfg.optimizer.momentum,
        cfg.optimizer.weight_decay,
        schedule,
        cfg.optimizer.ns_config(),
    );
    let groups = ParamGroup::standard(spec.layout[0], spec.layout[1], spec.layout[2]);

    let mut tokens = 0u64;
    let mut step = 0u64;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        restore_checkpoint(&mut bundle, &mut state, &ck)?;
        tokens = ck.tokens;
        step = ck.step;
    }

    let order = corpus.window_order(context, spec.seed);
    let meta = RunMeta {
        run_id: run_id.clone(),
        eta: spec.eta,
        batch: spec.batch,
        seed: spec.seed,
        layout: spec.layout,
        vocab_size: cfg.model.vocab_size,
        context,
        horizons: cfg.sweep.horizons.clone(),
        schedule: cfg.optimizer.schedule.clone(),
        smoothing: cfg.smoothing.clone(),
    };
    let meta_path = out_dir.join(format!("{run_id}.meta.json"));
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| HarnessError::Io(format!("{}: {e}", meta_path.display())))?;

    let log_path = out_dir.join(format!("{run_id}.jsonl"));
    let mut log = std::fs::File::create(&log_path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", log_path.display())))?;

    let started = Instant::now();
    let mut rows = Vec::new();
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut final_checkpoint = PathBuf::new();

    while tokens < max_horizon {
        let cursor = (step as usize) * spec.batch;
        let batch = corpus.take_batch(&order, cursor, spec.batch, context)?;
        let (loss, cache) = forward_loss(&bundle, &cfg.model, &batch)
            .map_err(|e| HarnessError::Io(format!("forward: {e}")))?;
        if !loss.is_finite() {
            return Err(HarnessError::NanLoss {
                run_id: run_id.clone(),
                step,
                last_checkpoint: last_checkpoint.clone(),
            });
        }
        let grads = backward(&bundle, &cfg.model, &cache);
        let base_lr = lr_at(&state.schedule.clone(), tokens, spec.eta)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        scion_step(
            &mut bundle.params,
            &grads_to_tensors(&grads),
            &mut state,
            &groups,
            base_lr,
        )
        .map_err(|e| HarnessError::Io(format!("optimizer: {e}")))?;
        step += 1;
        tokens += tokens_per_step;

        let at_eval = tokens.is_multiple_of(cfg.logging.eval_every_tokens);
        let at_horizon = cfg.sweep.horizons.binary_search(&tokens).is_ok();
        if at_eval || at_horizon {
            let norms = assigned_norms(&bundle)?;
            let lr_effective = lr_at(&state.schedule.clone(), tokens, spec.eta)
                .map_err(|e| HarnessError::Io(e.to_string()))?;
            let line = LogLine {
                run_id: run_id.clone(),
                step,
                tokens,
                raw_loss: loss,
                norms: norms.clone(),
                lr_effective,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            serde_json::to_writer(&mut log, &line)
                .map_err(|e| HarnessError::Io(e.to_string()))?;
            log.write_all(b"\n")
                .map_err(|e| HarnessError::Io(e.to_string()))?;

            if at_horizon {
                let ck_path = out_dir.join(format!("{run_id}.d{tokens}.ckpt"));
                bundle_checkpoint(&bundle, &state, tokens, step).save(&ck_path)?;
                last_checkpoint = Some(ck_path.clone());
                final_checkpoint = ck_path;
                rows.push(SummaryRow {
                    run_id: run_id.clone(),
                    eta: spec.eta,
                    batch: spec.batch,
                    seed: spec.seed,
                    layout: spec.layout,
                    horizon: tokens,
                    loss,
                    norm_output_rms_to_inf: norms["output_projection"],
                    norm_output_rms_to_rms: norms["output_projection:rms-to-rms"],
                    norm_input_one_to_rms: norms["input_embedding"],
                    lr_effective,
                });
            }
        }
    }

    Ok(TrainOutcome {
        rows,
        final_checkpoint,
        log_path,
    })
}
