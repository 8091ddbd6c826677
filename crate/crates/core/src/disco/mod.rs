//! Simulated multi-rank optimizer steps over a deterministic in-process
//! collective fabric, with equivalence helpers against the single-rank
//! reference.
//!
//! Parameters are sharded along the first dimension ("Shard(0)"):
//! concatenating local shards over ranks in rank order reconstructs the
//! full tensor. Embedding-style tensors are handled in storage layout
//! (vocabulary first), expert tensors on the expert axis, and hidden
//! matrices in map layout (output dimension first).

mod fabric;
mod steps;

pub use fabric::{CollectiveCounts, Communicator, Fabric};
pub use steps::{step_ddp, step_embedding, step_experts, step_fsdp};

use crate::linalg::{Batch3D, LinalgError, Matrix2D};
use crate::lmo::{batched_lmo, dual, NewtonSchulzConfig, DUAL_EPS};
use crate::norms::NormKind;
use crate::scion::{apply_update, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscoError {
    #[error("collective sequence mismatch: {0}")]
    SequenceMismatch(String),
    #[error("collective deadlock at seq {seq} on rank {rank}")]
    DeadlockTimeout { seq: u64, rank: usize },
    #[error("all_to_all send list has {got} entries, world size is {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("replica divergence: {0}")]
    ReplicaDivergence(String),
    #[error("norm kind {kind} cannot be stepped here ({param})")]
    WrongKind { param: String, kind: NormKind },
    #[error("shard axis violation: {0}")]
    ShardAxis(String),
    #[error("shard mismatch at concat: {0}")]
    ShardMismatch(String),
    #[error("rank thread failure: {0}")]
    Thread(String),
    #[error(transparent)]
    Lmo(#[from] LinalgError),
}

/// Fully replicated parameter as seen by one DDP rank.
#[derive(Debug, Clone)]
pub struct DiscoParam {
    pub name: String,
    pub kind: NormKind,
    /// Effective learning rate (schedule and group scale already applied).
    pub lr: f64,
    pub weight_decay: f64,
    pub value: Tensor,
    /// Momentum buffer after the (vectorized) momentum update.
    pub momentum: Tensor,
}

/// Local first-dimension shard of a parameter, plus enough metadata to
/// reconstruct the full tensor.
#[derive(Debug, Clone)]
pub struct ShardedParam {
    pub name: String,
    pub kind: NormKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Full size of the sharded first dimension.
    pub full_dim0: usize,
    pub value: Tensor,
    pub momentum: Tensor,
}

/// Balanced contiguous split of `n` items over `world` ranks: the first
/// `n % world` ranks hold one extra item.
pub fn shard_range(n: usize, world: usize, rank: usize) -> (usize, usize) {
    let base = n / world;
    let rem = n % world;
    let lo = rank * base + rank.min(rem);
    let hi = lo + base + usize::from(rank < rem);
    (lo, hi)
}

/// Extracts rank `rank`'s row block.
pub fn shard_matrix_rows(m: &Matrix2D, world: usize, rank: usize) -> Matrix2D {
    let (lo, hi) = shard_range(m.rows(), world, rank);
    let mut out = Matrix2D::zeros(hi - lo, m.cols());
    for i in lo..hi {
        out.row_mut(i - lo).copy_from_slice(m.row(i));
    }
    out
}

/// Concatenates row shards in rank order.
pub fn concat_matrix_shards(shards: &[Matrix2D]) -> Matrix2D {
    let rows: usize = shards.iter().map(Matrix2D::rows).sum();
    let cols = shards.iter().find(|s| s.rows() > 0).map_or(0, |s| s.cols());
    let mut out = Matrix2D::zeros(rows, cols);
    let mut r = 0;
    for s in shards {
        for i in 0..s.rows() {
            out.row_mut(r).copy_from_slice(s.row(i));
            r += 1;
        }
    }
    out
}

/// Extracts rank `rank`'s expert block.
pub fn shard_batch_experts(b: &Batch3D, world: usize, rank: usize) -> Batch3D {
    let (lo, hi) = shard_range(b.experts(), world, rank);
    let mut out = Batch3D::zeros(hi - lo, b.rows(), b.cols());
    for e in lo..hi {
        out.set_slice(e - lo, &b.slice(e));
    }
    out
}

/// Single-rank reference step: dual of the momentum buffer under the
/// assigned norm, then `W <- W - lr (u + lambda W)`.
pub fn reference_step(params: &mut [DiscoParam], ns: &NewtonSchulzConfig) -> Result<(), DiscoError> {
    for p in params.iter_mut() {
        let u = match &p.momentum {
            Tensor::Mat(m) => Tensor::Mat(dual(p.kind, m, ns)?),
            Tensor::Batch(b) => Tensor::Batch(batched_lmo(b, p.kind, ns, false)?),
        };
        apply_update(&mut p.value, &u, p.lr, p.weight_decay);
    }
    Ok(())
}

fn bitwise_eq(a: &Tensor, b: &Tensor) -> bool {
    a.data().len() == b.data().len()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Runs `step_ddp` across `world` simulated ranks holding clones of
/// `params`, checks all replicas agree bitwise afterwards, writes the
/// result back, and returns the per-rank collective counts.
pub fn run_ddp(
    world: usize,
    params: &mut Vec<DiscoParam>,
    ns: &NewtonSchulzConfig,
) -> Result<CollectiveCounts, DiscoError> {
    let fabric = Fabric::new(world);
    let results = fabric.run(|comm| {
        let mut local = params.clone();
        step_ddp(&mut local, ns, &comm)?;
        Ok((local, comm.counts()))
    })?;
    let counts = results[0].1;
    for (rank, (replica, c)) in results.iter().enumerate() {
        if *c != counts {
            return Err(DiscoError::ReplicaDivergence(format!(
                "rank {rank} collective counts {c:?} != {counts:?}"
            )));
        }
        for (a, b) in replica.iter().zip(&results[0].0) {
            if !bitwise_eq(&a.value, &b.value) {
                return Err(DiscoError::ReplicaDivergence(format!(
                    "rank {rank} parameter {} differs post-step",
                    a.name
                )));
            }
        }
    }
    *params = results.into_iter().next().unwrap().0;
    Ok(counts)
}

/// Runs `step_fsdp` on row shards of `params`, reassembles the updated
/// full tensors, writes them back, and returns the collective counts.
pub fn run_fsdp(
    world: usize,
    params: &mut [DiscoParam],
    ns: &NewtonSchulzConfig,
) -> Result<CollectiveCounts, DiscoError> {
    let fabric = Fabric::new(world);
    let results = fabric.run(|comm| {
        let rank = comm.rank();
        let mut local: Vec<ShardedParam> = params
            .iter()
            .map(|p| {
                let (value, momentum, dim0) = match (&p.value, &p.momentum) {
                    (Tensor::Mat(v), Tensor::Mat(m)) => (
                        Tensor::Mat(shard_matrix_rows(v, world, rank)),
                        Tensor::Mat(shard_matrix_rows(m, world, rank)),
                        v.rows(),
                    ),
                    _ => {
                        return Err(DiscoError::ShardAxis(format!(
                            "{}: fsdp wrapper shards 2D tensors",
                            p.name
                        )))
                    }
                };
                Ok(ShardedParam {
                    name: p.name.clone(),
                    kind: p.kind,
                    lr: p.lr,
                    weight_decay: p.weight_decay,
                    full_dim0: dim0,
                    value,
                    momentum,
                })
            })
            .collect::<Result<_, _>>()?;
        step_fsdp(&mut local, ns, &comm)?;
        let shards: Vec<Matrix2D> = local
            .into_iter()
            .map(|p| match p.value {
                Tensor::Mat(m) => m,
                Tensor::Batch(_) => unreachable!(),
            })
            .collect();
        Ok((shards, comm.counts()))
    })?;

    let counts = results[0].1;
    for (rank, (_, c)) in results.iter().enumerate() {
        if *c != counts {
            return Err(DiscoError::ReplicaDivergence(format!(
                "rank {rank} collective counts {c:?} != {counts:?}"
            )));
        }
    }
    for (i, p) in params.iter_mut().enumerate() {
        let shards: Vec<Matrix2D> = results.iter().map(|(s, _)| s[i].clone()).collect();
        let full = concat_matrix_shards(&shards);
        p.value = Tensor::Mat(full);
    }
    Ok(counts)
}

/// Report from one randomized equivalence run, as emitted by `disco-check`.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub mode: &'static str,
    pub world: usize,
    pub n_params: usize,
    pub max_abs_err: f64,
    pub bitwise: bool,
    pub counts: CollectiveCounts,
    pub expected_counts: CollectiveCounts,
    pub pass: bool,
}

/// Randomized distributed-vs-reference check used by the CLI and the
/// acceptance suite. Parameter shapes and kinds are derived from `seed`.
pub fn equivalence_check(
    mode: &str,
    world: usize,
    n_params: usize,
    seed: u64,
    ns: &NewtonSchulzConfig,
) -> Result<CheckReport, DiscoError> {
    use crate::linalg::Rng;
    let mut rng = Rng::new(seed);
    let buckets = n_params.div_ceil(world) as u64;

    let mk_mat = |rows: usize, cols: usize, rng: &mut Rng| Matrix2D::gaussian(rows, cols, rng);

    match mode {
        "ddp" | "fsdp" => {
            let kinds = [NormKind::OneToRms, NormKind::RmsToRms, NormKind::RmsToInf];
            let mut params: Vec<DiscoParam> = (0..n_params)
                .map(|i| {
                    let rows = 4 + rng.below(13) as usize;
                    let cols = 4 + rng.below(13) as usize;
                    let kind = if mode == "fsdp" {
                        // FSDP is the hidden-matrix path.
                        NormKind::RmsToRms
                    } else {
                        kinds[i % kinds.len()]
                    };
                    DiscoParam {
                        name: format!("p{i}"),
                        kind,
                        lr: 0.1,
                        weight_decay: if i % 2 == 0 { 0.0 } else { 0.01 },
                        value: Tensor::Mat(mk_mat(rows, cols, &mut rng)),
                        momentum: Tensor::Mat(mk_mat(rows, cols, &mut rng)),
                    }
                })
                .collect();
            let mut reference = params.clone();
            reference_step(&mut reference, ns)?;
            let counts = if mode == "ddp" {
                run_ddp(world, &mut params, ns)?
            } else {
                run_fsdp(world, &mut params, ns)?
            };
            let expected = if mode == "ddp" {
                CollectiveCounts {
                    all_gather: buckets,
                    all_to_all: 0,
                }
            } else {
                CollectiveCounts {
                    all_gather: 0,
                    all_to_all: 2 * buckets,
                }
            };
            let mut max_err = 0.0f64;
            let mut bitwise = true;
            for (a, b) in params.iter().zip(&reference) {
                let (am, bm) = (a.value.as_mat().unwrap(), b.value.as_mat().unwrap());
                max_err = max_err.max(am.max_abs_diff(bm));
                bitwise &= bitwise_eq(&a.value, &b.value);
            }
            Ok(CheckReport {
                mode: if mode == "ddp" { "ddp" } else { "fsdp" },
                world,
                n_params,
                max_abs_err: max_err,
                bitwise,
                counts,
                expected_counts: expected,
                pass: max_err <= 1e-6 && counts == expected,
            })
        }
        "embedding" => {
            let kinds = [NormKind::OneToRms, NormKind::RmsToInf];
            let mut max_err = 0.0f64;
            let mut bitwise = true;
            let mut counts = CollectiveCounts::default();
            for i in 0..n_params {
                let rows = world + rng.below(24) as usize;
                let cols = 4 + rng.below(13) as usize;
                let kind = kinds[i % 2];
                let full_value = mk_mat(rows, cols, &mut rng);
                let full_grad = mk_mat(rows, cols, &mut rng);
                // Reference: row-wise dual on the full stored tensor.
                let mut want = full_value.clone();
                let u = steps::embedding_dual_rowwise(kind, &full_grad, DUAL_EPS)?;
                want.add_scaled(&u, -0.1);

                // Sharded: per-rank local step inside a fabric, counting
                // collectives to demonstrate the zero-communication claim.
                let fabric = Fabric::new(world);
                let results = fabric.run(|comm| {
                    let rank = comm.rank();
                    let mut local = vec![ShardedParam {
                        name: format!("emb{i}"),
                        kind,
                        lr: 0.1,
                        weight_decay: 0.0,
                        full_dim0: rows,
                        value: Tensor::Mat(shard_matrix_rows(&full_value, world, rank)),
                        momentum: Tensor::Mat(shard_matrix_rows(&full_grad, world, rank)),
                    }];
                    step_embedding(&mut local, DUAL_EPS)?;
                    let m = match local.into_iter().next().unwrap().value {
                        Tensor::Mat(m) => m,
                        Tensor::Batch(_) => unreachable!(),
                    };
                    Ok((m, comm.counts()))
                })?;
                let shards: Vec<Matrix2D> = results.iter().map(|(m, _)| m.clone()).collect();
                let got = concat_matrix_shards(&shards);
                max_err = max_err.max(got.max_abs_diff(&want));
                bitwise &= got
                    .data()
                    .iter()
                    .zip(want.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                for (_, c) in &results {
                    counts.all_gather += c.all_gather;
                    counts.all_to_all += c.all_to_all;
                }
            }
            let expected = CollectiveCounts::default();
            Ok(CheckReport {
                mode: "embedding",
                world,
                n_params,
                max_abs_err: max_err,
                bitwise,
                counts,
                expected_counts: expected,
                pass: max_err <= 1e-6 && counts == expected,
            })
        }
        "experts" => {
            let mut max_err = 0.0f64;
            let mut bitwise = true;
            let mut counts = CollectiveCounts::default();
            for i in 0..n_params {
                let experts = world * (1 + rng.below(3) as usize);
                let rows = 4 + rng.below(9) as usize;
                let cols = 4 + rng.below(9) as usize;
                let full_value = Batch3D::from_slices(
                    &(0..experts)
                        .map(|_| mk_mat(rows, cols, &mut rng))
                        .collect::<Vec<_>>(),
                );
                let full_grad = Batch3D::from_slices(
                    &(0..experts)
                        .map(|_| mk_mat(rows, cols, &mut rng))
                        .collect::<Vec<_>>(),
                );
                let mut want = full_value.clone();
                let u = batched_lmo(&full_grad, NormKind::RmsToRms, ns, false)?;
                for (w, du) in want.data_mut().iter_mut().zip(u.data()) {
                    *w -= 0.1 * du;
                }

                let fabric = Fabric::new(world);
                let results = fabric.run(|comm| {
                    let rank = comm.rank();
                    let mut local = vec![ShardedParam {
                        name: format!("experts{i}"),
                        kind: NormKind::RmsToRms,
                        lr: 0.1,
                        weight_decay: 0.0,
                        full_dim0: experts,
                        value: Tensor::Batch(shard_batch_experts(&full_value, world, rank)),
                        momentum: Tensor::Batch(shard_batch_experts(&full_grad, world, rank)),
                    }];
                    step_experts(&mut local, ns, false)?;
                    let b = match local.into_iter().next().unwrap().value {
                        Tensor::Batch(b) => b,
                        Tensor::Mat(_) => unreachable!(),
                    };
                    Ok((b, comm.counts()))
                })?;
                let mut got = Batch3D::zeros(experts, rows, cols);
                let mut e0 = 0usize;
                for (b, _) in &results {
                    for e in 0..b.experts() {
                        got.set_slice(e0, &b.slice(e));
                        e0 += 1;
                    }
                }
                for (a, b) in got.data().iter().zip(want.data()) {
                    max_err = max_err.max((a - b).abs());
                    bitwise &= a.to_bits() == b.to_bits();
                }
                for (_, c) in &results {
                    counts.all_gather += c.all_gather;
                    counts.all_to_all += c.all_to_all;
                }
            }
            let expected = CollectiveCounts::default();
            Ok(CheckReport {
                mode: "experts",
                world,
                n_params,
                max_abs_err: max_err,
                bitwise,
                counts,
                expected_counts: expected,
                pass: max_err <= 1e-6 && counts == expected,
            })
        }
        other => Err(DiscoError::Thread(format!("unknown mode {other}"))),
    }
}
