//! The four distributed optimizer steps.
//!
//! * `step_ddp` — full replicas; rank `r` runs the LMO for parameters with
//!   index `i mod M = r` and the updates travel in `ceil(P/M)` bucketed
//!   all-gathers.
//! * `step_embedding` — row-sharded embedding-style tensors in storage
//!   layout; the 1->RMS and RMS->inf duals act on whole stored rows, so the
//!   LMO runs shard-locally with no communication.
//! * `step_experts` — expert-sharded 3D tensors; the batched LMO runs on
//!   local expert slices with no communication.
//! * `step_fsdp` — row-sharded hidden matrices; per bucket, shards travel
//!   through one all-to-all, the owning rank reconstructs the full gradient
//!   and runs the LMO, and a second all-to-all returns the row shards of
//!   the update (`2 * ceil(P/M)` all-to-alls total).
//!
//! Momentum buffers are updated (vectorized) before any of these steps; the
//! step consumes the post-update buffer.

use crate::linalg::{rms_vector_norm, Matrix2D};
use crate::lmo::{batched_lmo, dual, NewtonSchulzConfig};
use crate::norms::NormKind;
use crate::scion::{apply_update, Tensor};

use super::fabric::Communicator;
use super::{shard_range, DiscoError, DiscoParam, ShardedParam};

fn empty_padding() -> Tensor {
    // Padding sends are real (zero-sized) tensors so every rank issues the
    // same collective sequence on ragged buckets.
    Tensor::Mat(Matrix2D::zeros(0, 0))
}

fn fnv1a(acc: u64, bytes: &[u8]) -> u64 {
    let mut h = acc;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn replica_digest(params: &[DiscoParam]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in params {
        for v in p.value.data() {
            h = fnv1a(h, &v.to_bits().to_le_bytes());
        }
    }
    h
}

/// DDP step over full replicas. Detects replica divergence before doing any
/// work (out-of-band digest compare), computes round-robin-owned LMO
/// updates, distributes them in `ceil(P/M)` bucketed all-gathers, and
/// applies all updates in one vectorized pass.
pub fn step_ddp(
    params: &mut [DiscoParam],
    ns: &NewtonSchulzConfig,
    comm: &Communicator,
) -> Result<(), DiscoError> {
    let world = comm.world_size();
    let rank = comm.rank();
    let p_total = params.len();

    let digests = comm.debug_gather_word(replica_digest(params))?;
    if digests.iter().any(|&d| d != digests[0]) {
        return Err(DiscoError::ReplicaDivergence(format!(
            "pre-step digests differ across ranks: {digests:x?}"
        )));
    }

    // Step 1: local updates for owned parameters (i mod M = r).
    let mut updates: Vec<Option<Tensor>> = vec![None; p_total];
    for (i, p) in params.iter().enumerate() {
        if i % world == rank {
            updates[i] = Some(dual_tensor(p.kind, &p.momentum, ns)?);
        }
    }

    // Step 2: bucketed all-gathers.
    let total_buckets = p_total.div_ceil(world);
    for b in 0..total_buckets {
        let start = b * world;
        let end = (start + world).min(p_total);
        let my_idx = start + rank;
        let send = if my_idx < end {
            updates[my_idx].clone().expect("owned update computed")
        } else {
            empty_padding()
        };
        let gathered = comm.all_gather(send)?;
        for (j, u) in gathered.into_iter().enumerate().take(end - start) {
            updates[start + j] = Some(u);
        }
    }

    // Step 3: single vectorized apply.
    for (p, u) in params.iter_mut().zip(&updates) {
        let u = u.as_ref().expect("all updates distributed");
        apply_update(&mut p.value, u, p.lr, p.weight_decay);
    }
    Ok(())
}

fn dual_tensor(
    kind: NormKind,
    buf: &Tensor,
    ns: &NewtonSchulzConfig,
) -> Result<Tensor, DiscoError> {
    Ok(match buf {
        Tensor::Mat(m) => Tensor::Mat(dual(kind, m, ns)?),
        Tensor::Batch(b) => Tensor::Batch(batched_lmo(b, kind, ns, false)?),
    })
}

/// Row-wise dual on a storage-layout embedding shard.
///
/// Stored embeddings put the vocabulary on the first (sharded) axis. For
/// the input embedding the stored rows are the columns of the linear map,
/// so the 1->RMS dual normalizes each stored row to RMS 1; for the output
/// projection the stored rows are the map rows, so the RMS->inf dual
/// rescales each to RMS `1/d_in`. Both act on whole local rows, which is
/// what makes the shard-local step exact.
pub(crate) fn embedding_dual_rowwise(kind: NormKind, g: &Matrix2D, eps: f64) -> Result<Matrix2D, DiscoError> {
    let mut out = g.clone();
    let d_in = g.cols() as f64;
    for i in 0..g.rows() {
        // Scale expressions are kept bit-identical to the full-tensor duals
        // so shard-local steps replay the single-rank trajectory exactly:
        // the 1->RMS dual computes the column RMS as sqrt(ss/d) and the
        // RMS->inf dual as |row|_2 / sqrt(d).
        let scale = match kind {
            NormKind::OneToRms => {
                let row = g.row(i);
                let mut ss = 0.0;
                for v in row {
                    ss += v * v;
                }
                let rms = (ss / row.len() as f64).sqrt();
                if rms <= eps {
                    0.0
                } else {
                    1.0 / rms
                }
            }
            NormKind::RmsToInf => {
                let rms = rms_vector_norm(g.row(i)).expect("nonempty row");
                if rms <= eps {
                    0.0
                } else {
                    1.0 / (d_in * rms)
                }
            }
            NormKind::RmsToRms => {
                return Err(DiscoError::WrongKind {
                    param: "embedding step".into(),
                    kind,
                })
            }
        };
        for v in out.row_mut(i) {
            *v *= scale;
        }
    }
    Ok(out)
}

/// Embedding step: shard-local LMO, zero communication.
pub fn step_embedding(params: &mut [ShardedParam], eps: f64) -> Result<(), DiscoError> {
    let mut updates = Vec::with_capacity(params.len());
    for p in params.iter() {
        let buf = match &p.momentum {
            Tensor::Mat(m) => m,
            Tensor::Batch(_) => {
                return Err(DiscoError::ShardAxis(format!(
                    "{}: embedding step expects 2D shards",
                    p.name
                )))
            }
        };
        if matches!(p.kind, NormKind::RmsToRms) {
            return Err(DiscoError::WrongKind {
                param: p.name.clone(),
                kind: p.kind,
            });
        }
        updates.push(embedding_dual_rowwise(p.kind, buf, eps)?);
    }
    for (p, u) in params.iter_mut().zip(updates) {
        apply_update(&mut p.value, &Tensor::Mat(u), p.lr, p.weight_decay);
    }
    Ok(())
}

/// Experts step: batched LMO on local expert slices, zero communication.
/// The shard axis must be the expert axis (enforced by the 3D shard type).
pub fn step_experts(
    params: &mut [ShardedParam],
    ns: &NewtonSchulzConfig,
    transpose_experts: bool,
) -> Result<(), DiscoError> {
    let mut updates = Vec::with_capacity(params.len());
    for p in params.iter() {
        let buf = match &p.momentum {
            Tensor::Batch(b) => b,
            Tensor::Mat(_) => {
                return Err(DiscoError::ShardAxis(format!(
                    "{}: experts step expects (experts, d_out, d_in) shards sharded on the expert axis",
                    p.name
                )))
            }
        };
        updates.push(batched_lmo(buf, p.kind, ns, transpose_experts)?);
    }
    for (p, u) in params.iter_mut().zip(updates) {
        apply_update(&mut p.value, &Tensor::Batch(u), p.lr, p.weight_decay);
    }
    Ok(())
}

/// FSDP step over row-sharded matrices.
///
/// Per bucket of `M` parameters: every rank contributes its row shard of
/// each bucket member through one all-to-all; the rank assigned parameter
/// `start + r` concatenates the shards in rank order, runs the LMO on the
/// full gradient, splits the update by rows, and a second all-to-all
/// returns each rank its shard. Ragged buckets are padded with zero-sized
/// tensors so the collective count stays `2 * ceil(P/M)` exactly.
pub fn step_fsdp(
    params: &mut [ShardedParam],
    ns: &NewtonSchulzConfig,
    comm: &Communicator,
) -> Result<(), DiscoError> {
    let world = comm.world_size();
    let rank = comm.rank();
    let p_total = params.len();
    let total_buckets = p_total.div_ceil(world);

    let mut updates: Vec<Option<Matrix2D>> = vec![None; p_total];
    for b in 0..total_buckets {
        let start = b * world;
        let end = (start + world).min(p_total);

        // First exchange: my row shard of every bucket member.
        let mut send = Vec::with_capacity(world);
        for j in 0..world {
            let i = start + j;
            if i < end {
                let shard = match &params[i].momentum {
                    Tensor::Mat(m) => m.clone(),
                    Tensor::Batch(_) => {
                        return Err(DiscoError::ShardAxis(format!(
                            "{}: fsdp step expects 2D row shards",
                            params[i].name
                        )))
                    }
                };
                send.push(Tensor::Mat(shard));
            } else {
                send.push(empty_padding());
            }
        }
        let recv = comm.all_to_all(send)?;

        // Reconstruct and solve for my assigned parameter, if any.
        let my_param = start + rank;
        let split = if my_param < end {
            let full = concat_rows(&recv, &params[my_param], world)?;
            let u = dual(params[my_param].kind, &full, ns)?;
            split_rows(&u, world)
        } else {
            vec![empty_padding(); world]
        };
        let returned = comm.all_to_all(split)?;
        for (j, u) in returned.into_iter().enumerate().take(end - start) {
            match u {
                Tensor::Mat(m) => updates[start + j] = Some(m),
                Tensor::Batch(_) => unreachable!("fsdp updates are 2D"),
            }
        }
    }

    // Single vectorized apply.
    for (p, u) in params.iter_mut().zip(&updates) {
        let u = u.as_ref().expect("all shards updated");
        apply_update(&mut p.value, &Tensor::Mat(u.clone()), p.lr, p.weight_decay);
    }
    Ok(())
}

fn concat_rows(
    recv: &[Tensor],
    target: &ShardedParam,
    world: usize,
) -> Result<Matrix2D, DiscoError> {
    let cols = match &target.momentum {
        Tensor::Mat(m) => m.cols(),
        Tensor::Batch(_) => unreachable!("checked by caller"),
    };
    let mut full = Matrix2D::zeros(target.full_dim0, cols);
    let mut row = 0usize;
    for (j, t) in recv.iter().enumerate() {
        let shard = match t {
            Tensor::Mat(m) => m,
            Tensor::Batch(_) => {
                return Err(DiscoError::ShardMismatch(format!(
                    "{}: rank {j} sent a 3D shard",
                    target.name
                )))
            }
        };
        let (lo, hi) = shard_range(target.full_dim0, world, j);
        if shard.rows() != hi - lo || (shard.rows() > 0 && shard.cols() != cols) {
            return Err(DiscoError::ShardMismatch(format!(
                "{}: rank {j} sent {}x{}, expected {}x{}",
                target.name,
                shard.rows(),
                shard.cols(),
                hi - lo,
                cols
            )));
        }
        for i in 0..shard.rows() {
            full.row_mut(row)[..].copy_from_slice(shard.row(i));
            row += 1;
        }
    }
    Ok(full)
}

fn split_rows(u: &Matrix2D, world: usize) -> Vec<Tensor> {
    (0..world)
        .map(|j| {
            let (lo, hi) = shard_range(u.rows(), world, j);
            let mut shard = Matrix2D::zeros(hi - lo, u.cols());
            for i in lo..hi {
                shard.row_mut(i - lo).copy_from_slice(u.row(i));
            }
            Tensor::Mat(shard)
        })
        .collect()
}
