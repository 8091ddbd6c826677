//! normlab: a desk-scale laboratory for norm-based optimization.
//!
//! The crate provides, bottom to top:
//!
//! * [`linalg`] — dense matrices, deterministic RNG, initializers, power
//!   iteration and a Jacobi SVD oracle;
//! * [`norms`] — the three induced operator norms (1->RMS, RMS->RMS,
//!   RMS->inf) plus a brute-force estimator;
//! * [`lmo`] — duality maps for each norm, including Newton-Schulz
//!   orthogonalization and batched expert variants;
//! * [`scion`] — the Scion optimizer (momentum, per-group LMO dispatch,
//!   weight decay, LR schedules);
//! * [`model`] — a decoder-only transformer with RMS normalization in
//!   front of every linear map, manual backprop, and depth-scaling
//!   ablations;
//! * [`disco`] — simulated multi-rank optimizer steps (DDP / embedding /
//!   experts / FSDP) over a deterministic in-process collective fabric;
//! * [`analysis`] — loss smoothing, loss-vs-norm fitting, the 6-variant
//!   uncertainty ensemble, and scaling-rule regressions;
//! * [`harness`] — config, corpus ingestion, training/sweep orchestration,
//!   JSONL logs, CSV/SVG reports.

pub mod analysis;
pub mod disco;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod lmo;
pub mod norms;
pub mod scion;
