//! The Scion optimizer: momentum accumulation, per-group duality-map
//! dispatch, unconstrained and weight-decay (constrained) updates, and the
//! learning-rate schedule with per-layer-group multipliers.
//!
//! Update rule per parameter, with `u = dual(buffer)` under the group's
//! assigned norm:
//!
//! * unconstrained: `W <- W - lr * u`
//! * constrained (`lambda > 0`, decoupled): `W <- W - lr * (u + lambda W)`,
//!   which drives the assigned norm of `W` toward `|u|/lambda`.
//!
//! Momentum uses the interpolation form `buf <- (1-mu) g + mu buf`, so
//! `mu = 0` makes the buffer equal the latest gradient.

use crate::linalg::{Batch3D, Matrix2D};
use crate::lmo::{batched_lmo, dual, NewtonSchulzConfig};
use crate::norms::NormKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScionError {
    #[error("shape mismatch for parameter {0}")]
    ShapeMismatch(String),
    #[error("parameter {0} is not covered by any group")]
    Uncovered(String),
    #[error("non-finite update for parameter {0}")]
    NonFiniteUpdate(String),
    #[error("tokens_seen {seen} exceeds total horizon {horizon}")]
    PastHorizon { seen: u64, horizon: u64 },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Layer-group tag; every trainable parameter carries exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerGroup {
    Input,
    Hidden,
    Output,
}

impl LayerGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerGroup::Input => "input",
            LayerGroup::Hidden => "hidden",
            LayerGroup::Output => "output",
        }
    }
}

/// Named set of parameters sharing a norm assignment and an LR multiplier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub layer_group: LayerGroup,
    pub norm: NormKind,
    pub lr_scale: f64,
}

impl ParamGroup {
    /// The standard layer-group layout: input embeddings under 1->RMS,
    /// interior maps under RMS->RMS, output projection under RMS->inf.
    pub fn standard(input_scale: f64, hidden_scale: f64, output_scale: f64) -> Vec<ParamGroup> {
        vec![
            ParamGroup {
                name: "input".into(),
                layer_group: LayerGroup::Input,
                norm: NormKind::OneToRms,
                lr_scale: input_scale,
            },
            ParamGroup {
                name: "hidden".into(),
                layer_group: LayerGroup::Hidden,
                norm: NormKind::RmsToRms,
                lr_scale: hidden_scale,
            },
            ParamGroup {
                name: "output".into(),
                layer_group: LayerGroup::Output,
                norm: NormKind::RmsToInf,
                lr_scale: output_scale,
            },
        ]
    }
}

/// Learning-rate schedule over a token horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScheduleSpec {
    /// Constant LR, no warmup, no decay.
    Constant,
    /// Constant LR, then linear decay to zero over the final
    /// `decay_fraction` of the horizon.
    LinearDecayTail {
        total_horizon: u64,
        decay_fraction: f64,
    },
}

/// `lr(t)` for `t = tokens_seen`. Continuous in `t`; errors past the
/// horizon of a decaying schedule.
pub fn lr_at(schedule: &ScheduleSpec, tokens_seen: u64, base_lr: f64) -> Result<f64, ScionError> {
    match schedule {
        ScheduleSpec::Constant => Ok(base_lr),
        ScheduleSpec::LinearDecayTail {
            total_horizon,
            decay_fraction,
        } => {
            if tokens_seen > *total_horizon {
                return Err(ScionError::PastHorizon {
                    seen: tokens_seen,
                    horizon: *total_horizon,
                });
            }
            let t = tokens_seen as f64;
            let horizon = *total_horizon as f64;
            let decay_start = (1.0 - decay_fraction) * horizon;
            if t < decay_start {
                Ok(base_lr)
            } else {
                Ok(base_lr * (horizon - t) / (horizon - decay_start))
            }
        }
    }
}

/// Parameter-or-expert tensor; momentum buffers mirror the shape.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Mat(Matrix2D),
    Batch(Batch3D),
}

impl Tensor {
    pub fn same_shape(&self, other: &Tensor) -> bool {
        match (self, other) {
            (Tensor::Mat(a), Tensor::Mat(b)) => (a.rows(), a.cols()) == (b.rows(), b.cols()),
            (Tensor::Batch(a), Tensor::Batch(b)) => {
                (a.experts(), a.rows(), a.cols()) == (b.experts(), b.rows(), b.cols())
            }
            _ => false,
        }
    }

    pub fn zeros_like(&self) -> Tensor {
        match self {
            Tensor::Mat(m) => Tensor::Mat(Matrix2D::zeros(m.rows(), m.cols())),
            Tensor::Batch(b) => Tensor::Batch(Batch3D::zeros(b.experts(), b.rows(), b.cols())),
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Tensor::Mat(m) => m.data(),
            Tensor::Batch(b) => b.data(),
        }
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        match self {
            Tensor::Mat(m) => m.data_mut(),
            Tensor::Batch(b) => b.data_mut(),
        }
    }

    pub fn as_mat(&self) -> Option<&Matrix2D> {
        match self {
            Tensor::Mat(m) => Some(m),
            Tensor::Batch(_) => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

/// Global hyperparameters plus one momentum buffer per parameter.
#[derive(Debug, Clone)]
pub struct ScionState {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Kept for interface completeness; Nesterov is never enabled here.
    pub nesterov: bool,
    pub schedule: ScheduleSpec,
    pub ns: NewtonSchulzConfig,
    buffers: Vec<Option<Tensor>>,
}

impl ScionState {
    pub fn new(
        n_params: usize,
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
        schedule: ScheduleSpec,
        ns: NewtonSchulzConfig,
    ) -> Self {
        assert!((0.0..1.0).contains(&momentum), "momentum in [0,1)");
        assert!(weight_decay >= 0.0);
        ScionState {
            base_lr,
            momentum,
            weight_decay,
            nesterov: false,
            schedule,
            ns,
            buffers: vec![None; n_params],
        }
    }

    pub fn n_params(&self) -> usize {
        self.buffers.len()
    }

    pub fn buffer(&self, param_id: usize) -> Option<&Tensor> {
        self.buffers[param_id].as_ref()
    }

    /// Installs a buffer directly; used when restoring checkpoints and when
    /// sharding state across simulated ranks.
    pub fn set_buffer(&mut self, param_id: usize, buf: Tensor) {
        self.buffers[param_id] = Some(buf);
    }
}

/// `buf <- (1-mu) grad + mu buf`; returns a view of the updated buffer.
/// An absent buffer starts at zero.
pub fn momentum_update<'a>(
    state: &'a mut ScionState,
    param_id: usize,
    grad: &Tensor,
) -> Result<&'a Tensor, ScionError> {
    let mu = state.momentum;
    let slot = &mut state.buffers[param_id];
    match slot {
        None => {
            let mut buf = grad.clone();
            if mu != 0.0 {
                for v in buf.data_mut() {
                    *v *= 1.0 - mu;
                }
            }
            *slot = Some(buf);
        }
        Some(buf) => {
            if !buf.same_shape(grad) {
                return Err(ScionError::ShapeMismatch(format!("param {param_id}")));
            }
            for (b, g) in buf.data_mut().iter_mut().zip(grad.data()) {
                *b = (1.0 - mu) * g + mu * *b;
            }
        }
    }
    Ok(slot.as_ref().unwrap())
}

/// One named trainable parameter bound to a layer group.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub layer_group: LayerGroup,
    pub value: Tensor,
}

impl Param {
    pub fn mat(name: impl Into<String>, layer_group: LayerGroup, value: Matrix2D) -> Param {
        Param {
            name: name.into(),
            layer_group,
            value: Tensor::Mat(value),
        }
    }
}

fn group_for<'g>(groups: &'g [ParamGroup], p: &Param) -> Result<&'g ParamGroup, ScionError> {
    groups
        .iter()
        .find(|g| g.layer_group == p.layer_group)
        .ok_or_else(|| ScionError::Uncovered(p.name.clone()))
}

/// Computes the dual of a tensor buffer under `kind`. Expert batches take
/// the batched path with the canonical `(experts, d_out, d_in)` layout.
pub fn dual_tensor(
    kind: NormKind,
    buf: &Tensor,
    ns: &NewtonSchulzConfig,
) -> Result<Tensor, ScionError> {
    Ok(match buf {
        Tensor::Mat(m) => Tensor::Mat(dual(kind, m, ns)?),
        Tensor::Batch(b) => Tensor::Batch(batched_lmo(b, kind, ns, false)?),
    })
}

/// One optimizer step over all parameters.
///
/// `grads` parallels `params`; `base_lr_at_t` is the schedule-resolved base
/// rate (the per-group multiplier is applied here). Updates are independent
/// across parameters, so application order cannot affect the result.
pub fn scion_step(
    params: &mut [Param],
    grads: &[Tensor],
    state: &mut ScionState,
    groups: &[ParamGroup],
    base_lr_at_t: f64,
) -> Result<(), ScionError> {
    assert_eq!(params.len(), grads.len(), "grads must parallel params");
    assert_eq!(params.len(), state.n_params(), "state sized for params");
    let lambda = state.weight_decay;
    let ns = state.ns;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if !p.value.same_shape(g) {
            return Err(ScionError::ShapeMismatch(p.name.clone()));
        }
        let group = group_for(groups, p)?;
        let lr = base_lr_at_t * group.lr_scale;
        let buf = momentum_update(state, i, g)?;
        let u = dual_tensor(group.norm, buf, &ns)?;
        if !u.all_finite() {
            return Err(ScionError::NonFiniteUpdate(p.name.clone()));
        }
        apply_update(&mut p.value, &u, lr, lambda);
        if !p.value.all_finite() {
            return Err(ScionError::NonFiniteUpdate(p.name.clone()));
        }
    }
    Ok(())
}

/// `W <- W - lr * (u + lambda * W)`, elementwise.
pub fn apply_update(value: &mut Tensor, u: &Tensor, lr: f64, lambda: f64) {
    for (w, du) in value.data_mut().iter_mut().zip(u.data()) {
        *w -= lr * (du + lambda * *w);
    }
}
