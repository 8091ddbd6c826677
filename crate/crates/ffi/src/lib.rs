//! C ABI over the normlab numeric kernels.
//!
//! Conventions:
//!
//! * Handles (`NlMatrix`, `NlScion`) are opaque; create with `*_new`, free
//!   with the matching `*_free`. Passing any other pointer is undefined
//!   behavior; passing NULL is caught and reported.
//! * Fallible calls return [`NlStatus`]; `NL_STATUS_OK` is 0. On failure a
//!   thread-local message is set, readable via
//!   [`nl_last_error_message`].
//! * Matrices are dense row-major `double` in map convention: shape
//!   `(d_out, d_in)`.

use normlab::linalg::{rms_vector_norm, spectral_norm, Matrix2D};
use normlab::lmo::{dual, newton_schulz, NewtonSchulzConfig};
use normlab::norms::{op_norm, NormKind};
use std::cell::RefCell;
use std::ffi::c_char;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status code of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericError = 3,
}

/// Operator norm selector, matching the optimizer's layer-group
/// assignments.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlNormKind {
    OneToRms = 0,
    RmsToRms = 1,
    RmsToInf = 2,
}

impl From<NlNormKind> for NormKind {
    fn from(k: NlNormKind) -> NormKind {
        match k {
            NlNormKind::OneToRms => NormKind::OneToRms,
            NlNormKind::RmsToRms => NormKind::RmsToRms,
            NlNormKind::RmsToInf => NormKind::RmsToInf,
        }
    }
}

/// Opaque dense matrix handle.
pub struct NlMatrix {
    inner: Matrix2D,
}

/// Opaque single-parameter Scion optimizer handle (momentum buffer plus
/// hyperparameters; the duality map follows the configured norm kind).
pub struct NlScion {
    kind: NormKind,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    ns: NewtonSchulzConfig,
    buffer: Option<Matrix2D>,
}

/// Copies the last error message for this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
/// # Safety
///
/// `buf` must be NULL or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Allocates a `rows x cols` matrix, copying `rows*cols` doubles from
/// `data` (row-major). NULL `data` zero-fills. Returns NULL on invalid
/// dimensions.
/// # Safety
///
/// `data` must be NULL or valid for `rows*cols` reads.
#[no_mangle]
pub unsafe extern "C" fn nl_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
) -> *mut NlMatrix {
    if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none() {
        set_error(format!("invalid matrix shape {rows}x{cols}"));
        return std::ptr::null_mut();
    }
    let inner = if data.is_null() {
        Matrix2D::zeros(rows, cols)
    } else {
        let slice = unsafe { std::slice::from_raw_parts(data, rows * cols) };
        Matrix2D::from_vec(rows, cols, slice.to_vec())
    };
    Box::into_raw(Box::new(NlMatrix { inner }))
}

/// Frees a matrix created by this library. NULL is a no-op.
/// # Safety
///
/// `m` must be NULL or a pointer returned by `nl_matrix_new`/`nl_dual`/`nl_newton_schulz`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nl_matrix_free(m: *mut NlMatrix) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// # Safety
///
/// `m` must be NULL or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn nl_matrix_rows(m: *const NlMatrix) -> usize {
    if m.is_null() {
        return 0;
    }
    unsafe { &*m }.inner.rows()
}

/// # Safety
///
/// `m` must be NULL or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn nl_matrix_cols(m: *const NlMatrix) -> usize {
    if m.is_null() {
        return 0;
    }
    unsafe { &*m }.inner.cols()
}

/// Copies the matrix contents (row-major) into `out`, which must hold
/// `rows*cols` doubles.
/// # Safety
///
/// `m` must be a live handle; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nl_matrix_copy_data(
    m: *const NlMatrix,
    out: *mut f64,
    len: usize,
) -> NlStatus {
    if m.is_null() || out.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    let inner = &unsafe { &*m }.inner;
    let need = inner.rows() * inner.cols();
    if len < need {
        set_error(format!("buffer holds {len}, need {need}"));
        return NlStatus::InvalidArgument;
    }
    unsafe { std::ptr::copy_nonoverlapping(inner.data().as_ptr(), out, need) };
    NlStatus::Ok
}

/// `|x|_2 / sqrt(len)`.
/// # Safety
///
/// `x` must be valid for `len` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn nl_rms_vector_norm(x: *const f64, len: usize, out: *mut f64) -> NlStatus {
    if x.is_null() || out.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    let slice = unsafe { std::slice::from_raw_parts(x, len) };
    match rms_vector_norm(slice) {
        Ok(v) => {
            unsafe { *out = v };
            NlStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            NlStatus::InvalidArgument
        }
    }
}

/// The operator norm assigned by `kind` (1->RMS, RMS->RMS via power
/// iteration, or RMS->inf).
/// # Safety
///
/// `w` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nl_op_norm(
    kind: NlNormKind,
    w: *const NlMatrix,
    out: *mut f64,
) -> NlStatus {
    if w.is_null() || out.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    match op_norm(kind.into(), &unsafe { &*w }.inner) {
        Ok(v) => {
            unsafe { *out = v };
            NlStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            NlStatus::NumericError
        }
    }
}

/// Largest singular value by power iteration.
/// # Safety
///
/// `w` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nl_spectral_norm(
    w: *const NlMatrix,
    tol: f64,
    max_iter: usize,
    out: *mut f64,
) -> NlStatus {
    if w.is_null() || out.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    match spectral_norm(&unsafe { &*w }.inner, tol, max_iter) {
        Ok(v) => {
            unsafe { *out = v };
            NlStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            NlStatus::NumericError
        }
    }
}

/// Quintic Newton-Schulz orthogonalization with explicit coefficients.
/// # Safety
///
/// `g` must be a live handle; `out` valid for one pointer write. The returned handle must be freed with `nl_matrix_free`.
#[no_mangle]
pub unsafe extern "C" fn nl_newton_schulz(
    g: *const NlMatrix,
    n_iter: usize,
    a: f64,
    b: f64,
    c: f64,
    eps: f64,
    out: *mut *mut NlMatrix,
) -> NlStatus {
    if g.is_null() || out.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    let cfg = NewtonSchulzConfig {
        n_iter,
        coeffs: (a, b, c),
        eps,
    };
    match newton_schulz(&unsafe { &*g }.inner, &cfg) {
        Ok(m) => {
            unsafe { *out = Box::into_raw(Box::new(NlMatrix { inner: m })) };
            NlStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            NlStatus::NumericError
        }
    }
}

/// Duality map of `g` under `kind` with default Newton-Schulz settings.
/// The result has unit operator norm under `kind`.
/// # Safety
///
/// `g` must be a live handle; `out` valid for one pointer write. The returned handle must be freed with `nl_matrix_free`.
#[no_mangle]
pub unsafe extern "C" fn nl_dual(
    kind: NlNormKind,
    g: *const NlMatrix,
    out: *mut *mut NlMatrix,
) -> NlStatus {
    if g.is_null() || out.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    match dual(kind.into(), &unsafe { &*g }.inner, &NewtonSchulzConfig::default()) {
        Ok(m) => {
            unsafe { *out = Box::into_raw(Box::new(NlMatrix { inner: m })) };
            NlStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            NlStatus::NumericError
        }
    }
}

/// Creates a single-parameter Scion stepper: update rule
/// `W <- W - lr (dual(buffer) + weight_decay * W)` with interpolation
/// momentum `buffer <- (1-mu) grad + mu buffer`.
/// # Safety
///
/// The returned handle must be freed with `nl_scion_free`.
#[no_mangle]
pub unsafe extern "C" fn nl_scion_new(
    kind: NlNormKind,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> *mut NlScion {
    if !(0.0..1.0).contains(&momentum) || lr <= 0.0 || weight_decay < 0.0 {
        set_error("invalid hyperparameters");
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(NlScion {
        kind: kind.into(),
        lr,
        momentum,
        weight_decay,
        ns: NewtonSchulzConfig::default(),
        buffer: None,
    }))
}

/// # Safety
///
/// `s` must be NULL or a handle from `nl_scion_new`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nl_scion_free(s: *mut NlScion) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// One optimizer step, updating `param` in place from `grad`.
/// # Safety
///
/// `s`, `param`, `grad` must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn nl_scion_step(
    s: *mut NlScion,
    param: *mut NlMatrix,
    grad: *const NlMatrix,
) -> NlStatus {
    if s.is_null() || param.is_null() || grad.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    let s = unsafe { &mut *s };
    let param = &mut unsafe { &mut *param }.inner;
    let grad = &unsafe { &*grad }.inner;
    if (param.rows(), param.cols()) != (grad.rows(), grad.cols()) {
        set_error(format!(
            "shape mismatch: param {}x{}, grad {}x{}",
            param.rows(),
            param.cols(),
            grad.rows(),
            grad.cols()
        ));
        return NlStatus::InvalidArgument;
    }
    let mu = s.momentum;
    let buffer = match &mut s.buffer {
        Some(b) if (b.rows(), b.cols()) == (grad.rows(), grad.cols()) => {
            for (bv, gv) in b.data_mut().iter_mut().zip(grad.data()) {
                *bv = (1.0 - mu) * gv + mu * *bv;
            }
            b.clone()
        }
        Some(_) => {
            set_error("momentum buffer shape changed between steps");
            return NlStatus::InvalidArgument;
        }
        slot @ None => {
            let mut b = grad.clone();
            if mu != 0.0 {
                b.scale(1.0 - mu);
            }
            *slot = Some(b.clone());
            b
        }
    };
    match dual(s.kind, &buffer, &s.ns) {
        Ok(u) => {
            for (w, du) in param.data_mut().iter_mut().zip(u.data()) {
                *w -= s.lr * (du + s.weight_decay * *w);
            }
            NlStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            NlStatus::NumericError
        }
    }
}

/// Weighted quadratic fit of `ln loss` against `ln norm` with optional
/// init-loss constraint; outputs the vertex in log2 units. `stderrs` may
/// be NULL for equal weights. Fails when the parabola has no interior
/// optimum.
/// # Safety
///
/// `norms`/`losses` (and `stderrs` when non-NULL) must be valid for `n` reads; the two out-pointers for one write each.
#[no_mangle]
pub unsafe extern "C" fn nl_fit_loss_vs_norm(
    norms: *const f64,
    losses: *const f64,
    stderrs: *const f64,
    n: usize,
    init_loss: f64,
    constrain: bool,
    n_points: usize,
    log2_norm_star: *mut f64,
    loss_star: *mut f64,
) -> NlStatus {
    if norms.is_null() || losses.is_null() || log2_norm_star.is_null() || loss_star.is_null() {
        set_error("null pointer");
        return NlStatus::NullPointer;
    }
    let norms = unsafe { std::slice::from_raw_parts(norms, n) };
    let losses = unsafe { std::slice::from_raw_parts(losses, n) };
    let stderrs = if stderrs.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(stderrs, n) })
    };
    let points: Vec<normlab::analysis::FitPoint> = (0..n)
        .map(|i| normlab::analysis::FitPoint {
            norm: norms[i],
            loss: losses[i],
            stderr: stderrs.map(|s| s[i]),
            eta: f64::NAN,
        })
        .collect();
    match normlab::analysis::fit_loss_vs_norm(&points, init_loss, n_points, constrain) {
        Ok(fit) => match fit.vertex {
            Some(v) => {
                unsafe {
                    *log2_norm_star = v.log2_norm;
                    *loss_star = v.loss;
                }
                NlStatus::Ok
            }
            None => {
                set_error("no interior optimum (curvature <= 0)");
                NlStatus::NumericError
            }
        },
        Err(e) => {
            set_error(e.to_string());
            NlStatus::NumericError
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = vec![0i8; 256];
        let n = unsafe { nl_last_error_message(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    #[test]
    fn matrix_round_trip_and_null_safety() {
        let data: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let m = unsafe { nl_matrix_new(2, 3, data.as_ptr()) };
        assert!(!m.is_null());
        assert_eq!(unsafe { nl_matrix_rows(m) }, 2);
        assert_eq!(unsafe { nl_matrix_cols(m) }, 3);
        let mut out = vec![0.0; 6];
        assert_eq!(
            unsafe { nl_matrix_copy_data(m, out.as_mut_ptr(), 6) },
            NlStatus::Ok
        );
        assert_eq!(out, data);
        assert_eq!(
            unsafe { nl_matrix_copy_data(m, out.as_mut_ptr(), 3) },
            NlStatus::InvalidArgument
        );
        unsafe { nl_matrix_free(m) };
        unsafe { nl_matrix_free(std::ptr::null_mut()) };
        assert!(unsafe { nl_matrix_new(0, 3, std::ptr::null()) }.is_null());
        assert!(last_error().contains("invalid matrix shape"));
    }

    #[test]
    fn norms_and_duals_through_the_abi() {
        // I_4 closed forms: 1->RMS = 1/2, RMS->RMS = 1, RMS->inf = 2.
        let eye: Vec<f64> = (0..16)
            .map(|i| if i % 5 == 0 { 1.0 } else { 0.0 })
            .collect();
        let m = unsafe { nl_matrix_new(4, 4, eye.as_ptr()) };
        let mut v = 0.0;
        unsafe {
            assert_eq!(nl_op_norm(NlNormKind::OneToRms, m, &mut v), NlStatus::Ok);
            assert!((v - 0.5).abs() < 1e-12);
            assert_eq!(nl_op_norm(NlNormKind::RmsToRms, m, &mut v), NlStatus::Ok);
            assert!((v - 1.0).abs() < 1e-9);
            assert_eq!(nl_op_norm(NlNormKind::RmsToInf, m, &mut v), NlStatus::Ok);
            assert!((v - 2.0).abs() < 1e-12);
        }
        // dual under RMS->inf of I_4 is 0.5 I_4.
        let mut d: *mut NlMatrix = std::ptr::null_mut();
        unsafe {
            assert_eq!(nl_dual(NlNormKind::RmsToInf, m, &mut d), NlStatus::Ok);
            let mut out = vec![0.0; 16];
            nl_matrix_copy_data(d, out.as_mut_ptr(), 16);
            for (i, x) in out.iter().enumerate() {
                let want = if i % 5 == 0 { 0.5 } else { 0.0 };
                assert!((x - want).abs() < 1e-12);
            }
            nl_matrix_free(d);
            nl_matrix_free(m);
        }
    }

    #[test]
    fn spectral_norm_error_reports_message() {
        let zeros = [0.0; 9];
        let m = unsafe { nl_matrix_new(3, 3, zeros.as_ptr()) };
        let mut v = 0.0;
        let st = unsafe { nl_spectral_norm(m, 1e-8, 100, &mut v) };
        assert_eq!(st, NlStatus::NumericError);
        assert!(last_error().contains("nonzero"));
        unsafe { nl_matrix_free(m) };
    }

    #[test]
    fn scion_stepper_constrained_norm_approaches_inverse_lambda() {
        let s = unsafe { nl_scion_new(NlNormKind::RmsToInf, 0.1, 0.0, 0.1) };
        assert!(!s.is_null());
        let grad_data: Vec<f64> = (0..64).map(|i| ((i * 37 + 11) % 19) as f64 - 9.0).collect();
        let grad = unsafe { nl_matrix_new(8, 8, grad_data.as_ptr()) };
        let param = unsafe { nl_matrix_new(8, 8, std::ptr::null()) };
        for _ in 0..2000 {
            assert_eq!(unsafe { nl_scion_step(s, param, grad) }, NlStatus::Ok);
        }
        let mut v = 0.0;
        unsafe { nl_op_norm(NlNormKind::RmsToInf, param, &mut v) };
        assert!((v - 10.0).abs() / 10.0 < 0.05, "norm {v}");
        unsafe {
            nl_scion_free(s);
            nl_matrix_free(param);
            nl_matrix_free(grad);
        }
    }

    #[test]
    fn fit_vertex_through_the_abi() {
        let (a, b) = (0.05, -0.7);
        let c: f64 = 11.765f64.ln();
        let xs: Vec<f64> = (0..13).map(|i| 4.0 + 0.5 * i as f64).collect();
        let norms: Vec<f64> = xs.iter().map(|x| 2f64.powf(*x)).collect();
        let losses: Vec<f64> = xs.iter().map(|x| (a * x * x + b * x + c).exp()).collect();
        let mut log2_star = 0.0;
        let mut loss_star = 0.0;
        let st = unsafe {
            nl_fit_loss_vs_norm(
                norms.as_ptr(),
                losses.as_ptr(),
                std::ptr::null(),
                norms.len(),
                11.765,
                true,
                7,
                &mut log2_star,
                &mut loss_star,
            )
        };
        assert_eq!(st, NlStatus::Ok);
        assert!((log2_star - 7.0).abs() < 1e-9, "{log2_star}");
    }
}
