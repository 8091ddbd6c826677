//! Measurement pipeline: loss smoothing, constrained quadratic loss-vs-norm
//! fitting, optimum extraction, the 6-variant uncertainty ensemble, and the
//! (learning rate, batch size, horizon) scaling regressions.
//!
//! Fits run on natural logarithms internally; optima are reported in log2
//! units (the conversion `log2 x = ln x / ln 2` is exact in the sense that
//! a quadratic in one log base is a quadratic in any other, so the vertex
//! location is base-independent).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("nonpositive value in log-space fit: {0}")]
    NonPositive(String),
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),
    #[error("smoothing needs at least 3 points, got {0}")]
    SmoothingTooShort(usize),
}

/// One evaluation point of one run, as recovered from the logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub eta: f64,
    /// Batch size in samples.
    pub batch: u64,
    /// Tokens evaluated at (the horizon D of this record).
    pub horizon: u64,
    pub seed: u64,
    pub loss: f64,
    /// Operator norms by parameter key (assigned norms plus any extra
    /// tracked ones).
    pub norms: BTreeMap<String, f64>,
}

/// Loss with a smoothing-derived uncertainty at one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedLoss {
    pub horizon: u64,
    pub mean: f64,
    pub stderr: f64,
}

/// Three-point neighbor averaging along a run's horizon series.
///
/// Interior points become the mean of themselves and both neighbors, with
/// the empirical standard error of that mean attached; endpoints pass
/// through with the stderr of the nearest interior point.
pub fn smooth_losses(series: &[(u64, f64)]) -> Result<Vec<SmoothedLoss>, FitError> {
    let n = series.len();
    if n < 3 {
        return Err(FitError::SmoothingTooShort(n));
    }
    let mut out = Vec::with_capacity(n);
    let mut interior_stderr = vec![0.0; n];
    for i in 1..n - 1 {
        let window = [series[i - 1].1, series[i].1, series[i + 1].1];
        let mean = window.iter().sum::<f64>() / 3.0;
        let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        interior_stderr[i] = (var / 3.0).sqrt();
    }
    for i in 0..n {
        let (horizon, raw) = series[i];
        if i == 0 {
            out.push(SmoothedLoss {
                horizon,
                mean: raw,
                stderr: interior_stderr[1],
            });
        } else if i == n - 1 {
            out.push(SmoothedLoss {
                horizon,
                mean: raw,
                stderr: interior_stderr[n - 2],
            });
        } else {
            let mean = (series[i - 1].1 + raw + series[i + 1].1) / 3.0;
            out.push(SmoothedLoss {
                horizon,
                mean,
                stderr: interior_stderr[i],
            });
        }
    }
    Ok(out)
}

/// One point of a loss-vs-norm scan (one learning-rate run at a fixed
/// batch size and horizon). Points are expected in grid order.
#[derive(Debug, Clone, Copy)]
pub struct FitPoint {
    pub norm: f64,
    pub loss: f64,
    /// Uncertainty on the loss; `None` means equal weighting.
    pub stderr: Option<f64>,
    pub eta: f64,
}

/// Extracted optimum of a loss-vs-norm parabola.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Vertex {
    pub log2_norm: f64,
    pub loss: f64,
    /// Learning rate of the data point nearest the fitted optimum.
    pub eta: f64,
}

/// Result of one fit (or argmin) variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: VariantId,
    /// `(a, b, c)` of `ln loss = a (ln norm)^2 + b ln norm + c`;
    /// `None` for argmin variants.
    pub coeffs: Option<(f64, f64, f64)>,
    /// Row-major covariance of the free coefficients, when fitted.
    pub covariance: Option<Vec<f64>>,
    /// `Some` only when the parabola opens upward (`a > 0`) or the variant
    /// is an argmin.
    pub vertex: Option<Vertex>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantId {
    FitRaw,
    FitSmoothed,
    FitRawConstrained,
    FitSmoothedConstrained,
    ArgminRaw,
    ArgminSmoothed,
}

impl VariantId {
    pub fn as_str(&self) -> &'static str {
        match self {
            VariantId::FitRaw => "fit-raw",
            VariantId::FitSmoothed => "fit-smoothed",
            VariantId::FitRawConstrained => "fit-raw-constrained",
            VariantId::FitSmoothedConstrained => "fit-smoothed-constrained",
            VariantId::ArgminRaw => "argmin-raw",
            VariantId::ArgminSmoothed => "argmin-smoothed",
        }
    }
}

/// Weighted least squares of `ln loss` on `[ln(norm)^2, ln norm, 1]` over
/// the `n_points` grid points nearest (by index, centered, truncated at the
/// boundaries) to the empirical minimum. Weights are inverse stderr, per
/// row. With `constrain` set, the constant term is pinned to
/// `ln(init_loss)` and only `(a, b)` are free.
pub fn fit_loss_vs_norm(
    points: &[FitPoint],
    init_loss: f64,
    n_points: usize,
    constrain: bool,
) -> Result<FitResult, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints {
            need: 3,
            got: points.len(),
        });
    }
    for p in points {
        if p.norm <= 0.0 || p.loss <= 0.0 {
            return Err(FitError::NonPositive(format!(
                "norm {} / loss {}",
                p.norm, p.loss
            )));
        }
    }
    if constrain && init_loss <= 0.0 {
        return Err(FitError::NonPositive(format!("init loss {init_loss}")));
    }

    // Window around the empirical minimum.
    let i_min = points
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.loss.total_cmp(&b.loss))
        .map(|(i, _)| i)
        .unwrap();
    let half = n_points / 2;
    let lo = i_min.saturating_sub(half);
    let hi = (i_min + half + 1).min(points.len());
    let window = &points[lo..hi];

    let c_fixed = init_loss.ln();
    let k = if constrain { 2 } else { 3 };
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for p in window {
        let x = p.norm.ln();
        let y = p.loss.ln() - if constrain { c_fixed } else { 0.0 };
        let w = match p.stderr {
            Some(s) if s > 0.0 => 1.0 / s,
            _ => 1.0,
        };
        let row = if constrain {
            vec![x * x, x]
        } else {
            vec![x * x, x, 1.0]
        };
        for i in 0..k {
            for j in 0..k {
                xtx[i][j] += w * w * row[i] * row[j];
            }
            xty[i] += w * w * row[i] * y;
        }
    }
    let cov = invert(&xtx).ok_or_else(|| {
        FitError::RankDeficient("loss-vs-norm normal equations are singular".into())
    })?;
    let mut coef = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            coef[i] += cov[i][j] * xty[j];
        }
    }
    let (a, b, c) = if constrain {
        (coef[0], coef[1], c_fixed)
    } else {
        (coef[0], coef[1], coef[2])
    };

    let variant = match (constrain, false) {
        (true, _) => VariantId::FitRawConstrained,
        (false, _) => VariantId::FitRaw,
    };
    let vertex = if a > 0.0 {
        let x_star = -b / (2.0 * a);
        let loss_star = (a * x_star * x_star + b * x_star + c).exp();
        let eta = points
            .iter()
            .min_by(|p, q| {
                (p.norm.ln() - x_star)
                    .abs()
                    .total_cmp(&(q.norm.ln() - x_star).abs())
            })
            .unwrap()
            .eta;
        Some(Vertex {
            log2_norm: x_star / std::f64::consts::LN_2,
            loss: loss_star,
            eta,
        })
    } else {
        None
    };

    Ok(FitResult {
        variant,
        coeffs: Some((a, b, c)),
        covariance: Some(cov.into_iter().flatten().collect()),
        vertex,
    })
}

/// Input to the fit-variation ensemble: one grid point carrying both the
/// raw loss and its smoothed counterpart (smoothing happens along the
/// horizon axis, upstream of this call).
#[derive(Debug, Clone, Copy)]
pub struct EnsemblePoint {
    pub norm: f64,
    pub raw_loss: f64,
    pub smoothed_loss: f64,
    pub stderr: f64,
    pub eta: f64,
}

/// Max-minus-min of each extracted quantity over the ensemble.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EnsembleSpread {
    pub log2_norm: f64,
    pub loss: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub variants: Vec<FitResult>,
    pub spread: EnsembleSpread,
    /// Variants that failed outright, with reasons.
    pub failures: Vec<(VariantId, String)>,
}

/// The six re-analyses whose spread serves as the uncertainty of the
/// extracted optimum: {fit} x {raw, smoothed} x {constrained or not}
/// (four), plus the plain empirical argmin on raw and smoothed losses
/// (two; the init-loss constraint is inapplicable without a fit).
pub fn fit_variant_ensemble(
    points: &[EnsemblePoint],
    init_loss: f64,
    n_points: usize,
) -> Result<EnsembleResult, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints {
            need: 3,
            got: points.len(),
        });
    }
    let as_fit = |smoothed: bool, weighted: bool| -> Vec<FitPoint> {
        points
            .iter()
            .map(|p| FitPoint {
                norm: p.norm,
                loss: if smoothed { p.smoothed_loss } else { p.raw_loss },
                stderr: if weighted && p.stderr > 0.0 {
                    Some(p.stderr)
                } else {
                    None
                },
                eta: p.eta,
            })
            .collect()
    };

    let mut variants = Vec::new();
    let mut failures = Vec::new();
    let fit_specs = [
        (VariantId::FitRaw, false, false),
        (VariantId::FitSmoothed, true, false),
        (VariantId::FitRawConstrained, false, true),
        (VariantId::FitSmoothedConstrained, true, true),
    ];
    for (id, smoothed, constrained) in fit_specs {
        // Smoothing supplies the uncertainties, so only smoothed variants
        // are weighted.
        match fit_loss_vs_norm(&as_fit(smoothed, smoothed), init_loss, n_points, constrained) {
            Ok(mut f) => {
                f.variant = id;
                variants.push(f);
            }
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    for (id, smoothed) in [(VariantId::ArgminRaw, false), (VariantId::ArgminSmoothed, true)] {
        let best = points
            .iter()
            .min_by(|p, q| {
                let a = if smoothed { p.smoothed_loss } else { p.raw_loss };
                let b = if smoothed { q.smoothed_loss } else { q.raw_loss };
                a.total_cmp(&b)
            })
            .unwrap();
        variants.push(FitResult {
            variant: id,
            coeffs: None,
            covariance: None,
            vertex: Some(Vertex {
                log2_norm: best.norm.log2(),
                loss: if smoothed {
                    best.smoothed_loss
                } else {
                    best.raw_loss
                },
                eta: best.eta,
            }),
        });
    }

    let mut spread = EnsembleSpread::default();
    let verts: Vec<&Vertex> = variants.iter().filter_map(|v| v.vertex.as_ref()).collect();
    if !verts.is_empty() {
        let minmax = |f: fn(&Vertex) -> f64| {
            let lo = verts.iter().map(|v| f(v)).fold(f64::INFINITY, f64::min);
            let hi = verts.iter().map(|v| f(v)).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        spread = EnsembleSpread {
            log2_norm: minmax(|v| v.log2_norm),
            loss: minmax(|v| v.loss),
            eta: minmax(|v| v.eta),
        };
    }
    Ok(EnsembleResult {
        variants,
        spread,
        failures,
    })
}

/// Joint linear regression `log2 eta* = alpha log2 B + beta log2 D + gamma`
/// with per-coefficient standard errors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha_se: f64,
    pub beta_se: f64,
    pub gamma_se: f64,
    pub rss: f64,
    pub n: usize,
}

/// OLS in log2 space over `(eta*, B, D)` optima.
pub fn regress_lr_bs_horizon(optima: &[(f64, f64, f64)]) -> Result<ScalingFit, FitError> {
    if optima.len() < 4 {
        return Err(FitError::TooFewPoints {
            need: 4,
            got: optima.len(),
        });
    }
    let mut bs = Vec::new();
    let mut ds = Vec::new();
    for &(eta, b, d) in optima {
        if eta <= 0.0 || b <= 0.0 || d <= 0.0 {
            return Err(FitError::NonPositive(format!("({eta}, {b}, {d})")));
        }
        if !bs.contains(&b.to_bits()) {
            bs.push(b.to_bits());
        }
        if !ds.contains(&d.to_bits()) {
            ds.push(d.to_bits());
        }
    }
    if bs.len() < 2 || ds.len() < 2 {
        return Err(FitError::RankDeficient(
            "need at least 2 distinct batch sizes and horizons".into(),
        ));
    }

    let rows: Vec<[f64; 3]> = optima
        .iter()
        .map(|&(_, b, d)| [b.log2(), d.log2(), 1.0])
        .collect();
    let ys: Vec<f64> = optima.iter().map(|&(eta, _, _)| eta.log2()).collect();
    let (coef, cov, rss) = ols3(&rows, &ys)?;
    let dof = (optima.len() as f64 - 3.0).max(1.0);
    let sigma2 = rss / dof;
    Ok(ScalingFit {
        alpha: coef[0],
        beta: coef[1],
        gamma: coef[2],
        alpha_se: (sigma2 * cov[0][0]).sqrt(),
        beta_se: (sigma2 * cov[1][1]).sqrt(),
        gamma_se: (sigma2 * cov[2][2]).sqrt(),
        rss,
        n: optima.len(),
    })
}

/// Fixed-slope variant: `log2 eta = slope_b log2 B + slope_d log2 D +
/// gamma`, fitting only the offset. Returns `(gamma, gamma_se, rss)`.
pub fn regress_fixed_slopes(
    points: &[(f64, f64, f64)],
    slope_b: f64,
    slope_d: f64,
) -> Result<(f64, f64, f64), FitError> {
    if points.is_empty() {
        return Err(FitError::TooFewPoints { need: 1, got: 0 });
    }
    let resid: Vec<f64> = points
        .iter()
        .map(|&(eta, b, d)| eta.log2() - slope_b * b.log2() - slope_d * d.log2())
        .collect();
    let n = resid.len() as f64;
    let gamma = resid.iter().sum::<f64>() / n;
    let rss: f64 = resid.iter().map(|r| (r - gamma).powi(2)).sum();
    let se = if resid.len() > 1 {
        (rss / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok((gamma, se, rss))
}

/// Power-law fit `B*(D) = a D^b` by OLS on logs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub multiplier: f64,
    pub exponent: f64,
    pub multiplier_se: f64,
    pub exponent_se: f64,
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints {
            need: 3,
            got: points.len(),
        });
    }
    for &(d, b) in points {
        if d <= 0.0 || b <= 0.0 {
            return Err(FitError::NonPositive(format!("({d}, {b})")));
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(d, _)| d.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, b)| b.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::RankDeficient("all horizons identical".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let sigma2 = rss / (n - 2.0).max(1.0);
    Ok(PowerLawFit {
        multiplier: intercept.exp(),
        exponent: slope,
        multiplier_se: (sigma2 * (1.0 / n + mx * mx / sxx)).sqrt() * intercept.exp(),
        exponent_se: (sigma2 / sxx).sqrt(),
    })
}

/// One run's norm trajectory: `(eta, batch, [(horizon, norm)])`.
#[derive(Debug, Clone)]
pub struct NormTrajectory {
    pub run_id: String,
    pub eta: f64,
    pub batch: f64,
    pub series: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ReachResult {
    /// `(eta, batch, D_first)` for runs that entered the band.
    pub reached: Vec<(f64, f64, f64)>,
    /// Excluded runs with reasons.
    pub excluded: Vec<(String, String)>,
    pub free_fit: Option<ScalingFit>,
    /// `(gamma, gamma_se, rss)` of the `(1.5, -1)` fixed-slope fit.
    pub heuristic_fit: Option<(f64, f64, f64)>,
}

/// For each run, the earliest horizon whose tracked norm lies inside
/// `[2^lo, 2^hi]`, plus free and heuristic fits of
/// `log2 eta ~ log2 B + log2 D_first`.
pub fn norm_reach_set(runs: &[NormTrajectory], band_log2: (f64, f64)) -> ReachResult {
    let (lo, hi) = (2f64.powf(band_log2.0), 2f64.powf(band_log2.1));
    let mut reached = Vec::new();
    let mut excluded = Vec::new();
    for run in runs {
        match run
            .series
            .iter()
            .find(|(_, norm)| *norm >= lo && *norm <= hi)
        {
            Some((d, _)) => reached.push((run.eta, run.batch, *d as f64)),
            None => excluded.push((
                run.run_id.clone(),
                format!(
                    "norm never entered [2^{:.2}, 2^{:.2}]",
                    band_log2.0, band_log2.1
                ),
            )),
        }
    }
    let free_fit = regress_lr_bs_horizon(&reached).ok();
    let heuristic_fit = regress_fixed_slopes(&reached, 1.5, -1.0).ok();
    ReachResult {
        reached,
        excluded,
        free_fit,
        heuristic_fit,
    }
}

/// 3-parameter OLS helper returning `(coef, (X^T X)^-1, rss)`.
type Ols3Parts = (Vec<f64>, Vec<Vec<f64>>, f64);

fn ols3(rows: &[[f64; 3]], ys: &[f64]) -> Result<Ols3Parts, FitError> {
    let mut xtx = vec![vec![0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for (row, &y) in rows.iter().zip(ys) {
        for i in 0..3 {
            for j in 0..3 {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * y;
        }
    }
    let inv = invert(&xtx)
        .ok_or_else(|| FitError::RankDeficient("collinear design matrix".into()))?;
    let mut coef = vec![0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            coef[i] += inv[i][j] * xty[j];
        }
    }
    let rss: f64 = rows
        .iter()
        .zip(ys)
        .map(|(row, &y)| {
            let pred: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (y - pred).powi(2)
        })
        .sum();
    Ok((coef, inv, rss))
}

/// Gauss-Jordan inverse for the tiny (<= 3x3) normal-equation systems.
fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, p) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|row| row[n..].to_vec()).collect())
}
