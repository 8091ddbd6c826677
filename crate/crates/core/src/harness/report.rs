//! Report emission over completed run logs.
//!
//! * `norm-scan` — per (batch, layout, horizon) cell: loss-vs-norm points
//!   across the learning-rate grid, the 6-variant fit ensemble, extracted
//!   optima and spreads (CSV + one SVG per cell).
//! * `lr-bs` — optimal learning rate per cell, the joint
//!   `log2 eta* ~ log2 B + log2 D` regression, and the reach-set fits for
//!   the optimal-norm band (CSV + SVG).
//! * `power-law` — optimal batch size per horizon with a `B*(D) = a D^b`
//!   fit and the composed `eta*(D)` exponent (CSV + SVG).
//! * `layout` — per-layer-group layout ranking with top-decile flagging
//!   (CSV only).

use crate::analysis::{
    fit_power_law, fit_variant_ensemble, norm_reach_set, regress_lr_bs_horizon, smooth_losses,
    EnsemblePoint, FitResult, NormTrajectory, VariantId,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::train::{LogLine, RunMeta};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportMode {
    NormScan,
    LrBs,
    PowerLaw,
    Layout,
}

impl ReportMode {
    pub fn parse(s: &str) -> Result<ReportMode, HarnessError> {
        match s {
            "norm-scan" => Ok(ReportMode::NormScan),
            "lr-bs" => Ok(ReportMode::LrBs),
            "power-law" => Ok(ReportMode::PowerLaw),
            "layout" => Ok(ReportMode::Layout),
            other => Err(HarnessError::Config(format!("unknown report mode {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Which logged norm the scans track.
    pub norm_key: String,
    /// Optimal-norm band in log2 units for the reach-set analysis.
    pub band_log2: (f64, f64),
    /// Fit window size around the empirical optimum.
    pub n_points: usize,
    /// Emit SVG plots alongside the CSVs.
    pub plots: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            norm_key: "output_projection".into(),
            band_log2: (6.8, 7.2),
            n_points: 7,
            plots: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub meta: RunMeta,
    pub lines: Vec<LogLine>,
}

/// Loads every `<run>.meta.json` / `<run>.jsonl` pair under `dir`.
pub fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>, HarnessError> {
    let mut runs = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let mut meta_paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.to_string_lossy().ends_with(".meta.json"))
        .collect();
    meta_paths.sort();
    for meta_path in meta_paths {
        let meta: RunMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_path)
                .map_err(|e| HarnessError::Io(format!("{}: {e}", meta_path.display())))?,
        )
        .map_err(|e| HarnessError::Schema {
            file: meta_path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        let log_path = dir.join(format!("{}.jsonl", meta.run_id));
        let text = std::fs::read_to_string(&log_path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", log_path.display())))?;
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parsed: LogLine =
                serde_json::from_str(line).map_err(|e| HarnessError::Schema {
                    file: log_path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            lines.push(parsed);
        }
        runs.push(LoadedRun { meta, lines });
    }
    if runs.is_empty() {
        return Err(HarnessError::EmptyInput(format!(
            "no run logs under {}",
            dir.display()
        )));
    }
    Ok(runs)
}

/// Flattens loaded logs into one [`RunRecord`](crate::analysis::RunRecord)
/// per (run, horizon) evaluation, the exchange type for external analyses.
pub fn run_records(runs: &[LoadedRun]) -> Vec<crate::analysis::RunRecord> {
    let mut out = Vec::new();
    for run in runs {
        for &horizon in &run.meta.horizons {
            if let Some(line) = run.lines.iter().find(|l| l.tokens == horizon) {
                out.push(crate::analysis::RunRecord {
                    run_id: run.meta.run_id.clone(),
                    eta: run.meta.eta,
                    batch: run.meta.batch as u64,
                    horizon,
                    seed: run.meta.seed,
                    loss: line.raw_loss,
                    norms: line.norms.clone(),
                });
            }
        }
    }
    out
}

fn layout_key(layout: [f64; 3]) -> String {
    format!("{}-{}-{}", layout[0], layout[1], layout[2])
}

#[derive(Debug, Clone)]
struct CellPoint {
    eta: f64,
    seed: u64,
    norm: f64,
    raw_loss: f64,
    smoothed_loss: f64,
    stderr: f64,
}

/// `(batch, layout, horizon) -> eta-ordered scan points`, plus the init
/// loss (ln vocab) per cell.
type Cells = BTreeMap<(u64, String, u64), (Vec<CellPoint>, f64)>;

fn assemble_cells(runs: &[LoadedRun], opts: &ReportOptions) -> Result<Cells, HarnessError> {
    let mut cells: Cells = BTreeMap::new();
    for run in runs {
        let series: Vec<(u64, f64)> = run.lines.iter().map(|l| (l.tokens, l.raw_loss)).collect();
        let smoothed = if run.meta.smoothing.enabled
            && (run.meta.batch as u64) <= run.meta.smoothing.max_batch
            && series.len() >= 3
        {
            Some(smooth_losses(&series).map_err(|e| HarnessError::Io(e.to_string()))?)
        } else {
            None
        };
        let init_loss = (run.meta.vocab_size as f64).ln();
        for &horizon in &run.meta.horizons {
            let Some(idx) = run.lines.iter().position(|l| l.tokens == horizon) else {
                continue;
            };
            let line = &run.lines[idx];
            let norm = *line.norms.get(&opts.norm_key).ok_or_else(|| {
                HarnessError::Schema {
                    file: format!("{}.jsonl", run.meta.run_id),
                    line: idx + 1,
                    message: format!("missing norm key {}", opts.norm_key),
                }
            })?;
            let (smoothed_loss, stderr) = match &smoothed {
                Some(sm) if horizon >= run.meta.smoothing.min_horizon_tokens => {
                    (sm[idx].mean, sm[idx].stderr)
                }
                _ => (line.raw_loss, 0.0),
            };
            let key = (
                run.meta.batch as u64,
                layout_key(run.meta.layout),
                horizon,
            );
            cells
                .entry(key)
                .or_insert_with(|| (Vec::new(), init_loss))
                .0
                .push(CellPoint {
                    eta: run.meta.eta,
                    seed: run.meta.seed,
                    norm,
                    raw_loss: line.raw_loss,
                    smoothed_loss,
                    stderr,
                });
        }
    }
    for (points, _) in cells.values_mut() {
        points.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(a.seed.cmp(&b.seed)));
    }
    Ok(cells)
}

/// The variant whose vertex reports the cell's optimum, in preference
/// order: constrained+smoothed first, plain argmin last.
fn primary_variant(variants: &[FitResult]) -> Option<&FitResult> {
    const PRIORITY: [VariantId; 6] = [
        VariantId::FitSmoothedConstrained,
        VariantId::FitRawConstrained,
        VariantId::FitSmoothed,
        VariantId::FitRaw,
        VariantId::ArgminSmoothed,
        VariantId::ArgminRaw,
    ];
    PRIORITY
        .iter()
        .filter_map(|id| variants.iter().find(|v| v.variant == *id))
        .find(|v| v.vertex.is_some())
}

fn write(path: &Path, content: &str) -> Result<(), HarnessError> {
    std::fs::write(path, content)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Emits the CSV (and SVG) products of one report mode; returns the files
/// written.
pub fn emit_report(
    logs_dir: &Path,
    out_dir: &Path,
    mode: ReportMode,
    opts: &ReportOptions,
) -> Result<Vec<PathBuf>, HarnessError> {
    let runs = load_runs(logs_dir)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", out_dir.display())))?;
    match mode {
        ReportMode::NormScan => emit_norm_scan(&runs, out_dir, opts),
        ReportMode::LrBs => emit_lr_bs(&runs, out_dir, opts),
        ReportMode::PowerLaw => emit_power_law(&runs, out_dir, opts),
        ReportMode::Layout => emit_layout(&runs, out_dir),
    }
}

fn cell_ensemble(
    points: &[CellPoint],
    init_loss: f64,
    n_points: usize,
) -> Result<crate::analysis::EnsembleResult, crate::analysis::FitError> {
    let eps: Vec<EnsemblePoint> = points
        .iter()
        .map(|p| EnsemblePoint {
            norm: p.norm,
            raw_loss: p.raw_loss,
            smoothed_loss: p.smoothed_loss,
            stderr: p.stderr,
            eta: p.eta,
        })
        .collect();
    fit_variant_ensemble(&eps, init_loss, n_points)
}

fn emit_norm_scan(
    runs: &[LoadedRun],
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<Vec<PathBuf>, HarnessError> {
    let cells = assemble_cells(runs, opts)?;
    let mut files = Vec::new();
    let mut csv = String::from(
        "batch,layout,horizon,variant,a,b,c,log2_norm_star,loss_star,eta_star,\
         spread_log2_norm,spread_loss,spread_eta,status\n",
    );
    for ((batch, layout, horizon), (points, init_loss)) in &cells {
        match cell_ensemble(points, *init_loss, opts.n_points) {
            Ok(ens) => {
                for v in &ens.variants {
                    let (a, b, c) = v
                        .coeffs
                        .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
                        .unwrap_or_default();
                    let (vx, vloss, veta, status) = match &v.vertex {
                        Some(vx) => (
                            vx.log2_norm.to_string(),
                            vx.loss.to_string(),
                            vx.eta.to_string(),
                            "ok",
                        ),
                        None => (String::new(), String::new(), String::new(), "no-interior-optimum"),
                    };
                    csv.push_str(&format!(
                        "{batch},{layout},{horizon},{},{a},{b},{c},{vx},{vloss},{veta},{},{},{},{status}\n",
                        v.variant.as_str(),
                        ens.spread.log2_norm,
                        ens.spread.loss,
                        ens.spread.eta,
                    ));
                }
                for (id, err) in &ens.failures {
                    csv.push_str(&format!(
                        "{batch},{layout},{horizon},{},,,,,,,,,,error: {}\n",
                        id.as_str(),
                        err.replace(',', ";")
                    ));
                }
                if opts.plots {
                    files.push(plot_norm_scan(
                        out_dir, *batch, layout, *horizon, points, &ens,
                    )?);
                }
            }
            Err(e) => {
                csv.push_str(&format!(
                    "{batch},{layout},{horizon},,,,,,,,,,,error: {}\n",
                    e.to_string().replace(',', ";")
                ));
            }
        }
    }
    let path = out_dir.join("norm_scan.csv");
    write(&path, &csv)?;
    files.insert(0, path);
    Ok(files)
}

fn plot_norm_scan(
    out_dir: &Path,
    batch: u64,
    layout: &str,
    horizon: u64,
    points: &[CellPoint],
    ens: &crate::analysis::EnsembleResult,
) -> Result<PathBuf, HarnessError> {
    use super::svg::{color, SvgPlot};
    let xs: Vec<f64> = points.iter().map(|p| p.norm.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.smoothed_loss).collect();
    let x_range = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let y_range = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let mut plot = SvgPlot::new(
        &format!("loss vs norm (B={batch}, layout={layout}, D={horizon})"),
        "log2 operator norm",
        "train loss",
        x_range,
        y_range,
    );
    plot.scatter(
        &xs.iter().cloned().zip(ys.iter().cloned()).collect::<Vec<_>>(),
        color(0),
        3.5,
    );
    if let Some(primary) = primary_variant(&ens.variants) {
        if let (Some((a, b, c)), Some(vx)) = (primary.coeffs, primary.vertex) {
            let ln2 = std::f64::consts::LN_2;
            let curve: Vec<(f64, f64)> = (0..=80)
                .map(|i| {
                    let x2 = x_range.0 + (x_range.1 - x_range.0) * i as f64 / 80.0;
                    let xl = x2 * ln2;
                    (x2, (a * xl * xl + b * xl + c).exp())
                })
                .collect();
            plot.polyline(&curve, color(1), false);
            plot.vline(vx.log2_norm, color(1));
        } else if let Some(vx) = primary.vertex {
            plot.vline(vx.log2_norm, color(1));
        }
    }
    let path = out_dir.join(format!("norm_scan_b{batch}_lay{layout}_d{horizon}.svg"));
    write(&path, &plot.render())?;
    Ok(path)
}

/// Per-(layout) optima across cells: `(batch, horizon) -> (eta*, spreads,
/// vertex)`.
fn collect_optima(
    cells: &Cells,
    n_points: usize,
) -> BTreeMap<String, Vec<(u64, u64, crate::analysis::Vertex, f64)>> {
    let mut optima: BTreeMap<String, Vec<(u64, u64, crate::analysis::Vertex, f64)>> =
        BTreeMap::new();
    for ((batch, layout, horizon), (points, init_loss)) in cells {
        if let Ok(ens) = cell_ensemble(points, *init_loss, n_points) {
            if let Some(primary) = primary_variant(&ens.variants) {
                if let Some(vx) = primary.vertex {
                    optima.entry(layout.clone()).or_default().push((
                        *batch,
                        *horizon,
                        vx,
                        ens.spread.eta,
                    ));
                }
            }
        }
    }
    optima
}

fn emit_lr_bs(
    runs: &[LoadedRun],
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<Vec<PathBuf>, HarnessError> {
    let cells = assemble_cells(runs, opts)?;
    let optima = collect_optima(&cells, opts.n_points);
    let mut files = Vec::new();

    let mut csv = String::from(
        "layout,batch,horizon,eta_star,log2_norm_star,loss_star,spread_eta\n",
    );
    let mut fit_csv =
        String::from("layout,alpha,alpha_se,beta,beta_se,gamma,gamma_se,n,status\n");
    for (layout, rows) in &optima {
        for (batch, horizon, vx, spread_eta) in rows {
            csv.push_str(&format!(
                "{layout},{batch},{horizon},{},{},{},{spread_eta}\n",
                vx.eta, vx.log2_norm, vx.loss
            ));
        }
        let triples: Vec<(f64, f64, f64)> = rows
            .iter()
            .map(|(b, d, vx, _)| (vx.eta, *b as f64, *d as f64))
            .collect();
        match regress_lr_bs_horizon(&triples) {
            Ok(fit) => {
                fit_csv.push_str(&format!(
                    "{layout},{},{},{},{},{},{},{},ok\n",
                    fit.alpha, fit.alpha_se, fit.beta, fit.beta_se, fit.gamma, fit.gamma_se, fit.n
                ));
                if opts.plots {
                    files.push(plot_lr_bs(out_dir, layout, &triples, &fit)?);
                }
            }
            Err(e) => fit_csv.push_str(&format!(
                "{layout},,,,,,,{},error: {}\n",
                rows.len(),
                e.to_string().replace(',', ";")
            )),
        }
    }
    let p1 = out_dir.join("lr_bs.csv");
    write(&p1, &csv)?;
    let p2 = out_dir.join("scaling_fit.csv");
    write(&p2, &fit_csv)?;
    files.insert(0, p2);
    files.insert(0, p1);

    // Reach-set analysis over the tracked norm's trajectories.
    let trajectories: Vec<NormTrajectory> = runs
        .iter()
        .map(|run| NormTrajectory {
            run_id: run.meta.run_id.clone(),
            eta: run.meta.eta,
            batch: run.meta.batch as f64,
            series: run
                .lines
                .iter()
                .filter_map(|l| l.norms.get(&opts.norm_key).map(|n| (l.tokens, *n)))
                .collect(),
        })
        .collect();
    let reach = norm_reach_set(&trajectories, opts.band_log2);
    let mut reach_csv = String::from("kind,run_or_coef,eta_or_value,batch_or_se,d_first\n");
    for (eta, batch, d_first) in &reach.reached {
        reach_csv.push_str(&format!("reached,,{eta},{batch},{d_first}\n"));
    }
    for (run_id, reason) in &reach.excluded {
        reach_csv.push_str(&format!(
            "excluded,{run_id},,,\"{}\"\n",
            reason.replace('"', "'")
        ));
    }
    if let Some(f) = &reach.free_fit {
        reach_csv.push_str(&format!("free-fit,alpha,{},{},\n", f.alpha, f.alpha_se));
        reach_csv.push_str(&format!("free-fit,beta,{},{},\n", f.beta, f.beta_se));
        reach_csv.push_str(&format!("free-fit,gamma,{},{},\n", f.gamma, f.gamma_se));
    }
    if let Some((gamma, se, rss)) = &reach.heuristic_fit {
        reach_csv.push_str(&format!("heuristic-fit,gamma,{gamma},{se},{rss}\n"));
    }
    let p3 = out_dir.join("norm_reach.csv");
    write(&p3, &reach_csv)?;
    files.push(p3);
    Ok(files)
}

fn plot_lr_bs(
    out_dir: &Path,
    layout: &str,
    triples: &[(f64, f64, f64)],
    fit: &crate::analysis::ScalingFit,
) -> Result<PathBuf, HarnessError> {
    use super::svg::{color, SvgPlot};
    let pts: Vec<(f64, f64, f64)> = triples
        .iter()
        .map(|&(eta, b, d)| (b.log2(), eta.log2(), d))
        .collect();
    let x_range = (
        pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let y_range = (
        pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut plot = SvgPlot::new(
        &format!("optimal lr vs batch (layout {layout})"),
        "log2 batch size",
        "log2 eta*",
        x_range,
        y_range,
    );
    let mut ds: Vec<f64> = pts.iter().map(|p| p.2).collect();
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    let mut legend = Vec::new();
    for (i, d) in ds.iter().enumerate() {
        let group: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.2 == *d)
            .map(|p| (p.0, p.1))
            .collect();
        plot.scatter(&group, color(i), 3.5);
        let line: Vec<(f64, f64)> = [x_range.0, x_range.1]
            .iter()
            .map(|&x| (x, fit.alpha * x + fit.beta * d.log2() + fit.gamma))
            .collect();
        plot.polyline(&line, color(i), true);
        legend.push((format!("D = {d:.0}"), color(i)));
    }
    plot.legend(&legend);
    let path = out_dir.join(format!("lr_bs_lay{layout}.svg"));
    write(&path, &plot.render())?;
    Ok(path)
}

fn emit_power_law(
    runs: &[LoadedRun],
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<Vec<PathBuf>, HarnessError> {
    let cells = assemble_cells(runs, opts)?;
    let optima = collect_optima(&cells, opts.n_points);
    let mut files = Vec::new();
    let mut csv = String::from("layout,kind,horizon,b_star,value,se\n");
    for (layout, rows) in &optima {
        // Best batch per horizon by fitted loss.
        let mut per_d: BTreeMap<u64, (u64, f64)> = BTreeMap::new();
        for (batch, horizon, vx, _) in rows {
            let entry = per_d.entry(*horizon).or_insert((*batch, vx.loss));
            if vx.loss < entry.1 {
                *entry = (*batch, vx.loss);
            }
        }
        let points: Vec<(f64, f64)> = per_d
            .iter()
            .map(|(&d, &(b, _))| (d as f64, b as f64))
            .collect();
        for (&d, &(b, loss)) in &per_d {
            csv.push_str(&format!("{layout},b_star,{d},{b},{loss},\n"));
        }
        match fit_power_law(&points) {
            Ok(fit) => {
                csv.push_str(&format!(
                    "{layout},fit-exponent,,,{},{}\n",
                    fit.exponent, fit.exponent_se
                ));
                csv.push_str(&format!(
                    "{layout},fit-multiplier,,,{},{}\n",
                    fit.multiplier, fit.multiplier_se
                ));
                // Composed eta*(D) exponent alpha*b + beta, when the joint
                // regression is available.
                let triples: Vec<(f64, f64, f64)> = rows
                    .iter()
                    .map(|(b, d, vx, _)| (vx.eta, *b as f64, *d as f64))
                    .collect();
                if let Ok(scaling) = regress_lr_bs_horizon(&triples) {
                    let composed = scaling.alpha * fit.exponent + scaling.beta;
                    csv.push_str(&format!("{layout},composed-eta-exponent,,,{composed},\n"));
                }
                if opts.plots && points.len() >= 2 {
                    files.push(plot_power_law(out_dir, layout, &points, &fit)?);
                }
            }
            Err(e) => csv.push_str(&format!(
                "{layout},fit-error,,,{},\n",
                e.to_string().replace(',', ";")
            )),
        }
    }
    let path = out_dir.join("power_law.csv");
    write(&path, &csv)?;
    files.insert(0, path);
    Ok(files)
}

fn plot_power_law(
    out_dir: &Path,
    layout: &str,
    points: &[(f64, f64)],
    fit: &crate::analysis::PowerLawFit,
) -> Result<PathBuf, HarnessError> {
    use super::svg::{color, SvgPlot};
    let pts: Vec<(f64, f64)> = points.iter().map(|&(d, b)| (d.log2(), b.log2())).collect();
    let x_range = (
        pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let y_range = (
        pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut plot = SvgPlot::new(
        &format!("optimal batch vs horizon (layout {layout})"),
        "log2 D",
        "log2 B*",
        x_range,
        y_range,
    );
    plot.scatter(&pts, color(0), 4.0);
    let line: Vec<(f64, f64)> = [x_range.0, x_range.1]
        .iter()
        .map(|&x| {
            let d = 2f64.powf(x);
            (x, (fit.multiplier * d.powf(fit.exponent)).log2())
        })
        .collect();
    plot.polyline(&line, color(1), true);
    let path = out_dir.join(format!("power_law_lay{layout}.svg"));
    write(&path, &plot.render())?;
    Ok(path)
}

fn emit_layout(runs: &[LoadedRun], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    // Final-horizon loss per run, ranked ascending; ceil(0.1 n) flagged.
    let mut rows: Vec<(String, f64, u64, u64, [f64; 3], f64)> = Vec::new();
    for run in runs {
        let Some(last_horizon) = run.meta.horizons.last() else {
            continue;
        };
        if let Some(line) = run.lines.iter().find(|l| l.tokens == *last_horizon) {
            rows.push((
                run.meta.run_id.clone(),
                run.meta.eta,
                run.meta.batch as u64,
                run.meta.seed,
                run.meta.layout,
                line.raw_loss,
            ));
        }
    }
    if rows.is_empty() {
        return Err(HarnessError::EmptyInput(
            "no completed runs for layout ranking".into(),
        ));
    }
    rows.sort_by(|a, b| a.5.total_cmp(&b.5).then(a.0.cmp(&b.0)));
    let cut = rows.len().div_ceil(10);
    let mut csv = String::from(
        "rank,run_id,eta,batch,seed,lay_input,lay_hidden,lay_output,loss,top_decile\n",
    );
    for (i, (run_id, eta, batch, seed, layout, loss)) in rows.iter().enumerate() {
        csv.push_str(&format!(
            "{},{run_id},{eta},{batch},{seed},{},{},{},{loss},{}\n",
            i + 1,
            layout[0],
            layout[1],
            layout[2],
            (i < cut) as u8
        ));
    }
    let path = out_dir.join("layout_rank.csv");
    write(&path, &csv)?;
    Ok(vec![path])
}
