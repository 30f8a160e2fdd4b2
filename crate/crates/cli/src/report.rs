//! Per-checkpoint analysis reports and their CSV / SVG renderings.

use std::path::Path;

use anyhow::Context;

use tempoprobe::analysis::{
    analyze_model, positional_correlation, CheckpointAnalysis, CorrelationMatrix, DownstreamCrp,
};
use tempoprobe::probes::{build_lagcrp_prompts, LagCrpPrompt, TokenPool};
use tempoprobe::trainer::CheckpointSeries;
use tempoprobe::transformer::{read_archive, Model};

use crate::config::ExperimentConfig;
use crate::manifest::write_atomic;
use crate::svg::{self, Heatmap, LinePlot, Panel, Series};

/// Distances averaged for the near-diagonal positional correlation.
pub const NEAR_DIAGONAL: usize = 5;

#[derive(Debug, Clone)]
pub struct CheckpointReport {
    /// File stem of the archive, e.g. `ckpt_1000`.
    pub label: String,
    pub iteration: Option<usize>,
    pub val_loss: Option<f64>,
    pub analysis: CheckpointAnalysis,
    pub positional: CorrelationMatrix,
}

impl CheckpointReport {
    pub fn near_diagonal_corr(&self) -> f64 {
        self.positional.near_diagonal_mean(NEAR_DIAGONAL).unwrap_or(f64::NAN)
    }
}

pub fn lag_prompts(cfg: &ExperimentConfig, pool: &TokenPool, ctx_len: usize) -> anyhow::Result<Vec<LagCrpPrompt>> {
    Ok(build_lagcrp_prompts(pool, cfg.probe.n, cfg.probe.perms, cfg.seed, ctx_len)?)
}

pub fn analyze_checkpoint(
    model: &Model,
    prompts: &[LagCrpPrompt],
    cfg: &ExperimentConfig,
    label: String,
    iteration: Option<usize>,
    val_loss: Option<f64>,
) -> anyhow::Result<CheckpointReport> {
    let analysis = analyze_model(model, prompts, &cfg.analysis).with_context(|| format!("analyzing {label}"))?;
    let positional = positional_correlation(&model.positional_embedding())?;
    Ok(CheckpointReport {
        label,
        iteration,
        val_loss,
        analysis,
        positional,
    })
}

fn iteration_from_stem(stem: &str) -> Option<usize> {
    stem.strip_prefix("ckpt_")?.parse().ok()
}

/// Analyzes one archive, or every checkpoint listed in a run directory.
pub fn analyze_path(path: &Path, pool: &TokenPool, cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckpointReport>> {
    if path.is_dir() {
        let series = CheckpointSeries::load(path)?;
        analyze_series(&series, pool, cfg)
    } else {
        let (model, _) = read_archive(path).with_context(|| format!("loading {}", path.display()))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let prompts = lag_prompts(cfg, pool, model.config().ctx_len)?;
        let iteration = iteration_from_stem(&stem);
        Ok(vec![analyze_checkpoint(&model, &prompts, cfg, stem, iteration, None)?])
    }
}

pub fn analyze_series(
    series: &CheckpointSeries,
    pool: &TokenPool,
    cfg: &ExperimentConfig,
) -> anyhow::Result<Vec<CheckpointReport>> {
    let mut prompts = None;
    let mut out = Vec::new();
    for it in series.iterations() {
        let entry = series.get(it).expect("listed iteration");
        let model = entry.load()?;
        if prompts.is_none() {
            prompts = Some(lag_prompts(cfg, pool, model.config().ctx_len)?);
        }
        log::info!("analyzing checkpoint {it}");
        out.push(analyze_checkpoint(
            &model,
            prompts.as_ref().expect("built above"),
            cfg,
            format!("ckpt_{it}"),
            Some(it),
            Some(entry.val_loss),
        )?);
    }
    Ok(out)
}

fn opt_num<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_atomic(path, &bytes)
}

pub fn lagcrp_rows(reports: &[CheckpointReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in reports {
        for c in &r.analysis.curves {
            for ((lag, s), se) in c.points().zip(&c.std_err) {
                rows.push(vec![
                    r.label.clone(),
                    opt_num(r.iteration),
                    c.head.layer.to_string(),
                    c.head.head.to_string(),
                    lag.to_string(),
                    s.to_string(),
                    se.to_string(),
                ]);
            }
        }
    }
    rows
}

pub const LAGCRP_HEADER: [&str; 7] = ["checkpoint", "iteration", "layer", "head", "lag", "score", "std_err"];

pub const HEADS_HEADER: [&str; 11] = [
    "checkpoint",
    "iteration",
    "layer",
    "head",
    "induction_score",
    "is_induction",
    "recency_slope",
    "recency_intercept",
    "contiguity_a",
    "contiguity_tau",
    "contiguity_converged",
];

pub fn head_rows(reports: &[CheckpointReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in reports {
        for h in &r.analysis.heads {
            let fit = h.contiguity.as_ref();
            rows.push(vec![
                r.label.clone(),
                opt_num(r.iteration),
                h.head.layer.to_string(),
                h.head.head.to_string(),
                h.induction_score.to_string(),
                h.is_induction.to_string(),
                h.recency.slope.to_string(),
                h.recency.intercept.to_string(),
                opt_num(fit.map(|f| f.a)),
                opt_num(fit.map(|f| f.tau)),
                opt_num(fit.map(|f| f.converged)),
            ]);
        }
    }
    rows
}

pub const SUMMARY_HEADER: [&str; 4] = ["checkpoint", "iteration", "metric", "value"];

pub fn summary_rows(reports: &[CheckpointReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in reports {
        let mut metrics = r.analysis.summary.rows();
        metrics.push(("positional_near_diagonal_corr", r.near_diagonal_corr()));
        if let Some(v) = r.val_loss {
            metrics.push(("val_loss", v));
        }
        for (name, v) in metrics {
            rows.push(vec![r.label.clone(), opt_num(r.iteration), name.to_string(), v.to_string()]);
        }
    }
    rows
}

pub fn lagcrp_figure(r: &CheckpointReport, n_heads: usize) -> String {
    let panels: Vec<Panel> = r
        .analysis
        .curves
        .iter()
        .zip(&r.analysis.heads)
        .map(|(c, h)| {
            Panel::Line(LinePlot {
                title: format!(
                    "L{}H{}{} I={:.3}",
                    c.head.layer,
                    c.head.head,
                    if h.is_induction { " *" } else { "" },
                    h.induction_score
                ),
                x_label: "lag".into(),
                y_label: c.source.label().into(),
                series: vec![Series {
                    label: String::new(),
                    points: c.points().map(|(l, s)| (l as f64, s)).collect(),
                }],
            })
        })
        .collect();
    svg::render_grid(&format!("Lag-CRP per head, {}", r.label), &panels, n_heads, 230.0, 170.0)
}

pub fn induction_heatmap(r: &CheckpointReport, n_layers: usize, n_heads: usize) -> String {
    let panel = Panel::Heat(Heatmap {
        title: format!("Induction score, {}", r.label),
        rows: n_layers,
        cols: n_heads,
        values: r.analysis.grid.scores().iter().map(|&v| Some(v)).collect(),
        range: Some((-1.0, 1.0)),
        row_labels: (0..n_layers).map(|l| format!("L{l}")).collect(),
        col_labels: (0..n_heads).map(|h| format!("H{h}")).collect(),
    });
    svg::render(&panel, 60.0 + 40.0 * n_heads as f64, 60.0 + 40.0 * n_layers as f64)
}

/// Correlation matrix subsampled to at most `side` positions per axis.
pub fn correlation_panel(c: &CorrelationMatrix, title: String, side: usize) -> Panel {
    let stride = c.n.div_ceil(side).max(1);
    let idx: Vec<usize> = (0..c.n).step_by(stride).collect();
    let values = idx.iter().flat_map(|&i| idx.iter().map(move |&j| c.get(i, j))).collect();
    let labels: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
    Panel::Heat(Heatmap {
        title,
        rows: idx.len(),
        cols: idx.len(),
        values,
        range: Some((-1.0, 1.0)),
        row_labels: labels.clone(),
        col_labels: labels,
    })
}

pub fn downstream_figure(series: &[DownstreamCrp]) -> String {
    let panel = Panel::Line(LinePlot {
        title: "Next-token probability by lag from the cue".into(),
        x_label: "lag".into(),
        y_label: "probability".into(),
        series: series
            .iter()
            .map(|d| Series {
                label: d.label.clone(),
                points: d.lags.iter().zip(&d.probs).map(|(&l, &p)| (l as f64, p)).collect(),
            })
            .collect(),
    });
    svg::render(&panel, 640.0, 360.0)
}

/// Writes the CSV set and figures of an analysis; returns relative paths.
pub fn write_analysis(out: &Path, reports: &[CheckpointReport], n_layers: usize, n_heads: usize) -> anyhow::Result<Vec<String>> {
    let mut files = Vec::new();
    let mut emit_csv = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> anyhow::Result<()> {
        write_csv(&out.join(name), header, &rows)?;
        files.push(name.to_string());
        Ok(())
    };
    emit_csv("lagcrp.csv", &LAGCRP_HEADER, lagcrp_rows(reports))?;
    emit_csv("induction_grid.csv", &HEADS_HEADER, head_rows(reports))?;
    emit_csv("summary.csv", &SUMMARY_HEADER, summary_rows(reports))?;
    let profile_rows = reports
        .iter()
        .flat_map(|r| {
            r.positional
                .distance_profile()
                .into_iter()
                .enumerate()
                .map(move |(d, v)| vec![r.label.clone(), opt_num(r.iteration), d.to_string(), opt_num(v)])
        })
        .collect();
    emit_csv(
        "positional_profile.csv",
        &["checkpoint", "iteration", "distance", "mean_corr"],
        profile_rows,
    )?;
    for r in reports {
        for (name, body) in [
            (format!("lagcrp_{}.svg", r.label), lagcrp_figure(r, n_heads)),
            (format!("induction_{}.svg", r.label), induction_heatmap(r, n_layers, n_heads)),
        ] {
            write_atomic(&out.join(&name), body.as_bytes())?;
            files.push(name);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_stems() {
        assert_eq!(iteration_from_stem("ckpt_1000"), Some(1000));
        assert_eq!(iteration_from_stem("gpt2"), None);
    }

    #[test]
    fn csv_uses_display_floats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["a", "b"], &[vec![1e-5.to_string(), f64::NAN.to_string()]]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n0.00001,NaN\n");
    }
}
