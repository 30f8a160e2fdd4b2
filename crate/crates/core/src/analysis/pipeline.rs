use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::probes::LagCrpPrompt;
use crate::transformer::{AblationMask, HeadId, Model, ScoreSource};

use super::{
    curve_from_prompt_scores, induction_score, prompt_lag_scores, summarize_heads, AnalysisError,
    HeadTemporalSummary, InductionScoreGrid, LagCrpCurve, ModelSummary, SELECTION_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Curves cover `[-lags, lags]`.
    pub lags: usize,
    /// Recency fits use lags with `|l| > exclusion`.
    pub exclusion: usize,
    pub source: ScoreSource,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    SELECTION_WINDOW
}

impl AnalysisConfig {
    /// Full-size prompts (N=500): lags to ±200, recency beyond ±50.
    pub fn reference() -> Self {
        Self {
            lags: 200,
            exclusion: 50,
            source: ScoreSource::Pre,
            window: SELECTION_WINDOW,
        }
    }

    /// Toy prompts (N=64): the full usable lag range with a narrower
    /// exclusion so enough lags remain for the recency line.
    pub fn toy() -> Self {
        Self {
            lags: 31,
            exclusion: 10,
            source: ScoreSource::Pre,
            window: SELECTION_WINDOW,
        }
    }
}

/// Every metric of one checkpoint, heads in layer-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointAnalysis {
    pub curves: Vec<LagCrpCurve>,
    pub grid: InductionScoreGrid,
    pub heads: Vec<HeadTemporalSummary>,
    pub summary: ModelSummary,
}

impl CheckpointAnalysis {
    pub fn selected(&self) -> Vec<HeadId> {
        self.heads.iter().filter(|h| h.is_induction).map(|h| h.head).collect()
    }
}

/// Lag-CRP curves from `cfg.source` and induction scores from the
/// post-softmax patterns, both averaged over the repeated prompts.
pub fn analyze_model(
    model: &Model,
    prompts: &[LagCrpPrompt],
    cfg: &AnalysisConfig,
) -> Result<CheckpointAnalysis, AnalysisError> {
    let first = prompts
        .first()
        .ok_or_else(|| AnalysisError::Inconsistent("no lag-CRP prompts".into()))?;
    let n = first.n();
    if prompts.iter().any(|p| p.n() != n) {
        return Err(AnalysisError::Inconsistent("prompts differ in N".into()));
    }
    let mc = model.config();
    let heads: Vec<HeadId> = HeadId::all(mc).collect();
    let prepared = model.prepare();
    let none = AblationMask::empty();

    // Captures are reduced as soon as each forward finishes.
    let per_prompt = prompts
        .par_iter()
        .map(|p| {
            let tokens = p.tokens();
            let cap = prepared
                .forward(&tokens, true, &none)?
                .captures
                .expect("capture requested");
            heads
                .iter()
                .map(|&h| {
                    let lag = prompt_lag_scores(cap.matrix(h, cfg.source).expect("valid head"), n, cfg.lags)?;
                    let ind = induction_score(cap.matrix(h, ScoreSource::Post).expect("valid head"), &tokens)?;
                    Ok((lag, ind))
                })
                .collect::<Result<Vec<_>, AnalysisError>>()
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;

    let mut curves = Vec::with_capacity(heads.len());
    let mut grid = InductionScoreGrid::zeros(mc);
    for (k, &h) in heads.iter().enumerate() {
        let lag_scores: Vec<Vec<f64>> = per_prompt.iter().map(|p| p[k].0.clone()).collect();
        curves.push(curve_from_prompt_scores(h, &lag_scores, n, cfg.lags, cfg.source)?);
        grid.set(h, per_prompt.iter().map(|p| p[k].1).sum::<f64>() / per_prompt.len() as f64);
    }
    let head_summaries = summarize_heads(&curves, &grid, cfg.exclusion, cfg.window)?;
    let summary = ModelSummary::from_heads(&head_summaries);
    Ok(CheckpointAnalysis {
        curves,
        grid,
        heads: head_summaries,
        summary,
    })
}
