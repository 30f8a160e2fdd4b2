//! Temporal-bias metrics over captured attention and model outputs.

mod downstream;
mod induction;
mod lagcrp;
mod pipeline;
mod positional;
mod temporal;

use thiserror::Error;

use crate::numerics::NumericsError;
use crate::transformer::TransformerError;

pub use downstream::{downstream_crp, prompt_crp, DownstreamCrp};
pub use induction::{ablation_mask_from_grid, induction_score, layer_matched_control, InductionScoreGrid};
pub use lagcrp::{curve_from_prompt_scores, lag_crp, max_lag_for, prompt_lag_scores, LagCrpCurve};
pub use pipeline::{analyze_model, AnalysisConfig, CheckpointAnalysis};
pub use positional::{positional_correlation, CorrelationMatrix};
pub use temporal::{
    contiguity_fit, is_induction_curve, recency_slope, select_induction_heads, summarize_heads,
    HeadTemporalSummary, ModelSummary, SELECTION_WINDOW,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("lag {max_lag} needs 2·L < N, but N = {n}")]
    LagTooLarge { max_lag: usize, n: usize },
    #[error("missing capture: {0}")]
    MissingCapture(String),
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
    #[error("induction score undefined: pattern has no mass on pairs with a predecessor")]
    UndefinedScore,
    #[error("too few points for a fit: need {needed}, have {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("layer {layer}: control needs {needed} unmasked heads but only {available} remain")]
    ControlUnavailable {
        layer: usize,
        needed: usize,
        available: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] TransformerError),
}
