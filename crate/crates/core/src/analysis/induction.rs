use crate::numerics::Tensor;
use crate::transformer::{AblationMask, HeadId, ModelConfig};

use super::AnalysisError;

/// Induction matching score of one attention pattern:
/// `I = Σ a[i][j]·t[i][j] / Σ a[i][j]` over causal pairs with `j ≥ 1`, where
/// `t[i][j] = 1` iff `tokens[i] == tokens[j - 1]`.
pub fn induction_score(pattern: &Tensor, tokens: &[u32]) -> Result<f64, AnalysisError> {
    let (rows, cols) = pattern.dims2()?;
    if rows != cols || rows != tokens.len() {
        return Err(AnalysisError::Inconsistent(format!(
            "pattern {rows}×{cols} does not match {} tokens",
            tokens.len()
        )));
    }
    let mut matched = 0.0;
    let mut total = 0.0;
    for i in 1..rows {
        let row = pattern.row(i);
        for j in 1..=i {
            let a = row[j] as f64;
            total += a;
            if tokens[i] == tokens[j - 1] {
                matched += a;
            }
        }
    }
    if total == 0.0 {
        return Err(AnalysisError::UndefinedScore);
    }
    Ok(matched / total)
}

/// Induction scores of every head, `[n_layers × n_heads]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InductionScoreGrid {
    pub n_layers: usize,
    pub n_heads: usize,
    scores: Vec<f64>,
}

impl InductionScoreGrid {
    pub fn new(n_layers: usize, n_heads: usize, scores: Vec<f64>) -> Result<Self, AnalysisError> {
        if scores.len() != n_layers * n_heads {
            return Err(AnalysisError::Inconsistent(format!(
                "{} scores for a {n_layers}×{n_heads} grid",
                scores.len()
            )));
        }
        Ok(Self {
            n_layers,
            n_heads,
            scores,
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            scores: vec![0.0; cfg.n_heads_total()],
        }
    }

    pub fn get(&self, id: HeadId) -> f64 {
        self.scores[id.layer * self.n_heads + id.head]
    }

    pub fn set(&mut self, id: HeadId, v: f64) {
        self.scores[id.layer * self.n_heads + id.head] = v;
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// `(head, score)` in layer-major order.
    pub fn iter(&self) -> impl Iterator<Item = (HeadId, f64)> + '_ {
        self.scores
            .iter()
            .enumerate()
            .map(|(k, &s)| (HeadId::new(k / self.n_heads, k % self.n_heads), s))
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn median(&self) -> f64 {
        let mut s = self.scores.clone();
        s.sort_by(f64::total_cmp);
        let k = s.len();
        if k % 2 == 1 {
            s[k / 2]
        } else {
            0.5 * (s[k / 2 - 1] + s[k / 2])
        }
    }
}

/// Heads scoring strictly above `threshold`.
pub fn ablation_mask_from_grid(grid: &InductionScoreGrid, threshold: f64) -> AblationMask {
    grid.iter().filter(|&(_, s)| s > threshold).map(|(h, _)| h).collect()
}

/// Control mask with the same number of heads per layer as `mask`, taking
/// the lowest-scoring heads of each layer outside `mask`. Ties go to the
/// lower head index.
pub fn layer_matched_control(grid: &InductionScoreGrid, mask: &AblationMask) -> Result<AblationMask, AnalysisError> {
    let counts = mask.per_layer_counts(grid.n_layers);
    let mut control = AblationMask::empty();
    for (layer, &want) in counts.iter().enumerate() {
        let mut candidates: Vec<(f64, usize)> = (0..grid.n_heads)
            .filter(|&h| !mask.contains(layer, h))
            .map(|h| (grid.get(HeadId::new(layer, h)), h))
            .collect();
        if candidates.len() < want {
            return Err(AnalysisError::ControlUnavailable {
                layer,
                needed: want,
                available: candidates.len(),
            });
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, h) in &candidates[..want] {
            control.insert(HeadId::new(layer, h));
        }
    }
    Ok(control)
}
