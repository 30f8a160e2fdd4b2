use rayon::prelude::*;

use crate::probes::FreeRecallPrompt;
use crate::transformer::{AblationMask, PreparedModel};

use super::AnalysisError;

/// Mean next-token probability of each list item, indexed by lag from the
/// cue (`l = 0` is the cue itself).
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamCrp {
    pub lags: Vec<i64>,
    pub probs: Vec<f64>,
    /// Mean probability mass on tokens outside the list.
    pub non_list_mass: f64,
    pub m: usize,
    pub label: String,
}

impl DownstreamCrp {
    pub fn prob(&self, lag: i64) -> Option<f64> {
        self.lags.iter().position(|&l| l == lag).map(|k| self.probs[k])
    }

    /// Mean probability over `lo..=hi`, skipping lags outside the list.
    pub fn mean_over(&self, lo: i64, hi: i64) -> Option<f64> {
        let v: Vec<f64> = (lo..=hi).filter_map(|l| self.prob(l)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Splits one next-token distribution into per-lag list probabilities and
/// the remaining mass.
pub fn prompt_crp(dist: &[f64], prompt: &FreeRecallPrompt) -> (Vec<f64>, f64) {
    let per_lag: Vec<f64> = prompt.list_tokens.iter().map(|&t| dist[t as usize]).collect();
    let mut in_list = vec![false; dist.len()];
    for &t in &prompt.list_tokens {
        in_list[t as usize] = true;
    }
    let other = dist.iter().zip(&in_list).filter(|(_, &i)| !i).map(|(p, _)| p).sum();
    (per_lag, other)
}

pub fn downstream_crp(
    model: &PreparedModel<'_>,
    prompts: &[FreeRecallPrompt],
    ablate: &AblationMask,
    label: &str,
) -> Result<DownstreamCrp, AnalysisError> {
    let first = prompts
        .first()
        .ok_or_else(|| AnalysisError::Inconsistent("no free-recall prompts".into()))?;
    let (n, middle) = (first.n(), first.middle_index);
    if prompts.iter().any(|p| p.n() != n || p.middle_index != middle) {
        return Err(AnalysisError::Inconsistent("prompts differ in N or middle index".into()));
    }
    let per_prompt = prompts
        .par_iter()
        .map(|p| {
            let dist = model.next_token_probs(&p.tokens(), ablate)?;
            Ok(prompt_crp(&dist, p))
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let m = per_prompt.len() as f64;
    let mut probs = vec![0.0; n];
    let mut other = 0.0;
    for (lagged, rest) in &per_prompt {
        for (acc, v) in probs.iter_mut().zip(lagged) {
            *acc += v;
        }
        other += rest;
    }
    probs.iter_mut().for_each(|p| *p /= m);
    Ok(DownstreamCrp {
        lags: (0..n as i64).map(|k| k - middle as i64).collect(),
        probs,
        non_list_mass: other / m,
        m: prompts.len(),
        label: label.to_string(),
    })
}
