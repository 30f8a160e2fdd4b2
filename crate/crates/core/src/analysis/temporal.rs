use std::collections::BTreeSet;

use serde::Serialize;

use crate::numerics::{linear_fit, lm_fit_exponential, mean, standard_error, ExpFit, LinearFit};
use crate::transformer::HeadId;

use super::{AnalysisError, InductionScoreGrid, LagCrpCurve};

/// Lag window used to decide whether a head is an induction head.
pub const SELECTION_WINDOW: usize = 10;

/// True iff the curve's maximum over `[-window, window]` sits at `+1` and
/// `S_{+1} > 0`. Ties go to the smallest lag.
pub fn is_induction_curve(curve: &LagCrpCurve, window: usize) -> Result<bool, AnalysisError> {
    let w = window.min(curve.max_lag) as i64;
    if w < 1 {
        return Err(AnalysisError::Inconsistent("selection window must include lag +1".into()));
    }
    let mut best = (i64::MIN, f64::NEG_INFINITY);
    for l in -w..=w {
        let s = curve.score(l).expect("within curve");
        if s > best.1 {
            best = (l, s);
        }
    }
    Ok(best.0 == 1 && best.1 > 0.0)
}

pub fn select_induction_heads(curves: &[LagCrpCurve], window: usize) -> Result<BTreeSet<HeadId>, AnalysisError> {
    let mut out = BTreeSet::new();
    for c in curves {
        if is_induction_curve(c, window)? {
            out.insert(c.head);
        }
    }
    Ok(out)
}

/// Least-squares line through all lags with `|l| > exclusion`, both signs
/// pooled.
pub fn recency_slope(curve: &LagCrpCurve, exclusion: usize) -> Result<LinearFit, AnalysisError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .points()
        .filter(|(l, _)| l.unsigned_abs() as usize > exclusion)
        .map(|(l, s)| (l as f64, s))
        .unzip();
    if xs.len() < 4 {
        return Err(AnalysisError::TooFewPoints {
            needed: 4,
            found: xs.len(),
        });
    }
    Ok(linear_fit(&xs, &ys)?)
}

/// Exponential `a·exp(-l/τ)` fitted to the positive-lag residuals left after
/// removing the recency line. Residuals that are nowhere positive give a
/// non-converged fit with `a = 0`.
pub fn contiguity_fit(curve: &LagCrpCurve, recency: &LinearFit) -> Result<ExpFit, AnalysisError> {
    let (ts, rs): (Vec<f64>, Vec<f64>) = curve
        .points()
        .filter(|&(l, _)| l >= 1)
        .map(|(l, s)| (l as f64, s - recency.eval(l as f64)))
        .unzip();
    if ts.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            needed: 2,
            found: ts.len(),
        });
    }
    if rs.iter().all(|&r| r <= 0.0) {
        return Ok(ExpFit {
            a: 0.0,
            tau: f64::NAN,
            residual_sse: rs.iter().map(|r| r * r).sum(),
            converged: false,
            iterations: 0,
        });
    }
    Ok(lm_fit_exponential(&ts, &rs, None)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadTemporalSummary {
    pub head: HeadId,
    pub is_induction: bool,
    pub induction_score: f64,
    pub recency: LinearFit,
    /// Only computed for selected heads.
    pub contiguity: Option<ExpFit>,
}

pub fn summarize_heads(
    curves: &[LagCrpCurve],
    grid: &InductionScoreGrid,
    exclusion: usize,
    window: usize,
) -> Result<Vec<HeadTemporalSummary>, AnalysisError> {
    curves
        .iter()
        .map(|c| {
            let is_induction = is_induction_curve(c, window)?;
            let recency = recency_slope(c, exclusion)?;
            let contiguity = if is_induction {
                Some(contiguity_fit(c, &recency)?)
            } else {
                None
            };
            Ok(HeadTemporalSummary {
                head: c.head,
                is_induction,
                induction_score: grid.get(c.head),
                recency,
                contiguity,
            })
        })
        .collect()
}

/// Model-level metrics. `avg_*` fields average over selected heads only and
/// are `None` when no head is selected (or, for τ, none converged).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub n_heads: usize,
    pub n_induction: usize,
    pub avg_induction: Option<f64>,
    pub avg_tau: Option<f64>,
    pub avg_slope: Option<f64>,
    pub slope_std_err: Option<f64>,
    pub mean_induction_all: f64,
    pub max_induction: f64,
    pub mean_slope_all: f64,
    pub slope_std_err_all: Option<f64>,
}

impl ModelSummary {
    pub fn from_heads(heads: &[HeadTemporalSummary]) -> Self {
        let selected: Vec<&HeadTemporalSummary> = heads.iter().filter(|h| h.is_induction).collect();
        let sel_scores: Vec<f64> = selected.iter().map(|h| h.induction_score).collect();
        let sel_slopes: Vec<f64> = selected.iter().map(|h| h.recency.slope).collect();
        let taus: Vec<f64> = selected
            .iter()
            .filter_map(|h| h.contiguity.filter(|f| f.converged).map(|f| f.tau))
            .collect();
        let all_scores: Vec<f64> = heads.iter().map(|h| h.induction_score).collect();
        let all_slopes: Vec<f64> = heads.iter().map(|h| h.recency.slope).collect();
        Self {
            n_heads: heads.len(),
            n_induction: selected.len(),
            avg_induction: mean(&sel_scores),
            avg_tau: mean(&taus),
            avg_slope: mean(&sel_slopes),
            slope_std_err: standard_error(&sel_slopes),
            mean_induction_all: mean(&all_scores).unwrap_or(f64::NAN),
            max_induction: all_scores.iter().cloned().fold(f64::NAN, f64::max),
            mean_slope_all: mean(&all_slopes).unwrap_or(f64::NAN),
            slope_std_err_all: standard_error(&all_slopes),
        }
    }

    /// `(metric, value)` rows; undefined metrics are written as `NaN`.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
        vec![
            ("average_induction_score", opt(self.avg_induction)),
            ("average_time_constant", opt(self.avg_tau)),
            ("average_recency_slope", opt(self.avg_slope)),
            ("recency_slope_std_err", opt(self.slope_std_err)),
            ("number_of_induction_heads", self.n_induction as f64),
            ("number_of_heads", self.n_heads as f64),
            ("mean_induction_score_all_heads", self.mean_induction_all),
            ("max_induction_score", self.max_induction),
            ("mean_recency_slope_all_heads", self.mean_slope_all),
            ("recency_slope_std_err_all_heads", opt(self.slope_std_err_all)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ScoreSource;
    use proptest::prelude::*;

    fn curve(max_lag: usize, f: impl Fn(i64) -> f64) -> LagCrpCurve {
        let l = max_lag as i64;
        LagCrpCurve {
            head: HeadId::new(0, 0),
            max_lag,
            scores: (-l..=l).map(f).collect(),
            std_err: vec![0.0; 2 * max_lag + 1],
            n: 2 * max_lag + 2,
            m: 1,
            source: ScoreSource::Pre,
        }
    }

    #[test]
    fn selection_rule() {
        assert!(is_induction_curve(&curve(20, |l| if l == 1 { 2.0 } else { 0.1 }), 10).unwrap());
        assert!(!is_induction_curve(&curve(20, |l| if l == 0 { 2.0 } else { 0.1 }), 10).unwrap());
        // Peak at +1 but non-positive.
        assert!(!is_induction_curve(&curve(20, |l| if l == 1 { 0.0 } else { -1.0 }), 10).unwrap());
        assert!(!is_induction_curve(&curve(20, |_| 0.0), 10).unwrap());
        // A larger score outside the window does not matter.
        assert!(is_induction_curve(&curve(20, |l| match l { 1 => 2.0, 15 => 9.0, _ => 0.0 }), 10).unwrap());
    }

    #[test]
    fn planted_slope_survives_bump_inside_exclusion() {
        let c = curve(100, |l| 0.003 * l as f64 + if l.abs() <= 3 { 1.0 } else { 0.0 });
        let fit = recency_slope(&c, 50).unwrap();
        assert!((fit.slope - 0.003).abs() < 1e-15, "{}", fit.slope);
        assert!(fit.intercept.abs() < 1e-12);
        let flat = recency_slope(&curve(60, |_| 0.25), 50).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(matches!(recency_slope(&curve(51, |_| 0.0), 50), Err(AnalysisError::TooFewPoints { .. })));
    }

    #[test]
    fn contiguity_recovers_planted_bump() {
        let c = curve(60, |l| 0.002 * l as f64 + if l > 0 { 0.4 * (-(l as f64) / 3.1).exp() } else { 0.0 });
        let rec = recency_slope(&c, 50).unwrap();
        let fit = contiguity_fit(&c, &rec).unwrap();
        assert!(fit.converged);
        assert!((fit.a - 0.4).abs() < 1e-4 && (fit.tau - 3.1).abs() < 1e-4, "{fit:?}");
    }

    #[test]
    fn non_positive_residuals_give_empty_fit() {
        let c = curve(60, |l| -0.1 * l.abs() as f64);
        let rec = LinearFit {
            slope: 0.0,
            intercept: 0.0,
            residual_sse: 0.0,
        };
        let fit = contiguity_fit(&c, &rec).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.a, 0.0);
    }

    #[test]
    fn summary_averages_selected_heads_only() {
        let mut a = curve(20, |l| if l == 1 { 1.0 } else { 0.01 * l as f64 });
        a.head = HeadId::new(0, 0);
        let mut b = curve(20, |l| if l == 0 { 1.0 } else { -0.02 * l as f64 });
        b.head = HeadId::new(0, 1);
        let grid = InductionScoreGrid::new(1, 2, vec![0.6, 0.1]).unwrap();
        let heads = summarize_heads(&[a, b], &grid, 5, 10).unwrap();
        let s = ModelSummary::from_heads(&heads);
        assert_eq!(s.n_induction, 1);
        assert_eq!(s.avg_induction, Some(0.6));
        assert!((s.mean_induction_all - 0.35).abs() < 1e-15);
        assert!((s.avg_slope.unwrap() - 0.01).abs() < 1e-12);
        assert!(heads[1].contiguity.is_none());
    }

    proptest! {
        #[test]
        fn selection_ignores_positive_rescaling(seed in 0u64..5000, k in 0.01f64..100.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..41).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = curve(20, |l| vals[(l + 20) as usize]);
            prop_assert_eq!(is_induction_curve(&c, 10).unwrap(), is_induction_curve(&c.scaled(k), 10).unwrap());
        }

        #[test]
        fn constant_offset_leaves_tau(shift in -1.0f64..1.0) {
            let base = |l: i64| 0.001 * l as f64 + if l > 0 { 0.3 * (-(l as f64) / 4.0).exp() } else { 0.0 };
            let c0 = curve(40, base);
            let c1 = curve(40, |l| base(l) + shift);
            let f0 = contiguity_fit(&c0, &recency_slope(&c0, 20).unwrap()).unwrap();
            let r1 = recency_slope(&c1, 20).unwrap();
            let f1 = contiguity_fit(&c1, &r1).unwrap();
            prop_assert!((f0.tau - f1.tau).abs() < 1e-6);
        }
    }
}
