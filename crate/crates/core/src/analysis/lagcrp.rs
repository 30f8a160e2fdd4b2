use crate::numerics::{mean, standard_error, Tensor};
use crate::transformer::{AttentionCapture, HeadId, ScoreSource};

use super::AnalysisError;

/// Attention lag-CRP of one head: `S_l` for `l ∈ [-L, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCrpCurve {
    pub head: HeadId,
    pub max_lag: usize,
    /// Length `2L + 1`; index `l + L`.
    pub scores: Vec<f64>,
    /// Standard error of each lag over prompts (zero for a single prompt).
    pub std_err: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub source: ScoreSource,
}

impl LagCrpCurve {
    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        let l = self.max_lag as i64;
        -l..=l
    }

    pub fn score(&self, lag: i64) -> Option<f64> {
        let idx = lag + self.max_lag as i64;
        (idx >= 0).then(|| self.scores.get(idx as usize).copied()).flatten()
    }

    /// `(lag, score)` pairs in ascending lag order.
    pub fn points(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.lags().zip(self.scores.iter().copied())
    }

    /// The same curve with every score multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut c = self.clone();
        c.scores.iter_mut().for_each(|s| *s *= k);
        c.std_err.iter_mut().for_each(|s| *s *= k.abs());
        c
    }
}

/// Largest usable lag for source length `n`: the window `|l| < s ≤ n − |l|`
/// must be non-empty, so `2L < n`.
pub fn max_lag_for(n: usize) -> usize {
    n.saturating_sub(1) / 2
}

/// Lag scores of one `[2n × 2n]` matrix for `l ∈ [-L, L]`.
///
/// With 1-based positions, `S_l = 1/(n − 2|l|) · Σ_{|l| < s ≤ n − |l|} a[s + n][s + l]`;
/// row `s + n` is the repeat of source position `s`, column `s + l` is the
/// source token `l` places after it.
pub fn prompt_lag_scores(a: &Tensor, n: usize, max_lag: usize) -> Result<Vec<f64>, AnalysisError> {
    let (rows, cols) = a.dims2()?;
    if rows != 2 * n || cols != 2 * n {
        return Err(AnalysisError::Inconsistent(format!(
            "capture is {rows}×{cols}, expected {0}×{0} for N={n}",
            2 * n
        )));
    }
    if 2 * max_lag >= n {
        return Err(AnalysisError::LagTooLarge { max_lag, n });
    }
    let l_max = max_lag as i64;
    let mut out = Vec::with_capacity(2 * max_lag + 1);
    for l in -l_max..=l_max {
        let abs = l.unsigned_abs() as usize;
        let mut sum = 0.0;
        for s in abs + 1..=n - abs {
            let row = s + n - 1;
            let col = (s as i64 + l - 1) as usize;
            sum += a.at(row, col) as f64;
        }
        out.push(sum / (n - 2 * abs) as f64);
    }
    Ok(out)
}

/// Averages per-prompt lag scores into a curve.
pub fn curve_from_prompt_scores(
    head: HeadId,
    per_prompt: &[Vec<f64>],
    n: usize,
    max_lag: usize,
    source: ScoreSource,
) -> Result<LagCrpCurve, AnalysisError> {
    let width = 2 * max_lag + 1;
    if per_prompt.is_empty() {
        return Err(AnalysisError::MissingCapture("no prompts".into()));
    }
    if let Some(bad) = per_prompt.iter().find(|p| p.len() != width) {
        return Err(AnalysisError::Inconsistent(format!(
            "prompt curve has {} lags, expected {width}",
            bad.len()
        )));
    }
    let mut scores = Vec::with_capacity(width);
    let mut std_err = Vec::with_capacity(width);
    for k in 0..width {
        let col: Vec<f64> = per_prompt.iter().map(|p| p[k]).collect();
        scores.push(mean(&col).expect("non-empty"));
        std_err.push(standard_error(&col).unwrap_or(0.0));
    }
    Ok(LagCrpCurve {
        head,
        max_lag,
        scores,
        std_err,
        n,
        m: per_prompt.len(),
        source,
    })
}

/// Lag-CRP of `head` averaged over the captures of `m` repeated prompts.
pub fn lag_crp(
    captures: &[AttentionCapture],
    head: HeadId,
    max_lag: usize,
    source: ScoreSource,
) -> Result<LagCrpCurve, AnalysisError> {
    let first = captures
        .first()
        .ok_or_else(|| AnalysisError::MissingCapture("no captures".into()))?;
    let len = first.seq_len();
    if len % 2 != 0 {
        return Err(AnalysisError::Inconsistent(format!("capture length {len} is not 2N")));
    }
    let n = len / 2;
    let per_prompt = captures
        .iter()
        .map(|c| {
            if c.seq_len() != len {
                return Err(AnalysisError::Inconsistent("captures differ in length".into()));
            }
            let a = c
                .matrix(head, source)
                .ok_or_else(|| AnalysisError::MissingCapture(format!("head {head}")))?;
            prompt_lag_scores(a, n, max_lag)
        })
        .collect::<Result<Vec<_>, _>>()?;
    curve_from_prompt_scores(head, &per_prompt, n, max_lag, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::transformer::HeadCapture;
    use proptest::prelude::*;

    fn capture_of(mats: Vec<Tensor>) -> AttentionCapture {
        let heads = mats
            .into_iter()
            .map(|m| HeadCapture {
                pre_softmax: m.clone(),
                post_softmax: m,
            })
            .collect();
        AttentionCapture::new(1, heads).unwrap()
    }

    // Direct transcription with 1-based positions over every (s, l) pair.
    fn oracle(mats: &[Tensor], n: usize, max_lag: usize) -> Vec<f64> {
        let big_l = max_lag as i64;
        let mut out = vec![];
        for l in -big_l..=big_l {
            let mut total = 0.0;
            for a in mats {
                let mut inner = 0.0;
                let mut count = 0;
                for s in 1..=(n as i64) {
                    if s > l.abs() && s <= n as i64 - l.abs() {
                        let (i, j) = (s + n as i64, s + l);
                        inner += a.at((i - 1) as usize, (j - 1) as usize) as f64;
                        count += 1;
                    }
                }
                assert_eq!(count, n as i64 - 2 * l.abs());
                total += inner / (n as i64 - 2 * l.abs()) as f64;
            }
            out.push(total / mats.len() as f64);
        }
        out
    }

    fn random_matrix(n2: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n2 * n2).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        Tensor::new(vec![n2, n2], data).unwrap()
    }

    #[test]
    fn perfect_induction_pattern() {
        let n = 8;
        let mut a = Tensor::zeros(&[2 * n, 2 * n]);
        // Repeat of source position s (0-based) attends to source s + 1.
        for s in 0..n - 1 {
            a.set(n + s, s + 1, 1.0);
        }
        let c = lag_crp(&[capture_of(vec![a])], HeadId::new(0, 0), 3, ScoreSource::Post).unwrap();
        for (l, s) in c.points() {
            assert_eq!(s, if l == 1 { 1.0 } else { 0.0 }, "lag {l}");
        }
    }

    #[test]
    fn normalizer_for_long_prompt() {
        // N=500, l=10: one unit of mass spread over a 480-position window.
        let n = 500;
        let mut b = Tensor::zeros(&[2 * n, 2 * n]);
        b.set(11 + n - 1, 11 + 10 - 1, 480.0);
        assert_eq!(prompt_lag_scores(&b, n, 10).unwrap()[20], 1.0);
    }

    #[test]
    fn lag_bounds() {
        let a = Tensor::zeros(&[16, 16]);
        assert!(prompt_lag_scores(&a, 8, 3).is_ok());
        assert!(matches!(prompt_lag_scores(&a, 8, 4), Err(AnalysisError::LagTooLarge { .. })));
        assert_eq!(max_lag_for(8), 3);
        assert_eq!(max_lag_for(64), 31);
    }

    #[test]
    fn standard_error_shrinks_with_more_prompts() {
        let n = 12;
        let curve = |m: usize| {
            let caps: Vec<_> = (0..m).map(|i| capture_of(vec![random_matrix(2 * n, i as u64)])).collect();
            lag_crp(&caps, HeadId::new(0, 0), 5, ScoreSource::Pre).unwrap()
        };
        let small: f64 = curve(4).std_err.iter().sum();
        let large: f64 = curve(64).std_err.iter().sum();
        assert!(large < small, "{large} vs {small}");
        assert!(curve(1).std_err.iter().all(|&s| s == 0.0));
    }

    proptest! {
        #[test]
        fn matches_double_loop(n in 2usize..=16, m in 1usize..4, seed in 0u64..10_000) {
            let max_lag = max_lag_for(n);
            let mats: Vec<Tensor> = (0..m).map(|i| random_matrix(2 * n, seed * 7 + i as u64)).collect();
            let caps: Vec<_> = mats.iter().map(|t| capture_of(vec![t.clone()])).collect();
            let curve = lag_crp(&caps, HeadId::new(0, 0), max_lag, ScoreSource::Pre).unwrap();
            for (got, want) in curve.scores.iter().zip(oracle(&mats, n, max_lag)) {
                prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }
}
