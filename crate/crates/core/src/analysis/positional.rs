use crate::numerics::{pearson_corr, NumericsError, Tensor};

use super::AnalysisError;

/// Pairwise Pearson correlations between positional-embedding rows.
/// Entries involving a constant row are undefined (`None`).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub n: usize,
    values: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n + j]
    }

    /// `profile[d]` is the mean correlation over defined pairs `(i, i + d)`.
    pub fn distance_profile(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|d| {
                let vals: Vec<f64> = (0..self.n - d).filter_map(|i| self.get(i, i + d)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// Mean of the distance profile over `1..=max_distance`.
    pub fn near_diagonal_mean(&self, max_distance: usize) -> Option<f64> {
        let prof = self.distance_profile();
        let vals: Vec<f64> = prof.iter().skip(1).take(max_distance).filter_map(|v| *v).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean absolute correlation over defined off-diagonal pairs.
    pub fn mean_abs_off_diagonal(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut k = 0usize;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    if let Some(v) = self.get(i, j) {
                        sum += v.abs();
                        k += 1;
                    }
                }
            }
        }
        (k > 0).then(|| sum / k as f64)
    }
}

pub fn positional_correlation(p: &Tensor) -> Result<CorrelationMatrix, AnalysisError> {
    let (n, _) = p.dims2()?;
    if n < 2 {
        return Err(AnalysisError::Inconsistent("need at least two positions".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| p.row(i).iter().map(|&v| v as f64).collect()).collect();
    let mut values = vec![None; n * n];
    for i in 0..n {
        for j in i..n {
            let r = match pearson_corr(&rows[i], &rows[j]) {
                Ok(r) => Some(r),
                Err(NumericsError::UndefinedCorrelation { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(CorrelationMatrix { n, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{rng_for, Stream};
    use crate::transformer::{Model, ModelConfig};

    #[test]
    fn self_and_identical_rows() {
        let p = Tensor::from_rows(&[vec![1.0, 2.0, 4.0], vec![0.0, -1.0, 3.0], vec![5.0, 5.0, 1.0]]).unwrap();
        let c = positional_correlation(&p).unwrap();
        for i in 0..3 {
            assert!((c.get(i, i).unwrap() - 1.0).abs() < 1e-15);
        }
        let same = Tensor::from_rows(&vec![vec![0.3, -1.0, 2.0, 0.5]; 4]).unwrap();
        let c = positional_correlation(&same).unwrap();
        assert!((0..4).all(|i| (0..4).all(|j| (c.get(i, j).unwrap() - 1.0).abs() < 1e-15)));
        assert!((c.near_diagonal_mean(2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_rows_are_missing() {
        let p = Tensor::from_rows(&[vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let c = positional_correlation(&p).unwrap();
        assert_eq!(c.get(0, 1), None);
        assert_eq!(c.get(0, 0), None);
        assert!(c.get(1, 1).is_some());
        assert_eq!(c.distance_profile()[1], None);
    }

    #[test]
    fn random_init_is_nearly_uncorrelated() {
        let mut cfg = ModelConfig::gpt2_small();
        cfg.n_layers = 1;
        cfg.vocab_size = 8;
        cfg.ctx_len = 64;
        let m = Model::init(cfg, &mut rng_for(0, Stream::Init)).unwrap();
        let c = positional_correlation(&m.positional_embedding()).unwrap();
        assert!(c.mean_abs_off_diagonal().unwrap() < 0.1);
    }
}
