use super::NumericsError;

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Standard error of the mean (sample standard deviation / √n).
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((var / xs.len() as f64).sqrt())
}

/// Sample Pearson correlation coefficient.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64, NumericsError> {
    if x.len() != y.len() {
        return Err(NumericsError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(NumericsError::InvalidInput("need at least two samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(NumericsError::UndefinedCorrelation { which: "x" });
    }
    if syy == 0.0 {
        return Err(NumericsError::UndefinedCorrelation { which: "y" });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson_corr(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson_corr(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // deviations (-1.5,-0.5,0.5,1.5) and (-1.5,0.5,-0.5,1.5): sxy = 4, sxx = syy = 5
        let r = pearson_corr(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pearson_zero_variance() {
        assert_eq!(
            pearson_corr(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            NumericsError::UndefinedCorrelation { which: "x" }
        );
        assert!(pearson_corr(&[1.0, 2.0], &[5.0, 5.0]).is_err());
    }

    #[test]
    fn standard_error_known() {
        // sd of [1,2,3,4] = sqrt(5/3)
        let se = standard_error(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        assert!(standard_error(&[1.0]).is_none());
    }

    proptest! {
        #[test]
        fn self_and_negated(x in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - x.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((pearson_corr(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((pearson_corr(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        }
    }
}
