//! Forecast scores and the naive baseline.

use crate::error::{invalid, Result};

/// One SMAPE term `|F - A| / ((|A| + |F|) / 2)`; two zeros score 0.
pub fn smape_term(actual: f64, forecast: f64) -> f64 {
    let denom = (actual.abs() + forecast.abs()) / 2.0;
    if denom == 0.0 {
        0.0
    } else {
        (forecast - actual).abs() / denom
    }
}

/// Symmetric mean absolute percentage error, in `[0, 2]`.
pub fn smape(truth: &[f64], forecast: &[f64]) -> Result<f64> {
    if truth.len() != forecast.len() {
        return invalid(format!("{} truth values against {} forecasts", truth.len(), forecast.len()));
    }
    if truth.is_empty() {
        return invalid("SMAPE needs at least one point");
    }
    let total: f64 = truth.iter().zip(forecast).map(|(a, f)| smape_term(*a, *f)).sum();
    Ok(total / truth.len() as f64)
}

/// Predicts the mean of the last `window` observations at every horizon.
pub fn naive_forecast(series: &[f64], window: usize, horizons: &[usize]) -> Result<Vec<f64>> {
    if window == 0 {
        return invalid("window must be positive");
    }
    if series.len() < window {
        return invalid(format!("series of length {} is shorter than the window {window}", series.len()));
    }
    let tail = &series[series.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    Ok(vec![mean; horizons.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[1.0, -3.0, 2.5], &[1.0, -3.0, 2.5]).unwrap(), 0.0);
        assert!((smape(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(smape(&[1.0], &[-1.0]).unwrap(), 2.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0], &[3.0]).unwrap(), 2.0);
    }

    #[test]
    fn smape_rejects_mismatch() {
        assert!(smape(&[1.0], &[1.0, 2.0]).is_err());
        assert!(smape(&[], &[]).is_err());
    }

    #[test]
    fn naive_examples() {
        let mut s = vec![9.0; 10];
        s.extend(std::iter::repeat_n(3.0, 24));
        assert_eq!(naive_forecast(&s, 24, &[1, 2, 48]).unwrap(), vec![3.0; 3]);

        let ramp: Vec<f64> = (1..=24).map(f64::from).collect();
        assert_eq!(naive_forecast(&ramp, 24, &[1, 5]).unwrap(), vec![12.5, 12.5]);
        assert_eq!(naive_forecast(&[1.0, 2.0, 7.0], 1, &[1, 2]).unwrap(), vec![7.0, 7.0]);
        assert!(naive_forecast(&ramp, 25, &[1]).is_err());
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..30)
            .prop_flat_map(|n| (proptest::collection::vec(-1e6f64..1e6, n), proptest::collection::vec(-1e6f64..1e6, n)))
    }

    proptest! {
        #[test]
        fn symmetric((a, f) in pairs()) {
            prop_assert_eq!(smape(&a, &f).unwrap(), smape(&f, &a).unwrap());
        }

        #[test]
        fn bounded((a, f) in pairs()) {
            let s = smape(&a, &f).unwrap();
            prop_assert!((0.0..=2.0).contains(&s));
        }

        #[test]
        fn scale_invariant((a, f) in pairs(), k in 1e-3f64..1e3) {
            let ka: Vec<f64> = a.iter().map(|v| v * k).collect();
            let kf: Vec<f64> = f.iter().map(|v| v * k).collect();
            let d = (smape(&ka, &kf).unwrap() - smape(&a, &f).unwrap()).abs();
            prop_assert!(d <= 1e-12);
        }
    }
}
