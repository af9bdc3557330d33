//! Finite-difference derivative estimates of a uniformly sampled scalar series.
//!
//! The `j`-th derivative is the `j`-fold application of the three-point central
//! difference `(f[i+1] - f[i-1]) / (2 dt)`. Each application loses one sample
//! at both ends; every column is cropped to the window of the highest order so
//! that row `r` of every column refers to the same instant.

use ndarray::{Array2, ArrayView1};

use crate::error::{invalid, Result};

/// Highest derivative order supported.
pub const MAX_ORDER: usize = 4;

/// Aligned derivative estimates of orders `0..=max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    pub dt: f64,
    pub max_order: usize,
    /// `T' x (max_order + 1)`; column `j` holds the `j`-th derivative.
    pub columns: Array2<f64>,
    /// Samples trimmed from each end of the source series.
    pub valid_offset: usize,
}

impl DerivativeStack {
    pub fn len(&self) -> usize {
        self.columns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.nrows() == 0
    }

    pub fn column(&self, order: usize) -> ArrayView1<'_, f64> {
        self.columns.column(order)
    }

    /// Index into the source series of the stack's last row.
    pub fn last_source_index(&self) -> usize {
        self.valid_offset + self.len() - 1
    }

    /// `(f, f', ..., f^(max_order-1))` at the last row: the state a companion
    /// system of order `max_order` starts from.
    pub fn endpoint_state(&self) -> Vec<f64> {
        let last = self.columns.row(self.len() - 1);
        last.iter().take(self.max_order).copied().collect()
    }
}

fn central_difference(values: &[f64], dt: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * dt);
    values.windows(3).map(|w| (w[2] - w[0]) * inv).collect()
}

/// Estimates derivatives of orders `0..=max_order`.
pub fn differentiate(series: ArrayView1<'_, f64>, dt: f64, max_order: usize) -> Result<DerivativeStack> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("dt must be positive and finite, got {dt}"));
    }
    if max_order > MAX_ORDER {
        return invalid(format!("derivative order {max_order} exceeds the supported maximum {MAX_ORDER}"));
    }
    if series.len() <= 2 * max_order + 1 {
        return invalid(format!(
            "series of length {} is too short for order {max_order}; need more than {}",
            series.len(),
            2 * max_order + 1
        ));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return invalid("series contains non-finite values");
    }

    let rows = series.len() - 2 * max_order;
    let mut columns = Array2::zeros((rows, max_order + 1));
    let mut current: Vec<f64> = series.to_vec();
    for order in 0..=max_order {
        if order > 0 {
            current = central_difference(&current, dt);
        }
        // `current[k]` sits at source index `k + order`.
        let skip = max_order - order;
        for (r, v) in current[skip..skip + rows].iter().enumerate() {
            columns[[r, order]] = *v;
        }
    }
    if columns.iter().any(|v| !v.is_finite()) {
        return invalid("derivative estimates overflowed");
    }
    Ok(DerivativeStack { dt, max_order, columns, valid_offset: max_order })
}

/// Convenience wrapper over a plain slice.
pub fn differentiate_slice(series: &[f64], dt: f64, max_order: usize) -> Result<DerivativeStack> {
    differentiate(ArrayView1::from(series), dt, max_order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemSpec;

    fn sampled(f: impl Fn(f64) -> f64, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| f(i as f64 * dt)).collect()
    }

    fn max_err(stack: &DerivativeStack, order: usize, exact: impl Fn(f64) -> f64) -> f64 {
        stack
            .column(order)
            .iter()
            .enumerate()
            .map(|(r, v)| (v - exact((r + stack.valid_offset) as f64 * stack.dt)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn quadratic_is_exact() {
        let s = differentiate_slice(&sampled(|t| t * t, 0.1, 50), 0.1, 2).unwrap();
        assert_eq!(s.len(), 46);
        assert!(max_err(&s, 0, |t| t * t) == 0.0);
        assert!(max_err(&s, 1, |t| 2.0 * t) < 1e-10);
        assert!(max_err(&s, 2, |_| 2.0) < 1e-8);
    }

    #[test]
    fn polynomial_exactness_per_order() {
        let dt = 0.1;
        let s2 = differentiate_slice(&sampled(|t| 3.0 * t * t - t + 0.5, dt, 40), dt, 3).unwrap();
        assert!(max_err(&s2, 1, |t| 6.0 * t - 1.0) < 1e-8);
        assert!(max_err(&s2, 2, |_| 6.0) < 1e-8);
        assert!(max_err(&s2, 3, |_| 0.0) < 1e-8);
        // The first difference of a cubic carries an h^2 term, so exactness for
        // cubics starts at order 2.
        let cubic = |t: f64| t * t * t - 2.0 * t;
        let s3 = differentiate_slice(&sampled(cubic, dt, 40), dt, 3).unwrap();
        assert!(max_err(&s3, 2, |t| 6.0 * t) < 1e-8);
        assert!(max_err(&s3, 3, |_| 6.0) < 1e-8);
        assert!((max_err(&s3, 1, |t| 3.0 * t * t - 2.0) - dt * dt).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let s = differentiate_slice(&[5.0; 20], 0.3, 3).unwrap();
        for order in 1..=3 {
            assert!(s.column(order).iter().all(|v| *v == 0.0));
        }
        assert!(s.column(0).iter().all(|v| *v == 5.0));
    }

    #[test]
    fn third_derivative_of_sine() {
        let dt = 0.01;
        let s = differentiate_slice(&sampled(f64::sin, dt, 2000), dt, 3).unwrap();
        assert!(max_err(&s, 3, |t| -t.cos()) < 1e-3);
    }

    #[test]
    fn second_order_convergence() {
        let err = |dt: f64| {
            let n = (6.0 / dt) as usize;
            let s = differentiate_slice(&sampled(f64::sin, dt, n), dt, 1).unwrap();
            max_err(&s, 1, f64::cos)
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn reversal_flips_odd_orders() {
        let dt = 0.05;
        let f = sampled(|t| (1.3 * t).sin() * t.exp() * 0.1, dt, 60);
        let rev: Vec<f64> = f.iter().rev().copied().collect();
        let a = differentiate_slice(&f, dt, 4).unwrap();
        let b = differentiate_slice(&rev, dt, 4).unwrap();
        let n = a.len();
        for j in 0..=4 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            for r in 0..n {
                let lhs = b.columns[[r, j]];
                let rhs = sign * a.columns[[n - 1 - r, j]];
                assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "order {j} row {r}");
            }
        }
    }

    #[test]
    fn endpoint_state_of_constant_and_line() {
        let s = differentiate_slice(&[5.0; 10], 1.0, 2).unwrap();
        assert_eq!(s.endpoint_state(), vec![5.0, 0.0]);

        let dt = 0.1;
        let f = sampled(|t| t, dt, 11);
        let s = differentiate_slice(&f, dt, 2).unwrap();
        let t_last = s.last_source_index() as f64 * dt;
        let e = s.endpoint_state();
        assert!((e[0] - t_last).abs() < 1e-10);
        assert!((e[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn endpoint_state_matches_oscillator() {
        let spec = SystemSpec::oscillator();
        let dt = 0.01;
        let ts = spec.integrate(&[1.0, 0.5], dt, 1000).unwrap();
        let s = differentiate(ts.channel(0), dt, 2).unwrap();
        let i = s.last_source_index();
        let state = [ts.values[[i, 0]], ts.values[[i, 1]]];
        let exact_dx = spec.rhs(&state).unwrap()[0];
        let e = s.endpoint_state();
        assert_eq!(e[0], state[0]);
        // Central-difference truncation: dt^2/6 |x'''|, amplitude here is O(1).
        assert!((e[1] - exact_dx).abs() < 5.0 * dt * dt, "{} vs {}", e[1], exact_dx);
    }

    #[test]
    fn rejects_invalid_input() {
        assert!(differentiate_slice(&[1.0; 5], 0.1, 2).is_err());
        assert!(differentiate_slice(&[1.0; 6], 0.1, 2).is_ok());
        assert!(differentiate_slice(&[1.0; 50], 0.1, 5).is_err());
        assert!(differentiate_slice(&[1.0; 50], 0.0, 1).is_err());
        assert!(differentiate_slice(&[1.0, f64::NAN, 1.0, 1.0], 0.1, 1).is_err());
    }
}
