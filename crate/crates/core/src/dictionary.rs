//! Polynomial dictionaries over derivative columns.

use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::differentiation::DerivativeStack;
use crate::error::{invalid, Result};

/// A product of powers of the base variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial {
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exponents.iter().all(|&e| e == 0)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        self.exponents.iter().zip(vars).filter(|(&e, _)| e > 0).map(|(&e, &v)| v.powi(e as i32)).product()
    }

    /// Renders `f^2 * f'` style names; the empty product is `1`.
    pub fn display<'a>(&'a self, var_names: &'a [String]) -> MonomialDisplay<'a> {
        MonomialDisplay { monomial: self, var_names }
    }
}

pub struct MonomialDisplay<'a> {
    monomial: &'a Monomial,
    var_names: &'a [String],
}

impl fmt::Display for MonomialDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, &e) in self.var_names.iter().zip(&self.monomial.exponents) {
            if e == 0 {
                continue;
            }
            if !first {
                f.write_str(" * ")?;
            }
            first = false;
            if e == 1 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{name}^{e}")?;
            }
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

/// All exponent vectors of total degree at most `max_degree`, ordered by degree
/// and then descending lexicographically, so `f` precedes `f'` and `f^2`
/// precedes `f * f'`.
pub fn enumerate_monomials(n_vars: usize, max_degree: u32) -> Vec<Monomial> {
    fn fill(prefix: &mut Vec<u32>, remaining: u32, slots: usize, out: &mut Vec<Monomial>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(Monomial::new(prefix.clone()));
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(prefix, remaining - e, slots - 1, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n_vars == 0 {
        out.push(Monomial::new(Vec::new()));
        return out;
    }
    for degree in 0..=max_degree {
        fill(&mut Vec::with_capacity(n_vars), degree, n_vars, &mut out);
    }
    out
}

/// Number of monomials in `n_vars` variables of degree at most `max_degree`.
pub fn monomial_count(n_vars: usize, max_degree: u32) -> usize {
    // C(n + d, d), accumulated so every intermediate is an integer.
    let mut c = 1usize;
    for k in 1..=max_degree as usize {
        c = c * (n_vars + k) / k;
    }
    c
}

/// Name of derivative `order` of a variable, `f''` style.
pub fn derivative_name(base: &str, order: usize) -> String {
    format!("{base}{}", "'".repeat(order))
}

/// Dictionary over the derivatives `0..orders` of one or more channels.
///
/// Base variables are laid out channel-major: channel 0 orders `0..orders`,
/// then channel 1, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub channels: Vec<String>,
    /// Derivative orders per channel used as regressors (the target order).
    pub orders: usize,
    pub max_degree: u32,
    pub monomials: Vec<Monomial>,
}

impl Dictionary {
    pub fn new(channels: Vec<String>, orders: usize, max_degree: u32) -> Result<Self> {
        if channels.is_empty() {
            return invalid("a dictionary needs at least one channel");
        }
        if orders == 0 {
            return invalid("target order must be positive");
        }
        let monomials = enumerate_monomials(channels.len() * orders, max_degree);
        Ok(Self { channels, orders, max_degree, monomials })
    }

    pub fn n_vars(&self) -> usize {
        self.channels.len() * self.orders
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn var_index(&self, channel: usize, order: usize) -> usize {
        channel * self.orders + order
    }

    pub fn var_names(&self) -> Vec<String> {
        self.channels.iter().flat_map(|c| (0..self.orders).map(move |o| derivative_name(c, o))).collect()
    }

    pub fn monomial_names(&self) -> Vec<String> {
        let vars = self.var_names();
        self.monomials.iter().map(|m| m.display(&vars).to_string()).collect()
    }

    /// Evaluates every monomial at one point in base-variable space.
    pub fn eval_into(&self, vars: &[f64], out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.monomials) {
            *o = m.eval(vars);
        }
    }
}

/// Design matrix and regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dictionary: Dictionary,
    /// `T' x p`, column `i` evaluates `dictionary.monomials[i]`.
    pub x: Array2<f64>,
    /// Target derivative column.
    pub y: Array1<f64>,
}

impl FeatureMatrix {
    pub fn monomials(&self) -> &[Monomial] {
        &self.dictionary.monomials
    }
}

/// Features for a single observed series: regress the `target_order`-th
/// derivative on monomials of derivatives `0..target_order`. The base variable
/// is named `f`.
pub fn build_features(stack: &DerivativeStack, target_order: usize, max_degree: u32) -> Result<FeatureMatrix> {
    build_features_multi(&[stack], &["f".to_string()], 0, target_order, max_degree)
}

/// Features over several observed channels, targeting one of them.
pub fn build_features_multi(
    stacks: &[&DerivativeStack],
    channel_names: &[String],
    target_channel: usize,
    target_order: usize,
    max_degree: u32,
) -> Result<FeatureMatrix> {
    if stacks.is_empty() || stacks.len() != channel_names.len() {
        return invalid("need one derivative stack per channel name");
    }
    if target_channel >= stacks.len() {
        return invalid(format!("target channel {target_channel} out of range"));
    }
    if target_order == 0 {
        return invalid("target order must be positive");
    }
    let rows = stacks[0].len();
    for s in stacks {
        if s.max_order < target_order {
            return invalid(format!("target order {target_order} exceeds the stack's maximum order {}", s.max_order));
        }
        if s.len() != rows || s.valid_offset != stacks[0].valid_offset {
            return invalid("derivative stacks are not aligned");
        }
    }

    let dictionary = Dictionary::new(channel_names.to_vec(), target_order, max_degree)?;
    let n_vars = dictionary.n_vars();
    let mut x = Array2::zeros((rows, dictionary.len()));
    let mut vars = vec![0.0; n_vars];
    let mut buf = vec![0.0; dictionary.len()];
    for r in 0..rows {
        for (c, s) in stacks.iter().enumerate() {
            for o in 0..target_order {
                vars[dictionary.var_index(c, o)] = s.columns[[r, o]];
            }
        }
        dictionary.eval_into(&vars, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            x[[r, j]] = *v;
        }
    }
    let y = stacks[target_channel].column(target_order).to_owned();
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return invalid("feature matrix contains non-finite values");
    }
    Ok(FeatureMatrix { dictionary, x, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::differentiation::differentiate_slice;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|o| derivative_name("f", o)).collect()
    }

    #[test]
    fn counts_match_binomials() {
        assert_eq!(enumerate_monomials(3, 2).len(), 10);
        assert_eq!(enumerate_monomials(3, 3).len(), 20);
        assert_eq!(enumerate_monomials(1, 0), vec![Monomial::new(vec![0])]);
        for n in 1..=4 {
            for d in 0..=4 {
                assert_eq!(enumerate_monomials(n, d).len(), monomial_count(n, d));
            }
        }
        assert_eq!(monomial_count(6, 3), 84);
    }

    #[test]
    fn graded_lex_order_and_display() {
        let m = enumerate_monomials(2, 2);
        let shown: Vec<String> = m.iter().map(|m| m.display(&names(2)).to_string()).collect();
        assert_eq!(shown, ["1", "f", "f'", "f^2", "f * f'", "f'^2"]);

        let m3 = enumerate_monomials(3, 2);
        let shown: Vec<String> = m3.iter().map(|m| m.display(&names(3)).to_string()).collect();
        assert_eq!(shown, ["1", "f", "f'", "f''", "f^2", "f * f'", "f * f''", "f'^2", "f' * f''", "f''^2"]);
    }

    #[test]
    fn constant_series_features() {
        let stack = differentiate_slice(&[5.0; 12], 0.1, 2).unwrap();
        let fm = build_features(&stack, 2, 2).unwrap();
        assert_eq!(fm.x.ncols(), 6);
        for row in fm.x.rows() {
            assert_eq!(row.to_vec(), vec![1.0, 5.0, 0.0, 25.0, 0.0, 0.0]);
        }
        assert!(fm.y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_row_products() {
        let d = Dictionary::new(vec!["f".into()], 2, 2).unwrap();
        let mut out = vec![0.0; d.len()];
        d.eval_into(&[2.0, 3.0], &mut out);
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn target_order_must_fit_stack() {
        let stack = differentiate_slice(&[1.0; 12], 0.1, 2).unwrap();
        assert!(build_features(&stack, 3, 2).is_err());
    }

    #[test]
    fn multichannel_names() {
        let d = Dictionary::new(vec!["x".into(), "y".into()], 2, 1).unwrap();
        assert_eq!(d.monomial_names(), ["1", "x", "x'", "y", "y'"]);
    }

    #[test]
    fn deterministic() {
        let f: Vec<f64> = (0..40).map(|i| (i as f64 * 0.1).sin()).collect();
        let s = differentiate_slice(&f, 0.1, 3).unwrap();
        assert_eq!(build_features(&s, 3, 3).unwrap(), build_features(&s, 3, 3).unwrap());
    }

    proptest! {
        #[test]
        fn evaluation_is_multiplicative(
            a in proptest::collection::vec(0u32..3, 3),
            b in proptest::collection::vec(0u32..3, 3),
            v in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let sum: Vec<u32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = Monomial::new(sum).eval(&v);
            let rhs = Monomial::new(a).eval(&v) * Monomial::new(b).eval(&v);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
