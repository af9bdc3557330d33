//! Benchmark dynamical systems and a fixed-step RK4 integrator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::timeseries::TimeSeries;

/// The benchmark systems used to generate ground-truth data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSpec {
    /// Linear planar system `(x, y)' = [[a, b], [c, d]] (x, y)`.
    Oscillator { a: f64, b: f64, c: f64, d: f64 },
    /// `x' = -y - z`, `y' = x + a y`, `z' = b + z (x - c)`.
    Rossler { a: f64, b: f64, c: f64 },
    /// `x' = sigma (y - x)`, `y' = x (rho - z) - y`, `z' = x y - beta z`.
    Lorenz { sigma: f64, rho: f64, beta: f64 },
}

/// Anything that can be stepped by [`rk4_step`].
pub trait Dynamics {
    fn dim(&self) -> usize;

    /// Writes the time derivative of `state` into `out`.
    fn eval(&self, state: &[f64], out: &mut [f64]) -> Result<()>;
}

impl SystemSpec {
    pub fn oscillator() -> Self {
        SystemSpec::Oscillator { a: 0.1, b: -1.0, c: 1.0, d: 0.0 }
    }

    pub fn rossler() -> Self {
        SystemSpec::Rossler { a: 0.52, b: 2.0, c: 4.0 }
    }

    pub fn lorenz() -> Self {
        SystemSpec::Lorenz { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }

    /// Looks up a system by name with its default coefficients.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "oscillator" => Ok(Self::oscillator()),
            "rossler" => Ok(Self::rossler()),
            "lorenz" => Ok(Self::lorenz()),
            other => invalid(format!("unknown system `{other}`")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::Oscillator { .. } => "oscillator",
            SystemSpec::Rossler { .. } => "rossler",
            SystemSpec::Lorenz { .. } => "lorenz",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::Oscillator { .. } => 2,
            SystemSpec::Rossler { .. } | SystemSpec::Lorenz { .. } => 3,
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            SystemSpec::Oscillator { .. } => &["x", "y"],
            _ => &["x", "y", "z"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Named coefficients in declaration order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            SystemSpec::Oscillator { a, b, c, d } => vec![("a", a), ("b", b), ("c", c), ("d", d)],
            SystemSpec::Rossler { a, b, c } => vec![("a", a), ("b", b), ("c", c)],
            SystemSpec::Lorenz { sigma, rho, beta } => {
                vec![("sigma", sigma), ("rho", rho), ("beta", beta)]
            }
        }
    }

    /// Replaces one named coefficient.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return invalid(format!("parameter `{name}` must be finite"));
        }
        let slot = match (self, name) {
            (SystemSpec::Oscillator { a, .. }, "a") => a,
            (SystemSpec::Oscillator { b, .. }, "b") => b,
            (SystemSpec::Oscillator { c, .. }, "c") => c,
            (SystemSpec::Oscillator { d, .. }, "d") => d,
            (SystemSpec::Rossler { a, .. }, "a") => a,
            (SystemSpec::Rossler { b, .. }, "b") => b,
            (SystemSpec::Rossler { c, .. }, "c") => c,
            (SystemSpec::Lorenz { sigma, .. }, "sigma") => sigma,
            (SystemSpec::Lorenz { rho, .. }, "rho") => rho,
            (SystemSpec::Lorenz { beta, .. }, "beta") => beta,
            (spec, _) => return invalid(format!("system `{}` has no parameter `{name}`", spec.name())),
        };
        *slot = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self.params().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => invalid(format!("parameter `{name}` is not finite")),
            None => Ok(()),
        }
    }

    /// Time derivative of `state`.
    pub fn rhs(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval(state, &mut out)?;
        Ok(out)
    }

    /// The right-hand side of every channel written as a polynomial in the
    /// state: one list of `(exponents, coefficient)` per channel, exponents
    /// indexed like the state vector.
    pub fn polynomial_terms(&self) -> Vec<Vec<(Vec<u32>, f64)>> {
        match *self {
            SystemSpec::Oscillator { a, b, c, d } => {
                vec![vec![(vec![1, 0], a), (vec![0, 1], b)], vec![(vec![1, 0], c), (vec![0, 1], d)]]
            }
            SystemSpec::Rossler { a, b, c } => vec![
                vec![(vec![0, 1, 0], -1.0), (vec![0, 0, 1], -1.0)],
                vec![(vec![1, 0, 0], 1.0), (vec![0, 1, 0], a)],
                vec![(vec![0, 0, 0], b), (vec![1, 0, 1], 1.0), (vec![0, 0, 1], -c)],
            ],
            SystemSpec::Lorenz { sigma, rho, beta } => vec![
                vec![(vec![1, 0, 0], -sigma), (vec![0, 1, 0], sigma)],
                vec![(vec![1, 0, 0], rho), (vec![1, 0, 1], -1.0), (vec![0, 1, 0], -1.0)],
                vec![(vec![1, 1, 0], 1.0), (vec![0, 0, 1], -beta)],
            ],
        }
    }

    /// Integrates from `x0` with `steps` fixed RK4 steps of size `dt`.
    pub fn integrate(&self, x0: &[f64], dt: f64, steps: usize) -> Result<TimeSeries> {
        self.validate()?;
        let rows = integrate(self, x0, dt, steps)?;
        TimeSeries::from_rows(0.0, dt, self.channel_names(), &rows)
    }
}

impl Dynamics for SystemSpec {
    fn dim(&self) -> usize {
        SystemSpec::dim(self)
    }

    fn eval(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        let dim = SystemSpec::dim(self);
        if s.len() != dim || out.len() != dim {
            return invalid(format!("{} state must have length {dim}, got {}", self.name(), s.len()));
        }
        match *self {
            SystemSpec::Oscillator { a, b, c, d } => {
                out[0] = a * s[0] + b * s[1];
                out[1] = c * s[0] + d * s[1];
            }
            SystemSpec::Rossler { a, b, c } => {
                out[0] = -s[1] - s[2];
                out[1] = s[0] + a * s[1];
                out[2] = b + s[2] * (s[0] - c);
            }
            SystemSpec::Lorenz { sigma, rho, beta } => {
                out[0] = sigma * (s[1] - s[0]);
                out[1] = s[0] * (rho - s[2]) - s[1];
                out[2] = s[0] * s[1] - beta * s[2];
            }
        }
        Ok(())
    }
}

/// Scratch space for [`rk4_step`], so repeated stepping does not allocate.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Self { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }
}

/// Advances `state` in place by one classical RK4 step.
pub fn rk4_step<D: Dynamics + ?Sized>(sys: &D, state: &mut [f64], dt: f64, ws: &mut Rk4Workspace) -> Result<()> {
    let stage = |tmp: &mut [f64], state: &[f64], k: &[f64], h: f64| {
        for ((t, s), k) in tmp.iter_mut().zip(state).zip(k) {
            *t = s + h * k;
        }
    };
    sys.eval(state, &mut ws.k1)?;
    stage(&mut ws.tmp, state, &ws.k1, 0.5 * dt);
    sys.eval(&ws.tmp, &mut ws.k2)?;
    stage(&mut ws.tmp, state, &ws.k2, 0.5 * dt);
    sys.eval(&ws.tmp, &mut ws.k3)?;
    stage(&mut ws.tmp, state, &ws.k3, dt);
    sys.eval(&ws.tmp, &mut ws.k4)?;
    for (i, s) in state.iter_mut().enumerate() {
        *s += dt / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
    Ok(())
}

/// Integrates any [`Dynamics`] and returns `steps + 1` rows, row 0 being `x0`.
pub fn integrate<D: Dynamics + ?Sized>(sys: &D, x0: &[f64], dt: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    if x0.len() != sys.dim() {
        return invalid(format!("initial state must have length {}, got {}", sys.dim(), x0.len()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("dt must be positive and finite, got {dt}"));
    }
    if steps == 0 {
        return invalid("steps must be positive");
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { last_valid: 0 });
    }
    let mut ws = Rk4Workspace::new(x0.len());
    let mut state = x0.to_vec();
    let mut rows = Vec::with_capacity(steps + 1);
    rows.push(state.clone());
    for k in 0..steps {
        rk4_step(sys, &mut state, dt, &mut ws)?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { last_valid: k });
        }
        rows.push(state.clone());
    }
    Ok(rows)
}

/// Draws `count` standard-normal vectors of length `dim`.
///
/// The stream is consumed vector by vector, so a shorter request with the same
/// seed is always a prefix of a longer one.
pub fn sample_initial_conditions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_rhs_at_ones() {
        let d = SystemSpec::lorenz().rhs(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 26.0);
        assert!((d[2] - (-5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn oscillator_origin_is_fixed() {
        assert_eq!(SystemSpec::oscillator().rhs(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rossler_origin_keeps_constant_term() {
        assert_eq!(SystemSpec::rossler().rhs(&[0.0; 3]).unwrap(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn rhs_rejects_wrong_dimension() {
        assert!(matches!(SystemSpec::lorenz().rhs(&[1.0, 2.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn polynomial_terms_agree_with_rhs() {
        let state = [0.3, -1.7, 2.2];
        for spec in [SystemSpec::rossler(), SystemSpec::lorenz()] {
            let rhs = spec.rhs(&state).unwrap();
            for (ch, terms) in spec.polynomial_terms().iter().enumerate() {
                let v: f64 = terms
                    .iter()
                    .map(|(e, c)| c * e.iter().zip(&state).map(|(&p, s)| s.powi(p as i32)).product::<f64>())
                    .sum();
                assert!((v - rhs[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_tracks_cosine() {
        let spec = SystemSpec::Oscillator { a: 0.0, b: -1.0, c: 1.0, d: 0.0 };
        let ts = spec.integrate(&[1.0, 0.0], 0.01, 628).unwrap();
        assert_eq!(ts.len(), 629);
        let max_err = (0..ts.len()).map(|i| (ts.values[[i, 0]] - (i as f64 * 0.01).cos()).abs()).fold(0.0, f64::max);
        assert!(max_err < 1e-6, "max error {max_err}");
    }

    #[test]
    fn single_step_matches_taylor_expansion() {
        // For a linear system the exact flow is exp(hA); RK4 truncates it after
        // the fourth power, so the gap to the exponential is O(h^5).
        let spec = SystemSpec::Oscillator { a: 0.3, b: -1.2, c: 0.8, d: -0.1 };
        let a = [[0.3, -1.2], [0.8, -0.1]];
        let x0 = [0.7, -0.4];
        for &h in &[1e-2, 5e-3] {
            let rows = integrate(&spec, &x0, h, 1).unwrap();
            let mut term = x0.to_vec();
            let mut taylor = x0.to_vec();
            for k in 1..=4 {
                let next = [a[0][0] * term[0] + a[0][1] * term[1], a[1][0] * term[0] + a[1][1] * term[1]];
                term = next.iter().map(|v| v * h / k as f64).collect();
                taylor[0] += term[0];
                taylor[1] += term[1];
            }
            let err = (rows[1][0] - taylor[0]).abs().max((rows[1][1] - taylor[1]).abs());
            assert!(err < 1e-14, "h={h} err={err}");
        }
    }

    #[test]
    fn lorenz_trajectory_stays_bounded() {
        let x0 = &sample_initial_conditions(3, 1, 11)[0];
        let ts = SystemSpec::lorenz().integrate(x0, 0.01, 5000).unwrap();
        let max = ts.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(max < 100.0, "max |state| = {max}");
    }

    #[test]
    fn divergence_reports_last_valid_index() {
        let spec = SystemSpec::Oscillator { a: 1e4, b: 0.0, c: 0.0, d: 0.0 };
        match integrate(&spec, &[1e300, 0.0], 0.1, 100) {
            Err(Error::Diverged { last_valid }) => assert_eq!(last_valid, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn initial_conditions_are_deterministic_and_prefix_stable() {
        let a = sample_initial_conditions(3, 20, 5);
        assert_eq!(a, sample_initial_conditions(3, 20, 5));
        assert_eq!(sample_initial_conditions(3, 1, 5)[0], sample_initial_conditions(3, 2, 5)[0]);
        assert_ne!(a, sample_initial_conditions(3, 20, 6));
    }

    #[test]
    fn initial_conditions_are_standard_normal() {
        let draws = sample_initial_conditions(2, 10_000, 3);
        for i in 0..2 {
            let n = draws.len() as f64;
            let mean = draws.iter().map(|v| v[i]).sum::<f64>() / n;
            let var = draws.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.05, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn set_param_validates_names() {
        let mut s = SystemSpec::lorenz();
        s.set_param("rho", 20.0).unwrap();
        assert_eq!(s.params()[1], ("rho", 20.0));
        assert!(s.set_param("a", 1.0).is_err());
        assert!(s.set_param("rho", f64::NAN).is_err());
    }
}
