//! Recovery of ordinary differential equations from partially observed time
//! series.
//!
//! When only one variable of a dynamical system is measured, its higher time
//! derivatives still carry the information of the hidden ones. This crate
//! regresses the `n`-th derivative of the observed series onto a polynomial
//! dictionary of its lower derivatives with a cross-validated Lasso, then
//! forecasts by integrating the recovered equation.
//!
//! The pipeline, module by module:
//!
//! - [`dynamics`]: benchmark systems and the RK4 integrator,
//! - [`differentiation`]: finite-difference derivative columns,
//! - [`dictionary`]: monomial dictionaries and design matrices,
//! - [`lasso`]: coordinate-descent Lasso with k-fold cross-validation,
//! - [`model`]: the recovered equation and its forecasts,
//! - [`evaluation`] and [`experiment`]: scoring and the multi-seed protocol.

pub mod dictionary;
pub mod differentiation;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod lasso;
pub mod model;
pub mod timeseries;

pub use dictionary::{build_features, build_features_multi, enumerate_monomials, Dictionary, FeatureMatrix, Monomial};
pub use differentiation::{differentiate, differentiate_slice, DerivativeStack};
pub use dynamics::{sample_initial_conditions, SystemSpec};
pub use error::{Error, Result};
pub use evaluation::{naive_forecast, smape};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, Observation};
pub use lasso::{coefficient_mse, coordinate_descent, fit_cv, lambda_path, LassoConfig, LassoFit};
pub use model::{ForecastReport, ModelFile, OdeSystem, SparseOdeModel};
pub use timeseries::TimeSeries;
