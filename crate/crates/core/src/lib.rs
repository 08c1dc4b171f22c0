//! Small-noise diffusions `dX = b(t, X) dt + ε σ(t, X) dW` and their `ε → 0`
//! limit.
//!
//! * [`model`]: coefficient fields, truncation and sampled condition checks.
//! * [`expr`]: the coefficient expression language.
//! * [`paths`]: ODE solvers, Euler–Maruyama, tamed and truncated schemes,
//!   reproducible Brownian drivers and ensembles.
//! * [`zeroth_order`]: mean-square and sup-deviation studies against the
//!   deterministic limit, with the proof-derived bounds.
//! * [`feynman_kac`]: Monte Carlo Cauchy and transport problems and their
//!   characteristic limit.
//! * [`catalog`]: benchmark problems with closed-form oracles.

pub mod catalog;
pub mod error;
pub mod expr;
pub mod feynman_kac;
pub mod model;
pub mod paths;
pub mod stats;
pub mod zeroth_order;

pub use error::{Error, Result};
pub use expr::{Expr, VectorExpr};
pub use model::{
    certify_global, check_ellipticity, diffusion_matrix, estimate_condition, truncate, CoefficientField,
    ConditionEstimate, ConditionKind, Field, Sampler, ScalarField, TruncatedField,
};
pub use paths::{
    euler_maruyama, simulate_ensemble, simulate_truncated, solve_ode, step_tamed, BrownianDriver, Ensemble,
    EnsembleSpec, InitialState, NPolicy, OdeMethod, Path, SchemeSpec, Step, TimeGrid,
};
