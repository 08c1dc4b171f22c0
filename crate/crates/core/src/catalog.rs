//! Benchmark problems with closed-form oracles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CoefficientField;
use crate::paths::{NPolicy, SchemeSpec, Step};

/// Structural conditions a problem is declared to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionClass {
    /// Global Lipschitz and linear growth.
    Lipschitz,
    /// Dissipative drift, only locally Lipschitz.
    Dissipative,
}

impl ConditionClass {
    /// Plain Euler–Maruyama is refused for dissipative problems.
    pub fn check_scheme(self, scheme: &SchemeSpec) -> Result<()> {
        match (self, scheme) {
            (ConditionClass::Dissipative, SchemeSpec::Euler) => Err(Error::Config(
                "plain euler is not allowed for dissipative problems; use the tamed or truncated scheme".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn default_scheme(self) -> SchemeSpec {
        match self {
            ConditionClass::Lipschitz => SchemeSpec::Euler,
            ConditionClass::Dissipative => SchemeSpec::Tamed,
        }
    }
}

pub const NAMES: [&str; 5] = ["ou", "pure-noise", "constant-drift", "cubic", "linear-2d"];

/// Drift of the constant-drift problem.
pub const BETA: f64 = 1.0;

/// Rotation-plus-damping matrix of the linear-2d problem.
pub const LINEAR_2D: [[f64; 2]; 2] = [[-0.5, -1.0], [1.0, -0.5]];

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub field: CoefficientField,
    pub class: ConditionClass,
    pub default_x0: Vec<f64>,
    /// Declared `(K_T, L_T)`; for dissipative problems `L` is `L_{N,T}` at
    /// [`CatalogEntry::radius`].
    pub constants: (f64, f64),
    /// Ball radius used for local constants.
    pub radius: f64,
}

impl CatalogEntry {
    pub fn default_scheme(&self) -> SchemeSpec {
        self.class.default_scheme()
    }

    pub fn truncated_scheme(&self) -> SchemeSpec {
        SchemeSpec::Truncated { step: Step::Euler, policy: NPolicy::doubling(self.radius) }
    }

    /// `E X^ε(t)` from `x₀`, where known in closed form.
    pub fn mean(&self, x0: &[f64], t: f64) -> Option<Vec<f64>> {
        match self.name {
            "ou" => Some(vec![x0[0] * (-t).exp()]),
            "pure-noise" => Some(x0.to_vec()),
            "constant-drift" => Some(vec![x0[0] + BETA * t]),
            "linear-2d" => {
                let (c, s) = (t.cos(), t.sin());
                let d = (-0.5 * t).exp();
                Some(vec![d * (c * x0[0] - s * x0[1]), d * (s * x0[0] + c * x0[1])])
            }
            _ => None,
        }
    }

    /// `E|X^ε(t) - x(t)|²`, where known; `x` is the deterministic solution.
    pub fn mse(&self, eps: f64, t: f64) -> Option<f64> {
        let e2 = eps * eps;
        match self.name {
            "ou" => Some(e2 * (1.0 - (-2.0 * t).exp()) / 2.0),
            "pure-noise" | "constant-drift" => Some(e2 * t),
            // A + Aᵀ = -I, so the covariance is ε²(1 - e^{-t}) I
            "linear-2d" => Some(2.0 * e2 * (1.0 - (-t).exp())),
            _ => None,
        }
    }

    /// `E|X^ε(t)|²`, where known.
    pub fn second_moment(&self, x0: &[f64], eps: f64, t: f64) -> Option<f64> {
        let m = self.mean(x0, t)?;
        Some(m.iter().map(|v| v * v).sum::<f64>() + self.mse(eps, t)?)
    }
}

/// Looks up a catalog problem on the horizon `[0, T]`.
pub fn entry(name: &str, horizon: f64) -> Result<CatalogEntry> {
    let scalar = |d: fn(f64, f64) -> f64, s: f64| -> Result<CoefficientField> {
        CoefficientField::new(name, 1, 1, horizon, Arc::new(move |t, x, o| o[0] = d(t, x[0])), Arc::new(move |_, _, o| o[0] = s))
    };
    Ok(match name {
        "ou" => CatalogEntry {
            name: "ou",
            description: "Ornstein-Uhlenbeck: b = -x, sigma = 1",
            field: scalar(|_, x| -x, 1.0)?,
            class: ConditionClass::Lipschitz,
            default_x0: vec![1.0],
            constants: (1.0, 1.0),
            radius: 4.0,
        },
        "pure-noise" => CatalogEntry {
            name: "pure-noise",
            description: "Brownian motion: b = 0, sigma = 1",
            field: scalar(|_, _| 0.0, 1.0)?,
            class: ConditionClass::Lipschitz,
            default_x0: vec![0.0],
            constants: (1.0, 0.0),
            radius: 4.0,
        },
        "constant-drift" => CatalogEntry {
            name: "constant-drift",
            description: "Brownian motion with drift: b = 1, sigma = 1",
            field: scalar(|_, _| BETA, 1.0)?,
            class: ConditionClass::Lipschitz,
            default_x0: vec![0.0],
            constants: ((BETA * BETA + 1.0).sqrt(), 0.0),
            radius: 4.0,
        },
        "cubic" => CatalogEntry {
            name: "cubic",
            description: "dissipative cubic: b = -x^3 + sin(t), sigma = 1",
            field: scalar(|t, x| -x * x * x + t.sin(), 1.0)?,
            class: ConditionClass::Dissipative,
            default_x0: vec![0.5],
            // K² bounds (<x, b> + 1)/(1 + x²) and the difference form; L = 3N² at N = 2
            constants: (1.25f64.sqrt(), 12.0),
            radius: 2.0,
        },
        "linear-2d" => {
            let a = LINEAR_2D;
            CatalogEntry {
                name: "linear-2d",
                description: "rotation with damping: b = A x, A = [[-0.5, -1], [1, -0.5]], sigma = I",
                field: CoefficientField::new(
                    name,
                    2,
                    2,
                    horizon,
                    Arc::new(move |_, x, o| {
                        o[0] = a[0][0] * x[0] + a[0][1] * x[1];
                        o[1] = a[1][0] * x[0] + a[1][1] * x[1];
                    }),
                    Arc::new(|_, _, o| o.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])),
                )?,
                class: ConditionClass::Lipschitz,
                default_x0: vec![1.0, 0.0],
                // |Ax|² = 1.25|x|², so |b|² + |σ|² ≤ 2(1 + |x|²); ‖A‖ = √1.25
                constants: (2f64.sqrt(), 1.25f64.sqrt()),
                radius: 4.0,
            }
        }
        other => return Err(Error::Config(format!("unknown catalog problem '{other}' (known: {})", NAMES.join(", ")))),
    })
}

/// `P{max_{s≤t} |W_s| > a}` for standard one-dimensional Brownian motion.
///
/// Uses the reflection series for `a ≥ √t` and the eigenfunction series
/// below, each of which converges fast in its range.
pub fn brownian_abs_max_exceedance(a: f64, t: f64) -> f64 {
    let z = a / t.sqrt();
    let inside = if z >= 1.0 { reflection_series(z) } else { eigen_series(z) };
    (1.0 - inside).clamp(0.0, 1.0)
}

/// `P{max|W| < z}` at `t = 1` as `Σ_k (-1)^k [Φ((2k+1)z) - Φ((2k-1)z)]`.
fn reflection_series(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    (-20i32..=20)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (n.cdf((2 * k + 1) as f64 * z) - n.cdf((2 * k - 1) as f64 * z))
        })
        .sum()
}

/// `P{max|W| < z}` at `t = 1` as `(4/π) Σ_n (-1)^n/(2n+1) exp(-(2n+1)²π²/(8z²))`.
fn eigen_series(z: f64) -> f64 {
    use std::f64::consts::PI;
    (0..200)
        .map(|n| {
            let m = (2 * n + 1) as f64;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sign / m * (-m * m * PI * PI / (8.0 * z * z)).exp()
        })
        .sum::<f64>()
        * 4.0
        / PI
}
