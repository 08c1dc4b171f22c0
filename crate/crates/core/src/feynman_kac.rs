//! Cauchy problem `∂v/∂t = L^ε v + c v + g`, `v(0, x) = f(x)`, with
//! `L^ε = (ε²/2) Σ a^{ij} ∂ᵢ∂ⱼ + Σ bⁱ ∂ᵢ`, through its probabilistic
//! representation
//!
//! ```text
//! v^ε(t, x) = E[ f(X(t)) e^{∫₀ᵗ c(X)} + ∫₀ᵗ g(X(s)) e^{∫₀ˢ c(X)} ds ],  X(0) = x,
//! ```
//!
//! and its `ε = 0` limit along the characteristics of `b`.
//!
//! Along simulated paths both integrals use the left-rectangle rule on the
//! Euler grid. Along the characteristic the augmented system
//! `(x, I, J)' = (b, c(x), g(x) e^I)` is integrated by RK4, which applies
//! Simpson-type weights to the `c` and `g` integrals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_ellipticity, Field, Sampler, ScalarField};
use crate::paths::{rk4, run_scheme, BrownianDriver, Path, SchemeSpec, TimeGrid};
use crate::stats::{jackknife_mean, par_chunks};
use crate::zeroth_order::{fit_order_values, OrderFit, MAX_BLOW_UP_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub t: f64,
    pub x: Vec<f64>,
}

/// A Cauchy problem: coefficients, scalar data and where to evaluate.
#[derive(Debug, Clone)]
pub struct CauchyProblem<F> {
    pub field: F,
    pub scalar: ScalarField,
    pub points: Vec<EvalPoint>,
    /// Declared ellipticity constant `k`, checked as a warning only.
    pub ellipticity: Option<f64>,
}

impl<F: Field> CauchyProblem<F> {
    pub fn new(field: F, scalar: ScalarField) -> Self {
        CauchyProblem { field, scalar, points: Vec::new(), ellipticity: None }
    }

    /// `None` when the declared `k` holds on the sample (or none is declared).
    pub fn ellipticity_warning(&self, sampler: &Sampler) -> Result<Option<String>> {
        let Some(k) = self.ellipticity else { return Ok(None) };
        let est = check_ellipticity(&self.field, sampler, k)?;
        Ok((!est.certified()).then(|| {
            format!("ellipticity with k = {k} fails on {} of {} samples", est.violation_count, est.sample_count)
        }))
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSpec {
    pub paths: usize,
    pub seed: u64,
    /// Largest time step; the grid on `[0, t]` is the coarsest one at most this fine.
    pub step: f64,
    pub scheme: SchemeSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateStatus {
    Ok,
    /// More than 1% of the paths blew up.
    Invalid,
    /// The estimate breaks the a-priori bound.
    GateFailed,
}

impl EstimateStatus {
    pub fn label(self) -> &'static str {
        match self {
            EstimateStatus::Ok => "ok",
            EstimateStatus::Invalid => "invalid",
            EstimateStatus::GateFailed => "gate-failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeynmanKacEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    pub eps: f64,
    pub paths: usize,
    pub value: f64,
    pub se: f64,
    pub blow_ups: usize,
    /// `(B_f + t B_g) e^{B_c t}` when `f` and `g` bounds are declared.
    pub a_priori_bound: Option<f64>,
    pub status: EstimateStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSolution {
    pub t: f64,
    pub x: Vec<f64>,
    pub v0: f64,
    #[serde(skip)]
    pub characteristic: Option<Path>,
}

fn grid_for(point: &EvalPoint, step: f64) -> Result<TimeGrid> {
    if !(point.t > 0.0 && point.t.is_finite()) {
        return Err(Error::Config(format!("evaluation time must be positive, got {}", point.t)));
    }
    TimeGrid::with_step(point.t, step)
}

/// `f(X_n) e^{I_n} + Σ_{k<n} g(X_k) e^{I_k} h` with `I_k = Σ_{j<k} c(X_j) h`.
fn path_functional(scalar: &ScalarField, path: &Path) -> f64 {
    let h = path.grid.step();
    let n = path.grid.n_steps();
    let mut integral = 0.0f64;
    let mut source = 0.0;
    for k in 0..n {
        let x = path.state(k);
        source += (scalar.g)(x) * integral.exp() * h;
        integral += (scalar.c)(x) * h;
    }
    (scalar.f)(path.state(n)) * integral.exp() + source
}

/// Per-path functional values (NaN for blown-up paths).
fn functional_samples<F: Field + ?Sized>(
    field: &F,
    scalar: &ScalarField,
    point: &EvalPoint,
    eps: f64,
    spec: &McSpec,
) -> Result<Vec<f64>> {
    if point.x.len() != field.dim() {
        return Err(Error::Config(format!("x has dimension {}, field expects {}", point.x.len(), field.dim())));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be finite and >= 0, got {eps}")));
    }
    if spec.paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let grid = grid_for(point, spec.step)?;
    let chunks = par_chunks(spec.paths, 64, |range| -> Result<Vec<f64>> {
        range
            .map(|i| {
                let dw = BrownianDriver::new(spec.seed, i as u64, field.noise_dim(), grid)?.increments();
                let run = run_scheme(field, &point.x, &grid, eps, &dw, spec.scheme)?;
                Ok(if run.path.blew_up() { f64::NAN } else { path_functional(scalar, &run.path) })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(spec.paths);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn summarize(scalar: &ScalarField, point: &EvalPoint, eps: f64, samples: &[f64]) -> FeynmanKacEstimate {
    let est = jackknife_mean(samples);
    let blow_ups = samples.iter().filter(|v| v.is_nan()).count();
    let a_priori_bound = match (scalar.f_bound, scalar.g_bound) {
        (Some(bf), Some(bg)) => Some((bf + point.t * bg) * (scalar.c_bound * point.t).exp()),
        _ => None,
    };
    let status = if blow_ups as f64 > MAX_BLOW_UP_FRACTION * samples.len() as f64 || est.mean.is_nan() {
        EstimateStatus::Invalid
    } else if a_priori_bound.is_some_and(|b| est.mean.abs() > b * (1.0 + 5.0 * est.se)) {
        EstimateStatus::GateFailed
    } else {
        EstimateStatus::Ok
    };
    FeynmanKacEstimate {
        t: point.t,
        x: point.x.clone(),
        eps,
        paths: samples.len(),
        value: est.mean,
        se: est.se,
        blow_ups,
        a_priori_bound,
        status,
    }
}

/// Monte Carlo estimate of `v^ε(t, x)` over paths `0..M` of `seed`.
pub fn estimate_v_eps<F: Field + ?Sized>(
    field: &F,
    scalar: &ScalarField,
    point: &EvalPoint,
    eps: f64,
    spec: &McSpec,
) -> Result<FeynmanKacEstimate> {
    let samples = functional_samples(field, scalar, point, eps, spec)?;
    Ok(summarize(scalar, point, eps, &samples))
}

/// `v^ε(t, x) = E f(X(t))`: the `c ≡ 0`, `g ≡ 0` case of [`estimate_v_eps`].
pub fn transport_estimate<F: Field + ?Sized>(
    field: &F,
    f: crate::model::ScalarFn,
    point: &EvalPoint,
    eps: f64,
    spec: &McSpec,
) -> Result<FeynmanKacEstimate> {
    estimate_v_eps(field, &ScalarField::transport(f), point, eps, spec)
}

/// `v⁰(t, x)` along the characteristic `x' = b(t, x)`, `x(0) = x`.
pub fn solve_v0<F: Field + ?Sized>(field: &F, scalar: &ScalarField, point: &EvalPoint, step: f64) -> Result<LimitSolution> {
    let r = field.dim();
    if point.x.len() != r {
        return Err(Error::Config(format!("x has dimension {}, field expects {}", point.x.len(), r)));
    }
    let grid = grid_for(point, step)?;
    let mut y0 = point.x.clone();
    y0.extend([0.0, 0.0]);
    let mut values = Vec::with_capacity((grid.n_steps() + 1) * r);
    let mut last = y0.clone();
    let blow_up = rk4(
        &y0,
        &grid,
        |t, y, out| {
            let (x, rest) = y.split_at(r);
            field.drift(t, x, &mut out[..r]);
            out[r] = (scalar.c)(x);
            out[r + 1] = (scalar.g)(x) * rest[0].exp();
        },
        |_, y| {
            values.extend_from_slice(&y[..r]);
            last.copy_from_slice(y);
        },
    );
    if let Some(step) = blow_up {
        return Err(Error::BlowUp { step, t: grid.time(step) });
    }
    let v0 = (scalar.f)(&last[..r]) * last[r].exp() + last[r + 1];
    let characteristic = Path { grid, dim: r, values, radius: None, exit_step: None, blow_up_step: None };
    Ok(LimitSolution { t: point.t, x: point.x.clone(), v0, characteristic: Some(characteristic) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub v_eps: f64,
    pub se: f64,
    pub v0: f64,
    pub gap: f64,
    pub status: EstimateStatus,
}

/// Consecutive rows whose gap grew by more than `3σ` of the paired
/// difference, as `ε` decreased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub pairs_checked: usize,
    /// `(ε_i, ε_{i+1}, gap increase, paired SE)` for each violation.
    pub violations: Vec<(f64, f64, f64, f64)>,
}

impl TrendCheck {
    pub fn non_increasing(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub point: EvalPoint,
    pub spec: McSpec,
    pub v0: f64,
    pub rows: Vec<SweepRow>,
    pub trend: TrendCheck,
    /// Empirical order of `gap ~ ε^p`, reported only.
    pub gap_order: Option<OrderFit>,
}

impl SweepReport {
    /// `eps,v_eps,se,v0,gap,status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,v_eps,se,v0,gap,status\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.eps, r.v_eps, r.se, r.v0, r.gap, r.status.label()));
        }
        out
    }

    pub fn row(&self, eps: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.eps == eps)
    }
}

/// `|v^ε - v⁰|` over a strictly decreasing list of `ε ∈ [0, 1]`, all on
/// common random numbers.
pub fn epsilon_sweep<F: Field + ?Sized>(
    field: &F,
    scalar: &ScalarField,
    point: &EvalPoint,
    eps: &[f64],
    spec: &McSpec,
) -> Result<SweepReport> {
    if eps.is_empty() {
        return Err(Error::Config("eps sweep is empty".into()));
    }
    if let Some(e) = eps.iter().find(|e| !(**e >= 0.0 && **e <= 1.0)) {
        return Err(Error::Config(format!("sweep eps values must lie in [0, 1], got {e}")));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("sweep eps values must be strictly decreasing".into()));
    }
    let v0 = solve_v0(field, scalar, point, spec.step)?.v0;
    let mut samples = Vec::with_capacity(eps.len());
    let mut rows = Vec::with_capacity(eps.len());
    for &e in eps {
        let s = functional_samples(field, scalar, point, e, spec)?;
        let est = summarize(scalar, point, e, &s);
        rows.push(SweepRow { eps: e, v_eps: est.value, se: est.se, v0, gap: (est.value - v0).abs(), status: est.status });
        samples.push(s);
    }

    let mut trend = TrendCheck { pairs_checked: 0, violations: Vec::new() };
    for i in 0..rows.len() - 1 {
        let (a, b) = (&rows[i], &rows[i + 1]);
        if a.status != EstimateStatus::Ok || b.status != EstimateStatus::Ok {
            continue;
        }
        let diff: Vec<f64> = samples[i + 1].iter().zip(&samples[i]).map(|(p, q)| p - q).collect();
        let se = jackknife_mean(&diff).se;
        trend.pairs_checked += 1;
        let increase = b.gap - a.gap;
        if increase > 3.0 * se {
            trend.violations.push((a.eps, b.eps, increase, se));
        }
    }

    let usable: Vec<&SweepRow> =
        rows.iter().filter(|r| r.status == EstimateStatus::Ok && r.eps > 0.0 && r.gap > 0.0).collect();
    let gap_order = if usable.len() >= 3 {
        let e: Vec<f64> = usable.iter().map(|r| r.eps).collect();
        let g: Vec<f64> = usable.iter().map(|r| r.gap).collect();
        fit_order_values(&e, &g).ok()
    } else {
        None
    };
    Ok(SweepReport { point: point.clone(), spec: *spec, v0, rows, trend, gap_order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::model::{expr_fn, zero_fn, CoefficientField, ScalarFn};
    use std::sync::Arc;

    fn linear(a: f64, beta: f64, s: f64) -> CoefficientField {
        CoefficientField::new(
            "linear",
            1,
            1,
            10.0,
            Arc::new(move |_, x, o| o[0] = a * x[0] + beta),
            Arc::new(move |_, _, o| o[0] = s),
        )
        .unwrap()
    }

    fn constant(v: f64) -> ScalarFn {
        Arc::new(move |_| v)
    }

    fn mc(paths: usize) -> McSpec {
        McSpec { paths, seed: 3, step: 0.01, scheme: SchemeSpec::Euler }
    }

    fn at(t: f64, x: f64) -> EvalPoint {
        EvalPoint { t, x: vec![x] }
    }

    #[test]
    fn constant_functional_is_exact() {
        let f = linear(-1.0, 0.0, 1.0);
        let s = ScalarField::new(zero_fn(), zero_fn(), constant(1.0), 0.0).unwrap().with_f_bound(1.0).with_g_bound(0.0);
        let e = estimate_v_eps(&f, &s, &at(1.0, 0.3), 0.5, &mc(500)).unwrap();
        assert_eq!((e.value, e.se, e.status), (1.0, 0.0, EstimateStatus::Ok));
        let t = transport_estimate(&f, constant(1.0), &at(1.0, 0.3), 0.5, &mc(500)).unwrap();
        assert_eq!((t.value, t.se), (1.0, 0.0));
    }

    #[test]
    fn transport_matches_zero_expressions_bitwise() {
        let f = linear(-1.0, 0.5, 1.0);
        let zero = || expr_fn(parse("0", 1).unwrap());
        let tanh = || expr_fn(parse("tanh(x1)", 1).unwrap());
        let s = ScalarField::new(zero(), zero(), tanh(), 0.0).unwrap();
        let a = estimate_v_eps(&f, &s, &at(1.0, 0.2), 0.3, &mc(300)).unwrap();
        let b = transport_estimate(&f, tanh(), &at(1.0, 0.2), 0.3, &mc(300)).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }

    #[test]
    fn constant_potential_factors_out() {
        let f = linear(-1.0, 0.0, 1.0);
        let lambda = 0.7;
        let sq: ScalarFn = Arc::new(|x| x[0] * x[0]);
        let s = ScalarField::new(constant(lambda), zero_fn(), sq.clone(), lambda).unwrap();
        let p = at(1.0, 1.0);
        let v = estimate_v_eps(&f, &s, &p, 0.4, &mc(400)).unwrap();
        let t = transport_estimate(&f, sq, &p, 0.4, &mc(400)).unwrap();
        let factor = (0..100).fold(0.0, |i, _| i + lambda * 0.01f64).exp();
        assert!((v.value - factor * t.value).abs() < 1e-13 * v.value.abs());
    }

    #[test]
    fn characteristic_examples() {
        let beta = 0.8;
        let id: ScalarFn = Arc::new(|x| x[0]);
        let s = ScalarField::transport(id);
        let v = solve_v0(&linear(0.0, beta, 0.0), &s, &at(2.0, 0.5), 0.01).unwrap();
        assert!((v.v0 - (0.5 + beta * 2.0)).abs() < 1e-12);

        let sq: ScalarFn = Arc::new(|x| x[0] * x[0]);
        let s = ScalarField::new(constant(0.3), zero_fn(), sq.clone(), 0.3).unwrap();
        let v = solve_v0(&linear(0.0, 0.0, 1.0), &s, &at(1.0, 2.0), 0.01).unwrap();
        assert!((v.v0 - 4.0 * 0.3f64.exp()).abs() < 1e-12);

        let s = ScalarField::transport(sq);
        let v = solve_v0(&linear(-1.0, 0.0, 1.0), &s, &at(1.0, 1.5), 0.001).unwrap();
        assert!((v.v0 - 2.25 * (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn source_term_along_characteristic() {
        // b = 0, c = λ, g = 1: v = f e^{λt} + (e^{λt} - 1)/λ
        let lambda = 0.5;
        let s = ScalarField::new(constant(lambda), constant(1.0), constant(2.0), lambda).unwrap();
        let v = solve_v0(&linear(0.0, 0.0, 1.0), &s, &at(1.0, 0.0), 0.01).unwrap();
        let expect = 2.0 * lambda.exp() + (lambda.exp() - 1.0) / lambda;
        assert!((v.v0 - expect).abs() < 1e-10, "{}", v.v0);
        let e = estimate_v_eps(&linear(0.0, 0.0, 1.0), &s, &at(1.0, 0.0), 0.3, &mc(10)).unwrap();
        // left-rectangle quadrature: O(h) from the exact value
        assert!((e.value - expect).abs() < 0.02, "{}", e.value);
    }

    #[test]
    fn degenerate_noise_collapses_to_limit() {
        let f = linear(-1.0, 0.3, 0.0);
        let sq: ScalarFn = Arc::new(|x| x[0] * x[0]);
        let s = ScalarField::new(Arc::new(|x| 0.2 * x[0].sin()), constant(0.1), sq, 0.2).unwrap();
        let p = at(1.0, 1.0);
        let limit = solve_v0(&f, &s, &p, 0.001).unwrap().v0;
        let spec = McSpec { step: 0.001, ..mc(8) };
        let e = estimate_v_eps(&f, &s, &p, 0.7, &spec).unwrap();
        assert_eq!(e.se, 0.0);
        assert!((e.value - limit).abs() < 2.0 * 0.001, "{} vs {limit}", e.value);
    }

    #[test]
    fn a_priori_gate_and_blow_up_flags() {
        let f = linear(0.0, 0.0, 1.0);
        let s = ScalarField::new(zero_fn(), zero_fn(), constant(3.0), 0.0).unwrap().with_f_bound(1.0).with_g_bound(0.0);
        let e = estimate_v_eps(&f, &s, &at(1.0, 0.0), 1.0, &mc(20)).unwrap();
        assert_eq!(e.status, EstimateStatus::GateFailed);

        let cubic = CoefficientField::new(
            "cubic",
            1,
            1,
            20.0,
            Arc::new(|_, x, o| o[0] = -x[0].powi(3)),
            Arc::new(|_, _, o| o[0] = 1.0),
        )
        .unwrap();
        let s = ScalarField::transport(constant(1.0));
        let spec = McSpec { step: 0.5, ..mc(200) };
        let e = estimate_v_eps(&cubic, &s, &at(20.0, 1.0), 1.0, &spec).unwrap();
        assert!(e.blow_ups > 2 && e.status == EstimateStatus::Invalid, "{e:?}");
    }

    #[test]
    fn ou_second_moment_and_sweep() {
        let f = linear(-1.0, 0.0, 1.0);
        let sq: ScalarFn = Arc::new(|x| x[0] * x[0]);
        let s = ScalarField::transport(sq);
        let p = at(1.0, 1.0);
        let spec = McSpec { step: 0.01, ..mc(20_000) };
        let rep = epsilon_sweep(&f, &s, &p, &[0.5, 0.25, 0.0], &spec).unwrap();
        let decay = (-2.0f64).exp();
        assert!((rep.v0 - decay).abs() < 1e-8);
        for r in &rep.rows[..2] {
            let exact = decay + r.eps * r.eps * (1.0 - decay) / 2.0;
            assert!((r.v_eps - exact).abs() < 3.0 * r.se + 5.0 * 0.01, "{r:?}");
        }
        assert!(rep.rows[2].gap < 10.0 * 0.01);
        assert!(rep.trend.non_increasing() && rep.trend.pairs_checked == 2);
        assert!(rep.to_csv().starts_with("eps,v_eps,se,v0,gap,status\n0.5,"));
        assert!(epsilon_sweep(&f, &s, &p, &[0.1, 0.2], &spec).is_err());
    }

    #[test]
    fn ellipticity_is_a_warning() {
        let degenerate = CauchyProblem::new(linear(-1.0, 0.0, 0.0), ScalarField::transport(zero_fn()));
        assert!(degenerate.ellipticity_warning(&Sampler::ball(1.0, 0)).unwrap().is_none());
        let declared = CauchyProblem { ellipticity: Some(2.0), ..degenerate };
        assert!(declared.ellipticity_warning(&Sampler::ball(1.0, 0)).unwrap().is_some());
    }
}
