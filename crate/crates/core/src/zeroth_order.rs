//! Zeroth-order approximation studies: how far `X^ε` strays from the
//! deterministic solution `x(t)` as `ε → 0`.
//!
//! Every study couples all `ε` through common random numbers: path `i` uses
//! Brownian stream `i` for every `ε`. The reference `x(t)` is the RK4
//! solution on the same grid, and the same scheme run at `ε = 0` measures
//! the discretization floor that the Monte Carlo error cannot go below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{certify_global, estimate_condition, norm_sq, ConditionKind, Field, Sampler};
use crate::paths::{rk4, run_scheme, BrownianDriver, Ensemble, SchemeSpec, TimeGrid};
use crate::stats::{fit_line, jackknife_mean, par_chunks, LineFit, MeanEstimate};

/// Blow-up fraction above which an `ε` is excluded from fits.
pub const MAX_BLOW_UP_FRACTION: f64 = 0.01;
/// An error within this factor of the discretization floor is not trusted.
pub const FLOOR_FACTOR: f64 = 10.0;

/// Strictly decreasing noise levels in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EpsGrid(Vec<f64>);

impl EpsGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("eps grid is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Config(format!("eps values must lie in (0, 1], got {v}")));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eps grid must be strictly decreasing".into()));
        }
        Ok(EpsGrid(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for EpsGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        EpsGrid::new(v)
    }
}

impl From<EpsGrid> for Vec<f64> {
    fn from(g: EpsGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Indistinguishable from the discretization floor.
    Floor,
    /// Too many blow-ups at this `ε`.
    Unusable,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Floor => "floor",
            Status::Unusable => "unusable",
        }
    }
}

/// Which proof chain the bounds follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Global Lipschitz and linear growth; growth rate `2K + ε²K²`.
    Lipschitz,
    /// Dissipative drift, local Lipschitz on the ball of radius `N`;
    /// growth rate `2K² + ε²K²`.
    Dissipative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantSource {
    Certified,
    Declared,
}

/// Constants entering the bound chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub variant: Variant,
    /// `K_T`.
    pub k: f64,
    /// `L_T` (Lipschitz variant) or `L_{N,T}` (dissipative variant).
    pub l: f64,
    /// `E|x₀|²`.
    pub x0_second_moment: f64,
    pub source: ConstantSource,
}

impl BoundConstants {
    pub fn declared(variant: Variant, k: f64, l: f64, x0_second_moment: f64) -> Result<Self> {
        for (name, v) in [("K_T", k), ("L", l), ("E|x0|^2", x0_second_moment)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(BoundConstants { variant, k, l, x0_second_moment, source: ConstantSource::Declared })
    }

    /// Runs the validators and keeps the constants only if they certify.
    ///
    /// The Lipschitz variant needs linear growth and Lipschitz to hold
    /// globally (see [`certify_global`]). The dissipative variant needs
    /// dissipativity and dissipativity for differences globally, with
    /// `K_T²` the larger of the two, and takes `L_{N,T}` on the sampler's
    /// ball, whose radius plays the role of `N`.
    pub fn certify<F: Field + ?Sized>(
        field: &F,
        variant: Variant,
        sampler: &Sampler,
        x0_second_moment: f64,
    ) -> Result<Self> {
        let global = |kind: ConditionKind| -> Result<f64> {
            let cert = certify_global(field, kind, sampler)?;
            if !cert.certified {
                return Err(Error::Uncertified(format!(
                    "{} grows from {} to {} when the sample radius doubles",
                    kind.label(),
                    cert.at_radius.value,
                    cert.at_double_radius.value
                )));
            }
            Ok(cert.at_double_radius.value.max(0.0))
        };
        let (k_sq, l) = match variant {
            Variant::Lipschitz => (global(ConditionKind::LinearGrowth)?, global(ConditionKind::Lipschitz)?),
            Variant::Dissipative => {
                let k_sq = global(ConditionKind::Dissipativity)?.max(global(ConditionKind::DissipativityDifferences)?);
                let local = estimate_condition(field, ConditionKind::Lipschitz, sampler, None)?;
                if !local.certified() {
                    return Err(Error::Uncertified("local Lipschitz constant is not finite".into()));
                }
                (k_sq, local.value)
            }
        };
        let mut c = BoundConstants::declared(variant, k_sq.sqrt(), l, x0_second_moment)?;
        c.source = ConstantSource::Certified;
        Ok(c)
    }

    pub fn bounds(&self) -> TheoreticalBounds {
        TheoreticalBounds { constants: *self }
    }
}

/// `∫₀ᵗ e^{αs} ds`, stable as `α → 0`.
fn int_exp(alpha: f64, t: f64) -> f64 {
    if alpha.abs() * t < 1e-8 {
        t * (1.0 + 0.5 * alpha * t)
    } else {
        (alpha * t).exp_m1() / alpha
    }
}

/// The proof-derived bound chain with `ε = 1` absorbed into `a`, `a₁`, `a₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalBounds {
    pub constants: BoundConstants,
}

impl TheoreticalBounds {
    fn c0(&self) -> f64 {
        1.0 + self.constants.x0_second_moment
    }

    /// Growth rate of `1 + E|X^ε|²`.
    pub fn moment_rate(&self, eps: f64) -> f64 {
        let k = self.constants.k;
        match self.constants.variant {
            Variant::Lipschitz => 2.0 * k + eps * eps * k * k,
            Variant::Dissipative => 2.0 * k * k + eps * eps * k * k,
        }
    }

    /// `(1 + E|x₀|²) e^{rate·t}`, bounding `1 + E|X^ε(t)|²`.
    pub fn moment_bound(&self, eps: f64, t: f64) -> f64 {
        self.c0() * (self.moment_rate(eps) * t).exp()
    }

    /// `a(t)` with `E|X^ε(t) - x(t)|² ≤ ε² a(t)`.
    pub fn a(&self, t: f64) -> f64 {
        let BoundConstants { k, l, .. } = self.constants;
        let k2 = k * k;
        match self.constants.variant {
            Variant::Lipschitz => (2.0 * l * t).exp() * k2 * self.c0() * int_exp(self.moment_rate(1.0), t),
            Variant::Dissipative => {
                ((2.0 * l + 2.0 * k2) * t).exp() * (2.0 * k2 * t + k2 * self.c0() * int_exp(self.moment_rate(1.0), t))
            }
        }
    }

    /// `∫₀ᵗ a(s) ds` by composite Simpson on 512 panels.
    fn int_a(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let n = 512;
        let h = t / n as f64;
        let inner: f64 = (1..n).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * self.a(i as f64 * h)).sum();
        h / 3.0 * (self.a(0.0) + inner + self.a(t))
    }

    /// `a₁(t) = 4 t L² ∫₀ᵗ a(s) ds` (drift part of the sup deviation).
    pub fn a1(&self, t: f64) -> Option<f64> {
        let l = self.constants.l;
        (self.constants.variant == Variant::Lipschitz).then(|| 4.0 * t * l * l * self.int_a(t))
    }

    /// `a₂(t) = 4 K² (1 + E|x₀|²) ∫₀ᵗ e^{(2K + K²)s} ds` (noise part).
    pub fn a2(&self, t: f64) -> Option<f64> {
        let k = self.constants.k;
        (self.constants.variant == Variant::Lipschitz)
            .then(|| 4.0 * k * k * self.c0() * int_exp(self.moment_rate(1.0), t))
    }

    /// Bound on `P{max_{s≤t} |X^ε(s) - x(s)| > δ}`: `ε²δ⁻²(a₁ + a₂)` for the
    /// Lipschitz chain, `ε²δ⁻²a` for the dissipative one, capped at 1.
    pub fn sup_deviation_bound(&self, eps: f64, delta: f64, t: f64) -> f64 {
        let coeff = match self.constants.variant {
            Variant::Lipschitz => self.a1(t).unwrap_or(0.0) + self.a2(t).unwrap_or(0.0),
            Variant::Dissipative => self.a(t),
        };
        (eps * eps / (delta * delta) * coeff).min(1.0)
    }
}

/// Result of [`verify_gronwall`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    /// `m(t_k) ≤ C e^{α t_k} (1 + tol)` for every `k`.
    pub conclusion_holds: bool,
    /// Largest `m(t_k) / (C e^{α t_k})`.
    pub worst_ratio: f64,
    pub worst_index: usize,
    /// `m(t_k) ≤ (C + α ∫₀^{t_k} m) (1 + tol)` for every `k` (trapezoid rule).
    pub hypothesis_holds: bool,
    /// Indices where the conclusion fails but the hypothesis held; such a
    /// point contradicts the lemma up to quadrature error.
    pub inconsistent: Vec<usize>,
}

impl GronwallCheck {
    pub fn passed(&self) -> bool {
        self.conclusion_holds
    }
}

/// Checks `m(t) ≤ C e^{αt}` on samples of `m`, and separately the lemma's
/// hypothesis `m(t) ≤ C + α ∫₀ᵗ m`.
pub fn verify_gronwall(times: &[f64], m: &[f64], c: f64, alpha: f64, tol: f64) -> Result<GronwallCheck> {
    if times.len() != m.len() || times.is_empty() {
        return Err(Error::Input("gronwall check needs equally many times and samples".into()));
    }
    if let Some(v) = m.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Input(format!("m must be nonnegative, got {v}")));
    }
    if !(c >= 0.0 && alpha >= 0.0) {
        return Err(Error::Input(format!("need C >= 0 and alpha >= 0, got C={c}, alpha={alpha}")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("times must be strictly increasing".into()));
    }
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst_index = 0;
    let mut conclusion_holds = true;
    let mut hypothesis_holds = true;
    let mut inconsistent = Vec::new();
    let mut integral = 0.0;
    for k in 0..m.len() {
        if k > 0 {
            integral += 0.5 * (m[k] + m[k - 1]) * (times[k] - times[k - 1]);
        }
        let bound = c * (alpha * (times[k] - times[0])).exp();
        let ratio = if bound > 0.0 { m[k] / bound } else if m[k] == 0.0 { 0.0 } else { f64::INFINITY };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_index = k;
        }
        let concl = m[k] <= bound * (1.0 + tol);
        let hyp = m[k] <= (c + alpha * integral) * (1.0 + tol);
        conclusion_holds &= concl;
        hypothesis_holds &= hyp;
        if !concl && hyp {
            inconsistent.push(k);
        }
    }
    Ok(GronwallCheck { conclusion_holds, worst_ratio, worst_index, hypothesis_holds, inconsistent })
}

/// Parameters shared by the convergence studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    pub eps: EpsGrid,
    pub paths: usize,
    pub seed: u64,
    pub scheme: SchemeSpec,
    /// Times (grid points) at which the mean-square error is reported.
    pub t_checks: Vec<f64>,
    /// Thresholds for the sup-deviation frequency.
    #[serde(default)]
    pub deltas: Vec<f64>,
}

impl StudySpec {
    /// `{T/4, T/2, T}`.
    pub fn default_t_checks(grid: &TimeGrid) -> Vec<f64> {
        let t = grid.horizon();
        vec![t / 4.0, t / 2.0, t]
    }

    fn check_indices(&self) -> Result<Vec<usize>> {
        if self.t_checks.is_empty() {
            return Err(Error::Config("t_checks is empty".into()));
        }
        self.t_checks
            .iter()
            .map(|&t| self.grid.index_of(t).ok_or_else(|| Error::Config(format!("t_check {t} is not a grid point"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub eps: f64,
    pub t: f64,
    pub mse: f64,
    pub se: f64,
    /// `ε² a(t)` when constants are available.
    pub bound: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupPoint {
    pub eps: f64,
    pub delta: f64,
    pub frequency: f64,
    pub se: f64,
    pub bound: Option<f64>,
    pub status: Status,
}

/// Per-`ε` path diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsDiagnostics {
    pub eps: f64,
    pub blow_ups: usize,
    pub escapes: usize,
    pub blow_up_fraction: f64,
}

/// Floor estimates: the `ε = 0` scheme against the RK4 reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    /// `|x_scheme(t) - x(t)|²` per `t_check`.
    pub mse: Vec<f64>,
    /// `max_k |x_scheme(t_k) - x(t_k)|`.
    pub sup_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub t: f64,
    /// Fitted order `p` of `mse ≈ C ε^p`.
    pub order: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points_used: usize,
    /// The curve flattens toward small `ε` and fits poorly, as an additive
    /// floor would cause.
    pub floor_suspected: bool,
}

/// Bound curves evaluated on `grid_times`, for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub variant: Variant,
    /// True for the variant the checks use.
    pub checked: bool,
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub a1: Option<Vec<f64>>,
    pub a2: Option<Vec<f64>>,
    /// Moment bound at `ε = 1`.
    pub moment_bound: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub field: String,
    pub spec: StudySpec,
    pub floor: Floor,
    pub diagnostics: Vec<EpsDiagnostics>,
    pub mse: Vec<MsePoint>,
    pub fits: Vec<FitEntry>,
    pub sup_deviation: Vec<SupPoint>,
    pub constants: Option<BoundConstants>,
    /// Both variants' curves, labelled "proof-derived bound".
    pub bound_curves: Vec<BoundCurve>,
    pub bound_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub t: f64,
    pub fit: Option<OrderFit>,
    pub error: Option<String>,
}

/// Per-path outcome for every `ε`.
struct PathSample {
    /// `(ε, t_check)` row-major; NaN when blown up.
    dev_sq: Vec<f64>,
    /// Per `ε`; NaN when blown up.
    sup_dev: Vec<f64>,
    blown: Vec<bool>,
    escaped: Vec<bool>,
}

const CHUNK: usize = 64;

fn reference<F: Field + ?Sized>(field: &F, spec: &StudySpec, idx: &[usize]) -> Result<(Vec<f64>, Floor)> {
    let r = field.dim();
    let mut xref = Vec::with_capacity((spec.grid.n_steps() + 1) * r);
    if let Some(step) = rk4(&spec.x0, &spec.grid, |t, x, o| field.drift(t, x, o), |_, x| xref.extend_from_slice(x)) {
        return Err(Error::BlowUp { step, t: spec.grid.time(step) });
    }
    let zero = vec![0.0; spec.grid.n_steps() * field.noise_dim()];
    let det = run_scheme(field, &spec.x0, &spec.grid, 0.0, &zero, spec.scheme)?.path;
    if let Some(step) = det.blow_up_step {
        return Err(Error::BlowUp { step, t: spec.grid.time(step) });
    }
    let gap = |k: usize| norm_sq_diff(det.state(k), &xref[k * r..(k + 1) * r]);
    let mse = idx.iter().map(|&k| gap(k)).collect();
    let sup_gap = (0..=spec.grid.n_steps()).map(|k| gap(k).sqrt()).fold(0.0, f64::max);
    Ok((xref, Floor { mse, sup_gap }))
}

fn norm_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Runs every path at every `ε` and evaluates the full report.
pub fn convergence_study<F: Field + ?Sized>(
    field: &F,
    name: &str,
    spec: &StudySpec,
    constants: Option<&BoundConstants>,
) -> Result<ConvergenceReport> {
    if spec.paths < 2 {
        return Err(Error::Config("convergence studies need at least 2 paths".into()));
    }
    if spec.x0.len() != field.dim() {
        return Err(Error::Config(format!("x0 has dimension {}, field expects {}", spec.x0.len(), field.dim())));
    }
    let idx = spec.check_indices()?;
    let (xref, floor) = reference(field, spec, &idx)?;
    for &d in &spec.deltas {
        if !(d >= FLOOR_FACTOR * floor.sup_gap && d > 0.0) {
            return Err(Error::Config(format!(
                "delta {d} is below {FLOOR_FACTOR} x the discretization gap {:e}",
                floor.sup_gap
            )));
        }
    }
    let r = field.dim();
    let eps = spec.eps.values();
    let n_t = idx.len();

    let chunks = par_chunks(spec.paths, CHUNK, |range| -> Result<Vec<PathSample>> {
        let mut out = Vec::with_capacity(range.len());
        for i in range {
            let dw = BrownianDriver::new(spec.seed, i as u64, field.noise_dim(), spec.grid)?.increments();
            let mut s = PathSample {
                dev_sq: Vec::with_capacity(eps.len() * n_t),
                sup_dev: Vec::with_capacity(eps.len()),
                blown: Vec::with_capacity(eps.len()),
                escaped: Vec::with_capacity(eps.len()),
            };
            for &e in eps {
                let run = run_scheme(field, &spec.x0, &spec.grid, e, &dw, spec.scheme)?;
                let p = &run.path;
                s.escaped.push(run.escaped);
                if p.blew_up() {
                    s.blown.push(true);
                    s.dev_sq.extend(std::iter::repeat_n(f64::NAN, n_t));
                    s.sup_dev.push(f64::NAN);
                    continue;
                }
                s.blown.push(false);
                let dev = |k: usize| norm_sq_diff(p.state(k), &xref[k * r..(k + 1) * r]);
                s.dev_sq.extend(idx.iter().map(|&k| dev(k)));
                s.sup_dev.push((0..=spec.grid.n_steps()).map(|k| dev(k)).fold(0.0, f64::max).sqrt());
            }
            out.push(s);
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(spec.paths);
    for c in chunks {
        samples.extend(c?);
    }

    let bounds = constants.map(|c| c.bounds());
    let m = spec.paths as f64;
    let mut diagnostics = Vec::new();
    let mut mse = Vec::new();
    let mut sup = Vec::new();
    for (j, &e) in eps.iter().enumerate() {
        let blow_ups = samples.iter().filter(|s| s.blown[j]).count();
        let escapes = samples.iter().filter(|s| s.escaped[j]).count();
        let blow_up_fraction = blow_ups as f64 / m;
        diagnostics.push(EpsDiagnostics { eps: e, blow_ups, escapes, blow_up_fraction });
        let unusable = blow_up_fraction > MAX_BLOW_UP_FRACTION;
        for (q, (&t, &fl)) in spec.t_checks.iter().zip(&floor.mse).enumerate() {
            let col: Vec<f64> = samples.iter().map(|s| s.dev_sq[j * n_t + q]).collect();
            let est = jackknife_mean(&col);
            let status = if unusable {
                Status::Unusable
            } else if est.mean <= FLOOR_FACTOR * fl {
                Status::Floor
            } else {
                Status::Ok
            };
            mse.push(MsePoint { eps: e, t, mse: est.mean, se: est.se, bound: bounds.map(|b| e * e * b.a(t)), status });
        }
        for &d in &spec.deltas {
            let col: Vec<f64> =
                samples.iter().map(|s| if s.blown[j] { f64::NAN } else { (s.sup_dev[j] > d) as u8 as f64 }).collect();
            let est = jackknife_mean(&col);
            sup.push(SupPoint {
                eps: e,
                delta: d,
                frequency: est.mean,
                se: est.se,
                bound: bounds.map(|b| b.sup_deviation_bound(e, d, spec.grid.horizon())),
                status: if unusable { Status::Unusable } else { Status::Ok },
            });
        }
    }

    let fits = spec
        .t_checks
        .iter()
        .map(|&t| {
            let pts: Vec<&MsePoint> = mse.iter().filter(|p| p.t == t).collect();
            match fit_order(&pts) {
                Ok(f) => FitEntry { t, fit: Some(f), error: None },
                Err(e) => FitEntry { t, fit: None, error: Some(e.to_string()) },
            }
        })
        .collect();

    let (bound_curves, bound_note) = match constants {
        Some(c) => (
            bound_curves(c, &spec.grid),
            Some(format!(
                "proof-derived bound ({:?} constants, {} chain checked; eps = 1 absorbed in a, a1, a2)",
                c.source,
                match c.variant {
                    Variant::Lipschitz => "lipschitz",
                    Variant::Dissipative => "dissipative",
                }
            )),
        ),
        None => (Vec::new(), None),
    };

    Ok(ConvergenceReport {
        field: name.to_string(),
        spec: spec.clone(),
        floor,
        diagnostics,
        mse,
        fits,
        sup_deviation: sup,
        constants: constants.copied(),
        bound_curves,
        bound_note,
    })
}

fn bound_curves(c: &BoundConstants, grid: &TimeGrid) -> Vec<BoundCurve> {
    let n = 64.min(grid.n_steps());
    let times: Vec<f64> = (0..=n).map(|k| grid.horizon() * k as f64 / n as f64).collect();
    [Variant::Lipschitz, Variant::Dissipative]
        .into_iter()
        .map(|variant| {
            let b = BoundConstants { variant, ..*c }.bounds();
            BoundCurve {
                variant,
                checked: variant == c.variant,
                a: times.iter().map(|&t| b.a(t)).collect(),
                a1: b.a1(0.0).map(|_| times.iter().map(|&t| b.a1(t).unwrap()).collect()),
                a2: b.a2(0.0).map(|_| times.iter().map(|&t| b.a2(t).unwrap()).collect()),
                moment_bound: times.iter().map(|&t| b.moment_bound(1.0, t)).collect(),
                times: times.clone(),
            }
        })
        .collect()
}

/// Mean-square error curve `E|X^ε(t) - x(t)|²` for every `ε` and `t_check`.
pub fn mse_curve<F: Field + ?Sized>(field: &F, spec: &StudySpec) -> Result<Vec<MsePoint>> {
    let spec = StudySpec { deltas: Vec::new(), ..spec.clone() };
    Ok(convergence_study(field, "", &spec, None)?.mse)
}

/// Frequencies of `max_k |X^ε(t_k) - x(t_k)| > δ` over the whole grid,
/// with the bound when constants are given.
pub fn sup_deviation<F: Field + ?Sized>(
    field: &F,
    spec: &StudySpec,
    constants: Option<&BoundConstants>,
) -> Result<Vec<SupPoint>> {
    if spec.deltas.is_empty() {
        return Err(Error::Config("sup deviation needs at least one delta".into()));
    }
    Ok(convergence_study(field, "", spec, constants)?.sup_deviation)
}

/// Least-squares slope of `log mse` against `log ε` over the usable points.
pub fn fit_order(points: &[&MsePoint]) -> Result<OrderFit> {
    let usable: Vec<&&MsePoint> =
        points.iter().filter(|p| p.status == Status::Ok && p.mse > 0.0 && p.mse.is_finite()).collect();
    if usable.len() < 3 {
        return Err(Error::Input(format!("order fit needs >= 3 usable points, got {}", usable.len())));
    }
    let x: Vec<f64> = usable.iter().map(|p| p.eps.ln()).collect();
    let y: Vec<f64> = usable.iter().map(|p| p.mse.ln()).collect();
    let LineFit { slope, intercept, residual } = fit_line(&x, &y)?;
    Ok(OrderFit {
        t: usable[0].t,
        order: slope,
        intercept,
        residual,
        points_used: usable.len(),
        floor_suspected: floor_suspected(&x, &y, residual),
    })
}

/// Residual above this (in log units) marks a curve as bent.
const BENT_RESIDUAL: f64 = 0.05;

fn floor_suspected(x: &[f64], y: &[f64], residual: f64) -> bool {
    let n = x.len();
    let first = (y[1] - y[0]) / (x[1] - x[0]);
    let last = (y[n - 1] - y[n - 2]) / (x[n - 1] - x[n - 2]);
    residual > BENT_RESIDUAL && last < first
}

/// Fit from synthetic `(ε, mse)` pairs, all marked usable.
pub fn fit_order_values(eps: &[f64], mse: &[f64]) -> Result<OrderFit> {
    let pts: Vec<MsePoint> = eps
        .iter()
        .zip(mse)
        .map(|(&e, &m)| MsePoint { eps: e, t: f64::NAN, mse: m, se: 0.0, bound: None, status: Status::Ok })
        .collect();
    fit_order(&pts.iter().collect::<Vec<_>>())
}

/// One row of [`moment_bound_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    /// `1 + Ê|X^ε(t)|²`.
    pub lhs: f64,
    pub se: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Compares `1 + Ê|X^ε(t)|²` with `(1 + E|x₀|²) e^{rate·t}` at the
/// ensemble's checkpoints; passes when `lhs ≤ bound (1 + 3 SE / lhs)`.
pub fn moment_bound_check(ensemble: &Ensemble, constants: &BoundConstants) -> Result<Vec<MomentRow>> {
    let cps = &ensemble.spec.checkpoints;
    if cps.is_empty() {
        return Err(Error::Config("ensemble has no checkpoints".into()));
    }
    let bounds = constants.bounds();
    let eps = ensemble.spec.eps;
    let r = ensemble.dim;
    let stride = cps.len() * r;
    Ok(cps
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let col: Vec<f64> =
                ensemble.checkpoint_states.chunks_exact(stride).map(|row| norm_sq(&row[j * r..(j + 1) * r])).collect();
            let MeanEstimate { mean, se, .. } = jackknife_mean(&col);
            let lhs = 1.0 + mean;
            let bound = bounds.moment_bound(eps, t);
            MomentRow { t, lhs, se, bound, passed: lhs <= bound * (1.0 + 3.0 * se / lhs) }
        })
        .collect())
}

/// Refuses declared-free use: the moment check needs certified or declared constants.
pub fn require_constants(constants: Option<&BoundConstants>) -> Result<&BoundConstants> {
    constants.ok_or_else(|| Error::Uncertified("no constants available for the moment bound".into()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ConvergenceReport {
    /// `eps,t,mse,se,bound,status`.
    pub fn mse_csv(&self) -> String {
        let mut out = String::from("eps,t,mse,se,bound,status\n");
        for p in &self.mse {
            out.push_str(&format!("{},{},{},{},{},{}\n", p.eps, p.t, p.mse, p.se, fmt_opt(p.bound), p.status.label()));
        }
        out
    }

    /// `eps,delta,frequency,se,bound,status`.
    pub fn sup_csv(&self) -> String {
        let mut out = String::from("eps,delta,frequency,se,bound,status\n");
        for p in &self.sup_deviation {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.eps,
                p.delta,
                p.frequency,
                p.se,
                fmt_opt(p.bound),
                p.status.label()
            ));
        }
        out
    }

    pub fn fit_at(&self, t: f64) -> Option<&OrderFit> {
        self.fits.iter().find(|f| f.t == t).and_then(|f| f.fit.as_ref())
    }

    pub fn mse_at(&self, eps: f64, t: f64) -> Option<&MsePoint> {
        self.mse.iter().find(|p| p.eps == eps && p.t == t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientField;
    use crate::paths::{simulate_ensemble, EnsembleSpec, InitialState};
    use std::sync::Arc;

    fn linear(a: f64, s: f64) -> CoefficientField {
        CoefficientField::new(
            "linear",
            1,
            1,
            1.0,
            Arc::new(move |_, x, o| o[0] = a * x[0]),
            Arc::new(move |_, _, o| o[0] = s),
        )
        .unwrap()
    }

    fn spec(eps: Vec<f64>, paths: usize, n: usize) -> StudySpec {
        let grid = TimeGrid::new(1.0, n).unwrap();
        StudySpec {
            x0: vec![1.0],
            grid,
            eps: EpsGrid::new(eps).unwrap(),
            paths,
            seed: 5,
            scheme: SchemeSpec::Euler,
            t_checks: StudySpec::default_t_checks(&grid),
            deltas: vec![],
        }
    }

    #[test]
    fn eps_grid_invariants() {
        assert!(EpsGrid::new(vec![0.4, 0.2, 0.1]).is_ok());
        assert!(EpsGrid::new(vec![0.1, 0.2]).is_err());
        assert!(EpsGrid::new(vec![1.5, 0.2]).is_err());
        assert!(EpsGrid::new(vec![0.2, 0.0]).is_err());
        assert!(serde_json::from_str::<EpsGrid>("[0.1, 0.1]").is_err());
    }

    #[test]
    fn bounds_at_zero_and_closed_form() {
        let c = BoundConstants::declared(Variant::Lipschitz, 1.0, 1.0, 0.0).unwrap();
        let b = c.bounds();
        assert_eq!(b.a(0.0), 0.0);
        assert_eq!(b.moment_bound(1.0, 0.0), 1.0);
        assert!((b.moment_bound(1.0, 1.0) - 3f64.exp()).abs() < 1e-12);
        let expect = 2f64.exp() * (3f64.exp() - 1.0) / 3.0;
        assert!((b.a(1.0) - expect).abs() < 1e-12 * expect);
        let d = BoundConstants::declared(Variant::Dissipative, 1.0, 1.0, 0.0).unwrap().bounds();
        assert!((d.moment_bound(1.0, 1.0) - 3f64.exp()).abs() < 1e-12);
        assert!(d.a1(1.0).is_none());
    }

    #[test]
    fn bounds_are_monotone() {
        for variant in [Variant::Lipschitz, Variant::Dissipative] {
            let b = BoundConstants::declared(variant, 0.7, 1.3, 0.5).unwrap().bounds();
            let mut prev = (-1.0, -1.0, -1.0);
            for k in 0..=400 {
                let t = k as f64 / 100.0;
                let cur = (b.a(t), b.a1(t).unwrap_or(0.0), b.a2(t).unwrap_or(0.0));
                assert!(cur.0 >= prev.0 && cur.1 >= prev.1 && cur.2 >= prev.2, "{variant:?} t={t}");
                prev = cur;
            }
        }
    }

    #[test]
    fn int_exp_small_rate() {
        assert_eq!(int_exp(0.0, 2.0), 2.0);
        assert!((int_exp(1e-12, 1.0) - 1.0).abs() < 1e-11);
        assert!((int_exp(1.0, 1.0) - (1f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gronwall_examples() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
        let constant = vec![2.0; times.len()];
        assert!(verify_gronwall(&times, &constant, 2.0, 0.7, 1e-6).unwrap().passed());
        let exact: Vec<f64> = times.iter().map(|t| 2.0 * (1.5 * t).exp()).collect();
        let g = verify_gronwall(&times, &exact, 2.0, 1.5, 1e-6).unwrap();
        assert!(g.passed() && g.hypothesis_holds);
        assert!((g.worst_ratio - 1.0).abs() < 1e-12);
        let fast: Vec<f64> = times.iter().map(|t| (1.5 * t).exp()).collect();
        let g = verify_gronwall(&times, &fast, 1.0, 1.0, 1e-6).unwrap();
        assert!(!g.conclusion_holds && !g.hypothesis_holds && g.inconsistent.is_empty());
        assert!(verify_gronwall(&[0.0, 1.0], &[1.0, -1.0], 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn exact_power_law_gives_exact_order() {
        let eps = [0.4, 0.2, 0.1, 0.05];
        let mse: Vec<f64> = eps.iter().map(|e| 0.37 * e * e).collect();
        let f = fit_order_values(&eps, &mse).unwrap();
        assert!((f.order - 2.0).abs() < 1e-12 && f.residual < 1e-12 && !f.floor_suspected);
        assert!(fit_order_values(&eps[..2], &mse[..2]).is_err());
    }

    #[test]
    fn additive_floor_bends_the_fit() {
        let eps = [0.4, 0.2, 0.1, 0.05, 0.025];
        let mse: Vec<f64> = eps.iter().map(|e| 1e-8 * e * e + 1e-10).collect();
        let f = fit_order_values(&eps, &mse).unwrap();
        assert!(f.order < 2.0 && f.floor_suspected, "{f:?}");
    }

    #[test]
    fn noiseless_field_sits_on_the_floor() {
        let f = linear(-1.0, 0.0);
        let rep = convergence_study(&f, "x", &spec(vec![0.5, 0.25, 0.1], 64, 100), None).unwrap();
        assert!(rep.mse.iter().all(|p| p.status == Status::Floor));
        assert!(rep.fits.iter().all(|f| f.fit.is_none()));
        let m0 = rep.mse[2].mse;
        assert!(rep.mse.iter().filter(|p| p.t == 1.0).all(|p| p.mse == m0));
    }

    #[test]
    fn pure_noise_mse_is_eps_squared_t() {
        let f = linear(0.0, 1.0);
        let mut s = spec(vec![0.5, 0.25], 20_000, 20);
        s.x0 = vec![0.0];
        let rep = convergence_study(&f, "x", &s, None).unwrap();
        for p in &rep.mse {
            let oracle = p.eps * p.eps * p.t;
            assert!((p.mse - oracle).abs() < 3.0 * p.se, "{p:?}");
        }
    }

    #[test]
    fn linear_fields_scale_exactly_with_eps() {
        let f = linear(0.0, 1.0);
        let mut s = spec(vec![1.0, 0.5, 0.25], 200, 40);
        s.x0 = vec![0.0];
        s.deltas = vec![0.3];
        let rep = convergence_study(&f, "x", &s, None).unwrap();
        let at = |e: f64| rep.mse_at(e, 1.0).unwrap().mse;
        assert!((at(0.5) - at(1.0) / 4.0).abs() < 1e-12 * at(1.0));
        assert!((at(0.25) - at(1.0) / 16.0).abs() < 1e-12 * at(1.0));
        let freq: Vec<f64> = rep.sup_deviation.iter().map(|p| p.frequency).collect();
        assert!(freq[0] >= freq[1] && freq[1] >= freq[2]);
    }

    #[test]
    fn delta_guard_rejects_thresholds_below_floor() {
        let f = linear(-1.0, 1.0);
        let mut s = spec(vec![0.5], 10, 4);
        s.deltas = vec![1e-6];
        assert!(matches!(convergence_study(&f, "x", &s, None), Err(Error::Config(_))));
    }

    #[test]
    fn unusable_when_paths_blow_up() {
        let f = CoefficientField::new(
            "cubic",
            1,
            1,
            20.0,
            Arc::new(|_, x, o| o[0] = -x[0] * x[0] * x[0]),
            Arc::new(|_, _, o| o[0] = 1.0),
        )
        .unwrap();
        let mut s = spec(vec![1.0, 0.5, 0.2], 200, 10);
        s.grid = TimeGrid::new(20.0, 40).unwrap();
        s.t_checks = vec![20.0];
        s.x0 = vec![5.0];
        // the deterministic Euler path itself blows up from x0 = 5 with h = 0.5
        assert!(matches!(convergence_study(&f, "x", &s, None), Err(Error::BlowUp { .. })));
        s.x0 = vec![1.0];
        let rep = convergence_study(&f, "x", &s, None).unwrap();
        assert!(rep.diagnostics[0].blow_up_fraction > 0.01, "{:?}", rep.diagnostics);
        assert!(rep.mse[0].status == Status::Unusable);
    }

    #[test]
    fn csv_columns() {
        let f = linear(-1.0, 1.0);
        let c = BoundConstants::declared(Variant::Lipschitz, 1.0, 1.0, 1.0).unwrap();
        let mut s = spec(vec![0.5, 0.25, 0.1], 64, 100);
        s.deltas = vec![0.5];
        let rep = convergence_study(&f, "x", &s, Some(&c)).unwrap();
        let csv = rep.mse_csv();
        assert!(csv.starts_with("eps,t,mse,se,bound,status\n0.5,0.25,"));
        assert_eq!(csv.lines().count(), 10);
        assert!(rep.sup_csv().starts_with("eps,delta,frequency,se,bound,status\n"));
        assert_eq!(rep.bound_curves.len(), 2);
        assert!(rep.bound_curves[0].checked && !rep.bound_curves[1].checked);
        for p in &rep.mse {
            assert!(p.mse <= p.bound.unwrap() * (1.0 + 3.0 * p.se / p.mse));
        }
    }

    #[test]
    fn certify_constants_for_linear_and_cubic() {
        let ou = linear(-1.0, 1.0);
        let c = BoundConstants::certify(&ou, Variant::Lipschitz, &Sampler::ball(4.0, 1), 1.0).unwrap();
        assert!((c.k - 1.0).abs() < 1e-12 && (c.l - 1.0).abs() < 1e-12);
        let cubic = CoefficientField::new(
            "cubic",
            1,
            1,
            1.0,
            Arc::new(|t, x, o| o[0] = -x[0].powi(3) + t.sin()),
            Arc::new(|_, _, o| o[0] = 1.0),
        )
        .unwrap();
        assert!(matches!(
            BoundConstants::certify(&cubic, Variant::Lipschitz, &Sampler::ball(4.0, 1), 1.0),
            Err(Error::Uncertified(_))
        ));
        let d = BoundConstants::certify(&cubic, Variant::Dissipative, &Sampler::ball(2.0, 1), 1.0).unwrap();
        assert!(d.l > 11.0 && d.l <= 12.0 + 1e-9, "{d:?}");
    }

    fn moment_ensemble(f: &CoefficientField, x0: f64, eps: f64) -> Ensemble {
        let spec = EnsembleSpec {
            x0: InitialState::Fixed(vec![x0]),
            grid: TimeGrid::new(1.0, 200).unwrap(),
            eps,
            paths: 4000,
            seed: 9,
            scheme: SchemeSpec::Euler,
            keep_paths: false,
            checkpoints: vec![0.25, 0.5, 1.0],
        };
        simulate_ensemble(f, "x", &spec).unwrap()
    }

    #[test]
    fn moment_bound_trivial_and_adversarial() {
        let still = linear(0.0, 0.0);
        let c = BoundConstants::declared(Variant::Lipschitz, 0.0, 0.0, 4.0).unwrap();
        let rows = moment_bound_check(&moment_ensemble(&still, 2.0, 0.5), &c).unwrap();
        assert!(rows.iter().all(|r| r.passed && r.lhs == 5.0));

        let noise = linear(0.0, 1.0);
        let e = moment_ensemble(&noise, 0.0, 1.0);
        let good = BoundConstants::declared(Variant::Lipschitz, 1.0, 0.0, 0.0).unwrap();
        assert!(moment_bound_check(&e, &good).unwrap().iter().all(|r| r.passed));
        let shrunk = BoundConstants::declared(Variant::Lipschitz, 0.1, 0.0, 0.0).unwrap();
        assert!(moment_bound_check(&e, &shrunk).unwrap().iter().any(|r| !r.passed));
        assert!(matches!(require_constants(None), Err(Error::Uncertified(_))));
    }
}
