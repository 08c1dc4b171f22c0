//! Coefficient fields `(b, σ)`, the radius-`N` truncation used by the
//! existence construction, scalar data `(c, g, f)` of the Cauchy problem, and
//! sampling-based validators for the structural conditions on coefficients.
//!
//! Validators are certificates over a finite point cloud, not proofs: a
//! returned constant is the smallest one satisfying the inequality on every
//! sampled point.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, VectorExpr};

pub type VecFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Anything that can serve as SDE coefficients on `[0, T] × R^r`.
///
/// `diffusion` writes an `r × l` matrix in row-major order.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// Drift `b(t, x) ∈ R^r` and diffusion `σ(t, x) ∈ R^{r×l}`.
#[derive(Clone)]
pub struct CoefficientField {
    name: String,
    dim: usize,
    noise_dim: usize,
    horizon: f64,
    drift: VecFn,
    diffusion: VecFn,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        horizon: f64,
        drift: VecFn,
        diffusion: VecFn,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(Error::Config(format!("dimensions must be positive, got r={dim}, l={noise_dim}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive and finite, got {horizon}")));
        }
        Ok(CoefficientField { name: name.into(), dim, noise_dim, horizon, drift, diffusion })
    }

    /// Builds a field from parsed expressions. Domain errors during evaluation
    /// (`sqrt` of a negative, division by zero) surface as NaN, which the
    /// integrators record as a blow-up and the validators as a non-finite
    /// witness.
    pub fn from_exprs(
        name: impl Into<String>,
        drift: VectorExpr,
        diffusion: VectorExpr,
        noise_dim: usize,
        horizon: f64,
    ) -> Result<Self> {
        let dim = drift.len();
        if diffusion.len() != dim * noise_dim {
            return Err(Error::Config(format!(
                "diffusion needs r*l = {} entries, got {}",
                dim * noise_dim,
                diffusion.len()
            )));
        }
        let d = Arc::new(drift);
        let s = Arc::new(diffusion);
        Self::new(
            name,
            dim,
            noise_dim,
            horizon,
            Arc::new(move |t, x, out| {
                if d.eval_into(t, x, out).is_err() {
                    out.fill(f64::NAN);
                }
            }),
            Arc::new(move |t, x, out| {
                if s.eval_into(t, x, out).is_err() {
                    out.fill(f64::NAN);
                }
            }),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive and finite, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(t, x, &mut out);
        out
    }

    pub fn diffusion_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        (self.diffusion)(t, x, &mut out);
        out
    }
}

impl Field for CoefficientField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
}

/// `a = σ σ*` at `(t, x)`.
pub fn diffusion_matrix<F: Field + ?Sized>(field: &F, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let (r, l) = (field.dim(), field.noise_dim());
    if x.len() != r {
        return Err(Error::Config(format!("state has dimension {}, field expects {r}", x.len())));
    }
    let mut s = vec![0.0; r * l];
    field.diffusion(t, x, &mut s);
    let sigma = DMatrix::from_row_slice(r, l, &s);
    Ok(&sigma * sigma.transpose())
}

/// Coefficients frozen on the sphere of radius `N`: inside the closed ball
/// they are the base coefficients, outside they are the base evaluated at the
/// radial projection `N x / |x|`.
#[derive(Clone, Debug)]
pub struct TruncatedField<F> {
    base: F,
    radius: f64,
}

pub fn truncate<F: Field>(field: F, radius: f64) -> Result<TruncatedField<F>> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("truncation radius must be positive, got {radius}")));
    }
    Ok(TruncatedField { base: field, radius })
}

impl<F: Field> TruncatedField<F> {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn base(&self) -> &F {
        &self.base
    }

    fn with_projected<R>(&self, x: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let norm = norm(x);
        if norm <= self.radius {
            return f(x);
        }
        let scale = self.radius / norm;
        let mut buf = [0.0; 16];
        if x.len() <= buf.len() {
            for (b, xi) in buf.iter_mut().zip(x) {
                *b = xi * scale;
            }
            f(&buf[..x.len()])
        } else {
            let y: Vec<f64> = x.iter().map(|xi| xi * scale).collect();
            f(&y)
        }
    }
}

impl<F: Field> Field for TruncatedField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn noise_dim(&self) -> usize {
        self.base.noise_dim()
    }
    fn horizon(&self) -> f64 {
        self.base.horizon()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.with_projected(x, |y| self.base.drift(t, y, out))
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.with_projected(x, |y| self.base.diffusion(t, y, out))
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn horizon(&self) -> f64 {
        (**self).horizon()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).drift(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).diffusion(t, x, out)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Potential `c`, source `g` and initial datum `f` of the Cauchy problem.
/// `c` must come with a declared bound; bounds on `f` and `g` are optional
/// and only feed the a-priori sanity gate of the Monte Carlo estimator.
#[derive(Clone)]
pub struct ScalarField {
    pub c: ScalarFn,
    pub g: ScalarFn,
    pub f: ScalarFn,
    pub c_bound: f64,
    pub f_bound: Option<f64>,
    pub g_bound: Option<f64>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("c_bound", &self.c_bound)
            .field("f_bound", &self.f_bound)
            .field("g_bound", &self.g_bound)
            .finish_non_exhaustive()
    }
}

impl ScalarField {
    pub fn new(c: ScalarFn, g: ScalarFn, f: ScalarFn, c_bound: f64) -> Result<Self> {
        if !(c_bound >= 0.0 && c_bound.is_finite()) {
            return Err(Error::Config(format!("c must be declared bounded, got bound {c_bound}")));
        }
        Ok(ScalarField { c, g, f, c_bound, f_bound: None, g_bound: None })
    }

    /// `c ≡ 0`, `g ≡ 0`: the transport special case.
    pub fn transport(f: ScalarFn) -> Self {
        ScalarField { c: zero_fn(), g: zero_fn(), f, c_bound: 0.0, f_bound: None, g_bound: Some(0.0) }
    }

    pub fn with_f_bound(mut self, bound: f64) -> Self {
        self.f_bound = Some(bound);
        self
    }

    pub fn with_g_bound(mut self, bound: f64) -> Self {
        self.g_bound = Some(bound);
        self
    }

    /// Expressions are evaluated at `t = 0`; the scalar data are time-independent.
    pub fn from_exprs(c: Expr, g: Expr, f: Expr, c_bound: f64) -> Result<Self> {
        Self::new(expr_fn(c), expr_fn(g), expr_fn(f), c_bound)
    }

    /// Spot-checks the declared bounds on a point cloud.
    pub fn spot_check(&self, sampler: &Sampler, dim: usize) -> Result<()> {
        let cloud = sampler.cloud(dim, 1.0, false)?;
        for x in cloud.states() {
            let checks = [("c", self.c.as_ref(), Some(self.c_bound)), ("f", self.f.as_ref(), self.f_bound), ("g", self.g.as_ref(), self.g_bound)];
            for (name, func, bound) in checks {
                let v = func(x);
                if !v.is_finite() {
                    return Err(Error::NonFinite { t: 0.0, x: x.to_vec() });
                }
                if let Some(b) = bound {
                    if v.abs() > b {
                        return Err(Error::Input(format!("|{name}({x:?})| = {} exceeds declared bound {b}", v.abs())));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn zero_fn() -> ScalarFn {
    Arc::new(|_| 0.0)
}

pub fn expr_fn(e: Expr) -> ScalarFn {
    Arc::new(move |x| e.eval(0.0, x).unwrap_or(f64::NAN))
}

/// Which structural inequality a validator checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionKind {
    /// `|b|² + |σ|² ≤ K²(1 + |x|²)`; value is `K²`.
    LinearGrowth,
    /// `|b(x) - b(y)| + |σ(x) - σ(y)| ≤ L |x - y|` on the sampled ball; value is `L`.
    Lipschitz,
    /// `<x, b> + |σ|² ≤ K²(1 + |x|²)`; value is `K²`.
    Dissipativity,
    /// `<x - y, b(x) - b(y)> ≤ K²(1 + |x - y|²)`; value is `K²`.
    DissipativityDifferences,
    /// eigenvalues of `σσ*` in `[k⁻², k²]`; value is `k`.
    Ellipticity,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 5] = [
        ConditionKind::LinearGrowth,
        ConditionKind::Lipschitz,
        ConditionKind::Dissipativity,
        ConditionKind::DissipativityDifferences,
        ConditionKind::Ellipticity,
    ];

    fn paired(self) -> bool {
        matches!(self, ConditionKind::Lipschitz | ConditionKind::DissipativityDifferences)
    }

    pub fn label(self) -> &'static str {
        match self {
            ConditionKind::LinearGrowth => "linear-growth",
            ConditionKind::Lipschitz => "lipschitz",
            ConditionKind::Dissipativity => "dissipativity",
            ConditionKind::DissipativityDifferences => "dissipativity-differences",
            ConditionKind::Ellipticity => "ellipticity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEstimate {
    pub kind: ConditionKind,
    /// Smallest constant satisfying the inequality on every sampled point.
    pub value: f64,
    pub candidate: Option<f64>,
    pub sample_count: usize,
    pub violation_count: usize,
    pub worst_witness: Option<Witness>,
}

impl ConditionEstimate {
    /// True when the candidate (or, absent one, the sampled value) holds on
    /// every point and is finite.
    pub fn certified(&self) -> bool {
        self.violation_count == 0 && self.candidate.unwrap_or(self.value).is_finite()
    }

    /// The constant in its unsquared form (`K_T` rather than `K_T²`).
    pub fn constant(&self) -> f64 {
        match self.kind {
            ConditionKind::Lipschitz | ConditionKind::Ellipticity => self.value,
            _ => self.value.sqrt(),
        }
    }
}

/// Where validators evaluate the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sampler {
    /// Uniform grid of `t_points` times on `[0, T]` crossed with `x_points`
    /// shifted-Halton points in the closed ball of the given radius.
    QuasiRandom { radius: f64, t_points: usize, x_points: usize, seed: u64 },
    /// Explicit `(t, x[, y])` points.
    Explicit(Vec<Witness>),
}

impl Sampler {
    pub fn ball(radius: f64, seed: u64) -> Self {
        Sampler::QuasiRandom { radius, t_points: 33, x_points: 4096, seed }
    }

    pub fn with_radius(&self, radius: f64) -> Self {
        match self {
            Sampler::QuasiRandom { t_points, x_points, seed, .. } => {
                Sampler::QuasiRandom { radius, t_points: *t_points, x_points: *x_points, seed: *seed }
            }
            Sampler::Explicit(points) => {
                let old = points.iter().map(|p| norm(&p.x)).fold(0.0, f64::max);
                let scale = if old > 0.0 { radius / old } else { 1.0 };
                Sampler::Explicit(
                    points
                        .iter()
                        .map(|p| Witness {
                            t: p.t,
                            x: p.x.iter().map(|v| v * scale).collect(),
                            y: p.y.as_ref().map(|y| y.iter().map(|v| v * scale).collect()),
                        })
                        .collect(),
                )
            }
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Sampler::QuasiRandom { radius, .. } => *radius,
            Sampler::Explicit(points) => points
                .iter()
                .flat_map(|p| std::iter::once(norm(&p.x)).chain(p.y.as_deref().map(norm)))
                .fold(0.0, f64::max),
        }
    }

    fn cloud(&self, dim: usize, horizon: f64, paired: bool) -> Result<PointCloud> {
        let cloud = match self {
            Sampler::QuasiRandom { radius, t_points, x_points, seed } => {
                if *t_points == 0 || *x_points == 0 {
                    return Err(Error::Config("sampler has no points".into()));
                }
                let times = if *t_points == 1 {
                    vec![0.0]
                } else {
                    (0..*t_points).map(|k| horizon * k as f64 / (*t_points - 1) as f64).collect()
                };
                let blocks = if paired { 2 } else { 1 };
                let pts = halton_ball(dim, blocks, *x_points, *radius, *seed);
                PointCloud::Product { times, pts, dim, paired }
            }
            Sampler::Explicit(points) => {
                if points.is_empty() {
                    return Err(Error::Config("sampler has no points".into()));
                }
                for p in points {
                    if p.x.len() != dim || p.y.as_ref().is_some_and(|y| y.len() != dim) {
                        return Err(Error::Config(format!("sample point {p:?} does not have dimension {dim}")));
                    }
                    if paired && p.y.is_none() {
                        return Err(Error::Config("pair condition needs (t, x, y) sample points".into()));
                    }
                }
                PointCloud::Explicit(points.clone())
            }
        };
        Ok(cloud)
    }
}

enum PointCloud {
    Product { times: Vec<f64>, pts: Vec<f64>, dim: usize, paired: bool },
    Explicit(Vec<Witness>),
}

impl PointCloud {
    fn for_each(&self, mut f: impl FnMut(f64, &[f64], Option<&[f64]>) -> Result<()>) -> Result<usize> {
        let mut n = 0;
        match self {
            PointCloud::Product { times, pts, dim, paired } => {
                let stride = if *paired { 2 * dim } else { *dim };
                for &t in times {
                    for chunk in pts.chunks_exact(stride) {
                        let (x, y) = chunk.split_at(*dim);
                        f(t, x, paired.then_some(y))?;
                        n += 1;
                    }
                }
            }
            PointCloud::Explicit(points) => {
                for p in points {
                    f(p.t, &p.x, p.y.as_deref())?;
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    fn states(&self) -> Vec<&[f64]> {
        match self {
            PointCloud::Product { pts, dim, paired, .. } => {
                let stride = if *paired { 2 * dim } else { *dim };
                pts.chunks_exact(stride).map(|c| &c[..*dim]).collect()
            }
            PointCloud::Explicit(points) => points.iter().map(|p| p.x.as_slice()).collect(),
        }
    }
}

fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut v = 0.0;
    while i > 0 {
        v += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    v
}

/// `count` points in the closed ball, each consisting of `blocks` independent
/// `dim`-vectors. Halton coordinates get a seeded Cranley–Patterson shift.
/// For `dim = 1` the ball is the interval; otherwise a direction from
/// inverse-normal coordinates and a radius `u^{1/dim}` are combined.
fn halton_ball(dim: usize, blocks: usize, count: usize, radius: f64, seed: u64) -> Vec<f64> {
    let per_block = if dim == 1 { 1 } else { dim + 1 };
    let ndims = per_block * blocks;
    let bases = primes(ndims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..ndims).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(count * dim * blocks);
    let mut u = vec![0.0; ndims];
    for i in 0..count as u64 {
        for (k, uk) in u.iter_mut().enumerate() {
            let v = radical_inverse(i + 1, bases[k]) + shift[k];
            *uk = v - v.floor();
        }
        for b in 0..blocks {
            let c = &u[b * per_block..(b + 1) * per_block];
            if dim == 1 {
                out.push(radius * (2.0 * c[0] - 1.0));
                continue;
            }
            let dir: Vec<f64> = c[..dim].iter().map(|&p| crate::paths::std_normal_inv(p.clamp(1e-12, 1.0 - 1e-12))).collect();
            let n = norm(&dir);
            let rho = radius * c[dim].powf(1.0 / dim as f64);
            for d in dir {
                out.push(if n > 0.0 { rho * d / n } else { 0.0 });
            }
        }
    }
    out
}

/// Evaluates the chosen inequality on every sample point.
///
/// Without a candidate the returned `value` certifies the sample
/// (`violation_count = 0`). With a candidate, points whose required constant
/// exceeds it are counted as violations. The witness is always the point
/// requiring the largest constant.
pub fn estimate_condition<F: Field + ?Sized>(
    field: &F,
    kind: ConditionKind,
    sampler: &Sampler,
    candidate: Option<f64>,
) -> Result<ConditionEstimate> {
    let (r, l) = (field.dim(), field.noise_dim());
    let cloud = sampler.cloud(r, field.horizon(), kind.paired())?;
    let mut bx = vec![0.0; r];
    let mut by = vec![0.0; r];
    let mut sx = vec![0.0; r * l];
    let mut sy = vec![0.0; r * l];
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let mut violations = 0;
    let non_finite = |t: f64, x: &[f64]| Error::NonFinite { t, x: x.to_vec() };

    let count = cloud.for_each(|t, x, y| {
        field.drift(t, x, &mut bx);
        field.diffusion(t, x, &mut sx);
        if bx.iter().chain(&sx).any(|v| !v.is_finite()) {
            return Err(non_finite(t, x));
        }
        if let Some(y) = y {
            field.drift(t, y, &mut by);
            field.diffusion(t, y, &mut sy);
            if by.iter().chain(&sy).any(|v| !v.is_finite()) {
                return Err(non_finite(t, y));
            }
        }
        let ratio = match kind {
            ConditionKind::LinearGrowth => (norm_sq(&bx) + norm_sq(&sx)) / (1.0 + norm_sq(x)),
            ConditionKind::Dissipativity => (dot(x, &bx) + norm_sq(&sx)) / (1.0 + norm_sq(x)),
            ConditionKind::Lipschitz => {
                let y = y.expect("paired sample");
                let dx = dist(x, y);
                if dx == 0.0 {
                    return Ok(());
                }
                (dist(&bx, &by) + dist(&sx, &sy)) / dx
            }
            ConditionKind::DissipativityDifferences => {
                let y = y.expect("paired sample");
                let diff: f64 = x.iter().zip(y).zip(bx.iter().zip(&by)).map(|((a, b), (p, q))| (a - b) * (p - q)).sum();
                diff / (1.0 + dist(x, y).powi(2))
            }
            ConditionKind::Ellipticity => required_ellipticity(&sx, r, l)?,
        };
        if ratio.is_nan() {
            return Err(non_finite(t, x));
        }
        if candidate.is_some_and(|c| ratio > c) {
            violations += 1;
        }
        if ratio > worst {
            worst = ratio;
            witness = Some(Witness { t, x: x.to_vec(), y: y.map(<[f64]>::to_vec) });
        }
        Ok(())
    })?;

    let floor = if kind == ConditionKind::Ellipticity { 1.0 } else { 0.0 };
    Ok(ConditionEstimate {
        kind,
        value: worst.max(floor),
        candidate,
        sample_count: count,
        violation_count: violations,
        worst_witness: witness,
    })
}

/// Smallest `k ≥ 1` with all eigenvalues of `σσ*` inside `[k⁻², k²]`;
/// infinite when `σσ*` is singular.
fn required_ellipticity(sigma: &[f64], r: usize, l: usize) -> Result<f64> {
    let s = DMatrix::from_row_slice(r, l, sigma);
    let a = &s * s.transpose();
    let asym = (&a - a.transpose()).amax();
    if asym > 1e-12 * a.amax().max(1.0) {
        return Err(Error::Internal(format!("diffusion matrix not symmetric (residual {asym:e})")));
    }
    let eig = SymmetricEigen::new(a);
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(hi.sqrt().max(1.0 / lo.sqrt()).max(1.0))
}

/// Checks condition (3): every eigenvalue of `a(t, x)` in `[k⁻², k²]`.
pub fn check_ellipticity<F: Field + ?Sized>(field: &F, sampler: &Sampler, k: f64) -> Result<ConditionEstimate> {
    if !(k >= 1.0) {
        return Err(Error::Config(format!("ellipticity constant must be >= 1, got {k}")));
    }
    estimate_condition(field, ConditionKind::Ellipticity, sampler, Some(k))
}

/// Sampled constants at radius `R` and `2R`. A global inequality is taken as
/// certified when the constant stops growing with the radius; superlinear
/// coefficients fail this because the required constant keeps increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalCertificate {
    pub kind: ConditionKind,
    pub at_radius: ConditionEstimate,
    pub at_double_radius: ConditionEstimate,
    pub growth: f64,
    pub certified: bool,
}

pub const GLOBAL_GROWTH_TOLERANCE: f64 = 1.25;

pub fn certify_global<F: Field + ?Sized>(field: &F, kind: ConditionKind, sampler: &Sampler) -> Result<GlobalCertificate> {
    let near = estimate_condition(field, kind, sampler, None)?;
    let far = estimate_condition(field, kind, &sampler.with_radius(2.0 * sampler.radius()), None)?;
    let growth = if near.value > 0.0 {
        far.value / near.value
    } else if far.value <= 1e-12 {
        1.0
    } else {
        f64::INFINITY
    };
    let certified = near.value.is_finite() && far.value <= GLOBAL_GROWTH_TOLERANCE * near.value + 1e-12;
    Ok(GlobalCertificate { kind, at_radius: near, at_double_radius: far, growth, certified })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}
