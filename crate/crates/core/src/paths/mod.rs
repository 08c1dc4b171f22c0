//! Path generation for the unperturbed ODE `x' = b(t, x)` and the perturbed
//! SDE `dX = b dt + ε σ dW`.
//!
//! All stochastic schemes evaluate coefficients at the left endpoint `t_k`
//! (Itô convention). A path is declared blown up when a component is
//! non-finite or `|X| > 1e12`; integration stops there and the path records
//! the step, it is never an error.

mod driver;
mod ensemble;

use serde::{Deserialize, Serialize};

pub use driver::{std_normal_inv, BrownianDriver, QUANTUM};
pub(crate) use driver::{Domain, NormalStream};
pub(crate) use ensemble::run_scheme;
pub use ensemble::{simulate_ensemble, Ensemble, EnsembleSpec, InitialState, SchemeSpec};

use crate::error::{Error, Result};
use crate::model::{norm, norm_sq, truncate, Field};

pub const BLOW_UP_NORM: f64 = 1e12;

/// Uniform grid `t_k = k T / n`, with `t_n = T` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive and finite, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    /// Grid on `[0, horizon]` whose step is at most `h`.
    pub fn with_step(horizon: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {h}")));
        }
        Self::new(horizon, ((horizon / h) - 1e-9).ceil().max(1.0) as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn refine(&self) -> Self {
        TimeGrid { horizon: self.horizon, n_steps: self.n_steps * 2 }
    }

    /// Index of the grid point closest to `t`, if it lies within 1e-9 steps.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.step()).round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.time(k) - t).abs() <= 1e-9 * self.step()).then_some(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeMethod {
    Euler,
    Rk4,
}

/// Explicit one-step schemes for the SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    /// `X + b h + ε σ ΔW`
    Euler,
    /// `X + h b / (1 + h|b|) + ε σ ΔW`
    Tamed,
}

/// A trajectory on a grid. `values` holds the states row by row; a blown-up
/// path stops at the first bad state.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: TimeGrid,
    pub dim: usize,
    pub values: Vec<f64>,
    /// Radius tracked for the exit time, if any.
    pub radius: Option<f64>,
    /// First index `k` with `sup_{j≤k} |X_j| > radius`.
    pub exit_step: Option<usize>,
    pub blow_up_step: Option<usize>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn blew_up(&self) -> bool {
        self.blow_up_step.is_some()
    }

    /// Exit time `τ_N` as a grid time, `None` meaning the path never left.
    pub fn exit_time(&self) -> Option<f64> {
        self.exit_step.map(|k| self.grid.time(k))
    }

    /// Comma-separated `t,x1..xr` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.dim {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for k in 0..self.len() {
            out.push_str(&format!("{}", self.grid.time(k)));
            for v in self.state(k) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct Outcome {
    pub blow_up: Option<usize>,
    pub exit: Option<usize>,
}

pub(crate) fn is_blown(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite()) || norm_sq(x) > BLOW_UP_NORM * BLOW_UP_NORM
}

/// Core stepping loop. `visit(k, X_k)` is called for every accepted state,
/// including `k = 0`. With `eps == 0` or no increments the noise term is
/// skipped entirely, so the arithmetic matches the Euler ODE solver.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: &TimeGrid,
    eps: f64,
    dw: Option<&[f64]>,
    step: Step,
    radius: Option<f64>,
    mut visit: impl FnMut(usize, &[f64]),
) -> Outcome {
    let (r, l) = (field.dim(), field.noise_dim());
    let h = grid.step();
    let mut x = x0.to_vec();
    let mut b = vec![0.0; r];
    let mut s = vec![0.0; r * l];
    let mut noise = vec![0.0; r];
    let noisy = eps != 0.0 && dw.is_some();
    let mut out = Outcome::default();
    let exits = |x: &[f64]| radius.is_some_and(|n| norm(x) > n);

    if is_blown(&x) {
        out.blow_up = Some(0);
        return out;
    }
    if exits(&x) {
        out.exit = Some(0);
    }
    visit(0, &x);
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        field.drift(t, &x, &mut b);
        if noisy {
            let dw = &dw.expect("noisy implies increments")[k * l..(k + 1) * l];
            field.diffusion(t, &x, &mut s);
            for (i, ni) in noise.iter_mut().enumerate() {
                *ni = s[i * l..(i + 1) * l].iter().zip(dw).map(|(a, w)| a * w).sum();
            }
        }
        match step {
            Step::Euler => {
                for (xi, bi) in x.iter_mut().zip(&b) {
                    *xi += bi * h;
                }
            }
            Step::Tamed => {
                let damp = 1.0 + h * norm(&b);
                for (xi, bi) in x.iter_mut().zip(&b) {
                    *xi += h * bi / damp;
                }
            }
        }
        if noisy {
            for (xi, ni) in x.iter_mut().zip(&noise) {
                *xi += eps * ni;
            }
        }
        if is_blown(&x) {
            out.blow_up = Some(k + 1);
            return out;
        }
        if out.exit.is_none() && exits(&x) {
            out.exit = Some(k + 1);
        }
        visit(k + 1, &x);
    }
    out
}

fn check_inputs<F: Field + ?Sized>(field: &F, x0: &[f64], eps: f64) -> Result<()> {
    if x0.len() != field.dim() {
        return Err(Error::Config(format!("x0 has dimension {}, field expects {}", x0.len(), field.dim())));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be finite and >= 0, got {eps}")));
    }
    Ok(())
}

fn check_driver<F: Field + ?Sized>(field: &F, grid: &TimeGrid, driver: &BrownianDriver) -> Result<()> {
    if driver.grid() != *grid {
        return Err(Error::Config(format!("driver grid {:?} does not match {:?}", driver.grid(), grid)));
    }
    if driver.noise_dim() != field.noise_dim() {
        return Err(Error::Config(format!(
            "driver has {} noise components, field expects {}",
            driver.noise_dim(),
            field.noise_dim()
        )));
    }
    Ok(())
}

pub(crate) fn record<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: &TimeGrid,
    eps: f64,
    dw: Option<&[f64]>,
    step: Step,
    radius: Option<f64>,
) -> Path {
    let mut values = Vec::with_capacity((grid.n_steps() + 1) * field.dim());
    let out = integrate(field, x0, grid, eps, dw, step, radius, |_, x| values.extend_from_slice(x));
    Path { grid: *grid, dim: field.dim(), values, radius, exit_step: out.exit, blow_up_step: out.blow_up }
}

/// Deterministic trajectory of `x' = b(t, x)`. The Euler variant performs
/// exactly the arithmetic of [`euler_maruyama`] with `eps = 0`.
pub fn solve_ode<F: Field + ?Sized>(field: &F, x0: &[f64], grid: &TimeGrid, method: OdeMethod) -> Result<Path> {
    check_inputs(field, x0, 0.0)?;
    let path = match method {
        OdeMethod::Euler => record(field, x0, grid, 0.0, None, Step::Euler, None),
        OdeMethod::Rk4 => {
            let r = field.dim();
            let mut values = Vec::with_capacity((grid.n_steps() + 1) * r);
            let blow_up = rk4(x0, grid, |t, x, out| field.drift(t, x, out), |_, x| values.extend_from_slice(x));
            Path { grid: *grid, dim: r, values, radius: None, exit_step: None, blow_up_step: blow_up }
        }
    };
    if let Some(step) = path.blow_up_step {
        return Err(Error::BlowUp { step, t: grid.time(step) });
    }
    Ok(path)
}

/// Classical fourth-order Runge–Kutta for `y' = rhs(t, y)` on `grid`.
/// Returns the first step whose state is blown up, if any.
pub(crate) fn rk4(
    y0: &[f64],
    grid: &TimeGrid,
    rhs: impl Fn(f64, &[f64], &mut [f64]),
    mut visit: impl FnMut(usize, &[f64]),
) -> Option<usize> {
    let n = y0.len();
    let h = grid.step();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    if is_blown(&y) {
        return Some(0);
    }
    visit(0, &y);
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        rhs(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if is_blown(&y) {
            return Some(k + 1);
        }
        visit(k + 1, &y);
    }
    None
}

/// `X_{k+1} = X_k + b(t_k, X_k) h + ε σ(t_k, X_k) ΔW_k`.
pub fn euler_maruyama<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: &TimeGrid,
    eps: f64,
    driver: &BrownianDriver,
) -> Result<Path> {
    check_inputs(field, x0, eps)?;
    check_driver(field, grid, driver)?;
    let dw = driver.increments();
    Ok(record(field, x0, grid, eps, Some(&dw), Step::Euler, None))
}

/// Euler–Maruyama with the drift increment tamed to `h b / (1 + h|b|)`.
pub fn step_tamed<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: &TimeGrid,
    eps: f64,
    driver: &BrownianDriver,
) -> Result<Path> {
    check_inputs(field, x0, eps)?;
    check_driver(field, grid, driver)?;
    let dw = driver.increments();
    Ok(record(field, x0, grid, eps, Some(&dw), Step::Tamed, None))
}

/// Truncation radius policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy")]
pub enum NPolicy {
    Fixed { radius: f64 },
    /// Start at `start` and double (re-running the same driver) while the
    /// path leaves the ball, up to `cap`.
    Doubling { start: f64, cap: f64 },
}

impl NPolicy {
    /// Doubling policy with the default cap `2^20 · N₀`.
    pub fn doubling(start: f64) -> Self {
        NPolicy::Doubling { start, cap: start * (1u64 << 20) as f64 }
    }

    pub fn initial_radius(&self) -> f64 {
        match *self {
            NPolicy::Fixed { radius } => radius,
            NPolicy::Doubling { start, .. } => start,
        }
    }
}

/// A path of the truncated system together with the radii that were tried.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPath {
    pub path: Path,
    pub radius: f64,
    /// `(N, τ_N)` for every attempted radius; `None` means no exit before `T`.
    pub history: Vec<(f64, Option<f64>)>,
    /// The path left the ball of the final radius before `T`.
    pub escaped: bool,
}

pub(crate) fn run_truncated<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: &TimeGrid,
    eps: f64,
    dw: &[f64],
    step: Step,
    policy: NPolicy,
) -> Result<TruncatedPath> {
    let mut radius = policy.initial_radius();
    let mut history = Vec::new();
    loop {
        let field_n = truncate(field, radius)?;
        let path = record(&field_n, x0, grid, eps, Some(dw), step, Some(radius));
        history.push((radius, path.exit_time()));
        let exited = path.exit_step.is_some();
        match policy {
            NPolicy::Doubling { cap, .. } if exited && 2.0 * radius <= cap => radius *= 2.0,
            _ => return Ok(TruncatedPath { path, radius, history, escaped: exited }),
        }
    }
}

/// Euler–Maruyama (or `step`) on the truncated coefficients `(b_N, σ_N)`.
/// Under the doubling policy the same driver is re-run with `N ← 2N` until
/// the path stays inside the ball; an exit at the cap is reported as an
/// escape.
pub fn simulate_truncated<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: &TimeGrid,
    eps: f64,
    driver: &BrownianDriver,
    step: Step,
    policy: NPolicy,
) -> Result<TruncatedPath> {
    check_inputs(field, x0, eps)?;
    check_driver(field, grid, driver)?;
    let n0 = policy.initial_radius();
    if !(n0 > norm(x0)) {
        return Err(Error::Config(format!("truncation radius {n0} must exceed |x0| = {}", norm(x0))));
    }
    let dw = driver.increments();
    run_truncated(field, x0, grid, eps, &dw, step, policy)
}
