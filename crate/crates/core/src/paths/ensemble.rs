use serde::{Deserialize, Serialize};

use super::{record, run_truncated, BrownianDriver, Domain, NPolicy, NormalStream, Path, Step, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{norm_sq, Field};
use crate::stats::par_chunks;

/// Initial state `x₀`. Random initial states draw from their own key domain,
/// so `x₀` is independent of every Brownian increment stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    Fixed(Vec<f64>),
    Normal { mean: Vec<f64>, std: f64 },
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// Independent Cauchy components; heavy tails, infinite second moment.
    Cauchy { location: Vec<f64>, scale: f64 },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Fixed(x) => x.len(),
            InitialState::Normal { mean, .. } => mean.len(),
            InitialState::Uniform { low, .. } => low.len(),
            InitialState::Cauchy { location, .. } => location.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("x0 sampler: {m}")));
        match self {
            InitialState::Fixed(x) if x.iter().any(|v| !v.is_finite()) => bad("non-finite component"),
            InitialState::Normal { std, .. } if !(*std >= 0.0) => bad("std must be >= 0"),
            InitialState::Uniform { low, high } if low.len() != high.len() || low.iter().zip(high).any(|(a, b)| !(a <= b)) => {
                bad("uniform bounds must have equal length and low <= high")
            }
            InitialState::Cauchy { scale, .. } if !(*scale > 0.0) => bad("scale must be > 0"),
            _ => Ok(()),
        }
    }

    pub fn sample(&self, seed: u64, stream_id: u64) -> Vec<f64> {
        if let InitialState::Fixed(x) = self {
            return x.clone();
        }
        let mut s = NormalStream::new(seed, Domain::InitialState, 0, stream_id);
        match self {
            InitialState::Fixed(_) => unreachable!(),
            InitialState::Normal { mean, std } => mean.iter().map(|m| m + std * s.normal()).collect(),
            InitialState::Uniform { low, high } => low.iter().zip(high).map(|(a, b)| a + (b - a) * s.uniform()).collect(),
            InitialState::Cauchy { location, scale } => location
                .iter()
                .map(|m| m + scale * (std::f64::consts::PI * (s.uniform() - 0.5)).tan())
                .collect(),
        }
    }

    /// `E|x₀|²`, infinite for Cauchy.
    pub fn second_moment(&self) -> f64 {
        match self {
            InitialState::Fixed(x) => norm_sq(x),
            InitialState::Normal { mean, std } => norm_sq(mean) + mean.len() as f64 * std * std,
            InitialState::Uniform { low, high } => {
                low.iter().zip(high).map(|(a, b)| (a * a + a * b + b * b) / 3.0).sum()
            }
            InitialState::Cauchy { .. } => f64::INFINITY,
        }
    }
}

/// Integration scheme for ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SchemeSpec {
    Euler,
    Tamed,
    Truncated { step: Step, policy: NPolicy },
}

impl SchemeSpec {
    pub fn label(&self) -> &'static str {
        match self {
            SchemeSpec::Euler => "euler",
            SchemeSpec::Tamed => "tamed",
            SchemeSpec::Truncated { .. } => "truncated",
        }
    }
}

/// Result of running one path under a scheme, from a precomputed increment vector.
pub(crate) struct PathRun {
    pub path: Path,
    pub escaped: bool,
}

pub(crate) fn run_scheme<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: &TimeGrid,
    eps: f64,
    dw: &[f64],
    scheme: SchemeSpec,
) -> Result<PathRun> {
    Ok(match scheme {
        SchemeSpec::Euler => PathRun { path: record(field, x0, grid, eps, Some(dw), Step::Euler, None), escaped: false },
        SchemeSpec::Tamed => PathRun { path: record(field, x0, grid, eps, Some(dw), Step::Tamed, None), escaped: false },
        SchemeSpec::Truncated { step, policy } => {
            let tp = run_truncated(field, x0, grid, eps, dw, step, policy)?;
            PathRun { path: tp.path, escaped: tp.escaped }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub x0: InitialState,
    pub grid: TimeGrid,
    pub eps: f64,
    pub paths: usize,
    pub seed: u64,
    pub scheme: SchemeSpec,
    /// Keep every path in memory (for per-path CSV dumps).
    #[serde(default)]
    pub keep_paths: bool,
    /// Times (grid points) at which every path's state is retained.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
}

/// `M` paths on a shared grid, reduced to per-time moments.
///
/// Moments are taken over paths that did not blow up. Path `i` uses stream
/// id `i`; partial sums are formed over fixed index blocks and merged in
/// index order, so results do not depend on the number of worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    pub field_name: String,
    pub dim: usize,
    /// Per grid point and component, row-major `(k, i)`.
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub accepted: usize,
    pub blow_ups: usize,
    pub escapes: usize,
    /// Terminal states row-major by path; NaN rows for blown-up paths.
    pub terminal: Vec<f64>,
    /// States at `spec.checkpoints`, indexed `(path, checkpoint, component)`.
    pub checkpoint_states: Vec<f64>,
    pub paths: Option<Vec<Path>>,
}

struct Partial {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    accepted: usize,
    blow_ups: usize,
    escapes: usize,
    terminal: Vec<f64>,
    checkpoint_states: Vec<f64>,
    paths: Vec<Path>,
}

impl Partial {
    fn new(width: usize, capacity: usize) -> Self {
        Partial {
            sum: vec![0.0; width],
            sum_sq: vec![0.0; width],
            accepted: 0,
            blow_ups: 0,
            escapes: 0,
            terminal: Vec::with_capacity(capacity),
            checkpoint_states: Vec::new(),
            paths: Vec::new(),
        }
    }
}

const CHUNK: usize = 64;

pub fn simulate_ensemble<F: Field + ?Sized>(field: &F, name: &str, spec: &EnsembleSpec) -> Result<Ensemble> {
    if spec.paths == 0 {
        return Err(Error::Config("ensemble needs at least one path".into()));
    }
    if spec.x0.dim() != field.dim() {
        return Err(Error::Config(format!("x0 has dimension {}, field expects {}", spec.x0.dim(), field.dim())));
    }
    if !(spec.eps >= 0.0 && spec.eps.is_finite()) {
        return Err(Error::Config(format!("eps must be finite and >= 0, got {}", spec.eps)));
    }
    spec.x0.validate()?;
    let r = field.dim();
    let width = (spec.grid.n_steps() + 1) * r;
    let checkpoints = spec
        .checkpoints
        .iter()
        .map(|&t| spec.grid.index_of(t).ok_or_else(|| Error::Config(format!("checkpoint t={t} is not a grid point"))))
        .collect::<Result<Vec<_>>>()?;

    let partials = par_chunks(spec.paths, CHUNK, |range| -> Result<Partial> {
        let mut p = Partial::new(width, range.len() * r);
        for i in range {
            let id = i as u64;
            let x0 = spec.x0.sample(spec.seed, id);
            let dw = BrownianDriver::new(spec.seed, id, field.noise_dim(), spec.grid)?.increments();
            let run = run_scheme(field, &x0, &spec.grid, spec.eps, &dw, spec.scheme)?;
            p.escapes += run.escaped as usize;
            if run.path.blew_up() {
                p.blow_ups += 1;
                p.terminal.extend(std::iter::repeat_n(f64::NAN, r));
                p.checkpoint_states.extend(std::iter::repeat_n(f64::NAN, r * checkpoints.len()));
            } else {
                for &k in &checkpoints {
                    p.checkpoint_states.extend_from_slice(run.path.state(k));
                }
                p.accepted += 1;
                for ((s, q), v) in p.sum.iter_mut().zip(p.sum_sq.iter_mut()).zip(&run.path.values) {
                    *s += v;
                    *q += v * v;
                }
                p.terminal.extend_from_slice(run.path.terminal());
            }
            if spec.keep_paths {
                p.paths.push(run.path);
            }
        }
        Ok(p)
    });

    let mut total = Partial::new(width, spec.paths * r);
    for p in partials {
        let p = p?;
        for (a, b) in total.sum.iter_mut().zip(&p.sum) {
            *a += b;
        }
        for (a, b) in total.sum_sq.iter_mut().zip(&p.sum_sq) {
            *a += b;
        }
        total.accepted += p.accepted;
        total.blow_ups += p.blow_ups;
        total.escapes += p.escapes;
        total.terminal.extend(p.terminal);
        total.checkpoint_states.extend(p.checkpoint_states);
        total.paths.extend(p.paths);
    }
    let n = total.accepted as f64;
    let scale = |v: Vec<f64>| v.into_iter().map(|s| if n > 0.0 { s / n } else { f64::NAN }).collect();
    Ok(Ensemble {
        spec: spec.clone(),
        field_name: name.to_string(),
        dim: r,
        mean: scale(total.sum),
        second_moment: scale(total.sum_sq),
        accepted: total.accepted,
        blow_ups: total.blow_ups,
        escapes: total.escapes,
        terminal: total.terminal,
        checkpoint_states: total.checkpoint_states,
        paths: spec.keep_paths.then_some(total.paths),
    })
}

impl Ensemble {
    pub fn mean_at(&self, k: usize) -> &[f64] {
        &self.mean[k * self.dim..(k + 1) * self.dim]
    }

    pub fn second_moment_at(&self, k: usize) -> &[f64] {
        &self.second_moment[k * self.dim..(k + 1) * self.dim]
    }

    pub fn blow_up_fraction(&self) -> f64 {
        self.blow_ups as f64 / self.spec.paths as f64
    }

    pub fn escape_fraction(&self) -> f64 {
        self.escapes as f64 / self.spec.paths as f64
    }

    /// `t, mean_x1..mean_xr, second_x1..second_xr`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.dim {
            out.push_str(&format!(",mean_x{i}"));
        }
        for i in 1..=self.dim {
            out.push_str(&format!(",second_x{i}"));
        }
        out.push('\n');
        for k in 0..=self.spec.grid.n_steps() {
            out.push_str(&format!("{}", self.spec.grid.time(k)));
            for v in self.mean_at(k).iter().chain(self.second_moment_at(k)) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientField;
    use crate::paths::euler_maruyama;
    use std::sync::Arc;

    fn pure_noise(l: usize) -> CoefficientField {
        CoefficientField::new(
            "pure-noise",
            l,
            l,
            1.0,
            Arc::new(|_, _, out| out.fill(0.0)),
            Arc::new(move |_, _, out| {
                out.fill(0.0);
                for i in 0..l {
                    out[i * l + i] = 1.0;
                }
            }),
        )
        .unwrap()
    }

    fn spec(paths: usize, n: usize, x0: InitialState) -> EnsembleSpec {
        EnsembleSpec {
            x0,
            grid: TimeGrid::new(1.0, n).unwrap(),
            eps: 1.0,
            paths,
            seed: 17,
            scheme: SchemeSpec::Euler,
            keep_paths: true,
            checkpoints: vec![0.5],
        }
    }

    #[test]
    fn single_path_ensemble_is_one_euler_call() {
        let f = pure_noise(1);
        let s = spec(1, 50, InitialState::Fixed(vec![0.3]));
        let e = simulate_ensemble(&f, "pure-noise", &s).unwrap();
        let d = BrownianDriver::new(17, 0, 1, s.grid).unwrap();
        let p = euler_maruyama(&f, &[0.3], &s.grid, 1.0, &d).unwrap();
        assert_eq!(e.paths.as_ref().unwrap()[0], p);
        assert_eq!(e.mean, p.values);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let f = pure_noise(2);
        let mut s = spec(300, 20, InitialState::Normal { mean: vec![0.0, 1.0], std: 0.5 });
        s.keep_paths = false;
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| simulate_ensemble(&f, "x", &s).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.terminal, b.terminal);
    }

    #[test]
    fn brownian_second_moment_is_dimension_times_t() {
        let l = 2;
        let f = pure_noise(l);
        let mut s = spec(100_000, 10, InitialState::Fixed(vec![0.0; l]));
        s.keep_paths = false;
        let e = simulate_ensemble(&f, "x", &s).unwrap();
        let m2: f64 = e.second_moment_at(10).iter().sum();
        // Var(|W_1|^2) = 2 l for standard Brownian motion
        let se = (2.0 * l as f64 / 1e5).sqrt();
        assert!((m2 - l as f64).abs() < 3.0 * se, "{m2}");
    }

    #[test]
    fn random_initial_state_uses_its_own_stream() {
        let x0 = InitialState::Normal { mean: vec![0.0], std: 1.0 };
        let a = x0.sample(3, 5);
        assert_eq!(a, x0.sample(3, 5));
        assert_ne!(a, x0.sample(3, 6));
        let dw = BrownianDriver::new(3, 5, 1, TimeGrid::new(1.0, 1).unwrap()).unwrap().increments();
        assert_ne!(a[0], dw[0]);
        assert_eq!(InitialState::Fixed(vec![1.0, 2.0]).second_moment(), 5.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let f = pure_noise(1);
        assert!(simulate_ensemble(&f, "x", &spec(0, 5, InitialState::Fixed(vec![0.0]))).is_err());
        assert!(simulate_ensemble(&f, "x", &spec(5, 5, InitialState::Fixed(vec![0.0, 1.0]))).is_err());
        assert!(simulate_ensemble(&f, "x", &spec(5, 5, InitialState::Cauchy { location: vec![0.0], scale: 0.0 })).is_err());
    }

    #[test]
    fn summary_csv_shape() {
        let f = pure_noise(1);
        let e = simulate_ensemble(&f, "x", &spec(10, 4, InitialState::Fixed(vec![0.0]))).unwrap();
        let csv = e.summary_csv();
        assert!(csv.starts_with("t,mean_x1,second_x1\n0,0,0\n"));
        assert_eq!(csv.lines().count(), 6);
    }
}
