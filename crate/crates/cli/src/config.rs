//! JSON problem configuration.
//!
//! Loading happens in two passes. The schema pass deserializes the document
//! and rejects unknown keys and wrong types; it stops at the first problem
//! because serde does. The semantic pass then checks every value and
//! collects all errors, each tagged with a JSON pointer into the document.
//!
//! Documented defaults:
//!
//! | key          | default                                           |
//! |--------------|---------------------------------------------------|
//! | `grid`       | `{"T": 1.0, "n_steps": 1000}`                     |
//! | `eps_grid`   | `[0.4, 0.2, 0.1, 0.05]`                           |
//! | `M`          | `10000`                                           |
//! | `seed`       | `1`                                               |
//! | `x0`         | catalog default, otherwise the origin             |
//! | `scheme`     | `euler` for lipschitz, `tamed` for dissipative    |
//! | `N_policy`   | doubling from `constants.N` (or the catalog radius, or 4) |
//! | `t_checks`   | `[T/4, T/2, T]`                                   |
//! | `delta_grid` | `[]`                                              |
//! | `eval_points`| `[{"t": T, "x": x0}]` when `x0` is a fixed vector |
//! | `scalar.c`, `scalar.g` | `"0"`                                   |

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use smallnoise::catalog::{self, CatalogEntry, ConditionClass};
use smallnoise::expr::{parse, Expr};
use smallnoise::feynman_kac::EvalPoint;
use smallnoise::model::{expr_fn, ScalarField};
use smallnoise::zeroth_order::{EpsGrid, StudySpec};
use smallnoise::{CoefficientField, Field, InitialState, NPolicy, SchemeSpec, Step, TimeGrid, VectorExpr};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub problem: ProblemBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<X0Spec>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(rename = "M", default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeName>,
    #[serde(rename = "N_policy", default, skip_serializing_if = "Option::is_none")]
    pub n_policy: Option<NPolicy>,
    /// Output root; not part of the effective config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_checks: Option<Vec<f64>>,
    #[serde(default)]
    pub delta_grid: Vec<f64>,
    #[serde(default)]
    pub eval_points: Vec<EvalPoint>,
}

/// Either `{"catalog": name}` or an inline field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<String>>,
    /// Row-major `r × l` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsBlock>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsBlock {
    #[serde(rename = "K_T", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarBlock {
    #[serde(default = "zero_expr")]
    pub c: String,
    #[serde(default = "zero_expr")]
    pub g: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_bound: Option<f64>,
}

/// A fixed vector, or a sampler such as `{"normal": {"mean": [0], "std": 1}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X0Spec {
    Vector(Vec<f64>),
    Random(InitialState),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock { horizon: 1.0, n_steps: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Euler,
    Tamed,
    Truncated,
}

fn default_eps_grid() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

fn default_paths() -> usize {
    10_000
}

fn default_seed() -> u64 {
    1
}

fn zero_expr() -> String {
    "0".into()
}

/// One configuration problem, located by a JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn new(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { pointer: pointer.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ConfigErrors {
    pub fn at(&self, pointer: &str) -> Option<&ConfigError> {
        self.0.iter().find(|e| e.pointer == pointer)
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

/// Schema pass only.
pub fn parse_config(text: &str) -> Result<ProblemConfig, ConfigErrors> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        ConfigErrors(vec![ConfigError::new(pointer, e.into_inner().to_string())])
    })
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<Resolved, ConfigErrors> {
    read_config(path)?.resolve()
}

pub fn read_config(path: &Path) -> Result<ProblemConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigErrors(vec![ConfigError::new("", format!("cannot read {}: {e}", path.display()))]))?;
    parse_config(&text)
}

/// Command-line overrides of config scalars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub eps: Option<Vec<f64>>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ProblemConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = &o.eps {
            self.eps_grid = e.clone();
        }
        if let Some(m) = o.paths {
            self.paths = m;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
    }

    /// Semantic pass. On success the returned config has every default
    /// filled in.
    pub fn resolve(self) -> Result<Resolved, ConfigErrors> {
        let mut errs = Vec::new();
        let mut push = |p: &str, m: String| errs.push(ConfigError::new(p, m));

        if self.schema_version != SCHEMA_VERSION {
            push("/schema_version", format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let grid = match TimeGrid::new(self.grid.horizon, self.grid.n_steps) {
            Ok(g) => Some(g),
            Err(_) => {
                if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
                    push("/grid/T", format!("must be positive and finite, got {}", self.grid.horizon));
                }
                if self.grid.n_steps == 0 {
                    push("/grid/n_steps", "must be at least 1".into());
                }
                None
            }
        };
        let horizon = grid.map_or(1.0, |g| g.horizon());
        let problem = resolve_problem(&self.problem, horizon, &mut push);
        let dim = problem.as_ref().map(|p| p.field.dim());

        let eps = match EpsGrid::new(self.eps_grid.clone()) {
            Ok(e) => Some(e),
            Err(e) => {
                push("/eps_grid", strip_prefix(&e.to_string()));
                None
            }
        };
        if self.paths == 0 {
            push("/M", "must be at least 1".into());
        }

        let x0 = match (&self.x0, &problem) {
            (Some(X0Spec::Vector(v)), _) => InitialState::Fixed(v.clone()),
            (Some(X0Spec::Random(s)), _) => s.clone(),
            (None, Some(p)) => InitialState::Fixed(p.default_x0.clone()),
            (None, None) => InitialState::Fixed(Vec::new()),
        };
        if let Err(e) = x0.validate() {
            push("/x0", strip_prefix(&e.to_string()));
        } else if let Some(r) = dim {
            if x0.dim() != r {
                push("/x0", format!("has dimension {}, problem has r = {r}", x0.dim()));
            }
        }

        let class = problem.as_ref().map(|p| p.class);
        let scheme_name = self.scheme.unwrap_or(match class {
            Some(ConditionClass::Dissipative) => SchemeName::Tamed,
            _ => SchemeName::Euler,
        });
        let radius = problem.as_ref().map_or(4.0, |p| p.radius);
        let n_policy = match scheme_name {
            SchemeName::Truncated => Some(self.n_policy.unwrap_or(NPolicy::doubling(radius))),
            _ => self.n_policy,
        };
        if let Some(p) = n_policy {
            match p {
                NPolicy::Fixed { radius } if !(radius > 0.0 && radius.is_finite()) => {
                    push("/N_policy/radius", format!("must be positive and finite, got {radius}"))
                }
                NPolicy::Doubling { start, cap } if !(start > 0.0 && cap >= start && cap.is_finite()) => {
                    push("/N_policy", format!("doubling needs 0 < start <= cap < inf, got start {start}, cap {cap}"))
                }
                _ => {}
            }
        }
        let scheme = match scheme_name {
            SchemeName::Euler => SchemeSpec::Euler,
            SchemeName::Tamed => SchemeSpec::Tamed,
            SchemeName::Truncated => SchemeSpec::Truncated {
                step: Step::Euler,
                policy: n_policy.unwrap_or(NPolicy::doubling(radius)),
            },
        };
        if let Some(c) = class {
            if let Err(e) = c.check_scheme(&scheme) {
                push("/scheme", strip_prefix(&e.to_string()));
            }
        }

        let t_checks = self.t_checks.clone().unwrap_or_else(|| match grid {
            Some(g) => StudySpec::default_t_checks(&g),
            None => Vec::new(),
        });
        if t_checks.is_empty() {
            push("/t_checks", "must not be empty".into());
        }
        if let Some(g) = grid {
            for (k, &t) in t_checks.iter().enumerate() {
                if !(t > 0.0) || g.index_of(t).is_none() {
                    push(&format!("/t_checks/{k}"), format!("{t} is not a positive grid time of [0, {}]", g.horizon()));
                }
            }
        }
        for (k, &d) in self.delta_grid.iter().enumerate() {
            if !(d > 0.0 && d.is_finite()) {
                push(&format!("/delta_grid/{k}"), format!("must be positive, got {d}"));
            }
        }

        let eval_points = if self.eval_points.is_empty() {
            match &x0 {
                InitialState::Fixed(v) => vec![EvalPoint { t: horizon, x: v.clone() }],
                _ => Vec::new(),
            }
        } else {
            self.eval_points.clone()
        };
        for (k, p) in self.eval_points.iter().enumerate() {
            if !(p.t > 0.0 && p.t <= horizon) {
                push(&format!("/eval_points/{k}/t"), format!("must lie in (0, {horizon}], got {}", p.t));
            }
            if dim.is_some_and(|r| r != p.x.len()) {
                push(&format!("/eval_points/{k}/x"), format!("has dimension {}, problem has r = {}", p.x.len(), dim.unwrap_or(0)));
            }
            if p.x.iter().any(|v| !v.is_finite()) {
                push(&format!("/eval_points/{k}/x"), "must be finite".into());
            }
        }

        let scalar = match (&self.scalar, dim) {
            (Some(s), Some(r)) => resolve_scalar(s, r, &mut push),
            _ => None,
        };

        if !errs.is_empty() {
            return Err(ConfigErrors(errs));
        }
        let (Some(problem), Some(grid), Some(eps)) = (problem, grid, eps) else {
            return Err(ConfigErrors(vec![ConfigError::new("", "invalid configuration")]));
        };
        let effective = ProblemConfig {
            schema_version: self.schema_version,
            problem: self.problem.clone(),
            scalar: self.scalar.clone(),
            x0: Some(match &x0 {
                InitialState::Fixed(v) => X0Spec::Vector(v.clone()),
                other => X0Spec::Random(other.clone()),
            }),
            grid: self.grid,
            eps_grid: self.eps_grid.clone(),
            paths: self.paths,
            seed: self.seed,
            scheme: Some(scheme_name),
            n_policy,
            out: None,
            t_checks: Some(t_checks.clone()),
            delta_grid: self.delta_grid.clone(),
            eval_points: eval_points.clone(),
        };
        Ok(Resolved {
            config: effective,
            out: self.out,
            problem,
            scalar,
            x0,
            grid,
            eps,
            scheme,
            t_checks,
            eval_points,
        })
    }
}

fn strip_prefix(msg: &str) -> String {
    msg.strip_prefix("configuration error: ").unwrap_or(msg).to_string()
}

/// A coefficient field with everything the studies need to know about it.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub field: CoefficientField,
    pub class: ConditionClass,
    /// Declared `K_T`.
    pub k: Option<f64>,
    /// Declared `L` (or `L_{N,T}`).
    pub l: Option<f64>,
    /// Radius of the ball where the validators sample; also the default `N`.
    pub radius: f64,
    pub default_x0: Vec<f64>,
    pub catalog: Option<CatalogEntry>,
}

fn resolve_problem(block: &ProblemBlock, horizon: f64, push: &mut impl FnMut(&str, String)) -> Option<Problem> {
    let constants = block.constants.unwrap_or_default();
    for (key, v) in [("K_T", constants.k), ("L", constants.l)] {
        if let Some(v) = v {
            if !(v >= 0.0 && v.is_finite()) {
                push(&format!("/problem/constants/{key}"), format!("must be finite and >= 0, got {v}"));
            }
        }
    }
    if let Some(n) = constants.n {
        if !(n > 0.0 && n.is_finite()) {
            push("/problem/constants/N", format!("must be positive and finite, got {n}"));
        }
    }

    if let Some(name) = &block.catalog {
        let inline = [
            ("r", block.r.is_some()),
            ("l", block.l.is_some()),
            ("drift", block.drift.is_some()),
            ("diffusion", block.diffusion.is_some()),
            ("conditions", block.conditions.is_some()),
        ];
        for (key, present) in inline {
            if present {
                push(&format!("/problem/{key}"), "not allowed together with catalog".into());
            }
        }
        return match catalog::entry(name, horizon) {
            Ok(e) => Some(Problem {
                name: e.name.to_string(),
                field: e.field.clone(),
                class: e.class,
                k: Some(constants.k.unwrap_or(e.constants.0)),
                l: Some(constants.l.unwrap_or(e.constants.1)),
                radius: constants.n.unwrap_or(e.radius),
                default_x0: e.default_x0.clone(),
                catalog: Some(e),
            }),
            Err(e) => {
                push("/problem/catalog", strip_prefix(&e.to_string()));
                None
            }
        };
    }

    let mut ok = true;
    let mut need = |key: &str, present: bool| {
        if !present {
            push(&format!("/problem/{key}"), "required for an inline problem (or give a catalog name)".into());
            ok = false;
        }
    };
    need("r", block.r.is_some());
    need("l", block.l.is_some());
    need("drift", block.drift.is_some());
    need("diffusion", block.diffusion.is_some());
    need("conditions", block.conditions.is_some());
    let (r, l) = (block.r.unwrap_or(0), block.l.unwrap_or(0));
    if block.r == Some(0) {
        push("/problem/r", "must be at least 1".into());
        ok = false;
    }
    if block.l == Some(0) {
        push("/problem/l", "must be at least 1".into());
        ok = false;
    }
    let mut exprs = |key: &str, sources: Option<&Vec<String>>, expected: usize| -> Option<VectorExpr> {
        let sources = sources?;
        if expected > 0 && sources.len() != expected {
            push(&format!("/problem/{key}"), format!("needs {expected} entries, got {}", sources.len()));
            return None;
        }
        match VectorExpr::parse(sources, r.max(1)) {
            Ok(v) => Some(v),
            Err(errors) => {
                for (i, e) in errors {
                    push(&format!("/problem/{key}/{i}"), e.to_string());
                }
                None
            }
        }
    };
    let drift = exprs("drift", block.drift.as_ref(), r);
    let diffusion = exprs("diffusion", block.diffusion.as_ref(), r * l);
    if !ok {
        return None;
    }
    let field = CoefficientField::from_exprs("inline", drift?, diffusion?, l, horizon).ok()?;
    Some(Problem {
        name: "inline".into(),
        field,
        class: block.conditions?,
        k: constants.k,
        l: constants.l,
        radius: constants.n.unwrap_or(4.0),
        default_x0: vec![0.0; r],
        catalog: None,
    })
}

/// Parsed scalar data `c`, `g`, `f`.
#[derive(Debug, Clone)]
pub struct ScalarExprs {
    pub c: Expr,
    pub g: Expr,
    pub f: Option<Expr>,
    pub c_bound: f64,
    pub f_bound: Option<f64>,
    pub g_bound: Option<f64>,
}

impl ScalarExprs {
    /// `None` when `f` is missing.
    pub fn field(&self) -> Option<ScalarField> {
        let f = self.f.clone()?;
        let mut s = ScalarField::from_exprs(self.c.clone(), self.g.clone(), f, self.c_bound).ok()?;
        if let Some(b) = self.f_bound {
            s = s.with_f_bound(b);
        }
        if let Some(b) = self.g_bound {
            s = s.with_g_bound(b);
        }
        Some(s)
    }

    pub fn is_transport(&self) -> bool {
        self.c.is_constant_zero() && self.g.is_constant_zero()
    }

    pub fn f_fn(&self) -> Option<smallnoise::model::ScalarFn> {
        self.f.clone().map(expr_fn)
    }
}

fn resolve_scalar(block: &ScalarBlock, r: usize, push: &mut impl FnMut(&str, String)) -> Option<ScalarExprs> {
    let mut one = |key: &str, src: &str| match parse(src, r) {
        Ok(e) => Some(e),
        Err(e) => {
            push(&format!("/scalar/{key}"), e.to_string());
            None
        }
    };
    let c = one("c", &block.c);
    let g = one("g", &block.g);
    let f = match &block.f {
        Some(src) => Some(one("f", src)?),
        None => None,
    };
    let (c, g) = (c?, g?);
    let c_bound = match block.c_bound {
        Some(b) if b >= 0.0 && b.is_finite() => b,
        Some(b) => {
            push("/scalar/c_bound", format!("must be finite and >= 0, got {b}"));
            return None;
        }
        None if c.is_constant_zero() => 0.0,
        None => {
            push("/scalar/c_bound", "required when c is not identically 0".into());
            return None;
        }
    };
    Some(ScalarExprs { c, g, f, c_bound, f_bound: block.f_bound, g_bound: block.g_bound })
}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Effective config with defaults filled in, as echoed into reports.
    pub config: ProblemConfig,
    pub out: Option<PathBuf>,
    pub problem: Problem,
    pub scalar: Option<ScalarExprs>,
    pub x0: InitialState,
    pub grid: TimeGrid,
    pub eps: EpsGrid,
    pub scheme: SchemeSpec,
    pub t_checks: Vec<f64>,
    pub eval_points: Vec<EvalPoint>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str) -> ConfigErrors {
        parse_config(text).and_then(ProblemConfig::resolve).unwrap_err()
    }

    #[test]
    fn minimal_catalog_config_gets_defaults() {
        let r = parse_config(r#"{"schema_version": 1, "problem": {"catalog": "ou"}}"#).unwrap().resolve().unwrap();
        assert_eq!(r.config.paths, 10_000);
        assert_eq!(r.config.eps_grid, vec![0.4, 0.2, 0.1, 0.05]);
        assert_eq!(r.config.scheme, Some(SchemeName::Euler));
        assert_eq!(r.x0, InitialState::Fixed(vec![1.0]));
        assert_eq!(r.t_checks, vec![0.25, 0.5, 1.0]);
        assert_eq!(r.eval_points, vec![EvalPoint { t: 1.0, x: vec![1.0] }]);
        assert_eq!(r.grid.n_steps(), 1000);
    }

    #[test]
    fn effective_config_round_trips() {
        let r = parse_config(r#"{"schema_version": 1, "problem": {"catalog": "cubic"}, "scheme": "truncated"}"#)
            .unwrap()
            .resolve()
            .unwrap();
        let text = serde_json::to_string(&r.config).unwrap();
        let again = parse_config(&text).unwrap().resolve().unwrap();
        assert_eq!(again.config, r.config);
        assert_eq!(again.scheme, r.scheme);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_pointer() {
        let e = errors(r#"{"schema_version": 1, "problem": {"catalog": "ou", "colour": 1}}"#);
        assert_eq!(e.0[0].pointer, "/problem/colour");
        assert!(e.0[0].message.contains("colour"));
        let e = errors(r#"{"schema_version": 1, "problem": {"catalog": "ou"}, "grid": {"T": "x", "n_steps": 2}}"#);
        assert_eq!(e.0[0].pointer, "/grid/T");
    }

    #[test]
    fn out_of_range_variable_is_located() {
        let e = errors(
            r#"{"schema_version": 1, "problem": {"r": 1, "l": 1, "drift": ["x2"], "diffusion": ["1"], "conditions": "lipschitz"}}"#,
        );
        let at = e.at("/problem/drift/0").expect("drift error");
        assert!(at.message.contains("x2"), "{}", at.message);
    }

    #[test]
    fn increasing_eps_grid_is_rejected() {
        let e = errors(r#"{"schema_version": 1, "problem": {"catalog": "ou"}, "eps_grid": [0.1, 0.2]}"#);
        assert!(e.at("/eps_grid").unwrap().message.contains("must be strictly decreasing"));
    }

    #[test]
    fn all_semantic_errors_are_collected() {
        let e = errors(
            r#"{"schema_version": 2, "problem": {"catalog": "cubic"}, "eps_grid": [0.1, 0.2], "M": 0,
                "scheme": "euler", "t_checks": [0.3333], "delta_grid": [-1]}"#,
        );
        for p in ["/schema_version", "/eps_grid", "/M", "/scheme", "/t_checks/0", "/delta_grid/0"] {
            assert!(e.at(p).is_some(), "missing {p} in {e}");
        }
    }

    #[test]
    fn inline_problem_checks_shapes_and_requirements() {
        let e = errors(r#"{"schema_version": 1, "problem": {"r": 2, "l": 1, "drift": ["-x1"], "diffusion": ["1", "sin("]}}"#);
        assert!(e.at("/problem/conditions").is_some());
        assert!(e.at("/problem/drift").is_some());
        assert!(e.at("/problem/diffusion/1").unwrap().message.contains("column"));
        let e = errors(r#"{"schema_version": 1, "problem": {"catalog": "ou", "r": 1}}"#);
        assert!(e.at("/problem/r").is_some());
        let e = errors(r#"{"schema_version": 1, "problem": {"catalog": "nope"}}"#);
        assert!(e.at("/problem/catalog").is_some());
    }

    #[test]
    fn scalar_block_needs_a_bound_for_nonzero_c() {
        let e = errors(r#"{"schema_version": 1, "problem": {"catalog": "ou"}, "scalar": {"c": "sin(x1)", "f": "x1"}}"#);
        assert!(e.at("/scalar/c_bound").is_some());
        let r = parse_config(r#"{"schema_version": 1, "problem": {"catalog": "ou"}, "scalar": {"f": "x1^2"}}"#)
            .unwrap()
            .resolve()
            .unwrap();
        let s = r.scalar.unwrap();
        assert!(s.is_transport());
        assert_eq!((s.field().unwrap().f)(&[3.0]), 9.0);
    }

    #[test]
    fn random_initial_state_parses() {
        let r = parse_config(
            r#"{"schema_version": 1, "problem": {"catalog": "ou"}, "x0": {"normal": {"mean": [0.0], "std": 0.5}}}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!(r.x0, InitialState::Normal { mean: vec![0.0], std: 0.5 });
        assert!(r.eval_points.is_empty());
    }

    #[test]
    fn overrides_replace_scalars() {
        let mut c = parse_config(r#"{"schema_version": 1, "problem": {"catalog": "ou"}}"#).unwrap();
        c.apply(&Overrides { seed: Some(9), eps: Some(vec![0.5]), paths: Some(10), out: None });
        let r = c.resolve().unwrap();
        assert_eq!((r.config.seed, r.config.paths, r.eps.values().to_vec()), (9, 10, vec![0.5]));
    }
}
