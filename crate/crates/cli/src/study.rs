//! Study dispatch. Each study returns its report files and a list of checks;
//! nothing here touches the filesystem.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use smallnoise::catalog::ConditionClass;
use smallnoise::feynman_kac::{epsilon_sweep, McSpec, SweepReport};
use smallnoise::model::{certify_global, estimate_condition, GlobalCertificate, ScalarField};
use smallnoise::zeroth_order::{
    convergence_study, moment_bound_check, BoundConstants, ConvergenceReport, MomentRow, Status, StudySpec, Variant,
};
use smallnoise::{simulate_ensemble, ConditionKind, EnsembleSpec, Error, InitialState, Result, Sampler};

use crate::config::{Resolved, SCHEMA_VERSION};

/// Accepted range for the fitted mean-square order at the horizon.
pub const ORDER_RANGE: (f64, f64) = (1.8, 2.2);

/// Relative slack when testing declared constants against sampled values.
const DECLARED_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Simulate,
    Validate,
    Converge,
    FeynmanKac,
    Transport,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::Simulate, Study::Validate, Study::Converge, Study::FeynmanKac, Study::Transport];

    pub fn name(self) -> &'static str {
        match self {
            Study::Simulate => "simulate",
            Study::Validate => "validate",
            Study::Converge => "converge",
            Study::FeynmanKac => "feynman-kac",
            Study::Transport => "transport",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Study::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown study '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub study: Study,
    pub problem: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

/// Everything a study produced: file name → contents, plus the summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub files: BTreeMap<String, String>,
}

struct Builder {
    checks: Vec<Check>,
    notes: Vec<String>,
    files: BTreeMap<String, String>,
}

impl Builder {
    fn new() -> Self {
        Builder { checks: Vec::new(), notes: Vec::new(), files: BTreeMap::new() }
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
        self.files.insert(name.into(), text + "\n");
        Ok(())
    }

    fn finish(self, study: Study, problem: &str) -> Outcome {
        let passed = self.checks.iter().all(|c| c.passed);
        Outcome {
            summary: Summary {
                schema_version: SCHEMA_VERSION,
                study,
                problem: problem.into(),
                passed,
                checks: self.checks,
                notes: self.notes,
            },
            files: self.files,
        }
    }
}

pub fn run_study(study: Study, cfg: &Resolved) -> Result<Outcome> {
    let mut b = Builder::new();
    match study {
        Study::Simulate => simulate(cfg, &mut b)?,
        Study::Validate => validate(cfg, &mut b)?,
        Study::Converge => converge(cfg, &mut b)?,
        Study::FeynmanKac => feynman_kac(cfg, &mut b, false)?,
        Study::Transport => feynman_kac(cfg, &mut b, true)?,
    }
    Ok(b.finish(study, &cfg.problem.name))
}

fn variant(class: ConditionClass) -> Variant {
    match class {
        ConditionClass::Lipschitz => Variant::Lipschitz,
        ConditionClass::Dissipative => Variant::Dissipative,
    }
}

fn sampler(cfg: &Resolved) -> Sampler {
    Sampler::ball(cfg.problem.radius, cfg.config.seed)
}

fn declared_constants(cfg: &Resolved) -> Option<BoundConstants> {
    let (k, l) = (cfg.problem.k?, cfg.problem.l?);
    BoundConstants::declared(variant(cfg.problem.class), k, l, cfg.x0.second_moment()).ok()
}

/// Certified constants when the validators agree, declared ones otherwise.
fn bound_constants(cfg: &Resolved, b: &mut Builder) -> Result<Option<BoundConstants>> {
    let ex0 = cfg.x0.second_moment();
    if !ex0.is_finite() {
        b.notes.push("x0 has no finite second moment; bounds skipped".into());
        return Ok(None);
    }
    match BoundConstants::certify(&cfg.problem.field, variant(cfg.problem.class), &sampler(cfg), ex0) {
        Ok(c) => Ok(Some(c)),
        Err(Error::Uncertified(why)) => {
            let declared = declared_constants(cfg);
            b.notes.push(match declared {
                Some(_) => format!("constants not certified ({why}); using declared constants"),
                None => format!("constants not certified ({why}); bounds skipped"),
            });
            Ok(declared)
        }
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct SimulateRow {
    eps: f64,
    accepted: usize,
    blow_ups: usize,
    escapes: usize,
    terminal_mean: Vec<f64>,
    terminal_second_moment: Vec<f64>,
    moment_bound: Option<Vec<MomentRow>>,
}

fn simulate(cfg: &Resolved, b: &mut Builder) -> Result<()> {
    let constants = declared_constants(cfg);
    if constants.is_none() {
        b.notes.push("no declared K_T, L or finite E|x0|^2; moment bound not checked".into());
    }
    let mut rows = Vec::new();
    for (k, &eps) in cfg.eps.values().iter().enumerate() {
        let spec = EnsembleSpec {
            x0: cfg.x0.clone(),
            grid: cfg.grid,
            eps,
            paths: cfg.config.paths,
            seed: cfg.config.seed,
            scheme: cfg.scheme,
            keep_paths: false,
            checkpoints: cfg.t_checks.clone(),
        };
        let ens = simulate_ensemble(&cfg.problem.field, &cfg.problem.name, &spec)?;
        b.files.insert(format!("ensemble_{k}.csv"), ens.summary_csv());
        let frac = ens.blow_up_fraction();
        b.checks.push(Check::new(
            format!("blow-ups eps={eps}"),
            frac <= smallnoise::zeroth_order::MAX_BLOW_UP_FRACTION,
            format!("{} of {} paths blew up", ens.blow_ups, spec.paths),
        ));
        let moment = match &constants {
            Some(c) => {
                let m = moment_bound_check(&ens, c)?;
                let failed: Vec<String> = m.iter().filter(|r| !r.passed).map(|r| format!("t={}", r.t)).collect();
                b.checks.push(Check::new(
                    format!("moment-bound eps={eps}"),
                    failed.is_empty(),
                    if failed.is_empty() { "holds at every t_check".into() } else { format!("fails at {}", failed.join(", ")) },
                ));
                Some(m)
            }
            None => None,
        };
        let n = cfg.grid.n_steps();
        rows.push(SimulateRow {
            eps,
            accepted: ens.accepted,
            blow_ups: ens.blow_ups,
            escapes: ens.escapes,
            terminal_mean: ens.mean_at(n).to_vec(),
            terminal_second_moment: ens.second_moment_at(n).to_vec(),
            moment_bound: moment,
        });
    }
    b.json("report.json", &rows)
}

#[derive(Serialize)]
struct ConditionRow {
    kind: ConditionKind,
    required: bool,
    certificate: Option<GlobalCertificate>,
    declared: Option<f64>,
    declared_holds: Option<bool>,
    value: Option<f64>,
}

fn validate(cfg: &Resolved, b: &mut Builder) -> Result<()> {
    let field = &cfg.problem.field;
    let sampler = sampler(cfg);
    let required: &[ConditionKind] = match cfg.problem.class {
        ConditionClass::Lipschitz => &[ConditionKind::LinearGrowth, ConditionKind::Lipschitz],
        ConditionClass::Dissipative => &[ConditionKind::Dissipativity, ConditionKind::DissipativityDifferences],
    };
    let k_sq = cfg.problem.k.map(|k| k * k);
    let mut rows = Vec::new();
    let mut csv = String::from("kind,required,certified,value,value_double_radius,growth,declared,declared_holds\n");
    for kind in ConditionKind::ALL {
        let is_required = required.contains(&kind);
        let declared = match kind {
            ConditionKind::LinearGrowth | ConditionKind::Dissipativity | ConditionKind::DissipativityDifferences
                if is_required =>
            {
                k_sq
            }
            ConditionKind::Lipschitz => cfg.problem.l,
            _ => None,
        };
        let declared_holds = match declared {
            Some(c) => {
                let est = estimate_condition(field, kind, &sampler, Some(c * (1.0 + DECLARED_SLACK) + DECLARED_SLACK))?;
                Some(est.certified())
            }
            None => None,
        };
        if kind == ConditionKind::Ellipticity {
            let est = estimate_condition(field, kind, &sampler, None)?;
            csv.push_str(&format!("{},false,,{},,,,\n", kind.label(), est.value));
            rows.push(ConditionRow { kind, required: false, certificate: None, declared: None, declared_holds: None, value: Some(est.value) });
            continue;
        }
        let cert = certify_global(field, kind, &sampler)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            kind.label(),
            is_required,
            cert.certified,
            cert.at_radius.value,
            cert.at_double_radius.value,
            cert.growth,
            declared.map_or(String::new(), |d| d.to_string()),
            declared_holds.map_or(String::new(), |d| d.to_string()),
        ));
        if is_required {
            b.checks.push(Check::new(
                format!("certified {}", kind.label()),
                cert.certified,
                format!("value {} at radius {}, {} at double radius", cert.at_radius.value, sampler.radius(), cert.at_double_radius.value),
            ));
        } else {
            b.notes.push(format!(
                "{} {} (not required for the {} class)",
                kind.label(),
                if cert.certified { "certified" } else { "not certified" },
                class_label(cfg.problem.class)
            ));
        }
        if let (Some(d), Some(holds)) = (declared, declared_holds) {
            b.checks.push(Check::new(
                format!("declared {}", kind.label()),
                holds,
                format!("declared {d} vs sampled {}", cert.at_radius.value),
            ));
        }
        rows.push(ConditionRow { kind, required: is_required, certificate: Some(cert), declared, declared_holds, value: None });
    }
    b.files.insert("conditions.csv".into(), csv);
    b.json("report.json", &rows)
}

fn class_label(c: ConditionClass) -> &'static str {
    match c {
        ConditionClass::Lipschitz => "lipschitz",
        ConditionClass::Dissipative => "dissipative",
    }
}

fn fixed_x0(cfg: &Resolved, study: Study) -> Result<Vec<f64>> {
    match &cfg.x0 {
        InitialState::Fixed(v) => Ok(v.clone()),
        _ => Err(Error::Config(format!("the {study} study needs a fixed x0 vector"))),
    }
}

fn converge(cfg: &Resolved, b: &mut Builder) -> Result<()> {
    let spec = StudySpec {
        x0: fixed_x0(cfg, Study::Converge)?,
        grid: cfg.grid,
        eps: cfg.eps.clone(),
        paths: cfg.config.paths,
        seed: cfg.config.seed,
        scheme: cfg.scheme,
        t_checks: cfg.t_checks.clone(),
        deltas: cfg.config.delta_grid.clone(),
    };
    let constants = bound_constants(cfg, b)?;
    let report = convergence_study(&cfg.problem.field, &cfg.problem.name, &spec, constants.as_ref())?;
    converge_checks(cfg, &report, b);
    b.files.insert("mse.csv".into(), report.mse_csv());
    if !spec.deltas.is_empty() {
        b.files.insert("sup.csv".into(), report.sup_csv());
    }
    b.json("report.json", &report)
}

fn converge_checks(cfg: &Resolved, report: &ConvergenceReport, b: &mut Builder) {
    let horizon = cfg.grid.horizon();
    let unusable = report.mse.iter().filter(|p| p.status == Status::Unusable).count();
    b.checks.push(Check::new("usable", unusable == 0, format!("{unusable} unusable (eps, t) points")));

    let (lo, hi) = ORDER_RANGE;
    match report.fit_at(horizon) {
        Some(fit) => b.checks.push(Check::new(
            "order",
            (lo..=hi).contains(&fit.order),
            format!("fitted order {} at t={horizon} over {} points, expected [{lo}, {hi}]", fit.order, fit.points_used),
        )),
        None => {
            let why = report.fits.iter().find(|f| f.t == horizon).and_then(|f| f.error.clone()).unwrap_or_default();
            b.checks.push(Check::new("order", false, format!("no order fit at t={horizon}: {why}")));
        }
    }

    let over: Vec<String> = report
        .mse
        .iter()
        .filter_map(|p| p.bound.filter(|&bd| p.mse > bd + 3.0 * p.se).map(|bd| format!("eps={} t={} mse={} bound={bd}", p.eps, p.t, p.mse)))
        .collect();
    if report.mse.iter().any(|p| p.bound.is_some()) {
        b.checks.push(Check::new("mse-bound", over.is_empty(), if over.is_empty() { "holds everywhere".into() } else { over.join("; ") }));
    }

    let sup_over: Vec<String> = report
        .sup_deviation
        .iter()
        .filter_map(|p| p.bound.filter(|&bd| p.frequency > bd + 3.0 * p.se).map(|bd| format!("eps={} delta={} freq={} bound={bd}", p.eps, p.delta, p.frequency)))
        .collect();
    if report.sup_deviation.iter().any(|p| p.bound.is_some()) {
        b.checks.push(Check::new("sup-bound", sup_over.is_empty(), if sup_over.is_empty() { "holds everywhere".into() } else { sup_over.join("; ") }));
    }

    if let Some(entry) = &cfg.problem.catalog {
        let mut misses = Vec::new();
        let mut compared = 0;
        for p in report.mse.iter().filter(|p| p.t == horizon && p.status != Status::Unusable) {
            if let Some(exact) = entry.mse(p.eps, p.t) {
                compared += 1;
                if (p.mse - exact).abs() > 3.0 * p.se {
                    misses.push(format!("eps={} mse={} exact={exact} se={}", p.eps, p.mse, p.se));
                }
            }
        }
        if compared > 0 {
            b.checks.push(Check::new(
                "oracle",
                misses.is_empty(),
                if misses.is_empty() { format!("{compared} points within 3 SE of the closed form") } else { misses.join("; ") },
            ));
        }
    }
}

fn feynman_kac(cfg: &Resolved, b: &mut Builder, transport: bool) -> Result<()> {
    let study = if transport { Study::Transport } else { Study::FeynmanKac };
    let scalar = cfg.scalar.as_ref().filter(|s| s.f.is_some()).ok_or_else(|| {
        Error::Config(format!("the {study} study needs scalar.f"))
    })?;
    let field: ScalarField = if transport {
        if !scalar.is_transport() {
            return Err(Error::Config("the transport study needs scalar.c and scalar.g to be 0".into()));
        }
        ScalarField::transport(scalar.f_fn().expect("f checked above"))
    } else {
        scalar.field().ok_or_else(|| Error::Config("invalid scalar data".into()))?
    };
    if cfg.eval_points.is_empty() {
        return Err(Error::Config(format!("the {study} study needs eval_points or a fixed x0")));
    }
    let mc = McSpec { paths: cfg.config.paths, seed: cfg.config.seed, step: cfg.grid.step(), scheme: cfg.scheme };
    let mut reports: Vec<SweepReport> = Vec::new();
    for (k, point) in cfg.eval_points.iter().enumerate() {
        let sweep = epsilon_sweep(&cfg.problem.field, &field, point, cfg.eps.values(), &mc)?;
        let bad: Vec<String> = sweep.rows.iter().filter(|r| r.status.label() != "ok").map(|r| format!("eps={} {}", r.eps, r.status.label())).collect();
        b.checks.push(Check::new(
            format!("estimates point={k}"),
            bad.is_empty(),
            if bad.is_empty() { "all estimates valid".into() } else { bad.join("; ") },
        ));
        b.checks.push(Check::new(
            format!("gap-trend point={k}"),
            sweep.trend.non_increasing(),
            format!("{} pairs checked, {} violations", sweep.trend.pairs_checked, sweep.trend.violations.len()),
        ));
        b.files.insert(format!("sweep_{k}.csv"), sweep.to_csv());
        reports.push(sweep);
    }
    b.json("report.json", &reports)
}
