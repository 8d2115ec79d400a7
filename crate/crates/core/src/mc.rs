//! Seeded, parallel Monte Carlo campaigns over noise paths.
//!
//! Path `i` draws from the stream `(master_seed, i)`; results are collected
//! in index order and reduced sequentially, so a report does not depend on
//! the number of worker threads.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{fmt_f64, path_rng, NoiseCoupling, NoiseGenerator, SamplePath, TimeGrid};
use crate::numerics::CompensatedSum;
use crate::params::{DerivedConstants, SystemParams};
use crate::pde::{solve_random_pde, SolverControls, SpatialMesh};
use crate::prob::{
    gamma_law_oracle, l_alpha_drift, l_alpha_path_sup, lower_bound_malliavin, tail_bound_concentration,
    tail_bound_markov, ConcentrationVariant, GammaLawInput, GammaLawOracle, GammaVariant, TailBoundInput,
};
use crate::stopping::{
    beta_case, cumulative_exp_functional, stopping_time, tau_double_star, tau_lower_star, tau_prime, tau_upper_1,
    tau_upper_2, tau_upper_general, upper1_spec, upper2_spec, BetaCase, ExpFunctionalSpec, StoppingEstimate,
};

/// Evaluates `f(i)` for `i = 0..n` on the current rayon pool, in index order.
pub fn map_indexed<T: Send, F: Fn(u64) -> T + Sync + Send>(n: u64, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Runs `f` on a dedicated pool with `workers` threads, or on the global
/// pool when `None`.
pub fn with_workers<T: Send, F: FnOnce() -> T + Send>(workers: Option<usize>, f: F) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `√(p(1−p)/n)`.
pub fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Half-width multiplier of the reported 95% intervals.
pub const CI_Z: f64 = 1.96;

/// Work a campaign can run on every path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    LowerStar,
    Upper1,
    Upper2,
    DoubleStar,
    Prime,
    UpperGeneral,
    PdeSandwich,
    TailBounds,
    GammaLaw,
    MalliavinLower,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::LowerStar => "lower_star",
            Pipeline::Upper1 => "upper1",
            Pipeline::Upper2 => "upper2",
            Pipeline::DoubleStar => "double_star",
            Pipeline::Prime => "prime",
            Pipeline::UpperGeneral => "upper_general",
            Pipeline::PdeSandwich => "pde_sandwich",
            Pipeline::TailBounds => "tail_bounds",
            Pipeline::GammaLaw => "gamma_law",
            Pipeline::MalliavinLower => "malliavin_lower",
        }
    }

    fn is_stopping(&self) -> bool {
        matches!(
            self,
            Pipeline::LowerStar
                | Pipeline::Upper1
                | Pipeline::Upper2
                | Pipeline::DoubleStar
                | Pipeline::Prime
                | Pipeline::UpperGeneral
        )
    }
}

/// Deliberate defects used to check that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultInjection {
    /// Flip the sign of `ρ₂` inside the upper-bound functional.
    NegateRho2InUpper,
}

/// A full campaign description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub params: SystemParams,
    pub grid: TimeGrid,
    #[serde(default)]
    pub mesh: Option<SpatialMesh>,
    #[serde(default)]
    pub solver: SolverControls,
    pub n_paths: u64,
    pub master_seed: u64,
    pub pipelines: Vec<Pipeline>,
    /// `T` in `P(τ ≤ T)`; defaults to the grid horizon.
    #[serde(default)]
    pub bound_horizon: Option<f64>,
    /// `α` of the Malliavin lower bound.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Brownian paths for the Gamma-law oracle; defaults to `n_paths`.
    #[serde(default)]
    pub gamma_oracle_paths: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultInjection>,
}

/// One path's outcome for one stopping time.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StoppingOutcome {
    Ok(StoppingEstimate),
    Failed { reason: String },
}

impl StoppingOutcome {
    fn estimate(&self) -> Option<&StoppingEstimate> {
        match self {
            StoppingOutcome::Ok(e) => Some(e),
            StoppingOutcome::Failed { .. } => None,
        }
    }
}

/// Solver outcome on one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeOutcome {
    pub t_blow: Option<f64>,
    pub fault: Option<String>,
}

/// Everything recorded for one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub index: u64,
    pub stopping: BTreeMap<Pipeline, StoppingOutcome>,
    pub pde: Option<PdeOutcome>,
    /// `L(α)` path suprema at half and full horizon.
    pub l_alpha: Option<(f64, f64)>,
}

/// Statistics of one stopping time across paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingSummary {
    pub pipeline: Pipeline,
    pub n: u64,
    pub crossed: u64,
    pub censored: u64,
    pub failed: u64,
    pub saturated: u64,
    pub p_crossed: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub censoring_rate: f64,
    /// Over crossed paths only.
    pub mean_time: Option<f64>,
    pub sd_time: Option<f64>,
}

/// Summary statistics of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleStats {
    pub n: u64,
    pub mean: f64,
    /// Sample standard deviation (`n − 1`), zero for a single value.
    pub sd: f64,
}

pub fn sample_stats(xs: &[f64]) -> Option<SampleStats> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n;
    let sd = if xs.len() > 1 {
        (xs.iter()
            .map(|x| (x - mean).powi(2))
            .collect::<CompensatedSum>()
            .value()
            / (n - 1.0))
            .sqrt()
    } else {
        0.0
    };
    Some(SampleStats {
        n: xs.len() as u64,
        mean,
        sd,
    })
}

/// Probability of an event among `n` trials with its binomial SE and CI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbEstimate {
    pub events: u64,
    pub n: u64,
    pub p: f64,
    pub se: f64,
    pub ci: (f64, f64),
}

pub fn prob_estimate(events: u64, n: u64) -> ProbEstimate {
    let p = if n == 0 { 0.0 } else { events as f64 / n as f64 };
    let se = if n == 0 { 0.0 } else { binomial_se(p, n) };
    ProbEstimate {
        events,
        n,
        p,
        se,
        ci: (p - CI_Z * se, p + CI_Z * se),
    }
}

/// Aggregates one stopping pipeline over all paths.
pub fn aggregate(pipeline: Pipeline, outcomes: &[&StoppingOutcome]) -> StoppingSummary {
    let n = outcomes.len() as u64;
    let mut times = Vec::new();
    let (mut censored, mut failed, mut saturated) = (0, 0, 0);
    for o in outcomes {
        match o {
            StoppingOutcome::Ok(e) => {
                if e.saturated {
                    saturated += 1;
                }
                match e.time() {
                    Some(t) => times.push(t),
                    None => censored += 1,
                }
            }
            StoppingOutcome::Failed { .. } => failed += 1,
        }
    }
    let crossed = times.len() as u64;
    let pe = prob_estimate(crossed, n);
    let stats = sample_stats(&times);
    StoppingSummary {
        pipeline,
        n,
        crossed,
        censored,
        failed,
        saturated,
        p_crossed: pe.p,
        se: pe.se,
        ci: pe.ci,
        censoring_rate: if n == 0 { 0.0 } else { censored as f64 / n as f64 },
        mean_time: stats.map(|s| s.mean),
        sd_time: stats.map(|s| s.sd),
    }
}

/// One analytic bound row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub bound: String,
    pub variant: String,
    pub value: Option<f64>,
    pub applicable: bool,
    pub note: String,
}

impl BoundRow {
    fn from_result(bound: &str, variant: &str, r: Result<f64>) -> Self {
        match r {
            Ok(v) => BoundRow {
                bound: bound.into(),
                variant: variant.into(),
                value: Some(v),
                applicable: true,
                note: String::new(),
            },
            Err(e) => BoundRow {
                bound: bound.into(),
                variant: variant.into(),
                value: None,
                applicable: false,
                note: e.to_string(),
            },
        }
    }
}

/// Outcome of one ordering or dominance check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub compared: u64,
    pub violations: u64,
    pub passed: bool,
    pub detail: String,
}

/// Solver statistics across paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeSummary {
    pub n: u64,
    pub blown_up: u64,
    pub blowup_fraction: f64,
    pub faults: u64,
    pub mean_t_blow: Option<f64>,
    /// Paths whose upper bound crossed well before the horizon without a
    /// detected blow-up.
    pub missed: u64,
}

/// Monte Carlo `L(α)` from the campaign paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LAlphaSummary {
    pub alpha: f64,
    pub value: f64,
    pub se: f64,
    /// Same estimator over the first half of the horizon.
    pub value_half_horizon: f64,
}

/// Deterministic campaign output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub version: String,
    pub master_seed: u64,
    pub n_paths: u64,
    pub grid: TimeGrid,
    pub hurst: f64,
    pub coupling: NoiseCoupling,
    pub pipelines: Vec<Pipeline>,
    pub bound_horizon: f64,
    pub stopping: Vec<StoppingSummary>,
    pub pde: Option<PdeSummary>,
    pub bounds: Vec<BoundRow>,
    pub checks: Vec<CheckSummary>,
    pub gamma_oracle: Option<GammaLawOracle>,
    pub l_alpha: Option<LAlphaSummary>,
    pub notes: Vec<String>,
}

impl CampaignReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn stopping_summary(&self, p: Pipeline) -> Option<&StoppingSummary> {
        self.stopping.iter().find(|s| s.pipeline == p)
    }

    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Flat `section,name,metric,value` table.
    pub fn write_summary_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["section", "name", "metric", "value"])?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for s in &self.stopping {
            let n = s.pipeline.name();
            for (m, v) in [
                ("p_crossed", Some(s.p_crossed)),
                ("se", Some(s.se)),
                ("ci_low", Some(s.ci.0)),
                ("ci_high", Some(s.ci.1)),
                ("censoring_rate", Some(s.censoring_rate)),
                ("mean_time", s.mean_time),
                ("sd_time", s.sd_time),
            ] {
                w.write_record(["stopping", n, m, &opt(v)])?;
            }
            for (m, v) in [
                ("crossed", s.crossed),
                ("censored", s.censored),
                ("failed", s.failed),
                ("saturated", s.saturated),
            ] {
                w.write_record(["stopping", n, m, &v.to_string()])?;
            }
        }
        if let Some(p) = &self.pde {
            w.write_record(["pde", "pde_sandwich", "blowup_fraction", &fmt_f64(p.blowup_fraction)])?;
            w.write_record(["pde", "pde_sandwich", "faults", &p.faults.to_string()])?;
            w.write_record(["pde", "pde_sandwich", "missed", &p.missed.to_string()])?;
            w.write_record(["pde", "pde_sandwich", "mean_t_blow", &opt(p.mean_t_blow)])?;
        }
        for b in &self.bounds {
            let name = format!("{}:{}", b.bound, b.variant);
            w.write_record(["bound", &name, "value", &opt(b.value)])?;
        }
        for c in &self.checks {
            w.write_record(["check", &c.name, "violations", &c.violations.to_string()])?;
            w.write_record(["check", &c.name, "passed", if c.passed { "true" } else { "false" }])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `index,pipeline,crossed,time,saturated,error` for every path.
pub fn write_path_records<P: AsRef<Path>>(records: &[PathRecord], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "pipeline", "crossed", "time", "saturated", "error"])?;
    for r in records {
        let idx = r.index.to_string();
        for (p, o) in &r.stopping {
            match o {
                StoppingOutcome::Ok(e) => w.write_record([
                    idx.as_str(),
                    p.name(),
                    if e.crossed() { "1" } else { "0" },
                    &e.time().map(fmt_f64).unwrap_or_default(),
                    if e.saturated { "1" } else { "0" },
                    "",
                ])?,
                StoppingOutcome::Failed { reason } => {
                    w.write_record([idx.as_str(), p.name(), "", "", "", reason.as_str()])?
                }
            }
        }
        if let Some(pde) = &r.pde {
            w.write_record([
                idx.as_str(),
                "pde_sandwich",
                if pde.t_blow.is_some() { "1" } else { "0" },
                &pde.t_blow.map(fmt_f64).unwrap_or_default(),
                "",
                pde.fault.as_deref().unwrap_or(""),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The upper-bound stopping pipeline matching the exponent regime.
pub fn upper_pipeline(params: &SystemParams) -> Pipeline {
    match beta_case(params) {
        BetaCase::EqualBeta => Pipeline::Upper1,
        BetaCase::StrictBeta => Pipeline::Upper2,
    }
}

fn upper_with_fault(path: &SamplePath, consts: &DerivedConstants, which: Pipeline) -> Result<StoppingEstimate> {
    let (spec, theta) = match which {
        Pipeline::Upper1 => (upper1_spec(consts)?, consts.thresholds.theta_u1),
        _ => (upper2_spec(consts)?, consts.thresholds.theta_u2),
    };
    let theta = theta.ok_or_else(|| Error::Inapplicable("upper bound", "threshold unavailable".into()))?;
    let mut e = spec.primary();
    e.rho_bh = -e.rho_bh;
    stopping_time(path, &ExpFunctionalSpec::single(e.rho_w, e.rho_bh, e.drift), theta)
}

fn stopping_for(
    p: Pipeline,
    path: &SamplePath,
    params: &SystemParams,
    consts: &DerivedConstants,
    fault: Option<FaultInjection>,
) -> Result<StoppingEstimate> {
    match (p, fault) {
        (Pipeline::Upper1 | Pipeline::Upper2, Some(FaultInjection::NegateRho2InUpper)) => {
            upper_with_fault(path, consts, p)
        }
        (Pipeline::LowerStar, _) => tau_lower_star(path, consts),
        (Pipeline::Upper1, _) => tau_upper_1(path, consts),
        (Pipeline::Upper2, _) => tau_upper_2(path, consts),
        (Pipeline::DoubleStar, _) => tau_double_star(path, params, consts),
        (Pipeline::Prime, _) => tau_prime(path, params, consts),
        (Pipeline::UpperGeneral, _) => tau_upper_general(path, params, consts, beta_case(params)),
        _ => Err(Error::InvalidParams(format!("{} is not a stopping time", p.name()))),
    }
}

struct Plan {
    consts: DerivedConstants,
    stopping: Vec<Pipeline>,
    bound_horizon: f64,
    tail: Option<TailBoundInput>,
    gamma: Option<GammaLawInput>,
    alpha: Option<f64>,
}

fn plan(spec: &CampaignSpec) -> Result<Plan> {
    spec.params.validate()?;
    spec.grid.validate()?;
    if spec.n_paths == 0 {
        return Err(Error::InvalidParams("n_paths must be at least 1".into()));
    }
    if spec.pipelines.is_empty() {
        return Err(Error::InvalidParams("no pipelines requested".into()));
    }
    let consts = DerivedConstants::compute(&spec.params)?;
    let has = |p: Pipeline| spec.pipelines.contains(&p);
    let upper = upper_pipeline(&spec.params);
    let mut stopping: Vec<Pipeline> = spec.pipelines.iter().copied().filter(Pipeline::is_stopping).collect();
    if has(Pipeline::PdeSandwich) {
        stopping.push(Pipeline::LowerStar);
    }
    if has(Pipeline::PdeSandwich)
        || has(Pipeline::TailBounds)
        || has(Pipeline::GammaLaw)
        || has(Pipeline::MalliavinLower)
    {
        stopping.push(upper);
    }
    stopping.sort();
    stopping.dedup();

    // probe every stopping time on a zero path so inapplicable requests
    // fail before launch
    let zero = SamplePath::zero(spec.grid, spec.params.hurst, spec.params.coupling)?;
    for &p in &stopping {
        stopping_for(p, &zero, &spec.params, &consts, None)
            .map_err(|e| Error::InvalidParams(format!("pipeline {}: {e}", p.name())))?;
    }
    let bound_horizon = spec.bound_horizon.unwrap_or(spec.grid.t_max());
    if !(bound_horizon > 0.0) || bound_horizon > spec.grid.t_max() * (1.0 + 1e-12) {
        return Err(Error::InvalidParams(format!(
            "bound_horizon {bound_horizon} must lie in (0, {}]",
            spec.grid.t_max()
        )));
    }
    if has(Pipeline::PdeSandwich) {
        let mesh = spec
            .mesh
            .ok_or_else(|| Error::InvalidParams("pipeline pde_sandwich needs a mesh".into()))?;
        mesh.validate()?;
        if (mesh.domain_length() - spec.params.domain_length).abs() > 1e-12 * spec.params.domain_length {
            return Err(Error::InvalidParams(
                "mesh length differs from the domain length".into(),
            ));
        }
    }
    let case = beta_case(&spec.params);
    let tail = if has(Pipeline::TailBounds) || has(Pipeline::MalliavinLower) {
        Some(
            TailBoundInput::from_params(&spec.params, &consts, case, bound_horizon)
                .map_err(|e| Error::InvalidParams(format!("tail bounds: {e}")))?,
        )
    } else {
        None
    };
    let gamma = if has(Pipeline::GammaLaw) {
        Some(
            GammaLawInput::from_params(&spec.params, &consts, case)
                .map_err(|e| Error::InvalidParams(format!("pipeline gamma_law: {e}")))?,
        )
    } else {
        None
    };
    let alpha = if has(Pipeline::MalliavinLower) {
        let a = spec
            .alpha
            .ok_or_else(|| Error::InvalidParams("pipeline malliavin_lower needs alpha".into()))?;
        if !(a > spec.params.hurst) {
            return Err(Error::InvalidParams(format!("alpha must exceed H, got {a}")));
        }
        Some(a)
    } else {
        None
    };
    Ok(Plan {
        consts,
        stopping,
        bound_horizon,
        tail,
        gamma,
        alpha,
    })
}

fn run_path(spec: &CampaignSpec, plan: &Plan, gen: &NoiseGenerator, index: u64) -> PathRecord {
    let path = gen.sample(&mut path_rng(spec.master_seed, index));
    let mut stopping = BTreeMap::new();
    for &p in &plan.stopping {
        let out = match stopping_for(p, &path, &spec.params, &plan.consts, spec.fault) {
            Ok(e) => StoppingOutcome::Ok(e),
            Err(e) => StoppingOutcome::Failed { reason: e.to_string() },
        };
        stopping.insert(p, out);
    }
    let pde = spec
        .mesh
        .filter(|_| spec.pipelines.contains(&Pipeline::PdeSandwich))
        .map(|mesh| {
            let controls = SolverControls {
                keep_snapshots: false,
                record_every: spec.grid.n_steps(),
                ..spec.solver
            };
            match solve_random_pde(&spec.params, &plan.consts, &path, &mesh, &controls) {
                Ok(tr) => PdeOutcome {
                    t_blow: tr.blowup.time(),
                    fault: None,
                },
                Err(e) => PdeOutcome {
                    t_blow: None,
                    fault: Some(e.to_string()),
                },
            }
        });
    let l_alpha = match (plan.alpha, plan.tail) {
        (Some(alpha), Some(tail)) => {
            let f = ExpFunctionalSpec::single(tail.rho1, tail.rho2, -l_alpha_drift(&plan.consts));
            cumulative_exp_functional(&path, &f).ok().map(|c| {
                let n = spec.grid.n_steps();
                (
                    l_alpha_path_sup(&c.values, &spec.grid, alpha, tail.threshold, n / 2),
                    l_alpha_path_sup(&c.values, &spec.grid, alpha, tail.threshold, n),
                )
            })
        }
        _ => None,
    };
    PathRecord {
        index,
        stopping,
        pde,
        l_alpha,
    }
}

/// Checks a spec without running it: parameters, grid, mesh and every
/// requested pipeline's applicability.
pub fn validate_spec(spec: &CampaignSpec) -> Result<()> {
    plan(spec).map(|_| ())
}

/// Runs a campaign and returns the per-path records with the report.
pub fn run_campaign_with_records(spec: &CampaignSpec) -> Result<(CampaignReport, Vec<PathRecord>)> {
    let plan = plan(spec)?;
    let gen = NoiseGenerator::new(spec.grid, spec.params.hurst, spec.params.coupling)?;
    let records = map_indexed(spec.n_paths, |i| run_path(spec, &plan, &gen, i));
    let gamma_oracle = match plan.gamma {
        Some(g) => Some(gamma_law_oracle(
            &g,
            spec.gamma_oracle_paths.unwrap_or(spec.n_paths),
            spec.master_seed ^ 0x6a09_e667_f3bc_c908,
        )?),
        None => None,
    };
    let report = build_report(spec, &plan, &records, gamma_oracle);
    Ok((report, records))
}

/// Runs a campaign on the current rayon pool.
pub fn run_campaign(spec: &CampaignSpec) -> Result<CampaignReport> {
    run_campaign_with_records(spec).map(|(r, _)| r)
}

/// Runs a campaign on a pool of `workers` threads.
pub fn run_campaign_workers(spec: &CampaignSpec, workers: Option<usize>) -> Result<CampaignReport> {
    with_workers(workers, || run_campaign(spec))?
}

fn outcomes(records: &[PathRecord], p: Pipeline) -> Vec<&StoppingOutcome> {
    records.iter().filter_map(|r| r.stopping.get(&p)).collect()
}

fn ordering_check(name: &str, records: &[PathRecord], lo: Pipeline, hi: Pipeline) -> CheckSummary {
    let (mut compared, mut violations) = (0, 0);
    for r in records {
        if let (Some(a), Some(b)) = (
            r.stopping.get(&lo).and_then(StoppingOutcome::estimate),
            r.stopping.get(&hi).and_then(StoppingOutcome::estimate),
        ) {
            compared += 1;
            if a.time_or_inf() > b.time_or_inf() {
                violations += 1;
            }
        }
    }
    CheckSummary {
        name: name.into(),
        compared,
        violations,
        passed: violations == 0,
        detail: format!("{} ≤ {} pathwise, no tolerance", lo.name(), hi.name()),
    }
}

fn build_report(
    spec: &CampaignSpec,
    plan: &Plan,
    records: &[PathRecord],
    gamma_oracle: Option<GammaLawOracle>,
) -> CampaignReport {
    let has = |p: Pipeline| spec.pipelines.contains(&p);
    let upper = upper_pipeline(&spec.params);
    let n = spec.n_paths;
    let stopping: Vec<StoppingSummary> = plan
        .stopping
        .iter()
        .map(|&p| aggregate(p, &outcomes(records, p)))
        .collect();
    let mut checks = Vec::new();
    let mut bounds = Vec::new();
    let mut notes = Vec::new();

    if plan.stopping.contains(&Pipeline::LowerStar) && plan.stopping.contains(&upper) {
        checks.push(ordering_check(
            "sandwich_lower_upper",
            records,
            Pipeline::LowerStar,
            upper,
        ));
    }
    if has(Pipeline::Prime) && has(Pipeline::DoubleStar) {
        checks.push(ordering_check(
            "prime_le_double_star",
            records,
            Pipeline::Prime,
            Pipeline::DoubleStar,
        ));
    }

    let pde = if has(Pipeline::PdeSandwich) {
        let mesh = spec.mesh.expect("checked in plan");
        let dx2 = mesh.dx() * mesh.dx();
        let scale = 5.0 * spec.grid.dt().max(dx2);
        let horizon = spec.solver.horizon.unwrap_or(spec.grid.t_max());
        let (mut blown, mut faults, mut missed, mut compared, mut violations) = (0, 0, 0, 0, 0);
        let mut times = Vec::new();
        for r in records {
            let Some(o) = &r.pde else { continue };
            if o.fault.is_some() {
                faults += 1;
                continue;
            }
            let lo = r.stopping.get(&Pipeline::LowerStar).and_then(StoppingOutcome::estimate);
            let hi = r.stopping.get(&upper).and_then(StoppingOutcome::estimate);
            match o.t_blow {
                Some(t) => {
                    blown += 1;
                    times.push(t);
                    if let (Some(lo), Some(hi)) = (lo, hi) {
                        compared += 1;
                        let d = scale * t;
                        if t < lo.time_or_inf() - d || t > hi.time_or_inf() + d {
                            violations += 1;
                        }
                    }
                }
                None => {
                    if let Some(t_hi) = hi.and_then(|h| h.time()) {
                        if t_hi * (1.0 + scale) < horizon {
                            missed += 1;
                        }
                    }
                }
            }
        }
        checks.push(CheckSummary {
            name: "pde_sandwich".into(),
            compared,
            violations,
            passed: violations == 0,
            detail: format!("t_blow ∈ [τ* − δ, {} + δ], δ = 5·max(dt, dx²)·t_blow", upper.name()),
        });
        Some(PdeSummary {
            n,
            blown_up: blown,
            blowup_fraction: blown as f64 / n as f64,
            faults,
            mean_t_blow: sample_stats(&times).map(|s| s.mean),
            missed,
        })
    } else {
        None
    };

    // empirical P(τ_upper ≤ T)
    let upper_outcomes = outcomes(records, upper);
    let hits_by = |t: f64| {
        upper_outcomes
            .iter()
            .filter(|o| o.estimate().and_then(|e| e.time()).is_some_and(|x| x <= t))
            .count() as u64
    };

    if let (true, Some(tail)) = (has(Pipeline::TailBounds), plan.tail) {
        let emp = prob_estimate(hits_by(plan.bound_horizon), n);
        let rows = [
            BoundRow::from_result(
                "concentration",
                "m_squared",
                tail_bound_concentration(&tail, ConcentrationVariant::MSquared),
            ),
            BoundRow::from_result(
                "concentration",
                "literal",
                tail_bound_concentration(&tail, ConcentrationVariant::Literal),
            ),
            BoundRow::from_result("markov", coupling_name(spec.params.coupling), tail_bound_markov(&tail)),
        ];
        let (mut compared, mut violations) = (0, 0);
        for b in &rows {
            if let Some(v) = b.value {
                compared += 1;
                if emp.p > v + 3.0 * emp.se {
                    violations += 1;
                }
            }
        }
        checks.push(CheckSummary {
            name: "upper_dominance".into(),
            compared,
            violations,
            passed: violations == 0,
            detail: format!(
                "empirical P({} ≤ {}) = {} ± {}",
                upper.name(),
                plan.bound_horizon,
                emp.p,
                emp.se
            ),
        });
        bounds.extend(rows);
    }

    if let Some(o) = &gamma_oracle {
        let emp = prob_estimate(hits_by(f64::INFINITY), n);
        bounds.push(BoundRow::from_result(
            "gamma_law",
            "printed_density",
            Ok(o.bounds.printed_density),
        ));
        bounds.push(BoundRow::from_result(
            "gamma_law",
            "derivation_literal",
            Ok(o.bounds.derivation_literal),
        ));
        let (compared, violations, detail) = match o.bounds.value(o.validated) {
            Some(v) => (
                1,
                u64::from(emp.p < v - 3.0 * emp.se),
                format!(
                    "oracle validated {:?}; empirical crossing {} ± {} vs bound {v}",
                    o.validated, emp.p, emp.se
                ),
            ),
            None => (0, 0, "oracle validated neither reading".into()),
        };
        checks.push(CheckSummary {
            name: "gamma_law_dominance".into(),
            compared,
            violations,
            passed: violations == 0 && o.validated != GammaVariant::Neither,
            detail,
        });
        notes.push(format!("gamma-law oracle validated: {:?}", o.validated));
    }

    let l_alpha = match (plan.alpha, plan.tail) {
        (Some(alpha), Some(tail)) => {
            let full: Vec<f64> = records.iter().filter_map(|r| r.l_alpha.map(|x| x.1)).collect();
            let half: Vec<f64> = records.iter().filter_map(|r| r.l_alpha.map(|x| x.0)).collect();
            let (m, s) = crate::prob::mean_se(&full);
            let (mh, _) = crate::prob::mean_se(&half);
            let l = m.max(1.0);
            let r = lower_bound_malliavin(alpha, l, tail.rho1, tail.rho2, spec.params.hurst, tail.threshold);
            let emp = prob_estimate(hits_by(f64::INFINITY), n);
            if let Ok(v) = r {
                checks.push(CheckSummary {
                    name: "malliavin_dominance".into(),
                    compared: 1,
                    violations: u64::from(emp.p < v - 3.0 * emp.se),
                    passed: emp.p >= v - 3.0 * emp.se,
                    detail: format!("empirical crossing {} ± {} vs bound {v}", emp.p, emp.se),
                });
            }
            bounds.push(BoundRow::from_result("malliavin", "printed", r));
            if beta_case(&spec.params) == BetaCase::StrictBeta {
                notes.push("L₂(α) uses the printed drift β(λ−γ+k²) with β = β₁ while its threshold is N".into());
            }
            Some(LAlphaSummary {
                alpha,
                value: l,
                se: s,
                value_half_horizon: mh.max(1.0),
            })
        }
        _ => None,
    };

    if spec.fault.is_some() {
        notes.push("fault injection active".into());
    }

    CampaignReport {
        version: crate::VERSION.into(),
        master_seed: spec.master_seed,
        n_paths: n,
        grid: spec.grid,
        hurst: spec.params.hurst,
        coupling: spec.params.coupling,
        pipelines: spec.pipelines.clone(),
        bound_horizon: plan.bound_horizon,
        stopping,
        pde,
        bounds,
        checks,
        gamma_oracle,
        l_alpha,
        notes,
    }
}

fn coupling_name(c: NoiseCoupling) -> &'static str {
    match c {
        NoiseCoupling::Independent => "independent",
        NoiseCoupling::VolterraDependent => "volterra_dependent",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::InitialData;
    use crate::stopping::{tau_lower_star, tau_upper_1};
    use std::f64::consts::PI;

    fn zero_noise_spec() -> CampaignSpec {
        CampaignSpec {
            params: SystemParams {
                beta1: 1.0,
                beta2: 1.0,
                gamma1: 1.0,
                gamma2: 1.0,
                k: [[0.0; 2]; 2],
                hurst: 0.7,
                coupling: NoiseCoupling::Independent,
                domain_length: PI,
                initial: InitialData::EigenMultiple { c1: 1.0, c2: 1.0 },
            },
            grid: TimeGrid::new(4.0, 400).unwrap(),
            mesh: None,
            solver: SolverControls::default(),
            n_paths: 1,
            master_seed: 7,
            pipelines: vec![Pipeline::LowerStar, Pipeline::Upper1],
            bound_horizon: None,
            alpha: None,
            gamma_oracle_paths: None,
            fault: None,
        }
    }

    #[test]
    fn degenerate_campaign_matches_stopping_module() {
        let spec = zero_noise_spec();
        let rep = run_campaign(&spec).unwrap();
        let consts = DerivedConstants::compute(&spec.params).unwrap();
        let zero = SamplePath::zero(spec.grid, 0.7, NoiseCoupling::Independent).unwrap();
        let lo = tau_lower_star(&zero, &consts).unwrap().time().unwrap();
        let hi = tau_upper_1(&zero, &consts).unwrap().time().unwrap();
        assert_eq!(rep.stopping_summary(Pipeline::LowerStar).unwrap().mean_time, Some(lo));
        assert_eq!(rep.stopping_summary(Pipeline::Upper1).unwrap().mean_time, Some(hi));
        assert!(rep.all_checks_pass());
    }

    #[test]
    fn deterministic_crossing_probability_is_exact() {
        // ρ = 0: τ₁* is the deterministic crossing of ∫e^{−as} ds
        let mut spec = zero_noise_spec();
        spec.n_paths = 16;
        spec.pipelines = vec![Pipeline::Upper1];
        let consts = DerivedConstants::compute(&spec.params).unwrap();
        let zero = SamplePath::zero(spec.grid, 0.7, NoiseCoupling::Independent).unwrap();
        let crosses = tau_upper_1(&zero, &consts).unwrap().crossed();
        let rep = run_campaign(&spec).unwrap();
        let p = rep.stopping_summary(Pipeline::Upper1).unwrap().p_crossed;
        assert_eq!(p, if crosses { 1.0 } else { 0.0 });
    }

    #[test]
    fn worker_count_does_not_change_report() {
        let mut spec = zero_noise_spec();
        spec.params.k = [[0.3, 0.4], [0.3, 0.4]];
        spec.params.gamma1 = 1.045;
        spec.params.gamma2 = 1.045;
        spec.n_paths = 64;
        let a = run_campaign_workers(&spec, Some(1)).unwrap().to_json().unwrap();
        let b = run_campaign_workers(&spec, Some(4)).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_examples() {
        let crossed = |t: f64| {
            StoppingOutcome::Ok(StoppingEstimate {
                kind: crate::stopping::CrossingKind::Crossed {
                    t_hat: t,
                    lower: 0,
                    upper: 1,
                },
                threshold: 1.0,
                integral_at_horizon: 2.0,
                saturated: false,
            })
        };
        let censored = StoppingOutcome::Ok(StoppingEstimate {
            kind: crate::stopping::CrossingKind::Censored { horizon: 3.0 },
            threshold: 1.0,
            integral_at_horizon: 0.5,
            saturated: false,
        });
        let all: Vec<StoppingOutcome> = (0..5).map(|_| crossed(2.0)).collect();
        let s = aggregate(Pipeline::Upper1, &all.iter().collect::<Vec<_>>());
        assert_eq!((s.mean_time, s.sd_time), (Some(2.0), Some(0.0)));
        let half: Vec<StoppingOutcome> = (0..8)
            .map(|i| if i % 2 == 0 { crossed(1.0) } else { censored.clone() })
            .collect();
        let s = aggregate(Pipeline::Upper1, &half.iter().collect::<Vec<_>>());
        assert_eq!(s.p_crossed, 0.5);
        assert!((s.se - 0.5 / 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.censoring_rate, 0.5);
        assert!((s.ci.1 - s.ci.0 - 2.0 * CI_Z * s.se).abs() < 1e-15);
        let st = sample_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((st.mean, st.sd), (2.0, 1.0));
    }

    #[test]
    fn config_errors_are_caught_before_launch() {
        let mut spec = zero_noise_spec();
        spec.n_paths = 0;
        assert!(run_campaign(&spec).is_err());
        let mut spec = zero_noise_spec();
        spec.pipelines = vec![Pipeline::Upper2];
        assert!(run_campaign(&spec).is_err());
        let mut spec = zero_noise_spec();
        spec.pipelines = vec![Pipeline::PdeSandwich];
        assert!(run_campaign(&spec).is_err());
    }

    #[test]
    fn fault_injection_breaks_the_sandwich() {
        let mut spec = zero_noise_spec();
        spec.params.k = [[0.3, 0.8], [0.3, 0.8]];
        spec.params.gamma1 = 1.045;
        spec.params.gamma2 = 1.045;
        spec.params.initial = InitialData::EigenMultiple { c1: 0.3, c2: 0.3 };
        spec.grid = TimeGrid::new(20.0, 1000).unwrap();
        spec.n_paths = 200;
        assert!(run_campaign(&spec).unwrap().all_checks_pass());
        spec.fault = Some(FaultInjection::NegateRho2InUpper);
        let rep = run_campaign(&spec).unwrap();
        assert!(rep.check("sandwich_lower_upper").unwrap().violations > 0);
    }

    #[test]
    fn path_records_round_trip_through_csv() {
        let mut spec = zero_noise_spec();
        spec.n_paths = 3;
        let (_, recs) = run_campaign_with_records(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("paths.csv");
        write_path_records(&recs, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("index,pipeline,crossed,time,saturated,error"));
        assert_eq!(text.lines().count(), 1 + 3 * 2);
    }
}
