//! Experiment configuration, check evaluation, report files and sweeps.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barenblatt::{reference_functionals, BarenblattReference};
use crate::error::{Error, Result};
use crate::functionals::{diagnostics, FunctionalRecord};
use crate::gn::{self, DeficitTolerances};
use crate::grid::{build_grid, project_initial, stretch_for_first_width, DensityState};
use crate::matching::{DelayReport, DelayTolerances};
use crate::params::{ModelParams, THRESHOLD_EPS};
use crate::solver::{Solver, SolverConfig, Trajectory};
use crate::timeseries::{centered_derivative, second_difference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Theorem1,
    Theorem2,
    Theorem3,
    Theorem3bis,
    PropT4,
    Gn,
    Deficit,
}

impl Check {
    pub const ALL: [Check; 7] = [
        Check::Theorem1,
        Check::Theorem2,
        Check::Theorem3,
        Check::Theorem3bis,
        Check::PropT4,
        Check::Gn,
        Check::Deficit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Theorem1 => "theorem1",
            Check::Theorem2 => "theorem2",
            Check::Theorem3 => "theorem3",
            Check::Theorem3bis => "theorem3bis",
            Check::PropT4 => "prop_t4",
            Check::Gn => "gn",
            Check::Deficit => "deficit",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown check {name:?}; expected one of {}", Self::names())))
    }

    fn names() -> String {
        Self::ALL.map(Check::name).join(", ")
    }

    /// `Err` names the hypothesis on `(d, p)` the check needs and `params` violates.
    pub fn admits(self, params: ModelParams) -> std::result::Result<(), String> {
        let p = params.p;
        let d = params.dim();
        let sobolev = 1.0 - 1.0 / d;
        let at_least_sobolev = params.d == 1 || p >= sobolev - THRESHOLD_EPS;
        let finite = p > 1.0 || p > d / (d + 2.0);
        let fail = |msg: String| Err(msg);
        match self {
            Check::Theorem1 if !at_least_sobolev => fail(format!("theorem1 needs p >= 1 - 1/d = {sobolev}")),
            Check::Theorem2 if p < 1.0 - 2.0 / d - THRESHOLD_EPS || !finite => {
                fail(format!("theorem2 needs p >= 1 - 2/d and finite second moments (p > d/(d+2) = {})", d / (d + 2.0)))
            }
            Check::Theorem3 | Check::Theorem3bis if !at_least_sobolev => {
                fail(format!("{} needs p >= 1 - 1/d = {sobolev}", self.name()))
            }
            Check::PropT4 | Check::Deficit if !(p < 1.0 && at_least_sobolev) => {
                fail(format!("{} needs fast diffusion in the range 1 - 1/d = {sobolev} <= p < 1", self.name()))
            }
            Check::Gn if p <= 0.5 => fail("gn needs p > 1/2 (q = 1/(2p-1) must be positive)".into()),
            Check::Gn if !at_least_sobolev => fail(format!("gn needs p >= 1 - 1/d = {sobolev} (q <= d/(d-2))")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either the keyword `"all"` (every check compatible with `(d, p)`) or an
/// explicit list, each entry of which must be compatible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CheckSelection {
    Keyword(String),
    List(Vec<String>),
}

impl Default for CheckSelection {
    fn default() -> Self {
        CheckSelection::List(Vec::new())
    }
}

impl CheckSelection {
    pub fn resolve(&self, params: ModelParams) -> Result<Vec<Check>> {
        match self {
            CheckSelection::Keyword(k) if k == "all" => {
                Ok(Check::ALL.into_iter().filter(|c| c.admits(params).is_ok()).collect())
            }
            CheckSelection::Keyword(k) => Self::List(vec![k.clone()]).resolve(params),
            CheckSelection::List(names) => {
                let mut out = BTreeSet::new();
                for name in names {
                    let check = Check::parse(name)?;
                    check.admits(params).map_err(|why| {
                        Error::Regime(format!("check {check} is incompatible with d = {}, p = {}: {why}", params.d, params.p))
                    })?;
                    out.insert(check);
                }
                Ok(out.into_iter().collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    /// `U*(t0, ·)`; the run's clock starts at 0, so `τ ≡ t0`.
    Barenblatt { t0: f64 },
    /// `exp(-r² / (2 width²))`, normalized to unit mass.
    Gaussian { width: f64 },
    /// `(1 - tanh((r - radius) / smoothing)) / 2`, normalized to unit mass.
    Indicator { radius: f64, smoothing: f64 },
    /// Piecewise-linear interpolation of `(r, u)` samples, zero beyond the
    /// last radius, normalized to unit mass.
    Table { r: Vec<f64>, u: Vec<f64> },
    /// `Σ wᵢ U*(t0ᵢ, ·)`, normalized to unit mass.
    Mixture { t0: Vec<f64>, weights: Vec<f64> },
}

impl InitialDatum {
    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("initial.{name} must be positive, got {v}")))
            }
        };
        match self {
            InitialDatum::Barenblatt { t0 } => positive("t0", *t0),
            InitialDatum::Gaussian { width } => positive("width", *width),
            InitialDatum::Indicator { radius, smoothing } => {
                positive("radius", *radius)?;
                positive("smoothing", *smoothing)
            }
            InitialDatum::Table { r, u } => {
                if r.len() != u.len() || r.len() < 2 {
                    return Err(Error::Config(format!(
                        "initial table needs matching r and u arrays of length >= 2, got {} and {}",
                        r.len(),
                        u.len()
                    )));
                }
                if r[0] < 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Config("initial.r must be nonnegative and strictly increasing".into()));
                }
                if u.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Config("initial.u must be finite and nonnegative".into()));
                }
                Ok(())
            }
            InitialDatum::Mixture { t0, weights } => {
                if t0.is_empty() || t0.len() != weights.len() {
                    return Err(Error::Config(format!(
                        "initial mixture needs matching nonempty t0 and weights arrays, got {} and {}",
                        t0.len(),
                        weights.len()
                    )));
                }
                for (&t, &w) in t0.iter().zip(weights) {
                    positive("t0", t)?;
                    positive("weights", w)?;
                }
                Ok(())
            }
        }
    }

    fn sample(&self, reference: &BarenblattReference, grid: Arc<crate::grid::RadialGrid>) -> Result<DensityState> {
        match self {
            InitialDatum::Barenblatt { t0 } => {
                let family = reference.family();
                let u = grid.centers.iter().map(|&r| family.self_similar(*t0, r)).collect::<Result<Vec<_>>>()?;
                DensityState::new(u, 0.0, grid)
            }
            InitialDatum::Gaussian { width } => {
                let w2 = 2.0 * width * width;
                project_initial(|r| (-r * r / w2).exp(), grid, true)
            }
            InitialDatum::Indicator { radius, smoothing } => {
                project_initial(|r| 0.5 * (1.0 - ((r - radius) / smoothing).tanh()), grid, true)
            }
            InitialDatum::Table { r, u } => project_initial(|x| interpolate(r, u, x), grid, true),
            InitialDatum::Mixture { t0, weights } => {
                let family = reference.family();
                // t0 > 0 was validated, so NaN never reaches the projection
                let mix = |r: f64| -> f64 {
                    t0.iter().zip(weights).map(|(&t, &w)| w * family.self_similar(t, r).unwrap_or(f64::NAN)).sum()
                };
                project_initial(mix, grid, true)
            }
        }
    }
}

fn interpolate(r: &[f64], u: &[f64], x: f64) -> f64 {
    if x <= r[0] {
        return u[0];
    }
    if x > r[r.len() - 1] {
        return 0.0;
    }
    let k = r.partition_point(|&ri| ri < x).clamp(1, r.len() - 1);
    let s = (x - r[k - 1]) / (r[k] - r[k - 1]);
    u[k - 1] + s * (u[k] - u[k - 1])
}

/// Geometric radial grid. Give either `stretch` or `first_width` (neither means uniform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub r_max: f64,
    pub n: usize,
    #[serde(default)]
    pub stretch: Option<f64>,
    #[serde(default)]
    pub first_width: Option<f64>,
}

impl GridSpec {
    pub fn resolved_stretch(&self) -> Result<f64> {
        match (self.stretch, self.first_width) {
            (Some(_), Some(_)) => Err(Error::Config("grid: give stretch or first_width, not both".into())),
            (Some(s), None) => Ok(s),
            (None, Some(h)) => stretch_for_first_width(self.r_max, self.n, h),
            (None, None) => Ok(1.0),
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_perturbations() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub d: usize,
    pub p: f64,
    pub initial: InitialDatum,
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    pub t_end: f64,
    /// Overrides `solver.record_every`.
    #[serde(default)]
    pub record_every: Option<f64>,
    #[serde(default)]
    pub checks: CheckSelection,
    /// Seed of the perturbation generator used by the `gn` check.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_perturbations")]
    pub perturbations: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates; JSON errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.d, self.p)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut s = self.solver;
        if let Some(every) = self.record_every {
            s.record_every = every;
        }
        s
    }

    pub fn checks(&self) -> Result<Vec<Check>> {
        self.checks.resolve(self.params()?)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        params.exponents()?;
        self.initial.validate()?;
        self.solver_config().validate()?;
        let stretch = self.grid.resolved_stretch()?;
        build_grid(self.d, self.grid.r_max, self.grid.n, stretch)?;
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        let checks = self.checks()?;
        let needs_moments = checks.iter().any(|c| *c != Check::Theorem1 && *c != Check::Gn);
        if needs_moments && !params.exponents()?.moments_finite {
            return Err(Error::MomentsDiverge(format!(
                "second moments of B* diverge for d = {}, p = {} (needs p > d/(d+2))",
                self.d, self.p
            )));
        }
        if checks.contains(&Check::Gn) && self.perturbations == 0 {
            return Err(Error::Config("gn check needs at least one perturbation".into()));
        }
        Ok(())
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("d{}_p{}", self.d, self.p))
    }
}

/// Default tolerances; every entry is multiplied by `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub scale: f64,
    /// `(1-p) F'' ≤ tol |F|` and `(1-p) ΔH ≥ -tol |H|`.
    pub monotone_rel: f64,
    /// `|J(T) - J*| / J*`.
    pub j_limit_rel: f64,
    /// `H ≤ H*` (or `≥`) up to `tol H*`.
    pub renyi_rel: f64,
    pub q_lower: f64,
    pub theta_rate_rel: f64,
    pub entropy_rate_rel: f64,
    pub g_rate_rel: f64,
    /// `τ ≡ t0` for Barenblatt data.
    pub barenblatt_delay_abs: f64,
    pub delay: DelayTolerances,
    pub deficit: DeficitTolerances,
    pub gn_dual_rel: f64,
    pub gn_slope_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            scale: 1.0,
            monotone_rel: 1e-3,
            j_limit_rel: 0.05,
            renyi_rel: 1e-3,
            q_lower: 1e-6,
            theta_rate_rel: 0.01,
            entropy_rate_rel: 0.02,
            g_rate_rel: 0.01,
            barenblatt_delay_abs: 1e-3,
            delay: DelayTolerances::default(),
            deficit: DeficitTolerances::default(),
            gn_dual_rel: 1e-3,
            gn_slope_band: 0.3,
        }
    }
}

impl Tolerances {
    pub fn scaled(scale: f64) -> Self {
        let base = Self::default();
        Self {
            scale,
            monotone_rel: base.monotone_rel * scale,
            j_limit_rel: base.j_limit_rel * scale,
            renyi_rel: base.renyi_rel * scale,
            q_lower: base.q_lower * scale,
            theta_rate_rel: base.theta_rate_rel * scale,
            entropy_rate_rel: base.entropy_rate_rel * scale,
            g_rate_rel: base.g_rate_rel * scale,
            barenblatt_delay_abs: base.barenblatt_delay_abs * scale,
            delay: base.delay.scaled(scale),
            deficit: DeficitTolerances {
                bound_rel: base.deficit.bound_rel * scale,
                identity_rel: base.deficit.identity_rel * scale,
            },
            gn_dual_rel: base.gn_dual_rel * scale,
            gn_slope_band: base.gn_slope_band * scale,
        }
    }
}

/// One inequality with its measured value, tolerance and slack (`≥ 0` passes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub slack: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Criterion {
    pub fn new(name: &str, measured: f64, tolerance: f64, slack: f64) -> Self {
        Self { name: name.into(), measured, tolerance, slack, passed: slack >= 0.0, note: None }
    }

    /// `measured ≤ tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured, tolerance, tolerance - measured)
    }

    /// `measured ≥ -tolerance`, where `measured` is the worst signed margin.
    pub fn at_least(name: &str, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured, tolerance, measured + tolerance)
    }

    /// Same as [`Criterion::at_least`] from a precomputed `slack = margin + tolerance`.
    fn from_slack(name: &str, slack: f64, tolerance: f64) -> Self {
        Self::new(name, slack - tolerance, tolerance, slack)
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub check: Check,
    pub passed: bool,
    pub criteria: Vec<Criterion>,
    /// Extra measurements that are reported but not asserted.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl CheckVerdict {
    fn new(check: Check, criteria: Vec<Criterion>) -> Self {
        let passed = criteria.iter().all(|c| c.passed);
        Self { check, passed, criteria, details: serde_json::Map::new() }
    }

    fn detail(mut self, key: &str, value: impl Serialize) -> Self {
        self.details.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub d: usize,
    pub p: f64,
    pub passed: bool,
    pub tolerance_scale: f64,
    pub steps: usize,
    pub records: usize,
    pub clipped_mass: f64,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckVerdict>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub params: ModelParams,
    pub reference: BarenblattReference,
    pub trajectory: Trajectory<FunctionalRecord>,
    pub report: RunReport,
}

/// Simulates the configured evolution and records diagnostics.
pub fn simulate(
    config: &ExperimentConfig,
) -> Result<(ModelParams, BarenblattReference, Trajectory<FunctionalRecord>)> {
    config.validate()?;
    let params = config.params()?;
    let reference = reference_functionals(params)?;
    let grid = Arc::new(build_grid(config.d, config.grid.r_max, config.grid.n, config.grid.resolved_stretch()?)?);
    let mut state = config.initial.sample(&reference, grid)?;
    let mut solver = Solver::new(params, config.solver_config(), &state)?;
    let usable = reference.theta_star.is_some().then_some(&reference);
    let trajectory = solver.evolve(&mut state, config.t_end, |s, dt| diagnostics(s, params, usable, dt))?;
    Ok((params, reference, trajectory))
}

/// Runs the simulation and evaluates every requested check.
pub fn execute(config: &ExperimentConfig, tol: &Tolerances) -> Result<RunOutput> {
    let (params, reference, trajectory) = simulate(config)?;
    let checks = config.checks()?;
    let records = &trajectory.records;
    let mut warnings = trajectory.warnings.clone();
    if records.iter().any(|r| r.low_confidence) {
        warnings.push("second moment still growing near R_max: moment-derived fields are low-confidence".into());
    }
    if records.iter().any(|r| r.remainder_flagged) {
        warnings.push("one-sided pressure stencils carry more than 10% of R[u]".into());
    }
    let verdicts = checks
        .iter()
        .map(|&check| evaluate(check, config, params, &reference, records, tol))
        .collect::<Result<Vec<_>>>()?;
    let report = RunReport {
        name: config.display_name(),
        d: config.d,
        p: config.p,
        passed: verdicts.iter().all(|v| v.passed),
        tolerance_scale: tol.scale,
        steps: trajectory.steps,
        records: records.len(),
        clipped_mass: trajectory.clipped_mass,
        warnings,
        checks: verdicts,
    };
    Ok(RunOutput { config: config.clone(), params, reference, trajectory, report })
}

fn min_over<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().fold(f64::INFINITY, f64::min)
}

fn max_over<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn triples(records: &[FunctionalRecord]) -> impl Iterator<Item = &[FunctionalRecord]> {
    records.windows(3)
}

/// Largest relative mismatch of a rate identity `f' = g` at interior records.
pub fn rate_mismatch(
    records: &[FunctionalRecord],
    f: impl Fn(&FunctionalRecord) -> f64,
    g: impl Fn(&FunctionalRecord) -> f64,
) -> f64 {
    max_over(triples(records).map(|w| {
        let rate = centered_derivative((w[0].t, f(&w[0])), (w[1].t, f(&w[1])), (w[2].t, f(&w[2])));
        let target = g(&w[1]);
        (rate - target).abs() / target.abs()
    }))
}

fn evaluate(
    check: Check,
    config: &ExperimentConfig,
    params: ModelParams,
    reference: &BarenblattReference,
    records: &[FunctionalRecord],
    tol: &Tolerances,
) -> Result<CheckVerdict> {
    let exps = params.exponents()?;
    let p = params.p;
    let one_minus_p = 1.0 - p;
    let last = &records[records.len() - 1];
    Ok(match check {
        Check::Theorem1 => {
            // F is concave in both regimes: -F'' = σ(1-p)² E^(σ-2) R and σR ≥ 0.
            let concavity = max_over(triples(records).map(|w| {
                let f2 = second_difference((w[0].t, w[0].f_power), (w[1].t, w[1].f_power), (w[2].t, w[2].f_power));
                one_minus_p.abs() * f2 / w[1].f_power.abs()
            }));
            let increase = min_over(records.windows(2).map(|w| (w[1].f_power - w[0].f_power) / w[1].f_power.abs()));
            let mut criteria = vec![
                Criterion::at_most("|1-p| F'' / |F|", concavity, tol.monotone_rel),
                Criterion::new("F strictly increasing (min relative increment)", increase, 0.0, increase)
                    .with_note("passes only if every increment is positive"),
                Criterion::at_most(
                    "E' = (1-p) I (max rel. error)",
                    rate_mismatch(records, |r| r.entropy, |r| one_minus_p * r.fisher),
                    tol.entropy_rate_rel,
                ),
            ];
            if let Some(j_star) = reference.j_star {
                // J = F' / ((1-p)σ) decreases toward J* from above.
                let monotone = min_over(records.windows(2).map(|w| (w[0].j_scale - w[1].j_scale) / j_star));
                let side = min_over(records.iter().map(|r| (r.j_scale - j_star) / j_star));
                criteria.push(Criterion::at_least("J nonincreasing (min relative decrement)", monotone, tol.monotone_rel));
                criteria.push(Criterion::at_least("(J - J*) / J*", side, tol.monotone_rel));
                criteria.push(Criterion::at_most("|J(T) - J*| / J*", (last.j_scale - j_star).abs() / j_star, tol.j_limit_rel));
            }
            let slope = one_minus_p * exps.sigma * reference.j_star.unwrap_or(f64::NAN);
            CheckVerdict::new(check, criteria).detail("asymptotic_slope_of_F", slope)
        }
        Check::Theorem2 => {
            let h_star = reference.h_star()?;
            let monotone =
                min_over(records.windows(2).map(|w| one_minus_p * (w[1].h_renyi - w[0].h_renyi) / w[1].h_renyi.abs()));
            let dir = if p < 1.0 { 1.0 } else { -1.0 };
            let pri = max_over(records.iter().map(|r| dir * (r.h_renyi - h_star) / h_star));
            let q_min = min_over(records.iter().map(|r| r.q_ratio));
            let g_convexity = min_over(triples(records).map(|w| {
                let g2 = second_difference((w[0].t, w[0].g_power), (w[1].t, w[1].g_power), (w[2].t, w[2].g_power));
                one_minus_p.signum() * g2 / w[1].g_power.abs()
            }));
            let criteria = vec![
                Criterion::at_least("(1-p) dH / |H|", monotone, tol.monotone_rel),
                Criterion::at_most(if p < 1.0 { "(H - H*) / H*" } else { "(H* - H) / H*" }, pri, tol.renyi_rel),
                Criterion::new("q >= 1 - tol (min q)", q_min, tol.q_lower, q_min - (1.0 - tol.q_lower)),
                Criterion::at_least("sign(1-p) G'' / |G|", g_convexity, tol.monotone_rel),
                Criterion::at_most(
                    "Theta' = 2E (max rel. error)",
                    rate_mismatch(records, |r| r.theta, |r| 2.0 * r.entropy),
                    tol.theta_rate_rel,
                ),
                Criterion::at_most(
                    "G' = mu H (max rel. error)",
                    rate_mismatch(records, |r| r.g_power, |r| exps.mu * r.h_renyi),
                    tol.g_rate_rel,
                ),
            ];
            CheckVerdict::new(check, criteria).detail("h_star", h_star)
        }
        Check::Theorem3 => {
            let report = DelayReport::build(records, params, reference, tol.delay)?;
            let mut criteria = vec![Criterion::from_slack(
                if p < 1.0 { "tau nonincreasing (worst step)" } else { "tau nondecreasing (worst step)" },
                report.monotone_slack,
                report.monotone_tol,
            )];
            if let InitialDatum::Barenblatt { t0 } = config.initial {
                let dev = max_over(report.tau_series.iter().map(|(_, tau)| (tau - t0).abs()));
                criteria.push(Criterion::at_most("|tau - t0| for Barenblatt data", dev, tol.barenblatt_delay_abs));
            }
            let (first, final_tau) = (report.tau_series[0].1, report.tau_series[report.tau_series.len() - 1].1);
            CheckVerdict::new(check, criteria).detail("tau_initial", first).detail("tau_final", final_tau)
        }
        Check::Theorem3bis => {
            let report = DelayReport::build(records, params, reference, tol.delay)?;
            let lb = report.lower_bound;
            let mut criterion =
                Criterion::new("|tau(T) - tau(0)| >= bound", report.measured_change, lb.bound, report.thm3bis_slack);
            if lb.bound > 0.0 {
                // strict away from the Barenblatt case
                criterion.passed = report.thm3bis_slack > 0.0;
            }
            CheckVerdict::new(check, vec![criterion])
                .detail("bound", lb.bound)
                .detail("quadratic_model_bound", lb.quadratic_bound)
                .detail("quadratic_model_holds", report.measured_change >= lb.quadratic_bound)
                .detail("t_star", lb.t_star)
                .detail("horizon", last.t - records[0].t)
        }
        Check::PropT4 => {
            let report = DelayReport::build(records, params, reference, tol.delay)?;
            let (Some(env), Some(up)) = (report.envelope_slack, report.upper_slack) else {
                return Err(Error::Regime("prop_t4 needs fast diffusion with p >= 1 - 1/d".into()));
            };
            let tau0 = report.tau_series[0].1;
            let criteria = vec![
                Criterion::from_slack("q_bar - q (worst)", env, tol.delay.envelope_abs),
                Criterion::from_slack("tau bound - tau (worst)", up, tol.delay.upper_rel * tau0),
            ];
            let last_bound = report.upper_bound_series.last().map(|b| b.1);
            CheckVerdict::new(check, criteria).detail("final_upper_bound", last_bound)
        }
        Check::Gn => {
            let constant = gn::gn_optimal_constant(reference)?;
            let extremality = gn::extremality_test(reference, config.perturbations, config.seed)?;
            let slope_dev = (extremality.slope_min - 2.0).abs().max((extremality.slope_max - 2.0).abs());
            let criteria = vec![
                Criterion::at_most("C_GN dual-path relative gap", constant.relative_gap, tol.gn_dual_rel),
                Criterion::at_least("perturbed quotient gap (min)", extremality.min_gap, extremality.tolerance),
                Criterion::at_most("|gap slope - 2| (log-log in epsilon)", slope_dev, tol.gn_slope_band),
            ];
            CheckVerdict::new(check, criteria)
                .detail("c_gn", constant.from_entropy_production)
                .detail("c_gn_quotient", constant.from_quotient)
                .detail("c_gn_asymptote_form", reference.c_gn_asymptote_form)
                .detail("c_gn_prefactor_form", reference.c_gn_prefactor_form)
                .detail("theta", constant.params.theta)
                .detail("q", constant.params.q)
                .detail("seed", extremality.seed)
                .detail("perturbations", extremality.perturbations.len())
                .detail("slope_min", extremality.slope_min)
                .detail("slope_max", extremality.slope_max)
        }
        Check::Deficit => {
            let report = gn::deficit_identity_check(records, params, reference, tol.deficit)?;
            let criteria = vec![
                Criterion::from_slack("P increment (worst)", report.monotone_slack, report.tolerance),
                Criterion::from_slack("J(0) - J* - P (worst)", report.bound_slack, report.tolerance),
                Criterion::at_most(
                    "-F'' = sigma (1-p)^2 E^(sigma-2) R (max rel. error)",
                    report.identity_max_rel_error,
                    report.identity_tolerance,
                ),
            ];
            CheckVerdict::new(check, criteria)
                .detail("recovered_fraction", report.recovered_fraction)
                .detail("final_deficit", report.final_deficit)
                .detail("final_deficit_prefactor_form", report.final_deficit_prefactor_form)
                .detail("unweighted_partial_final", report.partial_unweighted.last().map(|x| x.1))
                .detail("low_confidence", report.low_confidence)
        }
    })
}

pub const TRAJECTORY_COLUMNS: [&str; 15] =
    ["t", "dt", "mass", "theta", "E", "I", "F", "G", "H", "J", "q", "s", "tau", "rel_entropy", "R"];

/// 17 significant digits, so values round-trip exactly; missing values are empty.
fn number(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.16e}"),
        None => String::new(),
    }
}

pub fn trajectory_csv(records: &[FunctionalRecord]) -> String {
    let mut out = TRAJECTORY_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let row = [
            Some(r.t),
            Some(r.dt),
            Some(r.mass),
            Some(r.theta),
            Some(r.entropy),
            Some(r.fisher),
            Some(r.f_power),
            Some(r.g_power),
            Some(r.h_renyi),
            Some(r.j_scale),
            Some(r.q_ratio),
            r.s_match,
            r.tau,
            r.rel_entropy,
            Some(r.remainder),
        ];
        out.push_str(&row.map(number).join(","));
        out.push('\n');
    }
    out
}

pub fn summary_text(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run {} (d = {}, p = {}): {}", report.name, report.d, report.p, verdict(report.passed));
    let _ = writeln!(s, "steps {}, records {}, clipped mass {:e}", report.steps, report.records, report.clipped_mass);
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    for v in &report.checks {
        let _ = writeln!(s, "[{}] {}", verdict(v.passed), v.check);
        for c in &v.criteria {
            let _ = writeln!(
                s,
                "    [{}] {}: measured {:.6e}, tolerance {:.3e}, slack {:.6e}",
                verdict(c.passed),
                c.name,
                c.measured,
                c.tolerance,
                c.slack
            );
        }
    }
    s
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Writes `trajectory.csv`, `report.json` and `summary.txt` into `dir`.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trajectory.csv"), trajectory_csv(&output.trajectory.records))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&output.report)? + "\n")?;
    fs::write(dir.join("summary.txt"), summary_text(&output.report))?;
    Ok(())
}

/// Outcome of one sweep entry; failures are isolated per config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub source: PathBuf,
    pub name: String,
    pub output_dir: PathBuf,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub passed: bool,
    pub runs: Vec<SweepEntry>,
}

/// Config files of a sweep: `*.json` in a directory (sorted), or a text file
/// listing one path per line (relative to the list; `#` starts a comment).
pub fn sweep_sources(target: &Path) -> Result<Vec<PathBuf>> {
    if target.is_dir() {
        let mut out: Vec<PathBuf> = fs::read_dir(target)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        out.sort();
        return Ok(out);
    }
    let text = fs::read_to_string(target)
        .map_err(|e| Error::Config(format!("cannot read sweep list {}: {e}", target.display())))?;
    let base = target.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

fn run_directory(config: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    match (root, &config.output_dir) {
        (Some(root), _) => root.join(config.display_name()),
        (None, Some(dir)) => dir.clone(),
        (None, None) => Path::new("out").join(config.display_name()),
    }
}

/// Runs every config with at most `parallel` concurrent runs. Results keep
/// the input order, so the aggregate is independent of scheduling.
pub fn sweep(sources: &[PathBuf], out: Option<&Path>, parallel: usize, tol: &Tolerances) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<SweepEntry> = pool.install(|| {
        sources
            .par_iter()
            .map(|source| {
                let stem = source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let mut config = match ExperimentConfig::load(source) {
                    Ok(c) => c,
                    Err(e) => {
                        return SweepEntry {
                            source: source.clone(),
                            name: stem,
                            output_dir: PathBuf::new(),
                            passed: false,
                            error: Some(e.to_string()),
                            report: None,
                        }
                    }
                };
                if config.name.is_none() {
                    config.name = Some(stem);
                }
                let dir = run_directory(&config, out);
                let result = execute(&config, tol).and_then(|o| write_outputs(&o, &dir).map(|_| o.report));
                match result {
                    Ok(report) => SweepEntry {
                        source: source.clone(),
                        name: config.display_name(),
                        output_dir: dir,
                        passed: report.passed,
                        error: None,
                        report: Some(report),
                    },
                    Err(e) => SweepEntry {
                        source: source.clone(),
                        name: config.display_name(),
                        output_dir: dir,
                        passed: false,
                        error: Some(e.to_string()),
                        report: None,
                    },
                }
            })
            .collect()
    });
    Ok(SweepReport { passed: runs.iter().all(|r| r.passed), runs })
}

/// Verdict table: one row per run, one column per check.
pub fn sweep_matrix(report: &SweepReport) -> String {
    let mut s = format!("{:<28} {:>3} {:>8}", "run", "d", "p");
    for c in Check::ALL {
        let _ = write!(s, " {:>11}", c.name());
    }
    s.push('\n');
    for run in &report.runs {
        match &run.report {
            Some(r) => {
                let _ = write!(s, "{:<28} {:>3} {:>8.4}", run.name, r.d, r.p);
                for c in Check::ALL {
                    let cell = r.checks.iter().find(|v| v.check == c).map_or("-", |v| verdict(v.passed));
                    let _ = write!(s, " {cell:>11}");
                }
                s.push('\n');
            }
            None => {
                let _ = writeln!(s, "{:<28} error: {}", run.name, run.error.as_deref().unwrap_or("unknown"));
            }
        }
    }
    s
}

pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep_report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(dir.join("sweep_matrix.txt"), sweep_matrix(report))?;
    Ok(())
}
