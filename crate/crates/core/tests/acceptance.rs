//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Trajectories come from the configs shipped in `configs/`. Every quantity
//! asserted here is recomputed from the recorded functionals or from the
//! library primitives, not read back from the check verdicts.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use rayon::prelude::*;

use nldiff::barenblatt::Barenblatt;
use nldiff::experiment::{self, ExperimentConfig, InitialDatum};
use nldiff::gn::{self, DeficitTolerances};
use nldiff::matching::{DelayReport, DelayTolerances};
use nldiff::{build_grid, reference_functionals, BarenblattReference, DensityState, FunctionalRecord};
use nldiff::{ModelParams, Solver, SolverConfig};

struct Run {
    config: ExperimentConfig,
    params: ModelParams,
    reference: BarenblattReference,
    records: Vec<FunctionalRecord>,
}

impl Run {
    fn name(&self) -> String {
        self.config.display_name()
    }

    fn fast(&self) -> bool {
        self.params.p < 1.0
    }
}

struct Outcome {
    passed: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { passed: true, lines: Vec::new() }
    }

    /// Records `measured ≤ tolerance`.
    fn at_most(&mut self, what: impl AsRef<str>, measured: f64, tolerance: f64) {
        self.push(what.as_ref(), measured <= tolerance, format!("{measured:.6e} <= {tolerance:.6e}"));
    }

    /// Records `measured ≥ threshold`.
    fn at_least(&mut self, what: impl AsRef<str>, measured: f64, threshold: f64) {
        self.push(what.as_ref(), measured >= threshold, format!("{measured:.6e} >= {threshold:.6e}"));
    }

    fn push(&mut self, what: &str, ok: bool, detail: String) {
        self.passed &= ok;
        self.lines.push(format!("      {} {what}: {detail}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(format!("{name}.json"))).expect("shipped config parses")
}

fn simulate(config: ExperimentConfig) -> Run {
    let (params, reference, trajectory) = experiment::simulate(&config).expect("simulation succeeds");
    Run { config, params, reference, records: trajectory.records }
}

fn corpus() -> Vec<Run> {
    let mut names: Vec<String> = std::fs::read_dir(configs_dir())
        .expect("configs directory")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names.into_par_iter().map(|n| simulate(load(&n))).collect()
}

fn find<'a>(runs: &'a [Run], name: &str) -> &'a Run {
    runs.iter().find(|r| r.name() == name).unwrap_or_else(|| panic!("run {name} missing from the corpus"))
}

/// Derivative at the middle of three samples from the interpolating parabola.
fn first_derivative(t: [f64; 3], f: [f64; 3]) -> f64 {
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    (-h2 / (h1 * (h1 + h2))) * f[0] + ((h2 - h1) / (h1 * h2)) * f[1] + (h1 / (h2 * (h1 + h2))) * f[2]
}

fn second_derivative(t: [f64; 3], f: [f64; 3]) -> f64 {
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    2.0 * (f[0] / (h1 * (h1 + h2)) - f[1] / (h1 * h2) + f[2] / (h2 * (h1 + h2)))
}

fn triple(w: &[FunctionalRecord], f: impl Fn(&FunctionalRecord) -> f64) -> [f64; 3] {
    [f(&w[0]), f(&w[1]), f(&w[2])]
}

fn times(w: &[FunctionalRecord]) -> [f64; 3] {
    triple(w, |r| r.t)
}

fn worst_rate_error(
    records: &[FunctionalRecord],
    f: impl Fn(&FunctionalRecord) -> f64,
    g: impl Fn(&FunctionalRecord) -> f64,
) -> f64 {
    records
        .windows(3)
        .map(|w| {
            let rate = first_derivative(times(w), triple(w, &f));
            (rate - g(&w[1])).abs() / g(&w[1]).abs()
        })
        .fold(0.0, f64::max)
}

/// Central-difference derivative, used as an oracle independent of the closed forms.
fn numeric_derivative(f: impl Fn(f64) -> f64, r: f64, h: f64) -> f64 {
    (f(r + h) - f(r - h)) / (2.0 * h)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Outcome {
    let mut out = Outcome::new();
    for (d, p) in [(1, 2.0), (1, 1.5), (2, 0.75), (3, 2.0 / 3.0), (3, 2.0)] {
        let params = ModelParams::new(d, p).unwrap();
        let reference = reference_functionals(params).unwrap();
        let family = Barenblatt::new(params).unwrap();
        let df = d as f64;
        let quad = |g: &dyn Fn(f64) -> f64| family.radial_quadrature(g).unwrap();
        let mass = quad(&|r| family.profile(r));
        let theta = quad(&|r| r * r * family.profile(r)) / df;
        let entropy = quad(&|r| family.profile(r).powf(p));
        let pressure = |r: f64| {
            let b = family.profile(r.abs());
            if b > 0.0 {
                p / (p - 1.0) * b.powf(p - 1.0)
            } else {
                0.0
            }
        };
        let support = family.profile_support();
        let fisher = quad(&|r| {
            let b = family.profile(r);
            if b <= 0.0 || r >= support * (1.0 - 1e-6) {
                return 0.0;
            }
            let h = 1e-5 * (1.0 + r);
            let dv = numeric_derivative(pressure, r, h);
            b * dv * dv
        });
        let exps = params.exponents().unwrap();
        let h_star = theta.powf(df * (p - 1.0) / 2.0) * entropy;
        let j_star = entropy.powf(exps.sigma - 1.0) * fisher;
        let theta_star = exps.kappa * exps.kappa * theta;
        let fields = [
            ("mass", 1.0, mass),
            ("theta", reference.theta_profile.unwrap(), theta),
            ("E", reference.entropy_profile.unwrap(), entropy),
            ("I", reference.fisher_profile.unwrap(), fisher),
            ("H*", reference.h_star.unwrap(), h_star),
            ("J*", reference.j_star.unwrap(), j_star),
            ("Theta*", reference.theta_star.unwrap(), theta_star),
        ];
        let worst = fields.iter().map(|(_, closed, quad)| rel(*quad, *closed)).fold(0.0, f64::max);
        out.at_most(format!("d={d} p={p:.4}: worst field vs quadrature"), worst, 1e-8);
        let q_star = reference.theta_profile.unwrap() * reference.fisher_profile.unwrap()
            / (df * reference.entropy_profile.unwrap().powi(2));
        out.at_most(format!("d={d} p={p:.4}: |q* - 1|"), (q_star - 1.0).abs(), 1e-10);
    }
    out
}

fn barenblatt_l1_error(n: usize) -> f64 {
    let params = ModelParams::new(1, 2.0).unwrap();
    let family = Barenblatt::new(params).unwrap();
    let grid = Arc::new(build_grid(1, 3.0, n, 1.0).unwrap());
    let u: Vec<f64> = grid.centers.iter().map(|&r| family.self_similar(1.0, r).unwrap()).collect();
    let mut state = DensityState::new(u, 0.0, grid).unwrap();
    let mut solver = Solver::new(params, SolverConfig { record_every: 1.0, ..Default::default() }, &state).unwrap();
    solver.evolve(&mut state, 1.0, |_, _| Ok(())).unwrap();
    state.l1_distance(|r| family.self_similar(2.0, r).unwrap())
}

fn criterion_2() -> Outcome {
    let mut out = Outcome::new();
    let coarse = barenblatt_l1_error(400);
    let fine = barenblatt_l1_error(800);
    out.at_most("L1 error at t=2, N=800", fine, 1e-2);
    out.at_least("error ratio N=400 / N=800", coarse / fine, 3.5);
    out
}

fn criterion_3(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    for name in ["gaussian_d3_p2_3", "gaussian_d1_p2"] {
        let run = find(runs, name);
        let (p, mu) = (run.params.p, run.params.exponents().unwrap().mu);
        let r = &run.records;
        out.at_most(format!("{name}: Theta' = 2E"), worst_rate_error(r, |x| x.theta, |x| 2.0 * x.entropy), 0.01);
        out.at_most(format!("{name}: E' = (1-p) I"), worst_rate_error(r, |x| x.entropy, |x| (1.0 - p) * x.fisher), 0.02);
        out.at_most(format!("{name}: G' = mu H"), worst_rate_error(r, |x| x.g_power, |x| mu * x.h_renyi), 0.01);
    }
    out
}

fn criterion_4(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    let run = find(runs, "gaussian_d3_p2_3");
    let p = run.params.p;
    let r = &run.records;
    let concavity = r
        .windows(3)
        .map(|w| (1.0 - p) * second_derivative(times(w), triple(w, |x| x.f_power)) - 1e-3 * w[1].f_power.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    out.at_most("max of (1-p)F'' - 1e-3|F|", concavity, 0.0);
    let increment = r.windows(2).map(|w| w[1].f_power - w[0].f_power).fold(f64::INFINITY, f64::min);
    out.push("F strictly increasing", increment > 0.0, format!("min increment {increment:.3e} > 0"));
    let j_star = run.reference.j_star.unwrap();
    // toward J* from above: nonincreasing and never below J*, within 1e-3 J*
    let rise = r.windows(2).map(|w| w[1].j_scale - w[0].j_scale).fold(f64::NEG_INFINITY, f64::max);
    let below = r.iter().map(|x| j_star - x.j_scale).fold(f64::NEG_INFINITY, f64::max);
    out.at_most("largest increase of J / J*", rise / j_star, 1e-3);
    out.at_most("largest (J* - J) / J*", below / j_star, 1e-3);
    let last = r.last().unwrap();
    out.at_most("T_end = 5", (last.t - 5.0).abs(), 0.0);
    out.at_most("|J(T_end) - J*| / J*", rel(last.j_scale, j_star), 0.05);
    out
}

fn criterion_5(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    for run in runs {
        let p = run.params.p;
        let h_star = run.reference.h_star.unwrap();
        let r = &run.records;
        let step = r
            .windows(2)
            .map(|w| (1.0 - p) * (w[1].h_renyi - w[0].h_renyi) + 1e-3 * w[1].h_renyi.abs())
            .fold(f64::INFINITY, f64::min);
        out.at_least(format!("{}: min (1-p)dH + 1e-3|H|", run.name()), step, 0.0);
        let sign = if p < 1.0 { 1.0 } else { -1.0 };
        let excess = r.iter().map(|x| sign * (x.h_renyi - h_star)).fold(f64::NEG_INFINITY, f64::max);
        let side = if p < 1.0 { "H - H*" } else { "H* - H" };
        out.at_most(format!("{}: max {side}", run.name()), excess, 1e-3 * h_star);
    }
    out
}

fn criterion_6(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    for run in runs {
        let q_min = run.records.iter().map(|x| x.q_ratio).fold(f64::INFINITY, f64::min);
        out.at_least(format!("{}: min q", run.name()), q_min, 1.0 - 1e-6);
    }
    out
}

fn delay_series(run: &Run) -> Vec<f64> {
    let t0 = run.records[0].t;
    run.records.iter().map(|x| x.s_match.expect("moment-matched scale recorded") - (x.t - t0)).collect()
}

fn criterion_7(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    for run in runs {
        let tau = delay_series(run);
        let allowance = 1e-3 * tau[0];
        let dir = if run.fast() { -1.0 } else { 1.0 };
        let worst = tau.windows(2).map(|w| dir * (w[1] - w[0])).fold(f64::INFINITY, f64::min);
        let label = if run.fast() { "nonincreasing" } else { "nondecreasing" };
        out.at_least(format!("{}: tau {label}, worst step", run.name()), worst, -allowance);
        if let InitialDatum::Barenblatt { t0 } = run.config.initial {
            let dev = tau.iter().map(|x| (x - t0).abs()).fold(0.0, f64::max);
            out.at_most(format!("{}: |tau - t0|", run.name()), dev, 1e-3);
        }
    }
    out
}

fn criterion_8(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    let gaussian = find(runs, "gaussian_d3_p2_3");
    let tau = delay_series(gaussian);
    let report = DelayReport::build(&gaussian.records, gaussian.params, &gaussian.reference, DelayTolerances::default())
        .unwrap();
    let drop = tau[0] - tau[tau.len() - 1];
    let bound = report.lower_bound.bound;
    out.push(
        "gaussian_d3_p2_3: tau(0) - tau(T) > bound",
        drop > bound && bound > 0.0,
        format!("{drop:.4e} > {bound:.4e} (slack {:.4e})", drop - bound),
    );
    for name in ["barenblatt_d1_p2", "barenblatt_d3_p2_3"] {
        let run = find(runs, name);
        let report = DelayReport::build(&run.records, run.params, &run.reference, DelayTolerances::default()).unwrap();
        // zero up to discretization: a thousandth of the tau tolerance
        out.at_most(format!("{name}: bound"), report.lower_bound.bound.abs(), 1e-6);
    }
    out
}

fn criterion_9(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    for run in runs.iter().filter(|r| r.fast()) {
        let report = DelayReport::build(&run.records, run.params, &run.reference, DelayTolerances::default()).unwrap();
        let tau0 = report.tau_series[0].1;
        let envelope = report
            .envelope_series
            .iter()
            .zip(&run.records)
            .map(|((_, q_bar), x)| x.q_ratio - q_bar)
            .fold(f64::NEG_INFINITY, f64::max);
        out.at_most(format!("{}: max q - q_bar", run.name()), envelope, 1e-3);
        let upper = report
            .upper_bound_series
            .iter()
            .zip(&report.tau_series)
            .map(|((_, bound), (_, tau))| tau - bound)
            .fold(f64::NEG_INFINITY, f64::max);
        out.at_most(format!("{}: max tau - upper bound", run.name()), upper, 1e-3 * tau0);
    }
    out
}

fn criterion_10(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    for name in ["gaussian_d1_p2", "gaussian_d3_p2_3"] {
        let run = find(runs, name);
        let constant = gn::gn_optimal_constant(&run.reference).unwrap();
        out.at_most(format!("{name}: dual-path relative gap"), constant.relative_gap, 1e-3);
        let ext = gn::extremality_test(&run.reference, 20, run.config.seed).unwrap();
        out.at_least(format!("{name}: perturbations"), ext.perturbations.len() as f64, 20.0);
        let min_gap = ext.perturbations.iter().flat_map(|x| x.gaps.iter().copied()).fold(f64::INFINITY, f64::min);
        out.at_least(format!("{name}: min quotient gap (+1e-9 Q)"), min_gap + ext.tolerance, 0.0);
        let slope_dev = ext.perturbations.iter().map(|x| (x.slope - 2.0).abs()).fold(0.0, f64::max);
        out.at_most(format!("{name}: max |slope - 2|"), slope_dev, 0.3);
    }
    out
}

fn criterion_11(runs: &[Run]) -> Outcome {
    let mut out = Outcome::new();
    let run = find(runs, "gaussian_d3_p2_3");
    let p = run.params.p;
    let sigma = run.params.exponents().unwrap().sigma;
    let j_star = run.reference.j_star.unwrap();
    let report = gn::deficit_identity_check(&run.records, run.params, &run.reference, DeficitTolerances::default()).unwrap();
    let step = report.partial.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::INFINITY, f64::min);
    out.at_least("min increment of P", step, 0.0);
    let available = run.records[0].j_scale - j_star;
    let excess = report.partial.iter().map(|(_, v)| v - available).fold(f64::NEG_INFINITY, f64::max);
    out.at_most("max P(T) - (J(0) - J*)", excess, 1e-3 * j_star);
    // interior stencils away from t = 0, where R is unbounded for Gaussian data
    let identity = run
        .records
        .windows(3)
        .skip(1)
        .map(|w| {
            let lhs = -second_derivative(times(w), triple(w, |x| x.f_power));
            let rhs = sigma * (1.0 - p).powi(2) * w[1].entropy.powf(sigma - 2.0) * w[1].remainder;
            (lhs - rhs).abs() / rhs.abs()
        })
        .fold(0.0, f64::max);
    out.at_most("-F'' = sigma (1-p)^2 E^(sigma-2) R, max rel. error", identity, 0.05);
    out
}

fn criterion_12() -> Outcome {
    let mut out = Outcome::new();
    for name in ["barenblatt_d1_p2", "mixture_d3_p2_3"] {
        let first = experiment::trajectory_csv(&simulate(load(name)).records);
        let second = experiment::trajectory_csv(&simulate(load(name)).records);
        out.push(&format!("{name}: repeated CSV"), first == second, format!("{} bytes, identical", first.len()));
    }
    out
}

fn main() -> ExitCode {
    let runs = corpus();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("closed-form oracle agreement", Box::new(criterion_1)),
        ("Barenblatt exactness of the solver", Box::new(criterion_2)),
        ("derivative identities", Box::new(|| criterion_3(&runs))),
        ("concavity of F and monotone J", Box::new(|| criterion_4(&runs))),
        ("monotone H and the H* inequality", Box::new(|| criterion_5(&runs))),
        ("q-ratio at least one", Box::new(|| criterion_6(&runs))),
        ("monotone delay", Box::new(|| criterion_7(&runs))),
        ("delay lower bound", Box::new(|| criterion_8(&runs))),
        ("q envelope and delay upper bound", Box::new(|| criterion_9(&runs))),
        ("GN extremality", Box::new(|| criterion_10(&runs))),
        ("entropy-production deficit", Box::new(|| criterion_11(&runs))),
        ("determinism", Box::new(criterion_12)),
    ];
    let mut failures = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let outcome = run();
        println!("criterion {:>2} [{}] {title}", i + 1, if outcome.passed { "PASS" } else { "FAIL" });
        for line in &outcome.lines {
            println!("{line}");
        }
        failures += usize::from(!outcome.passed);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
