//! Gagliardo–Nirenberg quotients, optimal constants from Barenblatt
//! profiles, extremality checks and the entropy-production deficit.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barenblatt::BarenblattReference;
use crate::error::{Error, Result};
use crate::functionals::FunctionalRecord;
pub use crate::functionals::fisher_w_factor;
use crate::grid::{build_grid, stretch_for_first_width, RadialGrid};
use crate::params::{ModelParams, THRESHOLD_EPS};
use crate::timeseries::second_difference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnBranch {
    /// `‖∇w‖^θ ‖w‖_{q+1}^{1-θ} ≥ C ‖w‖_{2q}` with `q > 1`.
    Gn1,
    /// `‖∇w‖^θ ‖w‖_{2q}^{1-θ} ≥ C ‖w‖_{q+1}` with `0 < q < 1`.
    Gn2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnParams {
    /// `q = 1/(2p-1)`.
    pub q: f64,
    pub theta: f64,
    pub branch: GnBranch,
    pub c_gn: Option<f64>,
}

/// Exponent `θ` making the quotient dilation invariant.
///
/// For `q > 1` this is `(d/q)(q-1)/(d+2-q(d-2))`; for `0 < q < 1` the roles
/// of the `q+1` and `2q` norms swap and `θ = d(1-q)/((q+1)(d-q(d-2)))`.
pub fn gn_exponent(d: usize, q: f64) -> Result<f64> {
    let df = d as f64;
    if q > 1.0 {
        if d > 2 && q > df / (df - 2.0) * (1.0 + THRESHOLD_EPS) {
            return Err(Error::ParameterDomain(format!(
                "GN index q = {q} exceeds the Sobolev limit d/(d-2) = {} for d = {d}",
                df / (df - 2.0)
            )));
        }
        Ok(df / q * (q - 1.0) / (df + 2.0 - q * (df - 2.0)))
    } else if q > 0.0 && q < 1.0 {
        Ok(df * (1.0 - q) / ((q + 1.0) * (df - q * (df - 2.0))))
    } else {
        Err(Error::ParameterDomain(format!("GN index must lie in (0, 1) or (1, d/(d-2)], got {q}")))
    }
}

impl GnParams {
    /// Branch and exponent for `q = 1/(2p-1)`; needs `p > 1/2` and, on the
    /// fast-diffusion side, `p ≥ 1 - 1/d`.
    pub fn for_model(params: ModelParams) -> Result<Self> {
        let p = params.p;
        if p <= 0.5 {
            return Err(Error::ParameterDomain(format!("GN conversion needs p > 1/2, got p = {p}")));
        }
        if p == 1.0 {
            return Err(Error::ParameterDomain("GN conversion is undefined at p = 1".into()));
        }
        let q = 1.0 / (2.0 * p - 1.0);
        let theta = gn_exponent(params.d, q)?;
        let branch = if q > 1.0 { GnBranch::Gn1 } else { GnBranch::Gn2 };
        Ok(Self { q, theta, branch, c_gn: None })
    }

    pub fn from_reference(reference: &BarenblattReference) -> Result<Self> {
        let mut gn = Self::for_model(reference.params)?;
        gn.c_gn = reference.c_gn;
        Ok(gn)
    }
}

/// Radial samples of a nonnegative function at the cell centers of a grid.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub grid: Arc<RadialGrid>,
    pub w: Vec<f64>,
}

impl TestFunction {
    pub fn sample(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let w = grid.sample(f);
        Self { grid, w }
    }

    /// `‖w‖_r` by the midpoint rule.
    pub fn lebesgue_norm(&self, r: f64) -> f64 {
        let sum: f64 = self.w.iter().zip(&self.grid.volumes).map(|(w, v)| w.max(0.0).powf(r) * v).sum();
        sum.powf(1.0 / r)
    }

    /// `‖∇w‖_2` from differences between cell centers.
    pub fn gradient_norm(&self) -> f64 {
        let g = &self.grid;
        let sum: f64 = (0..g.len() - 1)
            .map(|i| {
                let slope = (self.w[i + 1] - self.w[i]) / (g.centers[i + 1] - g.centers[i]);
                slope * slope * g.dual_volumes[i]
            })
            .sum();
        sum.sqrt()
    }
}

/// The GN quotient of the branch, which the optimal constant bounds from below.
pub fn gn_quotient(w: &TestFunction, gn: &GnParams) -> Result<f64> {
    let grad = w.gradient_norm();
    let low = w.lebesgue_norm(gn.q + 1.0);
    let high = w.lebesgue_norm(2.0 * gn.q);
    if !(grad > 0.0 && low > 0.0 && high > 0.0) {
        return Err(Error::Numerical(format!(
            "GN quotient needs nonzero norms, got ‖∇w‖ = {grad}, ‖w‖_(q+1) = {low}, ‖w‖_(2q) = {high}"
        )));
    }
    Ok(match gn.branch {
        GnBranch::Gn1 => grad.powf(gn.theta) * low.powf(1.0 - gn.theta) / high,
        GnBranch::Gn2 => grad.powf(gn.theta) * high.powf(1.0 - gn.theta) / low,
    })
}

/// Grid resolving `B*^{p-1/2}`: the support for `p > 1`, a geometric grid
/// reaching `10⁴ √C*` otherwise.
pub fn extremal_grid(reference: &BarenblattReference, n: usize) -> Result<Arc<RadialGrid>> {
    let scale = reference.c_star.sqrt();
    let grid = if reference.params.p > 1.0 {
        build_grid(reference.params.d, scale, n, 1.0)?
    } else {
        let r_max = 1e4 * scale;
        build_grid(reference.params.d, r_max, n, stretch_for_first_width(r_max, n, 2e-3 * scale)?)?
    };
    Ok(Arc::new(grid))
}

pub fn extremal_function(reference: &BarenblattReference, grid: Arc<RadialGrid>) -> TestFunction {
    let family = reference.family();
    let exponent = reference.params.p - 0.5;
    TestFunction::sample(grid, |r| family.profile(r).powf(exponent))
}

/// Optimal constant from the reference functionals and from the quotient of
/// the sampled extremal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalConstant {
    pub params: GnParams,
    pub from_entropy_production: f64,
    pub from_quotient: f64,
    pub relative_gap: f64,
}

pub const EXTREMAL_CELLS: usize = 4000;

pub fn gn_optimal_constant(reference: &BarenblattReference) -> Result<OptimalConstant> {
    let gn = GnParams::from_reference(reference)?;
    let c = gn.c_gn.ok_or_else(|| {
        Error::MomentsDiverge(format!(
            "entropy production of B* is unavailable for d = {}, p = {}",
            reference.params.d, reference.params.p
        ))
    })?;
    let grid = extremal_grid(reference, EXTREMAL_CELLS)?;
    let q = gn_quotient(&extremal_function(reference, grid), &gn)?;
    Ok(OptimalConstant { params: gn, from_entropy_production: c, from_quotient: q, relative_gap: (c - q).abs() / c })
}

/// 64-bit linear congruential generator `x ← a x + c (mod 2⁶⁴)` with
/// `a = 6364136223846793005`, `c = 1442695040888963407`; uniforms use the top 53 bits.
#[derive(Debug, Clone)]
pub struct Lcg(u64);

impl Lcg {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(Self::MULTIPLIER).wrapping_add(Self::INCREMENT);
        self.0
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

pub const EXTREMALITY_AMPLITUDES: [f64; 4] = [-0.1, -0.05, 0.05, 0.1];

/// Relative multiplicative bump `1 + ε φ` applied to the extremal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub center: f64,
    pub width: f64,
    /// `Q[w_ε] - Q[w]` for each amplitude in [`EXTREMALITY_AMPLITUDES`].
    pub gaps: Vec<f64>,
    /// `log₂` ratio of the ±ε-averaged gaps at `ε = 0.1` and `0.05`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalityReport {
    pub seed: u64,
    pub base_quotient: f64,
    pub tolerance: f64,
    pub min_gap: f64,
    pub nonnegative: bool,
    pub slope_min: f64,
    pub slope_max: f64,
    pub perturbations: Vec<Perturbation>,
}

fn bump(r: f64, center: f64, width: f64) -> f64 {
    let z = (r - center) / width;
    if z.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - z * z).powi(3)
    }
}

/// Compares `Q[(w + ε w φ)₊]` with `Q[w]` at `w = B*^{p-1/2}` for seeded
/// smooth radial bumps `φ ≤ 1`. Bumps stay inside `0.9 √C*` for `p > 1`
/// and inside `3 √C*` otherwise.
pub fn extremality_test(reference: &BarenblattReference, n_perturbations: usize, seed: u64) -> Result<ExtremalityReport> {
    let gn = GnParams::from_reference(reference)?;
    let grid = extremal_grid(reference, EXTREMAL_CELLS)?;
    let base = extremal_function(reference, grid.clone());
    let q0 = gn_quotient(&base, &gn)?;
    let scale = reference.c_star.sqrt();
    let reach = if reference.params.p > 1.0 { 0.9 * scale } else { 3.0 * scale };

    let mut rng = Lcg::new(seed);
    let shapes: Vec<(f64, f64)> = (0..n_perturbations)
        .map(|_| {
            let width = rng.range(0.1, 0.4) * reach;
            let center = if rng.uniform() < 0.25 { 0.0 } else { rng.range(width, reach - width) };
            (center, width)
        })
        .collect();
    let perturbations = shapes
        .par_iter()
        .map(|&(center, width)| {
            let gaps = EXTREMALITY_AMPLITUDES
                .iter()
                .map(|&eps| {
                    let w = base
                        .w
                        .iter()
                        .zip(&grid.centers)
                        .map(|(w, &r)| (w * (1.0 + eps * bump(r, center, width))).max(0.0))
                        .collect();
                    Ok(gn_quotient(&TestFunction { grid: grid.clone(), w }, &gn)? - q0)
                })
                .collect::<Result<Vec<f64>>>()?;
            let small = 0.5 * (gaps[1] + gaps[2]);
            let large = 0.5 * (gaps[0] + gaps[3]);
            let slope = (large / small).ln() / 2f64.ln();
            Ok(Perturbation { center, width, gaps, slope })
        })
        .collect::<Result<Vec<_>>>()?;

    let tolerance = 1e-9 * q0;
    let min_gap = perturbations.iter().flat_map(|p| p.gaps.iter().copied()).fold(f64::INFINITY, f64::min);
    let slope_min = perturbations.iter().map(|p| p.slope).fold(f64::INFINITY, f64::min);
    let slope_max = perturbations.iter().map(|p| p.slope).fold(f64::NEG_INFINITY, f64::max);
    Ok(ExtremalityReport {
        seed,
        base_quotient: q0,
        tolerance,
        min_gap,
        nonnegative: min_gap >= -tolerance,
        slope_min,
        slope_max,
        perturbations,
    })
}

/// Integrated entropy-production remainder along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    /// `P(T) = (1-p) ∫0^T E^{σ-2} R dt`, which equals `J(0) - J(T)`.
    pub partial: Vec<(f64, f64)>,
    /// `(1-p) ∫0^T R dt` without the entropy weight.
    pub partial_unweighted: Vec<(f64, f64)>,
    pub tolerance: f64,
    /// Smallest increment of `P` (plus tolerance); negative means `P` decreased.
    pub monotone_slack: f64,
    pub monotone_ok: bool,
    /// `min_T (J(0) - J* + tol - P(T))`.
    pub bound_slack: f64,
    pub bound_ok: bool,
    /// `P(T_end) / (J(0) - J*)`.
    pub recovered_fraction: Option<f64>,
    /// `J(T) - J*` at the last record, and the same scaled by `4p²/((p-1)²(2p-1)²)`.
    pub final_deficit: f64,
    pub final_deficit_prefactor_form: f64,
    /// Largest `|(-F'') - σ(1-p)² E^{σ-2} R| / |σ(1-p)² E^{σ-2} R|` over
    /// records whose difference stencil avoids `t = 0`.
    pub identity_max_rel_error: f64,
    pub identity_tolerance: f64,
    pub identity_ok: bool,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeficitTolerances {
    /// Bound and monotonicity tolerance relative to `J*`.
    pub bound_rel: f64,
    /// Relative tolerance on `-F'' = σ(1-p)² E^{σ-2} R`.
    pub identity_rel: f64,
}

impl Default for DeficitTolerances {
    fn default() -> Self {
        Self { bound_rel: 1e-3, identity_rel: 0.05 }
    }
}

pub fn deficit_identity_check(
    records: &[FunctionalRecord],
    params: ModelParams,
    reference: &BarenblattReference,
    tol: DeficitTolerances,
) -> Result<DeficitReport> {
    let exps = params.exponents()?;
    let p = params.p;
    let j_star = reference.j_star()?;
    let first = records.first().ok_or_else(|| Error::Numerical("deficit check needs records".into()))?;
    let weighted = |r: &FunctionalRecord| r.entropy.powf(exps.sigma - 2.0) * r.remainder;

    let mut partial = vec![(first.t, 0.0)];
    let mut partial_unweighted = vec![(first.t, 0.0)];
    let (mut acc, mut acc_u) = (0.0, 0.0);
    for (k, w) in records.windows(2).enumerate() {
        let h = w[1].t - w[0].t;
        // R of the initial datum can be infinite (tails lighter than B*), so
        // the first interval uses its right endpoint only.
        let (left, left_u) = if k == 0 { (weighted(&w[1]), w[1].remainder) } else { (weighted(&w[0]), w[0].remainder) };
        acc += (1.0 - p) * 0.5 * h * (left + weighted(&w[1]));
        acc_u += (1.0 - p) * 0.5 * h * (left_u + w[1].remainder);
        partial.push((w[1].t, acc));
        partial_unweighted.push((w[1].t, acc_u));
    }

    let tolerance = tol.bound_rel * j_star;
    let monotone_slack = partial.windows(2).map(|w| w[1].1 - w[0].1 + tolerance).fold(f64::INFINITY, f64::min);
    let available = first.j_scale - j_star;
    let bound_slack = partial.iter().map(|(_, v)| available + tolerance - v).fold(f64::INFINITY, f64::min);
    let recovered_fraction = (available.abs() > tolerance).then(|| acc / available);
    let last = records.last().unwrap_or(first);
    let final_deficit = last.j_scale - j_star;
    let prefactor = 4.0 * p * p / ((p - 1.0).powi(2) * (2.0 * p - 1.0).powi(2));

    let coefficient = exps.sigma * (1.0 - p).powi(2);
    let mut identity_max_rel_error: f64 = 0.0;
    // Stencils touching the initial record are skipped: F'' is singular at
    // t = 0 when R[u0] is infinite.
    for w in records.windows(3).skip(1) {
        let f2 = second_difference((w[0].t, w[0].f_power), (w[1].t, w[1].f_power), (w[2].t, w[2].f_power));
        let rhs = coefficient * weighted(&w[1]);
        if rhs != 0.0 {
            identity_max_rel_error = identity_max_rel_error.max((-f2 - rhs).abs() / rhs.abs());
        } else if f2 != 0.0 {
            identity_max_rel_error = f64::INFINITY;
        }
    }
    let identity_tolerance = tol.identity_rel;

    Ok(DeficitReport {
        partial,
        partial_unweighted,
        tolerance,
        monotone_slack,
        monotone_ok: monotone_slack >= 0.0,
        bound_slack,
        bound_ok: bound_slack >= 0.0,
        recovered_fraction,
        final_deficit,
        final_deficit_prefactor_form: prefactor * final_deficit,
        identity_max_rel_error,
        identity_tolerance,
        identity_ok: identity_max_rel_error <= identity_tolerance,
        low_confidence: records.iter().any(|r| r.remainder_flagged),
    })
}
