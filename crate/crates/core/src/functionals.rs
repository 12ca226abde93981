//! Entropy, moment and entropy-production functionals of a density snapshot.
//!
//! Discrete Fisher information is built on the same face sums as the
//! summation-by-parts form of `d E = -∫ x·∇(u^p)`, so the discrete
//! Cauchy–Schwarz bound `Θ I ≥ d E²` holds exactly on every grid.

use serde::{Deserialize, Serialize};

use crate::barenblatt::BarenblattReference;
use crate::error::{Error, Result};
use crate::grid::{sphere_area, DensityState};
use crate::matching;
use crate::params::ModelParams;

/// Relative floor below which a cell counts as outside the support of a
/// porous-medium state when differentiating the pressure.
pub const SUPPORT_FLOOR: f64 = 1e-10;

/// One time-stamped row of diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRecord {
    pub t: f64,
    /// Last solver step before this record (0 for the initial record).
    pub dt: f64,
    pub mass: f64,
    /// `Θ = (1/d) ∫ |x|² u`.
    pub theta: f64,
    /// `E = ∫ u^p`.
    pub entropy: f64,
    /// `I = ∫ u |∇v|²`.
    pub fisher: f64,
    /// `F = E^σ`.
    pub f_power: f64,
    /// `G = Θ^{1-η/2}`.
    pub g_power: f64,
    /// `H = Θ^{-η/2} E`.
    pub h_renyi: f64,
    /// `J = E^{σ-1} I`.
    pub j_scale: f64,
    /// `q = Θ I / (d E²)`.
    pub q_ratio: f64,
    pub s_match: Option<f64>,
    pub tau: Option<f64>,
    pub rel_entropy: Option<f64>,
    pub remainder: f64,
    /// The second moment is still growing near the outer boundary.
    pub low_confidence: bool,
    /// One-sided pressure stencils carry more than 10% of `R[u]`.
    pub remainder_flagged: bool,
}

pub fn second_moment(state: &DensityState) -> f64 {
    let grid = &state.grid;
    grid.weighted_sum(state.u.iter().zip(&grid.centers).map(|(u, r)| r * r * u)) / grid.d as f64
}

pub fn entropy(state: &DensityState, p: f64) -> f64 {
    state.grid.weighted_sum(state.u.iter().map(|&u| pow(u, p)))
}

fn pow(u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        u.powf(p)
    }
}

/// `I = ∫ |∇(u^p)|² / u`, discretized on faces so that the discrete
/// Cauchy–Schwarz inequality is exact.
///
/// Face `i+1/2` carries `(Δw)² (ω r^d)² / b` with `w = u^p` and `b` half the
/// second-moment mass of each adjacent cell. A ghost face at `R_max` sees
/// `w = 0` outside the domain; it vanishes for compactly supported states.
pub fn fisher_information(state: &DensityState, params: ModelParams) -> f64 {
    let grid = &state.grid;
    let omega = sphere_area(grid.d);
    let n = grid.len();
    let w: Vec<f64> = state.u.iter().map(|&u| pow(u, params.p)).collect();
    let half_moment: Vec<f64> = (0..n)
        .map(|i| 0.5 * grid.centers[i].powi(2) * state.u[i] * grid.volumes[i])
        .collect();
    let face = |dw: f64, r: f64, b: f64| {
        if b > 0.0 {
            let c = omega * r.powi(grid.d as i32) * dw;
            c * c / b
        } else {
            0.0
        }
    };
    let interior: f64 = (0..n - 1)
        .map(|i| face(w[i + 1] - w[i], grid.edges[i + 1], half_moment[i] + half_moment[i + 1]))
        .sum();
    interior + face(w[n - 1], grid.r_max(), half_moment[n - 1])
}

/// Factor `(2p/(2p-1))²` relating `u|∇v|²` to `|∇u^{p-1/2}|²`.
pub fn fisher_w_factor(p: f64) -> f64 {
    (2.0 * p / (2.0 * p - 1.0)).powi(2)
}

/// Alternative `I = (2p/(2p-1))² ∫ |∇u^{p-1/2}|²` from face-centered differences.
pub fn fisher_information_w_form(state: &DensityState, params: ModelParams) -> Result<f64> {
    let p = params.p;
    if p <= 0.5 {
        return Err(Error::ParameterDomain(format!("the u^(p-1/2) form needs p > 1/2, got {p}")));
    }
    let grid = &state.grid;
    let w: Vec<f64> = state.u.iter().map(|&u| pow(u, p - 0.5)).collect();
    let sum: f64 = (0..grid.len() - 1)
        .map(|i| {
            let slope = (w[i + 1] - w[i]) / (grid.centers[i + 1] - grid.centers[i]);
            slope * slope * grid.dual_volumes[i]
        })
        .sum();
    Ok(fisher_w_factor(p) * sum)
}

/// First and second derivative at `x` of the quadratic through three points.
fn quadratic_derivatives(nodes: [(f64, f64); 3], x: f64) -> (f64, f64) {
    let [(xa, va), (xb, vb), (xc, vc)] = nodes;
    let ab = (vb - va) / (xb - xa);
    let bc = (vc - vb) / (xc - xb);
    let abc = (bc - ab) / (xc - xa);
    (ab + abc * (2.0 * x - xa - xb), 2.0 * abc)
}

/// `R[u]` together with stencil diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Remainder {
    pub value: f64,
    /// Share of `|R|` coming from one-sided stencils next to the support edge.
    pub boundary_share: f64,
    pub flagged: bool,
}

/// Sum-of-squares remainder of the concavity computation for `F = E^σ`:
/// `R = E [ (σ-1) ∫ u^p (Δv + I/E)² + 2/(1-p) ∫ u^p ‖D²v - (Δv/d) Id‖² ]`.
pub fn entropy_remainder(state: &DensityState, params: ModelParams) -> Result<Remainder> {
    let exps = params.exponents()?;
    let p = params.p;
    let d = params.dim();
    let grid = &state.grid;
    let n = grid.len();
    // Fast-diffusion solutions are positive everywhere, so only `p > 1` needs a support test.
    let floor = if p > 1.0 { SUPPORT_FLOOR * state.max_density() } else { 0.0 };
    let inside = |i: usize| state.u[i] > floor && state.u[i] > 0.0;
    let v: Vec<f64> = state
        .u
        .iter()
        .map(|&u| if u > 0.0 { p / (p - 1.0) * u.powf(p - 1.0) } else { 0.0 })
        .collect();
    // Index -1 is the mirror image of cell 0 across r = 0.
    let node = |j: isize| -> (f64, f64) {
        if j < 0 {
            (-grid.centers[0], v[0])
        } else {
            (grid.centers[j as usize], v[j as usize])
        }
    };
    let usable = |j: isize| j == -1 || (j >= 0 && (j as usize) < n && inside(j as usize));

    let e = entropy(state, p);
    let i_fisher = fisher_information(state, params);
    let mean_shift = i_fisher / e;
    let isotropy = 2.0 / (1.0 - p) * (1.0 - 1.0 / d);

    let mut total = 0.0;
    let mut edge = 0.0;
    for i in 0..n {
        if !inside(i) {
            continue;
        }
        let k = i as isize;
        let (stencil, one_sided) = if usable(k - 1) && usable(k + 1) {
            ([k - 1, k, k + 1], false)
        } else if usable(k + 1) && usable(k + 2) {
            ([k, k + 1, k + 2], true)
        } else if usable(k - 1) && usable(k - 2) {
            ([k - 2, k - 1, k], true)
        } else {
            continue;
        };
        let r = grid.centers[i];
        let (dv, d2v) = quadratic_derivatives(stencil.map(node), r);
        let laplacian = d2v + (d - 1.0) * dv / r;
        let traceless = d2v - dv / r;
        let weight = pow(state.u[i], p) * grid.volumes[i];
        let term = weight
            * ((exps.sigma - 1.0) * (laplacian + mean_shift).powi(2) + isotropy * traceless * traceless);
        total += term;
        if one_sided {
            edge += term.abs();
        }
    }
    let value = e * total;
    let boundary_share = if total != 0.0 { edge / total.abs() } else { 0.0 };
    Ok(Remainder { value, boundary_share, flagged: boundary_share > 0.1 })
}

fn check_scale(s: f64) -> Result<()> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::ParameterDomain(format!("Barenblatt scale must be positive, got {s}")));
    }
    Ok(())
}

/// `F[u | U*^s] = 1/(p-1) ∫ [u^p - U^p - p W (u - U)]` with `W = U^{p-1}`
/// continued affinely in `|x|²` past the support of `U` when `p > 1`.
pub fn relative_entropy(
    state: &DensityState,
    s: f64,
    params: ModelParams,
    reference: &BarenblattReference,
) -> Result<f64> {
    check_scale(s)?;
    let family = reference.family();
    let p = params.p;
    let grid = &state.grid;
    let mut sum = 0.0;
    for ((&u, &r), &vol) in state.u.iter().zip(&grid.centers).zip(&grid.volumes) {
        let big_u = family.self_similar(s, r)?;
        let w = family.pressure_extension(s, r);
        sum += (pow(u, p) - pow(big_u, p) - p * w * (u - big_u)) * vol;
    }
    Ok(sum / (p - 1.0))
}

/// `1/(p-1) ∫ [u^p - (U*^s)^p]`, equal to the full form when second moments match.
pub fn relative_entropy_reduced(
    state: &DensityState,
    s: f64,
    params: ModelParams,
    reference: &BarenblattReference,
) -> Result<f64> {
    check_scale(s)?;
    let family = reference.family();
    let p = params.p;
    let grid = &state.grid;
    let mut sum = 0.0;
    for ((&u, &r), &vol) in state.u.iter().zip(&grid.centers).zip(&grid.volumes) {
        sum += (pow(u, p) - pow(family.self_similar(s, r)?, p)) * vol;
    }
    Ok(sum / (p - 1.0))
}

/// Whether the second moment still gains more than 10% between `0.9 R_max` and `R_max`.
fn moment_truncated(state: &DensityState) -> bool {
    let grid = &state.grid;
    let cut = 0.9 * grid.r_max();
    let mut inner = 0.0;
    let mut full = 0.0;
    for i in 0..grid.len() {
        let m = grid.centers[i].powi(2) * state.u[i] * grid.volumes[i];
        full += m;
        if grid.edges[i + 1] <= cut {
            inner += m;
        }
    }
    full > 0.0 && (full - inner) > 0.1 * full
}

/// Computes every functional on a snapshot. Scale, delay and relative entropy
/// need a reference with finite moments and are left empty otherwise.
pub fn diagnostics(
    state: &DensityState,
    params: ModelParams,
    reference: Option<&BarenblattReference>,
    dt: f64,
) -> Result<FunctionalRecord> {
    let exps = params.exponents()?;
    let d = params.dim();
    let mass = state.mass();
    let theta = second_moment(state);
    let e = entropy(state, params.p);
    let fisher = fisher_information(state, params);
    let remainder = entropy_remainder(state, params)?;
    let (s_match, tau, rel_entropy) = match reference {
        Some(reference) if reference.theta_star.is_some() && theta > 0.0 => {
            let s = matching::best_match_scale(theta, reference)?;
            let rel = relative_entropy(state, s, params, reference)?;
            (Some(s), Some(s - state.t), Some(rel))
        }
        _ => (None, None, None),
    };
    Ok(FunctionalRecord {
        t: state.t,
        dt,
        mass,
        theta,
        entropy: e,
        fisher,
        f_power: e.powf(exps.sigma),
        g_power: theta.powf(0.5 * exps.mu),
        h_renyi: theta.powf(-0.5 * exps.eta) * e,
        j_scale: e.powf(exps.sigma - 1.0) * fisher,
        q_ratio: theta * fisher / (d * e * e),
        s_match,
        tau,
        rel_entropy,
        remainder: remainder.value,
        low_confidence: moment_truncated(state),
        remainder_flagged: remainder.flagged,
    })
}
