//! Best-matching Barenblatt scale, the delay `τ(t)` and the bounds on it.

use serde::{Deserialize, Serialize};

use crate::barenblatt::BarenblattReference;
use crate::error::{Error, Result};
use crate::functionals::{relative_entropy, FunctionalRecord};
use crate::grid::DensityState;
use crate::params::ModelParams;

/// Relative bracket width at which the golden-section search stops.
pub const GOLDEN_TOL: f64 = 1e-8;

/// `s = (Θ/Θ*)^{μ/2}`: the scale whose self-similar solution has moment `Θ`.
pub fn best_match_scale(theta: f64, reference: &BarenblattReference) -> Result<f64> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::ParameterDomain(format!("second moment must be positive, got {theta}")));
    }
    let theta_star = reference.theta_star()?;
    Ok((theta / theta_star).powf(0.5 * reference.exponents.mu))
}

/// `τ = s - t`.
pub fn delay(theta: f64, t: f64, reference: &BarenblattReference) -> Result<f64> {
    Ok(best_match_scale(theta, reference)? - t)
}

/// Minimizes `s ↦ F[u | U*^s]` by golden-section search in `log s` on
/// `[s0/10, 10 s0]`, where `s0` is the moment-matched scale.
pub fn best_match_scale_numeric(
    state: &DensityState,
    params: ModelParams,
    reference: &BarenblattReference,
) -> Result<f64> {
    let s0 = best_match_scale(crate::functionals::second_moment(state), reference)?;
    let objective = |x: f64| relative_entropy(state, x.exp(), params, reference);
    let (lo, hi) = ((s0 / 10.0).ln(), (s0 * 10.0).ln());
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    // in log space a width w corresponds to a relative width of about w
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = objective(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = objective(x2)?;
        }
    }
    let x = 0.5 * (a + b);
    let margin = 1e-6 * (hi - lo);
    if x - lo < margin || hi - x < margin {
        return Err(Error::Bracket { lo: lo.exp(), hi: hi.exp(), argmin: x.exp() });
    }
    Ok(x.exp())
}

/// Lower bound on the total delay change from the initial record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayLowerBound {
    /// `|1-p| Θ0^{1-η/2} (H*-H0)² / (2 H* (Θ0 I0 - d E0²))`.
    pub bound: f64,
    /// `(G*' - G'(0))² / (2 G*' G''(0))` rewritten in `Θ0, I0, E0`:
    /// `Θ0^{1+η/2} (H*-H0)² / (2 H* |1-p| (Θ0 I0 - d E0²))`.
    pub quadratic_bound: f64,
    /// Time at which the quadratic model of `G` is maximal, `(H*-H0)/H'(0)`.
    pub t_star: Option<f64>,
}

/// Evaluates the delay lower bound from the first two records; `H'(0)` is
/// taken from the first recorded interval.
pub fn delay_lower_bound(
    records: &[FunctionalRecord],
    reference: &BarenblattReference,
    params: ModelParams,
) -> Result<DelayLowerBound> {
    let exps = params.exponents()?;
    let first = records
        .first()
        .ok_or_else(|| Error::Numerical("delay bound needs at least one record".into()))?;
    let h_star = reference.h_star()?;
    let d = params.dim();
    let gap = (h_star - first.h_renyi).powi(2);
    let defect = first.theta * first.fisher - d * first.entropy.powi(2);
    let abs_1p = (1.0 - params.p).abs();
    let (bound, quadratic_bound) = if gap == 0.0 || defect <= 0.0 {
        (0.0, 0.0)
    } else {
        let base = gap / (2.0 * h_star * defect);
        (
            abs_1p * first.theta.powf(1.0 - 0.5 * exps.eta) * base,
            first.theta.powf(1.0 + 0.5 * exps.eta) * base / abs_1p,
        )
    };
    let t_star = records.get(1).and_then(|next| {
        let slope = (next.h_renyi - first.h_renyi) / (next.t - first.t);
        (slope != 0.0).then(|| (h_star - first.h_renyi) / slope)
    });
    Ok(DelayLowerBound { bound, quadratic_bound, t_star })
}

/// `q̄(t) = q0 Θ(t) / (q0 Θ(t) - (q0-1) Θ0)`.
pub fn q_envelope(q0: f64, theta0: f64, theta_t: f64) -> Result<f64> {
    let denom = q0 * theta_t - (q0 - 1.0) * theta0;
    if !(denom > 0.0) {
        return Err(Error::Numerical(format!(
            "q envelope denominator {denom:e} is not positive (q0 = {q0}, Θ0 = {theta0}, Θ = {theta_t})"
        )));
    }
    Ok(q0 * theta_t / denom)
}

/// Upper bound `τ0 exp(∫0^t ds / D(s)) - t` with
/// `D(s) = s + Θ0/(μ E0) - (η/μ) ∫0^s (q̄-1)` at each recorded time.
///
/// The inner integral uses the trapezoid rule; the outer one integrates
/// `1/D` exactly for `D` linear between records.
pub fn delay_upper_bound(
    records: &[FunctionalRecord],
    params: ModelParams,
    reference: &BarenblattReference,
) -> Result<Vec<f64>> {
    let exps = params.exponents()?;
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let tau0 = delay(first.theta, first.t, reference)?;
    let q0 = first.q_ratio.max(1.0);
    let offset = first.theta / (exps.mu * first.entropy);
    let mut inner = 0.0;
    let mut outer = 0.0;
    let mut prev_excess = q_envelope(q0, first.theta, first.theta)? - 1.0;
    let mut prev_denom = offset;
    let mut bounds = vec![tau0];
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let h = b.t - a.t;
        let excess = q_envelope(q0, first.theta, b.theta)? - 1.0;
        inner += 0.5 * h * (prev_excess + excess);
        let denom = (b.t - first.t) + offset - exps.eta / exps.mu * inner;
        if !(denom > 0.0) {
            return Err(Error::Numerical(format!(
                "delay bound denominator {denom:e} at t = {} is not positive; record more often",
                b.t
            )));
        }
        outer += if (denom - prev_denom).abs() > 1e-12 * denom {
            h * (denom / prev_denom).ln() / (denom - prev_denom)
        } else {
            h / denom
        };
        bounds.push(tau0 * outer.exp() - (b.t - first.t));
        prev_excess = excess;
        prev_denom = denom;
    }
    Ok(bounds)
}

/// Verdicts on the delay along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub tau_series: Vec<(f64, f64)>,
    /// Direction required of `τ`: `-1` for `p < 1`, `+1` for `p > 1`.
    pub direction: f64,
    pub monotone_tol: f64,
    /// Smallest `tol + direction·Δτ` over intervals; negative means violated.
    pub monotone_slack: f64,
    pub monotone_ok: bool,
    pub lower_bound: DelayLowerBound,
    /// `|τ(T) - τ(0)|` at the last record.
    pub measured_change: f64,
    pub thm3bis_slack: f64,
    pub thm3bis_ok: bool,
    /// Envelope and integral bound; only on the fast-diffusion side.
    pub envelope_series: Vec<(f64, f64)>,
    pub envelope_slack: Option<f64>,
    pub envelope_ok: Option<bool>,
    pub upper_bound_series: Vec<(f64, f64)>,
    pub upper_slack: Option<f64>,
    pub upper_ok: Option<bool>,
}

/// Tolerances for [`DelayReport::build`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayTolerances {
    /// Per-interval monotonicity tolerance relative to `τ(0)`.
    pub monotone_rel: f64,
    /// Absolute tolerance on `q ≤ q̄`.
    pub envelope_abs: f64,
    /// Tolerance on `τ ≤ bound` relative to `τ(0)`.
    pub upper_rel: f64,
}

impl Default for DelayTolerances {
    fn default() -> Self {
        Self { monotone_rel: 1e-3, envelope_abs: 1e-3, upper_rel: 1e-3 }
    }
}

impl DelayTolerances {
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            monotone_rel: self.monotone_rel * factor,
            envelope_abs: self.envelope_abs * factor,
            upper_rel: self.upper_rel * factor,
        }
    }
}

impl DelayReport {
    pub fn build(
        records: &[FunctionalRecord],
        params: ModelParams,
        reference: &BarenblattReference,
        tol: DelayTolerances,
    ) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Numerical("delay report needs at least one record".into()))?;
        let tau_series = records
            .iter()
            .map(|r| Ok((r.t, delay(r.theta, r.t - first.t, reference)?)))
            .collect::<Result<Vec<_>>>()?;
        let tau0 = tau_series[0].1;
        let direction = if params.p < 1.0 { -1.0 } else { 1.0 };
        let monotone_tol = tol.monotone_rel * tau0.abs();
        let monotone_slack = tau_series
            .windows(2)
            .map(|w| monotone_tol + direction * (w[1].1 - w[0].1))
            .fold(f64::INFINITY, f64::min);

        let lower_bound = delay_lower_bound(records, reference, params)?;
        let measured_change = (tau_series[tau_series.len() - 1].1 - tau0).abs();
        let thm3bis_slack = measured_change - lower_bound.bound;

        let mut report = DelayReport {
            direction,
            monotone_tol,
            monotone_slack,
            monotone_ok: monotone_slack >= 0.0,
            lower_bound,
            measured_change,
            thm3bis_slack,
            thm3bis_ok: thm3bis_slack >= 0.0,
            envelope_series: Vec::new(),
            envelope_slack: None,
            envelope_ok: None,
            upper_bound_series: Vec::new(),
            upper_slack: None,
            upper_ok: None,
            tau_series,
        };
        if params.p < 1.0 && params.exponents()?.theorem1_valid {
            let q0 = first.q_ratio.max(1.0);
            let mut slack = f64::INFINITY;
            for r in records {
                let bar = q_envelope(q0, first.theta, r.theta)?;
                report.envelope_series.push((r.t, bar));
                slack = slack.min(bar + tol.envelope_abs - r.q_ratio);
            }
            report.envelope_slack = Some(slack);
            report.envelope_ok = Some(slack >= 0.0);

            let bounds = delay_upper_bound(records, params, reference)?;
            let upper_tol = tol.upper_rel * tau0.abs();
            let mut slack = f64::INFINITY;
            for ((t, tau), bound) in report.tau_series.iter().zip(&bounds) {
                report.upper_bound_series.push((*t, *bound));
                slack = slack.min(bound + upper_tol - tau);
            }
            report.upper_slack = Some(slack);
            report.upper_ok = Some(slack >= 0.0);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::barenblatt::reference_functionals;
    use crate::functionals::diagnostics;
    use crate::grid::{build_grid, project_initial};

    fn reference(d: usize, p: f64) -> BarenblattReference {
        reference_functionals(ModelParams::new(d, p).unwrap()).unwrap()
    }

    fn record(t: f64, theta: f64, entropy: f64, fisher: f64, q: f64) -> FunctionalRecord {
        FunctionalRecord {
            t,
            dt: 0.0,
            mass: 1.0,
            theta,
            entropy,
            fisher,
            f_power: 0.0,
            g_power: 0.0,
            h_renyi: 0.0,
            j_scale: 0.0,
            q_ratio: q,
            s_match: None,
            tau: None,
            rel_entropy: None,
            remainder: 0.0,
            low_confidence: false,
            remainder_flagged: false,
        }
    }

    #[test]
    fn closed_form_scale() {
        let r = reference(1, 2.0);
        let theta_star = r.theta_star.unwrap();
        assert!((best_match_scale(theta_star, &r).unwrap() - 1.0).abs() < 1e-15);
        assert!((best_match_scale(2.0 * theta_star, &r).unwrap() - 2f64.powf(1.5)).abs() < 1e-12);
        let t: f64 = 3.7;
        let mu = r.exponents.mu;
        assert!((best_match_scale(t.powf(2.0 / mu) * theta_star, &r).unwrap() - t).abs() < 1e-12);
        assert!((delay(theta_star, 0.0, &r).unwrap() - 1.0).abs() < 1e-15);
        assert!(best_match_scale(0.0, &r).is_err());
        let divergent = reference(2, 0.25);
        assert!(matches!(best_match_scale(1.0, &divergent), Err(Error::MomentsDiverge(_))));
    }

    #[test]
    fn numeric_scale_on_exact_profile() {
        let params = ModelParams::new(1, 2.0).unwrap();
        let r = reference(1, 2.0);
        let family = r.family();
        let grid = Arc::new(build_grid(1, 4.0, 800, 1.0).unwrap());
        let state = project_initial(|x| family.self_similar(2.0, x).unwrap(), grid, false).unwrap();
        let s = best_match_scale_numeric(&state, params, &r).unwrap();
        assert!((s - 2.0).abs() / 2.0 < 1e-3, "{s}");
    }

    #[test]
    fn numeric_scale_matches_moments_for_gaussians() {
        for (d, p, r_max, stretch) in [(1, 2.0, 8.0, 1.0), (2, 0.75, 2e3, 1.01), (3, 2.0 / 3.0, 1e4, 1.012)] {
            let params = ModelParams::new(d, p).unwrap();
            let r = reference(d, p);
            let grid = Arc::new(build_grid(d, r_max, 800, stretch).unwrap());
            let state = project_initial(|x| (-x * x).exp(), grid, true).unwrap();
            let rec = diagnostics(&state, params, Some(&r), 0.0).unwrap();
            let s0 = rec.s_match.unwrap();
            let s = best_match_scale_numeric(&state, params, &r).unwrap();
            assert!((s - s0).abs() / s0 < 1e-4, "d={d} p={p}: {s} vs {s0}");
            let best = relative_entropy(&state, s, params, &r).unwrap();
            for k in 0..10 {
                let other = s0 / 10.0 * 100f64.powf((k as f64 + 0.5) / 10.0);
                assert!(best <= relative_entropy(&state, other, params, &r).unwrap());
            }
        }
    }

    #[test]
    fn envelope_edge_cases() {
        assert_eq!(q_envelope(1.0, 2.0, 7.0).unwrap(), 1.0);
        assert!((q_envelope(1.3, 2.0, 2.0).unwrap() - 1.3).abs() < 1e-15);
        assert!(q_envelope(3.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn upper_bound_on_self_similar_records() {
        // Records of U*(t + τ0): Θ = (t+τ0)^{2/μ} Θ*, E from Θ' = 2E, q = 1.
        let params = ModelParams::new(3, 2.0 / 3.0).unwrap();
        let r = reference(3, 2.0 / 3.0);
        let mu = r.exponents.mu;
        let theta_star = r.theta_star.unwrap();
        let tau0 = 0.3;
        let records: Vec<_> = (0..=100)
            .map(|k| {
                let t = 0.05 * k as f64;
                let theta = (t + tau0).powf(2.0 / mu) * theta_star;
                let entropy = theta / (mu * (t + tau0));
                record(t, theta, entropy, 1.0, 1.0)
            })
            .collect();
        let bounds = delay_upper_bound(&records, params, &r).unwrap();
        assert!((bounds[0] - tau0).abs() < 1e-12);
        for b in &bounds {
            assert!((b - tau0).abs() < 1e-9, "{b}");
        }
    }

    #[test]
    fn lower_bound_degenerates_on_profiles() {
        let params = ModelParams::new(3, 2.0 / 3.0).unwrap();
        let r = reference(3, 2.0 / 3.0);
        let mut rec = record(0.0, r.theta_profile.unwrap(), r.entropy_profile.unwrap(), r.fisher_profile.unwrap(), 1.0);
        rec.h_renyi = r.h_star.unwrap();
        let b = delay_lower_bound(&[rec.clone()], &r, params).unwrap();
        assert_eq!(b.bound, 0.0);
        assert_eq!(b.t_star, None);
        rec.h_renyi *= 0.9;
        rec.fisher *= 1.2;
        let a = delay_lower_bound(&[rec.clone()], &r, params).unwrap();
        assert!(a.bound > 0.0);
        assert_eq!(a, delay_lower_bound(&[rec], &r, params).unwrap());
    }

    proptest! {
        #[test]
        fn envelope_lies_between_one_and_q0(q0 in 1.0f64..5.0, theta0 in 0.1f64..10.0, growth in 1.0f64..100.0) {
            let bar = q_envelope(q0, theta0, theta0 * growth).unwrap();
            prop_assert!(bar >= 1.0 - 1e-15 && bar <= q0 * (1.0 + 1e-15));
        }

        #[test]
        fn scale_inverts_growth_law(t in 0.01f64..100.0) {
            let r = reference(2, 0.75);
            let theta = t.powf(2.0 / r.exponents.mu) * r.theta_star.unwrap();
            prop_assert!((best_match_scale(theta, &r).unwrap() - t).abs() <= 1e-12 * t);
        }
    }
}
