//! Closed-form Barenblatt profiles, source-type solutions and the reference
//! functionals they induce.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gn;
use crate::grid::sphere_area;
use crate::params::{ExponentSet, ModelParams};
use crate::quadrature;

const QUADRATURE_TOL: f64 = 1e-13;
/// Closed forms and quadrature must agree to this relative tolerance.
pub const CROSS_CHECK_TOL: f64 = 1e-8;

/// `π^{d/2} Γ((d+k)/2) / Γ(d/2)`, i.e. half the sphere area times the Beta prefactor.
fn angular_factor(d: f64, k: f64) -> f64 {
    (0.5 * d * PI.ln() + ln_gamma(0.5 * (d + k)) - ln_gamma(0.5 * d)).exp()
}

/// `∫ |x|^k (C + |x|²)^(-γ) dx` over ℝᵈ, finite for `γ > (d+k)/2`.
fn tail_moment(d: f64, k: f64, gamma: f64, c: f64) -> Option<f64> {
    let a = 0.5 * (d + k);
    (gamma > a).then(|| {
        angular_factor(d, k) * (ln_gamma(gamma - a) - ln_gamma(gamma) + (a - gamma) * c.ln()).exp()
    })
}

/// `∫ |x|^k (C - |x|²)_+^γ dx` over ℝᵈ.
fn compact_moment(d: f64, k: f64, gamma: f64, c: f64) -> f64 {
    let a = 0.5 * (d + k);
    angular_factor(d, k) * (ln_gamma(gamma + 1.0) - ln_gamma(a + gamma + 1.0) + (a + gamma) * c.ln()).exp()
}

/// Profile constant `C*` making `∫ B* = 1`.
pub fn normalization_constant(params: ModelParams) -> Result<f64> {
    params.validate()?;
    let d = params.dim();
    let p = params.p;
    let c = if p < 1.0 {
        let alpha = 1.0 / (1.0 - p);
        let expo = alpha - 0.5 * d;
        let log_rhs = 0.5 * d * PI.ln() + ln_gamma(expo) - ln_gamma(alpha);
        (log_rhs / expo).exp()
    } else {
        let beta = 1.0 / (p - 1.0);
        let expo = beta + 0.5 * d;
        let log_rhs = ln_gamma(beta + 1.0 + 0.5 * d) - ln_gamma(beta + 1.0) - 0.5 * d * PI.ln();
        (log_rhs / expo).exp()
    };
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::Regime(format!("C* is not representable for p = {p}, d = {d}")));
    }
    Ok(c)
}

/// `B*(r)`: `(C - r²)_+^{1/(p-1)}` for `p > 1`, `(C + r²)^{1/(p-1)}` for `p < 1`.
pub fn profile_density(r: f64, params: ModelParams, c_star: f64) -> f64 {
    let p = params.p;
    if p > 1.0 {
        let base = c_star - r * r;
        if base <= 0.0 {
            0.0
        } else {
            base.powf(1.0 / (p - 1.0))
        }
    } else {
        (c_star + r * r).powf(1.0 / (p - 1.0))
    }
}

fn profile_derivative(r: f64, params: ModelParams, c_star: f64) -> f64 {
    let p = params.p;
    let sign = if p > 1.0 { -1.0 } else { 1.0 };
    let base = c_star + sign * r * r;
    if base <= 0.0 {
        return 0.0;
    }
    base.powf(1.0 / (p - 1.0) - 1.0) * sign * 2.0 * r / (p - 1.0)
}

/// A normalized Barenblatt family for fixed `(d, p)`.
#[derive(Debug, Clone, Copy)]
pub struct Barenblatt {
    pub params: ModelParams,
    pub exponents: ExponentSet,
    pub c_star: f64,
}

impl Barenblatt {
    pub fn new(params: ModelParams) -> Result<Self> {
        Ok(Self { params, exponents: params.exponents()?, c_star: normalization_constant(params)? })
    }

    pub fn profile(&self, r: f64) -> f64 {
        profile_density(r, self.params, self.c_star)
    }

    /// Support radius `sqrt(C*)` of `B*` for `p > 1`, infinite otherwise.
    pub fn profile_support(&self) -> f64 {
        if self.params.p > 1.0 {
            self.c_star.sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// Length scale `κ t^{1/μ}` of `U*(t, ·)`.
    pub fn length_scale(&self, t: f64) -> f64 {
        self.exponents.kappa * t.powf(1.0 / self.exponents.mu)
    }

    /// `U*(t, r) = (κ t^{1/μ})^{-d} B*(r / (κ t^{1/μ}))`.
    pub fn self_similar(&self, t: f64, r: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidTime(format!("self-similar solution needs t > 0, got {t}")));
        }
        let scale = self.length_scale(t);
        Ok(scale.powf(-self.params.dim()) * self.profile(r / scale))
    }

    /// Pressure-like weight `(U*^t)^{p-1}` continued as the affine function of `r²`
    /// it equals on the support (no positive part for `p > 1`).
    pub fn pressure_extension(&self, t: f64, r: f64) -> f64 {
        let p = self.params.p;
        let scale = self.length_scale(t);
        let sign = if p > 1.0 { -1.0 } else { 1.0 };
        let x = r / scale;
        scale.powf(-self.params.dim() * (p - 1.0)) * (self.c_star + sign * x * x)
    }

    /// Radial quadrature `∫_{ℝᵈ} g(|x|) dx` through a trigonometric substitution
    /// that removes the free boundary (`p > 1`) or the infinite tail (`p < 1`).
    pub fn radial_quadrature<F: Fn(f64) -> f64>(&self, g: F) -> Result<f64> {
        self.scaled_quadrature(1.0, g)
    }

    /// As [`Self::radial_quadrature`] for functions living on `U*(t, ·)`.
    pub fn self_similar_quadrature<F: Fn(f64) -> f64>(&self, t: f64, g: F) -> Result<f64> {
        self.scaled_quadrature(self.length_scale(t), g)
    }

    fn scaled_quadrature<F: Fn(f64) -> f64>(&self, scale: f64, g: F) -> Result<f64> {
        let d = self.params.dim();
        let area = sphere_area(self.params.d);
        let root = scale * self.c_star.sqrt();
        let value = if self.params.p > 1.0 {
            quadrature::integrate(
                |phi: f64| {
                    let r = root * phi.sin();
                    r.powf(d - 1.0) * g(r) * root * phi.cos()
                },
                0.0,
                FRAC_PI_2,
                QUADRATURE_TOL,
            )?
        } else {
            // r = √C cot ψ keeps the tail end near ψ = 0 representable; the
            // part beyond r ≈ 1e80 √C is dropped.
            quadrature::integrate(
                |psi: f64| {
                    let (s, c) = psi.sin_cos();
                    let r = root * c / s;
                    r.powf(d - 1.0) * g(r) * root / (s * s)
                },
                1e-80,
                FRAC_PI_2,
                QUADRATURE_TOL,
            )?
        };
        Ok(area * value)
    }
}

/// Closed-form reference values of the normalized Barenblatt profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarenblattReference {
    pub params: ModelParams,
    pub exponents: ExponentSet,
    pub c_star: f64,
    /// `Θ[B*] = (1/d) ∫ |x|² B*`.
    pub theta_profile: Option<f64>,
    /// `E[B*] = ∫ B*^p`.
    pub entropy_profile: Option<f64>,
    /// `I[B*] = ∫ B* |∇v|²`.
    pub fisher_profile: Option<f64>,
    /// `Θ[B*]^{d(p-1)/2} E[B*]`.
    pub h_star: Option<f64>,
    /// `E[B*]^{σ-1} I[B*]`.
    pub j_star: Option<f64>,
    /// `κ² Θ[B*]`, the moment of `U*(1, ·)`.
    pub theta_star: Option<f64>,
    /// Optimal Gagliardo–Nirenberg constant, when the conversion applies.
    pub c_gn: Option<f64>,
    /// `J*^{θ/2}`, the normalization without the `(2p/(2p-1))²` factor.
    pub c_gn_asymptote_form: Option<f64>,
    /// Normalization carrying the prefactor `4p²/((p-1)²(2p-1)²)`.
    pub c_gn_prefactor_form: Option<f64>,
    /// Largest relative gap between closed forms and adaptive quadrature.
    pub quadrature_discrepancy: f64,
}

impl BarenblattReference {
    fn missing(&self, what: &str) -> Error {
        Error::MomentsDiverge(format!(
            "{what} of B* diverges for d = {}, p = {} (needs p > d/(d+2))",
            self.params.d, self.params.p
        ))
    }

    pub fn theta_star(&self) -> Result<f64> {
        self.theta_star.ok_or_else(|| self.missing("the second moment"))
    }

    pub fn h_star(&self) -> Result<f64> {
        self.h_star.ok_or_else(|| self.missing("the Rényi entropy power"))
    }

    pub fn j_star(&self) -> Result<f64> {
        self.j_star.ok_or_else(|| self.missing("the entropy production"))
    }

    pub fn family(&self) -> Barenblatt {
        Barenblatt { params: self.params, exponents: self.exponents, c_star: self.c_star }
    }

    /// `q* = Θ I / (d E²)` of the profile.
    pub fn q_star(&self) -> Option<f64> {
        Some(
            self.theta_profile? * self.fisher_profile?
                / (self.params.dim() * self.entropy_profile?.powi(2)),
        )
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Builds every reference value from closed forms and cross-checks each one
/// against adaptive quadrature.
pub fn reference_functionals(params: ModelParams) -> Result<BarenblattReference> {
    let family = Barenblatt::new(params)?;
    let exps = family.exponents;
    let d = params.dim();
    let p = params.p;
    let c = family.c_star;

    let mut discrepancy = rel_gap(family.radial_quadrature(|r| family.profile(r))?, 1.0);

    let (theta, entropy) = if p < 1.0 {
        let alpha = 1.0 / (1.0 - p);
        (tail_moment(d, 2.0, alpha, c).map(|m| m / d), tail_moment(d, 0.0, p * alpha, c))
    } else {
        let beta = 1.0 / (p - 1.0);
        (Some(compact_moment(d, 2.0, beta, c) / d), Some(compact_moment(d, 0.0, p * beta, c)))
    };
    let (theta, entropy) = match (theta, entropy, exps.moments_finite) {
        (Some(t), Some(e), true) => (Some(t), Some(e)),
        _ => (None, None),
    };

    let mut reference = BarenblattReference {
        params,
        exponents: exps,
        c_star: c,
        theta_profile: None,
        entropy_profile: None,
        fisher_profile: None,
        h_star: None,
        j_star: None,
        theta_star: None,
        c_gn: None,
        c_gn_asymptote_form: None,
        c_gn_prefactor_form: None,
        quadrature_discrepancy: discrepancy,
    };
    let (Some(theta), Some(entropy)) = (theta, entropy) else {
        if discrepancy > CROSS_CHECK_TOL {
            return Err(Error::Numerical(format!("C* quadrature mismatch {discrepancy:e}")));
        }
        return Ok(reference);
    };

    // v = p/(p-1) B^{p-1} is quadratic in |x|, so |∇v|² = (2p/(p-1))² |x|².
    let pressure_slope = 2.0 * p / (p - 1.0);
    let fisher = pressure_slope * pressure_slope * d * theta;

    let theta_q = family.radial_quadrature(|r| r * r * family.profile(r))? / d;
    let entropy_q = family.radial_quadrature(|r| family.profile(r).powf(p))?;
    let fisher_q = family.radial_quadrature(|r| {
        let b = family.profile(r);
        if b <= 0.0 {
            return 0.0;
        }
        let dv = p * b.powf(p - 2.0) * profile_derivative(r, params, c);
        b * dv * dv
    })?;
    discrepancy = discrepancy
        .max(rel_gap(theta, theta_q))
        .max(rel_gap(entropy, entropy_q))
        .max(rel_gap(fisher, fisher_q));
    if discrepancy > CROSS_CHECK_TOL {
        return Err(Error::Numerical(format!(
            "closed form vs quadrature mismatch {discrepancy:e} for d = {}, p = {p}",
            params.d
        )));
    }

    let h_star = theta.powf(0.5 * d * (p - 1.0)) * entropy;
    let j_star = entropy.powf(exps.sigma - 1.0) * fisher;
    reference.theta_profile = Some(theta);
    reference.entropy_profile = Some(entropy);
    reference.fisher_profile = Some(fisher);
    reference.h_star = Some(h_star);
    reference.j_star = Some(j_star);
    reference.theta_star = Some(exps.kappa * exps.kappa * theta);
    reference.quadrature_discrepancy = discrepancy;

    if let Some(gn) = gn::GnParams::for_model(params).ok() {
        let half_theta = 0.5 * gn.theta;
        reference.c_gn = Some((j_star / gn::fisher_w_factor(p)).powf(half_theta));
        reference.c_gn_asymptote_form = Some(j_star.powf(half_theta));
        let prefactor = 4.0 * p * p / ((p - 1.0).powi(2) * (2.0 * p - 1.0).powi(2));
        reference.c_gn_prefactor_form = Some((prefactor * j_star).powf(half_theta));
    }
    Ok(reference)
}
