//! Model parameters `(d, p)` and every exponent derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension and diffusion exponent of `u_t = Δ(u^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `p > 1`: compactly supported solutions with a free boundary.
    PorousMedium,
    /// `1 - 2/d < p < 1`: positive solutions with power-law tails.
    FastDiffusion,
}

/// Constants derived from `(d, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    /// `2 + d (p - 1)`, the self-similar time exponent.
    pub mu: f64,
    /// `d (1 - p)`.
    pub eta: f64,
    /// `2 / (d (1 - p)) - 1`, the power making `E^sigma` grow linearly on Barenblatt solutions.
    pub sigma: f64,
    /// `|2 mu p / (p - 1)|^(1/mu)`.
    pub kappa: f64,
    /// Gagliardo–Nirenberg index `1 / (2p - 1)`, only for `p > 1/2`.
    pub gn_q: Option<f64>,
    pub regime: Regime,
    pub theorem1_valid: bool,
    pub theorem2_valid: bool,
    pub moments_finite: bool,
}

impl ModelParams {
    pub fn new(d: usize, p: f64) -> Result<Self> {
        let params = Self { d, p };
        params.validate()?;
        Ok(params)
    }

    pub fn dim(&self) -> f64 {
        self.d as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::ParameterDomain(format!("dimension d = {} must be >= 1", self.d)));
        }
        if !self.p.is_finite() || self.p <= 0.0 {
            return Err(Error::ParameterDomain(format!("exponent p = {} must be > 0", self.p)));
        }
        if self.p == 1.0 {
            return Err(Error::ParameterDomain("p = 1 (heat equation) is excluded".into()));
        }
        let critical = 1.0 - 2.0 / self.dim();
        if self.p <= critical {
            return Err(Error::Regime(format!(
                "p = {} <= 1 - 2/d = {critical}: no normalizable Barenblatt profile",
                self.p
            )));
        }
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        if self.p > 1.0 {
            Regime::PorousMedium
        } else {
            Regime::FastDiffusion
        }
    }

    pub fn exponents(&self) -> Result<ExponentSet> {
        derive_exponents(self.d, self.p)
    }
}

/// Slack on inclusive thresholds such as `p ≥ 1 - 1/d`, so that `p = 2.0/3.0`
/// counts as the `d = 3` endpoint despite rounding.
pub const THRESHOLD_EPS: f64 = 1e-12;

/// Validates `(d, p)` and derives all exponents and regime flags.
pub fn derive_exponents(d: usize, p: f64) -> Result<ExponentSet> {
    let params = ModelParams::new(d, p)?;
    let df = params.dim();
    let mu = 2.0 + df * (p - 1.0);
    let eta = df * (1.0 - p);
    let sigma = 2.0 / (df * (1.0 - p)) - 1.0;
    let kappa = (2.0 * mu * p / (p - 1.0)).abs().powf(1.0 / mu);
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Regime(format!(
            "self-similar length scale κ is not representable for d = {d}, p = {p} (μ = {mu:e})"
        )));
    }
    let gn_q = (p > 0.5).then(|| 1.0 / (2.0 * p - 1.0));
    let theorem1_valid = if d > 1 { p >= 1.0 - 1.0 / df - THRESHOLD_EPS } else { p > 0.0 };
    let theorem2_valid = p >= 1.0 - 2.0 / df - THRESHOLD_EPS;
    // Tail of B* decays like r^(2/(p-1)); the second moment needs 2/(1-p) > d + 2.
    let moments_finite = p > 1.0 || p > df / (df + 2.0);
    Ok(ExponentSet {
        mu,
        eta,
        sigma,
        kappa,
        gn_q,
        regime: params.regime(),
        theorem1_valid,
        theorem2_valid,
        moments_finite,
    })
}
