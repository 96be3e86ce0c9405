//! Gamma hyper-priors on component precisions and a Beta hyper-prior on the
//! zero component's mixing proportion.

use libm::lgamma;

use crate::error::{Error, Result};

/// `Gamma(λ | α, β)` with rate `β`, placed on a precision `λ = 1/σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl GammaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Config(format!(
                "gamma prior needs alpha, beta > 0 (got {alpha}, {beta})"
            )));
        }
        Ok(GammaPrior { alpha, beta })
    }

    /// Prior whose mode sits at `precision` with the given shape `α > 1`.
    pub fn with_mode(precision: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) || !(precision > 0.0) {
            return Err(Error::Config(format!(
                "mode targeting needs alpha > 1 and a positive precision (got {alpha}, {precision})"
            )));
        }
        GammaPrior::new(alpha, (alpha - 1.0) / precision)
    }

    pub fn mode(&self) -> f64 {
        (self.alpha - 1.0) / self.beta
    }

    pub fn variance(&self) -> f64 {
        self.alpha / (self.beta * self.beta)
    }

    pub fn log_density(&self, precision: f64) -> f64 {
        self.alpha * self.beta.ln() - lgamma(self.alpha) + (self.alpha - 1.0) * precision.ln()
            - self.beta * precision
    }

    /// Log-density evaluated at `λ = exp(-ρ)` and its derivative in `ρ`.
    ///
    /// The density is that of `λ`; no change-of-variables term is added.
    pub fn log_density_in_log_var(&self, log_var: f64) -> (f64, f64) {
        let precision = (-log_var).exp();
        let value = self.alpha * self.beta.ln() - lgamma(self.alpha)
            - (self.alpha - 1.0) * log_var
            - self.beta * precision;
        let grad = -(self.alpha - 1.0) + self.beta * precision;
        (value, grad)
    }
}

/// `Beta(π₀ | α, β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta prior needs alpha, beta > 0 (got {alpha}, {beta})"
            )));
        }
        Ok(BetaPrior { alpha, beta })
    }

    /// Prior with mode `mode` and pseudo-count `α + β`.
    pub fn with_mode(mode: f64, pseudo_count: f64) -> Result<Self> {
        if !(mode > 0.0 && mode < 1.0) || !(pseudo_count > 2.0) {
            return Err(Error::Config(format!(
                "beta mode must lie in (0, 1) with pseudo-count > 2 (got {mode}, {pseudo_count})"
            )));
        }
        let alpha = 1.0 + mode * (pseudo_count - 2.0);
        BetaPrior::new(alpha, pseudo_count - alpha)
    }

    pub fn mode(&self) -> f64 {
        (self.alpha - 1.0) / (self.alpha + self.beta - 2.0)
    }

    pub fn log_density(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("beta density needs p in (0, 1), got {p}")));
        }
        Ok(lgamma(self.alpha + self.beta) - lgamma(self.alpha) - lgamma(self.beta)
            + (self.alpha - 1.0) * p.ln()
            + (self.beta - 1.0) * (1.0 - p).ln())
    }

    /// `d/dp log B(p | α, β)`.
    pub fn dlog_density(&self, p: f64) -> f64 {
        (self.alpha - 1.0) / p - (self.beta - 1.0) / (1.0 - p)
    }
}

/// Which hyper-priors are active. `None` disables the term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperPriorConfig {
    /// On the zero component's precision.
    pub gamma_zero: Option<GammaPrior>,
    /// Shared by every non-zero component's precision.
    pub gamma_rest: Option<GammaPrior>,
    /// On `π₀`; only has a gradient when `π₀` is trainable.
    pub beta_pi0: Option<BetaPrior>,
}

impl HyperPriorConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_zero.is_none() && self.gamma_rest.is_none() && self.beta_pi0.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_mode_hits_precision_target() {
        let g = GammaPrior::new(401.0, 1.0).unwrap();
        assert_eq!(g.mode(), 400.0);
        assert!((1.0 / (0.05f64 * 0.05) - 400.0).abs() < 1e-9);
        let g = GammaPrior::with_mode(400.0, 50.0).unwrap();
        assert!((g.mode() - 400.0).abs() < 1e-12);
    }

    #[test]
    fn beta_mode_from_pseudo_count() {
        let b = BetaPrior::with_mode(0.9, 102.0).unwrap();
        assert!((b.alpha - 91.0).abs() < 1e-12);
        assert!((b.beta - 11.0).abs() < 1e-12);
        assert!((b.mode() - 0.9).abs() < 1e-12);
        assert_eq!(BetaPrior::new(91.0, 11.0).unwrap().mode(), 0.9);
    }

    #[test]
    fn gamma_density_integrates_to_one() {
        let g = GammaPrior::new(3.0, 2.0).unwrap();
        let h = 1e-4;
        let total: f64 = (1..200_000)
            .map(|i| (g.log_density(i as f64 * h)).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn beta_density_matches_closed_form_and_rejects_boundary() {
        let b = BetaPrior::new(2.0, 2.0).unwrap();
        // Beta(2,2) = 6 p (1-p)
        assert!((b.log_density(0.3).unwrap() - (6.0f64 * 0.3 * 0.7).ln()).abs() < 1e-12);
        assert!(matches!(b.log_density(0.0), Err(Error::Domain(_))));
        assert!(matches!(b.log_density(1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn log_var_parameterisation_agrees_with_precision_form() {
        let g = GammaPrior::new(5.0, 0.01).unwrap();
        let rho: f64 = -6.0;
        let (v, d) = g.log_density_in_log_var(rho);
        assert!((v - g.log_density((-rho).exp())).abs() < 1e-9);
        let h = 1e-6;
        let fd = (g.log_density_in_log_var(rho + h).0 - g.log_density_in_log_var(rho - h).0) / (2.0 * h);
        assert!((fd - d).abs() / (fd.abs() + 1e-8) < 1e-6);
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        assert!(GammaPrior::new(0.0, 1.0).is_err());
        assert!(GammaPrior::with_mode(400.0, 1.0).is_err());
        assert!(BetaPrior::with_mode(1.0, 10.0).is_err());
    }
}
