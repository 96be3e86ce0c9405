//! Factorised mixture-of-Gaussians prior over all network weights.
//!
//! Component 0 is the zero component: its mean is pinned to exactly 0 and
//! weights it claims are pruned. Components `1..=J` are free. Variances are
//! held as log-variances and mixing proportions as logits so that every
//! trainable quantity is unconstrained.
//!
//! With a fixed `π₀` the free proportions are `(1 - π₀) · softmax(logits[1..])`
//! and `logits[0]` is unused. With a trainable `π₀` all `J + 1` proportions
//! come from one softmax over every logit.

pub mod hyper;

use log::{debug, warn};
use rand::seq::index;
use rand::Rng;

pub use hyper::{BetaPrior, GammaPrior, HyperPriorConfig};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroMixing {
    Fixed(f64),
    Trainable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    means: Vec<f64>,
    log_vars: Vec<f64>,
    logits: Vec<f64>,
    zero_mixing: ZeroMixing,
    /// Complexity-loss weight.
    pub tau: f64,
}

/// Gradients of `log p(w) + log p(θ)` (hyper-priors) for every quantity.
///
/// Parameter vectors use the mixture layout: index 0 is the zero component,
/// so `logits[0]` carries the `π₀` logit gradient. Fixed quantities get 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGradients {
    pub log_prior: f64,
    pub hyper: f64,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub log_vars: Vec<f64>,
    pub logits: Vec<f64>,
}

impl PriorGradients {
    pub fn value(&self) -> f64 {
        self.log_prior + self.hyper
    }
}

/// Posterior component probabilities, one row of `J + 1` entries per weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    components: usize,
    data: Vec<f64>,
}

impl Responsibilities {
    pub fn len(&self) -> usize {
        self.data.len() / self.components
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.components..(i + 1) * self.components]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.components)
    }
}

/// Per-component constants of `log π_k N(w | μ_k, σ_k²)`.
struct Kernel {
    offset: Vec<f64>,
    means: Vec<f64>,
    inv_var: Vec<f64>,
}

impl Kernel {
    fn new(m: &MixtureModel) -> Self {
        let log_pi = m.log_mixing();
        let offset = log_pi
            .iter()
            .zip(&m.log_vars)
            .map(|(lp, rho)| lp - HALF_LN_2PI - 0.5 * rho)
            .collect();
        Kernel {
            offset,
            means: m.means.clone(),
            inv_var: m.log_vars.iter().map(|r| (-r).exp()).collect(),
        }
    }

    #[inline]
    fn terms(&self, w: f64, out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for k in 0..out.len() {
            let d = w - self.means[k];
            let a = self.offset[k] - 0.5 * d * d * self.inv_var[k];
            out[k] = a;
            if a > max {
                max = a;
            }
        }
        max
    }

    /// Fills `out` with responsibilities and returns `log Σ_k π_k N(w | ·)`.
    #[inline]
    fn responsibilities(&self, w: f64, out: &mut [f64]) -> f64 {
        let max = self.terms(w, out);
        let mut sum = 0.0;
        for a in out.iter_mut() {
            *a = (*a - max).exp();
            sum += *a;
        }
        let inv = 1.0 / sum;
        out.iter_mut().for_each(|r| *r *= inv);
        max + sum.ln()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl MixtureModel {
    /// Builds a mixture from explicit component statistics. Index 0 is the
    /// zero component and must have mean 0; `proportions` must sum to 1.
    pub fn from_components(
        means: &[f64],
        variances: &[f64],
        proportions: &[f64],
        zero_trainable: bool,
        tau: f64,
    ) -> Result<Self> {
        let n = means.len();
        if n == 0 || variances.len() != n || proportions.len() != n {
            return Err(Error::Config(format!(
                "component arrays disagree in length ({}, {}, {})",
                n,
                variances.len(),
                proportions.len()
            )));
        }
        if means[0] != 0.0 {
            return Err(Error::Config("zero component mean must be exactly 0".into()));
        }
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("variance {v} is not positive")));
        }
        if proportions.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("mixing proportions must be positive".into()));
        }
        let total: f64 = proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixing proportions sum to {total}, not 1")));
        }
        let pi0 = proportions[0];
        let (zero_mixing, logits) = if zero_trainable {
            (ZeroMixing::Trainable, proportions.iter().map(|p| p.ln()).collect())
        } else {
            if !(pi0 < 1.0) || n < 2 {
                return Err(Error::Config(
                    "a fixed zero proportion needs pi0 < 1 and at least one free component".into(),
                ));
            }
            let rest = 1.0 - pi0;
            let mut logits: Vec<f64> = proportions.iter().map(|p| (p / rest).ln()).collect();
            logits[0] = 0.0;
            (ZeroMixing::Fixed(pi0), logits)
        };
        Ok(MixtureModel {
            means: means.to_vec(),
            log_vars: variances.iter().map(|v| v.ln()).collect(),
            logits,
            zero_mixing,
            tau,
        })
    }

    /// Raw constructor over the internal parameterisation.
    pub fn from_parameters(
        means: Vec<f64>,
        log_vars: Vec<f64>,
        logits: Vec<f64>,
        zero_mixing: ZeroMixing,
        tau: f64,
    ) -> Result<Self> {
        let n = means.len();
        if n == 0 || log_vars.len() != n || logits.len() != n {
            return Err(Error::Config("component arrays disagree in length".into()));
        }
        if means[0] != 0.0 {
            return Err(Error::Config("zero component mean must be exactly 0".into()));
        }
        if let ZeroMixing::Fixed(pi0) = zero_mixing {
            if !(pi0 > 0.0 && pi0 < 1.0) || n < 2 {
                return Err(Error::Config(format!("fixed pi0 {pi0} must lie in (0, 1)")));
            }
        }
        let all = means.iter().chain(&log_vars).chain(&logits);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("mixture parameters must be finite".into()));
        }
        Ok(MixtureModel {
            means,
            log_vars,
            logits,
            zero_mixing,
            tau,
        })
    }

    /// Total component count `J + 1`.
    pub fn component_count(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn log_vars(&self) -> &[f64] {
        &self.log_vars
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn zero_mixing(&self) -> ZeroMixing {
        self.zero_mixing
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_vars.iter().map(|r| r.exp()).collect()
    }

    pub fn log_mixing(&self) -> Vec<f64> {
        match self.zero_mixing {
            ZeroMixing::Fixed(pi0) => {
                let lse = log_sum_exp(&self.logits[1..]);
                let rest = (1.0 - pi0).ln();
                std::iter::once(pi0.ln())
                    .chain(self.logits[1..].iter().map(|l| rest + l - lse))
                    .collect()
            }
            ZeroMixing::Trainable => {
                let lse = log_sum_exp(&self.logits);
                self.logits.iter().map(|l| l - lse).collect()
            }
        }
    }

    pub fn mixing_proportions(&self) -> Vec<f64> {
        self.log_mixing().into_iter().map(f64::exp).collect()
    }

    pub fn pi0(&self) -> f64 {
        self.log_mixing()[0].exp()
    }

    /// Mutable views of the trainable parameter groups: means, log-variances,
    /// logits. Callers must follow up with [`MixtureModel::enforce_invariants`].
    pub fn parameters_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.means, &mut self.log_vars, &mut self.logits)
    }

    /// Pins the zero mean and clamps every variance to at least `floor`.
    pub fn enforce_invariants(&mut self, variance_floor: f64) {
        self.means[0] = 0.0;
        let min_log_var = variance_floor.ln();
        for rho in &mut self.log_vars {
            if *rho < min_log_var {
                *rho = min_log_var;
            }
        }
    }

    /// `log π_k + log N(w | μ_k, σ_k²)` for every component.
    pub fn log_joint_terms(&self, w: f64) -> Vec<f64> {
        let kernel = Kernel::new(self);
        let mut out = vec![0.0; self.component_count()];
        kernel.terms(w, &mut out);
        out
    }

    /// Index of the component with the largest responsibility for each weight.
    /// Ties go to the lower index.
    pub fn argmax_components(&self, weights: &[f64]) -> Vec<usize> {
        self.argmax_among(weights, &vec![true; self.component_count()])
    }

    /// Like [`MixtureModel::argmax_components`] but restricted to `allowed`.
    pub fn argmax_among(&self, weights: &[f64], allowed: &[bool]) -> Vec<usize> {
        let kernel = Kernel::new(self);
        let mut buf = vec![0.0; self.component_count()];
        weights
            .iter()
            .map(|&w| {
                kernel.terms(w, &mut buf);
                let mut best = usize::MAX;
                for k in 0..buf.len() {
                    if allowed[k] && (best == usize::MAX || buf[k] > buf[best]) {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Evenly spaces `J` free means over the range of the pre-trained weights
/// (both endpoints included) and gives them equal shares of `1 - π₀`.
///
/// Initial variances are chosen so neighbouring components overlap:
/// `σ² = (range / J)² / 4`, shared by all components including the zero one.
pub fn init_mixture(
    pretrained: &[f64],
    free_components: usize,
    pi0: f64,
    weight_decay: f64,
) -> Result<MixtureModel> {
    if free_components == 0 {
        return Err(Error::Config("need at least one free component".into()));
    }
    if pretrained.is_empty() {
        return Err(Error::Config("cannot initialise a mixture from zero weights".into()));
    }
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return Err(Error::Config(format!("pi0 must lie in (0, 1), got {pi0}")));
    }
    let (mut lo, mut hi) = pretrained
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numeric("pre-trained weights contain non-finite values".into()));
    }
    if lo == hi {
        warn!("pre-trained weights are all {lo}; widening the mixture range by 1e-2");
        lo -= 1e-2;
        hi += 1e-2;
    }
    let j = free_components;
    let range = hi - lo;
    let variance = (range / j as f64).powi(2) / 4.0;
    if weight_decay > 0.0 {
        debug!(
            "initial component variance {variance:e}; weight decay {weight_decay:e} corresponds to a prior std of {:e} per unit loss",
            (1.0 / weight_decay).sqrt()
        );
    }
    let mut means = vec![0.0; j + 1];
    for (k, m) in means.iter_mut().skip(1).enumerate() {
        *m = if j == 1 {
            lo
        } else {
            lo + range * k as f64 / (j - 1) as f64
        };
    }
    let log_vars = vec![variance.ln(); j + 1];
    // Equal logits give the free components (1 - π₀)/J each.
    let logits = vec![0.0; j + 1];
    MixtureModel::from_parameters(means, log_vars, logits, ZeroMixing::Fixed(pi0), 0.0)
}

/// `Σ_i log Σ_k π_k N(w_i | μ_k, σ_k²)`.
pub fn log_prior(weights: &[f64], m: &MixtureModel) -> Result<f64> {
    let kernel = Kernel::new(m);
    let mut buf = vec![0.0; m.component_count()];
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let max = kernel.terms(w, &mut buf);
        let lp = max + buf.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
        if !lp.is_finite() {
            return Err(Error::Numeric(format!(
                "log prior of weight {i} (value {w}) is not finite"
            )));
        }
        total += lp;
    }
    Ok(total)
}

pub fn responsibilities(weights: &[f64], m: &MixtureModel) -> Responsibilities {
    let kernel = Kernel::new(m);
    let k = m.component_count();
    let mut data = vec![0.0; weights.len() * k];
    for (w, row) in weights.iter().zip(data.chunks_exact_mut(k)) {
        kernel.responsibilities(*w, row);
    }
    Responsibilities { components: k, data }
}

/// Sum of the enabled hyper-prior log-densities.
pub fn hyper_log_density(m: &MixtureModel, h: &HyperPriorConfig) -> Result<f64> {
    Ok(hyper_grads(m, h)?.value)
}

/// Hyper-prior log-density and its gradients in log-variances and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGradients {
    pub value: f64,
    pub log_vars: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn hyper_grads(m: &MixtureModel, h: &HyperPriorConfig) -> Result<HyperGradients> {
    let n = m.component_count();
    let mut value = 0.0;
    let mut g_rho = vec![0.0; n];
    let mut g_logit = vec![0.0; n];
    for (k, &rho) in m.log_vars.iter().enumerate() {
        let prior = if k == 0 { h.gamma_zero } else { h.gamma_rest };
        if let Some(g) = prior {
            let (v, d) = g.log_density_in_log_var(rho);
            value += v;
            g_rho[k] += d;
        }
    }
    if let Some(b) = h.beta_pi0 {
        let pis = m.mixing_proportions();
        let pi0 = pis[0];
        value += b.log_density(pi0)?;
        if m.zero_mixing == ZeroMixing::Trainable {
            let outer = b.dlog_density(pi0) * pi0;
            for (k, g) in g_logit.iter_mut().enumerate() {
                let delta = if k == 0 { 1.0 } else { 0.0 };
                *g += outer * (delta - pis[k]);
            }
        }
    }
    Ok(HyperGradients {
        value,
        log_vars: g_rho,
        logits: g_logit,
    })
}

/// Exact gradients of `log p(w) + log p(θ)`.
pub fn prior_grads(weights: &[f64], m: &MixtureModel, h: &HyperPriorConfig) -> Result<PriorGradients> {
    accumulate(weights, 0..weights.len(), 1.0, m, h)
}

/// Unbiased estimate of [`prior_grads`] from `sample_size` weights drawn
/// uniformly without replacement, scaled by `I / K`. Hyper-prior terms are
/// exact.
pub fn subsampled_prior_grads<R: Rng + ?Sized>(
    weights: &[f64],
    m: &MixtureModel,
    h: &HyperPriorConfig,
    sample_size: usize,
    rng: &mut R,
) -> Result<PriorGradients> {
    let total = weights.len();
    if sample_size == 0 || sample_size > total {
        return Err(Error::Config(format!(
            "subsample size {sample_size} must lie in 1..={total}"
        )));
    }
    if sample_size == total {
        return prior_grads(weights, m, h);
    }
    let mut picked = index::sample(rng, total, sample_size).into_vec();
    // Sorted order keeps the floating-point summation reproducible.
    picked.sort_unstable();
    accumulate(weights, picked, total as f64 / sample_size as f64, m, h)
}

fn accumulate(
    weights: &[f64],
    indices: impl IntoIterator<Item = usize>,
    scale: f64,
    m: &MixtureModel,
    h: &HyperPriorConfig,
) -> Result<PriorGradients> {
    let n = m.component_count();
    let kernel = Kernel::new(m);
    let mut r = vec![0.0; n];
    let mut g_w = vec![0.0; weights.len()];
    let mut g_mu = vec![0.0; n];
    let mut g_rho = vec![0.0; n];
    let mut resp_mass = vec![0.0; n];
    let mut log_prior = 0.0;

    for i in indices {
        let w = weights[i];
        let lp = kernel.responsibilities(w, &mut r);
        if !lp.is_finite() {
            return Err(Error::Numeric(format!(
                "log prior of weight {i} (value {w}) is not finite"
            )));
        }
        log_prior += lp;
        let mut gw = 0.0;
        for k in 0..n {
            let d = w - kernel.means[k];
            let rs = r[k] * kernel.inv_var[k];
            gw -= rs * d;
            g_mu[k] += rs * d;
            g_rho[k] += 0.5 * r[k] * (d * d * kernel.inv_var[k] - 1.0);
            resp_mass[k] += r[k];
        }
        g_w[i] = scale * gw;
    }
    log_prior *= scale;
    for v in g_mu.iter_mut().chain(g_rho.iter_mut()).chain(resp_mass.iter_mut()) {
        *v *= scale;
    }
    g_mu[0] = 0.0;

    let pis = m.mixing_proportions();
    let mut g_logit = vec![0.0; n];
    match m.zero_mixing {
        ZeroMixing::Fixed(pi0) => {
            let free_mass: f64 = resp_mass[1..].iter().sum();
            for k in 1..n {
                let share = pis[k] / (1.0 - pi0);
                g_logit[k] = resp_mass[k] - share * free_mass;
            }
        }
        ZeroMixing::Trainable => {
            let mass: f64 = resp_mass.iter().sum();
            for k in 0..n {
                g_logit[k] = resp_mass[k] - pis[k] * mass;
            }
        }
    }

    let hyper = hyper_grads(m, h)?;
    for k in 0..n {
        g_rho[k] += hyper.log_vars[k];
        g_logit[k] += hyper.logits[k];
    }

    Ok(PriorGradients {
        log_prior,
        hyper: hyper.value,
        weights: g_w,
        means: g_mu,
        log_vars: g_rho,
        logits: g_logit,
    })
}
