//! Minibatch training loops.
//!
//! [`pretrain`] fits the network to the data alone. [`retrain`] continues from
//! a pre-trained network and jointly learns weights and mixture parameters
//! under `L = L^E + τ L^C`, where `L^C = -log p(w, θ)` is the complexity loss
//! from the mixture prior and its hyper-priors.

use std::fmt::Write as _;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{Batch, Gradients, Network};
use crate::optim::{AdamConfig, AdamState};
use crate::prior::{
    hyper_grads, log_prior, prior_grads, subsampled_prior_grads, HyperPriorConfig, MixtureModel,
    PriorGradients, DEFAULT_VARIANCE_FLOOR,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// L2 penalty on weight matrices (biases are exempt).
    pub weight_decay: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 1e-4,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

/// How the complexity term is weighted against the per-example error loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComplexityScale {
    /// `L^E + (τ / N) L^C`: the full-data objective `N·L^E + τ L^C` divided by
    /// the training-set size `N`, so the minibatch mean error loss keeps its
    /// meaning.
    PerExample,
    /// `L^E + τ L^C` with `τ` applied as-is.
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_means: f64,
    pub lr_log_vars: f64,
    pub lr_logits: f64,
    pub adam: AdamConfig,
    /// Estimate the prior gradient from this many sampled weights per step.
    pub subsample: Option<usize>,
    pub seed: u64,
    pub variance_floor: f64,
    pub complexity_scale: ComplexityScale,
    /// Whether `τ` also multiplies the hyper-prior terms.
    pub tau_on_hyper: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.005,
            epochs: 40,
            batch_size: 128,
            lr_weights: 1e-3,
            lr_means: 5e-4,
            lr_log_vars: 5e-4,
            lr_logits: 5e-4,
            adam: AdamConfig::default(),
            subsample: None,
            seed: 1,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            complexity_scale: ComplexityScale::PerExample,
            tau_on_hyper: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_weights, self.lr_means, self.lr_log_vars, self.lr_logits];
        if lrs.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("learning rates must be positive: {lrs:?}")));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config("variance floor must be positive".into()));
        }
        Ok(())
    }

    /// Multipliers `(on log p(w), on hyper-priors)` for a training set of `n`.
    fn complexity_weights(&self, n: usize) -> (f64, f64) {
        let base = match self.complexity_scale {
            ComplexityScale::PerExample => 1.0 / n as f64,
            ComplexityScale::Flat => 1.0,
        };
        let hyper = if self.tau_on_hyper { self.tau * base } else { base };
        (self.tau * base, hyper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub test_error: Option<f64>,
}

/// One row per epoch: losses, test error, and every component's `(μ, σ², π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub error_loss: f64,
    pub complexity_loss: f64,
    pub test_error: Option<f64>,
    pub components: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,error_loss,complexity_loss,test_error");
        let width = self.rows.iter().map(|r| r.components.len()).max().unwrap_or(0);
        for k in 0..width {
            write!(out, ",mu_{k},var_{k},pi_{k}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{},{},{},", row.epoch, row.error_loss, row.complexity_loss).unwrap();
            if let Some(e) = row.test_error {
                write!(out, "{e}").unwrap();
            }
            for (mu, var, pi) in &row.components {
                write!(out, ",{mu},{var},{pi}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Retrained {
    pub network: Network,
    pub mixture: MixtureModel,
    pub trace: Trace,
    /// Set when the mixture learning rates were halved by the divergence guard.
    pub guard_triggered: bool,
}

fn test_batches(test: Option<&Dataset>) -> Result<Vec<Batch>> {
    match test {
        Some(t) if !t.is_empty() => t.batches(1000),
        _ => Ok(Vec::new()),
    }
}

fn test_error(net: &Network, batches: &[Batch]) -> Result<Option<f64>> {
    if batches.is_empty() {
        Ok(None)
    } else {
        net.evaluate(batches).map(Some)
    }
}

/// Weights and biases of every layer form one Adam group.
struct WeightOptimizer {
    state: AdamState,
}

impl WeightOptimizer {
    fn new(net: &Network, adam: AdamConfig) -> Self {
        let len = net.layers().iter().map(|l| l.weights.len() + l.bias.len()).sum();
        WeightOptimizer {
            state: AdamState::new(len, adam),
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) {
        self.state.begin_step();
        let mut offset = 0;
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            let n = layer.weights.len();
            self.state.update(offset, layer.weights.data_mut(), &grads.weights[li], lr);
            offset += n;
            let n = layer.bias.len();
            self.state.update(offset, layer.bias.data_mut(), &grads.biases[li], lr);
            offset += n;
        }
    }
}

pub fn pretrain(
    net: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &PretrainConfig,
) -> Result<Vec<PretrainEpoch>> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("pre-training needs epochs, batch size and lr > 0".into()));
    }
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = WeightOptimizer::new(net, cfg.adam);
    let test = test_batches(test)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = train.shuffled_order(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.gather(chunk)?;
            let (loss, mut grads) = net.error_loss_and_grad(&batch)?;
            if cfg.weight_decay > 0.0 {
                for (g, layer) in grads.weights.iter_mut().zip(net.layers()) {
                    g.iter_mut()
                        .zip(layer.weights.data())
                        .for_each(|(g, w)| *g += cfg.weight_decay * w);
                }
            }
            opt.step(net, &grads, cfg.lr);
            total += loss;
            steps += 1;
        }
        let test_error = test_error(net, &test)?;
        let loss = total / steps as f64;
        info!(
            "pretrain epoch {:>3}: loss {loss:.5}, test error {}",
            epoch + 1,
            test_error.map_or("-".into(), |e| format!("{:.4}", e))
        );
        history.push(PretrainEpoch {
            epoch: epoch + 1,
            loss,
            test_error,
        });
    }
    Ok(history)
}

/// `L^C = -(log p(w) + log p(θ))` at the current parameters.
pub fn complexity_loss(net: &Network, m: &MixtureModel, h: &HyperPriorConfig) -> Result<f64> {
    let lp = log_prior(&net.flat_weights(), m)?;
    let hyper = hyper_grads(m, h)?.value;
    Ok(-(lp + hyper))
}

/// Gradient of the total objective with respect to every weight, bias and
/// mixture parameter on one batch, as used by a single [`retrain`] step.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub error_loss: f64,
    pub network: Gradients,
    pub means: Vec<f64>,
    pub log_vars: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Exact gradient of `L^E + c·(-log p(w)) + c_h·(-log p(θ))` where the
/// multipliers follow `cfg` for a training set of `train_size` examples.
pub fn objective_gradients(
    net: &Network,
    m: &MixtureModel,
    h: &HyperPriorConfig,
    batch: &Batch,
    cfg: &TrainConfig,
    train_size: usize,
    prior: Option<PriorGradients>,
) -> Result<StepGradients> {
    let (error_loss, mut network) = net.error_loss_and_grad(batch)?;
    let n = m.component_count();
    let (c, c_hyper) = cfg.complexity_weights(train_size);
    let mut means = vec![0.0; n];
    let mut log_vars = vec![0.0; n];
    let mut logits = vec![0.0; n];
    let needs_prior = c != 0.0 || (c_hyper != 0.0 && !h.is_empty());
    if needs_prior {
        let pg = match prior {
            Some(pg) => pg,
            None => prior_grads(&net.flat_weights(), m, &HyperPriorConfig::none())?,
        };
        let hg = hyper_grads(m, h)?;
        let mut offset = 0;
        for g in network.weights.iter_mut() {
            for (gi, pi) in g.iter_mut().zip(&pg.weights[offset..]) {
                *gi -= c * pi;
            }
            offset += g.len();
        }
        for k in 0..n {
            means[k] = -c * pg.means[k];
            log_vars[k] = -c * pg.log_vars[k] - c_hyper * hg.log_vars[k];
            logits[k] = -c * pg.logits[k] - c_hyper * hg.logits[k];
        }
    }
    Ok(StepGradients {
        error_loss,
        network,
        means,
        log_vars,
        logits,
    })
}

/// Joint retraining of weights and mixture under the soft weight-sharing
/// objective. Four Adam groups (weights and biases, means, log-variances,
/// logits) each step with their own learning rate; variances are clamped to
/// the floor after every step.
pub fn retrain(
    mut net: Network,
    mut mixture: MixtureModel,
    hyper: &HyperPriorConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Retrained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if let Some(k) = cfg.subsample {
        if k == 0 || k > net.weight_count() {
            return Err(Error::Config(format!(
                "subsample size {k} must lie in 1..={}",
                net.weight_count()
            )));
        }
    }
    mixture.tau = cfg.tau;
    let n = mixture.component_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weight_opt = WeightOptimizer::new(&net, cfg.adam);
    let mut mean_opt = AdamState::new(n, cfg.adam);
    let mut var_opt = AdamState::new(n, cfg.adam);
    let mut logit_opt = AdamState::new(n, cfg.adam);
    let (c, c_hyper) = cfg.complexity_weights(train.len());
    let needs_prior = c != 0.0 || (c_hyper != 0.0 && !hyper.is_empty());
    let test = test_batches(test)?;

    let mut mixture_lr_scale = 1.0;
    let mut guard_triggered = false;
    let mut trace = Trace::default();
    let mut prev_complexity: Option<f64> = None;
    let mut last_good = (net.clone(), mixture.clone());

    for epoch in 1..=cfg.epochs {
        let order = train.shuffled_order(&mut rng);
        let mut error_total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.gather(chunk)?;
            let prior = if needs_prior {
                let w = net.flat_weights();
                let none = HyperPriorConfig::none();
                Some(match cfg.subsample {
                    Some(k) => subsampled_prior_grads(&w, &mixture, &none, k, &mut rng),
                    None => prior_grads(&w, &mixture, &none),
                })
                .transpose()
            } else {
                Ok(None)
            };
            let step = prior.and_then(|prior| {
                objective_gradients(&net, &mixture, hyper, &batch, cfg, train.len(), prior)
            });
            let step = match step {
                Ok(s) => s,
                Err(Error::Numeric(reason)) => {
                    return Err(Error::Diverged {
                        epoch,
                        reason,
                        last_good: Box::new(last_good),
                    })
                }
                Err(e) => return Err(e),
            };
            weight_opt.step(&mut net, &step.network, cfg.lr_weights);
            {
                let (means, log_vars, logits) = mixture.parameters_mut();
                mean_opt.step(means, &step.means, cfg.lr_means * mixture_lr_scale);
                var_opt.step(log_vars, &step.log_vars, cfg.lr_log_vars * mixture_lr_scale);
                logit_opt.step(logits, &step.logits, cfg.lr_logits * mixture_lr_scale);
            }
            mixture.enforce_invariants(cfg.variance_floor);
            error_total += step.error_loss;
            steps += 1;
        }

        let error_loss = error_total / steps as f64;
        let complexity = complexity_loss(&net, &mixture, hyper);
        let complexity = match complexity {
            Ok(v) if v.is_finite() && error_loss.is_finite() => v,
            Ok(v) => {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite loss (L^E = {error_loss}, L^C = {v})"),
                    last_good: Box::new(last_good),
                })
            }
            Err(e) => {
                return Err(Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                    last_good: Box::new(last_good),
                })
            }
        };
        if let Some(prev) = prev_complexity {
            if !guard_triggered && complexity - prev > 9.0 * prev.abs() {
                warn!(
                    "complexity loss jumped from {prev:.4e} to {complexity:.4e}; halving mixture learning rates"
                );
                mixture_lr_scale = 0.5;
                guard_triggered = true;
            }
        }
        prev_complexity = Some(complexity);

        let test_error = test_error(&net, &test)?;
        let components = mixture
            .means()
            .iter()
            .zip(mixture.variances())
            .zip(mixture.mixing_proportions())
            .map(|((mu, var), pi)| (*mu, var, pi))
            .collect();
        info!(
            "retrain epoch {epoch:>3}: L^E {error_loss:.5}, L^C {complexity:.5e}, test error {}",
            test_error.map_or("-".into(), |e| format!("{:.4}", e))
        );
        trace.rows.push(TraceRow {
            epoch,
            error_loss,
            complexity_loss: complexity,
            test_error,
            components,
        });
        last_good = (net.clone(), mixture.clone());
    }

    Ok(Retrained {
        network: net,
        mixture,
        trace,
        guard_triggered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{init_mixture, GammaPrior, ZeroMixing};
    use rand::Rng;

    fn toy_data(seed: u64, n: usize, width: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::with_capacity(n * width);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.gen_range(0..3);
            for j in 0..width {
                let base = if j % 3 == label { 0.8 } else { 0.1 };
                inputs.push((base + rng.gen_range(-0.1..0.1f64)).clamp(0.0, 1.0));
            }
            labels.push(label);
        }
        Dataset::new(width, inputs, labels).unwrap()
    }

    fn setup() -> (Network, MixtureModel, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Network::random(&[12, 6, 3], &mut rng).unwrap();
        let m = init_mixture(&net.flat_weights(), 4, 0.9, 1e-4).unwrap();
        (net, m, toy_data(1, 64, 12))
    }

    #[test]
    fn pretraining_learns_a_separable_task() {
        let (mut net, _, data) = setup();
        let cfg = PretrainConfig {
            epochs: 20,
            batch_size: 16,
            lr: 1e-2,
            ..PretrainConfig::default()
        };
        let hist = pretrain(&mut net, &data, Some(&data), &cfg).unwrap();
        assert_eq!(hist.len(), 20);
        assert!(hist.last().unwrap().test_error.unwrap() < 0.05);
    }

    #[test]
    fn zero_tau_leaves_the_mixture_untouched() {
        let (net, m, data) = setup();
        let cfg = TrainConfig {
            tau: 0.0,
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = retrain(net.clone(), m.clone(), &HyperPriorConfig::none(), &data, None, &cfg).unwrap();
        assert_eq!(out.mixture.means(), m.means());
        assert_eq!(out.mixture.log_vars(), m.log_vars());
        assert_eq!(out.mixture.logits(), m.logits());
        assert_ne!(out.network, net);

        // Same weights as plain error-loss training with the same Adam settings.
        let mut plain = net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut opt = WeightOptimizer::new(&plain, cfg.adam);
        for _ in 0..cfg.epochs {
            let order = data.shuffled_order(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let (_, g) = plain.error_loss_and_grad(&data.gather(chunk).unwrap()).unwrap();
                opt.step(&mut plain, &g, cfg.lr_weights);
            }
        }
        assert_eq!(out.network, plain);
    }

    #[test]
    fn frozen_weights_pull_means_towards_them() {
        let (net, m, data) = setup();
        let cfg = TrainConfig {
            tau: 1.0,
            epochs: 1,
            batch_size: 64,
            lr_weights: 1e-300,
            complexity_scale: ComplexityScale::Flat,
            ..TrainConfig::default()
        };
        let w = net.flat_weights();
        let pg = prior_grads(&w, &m, &HyperPriorConfig::none()).unwrap();
        let out = retrain(net.clone(), m.clone(), &HyperPriorConfig::none(), &data, None, &cfg).unwrap();
        for (a, b) in out.network.flat_weights().iter().zip(&w) {
            assert!((a - b).abs() < 1e-200);
        }
        for k in 1..m.component_count() {
            let moved = out.mixture.means()[k] - m.means()[k];
            // d log p / d mu_k = sum_i r_ik (w_i - mu_k) / var_k
            if pg.means[k].abs() > 1e-9 {
                assert_eq!(moved.signum(), pg.means[k].signum(), "component {k}");
            }
        }
        assert_eq!(out.mixture.means()[0], 0.0);
    }

    #[test]
    fn fixed_quantities_are_bit_identical_after_training() {
        let (net, m, data) = setup();
        let hyper = HyperPriorConfig {
            gamma_zero: Some(GammaPrior::new(2.0, 1e-3).unwrap()),
            gamma_rest: Some(GammaPrior::new(2.0, 1e-3).unwrap()),
            beta_pi0: None,
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            tau: 0.5,
            ..TrainConfig::default()
        };
        let out = retrain(net, m.clone(), &hyper, &data, Some(&data), &cfg).unwrap();
        assert_eq!(out.mixture.means()[0].to_bits(), 0f64.to_bits());
        assert_eq!(out.mixture.logits()[0].to_bits(), m.logits()[0].to_bits());
        assert_eq!(out.mixture.zero_mixing(), ZeroMixing::Fixed(0.9));
        assert_ne!(out.mixture.means(), m.means());
        let floor = cfg.variance_floor;
        assert!(out.mixture.variances().iter().all(|v| *v >= floor * (1.0 - 1e-12)));
    }

    #[test]
    fn trace_rows_cover_every_epoch_and_component() {
        let (net, m, data) = setup();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let out = retrain(net, m, &HyperPriorConfig::none(), &data, Some(&data), &cfg).unwrap();
        let epochs: Vec<usize> = out.trace.rows.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3]);
        assert!(out.trace.rows.iter().all(|r| r.components.len() == 5 && r.test_error.is_some()));
        let csv = out.trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].split(',').count(), 4 + 3 * 5);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn retraining_is_deterministic_by_seed() {
        let (net, m, data) = setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            subsample: Some(20),
            ..TrainConfig::default()
        };
        let a = retrain(net.clone(), m.clone(), &HyperPriorConfig::none(), &data, None, &cfg).unwrap();
        let b = retrain(net, m, &HyperPriorConfig::none(), &data, None, &cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.mixture, b.mixture);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (net, m, data) = setup();
        let bad = TrainConfig {
            lr_means: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            retrain(net.clone(), m.clone(), &HyperPriorConfig::none(), &data, None, &bad),
            Err(Error::Config(_))
        ));
        let bad = TrainConfig {
            subsample: Some(10_000),
            ..TrainConfig::default()
        };
        assert!(retrain(net, m, &HyperPriorConfig::none(), &data, None, &bad).is_err());
    }

    #[test]
    fn divergence_returns_the_last_good_state() {
        let (mut net, m, data) = setup();
        // Huge first-layer weights overflow the logits into non-finite territory
        // once Adam has nudged them a little further.
        net.layers_mut()[0].weights.data_mut().iter_mut().for_each(|w| *w = 1e307);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        match retrain(net.clone(), m, &HyperPriorConfig::none(), &data, None, &cfg) {
            Err(Error::Diverged { epoch, last_good, .. }) => {
                assert_eq!(epoch, 1);
                assert_eq!(last_good.0, net);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
