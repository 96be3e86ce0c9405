//! Component merging and weight quantization after retraining.

use crate::error::{Error, Result};
use crate::le::{ByteReader, PutLe};
use crate::network::{Activation, Layer, Network};
use crate::prior::{MixtureModel, ZeroMixing};
use crate::tensor::Tensor;

/// Merged means closer to zero than this may fold into the zero component.
pub const ZERO_MERGE_TOLERANCE: f64 = 1e-4;

const QUANTIZED_MAGIC: &[u8; 4] = b"SWSQ";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    /// Pairs whose symmetrised KL divergence is below this are merged.
    pub kl_threshold: f64,
    /// Upper bound on the number of merges.
    pub max_passes: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            kl_threshold: 1e-2,
            max_passes: 64,
        }
    }
}

/// `KL(N(μ_p, σ_p²) ‖ N(μ_q, σ_q²))`.
pub fn kl_gaussian(p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    let ((mu_p, var_p), (mu_q, var_q)) = (p, q);
    if !(var_p > 0.0 && var_q > 0.0) {
        return Err(Error::Domain(format!(
            "KL divergence needs positive variances, got {var_p} and {var_q}"
        )));
    }
    let d = mu_p - mu_q;
    Ok(0.5 * ((var_q / var_p).ln() + (var_p + d * d) / var_q - 1.0))
}

pub fn symmetric_kl(p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    Ok(kl_gaussian(p, q)? + kl_gaussian(q, p)?)
}

/// Merges components `i` and `j`, conserving mixing mass and the π-weighted
/// mean and variance. The merged component takes the lower index.
///
/// The zero component can only absorb a partner when the merged mean stays
/// within [`ZERO_MERGE_TOLERANCE`] of zero; the mean is then reset to 0.
pub fn merge_components(m: &MixtureModel, i: usize, j: usize) -> Result<MixtureModel> {
    let n = m.component_count();
    if i == j || i >= n || j >= n {
        return Err(Error::Input(format!(
            "cannot merge components {i} and {j} of {n}"
        )));
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let mut means = m.means().to_vec();
    let mut vars = m.variances();
    let mut pis = m.mixing_proportions();

    let pi_new = pis[lo] + pis[hi];
    let mut mu_new = (pis[lo] * means[lo] + pis[hi] * means[hi]) / pi_new;
    let var_new = (pis[lo] * vars[lo] + pis[hi] * vars[hi]) / pi_new;
    if lo == 0 {
        if mu_new.abs() >= ZERO_MERGE_TOLERANCE {
            return Err(Error::Domain(format!(
                "merging component {hi} into the zero component would move its mean to {mu_new}"
            )));
        }
        mu_new = 0.0;
    }
    means[lo] = mu_new;
    vars[lo] = var_new;
    pis[lo] = pi_new;
    means.remove(hi);
    vars.remove(hi);
    pis.remove(hi);
    rebuild(m, &means, &vars, &pis)
}

/// New mixture with the same zero-mixing mode and τ from explicit statistics.
fn rebuild(m: &MixtureModel, means: &[f64], vars: &[f64], pis: &[f64]) -> Result<MixtureModel> {
    let log_vars = vars.iter().map(|v| v.ln()).collect();
    let (mode, logits) = match m.zero_mixing() {
        ZeroMixing::Trainable => (ZeroMixing::Trainable, pis.iter().map(|p| p.ln()).collect()),
        ZeroMixing::Fixed(_) => {
            let pi0 = pis[0];
            let rest: f64 = pis[1..].iter().sum();
            let logits = std::iter::once(0.0)
                .chain(pis[1..].iter().map(|p| (p / rest).ln()))
                .collect();
            if means.len() < 2 {
                // Only the zero component is left; keep it as the sole, trainable
                // entry so the proportions still sum to one.
                return MixtureModel::from_parameters(
                    means.to_vec(),
                    log_vars,
                    vec![0.0],
                    ZeroMixing::Trainable,
                    m.tau,
                );
            }
            (ZeroMixing::Fixed(pi0), logits)
        }
    };
    MixtureModel::from_parameters(means.to_vec(), log_vars, logits, mode, m.tau)
}

/// Greedily merges the closest pair (smallest symmetrised KL, ties to the
/// lexicographically lowest index pair) while it is below the threshold.
pub fn merge_pass(m: &MixtureModel, cfg: &MergeConfig) -> Result<MixtureModel> {
    let mut current = m.clone();
    for _ in 0..cfg.max_passes {
        let means = current.means().to_vec();
        let vars = current.variances();
        let pis = current.mixing_proportions();
        let n = means.len();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in i + 1..n {
                let kl = symmetric_kl((means[i], vars[i]), (means[j], vars[j]))?;
                if !(kl < cfg.kl_threshold) {
                    continue;
                }
                if i == 0 {
                    let mu = pis[j] * means[j] / (pis[0] + pis[j]);
                    if mu.abs() >= ZERO_MERGE_TOLERANCE {
                        continue;
                    }
                }
                if best.map_or(true, |(b, _, _)| kl < b) {
                    best = Some((kl, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => current = merge_components(&current, i, j)?,
            None => break,
        }
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub rows: usize,
    pub cols: usize,
    /// Component index per weight, row-major.
    pub assignments: Vec<u16>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl QuantizedLayer {
    pub fn weights(&self, means: &[f64]) -> Vec<f64> {
        self.assignments.iter().map(|&a| means[a as usize]).collect()
    }

    pub fn pruned_fraction(&self) -> f64 {
        if self.assignments.is_empty() {
            return 0.0;
        }
        self.assignments.iter().filter(|a| **a == 0).count() as f64 / self.assignments.len() as f64
    }
}

/// Per-weight component assignments plus the mean table. Component 0 is the
/// zero component, so assignment 0 means the weight is pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub means: Vec<f64>,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedNetwork {
    pub fn validate(&self) -> Result<()> {
        if self.means.first() != Some(&0.0) {
            return Err(Error::Corrupt("mean table must start with the zero component".into()));
        }
        for (li, l) in self.layers.iter().enumerate() {
            if l.assignments.len() != l.rows * l.cols || l.biases.len() != l.rows {
                return Err(Error::Corrupt(format!("layer {li} has inconsistent sizes")));
            }
            if let Some(a) = l.assignments.iter().find(|a| **a as usize >= self.means.len()) {
                return Err(Error::Corrupt(format!(
                    "layer {li} refers to component {a} of {}",
                    self.means.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_network(&self) -> Result<Network> {
        self.validate()?;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weights: Tensor::new(vec![l.rows, l.cols], l.weights(&self.means))?,
                    bias: Tensor::new(vec![l.rows], l.biases.clone())?,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.assignments.len()).sum()
    }

    pub fn pruned_fraction(&self) -> f64 {
        let pruned: usize = self
            .layers
            .iter()
            .map(|l| l.assignments.iter().filter(|a| **a == 0).count())
            .sum();
        pruned as f64 / self.weight_count().max(1) as f64
    }

    /// `SWSQ`, version u16, mean count u16 and means (f64), layer count u16,
    /// assignment width u8 (1 or 2 bytes, the smallest that fits), then per
    /// layer rows u32, cols u32, activation u8, assignments and biases (f64).
    pub fn to_bytes(&self) -> Vec<u8> {
        let width: u8 = if self.means.len() <= 256 { 1 } else { 2 };
        let mut out = Vec::new();
        out.extend_from_slice(QUANTIZED_MAGIC);
        out.put_u16(1);
        out.put_u16(self.means.len() as u16);
        for &m in &self.means {
            out.put_f64(m);
        }
        out.put_u16(self.layers.len() as u16);
        out.put_u8(width);
        for l in &self.layers {
            out.put_u32(l.rows as u32);
            out.put_u32(l.cols as u32);
            out.put_u8(l.activation.tag());
            for &a in &l.assignments {
                match width {
                    1 => out.put_u8(a as u8),
                    _ => out.put_u16(a),
                }
            }
            for &b in &l.biases {
                out.put_f64(b);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "quantized network");
        r.expect_magic(QUANTIZED_MAGIC)?;
        if r.u16()? != 1 {
            return Err(Error::Corrupt("unsupported quantized network version".into()));
        }
        let n = r.u16()? as usize;
        let means = r.f64s(n)?;
        let count = r.u16()? as usize;
        let width = r.u8()?;
        if width != 1 && width != 2 {
            return Err(Error::Corrupt(format!("bad assignment width {width}")));
        }
        let mut layers = Vec::with_capacity(count);
        for li in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let activation = Activation::from_tag(r.u8()?)
                .ok_or_else(|| Error::Corrupt(format!("layer {li} has an unknown activation")))?;
            let assignments = (0..rows * cols)
                .map(|_| if width == 1 { r.u8().map(u16::from) } else { r.u16() })
                .collect::<Result<Vec<_>>>()?;
            let biases = r.f64s(rows)?;
            layers.push(QuantizedLayer {
                rows,
                cols,
                assignments,
                biases,
                activation,
            });
        }
        r.finish()?;
        let q = QuantizedNetwork { means, layers };
        q.validate()?;
        Ok(q)
    }

    /// Components that at least one weight is assigned to.
    pub fn used_components(&self) -> usize {
        let mut used = vec![false; self.means.len()];
        for l in &self.layers {
            for &a in &l.assignments {
                used[a as usize] = true;
            }
        }
        used.iter().filter(|u| **u).count()
    }
}

/// Components whose own mean falls in their own argmax region. A component
/// that is out-voted at its own mean can never be a stable quantisation
/// target: a weight snapped to it would move elsewhere when quantised again.
pub fn self_consistent_components(m: &MixtureModel) -> Vec<bool> {
    let owners = m.argmax_components(m.means());
    owners.iter().enumerate().map(|(k, &o)| o == k).collect()
}

/// For each component, the self-consistent component its mean resolves to by
/// following k -> argmax(mu_k). A chain that closes into a cycle resolves to
/// the lowest index on the cycle.
pub fn stable_targets(m: &MixtureModel) -> Vec<usize> {
    let owners = m.argmax_components(m.means());
    (0..owners.len())
        .map(|start| {
            let mut path = vec![start];
            let mut k = start;
            loop {
                let next = owners[k];
                if next == k {
                    return k;
                }
                if let Some(pos) = path.iter().position(|&p| p == next) {
                    return *path[pos..].iter().min().unwrap();
                }
                path.push(next);
                k = next;
            }
        })
        .collect()
}

/// Snaps every weight to the mean of its most responsible component (ties to
/// the lower index, so towards pruning). A component that is out-voted at its
/// own mean hands its weights on to the component that wins there, see
/// [`stable_targets`]; this makes quantisation idempotent. Biases are copied
/// as-is.
pub fn quantize(net: &Network, m: &MixtureModel) -> Result<QuantizedNetwork> {
    if m.component_count() > u16::MAX as usize + 1 {
        return Err(Error::Config("too many mixture components".into()));
    }
    let targets = stable_targets(m);
    let layers = net
        .layers()
        .iter()
        .map(|l| QuantizedLayer {
            rows: l.outputs(),
            cols: l.inputs(),
            assignments: m
                .argmax_components(l.weights.data())
                .into_iter()
                .map(|k| targets[k] as u16)
                .collect(),
            biases: l.bias.data().to_vec(),
            activation: l.activation,
        })
        .collect();
    Ok(QuantizedNetwork {
        means: m.means().to_vec(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mixture(means: &[f64], vars: &[f64], pis: &[f64]) -> MixtureModel {
        MixtureModel::from_components(means, vars, pis, false, 0.0).unwrap()
    }

    /// Numerical integration of p log(p/q) on a wide grid.
    fn kl_by_quadrature(p: (f64, f64), q: (f64, f64)) -> f64 {
        let pdf = |x: f64, (mu, var): (f64, f64)| {
            (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        let (lo, hi, n) = (-20.0, 20.0, 400_000);
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let x = lo + i as f64 * h;
                let a = pdf(x, p);
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                if a > 0.0 {
                    w * a * (a / pdf(x, q)).ln() * h
                } else {
                    0.0
                }
            })
            .sum()
    }

    #[test]
    fn kl_closed_form_matches_quadrature() {
        assert_eq!(kl_gaussian((0.3, 0.2), (0.3, 0.2)).unwrap(), 0.0);
        let a = kl_gaussian((0.0, 1.0), (1.0, 1.0)).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
        assert!((a - kl_by_quadrature((0.0, 1.0), (1.0, 1.0))).abs() < 1e-8);
        let b = kl_gaussian((0.0, 1.0), (0.0, 4.0)).unwrap();
        assert!((b - (2f64.ln() + 0.125 - 0.5)).abs() < 1e-15);
        assert!((b - 0.318147).abs() < 1e-6);
        assert!((b - kl_by_quadrature((0.0, 1.0), (0.0, 4.0))).abs() < 1e-8);
        assert!(matches!(kl_gaussian((0.0, 0.0), (0.0, 1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn merge_of_hand_computed_pair() {
        // π = (0.3, 0.1), μ = (1, 3), σ² = (0.04, 0.08) over a zero component.
        let m = mixture(&[0.0, 1.0, 3.0], &[0.01, 0.04, 0.08], &[0.6, 0.3, 0.1]);
        let merged = merge_components(&m, 1, 2).unwrap();
        let pis = merged.mixing_proportions();
        assert_eq!(merged.component_count(), 2);
        assert!((pis[1] - 0.4).abs() < 1e-12);
        assert!((merged.means()[1] - 1.5).abs() < 1e-12);
        assert!((merged.variances()[1] - 0.05).abs() < 1e-12);
        assert!((pis.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merging_identical_components_doubles_the_mass() {
        let m = mixture(&[0.0, 0.2, 0.2], &[0.01, 0.02, 0.02], &[0.8, 0.1, 0.1]);
        let merged = merge_components(&m, 2, 1).unwrap();
        assert!((merged.mixing_proportions()[1] - 0.2).abs() < 1e-12);
        assert!((merged.means()[1] - 0.2).abs() < 1e-15);
        assert!((merged.variances()[1] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn zero_component_only_absorbs_near_zero_partners() {
        let m = mixture(&[0.0, 0.5, 0.01], &[0.01, 0.01, 0.01], &[0.9, 0.05, 0.05]);
        assert!(matches!(merge_components(&m, 0, 1), Err(Error::Domain(_))));
        let m = mixture(&[0.0, 0.5, 1e-4], &[0.01, 0.01, 0.01], &[0.9, 0.05, 0.05]);
        let merged = merge_components(&m, 0, 2).unwrap();
        assert_eq!(merged.means()[0], 0.0);
        assert!((merged.pi0() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_changes_nothing() {
        let m = mixture(&[0.0, 0.1, 0.1], &[0.01, 0.01, 0.01], &[0.8, 0.1, 0.1]);
        let cfg = MergeConfig {
            kl_threshold: 0.0,
            ..MergeConfig::default()
        };
        assert_eq!(merge_pass(&m, &cfg).unwrap(), m);
    }

    #[test]
    fn near_identical_pair_merges_exactly_once() {
        let m = mixture(
            &[0.0, 0.30, 0.301, -0.4],
            &[1e-4, 4e-4, 4e-4, 4e-4],
            &[0.7, 0.1, 0.1, 0.1],
        );
        let near = symmetric_kl((0.30, 4e-4), (0.301, 4e-4)).unwrap();
        let far = symmetric_kl((0.30, 4e-4), (-0.4, 4e-4)).unwrap();
        let to_zero = symmetric_kl((0.0, 1e-4), (0.30, 4e-4)).unwrap();
        let threshold = 0.01;
        assert!(near < threshold && far > threshold && to_zero > threshold);
        let out = merge_pass(&m, &MergeConfig { kl_threshold: threshold, max_passes: 10 }).unwrap();
        assert_eq!(out.component_count(), 3);
        assert!((out.means()[1] - 0.3005).abs() < 1e-12);
    }

    #[test]
    fn merge_pass_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut means = vec![0.0];
        means.extend((0..12).map(|_| rng.gen_range(-0.2..0.2)));
        let vars = vec![0.01; 13];
        let pis: Vec<f64> = std::iter::once(0.88).chain(std::iter::repeat(0.01).take(12)).collect();
        let m = mixture(&means, &vars, &pis);
        let cfg = MergeConfig { kl_threshold: 0.5, max_passes: 100 };
        let a = merge_pass(&m, &cfg).unwrap();
        let b = merge_pass(&m, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.component_count() < 13);
    }

    #[test]
    fn weight_at_dominant_mean_is_assigned_to_it() {
        let m = mixture(&[0.0, -0.25, 0.2], &[1e-4, 1e-4, 1e-4], &[0.9, 0.05, 0.05]);
        let mut net = Network::zeros(&[3, 2]).unwrap();
        net.layers_mut()[0]
            .weights
            .data_mut()
            .copy_from_slice(&[0.2, -0.25, 0.0, 0.001, 0.19, -0.3]);
        let q = quantize(&net, &m).unwrap();
        assert_eq!(q.layers[0].assignments, vec![2, 1, 0, 0, 2, 1]);
        let rebuilt = q.to_network().unwrap();
        assert_eq!(
            rebuilt.layers()[0].weights.data(),
            &[0.2, -0.25, 0.0, 0.0, 0.2, -0.25]
        );
    }

    #[test]
    fn weights_in_the_zero_basin_prune_the_layer() {
        let m = mixture(&[0.0, 0.5], &[1e-2, 1e-4], &[0.99, 0.01]);
        let mut net = Network::zeros(&[4, 3]).unwrap();
        net.layers_mut()[0].weights.data_mut().iter_mut().enumerate().for_each(|(i, w)| {
            *w = (i as f64 - 6.0) * 0.01;
        });
        let q = quantize(&net, &m).unwrap();
        assert!(q.layers[0].assignments.iter().all(|a| *a == 0));
        assert_eq!(q.pruned_fraction(), 1.0);
        assert!(q.to_network().unwrap().layers()[0].weights.data().iter().all(|w| *w == 0.0));
    }

    #[test]
    fn assignments_match_brute_force_responsibilities() {
        let means = [0.0, -0.3, -0.12, 0.08, 0.25];
        let vars = [2e-4, 1e-3, 5e-4, 4e-4, 2e-3];
        let pis = [0.8, 0.04, 0.06, 0.07, 0.03];
        let m = mixture(&means, &vars, &pis);
        assert!(self_consistent_components(&m).iter().all(|c| *c));
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut net = Network::zeros(&[10, 10]).unwrap();
        net.layers_mut()[0]
            .weights
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-0.4..0.4));
        let q = quantize(&net, &m).unwrap();
        for (w, a) in net.layers()[0].weights.data().iter().zip(&q.layers[0].assignments) {
            // Direct densities; no log-space tricks.
            let dens: Vec<f64> = (0..5)
                .map(|k| {
                    pis[k] * (-(w - means[k]).powi(2) / (2.0 * vars[k])).exp()
                        / (2.0 * std::f64::consts::PI * vars[k]).sqrt()
                })
                .collect();
            let total: f64 = dens.iter().sum();
            let resp: Vec<f64> = dens.iter().map(|d| d / total).collect();
            let mut best = 0;
            for k in 1..5 {
                if resp[k] > resp[best] {
                    best = k;
                }
            }
            assert_eq!(*a as usize, best, "weight {w}");
        }
    }

    #[test]
    fn out_voted_component_is_never_a_target() {
        // Component 1 is broad and weak: it only wins in the far tails, while
        // its own mean sits inside the zero component's basin.
        let m = mixture(&[0.0, 0.001], &[1e-4, 1.0], &[0.99, 0.01]);
        assert_eq!(self_consistent_components(&m), vec![true, false]);
        let mut net = Network::zeros(&[1, 2]).unwrap();
        net.layers_mut()[0].weights.data_mut().copy_from_slice(&[0.5, -0.5]);
        let q = quantize(&net, &m).unwrap();
        assert_eq!(q.layers[0].assignments, vec![0, 0]);
    }

    #[test]
    fn out_voted_component_hands_weights_to_its_owner() {
        // A broad positive component (3) sits in the basin of a sharp one (2);
        // a tail weight at +0.6 must land on 2, not on the broad negative 1.
        let m = mixture(
            &[0.0, -0.30, 0.20, 0.17],
            &[1.4e-7, 1.7e-2, 4.9e-4, 1.2e-2],
            &[0.9983, 0.0004, 0.0006, 0.0007],
        );
        assert_eq!(stable_targets(&m), vec![0, 1, 2, 2]);
        let mut net = Network::zeros(&[1, 3]).unwrap();
        net.layers_mut()[0].weights.data_mut().copy_from_slice(&[0.6, -0.7, 0.2]);
        let q = quantize(&net, &m).unwrap();
        assert_eq!(q.layers[0].assignments, vec![2, 1, 2]);
    }

    #[test]
    fn serialised_form_uses_one_byte_per_weight_when_possible() {
        let m = mixture(&[0.0, -0.25, 0.2], &[1e-4, 1e-4, 1e-4], &[0.9, 0.05, 0.05]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::random(&[5, 4, 3], &mut rng).unwrap();
        let q = quantize(&net, &m).unwrap();
        let bytes = q.to_bytes();
        let header = 4 + 2 + 2 + 3 * 8 + 2 + 1;
        let per_layer = |r: usize, c: usize| 9 + r * c + 8 * r;
        assert_eq!(bytes.len(), header + per_layer(4, 5) + per_layer(3, 4));
        assert_eq!(QuantizedNetwork::from_bytes(&bytes).unwrap(), q);
        assert!(QuantizedNetwork::from_bytes(&bytes[..bytes.len() - 1]).is_err());

        let mut wide = q.clone();
        wide.means = (0..300).map(|i| i as f64 * 1e-3).collect();
        wide.layers[0].assignments[0] = 299;
        let bytes = wide.to_bytes();
        assert_eq!(QuantizedNetwork::from_bytes(&bytes).unwrap(), wide);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn merge_conserves_moments(
            pa in 1e-6f64..0.5, pb in 1e-6f64..0.5,
            ma in -1.0f64..1.0, mb in -1.0f64..1.0,
            va in 1e-8f64..1.0, vb in 1e-8f64..1.0,
        ) {
            let p0 = 1.0 - pa - pb;
            prop_assume!(p0 > 1e-6);
            let m = mixture(&[0.0, ma, mb], &[0.1, va, vb], &[p0, pa, pb]);
            let (pis, means, vars) = (m.mixing_proportions(), m.means().to_vec(), m.variances());
            let out = merge_components(&m, 1, 2).unwrap();
            let (pn, mn, vn) = (out.mixing_proportions()[1], out.means()[1], out.variances()[1]);
            let tol = 1e-12;
            prop_assert!((pn - (pis[1] + pis[2])).abs() <= tol * pn);
            let first = pis[1] * means[1] + pis[2] * means[2];
            prop_assert!((pn * mn - first).abs() <= tol * (pis[1] * means[1].abs() + pis[2] * means[2].abs()));
            let second = pis[1] * vars[1] + pis[2] * vars[2];
            prop_assert!((pn * vn - second).abs() <= tol * second);
            let before: f64 = pis.iter().sum();
            let after: f64 = out.mixing_proportions().iter().sum();
            prop_assert!((before - after).abs() <= 1e-14);
        }

        #[test]
        fn quantisation_is_idempotent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut means = vec![0.0];
            means.extend((0..6).map(|_| rng.gen_range(-0.5..0.5)));
            let vars: Vec<f64> = (0..7).map(|_| rng.gen_range(1e-5..1e-1)).collect();
            let raw: Vec<f64> = (0..7).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let pis: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let m = mixture(&means, &vars, &pis);
            let mut net = Network::random(&[8, 5, 3], &mut rng).unwrap();
            for l in net.layers_mut() {
                l.weights.data_mut().iter_mut().for_each(|w| *w *= 0.3);
            }
            let q1 = quantize(&net, &m).unwrap();
            let q2 = quantize(&q1.to_network().unwrap(), &m).unwrap();
            prop_assert_eq!(&q1, &q2);
            let distinct: std::collections::BTreeSet<u64> = q1
                .to_network().unwrap().flat_weights().iter().map(|w| w.to_bits()).collect();
            prop_assert!(distinct.len() <= m.component_count());
        }
    }
}
