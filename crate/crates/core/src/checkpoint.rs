//! Binary checkpoints of a network and, optionally, its mixture prior.
//!
//! Layout (little-endian): `SWSC`, version u16, layer count u16; per layer
//! rows u32, cols u32, activation u8, weights and biases as f64; then a
//! mixture flag u8. With a mixture: component count u16, then mean,
//! log-variance and logit per component, zero-mixing mode u8 (0 fixed,
//! 1 trainable), π₀ f64, τ f64, and three hyper-prior slots (flag u8, α, β).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::le::{ByteReader, PutLe};
use crate::network::{Activation, Layer, Network};
use crate::prior::{BetaPrior, GammaPrior, HyperPriorConfig, MixtureModel, ZeroMixing};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SWSC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub mixture: Option<MixtureModel>,
    pub hyper: HyperPriorConfig,
}

impl Checkpoint {
    pub fn network(network: Network) -> Self {
        Checkpoint {
            network,
            mixture: None,
            hyper: HyperPriorConfig::none(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.put_u16(VERSION);
        out.put_u16(self.network.layers().len() as u16);
        for l in self.network.layers() {
            out.put_u32(l.outputs() as u32);
            out.put_u32(l.inputs() as u32);
            out.put_u8(l.activation.tag());
            for &w in l.weights.data().iter().chain(l.bias.data()) {
                out.put_f64(w);
            }
        }
        match &self.mixture {
            None => out.put_u8(0),
            Some(m) => {
                out.put_u8(1);
                out.put_u16(m.component_count() as u16);
                for k in 0..m.component_count() {
                    out.put_f64(m.means()[k]);
                    out.put_f64(m.log_vars()[k]);
                    out.put_f64(m.logits()[k]);
                }
                match m.zero_mixing() {
                    ZeroMixing::Fixed(pi0) => {
                        out.put_u8(0);
                        out.put_f64(pi0);
                    }
                    ZeroMixing::Trainable => {
                        out.put_u8(1);
                        out.put_f64(m.pi0());
                    }
                }
                out.put_f64(m.tau);
                let h = &self.hyper;
                let slots = [
                    h.gamma_zero.map(|g| (g.alpha, g.beta)),
                    h.gamma_rest.map(|g| (g.alpha, g.beta)),
                    h.beta_pi0.map(|b| (b.alpha, b.beta)),
                ];
                for slot in slots {
                    match slot {
                        None => {
                            out.put_u8(0);
                            out.put_f64(0.0);
                            out.put_f64(0.0);
                        }
                        Some((a, b)) => {
                            out.put_u8(1);
                            out.put_f64(a);
                            out.put_f64(b);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u16()? as usize;
        let mut layers = Vec::with_capacity(count);
        for li in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let activation = Activation::from_tag(r.u8()?)
                .ok_or_else(|| Error::Corrupt(format!("layer {li} has an unknown activation")))?;
            let weights = r.f64s(rows * cols)?;
            let bias = r.f64s(rows)?;
            layers.push(Layer {
                weights: Tensor::new(vec![rows, cols], weights)?,
                bias: Tensor::new(vec![rows], bias)?,
                activation,
            });
        }
        let network = Network::new(layers)?;
        let (mixture, hyper) = match r.u8()? {
            0 => (None, HyperPriorConfig::none()),
            1 => {
                let n = r.u16()? as usize;
                let mut means = Vec::with_capacity(n);
                let mut log_vars = Vec::with_capacity(n);
                let mut logits = Vec::with_capacity(n);
                for _ in 0..n {
                    means.push(r.f64()?);
                    log_vars.push(r.f64()?);
                    logits.push(r.f64()?);
                }
                let mode = r.u8()?;
                let pi0 = r.f64()?;
                let mode = match mode {
                    0 => ZeroMixing::Fixed(pi0),
                    1 => ZeroMixing::Trainable,
                    m => return Err(Error::Corrupt(format!("unknown zero-mixing mode {m}"))),
                };
                let tau = r.f64()?;
                let mut slot = || -> Result<Option<(f64, f64)>> {
                    let flag = r.u8()?;
                    let (a, b) = (r.f64()?, r.f64()?);
                    Ok((flag == 1).then_some((a, b)))
                };
                let (gz, gr, bp) = (slot()?, slot()?, slot()?);
                let hyper = HyperPriorConfig {
                    gamma_zero: gz.map(|(a, b)| GammaPrior::new(a, b)).transpose()?,
                    gamma_rest: gr.map(|(a, b)| GammaPrior::new(a, b)).transpose()?,
                    beta_pi0: bp.map(|(a, b)| BetaPrior::new(a, b)).transpose()?,
                };
                let m = MixtureModel::from_parameters(means, log_vars, logits, mode, tau)?;
                (Some(m), hyper)
            }
            f => return Err(Error::Corrupt(format!("bad mixture flag {f}"))),
        };
        r.finish()?;
        Ok(Checkpoint { network, mixture, hyper })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Corrupt(message) => Error::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}
