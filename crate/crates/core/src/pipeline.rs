//! The full compression run: pre-train, retrain under the mixture prior,
//! merge, quantize, encode and evaluate, writing every artifact to the
//! output directory as soon as it exists.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::codec::{decode_network, encode_network, CompressionReport};
use crate::config::ExperimentConfig;
use crate::data::{load_mnist, Dataset, MnistDataset};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::postprocess::{merge_pass, quantize, QuantizedNetwork};
use crate::prior::{init_mixture, MixtureModel};
use crate::trainer::{pretrain, retrain, Retrained};

pub const PRETRAINED_FILE: &str = "pretrained.swsc";
pub const MODEL_FILE: &str = "model.swsc";
pub const TRACE_FILE: &str = "trace.csv";
pub const QUANTIZED_FILE: &str = "quantized.bin";
pub const BLOB_FILE: &str = "weights.swsb";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.txt";

const EVAL_BATCH: usize = 1000;

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn artifact(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

/// MNIST from `cfg.data_dir`, cut to `cfg.train_subset` training examples.
pub fn load_data(cfg: &ExperimentConfig) -> Result<MnistDataset> {
    let mut data = load_mnist(&cfg.data_dir)?;
    if cfg.train_subset > 0 {
        data.train = data.train.truncated(cfg.train_subset);
    }
    Ok(data)
}

pub fn test_error(net: &Network, test: &Dataset) -> Result<f64> {
    net.evaluate(&test.batches(EVAL_BATCH)?)
}

/// Trains a freshly initialised network of `cfg.layers`.
pub fn pretrain_network(cfg: &ExperimentConfig, data: &MnistDataset) -> Result<Network> {
    let cfg = cfg.clone().seeded();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::random(&cfg.layers, &mut rng)?;
    if net.input_width() != data.train.width() {
        return Err(Error::Config(format!(
            "network expects {} inputs but the data has {}",
            net.input_width(),
            data.train.width()
        )));
    }
    pretrain(&mut net, &data.train, Some(&data.test), &cfg.pretrain)?;
    Ok(net)
}

pub fn initial_mixture(cfg: &ExperimentConfig, pretrained: &Network) -> Result<MixtureModel> {
    let m = init_mixture(
        &pretrained.flat_weights(),
        cfg.components,
        cfg.pi0,
        cfg.pretrain.weight_decay,
    )?;
    if cfg.pi0_trainable {
        MixtureModel::from_components(m.means(), &m.variances(), &m.mixing_proportions(), true, 0.0)
    } else {
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct Compressed {
    pub retrained: Retrained,
    pub merged: MixtureModel,
    pub quantized: QuantizedNetwork,
}

/// Retraining followed by merging and quantisation.
pub fn compress(cfg: &ExperimentConfig, data: &MnistDataset, pretrained: &Network) -> Result<Compressed> {
    let cfg = cfg.clone().seeded();
    let mixture = stage("init", initial_mixture(&cfg, pretrained))?;
    let retrained = stage(
        "retrain",
        retrain(
            pretrained.clone(),
            mixture,
            &cfg.hyper,
            &data.train,
            Some(&data.test),
            &cfg.train,
        ),
    )?;
    let merged = stage("merge", merge_pass(&retrained.mixture, &cfg.merge))?;
    info!(
        "merged {} components into {}",
        retrained.mixture.component_count(),
        merged.component_count()
    );
    let quantized = stage("quantize", quantize(&retrained.network, &merged))?;
    Ok(Compressed {
        retrained,
        merged,
        quantized,
    })
}

/// Encodes a quantized network and fills in the error rates: before is the
/// `reference` network, after is the decoded blob.
pub fn encode_and_evaluate(
    cfg: &ExperimentConfig,
    q: &QuantizedNetwork,
    reference: Option<&Network>,
    test: Option<&Dataset>,
) -> Result<(Vec<u8>, CompressionReport)> {
    let (blob, mut report) = stage("encode", encode_network(q, cfg.p_fc, cfg.p_conv))?;
    if let Some(test) = test {
        let decoded = stage("decode", decode_network(&blob))?;
        report.error_after = Some(stage("evaluate", test_error(&decoded, test))?);
        if let Some(net) = reference {
            report.error_before = Some(stage("evaluate", test_error(net, test))?);
        }
    }
    Ok((blob, report))
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: CompressionReport,
    pub pretrained_error: f64,
    pub retrained_error: f64,
    pub guard_triggered: bool,
    pub seconds: f64,
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = stage("data", load_data(cfg))?;
    run_with_data(cfg, &data)
}

/// Runs every stage on already loaded data.
pub fn run_with_data(cfg: &ExperimentConfig, data: &MnistDataset) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write(&artifact(cfg, CONFIG_FILE), cfg.to_text())?;

    let pretrained = match &cfg.pretrained {
        Some(path) => stage("pretrain", Checkpoint::load(path))?.network,
        None => {
            let net = stage("pretrain", pretrain_network(cfg, data))?;
            stage("pretrain", Checkpoint::network(net.clone()).save(&artifact(cfg, PRETRAINED_FILE)))?;
            net
        }
    };
    let pretrained_error = stage("evaluate", test_error(&pretrained, &data.test))?;
    info!("pre-trained test error {:.4}", pretrained_error);

    let c = compress(cfg, data, &pretrained)?;
    let model = Checkpoint {
        network: c.retrained.network.clone(),
        mixture: Some(c.retrained.mixture.clone()),
        hyper: cfg.hyper,
    };
    stage("retrain", model.save(&artifact(cfg, MODEL_FILE)))?;
    stage("retrain", write(&artifact(cfg, TRACE_FILE), c.retrained.trace.to_csv()))?;
    stage("quantize", write(&artifact(cfg, QUANTIZED_FILE), c.quantized.to_bytes()))?;
    let retrained_error = stage("evaluate", test_error(&c.retrained.network, &data.test))?;

    let (blob, mut report) = encode_and_evaluate(cfg, &c.quantized, Some(&pretrained), Some(&data.test))?;
    report.components = Some(c.merged.component_count());
    stage("encode", write(&artifact(cfg, BLOB_FILE), &blob))?;
    stage("encode", write(&artifact(cfg, REPORT_FILE), report.to_json()?))?;
    info!(
        "error {:.4} -> {:.4}, CR {:.1}, pruned {:.2}%",
        pretrained_error,
        report.error_after.unwrap_or(f64::NAN),
        report.compression_rate,
        report.pruned_percent
    );
    Ok(Outcome {
        report,
        pretrained_error,
        retrained_error,
        guard_triggered: c.retrained.guard_triggered,
        seconds: start.elapsed().as_secs_f64(),
    })
}
