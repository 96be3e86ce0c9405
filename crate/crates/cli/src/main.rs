use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use sws_core::checkpoint::Checkpoint;
use sws_core::codec::{decode_network, CompressionReport};
use sws_core::config::ExperimentConfig;
use sws_core::network::Network;
use sws_core::pipeline::{self, artifact};
use sws_core::postprocess::QuantizedNetwork;
use sws_core::Error;

#[derive(Parser)]
#[command(name = "sws", version, about = "Compress dense classifiers with soft weight-sharing")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. --set train.tau=0.01
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense network and save pretrained.swsc.
    Pretrain,
    /// Retrain under the mixture prior, merge and quantize.
    Compress {
        /// Pre-trained checkpoint (default: the configured one, else the output directory's).
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Encode a quantized network into weights.swsb and report.json.
    Encode {
        #[arg(long)]
        quantized: Option<PathBuf>,
        /// Skip loading the test set for error rates.
        #[arg(long)]
        no_eval: bool,
    },
    /// Test error of a checkpoint, quantized network or encoded blob.
    Eval { path: PathBuf },
    /// Summarise a report.json.
    Report { path: Option<PathBuf> },
    /// Every stage in sequence.
    Run,
    /// Print the resolved configuration.
    Config,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Diverged { .. } | Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Any of the three model formats, recognised by magic bytes.
fn load_any(path: &Path) -> Result<Network, Error> {
    let bytes = read(path)?;
    let with_path = |e: Error| match e {
        Error::Corrupt(message) => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    };
    match bytes.get(..4) {
        Some(b"SWSC") => Ok(Checkpoint::from_bytes(&bytes).map_err(with_path)?.network),
        Some(b"SWSQ") => QuantizedNetwork::from_bytes(&bytes)
            .and_then(|q| q.to_network())
            .map_err(with_path),
        Some(b"SWSB") => decode_network(&bytes).map_err(with_path),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: "not a checkpoint, quantized network or weight blob".into(),
        }),
    }
}

fn summary(r: &CompressionReport) -> String {
    let pct = |e: Option<f64>| e.map_or("-".into(), |e| format!("{:.2}%", 100.0 * e));
    let mut s = format!(
        "{:<6} {:>9} {:>9} {:>8} {:>9} {:>8}\n",
        "layer", "weights", "nonzero", "pruned", "bits", "CR"
    );
    for (i, l) in r.layers.iter().enumerate() {
        s += &format!(
            "{:<6} {:>9} {:>9} {:>7.2}% {:>9} {:>8.1}\n",
            i, l.weights, l.nonzero, l.pruned_percent, l.total_bits, l.compression_rate
        );
    }
    s += &format!(
        "{:<6} {:>9} {:>9} {:>7.2}% {:>9} {:>8.1}\n",
        "total", r.weights, r.nonzero, r.pruned_percent, r.total_bits, r.compression_rate
    );
    s += &format!(
        "CR without tables and headers: {:.1}\nerror: {} -> {}\n",
        r.compression_rate_without_overhead,
        pct(r.error_before),
        pct(r.error_after)
    );
    if let Some(c) = r.components {
        s += &format!("mixture components after merging: {c}\n");
    }
    s
}

fn pretrained_path(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.pretrained.clone())
        .unwrap_or_else(|| artifact(cfg, pipeline::PRETRAINED_FILE))
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Config => print!("{}", cfg.to_text()),
        Command::Pretrain => {
            let data = pipeline::load_data(&cfg)?;
            let net = pipeline::pretrain_network(&cfg, &data)?;
            let err = pipeline::test_error(&net, &data.test)?;
            let path = artifact(&cfg, pipeline::PRETRAINED_FILE);
            write(&path, Checkpoint::network(net).to_bytes())?;
            println!("test error {:.2}%, saved {}", 100.0 * err, path.display());
        }
        Command::Compress { pretrained } => {
            let path = pretrained_path(&cfg, pretrained);
            let net = Checkpoint::load(&path)?.network;
            let data = pipeline::load_data(&cfg)?;
            let c = pipeline::compress(&cfg, &data, &net)?;
            let model = Checkpoint {
                network: c.retrained.network.clone(),
                mixture: Some(c.retrained.mixture.clone()),
                hyper: cfg.hyper,
            };
            write(&artifact(&cfg, pipeline::MODEL_FILE), model.to_bytes())?;
            write(&artifact(&cfg, pipeline::TRACE_FILE), c.retrained.trace.to_csv())?;
            write(&artifact(&cfg, pipeline::QUANTIZED_FILE), c.quantized.to_bytes())?;
            println!(
                "{} components after merging, {:.2}% of weights pruned",
                c.merged.component_count(),
                100.0 * c.quantized.pruned_fraction()
            );
        }
        Command::Encode { quantized, no_eval } => {
            let path = quantized.unwrap_or_else(|| artifact(&cfg, pipeline::QUANTIZED_FILE));
            let q = QuantizedNetwork::from_bytes(&read(&path)?).map_err(|e| Error::Format {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let data = if no_eval { None } else { Some(pipeline::load_data(&cfg)?) };
            let reference = match &data {
                Some(_) => {
                    let p = pretrained_path(&cfg, None);
                    p.exists().then(|| Checkpoint::load(&p)).transpose()?.map(|c| c.network)
                }
                None => None,
            };
            let (blob, report) =
                pipeline::encode_and_evaluate(&cfg, &q, reference.as_ref(), data.as_ref().map(|d| &d.test))?;
            write(&artifact(&cfg, pipeline::BLOB_FILE), &blob)?;
            write(&artifact(&cfg, pipeline::REPORT_FILE), report.to_json()?)?;
            print!("{}", summary(&report));
        }
        Command::Eval { path } => {
            let net = load_any(&path)?;
            let data = pipeline::load_data(&cfg)?;
            let err = pipeline::test_error(&net, &data.test)?;
            println!("test error {:.2}% ({} examples)", 100.0 * err, data.test.len());
        }
        Command::Report { path } => {
            let path = path.unwrap_or_else(|| artifact(&cfg, pipeline::REPORT_FILE));
            let text = String::from_utf8_lossy(&read(&path)?).into_owned();
            print!("{}", summary(&CompressionReport::from_json(&text)?));
        }
        Command::Run => {
            let outcome = pipeline::run_pipeline(&cfg)?;
            print!("{}", summary(&outcome.report));
            println!("finished in {:.0} s", outcome.seconds);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
