//! Run configuration with three-level precedence:
//! command-line flag > config-file key > built-in default.
//!
//! Config files are flat `key=value` lines; `#` starts a comment.

use anyhow::{bail, Context, Result};
use conrep_core::encoder::EncoderConfig;
use conrep_core::trainer::TrainConfig;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub dropout: Option<f64>,
    pub dev_interval: Option<usize>,
    pub vocab_size: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub out_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {:?}", i + 1, line);
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(v) => match v.parse() {
            Ok(parsed) => Ok(Some(parsed)),
            Err(e) => bail!("config key {key}: cannot parse {v:?}: {e}"),
        },
    }
}

/// Builds the effective config: defaults, then config-file keys, then flags.
pub fn resolve(config_file: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();

    if let Some(path) = config_file {
        let map = parse_config_file(path)?;
        let known = [
            "seed", "batch", "lr", "epochs", "tau", "lambda", "dropout", "dev_interval",
            "vocab_size", "embed_dim", "hidden_dim", "hidden_layers", "out_dim",
        ];
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                bail!("config key {key:?} is not recognized");
            }
        }
        apply(&mut cfg, &Overrides {
            seed: get(&map, "seed")?,
            batch: get(&map, "batch")?,
            lr: get(&map, "lr")?,
            epochs: get(&map, "epochs")?,
            tau: get(&map, "tau")?,
            lambda: get(&map, "lambda")?,
            dropout: get(&map, "dropout")?,
            dev_interval: get(&map, "dev_interval")?,
            vocab_size: get(&map, "vocab_size")?,
            embed_dim: get(&map, "embed_dim")?,
            hidden_dim: get(&map, "hidden_dim")?,
            hidden_layers: get(&map, "hidden_layers")?,
            out_dim: get(&map, "out_dim")?,
        });
    }
    apply(&mut cfg, flags);

    cfg.train.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    cfg.encoder.dropout_p = cfg.train.dropout_p;
    cfg.encoder.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(v) = o.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = o.batch {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.tau {
        cfg.train.temperature = v;
    }
    if let Some(v) = o.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = o.dropout {
        cfg.train.dropout_p = v;
    }
    if let Some(v) = o.dev_interval {
        cfg.train.dev_interval = v;
    }
    if let Some(v) = o.vocab_size {
        cfg.encoder.vocab_size = v;
    }
    if let Some(v) = o.embed_dim {
        cfg.encoder.embed_dim = v;
    }
    if let Some(v) = o.hidden_dim {
        cfg.encoder.hidden_dim = v;
    }
    if let Some(v) = o.hidden_layers {
        cfg.encoder.hidden_layers = v;
    }
    if let Some(v) = o.out_dim {
        cfg.encoder.out_dim = v;
    }
}

/// key=value echo of the effective config, written into each run's output
/// directory so results are reproducible from artifacts alone.
pub fn echo(cfg: &RunConfig) -> String {
    format!(
        "seed={}\nbatch={}\nlr={}\nepochs={}\ntau={}\nlambda={}\ndropout={}\ndev_interval={}\nvocab_size={}\nembed_dim={}\nhidden_dim={}\nhidden_layers={}\nout_dim={}\n",
        cfg.train.seed,
        cfg.train.batch_size,
        cfg.train.learning_rate,
        cfg.train.epochs,
        cfg.train.temperature,
        cfg.train.lambda,
        cfg.train.dropout_p,
        cfg.train.dev_interval,
        cfg.encoder.vocab_size,
        cfg.encoder.embed_dim,
        cfg.encoder.hidden_dim,
        cfg.encoder.hidden_layers,
        cfg.encoder.out_dim,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn precedence_flag_over_file_over_default() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "lr=0.01\nlambda=1.5").unwrap();
        let flags = Overrides {
            lambda: Some(2.5),
            ..Overrides::default()
        };
        let cfg = resolve(Some(f.path()), &flags).unwrap();
        assert_eq!(cfg.train.lambda, 2.5); // flag wins
        assert_eq!(cfg.train.learning_rate, 0.01); // file wins over default
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size); // default
    }

    #[test]
    fn unknown_key_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "learning=0.01").unwrap();
        assert!(resolve(Some(f.path()), &Overrides::default()).is_err());
    }

    #[test]
    fn bad_value_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "lr=fast").unwrap();
        assert!(resolve(Some(f.path()), &Overrides::default()).is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let flags = Overrides {
            tau: Some(-1.0),
            ..Overrides::default()
        };
        assert!(resolve(None, &flags).is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# a comment\n\nseed=42").unwrap();
        let cfg = resolve(Some(f.path()), &Overrides::default()).unwrap();
        assert_eq!(cfg.train.seed, 42);
    }
}
