//! Training-option resolution: command-line flags override the optional
//! `key = value` config file, which overrides built-in defaults.

use std::collections::HashMap;
use std::path::Path;

use firmclass::train::{ModelKind, TrainConfig};
use firmclass::{Error, Result};

use crate::TrainOpts;

/// Parses a plain `key = value` file. Blank lines and `#` comments are
/// skipped; unknown keys are rejected so typos don't silently fall back to
/// defaults.
fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    const KNOWN: &[&str] = &[
        "model",
        "epochs",
        "batch-size",
        "learning-rate",
        "seed",
        "dimension",
        "heads",
        "dropout",
        "focal-level",
        "val-fraction",
    ];
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        if !KNOWN.contains(&key) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("unknown option '{key}'"),
            });
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn file_value<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|_| {
            Error::Config(format!("config file option '{key}' has invalid value '{raw}'"))
        }),
    }
}

/// Resolved options plus whether the focal level was set explicitly (as
/// opposed to defaulted); an unset focal level follows the dataset.
pub struct Resolved {
    pub cfg: TrainConfig,
    pub focal_explicit: bool,
}

pub fn resolve(opts: &TrainOpts) -> Result<Resolved> {
    let file = match &opts.config {
        Some(path) => parse_config_file(path)?,
        None => HashMap::new(),
    };
    let mut cfg = TrainConfig::default();
    let model = match &opts.model {
        Some(m) => Some(m.clone()),
        None => file.get("model").cloned(),
    };
    if let Some(m) = model {
        cfg.kind = ModelKind::parse(&m)?;
    }
    cfg.epochs = opts.epochs.or(file_value(&file, "epochs")?).unwrap_or(cfg.epochs);
    cfg.batch_size = opts
        .batch_size
        .or(file_value(&file, "batch-size")?)
        .unwrap_or(cfg.batch_size);
    cfg.learning_rate = opts
        .learning_rate
        .or(file_value(&file, "learning-rate")?)
        .unwrap_or(cfg.learning_rate);
    cfg.seed = opts.seed.or(file_value(&file, "seed")?).unwrap_or(cfg.seed);
    cfg.dimension = opts
        .dimension
        .or(file_value(&file, "dimension")?)
        .unwrap_or(cfg.dimension);
    cfg.heads = opts.heads.or(file_value(&file, "heads")?).unwrap_or(cfg.heads);
    cfg.dropout = opts
        .dropout
        .or(file_value(&file, "dropout")?)
        .unwrap_or(cfg.dropout);
    let focal = opts.focal_level.or(file_value(&file, "focal-level")?);
    let focal_explicit = focal.is_some();
    cfg.focal_level = focal.unwrap_or(cfg.focal_level);
    cfg.val_fraction = opts
        .val_fraction
        .or(file_value(&file, "val-fraction")?)
        .unwrap_or(cfg.val_fraction);
    Ok(Resolved { cfg, focal_explicit })
}

/// Parses "0..10" as a half-open range or "3,7,11" as an explicit list.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    let seeds: Vec<u64> = if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range '{spec}'")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range '{spec}'")))?;
        (lo..hi).collect()
    } else {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed '{s}'")))
            })
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "epochs = 7\nlearning-rate = 0.5\n# note\n").unwrap();
        let opts = TrainOpts {
            epochs: Some(3),
            config: Some(path),
            ..TrainOpts::default()
        };
        let resolved = resolve(&opts).unwrap();
        assert_eq!(resolved.cfg.epochs, 3); // flag wins
        assert_eq!(resolved.cfg.learning_rate, 0.5); // file wins over default
        assert_eq!(resolved.cfg.batch_size, TrainConfig::default().batch_size);
        assert!(!resolved.focal_explicit);
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "epoch = 7\n").unwrap();
        let opts = TrainOpts {
            config: Some(path),
            ..TrainOpts::default()
        };
        assert!(resolve(&opts).is_err());
    }

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("5,9").unwrap(), vec![5, 9]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("3..3").is_err());
    }
}
