use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::{Activation, ModelConfig};
use crate::walker::WalkStrategy;

use super::TrainError;

/// Environment variable that replaces the master seed of a config file.
pub const SEED_ENV: &str = "RAWGNN_SEED";

/// `(p, q)` of one walk channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub p: f64,
    pub q: f64,
}

/// Everything that determines an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: PathBuf,
    pub name: String,
    pub channels: Vec<Channel>,
    pub path_length: usize,
    pub walks_per_node: usize,
    pub hidden: usize,
    pub heads: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub activation: Activation,
    pub share_params: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub n_splits: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    /// Read splits from this file instead of drawing them.
    pub splits_file: Option<PathBuf>,
    /// Neighborhood samples averaged per evaluation.
    pub eval_samples: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            dataset: PathBuf::new(),
            name: String::new(),
            channels: vec![
                Channel {
                    name: "bfs".into(),
                    p: 0.1,
                    q: 10.0,
                },
                Channel {
                    name: "dfs".into(),
                    p: 10.0,
                    q: 0.1,
                },
            ],
            path_length: 4,
            walks_per_node: 6,
            hidden: 32,
            heads: 2,
            lr: 0.05,
            weight_decay: 5e-4,
            dropout: 0.5,
            leaky_slope: 0.2,
            activation: Activation::Elu,
            share_params: false,
            max_epochs: 500,
            patience: 100,
            seed: 0,
            n_splits: 10,
            train_ratio: 0.48,
            val_ratio: 0.32,
            splits_file: None,
            eval_samples: 1,
        }
    }
}

/// Keys accepted by [`ExperimentSpec::set`], besides `<channel>_p` and `<channel>_q`.
pub const KEYS: &[&str] = &[
    "dataset",
    "name",
    "strategies",
    "path_length",
    "walks_per_node",
    "hidden",
    "heads",
    "lr",
    "weight_decay",
    "dropout",
    "leaky_slope",
    "activation",
    "share_params",
    "max_epochs",
    "patience",
    "seed",
    "n_splits",
    "train_ratio",
    "val_ratio",
    "splits_file",
    "eval_samples",
];

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, TrainError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TrainError::Config(format!("line {}: expected `key = value`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| TrainError::Config(format!("{key} = {value}: {e}")))
}

impl ExperimentSpec {
    /// Applies settings in order; later entries win.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (String, String)>) -> Result<Self, TrainError> {
        let mut spec = ExperimentSpec::default();
        for (k, v) in pairs {
            spec.set(k, v)?;
        }
        Ok(spec)
    }

    /// Resolves a config file, then the seed variable, then command-line
    /// overrides. Keys may use `-` in place of `_`.
    pub fn resolve(
        file: &[(String, String)],
        env_seed: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self, TrainError> {
        let mut spec = ExperimentSpec::from_pairs(file)?;
        if let Some(seed) = env_seed {
            spec.set("seed", seed)?;
        }
        for (k, v) in overrides {
            spec.set(k, v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let key = key.replace('-', "_");
        let key = key.as_str();
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "name" => self.name = value.to_string(),
            "strategies" => {
                let names: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                let old = std::mem::take(&mut self.channels);
                for name in names {
                    let known = old.iter().find(|c| c.name == name).cloned().or_else(|| preset(name));
                    self.channels.push(known.unwrap_or(Channel {
                        name: name.to_string(),
                        p: f64::NAN,
                        q: f64::NAN,
                    }));
                }
            }
            "path_length" => self.path_length = parse(key, value)?,
            "walks_per_node" => self.walks_per_node = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "activation" => self.activation = parse(key, value)?,
            "share_params" => self.share_params = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "n_splits" => self.n_splits = parse(key, value)?,
            "train_ratio" => self.train_ratio = parse(key, value)?,
            "val_ratio" => self.val_ratio = parse(key, value)?,
            "splits_file" => self.splits_file = (!value.is_empty()).then(|| PathBuf::from(value)),
            "eval_samples" => self.eval_samples = parse(key, value)?,
            _ => {
                let (channel, field) = key
                    .rsplit_once('_')
                    .filter(|(_, f)| *f == "p" || *f == "q")
                    .ok_or_else(|| TrainError::Config(format!("unknown key `{key}`")))?;
                let c = self
                    .channels
                    .iter_mut()
                    .find(|c| c.name == channel)
                    .ok_or_else(|| TrainError::Config(format!("`{key}` names no configured strategy")))?;
                let v: f64 = parse(key, value)?;
                if field == "p" {
                    c.p = v;
                } else {
                    c.q = v;
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.channels.is_empty() {
            return bad("no strategies".into());
        }
        if self.path_length < 2 {
            return bad(format!("path_length {} is below 2", self.path_length));
        }
        for (name, v) in [
            ("walks_per_node", self.walks_per_node),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("n_splits", self.n_splits),
            ("eval_samples", self.eval_samples),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.train_ratio > 0.0 && self.val_ratio > 0.0 && self.train_ratio + self.val_ratio < 1.0) {
            return bad(format!("ratios {} / {} leave no test part", self.train_ratio, self.val_ratio));
        }
        for ws in self.walk_strategies_unchecked() {
            ws.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn walk_strategies_unchecked(&self) -> Vec<WalkStrategy> {
        self.channels
            .iter()
            .map(|c| WalkStrategy {
                name: c.name.clone(),
                p: c.p,
                q: c.q,
                length: self.path_length,
                walks_per_node: self.walks_per_node,
            })
            .collect()
    }

    pub fn walk_strategies(&self) -> Result<Vec<WalkStrategy>, TrainError> {
        self.validate()?;
        Ok(self.walk_strategies_unchecked())
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden,
            heads: self.heads,
            strategies: self.channels.iter().map(|c| c.name.clone()).collect(),
            num_classes,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            activation: self.activation,
            share_params: self.share_params,
        }
    }

    /// This experiment as `key = value` lines that [`parse_config`] reads back.
    pub fn to_config(&self) -> String {
        let mut lines = vec![
            format!("dataset = {}", self.dataset.display()),
            format!("name = {}", self.name),
            format!(
                "strategies = {}",
                self.channels.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(",")
            ),
        ];
        for c in &self.channels {
            lines.push(format!("{}_p = {}", c.name, c.p));
            lines.push(format!("{}_q = {}", c.name, c.q));
        }
        lines.extend([
            format!("path_length = {}", self.path_length),
            format!("walks_per_node = {}", self.walks_per_node),
            format!("hidden = {}", self.hidden),
            format!("heads = {}", self.heads),
            format!("lr = {}", self.lr),
            format!("weight_decay = {}", self.weight_decay),
            format!("dropout = {}", self.dropout),
            format!("leaky_slope = {}", self.leaky_slope),
            format!("activation = {}", activation_name(self.activation)),
            format!("share_params = {}", self.share_params),
            format!("max_epochs = {}", self.max_epochs),
            format!("patience = {}", self.patience),
            format!("seed = {}", self.seed),
            format!("n_splits = {}", self.n_splits),
            format!("train_ratio = {}", self.train_ratio),
            format!("val_ratio = {}", self.val_ratio),
            format!(
                "splits_file = {}",
                self.splits_file.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            ),
            format!("eval_samples = {}", self.eval_samples),
        ]);
        lines.join("\n") + "\n"
    }
}

fn preset(name: &str) -> Option<Channel> {
    let (p, q) = match name {
        "bfs" => (0.1, 10.0),
        "dfs" => (10.0, 0.1),
        _ => return None,
    };
    Some(Channel {
        name: name.to_string(),
        p,
        q,
    })
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Elu => "elu",
        Activation::Tanh => "tanh",
        Activation::Identity => "identity",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_config(text).unwrap()
    }

    #[test]
    fn defaults() {
        let s = ExperimentSpec::default();
        assert_eq!((s.hidden, s.heads, s.walks_per_node, s.n_splits), (32, 2, 6, 10));
        assert_eq!(s.lr, 0.05);
        assert_eq!((s.channels[0].p, s.channels[0].q), (0.1, 10.0));
        assert_eq!((s.channels[1].p, s.channels[1].q), (10.0, 0.1));
        assert_eq!(s.model_config(10, 3).d_final(), 128);
    }

    #[test]
    fn file_then_env_then_flags() {
        let file = pairs("# texas\ndataset = data/texas\npath_length = 4\nseed = 3 # master\nlr=0.01\n");
        let flags = vec![("path-length".to_string(), "5".to_string())];
        let s = ExperimentSpec::resolve(&file, Some("11"), &flags).unwrap();
        assert_eq!(s.dataset, PathBuf::from("data/texas"));
        assert_eq!((s.path_length, s.seed, s.lr), (5, 11, 0.01));
        let s = ExperimentSpec::resolve(&file, Some("11"), &[("seed".into(), "2".into())]).unwrap();
        assert_eq!(s.seed, 2);
    }

    #[test]
    fn strategy_keys() {
        let s = ExperimentSpec::from_pairs(&pairs("strategies = dfs\ndfs_q = 0.5\n")).unwrap();
        assert_eq!(s.channels.len(), 1);
        assert_eq!((s.channels[0].p, s.channels[0].q), (10.0, 0.5));

        let s = ExperimentSpec::from_pairs(&pairs("strategies = bfs, flat\nflat_p = 1\nflat_q = 1\n")).unwrap();
        assert!(s.validate().is_ok());
        let s = ExperimentSpec::from_pairs(&pairs("strategies = flat\n")).unwrap();
        assert!(s.validate().is_err());
        assert!(ExperimentSpec::from_pairs(&pairs("other_p = 1\n")).is_err());
        assert!(ExperimentSpec::from_pairs(&pairs("colour = red\n")).is_err());
    }

    #[test]
    fn invalid_values() {
        for text in [
            "path_length = 1",
            "lr = 0",
            "dropout = 1",
            "train_ratio = 0.7\nval_ratio = 0.3",
            "walks_per_node = 0",
            "bfs_p = -1",
        ] {
            let s = ExperimentSpec::from_pairs(&pairs(text)).unwrap();
            assert!(s.validate().is_err(), "{text}");
        }
        assert!(parse_config("no equals sign").is_err());
        assert!(ExperimentSpec::from_pairs(&pairs("hidden = many")).is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let s = ExperimentSpec {
            dataset: "d/cora".into(),
            name: "cora".into(),
            path_length: 7,
            lr: 0.1 + 0.2,
            activation: Activation::Tanh,
            splits_file: Some("splits.json".into()),
            ..ExperimentSpec::default()
        };
        let back = ExperimentSpec::from_pairs(&pairs(&s.to_config())).unwrap();
        assert_eq!(back, s);
    }
}
