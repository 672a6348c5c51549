//! Flat `key = value` config files with `#` comments. Unknown keys are hard
//! errors so typos cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use gpfedrec_core::ExperimentConfig;

pub const VALID_KEYS: &[&str] = &[
    "lambda",
    "gamma",
    "eta",
    "eta_grid",
    "delta",
    "dim",
    "local_epochs",
    "rounds",
    "conv_layers",
    "batch_size",
    "negatives_per_positive",
    "eval_negatives",
    "aggregation",
    "backbone",
    "normalization",
    "graph_update_every",
    "seed",
    "hidden_sizes",
    "user_lr_scale",
    "item_lr_scale",
    "data",
    "out",
    "workers",
];

/// Parsed file contents: raw string values keyed by option name.
#[derive(Debug, Default)]
pub struct ConfigFile {
    pub values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", idx + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !VALID_KEYS.contains(&key) {
                bail!(
                    "line {}: unknown key '{}' (valid keys: {})",
                    idx + 1,
                    key,
                    VALID_KEYS.join(", ")
                );
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                bail!("line {}: duplicate key '{}'", idx + 1, key);
            }
        }
        Ok(ConfigFile { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Apply the file's entries onto a config. `eta` collapses the grid to a
    /// single rate unless `eta_grid` is also given explicitly.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow!("invalid value '{value}' for {key}: {e}"))
        }

        if let Some(v) = self.get("lambda") {
            cfg.lambda = parse("lambda", v)?;
        }
        if let Some(v) = self.get("gamma") {
            cfg.gamma = parse("gamma", v)?;
        }
        if let Some(v) = self.get("delta") {
            cfg.delta = parse("delta", v)?;
        }
        if let Some(v) = self.get("dim") {
            cfg.dim = parse("dim", v)?;
        }
        if let Some(v) = self.get("local_epochs") {
            cfg.local_epochs = parse("local_epochs", v)?;
        }
        if let Some(v) = self.get("rounds") {
            cfg.rounds = parse("rounds", v)?;
        }
        if let Some(v) = self.get("conv_layers") {
            cfg.conv_layers = parse("conv_layers", v)?;
        }
        if let Some(v) = self.get("batch_size") {
            cfg.batch_size = parse("batch_size", v)?;
        }
        if let Some(v) = self.get("negatives_per_positive") {
            cfg.negatives_per_positive = parse("negatives_per_positive", v)?;
        }
        if let Some(v) = self.get("eval_negatives") {
            cfg.eval_negatives = parse("eval_negatives", v)?;
        }
        if let Some(v) = self.get("aggregation") {
            cfg.aggregation = parse("aggregation", v)?;
        }
        if let Some(v) = self.get("backbone") {
            cfg.backbone = parse("backbone", v)?;
        }
        if let Some(v) = self.get("normalization") {
            cfg.normalization = parse("normalization", v)?;
        }
        if let Some(v) = self.get("graph_update_every") {
            cfg.graph_update_every = parse("graph_update_every", v)?;
        }
        if let Some(v) = self.get("seed") {
            cfg.seed = parse("seed", v)?;
        }
        if let Some(v) = self.get("hidden_sizes") {
            cfg.hidden_sizes = parse_list("hidden_sizes", v)?;
        }
        if let Some(v) = self.get("user_lr_scale") {
            cfg.user_lr_scale = parse("user_lr_scale", v)?;
        }
        if let Some(v) = self.get("item_lr_scale") {
            cfg.item_lr_scale = parse("item_lr_scale", v)?;
        }
        match (self.get("eta"), self.get("eta_grid")) {
            (Some(eta), None) => cfg.eta_grid = vec![parse("eta", eta)?],
            (None, Some(grid)) => cfg.eta_grid = parse_list("eta_grid", grid)?,
            (Some(_), Some(_)) => {
                bail!("set either eta or eta_grid, not both")
            }
            (None, None) => {}
        }
        Ok(())
    }
}

pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        bail!("{key}: empty value list");
    }
    value
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| anyhow!("invalid entry '{}' in {key}: {e}", p.trim()))
        })
        .collect()
}
