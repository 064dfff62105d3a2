//! Flat `key = value` run configs.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys may appear once. Lists are comma separated.
//!
//! | key | required | meaning |
//! |---|---|---|
//! | `task` | yes | `mackey-glass`, `enso` or `adding` |
//! | `cell` | yes | registered cell name, e.g. `tau-gru` |
//! | `hidden` | yes | hidden size `d` |
//! | `tau` | yes | delay in steps |
//! | `lr` | yes | Adam learning rate |
//! | `epochs` | yes | passes over the training set |
//! | `seed` | yes | parameter init and batch order |
//! | `alpha`, `beta` | no | delayed / instantaneous scales, default 1 |
//! | `weighting` | no | `true` / `false`, default true |
//! | `batch_size` | no | default 32 |
//! | `n_train`, `n_test` | no | default 32 each |
//! | `data_seed` | no | dataset seed, default `seed` |
//! | `grad_clip` | no | global-norm clip, off by default |
//! | `adding_length` | no | sequence length for `adding`, default 200 |
//! | `seeds` | no | seed count for ablations and spreads, default 8 |
//! | `ablation` | no | rows: `tau-gru`, `alpha0`, `beta0`, `no-weighting`, `simple-delay-gru`, `linear-delayed` |
//! | `tau_sweep` | no | delays for a sweep of the full model |
//! | `name` | no | output file stem, default the config file stem |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::cells::{CellKind, CellVariant};
use crate::training::{AblationRow, Task, TrainConfig};
use crate::{Error, Result};

pub const REQUIRED_KEYS: [&str; 7] = ["task", "cell", "hidden", "tau", "lr", "epochs", "seed"];
pub const OPTIONAL_KEYS: [&str; 13] = [
    "alpha",
    "beta",
    "weighting",
    "batch_size",
    "n_train",
    "n_test",
    "data_seed",
    "grad_clip",
    "adding_length",
    "seeds",
    "ablation",
    "tau_sweep",
    "name",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: Option<String>,
    pub train: TrainConfig,
    pub seeds: usize,
    pub ablation: Vec<AblationRow>,
    pub tau_sweep: Vec<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// `seed, seed + 1, …` for `seeds` runs.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.train.seed.wrapping_add(i)).collect()
    }

    /// Explicit ablation rows followed by the tau sweep.
    pub fn ablation_rows(&self) -> Vec<AblationRow> {
        let mut rows = self.ablation.clone();
        rows.extend(
            self.tau_sweep
                .iter()
                .map(|&tau| AblationRow::tau_sweep(self.train.variant, tau)),
        );
        rows
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(map)
}

fn value<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::Config(format!("key {key:?}: cannot parse {v:?}")))
        })
        .transpose()
}

fn list<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    match map.get(key) {
        None => Ok(Vec::new()),
        Some(v) => v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|_| Error::Config(format!("key {key:?}: cannot parse list item {s:?}")))
            })
            .collect(),
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let map = parse_pairs(text)?;
        let unknown: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| !REQUIRED_KEYS.contains(k) && !OPTIONAL_KEYS.contains(k))
            .collect();
        let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !map.contains_key(*k)).collect();
        if !unknown.is_empty() || !missing.is_empty() {
            let mut parts = Vec::new();
            if !missing.is_empty() {
                parts.push(format!("missing keys: {}", missing.join(", ")));
            }
            if !unknown.is_empty() {
                parts.push(format!("unknown keys: {}", unknown.join(", ")));
            }
            return Err(Error::Config(parts.join("; ")));
        }
        let req = |key: &str| map[key].as_str();

        let mut task: Task = req("task").parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        if let Task::Adding { length } = &mut task {
            *length = value(&map, "adding_length")?.unwrap_or(*length);
        } else if map.contains_key("adding_length") {
            return Err(Error::Config("adding_length only applies to task = adding".into()));
        }
        let kind: CellKind = req("cell").parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        let tau: usize = value(&map, "tau")?.expect("required");
        let variant = CellVariant {
            kind,
            ..CellVariant::tau_gru(tau)
        }
        .with_alpha(value(&map, "alpha")?.unwrap_or(1.0))
        .with_beta(value(&map, "beta")?.unwrap_or(1.0))
        .with_weighting(value(&map, "weighting")?.unwrap_or(true));
        variant.validate().map_err(|e| Error::Config(e.to_string()))?;

        let seed: u64 = value(&map, "seed")?.expect("required");
        let mut train = TrainConfig::new(task, variant, value(&map, "hidden")?.expect("required"));
        train.lr = value(&map, "lr")?.expect("required");
        train.epochs = value(&map, "epochs")?.expect("required");
        train.seed = seed;
        train.data_seed = value(&map, "data_seed")?.unwrap_or(seed);
        train.batch_size = value(&map, "batch_size")?.unwrap_or(train.batch_size);
        train.n_train = value(&map, "n_train")?.unwrap_or(train.n_train);
        train.n_test = value(&map, "n_test")?.unwrap_or(train.n_test);
        train.grad_clip = value(&map, "grad_clip")?;
        train.validate()?;

        let ablation = list::<String>(&map, "ablation")?
            .iter()
            .map(|name| AblationRow::named(name, tau).map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let seeds = value(&map, "seeds")?.unwrap_or(8);
        if seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        Ok(RunConfig {
            name: map.get("name").cloned(),
            train,
            seeds,
            ablation,
            tau_sweep: list(&map, "tau_sweep")?,
        })
    }
}
