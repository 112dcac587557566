//! Flat `key=value` experiment configuration files.
//!
//! ```text
//! # comment
//! dataset.synth.n=4000
//! noise.strategy=mixed
//! noise.epsilon=0.2
//! trainer.kind=mhss
//! seeds=0,1,2
//! ```
//!
//! Grid specs use the same format; keys prefixed with `grid.` list values
//! to sweep, e.g. `grid.selection.alpha=0.25,0.5,1`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{SplitRatios, SynthSpec};
use crate::error::{Error, Result};
use crate::noise::NoiseStrategy;
use crate::trainers::{TrainConfig, TrainerKind};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// A CSV file; a `.ledger` sidecar next to it marks it as already noisy.
    Path(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub strategy: NoiseStrategy,
    /// Target noise level: the flip fraction for uniform noise, converted to
    /// a rate through the overall prevalence for mixed noise.
    pub epsilon: Option<f64>,
    /// Mixed noise rate given directly.
    pub rate: Option<f64>,
    pub transition: Option<PathBuf>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            strategy: NoiseStrategy::None,
            epsilon: None,
            rate: None,
            transition: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub split: SplitRatios,
    pub split_seed: u64,
    pub noise: NoiseConfig,
    pub trainer: TrainerKind,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Dump per-epoch refurbishment verdicts next to each report.
    pub dump_refurbish: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synth(SynthSpec::default()),
            split: SplitRatios::default(),
            split_seed: 0,
            noise: NoiseConfig::default(),
            trainer: TrainerKind::BASELINE,
            train: TrainConfig::default(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            dump_refurbish: false,
        }
    }
}

/// One `key=value` entry with the line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub value: String,
}

/// Raw entries in file order, keyed by dotted name.
pub type Entries = BTreeMap<String, Entry>;

pub fn parse_entries(text: &str) -> Result<Entries> {
    let mut out = Entries::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config(format!("line {line}: expected key=value, got `{content}`")));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {line}: empty key")));
        }
        if let Some(prev) = out.get(&key) {
            return Err(Error::Config(format!(
                "line {line}: `{key}` already set on line {}",
                prev.line
            )));
        }
        out.insert(
            key,
            Entry {
                line,
                value: value.trim().to_string(),
            },
        );
    }
    Ok(out)
}

fn field<T: FromStr>(key: &str, e: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value
        .parse()
        .map_err(|err| Error::Config(format!("line {}: field `{key}`: {err} (got `{}`)", e.line, e.value)))
}

fn list<T: FromStr>(key: &str, e: &Entry) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    e.value
        .split(',')
        .map(|v| {
            field(
                key,
                &Entry {
                    line: e.line,
                    value: v.trim().to_string(),
                },
            )
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = parse_entries(&text)?;
        if let Some((key, e)) = entries.iter().find(|(k, _)| k.starts_with("grid.")) {
            return Err(Error::Config(format!(
                "line {}: `{key}` is a grid axis; use the grid command",
                e.line
            )));
        }
        let cfg = Self::from_entries(&entries, path.parent())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&parse_entries(text)?, None)
    }

    /// Builds a config from entries; relative paths resolve against `base`.
    pub fn from_entries(entries: &Entries, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut synth = SynthSpec::default();
        let mut synth_set = false;
        let mut path = None;
        let resolve = |v: &str| match base {
            Some(b) if Path::new(v).is_relative() => b.join(v),
            _ => PathBuf::from(v),
        };
        for (key, e) in entries {
            let t = &mut cfg.train;
            match key.as_str() {
                "dataset.path" => path = Some(resolve(&e.value)),
                "dataset.synth.n" => (synth.n, synth_set) = (field(key, e)?, true),
                "dataset.synth.d" => (synth.d, synth_set) = (field(key, e)?, true),
                "dataset.synth.classes" => (synth.classes, synth_set) = (field(key, e)?, true),
                "dataset.synth.prevalence" => (synth.target_prevalence, synth_set) = (field(key, e)?, true),
                "dataset.synth.correlation" => (synth.class_correlation, synth_set) = (field(key, e)?, true),
                "dataset.synth.seed" => (synth.seed, synth_set) = (field(key, e)?, true),
                "split.train" => cfg.split.train = field(key, e)?,
                "split.val" => cfg.split.val = field(key, e)?,
                "split.test" => cfg.split.test = field(key, e)?,
                "split.seed" => cfg.split_seed = field(key, e)?,
                "noise.strategy" => cfg.noise.strategy = field(key, e)?,
                "noise.epsilon" => cfg.noise.epsilon = Some(field(key, e)?),
                "noise.rate" => cfg.noise.rate = Some(field(key, e)?),
                "noise.transition" => cfg.noise.transition = Some(resolve(&e.value)),
                "noise.seed" => cfg.noise.seed = field(key, e)?,
                "trainer.kind" => cfg.trainer = field(key, e)?,
                "selection.alpha" => t.alpha = field(key, e)?,
                "selection.ramp_epochs" => t.ramp_epochs = field(key, e)?,
                "selection.epsilon" => t.epsilon = Some(field(key, e)?),
                "selection.epsilon_per_class" => t.epsilon_per_class = Some(list(key, e)?),
                "refurbish.theta" => t.theta = field(key, e)?,
                "refurbish.q" => t.q = field(key, e)?,
                "model.hidden" => t.hidden = field(key, e)?,
                "model.gamma_pos" => t.asl.gamma_pos = field(key, e)?,
                "model.gamma_neg" => t.asl.gamma_neg = field(key, e)?,
                "model.margin" => t.asl.margin = field(key, e)?,
                "optim.epochs" => t.epochs = field(key, e)?,
                "optim.batch_size" => t.batch_size = field(key, e)?,
                "optim.max_lr" => t.max_lr = field(key, e)?,
                "optim.warmup_fraction" => t.warmup_fraction = field(key, e)?,
                "seeds" => cfg.seeds = list(key, e)?,
                "output.dir" => cfg.output_dir = resolve(&e.value),
                "output.refurbish_dump" => cfg.dump_refurbish = field(key, e)?,
                k if k.starts_with("grid.") => {}
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", e.line))),
            }
        }
        cfg.dataset = match (path, synth_set) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "dataset.path and dataset.synth.* are mutually exclusive".into(),
                ))
            }
            (Some(p), false) => DatasetSource::Path(p),
            (None, _) => DatasetSource::Synth(synth),
        };
        Ok(cfg)
    }

    /// Checks value ranges and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        match &self.dataset {
            DatasetSource::Path(p) if !p.is_file() => {
                return Err(Error::Config(format!("dataset.path {} does not exist", p.display())))
            }
            DatasetSource::Synth(s) => s.validate().map_err(|e| Error::Config(e.to_string()))?,
            _ => {}
        }
        let n = &self.noise;
        match n.strategy {
            NoiseStrategy::None => {
                if n.epsilon.is_some() || n.rate.is_some() || n.transition.is_some() {
                    return Err(Error::Config("noise parameters given without noise.strategy".into()));
                }
            }
            NoiseStrategy::Uniform => {
                if n.epsilon.is_none() || n.rate.is_some() || n.transition.is_some() {
                    return Err(Error::Config("uniform noise takes noise.epsilon only".into()));
                }
            }
            NoiseStrategy::Mixed => {
                if n.epsilon.is_some() == n.rate.is_some() || n.transition.is_some() {
                    return Err(Error::Config(
                        "mixed noise takes exactly one of noise.epsilon and noise.rate".into(),
                    ));
                }
            }
            NoiseStrategy::Transition => match &n.transition {
                None => return Err(Error::Config("transition noise needs noise.transition".into())),
                Some(p) if !p.is_file() => {
                    return Err(Error::Config(format!("noise.transition {} does not exist", p.display())))
                }
                _ => {}
            },
        }
        for (name, v) in [("noise.epsilon", n.epsilon), ("noise.rate", n.rate)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
                }
            }
        }
        let s = self.split;
        if [s.train, s.val, s.test].iter().any(|r| !(*r > 0.0)) || ((s.train + s.val + s.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {}/{}/{} must be positive and sum to 1",
                s.train, s.val, s.test
            )));
        }
        Ok(())
    }
}

/// A grid spec expanded into its Cartesian product of configs.
///
/// Axes are varied in key order with the last axis fastest.
pub fn expand_grid(text: &str, base: Option<&Path>) -> Result<Vec<(BTreeMap<String, String>, ExperimentConfig)>> {
    let entries = parse_entries(text)?;
    let mut axes: Vec<(String, usize, Vec<String>)> = Vec::new();
    for (key, e) in &entries {
        if let Some(target) = key.strip_prefix("grid.") {
            let values: Vec<String> = e
                .value
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::Config(format!("line {}: grid axis `{target}` is empty", e.line)));
            }
            if entries.contains_key(target) {
                return Err(Error::Config(format!(
                    "line {}: `{target}` is both fixed and a grid axis",
                    e.line
                )));
            }
            axes.push((target.to_string(), e.line, values));
        }
    }
    let total: usize = axes.iter().map(|(_, _, v)| v.len()).product();
    let mut out = Vec::with_capacity(total);
    for mut index in 0..total {
        let mut point = entries.clone();
        let mut assignment = BTreeMap::new();
        for (key, line, values) in axes.iter().rev() {
            let value = &values[index % values.len()];
            index /= values.len();
            point.insert(
                key.clone(),
                Entry {
                    line: *line,
                    value: value.clone(),
                },
            );
            assignment.insert(key.clone(), value.clone());
        }
        let cfg = ExperimentConfig::from_entries(&point, base)?;
        cfg.validate()?;
        out.push((assignment, cfg));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_recipe() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.max_lr, 1e-3);
        assert_eq!(cfg.train.theta, 0.05);
        assert_eq!(cfg.trainer, TrainerKind::BASELINE);
    }

    #[test]
    fn parses_all_sections() {
        let cfg = ExperimentConfig::parse(
            "dataset.synth.n = 500 # inline comment\n\
             noise.strategy=mixed\nnoise.epsilon=0.2\n\
             trainer.kind=coselfie+jcc\nselection.alpha=1.5\nrefurbish.q=4\n\
             model.gamma_neg=2\nseeds=3,4\nselection.epsilon_per_class=0.1,0.2\n",
        )
        .unwrap();
        assert!(matches!(cfg.dataset, DatasetSource::Synth(SynthSpec { n: 500, .. })));
        assert_eq!(cfg.noise.strategy, NoiseStrategy::Mixed);
        assert_eq!(cfg.trainer.to_string(), "coselfie+jcc");
        assert_eq!(cfg.train.alpha, 1.5);
        assert_eq!(cfg.train.q, 4);
        assert_eq!(cfg.train.asl.gamma_neg, 2.0);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.train.epsilon_per_class, Some(vec![0.1, 0.2]));
        cfg.validate().unwrap();
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let err = ExperimentConfig::parse("seeds=1\n\noptim.epochs=ten\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("optim.epochs"), "{err}");
        let err = ExperimentConfig::parse("optim.epoch=3").unwrap_err().to_string();
        assert!(err.contains("unknown key `optim.epoch`"), "{err}");
        let err = parse_entries("a=1\na=2").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("line 1"), "{err}");
        assert!(parse_entries("no equals sign").is_err());
    }

    #[test]
    fn validation() {
        let bad = |text: &str| ExperimentConfig::parse(text).unwrap().validate().is_err();
        assert!(bad("selection.alpha=-1"));
        assert!(bad("refurbish.theta=1.5"));
        assert!(bad("noise.strategy=mixed"));
        assert!(bad("noise.strategy=mixed\nnoise.epsilon=0.2\nnoise.rate=0.5"));
        assert!(bad("noise.epsilon=0.2"));
        assert!(bad("dataset.path=/definitely/missing.csv"));
        assert!(bad("split.train=0.5"));
        assert!(ExperimentConfig::parse("dataset.path=x.csv\ndataset.synth.n=4").is_err());
    }

    #[test]
    fn grid_expansion() {
        let grid = expand_grid("grid.selection.alpha=0,0.25,0.5,1,1.5\ntrainer.kind=coteaching\nselection.epsilon=0.2", None).unwrap();
        assert_eq!(grid.len(), 5);
        assert_eq!(grid[1].1.train.alpha, 0.25);
        assert_eq!(grid[1].0["selection.alpha"], "0.25");

        let two = expand_grid("grid.seeds=1,2\ngrid.refurbish.q=3,4,5", None).unwrap();
        assert_eq!(two.len(), 6);
        // axes in key order, last fastest: refurbish.q then seeds
        assert_eq!((two[1].1.train.q, two[1].1.seeds.clone()), (3, vec![2]));
        assert_eq!((two[2].1.train.q, two[2].1.seeds.clone()), (4, vec![1]));

        let err = expand_grid("grid.selection.alpha=", None).unwrap_err().to_string();
        assert!(err.contains("empty"), "{err}");
        assert!(expand_grid("grid.selection.alpha=1\nselection.alpha=2", None).is_err());
    }

    #[test]
    fn ablation_grid_has_seven_points() {
        let kinds = TrainerKind::ablation().map(|k| k.to_string()).join(",");
        let grid = expand_grid(
            &format!("grid.trainer.kind={kinds}\nnoise.strategy=mixed\nnoise.epsilon=0.2"),
            None,
        )
        .unwrap();
        assert_eq!(grid.len(), 7);
    }
}
