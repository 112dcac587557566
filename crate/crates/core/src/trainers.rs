//! Training runs for the five label policies over one shared loop.
//!
//! Dual-network policies train two identically shaped networks (seeds `s`
//! and `s + 1`) on the same mini-batches. Per batch, each network scores
//! every cell with the asymmetric loss, selects small-loss cells for its
//! peer, and the two selections are merged with the epoch's refurbishment
//! decisions into per-network training targets.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::metrics::{mean_average_precision, LabelPrCounter};
use crate::model::{self, AdamState, AslConfig, MlpParams, OneCycleSchedule};
use crate::noise::NoiseLedger;
use crate::refurbish::{self, CellTarget, CorrectionMode, EffectiveBatch, PredictionHistory, RefurbishDecision};
use crate::selection::{self, ForgetSchedule, SelectionMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Cheater,
    CoTeaching,
    CoSelfie,
    Mhss,
}

/// A label policy plus its optional components. `mhss` is CoSELFIE with
/// class-dependent forget rates and the joint correction criterion; the
/// intermediate combinations are written `coteaching+cdnr`,
/// `coselfie+cdnr`, `coselfie+jcc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainerKind {
    method: Method,
    cdnr: bool,
    jcc: bool,
}

impl TrainerKind {
    pub fn new(method: Method, cdnr: bool, jcc: bool) -> Result<Self> {
        let (cdnr, jcc) = match method {
            Method::Mhss => (true, true),
            _ => (cdnr, jcc),
        };
        match method {
            Method::Baseline | Method::Cheater if cdnr || jcc => Err(Error::Config(format!(
                "{method:?} trains a single network and takes no cdnr/jcc flags"
            ))),
            Method::CoTeaching if jcc => Err(Error::Config(
                "jcc needs label correction (coselfie)".into(),
            )),
            _ => Ok(Self { method, cdnr, jcc }),
        }
    }

    pub const BASELINE: Self = Self { method: Method::Baseline, cdnr: false, jcc: false };
    pub const CHEATER: Self = Self { method: Method::Cheater, cdnr: false, jcc: false };
    pub const COTEACHING: Self = Self { method: Method::CoTeaching, cdnr: false, jcc: false };
    pub const COSELFIE: Self = Self { method: Method::CoSelfie, cdnr: false, jcc: false };
    pub const MHSS: Self = Self { method: Method::Mhss, cdnr: true, jcc: true };

    /// The seven component combinations of the ablation, from the plain
    /// baseline up to the full method.
    pub fn ablation() -> [Self; 7] {
        [
            Self::BASELINE,
            Self::COTEACHING,
            Self { method: Method::CoTeaching, cdnr: true, jcc: false },
            Self::COSELFIE,
            Self { method: Method::CoSelfie, cdnr: false, jcc: true },
            Self { method: Method::CoSelfie, cdnr: true, jcc: false },
            Self::MHSS,
        ]
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn cdnr(&self) -> bool {
        self.cdnr
    }

    pub fn jcc(&self) -> bool {
        self.jcc
    }

    pub fn dual(&self) -> bool {
        !matches!(self.method, Method::Baseline | Method::Cheater)
    }

    pub fn corrects(&self) -> bool {
        matches!(self.method, Method::CoSelfie | Method::Mhss)
    }

    pub fn networks(&self) -> usize {
        if self.dual() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.method {
            Method::Baseline => "baseline",
            Method::Cheater => "cheater",
            Method::CoTeaching => "coteaching",
            Method::CoSelfie => "coselfie",
            Method::Mhss => return f.write_str("mhss"),
        };
        f.write_str(base)?;
        if self.cdnr {
            f.write_str("+cdnr")?;
        }
        if self.jcc {
            f.write_str("+jcc")?;
        }
        Ok(())
    }
}

impl FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split('+');
        let method = match parts.next().unwrap_or("") {
            "baseline" => Method::Baseline,
            "cheater" => Method::Cheater,
            "coteaching" => Method::CoTeaching,
            "coselfie" => Method::CoSelfie,
            "mhss" => Method::Mhss,
            other => return Err(Error::Config(format!("unknown trainer `{other}`"))),
        };
        let (mut cdnr, mut jcc) = (false, false);
        for flag in parts {
            match flag {
                "cdnr" => cdnr = true,
                "jcc" => jcc = true,
                other => return Err(Error::Config(format!("unknown trainer flag `{other}`"))),
            }
        }
        Self::new(method, cdnr, jcc)
    }
}

impl Serialize for TrainerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrainerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub warmup_fraction: f64,
    pub hidden: usize,
    pub asl: AslConfig,
    /// Forget-rate factor.
    pub alpha: f64,
    /// Entropy threshold for refurbishment.
    pub theta: f64,
    /// Prediction history window.
    pub q: usize,
    /// Epochs over which the forget rate ramps up to its final value.
    pub ramp_epochs: usize,
    pub seed: u64,
    /// Overrides the noise level taken from the ledger.
    pub epsilon: Option<f64>,
    /// Overrides the per-class noise levels taken from the ledger.
    pub epsilon_per_class: Option<Vec<f64>>,
    /// Write every epoch's refurbishment verdicts to this CSV.
    #[serde(skip)]
    pub refurbish_dump: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            max_lr: 1e-3,
            warmup_fraction: 0.3,
            hidden: 64,
            asl: AslConfig::default(),
            alpha: 1.0,
            theta: 0.05,
            q: 10,
            ramp_epochs: 10,
            seed: 0,
            epsilon: None,
            epsilon_per_class: None,
            refurbish_dump: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 || self.q == 0 {
            return Err(Error::Config("epochs, batch_size, hidden and q must be >= 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} outside [0, 1]", self.theta)));
        }
        self.asl.validate()
    }
}

/// Training data with the evaluation splits carrying true labels.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: MultiLabelDataset,
    pub val: MultiLabelDataset,
    pub test: MultiLabelDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss of each network.
    pub train_loss: Vec<f64>,
    pub val_map: Vec<f64>,
    /// Mean over networks; absent without a ledger.
    pub label_precision: Option<f64>,
    pub label_recall: Option<f64>,
    /// Fraction of training cells actually trained on, mean over networks.
    pub kept_fraction: f64,
    /// Training cells carrying a corrected label, summed over networks.
    pub refurbished_count: usize,
    /// Forget rate in effect: one value, or one per class.
    pub tau: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalStats {
    pub test_map: f64,
    /// Network whose final validation mAP is highest.
    pub selected_network: usize,
    pub test_map_per_network: Vec<f64>,
    pub val_map_per_network: Vec<f64>,
    /// Final forget rate(s).
    pub tau_final: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Flat `key -> value` echo of the configuration.
    pub config: BTreeMap<String, String>,
    pub kind: TrainerKind,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    #[serde(rename = "final")]
    pub final_stats: FinalStats,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Per-epoch diagnostics as CSV.
    pub fn write_diagnostics_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,label_precision,label_recall,kept_fraction,refurbished_count")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                opt(e.label_precision),
                opt(e.label_recall),
                e.kept_fraction,
                e.refurbished_count
            )?;
        }
        Ok(())
    }

    /// Metric trajectories with the wall clock left out, for reproducibility checks.
    pub fn trajectory(&self) -> (&[EpochStats], &FinalStats) {
        (&self.epochs, &self.final_stats)
    }
}

struct Network {
    params: MlpParams,
    adam: AdamState,
    history: Option<PredictionHistory>,
}

fn forget_schedule(kind: TrainerKind, ledger: Option<&NoiseLedger>, cfg: &TrainConfig, classes: usize) -> Result<Option<ForgetSchedule>> {
    if !kind.dual() {
        return Ok(None);
    }
    let epsilon = match (cfg.epsilon, ledger) {
        (Some(e), _) => e,
        (None, Some(l)) => l.epsilon(),
        (None, None) => {
            return Err(Error::MissingLedger(format!(
                "{kind} needs a noise level: supply a ledger or an explicit epsilon"
            )))
        }
    };
    if !kind.cdnr() {
        return Ok(Some(ForgetSchedule::global(cfg.alpha, epsilon, cfg.ramp_epochs)));
    }
    let per_class = match (&cfg.epsilon_per_class, ledger) {
        (Some(e), _) => e.clone(),
        (None, Some(l)) => l.epsilon_per_class().to_vec(),
        (None, None) => {
            return Err(Error::MissingLedger(format!(
                "{kind} uses class-dependent forget rates and needs per-class noise levels"
            )))
        }
    };
    if per_class.len() != classes {
        return Err(Error::Config(format!(
            "{} per-class noise levels for {classes} classes",
            per_class.len()
        )));
    }
    Ok(Some(ForgetSchedule::per_class(cfg.alpha, epsilon, per_class, cfg.ramp_epochs)))
}

fn select(losses: &[f64], taus: &[f64], cdnr: bool) -> Result<SelectionMask> {
    if cdnr {
        selection::select_small_loss_cdnr_matrix(losses, taus)
    } else {
        selection::select_small_loss(losses, taus[0])
    }
}

fn targets_to_arrays(batch: &EffectiveBatch, rows: usize, classes: usize) -> (Array2<u8>, Array2<f64>) {
    let mut y = Array2::<u8>::zeros((rows, classes));
    let mut w = Array2::<f64>::zeros((rows, classes));
    for (cell, t) in batch.targets.iter().enumerate() {
        if let Some(CellTarget { label, .. }) = t {
            y[[cell / classes, cell % classes]] = *label;
            w[[cell / classes, cell % classes]] = 1.0;
        }
    }
    (y, w)
}

fn observed_batch(observed: &[u8], keep: impl Fn(usize) -> bool) -> EffectiveBatch {
    EffectiveBatch {
        targets: observed
            .iter()
            .enumerate()
            .map(|(k, &y)| {
                keep(k).then_some(CellTarget {
                    label: y,
                    source: refurbish::LabelSource::Observed,
                })
            })
            .collect(),
    }
}

/// Checks everything `train` needs before it starts: config ranges, split
/// shapes and the ledger or noise levels the policy depends on.
pub fn preflight(kind: TrainerKind, data: &SplitData, ledger: Option<&NoiseLedger>, cfg: &TrainConfig) -> Result<()> {
    check_inputs(kind, data, ledger, cfg).map(|_| ())
}

fn check_inputs(
    kind: TrainerKind,
    data: &SplitData,
    ledger: Option<&NoiseLedger>,
    cfg: &TrainConfig,
) -> Result<Option<ForgetSchedule>> {
    cfg.validate()?;
    let (n, classes, d) = (data.train.len(), data.train.n_classes(), data.train.n_features());
    for (name, split) in [("validation", &data.val), ("test", &data.test)] {
        if split.n_features() != d || split.n_classes() != classes {
            return Err(Error::Shape(format!("{name} split shape differs from training split")));
        }
    }
    if let Some(l) = ledger {
        if l.flip_mask().view().dim() != (n, classes) {
            return Err(Error::Shape(format!(
                "ledger covers {:?}, training split is {n}x{classes}",
                l.flip_mask().view().dim()
            )));
        }
    }
    if kind.method() == Method::Cheater && ledger.is_none() {
        return Err(Error::MissingLedger("the cheater trains on ledger-clean cells only".into()));
    }
    forget_schedule(kind, ledger, cfg, classes)
}

/// Trains one run of `kind` and evaluates it.
///
/// `ledger` covers the training rows. The cheater needs it as its oracle;
/// selection policies read their noise levels from it unless the config
/// supplies them.
pub fn train(kind: TrainerKind, data: &SplitData, ledger: Option<&NoiseLedger>, cfg: &TrainConfig) -> Result<RunReport> {
    let started = Instant::now();
    let schedule = check_inputs(kind, data, ledger, cfg)?;
    let train_set = &data.train;
    let (n, classes, d) = (train_set.len(), train_set.n_classes(), train_set.n_features());
    let correction_mode = if kind.jcc() {
        CorrectionMode::Joint
    } else {
        CorrectionMode::PerNetwork
    };

    let mut nets: Vec<Network> = (0..kind.networks())
        .map(|k| {
            let params = MlpParams::init(d, cfg.hidden, classes, cfg.seed.wrapping_add(k as u64));
            let history = if kind.corrects() {
                Some(PredictionHistory::new(n, classes, cfg.q)?)
            } else {
                None
            };
            Ok(Network {
                adam: AdamState::new(&params),
                params,
                history,
            })
        })
        .collect::<Result<_>>()?;

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let lr_schedule = OneCycleSchedule::new(cfg.max_lr, (cfg.epochs * steps_per_epoch).max(2), cfg.warmup_fraction)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let x_all = train_set.features().view();
    let observed_all = train_set.labels().as_slice();
    let flips_all = ledger.map(|l| l.flip_mask().as_slice());
    let mut dump = match &cfg.refurbish_dump {
        Some(path) => Some(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?)),
        None => None,
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let taus = schedule.as_ref().map_or_else(|| vec![0.0], |s| s.rates_at(epoch));
        let decisions: Vec<RefurbishDecision> = nets
            .iter()
            .map(|net| match &net.history {
                Some(h) => refurbish::decide(h, cfg.theta),
                None => Ok(RefurbishDecision::none(n, classes)),
            })
            .collect::<Result<_>>()?;
        if let Some(out) = dump.as_mut() {
            for (k, dec) in decisions.iter().enumerate() {
                dec.write_csv(out, epoch, k, epoch == 0 && k == 0)
                    .map_err(|e| Error::io(cfg.refurbish_dump.clone().unwrap_or_default(), e))?;
            }
        }

        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = vec![0.0; nets.len()];
        let mut counters = vec![LabelPrCounter::default(); nets.len()];
        let mut trained = vec![0usize; nets.len()];
        let mut corrected = 0usize;
        for rows in order.chunks(cfg.batch_size) {
            let x = x_all.select(Axis(0), rows);
            let observed: Vec<u8> = rows
                .iter()
                .flat_map(|&r| observed_all[r * classes..(r + 1) * classes].iter().copied())
                .collect();
            let y_obs = Array2::from_shape_vec((rows.len(), classes), observed.clone())
                .map_err(|e| Error::Shape(e.to_string()))?;
            let passes: Vec<model::ForwardPass> = nets
                .iter()
                .map(|net| model::forward_pass(&net.params, x.view()))
                .collect::<Result<_>>()?;

            let batches: Vec<EffectiveBatch> = match kind.method() {
                Method::Baseline => vec![observed_batch(&observed, |_| true)],
                Method::Cheater => {
                    let flips = flips_all.expect("checked above");
                    let cell_flipped = |k: usize| flips[rows[k / classes] * classes + k % classes] == 1;
                    vec![observed_batch(&observed, |k| !cell_flipped(k))]
                }
                _ => {
                    let masks: Vec<SelectionMask> = passes
                        .iter()
                        .map(|pass| {
                            let losses = model::asl_loss(pass.probs().view(), y_obs.view(), &cfg.asl)?;
                            select(losses.as_slice().expect("standard layout"), &taus, kind.cdnr())
                        })
                        .collect::<Result<_>>()?;
                    let corr_a = decisions[0].corrections_for(rows);
                    let corr_b = decisions[1].corrections_for(rows);
                    let merged = refurbish::merge_decisions(correction_mode, &corr_a, &corr_b, &masks[0], &masks[1], &observed)?;
                    vec![merged.a, merged.b]
                }
            };

            let lr = lr_schedule.lr(step.min(lr_schedule.total_steps - 1))?;
            step += 1;
            for (k, (net, batch)) in nets.iter_mut().zip(&batches).enumerate() {
                let (y, w) = targets_to_arrays(batch, rows.len(), classes);
                let (loss, grads) = model::backward_from(&net.params, x.view(), &passes[k], y.view(), &cfg.asl, w.view())?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
                }
                net.adam.step(&mut net.params, &grads, lr)?;
                loss_sum[k] += loss;
                trained[k] += batch.trained();
                corrected += batch.corrected();
                if let Some(flips) = flips_all {
                    for (cell, target) in batch.targets.iter().enumerate() {
                        let global = rows[cell / classes] * classes + cell % classes;
                        counters[k].add(target.map(|t| t.label), observed[cell], flips[global] == 1);
                    }
                }
            }
        }

        for net in nets.iter_mut() {
            if let Some(history) = net.history.as_mut() {
                let probs = model::forward(&net.params, x_all)?;
                history.record_epoch(probs.view())?;
            }
        }
        let val_map = nets
            .iter()
            .map(|net| evaluate(&net.params, &data.val))
            .collect::<Result<Vec<_>>>()?;
        let nets_f = nets.len() as f64;
        let (label_precision, label_recall) = if ledger.is_some() {
            let results: Vec<_> = counters.iter().map(LabelPrCounter::result).collect();
            let precision = results.iter().map(|r| r.precision.unwrap_or(0.0)).sum::<f64>() / nets_f;
            let recall = results.iter().map(|r| r.recall).sum::<f64>() / nets_f;
            (Some(precision), Some(recall))
        } else {
            (None, None)
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum.iter().map(|s| s / steps_per_epoch as f64).collect(),
            val_map,
            label_precision,
            label_recall,
            kept_fraction: trained.iter().sum::<usize>() as f64 / (nets_f * (n * classes) as f64),
            refurbished_count: corrected,
            tau: if schedule.is_some() { taus } else { Vec::new() },
        };
        log::debug!(
            "{kind} seed {} epoch {epoch}: loss {:?} val mAP {:?} precision {:?}",
            cfg.seed,
            stats.train_loss,
            stats.val_map,
            stats.label_precision
        );
        epochs.push(stats);
    }
    if let Some(mut out) = dump {
        out.flush().map_err(|e| Error::io(cfg.refurbish_dump.clone().unwrap_or_default(), e))?;
    }

    let val_final = epochs.last().map(|e| e.val_map.clone()).unwrap_or_default();
    let selected = (0..val_final.len())
        .fold(0, |best, k| if val_final[k] > val_final[best] { k } else { best });
    let test_map_per_network = nets
        .iter()
        .map(|net| evaluate(&net.params, &data.test))
        .collect::<Result<Vec<_>>>()?;
    let tau_final = match &schedule {
        Some(s) if s.is_class_dependent() => s.class_forget_rates(classes),
        Some(s) => vec![s.forget_rate()],
        None => Vec::new(),
    };
    Ok(RunReport {
        config: cfg.echo(kind),
        kind,
        seed: cfg.seed,
        epochs,
        final_stats: FinalStats {
            test_map: test_map_per_network[selected],
            selected_network: selected,
            test_map_per_network,
            val_map_per_network: val_final,
            tau_final,
        },
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn evaluate(params: &MlpParams, split: &MultiLabelDataset) -> Result<f64> {
    let probs = model::forward(params, split.features().view())?;
    Ok(mean_average_precision(probs.view(), split.labels())?.map)
}

impl TrainConfig {
    /// Flat key/value echo used in reports.
    pub fn echo(&self, kind: TrainerKind) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("trainer.kind", kind.to_string());
        put("optim.epochs", self.epochs.to_string());
        put("optim.batch_size", self.batch_size.to_string());
        put("optim.max_lr", self.max_lr.to_string());
        put("optim.warmup_fraction", self.warmup_fraction.to_string());
        put("model.hidden", self.hidden.to_string());
        put("model.gamma_pos", self.asl.gamma_pos.to_string());
        put("model.gamma_neg", self.asl.gamma_neg.to_string());
        put("model.margin", self.asl.margin.to_string());
        put("selection.alpha", self.alpha.to_string());
        put("selection.ramp_epochs", self.ramp_epochs.to_string());
        put("refurbish.theta", self.theta.to_string());
        put("refurbish.q", self.q.to_string());
        if let Some(e) = self.epsilon {
            put("selection.epsilon", e.to_string());
        }
        if let Some(e) = &self.epsilon_per_class {
            put(
                "selection.epsilon_per_class",
                e.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            );
        }
        m
    }
}
