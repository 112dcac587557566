//! From a config to trained runs: data preparation and the grid runner.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{DatasetSource, ExperimentConfig, NoiseConfig};
use crate::dataset::{self, prevalence, split_indices, synth_generate, LabelMatrix, MultiLabelDataset};
use crate::error::{Error, Result};
use crate::noise::{self, mixed_rate_for_target, NoiseLedger, NoiseStrategy, TransitionMatrix};
use crate::trainers::{self, RunReport, SplitData};

/// Result of applying a configured noise model.
#[derive(Debug, Clone)]
pub struct Injection {
    pub noisy: LabelMatrix,
    pub ledger: NoiseLedger,
    /// Mixed noise rate actually used.
    pub rate: Option<f64>,
}

/// Applies `noise` to clean `labels`; `None` for the `none` strategy.
pub fn apply_noise(labels: &LabelMatrix, noise: &NoiseConfig) -> Result<Option<Injection>> {
    let seed = noise.seed;
    let (noisy, ledger, rate) = match noise.strategy {
        NoiseStrategy::None => return Ok(None),
        NoiseStrategy::Uniform => {
            let eps = noise
                .epsilon
                .ok_or_else(|| Error::Config("uniform noise needs an epsilon".into()))?;
            let (noisy, ledger) = noise::inject_uniform(labels, eps, seed)?;
            (noisy, ledger, None)
        }
        NoiseStrategy::Mixed => {
            let rate = match (noise.rate, noise.epsilon) {
                (Some(r), _) => r,
                (None, Some(eps)) => mixed_rate_for_target(eps, prevalence(labels).overall)?,
                (None, None) => return Err(Error::Config("mixed noise needs a rate or an epsilon".into())),
            };
            let (noisy, ledger) = noise::inject_mixed(labels, rate, seed)?;
            (noisy, ledger, Some(rate))
        }
        NoiseStrategy::Transition => {
            let path = noise
                .transition
                .as_ref()
                .ok_or_else(|| Error::Config("transition noise needs a matrix file".into()))?;
            let matrix = TransitionMatrix::load(path)?;
            let (noisy, ledger) = noise::inject_transition(labels, &matrix, seed)?;
            (noisy, ledger, None)
        }
    };
    Ok(Some(Injection { noisy, ledger, rate }))
}

/// Data for one config: splits plus the ledger restricted to training rows.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub data: SplitData,
    pub ledger: Option<NoiseLedger>,
    /// Ledger over the whole dataset, before splitting.
    pub full_ledger: Option<NoiseLedger>,
    pub rate: Option<f64>,
}

/// Loads or generates the dataset, injects noise over all of it, splits, and
/// gives the validation and test splits their clean labels back.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (clean, existing) = match &cfg.dataset {
        DatasetSource::Synth(spec) => {
            let ds = synth_generate(spec)?;
            let ledger = NoiseLedger::clean(ds.len(), ds.n_classes());
            (ds, Some(ledger))
        }
        DatasetSource::Path(path) => {
            let observed = dataset::load_csv(path)?;
            let sidecar = NoiseLedger::sidecar_path(path);
            if sidecar.is_file() {
                let ledger = NoiseLedger::load(&sidecar)?;
                let clean = observed.with_labels(ledger.restore(observed.labels())?)?;
                if cfg.noise.strategy != NoiseStrategy::None {
                    return Err(Error::Config(format!(
                        "{} is already noisy (ledger {}); remove the noise settings",
                        path.display(),
                        sidecar.display()
                    )));
                }
                return finish(cfg, clean, observed.labels().clone(), Some(ledger), None);
            }
            (observed, None)
        }
    };
    match apply_noise(clean.labels(), &cfg.noise)? {
        Some(inj) => finish(cfg, clean, inj.noisy, Some(inj.ledger), inj.rate),
        None => {
            let labels = clean.labels().clone();
            finish(cfg, clean, labels, existing, None)
        }
    }
}

fn finish(
    cfg: &ExperimentConfig,
    clean: MultiLabelDataset,
    noisy: LabelMatrix,
    ledger: Option<NoiseLedger>,
    rate: Option<f64>,
) -> Result<PreparedData> {
    let idx = split_indices(clean.len(), cfg.split, cfg.split_seed)?;
    let train = clean.with_labels(noisy)?.subset(&idx.train);
    Ok(PreparedData {
        data: SplitData {
            train,
            val: clean.subset(&idx.val),
            test: clean.subset(&idx.test),
        },
        ledger: ledger.as_ref().map(|l| l.subset(&idx.train)),
        full_ledger: ledger,
        rate,
    })
}

/// Rejects a config whose trainer cannot run on `prepared`, before training.
pub fn preflight(cfg: &ExperimentConfig, prepared: &PreparedData) -> Result<()> {
    trainers::preflight(cfg.trainer, &prepared.data, prepared.ledger.as_ref(), &cfg.train)
}

/// Report config key holding the noise level of the training split.
pub const REALIZED_EPSILON: &str = "noise.realized_epsilon";

/// Trains `cfg.trainer` on prepared data with one seed.
pub fn run_seed(cfg: &ExperimentConfig, prepared: &PreparedData, seed: u64) -> Result<RunReport> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    if cfg.dump_refurbish && cfg.trainer.corrects() {
        train_cfg.refurbish_dump = Some(cfg.output_dir.join(format!("{}_seed{seed}_refurbish.csv", cfg.trainer)));
    }
    let mut report = trainers::train(cfg.trainer, &prepared.data, prepared.ledger.as_ref(), &train_cfg)?;
    report.config.extend(echo(cfg));
    if let Some(l) = &prepared.ledger {
        report.config.insert(REALIZED_EPSILON.into(), l.epsilon().to_string());
        if cfg.noise.strategy == NoiseStrategy::None {
            report.config.insert("noise.strategy".into(), l.strategy().to_string());
        }
    }
    Ok(report)
}

/// Config entries not covered by the training config echo.
fn echo(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut out = Vec::new();
    match &cfg.dataset {
        DatasetSource::Path(p) => out.push(("dataset.path".into(), p.display().to_string())),
        DatasetSource::Synth(s) => {
            out.push(("dataset.synth.n".into(), s.n.to_string()));
            out.push(("dataset.synth.d".into(), s.d.to_string()));
            out.push(("dataset.synth.classes".into(), s.classes.to_string()));
            out.push(("dataset.synth.prevalence".into(), s.target_prevalence.to_string()));
            out.push(("dataset.synth.correlation".into(), s.class_correlation.to_string()));
            out.push(("dataset.synth.seed".into(), s.seed.to_string()));
        }
    }
    out.push(("split.seed".into(), cfg.split_seed.to_string()));
    out.push(("noise.strategy".into(), cfg.noise.strategy.to_string()));
    if let Some(e) = cfg.noise.epsilon {
        out.push(("noise.epsilon".into(), e.to_string()));
    }
    if let Some(r) = cfg.noise.rate {
        out.push(("noise.rate".into(), r.to_string()));
    }
    out.push(("noise.seed".into(), cfg.noise.seed.to_string()));
    out
}

/// One run of a grid: a config and one of its seeds.
#[derive(Debug, Clone)]
pub struct GridJob {
    pub config: ExperimentConfig,
    pub seed: u64,
}

pub fn jobs_for(configs: &[ExperimentConfig]) -> Vec<GridJob> {
    configs
        .iter()
        .flat_map(|c| {
            c.seeds.iter().map(|&seed| GridJob {
                config: c.clone(),
                seed,
            })
        })
        .collect()
}

/// Runs every job on up to `workers` threads. `on_done` sees each finished
/// job under a lock, in completion order, so results can be persisted as
/// they arrive. A failing job leaves its error in its slot.
pub fn run_grid<F>(jobs: &[GridJob], workers: usize, on_done: F) -> Vec<Result<RunReport>>
where
    F: FnMut(usize, &GridJob, &Result<RunReport>) + Send,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunReport>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let sink = Mutex::new(on_done);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(k) else { break };
                let result = prepare(&job.config).and_then(|p| run_seed(&job.config, &p, job.seed));
                if let Err(e) = &result {
                    log::warn!("run {k} ({} seed {}) failed: {e}", job.config.trainer, job.seed);
                }
                (sink.lock().expect("grid sink poisoned"))(k, job, &result);
                *slots[k].lock().expect("grid slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("grid slot poisoned").expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SynthSpec;
    use crate::trainers::TrainerKind;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::parse(
            "dataset.synth.n=200\ndataset.synth.d=4\ndataset.synth.classes=3\ndataset.synth.prevalence=0.3\n\
             noise.strategy=mixed\nnoise.epsilon=0.2\noptim.epochs=3\nrefurbish.q=2",
        )
        .unwrap();
        cfg.validate().unwrap();
        cfg.trainer = TrainerKind::COTEACHING;
        cfg
    }

    #[test]
    fn evaluation_splits_are_clean() {
        let cfg = small();
        let p = prepare(&cfg).unwrap();
        let full = p.full_ledger.as_ref().unwrap();
        assert!(full.epsilon() > 0.0);
        let DatasetSource::Synth(spec) = &cfg.dataset else { unreachable!() };
        let clean = synth_generate(spec).unwrap();
        let expected = mixed_rate_for_target(0.2, prevalence(clean.labels()).overall).unwrap();
        assert_eq!(p.rate, Some(expected));
        let idx = split_indices(clean.len(), cfg.split, cfg.split_seed).unwrap();
        assert_eq!(p.data.val.labels(), clean.subset(&idx.val).labels());
        assert_eq!(p.data.test.labels(), clean.subset(&idx.test).labels());
        let ledger = p.ledger.as_ref().unwrap();
        let restored = ledger.restore(p.data.train.labels()).unwrap();
        assert_eq!(&restored, clean.subset(&idx.train).labels());
    }

    #[test]
    fn grid_slots_follow_job_order() {
        let mut a = small();
        a.seeds = vec![0, 1];
        let mut bad = small();
        bad.trainer = TrainerKind::MHSS;
        bad.noise = NoiseConfig::default();
        bad.dataset = DatasetSource::Synth(SynthSpec { n: 5, ..SynthSpec::default() });
        let jobs = jobs_for(&[a, bad]);
        assert_eq!(jobs.len(), 3);
        let mut seen = Vec::new();
        let results = run_grid(&jobs, 2, |k, _, _| seen.push(k));
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
        assert!(results[0].is_ok() && results[1].is_ok());
        assert!(results[2].is_err());
        assert_eq!(results[0].as_ref().unwrap().seed, 0);
        assert_eq!(results[1].as_ref().unwrap().seed, 1);
        assert!(run_grid(&[], 4, |_, _, _| {}).is_empty());
    }
}
