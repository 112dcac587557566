use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use mlc_noise::config::{expand_grid, ExperimentConfig, NoiseConfig};
use mlc_noise::dataset::{self, prevalence, SynthSpec};
use mlc_noise::experiment::{self, apply_noise, jobs_for, run_grid};
use mlc_noise::report::{self, IndexRow, IndexWriter};
use mlc_noise::{NoiseLedger, NoiseStrategy, TrainerKind};

#[derive(Parser)]
#[command(name = "mlc-noise", version, about = "Multi-label learning under label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-label dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0.2)]
        prevalence: f64,
        #[arg(long, default_value_t = 0.0)]
        correlation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Corrupt a dataset's labels and write it with a `.ledger` sidecar.
    Inject {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strategy: NoiseStrategy,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Mixed noise rate; derived from --epsilon when absent.
        #[arg(long)]
        rate: Option<f64>,
        /// Transition matrix CSV.
        #[arg(long)]
        transition: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every seed of a config; one JSON report per seed.
    Run {
        config: PathBuf,
        /// Overrides `trainer.kind`.
        #[arg(long)]
        trainer: Option<TrainerKind>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Cartesian product of a grid spec.
    Grid {
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a directory of reports.
    Report { dir: PathBuf },
}

/// Exit status with its cause.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const RUN_FAILURE: u8 = 1;
const CONFIG_ERROR: u8 = 2;

fn config_err(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: CONFIG_ERROR,
        error: error.into(),
    }
}

fn run_err(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: RUN_FAILURE,
        error: error.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            out,
            n,
            d,
            classes,
            prevalence,
            correlation,
            seed,
        } => cmd_synth(
            &out,
            &SynthSpec {
                n,
                d,
                classes,
                target_prevalence: prevalence,
                class_correlation: correlation,
                seed,
            },
        ),
        Command::Inject {
            input,
            out,
            strategy,
            epsilon,
            rate,
            transition,
            seed,
        } => cmd_inject(
            &input,
            &out,
            &NoiseConfig {
                strategy,
                epsilon,
                rate,
                transition,
                seed,
            },
        ),
        Command::Run { config, trainer, out } => cmd_run(&config, trainer, out),
        Command::Grid { spec, jobs, out } => cmd_grid(&spec, jobs, out),
        Command::Report { dir } => cmd_report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_synth(out: &Path, spec: &SynthSpec) -> Result<(), Failure> {
    let ds = dataset::synth_generate(spec).map_err(config_err)?;
    dataset::save_csv(&ds, out).map_err(run_err)?;
    let prev = prevalence(ds.labels());
    println!(
        "wrote {} ({} rows, {} features, {} classes, prevalence {:.4})",
        out.display(),
        ds.len(),
        ds.n_features(),
        ds.n_classes(),
        prev.overall
    );
    Ok(())
}

fn cmd_inject(input: &Path, out: &Path, noise: &NoiseConfig) -> Result<(), Failure> {
    let sidecar = NoiseLedger::sidecar_path(input);
    if sidecar.is_file() {
        return Err(config_err(anyhow!(
            "{} already carries a noise ledger ({})",
            input.display(),
            sidecar.display()
        )));
    }
    let clean = dataset::load_csv(input).map_err(config_err)?;
    let injection = apply_noise(clean.labels(), noise)
        .with_context(|| format!("injecting noise into {}", input.display()))
        .map_err(config_err)?
        .ok_or_else(|| config_err(anyhow!("strategy `none` injects nothing")))?;
    let noisy = clean.with_labels(injection.noisy).map_err(run_err)?;
    dataset::save_csv(&noisy, out).map_err(run_err)?;
    let ledger_path = NoiseLedger::sidecar_path(out);
    injection.ledger.save(&ledger_path).map_err(run_err)?;

    let ledger = &injection.ledger;
    let flipped = ledger.flip_mask().total_positives();
    println!("realized epsilon = {} ({flipped} of {} cells flipped)", ledger.epsilon(), ledger.flip_mask().cells());
    if let Some(r) = injection.rate {
        println!("mixed rate r = {r}");
    }
    let per_class: Vec<String> = ledger.epsilon_per_class().iter().map(|e| format!("{e:.6}")).collect();
    println!("epsilon_c = [{}]", per_class.join(", "));
    println!("wrote {} and {}", out.display(), ledger_path.display());
    Ok(())
}

fn report_stem(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}_seed{seed}", cfg.trainer)
}

fn cmd_run(path: &Path, trainer: Option<TrainerKind>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(config_err)?;
    if let Some(kind) = trainer {
        cfg.trainer = kind;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    let prepared = experiment::prepare(&cfg).map_err(config_err)?;
    experiment::preflight(&cfg, &prepared).map_err(config_err)?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(run_err)?;

    let mut failed = 0;
    for &seed in &cfg.seeds {
        match experiment::run_seed(&cfg, &prepared, seed) {
            Ok(r) => {
                let json = cfg.output_dir.join(format!("{}.json", report_stem(&cfg, seed)));
                report::save_report(&r, &json).map_err(run_err)?;
                report::save_diagnostics(&r, &json).map_err(run_err)?;
                println!("{} seed {seed}: test mAP {:.4} -> {}", cfg.trainer, r.final_stats.test_map, json.display());
            }
            Err(e) => {
                failed += 1;
                eprintln!("{} seed {seed} failed: {e}", cfg.trainer);
            }
        }
    }
    if failed > 0 {
        return Err(run_err(anyhow!("{failed} of {} runs failed", cfg.seeds.len())));
    }
    Ok(())
}

fn cmd_grid(spec: &Path, workers: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let text = fs::read_to_string(spec)
        .with_context(|| format!("reading {}", spec.display()))
        .map_err(config_err)?;
    let mut configs: Vec<ExperimentConfig> = expand_grid(&text, spec.parent())
        .map_err(config_err)?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    if let Some(out) = &out {
        for c in &mut configs {
            c.output_dir = out.clone();
        }
    }
    let index_dir = configs
        .first()
        .map(|c| c.output_dir.clone())
        .ok_or_else(|| config_err(anyhow!("grid spec expands to no runs")))?;
    for c in &configs {
        fs::create_dir_all(&c.output_dir)
            .with_context(|| format!("creating {}", c.output_dir.display()))
            .map_err(run_err)?;
    }
    let jobs = jobs_for(&configs);
    let index_path = index_dir.join("index.csv");
    let mut index = IndexWriter::create(&index_path).map_err(run_err)?;
    let mut write_errors = Vec::new();
    let results = run_grid(&jobs, workers, |k, job, result| {
        let mut saved = None;
        if let Ok(r) = result {
            let json = job
                .config
                .output_dir
                .join(format!("run{k:04}_{}.json", report_stem(&job.config, job.seed)));
            match report::save_report(r, &json).and_then(|_| report::save_diagnostics(r, &json)) {
                Ok(_) => saved = Some(json),
                Err(e) => write_errors.push(e.to_string()),
            }
        }
        if let Err(e) = index.append(&IndexRow::new(k, job, result, saved.as_deref())) {
            write_errors.push(e.to_string());
        }
        match result {
            Ok(r) => log::info!("run {k}: {} seed {}: test mAP {:.4}", job.config.trainer, job.seed, r.final_stats.test_map),
            Err(e) => log::error!("run {k}: {} seed {}: {e}", job.config.trainer, job.seed),
        }
    });
    println!("{} runs, index at {}", results.len(), index_path.display());
    if !write_errors.is_empty() {
        return Err(run_err(anyhow!("writing results: {}", write_errors.join("; "))));
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        return Err(run_err(anyhow!("{failed} of {} runs failed", results.len())));
    }
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<(), Failure> {
    let set = report::load_dir(dir).map_err(config_err)?;
    if set.reports.is_empty() {
        return Err(config_err(anyhow!("no readable reports in {}", dir.display())));
    }
    let reports: Vec<_> = set.reports.into_iter().map(|(_, r)| r).collect();
    let summary = report::summarize(&reports);
    let sweep = report::alpha_sweep(&reports);
    let summary_path = dir.join("summary.csv");
    let sweep_path = dir.join("alpha_sweep.csv");
    report::write_csv(&summary, &summary_path).map_err(run_err)?;
    report::write_csv(&sweep, &sweep_path).map_err(run_err)?;

    println!("{:<20} {:>6} {:>10} {:>8} {:>5}  test mAP", "kind", "alpha", "noise", "epsilon", "runs");
    for row in &summary {
        println!(
            "{:<20} {:>6} {:>10} {:>8} {:>5}  {:.4} ± {:.4}",
            row.kind, row.alpha, row.noise, row.epsilon, row.runs, row.test_map_mean, row.test_map_std
        );
    }
    println!("wrote {} and {}", summary_path.display(), sweep_path.display());
    Ok(())
}
