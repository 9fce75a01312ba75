use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use domattn::config::RunConfig;
use domattn::data::{generate_domain, save_dataset};
use domattn::trainer::{
    eval_split, evaluate, load_checkpoint, probe_model, run_jobs, save_checkpoint, train,
    worker_threads, Comparison, ProbeKind,
};
use domattn::Result;

#[derive(Parser)]
#[command(
    name = "domattn",
    version,
    about = "Multi-domain training with domain-attentive adapters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed` (and `compare.seeds` for compare).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`, or `data_dir` for gen-data.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render every configured domain to a dataset container.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one architecture and write a checkpoint and metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured datasets.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output_dir>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Activation statistics or attention assignments of a checkpoint.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "attention")]
        kind: ProbeKind,
    },
    /// Train every architecture and adapter count over the configured seeds.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn load_config(common: &Common, gen_data: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.compare.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        if gen_data {
            cfg.data_dir = out.clone();
        } else {
            cfg.output_dir = out.clone();
        }
    }
    if gen_data {
        cfg.output_dir = cfg.data_dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    started_unix_secs: u64,
    elapsed_secs: f64,
    threads: usize,
    version: &'a str,
}

#[derive(Serialize)]
struct DatasetMetric {
    dataset: String,
    split: String,
    metric: f64,
}

#[derive(Serialize)]
struct EvalReport {
    architecture: String,
    datasets: Vec<DatasetMetric>,
    average_metric: f64,
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    for spec in cfg.domains()? {
        let ds = generate_domain(&spec)?;
        let path = cfg.dataset_path(&spec);
        save_dataset(&ds, &path)?;
        println!(
            "{} train={} val={} test={} -> {}",
            spec.name,
            ds.train.len(),
            ds.val.len(),
            ds.test.len(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let datasets = cfg.load_datasets()?;
    let out = train(&cfg.train, &cfg.network, &datasets)?;
    let dir = &cfg.output_dir;
    save_checkpoint(&out.model, &dir.join(CHECKPOINT_FILE))?;
    write_text(&dir.join("metrics.csv"), &out.log.csv_string()?)?;
    write_text(&dir.join("summary.json"), &out.log.summary_json()?)?;
    if let Some(s) = &out.log.summary {
        println!(
            "{} seed {}: average metric {:.4}",
            s.architecture, s.seed, s.average_metric
        );
    }
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE))
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<()> {
    let model = load_checkpoint(&checkpoint_path(cfg, checkpoint))?;
    let datasets = cfg.load_datasets()?;
    let mut rows = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        model.check_task(i, ds)?;
        let split = eval_split(ds);
        rows.push(DatasetMetric {
            dataset: ds.spec.name.clone(),
            split: format!("{split:?}").to_lowercase(),
            metric: evaluate(&model, i, ds, split)?,
        });
    }
    let average_metric = rows.iter().map(|r| r.metric).sum::<f64>() / rows.len() as f64;
    let report = EvalReport {
        architecture: model.architecture.name().to_owned(),
        datasets: rows,
        average_metric,
    };
    write_json(&cfg.output_dir.join("eval.json"), &report)?;
    println!("average metric {average_metric:.4}");
    Ok(())
}

fn cmd_probe(cfg: &RunConfig, checkpoint: &Option<PathBuf>, kind: ProbeKind) -> Result<()> {
    let model = load_checkpoint(&checkpoint_path(cfg, checkpoint))?;
    let datasets = cfg.load_datasets()?;
    let report = probe_model(&model, &datasets, kind)?;
    let mut buf = Vec::new();
    let name = match kind {
        ProbeKind::Stats => {
            report.write_stats_csv(&mut buf)?;
            "probe_stats.csv"
        }
        ProbeKind::Attention => {
            report.write_assignments_csv(&mut buf)?;
            "probe_attention.csv"
        }
    };
    let path = cfg.output_dir.join(name);
    write_text(&path, &String::from_utf8_lossy(&buf))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(cfg: &RunConfig) -> Result<usize> {
    let datasets = cfg.load_datasets()?;
    let jobs = cfg.compare.jobs();
    let threads = worker_threads();
    let outcomes = run_jobs(&jobs, &cfg.train, &cfg.network, &datasets, threads)?;
    for (job, out) in jobs.iter().zip(&outcomes) {
        let dir = cfg
            .output_dir
            .join("runs")
            .join(format!("{}_seed{}", job.label, job.seed));
        write_text(&dir.join("metrics.csv"), &out.log.csv_string()?)?;
        write_text(&dir.join("summary.json"), &out.log.summary_json()?)?;
    }
    let cmp = Comparison::from_outcomes(&jobs, &outcomes, &datasets)?;
    let mut rows = Vec::new();
    cmp.write_rows_csv(&mut rows)?;
    write_text(
        &cfg.output_dir.join("compare_runs.csv"),
        &String::from_utf8_lossy(&rows),
    )?;
    let mut summary = Vec::new();
    cmp.write_summary_csv(&mut summary)?;
    write_text(
        &cfg.output_dir.join("compare_summary.csv"),
        &String::from_utf8_lossy(&summary),
    )?;
    for s in &cmp.summary {
        println!(
            "{:<20} median {:.4}  params {:>7}  cost {}",
            s.label, s.median_average_metric, s.params.total, s.relative_cost
        );
    }
    Ok(threads)
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::GenData { common } => ("gen-data", common),
        Command::Train { common } => ("train", common),
        Command::Eval { common, .. } => ("eval", common),
        Command::Probe { common, .. } => ("probe", common),
        Command::Compare { common } => ("compare", common),
    };
    let cfg = load_config(common, name == "gen-data")?;
    cfg.write_resolved()?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut threads = 1;
    match &cli.command {
        Command::GenData { .. } => gen_data(&cfg)?,
        Command::Train { .. } => cmd_train(&cfg)?,
        Command::Eval { checkpoint, .. } => cmd_eval(&cfg, checkpoint)?,
        Command::Probe {
            checkpoint, kind, ..
        } => cmd_probe(&cfg, checkpoint, *kind)?,
        Command::Compare { .. } => threads = cmd_compare(&cfg)?,
    }
    write_json(
        &cfg.output_dir.join(format!("{name}.meta.json")),
        &RunMeta {
            command: name,
            started_unix_secs: started,
            elapsed_secs: clock.elapsed().as_secs_f64(),
            threads,
            version: env!("CARGO_PKG_VERSION"),
        },
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
