use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{Architecture, TrainConfig};
use super::train::{train, TrainOutcome};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, ParamSummary};

pub const THREADS_ENV: &str = "DOMATTN_THREADS";

/// Worker count: `DOMATTN_THREADS` when set, otherwise the available cores.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub architectures: Vec<Architecture>,
    pub seeds: Vec<u64>,
    /// DA branch counts for the adapter-count sweep; empty skips it.
    pub adapter_sweep: Vec<usize>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            architectures: Architecture::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            adapter_sweep: vec![1, 3, 5, 7, 9],
        }
    }
}

/// One training run of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub label: String,
    pub architecture: Architecture,
    pub num_adapters: Option<usize>,
    pub seed: u64,
}

impl Job {
    pub fn architecture(architecture: Architecture, seed: u64) -> Self {
        Self {
            label: architecture.name().to_owned(),
            architecture,
            num_adapters: None,
            seed,
        }
    }

    pub fn sweep(n: usize, seed: u64) -> Self {
        Self {
            label: format!("universal_da_n{n}"),
            architecture: Architecture::UniversalDa,
            num_adapters: Some(n),
            seed,
        }
    }

    pub fn config(&self, template: &TrainConfig) -> TrainConfig {
        TrainConfig {
            architecture: self.architecture,
            num_adapters: self.num_adapters.or(template.num_adapters),
            seed: self.seed,
            ..template.clone()
        }
    }
}

impl CompareConfig {
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &a in &self.architectures {
            for &s in &self.seeds {
                jobs.push(Job::architecture(a, s));
            }
        }
        for &n in &self.adapter_sweep {
            for &s in &self.seeds {
                jobs.push(Job::sweep(n, s));
            }
        }
        jobs
    }
}

/// Trains every job, fanning out over at most `threads` workers. Results
/// come back in job order and do not depend on the thread count.
pub fn run_jobs(
    jobs: &[Job],
    template: &TrainConfig,
    base: &NetworkSpec,
    datasets: &[DomainDataset],
    threads: usize,
) -> Result<Vec<TrainOutcome>> {
    let results: Mutex<Vec<Option<Result<TrainOutcome>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let out = train(&job.config(template), base, datasets);
                results.lock().expect("result slot lock")[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("result slot lock")
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Error::contract("worker exited without a result"))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub job: Job,
    pub average_metric: f64,
    pub metrics: Vec<f64>,
    pub params: ParamSummary,
    pub relative_cost: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub architecture: Architecture,
    pub num_adapters: Option<usize>,
    pub runs: usize,
    pub median_average_metric: f64,
    pub params: ParamSummary,
    pub relative_cost: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub datasets: Vec<String>,
    pub rows: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl Comparison {
    pub fn from_outcomes(
        jobs: &[Job],
        outcomes: &[TrainOutcome],
        datasets: &[DomainDataset],
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(jobs.len());
        for (job, out) in jobs.iter().zip(outcomes) {
            let s = out
                .log
                .summary
                .as_ref()
                .ok_or_else(|| Error::contract("training run produced no summary"))?;
            rows.push(RunRow {
                job: job.clone(),
                average_metric: s.average_metric,
                metrics: s.final_metrics.clone(),
                params: s.params,
                relative_cost: s.relative_cost,
            });
        }
        let mut summary: Vec<SummaryRow> = Vec::new();
        for r in &rows {
            if summary.iter().any(|s| s.label == r.job.label) {
                continue;
            }
            let group: Vec<&RunRow> = rows.iter().filter(|x| x.job.label == r.job.label).collect();
            let metrics: Vec<f64> = group.iter().map(|x| x.average_metric).collect();
            summary.push(SummaryRow {
                label: r.job.label.clone(),
                architecture: r.job.architecture,
                num_adapters: r.job.num_adapters,
                runs: group.len(),
                median_average_metric: median(&metrics),
                params: r.params,
                relative_cost: r.relative_cost,
            });
        }
        Ok(Self {
            datasets: datasets.iter().map(|d| d.spec.name.clone()).collect(),
            rows,
            summary,
        })
    }

    pub fn summary_for(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.label == label)
    }

    /// One row per run; per-dataset metrics in trailing columns.
    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = [
            "label",
            "architecture",
            "num_adapters",
            "seed",
            "average_metric",
            "params_total",
            "params_shared",
            "params_adapters",
            "params_heads",
            "relative_cost",
        ]
        .map(String::from)
        .to_vec();
        header.extend(self.datasets.iter().cloned());
        out.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![
                r.job.label.clone(),
                r.job.architecture.name().to_owned(),
                r.job
                    .num_adapters
                    .map(|n| n.to_string())
                    .unwrap_or_default(),
                r.job.seed.to_string(),
                r.average_metric.to_string(),
                r.params.total.to_string(),
                r.params.shared.to_string(),
                r.params.adapters.to_string(),
                r.params.heads.to_string(),
                r.relative_cost.to_string(),
            ];
            row.extend(r.metrics.iter().map(|m| m.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "label",
            "architecture",
            "num_adapters",
            "runs",
            "median_average_metric",
            "params_total",
            "params_adapters",
            "relative_cost",
        ])?;
        for s in &self.summary {
            out.write_record([
                s.label.clone(),
                s.architecture.name().to_owned(),
                s.num_adapters.map(|n| n.to_string()).unwrap_or_default(),
                s.runs.to_string(),
                s.median_average_metric.to_string(),
                s.params.total.to_string(),
                s.params.adapters.to_string(),
                s.relative_cost.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains every architecture and sweep point over the shared seeds and
/// tabulates median average metrics, parameter counts and relative cost.
pub fn compare_architectures(
    cfg: &CompareConfig,
    template: &TrainConfig,
    base: &NetworkSpec,
    datasets: &[DomainDataset],
    threads: usize,
) -> Result<Comparison> {
    let jobs = cfg.jobs();
    let outcomes = run_jobs(&jobs, template, base, datasets, threads)?;
    Comparison::from_outcomes(&jobs, &outcomes, datasets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn job_grid() {
        let jobs = CompareConfig::default().jobs();
        assert_eq!(jobs.len(), 5 * 3 + 5 * 3);
        assert_eq!(jobs[0], Job::architecture(Architecture::Bank, 0));
        assert_eq!(jobs[15].num_adapters, Some(1));
    }
}
