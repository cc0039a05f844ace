//! Multi-seed execution, summaries and controller comparison.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hmpcc_core::metrics::{aggregate, MetricSample, Stat, Summary};
use hmpcc_core::sim::{self, Outcome, SimLog};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::output::{to_json, trajectory_csv, write_atomic};
use crate::scenario::ScenarioFile;

/// Result of one seed: the log, or the reason no log exists.
#[derive(Debug)]
pub struct RunResult {
    pub seed: u64,
    pub log: Result<SimLog, String>,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Resolves and runs one seed; panics are caught and reported as errors.
pub fn run_seed(file: &ScenarioFile, seed: u64) -> Result<SimLog, String> {
    catch_unwind(AssertUnwindSafe(|| {
        let scenario = file.resolve(seed).map_err(|e| e.to_string())?;
        sim::run(&scenario).map_err(|e| e.to_string())
    }))
    .unwrap_or_else(|p| Err(format!("panic: {}", panic_message(p.as_ref()))))
}

/// Runs every seed (deduplicated, ascending) on a pool of `jobs` workers.
pub fn run_seeds(
    file: &ScenarioFile,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<RunResult>, CliError> {
    let seeds: Vec<u64> = seeds
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| RunResult {
                seed,
                log: run_seed(file, seed),
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    /// "completed" or "failed" (no log produced).
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_metrics: Option<MetricSample>,
    pub degraded_solves: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub controller: String,
    pub seeds: Vec<u64>,
    pub failed_runs: usize,
    pub runs: Vec<RunEntry>,
    /// Statistics over the completed runs.
    pub aggregate: Summary,
}

pub fn summarize(file: &ScenarioFile, results: &[RunResult]) -> BatchSummary {
    let runs = results
        .iter()
        .map(|r| match &r.log {
            Ok(log) => RunEntry {
                seed: r.seed,
                status: "completed".into(),
                outcome: Some(log.outcome),
                final_metrics: log.final_metrics(),
                degraded_solves: log
                    .frames
                    .iter()
                    .flat_map(|f| &f.robots)
                    .filter(|rec| rec.status() == "degraded")
                    .count(),
                log_sha256: Some(log.hash()),
                error: None,
            },
            Err(e) => RunEntry {
                seed: r.seed,
                status: "failed".into(),
                outcome: None,
                final_metrics: None,
                degraded_solves: 0,
                log_sha256: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    let logs: Vec<SimLog> = results
        .iter()
        .filter_map(|r| r.log.as_ref().ok().cloned())
        .collect();
    BatchSummary {
        controller: file.controller.kind.clone(),
        seeds: results.iter().map(|r| r.seed).collect(),
        failed_runs: results.iter().filter(|r| r.log.is_err()).count(),
        runs,
        aggregate: aggregate(&logs),
    }
}

/// Writes the artifacts of one run into `dir`.
pub fn write_run(dir: &Path, file: &ScenarioFile, log: &SimLog) -> Result<(), CliError> {
    if file.run.wants("log") {
        write_atomic(&dir.join("log.json"), to_json(log, false).as_bytes())?;
    }
    if file.run.wants("trajectory") {
        write_atomic(&dir.join("trajectory.csv"), trajectory_csv(log).as_bytes())?;
    }
    Ok(())
}

/// Per-seed directories `seed_<s>/` plus `summary.json` under `out`.
pub fn write_batch(
    out: &Path,
    file: &ScenarioFile,
    results: &[RunResult],
) -> Result<BatchSummary, CliError> {
    for r in results {
        let dir = out.join(format!("seed_{}", r.seed));
        match &r.log {
            Ok(log) => write_run(&dir, file, log)?,
            Err(e) => {
                let failed = serde_json::json!({ "seed": r.seed, "error": e });
                write_atomic(&dir.join("failed.json"), to_json(&failed, true).as_bytes())?;
            }
        }
    }
    let summary = summarize(file, results);
    if file.run.wants("summary") {
        write_atomic(
            &out.join("summary.json"),
            to_json(&summary, true).as_bytes(),
        )?;
    }
    Ok(summary)
}

pub fn batch(
    file: &ScenarioFile,
    seeds: &[u64],
    jobs: usize,
    out: &Path,
) -> Result<BatchSummary, CliError> {
    let results = run_seeds(file, seeds, jobs)?;
    write_batch(out, file, &results)
}

/// One controller's statistics at one human count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub controller: String,
    pub runs: usize,
    pub failed_runs: usize,
    /// Percentage in [0, 100] over completed runs.
    pub success_rate: f64,
    /// Final E and H over successful runs; absent with fewer than three.
    pub e: Option<Stat>,
    pub h: Option<Stat>,
    /// Human trajectory hash per seed.
    pub human_hashes: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub humans: usize,
    pub arms: Vec<ArmStats>,
    /// Whether all arms saw identical human trajectories on every seed.
    pub humans_identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
}

pub const COMPARED_CONTROLLERS: [&str; 2] = ["hmpcc", "baseline"];

/// Runs each controller on the same seeds, once per entry of `human_counts`
/// (the file's own human setup when empty).
pub fn compare(
    file: &ScenarioFile,
    seeds: &[u64],
    human_counts: &[usize],
    controllers: &[&str],
    jobs: usize,
) -> Result<Comparison, CliError> {
    let counts: Vec<Option<usize>> = if human_counts.is_empty() {
        vec![None]
    } else {
        human_counts.iter().copied().map(Some).collect()
    };
    let mut rows = Vec::new();
    let mut used_seeds = Vec::new();
    for count in counts {
        let mut variant = file.clone();
        if let Some(n) = count {
            variant.humans.count = n;
            variant.humans.agents.clear();
        }
        let humans = count.unwrap_or(variant.humans.count.max(variant.humans.agents.len()));
        let mut arms = Vec::new();
        for &c in controllers {
            let mut arm = variant.clone();
            arm.controller.kind = c.to_string();
            let results = run_seeds(&arm, seeds, jobs)?;
            used_seeds = results.iter().map(|r| r.seed).collect();
            let summary = summarize(&arm, &results);
            let agg = &summary.aggregate;
            arms.push(ArmStats {
                controller: c.to_string(),
                runs: agg.runs,
                failed_runs: summary.failed_runs,
                success_rate: agg.success_rate,
                e: agg.final_values.map(|f| f.e),
                h: agg.final_values.map(|f| f.h),
                human_hashes: results
                    .iter()
                    .map(|r| r.log.as_ref().ok().map(|l| l.human_hash()))
                    .collect(),
            });
        }
        let humans_identical = arms
            .windows(2)
            .all(|w| w[0].human_hashes == w[1].human_hashes);
        rows.push(CompareRow {
            humans,
            arms,
            humans_identical,
        });
    }
    Ok(Comparison {
        seeds: used_seeds,
        rows,
    })
}

fn fmt_stat(s: &Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
        None => "n/a".into(),
    }
}

/// Text table with one row per human count.
pub fn comparison_table(c: &Comparison) -> String {
    let mut out = String::new();
    let mut header = format!("{:>4}", "N_h");
    if let Some(row) = c.rows.first() {
        for arm in &row.arms {
            let _ = write!(
                header,
                " | {:>16} {:>16} {:>9}",
                format!("{} E", arm.controller),
                format!("{} H", arm.controller),
                "success"
            );
        }
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.chars().count()));
    out.push('\n');
    for row in &c.rows {
        let _ = write!(out, "{:>4}", row.humans);
        for arm in &row.arms {
            let _ = write!(
                out,
                " | {:>16} {:>16} {:>8.0}%",
                fmt_stat(&arm.e),
                fmt_stat(&arm.h),
                arm.success_rate
            );
        }
        out.push('\n');
    }
    out
}
