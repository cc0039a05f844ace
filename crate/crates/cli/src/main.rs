use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmpcc_cli::batch::{self, COMPARED_CONTROLLERS};
use hmpcc_cli::output::{to_json, write_atomic};
use hmpcc_cli::scenario::parse_seeds;
use hmpcc_cli::{svg, CliError, ScenarioFile, OUT_DIR_ENV};
use hmpcc_core::sim::SimLog;

#[derive(Parser)]
#[command(name = "hmpcc", version, about = "Human-aware MPC coverage simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seed and write its log, trajectory table and summary.
    Run {
        scenario: PathBuf,
        /// Defaults to the first seed listed in the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
        /// Overrides the controller named in the file.
        #[arg(long)]
        controller: Option<String>,
    },
    /// Run a range of seeds in parallel.
    Batch {
        scenario: PathBuf,
        /// `a..b` (inclusive) or `a,b,c`; defaults to the file's seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        controller: Option<String>,
    },
    /// Run HMPCC and the baseline on the same seeds.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated human counts, one table row each.
        #[arg(long, value_delimiter = ',')]
        humans: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
    },
    /// Render one frame of a log as SVG.
    Snapshot {
        log: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path, controller: Option<String>) -> Result<ScenarioFile, CliError> {
    let mut file = ScenarioFile::load(path)?;
    if let Some(c) = controller {
        file.controller.kind = c;
        file.check()?;
    }
    Ok(file)
}

fn seeds_of(file: &ScenarioFile, arg: Option<String>) -> Result<Vec<u64>, CliError> {
    match arg {
        Some(s) => parse_seeds(&s),
        None => Ok(file.run.seeds.clone()),
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            scenario,
            seed,
            out,
            controller,
        } => {
            let file = load(&scenario, controller)?;
            let seed = seed.unwrap_or(file.run.seeds[0]);
            let resolved = file.resolve(seed)?;
            let log =
                hmpcc_core::sim::run(&resolved).map_err(|e| CliError::Invalid(e.to_string()))?;
            let results = [batch::RunResult { seed, log: Ok(log) }];
            let summary = batch::write_batch(&out, &file, &results)?;
            let entry = &summary.runs[0];
            println!(
                "seed {seed}: {} final E {:.3}",
                serde_json::to_string(&entry.outcome).unwrap_or_default(),
                entry.final_metrics.map(|m| m.e).unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Batch {
            scenario,
            seeds,
            jobs,
            out,
            controller,
        } => {
            let file = load(&scenario, controller)?;
            let seeds = seeds_of(&file, seeds)?;
            let summary = batch::batch(&file, &seeds, jobs, &out)?;
            let agg = &summary.aggregate;
            println!(
                "{} runs, {} failed, success rate {:.0}%, final E {}",
                agg.runs,
                summary.failed_runs,
                agg.success_rate,
                agg.final_values
                    .map(|f| format!("{:.3} ± {:.3}", f.e.mean, f.e.std))
                    .unwrap_or_else(|| "n/a".into())
            );
            if summary.failed_runs > 0 {
                return Err(CliError::Runtime(format!(
                    "{} run(s) failed; see failed.json files",
                    summary.failed_runs
                )));
            }
            Ok(())
        }
        Command::Compare {
            scenario,
            seeds,
            humans,
            jobs,
            out,
        } => {
            let file = load(&scenario, None)?;
            let seeds = seeds_of(&file, seeds)?;
            let cmp = batch::compare(&file, &seeds, &humans, &COMPARED_CONTROLLERS, jobs)?;
            let table = batch::comparison_table(&cmp);
            write_atomic(&out.join("compare.json"), to_json(&cmp, true).as_bytes())?;
            write_atomic(&out.join("compare.txt"), table.as_bytes())?;
            print!("{table}");
            Ok(())
        }
        Command::Snapshot { log, t, out } => {
            let text = std::fs::read_to_string(&log)
                .map_err(|e| CliError::Parse(format!("{}: {e}", log.display())))?;
            let log: SimLog = serde_json::from_str(&text)
                .map_err(|e| CliError::Parse(format!("{}: {e}", log.display())))?;
            let frame = svg::frame_at(&log, t)?;
            write_atomic(&out, svg::render(&log, frame).as_bytes())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
