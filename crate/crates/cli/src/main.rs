//! Batch front end: simulate datasets, run filter combinations, evaluate
//! traces against truth, and merge summary reports.
//!
//! Exit codes: 0 success, 2 validation error (bad input, bad config),
//! 3 numerical failure inside the filter.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rover_nav::geodesy::EllipsoidModel;
use rover_nav::pipeline::{self, ErrorReport, PipelineError, RunOutput, UpdateCombo};
use rover_nav::sim::Scenario;

#[derive(Parser)]
#[command(name = "rover-nav", version, about = "Wheeled-rover dead-reckoning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (imu.csv, odom.csv, truth.csv, run.cfg).
    Simulate {
        /// Scenario preset: static, straight, concrete-turn, rough-terrain,
        /// fast-rectangle, slow-rectangle.
        scenario: String,
        /// Output dataset directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Monte-Carlo seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the filter on a dataset under one or more update combinations.
    Run {
        /// Dataset directory containing run.cfg.
        #[arg(short, long)]
        dataset: PathBuf,
        /// Update combinations, comma separated (subsets of IZNOB; I is
        /// implied). Use `menu` for the standard twelve.
        #[arg(short, long, default_value = "IZNO")]
        updates: String,
        /// Output directory for traces and reports (default: the dataset).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an externally produced trace CSV against a dataset's truth.
    Eval {
        /// Dataset directory with truth.csv.
        #[arg(short, long)]
        dataset: PathBuf,
        /// Estimate trace CSV (forward or smoothed).
        #[arg(short, long)]
        estimate: PathBuf,
    },
    /// Merge run summaries into one table.
    Report {
        /// summary.csv files produced by `run`.
        #[arg(short = 'm', long, num_args = 1..)]
        merge: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Simulate { scenario, out, seed } => simulate(&scenario, &out, seed),
        Command::Run { dataset, updates, out } => run(&dataset, &updates, out.as_deref()),
        Command::Eval { dataset, estimate } => eval(&dataset, &estimate),
        Command::Report { merge } => report(&merge),
    }
}

fn simulate(name: &str, out: &Path, seed: u64) -> Result<(), PipelineError> {
    let mut scenario = Scenario::by_name(name).ok_or_else(|| {
        PipelineError::Config(format!(
            "unknown scenario `{name}` (expected one of {})",
            Scenario::preset_names().join(", ")
        ))
    })?;
    scenario.seed = seed;
    pipeline::simulate_dataset(&scenario, seed, out)?;
    println!("wrote {} dataset to {}", scenario.name, out.display());
    Ok(())
}

fn parse_combos(updates: &str) -> Result<Vec<UpdateCombo>, PipelineError> {
    if updates.eq_ignore_ascii_case("menu") {
        return Ok(UpdateCombo::standard_menu());
    }
    updates.split(',').map(UpdateCombo::parse).collect()
}

fn worker_count(jobs: usize) -> usize {
    std::env::var("ROVER_NAV_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(jobs.max(1))
}

fn run(dataset: &Path, updates: &str, out: Option<&Path>) -> Result<(), PipelineError> {
    let combos = parse_combos(updates)?;
    let config = pipeline::read_config(dataset)?;
    let data = pipeline::ingest(dataset, &config)?;
    for warning in &data.warnings {
        eprintln!("warning: {warning}");
    }
    let out_dir = out.unwrap_or(dataset);
    std::fs::create_dir_all(out_dir)?;

    // combos are independent; fan out across a bounded worker pool and
    // reassemble in menu order so the report is deterministic
    let workers = worker_count(combos.len());
    let mut results: Vec<Option<Result<RunOutput, PipelineError>>> =
        (0..combos.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let (tx, rx) = std::sync::mpsc::channel();
        let mut next = 0usize;
        let mut active = 0usize;
        loop {
            while active < workers && next < combos.len() {
                let tx = tx.clone();
                let combo = combos[next];
                let idx = next;
                let data = &data;
                let config = &config;
                scope.spawn(move || {
                    let result = pipeline::run_filter(&data.imu, &data.odom, config, &combo);
                    let _ = tx.send((idx, result));
                });
                next += 1;
                active += 1;
            }
            if active == 0 {
                break;
            }
            let (idx, result) = rx.recv().expect("worker channel open");
            results[idx] = Some(result);
            active -= 1;
        }
    });

    let model = EllipsoidModel::wgs84();
    let mut reports = Vec::new();
    for (combo, slot) in combos.iter().zip(results) {
        let output = slot.expect("all workers reported")?;
        let label = combo.label();
        let tag = label.replace('+', "");
        pipeline::write_trace_csv(&out_dir.join(format!("forward_{tag}.csv")), &output.forward)?;
        if combo.backward {
            pipeline::write_trace_csv(
                &out_dir.join(format!("smoothed_{tag}.csv")),
                &output.smoothed,
            )?;
        }
        write_slip_log(&out_dir.join(format!("slip_{tag}.csv")), &output)?;
        write_stop_log(&out_dir.join(format!("stops_{tag}.csv")), &output)?;
        if let Some(truth) = &data.truth {
            let report = pipeline::evaluate(&label, &output.forward, truth, &model)?;
            pipeline::write_error_epochs_csv(
                &out_dir.join(format!("errors_{tag}.csv")),
                &report,
            )?;
            if combo.backward && !output.smoothed.is_empty() {
                let smoothed_report = pipeline::evaluate(
                    &format!("{label} (smoothed)"),
                    &output.smoothed,
                    truth,
                    &model,
                )?;
                pipeline::write_error_epochs_csv(
                    &out_dir.join(format!("errors_{tag}_smoothed.csv")),
                    &smoothed_report,
                )?;
                reports.push(report);
                reports.push(smoothed_report);
                continue;
            }
            reports.push(report);
        }
    }

    if reports.is_empty() {
        println!("ran {} combination(s); no truth available for evaluation", combos.len());
    } else {
        pipeline::write_summary_csv(&out_dir.join("summary.csv"), &reports)?;
        print!("{}", pipeline::format_report_table(&reports));
    }
    Ok(())
}

fn write_slip_log(path: &Path, output: &RunOutput) -> Result<(), PipelineError> {
    let mut text = String::from("t,chi,max_ratio,significant\n");
    for s in &output.slip_log {
        text.push_str(&format!(
            "{},{},{},{}\n",
            s.time,
            s.chi,
            s.max_ratio,
            if s.significant { 1 } else { 0 }
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_stop_log(path: &Path, output: &RunOutput) -> Result<(), PipelineError> {
    let mut text = String::from("start,end\n");
    for s in &output.stop_log {
        text.push_str(&format!("{},{}\n", s.start, s.end));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn eval(dataset: &Path, estimate: &Path) -> Result<(), PipelineError> {
    let config = pipeline::read_config(dataset)?;
    let data = pipeline::ingest(dataset, &config)?;
    let truth = data.truth.as_ref().ok_or(PipelineError::NoOverlap)?;
    let trace = pipeline::read_trace_csv(estimate)?;
    let label = estimate
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "estimate".to_string());
    let report = pipeline::evaluate(&label, &trace, truth, &EllipsoidModel::wgs84())?;
    print!("{}", pipeline::format_report_table(std::slice::from_ref(&report)));
    Ok(())
}

fn report(paths: &[PathBuf]) -> Result<(), PipelineError> {
    let mut merged = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)?;
        for (idx, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(PipelineError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("expected 7 columns, got {}", fields.len()),
                });
            }
            let num = |i: usize| -> Result<f64, PipelineError> {
                fields[i].parse().map_err(|_| PipelineError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("not a number: {}", fields[i]),
                })
            };
            merged.push(ErrorReport {
                label: fields[0].to_string(),
                horizontal_median: num(1)?,
                horizontal_std: num(2)?,
                horizontal_max: num(3)?,
                rms_east: num(4)?,
                rms_north: num(5)?,
                rms_up: num(6)?,
                epochs: Vec::new(),
            });
        }
    }
    if merged.is_empty() {
        return Err(PipelineError::Config("no report rows found".into()));
    }
    print!("{}", pipeline::format_report_table(&merged));
    Ok(())
}
