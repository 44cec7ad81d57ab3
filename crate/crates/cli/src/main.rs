use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prodsim_cli::graph::workflow_dot;
use prodsim_cli::runner::{run_scenario, write_atomic};
use prodsim_cli::scenario::{load_scenario, Scenario};
use prodsim_cli::{presets, RunOutcome};
use prodsim_core::accounting::campaign_report;
use prodsim_core::deft::WorkflowState;
use prodsim_core::gridsim::RunLog;

#[derive(Parser)]
#[command(
    name = "prodsim",
    version,
    about = "Desk-scale production system simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Scenario file to load.
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Shipped preset name (see `prodsim presets`).
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Scenario> {
        match (&self.scenario, &self.preset) {
            (Some(path), None) => {
                load_scenario(path).with_context(|| format!("loading {}", path.display()))
            }
            (None, Some(name)) => presets::load(name).with_context(|| format!("preset {name}")),
            _ => bail!("pass exactly one of --scenario <path> or --preset <name>"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// List the shipped scenario presets.
    Presets,
    /// Compile the scenario's requests and dump the workflow graphs as DOT.
    Compile {
        #[command(flatten)]
        source: Source,
        /// Write the graph here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a scenario and compile every request, reporting problems.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// Run the scenario and write run logs and reports.
    Run {
        #[command(flatten)]
        source: Source,
        /// Override the scenario's seeds.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        /// Output directory for artifacts.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the simulation horizon in simulated seconds.
        #[arg(long)]
        horizon: Option<f64>,
        /// Scale factor recorded in reports for comparing against
        /// production-scale campaigns.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Recompute a campaign report from stored run logs.
    Report {
        /// Run log files (jsonl) to aggregate.
        #[arg(long, required = true)]
        runlog: Vec<PathBuf>,
        /// Row labels; defaults to the file stems.
        #[arg(long)]
        label: Vec<String>,
        /// Write report.txt and report.json here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Presets => {
            for name in presets::names() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compile { source, out } => {
            let scenario = source.load()?;
            let mut text = String::new();
            for wf in scenario.compile_all()? {
                text.push_str(&workflow_dot(&wf));
            }
            match out {
                Some(path) => write_atomic(&path, text.as_bytes())
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { source } => {
            let scenario = source.load()?;
            let workflows = scenario.compile_all()?;
            let tasks: usize = workflows.iter().map(|w| w.tasks.len()).sum();
            let datasets: usize = workflows.iter().map(|w| w.datasets.len()).sum();
            println!(
                "ok: {} request(s), {tasks} task(s), {datasets} dataset(s), {} site(s), {} seed(s)",
                scenario.requests.len(),
                scenario.sites.len(),
                scenario.seeds.len(),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            source,
            seed,
            out,
            horizon,
            scale,
        } => {
            let mut scenario = source.load()?;
            if !seed.is_empty() {
                scenario.seeds = seed;
            }
            if let Some(h) = horizon {
                scenario.horizon = h;
            }
            let outcome = run_scenario(&scenario, Some(&out), scale)?;
            print_outcome(&outcome);
            Ok(ExitCode::from(outcome.exit_code as u8))
        }
        Command::Report {
            runlog,
            label,
            out,
            scale,
        } => {
            let mut logs = Vec::with_capacity(runlog.len());
            for path in &runlog {
                let file = std::fs::File::open(path)
                    .with_context(|| format!("opening {}", path.display()))?;
                logs.push(
                    RunLog::read_jsonl(std::io::BufReader::new(file))
                        .with_context(|| format!("parsing {}", path.display()))?,
                );
            }
            let labels: Vec<String> = if label.is_empty() {
                runlog
                    .iter()
                    .map(|p| {
                        p.file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| p.display().to_string())
                    })
                    .collect()
            } else {
                label
            };
            let report = campaign_report(&logs, &labels, scale)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    write_atomic(&dir.join("report.txt"), report.render_text().as_bytes())?;
                    write_atomic(
                        &dir.join("report.json"),
                        serde_json::to_string_pretty(&report)?.as_bytes(),
                    )?;
                }
                None => print!("{}", report.render_text()),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_outcome(outcome: &RunOutcome) {
    print!("{}", outcome.report.render_text());
    for summary in &outcome.summaries {
        if summary.final_state != WorkflowState::Done {
            eprintln!("run `{}` ended {}", summary.label, summary.final_state);
            for loss in &summary.losses {
                eprintln!(
                    "  lost events {} of task `{}` ({:?})",
                    loss.range, loss.task, loss.reason
                );
            }
        }
    }
}
