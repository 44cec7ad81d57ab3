//! Campaign execution: compiles a scenario's requests, runs every
//! `(request, seed)` pair, and writes run logs, protocol traces and
//! reports. Exit status is a pure function of the terminal workflow
//! states: 0 when everything is done, 2 on failure with the losses
//! enumerated, 3 when the simulation horizon was exceeded.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use prodsim_core::accounting::{campaign_report, verify_conservation, CampaignReport};
use prodsim_core::deft::{Workflow, WorkflowState};
use prodsim_core::gridsim::{run, LossRecord, RunLog, SimError};
use prodsim_core::protocol::layer_messages;

use crate::scenario::{Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_HORIZON: i32 = 3;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation error in `{label}`: {source}")]
    Sim {
        label: String,
        #[source]
        source: SimError,
    },
    #[error("run `{label}` violates conservation: {message}")]
    Conservation { label: String, message: String },
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report error: {0}")]
    Report(String),
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub request: String,
    pub seed: u64,
    pub final_state: WorkflowState,
    pub losses: Vec<LossRecord>,
    pub runlog_path: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summaries: Vec<RunSummary>,
    pub logs: Vec<RunLog>,
    pub report: CampaignReport,
}

/// Writes through a temporary file and renames, so readers never observe
/// a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs every `(request, seed)` pair of the scenario. Independent seeds
/// execute concurrently; results merge deterministically in request-major,
/// seed-minor order. With `out_dir` set, artifacts are written atomically:
/// `runlog-<label>.jsonl`, `protocol-<label>.jsonl`, `report.txt`,
/// `report.json`.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: Option<&Path>,
    scale_factor: f64,
) -> Result<RunOutcome, RunnerError> {
    let workflows: Vec<Workflow> = scenario.compile_all()?;
    let cfg = scenario.engine_config();
    let multi = scenario.requests.len() > 1 || scenario.seeds.len() > 1;

    struct Pair<'a> {
        label: String,
        request: String,
        seed: u64,
        wf: &'a Workflow,
    }
    let pairs: Vec<Pair> = workflows
        .iter()
        .zip(&scenario.requests)
        .flat_map(|(wf, req)| {
            scenario.seeds.iter().map(move |&seed| Pair {
                label: if multi {
                    format!("{}#{}", req.id, seed)
                } else {
                    req.id.clone()
                },
                request: req.id.clone(),
                seed,
                wf,
            })
        })
        .collect();

    // Each run is pure and owns no shared state; spread them over the
    // available cores and collect in input order.
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let mut results: Vec<Option<Result<RunLog, SimError>>> =
        (0..pairs.len()).map(|_| None).collect();
    for chunk in (0..pairs.len()).collect::<Vec<_>>().chunks(threads.max(1)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let pair = &pairs[i];
                    let cfg = &cfg;
                    let sites = &scenario.sites;
                    (i, scope.spawn(move || run(pair.wf, sites, pair.seed, cfg)))
                })
                .collect();
            for (i, handle) in handles {
                results[i] = Some(handle.join().expect("simulation thread panicked"));
            }
        });
    }

    let mut summaries = Vec::with_capacity(pairs.len());
    let mut logs = Vec::with_capacity(pairs.len());
    let mut horizon_hit = false;
    for (pair, result) in pairs.iter().zip(results) {
        let log = match result.expect("every run produced a result") {
            Ok(log) => log,
            Err(SimError::HorizonExceeded { .. }) => {
                horizon_hit = true;
                continue;
            }
            Err(source) => {
                return Err(RunnerError::Sim {
                    label: pair.label.clone(),
                    source,
                })
            }
        };
        verify_conservation(&log).map_err(|e| RunnerError::Conservation {
            label: pair.label.clone(),
            message: e.to_string(),
        })?;
        let runlog_path = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                let path = dir.join(format!("runlog-{}.jsonl", pair.label));
                write_atomic(&path, log.to_jsonl().as_bytes()).map_err(io_err(&path))?;
                let protocol = dir.join(format!("protocol-{}.jsonl", pair.label));
                let mut text = String::new();
                for message in layer_messages(&log) {
                    text.push_str(&message.to_json());
                    text.push('\n');
                }
                write_atomic(&protocol, text.as_bytes()).map_err(io_err(&protocol))?;
                Some(path)
            }
            None => None,
        };
        summaries.push(RunSummary {
            label: pair.label.clone(),
            request: pair.request.clone(),
            seed: pair.seed,
            final_state: log.final_state,
            losses: log.losses.clone(),
            runlog_path,
        });
        logs.push(log);
    }

    let labels: Vec<String> = summaries.iter().map(|s| s.label.clone()).collect();
    let report = campaign_report(&logs, &labels, scale_factor)
        .map_err(|e| RunnerError::Report(e.to_string()))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let text_path = dir.join("report.txt");
        write_atomic(&text_path, report.render_text().as_bytes()).map_err(io_err(&text_path))?;
        let json_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| RunnerError::Report(e.to_string()))?;
        write_atomic(&json_path, json.as_bytes()).map_err(io_err(&json_path))?;
    }

    let exit_code = if horizon_hit {
        EXIT_HORIZON
    } else if summaries
        .iter()
        .all(|s| s.final_state == WorkflowState::Done)
    {
        EXIT_OK
    } else {
        EXIT_FAILED
    };
    Ok(RunOutcome {
        exit_code,
        summaries,
        logs,
        report,
    })
}
