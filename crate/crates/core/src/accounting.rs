//! Derives the quantitative picture of a campaign from run logs: retry
//! CPU overhead, event-loss fraction, silent-corruption counts, makespan,
//! and per-campaign report tables.
//!
//! Everything here is pure read-only aggregation; recomputation over the
//! same log yields identical values.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deft::WorkflowState;
use crate::gridsim::{OutcomeKind, RunLog, SimEventKind};
use crate::jedi::JobInput;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountingError {
    #[error("run log incomplete: workflow is `{state}`, not terminal")]
    IncompleteLog { state: WorkflowState },
    #[error("labels do not match runs: {reason}")]
    LabelMismatch { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub events_in: u64,
    pub events_lost: u64,
    pub attempts: u64,
    pub failed_attempts: u64,
    pub cpu: f64,
    pub wasted_cpu: f64,
}

/// Campaign-level quantities derived from one run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_cpu: f64,
    /// CPU spent on attempts that did not end in success.
    pub wasted_cpu: f64,
    /// `wasted_cpu / total_cpu`: the cost of recovering lost data.
    pub cpu_overhead: f64,
    /// Events in the workflow's external input datasets.
    pub events_in: u64,
    pub events_lost: u64,
    pub loss_fraction: f64,
    pub silent_corruptions: u64,
    /// First job start to last event, in simulated seconds.
    pub makespan: f64,
    pub per_task: BTreeMap<String, TaskMetrics>,
}

/// Aggregates a terminal run log into [`Metrics`].
pub fn compute_metrics(log: &RunLog) -> Result<Metrics, AccountingError> {
    if !matches!(log.final_state, WorkflowState::Done | WorkflowState::Failed) {
        return Err(AccountingError::IncompleteLog {
            state: log.final_state,
        });
    }

    let mut total_cpu = 0.0;
    let mut wasted_cpu = 0.0;
    let mut per_task: BTreeMap<String, TaskMetrics> = BTreeMap::new();
    for (task, events) in &log.task_inputs {
        per_task.insert(
            task.clone(),
            TaskMetrics {
                events_in: *events,
                events_lost: 0,
                attempts: 0,
                failed_attempts: 0,
                cpu: 0.0,
                wasted_cpu: 0.0,
            },
        );
    }
    for attempt in &log.attempts {
        total_cpu += attempt.duration;
        let tm = per_task
            .entry(attempt.task.clone())
            .or_insert_with(|| TaskMetrics {
                events_in: 0,
                events_lost: 0,
                attempts: 0,
                failed_attempts: 0,
                cpu: 0.0,
                wasted_cpu: 0.0,
            });
        tm.attempts += 1;
        tm.cpu += attempt.duration;
        if attempt.outcome != OutcomeKind::Success {
            wasted_cpu += attempt.duration;
            tm.failed_attempts += 1;
            tm.wasted_cpu += attempt.duration;
        }
    }

    let mut events_in = 0;
    let mut first_job_start = None;
    let mut last_time: f64 = 0.0;
    for event in &log.events {
        last_time = last_time.max(event.time);
        match &event.kind {
            SimEventKind::DatasetComplete {
                events,
                external: true,
                ..
            } => events_in += events,
            SimEventKind::JobStart { .. } if first_job_start.is_none() => {
                first_job_start = Some(event.time);
            }
            _ => {}
        }
    }

    let mut events_lost = 0;
    for loss in &log.losses {
        events_lost += loss.range.count;
        if let Some(tm) = per_task.get_mut(&loss.task) {
            tm.events_lost += loss.range.count;
        }
    }

    Ok(Metrics {
        total_cpu,
        wasted_cpu,
        cpu_overhead: if total_cpu > 0.0 {
            wasted_cpu / total_cpu
        } else {
            0.0
        },
        events_in,
        events_lost,
        loss_fraction: if events_in > 0 {
            events_lost as f64 / events_in as f64
        } else {
            0.0
        },
        silent_corruptions: log.corruptions.len() as u64,
        makespan: first_job_start.map(|t| last_time - t).unwrap_or(0.0),
        per_task,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConservationError {
    #[error("task `{task}`: succeeded {succeeded} + lost {lost} != input {input} events")]
    Events {
        task: String,
        succeeded: u64,
        lost: u64,
        input: u64,
    },
    #[error("task `{task}`: {succeeded} succeeded + {lost} lost jobs != {roots} root jobs")]
    Jobs {
        task: String,
        succeeded: u64,
        lost: u64,
        roots: u64,
    },
}

/// Checks per-task conservation on every task that drained its jobs:
/// succeeded plus lost input events equal the task's input events. Tasks
/// whose jobs run in parallel over one span (sub-region splits, region
/// merges) are checked at job granularity instead.
pub fn verify_conservation(log: &RunLog) -> Result<(), ConservationError> {
    // Tasks that drained: they fired all_jobs_done or unrecoverable_loss.
    let drained: Vec<&str> = log
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            SimEventKind::TaskTransition { task, event, .. }
                if event == "all_jobs_done" || event == "unrecoverable_loss" =>
            {
                Some(task.as_str())
            }
            _ => None,
        })
        .collect();

    for task in drained {
        let input = log.task_inputs.get(task).copied().unwrap_or(0);
        let attempts: Vec<_> = log.attempts.iter().filter(|a| a.task == task).collect();
        let job_level = attempts.iter().any(|a| {
            matches!(
                a.input,
                JobInput::SubRegions { .. }
                    | JobInput::Merge {
                        region: Some(_),
                        ..
                    }
            )
        });
        let losses: Vec<_> = log.losses.iter().filter(|l| l.task == task).collect();
        if job_level {
            let roots = attempts.iter().filter(|a| a.attempt == 1).count() as u64;
            let succeeded = attempts
                .iter()
                .filter(|a| a.outcome == OutcomeKind::Success)
                .count() as u64;
            let lost = losses.len() as u64;
            if succeeded + lost != roots {
                return Err(ConservationError::Jobs {
                    task: task.to_string(),
                    succeeded,
                    lost,
                    roots,
                });
            }
        } else {
            let succeeded: u64 = attempts
                .iter()
                .filter(|a| a.outcome == OutcomeKind::Success)
                .map(|a| a.input.event_count())
                .sum();
            let lost: u64 = losses.iter().map(|l| l.range.count).sum();
            if succeeded + lost != input {
                return Err(ConservationError::Events {
                    task: task.to_string(),
                    succeeded,
                    lost,
                    input,
                });
            }
        }
    }
    Ok(())
}

/// One row of a campaign report, shaped like the yearly processing
/// summaries: input volume, CPU, events processed and not processed,
/// silent corruptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub label: String,
    pub final_state: WorkflowState,
    pub events_in: u64,
    pub cpu_seconds: f64,
    pub cpu_overhead: f64,
    pub events_processed: u64,
    pub events_not_processed: u64,
    pub loss_fraction: f64,
    pub silent_corruptions: u64,
    pub makespan: f64,
}

/// A campaign report: one row per run. Counts are raw desk-scale values;
/// `scale_factor` states the multiplier for comparing against
/// production-scale campaigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub scale_factor: f64,
    pub rows: Vec<CampaignRow>,
}

pub fn campaign_report(
    logs: &[RunLog],
    labels: &[String],
    scale_factor: f64,
) -> Result<CampaignReport, AccountingError> {
    if logs.len() != labels.len() {
        return Err(AccountingError::LabelMismatch {
            reason: format!("{} labels for {} runs", labels.len(), logs.len()),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(AccountingError::LabelMismatch {
                reason: format!("duplicate label `{label}`"),
            });
        }
    }
    let mut rows = Vec::with_capacity(logs.len());
    for (log, label) in logs.iter().zip(labels) {
        let m = compute_metrics(log)?;
        rows.push(CampaignRow {
            label: label.clone(),
            final_state: log.final_state,
            events_in: m.events_in,
            cpu_seconds: m.total_cpu,
            cpu_overhead: m.cpu_overhead,
            events_processed: m.events_in - m.events_lost.min(m.events_in),
            events_not_processed: m.events_lost,
            loss_fraction: m.loss_fraction,
            silent_corruptions: m.silent_corruptions,
            makespan: m.makespan,
        });
    }
    Ok(CampaignReport { scale_factor, rows })
}

impl CampaignReport {
    /// Plain-text aligned table.
    pub fn render_text(&self) -> String {
        let header = [
            "campaign",
            "state",
            "events in",
            "cpu [s]",
            "overhead",
            "processed",
            "not processed",
            "loss frac.",
            "silent corr.",
            "makespan [s]",
            "scale",
        ];
        let mut cells: Vec<[String; 11]> = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            cells.push([
                r.label.clone(),
                r.final_state.to_string(),
                r.events_in.to_string(),
                format!("{:.1}", r.cpu_seconds),
                format!("{:.4}", r.cpu_overhead),
                r.events_processed.to_string(),
                r.events_not_processed.to_string(),
                format!("{:.2e}", r.loss_fraction),
                r.silent_corruptions.to_string(),
                format!("{:.1}", r.makespan),
                format!("{:.0}", self.scale_factor),
            ]);
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, cell) in widths.iter_mut().zip(row.iter()) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        for (i, h) in header.iter().enumerate() {
            let _ = write!(out, "{:<width$}  ", h, width = widths[i]);
        }
        out.push('\n');
        for row in &cells {
            for (i, cell) in row.iter().enumerate() {
                let _ = write!(out, "{:<width$}  ", cell, width = widths[i]);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EventRange;
    use crate::gridsim::{AttemptRecord, LossReason, LossRecord, SimEvent};

    fn minimal_log(final_state: WorkflowState) -> RunLog {
        RunLog {
            seed: 1,
            workflow_id: "wf".into(),
            final_state,
            task_inputs: BTreeMap::from([("wf.t".to_string(), 100u64)]),
            events: vec![
                SimEvent {
                    time: 0.0,
                    seq: 0,
                    kind: SimEventKind::DatasetComplete {
                        dataset: "in".into(),
                        dtype: "RAW".into(),
                        events: 100,
                        external: true,
                    },
                },
                SimEvent {
                    time: 0.0,
                    seq: 1,
                    kind: SimEventKind::JobStart {
                        job: "wf.t.j0".into(),
                        task: "wf.t".into(),
                        site: "s".into(),
                        attempt: 1,
                        scout: true,
                    },
                },
                SimEvent {
                    time: 50.0,
                    seq: 2,
                    kind: SimEventKind::JobEnd {
                        job: "wf.t.j0".into(),
                        task: "wf.t".into(),
                        site: "s".into(),
                        attempt: 1,
                        outcome: OutcomeKind::Success,
                    },
                },
            ],
            attempts: vec![AttemptRecord {
                job: "wf.t.j0".into(),
                task: "wf.t".into(),
                site: "s".into(),
                attempt: 1,
                scout: true,
                input: JobInput::Events(EventRange::new(0, 100)),
                start: 0.0,
                duration: 50.0,
                outcome: OutcomeKind::Success,
            }],
            losses: vec![],
            corruptions: vec![],
        }
    }

    #[test]
    fn failure_free_run_has_zero_overhead_and_loss() {
        let m = compute_metrics(&minimal_log(WorkflowState::Done)).unwrap();
        assert_eq!(m.cpu_overhead, 0.0);
        assert_eq!(m.loss_fraction, 0.0);
        assert_eq!(m.events_in, 100);
        assert_eq!(m.makespan, 50.0);
        assert_eq!(m.per_task["wf.t"].attempts, 1);
    }

    #[test]
    fn incomplete_log_rejected() {
        assert!(matches!(
            compute_metrics(&minimal_log(WorkflowState::Active)),
            Err(AccountingError::IncompleteLog { .. })
        ));
    }

    #[test]
    fn metrics_recomputation_is_identical() {
        let log = minimal_log(WorkflowState::Done);
        assert_eq!(
            compute_metrics(&log).unwrap(),
            compute_metrics(&log).unwrap()
        );
    }

    #[test]
    fn overhead_counts_failed_attempt_time() {
        let mut log = minimal_log(WorkflowState::Done);
        let mut failed = log.attempts[0].clone();
        failed.job = "wf.t.j0.r".into();
        failed.attempt = 2;
        failed.duration = 25.0;
        failed.outcome = OutcomeKind::TransientFailure;
        log.attempts.push(failed);
        let m = compute_metrics(&log).unwrap();
        assert_eq!(m.wasted_cpu, 25.0);
        assert!((m.cpu_overhead - 25.0 / 75.0).abs() < 1e-12);
    }

    #[test]
    fn conservation_detects_missing_events() {
        let mut log = minimal_log(WorkflowState::Done);
        log.events.push(SimEvent {
            time: 50.0,
            seq: 3,
            kind: SimEventKind::TaskTransition {
                task: "wf.t".into(),
                event: "all_jobs_done".into(),
                from: crate::deft::TaskState::Running,
                to: crate::deft::TaskState::Finished,
            },
        });
        assert!(verify_conservation(&log).is_ok());
        // Claim a larger input than the attempts cover.
        log.task_inputs.insert("wf.t".to_string(), 150);
        assert!(matches!(
            verify_conservation(&log),
            Err(ConservationError::Events { .. })
        ));
        // A loss record for the difference restores the balance.
        log.losses.push(LossRecord {
            task: "wf.t".into(),
            range: EventRange::new(100, 50),
            reason: LossReason::AcceptedLoss,
        });
        assert!(verify_conservation(&log).is_ok());
    }

    #[test]
    fn report_one_row_per_campaign() {
        let logs = vec![minimal_log(WorkflowState::Done); 4];
        let labels: Vec<String> = ["2010", "2011", "2012", "2013"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let report = campaign_report(&logs, &labels, 1000.0).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.rows[0].label, "2010");
        assert_eq!(report.rows[0].events_processed, 100);
        assert_eq!(report.rows[0].loss_fraction, 0.0);
        let text = report.render_text();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("2013"));
        assert!(text.contains("not processed"));
        assert!(text.contains("scale"));
    }

    #[test]
    fn empty_report_has_header_only() {
        let report = campaign_report(&[], &[], 1.0).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.render_text().lines().count(), 1);
    }

    #[test]
    fn duplicate_labels_rejected() {
        let logs = vec![
            minimal_log(WorkflowState::Done),
            minimal_log(WorkflowState::Done),
        ];
        let labels = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            campaign_report(&logs, &labels, 1.0),
            Err(AccountingError::LabelMismatch { .. })
        ));
    }
}
