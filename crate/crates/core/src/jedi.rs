//! Dynamic job definition.
//!
//! A job is defined at some point after the creation of its parent task,
//! sized to the conditions of the site it is dispatched to (late binding).
//! Splitter plugins cover the use cases: event-range splitting, the
//! 256-sub-region split used for fast-tracker simulation, and merge
//! planning. Bulk submission is gated on scout job success, and failed
//! jobs are redefined — optionally as several shorter jobs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{partition_events, EventRange, TransformKind};
use crate::deft::Task;

/// Loss-tolerance semantics for a task's jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Simulated-data samples tolerate loss; real and trigger data do not.
    pub tolerate_loss: bool,
    /// Loss level regarded as acceptable for the use case; campaign
    /// reports carry the achieved loss fraction for comparison.
    pub loss_budget: f64,
    /// Redefine a failed job as two half-sized jobs instead of one retry.
    pub split_on_retry: bool,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            tolerate_loss: false,
            loss_budget: 1e-8,
            split_on_retry: false,
        }
    }
}

/// Sub-region split geometry for fast-tracker simulation: events are split
/// into `num_subregions` eta-phi sub-regions, processed `subregions_per_job`
/// at a time, and merged back region by region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubRegionSplitSpec {
    pub num_subregions: u32,
    pub subregions_per_job: u32,
    pub regions: u32,
}

impl Default for SubRegionSplitSpec {
    fn default() -> SubRegionSplitSpec {
        SubRegionSplitSpec {
            num_subregions: 256,
            subregions_per_job: 4,
            regions: 64,
        }
    }
}

impl SubRegionSplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.subregions_per_job == 0
            || self.regions == 0
            || self.num_subregions != self.regions * self.subregions_per_job
        {
            return Err(SplitError::SpecInconsistent {
                num_subregions: self.num_subregions,
                subregions_per_job: self.subregions_per_job,
                regions: self.regions,
            });
        }
        Ok(())
    }

    /// Jobs needed to cover one event batch.
    pub fn jobs_per_batch(&self) -> u32 {
        self.num_subregions / self.subregions_per_job
    }
}

/// Site conditions visible to the job-definition layer at dispatch time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSnapshot {
    pub site_id: String,
    /// CPU speed relative to the reference used by `cpu_per_event`.
    pub speed_factor: f64,
    pub free_cores: u32,
    pub max_walltime: f64,
    pub min_job_events: u64,
    pub max_job_events: u64,
}

/// Scout gating parameters: how many probe jobs to launch and how many
/// must succeed before bulk submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoutConfig {
    pub num_scouts: u32,
    pub required_successes: u32,
}

impl Default for ScoutConfig {
    fn default() -> ScoutConfig {
        ScoutConfig {
            num_scouts: 5,
            required_successes: 1,
        }
    }
}

impl ScoutConfig {
    pub fn validate(&self) -> Result<(), ScoutError> {
        if self.required_successes < 1 || self.required_successes > self.num_scouts {
            return Err(ScoutError::BadConfig {
                num_scouts: self.num_scouts,
                required_successes: self.required_successes,
            });
        }
        Ok(())
    }
}

/// What a job reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobInput {
    /// A contiguous slice of the input dataset's events.
    Events(EventRange),
    /// The whole batch of events, restricted to a slice of sub-regions.
    SubRegions {
        batch: EventRange,
        first_subregion: u32,
        subregions: u32,
    },
    /// Fan-in of upstream outputs spanning `span` input events.
    Merge {
        span: EventRange,
        fan_in: u32,
        region: Option<u32>,
    },
}

impl JobInput {
    /// The input events this job covers.
    pub fn span(&self) -> EventRange {
        match self {
            JobInput::Events(r) => *r,
            JobInput::SubRegions { batch, .. } => *batch,
            JobInput::Merge { span, .. } => *span,
        }
    }

    pub fn event_count(&self) -> u64 {
        self.span().count
    }
}

/// A dynamically-defined execution unit: one attempt chain over one slice
/// of a task's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDefinition {
    pub id: String,
    pub task_id: String,
    pub input: JobInput,
    /// Seconds at reference speed.
    pub est_cpu: f64,
    pub is_scout: bool,
    pub attempt: u32,
    /// Failed job this one replaces, if any.
    pub predecessor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("task `{task}` has no input events and is not a merge")]
    EmptyInput { task: String },
    #[error("sub-region spec inconsistent: {num_subregions} != {regions} x {subregions_per_job}")]
    SpecInconsistent {
        num_subregions: u32,
        subregions_per_job: u32,
        regions: u32,
    },
}

/// Late binding: picks the events-per-job for `site` so one job fits the
/// target walltime, clamped to the site's bounds.
pub fn events_per_job(task: &Task, site: &SiteSnapshot, target_walltime: f64) -> u64 {
    let per_event = task.transformation.cpu_per_event;
    let raw = (target_walltime * site.speed_factor / per_event).floor() as u64;
    raw.clamp(site.min_job_events.max(1), site.max_job_events)
}

/// Splits a task's input into event-range jobs sized to `site`. Slow sites
/// receive smaller jobs, fast sites larger ones.
pub fn split_by_events(
    task: &Task,
    input_events: u64,
    site: &SiteSnapshot,
    target_walltime: f64,
) -> Result<Vec<JobDefinition>, SplitError> {
    if input_events == 0 {
        if task.transformation.kind == TransformKind::Merge {
            return Ok(Vec::new());
        }
        return Err(SplitError::EmptyInput {
            task: task.id.clone(),
        });
    }
    let chunk = events_per_job(task, site, target_walltime);
    let jobs = partition_events(input_events, chunk)
        .into_iter()
        .enumerate()
        .map(|(k, range)| JobDefinition {
            id: format!("{}.j{}", task.id, k),
            task_id: task.id.clone(),
            input: JobInput::Events(range),
            est_cpu: range.count as f64 * task.transformation.cpu_per_event,
            is_scout: false,
            attempt: 1,
            predecessor: None,
        })
        .collect();
    Ok(jobs)
}

/// Splits one event batch into sub-region jobs: job `k` simulates
/// sub-regions `[k*subregions_per_job, (k+1)*subregions_per_job)` over the
/// whole batch. With the default geometry each event is processed by 64
/// jobs, four sub-regions each.
pub fn split_subregions(
    task: &Task,
    spec: &SubRegionSplitSpec,
    batch: EventRange,
) -> Result<Vec<JobDefinition>, SplitError> {
    spec.validate()?;
    let per_job = spec.subregions_per_job;
    let jobs = (0..spec.jobs_per_batch())
        .map(|k| JobDefinition {
            id: format!("{}.j{}", task.id, k),
            task_id: task.id.clone(),
            input: JobInput::SubRegions {
                batch,
                first_subregion: k * per_job,
                subregions: per_job,
            },
            est_cpu: batch.count as f64 * task.transformation.cpu_per_event,
            is_scout: false,
            attempt: 1,
            predecessor: None,
        })
        .collect();
    Ok(jobs)
}

/// A produced sub-region slice, tagged with the job that made it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedOutput {
    pub job_id: String,
    pub first_subregion: u32,
    pub subregions: u32,
}

/// One region-level merge: fan-in of `subregions_per_job` sub-region
/// outputs producing a whole region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMerge {
    pub region: u32,
    /// Producing jobs, deduplicated, in sub-region order.
    pub inputs: Vec<String>,
    pub fan_in: u32,
}

/// The two-step merge: whole regions first, then whole events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePlan {
    pub region_merges: Vec<RegionMerge>,
    /// Fan-in of the final event-level merge (one job).
    pub event_merge_fan_in: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("sub-regions not covered: {missing:?}")]
    CoverageGap { missing: Vec<u32> },
    #[error("sub-region {subregion} produced more than once")]
    DuplicateSubRegion { subregion: u32 },
    #[error(transparent)]
    Split(#[from] SplitError),
}

/// Plans the two-step sub-region merge over `outputs`, which must cover
/// every sub-region exactly once.
pub fn plan_merge(
    outputs: &[TaggedOutput],
    spec: &SubRegionSplitSpec,
) -> Result<MergePlan, MergeError> {
    spec.validate()?;
    let mut owner: Vec<Option<&str>> = vec![None; spec.num_subregions as usize];
    for out in outputs {
        for sub in out.first_subregion..out.first_subregion + out.subregions {
            match owner.get_mut(sub as usize) {
                Some(slot @ None) => *slot = Some(&out.job_id),
                Some(_) => return Err(MergeError::DuplicateSubRegion { subregion: sub }),
                None => return Err(MergeError::DuplicateSubRegion { subregion: sub }),
            }
        }
    }
    let missing: Vec<u32> = owner
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_none())
        .map(|(i, _)| i as u32)
        .collect();
    if !missing.is_empty() {
        return Err(MergeError::CoverageGap { missing });
    }

    let per_region = spec.subregions_per_job;
    let region_merges = (0..spec.regions)
        .map(|region| {
            let mut inputs: Vec<String> = Vec::new();
            for sub in region * per_region..(region + 1) * per_region {
                let job = owner[sub as usize].unwrap();
                if inputs.last().map(String::as_str) != Some(job) {
                    inputs.push(job.to_string());
                }
            }
            RegionMerge {
                region,
                inputs,
                fan_in: per_region,
            }
        })
        .collect();

    Ok(MergePlan {
        region_merges,
        event_merge_fan_in: spec.regions,
    })
}

/// Terminal outcome of one scout, as seen by the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoutResult {
    Pending,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoutVerdict {
    /// Enough scouts succeeded; release the held bulk jobs.
    Proceed,
    /// The task is broken; no bulk job may start.
    Broken,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoutError {
    #[error("cannot pick scouts from an empty job list")]
    NoJobs,
    #[error("scout verdict requested while {pending} scouts are still running")]
    IncompleteResults { pending: usize },
    #[error("scout config invalid: required {required_successes} of {num_scouts}")]
    BadConfig {
        num_scouts: u32,
        required_successes: u32,
    },
}

/// Marks the first `num_scouts` jobs (in input-range order) as scouts and
/// holds the rest until the verdict.
pub fn pick_scouts(
    mut jobs: Vec<JobDefinition>,
    cfg: &ScoutConfig,
) -> Result<(Vec<JobDefinition>, Vec<JobDefinition>), ScoutError> {
    if jobs.is_empty() {
        return Err(ScoutError::NoJobs);
    }
    cfg.validate()?;
    jobs.sort_by(|a, b| (a.input.span().first, &a.id).cmp(&(b.input.span().first, &b.id)));
    let cut = (cfg.num_scouts as usize).min(jobs.len());
    let held = jobs.split_off(cut);
    for scout in &mut jobs {
        scout.is_scout = true;
    }
    Ok((jobs, held))
}

/// Bulk submission proceeds iff enough scouts succeeded.
pub fn evaluate_scouts(
    results: &[ScoutResult],
    cfg: &ScoutConfig,
) -> Result<ScoutVerdict, ScoutError> {
    let pending = results
        .iter()
        .filter(|r| **r == ScoutResult::Pending)
        .count();
    if pending > 0 {
        return Err(ScoutError::IncompleteResults { pending });
    }
    let successes = results
        .iter()
        .filter(|r| **r == ScoutResult::Succeeded)
        .count();
    if successes >= cfg.required_successes as usize {
        Ok(ScoutVerdict::Proceed)
    } else {
        Ok(ScoutVerdict::Broken)
    }
}

/// Verdict on a failed job.
#[derive(Debug, Clone, PartialEq)]
pub enum RetryDecision {
    /// Replacement jobs to submit.
    Resubmit(Vec<JobDefinition>),
    /// Attempts exhausted; the loss is accepted (loss-tolerant task).
    AcceptLoss(EventRange),
    /// Attempts exhausted on a task that does not tolerate loss.
    ExhaustedRetries(EventRange),
}

/// Redefines a failed job. While attempts remain, a long failed job is
/// resubmitted — split into two half-ranges when the policy asks for it —
/// so resubmission does not delay task completion. Merge and sub-region
/// jobs retry whole: their input is not a divisible event range.
pub fn redefine_failed(job: &JobDefinition, policy: &RetryPolicy) -> RetryDecision {
    if job.attempt >= policy.max_attempts {
        return if policy.tolerate_loss {
            RetryDecision::AcceptLoss(job.input.span())
        } else {
            RetryDecision::ExhaustedRetries(job.input.span())
        };
    }
    let attempt = job.attempt + 1;
    let replacement = |suffix: &str, input: JobInput, est_cpu: f64| JobDefinition {
        id: format!("{}.{}", job.id, suffix),
        task_id: job.task_id.clone(),
        input,
        est_cpu,
        is_scout: false,
        attempt,
        predecessor: Some(job.id.clone()),
    };
    match &job.input {
        JobInput::Events(range) if policy.split_on_retry && range.count > 1 => {
            let (a, b) = range.halves();
            let per_event = job.est_cpu / range.count as f64;
            RetryDecision::Resubmit(vec![
                replacement("s0", JobInput::Events(a), a.count as f64 * per_event),
                replacement("s1", JobInput::Events(b), b.count as f64 * per_event),
            ])
        }
        input => RetryDecision::Resubmit(vec![replacement("r", input.clone(), job.est_cpu)]),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("no closed form for the loss fraction when split_on_retry is set")]
    UnsupportedPolicy,
    #[error("failure probability {0} outside [0, 1)")]
    InvalidProbability(f64),
}

/// Probability that every attempt of a job fails — the expected lost-event
/// fraction under job-wide independent transient failures. Defined for
/// identical resubmission only.
pub fn expected_loss_fraction(policy: &RetryPolicy, p_transient: f64) -> Result<f64, PolicyError> {
    if policy.split_on_retry {
        return Err(PolicyError::UnsupportedPolicy);
    }
    if !(0.0..1.0).contains(&p_transient) {
        return Err(PolicyError::InvalidProbability(p_transient));
    }
    Ok(p_transient.powi(policy.max_attempts as i32))
}

/// Splitter plugins, resolved from the name a template step carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitterKind {
    /// Event-range splitting, late-bound to the dispatch site.
    Events,
    /// Single whole-input merge job.
    Merge,
    /// Sub-region splitting for fast-tracker simulation.
    SubRegion,
    /// First merge step of the sub-region plan: one job per region.
    FtkRegionMerge,
    /// Second merge step: one job fanning in all regions.
    FtkEventMerge,
}

impl SplitterKind {
    pub fn from_name(name: &str) -> Option<SplitterKind> {
        match name {
            "events" => Some(SplitterKind::Events),
            "merge" => Some(SplitterKind::Merge),
            "subregion" => Some(SplitterKind::SubRegion),
            "ftk-region-merge" => Some(SplitterKind::FtkRegionMerge),
            "ftk-event-merge" => Some(SplitterKind::FtkEventMerge),
            _ => None,
        }
    }
}
