//! The simulation loop: drives a compiled workflow from building to a
//! terminal state over a set of sites.
//!
//! One pass of the loop: ready tasks are activated and their jobs defined
//! (scouts first), the broker places jobs on free cores, attempts execute
//! against the site failure model, failed jobs are redefined, and task
//! transitions fire on job completion. The loop is strictly sequential;
//! all randomness comes from per-attempt streams derived from the master
//! seed, so the run log is a pure function of
//! `(workflow, sites, seed, config)`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::attempt::{execute_attempt, AttemptOutcome};
use super::{
    stream_seed, AttemptRecord, CorruptionRecord, LossReason, LossRecord, OutcomeKind, RunLog,
    SimEvent, SimEventKind, Site, WasteModel,
};
use crate::datamodel::{Dataset, EventRange, TransformKind};
use crate::deft::{
    ready_tasks, validate_workflow, TaskState, TransitionEvent, Workflow, WorkflowState,
};
use crate::jedi::{
    events_per_job, pick_scouts, plan_merge, redefine_failed, split_subregions, JobDefinition,
    JobInput, RetryDecision, RetryPolicy, ScoutConfig, ScoutResult, ScoutVerdict, SplitterKind,
    SubRegionSplitSpec, TaggedOutput,
};

/// A deterministic per-task fault: every attempt whose event span touches
/// `range` fails, no matter how often it is retried. Used to re-enact
/// unprocessable events.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub task_id: String,
    pub range: EventRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Walltime one job should fit on its site (late-binding target).
    pub target_walltime: f64,
    pub scouts: ScoutConfig,
    pub subregion: SubRegionSplitSpec,
    /// Simulated-time guard against non-termination.
    pub horizon: f64,
    pub faults: Vec<FaultSpec>,
}

impl Default for EngineConfig {
    fn default() -> EngineConfig {
        EngineConfig {
            target_walltime: 3600.0,
            scouts: ScoutConfig::default(),
            subregion: SubRegionSplitSpec::default(),
            horizon: 1e12,
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("workflow invalid: {0:?}")]
    InvalidWorkflow(Vec<String>),
    #[error("invalid site configuration: {0}")]
    InvalidSite(String),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("task `{task}` names unknown splitter `{splitter}`")]
    UnknownSplitter { task: String, splitter: String },
    #[error("simulated time passed the horizon at t = {time}")]
    HorizonExceeded { time: f64 },
    #[error("task `{task}`: filter produced zero output events")]
    EmptyFilterOutput { task: String },
    #[error("task `{task}`: every input event was lost")]
    AllEventsLost { task: String },
    #[error("task `{task}`: merge planning failed: {message}")]
    MergePlanning { task: String, message: String },
    #[error("engine invariant violated: {0}")]
    Internal(String),
}

/// A scheduled attempt completion.
struct QueuedEnd {
    time: f64,
    tick: u64,
    task_idx: usize,
    site_idx: usize,
    job: JobDefinition,
    outcome: AttemptOutcome,
    start: f64,
}

impl PartialEq for QueuedEnd {
    fn eq(&self, other: &Self) -> bool {
        self.time.to_bits() == other.time.to_bits() && self.tick == other.tick
    }
}
impl Eq for QueuedEnd {}
impl PartialOrd for QueuedEnd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEnd {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.tick.cmp(&other.tick))
    }
}

/// How job completion feeds back into task bookkeeping.
#[derive(Clone, Copy, PartialEq)]
enum Accounting {
    /// Leaf job ranges partition the input; count events.
    Events,
    /// Parallel jobs share one span; count jobs.
    Jobs,
}

struct TaskExec {
    splitter: SplitterKind,
    accounting: Accounting,
    input_events: u64,
    active: bool,
    /// Next event offset to carve (events splitter).
    cursor: u64,
    next_job_index: u64,
    /// Defined jobs awaiting dispatch: scouts before the verdict, bulk
    /// after it.
    pending: VecDeque<JobDefinition>,
    /// Bulk jobs held until the scouts pass.
    held: Vec<JobDefinition>,
    retries: VecDeque<JobDefinition>,
    outstanding: u32,
    scouts_launched: u32,
    scout_results: Vec<ScoutResult>,
    scout_slot: BTreeMap<String, usize>,
    verdict: Option<ScoutVerdict>,
    succeeded_events: u64,
    lost_events: u64,
    succeeded_jobs: u64,
    lost_jobs: u64,
    loss_count: u64,
    tagged: Vec<TaggedOutput>,
}

impl TaskExec {
    fn new(splitter: SplitterKind) -> TaskExec {
        let accounting = match splitter {
            SplitterKind::SubRegion | SplitterKind::FtkRegionMerge => Accounting::Jobs,
            _ => Accounting::Events,
        };
        TaskExec {
            splitter,
            accounting,
            input_events: 0,
            active: false,
            cursor: 0,
            next_job_index: 0,
            pending: VecDeque::new(),
            held: Vec::new(),
            retries: VecDeque::new(),
            outstanding: 0,
            scouts_launched: 0,
            scout_results: Vec::new(),
            scout_slot: BTreeMap::new(),
            verdict: None,
            succeeded_events: 0,
            lost_events: 0,
            succeeded_jobs: 0,
            lost_jobs: 0,
            loss_count: 0,
            tagged: Vec::new(),
        }
    }

    fn carving(&self) -> bool {
        self.splitter == SplitterKind::Events
    }

    fn carve_done(&self) -> bool {
        !self.carving() || self.cursor >= self.input_events
    }

    fn drained(&self) -> bool {
        self.verdict == Some(ScoutVerdict::Proceed)
            && self.carve_done()
            && self.pending.is_empty()
            && self.held.is_empty()
            && self.retries.is_empty()
            && self.outstanding == 0
    }
}

struct Engine<'a> {
    wf: Workflow,
    sites: &'a [Site],
    cfg: &'a EngineConfig,
    seed: u64,
    now: f64,
    event_seq: u64,
    tick: u64,
    queue: BinaryHeap<Reverse<QueuedEnd>>,
    running: Vec<u32>,
    execs: Vec<TaskExec>,
    doomed: bool,
    events: Vec<SimEvent>,
    attempts: Vec<AttemptRecord>,
    losses: Vec<LossRecord>,
    corruptions: Vec<CorruptionRecord>,
    task_inputs: BTreeMap<String, u64>,
}

/// Runs the workflow to a terminal state and returns the run log.
pub fn run(
    wf: &Workflow,
    sites: &[Site],
    seed: u64,
    cfg: &EngineConfig,
) -> Result<RunLog, SimError> {
    let diagnostics = validate_workflow(wf);
    if !diagnostics.is_empty() {
        return Err(SimError::InvalidWorkflow(
            diagnostics.iter().map(|d| d.to_string()).collect(),
        ));
    }
    if wf.tasks.iter().any(|t| t.state != TaskState::Registered) {
        return Err(SimError::InvalidWorkflow(vec![
            "all tasks must be in state `registered`".into(),
        ]));
    }
    if sites.is_empty() {
        return Err(SimError::InvalidSite("no sites configured".into()));
    }
    for site in sites {
        site.validate().map_err(SimError::InvalidSite)?;
    }
    cfg.scouts
        .validate()
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    cfg.subregion
        .validate()
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    if cfg.target_walltime.is_nan() || cfg.target_walltime <= 0.0 {
        return Err(SimError::InvalidConfig(
            "target_walltime must be positive".into(),
        ));
    }
    if cfg.horizon.is_nan() || cfg.horizon <= 0.0 {
        return Err(SimError::InvalidConfig("horizon must be positive".into()));
    }

    let execs = wf
        .tasks
        .iter()
        .map(|t| {
            SplitterKind::from_name(&t.splitter)
                .map(TaskExec::new)
                .ok_or_else(|| SimError::UnknownSplitter {
                    task: t.id.clone(),
                    splitter: t.splitter.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut engine = Engine {
        wf: wf.clone(),
        sites,
        cfg,
        seed,
        now: 0.0,
        event_seq: 0,
        tick: 0,
        queue: BinaryHeap::new(),
        running: vec![0; sites.len()],
        execs,
        doomed: false,
        events: Vec::new(),
        attempts: Vec::new(),
        losses: Vec::new(),
        corruptions: Vec::new(),
        task_inputs: BTreeMap::new(),
    };
    engine.drive()
}

impl<'a> Engine<'a> {
    fn drive(&mut self) -> Result<RunLog, SimError> {
        self.wf.state = WorkflowState::Active;

        // External inputs are present from the start.
        let producers = self.wf.producers();
        let external: Vec<String> = self
            .wf
            .datasets
            .values()
            .filter(|d| !producers.contains_key(d.name.as_str()))
            .map(|d| d.name.clone())
            .collect();
        for name in external {
            let ds = &self.wf.datasets[&name];
            self.log(SimEventKind::DatasetComplete {
                dataset: ds.name.clone(),
                dtype: ds.dtype.to_string(),
                events: ds.total_events,
                external: true,
            });
        }

        self.activate_ready()?;
        self.dispatch();

        while let Some(Reverse(end)) = self.queue.pop() {
            if end.time > self.cfg.horizon {
                return Err(SimError::HorizonExceeded { time: end.time });
            }
            self.now = end.time;
            self.process_end(end)?;
            self.dispatch();
        }

        if self.wf.tasks.iter().all(|t| t.state == TaskState::Done) {
            self.wf.state = WorkflowState::Done;
        } else {
            if !self.doomed {
                return Err(SimError::Internal(format!(
                    "simulation stalled at t = {} with live tasks",
                    self.now
                )));
            }
            for idx in 0..self.wf.tasks.len() {
                if !self.wf.tasks[idx].state.is_terminal() {
                    self.transition(idx, TransitionEvent::Abort)?;
                }
            }
            self.wf.state = WorkflowState::Failed;
        }

        Ok(RunLog {
            seed: self.seed,
            workflow_id: self.wf.id.clone(),
            final_state: self.wf.state,
            task_inputs: std::mem::take(&mut self.task_inputs),
            events: std::mem::take(&mut self.events),
            attempts: std::mem::take(&mut self.attempts),
            losses: std::mem::take(&mut self.losses),
            corruptions: std::mem::take(&mut self.corruptions),
        })
    }

    fn log(&mut self, kind: SimEventKind) {
        self.events.push(SimEvent {
            time: self.now,
            seq: self.event_seq,
            kind,
        });
        self.event_seq += 1;
    }

    fn transition(&mut self, task_idx: usize, event: TransitionEvent) -> Result<(), SimError> {
        let task = &mut self.wf.tasks[task_idx];
        let from = task.state;
        task.apply_transition(event)
            .map_err(|e| SimError::Internal(e.to_string()))?;
        let to = task.state;
        let id = task.id.clone();
        self.log(SimEventKind::TaskTransition {
            task: id,
            event: event.to_string(),
            from,
            to,
        });
        Ok(())
    }

    /// Activates every registered task whose inputs are complete.
    fn activate_ready(&mut self) -> Result<(), SimError> {
        if self.doomed {
            return Ok(());
        }
        loop {
            let ready = ready_tasks(&self.wf);
            let next = ready.into_iter().find_map(|id| {
                self.wf
                    .tasks
                    .iter()
                    .position(|t| t.id == id && !self.execs_active(t.id.as_str()))
            });
            match next {
                Some(idx) => self.activate(idx)?,
                None => return Ok(()),
            }
        }
    }

    fn execs_active(&self, task_id: &str) -> bool {
        self.wf
            .tasks
            .iter()
            .position(|t| t.id == task_id)
            .map(|i| self.execs[i].active)
            .unwrap_or(false)
    }

    fn activate(&mut self, idx: usize) -> Result<(), SimError> {
        let task = self.wf.tasks[idx].clone();
        let input_events = self.wf.datasets[&task.input].total_events;
        self.execs[idx].input_events = input_events;
        self.execs[idx].active = true;
        self.task_inputs.insert(task.id.clone(), input_events);

        self.transition(idx, TransitionEvent::JobsDefined)?;

        let jobs =
            match self.execs[idx].splitter {
                SplitterKind::Events => Vec::new(), // carved per site at dispatch
                SplitterKind::Merge => vec![JobDefinition {
                    id: format!("{}.j0", task.id),
                    task_id: task.id.clone(),
                    input: JobInput::Merge {
                        span: EventRange::new(0, input_events),
                        fan_in: 1,
                        region: None,
                    },
                    est_cpu: input_events as f64 * task.transformation.cpu_per_event,
                    is_scout: false,
                    attempt: 1,
                    predecessor: None,
                }],
                SplitterKind::SubRegion => {
                    split_subregions(&task, &self.cfg.subregion, EventRange::new(0, input_events))
                        .map_err(|e| SimError::Internal(e.to_string()))?
                }
                SplitterKind::FtkRegionMerge => {
                    let producer = self
                        .wf
                        .producers()
                        .get(task.input.as_str())
                        .copied()
                        .ok_or_else(|| SimError::MergePlanning {
                            task: task.id.clone(),
                            message: "input dataset has no producing task".into(),
                        })?;
                    let plan = plan_merge(&self.execs[producer].tagged, &self.cfg.subregion)
                        .map_err(|e| SimError::MergePlanning {
                            task: task.id.clone(),
                            message: e.to_string(),
                        })?;
                    plan.region_merges
                        .iter()
                        .map(|m| JobDefinition {
                            id: format!("{}.j{}", task.id, m.region),
                            task_id: task.id.clone(),
                            input: JobInput::Merge {
                                span: EventRange::new(0, input_events),
                                fan_in: m.fan_in,
                                region: Some(m.region),
                            },
                            est_cpu: input_events as f64 * task.transformation.cpu_per_event,
                            is_scout: false,
                            attempt: 1,
                            predecessor: None,
                        })
                        .collect()
                }
                SplitterKind::FtkEventMerge => vec![JobDefinition {
                    id: format!("{}.j0", task.id),
                    task_id: task.id.clone(),
                    input: JobInput::Merge {
                        span: EventRange::new(0, input_events),
                        fan_in: self.cfg.subregion.regions,
                        region: None,
                    },
                    est_cpu: input_events as f64 * task.transformation.cpu_per_event,
                    is_scout: false,
                    attempt: 1,
                    predecessor: None,
                }],
            };

        if !jobs.is_empty() {
            let (scouts, held) = pick_scouts(jobs, &self.cfg.scouts)
                .map_err(|e| SimError::Internal(e.to_string()))?;
            self.execs[idx].pending = scouts.into();
            self.execs[idx].held = held;
        }

        self.transition(idx, TransitionEvent::ScoutsLaunched)?;
        Ok(())
    }

    /// True when the scout quota for this task is filled.
    fn scout_quota_reached(&self, idx: usize) -> bool {
        let exec = &self.execs[idx];
        if exec.carving() {
            exec.scouts_launched >= self.cfg.scouts.num_scouts || exec.cursor >= exec.input_events
        } else {
            exec.pending.is_empty()
        }
    }

    fn free_site_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.sites.len()).filter(|&i| self.running[i] < self.sites[i].cores)
    }

    fn snapshot(&self, site_idx: usize) -> crate::jedi::SiteSnapshot {
        let site = &self.sites[site_idx];
        site.snapshot(site.cores - self.running[site_idx])
    }

    /// Earliest-completion site choice: minimizes `now + est / speed` over
    /// sites with a free core, ties to the lower site index.
    fn choose_site<F: Fn(usize, &Site) -> f64>(&self, est_for: F) -> Option<usize> {
        self.free_site_indices().min_by(|&a, &b| {
            let ta = est_for(a, &self.sites[a]) / self.sites[a].speed_factor;
            let tb = est_for(b, &self.sites[b]) / self.sites[b].speed_factor;
            ta.total_cmp(&tb).then(a.cmp(&b))
        })
    }

    /// Places jobs on free cores until nothing more can start.
    fn dispatch(&mut self) {
        if self.doomed {
            return;
        }
        loop {
            let mut progress = false;
            for idx in 0..self.wf.tasks.len() {
                if self.doomed {
                    return;
                }
                if !self.execs[idx].active || self.wf.tasks[idx].state.is_terminal() {
                    continue;
                }
                if self.free_site_indices().next().is_none() {
                    return; // no cores anywhere
                }
                if self.dispatch_one(idx) {
                    progress = true;
                }
            }
            if !progress {
                return;
            }
        }
    }

    /// Tries to start one job of task `idx`. Returns whether one started.
    fn dispatch_one(&mut self, idx: usize) -> bool {
        let exec = &self.execs[idx];
        if exec.verdict == Some(ScoutVerdict::Broken) {
            return false;
        }

        // Defined jobs first: retries, then the pending queue.
        if let Some(job) = self.execs[idx].retries.front().cloned() {
            let est = job.est_cpu;
            if let Some(site_idx) = self.choose_site(|_, _| est) {
                self.execs[idx].retries.pop_front();
                self.launch(idx, job, site_idx);
                return true;
            }
            return false;
        }
        if let Some(job) = self.execs[idx].pending.front().cloned() {
            let est = job.est_cpu;
            if let Some(site_idx) = self.choose_site(|_, _| est) {
                self.execs[idx].pending.pop_front();
                self.launch(idx, job, site_idx);
                return true;
            }
            return false;
        }

        // Late binding: carve the next job for the chosen site.
        let exec = &self.execs[idx];
        if !exec.carving() || exec.cursor >= exec.input_events {
            return false;
        }
        let scouting = exec.verdict.is_none();
        if scouting && exec.scouts_launched >= self.cfg.scouts.num_scouts {
            return false; // quota filled; wait for the verdict
        }
        let task = &self.wf.tasks[idx];
        let remaining = exec.input_events - exec.cursor;
        let per_event = task.transformation.cpu_per_event;
        let target = self.cfg.target_walltime;
        let site_idx = match self.choose_site(|i, _| {
            let chunk = events_per_job(task, &self.snapshot(i), target).min(remaining);
            chunk as f64 * per_event
        }) {
            Some(i) => i,
            None => return false,
        };
        let chunk = events_per_job(task, &self.snapshot(site_idx), target).min(remaining);
        let exec = &mut self.execs[idx];
        let range = EventRange::new(exec.cursor, chunk);
        exec.cursor += chunk;
        let job = JobDefinition {
            id: format!("{}.j{}", task.id, exec.next_job_index),
            task_id: task.id.clone(),
            input: JobInput::Events(range),
            est_cpu: chunk as f64 * per_event,
            is_scout: scouting,
            attempt: 1,
            predecessor: None,
        };
        exec.next_job_index += 1;
        self.launch(idx, job, site_idx);
        true
    }

    fn is_faulty(&self, job: &JobDefinition) -> bool {
        self.cfg
            .faults
            .iter()
            .any(|f| f.task_id == job.task_id && f.range.intersects(&job.input.span()))
    }

    fn launch(&mut self, idx: usize, job: JobDefinition, site_idx: usize) {
        let site = &self.sites[site_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, &job.id, job.attempt));
        let mut outcome = execute_attempt(&job, site, &mut rng);
        if self.is_faulty(&job) {
            // Injected faults never let the attempt succeed.
            if let AttemptOutcome::Success { duration, .. } = outcome {
                let fraction = match site.failure.transient_waste {
                    WasteModel::FullDuration => 1.0,
                    WasteModel::UniformFraction => 1.0 - rng.random::<f64>(),
                };
                outcome = AttemptOutcome::TransientFailure {
                    duration: fraction * duration,
                };
            }
        }
        let duration = match &outcome {
            AttemptOutcome::Success { duration, .. } => *duration,
            AttemptOutcome::TransientFailure { duration } => *duration,
            AttemptOutcome::PermanentFailure => 0.0,
        };

        let exec = &mut self.execs[idx];
        if job.is_scout && exec.verdict.is_none() && job.predecessor.is_none() {
            let slot = exec.scout_results.len();
            exec.scout_results.push(ScoutResult::Pending);
            exec.scout_slot.insert(job.id.clone(), slot);
            exec.scouts_launched += 1;
        }
        exec.outstanding += 1;
        self.wf.tasks[idx].attempts_used += 1;
        self.running[site_idx] += 1;

        self.log(SimEventKind::JobStart {
            job: job.id.clone(),
            task: job.task_id.clone(),
            site: site.id.clone(),
            attempt: job.attempt,
            scout: job.is_scout,
        });
        self.queue.push(Reverse(QueuedEnd {
            time: self.now + duration,
            tick: self.tick,
            task_idx: idx,
            site_idx,
            job,
            outcome,
            start: self.now,
        }));
        self.tick += 1;
    }

    fn record_loss(&mut self, idx: usize, range: EventRange, reason: LossReason) {
        let exec = &mut self.execs[idx];
        exec.loss_count += 1;
        match exec.accounting {
            Accounting::Events => exec.lost_events += range.count,
            Accounting::Jobs => exec.lost_jobs += 1,
        }
        self.losses.push(LossRecord {
            task: self.wf.tasks[idx].id.clone(),
            range,
            reason,
        });
    }

    fn process_end(&mut self, end: QueuedEnd) -> Result<(), SimError> {
        let QueuedEnd {
            task_idx: idx,
            site_idx,
            job,
            outcome,
            start,
            ..
        } = end;
        self.running[site_idx] -= 1;
        self.execs[idx].outstanding -= 1;

        let outcome_kind = match &outcome {
            AttemptOutcome::Success { .. } => OutcomeKind::Success,
            AttemptOutcome::TransientFailure { .. } => OutcomeKind::TransientFailure,
            AttemptOutcome::PermanentFailure => OutcomeKind::PermanentFailure,
        };
        let duration = match &outcome {
            AttemptOutcome::Success { duration, .. } => *duration,
            AttemptOutcome::TransientFailure { duration } => *duration,
            AttemptOutcome::PermanentFailure => 0.0,
        };
        self.log(SimEventKind::JobEnd {
            job: job.id.clone(),
            task: job.task_id.clone(),
            site: self.sites[site_idx].id.clone(),
            attempt: job.attempt,
            outcome: outcome_kind,
        });
        self.attempts.push(AttemptRecord {
            job: job.id.clone(),
            task: job.task_id.clone(),
            site: self.sites[site_idx].id.clone(),
            attempt: job.attempt,
            scout: job.is_scout,
            input: job.input.clone(),
            start,
            duration,
            outcome: outcome_kind,
        });

        let pre_verdict_scout = job.is_scout && self.execs[idx].verdict.is_none();
        match outcome {
            AttemptOutcome::Success {
                corrupted_events, ..
            } => {
                if !corrupted_events.is_empty() {
                    let dataset = self.wf.tasks[idx].outputs[0].clone();
                    for event in corrupted_events {
                        self.corruptions.push(CorruptionRecord {
                            dataset: dataset.clone(),
                            event,
                        });
                    }
                }
                let exec = &mut self.execs[idx];
                match exec.accounting {
                    Accounting::Events => exec.succeeded_events += job.input.event_count(),
                    Accounting::Jobs => exec.succeeded_jobs += 1,
                }
                if let JobInput::SubRegions {
                    first_subregion,
                    subregions,
                    ..
                } = job.input
                {
                    exec.tagged.push(TaggedOutput {
                        job_id: job.id.clone(),
                        first_subregion,
                        subregions,
                    });
                }
                if pre_verdict_scout {
                    self.set_scout_result(idx, &job.id, ScoutResult::Succeeded);
                }
            }
            AttemptOutcome::TransientFailure { .. } => {
                if pre_verdict_scout {
                    self.retry_scout(idx, &job)?;
                } else {
                    self.retry_bulk(idx, &job);
                }
            }
            AttemptOutcome::PermanentFailure => {
                self.record_loss(idx, job.input.span(), LossReason::PermanentFailure);
                if pre_verdict_scout {
                    self.set_scout_result(idx, &job.id, ScoutResult::Failed);
                }
            }
        }

        self.maybe_evaluate_scouts(idx)?;
        self.maybe_complete(idx)?;
        Ok(())
    }

    fn set_scout_result(&mut self, idx: usize, job_id: &str, result: ScoutResult) {
        let exec = &mut self.execs[idx];
        if let Some(&slot) = exec.scout_slot.get(job_id) {
            exec.scout_results[slot] = result;
        }
    }

    /// A failed scout retries whole (never split): the verdict stays a
    /// per-probe call. Exhausted probes count as failed scouts and their
    /// range is lost.
    fn retry_scout(&mut self, idx: usize, job: &JobDefinition) -> Result<(), SimError> {
        let policy = RetryPolicy {
            split_on_retry: false,
            ..self.wf.tasks[idx].retry_policy.clone()
        };
        match redefine_failed(job, &policy) {
            RetryDecision::Resubmit(mut jobs) => {
                let mut replacement = jobs.pop().ok_or_else(|| {
                    SimError::Internal("scout resubmission produced no job".into())
                })?;
                replacement.is_scout = true;
                let exec = &mut self.execs[idx];
                if let Some(&slot) = exec.scout_slot.get(&job.id) {
                    exec.scout_slot.insert(replacement.id.clone(), slot);
                }
                exec.retries.push_back(replacement);
            }
            RetryDecision::AcceptLoss(range) => {
                self.record_loss(idx, range, LossReason::AcceptedLoss);
                self.set_scout_result(idx, &job.id, ScoutResult::Failed);
            }
            RetryDecision::ExhaustedRetries(range) => {
                self.record_loss(idx, range, LossReason::ExhaustedRetries);
                self.set_scout_result(idx, &job.id, ScoutResult::Failed);
            }
        }
        Ok(())
    }

    fn retry_bulk(&mut self, idx: usize, job: &JobDefinition) {
        let policy = self.wf.tasks[idx].retry_policy.clone();
        match redefine_failed(job, &policy) {
            RetryDecision::Resubmit(jobs) => self.execs[idx].retries.extend(jobs),
            RetryDecision::AcceptLoss(range) => {
                self.record_loss(idx, range, LossReason::AcceptedLoss);
            }
            RetryDecision::ExhaustedRetries(range) => {
                self.record_loss(idx, range, LossReason::ExhaustedRetries);
            }
        }
    }

    fn maybe_evaluate_scouts(&mut self, idx: usize) -> Result<(), SimError> {
        let exec = &self.execs[idx];
        if exec.verdict.is_some() || !exec.active {
            return Ok(());
        }
        if !self.scout_quota_reached(idx) {
            return Ok(());
        }
        let exec = &self.execs[idx];
        if exec.scout_results.contains(&ScoutResult::Pending) {
            return Ok(());
        }
        if exec.scout_results.is_empty() {
            return Err(SimError::Internal(format!(
                "task `{}` reached a verdict with no scouts",
                self.wf.tasks[idx].id
            )));
        }
        let verdict = crate::jedi::evaluate_scouts(&exec.scout_results, &self.cfg.scouts)
            .map_err(|e| SimError::Internal(e.to_string()))?;
        self.execs[idx].verdict = Some(verdict);
        let task_id = self.wf.tasks[idx].id.clone();
        self.log(SimEventKind::ScoutVerdict {
            task: task_id,
            verdict,
        });
        match verdict {
            ScoutVerdict::Proceed => {
                self.transition(idx, TransitionEvent::ScoutsOk)?;
                let held = std::mem::take(&mut self.execs[idx].held);
                self.execs[idx].pending.extend(held);
            }
            ScoutVerdict::Broken => {
                self.transition(idx, TransitionEvent::ScoutsFailed)?;
                let exec = &mut self.execs[idx];
                exec.pending.clear();
                exec.held.clear();
                exec.retries.clear();
                exec.cursor = exec.input_events;
                self.doomed = true;
            }
        }
        Ok(())
    }

    fn maybe_complete(&mut self, idx: usize) -> Result<(), SimError> {
        if self.wf.tasks[idx].state.is_terminal() || !self.execs[idx].active {
            return Ok(());
        }
        if !self.execs[idx].drained() {
            return Ok(());
        }
        let exec = &self.execs[idx];
        let task = &self.wf.tasks[idx];

        let has_loss = exec.loss_count > 0;
        if has_loss && !task.retry_policy.tolerate_loss {
            self.transition(idx, TransitionEvent::UnrecoverableLoss)?;
            self.doomed = true;
            return Ok(());
        }

        // Output sizing. Sub-region style tasks keep the batch size: a
        // lost slice surfaces as a coverage gap at merge planning instead.
        let succeeded = match exec.accounting {
            Accounting::Events => exec.succeeded_events,
            Accounting::Jobs => exec.input_events,
        };
        debug_assert!(
            exec.accounting == Accounting::Jobs
                || exec.succeeded_events + exec.lost_events == exec.input_events,
            "event conservation violated for task {}",
            task.id
        );
        if succeeded == 0 {
            return Err(SimError::AllEventsLost {
                task: task.id.clone(),
            });
        }
        let out_events = match task.transformation.kind {
            TransformKind::Transform | TransformKind::Merge => succeeded,
            TransformKind::Filter { selectivity } => {
                let kept = (selectivity * succeeded as f64).round() as u64;
                if kept == 0 {
                    return Err(SimError::EmptyFilterOutput {
                        task: task.id.clone(),
                    });
                }
                kept
            }
        };

        self.transition(idx, TransitionEvent::AllJobsDone)?;
        let outputs = self.wf.tasks[idx].outputs.clone();
        for name in outputs {
            let dtype = self.wf.datasets[&name].dtype.clone();
            *self.wf.datasets.get_mut(&name).unwrap() =
                Dataset::complete(&name, dtype.clone(), out_events);
            self.log(SimEventKind::DatasetComplete {
                dataset: name,
                dtype: dtype.to_string(),
                events: out_events,
                external: false,
            });
        }
        self.transition(idx, TransitionEvent::OutputsRegistered)?;
        self.activate_ready()
    }
}
