//! Deterministic discrete-event simulation of a heterogeneous grid.
//!
//! Sites execute job attempts against a failure model; the engine drives
//! workflows from building to a terminal state and records everything in
//! an append-only run log. A run is a pure function of
//! `(workflow, sites, seed, config)`: per-attempt random streams are
//! derived by stable hashing so scheduling order cannot perturb draws.

mod attempt;
mod broker;
mod engine;

pub use attempt::{execute_attempt, AttemptOutcome};
pub use broker::{broker_assign, BrokerSite};
pub use engine::{run, EngineConfig, FaultSpec, SimError};

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::datamodel::EventRange;
use crate::deft::{TaskState, WorkflowState};
use crate::jedi::{JobInput, ScoutVerdict, SiteSnapshot};

/// Waste accrued by a transient failure, relative to the attempt's
/// nominal duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WasteModel {
    /// A uniformly-drawn fraction of the nominal duration is wasted.
    #[default]
    UniformFraction,
    /// The failure costs the full nominal duration.
    FullDuration,
}

/// Per-attempt failure behaviour of a site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureModel {
    /// Probability an attempt fails recoverably.
    pub p_transient: f64,
    /// Probability an attempt fails in a way no retry fixes.
    pub p_permanent: f64,
    /// Probability an event of a successful attempt is silently corrupted,
    /// detected only later during analysis.
    pub p_silent_per_event: f64,
    #[serde(default)]
    pub transient_waste: WasteModel,
}

impl FailureModel {
    pub fn none() -> FailureModel {
        FailureModel {
            p_transient: 0.0,
            p_permanent: 0.0,
            p_silent_per_event: 0.0,
            transient_waste: WasteModel::UniformFraction,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        // p = 1 is allowed so tests can force a branch.
        for (name, p) in [
            ("p_transient", self.p_transient),
            ("p_permanent", self.p_permanent),
            ("p_silent_per_event", self.p_silent_per_event),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.p_transient + self.p_permanent > 1.0 {
            return Err(format!(
                "p_transient + p_permanent = {} exceeds 1",
                self.p_transient + self.p_permanent
            ));
        }
        Ok(())
    }
}

/// A simulated computing site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub cores: u32,
    pub speed_factor: f64,
    pub failure: FailureModel,
    pub max_walltime: f64,
    pub min_job_events: u64,
    pub max_job_events: u64,
}

impl Site {
    pub fn validate(&self) -> Result<(), String> {
        if self.cores == 0 {
            return Err(format!("site `{}` has no cores", self.id));
        }
        if self.speed_factor.is_nan() || self.speed_factor <= 0.0 {
            return Err(format!("site `{}` has non-positive speed", self.id));
        }
        if self.min_job_events > self.max_job_events {
            return Err(format!(
                "site `{}` has min_job_events > max_job_events",
                self.id
            ));
        }
        self.failure
            .validate()
            .map_err(|e| format!("site `{}`: {e}", self.id))
    }

    /// The view exposed to the job-definition layer.
    pub fn snapshot(&self, free_cores: u32) -> SiteSnapshot {
        SiteSnapshot {
            site_id: self.id.clone(),
            speed_factor: self.speed_factor,
            free_cores,
            max_walltime: self.max_walltime,
            min_job_events: self.min_job_events,
            max_job_events: self.max_job_events,
        }
    }
}

/// Terminal classification of one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Success,
    TransientFailure,
    PermanentFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    JobStart {
        job: String,
        task: String,
        site: String,
        attempt: u32,
        scout: bool,
    },
    JobEnd {
        job: String,
        task: String,
        site: String,
        attempt: u32,
        outcome: OutcomeKind,
    },
    DatasetComplete {
        dataset: String,
        dtype: String,
        events: u64,
        external: bool,
    },
    TaskTransition {
        task: String,
        event: String,
        from: TaskState,
        to: TaskState,
    },
    ScoutVerdict {
        task: String,
        verdict: ScoutVerdict,
    },
}

/// One entry of the simulation event log, strictly ordered by
/// `(time, seq)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: SimEventKind,
}

/// Everything known about one executed attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub job: String,
    pub task: String,
    pub site: String,
    pub attempt: u32,
    pub scout: bool,
    pub input: JobInput,
    pub start: f64,
    pub duration: f64,
    pub outcome: OutcomeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    /// All attempts failed on a task that does not tolerate loss.
    ExhaustedRetries,
    /// All attempts failed; the loss is accepted per policy.
    AcceptedLoss,
    /// An attempt failed permanently; retries cannot fix it.
    PermanentFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub task: String,
    pub range: EventRange,
    pub reason: LossReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    /// First output dataset of the producing task.
    pub dataset: String,
    /// Input event index within the producing job's range.
    pub event: u64,
}

/// Immutable record of one simulated campaign run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub workflow_id: String,
    pub final_state: WorkflowState,
    /// Input events per task, keyed by task id.
    pub task_inputs: BTreeMap<String, u64>,
    pub events: Vec<SimEvent>,
    pub attempts: Vec<AttemptRecord>,
    pub losses: Vec<LossRecord>,
    pub corruptions: Vec<CorruptionRecord>,
}

/// One line of the serialized run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LogLine {
    Run {
        seed: u64,
        workflow: String,
        final_state: WorkflowState,
    },
    TaskInput {
        task: String,
        events: u64,
    },
    Event(SimEvent),
    Attempt(AttemptRecord),
    Loss(LossRecord),
    Corruption(CorruptionRecord),
}

impl RunLog {
    /// Writes the frozen line-delimited record format: one JSON object per
    /// line, byte-stable for a given run.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut emit = |line: &LogLine| -> io::Result<()> {
            serde_json::to_writer(&mut w, line).map_err(io::Error::other)?;
            w.write_all(b"\n")
        };
        emit(&LogLine::Run {
            seed: self.seed,
            workflow: self.workflow_id.clone(),
            final_state: self.final_state,
        })?;
        for (task, events) in &self.task_inputs {
            emit(&LogLine::TaskInput {
                task: task.clone(),
                events: *events,
            })?;
        }
        for e in &self.events {
            emit(&LogLine::Event(e.clone()))?;
        }
        for a in &self.attempts {
            emit(&LogLine::Attempt(a.clone()))?;
        }
        for l in &self.losses {
            emit(&LogLine::Loss(l.clone()))?;
        }
        for c in &self.corruptions {
            emit(&LogLine::Corruption(c.clone()))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("in-memory write cannot fail");
        String::from_utf8(buf).expect("run log is valid UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<RunLog> {
        let mut header: Option<(u64, String, WorkflowState)> = None;
        let mut task_inputs = BTreeMap::new();
        let mut events = Vec::new();
        let mut attempts = Vec::new();
        let mut losses = Vec::new();
        let mut corruptions = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            match parsed {
                LogLine::Run {
                    seed,
                    workflow,
                    final_state,
                } => {
                    header = Some((seed, workflow, final_state));
                }
                LogLine::TaskInput { task, events } => {
                    task_inputs.insert(task, events);
                }
                LogLine::Event(e) => events.push(e),
                LogLine::Attempt(a) => attempts.push(a),
                LogLine::Loss(l) => losses.push(l),
                LogLine::Corruption(c) => corruptions.push(c),
            }
        }
        let (seed, workflow_id, final_state) = header.ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidData, "run log missing header line")
        })?;
        Ok(RunLog {
            seed,
            workflow_id,
            final_state,
            task_inputs,
            events,
            attempts,
            losses,
            corruptions,
        })
    }
}

/// Stable 64-bit FNV-1a, used to derive per-attempt random streams from
/// `(master seed, job id, attempt)` independent of scheduling order.
pub fn stream_seed(master: u64, job_id: &str, attempt: u32) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in master
        .to_le_bytes()
        .into_iter()
        .chain(job_id.bytes())
        .chain(attempt.to_le_bytes())
    {
        h ^= u64::from(byte);
        h = h.wrapping_mul(PRIME);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seeds_differ_per_job_and_attempt() {
        let a = stream_seed(1, "t.j0", 1);
        assert_eq!(a, stream_seed(1, "t.j0", 1));
        assert_ne!(a, stream_seed(1, "t.j0", 2));
        assert_ne!(a, stream_seed(1, "t.j1", 1));
        assert_ne!(a, stream_seed(2, "t.j0", 1));
    }

    #[test]
    fn runlog_jsonl_round_trip() {
        let log = RunLog {
            seed: 7,
            workflow_id: "wf".into(),
            final_state: WorkflowState::Done,
            task_inputs: BTreeMap::from([("wf.t1".to_string(), 100u64)]),
            events: vec![SimEvent {
                time: 0.0,
                seq: 0,
                kind: SimEventKind::DatasetComplete {
                    dataset: "in".into(),
                    dtype: "RAW".into(),
                    events: 100,
                    external: true,
                },
            }],
            attempts: vec![AttemptRecord {
                job: "wf.t1.j0".into(),
                task: "wf.t1".into(),
                site: "s".into(),
                attempt: 1,
                scout: true,
                input: JobInput::Events(EventRange::new(0, 100)),
                start: 0.0,
                duration: 10.0,
                outcome: OutcomeKind::Success,
            }],
            losses: vec![LossRecord {
                task: "wf.t1".into(),
                range: EventRange::new(3, 1),
                reason: LossReason::ExhaustedRetries,
            }],
            corruptions: vec![CorruptionRecord {
                dataset: "out".into(),
                event: 5,
            }],
        };
        let text = log.to_jsonl();
        let back = RunLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        // Serialization itself is stable.
        assert_eq!(back.to_jsonl(), text);
    }
}
