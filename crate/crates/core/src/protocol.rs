//! The customized JSON protocol spoken between the workflow layer and the
//! job layer. Every message round-trips through serialization losslessly.

use serde::{Deserialize, Serialize};

use crate::deft::TaskState;
use crate::gridsim::{OutcomeKind, RunLog, SimEventKind};

/// One inter-layer message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerMessage {
    /// Workflow layer hands a task to the job layer for job definition.
    TaskActivate { task: String, time: f64 },
    /// Job layer reports one finished attempt.
    JobStatus {
        task: String,
        job: String,
        attempt: u32,
        outcome: OutcomeKind,
        time: f64,
    },
    /// Workflow layer records a task state change.
    TaskStatus {
        task: String,
        state: TaskState,
        time: f64,
    },
}

impl LayerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layer messages serialize")
    }

    pub fn from_json(text: &str) -> Result<LayerMessage, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Replays a run log as the message exchange the two layers would have
/// had: activation when jobs get defined, job status per attempt end, and
/// task status for every transition.
pub fn layer_messages(log: &RunLog) -> Vec<LayerMessage> {
    let mut messages = Vec::new();
    for event in &log.events {
        match &event.kind {
            SimEventKind::TaskTransition {
                task,
                event: name,
                to,
                ..
            } => {
                if name == "jobs_defined" {
                    messages.push(LayerMessage::TaskActivate {
                        task: task.clone(),
                        time: event.time,
                    });
                }
                messages.push(LayerMessage::TaskStatus {
                    task: task.clone(),
                    state: *to,
                    time: event.time,
                });
            }
            SimEventKind::JobEnd {
                job,
                task,
                attempt,
                outcome,
                ..
            } => {
                messages.push(LayerMessage::JobStatus {
                    task: task.clone(),
                    job: job.clone(),
                    attempt: *attempt,
                    outcome: *outcome,
                    time: event.time,
                });
            }
            _ => {}
        }
    }
    messages
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn message_json_shape() {
        let m = LayerMessage::TaskStatus {
            task: "wf.t".into(),
            state: TaskState::Running,
            time: 4.5,
        };
        assert_eq!(
            m.to_json(),
            r#"{"kind":"task_status","task":"wf.t","state":"running","time":4.5}"#
        );
    }

    fn arb_message() -> impl Strategy<Value = LayerMessage> {
        let task = "[a-z0-9.]{1,12}";
        let outcome = prop_oneof![
            Just(OutcomeKind::Success),
            Just(OutcomeKind::TransientFailure),
            Just(OutcomeKind::PermanentFailure),
        ];
        let state = proptest::sample::select(TaskState::ALL.to_vec());
        prop_oneof![
            (task, 0.0f64..1e9).prop_map(|(task, time)| LayerMessage::TaskActivate { task, time }),
            (task, task, 1u32..50, outcome, 0.0f64..1e9).prop_map(
                |(task, job, attempt, outcome, time)| LayerMessage::JobStatus {
                    task,
                    job,
                    attempt,
                    outcome,
                    time
                }
            ),
            (task, state, 0.0f64..1e9).prop_map(|(task, state, time)| LayerMessage::TaskStatus {
                task,
                state,
                time
            }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(message in arb_message()) {
            let json = message.to_json();
            prop_assert_eq!(LayerMessage::from_json(&json).unwrap(), message);
        }
    }
}
