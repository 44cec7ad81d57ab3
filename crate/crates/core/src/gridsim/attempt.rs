//! Single-attempt execution against a site's failure model.

use rand::Rng;

use super::{Site, WasteModel};
use crate::jedi::JobDefinition;

/// Result of executing one attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptOutcome {
    /// Completed after `duration`; listed input events were silently
    /// corrupted in the output.
    Success {
        duration: f64,
        corrupted_events: Vec<u64>,
    },
    /// Failed recoverably after wasting `duration`.
    TransientFailure { duration: f64 },
    /// Failed in a way no retry fixes; no time is accounted.
    PermanentFailure,
}

/// Draws one attempt outcome. The branch order is permanent, transient,
/// success; transient failures still waste time, and successful attempts
/// corrupt each event independently with `p_silent_per_event`.
pub fn execute_attempt<R: Rng>(job: &JobDefinition, site: &Site, rng: &mut R) -> AttemptOutcome {
    let nominal = job.est_cpu / site.speed_factor;
    let failure = &site.failure;
    let draw: f64 = rng.random();
    if draw < failure.p_permanent {
        return AttemptOutcome::PermanentFailure;
    }
    if draw < failure.p_permanent + failure.p_transient {
        let fraction = match failure.transient_waste {
            WasteModel::FullDuration => 1.0,
            // Uniform over (0, 1]: even an early crash wastes some time.
            WasteModel::UniformFraction => 1.0 - rng.random::<f64>(),
        };
        return AttemptOutcome::TransientFailure {
            duration: fraction * nominal,
        };
    }
    let mut corrupted_events = Vec::new();
    if failure.p_silent_per_event > 0.0 {
        let span = job.input.span();
        for event in span.first..span.end() {
            if rng.random::<f64>() < failure.p_silent_per_event {
                corrupted_events.push(event);
            }
        }
    }
    AttemptOutcome::Success {
        duration: nominal,
        corrupted_events,
    }
}
