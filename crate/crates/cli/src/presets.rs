//! Shipped scenario presets mirroring the main data processing use cases:
//! trigger (weekly, short, no loss), real data (yearly, medium, no loss),
//! simulated data (quarterly, long, loss tolerated), plus the
//! sub-event fast-tracker workflow and a retry-overhead probe.

use crate::scenario::{Scenario, ScenarioError};

pub const PRESETS: &[(&str, &str)] = &[
    ("real-2011", include_str!("../presets/real-2011.toml")),
    ("mc12", include_str!("../presets/mc12.toml")),
    ("ftk-sim", include_str!("../presets/ftk-sim.toml")),
    (
        "trigger-weekly",
        include_str!("../presets/trigger-weekly.toml"),
    ),
    (
        "retry-overhead",
        include_str!("../presets/retry-overhead.toml"),
    ),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn load(name: &str) -> Result<Scenario, ScenarioError> {
    let text = source(name).ok_or(ScenarioError::DanglingReference {
        what: "preset",
        name: name.to_string(),
    })?;
    Scenario::from_toml_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioFile;

    #[test]
    fn every_preset_loads_and_compiles() {
        for name in names() {
            let scenario = load(name).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            assert!(!scenario.seeds.is_empty());
            for wf in scenario.compile_all().unwrap() {
                let diagnostics = prodsim_core::deft::validate_workflow(&wf);
                assert!(diagnostics.is_empty(), "preset {name}: {diagnostics:?}");
            }
        }
    }

    #[test]
    fn real_preset_tolerates_no_loss() {
        let s = load("real-2011").unwrap();
        let template = s.registry.get("reco-chain").unwrap();
        assert!(!template.retry_policy.tolerate_loss);
    }

    #[test]
    fn mc_preset_tolerates_loss_within_budget() {
        let s = load("mc12").unwrap();
        let template = s.registry.get("mc-chain").unwrap();
        assert!(template.retry_policy.tolerate_loss);
        assert_eq!(template.retry_policy.loss_budget, 1e-8);
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for name in names() {
            let file: ScenarioFile = toml::from_str(source(name).unwrap()).unwrap();
            let rendered = toml::to_string(&file).unwrap();
            let back: ScenarioFile = toml::from_str(&rendered).unwrap();
            assert_eq!(back, file, "preset {name} does not round-trip");
        }
    }
}
