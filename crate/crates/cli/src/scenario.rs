//! Scenario files: the human-editable description of a campaign — task
//! requests, workflow templates, sites with failure models, scout and
//! retry configuration, seeds and horizon. Everything is explicit; there
//! is no implicit entropy and unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use prodsim_core::datamodel::{parse_data_type, EventRange, TransformKind, TransformationSpec};
use prodsim_core::deft::{
    compile_request, Request, StepInput, TemplateRegistry, TemplateStep, Workflow, WorkflowTemplate,
};
use prodsim_core::gridsim::{EngineConfig, FailureModel, FaultSpec, Site, WasteModel};
use prodsim_core::jedi::{RetryPolicy, ScoutConfig, SplitterKind, SubRegionSplitSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown key: {message}")]
    UnknownKey { message: String },
    #[error("parse error: {message}")]
    Parse { message: String },
    #[error("{what} `{name}` is not defined")]
    DanglingReference { what: &'static str, name: String },
    #[error("invalid scenario: {message}")]
    Invalid { message: String },
}

fn invalid(message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        message: message.into(),
    }
}

// ---------------------------------------------------------------------
// File-level schema. These mirror the TOML layout one to one; resolution
// into core types happens in `Scenario::resolve`.
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(rename = "template")]
    pub templates: Vec<TemplateToml>,
    #[serde(rename = "request")]
    pub requests: Vec<RequestToml>,
    #[serde(rename = "site")]
    pub sites: Vec<SiteToml>,
    #[serde(default)]
    pub scouts: ScoutsToml,
    #[serde(default)]
    pub ftk: FtkToml,
    pub run: RunToml,
    #[serde(rename = "fault", default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultToml>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateToml {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_params: Vec<String>,
    pub policy: PolicyToml,
    #[serde(rename = "step")]
    pub steps: Vec<StepToml>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyToml {
    pub max_attempts: u32,
    pub tolerate_loss: bool,
    #[serde(default = "default_loss_budget")]
    pub loss_budget: f64,
    #[serde(default)]
    pub split_on_retry: bool,
}

fn default_loss_budget() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepToml {
    pub name: String,
    pub splitter: String,
    pub transform: TransformToml,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<StepInputToml>,
    #[serde(rename = "extra_input", default, skip_serializing_if = "Vec::is_empty")]
    pub extra_inputs: Vec<StepInputToml>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformToml {
    pub name: String,
    pub input: String,
    pub outputs: Vec<String>,
    pub cpu_per_event: f64,
    pub kind: TransformKindToml,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKindToml {
    Transform,
    Merge,
    Filter,
}

/// Either `{ step, dtype }` (an earlier step's output) or
/// `{ param, events }` (request parameters naming an external dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepInputToml {
    Step(StepRefToml),
    External(ExternalRefToml),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRefToml {
    pub step: String,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalRefToml {
    pub param: String,
    #[serde(default = "default_events_param")]
    pub events: String,
}

fn default_events_param() -> String {
    "total_events".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestToml {
    pub id: String,
    pub template: String,
    #[serde(default)]
    pub priority: i32,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteToml {
    pub id: String,
    pub cores: u32,
    pub speed_factor: f64,
    #[serde(default = "default_max_walltime")]
    pub max_walltime: f64,
    #[serde(default = "default_min_job_events")]
    pub min_job_events: u64,
    #[serde(default = "default_max_job_events")]
    pub max_job_events: u64,
    pub failure: FailureToml,
}

fn default_max_walltime() -> f64 {
    86_400.0
}
fn default_min_job_events() -> u64 {
    1
}
fn default_max_job_events() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureToml {
    #[serde(default)]
    pub p_transient: f64,
    #[serde(default)]
    pub p_permanent: f64,
    #[serde(default)]
    pub p_silent_per_event: f64,
    #[serde(default)]
    pub transient_waste: WasteModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoutsToml {
    pub num_scouts: u32,
    pub required_successes: u32,
}

impl Default for ScoutsToml {
    fn default() -> ScoutsToml {
        ScoutsToml {
            num_scouts: 5,
            required_successes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtkToml {
    pub num_subregions: u32,
    pub subregions_per_job: u32,
    pub regions: u32,
}

impl Default for FtkToml {
    fn default() -> FtkToml {
        FtkToml {
            num_subregions: 256,
            subregions_per_job: 4,
            regions: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunToml {
    /// Explicit master seeds, one run per seed.
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_target_walltime")]
    pub target_walltime: f64,
}

fn default_horizon() -> f64 {
    1e12
}
fn default_target_walltime() -> f64 {
    3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultToml {
    /// Defaults to the only request when the scenario has exactly one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<String>,
    pub step: String,
    pub first: u64,
    pub count: u64,
}

// ---------------------------------------------------------------------
// Resolved scenario.
// ---------------------------------------------------------------------

/// A fully-resolved scenario: every reference checked, every request
/// compilable.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub requests: Vec<Request>,
    pub registry: TemplateRegistry,
    pub sites: Vec<Site>,
    pub scouts: ScoutConfig,
    pub subregion: SubRegionSplitSpec,
    pub seeds: Vec<u64>,
    pub horizon: f64,
    pub target_walltime: f64,
    pub faults: Vec<FaultSpec>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(classify_toml_error)?;
        Scenario::resolve(file)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            target_walltime: self.target_walltime,
            scouts: self.scouts,
            subregion: self.subregion,
            horizon: self.horizon,
            faults: self.faults.clone(),
        }
    }

    /// Compiles every request; the workflows come back in request order.
    pub fn compile_all(&self) -> Result<Vec<Workflow>, ScenarioError> {
        self.requests
            .iter()
            .map(|req| {
                compile_request(req, &self.registry)
                    .map_err(|e| invalid(format!("request `{}`: {e}", req.id)))
            })
            .collect()
    }

    fn resolve(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
        if file.version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                file.version
            )));
        }

        let mut registry = TemplateRegistry::new();
        for template in &file.templates {
            registry
                .register(resolve_template(template)?)
                .map_err(|e| invalid(e.to_string()))?;
        }

        if file.requests.is_empty() {
            return Err(invalid("a scenario needs at least one request"));
        }
        let mut requests = Vec::with_capacity(file.requests.len());
        let mut seen_requests = std::collections::BTreeSet::new();
        for r in &file.requests {
            if !seen_requests.insert(r.id.as_str()) {
                return Err(invalid(format!("duplicate request id `{}`", r.id)));
            }
            if registry.get(&r.template).is_none() {
                return Err(ScenarioError::DanglingReference {
                    what: "template",
                    name: r.template.clone(),
                });
            }
            requests.push(Request {
                id: r.id.clone(),
                template: r.template.clone(),
                params: r.params.clone(),
                priority: r.priority,
            });
        }

        if file.sites.is_empty() {
            return Err(invalid("a scenario needs at least one site"));
        }
        let sites: Vec<Site> = file
            .sites
            .iter()
            .map(|s| Site {
                id: s.id.clone(),
                cores: s.cores,
                speed_factor: s.speed_factor,
                failure: FailureModel {
                    p_transient: s.failure.p_transient,
                    p_permanent: s.failure.p_permanent,
                    p_silent_per_event: s.failure.p_silent_per_event,
                    transient_waste: s.failure.transient_waste,
                },
                max_walltime: s.max_walltime,
                min_job_events: s.min_job_events,
                max_job_events: s.max_job_events,
            })
            .collect();
        for site in &sites {
            site.validate().map_err(invalid)?;
        }

        if file.run.seeds.is_empty() {
            return Err(invalid("run.seeds must list at least one explicit seed"));
        }

        let scouts = ScoutConfig {
            num_scouts: file.scouts.num_scouts,
            required_successes: file.scouts.required_successes,
        };
        scouts.validate().map_err(|e| invalid(e.to_string()))?;
        let subregion = SubRegionSplitSpec {
            num_subregions: file.ftk.num_subregions,
            subregions_per_job: file.ftk.subregions_per_job,
            regions: file.ftk.regions,
        };
        subregion.validate().map_err(|e| invalid(e.to_string()))?;

        let mut faults = Vec::with_capacity(file.faults.len());
        for f in &file.faults {
            let request = match &f.request {
                Some(id) => requests.iter().find(|r| r.id == *id).ok_or_else(|| {
                    ScenarioError::DanglingReference {
                        what: "request",
                        name: id.clone(),
                    }
                })?,
                None if requests.len() == 1 => &requests[0],
                None => {
                    return Err(invalid(
                        "fault must name its request when the scenario has several",
                    ))
                }
            };
            let template = registry.get(&request.template).expect("checked above");
            if !template.steps.iter().any(|s| s.name == f.step) {
                return Err(ScenarioError::DanglingReference {
                    what: "step",
                    name: format!("{}.{}", request.template, f.step),
                });
            }
            if f.count == 0 {
                return Err(invalid("fault ranges must cover at least one event"));
            }
            faults.push(FaultSpec {
                task_id: format!("{}.{}", request.id, f.step),
                range: EventRange::new(f.first, f.count),
            });
        }

        let scenario = Scenario {
            requests,
            registry,
            sites,
            scouts,
            subregion,
            seeds: file.run.seeds.clone(),
            horizon: file.run.horizon,
            target_walltime: file.run.target_walltime,
            faults,
        };
        // Every request must compile; surfacing that here keeps `load`
        // the single gate for a usable scenario.
        scenario.compile_all()?;
        Ok(scenario)
    }
}

fn resolve_template(t: &TemplateToml) -> Result<WorkflowTemplate, ScenarioError> {
    let mut steps = Vec::with_capacity(t.steps.len());
    for (index, step) in t.steps.iter().enumerate() {
        if SplitterKind::from_name(&step.splitter).is_none() {
            return Err(ScenarioError::DanglingReference {
                what: "splitter",
                name: step.splitter.clone(),
            });
        }
        let transform = resolve_transform(&t.name, &step.name, &step.transform)?;
        let input = match &step.input {
            Some(spec) => resolve_step_input(&t.name, spec)?,
            // Default wiring: the first step reads the external input
            // named by the `input`/`total_events` parameters, later steps
            // chain to the previous step's first output.
            None if index == 0 => StepInput::External {
                name_param: "input".into(),
                events_param: default_events_param(),
            },
            None => {
                let prev = &t.steps[index - 1];
                let dtype = prev.transform.outputs.first().ok_or_else(|| {
                    invalid(format!("step `{}` has no outputs to chain from", prev.name))
                })?;
                StepInput::Step {
                    step: prev.name.clone(),
                    dtype: parse_data_type(dtype).map_err(|e| invalid(e.to_string()))?,
                }
            }
        };
        let extra_inputs = step
            .extra_inputs
            .iter()
            .map(|spec| resolve_step_input(&t.name, spec))
            .collect::<Result<Vec<_>, _>>()?;
        steps.push(TemplateStep {
            name: step.name.clone(),
            transform,
            splitter: step.splitter.clone(),
            input,
            extra_inputs,
        });
    }
    Ok(WorkflowTemplate {
        name: t.name.clone(),
        steps,
        required_params: t.required_params.clone(),
        retry_policy: RetryPolicy {
            max_attempts: t.policy.max_attempts,
            tolerate_loss: t.policy.tolerate_loss,
            loss_budget: t.policy.loss_budget,
            split_on_retry: t.policy.split_on_retry,
        },
    })
}

fn resolve_transform(
    template: &str,
    step: &str,
    t: &TransformToml,
) -> Result<TransformationSpec, ScenarioError> {
    let context = || format!("template `{template}` step `{step}`");
    let kind = match (t.kind, t.selectivity) {
        (TransformKindToml::Transform, None) => TransformKind::Transform,
        (TransformKindToml::Merge, None) => TransformKind::Merge,
        (TransformKindToml::Filter, Some(selectivity)) => TransformKind::Filter { selectivity },
        (TransformKindToml::Filter, None) => {
            return Err(invalid(format!(
                "{}: filter needs a selectivity",
                context()
            )))
        }
        (_, Some(_)) => {
            return Err(invalid(format!(
                "{}: selectivity only applies to filters",
                context()
            )))
        }
    };
    let input = parse_data_type(&t.input).map_err(|e| invalid(format!("{}: {e}", context())))?;
    let outputs = t
        .outputs
        .iter()
        .map(|o| parse_data_type(o).map_err(|e| invalid(format!("{}: {e}", context()))))
        .collect::<Result<Vec<_>, _>>()?;
    TransformationSpec::new(&t.name, input, outputs, t.cpu_per_event, kind)
        .map_err(|e| invalid(format!("{}: {e}", context())))
}

fn resolve_step_input(template: &str, spec: &StepInputToml) -> Result<StepInput, ScenarioError> {
    match spec {
        StepInputToml::Step(s) => Ok(StepInput::Step {
            step: s.step.clone(),
            dtype: parse_data_type(&s.dtype)
                .map_err(|e| invalid(format!("template `{template}`: {e}")))?,
        }),
        StepInputToml::External(e) => Ok(StepInput::External {
            name_param: e.param.clone(),
            events_param: e.events.clone(),
        }),
    }
}

fn classify_toml_error(e: toml::de::Error) -> ScenarioError {
    let message = e.to_string();
    if message.contains("unknown field") {
        ScenarioError::UnknownKey { message }
    } else {
        ScenarioError::Parse { message }
    }
}

/// Loads and fully resolves a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1

[[template]]
name = "single"
required_params = ["input", "total_events"]

[template.policy]
max_attempts = 3
tolerate_loss = false

[[template.step]]
name = "crunch"
splitter = "events"

[template.step.transform]
name = "crunch"
input = "RAW"
outputs = ["ESD"]
cpu_per_event = 1.0
kind = "transform"

[[request]]
id = "probe"
template = "single"

[request.params]
input = "probe.stream.RAW"
total_events = "1000"

[[site]]
id = "s"
cores = 4
speed_factor = 1.0

[site.failure]
p_transient = 0.0

[run]
seeds = [1]
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.requests.len(), 1);
        assert_eq!(s.seeds, vec![1]);
        assert_eq!(s.scouts.num_scouts, 5);
        let wfs = s.compile_all().unwrap();
        assert_eq!(wfs[0].tasks.len(), 1);
    }

    #[test]
    fn unknown_key_is_its_own_error() {
        let text = MINIMAL.replace("[run]\nseeds = [1]", "[run]\nseeds = [1]\ncolour = \"red\"");
        match Scenario::from_toml_str(&text) {
            Err(ScenarioError::UnknownKey { message }) => {
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match Scenario::from_toml_str("version = ") {
            Err(ScenarioError::Parse { message }) => {
                assert!(message.contains("line 1"), "{message}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn dangling_template_reference() {
        let text = MINIMAL.replace("template = \"single\"", "template = \"absent\"");
        assert!(matches!(
            Scenario::from_toml_str(&text),
            Err(ScenarioError::DanglingReference {
                what: "template",
                ..
            })
        ));
    }

    #[test]
    fn dangling_fault_step() {
        let text = format!("{MINIMAL}\n[[fault]]\nstep = \"nope\"\nfirst = 0\ncount = 1\n");
        assert!(matches!(
            Scenario::from_toml_str(&text),
            Err(ScenarioError::DanglingReference { what: "step", .. })
        ));
    }

    #[test]
    fn fault_resolves_to_task_id() {
        let text = format!("{MINIMAL}\n[[fault]]\nstep = \"crunch\"\nfirst = 10\ncount = 2\n");
        let s = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s.faults.len(), 1);
        assert_eq!(s.faults[0].task_id, "probe.crunch");
        assert_eq!(s.faults[0].range, EventRange::new(10, 2));
    }

    #[test]
    fn seeds_must_be_explicit() {
        let text = MINIMAL.replace("seeds = [1]", "seeds = []");
        assert!(matches!(
            Scenario::from_toml_str(&text),
            Err(ScenarioError::Invalid { .. })
        ));
    }

    #[test]
    fn file_round_trips_through_toml() {
        let file: ScenarioFile = toml::from_str(MINIMAL).unwrap();
        let rendered = toml::to_string(&file).unwrap();
        let back: ScenarioFile = toml::from_str(&rendered).unwrap();
        assert_eq!(back, file);
    }
}
