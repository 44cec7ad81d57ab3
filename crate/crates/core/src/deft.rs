//! The workflow abstraction layer.
//!
//! Task requests are dictionaries of parameters; compiling one against a
//! workflow template yields a group of interdependent tasks whose
//! dependencies exist in the form of input/output datasets. Tasks then
//! move through a state machine driven by external events such as job
//! completion in the layer below.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    check_edge, DataType, Dataset, DatasetStatus, TransformationSpec, TypeMismatch,
};
use crate::jedi::RetryPolicy;

/// A task request: the template to instantiate plus its parameter
/// dictionary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub template: String,
    pub params: BTreeMap<String, String>,
    pub priority: i32,
}

/// Where a template step reads its input from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepInput {
    /// An externally-provided dataset; `name_param` and `events_param`
    /// name the request parameters carrying the dataset name and size.
    External {
        name_param: String,
        events_param: String,
    },
    /// The output of an earlier step, selected by data type.
    Step { step: String, dtype: DataType },
}

/// One step of a workflow template. Consecutive steps must type-check:
/// each step's input must match one output of the step it reads from.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStep {
    pub name: String,
    pub transform: TransformationSpec,
    /// Splitter plugin defining this step's jobs (see the job layer).
    pub splitter: String,
    pub input: StepInput,
    /// Additional datasets that must be complete before the step runs,
    /// e.g. the minimum-bias sample overlaid at digitization.
    pub extra_inputs: Vec<StepInput>,
}

/// A named, reusable workflow definition.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowTemplate {
    pub name: String,
    pub steps: Vec<TemplateStep>,
    pub required_params: Vec<String>,
    /// Loss-tolerance semantics for every task of this template.
    pub retry_policy: RetryPolicy,
}

impl WorkflowTemplate {
    pub fn validate(&self) -> Result<(), TemplateError> {
        let mut seen = BTreeSet::new();
        for step in &self.steps {
            if !seen.insert(step.name.as_str()) {
                return Err(TemplateError::DuplicateStep {
                    template: self.name.clone(),
                    step: step.name.clone(),
                });
            }
            step.transform
                .validate()
                .map_err(|source| TemplateError::BadTransform {
                    template: self.name.clone(),
                    step: step.name.clone(),
                    message: source.to_string(),
                })?;
            for input in std::iter::once(&step.input).chain(&step.extra_inputs) {
                if let StepInput::Step { step: from, dtype } = input {
                    let producer = self
                        .steps
                        .iter()
                        .take_while(|s| s.name != step.name)
                        .find(|s| s.name == *from)
                        .ok_or_else(|| TemplateError::UnknownStep {
                            template: self.name.clone(),
                            step: step.name.clone(),
                            referenced: from.clone(),
                        })?;
                    if !producer.transform.output_dtypes.contains(dtype) {
                        return Err(TemplateError::NoSuchOutput {
                            template: self.name.clone(),
                            step: from.clone(),
                            dtype: dtype.to_string(),
                        });
                    }
                    check_edge(dtype, &step.transform).map_err(|source| {
                        TemplateError::Mismatch {
                            template: self.name.clone(),
                            source,
                        }
                    })?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("template `{template}`: duplicate step name `{step}`")]
    DuplicateStep { template: String, step: String },
    #[error("template `{template}` step `{step}`: {message}")]
    BadTransform {
        template: String,
        step: String,
        message: String,
    },
    #[error("template `{template}` step `{step}`: references unknown earlier step `{referenced}`")]
    UnknownStep {
        template: String,
        step: String,
        referenced: String,
    },
    #[error("template `{template}`: step `{step}` has no output of type {dtype}")]
    NoSuchOutput {
        template: String,
        step: String,
        dtype: String,
    },
    #[error("template `{template}`: {source}")]
    Mismatch {
        template: String,
        source: TypeMismatch,
    },
}

/// Registry of workflow templates, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, WorkflowTemplate>,
}

impl TemplateRegistry {
    pub fn new() -> TemplateRegistry {
        TemplateRegistry::default()
    }

    pub fn register(&mut self, template: WorkflowTemplate) -> Result<(), TemplateError> {
        template.validate()?;
        self.templates.insert(template.name.clone(), template);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WorkflowTemplate> {
        self.templates.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(|k| k.as_str())
    }
}

/// Lifecycle states of a task. Terminal states absorb all events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Registered,
    Defined,
    Scouting,
    Running,
    Paused,
    Finished,
    Done,
    Failed,
    Broken,
    Aborted,
}

impl TaskState {
    pub const ALL: [TaskState; 10] = [
        TaskState::Registered,
        TaskState::Defined,
        TaskState::Scouting,
        TaskState::Running,
        TaskState::Paused,
        TaskState::Finished,
        TaskState::Done,
        TaskState::Failed,
        TaskState::Broken,
        TaskState::Aborted,
    ];

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            TaskState::Done | TaskState::Failed | TaskState::Broken | TaskState::Aborted
        )
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TaskState::Registered => "registered",
            TaskState::Defined => "defined",
            TaskState::Scouting => "scouting",
            TaskState::Running => "running",
            TaskState::Paused => "paused",
            TaskState::Finished => "finished",
            TaskState::Done => "done",
            TaskState::Failed => "failed",
            TaskState::Broken => "broken",
            TaskState::Aborted => "aborted",
        };
        f.write_str(name)
    }
}

/// External events driving task transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionEvent {
    JobsDefined,
    ScoutsLaunched,
    ScoutsOk,
    ScoutsFailed,
    AllJobsDone,
    UnrecoverableLoss,
    Abort,
    Pause,
    Resume,
    OutputsRegistered,
}

impl TransitionEvent {
    pub const ALL: [TransitionEvent; 10] = [
        TransitionEvent::JobsDefined,
        TransitionEvent::ScoutsLaunched,
        TransitionEvent::ScoutsOk,
        TransitionEvent::ScoutsFailed,
        TransitionEvent::AllJobsDone,
        TransitionEvent::UnrecoverableLoss,
        TransitionEvent::Abort,
        TransitionEvent::Pause,
        TransitionEvent::Resume,
        TransitionEvent::OutputsRegistered,
    ];
}

impl fmt::Display for TransitionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TransitionEvent::JobsDefined => "jobs_defined",
            TransitionEvent::ScoutsLaunched => "scouts_launched",
            TransitionEvent::ScoutsOk => "scouts_ok",
            TransitionEvent::ScoutsFailed => "scouts_failed",
            TransitionEvent::AllJobsDone => "all_jobs_done",
            TransitionEvent::UnrecoverableLoss => "unrecoverable_loss",
            TransitionEvent::Abort => "abort",
            TransitionEvent::Pause => "pause",
            TransitionEvent::Resume => "resume",
            TransitionEvent::OutputsRegistered => "outputs_registered",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition: event {event} in state {state}")]
pub struct IllegalTransition {
    pub state: TaskState,
    pub event: TransitionEvent,
}

/// The transition table. Bulk submission is gated on scout success, and
/// `UnrecoverableLoss` applies only to tasks that do not tolerate loss;
/// loss-tolerant tasks finish with the losses accounted instead.
pub fn next_state(
    state: TaskState,
    event: TransitionEvent,
    tolerate_loss: bool,
) -> Result<TaskState, IllegalTransition> {
    use TaskState::*;
    use TransitionEvent::*;
    let next = match (state, event) {
        (Registered, JobsDefined) => Defined,
        (Defined, ScoutsLaunched) => Scouting,
        (Scouting, ScoutsOk) => Running,
        (Scouting, ScoutsFailed) => Broken,
        (Running, AllJobsDone) => Finished,
        (Running, UnrecoverableLoss) if !tolerate_loss => Failed,
        (Finished, OutputsRegistered) => Done,
        (Running, Pause) => Paused,
        (Paused, Resume) => Running,
        (s, Abort) if !s.is_terminal() => Aborted,
        _ => return Err(IllegalTransition { state, event }),
    };
    Ok(next)
}

/// A unit of the workflow: one data transformation applied to one input
/// dataset, comprising many jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub transformation: TransformationSpec,
    /// Primary input dataset; jobs are defined over its events.
    pub input: String,
    /// Secondary inputs that must be complete before the task is ready.
    pub extra_inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub state: TaskState,
    pub retry_policy: RetryPolicy,
    pub splitter: String,
    pub attempts_used: u32,
}

impl Task {
    /// Applies a transition event, mutating the state on success.
    pub fn apply_transition(&mut self, event: TransitionEvent) -> Result<(), IllegalTransition> {
        self.state = next_state(self.state, event, self.retry_policy.tolerate_loss)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkflowState {
    Building,
    Active,
    Done,
    Failed,
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            WorkflowState::Building => "building",
            WorkflowState::Active => "active",
            WorkflowState::Done => "done",
            WorkflowState::Failed => "failed",
        };
        f.write_str(name)
    }
}

/// A group of interdependent tasks plus the datasets linking them.
/// Task-to-task edges are induced by shared dataset names.
#[derive(Debug, Clone, PartialEq)]
pub struct Workflow {
    pub id: String,
    pub tasks: Vec<Task>,
    pub datasets: BTreeMap<String, Dataset>,
    pub state: WorkflowState,
}

impl Workflow {
    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn task_mut(&mut self, id: &str) -> Option<&mut Task> {
        self.tasks.iter_mut().find(|t| t.id == id)
    }

    /// Producing task index for each dataset name.
    pub fn producers(&self) -> BTreeMap<&str, usize> {
        let mut map = BTreeMap::new();
        for (i, task) in self.tasks.iter().enumerate() {
            for out in &task.outputs {
                map.entry(out.as_str()).or_insert(i);
            }
        }
        map
    }

    /// Directed task edges `(producer, consumer)` induced by datasets.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let producers = self.producers();
        let mut edges = Vec::new();
        for (j, task) in self.tasks.iter().enumerate() {
            for input in std::iter::once(&task.input).chain(&task.extra_inputs) {
                if let Some(&i) = producers.get(input.as_str()) {
                    edges.push((i, j));
                }
            }
        }
        edges
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("request `{request}` is missing required parameter `{key}`")]
    MissingParam { request: String, key: String },
    #[error("request `{request}` parameter `{key}` is invalid: {reason}")]
    InvalidParam {
        request: String,
        key: String,
        reason: String,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Compiles a request into a workflow: one task per template step, with
/// datasets named `<request>.<step>.<dtype>`. Pure function of
/// `(request, registry)`.
pub fn compile_request(
    req: &Request,
    registry: &TemplateRegistry,
) -> Result<Workflow, CompileError> {
    let template = registry
        .get(&req.template)
        .ok_or_else(|| CompileError::UnknownTemplate(req.template.clone()))?;
    for key in &template.required_params {
        if !req.params.contains_key(key) {
            return Err(CompileError::MissingParam {
                request: req.id.clone(),
                key: key.clone(),
            });
        }
    }
    template.validate()?;

    let mut datasets: BTreeMap<String, Dataset> = BTreeMap::new();
    let mut tasks = Vec::with_capacity(template.steps.len());

    let resolve = |input: &StepInput,
                   expected: &DataType,
                   datasets: &mut BTreeMap<String, Dataset>|
     -> Result<String, CompileError> {
        match input {
            StepInput::External {
                name_param,
                events_param,
            } => {
                let name =
                    req.params
                        .get(name_param)
                        .ok_or_else(|| CompileError::MissingParam {
                            request: req.id.clone(),
                            key: name_param.clone(),
                        })?;
                let events_text =
                    req.params
                        .get(events_param)
                        .ok_or_else(|| CompileError::MissingParam {
                            request: req.id.clone(),
                            key: events_param.clone(),
                        })?;
                let events: u64 = events_text
                    .parse()
                    .map_err(|_| CompileError::InvalidParam {
                        request: req.id.clone(),
                        key: events_param.clone(),
                        reason: format!("`{events_text}` is not an event count"),
                    })?;
                if events == 0 {
                    return Err(CompileError::InvalidParam {
                        request: req.id.clone(),
                        key: events_param.clone(),
                        reason: "external inputs must hold at least one event".into(),
                    });
                }
                datasets
                    .entry(name.clone())
                    .or_insert_with(|| Dataset::complete(name, expected.clone(), events));
                Ok(name.clone())
            }
            StepInput::Step { step, dtype } => Ok(format!("{}.{}.{}", req.id, step, dtype)),
        }
    };

    for step in &template.steps {
        let input = resolve(&step.input, &step.transform.input_dtype, &mut datasets)?;
        let extra_inputs = step
            .extra_inputs
            .iter()
            .map(|e| resolve(e, &step.transform.input_dtype, &mut datasets))
            .collect::<Result<Vec<_>, _>>()?;
        let outputs: Vec<String> = step
            .transform
            .output_dtypes
            .iter()
            .map(|dtype| {
                let name = format!("{}.{}.{}", req.id, step.name, dtype);
                datasets.insert(name.clone(), Dataset::declared(&name, dtype.clone()));
                name
            })
            .collect();
        tasks.push(Task {
            id: format!("{}.{}", req.id, step.name),
            transformation: step.transform.clone(),
            input,
            extra_inputs,
            outputs,
            state: TaskState::Registered,
            retry_policy: template.retry_policy.clone(),
            splitter: step.splitter.clone(),
            attempts_used: 0,
        });
    }

    Ok(Workflow {
        id: req.id.clone(),
        tasks,
        datasets,
        state: WorkflowState::Building,
    })
}

/// Violations reported by [`validate_workflow`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    Cycle {
        involving: String,
    },
    DuplicateProducer {
        dataset: String,
        first: String,
        second: String,
    },
    TypeMismatch {
        task: String,
        dataset: String,
        expected: String,
        found: String,
    },
    MissingDataset {
        task: String,
        dataset: String,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Cycle { involving } => {
                write!(f, "dependency cycle involving task `{involving}`")
            }
            Diagnostic::DuplicateProducer {
                dataset,
                first,
                second,
            } => {
                write!(
                    f,
                    "dataset `{dataset}` produced by both `{first}` and `{second}`"
                )
            }
            Diagnostic::TypeMismatch {
                task,
                dataset,
                expected,
                found,
            } => {
                write!(
                    f,
                    "task `{task}` expects {expected} but `{dataset}` is {found}"
                )
            }
            Diagnostic::MissingDataset { task, dataset } => {
                write!(f, "task `{task}` consumes undeclared dataset `{dataset}`")
            }
        }
    }
}

/// Checks the workflow invariants: acyclic edges, a single producer per
/// dataset, and type-correct edges. Returns every violation found.
pub fn validate_workflow(wf: &Workflow) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut producer_of: BTreeMap<&str, &str> = BTreeMap::new();
    for task in &wf.tasks {
        for out in &task.outputs {
            if let Some(first) = producer_of.get(out.as_str()) {
                diags.push(Diagnostic::DuplicateProducer {
                    dataset: out.clone(),
                    first: (*first).to_string(),
                    second: task.id.clone(),
                });
            } else {
                producer_of.insert(out, &task.id);
            }
        }
    }

    for task in &wf.tasks {
        for input in std::iter::once(&task.input).chain(&task.extra_inputs) {
            match wf.datasets.get(input) {
                None => diags.push(Diagnostic::MissingDataset {
                    task: task.id.clone(),
                    dataset: input.clone(),
                }),
                Some(ds) => {
                    if check_edge(&ds.dtype, &task.transformation).is_err() {
                        diags.push(Diagnostic::TypeMismatch {
                            task: task.id.clone(),
                            dataset: input.clone(),
                            expected: task.transformation.input_dtype.to_string(),
                            found: ds.dtype.to_string(),
                        });
                    }
                }
            }
        }
    }

    // Kahn's algorithm; whatever cannot be ordered sits on a cycle.
    let edges = wf.edges();
    let n = wf.tasks.len();
    let mut indegree = vec![0usize; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in &edges {
        adj[i].push(j);
        indegree[j] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut ordered = 0;
    while let Some(i) = queue.pop() {
        ordered += 1;
        for &j in &adj[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                queue.push(j);
            }
        }
    }
    if ordered < n {
        for (i, deg) in indegree.iter().enumerate() {
            if *deg > 0 {
                diags.push(Diagnostic::Cycle {
                    involving: wf.tasks[i].id.clone(),
                });
            }
        }
    }

    diags
}

/// Tasks in state `registered` whose every input dataset is complete.
/// Monotone: completing more datasets never shrinks the set.
pub fn ready_tasks(wf: &Workflow) -> BTreeSet<String> {
    wf.tasks
        .iter()
        .filter(|t| t.state == TaskState::Registered)
        .filter(|t| {
            std::iter::once(&t.input)
                .chain(&t.extra_inputs)
                .all(|name| {
                    wf.datasets
                        .get(name)
                        .map(|d| d.status == DatasetStatus::Complete)
                        .unwrap_or(false)
                })
        })
        .map(|t| t.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{parse_data_type, TransformKind};

    fn dt(s: &str) -> DataType {
        parse_data_type(s).unwrap()
    }

    fn transform(name: &str, input: &str, outputs: &[&str]) -> TransformationSpec {
        TransformationSpec::new(
            name,
            dt(input),
            outputs.iter().map(|o| dt(o)).collect(),
            1.0,
            TransformKind::Transform,
        )
        .unwrap()
    }

    fn merge(name: &str, dtype: &str) -> TransformationSpec {
        TransformationSpec::new(name, dt(dtype), vec![dt(dtype)], 0.1, TransformKind::Merge)
            .unwrap()
    }

    fn chain_step(name: &str, t: TransformationSpec, from: Option<(&str, &str)>) -> TemplateStep {
        let input = match from {
            None => StepInput::External {
                name_param: "input".into(),
                events_param: "total_events".into(),
            },
            Some((step, dtype)) => StepInput::Step {
                step: step.into(),
                dtype: dt(dtype),
            },
        };
        TemplateStep {
            name: name.into(),
            transform: t,
            splitter: "events".into(),
            input,
            extra_inputs: Vec::new(),
        }
    }

    /// Three-step reconstruction chain: RAW -> ESD -> AOD plus an AOD
    /// merge, single output each.
    fn reco_registry() -> TemplateRegistry {
        let mut registry = TemplateRegistry::new();
        registry
            .register(WorkflowTemplate {
                name: "reco-chain".into(),
                steps: vec![
                    chain_step("reco-esd", transform("raw2esd", "RAW", &["ESD"]), None),
                    chain_step(
                        "reco-aod",
                        transform("esd2aod", "ESD", &["AOD"]),
                        Some(("reco-esd", "ESD")),
                    ),
                    {
                        let mut s = chain_step(
                            "aod-merge",
                            merge("aodmerge", "AOD"),
                            Some(("reco-aod", "AOD")),
                        );
                        s.splitter = "merge".into();
                        s
                    },
                ],
                required_params: vec!["input".into(), "total_events".into()],
                retry_policy: RetryPolicy::default(),
            })
            .unwrap();
        registry
    }

    fn reco_request() -> Request {
        Request {
            id: "real11".into(),
            template: "reco-chain".into(),
            params: BTreeMap::from([
                ("input".to_string(), "data11.physics.RAW".to_string()),
                ("total_events".to_string(), "1000".to_string()),
            ]),
            priority: 100,
        }
    }

    #[test]
    fn compile_reco_chain() {
        let wf = compile_request(&reco_request(), &reco_registry()).unwrap();
        assert_eq!(wf.tasks.len(), 3);
        assert_eq!(wf.datasets.len(), 4);
        assert!(wf.tasks.iter().all(|t| t.state == TaskState::Registered));
        assert_eq!(wf.state, WorkflowState::Building);
        assert_eq!(wf.tasks[1].input, "real11.reco-esd.ESD");
        assert_eq!(
            wf.tasks[2].outputs,
            vec!["real11.aod-merge.AOD".to_string()]
        );
        assert!(validate_workflow(&wf).is_empty());
    }

    #[test]
    fn compile_is_deterministic() {
        let a = compile_request(&reco_request(), &reco_registry()).unwrap();
        let b = compile_request(&reco_request(), &reco_registry()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compile_unknown_template() {
        let mut req = reco_request();
        req.template = "absent".into();
        assert_eq!(
            compile_request(&req, &reco_registry()),
            Err(CompileError::UnknownTemplate("absent".into()))
        );
    }

    #[test]
    fn compile_missing_param() {
        let mut req = reco_request();
        req.params.remove("total_events");
        assert!(matches!(
            compile_request(&req, &reco_registry()),
            Err(CompileError::MissingParam { .. })
        ));
    }

    #[test]
    fn template_type_mismatch_rejected() {
        let mut registry = TemplateRegistry::new();
        let err = registry
            .register(WorkflowTemplate {
                name: "bad".into(),
                steps: vec![
                    chain_step("a", transform("raw2esd", "RAW", &["ESD"]), None),
                    chain_step(
                        "b",
                        transform("aod2ntup", "AOD", &["NTUP"]),
                        Some(("a", "ESD")),
                    ),
                ],
                required_params: vec![],
                retry_policy: RetryPolicy::default(),
            })
            .unwrap_err();
        assert!(matches!(err, TemplateError::Mismatch { .. }));
    }

    #[test]
    fn validate_flags_duplicate_producer() {
        let mut wf = compile_request(&reco_request(), &reco_registry()).unwrap();
        let dup = wf.tasks[1].outputs[0].clone();
        wf.tasks[0].outputs.push(dup);
        let diags = validate_workflow(&wf);
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::DuplicateProducer { .. })));
    }

    #[test]
    fn validate_flags_self_loop() {
        let mut wf = compile_request(&reco_request(), &reco_registry()).unwrap();
        // First task consumes its own output.
        wf.tasks[0].input = wf.tasks[0].outputs[0].clone();
        wf.tasks[0].transformation.input_dtype = dt("ESD");
        let diags = validate_workflow(&wf);
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::Cycle { .. })));
    }

    #[test]
    fn ready_only_root_at_start() {
        let wf = compile_request(&reco_request(), &reco_registry()).unwrap();
        let ready = ready_tasks(&wf);
        assert_eq!(ready, BTreeSet::from(["real11.reco-esd".to_string()]));
    }

    #[test]
    fn ready_frontier_advances() {
        let mut wf = compile_request(&reco_request(), &reco_registry()).unwrap();
        wf.tasks[0].state = TaskState::Done;
        let out = wf.tasks[0].outputs[0].clone();
        *wf.datasets.get_mut(&out).unwrap() = Dataset::complete(&out, dt("ESD"), 1000);
        assert_eq!(
            ready_tasks(&wf),
            BTreeSet::from(["real11.reco-aod".to_string()])
        );
    }

    #[test]
    fn ready_empty_when_all_terminal() {
        let mut wf = compile_request(&reco_request(), &reco_registry()).unwrap();
        for t in &mut wf.tasks {
            t.state = TaskState::Aborted;
        }
        assert!(ready_tasks(&wf).is_empty());
    }

    #[test]
    fn ready_is_monotone_in_dataset_completion() {
        let mut wf = compile_request(&reco_request(), &reco_registry()).unwrap();
        let before = ready_tasks(&wf);
        let out = wf.tasks[0].outputs[0].clone();
        *wf.datasets.get_mut(&out).unwrap() = Dataset::complete(&out, dt("ESD"), 1000);
        let after = ready_tasks(&wf);
        assert!(before.is_subset(&after));
    }

    #[test]
    fn transition_examples() {
        assert_eq!(
            next_state(TaskState::Scouting, TransitionEvent::ScoutsFailed, false),
            Ok(TaskState::Broken)
        );
        assert_eq!(
            next_state(TaskState::Running, TransitionEvent::AllJobsDone, false),
            Ok(TaskState::Finished)
        );
        assert!(next_state(TaskState::Done, TransitionEvent::Abort, false).is_err());
    }

    #[test]
    fn unrecoverable_loss_requires_no_loss_policy() {
        assert_eq!(
            next_state(
                TaskState::Running,
                TransitionEvent::UnrecoverableLoss,
                false
            ),
            Ok(TaskState::Failed)
        );
        assert!(next_state(TaskState::Running, TransitionEvent::UnrecoverableLoss, true).is_err());
    }

    #[test]
    fn every_state_reachable_and_terminals_absorb() {
        // Breadth-first closure over the transition table from `registered`,
        // exploring both policy variants.
        let mut reachable = BTreeSet::from([TaskState::Registered]);
        let mut frontier = vec![TaskState::Registered];
        while let Some(state) = frontier.pop() {
            for event in TransitionEvent::ALL {
                for tolerate in [false, true] {
                    if let Ok(next) = next_state(state, event, tolerate) {
                        if reachable.insert(next) {
                            frontier.push(next);
                        }
                    }
                }
            }
        }
        assert_eq!(
            reachable.len(),
            TaskState::ALL.len(),
            "unreachable states: {reachable:?}"
        );

        for state in TaskState::ALL.iter().filter(|s| s.is_terminal()) {
            for event in TransitionEvent::ALL {
                for tolerate in [false, true] {
                    assert!(
                        next_state(*state, event, tolerate).is_err(),
                        "{state:?} must absorb {event:?}"
                    );
                }
            }
        }
    }
}
