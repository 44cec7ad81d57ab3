//! Benchmark fixtures: ready-made workflows and sites for the criterion
//! benches in `benches/`.

use std::collections::BTreeMap;

use prodsim_core::datamodel::TransformationSpec;
use prodsim_core::deft::{
    compile_request, Request, StepInput, TemplateRegistry, TemplateStep, Workflow, WorkflowTemplate,
};
use prodsim_core::gridsim::{FailureModel, Site};
use prodsim_core::jedi::RetryPolicy;

/// A flat one-step workflow over `events` input events.
pub fn flat_workflow(events: u64) -> Workflow {
    let mut registry = TemplateRegistry::new();
    registry
        .register(WorkflowTemplate {
            name: "flat".into(),
            steps: vec![TemplateStep {
                name: "crunch".into(),
                transform: TransformationSpec::simple("crunch", "RAW", &["ESD"], 1.0),
                splitter: "events".into(),
                input: StepInput::External {
                    name_param: "input".into(),
                    events_param: "total_events".into(),
                },
                extra_inputs: vec![],
            }],
            required_params: vec!["input".into(), "total_events".into()],
            retry_policy: RetryPolicy {
                max_attempts: 5,
                ..Default::default()
            },
        })
        .unwrap();
    let request = Request {
        id: "bench".into(),
        template: "flat".into(),
        params: BTreeMap::from([
            ("input".to_string(), "bench.stream.RAW".to_string()),
            ("total_events".to_string(), events.to_string()),
        ]),
        priority: 0,
    };
    compile_request(&request, &registry).unwrap()
}

/// A small heterogeneous grid with mild transient failures.
pub fn grid(p_transient: f64) -> Vec<Site> {
    let failure = FailureModel {
        p_transient,
        ..FailureModel::none()
    };
    vec![
        Site {
            id: "a".into(),
            cores: 16,
            speed_factor: 1.0,
            failure: failure.clone(),
            max_walltime: 86_400.0,
            min_job_events: 1,
            max_job_events: 100,
        },
        Site {
            id: "b".into(),
            cores: 16,
            speed_factor: 1.5,
            failure,
            max_walltime: 86_400.0,
            min_job_events: 1,
            max_job_events: 100,
        },
    ]
}
