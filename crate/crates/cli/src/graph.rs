//! Graphviz rendering of a compiled workflow: tasks as boxes, datasets as
//! ellipses, edges following the data.

use std::fmt::Write as _;

use prodsim_core::deft::Workflow;

pub fn workflow_dot(wf: &Workflow) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", wf.id);
    let _ = writeln!(out, "  rankdir=LR;");
    for (name, ds) in &wf.datasets {
        let _ = writeln!(
            out,
            "  \"ds:{name}\" [shape=ellipse, label=\"{name}\\n{} ({})\"];",
            ds.dtype,
            ds.status_label()
        );
    }
    for task in &wf.tasks {
        let _ = writeln!(
            out,
            "  \"task:{}\" [shape=box, label=\"{}\\n{} [{}]\"];",
            task.id, task.id, task.transformation.name, task.splitter
        );
        for input in std::iter::once(&task.input).chain(&task.extra_inputs) {
            let _ = writeln!(out, "  \"ds:{input}\" -> \"task:{}\";", task.id);
        }
        for output in &task.outputs {
            let _ = writeln!(out, "  \"task:{}\" -> \"ds:{output}\";", task.id);
        }
    }
    out.push_str("}\n");
    out
}

trait StatusLabel {
    fn status_label(&self) -> &'static str;
}

impl StatusLabel for prodsim_core::datamodel::Dataset {
    fn status_label(&self) -> &'static str {
        use prodsim_core::datamodel::DatasetStatus::*;
        match self.status {
            Declared => "declared",
            Partial => "partial",
            Complete => "complete",
            Failed => "failed",
        }
    }
}
