//! Desk-scale production system for big-data workflow processing.
//!
//! The crate is organised as the layers of the production stack:
//!
//! - [`datamodel`] — the type system for data flowing through workflows:
//!   data types, datasets as event collections, transformation signatures.
//! - [`deft`] — the workflow abstraction layer: compiles task requests
//!   against templates into task DAGs linked by datasets and drives the
//!   task state machine.
//! - [`jedi`] — dynamic job definition: pluggable splitters size jobs to
//!   site capabilities at dispatch time, scout-gated bulk submission, and
//!   redefinition of failed jobs.
//! - [`gridsim`] — deterministic discrete-event simulation of a
//!   heterogeneous grid with transient, permanent and silent-corruption
//!   failure draws.
//! - [`accounting`] — derives retry CPU overhead, event-loss fractions and
//!   campaign reports from run logs.
//! - [`protocol`] — the JSON messages exchanged between the workflow layer
//!   and the job layer.

pub mod accounting;
pub mod datamodel;
pub mod deft;
pub mod gridsim;
pub mod jedi;
pub mod protocol;

pub use datamodel::{DataType, DataTypeBase, Dataset, EventRange, TransformationSpec};
pub use deft::{Request, Task, TaskState, Workflow, WorkflowTemplate};
pub use gridsim::{FailureModel, RunLog, Site};
pub use jedi::{JobDefinition, RetryPolicy, ScoutConfig, SiteSnapshot, SubRegionSplitSpec};
