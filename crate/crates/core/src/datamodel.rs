//! The type system for data flowing through workflows.
//!
//! Datasets are typed collections of events; the production system deals
//! with datasets, not individual files. Event indices are 0-based global
//! offsets within a dataset.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Closed set of base data types handled by the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataTypeBase {
    /// Events selected after the high-level trigger.
    Raw,
    /// Event summary data reconstructed from RAW.
    Esd,
    /// Analysis object data: summary of the reconstructed event.
    Aod,
    /// Derived physics data specific to one or a few analysis groups.
    Dpd,
    /// Raw data object: the RAW representation used in simulation.
    Rdo,
    /// Derived event summary data.
    Desd,
    /// Derived analysis object data.
    Daod,
    /// Summary n-tuples.
    Ntup,
    /// Summary histograms.
    Hist,
    /// Generated events (generator output stage).
    Evnt,
    /// Simulated energy depositions (simulation output stage).
    Hits,
}

impl DataTypeBase {
    pub const ALL: [DataTypeBase; 11] = [
        DataTypeBase::Raw,
        DataTypeBase::Esd,
        DataTypeBase::Aod,
        DataTypeBase::Dpd,
        DataTypeBase::Rdo,
        DataTypeBase::Desd,
        DataTypeBase::Daod,
        DataTypeBase::Ntup,
        DataTypeBase::Hist,
        DataTypeBase::Evnt,
        DataTypeBase::Hits,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DataTypeBase::Raw => "RAW",
            DataTypeBase::Esd => "ESD",
            DataTypeBase::Aod => "AOD",
            DataTypeBase::Dpd => "DPD",
            DataTypeBase::Rdo => "RDO",
            DataTypeBase::Desd => "DESD",
            DataTypeBase::Daod => "DAOD",
            DataTypeBase::Ntup => "NTUP",
            DataTypeBase::Hist => "HIST",
            DataTypeBase::Evnt => "EVNT",
            DataTypeBase::Hits => "HITS",
        }
    }

    fn from_token(token: &str) -> Option<DataTypeBase> {
        DataTypeBase::ALL
            .iter()
            .copied()
            .find(|b| b.as_str() == token)
    }
}

/// A data type: closed base plus an optional free-form qualifier
/// (e.g. the FTK variants `NTUP_FTK`, `RDO_FTK`, `DESD_FTK`).
///
/// Two data types are equal iff base and qualifier both match; the
/// qualifier is significant in edge type checks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DataType {
    pub base: DataTypeBase,
    pub qualifier: Option<String>,
}

impl DataType {
    pub fn plain(base: DataTypeBase) -> DataType {
        DataType {
            base,
            qualifier: None,
        }
    }

    pub fn qualified(base: DataTypeBase, qualifier: &str) -> Result<DataType, DataTypeError> {
        if !is_valid_qualifier(qualifier) {
            return Err(DataTypeError::MalformedQualifier {
                token: qualifier.to_string(),
            });
        }
        Ok(DataType {
            base,
            qualifier: Some(qualifier.to_string()),
        })
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{}_{}", self.base.as_str(), q),
            None => f.write_str(self.base.as_str()),
        }
    }
}

// Canonical text rendering (BASE or BASE_QUALIFIER) is the wire format.
impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<DataType, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_data_type(&s).map_err(D::Error::custom)
    }
}

fn is_valid_qualifier(q: &str) -> bool {
    !q.is_empty()
        && q.chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataTypeError {
    #[error("unknown base data type `{token}`")]
    UnknownBase { token: String },
    #[error("malformed qualifier `{token}`: expected non-empty [A-Z0-9_]")]
    MalformedQualifier { token: String },
    #[error("empty data type name")]
    Empty,
}

/// Parses a canonical short name, splitting on the first underscore into
/// base and qualifier: `"NTUP_FTK"` has base `NTUP` and qualifier `FTK`.
pub fn parse_data_type(text: &str) -> Result<DataType, DataTypeError> {
    if text.is_empty() {
        return Err(DataTypeError::Empty);
    }
    let (base_token, qualifier) = match text.split_once('_') {
        Some((b, q)) => (b, Some(q)),
        None => (text, None),
    };
    let base = DataTypeBase::from_token(base_token).ok_or_else(|| DataTypeError::UnknownBase {
        token: base_token.to_string(),
    })?;
    match qualifier {
        None => Ok(DataType::plain(base)),
        Some(q) => DataType::qualified(base, q),
    }
}

/// A contiguous range of event indices: `[first, first + count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventRange {
    pub first: u64,
    pub count: u64,
}

impl EventRange {
    /// `count` must be at least 1.
    pub fn new(first: u64, count: u64) -> EventRange {
        assert!(count >= 1, "event range must be non-empty");
        EventRange { first, count }
    }

    /// One past the last event index.
    pub fn end(&self) -> u64 {
        self.first + self.count
    }

    pub fn contains(&self, index: u64) -> bool {
        index >= self.first && index < self.end()
    }

    pub fn intersects(&self, other: &EventRange) -> bool {
        self.first < other.end() && other.first < self.end()
    }

    /// Splits into two halves, the first taking the ceiling share.
    /// Requires `count >= 2`.
    pub fn halves(&self) -> (EventRange, EventRange) {
        assert!(self.count >= 2, "cannot halve a single-event range");
        let head = self.count.div_ceil(2);
        (
            EventRange::new(self.first, head),
            EventRange::new(self.first + head, self.count - head),
        )
    }
}

impl fmt::Display for EventRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.first, self.end())
    }
}

/// Splits `[0, total)` into ranges of `chunk` events; the last range takes
/// the remainder. `total = 0` yields an empty list.
pub fn partition_events(total: u64, chunk: u64) -> Vec<EventRange> {
    assert!(chunk >= 1, "chunk size must be at least 1");
    let mut ranges = Vec::with_capacity(total.div_ceil(chunk) as usize);
    let mut first = 0;
    while first < total {
        let count = chunk.min(total - first);
        ranges.push(EventRange::new(first, count));
        first += count;
    }
    ranges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetStatus {
    Declared,
    Partial,
    Complete,
    Failed,
}

/// A named, typed collection of events; the unit of dependency between
/// tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub dtype: DataType,
    pub total_events: u64,
    pub ranges: Vec<EventRange>,
    pub status: DatasetStatus,
}

impl Dataset {
    /// A dataset announced but not yet filled.
    pub fn declared(name: &str, dtype: DataType) -> Dataset {
        Dataset {
            name: name.to_string(),
            dtype,
            total_events: 0,
            ranges: Vec::new(),
            status: DatasetStatus::Declared,
        }
    }

    /// A fully-present dataset covering `[0, total_events)`.
    pub fn complete(name: &str, dtype: DataType, total_events: u64) -> Dataset {
        assert!(
            total_events >= 1,
            "a complete dataset holds at least one event"
        );
        Dataset {
            name: name.to_string(),
            dtype,
            total_events,
            ranges: vec![EventRange::new(0, total_events)],
            status: DatasetStatus::Complete,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.total_events == 0
            && !matches!(self.status, DatasetStatus::Declared | DatasetStatus::Failed)
        {
            return Err(DatasetError::EmptyButActive {
                name: self.name.clone(),
            });
        }
        let mut next = 0;
        for r in &self.ranges {
            if r.first < next {
                return Err(DatasetError::RangesOverlap {
                    name: self.name.clone(),
                });
            }
            next = r.end();
        }
        if next > self.total_events {
            return Err(DatasetError::RangesOverflow {
                name: self.name.clone(),
            });
        }
        if self.status == DatasetStatus::Complete {
            let covered: u64 = self.ranges.iter().map(|r| r.count).sum();
            if covered != self.total_events || self.ranges.first().map(|r| r.first) != Some(0) {
                return Err(DatasetError::IncompleteCoverage {
                    name: self.name.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("dataset `{name}`: zero events allowed only while declared or failed")]
    EmptyButActive { name: String },
    #[error("dataset `{name}`: ranges overlap or are unsorted")]
    RangesOverlap { name: String },
    #[error("dataset `{name}`: ranges extend past total_events")]
    RangesOverflow { name: String },
    #[error("dataset `{name}`: complete but ranges do not cover [0, total_events)")]
    IncompleteCoverage { name: String },
}

/// What a transformation does with its input events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Transform,
    Merge,
    /// Keeps a fraction of the input events; selectivity in (0, 1].
    Filter {
        selectivity: f64,
    },
}

/// Signature of a data-processing application: consumes datasets of one
/// type and produces datasets of other types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationSpec {
    pub name: String,
    pub input_dtype: DataType,
    pub output_dtypes: Vec<DataType>,
    /// Seconds of reference-speed CPU per input event.
    pub cpu_per_event: f64,
    pub kind: TransformKind,
}

impl TransformationSpec {
    pub fn new(
        name: &str,
        input_dtype: DataType,
        output_dtypes: Vec<DataType>,
        cpu_per_event: f64,
        kind: TransformKind,
    ) -> Result<TransformationSpec, TransformError> {
        let spec = TransformationSpec {
            name: name.to_string(),
            input_dtype,
            output_dtypes,
            cpu_per_event,
            kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Shorthand for a plain transform; panics on invalid short names or
    /// parameters, so only feed it literals.
    pub fn simple(name: &str, input: &str, outputs: &[&str], cpu_per_event: f64) -> Self {
        Self::from_names(
            name,
            input,
            outputs,
            cpu_per_event,
            TransformKind::Transform,
        )
    }

    /// Shorthand for a type-preserving merge.
    pub fn merge_of(name: &str, dtype: &str, cpu_per_event: f64) -> Self {
        Self::from_names(name, dtype, &[dtype], cpu_per_event, TransformKind::Merge)
    }

    /// Shorthand for a filtering transform keeping `selectivity` of the
    /// input events.
    pub fn filter(
        name: &str,
        input: &str,
        outputs: &[&str],
        cpu_per_event: f64,
        selectivity: f64,
    ) -> Self {
        Self::from_names(
            name,
            input,
            outputs,
            cpu_per_event,
            TransformKind::Filter { selectivity },
        )
    }

    fn from_names(
        name: &str,
        input: &str,
        outputs: &[&str],
        cpu_per_event: f64,
        kind: TransformKind,
    ) -> Self {
        let input_dtype = parse_data_type(input).expect("valid input data type");
        let output_dtypes = outputs
            .iter()
            .map(|o| parse_data_type(o).expect("valid output data type"))
            .collect();
        Self::new(name, input_dtype, output_dtypes, cpu_per_event, kind)
            .expect("valid transformation spec")
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if self.output_dtypes.is_empty() {
            return Err(TransformError::NoOutputs {
                name: self.name.clone(),
            });
        }
        if self.cpu_per_event.is_nan() || self.cpu_per_event <= 0.0 {
            return Err(TransformError::NonPositiveCpu {
                name: self.name.clone(),
            });
        }
        if let TransformKind::Filter { selectivity } = self.kind {
            if !(selectivity > 0.0 && selectivity <= 1.0) {
                return Err(TransformError::BadSelectivity {
                    name: self.name.clone(),
                    selectivity,
                });
            }
        }
        if self.kind == TransformKind::Merge && !self.output_dtypes.contains(&self.input_dtype) {
            return Err(TransformError::MergeChangesType {
                name: self.name.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("transformation `{name}` declares no outputs")]
    NoOutputs { name: String },
    #[error("transformation `{name}` must have positive cpu_per_event")]
    NonPositiveCpu { name: String },
    #[error("transformation `{name}`: filter selectivity {selectivity} outside (0, 1]")]
    BadSelectivity { name: String, selectivity: f64 },
    #[error("merge transformation `{name}` must preserve its input data type")]
    MergeChangesType { name: String },
}

/// Diagnostic produced when a dataset of one type feeds a consumer
/// expecting another.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type mismatch: `{consumer}` expects {expected} but receives {found}")]
pub struct TypeMismatch {
    pub consumer: String,
    pub expected: String,
    pub found: String,
}

/// A dataset may feed a transformation only if types match exactly
/// (qualifier included).
pub fn check_edge(
    producer_output: &DataType,
    consumer: &TransformationSpec,
) -> Result<(), TypeMismatch> {
    if *producer_output == consumer.input_dtype {
        Ok(())
    } else {
        Err(TypeMismatch {
            consumer: consumer.name.clone(),
            expected: consumer.input_dtype.to_string(),
            found: producer_output.to_string(),
        })
    }
}
