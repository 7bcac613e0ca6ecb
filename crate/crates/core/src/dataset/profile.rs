use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{AttributeKind, TaskSpec};
use super::DatasetError;

/// Column holding the ground-truth label in source CSV files.
pub const LABEL_COLUMN: &str = "label";
/// Optional column carrying stable profile ids.
pub const ID_COLUMN: &str = "profile_id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Number(f64),
    Text(String),
}

impl AttributeValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttributeValue::Text(s) => Some(s),
            AttributeValue::Number(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttributeValue::Number(v) => Some(*v),
            AttributeValue::Text(_) => None,
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Number(v) => write!(f, "{v}"),
            AttributeValue::Text(s) => f.write_str(s),
        }
    }
}

/// A person record: raw attributes, group flag `z` (1 = privileged) and
/// ground-truth label `y` (1 = the task's selected class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub profile_id: String,
    pub attributes: BTreeMap<String, AttributeValue>,
    pub z: u8,
    pub y: u8,
}

impl Profile {
    /// Builds a profile, deriving `z` from the sensitive attribute.
    pub fn new(
        task: &TaskSpec,
        profile_id: impl Into<String>,
        attributes: BTreeMap<String, AttributeValue>,
        y: u8,
    ) -> Result<Self, DatasetError> {
        let profile_id = profile_id.into();
        validate_attributes(task, &attributes).map_err(|(attribute, reason)| DatasetError::InvalidProfile {
            profile_id: profile_id.clone(),
            attribute,
            reason,
        })?;
        if y > 1 {
            return Err(DatasetError::InvalidProfile {
                profile_id,
                attribute: LABEL_COLUMN.into(),
                reason: format!("label {y} is not 0 or 1"),
            });
        }
        let z = group_of(task, &attributes);
        Ok(Self {
            profile_id,
            attributes,
            z,
            y,
        })
    }

    /// Re-checks the profile against a task schema, including `z`.
    pub fn validate(&self, task: &TaskSpec) -> Result<(), DatasetError> {
        validate_attributes(task, &self.attributes).map_err(|(attribute, reason)| DatasetError::InvalidProfile {
            profile_id: self.profile_id.clone(),
            attribute,
            reason,
        })?;
        if self.z != group_of(task, &self.attributes) || self.y > 1 {
            return Err(DatasetError::InvalidProfile {
                profile_id: self.profile_id.clone(),
                attribute: task.sensitive_attribute.clone(),
                reason: "group flag or label inconsistent with attributes".into(),
            });
        }
        Ok(())
    }
}

fn group_of(task: &TaskSpec, attributes: &BTreeMap<String, AttributeValue>) -> u8 {
    let privileged = attributes
        .get(&task.sensitive_attribute)
        .and_then(AttributeValue::as_text)
        == Some(task.privileged_value.as_str());
    u8::from(privileged)
}

fn validate_attributes(task: &TaskSpec, attributes: &BTreeMap<String, AttributeValue>) -> Result<(), (String, String)> {
    for schema in &task.attributes {
        let value = attributes
            .get(&schema.name)
            .ok_or_else(|| (schema.name.clone(), "missing value".to_string()))?;
        match (&schema.kind, value) {
            (AttributeKind::Categorical { categories }, AttributeValue::Text(v)) => {
                if !categories.iter().any(|c| c == v) {
                    return Err((schema.name.clone(), format!("unknown category `{v}`")));
                }
            }
            (AttributeKind::Numeric { range: [min, max] }, AttributeValue::Number(v)) => {
                if !(v.is_finite() && *v >= *min && *v <= *max) {
                    return Err((
                        schema.name.clone(),
                        format!("value {v} outside declared range [{min}, {max}]"),
                    ));
                }
            }
            (AttributeKind::Categorical { .. }, AttributeValue::Number(v)) => {
                return Err((schema.name.clone(), format!("expected a category, got {v}")));
            }
            (AttributeKind::Numeric { .. }, AttributeValue::Text(v)) => {
                return Err((schema.name.clone(), format!("expected a number, got `{v}`")));
            }
        }
    }
    if let Some(extra) = attributes.keys().find(|k| task.attribute(k).is_none()) {
        return Err((extra.clone(), "attribute not in schema".into()));
    }
    Ok(())
}

/// Reads a source CSV for `task`.
///
/// The header must name every schema attribute plus a `label` column
/// (0/1 ground truth); a `profile_id` column is optional. Every invalid row
/// is reported with its 1-based line number.
pub fn load_csv(path: impl AsRef<Path>, task: &TaskSpec) -> Result<Vec<Profile>, DatasetError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, task)
}

pub fn read_csv<R: std::io::Read>(reader: R, task: &TaskSpec) -> Result<Vec<Profile>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut expected: BTreeSet<&str> = task.attribute_names().collect();
    expected.insert(LABEL_COLUMN);
    let mut seen = BTreeSet::new();
    for h in headers.iter() {
        if h != ID_COLUMN && !expected.contains(h) {
            return Err(DatasetError::Header(format!("unexpected column `{h}`")));
        }
        if !seen.insert(h) {
            return Err(DatasetError::Header(format!("column `{h}` appears twice")));
        }
    }
    if let Some(missing) = expected.iter().find(|c| !seen.contains(*c)) {
        return Err(DatasetError::Header(format!("missing column `{missing}`")));
    }
    let column = |name: &str| headers.iter().position(|h| h == name);
    let id_col = column(ID_COLUMN);
    let label_col = column(LABEL_COLUMN).expect("checked above");

    let mut profiles = Vec::new();
    let mut errors = Vec::new();
    for (index, record) in rdr.records().enumerate() {
        // line 1 is the header
        let line = index + 2;
        let record = record?;
        match parse_row(task, &headers, &record, id_col, label_col, line) {
            Ok(p) => profiles.push(p),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(DatasetError::InvalidRows(errors));
    }
    Ok(profiles)
}

fn parse_row(
    task: &TaskSpec,
    headers: &csv::StringRecord,
    record: &csv::StringRecord,
    id_col: Option<usize>,
    label_col: usize,
    line: usize,
) -> Result<Profile, super::RowError> {
    let row_err = |attribute: &str, reason: String| super::RowError {
        line,
        attribute: attribute.to_string(),
        reason,
    };
    let mut attributes = BTreeMap::new();
    for schema in &task.attributes {
        let idx = headers.iter().position(|h| h == schema.name).expect("header checked");
        let raw = record.get(idx).unwrap_or("").trim();
        if raw.is_empty() {
            return Err(row_err(&schema.name, "missing value".into()));
        }
        let value = match schema.kind {
            AttributeKind::Categorical { .. } => AttributeValue::Text(raw.to_string()),
            AttributeKind::Numeric { .. } => AttributeValue::Number(
                raw.parse::<f64>()
                    .map_err(|_| row_err(&schema.name, format!("`{raw}` is not a number")))?,
            ),
        };
        attributes.insert(schema.name.clone(), value);
    }
    let label = match record.get(label_col).map(str::trim) {
        Some("0") => 0,
        Some("1") => 1,
        other => {
            return Err(row_err(
                LABEL_COLUMN,
                format!("label `{}` is not 0 or 1", other.unwrap_or("")),
            ))
        }
    };
    let profile_id = match id_col.and_then(|c| record.get(c)).map(str::trim) {
        Some(id) if !id.is_empty() => id.to_string(),
        _ => format!("{}-{:05}", task.task_id, line - 1),
    };
    Profile::new(task, profile_id, attributes, label).map_err(|e| match e {
        DatasetError::InvalidProfile { attribute, reason, .. } => row_err(&attribute, reason),
        other => row_err("", other.to_string()),
    })
}

/// Writes profiles in the layout `load_csv` reads.
pub fn write_csv<W: std::io::Write>(writer: W, task: &TaskSpec, profiles: &[Profile]) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(task.attribute_names().map(str::to_string));
    header.push(LABEL_COLUMN.into());
    wtr.write_record(&header)?;
    for p in profiles {
        let mut row = vec![p.profile_id.clone()];
        for name in task.attribute_names() {
            row.push(p.attributes.get(name).map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(p.y.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
