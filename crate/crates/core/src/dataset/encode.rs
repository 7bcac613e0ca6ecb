use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::profile::{AttributeValue, Profile};
use super::schema::{AttributeKind, TaskSpec};
use super::DatasetError;

/// A profile as a numeric feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedProfile {
    pub profile_id: String,
    pub features: Vec<f64>,
    pub z: u8,
    pub y: u8,
}

/// One feature column: a numeric attribute, or one category of a
/// categorical attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub attribute: String,
    pub category: Option<String>,
}

impl Column {
    /// `attribute` for numeric columns, `attribute=category` for one-hot ones.
    pub fn label(&self) -> String {
        match &self.category {
            Some(c) => format!("{}={}", self.attribute, c),
            None => self.attribute.clone(),
        }
    }
}

/// Fixed profile-to-vector mapping for one task.
///
/// Categorical attributes become one-hot blocks, numeric attributes are
/// min-max scaled into `[0, 1]` with the declared range. Column order follows
/// the schema declaration order. The sensitive attribute is encoded like any
/// other attribute.
#[derive(Debug, Clone)]
pub struct Encoder {
    task: TaskSpec,
    columns: Vec<Column>,
    /// First column of each attribute, in schema order.
    offsets: Vec<usize>,
}

impl Encoder {
    pub fn new(task: &TaskSpec) -> Self {
        let mut columns = Vec::new();
        let mut offsets = Vec::with_capacity(task.attributes.len());
        for attr in &task.attributes {
            offsets.push(columns.len());
            match &attr.kind {
                AttributeKind::Categorical { categories } => columns.extend(categories.iter().map(|c| Column {
                    attribute: attr.name.clone(),
                    category: Some(c.clone()),
                })),
                AttributeKind::Numeric { .. } => columns.push(Column {
                    attribute: attr.name.clone(),
                    category: None,
                }),
            }
        }
        Self {
            task: task.clone(),
            columns,
            offsets,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Column index of `attribute=category`.
    pub fn column_index(&self, attribute: &str, category: Option<&str>) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.attribute == attribute && c.category.as_deref() == category)
    }

    /// Column of the privileged value of the sensitive attribute.
    pub fn privileged_column(&self) -> usize {
        self.column_index(&self.task.sensitive_attribute, Some(&self.task.privileged_value))
            .expect("validated task declares the privileged category")
    }

    /// Hash of the ordered column labels; guards serialized models.
    pub fn schema_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.task.task_id.as_bytes());
        for c in &self.columns {
            hasher.update([0u8]);
            hasher.update(c.label().as_bytes());
        }
        hasher.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self, profile: &Profile) -> Result<EncodedProfile, DatasetError> {
        profile.validate(&self.task)?;
        let mut features = vec![0.0; self.width()];
        for (attr, &offset) in self.task.attributes.iter().zip(&self.offsets) {
            let value = &profile.attributes[&attr.name];
            match (&attr.kind, value) {
                (AttributeKind::Categorical { categories }, AttributeValue::Text(v)) => {
                    let k = categories.iter().position(|c| c == v).expect("validated");
                    features[offset + k] = 1.0;
                }
                (AttributeKind::Numeric { range: [min, max] }, AttributeValue::Number(v)) => {
                    features[offset] = (v - min) / (max - min);
                }
                _ => unreachable!("validated profile"),
            }
        }
        Ok(EncodedProfile {
            profile_id: profile.profile_id.clone(),
            features,
            z: profile.z,
            y: profile.y,
        })
    }

    pub fn encode_all(&self, profiles: &[Profile]) -> Result<Vec<EncodedProfile>, DatasetError> {
        profiles.iter().map(|p| self.encode(p)).collect()
    }

    /// Maps a feature vector back to raw attribute values. One-hot blocks
    /// decode to their largest entry.
    pub fn decode(&self, features: &[f64]) -> Result<BTreeMap<String, AttributeValue>, DatasetError> {
        if features.len() != self.width() {
            return Err(DatasetError::Width {
                expected: self.width(),
                got: features.len(),
            });
        }
        let mut out = BTreeMap::new();
        for (attr, &offset) in self.task.attributes.iter().zip(&self.offsets) {
            let value = match &attr.kind {
                AttributeKind::Categorical { categories } => {
                    let block = &features[offset..offset + categories.len()];
                    let mut best = 0;
                    for (k, v) in block.iter().enumerate() {
                        if *v > block[best] {
                            best = k;
                        }
                    }
                    AttributeValue::Text(categories[best].clone())
                }
                AttributeKind::Numeric { range: [min, max] } => {
                    AttributeValue::Number(min + features[offset] * (max - min))
                }
            };
            out.insert(attr.name.clone(), value);
        }
        Ok(out)
    }

    /// Sums `|weight|` over each attribute's columns, in schema order.
    pub fn attribute_importance(&self, weights: &[f64]) -> Vec<(String, f64)> {
        let mut totals: Vec<(String, f64)> = self.task.attributes.iter().map(|a| (a.name.clone(), 0.0)).collect();
        for (col, w) in self.columns.iter().zip(weights) {
            let slot = self
                .task
                .attributes
                .iter()
                .position(|a| a.name == col.attribute)
                .expect("column belongs to schema");
            totals[slot].1 += w.abs();
        }
        totals
    }
}
