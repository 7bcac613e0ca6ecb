use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// One attribute of a person profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical { categories: Vec<String> },
    Numeric { range: [f64; 2] },
}

impl AttributeSchema {
    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Categorical {
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    pub fn numeric(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Numeric { range: [min, max] },
        }
    }

    /// Number of feature columns this attribute occupies once encoded.
    pub fn encoded_width(&self) -> usize {
        match &self.kind {
            AttributeKind::Categorical { categories } => categories.len(),
            AttributeKind::Numeric { .. } => 1,
        }
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            AttributeKind::Categorical { categories } => Some(categories),
            AttributeKind::Numeric { .. } => None,
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        match &self.kind {
            AttributeKind::Categorical { categories } => {
                if categories.len() < 2 {
                    return Err(DatasetError::Schema(format!(
                        "categorical attribute `{}` needs at least two categories",
                        self.name
                    )));
                }
                let unique: BTreeSet<_> = categories.iter().collect();
                if unique.len() != categories.len() {
                    return Err(DatasetError::Schema(format!(
                        "categorical attribute `{}` repeats a category",
                        self.name
                    )));
                }
            }
            AttributeKind::Numeric { range: [min, max] } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(DatasetError::Schema(format!(
                        "numeric attribute `{}` has invalid range [{min}, {max}]",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A personal-assessment task: which attributes a profile carries, which one
/// is sensitive, and how participants are instructed to decide.
///
/// Decisions are encoded as `1` = selected (e.g. "high income", "high risk")
/// and `0` = not selected. `favorable_label` says which of the two counts as
/// the favorable outcome for fairness accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    pub sensitive_attribute: String,
    pub privileged_value: String,
    /// Target fraction of privileged-group profiles in a sampled pool.
    pub privileged_share: f64,
    pub positive_quota: f64,
    pub favorable_label: u8,
    pub pool_size: usize,
    /// Display labels indexed by decision value.
    pub decision_labels: [String; 2],
    /// Display labels indexed by group flag `z`.
    pub group_labels: [String; 2],
    pub attributes: Vec<AttributeSchema>,
}

impl TaskSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, DatasetError> {
        let task: TaskSpec = toml::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
        task.validate()?;
        Ok(task)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    /// The Income task (sensitive attribute: race, 20% quota).
    pub fn income() -> Self {
        Self::from_toml_str(include_str!("../../configs/income.toml")).expect("shipped income config is valid")
    }

    /// The Credit task (sensitive attribute: gender, 30% "high risk" quota).
    pub fn credit() -> Self {
        Self::from_toml_str(include_str!("../../configs/credit.toml")).expect("shipped credit config is valid")
    }

    /// Looks up one of the shipped tasks by id.
    pub fn builtin(task_id: &str) -> Option<Self> {
        match task_id {
            "income" => Some(Self::income()),
            "credit" => Some(Self::credit()),
            _ => None,
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSchema> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn is_favorable(&self, decision: u8) -> bool {
        decision == self.favorable_label
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut names = BTreeSet::new();
        for attr in &self.attributes {
            attr.validate()?;
            if !names.insert(attr.name.as_str()) {
                return Err(DatasetError::Schema(format!(
                    "attribute `{}` declared twice",
                    attr.name
                )));
            }
        }
        let sensitive = self.attribute(&self.sensitive_attribute).ok_or_else(|| {
            DatasetError::Schema(format!(
                "sensitive attribute `{}` is not declared",
                self.sensitive_attribute
            ))
        })?;
        match sensitive.categories() {
            Some(cats) if cats.contains(&self.privileged_value) => {}
            Some(_) => {
                return Err(DatasetError::Schema(format!(
                    "privileged value `{}` is not a category of `{}`",
                    self.privileged_value, self.sensitive_attribute
                )))
            }
            None => {
                return Err(DatasetError::Schema(format!(
                    "sensitive attribute `{}` must be categorical",
                    self.sensitive_attribute
                )))
            }
        }
        if !(self.positive_quota > 0.0 && self.positive_quota < 1.0) {
            return Err(DatasetError::Schema(format!(
                "positive_quota {} outside (0, 1)",
                self.positive_quota
            )));
        }
        if !(self.privileged_share > 0.0 && self.privileged_share < 1.0) {
            return Err(DatasetError::Schema(format!(
                "privileged_share {} outside (0, 1)",
                self.privileged_share
            )));
        }
        if self.favorable_label > 1 {
            return Err(DatasetError::Schema("favorable_label must be 0 or 1".into()));
        }
        if self.pool_size < super::pool::SESSION_PROFILES {
            return Err(DatasetError::Schema(format!(
                "pool_size {} is smaller than the {} distinct profiles a session needs",
                self.pool_size,
                super::pool::SESSION_PROFILES
            )));
        }
        Ok(())
    }
}
