//! Demographic-parity accounting and fairness-constrained training.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::EncodedProfile;
use crate::linmodel::{
    check_examples, data_objective, degenerate_outcome, descend, dot, sigmoid, single_label, Evaluation, FitOutcome,
    LabeledExample, LinearModel, ModelError, TrainConfig,
};

pub const DEFAULT_PENALTY_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FairnessError {
    #[error("no decisions for the {0} group; unfairness is undefined")]
    EmptyGroup(Group),
    #[error("examples contain only the {0} group")]
    SingleGroup(Group),
    #[error("duplicate profile id `{0}` in decision set")]
    DuplicateId(String),
    #[error("invalid fairness config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Privileged,
    Unprivileged,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::Privileged => "privileged",
            Group::Unprivileged => "unprivileged",
        })
    }
}

/// Which decision value was counted as the favorable outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSemantics {
    /// Decision 1 (selected) is favorable, e.g. "high income".
    SelectedIsFavorable,
    /// Decision 0 is favorable; selecting means e.g. "high risk".
    SelectedIsUnfavorable,
}

impl DecisionSemantics {
    pub fn from_favorable_label(label: u8) -> Self {
        if label == 1 {
            Self::SelectedIsFavorable
        } else {
            Self::SelectedIsUnfavorable
        }
    }

    pub fn favorable_label(self) -> u8 {
        match self {
            Self::SelectedIsFavorable => 1,
            Self::SelectedIsUnfavorable => 0,
        }
    }
}

/// Per-group favorable rates and their gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfairnessReport {
    pub rate_privileged: f64,
    pub rate_unprivileged: f64,
    /// `rate_privileged − rate_unprivileged`.
    pub score: f64,
    pub n_privileged: usize,
    pub n_unprivileged: usize,
    pub decision_semantics: DecisionSemantics,
}

impl UnfairnessReport {
    /// Share of each group that received decision 1, `(privileged,
    /// unprivileged)`, i.e. what a participant "selected".
    pub fn selection_rates(&self) -> (f64, f64) {
        match self.decision_semantics {
            DecisionSemantics::SelectedIsFavorable => (self.rate_privileged, self.rate_unprivileged),
            DecisionSemantics::SelectedIsUnfavorable => (1.0 - self.rate_privileged, 1.0 - self.rate_unprivileged),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub profile_id: String,
    pub z: u8,
    pub decision: u8,
}

/// Hard decisions over a batch of profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSet {
    items: Vec<Decision>,
    semantics: DecisionSemantics,
}

impl DecisionSet {
    pub fn new(items: Vec<Decision>, favorable_label: u8) -> Result<Self, FairnessError> {
        let mut seen = BTreeSet::new();
        for d in &items {
            if !seen.insert(d.profile_id.as_str()) {
                return Err(FairnessError::DuplicateId(d.profile_id.clone()));
            }
        }
        Ok(Self {
            items,
            semantics: DecisionSemantics::from_favorable_label(favorable_label),
        })
    }

    pub fn items(&self) -> &[Decision] {
        &self.items
    }

    pub fn semantics(&self) -> DecisionSemantics {
        self.semantics
    }

    pub fn decision_of(&self, profile_id: &str) -> Option<u8> {
        self.items
            .iter()
            .find(|d| d.profile_id == profile_id)
            .map(|d| d.decision)
    }
}

/// Demographic-parity gap `Pr[favorable | z=1] − Pr[favorable | z=0]`
/// over hard decisions.
pub fn unfairness_score(decisions: &DecisionSet) -> Result<UnfairnessReport, FairnessError> {
    let favorable = decisions.semantics.favorable_label();
    let (mut n1, mut f1, mut n0, mut f0) = (0usize, 0usize, 0usize, 0usize);
    for d in &decisions.items {
        let fav = usize::from(d.decision == favorable);
        if d.z == 1 {
            n1 += 1;
            f1 += fav;
        } else {
            n0 += 1;
            f0 += fav;
        }
    }
    if n1 == 0 {
        return Err(FairnessError::EmptyGroup(Group::Privileged));
    }
    if n0 == 0 {
        return Err(FairnessError::EmptyGroup(Group::Unprivileged));
    }
    let rate_privileged = f1 as f64 / n1 as f64;
    let rate_unprivileged = f0 as f64 / n0 as f64;
    Ok(UnfairnessReport {
        rate_privileged,
        rate_unprivileged,
        score: rate_privileged - rate_unprivileged,
        n_privileged: n1,
        n_unprivileged: n0,
        decision_semantics: decisions.semantics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// `(mean σ over z=1 − mean σ over z=0)²`.
    #[default]
    SquaredGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairTrainConfig {
    pub base: TrainConfig,
    pub penalty_weight: f64,
    #[serde(default)]
    pub penalty_form: PenaltyForm,
}

impl Default for FairTrainConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
            penalty_form: PenaltyForm::SquaredGap,
        }
    }
}

impl FairTrainConfig {
    pub fn validate(&self) -> Result<(), FairnessError> {
        self.base.validate()?;
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(FairnessError::Config(format!(
                "penalty_weight {} must be non-negative",
                self.penalty_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
}

fn check_groups(examples: &[LabeledExample]) -> Result<(), FairnessError> {
    let has = |z: u8| examples.iter().any(|e| e.z == z);
    match (has(1), has(0)) {
        (true, true) => Ok(()),
        (true, false) => Err(FairnessError::SingleGroup(Group::Privileged)),
        _ => Err(FairnessError::SingleGroup(Group::Unprivileged)),
    }
}

/// Squared gap between the groups' mean predicted probabilities, with its
/// exact gradient.
pub fn parity_penalty(model: &LinearModel, examples: &[LabeledExample]) -> Result<Penalty, FairnessError> {
    let width = check_examples(examples)?;
    if width != model.width() {
        return Err(ModelError::Dimension {
            expected: model.width(),
            got: width,
        }
        .into());
    }
    check_groups(examples)?;
    Ok(penalty_unchecked(model, examples))
}

fn penalty_unchecked(model: &LinearModel, examples: &[LabeledExample]) -> Penalty {
    let width = model.width();
    // per group: count, Σσ, Σσ(1−σ)x, Σσ(1−σ)
    let mut n = [0usize; 2];
    let mut mean = [0.0f64; 2];
    let mut dw = [vec![0.0; width], vec![0.0; width]];
    let mut db = [0.0f64; 2];
    for ex in examples {
        let g = usize::from(ex.z == 1);
        let p = sigmoid(dot(&model.weights, &ex.features) + model.bias);
        let s = p * (1.0 - p);
        n[g] += 1;
        mean[g] += p;
        for (acc, x) in dw[g].iter_mut().zip(&ex.features) {
            *acc += s * x;
        }
        db[g] += s;
    }
    let (n0, n1) = (n[0] as f64, n[1] as f64);
    let gap = mean[1] / n1 - mean[0] / n0;
    let grad_w = dw[1]
        .iter()
        .zip(&dw[0])
        .map(|(a, b)| 2.0 * gap * (a / n1 - b / n0))
        .collect();
    Penalty {
        value: gap * gap,
        grad_w,
        grad_b: 2.0 * gap * (db[1] / n1 - db[0] / n0),
    }
}

/// Gradient descent on mean BCE + `l2·‖w‖²` + `penalty_weight ·
/// parity_penalty`. With a zero penalty weight this is exactly
/// [`crate::linmodel::fit`].
pub fn fit_fair(examples: &[LabeledExample], config: &FairTrainConfig) -> Result<FitOutcome, FairnessError> {
    config.validate()?;
    let width = check_examples(examples)?;
    check_groups(examples)?;
    if let Some(label) = single_label(examples) {
        return Ok(degenerate_outcome(examples, width, label, &config.base));
    }
    if config.penalty_weight == 0.0 {
        return Ok(crate::linmodel::fit(examples, &config.base)?);
    }
    let lambda = config.penalty_weight;
    Ok(descend(width, &config.base, |m| {
        let data = data_objective(m, examples, config.base.l2);
        let pen = penalty_unchecked(m, examples);
        Evaluation {
            value: data.value + lambda * pen.value,
            grad_w: data
                .grad_w
                .iter()
                .zip(&pen.grad_w)
                .map(|(d, p)| d + lambda * p)
                .collect(),
            grad_b: data.grad_b + lambda * pen.grad_b,
        }
    }))
}

/// Number of selections a quota implies for `n` items: `⌈quota·n⌉`.
pub fn quota_count(quota: f64, n: usize) -> usize {
    // absorbs representation error such as 0.3 * 100 = 30.000000000000004
    ((quota * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Selects the `⌈quota·n⌉` profiles with the highest predicted probability
/// (decision 1); ties go to the lower profile id.
pub fn quota_decide(
    model: &LinearModel,
    pool: &[EncodedProfile],
    quota: f64,
    favorable_label: u8,
) -> Result<DecisionSet, FairnessError> {
    let mut scored = Vec::with_capacity(pool.len());
    for (i, p) in pool.iter().enumerate() {
        scored.push((model.predict_prob(&p.features)?, i));
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| pool[a.1].profile_id.cmp(&pool[b.1].profile_id))
    });
    let k = quota_count(quota, pool.len());
    let mut decisions = vec![0u8; pool.len()];
    for &(_, i) in scored.iter().take(k) {
        decisions[i] = 1;
    }
    let items = pool
        .iter()
        .zip(decisions)
        .map(|(p, decision)| Decision {
            profile_id: p.profile_id.clone(),
            z: p.z,
            decision,
        })
        .collect();
    DecisionSet::new(items, favorable_label)
}
