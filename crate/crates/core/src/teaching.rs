//! Student/teacher estimation, teaching-sample selection and simulated
//! learners.
//!
//! The student model is a logistic regression fit to a participant's own
//! decisions. The teacher is a fairness-penalized fit to the same decisions.
//! Teaching samples are already-answered profiles relabeled with the
//! teacher's decision, chosen so that one gradient step of the student moves
//! it as close to the teacher as possible.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, EncodedProfile, Encoder, TaskSpec};
use crate::fairness::{
    fit_fair, quota_count, quota_decide, unfairness_score, Decision, DecisionSet, FairTrainConfig, FairnessError,
    UnfairnessReport,
};
use crate::linmodel::{fit, sgd_step, LabeledExample, LinearModel, ModelError, TrainConfig};

pub const DEFAULT_ETA: f64 = 0.1;
pub const SAMPLES_PER_PACKET: usize = 5;
pub const TOP_WEIGHTS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TeachingError {
    #[error("no responses to learn from")]
    EmptyResponses,
    #[error("profile `{0}` is not part of the pool")]
    UnknownProfile(String),
    #[error("learning rate must be positive, got {0}")]
    Eta(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
}

/// Training settings for one session's student and teacher models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub student: TrainConfig,
    pub teacher: FairTrainConfig,
    /// Assumed learning rate of the human in the teaching objective.
    pub eta: f64,
    pub samples: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            student: TrainConfig::default(),
            teacher: FairTrainConfig::default(),
            eta: DEFAULT_ETA,
            samples: SAMPLES_PER_PACKET,
        }
    }
}

/// A participant decision on one encoded profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub profile: EncodedProfile,
    pub decision: u8,
}

impl Answer {
    pub fn new(profile: EncodedProfile, decision: u8) -> Self {
        Self { profile, decision }
    }

    fn example(&self) -> LabeledExample {
        LabeledExample::new(self.profile.features.clone(), self.decision, self.profile.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentEstimate {
    pub model: LinearModel,
    pub n_responses: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEstimate {
    pub model: LinearModel,
    /// `|unfairness|` of the teacher's quota decisions on the whole pool.
    pub teacher_unfairness: f64,
    /// `|unfairness|` of the participant's own decisions.
    pub participant_unfairness: f64,
    /// The teacher is not fairer than the participant.
    pub insufficient: bool,
    pub degenerate: bool,
    /// Teacher quota decisions on the pool, keyed by profile id.
    pub decisions: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingSample {
    pub profile_id: String,
    pub student_decision: u8,
    pub teacher_decision: u8,
    pub objective_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub column: usize,
    pub attribute: String,
    pub category: Option<String>,
    pub weight: f64,
}

/// Everything a guidance screen shows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidancePacket {
    pub unfairness: UnfairnessReport,
    pub samples: Vec<TeachingSample>,
    pub student_top5: Vec<WeightEntry>,
    pub teacher_top5: Vec<WeightEntry>,
    /// Every column's weight in encoding order, for the full charts.
    pub student_weights: Vec<WeightEntry>,
    pub teacher_weights: Vec<WeightEntry>,
}

fn check_eta(eta: f64) -> Result<(), TeachingError> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(TeachingError::Eta(eta))
    }
}

/// Fits the participant's decisions. Ground-truth labels are ignored.
pub fn estimate_student(responses: &[Answer], config: &TrainConfig) -> Result<StudentEstimate, TeachingError> {
    if responses.is_empty() {
        return Err(TeachingError::EmptyResponses);
    }
    let examples: Vec<LabeledExample> = responses.iter().map(Answer::example).collect();
    let outcome = fit(&examples, config)?;
    Ok(StudentEstimate {
        model: outcome.model,
        n_responses: responses.len(),
        degenerate: outcome.degenerate,
    })
}

/// Unfairness of a participant's decisions.
pub fn response_unfairness(responses: &[Answer], favorable_label: u8) -> Result<UnfairnessReport, FairnessError> {
    let items = responses
        .iter()
        .map(|a| Decision {
            profile_id: a.profile.profile_id.clone(),
            z: a.profile.z,
            decision: a.decision,
        })
        .collect();
    unfairness_score(&DecisionSet::new(items, favorable_label)?)
}

/// Fairness-penalized fit of the participant's decisions, judged by its
/// quota decisions on the whole pool.
pub fn estimate_teacher(
    responses: &[Answer],
    pool: &[EncodedProfile],
    task: &TaskSpec,
    config: &FairTrainConfig,
) -> Result<TeacherEstimate, TeachingError> {
    if responses.is_empty() {
        return Err(TeachingError::EmptyResponses);
    }
    let participant = response_unfairness(responses, task.favorable_label)?;
    let examples: Vec<LabeledExample> = responses.iter().map(Answer::example).collect();
    let outcome = fit_fair(&examples, config)?;
    let set = quota_decide(&outcome.model, pool, task.positive_quota, task.favorable_label)?;
    let teacher_unfairness = unfairness_score(&set)?.score.abs();
    let participant_unfairness = participant.score.abs();
    Ok(TeacherEstimate {
        model: outcome.model,
        teacher_unfairness,
        participant_unfairness,
        insufficient: teacher_unfairness >= participant_unfairness,
        degenerate: outcome.degenerate,
        decisions: set.items().iter().map(|d| (d.profile_id.clone(), d.decision)).collect(),
    })
}

/// `‖(w_t, b_t) − η·∇L(x, y) − (w*, b*)‖²`, the squared distance to the
/// teacher after one gradient step on `candidate`.
pub fn teaching_objective(
    student: &LinearModel,
    teacher: &LinearModel,
    candidate: &LabeledExample,
    eta: f64,
) -> Result<f64, ModelError> {
    if teacher.width() != student.width() {
        return Err(ModelError::Dimension {
            expected: student.width(),
            got: teacher.width(),
        });
    }
    Ok(sgd_step(student, candidate, eta)?.distance_sq(teacher))
}

/// A profile the participant has answered, with both decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub profile_id: String,
    pub features: Vec<f64>,
    pub z: u8,
    pub student_decision: u8,
    pub teacher_decision: u8,
}

impl Candidate {
    fn teaching_example(&self) -> LabeledExample {
        LabeledExample::new(self.features.clone(), self.teacher_decision, self.z)
    }

    fn disagrees(&self) -> bool {
        self.student_decision != self.teacher_decision
    }
}

/// Greedy selection of up to `k` candidates.
///
/// Each step takes the candidate with the lowest [`teaching_objective`] and
/// applies its gradient step to a copy of the student before the next step.
/// A candidate whose two decisions differ is preferred whenever the best such
/// candidate brings the student closer to the teacher. Otherwise the step
/// takes the overall minimizer. Ties go to the lower profile id.
pub fn select_from(
    student: &LinearModel,
    teacher: &LinearModel,
    candidates: &[Candidate],
    eta: f64,
    k: usize,
) -> Result<Vec<TeachingSample>, TeachingError> {
    check_eta(eta)?;
    let mut remaining: Vec<&Candidate> = candidates.iter().collect();
    remaining.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));

    let mut current = student.clone();
    let mut picked = Vec::with_capacity(k.min(candidates.len()));
    while picked.len() < k && !remaining.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        let mut best_disagreeing: Option<(usize, f64)> = None;
        for (i, c) in remaining.iter().enumerate() {
            let score = teaching_objective(&current, teacher, &c.teaching_example(), eta)?;
            if best.is_none_or(|(_, s)| score < s) {
                best = Some((i, score));
            }
            if c.disagrees() && best_disagreeing.is_none_or(|(_, s)| score < s) {
                best_disagreeing = Some((i, score));
            }
        }
        let before = current.distance_sq(teacher);
        let (i, score) = match best_disagreeing {
            Some((i, s)) if s < before => (i, s),
            _ => best.expect("remaining is non-empty"),
        };
        let chosen = remaining.remove(i);
        current = sgd_step(&current, &chosen.teaching_example(), eta)?;
        picked.push(TeachingSample {
            profile_id: chosen.profile_id.clone(),
            student_decision: chosen.student_decision,
            teacher_decision: chosen.teacher_decision,
            objective_score: score,
        });
    }
    Ok(picked)
}

/// Builds candidates from answered profiles, labeled by the teacher's pool
/// decisions.
pub fn candidates(answered: &[Answer], teacher: &TeacherEstimate) -> Result<Vec<Candidate>, TeachingError> {
    answered
        .iter()
        .map(|a| {
            let id = &a.profile.profile_id;
            let teacher_decision = *teacher
                .decisions
                .get(id)
                .ok_or_else(|| TeachingError::UnknownProfile(id.clone()))?;
            Ok(Candidate {
                profile_id: id.clone(),
                features: a.profile.features.clone(),
                z: a.profile.z,
                student_decision: a.decision,
                teacher_decision,
            })
        })
        .collect()
}

/// Selects up to `k` teaching samples among the answered profiles.
pub fn select_samples(
    student: &StudentEstimate,
    teacher: &TeacherEstimate,
    answered: &[Answer],
    eta: f64,
    k: usize,
) -> Result<Vec<TeachingSample>, TeachingError> {
    if answered.is_empty() {
        return Err(TeachingError::EmptyResponses);
    }
    let pool = candidates(answered, teacher)?;
    select_from(&student.model, &teacher.model, &pool, eta, k)
}

/// Weight entries for every column, in column order.
pub fn weight_entries(weights: &[f64], columns: &[Column]) -> Vec<WeightEntry> {
    columns
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (c, &w))| WeightEntry {
            column: i,
            attribute: c.attribute.clone(),
            category: c.category.clone(),
            weight: w,
        })
        .collect()
}

/// The `n` largest-magnitude weights; equal magnitudes keep column order.
pub fn top_weights(weights: &[f64], columns: &[Column], n: usize) -> Vec<WeightEntry> {
    let mut entries = weight_entries(weights, columns);
    entries.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()).then(a.column.cmp(&b.column)));
    entries.truncate(n);
    entries
}

/// Assembles the guidance screen for the current models.
pub fn build_packet(
    student: &StudentEstimate,
    teacher: &TeacherEstimate,
    responses: &[Answer],
    encoder: &Encoder,
    eta: f64,
    k: usize,
) -> Result<GuidancePacket, TeachingError> {
    let unfairness = response_unfairness(responses, encoder.task().favorable_label)?;
    let samples = select_samples(student, teacher, responses, eta, k)?;
    let columns = encoder.columns();
    Ok(GuidancePacket {
        unfairness,
        samples,
        student_top5: top_weights(&student.model.weights, columns, TOP_WEIGHTS),
        teacher_top5: top_weights(&teacher.model.weights, columns, TOP_WEIGHTS),
        student_weights: weight_entries(&student.model.weights, columns),
        teacher_weights: weight_entries(&teacher.model.weights, columns),
    })
}

/// A scripted participant whose decision rule is a linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedStudent {
    pub model: LinearModel,
    pub eta: f64,
    /// Probability of taking each teaching sample to heart.
    pub compliance: f64,
    /// Scale of logistic noise added to each score before ranking a block.
    pub decision_noise: f64,
}

impl SimulatedStudent {
    pub fn new(model: LinearModel, eta: f64, compliance: f64) -> Self {
        Self {
            model,
            eta,
            compliance,
            decision_noise: 0.0,
        }
    }

    /// Quota decisions on a presented block: the `⌈quota·n⌉` profiles with
    /// the highest noisy probability are selected, ties to the lower id.
    pub fn answer_block<R: Rng>(
        &self,
        block: &[EncodedProfile],
        quota: f64,
        rng: &mut R,
    ) -> Result<Vec<u8>, ModelError> {
        let mut scored = Vec::with_capacity(block.len());
        for (i, p) in block.iter().enumerate() {
            let mut s = self.model.score(&p.features)?;
            if self.decision_noise > 0.0 {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                s += self.decision_noise * (u / (1.0 - u)).ln();
            }
            scored.push((crate::linmodel::sigmoid(s), i));
        }
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| block[a.1].profile_id.cmp(&block[b.1].profile_id))
        });
        let mut decisions = vec![0u8; block.len()];
        for &(_, i) in scored.iter().take(quota_count(quota, block.len())) {
            decisions[i] = 1;
        }
        Ok(decisions)
    }

    /// Applies one gradient step per teaching sample, each taken with
    /// probability `compliance`, in packet order.
    pub fn absorb_guidance<R: Rng>(
        &self,
        samples: &[TeachingSample],
        profiles: &[EncodedProfile],
        rng: &mut R,
    ) -> Result<SimulatedStudent, TeachingError> {
        let mut next = self.clone();
        for s in samples {
            let p = profiles
                .iter()
                .find(|p| p.profile_id == s.profile_id)
                .ok_or_else(|| TeachingError::UnknownProfile(s.profile_id.clone()))?;
            if rng.random::<f64>() < self.compliance {
                let example = LabeledExample::new(p.features.clone(), s.teacher_decision, p.z);
                next.model = sgd_step(&next.model, &example, self.eta)?;
            }
        }
        Ok(next)
    }
}
