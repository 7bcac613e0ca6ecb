//! Per-participant experiment protocol as an event-sourced state machine.
//!
//! Commands are validated against the current state and turned into events;
//! applying the events in order is the only way state changes, so replaying
//! a session's log reproduces it exactly.
//!
//! Phase order: pre-test (100), screening, pre-questionnaire, check test
//! (guidance condition only), five cycles of treatment and mini-test (20),
//! post-test (the pre-test profiles again), post-questionnaire.

pub mod forms;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeValue, EncodedProfile, Encoder, Profile, ProfilePool, CYCLES};
use crate::fairness::{FairnessError, Group, UnfairnessReport};
use crate::teaching::{
    build_packet, estimate_student, estimate_teacher, response_unfairness, Answer, GuidanceConfig, GuidancePacket,
    StudentEstimate, TeacherEstimate, TeachingError,
};

use forms::{AnswerValue, CheckQuestion, QuestionnaireForm};

/// Minimum pre-test `|unfairness|` to take part.
pub const SCREENING_THRESHOLD: f64 = 0.03;
/// Absorbs rounding in rate differences such as 0.58 − 0.55.
pub const SCREENING_EPSILON: f64 = 1e-9;
pub const MAX_KEY_ATTRIBUTES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    BiasFeedback,
    FairMachineGuidance,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::BiasFeedback => "bias_feedback",
            Condition::FairMachineGuidance => "fair_machine_guidance",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bias_feedback" | "feedback" | "bf" => Ok(Condition::BiasFeedback),
            "fair_machine_guidance" | "guidance" | "fmg" => Ok(Condition::FairMachineGuidance),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ExclusionReason {
    BelowThreshold {
        unfairness: f64,
    },
    TeacherInsufficient {
        teacher_unfairness: f64,
        participant_unfairness: f64,
    },
    EmptyGroup {
        group: Group,
    },
    TrainingFailed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    PreTest,
    Screening,
    Questionnaire { stage: Stage },
    CheckTest,
    Treatment { cycle: u8 },
    MiniTest { cycle: u8 },
    PostTest,
    Done,
    Excluded { exclusion: ExclusionReason },
}

impl Phase {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Phase::Done | Phase::Excluded { .. })
    }

    /// Whether the protocol allows moving from `self` to `next`.
    pub fn allows(&self, next: &Phase, condition: Condition) -> bool {
        use Phase::*;
        let last = CYCLES as u8;
        match (self, next) {
            (_, Excluded { .. }) => !self.is_terminal(),
            (PreTest, Screening) => true,
            (Screening, Questionnaire { stage: Stage::Pre }) => true,
            (Questionnaire { stage: Stage::Pre }, CheckTest) => condition == Condition::FairMachineGuidance,
            (Questionnaire { stage: Stage::Pre }, Treatment { cycle: 1 }) => condition == Condition::BiasFeedback,
            (CheckTest, Treatment { cycle: 1 }) => true,
            (Treatment { cycle: a }, MiniTest { cycle: b }) => a == b,
            (MiniTest { cycle: a }, Treatment { cycle: b }) => *a < last && *b == a + 1,
            (MiniTest { cycle }, PostTest) => *cycle == last,
            (PostTest, Questionnaire { stage: Stage::Post }) => true,
            (Questionnaire { stage: Stage::Post }, Done) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::PreTest => write!(f, "pre-test"),
            Phase::Screening => write!(f, "screening"),
            Phase::Questionnaire { stage: Stage::Pre } => write!(f, "pre-questionnaire"),
            Phase::Questionnaire { stage: Stage::Post } => write!(f, "post-questionnaire"),
            Phase::CheckTest => write!(f, "check test"),
            Phase::Treatment { cycle } => write!(f, "treatment {cycle}"),
            Phase::MiniTest { cycle } => write!(f, "mini-test {cycle}"),
            Phase::PostTest => write!(f, "post-test"),
            Phase::Done => write!(f, "done"),
            Phase::Excluded { .. } => write!(f, "excluded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("cannot {action} during {phase}")]
    IllegalPhase { phase: String, action: String },
    #[error("duplicate submission: {0}")]
    Duplicate(String),
    #[error("models for this step are still being trained")]
    Pending,
    #[error("{0}")]
    Validation(String),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
}

impl SessionError {
    fn illegal(phase: &Phase, action: &str) -> Self {
        SessionError::IllegalPhase {
            phase: phase.to_string(),
            action: action.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseItem {
    pub profile_id: String,
    pub decision: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub profile_id: String,
    pub decision: u8,
    pub phase: Phase,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSelection {
    pub stage: Stage,
    pub attributes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Screening {
    Pass { unfairness: f64 },
    Exclude { exclusion: ExclusionReason },
}

/// Screening on the pre-test: `|unfairness| ≥ 0.03` passes unless the
/// teacher is no fairer than the participant.
pub fn screen(pre: Result<&UnfairnessReport, &FairnessError>, teacher: Option<&TeacherEstimate>) -> Screening {
    let report = match pre {
        Ok(r) => r,
        Err(FairnessError::EmptyGroup(group)) => {
            return Screening::Exclude {
                exclusion: ExclusionReason::EmptyGroup { group: *group },
            }
        }
        Err(other) => {
            return Screening::Exclude {
                exclusion: ExclusionReason::TrainingFailed {
                    message: other.to_string(),
                },
            }
        }
    };
    if !passes_threshold(report.score) {
        return Screening::Exclude {
            exclusion: ExclusionReason::BelowThreshold {
                unfairness: report.score,
            },
        };
    }
    if let Some(t) = teacher {
        if t.insufficient {
            return Screening::Exclude {
                exclusion: ExclusionReason::TeacherInsufficient {
                    teacher_unfairness: t.teacher_unfairness,
                    participant_unfairness: t.participant_unfairness,
                },
            };
        }
    }
    Screening::Pass {
        unfairness: report.score,
    }
}

pub fn passes_threshold(score: f64) -> bool {
    score.abs() >= SCREENING_THRESHOLD - SCREENING_EPSILON
}

/// Models estimated after `cycle` completed mini-tests (0 = after the
/// pre-test), and the packet for the following treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub cycle: u8,
    pub student: StudentEstimate,
    pub teacher: TeacherEstimate,
    pub packet: Option<GuidancePacket>,
}

/// A self-contained training request that can run without the session.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    pub cycle: u8,
    pub answers: Vec<Answer>,
    pub pool: Arc<Vec<EncodedProfile>>,
    pub encoder: Encoder,
    pub config: GuidanceConfig,
    pub condition: Condition,
}

impl TrainingJob {
    pub fn run(&self) -> Result<TrainingResult, TeachingError> {
        let task = self.encoder.task();
        let student = estimate_student(&self.answers, &self.config.student)?;
        let teacher = estimate_teacher(&self.answers, &self.pool, task, &self.config.teacher)?;
        let packet = match self.condition {
            Condition::FairMachineGuidance => Some(build_packet(
                &student,
                &teacher,
                &self.answers,
                &self.encoder,
                self.config.eta,
                self.config.samples,
            )?),
            Condition::BiasFeedback => None,
        };
        Ok(TrainingResult {
            cycle: self.cycle,
            student,
            teacher,
            packet,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckTestRecord {
    pub answers: BTreeMap<String, u8>,
    pub correct: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub condition: Condition,
    pub pool: ProfilePool,
    pub config: GuidanceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Created(Box<Created>),
    ResponseSubmitted {
        phase: Phase,
        responses: Vec<ResponseItem>,
    },
    ScreeningResult {
        screening: Screening,
    },
    ModelsTrained(Box<TrainingResult>),
    TreatmentShown {
        cycle: u8,
    },
    CheckTestResult(CheckTestRecord),
    AttributeSelectionSubmitted(AttributeSelection),
    QuestionnaireSubmitted {
        stage: Stage,
        answers: BTreeMap<String, AnswerValue>,
    },
    PhaseAdvanced {
        from: Phase,
        to: Phase,
    },
    Finalized(Box<SessionReport>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub event: EventKind,
}

/// What a client learns about a processed command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub request_id: Option<String>,
    pub phase: Phase,
    /// Responses accepted by this request.
    pub accepted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_test: Option<CheckTestRecord>,
}

// short-lived; boxing the training result buys nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Command {
    SubmitResponses(Vec<ResponseItem>),
    CompleteTraining(Result<TrainingResult, String>),
    ShowTreatment,
    SubmitCheckTest(BTreeMap<String, u8>),
    SubmitAttributes {
        stage: Stage,
        attributes: Vec<String>,
    },
    SubmitQuestionnaire {
        stage: Stage,
        answers: BTreeMap<String, AnswerValue>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub task_id: String,
    pub condition: Condition,
    /// Signed unfairness of the pre-test answers.
    pub pre_unfairness: Option<f64>,
    /// Signed unfairness of the post-test answers (same profiles).
    pub post_unfairness: Option<f64>,
    pub accuracy_pre: Option<f64>,
    pub accuracy_post: Option<f64>,
    pub key_attribute_change_rate: Option<f64>,
    pub teacher_unfairness: Option<f64>,
    pub excluded: Option<ExclusionReason>,
    /// The session has not reached a terminal phase.
    pub partial: bool,
    pub responses: usize,
}

impl SessionReport {
    /// `|pre| − |post|`; positive means fairer after the treatment.
    pub fn improvement(&self) -> Option<f64> {
        Some(self.pre_unfairness?.abs() - self.post_unfairness?.abs())
    }
}

/// `1 − |A ∩ B| / |A ∪ B|`; two empty selections count as unchanged.
pub fn key_attribute_change_rate(pre: &AttributeSelection, post: &AttributeSelection) -> f64 {
    let union = pre.attributes.union(&post.attributes).count();
    if union == 0 {
        return 0.0;
    }
    let inter = pre.attributes.intersection(&post.attributes).count();
    1.0 - inter as f64 / union as f64
}

/// Per-group selection rates shown in the bias-feedback condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFeedbackView {
    pub rate_privileged: f64,
    pub rate_unprivileged: f64,
    pub privileged_label: String,
    pub unprivileged_label: String,
    pub decision_label: String,
    pub text: String,
    pub hint: String,
}

impl BiasFeedbackView {
    pub fn new(report: &UnfairnessReport, encoder: &Encoder) -> Self {
        let task = encoder.task();
        let (rate_privileged, rate_unprivileged) = report.selection_rates();
        let [unprivileged_label, privileged_label] = task.group_labels.clone();
        let decision_label = task.decision_labels[1].clone();
        let text = format!(
            "You selected {:.1}% of {} profiles and {:.1}% of {} profiles as \"{}\".",
            100.0 * rate_privileged,
            privileged_label,
            100.0 * rate_unprivileged,
            unprivileged_label,
            decision_label,
        );
        Self {
            rate_privileged,
            rate_unprivileged,
            privileged_label,
            unprivileged_label,
            decision_label,
            text,
            hint: "Your decisions are fairer the closer these two percentages are.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCard {
    pub profile_id: String,
    pub avatar: String,
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl ProfileCard {
    pub fn new(profile: &Profile) -> Self {
        let mut avatar = String::from("avatar");
        for key in ["gender", "race"] {
            if let Some(AttributeValue::Text(v)) = profile.attributes.get(key) {
                avatar.push('-');
                avatar.extend(
                    v.chars()
                        .filter(|c| c.is_ascii_alphanumeric())
                        .map(|c| c.to_ascii_lowercase()),
                );
            }
        }
        Self {
            profile_id: profile.profile_id.clone(),
            avatar,
            attributes: profile.attributes.clone(),
        }
    }
}

/// The screen a client should show next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Screen {
    Assessment {
        phase: Phase,
        block_size: usize,
        answered: usize,
        decision_labels: [String; 2],
        profiles: Vec<ProfileCard>,
    },
    Pending {
        phase: Phase,
    },
    BiasFeedback {
        cycle: u8,
        feedback: BiasFeedbackView,
    },
    Guidance {
        cycle: u8,
        feedback: BiasFeedbackView,
        packet: GuidancePacket,
        sample_profiles: Vec<ProfileCard>,
    },
    CheckTest {
        questions: Vec<CheckQuestion>,
        attempts: usize,
    },
    Questionnaire {
        stage: Stage,
        form: QuestionnaireForm,
        attributes_submitted: bool,
        attribute_choices: Vec<String>,
        max_attributes: usize,
    },
    Report {
        report: SessionReport,
    },
    Excluded {
        exclusion: ExclusionReason,
        report: SessionReport,
    },
}

/// One participant's state, rebuilt by applying events.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub condition: Condition,
    pub pool: ProfilePool,
    pub config: GuidanceConfig,
    pub phase: Phase,
    pub responses: Vec<ResponseRecord>,
    pub screening: Option<Screening>,
    pub trainings: Vec<TrainingResult>,
    pub treatments_shown: BTreeSet<u8>,
    pub check_tests: Vec<CheckTestRecord>,
    pub selections: BTreeMap<Stage, AttributeSelection>,
    pub questionnaires: BTreeMap<Stage, BTreeMap<String, AnswerValue>>,
    pub report: Option<SessionReport>,
    pub acks: BTreeMap<String, Ack>,
    encoder: Encoder,
    encoded: Arc<Vec<EncodedProfile>>,
    index: BTreeMap<String, usize>,
    next_seq: u64,
}

/// Events produced by one command and the resulting acknowledgement.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub events: Vec<SessionEvent>,
    pub ack: Ack,
}

impl SessionState {
    /// Starts a session and returns it with its `Created` event.
    pub fn create(created: Created, at_ms: u64) -> Result<(Self, SessionEvent), SessionError> {
        let event = SessionEvent {
            seq: 0,
            at_ms,
            request_id: None,
            event: EventKind::Created(Box::new(created)),
        };
        let state = Self::replay(std::slice::from_ref(&event))?;
        Ok((state, event))
    }

    fn from_created(created: &Created) -> Result<Self, SessionError> {
        created
            .pool
            .validate()
            .map_err(|e| SessionError::Validation(e.to_string()))?;
        let encoder = Encoder::new(&created.pool.task);
        let encoded = encoder
            .encode_all(&created.pool.profiles)
            .map_err(|e| SessionError::Validation(e.to_string()))?;
        let index = encoded
            .iter()
            .enumerate()
            .map(|(i, p)| (p.profile_id.clone(), i))
            .collect();
        Ok(Self {
            session_id: created.session_id.clone(),
            condition: created.condition,
            pool: created.pool.clone(),
            config: created.config.clone(),
            phase: Phase::PreTest,
            responses: Vec::new(),
            screening: None,
            trainings: Vec::new(),
            treatments_shown: BTreeSet::new(),
            check_tests: Vec::new(),
            selections: BTreeMap::new(),
            questionnaires: BTreeMap::new(),
            report: None,
            acks: BTreeMap::new(),
            encoder,
            encoded: Arc::new(encoded),
            index,
            next_seq: 1,
        })
    }

    /// Rebuilds a session from its complete event log.
    pub fn replay(events: &[SessionEvent]) -> Result<Self, SessionError> {
        let first = events
            .first()
            .ok_or_else(|| SessionError::Corrupt("empty event log".into()))?;
        let EventKind::Created(created) = &first.event else {
            return Err(SessionError::Corrupt("log does not start with a creation event".into()));
        };
        if first.seq != 0 {
            return Err(SessionError::Corrupt("creation event must have sequence 0".into()));
        }
        let mut state = Self::from_created(created)?;
        for e in &events[1..] {
            state.apply(e)?;
        }
        Ok(state)
    }

    /// Like [`SessionState::replay`], but re-runs every training step and
    /// checks the logged results and the final report against fresh
    /// computations.
    pub fn replay_verified(events: &[SessionEvent]) -> Result<Self, SessionError> {
        let mut state = Self::replay(&events[..1.min(events.len())])?;
        for e in &events[1..] {
            if let EventKind::ModelsTrained(logged) = &e.event {
                let job = state
                    .training_job()
                    .ok_or_else(|| SessionError::Corrupt(format!("event {} trains models nobody asked for", e.seq)))?;
                let fresh = job.run().map_err(|err| SessionError::Corrupt(err.to_string()))?;
                if &fresh != logged.as_ref() {
                    return Err(SessionError::Corrupt(format!(
                        "event {}: retraining cycle {} gave different models",
                        e.seq, logged.cycle
                    )));
                }
            }
            state.apply(e)?;
            if let EventKind::Finalized(logged) = &e.event {
                if state.compute_report() != **logged {
                    return Err(SessionError::Corrupt(format!(
                        "event {}: report differs on replay",
                        e.seq
                    )));
                }
            }
        }
        Ok(state)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoded_pool(&self) -> &Arc<Vec<EncodedProfile>> {
        &self.encoded
    }

    pub fn encoded(&self, profile_id: &str) -> Option<&EncodedProfile> {
        self.index.get(profile_id).map(|&i| &self.encoded[i])
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Profile ids presented in an assessment phase.
    pub fn block(&self, phase: &Phase) -> Option<&[String]> {
        let part = &self.pool.partition;
        match phase {
            Phase::PreTest => Some(&part.pretest),
            Phase::MiniTest { cycle } => part
                .minitests
                .get(usize::from(*cycle).checked_sub(1)?)
                .map(Vec::as_slice),
            Phase::PostTest => Some(&part.posttest),
            _ => None,
        }
    }

    fn answered_in(&self, phase: &Phase) -> BTreeSet<&str> {
        self.responses
            .iter()
            .filter(|r| &r.phase == phase)
            .map(|r| r.profile_id.as_str())
            .collect()
    }

    fn answers_where(&self, keep: impl Fn(&Phase) -> bool) -> Vec<Answer> {
        self.responses
            .iter()
            .filter(|r| keep(&r.phase))
            .map(|r| Answer::new(self.encoded(&r.profile_id).expect("validated id").clone(), r.decision))
            .collect()
    }

    /// Pre-test answers plus mini-tests `1..=cycle`.
    pub fn answers_through(&self, cycle: u8) -> Vec<Answer> {
        self.answers_where(|p| match p {
            Phase::PreTest => true,
            Phase::MiniTest { cycle: c } => *c <= cycle,
            _ => false,
        })
    }

    pub fn training(&self, cycle: u8) -> Option<&TrainingResult> {
        self.trainings.iter().find(|t| t.cycle == cycle)
    }

    /// The training cycle the session is waiting for, if any.
    pub fn pending_training(&self) -> Option<u8> {
        match self.phase {
            Phase::Screening if self.screening.is_none() && self.training(0).is_none() => Some(0),
            Phase::Treatment { cycle }
                if self.condition == Condition::FairMachineGuidance && self.training(cycle - 1).is_none() =>
            {
                Some(cycle - 1)
            }
            _ => None,
        }
    }

    pub fn training_job(&self) -> Option<TrainingJob> {
        let cycle = self.pending_training()?;
        Some(TrainingJob {
            cycle,
            answers: self.answers_through(cycle),
            pool: Arc::clone(&self.encoded),
            encoder: self.encoder.clone(),
            config: self.config.clone(),
            condition: self.condition,
        })
    }

    /// Validates a command and applies its events. A repeated request id
    /// returns the original acknowledgement without new events.
    pub fn execute(&mut self, request_id: Option<&str>, command: Command, at_ms: u64) -> Result<Outcome, SessionError> {
        if let Some(rid) = request_id {
            if let Some(ack) = self.acks.get(rid) {
                return Ok(Outcome {
                    events: Vec::new(),
                    ack: ack.clone(),
                });
            }
        }
        let mut draft = Draft {
            state: self.clone(),
            events: Vec::new(),
            request_id: request_id.map(str::to_string),
            at_ms,
        };
        draft.handle(command)?;
        let Draft { state, events, .. } = draft;
        *self = state;
        let mut ack = Ack {
            request_id: request_id.map(str::to_string),
            phase: self.phase.clone(),
            accepted: 0,
            check_test: None,
        };
        for e in &events {
            match &e.event {
                EventKind::ResponseSubmitted { responses, .. } => ack.accepted += responses.len(),
                EventKind::CheckTestResult(record) => ack.check_test = Some(record.clone()),
                _ => {}
            }
        }
        Ok(Outcome { events, ack })
    }

    /// Applies one logged event.
    pub fn apply(&mut self, e: &SessionEvent) -> Result<(), SessionError> {
        if e.seq != self.next_seq {
            return Err(SessionError::Corrupt(format!(
                "expected event {}, found {}",
                self.next_seq, e.seq
            )));
        }
        let corrupt = |msg: String| Err(SessionError::Corrupt(format!("event {}: {msg}", e.seq)));
        match &e.event {
            EventKind::Created(_) => return corrupt("second creation event".into()),
            EventKind::ResponseSubmitted { phase, responses } => {
                if phase != &self.phase {
                    return corrupt(format!("responses for {phase} during {}", self.phase));
                }
                for r in responses {
                    self.responses.push(ResponseRecord {
                        profile_id: r.profile_id.clone(),
                        decision: r.decision,
                        phase: phase.clone(),
                        at_ms: e.at_ms,
                    });
                }
            }
            EventKind::ScreeningResult { screening } => {
                if self.phase != Phase::Screening || self.screening.is_some() {
                    return corrupt("unexpected screening result".into());
                }
                self.screening = Some(screening.clone());
            }
            EventKind::ModelsTrained(result) => {
                if self.pending_training() != Some(result.cycle) {
                    return corrupt(format!("unexpected models for cycle {}", result.cycle));
                }
                self.trainings.push(result.as_ref().clone());
            }
            EventKind::TreatmentShown { cycle } => {
                if self.phase != (Phase::Treatment { cycle: *cycle }) {
                    return corrupt("treatment shown outside its phase".into());
                }
                self.treatments_shown.insert(*cycle);
            }
            EventKind::CheckTestResult(record) => {
                if self.phase != Phase::CheckTest {
                    return corrupt("check test outside its phase".into());
                }
                self.check_tests.push(record.clone());
            }
            EventKind::AttributeSelectionSubmitted(selection) => {
                self.selections.insert(selection.stage, selection.clone());
            }
            EventKind::QuestionnaireSubmitted { stage, answers } => {
                self.questionnaires.insert(*stage, answers.clone());
            }
            EventKind::PhaseAdvanced { from, to } => {
                if from != &self.phase || !from.allows(to, self.condition) {
                    return corrupt(format!("illegal transition {from} -> {to}"));
                }
                self.phase = to.clone();
            }
            EventKind::Finalized(report) => {
                self.report = Some(report.as_ref().clone());
            }
        }
        if let Some(rid) = &e.request_id {
            let ack = self.acks.entry(rid.clone()).or_insert_with(|| Ack {
                request_id: Some(rid.clone()),
                phase: Phase::PreTest,
                accepted: 0,
                check_test: None,
            });
            ack.phase = self.phase.clone();
            match &e.event {
                EventKind::ResponseSubmitted { responses, .. } => ack.accepted += responses.len(),
                EventKind::CheckTestResult(record) => ack.check_test = Some(record.clone()),
                _ => {}
            }
        }
        self.next_seq += 1;
        Ok(())
    }

    fn phase_unfairness(&self, phase: &Phase) -> Option<f64> {
        let answers = self.answers_where(|p| p == phase);
        let block = self.block(phase)?;
        if answers.len() != block.len() {
            return None;
        }
        response_unfairness(&answers, self.pool.task.favorable_label)
            .ok()
            .map(|r| r.score)
    }

    fn phase_accuracy(&self, phase: &Phase) -> Option<f64> {
        let block = self.block(phase)?;
        let answers = self.answers_where(|p| p == phase);
        if answers.len() != block.len() || answers.is_empty() {
            return None;
        }
        let hits = answers.iter().filter(|a| a.decision == a.profile.y).count();
        Some(hits as f64 / answers.len() as f64)
    }

    /// The session's outcome measures as of now.
    pub fn compute_report(&self) -> SessionReport {
        let excluded = match &self.phase {
            Phase::Excluded { exclusion } => Some(exclusion.clone()),
            _ => None,
        };
        let change = match (self.selections.get(&Stage::Pre), self.selections.get(&Stage::Post)) {
            (Some(a), Some(b)) => Some(key_attribute_change_rate(a, b)),
            _ => None,
        };
        SessionReport {
            session_id: self.session_id.clone(),
            task_id: self.pool.task.task_id.clone(),
            condition: self.condition,
            pre_unfairness: self.phase_unfairness(&Phase::PreTest),
            post_unfairness: self.phase_unfairness(&Phase::PostTest),
            accuracy_pre: self.phase_accuracy(&Phase::PreTest),
            accuracy_post: self.phase_accuracy(&Phase::PostTest),
            key_attribute_change_rate: change,
            teacher_unfairness: self.training(0).map(|t| t.teacher.teacher_unfairness),
            excluded,
            partial: !self.phase.is_terminal(),
            responses: self.responses.len(),
        }
    }

    /// The logged final report, or a partial one for unfinished sessions.
    pub fn finalize(&self) -> SessionReport {
        self.report.clone().unwrap_or_else(|| self.compute_report())
    }

    fn feedback_answers(&self) -> Vec<Answer> {
        self.answers_where(|p| matches!(p, Phase::PreTest | Phase::MiniTest { .. }))
    }

    fn card(&self, id: &str) -> ProfileCard {
        ProfileCard::new(self.pool.profile(id).expect("validated id"))
    }

    fn assessment(&self, phase: &Phase) -> Screen {
        let block = self.block(phase).expect("assessment phase");
        let answered = self.answered_in(phase);
        Screen::Assessment {
            phase: phase.clone(),
            block_size: block.len(),
            answered: answered.len(),
            decision_labels: self.pool.task.decision_labels.clone(),
            profiles: block
                .iter()
                .filter(|id| !answered.contains(id.as_str()))
                .map(|id| self.card(id))
                .collect(),
        }
    }

    /// The next screen, without side effects.
    pub fn view(&self) -> Screen {
        if self.pending_training().is_some() {
            return Screen::Pending {
                phase: self.phase.clone(),
            };
        }
        match &self.phase {
            p @ (Phase::PreTest | Phase::MiniTest { .. } | Phase::PostTest) => self.assessment(p),
            Phase::Screening => Screen::Pending {
                phase: self.phase.clone(),
            },
            // once seen, the treatment gives way to its mini-test
            Phase::Treatment { cycle } if self.treatments_shown.contains(cycle) => {
                self.assessment(&Phase::MiniTest { cycle: *cycle })
            }
            Phase::Treatment { cycle } => {
                let report = response_unfairness(&self.feedback_answers(), self.pool.task.favorable_label)
                    .expect("screened sessions have both groups");
                let feedback = BiasFeedbackView::new(&report, &self.encoder);
                match self.training(cycle - 1).and_then(|t| t.packet.clone()) {
                    Some(packet) if self.condition == Condition::FairMachineGuidance => {
                        let sample_profiles = packet.samples.iter().map(|s| self.card(&s.profile_id)).collect();
                        Screen::Guidance {
                            cycle: *cycle,
                            feedback,
                            packet,
                            sample_profiles,
                        }
                    }
                    _ => Screen::BiasFeedback {
                        cycle: *cycle,
                        feedback,
                    },
                }
            }
            Phase::CheckTest => Screen::CheckTest {
                questions: forms::check_test().into_iter().map(|(q, _)| q).collect(),
                attempts: self.check_tests.len(),
            },
            Phase::Questionnaire { stage } => Screen::Questionnaire {
                stage: *stage,
                form: forms::form(*stage, self.condition),
                attributes_submitted: self.selections.contains_key(stage),
                attribute_choices: self.pool.task.attribute_names().map(str::to_string).collect(),
                max_attributes: MAX_KEY_ATTRIBUTES,
            },
            Phase::Done => Screen::Report {
                report: self.finalize(),
            },
            Phase::Excluded { exclusion } => Screen::Excluded {
                exclusion: exclusion.clone(),
                report: self.finalize(),
            },
        }
    }
}

/// A state copy that accumulates the events of one command.
struct Draft {
    state: SessionState,
    events: Vec<SessionEvent>,
    request_id: Option<String>,
    at_ms: u64,
}

impl Draft {
    fn emit(&mut self, event: EventKind) -> Result<(), SessionError> {
        let e = SessionEvent {
            seq: self.state.next_seq,
            at_ms: self.at_ms,
            request_id: self.request_id.clone(),
            event,
        };
        self.state.apply(&e)?;
        self.events.push(e);
        Ok(())
    }

    fn advance(&mut self, to: Phase) -> Result<(), SessionError> {
        let from = self.state.phase.clone();
        self.emit(EventKind::PhaseAdvanced { from, to })?;
        if self.state.phase.is_terminal() {
            let report = self.state.compute_report();
            self.emit(EventKind::Finalized(Box::new(report)))?;
        }
        Ok(())
    }

    fn exclude(&mut self, exclusion: ExclusionReason) -> Result<(), SessionError> {
        self.advance(Phase::Excluded { exclusion })
    }

    fn handle(&mut self, command: Command) -> Result<(), SessionError> {
        match command {
            Command::SubmitResponses(items) => self.responses(items),
            Command::CompleteTraining(result) => self.trained(result),
            Command::ShowTreatment => self.show_treatment(),
            Command::SubmitCheckTest(answers) => self.check_test(answers),
            Command::SubmitAttributes { stage, attributes } => self.attributes(stage, attributes),
            Command::SubmitQuestionnaire { stage, answers } => self.questionnaire(stage, answers),
        }
    }

    fn responses(&mut self, items: Vec<ResponseItem>) -> Result<(), SessionError> {
        if let Phase::Treatment { cycle } = self.state.phase {
            if self.state.pending_training().is_some() {
                return Err(SessionError::Pending);
            }
            if !self.state.treatments_shown.contains(&cycle) {
                return Err(SessionError::illegal(
                    &self.state.phase,
                    "submit responses before viewing the treatment",
                ));
            }
            self.advance(Phase::MiniTest { cycle })?;
        }
        let phase = self.state.phase.clone();
        let Some(block) = self.state.block(&phase) else {
            return Err(SessionError::illegal(&phase, "submit responses"));
        };
        if items.is_empty() {
            return Err(SessionError::Validation("empty response batch".into()));
        }
        let block: BTreeSet<&str> = block.iter().map(String::as_str).collect();
        let answered = self.state.answered_in(&phase);
        let mut seen = BTreeSet::new();
        for item in &items {
            if item.decision > 1 {
                return Err(SessionError::Validation(format!(
                    "decision for `{}` must be 0 or 1",
                    item.profile_id
                )));
            }
            if !block.contains(item.profile_id.as_str()) {
                return Err(SessionError::Validation(format!(
                    "profile `{}` is not part of the {phase} block",
                    item.profile_id
                )));
            }
            if answered.contains(item.profile_id.as_str()) || !seen.insert(item.profile_id.as_str()) {
                return Err(SessionError::Duplicate(format!(
                    "profile `{}` already answered in {phase}",
                    item.profile_id
                )));
            }
        }
        let complete = answered.len() + items.len() == block.len();
        self.emit(EventKind::ResponseSubmitted {
            phase: phase.clone(),
            responses: items,
        })?;
        if !complete {
            return Ok(());
        }
        match phase {
            Phase::PreTest => {
                self.advance(Phase::Screening)?;
                let answers = self.state.answers_where(|p| p == &Phase::PreTest);
                let pre = response_unfairness(&answers, self.state.pool.task.favorable_label);
                // decided without models when the answers alone exclude
                let early = screen(pre.as_ref(), None);
                if let Screening::Exclude { exclusion } = early.clone() {
                    self.emit(EventKind::ScreeningResult { screening: early })?;
                    self.exclude(exclusion)?;
                }
                Ok(())
            }
            Phase::MiniTest { cycle } if usize::from(cycle) < CYCLES => {
                self.advance(Phase::Treatment { cycle: cycle + 1 })
            }
            Phase::MiniTest { .. } => self.advance(Phase::PostTest),
            Phase::PostTest => self.advance(Phase::Questionnaire { stage: Stage::Post }),
            _ => unreachable!("assessment phases only"),
        }
    }

    fn trained(&mut self, result: Result<TrainingResult, String>) -> Result<(), SessionError> {
        let Some(cycle) = self.state.pending_training() else {
            return Err(SessionError::illegal(&self.state.phase, "accept trained models"));
        };
        let result = match result {
            Ok(r) if r.cycle == cycle => r,
            Ok(r) => {
                return Err(SessionError::Validation(format!(
                    "models for cycle {} arrived while cycle {cycle} is pending",
                    r.cycle
                )))
            }
            Err(message) => {
                let exclusion = ExclusionReason::TrainingFailed { message };
                if self.state.phase == Phase::Screening {
                    self.emit(EventKind::ScreeningResult {
                        screening: Screening::Exclude {
                            exclusion: exclusion.clone(),
                        },
                    })?;
                }
                return self.exclude(exclusion);
            }
        };
        self.emit(EventKind::ModelsTrained(Box::new(result.clone())))?;
        if self.state.phase == Phase::Screening {
            let answers = self.state.answers_where(|p| p == &Phase::PreTest);
            let pre = response_unfairness(&answers, self.state.pool.task.favorable_label);
            let screening = screen(pre.as_ref(), Some(&result.teacher));
            self.emit(EventKind::ScreeningResult {
                screening: screening.clone(),
            })?;
            match screening {
                Screening::Pass { .. } => self.advance(Phase::Questionnaire { stage: Stage::Pre })?,
                Screening::Exclude { exclusion } => self.exclude(exclusion)?,
            }
        }
        Ok(())
    }

    fn show_treatment(&mut self) -> Result<(), SessionError> {
        let Phase::Treatment { cycle } = self.state.phase else {
            return Err(SessionError::illegal(&self.state.phase, "show a treatment"));
        };
        if self.state.pending_training().is_some() {
            return Err(SessionError::Pending);
        }
        if self.state.treatments_shown.contains(&cycle) {
            return Ok(());
        }
        self.emit(EventKind::TreatmentShown { cycle })
    }

    fn check_test(&mut self, answers: BTreeMap<String, u8>) -> Result<(), SessionError> {
        if self.state.phase != Phase::CheckTest {
            return Err(SessionError::illegal(&self.state.phase, "take the check test"));
        }
        let key = forms::check_test();
        if answers.len() != key.len() {
            return Err(SessionError::Validation(format!("expected {} answers", key.len())));
        }
        let mut correct = 0;
        for (q, right) in &key {
            let Some(&given) = answers.get(&q.id) else {
                return Err(SessionError::Validation(format!("missing answer for `{}`", q.id)));
            };
            if usize::from(given) >= q.options.len() {
                return Err(SessionError::Validation(format!("no option {given} for `{}`", q.id)));
            }
            correct += usize::from(given == *right);
        }
        let passed = correct == key.len();
        self.emit(EventKind::CheckTestResult(CheckTestRecord {
            answers,
            correct,
            passed,
        }))?;
        if passed {
            self.advance(Phase::Treatment { cycle: 1 })?;
        }
        Ok(())
    }

    fn attributes(&mut self, stage: Stage, attributes: Vec<String>) -> Result<(), SessionError> {
        if self.state.phase != (Phase::Questionnaire { stage }) {
            return Err(SessionError::illegal(
                &self.state.phase,
                "select key attributes for this stage",
            ));
        }
        if self.state.selections.contains_key(&stage) {
            return Err(SessionError::Duplicate("attributes already selected".into()));
        }
        if attributes.len() > MAX_KEY_ATTRIBUTES {
            return Err(SessionError::Validation(format!(
                "at most {MAX_KEY_ATTRIBUTES} attributes may be selected"
            )));
        }
        let mut set = BTreeSet::new();
        for a in attributes {
            if self.state.pool.task.attribute(&a).is_none() {
                return Err(SessionError::Validation(format!("unknown attribute `{a}`")));
            }
            if !set.insert(a.clone()) {
                return Err(SessionError::Validation(format!("attribute `{a}` listed twice")));
            }
        }
        self.emit(EventKind::AttributeSelectionSubmitted(AttributeSelection {
            stage,
            attributes: set,
        }))
    }

    fn questionnaire(&mut self, stage: Stage, answers: BTreeMap<String, AnswerValue>) -> Result<(), SessionError> {
        if self.state.phase != (Phase::Questionnaire { stage }) {
            return Err(SessionError::illegal(&self.state.phase, "submit this questionnaire"));
        }
        if !self.state.selections.contains_key(&stage) {
            return Err(SessionError::illegal(
                &self.state.phase,
                "submit the questionnaire before selecting key attributes",
            ));
        }
        let form = forms::form(stage, self.state.condition);
        forms::validate_answers(&form, &answers).map_err(SessionError::Validation)?;
        self.emit(EventKind::QuestionnaireSubmitted { stage, answers })?;
        match (stage, self.state.condition) {
            (Stage::Pre, Condition::FairMachineGuidance) => self.advance(Phase::CheckTest),
            (Stage::Pre, Condition::BiasFeedback) => self.advance(Phase::Treatment { cycle: 1 }),
            (Stage::Post, _) => self.advance(Phase::Done),
        }
    }
}
