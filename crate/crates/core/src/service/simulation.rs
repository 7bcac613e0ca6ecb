//! Scripted participants driven through the real session engine.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_pool, synth, EncodedProfile, Encoder, ProfilePool, TaskSpec};
use crate::linmodel::{fit, LabeledExample, LinearModel};
use crate::session::forms::{self, AnswerValue, ItemKind};
use crate::session::{
    Command, Condition, Created, ResponseItem, Screen, SessionError, SessionEvent, SessionReport, SessionState, Stage,
    MAX_KEY_ATTRIBUTES,
};
use crate::teaching::{
    candidates, estimate_student, estimate_teacher, select_from, Answer, GuidanceConfig, SimulatedStudent,
    TeachingError, TeachingSample,
};

/// Size and seed of the synthetic source table pools are drawn from.
pub const SOURCE_ROWS: usize = 3000;
pub const SOURCE_SEED: u64 = 11;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Teaching(#[from] TeachingError),
    #[error("{0}")]
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub task_id: String,
    pub condition: Condition,
    pub n_students: usize,
    /// Probability of absorbing each teaching sample.
    pub compliance: f64,
    /// Extra weight on the privileged-group column, toward the favorable
    /// decision for that group.
    pub bias_strength: f64,
    /// Standard deviation of per-student perturbations of every weight.
    pub jitter: f64,
    /// Scale of logistic noise on each decision score.
    pub decision_noise: f64,
    /// Learning rate of the simulated students.
    pub eta: f64,
    /// Seeds the per-student seeds.
    pub seed: u64,
    pub guidance: GuidanceConfig,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            task_id: "income".into(),
            condition: Condition::FairMachineGuidance,
            n_students: 50,
            compliance: 0.8,
            bias_strength: 2.0,
            jitter: 0.3,
            decision_noise: 0.5,
            eta: crate::teaching::DEFAULT_ETA,
            seed: 0,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::Spec(m.into()));
        if self.n_students == 0 {
            return bad("n_students must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.compliance) {
            return bad("compliance must lie in [0, 1]");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.jitter >= 0.0 && self.decision_noise >= 0.0 && self.bias_strength.is_finite()) {
            return bad("jitter and decision_noise must be non-negative");
        }
        Ok(())
    }

    /// Per-student seeds derived from `seed`.
    pub fn student_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_students).map(|_| rng.random()).collect()
    }
}

/// The pool a task uses when none is supplied: drawn from the built-in
/// synthetic source table.
pub fn default_pool(task: &TaskSpec, seed: u64) -> Result<ProfilePool, SimulationError> {
    let source =
        synth::source_profiles(task, SOURCE_ROWS, SOURCE_SEED).map_err(|e| SimulationError::Data(e.to_string()))?;
    sample_pool(&source, task, seed).map_err(|e| SimulationError::Data(e.to_string()))
}

/// A ground-truth model that ignores the sensitive attribute: logistic
/// regression on the pool labels with the sensitive columns zeroed.
pub fn group_blind_model(
    pool: &ProfilePool,
    encoder: &Encoder,
    config: &GuidanceConfig,
) -> Result<LinearModel, SimulationError> {
    let task = encoder.task();
    let sensitive: Vec<usize> = encoder
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.attribute == task.sensitive_attribute)
        .map(|(i, _)| i)
        .collect();
    let encoded = encoder
        .encode_all(&pool.profiles)
        .map_err(|e| SimulationError::Data(e.to_string()))?;
    let examples: Vec<LabeledExample> = encoded
        .into_iter()
        .map(|p| {
            let mut x = p.features;
            for &i in &sensitive {
                x[i] = 0.0;
            }
            LabeledExample::new(x, p.y, p.z)
        })
        .collect();
    let outcome = fit(&examples, &config.student).map_err(TeachingError::from)?;
    Ok(outcome.model)
}

/// A biased student: the group-blind model, jittered, plus `bias_strength`
/// on the privileged column in the direction of that group's favorable
/// decision.
pub fn biased_student<R: Rng>(
    base: &LinearModel,
    encoder: &Encoder,
    spec: &SimulationSpec,
    rng: &mut R,
) -> SimulatedStudent {
    let mut model = base.clone();
    if spec.jitter > 0.0 {
        let normal = Normal::new(0.0, spec.jitter).expect("validated jitter");
        for w in model.weights.iter_mut() {
            *w += normal.sample(rng);
        }
    }
    let toward_favorable = if encoder.task().favorable_label == 1 { 1.0 } else { -1.0 };
    model.weights[encoder.privileged_column()] += toward_favorable * spec.bias_strength;
    SimulatedStudent {
        model,
        eta: spec.eta,
        compliance: spec.compliance,
        decision_noise: spec.decision_noise,
    }
}

/// Attributes a simulated student names as most important: the five with
/// the largest summed absolute weight.
pub fn key_attributes(model: &LinearModel, encoder: &Encoder) -> Vec<String> {
    let mut importance = encoder.attribute_importance(&model.weights);
    importance.sort_by(|a, b| b.1.total_cmp(&a.1));
    importance
        .into_iter()
        .take(MAX_KEY_ATTRIBUTES)
        .map(|(name, _)| name)
        .collect()
}

fn scripted_answers(stage: Stage, condition: Condition) -> std::collections::BTreeMap<String, AnswerValue> {
    forms::form(stage, condition)
        .items
        .into_iter()
        .filter_map(|item| {
            let value = match item.kind {
                ItemKind::Likert5 | ItemKind::Likert5OrDontKnow => AnswerValue::Number(3),
                ItemKind::MultipleChoice { options } => AnswerValue::Number((options.len() - 1) as u8),
                ItemKind::Text => AnswerValue::Text(String::new()),
                ItemKind::AttributeSelection { .. } => return None,
            };
            Some((item.id, value))
        })
        .collect()
}

/// One simulated session: its event log and final report.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSession {
    pub events: Vec<SessionEvent>,
    pub report: SessionReport,
    pub final_student: SimulatedStudent,
}

struct Driver {
    state: SessionState,
    events: Vec<SessionEvent>,
    clock: u64,
    requests: u64,
}

impl Driver {
    fn run(&mut self, command: Command) -> Result<(), SessionError> {
        self.clock += 1000;
        self.requests += 1;
        let rid = format!("req-{:04}", self.requests);
        let outcome = self.state.execute(Some(&rid), command, self.clock)?;
        self.events.extend(outcome.events);
        Ok(())
    }

    fn block(&self, ids: &[String]) -> Vec<EncodedProfile> {
        ids.iter()
            .map(|id| self.state.encoded(id).expect("pool id").clone())
            .collect()
    }

    fn answer<R: Rng>(
        &mut self,
        student: &SimulatedStudent,
        ids: &[String],
        rng: &mut R,
    ) -> Result<(), SimulationError> {
        let block = self.block(ids);
        let quota = self.state.pool.task.positive_quota;
        let decisions = student.answer_block(&block, quota, rng).map_err(TeachingError::from)?;
        let items = block
            .iter()
            .zip(decisions)
            .map(|(p, decision)| ResponseItem {
                profile_id: p.profile_id.clone(),
                decision,
            })
            .collect();
        self.run(Command::SubmitResponses(items))?;
        Ok(())
    }
}

/// Runs one scripted participant through a full session.
pub fn simulate_session(
    spec: &SimulationSpec,
    pool: &ProfilePool,
    base: &LinearModel,
    student_seed: u64,
    session_id: &str,
) -> Result<SimulatedSession, SimulationError> {
    let encoder = Encoder::new(&pool.task);
    let mut rng = ChaCha8Rng::seed_from_u64(student_seed);
    let mut student = biased_student(base, &encoder, spec, &mut rng);
    let created = Created {
        session_id: session_id.into(),
        condition: spec.condition,
        pool: pool.clone(),
        config: spec.guidance.clone(),
    };
    let (state, first) = SessionState::create(created, 0)?;
    let mut d = Driver {
        state,
        events: vec![first],
        clock: 0,
        requests: 0,
    };
    loop {
        match d.state.view() {
            Screen::Assessment { phase, .. } => {
                let ids = d.state.block(&phase).expect("assessment block").to_vec();
                d.answer(&student, &ids, &mut rng)?;
            }
            Screen::Pending { .. } => {
                let job = d.state.training_job().expect("pending training");
                let result = job.run().map_err(|e| e.to_string());
                d.clock += 1000;
                let outcome = d.state.execute(None, Command::CompleteTraining(result), d.clock)?;
                d.events.extend(outcome.events);
            }
            Screen::BiasFeedback { cycle, .. } => {
                // rates alone give a model-based learner no direction
                d.run(Command::ShowTreatment)?;
                let ids = pool.partition.minitests[usize::from(cycle) - 1].clone();
                d.answer(&student, &ids, &mut rng)?;
            }
            Screen::Guidance { cycle, packet, .. } => {
                d.run(Command::ShowTreatment)?;
                student = student.absorb_guidance(&packet.samples, d.state.encoded_pool(), &mut rng)?;
                let ids = pool.partition.minitests[usize::from(cycle) - 1].clone();
                d.answer(&student, &ids, &mut rng)?;
            }
            Screen::CheckTest { .. } => {
                let answers = forms::check_test()
                    .into_iter()
                    .map(|(q, right)| (q.id, right))
                    .collect();
                d.run(Command::SubmitCheckTest(answers))?;
            }
            Screen::Questionnaire {
                stage,
                attributes_submitted,
                ..
            } => {
                if !attributes_submitted {
                    let attributes = key_attributes(&student.model, &encoder);
                    d.run(Command::SubmitAttributes { stage, attributes })?;
                }
                let answers = scripted_answers(stage, spec.condition);
                d.run(Command::SubmitQuestionnaire { stage, answers })?;
            }
            Screen::Report { report } | Screen::Excluded { report, .. } => {
                return Ok(SimulatedSession {
                    events: d.events,
                    report,
                    final_student: student,
                });
            }
        }
    }
}

/// Session id of the `index`-th simulated participant.
pub fn simulated_session_id(spec: &SimulationSpec, index: usize) -> String {
    format!(
        "sim-{}-{}-{}-{index:03}",
        spec.task_id,
        spec.condition.as_str(),
        spec.seed
    )
}

/// Drives `n_students` scripted participants through full sessions.
pub fn run_simulation_sessions(
    spec: &SimulationSpec,
    pool: &ProfilePool,
) -> Result<Vec<SimulatedSession>, SimulationError> {
    spec.validate()?;
    if pool.task.task_id != spec.task_id {
        return Err(SimulationError::Spec(format!(
            "pool is for task `{}`, spec names `{}`",
            pool.task.task_id, spec.task_id
        )));
    }
    let encoder = Encoder::new(&pool.task);
    let base = group_blind_model(pool, &encoder, &spec.guidance)?;
    spec.student_seeds()
        .into_iter()
        .enumerate()
        .map(|(i, seed)| simulate_session(spec, pool, &base, seed, &simulated_session_id(spec, i)))
        .collect()
}

/// Final reports of [`run_simulation_sessions`].
pub fn run_simulation(spec: &SimulationSpec, pool: &ProfilePool) -> Result<Vec<SessionReport>, SimulationError> {
    Ok(run_simulation_sessions(spec, pool)?
        .into_iter()
        .map(|s| s.report)
        .collect())
}

/// Distances to the teacher after teaching with machine-selected versus
/// uniformly random samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyTrial {
    pub initial_distance: f64,
    pub machine_distance: f64,
    pub random_distance: f64,
}

/// One teaching-efficacy trial.
///
/// A biased student answers the pre-test; the simulated learner starts at
/// the student model estimated from those answers, and the teacher is the
/// fairness-penalized fit of the same answers. Each of `cycles` rounds shows
/// `k` samples from the answered profiles, chosen either by the teaching
/// objective or uniformly at random, and the learner absorbs them.
pub fn efficacy_trial(
    pool: &ProfilePool,
    base: &LinearModel,
    spec: &SimulationSpec,
    seed: u64,
    cycles: usize,
) -> Result<EfficacyTrial, SimulationError> {
    let encoder = Encoder::new(&pool.task);
    let encoded = encoder
        .encode_all(&pool.profiles)
        .map_err(|e| SimulationError::Data(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let biased = biased_student(base, &encoder, spec, &mut rng);
    let block: Vec<EncodedProfile> = pool
        .partition
        .pretest
        .iter()
        .map(|id| encoded.iter().find(|p| &p.profile_id == id).expect("pool id").clone())
        .collect();
    let decisions = biased
        .answer_block(&block, pool.task.positive_quota, &mut rng)
        .map_err(TeachingError::from)?;
    let answers: Vec<Answer> = block
        .into_iter()
        .zip(decisions)
        .map(|(p, d)| Answer::new(p, d))
        .collect();
    let student = estimate_student(&answers, &spec.guidance.student)?;
    let teacher = estimate_teacher(&answers, &encoded, &pool.task, &spec.guidance.teacher)?;
    let pool_candidates = candidates(&answers, &teacher)?;
    let k = spec.guidance.samples;
    let start = SimulatedStudent {
        model: student.model,
        eta: spec.eta,
        compliance: spec.compliance,
        decision_noise: 0.0,
    };
    let mut machine = start.clone();
    let mut random = start.clone();
    for _ in 0..cycles {
        let picked = select_from(&machine.model, &teacher.model, &pool_candidates, spec.eta, k)?;
        machine = machine.absorb_guidance(&picked, &encoded, &mut rng)?;
        let drawn: Vec<TeachingSample> = sample(&mut rng, pool_candidates.len(), k.min(pool_candidates.len()))
            .into_iter()
            .map(|i| {
                let c = &pool_candidates[i];
                TeachingSample {
                    profile_id: c.profile_id.clone(),
                    student_decision: c.student_decision,
                    teacher_decision: c.teacher_decision,
                    objective_score: f64::NAN,
                }
            })
            .collect();
        random = random.absorb_guidance(&drawn, &encoded, &mut rng)?;
    }
    Ok(EfficacyTrial {
        initial_distance: start.model.distance_sq(&teacher.model).sqrt(),
        machine_distance: machine.model.distance_sq(&teacher.model).sqrt(),
        random_distance: random.model.distance_sq(&teacher.model).sqrt(),
    })
}
