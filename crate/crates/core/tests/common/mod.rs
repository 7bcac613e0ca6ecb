#![allow(dead_code)]

use std::collections::BTreeMap;

use fairguide::dataset::{EncodedProfile, ProfilePool, TaskSpec};
use fairguide::service::default_pool;
use fairguide::session::forms::{self, AnswerValue, ItemKind};
use fairguide::session::{Command, Condition, Created, Phase, ResponseItem, Screen, SessionEvent, SessionState, Stage};
use fairguide::teaching::GuidanceConfig;
use serde_json::Value;

pub fn pool(task_id: &str) -> ProfilePool {
    default_pool(&TaskSpec::builtin(task_id).unwrap(), 0).unwrap()
}

pub fn created(pool: &ProfilePool, condition: Condition, id: &str) -> Created {
    Created {
        session_id: id.into(),
        condition,
        pool: pool.clone(),
        config: GuidanceConfig::default(),
    }
}

/// An engine-level participant: decides each profile with `decide` and
/// completes every form.
pub struct Scripted {
    pub state: SessionState,
    pub events: Vec<SessionEvent>,
    pub clock: u64,
}

impl Scripted {
    pub fn new(pool: &ProfilePool, condition: Condition, id: &str) -> Self {
        let (state, first) = SessionState::create(created(pool, condition, id), 0).unwrap();
        Self {
            state,
            events: vec![first],
            clock: 0,
        }
    }

    pub fn run(&mut self, command: Command) -> Result<(), fairguide::session::SessionError> {
        self.clock += 10;
        let outcome = self.state.execute(None, command, self.clock)?;
        self.events.extend(outcome.events);
        Ok(())
    }

    pub fn responses(&self, phase: &Phase, decide: &dyn Fn(&EncodedProfile) -> u8) -> Vec<ResponseItem> {
        self.state
            .block(phase)
            .unwrap()
            .iter()
            .map(|id| {
                let p = self.state.encoded(id).unwrap();
                ResponseItem {
                    profile_id: id.clone(),
                    decision: decide(p),
                }
            })
            .collect()
    }

    pub fn train(&mut self) {
        let job = self.state.training_job().expect("training pending");
        let result = job.run().map_err(|e| e.to_string());
        self.run(Command::CompleteTraining(result)).unwrap();
    }

    /// Advances by one screen. Returns false once the session is over.
    pub fn step(&mut self, decide: &dyn Fn(&EncodedProfile) -> u8, attributes: &[&str]) -> bool {
        match self.state.view() {
            Screen::Assessment { phase, .. } => {
                let items = self.responses(&phase, decide);
                self.run(Command::SubmitResponses(items)).unwrap();
            }
            Screen::Pending { .. } => self.train(),
            Screen::BiasFeedback { .. } | Screen::Guidance { .. } => {
                self.run(Command::ShowTreatment).unwrap();
                let Phase::Treatment { cycle } = self.state.phase else {
                    panic!("treatment screen outside treatment")
                };
                let items = self.responses(&Phase::MiniTest { cycle }, decide);
                self.run(Command::SubmitResponses(items)).unwrap();
            }
            Screen::CheckTest { .. } => {
                let answers = forms::check_test().into_iter().map(|(q, a)| (q.id, a)).collect();
                self.run(Command::SubmitCheckTest(answers)).unwrap();
            }
            Screen::Questionnaire {
                stage,
                attributes_submitted,
                ..
            } => {
                if !attributes_submitted {
                    self.run(Command::SubmitAttributes {
                        stage,
                        attributes: attributes.iter().map(|s| s.to_string()).collect(),
                    })
                    .unwrap();
                }
                let answers = complete_form(stage, self.state.condition);
                self.run(Command::SubmitQuestionnaire { stage, answers }).unwrap();
            }
            Screen::Report { .. } | Screen::Excluded { .. } => return false,
        }
        true
    }

    pub fn finish(&mut self, decide: &dyn Fn(&EncodedProfile) -> u8, attributes: &[&str]) {
        while self.step(decide, attributes) {}
    }
}

pub fn complete_form(stage: Stage, condition: Condition) -> BTreeMap<String, AnswerValue> {
    forms::form(stage, condition)
        .items
        .into_iter()
        .filter_map(|item| match item.kind {
            ItemKind::Likert5 | ItemKind::Likert5OrDontKnow => Some((item.id, AnswerValue::Number(4))),
            ItemKind::MultipleChoice { .. } => Some((item.id, AnswerValue::Number(0))),
            ItemKind::Text => Some((item.id, AnswerValue::Text("no comment".into()))),
            ItemKind::AttributeSelection { .. } => None,
        })
        .collect()
}

/// Selects exactly the privileged profiles toward the favorable decision:
/// as unfair as a participant can be.
pub fn favor_privileged(task: &TaskSpec) -> impl Fn(&EncodedProfile) -> u8 {
    let fav = task.favorable_label;
    move |p| if p.z == 1 { fav } else { 1 - fav }
}

/// Decisions equal to the ground-truth label.
pub fn truthful(p: &EncodedProfile) -> u8 {
    p.y
}

// ---- a small JSON Schema checker covering the keywords api/schema.json uses

pub fn load_schema() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/api/schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn conforms(schema: &Value, def: &str, value: &Value) -> Result<(), String> {
    let node = &schema["$defs"][def];
    if node.is_null() {
        return Err(format!("no definition `{def}`"));
    }
    check(schema, node, value, def)
}

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "integer" => v.is_u64() || v.is_i64(),
        "number" => v.is_number(),
        _ => false,
    }
}

fn check(root: &Value, node: &Value, v: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = node.get("$ref").and_then(Value::as_str) {
        let name = r.trim_start_matches("#/$defs/");
        return check(root, &root["$defs"][name], v, at);
    }
    if let Some(options) = node.get("oneOf").and_then(Value::as_array) {
        let ok = options.iter().filter(|o| check(root, o, v, at).is_ok()).count();
        if ok != 1 {
            return Err(format!("{at}: {ok} oneOf branches match {v}"));
        }
    }
    match node.get("type") {
        Some(Value::String(t)) if !type_matches(t, v) => return Err(format!("{at}: expected {t}, got {v}")),
        Some(Value::Array(ts)) if !ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)) => {
            return Err(format!("{at}: expected one of {ts:?}, got {v}"))
        }
        _ => {}
    }
    if let Some(allowed) = node.get("enum").and_then(Value::as_array) {
        if !allowed.contains(v) {
            return Err(format!("{at}: {v} not in {allowed:?}"));
        }
    }
    if let Some(c) = node.get("const") {
        if c != v {
            return Err(format!("{at}: {v} != {c}"));
        }
    }
    if let (Some(min), Some(x)) = (node.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            return Err(format!("{at}: {x} < {min}"));
        }
    }
    if let (Some(max), Some(x)) = (node.get("maximum").and_then(Value::as_f64), v.as_f64()) {
        if x > max {
            return Err(format!("{at}: {x} > {max}"));
        }
    }
    if let Some(items) = v.as_array() {
        if let Some(n) = node.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < n {
                return Err(format!("{at}: fewer than {n} items"));
            }
        }
        if let Some(n) = node.get("maxItems").and_then(Value::as_u64) {
            if items.len() as u64 > n {
                return Err(format!("{at}: more than {n} items"));
            }
        }
        if let Some(item) = node.get("items") {
            for (i, x) in items.iter().enumerate() {
                check(root, item, x, &format!("{at}[{i}]"))?;
            }
        }
    }
    if let Some(obj) = v.as_object() {
        let props = node.get("properties").and_then(Value::as_object);
        if let Some(required) = node.get("required").and_then(Value::as_array) {
            for r in required {
                let key = r.as_str().unwrap();
                if !obj.contains_key(key) {
                    return Err(format!("{at}: missing `{key}`"));
                }
            }
        }
        for (key, x) in obj {
            let path = format!("{at}.{key}");
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(root, sub, x, &path)?,
                None => match node.get("additionalProperties") {
                    Some(Value::Bool(false)) => return Err(format!("{at}: unexpected `{key}`")),
                    Some(sub @ Value::Object(_)) => check(root, sub, x, &path)?,
                    _ => {}
                },
            }
        }
    }
    Ok(())
}
