//! Questionnaire and check-test content.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Condition, Stage};

pub const MAX_TEXT_LEN: usize = 4000;
pub const DONT_KNOW: &str = "dont_know";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ItemKind {
    /// 1 (disagree) to 5 (agree).
    Likert5,
    /// Likert 1..5 or the string `"dont_know"`.
    Likert5OrDontKnow,
    Text,
    /// Zero-based index into `options`.
    MultipleChoice {
        options: Vec<String>,
    },
    /// Answered through the attribute-selection endpoint, not the form.
    AttributeSelection {
        max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: String,
    pub kind: ItemKind,
    pub prompt: String,
    pub guidance_only: bool,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireForm {
    pub stage: Stage,
    pub items: Vec<QuestionItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Number(u8),
    Text(String),
}

fn item(id: &str, kind: ItemKind, prompt: &str, guidance_only: bool) -> QuestionItem {
    let required = matches!(
        kind,
        ItemKind::Likert5 | ItemKind::Likert5OrDontKnow | ItemKind::MultipleChoice { .. }
    );
    QuestionItem {
        id: id.into(),
        kind,
        prompt: prompt.into(),
        guidance_only,
        required,
    }
}

fn reason(id: &str, guidance_only: bool) -> QuestionItem {
    item(
        &format!("{id}_reason"),
        ItemKind::Text,
        &format!("Optional: explain your answer to {id}."),
        guidance_only,
    )
}

fn choices(options: &[&str]) -> ItemKind {
    ItemKind::MultipleChoice {
        options: options.iter().map(|s| s.to_string()).collect(),
    }
}

/// Every item of a stage, including items hidden in some condition.
pub fn all_items(stage: Stage) -> Vec<QuestionItem> {
    use ItemKind::*;
    match stage {
        Stage::Pre => vec![
            item(
                "D1",
                choices(&["18-29", "30-39", "40-49", "50-59", "60 or older", "Prefer not to say"]),
                "Your age group.",
                false,
            ),
            item(
                "D2",
                choices(&["Female", "Male", "Another identity", "Prefer not to say"]),
                "Your gender.",
                false,
            ),
            item(
                "Q1",
                Likert5,
                "Should every demographic group receive the favorable outcome at the same rate?",
                false,
            ),
            reason("Q1", false),
            item("Q2", Likert5, "Were the judgments you just made fair?", false),
            reason("Q2", false),
            item(
                "Q3",
                AttributeSelection { max: 5 },
                "Pick up to five attributes you relied on most in the judgments you just made.",
                false,
            ),
            item(
                "Q3_reason",
                Text,
                "Optional: why did those attributes matter to you?",
                false,
            ),
        ],
        Stage::Post => vec![
            item("Q4", Likert5, "Were your most recent judgments fair?", false),
            reason("Q4", false),
            item("Q5", Likert5, "Did you act on the feedback the system gave you?", false),
            reason("Q5", false),
            item(
                "Q6",
                Likert5,
                "Could you tell why the fair model judged the example profiles the way it did?",
                true,
            ),
            reason("Q6", true),
            item("Q7", Likert5OrDontKnow, "Was the fair model itself fair?", true),
            reason("Q7", true),
            item(
                "Q8",
                Likert5,
                "Did the chart labeled as your criteria reflect how you actually decided?",
                true,
            ),
            reason("Q8", true),
            item(
                "Q9",
                Text,
                "Which parts of the feedback did you doubt, and which did you agree with?",
                false,
            ),
            item(
                "Q10",
                Likert5,
                "Did this study make you rethink what fairness means for you and for society?",
                false,
            ),
            reason("Q10", false),
            item(
                "Q11",
                AttributeSelection { max: 5 },
                "Pick up to five attributes you relied on most in your latest judgments.",
                false,
            ),
            item(
                "Q11_reason",
                Text,
                "Optional: why did those attributes matter to you?",
                false,
            ),
            item(
                "Q12",
                Text,
                "Did the way you judged profiles change after the feedback? How?",
                false,
            ),
            item(
                "Q13",
                Text,
                "Would you want software support for making fair judgments? In which situations?",
                false,
            ),
            item(
                "Q14",
                Text,
                "What worries you, if anything, about such support being used in practice?",
                false,
            ),
        ],
    }
}

/// The form a participant of `condition` sees.
pub fn form(stage: Stage, condition: Condition) -> QuestionnaireForm {
    QuestionnaireForm {
        stage,
        items: all_items(stage)
            .into_iter()
            .filter(|i| condition == Condition::FairMachineGuidance || !i.guidance_only)
            .collect(),
    }
}

/// Checks answers against a form. Attribute-selection items must not be
/// answered here.
pub fn validate_answers(form: &QuestionnaireForm, answers: &BTreeMap<String, AnswerValue>) -> Result<(), String> {
    for (id, value) in answers {
        let Some(item) = form.items.iter().find(|i| &i.id == id) else {
            return Err(format!("unknown or hidden item `{id}`"));
        };
        let ok = match (&item.kind, value) {
            (ItemKind::Likert5, AnswerValue::Number(n)) => (1..=5).contains(n),
            (ItemKind::Likert5OrDontKnow, AnswerValue::Number(n)) => (1..=5).contains(n),
            (ItemKind::Likert5OrDontKnow, AnswerValue::Text(t)) => t == DONT_KNOW,
            (ItemKind::Text, AnswerValue::Text(t)) => t.chars().count() <= MAX_TEXT_LEN,
            (ItemKind::MultipleChoice { options }, AnswerValue::Number(n)) => usize::from(*n) < options.len(),
            (ItemKind::AttributeSelection { .. }, _) => {
                return Err(format!("`{id}` is answered through the attribute selection"));
            }
            _ => false,
        };
        if !ok {
            return Err(format!("invalid answer for `{id}`"));
        }
    }
    for item in &form.items {
        if item.required && !answers.contains_key(&item.id) {
            return Err(format!("missing answer for `{}`", item.id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckQuestion {
    pub id: String,
    pub prompt: String,
    pub options: Vec<String>,
}

/// Comprehension questions on reading the weight charts, with the index of
/// each correct option.
pub fn check_test() -> Vec<(CheckQuestion, u8)> {
    let q = |id: &str, prompt: &str, options: &[&str], correct: u8| {
        (
            CheckQuestion {
                id: id.into(),
                prompt: prompt.into(),
                options: options.iter().map(|s| s.to_string()).collect(),
            },
            correct,
        )
    };
    vec![
        q(
            "C1",
            "A bar extends to the right of the center line. What does it mean for that attribute?",
            &[
                "It pushes the decision toward the selected outcome",
                "It pushes the decision away from the selected outcome",
                "It has no effect on the decision",
            ],
            0,
        ),
        q(
            "C2",
            "Which attributes are highlighted in each chart?",
            &[
                "Five picked at random",
                "The five with the largest positive weights",
                "The five with the largest weights in absolute value",
            ],
            2,
        ),
        q(
            "C3",
            "Which chart shows the criteria of the fair model?",
            &[
                "The chart of your criteria",
                "The chart of the fair model",
                "Both charts",
            ],
            1,
        ),
    ]
}
