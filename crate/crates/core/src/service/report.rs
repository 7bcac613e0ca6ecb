//! Aggregation of session reports into condition comparisons.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::stats::{mann_whitney_u, median, MannWhitney};
use crate::session::{Condition, SessionReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub condition: Condition,
    pub n_completed: usize,
    pub n_excluded: usize,
    /// `|pre| − |post|` per completed session.
    pub improvements: Vec<f64>,
    pub change_rates: Vec<f64>,
    /// `[pre, post]` signed unfairness per completed session.
    pub scatter: Vec<[f64; 2]>,
    pub median_pre_abs: Option<f64>,
    pub median_post_abs: Option<f64>,
    pub median_improvement: Option<f64>,
    pub median_change_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionComparison {
    /// `"pooled"` or a task id.
    pub scope: String,
    pub arms: Vec<ArmSummary>,
    /// Bias feedback versus guidance on improvement; `None` unless both
    /// arms have completed sessions.
    pub improvement_test: Option<MannWhitney>,
    pub change_rate_test: Option<MannWhitney>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub pooled: ConditionComparison,
    pub per_task: Vec<ConditionComparison>,
}

fn summarize(condition: Condition, reports: &[&SessionReport]) -> ArmSummary {
    let mine: Vec<&&SessionReport> = reports.iter().filter(|r| r.condition == condition).collect();
    let completed: Vec<&&SessionReport> = mine
        .iter()
        .copied()
        .filter(|r| r.excluded.is_none() && !r.partial)
        .collect();
    let scatter: Vec<[f64; 2]> = completed
        .iter()
        .filter_map(|r| Some([r.pre_unfairness?, r.post_unfairness?]))
        .collect();
    let improvements: Vec<f64> = completed.iter().filter_map(|r| r.improvement()).collect();
    let change_rates: Vec<f64> = completed.iter().filter_map(|r| r.key_attribute_change_rate).collect();
    let pre: Vec<f64> = scatter.iter().map(|s| s[0].abs()).collect();
    let post: Vec<f64> = scatter.iter().map(|s| s[1].abs()).collect();
    ArmSummary {
        condition,
        n_completed: completed.len(),
        n_excluded: mine.iter().filter(|r| r.excluded.is_some()).count(),
        median_pre_abs: median(&pre),
        median_post_abs: median(&post),
        median_improvement: median(&improvements),
        median_change_rate: median(&change_rates),
        improvements,
        change_rates,
        scatter,
    }
}

/// Compares the two conditions over `reports`.
pub fn compare(reports: &[&SessionReport], scope: &str) -> ConditionComparison {
    let arms: Vec<ArmSummary> = [Condition::BiasFeedback, Condition::FairMachineGuidance]
        .into_iter()
        .map(|c| summarize(c, reports))
        .filter(|a| a.n_completed + a.n_excluded > 0)
        .collect();
    let arm = |c| arms.iter().find(|a| a.condition == c);
    let (improvement_test, change_rate_test) = match (arm(Condition::BiasFeedback), arm(Condition::FairMachineGuidance))
    {
        (Some(bf), Some(fmg)) => (
            mann_whitney_u(&bf.improvements, &fmg.improvements),
            mann_whitney_u(&bf.change_rates, &fmg.change_rates),
        ),
        _ => (None, None),
    };
    ConditionComparison {
        scope: scope.into(),
        arms,
        improvement_test,
        change_rate_test,
    }
}

/// Pooled and per-task comparisons.
pub fn analyze(reports: &[SessionReport]) -> Analysis {
    let all: Vec<&SessionReport> = reports.iter().collect();
    let tasks: BTreeSet<&str> = reports.iter().map(|r| r.task_id.as_str()).collect();
    Analysis {
        pooled: compare(&all, "pooled"),
        per_task: tasks
            .into_iter()
            .map(|t| {
                let subset: Vec<&SessionReport> = reports.iter().filter(|r| r.task_id == t).collect();
                compare(&subset, t)
            })
            .collect(),
    }
}

impl std::fmt::Display for ConditionComparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "[{}]", self.scope)?;
        for a in &self.arms {
            writeln!(
                f,
                "  {:<22} completed {:>3}  excluded {:>3}  median |pre| {}  median |post| {}  median improvement {}  median change rate {}",
                a.condition.as_str(),
                a.n_completed,
                a.n_excluded,
                show(a.median_pre_abs),
                show(a.median_post_abs),
                show(a.median_improvement),
                show(a.median_change_rate),
            )?;
        }
        match &self.improvement_test {
            Some(t) => writeln!(f, "  improvement: U = {:.1}, p = {:.4e}", t.u, t.p)?,
            None => writeln!(f, "  improvement: needs completed sessions in both conditions")?,
        }
        if let Some(t) = &self.change_rate_test {
            writeln!(f, "  key attribute change rate: U = {:.1}, p = {:.4e}", t.u, t.p)?;
        }
        Ok(())
    }
}
