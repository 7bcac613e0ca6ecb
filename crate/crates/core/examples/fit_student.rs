//! Fits a logistic student model to a block of decisions and shows what it
//! weighs most.
//!
//! ```text
//! cargo run --example fit_student
//! ```

use fairguide::dataset::{Encoder, TaskSpec};
use fairguide::fairness::{quota_decide, unfairness_score};
use fairguide::linmodel::{fit, LabeledExample, TrainConfig};
use fairguide::service::default_pool;
use fairguide::teaching::top_weights;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = TaskSpec::income();
    let pool = default_pool(&task, 0)?;
    let encoder = Encoder::new(&task);
    let encoded = encoder.encode_all(&pool.profiles)?;

    // the "participant" here simply reports the ground-truth labels
    let examples: Vec<LabeledExample> = encoded
        .iter()
        .map(|p| LabeledExample::new(p.features.clone(), p.y, p.z))
        .collect();
    let outcome = fit(&examples, &TrainConfig::default())?;
    let model = outcome.model;
    println!(
        "loss {:.4} -> {:.4} in {} epochs (degenerate: {})",
        outcome.loss_trace.first().copied().unwrap_or(f64::NAN),
        outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
        outcome.loss_trace.len(),
        outcome.degenerate
    );

    let hits = encoded
        .iter()
        .filter(|p| u8::from(model.predict_prob(&p.features).unwrap_or(0.5) >= 0.5) == p.y)
        .count();
    println!("training accuracy {:.3}", hits as f64 / encoded.len() as f64);

    let decisions = quota_decide(&model, &encoded, task.positive_quota, task.favorable_label)?;
    let report = unfairness_score(&decisions)?;
    println!(
        "quota decisions: {:.3} vs {:.3}, unfairness {:+.3}",
        report.rate_privileged, report.rate_unprivileged, report.score
    );
    for w in top_weights(&model.weights, encoder.columns(), 5) {
        println!("  {:<40} {:+.3}", encoder.columns()[w.column].label(), w.weight);
    }
    Ok(())
}
