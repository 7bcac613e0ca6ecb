//! Sweeps the parity penalty on the bias benchmark and reports how the
//! teacher's unfairness and accuracy trade off.
//!
//! ```text
//! cargo run --release --example fair_teacher
//! ```

use fairguide::dataset::synth;
use fairguide::fairness::{fit_fair, quota_decide, unfairness_score, FairTrainConfig};
use fairguide::linmodel::LabeledExample;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth::shipped_bias_benchmark();
    let examples: Vec<LabeledExample> = data
        .iter()
        .map(|p| LabeledExample::new(p.features.clone(), p.y, p.z))
        .collect();
    println!("{} benchmark rows, columns {:?}", data.len(), synth::BENCHMARK_COLUMNS);
    println!("{:>8} {:>12} {:>10}", "lambda", "unfairness", "accuracy");
    for lambda in [0.0, 0.5, 2.0, 8.0] {
        let config = FairTrainConfig {
            penalty_weight: lambda,
            ..FairTrainConfig::default()
        };
        let model = fit_fair(&examples, &config)?.model;
        let decisions = quota_decide(&model, &data, synth::BENCHMARK_QUOTA, 1)?;
        let report = unfairness_score(&decisions)?;
        let hits = data
            .iter()
            .filter(|p| decisions.decision_of(&p.profile_id) == Some(p.y))
            .count();
        println!(
            "{lambda:>8.1} {:>+12.4} {:>10.4}",
            report.score,
            hits as f64 / data.len() as f64
        );
    }
    Ok(())
}
