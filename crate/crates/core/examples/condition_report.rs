//! Simulates both conditions on both tasks and compares them with the
//! Mann-Whitney U test, pooled and per task.
//!
//! ```text
//! cargo run --release --example condition_report [-- <students per arm>]
//! ```

use fairguide::dataset::TaskSpec;
use fairguide::service::{analyze, default_pool, run_simulation, SimulationSpec};
use fairguide::session::Condition;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let mut reports = Vec::new();
    for task in [TaskSpec::income(), TaskSpec::credit()] {
        let pool = default_pool(&task, 0)?;
        for (seed, condition) in [(1, Condition::BiasFeedback), (2, Condition::FairMachineGuidance)] {
            let spec = SimulationSpec {
                task_id: task.task_id.clone(),
                condition,
                n_students: n,
                seed,
                ..SimulationSpec::default()
            };
            reports.extend(run_simulation(&spec, &pool)?);
        }
    }
    let analysis = analyze(&reports);
    print!("{}", analysis.pooled);
    for scope in &analysis.per_task {
        print!("{scope}");
    }
    Ok(())
}
