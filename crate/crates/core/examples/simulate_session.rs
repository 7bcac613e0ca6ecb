//! Runs one scripted participant through a full session and prints the
//! phase trace and the final report.
//!
//! ```text
//! cargo run --release --example simulate_session [-- guidance|feedback]
//! ```

use fairguide::dataset::{Encoder, TaskSpec};
use fairguide::service::simulation::{group_blind_model, simulate_session};
use fairguide::service::{default_pool, SimulationSpec};
use fairguide::session::{Condition, EventKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let condition: Condition = std::env::args().nth(1).unwrap_or_else(|| "guidance".into()).parse()?;
    let task = TaskSpec::income();
    let pool = default_pool(&task, 0)?;
    let spec = SimulationSpec {
        condition,
        n_students: 1,
        ..SimulationSpec::default()
    };
    let base = group_blind_model(&pool, &Encoder::new(&task), &spec.guidance)?;
    let session = simulate_session(&spec, &pool, &base, 42, "example-session")?;

    for e in &session.events {
        if let EventKind::PhaseAdvanced { from, to } = &e.event {
            println!("#{:<3} {from} -> {to}", e.seq);
        }
    }
    let r = &session.report;
    println!(
        "{} responses; unfairness {:+.3} -> {:+.3}; key attribute change {:.2}",
        r.responses,
        r.pre_unfairness.unwrap_or(f64::NAN),
        r.post_unfairness.unwrap_or(f64::NAN),
        r.key_attribute_change_rate.unwrap_or(f64::NAN)
    );
    Ok(())
}
