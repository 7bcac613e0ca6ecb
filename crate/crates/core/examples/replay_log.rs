//! Writes a simulated session's event log to disk, reads it back and
//! checks that replay reproduces the live report exactly.
//!
//! ```text
//! cargo run --release --example replay_log
//! ```

use fairguide::dataset::{Encoder, TaskSpec};
use fairguide::service::simulation::{group_blind_model, simulate_session};
use fairguide::service::{default_pool, read_log, write_log, SimulationSpec};
use fairguide::session::SessionState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = TaskSpec::credit();
    let pool = default_pool(&task, 0)?;
    let spec = SimulationSpec {
        task_id: task.task_id.clone(),
        ..SimulationSpec::default()
    };
    let base = group_blind_model(&pool, &Encoder::new(&task), &spec.guidance)?;
    let live = simulate_session(&spec, &pool, &base, 9, "replay-example")?;

    let path = std::env::temp_dir().join("fairguide-replay-example.jsonl");
    write_log(&path, &live.events)?;
    let events = read_log(&path, false)?;
    let replayed = SessionState::replay_verified(&events)?;
    let report = replayed.finalize();
    println!("{} events in {}", events.len(), path.display());
    println!("phase after replay: {}", replayed.phase);
    println!("report identical to live run: {}", report == live.report);
    std::fs::remove_file(&path)?;
    Ok(())
}
