//! Regenerates the synthetic source tables shipped under `data/`.
//!
//! ```text
//! cargo run --example generate_sources [-- <out-dir>]
//! ```

use std::fs::File;
use std::path::PathBuf;

use fairguide::dataset::{synth, write_csv, TaskSpec};
use fairguide::service::simulation::{SOURCE_ROWS, SOURCE_SEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data"));
    std::fs::create_dir_all(&dir)?;
    for task in [TaskSpec::income(), TaskSpec::credit()] {
        let profiles = synth::source_profiles(&task, SOURCE_ROWS, SOURCE_SEED)?;
        let path = dir.join(format!("{}_source.csv", task.task_id));
        write_csv(File::create(&path)?, &task, &profiles)?;
        let privileged = profiles.iter().filter(|p| p.z == 1).count();
        let favorable = profiles.iter().filter(|p| p.y == task.favorable_label).count();
        println!(
            "{}: {} rows, {privileged} privileged, {favorable} with the favorable label",
            path.display(),
            profiles.len()
        );
    }
    Ok(())
}
