//! Loads a CSV, draws a balanced session pool and encodes one profile.
//!
//! ```text
//! cargo run --example ingest_pool [-- income|credit [seed]]
//! ```

use std::path::PathBuf;

use fairguide::dataset::{load_csv, sample_pool, Encoder, TaskSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let task_id = args.next().unwrap_or_else(|| "income".into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let task = TaskSpec::builtin(&task_id).ok_or("unknown task")?;

    let csv = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("data/{task_id}_source.csv"));
    let profiles = load_csv(&csv, &task)?;
    let pool = sample_pool(&profiles, &task, seed)?;
    let (privileged, unprivileged) = pool.group_sizes();
    println!("{} source rows -> pool of {}", profiles.len(), pool.profiles.len());
    println!(
        "groups: {privileged} {} / {unprivileged} {}",
        task.group_labels[1], task.group_labels[0]
    );
    println!(
        "blocks: pre-test {}, mini-tests {:?}, post-test {}",
        pool.partition.pretest.len(),
        pool.partition.minitests.iter().map(Vec::len).collect::<Vec<_>>(),
        pool.partition.posttest.len()
    );

    let encoder = Encoder::new(&task);
    println!("encoded width {}, schema {}", encoder.width(), encoder.schema_hash());
    let first = pool.profile(&pool.partition.pretest[0]).expect("partitioned id");
    let encoded = encoder.encode(first)?;
    for (column, value) in encoder.columns().iter().zip(&encoded.features) {
        if *value != 0.0 {
            println!("  {:<40} {value:.3}", column.label());
        }
    }
    Ok(())
}
