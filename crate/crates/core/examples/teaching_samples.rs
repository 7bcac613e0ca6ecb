//! A biased simulated participant answers the pre-test; the student and
//! fair teacher models are estimated from those answers and the guidance
//! packet for the first treatment is printed as JSON.
//!
//! ```text
//! cargo run --release --example teaching_samples [-- income|credit]
//! ```

use fairguide::dataset::{Encoder, TaskSpec};
use fairguide::service::simulation::{biased_student, group_blind_model};
use fairguide::service::{default_pool, SimulationSpec};
use fairguide::teaching::{build_packet, estimate_student, estimate_teacher, Answer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task_id = std::env::args().nth(1).unwrap_or_else(|| "income".into());
    let task = TaskSpec::builtin(&task_id).ok_or("unknown task")?;
    let pool = default_pool(&task, 0)?;
    let encoder = Encoder::new(&task);
    let spec = SimulationSpec {
        task_id,
        ..SimulationSpec::default()
    };
    let base = group_blind_model(&pool, &encoder, &spec.guidance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let participant = biased_student(&base, &encoder, &spec, &mut rng);

    let encoded = encoder.encode_all(&pool.profiles)?;
    let block: Vec<_> = pool
        .partition
        .pretest
        .iter()
        .map(|id| encoded.iter().find(|p| &p.profile_id == id).expect("pool id").clone())
        .collect();
    let decisions = participant.answer_block(&block, task.positive_quota, &mut rng)?;
    let answers: Vec<Answer> = block
        .into_iter()
        .zip(decisions)
        .map(|(p, d)| Answer::new(p, d))
        .collect();

    let student = estimate_student(&answers, &spec.guidance.student)?;
    let teacher = estimate_teacher(&answers, &encoded, &task, &spec.guidance.teacher)?;
    eprintln!(
        "participant |unfairness| {:.3}, teacher {:.3}",
        teacher.participant_unfairness, teacher.teacher_unfairness
    );
    let packet = build_packet(
        &student,
        &teacher,
        &answers,
        &encoder,
        spec.guidance.eta,
        spec.guidance.samples,
    )?;
    println!("{}", serde_json::to_string_pretty(&packet)?);
    Ok(())
}
