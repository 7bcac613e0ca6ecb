mod common;

use std::collections::{BTreeMap, BTreeSet};

use fairguide::dataset::{sample_pool, synth, AttributeKind, AttributeValue, Encoder, Profile, TaskSpec};
use fairguide::fairness::{
    fit_fair, parity_penalty, quota_count, quota_decide, unfairness_score, Decision, DecisionSet, FairTrainConfig,
};
use fairguide::linmodel::{fit, loss_gradient, sgd_step, LabeledExample, LinearModel, TrainConfig};
use fairguide::service::{mann_whitney_u, EventStore};
use fairguide::session::{
    key_attribute_change_rate, AttributeSelection, Command, Condition, Phase, ResponseItem, SessionState, Stage,
};
use fairguide::teaching::{select_from, teaching_objective, top_weights, Candidate};
use proptest::prelude::*;
use proptest::sample::select;

fn task_strategy() -> impl Strategy<Value = TaskSpec> {
    prop_oneof![Just(TaskSpec::income()), Just(TaskSpec::credit())]
}

/// A schema-valid profile: one draw in [0, 1) per attribute picks the
/// category or the position within the numeric range.
fn profile_from(task: &TaskSpec, draws: &[f64], label: u8, id: &str) -> Profile {
    let attributes: BTreeMap<String, AttributeValue> = task
        .attributes
        .iter()
        .zip(draws)
        .map(|(a, &u)| {
            let value = match &a.kind {
                AttributeKind::Categorical { categories } => {
                    AttributeValue::Text(categories[(u * categories.len() as f64) as usize].clone())
                }
                AttributeKind::Numeric { range } => {
                    AttributeValue::Number((range[0] + u * (range[1] - range[0])).round())
                }
            };
            (a.name.clone(), value)
        })
        .collect();
    Profile::new(task, id, attributes, label).unwrap()
}

fn model_strategy(width: usize) -> impl Strategy<Value = LinearModel> {
    (prop::collection::vec(-2.0..2.0f64, width), -1.0..1.0f64).prop_map(|(w, b)| LinearModel::new(w, b))
}

fn examples_strategy(width: usize) -> impl Strategy<Value = Vec<LabeledExample>> {
    prop::collection::vec(
        (prop::collection::vec(0.0..1.0f64, width), 0..2u8, 0..2u8).prop_map(|(x, y, z)| LabeledExample::new(x, y, z)),
        4..30,
    )
    .prop_filter("both groups", |ex| {
        ex.iter().any(|e| e.z == 0) && ex.iter().any(|e| e.z == 1)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoding_is_injective_and_decodes(
        task in task_strategy(),
        a in prop::collection::vec(0.0..1.0f64, 10),
        b in prop::collection::vec(0.0..1.0f64, 10),
    ) {
        let encoder = Encoder::new(&task);
        let pa = profile_from(&task, &a, 0, "a");
        let pb = profile_from(&task, &b, 0, "b");
        let ea = encoder.encode(&pa).unwrap();
        let eb = encoder.encode(&pb).unwrap();
        prop_assert_eq!(ea.features.len(), encoder.width());
        prop_assert!(ea.features.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(pa.attributes == pb.attributes, ea.features == eb.features);

        let back = encoder.decode(&ea.features).unwrap();
        for (name, value) in &pa.attributes {
            match (value, &back[name]) {
                (AttributeValue::Number(x), AttributeValue::Number(y)) => prop_assert!((x - y).abs() < 1e-9),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn pools_have_equal_base_rates_by_count(task in task_strategy(), seed in 0..1000u64) {
        let source = synth::source_profiles(&task, 1500, 3).unwrap();
        let pool = sample_pool(&source, &task, seed).unwrap();
        pool.validate().unwrap();
        let count = |z: u8, y: u8| pool.profiles.iter().filter(|p| p.z == z && p.y == y).count();
        // equal rates means the cross products agree exactly
        prop_assert_eq!(count(1, 1) * (count(0, 0) + count(0, 1)), count(0, 1) * (count(1, 0) + count(1, 1)));
        let part = &pool.partition;
        let blocks: BTreeSet<&String> = part.pretest.iter().chain(part.minitests.iter().flatten()).collect();
        prop_assert_eq!(blocks.len(), 200);
        prop_assert_eq!(&part.posttest, &part.pretest);
    }

    #[test]
    fn unfairness_matches_counting(
        items in prop::collection::vec((0..2u8, 0..2u8), 2..80),
        favorable in 0..2u8,
    ) {
        let decisions: Vec<Decision> = items
            .iter()
            .enumerate()
            .map(|(i, &(z, decision))| Decision { profile_id: format!("p{i}"), z, decision })
            .collect();
        let set = DecisionSet::new(decisions, favorable).unwrap();
        let rate = |z: u8| {
            let n = items.iter().filter(|d| d.0 == z).count();
            let f = items.iter().filter(|d| d.0 == z && d.1 == favorable).count();
            (n > 0).then(|| f as f64 / n as f64)
        };
        match (rate(1), rate(0), unfairness_score(&set)) {
            (Some(r1), Some(r0), Ok(report)) => {
                prop_assert_eq!(report.rate_privileged, r1);
                prop_assert_eq!(report.rate_unprivileged, r0);
                prop_assert_eq!(report.score, r1 - r0);
            }
            (Some(_), Some(_), Err(e)) => prop_assert!(false, "{}", e),
            (_, _, result) => prop_assert!(result.is_err()),
        }
    }

    #[test]
    fn parity_penalty_is_a_squared_gap(model in model_strategy(4), examples in examples_strategy(4)) {
        let pen = parity_penalty(&model, &examples).unwrap();
        let mean = |z: u8| {
            let g: Vec<f64> = examples.iter().filter(|e| e.z == z).map(|e| model.predict_prob(&e.features).unwrap()).collect();
            g.iter().sum::<f64>() / g.len() as f64
        };
        let gap = mean(1) - mean(0);
        prop_assert!(pen.value >= 0.0);
        prop_assert!((pen.value - gap * gap).abs() < 1e-12);
        prop_assert_eq!(pen.value == 0.0, gap == 0.0);
    }

    #[test]
    fn sgd_step_is_one_gradient_step(model in model_strategy(5), examples in examples_strategy(5), eta in 0.001..2.0f64) {
        let e = &examples[0];
        let g = loss_gradient(&model, e).unwrap();
        let stepped = sgd_step(&model, e, eta).unwrap();
        for ((w, w0), gw) in stepped.weights.iter().zip(&model.weights).zip(&g.grad_w) {
            prop_assert_eq!(*w, w0 - eta * gw);
        }
        prop_assert_eq!(stepped.bias, model.bias - eta * g.grad_b);
    }

    #[test]
    fn teaching_objective_expands(
        student in model_strategy(4),
        teacher in model_strategy(4),
        examples in examples_strategy(4),
        eta in 0.01..1.0f64,
    ) {
        let e = &examples[0];
        let score = teaching_objective(&student, &teacher, e, eta).unwrap();
        let g = loss_gradient(&student, e).unwrap();
        let mut diff = student.params();
        for (d, t) in diff.iter_mut().zip(teacher.params()) {
            *d -= t;
        }
        let mut grad = g.grad_w.clone();
        grad.push(g.grad_b);
        let dot: f64 = diff.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let expanded = diff.iter().map(|d| d * d).sum::<f64>() - 2.0 * eta * dot + eta * eta * grad.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((score - expanded).abs() < 1e-9, "{} vs {}", score, expanded);
    }

    #[test]
    fn teaching_labels_are_teacher_decisions(
        student in model_strategy(4),
        teacher in model_strategy(4),
        rows in prop::collection::vec((prop::collection::vec(0.0..1.0f64, 4), 0..2u8, 0..2u8, 0..2u8), 1..25),
    ) {
        let candidates: Vec<Candidate> = rows
            .iter()
            .enumerate()
            .map(|(i, (x, z, s, t))| Candidate {
                profile_id: format!("c{i:02}"),
                features: x.clone(),
                z: *z,
                student_decision: *s,
                teacher_decision: *t,
            })
            .collect();
        let picked = select_from(&student, &teacher, &candidates, 0.1, 5).unwrap();
        prop_assert_eq!(picked.len(), rows.len().min(5));
        let ids: BTreeSet<&str> = picked.iter().map(|p| p.profile_id.as_str()).collect();
        prop_assert_eq!(ids.len(), picked.len());
        for p in &picked {
            let c = candidates.iter().find(|c| c.profile_id == p.profile_id).unwrap();
            prop_assert_eq!(p.teacher_decision, c.teacher_decision);
            prop_assert_eq!(p.student_decision, c.student_decision);
        }
    }

    #[test]
    fn top_weights_follow_magnitude(weights in prop::collection::vec(select(vec![-1.5, -0.5, 0.0, 0.5, 1.5, 2.0]), 5..12)) {
        let columns: Vec<_> = (0..weights.len())
            .map(|i| fairguide::dataset::Column { attribute: format!("a{i}"), category: None })
            .collect();
        let top = top_weights(&weights, &columns, 5);
        prop_assert_eq!(top.len(), 5);
        // oracle: stable sort of column indices by descending magnitude
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| weights[b].abs().partial_cmp(&weights[a].abs()).unwrap());
        let expected: Vec<usize> = order.into_iter().take(5).collect();
        prop_assert_eq!(top.iter().map(|w| w.column).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn quota_selects_the_ceiling(
        model in model_strategy(3),
        xs in prop::collection::vec((prop::collection::vec(0.0..1.0f64, 3), 0..2u8), 1..60),
        quota in select(vec![0.1, 0.2, 0.25, 0.3, 0.5]),
    ) {
        let pool: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, (x, z))| fairguide::dataset::EncodedProfile { profile_id: format!("p{i:03}"), features: x.clone(), z: *z, y: 0 })
            .collect();
        let set = quota_decide(&model, &pool, quota, 1).unwrap();
        let chosen = set.items().iter().filter(|d| d.decision == 1).count();
        let k = ((quota * pool.len() as f64) - 1e-9).ceil() as usize;
        prop_assert_eq!(chosen, k);
        prop_assert_eq!(quota_count(quota, pool.len()), k);
        // nobody left out scores above anyone chosen
        let prob = |id: &str| model.predict_prob(&pool.iter().find(|p| p.profile_id == id).unwrap().features).unwrap();
        let min_in = set.items().iter().filter(|d| d.decision == 1).map(|d| prob(&d.profile_id)).fold(f64::INFINITY, f64::min);
        let max_out = set.items().iter().filter(|d| d.decision == 0).map(|d| prob(&d.profile_id)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(max_out <= min_in);
    }

    #[test]
    fn change_rate_is_jaccard_distance(
        pre in prop::collection::btree_set(select(vec!["a", "b", "c", "d", "e", "f", "g"]), 0..=5),
        post in prop::collection::btree_set(select(vec!["a", "b", "c", "d", "e", "f", "g"]), 0..=5),
    ) {
        let sel = |stage, s: &BTreeSet<&str>| AttributeSelection { stage, attributes: s.iter().map(|x| x.to_string()).collect() };
        let rate = key_attribute_change_rate(&sel(Stage::Pre, &pre), &sel(Stage::Post, &post));
        let both = pre.iter().filter(|x| post.contains(*x)).count();
        let either = pre.len() + post.len() - both;
        let expected = if either == 0 { 0.0 } else { 1.0 - both as f64 / either as f64 };
        prop_assert_eq!(rate, expected);
    }

    #[test]
    fn mann_whitney_u_counts_pairs(
        a in prop::collection::vec(0..6u8, 1..=8),
        b in prop::collection::vec(0..6u8, 1..=8),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let mut pairs = 0.0;
        for x in &a {
            for y in &b {
                pairs += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
            }
        }
        let r = mann_whitney_u(&a, &b).unwrap();
        prop_assert_eq!(r.u, pairs);
        prop_assert!(r.p > 0.0 && r.p <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn zero_penalty_fit_is_plain_fit(examples in examples_strategy(3)) {
        prop_assume!(examples.iter().any(|e| e.label == 0) && examples.iter().any(|e| e.label == 1));
        let base = TrainConfig { epochs: 60, ..TrainConfig::default() };
        let plain = fit(&examples, &base).unwrap();
        let fair = fit_fair(&examples, &FairTrainConfig { base, penalty_weight: 0.0, ..FairTrainConfig::default() }).unwrap();
        prop_assert_eq!(plain.model.weights, fair.model.weights);
        prop_assert_eq!(plain.model.bias, fair.model.bias);
        for w in plain.loss_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    /// Random command streams, legal or not, keep the phase graph, the
    /// block limits and replay determinism.
    #[test]
    fn sessions_survive_arbitrary_clients(
        guidance in any::<bool>(),
        script in prop::collection::vec((0..7u8, 0..120usize, 0..2u8, 1..40usize), 1..60),
    ) {
        let pool = common::pool("income");
        let condition = if guidance { Condition::FairMachineGuidance } else { Condition::BiasFeedback };
        let mut s = common::Scripted::new(&pool, condition, "fuzz");
        for (op, offset, decision, len) in script {
            let phase = s.state.phase.clone();
            let command = match op {
                0 | 1 => {
                    // a slice of the current block, or of the pre-test
                    let block = s.state.block(&phase).or_else(|| s.state.block(&Phase::PreTest)).unwrap();
                    let start = offset % block.len();
                    let items = block[start..(start + len).min(block.len())]
                        .iter()
                        .map(|id| ResponseItem { profile_id: id.clone(), decision })
                        .collect();
                    Command::SubmitResponses(items)
                }
                2 if s.state.training_job().is_some() => {
                    let result = s.state.training_job().unwrap().run().map_err(|e| e.to_string());
                    Command::CompleteTraining(result)
                }
                2 | 3 => Command::ShowTreatment,
                4 => Command::SubmitCheckTest(
                    fairguide::session::forms::check_test().into_iter().map(|(q, a)| (q.id, (a + decision) % 3)).collect(),
                ),
                5 => Command::SubmitAttributes { stage: Stage::Pre, attributes: vec!["race".into(), "age".into()] },
                _ => Command::SubmitQuestionnaire { stage: Stage::Pre, answers: common::complete_form(Stage::Pre, condition) },
            };
            let before = s.events.len();
            if s.run(command).is_err() {
                prop_assert_eq!(s.events.len(), before);
            }
            if s.state.phase != phase {
                prop_assert!(phase.allows(&s.state.phase, condition), "{} -> {}", phase, s.state.phase);
            }
        }
        let mut per_phase: BTreeMap<String, usize> = BTreeMap::new();
        for r in &s.state.responses {
            *per_phase.entry(r.phase.to_string()).or_default() += 1;
        }
        for (phase, n) in &per_phase {
            let limit = if phase.contains("mini") { 20 } else { 100 };
            prop_assert!(*n <= limit, "{}: {}", phase, n);
        }
        let replayed = SessionState::replay_verified(&s.events).unwrap();
        prop_assert_eq!(&replayed.phase, &s.state.phase);
        prop_assert_eq!(replayed.finalize(), s.state.finalize());
    }

    /// Cutting the log anywhere loses at most the event being written.
    #[test]
    fn any_crash_point_recovers_a_prefix(cut in 0.0..1.0f64) {
        let pool = common::pool("credit");
        let mut s = common::Scripted::new(&pool, Condition::BiasFeedback, "cut");
        let decide = common::favor_privileged(&pool.task);
        while s.state.phase != Phase::PostTest {
            prop_assert!(s.step(&decide, &["housing"]));
        }
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path()).unwrap();
        store.append("cut", &s.events).unwrap();
        let path = store.path("cut");
        let bytes = std::fs::read(&path).unwrap();
        let at = ((bytes.len() as f64) * cut) as usize;
        std::fs::write(&path, &bytes[..at]).unwrap();

        let kept = store.load("cut").unwrap();
        let complete_lines = bytes[..at].iter().filter(|&&c| c == b'\n').count();
        prop_assert!(kept.len() == complete_lines || kept.len() == complete_lines + 1);
        prop_assert_eq!(&kept[..], &s.events[..kept.len()]);
        if !kept.is_empty() {
            let state = SessionState::replay(&kept).unwrap();
            prop_assert_eq!(state.responses.len(), SessionState::replay(&s.events[..kept.len()]).unwrap().responses.len());
        }
    }
}
