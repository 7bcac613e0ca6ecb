//! Synthetic source populations for the shipped tasks.
//!
//! The generators mimic the marginals of the census-income and
//! German-credit tables closely enough to drive simulations and tests. The
//! credit generator deliberately couples occupation and housing to gender,
//! and the label to those two attributes, so the sensitive attribute is
//! correlated with the label through proxies. These are reconstructions,
//! not the original data.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::encode::EncodedProfile;
use super::profile::{AttributeValue, Profile};
use super::schema::TaskSpec;
use super::DatasetError;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pick<'a, R: Rng>(rng: &mut R, options: &[&'a str], weights: &[f64]) -> &'a str {
    let dist = WeightedIndex::new(weights).expect("positive weights");
    options[dist.sample(rng)]
}

fn clamp_round(v: f64, lo: f64, hi: f64) -> f64 {
    v.round().clamp(lo, hi)
}

/// Generates `n` source profiles for one of the shipped tasks.
pub fn source_profiles(task: &TaskSpec, n: usize, seed: u64) -> Result<Vec<Profile>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = format!("{}-{:05}", task.task_id, i + 1);
            let (attrs, y) = match task.task_id.as_str() {
                "income" => income_row(&mut rng),
                "credit" => credit_row(&mut rng),
                other => {
                    return Err(DatasetError::Schema(format!(
                        "no synthetic generator for task `{other}`"
                    )))
                }
            };
            Profile::new(task, id, attrs, y)
        })
        .collect()
}

fn text(v: &str) -> AttributeValue {
    AttributeValue::Text(v.to_string())
}

const EDUCATION: [&str; 8] = [
    "Less-than-HS",
    "HS-grad",
    "Some-college",
    "Assoc",
    "Bachelors",
    "Masters",
    "Prof-school",
    "Doctorate",
];

fn income_row<R: Rng>(rng: &mut R) -> (BTreeMap<String, AttributeValue>, u8) {
    let race = pick(
        rng,
        &["White", "Black", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other"],
        &[0.5, 0.22, 0.16, 0.05, 0.07],
    );
    let gender = pick(rng, &["Male", "Female"], &[0.6, 0.4]);
    let age = clamp_round(Normal::new(40.0, 12.0).unwrap().sample(rng), 17.0, 90.0);
    let edu_idx = WeightedIndex::new([0.12, 0.32, 0.22, 0.08, 0.16, 0.06, 0.02, 0.02])
        .unwrap()
        .sample(rng);
    let occupation = if edu_idx >= 4 {
        pick(
            rng,
            &[
                "Exec-managerial",
                "Prof-specialty",
                "Tech-support",
                "Sales",
                "Adm-clerical",
            ],
            &[0.3, 0.4, 0.1, 0.12, 0.08],
        )
    } else {
        pick(
            rng,
            &[
                "Craft-repair",
                "Other-service",
                "Sales",
                "Handlers-cleaners",
                "Machine-op-inspct",
                "Adm-clerical",
                "Farming-fishing",
                "Transport-moving",
                "Priv-house-serv",
                "Protective-serv",
                "Armed-Forces",
                "Exec-managerial",
            ],
            &[0.18, 0.16, 0.1, 0.08, 0.1, 0.12, 0.05, 0.08, 0.02, 0.04, 0.01, 0.06],
        )
    };
    let hours = clamp_round(Normal::new(40.0, 11.0).unwrap().sample(rng), 1.0, 99.0);
    let country = pick(
        rng,
        &[
            "United-States",
            "Mexico",
            "Philippines",
            "Germany",
            "India",
            "Canada",
            "China",
            "Other",
        ],
        &[0.82, 0.05, 0.02, 0.01, 0.02, 0.01, 0.02, 0.05],
    );
    let marital = if age < 25.0 {
        pick(rng, &["Never-married", "Married-civ-spouse"], &[0.85, 0.15])
    } else {
        pick(
            rng,
            &[
                "Married-civ-spouse",
                "Never-married",
                "Divorced",
                "Separated",
                "Widowed",
            ],
            &[0.55, 0.2, 0.16, 0.04, 0.05],
        )
    };
    let relationship = match (marital, gender) {
        ("Married-civ-spouse", "Male") => "Husband",
        ("Married-civ-spouse", _) => "Wife",
        _ if age < 25.0 => pick(rng, &["Own-child", "Not-in-family"], &[0.6, 0.4]),
        _ => pick(rng, &["Not-in-family", "Unmarried", "Other-relative"], &[0.6, 0.3, 0.1]),
    };

    let occupation_effect = match occupation {
        "Exec-managerial" | "Prof-specialty" => 1.0,
        "Tech-support" | "Sales" | "Protective-serv" => 0.3,
        "Other-service" | "Handlers-cleaners" | "Priv-house-serv" | "Farming-fishing" => -0.8,
        _ => 0.0,
    };
    let score = -4.6
        + 0.45 * edu_idx as f64
        + occupation_effect
        + 0.045 * (hours - 40.0)
        + 0.035 * (age.min(60.0) - 40.0)
        + if marital == "Married-civ-spouse" { 1.2 } else { 0.0 }
        + if race == "White" { 0.3 } else { 0.0 }
        + if gender == "Male" { 0.3 } else { 0.0 };
    let y = u8::from(rng.random::<f64>() < sigmoid(score));

    let mut attrs = BTreeMap::new();
    attrs.insert("age".into(), AttributeValue::Number(age));
    attrs.insert("race".into(), text(race));
    attrs.insert("gender".into(), text(gender));
    attrs.insert("education".into(), text(EDUCATION[edu_idx]));
    attrs.insert("occupation".into(), text(occupation));
    attrs.insert("hours_per_week".into(), AttributeValue::Number(hours));
    attrs.insert("native_country".into(), text(country));
    attrs.insert("marital_status".into(), text(marital));
    attrs.insert("relationship".into(), text(relationship));
    (attrs, y)
}

fn credit_row<R: Rng>(rng: &mut R) -> (BTreeMap<String, AttributeValue>, u8) {
    let gender = pick(rng, &["Male", "Female"], &[0.5, 0.5]);
    let female = gender == "Female";
    let age = clamp_round(Normal::new(35.0, 11.0).unwrap().sample(rng), 19.0, 75.0);
    // injected inequality: occupation and housing depend on gender
    let occupation = if female {
        pick(
            rng,
            &[
                "Unskilled-nonresident",
                "Unskilled-resident",
                "Skilled",
                "Highly-skilled",
            ],
            &[0.12, 0.48, 0.32, 0.08],
        )
    } else {
        pick(
            rng,
            &[
                "Unskilled-nonresident",
                "Unskilled-resident",
                "Skilled",
                "Highly-skilled",
            ],
            &[0.02, 0.13, 0.55, 0.30],
        )
    };
    let housing = if female {
        pick(rng, &["Own", "Rent", "Free"], &[0.3, 0.6, 0.1])
    } else {
        pick(rng, &["Own", "Rent", "Free"], &[0.75, 0.15, 0.1])
    };
    let log_amount: f64 = Normal::new(7.8, 0.7).unwrap().sample(rng);
    let credit_amount = clamp_round(log_amount.exp(), 250.0, 18500.0);
    let duration = {
        let base = 6.0 + (credit_amount / 18500.0) * 40.0;
        clamp_round(Normal::new(base, 8.0).unwrap().sample(rng), 4.0, 72.0)
    };
    let purpose = pick(
        rng,
        &[
            "Car-new",
            "Car-used",
            "Furniture",
            "Radio-tv",
            "Appliances",
            "Repairs",
            "Education",
            "Retraining",
            "Business",
            "Other",
        ],
        &[0.23, 0.1, 0.18, 0.28, 0.01, 0.02, 0.05, 0.01, 0.1, 0.02],
    );

    let occupation_effect = match occupation {
        "Unskilled-nonresident" => 1.2,
        "Unskilled-resident" => 0.9,
        "Skilled" => 0.0,
        _ => -0.6,
    };
    let housing_effect = match housing {
        "Rent" => 0.9,
        "Free" => 0.4,
        _ => -0.3,
    };
    let purpose_effect = match purpose {
        "Education" | "Business" | "Car-new" => 0.3,
        "Car-used" | "Radio-tv" => -0.3,
        _ => 0.0,
    };
    let score = -1.6
        + occupation_effect
        + housing_effect
        + purpose_effect
        + 0.035 * (duration - 20.0)
        + 0.00006 * (credit_amount - 3000.0)
        - 0.02 * (age - 35.0);
    let y = u8::from(rng.random::<f64>() < sigmoid(score));

    let mut attrs = BTreeMap::new();
    attrs.insert("gender".into(), text(gender));
    attrs.insert("age".into(), AttributeValue::Number(age));
    attrs.insert("occupation".into(), text(occupation));
    attrs.insert("housing".into(), text(housing));
    attrs.insert("credit_amount".into(), AttributeValue::Number(credit_amount));
    attrs.insert("duration".into(), AttributeValue::Number(duration));
    attrs.insert("purpose".into(), text(purpose));
    (attrs, y)
}

/// Parameters of the fairness benchmark: two groups, four legitimate
/// features independent of group, and labels that also depend directly on
/// group membership.
pub const BENCHMARK_SIZE: usize = 4000;
pub const BENCHMARK_SEED: u64 = 1;
pub const BENCHMARK_PRIVILEGED_SHARE: f64 = 0.4;
pub const BENCHMARK_QUOTA: f64 = 0.3;
const BENCHMARK_SIGNAL: f64 = 6.0;
const BENCHMARK_GROUP_EFFECT: f64 = 1.0;

/// Column labels of [`bias_benchmark`] features.
pub const BENCHMARK_COLUMNS: [&str; 6] = ["group=privileged", "group=unprivileged", "x1", "x2", "x3", "x4"];

/// The synthetic-bias benchmark used to calibrate the default fairness
/// penalty weight. Labels follow
/// `σ(6·(x1 + 0.8·x2 − 0.5·x3 + 0.3·x4 − 0.8) + 1.0·z − 0.5)`, so the
/// group column is correlated with the label while the other features are
/// not correlated with the group.
pub fn bias_benchmark(n: usize, seed: u64) -> Vec<EncodedProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let z = u8::from(rng.random::<f64>() < BENCHMARK_PRIVILEGED_SHARE);
            let xs: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
            let score = BENCHMARK_SIGNAL * (xs[0] + 0.8 * xs[1] - 0.5 * xs[2] + 0.3 * xs[3] - 0.8)
                + BENCHMARK_GROUP_EFFECT * f64::from(z)
                - 0.5;
            let y = u8::from(rng.random::<f64>() < sigmoid(score));
            let mut features = vec![f64::from(z), 1.0 - f64::from(z)];
            features.extend(xs);
            EncodedProfile {
                profile_id: format!("bench-{i:05}"),
                features,
                z,
                y,
            }
        })
        .collect()
}

/// [`bias_benchmark`] at its shipped size and seed.
pub fn shipped_bias_benchmark() -> Vec<EncodedProfile> {
    bias_benchmark(BENCHMARK_SIZE, BENCHMARK_SEED)
}
