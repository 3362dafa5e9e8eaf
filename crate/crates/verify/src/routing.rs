//! Gradient routing between students and discriminators, measured as the
//! finite-difference sensitivity of one training iteration's parameter
//! updates to quantities that must not reach them.

use warpseg_train::{DataSpec, Mode, Parameterized, SegDataset, TrainConfig, Trainer};

use crate::Check;

/// Perturbation used for every sensitivity quotient.
const STEP: f64 = 1e-3;

pub fn dataset(seed: u64) -> SegDataset {
    DataSpec {
        seed,
        train: 32,
        eval: 4,
        height: 32,
        width: 32,
        classes: 4,
    }
    .generate()
    .expect("routing dataset")
    .0
}

pub fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        mode: Mode::Ads,
        iterations: 4,
        labeled_batch: 4,
        unlabeled_batch: 4,
        labeled_fraction: 0.25,
        seed,
        ..TrainConfig::default()
    }
}

fn one_step(cfg: &TrainConfig, data: &SegDataset, disc_shift: f32) -> Vec<(String, Vec<f32>)> {
    let mut t = Trainer::new(cfg.clone(), data).expect("trainer");
    if disc_shift != 0.0 {
        for d in t.discriminators_mut() {
            for p in d.params_mut() {
                p.data_mut().iter_mut().for_each(|v| *v += disc_shift);
            }
        }
    }
    t.step(data).expect("step");
    t.parameter_snapshot()
}

/// `max |θ⁺ − θ⁻| / 2h` over the parameters whose name starts with `prefix`.
fn sensitivity(plus: &[(String, Vec<f32>)], minus: &[(String, Vec<f32>)], prefix: &str) -> f64 {
    plus.iter()
        .zip(minus)
        .filter(|((name, _), _)| name.starts_with(prefix))
        .flat_map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()))
        .fold(0.0f64, f64::max)
        / (2.0 * STEP)
}

type Knob = (&'static str, fn(&mut TrainConfig, f64));

/// Loss weights and rates that scale student-only objectives.
const STUDENT_KNOBS: [Knob; 5] = [
    ("lambda1", |c, d| c.losses.lambda1 += d * c.losses.lambda1),
    ("lambda2", |c, d| c.losses.lambda2 += d * c.losses.lambda2),
    ("lambda_fm", |c, d| c.losses.lambda_fm += d * c.losses.lambda_fm),
    ("lambda_st", |c, d| c.losses.lambda_st += d * c.losses.lambda_st),
    ("student lr", |c, d| {
        c.student_optimizer.lr += d * c.student_optimizer.lr
    }),
];

/// Discriminator parameters after one iteration against perturbations of
/// the student-side losses; student parameters against perturbations of
/// the discriminator (which moves only `L_D` when the feature-matching and
/// self-training weights are zero).
pub fn check_all(seed: u64) -> Vec<Check> {
    let data = dataset(seed);
    let mut disc = Check::new("routing student losses -> disc", 0.0);
    for (_, knob) in STUDENT_KNOBS {
        let mut plus = config(seed);
        knob(&mut plus, STEP);
        let mut minus = config(seed);
        knob(&mut minus, -STEP);
        let (a, b) = (one_step(&plus, &data, 0.0), one_step(&minus, &data, 0.0));
        disc.record(sensitivity(&a, &b, "disc_"));
    }

    let mut students = Check::new("routing L_D -> students", 0.0);
    let mut cfg = config(seed);
    cfg.losses.lambda_fm = 0.0;
    cfg.losses.lambda_st = 0.0;
    let a = one_step(&cfg, &data, STEP as f32);
    let b = one_step(&cfg, &data, -STEP as f32);
    students.record(sensitivity(&a, &b, "student_"));
    vec![disc, students]
}

/// Positive control: with feature matching switched on, student updates do
/// depend on the discriminator.
pub fn adversarial_path_sensitivity(seed: u64) -> f64 {
    let data = dataset(seed);
    let cfg = config(seed);
    let a = one_step(&cfg, &data, STEP as f32);
    let b = one_step(&cfg, &data, -STEP as f32);
    sensitivity(&a, &b, "student_")
}
