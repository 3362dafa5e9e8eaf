//! Set-based mIoU oracle.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpseg_core::Tensor;
use warpseg_train::losses::IGNORE_LABEL;
use warpseg_train::models::{StudentConfig, StudentNet};
use warpseg_train::trainer::{argmax_classes, evaluate_models};
use warpseg_train::{generate_shapes, ConfusionMatrix};

use crate::Check;

pub const MIOU_TOLERANCE: f64 = 1e-12;

/// Mean over classes of |P ∩ L| / |P ∪ L|, where P and L are the sets of
/// pixel indices predicted and labelled as the class. Ignore-labelled pixels
/// are dropped first; classes with an empty union do not count. `None` if no
/// class is present.
pub fn set_oracle(predicted: &[u8], label: &[u8], classes: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut present = 0usize;
    for k in 0..classes as u8 {
        let p: HashSet<usize> = (0..label.len())
            .filter(|&i| label[i] != IGNORE_LABEL && predicted[i] == k)
            .collect();
        let l: HashSet<usize> = (0..label.len()).filter(|&i| label[i] == k).collect();
        let union = p.union(&l).count();
        if union > 0 {
            sum += p.intersection(&l).count() as f64 / union as f64;
            present += 1;
        }
    }
    (present > 0).then(|| sum / present as f64)
}

/// Constant prediction of class 0 over an image whose left half is class 0
/// and right half class 1: IoU 1/2 and 0, mean 1/4.
pub fn hand_case() -> f64 {
    let (h, w) = (8, 8);
    let label: Vec<u8> = (0..h * w).map(|i| u8::from(i % w >= w / 2)).collect();
    let mut cm = ConfusionMatrix::new(2);
    cm.add(&vec![0u8; h * w], &label).expect("matching sizes");
    cm.miou().expect("labelled pixels")
}

fn random_pair(rng: &mut ChaCha8Rng, classes: usize) -> (Vec<u8>, Vec<u8>) {
    let len = rng.random_range(1..300);
    // A smaller active class range now and then leaves classes absent.
    let active = rng.random_range(1..=classes);
    let pred = (0..len).map(|_| rng.random_range(0..active) as u8).collect();
    let label = (0..len)
        .map(|_| {
            if rng.random_bool(0.1) {
                IGNORE_LABEL
            } else {
                rng.random_range(0..active) as u8
            }
        })
        .collect();
    (pred, label)
}

/// Confusion-matrix mIoU against the oracle on random maps, and the full
/// evaluation path against the oracle on random networks' predictions.
pub fn check_all(count: usize, seed: u64) -> Vec<Check> {
    let mut matrix = Check::new("miou confusion matrix", MIOU_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let classes = rng.random_range(2..=6);
        let (pred, label) = random_pair(&mut rng, classes);
        let mut cm = ConfusionMatrix::new(classes);
        cm.add(&pred, &label).expect("matching sizes");
        let err = match (cm.miou().ok(), set_oracle(&pred, &label, classes)) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        matrix.record(err);
    }

    let mut eval = Check::new("miou evaluate", MIOU_TOLERANCE);
    let data = generate_shapes(seed, 30, 32, 32, 4).expect("dataset");
    for i in 0..count.div_ceil(10) {
        let cfg = StudentConfig {
            widths: [4, 4, 4, 4],
            decoder_width: 4,
            ..StudentConfig::default()
        };
        let mut net = StudentNet::<f32>::new(cfg, seed, i as u64).expect("student");
        let report = evaluate_models(&mut [("net".to_string(), &mut net)], &data, 0).expect("evaluate");
        let parts: Vec<&Tensor<f32>> = data.samples.iter().map(|s| &s.image).collect();
        let x = Tensor::stack_batches(&parts)
            .and_then(|t| t.reshape(&[data.samples.len(), 3, 32, 32]))
            .expect("batch");
        let pred = argmax_classes(&net.forward(&x).expect("forward")).expect("argmax");
        let label: Vec<u8> = data.samples.iter().flat_map(|s| s.label.iter().copied()).collect();
        let want = set_oracle(&pred, &label, data.classes).expect("labelled pixels");
        eval.record((report.models[0].miou - want).abs());
    }
    let mut hand = Check::new("miou hand case", 0.0);
    hand.record((hand_case() - 0.25).abs());
    vec![matrix, eval, hand]
}
