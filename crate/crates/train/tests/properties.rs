use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpseg_core::Tensor;
use warpseg_train::data::{Augment, AugmentParams};
use warpseg_train::losses::{stabilization_loss, stable_mask, StableMask, IGNORE_LABEL};
use warpseg_train::models::one_hot;
use warpseg_train::{generate_shapes, split_semi};

fn probs(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let logits = Tensor::from_fn(shape, |_| rng.random_range(-3.0..3.0));
    warpseg_core::ops::softmax_channels(&logits).unwrap()
}

fn permute_channels(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let [n, c, h, w] = t.dims4("permute").unwrap();
    let plane = h * w;
    let mut out = Tensor::zeros(t.shape());
    for s in 0..n {
        for (to, &from) in perm.iter().enumerate() {
            let src = &t.data()[(s * c + from) * plane..][..plane];
            out.data_mut()[(s * c + to) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stable_mask_ignores_channel_order(seed in any::<u64>(), xi in 0.3f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [2, 4, 5, 6];
        let (a, b) = (probs(&mut rng, &shape), probs(&mut rng, &shape));
        let mut perm: Vec<usize> = (0..4).collect();
        for i in (1..4).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let direct = stable_mask(&a, &b, xi).unwrap();
        let permuted = stable_mask(&permute_channels(&a, &perm), &permute_channels(&b, &perm), xi).unwrap();
        prop_assert_eq!(direct, permuted);
    }

    #[test]
    fn students_never_learn_from_each_other_at_the_same_pixel(seed in any::<u64>(), xi in 0.3f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [1, 3, 4, 4];
        let maps: Vec<Tensor<f64>> = (0..4).map(|_| probs(&mut rng, &shape)).collect();
        let mask = StableMask::compute(&maps[0], &maps[1], &maps[2], &maps[3], xi).unwrap();
        let out = stabilization_loss(&maps[0], &maps[2], &mask).unwrap();
        prop_assert!(out.loss_a >= 0.0 && out.loss_b >= 0.0);
        for i in 0..mask.len() {
            // Both learn only on an exact tie of stable students.
            if mask.a_learns(i) && mask.b_learns(i) {
                prop_assert_eq!(mask.eps_a[i], mask.eps_b[i]);
            }
        }
    }

    #[test]
    fn one_hot_rows_sum_to_one_except_ignored(seed in any::<u64>(), classes in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, h, w) = (2, 3, 4);
        let labels: Vec<u8> = (0..n * h * w)
            .map(|_| if rng.random_bool(0.2) { IGNORE_LABEL } else { rng.random_range(0..classes) as u8 })
            .collect();
        let t = one_hot::<f32>(&labels, n, classes, h, w).unwrap();
        let plane = h * w;
        for (i, &l) in labels.iter().enumerate() {
            let (s, q) = (i / plane, i % plane);
            let column: Vec<f32> = (0..classes).map(|c| t.data()[(s * classes + c) * plane + q]).collect();
            let want = if l == IGNORE_LABEL { 0.0 } else { 1.0 };
            prop_assert_eq!(column.iter().sum::<f32>(), want);
            if l != IGNORE_LABEL {
                prop_assert_eq!(column[l as usize], 1.0);
            }
        }
    }

    #[test]
    fn split_is_a_partition(count in 1usize..200, fraction in 0.01f64..1.0, seed in any::<u64>()) {
        let ids: Vec<u64> = (0..count as u64).collect();
        let (labeled, unlabeled) = split_semi(&ids, fraction, seed).unwrap();
        prop_assert_eq!(labeled.len(), (fraction * count as f64).round() as usize);
        let mut all: Vec<u64> = labeled.iter().chain(&unlabeled).copied().collect();
        all.sort();
        prop_assert_eq!(all, ids);
    }

    #[test]
    fn augmentation_moves_image_and_label_together(seed in any::<u64>()) {
        let data = generate_shapes(seed, 1, 16, 16, 4).unwrap();
        let s = &data.samples[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = AugmentParams::draw(Augment::ALL, 16, 16, &mut rng);
        let (_, label) = p.apply(&s.image, &s.label);
        for i in 0..16 {
            for j in 0..16 {
                let want = match p.label_source(i, j, 16, 16) {
                    Some((y, x)) => s.label[y * 16 + x],
                    None => IGNORE_LABEL,
                };
                prop_assert_eq!(label[i * 16 + j], want);
            }
        }
    }
}

#[test]
fn class_histogram_is_a_distribution_with_background_majority() {
    let data = generate_shapes(11, 60, 32, 32, 4).unwrap();
    let hist = data.class_histogram();
    assert_eq!(hist.len(), 4);
    assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(hist.iter().all(|&p| p > 0.0));
    assert!(hist[0] > 0.5, "background share {}", hist[0]);
}
