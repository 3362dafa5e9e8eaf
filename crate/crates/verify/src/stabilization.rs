//! Case-enumeration oracle for the cross-student stabilization loss.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpseg_core::Tensor;
use warpseg_train::losses::{stabilization_loss, StableMask};

use crate::Check;

pub const STABILIZATION_TOLERANCE: f64 = 1e-12;

/// Instance geometry: one image, four classes, 8×8 pixels.
pub const SHAPE: [usize; 4] = [1, 4, 8, 8];

/// Which student learns at a pixel, from the stable scores and the ordering
/// of the consistency errors.
pub fn learners(r_a: bool, r_b: bool, eps: Ordering) -> (bool, bool) {
    match (r_a, r_b, eps) {
        (false, false, _) => (false, false),
        (true, false, _) => (false, true),
        (false, true, _) => (true, false),
        (true, true, Ordering::Less) => (false, true),
        (true, true, Ordering::Greater) => (true, false),
        (true, true, Ordering::Equal) => (true, true),
    }
}

fn pixel(t: &[f64], c: usize, plane: usize, s: usize, q: usize) -> Vec<f64> {
    (0..c).map(|ch| t[(s * c + ch) * plane + q]).collect()
}

fn first_argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, &x)| if x > best.1 { (i, x) } else { best },
    )
}

fn stable(pw: &[f64], wp: &[f64], xi: f64) -> bool {
    let (ka, va) = first_argmax(pw);
    let (kb, vb) = first_argmax(wp);
    ka == kb && (va > xi || vb > xi)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Reference losses and gradients recomputed pixel by pixel from the four
/// raw maps.
pub struct Reference {
    pub loss_a: f64,
    pub loss_b: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub fn reference(maps: &[Tensor<f64>; 4], xi: f64) -> Reference {
    let [pw_a, wp_a, pw_b, wp_b] = maps;
    let [n, c, h, w] = pw_a.dims4("reference").expect("4-d maps");
    let plane = h * w;
    let pixels = (n * plane) as f64;
    let mut out = Reference {
        loss_a: 0.0,
        loss_b: 0.0,
        grad_a: vec![0.0; pw_a.numel()],
        grad_b: vec![0.0; pw_a.numel()],
    };
    for s in 0..n {
        for q in 0..plane {
            let a = pixel(pw_a.data(), c, plane, s, q);
            let b = pixel(pw_b.data(), c, plane, s, q);
            let wa = pixel(wp_a.data(), c, plane, s, q);
            let wb = pixel(wp_b.data(), c, plane, s, q);
            let eps_a = sq_dist(&a, &wa);
            let eps_b = sq_dist(&b, &wb);
            let order = eps_a.partial_cmp(&eps_b).expect("finite errors");
            let (la, lb) = learners(stable(&a, &wa, xi), stable(&b, &wb, xi), order);
            let mse = sq_dist(&a, &b);
            for ch in 0..c {
                let k = (s * c + ch) * plane + q;
                if la {
                    out.grad_a[k] = 2.0 * (a[ch] - b[ch]) / pixels;
                }
                if lb {
                    out.grad_b[k] = 2.0 * (b[ch] - a[ch]) / pixels;
                }
            }
            if la {
                out.loss_a += mse / pixels;
            }
            if lb {
                out.loss_b += mse / pixels;
            }
        }
    }
    out
}

fn simplex(rng: &mut ChaCha8Rng, c: usize, peak: Option<usize>) -> Vec<f64> {
    let mut v: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
    if let Some(k) = peak {
        v[k] += rng.random_range(0.0..4.0);
    }
    let sum: f64 = v.iter().sum();
    v.iter().map(|x| x / sum).collect()
}

/// Random maps with a mix of agreeing, confident, tied and unrelated pixels.
pub fn random_instance(rng: &mut ChaCha8Rng) -> [Tensor<f64>; 4] {
    let [n, c, h, w] = SHAPE;
    let plane = h * w;
    let mut maps: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n * c * plane]);
    for s in 0..n {
        for q in 0..plane {
            let class = rng.random_range(0..c);
            let agree_a = rng.random_bool(0.7);
            let agree_b = rng.random_bool(0.7);
            let other_a = if agree_a { class } else { rng.random_range(0..c) };
            let other_b = if agree_b { class } else { rng.random_range(0..c) };
            let mut px = [
                simplex(rng, c, Some(class)),
                simplex(rng, c, Some(other_a)),
                simplex(rng, c, Some(class)),
                simplex(rng, c, Some(other_b)),
            ];
            if rng.random_bool(0.15) {
                // Identical student pairs: equal errors, equal stability.
                px[2] = px[0].clone();
                px[3] = px[1].clone();
            }
            for (m, p) in maps.iter_mut().zip(&px) {
                for ch in 0..c {
                    m[(s * c + ch) * plane + q] = p[ch];
                }
            }
        }
    }
    maps.map(|m| Tensor::new(&SHAPE, m).expect("instance shape"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Implementation against the oracle on `count` random instances, plus the
/// detached-target check: the student serving as the target at a pixel gets
/// exactly zero gradient there.
pub fn check_all(count: usize, seed: u64) -> Vec<Check> {
    let mut agree = Check::new("stabilization oracle", STABILIZATION_TOLERANCE);
    let mut detached = Check::new("stabilization detached target", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let maps = random_instance(&mut rng);
        let xi = rng.random_range(0.3..0.8);
        let mask = StableMask::compute(&maps[0], &maps[1], &maps[2], &maps[3], xi).expect("mask");
        let got = stabilization_loss(&maps[0], &maps[2], &mask).expect("loss");
        let want = reference(&maps, xi);
        let err = (got.loss_a - want.loss_a)
            .abs()
            .max((got.loss_b - want.loss_b).abs())
            .max(max_abs_diff(got.grad_a.data(), &want.grad_a))
            .max(max_abs_diff(got.grad_b.data(), &want.grad_b));
        agree.record(err);

        // Wherever the oracle assigns no gradient, the implementation must
        // deliver exactly none.
        let mut leak = 0.0f64;
        for (got, want) in [(&got.grad_a, &want.grad_a), (&got.grad_b, &want.grad_b)] {
            for (g, w) in got.data().iter().zip(want) {
                if *w == 0.0 {
                    leak = leak.max(g.abs());
                }
            }
        }
        detached.record(leak);
    }
    vec![agree, detached]
}

/// Observed learner pattern `(a learns, b learns)` for each of the eight
/// `(r_a, r_b, ε_a < ε_b)` combinations, on a single pixel with a nonzero
/// cross-student difference.
pub fn truth_table() -> Vec<((bool, bool, bool), (bool, bool))> {
    let a = Tensor::new(&[1, 4, 1, 1], vec![0.7, 0.1, 0.1, 0.1]).expect("pixel");
    let b = Tensor::new(&[1, 4, 1, 1], vec![0.4, 0.3, 0.2, 0.1]).expect("pixel");
    (0..8u8)
        .map(|code| {
            let (ra, rb, a_smaller) = (code & 4 != 0, code & 2 != 0, code & 1 != 0);
            let mask = StableMask {
                r_a: vec![ra as u8],
                r_b: vec![rb as u8],
                eps_a: vec![if a_smaller { 0.1 } else { 0.3 }],
                eps_b: vec![0.2],
            };
            let out = stabilization_loss(&a, &b, &mask).expect("loss");
            ((ra, rb, a_smaller), (out.loss_a > 0.0, out.loss_b > 0.0))
        })
        .collect()
}
