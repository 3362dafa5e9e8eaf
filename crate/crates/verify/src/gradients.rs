//! Central-difference checks of every hand-written backward pass.
//!
//! Each target is exercised on random shapes and values in `f64`. Layers are
//! checked through the scalar `Σ r ⊙ y` for a random `r`; losses through
//! their own scalar value. At most [`MAX_PROBES`] coordinates per tensor are
//! differenced; the error is `max |a − n|` over the probed coordinates
//! divided by the larger of the full analytic gradient's and the numeric
//! gradient's max-norm. Whole networks also accept a one-sided difference
//! at a coordinate, since their steps can cross a leaky-relu kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpseg_core::numdiff::central_difference_at;
use warpseg_core::{
    BilinearUpsample, ConcatChannels, Conv2d, GlobalAvgPool, Layer, LeakyRelu, Sigmoid, SoftmaxChannels, Tensor,
    LEAKY_SLOPE,
};
use warpseg_dgw::{warp_batch, warp_batch_backward, WarpParams, WarpSpec};
use warpseg_train::losses::{
    consistency_loss, cross_entropy, discriminator_loss, discriminator_loss_logits, feature_matching_loss,
    self_training_loss, stabilization_loss, StableMask, IGNORE_LABEL,
};
use warpseg_train::models::{Discriminator, DiscriminatorConfig, StudentConfig, StudentNet};
use warpseg_train::Parameterized;

use crate::Check;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;
pub const MAX_PROBES: usize = 12;

/// Relative size of the error injected by the fault control.
const FAULT_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Conv2d,
    LeakyRelu,
    BilinearUpsample,
    SoftmaxChannels,
    GlobalAvgPool,
    ConcatChannels,
    Sigmoid,
    Warp,
    CrossEntropy,
    Consistency,
    Stabilization,
    DiscriminatorLoss,
    DiscriminatorLossLogits,
    FeatureMatching,
    SelfTraining,
    Student,
    Discriminator,
}

impl Target {
    pub const ALL: [Target; 17] = [
        Target::Conv2d,
        Target::LeakyRelu,
        Target::BilinearUpsample,
        Target::SoftmaxChannels,
        Target::GlobalAvgPool,
        Target::ConcatChannels,
        Target::Sigmoid,
        Target::Warp,
        Target::CrossEntropy,
        Target::Consistency,
        Target::Stabilization,
        Target::DiscriminatorLoss,
        Target::DiscriminatorLossLogits,
        Target::FeatureMatching,
        Target::SelfTraining,
        Target::Student,
        Target::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Conv2d => "conv2d",
            Target::LeakyRelu => "leaky-relu",
            Target::BilinearUpsample => "bilinear-upsample",
            Target::SoftmaxChannels => "softmax-over-channels",
            Target::GlobalAvgPool => "global-average-pool",
            Target::ConcatChannels => "concat-channels",
            Target::Sigmoid => "sigmoid",
            Target::Warp => "warp",
            Target::CrossEntropy => "cross-entropy",
            Target::Consistency => "consistency",
            Target::Stabilization => "stabilization",
            Target::DiscriminatorLoss => "discriminator-loss",
            Target::DiscriminatorLossLogits => "discriminator-loss-logits",
            Target::FeatureMatching => "feature-matching",
            Target::SelfTraining => "self-training",
            Target::Student => "student-network",
            Target::Discriminator => "discriminator-network",
        }
    }

    pub fn from_name(name: &str) -> Option<Target> {
        Target::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// Checks every target over `configs` random configurations. With `fault`
/// set, that target's analytic gradients are scaled by `1 + 1e-2` before the
/// comparison, which the check must report as a failure.
pub fn check_all(configs: usize, seed: u64, fault: Option<Target>) -> Vec<Check> {
    Target::ALL
        .iter()
        .map(|&t| check_target(t, configs, seed, fault == Some(t)))
        .collect()
}

pub fn check_target(target: Target, configs: usize, seed: u64, fault: bool) -> Check {
    let mut check = Check::new(format!("gradient {}", target.name()), GRAD_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (target as u64 + 1).wrapping_mul(0x9E37_79B9));
    for _ in 0..configs {
        let mut probe = Probe {
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            fault,
            worst: 0.0,
        };
        probe.run(target);
        check.record(probe.worst);
    }
    check
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, so a leaky-relu kink is never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn softmax_map(rng: &mut ChaCha8Rng, shape: &[usize], spread: f64) -> Tensor<f64> {
    let logits = uniform(rng, shape, -spread, spread);
    warpseg_core::ops::softmax_channels(&logits).expect("4-d logits")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Probe {
    rng: ChaCha8Rng,
    fault: bool,
    worst: f64,
}

impl Probe {
    fn indices(&mut self, len: usize) -> Vec<usize> {
        if len <= MAX_PROBES {
            return (0..len).collect();
        }
        (0..MAX_PROBES).map(|_| self.rng.random_range(0..len)).collect()
    }

    /// Differences `f` around `x` and folds the error against `analytic`
    /// into the running worst case.
    fn compare(&mut self, x: &[f64], analytic: &[f64], f: impl FnMut(&[f64]) -> f64) {
        assert_eq!(x.len(), analytic.len(), "gradient length");
        if x.is_empty() {
            return;
        }
        let idx = self.indices(x.len());
        let numeric = central_difference_at(f, x, &idx, FD_STEP);
        let factor = if self.fault { 1.0 + FAULT_SCALE } else { 1.0 };
        let probed: Vec<f64> = idx.iter().map(|&i| analytic[i] * factor).collect();
        let scale = (max_norm(analytic) * factor).max(max_norm(&numeric)).max(1e-10);
        let worst = probed
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let err = worst / scale;
        if err.is_nan() || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    /// Like [`Probe::compare`] for whole networks, where shifting one
    /// parameter moves thousands of leaky-relu inputs and one of them can
    /// cross zero inside the step. The kink then lies on one side of `x` and
    /// the difference on the other side is still exact to first order, so
    /// each coordinate scores the best of the central and one-sided slopes.
    fn compare_piecewise(&mut self, x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) {
        assert_eq!(x.len(), analytic.len(), "gradient length");
        if x.is_empty() {
            return;
        }
        let h = FD_STEP;
        let f0 = f(x);
        let mut v = x.to_vec();
        let factor = if self.fault { 1.0 + FAULT_SCALE } else { 1.0 };
        let mut scale = max_norm(analytic) * factor;
        let mut worst = 0.0f64;
        for i in self.indices(x.len()) {
            v[i] = x[i] + h;
            let plus = f(&v);
            v[i] = x[i] - h;
            let minus = f(&v);
            v[i] = x[i];
            let central = (plus - minus) / (2.0 * h);
            scale = scale.max(central.abs());
            let a = analytic[i] * factor;
            let err = [central, (plus - f0) / h, (f0 - minus) / h]
                .iter()
                .fold(f64::INFINITY, |m, n| m.min((a - n).abs()));
            worst = worst.max(err);
        }
        let err = worst / scale.max(1e-10);
        if err.is_nan() || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn run(&mut self, target: Target) {
        match target {
            Target::Conv2d => self.conv2d(),
            Target::LeakyRelu => {
                let shape = self.small_shape();
                let x = away_from_zero(&mut self.rng, &shape);
                self.layer(&mut LeakyRelu::new(LEAKY_SLOPE), &x);
            }
            Target::BilinearUpsample => {
                let factor = self.rng.random_range(1..=4);
                let shape = self.small_shape();
                let x = uniform(&mut self.rng, &shape, -1.0, 1.0);
                self.layer(&mut BilinearUpsample::new(factor).unwrap(), &x);
            }
            Target::SoftmaxChannels => {
                let mut shape = self.small_shape();
                shape[1] = self.rng.random_range(2..=5);
                let x = uniform(&mut self.rng, &shape, -3.0, 3.0);
                self.layer(&mut SoftmaxChannels::new(), &x);
            }
            Target::GlobalAvgPool => {
                let shape = self.small_shape();
                let x = uniform(&mut self.rng, &shape, -1.0, 1.0);
                self.layer(&mut GlobalAvgPool::new(), &x);
            }
            Target::Sigmoid => {
                let shape = self.small_shape();
                let x = uniform(&mut self.rng, &shape, -4.0, 4.0);
                self.layer(&mut Sigmoid::new(), &x);
            }
            Target::ConcatChannels => self.concat(),
            Target::Warp => self.warp(),
            Target::CrossEntropy => self.cross_entropy(),
            Target::Consistency => self.consistency(),
            Target::Stabilization => self.stabilization(),
            Target::DiscriminatorLoss => self.discriminator_loss(false),
            Target::DiscriminatorLossLogits => self.discriminator_loss(true),
            Target::FeatureMatching => self.feature_matching(),
            Target::SelfTraining => self.self_training(),
            Target::Student => self.student(),
            Target::Discriminator => self.discriminator(),
        }
    }

    fn small_shape(&mut self) -> [usize; 4] {
        let r = &mut self.rng;
        [
            r.random_range(1..=2),
            r.random_range(1..=4),
            r.random_range(1..=7),
            r.random_range(1..=7),
        ]
    }

    fn layer(&mut self, layer: &mut dyn Layer<f64>, x: &Tensor<f64>) {
        let y = layer.forward(x).expect("forward");
        let r = uniform(&mut self.rng, y.shape(), -1.0, 1.0);
        for p in layer.params_mut() {
            p.zero_grad();
        }
        let dx = layer.backward(&r).expect("backward");
        let param_grads: Vec<Vec<f64>> = layer
            .params()
            .iter()
            .map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let shape = x.shape().to_vec();
        self.compare(x.data(), dx.data(), |v| {
            let xt = Tensor::new(&shape, v.to_vec()).unwrap();
            dot(layer.forward(&xt).unwrap().data(), r.data())
        });
        for (k, grad) in param_grads.iter().enumerate() {
            let original = layer.params()[k].data().to_vec();
            self.compare(&original, grad, |v| {
                layer.params_mut()[k].data_mut().copy_from_slice(v);
                dot(layer.forward(x).unwrap().data(), r.data())
            });
            layer.params_mut()[k].data_mut().copy_from_slice(&original);
        }
    }

    fn conv2d(&mut self) {
        loop {
            let r = &mut self.rng;
            let k = [1, 3, 5][r.random_range(0..3)];
            let stride = r.random_range(1..=3);
            let pad = r.random_range(0..=k / 2);
            let (c_in, c_out) = (r.random_range(1..=4), r.random_range(1..=4));
            let (n, h, w) = (r.random_range(1..=2), r.random_range(k..=9), r.random_range(k..=9));
            let weight = uniform(r, &[c_out, c_in, k, k], -1.0, 1.0);
            let bias = uniform(r, &[c_out], -1.0, 1.0);
            let x = uniform(r, &[n, c_in, h, w], -1.0, 1.0);
            let mut conv = Conv2d::new(weight, bias, stride, pad).unwrap();
            if conv.forward(&x).is_err() {
                // Extent not reachable with this stride and padding; redraw.
                continue;
            }
            self.layer(&mut conv, &x);
            return;
        }
    }

    fn concat(&mut self) {
        let [n, c1, h, w] = self.small_shape();
        let c2 = self.rng.random_range(1..=4);
        let a = uniform(&mut self.rng, &[n, c1, h, w], -1.0, 1.0);
        let b = uniform(&mut self.rng, &[n, c2, h, w], -1.0, 1.0);
        let mut cat = ConcatChannels::new();
        let y = cat.forward(&a, &b).unwrap();
        let r = uniform(&mut self.rng, y.shape(), -1.0, 1.0);
        let (ga, gb) = cat.backward(&r).unwrap();
        self.compare(a.data(), ga.data(), |v| {
            let at = Tensor::new(a.shape(), v.to_vec()).unwrap();
            dot(ConcatChannels::new().forward(&at, &b).unwrap().data(), r.data())
        });
        self.compare(b.data(), gb.data(), |v| {
            let bt = Tensor::new(b.shape(), v.to_vec()).unwrap();
            dot(ConcatChannels::new().forward(&a, &bt).unwrap().data(), r.data())
        });
    }

    fn warp(&mut self) {
        let (n, c, h, w) = (
            self.rng.random_range(1..=3),
            self.rng.random_range(1..=4),
            self.rng.random_range(4..=16),
            self.rng.random_range(4..=16),
        );
        let grids: Vec<_> = (0..n)
            .map(|_| {
                WarpSpec::sample(WarpParams::default(), self.rng.random())
                    .unwrap()
                    .grid(h, w)
            })
            .collect();
        let x = uniform(&mut self.rng, &[n, c, h, w], -1.0, 1.0);
        let y = warp_batch(&x, &grids).unwrap();
        let r = uniform(&mut self.rng, y.shape(), -1.0, 1.0);
        let dx = warp_batch_backward(&grids, &r).unwrap();
        self.compare(x.data(), dx.data(), |v| {
            let xt = Tensor::new(x.shape(), v.to_vec()).unwrap();
            dot(warp_batch(&xt, &grids).unwrap().data(), r.data())
        });
    }

    fn map_shape(&mut self) -> [usize; 4] {
        let r = &mut self.rng;
        [
            r.random_range(1..=3),
            r.random_range(2..=5),
            r.random_range(1..=6),
            r.random_range(1..=6),
        ]
    }

    fn cross_entropy(&mut self) {
        let shape = self.map_shape();
        let [n, c, h, w] = shape;
        let probs = softmax_map(&mut self.rng, &shape, 3.0);
        let labels: Vec<u8> = (0..n * h * w)
            .map(|_| {
                if self.rng.random_bool(0.15) {
                    IGNORE_LABEL
                } else {
                    self.rng.random_range(0..c) as u8
                }
            })
            .collect();
        let (_, grad) = cross_entropy(&probs, &labels).unwrap();
        self.compare(probs.data(), grad.data(), |v| {
            let p = Tensor::new(&shape, v.to_vec()).unwrap();
            cross_entropy(&p, &labels).unwrap().0
        });
    }

    fn consistency(&mut self) {
        let shape = self.map_shape();
        let pw = softmax_map(&mut self.rng, &shape, 2.0);
        let wp = softmax_map(&mut self.rng, &shape, 2.0);
        let out = consistency_loss(&pw, &wp).unwrap();
        self.compare(pw.data(), out.grad_pred_of_warped.data(), |v| {
            let t = Tensor::new(&shape, v.to_vec()).unwrap();
            consistency_loss(&t, &wp).unwrap().loss
        });
        self.compare(wp.data(), out.grad_warped_pred.data(), |v| {
            let t = Tensor::new(&shape, v.to_vec()).unwrap();
            consistency_loss(&pw, &t).unwrap().loss
        });
    }

    fn stabilization(&mut self) {
        let shape = self.map_shape();
        let maps: Vec<Tensor<f64>> = (0..4).map(|_| softmax_map(&mut self.rng, &shape, 3.0)).collect();
        let xi = self.rng.random_range(0.3..0.7);
        let mask = StableMask::compute(&maps[0], &maps[1], &maps[2], &maps[3], xi).unwrap();
        let (a, b) = (&maps[0], &maps[2]);
        let out = stabilization_loss(a, b, &mask).unwrap();
        self.compare(a.data(), out.grad_a.data(), |v| {
            let t = Tensor::new(&shape, v.to_vec()).unwrap();
            stabilization_loss(&t, b, &mask).unwrap().loss_a
        });
        self.compare(b.data(), out.grad_b.data(), |v| {
            let t = Tensor::new(&shape, v.to_vec()).unwrap();
            stabilization_loss(a, &t, &mask).unwrap().loss_b
        });
    }

    fn discriminator_loss(&mut self, logits: bool) {
        let (nr, nf) = (self.rng.random_range(1..=8), self.rng.random_range(1..=8));
        let (lo, hi) = if logits { (-5.0, 5.0) } else { (0.05, 0.95) };
        let real: Vec<f64> = (0..nr).map(|_| self.rng.random_range(lo..hi)).collect();
        let fake: Vec<f64> = (0..nf).map(|_| self.rng.random_range(lo..hi)).collect();
        let f = if logits {
            discriminator_loss_logits
        } else {
            discriminator_loss
        };
        let (_, gr, gf) = f(&real, &fake).unwrap();
        self.compare(&real, &gr, |v| f(v, &fake).unwrap().0);
        self.compare(&fake, &gf, |v| f(&real, v).unwrap().0);
    }

    fn feature_matching(&mut self) {
        let (nr, nf) = (self.rng.random_range(1..=4), self.rng.random_range(1..=4));
        let (c, h, w) = (
            self.rng.random_range(1..=4),
            self.rng.random_range(1..=4),
            self.rng.random_range(1..=4),
        );
        let real = uniform(&mut self.rng, &[nr, c, h, w], -1.0, 1.0);
        let fake = uniform(&mut self.rng, &[nf, c, h, w], -1.0, 1.0);
        let (_, grad) = feature_matching_loss(&real, &fake).unwrap();
        self.compare(fake.data(), grad.data(), |v| {
            let t = Tensor::new(fake.shape(), v.to_vec()).unwrap();
            feature_matching_loss(&real, &t).unwrap().0
        });
    }

    fn self_training(&mut self) {
        let shape = self.map_shape();
        let probs = softmax_map(&mut self.rng, &shape, 3.0);
        let scores: Vec<f64> = (0..shape[0]).map(|_| self.rng.random_range(0.2..1.0)).collect();
        let gamma = 0.6;
        let out = self_training_loss(&probs, &scores, gamma).unwrap();
        self.compare(probs.data(), out.grad.data(), |v| {
            let t = Tensor::new(&shape, v.to_vec()).unwrap();
            self_training_loss(&t, &scores, gamma).unwrap().loss
        });
    }

    fn student(&mut self) {
        let r = &mut self.rng;
        let cfg = StudentConfig {
            classes: r.random_range(2..=4),
            // Single-channel stacks of eight convolutions shrink the signal
            // until the central difference is pure rounding noise.
            widths: [
                r.random_range(2..=4),
                r.random_range(2..=4),
                r.random_range(2..=4),
                r.random_range(2..=4),
            ],
            decoder_width: r.random_range(2..=4),
        };
        let mut net = StudentNet::<f64>::new(cfg, r.random(), 0).unwrap();
        let n = r.random_range(1..=2);
        let (h, w) = (16 * r.random_range(1..=2), 16 * r.random_range(1..=2));
        let x = uniform(r, &[n, 3, h, w], 0.0, 1.0);
        let y = net.forward(&x).unwrap();
        let rr = uniform(&mut self.rng, y.shape(), -1.0, 1.0);
        net.zero_grad();
        let dx = net.backward(&rr).unwrap();
        let grads: Vec<Vec<f64>> = net
            .params()
            .iter()
            .map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        self.compare_piecewise(x.data(), dx.data(), |v| {
            let xt = Tensor::new(x.shape(), v.to_vec()).unwrap();
            dot(net.forward(&xt).unwrap().data(), rr.data())
        });
        for (k, grad) in grads.iter().enumerate() {
            let original = net.params()[k].data().to_vec();
            self.compare_piecewise(&original, grad, |v| {
                net.params_mut()[k].data_mut().copy_from_slice(v);
                dot(net.forward(&x).unwrap().data(), rr.data())
            });
            net.params_mut()[k].data_mut().copy_from_slice(&original);
        }
    }

    fn discriminator(&mut self) {
        let r = &mut self.rng;
        let cfg = DiscriminatorConfig {
            classes: r.random_range(2..=4),
            widths: [
                r.random_range(1..=4),
                r.random_range(1..=4),
                r.random_range(1..=4),
                r.random_range(1..=4),
            ],
            tap: r.random_range(1..=4),
        };
        let mut d = Discriminator::<f64>::new(cfg, r.random(), 0).unwrap();
        let n = r.random_range(1..=3);
        let (h, w) = (r.random_range(8..=20), r.random_range(8..=20));
        let probs = softmax_map(r, &[n, cfg.classes, h, w], 2.0);
        let image = uniform(&mut self.rng, &[n, 3, h, w], 0.0, 1.0);
        let out = match d.forward(&probs, &image) {
            Ok(o) => o,
            // Extent not reachable by the stride-2 stack; try another draw.
            Err(_) => return self.discriminator(),
        };
        let rs = uniform(&mut self.rng, out.scores.shape(), -1.0, 1.0);
        let rf = uniform(&mut self.rng, out.feature.shape(), -1.0, 1.0);
        d.zero_grad();
        let (dp, di) = d.backward(&rs, Some(&rf)).unwrap();
        let grads: Vec<Vec<f64>> = d
            .params()
            .iter()
            .map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let objective = |d: &mut Discriminator<f64>, p: &Tensor<f64>, x: &Tensor<f64>| {
            let o = d.forward(p, x).unwrap();
            dot(o.scores.data(), rs.data()) + dot(o.feature.data(), rf.data())
        };
        self.compare_piecewise(probs.data(), dp.data(), |v| {
            let t = Tensor::new(probs.shape(), v.to_vec()).unwrap();
            objective(&mut d, &t, &image)
        });
        self.compare_piecewise(image.data(), di.data(), |v| {
            let t = Tensor::new(image.shape(), v.to_vec()).unwrap();
            objective(&mut d, &probs, &t)
        });
        for (k, grad) in grads.iter().enumerate() {
            let original = d.params()[k].data().to_vec();
            self.compare_piecewise(&original, grad, |v| {
                d.params_mut()[k].data_mut().copy_from_slice(v);
                objective(&mut d, &probs, &image)
            });
            d.params_mut()[k].data_mut().copy_from_slice(&original);
        }
    }
}
