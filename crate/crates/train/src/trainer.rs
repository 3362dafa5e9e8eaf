//! The training loop for all four modes.
//!
//! One iteration: draw a labeled and an unlabeled batch, sample one warp per
//! unlabeled image, run every student once on `[x_l; x_u; 𝒯(x_u)]`, update
//! the discriminators (if adversarial) and then the students.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpseg_core::{poly_lr, Optimizer, Scalar, Tensor};
use warpseg_dgw::{warp_batch, warp_batch_backward, SampleGrid, WarpParams, WarpSpec};

use crate::config::{Mode, TrainConfig};
use crate::data::{hstack, image_to_rgb, label_to_rgb, split_semi, Batch, BatchStream, SegDataset};
use crate::error::{Result, TrainError};
use crate::losses::{
    consistency_loss, cross_entropy, discriminator_loss_logits, feature_matching_loss, self_training_loss,
    stabilization_loss, total_loss, LossConfig, LossTerms, StableMask,
};
use crate::metrics::ConfusionMatrix;
use crate::models::{one_hot, Discriminator, Parameterized, StudentNet};

pub const CSV_HEADER: &str = "iter,lr,ce_a,ce_b,cons_a,cons_b,sta_a,sta_b,d_a,d_b,fm_a,fm_b,st_a,st_b,gate_open,total";

const LABELED_TAG: u64 = 1;
const UNLABELED_TAG: u64 = 2;
const WARP_TAG: u64 = 3;

/// Independent seed for a named sub-stream of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    pub iter: usize,
    pub lr: f64,
    pub a: LossTerms,
    pub b: LossTerms,
    pub gate_open: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let (a, b) = (&self.a, &self.b);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.lr,
            a.ce,
            b.ce,
            a.cons,
            b.cons,
            a.sta,
            b.sta,
            a.d,
            b.d,
            a.fm,
            b.fm,
            a.st,
            b.st,
            self.gate_open,
            self.total
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| TrainError::Data(format!("bad metrics row {line:?}: {e}")))?;
        if v.len() != 16 {
            return Err(TrainError::Data(format!("metrics row has {} fields", v.len())));
        }
        let terms = |o: usize| LossTerms {
            ce: v[2 + o],
            cons: v[4 + o],
            sta: v[6 + o],
            d: v[8 + o],
            fm: v[10 + o],
            st: v[12 + o],
        };
        Ok(LossRecord {
            iter: v[0] as usize,
            lr: v[1],
            a: terms(0),
            b: terms(1),
            gate_open: v[14],
            total: v[15],
        })
    }

    fn check(&self) -> Result<()> {
        let fields = [
            ("ce", self.a.ce, self.b.ce),
            ("consistency", self.a.cons, self.b.cons),
            ("stabilization", self.a.sta, self.b.sta),
            ("discriminator", self.a.d, self.b.d),
            ("feature matching", self.a.fm, self.b.fm),
            ("self-training", self.a.st, self.b.st),
        ];
        for (name, x, y) in fields {
            if !x.is_finite() || !y.is_finite() {
                return Err(TrainError::NonFinite {
                    iter: self.iter,
                    what: format!("{name} loss"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub name: String,
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iter: usize,
    pub models: Vec<ModelScore>,
}

impl EvalReport {
    pub fn best(&self) -> f64 {
        self.models.iter().map(|m| m.miou).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.models {
            let per: Vec<String> = m
                .iou
                .iter()
                .enumerate()
                .map(|(c, v)| match v {
                    Some(v) => format!("c{c}={v:.4}"),
                    None => format!("c{c}=n/a"),
                })
                .collect();
            out.push_str(&format!("{:<10} mIoU {:.4}  {}\n", m.name, m.miou, per.join(" ")));
        }
        out.push_str(&format!("best       mIoU {:.4}\n", self.best()));
        out
    }
}

/// Argmax class per pixel of a `[N, C, H, W]` map.
pub fn argmax_classes<T: Scalar>(probs: &Tensor<T>) -> Result<Vec<u8>> {
    let [n, c, h, w] = probs.dims4("argmax")?;
    let plane = h * w;
    let p = probs.data();
    let mut out = vec![0u8; n * plane];
    for s in 0..n {
        for q in 0..plane {
            let mut best = (0usize, p[s * c * plane + q]);
            for k in 1..c {
                let v = p[(s * c + k) * plane + q];
                if v > best.1 {
                    best = (k, v);
                }
            }
            out[s * plane + q] = best.0 as u8;
        }
    }
    Ok(out)
}

const EVAL_CHUNK: usize = 25;

fn stack_images(samples: &[&crate::data::SegSample]) -> Result<Tensor<f32>> {
    let parts: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let mut t = Tensor::stack_batches(&parts)?;
    let (h, w) = (samples[0].height(), samples[0].width());
    t = t.reshape(&[samples.len(), 3, h, w])?;
    Ok(t)
}

/// Confusion-matrix evaluation of each named model over `eval`.
pub fn evaluate_models(
    models: &mut [(String, &mut StudentNet<f32>)],
    eval: &SegDataset,
    iter: usize,
) -> Result<EvalReport> {
    if eval.samples.is_empty() {
        return Err(TrainError::Data("empty evaluation set".into()));
    }
    let mut scores = Vec::with_capacity(models.len());
    for (name, net) in models.iter_mut() {
        let mut cm = ConfusionMatrix::new(eval.classes);
        for chunk in eval.samples.chunks(EVAL_CHUNK) {
            let refs: Vec<&crate::data::SegSample> = chunk.iter().collect();
            let probs = net.forward(&stack_images(&refs)?)?;
            let pred = argmax_classes(&probs)?;
            let labels: Vec<u8> = chunk.iter().flat_map(|s| s.label.iter().copied()).collect();
            cm.add(&pred, &labels)?;
        }
        scores.push(ModelScore {
            name: name.clone(),
            iou: cm.iou(),
            miou: cm.miou()?,
        });
    }
    Ok(EvalReport { iter, models: scores })
}

/// Both the image and the network's own prediction go through one grid
/// per sample.
pub fn warp_grids(params: WarpParams, seeds: &[u64], height: usize, width: usize) -> Result<Vec<SampleGrid>> {
    seeds
        .iter()
        .map(|&s| Ok(WarpSpec::sample(params, s)?.grid(height, width)))
        .collect()
}

pub struct Trainer {
    pub config: TrainConfig,
    pub(crate) classes: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) warp_params: WarpParams,
    pub(crate) students: Vec<StudentNet<f32>>,
    pub(crate) teacher: Option<StudentNet<f32>>,
    pub(crate) discriminators: Vec<Discriminator<f32>>,
    pub(crate) student_opt: Vec<Optimizer<f32>>,
    pub(crate) disc_opt: Vec<Optimizer<f32>>,
    pub(crate) iter: usize,
    pub(crate) labeled: BatchStream,
    pub(crate) unlabeled: Option<BatchStream>,
    pub(crate) warp_rng: ChaCha8Rng,
    pub labeled_ids: Vec<u64>,
    pub unlabeled_ids: Vec<u64>,
    /// Where to write a dump of the offending batch when a loss goes NaN.
    pub dump_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig, train: &SegDataset) -> Result<Self> {
        config.validate()?;
        let first = train
            .samples
            .first()
            .ok_or_else(|| TrainError::Data("empty training set".into()))?;
        let (height, width) = (first.height(), first.width());
        let classes = train.classes;
        let (labeled_ids, unlabeled_ids) = split_semi(&train.ids(), config.labeled_fraction, config.seed)?;
        if labeled_ids.is_empty() {
            return Err(TrainError::Config("labeled split is empty".into()));
        }
        let aug = config.augment.flags();
        let labeled = BatchStream::new(
            &labeled_ids,
            config.labeled_batch,
            derive_seed(config.seed, LABELED_TAG),
            aug,
        )?;
        let unlabeled = if config.mode.uses_unlabeled() {
            if unlabeled_ids.is_empty() {
                return Err(TrainError::Config(format!(
                    "mode {} needs unlabeled data but labeled_fraction is {}",
                    config.mode.name(),
                    config.labeled_fraction
                )));
            }
            Some(BatchStream::new(
                &unlabeled_ids,
                config.unlabeled_batch,
                derive_seed(config.seed, UNLABELED_TAG),
                aug,
            )?)
        } else {
            None
        };
        let scfg = config.student_config(classes);
        let students = (0..config.mode.students() as u64)
            .map(|i| StudentNet::new(scfg, config.seed, i))
            .collect::<Result<Vec<_>>>()?;
        let teacher = (config.mode == Mode::MeanTeacher).then(|| students[0].clone());
        let discriminators = if config.adversarial_enabled() {
            let dcfg = config.discriminator_config(classes);
            (0..students.len() as u64)
                .map(|i| Discriminator::new(dcfg, config.seed, i))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let so = &config.student_optimizer;
        let student_opt = students
            .iter()
            .map(|_| Optimizer::sgd(so.lr, so.momentum, so.weight_decay))
            .collect();
        let dopt = &config.discriminator_optimizer;
        let disc_opt = discriminators
            .iter()
            .map(|_| Optimizer::adam(dopt.lr, dopt.beta1, dopt.beta2, dopt.weight_decay))
            .collect();
        Ok(Trainer {
            warp_params: config.warp.params()?,
            classes,
            height,
            width,
            students,
            teacher,
            discriminators,
            student_opt,
            disc_opt,
            iter: 0,
            labeled,
            unlabeled,
            warp_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, WARP_TAG)),
            labeled_ids,
            unlabeled_ids,
            dump_dir: None,
            config,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.config.iterations
    }

    /// Loss weights in force at the current iteration.
    pub fn losses_now(&self) -> LossConfig {
        self.config.losses_at(self.iter)
    }

    pub fn students(&self) -> &[StudentNet<f32>] {
        &self.students
    }

    pub fn teacher(&self) -> Option<&StudentNet<f32>> {
        self.teacher.as_ref()
    }

    pub fn discriminators(&self) -> &[Discriminator<f32>] {
        &self.discriminators
    }

    pub fn discriminators_mut(&mut self) -> &mut [Discriminator<f32>] {
        &mut self.discriminators
    }

    /// Model names used in reports and checkpoints.
    pub fn model_names(&self) -> Vec<String> {
        match self.config.mode {
            Mode::Supervised => vec!["student_a".into()],
            Mode::MeanTeacher => vec!["student_a".into(), "teacher".into()],
            Mode::DualStudent | Mode::Ads => vec!["student_a".into(), "student_b".into()],
        }
    }

    /// Copies of every model parameter, keyed `model.parameter`.
    pub fn parameter_snapshot(&self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        let mut push = |prefix: String, params: Vec<(String, &Tensor<f32>)>| {
            for (name, p) in params {
                out.push((format!("{prefix}.{name}"), p.data().to_vec()));
            }
        };
        for (i, s) in self.students.iter().enumerate() {
            push(format!("student_{}", (b'a' + i as u8) as char), s.named_params());
        }
        if let Some(t) = &self.teacher {
            push("teacher".into(), t.named_params());
        }
        for (i, d) in self.discriminators.iter().enumerate() {
            push(format!("disc_{}", (b'a' + i as u8) as char), d.named_params());
        }
        out
    }

    pub(crate) fn models_mut(&mut self) -> Vec<(String, &mut StudentNet<f32>)> {
        let names = self.model_names();
        let mut nets: Vec<&mut StudentNet<f32>> = self.students.iter_mut().collect();
        if let Some(t) = self.teacher.as_mut() {
            nets.push(t);
        }
        names.into_iter().zip(nets).collect()
    }

    pub fn evaluate(&mut self, eval: &SegDataset) -> Result<EvalReport> {
        let iter = self.iter;
        evaluate_models(&mut self.models_mut(), eval, iter)
    }

    pub fn learning_rates(&self) -> Result<(f64, f64)> {
        let (s, d) = (&self.config.student_optimizer, &self.config.discriminator_optimizer);
        Ok((
            poly_lr(s.lr, self.iter, self.config.iterations, s.power)?,
            poly_lr(d.lr, self.iter, self.config.iterations, d.power)?,
        ))
    }

    /// One optimization step; returns the loss components.
    pub fn step(&mut self, data: &SegDataset) -> Result<LossRecord> {
        if self.is_done() {
            return Err(TrainError::Config(format!(
                "schedule of {} iterations already complete",
                self.config.iterations
            )));
        }
        let (lr, lr_d) = self.learning_rates()?;
        let lab = self.labeled.next_batch(data)?;
        let unl = match self.unlabeled.as_mut() {
            Some(s) => Some(s.next_batch(data)?),
            None => None,
        };
        let result = match &unl {
            None => self.step_supervised(&lab, lr),
            Some(u) => self.step_semi(&lab, u, lr, lr_d),
        };
        match result {
            Ok(rec) => {
                self.iter += 1;
                Ok(rec)
            }
            Err(e) => {
                if e.is_non_finite() {
                    if let Some(dir) = self.dump_dir.clone() {
                        if let Err(io) = dump_batch(&dir, self.iter, &lab, unl.as_ref(), self.classes) {
                            log::warn!("could not write NaN dump: {io}");
                        }
                    }
                }
                Err(e)
            }
        }
    }

    fn step_supervised(&mut self, lab: &Batch, lr: f64) -> Result<LossRecord> {
        let net = &mut self.students[0];
        let probs = net.forward(&lab.images)?;
        let (ce, grad) = cross_entropy(&probs, &lab.labels)?;
        let mut rec = LossRecord {
            iter: self.iter,
            lr,
            ..LossRecord::default()
        };
        rec.a.ce = ce;
        rec.check()?;
        rec.total = total_loss(&rec.a, &rec.b, &self.config.losses_at(self.iter));
        net.zero_grad();
        net.backward_params(&grad)?;
        self.student_opt[0].step(&mut net.params_mut(), lr)?;
        Ok(rec)
    }

    fn step_semi(&mut self, lab: &Batch, unl: &Batch, lr: f64, lr_d: f64) -> Result<LossRecord> {
        let l = self.losses_now();
        let (nl, nu) = (lab.len(), unl.len());
        let (h, w) = (self.height, self.width);
        let seeds: Vec<u64> = (0..nu).map(|_| self.warp_rng.next_u64()).collect();
        let grids = warp_grids(self.warp_params, &seeds, h, w)?;
        let xw = warp_batch(&unl.images, &grids)?;
        let input = Tensor::stack_batches(&[&lab.images, &unl.images, &xw])?;

        let k = self.students.len();
        let mut p_l = Vec::with_capacity(k);
        let mut p_u = Vec::with_capacity(k);
        let mut p_w = Vec::with_capacity(k);
        for net in self.students.iter_mut() {
            let p = net.forward(&input)?;
            p_l.push(p.slice_batch(0, nl)?);
            p_u.push(p.slice_batch(nl, nl + nu)?);
            p_w.push(p.slice_batch(nl + nu, nl + 2 * nu)?);
        }
        let wp: Vec<Tensor<f32>> = match self.teacher.as_mut() {
            Some(t) => {
                let tp = t.forward(&unl.images)?;
                vec![warp_batch(&tp, &grids)?]
            }
            None => p_u
                .iter()
                .map(|p| warp_batch(p, &grids))
                .collect::<std::result::Result<_, _>>()?,
        };

        let mut terms = vec![LossTerms::default(); k];
        let mut g_l = Vec::with_capacity(k);
        let mut g_u: Vec<Tensor<f32>> = Vec::with_capacity(k);
        let mut g_w: Vec<Tensor<f32>> = Vec::with_capacity(k);
        for s in 0..k {
            let (ce, g) = cross_entropy(&p_l[s], &lab.labels)?;
            terms[s].ce = ce;
            g_l.push(g);
            let cons = consistency_loss(&p_w[s], &wp[s])?;
            terms[s].cons = cons.loss;
            let mut gu = Tensor::zeros(p_u[s].shape());
            let mut gw = Tensor::zeros(p_w[s].shape());
            if l.lambda1 > 0.0 {
                let c = l.lambda1 as f32;
                gw.add_scaled(&cons.grad_pred_of_warped, c)?;
                if self.teacher.is_none() {
                    gu.add_scaled(&warp_batch_backward(&grids, &cons.grad_warped_pred)?, c)?;
                }
            }
            g_u.push(gu);
            g_w.push(gw);
        }

        if self.config.stabilization_enabled() {
            let mask = StableMask::compute(&p_w[0], &wp[0], &p_w[1], &wp[1], l.xi)?;
            let sta = stabilization_loss(&p_w[0], &p_w[1], &mask)?;
            terms[0].sta = sta.loss_a;
            terms[1].sta = sta.loss_b;
            if l.lambda2 > 0.0 {
                g_w[0].add_scaled(&sta.grad_a, l.lambda2 as f32)?;
                g_w[1].add_scaled(&sta.grad_b, l.lambda2 as f32)?;
            }
        }

        let mut gate = 0.0;
        if !self.discriminators.is_empty() {
            let real = one_hot::<f32>(&lab.labels, nl, self.classes, h, w)?;
            let images = Tensor::stack_batches(&[&lab.images, &unl.images])?;
            for s in 0..k {
                terms[s].d = self.discriminator_step(s, &real, &p_u[s], &images, lr_d)?;
                if !terms[s].d.is_finite() {
                    return Err(TrainError::NonFinite {
                        iter: self.iter,
                        what: "discriminator loss".into(),
                    });
                }
            }
            for s in 0..k {
                let (fm, st, g, open) = self.adversarial_terms(s, &real, &p_u[s], &images)?;
                terms[s].fm = fm;
                terms[s].st = st;
                gate += open / k as f64;
                if l.lambda3 > 0.0 {
                    g_u[s].add_scaled(&g, l.lambda3 as f32)?;
                }
            }
        }

        let mut rec = LossRecord {
            iter: self.iter,
            lr,
            a: terms[0],
            b: terms.get(1).copied().unwrap_or_default(),
            gate_open: gate,
            total: 0.0,
        };
        rec.check()?;
        rec.total = total_loss(&rec.a, &rec.b, &l);

        for s in 0..k {
            let g = Tensor::stack_batches(&[&g_l[s], &g_u[s], &g_w[s]])?;
            g.check_finite("student gradient")?;
            let net = &mut self.students[s];
            net.zero_grad();
            net.backward_params(&g)?;
            self.student_opt[s].step(&mut net.params_mut(), lr)?;
        }
        if let Some(t) = self.teacher.as_mut() {
            ema_update(t, &self.students[0], self.config.ema_decay);
        }
        Ok(rec)
    }

    /// One Adam step of discriminator `s` on one-hot labels (real) against
    /// the detached prediction (fake). Returns the loss before the step.
    fn discriminator_step(
        &mut self,
        s: usize,
        real: &Tensor<f32>,
        fake: &Tensor<f32>,
        images: &Tensor<f32>,
        lr_d: f64,
    ) -> Result<f64> {
        let nl = real.shape()[0];
        let d = &mut self.discriminators[s];
        let probs = Tensor::stack_batches(&[real, &fake.detached()])?;
        let out = d.forward(&probs, images)?;
        let logits: Vec<f64> = out.logits.data().iter().map(|&v| v as f64).collect();
        let (loss, gr, gf) = discriminator_loss_logits(&logits[..nl], &logits[nl..])?;
        let dl: Vec<f32> = gr.iter().chain(&gf).map(|&v| v as f32).collect();
        d.zero_grad();
        d.backward_params_logits(&Tensor::new(&[dl.len()], dl)?)?;
        self.disc_opt[s].step(&mut d.params_mut(), lr_d)?;
        Ok(loss)
    }

    /// Feature matching and self-training for student `s` through its
    /// (already updated) discriminator. Returns `(L_fm, L_st, gradient on
    /// the unlabeled prediction for λ_fm·L_fm + λ_st·L_st, gate fraction)`.
    /// The discriminator's own parameter gradients are discarded.
    fn adversarial_terms(
        &mut self,
        s: usize,
        real: &Tensor<f32>,
        p_u: &Tensor<f32>,
        images: &Tensor<f32>,
    ) -> Result<(f64, f64, Tensor<f32>, f64)> {
        let l = self.losses_now();
        let nl = real.shape()[0];
        let nu = p_u.shape()[0];
        let d = &mut self.discriminators[s];
        let probs = Tensor::stack_batches(&[real, p_u])?;
        let out = d.forward(&probs, images)?;
        let feat_real = out.feature.slice_batch(0, nl)?;
        let feat_fake = out.feature.slice_batch(nl, nl + nu)?;
        let (fm, g_feat) = feature_matching_loss(&feat_real, &feat_fake)?;
        let scores: Vec<f64> = out.scores.data()[nl..].iter().map(|&v| v as f64).collect();
        let st = self_training_loss(p_u, &scores, l.gamma)?;

        let d_feature = Tensor::stack_batches(&[&Tensor::zeros(feat_real.shape()), &g_feat])?;
        let (d_probs, _) = d.backward_logits(&Tensor::zeros(&[nl + nu]), Some(&d_feature))?;
        d.zero_grad();
        let mut g = d_probs.slice_batch(nl, nl + nu)?.scale(l.lambda_fm as f32);
        g.add_scaled(&st.grad, l.lambda_st as f32)?;
        Ok((fm, st.loss, g, st.gate_open))
    }

    /// Mean consistency loss of each student on `data` under fixed warps
    /// (one per sample, seeded from `warp_seed` and the sample id), averaged
    /// over students.
    pub fn held_out_consistency(&mut self, data: &SegDataset, warp_seed: u64) -> Result<f64> {
        let params = self.warp_params;
        let mut per_student = Vec::new();
        for net in self.students.iter_mut() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for chunk in data.samples.chunks(EVAL_CHUNK) {
                let refs: Vec<&crate::data::SegSample> = chunk.iter().collect();
                let x = stack_images(&refs)?;
                let seeds: Vec<u64> = chunk.iter().map(|s| derive_seed(warp_seed, s.id)).collect();
                let (h, w) = (chunk[0].height(), chunk[0].width());
                let grids = warp_grids(params, &seeds, h, w)?;
                let pw = net.forward(&warp_batch(&x, &grids)?)?;
                let wp = warp_batch(&net.forward(&x)?, &grids)?;
                sum += consistency_loss(&pw, &wp)?.loss * chunk.len() as f64;
                count += chunk.len();
            }
            per_student.push(sum / count.max(1) as f64);
        }
        Ok(per_student.iter().sum::<f64>() / per_student.len() as f64)
    }

    /// `input | prediction_a | prediction_b | label` strips for the first
    /// `count` samples of `data`.
    pub fn dump_predictions(&mut self, dir: &Path, data: &SegDataset, count: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let chunk: Vec<&crate::data::SegSample> = data.samples.iter().take(count).collect();
        if chunk.is_empty() {
            return Ok(());
        }
        let x = stack_images(&chunk)?;
        let (h, w) = (chunk[0].height(), chunk[0].width());
        let mut preds = Vec::new();
        for (_, net) in self.models_mut().into_iter().take(2) {
            preds.push(argmax_classes(&net.forward(&x)?)?);
        }
        let plane = h * w;
        for (i, s) in chunk.iter().enumerate() {
            let mut parts = vec![image_to_rgb(&s.image)];
            for p in &preds {
                parts.push(label_to_rgb(&p[i * plane..(i + 1) * plane], h, w));
            }
            parts.push(label_to_rgb(&s.label, h, w));
            hstack(&parts).save(&dir.join(format!("iter{:06}_{:06}.ppm", self.iter, s.id)))?;
        }
        Ok(())
    }
}

/// `teacher ← decay · teacher + (1 − decay) · student`, parameter-wise.
pub fn ema_update<T: Scalar>(teacher: &mut StudentNet<T>, student: &StudentNet<T>, decay: f64) {
    let e = T::from_f64_lossy(decay);
    let one_minus = T::from_f64_lossy(1.0 - decay);
    let src = student.params();
    for (t, s) in teacher.params_mut().into_iter().zip(src) {
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = e * *a + one_minus * b;
        }
    }
}

fn dump_batch(dir: &Path, iter: usize, lab: &Batch, unl: Option<&Batch>, _classes: usize) -> Result<()> {
    let root = dir.join(format!("nan_dump_iter{iter:06}"));
    std::fs::create_dir_all(&root)?;
    let mut ids = format!("labeled {:?}\n", lab.ids);
    if let Some(u) = unl {
        ids.push_str(&format!("unlabeled {:?}\n", u.ids));
    }
    std::fs::write(root.join("batch.txt"), ids)?;
    let [_, _, h, w] = lab.images.dims4("dump")?;
    for (tag, batch) in [("l", Some(lab)), ("u", unl)] {
        let Some(b) = batch else { continue };
        for i in 0..b.len() {
            let img = b.images.slice_batch(i, i + 1)?.reshape(&[3, h, w])?;
            let strip = hstack(&[
                image_to_rgb(&img),
                label_to_rgb(&b.labels[i * h * w..(i + 1) * h * w], h, w),
            ]);
            strip.save(&root.join(format!("{tag}_{:06}.ppm", b.ids[i])))?;
        }
    }
    Ok(())
}
