//! Toy encoder-decoder students and conditional discriminators.
//!
//! Student: four stride-2 conv blocks (H → H/16), then the deepest feature
//! map is upsampled ×4 and joined with the H/4 block output, two 1×1 convs
//! produce class logits, and a final ×4 bilinear upsample restores the input
//! resolution before the channel softmax.
//!
//! Discriminator: prediction map ⊕ image, four stride-2 conv blocks, global
//! average pooling, a 1×1 conv to one logit and a sigmoid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpseg_core::{
    BilinearUpsample, ConcatChannels, Conv2d, CoreError, GlobalAvgPool, Layer, LeakyRelu, Scalar, Sigmoid,
    SoftmaxChannels, Tensor, LEAKY_SLOPE,
};

use crate::error::{Result, TrainError};

/// Channel count of the image input.
pub const IMAGE_CHANNELS: usize = 3;

/// Parameter access shared by the students and discriminators.
pub trait Parameterized<T: Scalar> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn params(&self) -> Vec<&Tensor<T>> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

fn conv_params<'a, T: Scalar>(prefix: &str, conv: &'a Conv2d<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
    out.push((format!("{prefix}.weight"), &conv.weight));
    out.push((format!("{prefix}.bias"), &conv.bias));
}

/// Derives an init stream for one network. Streams are separated by role so
/// that student `i` and discriminator `i` never share weights.
pub fn init_rng(seed: u64, index: u64, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index);
    rng.set_stream(role);
    rng
}

pub const STUDENT_STREAM: u64 = 0x5354;
pub const DISCRIMINATOR_STREAM: u64 = 0x4449;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudentConfig {
    pub classes: usize,
    pub widths: [usize; 4],
    pub decoder_width: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            classes: 4,
            widths: [16, 32, 64, 64],
            decoder_width: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudentNet<T: Scalar> {
    pub config: StudentConfig,
    encoder: Vec<Conv2d<T>>,
    encoder_act: Vec<LeakyRelu<T>>,
    up_deep: BilinearUpsample,
    join: ConcatChannels,
    fuse: Conv2d<T>,
    fuse_act: LeakyRelu<T>,
    classifier: Conv2d<T>,
    up_out: BilinearUpsample,
    softmax: SoftmaxChannels<T>,
}

impl<T: Scalar> StudentNet<T> {
    pub fn new(config: StudentConfig, seed: u64, index: u64) -> Result<Self> {
        if config.classes < 2 {
            return Err(TrainError::Config(format!(
                "student needs at least 2 classes, got {}",
                config.classes
            )));
        }
        if config.widths.contains(&0) || config.decoder_width == 0 {
            return Err(TrainError::Config("channel widths must be positive".into()));
        }
        let mut rng = init_rng(seed, index, STUDENT_STREAM);
        let w = config.widths;
        let mut encoder = Vec::with_capacity(4);
        let mut c_in = IMAGE_CHANNELS;
        for &c_out in &w {
            encoder.push(Conv2d::kaiming(c_in, c_out, 3, 2, &mut rng));
            c_in = c_out;
        }
        let fuse = Conv2d::kaiming(w[3] + w[1], config.decoder_width, 1, 1, &mut rng);
        let classifier = Conv2d::kaiming(config.decoder_width, config.classes, 1, 1, &mut rng);
        Ok(StudentNet {
            config,
            encoder,
            encoder_act: (0..4).map(|_| LeakyRelu::new(LEAKY_SLOPE)).collect(),
            up_deep: BilinearUpsample::new(4)?,
            join: ConcatChannels::new(),
            fuse,
            fuse_act: LeakyRelu::new(LEAKY_SLOPE),
            classifier,
            up_out: BilinearUpsample::new(4)?,
            softmax: SoftmaxChannels::new(),
        })
    }

    /// `[N, 3, H, W]` images to `[N, C, H, W]` class probabilities.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.dims4("student_forward")?;
        if c != IMAGE_CHANNELS {
            return Err(CoreError::ShapeMismatch {
                op: "student_forward",
                expected: vec![IMAGE_CHANNELS],
                actual: vec![c],
            }
            .into());
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(CoreError::invalid(
                "student_forward",
                format!("spatial extent {h}×{w} is not a positive multiple of 16"),
            )
            .into());
        }
        let mut feats = Vec::with_capacity(4);
        let mut cur = x.detached();
        for (conv, act) in self.encoder.iter_mut().zip(self.encoder_act.iter_mut()) {
            cur = act.forward(&conv.forward(&cur)?)?;
            feats.push(cur.clone());
        }
        let up = self.up_deep.forward(&feats[3])?;
        let joined = self.join.forward(&up, &feats[1])?;
        let fused = self.fuse_act.forward(&self.fuse.forward(&joined)?)?;
        let logits = self.classifier.forward(&fused)?;
        let full = self.up_out.forward(&logits)?;
        Ok(self.softmax.forward(&full)?)
    }

    /// Accumulates parameter gradients from `d loss / d probs` and returns the
    /// gradient with respect to the input images.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.backward_to_input_block(upstream)?;
        Ok(self.encoder[0].backward(&g)?)
    }

    /// Parameter gradients only; skips the gradient for the input image.
    pub fn backward_params(&mut self, upstream: &Tensor<T>) -> Result<()> {
        let g = self.backward_to_input_block(upstream)?;
        Ok(self.encoder[0].backward_params(&g)?)
    }

    fn backward_to_input_block(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.softmax.backward(upstream)?;
        let g = self.up_out.backward(&g)?;
        let g = self.classifier.backward(&g)?;
        let g = self.fuse.backward(&self.fuse_act.backward(&g)?)?;
        let (g_up, g_skip) = self.join.backward(&g)?;
        let mut g = self.up_deep.backward(&g_up)?;
        for i in (1..4).rev() {
            if i == 1 {
                g = g.add(&g_skip)?;
            }
            g = self.encoder[i].backward(&self.encoder_act[i].backward(&g)?)?;
        }
        Ok(self.encoder_act[0].backward(&g)?)
    }
}

impl<T: Scalar> Parameterized<T> for StudentNet<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, conv) in self.encoder.iter().enumerate() {
            conv_params(&format!("enc{}", i + 1), conv, &mut out);
        }
        conv_params("fuse", &self.fuse, &mut out);
        conv_params("classifier", &self.classifier, &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for conv in self.encoder.iter_mut() {
            out.extend(conv.params_mut());
        }
        out.extend(self.fuse.params_mut());
        out.extend(self.classifier.params_mut());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub classes: usize,
    pub widths: [usize; 4],
    /// 1-based index of the block whose output is the feature-matching tap.
    pub tap: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            classes: 4,
            widths: [8, 16, 16, 16],
            tap: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscOutput<T: Scalar> {
    /// Pre-sigmoid scores, shape `[N]`.
    pub logits: Tensor<T>,
    /// Realness scores in (0, 1), shape `[N]`.
    pub scores: Tensor<T>,
    /// Output of the tap block, `[N, widths[tap−1], H/2^tap, W/2^tap]`.
    pub feature: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    pub config: DiscriminatorConfig,
    join: ConcatChannels,
    blocks: Vec<Conv2d<T>>,
    acts: Vec<LeakyRelu<T>>,
    pool: GlobalAvgPool,
    head: Conv2d<T>,
    sigmoid: Sigmoid<T>,
    batch: Option<usize>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64, index: u64) -> Result<Self> {
        if !(1..=4).contains(&config.tap) {
            return Err(TrainError::Config(format!(
                "feature tap must name block 1..4, got {}",
                config.tap
            )));
        }
        if config.widths.contains(&0) || config.classes < 2 {
            return Err(TrainError::Config("invalid discriminator geometry".into()));
        }
        let mut rng = init_rng(seed, index, DISCRIMINATOR_STREAM);
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = config.classes + IMAGE_CHANNELS;
        for &c_out in &config.widths {
            blocks.push(Conv2d::kaiming(c_in, c_out, 3, 2, &mut rng));
            c_in = c_out;
        }
        let head = Conv2d::kaiming(c_in, 1, 1, 1, &mut rng);
        Ok(Discriminator {
            config,
            join: ConcatChannels::new(),
            blocks,
            acts: (0..4).map(|_| LeakyRelu::new(LEAKY_SLOPE)).collect(),
            pool: GlobalAvgPool::new(),
            head,
            sigmoid: Sigmoid::new(),
            batch: None,
        })
    }

    pub fn forward(&mut self, probs: &Tensor<T>, image: &Tensor<T>) -> Result<DiscOutput<T>> {
        let [n, c, h, w] = probs.dims4("discriminator_forward")?;
        if c != self.config.classes {
            return Err(CoreError::ShapeMismatch {
                op: "discriminator_forward",
                expected: vec![n, self.config.classes, h, w],
                actual: probs.shape().to_vec(),
            }
            .into());
        }
        image.expect_shape(&[n, IMAGE_CHANNELS, h, w], "discriminator_forward")?;
        let mut cur = self.join.forward(probs, image)?;
        let mut feature = None;
        for (i, (conv, act)) in self.blocks.iter_mut().zip(self.acts.iter_mut()).enumerate() {
            cur = act.forward(&conv.forward(&cur)?)?;
            if i + 1 == self.config.tap {
                feature = Some(cur.clone());
            }
        }
        let pooled = self.pool.forward(&cur)?;
        let logits = self.head.forward(&pooled)?.reshape(&[n])?;
        let scores = self.sigmoid.forward(&logits)?;
        self.batch = Some(n);
        Ok(DiscOutput {
            logits,
            scores,
            feature: feature.expect("tap index validated at construction"),
        })
    }

    /// Backward from gradients on the scores (through the sigmoid).
    pub fn backward(&mut self, d_scores: &Tensor<T>, d_feature: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tensor<T>)> {
        let d_logits = self.sigmoid.backward(d_scores)?;
        self.backward_logits(&d_logits, d_feature)
    }

    /// Backward from gradients on the pre-sigmoid logits. Returns the
    /// gradients for the prediction map and for the image.
    pub fn backward_logits(
        &mut self,
        d_logits: &Tensor<T>,
        d_feature: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self
            .batch
            .take()
            .ok_or(CoreError::BackwardBeforeForward("discriminator"))?;
        let g = self.backward_to_input_block(n, d_logits, d_feature)?;
        let g = self.blocks[0].backward(&g)?;
        let (d_probs, d_image) = self.join.backward(&g)?;
        Ok((d_probs, d_image))
    }

    /// Parameter gradients from logit gradients, without input gradients.
    pub fn backward_params_logits(&mut self, d_logits: &Tensor<T>) -> Result<()> {
        let n = self
            .batch
            .take()
            .ok_or(CoreError::BackwardBeforeForward("discriminator"))?;
        let g = self.backward_to_input_block(n, d_logits, None)?;
        self.blocks[0].backward_params(&g)?;
        // The concatenation cache is left unused.
        self.join = ConcatChannels::new();
        Ok(())
    }

    fn backward_to_input_block(
        &mut self,
        n: usize,
        d_logits: &Tensor<T>,
        d_feature: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let g = d_logits.clone().reshape(&[n, 1, 1, 1])?;
        let g = self.head.backward(&g)?;
        let mut g = self.pool.backward(&g)?;
        for i in (0..4).rev() {
            if i + 1 == self.config.tap {
                if let Some(df) = d_feature {
                    g = g.add(df)?;
                }
            }
            g = self.acts[i].backward(&g)?;
            if i > 0 {
                g = self.blocks[i].backward(&g)?;
            }
        }
        Ok(g)
    }
}

impl<T: Scalar> Parameterized<T> for Discriminator<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, conv) in self.blocks.iter().enumerate() {
            conv_params(&format!("block{}", i + 1), conv, &mut out);
        }
        conv_params("head", &self.head, &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for conv in self.blocks.iter_mut() {
            out.extend(conv.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}

/// One-hot `[N, C, H, W]` encoding of a label batch. Pixels carrying a label
/// outside `0..classes` (the ignore marker) encode as all-zero.
pub fn one_hot<T: Scalar>(labels: &[u8], n: usize, classes: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(CoreError::ShapeMismatch {
            op: "one_hot",
            expected: vec![n, h, w],
            actual: vec![labels.len()],
        }
        .into());
    }
    let mut out = Tensor::zeros(&[n, classes, h, w]);
    let data = out.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let c = labels[b * plane + p] as usize;
            if c < classes {
                data[(b * classes + c) * plane + p] = T::one();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, 3, h, w], |_| rng.random::<f64>())
    }

    fn small_student() -> StudentConfig {
        StudentConfig {
            classes: 3,
            widths: [4, 6, 6, 8],
            decoder_width: 5,
        }
    }

    #[test]
    fn student_output_is_a_distribution_at_input_size() {
        let mut net = StudentNet::<f32>::new(StudentConfig::default(), 1, 0).unwrap();
        let x = image(2, 32, 48, 3).cast::<f32>();
        let p = net.forward(&x).unwrap();
        assert_eq!(p.shape(), &[2, 4, 32, 48]);
        let plane = 32 * 48;
        for b in 0..2 {
            for q in 0..plane {
                let s: f32 = (0..4).map(|c| p.data()[(b * 4 + c) * plane + q]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn student_rejects_indivisible_input() {
        let mut net = StudentNet::<f64>::new(small_student(), 1, 0).unwrap();
        assert!(net.forward(&image(1, 24, 32, 0)).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 2, 16, 16])).is_err());
    }

    #[test]
    fn independent_students_differ_but_match_in_size() {
        let mut a = StudentNet::<f64>::new(small_student(), 9, 0).unwrap();
        let mut b = StudentNet::<f64>::new(small_student(), 9, 1).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        let x = image(1, 16, 16, 5);
        let diff = a.forward(&x).unwrap().max_abs_diff(&b.forward(&x).unwrap()).unwrap();
        assert!(diff > 0.0);
    }

    #[test]
    fn students_and_discriminators_use_separate_streams() {
        let s = StudentNet::<f64>::new(small_student(), 4, 0).unwrap();
        let d = Discriminator::<f64>::new(
            DiscriminatorConfig {
                classes: 3,
                widths: [4, 6, 6, 8],
                tap: 3,
            },
            4,
            0,
        )
        .unwrap();
        assert_ne!(s.params()[0].data()[..4], d.params()[0].data()[..4]);
    }

    #[test]
    fn discriminator_scores_are_probabilities() {
        let cfg = DiscriminatorConfig {
            classes: 3,
            ..DiscriminatorConfig::default()
        };
        let mut d = Discriminator::<f64>::new(cfg, 2, 0).unwrap();
        let labels: Vec<u8> = (0..2 * 16 * 16).map(|i| (i % 3) as u8).collect();
        let hard = one_hot::<f64>(&labels, 2, 3, 16, 16).unwrap();
        let soft = hard.map(|v| 0.1 + 0.7 * v);
        let img = image(2, 16, 16, 1);
        let a = d.forward(&hard, &img).unwrap();
        assert_eq!(a.feature.shape(), &[2, 16, 2, 2]);
        let b = d.forward(&soft, &img).unwrap();
        for s in a.scores.data().iter().chain(b.scores.data()) {
            assert!(*s > 0.0 && *s < 1.0);
        }
        assert!(a.scores.max_abs_diff(&b.scores).unwrap() > 0.0);
    }

    #[test]
    fn discriminator_rejects_wrong_channels() {
        let mut d = Discriminator::<f64>::new(DiscriminatorConfig::default(), 2, 0).unwrap();
        let img = image(1, 16, 16, 1);
        assert!(d.forward(&Tensor::zeros(&[1, 3, 16, 16]), &img).is_err());
        assert!(d
            .forward(&Tensor::zeros(&[1, 4, 16, 16]), &image(1, 32, 16, 1))
            .is_err());
    }

    #[test]
    fn one_hot_zeroes_ignored_pixels() {
        let t = one_hot::<f32>(&[0, 2, 255, 1], 1, 3, 2, 2).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
