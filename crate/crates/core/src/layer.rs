//! Layers with cached activations and hand-written backward passes.
//!
//! `backward` consumes the cache of the most recent `forward`, returns the
//! input gradient and accumulates parameter gradients into each parameter's
//! gradient buffer.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::ops::{self, ConvCache};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    LeakyRelu,
    BilinearUpsample,
    SoftmaxChannels,
    GlobalAvgPool,
    ConcatChannels,
    Sigmoid,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::LeakyRelu => "leaky-relu",
            LayerKind::BilinearUpsample => "bilinear-upsample",
            LayerKind::SoftmaxChannels => "softmax-over-channels",
            LayerKind::GlobalAvgPool => "global-average-pool",
            LayerKind::ConcatChannels => "concat-channels",
            LayerKind::Sigmoid => "sigmoid",
        }
    }
}

pub trait Layer<T: Scalar> {
    fn kind(&self) -> LayerKind;

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>>;

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [c_out, _, k, kw] = weight.dims4("Conv2d::new")?;
        if k != kw || k % 2 == 0 {
            return Err(CoreError::invalid("Conv2d::new", "kernel must be square and odd"));
        }
        bias.expect_shape(&[c_out], "Conv2d::new bias")?;
        Ok(Conv2d {
            weight,
            bias,
            stride,
            pad,
            cache: None,
        })
    }

    /// Kaiming-uniform fan-in weights, zero bias, "same" padding.
    pub fn kaiming<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        // gain for leaky-relu with slope 0.2: sqrt(2 / (1 + 0.2²))
        let gain = (2.0 / (1.0 + 0.04f64)).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        let weight = Tensor::from_fn(&[out_channels, in_channels, kernel, kernel], |_| {
            T::from_f64_lossy(rng.random_range(-bound..bound))
        });
        Conv2d::new(weight, Tensor::zeros(&[out_channels]), stride, kernel / 2).expect("valid kaiming geometry")
    }

    /// Like `backward`, but only the parameter gradients are produced.
    pub fn backward_params(&mut self, upstream: &Tensor<T>) -> Result<()> {
        let cache = self.cache.take().ok_or(CoreError::BackwardBeforeForward("conv2d"))?;
        let mut wg = self
            .weight
            .take_grad()
            .unwrap_or_else(|| vec![T::zero(); self.weight.numel()]);
        let mut bg = self
            .bias
            .take_grad()
            .unwrap_or_else(|| vec![T::zero(); self.bias.numel()]);
        ops::conv2d_param_grads(&cache, &self.weight, self.stride, self.pad, upstream, &mut wg, &mut bg)?;
        self.weight.grad_mut().copy_from_slice(&wg);
        self.bias.grad_mut().copy_from_slice(&bg);
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, cache) = ops::conv2d(input, &self.weight, &self.bias, self.stride, self.pad)?;
        self.cache = Some(cache);
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(CoreError::BackwardBeforeForward("conv2d"))?;
        let mut wg = self
            .weight
            .take_grad()
            .unwrap_or_else(|| vec![T::zero(); self.weight.numel()]);
        let mut bg = self
            .bias
            .take_grad()
            .unwrap_or_else(|| vec![T::zero(); self.bias.numel()]);
        let dx = ops::conv2d_backward(&cache, &self.weight, self.stride, self.pad, upstream, &mut wg, &mut bg);
        self.weight.grad_mut().copy_from_slice(&wg);
        self.bias.grad_mut().copy_from_slice(&bg);
        dx
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu<T: Scalar> {
    pub slope: T,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        LeakyRelu {
            slope: T::from_f64_lossy(slope),
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for LeakyRelu<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::LeakyRelu
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.input = Some(input.detached());
        Ok(ops::leaky_relu(input, self.slope))
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or(CoreError::BackwardBeforeForward("leaky-relu"))?;
        ops::leaky_relu_backward(&x, self.slope, upstream)
    }
}

#[derive(Debug, Clone)]
pub struct BilinearUpsample {
    pub factor: usize,
    input_shape: Option<[usize; 4]>,
}

impl BilinearUpsample {
    pub fn new(factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(CoreError::invalid("BilinearUpsample", "factor must be ≥ 1"));
        }
        Ok(BilinearUpsample {
            factor,
            input_shape: None,
        })
    }
}

impl<T: Scalar> Layer<T> for BilinearUpsample {
    fn kind(&self) -> LayerKind {
        LayerKind::BilinearUpsample
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.input_shape = Some(input.dims4("bilinear-upsample")?);
        ops::bilinear_upsample(input, self.factor)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or(CoreError::BackwardBeforeForward("bilinear-upsample"))?;
        ops::bilinear_upsample_backward(shape, self.factor, upstream)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SoftmaxChannels<T: Scalar> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> SoftmaxChannels<T> {
    pub fn new() -> Self {
        SoftmaxChannels { output: None }
    }
}

impl<T: Scalar> Layer<T> for SoftmaxChannels<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::SoftmaxChannels
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::softmax_channels(input)?;
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .output
            .take()
            .ok_or(CoreError::BackwardBeforeForward("softmax-over-channels"))?;
        ops::softmax_channels_backward(&y, upstream)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn kind(&self) -> LayerKind {
        LayerKind::GlobalAvgPool
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.input_shape = Some(input.dims4("global-average-pool")?);
        ops::global_avg_pool(input)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or(CoreError::BackwardBeforeForward("global-average-pool"))?;
        ops::global_avg_pool_backward(shape, upstream)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T: Scalar> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Sigmoid { output: None }
    }
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Sigmoid
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::sigmoid(input);
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.take().ok_or(CoreError::BackwardBeforeForward("sigmoid"))?;
        ops::sigmoid_backward(&y, upstream)
    }
}

/// Two-input channel concatenation; backward splits the gradient.
#[derive(Debug, Clone, Default)]
pub struct ConcatChannels {
    first_channels: Option<usize>,
}

impl ConcatChannels {
    pub fn new() -> Self {
        ConcatChannels::default()
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::ConcatChannels
    }

    pub fn forward<T: Scalar>(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let out = ops::concat_channels(a, b)?;
        self.first_channels = Some(a.shape()[1]);
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, upstream: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let first = self
            .first_channels
            .take()
            .ok_or(CoreError::BackwardBeforeForward("concat-channels"))?;
        ops::split_channels(upstream, first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::kaiming(1, 1, 3, 1, &mut rng);
        let g = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            conv.backward(&g),
            Err(CoreError::BackwardBeforeForward("conv2d"))
        ));
        let mut sm = SoftmaxChannels::<f64>::new();
        assert!(sm.backward(&g).is_err());
        let mut cat = ConcatChannels::new();
        assert!(cat.backward(&g).is_err());
    }

    #[test]
    fn conv_gradients_have_parameter_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::kaiming(2, 3, 3, 2, &mut rng);
        let x = Tensor::from_fn(&[2, 2, 6, 6], |i| (i as f64).sin());
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 3]);
        let dx = conv.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
        assert_eq!(dx.shape(), x.shape());
        assert_eq!(conv.weight.grad().unwrap().len(), conv.weight.numel());
        assert_eq!(conv.bias.grad().unwrap().len(), 3);
        // bias gradient of a summed output is the output plane count per sample
        assert!(conv.bias.grad().unwrap().iter().all(|&g| g == 18.0));
    }

    #[test]
    fn kaiming_weights_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f32>::kaiming(4, 8, 3, 1, &mut rng);
        let bound = (2.0f32 / 1.04).sqrt() * (3.0f32 / 36.0).sqrt();
        assert!(conv.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(conv.bias.data().iter().all(|&b| b == 0.0));
    }
}
