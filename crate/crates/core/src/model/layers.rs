//! Minimal layers over candle tensors with explicitly seeded initialization.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng as _;

use crate::error::Result;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated.
    Train,
    /// Running averages, no state change.
    Eval,
}

/// Creates named parameters in a fixed order from one RNG stream.
pub(crate) struct ParamBuilder {
    rng: Rng,
    pub(crate) params: Vec<(String, Var)>,
}

impl ParamBuilder {
    pub(crate) fn new(rng: Rng) -> Self {
        Self {
            rng,
            params: Vec::new(),
        }
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f32) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &Device::Cpu)?)?;
        self.params.push((name, var.clone()));
        Ok(var)
    }

    fn constant(&mut self, name: String, len: usize, value: f32) -> Result<Var> {
        let var = Var::from_tensor(&Tensor::full(value, len, &Device::Cpu)?)?;
        self.params.push((name, var.clone()));
        Ok(var)
    }

    /// He-uniform convolution kernel, no bias (every conv here feeds a batch norm).
    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Conv2d> {
        let bound = (6.0 / (cin * k * k) as f32).sqrt();
        Ok(Conv2d {
            weight: self.uniform(format!("{name}.weight"), &[cout, cin, k, k], bound)?,
            stride,
            padding: k / 2,
        })
    }

    pub(crate) fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNorm2d> {
        Ok(BatchNorm2d {
            name: name.to_string(),
            gamma: self.constant(format!("{name}.weight"), channels, 1.0)?,
            beta: self.constant(format!("{name}.bias"), channels, 0.0)?,
            running_mean: Tensor::zeros(channels, DType::F32, &Device::Cpu)?,
            running_var: Tensor::ones(channels, DType::F32, &Device::Cpu)?,
        })
    }

    /// Weights scaled by `gain·√(3/fan_in)`; biases uniform in `±1/√fan_in`.
    pub(crate) fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f32) -> Result<Linear> {
        let bound = gain * (3.0 / fan_in as f32).sqrt();
        Ok(Linear {
            weight: self.uniform(format!("{name}.weight"), &[fan_out, fan_in], bound)?,
            bias: self.uniform(format!("{name}.bias"), &[fan_out], 1.0 / (fan_in as f32).sqrt())?,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv2d {
    weight: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?)
    }
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm2d {
    pub(crate) name: String,
    gamma: Var,
    beta: Var,
    pub(crate) running_mean: Tensor,
    pub(crate) running_var: Tensor,
}

impl BatchNorm2d {
    pub(crate) fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.running_mean.dim(0)?;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim((0, 2, 3))?;
                let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim((0, 2, 3))?;
                let (n, _, h, w) = x.dims4()?;
                let count = (n * h * w) as f64;
                let unbiased = (var.detach().flatten_all()? * (count / (count - 1.0).max(1.0)))?;
                self.running_mean = ((&self.running_mean * (1.0 - BN_MOMENTUM))?
                    + (mean.detach().flatten_all()? * BN_MOMENTUM)?)?;
                self.running_var = ((&self.running_var * (1.0 - BN_MOMENTUM))? + (unbiased * BN_MOMENTUM)?)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.reshape((1, c, 1, 1))?,
                self.running_var.reshape((1, c, 1, 1))?,
            ),
        };
        let normalized = x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        Ok(normalized
            .broadcast_mul(&self.gamma.as_tensor().reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.as_tensor().reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}
