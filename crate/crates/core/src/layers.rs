//! Layer specifications, parameter initialization, and the Adam optimizer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LayerKind {
    Conv3d,
    Conv3dTranspose,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// One layer of the network; dense layers ignore kernel/stride/pad.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Conv3d, in_ch, out_ch, kernel, stride, pad, activation }
    }

    pub fn conv_transpose(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Conv3dTranspose, in_ch, out_ch, kernel, stride, pad, activation }
    }

    pub fn dense(in_ch: usize, out_ch: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Dense, in_ch, out_ch, kernel: 0, stride: 1, pad: 0, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::contract(format!("layer channel counts must be positive: {self:?}")));
        }
        if self.kind != LayerKind::Dense && (self.kernel == 0 || self.stride == 0) {
            return Err(Error::contract(format!("conv layer extents must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Shapes of this layer's weight and bias tensors.
    pub fn weight_shapes(&self) -> (Vec<usize>, Vec<usize>) {
        match self.kind {
            LayerKind::Conv3d => (
                vec![self.out_ch, self.in_ch, self.kernel, self.kernel, self.kernel],
                vec![self.out_ch],
            ),
            // Transposed kernels are stored [in, out, k, k, k] so that a
            // forward convolution with the same tensor is the exact adjoint.
            LayerKind::Conv3dTranspose => (
                vec![self.in_ch, self.out_ch, self.kernel, self.kernel, self.kernel],
                vec![self.out_ch],
            ),
            LayerKind::Dense => (vec![self.in_ch, self.out_ch], vec![self.out_ch]),
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv3d => self.in_ch * self.kernel.pow(3),
            LayerKind::Conv3dTranspose => self.out_ch * self.kernel.pow(3),
            LayerKind::Dense => self.in_ch,
        }
    }
}

/// A trainable tensor plus its Adam state.
#[derive(Debug, Clone)]
pub struct Parameter<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Option<Tensor<F>>,
    pub adam_m: Tensor<F>,
    pub adam_v: Tensor<F>,
    pub step_count: u64,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            grad: None,
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        }
    }
}

/// Kaiming-uniform kernels/weights, zero biases. Weight names are
/// `<layer>.kernel` / `<layer>.weight` and `<layer>.bias`.
pub fn init_parameters<F: Scalar>(
    specs: &[(String, LayerSpec)],
    seed: u64,
) -> Result<Vec<Parameter<F>>> {
    let mut params = Vec::with_capacity(specs.len() * 2);
    for (index, (name, spec)) in specs.iter().enumerate() {
        spec.validate()?;
        let (wshape, bshape) = spec.weight_shapes();
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        let mut rng = rng::derive(seed, Stream::ParamInit, index as u64, 0);
        let n: usize = wshape.iter().product();
        let data = (0..n)
            .map(|_| F::from_f64_lossy((rng.gen::<f64>() * 2.0 - 1.0) * bound))
            .collect();
        let wname = match spec.kind {
            LayerKind::Dense => format!("{name}.weight"),
            _ => format!("{name}.kernel"),
        };
        params.push(Parameter::new(wname, Tensor::from_vec(wshape, data)?));
        params.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(bshape)));
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<F: Scalar> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<F>,
}

impl<F: Scalar> AdamConfig<F> {
    pub fn with_lr(lr: F) -> Self {
        AdamConfig {
            lr,
            beta1: F::from_f64_lossy(0.9),
            beta2: F::from_f64_lossy(0.999),
            eps: F::from_f64_lossy(1e-8),
            clip_norm: None,
        }
    }
}

/// One Adam update with bias correction; grads are consumed and zeroed.
pub fn adam_step<F: Scalar>(params: &mut [Parameter<F>], cfg: &AdamConfig<F>) -> Result<()> {
    for p in params.iter() {
        if p.grad.is_none() {
            return Err(Error::contract(format!("adam_step: parameter '{}' has no gradient", p.name)));
        }
    }
    if let Some(max_norm) = cfg.clip_norm {
        clip_global_norm(params, max_norm);
    }
    let one = F::one();
    for p in params.iter_mut() {
        let grad = p.grad.take().unwrap();
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = one - cfg.beta1.powi(t);
        let bc2 = one - cfg.beta2.powi(t);
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        let w = p.value.data_mut();
        for i in 0..grad.numel() {
            let g = grad.data()[i];
            m[i] = cfg.beta1 * m[i] + (one - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (one - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] = w[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Scales all grads so the concatenated gradient norm is at most `max_norm`.
pub fn clip_global_norm<F: Scalar>(params: &mut [Parameter<F>], max_norm: F) {
    let mut sq = F::zero();
    for p in params.iter() {
        if let Some(g) = &p.grad {
            sq += g.data().iter().map(|&v| v * v).sum();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = &mut p.grad {
                for v in g.data_mut() {
                    *v = *v * scale;
                }
            }
        }
    }
}
