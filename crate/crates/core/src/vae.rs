//! The convolutional VAE with an MLP prediction head, and its composite
//! loss L = L_rec + alpha * L_KL + beta * L_MLP.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::layers::{init_parameters, Activation, LayerSpec, Parameter};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;

/// Smoothing constant in the Dice loss denominator and numerator.
pub const DICE_SMOOTH: f64 = 1.0;

/// Per-sample latent Gaussian: mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<F: Scalar> {
    pub mu: Vec<F>,
    pub log_var: Vec<F>,
}

/// Batched latent codes as [N, d] tensors.
#[derive(Debug, Clone)]
pub struct LatentBatch<F: Scalar> {
    pub mu: Tensor<F>,
    pub log_var: Tensor<F>,
}

impl<F: Scalar> LatentBatch<F> {
    pub fn codes(&self) -> Vec<LatentCode<F>> {
        let d = self.mu.shape()[1];
        self.mu
            .data()
            .chunks(d)
            .zip(self.log_var.data().chunks(d))
            .map(|(m, lv)| LatentCode { mu: m.to_vec(), log_var: lv.to_vec() })
            .collect()
    }
}

/// Two-class output distribution; index 1 is the hypertrophic analog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDistribution<F: Scalar> {
    pub probs: [F; 2],
}

/// Network topology and loss weights.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub mlp_hidden: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
}

impl ModelConfig {
    /// Default desk-scale model: 32^3 two-channel input, d = 16.
    pub fn desk32() -> Self {
        ModelConfig {
            input_size: 32,
            channels: 2,
            latent_dim: 16,
            encoder: vec![
                LayerSpec::conv(2, 16, 4, 2, 1, Activation::Relu),
                LayerSpec::conv(16, 32, 4, 2, 1, Activation::Relu),
                LayerSpec::conv(32, 64, 4, 2, 1, Activation::Relu),
            ],
            decoder: vec![
                LayerSpec::conv_transpose(64, 32, 4, 2, 1, Activation::Relu),
                LayerSpec::conv_transpose(32, 16, 4, 2, 1, Activation::Relu),
                LayerSpec::conv_transpose(16, 2, 4, 2, 1, Activation::Sigmoid),
            ],
            mlp_hidden: vec![32],
            alpha: 0.1,
            beta: 1.0,
        }
    }

    /// 80^3 / d = 64 preset.
    pub fn full80() -> Self {
        let mut cfg = Self::desk32();
        cfg.input_size = 80;
        cfg.latent_dim = 64;
        cfg
    }

    /// Miniature 8^3 / d = 4 model for gradient verification.
    pub fn tiny8() -> Self {
        ModelConfig {
            input_size: 8,
            channels: 2,
            latent_dim: 4,
            encoder: vec![
                LayerSpec::conv(2, 4, 4, 2, 1, Activation::Relu),
                LayerSpec::conv(4, 8, 4, 2, 1, Activation::Relu),
            ],
            decoder: vec![
                LayerSpec::conv_transpose(8, 4, 4, 2, 1, Activation::Relu),
                LayerSpec::conv_transpose(4, 2, 4, 2, 1, Activation::Sigmoid),
            ],
            mlp_hidden: vec![8],
            alpha: 0.1,
            beta: 1.0,
        }
    }

    /// Spatial extent after the encoder convolutions.
    pub fn bottleneck_spatial(&self) -> Result<usize> {
        let mut s = self.input_size;
        for spec in &self.encoder {
            let padded = s + 2 * spec.pad;
            if padded < spec.kernel {
                return Err(Error::shape(format!(
                    "encoder layer {spec:?} does not fit input extent {s}"
                )));
            }
            s = (padded - spec.kernel) / spec.stride + 1;
        }
        Ok(s)
    }

    /// Flattened feature count feeding the latent heads.
    pub fn bottleneck_features(&self) -> Result<usize> {
        let s = self.bottleneck_spatial()?;
        let ch = self.encoder.last().map(|l| l.out_ch).unwrap_or(self.channels);
        Ok(ch * s * s * s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::contract("loss weights must be nonnegative".to_string()));
        }
        for spec in self.encoder.iter().chain(&self.decoder) {
            spec.validate()?;
        }
        // Decoder must mirror back to the encoder input shape.
        let mut s = self.bottleneck_spatial()?;
        for spec in &self.decoder {
            s = (s - 1) * spec.stride + spec.kernel - 2 * spec.pad;
        }
        if s != self.input_size {
            return Err(Error::shape(format!(
                "decoder output extent {s} != input extent {}",
                self.input_size
            )));
        }
        if let Some(last) = self.decoder.last() {
            if last.out_ch != self.channels {
                return Err(Error::shape(format!(
                    "decoder output channels {} != input channels {}",
                    last.out_ch, self.channels
                )));
            }
        }
        Ok(())
    }

    /// Named layer specs, in deterministic order, for parameter init and
    /// checkpoints.
    pub fn param_specs(&self) -> Result<Vec<(String, LayerSpec)>> {
        let flat = self.bottleneck_features()?;
        let d = self.latent_dim;
        let mut specs = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            specs.push((format!("encoder.conv{}", i + 1), l.clone()));
        }
        specs.push(("encoder.mu".to_string(), LayerSpec::dense(flat, d, Activation::None)));
        specs.push(("encoder.logvar".to_string(), LayerSpec::dense(flat, d, Activation::None)));
        specs.push(("decoder.fc".to_string(), LayerSpec::dense(d, flat, Activation::Relu)));
        for (i, l) in self.decoder.iter().enumerate() {
            specs.push((format!("decoder.convt{}", i + 1), l.clone()));
        }
        let mut prev = d;
        for (i, &h) in self.mlp_hidden.iter().enumerate() {
            specs.push((format!("mlp.fc{}", i + 1), LayerSpec::dense(prev, h, Activation::Relu)));
            prev = h;
        }
        specs.push((
            format!("mlp.fc{}", self.mlp_hidden.len() + 1),
            LayerSpec::dense(prev, 2, Activation::None),
        ));
        Ok(specs)
    }
}

/// Encoder, decoder, and MLP head over one shared parameter list.
pub struct VaeModel<F: Scalar> {
    pub config: ModelConfig,
    pub params: Vec<Parameter<F>>,
    index: HashMap<String, usize>,
}

/// Node ids of all parameters bound onto one graph, parallel to `params`.
pub struct BoundParams {
    nodes: Vec<NodeId>,
}

/// Scalar loss components of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossValues<F: Scalar> {
    pub total: F,
    pub rec: F,
    pub kl: F,
    pub ce: F,
}

/// A recorded training-forward pass, ready for backward.
pub struct LossPass<F: Scalar> {
    pub graph: Graph<F>,
    pub total: NodeId,
    pub rec: NodeId,
    pub kl: NodeId,
    pub ce: NodeId,
    pub mu: NodeId,
    pub decoded: NodeId,
    pub bound: BoundParams,
}

impl<F: Scalar> LossPass<F> {
    pub fn values(&self) -> LossValues<F> {
        LossValues {
            total: self.graph.value(self.total).data()[0],
            rec: self.graph.value(self.rec).data()[0],
            kl: self.graph.value(self.kl).data()[0],
            ce: self.graph.value(self.ce).data()[0],
        }
    }
}

impl<F: Scalar> VaeModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = init_parameters(&config.param_specs()?, seed)?;
        // Start the posterior tight (sigma ~ e^-2) so z tracks mu early on
        // and the decoder learns to condition on the latent instead of
        // averaging it away under unit reparameterization noise.
        for p in params.iter_mut() {
            if p.name == "encoder.logvar.bias" {
                for v in p.value.data_mut() {
                    *v = F::from_f64_lossy(-4.0);
                }
            }
        }
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(VaeModel { config, params, index })
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Insert every parameter onto `graph`; trainable passes use leaves,
    /// frozen evaluation uses constants.
    pub fn bind(&self, graph: &mut Graph<F>, trainable: bool) -> BoundParams {
        let nodes = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    graph.leaf(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        BoundParams { nodes }
    }

    fn node(&self, bound: &BoundParams, name: &str) -> NodeId {
        bound.nodes[self.index[name]]
    }

    fn apply_activation(graph: &mut Graph<F>, x: NodeId, act: Activation) -> NodeId {
        match act {
            Activation::Relu => graph.relu(x),
            Activation::Sigmoid => graph.sigmoid(x),
            Activation::None => x,
        }
    }

    fn dense(
        &self,
        graph: &mut Graph<F>,
        bound: &BoundParams,
        name: &str,
        x: NodeId,
        act: Activation,
    ) -> Result<NodeId> {
        let w = self.node(bound, &format!("{name}.weight"));
        let b = self.node(bound, &format!("{name}.bias"));
        let y = graph.matmul(x, w)?;
        let y = graph.add_bias(y, b)?;
        Ok(Self::apply_activation(graph, y, act))
    }

    /// Encoder body on the graph: x -> (mu, log_var), both [N, d].
    pub fn encode_nodes(
        &self,
        graph: &mut Graph<F>,
        bound: &BoundParams,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let shape = graph.value(x).shape().to_vec();
        if shape.len() != 5 || shape[1] != self.config.channels {
            return Err(Error::shape(format!(
                "encoder input must be [N, {}, S, S, S], got {:?}",
                self.config.channels, shape
            )));
        }
        let n = shape[0];
        let mut h = x;
        for (i, spec) in self.config.encoder.iter().enumerate() {
            let k = self.node(bound, &format!("encoder.conv{}.kernel", i + 1));
            let b = self.node(bound, &format!("encoder.conv{}.bias", i + 1));
            h = graph.conv3d(h, k, Some(b), spec.stride, spec.pad)?;
            h = Self::apply_activation(graph, h, spec.activation);
        }
        let flat = self.config.bottleneck_features()?;
        let h = graph.reshape(h, vec![n, flat])?;
        let mu = self.dense(graph, bound, "encoder.mu", h, Activation::None)?;
        let log_var = self.dense(graph, bound, "encoder.logvar", h, Activation::None)?;
        Ok((mu, log_var))
    }

    /// Decoder body: z [N, d] -> soft segmentation [N, C, S, S, S].
    pub fn decode_nodes(
        &self,
        graph: &mut Graph<F>,
        bound: &BoundParams,
        z: NodeId,
    ) -> Result<NodeId> {
        let shape = graph.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config.latent_dim {
            return Err(Error::shape(format!(
                "decoder input must be [N, {}], got {:?}",
                self.config.latent_dim, shape
            )));
        }
        let n = shape[0];
        let s = self.config.bottleneck_spatial()?;
        let ch = self.config.decoder.first().map(|l| l.in_ch).unwrap_or(self.config.channels);
        let h = self.dense(graph, bound, "decoder.fc", z, Activation::Relu)?;
        let mut h = graph.reshape(h, vec![n, ch, s, s, s])?;
        for (i, spec) in self.config.decoder.iter().enumerate() {
            let k = self.node(bound, &format!("decoder.convt{}.kernel", i + 1));
            let b = self.node(bound, &format!("decoder.convt{}.bias", i + 1));
            h = graph.conv3d_transpose(h, k, Some(b), spec.stride, spec.pad)?;
            h = Self::apply_activation(graph, h, spec.activation);
        }
        Ok(h)
    }

    /// MLP head on mu: [N, d] -> logits [N, 2].
    pub fn mlp_logits_nodes(
        &self,
        graph: &mut Graph<F>,
        bound: &BoundParams,
        mu: NodeId,
    ) -> Result<NodeId> {
        let mut h = mu;
        for i in 1..=self.config.mlp_hidden.len() {
            h = self.dense(graph, bound, &format!("mlp.fc{i}"), h, Activation::Relu)?;
        }
        self.dense(
            graph,
            bound,
            &format!("mlp.fc{}", self.config.mlp_hidden.len() + 1),
            h,
            Activation::None,
        )
    }

    /// Deterministic test-time encoding of a batch.
    pub fn encode(&self, x: &Tensor<F>) -> Result<LatentBatch<F>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let xn = graph.constant(x.clone());
        let (mu, lv) = self.encode_nodes(&mut graph, &bound, xn)?;
        Ok(LatentBatch {
            mu: graph.value(mu).clone(),
            log_var: graph.value(lv).clone(),
        })
    }

    /// Deterministic decoding of latent means [N, d].
    pub fn decode(&self, z: &Tensor<F>) -> Result<Tensor<F>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let zn = graph.constant(z.clone());
        let out = self.decode_nodes(&mut graph, &bound, zn)?;
        Ok(graph.value(out).clone())
    }

    /// Class distribution from a single latent mean.
    pub fn classify(&self, mu: &[F]) -> Result<ClassDistribution<F>> {
        let probs = self.classify_batch(&Tensor::from_vec(vec![1, mu.len()], mu.to_vec())?)?;
        Ok(probs[0])
    }

    pub fn classify_batch(&self, mu: &Tensor<F>) -> Result<Vec<ClassDistribution<F>>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let mn = graph.constant(mu.clone());
        let logits = self.mlp_logits_nodes(&mut graph, &bound, mn)?;
        let sm = graph.softmax_last(logits)?;
        Ok(graph
            .value(sm)
            .data()
            .chunks(2)
            .map(|c| ClassDistribution { probs: [c[0], c[1]] })
            .collect())
    }

    /// Full recorded training pass over a labeled batch.
    ///
    /// `eps` is the reparameterization noise, [N, d]; pass zeros to decode
    /// from mu deterministically.
    pub fn loss_pass(
        &self,
        x: &Tensor<F>,
        labels: &[usize],
        eps: &Tensor<F>,
        trainable: bool,
    ) -> Result<LossPass<F>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, trainable);
        let xn = graph.constant(x.clone());
        let (mu, log_var) = self.encode_nodes(&mut graph, &bound, xn)?;
        let epsn = graph.constant(eps.clone());
        let z = reparameterize_nodes(&mut graph, mu, log_var, epsn)?;
        let decoded = self.decode_nodes(&mut graph, &bound, z)?;
        let rec = dice_loss_nodes(&mut graph, xn, decoded)?;
        let kl = kl_loss_nodes(&mut graph, mu, log_var)?;
        let logits = self.mlp_logits_nodes(&mut graph, &bound, mu)?;
        let ce = graph.cross_entropy_logits(logits, labels)?;
        let akl = graph.scale(kl, F::from_f64_lossy(self.config.alpha));
        let bce = graph.scale(ce, F::from_f64_lossy(self.config.beta));
        let partial = graph.add(rec, akl)?;
        let total = graph.add(partial, bce)?;
        Ok(LossPass { graph, total, rec, kl, ce, mu, decoded, bound })
    }

    /// Backward over a recorded pass, accumulating into `Parameter::grad`.
    pub fn accumulate_gradients(&mut self, pass: &LossPass<F>) -> Result<()> {
        let mut grads = pass.graph.backward(pass.total)?;
        for (i, &node) in pass.bound.nodes.iter().enumerate() {
            if let Some(g) = grads.take(node) {
                match &mut self.params[i].grad {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

/// z = mu + exp(log_var / 2) * eps on the graph; gradient flows to mu and
/// log_var only.
pub fn reparameterize_nodes<F: Scalar>(
    graph: &mut Graph<F>,
    mu: NodeId,
    log_var: NodeId,
    eps: NodeId,
) -> Result<NodeId> {
    let half = graph.scale(log_var, F::from_f64_lossy(0.5));
    let sigma = graph.exp(half);
    let noise = graph.mul(sigma, eps)?;
    graph.add(mu, noise)
}

/// Standard-normal noise tensor [n, d], keyed by (seed, iteration, sample id).
pub fn sample_eps<F: Scalar>(
    d: usize,
    seed: u64,
    iteration: u64,
    sample_ids: &[u64],
) -> Tensor<F> {
    let mut data = Vec::with_capacity(sample_ids.len() * d);
    for &sid in sample_ids {
        let mut rng = rng::derive(seed, Stream::Reparam, iteration, sid);
        for _ in 0..d {
            let v: f64 = rng.sample(StandardNormal);
            data.push(F::from_f64_lossy(v));
        }
    }
    Tensor::from_vec(vec![sample_ids.len(), d], data).unwrap()
}

/// Sorensen-Dice loss: 1 - (2*sum(x*xhat)+s)/(sum(x)+sum(xhat)+s), averaged
/// over channels and batch.
pub fn dice_loss_nodes<F: Scalar>(graph: &mut Graph<F>, x: NodeId, xhat: NodeId) -> Result<NodeId> {
    let smooth = F::from_f64_lossy(DICE_SMOOTH);
    let prod = graph.mul(x, xhat)?;
    let inter = graph.sum_spatial(prod)?;
    let sx = graph.sum_spatial(x)?;
    let sxh = graph.sum_spatial(xhat)?;
    let two_inter = graph.scale(inter, F::from_f64_lossy(2.0));
    let num = graph.add_const(two_inter, smooth);
    let sums = graph.add(sx, sxh)?;
    let den = graph.add_const(sums, smooth);
    let ratio = graph.div(num, den)?;
    let mean_dice = graph.mean(ratio);
    let neg = graph.neg(mean_dice);
    Ok(graph.add_const(neg, F::one()))
}

/// KL(N(mu, sigma) || N(0, 1)) = mean over batch of
/// 0.5 * sum_i(mu_i^2 + exp(lv_i) - 1 - lv_i).
pub fn kl_loss_nodes<F: Scalar>(graph: &mut Graph<F>, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
    let shape = graph.value(mu).shape().to_vec();
    let (n, d) = (shape[0], shape[1]);
    let mu2 = graph.mul(mu, mu)?;
    let elv = graph.exp(log_var);
    let a = graph.add(mu2, elv)?;
    let b = graph.sub(a, log_var)?;
    let s = graph.sum(b);
    let s = graph.add_const(s, F::from_f64_lossy(-((n * d) as f64)));
    Ok(graph.scale(s, F::from_f64_lossy(0.5 / n as f64)))
}

/// Plain-tensor Dice loss.
pub fn dice_loss<F: Scalar>(x: &Tensor<F>, xhat: &Tensor<F>) -> Result<F> {
    let mut graph = Graph::new();
    let a = graph.constant(x.clone());
    let b = graph.constant(xhat.clone());
    let l = dice_loss_nodes(&mut graph, a, b)?;
    graph.value(l).scalar_value()
}

/// Plain Dice loss over pre-batched single-channel masks is covered by
/// shaping them [1, 1, ...]; this KL variant works on one code.
pub fn kl_loss<F: Scalar>(code: &LatentCode<F>) -> Result<F> {
    let d = code.mu.len();
    let mut graph = Graph::new();
    let mu = graph.constant(Tensor::from_vec(vec![1, d], code.mu.clone())?);
    let lv = graph.constant(Tensor::from_vec(vec![1, d], code.log_var.clone())?);
    let l = kl_loss_nodes(&mut graph, mu, lv)?;
    graph.value(l).scalar_value()
}

/// Batch-averaged -log p[label] from explicit distributions.
pub fn ce_loss<F: Scalar>(preds: &[ClassDistribution<F>], labels: &[usize]) -> Result<F> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::contract(format!(
            "ce_loss: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let floor = F::from_f64_lossy(crate::tape::LOG_CLAMP);
    let total: F = preds
        .iter()
        .zip(labels)
        .map(|(p, &l)| -(p.probs[l].max(floor).ln()))
        .sum();
    Ok(total / F::from_f64_lossy(preds.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = VaeModel<f64>;

    #[test]
    fn encode_is_deterministic_and_right_sized() {
        let model = M::new(ModelConfig::tiny8(), 5).unwrap();
        let x = Tensor::full(vec![2, 2, 8, 8, 8], 0.25);
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x).unwrap();
        assert_eq!(a.mu.shape(), &[2, 4]);
        assert_eq!(a.mu.data(), b.mu.data());
        assert_eq!(a.log_var.data(), b.log_var.data());
    }

    #[test]
    fn encode_rejects_wrong_channels() {
        let model = M::new(ModelConfig::tiny8(), 5).unwrap();
        let x = Tensor::full(vec![1, 3, 8, 8, 8], 0.5);
        assert!(model.encode(&x).is_err());
    }

    #[test]
    fn zeroed_latent_heads_give_zero_codes() {
        let mut model = M::new(ModelConfig::tiny8(), 5).unwrap();
        for name in ["encoder.mu.weight", "encoder.mu.bias", "encoder.logvar.weight", "encoder.logvar.bias"] {
            let i = model.param_index(name).unwrap();
            let shape = model.params[i].value.shape().to_vec();
            model.params[i].value = Tensor::zeros(shape);
        }
        let x = Tensor::full(vec![1, 2, 8, 8, 8], 0.5);
        let code = model.encode(&x).unwrap();
        assert!(code.mu.data().iter().all(|&v| v == 0.0));
        assert!(code.log_var.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_lands_in_open_unit_interval() {
        let model = M::new(ModelConfig::tiny8(), 9).unwrap();
        let z = Tensor::from_vec(vec![1, 4], vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        let out = model.decode(&z).unwrap();
        assert_eq!(out.shape(), &[1, 2, 8, 8, 8]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_weight_mlp_is_uniform() {
        let mut model = M::new(ModelConfig::tiny8(), 5).unwrap();
        for name in ["mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight", "mlp.fc2.bias"] {
            let i = model.param_index(name).unwrap();
            let shape = model.params[i].value.shape().to_vec();
            model.params[i].value = Tensor::zeros(shape);
        }
        let p = model.classify(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((p.probs[0] - 0.5).abs() < 1e-12);
        assert!((p.probs[0] + p.probs[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reparameterize_degenerate_sigma() {
        let mut graph = Graph::new();
        let mu = graph.constant(Tensor::from_vec(vec![1, 2], vec![1.5f64, -2.0]).unwrap());
        let lv = graph.constant(Tensor::full(vec![1, 2], -60.0));
        let eps = graph.constant(Tensor::full(vec![1, 2], 3.0));
        let z = reparameterize_nodes(&mut graph, mu, lv, eps).unwrap();
        let zd = graph.value(z).data();
        assert!((zd[0] - 1.5).abs() < 1e-12 && (zd[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn reparameterize_moments() {
        // mu = 0, log_var = 0, 1e5 draws: mean ~ 0, variance ~ 1 per dim.
        let d = 2;
        let n = 100_000u64;
        let ids: Vec<u64> = (0..n).collect();
        let eps: Tensor<f64> = sample_eps(d, 77, 0, &ids);
        for dim in 0..d {
            let vals: Vec<f64> = eps.data().iter().skip(dim).step_by(d).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.02, "var {var}");
        }
    }

    #[test]
    fn same_seed_same_eps() {
        let a: Tensor<f64> = sample_eps(4, 1, 2, &[3, 4]);
        let b: Tensor<f64> = sample_eps(4, 1, 2, &[3, 4]);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn dice_closed_forms() {
        // identical large binary masks: loss within 1e-3 of zero.
        let mut x: Tensor<f64> = Tensor::zeros(vec![1, 1, 12, 12, 12]);
        for v in x.data_mut().iter_mut().take(1200) {
            *v = 1.0;
        }
        let l: f64 = dice_loss(&x, &x).unwrap();
        assert!(l.abs() <= 1e-3, "{l}");

        // disjoint unit-voxel masks: 1 - 1/3 = 2/3.
        let mut a: Tensor<f64> = Tensor::zeros(vec![1, 1, 2, 2, 2]);
        let mut b = Tensor::zeros(vec![1, 1, 2, 2, 2]);
        a.data_mut()[0] = 1.0;
        b.data_mut()[7] = 1.0;
        assert!((dice_loss(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-12);

        // empty prediction against 999 foreground voxels: 1 - 1/1000.
        let mut x: Tensor<f64> = Tensor::zeros(vec![1, 1, 10, 10, 10]);
        for v in x.data_mut().iter_mut().take(999) {
            *v = 1.0;
        }
        let z = Tensor::zeros(vec![1, 1, 10, 10, 10]);
        assert!((dice_loss(&x, &z).unwrap() - 0.999).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_forms() {
        let zero = LatentCode { mu: vec![0.0f64], log_var: vec![0.0] };
        assert_eq!(kl_loss(&zero).unwrap(), 0.0);
        let unit = LatentCode { mu: vec![1.0f64], log_var: vec![0.0] };
        assert!((kl_loss(&unit).unwrap() - 0.5).abs() < 1e-12);
        let wide = LatentCode { mu: vec![0.0f64], log_var: vec![1.0] };
        let expect = 0.5 * (1f64.exp() - 2.0);
        assert!((kl_loss(&wide).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ce_closed_forms() {
        let near_sure = ClassDistribution { probs: [1.0 - 1e-12, 1e-12] };
        assert!(ce_loss(&[near_sure], &[0]).unwrap() < 1e-10);
        let uniform = ClassDistribution { probs: [0.5, 0.5] };
        assert!((ce_loss(&[uniform, uniform], &[0, 1]).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_reduce_to_dice() {
        let mut cfg = ModelConfig::tiny8();
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        let model = M::new(cfg, 3).unwrap();
        let x = Tensor::full(vec![2, 2, 8, 8, 8], 0.5);
        let eps = Tensor::zeros(vec![2, 4]);
        let pass = model.loss_pass(&x, &[0, 1], &eps, false).unwrap();
        let v = pass.values();
        assert!((v.total - v.rec).abs() < 1e-15);
        assert!(v.rec >= 0.0 && v.kl >= 0.0 && v.ce >= 0.0);
    }

    #[test]
    fn loss_weight_wiring_scales_linearly() {
        let mut cfg = ModelConfig::tiny8();
        cfg.alpha = 0.1;
        cfg.beta = 1.0;
        let model = M::new(cfg.clone(), 3).unwrap();
        let x = Tensor::full(vec![1, 2, 8, 8, 8], 0.3);
        let eps = Tensor::zeros(vec![1, 4]);
        let v1 = model.loss_pass(&x, &[1], &eps, false).unwrap().values();

        let mut cfg2 = cfg;
        cfg2.alpha *= 3.0;
        cfg2.beta *= 2.0;
        let mut model2 = M::new(cfg2, 999).unwrap();
        for (dst, src) in model2.params.iter_mut().zip(&model.params) {
            dst.value = src.value.clone();
        }
        let v2 = model2.loss_pass(&x, &[1], &eps, false).unwrap().values();
        assert!((v2.kl - v1.kl).abs() < 1e-15);
        assert!((v2.ce - v1.ce).abs() < 1e-15);
        let delta = (v2.total - v1.total) - (2.0 * v1.kl * 0.1 + v1.ce);
        assert!(delta.abs() < 1e-12, "{delta}");
    }
}
