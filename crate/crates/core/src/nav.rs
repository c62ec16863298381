//! Gradient-based navigation in latent space: iteratively move a latent
//! mean toward maximal target-class probability, decoding and measuring
//! every step.

use crate::data::{volume_metrics_decoded, VolumeMetrics};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vae::{ClassDistribution, VaeModel};
use crate::vxg::{VoxelGrid, VoxelPayload};

/// What to differentiate: the softmax probability itself, or the 2-class
/// logit difference (which does not vanish when p saturates).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Probability,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Threshold,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct NavStep<F: Scalar> {
    pub t: usize,
    pub mu: Vec<F>,
    pub probs: ClassDistribution<F>,
    /// Decoded segmentation, thresholded at `NavConfig::threshold`.
    pub decoded: VoxelGrid,
    pub volumes: VolumeMetrics,
}

#[derive(Debug, Clone)]
pub struct NavConfig<F: Scalar> {
    pub lambda: F,
    pub max_iters: usize,
    pub p_stop: F,
    pub mode: GradMode,
    /// Foreground threshold applied to decoded soft outputs.
    pub threshold: f64,
}

impl<F: Scalar> Default for NavConfig<F> {
    fn default() -> Self {
        NavConfig {
            lambda: F::from_f64_lossy(0.1),
            max_iters: 200,
            p_stop: F::from_f64_lossy(0.999),
            mode: GradMode::Probability,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NavigationTrace<F: Scalar> {
    pub steps: Vec<NavStep<F>>,
    pub lambda: F,
    pub target_class: usize,
    pub stop_reason: StopReason,
}

/// d p_target / d mu (or d logit_diff / d mu) through the MLP head only.
pub fn class_grad<F: Scalar>(
    model: &VaeModel<F>,
    mu: &[F],
    target: usize,
    mode: GradMode,
) -> Result<Vec<F>> {
    if target > 1 {
        return Err(Error::contract(format!("target class must be 0 or 1, got {target}")));
    }
    let d = model.config.latent_dim;
    if mu.len() != d {
        return Err(Error::shape(format!("mu length {} != latent dim {d}", mu.len())));
    }
    let mut graph = crate::tape::Graph::new();
    let bound = model.bind(&mut graph, false);
    let mu_node = graph.leaf(Tensor::from_vec(vec![1, d], mu.to_vec())?);
    let logits = model.mlp_logits_nodes(&mut graph, &bound, mu_node)?;
    // For two classes p_target = sigmoid(logit_target - logit_other).
    let selector = {
        let mut s = vec![-F::one(); 2];
        s[target] = F::one();
        graph.constant(Tensor::from_vec(vec![2, 1], s)?)
    };
    let diff = graph.matmul(logits, selector)?;
    let objective = match mode {
        GradMode::Logit => graph.sum(diff),
        GradMode::Probability => {
            let p = graph.sigmoid(diff);
            graph.sum(p)
        }
    };
    let grads = graph.backward(objective)?;
    let g = grads
        .get(mu_node)
        .ok_or_else(|| Error::contract("class_grad: no gradient reached mu".to_string()))?;
    Ok(g.data().to_vec())
}

fn threshold_grid<F: Scalar>(decoded: &Tensor<F>, threshold: f64) -> Result<VoxelGrid> {
    let shape = decoded.shape();
    if shape.len() != 5 || shape[0] != 1 {
        return Err(Error::shape(format!("expected decoded [1, C, S, S, S], got {shape:?}")));
    }
    let t = F::from_f64_lossy(threshold);
    Ok(VoxelGrid {
        channels: shape[1],
        dims: [shape[2], shape[3], shape[4]],
        payload: VoxelPayload::U8(
            decoded
                .data()
                .iter()
                .map(|&v| if v > t { 1u8 } else { 0 })
                .collect(),
        ),
    })
}

/// Iterates mu_t = mu_{t-1} + lambda * grad until the target probability
/// reaches `p_stop` or `max_iters` steps were taken. Every visited mu is
/// decoded and measured.
pub fn navigate<F: Scalar>(
    model: &VaeModel<F>,
    mu0: &[F],
    target: usize,
    cfg: &NavConfig<F>,
) -> Result<NavigationTrace<F>> {
    let d = model.config.latent_dim;
    let mut mu = mu0.to_vec();
    let mut steps = Vec::new();
    let mut stop_reason = StopReason::MaxIters;
    for t in 0..=cfg.max_iters {
        let probs = model.classify(&mu)?;
        let decoded_soft = model.decode(&Tensor::from_vec(vec![1, d], mu.clone())?)?;
        let decoded = threshold_grid(&decoded_soft, cfg.threshold)?;
        let volumes = volume_metrics_decoded(&decoded_soft, cfg.threshold)?;
        if !(volumes.lvm_ed.is_finite() && volumes.lvcv_ed.is_finite()) {
            return Err(Error::contract(format!("non-finite volumes at step {t}")));
        }
        steps.push(NavStep { t, mu: mu.clone(), probs, decoded, volumes });
        if probs.probs[target] >= cfg.p_stop {
            stop_reason = StopReason::Threshold;
            break;
        }
        if t == cfg.max_iters {
            break;
        }
        let grad = class_grad(model, &mu, target, cfg.mode)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Contract(format!(
                "navigate: non-finite gradient at iteration {t}"
            )));
        }
        for (m, g) in mu.iter_mut().zip(&grad) {
            *m = *m + cfg.lambda * *g;
        }
    }
    Ok(NavigationTrace {
        steps,
        lambda: cfg.lambda,
        target_class: target,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck::{finite_diff_grad, max_rel_err};
    use crate::vae::ModelConfig;

    type M = VaeModel<f64>;

    fn model(seed: u64) -> M {
        M::new(ModelConfig::tiny8(), seed).unwrap()
    }

    #[test]
    fn zero_weight_mlp_gives_zero_gradient() {
        let mut m = model(1);
        for p in m.params.iter_mut().filter(|p| p.name.starts_with("mlp.")) {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let g = class_grad(&m, &[0.1, -0.2, 0.3, 0.4], 1, GradMode::Probability).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_grad_matches_finite_differences() {
        let m = model(7);
        let mu = vec![0.3, -0.5, 0.8, 0.1];
        for target in 0..2 {
            let analytic = class_grad(&m, &mu, target, GradMode::Probability).unwrap();
            let fd = finite_diff_grad(
                |x: &Tensor<f64>| Ok(m.classify(x.data()).unwrap().probs[target]),
                &Tensor::from_vec(vec![4], mu.clone()).unwrap(),
                1e-5,
            )
            .unwrap();
            let a = Tensor::from_vec(vec![4], analytic).unwrap();
            assert!(max_rel_err(&a, &fd) <= 1e-4);
        }
    }

    #[test]
    fn probability_grad_is_logit_grad_scaled() {
        let m = model(3);
        let mu = vec![0.4, 0.2, -0.7, 1.1];
        let p = m.classify(&mu).unwrap().probs[1];
        let gp = class_grad(&m, &mu, 1, GradMode::Probability).unwrap();
        let gl = class_grad(&m, &mu, 1, GradMode::Logit).unwrap();
        for (a, b) in gp.iter().zip(&gl) {
            assert!((a - b * p * (1.0 - p)).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_lambda_freezes_mu() {
        let m = model(5);
        let cfg = NavConfig { lambda: 0.0, max_iters: 4, ..NavConfig::default() };
        let trace = navigate(&m, &[0.1, 0.2, 0.3, 0.4], 1, &cfg).unwrap();
        for s in &trace.steps {
            assert_eq!(s.mu, trace.steps[0].mu);
        }
        assert_eq!(trace.stop_reason, StopReason::MaxIters);
        assert_eq!(trace.steps.len(), 5);
    }

    #[test]
    fn early_stop_when_already_confident() {
        let m = model(5);
        let cfg = NavConfig { p_stop: 0.0, ..NavConfig::default() };
        let trace = navigate(&m, &[0.0; 4], 1, &cfg).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::Threshold);
    }

    #[test]
    fn step_recomputation_identity() {
        let m = model(9);
        let cfg = NavConfig { max_iters: 5, p_stop: 2.0, ..NavConfig::default() };
        let trace = navigate(&m, &[0.3, -0.3, 0.5, 0.0], 1, &cfg).unwrap();
        for w in trace.steps.windows(2) {
            let g = class_grad(&m, &w[0].mu, 1, cfg.mode).unwrap();
            for i in 0..4 {
                let predicted = w[0].mu[i] + cfg.lambda * g[i];
                assert!((predicted - w[1].mu[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn volumes_finite_and_nonnegative() {
        let m = model(2);
        let cfg = NavConfig { max_iters: 3, ..NavConfig::default() };
        let trace = navigate(&m, &[0.0; 4], 0, &cfg).unwrap();
        for s in &trace.steps {
            assert!(s.volumes.lvm_ed >= 0.0 && s.volumes.lvcv_ed >= 0.0);
        }
    }
}
