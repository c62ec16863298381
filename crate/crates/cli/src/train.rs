//! The training loop: Adam over the composite loss, periodic validation,
//! best-checkpoint retention, early stopping, and a per-iteration
//! metrics.csv.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latentmorph_core::data::input_batch;
use latentmorph_core::layers::{adam_step, AdamConfig};
use latentmorph_core::rng::{self, Stream};
use latentmorph_core::tensor::Tensor;
use latentmorph_core::vae::{sample_eps, VaeModel};
use rand::Rng;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_split, LoadedSplit};

pub struct TrainPaths {
    pub metrics: PathBuf,
    pub last: PathBuf,
    pub best: PathBuf,
}

pub fn train_paths(cfg: &RunConfig) -> TrainPaths {
    TrainPaths {
        metrics: cfg.output_dir.join("metrics.csv"),
        last: cfg.checkpoint_dir.join("last.ckpt"),
        best: cfg.checkpoint_dir.join("best.ckpt"),
    }
}

/// Mean validation loss and accuracy over a full split, decoding from mu
/// (no reparameterization noise).
pub fn evaluate_split(
    model: &VaeModel<f32>,
    split: &LoadedSplit,
    batch: usize,
) -> Result<(f64, f64)> {
    let n = split.len();
    let labels = split.labels();
    let mut total = 0.0f64;
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let refs: Vec<_> = split.samples[start..end].iter().collect();
        let x = input_batch(&refs)?;
        let eps = Tensor::<f32>::zeros(vec![end - start, model.config.latent_dim]);
        let pass = model.loss_pass(&x, &labels[start..end], &eps, false)?;
        total += pass.values().total as f64 * (end - start) as f64;
        let mu = pass.graph.value(pass.mu).clone();
        for (i, dist) in model.classify_batch(&mu)?.iter().enumerate() {
            let pred = if dist.probs[1] > dist.probs[0] { 1 } else { 0 };
            if pred == labels[start + i] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((total / n as f64, correct as f64 / n as f64))
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let mc = cfg.model_config()?;
    let train = load_split(&cfg.dataset_dir, "train")?;
    let val = load_split(&cfg.dataset_dir, "val")?;
    let train_labels = train.labels();

    let (mut model, start_iter) = match resume {
        None => (VaeModel::<f32>::new(mc.clone(), cfg.seed)?, 0u64),
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            if ckpt.config != mc {
                bail!(
                    "checkpoint {} was trained with a different model config than this run",
                    path.display()
                );
            }
            if ckpt.seed != cfg.seed {
                bail!(
                    "checkpoint seed {} does not match run seed {}",
                    ckpt.seed,
                    cfg.seed
                );
            }
            (checkpoint::to_model(&ckpt)?, ckpt.iteration)
        }
    };

    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::create_dir_all(&cfg.checkpoint_dir)?;
    let paths = train_paths(cfg);
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&paths.metrics)?);
    writeln!(metrics, "iter,L_rec,L_KL,L_MLP,total,val_total,val_acc")?;

    let adam = AdamConfig::with_lr(cfg.train.lr as f32);
    let n_train = train.len();
    let d = model.config.latent_dim;
    let mut best_val = f64::INFINITY;
    let mut evals_since_best = 0usize;
    let mut stopped_early = false;
    let mut completed = start_iter;

    for iter in start_iter..cfg.train.max_iters {
        let mut batch_rng = rng::derive(cfg.seed, Stream::BatchSampling, iter, 0);
        let idx: Vec<usize> =
            (0..cfg.train.batch).map(|_| batch_rng.gen_range(0..n_train)).collect();
        let refs: Vec<_> = idx.iter().map(|&i| &train.samples[i]).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
        let ids: Vec<u64> = idx.iter().map(|&i| train.records[i].id).collect();

        let x = input_batch(&refs)?;
        let eps = sample_eps::<f32>(d, cfg.seed, iter, &ids);
        let pass = model.loss_pass(&x, &labels, &eps, true)?;
        let v = pass.values();
        if !(v.total.is_finite()) {
            checkpoint::save(&paths.last, &checkpoint::from_model(&model, iter, cfg.seed))?;
            metrics.flush()?;
            bail!(
                "non-finite loss at iteration {iter} (rec={} kl={} ce={}); \
                 last good checkpoint written to {}",
                v.rec,
                v.kl,
                v.ce,
                paths.last.display()
            );
        }
        model.accumulate_gradients(&pass)?;
        drop(pass);
        adam_step(&mut model.params, &adam)?;

        let done = iter + 1;
        // The final iteration always gets a validation pass so best.ckpt
        // can reflect the fully trained model.
        let evaluate = cfg.train.eval_every > 0
            && (done % cfg.train.eval_every == 0 || done == cfg.train.max_iters);
        if evaluate {
            let (val_total, val_acc) = evaluate_split(&model, &val, cfg.train.batch)?;
            writeln!(
                metrics,
                "{iter},{:.6},{:.6},{:.6},{:.6},{val_total:.6},{val_acc:.6}",
                v.rec, v.kl, v.ce, v.total
            )?;
            metrics.flush()?;
            if val_total < best_val {
                best_val = val_total;
                evals_since_best = 0;
                checkpoint::save(&paths.best, &checkpoint::from_model(&model, done, cfg.seed))?;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.train.patience {
                    stopped_early = true;
                }
            }
        } else {
            writeln!(metrics, "{iter},{:.6},{:.6},{:.6},{:.6},,", v.rec, v.kl, v.ce, v.total)?;
        }
        completed = done;
        if stopped_early {
            break;
        }
    }

    checkpoint::save(&paths.last, &checkpoint::from_model(&model, completed, cfg.seed))?;
    if best_val.is_infinite() && !paths.best.exists() {
        // No evaluation ran; retain the final state as "best" so eval has
        // a checkpoint to load.
        std::fs::copy(&paths.last, &paths.best)
            .with_context(|| format!("copying {}", paths.last.display()))?;
    }
    metrics.flush()?;
    Ok(())
}
