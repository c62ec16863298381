//! Held-out evaluation: classification report plus mean reconstruction
//! Dice, written as report.json.

use std::path::Path;

use anyhow::Result;
use latentmorph_core::data::input_batch;
use latentmorph_core::tensor::Tensor;
use latentmorph_core::vae::dice_loss;
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::load_split;

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub n: usize,
    pub accuracy: f64,
    /// Per-class precision and recall, indexed by class.
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    /// confusion[actual][predicted]
    pub confusion: [[usize; 2]; 2],
    pub mean_dice: f64,
}

pub fn evaluate(cfg: &RunConfig, ckpt_path: &Path, split: &str) -> Result<EvalReport> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let model = checkpoint::to_model(&ckpt)?;
    let data = load_split(&cfg.dataset_dir, split)?;
    let labels = data.labels();
    let d = model.config.latent_dim;

    let mut confusion = [[0usize; 2]; 2];
    let mut dice_sum = 0.0f64;
    let batch = cfg.train.batch.max(1);
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch).min(data.len());
        let refs: Vec<_> = data.samples[start..end].iter().collect();
        let x = input_batch(&refs)?;
        let latent = model.encode(&x)?;
        for (i, code) in latent.codes().iter().enumerate() {
            let dist = model.classify(&code.mu)?;
            let pred = if dist.probs[1] > dist.probs[0] { 1 } else { 0 };
            confusion[labels[start + i]][pred] += 1;

            let z = Tensor::from_vec(vec![1, d], code.mu.clone())?;
            let mut decoded = model.decode(&z)?;
            // Dice between masks: threshold the soft reconstruction first.
            let t = cfg.nav.threshold as f32;
            for v in decoded.data_mut() {
                *v = if *v > t { 1.0 } else { 0.0 };
            }
            let xi = input_batch(&[refs[i]])?;
            dice_sum += 1.0 - dice_loss(&xi, &decoded)? as f64;
        }
        start = end;
    }

    let n = data.len();
    let correct = confusion[0][0] + confusion[1][1];
    let mut precision = [0.0f64; 2];
    let mut recall = [0.0f64; 2];
    for c in 0..2 {
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        precision[c] = if predicted > 0 { confusion[c][c] as f64 / predicted as f64 } else { 0.0 };
        recall[c] = if actual > 0 { confusion[c][c] as f64 / actual as f64 } else { 0.0 };
    }
    Ok(EvalReport {
        split: split.to_string(),
        n,
        accuracy: correct as f64 / n as f64,
        precision,
        recall,
        confusion,
        mean_dice: dice_sum / n as f64,
    })
}

pub fn cmd_eval(cfg: &RunConfig, ckpt_path: &Path, split: &str) -> Result<()> {
    let report = evaluate(cfg, ckpt_path, split)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "{split}: accuracy {:.4}, mean dice {:.4} ({} samples) -> {}",
        report.accuracy,
        report.mean_dice,
        report.n,
        path.display()
    );
    Ok(())
}
