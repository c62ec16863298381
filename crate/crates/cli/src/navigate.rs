//! Latent navigation command: walks a sample's latent mean toward a target
//! class and exports the trace (manifest, steps.csv, mu sidecar, per-step
//! voxel grids).

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use latentmorph_core::data::input_batch;
use latentmorph_core::nav::{navigate, NavConfig, NavigationTrace, StopReason};
use latentmorph_core::vxg;
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::load_split;

#[derive(Debug, Serialize)]
struct TraceManifest {
    sample_id: u64,
    source_label: usize,
    target_class: usize,
    lambda: f64,
    p_stop: f64,
    mode: String,
    stop_reason: String,
    steps: usize,
}

fn write_trace(trace: &NavigationTrace<f32>, manifest: &TraceManifest, out: &Path) -> Result<()> {
    let steps_dir = out.join("steps");
    std::fs::create_dir_all(&steps_dir)?;

    let mut steps_csv = String::from("t,p_class0,p_class1,lvm,lvcv\n");
    let d = trace.steps.first().map(|s| s.mu.len()).unwrap_or(0);
    let mut mu_csv = String::from("t");
    for i in 0..d {
        write!(mu_csv, ",mu_{i}")?;
    }
    mu_csv.push('\n');
    for step in &trace.steps {
        writeln!(
            steps_csv,
            "{},{:.6},{:.6},{:.6},{:.6}",
            step.t, step.probs.probs[0], step.probs.probs[1], step.volumes.lvm_ed, step.volumes.lvcv_ed
        )?;
        write!(mu_csv, "{}", step.t)?;
        for &m in &step.mu {
            write!(mu_csv, ",{m:e}")?;
        }
        mu_csv.push('\n');
        vxg::write(&steps_dir.join(format!("step_{:04}.vxg", step.t)), &step.decoded)?;
    }
    std::fs::write(out.join("steps.csv"), steps_csv)?;
    std::fs::write(out.join("mu.csv"), mu_csv)?;
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn cmd_navigate(
    cfg: &RunConfig,
    ckpt_path: &Path,
    sample_id: u64,
    target: usize,
) -> Result<()> {
    if target > 1 {
        bail!("target class must be 0 or 1, got {target}");
    }
    let ckpt = checkpoint::load(ckpt_path)?;
    let model = checkpoint::to_model(&ckpt)?;

    let records = crate::dataset::read_records(&cfg.dataset_dir)?;
    let record = records
        .iter()
        .find(|r| r.id == sample_id)
        .ok_or_else(|| anyhow::anyhow!("sample id {sample_id} not found in manifest"))?;
    let split = load_split(&cfg.dataset_dir, &record.split)?;
    let pos = split.records.iter().position(|r| r.id == sample_id).unwrap();

    let x = input_batch(&[&split.samples[pos]])?;
    let mu0 = model.encode(&x)?.codes()[0].mu.clone();

    let nav_cfg = NavConfig {
        lambda: cfg.nav.lambda as f32,
        max_iters: cfg.nav.max_iters,
        p_stop: cfg.nav.p_stop as f32,
        mode: cfg.grad_mode()?,
        threshold: cfg.nav.threshold,
    };
    let trace = navigate(&model, &mu0, target, &nav_cfg)?;

    let out = cfg.output_dir.join(format!("trace_{sample_id}_to_{target}"));
    let manifest = TraceManifest {
        sample_id,
        source_label: record.label,
        target_class: target,
        lambda: cfg.nav.lambda,
        p_stop: cfg.nav.p_stop,
        mode: cfg.nav.mode.clone(),
        stop_reason: match trace.stop_reason {
            StopReason::Threshold => "threshold".to_string(),
            StopReason::MaxIters => "max_iters".to_string(),
        },
        steps: trace.steps.len(),
    };
    write_trace(&trace, &manifest, &out)?;
    let last = trace.steps.last().unwrap();
    println!(
        "trace of {} steps -> {} (p_target {:.4}, {})",
        trace.steps.len(),
        out.display(),
        last.probs.probs[target],
        manifest.stop_reason
    );
    Ok(())
}
