//! 2D spectral embedding of training latents (optionally joint with a
//! navigation trace), exported as CSV plus a dependency-free SVG scatter.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use latentmorph_core::data::input_batch;
use latentmorph_core::embed::embed_with_trace;
use latentmorph_core::tensor::Tensor;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::load_split;

/// Reads mu vectors back out of a trace directory's mu.csv sidecar.
fn read_trace_mus(trace_dir: &Path, d: usize) -> Result<Tensor<f64>> {
    let path = trace_dir.join("mu.csv");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            bail!("{}: line {} has {} fields, expected {}", path.display(), ln + 1, fields.len(), d + 1);
        }
        for f in &fields[1..] {
            rows.push(f.parse::<f64>().with_context(|| format!("{}: line {}", path.display(), ln + 1))?);
        }
    }
    if rows.is_empty() {
        bail!("{}: no trace points", path.display());
    }
    Tensor::from_vec(vec![rows.len() / d, d], rows).map_err(Into::into)
}

fn svg_scatter(
    coords: &[[f64; 2]],
    styles: &[(&str, &str)], // (css color, series name) per point
    legend: &[(&str, &str)],
) -> String {
    const SIZE: f64 = 800.0;
    const MARGIN: f64 = 50.0;
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in coords {
        xmin = xmin.min(c[0]);
        xmax = xmax.max(c[0]);
        ymin = ymin.min(c[1]);
        ymax = ymax.max(c[1]);
    }
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin).max(1e-300) * (SIZE - 2.0 * MARGIN);
    let sy = |y: f64| SIZE - MARGIN - (y - ymin) / (ymax - ymin).max(1e-300) * (SIZE - 2.0 * MARGIN);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(svg, r#"  <rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).unwrap();
    for (c, (color, series)) in coords.iter().zip(styles) {
        writeln!(
            svg,
            r#"  <circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}" fill-opacity="0.8"><title>{series}</title></circle>"#,
            sx(c[0]),
            sy(c[1]),
        )
        .unwrap();
    }
    for (i, (color, name)) in legend.iter().enumerate() {
        let y = MARGIN / 2.0 + 18.0 * i as f64;
        writeln!(svg, r#"  <circle cx="{MARGIN}" cy="{y}" r="5" fill="{color}"/>"#).unwrap();
        writeln!(
            svg,
            r#"  <text x="{}" y="{}" font-family="sans-serif" font-size="14">{name}</text>"#,
            MARGIN + 12.0,
            y + 5.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn cmd_embed(cfg: &RunConfig, ckpt_path: &Path, trace_dir: Option<&Path>) -> Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let model = checkpoint::to_model(&ckpt)?;
    let train = load_split(&cfg.dataset_dir, "train")?;
    let labels = train.labels();
    let d = model.config.latent_dim;

    // Encode the training set to latent means, in f64 for the eigensolver.
    let mut mus = Vec::with_capacity(train.len() * d);
    let batch = cfg.train.batch.max(1);
    let mut start = 0;
    while start < train.len() {
        let end = (start + batch).min(train.len());
        let refs: Vec<_> = train.samples[start..end].iter().collect();
        let latent = model.encode(&input_batch(&refs)?)?;
        mus.extend(latent.mu.data().iter().map(|&v| v as f64));
        start = end;
    }
    let train_mus = Tensor::from_vec(vec![train.len(), d], mus)?;

    let trace_mus = match trace_dir {
        None => None,
        Some(dir) => Some(read_trace_mus(dir, d)?),
    };
    let n_trace = trace_mus.as_ref().map(|t| t.shape()[0]).unwrap_or(0);
    let embedding =
        embed_with_trace(&train_mus, trace_mus.as_ref(), cfg.embed.k, cfg.weight_mode()?)?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut csv = String::from("point_id,source,label,x,y\n");
    let mut styles: Vec<(&str, &str)> = Vec::new();
    for (i, c) in embedding.coords.iter().enumerate() {
        if i < train.len() {
            let label = labels[i];
            writeln!(csv, "{},train,{label},{:.6e},{:.6e}", train.records[i].id, c[0], c[1])?;
            styles.push(if label == 0 {
                ("#2ca02c", "class 0")
            } else {
                ("#d62728", "class 1")
            });
        } else {
            writeln!(csv, "{},trace,,{:.6e},{:.6e}", i - train.len(), c[0], c[1])?;
            styles.push(("#74b9e8", "trace"));
        }
    }
    let coords_f64: Vec<[f64; 2]> = embedding.coords.to_vec();
    let mut legend = vec![("#2ca02c", "class 0 (train)"), ("#d62728", "class 1 (train)")];
    if n_trace > 0 {
        legend.push(("#74b9e8", "navigation trace"));
    }
    let svg = svg_scatter(&coords_f64, &styles, &legend);

    let csv_path = cfg.output_dir.join("embedding.csv");
    std::fs::write(&csv_path, csv)?;
    std::fs::write(cfg.output_dir.join("plot.svg"), svg)?;
    println!(
        "embedded {} train + {} trace points -> {}",
        train.len(),
        n_trace,
        csv_path.display()
    );
    Ok(())
}
