//! Synthetic two-class ventricle-like voxel shapes, preprocessing, and
//! voxel volume metrics.
//!
//! Class 0 (healthy analog) draws thin, near-symmetric walls; class 1
//! (hypertrophic analog) draws thicker walls with stronger azimuthal
//! asymmetry and a smaller cavity. Shapes are ellipsoid shells cut by a
//! basal plane placed so the cavity stays enclosed, which keeps the
//! flood-fill cavity metric well defined on reconstructions.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vxg::{self, VoxelGrid, VoxelPayload};

/// Geometry of one generated shape, in voxel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    /// Outer semi-axes (a, b, c).
    pub outer: [f64; 3],
    /// Base wall thickness.
    pub wall: f64,
    /// Azimuthal thickness modulation amplitude in [0, 1].
    pub septal: f64,
    /// ES cavity volume factor in (0, 1).
    pub contraction: f64,
    /// Rigid pose: rotations (radians) and translation (voxels).
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

/// Two-phase masks plus auxiliary cavity channels and the class label.
#[derive(Debug, Clone)]
pub struct VoxelSample<F: Scalar> {
    pub ed: Tensor<F>,
    pub es: Tensor<F>,
    pub cavity_ed: Tensor<F>,
    pub cavity_es: Tensor<F>,
    pub label: usize,
    pub params: ShapeParams,
    pub voxel_spacing: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub grid: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { grid: 32 }
    }
}

const MAX_REDRAWS: usize = 16;

fn rot_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sc, cc) = angles[2].sin_cos();
    // R = Rz(c) * Ry(b) * Rx(a)
    [
        [cb * cc, cc * sa * sb - ca * sc, ca * cc * sb + sa * sc],
        [cb * sc, ca * cc + sa * sb * sc, ca * sb * sc - cc * sa],
        [-sb, cb * sa, ca * cb],
    ]
}

/// Apply the transpose (inverse) of R to v.
fn rot_t(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
        r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
        r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
    ]
}

fn draw_params<R: Rng>(class: usize, scale: f64, rng: &mut R) -> ShapeParams {
    fn u<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * rng.gen::<f64>()
    }
    let (wall_lo, wall_hi, sep_lo, sep_hi, out_lo, out_hi) = if class == 0 {
        (4.6, 5.4, 0.05, 0.12, 11.3, 12.0)
    } else {
        (7.6, 8.4, 0.10, 0.18, 11.8, 12.5)
    };
    let deg = std::f64::consts::PI / 180.0;
    ShapeParams {
        outer: [
            u(rng, out_lo, out_hi) * scale,
            u(rng, out_lo, out_hi) * scale,
            u(rng, out_lo + 1.0, out_hi + 1.0) * scale,
        ],
        wall: u(rng, wall_lo, wall_hi) * scale,
        septal: u(rng, sep_lo, sep_hi),
        contraction: u(rng, 0.60, 0.75),
        rotation: [
            u(rng, -3.0, 3.0) * deg,
            u(rng, -3.0, 3.0) * deg,
            u(rng, -3.0, 3.0) * deg,
        ],
        translation: [
            u(rng, -0.75, 0.75) * scale,
            u(rng, -0.75, 0.75) * scale,
            u(rng, -0.75, 0.75) * scale,
        ],
    }
}

fn params_valid(p: &ShapeParams) -> bool {
    let w_max = p.wall * (1.0 + p.septal);
    p.wall >= 1.0 && p.outer.iter().all(|&ax| ax - w_max > 0.5)
}

/// Rasterizes the shell and cavity masks for one set of parameters.
pub fn rasterize<F: Scalar>(params: &ShapeParams, grid: usize, label: usize) -> VoxelSample<F> {
    let s = grid;
    let center = (s as f64 - 1.0) / 2.0;
    let r = rot_matrix(params.rotation);
    let [a, b, c] = params.outer;
    let kappa = params.contraction.cbrt();
    // Basal cut sits halfway into the lid above the cavity top, so the
    // cavity stays sealed after voxelization.
    let w_min = params.wall * (1.0 - params.septal);
    let z_cut = c - 0.5 * w_min;

    let n = s * s * s;
    let mut ed = vec![F::zero(); n];
    let mut es = vec![F::zero(); n];
    let mut cav_ed = vec![F::zero(); n];
    let mut cav_es = vec![F::zero(); n];
    let one = F::one();
    let mut idx = 0usize;
    for i0 in 0..s {
        for i1 in 0..s {
            for i2 in 0..s {
                let v = [
                    i0 as f64 - center - params.translation[0],
                    i1 as f64 - center - params.translation[1],
                    i2 as f64 - center - params.translation[2],
                ];
                let q = rot_t(&r, v);
                let outer_r2 = (q[0] / a).powi(2) + (q[1] / b).powi(2) + (q[2] / c).powi(2);
                if outer_r2 <= 1.0 && q[2] <= z_cut {
                    let phi = q[1].atan2(q[0]);
                    let w = params.wall * (1.0 + params.septal * phi.cos());
                    let (ai, bi, ci) = (a - w, b - w, c - w);
                    let inner_r2 =
                        (q[0] / ai).powi(2) + (q[1] / bi).powi(2) + (q[2] / ci).powi(2);
                    let inner_es_r2 = (q[0] / (ai * kappa)).powi(2)
                        + (q[1] / (bi * kappa)).powi(2)
                        + (q[2] / (ci * kappa)).powi(2);
                    if inner_r2 <= 1.0 {
                        cav_ed[idx] = one;
                    } else {
                        ed[idx] = one;
                    }
                    if inner_es_r2 <= 1.0 {
                        cav_es[idx] = one;
                    } else {
                        es[idx] = one;
                    }
                }
                idx += 1;
            }
        }
    }
    let shape = vec![s, s, s];
    VoxelSample {
        ed: Tensor::from_vec(shape.clone(), ed).unwrap(),
        es: Tensor::from_vec(shape.clone(), es).unwrap(),
        cavity_ed: Tensor::from_vec(shape.clone(), cav_ed).unwrap(),
        cavity_es: Tensor::from_vec(shape, cav_es).unwrap(),
        label,
        params: params.clone(),
        voxel_spacing: 1.0,
    }
}

/// Draws class-conditional parameters (with bounded redraws on invariant
/// violations) and rasterizes the sample.
pub fn generate_sample<F: Scalar>(
    cfg: &GeneratorConfig,
    class: usize,
    rng: &mut impl Rng,
) -> Result<VoxelSample<F>> {
    if class > 1 {
        return Err(Error::contract(format!("class must be 0 or 1, got {class}")));
    }
    let scale = cfg.grid as f64 / 32.0;
    for _ in 0..MAX_REDRAWS {
        let params = draw_params(class, scale, rng);
        if !params_valid(&params) {
            continue;
        }
        let sample = rasterize::<F>(&params, cfg.grid, class);
        if sample.ed.sum() > F::zero()
            && sample.es.sum() > F::zero()
            && sample.cavity_ed.sum() > F::zero()
            && sample.cavity_es.sum() > F::zero()
        {
            return Ok(sample);
        }
    }
    Err(Error::contract(format!(
        "generate_sample: no valid parameter draw for class {class} after {MAX_REDRAWS} tries"
    )))
}

/// Foreground centroid of a mask, in voxel coordinates.
pub fn centroid<F: Scalar>(mask: &Tensor<F>) -> Option<[f64; 3]> {
    let s = mask.shape();
    let (sy, sz) = (s[1], s[2]);
    let mut acc = [0.0f64; 3];
    let mut count = 0.0f64;
    for (flat, &v) in mask.data().iter().enumerate() {
        if v > F::zero() {
            let w = v.to_f64_lossy();
            let i2 = flat % sz;
            let i1 = (flat / sz) % sy;
            let i0 = flat / (sz * sy);
            acc[0] += i0 as f64 * w;
            acc[1] += i1 as f64 * w;
            acc[2] += i2 as f64 * w;
            count += w;
        }
    }
    if count == 0.0 {
        None
    } else {
        Some([acc[0] / count, acc[1] / count, acc[2] / count])
    }
}

fn shift_channel<F: Scalar>(
    src: &Tensor<F>,
    start: [isize; 3],
    out_size: usize,
) -> Result<Tensor<F>> {
    let s = src.shape().to_vec();
    let mut out = Tensor::zeros(vec![out_size, out_size, out_size]);
    let mut overflow: Option<[isize; 3]> = None;
    for (flat, &v) in src.data().iter().enumerate() {
        if v <= F::zero() {
            continue;
        }
        let i2 = (flat % s[2]) as isize;
        let i1 = ((flat / s[2]) % s[1]) as isize;
        let i0 = (flat / (s[2] * s[1])) as isize;
        let o = [i0 - start[0], i1 - start[1], i2 - start[2]];
        if o.iter().any(|&x| x < 0 || x >= out_size as isize) {
            overflow = Some(o);
            break;
        }
        out.data_mut()[(o[0] as usize * out_size + o[1] as usize) * out_size + o[2] as usize] = v;
    }
    if let Some(o) = overflow {
        return Err(Error::shape(format!(
            "crop_pad_center: foreground voxel lands at {o:?}, outside {out_size}^3"
        )));
    }
    Ok(out)
}

/// Crops/zero-pads all channels to `out_size`^3 with the ED myocardium
/// centroid moved to the grid center; every channel uses the same box so
/// relative alignment is preserved.
pub fn crop_pad_center<F: Scalar>(sample: &VoxelSample<F>, out_size: usize) -> Result<VoxelSample<F>> {
    let c = centroid(&sample.ed)
        .ok_or_else(|| Error::contract("crop_pad_center: empty ED foreground".to_string()))?;
    let half = (out_size / 2) as isize;
    let start = [
        c[0].round() as isize - half,
        c[1].round() as isize - half,
        c[2].round() as isize - half,
    ];
    Ok(VoxelSample {
        ed: shift_channel(&sample.ed, start, out_size)?,
        es: shift_channel(&sample.es, start, out_size)?,
        cavity_ed: shift_channel(&sample.cavity_ed, start, out_size)?,
        cavity_es: shift_channel(&sample.cavity_es, start, out_size)?,
        label: sample.label,
        params: sample.params.clone(),
        voxel_spacing: sample.voxel_spacing,
    })
}

/// Volumes in voxel units for both phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeMetrics {
    pub lvm_ed: f64,
    pub lvm_es: f64,
    pub lvcv_ed: f64,
    pub lvcv_es: f64,
    /// Set when a post-threshold mask was empty and a metric defaulted to 0.
    pub empty_mask: bool,
}

fn count_above<F: Scalar>(mask: &Tensor<F>, threshold: F) -> f64 {
    mask.data().iter().filter(|&&v| v > threshold).count() as f64
}

/// Largest background component not reachable from the grid boundary;
/// 6-connected flood fill over the complement of the mask.
pub fn enclosed_cavity_volume(mask: &[bool], dims: [usize; 3]) -> f64 {
    let [dx, dy, dz] = dims;
    let n = dx * dy * dz;
    debug_assert_eq!(mask.len(), n);
    let idx = |x: usize, y: usize, z: usize| (x * dy + y) * dz + z;
    let mut outside = vec![false; n];
    let mut stack = Vec::new();
    for x in 0..dx {
        for y in 0..dy {
            for z in 0..dz {
                if (x == 0 || y == 0 || z == 0 || x == dx - 1 || y == dy - 1 || z == dz - 1)
                    && !mask[idx(x, y, z)]
                {
                    stack.push((x, y, z));
                    outside[idx(x, y, z)] = true;
                }
            }
        }
    }
    while let Some((x, y, z)) = stack.pop() {
        let visit = |nx: usize, ny: usize, nz: usize, outside: &mut Vec<bool>, stack: &mut Vec<(usize, usize, usize)>| {
            let i = idx(nx, ny, nz);
            if !outside[i] && !mask[i] {
                outside[i] = true;
                stack.push((nx, ny, nz));
            }
        };
        if x > 0 { visit(x - 1, y, z, &mut outside, &mut stack); }
        if x + 1 < dx { visit(x + 1, y, z, &mut outside, &mut stack); }
        if y > 0 { visit(x, y - 1, z, &mut outside, &mut stack); }
        if y + 1 < dy { visit(x, y + 1, z, &mut outside, &mut stack); }
        if z > 0 { visit(x, y, z - 1, &mut outside, &mut stack); }
        if z + 1 < dz { visit(x, y, z + 1, &mut outside, &mut stack); }
    }
    // Components of the enclosed background; report the largest.
    let mut seen = vec![false; n];
    let mut best = 0usize;
    for start in 0..n {
        if mask[start] || outside[start] || seen[start] {
            continue;
        }
        let mut size = 0usize;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            size += 1;
            let z = i % dz;
            let y = (i / dz) % dy;
            let x = i / (dz * dy);
            let visit = |nx: usize, ny: usize, nz: usize, seen: &mut Vec<bool>, stack: &mut Vec<usize>| {
                let j = idx(nx, ny, nz);
                if !mask[j] && !outside[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 { visit(x - 1, y, z, &mut seen, &mut stack); }
            if x + 1 < dx { visit(x + 1, y, z, &mut seen, &mut stack); }
            if y > 0 { visit(x, y - 1, z, &mut seen, &mut stack); }
            if y + 1 < dy { visit(x, y + 1, z, &mut seen, &mut stack); }
            if z > 0 { visit(x, y, z - 1, &mut seen, &mut stack); }
            if z + 1 < dz { visit(x, y, z + 1, &mut seen, &mut stack); }
        }
        best = best.max(size);
    }
    best as f64
}

/// Metrics for a generated sample: cavity channels give LVCV directly.
pub fn volume_metrics_sample<F: Scalar>(sample: &VoxelSample<F>, threshold: f64) -> VolumeMetrics {
    let t = F::from_f64_lossy(threshold);
    let spacing = sample.voxel_spacing.powi(3);
    let lvm_ed = count_above(&sample.ed, t) * spacing;
    let lvm_es = count_above(&sample.es, t) * spacing;
    let lvcv_ed = count_above(&sample.cavity_ed, t) * spacing;
    let lvcv_es = count_above(&sample.cavity_es, t) * spacing;
    VolumeMetrics {
        lvm_ed,
        lvm_es,
        lvcv_ed,
        lvcv_es,
        empty_mask: lvm_ed == 0.0 || lvm_es == 0.0,
    }
}

/// Metrics for a decoded two-channel grid [2, S, S, S] (or [1, 2, S, S, S]);
/// LVCV is the enclosed-background volume of each thresholded channel.
pub fn volume_metrics_decoded<F: Scalar>(grid: &Tensor<F>, threshold: f64) -> Result<VolumeMetrics> {
    let shape = grid.shape().to_vec();
    let dims: [usize; 3] = match shape.as_slice() {
        [2, a, b, c] => [*a, *b, *c],
        [1, 2, a, b, c] => [*a, *b, *c],
        _ => {
            return Err(Error::shape(format!(
                "volume_metrics_decoded expects [2, S, S, S], got {shape:?}"
            )))
        }
    };
    let t = F::from_f64_lossy(threshold);
    let n: usize = dims.iter().product();
    let mut out = [0.0f64; 4];
    let mut any_empty = false;
    for ch in 0..2 {
        let mask: Vec<bool> = grid.data()[ch * n..(ch + 1) * n].iter().map(|&v| v > t).collect();
        let lvm = mask.iter().filter(|&&m| m).count() as f64;
        if lvm == 0.0 {
            any_empty = true;
        }
        out[ch] = lvm;
        out[2 + ch] = if lvm == 0.0 { 0.0 } else { enclosed_cavity_volume(&mask, dims) };
    }
    Ok(VolumeMetrics {
        lvm_ed: out[0],
        lvm_es: out[1],
        lvcv_ed: out[2],
        lvcv_es: out[3],
        empty_mask: any_empty,
    })
}

/// One manifest line per generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: u64,
    pub file: String,
    pub label: usize,
    pub split: String,
    pub params: ShapeParams,
    pub seed: u64,
}

fn split_of(pos: usize, n: usize, fracs: [f64; 3]) -> &'static str {
    let n_train = (fracs[0] * n as f64).floor() as usize;
    let n_val = ((fracs[0] + fracs[1]) * n as f64).floor() as usize - n_train;
    if pos < n_train {
        "train"
    } else if pos < n_train + n_val {
        "val"
    } else {
        "test"
    }
}

/// Generates a stratified dataset on disk: `manifest.jsonl` plus one VXG1
/// file per sample (channels ed, es, cavity_ed, cavity_es as u8).
pub fn make_dataset(
    cfg: &GeneratorConfig,
    n_per_class: usize,
    split_fracs: [f64; 3],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    if (split_fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("split fractions must sum to 1, got {split_fracs:?}")));
    }
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir)?;
    let mut records = Vec::with_capacity(2 * n_per_class);
    for id in 0..(2 * n_per_class) as u64 {
        let class = (id % 2) as usize;
        let pos = (id / 2) as usize;
        let mut rng = rng::derive(seed, Stream::DataGen, id, class as u64);
        let sample: VoxelSample<f64> = generate_sample(cfg, class, &mut rng)?;
        let file = format!("samples/sample_{id:05}.vxg");
        vxg::write(&out_dir.join(&file), &sample_to_grid(&sample))?;
        records.push(ManifestRecord {
            id,
            file,
            label: class,
            split: split_of(pos, n_per_class, split_fracs).to_string(),
            params: sample.params.clone(),
            seed,
        });
    }
    let mut out = fs::File::create(out_dir.join("manifest.jsonl"))?;
    for r in &records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok(records)
}

fn sample_to_grid<F: Scalar>(sample: &VoxelSample<F>) -> VoxelGrid {
    let s = sample.ed.shape()[0];
    let mut payload = Vec::with_capacity(4 * s * s * s);
    for ch in [&sample.ed, &sample.es, &sample.cavity_ed, &sample.cavity_es] {
        payload.extend(ch.data().iter().map(|&v| if v > F::zero() { 1u8 } else { 0 }));
    }
    VoxelGrid {
        channels: 4,
        dims: [s, s, s],
        payload: VoxelPayload::U8(payload),
    }
}

/// Loads one sample back from its VXG1 file.
pub fn load_sample<F: Scalar>(record: &ManifestRecord, base_dir: &Path) -> Result<VoxelSample<F>> {
    let grid = vxg::read(&base_dir.join(&record.file))?;
    if grid.channels != 4 {
        return Err(Error::Format(format!(
            "sample file {} has {} channels, expected 4",
            record.file, grid.channels
        )));
    }
    let shape = grid.dims.to_vec();
    let chan = |c: usize| -> Result<Tensor<F>> {
        Tensor::from_vec(
            shape.clone(),
            grid.channel_f64(c).into_iter().map(F::from_f64_lossy).collect(),
        )
    };
    Ok(VoxelSample {
        ed: chan(0)?,
        es: chan(1)?,
        cavity_ed: chan(2)?,
        cavity_es: chan(3)?,
        label: record.label,
        params: record.params.clone(),
        voxel_spacing: 1.0,
    })
}

/// Stacks samples' (ED, ES) channels into a network batch [N, 2, S, S, S].
pub fn input_batch<F: Scalar>(samples: &[&VoxelSample<F>]) -> Result<Tensor<F>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::contract("input_batch: empty batch".to_string()))?;
    let s = first.ed.shape()[0];
    let mut data = Vec::with_capacity(samples.len() * 2 * s * s * s);
    for sample in samples {
        data.extend_from_slice(sample.ed.data());
        data.extend_from_slice(sample.es.data());
    }
    Tensor::from_vec(vec![samples.len(), 2, s, s, s], data)
}

pub fn manifest_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("manifest.jsonl")
}
