//! Checkpoint v1: a little-endian binary container for the model config
//! echo, named f64 parameter blobs, Adam state, iteration, and rng seed.
//! Save -> load -> save must be byte-identical.

use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use latentmorph_core::layers::Parameter;
use latentmorph_core::tensor::Tensor;
use latentmorph_core::vae::{ModelConfig, VaeModel};

const MAGIC: &[u8; 4] = b"LMCK";
const VERSION: u32 = 1;

/// Deserialized checkpoint contents.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: u64,
    pub seed: u64,
    pub params: Vec<Parameter<f64>>,
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor<f64>) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor<f64>> {
    let ndim = u32::from_le_bytes(read_exact::<4>(r)?) as usize;
    if ndim > 8 {
        bail!("checkpoint tensor rank {ndim} out of range");
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u64::from_le_bytes(read_exact::<8>(r)?) as usize);
    }
    let n: usize = shape.iter().product();
    if n > 1 << 28 {
        bail!("checkpoint tensor with {n} elements out of range");
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f64::from_le_bytes(read_exact::<8>(r)?));
    }
    Ok(Tensor::from_vec(shape, data).map_err(|e| anyhow::anyhow!("{e}"))?)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg_json = serde_json::to_string(&ckpt.config)?;
    out.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg_json.as_bytes());
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for p in &ckpt.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        write_tensor(&mut out, &p.value);
        write_tensor(&mut out, &p.adam_m);
        write_tensor(&mut out, &p.adam_v);
        out.extend_from_slice(&p.step_count.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, out).with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let mut r = bytes.as_slice();
    if read_exact::<4>(&mut r)? != *MAGIC {
        bail!("{}: not a checkpoint file (bad magic)", path.display());
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    if version != VERSION {
        bail!("{}: unsupported checkpoint version {version}", path.display());
    }
    let cfg_len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes)?;
    let iteration = u64::from_le_bytes(read_exact::<8>(&mut r)?);
    let seed = u64::from_le_bytes(read_exact::<8>(&mut r)?);
    let n_params = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).context("checkpoint parameter name not UTF-8")?;
        let value = read_tensor(&mut r)?;
        let adam_m = read_tensor(&mut r)?;
        let adam_v = read_tensor(&mut r)?;
        let step_count = u64::from_le_bytes(read_exact::<8>(&mut r)?);
        let mut p = Parameter::new(name, value);
        p.adam_m = adam_m;
        p.adam_v = adam_v;
        p.step_count = step_count;
        params.push(p);
    }
    if !r.is_empty() {
        bail!("{}: {} trailing bytes after checkpoint payload", path.display(), r.len());
    }
    Ok(Checkpoint { config, iteration, seed, params })
}

fn cast_tensor_to_f64(t: &Tensor<f32>) -> Tensor<f64> {
    Tensor::from_vec(t.shape().to_vec(), t.data().iter().map(|&v| v as f64).collect()).unwrap()
}

fn cast_tensor_to_f32(t: &Tensor<f64>) -> Tensor<f32> {
    Tensor::from_vec(t.shape().to_vec(), t.data().iter().map(|&v| v as f32).collect()).unwrap()
}

/// Snapshot of an f32 training model. f32 -> f64 widening is exact, so the
/// round trip back to f32 loses nothing.
pub fn from_model(model: &VaeModel<f32>, iteration: u64, seed: u64) -> Checkpoint {
    let params = model
        .params
        .iter()
        .map(|p| {
            let mut q = Parameter::new(p.name.clone(), cast_tensor_to_f64(&p.value));
            q.adam_m = cast_tensor_to_f64(&p.adam_m);
            q.adam_v = cast_tensor_to_f64(&p.adam_v);
            q.step_count = p.step_count;
            q
        })
        .collect();
    Checkpoint { config: model.config.clone(), iteration, seed, params }
}

/// Rebuilds the f32 model, verifying parameter names and shapes against
/// the architecture implied by the config echo.
pub fn to_model(ckpt: &Checkpoint) -> Result<VaeModel<f32>> {
    let mut model =
        VaeModel::<f32>::new(ckpt.config.clone(), 0).map_err(|e| anyhow::anyhow!("{e}"))?;
    if model.params.len() != ckpt.params.len() {
        bail!(
            "checkpoint has {} parameters but architecture expects {}",
            ckpt.params.len(),
            model.params.len()
        );
    }
    for (slot, stored) in model.params.iter_mut().zip(&ckpt.params) {
        if slot.name != stored.name {
            bail!("checkpoint parameter '{}' where architecture expects '{}'", stored.name, slot.name);
        }
        if slot.value.shape() != stored.value.shape() {
            bail!(
                "parameter '{}' has shape {:?} but architecture expects {:?}",
                stored.name,
                stored.value.shape(),
                slot.value.shape()
            );
        }
        slot.value = cast_tensor_to_f32(&stored.value);
        slot.adam_m = cast_tensor_to_f32(&stored.adam_m);
        slot.adam_v = cast_tensor_to_f32(&stored.adam_v);
        slot.step_count = stored.step_count;
        slot.grad = None;
    }
    Ok(model)
}
