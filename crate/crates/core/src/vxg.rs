//! VXG1 voxel-grid file format.
//!
//! Layout: magic `VXG1`, little-endian u32 channel count, u32 dx, dy, dz,
//! u8 dtype tag (0 = u8 binary, 1 = f32), then the raw row-major,
//! channel-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VXG1";

#[derive(Debug, Clone, PartialEq)]
pub enum VoxelPayload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub channels: usize,
    pub dims: [usize; 3],
    pub payload: VoxelPayload,
}

impl VoxelGrid {
    pub fn voxels_per_channel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn expected_len(&self) -> usize {
        self.channels * self.voxels_per_channel()
    }

    pub fn validate(&self) -> Result<()> {
        let len = match &self.payload {
            VoxelPayload::U8(v) => v.len(),
            VoxelPayload::F32(v) => v.len(),
        };
        if len != self.expected_len() {
            return Err(Error::Format(format!(
                "payload length {} != {} channels x {:?}",
                len, self.channels, self.dims
            )));
        }
        Ok(())
    }

    /// One channel as f64 values.
    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        let n = self.voxels_per_channel();
        match &self.payload {
            VoxelPayload::U8(v) => v[c * n..(c + 1) * n].iter().map(|&b| b as f64).collect(),
            VoxelPayload::F32(v) => v[c * n..(c + 1) * n].iter().map(|&x| x as f64).collect(),
        }
    }
}

pub fn write(path: &Path, grid: &VoxelGrid) -> Result<()> {
    grid.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(grid.channels as u32).to_le_bytes())?;
    for &d in &grid.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    match &grid.payload {
        VoxelPayload::U8(v) => {
            w.write_all(&[0u8])?;
            w.write_all(v)?;
        }
        VoxelPayload::F32(v) => {
            w.write_all(&[1u8])?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<VoxelGrid> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected VXG1")));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let channels = read_u32(&mut r)? as usize;
    let dims = [
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
    ];
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let n = channels * dims.iter().product::<usize>();
    let payload = match tag[0] {
        0 => {
            let mut v = vec![0u8; n];
            r.read_exact(&mut v)?;
            VoxelPayload::U8(v)
        }
        1 => {
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            VoxelPayload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
        t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
    };
    let grid = VoxelGrid { channels, dims, payload };
    grid.validate()?;
    Ok(grid)
}
