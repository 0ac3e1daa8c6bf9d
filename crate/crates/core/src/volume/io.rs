//! `<name>.volhdr` (JSON) + `<name>.volraw` (bit-packed, x-fastest).
//!
//! Each x-row starts on a fresh byte; within a byte, voxel `x = 8k + i` is
//! bit `i` (least significant first).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::VoxelVolume;
use crate::{Error, Result};

pub const ENCODING: &str = "bitpack-x-fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub encoding: String,
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn encode_payload(v: &VoxelVolume) -> Vec<u8> {
    let [nx, ny, nz] = v.dims();
    let row_bytes = nx.div_ceil(8);
    let mut out = vec![0u8; row_bytes * ny * nz];
    for row in 0..ny * nz {
        let src = &v.data()[row * nx..(row + 1) * nx];
        let dst = &mut out[row * row_bytes..(row + 1) * row_bytes];
        for (x, &bit) in src.iter().enumerate() {
            if bit {
                dst[x / 8] |= 1 << (x % 8);
            }
        }
    }
    out
}

pub fn decode_payload(header: &VolumeHeader, bytes: &[u8]) -> Result<VoxelVolume> {
    if header.encoding != ENCODING {
        return Err(Error::Format(format!("unsupported volume encoding {:?}", header.encoding)));
    }
    let [nx, ny, nz] = header.dims;
    let row_bytes = nx.div_ceil(8);
    if bytes.len() != row_bytes * ny * nz {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            row_bytes * ny * nz
        )));
    }
    let mut data = vec![false; nx * ny * nz];
    for row in 0..ny * nz {
        let src = &bytes[row * row_bytes..(row + 1) * row_bytes];
        for x in 0..nx {
            data[row * nx + x] = src[x / 8] >> (x % 8) & 1 == 1;
        }
    }
    VoxelVolume::from_data(header.dims, header.spacing, data)
}

/// Write `base.volhdr` and `base.volraw`.
pub fn write_volume(base: &Path, v: &VoxelVolume) -> Result<()> {
    let header = VolumeHeader {
        dims: v.dims(),
        spacing: v.spacing(),
        encoding: ENCODING.to_string(),
    };
    fs::write(with_ext(base, "volhdr"), serde_json::to_vec_pretty(&header)?)?;
    fs::write(with_ext(base, "volraw"), encode_payload(v))?;
    Ok(())
}

pub fn read_volume(base: &Path) -> Result<VoxelVolume> {
    let header: VolumeHeader = serde_json::from_slice(&fs::read(with_ext(base, "volhdr"))?)?;
    decode_payload(&header, &fs::read(with_ext(base, "volraw"))?)
}
