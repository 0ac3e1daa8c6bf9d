use serde::{Deserialize, Serialize};

use super::VoxelVolume;
use crate::{Error, Result};

/// Projection direction. Coronal looks along y (front view, image x–z);
/// sagittal looks along x (side view, image y–z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Coronal,
    Sagittal,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }
}

/// Binary max-projection of a volume, row-major with the image x fastest
/// and rows running along the volume z axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub axis: Axis,
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    pub data: Vec<bool>,
}

impl Silhouette {
    pub fn new(axis: Axis, dims: [usize; 2], spacing: [f64; 2], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] {
            return Err(Error::InvalidInput(format!(
                "silhouette data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self {
            axis,
            dims,
            spacing,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[u + self.dims[0] * v]
    }

    /// Area-weighted coverage on a `width × height` raster, values in `[0, 1]`.
    pub fn resample(&self, width: usize, height: usize) -> Vec<f64> {
        let [w, h] = self.dims;
        let weights = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
            let scale = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|o| {
                    let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
                    let first = lo.floor() as usize;
                    let last = (hi.ceil() as usize).min(n_in);
                    (first..last)
                        .filter_map(|i| {
                            let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                            (overlap > 0.0).then_some((i, overlap / scale))
                        })
                        .collect()
                })
                .collect()
        };
        let wu = weights(w, width);
        let wv = weights(h, height);
        let mut out = vec![0.0; width * height];
        for (ov, rows) in wv.iter().enumerate() {
            for (ou, cols) in wu.iter().enumerate() {
                let mut acc = 0.0;
                for &(v, fv) in rows {
                    for &(u, fu) in cols {
                        if self.get(u, v) {
                            acc += fu * fv;
                        }
                    }
                }
                out[ou + width * ov] = acc;
            }
        }
        out
    }

    /// Store as a one-slice volume for the shared volume file format.
    pub fn to_volume(&self) -> VoxelVolume {
        VoxelVolume::from_data(
            [self.dims[0], self.dims[1], 1],
            [self.spacing[0], self.spacing[1], 1.0],
            self.data.clone(),
        )
        .expect("silhouette invariants imply a valid volume")
    }

    pub fn from_volume(axis: Axis, v: &VoxelVolume) -> Result<Self> {
        let [w, h, nz] = v.dims();
        if nz != 1 {
            return Err(Error::Format(format!("silhouette volume must have nz = 1, got {nz}")));
        }
        let s = v.spacing();
        Self::new(axis, [w, h], [s[0], s[1]], v.data().to_vec())
    }
}

/// Max-projection along the anterior–posterior (coronal) or left–right
/// (sagittal) axis.
pub fn silhouette(v: &VoxelVolume, axis: Axis) -> Silhouette {
    let [nx, ny, nz] = v.dims();
    let s = v.spacing();
    let (w, spacing) = match axis {
        Axis::Coronal => (nx, [s[0], s[2]]),
        Axis::Sagittal => (ny, [s[1], s[2]]),
    };
    let mut data = vec![false; w * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if v.get(x, y, z) {
                    let u = if axis == Axis::Coronal { x } else { y };
                    data[u + w * z] = true;
                }
            }
        }
    }
    Silhouette {
        axis,
        dims: [w, nz],
        spacing,
        data,
    }
}
