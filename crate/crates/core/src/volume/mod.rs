//! Binary voxel volumes.
//!
//! Morphology uses the 6-connected discrete ball (the L1 ball) of radius `r`,
//! which is the `r`-fold Minkowski sum of the 3D cross. Voxels outside the
//! grid count as empty, so erosion eats into the grid border and dilation is
//! clipped there.

mod io;
mod silhouette;
mod synth;

pub use io::{read_volume, write_volume, VolumeHeader};
pub use silhouette::{silhouette, Axis, Silhouette};
pub use synth::{
    cohort_grid, generate_synthetic_body, sample_body_spec, visceral_mask, Capsule, Ellipsoid,
    Sex, ShellField, SubjectLabels, Superellipsoid, SyntheticBodySpec,
};

use crate::{Error, Result};

/// 3D occupancy grid with physical spacing, x-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<bool>,
}

impl VoxelVolume {
    /// An all-empty volume.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let len = dims[0] * dims[1] * dims[2];
        Self::from_data(dims, spacing, vec![false; len])
    }

    pub fn from_data(dims: [usize; 3], spacing: [f64; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidInput(format!(
                "volume data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "voxel spacing must be strictly positive, got {spacing:?}"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let yz = idx / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    /// Number of set voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn has_any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Physical volume of the set voxels in mm³.
    pub fn occupied_mm3(&self) -> f64 {
        self.count() as f64 * self.spacing.iter().product::<f64>()
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    /// Copy into a larger grid with `margin` empty voxels on every side.
    pub fn padded(&self, margin: usize) -> Self {
        let [nx, ny, nz] = self.dims;
        let dims = [nx + 2 * margin, ny + 2 * margin, nz + 2 * margin];
        let mut out = Self {
            dims,
            spacing: self.spacing,
            data: vec![false; dims[0] * dims[1] * dims[2]],
        };
        for z in 0..nz {
            for y in 0..ny {
                let src = self.index(0, y, z);
                let dst = out.index(margin, y + margin, z + margin);
                out.data[dst..dst + nx].copy_from_slice(&self.data[src..src + nx]);
            }
        }
        out
    }

    /// True when any set voxel lies on the outermost layer of the grid.
    pub fn touches_boundary(&self) -> bool {
        let [nx, ny, nz] = self.dims;
        self.data.iter().enumerate().any(|(i, &b)| {
            if !b {
                return false;
            }
            let [x, y, z] = self.coords(i);
            x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz
        })
    }

    /// Every voxel set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// One pass of 6-neighbour dilation (`grow = true`) or erosion.
    fn cross_step(&self, grow: bool) -> Self {
        let [nx, ny, nz] = self.dims;
        let sx = 1;
        let sy = nx;
        let sz = nx * ny;
        let src = &self.data;
        let mut data = vec![false; src.len()];
        for z in 0..nz {
            for y in 0..ny {
                let row = self.index(0, y, z);
                for x in 0..nx {
                    let i = row + x;
                    // Out-of-grid neighbours are empty.
                    let n = [
                        (x > 0).then(|| src[i - sx]),
                        (x + 1 < nx).then(|| src[i + sx]),
                        (y > 0).then(|| src[i - sy]),
                        (y + 1 < ny).then(|| src[i + sy]),
                        (z > 0).then(|| src[i - sz]),
                        (z + 1 < nz).then(|| src[i + sz]),
                    ];
                    data[i] = if grow {
                        src[i] || n.iter().any(|v| *v == Some(true))
                    } else {
                        src[i] && n.iter().all(|v| *v == Some(true))
                    };
                }
            }
        }
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }
}

/// Erosion by the 6-connected ball of radius `r`.
pub fn erode(v: &VoxelVolume, r: usize) -> VoxelVolume {
    (0..r).fold(v.clone(), |acc, _| acc.cross_step(false))
}

/// Dilation by the 6-connected ball of radius `r`.
pub fn dilate(v: &VoxelVolume, r: usize) -> VoxelVolume {
    (0..r).fold(v.clone(), |acc, _| acc.cross_step(true))
}

/// Morphological closing: `erode(dilate(v, r), r)`.
pub fn close(v: &VoxelVolume, r: usize) -> VoxelVolume {
    erode(&dilate(v, r), r)
}

/// Morphological opening: `dilate(erode(v, r), r)`.
pub fn open(v: &VoxelVolume, r: usize) -> VoxelVolume {
    dilate(&erode(v, r), r)
}

/// Keep only the largest 26-connected component.
///
/// Ties go to the component containing the smallest linear index.
pub fn largest_component(v: &VoxelVolume) -> VoxelVolume {
    let [nx, ny, nz] = v.dims;
    let mut label = vec![u32::MAX; v.data.len()];
    let mut best: Option<(u32, usize)> = None;
    let mut stack = Vec::new();
    let mut next = 0u32;
    for seed in 0..v.data.len() {
        if !v.data[seed] || label[seed] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        label[seed] = id;
        stack.push(seed);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let [x, y, z] = v.coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if qx < 0
                            || qy < 0
                            || qz < 0
                            || qx >= nx as i64
                            || qy >= ny as i64
                            || qz >= nz as i64
                        {
                            continue;
                        }
                        let j = v.index(qx as usize, qy as usize, qz as usize);
                        if v.data[j] && label[j] == u32::MAX {
                            label[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        // Seeds are visited in linear order, so strict `>` keeps the
        // earliest component on ties.
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    let data = match best {
        Some((id, _)) => label.iter().map(|&l| l == id).collect(),
        None => vec![false; v.data.len()],
    };
    VoxelVolume {
        dims: v.dims,
        spacing: v.spacing,
        data,
    }
}

/// Default whole-body segmentation cleanup: pad, close, keep the largest
/// component. The result has at least one empty voxel layer on every side.
pub fn segment_body(v: &VoxelVolume, close_radius: usize) -> VoxelVolume {
    let padded = v.padded(close_radius + 1);
    largest_component(&close(&padded, close_radius))
}
