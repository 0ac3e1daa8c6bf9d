//! Marching cubes over a binary occupancy field.
//!
//! Samples sit at voxel centres. The per-configuration polygons are derived
//! once from the cube faces instead of a hand-written table: on every face,
//! walking its corners counter-clockwise about the outward normal, each run
//! of inside corners yields one segment from the crossing where the walk
//! enters the run to the crossing where it leaves. Adjacent cubes see a shared
//! face with opposite orientation, so they emit the same segments reversed
//! and the surface is closed and consistently oriented. Ambiguous faces
//! always separate the two inside corners.
//!
//! Segments chain into loops. Triangles stay triangles; longer loops are
//! fanned around their centroid, which never introduces a chord that a
//! neighbouring cube could duplicate.

use std::sync::OnceLock;

use super::TriangleMesh;
use crate::volume::VoxelVolume;
use crate::{Error, Result};

/// `(axis, base corner)` for the 12 cube edges. Corner `c` sits at
/// `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn cube_edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut k = 0;
    for axis in 0..3 {
        for c in 0..8usize {
            if c >> axis & 1 == 0 {
                out[k] = (axis, c);
                k += 1;
            }
        }
    }
    out
}

fn edge_between(a: usize, b: usize) -> usize {
    let diff = a ^ b;
    debug_assert!(diff.count_ones() == 1);
    let axis = diff.trailing_zeros() as usize;
    let base = a.min(b);
    cube_edges()
        .iter()
        .position(|&e| e == (axis, base))
        .expect("adjacent corners share an edge")
}

/// Corner cycles of the six faces, counter-clockwise about the outward normal.
fn face_cycles() -> [[usize; 4]; 6] {
    let mut out = [[0; 4]; 6];
    for axis in 0..3 {
        let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let corner = |u: usize, v: usize| side << axis | u << p | v << q;
            out[axis * 2 + side] = if side == 1 {
                [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)]
            } else {
                [corner(0, 0), corner(0, 1), corner(1, 1), corner(1, 0)]
            };
        }
    }
    out
}

type Loops = Vec<Vec<u8>>;

fn build_table() -> Vec<Loops> {
    let faces = face_cycles();
    (0..256usize)
        .map(|config| {
            let inside = |c: usize| config >> c & 1 == 1;
            let mut next = [u8::MAX; 12];
            for cycle in &faces {
                for i in 0..4 {
                    let (a, b) = (cycle[i], cycle[(i + 1) % 4]);
                    if inside(a) || !inside(b) {
                        continue;
                    }
                    // Walk the inside run starting at b.
                    let mut j = (i + 1) % 4;
                    while inside(cycle[(j + 1) % 4]) {
                        j = (j + 1) % 4;
                    }
                    let enter = edge_between(a, b);
                    let exit = edge_between(cycle[j], cycle[(j + 1) % 4]);
                    next[enter] = exit as u8;
                }
            }
            let mut seen = [false; 12];
            let mut loops = Vec::new();
            for start in 0..12 {
                if next[start] == u8::MAX || seen[start] {
                    continue;
                }
                let mut ring = Vec::new();
                let mut e = start;
                while !seen[e] {
                    seen[e] = true;
                    ring.push(e as u8);
                    e = next[e] as usize;
                }
                loops.push(ring);
            }
            loops
        })
        .collect()
}

fn table() -> &'static [Loops] {
    static TABLE: OnceLock<Vec<Loops>> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

#[derive(Clone, Copy)]
enum Corner {
    Edge(u64),
    Centre(u32),
}

/// Extract the `isolevel` surface of the occupancy field (1 inside, 0
/// outside), with vertices in mm.
pub fn marching_cubes(v: &VoxelVolume, isolevel: f64) -> Result<TriangleMesh> {
    if !(isolevel > 0.0 && isolevel < 1.0) {
        return Err(Error::InvalidInput(format!("isolevel must lie in (0, 1), got {isolevel}")));
    }
    if !v.has_any() {
        return Err(Error::EmptyVolume);
    }
    if v.touches_boundary() {
        return Err(Error::TouchesBoundary);
    }
    let [nx, ny, nz] = v.dims();
    let spacing = v.spacing();
    let edges = cube_edges();
    let table = table();
    let data = v.data();
    let corner_offset: [usize; 8] = std::array::from_fn(|c| v.index(c & 1, c >> 1 & 1, c >> 2 & 1));

    let mut tris: Vec<[Corner; 3]> = Vec::new();
    let mut centres: Vec<Vec<u64>> = Vec::new();
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let base = v.index(x, y, z);
                let mut config = 0usize;
                for (c, off) in corner_offset.iter().enumerate() {
                    if data[base + off] {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                for ring in &table[config] {
                    let ids: Vec<u64> = ring
                        .iter()
                        .map(|&e| {
                            let (axis, c) = edges[e as usize];
                            3 * (base + corner_offset[c]) as u64 + axis as u64
                        })
                        .collect();
                    if ids.len() == 3 {
                        tris.push([Corner::Edge(ids[0]), Corner::Edge(ids[1]), Corner::Edge(ids[2])]);
                    } else {
                        let c = Corner::Centre(centres.len() as u32);
                        for i in 0..ids.len() {
                            tris.push([Corner::Edge(ids[i]), Corner::Edge(ids[(i + 1) % ids.len()]), c]);
                        }
                        centres.push(ids);
                    }
                }
            }
        }
    }

    let mut edge_ids: Vec<u64> = tris
        .iter()
        .flat_map(|t| t.iter())
        .filter_map(|c| match c {
            Corner::Edge(id) => Some(*id),
            Corner::Centre(_) => None,
        })
        .collect();
    edge_ids.sort_unstable();
    edge_ids.dedup();

    let position = |id: u64| -> [f64; 3] {
        let axis = (id % 3) as usize;
        let p = (id / 3) as usize;
        let [x, y, z] = v.coords(p);
        let mut q = [x, y, z];
        q[axis] += 1;
        let v0 = if data[p] { 1.0 } else { 0.0 };
        let v1 = if v.get(q[0], q[1], q[2]) { 1.0 } else { 0.0 };
        let t = (isolevel - v0) / (v1 - v0);
        let mut out = [x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]];
        out[axis] += t * spacing[axis];
        out
    };
    let mut vertices: Vec<[f64; 3]> = edge_ids.iter().map(|&id| position(id)).collect();
    let n_edge = vertices.len() as u32;
    for ring in &centres {
        let mut c = [0.0; 3];
        for &id in ring {
            let p = position(id);
            for i in 0..3 {
                c[i] += p[i];
            }
        }
        vertices.push(c.map(|s| s / ring.len() as f64));
    }
    let index = |c: Corner| -> u32 {
        match c {
            Corner::Edge(id) => edge_ids.binary_search(&id).expect("edge id collected") as u32,
            Corner::Centre(k) => n_edge + k,
        }
    };
    let faces = tris.into_iter().map(|t| t.map(index)).collect();
    Ok(TriangleMesh { vertices, faces })
}
