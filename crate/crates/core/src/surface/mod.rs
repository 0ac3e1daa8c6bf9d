//! Triangle meshes: extraction, validation, signed volume and decimation.

mod decimate;
mod marching_cubes;
mod obj;

pub use decimate::{decimate, Decimation, MIN_TARGET_FACES};
pub use marching_cubes::marching_cubes;
pub use obj::{format_g6, parse_obj, read_obj, to_obj_string, write_obj};


use crate::{Error, Result};

/// Vertex positions in mm plus triangles, counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshStats {
    pub v_count: usize,
    pub e_count: usize,
    pub f_count: usize,
    pub boundary_edges: usize,
    pub nonmanifold_edges: usize,
    pub degenerate_faces: usize,
    pub watertight: bool,
    pub euler_characteristic: i64,
    /// `(2 - χ) / 2`, only meaningful for watertight, connected meshes.
    pub genus: Option<i64>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&k| k >= n) {
                return Err(Error::InvalidInput(format!("face {i} references a missing vertex: {f:?}")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidInput(format!("face {i} is degenerate: {f:?}")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.faces.is_empty()
    }

    /// Unique undirected edges `(lo, hi)` in sorted order.
    pub fn edges(&self) -> Vec<[u32; 2]> {
        let mut keys: Vec<u64> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (u64::from(a.min(b)) << 32) | u64::from(a.max(b)))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter().map(|k| [(k >> 32) as u32, k as u32]).collect()
    }

    /// Axis-aligned bounding box diagonal length.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (0..3).map(|i| (hi[i] - lo[i]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        }
    }
}

/// Counts, watertightness and Euler characteristic.
pub fn validate(m: &TriangleMesh) -> MeshStats {
    let mut keys: Vec<u64> = Vec::with_capacity(m.faces.len() * 3);
    let mut degenerate = 0;
    for f in &m.faces {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            degenerate += 1;
        }
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            keys.push((u64::from(a.min(b)) << 32) | u64::from(a.max(b)));
        }
    }
    keys.sort_unstable();
    let (mut edges, mut boundary, mut nonmanifold) = (0usize, 0usize, 0usize);
    for run in keys.chunk_by(|a, b| a == b) {
        edges += 1;
        match run.len() {
            1 => boundary += 1,
            2 => {}
            _ => nonmanifold += 1,
        }
    }
    let watertight = !m.faces.is_empty() && boundary == 0 && nonmanifold == 0 && degenerate == 0;
    let chi = m.vertices.len() as i64 - edges as i64 + m.faces.len() as i64;
    MeshStats {
        v_count: m.vertices.len(),
        e_count: edges,
        f_count: m.faces.len(),
        boundary_edges: boundary,
        nonmanifold_edges: nonmanifold,
        degenerate_faces: degenerate,
        watertight,
        euler_characteristic: chi,
        genus: watertight.then_some((2 - chi) / 2),
    }
}

/// Signed enclosed volume (positive for outward orientation).
pub fn mesh_volume(m: &TriangleMesh) -> Result<f64> {
    let stats = validate(m);
    if !stats.watertight {
        return Err(Error::NotWatertight {
            boundary_edges: stats.boundary_edges,
            nonmanifold_edges: stats.nonmanifold_edges,
        });
    }
    Ok(signed_volume(m))
}

pub(crate) fn signed_volume(m: &TriangleMesh) -> f64 {
    m.faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| m.vertices[i as usize]);
            a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0])
        })
        .sum::<f64>()
        / 6.0
}

/// Number of connected components of the face graph (shared vertices).
pub fn component_count(m: &TriangleMesh) -> usize {
    let n = m.vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in &m.faces {
        let a = find(&mut parent, f[0] as usize);
        for &k in &f[1..] {
            let b = find(&mut parent, k as usize);
            parent[b] = a;
        }
    }
    let mut used = vec![false; n];
    for f in &m.faces {
        for &k in f {
            used[k as usize] = true;
        }
    }
    let mut roots: Vec<usize> = (0..n).filter(|&i| used[i]).map(|i| find(&mut parent, i)).collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

/// Shapes used across the test suites.
pub mod shapes {
    use super::TriangleMesh;

    pub fn unit_cube() -> TriangleMesh {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriangleMesh { vertices, faces }
    }

    pub fn tetrahedron() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            faces: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        }
    }

    /// Icosahedron subdivided `levels` times and projected to a sphere:
    /// `20 · 4^levels` faces.
    pub fn icosphere(radius: f64, levels: u32) -> TriangleMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<[f64; 3]> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        let project = |p: [f64; 3]| {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            [p[0] / n * radius, p[1] / n * radius, p[2] / n * radius]
        };
        vertices.iter_mut().for_each(|v| *v = project(*v));
        for _ in 0..levels {
            let mut mid = std::collections::HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: u32, b: u32, vs: &mut Vec<[f64; 3]>| -> u32 {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    let (p, q) = (vs[a as usize], vs[b as usize]);
                    vs.push(project([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                    (vs.len() - 1) as u32
                })
            };
            for f in &faces {
                let ab = midpoint(f[0], f[1], &mut vertices);
                let bc = midpoint(f[1], f[2], &mut vertices);
                let ca = midpoint(f[2], f[0], &mut vertices);
                next.push([f[0], ab, ca]);
                next.push([f[1], bc, ab]);
                next.push([f[2], ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        TriangleMesh { vertices, faces }
    }

    /// Parametric torus with `n_major × n_minor` quads, each split in two.
    pub fn torus(major: f64, minor: f64, n_major: u32, n_minor: u32) -> TriangleMesh {
        let mut vertices = Vec::new();
        for i in 0..n_major {
            let u = i as f64 / n_major as f64 * std::f64::consts::TAU;
            for j in 0..n_minor {
                let v = j as f64 / n_minor as f64 * std::f64::consts::TAU;
                let r = major + minor * v.cos();
                vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
            }
        }
        let id = |i: u32, j: u32| (i % n_major) * n_minor + (j % n_minor);
        let mut faces = Vec::new();
        for i in 0..n_major {
            for j in 0..n_minor {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        TriangleMesh { vertices, faces }
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::*;
    use super::*;

    #[test]
    fn tetrahedron_stats() {
        let s = validate(&tetrahedron());
        assert_eq!((s.v_count, s.e_count, s.f_count), (4, 6, 4));
        assert_eq!(s.euler_characteristic, 2);
        assert_eq!(s.genus, Some(0));
        assert!(s.watertight);
    }

    #[test]
    fn single_triangle_is_open() {
        let m = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let s = validate(&m);
        assert!(!s.watertight);
        assert_eq!(s.boundary_edges, 3);
        assert_eq!(s.genus, None);
        assert!(matches!(mesh_volume(&m), Err(Error::NotWatertight { .. })));
    }

    #[test]
    fn torus_has_genus_one() {
        // 8x8 grid: V = 64, F = 128, E = 3F/2 = 192, so χ = 0.
        let s = validate(&torus(3.0, 1.0, 8, 8));
        assert_eq!((s.v_count, s.e_count, s.f_count), (64, 192, 128));
        assert_eq!(s.euler_characteristic, 0);
        assert_eq!(s.genus, Some(1));
        assert_eq!(s.e_count * 2, s.f_count * 3);
    }

    #[test]
    fn cube_volume_and_orientation() {
        assert!((mesh_volume(&unit_cube()).unwrap() - 1.0).abs() < 1e-15);
        assert!((mesh_volume(&unit_cube().flipped()).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn icosphere_volume() {
        let m = icosphere(10.0, 3);
        assert_eq!(m.faces.len(), 1280);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        let v = mesh_volume(&m).unwrap();
        // Inscribed polyhedron: slightly below the sphere.
        assert!(v < exact && (v / exact - 1.0).abs() < 0.01, "{v}");
        let s = validate(&m);
        assert_eq!(s.genus, Some(0));
        assert_eq!(s.v_count, s.f_count / 2 + 2);
    }

    #[test]
    fn constructor_rejects_bad_faces() {
        assert!(TriangleMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn components() {
        let mut m = tetrahedron();
        assert_eq!(component_count(&m), 1);
        let off = m.vertices.len() as u32;
        let t = tetrahedron();
        m.vertices.extend(t.vertices.iter().map(|v| [v[0] + 5.0, v[1], v[2]]));
        m.faces.extend(t.faces.iter().map(|f| f.map(|k| k + off)));
        assert_eq!(component_count(&m), 2);
        assert_eq!(validate(&m).euler_characteristic, 4);
    }
}
