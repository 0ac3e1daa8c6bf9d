//! Quadric error metric edge collapse.
//!
//! Vertex quadrics are area-weighted sums of the planes of incident faces.
//! The cheapest edge collapses first; ties go to the smaller `(lo, hi)`
//! vertex pair. A collapse is skipped when it would break the link condition
//! (the endpoints share more than the two opposite vertices) or flip an
//! incident face. Skipped edges are revisited whenever a neighbour collapse
//! touches them.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{validate, TriangleMesh};
use crate::{Error, Result};

pub const MIN_TARGET_FACES: usize = 20;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct Decimation {
    pub mesh: TriangleMesh,
    /// False when no further collapse was admissible before reaching the
    /// target; `mesh` is then the smallest mesh found.
    pub target_reached: bool,
    pub collapses: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: [f64; 3], d: f64, w: f64) -> Self {
        let [a, b, c] = n;
        Quadric([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    fn add(&self, o: &Quadric) -> Quadric {
        Quadric(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let q = &self.0;
        let [x, y, z] = p;
        q[0] * x * x + 2.0 * q[1] * x * y + 2.0 * q[2] * x * z + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Minimiser of the quadric, if its 3×3 block is well conditioned
    /// (Frobenius condition number below `MAX_CONDITION`).
    fn minimiser(&self) -> Option<[f64; 3]> {
        let q = &self.0;
        let a = [[q[0], q[1], q[2]], [q[1], q[4], q[5]], [q[2], q[5], q[7]]];
        let b = [q[3], q[6], q[8]];
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let det = a[0][0] * adj[0][0] + a[0][1] * adj[1][0] + a[0][2] * adj[2][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let frob = |m: &[[f64; 3]; 3]| m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let cond = frob(&a) * frob(&adj) / det.abs();
        if !(cond < MAX_CONDITION) {
            return None;
        }
        let x: [f64; 3] = std::array::from_fn(|i| -(adj[i][0] * b[0] + adj[i][1] * b[1] + adj[i][2] * b[2]) / det);
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Heap entry; the placement is recomputed when the entry is popped.
#[derive(Debug, Clone, Copy)]
struct Entry {
    cost: f64,
    lo: u32,
    hi: u32,
    stamp: (u32, u32),
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    lo: u32,
    hi: u32,
    stamp: (u32, u32),
    target: [f64; 3],
}

impl Candidate {
    fn entry(&self) -> Entry {
        Entry {
            cost: self.cost,
            lo: self.lo,
            hi: self.hi,
            stamp: self.stamp,
        }
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

struct State {
    pos: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vfaces: Vec<Vec<u32>>,
    quadric: Vec<Quadric>,
    version: Vec<u32>,
    alive: Vec<bool>,
    live_faces: usize,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl State {
    fn new(m: &TriangleMesh) -> Self {
        let n = m.vertices.len();
        let mut quadric = vec![Quadric::default(); n];
        let mut vfaces = vec![Vec::new(); n];
        for (fi, f) in m.faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| m.vertices[i as usize]);
            let nrm = cross(sub(b, a), sub(c, a));
            let len = dot(nrm, nrm).sqrt();
            if len > 0.0 {
                let unit = nrm.map(|v| v / len);
                let q = Quadric::plane(unit, -dot(unit, a), 0.5 * len);
                for &k in f {
                    quadric[k as usize] = quadric[k as usize].add(&q);
                }
            }
            for &k in f {
                vfaces[k as usize].push(fi as u32);
            }
        }
        State {
            pos: m.vertices.clone(),
            faces: m.faces.clone(),
            face_alive: vec![true; m.faces.len()],
            vfaces,
            quadric,
            version: vec![0; n],
            alive: vec![true; n],
            live_faces: m.faces.len(),
        }
    }

    fn neighbours_into(&self, v: u32, out: &mut Vec<u32>) {
        out.clear();
        for &f in &self.vfaces[v as usize] {
            for k in self.faces[f as usize] {
                if k != v && !out.contains(&k) {
                    out.push(k);
                }
            }
        }
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        let (lo, hi) = (a.min(b), a.max(b));
        let q = self.quadric[lo as usize].add(&self.quadric[hi as usize]);
        let target = q.minimiser().unwrap_or_else(|| {
            let (p, r) = (self.pos[lo as usize], self.pos[hi as usize]);
            [(p[0] + r[0]) / 2.0, (p[1] + r[1]) / 2.0, (p[2] + r[2]) / 2.0]
        });
        Candidate {
            cost: q.eval(target).max(0.0),
            lo,
            hi,
            stamp: (self.version[lo as usize], self.version[hi as usize]),
            target,
        }
    }

    fn is_current(&self, c: &Entry) -> bool {
        self.alive[c.lo as usize]
            && self.alive[c.hi as usize]
            && self.version[c.lo as usize] == c.stamp.0
            && self.version[c.hi as usize] == c.stamp.1
    }

    fn admissible(&self, c: &Candidate, nl: &mut Vec<u32>, nh: &mut Vec<u32>) -> bool {
        self.neighbours_into(c.lo, nl);
        self.neighbours_into(c.hi, nh);
        if !nl.contains(&c.hi) {
            return false;
        }
        let shared = nl.iter().filter(|k| nh.contains(k)).count();
        if shared != 2 {
            return false;
        }
        for &v in &[c.lo, c.hi] {
            for &f in &self.vfaces[v as usize] {
                let face = self.faces[f as usize];
                if face.contains(&c.lo) && face.contains(&c.hi) {
                    continue;
                }
                let old = face.map(|k| self.pos[k as usize]);
                let new = face.map(|k| if k == v { c.target } else { self.pos[k as usize] });
                let n0 = cross(sub(old[1], old[0]), sub(old[2], old[0]));
                let n1 = cross(sub(new[1], new[0]), sub(new[2], new[0]));
                if dot(n0, n1) <= 0.0 {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, c: &Candidate) {
        let (lo, hi) = (c.lo, c.hi);
        for f in std::mem::take(&mut self.vfaces[hi as usize]) {
            let face = &mut self.faces[f as usize];
            if face.contains(&lo) {
                self.face_alive[f as usize] = false;
                self.live_faces -= 1;
                let face = *face;
                for k in face {
                    if k != hi {
                        self.vfaces[k as usize].retain(|&g| g != f);
                    }
                }
            } else {
                for k in face.iter_mut() {
                    if *k == hi {
                        *k = lo;
                    }
                }
                self.vfaces[lo as usize].push(f);
            }
        }
        self.vfaces[lo as usize].sort_unstable();
        self.pos[lo as usize] = c.target;
        self.quadric[lo as usize] = self.quadric[lo as usize].add(&self.quadric[hi as usize]);
        self.alive[hi as usize] = false;
        self.version[lo as usize] += 1;
        self.version[hi as usize] += 1;
    }

    fn into_mesh(self) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        for (i, p) in self.pos.iter().enumerate() {
            if self.alive[i] && !self.vfaces[i].is_empty() {
                remap[i] = vertices.len() as u32;
                vertices.push(*p);
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &a)| a)
            .map(|(f, _)| f.map(|k| remap[k as usize]))
            .collect();
        TriangleMesh { vertices, faces }
    }
}

/// Collapse edges until at most `target_faces` faces remain.
pub fn decimate(m: &TriangleMesh, target_faces: usize) -> Result<Decimation> {
    if target_faces < MIN_TARGET_FACES {
        return Err(Error::InvalidInput(format!(
            "target_faces must be at least {MIN_TARGET_FACES}, got {target_faces}"
        )));
    }
    let stats = validate(m);
    if !stats.watertight {
        return Err(Error::NotWatertight {
            boundary_edges: stats.boundary_edges,
            nonmanifold_edges: stats.nonmanifold_edges,
        });
    }
    if m.faces.len() <= target_faces {
        return Ok(Decimation {
            mesh: m.clone(),
            target_reached: true,
            collapses: 0,
        });
    }

    let mut state = State::new(m);
    let mut heap: BinaryHeap<Reverse<Entry>> = m
        .edges()
        .into_iter()
        .map(|[a, b]| Reverse(state.candidate(a, b).entry()))
        .collect();
    let mut collapses = 0;
    let (mut nl, mut nh) = (Vec::new(), Vec::new());
    while state.live_faces > target_faces {
        let Some(Reverse(e)) = heap.pop() else { break };
        if !state.is_current(&e) {
            continue;
        }
        let c = state.candidate(e.lo, e.hi);
        if !state.admissible(&c, &mut nl, &mut nh) {
            continue;
        }
        state.collapse(&c);
        collapses += 1;
        state.neighbours_into(c.lo, &mut nl);
        for &n in &nl {
            heap.push(Reverse(state.candidate(c.lo, n).entry()));
        }
    }
    let target_reached = state.live_faces <= target_faces;
    if !target_reached {
        log::warn!(
            "decimation stopped at {} faces (target {target_faces}): no admissible collapse left",
            state.live_faces
        );
    }
    Ok(Decimation {
        mesh: state.into_mesh(),
        target_reached,
        collapses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{mesh_volume, shapes, validate};

    #[test]
    fn icosphere_to_one_thousand_faces() {
        let m = shapes::icosphere(50.0, 4);
        assert_eq!(m.faces.len(), 5120);
        let d = decimate(&m, 1000).unwrap();
        assert!(d.target_reached);
        let s = validate(&d.mesh);
        assert_eq!(s.f_count, 1000);
        assert_eq!(s.v_count, 502);
        assert!(s.watertight);
        assert_eq!(s.genus, Some(0));
        let drift = mesh_volume(&d.mesh).unwrap() / mesh_volume(&m).unwrap() - 1.0;
        assert!(drift.abs() < 0.05, "volume drift {drift}");
    }

    #[test]
    fn below_target_is_unchanged() {
        let m = shapes::icosphere(1.0, 1);
        let d = decimate(&m, 100).unwrap();
        assert_eq!(d.mesh, m);
        assert_eq!(d.collapses, 0);
    }

    #[test]
    fn torus_keeps_genus() {
        let m = shapes::torus(10.0, 3.0, 32, 16);
        let d = decimate(&m, 100).unwrap();
        let s = validate(&d.mesh);
        assert!(s.watertight);
        assert_eq!(s.genus, Some(1));
        assert!(s.f_count <= 100 || !d.target_reached);
    }

    #[test]
    fn rejects_small_target_and_open_mesh() {
        let m = shapes::icosphere(1.0, 2);
        assert!(decimate(&m, 19).is_err());
        let mut open = m.clone();
        open.faces.pop();
        assert!(matches!(decimate(&open, 100), Err(Error::NotWatertight { .. })));
    }

    #[test]
    fn deterministic() {
        let m = shapes::icosphere(5.0, 3);
        let a = decimate(&m, 200).unwrap().mesh;
        let b = decimate(&m, 200).unwrap().mesh;
        assert_eq!(a, b);
    }

    #[test]
    fn quadric_minimiser_of_three_planes_is_their_corner() {
        let q = Quadric::plane([1.0, 0.0, 0.0], -2.0, 1.0)
            .add(&Quadric::plane([0.0, 1.0, 0.0], -3.0, 1.0))
            .add(&Quadric::plane([0.0, 0.0, 1.0], 1.0, 1.0));
        let x = q.minimiser().unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12 && (x[2] + 1.0).abs() < 1e-12);
        assert!(q.eval(x).abs() < 1e-12);
        // A single plane is rank deficient.
        assert!(Quadric::plane([0.0, 0.0, 1.0], 0.0, 1.0).minimiser().is_none());
    }
}
