//! Rigid registration: point-to-point ICP and reference-subject selection.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::surface::TriangleMesh;
use crate::volume::SubjectLabels;
use crate::{Error, Result};

/// `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        TransformRepr {
            rotation: [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]],
            translation: self.translation,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let t = TransformRepr::deserialize(d)?;
        let r = t.rotation;
        Ok(RigidTransform {
            rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            translation: t.translation,
        })
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn translation(t: [f64; 3]) -> Self {
        RigidTransform {
            translation: t,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length),
    /// followed by translation `t`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Self {
        let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner();
        Self::from_parts(&r, &Vector3::from(t))
    }

    fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        RigidTransform {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [t[0], t[1], t[2]],
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let r = self.matrix() * other.matrix();
        let t = self.matrix() * Vector3::from(other.translation) + Vector3::from(self.translation);
        Self::from_parts(&r, &t)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.matrix().transpose();
        let t = -(rt * Vector3::from(self.translation));
        Self::from_parts(&rt, &t)
    }

    /// Orthonormal with determinant +1, to `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let r = self.matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        err <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpReport {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub rmsd: f64,
    pub converged: bool,
    /// RMSD after centroid alignment, then after each accepted iteration.
    pub rmsd_history: Vec<f64>,
}

pub fn apply_transform(m: &TriangleMesh, t: &RigidTransform) -> TriangleMesh {
    TriangleMesh {
        vertices: m.vertices.iter().map(|&p| t.apply(p)).collect(),
        faces: m.faces.clone(),
    }
}

fn centroid(points: &[[f64; 3]]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for p in points {
        c += Vector3::from(*p);
    }
    c / points.len() as f64
}

fn check_spread(name: &str, points: &[[f64; 3]]) -> Result<()> {
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let mut ev: Vec<f64> = eig.iter().map(|v| v.abs()).collect();
    ev.sort_by(f64::total_cmp);
    if points.len() < 3 || !(ev[1] > 1e-12 * ev[2].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!(
            "{name} mesh needs at least 3 non-collinear vertices"
        )));
    }
    Ok(())
}

/// Least-squares rigid map taking `src[i]` onto `dst[i]`, with reflections
/// excluded.
pub fn kabsch(src: &[[f64; 3]], dst: &[[f64; 3]]) -> RigidTransform {
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (Vector3::from(*s) - cs) * (Vector3::from(*d) - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    RigidTransform::from_parts(&r, &(cd - r * cs))
}

fn matched_rmsd(tree: &KdTree, target: &[[f64; 3]], src: &[[f64; 3]], t: &RigidTransform, out: &mut Vec<[f64; 3]>) -> f64 {
    out.clear();
    let mut sum = 0.0;
    for &p in src {
        let (i, d2) = tree.nearest(t.apply(p)).expect("target checked non-empty");
        out.push(target[i]);
        sum += d2;
    }
    (sum / src.len() as f64).sqrt()
}

/// Align `source` onto `target`. Starts from centroid alignment; each
/// iteration matches every source vertex to its nearest target vertex and
/// refits. An iteration that would raise the RMSD is discarded and ends the
/// run, so the reported history never increases.
pub fn icp(source: &TriangleMesh, target: &TriangleMesh, max_iters: usize, tol: f64) -> Result<IcpReport> {
    if max_iters < 1 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    check_spread("source", &source.vertices)?;
    check_spread("target", &target.vertices)?;
    let src = &source.vertices;
    let tree = KdTree::new(&target.vertices);

    let shift = centroid(&target.vertices) - centroid(src);
    let mut transform = RigidTransform::translation([shift[0], shift[1], shift[2]]);
    let mut matches = Vec::with_capacity(src.len());
    let mut rmsd = matched_rmsd(&tree, &target.vertices, src, &transform, &mut matches);
    let mut history = vec![rmsd];
    let mut converged = false;
    let mut iterations = 0;
    let mut trial_matches = Vec::with_capacity(src.len());
    while iterations < max_iters {
        iterations += 1;
        let candidate = kabsch(src, &matches);
        let next = matched_rmsd(&tree, &target.vertices, src, &candidate, &mut trial_matches);
        if !(next <= rmsd) {
            converged = true;
            break;
        }
        let gain = rmsd - next;
        transform = candidate;
        rmsd = next;
        std::mem::swap(&mut matches, &mut trial_matches);
        history.push(rmsd);
        if gain < tol {
            converged = true;
            break;
        }
    }
    Ok(IcpReport {
        transform,
        iterations,
        rmsd,
        converged,
        rmsd_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceChoice {
    pub subject_id: String,
    /// Set when height, weight and age are all constant across the cohort.
    pub degenerate: bool,
}

/// The subject closest to the cohort mean in z-scored (height, weight, age).
/// Attributes with zero variance are left out of the distance.
pub fn select_reference(cohort: &[SubjectLabels]) -> Result<ReferenceChoice> {
    if cohort.is_empty() {
        return Err(Error::InvalidInput("cohort is empty".into()));
    }
    let attrs = |s: &SubjectLabels| [s.height_mm, s.weight_kg, s.age_years];
    if cohort.iter().flat_map(attrs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("height/weight/age must be finite".into()));
    }
    let n = cohort.len() as f64;
    let mut mean = [0.0; 3];
    for s in cohort {
        for (m, v) in mean.iter_mut().zip(attrs(s)) {
            *m += v / n;
        }
    }
    let mut sd = [0.0; 3];
    for s in cohort {
        for ((d, v), m) in sd.iter_mut().zip(attrs(s)).zip(mean) {
            *d += (v - m).powi(2) / n;
        }
    }
    let sd = sd.map(f64::sqrt);
    let degenerate = sd.iter().all(|&d| d == 0.0);
    let score = |s: &SubjectLabels| -> f64 {
        attrs(s)
            .iter()
            .zip(mean)
            .zip(sd)
            .filter(|(_, d)| *d > 0.0)
            .map(|((v, m), d)| ((v - m) / d).powi(2))
            .sum()
    };
    let best = cohort
        .iter()
        .map(|s| (score(s), s))
        .min_by(|(a, sa), (b, sb)| a.total_cmp(b).then_with(|| sa.subject_id.cmp(&sb.subject_id)))
        .map(|(_, s)| s)
        .expect("cohort non-empty");
    Ok(ReferenceChoice {
        subject_id: best.subject_id.clone(),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{mesh_volume, shapes};
    use crate::volume::Sex;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// A lumpy, asymmetric closed surface so ICP has a unique optimum.
    fn blob() -> TriangleMesh {
        let mut m = shapes::icosphere(1.0, 3);
        for p in &mut m.vertices {
            let [x, y, z] = *p;
            let r = 1.0 + 0.25 * x * y + 0.2 * z * z * z + 0.1 * x;
            *p = [60.0 * r * x, 35.0 * r * y, 110.0 * r * z];
        }
        m
    }

    fn vertex_rmsd(a: &TriangleMesh, b: &TriangleMesh) -> f64 {
        let s: f64 = a
            .vertices
            .iter()
            .zip(&b.vertices)
            .map(|(p, q)| (0..3).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>())
            .sum();
        (s / a.vertices.len() as f64).sqrt()
    }

    fn subject(id: &str, h: f64, w: f64, a: f64) -> SubjectLabels {
        SubjectLabels {
            subject_id: id.into(),
            vat_mm3: 0.0,
            asat_mm3: 0.0,
            sex: Sex::F,
            height_mm: h,
            weight_kg: w,
            age_years: a,
        }
    }

    #[test]
    fn self_registration_is_identity() {
        let m = blob();
        let r = icp(&m, &m, 20, 1e-12).unwrap();
        assert!(r.rmsd < 1e-9);
        let p = r.transform;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p.rotation[i][j] - want).abs() < 1e-9);
            }
            assert!(p.translation[i].abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_known_motion() {
        let m = blob();
        let t = RigidTransform::from_axis_angle([0.0, 0.0, 1.0], 15f64.to_radians(), [5.0, -3.0, 2.0]);
        let moved = apply_transform(&m, &t);
        let r = icp(&m, &moved, 50, 1e-12).unwrap();
        assert!(r.transform.is_proper(1e-9));
        let back = apply_transform(&m, &r.transform);
        assert!(vertex_rmsd(&back, &moved) < 1e-6 * m.bbox_diagonal());
        assert!(r.rmsd_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn noisy_source_never_worsens() {
        let clean = blob();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut noisy = clean.clone();
            let scale = 0.01 * clean.bbox_diagonal();
            for p in &mut noisy.vertices {
                for c in p.iter_mut() {
                    *c += scale * rng.random_range(-1.0..1.0);
                }
            }
            let r = icp(&noisy, &clean, 50, 1e-9).unwrap();
            assert!(r.converged, "seed {seed}");
            assert!(r.iterations <= 50);
            assert!(r.rmsd <= r.rmsd_history[0]);
            assert!(r.rmsd_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let m = blob();
        assert!(icp(&m, &m, 0, 1e-6).is_err());
        assert!(icp(&m, &m, 10, 0.0).is_err());
        let line = TriangleMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            faces: vec![[0, 1, 2]],
        };
        assert!(matches!(icp(&line, &m, 10, 1e-6), Err(Error::Degenerate(_))));
        assert!(matches!(icp(&m, &line, 10, 1e-6), Err(Error::Degenerate(_))));
    }

    #[test]
    fn apply_transform_cases() {
        let cube = shapes::unit_cube();
        assert_eq!(apply_transform(&cube, &RigidTransform::IDENTITY), cube);

        let shifted = apply_transform(&cube, &RigidTransform::translation([10.0, 0.0, 0.0]));
        for (p, q) in shifted.vertices.iter().zip(&cube.vertices) {
            assert_eq!(p[0], q[0] + 10.0);
            assert_eq!((p[1], p[2]), (q[1], q[2]));
        }
        assert!((mesh_volume(&shifted).unwrap() - 1.0).abs() < 1e-12);

        let quarter = RigidTransform::from_axis_angle([0.0, 0.0, 1.0], PI / 2.0, [0.0; 3]);
        let p = quarter.apply([1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn inverse_and_compose() {
        let t = RigidTransform::from_axis_angle([1.0, 2.0, 3.0], 0.7, [4.0, -1.0, 2.5]);
        let id = t.compose(&t.inverse());
        let p = [3.0, -7.0, 11.0];
        let q = id.apply(p);
        for i in 0..3 {
            assert!((p[i] - q[i]).abs() < 1e-12);
        }
        assert!(t.is_proper(1e-12));
    }

    #[test]
    fn transform_json_layout() {
        let t = RigidTransform::from_axis_angle([0.0, 0.0, 1.0], 0.3, [1.0, 2.0, 3.0]);
        let v: serde_json::Value = serde_json::to_value(t).unwrap();
        assert_eq!(v["rotation"].as_array().unwrap().len(), 9);
        assert_eq!(v["rotation"][1].as_f64().unwrap(), t.rotation[0][1]);
        assert_eq!(v["translation"][2].as_f64().unwrap(), 3.0);
        let back: RigidTransform = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn reference_cases() {
        let one = [subject("B", 170.0, 70.0, 50.0)];
        assert_eq!(select_reference(&one).unwrap().subject_id, "B");

        let three = [
            subject("a", 150.0, 70.0, 50.0),
            subject("b", 170.0, 70.0, 50.0),
            subject("c", 190.0, 70.0, 50.0),
        ];
        let r = select_reference(&three).unwrap();
        assert_eq!(r.subject_id, "b");
        assert!(!r.degenerate);

        let same = [subject("z", 1.0, 1.0, 1.0), subject("y", 1.0, 1.0, 1.0)];
        let r = select_reference(&same).unwrap();
        assert_eq!(r.subject_id, "y");
        assert!(r.degenerate);

        assert!(select_reference(&[]).is_err());
    }

    #[test]
    fn reference_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cohort: Vec<SubjectLabels> = (0..100)
            .map(|i| {
                subject(
                    &format!("S{i:03}"),
                    rng.random_range(1500.0..1900.0),
                    rng.random_range(50.0..110.0),
                    rng.random_range(45.0..80.0),
                )
            })
            .collect();
        // Oracle: z-scores with the sample standard deviation, which ranks
        // subjects identically.
        let cols: Vec<Vec<f64>> = vec![
            cohort.iter().map(|s| s.height_mm).collect(),
            cohort.iter().map(|s| s.weight_kg).collect(),
            cohort.iter().map(|s| s.age_years).collect(),
        ];
        let stats: Vec<(f64, f64)> = cols
            .iter()
            .map(|c| {
                let m = c.iter().sum::<f64>() / c.len() as f64;
                let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64;
                (m, v.sqrt())
            })
            .collect();
        let mut best = (f64::INFINITY, 0);
        for i in 0..cohort.len() {
            let d: f64 = (0..3).map(|k| ((cols[k][i] - stats[k].0) / stats[k].1).powi(2)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        assert_eq!(select_reference(&cohort).unwrap().subject_id, cohort[best.1].subject_id);
    }

    proptest! {
        #[test]
        fn rigid_maps_preserve_distances(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.0f64..3.0,
            t in prop::array::uniform3(-100.0f64..100.0),
        ) {
            prop_assume!(axis.iter().map(|a| a * a).sum::<f64>() > 1e-3);
            let tf = RigidTransform::from_axis_angle(axis, angle, t);
            let m = blob();
            let moved = apply_transform(&m, &tf);
            for (i, j) in [(0usize, 5usize), (3, 100), (17, 400), (50, 641)] {
                let d0: f64 = (0..3).map(|k| (m.vertices[i][k] - m.vertices[j][k]).powi(2)).sum::<f64>().sqrt();
                let d1: f64 = (0..3).map(|k| (moved.vertices[i][k] - moved.vertices[j][k]).powi(2)).sum::<f64>().sqrt();
                prop_assert!((d0 - d1).abs() <= 1e-9 * d0);
            }
        }
    }
}
