//! Synthetic bodies with analytic fat labels.
//!
//! A body is a superellipsoid torso, a radially modulated subcutaneous shell
//! around it, and capsule limbs. A visceral ellipsoid sits inside the torso.
//! All geometry lives in a body frame (mm) whose origin is placed at the grid
//! centre during voxelization: x lateral, y anterior (+) / posterior (-),
//! z superior.
//!
//! The shell is star-shaped about the torso centre: along a unit direction
//! `u` it spans radii `[R(u), R(u) + t(u)]`, where `R` is the torso radial
//! function and `t` the thickness field. Its volume is
//! `∫ ((R + t)³ - R³) / 3 dΩ`, evaluated by quadrature.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::VoxelVolume;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(Error::InvalidInput(format!("unknown sex tag {other:?}"))),
        }
    }
}

/// `Σ |(p_i - c_i) / a_i|^n ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Superellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub exponent: f64,
}

impl Superellipsoid {
    fn level(&self, d: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| (d[i] / self.semi_axes[i]).abs().powf(self.exponent))
            .sum()
    }

    /// Distance from the centre to the surface along unit direction `u`.
    pub fn radial(&self, u: [f64; 3]) -> f64 {
        self.level(u).powf(-1.0 / self.exponent)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(sub(p, self.center)) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl Capsule {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let ab = sub(self.b, self.a);
        let ap = sub(p, self.a);
        let t = (dot(ap, ab) / dot(ab, ab)).clamp(0.0, 1.0);
        let q = [
            self.a[0] + t * ab[0],
            self.a[1] + t * ab[1],
            self.a[2] + t * ab[2],
        ];
        let d = sub(p, q);
        dot(d, d) <= self.radius * self.radius
    }

    pub fn volume(&self) -> f64 {
        let l = norm(sub(self.b, self.a));
        PI * self.radius * self.radius * l + 4.0 / 3.0 * PI * self.radius.powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Ellipsoid {
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.semi_axes.iter().product::<f64>()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = sub(p, self.center);
        (0..3).map(|i| (d[i] / self.semi_axes[i]).powi(2)).sum::<f64>() <= 1.0
    }
}

/// Radial shell thickness `base · (1 + m0·u_y + m1·u_z + m2·(u_x² − u_y²))`.
///
/// Each modulation term is bounded by 1 in magnitude on the unit sphere, so
/// `Σ|m_i| < 1` keeps the thickness strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellField {
    pub base_mm: f64,
    pub modulation: [f64; 3],
}

impl ShellField {
    pub fn thickness(&self, u: [f64; 3]) -> f64 {
        let [m0, m1, m2] = self.modulation;
        self.base_mm * (1.0 + m0 * u[1] + m1 * u[2] + m2 * (u[0] * u[0] - u[1] * u[1]))
    }

    pub fn max_thickness(&self) -> f64 {
        self.base_mm * (1.0 + self.modulation.iter().map(|m| m.abs()).sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBodySpec {
    pub subject_id: String,
    pub seed: u64,
    pub torso: Superellipsoid,
    pub limbs: Vec<Capsule>,
    pub visceral: Ellipsoid,
    pub shell: ShellField,
    pub sex: Sex,
    pub height_mm: f64,
    pub weight_kg: f64,
    pub age_years: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLabels {
    pub subject_id: String,
    pub vat_mm3: f64,
    pub asat_mm3: f64,
    pub sex: Sex,
    pub height_mm: f64,
    pub weight_kg: f64,
    pub age_years: f64,
}

const CONTAINMENT_SAMPLES: usize = 4096;

impl SyntheticBodySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("{}: {what}", self.subject_id)));
        if self.torso.semi_axes.iter().any(|&a| !(a > 0.0)) || !(self.torso.exponent >= 1.0) {
            return bad("torso needs positive semi-axes and exponent >= 1");
        }
        if self.visceral.semi_axes.iter().any(|&a| !(a > 0.0)) {
            return bad("visceral semi-axes must be positive");
        }
        if self.limbs.iter().any(|l| !(l.radius > 0.0)) {
            return bad("limb radius must be positive");
        }
        if !(self.shell.base_mm > 0.0)
            || self.shell.modulation.iter().map(|m| m.abs()).sum::<f64>() >= 1.0
        {
            return bad("shell thickness must be strictly positive everywhere");
        }
        // The visceral surface must lie strictly inside the torso.
        for u in fibonacci_sphere(CONTAINMENT_SAMPLES) {
            let v = &self.visceral;
            let p = [
                v.center[0] + v.semi_axes[0] * u[0],
                v.center[1] + v.semi_axes[1] * u[1],
                v.center[2] + v.semi_axes[2] * u[2],
            ];
            if self.torso.level(sub(p, self.torso.center)) >= 1.0 {
                return Err(Error::Containment(format!(
                    "{}: visceral ellipsoid leaves the torso near {p:?}",
                    self.subject_id
                )));
            }
        }
        Ok(())
    }

    /// Inside torso ∪ shell.
    fn in_trunk(&self, p: [f64; 3]) -> bool {
        let d = sub(p, self.torso.center);
        let reach = self.shell.max_thickness();
        if (0..3).any(|i| d[i].abs() > self.torso.semi_axes[i] + reach) {
            return false;
        }
        let level = self.torso.level(d);
        if level <= 1.0 {
            return true;
        }
        // The level function is homogeneous of degree n, so the surface
        // radius along d is |d|·level^(-1/n).
        let r = norm(d);
        let u = [d[0] / r, d[1] / r, d[2] / r];
        r * (1.0 - level.powf(-1.0 / self.torso.exponent)) <= self.shell.thickness(u)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.in_trunk(p) || self.limbs.iter().any(|l| l.contains(p))
    }

    /// Axis-aligned bounds of the body in the body frame.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let reach = self.shell.max_thickness();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for i in 0..3 {
            lo[i] = self.torso.center[i] - self.torso.semi_axes[i] - reach;
            hi[i] = self.torso.center[i] + self.torso.semi_axes[i] + reach;
        }
        for l in &self.limbs {
            for i in 0..3 {
                lo[i] = lo[i].min(l.a[i].min(l.b[i]) - l.radius);
                hi[i] = hi[i].max(l.a[i].max(l.b[i]) + l.radius);
            }
        }
        (lo, hi)
    }

    /// Subcutaneous shell volume by midpoint quadrature over the sphere with
    /// `n_theta × 2·n_theta` cells.
    pub fn shell_volume(&self, n_theta: usize) -> f64 {
        self.radial_integral(n_theta, |r, t| ((r + t).powi(3) - r.powi(3)) / 3.0)
    }

    /// Volume enclosed by the outer shell surface.
    pub fn trunk_volume(&self, n_theta: usize) -> f64 {
        self.radial_integral(n_theta, |r, t| (r + t).powi(3) / 3.0)
    }

    fn radial_integral(&self, n_theta: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
        // The torso radius is symmetric under each axis reflection, so it is
        // evaluated once per octant; the shell thickness is not.
        let n_theta = n_theta.next_multiple_of(2);
        let n_phi = 2 * n_theta;
        let d_theta = PI / n_theta as f64;
        let d_phi = 2.0 * PI / n_phi as f64;
        let phis: Vec<(f64, f64)> = (0..n_phi / 4)
            .map(|j| ((j as f64 + 0.5) * d_phi).sin_cos())
            .collect();
        let mut total = 0.0;
        for i in 0..n_theta / 2 {
            let (st, ct) = ((i as f64 + 0.5) * d_theta).sin_cos();
            let mut ring = 0.0;
            for &(sp, cp) in &phis {
                let u = [st * cp, st * sp, ct];
                let r = self.torso.radial(u);
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            ring += f(r, self.shell.thickness([sx * u[0], sy * u[1], sz * u[2]]));
                        }
                    }
                }
            }
            total += ring * st;
        }
        total * d_theta * d_phi
    }

    fn outer_radius_bound(&self) -> f64 {
        let a = self.torso.semi_axes;
        a[0].max(a[1]).max(a[2]) * 3f64.sqrt() + self.shell.max_thickness()
    }
}

/// Quadrature resolution for the shell label: at least four samples per
/// voxel along the outermost great circle, never fewer than 512 rings.
fn label_resolution(spec: &SyntheticBodySpec, spacing: [f64; 3]) -> usize {
    let h = spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = (4.0 * PI * spec.outer_radius_bound() / h).ceil() as usize;
    n.max(512)
}

/// World position of voxel `(x, y, z)` in the body frame: the grid centre maps
/// to the origin.
fn voxel_to_body(dims: [usize; 3], spacing: [f64; 3], idx: [usize; 3]) -> [f64; 3] {
    let mut p = [0.0; 3];
    for i in 0..3 {
        p[i] = (idx[i] as f64 - (dims[i] as f64 - 1.0) / 2.0) * spacing[i];
    }
    p
}

fn check_fits(spec: &SyntheticBodySpec, dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    let (lo, hi) = spec.bounding_box();
    for i in 0..3 {
        let half = ((dims[i] as f64 - 1.0) / 2.0 - 2.0) * spacing[i];
        if lo[i] < -half || hi[i] > half {
            return Err(Error::InvalidInput(format!(
                "{}: grid {:?} at spacing {:?} is too small for the body (need a 2-voxel margin)",
                spec.subject_id, dims, spacing
            )));
        }
    }
    Ok(())
}

fn voxelize(dims: [usize; 3], spacing: [f64; 3], inside: impl Fn([f64; 3]) -> bool) -> Result<VoxelVolume> {
    let mut v = VoxelVolume::new(dims, spacing)?;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if inside(voxel_to_body(dims, spacing, [x, y, z])) {
                    v.set(x, y, z, true);
                }
            }
        }
    }
    Ok(v)
}

/// Voxelize a body and compute its labels.
///
/// `vat_mm3` is the closed-form ellipsoid volume. `asat_mm3` is the shell
/// volume integrated at a resolution tied to (and finer than) the grid.
pub fn generate_synthetic_body(
    spec: &SyntheticBodySpec,
    dims: [usize; 3],
    spacing: [f64; 3],
) -> Result<(VoxelVolume, SubjectLabels)> {
    spec.validate()?;
    check_fits(spec, dims, spacing)?;
    let volume = voxelize(dims, spacing, |p| spec.contains(p))?;
    let labels = SubjectLabels {
        subject_id: spec.subject_id.clone(),
        vat_mm3: spec.visceral.volume(),
        asat_mm3: spec.shell_volume(label_resolution(spec, spacing)),
        sex: spec.sex,
        height_mm: spec.height_mm,
        weight_kg: spec.weight_kg,
        age_years: spec.age_years,
    };
    Ok((volume, labels))
}

/// Voxelization of the visceral ellipsoid alone, on the same grid placement
/// as [`generate_synthetic_body`].
pub fn visceral_mask(spec: &SyntheticBodySpec, dims: [usize; 3], spacing: [f64; 3]) -> Result<VoxelVolume> {
    check_fits(spec, dims, spacing)?;
    voxelize(dims, spacing, |p| spec.visceral.contains(p))
}

/// Smallest centred grid holding every body with `margin` empty voxels.
pub fn cohort_grid<'a>(
    specs: impl IntoIterator<Item = &'a SyntheticBodySpec>,
    spacing: [f64; 3],
    margin: usize,
) -> [usize; 3] {
    let mut reach = [0.0f64; 3];
    for s in specs {
        let (lo, hi) = s.bounding_box();
        for i in 0..3 {
            reach[i] = reach[i].max(-lo[i]).max(hi[i]);
        }
    }
    let mut dims = [0; 3];
    for i in 0..3 {
        dims[i] = 2 * ((reach[i] / spacing[i]).ceil() as usize + margin) + 1;
    }
    dims
}

/// Draw one subject. Subjects are independent streams of the cohort seed, so
/// subject `i` does not depend on how many others are drawn.
///
/// The two sexes use different parameter distributions: visceral fraction
/// is higher for M, subcutaneous thickness higher for F.
pub fn sample_body_spec(seed: u64, index: u64) -> SyntheticBodySpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut normal = |mean: f64, sd: f64| Normal::new(mean, sd).unwrap().sample(&mut rng);

    // Draw order is fixed; changing it changes every cohort.
    let coin: f64 = normal(0.0, 1.0);
    let sex = if coin < 0.0 { Sex::F } else { Sex::M };
    let male = sex == Sex::M;

    let scale = normal(if male { 1.04 } else { 0.96 }, 0.04).clamp(0.85, 1.15);
    let a0 = 105.0 * scale * (1.0 + normal(0.0, 0.01));
    let b0 = 72.0 * scale * (1.0 + normal(0.0, 0.01));
    let c = 205.0 * scale * (1.0 + normal(0.0, 0.01));
    let exponent = normal(2.5, 0.05).clamp(2.2, 2.8);

    let visceral_level = normal(if male { 0.62 } else { 0.45 }, 0.12).clamp(0.2, 0.9);
    let visceral = Ellipsoid {
        center: [0.0, 0.0, -0.1 * c],
        semi_axes: [
            0.62 * a0 * visceral_level,
            0.70 * b0 * visceral_level,
            0.42 * c * visceral_level,
        ],
    };
    // Visceral fat pushes the abdomen out, mostly anteriorly.
    let torso = Superellipsoid {
        center: [0.0; 3],
        semi_axes: [a0 + 0.5 * visceral.semi_axes[0], b0 + 1.3 * visceral.semi_axes[1], c],
        exponent,
    };

    let base_mm = normal(if male { 14.0 } else { 24.0 }, 4.0).clamp(5.0, 40.0);
    let shell = ShellField {
        base_mm,
        modulation: [normal(0.30, 0.015), normal(-0.15, 0.015), normal(0.10, 0.015)],
    };

    // Limbs carry subcutaneous fat too.
    let a = torso.semi_axes[0];
    let mut limbs = Vec::with_capacity(4);
    for side in [-1.0, 1.0] {
        limbs.push(Capsule {
            a: [side * 0.70 * a, 0.0, 0.62 * c],
            b: [side * (a + 0.8 * base_mm + 95.0 * scale), 0.0, -0.30 * c],
            radius: 32.0 * scale + 0.4 * base_mm,
        });
    }
    for side in [-1.0, 1.0] {
        limbs.push(Capsule {
            a: [side * 0.50 * a0, 0.0, -0.55 * c],
            b: [side * 0.62 * a0, 0.0, -c - 230.0 * scale],
            radius: 0.34 * a0 + 0.6 * base_mm,
        });
    }

    let height_mm = 1700.0 * scale + normal(0.0, 15.0);
    let age_years = (rng.random_range(45.0..80.0f64) * 10.0).round() / 10.0;

    let mut spec = SyntheticBodySpec {
        subject_id: format!("S{index:05}"),
        seed,
        torso,
        limbs,
        visceral,
        shell,
        sex,
        height_mm,
        weight_kg: 0.0,
        age_years,
    };
    let volume = spec.trunk_volume(128) + spec.limbs.iter().map(Capsule::volume).sum::<f64>();
    spec.weight_kg = 3.6e-6 * volume + Normal::new(0.0, 2.0).unwrap().sample(&mut rng);
    spec
}

fn fibonacci_sphere(n: usize) -> impl Iterator<Item = [f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        [r * phi.cos(), r * phi.sin(), z]
    })
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
