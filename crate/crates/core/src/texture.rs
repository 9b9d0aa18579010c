//! Rotation algebra, cubic-symmetrized generalized spherical harmonics at
//! l = 4, and pole-figure densities.
//!
//! Conventions used throughout the crate:
//!
//! * Orientations are Bunge (ZXZ) Euler angles `(phi1, Phi, phi2)`.
//! * [`euler_to_rotation`] returns the *passive* Bunge matrix
//!   `g = Rz(phi2) * Rx(Phi) * Rz(phi1)` with `Rz(a) = [[c, s, 0], [-s, c, 0], [0, 0, 1]]`.
//!   It maps sample-frame components to crystal-frame components, so a crystal
//!   direction `c` points along `g^T c` in the sample frame.
//! * Crystal symmetry acts on the left: `S * g` for `S` in the cubic group.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use nalgebra::{Complex, Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mve::Mve;
use crate::rng;

/// Harmonic degree of the expansion.
pub const GSH_DEGREE: i32 = 4;
/// Number of basis functions (n = -4..=4).
pub const GSH_TERMS: usize = 9;

const CUBIC_M0: f64 = 0.763_762_615_825_973_4; // sqrt(7/12)
const CUBIC_M4: f64 = 0.456_435_464_587_638_45; // sqrt(5/24)

/// Bunge Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub phi1: f64,
    pub big_phi: f64,
    pub phi2: f64,
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        phi1: 0.0,
        big_phi: 0.0,
        phi2: 0.0,
    };

    /// Builds an orientation and folds the angles into
    /// `phi1, phi2 in [0, 2pi)`, `Phi in [0, pi]` without changing the rotation.
    pub fn new(phi1: f64, big_phi: f64, phi2: f64) -> Self {
        let mut p = big_phi.rem_euclid(TAU);
        let (mut a, mut b) = (phi1, phi2);
        if p > PI {
            // Rx(-t) = Rz(pi) Rx(t) Rz(pi)
            p = TAU - p;
            a += PI;
            b += PI;
        }
        Orientation {
            phi1: wrap_angle(a),
            big_phi: p,
            phi2: wrap_angle(b),
        }
    }

    pub fn is_canonical(&self) -> bool {
        (0.0..TAU).contains(&self.phi1)
            && (0.0..=PI).contains(&self.big_phi)
            && (0.0..TAU).contains(&self.phi2)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.phi1, self.big_phi, self.phi2]
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Proper orthogonal 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Orthogonality tolerance accepted by [`RotationMatrix::from_matrix`].
    pub const TOLERANCE: f64 = 1e-9;

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = orthogonality_error(&m);
        if err > Self::TOLERANCE || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotARotation(err));
        }
        Ok(RotationMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }
}

/// Max of `|R^T R - I|` entries and `|det R - 1|`.
pub fn orthogonality_error(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    let off = gram.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    off.max((m.determinant() - 1.0).abs())
}

/// Passive Bunge matrix `g = Rz(phi2) Rx(Phi) Rz(phi1)`.
pub fn euler_to_rotation(o: &Orientation) -> RotationMatrix {
    let (s1, c1) = o.phi1.sin_cos();
    let (s, c) = o.big_phi.sin_cos();
    let (s2, c2) = o.phi2.sin_cos();
    RotationMatrix(Matrix3::new(
        c1 * c2 - s1 * s2 * c,
        s1 * c2 + c1 * s2 * c,
        s2 * s,
        -c1 * s2 - s1 * c2 * c,
        -s1 * s2 + c1 * c2 * c,
        c2 * s,
        s1 * s,
        -c1 * s,
        c,
    ))
}

/// Inverse of [`euler_to_rotation`]. At the gimbal points `Phi in {0, pi}`
/// the whole in-plane angle is assigned to `phi1` and `phi2 = 0`.
pub fn rotation_to_euler(r: &RotationMatrix) -> Orientation {
    let g = &r.0;
    let big_phi = g[(2, 2)].clamp(-1.0, 1.0).acos();
    if big_phi.sin() > 1e-10 {
        let phi1 = g[(2, 0)].atan2(-g[(2, 1)]);
        let phi2 = g[(0, 2)].atan2(g[(1, 2)]);
        Orientation::new(phi1, big_phi, phi2)
    } else if g[(2, 2)] > 0.0 {
        Orientation::new(g[(0, 1)].atan2(g[(0, 0)]), 0.0, 0.0)
    } else {
        Orientation::new(g[(0, 1)].atan2(g[(0, 0)]), PI, 0.0)
    }
}

/// The 24 proper rotations of the cubic point group (signed permutation
/// matrices with determinant +1), identity first.
pub fn cubic_rotations() -> &'static [Matrix3<f64>; 24] {
    static GROUP: OnceLock<[Matrix3<f64>; 24]> = OnceLock::new();
    GROUP.get_or_init(|| {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::with_capacity(24);
        for perm in PERMS {
            for signs in 0..8u32 {
                let mut m = Matrix3::zeros();
                for (row, &col) in perm.iter().enumerate() {
                    m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
                }
                if m.determinant() > 0.0 {
                    out.push(m);
                }
            }
        }
        out.try_into().expect("24 proper cubic rotations")
    })
}

/// Fiber texture parameters: crystal axis `c` is carried onto sample axis `s`,
/// then each Euler angle is perturbed by `Unif(-spread_deg, spread_deg)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberTexture {
    pub crystal_axis: [f64; 3],
    pub sample_axis: [f64; 3],
    pub spread_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TextureSpec {
    Uniform,
    Fiber(FiberTexture),
}

impl TextureSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TextureSpec::Uniform => "uniform",
            TextureSpec::Fiber(_) => "fiber",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TextureSpec::Fiber(f) = self {
            unit_axis(f.crystal_axis)?;
            unit_axis(f.sample_axis)?;
            if !(f.spread_deg >= 0.0 && f.spread_deg < 180.0) {
                return Err(Error::InvalidParameter(format!(
                    "fiber spread {} deg outside [0, 180)",
                    f.spread_deg
                )));
            }
        }
        Ok(())
    }
}

fn unit_axis(a: [f64; 3]) -> Result<Unit<Vector3<f64>>> {
    let v = Vector3::from(a);
    if !v.iter().all(|x| x.is_finite()) || (v.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitAxis(a));
    }
    Ok(Unit::new_normalize(v))
}

/// Haar-uniform orientation from a uniform random unit quaternion.
pub fn uniform_orientation<R: Rng + ?Sized>(rng: &mut R) -> Orientation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    );
    let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    rotation_to_euler(&RotationMatrix(m))
}

/// Orientation whose crystal axis `c` lies along sample axis `s`, spun by
/// `spin` radians about `s`.
pub fn fiber_orientation(crystal_axis: [f64; 3], sample_axis: [f64; 3], spin: f64) -> Result<Orientation> {
    let c = unit_axis(crystal_axis)?;
    let s = unit_axis(sample_axis)?;
    // active crystal -> sample rotation A with A c = s
    let align = Rotation3::rotation_between(&c, &s).unwrap_or_else(|| {
        // antiparallel: half turn about any axis normal to c
        let helper = if c.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        Rotation3::from_axis_angle(&Unit::new_normalize(c.cross(&helper)), PI)
    });
    let active = Rotation3::from_axis_angle(&s, spin) * align;
    Ok(rotation_to_euler(&RotationMatrix(active.into_inner().transpose())))
}

/// Adds independent `Unif(-spread_deg, spread_deg)` offsets to the three angles.
pub fn perturb_orientation<R: Rng + ?Sized>(o: &Orientation, spread_deg: f64, rng: &mut R) -> Orientation {
    if spread_deg <= 0.0 {
        return *o;
    }
    let w = spread_deg.to_radians();
    let mut d = || rng.random_range(-w..w);
    Orientation::new(o.phi1 + d(), o.big_phi + d(), o.phi2 + d())
}

pub fn sample_orientation<R: Rng + ?Sized>(spec: &TextureSpec, rng: &mut R) -> Result<Orientation> {
    match spec {
        TextureSpec::Uniform => Ok(uniform_orientation(rng)),
        TextureSpec::Fiber(f) => {
            let spin = rng.random_range(0.0..TAU);
            let o = fiber_orientation(f.crystal_axis, f.sample_axis, spin)?;
            Ok(perturb_orientation(&o, f.spread_deg, rng))
        }
    }
}

// ---------------------------------------------------------------------------
// Generalized spherical harmonics
// ---------------------------------------------------------------------------

/// Nine complex values indexed by `n = -4..=4` (slot `n + 4`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GshVector(pub [Complex<f64>; GSH_TERMS]);

impl GshVector {
    pub fn get(&self, n: i32) -> Complex<f64> {
        self.0[(n + GSH_DEGREE) as usize]
    }

    pub fn conj(&self) -> GshVector {
        GshVector(self.0.map(|c| c.conj()))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |a, c| a.max(c.norm()))
    }

    /// `[Re_-4 .. Re_4, Im_-4 .. Im_4]`
    pub fn to_real_parts(&self) -> [f64; 2 * GSH_TERMS] {
        let mut out = [0.0; 2 * GSH_TERMS];
        for (i, c) in self.0.iter().enumerate() {
            out[i] = c.re;
            out[GSH_TERMS + i] = c.im;
        }
        out
    }
}

fn factorial(n: i32) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Wigner little-d matrix `d^4_{mn}(beta)` from the explicit factorial series;
/// entry `[m + 4][n + 4]`.
pub fn wigner_d4(beta: f64) -> [[f64; GSH_TERMS]; GSH_TERMS] {
    let j = GSH_DEGREE;
    let (sh, ch) = (beta / 2.0).sin_cos();
    let mut d = [[0.0; GSH_TERMS]; GSH_TERMS];
    for m in -j..=j {
        for n in -j..=j {
            let pre = (factorial(j + m) * factorial(j - m) * factorial(j + n) * factorial(j - n)).sqrt();
            let s_min = 0.max(n - m);
            let s_max = (j + n).min(j - m);
            let mut acc = 0.0;
            for s in s_min..=s_max {
                let sign = if (m - n + s) % 2 == 0 { 1.0 } else { -1.0 };
                let den = factorial(j + n - s) * factorial(s) * factorial(m - n + s) * factorial(j - m - s);
                acc += sign / den * ch.powi(2 * j + n - m - 2 * s) * sh.powi(m - n + 2 * s);
            }
            d[(m + j) as usize][(n + j) as usize] = pre * acc;
        }
    }
    d
}

/// Cubic-symmetrized basis `T^{1n}_4(g) = sum_m A_m e^{i m phi2} d_{mn}(Phi) e^{i n phi1}`
/// with `A_0 = sqrt(7/12)`, `A_{+-4} = sqrt(5/24)`.
pub fn gsh_basis(o: &Orientation) -> GshVector {
    let d = wigner_d4(o.big_phi);
    let mut out = [Complex::new(0.0, 0.0); GSH_TERMS];
    for (slot, value) in out.iter_mut().enumerate() {
        let n = slot as i32 - GSH_DEGREE;
        let right = Complex::from_polar(1.0, n as f64 * o.phi1);
        let mut acc = Complex::new(0.0, 0.0);
        for (m, a) in [(-4, CUBIC_M4), (0, CUBIC_M0), (4, CUBIC_M4)] {
            let left = Complex::from_polar(1.0, m as f64 * o.phi2);
            acc += left * (a * d[(m + GSH_DEGREE) as usize][slot]);
        }
        *value = acc * right;
    }
    GshVector(out)
}

/// `(2l + 1) * sum_i w_i conj(T(g_i)) / sum_i w_i`.
pub fn gsh_weighted_mean(orientations: &[Orientation], weights: &[f64]) -> GshVector {
    let total: f64 = weights.iter().sum();
    let mut acc = [Complex::new(0.0, 0.0); GSH_TERMS];
    for (o, &w) in orientations.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let b = gsh_basis(o);
        for (a, v) in acc.iter_mut().zip(b.0) {
            *a += v.conj() * w;
        }
    }
    let scale = (2 * GSH_DEGREE + 1) as f64 / total;
    GshVector(acc.map(|c| c * scale))
}

/// Volume-averaged GSH coefficients of an MVE.
pub fn gsh_coefficients(mve: &Mve) -> GshVector {
    let weights: Vec<f64> = mve.grain_voxel_counts().iter().map(|&c| c as f64).collect();
    gsh_weighted_mean(mve.orientations(), &weights)
}

const PROBE_SAMPLES: usize = 10_000;
const PROBE_SEED: u64 = 0x6a09_e667_f3bc_c908;
const ZERO_TOLERANCE: f64 = 1e-10;

struct BasisProbe {
    retained: Vec<usize>,
    single_crystal_max: f64,
}

fn basis_probe() -> &'static BasisProbe {
    static PROBE: OnceLock<BasisProbe> = OnceLock::new();
    PROBE.get_or_init(|| {
        let mut rng = rng::rng_from(PROBE_SEED);
        let mut max_parts = [0.0f64; 2 * GSH_TERMS];
        let mut max_abs = 0.0f64;
        for _ in 0..PROBE_SAMPLES {
            let b = gsh_basis(&uniform_orientation(&mut rng));
            max_abs = max_abs.max(b.max_abs());
            for (m, v) in max_parts.iter_mut().zip(b.to_real_parts()) {
                *m = m.max(v.abs());
            }
        }
        BasisProbe {
            retained: (0..2 * GSH_TERMS).filter(|&i| max_parts[i] >= ZERO_TOLERANCE).collect(),
            single_crystal_max: max_abs,
        }
    })
}

/// Indices into [`GshVector::to_real_parts`] that are not identically zero
/// over SO(3), detected on a fixed probe of uniform orientations.
pub fn retained_components() -> &'static [usize] {
    &basis_probe().retained
}

/// Largest `|T^{1n}_4(g)|` observed on the probe set.
pub fn single_crystal_max() -> f64 {
    basis_probe().single_crystal_max
}

/// Retained real/imaginary parts of a GSH vector.
pub fn retained_parts(v: &GshVector) -> Vec<f64> {
    let parts = v.to_real_parts();
    retained_components().iter().map(|&i| parts[i]).collect()
}

// ---------------------------------------------------------------------------
// Pole figures
// ---------------------------------------------------------------------------

/// Upper-hemisphere pole density on a cylindrical equal-area grid: rows are
/// equal bins of `cos(polar)` in `[0, 1]`, columns equal bins of azimuth in
/// `[0, 2pi)`. Every bin covers the same solid angle `2pi / resolution^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleDensity {
    pub family: [i32; 3],
    pub resolution: usize,
    /// Row-major `[polar_bin][azimuth_bin]`, multiples of random.
    pub density: Vec<f64>,
}

impl PoleDensity {
    pub fn at(&self, polar_bin: usize, azimuth_bin: usize) -> f64 {
        self.density[polar_bin * self.resolution + azimuth_bin]
    }

    /// `(azimuth, polar)` of a bin center, radians.
    pub fn bin_center(&self, polar_bin: usize, azimuth_bin: usize) -> (f64, f64) {
        let r = self.resolution as f64;
        let z = (polar_bin as f64 + 0.5) / r;
        (TAU * (azimuth_bin as f64 + 0.5) / r, z.acos())
    }

    /// Equal-area bins, so the solid-angle-weighted mean is the plain mean.
    pub fn weighted_mean(&self) -> f64 {
        self.density.iter().sum::<f64>() / self.density.len() as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["azimuth", "polar", "density"])?;
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                let (az, pol) = self.bin_center(i, j);
                w.write_record([az.to_string(), pol.to_string(), self.at(i, j).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Distinct crystal directions equivalent to `family` under the cubic group,
/// including antipodes.
pub fn equivalent_directions(family: [i32; 3]) -> Result<Vec<Vector3<f64>>> {
    let v = Vector3::new(family[0] as f64, family[1] as f64, family[2] as f64);
    if v.norm() == 0.0 {
        return Err(Error::InvalidParameter("pole family must be nonzero".into()));
    }
    let v = v.normalize();
    let mut out: Vec<Vector3<f64>> = Vec::new();
    for s in cubic_rotations() {
        for w in [s * v, -(s * v)] {
            if !out.iter().any(|u| (u - w).norm() < 1e-9) {
                out.push(w);
            }
        }
    }
    Ok(out)
}

/// Folds a unit vector onto the closed upper hemisphere; equator points are
/// mapped to azimuth in `[0, pi)`.
fn fold_upper(v: Vector3<f64>) -> Vector3<f64> {
    const EQ: f64 = 1e-12;
    if v.z < -EQ {
        return -v;
    }
    if v.z.abs() <= EQ {
        let flat = Vector3::new(v.x, v.y, 0.0);
        let az = v.y.atan2(v.x);
        if !(-EQ..PI - EQ).contains(&az) {
            return -flat;
        }
        return flat;
    }
    v
}

pub fn pole_density(mve: &Mve, family: [i32; 3], resolution: usize) -> Result<PoleDensity> {
    if resolution < 8 {
        return Err(Error::InvalidParameter(format!(
            "pole figure resolution {resolution} < 8"
        )));
    }
    let poles = equivalent_directions(family)?;
    let mut counts = vec![0.0f64; resolution * resolution];
    let r = resolution as f64;
    for (o, &w) in mve.orientations().iter().zip(mve.grain_voxel_counts()) {
        if w == 0 {
            continue;
        }
        let to_sample = euler_to_rotation(o).matrix().transpose();
        for p in &poles {
            let v = fold_upper(to_sample * p);
            let iz = ((v.z.clamp(0.0, 1.0) * r) as usize).min(resolution - 1);
            let az = v.y.atan2(v.x).rem_euclid(TAU);
            let ia = ((az / TAU * r) as usize).min(resolution - 1);
            counts[iz * resolution + ia] += w as f64;
        }
    }
    let total: f64 = counts.iter().sum();
    let per_bin = total / counts.len() as f64;
    Ok(PoleDensity {
        family,
        resolution,
        density: counts.into_iter().map(|c| c / per_bin).collect(),
    })
}
