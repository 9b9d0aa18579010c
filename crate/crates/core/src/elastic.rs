//! Rotated cubic elasticity and the iso-strain (Taylor) stress estimate.
//!
//! Voigt order is `(11, 22, 33, 23, 13, 12)` with engineering shear strains,
//! so stiffness matrix entries equal the tensor components `C_ijkl`.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::artifact::{join, Header, Stamp};
use crate::error::{Error, Result};
use crate::mve::Mve;
use crate::texture::{euler_to_rotation, orthogonality_error, RotationMatrix};

/// Voigt index -> tensor index pair.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Ni-based superalloy constants in GPa.
pub const NI_SUPERALLOY: (f64, f64, f64) = (199.0, 128.0, 99.0);

/// Default applied macroscopic stress (MPa): uniaxial 50 MPa along z.
pub const DEFAULT_APPLIED: [f64; 6] = [0.0, 0.0, 50.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessVoigt(pub Matrix6<f64>);

impl StiffnessVoigt {
    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    /// `sum_ij C_iijj`
    pub fn bulk_invariant(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[(i, j)];
            }
        }
        s
    }

    /// `sum_ij C_ijij`
    pub fn shear_invariant(&self) -> f64 {
        (0..3).map(|i| self.0[(i, i)]).sum::<f64>() + 2.0 * (3..6).map(|i| self.0[(i, i)]).sum::<f64>()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0 - self.0.transpose()).abs().max() <= tol
    }
}

pub fn cubic_stiffness(c11: f64, c12: f64, c44: f64) -> Result<StiffnessVoigt> {
    let stable = c11 > c12.abs() && c11 + 2.0 * c12 > 0.0 && c44 > 0.0;
    if !stable || ![c11, c12, c44].iter().all(|v| v.is_finite()) {
        return Err(Error::UnstableStiffness { c11, c12, c44 });
    }
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = if i == j { c11 } else { c12 };
        }
        m[(i + 3, i + 3)] = c44;
    }
    Ok(StiffnessVoigt(m))
}

/// `2 C44 / (C11 - C12)`; 1 for an isotropic solid.
pub fn zener_ratio(c11: f64, c12: f64, c44: f64) -> f64 {
    2.0 * c44 / (c11 - c12)
}

/// Stress transformation matrix for `sigma' = R sigma R^T` in Voigt form.
pub fn bond_matrix(r: &Matrix3<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for (row, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        for (col, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
            m[(row, col)] = if k == l {
                r[(i, k)] * r[(j, l)]
            } else {
                r[(i, k)] * r[(j, l)] + r[(i, l)] * r[(j, k)]
            };
        }
    }
    m
}

/// `C'_ijkl = R_ia R_jb R_kc R_ld C_abcd`, evaluated as `M C M^T`.
pub fn rotate_stiffness(c: &StiffnessVoigt, r: &Matrix3<f64>) -> Result<StiffnessVoigt> {
    let err = orthogonality_error(r);
    if err > RotationMatrix::TOLERANCE || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotARotation(err));
    }
    let m = bond_matrix(r);
    let out = m * c.0 * m.transpose();
    Ok(StiffnessVoigt((out + out.transpose()) * 0.5))
}

/// Per-voxel Voigt stress in MPa, x-fastest voxel order.
#[derive(Debug, Clone, PartialEq)]
pub struct StressField {
    pub dims: [usize; 3],
    pub applied: [f64; 6],
    pub values: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub c11: f64,
    pub c12: f64,
    pub c44: f64,
    pub applied: [f64; 6],
    /// One periodic 3x3x3 box-filter pass over the field.
    pub smoothing: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let (c11, c12, c44) = NI_SUPERALLOY;
        OracleConfig {
            c11,
            c12,
            c44,
            applied: DEFAULT_APPLIED,
            smoothing: false,
        }
    }
}

/// Sample-frame stiffness of every grain.
pub fn grain_stiffnesses(mve: &Mve, crystal: &StiffnessVoigt) -> Result<Vec<StiffnessVoigt>> {
    mve.orientations()
        .iter()
        .map(|o| rotate_stiffness(crystal, &euler_to_rotation(o).matrix().transpose()))
        .collect()
}

/// Iso-strain estimate: `eps = mean(C)^-1 * applied`, `sigma(x) = C(x) eps`.
pub fn taylor_stress_field(mve: &Mve, applied: [f64; 6], crystal: &StiffnessVoigt) -> Result<StressField> {
    let grains = grain_stiffnesses(mve, crystal)?;
    let n = mve.n_voxels() as f64;
    let mut mean = Matrix6::zeros();
    for (c, &count) in grains.iter().zip(mve.grain_voxel_counts()) {
        mean += c.0 * (count as f64 / n);
    }
    let load = Vector6::from(applied);
    let strain = mean
        .lu()
        .solve(&load)
        .filter(|e| e.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("volume-averaged stiffness".into()))?;
    let per_grain: Vec<[f64; 6]> = grains.iter().map(|c| (c.0 * strain).into()).collect();
    let values = mve
        .grain_ids()
        .iter()
        .map(|&g| per_grain[g as usize])
        .collect();
    Ok(StressField {
        dims: mve.dims(),
        applied,
        values,
    })
}

pub fn oracle_field(mve: &Mve, config: &OracleConfig) -> Result<StressField> {
    let crystal = cubic_stiffness(config.c11, config.c12, config.c44)?;
    let field = taylor_stress_field(mve, config.applied, &crystal)?;
    Ok(if config.smoothing { box_smooth(&field) } else { field })
}

/// Periodic 3x3x3 box filter; preserves the volume average.
pub fn box_smooth(field: &StressField) -> StressField {
    let [nx, ny, nz] = field.dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut out = vec![[0.0; 6]; field.values.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = [0.0; 6];
                for dz in [nz - 1, 0, 1] {
                    for dy in [ny - 1, 0, 1] {
                        for dx in [nx - 1, 0, 1] {
                            let v = &field.values[idx((x + dx) % nx, (y + dy) % ny, (z + dz) % nz)];
                            for c in 0..6 {
                                acc[c] += v[c];
                            }
                        }
                    }
                }
                out[idx(x, y, z)] = acc.map(|a| a / 27.0);
            }
        }
    }
    StressField {
        dims: field.dims,
        applied: field.applied,
        values: out,
    }
}

pub fn von_mises(s: &[f64; 6]) -> f64 {
    let [s11, s22, s33, s23, s13, s12] = *s;
    (0.5 * ((s11 - s22).powi(2) + (s22 - s33).powi(2) + (s33 - s11).powi(2))
        + 3.0 * (s23 * s23 + s13 * s13 + s12 * s12))
        .sqrt()
}

pub const SUMMARY_LEN: usize = 13;

pub const SUMMARY_NAMES: [&str; SUMMARY_LEN] = [
    "mean_s11", "mean_s22", "mean_s33", "mean_s23", "mean_s13", "mean_s12", "std_s11", "std_s22", "std_s33",
    "std_s23", "std_s13", "std_s12", "mean_von_mises",
];

/// Component means, population standard deviations, and mean von Mises
/// stress, accumulated with Welford updates in voxel order.
pub fn field_summary(field: &StressField) -> [f64; SUMMARY_LEN] {
    let mut mean = [0.0f64; 6];
    let mut m2 = [0.0f64; 6];
    let mut vm = 0.0;
    for (i, v) in field.values.iter().enumerate() {
        let k = (i + 1) as f64;
        for c in 0..6 {
            let delta = v[c] - mean[c];
            mean[c] += delta / k;
            m2[c] += delta * (v[c] - mean[c]);
        }
        vm += (von_mises(v) - vm) / k;
    }
    let n = field.values.len().max(1) as f64;
    let mut out = [0.0; SUMMARY_LEN];
    out[..6].copy_from_slice(&mean);
    for c in 0..6 {
        out[6 + c] = (m2[c] / n).max(0.0).sqrt();
    }
    out[12] = vm;
    out
}

const FIELD_KIND: &str = "mvedoe-stress-v1";

pub fn write_field<W: Write>(out: &mut W, field: &StressField, stamp: Option<&Stamp>) -> Result<()> {
    let io = |e| Error::io("<stress>", e);
    Header::new(FIELD_KIND)
        .with("dims", join(&field.dims))
        .with("applied", join(&field.applied))
        .with("units", "MPa")
        .stamp(stamp)
        .write(out)
        .map_err(io)?;
    let mut buf = Vec::with_capacity(48 * field.values.len());
    for v in &field.values {
        for c in v {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_field<R: BufRead>(input: &mut R) -> Result<StressField> {
    let h = Header::read(input, FIELD_KIND)?;
    let dims: [usize; 3] = h
        .parse_list::<usize>("dims")?
        .try_into()
        .map_err(|_| Error::format("stress", "dims must have three entries"))?;
    let applied: [f64; 6] = h
        .parse_list::<f64>("applied")?
        .try_into()
        .map_err(|_| Error::format("stress", "applied must have six entries"))?;
    let mut payload = Vec::new();
    input
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("<stress>", e))?;
    let n: usize = dims.iter().product();
    if payload.len() != 48 * n {
        return Err(Error::format("stress", format!("payload {} bytes, expected {}", payload.len(), 48 * n)));
    }
    let values = payload
        .chunks_exact(48)
        .map(|chunk| {
            let mut v = [0.0; 6];
            for (c, b) in v.iter_mut().zip(chunk.chunks_exact(8)) {
                *c = f64::from_le_bytes(b.try_into().unwrap());
            }
            v
        })
        .collect();
    Ok(StressField { dims, applied, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mve::{generate_mve, DEFAULT_DIMS};
    use crate::rng::rng_from;
    use crate::texture::{cubic_rotations, uniform_orientation, Orientation, TextureSpec};

    fn superalloy() -> StiffnessVoigt {
        let (a, b, c) = NI_SUPERALLOY;
        cubic_stiffness(a, b, c).unwrap()
    }

    /// Full fourth-order tensor from Voigt entries.
    fn to_tensor(c: &StiffnessVoigt) -> [[[[f64; 3]; 3]; 3]; 3] {
        let voigt = |i: usize, j: usize| VOIGT_PAIRS.iter().position(|&p| p == (i.min(j), i.max(j))).unwrap();
        let mut t = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t[i][j][k][l] = c.0[(voigt(i, j), voigt(k, l))];
                    }
                }
            }
        }
        t
    }

    /// Brute-force `R_ia R_jb R_kc R_ld C_abcd` over all 81 output components.
    fn rotate_by_tensor_loop(c: &StiffnessVoigt, r: &Matrix3<f64>) -> Matrix6<f64> {
        let t = to_tensor(c);
        let mut out = Matrix6::zeros();
        for (row, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            for (col, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        for cc in 0..3 {
                            for d in 0..3 {
                                s += r[(i, a)] * r[(j, b)] * r[(k, cc)] * r[(l, d)] * t[a][b][cc][d];
                            }
                        }
                    }
                }
                out[(row, col)] = s;
            }
        }
        out
    }

    #[test]
    fn superalloy_constants_are_stable() {
        let c = superalloy();
        assert!(c.is_symmetric(0.0));
        assert!(c.0.cholesky().is_some());
        assert!((zener_ratio(199.0, 128.0, 99.0) - 198.0 / 71.0).abs() < 1e-15);
        assert!((zener_ratio(199.0, 128.0, 99.0) - 2.7887).abs() < 1e-4);
    }

    #[test]
    fn unstable_constants_rejected() {
        for (a, b, c) in [(100.0, 120.0, 50.0), (100.0, -60.0, 50.0), (100.0, 50.0, 0.0)] {
            assert!(matches!(cubic_stiffness(a, b, c), Err(Error::UnstableStiffness { .. })));
        }
    }

    #[test]
    fn identity_and_cubic_rotations_leave_stiffness_unchanged() {
        let c = superalloy();
        let same = rotate_stiffness(&c, &Matrix3::identity()).unwrap();
        assert_eq!(same, c);
        for s in cubic_rotations() {
            let r = rotate_stiffness(&c, s).unwrap();
            assert!((r.0 - c.0).abs().max() < 1e-9);
        }
    }

    #[test]
    fn isotropic_stiffness_is_rotation_invariant() {
        let c = cubic_stiffness(200.0, 100.0, 50.0).unwrap();
        let mut rng = rng_from(1);
        for _ in 0..50 {
            let r = euler_to_rotation(&uniform_orientation(&mut rng));
            let out = rotate_stiffness(&c, r.matrix()).unwrap();
            assert!((out.0 - c.0).abs().max() < 1e-9);
        }
    }

    #[test]
    fn rotation_matches_tensor_loop() {
        let c = superalloy();
        let mut rng = rng_from(2);
        for _ in 0..100 {
            let r = *euler_to_rotation(&uniform_orientation(&mut rng)).matrix();
            let fast = rotate_stiffness(&c, &r).unwrap();
            let slow = rotate_by_tensor_loop(&c, &r);
            assert!((fast.0 - slow).abs().max() < 1e-9);
            assert!((fast.bulk_invariant() - (3.0 * 199.0 + 6.0 * 128.0)).abs() < 1e-6 * 1365.0);
            assert!((fast.shear_invariant() - (3.0 * 199.0 + 6.0 * 99.0)).abs() < 1e-6 * 1191.0);
        }
    }

    #[test]
    fn non_orthogonal_rotation_rejected() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(rotate_stiffness(&superalloy(), &m), Err(Error::NotARotation(_))));
    }

    #[test]
    fn single_orientation_gives_uniform_applied_stress() {
        let m = Mve::single_crystal([8, 8, 8], Orientation::new(0.4, 1.1, 2.3));
        let f = taylor_stress_field(&m, DEFAULT_APPLIED, &superalloy()).unwrap();
        let first = f.values[0];
        assert!(f.values.iter().all(|v| *v == first));
        for c in 0..6 {
            assert!((first[c] - DEFAULT_APPLIED[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn volume_average_matches_applied_load() {
        let m = generate_mve(DEFAULT_DIMS, 8.0, &TextureSpec::Uniform, 3).unwrap();
        let load = [10.0, -5.0, 50.0, 3.0, 0.0, 7.0];
        let f = taylor_stress_field(&m, load, &superalloy()).unwrap();
        let s = field_summary(&f);
        let scale = load.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for c in 0..6 {
            assert!((s[c] - load[c]).abs() <= 1e-9 * scale);
        }
        let smoothed = box_smooth(&f);
        let s2 = field_summary(&smoothed);
        for c in 0..6 {
            assert!((s2[c] - load[c]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn anisotropy_drives_field_variance() {
        let m = generate_mve(DEFAULT_DIMS, 8.0, &TextureSpec::Uniform, 4).unwrap();
        let iso = cubic_stiffness(200.0, 100.0, 50.0).unwrap();
        let s_iso = field_summary(&taylor_stress_field(&m, DEFAULT_APPLIED, &iso).unwrap());
        let s_ani = field_summary(&taylor_stress_field(&m, DEFAULT_APPLIED, &superalloy()).unwrap());
        assert!(s_iso[8] < 1e-12 * 50.0);
        assert!(s_ani[8] > 1.0);
    }

    #[test]
    fn uniaxial_von_mises() {
        assert_eq!(von_mises(&DEFAULT_APPLIED), 50.0);
        let f = StressField {
            dims: [2, 2, 1],
            applied: DEFAULT_APPLIED,
            values: vec![DEFAULT_APPLIED; 4],
        };
        let s = field_summary(&f);
        assert_eq!(&s[..6], &DEFAULT_APPLIED);
        assert!(s[6..12].iter().all(|&v| v == 0.0));
        assert_eq!(s[12], 50.0);
    }

    #[test]
    fn summary_matches_two_pass_computation() {
        let mut rng = rng_from(5);
        use rand::Rng;
        let values: Vec<[f64; 6]> = (0..1000)
            .map(|_| std::array::from_fn(|_| rng.random_range(-100.0..100.0)))
            .collect();
        let f = StressField {
            dims: [10, 10, 10],
            applied: [0.0; 6],
            values: values.clone(),
        };
        let s = field_summary(&f);
        let n = values.len() as f64;
        for c in 0..6 {
            let mean = values.iter().map(|v| v[c]).sum::<f64>() / n;
            let var = values.iter().map(|v| (v[c] - mean).powi(2)).sum::<f64>() / n;
            assert!((s[c] - mean).abs() < 1e-12 * 100.0);
            assert!((s[6 + c] - var.sqrt()).abs() < 1e-12 * 100.0);
        }
        let vm = values.iter().map(von_mises).sum::<f64>() / n;
        assert!((s[12] - vm).abs() < 1e-12 * 100.0);
    }

    #[test]
    fn field_file_round_trip() {
        let m = generate_mve([8, 8, 8], 4.0, &TextureSpec::Uniform, 1).unwrap();
        let f = taylor_stress_field(&m, DEFAULT_APPLIED, &superalloy()).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f, None).unwrap();
        assert_eq!(read_field(&mut buf.as_slice()).unwrap(), f);
    }
}
