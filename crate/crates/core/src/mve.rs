//! Periodic voxelized Voronoi polycrystals.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{join, Header, Stamp};
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream_seed};
use crate::texture::{sample_orientation, FiberTexture, Orientation, TextureSpec};

pub const DEFAULT_DIMS: [usize; 3] = [32, 32, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MveMeta {
    /// Nominal grain diameter in voxels.
    pub target_grain_size: f64,
    pub texture: TextureSpec,
    pub seed: u64,
    /// Voronoi seeds placed, including any that captured no voxel.
    pub n_seeds: usize,
}

/// Microstructural volume element: grain label per voxel (x fastest, then y,
/// then z) plus one orientation per grain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mve {
    dims: [usize; 3],
    grain_id: Vec<u32>,
    orientations: Vec<Orientation>,
    counts: Vec<usize>,
    meta: MveMeta,
}

impl Mve {
    /// Validates that labels are contiguous `0..G` and every label occurs.
    pub fn new(dims: [usize; 3], grain_id: Vec<u32>, orientations: Vec<Orientation>, meta: MveMeta) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("dims {dims:?} must be positive")));
        }
        let n: usize = dims.iter().product();
        if grain_id.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} grain ids for {n} voxels",
                grain_id.len()
            )));
        }
        let mut counts = vec![0usize; orientations.len()];
        for &g in &grain_id {
            match counts.get_mut(g as usize) {
                Some(c) => *c += 1,
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "grain id {g} has no orientation ({} grains)",
                        orientations.len()
                    )))
                }
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidParameter(format!("grain label {empty} is unused")));
        }
        Ok(Mve {
            dims,
            grain_id,
            orientations,
            counts,
            meta,
        })
    }

    /// Single-orientation MVE.
    pub fn single_crystal(dims: [usize; 3], orientation: Orientation) -> Self {
        let n = dims.iter().product();
        let meta = MveMeta {
            target_grain_size: dims.iter().copied().min().unwrap_or(0) as f64,
            texture: TextureSpec::Uniform,
            seed: 0,
            n_seeds: 1,
        };
        Mve::new(dims, vec![0; n], vec![orientation], meta).expect("single crystal is valid")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_voxels(&self) -> usize {
        self.grain_id.len()
    }

    pub fn n_grains(&self) -> usize {
        self.orientations.len()
    }

    pub fn grain_ids(&self) -> &[u32] {
        &self.grain_id
    }

    pub fn orientations(&self) -> &[Orientation] {
        &self.orientations
    }

    pub fn grain_voxel_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn meta(&self) -> &MveMeta {
        &self.meta
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn grain_at(&self, x: usize, y: usize, z: usize) -> u32 {
        self.grain_id[self.index(x, y, z)]
    }

    pub fn orientation_at(&self, voxel: usize) -> &Orientation {
        &self.orientations[self.grain_id[voxel] as usize]
    }
}

/// Per-axis table of periodic squared distances, `[coord * k + seed]`.
fn axis_table(len: usize, coords: impl Iterator<Item = f64>) -> Vec<f64> {
    let coords: Vec<f64> = coords.collect();
    let k = coords.len();
    let l = len as f64;
    let mut t = vec![0.0; len * k];
    for c in 0..len {
        let center = c as f64 + 0.5;
        for (s, &p) in coords.iter().enumerate() {
            let d = (center - p).abs();
            let d = d.min(l - d);
            t[c * k + s] = d * d;
        }
    }
    t
}

/// Nearest seed (minimum periodic Euclidean distance from voxel centers,
/// lowest index on ties) for every voxel.
pub fn assign_voxels(dims: [usize; 3], seeds: &[[f64; 3]]) -> Vec<u32> {
    let k = seeds.len();
    let [nx, ny, nz] = dims;
    let tx = axis_table(nx, seeds.iter().map(|s| s[0]));
    let ty = axis_table(ny, seeds.iter().map(|s| s[1]));
    let tz = axis_table(nz, seeds.iter().map(|s| s[2]));
    let mut out = vec![0u32; nx * ny * nz];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        let mut yz = vec![0.0; k];
        for y in 0..ny {
            for s in 0..k {
                yz[s] = ty[y * k + s] + tz[z * k + s];
            }
            for x in 0..nx {
                let row = &tx[x * k..(x + 1) * k];
                let mut best = f64::INFINITY;
                let mut arg = 0usize;
                for s in 0..k {
                    let d = row[s] + yz[s];
                    if d < best {
                        best = d;
                        arg = s;
                    }
                }
                slab[x + nx * y] = arg as u32;
            }
        }
    });
    out
}

pub fn max_grain_size(dims: [usize; 3]) -> f64 {
    dims.iter().copied().min().unwrap_or(0) as f64 / 2.0
}

pub fn seed_count(dims: [usize; 3], target_grain_size: f64) -> usize {
    let volume: f64 = dims.iter().map(|&d| d as f64).product();
    ((volume / target_grain_size.powi(3)).round() as usize).max(1)
}

/// Periodic Voronoi MVE with `round(V / d^3)` uniformly placed seeds and one
/// orientation per grain drawn from `texture`.
pub fn generate_mve(dims: [usize; 3], target_grain_size: f64, texture: &TextureSpec, seed: u64) -> Result<Mve> {
    if dims.contains(&0) {
        return Err(Error::InvalidParameter(format!("dims {dims:?} must be positive")));
    }
    let max = max_grain_size(dims);
    if !(2.0..=max).contains(&target_grain_size) {
        return Err(Error::GrainSizeOutOfRange {
            size: target_grain_size,
            max,
            dims,
        });
    }
    texture.validate()?;
    let k = seed_count(dims, target_grain_size);
    let mut rng = rng_from(seed);
    let points: Vec<[f64; 3]> = (0..k)
        .map(|_| {
            [
                rng.random_range(0.0..dims[0] as f64),
                rng.random_range(0.0..dims[1] as f64),
                rng.random_range(0.0..dims[2] as f64),
            ]
        })
        .collect();
    let seed_orientations = (0..k)
        .map(|_| sample_orientation(texture, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let owner = assign_voxels(dims, &points);
    // seeds that captured voxels get contiguous labels in seed order
    let mut used = vec![false; k];
    for &s in &owner {
        used[s as usize] = true;
    }
    let mut label = vec![u32::MAX; k];
    let mut orientations = Vec::new();
    for s in 0..k {
        if used[s] {
            label[s] = orientations.len() as u32;
            orientations.push(seed_orientations[s]);
        }
    }
    let grain_id = owner.into_iter().map(|s| label[s as usize]).collect();
    let meta = MveMeta {
        target_grain_size,
        texture: *texture,
        seed,
        n_seeds: k,
    };
    Mve::new(dims, grain_id, orientations, meta)
}

/// Sub-volume `[origin, origin + extent)` with labels renumbered in increasing
/// order of the parent labels. Crops never wrap.
pub fn crop_subvolume(mve: &Mve, origin: [usize; 3], extent: [usize; 3]) -> Result<Mve> {
    let dims = mve.dims();
    if (0..3).any(|a| extent[a] == 0 || origin[a] + extent[a] > dims[a]) {
        return Err(Error::CropOutOfBounds { origin, extent, dims });
    }
    let mut raw = Vec::with_capacity(extent.iter().product());
    for z in origin[2]..origin[2] + extent[2] {
        for y in origin[1]..origin[1] + extent[1] {
            let start = mve.index(origin[0], y, z);
            raw.extend_from_slice(&mve.grain_id[start..start + extent[0]]);
        }
    }
    let mut remap = vec![u32::MAX; mve.n_grains()];
    for &g in &raw {
        remap[g as usize] = 0;
    }
    let mut orientations = Vec::new();
    for (g, slot) in remap.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = orientations.len() as u32;
            orientations.push(mve.orientations[g]);
        }
    }
    let grain_id = raw.into_iter().map(|g| remap[g as usize]).collect();
    Mve::new(extent, grain_id, orientations, mve.meta.clone())
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub dims: [usize; 3],
    pub grain_sizes: Vec<f64>,
    pub seeds_per_size: usize,
    pub textured_count: usize,
    /// Per-angle Euler perturbation half-width for textured MVEs.
    pub perturb_deg: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            dims: DEFAULT_DIMS,
            grain_sizes: (4..=15).map(f64::from).collect(),
            seeds_per_size: 100,
            textured_count: 5625,
            perturb_deg: 10.0,
            seed: 0,
        }
    }
}

/// What to generate for one corpus slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub index: usize,
    pub grain_size: f64,
    pub texture: TextureSpec,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn untextured_count(&self) -> usize {
        self.grain_sizes.len() * self.seeds_per_size
    }

    pub fn total(&self) -> usize {
        self.untextured_count() + self.textured_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.grain_sizes.is_empty() && self.total() > 0 {
            return Err(Error::InvalidParameter("corpus needs at least one grain size".into()));
        }
        let max = max_grain_size(self.dims);
        for &d in &self.grain_sizes {
            if !(2.0..=max).contains(&d) {
                return Err(Error::GrainSizeOutOfRange {
                    size: d,
                    max,
                    dims: self.dims,
                });
            }
        }
        if !(0.0..180.0).contains(&self.perturb_deg) {
            return Err(Error::InvalidParameter(format!(
                "perturb_deg {} outside [0, 180)",
                self.perturb_deg
            )));
        }
        Ok(())
    }

    /// Generation plan: the untextured block enumerates sizes x seeds, the
    /// textured block draws a size and a random fiber per example. Each slot's
    /// parameters depend only on (master seed, slot index).
    pub fn plan(&self) -> Vec<CorpusItem> {
        let mut items = Vec::with_capacity(self.total());
        for (a, &size) in self.grain_sizes.iter().enumerate() {
            for b in 0..self.seeds_per_size {
                let index = items.len();
                items.push(CorpusItem {
                    index,
                    grain_size: size,
                    texture: TextureSpec::Uniform,
                    seed: stream_seed(self.seed, "mve-uniform", (a * self.seeds_per_size + b) as u64),
                });
            }
        }
        for j in 0..self.textured_count {
            let mut rng = rng_from(stream_seed(self.seed, "textured-params", j as u64));
            let size = self.grain_sizes[rng.random_range(0..self.grain_sizes.len())];
            let fiber = FiberTexture {
                crystal_axis: UnitSphere.sample(&mut rng),
                sample_axis: UnitSphere.sample(&mut rng),
                spread_deg: self.perturb_deg,
            };
            let index = items.len();
            items.push(CorpusItem {
                index,
                grain_size: size,
                texture: TextureSpec::Fiber(fiber),
                seed: stream_seed(self.seed, "mve-textured", j as u64),
            });
        }
        items
    }
}

pub fn corpus_id(index: usize) -> String {
    format!("mve_{index:05}")
}

pub fn generate_item(spec: &CorpusSpec, item: &CorpusItem) -> Result<Mve> {
    generate_mve(spec.dims, item.grain_size, &item.texture, item.seed)
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Mve>> {
    spec.validate()?;
    spec.plan().par_iter().map(|item| generate_item(spec, item)).collect()
}

// ---------------------------------------------------------------------------
// Container file
// ---------------------------------------------------------------------------

const MVE_KIND: &str = "mvedoe-mve-v1";

pub fn write_mve<W: Write>(out: &mut W, mve: &Mve, stamp: Option<&Stamp>) -> Result<()> {
    let meta = mve.meta();
    let mut h = Header::new(MVE_KIND)
        .with("dims", join(&mve.dims))
        .with("grains", mve.n_grains())
        .with("seeds", meta.n_seeds)
        .with("grain_size", meta.target_grain_size)
        .with("texture", meta.texture.kind())
        .with("seed", meta.seed);
    if let TextureSpec::Fiber(f) = &meta.texture {
        h.set("fiber_crystal", join(&f.crystal_axis));
        h.set("fiber_sample", join(&f.sample_axis));
        h.set("fiber_spread_deg", f.spread_deg);
    }
    let h = h.stamp(stamp);
    let io = |e| Error::io("<mve>", e);
    h.write(out).map_err(io)?;
    let mut buf = Vec::with_capacity(4 * mve.n_voxels() + 24 * mve.n_grains());
    for &g in &mve.grain_id {
        buf.extend_from_slice(&g.to_le_bytes());
    }
    for o in &mve.orientations {
        for a in o.as_array() {
            buf.extend_from_slice(&a.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_mve<R: std::io::BufRead>(input: &mut R) -> Result<Mve> {
    let h = Header::read(input, MVE_KIND)?;
    let dims: Vec<usize> = h.parse_list("dims")?;
    let dims: [usize; 3] = dims
        .try_into()
        .map_err(|_| Error::format("mve", "dims must have three entries"))?;
    let grains: usize = h.parse_value("grains")?;
    let texture = match h.require("texture")? {
        "uniform" => TextureSpec::Uniform,
        "fiber" => {
            let axis = |key| -> Result<[f64; 3]> {
                h.parse_list::<f64>(key)?
                    .try_into()
                    .map_err(|_| Error::format("mve", format!("{key} must have three entries")))
            };
            TextureSpec::Fiber(FiberTexture {
                crystal_axis: axis("fiber_crystal")?,
                sample_axis: axis("fiber_sample")?,
                spread_deg: h.parse_value("fiber_spread_deg")?,
            })
        }
        other => return Err(Error::format("mve", format!("unknown texture {other}"))),
    };
    let meta = MveMeta {
        target_grain_size: h.parse_value("grain_size")?,
        texture,
        seed: h.parse_value("seed")?,
        n_seeds: h.parse_value("seeds")?,
    };
    let n: usize = dims.iter().product();
    let mut payload = Vec::new();
    input
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("<mve>", e))?;
    if payload.len() != 4 * n + 24 * grains {
        return Err(Error::format(
            "mve",
            format!("payload has {} bytes, expected {}", payload.len(), 4 * n + 24 * grains),
        ));
    }
    let (ids, oris) = payload.split_at(4 * n);
    let grain_id = ids
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let angles: Vec<f64> = oris
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let orientations = angles
        .chunks_exact(3)
        .map(|a| Orientation {
            phi1: a[0],
            big_phi: a[1],
            phi2: a[2],
        })
        .collect();
    Mve::new(dims, grain_id, orientations, meta)
}

pub fn save_mve(path: &Path, mve: &Mve, stamp: Option<&Stamp>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_mve(&mut w, mve, stamp)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_mve(path: &Path) -> Result<Mve> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_mve(&mut BufReader::new(file))
}
