//! Per-MVE feature vectors, min-max normalization, distances and the feature
//! file formats.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Header, Stamp};
use crate::error::{Error, Result};
use crate::mve::Mve;
use crate::texture::{gsh_coefficients, retained_components, retained_parts};

/// Grain size enters the classic descriptor as `d / GRAIN_SIZE_SCALE`.
pub const GRAIN_SIZE_SCALE: f64 = 16.0;

/// Reference volume for the grain-count statistic (a 16^3 crop).
pub const REFERENCE_VOLUME: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Classic,
    Contrastive,
    External,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Classic => "classic",
            Provenance::Contrastive => "contrastive",
            Provenance::External => "external",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(Provenance::Classic),
            "contrastive" => Ok(Provenance::Contrastive),
            "external" => Ok(Provenance::External),
            other => Err(Error::InvalidParameter(format!("unknown provenance {other}"))),
        }
    }
}

/// Per-dimension `(min, max)` used for min-max scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn fit(values: ArrayView2<'_, f64>) -> Self {
        let p = values.ncols();
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for row in values.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Normalization { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Constant dimensions map to 0.5.
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span > 0.0 {
            (v - self.min[j]) / span
        } else {
            0.5
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.scale(j, v)).collect()
    }

    pub fn apply(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = values.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
        out
    }
}

/// `N x p` feature matrix with one row per MVE.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
    provenance: Provenance,
    normalization: Option<Normalization>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, values: Array2<f64>, provenance: Provenance) -> Result<Self> {
        if ids.len() != values.nrows() {
            return Err(Error::InvalidParameter(format!(
                "{} ids for {} rows",
                ids.len(),
                values.nrows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId { row, id: id.clone() });
            }
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    id: ids[row].clone(),
                    col,
                });
            }
        }
        let values = values.as_standard_layout().into_owned();
        Ok(FeatureMatrix {
            ids,
            values,
            provenance,
            normalization: None,
        })
    }

    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::RowWidth {
                    row,
                    id: ids.get(row).cloned().unwrap_or_default(),
                    found: r.len(),
                    expected: p,
                });
            }
        }
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((n, p), flat).expect("shape checked");
        FeatureMatrix::new(ids, values, provenance)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.values.as_slice().expect("standard layout")[i * p..(i + 1) * p]
    }

    /// Rows in the given order, keeping provenance and normalization record.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            values: self.values.select(Axis(0), rows),
            provenance: self.provenance,
            normalization: self.normalization.clone(),
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Marks the matrix as normalized by an externally fitted record.
    pub fn with_normalization(mut self, record: Normalization) -> Self {
        self.normalization = Some(record);
        self
    }
}

/// Real and imaginary GSH parts (identically-zero parts dropped) followed by
/// the nominal grain size scaled by 1/16.
pub fn classic_descriptor(mve: &Mve) -> Vec<f64> {
    let mut v = retained_parts(&gsh_coefficients(mve));
    v.push(mve.meta().target_grain_size / GRAIN_SIZE_SCALE);
    v
}

pub fn classic_dimension() -> usize {
    retained_components().len() + 1
}

/// Fraction of face-adjacent voxel pairs (non-periodic) whose grain ids differ.
pub fn interface_density(mve: &Mve) -> f64 {
    let [nx, ny, nz] = mve.dims();
    let ids = mve.grain_ids();
    let mut pairs = 0usize;
    let mut differ = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let here = ids[mve.index(x, y, z)];
                if x + 1 < nx {
                    pairs += 1;
                    differ += (ids[mve.index(x + 1, y, z)] != here) as usize;
                }
                if y + 1 < ny {
                    pairs += 1;
                    differ += (ids[mve.index(x, y + 1, z)] != here) as usize;
                }
                if z + 1 < nz {
                    pairs += 1;
                    differ += (ids[mve.index(x, y, z + 1)] != here) as usize;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        differ as f64 / pairs as f64
    }
}

/// Raw input of the contrastive embedding: retained GSH parts, interface
/// density, and `ln(1 + G * 16^3 / V)` with `G` the number of grains present.
/// Every entry is intensive, so crops and whole MVEs are comparable.
pub fn subvolume_statistics(mve: &Mve) -> Vec<f64> {
    let mut v = retained_parts(&gsh_coefficients(mve));
    v.push(interface_density(mve));
    let grains_per_reference = mve.n_grains() as f64 * REFERENCE_VOLUME / mve.n_voxels() as f64;
    v.push(grains_per_reference.ln_1p());
    v
}

pub fn statistics_dimension() -> usize {
    retained_components().len() + 2
}

/// Per-dimension min-max scaling to `[0, 1]`.
pub fn normalize_features(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.n_rows() < 2 {
        return Err(Error::InvalidParameter(format!(
            "normalization needs at least 2 rows, got {}",
            f.n_rows()
        )));
    }
    let record = Normalization::fit(f.values.view());
    Ok(FeatureMatrix {
        ids: f.ids.clone(),
        values: record.apply(f.values.view()),
        provenance: f.provenance,
        normalization: Some(record),
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Symmetric `N x N` Euclidean distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub Array2<f64>);

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

pub fn pairwise_distances(values: ArrayView2<'_, f64>) -> Result<DistanceMatrix> {
    if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            row,
            id: row.to_string(),
            col,
        });
    }
    let values = values.as_standard_layout();
    let n = values.nrows();
    let rows: Vec<&[f64]> = values
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let flat: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (0..n).map(move |j| match i.cmp(&j) {
                std::cmp::Ordering::Equal => 0.0,
                // compute each pair once in (min, max) order so the result is exactly symmetric
                std::cmp::Ordering::Less => euclidean(rows[i], rows[j]),
                std::cmp::Ordering::Greater => euclidean(rows[j], rows[i]),
            })
        })
        .collect();
    Ok(DistanceMatrix(Array2::from_shape_vec((n, n), flat).expect("n x n")))
}

pub fn distance_matrix(f: &FeatureMatrix) -> Result<DistanceMatrix> {
    pairwise_distances(f.values.view())
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// `.bin` selects the binary twin; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => FeatureFormat::Binary,
            _ => FeatureFormat::Csv,
        }
    }
}

/// CSV with header `id,f0,...,f{p-1}`, preceded by a `#` comment line
/// carrying the stamp and provenance.
pub fn write_features_csv<W: Write>(out: W, f: &FeatureMatrix, stamp: Option<&Stamp>) -> Result<()> {
    let mut out = out;
    let comment = match stamp {
        Some(s) => format!("{} provenance={}\n", s.comment_line(), f.provenance),
        None => format!("# provenance={}\n", f.provenance),
    };
    out.write_all(comment.as_bytes())
        .map_err(|e| Error::io("<features>", e))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((0..f.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (i, id) in f.ids.iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend(f.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

pub fn read_features_csv<R: Read>(input: R, provenance: Provenance) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::format("features", "first column must be `id`"));
    }
    let p = header.len() - 1;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        if record.len() - 1 != p {
            return Err(Error::RowWidth {
                row,
                id,
                found: record.len() - 1,
                expected: p,
            });
        }
        let mut values = Vec::with_capacity(p);
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format("features", format!("row {row} ({id}), column {col}: bad number {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, id, col });
            }
            values.push(v);
        }
        ids.push(id);
        rows.push(values);
    }
    if rows.is_empty() {
        return FeatureMatrix::new(ids, Array2::zeros((0, p)), provenance);
    }
    FeatureMatrix::from_rows(ids, rows, provenance)
}

const BINARY_KIND: &str = "mvedoe-features-v1";

/// Header line with `rows` and `cols`, then row-major little-endian f64.
/// Ids are not stored; rows load as `row0`, `row1`, ...
pub fn write_features_binary<W: Write>(out: &mut W, f: &FeatureMatrix, stamp: Option<&Stamp>) -> Result<()> {
    let io = |e| Error::io("<features>", e);
    Header::new(BINARY_KIND)
        .with("rows", f.n_rows())
        .with("cols", f.dim())
        .with("provenance", f.provenance)
        .stamp(stamp)
        .write(out)
        .map_err(io)?;
    let mut buf = Vec::with_capacity(8 * f.values.len());
    for v in f.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_features_binary<R: BufRead>(input: &mut R, provenance: Provenance) -> Result<FeatureMatrix> {
    let h = Header::read(input, BINARY_KIND)?;
    let n: usize = h.parse_value("rows")?;
    let p: usize = h.parse_value("cols")?;
    let mut payload = Vec::new();
    input
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("<features>", e))?;
    if payload.len() != 8 * n * p {
        return Err(Error::format(
            "features",
            format!("payload has {} bytes, expected {}", payload.len(), 8 * n * p),
        ));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let ids = (0..n).map(|i| format!("row{i}")).collect();
    FeatureMatrix::new(ids, Array2::from_shape_vec((n, p), flat).expect("sized"), provenance)
}

pub fn save_features(path: &Path, f: &FeatureMatrix, stamp: Option<&Stamp>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match FeatureFormat::from_path(path) {
        FeatureFormat::Csv => write_features_csv(&mut w, f, stamp)?,
        FeatureFormat::Binary => write_features_binary(&mut w, f, stamp)?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a feature file as an externally supplied matrix.
pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    load_features_as(path, format, Provenance::External)
}

pub fn load_features_as(path: &Path, format: FeatureFormat, provenance: Provenance) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    match format {
        FeatureFormat::Csv => read_features_csv(r, provenance),
        FeatureFormat::Binary => read_features_binary(&mut r, provenance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mve::{generate_mve, MveMeta, DEFAULT_DIMS};
    use crate::rng::rng_from;
    use crate::texture::{single_crystal_max, Orientation, TextureSpec};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    /// Same grain ids, voxels visited in a shuffled order (the grid is the
    /// permuted voxel list).
    fn permuted(mve: &Mve, seed: u64) -> Mve {
        let mut order: Vec<usize> = (0..mve.n_voxels()).collect();
        order.shuffle(&mut rng_from(seed));
        let ids = order.iter().map(|&i| mve.grain_ids()[i]).collect();
        Mve::new(mve.dims(), ids, mve.orientations().to_vec(), mve.meta().clone()).unwrap()
    }

    #[test]
    fn classic_descriptor_has_eighteen_entries() {
        let m = generate_mve(DEFAULT_DIMS, 8.0, &TextureSpec::Uniform, 1).unwrap();
        assert_eq!(classic_descriptor(&m).len(), 18);
        assert_eq!(classic_dimension(), 18);
    }

    #[test]
    fn classic_descriptor_ignores_voxel_order() {
        let m = generate_mve(DEFAULT_DIMS, 6.0, &TextureSpec::Uniform, 2).unwrap();
        assert_eq!(classic_descriptor(&m), classic_descriptor(&permuted(&m, 3)));
    }

    #[test]
    fn classic_descriptor_ignores_grain_relabeling() {
        let m = generate_mve(DEFAULT_DIMS, 8.0, &TextureSpec::Uniform, 4).unwrap();
        let g = m.n_grains();
        let relabel: Vec<u32> = (0..g as u32).rev().collect();
        let ids = m.grain_ids().iter().map(|&x| relabel[x as usize]).collect();
        let oris = (0..g).map(|i| m.orientations()[g - 1 - i]).collect();
        let r = Mve::new(m.dims(), ids, oris, m.meta().clone()).unwrap();
        for (a, b) in classic_descriptor(&m).iter().zip(classic_descriptor(&r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fine_uniform_mve_has_small_gsh_block() {
        let m = generate_mve(DEFAULT_DIMS, 4.0, &TextureSpec::Uniform, 5).unwrap();
        let d = classic_descriptor(&m);
        let w: Vec<f64> = m.grain_voxel_counts().iter().map(|&c| c as f64).collect();
        let n_eff = w.iter().sum::<f64>().powi(2) / w.iter().map(|x| x * x).sum::<f64>();
        let bound = 9.0 * 3.0 * single_crystal_max() / n_eff.sqrt();
        assert!(d[..17].iter().all(|v| v.abs() < bound), "{d:?} bound {bound}");
        assert_eq!(d[17], 4.0 / 16.0);
    }

    fn meta() -> MveMeta {
        MveMeta {
            target_grain_size: 2.0,
            texture: TextureSpec::Uniform,
            seed: 0,
            n_seeds: 2,
        }
    }

    #[test]
    fn single_crystal_statistics() {
        let m = Mve::single_crystal([16, 16, 16], Orientation::new(0.2, 0.3, 0.4));
        let s = subvolume_statistics(&m);
        assert_eq!(s.len(), statistics_dimension());
        assert_eq!(s[17], 0.0);
        assert_eq!(s[18], 2f64.ln());
    }

    #[test]
    fn checkerboard_interface_density_is_one() {
        let dims = [4, 4, 4];
        let ids = (0..64u32).map(|i| (i % 4 + (i / 4) % 4 + i / 16) % 2).collect();
        let m = Mve::new(dims, ids, vec![Orientation::IDENTITY; 2], meta()).unwrap();
        assert_eq!(interface_density(&m), 1.0);
    }

    #[test]
    fn normalization_conventions() {
        let f = FeatureMatrix::new(ids(3), array![[2.0, 3.0], [4.0, 3.0], [3.0, 3.0]], Provenance::Classic).unwrap();
        let n = normalize_features(&f).unwrap();
        assert_eq!(n.values(), &array![[0.0, 0.5], [1.0, 0.5], [0.5, 0.5]]);
        let again = normalize_features(&n).unwrap();
        assert_eq!(again.values(), n.values());
        let one = FeatureMatrix::new(ids(1), array![[1.0]], Provenance::Classic).unwrap();
        assert!(normalize_features(&one).is_err());
    }

    #[test]
    fn distances_of_simple_rows() {
        let f = FeatureMatrix::new(ids(3), array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], Provenance::Classic).unwrap();
        let d = distance_matrix(&f).unwrap();
        assert_eq!(d.get(0, 2), 0.0);
        assert!((d.get(0, 1) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distances_match_double_loop() {
        let mut rng = rng_from(9);
        let values = Array2::from_shape_fn((50, 7), |_| rng.random_range(-3.0..3.0));
        let d = pairwise_distances(values.view()).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += (values[(i, k)] - values[(j, k)]).powi(2);
                }
                assert!((d.get(i, j) - s.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_rows_rejected() {
        let err = FeatureMatrix::new(ids(2), array![[1.0], [f64::NAN]], Provenance::External).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, .. }));
        assert!(pairwise_distances(array![[1.0], [f64::INFINITY]].view()).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = rng_from(10);
        let values = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>() * 1e3 - 1e-7);
        let f = FeatureMatrix::new(ids(20), values, Provenance::External).unwrap();
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &f, Some(&Stamp::new("x"))).unwrap();
        let back = read_features_csv(buf.as_slice(), Provenance::External).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let mut rng = rng_from(11);
        let values = Array2::from_shape_fn((6, 512), |_| rng.random::<f64>());
        let f = FeatureMatrix::new((0..6).map(|i| format!("row{i}")).collect(), values, Provenance::External).unwrap();
        let mut buf = Vec::new();
        write_features_binary(&mut buf, &f, None).unwrap();
        assert_eq!(read_features_binary(&mut buf.as_slice(), Provenance::External).unwrap(), f);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let nan = "id,f0,f1\na,1,2\nb,NaN,3\n";
        match read_features_csv(nan.as_bytes(), Provenance::External) {
            Err(Error::NonFinite { row, id, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(id, "b");
            }
            other => panic!("{other:?}"),
        }
        let ragged = "id,f0,f1\na,1,2\nb,3\n";
        assert!(matches!(
            read_features_csv(ragged.as_bytes(), Provenance::External),
            Err(Error::RowWidth { row: 1, .. })
        ));
        let dup = "id,f0\na,1\na,2\n";
        assert!(matches!(
            read_features_csv(dup.as_bytes(), Provenance::External),
            Err(Error::DuplicateId { row: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn normalized_values_lie_in_unit_interval(raw in prop::collection::vec(-1e6f64..1e6, 12)) {
            let values = Array2::from_shape_vec((4, 3), raw).unwrap();
            let f = FeatureMatrix::new(ids(4), values, Provenance::Classic).unwrap();
            let n = normalize_features(&f).unwrap();
            prop_assert!(n.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let again = normalize_features(&n).unwrap();
            prop_assert_eq!(again.values(), n.values());
        }

        #[test]
        fn distances_follow_row_permutation(seed in 0u64..1000) {
            let mut rng = rng_from(seed);
            let values = Array2::from_shape_fn((8, 3), |_| rng.random_range(0.0..1.0));
            let mut perm: Vec<usize> = (0..8).collect();
            perm.shuffle(&mut rng);
            let d = pairwise_distances(values.view()).unwrap();
            let dp = pairwise_distances(values.select(Axis(0), &perm).view()).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    prop_assert_eq!(dp.get(i, j), d.get(perm[i], perm[j]));
                }
            }
        }
    }
}
