//! Subset designs over a normalized candidate set: greedy conditional
//! maximin, greedy maxPro, sequential nearest-neighbour twinning and uniform
//! random selection, plus design diagnostics.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::Stamp;
use crate::error::{Error, Result};
use crate::features::{euclidean, FeatureMatrix, Provenance};
use crate::rng::rng_from;

/// Smallest coordinate gap entering the maxPro logarithms.
pub const COLLISION_FLOOR: f64 = 1e-12;
pub const DEFAULT_MAXPRO_EXPONENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Cmm,
    Maxpro,
    Twin,
    Random,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Cmm, Criterion::Maxpro, Criterion::Twin, Criterion::Random];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Cmm => "cmm",
            Criterion::Maxpro => "maxpro",
            Criterion::Twin => "twin",
            Criterion::Random => "random",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmm" => Ok(Criterion::Cmm),
            "maxpro" => Ok(Criterion::Maxpro),
            "twin" => Ok(Criterion::Twin),
            "random" => Ok(Criterion::Random),
            other => Err(Error::InvalidParameter(format!(
                "unknown criterion {other} (expected cmm, maxpro, twin or random)"
            ))),
        }
    }
}

/// First point of a greedy design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Index(usize),
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub criterion: Criterion,
    pub indices: Vec<usize>,
    pub seed: Option<u64>,
    pub trace: Vec<f64>,
    pub provenance: Provenance,
}

impl Design {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check(f: &FeatureMatrix, n: usize) -> Result<()> {
    if !f.is_normalized() {
        return Err(Error::NotNormalized);
    }
    if n == 0 || n > f.n_rows() {
        return Err(Error::DesignSize {
            n,
            available: f.n_rows(),
        });
    }
    Ok(())
}

fn resolve_start(start: Start, n_rows: usize) -> Result<(usize, Option<u64>)> {
    match start {
        Start::Index(i) if i < n_rows => Ok((i, None)),
        Start::Index(i) => Err(Error::InvalidParameter(format!(
            "start index {i} outside {n_rows} candidates"
        ))),
        Start::Seeded(seed) => Ok((rng_from(seed).random_range(0..n_rows), Some(seed))),
    }
}

/// Index of the best eligible score; `prefer(a, b)` says `a` strictly beats `b`.
/// Ties go to the lower index, so the parallel reduction is schedule-independent.
fn arg_best(scores: &[f64], eligible: &[bool], prefer: fn(f64, f64) -> bool) -> Option<usize> {
    scores
        .par_iter()
        .enumerate()
        .filter(|(i, _)| eligible[*i])
        .map(|(i, &s)| (i, s))
        .reduce_with(|a, b| {
            let a_wins = if prefer(a.1, b.1) {
                true
            } else if prefer(b.1, a.1) {
                false
            } else {
                a.0 < b.0
            };
            if a_wins {
                a
            } else {
                b
            }
        })
        .map(|(i, _)| i)
}

fn larger(a: f64, b: f64) -> bool {
    a > b
}

fn smaller(a: f64, b: f64) -> bool {
    a < b
}

/// Greedy conditional maximin. Trace entry `k` is the minimum distance from
/// point `k` to the points chosen before it (`+inf` for the start).
pub fn cmm_greedy(f: &FeatureMatrix, n: usize, start: Start) -> Result<Design> {
    check(f, n)?;
    let (first, seed) = resolve_start(start, f.n_rows())?;
    let mut eligible = vec![true; f.n_rows()];
    let mut mind = vec![f64::INFINITY; f.n_rows()];
    let mut indices = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n);
    extend_maximin(f, &mut indices, &mut trace, &mut eligible, &mut mind, first, f64::INFINITY, n);
    Ok(Design {
        criterion: Criterion::Cmm,
        indices,
        seed,
        trace,
        provenance: f.provenance(),
    })
}

/// Adds `first` and then maximin points until `indices` has `n` entries.
#[allow(clippy::too_many_arguments)]
fn extend_maximin(
    f: &FeatureMatrix,
    indices: &mut Vec<usize>,
    trace: &mut Vec<f64>,
    eligible: &mut [bool],
    mind: &mut [f64],
    first: usize,
    first_score: f64,
    n: usize,
) {
    let mut next = Some((first, first_score));
    while let Some((pick, score)) = next {
        indices.push(pick);
        trace.push(score);
        eligible[pick] = false;
        if indices.len() == n {
            break;
        }
        let p = f.row(pick);
        mind.par_iter_mut().enumerate().for_each(|(i, m)| {
            *m = m.min(euclidean(f.row(i), p));
        });
        next = arg_best(mind, eligible, larger).map(|i| (i, mind[i]));
    }
}

/// Log of one pairwise maxPro term, `-k * sum_l log|a_l - b_l|`, with the gap
/// floored at `COLLISION_FLOOR`.
pub fn maxpro_log_term(a: &[f64], b: &[f64], k: f64) -> f64 {
    -k * a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().max(COLLISION_FLOOR).ln())
        .sum::<f64>()
}

/// Running log-sum-exp.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    fn push(&mut self, t: f64) {
        if t > self.max {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        } else {
            self.sum += (t - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Greedy maxPro with dimension-wise exponent `k`. Trace entry `k` is the log
/// of the cost added by point `k` (`-inf` for the start).
pub fn maxpro_greedy(f: &FeatureMatrix, n: usize, start: Start, k: f64) -> Result<Design> {
    check(f, n)?;
    if f.dim() == 0 {
        return Err(Error::InvalidParameter("maxPro needs at least one feature".into()));
    }
    let (first, seed) = resolve_start(start, f.n_rows())?;
    let rows = f.n_rows();
    let mut eligible = vec![true; rows];
    let mut acc = vec![LogSum::EMPTY; rows];
    let mut cost = vec![f64::NEG_INFINITY; rows];
    let mut indices = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n);
    let mut pick = first;
    let mut score = f64::NEG_INFINITY;
    loop {
        indices.push(pick);
        trace.push(score);
        eligible[pick] = false;
        if indices.len() == n {
            break;
        }
        let p = f.row(pick);
        acc.par_iter_mut()
            .zip(cost.par_iter_mut())
            .enumerate()
            .filter(|(i, _)| eligible[*i])
            .for_each(|(i, (a, c))| {
                a.push(maxpro_log_term(f.row(i), p, k));
                *c = a.value();
            });
        pick = arg_best(&cost, &eligible, smaller).expect("n <= rows");
        score = cost[pick];
    }
    Ok(Design {
        criterion: Criterion::Maxpro,
        indices,
        seed,
        trace,
        provenance: f.provenance(),
    })
}

fn centroid(f: &FeatureMatrix, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut c = vec![0.0; f.dim()];
    let mut count = 0usize;
    for i in rows {
        for (c, v) in c.iter_mut().zip(f.row(i)) {
            *c += v;
        }
        count += 1;
    }
    c.iter_mut().for_each(|c| *c /= count as f64);
    c
}

fn nearest(f: &FeatureMatrix, target: &[f64], eligible: &[bool]) -> Option<usize> {
    let d: Vec<f64> = (0..f.n_rows())
        .into_par_iter()
        .map(|i| if eligible[i] { euclidean(f.row(i), target) } else { f64::INFINITY })
        .collect();
    arg_best(&d, eligible, smaller)
}

/// Sequential nearest-neighbour twinning with group size
/// `r = max(2, round(N/n))`. Trace entry is the radius of each consumed group;
/// maximin fill steps (pool exhausted early) record their min-distance.
pub fn twin_design(f: &FeatureMatrix, n: usize) -> Result<Design> {
    check(f, n)?;
    let rows = f.n_rows();
    let r = ((rows as f64 / n as f64).round() as usize).max(2);
    let mut unassigned = vec![true; rows];
    let mut remaining = rows;
    let mut indices = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n);
    let mut current = nearest(f, &centroid(f, 0..rows), &unassigned);

    while let Some(cur) = current {
        if indices.len() == n {
            break;
        }
        indices.push(cur);
        unassigned[cur] = false;
        remaining -= 1;
        let p = f.row(cur);
        let mut near: Vec<(f64, usize)> = (0..rows)
            .into_par_iter()
            .filter(|&i| unassigned[i])
            .map(|i| (euclidean(f.row(i), p), i))
            .collect();
        let take = (r - 1).min(near.len());
        if take < near.len() {
            near.select_nth_unstable_by(take, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        near.truncate(take);
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &near {
            unassigned[i] = false;
        }
        remaining -= take;
        trace.push(near.last().map_or(0.0, |x| x.0));
        current = if remaining > 0 {
            let c = centroid(f, std::iter::once(cur).chain(near.iter().map(|x| x.1)));
            nearest(f, &c, &unassigned)
        } else {
            None
        };
    }

    if indices.len() < n {
        let mut eligible = vec![true; rows];
        let mut mind = vec![f64::INFINITY; rows];
        for &i in &indices {
            eligible[i] = false;
            let p = f.row(i);
            mind.par_iter_mut().enumerate().for_each(|(j, m)| *m = m.min(euclidean(f.row(j), p)));
        }
        let first = arg_best(&mind, &eligible, larger).expect("n <= rows");
        let score = mind[first];
        extend_maximin(f, &mut indices, &mut trace, &mut eligible, &mut mind, first, score, n);
    }
    Ok(Design {
        criterion: Criterion::Twin,
        indices,
        seed: None,
        trace,
        provenance: f.provenance(),
    })
}

/// Uniform sample without replacement.
pub fn random_design(f: &FeatureMatrix, n: usize, seed: u64) -> Result<Design> {
    check(f, n)?;
    let indices = rand::seq::index::sample(&mut rng_from(seed), f.n_rows(), n).into_vec();
    Ok(Design {
        criterion: Criterion::Random,
        indices,
        seed: Some(seed),
        trace: Vec::new(),
        provenance: f.provenance(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub maxpro_exponent: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            maxpro_exponent: DEFAULT_MAXPRO_EXPONENT,
        }
    }
}

/// Dispatches on the criterion; `seed` picks the greedy start or the random
/// sample and is ignored by twinning.
pub fn build_design(criterion: Criterion, f: &FeatureMatrix, n: usize, seed: u64, options: &BuildOptions) -> Result<Design> {
    match criterion {
        Criterion::Cmm => cmm_greedy(f, n, Start::Seeded(seed)),
        Criterion::Maxpro => maxpro_greedy(f, n, Start::Seeded(seed), options.maxpro_exponent),
        Criterion::Twin => twin_design(f, n),
        Criterion::Random => random_design(f, n, seed),
    }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrainSizeHistogram {
    pub sizes: Vec<f64>,
    pub design: Vec<f64>,
    pub pool: Vec<f64>,
    pub tv_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    /// Absent for single-point designs.
    pub min_pairwise_distance: Option<f64>,
    pub maxpro_log_criterion: Option<f64>,
    pub energy_distance: f64,
    pub projected_spacing: Vec<f64>,
    pub grain_size: Option<GrainSizeHistogram>,
}

impl DesignDiagnostics {
    /// Smallest 1-D projected spacing over all dimensions.
    pub fn worst_projected_spacing(&self) -> f64 {
        self.projected_spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn min_pairwise_distance(f: &FeatureMatrix, indices: &[usize]) -> Option<f64> {
    (indices.len() >= 2).then(|| {
        (0..indices.len())
            .into_par_iter()
            .map(|a| {
                ((a + 1)..indices.len())
                    .map(|b| euclidean(f.row(indices[a]), f.row(indices[b])))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min)
    })
}

/// `(1/p) * log( mean_{i<j} prod_l |x_il - x_jl|^-k )`.
pub fn maxpro_log_criterion(f: &FeatureMatrix, indices: &[usize], k: f64) -> Option<f64> {
    let m = indices.len();
    if m < 2 || f.dim() == 0 {
        return None;
    }
    let mut acc = LogSum::EMPTY;
    for a in 0..m {
        for b in (a + 1)..m {
            acc.push(maxpro_log_term(f.row(indices[a]), f.row(indices[b]), k));
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    Some((acc.value() - pairs.ln()) / f.dim() as f64)
}

fn mean_cross(f: &FeatureMatrix, a: &[usize], b: &[usize]) -> f64 {
    let total: f64 = a
        .par_iter()
        .map(|&i| b.iter().map(|&j| euclidean(f.row(i), f.row(j))).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / (a.len() * b.len()) as f64
}

/// Energy distance (V-statistic) between the rows in `a` and those in `b`.
pub fn energy_distance(f: &FeatureMatrix, a: &[usize], b: &[usize]) -> f64 {
    (2.0 * mean_cross(f, a, b) - mean_cross(f, a, a) - mean_cross(f, b, b)).max(0.0)
}

/// Per-dimension minimum gap between sorted design coordinates.
pub fn projected_spacing(f: &FeatureMatrix, indices: &[usize]) -> Vec<f64> {
    (0..f.dim())
        .map(|l| {
            let mut v: Vec<f64> = indices.iter().map(|&i| f.row(i)[l]).collect();
            v.sort_by(f64::total_cmp);
            v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Histograms over the distinct pool sizes and their total-variation distance.
pub fn grain_size_histogram(design_sizes: &[f64], pool_sizes: &[f64]) -> GrainSizeHistogram {
    let mut sizes = pool_sizes.to_vec();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    let hist = |values: &[f64]| {
        let mut h = vec![0.0; sizes.len()];
        for v in values {
            if let Ok(k) = sizes.binary_search_by(|s| s.total_cmp(v)) {
                h[k] += 1.0;
            }
        }
        let total = values.len().max(1) as f64;
        h.iter_mut().for_each(|x| *x /= total);
        h
    };
    let design = hist(design_sizes);
    let pool = hist(pool_sizes);
    let tv_distance = 0.5 * design.iter().zip(&pool).map(|(p, q)| (p - q).abs()).sum::<f64>();
    GrainSizeHistogram {
        sizes,
        design,
        pool,
        tv_distance,
    }
}

/// `grain_sizes`, when given, holds the nominal grain size of every row of `f`.
pub fn design_diagnostics(design: &Design, f: &FeatureMatrix, grain_sizes: Option<&[f64]>) -> DesignDiagnostics {
    let idx = &design.indices;
    let pool: Vec<usize> = (0..f.n_rows()).collect();
    DesignDiagnostics {
        min_pairwise_distance: min_pairwise_distance(f, idx),
        maxpro_log_criterion: maxpro_log_criterion(f, idx, DEFAULT_MAXPRO_EXPONENT),
        energy_distance: energy_distance(f, idx, &pool),
        projected_spacing: projected_spacing(f, idx),
        grain_size: grain_sizes.map(|g| {
            let chosen: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
            grain_size_histogram(&chosen, g)
        }),
    }
}

/// 1000 points from `Unif(-5, 5)^3` followed by 500 standard-normal points.
pub fn fig5_cloud(seed: u64) -> FeatureMatrix {
    let mut rng = rng_from(seed);
    let mut values = Array2::zeros((1500, 3));
    for i in 0..1000 {
        for l in 0..3 {
            values[(i, l)] = rng.random_range(-5.0..5.0);
        }
    }
    for i in 1000..1500 {
        for l in 0..3 {
            values[(i, l)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let ids = (0..1500).map(|i| format!("p{i:04}")).collect();
    FeatureMatrix::new(ids, values, Provenance::External).expect("finite cloud")
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub tool: String,
    pub config: String,
    pub criterion: Criterion,
    pub provenance: Provenance,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    pub trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DesignDiagnostics>,
}

impl DesignFile {
    pub fn new(design: &Design, ids: &[String], diagnostics: Option<DesignDiagnostics>, stamp: &Stamp) -> Self {
        DesignFile {
            tool: stamp.tool.clone(),
            config: stamp.config_hash.clone(),
            criterion: design.criterion,
            provenance: design.provenance,
            n: design.len(),
            seed: design.seed,
            indices: design.indices.clone(),
            ids: design.indices.iter().map(|&i| ids[i].clone()).collect(),
            trace: design.trace.clone(),
            diagnostics,
        }
    }

    pub fn design(&self) -> Design {
        Design {
            criterion: self.criterion,
            indices: self.indices.clone(),
            seed: self.seed,
            trace: self.trace.clone(),
            provenance: self.provenance,
        }
    }
}

pub fn save_design(path: &Path, file: &DesignFile) -> Result<()> {
    let text = toml::to_string(file).map_err(|e| Error::format("design", e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_design(path: &Path) -> Result<DesignFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DesignFile = toml::from_str(&text).map_err(|e| Error::format("design", e.to_string()))?;
    if file.indices.len() != file.n || file.ids.len() != file.n {
        return Err(Error::format("design", format!("{}: n does not match indices", path.display())));
    }
    Ok(file)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per design file.
pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[DesignFile], stamp: Option<&Stamp>) -> Result<()> {
    if let Some(s) = stamp {
        writeln!(out, "{}", s.comment_line()).map_err(|e| Error::io("<diagnostics>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "criterion",
        "provenance",
        "n",
        "seed",
        "min_pairwise_distance",
        "maxpro_log_criterion",
        "energy_distance",
        "min_projected_spacing",
        "grain_size_tv",
    ])?;
    for r in rows {
        let d = r.diagnostics.as_ref();
        w.write_record([
            r.criterion.to_string(),
            r.provenance.to_string(),
            r.n.to_string(),
            r.seed.map_or_else(String::new, |s| s.to_string()),
            opt(d.and_then(|d| d.min_pairwise_distance)),
            opt(d.and_then(|d| d.maxpro_log_criterion)),
            opt(d.map(|d| d.energy_distance)),
            opt(d.map(|d| d.worst_projected_spacing())),
            opt(d.and_then(|d| d.grain_size.as_ref().map(|g| g.tv_distance))),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<diagnostics>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::normalize_features;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn normalized(values: Array2<f64>) -> FeatureMatrix {
        let ids = (0..values.nrows()).map(|i| format!("r{i}")).collect();
        normalize_features(&FeatureMatrix::new(ids, values, Provenance::External).unwrap()).unwrap()
    }

    fn random_cloud(n: usize, p: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rng_from(seed);
        normalized(Array2::from_shape_fn((n, p), |_| rng.random::<f64>()))
    }

    #[test]
    fn cmm_on_line() {
        let f = normalized(array![[0.0], [0.1], [0.5], [1.0]]);
        let d = cmm_greedy(&f, 3, Start::Index(0)).unwrap();
        assert_eq!(d.indices, vec![0, 3, 2]);
        assert_eq!(d.trace[0], f64::INFINITY);
        assert_eq!(&d.trace[1..], &[1.0, 0.5]);
    }

    /// Every step recomputed from scratch against all remaining candidates.
    #[test]
    fn cmm_steps_attain_the_argmax() {
        let f = random_cloud(60, 3, 2);
        let d = cmm_greedy(&f, 15, Start::Seeded(4)).unwrap();
        for k in 1..d.len() {
            let chosen = &d.indices[..k];
            let score = |i: usize| chosen.iter().map(|&j| euclidean(f.row(i), f.row(j))).fold(f64::INFINITY, f64::min);
            let best = (0..60).filter(|i| !chosen.contains(i)).map(score).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(score(d.indices[k]), best);
            assert_eq!(d.trace[k], best);
            assert!(d.trace[k] <= d.trace[k - 1]);
        }
    }

    #[test]
    fn full_designs_cover_everything() {
        let f = random_cloud(9, 2, 3);
        for c in Criterion::ALL {
            let mut idx = build_design(c, &f, 9, 1, &BuildOptions::default()).unwrap().indices;
            idx.sort_unstable();
            assert_eq!(idx, (0..9).collect::<Vec<_>>(), "{c}");
        }
    }

    #[test]
    fn size_and_normalization_checks() {
        let f = random_cloud(5, 2, 3);
        for c in Criterion::ALL {
            assert!(matches!(build_design(c, &f, 6, 0, &BuildOptions::default()), Err(Error::DesignSize { .. })));
            assert!(matches!(build_design(c, &f, 0, 0, &BuildOptions::default()), Err(Error::DesignSize { .. })));
        }
        let raw = FeatureMatrix::new(vec!["a".into(), "b".into()], array![[0.0], [1.0]], Provenance::Classic).unwrap();
        assert!(matches!(cmm_greedy(&raw, 1, Start::Index(0)), Err(Error::NotNormalized)));
    }

    #[test]
    fn maxpro_small_example() {
        let f = normalized(array![[0.0, 0.0], [1.0, 1.0], [0.5, 0.9], [0.9, 0.5]]);
        let d = maxpro_greedy(&f, 3, Start::Index(0), 2.0).unwrap();
        assert_eq!(d.indices, vec![0, 1, 2]);
        assert_eq!(d.trace[1], 0.0);
        // brute-force costs of the tied third step
        let cost = |p: [f64; 2]| 1.0 / (p[0] * p[0] * p[1] * p[1]) + 1.0 / ((1.0 - p[0]).powi(2) * (1.0 - p[1]).powi(2));
        assert!((d.trace[2] - cost([0.5, 0.9]).ln()).abs() < 1e-12);
    }

    #[test]
    fn maxpro_survives_wide_features() {
        let f = random_cloud(40, 512, 5);
        let d = maxpro_greedy(&f, 10, Start::Index(0), 2.0).unwrap();
        assert!(d.trace[1..].iter().all(|t| t.is_finite()));
        assert!(maxpro_log_criterion(&f, &d.indices, 2.0).unwrap().is_finite());
    }

    #[test]
    fn coordinate_collision_is_clamped() {
        let f = normalized(array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.5], [0.5, 0.25]]);
        let d = maxpro_greedy(&f, 4, Start::Index(0), 2.0).unwrap();
        assert!(d.trace.iter().all(|t| !t.is_nan()));
        assert_eq!(*d.indices.last().unwrap(), 1);
    }

    #[test]
    fn twin_tracks_cluster_mass() {
        let mut rng = rng_from(6);
        let mut values = Array2::zeros((500, 2));
        for i in 0..500 {
            let center = if i < 400 { 0.0 } else { 10.0 };
            for l in 0..2 {
                values[(i, l)] = center + rng.sample::<f64, _>(StandardNormal);
            }
        }
        let f = normalized(values);
        let d = twin_design(&f, 50).unwrap();
        let first = d.indices.iter().filter(|&&i| i < 400).count() as f64 / 50.0;
        assert!((first - 0.8).abs() <= 0.1, "{first}");
    }

    #[test]
    fn twin_fills_when_pool_runs_out() {
        let f = random_cloud(10, 2, 7);
        let d = twin_design(&f, 4).unwrap();
        assert_eq!(d.len(), 4);
        let mut u = d.indices.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 4);
    }

    #[test]
    fn random_selection_frequencies() {
        let f = random_cloud(20, 1, 8);
        let (n, seeds) = (5, 1000);
        let mut counts = [0usize; 20];
        for s in 0..seeds {
            for i in random_design(&f, n, s).unwrap().indices {
                counts[i] += 1;
            }
        }
        let p = n as f64 / 20.0;
        let mean = seeds as f64 * p;
        let sigma = (seeds as f64 * p * (1.0 - p)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() < 3.5 * sigma), "{counts:?}");
        assert_eq!(random_design(&f, n, 3).unwrap(), random_design(&f, n, 3).unwrap());
    }

    #[test]
    fn diagnostics_basics() {
        let f = random_cloud(30, 3, 9);
        let all: Vec<usize> = (0..30).rev().collect();
        assert!(energy_distance(&f, &all, &(0..30).collect::<Vec<_>>()) < 1e-12);
        let pair = [3, 17];
        assert_eq!(min_pairwise_distance(&f, &pair).unwrap(), euclidean(f.row(3), f.row(17)));
        assert!(min_pairwise_distance(&f, &[3]).is_none());
        let h = grain_size_histogram(&[4.0, 4.0], &[4.0, 8.0, 8.0, 4.0]);
        assert_eq!(h.sizes, vec![4.0, 8.0]);
        assert_eq!(h.tv_distance, 0.5);
    }

    #[test]
    fn energy_distance_matches_definition() {
        let f = random_cloud(25, 2, 10);
        let a = [0usize, 4, 9];
        let b: Vec<usize> = (10..25).collect();
        let mean = |x: &[usize], y: &[usize]| {
            let mut s = 0.0;
            for &i in x {
                for &j in y {
                    s += euclidean(f.row(i), f.row(j));
                }
            }
            s / (x.len() * y.len()) as f64
        };
        let expected = 2.0 * mean(&a, &b) - mean(&a, &a) - mean(&b, &b);
        assert!((energy_distance(&f, &a, &b) - expected).abs() < 1e-12);
    }

    /// Smallest distance from any design point to a corner of the unit cube.
    fn min_corner_distance(f: &FeatureMatrix, idx: &[usize]) -> f64 {
        idx.iter()
            .map(|&i| f.row(i).iter().map(|&x| x.min(1.0 - x).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn fig5_cmm_goes_to_corners() {
        let f = normalize_features(&fig5_cloud(1)).unwrap();
        let mut random: Vec<f64> = (0..100)
            .map(|s| min_corner_distance(&f, &random_design(&f, 10, s).unwrap().indices))
            .collect();
        random.sort_by(f64::total_cmp);
        for start in 0..10 {
            let cmm = cmm_greedy(&f, 10, Start::Seeded(start)).unwrap();
            let c = min_corner_distance(&f, &cmm.indices);
            assert!(c < random[10], "{c} vs {}", random[10]);
        }
    }

    #[test]
    fn fig5_maxpro_beats_random_median() {
        let f = normalize_features(&fig5_cloud(2)).unwrap();
        let d = maxpro_greedy(&f, 10, Start::Seeded(1), 2.0).unwrap();
        let mut random: Vec<f64> = (0..100)
            .map(|s| maxpro_log_criterion(&f, &random_design(&f, 10, s).unwrap().indices, 2.0).unwrap())
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(maxpro_log_criterion(&f, &d.indices, 2.0).unwrap() <= random[50]);
    }

    #[test]
    fn design_file_round_trip() {
        let f = random_cloud(12, 2, 11);
        let d = cmm_greedy(&f, 4, Start::Seeded(2)).unwrap();
        let diag = design_diagnostics(&d, &f, Some(&[4.0; 12]));
        let file = DesignFile::new(&d, f.ids(), Some(diag), &Stamp::new("abc"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.toml");
        save_design(&path, &file).unwrap();
        let back = load_design(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.design(), d);
        let mut csv = Vec::new();
        write_diagnostics_csv(&mut csv, &[file], None).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    }

    fn rescale(f: &FeatureMatrix, scale: &[f64], shift: &[f64]) -> FeatureMatrix {
        let mut v = f.values().clone();
        for mut row in v.rows_mut() {
            for (l, x) in row.iter_mut().enumerate() {
                *x = *x * scale[l] + shift[l];
            }
        }
        normalized(v)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn designs_survive_affine_rescaling(
            seed in 0u64..500,
            scale in prop::collection::vec(0.5f64..20.0, 3),
            shift in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let f = random_cloud(40, 3, seed);
            let g = rescale(&f, &scale, &shift);
            for c in Criterion::ALL {
                let a = build_design(c, &f, 8, seed, &BuildOptions::default()).unwrap();
                let b = build_design(c, &g, 8, seed, &BuildOptions::default()).unwrap();
                prop_assert_eq!(a.indices, b.indices);
            }
        }

        #[test]
        fn maxpro_criterion_ignores_dimension_order(seed in 0u64..500) {
            let f = random_cloud(15, 4, seed);
            let perm = [2usize, 0, 3, 1];
            let g = f.values().select(ndarray::Axis(1), &perm);
            let g = FeatureMatrix::new(f.ids().to_vec(), g, Provenance::External).unwrap();
            let idx: Vec<usize> = (0..15).step_by(2).collect();
            let a = maxpro_log_criterion(&f, &idx, 2.0).unwrap();
            let b = maxpro_log_criterion(&g, &idx, 2.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn energy_distance_nonnegative(seed in 0u64..500, k in 1usize..20) {
            let f = random_cloud(20, 2, seed);
            let a: Vec<usize> = (0..k).collect();
            let pool: Vec<usize> = (0..20).collect();
            prop_assert!(energy_distance(&f, &a, &pool) >= 0.0);
        }

        #[test]
        fn designs_are_deterministic(seed in 0u64..500) {
            let f = random_cloud(30, 2, seed);
            for c in Criterion::ALL {
                let a = build_design(c, &f, 6, seed, &BuildOptions::default()).unwrap();
                let b = build_design(c, &f, 6, seed, &BuildOptions::default()).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
