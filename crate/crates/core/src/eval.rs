//! Design evaluation: a stratified validation split, an inverse-distance
//! k-NN surrogate, and the improvement-over-random report with bootstrap
//! uncertainty.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::Stamp;
use crate::design::{build_design, BuildOptions, Criterion};
use crate::elastic::{SUMMARY_LEN, SUMMARY_NAMES};
use crate::error::{Error, Result};
use crate::features::{euclidean, FeatureMatrix, Normalization};
use crate::rng::{rng_from, stream_seed};

/// Queries closer than this to a training point return its target.
pub const EXACT_MATCH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Corpus indices, ascending.
    pub validation: Vec<usize>,
    /// Corpus indices, ascending.
    pub pool: Vec<usize>,
    pub val_fraction: f64,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub replicates: usize,
}

/// Seeded split stratified by `strata` (one label per corpus entry). The
/// validation size is `round(val_fraction * N)`, distributed over strata by
/// largest remainder with at least one member per stratum of size >= 2.
pub fn split_pool(strata: &[f64], val_fraction: f64, seed: u64) -> Result<SplitPlan> {
    let n = strata.len();
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let target = (val_fraction * n as f64).round() as usize;
    if target == 0 || target >= n {
        return Err(Error::InvalidParameter(format!(
            "validation fraction {val_fraction} leaves an empty side for {n} MVEs"
        )));
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(s.to_bits()).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = {
        let mut g: Vec<(f64, Vec<usize>)> = groups.into_iter().map(|(k, v)| (f64::from_bits(k), v)).collect();
        g.sort_by(|a, b| a.0.total_cmp(&b.0));
        g.into_iter().map(|(_, v)| v).collect()
    };
    let exact: Vec<f64> = groups.iter().map(|g| val_fraction * g.len() as f64).collect();
    let mut quota: Vec<usize> = groups
        .iter()
        .zip(&exact)
        .map(|(g, &e)| {
            let floor = e.floor() as usize;
            if g.len() >= 2 {
                floor.clamp(1, g.len() - 1)
            } else {
                floor.min(g.len())
            }
        })
        .collect();
    let mut assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while assigned > target {
        // minimum-one quotas overshot; trim the most over-allocated stratum
        let Some(s) = (0..groups.len())
            .filter(|&s| quota[s] > 1)
            .max_by(|&a, &b| (quota[a] as f64 - exact[a]).total_cmp(&(quota[b] as f64 - exact[b])).then(b.cmp(&a)))
        else {
            break;
        };
        quota[s] -= 1;
        assigned -= 1;
    }
    while assigned < target {
        let Some(&s) = order.iter().find(|&&s| quota[s] + 1 < groups[s].len()) else {
            break;
        };
        quota[s] += 1;
        assigned += 1;
        order.retain(|&x| x != s);
        order.push(s);
    }
    let mut validation = Vec::with_capacity(assigned);
    for (s, g) in groups.iter().enumerate() {
        let mut rng = rng_from(stream_seed(seed, "split", s as u64));
        for k in rand::seq::index::sample(&mut rng, g.len(), quota[s]) {
            validation.push(g[k]);
        }
    }
    validation.sort_unstable();
    let pool = (0..n).filter(|i| validation.binary_search(i).is_err()).collect();
    Ok(SplitPlan {
        validation,
        pool,
        val_fraction,
        seed,
        fractions: vec![0.10, 0.25, 0.50],
        replicates: 10,
    })
}

/// Inverse-squared-distance weighted mean of the `k` nearest training targets.
pub fn knn_predict(
    train: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    query: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Array2<f64>> {
    let m = train.nrows();
    if m == 0 {
        return Err(Error::InvalidParameter("k-NN needs a non-empty training set".into()));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidParameter(format!("k = {k} outside [1, {m}]")));
    }
    if targets.nrows() != m || train.ncols() != query.ncols() {
        return Err(Error::InvalidParameter("k-NN shape mismatch".into()));
    }
    let train = train.as_standard_layout();
    let query = query.as_standard_layout();
    let t_rows: Vec<&[f64]> = train.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let q_rows: Vec<&[f64]> = query.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let out_cols = targets.ncols();
    let preds: Vec<Vec<f64>> = q_rows
        .par_iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = t_rows.iter().enumerate().map(|(i, t)| (euclidean(t, q), i)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < m {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            }
            d.sort_by(cmp);
            if d[0].0 < EXACT_MATCH {
                return targets.row(d[0].1).to_vec();
            }
            let mut acc = vec![0.0; out_cols];
            let mut wsum = 0.0;
            for &(dist, i) in &d {
                let w = 1.0 / (dist * dist);
                wsum += w;
                for (a, t) in acc.iter_mut().zip(targets.row(i)) {
                    *a += w * t;
                }
            }
            acc.iter_mut().for_each(|a| *a /= wsum);
            acc
        })
        .collect();
    let flat: Vec<f64> = preds.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((q_rows.len(), out_cols), flat).expect("sized"))
}

/// Surrogate targets keyed by MVE id.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    pub ids: Vec<String>,
    pub values: Array2<f64>,
}

impl TargetTable {
    pub fn write_csv<W: Write>(&self, mut out: W, stamp: Option<&Stamp>) -> Result<()> {
        if let Some(s) = stamp {
            writeln!(out, "{}", s.comment_line()).map_err(|e| Error::io("<targets>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id"];
        header.extend(SUMMARY_NAMES);
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(self.values.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<targets>", e))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let m = crate::features::read_features_csv(input, crate::features::Provenance::External)?;
        if m.dim() != SUMMARY_LEN {
            return Err(Error::format(
                "targets",
                format!("{} columns, expected {SUMMARY_LEN}", m.dim()),
            ));
        }
        Ok(TargetTable {
            ids: m.ids().to_vec(),
            values: m.values().clone(),
        })
    }
}

/// Corpus-aligned view used by every evaluation: pool features normalized
/// with the pool record (applied unchanged to validation rows) and targets
/// centered and scaled by pool statistics.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub pool_features: FeatureMatrix,
    pub validation_features: Array2<f64>,
    pub pool_targets: Array2<f64>,
    pub validation_targets: Array2<f64>,
    pub k: usize,
}

/// Rows of `values` reordered to match `ids`; missing ids are reported together.
fn align(what_ids: &[String], values: ArrayView2<'_, f64>, ids: &[String]) -> Result<Array2<f64>> {
    let pos: HashMap<&str, usize> = what_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let missing: Vec<String> = ids.iter().filter(|id| !pos.contains_key(id.as_str())).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let rows: Vec<usize> = ids.iter().map(|id| pos[id.as_str()]).collect();
    Ok(values.select(Axis(0), &rows))
}

fn column_scaling(values: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = values.nrows() as f64;
    let mean: Vec<f64> = values.columns().into_iter().map(|c| c.sum() / n).collect();
    let scale = values
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, &m)| {
            let sd = (c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
            if sd < 1e-12 * m.abs().max(1.0) {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, scale)
}

/// Pool rows of `features` (in plan order) normalized with the pool record,
/// and the validation rows under that same record.
pub fn pool_features(ids: &[String], features: &FeatureMatrix, plan: &SplitPlan) -> Result<(FeatureMatrix, Array2<f64>)> {
    let f = align(features.ids(), features.values().view(), ids)?;
    let pool_raw = f.select(Axis(0), &plan.pool);
    let record = Normalization::fit(pool_raw.view());
    let pool_ids = plan.pool.iter().map(|&i| ids[i].clone()).collect();
    let pool = FeatureMatrix::new(pool_ids, record.apply(pool_raw.view()), features.provenance())?
        .with_normalization(record.clone());
    let validation = record.apply(f.select(Axis(0), &plan.validation).view());
    Ok((pool, validation))
}

/// Seed of replicate `replicate` of a seeded criterion at fraction index `fraction_index`.
pub fn design_seed(master: u64, criterion: Criterion, fraction_index: usize, replicate: usize) -> u64 {
    stream_seed(master, &format!("design-{criterion}"), (fraction_index * 1000 + replicate) as u64)
}

impl EvalContext {
    /// `ids` lists the corpus in plan order; features and targets are looked up by id.
    pub fn new(ids: &[String], features: &FeatureMatrix, targets: &TargetTable, plan: &SplitPlan, k: usize) -> Result<Self> {
        let (pool_features, validation_features) = pool_features(ids, features, plan)?;
        let t = align(&targets.ids, targets.values.view(), ids)?;
        let pool_t = t.select(Axis(0), &plan.pool);
        let (mean, scale) = column_scaling(pool_t.view());
        let standardize = |mut a: Array2<f64>| {
            for mut row in a.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean[j]) / scale[j];
                }
            }
            a
        };
        Ok(EvalContext {
            pool_features,
            validation_features,
            pool_targets: standardize(pool_t),
            validation_targets: standardize(t.select(Axis(0), &plan.validation)),
            k,
        })
    }

    pub fn pool_size(&self) -> usize {
        self.pool_features.n_rows()
    }
}

/// Mean squared error over all validation MVEs and target components of a
/// k-NN surrogate trained on the design (indices into the pool).
pub fn evaluate_design(design: &[usize], ctx: &EvalContext) -> Result<f64> {
    let train = ctx.pool_features.values().select(Axis(0), design);
    let targets = ctx.pool_targets.select(Axis(0), design);
    let k = ctx.k.min(design.len());
    let pred = knn_predict(train.view(), targets.view(), ctx.validation_features.view(), k)?;
    let diff = &pred - &ctx.validation_targets;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub feature_set: String,
    pub criterion: Criterion,
    pub fraction: f64,
    pub replicate: usize,
    pub n_design: usize,
    pub loss_design: f64,
    pub loss_random_mean: f64,
    pub improvement_pct: f64,
    pub bootstrap_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub baseline_designs: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub build: BuildOptions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            baseline_designs: 10,
            bootstrap_resamples: 1000,
            seed: 0,
            build: BuildOptions::default(),
        }
    }
}

pub fn design_size(fraction: f64, pool: usize) -> usize {
    ((fraction * pool as f64).round() as usize).clamp(1, pool)
}

/// Standard deviation of `resamples` bootstrap means of `values`.
pub fn bootstrap_std(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = rng_from(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).sum::<f64>() / values.len() as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    (means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
}

pub fn improvement_pct(random: f64, design: f64) -> f64 {
    (random - design) / random * 100.0
}

/// One feature set evaluated under several criteria and fractions. Rows come
/// out in (criterion, fraction, replicate) order.
pub fn improvement_report(
    name: &str,
    ctx: &EvalContext,
    criteria: &[Criterion],
    plan: &SplitPlan,
    options: &ReportOptions,
) -> Result<Vec<EvalRecord>> {
    let pool = ctx.pool_size();
    let f = &ctx.pool_features;

    // random baseline per (fraction, replicate), shared by every criterion
    let baseline: Vec<Vec<f64>> = plan
        .fractions
        .par_iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let n = design_size(fraction, pool);
            (0..plan.replicates)
                .map(|r| {
                    let losses = (0..options.baseline_designs)
                        .map(|j| {
                            let seed = stream_seed(options.seed, "baseline", ((fi * 1000 + r) * 1000 + j) as u64);
                            let d = build_design(Criterion::Random, f, n, seed, &options.build)?;
                            evaluate_design(&d.indices, ctx)
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, Criterion, usize, f64)> = criteria
        .iter()
        .enumerate()
        .flat_map(|(ci, &c)| plan.fractions.iter().enumerate().map(move |(fi, &fr)| (ci, c, fi, fr)))
        .collect();
    let rows: Vec<Vec<EvalRecord>> = cells
        .par_iter()
        .map(|&(ci, criterion, fi, fraction)| {
            let n = design_size(fraction, pool);
            let twin_loss = if criterion == Criterion::Twin {
                let d = build_design(criterion, f, n, 0, &options.build)?;
                Some(evaluate_design(&d.indices, ctx)?)
            } else {
                None
            };
            let mut records = Vec::with_capacity(plan.replicates);
            for r in 0..plan.replicates {
                let loss_design = match twin_loss {
                    Some(l) => l,
                    None => {
                        let seed = design_seed(options.seed, criterion, fi, r);
                        let d = build_design(criterion, f, n, seed, &options.build)?;
                        evaluate_design(&d.indices, ctx)?
                    }
                };
                let loss_random_mean = baseline[fi][r];
                records.push(EvalRecord {
                    feature_set: name.to_string(),
                    criterion,
                    fraction,
                    replicate: r,
                    n_design: n,
                    loss_design,
                    loss_random_mean,
                    improvement_pct: improvement_pct(loss_random_mean, loss_design),
                    bootstrap_std: 0.0,
                });
            }
            let imp: Vec<f64> = records.iter().map(|r| r.improvement_pct).collect();
            let bs = bootstrap_std(
                &imp,
                options.bootstrap_resamples,
                stream_seed(options.seed, "bootstrap", (ci * 1000 + fi) as u64),
            );
            records.iter_mut().for_each(|r| r.bootstrap_std = bs);
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub feature_set: String,
    pub criterion: Criterion,
    pub fraction: f64,
    pub n_design: usize,
    pub replicates: usize,
    pub mean_loss_design: f64,
    pub mean_loss_random: f64,
    pub mean_improvement_pct: f64,
    pub bootstrap_std: f64,
}

/// Per-cell means, in first-appearance order.
pub fn summarize(records: &[EvalRecord]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    for r in records {
        let cell = out.iter_mut().find(|c| {
            c.feature_set == r.feature_set && c.criterion == r.criterion && c.fraction == r.fraction
        });
        let c = match cell {
            Some(c) => c,
            None => {
                out.push(CellSummary {
                    feature_set: r.feature_set.clone(),
                    criterion: r.criterion,
                    fraction: r.fraction,
                    n_design: r.n_design,
                    replicates: 0,
                    mean_loss_design: 0.0,
                    mean_loss_random: 0.0,
                    mean_improvement_pct: 0.0,
                    bootstrap_std: r.bootstrap_std,
                });
                out.last_mut().unwrap()
            }
        };
        c.replicates += 1;
        c.mean_loss_design += r.loss_design;
        c.mean_loss_random += r.loss_random_mean;
        c.mean_improvement_pct += r.improvement_pct;
    }
    for c in &mut out {
        let k = c.replicates as f64;
        c.mean_loss_design /= k;
        c.mean_loss_random /= k;
        c.mean_improvement_pct /= k;
    }
    out
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "feature_set",
    "criterion",
    "fraction",
    "replicate",
    "n_design",
    "loss_design",
    "loss_random_mean",
    "improvement_pct",
    "bootstrap_std",
];

pub fn write_report_csv<W: Write>(mut out: W, records: &[EvalRecord], stamp: Option<&Stamp>) -> Result<()> {
    if let Some(s) = stamp {
        writeln!(out, "{}", s.comment_line()).map_err(|e| Error::io("<report>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in records {
        w.write_record([
            r.feature_set.clone(),
            r.criterion.to_string(),
            r.fraction.to_string(),
            r.replicate.to_string(),
            r.n_design.to_string(),
            r.loss_design.to_string(),
            r.loss_random_mean.to_string(),
            r.improvement_pct.to_string(),
            r.bootstrap_std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))
}

pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<EvalRecord>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let bad = |row: usize, col: &str| Error::format("report", format!("row {row}: bad {col}"));
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(row, REPORT_COLUMNS[i]))
        };
        let int = |i: usize| -> Result<usize> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(row, REPORT_COLUMNS[i]))
        };
        out.push(EvalRecord {
            feature_set: rec.get(0).unwrap_or_default().to_string(),
            criterion: rec.get(1).unwrap_or_default().parse()?,
            fraction: num(2)?,
            replicate: int(3)?,
            n_design: int(4)?,
            loss_design: num(5)?,
            loss_random_mean: num(6)?,
            improvement_pct: num(7)?,
            bootstrap_std: num(8)?,
        });
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(mut out: W, cells: &[CellSummary], stamp: Option<&Stamp>) -> Result<()> {
    if let Some(s) = stamp {
        writeln!(out, "{}", s.comment_line()).map_err(|e| Error::io("<summary>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "feature_set",
        "criterion",
        "fraction",
        "n_design",
        "replicates",
        "mean_loss_design",
        "mean_loss_random",
        "mean_improvement_pct",
        "bootstrap_std",
    ])?;
    for c in cells {
        w.write_record([
            c.feature_set.clone(),
            c.criterion.to_string(),
            c.fraction.to_string(),
            c.n_design.to_string(),
            c.replicates.to_string(),
            c.mean_loss_design.to_string(),
            c.mean_loss_random.to_string(),
            c.mean_improvement_pct.to_string(),
            c.bootstrap_std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Provenance;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn strata(n_sizes: usize, per: usize) -> Vec<f64> {
        (0..n_sizes).flat_map(|s| std::iter::repeat_n(4.0 + s as f64, per)).collect()
    }

    #[test]
    fn split_sizes_and_strata() {
        let s = strata(12, 10);
        let plan = split_pool(&s, 0.2, 3).unwrap();
        assert_eq!(plan.validation.len(), 24);
        assert_eq!(plan.pool.len(), 96);
        for size in 4..16 {
            let size = size as f64;
            assert!(plan.validation.iter().any(|&i| s[i] == size));
            assert!(plan.pool.iter().any(|&i| s[i] == size));
        }
        assert_eq!(plan, split_pool(&s, 0.2, 3).unwrap());
        assert_ne!(plan.validation, split_pool(&s, 0.2, 4).unwrap().validation);
        assert!(split_pool(&s, 0.0, 1).is_err());
        assert!(split_pool(&s[..3], 0.01, 1).is_err());
    }

    #[test]
    fn uneven_strata_keep_every_size() {
        let mut s = strata(5, 3);
        s.extend(std::iter::repeat_n(20.0, 80));
        let plan = split_pool(&s, 0.2, 1).unwrap();
        assert_eq!(plan.validation.len(), 19);
        for size in [4.0, 5.0, 6.0, 7.0, 8.0, 20.0] {
            assert!(plan.validation.iter().any(|&i| s[i] == size));
        }
    }

    #[test]
    fn knn_exact_match_and_uniform_weights() {
        let train = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let targets = array![[1.0], [2.0], [3.0], [4.0]];
        let p = knn_predict(train.view(), targets.view(), array![[1.0, 0.0]].view(), 3).unwrap();
        assert_eq!(p[(0, 0)], 2.0);
        // equal distances give the plain mean
        let q = knn_predict(train.slice(ndarray::s![1.., ..]), targets.slice(ndarray::s![1.., ..]), array![[0.0, 0.0]].view(), 3).unwrap();
        assert!((q[(0, 0)] - 3.0).abs() < 1e-15);
        assert!(knn_predict(train.slice(ndarray::s![..0, ..]), targets.slice(ndarray::s![..0, ..]), train.view(), 1).is_err());
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = rng_from(5);
        let train = Array2::from_shape_fn((100, 4), |_| rng.random::<f64>());
        let targets = Array2::from_shape_fn((100, 3), |_| rng.random::<f64>() * 10.0);
        let query = Array2::from_shape_fn((30, 4), |_| rng.random::<f64>());
        let k = 7;
        let p = knn_predict(train.view(), targets.view(), query.view(), k).unwrap();
        for (qi, q) in query.rows().into_iter().enumerate() {
            let mut all: Vec<(f64, usize)> = (0..100)
                .map(|i| {
                    let d: f64 = (0..4).map(|l| (train[(i, l)] - q[l]).powi(2)).sum();
                    (d.sqrt(), i)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for c in 0..3 {
                let (mut num, mut den) = (0.0, 0.0);
                for &(d, i) in &all[..k] {
                    num += targets[(i, c)] / (d * d);
                    den += 1.0 / (d * d);
                }
                assert!((p[(qi, c)] - num / den).abs() < 1e-12);
            }
        }
    }

    fn toy_context(seed: u64) -> (Vec<String>, FeatureMatrix, TargetTable, SplitPlan) {
        let n = 120;
        let mut rng = rng_from(seed);
        let ids: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
        let t = Array2::from_shape_fn((n, SUMMARY_LEN), |(i, j)| x[(i, j % 3)].sin() * (j + 1) as f64 + 5.0);
        let f = FeatureMatrix::new(ids.clone(), x, Provenance::External).unwrap();
        let targets = TargetTable { ids: ids.clone(), values: t };
        let s = strata(6, 20);
        let mut plan = split_pool(&s, 0.2, seed).unwrap();
        plan.replicates = 10;
        (ids, f, targets, plan)
    }

    #[test]
    fn evaluation_determinism_and_memorization() {
        let (ids, f, t, plan) = toy_context(1);
        let ctx = EvalContext::new(&ids, &f, &t, &plan, 8).unwrap();
        let all: Vec<usize> = (0..ctx.pool_size()).collect();
        let a = evaluate_design(&all, &ctx).unwrap();
        assert_eq!(a, evaluate_design(&all, &ctx).unwrap());
        assert!(a >= 0.0);

        // validation rows inside the pool: every query is an exact match
        let mut degenerate = plan.clone();
        degenerate.pool = (0..ids.len()).collect();
        let ctx = EvalContext::new(&ids, &f, &t, &degenerate, 8).unwrap();
        let all: Vec<usize> = (0..ctx.pool_size()).collect();
        assert_eq!(evaluate_design(&all, &ctx).unwrap(), 0.0);
    }

    #[test]
    fn missing_ids_are_listed() {
        let (ids, f, t, plan) = toy_context(2);
        let short = TargetTable {
            ids: t.ids[..118].to_vec(),
            values: t.values.slice(ndarray::s![..118, ..]).to_owned(),
        };
        match EvalContext::new(&ids, &f, &short, &plan, 8) {
            Err(Error::MissingIds(m)) => assert_eq!(m, vec!["m118".to_string(), "m119".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_shape_and_random_control() {
        let (ids, f, t, plan) = toy_context(3);
        let ctx = EvalContext::new(&ids, &f, &t, &plan, 8).unwrap();
        let options = ReportOptions {
            seed: 7,
            ..ReportOptions::default()
        };
        let records = improvement_report("toy", &ctx, &Criterion::ALL, &plan, &options).unwrap();
        assert_eq!(records.len(), 4 * 3 * 10);
        let cells = summarize(&records);
        assert_eq!(cells.len(), 12);
        for c in cells.iter().filter(|c| c.criterion == Criterion::Random) {
            assert!(c.mean_improvement_pct.abs() < 2.0 * c.bootstrap_std + 1e-9, "{c:?}");
        }
        assert_eq!(records, improvement_report("toy", &ctx, &Criterion::ALL, &plan, &options).unwrap());

        let mut buf = Vec::new();
        write_report_csv(&mut buf, &records, Some(&Stamp::new("x"))).unwrap();
        assert_eq!(read_report_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn bootstrap_of_constant_is_zero() {
        assert_eq!(bootstrap_std(&[2.0; 10], 1000, 1), 0.0);
        let b = bootstrap_std(&[0.0, 1.0, 2.0, 3.0], 1000, 2);
        assert!(b > 0.3 && b < 0.8, "{b}");
    }

    #[test]
    fn target_table_round_trip() {
        let (_, _, t, _) = toy_context(4);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, None).unwrap();
        assert_eq!(TargetTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn loss_ignores_validation_order(seed in 0u64..200) {
            let (ids, f, t, plan) = toy_context(seed);
            let ctx = EvalContext::new(&ids, &f, &t, &plan, 8).unwrap();
            let mut shuffled = plan.clone();
            shuffled.validation.shuffle(&mut rng_from(seed + 1));
            let ctx2 = EvalContext::new(&ids, &f, &t, &shuffled, 8).unwrap();
            let design: Vec<usize> = (0..ctx.pool_size()).step_by(3).collect();
            let a = evaluate_design(&design, &ctx).unwrap();
            let b = evaluate_design(&design, &ctx2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn extra_training_point_keeps_exact_matches(seed in 0u64..200, extra in 0usize..50) {
            let mut rng = rng_from(seed);
            let train = Array2::from_shape_fn((50, 2), |_| rng.random::<f64>());
            let targets = Array2::from_shape_fn((50, 1), |_| rng.random::<f64>());
            let query = train.slice(ndarray::s![..5, ..]).to_owned();
            let base: Vec<usize> = (0..25).collect();
            let mut more = base.clone();
            if !more.contains(&extra) {
                more.push(extra);
            }
            let p1 = knn_predict(train.select(Axis(0), &base).view(), targets.select(Axis(0), &base).view(), query.view(), 4).unwrap();
            let p2 = knn_predict(train.select(Axis(0), &more).view(), targets.select(Axis(0), &more).view(), query.view(), 4).unwrap();
            prop_assert_eq!(p1, p2);
        }
    }
}
