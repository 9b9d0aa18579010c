//! Shallow contrastive embedding: an affine map from normalized sub-volume
//! statistics to a 16-dimensional latent, trained with a triplet hinge loss
//! on random 16^3 crops.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{join, Header, Stamp};
use crate::error::{Error, Result};
use crate::features::{euclidean, subvolume_statistics, FeatureMatrix, Normalization, Provenance};
use crate::mve::{crop_subvolume, Mve};
use crate::rng::{rng_from, stream_seed};

pub const LATENT_DIM: usize = 16;
pub const CROP_EDGE: usize = 16;
pub const DEFAULT_MARGIN: f64 = 0.5;
const DISTANCE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    /// Corpus index shared by anchor and positive.
    pub parent: usize,
    /// Corpus index of the negative.
    pub other: usize,
}

/// Crop positions for one triplet, drawn before any statistics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletDraw {
    pub parent: usize,
    pub other: usize,
    pub origins: [[usize; 3]; 3],
}

fn crop_origin<R: Rng + ?Sized>(dims: [usize; 3], rng: &mut R) -> Result<[usize; 3]> {
    let mut o = [0; 3];
    for a in 0..3 {
        if dims[a] < CROP_EDGE {
            return Err(Error::InvalidParameter(format!(
                "MVE dims {dims:?} smaller than the {CROP_EDGE}^3 crop"
            )));
        }
        o[a] = rng.random_range(0..=dims[a] - CROP_EDGE);
    }
    Ok(o)
}

pub fn draw_triplet<R: Rng + ?Sized>(corpus: &[Mve], rng: &mut R) -> Result<TripletDraw> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "triplet sampling needs at least 2 MVEs, got {n}"
        )));
    }
    let parent = rng.random_range(0..n);
    let mut other = rng.random_range(0..n - 1);
    if other >= parent {
        other += 1;
    }
    let origins = [
        crop_origin(corpus[parent].dims(), rng)?,
        crop_origin(corpus[parent].dims(), rng)?,
        crop_origin(corpus[other].dims(), rng)?,
    ];
    Ok(TripletDraw { parent, other, origins })
}

fn crop_statistics(mve: &Mve, origin: [usize; 3]) -> Result<Vec<f64>> {
    let crop = crop_subvolume(mve, origin, [CROP_EDGE; 3])?;
    Ok(subvolume_statistics(&crop))
}

pub fn materialize(corpus: &[Mve], draw: &TripletDraw) -> Result<Triplet> {
    Ok(Triplet {
        anchor: crop_statistics(&corpus[draw.parent], draw.origins[0])?,
        positive: crop_statistics(&corpus[draw.parent], draw.origins[1])?,
        negative: crop_statistics(&corpus[draw.other], draw.origins[2])?,
        parent: draw.parent,
        other: draw.other,
    })
}

pub fn sample_triplet<R: Rng + ?Sized>(corpus: &[Mve], rng: &mut R) -> Result<Triplet> {
    let draw = draw_triplet(corpus, rng)?;
    materialize(corpus, &draw)
}

/// `count` triplets; draws are sequential, statistics are computed in parallel.
pub fn sample_triplets<R: Rng + ?Sized>(corpus: &[Mve], count: usize, rng: &mut R) -> Result<Vec<Triplet>> {
    let draws = (0..count)
        .map(|_| draw_triplet(corpus, rng))
        .collect::<Result<Vec<_>>>()?;
    draws.par_iter().map(|d| materialize(corpus, d)).collect()
}

pub fn triplet_loss(za: &[f64], zp: &[f64], zn: &[f64], margin: f64) -> f64 {
    (euclidean(za, zp) - euclidean(za, zn) + margin).max(0.0)
}

/// Gradients of the hinge with respect to `(za, zp, zn)`, or `None` when the
/// triplet is inactive.
pub fn latent_gradients(za: &[f64], zp: &[f64], zn: &[f64], margin: f64) -> Option<[Vec<f64>; 3]> {
    if triplet_loss(za, zp, zn, margin) <= 0.0 {
        return None;
    }
    let d_ap = euclidean(za, zp).max(DISTANCE_GUARD);
    let d_an = euclidean(za, zn).max(DISTANCE_GUARD);
    let u: Vec<f64> = za.iter().zip(zp).map(|(a, p)| (a - p) / d_ap).collect();
    let v: Vec<f64> = za.iter().zip(zn).map(|(a, n)| (a - n) / d_an).collect();
    let ga = u.iter().zip(&v).map(|(u, v)| u - v).collect();
    let gp = u.iter().map(|u| -u).collect();
    Some([ga, gp, v])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    /// Row-major `LATENT_DIM x h`.
    w: Vec<f64>,
    b: Vec<f64>,
    normalization: Normalization,
    margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ModelGradient {
    fn zeros(h: usize) -> Self {
        ModelGradient {
            w: vec![0.0; LATENT_DIM * h],
            b: vec![0.0; LATENT_DIM],
        }
    }

    fn add_scaled(&mut self, other: &ModelGradient, s: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += s * b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += s * b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().chain(&self.b).all(|&g| g == 0.0)
    }
}

impl EmbeddingModel {
    pub fn new(w: Vec<f64>, b: Vec<f64>, normalization: Normalization, margin: f64) -> Result<Self> {
        let h = normalization.dim();
        if w.len() != LATENT_DIM * h || b.len() != LATENT_DIM {
            return Err(Error::InvalidParameter(format!(
                "weights {} / bias {} do not match {LATENT_DIM}x{h}",
                w.len(),
                b.len()
            )));
        }
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::InvalidParameter(format!("margin must be positive, got {margin}")));
        }
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite model parameter".into()));
        }
        if (0..h).any(|j| !(normalization.max[j] >= normalization.min[j])) {
            return Err(Error::InvalidParameter("normalization record has max < min".into()));
        }
        Ok(EmbeddingModel {
            w,
            b,
            normalization,
            margin,
        })
    }

    /// Seeded Gaussian initialization with standard deviation `0.1/sqrt(h)`.
    pub fn initialize(normalization: Normalization, margin: f64, seed: u64) -> Result<Self> {
        let h = normalization.dim();
        let normal = Normal::new(0.0, 0.1 / (h as f64).sqrt()).expect("positive scale");
        let mut rng = rng_from(seed);
        let w = (0..LATENT_DIM * h).map(|_| normal.sample(&mut rng)).collect();
        let b = (0..LATENT_DIM).map(|_| normal.sample(&mut rng)).collect();
        EmbeddingModel::new(w, b, normalization, margin)
    }

    pub fn input_dim(&self) -> usize {
        self.normalization.dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Mutable view of all parameters, `W` followed by `b`.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }

    pub fn normalize_input(&self, raw: &[f64]) -> Vec<f64> {
        self.normalization.apply_row(raw)
    }

    pub fn forward_normalized(&self, x: &[f64]) -> Vec<f64> {
        let h = self.input_dim();
        (0..LATENT_DIM)
            .map(|k| {
                let row = &self.w[k * h..(k + 1) * h];
                self.b[k] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, raw: &[f64]) -> Vec<f64> {
        self.forward_normalized(&self.normalize_input(raw))
    }

    pub fn loss(&self, t: &Triplet) -> f64 {
        triplet_loss(
            &self.forward(&t.anchor),
            &self.forward(&t.positive),
            &self.forward(&t.negative),
            self.margin,
        )
    }

    fn apply(&mut self, g: &ModelGradient, lr: f64) {
        for (p, d) in self.w.iter_mut().zip(&g.w) {
            *p -= lr * d;
        }
        for (p, d) in self.b.iter_mut().zip(&g.b) {
            *p -= lr * d;
        }
    }
}

/// Loss and parameter gradient of one triplet.
pub fn triplet_gradient(model: &EmbeddingModel, t: &Triplet) -> (f64, ModelGradient) {
    let h = model.input_dim();
    let xs = [
        model.normalize_input(&t.anchor),
        model.normalize_input(&t.positive),
        model.normalize_input(&t.negative),
    ];
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| model.forward_normalized(x)).collect();
    let loss = triplet_loss(&zs[0], &zs[1], &zs[2], model.margin);
    let mut grad = ModelGradient::zeros(h);
    if let Some(gz) = latent_gradients(&zs[0], &zs[1], &zs[2], model.margin) {
        for (g, x) in gz.iter().zip(&xs) {
            for k in 0..LATENT_DIM {
                grad.b[k] += g[k];
                let row = &mut grad.w[k * h..(k + 1) * h];
                for (r, xj) in row.iter_mut().zip(x) {
                    *r += g[k] * xj;
                }
            }
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub margin: f64,
    pub triplets_per_epoch: usize,
    pub heldout_triplets: usize,
    /// Fraction of MVEs reserved for held-out triplets.
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch: 64,
            lr: 1e-2,
            seed: 0,
            margin: DEFAULT_MARGIN,
            triplets_per_epoch: 1024,
            heldout_triplets: 1000,
            heldout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.triplets_per_epoch == 0 || self.heldout_triplets == 0 {
            return Err(Error::InvalidParameter(
                "epochs, batch and triplet counts must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidParameter("lr and margin must be positive".into()));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::InvalidParameter("heldout_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub train: f64,
    pub heldout: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    /// Row 0 evaluates the initial parameters.
    pub history: Vec<LossRecord>,
    pub heldout: Vec<Triplet>,
}

fn mean_loss(model: &EmbeddingModel, triplets: &[Triplet]) -> f64 {
    let losses: Vec<f64> = triplets.par_iter().map(|t| model.loss(t)).collect();
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Splits corpus indices into (train, held-out), seeded.
pub fn heldout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let k = ((n as f64 * fraction).round() as usize).clamp(2, n.saturating_sub(2));
    let mut rng = rng_from(seed);
    let mut held = rand::seq::index::sample(&mut rng, n, k).into_vec();
    held.sort_unstable();
    let train = (0..n).filter(|i| held.binary_search(i).is_err()).collect();
    (train, held)
}

/// The fixed held-out triplet set `train_embedding` scores after every epoch,
/// drawn only from MVEs excluded from training.
pub fn heldout_triplets(corpus: &[Mve], config: &TrainConfig) -> Result<Vec<Triplet>> {
    let (_, held_idx) = heldout_split(corpus.len(), config.heldout_fraction, stream_seed(config.seed, "heldout", 0));
    let held: Vec<Mve> = held_idx.iter().map(|&i| corpus[i].clone()).collect();
    sample_triplets(&held, config.heldout_triplets, &mut rng_from(stream_seed(config.seed, "heldout-triplets", 0)))
}

pub fn train_embedding(corpus: &[Mve], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "embedding training needs at least 10 MVEs, got {}",
            corpus.len()
        )));
    }
    let (train_idx, _) = heldout_split(corpus.len(), config.heldout_fraction, stream_seed(config.seed, "heldout", 0));
    let train: Vec<Mve> = train_idx.iter().map(|&i| corpus[i].clone()).collect();

    let stats: Vec<Vec<f64>> = train.par_iter().map(subvolume_statistics).collect();
    let h = stats[0].len();
    let flat: Vec<f64> = stats.into_iter().flatten().collect();
    let record = Normalization::fit(ndarray::ArrayView2::from_shape((train.len(), h), &flat).expect("sized"));
    let mut model = EmbeddingModel::initialize(record, config.margin, stream_seed(config.seed, "init", 0))?;

    let heldout = heldout_triplets(corpus, config)?;
    let mut history = Vec::with_capacity(config.epochs + 1);
    let diverged = |epoch: usize, history: &[LossRecord]| Error::Diverged {
        epoch,
        history: history.iter().map(|r| r.train).collect(),
    };

    for epoch in 1..=config.epochs {
        let mut rng = rng_from(stream_seed(config.seed, "triplets", epoch as u64));
        let triplets = sample_triplets(&train, config.triplets_per_epoch, &mut rng)?;
        if epoch == 1 {
            history.push(LossRecord {
                epoch: 0,
                train: mean_loss(&model, &triplets),
                heldout: mean_loss(&model, &heldout),
            });
        }
        let mut total = 0.0;
        for batch in triplets.chunks(config.batch) {
            let parts: Vec<(f64, ModelGradient)> = batch.par_iter().map(|t| triplet_gradient(&model, t)).collect();
            let mut grad = ModelGradient::zeros(h);
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &parts {
                total += loss;
                grad.add_scaled(g, scale);
            }
            if !total.is_finite() || grad.w.iter().chain(&grad.b).any(|g| !g.is_finite()) {
                return Err(diverged(epoch, &history));
            }
            model.apply(&grad, config.lr);
        }
        let record = LossRecord {
            epoch,
            train: total / triplets.len() as f64,
            heldout: mean_loss(&model, &heldout),
        };
        if !record.heldout.is_finite() {
            history.push(record);
            return Err(diverged(epoch, &history));
        }
        history.push(record);
    }
    Ok(TrainOutcome { model, history, heldout })
}

pub fn embed(model: &EmbeddingModel, mve: &Mve) -> Vec<f64> {
    model.forward(&subvolume_statistics(mve))
}

/// Embeds every MVE into a contrastive feature matrix.
pub fn embed_corpus(model: &EmbeddingModel, ids: Vec<String>, corpus: &[Mve]) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = corpus.par_iter().map(|m| embed(model, m)).collect();
    FeatureMatrix::from_rows(ids, rows, Provenance::Contrastive)
}

/// Fraction of triplets with `d_an >= d_ap + margin`.
pub fn margin_satisfaction(model: &EmbeddingModel, triplets: &[Triplet]) -> f64 {
    let ok = triplets.iter().filter(|t| model.loss(t) == 0.0).count();
    ok as f64 / triplets.len().max(1) as f64
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

const MODEL_KIND: &str = "mvedoe-embedding-v1";

pub fn write_model<W: Write>(out: &mut W, model: &EmbeddingModel, stamp: Option<&Stamp>) -> Result<()> {
    let io = |e| Error::io("<model>", e);
    Header::new(MODEL_KIND)
        .with("inputs", model.input_dim())
        .with("latent", LATENT_DIM)
        .with("margin", model.margin)
        .with("norm_min", join(&model.normalization.min))
        .with("norm_max", join(&model.normalization.max))
        .stamp(stamp)
        .write(out)
        .map_err(io)?;
    let mut buf = Vec::with_capacity(8 * (model.w.len() + LATENT_DIM));
    for v in model.w.iter().chain(&model.b) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_model<R: BufRead>(input: &mut R) -> Result<EmbeddingModel> {
    let h = Header::read(input, MODEL_KIND)?;
    let inputs: usize = h.parse_value("inputs")?;
    let latent: usize = h.parse_value("latent")?;
    if latent != LATENT_DIM {
        return Err(Error::format("model", format!("latent dimension {latent}, expected {LATENT_DIM}")));
    }
    let normalization = Normalization {
        min: h.parse_list("norm_min")?,
        max: h.parse_list("norm_max")?,
    };
    if normalization.min.len() != inputs || normalization.max.len() != inputs {
        return Err(Error::format("model", "normalization record width mismatch"));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload).map_err(|e| Error::io("<model>", e))?;
    let expected = 8 * LATENT_DIM * (inputs + 1);
    if payload.len() != expected {
        return Err(Error::format("model", format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    let mut values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let b = values.split_off(LATENT_DIM * inputs);
    EmbeddingModel::new(values, b, normalization, h.parse_value("margin")?)
}

pub fn save_model(path: &Path, model: &EmbeddingModel, stamp: Option<&Stamp>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_model(&mut w, model, stamp)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    read_model(&mut r)
}

pub fn write_history<W: Write>(mut out: W, history: &[LossRecord], stamp: Option<&Stamp>) -> Result<()> {
    if let Some(s) = stamp {
        writeln!(out, "{}", s.comment_line()).map_err(|e| Error::io("<history>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "heldout_loss"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.train.to_string(), r.heldout.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<history>", e))
}
