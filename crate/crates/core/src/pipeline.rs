//! Run configuration and the on-disk stages: gen, featurize, embed-train,
//! embed, design, oracle, evaluate, report and demo-fig5.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::Stamp;
use crate::design::{build_design, design_diagnostics, fig5_cloud, save_design, write_diagnostics_csv, BuildOptions, Criterion, DesignFile};
use crate::elastic::{field_summary, oracle_field, OracleConfig};
use crate::embed::{embed_corpus, load_model, save_model, train_embedding, write_history, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{
    design_seed, design_size, improvement_report, pool_features, read_report_csv, split_pool, summarize, write_report_csv,
    write_summary_csv, EvalContext, ReportOptions, SplitPlan, TargetTable,
};
use crate::features::{
    classic_descriptor, load_features, load_features_as, normalize_features, save_features, FeatureFormat, FeatureMatrix, Provenance,
};
use crate::mve::{corpus_id, generate_item, load_mve, save_mve, CorpusSpec, Mve};
use crate::rng::stream_seed;
use crate::texture::retained_components;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub dims: [usize; 3],
    pub grain_sizes: Vec<f64>,
    pub seeds_per_size: usize,
    pub textured_count: usize,
    pub perturb_deg: f64,
}

impl Default for CorpusConfig {
    /// Desk scale: 13 sizes x 8 seeds untextured plus 496 textured MVEs.
    fn default() -> Self {
        CorpusConfig {
            dims: [32, 32, 32],
            grain_sizes: (4..=16).map(f64::from).collect(),
            seeds_per_size: 8,
            textured_count: 496,
            perturb_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub criteria: Vec<Criterion>,
    pub fractions: Vec<f64>,
    pub replicates: usize,
    pub maxpro_exponent: f64,
    pub val_fraction: f64,
    pub k: usize,
    pub baseline_designs: usize,
    pub bootstrap_resamples: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            criteria: Criterion::ALL.to_vec(),
            fractions: vec![0.10, 0.25, 0.50],
            replicates: 10,
            maxpro_exponent: 2.0,
            val_fraction: 0.2,
            k: 8,
            baseline_designs: 10,
            bootstrap_resamples: 1000,
        }
    }
}

/// `classic`, `contrastive` or `external:PATH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSet {
    Classic,
    Contrastive,
    External(PathBuf),
}

impl FeatureSet {
    /// Name used for artifact files and report rows.
    pub fn name(&self) -> String {
        match self {
            FeatureSet::Classic => "classic".into(),
            FeatureSet::Contrastive => "contrastive".into(),
            FeatureSet::External(p) => format!(
                "external-{}",
                p.file_stem().and_then(|s| s.to_str()).unwrap_or("features")
            ),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSet::Classic => f.write_str("classic"),
            FeatureSet::Contrastive => f.write_str("contrastive"),
            FeatureSet::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(FeatureSet::Classic),
            "contrastive" => Ok(FeatureSet::Contrastive),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(FeatureSet::External(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "unknown feature set `{s}` (expected classic, contrastive or external:PATH)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub features: Vec<String>,
    pub corpus: CorpusConfig,
    pub embedding: TrainConfig,
    pub design: DesignConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20_240_601,
            out: None,
            jobs: None,
            features: vec!["classic".into(), "contrastive".into()],
            corpus: CorpusConfig::default(),
            embedding: TrainConfig::default(),
            design: DesignConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn feature_sets(&self) -> Result<Vec<FeatureSet>> {
        if self.features.is_empty() {
            return Err(Error::Config("no feature sets configured".into()));
        }
        self.features.iter().map(|s| s.parse()).collect()
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            dims: self.corpus.dims,
            grain_sizes: self.corpus.grain_sizes.clone(),
            seeds_per_size: self.corpus.seeds_per_size,
            textured_count: self.corpus.textured_count,
            perturb_deg: self.corpus.perturb_deg,
            seed: stream_seed(self.seed, "corpus", 0),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: stream_seed(self.seed, "embedding", 0),
            ..self.embedding.clone()
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            baseline_designs: self.design.baseline_designs,
            bootstrap_resamples: self.design.bootstrap_resamples,
            seed: stream_seed(self.seed, "evaluate", 0),
            build: self.build_options(),
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            maxpro_exponent: self.design.maxpro_exponent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.corpus_spec().validate().map_err(cfg)?;
        if self.corpus_spec().total() < 10 {
            return Err(Error::Config("corpus needs at least 10 MVEs".into()));
        }
        if self.corpus.dims.iter().any(|&d| d < 16) {
            return Err(Error::Config(format!("dims {:?} smaller than 16^3 crops", self.corpus.dims)));
        }
        self.train_config().validate().map_err(cfg)?;
        self.feature_sets()?;
        let d = &self.design;
        if d.criteria.is_empty() || d.fractions.is_empty() {
            return Err(Error::Config("design needs at least one criterion and fraction".into()));
        }
        if d.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if d.replicates == 0 || d.k == 0 || d.baseline_designs == 0 {
            return Err(Error::Config("replicates, k and baseline_designs must be positive".into()));
        }
        if !(d.maxpro_exponent > 0.0) {
            return Err(Error::Config("maxpro_exponent must be positive".into()));
        }
        crate::elastic::cubic_stiffness(self.oracle.c11, self.oracle.c12, self.oracle.c44).map_err(cfg)?;
        Ok(())
    }

    /// SHA-256 of the effective config, excluding `out` and `jobs`.
    pub fn hash(&self) -> String {
        let hashed = RunConfig {
            out: None,
            jobs: None,
            ..self.clone()
        };
        Sha256::digest(hashed.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Featurize,
    EmbedTrain,
    Embed,
    Design,
    Oracle,
    Evaluate,
    Report,
    DemoFig5,
}

impl Stage {
    pub const PIPELINE: [Stage; 8] = [
        Stage::Gen,
        Stage::EmbedTrain,
        Stage::Embed,
        Stage::Featurize,
        Stage::Design,
        Stage::Oracle,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Featurize => "featurize",
            Stage::EmbedTrain => "embed-train",
            Stage::Embed => "embed",
            Stage::Design => "design",
            Stage::Oracle => "oracle",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::DemoFig5 => "demo-fig5",
        }
    }
}

/// Corpus entry as recorded by `gen`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub grain_size: f64,
    pub texture: String,
    pub n_grains: usize,
}

pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    stamp: Stamp,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

impl Pipeline {
    pub fn new(config: RunConfig, out: PathBuf) -> Result<Self> {
        config.validate()?;
        let stamp = Stamp::new(config.hash());
        Ok(Pipeline { config, out, stamp })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join("corpus").join("manifest.csv")
    }

    pub fn mve_path(&self, id: &str) -> PathBuf {
        self.out.join("corpus").join(format!("{id}.mve"))
    }

    pub fn features_path(&self, set: &FeatureSet) -> PathBuf {
        self.out.join("features").join(format!("{}.csv", set.name()))
    }

    pub fn model_path(&self) -> PathBuf {
        self.out.join("embedding").join("model.bin")
    }

    pub fn history_path(&self) -> PathBuf {
        self.out.join("embedding").join("loss_history.csv")
    }

    pub fn split_path(&self) -> PathBuf {
        self.out.join("designs").join("split.toml")
    }

    pub fn design_path(&self, set: &FeatureSet, criterion: Criterion, fraction: f64, replicate: usize) -> PathBuf {
        self.out
            .join("designs")
            .join(set.name())
            .join(format!("{criterion}_f{fraction}_r{replicate}.toml"))
    }

    pub fn targets_path(&self) -> PathBuf {
        self.out.join("oracle").join("targets.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join("evaluation").join("report.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out.join("evaluation").join("summary.csv")
    }

    fn require(path: PathBuf, stage: Stage) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                path,
                stage: stage.name(),
            })
        }
    }

    /// Runs one stage inside a worker pool of the configured width and
    /// returns the artifacts it wrote.
    pub fn run(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        let jobs = self.config.jobs.unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            create_dir(&self.out)?;
            let mut written = vec![self.write_config()?];
            written.extend(match stage {
                Stage::Gen => self.gen()?,
                Stage::Featurize => self.featurize()?,
                Stage::EmbedTrain => self.embed_train()?,
                Stage::Embed => self.embed()?,
                Stage::Design => self.design()?,
                Stage::Oracle => self.oracle()?,
                Stage::Evaluate => self.evaluate()?,
                Stage::Report => self.report()?,
                Stage::DemoFig5 => self.demo_fig5()?,
            });
            Ok(written)
        })
    }

    /// gen, embed-train, embed, featurize, design, oracle, evaluate, report.
    pub fn run_all(&self) -> Result<Vec<PathBuf>> {
        let needs_model = self.config.feature_sets()?.contains(&FeatureSet::Contrastive);
        let mut written = Vec::new();
        for stage in Stage::PIPELINE {
            if matches!(stage, Stage::EmbedTrain | Stage::Embed) && !needs_model {
                continue;
            }
            written.extend(self.run(stage)?);
        }
        Ok(written)
    }

    fn write_config(&self) -> Result<PathBuf> {
        let path = self.out.join("config.toml");
        let text = format!(
            "{}\n# retained GSH components: {:?}\n{}",
            self.stamp.comment_line(),
            retained_components(),
            self.config.to_toml()
        );
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    // -- gen ----------------------------------------------------------------

    fn gen(&self) -> Result<Vec<PathBuf>> {
        let spec = self.config.corpus_spec();
        create_dir(&self.out.join("corpus"))?;
        let plan = spec.plan();
        let rows: Vec<ManifestRow> = plan
            .par_iter()
            .map(|item| {
                let mve = generate_item(&spec, item)?;
                let id = corpus_id(item.index);
                save_mve(&self.mve_path(&id), &mve, Some(&self.stamp))?;
                Ok(ManifestRow {
                    id,
                    grain_size: item.grain_size,
                    texture: item.texture.kind().to_string(),
                    n_grains: mve.n_grains(),
                })
            })
            .collect::<Result<_>>()?;
        let path = self.manifest_path();
        write_with(&path, |w| {
            writeln!(w, "{}", self.stamp.comment_line()).map_err(|e| Error::io(&path, e))?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["id", "grain_size", "texture", "n_grains"])?;
            for r in &rows {
                c.write_record([r.id.clone(), r.grain_size.to_string(), r.texture.clone(), r.n_grains.to_string()])?;
            }
            c.flush().map_err(|e| Error::io(&path, e))
        })?;
        let mut written: Vec<PathBuf> = rows.iter().map(|r| self.mve_path(&r.id)).collect();
        written.push(path);
        Ok(written)
    }

    pub fn manifest(&self) -> Result<Vec<ManifestRow>> {
        let path = Self::require(self.manifest_path(), Stage::Gen)?;
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = || Error::format("manifest", format!("bad row {rec:?}"));
            rows.push(ManifestRow {
                id: rec.get(0).ok_or_else(bad)?.to_string(),
                grain_size: rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
                texture: rec.get(2).ok_or_else(bad)?.to_string(),
                n_grains: rec.get(3).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            });
        }
        Ok(rows)
    }

    pub fn load_corpus(&self) -> Result<(Vec<ManifestRow>, Vec<Mve>)> {
        let rows = self.manifest()?;
        let mves = rows
            .par_iter()
            .map(|r| {
                let path = Self::require(self.mve_path(&r.id), Stage::Gen)?;
                load_mve(&path)
            })
            .collect::<Result<_>>()?;
        Ok((rows, mves))
    }

    fn ids(rows: &[ManifestRow]) -> Vec<String> {
        rows.iter().map(|r| r.id.clone()).collect()
    }

    // -- features -----------------------------------------------------------

    fn featurize(&self) -> Result<Vec<PathBuf>> {
        let (rows, mves) = self.load_corpus()?;
        create_dir(&self.out.join("features"))?;
        let mut written = Vec::new();
        for set in self.config.feature_sets()? {
            let f = match &set {
                FeatureSet::Classic => {
                    let values: Vec<Vec<f64>> = mves.par_iter().map(classic_descriptor).collect();
                    FeatureMatrix::from_rows(Self::ids(&rows), values, Provenance::Classic)?
                }
                FeatureSet::Contrastive => self.contrastive_features(&rows, &mves)?,
                FeatureSet::External(path) => self.ingest_external(path, &rows)?,
            };
            let path = self.features_path(&set);
            save_features(&path, &f, Some(&self.stamp))?;
            written.push(path);
        }
        Ok(written)
    }

    fn contrastive_features(&self, rows: &[ManifestRow], mves: &[Mve]) -> Result<FeatureMatrix> {
        let model = load_model(&Self::require(self.model_path(), Stage::EmbedTrain)?)?;
        embed_corpus(&model, Self::ids(rows), mves)
    }

    fn ingest_external(&self, path: &Path, rows: &[ManifestRow]) -> Result<FeatureMatrix> {
        if !path.exists() {
            return Err(Error::Config(format!("external feature file {} not found", path.display())));
        }
        let format = FeatureFormat::from_path(path);
        let f = load_features(path, format)?;
        let f = match format {
            // binary files carry no ids: rows are taken in corpus order
            FeatureFormat::Binary => {
                if f.n_rows() != rows.len() {
                    return Err(Error::format(
                        "features",
                        format!("{} rows for {} corpus MVEs", f.n_rows(), rows.len()),
                    ));
                }
                FeatureMatrix::new(Self::ids(rows), f.values().clone(), Provenance::External)?
            }
            FeatureFormat::Csv => f,
        };
        let missing: Vec<String> = rows.iter().filter(|r| f.position(&r.id).is_none()).map(|r| r.id.clone()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingIds(missing));
        }
        Ok(f)
    }

    // -- embedding ----------------------------------------------------------

    fn embed_train(&self) -> Result<Vec<PathBuf>> {
        let (_, mves) = self.load_corpus()?;
        let outcome = train_embedding(&mves, &self.config.train_config())?;
        create_dir(&self.out.join("embedding"))?;
        save_model(&self.model_path(), &outcome.model, Some(&self.stamp))?;
        let hist = self.history_path();
        write_with(&hist, |w| write_history(w, &outcome.history, Some(&self.stamp)))?;
        Ok(vec![self.model_path(), hist])
    }

    fn embed(&self) -> Result<Vec<PathBuf>> {
        let (rows, mves) = self.load_corpus()?;
        let f = self.contrastive_features(&rows, &mves)?;
        create_dir(&self.out.join("features"))?;
        let path = self.features_path(&FeatureSet::Contrastive);
        save_features(&path, &f, Some(&self.stamp))?;
        Ok(vec![path])
    }

    // -- designs ------------------------------------------------------------

    pub fn split(&self, rows: &[ManifestRow]) -> Result<SplitPlan> {
        let strata: Vec<f64> = rows.iter().map(|r| r.grain_size).collect();
        let mut plan = split_pool(&strata, self.config.design.val_fraction, stream_seed(self.config.seed, "split", 0))?;
        plan.fractions = self.config.design.fractions.clone();
        plan.replicates = self.config.design.replicates;
        Ok(plan)
    }

    pub fn load_feature_set(&self, set: &FeatureSet) -> Result<FeatureMatrix> {
        let stage = match set {
            FeatureSet::Contrastive => Stage::Embed,
            _ => Stage::Featurize,
        };
        let path = Self::require(self.features_path(set), stage)?;
        let provenance = match set {
            FeatureSet::Classic => Provenance::Classic,
            FeatureSet::Contrastive => Provenance::Contrastive,
            FeatureSet::External(_) => Provenance::External,
        };
        load_features_as(&path, FeatureFormat::Csv, provenance)
    }

    fn design(&self) -> Result<Vec<PathBuf>> {
        let rows = self.manifest()?;
        let ids = Self::ids(&rows);
        let plan = self.split(&rows)?;
        create_dir(&self.out.join("designs"))?;
        let split = self.split_path();
        fs::write(&split, format!("{}\n{}", self.stamp.comment_line(), toml::to_string(&plan).expect("plan serializes")))
            .map_err(|e| Error::io(&split, e))?;
        let pool_sizes: Vec<f64> = plan.pool.iter().map(|&i| rows[i].grain_size).collect();
        let options = self.config.report_options();
        let mut written = vec![split];
        let mut files = Vec::new();
        for set in self.config.feature_sets()? {
            let features = self.load_feature_set(&set)?;
            let (pool, _) = pool_features(&ids, &features, &plan)?;
            create_dir(&self.out.join("designs").join(set.name()))?;
            for &criterion in &self.config.design.criteria {
                for (fi, &fraction) in plan.fractions.iter().enumerate() {
                    let n = design_size(fraction, pool.n_rows());
                    let replicates = if criterion == Criterion::Twin { 1 } else { plan.replicates };
                    let built: Vec<(PathBuf, DesignFile)> = (0..replicates)
                        .into_par_iter()
                        .map(|r| {
                            let seed = design_seed(options.seed, criterion, fi, r);
                            let d = build_design(criterion, &pool, n, seed, &options.build)?;
                            let diag = design_diagnostics(&d, &pool, Some(&pool_sizes));
                            let file = DesignFile::new(&d, pool.ids(), Some(diag), &self.stamp);
                            let path = self.design_path(&set, criterion, fraction, r);
                            save_design(&path, &file)?;
                            Ok((path, file))
                        })
                        .collect::<Result<_>>()?;
                    for (p, f) in built {
                        written.push(p);
                        files.push(f);
                    }
                }
            }
        }
        let diag = self.out.join("designs").join("diagnostics.csv");
        write_with(&diag, |w| write_diagnostics_csv(w, &files, Some(&self.stamp)))?;
        written.push(diag);
        Ok(written)
    }

    // -- oracle -------------------------------------------------------------

    fn oracle(&self) -> Result<Vec<PathBuf>> {
        let (rows, mves) = self.load_corpus()?;
        let summaries: Vec<[f64; crate::elastic::SUMMARY_LEN]> = mves
            .par_iter()
            .map(|m| oracle_field(m, &self.config.oracle).map(|f| field_summary(&f)))
            .collect::<Result<_>>()?;
        let flat: Vec<f64> = summaries.iter().flatten().copied().collect();
        let table = TargetTable {
            ids: Self::ids(&rows),
            values: Array2::from_shape_vec((rows.len(), crate::elastic::SUMMARY_LEN), flat).expect("sized"),
        };
        create_dir(&self.out.join("oracle"))?;
        let path = self.targets_path();
        write_with(&path, |w| table.write_csv(w, Some(&self.stamp)))?;
        Ok(vec![path])
    }

    pub fn load_targets(&self) -> Result<TargetTable> {
        let path = Self::require(self.targets_path(), Stage::Oracle)?;
        TargetTable::read_csv(fs::File::open(&path).map_err(|e| Error::io(&path, e))?)
    }

    // -- evaluation ---------------------------------------------------------

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let rows = self.manifest()?;
        let ids = Self::ids(&rows);
        let plan = self.split(&rows)?;
        let targets = self.load_targets()?;
        let options = self.config.report_options();
        let mut records = Vec::new();
        for set in self.config.feature_sets()? {
            let features = self.load_feature_set(&set)?;
            let ctx = EvalContext::new(&ids, &features, &targets, &plan, self.config.design.k)?;
            records.extend(improvement_report(&set.name(), &ctx, &self.config.design.criteria, &plan, &options)?);
        }
        create_dir(&self.out.join("evaluation"))?;
        let path = self.report_path();
        write_with(&path, |w| write_report_csv(w, &records, Some(&self.stamp)))?;
        Ok(vec![path])
    }

    fn report(&self) -> Result<Vec<PathBuf>> {
        let path = Self::require(self.report_path(), Stage::Evaluate)?;
        let records = read_report_csv(fs::File::open(&path).map_err(|e| Error::io(&path, e))?)?;
        let cells = summarize(&records);
        let out = self.summary_path();
        write_with(&out, |w| write_summary_csv(w, &cells, Some(&self.stamp)))?;
        Ok(vec![out])
    }

    // -- demo ---------------------------------------------------------------

    fn demo_fig5(&self) -> Result<Vec<PathBuf>> {
        let dir = self.out.join("fig5");
        create_dir(&dir)?;
        let cloud = fig5_cloud(stream_seed(self.config.seed, "fig5", 0));
        let cloud_path = dir.join("cloud.csv");
        save_features(&cloud_path, &cloud, Some(&self.stamp))?;
        let f = normalize_features(&cloud)?;
        let options = self.config.build_options();
        let mut written = vec![cloud_path];
        let mut files = Vec::new();
        for criterion in Criterion::ALL {
            for n in FIG5_SIZES {
                let seed = stream_seed(self.config.seed, &format!("fig5-{criterion}"), n as u64);
                let d = build_design(criterion, &f, n, seed, &options)?;
                let diag = design_diagnostics(&d, &f, None);
                let file = DesignFile::new(&d, f.ids(), Some(diag), &self.stamp);
                let path = dir.join(format!("{criterion}_n{n}.toml"));
                save_design(&path, &file)?;
                written.push(path);
                files.push(file);
            }
        }
        let diag = dir.join("diagnostics.csv");
        write_with(&diag, |w| write_diagnostics_csv(w, &files, Some(&self.stamp)))?;
        written.push(diag);
        Ok(written)
    }
}

pub const FIG5_SIZES: [usize; 3] = [10, 50, 200];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_set_parsing() {
        assert_eq!("classic".parse::<FeatureSet>().unwrap(), FeatureSet::Classic);
        let e: FeatureSet = "external:/tmp/vae.csv".parse().unwrap();
        assert_eq!(e.name(), "external-vae");
        assert_eq!(e.to_string(), "external:/tmp/vae.csv");
        assert!(matches!("vae".parse::<FeatureSet>(), Err(Error::Config(_))));
        assert!("external:".parse::<FeatureSet>().is_err());
    }

    #[test]
    fn config_round_trip_and_hash() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let moved = RunConfig {
            out: Some("elsewhere".into()),
            jobs: Some(3),
            ..c.clone()
        };
        assert_eq!(moved.hash(), c.hash());
        let reseeded = RunConfig { seed: 1, ..c.clone() };
        assert_ne!(reseeded.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c = RunConfig::from_toml("seed = 5\n[design]\nk = 3\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.design.k, 3);
        assert_eq!(c.design.fractions, vec![0.10, 0.25, 0.50]);
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
    }

    #[test]
    fn desk_corpus_size() {
        let c = RunConfig::default();
        assert_eq!(c.corpus_spec().total(), 600);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let mut c = RunConfig::default();
        c.design.fractions = vec![1.5];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.corpus.grain_sizes = vec![40.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.oracle.c44 = -1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_upstream_artifacts_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(RunConfig::default(), dir.path().to_path_buf()).unwrap();
        match p.run(Stage::Featurize) {
            Err(Error::MissingArtifact { path, stage }) => {
                assert_eq!(stage, "gen");
                assert!(path.ends_with("corpus/manifest.csv"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(p.run(Stage::Report), Err(Error::MissingArtifact { stage: "evaluate", .. })));
    }
}
