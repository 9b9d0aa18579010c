use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mvedoe_core::design::load_design;
use mvedoe_core::eval::read_report_csv;
use mvedoe_core::pipeline::{Pipeline, RunConfig, Stage};
use mvedoe_core::Error;

const SMALL: &str = r#"
seed = 3
features = ["classic", "contrastive"]

[corpus]
dims = [16, 16, 16]
grain_sizes = [4.0, 6.0, 8.0]
seeds_per_size = 4
textured_count = 18

[embedding]
epochs = 3
lr = 0.2
triplets_per_epoch = 128
heldout_triplets = 64

[design]
fractions = [0.3]
replicates = 2
k = 3
baseline_designs = 2
bootstrap_resamples = 20
"#;

fn config(jobs: usize) -> RunConfig {
    let mut c = RunConfig::from_toml(SMALL).unwrap();
    c.jobs = Some(jobs);
    c
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_run_is_stamped_and_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let pa = Pipeline::new(config(1), a.clone()).unwrap();
    pa.run_all().unwrap();
    Pipeline::new(config(3), b.clone()).unwrap().run_all().unwrap();

    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    // config.toml records the worker count itself
    for (path, bytes) in sa.iter().filter(|(p, _)| !p.ends_with("config.toml")) {
        assert!(Some(bytes) == sb.get(path), "{} differs between job counts", path.display());
    }

    // every text artifact carries the tool version and config hash
    let hash = pa.config().hash();
    for (path, bytes) in &sa {
        let head: Vec<u8> = bytes.iter().take(4096).copied().collect();
        let text = String::from_utf8_lossy(&head);
        assert!(text.contains(&hash), "{} lacks the config hash", path.display());
        assert!(text.contains("mvedoe"), "{} lacks the tool stamp", path.display());
    }

    let records = read_report_csv(fs::File::open(pa.report_path()).unwrap()).unwrap();
    assert_eq!(records.len(), 2 * 4 * 2);
    assert!(records.iter().all(|r| r.loss_design >= 0.0 && r.loss_random_mean >= 0.0));
    assert!(a.join("embedding/loss_history.csv").exists());
}

#[test]
fn designs_reference_pool_members_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(0);
    c.features = vec!["classic".into()];
    let p = Pipeline::new(c, dir.path().to_path_buf()).unwrap();
    p.run_all().unwrap();
    assert!(!dir.path().join("embedding").exists());

    let rows = p.manifest().unwrap();
    let plan = p.split(&rows).unwrap();
    let pool: Vec<&str> = plan.pool.iter().map(|&i| rows[i].id.as_str()).collect();
    for entry in fs::read_dir(dir.path().join("designs/classic")).unwrap() {
        let d = load_design(&entry.unwrap().path()).unwrap();
        assert_eq!(d.indices.len(), d.n);
        assert!(d.ids.iter().all(|id| pool.contains(&id.as_str())));
    }
}

#[test]
fn stages_report_what_they_are_missing() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(config(0), dir.path().to_path_buf()).unwrap();
    for stage in [Stage::Featurize, Stage::EmbedTrain, Stage::Oracle] {
        match p.run(stage) {
            Err(Error::MissingArtifact { stage: needed, .. }) => assert_eq!(needed, "gen"),
            other => panic!("{stage:?}: {other:?}"),
        }
    }
    p.run(Stage::Gen).unwrap();
    match p.run(Stage::Embed) {
        Err(Error::MissingArtifact { stage, path }) => {
            assert_eq!(stage, "embed-train");
            assert!(path.ends_with("model.bin"));
        }
        other => panic!("{other:?}"),
    }
    match p.run(Stage::Evaluate) {
        Err(Error::MissingArtifact { .. }) => {}
        other => panic!("{other:?}"),
    }
}
