use std::path::Path;

use intent_discovery::io::write_json;
use intent_discovery::pipeline::{self, Manifest, RunConfig, RunStatus, ARTIFACTS};
use intent_discovery::synthetic::{self, SyntheticConfig};
use intent_discovery::Error;

fn small() -> SyntheticConfig {
    SyntheticConfig {
        dim: 8,
        train_per_intent: 40,
        ood_intents: 8,
        ood_per_intent: 15,
        unlabeled_seen_per_intent: 10,
        unlabeled_novel_per_intent: 15,
        ..SyntheticConfig::default()
    }
}

fn setup(dir: &Path, gen: &SyntheticConfig) -> RunConfig {
    let corpus = synthetic::generate(gen).unwrap();
    let paths = corpus.write(dir).unwrap();
    let mut cfg = paths.run_config(dir.join("out"), gen.seed);
    cfg.metric.train.epochs = 5;
    cfg
}

fn read_manifest(cfg: &RunConfig) -> Manifest {
    serde_json::from_slice(&std::fs::read(cfg.paths.out_dir.join(pipeline::MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &small());
    let out = pipeline::cmd_pipeline(&cfg, true).unwrap();
    let names: Vec<&str> = out.manifest.artifacts.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ARTIFACTS);
    assert_eq!(out.manifest.status, RunStatus::Complete);
    for a in &out.manifest.artifacts {
        let bytes = std::fs::read(cfg.paths.out_dir.join(&a.name)).unwrap();
        assert_eq!(pipeline::sha256_hex(&bytes), a.sha256);
    }
    assert_eq!(read_manifest(&cfg), out.manifest);
    assert!(out.report.timings_ms.is_none());
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &small());
    pipeline::cmd_pipeline(&cfg, true).unwrap();
    let first = std::fs::read(cfg.paths.out_dir.join(pipeline::NOVEL_FILE)).unwrap();
    let m1 = read_manifest(&cfg);
    pipeline::cmd_pipeline(&cfg, true).unwrap();
    assert_eq!(first, std::fs::read(cfg.paths.out_dir.join(pipeline::NOVEL_FILE)).unwrap());
    assert_eq!(m1, read_manifest(&cfg));
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &small());
    std::fs::create_dir_all(&cfg.paths.out_dir).unwrap();
    let det = pipeline::cmd_detect(&cfg).unwrap();
    assert!(!det.detection.novel.is_empty());
    let disc = pipeline::cmd_discover(&cfg).unwrap();
    assert_eq!(disc.artifact.clustering.len(), det.detection.novel.len());
    let link = pipeline::cmd_link(&cfg).unwrap();
    assert_eq!(link.taxonomy.novel_intent_count(), disc.artifact.clustering.k());
    let report = pipeline::cmd_evaluate(&cfg).unwrap();
    assert!(report.nmi.is_some());
}

#[test]
fn m_unseen_without_ood_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &SyntheticConfig { ood_intents: 0, ..small() });
    std::fs::create_dir_all(&cfg.paths.out_dir).unwrap();
    let err = pipeline::cmd_detect(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn constraint_count_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let gen = small();
    let mut cfg = setup(dir.path(), &gen);
    let corpus = synthetic::generate(&gen).unwrap();
    let cs = synthetic::truth_constraints(&corpus.novel_groups(), 2, 3, 1).unwrap();
    let path = dir.path().join("constraints.json");
    write_json(&path, &cs).unwrap();
    cfg.paths.constraints = Some(path);
    std::fs::create_dir_all(&cfg.paths.out_dir).unwrap();
    let det = pipeline::cmd_detect(&cfg).unwrap();
    let disc = pipeline::cmd_discover(&cfg).unwrap();
    let expected = cs.restrict_to(&det.detection.novel).len();
    assert!(expected > 0);
    assert_eq!(disc.artifact.constraints_applied, expected);
    assert_eq!(disc.report.constraints_applied, Some(expected));
}

#[test]
fn no_unlabeled_rows_means_no_novel_utterances() {
    let dir = tempfile::tempdir().unwrap();
    let gen = SyntheticConfig {
        unlabeled_seen_per_intent: 0,
        unlabeled_novel_per_intent: 0,
        ..small()
    };
    let cfg = setup(dir.path(), &gen);
    let out = pipeline::cmd_pipeline(&cfg, true).unwrap();
    assert!(out.discover.artifact.clustering.is_empty());
    assert_eq!(out.discover.report.note.as_deref(), Some("no novel utterances"));
    assert_eq!(out.link.taxonomy.novel_domain_count(), 0);
    assert_eq!(out.manifest.status, RunStatus::Complete);
}

#[test]
fn single_novel_intent_gives_one_domain() {
    let dir = tempfile::tempdir().unwrap();
    let gen = SyntheticConfig {
        novel_domains: 1,
        novel_intents_per_domain: 1,
        unlabeled_seen_per_intent: 0,
        ..SyntheticConfig::default()
    };
    let mut cfg = setup(dir.path(), &gen);
    cfg.metric.train.epochs = 15;
    let out = pipeline::cmd_pipeline(&cfg, true).unwrap();
    assert_eq!(out.discover.artifact.clustering.k(), 1);
    assert_eq!(out.link.taxonomy.novel_domain_count(), 1);
}

#[test]
fn single_seen_domain_fails_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &SyntheticConfig { seen_domains: 1, ..small() });
    let err = pipeline::cmd_pipeline(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    // quadruplets need an other-domain negative, so the metric stage is the first to notice
    assert!(matches!(err, Error::Stage { stage: "discover", .. }), "{err}");
    let m = read_manifest(&cfg);
    assert!(matches!(m.status, RunStatus::Failed { ref stage, .. } if stage == "discover"));
    let names: Vec<&str> = m.artifacts.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ARTIFACTS[..3]);
}

#[test]
fn missing_domain_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = synthetic::generate(&small()).unwrap();
    for u in &mut corpus.utterances {
        u.domain = None;
    }
    let paths = corpus.write(dir.path()).unwrap();
    let cfg = paths.run_config(dir.path().join("out"), 0);
    let err = pipeline::cmd_pipeline(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig::new("a.emb1", "b.jsonl", "out").with_seed(9);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, cfg.to_toml().unwrap()).unwrap();
    let loaded = RunConfig::load(&p).unwrap();
    assert_eq!(loaded.paths.embeddings, dir.path().join("a.emb1"));
    assert_eq!(loaded.paths.out_dir, dir.path().join("out"));
    assert_eq!((loaded.seed, &loaded.detector, &loaded.metric), (cfg.seed, &cfg.detector, &cfg.metric));
    let seeds = cfg.effective_seeds();
    assert_eq!((seeds.detector, seeds.metric), (9, 10));
    let err = RunConfig::load(&dir.path().join("missing.toml")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
