//! Run configuration and the stage commands.
//!
//! Stages talk to each other only through files in the output directory, so
//! each one can be rerun on its own:
//!
//! | stage      | reads                                  | writes                                   |
//! |------------|----------------------------------------|------------------------------------------|
//! | `detect`   | corpus                                 | `head.json`, `thresholds.json`, `novel.json` |
//! | `discover` | corpus, `novel.json`                   | `encoder.json`, `clustering.json`, `report.json` |
//! | `link`     | corpus, `encoder.json`, `clustering.json` | `taxonomy.json`                        |
//! | `evaluate` | corpus labels and all of the above     | `report.json`, `report.txt`              |
//!
//! `pipeline` runs all stages and records a `manifest.json` with the config,
//! seeds, and a SHA-256 of every artifact.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{self, Clustering, ConstraintSet, F1Variant};
use crate::corpus::{self, Dataset, SpaceTag, Views};
use crate::detector::{self, Detection, DocThresholds, HeadMode, SoftmaxHead, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{self, GroundTruth, MetricsReport, StageOutputs};
use crate::io::{read_json, write_atomic, write_json};
use crate::metric::{self, EncoderNet, LossConfig, MetricTrainConfig};
use crate::taxonomy::{self, Taxonomy};

pub const HEAD_FILE: &str = "head.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const NOVEL_FILE: &str = "novel.json";
pub const ENCODER_FILE: &str = "encoder.json";
pub const CLUSTERING_FILE: &str = "clustering.json";
pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const DENDROGRAM_FILE: &str = "dendrogram.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Artifacts listed in the manifest, in pipeline order.
pub const ARTIFACTS: [&str; 7] = [
    HEAD_FILE,
    THRESHOLDS_FILE,
    NOVEL_FILE,
    ENCODER_FILE,
    CLUSTERING_FILE,
    TAXONOMY_FILE,
    REPORT_FILE,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub embeddings: PathBuf,
    pub utterances: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub mode: HeadMode,
    pub risk_factor: f64,
    pub train: TrainConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            mode: HeadMode::MUnseen,
            risk_factor: detector::DEFAULT_RISK_FACTOR,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub loss: LossConfig,
    pub train: MetricTrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub f1_variant: F1Variant,
    /// Also write the novel-utterance dendrogram for inspection.
    pub export_dendrogram: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    /// Cluster seen and novel intent centroids together instead of novel only.
    pub joint: bool,
    pub include_centroids: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub nmi_mean: eval::NmiMean,
    /// Adds wall-clock stage timings to the report, which makes it non-reproducible.
    pub record_timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub paths: Paths,
    /// Master seed; when set it overrides the per-stage seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl RunConfig {
    pub fn new(embeddings: impl Into<PathBuf>, utterances: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            paths: Paths {
                embeddings: embeddings.into(),
                utterances: utterances.into(),
                constraints: None,
                out_dir: out_dir.into(),
            },
            seed: None,
            detector: DetectorConfig::default(),
            metric: MetricConfig::default(),
            cluster: ClusterConfig::default(),
            link: LinkConfig::default(),
            report: ReportConfig::default(),
        }
    }

    /// Parses a TOML config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative_to(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.embeddings);
        fix(&mut self.paths.utterances);
        fix(&mut self.paths.out_dir);
        if let Some(c) = self.paths.constraints.as_mut() {
            fix(c);
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Seeds actually used by the detector and the metric learner.
    pub fn effective_seeds(&self) -> Seeds {
        match self.seed {
            Some(s) => Seeds {
                detector: s,
                metric: s.wrapping_add(1),
            },
            None => Seeds {
                detector: self.detector.train.rng_seed,
                metric: self.metric.train.rng_seed,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("embeddings", &self.paths.embeddings), ("utterances", &self.paths.utterances)] {
            if !p.exists() {
                return Err(Error::config(format!("{what} file {} does not exist", p.display())));
            }
        }
        if let Some(c) = &self.paths.constraints {
            if !c.exists() {
                return Err(Error::config(format!("constraints file {} does not exist", c.display())));
            }
        }
        self.detector.train.validate()?;
        self.metric.train.validate()?;
        self.metric.loss.validate()?;
        if !(self.detector.risk_factor >= 0.0) {
            return Err(Error::config("risk_factor must be non-negative"));
        }
        Ok(())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }

    fn detector_train(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: self.effective_seeds().detector,
            ..self.detector.train.clone()
        }
    }

    fn metric_train(&self) -> MetricTrainConfig {
        MetricTrainConfig {
            rng_seed: self.effective_seeds().metric,
            ..self.metric.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub detector: u64,
    pub metric: u64,
}

/// Loaded corpus split into views.
pub struct Corpus {
    pub dataset: Dataset,
    pub views: Views,
}

impl Corpus {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let embeddings = corpus::load_embeddings(&cfg.paths.embeddings)?;
        let utterances = corpus::load_utterances(&cfg.paths.utterances)?;
        let dataset = corpus::join(utterances, embeddings)?;
        let views = corpus::split_views(&dataset)?;
        Ok(Corpus { dataset, views })
    }

    /// Truth labels for unlabeled utterances that carry them.
    pub fn ground_truth(&self) -> GroundTruth {
        let seen: BTreeSet<&str> = self.views.seen.intent_vocab();
        let mut truth = GroundTruth::default();
        let u = &self.views.unlabeled;
        for i in 0..u.len() {
            let id = &u.ids[i];
            if let Some(intent) = &u.intents[i] {
                truth.intent.insert(id.clone(), intent.clone());
                truth.novel.insert(id.clone(), !seen.contains(intent.as_str()));
            }
            if let Some(domain) = &u.domains[i] {
                truth.domain.insert(id.clone(), domain.clone());
            }
        }
        truth
    }
}

#[derive(Debug, Clone)]
pub struct DetectOutcome {
    pub head: SoftmaxHead,
    pub thresholds: DocThresholds,
    pub detection: Detection,
    pub loss_history: Vec<f64>,
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<DetectOutcome> {
    let corpus = Corpus::load(cfg)?;
    detect_stage(cfg, &corpus).map_err(|e| e.in_stage("detect"))
}

fn detect_stage(cfg: &RunConfig, corpus: &Corpus) -> Result<DetectOutcome> {
    let v = &corpus.views;
    if cfg.detector.mode == HeadMode::MUnseen && v.ood.is_empty() {
        return Err(Error::config("detector mode m_unseen needs OOD utterances, but the corpus has none"));
    }
    let run = detector::train_softmax(&v.seen, &v.ood, cfg.detector.mode, &cfg.detector_train())?;
    let thresholds = detector::fit_doc_thresholds(&run.model, &v.seen, cfg.detector.risk_factor)?;
    let detection = detector::detect_all(&run.model, &thresholds, &v.unlabeled)?;
    write_atomic(&cfg.out(HEAD_FILE), &run.model.to_json()?)?;
    write_json(&cfg.out(THRESHOLDS_FILE), &thresholds)?;
    write_json(&cfg.out(NOVEL_FILE), &detection)?;
    Ok(DetectOutcome {
        head: run.model,
        thresholds,
        detection,
        loss_history: run.loss_history,
    })
}

/// Contents of `clustering.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringArtifact {
    /// Cut height transferred from the seen intents.
    pub delta: f64,
    /// F1 of that cut against the seen intents.
    pub seen_f1: f64,
    pub constraints_applied: usize,
    pub clustering: Clustering,
}

#[derive(Debug, Clone)]
pub struct DiscoverOutcome {
    pub artifact: ClusteringArtifact,
    pub report: MetricsReport,
    pub loss_history: Vec<f64>,
}

pub fn cmd_discover(cfg: &RunConfig) -> Result<DiscoverOutcome> {
    let corpus = Corpus::load(cfg)?;
    discover_stage(cfg, &corpus).map_err(|e| e.in_stage("discover"))
}

fn load_constraints(cfg: &RunConfig) -> Result<Option<ConstraintSet>> {
    cfg.paths
        .constraints
        .as_deref()
        .map(read_json::<ConstraintSet>)
        .transpose()
}

fn discover_stage(cfg: &RunConfig, corpus: &Corpus) -> Result<DiscoverOutcome> {
    let detection: Detection = read_json(&cfg.out(NOVEL_FILE))?;
    let seen = &corpus.views.seen;
    let run = metric::train_metric(seen, &cfg.metric.loss, &cfg.metric_train())?;
    let net = run.model;
    write_atomic(&cfg.out(ENCODER_FILE), &net.to_json()?)?;

    let seen_emb = metric::embed_all(&net, &seen.embeddings(SpaceTag::Raw))?;
    let choice = cluster::transfer_threshold(&seen_emb, &seen.require_intents()?, cfg.cluster.f1_variant)?;

    let constraints = load_constraints(cfg)?.map(|c| c.restrict_to(&detection.novel));
    let applied = constraints.as_ref().map_or(0, ConstraintSet::len);

    let (clustering, note) = if detection.novel.is_empty() {
        (
            Clustering::from_labels(Vec::new(), &[] as &[usize])?,
            Some("no novel utterances".to_string()),
        )
    } else {
        let novel_raw = corpus.dataset.embeddings().subset(&detection.novel)?;
        let novel_emb = metric::embed_all(&net, &novel_raw)?;
        let (c, dendrogram) = cluster::cluster_novel(&novel_emb, choice.delta, constraints.as_ref())?;
        if cfg.cluster.export_dendrogram {
            write_json(&cfg.out(DENDROGRAM_FILE), &dendrogram)?;
        }
        (c, None)
    };

    let artifact = ClusteringArtifact {
        delta: choice.delta,
        seen_f1: choice.f1,
        constraints_applied: applied,
        clustering,
    };
    write_json(&cfg.out(CLUSTERING_FILE), &artifact)?;

    let mut report = match eval::build_report(
        StageOutputs {
            clustering: &artifact.clustering,
            detection: None,
            domains: None,
        },
        None,
    ) {
        Ok(r) => r,
        Err(Error::NothingToEvaluate) => MetricsReport::default(),
        Err(e) => return Err(e),
    };
    report.delta = Some(artifact.delta);
    report.constraints_applied = constraints.as_ref().map(|_| applied);
    report.note = note;
    write_json(&cfg.out(REPORT_FILE), &report)?;
    Ok(DiscoverOutcome {
        artifact,
        report,
        loss_history: run.loss_history,
    })
}

#[derive(Debug, Clone)]
pub struct LinkOutcome {
    pub taxonomy: Taxonomy,
    pub delta_domain: Option<f64>,
}

pub fn cmd_link(cfg: &RunConfig) -> Result<LinkOutcome> {
    let corpus = Corpus::load(cfg)?;
    link_stage(cfg, &corpus).map_err(|e| e.in_stage("link"))
}

fn link_stage(cfg: &RunConfig, corpus: &Corpus) -> Result<LinkOutcome> {
    let net = EncoderNet::from_json(
        &std::fs::read(cfg.out(ENCODER_FILE)).map_err(|e| Error::io(cfg.out(ENCODER_FILE), e))?,
    )?;
    let artifact: ClusteringArtifact = read_json(&cfg.out(CLUSTERING_FILE))?;
    let seen = &corpus.views.seen;
    let domains = seen.require_domains()?;
    let distinct = domains.iter().collect::<BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::data(format!(
            "linking needs at least 2 seen domains, found {distinct}"
        )));
    }

    let seen_emb = metric::embed_all(&net, &seen.embeddings(SpaceTag::Raw))?;
    let seen_dm = cluster::pairwise_distances(&seen_emb)?;
    let seen_clustering = cluster::cut(&cluster::complete_linkage(&seen_dm), seen_emb.ids(), artifact.delta)?;
    let seen_clusters = taxonomy::label_seen_clusters(&seen_clustering, &domains, &seen_emb)?;

    let mut taxonomy = Taxonomy {
        domains: taxonomy::seen_domains(&seen_clusters),
    };
    let mut delta_domain = None;
    if !artifact.clustering.is_empty() {
        let choice = taxonomy::transfer_domain_threshold(&seen_clusters, cfg.cluster.f1_variant)?;
        let novel_raw = corpus.dataset.embeddings().subset(artifact.clustering.ids())?;
        let novel_emb = metric::embed_all(&net, &novel_raw)?;
        let novel = taxonomy::novel_intent_clusters(&artifact.clustering, &novel_emb)?;
        taxonomy = if cfg.link.joint {
            taxonomy::link_domains_joint(&seen_clusters, &novel, choice.delta)?
        } else {
            let mut linked = taxonomy::link_domains(&novel, choice.delta)?;
            taxonomy.domains.append(&mut linked.domains);
            taxonomy
        };
        delta_domain = Some(choice.delta);
    }
    write_atomic(&cfg.out(TAXONOMY_FILE), &taxonomy.to_json(cfg.link.include_centroids)?)?;
    Ok(LinkOutcome {
        taxonomy,
        delta_domain,
    })
}

/// Scores the stored artifacts against the labels present in the corpus.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricsReport> {
    let corpus = Corpus::load(cfg)?;
    evaluate_stage(cfg, &corpus, true, None).map_err(|e| e.in_stage("evaluate"))
}

fn evaluate_stage(
    cfg: &RunConfig,
    corpus: &Corpus,
    with_truth: bool,
    timings: Option<BTreeMap<String, f64>>,
) -> Result<MetricsReport> {
    let detection: Detection = read_json(&cfg.out(NOVEL_FILE))?;
    let artifact: ClusteringArtifact = read_json(&cfg.out(CLUSTERING_FILE))?;
    let taxonomy: Option<Taxonomy> = cfg
        .out(TAXONOMY_FILE)
        .exists()
        .then(|| read_json(&cfg.out(TAXONOMY_FILE)))
        .transpose()?;

    let flagged: Vec<(String, bool)> = corpus
        .views
        .unlabeled
        .ids
        .iter()
        .map(|id| (id.clone(), false))
        .collect();
    let novel: BTreeSet<&str> = detection.novel.iter().map(String::as_str).collect();
    let flagged: Vec<(String, bool)> = flagged
        .into_iter()
        .map(|(id, _)| {
            let f = novel.contains(id.as_str());
            (id, f)
        })
        .collect();
    let domain_map: Option<HashMap<String, String>> = taxonomy.as_ref().map(|t| {
        let novel_only = Taxonomy {
            domains: t.novel_domains().cloned().collect(),
        };
        novel_only.domain_of_members()
    });
    let truth = with_truth.then(|| corpus.ground_truth());

    let mut report = if artifact.clustering.is_empty() {
        let mut r = MetricsReport {
            note: Some("no novel utterances".into()),
            ..Default::default()
        };
        if let Some(t) = &truth {
            let (p, g): (Vec<bool>, Vec<bool>) = flagged
                .iter()
                .filter_map(|(id, f)| t.novel.get(id).map(|&n| (*f, n)))
                .unzip();
            if !p.is_empty() {
                r.detection_f1 = Some(eval::detection_f1(&p, &g));
            }
        }
        r
    } else {
        eval::build_report(
            StageOutputs {
                clustering: &artifact.clustering,
                detection: Some(&flagged),
                domains: domain_map.as_ref(),
            },
            truth.as_ref(),
        )?
    };
    if cfg.report.nmi_mean != eval::NmiMean::Arithmetic {
        if let (Some(t), false) = (&truth, artifact.clustering.is_empty()) {
            let (pred, labels): (Vec<usize>, Vec<&String>) = artifact
                .clustering
                .ids()
                .iter()
                .zip(artifact.clustering.labels())
                .filter_map(|(id, &c)| t.intent.get(id).map(|l| (c, l)))
                .unzip();
            if !pred.is_empty() {
                report.nmi = Some(eval::nmi_with(&pred, &labels, cfg.report.nmi_mean));
            }
        }
    }
    report.delta = Some(artifact.delta);
    if load_constraints(cfg)?.is_some() {
        report.constraints_applied = Some(artifact.constraints_applied);
    }
    if let Some(t) = &taxonomy {
        report.n_domains_found = Some(t.novel_domain_count());
    }
    report.timings_ms = timings;
    write_json(&cfg.out(REPORT_FILE), &report)?;
    if with_truth {
        write_atomic(&cfg.out(REPORT_TABLE_FILE), report.to_table().as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Complete,
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seeds: Seeds,
    pub status: RunStatus,
    pub config: RunConfig,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_artifacts(cfg: &RunConfig) -> Result<Vec<ArtifactEntry>> {
    let mut out = Vec::new();
    for name in ARTIFACTS {
        let p = cfg.out(name);
        if p.exists() {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            out.push(ArtifactEntry {
                name: name.to_string(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub detect: DetectOutcome,
    pub discover: DiscoverOutcome,
    pub link: LinkOutcome,
    pub report: MetricsReport,
    pub manifest: Manifest,
}

/// Runs detect, discover, link, and the report, then writes the manifest.
///
/// If a stage fails, artifacts written so far are kept and the manifest
/// records the failing stage before the error is returned.
pub fn cmd_pipeline(cfg: &RunConfig, with_eval: bool) -> Result<PipelineOutcome> {
    let corpus = Corpus::load(cfg)?;
    std::fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    // stale artifacts from an earlier run must not leak into this manifest
    for name in ARTIFACTS.iter().chain([&MANIFEST_FILE, &REPORT_TABLE_FILE, &DENDROGRAM_FILE]) {
        let p = cfg.out(name);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }

    let mut timings = BTreeMap::new();
    let result = (|| -> std::result::Result<_, (&'static str, Error)> {
        let t = Instant::now();
        let detect = detect_stage(cfg, &corpus).map_err(|e| ("detect", e))?;
        timings.insert("detect".to_string(), t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        let discover = discover_stage(cfg, &corpus).map_err(|e| ("discover", e))?;
        timings.insert("discover".to_string(), t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        let link = link_stage(cfg, &corpus).map_err(|e| ("link", e))?;
        timings.insert("link".to_string(), t.elapsed().as_secs_f64() * 1e3);
        let recorded = cfg.report.record_timings.then(|| timings.clone());
        let mut report =
            evaluate_stage(cfg, &corpus, with_eval, recorded).map_err(|e| ("evaluate", e))?;
        report.delta_domain = link.delta_domain;
        write_json(&cfg.out(REPORT_FILE), &report).map_err(|e| ("evaluate", e))?;
        Ok((detect, discover, link, report))
    })();

    let status = match &result {
        Ok(_) => RunStatus::Complete,
        Err((stage, e)) => RunStatus::Failed {
            stage: stage.to_string(),
            error: e.to_string(),
        },
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: cfg.effective_seeds(),
        status,
        config: cfg.clone(),
        artifacts: collect_artifacts(cfg)?,
    };
    write_json(&cfg.out(MANIFEST_FILE), &manifest)?;
    match result {
        Ok((detect, discover, link, report)) => Ok(PipelineOutcome {
            detect,
            discover,
            link,
            report,
            manifest,
        }),
        Err((stage, e)) => Err(e.in_stage(stage)),
    }
}
