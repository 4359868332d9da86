//! Synthetic corpora with known intents and domains.
//!
//! Each domain gets a random direction; its intents are placed on a sphere
//! around that direction and utterances are isotropic Gaussian samples
//! around their intent center. Seen intents supply the labeled training rows
//! and part of the unlabeled collection; novel intents appear only in the
//! unlabeled collection; OOD intents form the labeled out-of-domain pool.
//! Unlabeled rows keep their true labels so runs can be scored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::ConstraintSet;
use crate::corpus::{self, EmbeddingSet, SpaceTag, Split, Utterance};
use crate::error::{Error, Result};
use crate::linalg::{euclidean, norm, Matrix};
use crate::pipeline::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub seen_domains: usize,
    pub seen_intents_per_domain: usize,
    pub novel_domains: usize,
    pub novel_intents_per_domain: usize,
    pub ood_intents: usize,
    pub train_per_intent: usize,
    pub validation_per_intent: usize,
    /// Unlabeled rows drawn from each seen intent.
    pub unlabeled_seen_per_intent: usize,
    pub unlabeled_novel_per_intent: usize,
    pub ood_per_intent: usize,
    /// Per-coordinate standard deviation of utterances around their intent center.
    pub sigma: f64,
    /// Norm of every intent center.
    pub radius: f64,
    /// How far intents stray from their domain direction (before renormalizing).
    pub intent_spread: f64,
    /// Minimum distance between any two intent centers.
    pub min_center_distance: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 16,
            seen_domains: 2,
            seen_intents_per_domain: 3,
            novel_domains: 2,
            novel_intents_per_domain: 2,
            ood_intents: 16,
            train_per_intent: 120,
            validation_per_intent: 0,
            unlabeled_seen_per_intent: 20,
            unlabeled_novel_per_intent: 30,
            ood_per_intent: 30,
            sigma: 0.05,
            radius: 2.0,
            intent_spread: 0.5,
            min_center_distance: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Intents of a domain sit close enough that their utterance clouds
    /// overlap, so unconstrained clustering tends to merge them.
    pub fn overlapping() -> Self {
        SyntheticConfig {
            intent_spread: 0.1,
            min_center_distance: 0.2,
            ..SyntheticConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub utterances: Vec<Utterance>,
    pub embeddings: EmbeddingSet,
    /// Intent center by intent label.
    pub centers: BTreeMap<String, Vec<f64>>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

struct IntentSpec {
    intent: String,
    domain: String,
    kind: Kind,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Seen,
    Novel,
    Ood,
}

const MAX_LAYOUT_ATTEMPTS: usize = 1000;

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.dim == 0 {
        return Err(Error::config("synthetic dim must be positive"));
    }
    let noise = Normal::new(0.0, cfg.sigma)
        .map_err(|e| Error::config(format!("synthetic sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut specs = Vec::new();
    for d in 0..cfg.seen_domains {
        for i in 0..cfg.seen_intents_per_domain {
            specs.push(IntentSpec {
                intent: format!("seen-d{d}-i{i}"),
                domain: format!("seen-domain-{d}"),
                kind: Kind::Seen,
            });
        }
    }
    for d in 0..cfg.novel_domains {
        for i in 0..cfg.novel_intents_per_domain {
            specs.push(IntentSpec {
                intent: format!("novel-d{d}-i{i}"),
                domain: format!("novel-domain-{d}"),
                kind: Kind::Novel,
            });
        }
    }
    for i in 0..cfg.ood_intents {
        specs.push(IntentSpec {
            intent: format!("ood-{i}"),
            domain: format!("ood-domain-{i}"),
            kind: Kind::Ood,
        });
    }

    let centers = place_centers(cfg, &specs, &mut rng)?;

    let mut utterances = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut push = |spec: &IntentSpec, center: &[f64], split: Split, count: usize, rng: &mut ChaCha8Rng| {
        for _ in 0..count {
            let id = format!("utt-{:05}", utterances.len());
            let keep_labels = split != Split::Ood || spec.kind == Kind::Ood;
            utterances.push(Utterance {
                id,
                text: None,
                intent: keep_labels.then(|| spec.intent.clone()),
                domain: (split != Split::Ood).then(|| spec.domain.clone()),
                split,
            });
            rows.push(center.iter().map(|c| c + noise.sample(rng)).collect());
        }
    };
    for (spec, center) in specs.iter().zip(&centers) {
        match spec.kind {
            Kind::Seen => {
                push(spec, center, Split::TrainSeen, cfg.train_per_intent, &mut rng);
                push(spec, center, Split::Validation, cfg.validation_per_intent, &mut rng);
                push(spec, center, Split::Unlabeled, cfg.unlabeled_seen_per_intent, &mut rng);
            }
            Kind::Novel => push(spec, center, Split::Unlabeled, cfg.unlabeled_novel_per_intent, &mut rng),
            Kind::Ood => push(spec, center, Split::Ood, cfg.ood_per_intent, &mut rng),
        }
    }

    // interleave rows so nothing downstream can lean on file order
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.shuffle(&mut rng);
    let utterances: Vec<Utterance> = order.iter().map(|&i| utterances[i].clone()).collect();
    let rows: Vec<&[f64]> = order.iter().map(|&i| rows[i].as_slice()).collect();
    let embeddings = EmbeddingSet::new(
        utterances.iter().map(|u| u.id.clone()).collect(),
        Matrix::from_rows(&rows, cfg.dim)?,
        SpaceTag::Raw,
    )?;
    Ok(SyntheticCorpus {
        utterances,
        embeddings,
        centers: specs.iter().map(|s| s.intent.clone()).zip(centers).collect(),
    })
}

fn place_centers(cfg: &SyntheticConfig, specs: &[IntentSpec], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let mut domain_dirs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let centers: Vec<Vec<f64>> = specs
            .iter()
            .map(|s| {
                let dir = domain_dirs
                    .entry(s.domain.as_str())
                    .or_insert_with(|| random_unit(rng, cfg.dim))
                    .clone();
                let jitter = random_unit(rng, cfg.dim);
                let raw: Vec<f64> = dir
                    .iter()
                    .zip(&jitter)
                    .map(|(d, j)| d + cfg.intent_spread * j)
                    .collect();
                let n = norm(&raw).max(1e-12);
                raw.into_iter().map(|v| cfg.radius * v / n).collect()
            })
            .collect();
        let ok = (0..centers.len()).all(|i| {
            (i + 1..centers.len()).all(|j| euclidean(&centers[i], &centers[j]) >= cfg.min_center_distance)
        });
        if ok {
            return Ok(centers);
        }
    }
    Err(Error::config(
        "could not place intent centers at the requested minimum distance; lower min_center_distance or raise radius",
    ))
}

impl SyntheticCorpus {
    pub fn write(&self, dir: &Path) -> Result<SyntheticPaths> {
        let paths = SyntheticPaths {
            embeddings: dir.join("embeddings.emb1"),
            utterances: dir.join("utterances.jsonl"),
        };
        corpus::write_embeddings(&self.embeddings, &paths.embeddings)?;
        corpus::write_utterances(&self.utterances, &paths.utterances)?;
        Ok(paths)
    }

    /// Unlabeled utterances whose intent is novel, grouped by intent.
    pub fn novel_groups(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for u in &self.utterances {
            if let (Split::Unlabeled, Some(intent)) = (u.split, u.intent.as_deref()) {
                if intent.starts_with("novel-") {
                    out.entry(intent).or_default().push(u.id.as_str());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPaths {
    pub embeddings: PathBuf,
    pub utterances: PathBuf,
}

impl SyntheticPaths {
    /// Run config suited to these corpora.
    ///
    /// The linear detector gets an L2 penalty and a few more epochs than the
    /// library defaults: on blobs this well separated an unregularized head
    /// drives seen probabilities to 1, the DOC thresholds collapse towards 1,
    /// and ordinary seen utterances start being flagged.
    pub fn run_config(&self, out_dir: impl Into<PathBuf>, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::new(&self.embeddings, &self.utterances, out_dir).with_seed(seed);
        cfg.detector.train.epochs = 20;
        cfg.detector.train.l2_weight = 1e-3;
        cfg
    }
}

/// Truth-consistent constraints over `groups` novel intents with `per_group`
/// utterances each: must-link inside a group, cannot-link across groups.
pub fn truth_constraints(
    groups_by_intent: &BTreeMap<&str, Vec<&str>>,
    groups: usize,
    per_group: usize,
    seed: u64,
) -> Result<ConstraintSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut intents: Vec<&&str> = groups_by_intent.keys().collect();
    intents.shuffle(&mut rng);
    if intents.len() < groups {
        return Err(Error::config(format!(
            "need {groups} intents for constraints, have {}",
            intents.len()
        )));
    }
    let mut chosen: Vec<Vec<String>> = Vec::new();
    for intent in intents.into_iter().take(groups) {
        let pool = &groups_by_intent[*intent];
        if pool.len() < per_group {
            return Err(Error::config(format!("intent {intent} has fewer than {per_group} utterances")));
        }
        chosen.push(
            pool.choose_multiple(&mut rng, per_group)
                .map(|s| s.to_string())
                .collect(),
        );
    }
    let mut cs = ConstraintSet::default();
    for (g, members) in chosen.iter().enumerate() {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                cs.must_link.push((members[i].clone(), members[j].clone()));
            }
        }
        for other in &chosen[g + 1..] {
            for a in members {
                for b in other {
                    cs.cannot_link.push((a.clone(), b.clone()));
                }
            }
        }
    }
    Ok(cs)
}
