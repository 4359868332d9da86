//! Stage III: group intent clusters into domains.
//!
//! Seen-intent clusters are labeled with the majority domain of their members,
//! summarized by centroids, and used to learn a domain-level cut height. Novel
//! intent clusters are then linked by complete linkage over their centroids
//! and cut at that height; each resulting group is a novel domain.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cluster::{self, Clustering, F1Variant, ThresholdChoice};
use crate::corpus::{EmbeddingSet, SpaceTag};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seen,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentCluster {
    pub id: String,
    pub member_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centroid: Vec<f64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub id: String,
    pub provenance: Provenance,
    pub intents: Vec<IntentCluster>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub domains: Vec<Domain>,
}

impl Taxonomy {
    pub fn novel_domains(&self) -> impl Iterator<Item = &Domain> {
        self.domains.iter().filter(|d| d.provenance == Provenance::Novel)
    }

    pub fn novel_domain_count(&self) -> usize {
        self.novel_domains().count()
    }

    pub fn novel_intent_count(&self) -> usize {
        self.domains
            .iter()
            .flat_map(|d| &d.intents)
            .filter(|i| i.provenance == Provenance::Novel)
            .count()
    }

    /// Domain id for every member utterance of every intent cluster.
    pub fn domain_of_members(&self) -> HashMap<String, String> {
        let mut out = HashMap::new();
        for d in &self.domains {
            for i in &d.intents {
                for m in &i.member_ids {
                    out.insert(m.clone(), d.id.clone());
                }
            }
        }
        out
    }

    /// JSON bytes; centroids are dropped unless requested.
    pub fn to_json(&self, with_centroids: bool) -> Result<Vec<u8>> {
        if with_centroids {
            return crate::io::to_json_bytes(self);
        }
        let mut stripped = self.clone();
        for d in &mut stripped.domains {
            for i in &mut d.intents {
                i.centroid.clear();
            }
        }
        crate::io::to_json_bytes(&stripped)
    }
}

/// Most frequent label; ties go to the lexicographically smallest.
pub fn majority_label<'a>(labels: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in ascending label order, and max_by_key keeps the last max,
    // so iterate in reverse to keep the smallest label among ties
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .map(|(l, _)| l)
}

/// Arithmetic mean of member vectors per cluster.
///
/// Members are summed in id order so the result does not depend on the
/// order in which they were listed.
pub fn compute_centroids(clustering: &Clustering, embs: &EmbeddingSet) -> Result<Vec<Vec<f64>>> {
    let index: HashMap<&str, usize> = embs
        .ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let ids = clustering.ids();
    clustering
        .members()
        .into_iter()
        .map(|mut members| {
            members.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
            let mut c = vec![0.0; embs.dim()];
            for &m in &members {
                let row = *index
                    .get(ids[m].as_str())
                    .ok_or_else(|| Error::data(format!("no embedding for {:?}", ids[m])))?;
                for (ci, v) in c.iter_mut().zip(embs.row(row)) {
                    *ci += v;
                }
            }
            let n = members.len() as f64;
            c.iter_mut().for_each(|v| *v /= n);
            Ok(c)
        })
        .collect()
}

/// Builds seen intent clusters labeled with their members' majority domain.
///
/// `domains` is aligned with `clustering.ids()`.
pub fn label_seen_clusters<S: AsRef<str>>(
    clustering: &Clustering,
    domains: &[S],
    embs: &EmbeddingSet,
) -> Result<Vec<IntentCluster>> {
    if domains.len() != clustering.len() {
        return Err(Error::DimensionMismatch {
            expected: clustering.len(),
            actual: domains.len(),
        });
    }
    let centroids = compute_centroids(clustering, embs)?;
    Ok(clustering
        .members()
        .into_iter()
        .zip(centroids)
        .enumerate()
        .map(|(c, (members, centroid))| IntentCluster {
            id: format!("seen-intent-{c}"),
            domain: majority_label(members.iter().map(|&m| domains[m].as_ref())).map(String::from),
            member_ids: members.iter().map(|&m| clustering.ids()[m].clone()).collect(),
            centroid,
            provenance: Provenance::Seen,
        })
        .collect())
}

pub fn novel_intent_clusters(clustering: &Clustering, embs: &EmbeddingSet) -> Result<Vec<IntentCluster>> {
    let centroids = compute_centroids(clustering, embs)?;
    Ok(clustering
        .members()
        .into_iter()
        .zip(centroids)
        .enumerate()
        .map(|(c, (members, centroid))| IntentCluster {
            id: format!("novel-intent-{c}"),
            member_ids: members.iter().map(|&m| clustering.ids()[m].clone()).collect(),
            centroid,
            provenance: Provenance::Novel,
            domain: None,
        })
        .collect())
}

fn centroid_set(clusters: &[IntentCluster]) -> Result<EmbeddingSet> {
    let dim = clusters.first().map_or(0, |c| c.centroid.len());
    let rows: Vec<&[f64]> = clusters.iter().map(|c| c.centroid.as_slice()).collect();
    EmbeddingSet::new(
        clusters.iter().map(|c| c.id.clone()).collect(),
        Matrix::from_rows(&rows, dim)?,
        SpaceTag::Emb,
    )
}

/// Learns the domain-level cut height from labeled seen clusters.
pub fn transfer_domain_threshold(seen: &[IntentCluster], variant: F1Variant) -> Result<ThresholdChoice> {
    let labels: Vec<&str> = seen
        .iter()
        .map(|c| {
            c.domain
                .as_deref()
                .ok_or_else(|| Error::data(format!("seen cluster {} has no domain", c.id)))
        })
        .collect::<Result<_>>()?;
    let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::data(format!(
            "domain threshold needs at least 2 seen domains, found {distinct}"
        )));
    }
    cluster::transfer_threshold(&centroid_set(seen)?, &labels, variant)
}

/// Groups novel intent clusters into novel domains by cutting their centroid
/// dendrogram at `delta`.
///
/// Domains are ordered and numbered by their first member cluster.
pub fn link_domains(novel: &[IntentCluster], delta: f64) -> Result<Taxonomy> {
    if novel.is_empty() {
        return Err(Error::data("no novel intent clusters to link"));
    }
    let groups = if novel.len() == 1 {
        vec![0]
    } else {
        let set = centroid_set(novel)?;
        let dm = cluster::pairwise_distances(&set)?;
        let d = cluster::complete_linkage(&dm);
        cluster::cut(&d, set.ids(), delta)?.labels().to_vec()
    };
    // `cut` numbers groups by first appearance, which is smallest member index
    let k = groups.iter().max().map_or(0, |m| m + 1);
    let mut domains: Vec<Domain> = (0..k)
        .map(|g| Domain {
            id: format!("novel-domain-{g}"),
            provenance: Provenance::Novel,
            intents: Vec::new(),
        })
        .collect();
    for (c, &g) in novel.iter().zip(&groups) {
        let mut c = c.clone();
        c.domain = Some(domains[g].id.clone());
        domains[g].intents.push(c);
    }
    Ok(Taxonomy { domains })
}

/// Clusters seen and novel centroids together. Novel clusters that land with
/// seen ones join the majority seen domain of their group; the rest form novel domains.
pub fn link_domains_joint(seen: &[IntentCluster], novel: &[IntentCluster], delta: f64) -> Result<Taxonomy> {
    if novel.is_empty() {
        return Err(Error::data("no novel intent clusters to link"));
    }
    let all: Vec<IntentCluster> = seen.iter().chain(novel).cloned().collect();
    let set = centroid_set(&all)?;
    let dm = cluster::pairwise_distances(&set)?;
    let groups = cluster::cut(&cluster::complete_linkage(&dm), set.ids(), delta)?;
    let members = groups.members();

    let mut seen_domains: BTreeMap<String, Domain> = BTreeMap::new();
    let mut novel_domains: Vec<Domain> = Vec::new();
    for group in members {
        let seen_label = majority_label(
            group
                .iter()
                .filter(|&&i| i < seen.len())
                .filter_map(|&i| all[i].domain.as_deref()),
        )
        .map(String::from);
        let novel_members: Vec<IntentCluster> =
            group.iter().filter(|&&i| i >= seen.len()).map(|&i| all[i].clone()).collect();
        match seen_label {
            Some(label) => {
                let d = seen_domains.entry(label.clone()).or_insert_with(|| Domain {
                    id: label.clone(),
                    provenance: Provenance::Seen,
                    intents: Vec::new(),
                });
                for &i in group.iter().filter(|&&i| i < seen.len()) {
                    d.intents.push(all[i].clone());
                }
                for mut c in novel_members {
                    c.domain = Some(label.clone());
                    d.intents.push(c);
                }
            }
            None if !novel_members.is_empty() => {
                let id = format!("novel-domain-{}", novel_domains.len());
                novel_domains.push(Domain {
                    intents: novel_members
                        .into_iter()
                        .map(|mut c| {
                            c.domain = Some(id.clone());
                            c
                        })
                        .collect(),
                    id,
                    provenance: Provenance::Novel,
                });
            }
            None => {}
        }
    }
    let mut domains: Vec<Domain> = seen_domains.into_values().collect();
    domains.extend(novel_domains);
    Ok(Taxonomy { domains })
}

/// Seen domains with their seen intent clusters, for inclusion alongside novel ones.
pub fn seen_domains(seen: &[IntentCluster]) -> Vec<Domain> {
    let mut by_domain: BTreeMap<String, Vec<IntentCluster>> = BTreeMap::new();
    for c in seen {
        if let Some(d) = &c.domain {
            by_domain.entry(d.clone()).or_default().push(c.clone());
        }
    }
    by_domain
        .into_iter()
        .map(|(id, intents)| Domain {
            id,
            provenance: Provenance::Seen,
            intents,
        })
        .collect()
}
