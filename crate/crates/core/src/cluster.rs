//! Complete-linkage agglomerative clustering, threshold transfer, and
//! must-link / cannot-link distance editing.
//!
//! Node ids in a [`Dendrogram`] follow the usual convention: leaves are
//! `0..n`, and the cluster created by merge `t` gets id `n + t`. When several
//! cluster pairs are at the same minimal distance, the pair whose
//! `(older id, younger id)` is lexicographically smallest merges first.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingSet;
use crate::error::{Error, Result};
use crate::eval::{bcubed_f1, pairwise_f1, pairwise_f1_from_counts};
use crate::linalg::euclidean;

/// Condensed (upper-triangular, row-major) pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
}

#[inline]
fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

impl DistanceMatrix {
    pub fn from_condensed(ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        let expected = n * n.saturating_sub(1) / 2;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::data(format!("distance {v} is not finite and non-negative")));
        }
        Ok(DistanceMatrix { ids, data })
    }

    /// Builds from a closure over index pairs `i < j`.
    pub fn from_fn(ids: Vec<String>, f: impl Fn(usize, usize) -> f64 + Sync) -> Result<Self> {
        let n = ids.len();
        let data: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let f = &f;
                (i + 1..n).map(move |j| f(i, j))
            })
            .collect();
        Self::from_condensed(ids, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn condensed(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => 0.0,
            Less => self.data[condensed_index(self.len(), i, j)],
            Greater => self.data[condensed_index(self.len(), j, i)],
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let n = self.len();
        self.data[condensed_index(n, a, b)] = v;
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Euclidean distances between all rows, computed in parallel by row.
pub fn pairwise_distances(embs: &EmbeddingSet) -> Result<DistanceMatrix> {
    let m = embs.matrix();
    DistanceMatrix::from_fn(embs.ids().to_vec(), |i, j| euclidean(m.row(i), m.row(j)))
        .map_err(|e| Error::data(format!("pairwise distances: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// The older of the two merged nodes.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Leaves under the new node.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }
}

/// Compares `(distance, older id, younger id)` keys; smaller merges first.
#[inline]
fn key_less(d1: f64, a1: usize, b1: usize, d2: f64, a2: usize, b2: usize) -> bool {
    let k1 = (a1.min(b1), a1.max(b1));
    let k2 = (a2.min(b2), a2.max(b2));
    d1 < d2 || (d1 == d2 && k1 < k2)
}

/// Complete-linkage clustering of a distance matrix.
///
/// Merged distances are maxima of original entries, so heights are exact
/// copies of input values. Each active cluster caches its nearest partner;
/// a merge can only invalidate caches that pointed at one of the two merged
/// clusters, since complete-linkage distances to the new cluster never drop
/// below the distances they replace.
pub fn complete_linkage(dm: &DistanceMatrix) -> Dendrogram {
    let n = dm.len();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return Dendrogram { leaves: n, merges };
    }
    let mut dist = dm.clone();
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<usize>>();
    let mut size = vec![1usize; n];
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let nearest = |slot: usize, dist: &DistanceMatrix, active: &[bool], node: &[usize]| {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for other in 0..n {
            if other == slot || !active[other] {
                continue;
            }
            let d = dist.get(slot, other);
            if best == usize::MAX
                || key_less(d, node[slot], node[other], best_d, node[slot], node[best])
            {
                best = other;
                best_d = d;
            }
        }
        (best, best_d)
    };

    for s in 0..n {
        (nn[s], nn_dist[s]) = nearest(s, &dist, &active, &node);
    }

    for step in 0..n - 1 {
        let mut a = usize::MAX;
        for s in 0..n {
            if !active[s] {
                continue;
            }
            if a == usize::MAX
                || key_less(
                    nn_dist[s],
                    node[s],
                    node[nn[s]],
                    nn_dist[a],
                    node[a],
                    node[nn[a]],
                )
            {
                a = s;
            }
        }
        let b = nn[a];
        let height = nn_dist[a];
        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        let (older, younger) = if node[a] < node[b] {
            (node[a], node[b])
        } else {
            (node[b], node[a])
        };
        merges.push(Merge {
            left: older,
            right: younger,
            height,
            size: size[a] + size[b],
        });

        active[drop] = false;
        size[keep] += size[drop];
        node[keep] = n + step;
        for k in 0..n {
            if active[k] && k != keep {
                let d = dist.get(keep, k).max(dist.get(drop, k));
                dist.set(keep, k, d);
            }
        }
        if step + 2 == n {
            break;
        }
        for k in 0..n {
            if active[k] && k != keep && (nn[k] == keep || nn[k] == drop) {
                (nn[k], nn_dist[k]) = nearest(k, &dist, &active, &node);
            }
        }
        (nn[keep], nn_dist[keep]) = nearest(keep, &dist, &active, &node);
    }
    Dendrogram { leaves: n, merges }
}

/// A flat assignment of ids to dense cluster indices `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    ids: Vec<String>,
    labels: Vec<usize>,
    k: usize,
}

impl Clustering {
    /// Relabels arbitrary labels densely in order of first appearance.
    pub fn from_labels<L: Eq + std::hash::Hash>(ids: Vec<String>, raw: &[L]) -> Result<Self> {
        if ids.len() != raw.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: raw.len(),
            });
        }
        let mut map = HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Ok(Clustering {
            ids,
            k: map.len(),
            labels,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Member row indices per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// True when every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Clustering) -> bool {
        let mut parent = vec![usize::MAX; self.k];
        self.labels
            .iter()
            .zip(&coarser.labels)
            .all(|(&f, &c)| match parent[f] {
                usize::MAX => {
                    parent[f] = c;
                    true
                }
                p => p == c,
            })
    }
}

#[derive(Serialize, Deserialize)]
struct ClusteringFile {
    k: usize,
    assignment: BTreeMap<String, usize>,
}

impl Serialize for Clustering {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ClusteringFile {
            k: self.k,
            assignment: self.ids.iter().cloned().zip(self.labels.iter().copied()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Clustering {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let f = ClusteringFile::deserialize(d)?;
        if f.assignment.values().any(|&l| l >= f.k)
            || (0..f.k).any(|c| !f.assignment.values().any(|&l| l == c))
        {
            return Err(D::Error::custom("cluster indices must be dense in 0..k"));
        }
        let (ids, labels): (Vec<String>, Vec<usize>) = f.assignment.into_iter().unzip();
        Ok(Clustering {
            ids,
            labels,
            k: f.k,
        })
    }
}

/// Applies every merge with height `<= delta`; the connected components are the clusters.
pub fn cut(dendrogram: &Dendrogram, ids: &[String], delta: f64) -> Result<Clustering> {
    let n = dendrogram.leaves;
    if ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: ids.len(),
        });
    }
    if !(delta >= 0.0) {
        return Err(Error::config(format!("cut height must be non-negative, got {delta}")));
    }
    let mut uf = UnionFind::new(n);
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &dendrogram.merges {
        if m.height > delta {
            break;
        }
        let r = uf.union(rep[m.left], rep[m.right]);
        rep.push(r);
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    Clustering::from_labels(ids.to_vec(), &roots)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        let r = ra.min(rb);
        self.parent[ra.max(rb)] = r;
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum F1Variant {
    #[default]
    Pairwise,
    BCubed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdChoice {
    pub delta: f64,
    pub f1: f64,
    pub dendrogram: Dendrogram,
}

/// Picks the cut height that best reproduces `labels` on the given points.
///
/// Candidates are `0` and every merge height; the first (smallest) height
/// reaching the maximal F1 wins.
pub fn transfer_threshold<L: AsRef<str>>(
    embs: &EmbeddingSet,
    labels: &[L],
    variant: F1Variant,
) -> Result<ThresholdChoice> {
    let dm = pairwise_distances(embs)?;
    threshold_from_matrix(&dm, labels, variant)
}

pub fn threshold_from_matrix<L: AsRef<str>>(
    dm: &DistanceMatrix,
    labels: &[L],
    variant: F1Variant,
) -> Result<ThresholdChoice> {
    if labels.len() != dm.len() {
        return Err(Error::DimensionMismatch {
            expected: dm.len(),
            actual: labels.len(),
        });
    }
    let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        let next = vocab.len();
        vocab.entry(l.as_ref()).or_insert(next);
    }
    if vocab.len() < 2 {
        return Err(Error::data(format!(
            "threshold transfer needs at least 2 distinct labels, got {}",
            vocab.len()
        )));
    }
    let label_ix: Vec<usize> = labels.iter().map(|l| vocab[l.as_ref()]).collect();
    let dendrogram = complete_linkage(dm);
    let (delta, f1) = match variant {
        F1Variant::Pairwise => best_pairwise_cut(&dendrogram, &label_ix, vocab.len()),
        F1Variant::BCubed => {
            let mut best = (0.0, f64::NEG_INFINITY);
            for h in candidate_heights(&dendrogram) {
                let c = cut(&dendrogram, dm.ids(), h)?;
                let f = bcubed_f1(c.labels(), &label_ix);
                if f > best.1 {
                    best = (h, f);
                }
            }
            best
        }
    };
    Ok(ThresholdChoice {
        delta,
        f1,
        dendrogram,
    })
}

/// `0` followed by the distinct positive merge heights, ascending.
pub fn candidate_heights(d: &Dendrogram) -> Vec<f64> {
    let mut out = vec![0.0];
    for h in d.heights() {
        if h > *out.last().expect("non-empty") {
            out.push(h);
        }
    }
    out
}

/// Sweeps merges in height order, updating pair counts incrementally.
fn best_pairwise_cut(d: &Dendrogram, labels: &[usize], n_labels: usize) -> (f64, f64) {
    let n = d.leaves;
    let mut class_sizes = vec![0u64; n_labels];
    for &l in labels {
        class_sizes[l] += 1;
    }
    let truth_pairs: u64 = class_sizes.iter().map(|c| c * c.saturating_sub(1) / 2).sum();
    let mut counts: Vec<HashMap<usize, u64>> = labels
        .iter()
        .map(|&l| HashMap::from([(l, 1u64)]))
        .collect();
    counts.reserve(n.saturating_sub(1));
    let mut tp = 0u64;
    let mut pred = 0u64;
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut i = 0;
    for h in candidate_heights(d) {
        while i < d.merges.len() && d.merges[i].height <= h {
            let m = d.merges[i];
            let mut a = std::mem::take(&mut counts[m.left]);
            let mut b = std::mem::take(&mut counts[m.right]);
            if a.len() < b.len() {
                std::mem::swap(&mut a, &mut b);
            }
            let (sa, sb): (u64, u64) = (a.values().sum(), b.values().sum());
            pred += sa * sb;
            for (l, cb) in b {
                let ca = a.entry(l).or_insert(0);
                tp += *ca * cb;
                *ca += cb;
            }
            counts.push(a);
            i += 1;
        }
        let f = pairwise_f1_from_counts(tp, pred, truth_pairs);
        if f > best.1 {
            best = (h, f);
        }
    }
    best
}

/// Must-link and cannot-link pairs over utterance ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default)]
    pub must_link: Vec<(String, String)>,
    #[serde(default)]
    pub cannot_link: Vec<(String, String)>,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.must_link.len() + self.cannot_link.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only pairs whose two ids are both in `ids`.
    pub fn restrict_to(&self, ids: &[String]) -> ConstraintSet {
        let known: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        let keep = |pairs: &[(String, String)]| {
            pairs
                .iter()
                .filter(|(a, b)| known.contains(a.as_str()) && known.contains(b.as_str()))
                .cloned()
                .collect()
        };
        ConstraintSet {
            must_link: keep(&self.must_link),
            cannot_link: keep(&self.cannot_link),
        }
    }

    /// Checks the pairs against `ids` and for contradictions, returning index pairs.
    fn resolve(&self, ids: &[String]) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
        let index: HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let lookup = |pairs: &[(String, String)], kind: &str| -> Result<Vec<(usize, usize)>> {
            pairs
                .iter()
                .map(|(a, b)| {
                    let ia = *index
                        .get(a.as_str())
                        .ok_or_else(|| Error::data(format!("{kind} references unknown id {a:?}")))?;
                    let ib = *index
                        .get(b.as_str())
                        .ok_or_else(|| Error::data(format!("{kind} references unknown id {b:?}")))?;
                    if ia == ib {
                        return Err(Error::data(format!("{kind} pair ({a:?}, {b:?}) links an id to itself")));
                    }
                    Ok((ia.min(ib), ia.max(ib)))
                })
                .collect()
        };
        let ml = lookup(&self.must_link, "must-link")?;
        let cl = lookup(&self.cannot_link, "cannot-link")?;
        let mut uf = UnionFind::new(ids.len());
        for &(a, b) in &ml {
            uf.union(a, b);
        }
        for &(a, b) in &cl {
            if uf.find(a) == uf.find(b) {
                return Err(Error::data(format!(
                    "inconsistent constraints: {:?} and {:?} are must-linked but also cannot-linked",
                    ids[a], ids[b]
                )));
            }
        }
        Ok((ml, cl))
    }
}

/// Factor applied to the largest distance for cannot-link pairs.
pub const CANNOT_LINK_SCALE: f64 = 10.0;

/// Sets must-link distances to 0 and cannot-link distances to
/// `CANNOT_LINK_SCALE` times the largest entry; everything else is unchanged.
pub fn apply_constraints(dm: &DistanceMatrix, constraints: &ConstraintSet) -> Result<DistanceMatrix> {
    let (ml, cl) = constraints.resolve(dm.ids())?;
    let far = CANNOT_LINK_SCALE * dm.max_entry();
    let mut out = dm.clone();
    for (a, b) in ml {
        out.set(a, b, 0.0);
    }
    for (a, b) in cl {
        out.set(a, b, far);
    }
    Ok(out)
}

/// Distances, optional constraint editing, linkage, then a cut at `delta`.
pub fn cluster_novel(
    embs: &EmbeddingSet,
    delta: f64,
    constraints: Option<&ConstraintSet>,
) -> Result<(Clustering, Dendrogram)> {
    if embs.is_empty() {
        return Err(Error::data("no utterances to cluster"));
    }
    let mut dm = pairwise_distances(embs)?;
    if let Some(c) = constraints.filter(|c| !c.is_empty()) {
        dm = apply_constraints(&dm, c)?;
    }
    let dendrogram = complete_linkage(&dm);
    let clustering = cut(&dendrogram, embs.ids(), delta)?;
    Ok((clustering, dendrogram))
}

/// F1 of `clustering` against `truth` under the chosen variant.
pub fn clustering_f1<L: Eq + std::hash::Hash>(pred: &[usize], truth: &[L], variant: F1Variant) -> f64 {
    match variant {
        F1Variant::Pairwise => pairwise_f1(pred, truth),
        F1Variant::BCubed => bcubed_f1(pred, truth),
    }
}
