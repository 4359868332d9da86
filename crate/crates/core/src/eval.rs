//! Clustering and detection metrics, and the run report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::error::{Error, Result};

/// Joint counts of (predicted cluster, truth class).
struct Contingency {
    n: u64,
    cells: Vec<u64>,
    rows: Vec<u64>,
    cols: Vec<u64>,
}

impl Contingency {
    fn new<L: Eq + Hash>(pred: &[usize], truth: &[L]) -> Self {
        assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
        let mut class_ix: HashMap<&L, usize> = HashMap::new();
        let truth_ix: Vec<usize> = truth
            .iter()
            .map(|l| {
                let next = class_ix.len();
                *class_ix.entry(l).or_insert(next)
            })
            .collect();
        let mut cluster_ix: HashMap<usize, usize> = HashMap::new();
        let pred_ix: Vec<usize> = pred
            .iter()
            .map(|&c| {
                let next = cluster_ix.len();
                *cluster_ix.entry(c).or_insert(next)
            })
            .collect();
        let (r, c) = (cluster_ix.len(), class_ix.len());
        let mut cells = vec![0u64; r * c];
        let mut rows = vec![0u64; r];
        let mut cols = vec![0u64; c];
        for (&p, &t) in pred_ix.iter().zip(&truth_ix) {
            cells[p * c + t] += 1;
            rows[p] += 1;
            cols[t] += 1;
        }
        Contingency {
            n: pred.len() as u64,
            cells,
            rows,
            cols,
        }
    }

    fn nonzero(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let c = self.cols.len();
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(move |(i, &v)| (i / c, i % c, v))
    }
}

fn pairs(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

pub fn pairwise_f1_from_counts(true_pos: u64, pred_pairs: u64, truth_pairs: u64) -> f64 {
    if pred_pairs == 0 || truth_pairs == 0 || true_pos == 0 {
        return 0.0;
    }
    2.0 * true_pos as f64 / (pred_pairs + truth_pairs) as f64
}

/// F1 over same-cluster pairs against same-label pairs; 0 when either side has no pairs.
pub fn pairwise_f1<L: Eq + Hash>(pred: &[usize], truth: &[L]) -> f64 {
    let t = Contingency::new(pred, truth);
    let tp = t.nonzero().map(|(_, _, v)| pairs(v)).sum();
    let pp = t.rows.iter().map(|&r| pairs(r)).sum();
    let tt = t.cols.iter().map(|&c| pairs(c)).sum();
    pairwise_f1_from_counts(tp, pp, tt)
}

/// Item-averaged BCubed F1.
pub fn bcubed_f1<L: Eq + Hash>(pred: &[usize], truth: &[L]) -> f64 {
    let t = Contingency::new(pred, truth);
    if t.n == 0 {
        return 0.0;
    }
    let (mut p, mut r) = (0.0, 0.0);
    for (row, col, v) in t.nonzero() {
        let v = v as f64;
        p += v * v / t.rows[row] as f64;
        r += v * v / t.cols[col] as f64;
    }
    let (p, r) = (p / t.n as f64, r / t.n as f64);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NmiMean {
    #[default]
    Arithmetic,
    Geometric,
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information (natural logs).
///
/// When both partitions have zero entropy the result is 1.
pub fn nmi_with<L: Eq + Hash>(pred: &[usize], truth: &[L], mean: NmiMean) -> f64 {
    let t = Contingency::new(pred, truth);
    if t.n == 0 {
        return 1.0;
    }
    let n = t.n as f64;
    let h_pred = entropy(&t.rows, n);
    let h_truth = entropy(&t.cols, n);
    if h_pred == 0.0 && h_truth == 0.0 {
        return 1.0;
    }
    let mi: f64 = t
        .nonzero()
        .map(|(r, c, v)| {
            let v = v as f64;
            v / n * (n * v / (t.rows[r] as f64 * t.cols[c] as f64)).ln()
        })
        .sum();
    let denom = match mean {
        NmiMean::Arithmetic => 0.5 * (h_pred + h_truth),
        NmiMean::Geometric => (h_pred * h_truth).sqrt(),
    };
    if denom == 0.0 {
        return 0.0;
    }
    (mi / denom).clamp(0.0, 1.0)
}

pub fn nmi<L: Eq + Hash>(pred: &[usize], truth: &[L]) -> f64 {
    nmi_with(pred, truth, NmiMean::Arithmetic)
}

/// Fraction of items that belong to their cluster's majority class.
pub fn purity<L: Eq + Hash>(pred: &[usize], truth: &[L]) -> f64 {
    let t = Contingency::new(pred, truth);
    if t.n == 0 {
        return 0.0;
    }
    let c = t.cols.len();
    let majority: u64 = (0..t.rows.len())
        .map(|r| t.cells[r * c..(r + 1) * c].iter().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / t.n as f64
}

/// Binary F1 with "novel" as the positive class; 0 when there are no true positives.
pub fn detection_f1(predicted: &[bool], truth: &[bool]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "prediction and truth lengths differ");
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Per-utterance ground truth used for evaluation.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub intent: HashMap<String, String>,
    pub domain: HashMap<String, String>,
    /// Whether each unlabeled utterance truly carries a novel intent.
    pub novel: HashMap<String, bool>,
}

/// What the stages produced, as needed for reporting.
#[derive(Debug, Clone, Copy)]
pub struct StageOutputs<'a> {
    /// Clustering of the novel-flagged utterances.
    pub clustering: &'a Clustering,
    /// Detection verdicts over the unlabeled collection: `(id, flagged novel)`.
    pub detection: Option<&'a [(String, bool)]>,
    /// Novel domain per clustered utterance id, when linking has run.
    pub domains: Option<&'a HashMap<String, String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_utterances: usize,
    pub n_clusters_found: usize,
    pub n_clusters_truth: Option<usize>,
    pub nmi: Option<f64>,
    pub purity: Option<f64>,
    pub pairwise_f1: Option<f64>,
    pub detection_f1: Option<f64>,
    pub n_domains_found: Option<usize>,
    pub n_domains_truth: Option<usize>,
    pub domain_nmi: Option<f64>,
    pub domain_purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_domain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraints_applied: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Wall-clock milliseconds per stage; only filled when timing is requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

/// Assembles the metrics; with no truth, only counts are filled in.
pub fn build_report(out: StageOutputs<'_>, truth: Option<&GroundTruth>) -> Result<MetricsReport> {
    let clustering = out.clustering;
    if clustering.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let mut report = MetricsReport {
        n_utterances: clustering.len(),
        n_clusters_found: clustering.k(),
        ..Default::default()
    };
    if let Some(domains) = out.domains {
        let found: BTreeSet<&String> = clustering
            .ids()
            .iter()
            .filter_map(|id| domains.get(id))
            .collect();
        report.n_domains_found = Some(found.len());
    }
    let Some(truth) = truth else {
        return Ok(report);
    };

    // score only utterances with a truth label
    let (pred, labels): (Vec<usize>, Vec<&String>) = clustering
        .ids()
        .iter()
        .zip(clustering.labels())
        .filter_map(|(id, &c)| truth.intent.get(id).map(|l| (c, l)))
        .unzip();
    if !pred.is_empty() {
        report.n_clusters_truth = Some(labels.iter().collect::<BTreeSet<_>>().len());
        report.nmi = Some(nmi(&pred, &labels));
        report.purity = Some(purity(&pred, &labels));
        report.pairwise_f1 = Some(pairwise_f1(&pred, &labels));
    }

    if let Some(domains) = out.domains {
        let mut ix: HashMap<&String, usize> = HashMap::new();
        let (pred, labels): (Vec<usize>, Vec<&String>) = clustering
            .ids()
            .iter()
            .filter_map(|id| Some((domains.get(id)?, truth.domain.get(id)?)))
            .map(|(found, t)| {
                let next = ix.len();
                (*ix.entry(found).or_insert(next), t)
            })
            .unzip();
        if !pred.is_empty() {
            report.n_domains_truth = Some(labels.iter().collect::<BTreeSet<_>>().len());
            report.domain_nmi = Some(nmi(&pred, &labels));
            report.domain_purity = Some(purity(&pred, &labels));
        }
    }

    if let Some(det) = out.detection {
        let (p, t): (Vec<bool>, Vec<bool>) = det
            .iter()
            .filter_map(|(id, flagged)| truth.novel.get(id).map(|&t| (*flagged, t)))
            .unzip();
        if !p.is_empty() {
            report.detection_f1 = Some(detection_f1(&p, &t));
        }
    }
    Ok(report)
}

impl MetricsReport {
    /// Plain-text table: `#int. | NMI | Pur. | F1`, plus domain and detection rows.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let u = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>10} {:>7} {:>7} {:>7}", "", "#int.", "NMI", "Pur.", "F1");
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>7} {:>7} {:>7}",
            "intents",
            format!("{} ({})", self.n_clusters_found, u(self.n_clusters_truth)),
            f(self.nmi),
            f(self.purity),
            f(self.pairwise_f1)
        );
        if self.n_domains_found.is_some() {
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>7} {:>7} {:>7}",
                "domains",
                format!("{} ({})", u(self.n_domains_found), u(self.n_domains_truth)),
                f(self.domain_nmi),
                f(self.domain_purity),
                "-"
            );
        }
        if let Some(d) = self.detection_f1 {
            let _ = writeln!(s, "detection F1: {d:.3}");
        }
        s
    }
}
