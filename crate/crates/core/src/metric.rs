//! Stage II representation learning.
//!
//! [`EncoderNet`] maps a raw embedding `x` to a hidden representation
//! `E(x) = tanh(W1 x + b1)` and an output embedding `Emb(x) = W2 E(x) + b2`.
//! Training pulls same-intent utterances together relative to same-domain
//! ones, and same-domain ones together relative to other domains, using three
//! hinge terms over one-minus-cosine distances in `E` space:
//!
//! ```text
//! max(0, m1 + d_i - d_j) + alpha * max(0, m2 + d_i - d_k) + beta * max(0, m3 + d_j - d_k)
//! ```
//!
//! Clustering later measures euclidean distances in `Emb` space. The loss
//! depends only on `E`, so the output layer keeps its initialization and acts
//! as a fixed random projection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingSet, SpaceTag, View};
use crate::error::{Error, Result};
use crate::io::{decode_f64s, encode_f64s};
use crate::linalg::{dot, Matrix};
use crate::optim::{AdamParams, Optimizer, OptimizerKind};
use crate::TrainingRun;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Gradients laid out like [`EncoderNet`].
pub type NetGradients = EncoderNet;

impl EncoderNet {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        EncoderNet {
            w1: Matrix::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(output, hidden),
            b2: vec![0.0; output],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        let l1 = (6.0 / (input + hidden) as f64).sqrt();
        net.w1.as_mut_slice().iter_mut().for_each(|w| *w = rng.gen_range(-l1..l1));
        let l2 = (6.0 / (hidden + output) as f64).sqrt();
        net.w2.as_mut_slice().iter_mut().for_each(|w| *w = rng.gen_range(-l2..l2));
        net
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    fn blocks(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn add_scaled(&mut self, other: &EncoderNet, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut e = vec![0.0; self.hidden_dim()];
        self.w1.mul_vec_into(x, &mut e);
        for (v, b) in e.iter_mut().zip(&self.b1) {
            *v = (*v + b).tanh();
        }
        Ok(e)
    }

    /// Returns `(E(x), Emb(x))`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.hidden(x)?;
        let mut emb = vec![0.0; self.output_dim()];
        self.w2.mul_vec_into(&e, &mut emb);
        for (v, b) in emb.iter_mut().zip(&self.b2) {
            *v += b;
        }
        Ok((e, emb))
    }
}

/// One-minus-cosine distance; a zero vector is maximally dissimilar (distance 1).
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    1.0 - dot(u, v) / (nu * nv)
}

/// Adds `scale * d/du cosine_distance(u, v)` into `out`. Zero for degenerate inputs.
fn accumulate_cosine_grad(u: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 || scale == 0.0 {
        return;
    }
    let sim = dot(u, v) / (nu * nv);
    let a = 1.0 / (nu * nv);
    let b = sim / (nu * nu);
    for ((o, ui), vi) in out.iter_mut().zip(u).zip(v) {
        *o -= scale * (a * vi - b * ui);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            m1: 0.05,
            m2: 0.05,
            m3: 0.05,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.m1, self.m2, self.m3, self.alpha, self.beta];
        if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config("margins and loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    /// The loss as a function of the three distances.
    pub fn hinge(&self, d_i: f64, d_j: f64, d_k: f64) -> f64 {
        (self.m1 + d_i - d_j).max(0.0)
            + self.alpha * (self.m2 + d_i - d_k).max(0.0)
            + self.beta * (self.m3 + d_j - d_k).max(0.0)
    }

    /// Partial derivatives of [`hinge`](Self::hinge) with respect to `(d_i, d_j, d_k)`.
    /// Inactive hinges, including ones exactly at the kink, contribute zero.
    fn hinge_grad(&self, d_i: f64, d_j: f64, d_k: f64) -> [f64; 3] {
        let h1 = if self.m1 + d_i - d_j > 0.0 { 1.0 } else { 0.0 };
        let h2 = if self.m2 + d_i - d_k > 0.0 { self.alpha } else { 0.0 };
        let h3 = if self.m3 + d_j - d_k > 0.0 { self.beta } else { 0.0 };
        [h1 + h2, -h1 + h3, -h2 - h3]
    }
}

/// Row indices into a seen [`View`]: an anchor, another row of the same
/// intent, a row of another intent in the same domain, and a row from a
/// different domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quadruplet {
    pub anchor: usize,
    pub same_intent: usize,
    pub same_domain: usize,
    pub other_domain: usize,
}

impl Quadruplet {
    pub fn ids<'a>(&self, view: &'a View) -> [&'a str; 4] {
        [
            &view.ids[self.anchor],
            &view.ids[self.same_intent],
            &view.ids[self.same_domain],
            &view.ids[self.other_domain],
        ]
    }

    fn rows(&self) -> [usize; 4] {
        [self.anchor, self.same_intent, self.same_domain, self.other_domain]
    }
}

/// Anchors that could not form a quadruplet, by the missing category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub no_same_intent: usize,
    pub no_same_domain: usize,
    pub no_other_domain: usize,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.no_same_intent + self.no_same_domain + self.no_other_domain
    }
}

#[derive(Debug, Clone)]
pub struct QuadrupletSample {
    pub quadruplets: Vec<Quadruplet>,
    pub skipped: SkipReport,
}

/// Candidate rows per anchor category, computed once per view.
struct Candidates {
    labels: Vec<(usize, usize)>,
    by_pair: BTreeMap<(usize, usize), Vec<usize>>,
    by_domain: BTreeMap<usize, Vec<usize>>,
}

impl Candidates {
    fn new(view: &View) -> Result<Self> {
        let intents = view.require_intents()?;
        let domains = view.require_domains()?;
        let intent_ix: BTreeMap<&str, usize> =
            view.intent_vocab().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
        let domain_ix: BTreeMap<&str, usize> =
            view.domain_vocab().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
        let labels: Vec<(usize, usize)> = intents
            .iter()
            .zip(&domains)
            .map(|(i, d)| (intent_ix[i], domain_ix[d]))
            .collect();
        let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut by_domain: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (r, &(i, d)) in labels.iter().enumerate() {
            by_pair.entry((i, d)).or_default().push(r);
            by_domain.entry(d).or_default().push(r);
        }
        Ok(Candidates {
            labels,
            by_pair,
            by_domain,
        })
    }

    /// `(same intent, same domain other intent, other domain other intent)` for an anchor label.
    fn for_label(&self, intent: usize, domain: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let same_intent = self.by_pair[&(intent, domain)].clone();
        let same_domain = self.by_domain[&domain]
            .iter()
            .copied()
            .filter(|&r| self.labels[r].0 != intent)
            .collect();
        let other_domain = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &(i, d))| d != domain && i != intent)
            .map(|(r, _)| r)
            .collect();
        (same_intent, same_domain, other_domain)
    }
}

/// Draws `per_anchor` quadruplets for every anchor that has all three categories.
pub fn sample_quadruplets(view: &View, per_anchor: usize, rng_seed: u64) -> Result<QuadrupletSample> {
    let cands = Candidates::new(view)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_with(&cands, per_anchor, &mut rng)
}

fn sample_with(cands: &Candidates, per_anchor: usize, rng: &mut ChaCha8Rng) -> Result<QuadrupletSample> {
    let mut cache: BTreeMap<(usize, usize), (Vec<usize>, Vec<usize>, Vec<usize>)> = BTreeMap::new();
    let mut out = Vec::new();
    let mut skipped = SkipReport::default();
    for (anchor, &(intent, domain)) in cands.labels.iter().enumerate() {
        let (si, sd, od) = cache
            .entry((intent, domain))
            .or_insert_with(|| cands.for_label(intent, domain));
        // the anchor itself is always in `si`
        if si.len() < 2 {
            skipped.no_same_intent += 1;
            continue;
        }
        if sd.is_empty() {
            skipped.no_same_domain += 1;
            continue;
        }
        if od.is_empty() {
            skipped.no_other_domain += 1;
            continue;
        }
        for _ in 0..per_anchor {
            let same_intent = loop {
                let r = si[rng.gen_range(0..si.len())];
                if r != anchor {
                    break r;
                }
            };
            out.push(Quadruplet {
                anchor,
                same_intent,
                same_domain: sd[rng.gen_range(0..sd.len())],
                other_domain: od[rng.gen_range(0..od.len())],
            });
        }
    }
    if out.is_empty() {
        return Err(Error::data(format!(
            "no valid quadruplets: need at least 2 domains and 2 intents within a domain ({skipped:?})"
        )));
    }
    Ok(QuadrupletSample {
        quadruplets: out,
        skipped,
    })
}

/// Loss of one quadruplet whose rows are taken from `inputs`.
pub fn quadruplet_loss(net: &EncoderNet, inputs: &Matrix, q: &Quadruplet, cfg: &LossConfig) -> Result<f64> {
    let e: Vec<Vec<f64>> = q
        .rows()
        .iter()
        .map(|&r| net.hidden(inputs.row(r)))
        .collect::<Result<_>>()?;
    Ok(cfg.hinge(
        cosine_distance(&e[0], &e[1]),
        cosine_distance(&e[0], &e[2]),
        cosine_distance(&e[0], &e[3]),
    ))
}

/// Mean loss over a batch.
pub fn batch_loss(net: &EncoderNet, inputs: &Matrix, batch: &[Quadruplet], cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::data("empty quadruplet batch"));
    }
    let mut sum = 0.0;
    for q in batch {
        sum += quadruplet_loss(net, inputs, q, cfg)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Adds the gradient of one quadruplet's loss (times `scale`) into `grads`; returns the loss.
fn accumulate_quadruplet(
    net: &EncoderNet,
    inputs: &Matrix,
    q: &Quadruplet,
    cfg: &LossConfig,
    scale: f64,
    grads: &mut NetGradients,
) -> Result<f64> {
    let rows = q.rows();
    let e: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| net.hidden(inputs.row(r)))
        .collect::<Result<_>>()?;
    let d = [
        cosine_distance(&e[0], &e[1]),
        cosine_distance(&e[0], &e[2]),
        cosine_distance(&e[0], &e[3]),
    ];
    let loss = cfg.hinge(d[0], d[1], d[2]);
    let g = cfg.hinge_grad(d[0], d[1], d[2]);
    if g.iter().all(|v| *v == 0.0) {
        return Ok(loss);
    }
    let h = net.hidden_dim();
    let mut de = vec![vec![0.0; h]; 4];
    for (pair, &gd) in g.iter().enumerate() {
        let other = pair + 1;
        accumulate_cosine_grad(&e[0], &e[other], gd * scale, &mut de[0]);
        accumulate_cosine_grad(&e[other], &e[0], gd * scale, &mut de[other]);
    }
    for (slot, &r) in rows.iter().enumerate() {
        let x = inputs.row(r);
        for j in 0..h {
            let dz = de[slot][j] * (1.0 - e[slot][j] * e[slot][j]);
            if dz == 0.0 {
                continue;
            }
            grads.b1[j] += dz;
            for (gw, xi) in grads.w1.row_mut(j).iter_mut().zip(x) {
                *gw += dz * xi;
            }
        }
    }
    Ok(loss)
}

const GRAD_CHUNK: usize = 8;

/// Exact gradient of the mean batch loss. Returns `(loss, gradients)`.
///
/// Work is split into fixed-size chunks whose partial sums are reduced in
/// chunk order, so results do not depend on the thread count.
pub fn loss_gradients(
    net: &EncoderNet,
    inputs: &Matrix,
    batch: &[Quadruplet],
    cfg: &LossConfig,
) -> Result<(f64, NetGradients)> {
    if batch.is_empty() {
        return Err(Error::data("empty quadruplet batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let zero = || EncoderNet::zeros(net.input_dim(), net.hidden_dim(), net.output_dim());
    let partials: Vec<(f64, NetGradients)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = zero();
            let mut loss = 0.0;
            for q in chunk {
                loss += accumulate_quadruplet(net, inputs, q, cfg, scale, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut total = zero();
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_scaled(g, 1.0);
    }
    Ok((loss * scale, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricTrainConfig {
    pub learning_rate: f64,
    /// Quadruplets per mini-batch.
    pub batch_quadruplets: usize,
    pub epochs: usize,
    /// Quadruplets drawn per anchor each epoch.
    pub per_anchor: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub rng_seed: u64,
    pub hidden: usize,
    pub output: usize,
}

impl Default for MetricTrainConfig {
    fn default() -> Self {
        MetricTrainConfig {
            learning_rate: 1e-3,
            batch_quadruplets: 64,
            epochs: 15,
            per_anchor: 4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            rng_seed: 0,
            hidden: 256,
            output: 128,
        }
    }
}

impl MetricTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_quadruplets == 0 {
            return Err(Error::config("batch_quadruplets must be at least 1"));
        }
        if self.per_anchor == 0 {
            return Err(Error::config("per_anchor must be at least 1"));
        }
        if self.hidden == 0 || self.output == 0 {
            return Err(Error::config("hidden and output sizes must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Trains an [`EncoderNet`] on quadruplets resampled from `seen` every epoch.
pub fn train_metric(
    seen: &View,
    loss_cfg: &LossConfig,
    cfg: &MetricTrainConfig,
) -> Result<TrainingRun<EncoderNet>> {
    loss_cfg.validate()?;
    cfg.validate()?;
    let cands = Candidates::new(seen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut net = EncoderNet::xavier(seen.dim(), cfg.hidden, cfg.output, &mut rng);
    // fail early when the corpus cannot produce quadruplets at all
    sample_with(&cands, 1, &mut rng.clone())?;

    let adam = AdamParams {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        ..AdamParams::default()
    };
    // the output layer receives no gradient, so only the hidden layer is optimized
    let mut opt_w1 = Optimizer::new(OptimizerKind::Adam, adam, net.w1.as_slice().len());
    let mut opt_b1 = Optimizer::new(OptimizerKind::Adam, adam, net.b1.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sample = sample_with(&cands, cfg.per_anchor, &mut rng)?.quadruplets;
        sample.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in sample.chunks(cfg.batch_quadruplets).enumerate() {
            let (loss, grads) = loss_gradients(&net, &seen.vectors, batch, loss_cfg)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "metric loss became non-finite at epoch {epoch}, batch {b}"
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            opt_w1.step(net.w1.as_mut_slice(), grads.w1.as_slice());
            opt_b1.step(&mut net.b1, &grads.b1);
        }
        if !net.is_finite() {
            return Err(Error::Divergence(format!("metric weights became non-finite at epoch {epoch}")));
        }
        history.push(epoch_loss / sample.len() as f64);
    }
    Ok(TrainingRun {
        model: net,
        loss_history: history,
    })
}

/// Maps every row through the net, keeping id order; the result is tagged `Emb`.
pub fn embed_all(net: &EncoderNet, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    if set.is_empty() {
        return Ok(EmbeddingSet::empty(net.output_dim(), SpaceTag::Emb));
    }
    if set.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            actual: set.dim(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..set.len())
        .into_par_iter()
        .map(|i| net.forward(set.row(i)).map(|(_, emb)| emb))
        .collect::<Result<_>>()?;
    EmbeddingSet::new(
        set.ids().to_vec(),
        Matrix::from_rows(&rows, net.output_dim())?,
        SpaceTag::Emb,
    )
}

#[derive(Serialize, Deserialize)]
struct NetFile {
    input: usize,
    hidden: usize,
    output: usize,
    w1: String,
    b1: String,
    w2: String,
    b2: String,
}

impl EncoderNet {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        crate::io::to_json_bytes(&NetFile {
            input: self.input_dim(),
            hidden: self.hidden_dim(),
            output: self.output_dim(),
            w1: encode_f64s(self.w1.as_slice()),
            b1: encode_f64s(&self.b1),
            w2: encode_f64s(self.w2.as_slice()),
            b2: encode_f64s(&self.b2),
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let f: NetFile = serde_json::from_slice(bytes)?;
        if f.input == 0 || f.hidden == 0 || f.output == 0 {
            return Err(Error::data("encoder dimensions must be positive"));
        }
        Ok(EncoderNet {
            w1: Matrix::from_vec(f.hidden, f.input, decode_f64s(&f.w1, f.hidden * f.input)?)?,
            b1: decode_f64s(&f.b1, f.hidden)?,
            w2: Matrix::from_vec(f.output, f.hidden, decode_f64s(&f.w2, f.output * f.hidden)?)?,
            b2: decode_f64s(&f.b2, f.output)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled_view(labels: &[(&str, &str)], rows: Vec<Vec<f64>>) -> View {
        let d = rows[0].len();
        View {
            ids: (0..labels.len()).map(|i| format!("u{i}")).collect(),
            vectors: Matrix::from_rows(&rows, d).unwrap(),
            intents: labels.iter().map(|(i, _)| Some(i.to_string())).collect(),
            domains: labels.iter().map(|(_, d)| Some(d.to_string())).collect(),
        }
    }

    #[test]
    fn hinge_hand_values() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.hinge(0.0, 0.5, 1.0), 0.0);
        assert!((cfg.hinge(0.4, 0.3, 0.35) - 0.25).abs() < 1e-12);
        let only_first = LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..cfg
        };
        assert_eq!(only_first.hinge(0.25, 0.30, 0.0), 0.0);
        assert_eq!(only_first.hinge_grad(0.25, 0.30, 0.0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_distance_conventions() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
        assert!(cosine_distance(&[1.0, 2.0], &[2.0, 4.0]).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn forward_zero_and_near_identity() {
        let net = EncoderNet::zeros(3, 2, 2);
        let (e, emb) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((e, emb), (vec![0.0; 2], vec![0.0; 2]));

        let mut id = EncoderNet::zeros(3, 3, 2);
        for i in 0..3 {
            id.w1.row_mut(i)[i] = 1.0;
        }
        let x = [0.01, -0.005, 0.0099];
        let (e, _) = id.forward(&x).unwrap();
        for (a, b) in e.iter().zip(&x) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(id.forward(&[1.0]).is_err());
    }

    #[test]
    fn quadruplet_categories() {
        let v = labeled_view(
            &[("A", "dom1"), ("A", "dom1"), ("B", "dom1"), ("C", "dom2")],
            vec![vec![0.0]; 4],
        );
        let s = sample_quadruplets(&v, 3, 1).unwrap();
        for q in s.quadruplets.iter().filter(|q| q.anchor == 0) {
            assert_eq!((q.same_intent, q.same_domain, q.other_domain), (1, 2, 3));
        }
        // B and C have no same-intent partner
        assert_eq!(s.skipped.no_same_intent, 2);
        assert_eq!(s.quadruplets.len(), 6);
    }

    #[test]
    fn single_domain_has_no_quadruplets() {
        let v = labeled_view(&[("A", "d"), ("A", "d"), ("B", "d"), ("B", "d")], vec![vec![0.0]; 4]);
        assert!(sample_quadruplets(&v, 2, 0).is_err());
    }

    #[test]
    fn inactive_batch_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = EncoderNet::xavier(2, 3, 2, &mut rng);
        let inputs = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [-1.0, 0.0]], 2).unwrap();
        let q = Quadruplet {
            anchor: 0,
            same_intent: 1,
            same_domain: 2,
            other_domain: 3,
        };
        let cfg = LossConfig {
            m1: 0.0,
            m2: 0.0,
            m3: 0.0,
            ..LossConfig::default()
        };
        let e: Vec<_> = (0..4).map(|r| net.hidden(inputs.row(r)).unwrap()).collect();
        let (di, dj, dk) = (
            cosine_distance(&e[0], &e[1]),
            cosine_distance(&e[0], &e[2]),
            cosine_distance(&e[0], &e[3]),
        );
        if di < dj && dj < dk {
            let (loss, g) = loss_gradients(&net, &inputs, &[q], &cfg).unwrap();
            assert_eq!(loss, 0.0);
            assert!(g.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0)));
        }
        // margins large enough to activate everything give a non-zero gradient
        let hot = LossConfig {
            m1: 5.0,
            m2: 5.0,
            m3: 5.0,
            ..cfg
        };
        let (_, g) = loss_gradients(&net, &inputs, &[q], &hot).unwrap();
        assert!(g.w1.as_slice().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = EncoderNet::xavier(3, 4, 2, &mut rng);
        let inputs = Matrix::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let q = Quadruplet {
            anchor: 0,
            same_intent: 1,
            same_domain: 2,
            other_domain: 3,
        };
        let cfg = LossConfig {
            m1: 1.0,
            m2: 1.0,
            m3: 1.0,
            ..LossConfig::default()
        };
        let (l1, g1) = loss_gradients(&net, &inputs, &[q], &cfg).unwrap();
        let (l2, g2) = loss_gradients(&net, &inputs, &[q, q, q, q], &cfg).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.w1.as_slice().iter().zip(g2.w1.as_slice()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn net_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = EncoderNet::xavier(4, 3, 2, &mut rng);
        assert_eq!(EncoderNet::from_json(&net.to_json().unwrap()).unwrap(), net);
    }

    #[test]
    fn embed_empty_and_shape() {
        let net = EncoderNet::zeros(3, 2, 5);
        let out = embed_all(&net, &EmbeddingSet::empty(3, SpaceTag::Raw)).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.space(), SpaceTag::Emb);
    }
}
