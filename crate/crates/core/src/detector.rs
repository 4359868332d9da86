//! Stage I: flag utterances whose intent is not one of the seen intents.
//!
//! A linear softmax head is trained over the seen intents plus either one
//! catch-all "novel" class or `m` classes taken from labeled out-of-domain
//! data. Each seen class also gets a confidence threshold fitted on its own
//! training rows; an utterance below every seen-class threshold is novel even
//! when the argmax lands on a seen class.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::View;
use crate::error::{Error, Result};
use crate::io::{decode_f64s, encode_f64s};
use crate::linalg::{dot, Matrix};
use crate::optim::{AdamParams, Optimizer, OptimizerKind};
use crate::TrainingRun;

/// Label of the single catch-all class in one-unseen mode.
pub const NOVEL_CLASS: &str = "<novel>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// `S + 1` classes: all OOD rows share one novel class.
    OneUnseen,
    /// `S + m` classes: one class per labeled OOD intent.
    MUnseen,
    /// `S` classes only; novelty comes from the confidence thresholds alone.
    SeenOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    None,
    /// Weight each class by `N / (K * n_c)`.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub l2_weight: f64,
    pub rng_seed: u64,
    pub optimizer: OptimizerKind,
    pub class_weighting: ClassWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            l2_weight: 0.0,
            rng_seed: 0,
            optimizer: OptimizerKind::Adam,
            class_weighting: ClassWeighting::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.l2_weight < 0.0 {
            return Err(Error::config("l2_weight must be non-negative"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamParams::default()
        }
    }
}

/// Linear multi-class head `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    weights: Matrix,
    bias: Vec<f64>,
    classes: Vec<String>,
    seen_count: usize,
    mode: HeadMode,
}

impl SoftmaxHead {
    /// Zero-initialized head; `classes[..seen_count]` are the seen intents.
    pub fn zeros(classes: Vec<String>, seen_count: usize, mode: HeadMode, dim: usize) -> Result<Self> {
        let k = classes.len();
        if k < 2 {
            return Err(Error::data(format!("need at least 2 classes, got {k}")));
        }
        let expected_extra = match mode {
            HeadMode::SeenOnly => k == seen_count,
            HeadMode::OneUnseen => k == seen_count + 1,
            HeadMode::MUnseen => k > seen_count,
        };
        if !expected_extra || seen_count == 0 {
            return Err(Error::data(format!(
                "{k} classes with {seen_count} seen is inconsistent with mode {mode:?}"
            )));
        }
        Ok(SoftmaxHead {
            weights: Matrix::zeros(k, dim),
            bias: vec![0.0; k],
            classes,
            seen_count,
            mode,
        })
    }

    pub fn from_parts(
        weights: Matrix,
        bias: Vec<f64>,
        classes: Vec<String>,
        seen_count: usize,
        mode: HeadMode,
    ) -> Result<Self> {
        let mut head = Self::zeros(classes, seen_count, mode, weights.cols())?;
        if weights.rows() != head.classes.len() || bias.len() != head.classes.len() {
            return Err(Error::data("head weight shapes do not match class count"));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::data("head weights must be finite"));
        }
        head.weights = weights;
        head.bias = bias;
        Ok(head)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn seen_count(&self) -> usize {
        self.seen_count
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let mut z = vec![0.0; self.num_classes()];
        self.weights.mul_vec_into(x, &mut z);
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        Ok(z)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Trains a head on the seen view plus the OOD view.
///
/// `OneUnseen` with an empty OOD view degrades to `SeenOnly`; `MUnseen` needs
/// labeled OOD rows.
pub fn train_softmax(
    seen: &View,
    ood: &View,
    mode: HeadMode,
    config: &TrainConfig,
) -> Result<TrainingRun<SoftmaxHead>> {
    config.validate()?;
    if seen.is_empty() {
        return Err(Error::data("no seen training utterances"));
    }
    let seen_labels = seen.require_intents()?;
    let seen_classes: Vec<String> = seen.intent_vocab().into_iter().map(String::from).collect();
    let seen_count = seen_classes.len();

    let mode = match mode {
        HeadMode::OneUnseen if ood.is_empty() => HeadMode::SeenOnly,
        m => m,
    };
    let mut classes = seen_classes;
    match mode {
        HeadMode::SeenOnly => {}
        HeadMode::OneUnseen => classes.push(NOVEL_CLASS.to_string()),
        HeadMode::MUnseen => {
            if ood.is_empty() {
                return Err(Error::config("m_unseen mode requires OOD utterances"));
            }
            ood.require_intents()
                .map_err(|e| Error::config(format!("m_unseen mode requires labeled OOD rows: {e}")))?;
            classes.extend(ood.intent_vocab().into_iter().map(String::from));
        }
    }
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut targets: Vec<usize> = seen_labels.iter().map(|l| index[l]).collect();
    let mut rows: Vec<&[f64]> = seen.vectors.iter_rows().collect();
    if mode != HeadMode::SeenOnly {
        if ood.dim() != seen.dim() {
            return Err(Error::DimensionMismatch {
                expected: seen.dim(),
                actual: ood.dim(),
            });
        }
        for (i, row) in ood.vectors.iter_rows().enumerate() {
            let t = match mode {
                HeadMode::OneUnseen => seen_count,
                _ => index[ood.intents[i].as_deref().expect("checked above")],
            };
            targets.push(t);
            rows.push(row);
        }
    }

    let mut head = SoftmaxHead::zeros(classes, seen_count, mode, seen.dim())?;
    let k = head.num_classes();
    let mut counts = vec![0usize; k];
    for &t in &targets {
        counts[t] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::data(format!(
            "class {:?} has no training examples",
            head.classes[c]
        )));
    }
    let class_weights: Vec<f64> = match config.class_weighting {
        ClassWeighting::None => vec![1.0; k],
        ClassWeighting::Balanced => counts
            .iter()
            .map(|&c| targets.len() as f64 / (k as f64 * c as f64))
            .collect(),
    };

    let run = fit(&mut head, &rows, &targets, &class_weights, config)?;
    Ok(TrainingRun {
        model: head,
        loss_history: run,
    })
}

fn fit(
    head: &mut SoftmaxHead,
    rows: &[&[f64]],
    targets: &[usize],
    class_weights: &[f64],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut opt_w = Optimizer::new(config.optimizer, config.adam(), head.weights.as_slice().len());
    let mut opt_b = Optimizer::new(config.optimizer, config.adam(), head.bias.len());
    let mut grad_w = Matrix::zeros(head.num_classes(), head.dim());
    let mut grad_b = vec![0.0; head.num_classes()];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_rows: Vec<&[f64]> = batch.iter().map(|&i| rows[i]).collect();
            let batch_targets: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let (loss, weight) = cross_entropy_grad(
                head,
                &batch_rows,
                &batch_targets,
                class_weights,
                config.l2_weight,
                &mut grad_w,
                &mut grad_b,
            );
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "softmax training loss became non-finite in epoch {epoch}"
                )));
            }
            epoch_loss += loss * weight;
            epoch_weight += weight;
            opt_w.step(head.weights.as_mut_slice(), grad_w.as_slice());
            opt_b.step(&mut head.bias, &grad_b);
        }
        history.push(epoch_loss / epoch_weight);
    }
    if !head.weights.is_finite() || head.bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::Divergence("softmax weights became non-finite".into()));
    }
    Ok(history)
}

/// Weighted mean cross-entropy over a batch and its gradient.
///
/// Returns `(loss, total weight)`; the L2 term is included in both loss and gradient.
fn cross_entropy_grad(
    head: &SoftmaxHead,
    rows: &[&[f64]],
    targets: &[usize],
    class_weights: &[f64],
    l2: f64,
    grad_w: &mut Matrix,
    grad_b: &mut [f64],
) -> (f64, f64) {
    grad_w.as_mut_slice().fill(0.0);
    grad_b.fill(0.0);
    let mut loss = 0.0;
    let mut total = 0.0;
    for (x, &t) in rows.iter().zip(targets) {
        let w = class_weights[t];
        let p = head.predict_proba(x).expect("training rows share the head dimension");
        loss -= w * p[t].max(f64::MIN_POSITIVE).ln();
        total += w;
        for (c, &pc) in p.iter().enumerate() {
            let g = w * (pc - if c == t { 1.0 } else { 0.0 });
            grad_b[c] += g;
            for (gw, xi) in grad_w.row_mut(c).iter_mut().zip(x.iter()) {
                *gw += g * xi;
            }
        }
    }
    let scale = 1.0 / total;
    grad_w.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
    grad_b.iter_mut().for_each(|g| *g *= scale);
    loss *= scale;
    if l2 > 0.0 {
        let ws = head.weights.as_slice();
        loss += 0.5 * l2 * dot(ws, ws);
        for (g, w) in grad_w.as_mut_slice().iter_mut().zip(ws) {
            *g += l2 * w;
        }
    }
    (loss, total)
}

/// Per-seen-class confidence thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocThresholds {
    pub classes: Vec<String>,
    pub thresholds: Vec<f64>,
    pub risk_factor: f64,
}

pub const DEFAULT_RISK_FACTOR: f64 = 3.0;

/// Spread of the probabilities about 1 after mirroring each `p` to `2 - p`.
///
/// The mirrored multiset has mean exactly 1, so its population standard
/// deviation reduces to `sqrt(mean((1 - p)^2))`.
pub fn mirrored_std(probs: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let ss: f64 = probs.iter().map(|p| (1.0 - p) * (1.0 - p)).sum();
    (ss / probs.len() as f64).sqrt()
}

pub fn threshold_from_probs(probs: &[f64], risk_factor: f64) -> f64 {
    (1.0 - risk_factor * mirrored_std(probs)).clamp(0.5, 1.0)
}

pub fn fit_doc_thresholds(head: &SoftmaxHead, seen: &View, risk_factor: f64) -> Result<DocThresholds> {
    if !(risk_factor >= 0.0) {
        return Err(Error::config("risk factor must be non-negative"));
    }
    let labels = seen.require_intents()?;
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); head.seen_count()];
    for (x, label) in seen.vectors.iter_rows().zip(labels) {
        let Some(c) = head.classes()[..head.seen_count()].iter().position(|s| s == label) else {
            return Err(Error::data(format!("intent {label:?} is not a seen class of the head")));
        };
        let p = head.predict_proba(x)?;
        per_class[c].push(p[c]);
    }
    if let Some(c) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::data(format!(
            "seen class {:?} has no training rows",
            head.classes()[c]
        )));
    }
    Ok(DocThresholds {
        classes: head.classes()[..head.seen_count()].to_vec(),
        thresholds: per_class
            .iter()
            .map(|p| threshold_from_probs(p, risk_factor))
            .collect(),
        risk_factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Seen(usize),
    Novel,
}

/// Applies the decision rules to a probability vector.
///
/// 1. argmax on a non-seen class: novel;
/// 2. every seen-class probability below its threshold: novel;
/// 3. otherwise the argmax seen class.
pub fn decide(probs: &[f64], seen_count: usize, thresholds: &[f64]) -> Verdict {
    let argmax = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    if argmax >= seen_count {
        return Verdict::Novel;
    }
    if probs[..seen_count]
        .iter()
        .zip(thresholds)
        .all(|(p, t)| p < t)
    {
        return Verdict::Novel;
    }
    Verdict::Seen(argmax)
}

pub fn detect_novel(head: &SoftmaxHead, thresholds: &DocThresholds, x: &[f64]) -> Result<Verdict> {
    if thresholds.thresholds.len() != head.seen_count() {
        return Err(Error::data("thresholds do not match the head's seen classes"));
    }
    let p = head.predict_proba(x)?;
    Ok(decide(&p, head.seen_count(), &thresholds.thresholds))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Detection {
    /// Ids flagged as carrying a novel intent (D_X), in input order.
    pub novel: Vec<String>,
    /// Remaining ids with their predicted seen intent.
    pub seen: Vec<SeenAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeenAssignment {
    pub id: String,
    pub intent: String,
}

impl Detection {
    pub fn is_novel(&self, id: &str) -> bool {
        self.novel.iter().any(|n| n == id)
    }
}

pub fn detect_all(head: &SoftmaxHead, thresholds: &DocThresholds, view: &View) -> Result<Detection> {
    let verdicts: Vec<Verdict> = (0..view.len())
        .into_par_iter()
        .map(|i| detect_novel(head, thresholds, view.vectors.row(i)))
        .collect::<Result<_>>()?;
    let mut out = Detection::default();
    for (id, v) in view.ids.iter().zip(verdicts) {
        match v {
            Verdict::Novel => out.novel.push(id.clone()),
            Verdict::Seen(c) => out.seen.push(SeenAssignment {
                id: id.clone(),
                intent: head.classes()[c].clone(),
            }),
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    classes: Vec<String>,
    seen_count: usize,
    mode: HeadMode,
    dim: usize,
    weights: String,
    bias: String,
}

impl SoftmaxHead {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        crate::io::to_json_bytes(&HeadFile {
            classes: self.classes.clone(),
            seen_count: self.seen_count,
            mode: self.mode,
            dim: self.dim(),
            weights: encode_f64s(self.weights.as_slice()),
            bias: encode_f64s(&self.bias),
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let f: HeadFile = serde_json::from_slice(bytes)?;
        let k = f.classes.len();
        let weights = Matrix::from_vec(k, f.dim, decode_f64s(&f.weights, k * f.dim)?)?;
        let bias = decode_f64s(&f.bias, k)?;
        SoftmaxHead::from_parts(weights, bias, f.classes, f.seen_count, f.mode)
    }
}
