//! Stage I on its own: train the (S+m) softmax head on seen and OOD rows,
//! fit DOC thresholds, and flag novel utterances in the unlabeled pool.

use intent_discovery::corpus::{self, Views};
use intent_discovery::detector::{self, HeadMode, TrainConfig};
use intent_discovery::eval::detection_f1;
use intent_discovery::synthetic::{self, SyntheticConfig};
use intent_discovery::Result;

pub struct Summary {
    pub flagged: usize,
    pub unlabeled: usize,
    pub f1: f64,
    pub thresholds: Vec<f64>,
}

pub fn run_example() -> Result<Summary> {
    let synth = synthetic::generate(&SyntheticConfig::default())?;
    let dataset = corpus::join(synth.utterances.clone(), synth.embeddings.clone())?;
    let Views { seen, ood, unlabeled, .. } = corpus::split_views(&dataset)?;

    let cfg = TrainConfig {
        epochs: 20,
        l2_weight: 1e-3,
        ..TrainConfig::default()
    };
    let run = detector::train_softmax(&seen, &ood, HeadMode::MUnseen, &cfg)?;
    let head = run.model;
    println!(
        "head: {} seen + {} OOD classes, loss {:.4} -> {:.4}",
        head.seen_count(),
        head.num_classes() - head.seen_count(),
        run.loss_history[0],
        run.loss_history[run.loss_history.len() - 1]
    );

    let thresholds = detector::fit_doc_thresholds(&head, &seen, detector::DEFAULT_RISK_FACTOR)?;
    for (class, t) in thresholds.classes.iter().zip(&thresholds.thresholds) {
        println!("  t[{class}] = {t:.4}");
    }

    let detection = detector::detect_all(&head, &thresholds, &unlabeled)?;
    let (predicted, truth): (Vec<bool>, Vec<bool>) = unlabeled
        .ids
        .iter()
        .zip(&unlabeled.intents)
        .map(|(id, intent)| {
            let novel = intent.as_deref().is_some_and(|i| i.starts_with("novel-"));
            (detection.is_novel(id), novel)
        })
        .unzip();
    let f1 = detection_f1(&predicted, &truth);
    println!(
        "flagged {} of {} unlabeled utterances, detection F1 {f1:.3}",
        detection.novel.len(),
        unlabeled.len()
    );
    Ok(Summary {
        flagged: detection.novel.len(),
        unlabeled: unlabeled.len(),
        f1,
        thresholds: thresholds.thresholds,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
