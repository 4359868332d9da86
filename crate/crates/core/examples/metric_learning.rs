//! Train the projection network with the quadruplet margin loss and compare
//! intent separation before and after training.

use intent_discovery::corpus;
use intent_discovery::metric::{self, LossConfig, MetricTrainConfig};
use intent_discovery::synthetic::{self, SyntheticConfig};
use intent_discovery::{Error, Result};

pub struct Summary {
    pub quadruplets: usize,
    pub fresh_loss_before: f64,
    pub fresh_loss_after: f64,
    pub loss_history: Vec<f64>,
    pub output_dim: usize,
}

pub fn run_example() -> Result<Summary> {
    // an overlapping layout leaves the loss something to do
    let synth = synthetic::generate(&SyntheticConfig {
        sigma: 0.1,
        train_per_intent: 40,
        ..SyntheticConfig::overlapping()
    })?;
    let dataset = corpus::join(synth.utterances.clone(), synth.embeddings.clone())?;
    let seen = corpus::split_views(&dataset)?.seen;

    let sample = metric::sample_quadruplets(&seen, 4, 0)?;
    println!(
        "{} quadruplets from {} anchors ({} skipped)",
        sample.quadruplets.len(),
        seen.len(),
        sample.skipped.total()
    );

    let loss = LossConfig::default();
    let cfg = MetricTrainConfig {
        epochs: 10,
        hidden: 64,
        output: 32,
        learning_rate: 5e-3,
        ..MetricTrainConfig::default()
    };
    let untrained = metric::train_metric(&seen, &loss, &MetricTrainConfig { epochs: 0, ..cfg.clone() })?;
    let run = metric::train_metric(&seen, &loss, &cfg)?;
    for (epoch, l) in run.loss_history.iter().enumerate() {
        println!("epoch {epoch:2}  loss {l:.5}");
    }

    // score both nets on quadruplets drawn with a seed training never used
    let fresh = metric::sample_quadruplets(&seen, 4, 999)?.quadruplets;
    let before = metric::batch_loss(&untrained.model, &seen.vectors, &fresh, &loss)?;
    let after = metric::batch_loss(&run.model, &seen.vectors, &fresh, &loss)?;
    let violated = |net| -> Result<usize> {
        let mut n = 0;
        for q in &fresh {
            if metric::quadruplet_loss(net, &seen.vectors, q, &loss)? > 0.0 {
                n += 1;
            }
        }
        Ok(n)
    };
    println!(
        "fresh quadruplets: loss {before:.5} -> {after:.5}, margin violations {} -> {} of {}",
        violated(&untrained.model)?,
        violated(&run.model)?,
        fresh.len()
    );

    if !run.model.is_finite() {
        return Err(Error::Divergence("encoder weights".into()));
    }
    Ok(Summary {
        quadruplets: sample.quadruplets.len(),
        fresh_loss_before: before,
        fresh_loss_after: after,
        loss_history: run.loss_history,
        output_dim: run.model.output_dim(),
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
