//! Learn a cut height on labeled seen intents and reuse it on utterances
//! whose intents were never seen.

use intent_discovery::cluster::{self, F1Variant};
use intent_discovery::corpus::{EmbeddingSet, SpaceTag};
use intent_discovery::eval::{pairwise_f1, purity};
use intent_discovery::linalg::Matrix;
use intent_discovery::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Summary {
    pub delta: f64,
    pub seen_f1: f64,
    pub novel_k: usize,
    pub novel_f1: f64,
}

/// `per_blob` points around each center, labeled by blob index.
fn blobs(centers: &[[f64; 2]], per_blob: usize, sigma: f64, prefix: &str, rng: &mut ChaCha8Rng) -> Result<(EmbeddingSet, Vec<String>)> {
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        for i in 0..per_blob {
            ids.push(format!("{prefix}-{b}-{i}"));
            data.extend(c.iter().map(|x| x + noise.sample(rng)));
            labels.push(format!("{prefix}-{b}"));
        }
    }
    let m = Matrix::from_vec(ids.len(), 2, data)?;
    Ok((EmbeddingSet::new(ids, m, SpaceTag::Emb)?, labels))
}

pub fn run_example() -> Result<Summary> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (seen, seen_labels) = blobs(&[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]], 30, 0.3, "seen", &mut rng)?;
    let choice = cluster::transfer_threshold(&seen, &seen_labels, F1Variant::Pairwise)?;
    println!(
        "seen dendrogram: {} merges, delta = {:.3} (F1 {:.3} on seen intents)",
        choice.dendrogram.merges.len(),
        choice.delta,
        choice.f1
    );

    let (novel, novel_labels) = blobs(&[[10.0, 10.0], [14.0, 10.0]], 25, 0.3, "novel", &mut rng)?;
    let (clustering, _) = cluster::cluster_novel(&novel, choice.delta, None)?;
    let novel_f1 = pairwise_f1(clustering.labels(), &novel_labels);
    println!(
        "novel utterances: {} clusters, pairwise F1 {:.3}, purity {:.3}",
        clustering.k(),
        novel_f1,
        purity(clustering.labels(), &novel_labels)
    );
    Ok(Summary {
        delta: choice.delta,
        seen_f1: choice.f1,
        novel_k: clustering.k(),
        novel_f1,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
