//! Stage III on hand-made intent clusters: learn the domain-level height from
//! seen clusters, then group novel clusters into novel domains.

use intent_discovery::cluster::{Clustering, F1Variant};
use intent_discovery::corpus::{EmbeddingSet, SpaceTag};
use intent_discovery::linalg::Matrix;
use intent_discovery::taxonomy::{self, Taxonomy};
use intent_discovery::Result;

pub struct Summary {
    pub delta_domain: f64,
    pub taxonomy: Taxonomy,
}

/// Two points per intent, a small step apart.
fn points(centers: &[(&str, [f64; 2])]) -> Result<(EmbeddingSet, Clustering)> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (name, c) in centers {
        for (k, dx) in [0.0, 0.1].into_iter().enumerate() {
            ids.push(format!("{name}-{k}"));
            data.extend([c[0] + dx, c[1]]);
            labels.push(*name);
        }
    }
    let set = EmbeddingSet::new(ids.clone(), Matrix::from_vec(ids.len(), 2, data)?, SpaceTag::Emb)?;
    Ok((set, Clustering::from_labels(ids, &labels)?))
}

pub fn run_example() -> Result<Summary> {
    let seen_layout = [
        ("weather-now", [0.0, 0.0]),
        ("weather-week", [1.0, 0.0]),
        ("music-play", [10.0, 0.0]),
        ("music-pause", [10.0, 1.2]),
    ];
    let (seen_set, seen_clustering) = points(&seen_layout)?;
    let domains: Vec<&str> = seen_set
        .ids()
        .iter()
        .map(|id| if id.starts_with("weather") { "Weather" } else { "Music" })
        .collect();
    let seen = taxonomy::label_seen_clusters(&seen_clustering, &domains, &seen_set)?;
    let choice = taxonomy::transfer_domain_threshold(&seen, F1Variant::Pairwise)?;
    println!("delta_dom = {:.3} (F1 {:.2} on seen domains)", choice.delta, choice.f1);

    let novel_layout = [
        ("a", [0.0, 20.0]),
        ("b", [0.8, 20.0]),
        ("c", [20.0, 20.0]),
        ("d", [20.0, 21.0]),
    ];
    let (novel_set, novel_clustering) = points(&novel_layout)?;
    let novel = taxonomy::novel_intent_clusters(&novel_clustering, &novel_set)?;
    let mut tax = Taxonomy {
        domains: taxonomy::seen_domains(&seen),
    };
    tax.domains.extend(taxonomy::link_domains(&novel, choice.delta)?.domains);

    for d in &tax.domains {
        let intents: Vec<String> = d.intents.iter().map(|i| format!("{} ({} utts)", i.id, i.member_ids.len())).collect();
        println!("{:>16} [{:?}]: {}", d.id, d.provenance, intents.join(", "));
    }
    Ok(Summary {
        delta_domain: choice.delta,
        taxonomy: tax,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
