//! Pairwise supervision on a handful of utterances: must-link and
//! cannot-link pairs edit the distance matrix before linkage.

use std::collections::HashMap;

use intent_discovery::cluster::{self, ConstraintSet};
use intent_discovery::corpus::{self, SpaceTag, Split};
use intent_discovery::eval::pairwise_f1;
use intent_discovery::synthetic::{self, SyntheticConfig};
use intent_discovery::Result;

pub struct Summary {
    pub constraints: usize,
    pub f1_without: f64,
    pub f1_with: f64,
}

pub fn run_example() -> Result<Summary> {
    let synth = synthetic::generate(&SyntheticConfig {
        seed: 7,
        ..SyntheticConfig::overlapping()
    })?;
    let dataset = corpus::join(synth.utterances.clone(), synth.embeddings.clone())?;
    let seen = corpus::split_views(&dataset)?.seen;
    let choice = cluster::transfer_threshold(&seen.embeddings(SpaceTag::Raw), &seen.require_intents()?, Default::default())?;

    // cluster the true novel utterances directly, to isolate the effect of the constraints
    let truth: HashMap<&str, &str> = synth
        .utterances
        .iter()
        .filter(|u| u.split == Split::Unlabeled)
        .filter_map(|u| Some((u.id.as_str(), u.intent.as_deref()?)))
        .filter(|(_, intent)| intent.starts_with("novel-"))
        .collect();
    let mut ids: Vec<String> = truth.keys().map(|s| s.to_string()).collect();
    ids.sort();
    let novel = synth.embeddings.subset(&ids)?;
    let labels: Vec<&str> = ids.iter().map(|id| truth[id.as_str()]).collect();

    let constraints: ConstraintSet = synthetic::truth_constraints(&synth.novel_groups(), 3, 4, 4)?;
    let (plain, _) = cluster::cluster_novel(&novel, choice.delta, None)?;
    let (guided, _) = cluster::cluster_novel(&novel, choice.delta, Some(&constraints))?;
    let f1_without = pairwise_f1(plain.labels(), &labels);
    let f1_with = pairwise_f1(guided.labels(), &labels);
    println!(
        "{} must-link + {} cannot-link pairs over 12 utterances",
        constraints.must_link.len(),
        constraints.cannot_link.len()
    );
    println!("without constraints: k = {}, pairwise F1 {f1_without:.3}", plain.k());
    println!("with constraints:    k = {}, pairwise F1 {f1_with:.3}", guided.k());
    Ok(Summary {
        constraints: constraints.len(),
        f1_without,
        f1_with,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
