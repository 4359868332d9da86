//! The whole pipeline over files: generate a synthetic corpus, run detect,
//! discover and link, and print the evaluation table and manifest.

use intent_discovery::pipeline::{self, PipelineOutcome};
use intent_discovery::synthetic::{self, SyntheticConfig};
use intent_discovery::{Error, Result};

pub fn run_example() -> Result<PipelineOutcome> {
    let dir = std::env::temp_dir().join(format!("intent-discovery-e2e-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let cfg = SyntheticConfig {
        seed: 6,
        ..SyntheticConfig::default()
    };
    let paths = synthetic::generate(&cfg)?.write(&dir)?;
    let run = paths.run_config(dir.join("out"), cfg.seed);
    let outcome = pipeline::cmd_pipeline(&run, true)?;

    print!("{}", outcome.report.to_table());
    for domain in outcome.link.taxonomy.novel_domains() {
        let intents: Vec<&str> = domain.intents.iter().map(|i| i.id.as_str()).collect();
        println!("{}: {}", domain.id, intents.join(", "));
    }
    for a in &outcome.manifest.artifacts {
        println!("{:<16} {:>8} bytes  {}", a.name, a.bytes, &a.sha256[..16]);
    }

    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(outcome)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
