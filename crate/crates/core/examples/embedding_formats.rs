//! Write and read embeddings in both supported encodings.

use intent_discovery::corpus::{self, EmbeddingSet, SpaceTag};
use intent_discovery::linalg::Matrix;
use intent_discovery::{Error, Result};

pub struct Summary {
    pub emb1_bytes: usize,
    pub round_trip_equal: bool,
}

pub fn run_example() -> Result<Summary> {
    let dir = std::env::temp_dir().join(format!("intent-discovery-formats-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    // values exactly representable in f32 survive both encodings unchanged
    let ids = vec!["u1".to_string(), "u2".to_string(), "ü3".to_string()];
    let m = Matrix::from_vec(3, 4, vec![0.5, -1.0, 2.25, 0.0, 1.0, 1.0, 1.0, 1.0, -0.125, 3.0, 0.75, -2.5])?;
    let set = EmbeddingSet::new(ids, m, SpaceTag::Raw)?;

    let bin = dir.join("vectors.emb1");
    corpus::write_embeddings(&set, &bin)?;
    let emb1_bytes = std::fs::metadata(&bin).map_err(|e| Error::io(&bin, e))?.len() as usize;
    let from_bin = corpus::load_embeddings(&bin)?;

    let tsv = dir.join("vectors.tsv");
    let text: String = set
        .ids()
        .iter()
        .zip(set.matrix().iter_rows())
        .map(|(id, row)| {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            format!("{id}\t{}\n", vals.join("\t"))
        })
        .collect();
    std::fs::write(&tsv, text).map_err(|e| Error::io(&tsv, e))?;
    let from_tsv = corpus::load_embeddings(&tsv)?;

    println!("EMB1: {} rows x {} dims in {emb1_bytes} bytes", from_bin.len(), from_bin.dim());
    println!("TSV:  {} rows x {} dims", from_tsv.len(), from_tsv.dim());

    let mut bad = corpus::encode_emb1(&set)?;
    bad.truncate(bad.len() - 3);
    match corpus::decode_emb1(&bad) {
        Err(e) => println!("truncated file rejected: {e}"),
        Ok(_) => return Err(Error::data("truncated file was accepted")),
    }

    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(Summary {
        emb1_bytes,
        round_trip_equal: from_bin == set && from_tsv == set,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
