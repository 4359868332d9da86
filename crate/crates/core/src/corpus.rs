//! Embedding and utterance ingestion.
//!
//! Two embedding encodings are accepted:
//!
//! * `EMB1` binary: the magic `EMB1`, `u32` LE row count `N`, `u32` LE
//!   dimension `D`, then `N` ids (`u16` LE byte length followed by UTF-8
//!   bytes), then `N*D` little-endian `f32` values in row-major order.
//! * TSV text: one row per line, `id<TAB>v1<TAB>...<TAB>vD`.
//!
//! Utterance metadata is JSON-lines with the keys `id`, `split` (required)
//! and `text`, `intent`, `domain` (optional).
//!
//! Values are stored as `f32` on disk and widened to `f64` in memory.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainSeen,
    Ood,
    Unlabeled,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub split: Split,
}

/// Which representation space a set of vectors lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceTag {
    Raw,
    E,
    Emb,
}

/// Id-aligned matrix of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    matrix: Matrix,
    space: SpaceTag,
}

impl EmbeddingSet {
    /// Validates ids (unique) and values (finite) before constructing.
    pub fn new(ids: Vec<String>, matrix: Matrix, space: SpaceTag) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::data(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                matrix.rows()
            )));
        }
        if !ids.is_empty() && matrix.cols() == 0 {
            return Err(Error::data("embedding dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::data(format!("duplicate id {id:?}")));
            }
        }
        for (id, row) in ids.iter().zip(matrix.iter_rows()) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("non-finite value in row {id:?}")));
            }
        }
        Ok(EmbeddingSet { ids, matrix, space })
    }

    pub fn empty(dim: usize, space: SpaceTag) -> Self {
        EmbeddingSet {
            ids: Vec::new(),
            matrix: Matrix::zeros(0, dim),
            space,
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// Rows for the given ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<EmbeddingSet> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::data(format!("unknown id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSet {
            ids: ids.to_vec(),
            matrix: self.matrix.select_rows(&rows),
            space: self.space,
        })
    }

    pub fn into_parts(self) -> (Vec<String>, Matrix, SpaceTag) {
        (self.ids, self.matrix, self.space)
    }
}

/// Loads an EMB1 or TSV embedding file, sniffing the format from the magic bytes.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EMB1_MAGIC) {
        decode_emb1(&bytes)
    } else if bytes.len() >= 4 && bytes[..4].iter().any(|b| !b.is_ascii()) {
        Err(Error::data(format!(
            "{}: bad magic, expected EMB1 or TSV text",
            path.display()
        )))
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::data(format!("{}: bad magic", path.display())))?;
        parse_tsv(&text)
    }
}

pub fn decode_emb1(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != EMB1_MAGIC {
        return Err(Error::data("bad magic"));
    }
    let n = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    if n > 0 && d == 0 {
        return Err(Error::data("embedding dimension must be positive"));
    }
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = cur.u16()? as usize;
        let raw = cur.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::data("id is not valid UTF-8"))?
            .to_owned();
        ids.push(id);
    }
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::data("declared N*D overflows"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(Error::data(format!(
            "truncated payload: header declares {n}x{d} floats ({expected} bytes), found {} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::data(format!(
            "trailing bytes: header declares {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    EmbeddingSet::new(ids, Matrix::from_vec(n, d, data)?, SpaceTag::Raw)
}

fn parse_tsv(text: &str) -> Result<EmbeddingSet> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_owned();
        let mut count = 0;
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::data(format!("line {}: cannot parse {f:?} as a float", lineno + 1))
            })?;
            // match the on-disk precision of the binary format
            data.push(v as f32 as f64);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(Error::data(format!(
                    "line {}: expected {d} values, found {count}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        ids.push(id);
    }
    let d = dim.unwrap_or(0);
    EmbeddingSet::new(ids.clone(), Matrix::from_vec(ids.len(), d, data)?, SpaceTag::Raw)
}

/// Serializes to canonical EMB1 bytes.
pub fn encode_emb1(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let n = u32::try_from(set.len()).map_err(|_| Error::data("too many rows for EMB1"))?;
    let d = u32::try_from(set.dim()).map_err(|_| Error::data("dimension too large for EMB1"))?;
    let mut out = Vec::with_capacity(12 + set.len() * (8 + 4 * set.dim()));
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for id in set.ids() {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::data(format!("id longer than 65535 bytes: {id:?}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for v in set.matrix().as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_emb1(set)?;
    crate::io::write_atomic(path.as_ref(), &bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data("truncated header"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

/// Loads JSON-lines utterance metadata.
pub fn load_utterances(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_utterances(BufReader::new(file))
}

pub fn parse_utterances(reader: impl BufRead) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        validate_utterance(&utt).map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        if !ids.insert(utt.id.clone()) {
            return Err(Error::data(format!(
                "line {}: duplicate id {:?}",
                lineno + 1,
                utt.id
            )));
        }
        out.push(utt);
    }
    Ok(out)
}

fn validate_utterance(u: &Utterance) -> std::result::Result<(), String> {
    if u.id.is_empty() {
        return Err("empty id".into());
    }
    if u.split == Split::TrainSeen {
        if u.intent.is_none() {
            return Err(format!("train_seen utterance {:?} has no intent", u.id));
        }
        if u.domain.is_none() {
            return Err(format!("train_seen utterance {:?} has no domain", u.id));
        }
    }
    Ok(())
}

pub fn write_utterances(utterances: &[Utterance], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    for u in utterances {
        serde_json::to_writer(&mut buf, u)?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path.as_ref(), &buf)
}

/// Utterances joined one-to-one with their embedding rows.
///
/// Utterances are kept in embedding row order.
#[derive(Debug, Clone)]
pub struct Dataset {
    utterances: Vec<Utterance>,
    embeddings: EmbeddingSet,
}

impl Dataset {
    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}

/// Pairs utterances with embeddings, requiring a bijection between the id sets.
pub fn join(utterances: Vec<Utterance>, embeddings: EmbeddingSet) -> Result<Dataset> {
    let mut by_id: HashMap<String, Utterance> = HashMap::with_capacity(utterances.len());
    for u in utterances {
        if by_id.contains_key(&u.id) {
            return Err(Error::data(format!("duplicate utterance id {:?}", u.id)));
        }
        by_id.insert(u.id.clone(), u);
    }
    let emb_ids: HashSet<&str> = embeddings.ids().iter().map(String::as_str).collect();
    let no_embedding: BTreeSet<&str> = by_id
        .keys()
        .map(String::as_str)
        .filter(|id| !emb_ids.contains(id))
        .collect();
    let no_metadata: BTreeSet<&str> = embeddings
        .ids()
        .iter()
        .map(String::as_str)
        .filter(|id| !by_id.contains_key(*id))
        .collect();
    if !no_embedding.is_empty() || !no_metadata.is_empty() {
        return Err(Error::data(format!(
            "ids without embeddings: {no_embedding:?}; ids without metadata: {no_metadata:?}"
        )));
    }
    let utterances = embeddings
        .ids()
        .iter()
        .map(|id| by_id.remove(id).expect("checked above"))
        .collect();
    Ok(Dataset {
        utterances,
        embeddings,
    })
}

/// A labeled slice of the dataset: vectors plus per-row metadata.
#[derive(Debug, Clone)]
pub struct View {
    pub ids: Vec<String>,
    pub vectors: Matrix,
    pub intents: Vec<Option<String>>,
    pub domains: Vec<Option<String>>,
}

impl View {
    fn from_rows(dataset: &Dataset, rows: &[usize]) -> View {
        let utts = dataset.utterances();
        View {
            ids: rows.iter().map(|&r| utts[r].id.clone()).collect(),
            vectors: dataset.embeddings().matrix().select_rows(rows),
            intents: rows.iter().map(|&r| utts[r].intent.clone()).collect(),
            domains: rows.iter().map(|&r| utts[r].domain.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn embeddings(&self, space: SpaceTag) -> EmbeddingSet {
        EmbeddingSet {
            ids: self.ids.clone(),
            matrix: self.vectors.clone(),
            space,
        }
    }

    /// Sorted distinct intent labels.
    pub fn intent_vocab(&self) -> BTreeSet<&str> {
        self.intents.iter().flatten().map(String::as_str).collect()
    }

    pub fn domain_vocab(&self) -> BTreeSet<&str> {
        self.domains.iter().flatten().map(String::as_str).collect()
    }

    /// Intent labels, failing if any row is unlabeled.
    pub fn require_intents(&self) -> Result<Vec<&str>> {
        self.intents
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| {
                l.as_deref()
                    .ok_or_else(|| Error::data(format!("utterance {id:?} has no intent label")))
            })
            .collect()
    }

    pub fn require_domains(&self) -> Result<Vec<&str>> {
        self.domains
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| {
                l.as_deref()
                    .ok_or_else(|| Error::data(format!("utterance {id:?} has no domain label")))
            })
            .collect()
    }
}

/// The views the pipeline consumes.
#[derive(Debug, Clone)]
pub struct Views {
    /// Labeled seen-intent training rows (D_T).
    pub seen: View,
    /// Validation rows; part of D_T but kept out of training.
    pub validation: View,
    /// Out-of-domain rows used as the novel classes during detection.
    pub ood: View,
    /// The unlabeled collection (D_C).
    pub unlabeled: View,
}

pub fn split_views(dataset: &Dataset) -> Result<Views> {
    let mut rows: HashMap<Split, Vec<usize>> = HashMap::new();
    for (i, u) in dataset.utterances().iter().enumerate() {
        rows.entry(u.split).or_default().push(i);
    }
    let mut view = |s: Split| View::from_rows(dataset, &rows.remove(&s).unwrap_or_default());
    let views = Views {
        seen: view(Split::TrainSeen),
        validation: view(Split::Validation),
        ood: view(Split::Ood),
        unlabeled: view(Split::Unlabeled),
    };
    let seen_vocab = views.seen.intent_vocab();
    let overlap: Vec<&str> = views
        .ood
        .intent_vocab()
        .into_iter()
        .filter(|i| seen_vocab.contains(i))
        .collect();
    if !overlap.is_empty() {
        return Err(Error::data(format!(
            "OOD intents overlap seen intents: {overlap:?}"
        )));
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str], rows: &[&[f64]]) -> EmbeddingSet {
        let d = rows.first().map_or(1, |r| r.len());
        EmbeddingSet::new(
            ids.iter().map(|s| s.to_string()).collect(),
            Matrix::from_rows(rows, d).unwrap(),
            SpaceTag::Raw,
        )
        .unwrap()
    }

    fn utt(id: &str, split: Split, intent: Option<&str>, domain: Option<&str>) -> Utterance {
        Utterance {
            id: id.into(),
            text: None,
            intent: intent.map(Into::into),
            domain: domain.map(Into::into),
            split,
        }
    }

    #[test]
    fn emb1_round_trip() {
        let s = set(&["a", "b"], &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let bytes = encode_emb1(&s).unwrap();
        let back = decode_emb1(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 3);
        assert_eq!(back, s);
        assert_eq!(encode_emb1(&back).unwrap(), bytes);
    }

    #[test]
    fn tsv_single_row() {
        let s = parse_tsv("u1\t0.5\t0.5\n").unwrap();
        assert_eq!(s.ids(), &["u1".to_string()]);
        assert_eq!(s.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn tsv_ragged_rows_rejected() {
        assert!(parse_tsv("a\t1\t2\nb\t1\n").is_err());
    }

    #[test]
    fn truncated_payload() {
        let s = set(&["a", "b", "c"], &[&[1.0], &[2.0], &[3.0]]);
        let mut bytes = encode_emb1(&s).unwrap();
        bytes.truncate(bytes.len() - 4);
        let err = decode_emb1(&bytes).unwrap_err().to_string();
        assert!(err.contains("truncated payload"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let err = decode_emb1(b"EMB2\0\0\0\0\0\0\0\0").unwrap_err().to_string();
        assert!(err.contains("bad magic"));
    }

    #[test]
    fn non_finite_value_names_row() {
        let mut bytes = encode_emb1(&set(&["ok", "bad"], &[&[1.0], &[2.0]])).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_emb1(&bytes).unwrap_err().to_string();
        assert!(err.contains("\"bad\""), "{err}");
    }

    #[test]
    fn duplicate_embedding_id() {
        let m = Matrix::from_rows(&[[1.0], [2.0]], 1).unwrap();
        let err = EmbeddingSet::new(vec!["x".into(), "x".into()], m, SpaceTag::Raw);
        assert!(err.unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn utterance_lines() {
        let text = r#"{"id":"u1","intent":"GetWeather","domain":"Weather","split":"train_seen"}
{"id":"u2","split":"unlabeled"}
"#;
        let utts = parse_utterances(text.as_bytes()).unwrap();
        assert_eq!(utts[0].intent.as_deref(), Some("GetWeather"));
        assert_eq!(utts[1].intent, None);

        let bad = r#"{"id":"u3","split":"train_seen"}"#;
        assert!(parse_utterances(bad.as_bytes()).is_err());
        let no_id = r#"{"split":"unlabeled"}"#;
        assert!(parse_utterances(no_id.as_bytes()).is_err());
        let dup = "{\"id\":\"a\",\"split\":\"ood\"}\n{\"id\":\"a\",\"split\":\"ood\"}\n";
        assert!(parse_utterances(dup.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn join_requires_bijection() {
        let utts = vec![
            utt("a", Split::Unlabeled, None, None),
            utt("b", Split::Unlabeled, None, None),
            utt("c", Split::Unlabeled, None, None),
        ];
        let ok = join(utts.clone(), set(&["c", "a", "b"], &[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert_eq!(ok.len(), 3);
        assert_eq!(ok.utterances()[0].id, "c");

        let err = join(utts, set(&["a", "b"], &[&[1.0], &[2.0]])).unwrap_err();
        assert!(err.to_string().contains("\"c\""), "{err}");

        let empty = join(Vec::new(), EmbeddingSet::empty(4, SpaceTag::Raw)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn views_by_split() {
        let utts = vec![
            utt("s1", Split::TrainSeen, Some("A"), Some("d")),
            utt("s2", Split::TrainSeen, Some("B"), Some("d")),
            utt("o1", Split::Ood, Some("X"), None),
            utt("u1", Split::Unlabeled, None, None),
            utt("u2", Split::Unlabeled, None, None),
            utt("u3", Split::Unlabeled, None, None),
        ];
        let owned: Vec<String> = utts.iter().map(|u| u.id.clone()).collect();
        let ids: Vec<&str> = owned.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let row_refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let ds = join(utts.clone(), set(&ids, &row_refs)).unwrap();
        let v = split_views(&ds).unwrap();
        assert_eq!((v.seen.len(), v.ood.len(), v.unlabeled.len()), (2, 1, 3));

        let mut clash = utts;
        clash[2].intent = Some("A".into());
        let ds = join(clash, set(&ids, &row_refs)).unwrap();
        assert!(split_views(&ds).is_err());
    }
}
