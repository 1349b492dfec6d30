//! Dataset directory format, version 1.
//!
//! ```text
//! meta.json     {"format": 1, "name", "n", "c", "f", "task", "feature_encoding",
//!                optional "e" and "checksums": {file: sha256-hex}}
//! edges.tsv     src<TAB>dst per line, 0-indexed, directed as listed
//! features.tsv  node<TAB>col<TAB>value triplets   (feature_encoding = sparse_triplet)
//! features.bin  row-major little-endian f64, n*f   (feature_encoding = dense_bin)
//! labels.tsv    node<TAB>class  |  node<TAB>c1,c2,...  (multi_label)
//! split.json    {"train": [...], "val": [...], "test": [...]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetManifest, FeatureEncoding, Split, Task};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const FORMAT_VERSION: u32 = 1;

const META: &str = "meta.json";
const EDGES: &str = "edges.tsv";
const FEATURES_TSV: &str = "features.tsv";
const FEATURES_BIN: &str = "features.bin";
const LABELS: &str = "labels.tsv";
const SPLIT: &str = "split.json";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: u32,
    name: String,
    n: usize,
    c: usize,
    f: usize,
    task: Task,
    feature_encoding: FeatureEncoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    e: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    checksums: BTreeMap<String, String>,
}

fn read_bytes(dir: &Path, file: &str) -> Result<Vec<u8>> {
    let path = dir.join(file);
    fs::read(&path).map_err(|e| Error::io(path.display(), e))
}

fn read_text(dir: &Path, file: &str) -> Result<(Vec<u8>, String)> {
    let bytes = read_bytes(dir, file)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::data(file, None, format!("not valid UTF-8: {e}")))?;
    Ok((bytes, text))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn verify_checksum(meta: &Meta, file: &str, bytes: &[u8]) -> Result<()> {
    if let Some(expected) = meta.checksums.get(file) {
        let actual = sha256_hex(bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::data(
                file,
                None,
                format!("checksum mismatch: expected {expected}, found {actual}"),
            ));
        }
    }
    Ok(())
}

/// Non-empty lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn fields<'a>(file: &str, line: usize, text: &'a str, expected: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = text.split('\t').collect();
    if parts.len() != expected {
        return Err(Error::data(
            file,
            Some(line),
            format!("expected {expected} tab-separated fields, found {}", parts.len()),
        ));
    }
    Ok(parts)
}

fn parse_index(file: &str, line: usize, field: &str, what: &str, bound: usize) -> Result<usize> {
    let value: usize = field
        .trim()
        .parse()
        .map_err(|_| Error::data(file, Some(line), format!("invalid {what} {field:?}")))?;
    if value >= bound {
        return Err(Error::data(
            file,
            Some(line),
            format!("{what} {value} out of range [0, {bound})"),
        ));
    }
    Ok(value)
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let (_, text) = read_text(dir, META)?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::data(META, Some(e.line()), e.to_string()))?;
    if meta.format != FORMAT_VERSION {
        return Err(Error::data(
            META,
            None,
            format!("unsupported format {} (expected {FORMAT_VERSION})", meta.format),
        ));
    }
    if meta.n == 0 || meta.c == 0 || meta.f == 0 {
        return Err(Error::data(META, None, "n, c and f must all be positive"));
    }
    Ok(meta)
}

/// Reads only `meta.json`, filling in the edge count from `edges.tsv`.
pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let (_, edges) = read_text(dir, EDGES)?;
    Ok(DatasetManifest {
        format: meta.format,
        name: meta.name,
        n: meta.n,
        e: records(&edges).count(),
        c: meta.c,
        f: meta.f,
        task: meta.task,
        feature_encoding: meta.feature_encoding,
        checksums: meta.checksums,
    })
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let n = meta.n;

    let (bytes, text) = read_text(dir, EDGES)?;
    verify_checksum(&meta, EDGES, &bytes)?;
    let mut edges = Vec::new();
    for (line, rec) in records(&text) {
        let f = fields(EDGES, line, rec, 2)?;
        let src = parse_index(EDGES, line, f[0], "source node", n)?;
        let dst = parse_index(EDGES, line, f[1], "target node", n)?;
        edges.push((src, dst));
    }
    if let Some(e) = meta.e {
        if e != edges.len() {
            return Err(Error::data(
                META,
                None,
                format!("meta.json declares e = {e} but {EDGES} has {} edges", edges.len()),
            ));
        }
    }

    let features = match meta.feature_encoding {
        FeatureEncoding::SparseTriplet => read_sparse_features(dir, &meta)?,
        FeatureEncoding::DenseBin => read_dense_features(dir, &meta)?,
    };
    let labels = read_labels(dir, &meta)?;

    let (bytes, text) = read_text(dir, SPLIT)?;
    verify_checksum(&meta, SPLIT, &bytes)?;
    let split: Split =
        serde_json::from_str(&text).map_err(|e| Error::data(SPLIT, Some(e.line()), e.to_string()))?;

    let dataset = Dataset::new(meta.name.clone(), meta.task, edges, features, labels, split).map_err(
        |e| match e {
            // Attribute validation failures to the file they come from.
            Error::Data { location, message } => {
                let file = match location.file.as_str() {
                    "split" => SPLIT,
                    "labels" => LABELS,
                    "features" => match meta.feature_encoding {
                        FeatureEncoding::SparseTriplet => FEATURES_TSV,
                        FeatureEncoding::DenseBin => FEATURES_BIN,
                    },
                    "edges" => EDGES,
                    other => return Error::data(other.to_string(), location.line, message),
                };
                Error::data(file, location.line, message)
            }
            other => other,
        },
    )?;
    Ok(dataset.with_feature_encoding(meta.feature_encoding))
}

fn read_sparse_features(dir: &Path, meta: &Meta) -> Result<DenseMatrix> {
    let (bytes, text) = read_text(dir, FEATURES_TSV)?;
    verify_checksum(meta, FEATURES_TSV, &bytes)?;
    let mut features = DenseMatrix::zeros(meta.n, meta.f);
    let mut seen = vec![false; meta.n * meta.f];
    for (line, rec) in records(&text) {
        let f = fields(FEATURES_TSV, line, rec, 3)?;
        let node = parse_index(FEATURES_TSV, line, f[0], "node", meta.n)?;
        let col = parse_index(FEATURES_TSV, line, f[1], "feature column", meta.f)?;
        let value: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| Error::data(FEATURES_TSV, Some(line), format!("invalid value {:?}", f[2])))?;
        if !value.is_finite() {
            return Err(Error::data(FEATURES_TSV, Some(line), "non-finite feature value"));
        }
        let slot = node * meta.f + col;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::data(
                FEATURES_TSV,
                Some(line),
                format!("duplicate entry for node {node}, column {col}"),
            ));
        }
        features.set(node, col, value);
    }
    Ok(features)
}

fn read_dense_features(dir: &Path, meta: &Meta) -> Result<DenseMatrix> {
    let bytes = read_bytes(dir, FEATURES_BIN)?;
    verify_checksum(meta, FEATURES_BIN, &bytes)?;
    let expected = meta.n * meta.f * 8;
    if bytes.len() != expected {
        return Err(Error::data(
            FEATURES_BIN,
            None,
            format!("{} bytes, expected {expected} for {}x{} f64", bytes.len(), meta.n, meta.f),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::data(
            FEATURES_BIN,
            Some(pos / meta.f + 1),
            format!("non-finite value at node {}, column {}", pos / meta.f, pos % meta.f),
        ));
    }
    DenseMatrix::new(meta.n, meta.f, data)
}

fn read_labels(dir: &Path, meta: &Meta) -> Result<DenseMatrix> {
    let (bytes, text) = read_text(dir, LABELS)?;
    verify_checksum(meta, LABELS, &bytes)?;
    let mut labels = DenseMatrix::zeros(meta.n, meta.c);
    let mut seen = vec![false; meta.n];
    for (line, rec) in records(&text) {
        let f = fields(LABELS, line, rec, 2)?;
        let node = parse_index(LABELS, line, f[0], "node", meta.n)?;
        if std::mem::replace(&mut seen[node], true) {
            return Err(Error::data(LABELS, Some(line), format!("node {node} listed twice")));
        }
        match meta.task {
            Task::SingleLabel => {
                let class = parse_index(LABELS, line, f[1], "class", meta.c)?;
                labels.set(node, class, 1.0);
            }
            Task::MultiLabel => {
                for part in f[1].split(',').filter(|p| !p.trim().is_empty()) {
                    let class = parse_index(LABELS, line, part, "class", meta.c)?;
                    labels.set(node, class, 1.0);
                }
            }
        }
    }
    Ok(labels)
}

/// Writes `dataset` in format version 1, with checksums for every data file.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;

    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
    let mut checksums = BTreeMap::new();
    let mut write = |file: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(file);
        fs::write(&path, bytes).map_err(|e| Error::io(path.display(), e))?;
        checksums.insert(file.to_string(), sha256_hex(bytes));
        Ok(())
    };

    let mut edges = String::new();
    for (s, d) in dataset.edges() {
        let _ = writeln!(edges, "{s}\t{d}");
    }
    write(EDGES, edges.as_bytes())?;

    let features = dataset.features();
    match dataset.feature_encoding() {
        FeatureEncoding::SparseTriplet => {
            let mut out = String::new();
            for i in 0..features.rows() {
                for (j, &v) in features.row(i).iter().enumerate() {
                    if v != 0.0 {
                        // `{}` on f64 prints the shortest string that parses back exactly.
                        let _ = writeln!(out, "{i}\t{j}\t{v}");
                    }
                }
            }
            write(FEATURES_TSV, out.as_bytes())?;
        }
        FeatureEncoding::DenseBin => {
            let bytes: Vec<u8> = features.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
            write(FEATURES_BIN, &bytes)?;
        }
    }

    let labels = dataset.labels();
    let mut out = String::new();
    for i in 0..labels.rows() {
        let classes: Vec<String> = labels
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(j, _)| j.to_string())
            .collect();
        if !classes.is_empty() {
            let _ = writeln!(out, "{i}\t{}", classes.join(","));
        }
    }
    write(LABELS, out.as_bytes())?;

    let split = serde_json::to_string(dataset.split()).expect("split serializes");
    write(SPLIT, split.as_bytes())?;

    let meta = Meta {
        format: FORMAT_VERSION,
        name: dataset.name().to_string(),
        n: dataset.n(),
        c: dataset.num_classes(),
        f: dataset.num_features(),
        task: dataset.task(),
        feature_encoding: dataset.feature_encoding(),
        e: Some(dataset.edges().len()),
        checksums,
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    let path = dir.join(META);
    fs::write(&path, text).map_err(|e| Error::io(path.display(), e))
}
