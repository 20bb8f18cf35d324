//! Memory of encoded examples and the encoders that produce them.
//!
//! On-disk format (UTF-8):
//!
//! ```text
//! #l2ac-emb v1 dim=<D>
//! <id>\t<class_label>\t<v1> <v2> ... <vD>
//! ```
//!
//! Lines starting with `#` after the header are comments, blank lines are
//! skipped. Values are written in shortest round-trip decimal form so a
//! save/load cycle is bit-exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::Path;

use siphasher::sip::SipHasher13;

use crate::error::{Error, Result};

pub const EMB_MAGIC: &str = "#l2ac-emb v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub id: String,
    pub class_label: String,
    pub vector: Vec<f64>,
}

impl ExampleRecord {
    pub fn new(id: impl Into<String>, class_label: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            class_label: class_label.into(),
            vector,
        }
    }
}

/// Identifiers and labels end up tab-separated on a single line.
pub(crate) fn validate_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) || s.starts_with('#') {
        let msg = format!(
            "{kind} `{}` must be non-empty, free of tabs/newlines and not start with '#'",
            s.escape_debug()
        );
        return Err(if kind == "label" {
            Error::InvalidLabel(s.to_string())
        } else {
            Error::Format(msg)
        });
    }
    Ok(())
}

/// Row-indexed matrix of example embeddings with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    rows: Vec<ExampleRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_records(dim: usize, records: impl IntoIterator<Item = ExampleRecord>) -> Result<Self> {
        let mut m = Self::new(dim);
        for r in records {
            m.push(r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, record: ExampleRecord) -> Result<usize> {
        validate_token("id", &record.id)?;
        validate_token("label", &record.class_label)?;
        if record.vector.len() != self.dim {
            return Err(Error::shape(
                "EmbeddingMatrix::push",
                format!(
                    "example `{}` has {} values, matrix dim is {}",
                    record.id,
                    record.vector.len(),
                    self.dim
                ),
            ));
        }
        if let Some(v) = record.vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("example `{}` contains {v}", record.id)));
        }
        if self.index.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        let row = self.rows.len();
        self.index.insert(record.id.clone(), row);
        self.rows.push(record);
        Ok(row)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn records(&self) -> &[ExampleRecord] {
        &self.rows
    }

    pub fn record(&self, row: usize) -> Result<&ExampleRecord> {
        self.rows.get(row).ok_or(Error::IndexOutOfRange {
            index: row,
            len: self.rows.len(),
        })
    }

    /// Vector of a row that is known to exist.
    pub fn vector(&self, row: usize) -> &[f64] {
        &self.rows[row].vector
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Vectors for `rows`, in the order requested.
    pub fn lookup(&self, rows: &[usize]) -> Result<Vec<&[f64]>> {
        rows.iter()
            .map(|&r| self.record(r).map(|rec| rec.vector.as_slice()))
            .collect()
    }

    /// Row indices grouped by class label, in first-appearance order.
    pub fn class_rows(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for (row, rec) in self.rows.iter().enumerate() {
            match pos.get(rec.class_label.as_str()) {
                Some(&p) => order[p].1.push(row),
                None => {
                    pos.insert(&rec.class_label, order.len());
                    order.push((rec.class_label.clone(), vec![row]));
                }
            }
        }
        order
    }

    pub fn class_labels(&self) -> Vec<String> {
        self.class_rows().into_iter().map(|(l, _)| l).collect()
    }

    /// Keeps rows for which `keep` holds; returns the old-to-new row mapping.
    pub fn retain(&mut self, mut keep: impl FnMut(&ExampleRecord) -> bool) -> Vec<Option<usize>> {
        let mut mapping = Vec::with_capacity(self.rows.len());
        let mut next = 0;
        let old = std::mem::take(&mut self.rows);
        self.index.clear();
        for rec in old {
            if keep(&rec) {
                mapping.push(Some(next));
                self.index.insert(rec.id.clone(), next);
                self.rows.push(rec);
                next += 1;
            } else {
                mapping.push(None);
            }
        }
        mapping
    }

    /// New matrix with only the rows whose label is in `labels`.
    pub fn filter_classes(&self, labels: &[String]) -> EmbeddingMatrix {
        let mut m = self.clone();
        m.retain(|r| labels.contains(&r.class_label));
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{EMB_MAGIC} dim={}\n", self.dim);
        for r in &self.rows {
            let _ = write!(out, "{}\t{}\t", r.id, r.class_label);
            write_values(&mut out, &r.vector);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let dim =
            parse_header(header).ok_or_else(|| perr(1, format!("expected `{EMB_MAGIC} dim=<D>`, got `{header}`")))?;
        let mut m = Self::new(dim);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (Some(id), Some(label), Some(values)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(perr(lineno, "expected `<id>\\t<label>\\t<values>`".into()));
            };
            let vector = parse_values(values).map_err(|e| perr(lineno, e))?;
            if vector.len() != dim {
                return Err(perr(lineno, format!("expected {dim} values, found {}", vector.len())));
            }
            m.push(ExampleRecord::new(id, label, vector))
                .map_err(|e| perr(lineno, e.to_string()))?;
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_header(line: &str) -> Option<usize> {
    let rest = line.strip_prefix(EMB_MAGIC)?;
    let dim = rest.trim().strip_prefix("dim=")?;
    dim.parse().ok().filter(|&d| d > 0)
}

pub(crate) fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
}

pub(crate) fn parse_values(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_ascii_whitespace()
        .map(|tok| {
            let v: f64 = tok.parse().map_err(|_| format!("invalid number `{tok}`"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value `{tok}`"))
            }
        })
        .collect()
}

/// Frozen example encoder `h = g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoder {
    /// Seeded feature hashing of whitespace tokens, L2-normalized.
    FeatureHash { dim: usize, seed: u64 },
    /// Vectors are supplied externally through embedding files.
    Precomputed { dim: usize },
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match *self {
            Encoder::FeatureHash { dim, .. } | Encoder::Precomputed { dim } => dim,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, doc: &[S]) -> Result<Vec<f64>> {
        let (dim, seed) = match *self {
            Encoder::FeatureHash { dim, seed } => (dim, seed),
            Encoder::Precomputed { .. } => return Err(Error::UnsupportedEncoder("precomputed")),
        };
        if doc.is_empty() {
            return Err(Error::EmptyDocument);
        }
        let mut v = vec![0.0; dim];
        for tok in doc {
            let mut h = SipHasher13::new_with_keys(seed, seed.rotate_left(32) ^ 0x6c32_6163_656d_6221);
            h.write(tok.as_ref().as_bytes());
            v[(h.finish() % dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }

    /// Whitespace tokenization followed by [`Encoder::encode`].
    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        self.encode(&tokens)
    }
}
