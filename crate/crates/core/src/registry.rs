//! The dynamic seen-class set and classification with rejection over it.
//!
//! Adding or removing a class only changes which stored examples the
//! meta-classifier is shown; model parameters are never read for writing.
//!
//! Persistence: a manifest
//!
//! ```text
//! #l2ac-registry v1
//! <label>\t<embedding-file-path>
//! ```
//!
//! lists classes in insertion order. Paths are resolved relative to the
//! manifest's directory and a class takes the rows of that file whose label
//! matches. [`SeenClassSet::save`] writes all rows into one embedding file
//! next to the manifest (`<manifest>.emb`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use crate::embedding::{validate_token, EmbeddingMatrix, ExampleRecord};
use crate::error::{Error, Result};
use crate::meta_classifier::{DecisionRule, MetaClassifier, Outcome};
use crate::ranker::ClassIndex;

pub const REGISTRY_MAGIC: &str = "#l2ac-registry v1";

/// Label reserved for rejected predictions in reports.
pub const REJECT_LABEL: &str = "REJECT";

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub outcome: Outcome,
    pub scores: BTreeMap<String, f64>,
    pub k_used: usize,
}

impl Prediction {
    /// Scores sorted by descending probability, ties by label.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.scores.iter().map(|(l, &p)| (l.as_str(), p)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeenClassSet {
    memory: EmbeddingMatrix,
    index: ClassIndex,
    order: Vec<String>,
    generation: u64,
}

impl SeenClassSet {
    pub fn new(dim: usize) -> Self {
        Self {
            memory: EmbeddingMatrix::new(dim),
            index: ClassIndex::new(),
            order: Vec::new(),
            generation: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.memory.dim()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Labels in insertion order.
    pub fn labels(&self) -> &[String] {
        &self.order
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains(label)
    }

    pub fn memory(&self) -> &EmbeddingMatrix {
        &self.memory
    }

    pub fn index(&self) -> &ClassIndex {
        &self.index
    }

    /// Registers `label` with `examples`, which are stored under that label
    /// whatever label they carried before.
    pub fn add_class(&mut self, label: &str, examples: Vec<ExampleRecord>) -> Result<()> {
        validate_token("label", label)?;
        if label == REJECT_LABEL {
            return Err(Error::InvalidLabel(label.to_string()));
        }
        if self.index.contains(label) {
            return Err(Error::DuplicateClass(label.to_string()));
        }
        if examples.is_empty() {
            return Err(Error::EmptyClass(label.to_string()));
        }
        let mut ids = HashSet::new();
        for e in &examples {
            if e.vector.len() != self.dim() {
                return Err(Error::shape(
                    "add_class",
                    format!(
                        "example `{}` has {} values, registry dim is {}",
                        e.id,
                        e.vector.len(),
                        self.dim()
                    ),
                ));
            }
            if self.memory.row_of(&e.id).is_some() || !ids.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        let mut staged = self.memory.clone();
        let mut rows = Vec::with_capacity(examples.len());
        for mut e in examples {
            e.class_label = label.to_string();
            rows.push(staged.push(e)?);
        }
        self.index.insert_class(label, rows, &staged)?;
        self.memory = staged;
        self.order.push(label.to_string());
        self.generation += 1;
        Ok(())
    }

    pub fn remove_class(&mut self, label: &str) -> Result<()> {
        let rows: HashSet<usize> = self.index.remove_class(label)?.into_iter().collect();
        let mut row = 0;
        let mapping = self.memory.retain(|_| {
            let keep = !rows.contains(&row);
            row += 1;
            keep
        });
        self.index.remap(&mapping);
        self.order.retain(|l| l != label);
        self.generation += 1;
        Ok(())
    }

    /// Classifies `x` against every seen class using the top-`k` stored
    /// examples of each.
    pub fn classify(&self, x: &[f64], model: &MetaClassifier, k: usize) -> Result<Prediction> {
        self.classify_with(x, model, k, DecisionRule::Aggregate)
    }

    pub fn classify_with(&self, x: &[f64], model: &MetaClassifier, k: usize, rule: DecisionRule) -> Result<Prediction> {
        if self.is_empty() {
            return Err(Error::EmptySeenSet);
        }
        let d = model.decide(x, &self.index, &self.memory, k, rule)?;
        let k_used = match rule {
            DecisionRule::Aggregate => k,
            DecisionRule::MeanOfTop(m) => m,
        };
        Ok(Prediction {
            outcome: d.outcome,
            scores: d.scores,
            k_used,
        })
    }

    /// Registry made of the given classes of `m`, in the order given.
    pub fn from_matrix(m: &EmbeddingMatrix, labels: &[String]) -> Result<Self> {
        let grouped: HashMap<String, Vec<usize>> = m.class_rows().into_iter().collect();
        let mut s = Self::new(m.dim());
        for label in labels {
            let rows = grouped.get(label).ok_or_else(|| Error::UnknownClass(label.clone()))?;
            let examples = rows.iter().map(|&r| m.records()[r].clone()).collect();
            s.add_class(label, examples)?;
        }
        Ok(s)
    }

    /// Embedding file written next to `manifest`: its name plus `.emb`.
    pub fn data_path(manifest: &Path) -> PathBuf {
        let mut name = manifest.as_os_str().to_owned();
        name.push(".emb");
        PathBuf::from(name)
    }

    pub fn save(&self, manifest: impl AsRef<Path>) -> Result<()> {
        let manifest = manifest.as_ref();
        let data = Self::data_path(manifest);
        let file_name = data
            .file_name()
            .ok_or_else(|| Error::Format(format!("invalid manifest path {}", manifest.display())))?
            .to_string_lossy()
            .into_owned();
        let mut ordered = EmbeddingMatrix::new(self.dim());
        for label in &self.order {
            for &r in self.index.members(label)? {
                ordered.push(self.memory.records()[r].clone())?;
            }
        }
        ordered.save(&data)?;
        let mut text = format!("{REGISTRY_MAGIC}\n");
        for label in &self.order {
            text.push_str(&format!("{label}\t{file_name}\n"));
        }
        std::fs::write(manifest, text).map_err(|e| Error::io(manifest, e))
    }

    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let source = manifest.display().to_string();
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.clone(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == REGISTRY_MAGIC => {}
            _ => return Err(perr(1, format!("expected `{REGISTRY_MAGIC}` header"))),
        }
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut files: HashMap<PathBuf, EmbeddingMatrix> = HashMap::new();
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, path) = line
                .split_once('\t')
                .ok_or_else(|| perr(i + 1, "expected `<label>\\t<embedding-file-path>`".into()))?;
            let path = base.join(path);
            if !files.contains_key(&path) {
                files.insert(path.clone(), EmbeddingMatrix::load(&path)?);
            }
            entries.push((i + 1, label.to_string(), path));
        }
        let dim = match entries.first() {
            Some((_, _, p)) => files[p].dim(),
            None => return Err(Error::Format(format!("{source}: registry lists no classes"))),
        };
        let mut s = Self::new(dim);
        for (line, label, path) in entries {
            let m = &files[&path];
            let examples: Vec<ExampleRecord> = m.records().iter().filter(|r| r.class_label == label).cloned().collect();
            s.add_class(&label, examples)
                .map_err(|e| perr(line, format!("class `{label}`: {e}")))?;
        }
        Ok(s)
    }
}

/// Shared registry handle: readers classify against an immutable snapshot
/// while a writer publishes a new generation atomically.
#[derive(Debug, Default)]
pub struct SharedSeenClassSet {
    current: RwLock<Option<Arc<SeenClassSet>>>,
}

impl SharedSeenClassSet {
    pub fn new(set: SeenClassSet) -> Self {
        Self {
            current: RwLock::new(Some(Arc::new(set))),
        }
    }

    pub fn snapshot(&self) -> Arc<SeenClassSet> {
        self.current
            .read()
            .expect("registry lock poisoned")
            .clone()
            .expect("registry initialized")
    }

    /// Applies `f` to a copy of the current set and publishes it on success.
    pub fn update<T>(&self, f: impl FnOnce(&mut SeenClassSet) -> Result<T>) -> Result<T> {
        let mut guard = self.current.write().expect("registry lock poisoned");
        let mut next = guard.as_deref().cloned().expect("registry initialized");
        let out = f(&mut next)?;
        *guard = Some(Arc::new(next));
        Ok(out)
    }
}
