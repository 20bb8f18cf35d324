//! Cosine retrieval of per-class nearest examples and class-vector ranking
//! of negative classes.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numkernel::dense::dot;

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "cosine",
            format!("operands have lengths {} and {}", a.len(), b.len()),
        ));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

#[derive(Debug, Clone, PartialEq)]
struct ClassEntry {
    rows: Vec<usize>,
    norms: Vec<f64>,
    class_vector: Vec<f64>,
}

impl ClassEntry {
    fn build(rows: Vec<usize>, m: &EmbeddingMatrix) -> Result<Self> {
        let mut class_vector = vec![0.0; m.dim()];
        let mut norms = Vec::with_capacity(rows.len());
        for &r in &rows {
            let v = m.record(r)?.vector.as_slice();
            for (acc, x) in class_vector.iter_mut().zip(v) {
                *acc += x;
            }
            norms.push(l2_norm(v));
        }
        let count = rows.len() as f64;
        class_vector.iter_mut().for_each(|x| *x /= count);
        Ok(Self {
            rows,
            norms,
            class_vector,
        })
    }
}

/// Class label → member rows of an [`EmbeddingMatrix`], with cached class
/// vectors (member means).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassIndex {
    classes: BTreeMap<String, ClassEntry>,
}

impl ClassIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Indexes every class present in `m`.
    pub fn build(m: &EmbeddingMatrix) -> Result<Self> {
        let mut idx = Self::new();
        for (label, rows) in m.class_rows() {
            idx.insert_class(&label, rows, m)?;
        }
        Ok(idx)
    }

    pub fn insert_class(&mut self, label: &str, rows: Vec<usize>, m: &EmbeddingMatrix) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::EmptyClass(label.to_string()));
        }
        if self.classes.contains_key(label) {
            return Err(Error::DuplicateClass(label.to_string()));
        }
        let entry = ClassEntry::build(rows, m)?;
        self.classes.insert(label.to_string(), entry);
        Ok(())
    }

    pub fn remove_class(&mut self, label: &str) -> Result<Vec<usize>> {
        self.classes
            .remove(label)
            .map(|e| e.rows)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }

    /// Rewrites row indices after the backing matrix dropped rows.
    pub(crate) fn remap(&mut self, mapping: &[Option<usize>]) {
        for entry in self.classes.values_mut() {
            for r in entry.rows.iter_mut() {
                *r = mapping[*r].expect("indexed row removed from matrix");
            }
        }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.classes.contains_key(label)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Labels in lexicographic order.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn members(&self, label: &str) -> Result<&[usize]> {
        self.entry(label).map(|e| e.rows.as_slice())
    }

    pub fn class_vector(&self, label: &str) -> Result<&[f64]> {
        self.entry(label).map(|e| e.class_vector.as_slice())
    }

    fn entry(&self, label: &str) -> Result<&ClassEntry> {
        self.classes
            .get(label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }
}

/// Up to `k` members of `class` sorted by descending cosine to `query`,
/// ties by ascending row. The row whose id equals `exclude` is skipped.
pub fn topk_in_class(
    query: &[f64],
    class: &str,
    k: usize,
    idx: &ClassIndex,
    m: &EmbeddingMatrix,
    exclude: Option<&str>,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let entry = idx.entry(class)?;
    if query.len() != m.dim() {
        return Err(Error::shape(
            "topk_in_class",
            format!("query has length {}, memory dim is {}", query.len(), m.dim()),
        ));
    }
    let qn = l2_norm(query);
    if qn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let skip = exclude.and_then(|id| m.row_of(id));
    let mut scored = Vec::with_capacity(entry.rows.len());
    for (&row, &norm) in entry.rows.iter().zip(&entry.norms) {
        if Some(row) == skip {
            continue;
        }
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        scored.push((cosine_with_norms(query, qn, m.vector(row), norm), row));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(_, r)| r).collect())
}

/// The `n` classes other than `own_class` whose class vectors are most
/// cosine-similar to `query`, ties by label.
pub fn rank_negative_classes(query: &[f64], own_class: &str, n: usize, idx: &ClassIndex) -> Result<Vec<String>> {
    let available = idx.labels().filter(|&l| l != own_class).count();
    if available < n {
        return Err(Error::InsufficientClasses { needed: n, available });
    }
    let mut scored = Vec::with_capacity(available);
    for (label, entry) in idx.classes.iter().filter(|(l, _)| l.as_str() != own_class) {
        scored.push((cosine(query, &entry.class_vector)?, label.as_str()));
    }
    scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(b.1),
        o => o,
    });
    Ok(scored.into_iter().take(n).map(|(_, l)| l.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ExampleRecord;
    use proptest::prelude::*;

    fn matrix(rows: &[(&str, &str, Vec<f64>)]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_records(
            rows[0].2.len(),
            rows.iter().map(|(id, l, v)| ExampleRecord::new(*id, *l, v.clone())),
        )
        .unwrap()
    }

    #[test]
    fn cosine_reference_values() {
        assert_eq!(cosine(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.70710678).abs() < 1e-8);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn topk_truncates_to_class_size() {
        let m = matrix(&[
            ("a0", "a", vec![1.0, 0.0]),
            ("a1", "a", vec![0.0, 1.0]),
            ("a2", "a", vec![1.0, 1.0]),
        ]);
        let idx = ClassIndex::build(&m).unwrap();
        assert_eq!(topk_in_class(&[1.0, 0.1], "a", 5, &idx, &m, None).unwrap().len(), 3);
    }

    #[test]
    fn self_query_ranks_first_unless_excluded() {
        let m = matrix(&[
            ("a0", "a", vec![1.0, 0.2]),
            ("a1", "a", vec![0.3, 1.0]),
            ("a2", "a", vec![0.9, 0.5]),
        ]);
        let idx = ClassIndex::build(&m).unwrap();
        let q = m.vector(1).to_vec();
        assert_eq!(topk_in_class(&q, "a", 2, &idx, &m, None).unwrap()[0], 1);
        let ex = topk_in_class(&q, "a", 3, &idx, &m, Some("a1")).unwrap();
        assert_eq!(ex, vec![2, 0]);
    }

    #[test]
    fn ties_resolve_by_row() {
        let m = matrix(&[
            ("a0", "a", vec![2.0, 0.0]),
            ("a1", "a", vec![1.0, 0.0]),
            ("a2", "a", vec![3.0, 0.0]),
        ]);
        let idx = ClassIndex::build(&m).unwrap();
        assert_eq!(
            topk_in_class(&[1.0, 0.0], "a", 3, &idx, &m, None).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn unknown_class_is_an_error() {
        let m = matrix(&[("a0", "a", vec![1.0])]);
        let idx = ClassIndex::build(&m).unwrap();
        assert!(matches!(
            topk_in_class(&[1.0], "b", 1, &idx, &m, None),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn class_vector_is_member_mean() {
        let m = matrix(&[
            ("a0", "a", vec![1.0, 0.0]),
            ("a1", "a", vec![0.0, 3.0]),
            ("b0", "b", vec![5.0, 5.0]),
        ]);
        let idx = ClassIndex::build(&m).unwrap();
        assert_eq!(idx.class_vector("a").unwrap(), &[0.5, 1.5]);
        assert_eq!(idx.class_vector("b").unwrap(), &[5.0, 5.0]);
    }

    #[test]
    fn negative_ranking_by_class_vector() {
        let m = matrix(&[
            ("p0", "c1", vec![1.0, 0.0]),
            ("q0", "c2", vec![0.0, 1.0]),
            ("o0", "own", vec![0.9, 0.1]),
        ]);
        let idx = ClassIndex::build(&m).unwrap();
        let r = rank_negative_classes(&[0.9, 0.1], "own", 2, &idx).unwrap();
        assert_eq!(r, vec!["c1", "c2"]);
        assert_eq!(rank_negative_classes(&[0.1, 0.9], "own", 1, &idx).unwrap(), vec!["c2"]);
        assert!(matches!(
            rank_negative_classes(&[0.9, 0.1], "own", 3, &idx),
            Err(Error::InsufficientClasses {
                needed: 3,
                available: 2
            })
        ));
    }

    fn random_index(vectors: Vec<Vec<f64>>, classes: usize) -> (EmbeddingMatrix, ClassIndex) {
        let dim = vectors[0].len();
        let m = EmbeddingMatrix::from_records(
            dim,
            vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| ExampleRecord::new(format!("e{i}"), format!("c{}", i % classes), v)),
        )
        .unwrap();
        let idx = ClassIndex::build(&m).unwrap();
        (m, idx)
    }

    fn vecs() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(
            proptest::collection::vec(-1.0f64..1.0, 4).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3)),
            6..30,
        )
    }

    proptest! {
        #[test]
        fn topk_scores_are_non_increasing(v in vecs(), q in proptest::collection::vec(0.1f64..1.0, 4), k in 1usize..8) {
            let (m, idx) = random_index(v, 3);
            for label in ["c0", "c1", "c2"] {
                let rows = topk_in_class(&q, label, k, &idx, &m, None).unwrap();
                let s: Vec<f64> = rows.iter().map(|&r| cosine(&q, m.vector(r)).unwrap()).collect();
                prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
            }
        }

        #[test]
        fn negative_ranking_is_prefix_stable(v in vecs(), q in proptest::collection::vec(0.1f64..1.0, 4), n in 1usize..4) {
            let (_, idx) = random_index(v, 5);
            let short = rank_negative_classes(&q, "c0", n, &idx).unwrap();
            let long = rank_negative_classes(&q, "c0", n + 1, &idx).unwrap();
            prop_assert!(!long.iter().any(|l| l == "c0"));
            prop_assert_eq!(&long[..n], &short[..]);
        }

        #[test]
        fn storage_order_changes_only_ties(v in vecs(), q in proptest::collection::vec(0.1f64..1.0, 4), k in 1usize..6, rot in 0usize..30) {
            let (m, idx) = random_index(v.clone(), 2);
            let mut shuffled: Vec<(usize, Vec<f64>)> = v.into_iter().enumerate().collect();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            let m2 = EmbeddingMatrix::from_records(
                4,
                shuffled.into_iter().map(|(i, v)| ExampleRecord::new(format!("e{i}"), format!("c{}", i % 2), v)),
            ).unwrap();
            let idx2 = ClassIndex::build(&m2).unwrap();
            for label in ["c0", "c1"] {
                let a: Vec<u64> = topk_in_class(&q, label, k, &idx, &m, None).unwrap().iter().map(|&r| cosine(&q, m.vector(r)).unwrap().to_bits()).collect();
                let b: Vec<u64> = topk_in_class(&q, label, k, &idx2, &m2, None).unwrap().iter().map(|&r| cosine(&q, m2.vector(r)).unwrap().to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
