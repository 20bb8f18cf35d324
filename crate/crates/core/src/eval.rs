//! Open-world evaluation: weighted and macro F1 with a rejection class,
//! a Gaussian-cluster data generator and the incremental seen-set
//! experiment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::embedding::{EmbeddingMatrix, ExampleRecord};
use crate::error::{Error, Result};
use crate::meta_classifier::{DecisionRule, MetaClassifier, Outcome};
use crate::ranker::l2_norm;
use crate::registry::{Prediction, SeenClassSet, REJECT_LABEL};
use crate::trainer::{train_partition, ClassPartition, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class_f1: BTreeMap<String, f64>,
    pub precision: BTreeMap<String, f64>,
    pub recall: BTreeMap<String, f64>,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub support: BTreeMap<String, usize>,
    pub confusion: BTreeMap<(String, String), usize>,
}

/// Scores predictions over the classes in `seen` plus the rejection class.
///
/// Gold labels of classes outside `seen` must already be mapped to
/// [`REJECT_LABEL`].
pub fn weighted_f1<G: AsRef<str>, P: AsRef<str>>(gold: &[G], pred: &[P], seen: &[String]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::shape(
            "weighted_f1",
            format!("{} gold labels but {} predictions", gold.len(), pred.len()),
        ));
    }
    if gold.is_empty() {
        return Err(Error::shape("weighted_f1", "no examples"));
    }
    let mut classes: BTreeSet<&str> = seen.iter().map(String::as_str).collect();
    classes.insert(REJECT_LABEL);
    let mut confusion = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        for l in [g, p] {
            if !classes.contains(l) {
                return Err(Error::UnknownClass(l.to_string()));
            }
        }
        *confusion.entry((g.to_string(), p.to_string())).or_insert(0) += 1;
    }
    Ok(EvalReport::from_confusion(confusion, seen))
}

impl EvalReport {
    /// Recomputes every metric from confusion counts.
    pub fn from_confusion(confusion: BTreeMap<(String, String), usize>, seen: &[String]) -> Self {
        let mut classes: BTreeSet<String> = seen.iter().cloned().collect();
        classes.insert(REJECT_LABEL.to_string());
        let mut gold_count: BTreeMap<&str, usize> = BTreeMap::new();
        let mut pred_count: BTreeMap<&str, usize> = BTreeMap::new();
        for ((g, p), &c) in &confusion {
            *gold_count.entry(g).or_default() += c;
            *pred_count.entry(p).or_default() += c;
        }
        let mut report = EvalReport {
            per_class_f1: BTreeMap::new(),
            precision: BTreeMap::new(),
            recall: BTreeMap::new(),
            weighted_f1: 0.0,
            macro_f1: 0.0,
            support: BTreeMap::new(),
            confusion: BTreeMap::new(),
        };
        let mut total = 0usize;
        let mut weighted = 0.0;
        let mut sum = 0.0;
        for c in &classes {
            let tp = confusion.get(&(c.clone(), c.clone())).copied().unwrap_or(0);
            let n_gold = gold_count.get(c.as_str()).copied().unwrap_or(0);
            let n_pred = pred_count.get(c.as_str()).copied().unwrap_or(0);
            let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
            let f1 = ratio(2 * tp, n_gold + n_pred);
            report.precision.insert(c.clone(), ratio(tp, n_pred));
            report.recall.insert(c.clone(), ratio(tp, n_gold));
            report.per_class_f1.insert(c.clone(), f1);
            report.support.insert(c.clone(), n_gold);
            total += n_gold;
            weighted += n_gold as f64 * f1;
            sum += f1;
        }
        report.weighted_f1 = if total == 0 { 0.0 } else { weighted / total as f64 };
        report.macro_f1 = sum / classes.len() as f64;
        report.confusion = confusion;
        report
    }

    pub fn total(&self) -> usize {
        self.support.values().sum()
    }

    pub fn write_document(&self, out: &mut String, indent: &str) {
        let _ = writeln!(out, "{indent}weighted_f1 = {}", self.weighted_f1);
        let _ = writeln!(out, "{indent}macro_f1 = {}", self.macro_f1);
        let _ = writeln!(out, "{indent}examples = {}", self.total());
        for (c, f1) in &self.per_class_f1 {
            let _ = writeln!(out, "{indent}class {c} {{");
            let _ = writeln!(out, "{indent}  support = {}", self.support[c]);
            let _ = writeln!(out, "{indent}  precision = {}", self.precision[c]);
            let _ = writeln!(out, "{indent}  recall = {}", self.recall[c]);
            let _ = writeln!(out, "{indent}  f1 = {f1}");
            let _ = writeln!(out, "{indent}}}");
        }
    }

    pub fn write_summary(&self, out: &mut String, prefix: &str) {
        let _ = writeln!(out, "{prefix}weighted_f1\t{}", self.weighted_f1);
        let _ = writeln!(out, "{prefix}macro_f1\t{}", self.macro_f1);
        let _ = writeln!(out, "{prefix}examples\t{}", self.total());
        for (c, f1) in &self.per_class_f1 {
            let _ = writeln!(out, "{prefix}f1.{c}\t{f1}");
            let _ = writeln!(out, "{prefix}precision.{c}\t{}", self.precision[c]);
            let _ = writeln!(out, "{prefix}recall.{c}\t{}", self.recall[c]);
            let _ = writeln!(out, "{prefix}support.{c}\t{}", self.support[c]);
        }
    }

    pub fn write_confusion(&self, out: &mut String) {
        for ((g, p), c) in &self.confusion {
            let _ = writeln!(out, "{g}\t{p}\t{c}");
        }
    }
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::Config("classes, per-class and dim must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Label of class `i`, zero-padded so labels sort in class order.
    pub fn class_label(&self, i: usize) -> String {
        let width = self.num_classes.saturating_sub(1).to_string().len().max(3);
        format!("c{i:0width$}")
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.num_classes).map(|i| self.class_label(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub matrix: EmbeddingMatrix,
    /// Unit-norm class means in class order.
    pub means: Vec<(String, Vec<f64>)>,
}

pub fn gen_synthetic_with_means(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut means = Vec::with_capacity(spec.num_classes);
    for i in 0..spec.num_classes {
        let mean = loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = l2_norm(&v);
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
            }
        };
        means.push((spec.class_label(i), mean));
    }
    let mut matrix = EmbeddingMatrix::new(spec.dim);
    for (label, mean) in &means {
        for j in 0..spec.per_class {
            let v = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.sigma * z
                })
                .collect();
            matrix.push(ExampleRecord::new(format!("{label}-{j}"), label.clone(), v))?;
        }
    }
    Ok(SyntheticData { matrix, means })
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingMatrix> {
    gen_synthetic_with_means(spec).map(|d| d.matrix)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub meta_classes: Vec<String>,
    pub val_classes: Vec<String>,
    /// Test classes in registration order: seen size `s` uses the first `s`.
    pub test_classes: Vec<String>,
    pub seen_sizes: Vec<usize>,
    /// Leading examples of each test class stored in the registry; the rest
    /// are held out for evaluation.
    pub stored_per_class: usize,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let mut all = HashSet::new();
        for c in self
            .meta_classes
            .iter()
            .chain(&self.val_classes)
            .chain(&self.test_classes)
        {
            if !all.insert(c.as_str()) {
                return Err(Error::Config(format!("class `{c}` appears in more than one class set")));
            }
        }
        if self.test_classes.is_empty() || self.seen_sizes.is_empty() {
            return Err(Error::Config(
                "plan needs test classes and at least one seen size".into(),
            ));
        }
        if self.stored_per_class == 0 {
            return Err(Error::Config("stored_per_class must be at least 1".into()));
        }
        for &s in &self.seen_sizes {
            if s == 0 {
                return Err(Error::EmptySeenSet);
            }
            if s > self.test_classes.len() {
                return Err(Error::Config(format!(
                    "seen size {s} exceeds {} test classes",
                    self.test_classes.len()
                )));
            }
        }
        Ok(())
    }

    /// Meta/validation/test split of `spec`'s classes in label order.
    pub fn synthetic(
        spec: &SyntheticSpec,
        meta: usize,
        val: usize,
        seen_sizes: Vec<usize>,
        stored_per_class: usize,
    ) -> Result<Self> {
        let labels = spec.labels();
        if meta + val >= labels.len() {
            return Err(Error::Config(format!(
                "{meta} meta and {val} validation classes leave no test classes out of {}",
                labels.len()
            )));
        }
        Ok(Self {
            meta_classes: labels[..meta].to_vec(),
            val_classes: labels[meta..meta + val].to_vec(),
            test_classes: labels[meta + val..].to_vec(),
            seen_sizes,
            stored_per_class,
        })
    }
}

/// Splits each test class into its first `stored` rows and the held-out rest.
pub fn split_test_data(
    data: &EmbeddingMatrix,
    test_classes: &[String],
    stored: usize,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let grouped: BTreeMap<String, Vec<usize>> = data.class_rows().into_iter().collect();
    let mut kept = EmbeddingMatrix::new(data.dim());
    let mut heldout = EmbeddingMatrix::new(data.dim());
    for c in test_classes {
        let rows = grouped.get(c).ok_or_else(|| Error::UnknownClass(c.clone()))?;
        if rows.len() <= stored {
            return Err(Error::ClassTooSmall(c.clone()));
        }
        for (i, &r) in rows.iter().enumerate() {
            let target = if i < stored { &mut kept } else { &mut heldout };
            target.push(data.records()[r].clone())?;
        }
    }
    Ok((kept, heldout))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeenSizeResult {
    pub seen: Vec<String>,
    pub report: EvalReport,
    /// One per held-out row, in row order.
    pub predictions: Vec<Prediction>,
}

impl SeenSizeResult {
    pub fn seen_size(&self) -> usize {
        self.seen.len()
    }
}

/// Classifies every row of `heldout` against `seen`; gold labels outside the
/// seen set count as the rejection class.
pub fn evaluate_seen_set(
    model: &MetaClassifier,
    seen: &SeenClassSet,
    heldout: &EmbeddingMatrix,
    rule: DecisionRule,
) -> Result<SeenSizeResult> {
    let k = model.config().k;
    let predictions: Vec<Prediction> = heldout
        .records()
        .par_iter()
        .map(|r| seen.classify_with(&r.vector, model, k, rule))
        .collect::<Result<_>>()?;
    let gold: Vec<&str> = heldout
        .records()
        .iter()
        .map(|r| {
            if seen.contains(&r.class_label) {
                r.class_label.as_str()
            } else {
                REJECT_LABEL
            }
        })
        .collect();
    let pred: Vec<&str> = predictions
        .iter()
        .map(|p| match &p.outcome {
            Outcome::Class(c) => c.as_str(),
            Outcome::Reject => REJECT_LABEL,
        })
        .collect();
    let labels = seen.labels().to_vec();
    let report = weighted_f1(&gold, &pred, &labels)?;
    Ok(SeenSizeResult {
        seen: labels,
        report,
        predictions,
    })
}

/// Evaluates each seen size as a prefix of `registry`'s insertion order.
pub fn evaluate_prefixes(
    model: &MetaClassifier,
    registry: &SeenClassSet,
    heldout: &EmbeddingMatrix,
    seen_sizes: &[usize],
    rule: DecisionRule,
) -> Result<ExperimentReport> {
    let mut runs = Vec::with_capacity(seen_sizes.len());
    for &s in seen_sizes {
        if s == 0 {
            return Err(Error::EmptySeenSet);
        }
        if s > registry.len() {
            return Err(Error::Config(format!(
                "seen size {s} exceeds {} registered classes",
                registry.len()
            )));
        }
        let seen = SeenClassSet::from_matrix(registry.memory(), &registry.labels()[..s])?;
        runs.push(evaluate_seen_set(model, &seen, heldout, rule)?);
    }
    Ok(ExperimentReport {
        checkpoint_hash: model.checkpoint_hash(),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub checkpoint_hash: String,
    pub runs: Vec<SeenSizeResult>,
}

impl ExperimentReport {
    pub fn to_document(&self) -> String {
        let mut out = String::from("#l2ac-report v1\n");
        let _ = writeln!(out, "checkpoint = {}", self.checkpoint_hash);
        for run in &self.runs {
            let _ = writeln!(out, "seen_size {} {{", run.seen_size());
            let _ = writeln!(out, "  seen = {}", run.seen.join(","));
            run.report.write_document(&mut out, "  ");
            let _ = writeln!(out, "}}");
        }
        out
    }

    pub fn to_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "checkpoint\t{}", self.checkpoint_hash);
        for run in &self.runs {
            run.report.write_summary(&mut out, &format!("s{}.", run.seen_size()));
        }
        out
    }

    pub fn to_confusion(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            let _ = writeln!(out, "# seen_size {}", run.seen_size());
            run.report.write_confusion(&mut out);
        }
        out
    }

    /// Paths of the summary and confusion files written next to `path`.
    pub fn companion_paths(path: &Path) -> (PathBuf, PathBuf) {
        let with = |suffix: &str| {
            let mut s = path.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        (with(".summary.tsv"), with(".confusion.tsv"))
    }

    /// Writes the document to `path` plus its summary and confusion files.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (summary, confusion) = Self::companion_paths(path);
        for (p, text) in [
            (path.to_path_buf(), self.to_document()),
            (summary, self.to_summary()),
            (confusion, self.to_confusion()),
        ] {
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub training: TrainOutcome,
    pub stored: EmbeddingMatrix,
    pub heldout: EmbeddingMatrix,
    pub report: ExperimentReport,
}

impl ExperimentResult {
    pub fn model(&self) -> &MetaClassifier {
        &self.training.model
    }
}

/// Trains once on the meta classes, then evaluates every seen size with
/// the same parameters.
pub fn run_openworld_experiment(
    plan: &ExperimentPlan,
    data: &EmbeddingMatrix,
    cfg: &TrainConfig,
) -> Result<ExperimentResult> {
    run_openworld_experiment_with(plan, data, cfg, DecisionRule::Aggregate)
}

pub fn run_openworld_experiment_with(
    plan: &ExperimentPlan,
    data: &EmbeddingMatrix,
    cfg: &TrainConfig,
    rule: DecisionRule,
) -> Result<ExperimentResult> {
    plan.validate()?;
    let partition = ClassPartition::new(plan.meta_classes.clone(), plan.val_classes.clone())?;
    let mut train_classes = plan.meta_classes.clone();
    train_classes.extend(plan.val_classes.iter().cloned());
    let train_data = data.filter_classes(&train_classes);
    let training = train_partition(&train_data, &partition, cfg)?;
    let (stored, heldout) = split_test_data(data, &plan.test_classes, plan.stored_per_class)?;
    let registry = SeenClassSet::from_matrix(&stored, &plan.test_classes)?;
    let report = evaluate_prefixes(&training.model, &registry, &heldout, &plan.seen_sizes, rule)?;
    Ok(ExperimentResult {
        training,
        stored,
        heldout,
        report,
    })
}
