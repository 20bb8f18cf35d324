//! The meta-classifier: a shared matching network scores a query against each
//! retrieved neighbor of a class, a bidirectional LSTM folds those scores
//! into one class probability, and the open-world decision rejects when no
//! class clears 0.5.
//!
//! Checkpoint format (UTF-8):
//!
//! ```text
//! #l2ac-model v1 k=<K> dim=<D> hidden=<H> sim=<abssub_sum|abssub|sum>
//! <name> <rows> <cols>
//! <rows lines of <cols> space-separated values>
//! ...
//! ```
//!
//! Tensors appear in the fixed order `W1 b1 W2 b2`, forward cell
//! (`fwd.w_i fwd.w_f fwd.w_g fwd.w_o fwd.b_i fwd.b_f fwd.b_g fwd.b_o`),
//! backward cell (same names under `bwd.`), then `W b`. Vectors are written
//! as a single row.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::embedding::{parse_values, write_values, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::numkernel::dense::{affine, dot, sigmoid};
use crate::numkernel::lstm::{bilstm_backward, bilstm_forward, register_lstm, LstmGrads, LstmParams};
use crate::numkernel::{weighted_bce_grad, weighted_bce_loss, GradBuf, ParamStore, Tensor};
use crate::ranker::{topk_in_class, ClassIndex};

pub const MODEL_MAGIC: &str = "#l2ac-model v1";

/// Probability at or below which every class is rejected.
pub const REJECT_THRESHOLD: f64 = 0.5;

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const FWD: usize = 4;
const BWD: usize = 12;
const W_OUT: usize = 20;
const B_OUT: usize = 21;

/// Which element-wise similarity functions feed the matching network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SimMode {
    /// `|x_t - x_a| ⊕ (x_t + x_a)`
    #[default]
    AbsSubSum,
    AbsSub,
    Sum,
}

impl SimMode {
    pub fn width(self, dim: usize) -> usize {
        match self {
            SimMode::AbsSubSum => 2 * dim,
            SimMode::AbsSub | SimMode::Sum => dim,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::AbsSubSum => "abssub_sum",
            SimMode::AbsSub => "abssub",
            SimMode::Sum => "sum",
        }
    }
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abssub_sum" => Ok(SimMode::AbsSubSum),
            "abssub" => Ok(SimMode::AbsSub),
            "sum" => Ok(SimMode::Sum),
            other => Err(Error::Config(format!("unknown similarity mode `{other}`"))),
        }
    }
}

/// Similarity-space features of a query/neighbor pair.
pub fn sim_features(x_t: &[f64], x_a: &[f64], mode: SimMode) -> Result<Vec<f64>> {
    if x_t.len() != x_a.len() {
        return Err(Error::shape(
            "sim_features",
            format!("x_t has length {}, x_a has length {}", x_t.len(), x_a.len()),
        ));
    }
    let mut out = vec![0.0; mode.width(x_t.len())];
    fill_features(x_t, x_a, mode, &mut out);
    Ok(out)
}

#[inline]
fn fill_features(x_t: &[f64], x_a: &[f64], mode: SimMode, out: &mut [f64]) {
    let dim = x_t.len();
    match mode {
        SimMode::AbsSubSum => {
            let (abs, sum) = out.split_at_mut(dim);
            for j in 0..dim {
                abs[j] = (x_t[j] - x_a[j]).abs();
                sum[j] = x_t[j] + x_a[j];
            }
        }
        SimMode::AbsSub => {
            for j in 0..dim {
                out[j] = (x_t[j] - x_a[j]).abs();
            }
        }
        SimMode::Sum => {
            for j in 0..dim {
                out[j] = x_t[j] + x_a[j];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Maximum neighbors retrieved per class.
    pub k: usize,
    pub dim: usize,
    /// Width of the matching network's hidden layer.
    pub hidden: usize,
    pub sim: SimMode,
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "k, dim and hidden must be positive (k={}, dim={}, hidden={})",
                self.k, self.dim, self.hidden
            )));
        }
        Ok(())
    }

    /// Tensor names and shapes in checkpoint order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let f = self.sim.width(self.dim);
        let mut out = vec![
            ("W1".to_string(), vec![self.hidden, f]),
            ("b1".to_string(), vec![self.hidden]),
            ("W2".to_string(), vec![1, self.hidden]),
            ("b2".to_string(), vec![1]),
        ];
        for dir in ["fwd", "bwd"] {
            for g in crate::numkernel::lstm::GATE_NAMES {
                out.push((format!("{dir}.w_{g}"), vec![1, 2]));
            }
            for g in crate::numkernel::lstm::GATE_NAMES {
                out.push((format!("{dir}.b_{g}"), vec![1]));
            }
        }
        out.push(("W".to_string(), vec![1, 2]));
        out.push(("b".to_string(), vec![1]));
        out
    }
}

/// Outcome of the open-world decision.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Class(String),
    Reject,
}

impl Outcome {
    pub fn label(&self) -> Option<&str> {
        match self {
            Outcome::Class(l) => Some(l),
            Outcome::Reject => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Class(l) => f.write_str(l),
            Outcome::Reject => f.write_str("REJECT"),
        }
    }
}

/// How per-class neighbor scores become a class probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecisionRule {
    /// Learned aggregation of up to `k` scores.
    #[default]
    Aggregate,
    /// Non-parametric vote: mean single-example probability over the top
    /// `m` neighbors. Meant for models trained with `k = 1`.
    MeanOfTop(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub outcome: Outcome,
    pub scores: BTreeMap<String, f64>,
}

/// Applies the rejection rule to a probability map: reject when the maximum
/// is `<= 0.5`, otherwise the argmax with ties going to the smaller label.
pub fn decide_from_scores(scores: &BTreeMap<String, f64>) -> Result<Outcome> {
    // BTreeMap iterates labels in order, so a strict `>` keeps the smallest tied label.
    let mut best: Option<(&str, f64)> = None;
    for (label, &p) in scores {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((label, p));
        }
    }
    let (label, p) = best.ok_or(Error::EmptySeenSet)?;
    Ok(if p <= REJECT_THRESHOLD {
        Outcome::Reject
    } else {
        Outcome::Class(label.to_string())
    })
}

struct NeighborCache {
    features: Vec<f64>,
    hidden: Vec<f64>,
    score: f64,
}

/// All trainable tensors of the matching network and aggregation layer,
/// together with the hyperparameters that fix their shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaClassifier {
    config: ModelConfig,
    params: ParamStore,
}

impl MetaClassifier {
    /// Fresh parameters drawn from a seeded generator: weights and biases
    /// uniform in `[-0.1, 0.1]`, LSTM forget-gate biases at 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.sim.width(config.dim);
        let mut p = ParamStore::new();
        p.insert("W1", Tensor::uniform(vec![config.hidden, f], 0.1, &mut rng))?;
        p.insert("b1", Tensor::uniform(vec![config.hidden], 0.1, &mut rng))?;
        p.insert("W2", Tensor::uniform(vec![1, config.hidden], 0.1, &mut rng))?;
        p.insert("b2", Tensor::uniform(vec![1], 0.1, &mut rng))?;
        register_lstm(&mut p, "fwd", 1, 1, &mut rng)?;
        register_lstm(&mut p, "bwd", 1, 1, &mut rng)?;
        p.insert("W", Tensor::uniform(vec![1, 2], 0.1, &mut rng))?;
        p.insert("b", Tensor::uniform(vec![1], 0.1, &mut rng))?;
        Ok(Self { config, params: p })
    }

    /// Wraps an existing store after checking it against `config`'s layout.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if params.len() != layout.len() {
            return Err(Error::shape(
                "MetaClassifier::from_params",
                format!("expected {} tensors, got {}", layout.len(), params.len()),
            ));
        }
        for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
            if name != pname || t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "MetaClassifier::from_params",
                    format!("expected `{name}` {shape:?}, got `{pname}` {:?}", t.shape()),
                ));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Sets every parameter to zero.
    pub fn zeroed(mut self) -> Self {
        for (_, t) in self.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    fn check_dim(&self, op: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.config.dim {
            return Err(Error::shape(
                op,
                format!("vector has length {}, model dim is {}", v.len(), self.config.dim),
            ));
        }
        Ok(())
    }

    fn neighbor_forward(&self, x_t: &[f64], x_a: &[f64]) -> NeighborCache {
        let p = &self.params;
        let mut features = vec![0.0; self.config.sim.width(self.config.dim)];
        fill_features(x_t, x_a, self.config.sim, &mut features);
        let mut hidden = vec![0.0; self.config.hidden];
        affine(p.at(W1).data(), p.at(B1).data(), &features, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let z = dot(p.at(W2).data(), &hidden) + p.at(B2).data()[0];
        NeighborCache {
            features,
            hidden,
            score: sigmoid(z),
        }
    }

    /// Matching score `σ(W2·relu(W1·f_sim(x_t, x_a) + b1) + b2)`.
    pub fn match_score(&self, x_t: &[f64], x_a: &[f64]) -> Result<f64> {
        self.check_dim("match_score", x_t)?;
        self.check_dim("match_score", x_a)?;
        Ok(self.neighbor_forward(x_t, x_a).score)
    }

    /// Probability that `x_t` belongs to the class whose nearest examples are
    /// `neighbors`, given in descending-similarity order.
    pub fn class_probability(&self, x_t: &[f64], neighbors: &[&[f64]]) -> Result<f64> {
        self.forward(x_t, neighbors).map(|(p, _, _)| p)
    }

    fn forward(
        &self,
        x_t: &[f64],
        neighbors: &[&[f64]],
    ) -> Result<(f64, Vec<NeighborCache>, (Vec<f64>, crate::numkernel::BiLstmCache))> {
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighbors);
        }
        self.check_dim("class_probability", x_t)?;
        for n in neighbors {
            self.check_dim("class_probability", n)?;
        }
        let caches: Vec<NeighborCache> = neighbors.iter().map(|a| self.neighbor_forward(x_t, a)).collect();
        let seq: Vec<Vec<f64>> = caches.iter().map(|c| vec![c.score]).collect();
        let fwd = LstmParams::at(&self.params, FWD, 1, 1)?;
        let bwd = LstmParams::at(&self.params, BWD, 1, 1)?;
        let (agg, lstm_cache) = bilstm_forward(&seq, &fwd, &bwd)?;
        let z = dot(self.params.at(W_OUT).data(), &agg) + self.params.at(B_OUT).data()[0];
        Ok((sigmoid(z), caches, (agg, lstm_cache)))
    }

    /// Mean of the probabilities the model assigns to each of the first
    /// `top` neighbors taken alone.
    pub fn vote_probability(&self, x_t: &[f64], neighbors: &[&[f64]], top: usize) -> Result<f64> {
        if neighbors.is_empty() || top == 0 {
            return Err(Error::EmptyNeighbors);
        }
        let used = &neighbors[..top.min(neighbors.len())];
        let mut sum = 0.0;
        for a in used {
            sum += self.class_probability(x_t, std::slice::from_ref(a))?;
        }
        Ok(sum / used.len() as f64)
    }

    /// Weighted BCE of one training pair.
    pub fn pair_loss(&self, x_t: &[f64], neighbors: &[&[f64]], label: f64, weight: f64) -> Result<f64> {
        let p = self.class_probability(x_t, neighbors)?;
        Ok(weighted_bce_loss(p, label, weight))
    }

    /// Weighted BCE of one pair; its gradient is added into `grad`.
    pub fn pair_loss_and_grad(
        &self,
        x_t: &[f64],
        neighbors: &[&[f64]],
        label: f64,
        weight: f64,
        grad: &mut GradBuf,
    ) -> Result<f64> {
        let (p, caches, (agg, lstm_cache)) = self.forward(x_t, neighbors)?;
        let loss = weighted_bce_loss(p, label, weight);
        let dz = weighted_bce_grad(p, label, weight) * p * (1.0 - p);

        let params = &self.params;
        let w_out = params.at(W_OUT).data();
        for (g, a) in grad.0[W_OUT].iter_mut().zip(&agg) {
            *g += dz * a;
        }
        grad.0[B_OUT][0] += dz;
        let dagg: Vec<f64> = w_out.iter().map(|w| w * dz).collect();

        let fwd = LstmParams::at(params, FWD, 1, 1)?;
        let bwd = LstmParams::at(params, BWD, 1, 1)?;
        let dseq = {
            let (mut gf, mut gb) = LstmGrads::pair(grad, FWD, BWD);
            bilstm_backward(&lstm_cache, &dagg, &fwd, &bwd, &mut gf, &mut gb)
        };

        let w2 = params.at(W2).data();
        let f = caches[0].features.len();
        let mut dh = vec![0.0; self.config.hidden];
        for (cache, dr) in caches.iter().zip(&dseq) {
            let dz2 = dr[0] * cache.score * (1.0 - cache.score);
            grad.0[B2][0] += dz2;
            for (g, h) in grad.0[W2].iter_mut().zip(&cache.hidden) {
                *g += dz2 * h;
            }
            for ((d, &h), &w) in dh.iter_mut().zip(&cache.hidden).zip(w2) {
                *d = if h > 0.0 { dz2 * w } else { 0.0 };
            }
            let (gw1, rest) = grad.0.split_at_mut(B1);
            let gw1 = &mut gw1[W1];
            let gb1 = &mut rest[0];
            for (r, &d) in dh.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb1[r] += d;
                let row = &mut gw1[r * f..(r + 1) * f];
                for (g, x) in row.iter_mut().zip(&cache.features) {
                    *g += d * x;
                }
            }
        }
        Ok(loss)
    }

    /// Per-class probabilities over every class in `idx`, then the
    /// rejection rule. Each class only sees its own top-`k` members.
    pub fn decide(
        &self,
        x_t: &[f64],
        idx: &ClassIndex,
        m: &EmbeddingMatrix,
        k: usize,
        rule: DecisionRule,
    ) -> Result<Decision> {
        if idx.is_empty() {
            return Err(Error::EmptySeenSet);
        }
        let mut scores = BTreeMap::new();
        for label in idx.labels() {
            scores.insert(label.to_string(), self.score_class(x_t, label, idx, m, k, rule)?);
        }
        let outcome = decide_from_scores(&scores)?;
        Ok(Decision { outcome, scores })
    }

    /// Probability for a single class.
    pub fn score_class(
        &self,
        x_t: &[f64],
        label: &str,
        idx: &ClassIndex,
        m: &EmbeddingMatrix,
        k: usize,
        rule: DecisionRule,
    ) -> Result<f64> {
        let retrieve = match rule {
            DecisionRule::Aggregate => k,
            DecisionRule::MeanOfTop(top) => top,
        };
        let rows = topk_in_class(x_t, label, retrieve, idx, m, None)?;
        let neighbors = m.lookup(&rows)?;
        match rule {
            DecisionRule::Aggregate => self.class_probability(x_t, &neighbors),
            DecisionRule::MeanOfTop(top) => self.vote_probability(x_t, &neighbors, top),
        }
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "{MODEL_MAGIC} k={} dim={} hidden={} sim={}\n",
            c.k, c.dim, c.hidden, c.sim
        );
        for (name, t) in self.params.iter() {
            let (rows, cols) = (t.rows(), t.cols());
            out.push_str(&format!("{name} {rows} {cols}\n"));
            for r in 0..rows {
                write_values(&mut out, &t.data()[r * cols..(r + 1) * cols]);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let config = parse_model_header(header).map_err(|e| perr(1, e))?;
        config.validate().map_err(|e| perr(1, e.to_string()))?;

        let mut params = ParamStore::new();
        for (name, shape) in config.layout() {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| perr(0, format!("missing tensor `{name}`")))?;
            let parts: Vec<&str> = line.split_ascii_whitespace().collect();
            let expected_rows = if shape.len() == 1 { 1 } else { shape[0] };
            let expected_cols = if shape.len() == 1 { shape[0] } else { shape[1] };
            let ok = parts.len() == 3
                && parts[0] == name
                && parts[1].parse() == Ok(expected_rows)
                && parts[2].parse() == Ok(expected_cols);
            if !ok {
                return Err(perr(
                    lineno,
                    format!("expected `{name} {expected_rows} {expected_cols}`, got `{line}`"),
                ));
            }
            let mut data = Vec::with_capacity(expected_rows * expected_cols);
            for _ in 0..expected_rows {
                let (lineno, line) = lines
                    .next()
                    .ok_or_else(|| perr(0, format!("tensor `{name}` is truncated")))?;
                let row = parse_values(line).map_err(|e| perr(lineno, e))?;
                if row.len() != expected_cols {
                    return Err(perr(
                        lineno,
                        format!("expected {expected_cols} values, found {}", row.len()),
                    ));
                }
                data.extend(row);
            }
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        if let Some((lineno, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(perr(lineno, "unexpected trailing content".into()));
        }
        Self::from_params(config, params)
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

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn checkpoint_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Finite-difference check of the full pipeline (matching network,
/// aggregation, weighted BCE) on a random tiny problem.
///
/// Parameters are redrawn uniformly from `[-1, 1]` so that every path carries
/// gradient well above finite-difference noise. The loss sums a few positive
/// (weight 3) and negative (weight 1) pairs with `1..=k` neighbors each.
/// Returns the maximum relative error at step `h`.
pub fn grad_check_pipeline(dim: usize, k: usize, hidden: usize, seed: u64, h: f64) -> Result<f64> {
    use rand::Rng;

    let config = ModelConfig {
        k,
        dim,
        hidden,
        sim: SimMode::AbsSubSum,
    };
    let mut model = MetaClassifier::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for (_, t) in model.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let vector = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mut pairs = Vec::new();
    for i in 0..4 {
        let query = vector(&mut rng);
        let count = 1 + (i + k - 1) % k;
        let neighbors: Vec<Vec<f64>> = (0..count).map(|_| vector(&mut rng)).collect();
        let (label, weight) = if i % 2 == 0 { (1.0, 3.0) } else { (0.0, 1.0) };
        pairs.push((query, neighbors, label, weight));
    }
    crate::numkernel::grad_check(model.params_mut(), h, |store| {
        let m = MetaClassifier::from_params(config, store.snapshot())?;
        let mut buf = GradBuf::zeros_like(store);
        let mut total = 0.0;
        for (x, ns, y, w) in &pairs {
            let ns: Vec<&[f64]> = ns.iter().map(Vec::as_slice).collect();
            total += m.pair_loss_and_grad(x, &ns, *y, *w, &mut buf)?;
        }
        store.accumulate(&buf, 1.0)?;
        Ok(total)
    })
}

fn parse_model_header(line: &str) -> std::result::Result<ModelConfig, String> {
    let rest = line
        .strip_prefix(MODEL_MAGIC)
        .ok_or_else(|| format!("expected `{MODEL_MAGIC} ...` header"))?;
    let mut k = None;
    let mut dim = None;
    let mut hidden = None;
    let mut sim = None;
    for kv in rest.split_ascii_whitespace() {
        let (key, value) = kv.split_once('=').ok_or_else(|| format!("malformed field `{kv}`"))?;
        let num = || value.parse::<usize>().map_err(|_| format!("invalid {key} `{value}`"));
        match key {
            "k" => k = Some(num()?),
            "dim" => dim = Some(num()?),
            "hidden" => hidden = Some(num()?),
            "sim" => sim = Some(value.parse::<SimMode>().map_err(|e| e.to_string())?),
            _ => return Err(format!("unknown header field `{key}`")),
        }
    }
    Ok(ModelConfig {
        k: k.ok_or("missing k")?,
        dim: dim.ok_or("missing dim")?,
        hidden: hidden.ok_or("missing hidden")?,
        sim: sim.ok_or("missing sim")?,
    })
}
