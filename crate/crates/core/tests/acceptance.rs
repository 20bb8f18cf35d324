//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use l2ac::embedding::{EmbeddingMatrix, ExampleRecord};
use l2ac::eval::{
    evaluate_prefixes, gen_synthetic_with_means, mean_std, run_openworld_experiment, weighted_f1, ExperimentPlan,
    ExperimentResult, SyntheticData, SyntheticSpec,
};
use l2ac::meta_classifier::{grad_check_pipeline, DecisionRule, Outcome, SimMode};
use l2ac::ranker::{topk_in_class, ClassIndex};
use l2ac::registry::{SeenClassSet, REJECT_LABEL};
use l2ac::trainer::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SIGMA: f64 = 0.3;
const DIM: usize = 16;
const META: usize = 30;
const VAL: usize = 6;
const TEST: usize = 12;
const PER_CLASS: usize = 40;
const STORED: usize = 25;
const SEEN: usize = 6;
const EXTENDED: usize = 9;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    println!("acceptance {} [{status}] {}: {}", v.id, v.name, v.detail);
}

fn synth_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: META + VAL + TEST,
        per_class: PER_CLASS,
        dim: DIM,
        sigma: SIGMA,
        seed,
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        k: 5,
        n: 9,
        batch_size: 64,
        hidden: 128,
        lr: 1e-3,
        max_epochs: 100,
        patience: 10,
        seed,
        sim: SimMode::AbsSubSum,
        ..TrainConfig::default()
    }
}

struct SeedRun {
    seed: u64,
    data: SyntheticData,
    plan: ExperimentPlan,
    result: ExperimentResult,
}

fn run_seed(seed: u64, cfg: &TrainConfig) -> SeedRun {
    let spec = synth_spec(seed);
    let data = gen_synthetic_with_means(&spec).expect("synthetic data");
    let plan = ExperimentPlan::synthetic(&spec, META, VAL, vec![SEEN], STORED).expect("plan");
    let result = run_openworld_experiment(&plan, &data.matrix, cfg).expect("experiment");
    SeedRun {
        seed,
        data,
        plan,
        result,
    }
}

fn wf1(r: &ExperimentResult) -> f64 {
    r.report.runs[0].report.weighted_f1
}

fn gradient_check() -> Verdict {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        worst = worst.max(grad_check_pipeline(8, 3, 16, seed, 1e-4).expect("grad check"));
    }
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        name: "gradient check dim=8 k=3 hidden=16, 5 seeds",
        pass: worst < 1e-4 && secs < 10.0,
        detail: format!("max rel err {worst:.3e} (< 1e-4), {secs:.2} s (< 10 s)"),
    }
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn retrieval_oracle() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for inst in 0..100 {
        let dim = rng.random_range(2..8);
        let members = rng.random_range(1..=50);
        let k = [1, 3, 5][inst % 3];
        let mut recs = Vec::new();
        let vec_for = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let mut target_vectors: Vec<Vec<f64>> = Vec::new();
        for i in 0..members {
            // Occasional exact duplicates exercise tie ordering.
            let v = if i > 0 && rng.random_bool(0.2) {
                target_vectors[rng.random_range(0..i)].clone()
            } else {
                vec_for(&mut rng)
            };
            target_vectors.push(v);
        }
        let others = rng.random_range(0..20);
        let mut t_iter = target_vectors.into_iter().enumerate();
        let mut o = 0;
        // Interleave target and distractor rows so target rows are not contiguous.
        loop {
            if rng.random_bool(0.5) && o < others {
                recs.push(ExampleRecord::new(format!("o{o}"), "other", vec_for(&mut rng)));
                o += 1;
            } else if let Some((i, v)) = t_iter.next() {
                recs.push(ExampleRecord::new(format!("t{i}"), "target", v));
            } else if o < others {
                continue;
            } else {
                break;
            }
        }
        let m = EmbeddingMatrix::from_records(dim, recs).expect("matrix");
        let idx = ClassIndex::build(&m).expect("index");
        let query = vec_for(&mut rng);
        let got = topk_in_class(&query, "target", k, &idx, &m, None).expect("topk");

        let mut scanned: Vec<(usize, f64)> = (0..m.len())
            .filter(|&r| m.records()[r].class_label == "target")
            .map(|r| (r, oracle_cos(&query, m.vector(r))))
            .collect();
        scanned.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let want: Vec<usize> = scanned.into_iter().take(k).map(|(r, _)| r).collect();
        if got != want {
            mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        id: 2,
        name: "top-k retrieval vs brute-force oracle, 100 instances",
        pass: mismatches == 0 && secs < 5.0,
        detail: format!("{mismatches} mismatches (0 required), {secs:.3} s (< 5 s)"),
    }
}

fn metric_oracle() -> Verdict {
    let seen = vec!["A".to_string(), "B".to_string()];
    let hand = weighted_f1(&["A", "A", "B", REJECT_LABEL], &["A", "B", "B", REJECT_LABEL], &seen).expect("metrics");
    let macro_expected = (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0;
    let hand_ok = hand.weighted_f1 == 0.75 && (hand.macro_f1 - macro_expected).abs() < 1e-15;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_seen = rng.random_range(1..8);
        let seen: Vec<String> = (0..n_seen).map(|i| format!("s{i}")).collect();
        let mut classes = seen.clone();
        classes.push(REJECT_LABEL.to_string());
        let len = rng.random_range(1..200);
        let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..classes.len())).collect();
        let pred: Vec<usize> = gold
            .iter()
            .map(|&g| {
                if rng.random_bool(0.6) {
                    g
                } else {
                    rng.random_range(0..classes.len())
                }
            })
            .collect();
        // Confusion-matrix oracle.
        let c = classes.len();
        let mut cm = vec![vec![0usize; c]; c];
        for (&g, &p) in gold.iter().zip(&pred) {
            cm[g][p] += 1;
        }
        let mut w = 0.0;
        let mut mac = 0.0;
        for i in 0..c {
            let tp = cm[i][i] as f64;
            let row: usize = cm[i].iter().sum();
            let col: usize = (0..c).map(|j| cm[j][i]).sum();
            let prec = if col > 0 { tp / col as f64 } else { 0.0 };
            let rec = if row > 0 { tp / row as f64 } else { 0.0 };
            let f1 = if prec + rec > 0.0 {
                2.0 * prec * rec / (prec + rec)
            } else {
                0.0
            };
            w += row as f64 / len as f64 * f1;
            mac += f1 / c as f64;
        }
        let g: Vec<&str> = gold.iter().map(|&i| classes[i].as_str()).collect();
        let p: Vec<&str> = pred.iter().map(|&i| classes[i].as_str()).collect();
        let r = weighted_f1(&g, &p, &seen).expect("metrics");
        worst = worst.max((r.weighted_f1 - w).abs()).max((r.macro_f1 - mac).abs());
    }
    Verdict {
        id: 3,
        name: "weighted/macro F1 vs hand example and confusion-matrix oracle",
        pass: hand_ok && worst <= 1e-12,
        detail: format!(
            "hand weighted {} macro {:.6} ({}), max oracle diff {worst:.2e} (<= 1e-12)",
            hand.weighted_f1,
            hand.macro_f1,
            if hand_ok { "exact" } else { "mismatch" }
        ),
    }
}

fn synthetic_run(runs: &[SeedRun], secs: f64) -> Verdict {
    let scores: Vec<f64> = runs.iter().map(|r| wf1(&r.result)).collect();
    let macros: Vec<f64> = runs.iter().map(|r| r.result.report.runs[0].report.macro_f1).collect();
    let (mean, sd) = mean_std(&scores);
    let (mmean, msd) = mean_std(&macros);
    let per_seed: Vec<String> = runs
        .iter()
        .zip(&scores)
        .map(|(r, s)| format!("s{}={s:.4}", r.seed))
        .collect();
    Verdict {
        id: 4,
        name: "synthetic open-world run, |S|=6 of 12 test classes",
        pass: mean >= 0.85 && secs < 300.0,
        detail: format!(
            "weighted F1 {mean:.4} ± {sd:.4} (>= 0.85) [{}], macro F1 {mmean:.4} ± {msd:.4}, {secs:.1} s (< 300 s)",
            per_seed.join(" ")
        ),
    }
}

fn far_probe(rng: &mut ChaCha8Rng, means: &[(String, Vec<f64>)]) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..DIM).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let radius = 10.0 * SIGMA + 1.0 + rng.random_range(0.0..1.0);
        let p: Vec<f64> = dir.iter().map(|x| x / norm * radius).collect();
        let far = means
            .iter()
            .all(|(_, m)| m.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= 10.0 * SIGMA);
        if far {
            return p;
        }
    }
}

fn seen_registry(run: &SeedRun, size: usize) -> SeenClassSet {
    SeenClassSet::from_matrix(&run.result.stored, &run.plan.test_classes[..size]).expect("registry")
}

fn rejection_property(runs: &[SeedRun]) -> Verdict {
    let mut rejected = 0;
    let mut total = 0;
    let mut per_seed = Vec::new();
    for run in runs {
        let registry = seen_registry(run, SEEN);
        let model = run.result.model();
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0xfa7);
        let mut r = 0;
        for _ in 0..200 {
            let p = far_probe(&mut rng, &run.data.means);
            let pred = registry.classify(&p, model, model.config().k).expect("classify");
            if pred.outcome == Outcome::Reject {
                r += 1;
            }
        }
        per_seed.push(format!("s{}={:.3}", run.seed, r as f64 / 200.0));
        rejected += r;
        total += 200;
    }
    let rate = rejected as f64 / total as f64;
    Verdict {
        id: 5,
        name: "far probes (>= 10 sigma from every mean) rejected",
        pass: rate >= 0.95,
        detail: format!(
            "rejection rate {rate:.4} (>= 0.95) over {total} probes [{}]",
            per_seed.join(" ")
        ),
    }
}

fn incremental_expansion(runs: &[SeedRun]) -> Verdict {
    let mut recalls = Vec::new();
    let mut same_hash = true;
    let mut identical = true;
    for run in runs {
        let model = run.result.model();
        let base = &run.result.report;
        let full = seen_registry(run, TEST);
        let extended =
            evaluate_prefixes(model, &full, &run.result.heldout, &[EXTENDED], DecisionRule::Aggregate).expect("extend");
        same_hash &= extended.checkpoint_hash == base.checkpoint_hash;
        let new_classes = &run.plan.test_classes[SEEN..EXTENDED];
        let ext = &extended.runs[0];
        let (mut hit, mut n) = (0, 0);
        for (rec, pred) in run.result.heldout.records().iter().zip(&ext.predictions) {
            if new_classes.contains(&rec.class_label) {
                n += 1;
                if pred.outcome == Outcome::Class(rec.class_label.clone()) {
                    hit += 1;
                }
            }
        }
        recalls.push(hit as f64 / n as f64);
        for (before, after) in base.runs[0].predictions.iter().zip(&ext.predictions) {
            for (label, p) in &before.scores {
                identical &= after.scores.get(label).map(|q| q.to_bits()) == Some(p.to_bits());
            }
        }
    }
    let (mean, _) = mean_std(&recalls);
    let per_seed: Vec<String> = runs
        .iter()
        .zip(&recalls)
        .map(|(r, x)| format!("s{}={x:.3}", r.seed))
        .collect();
    Verdict {
        id: 6,
        name: "retrain-free expansion 6 -> 9 seen classes",
        pass: same_hash && identical && mean >= 0.8,
        detail: format!(
            "new-class recall {mean:.4} (>= 0.8) [{}], checkpoint hash {}, old-class probabilities {}",
            per_seed.join(" "),
            if same_hash { "identical" } else { "CHANGED" },
            if identical { "bit-identical" } else { "DIFFER" }
        ),
    }
}

fn score_independence(run: &SeedRun) -> Verdict {
    let model = run.result.model();
    let k = model.config().k;
    let mut registry = seen_registry(run, SEEN);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let candidates = &run.plan.test_classes[SEEN..];
    let grouped: BTreeMap<String, Vec<usize>> = run.result.stored.class_rows().into_iter().collect();
    let mut violations = 0;
    for i in 0..50 {
        let x: Vec<f64> = if i % 2 == 0 {
            let rows = run.result.heldout.len();
            run.result.heldout.vector(rng.random_range(0..rows)).to_vec()
        } else {
            (0..DIM).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let before = registry.classify(&x, model, k).expect("classify");
        let label = &candidates[rng.random_range(0..candidates.len())];
        let examples = grouped[label]
            .iter()
            .map(|&r| run.result.stored.records()[r].clone())
            .collect();
        registry.add_class(label, examples).expect("add");
        let during = registry.classify(&x, model, k).expect("classify");
        for (l, p) in &before.scores {
            if during.scores[l].to_bits() != p.to_bits() {
                violations += 1;
            }
        }
        registry.remove_class(label).expect("remove");
        let after = registry.classify(&x, model, k).expect("classify");
        if after != before {
            violations += 1;
        }
    }
    Verdict {
        id: 7,
        name: "score independence under add/remove, 50 inputs",
        pass: violations == 0,
        detail: format!("{violations} violations (0 required)"),
    }
}

fn ablation(runs: &[SeedRun]) -> Verdict {
    let variants: [(&str, TrainConfig); 3] = [
        (
            "k1-NoVote",
            TrainConfig {
                k: 1,
                ..train_config(0)
            },
        ),
        (
            "AbsSub",
            TrainConfig {
                sim: SimMode::AbsSub,
                ..train_config(0)
            },
        ),
        (
            "Sum",
            TrainConfig {
                sim: SimMode::Sum,
                ..train_config(0)
            },
        ),
    ];
    let mut table: Vec<[f64; 5]> = Vec::new();
    let mut wins = [0usize; 3];
    for run in runs {
        let full = wf1(&run.result);
        let mut row = [full, 0.0, 0.0, 0.0, 0.0];
        for (v, (_, base)) in variants.iter().enumerate() {
            let cfg = TrainConfig {
                seed: run.seed,
                ..*base
            };
            let r = run_openworld_experiment(&run.plan, &run.data.matrix, &cfg).expect("ablation run");
            row[v + 1] = wf1(&r);
            if v == 0 {
                let full_registry = seen_registry(run, TEST);
                let vote = evaluate_prefixes(
                    r.model(),
                    &full_registry,
                    &r.heldout,
                    &[SEEN],
                    DecisionRule::MeanOfTop(3),
                )
                .expect("vote3");
                row[4] = vote.runs[0].report.weighted_f1;
            }
            if full >= row[v + 1] {
                wins[v] += 1;
            }
        }
        println!(
            "  ablation seed {}: full {:.4}  k1-NoVote {:.4}  AbsSub {:.4}  Sum {:.4}  k1-Vote3 {:.4}",
            run.seed, row[0], row[1], row[2], row[3], row[4]
        );
        table.push(row);
    }
    let col = |c: usize| mean_std(&table.iter().map(|r| r[c]).collect::<Vec<_>>()).0;
    Verdict {
        id: 8,
        name: "ablation: full >= {k1-NoVote, AbsSub, Sum} in >= 4 of 5 seeds",
        pass: wins.iter().all(|&w| w >= 4),
        detail: format!(
            "wins {}/{}/{} of 5; mean F1 full {:.4} k1-NoVote {:.4} AbsSub {:.4} Sum {:.4} k1-Vote3 {:.4}",
            wins[0],
            wins[1],
            wins[2],
            col(0),
            col(1),
            col(2),
            col(3),
            col(4)
        ),
    }
}

fn determinism(runs: &[SeedRun]) -> Verdict {
    // Repeat on a differently sized thread pool; results must not depend on it.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().expect("pool");
    let mut differing = Vec::new();
    for run in runs {
        let again = pool.install(|| run_seed(run.seed, &train_config(run.seed)));
        let a = &run.result;
        let b = &again.result;
        let same = a.model().to_text() == b.model().to_text()
            && a.report.to_document() == b.report.to_document()
            && a.report.to_summary() == b.report.to_summary()
            && a.report.to_confusion() == b.report.to_confusion()
            && run.data.matrix.to_text() == again.data.matrix.to_text();
        if !same {
            differing.push(run.seed);
        }
    }
    Verdict {
        id: 9,
        name: "determinism: repeated run is byte-identical",
        pass: differing.is_empty(),
        detail: format!(
            "{} of {} seeds byte-identical (checkpoint, report, summary, confusion){}",
            runs.len() - differing.len(),
            runs.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing seeds {differing:?}")
            }
        ),
    }
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut emit = |v: Verdict| {
        report(&v);
        verdicts.push(v);
    };
    emit(gradient_check());
    emit(retrieval_oracle());
    emit(metric_oracle());

    let t = Instant::now();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s, &train_config(s))).collect();
    let secs = t.elapsed().as_secs_f64();
    emit(synthetic_run(&runs, secs));
    emit(rejection_property(&runs));
    emit(incremental_expansion(&runs));
    emit(score_independence(&runs[0]));
    emit(ablation(&runs));
    emit(determinism(&runs));

    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{} ({})", v.id, v.name))
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        verdicts.len() - failed.len(),
        failed.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
