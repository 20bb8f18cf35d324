//! Command-line front end. Exit status 0 on success, 1 on usage errors and
//! 2 on runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{evaluate_prefixes, gen_synthetic, SyntheticSpec};
use crate::meta_classifier::{grad_check_pipeline, DecisionRule, MetaClassifier};
use crate::registry::SeenClassSet;
use crate::trainer::{train_partition, ClassPartition, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Optional thread-count hint for the internal pool.
pub const THREADS_ENV: &str = "L2AC_THREADS";

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "l2ac",
    version,
    about = "Open-world classification with a retrain-free meta-classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a Gaussian-cluster embedding file.
    GenSynth(GenSynthArgs),
    /// Meta-train a model on one embedding file with model selection on another.
    Train(TrainArgs),
    /// Evaluate a model against growing prefixes of a registry.
    Eval(EvalArgs),
    /// Classify every row of an embedding file.
    Classify(ClassifyArgs),
    /// Register a new class from an embedding file.
    RegistryAdd(RegistryAddArgs),
    /// Remove a class from a registry.
    RegistryRemove(RegistryRemoveArgs),
    /// Compare analytic and finite-difference gradients on a random model.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    seen_sizes: Vec<usize>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Also print every class probability, highest first.
    #[arg(long)]
    explain: bool,
}

#[derive(Debug, Args)]
struct RegistryAddArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    label: String,
    #[arg(long)]
    examples: PathBuf,
}

#[derive(Debug, Args)]
struct RegistryRemoveArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    label: String,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    hidden: usize,
    #[arg(long)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return EXIT_RUNTIME;
    }
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // The global pool can only be built once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn io_write(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::GenSynth(a) => {
            let spec = SyntheticSpec {
                num_classes: a.classes,
                per_class: a.per_class,
                dim: a.dim,
                sigma: a.sigma,
                seed: a.seed,
            };
            let m = gen_synthetic(&spec)?;
            m.save(&a.out)?;
            io_write(
                out,
                &format!("wrote {} rows of dim {} to {}\n", m.len(), m.dim(), a.out.display()),
            )?;
        }
        Command::Train(a) => {
            let cfg = TrainConfig::load(&a.config)?;
            let meta = EmbeddingMatrix::load(&a.meta)?;
            let val = EmbeddingMatrix::load(&a.val)?;
            let partition = ClassPartition::new(meta.class_labels(), val.class_labels())?;
            let mut all = meta;
            if val.dim() != all.dim() {
                return Err(Error::shape(
                    "train",
                    format!(
                        "meta data has dim {} but validation data has dim {}",
                        all.dim(),
                        val.dim()
                    ),
                ));
            }
            for r in val.records() {
                all.push(r.clone())?;
            }
            let outcome = train_partition(&all, &partition, &cfg)?;
            outcome.model.save(&a.out)?;
            let mut text = String::new();
            for e in &outcome.history {
                text.push_str(&format!(
                    "epoch {}\ttrain_loss {}\tval_loss {}\n",
                    e.epoch, e.train_loss, e.val_loss
                ));
            }
            text.push_str(&format!(
                "best_epoch\t{}\nbest_val_loss\t{}\ncheckpoint\t{}\n",
                outcome.best_epoch,
                outcome.best_val_loss,
                outcome.model.checkpoint_hash()
            ));
            io_write(out, &text)?;
        }
        Command::Eval(a) => {
            let model = MetaClassifier::load(&a.model)?;
            let registry = SeenClassSet::load(&a.registry)?;
            let test = EmbeddingMatrix::load(&a.test)?;
            let report = evaluate_prefixes(&model, &registry, &test, &a.seen_sizes, DecisionRule::Aggregate)?;
            report.write(&a.report)?;
            let mut text = String::new();
            for run in &report.runs {
                text.push_str(&format!(
                    "seen_size {}\tweighted_f1 {}\tmacro_f1 {}\n",
                    run.seen_size(),
                    run.report.weighted_f1,
                    run.report.macro_f1
                ));
            }
            io_write(out, &text)?;
        }
        Command::Classify(a) => {
            let model = MetaClassifier::load(&a.model)?;
            let registry = SeenClassSet::load(&a.registry)?;
            let input = EmbeddingMatrix::load(&a.input)?;
            let k = model.config().k;
            let mut text = String::new();
            for r in input.records() {
                let p = registry.classify(&r.vector, &model, k)?;
                text.push_str(&format!("{}\t{}\n", r.id, p.outcome));
                if a.explain {
                    for (label, prob) in p.ranked() {
                        text.push_str(&format!("  {label}\t{prob}\n"));
                    }
                }
            }
            io_write(out, &text)?;
        }
        Command::RegistryAdd(a) => {
            let examples = EmbeddingMatrix::load(&a.examples)?;
            let mut registry = if a.registry.exists() {
                SeenClassSet::load(&a.registry)?
            } else {
                SeenClassSet::new(examples.dim())
            };
            let rows = examples.records().to_vec();
            let count = rows.len();
            registry.add_class(&a.label, rows)?;
            registry.save(&a.registry)?;
            io_write(
                out,
                &format!(
                    "added `{}` with {count} examples; {} classes\n",
                    a.label,
                    registry.len()
                ),
            )?;
        }
        Command::RegistryRemove(a) => {
            let mut registry = SeenClassSet::load(&a.registry)?;
            registry.remove_class(&a.label)?;
            registry.save(&a.registry)?;
            io_write(out, &format!("removed `{}`; {} classes\n", a.label, registry.len()))?;
        }
        Command::GradCheck(a) => {
            let err = grad_check_pipeline(a.dim, a.k, a.hidden, a.seed, a.step)?;
            let pass = err < GRAD_CHECK_TOLERANCE;
            io_write(
                out,
                &format!("max_rel_error\t{err:e}\n{}\n", if pass { "PASS" } else { "FAIL" }),
            )?;
            return Ok(if pass { EXIT_OK } else { EXIT_RUNTIME });
        }
    }
    Ok(EXIT_OK)
}
