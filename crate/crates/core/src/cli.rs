//! Command implementations behind the `fbgcn` binary.
//!
//! Every command writes to the given sink and is a pure function of its
//! input files, flags and seed.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::gcnnet::{train, train_with_operator, ModelKind, TrainConfig, TrainResult};
use crate::graphstore::{
    load_dataset, ratio_split, save_dataset, synthetic_graph, Dataset, Split, SplitConfig,
    SyntheticKind,
};
use crate::perturb::NoiseKind;
use crate::proximity::highorder_preprocess;
use crate::sparsela::{renormalize_adjacency, sparsity, SparseSym};
use crate::spectral::{SpectralBasis, DEFAULT_EIG_TOL};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "fbgcn",
    version,
    about = "Fisher-Bures adversarial graph convolutional networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print dataset statistics: nodes links components features classes sparsity.
    Stats(StatsArgs),
    /// Train a GCN or FisherGCN and report per-epoch and test metrics.
    Train(Box<TrainArgs>),
    /// Compute the rank-k spectral basis of the density matrix and save it.
    Eigs(EigsArgs),
    /// Write the high-order proximity matrix as `row col value` triplets.
    Preprocess(PreprocessArgs),
    /// Write a small synthetic dataset container.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset container directory.
    pub dataset: PathBuf,
    /// Also report the sparsity of the order-T proximity matrix.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct HighOrderArgs {
    /// Propagate with the random-walk proximity matrix instead of Ã.
    #[arg(long)]
    pub highorder: bool,
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
}

impl HighOrderArgs {
    fn operator(&self, ds: &Dataset) -> Result<SparseSym> {
        if self.highorder {
            highorder_preprocess(&ds.adjacency, self.order, self.threshold)
        } else {
            Ok(renormalize_adjacency(&ds.adjacency))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gcn,
    Fishergcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Canonical,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Uniform,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Gcn)]
    pub model: ModelArg,
    #[command(flatten)]
    pub highorder: HighOrderArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    #[arg(long = "num-perturb", default_value_t = 5)]
    pub num_perturb: usize,
    #[arg(long, value_enum, default_value_t = NoiseArg::Uniform)]
    pub noise: NoiseArg,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long = "weight-decay", default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long = "max-epochs", default_value_t = 500)]
    pub max_epochs: usize,
    #[arg(long = "no-early-stopping")]
    pub no_early_stopping: bool,
    #[arg(long, value_enum, default_value_t = SplitArg::Canonical)]
    pub split: SplitArg,
    /// Training nodes per class for random splits.
    #[arg(long = "per-class", default_value_t = 20)]
    pub per_class: usize,
    #[arg(long = "num-valid", default_value_t = 500)]
    pub num_valid: usize,
    #[arg(long = "num-test", default_value_t = 1000)]
    pub num_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Independent runs with seeds seed, seed+1, …; random splits are redrawn
    /// per run. Reports mean ± std of test accuracy.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Spectral basis written by `eigs`, reused instead of recomputed.
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EigsArgs {
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EIG_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub highorder: HighOrderArgs,
    /// Where to write the basis.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKindArg {
    Path,
    Complete,
    TwoBlocks,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKindArg::TwoBlocks)]
    pub kind: SynthKindArg,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Stats(a) => cmd_stats(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eigs(a) => cmd_eigs(&a, out),
        Command::Preprocess(a) => cmd_preprocess(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let s = ds.stats();
    let mut line = format!(
        "{} {} {} {} {} {}",
        s.nodes,
        s.links,
        s.components,
        s.features,
        s.classes,
        percent(s.sparsity)
    );
    if let Some(order) = args.order {
        let p = highorder_preprocess(&ds.adjacency, order, args.threshold)?;
        line.push(' ');
        line.push_str(&percent(sparsity(&p)));
    }
    emit(out, format_args!("{line}"))
}

fn config_of(args: &TrainArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: args.lr,
        hidden: args.hidden,
        dropout: args.dropout,
        weight_decay: args.weight_decay,
        max_epochs: args.max_epochs,
        draws: args.num_perturb,
        radius: args.radius,
        k: args.k,
        noise: match args.noise {
            NoiseArg::Uniform => NoiseKind::Uniform,
            NoiseArg::Gaussian => NoiseKind::Gaussian,
        },
        model: match args.model {
            ModelArg::Gcn => ModelKind::Gcn,
            ModelArg::Fishergcn => ModelKind::FisherGcn,
        },
        highorder: args
            .highorder
            .highorder
            .then_some((args.highorder.order, args.highorder.threshold)),
        early_stopping: !args.no_early_stopping,
        seed,
    }
}

fn split_for(args: &TrainArgs, ds: &Dataset, seed: u64) -> Result<Split> {
    match args.split {
        SplitArg::Canonical => ds
            .canonical_split
            .clone()
            .ok_or_else(|| Error::Data(format!("dataset {} has no canonical split", ds.name))),
        SplitArg::Random => ratio_split(
            ds,
            SplitConfig {
                per_class: args.per_class,
                valid: args.num_valid,
                test: args.num_test,
            },
            seed,
        ),
    }
}

fn summary(r: &TrainResult) -> String {
    format!(
        "test_loss {:.6} test_acc {:.6} epochs {} stop {}",
        r.test_loss,
        r.test_acc,
        r.epochs(),
        r.stop
    )
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    if args.repeats == 0 {
        return Err(Error::Argument("--repeats must be at least 1".into()));
    }
    let ds = load_dataset(&args.dataset)?;
    let basis = match &args.basis {
        Some(path) => Some(SpectralBasis::load(path)?),
        None => None,
    };
    let operator = match basis {
        Some(_) => Some(args.highorder.operator(&ds)?),
        None => None,
    };
    let mut accuracies = Vec::with_capacity(args.repeats);
    for run in 0..args.repeats {
        let seed = args.seed.wrapping_add(run as u64);
        let cfg = config_of(args, seed);
        let split = split_for(args, &ds, seed)?;
        let result = match (&operator, &basis) {
            (Some(op), Some(b)) if cfg.model == ModelKind::FisherGcn => {
                train_with_operator(&ds, &split, &cfg, op, Some(b))?
            }
            _ => train(&ds, &split, &cfg)?,
        };
        if args.repeats == 1 {
            for m in &result.history {
                emit(out, format_args!("{m}"))?;
            }
            emit(out, format_args!("{}", summary(&result)))?;
        } else {
            emit(
                out,
                format_args!("run {run} seed {seed} {}", summary(&result)),
            )?;
        }
        accuracies.push(result.test_acc);
    }
    if args.repeats > 1 {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
        emit(
            out,
            format_args!(
                "test_acc {:.2} ± {:.2} over {} runs",
                100.0 * mean,
                100.0 * var.sqrt(),
                args.repeats
            ),
        )?;
    }
    Ok(())
}

pub fn cmd_eigs(args: &EigsArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let op = args.highorder.operator(&ds)?;
    let basis = SpectralBasis::from_normalized_adjacency(&op, args.k, args.tol, args.seed)?;
    basis.save(&args.output)?;
    let spectrum: Vec<String> = basis.lambda_bar.iter().map(|v| format!("{v:.6}")).collect();
    emit(
        out,
        format_args!("trace_L {:.6} lambda {}", basis.trace_l, spectrum.join(" ")),
    )
}

/// Both triangles are written, one line per stored entry, rows in order.
pub fn cmd_preprocess(args: &PreprocessArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let p = highorder_preprocess(&ds.adjacency, args.order, args.threshold)?;
    let mut text = String::new();
    for i in 0..p.n() {
        let (cols, vals) = p.row(i);
        for (j, v) in cols.iter().zip(vals) {
            text.push_str(&format!("{i} {j} {v:e}\n"));
        }
    }
    std::fs::write(&args.output, text).map_err(|e| Error::io(&args.output, e))?;
    emit(
        out,
        format_args!("{} nonzeros {}", p.nnz(), percent(sparsity(&p))),
    )
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let kind = match args.kind {
        SynthKindArg::Path => SyntheticKind::Path,
        SynthKindArg::Complete => SyntheticKind::Complete,
        SynthKindArg::TwoBlocks => SyntheticKind::TwoBlocks,
    };
    let ds = synthetic_graph(kind, args.n, args.seed)?;
    save_dataset(&ds, &args.output)?;
    emit(
        out,
        format_args!("{} {} nodes {} links", ds.name, ds.n(), ds.num_links()),
    )
}
