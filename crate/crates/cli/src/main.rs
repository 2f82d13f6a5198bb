//! `bnmc`: experiments on brain-network graph classification.
//!
//! Exit codes: 1 configuration error, 2 data error, 3 non-finite loss.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnmc::data::{load_dataset, save_dataset, AtlasKind, AtlasTransform, Dataset};
use bnmc::encoders::{EncoderConfig, EncoderKind};
use bnmc::error::{Error, Result};
use bnmc::eval::{fisher_task_embedding, similarity_csv, task_similarity_matrix};
use bnmc::experiment::{
    finetune_run, format_summary, pretrain_run, read_results, run, summarize, ResultRow, RunConfig,
    RESULTS_FILE,
};
use bnmc::strategies::{Strategy, TrainConfig};
use bnmc::synth::{generate, uniform_blocks, SynthSpec, WeightMode};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bnmc",
    version,
    about = "Transfer and meta-learning for small brain-network datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-view datasets.
    Synth(SynthArgs),
    /// Single- or multi-task transfer pre-training (stt, mtt).
    Pretrain(RunArgs),
    /// Meta-training (mml, mmar).
    MetaTrain(RunArgs),
    /// K-fold fine-tuning on a target, from a checkpoint or a random init.
    Finetune(FinetuneArgs),
    /// Pre-train and fine-tune every fold: the full pipeline.
    Evaluate(RunArgs),
    /// Fisher task-similarity matrix.
    TaskSim(TaskSimArgs),
    /// Summary table of results files.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// hiv-like, bp-like or ppmi-like.
    #[arg(long)]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    /// Dataset name (defaults to the preset's).
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tasks generated with the same id share latent structure.
    #[arg(long, default_value_t = 0)]
    signal: u64,
    /// Class effect δ.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Node count override; blocks become uniform groups of 6.
    #[arg(long)]
    nodes: Option<usize>,
    /// Subjects per class, `N0,N1`.
    #[arg(long, value_delimiter = ',')]
    subjects: Option<Vec<usize>>,
    /// correlation (clip to [-1, 1]) or nonneg (clip at 0).
    #[arg(long)]
    weight_mode: Option<String>,
}

/// Run settings. Unset flags fall back to `--config`, then to defaults.
#[derive(Args, Default)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    encoder: Option<String>,
    /// Encoder widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    head_hidden: Option<usize>,
    #[arg(long)]
    gat_edge_bias: bool,
    #[arg(long, num_args = 1..)]
    sources: Option<Vec<PathBuf>>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// zero-pad, lp or ae.
    #[arg(long)]
    atlas: Option<String>,
    #[arg(long)]
    target_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    meta_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    first_order: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    stt_source: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Checkpoint written by `pretrain`, `meta-train` or `evaluate`.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct TaskSimArgs {
    #[arg(long, num_args = 1.., required = true)]
    tasks: Vec<PathBuf>,
    /// Common node count (defaults to the largest task); tasks are zero-padded.
    #[arg(long)]
    target_dim: Option<usize>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV files or run directories.
    #[arg(num_args = 1.., required = true)]
    results: Vec<PathBuf>,
}

fn parse<T: std::str::FromStr<Err = Error>>(v: &Option<String>) -> Result<Option<T>> {
    v.as_deref().map(str::parse).transpose()
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json(
                &fs::read_to_string(p)
                    .map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?,
            )?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { c.$field = v.clone(); } )* };
        }
        set!(
            sources,
            epochs,
            meta_epochs,
            finetune_epochs,
            lr,
            lr_min,
            finetune_lr,
            weight_decay,
            inner_lr,
            eta,
            k,
            batch_size,
            folds,
            seeds,
            stt_source,
            out,
            head_hidden
        );
        if let Some(s) = parse::<Strategy>(&self.strategy)? {
            c.strategy = s;
        }
        if let Some(e) = parse::<EncoderKind>(&self.encoder)? {
            c.encoder = e;
        }
        if let Some(a) = parse::<AtlasKind>(&self.atlas)? {
            c.atlas = a;
        }
        if self.hidden.is_some() {
            c.hidden_dims = self.hidden.clone();
        }
        if self.target.is_some() {
            c.target = self.target.clone();
        }
        if self.target_dim.is_some() {
            c.target_dim = self.target_dim;
        }
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        c.gat_edge_bias |= self.gat_edge_bias;
        c.first_order |= self.first_order;
        c.resume |= self.resume;
        Ok(c)
    }
}

fn require_strategy(cfg: &RunConfig, allowed: &[Strategy], command: &str) -> Result<()> {
    if allowed.contains(&cfg.strategy) {
        return Ok(());
    }
    let names: Vec<&str> = allowed.iter().map(|s| s.tag()).collect();
    Err(Error::Invalid(format!(
        "`{command}` takes `--strategy` {}, got `{}`",
        names.join(" or "),
        cfg.strategy.tag()
    )))
}

fn print_rows(rows: &[ResultRow], out: &Path) {
    print!("{}", format_summary(&summarize(rows)));
    println!("wrote {}", out.join(RESULTS_FILE).display());
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::from_preset(&a.preset)?;
    if let Some(n) = &a.name {
        spec.name = n.clone();
    }
    spec.seed = a.seed;
    spec.shared_signal_id = a.signal;
    if let Some(d) = a.delta {
        spec.class_effect = d;
    }
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    if let Some(n) = a.nodes {
        spec.node_count = n;
        spec.blocks = uniform_blocks(n, 6);
    }
    if let Some(s) = &a.subjects {
        let [n0, n1] = s[..] else {
            return Err(Error::Invalid(format!(
                "`--subjects` takes two counts, got {}",
                s.len()
            )));
        };
        spec.subjects_per_class = [n0, n1];
    }
    match a.weight_mode.as_deref() {
        None => {}
        Some("correlation") => spec.weight_mode = WeightMode::Correlation,
        Some("nonneg") => spec.weight_mode = WeightMode::Nonneg,
        Some(other) => return Err(Error::Invalid(format!("unknown weight mode `{other}`"))),
    }
    for ds in generate(&spec)? {
        let dir = a.out.join(format!("{}-{}", ds.name, ds.modality));
        save_dataset(&ds, &dir)?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn task_sim(a: &TaskSimArgs) -> Result<()> {
    let tasks = a
        .tasks
        .iter()
        .map(load_dataset)
        .collect::<Result<Vec<Dataset>>>()?;
    let dim = a
        .target_dim
        .unwrap_or_else(|| tasks.iter().map(Dataset::node_count).max().unwrap_or(0));
    let aligned = tasks
        .iter()
        .map(|t| AtlasTransform::zero_pad(t.node_count(), dim)?.apply_dataset(t))
        .collect::<Result<Vec<_>>>()?;
    let probe = EncoderConfig::new(EncoderKind::Gcn);
    let cfg = TrainConfig::default().with_epochs(a.epochs);
    let embeddings = aligned
        .iter()
        .map(|t| fisher_task_embedding(&probe, t, &cfg, a.seed))
        .collect::<Result<Vec<_>>>()?;
    let sim = task_similarity_matrix(&embeddings)?;
    let names: Vec<String> = embeddings.iter().map(|e| e.name.clone()).collect();
    let csv = similarity_csv(&names, &sim);
    fs::write(&a.out, &csv).map_err(|e| Error::Data(format!("{}: {e}", a.out.display())))?;
    print!("{csv}");
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.results {
        let file = if p.is_dir() {
            p.join(RESULTS_FILE)
        } else {
            p.clone()
        };
        rows.extend(read_results(&file)?);
    }
    print!("{}", format_summary(&summarize(&rows)));
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Pretrain(a) => {
            let cfg = a.config()?;
            require_strategy(&cfg, &[Strategy::Stt, Strategy::Mtt], "pretrain")?;
            for p in pretrain_run(&cfg)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::MetaTrain(a) => {
            let cfg = a.config()?;
            require_strategy(&cfg, &[Strategy::Mml, Strategy::Mmar], "meta-train")?;
            for p in pretrain_run(&cfg)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Finetune(a) => {
            let cfg = a.run.config()?;
            let rows = finetune_run(&cfg, a.init.as_deref())?;
            print_rows(&rows, &cfg.out);
            Ok(())
        }
        Command::Evaluate(a) => {
            let cfg = a.config()?;
            let rows = run(&cfg)?;
            print_rows(&rows, &cfg.out);
            Ok(())
        }
        Command::TaskSim(a) => task_sim(&a),
        Command::Report(a) => report(&a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) | Error::Shape(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
