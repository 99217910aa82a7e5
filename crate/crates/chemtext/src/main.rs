use std::path::PathBuf;
use std::process::ExitCode;

use chemtext::commands;
use chemtext::config::{Precision, RunConfig, OUT_ENV};
use chemtext::{Error, Result};
use chemtext_core::model::{ArchClass, TaskType};
use chemtext_core::train::RegressionLoss;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Property prediction from SMILES strings.
#[derive(Parser, Debug)]
#[command(name = "chemtext", version)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    out_dir: Option<PathBuf>,

    /// Floating-point precision of the networks.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,

    /// Allow layer widths that are not on the search grid.
    #[arg(long, global = true)]
    off_grid: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the vocabulary and encode a dataset.
    Encode(DataArgs),
    /// Cross-validated training of one design.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Saved model file.
        #[arg(long)]
        model: PathBuf,
    },
    /// Bayesian search over the design grid.
    Hpo(HpoArgs),
    /// Train an explanation mask and score its attributions.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Labeled CSV with a SMILES column.
    #[arg(long)]
    dataset: Option<PathBuf>,

    #[arg(long)]
    smiles_column: Option<String>,

    /// Comma-separated label columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,

    #[arg(long, value_enum)]
    task: Option<Task>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Task {
    Regression,
    Classification,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Loss {
    Mae,
    Mse,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// gru, lstm, cnn-gru, or cnn-lstm.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    em: Option<usize>,
    #[arg(long)]
    conv: Option<usize>,
    #[arg(long)]
    rnn1: Option<usize>,
    #[arg(long)]
    rnn2: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<Loss>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    design: DesignArgs,
}

#[derive(Args, Debug)]
struct HpoArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    design: DesignArgs,
    /// Total trials including the six seed designs.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained base model file.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Load this explainer instead of training one.
    #[arg(long)]
    explainer: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    soluble_cutoff: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    insoluble_cutoff: Option<f64>,
    /// Only check that an all-ones mask leaves predictions unchanged.
    #[arg(long)]
    identity_mask_check: bool,
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(s) = &a.smiles_column {
        cfg.columns.smiles = s.clone();
    }
    if !a.labels.is_empty() {
        cfg.columns.labels = a.labels.clone();
    }
    if let Some(t) = a.task {
        cfg.task = match t {
            Task::Regression => TaskType::Regression,
            Task::Classification => TaskType::Classification,
        };
    }
}

fn apply_design(cfg: &mut RunConfig, a: &DesignArgs) -> Result<()> {
    if let Some(s) = &a.arch {
        cfg.arch = s.parse::<ArchClass>().map_err(|e| Error::Usage(e.to_string()))?;
        if !cfg.arch.has_conv() {
            cfg.hyper_params.conv_filters = None;
        }
    }
    let hp = &mut cfg.hyper_params;
    if let Some(v) = a.em {
        hp.em_size = v;
    }
    if let Some(v) = a.conv {
        hp.conv_filters = Some(v);
    }
    if let Some(v) = a.rnn1 {
        hp.rnn1_units = v;
    }
    if let Some(v) = a.rnn2 {
        hp.rnn2_units = v;
    }
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.patience {
        t.patience = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(l) = a.loss {
        t.regression_loss = match l {
            Loss::Mae => RegressionLoss::Mae,
            Loss::Mse => RegressionLoss::Mse,
        };
    }
    if let Some(v) = a.folds {
        cfg.split.n_folds = v;
    }
    if let Some(v) = a.test_fraction {
        cfg.split.test_fraction = Some(v);
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(p) = &cli.precision {
        cfg.precision = if p == "64" { Precision::F64 } else { Precision::F32 };
    }
    if cli.off_grid {
        cfg.off_grid = true;
    }
    match &cli.command {
        Command::Encode(d) => apply_data(&mut cfg, d),
        Command::Eval { data, .. } => apply_data(&mut cfg, data),
        Command::Train(a) => {
            apply_data(&mut cfg, &a.data);
            apply_design(&mut cfg, &a.design)?;
        }
        Command::Hpo(a) => {
            apply_data(&mut cfg, &a.data);
            apply_design(&mut cfg, &a.design)?;
            if let Some(n) = a.trials {
                cfg.search.n_trials = n;
            }
        }
        Command::Explain(a) => {
            apply_data(&mut cfg, &a.data);
            let e = &mut cfg.explain;
            if let Some(p) = &a.base {
                e.base_model = Some(p.clone());
            }
            if let Some(p) = &a.explainer {
                e.explainer = Some(p.clone());
            }
            if let Some(v) = a.width {
                e.network.width = v;
            }
            if let Some(v) = a.blocks {
                e.network.blocks = v;
            }
            if let Some(v) = a.max_epochs {
                e.network.max_epochs = v;
            }
            if let Some(v) = a.top_k {
                e.top_k = v;
            }
            if let Some(v) = a.soluble_cutoff {
                e.cutoffs.soluble = v;
            }
            if let Some(v) = a.insoluble_cutoff {
                e.cutoffs.insoluble = v;
            }
        }
    }
    cfg.validate()?;
    cfg.dataset_path()?;
    Ok(cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let out = cfg.out_dir.display().to_string();
    match &cli.command {
        Command::Encode(_) => {
            let s = commands::encode(&cfg)?;
            println!(
                "{}: {} accepted, {} dropped ({} invalid, {} too long, {} missing target); vocabulary {} entries",
                s.dataset,
                s.load.accepted,
                s.load.dropped_total(),
                s.load.dropped_invalid,
                s.load.dropped_too_long,
                s.load.dropped_missing_target,
                s.vocabulary_size
            );
        }
        Command::Train(_) => {
            let r = commands::train(&cfg)?;
            for f in &r.folds {
                println!(
                    "fold {}: best epoch {} of {}, validation {} {}, test {}",
                    f.fold + 1,
                    f.best_epoch,
                    f.epochs_run,
                    r.metric.name(),
                    opt(f.val_metric),
                    opt(f.test_metric)
                );
            }
            println!(
                "validation {}: {} +/- {}; test {}",
                r.metric.name(),
                opt(r.mean_val_metric),
                opt(r.std_val_metric),
                opt(r.mean_test_metric)
            );
        }
        Command::Eval { model, .. } => {
            let s = commands::eval(&cfg, model)?;
            println!("{}: n = {}, {} = {}, loss = {:.4}", s.dataset, s.n, s.metric_kind.name(), opt(s.metric), s.loss);
        }
        Command::Hpo(_) => {
            let s = commands::hpo(&cfg)?;
            println!("{} trials ({} completed, {} resumed)", s.trials, s.completed, s.resumed_from);
            if let Some(b) = &s.best {
                println!("best: trial {} {:?} validation {}", b.id, b.params, opt(b.objective));
            }
            println!("validation/test correlation: {}", opt(s.val_test_correlation));
        }
        Command::Explain(a) => {
            let s = commands::explain(&cfg, a.identity_mask_check)?;
            println!("identity mask: max deviation {:e}", s.identity_max_diff);
            if !a.identity_mask_check {
                println!(
                    "top-{} accuracy: per character {}, per molecule (majority) {}; reference {:.2}; {} soluble, {} insoluble",
                    s.k,
                    opt(s.per_character),
                    opt(s.per_molecule_majority),
                    s.reference_per_character,
                    s.n_soluble,
                    s.n_insoluble
                );
            }
        }
    }
    println!("outputs in {out}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
