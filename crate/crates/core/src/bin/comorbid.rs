use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use comorbid::error::Error;
use comorbid::ingest::{load_diagnoses, load_notes, NoteRow};
use comorbid::models::{load_model, save_model, ModelKind};
use comorbid::notes_nlp::Lexicon;
use comorbid::pipeline::{evaluate, prepare, run_experiment, PipelineConfig, RunConfig};
use comorbid::sampling::NegRatio;
use comorbid::synthetic::{generate, SyntheticConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "comorbid",
    version,
    about = "Comorbidity prediction with NCF and DHF recommenders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic diagnoses.csv, notes.csv and truth.json.
    Synth {
        /// JSON SyntheticConfig; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write it with its per-epoch history.
    Train(TrainArgs),
    /// Rebuild the test split for a saved model and report its metrics.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON RunConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    model: Option<ModelKind>,
    #[arg(long)]
    diagnoses: Option<PathBuf>,
    #[arg(long)]
    notes: Option<PathBuf>,
    /// Tab-separated `term<TAB>kind` file; the bundled lexicon otherwise.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    top_k_codes: Option<usize>,
    #[arg(long)]
    max_notes: Option<usize>,
    /// Negatives per positive, e.g. 10, 4 or 2.
    #[arg(long, value_parser = parse_ratio)]
    neg_ratio: Option<NegRatio>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Hit-ratio cutoff used in the log summary.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the model path with a `.history.json` suffix.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    diagnoses: PathBuf,
    #[arg(long)]
    notes: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_ratio(s: &str) -> Result<NegRatio, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure category, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_numeric() => EXIT_NUMERIC,
        Some(Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<(), Failure> {
    let mut config: SyntheticConfig = match config {
        Some(path) => read_json(&path)?,
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let data = generate(&config)?;
    let written = data.write_to_dir(&out)?;
    info!(
        "{} diagnosis rows and {} notes for {} subjects",
        data.diagnoses.len(),
        data.notes.len(),
        config.n_subjects
    );
    for path in written {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn load_lexicon(path: Option<&Path>) -> anyhow::Result<Lexicon> {
    Ok(match path {
        Some(p) => Lexicon::load(p, None)?,
        None => Lexicon::clinical_default(),
    })
}

fn load_note_rows(path: &Path, pipeline: &PipelineConfig) -> anyhow::Result<Vec<NoteRow>> {
    let excluded: HashSet<String> = pipeline.data.excluded_categories.iter().cloned().collect();
    let loaded = load_notes(path, &excluded, pipeline.data.max_notes)?;
    if loaded.dropped > 0 {
        log::warn!("dropped {} note rows with blank fields", loaded.dropped);
    }
    info!("{} notes loaded from {}", loaded.rows.len(), path.display());
    Ok(loaded.rows)
}

fn history_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().unwrap_or_default().to_string_lossy();
    model.with_file_name(format!("{stem}.history.json"))
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut run: RunConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = args.model {
        run.model_kind = kind;
    } else if args.config.is_none() {
        return Err(usage("--model is required"));
    }
    if let Some(seed) = args.seed {
        let mut p = run.pipeline();
        p.set_seed(seed);
        run.data = p.data;
        run.train = p.train;
    }
    run.diagnoses = args.diagnoses.or(run.diagnoses);
    run.notes = args.notes.or(run.notes);
    run.out = args.out.or(run.out);
    run.history = args.history.or(run.history);
    run.data.lexicon = args.lexicon.or(run.data.lexicon);
    run.data.top_k_codes = args.top_k_codes.or(run.data.top_k_codes);
    run.data.max_notes = args.max_notes.or(run.data.max_notes);
    run.train.neg_ratio = args.neg_ratio.unwrap_or(run.train.neg_ratio);
    run.train.epochs = args.epochs.unwrap_or(run.train.epochs);
    run.train.batch_size = args.batch_size.unwrap_or(run.train.batch_size);
    run.train.learning_rate = args.learning_rate.unwrap_or(run.train.learning_rate);
    run.k = args.k.unwrap_or(run.k);

    let diagnoses = run
        .diagnoses
        .clone()
        .ok_or_else(|| usage("--diagnoses is required"))?;
    let out = run.out.clone().ok_or_else(|| usage("--out is required"))?;
    if run.model_kind == ModelKind::Dhf && run.notes.is_none() {
        return Err(usage("--model dhf needs --notes"));
    }
    run.train.validate()?;
    let pipeline = run.pipeline();

    let loaded = load_diagnoses(&diagnoses)?;
    if loaded.dropped > 0 {
        log::warn!(
            "dropped {} diagnosis rows with blank fields",
            loaded.dropped
        );
    }
    let lexicon = load_lexicon(pipeline.data.lexicon.as_deref())?;
    let notes = match &run.notes {
        Some(path) if run.model_kind == ModelKind::Dhf => Some(load_note_rows(path, &pipeline)?),
        _ => None,
    };
    let prepared = prepare(
        run.model_kind,
        &loaded.rows,
        notes.as_deref().map(|n| (n, &lexicon)),
        &pipeline,
        None,
    )?;
    let exp = run_experiment(&prepared, &pipeline, run.k)?;
    if let Some(last) = exp.history.epochs.last() {
        info!(
            "epoch {}: train loss {:.4}, validation accuracy {:.4}",
            last.epoch, last.train_loss, last.validation_accuracy
        );
    }
    let r = &exp.report;
    info!(
        "test accuracy {:.4}, macro F1 {:.4}, AUC {}, hit ratio@{} {}",
        r.test_accuracy,
        r.test_macro_f1,
        r.test_auc.map_or("n/a".into(), |a| format!("{a:.4}")),
        r.k,
        r.hit_ratio_at_k.map_or("n/a".into(), |h| format!("{h:.4}"))
    );
    save_model(&out, &exp.saved)?;
    let history = run.history.clone().unwrap_or_else(|| history_path(&out));
    write_json(&history, &exp.history)?;
    info!("wrote {} and {}", out.display(), history.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let saved = load_model(&args.model)?;
    let kind = saved.model.kind();
    if kind == ModelKind::Dhf && args.notes.is_none() {
        return Err(usage("evaluating a dhf model needs --notes"));
    }
    let mut pipeline = saved.pipeline.clone().unwrap_or_default();
    if let Some(lexicon) = args.lexicon {
        pipeline.data.lexicon = Some(lexicon);
    }
    let loaded = load_diagnoses(&args.diagnoses)?;
    let lexicon = load_lexicon(pipeline.data.lexicon.as_deref())?;
    let notes = match &args.notes {
        Some(path) if kind == ModelKind::Dhf => Some(load_note_rows(path, &pipeline)?),
        _ => None,
    };
    let prepared = prepare(
        kind,
        &loaded.rows,
        notes.as_deref().map(|n| (n, &lexicon)),
        &pipeline,
        Some(&saved.vocab),
    )
    .context("data does not match the model vocabulary")?;
    let report = evaluate(&saved.model, &prepared, &pipeline, args.k)?;
    write_json(&args.out, &report)?;
    info!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { config, seed, out } => cmd_synth(config, seed, out),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
