use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use captionvoice::captions::{AttributeSpec, EvalMode, TemplateTable};
use captionvoice::config::RunConfig;
use captionvoice::corpus::build_synthetic_corpus;
use captionvoice::dsp::{extract_features, read_wav, write_wav, FEATURE_CSV_HEADER};
use captionvoice::harness::{
    evaluate, infer_from_caption, run_training_from_config, trace_from_caption, PipelineCheckpointSet,
};
use captionvoice::{parallel, seed, Error};

#[derive(Parser)]
#[command(name = "captionvoice", version, about = "Caption-controlled voice tone synthesis")]
struct Cli {
    /// Master seed; every stage seed is derived from it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for corpus generation and evaluation
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (WAVs, manifest, bins)
    Corpus(CorpusArgs),
    /// Run alignment, decoder and prior training
    Train(TrainArgs),
    /// Synthesize a WAV from a caption
    Infer(InferArgs),
    /// Run the controllability evaluation
    Eval(EvalArgs),
    /// Print the acoustic features of a WAV file as CSV
    Features(FeaturesArgs),
    /// Render a caption from an attribute spec
    Caption(CaptionArgs),
    /// Parse a caption into an attribute spec
    Parse(ParseArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    /// Corpus output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    caption: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Reverse-sampler steps
    #[arg(long)]
    steps: Option<usize>,
    /// Also write the sampler trace as CSV
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Caption set: single or paper44
    #[arg(long)]
    mode: Option<EvalMode>,
    /// Samples per caption
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Abort on the first failed sample instead of recording it
    #[arg(long)]
    fail_fast: bool,
}

#[derive(Args)]
struct FeaturesArgs {
    file: PathBuf,
    /// Print the CSV header before the row
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct CaptionArgs {
    /// JSON object such as '{"level": "Top", "emotion": "happy"}'
    #[arg(long)]
    spec: String,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    text: String,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Error::InvalidConfig)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.apply_seed(s);
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        parallel::set_jobs(jobs);
    }
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Corpus(args) => {
            config.corpus.n_utterances = args.n.unwrap_or(config.corpus.n_utterances);
            config.corpus.duration_s = args.duration.unwrap_or(config.corpus.duration_s);
            let dir = args.out.unwrap_or(config.corpus_dir);
            let start = Instant::now();
            let corpus = build_synthetic_corpus(&config.corpus, Some(&dir)).map_err(Error::from)?;
            eprintln!(
                "wrote {} utterances to {} in {:.1}s",
                corpus.records.len(),
                dir.display(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Train(args) => {
            config.corpus_dir = args.corpus.unwrap_or(config.corpus_dir);
            config.checkpoint_dir = args.checkpoints.unwrap_or(config.checkpoint_dir);
            config.report_dir = args.reports.unwrap_or(config.report_dir);
            let start = Instant::now();
            let (checkpoints, report) = run_training_from_config(&config)?;
            let hashes = checkpoints.save(&config.checkpoint_dir)?;
            report.write(&config.report_dir)?;
            let r = &report.alignment.retrieval;
            eprintln!(
                "alignment: loss {:.4} -> {:.4}, retrieval top1 {:.3} top5 {:.3} (pool {})",
                report.alignment.initial_loss,
                report.alignment.epoch_losses.last().copied().unwrap_or(f64::NAN),
                r.top1,
                r.top5,
                r.pool_size
            );
            eprintln!(
                "decoder: held-out rmse {:.4} (baseline {:.4})",
                report.decoder.holdout_rmse, report.decoder.baseline_rmse
            );
            eprintln!(
                "prior: {} pairs, loss {:.4} -> {:.4}",
                report.prior_pairs,
                report.prior.epoch_losses.first().copied().unwrap_or(f64::NAN),
                report.prior.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            for (name, hash) in hashes {
                println!("{hash}  {name}");
            }
            eprintln!("trained in {:.1}s", start.elapsed().as_secs_f64());
        }
        Command::Infer(args) => {
            let dir = args.checkpoints.unwrap_or(config.checkpoint_dir);
            let checkpoints = PipelineCheckpointSet::load(&dir)?;
            let steps = args.steps.unwrap_or(config.train.sde.n_steps);
            let seed_value = config.eval.seed;
            let inference = infer_from_caption(&args.caption, &checkpoints, seed_value, steps)?;
            if let Some(path) = &args.trace {
                let mut file = fs::File::create(path).with_context(|| path.display().to_string())?;
                trace_from_caption(&args.caption, &checkpoints, seed_value, steps, &mut file)?;
            }
            write_wav(&inference.waveform, &args.out).map_err(Error::from)?;
            println!("{}", serde_json::to_string(&inference.params)?);
        }
        Command::Eval(args) => {
            config.eval.mode = args.mode.unwrap_or(config.eval.mode);
            config.eval.n_per_caption = args.n.unwrap_or(config.eval.n_per_caption);
            config.eval.n_steps = args.steps.unwrap_or(config.eval.n_steps);
            config.eval.fail_fast |= args.fail_fast;
            let dir = args.checkpoints.unwrap_or(config.checkpoint_dir);
            let reports = args.reports.unwrap_or(config.report_dir);
            let checkpoints = PipelineCheckpointSet::load(&dir)?;
            let start = Instant::now();
            let report = evaluate(&checkpoints, &config.eval)?;
            report.write(&reports)?;
            print!("{}", report.summary_csv());
            eprintln!(
                "{} samples over {} captions in {:.1}s; reports in {}",
                report.sample_count(),
                report.captions.len(),
                start.elapsed().as_secs_f64(),
                reports.display()
            );
        }
        Command::Features(args) => {
            let wave = read_wav(&args.file).map_err(Error::from)?;
            let features = extract_features(&wave, &config.corpus.analysis).map_err(Error::from)?;
            if args.header {
                println!("{FEATURE_CSV_HEADER}");
            }
            println!("{}", features.csv_row(&args.file.display().to_string()));
        }
        Command::Caption(args) => {
            let map: BTreeMap<String, String> = serde_json::from_str(&args.spec)
                .map_err(|e| Error::InvalidConfig(format!("spec must be a JSON object of strings: {e}")))?;
            let spec = AttributeSpec::from_string_map(&map).map_err(Error::from)?;
            let mut rng = seed::rng(config.seed, &[]);
            println!("{}", TemplateTable::builtin().generate(&spec, &mut rng).map_err(Error::from)?);
        }
        Command::Parse(args) => {
            let spec = TemplateTable::builtin().parse(&args.text).map_err(Error::from)?;
            println!("{spec}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let name = e.downcast_ref::<Error>().map_or("Error", Error::name);
            eprintln!("error[{name}]: {e:#}");
            ExitCode::from(1)
        }
    }
}
