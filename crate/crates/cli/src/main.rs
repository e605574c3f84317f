use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fastfashion_core::feedback::{self, fixture, GenderLine, Provenance, Question, RaterKind};
use fastfashion_core::superres::{self, train, SRConfig};
use fastfashion_core::transfer::{self, SeedInit};
use fastfashion_core::trends::{self, synth, ClusterCount, ReportParams};
use fastfashion_core::{
    DesignRecord, FeedbackStore, ImageBuffer, NoiseSpec, Rating, SRModel, SqliteStore, TransferConfig,
    TransferParams,
};
use fastfashion_cli::artifacts::digest;
use fastfashion_cli::service::{load_feature_net, CorpusInfo};
use fastfashion_cli::{api, Config, Service};

/// Exit status for a missing or unreadable input file.
const EXIT_MISSING: u8 = 2;

#[derive(Parser)]
#[command(name = "fastfashion", version, about = "Trend mining, style transfer, super-resolution and design feedback")]
struct Cli {
    /// TOML configuration file; FASTFASHION_* variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a JSONL feed and write the corpus with embeddings.
    Ingest {
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Cluster a corpus and print the trend report as JSON.
    Trends {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed cluster count instead of the silhouette sweep.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = trends::DEFAULT_BIN_DAYS)]
        bin_days: i64,
    },
    /// Run style transfer synchronously, printing the loss trace.
    Generate(GenerateArgs),
    /// Super-resolve an image.
    Enhance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = superres::DEFAULT_FACTOR)]
        factor: u32,
        #[arg(long)]
        denoise: bool,
        /// Overrides `superres.weights_path`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Design feedback store.
    Feedback {
        /// SQLite database; defaults to `<data_dir>/feedback.sqlite`.
        #[arg(long, global = true)]
        db: Option<PathBuf>,
        #[command(subcommand)]
        command: FeedbackCommand,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Train super-resolution weights on synthetic prints.
    TrainSr {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 6e-4)]
        lr: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic corpus with planted trends.
    SynthCorpus {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Plant an isolated quirky cluster instead of growth and emergence.
        #[arg(long)]
        quirky: bool,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    #[arg(long, default_value_t = transfer::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = transfer::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = transfer::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, value_enum, default_value_t = NoiseArg::Uniform)]
    noise: NoiseArg,
    /// Periods across the width for sinusoidal noise.
    #[arg(long, default_value_t = 1)]
    cycles: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from the content image rather than noise.
    #[arg(long)]
    from_content: bool,
    #[arg(long, default_value_t = transfer::DEFAULT_WORKING_SIZE)]
    size: usize,
    #[arg(long, default_value = "out.png")]
    out: PathBuf,
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Uniform,
    Sinusoidal,
}

#[derive(Subcommand)]
enum FeedbackCommand {
    /// Write ratings and per-design summaries as CSV.
    Export {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Register a design.
    Design {
        #[arg(long)]
        id: String,
        #[arg(long)]
        image: String,
        #[arg(long, value_parser = parse_enum::<GenderLine>)]
        line: GenderLine,
        /// Generation job that produced the design.
        #[arg(long)]
        job: Option<String>,
    },
    /// Record or replace one rating.
    Rate {
        #[arg(long)]
        rater: String,
        #[arg(long, value_parser = parse_enum::<RaterKind>)]
        kind: RaterKind,
        #[arg(long)]
        design: String,
        #[arg(long, value_parser = parse_enum::<Question>)]
        question: Question,
        #[arg(long)]
        score: i64,
        #[arg(long)]
        comment: Option<String>,
    },
    /// Print the segregation table as JSON.
    Table {
        #[arg(long, value_parser = parse_enum::<RaterKind>, default_value = "designer")]
        kind: RaterKind,
    },
    /// Load the reference designer panel (15 designs, 15 designers).
    Fixture,
}

fn parse_enum<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

/// An input path that does not exist; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("file not found: {0}")]
struct MissingFile(PathBuf);

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(MissingFile(path.to_path_buf()).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            let line = serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    for cause in e.chain() {
        if cause.is::<MissingFile>() {
            return ("file_not_found", EXIT_MISSING);
        }
        if let Some(io) = cause.downcast_ref::<io::Error>() {
            if io.kind() == io::ErrorKind::NotFound {
                return ("file_not_found", EXIT_MISSING);
            }
        }
        if let Some(core) = cause.downcast_ref::<fastfashion_core::Error>() {
            return (core.kind(), 1);
        }
        if let Some(service) = cause.downcast_ref::<fastfashion_cli::ServiceError>() {
            return (service.kind(), 1);
        }
    }
    ("error", 1)
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { input, out } => ingest(&config, &input, &out),
        Command::Trends { corpus, seed, k, bin_days } => {
            require(&corpus)?;
            let records = trends::parse_jsonl(BufReader::new(File::open(&corpus)?))?;
            let base = corpus.parent().unwrap_or(Path::new("."));
            let net = needs_embedding(&records).then(|| load_feature_net(&config)).transpose()?;
            let (corpus, _) = trends::ingest(
                records,
                net.as_ref().map(|n| n as &dyn fastfashion_core::Embedder),
                |img| ImageBuffer::load(base.join(img)),
            )?;
            let params = ReportParams {
                clusters: k.map(ClusterCount::Fixed).unwrap_or_default(),
                bin_days,
                ..ReportParams::default()
            };
            println!("{}", trends::report(&corpus, &params, seed)?.to_json()?);
            Ok(())
        }
        Command::Generate(args) => generate(&config, args),
        Command::Enhance { input, out, factor, denoise, weights } => {
            require(&input)?;
            let sr = SRConfig {
                factor,
                denoise,
                weights_path: weights.or(config.superres.weights_path.clone()),
            };
            sr.validate()?;
            if let Some(p) = &sr.weights_path {
                require(p)?;
            }
            let model = superres::load_model(&sr)?;
            let image = ImageBuffer::load(&input)?;
            let up = superres::upscale(&image, &model, &sr)?;
            up.save_png(&out)?;
            println!("{}", serde_json::json!({ "output": out, "width": up.width(), "height": up.height() }));
            Ok(())
        }
        Command::Feedback { db, command } => {
            let path = db.unwrap_or_else(|| config.data_dir.join("feedback.sqlite"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let store = SqliteStore::open(&path)?;
            feedback_command(&store, command)
        }
        Command::Serve { port } => serve(config, port),
        Command::TrainSr { out, steps, lr, batch, seed } => train_sr(&out, steps, lr, batch, seed),
        Command::SynthCorpus { out, seed, quirky } => {
            let spec = if quirky { synth::SyntheticSpec::quirky() } else { synth::SyntheticSpec::default() };
            let planted = synth::generate(&spec, seed);
            let mut w = BufWriter::new(File::create(&out)?);
            for r in &planted.records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            println!("{}", serde_json::json!({ "output": out, "records": planted.records.len(), "roles": planted.roles }));
            Ok(())
        }
    }
}

fn needs_embedding(records: &[trends::FeedRecord]) -> bool {
    records.iter().any(|r| r.embedding.is_none())
}

fn ingest(config: &Config, input: &Path, out: &Path) -> Result<()> {
    require(input)?;
    let records = trends::parse_jsonl(BufReader::new(File::open(input)?))?;
    let base = input.parent().unwrap_or(Path::new("."));
    let net = needs_embedding(&records).then(|| load_feature_net(config)).transpose()?;
    let (corpus, report) = trends::ingest(
        records,
        net.as_ref().map(|n| n as &dyn fastfashion_core::Embedder),
        |img| ImageBuffer::load(base.join(img)),
    )?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf)?;
    std::fs::write(out, &buf).with_context(|| format!("writing {}", out.display()))?;
    let info = CorpusInfo {
        corpus_id: digest(&buf),
        records: corpus.len(),
        dim: corpus.dim(),
        skipped: report.skipped,
    };
    println!("{}", serde_json::to_string(&info)?);
    Ok(())
}

fn generate(config: &Config, args: GenerateArgs) -> Result<()> {
    require(&args.content)?;
    require(&args.style)?;
    let net = load_feature_net(config)?;
    let noise = match args.noise {
        NoiseArg::Uniform => NoiseSpec::uniform(args.seed),
        NoiseArg::Sinusoidal => NoiseSpec::sinusoidal(args.cycles, args.seed),
    };
    let params = TransferParams {
        alpha: args.alpha,
        beta: args.beta,
        iterations: args.iterations,
        noise,
        init: if args.from_content { SeedInit::Content } else { SeedInit::Noise },
        working_size: args.size,
        ..TransferParams::default()
    };
    let problems = params.problems(&net);
    if !problems.is_empty() {
        let fields: Vec<String> = problems.iter().map(|(f, m)| format!("{f}: {m}")).collect();
        bail!(fastfashion_core::Error::Argument(fields.join("; ")));
    }
    let transfer_config = TransferConfig {
        content: ImageBuffer::load(&args.content)?,
        style: ImageBuffer::load(&args.style)?,
        params,
    };
    let stdout = io::stdout();
    let mut lines = stdout.lock();
    writeln!(lines, "iteration,total,content,style")?;
    let result = transfer::run_transfer_observed(&net, &transfer_config, |e| {
        let _ = writeln!(lines, "{},{},{},{}", e.iteration, e.total, e.content, e.style);
        let _ = lines.flush();
    })?;
    result.image.save_png(&args.out)?;
    transfer::write_trace_csv(BufWriter::new(File::create(&args.trace)?), &result.loss_trace)?;
    log::info!("wrote {} and {}", args.out.display(), args.trace.display());
    Ok(())
}

fn feedback_command(store: &SqliteStore, command: FeedbackCommand) -> Result<()> {
    match command {
        FeedbackCommand::Export { ratings, summary } => {
            feedback::export_ratings_csv(store, BufWriter::new(File::create(&ratings)?))?;
            if let Some(path) = summary {
                feedback::export_summary_csv(store, BufWriter::new(File::create(&path)?))?;
            }
        }
        FeedbackCommand::Design { id, image, line, job } => {
            let design = DesignRecord {
                design_id: id,
                image_uri: image,
                gender_line: line,
                provenance: job.map_or(Provenance::External, |job_id| Provenance::Job { job_id }),
            };
            store.register_design(&design)?;
            println!("{}", serde_json::to_string(&design)?);
        }
        FeedbackCommand::Rate { rater, kind, design, question, score, comment } => {
            let rating = Rating { rater_id: rater, rater_kind: kind, design_id: design, question, score, comment };
            rating.validate()?;
            store.submit_rating(&rating)?;
            println!("{}", serde_json::to_string(&rating)?);
        }
        FeedbackCommand::Table { kind } => {
            let designs = feedback::summaries(store, kind)?;
            let mut table = feedback::SegregationTable::default();
            designs.iter().for_each(|d| table.add(d.cell));
            println!("{}", serde_json::json!({ "rater_kind": kind, "table": table, "designs": designs }));
        }
        FeedbackCommand::Fixture => {
            let panel = fixture::designer_panel();
            panel.load_into(store)?;
            println!(
                "{}",
                serde_json::json!({ "designs": panel.designs.len(), "ratings": panel.ratings.len(), "expected": panel.expected })
            );
        }
    }
    Ok(())
}

fn serve(mut config: Config, port: Option<u16>) -> Result<()> {
    if let Some(p) = port {
        config.server.port = p;
    }
    let service = Arc::new(Service::from_config(&config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.server.port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on http://{addr}/v1 with {} workers", service.queue().capacity());
        axum::serve(listener, api::router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn train_sr(out: &Path, steps: usize, lr: f64, batch: usize, seed: u64) -> Result<()> {
    let corpus = train::synthetic_corpus(64, 128, 1);
    let held_out = train::synthetic_corpus(20, 128, 999);
    let cfg = train::TrainConfig { steps, batch, learning_rate: lr, seed, ..train::TrainConfig::default() };
    let mut model = SRModel::identity(seed);
    let mut window = 0.0;
    train::train(&mut model, &corpus, &cfg, |step, loss| {
        window += loss;
        if (step + 1) % 100 == 0 {
            log::info!("step {} loss {:.6}", step + 1, window / 100.0);
            window = 0.0;
        }
    })?;
    let eval = train::evaluate(&model, &held_out, cfg.factor)?;
    model.save(out)?;
    println!(
        "{}",
        serde_json::json!({
            "output": out,
            "bicubic_psnr": eval.bicubic_psnr,
            "model_psnr": eval.model_psnr,
            "gain_db": eval.gain(),
        })
    );
    Ok(())
}

