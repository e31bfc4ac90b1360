use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use oir_core::bench::{run_and_write, BenchConfig, DatasetSpec, SplitConfig, DEFAULT_RATIOS};
use oir_core::bench::load_dataset;
use oir_core::detection::{BoundaryMode, DetectorConfig};
use oir_core::discovery::{KChoice, Method};
use oir_core::embedding::{load_embeddings, read_utterances, write_utterances, EmbeddingMatrix, Utterance};
use oir_core::normalization::SynonymLexicon;
use oir_core::pipeline::{records_to_csv, IntentModel, Labeler, PipelineConfig, Source};
use oir_core::synth::{synthetic_corpus, write_dataset_csv};
use oir_service::http::{serve, Service};
use oir_service::job::{execute, JobConfig};
use oir_service::query::{query_results, ResultQuery};
use oir_service::Store;

#[derive(Parser)]
#[command(name = "oir", version, about = "Open intent recognition: detect known intents, discover new ones")]
struct Cli {
    /// Job store directory.
    #[arg(long, global = true, env = "OIR_DATA_DIR", default_value = "oir-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detection model from labeled utterances.
    Fit(FitArgs),
    /// Ingest a batch into the store and run the pipeline on it.
    Run(RunArgs),
    /// Query the results of a completed job.
    Query(QueryArgs),
    /// Run the open-split benchmark on a labeled CSV.
    Bench(BenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write the synthetic six-intent corpus.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct FitArgs {
    /// `text,label` CSV, or utterance JSONL with a `label` field.
    #[arg(long)]
    train: PathBuf,
    /// Embedding JSONL covering every training id; TF-IDF is used otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Statistic)]
    mode: Mode,
    /// Width of the statistic boundary in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    /// Whiten with the within-class scatter before fitting boundaries.
    #[arg(long)]
    project: bool,
    #[arg(long, default_value = "text")]
    text_column: String,
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Statistic,
    Balanced,
}

impl From<Mode> for BoundaryMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Statistic => BoundaryMode::Statistic,
            Mode::Balanced => BoundaryMode::Balanced,
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Number of clusters for discovery, or `auto`.
    #[arg(long, default_value = "auto")]
    k: KChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "kmeans")]
    method: Method,
    /// Fewer UNKNOWN utterances than this are left unclassified.
    #[arg(long, default_value_t = 10)]
    min_discover: usize,
    /// `term<TAB>canonical` synonym lexicon.
    #[arg(long)]
    synonyms: Option<PathBuf>,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.clustering.k = self.k;
        c.clustering.seed = self.seed;
        c.clustering.method = self.method;
        c.min_discover = self.min_discover;
        c
    }

    fn labeler(&self) -> Result<Labeler> {
        let mut l = Labeler::bundled();
        if let Some(p) = &self.synonyms {
            l.synonyms = SynonymLexicon::load(p).with_context(|| format!("loading {}", p.display()))?;
        }
        Ok(l)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Utterance JSONL.
    #[arg(long)]
    batch: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    job: String,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    source: Option<Source>,
    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    offset: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    /// `text,label` CSV.
    #[arg(long)]
    dataset: PathBuf,
    /// Fraction of classes treated as known; sweeps 0.25, 0.5, 0.75 when omitted.
    #[arg(long)]
    known_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Statistic)]
    mode: Mode,
    #[arg(long, default_value = "auto")]
    k: KChoice,
    #[arg(long, default_value = "kmeans")]
    method: Method,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "OIR_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Model file; defaults to `model.json` in the data directory.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    per_intent: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only these intents (comma-separated names).
    #[arg(long, value_delimiter = ',')]
    intents: Vec<String>,
    /// Write utterance JSONL instead of CSV.
    #[arg(long)]
    jsonl: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Run(a) => run(&cli.data_dir, a),
        Command::Query(a) => query(&cli.data_dir, a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => serve_cmd(&cli.data_dir, a),
        Command::GenSynthetic(a) => gen_synthetic(a),
    }
}

fn read_jsonl_file(path: &Path) -> Result<Vec<Utterance>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_utterances(f).with_context(|| format!("reading {}", path.display()))
}

fn load_emb(path: Option<&Path>) -> Result<Option<EmbeddingMatrix>> {
    path.map(|p| load_embeddings(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn fit(a: FitArgs) -> Result<()> {
    let train = if a.train.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl_file(&a.train)?
    } else {
        let mut spec = DatasetSpec::csv(&a.train);
        spec.text_column = a.text_column;
        spec.label_column = a.label_column;
        load_dataset(&spec).with_context(|| format!("reading {}", a.train.display()))?
    };
    let embeddings = load_emb(a.embeddings.as_deref())?;
    let mut config = DetectorConfig {
        mode: a.mode.into(),
        project: a.project,
        ..Default::default()
    };
    config.params.lambda = a.lambda;
    let model = IntentModel::train(&train, embeddings.as_ref(), &config)?;
    if let Some(dir) = a.model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save(&a.model_out)?;
    let d = &model.detector;
    println!("model written to {}", a.model_out.display());
    for (label, r) in d.labels().iter().zip(d.radii()) {
        println!("  {label}\tradius {r:.4}");
    }
    Ok(())
}

fn run(data_dir: &Path, a: RunArgs) -> Result<()> {
    let batch = read_jsonl_file(&a.batch)?;
    let model = IntentModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let embeddings = load_emb(a.embeddings.as_deref())?;
    let labeler = a.pipeline.labeler()?;
    let store = Store::open(data_dir)?;
    let config = JobConfig {
        model: a.model.display().to_string(),
        embeddings: a.embeddings.as_ref().map(|p| p.display().to_string()),
        pipeline: a.pipeline.config(),
    };
    let job = store.create(batch, config)?;
    let job = execute(&store, &job.id, &model, embeddings.as_ref(), &labeler)?;
    println!("{}", serde_json::to_string_pretty(&job)?);
    if let Some(e) = &job.error {
        bail!("job {} failed: {e}", job.id);
    }
    Ok(())
}

fn query(data_dir: &Path, a: QueryArgs) -> Result<()> {
    let store = Store::open(data_dir)?;
    let out = store.output(&a.job)?;
    let q = ResultQuery {
        label: a.label,
        source: a.source,
        min_confidence: a.min_confidence,
        limit: a.limit,
        offset: a.offset,
    };
    let page = query_results(&a.job, &out.records, &q)?;
    let mut stdout = std::io::stdout().lock();
    match a.format {
        Format::Json => writeln!(stdout, "{}", serde_json::to_string_pretty(&page)?)?,
        Format::Csv => write!(stdout, "{}", records_to_csv(&page.records))?,
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let spec = DatasetSpec::csv(&a.dataset);
    let mut config = BenchConfig::default();
    config.detector.mode = a.mode.into();
    config.clustering.k = a.k;
    config.clustering.method = a.method;
    config.clustering.seed = a.seed;
    std::fs::create_dir_all(&a.out_dir)?;
    let ratios = a.known_ratio.map_or_else(|| DEFAULT_RATIOS.to_vec(), |r| vec![r]);
    for r in ratios {
        let (report, path) = run_and_write(&spec, &SplitConfig::new(r, a.seed), &config, &a.out_dir)?;
        print!("{}", report.table());
        println!("report written to {}\n", path.display());
    }
    Ok(())
}

fn serve_cmd(data_dir: &Path, a: ServeArgs) -> Result<()> {
    let model_path = a.model.clone().unwrap_or_else(|| data_dir.join("model.json"));
    let model = if model_path.exists() {
        Some(Arc::new(
            IntentModel::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?,
        ))
    } else {
        eprintln!("no model at {}; batch submission is disabled", model_path.display());
        None
    };
    let embeddings = load_emb(a.embeddings.as_deref())?
        .map(|m| (a.embeddings.as_ref().expect("present").display().to_string(), Arc::new(m)));
    let svc = Arc::new(Service {
        store: Arc::new(Store::open(data_dir)?),
        model,
        model_path: model_path.display().to_string(),
        embeddings,
        labeler: Arc::new(a.pipeline.labeler()?),
        defaults: a.pipeline.config(),
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(SocketAddr::new(a.host, a.port)).await?;
        let resumed = svc.resume()?;
        if resumed > 0 {
            eprintln!("resumed {resumed} queued job(s)");
        }
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        serve(listener, svc).await?;
        Ok(())
    })
}

fn gen_synthetic(a: GenArgs) -> Result<()> {
    let mut rows = synthetic_corpus(a.per_intent, a.seed);
    if !a.intents.is_empty() {
        rows.retain(|u| u.gold_label.as_ref().is_some_and(|l| a.intents.contains(l)));
        if rows.is_empty() {
            bail!("no synthetic intent matches {:?}", a.intents);
        }
    }
    let f = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    if a.jsonl {
        write_utterances(&rows, f)?;
    } else {
        write_dataset_csv(&rows, f)?;
    }
    println!("{} utterances written to {}", rows.len(), a.out.display());
    Ok(())
}
