//! Command-line front end. Links the explainers directly; no service needed.

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context as _;
use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ctxplain_core::retrieval::{retrieve_context, Bm25Params, Index};
use ctxplain_core::{ContextSequence, CounterfactualKind, ExplainError, MockOracle, Query, RelevanceMethod};
use serde::Serialize;

use crate::analysis::{
    run_analysis, AnalysisError, AnalysisRequest, CounterfactualRequest, FailureClass, InsightFamily, InsightRequest,
    ResultPayload,
};
use crate::config::Config;
use crate::corpus::{index_file, load_index, save_index};
use crate::demo::{self, Demo};
use crate::gateway::{Gateway, Limiter};
use crate::registry::{OracleSpec, Registry};
use crate::report;
use crate::service::{compute_baselines, AppState, Baselines, DEFAULT_ORACLE_ID};
use crate::store::Store;

#[derive(Parser, Debug)]
#[command(name = "ctxplain", version, about = "Explain answers of retrieval-augmented question answering by perturbing the retrieved context")]
struct Cli {
    /// TOML configuration file; CTXPLAIN_* environment variables override it.
    #[arg(long, global = true, env = "CTXPLAIN_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index_path: Option<PathBuf>,
    },
    /// Retrieve sources for a question and ask the oracle.
    Ask(Common),
    /// Answer insights (--family) or a counterfactual (--kind).
    Explain(ExplainArgs),
    /// Insights over a seeded random sample of perturbations.
    Sample(SampleArgs),
    /// Orders that best align relevant sources with attentive positions.
    Optimal(OptimalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Combination,
    Permutation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    TopDown,
    BottomUp,
    Reordering,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scoring {
    Retrieval,
    Attention,
}

impl From<Scoring> for RelevanceMethod {
    fn from(s: Scoring) -> Self {
        match s {
            Scoring::Retrieval => RelevanceMethod::RetrievalScore,
            Scoring::Attention => RelevanceMethod::AttentionSalience,
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// The question; defaults to the demo's question with --demo.
    question: Option<String>,
    /// Built-in scenario supplying corpus, question and mock oracle
    /// (big-three, us-open, timeline).
    #[arg(long)]
    demo: Option<String>,
    /// JSONL corpus indexed on the fly.
    #[arg(long, conflicts_with = "index_path")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    index_path: Option<PathBuf>,
    /// Mock oracle fixture (JSON).
    #[arg(long, conflicts_with = "oracle_url")]
    mock: Option<PathBuf>,
    /// Chat-completion endpoint URL.
    #[arg(long)]
    oracle_url: Option<String>,
    #[arg(long)]
    oracle_model: Option<String>,
    #[arg(long)]
    api_key: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    max_context_chars: Option<usize>,
    /// Evaluation cache file; in-memory when unset.
    #[arg(long)]
    store_path: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    combination_k_limit: Option<usize>,
    #[arg(long)]
    permutation_k_limit: Option<usize>,
    /// Output format; table on a terminal, json otherwise.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").required(true).args(["family", "kind"])))]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Evaluate every perturbation (the default for --family).
    #[arg(long, conflicts_with = "sample_size")]
    exhaustive: bool,
    #[arg(long, short = 's')]
    sample_size: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_perturbations: Option<u64>,
    /// Only accept counterfactuals producing this answer.
    #[arg(long)]
    target_answer: Option<String>,
    #[arg(long, value_enum, default_value = "retrieval")]
    scoring: Scoring,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "permutation")]
    family: Family,
    #[arg(long, short = 's')]
    sample_size: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_perturbations: Option<u64>,
}

#[derive(Args, Debug)]
struct OptimalArgs {
    #[command(flatten)]
    common: Common,
    /// Number of ranked orders.
    #[arg(short = 's', long = "count", default_value_t = 3)]
    s: usize,
    #[arg(long, value_enum, default_value = "retrieval")]
    scoring: Scoring,
    /// Comma-separated position weights instead of the V-shaped preset.
    #[arg(long, value_delimiter = ',')]
    profile: Option<Vec<f64>>,
    /// Skip asking the oracle about each order.
    #[arg(long)]
    no_evaluate: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    /// Preload a built-in scenario's corpus and mock oracle.
    #[arg(long)]
    demo: Option<String>,
    #[arg(long)]
    index_path: Option<PathBuf>,
    #[arg(long)]
    store_path: Option<PathBuf>,
    #[arg(long)]
    oracle_url: Option<String>,
    #[arg(long)]
    oracle_model: Option<String>,
    #[arg(long)]
    api_key: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
}

enum Failure {
    Usage(String),
    Analysis(AnalysisError),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::Analysis(e)
    }
}

impl From<ExplainError> for Failure {
    fn from(e: ExplainError) -> Self {
        Failure::Analysis(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();

    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            let e = Cli::command().error(ErrorKind::MissingRequiredArgument, msg);
            let _ = e.print();
            ExitCode::from(2)
        }
        Err(Failure::Analysis(e)) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(match e.class() {
                FailureClass::Oracle => 3,
                FailureClass::Limit => 4,
                FailureClass::Input => 1,
            })
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = Config::load(cli.config.as_deref()).map_err(anyhow::Error::from)?;
    match cli.command {
        Command::Index { corpus, index_path } => {
            let path = index_path
                .or(config.index_path.clone())
                .ok_or_else(|| Failure::Usage("index needs --index-path (or index_path in the config)".into()))?;
            let index = index_file(&corpus).map_err(anyhow::Error::from)?;
            save_index(&index, &path).map_err(anyhow::Error::from)?;
            println!("indexed {} documents", index.len());
            Ok(())
        }
        Command::Ask(common) => {
            let run = Prepared::new(&common, config)?;
            let baselines = compute_baselines(&run.context, run.gateway.as_ref()).map_err(AnalysisError::from)?;
            let report = AskReport {
                query: run.context.query().clone(),
                context: run.context.clone(),
                baselines,
            };
            run.emit(&report, || report::render_context(&report.context, Some(&report.baselines)))
        }
        Command::Explain(args) => {
            let request = match (args.family, args.kind) {
                (Some(family), _) => {
                    let mut r = InsightRequest::new(match family {
                        Family::Combination => InsightFamily::Combination,
                        Family::Permutation => InsightFamily::Permutation,
                    });
                    r.sample_size = if args.exhaustive { None } else { args.sample_size };
                    r.seed = args.seed;
                    r.scoring = args.scoring.into();
                    r.max_perturbations = args.max_perturbations.unwrap_or(config.max_perturbations);
                    AnalysisRequest::Insight(r)
                }
                (None, Some(kind)) => {
                    let mut r = CounterfactualRequest::new(match kind {
                        Kind::TopDown => CounterfactualKind::TopDownRemoval,
                        Kind::BottomUp => CounterfactualKind::BottomUpRetention,
                        Kind::Reordering => CounterfactualKind::Reordering,
                    });
                    r.target_answer = args.target_answer;
                    r.seed = args.seed;
                    r.scoring = args.scoring.into();
                    r.max_perturbations = args.max_perturbations.unwrap_or(config.max_perturbations);
                    AnalysisRequest::Counterfactual(r)
                }
                (None, None) => unreachable!("clap enforces the mode group"),
            };
            Prepared::new(&args.common, config)?.analyze(&request)
        }
        Command::Sample(args) => {
            let mut r = InsightRequest::new(match args.family {
                Family::Combination => InsightFamily::Combination,
                Family::Permutation => InsightFamily::Permutation,
            });
            r.sample_size = Some(args.sample_size);
            r.seed = args.seed;
            r.max_perturbations = args.max_perturbations.unwrap_or(config.max_perturbations);
            Prepared::new(&args.common, config)?.analyze(&AnalysisRequest::Insight(r))
        }
        Command::Optimal(args) => {
            let mut r = InsightRequest::new(InsightFamily::OptimalPermutation);
            r.s = args.s;
            r.scoring = args.scoring.into();
            r.profile = args.profile;
            r.evaluate = !args.no_evaluate;
            r.max_perturbations = config.max_perturbations.max(args.s as u64);
            Prepared::new(&args.common, config)?.analyze(&AnalysisRequest::Insight(r))
        }
        Command::Serve(args) => serve(args, config),
    }
}

#[derive(Serialize)]
struct AskReport {
    query: Query,
    context: ContextSequence,
    baselines: Baselines,
}

/// Retrieval done and oracle resolved; ready to analyze.
struct Prepared {
    context: ContextSequence,
    gateway: Arc<Gateway>,
    config: Config,
    format: Format,
}

impl Prepared {
    fn new(common: &Common, mut config: Config) -> CliResult<Self> {
        if let Some(v) = &common.oracle_model {
            config.oracle_model = v.clone();
        }
        if let Some(v) = &common.api_key {
            config.api_key = Some(v.clone());
        }
        if let Some(v) = common.timeout_secs {
            config.timeout_secs = v;
        }
        if let Some(v) = common.max_context_chars {
            config.max_context_chars = v;
        }
        if let Some(v) = common.concurrency {
            config.concurrency = v;
        }
        if let Some(v) = common.combination_k_limit {
            config.combination_k_limit = v;
        }
        if let Some(v) = common.permutation_k_limit {
            config.permutation_k_limit = v;
        }
        if let Some(v) = &common.store_path {
            config.store_path = Some(v.clone());
        }
        config.validate().map_err(anyhow::Error::from)?;

        let demo = match &common.demo {
            Some(name) => Some(Demo::by_name(name).ok_or_else(|| {
                let names: Vec<&str> = demo::ALL.iter().map(|d| d.name).collect();
                Failure::Usage(format!("unknown demo {name:?}; choose one of {}", names.join(", ")))
            })?),
            None => None,
        };

        let (oracle_id, spec) = if let Some(path) = &common.mock {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let fixture: MockOracle =
                serde_json::from_str(&text).with_context(|| format!("parsing mock fixture {}", path.display()))?;
            (fixture.id.clone(), OracleSpec::Mock { fixture })
        } else if let Some(url) = common.oracle_url.clone().or(config.oracle_url.clone()) {
            config.oracle_url = Some(url);
            (DEFAULT_ORACLE_ID.to_string(), OracleSpec::Http(config.http_oracle().expect("url set")))
        } else if let Some(d) = demo {
            (d.name.to_string(), OracleSpec::Mock { fixture: d.oracle() })
        } else {
            return Err(Failure::Usage(
                "no oracle configured: pass --mock FILE, --oracle-url URL or --demo NAME".into(),
            ));
        };

        let index: Index = if let Some(path) = &common.corpus {
            index_file(path).map_err(anyhow::Error::from)?
        } else if let Some(path) = common.index_path.clone().or(config.index_path.clone()) {
            load_index(&path).map_err(anyhow::Error::from)?
        } else if let Some(d) = demo {
            d.index().map_err(anyhow::Error::from)?
        } else {
            return Err(Failure::Usage(
                "no corpus: pass --corpus FILE, --index-path FILE or --demo NAME".into(),
            ));
        };

        let question = common
            .question
            .clone()
            .or(demo.map(|d| d.question.to_string()))
            .ok_or_else(|| Failure::Usage("missing QUESTION".into()))?;
        let corpus_from_demo = common.corpus.is_none() && common.index_path.is_none() && config.index_path.is_none();
        let top_k = common
            .top_k
            .or(demo.filter(|_| corpus_from_demo).map(|d| d.top_k))
            .unwrap_or(config.top_k);

        let store = match &config.store_path {
            Some(p) => Store::open(p).map_err(anyhow::Error::from)?,
            None => Store::in_memory().map_err(anyhow::Error::from)?,
        };
        let registry = Registry::new(store, Arc::new(Limiter::new(config.concurrency)));
        let gateway = registry.register_transient(&oracle_id, spec);

        let query = Query::new(question).map_err(ExplainError::from)?;
        let params = Bm25Params::with_top_k(top_k);
        params.validate().map_err(ExplainError::from)?;
        let context = retrieve_context(&index, &query, &params)?;

        let format = common.format.unwrap_or(if std::io::stdout().is_terminal() {
            Format::Table
        } else {
            Format::Json
        });
        Ok(Prepared {
            context,
            gateway,
            config,
            format,
        })
    }

    fn analyze(&self, request: &AnalysisRequest) -> CliResult<()> {
        let payload = run_analysis(&self.context, self.gateway.as_ref(), request, &self.config.limits())?;
        self.emit(&payload, || render_with_context(&self.context, &payload))
    }

    fn emit<T: Serialize>(&self, value: &T, table: impl FnOnce() -> String) -> CliResult<()> {
        let text = match self.format {
            Format::Json => serde_json::to_string_pretty(value).map_err(anyhow::Error::from)? + "\n",
            Format::Table => table(),
        };
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes()).map_err(anyhow::Error::from)?;
        Ok(())
    }
}

fn render_with_context(context: &ContextSequence, payload: &ResultPayload) -> String {
    format!("{}\n{}", report::render_context(context, None), report::render_payload(payload))
}

fn serve(args: ServeArgs, mut config: Config) -> CliResult<()> {
    if let Some(v) = args.bind {
        config.bind = v;
    }
    if let Some(v) = args.index_path {
        config.index_path = Some(v);
    }
    if let Some(v) = args.store_path {
        config.store_path = Some(v);
    }
    if let Some(v) = args.oracle_url {
        config.oracle_url = Some(v);
    }
    if let Some(v) = args.oracle_model {
        config.oracle_model = v;
    }
    if let Some(v) = args.api_key {
        config.api_key = Some(v);
    }
    if let Some(v) = args.concurrency {
        config.concurrency = v;
    }
    config.validate().map_err(anyhow::Error::from)?;
    let demo = match &args.demo {
        Some(name) => Some(Demo::by_name(name).ok_or_else(|| Failure::Usage(format!("unknown demo {name:?}")))?),
        None => None,
    };
    let bind = config.bind.clone();
    let state = AppState::open(config)?;
    if let Some(d) = demo {
        state.load_demo(d)?;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(anyhow::Error::from)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        eprintln!("listening on {}", listener.local_addr()?);
        crate::service::serve(listener, Arc::new(state), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok::<(), anyhow::Error>(())
    })?;
    Ok(())
}
