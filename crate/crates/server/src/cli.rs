//! Command-line interface.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commentlens::analytics::{
    aggregate_entities, correlation_matrix, daily_series, user_influence, write_correlation_csv,
    write_entities_csv, write_entity_sites_csv, write_series_ndjson, write_stats_csv,
    write_users_csv, Averaging, DateRange,
};
use commentlens::config::PipelineConfig;
use commentlens::corpus::{ingest_stream, Bucket, CorpusStore, RecordKind};
use commentlens::nel::{KnowledgeBase, Page};
use commentlens::ner::{evaluate_tagger, read_conll, tag_accuracy, train_perceptron, Gazetteers};
use commentlens::pipeline::{run_pipeline, AnnotationSet, Models, RunOptions};
use commentlens::query::{self, parse_range, Snapshot};
use commentlens::sentiment::{
    evaluate, read_labeled_ndjson, train, SentimentModel, TrainConfig, Vocab, DEFAULT_WIDTHS,
};

use crate::api::{router, AppState, Writer};

#[derive(Debug, Parser)]
#[command(name = "commentlens", version, about = "Entity-centric analytics over news comments")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append NDJSON records to the store.
    Ingest {
        /// articles, comments or sites
        kind: RecordKind,
        /// NDJSON file, or `-` for stdin.
        input: PathBuf,
    },
    /// Build a knowledge base from a pages NDJSON file.
    BuildKb {
        pages: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the entity tagger on CoNLL data.
    TrainNer {
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long)]
        gazetteers: Option<PathBuf>,
        /// Held-out CoNLL file for span-level evaluation.
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Train the sentiment classifier on `{"text","label"}` NDJSON.
    TrainSentiment(TrainSentimentArgs),
    /// Tag, link and score everything in the store.
    Run,
    /// Serve the HTTP API.
    Serve {
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Answer one API query from the command line.
    Query {
        #[command(subcommand)]
        query: QueryCommand,
    },
    /// Write the store as NDJSON and all aggregate tables as CSV.
    Export {
        #[arg(long)]
        out: PathBuf,
        /// Also write this entity's daily series as NDJSON.
        #[arg(long)]
        series: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct TrainSentimentArgs {
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub maps: usize,
    #[arg(long, default_value_t = 1)]
    pub min_frequency: usize,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
    /// Pretrained `token v1 ... vd` embeddings.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum QueryCommand {
    Search {
        q: String,
    },
    Bubbles {
        key: String,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    Timeline {
        key: String,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
    },
    Pdf {
        key: String,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    Influencers {
        #[arg(long, default_value = "comments_count")]
        metric: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    Stats {
        #[arg(long, default_value = "day")]
        bucket: Bucket,
    },
}

fn print_json<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdin().lock()));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn open_store(cfg: &PipelineConfig) -> Result<CorpusStore> {
    let store = CorpusStore::open(&cfg.store_dir, cfg.date_bounds()?)
        .with_context(|| format!("opening store {}", cfg.store_dir.display()))?;
    Ok(store)
}

fn load_snapshot(cfg: &PipelineConfig) -> Result<Snapshot> {
    let store = open_store(cfg)?;
    let annotations = AnnotationSet::load(&cfg.store_dir)?.unwrap_or_default();
    let kb = match &cfg.kb_dir {
        Some(p) => KnowledgeBase::load_dir(p)?,
        None => KnowledgeBase::default(),
    };
    Ok(Snapshot::new(Arc::new(store), Arc::new(annotations), Arc::new(kb), cfg.smoothing))
}

/// Run a parsed command, writing results to `out`.
pub fn execute(cli: Cli, out: &mut impl Write) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Ingest { kind, input } => {
            let mut store = open_store(&cfg)?;
            let report = ingest_stream(open_input(input)?, *kind, &mut store)?;
            print_json(out, &report)
        }
        Command::BuildKb { pages, out: dir } => {
            let mut list = Vec::new();
            for (i, line) in open_input(pages)?.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let page: Page = serde_json::from_str(&line).with_context(|| format!("pages line {}", i + 1))?;
                list.push(page);
            }
            let kb = KnowledgeBase::build_from_pages(&list)?;
            kb.save_dir(dir)?;
            print_json(
                out,
                &serde_json::json!({
                    "pages": list.len(),
                    "entities": kb.entities().count(),
                    "anchors": kb.anchors().count(),
                }),
            )
        }
        Command::TrainNer {
            train,
            out: path,
            epochs,
            gazetteers,
            dev,
        } => {
            let data = read_conll(open_input(train)?)?;
            let gaz = match gazetteers {
                Some(d) => Gazetteers::load_dir(d)?,
                None => Gazetteers::new(),
            };
            let model = train_perceptron(&data, *epochs, cli.seed, gaz)?;
            model.save(BufWriter::new(File::create(path)?))?;
            let mut summary = serde_json::json!({
                "sentences": data.len(),
                "features": model.feature_count(),
                "train_tag_accuracy": tag_accuracy(&model, &data),
            });
            if let Some(d) = dev {
                let dev = read_conll(open_input(d)?)?;
                summary["dev"] = serde_json::to_value(evaluate_tagger(&model, &dev))?;
            }
            print_json(out, &summary)
        }
        Command::TrainSentiment(a) => {
            let data = read_labeled_ndjson(open_input(&a.train)?)?;
            let vocab = Vocab::build(data.iter().map(|d| d.text.as_str()), a.min_frequency);
            let mut model = SentimentModel::new(vocab, a.dim, a.maps, &DEFAULT_WIDTHS, cli.seed)?;
            if let Some(e) = &a.embeddings {
                let n = model.load_pretrained(open_input(e)?)?;
                tracing::info!(rows = n, "loaded pretrained embeddings");
            }
            let config = TrainConfig {
                learning_rate: a.lr,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: cli.seed,
                max_tokens: a.max_tokens,
            };
            let losses = train(&mut model, &data, &config)?;
            model.save(BufWriter::new(File::create(&a.out)?))?;
            let mut summary = serde_json::json!({
                "examples": data.len(),
                "vocabulary": model.vocab().len(),
                "epoch_losses": losses,
                "train": evaluate(&model, &data)?,
            });
            if let Some(d) = &a.dev {
                let dev = read_labeled_ndjson(open_input(d)?)?;
                summary["dev"] = serde_json::to_value(evaluate(&model, &dev)?)?;
            }
            print_json(out, &summary)
        }
        Command::Run => {
            let store = open_store(&cfg)?;
            let models = Models::load(&cfg)?;
            let prev = AnnotationSet::load(&cfg.store_dir)?;
            let set = run_pipeline(&store, &models, &RunOptions::from(&cfg), prev.as_ref());
            set.save(&cfg.store_dir)?;
            print_json(out, &set.report)
        }
        Command::Serve { listen } => {
            let addr: SocketAddr = listen
                .as_deref()
                .unwrap_or(&cfg.listen)
                .parse()
                .context("invalid listen address")?;
            let writer = Writer {
                store: Arc::new(open_store(&cfg)?),
                annotations: Arc::new(AnnotationSet::load(&cfg.store_dir)?.unwrap_or_default()),
                models: Some(Models::load(&cfg)?),
                options: RunOptions::from(&cfg),
                annotation_dir: Some(cfg.store_dir.clone()),
                smoothing: cfg.smoothing,
            };
            let app = router(AppState::new(writer));
            tokio::runtime::Runtime::new()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, "listening");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok(())
            })
        }
        Command::Query { query: q } => {
            let snap = load_snapshot(&cfg)?;
            match q {
                QueryCommand::Search { q } => print_json(out, &query::search(&snap, q)?),
                QueryCommand::Bubbles { key, from, to } => {
                    let r = parse_range(from.as_deref(), to.as_deref())?;
                    print_json(out, &query::bubbles(&snap, key, r)?)
                }
                QueryCommand::Timeline {
                    key,
                    from,
                    to,
                    window,
                    order,
                } => {
                    let r = parse_range(from.as_deref(), to.as_deref())?;
                    print_json(out, &query::timeline(&snap, key, r, *window, *order)?)
                }
                QueryCommand::Pdf { key, from, to } => {
                    let r = parse_range(from.as_deref(), to.as_deref())?;
                    print_json(out, &query::pdf(&snap, key, r)?)
                }
                QueryCommand::Influencers { metric, k } => print_json(out, &query::influencers(&snap, metric, *k)?),
                QueryCommand::Stats { bucket } => print_json(out, &query::stats(&snap, *bucket)),
            }
        }
        Command::Export { out: dir, series } => {
            let snap = load_snapshot(&cfg)?;
            export(&snap, dir, series.as_deref())?;
            writeln!(out, "exported to {}", dir.display())?;
            Ok(())
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Store segments plus `entities.csv`, `entity_sites.csv`, `users.csv`,
/// `correlation.csv`, `stats_day.csv` and `stats_month.csv`.
pub fn export(snap: &Snapshot, dir: &Path, series: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir)?;
    snap.store.export_dir(dir)?;
    let ann = &snap.annotations.annotations;
    let aggs = aggregate_entities(&snap.store, ann, DateRange::all(), Averaging::Comment);
    write_entities_csv(&aggs, create(dir, "entities.csv")?)?;
    write_entity_sites_csv(&aggs, create(dir, "entity_sites.csv")?)?;
    let users = user_influence(&snap.store, ann, 0).users;
    write_users_csv(&users, create(dir, "users.csv")?)?;
    if let Ok(m) = correlation_matrix(&users) {
        write_correlation_csv(&m, create(dir, "correlation.csv")?)?;
    }
    write_stats_csv(&snap.store.corpus_stats(Bucket::Day), create(dir, "stats_day.csv")?)?;
    write_stats_csv(&snap.store.corpus_stats(Bucket::Month), create(dir, "stats_month.csv")?)?;
    if let Some(key) = series {
        let ts = daily_series(&snap.store, ann, key, DateRange::all())?;
        let safe: String = key
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect();
        write_series_ndjson(&ts, create(dir, &format!("series_{safe}.ndjson"))?)?;
    }
    Ok(())
}
