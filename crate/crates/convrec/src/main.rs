use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use serde_json::json;

use convrec_core::corpus::{summary_sidecar_path, synthetic, Corpus, Embedder};
use convrec_core::llm::Gateway;
use convrec_core::retrieval::BuiltinSearch;
use convrec_core::service::{build_backend, load_corpus, Service, ServiceConfig};
use convrec_core::simulator::{
    self, default_ensemble, encode_retrieval, ensemble_entropy, ensemble_match, read_examples,
    retrieval_context, run_sessions, train_discriminator, write_examples, ControlSpec, CorpusTag,
    CrsClient, DiscriminatorConfig, HttpCrs, RankingSpec, RetrievalSpec, RunConfig, SentimentSpec,
    SessionCorpus, TrainingExample, Weighted,
};
use convrec_core::trainer::{
    bandit_step, candidate_queries, hit_reward, mean_loss, recall_at_k, train_dual_encoder,
    BanditPolicy, TowerParams, TrainConfig, DEFAULT_TAU,
};

#[derive(Parser)]
#[command(
    name = "convrec",
    version,
    about = "Conversational recommender service and tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Service config file (key = value lines); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ServiceConfig> {
        match &self.config {
            Some(p) => ServiceConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(ServiceConfig::default()),
        }
    }
}

#[derive(Args)]
struct CrsArg {
    /// Base URL of a running service; an in-process service is used otherwise.
    #[arg(long)]
    crs_url: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Chat with an in-process service on stdin.
    Repl {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        user: Option<String>,
    },
    /// Copy every stored session record into a directory.
    ExportSessions {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run simulated users against the recommender.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        crs: CrsArg,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        max_turns: usize,
        /// JSON control spec (personas, sentiments, topics).
        #[arg(long)]
        control_spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a simulated session corpus against a reference one.
    Evaluate {
        #[arg(long)]
        q: PathBuf,
        #[arg(long)]
        r: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    #[command(subcommand)]
    Train(TrainCommand),
    /// Generate labeled training examples with the simulator.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        crs: CrsArg,
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        max_turns: usize,
        /// Comma-separated sentiment labels.
        #[arg(long, default_value = "angry,satisfied,confused")]
        labels: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic item corpus and its summaries.
    GenCorpus {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Fit the dual-encoder towers on retrieval examples.
    DualEncoder {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learn a search-query policy from retrieval examples.
    Bandit {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Sentiment,
    Retrieval,
    Ranking,
}

fn crs_for(crs: &CrsArg, config: &ServiceConfig) -> Result<Box<dyn CrsClient>> {
    Ok(match &crs.crs_url {
        Some(url) => Box::new(HttpCrs::new(
            url.clone(),
            Duration::from_millis(config.timeout_ms),
        )),
        None => Box::new(Service::from_config(config.clone())?),
    })
}

fn simulator_gateway(config: &ServiceConfig) -> Result<Gateway> {
    let backend = build_backend(&config.backend, Duration::from_millis(config.timeout_ms))?;
    Ok(Gateway::new(backend).with_retries(2))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<()> {
    let service = tokio::task::spawn_blocking(move || Service::from_config(config)).await??;
    log::info!(
        "{} items, config {}",
        service.corpus().len(),
        service.config_hash()
    );
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, convrec::router(Arc::new(service)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn repl(config: ServiceConfig, user: Option<String>) -> Result<()> {
    let service = Service::from_config(config)?;
    let id = service.create_session(user.as_deref())?;
    eprintln!("session {id}; empty line or EOF to quit");
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            break;
        }
        let reply = service.handle_user_message(&id, None, &line)?;
        writeln!(out, "> {}", reply.utterance)?;
        for (i, e) in reply.slate.iter().enumerate() {
            writeln!(
                out,
                "  {}. [{}] {} ({:.2}): {}",
                i + 1,
                e.item_id,
                e.title,
                e.score,
                e.explanation
            )?;
        }
        out.flush()?;
    }
    Ok(())
}

fn simulate(
    config: ServiceConfig,
    crs: &CrsArg,
    spec_path: Option<&Path>,
    run: RunConfig,
    out: &Path,
) -> Result<()> {
    let spec = match spec_path {
        Some(p) => ControlSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => ControlSpec::default(),
    };
    let client = crs_for(crs, &config)?;
    let gateway = simulator_gateway(&config)?;
    let report = run_sessions(client.as_ref(), &gateway, &spec, &run);
    report.corpus.save(out)?;
    for f in &report.failures {
        log::warn!("{f}");
    }
    print_json(
        &json!({ "sessions": report.corpus.len(), "failures": report.failures.len(), "out": out }),
    );
    Ok(())
}

fn evaluate(q: &Path, r: &Path, seed: u64) -> Result<()> {
    let q = SessionCorpus::load(q, CorpusTag::Simulated)?.sessions();
    let r = SessionCorpus::load(r, CorpusTag::Reference)?.sessions();
    let ensemble = default_ensemble();
    let matched = ensemble_match(&q, &r, &ensemble);
    let entropy = ensemble_entropy(&q, &ensemble);
    let discriminator = match train_discriminator(&q, &r, seed, &DiscriminatorConfig::default()) {
        Ok(d) => json!({ "auc": d.auc, "sessions": d.sessions, "folds": d.folds }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    print_json(&json!({
        "q_sessions": q.len(),
        "r_sessions": r.len(),
        "match": matched,
        "entropy": entropy,
        "discriminator": discriminator,
    }));
    Ok(())
}

fn retrieval_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let examples: Vec<TrainingExample> = read_examples(path)?
        .into_iter()
        .filter(|e| matches!(e, TrainingExample::Retrieval { .. }))
        .collect();
    if examples.is_empty() {
        bail!("{} holds no retrieval examples", path.display());
    }
    Ok(examples)
}

fn train_dual(
    config: ServiceConfig,
    data: &Path,
    out: &Path,
    train: TrainConfig,
    tau: f64,
) -> Result<()> {
    let corpus = load_corpus(&config.corpus, config.embedding_dim)?;
    let examples = retrieval_examples(data)?;
    let encoded = encode_retrieval(&corpus, &examples);
    if encoded.is_empty() {
        bail!("no example matches the configured corpus");
    }
    let queries: Vec<(Vec<f64>, usize)> = examples
        .iter()
        .filter_map(|e| match e {
            TrainingExample::Retrieval {
                session, positive, ..
            } => Some((
                corpus.embed(&retrieval_context(session)).into_vec(),
                corpus.index_of(positive)?,
            )),
            _ => None,
        })
        .collect();
    let initial = TowerParams::identity(corpus.dim()).with_tau(tau)?;
    let recall_before = recall_at_k(&initial, &corpus, &queries, 10);
    let report = train_dual_encoder(&encoded, initial, &train)?;
    if report.diverged {
        bail!("training diverged; lower the learning rate");
    }
    report.params.save(out)?;
    print_json(&json!({
        "examples": encoded.len(),
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss(),
        "mean_loss": mean_loss(&encoded, &report.params)?,
        "recall_at_10_before": recall_before,
        "recall_at_10_after": recall_at_k(&report.params, &corpus, &queries, 10),
        "fingerprint": report.params.fingerprint(),
        "out": out,
    }));
    Ok(())
}

fn train_bandit(
    config: ServiceConfig,
    data: &Path,
    episodes: usize,
    lr: f64,
    k: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let corpus = load_corpus(&config.corpus, config.embedding_dim)?;
    let search = BuiltinSearch::new(&corpus);
    let tasks: Vec<(Vec<String>, String)> = retrieval_examples(data)?
        .into_iter()
        .filter_map(|e| match e {
            TrainingExample::Retrieval {
                session, positive, ..
            } => {
                let cands = candidate_queries(&retrieval_context(&session), &search);
                (!cands.is_empty()).then_some((cands, positive))
            }
            _ => None,
        })
        .collect();
    if tasks.is_empty() {
        bail!("no example yields candidate queries");
    }
    let mut policy = BanditPolicy::new(lr);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rewards = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let (cands, target) = &tasks[ep % tasks.len()];
        let outcome = bandit_step(&mut policy, cands, &search, k, hit_reward(target), &mut rng)?;
        rewards.extend(outcome.reward);
    }
    let window = (rewards.len() / 10).max(1);
    let mean = |r: &[f64]| {
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    };
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_string_pretty(&policy)?)?;
    }
    print_json(&json!({
        "episodes": episodes,
        "tasks": tasks.len(),
        "mean_reward_first": mean(&rewards[..window.min(rewards.len())]),
        "mean_reward_last": mean(&rewards[rewards.len().saturating_sub(window)..]),
        "baseline": policy.baseline,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_data(
    config: ServiceConfig,
    crs: &CrsArg,
    kind: DataKind,
    n: usize,
    max_turns: usize,
    labels: &str,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let client = crs_for(crs, &config)?;
    let gateway = simulator_gateway(&config)?;
    let examples = match kind {
        DataKind::Sentiment => {
            let labels: Vec<Weighted> = labels
                .split(',')
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| Weighted::new(l, 1.0))
                .collect();
            simulator::generate_sentiment(
                client.as_ref(),
                &gateway,
                &SentimentSpec {
                    labels,
                    n,
                    max_turns,
                },
                seed,
            )
        }
        DataKind::Retrieval => {
            let corpus = load_corpus(&config.corpus, config.embedding_dim)?;
            let spec = RetrievalSpec {
                n,
                max_turn: max_turns.clamp(1, 3),
                ..RetrievalSpec::default()
            };
            simulator::generate_retrieval(&corpus, client.as_ref(), &gateway, &spec, seed)?
        }
        DataKind::Ranking => {
            let corpus = load_corpus(&config.corpus, config.embedding_dim)?;
            simulator::generate_ranking(
                &corpus,
                client.as_ref(),
                &gateway,
                &RankingSpec { n },
                seed,
            )?
        }
    };
    write_examples(out, &examples)?;
    print_json(&json!({ "examples": examples.len(), "requested": n, "out": out }));
    Ok(())
}

fn gen_corpus(n: usize, seed: u64, out: &Path) -> Result<()> {
    let (corpus, _) = Corpus::build(
        synthetic::generate(n, seed),
        Embedder::default(),
        &Default::default(),
    );
    corpus.write_items(out)?;
    let sidecar = summary_sidecar_path(out);
    corpus.write_summaries(&sidecar)?;
    print_json(&json!({ "items": corpus.len(), "out": out, "summaries": sidecar }));
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve { config, addr } => {
            let config = config.load()?;
            tokio::runtime::Runtime::new()?.block_on(serve(config, addr))
        }
        Command::Repl { config, user } => repl(config.load()?, user),
        Command::ExportSessions { config, out } => {
            let config = config.load()?;
            if config.data_dir.is_none() {
                bail!("export needs a config with data_dir set");
            }
            let n = Service::from_config(config)?.export_sessions(&out)?;
            print_json(&json!({ "sessions": n, "out": out }));
            Ok(())
        }
        Command::Simulate {
            config,
            crs,
            n,
            max_turns,
            control_spec,
            seed,
            out,
        } => {
            let config = config.load()?;
            let run = RunConfig {
                n_sessions: n,
                max_turns,
                seed,
                parallelism: config.parallelism,
                ..RunConfig::default()
            };
            simulate(config, &crs, control_spec.as_deref(), run, &out)
        }
        Command::Evaluate { q, r, seed } => evaluate(&q, &r, seed),
        Command::Train(TrainCommand::DualEncoder {
            config,
            data,
            out,
            epochs,
            lr,
            batch_size,
            tau,
            seed,
        }) => train_dual(
            config.load()?,
            &data,
            &out,
            TrainConfig {
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
            },
            tau,
        ),
        Command::Train(TrainCommand::Bandit {
            config,
            data,
            episodes,
            lr,
            k,
            seed,
            out,
        }) => train_bandit(config.load()?, &data, episodes, lr, k, seed, out.as_deref()),
        Command::GenData {
            config,
            crs,
            kind,
            n,
            max_turns,
            labels,
            seed,
            out,
        } => gen_data(
            config.load()?,
            &crs,
            kind,
            n,
            max_turns,
            &labels,
            seed,
            &out,
        ),
        Command::GenCorpus { n, seed, out } => gen_corpus(n, seed, &out),
    }
}
