//! `animerec`: the batch pipeline (ingest → train-primary → embed → cluster →
//! opposites), evaluations, offline recommendation and the HTTP server.
//!
//! Each stage loads the knowledge-base directory, adds its artifact and saves
//! it back. Exit codes: 0 success, 2 usage or input error, 3 numerical
//! failure (divergence, eigensolver).

use animerec_core::autonet::Activation;
use animerec_core::dataset::{age_to_category, AnimeId, Gender, ParseOptions};
use animerec_core::engine::Recommender;
use animerec_core::evaluate::ErrorMetrics;
use animerec_core::hybridfilter::{Recommended, UserProfile};
use animerec_core::knowledgebase::{KbError, KnowledgeBase, StoredProfile};
use animerec_core::pipeline::{self, PipelineError};
use animerec_core::spectral::{ClusterConfig, SpectralOptions};
use animerec_core::synth::{self, CorpusFiles, SynthConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "animerec", version, about = "Hybrid anime recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus (anime.csv, users.csv, ratings.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 160)]
        titles: usize,
        #[arg(long, default_value_t = 420)]
        users: usize,
        #[arg(long, default_value_t = 5)]
        groups: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Parse and cleanse a corpus into a new knowledge base.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the rating model on a per-user hold-out split.
    TrainPrimary {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Hidden-layer activation.
        #[arg(long)]
        activation: Option<Activation>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        holdout: f64,
    },
    /// Build title embeddings.
    Embed {
        #[arg(long)]
        kb: PathBuf,
        /// Users with more than `t` ratings are used; defaults to the top quarter.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long, default_value_t = pipeline::DESK_EMBEDDING_DIMS)]
        d: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Spectrally cluster the embeddings and print the k candidates.
    Cluster {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value_t = 10)]
        k_neighbors: usize,
        #[arg(long, default_value_t = 4)]
        min_cluster_size: usize,
        /// Use this k instead of the top candidate.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute every title's opposite cluster.
    Opposites {
        #[arg(long)]
        kb: PathBuf,
    },
    /// All stages with default settings, corpus to servable knowledge base.
    Build {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Held-out MSE/RMSE of the rating model and two baselines.
    Evaluate {
        #[arg(long, value_enum)]
        dataset: Dataset,
        /// `u.data` or the directory holding it.
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Train/validation MSE curves per hidden activation, as CSV.
    EvaluateActivations {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value = "selu,elu,tanh,relu")]
        activations: String,
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
        #[arg(long)]
        epochs: Option<usize>,
        /// Write the CSV here and print per-activation medians instead.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print both recommendation lists for an ad-hoc profile.
    Recommend {
        #[arg(long)]
        kb: PathBuf,
        /// `id=score,…`; empty for a cold start.
        #[arg(long, default_value = "")]
        ratings: String,
        #[arg(long)]
        age: u32,
        #[arg(long, value_enum)]
        gender: GenderArg,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, env = "ANIMEREC_KB")]
        kb: PathBuf,
        #[arg(long, env = "ANIMEREC_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "ANIMEREC_HOST", default_value = "127.0.0.1")]
        host: String,
    },
    /// Average list score per feedback round over all sessions, as CSV.
    ReportFeedback {
        #[arg(long)]
        kb: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
pub struct CorpusArgs {
    #[arg(long)]
    anime: PathBuf,
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, default_value_t = 20)]
    min_ratings: usize,
    /// Year birth years are measured against.
    #[arg(long)]
    reference_year: Option<i32>,
}

impl CorpusArgs {
    fn files(&self) -> CorpusFiles {
        CorpusFiles {
            anime: self.anime.clone(),
            users: self.users.clone(),
            ratings: self.ratings.clone(),
        }
    }

    fn options(&self) -> ParseOptions {
        match self.reference_year {
            Some(reference_year) => ParseOptions { reference_year },
            None => ParseOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Dataset {
    Movielens100k,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenderArg {
    Male,
    Female,
}

impl From<GenderArg> for Gender {
    fn from(g: GenderArg) -> Self {
        match g {
            GenderArg::Male => Gender::Male,
            GenderArg::Female => Gender::Female,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}: {1}")]
    Io(String, io::Error),
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |e| CliError::Io(context, e)
}

fn output(e: io::Error) -> CliError {
    CliError::Io("writing output".into(), e)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out: dir, titles, users, groups, seed } => {
            let config = SynthConfig { titles, users, groups, seed, ..SynthConfig::default() };
            let files = synth::generate(&config)
                .write_csv(&dir)
                .map_err(io_err(format!("writing corpus to {}", dir.display())))?;
            writeln!(out, "wrote {}, {}, {}", files.anime.display(), files.users.display(), files.ratings.display())
                .map_err(output)?;
            writeln!(out, "birth years assume reference year {}", synth::REFERENCE_YEAR).map_err(output)
        }
        Command::Ingest { corpus, out: dir } => {
            let files = corpus.files();
            let ingested = pipeline::ingest(&files.anime, &files.users, &files.ratings, corpus.min_ratings, &corpus.options())?;
            print_ingest(out, &ingested).map_err(output)?;
            save(out, &ingested.kb, &dir)
        }
        Command::TrainPrimary { kb: dir, epochs, lr, activation, seed, holdout } => {
            let mut kb = KnowledgeBase::load(&dir)?;
            let mut settings = pipeline::desk_primary(seed);
            settings.holdout_fraction = holdout;
            if let Some(e) = epochs {
                settings.training.epochs = e;
            }
            if let Some(lr) = lr {
                settings.training.learning_rate = lr;
            }
            if let Some(a) = activation {
                settings.architecture.hidden_activation = a;
            }
            let metrics = pipeline::train_primary(&mut kb, &settings)?;
            print_metrics(out, &[
                ("autoencoder", metrics.model),
                ("global average", metrics.global_average),
                ("user average", metrics.user_average),
            ])
            .map_err(output)?;
            save(out, &kb, &dir)
        }
        Command::Embed { kb: dir, t, d, epochs, seed } => {
            let mut kb = KnowledgeBase::load(&dir)?;
            let mut config = pipeline::desk_embedding(&kb, d, seed);
            if let Some(t) = t {
                config.t = t;
            }
            if let Some(e) = epochs {
                config.stage1.train.epochs = e;
                config.stage2.train.epochs = e;
            }
            pipeline::embed(&mut kb, &config)?;
            let set = kb.embeddings.as_ref().expect("just built");
            writeln!(out, "embedded {} titles: t={} users={} d={} genres={}", set.manifest.count, set.manifest.t, set.manifest.m, set.manifest.d, set.manifest.g)
                .map_err(output)?;
            save(out, &kb, &dir)
        }
        Command::Cluster { kb: dir, k_neighbors, min_cluster_size, k, k_max, seed } => {
            let mut kb = KnowledgeBase::load(&dir)?;
            let config = ClusterConfig { k_neighbors, min_cluster_size, k_max, k, seed };
            let candidates = pipeline::cluster(&mut kb, &config, &SpectralOptions::default())?;
            let model = kb.clusters.as_ref().expect("just built");
            writeln!(out, "{:>4}  {:>12}  {:>16}", "k", "significance", "smallest cluster").map_err(output)?;
            for c in &candidates {
                let mark = if c.k == model.k { "  *" } else { "" };
                writeln!(out, "{:>4}  {:>12.6}  {:>16}{mark}", c.k, c.significance, c.smallest_cluster).map_err(output)?;
            }
            writeln!(out, "chosen k={} sizes {:?}", model.k, model.sizes()).map_err(output)?;
            save(out, &kb, &dir)
        }
        Command::Opposites { kb: dir } => {
            let mut kb = KnowledgeBase::load(&dir)?;
            pipeline::opposites(&mut kb)?;
            let model = kb.clusters.as_ref().expect("just built");
            for c in 0..model.k {
                let mut targets: Vec<usize> = model
                    .members(c)
                    .filter_map(|id| model.opposite_of(id))
                    .collect();
                targets.sort_unstable();
                targets.dedup();
                writeln!(out, "cluster {c}: opposites {targets:?}").map_err(output)?;
            }
            save(out, &kb, &dir)
        }
        Command::Build { corpus, out: dir, seed } => {
            let built = pipeline::build_all(&corpus.files(), &corpus.options(), corpus.min_ratings, seed)?;
            print_ingest(out, &built).map_err(output)?;
            if let Some(m) = &built.kb.metrics {
                print_metrics(out, &[
                    ("autoencoder", m.model),
                    ("global average", m.global_average),
                    ("user average", m.user_average),
                ])
                .map_err(output)?;
            }
            if let Some(c) = &built.kb.clusters {
                writeln!(out, "clusters k={} sizes {:?}", c.k, c.sizes()).map_err(output)?;
            }
            save(out, &built.kb, &dir)
        }
        Command::Evaluate { dataset: Dataset::Movielens100k, path, seed, epochs, json } => {
            let mut settings = pipeline::movielens_primary(seed);
            if let Some(e) = epochs {
                settings.training.epochs = e;
            }
            let total = settings.training.epochs;
            let (eval, report) = pipeline::evaluate_movielens(&path, &settings, |s, _| {
                if (s.epoch + 1) % 25 == 0 || s.epoch + 1 == total {
                    log::info!("epoch {}/{} loss {:.4}", s.epoch + 1, total, s.loss);
                }
            })?;
            log::info!("{} lines, {} duplicates, {} malformed", report.lines, report.duplicates, report.malformed);
            let rows = [
                ("autoencoder", eval.model),
                ("global average", eval.global_average),
                ("user average", eval.user_average),
            ];
            if json {
                let body: serde_json::Map<String, serde_json::Value> = rows
                    .iter()
                    .map(|(name, m)| (name.replace(' ', "_"), serde_json::to_value(m).expect("plain struct")))
                    .collect();
                writeln!(out, "{}", serde_json::Value::Object(body)).map_err(output)
            } else {
                print_metrics(out, &rows).map_err(output)
            }
        }
        Command::EvaluateActivations { kb: dir, activations, seeds, epochs, out: csv_path } => {
            let activations = parse_list::<Activation>(&activations, "activation")?;
            let seeds = parse_list::<u64>(&seeds, "seed")?;
            let kb = KnowledgeBase::load(&dir)?;
            let mut base = pipeline::desk_primary(0);
            if let Some(e) = epochs {
                base.training.epochs = e;
            }
            let curves = pipeline::evaluate_activations(&kb, &activations, &seeds, &base)?;
            match csv_path {
                None => write_curves(&mut *out, &curves),
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
                    write_curves(io::BufWriter::new(file), &curves)?;
                    for a in &activations {
                        let median = pipeline::median_final(&curves, *a).unwrap_or(f64::NAN);
                        writeln!(out, "{a}: median final validation MSE {median:.4}").map_err(output)?;
                    }
                    Ok(())
                }
            }
        }
        Command::Recommend { kb: dir, ratings, age, gender, limit, json } => {
            let kb = KnowledgeBase::load(&dir)?;
            let mut engine = Recommender::from_kb(&kb)?;
            if let Some(l) = limit {
                engine.config.limit = l;
            }
            let mut profile = UserProfile::new("cli", gender.into(), age_to_category(age))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            for (i, (id, score)) in parse_ratings(&ratings)?.into_iter().enumerate() {
                if engine.catalog().get(id).is_none() {
                    return Err(CliError::Usage(format!("unknown anime id {id}")));
                }
                profile
                    .rate(id, score, i as u64)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            let recs = engine.recommend(&profile);
            if json {
                let view = |list: &[Recommended]| -> Vec<serde_json::Value> {
                    list.iter()
                        .map(|r| {
                            serde_json::json!({
                                "anime_id": r.anime_id,
                                "name": engine.catalog().get(r.anime_id).map(|t| t.name.as_str()),
                                "predicted_rating": r.predicted_rating,
                                "cluster": r.cluster,
                            })
                        })
                        .collect()
                };
                let body = serde_json::json!({
                    "cold_start": recs.cold_start,
                    "similar": view(&recs.similar),
                    "may_like": view(&recs.may_like),
                });
                return writeln!(out, "{body}").map_err(output);
            }
            if recs.cold_start {
                writeln!(out, "no ratings: popular titles per genre").map_err(output)?;
            }
            for (heading, list) in [("similar", &recs.similar), ("you may also like", &recs.may_like)] {
                writeln!(out, "{heading}:").map_err(output)?;
                for (rank, r) in list.iter().enumerate() {
                    let name = engine.catalog().get(r.anime_id).map_or("?", |t| t.name.as_str());
                    let pred = r.predicted_rating.map_or("-".to_string(), |p| format!("{p:.2}"));
                    let cluster = r.cluster.map_or("-".to_string(), |c| c.to_string());
                    writeln!(out, "{:>3}. {:>6}  {:>5}  c{:<3} {}", rank + 1, r.anime_id, pred, cluster, name).map_err(output)?;
                }
            }
            Ok(())
        }
        Command::Serve { kb, port, host } => {
            let state = animerec_service::AppState::open(&kb).map_err(CliError::Usage)?;
            let runtime = tokio::runtime::Runtime::new().map_err(io_err("starting runtime"))?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(io_err(format!("binding {host}:{port}")))?;
                let addr = listener.local_addr().map_err(io_err("local address"))?;
                log::info!("serving {} titles on http://{addr}", state.engine().catalog().len());
                writeln!(out, "listening on http://{addr}").map_err(output)?;
                out.flush().map_err(output)?;
                animerec_service::serve(listener, Arc::new(state))
                    .await
                    .map_err(io_err("serving"))
            })
        }
        Command::ReportFeedback { kb } => {
            let store = KnowledgeBase::profiles(&kb);
            let mut profiles = Vec::new();
            for id in store.list()? {
                profiles.push(store.load(&id)?);
            }
            let mut w = csv::Writer::from_writer(&mut *out);
            for row in feedback_by_round(&profiles) {
                w.serialize(row).map_err(|e| CliError::Io("writing output".into(), e.into()))?;
            }
            w.flush().map_err(output)
        }
    }
}

fn save(out: &mut dyn Write, kb: &KnowledgeBase, dir: &Path) -> Result<(), CliError> {
    let digest = kb.save(dir)?;
    writeln!(out, "saved {} (manifest sha256 {digest})", dir.display()).map_err(output)
}

fn print_ingest(out: &mut dyn Write, i: &pipeline::Ingested) -> io::Result<()> {
    let c = &i.cleanse;
    writeln!(out, "malformed rows skipped: {}", i.parse.malformed.len())?;
    writeln!(out, "titles removed (missing studio): {} ({} ratings)", c.titles_removed, c.ratings_of_removed_titles)?;
    writeln!(out, "ratings of unknown titles or users: {}", c.dangling_ratings)?;
    writeln!(out, "plan-to-watch entries discarded: {}", c.plan_to_watch_discarded)?;
    writeln!(out, "dropped entries corrected: {}", c.dropped_corrected)?;
    writeln!(out, "users removed (too few ratings): {} ({} ratings)", c.users_removed, c.ratings_of_removed_users)?;
    writeln!(out, "duplicate ratings collapsed: {}", i.build.duplicates)?;
    writeln!(out, "kept {} titles, {} users, {} ratings", i.kb.catalog.len(), i.kb.users.len(), i.kb.ratings.len())
}

fn print_metrics(out: &mut dyn Write, rows: &[(&str, ErrorMetrics)]) -> io::Result<()> {
    writeln!(out, "{:<16} {:>8} {:>8} {:>8}", "method", "MSE", "RMSE", "cells")?;
    for (name, m) in rows {
        writeln!(out, "{:<16} {:>8.4} {:>8.4} {:>8}", name, m.mse, m.rmse, m.count)?;
    }
    Ok(())
}

fn write_curves<W: Write>(w: W, curves: &[pipeline::CurvePoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(w);
    for p in curves {
        w.serialize(p).map_err(|e| CliError::Io("writing CSV".into(), e.into()))?;
    }
    w.flush().map_err(output)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| CliError::Usage(format!("invalid {what} `{x}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("no {what} given")));
    }
    Ok(items)
}

/// Parses `id=score,…`. Scores must be integers in 1..=10.
pub fn parse_ratings(s: &str) -> Result<Vec<(AnimeId, u8)>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|pair| {
            let bad = || CliError::Usage(format!("invalid rating `{pair}`; expected id=score with score 1..=10"));
            let (id, score) = pair.split_once('=').ok_or_else(bad)?;
            let id: AnimeId = id.trim().parse().map_err(|_| bad())?;
            let score: u8 = score.trim().parse().map_err(|_| bad())?;
            if !(1..=10).contains(&score) {
                return Err(bad());
            }
            Ok((id, score))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundScore {
    /// 1-based: a session's n-th feedback is round n.
    pub round: usize,
    pub sessions: usize,
    pub mean_list_score: f64,
}

/// Mean list score of each feedback round across sessions.
pub fn feedback_by_round(profiles: &[StoredProfile]) -> Vec<RoundScore> {
    let mut sums: Vec<(usize, u64)> = Vec::new();
    for p in profiles {
        for (i, f) in p.feedback.iter().enumerate() {
            if sums.len() <= i {
                sums.push((0, 0));
            }
            sums[i].0 += 1;
            sums[i].1 += u64::from(f.list_score);
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (n, total))| RoundScore {
            round: i + 1,
            sessions: n,
            mean_list_score: total as f64 / n as f64,
        })
        .collect()
}
