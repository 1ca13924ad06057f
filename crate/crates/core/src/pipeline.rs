//! Batch stages that fill a [`KnowledgeBase`]: ingest → rating model →
//! embeddings → clusters → opposites, plus the activation comparison.

use crate::autonet::{
    Activation, ArchitectureConfig, AutonetError, LossKind, ModelManifest, TrainConfig,
};
use crate::dataset::{
    build_matrices, cleanse, load_movielens_100k, parse_catalog, split_train_test, BuildReport,
    CleanseReport, Corpus, DatasetError, MovieLensReport, ParseOptions, ParseReport,
};
use crate::embedding::{build_embeddings, EmbeddingConfig, EmbeddingError};
use crate::evaluate::{evaluate_split, model_heldout, Evaluation};
use crate::knowledgebase::{HeldoutMetrics, KbError, KnowledgeBase, PrimaryBuild, PrimaryModel};
use crate::spectral::{build_clusters, with_opposites, ClusterConfig, KCandidate, SpectralError, SpectralOptions};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Autonet(#[from] AutonetError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Kb(#[from] KbError),
    /// A stage ran before the one it depends on.
    #[error("{0}")]
    Stage(String),
}

impl PipelineError {
    /// Whether the failure is numerical (divergence, eigensolver) rather
    /// than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PipelineError::Autonet(AutonetError::Diverged { .. })
                | PipelineError::Embedding(EmbeddingError::Autonet(AutonetError::Diverged { .. }))
                | PipelineError::Spectral(SpectralError::NoConvergence(_))
        )
    }
}

#[derive(Debug)]
pub struct Ingested {
    pub kb: KnowledgeBase,
    pub parse: ParseReport,
    pub cleanse: CleanseReport,
    pub build: BuildReport,
}

/// Parses and cleanses the three corpus files into a fresh base.
pub fn ingest(
    anime: &Path,
    users: &Path,
    ratings: &Path,
    min_ratings_per_user: usize,
    options: &ParseOptions,
) -> Result<Ingested, PipelineError> {
    let parsed = parse_catalog(anime, users, ratings, options)?;
    for m in &parsed.report.malformed {
        log::warn!("{} line {}: {}", m.file, m.line, m.reason);
    }
    let corpus = Corpus {
        titles: parsed.titles,
        users: parsed.users,
        ratings: parsed.ratings,
    };
    let (clean, report) = cleanse(corpus, min_ratings_per_user)?;
    let (_, _, build) = build_matrices(&clean);
    Ok(Ingested {
        kb: KnowledgeBase::from_corpus(clean, min_ratings_per_user),
        parse: parsed.report,
        cleanse: report,
        build,
    })
}

/// Rating-model settings for desk-scale corpora. A few hundred users
/// overfit a 128-wide body within tens of epochs; heavy dropout on the code
/// keeps held-out error falling.
pub fn desk_primary(seed: u64) -> PrimaryBuild {
    PrimaryBuild {
        architecture: ArchitectureConfig {
            hidden: vec![128, 32, 128],
            hidden_activation: Activation::Selu,
            final_activation: Activation::Relu,
        },
        training: TrainConfig {
            epochs: 150,
            seed,
            bottleneck_dropout: 0.8,
            ..TrainConfig::default()
        },
        holdout_fraction: 0.05,
        split_seed: seed,
    }
}

/// Trains the rating model on a per-user hold-out split and stores it with
/// its held-out errors.
pub fn train_primary(kb: &mut KnowledgeBase, settings: &PrimaryBuild) -> Result<HeldoutMetrics, PipelineError> {
    let (matrix, _) = kb.matrices();
    let (train, held) = split_train_test(&matrix, settings.holdout_fraction, settings.split_seed)?;
    let (model, eval) = evaluate_split(
        &train,
        &matrix,
        &held,
        &settings.architecture,
        &settings.training,
        |s, _| log::debug!("epoch {} loss {:.4}", s.epoch + 1, s.loss),
    )?;
    let manifest = ModelManifest::describe(
        &model,
        settings.training.loss,
        settings.training.seed,
        Some(settings.training.clone()),
        eval.report.loss_history.last().copied(),
    );
    let metrics = HeldoutMetrics {
        model: eval.model,
        global_average: eval.global_average,
        user_average: eval.user_average,
        loss_history: eval.report.loss_history,
    };
    kb.primary = Some(PrimaryModel {
        model,
        manifest,
        item_ids: matrix.item_ids().to_vec(),
    });
    kb.metrics = Some(metrics.clone());
    kb.build.primary = Some(settings.clone());
    Ok(metrics)
}

/// Embedding settings for desk-scale corpora: `t` keeps roughly the top
/// quarter of users.
pub fn desk_embedding(kb: &KnowledgeBase, d: usize, seed: u64) -> EmbeddingConfig {
    let (matrix, _) = kb.matrices();
    let t = crate::embedding::threshold_for_size(&matrix, (matrix.n_users() / 4).max(1));
    let mut config = EmbeddingConfig::with_dims(t, d);
    config.stage1.train.seed = seed;
    config.stage2.train.seed = seed.wrapping_add(1);
    config
}

/// Builds title embeddings; clusters built from older embeddings are dropped.
pub fn embed(kb: &mut KnowledgeBase, config: &EmbeddingConfig) -> Result<(), PipelineError> {
    let (matrix, genres) = kb.matrices();
    let primary_sha = kb.primary.as_ref().map(|p| p.manifest.parameters_sha256.clone());
    let run = build_embeddings(&matrix, &genres, config, primary_sha)?;
    kb.embeddings = Some(run.set);
    kb.clusters = None;
    kb.build.embedding = Some(config.clone());
    kb.build.clusters = None;
    Ok(())
}

/// Clusters the stored embeddings; returns the ranked k candidates.
pub fn cluster(
    kb: &mut KnowledgeBase,
    config: &ClusterConfig,
    options: &SpectralOptions,
) -> Result<Vec<KCandidate>, PipelineError> {
    let embeddings = kb
        .embeddings
        .as_ref()
        .ok_or_else(|| PipelineError::Stage("no embeddings yet; run embed first".into()))?;
    let clustering = build_clusters(embeddings, config, options)?;
    kb.clusters = Some(clustering.model);
    kb.build.clusters = Some(config.clone());
    Ok(clustering.candidates)
}

/// Fills every title's opposite cluster.
pub fn opposites(kb: &mut KnowledgeBase) -> Result<(), PipelineError> {
    let (Some(embeddings), Some(clusters)) = (kb.embeddings.as_ref(), kb.clusters.take()) else {
        return Err(PipelineError::Stage("no clusters yet; run cluster first".into()));
    };
    kb.clusters = Some(with_opposites(embeddings, clusters)?);
    Ok(())
}

/// One row of an activation comparison curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub activation: Activation,
    pub seed: u64,
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
}

/// Trains one rating model per (activation, seed) with `activation` in the
/// hidden layers, recording per-epoch training loss and held-out MSE. Each
/// seed fixes both the split and the initialisation, so activations are
/// compared on identical data.
pub fn evaluate_activations(
    kb: &KnowledgeBase,
    activations: &[Activation],
    seeds: &[u64],
    base: &PrimaryBuild,
) -> Result<Vec<CurvePoint>, PipelineError> {
    let (matrix, _) = kb.matrices();
    let mut out = Vec::new();
    for &seed in seeds {
        let (train, held) = split_train_test(&matrix, base.holdout_fraction, seed)?;
        for &activation in activations {
            let arch = ArchitectureConfig {
                hidden_activation: activation,
                ..base.architecture.clone()
            };
            let config = TrainConfig {
                seed,
                loss: LossKind::Masked,
                ..base.training.clone()
            };
            let mut failure = None;
            evaluate_split(&train, &matrix, &held, &arch, &config, |s, model| {
                match model_heldout(model, &train, &matrix, &held) {
                    Ok(v) => out.push(CurvePoint {
                        activation,
                        seed,
                        epoch: s.epoch + 1,
                        train_mse: s.loss,
                        validation_mse: v.mse,
                    }),
                    Err(e) => failure = Some(e),
                }
            })?;
            if let Some(e) = failure {
                return Err(e.into());
            }
        }
    }
    Ok(out)
}

/// Final-epoch validation MSE per (activation, seed).
pub fn final_validation(curves: &[CurvePoint]) -> Vec<(Activation, u64, f64)> {
    let mut last: Vec<(Activation, u64, usize, f64)> = Vec::new();
    for p in curves {
        match last.iter_mut().find(|l| l.0 == p.activation && l.1 == p.seed) {
            Some(l) if p.epoch >= l.2 => {
                l.2 = p.epoch;
                l.3 = p.validation_mse;
            }
            Some(_) => {}
            None => last.push((p.activation, p.seed, p.epoch, p.validation_mse)),
        }
    }
    last.into_iter().map(|l| (l.0, l.1, l.3)).collect()
}

/// Median of the final validation MSEs of one activation.
pub fn median_final(curves: &[CurvePoint], activation: Activation) -> Option<f64> {
    let mut v: Vec<f64> = final_validation(curves)
        .into_iter()
        .filter(|f| f.0 == activation)
        .map(|f| f.2)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Every stage with the desk-scale settings above: corpus files in, a
/// base ready to serve out.
pub fn build_all(
    files: &crate::synth::CorpusFiles,
    options: &ParseOptions,
    min_ratings_per_user: usize,
    seed: u64,
) -> Result<Ingested, PipelineError> {
    let mut ingested = ingest(&files.anime, &files.users, &files.ratings, min_ratings_per_user, options)?;
    let kb = &mut ingested.kb;
    train_primary(kb, &desk_primary(seed))?;
    let embedding = desk_embedding(kb, DESK_EMBEDDING_DIMS, seed);
    embed(kb, &embedding)?;
    cluster(kb, &ClusterConfig { seed, ..ClusterConfig::default() }, &SpectralOptions::default())?;
    opposites(kb)?;
    Ok(ingested)
}

pub const DESK_EMBEDDING_DIMS: usize = 8;

/// MovieLens-100K `u.data` (or its directory): per-user hold-out split,
/// then model and baselines scored on the held-out cells.
pub fn evaluate_movielens(
    path: &Path,
    settings: &PrimaryBuild,
    observe: impl FnMut(&crate::autonet::EpochStats, &crate::autonet::Autoencoder<f32>),
) -> Result<(Evaluation, MovieLensReport), PipelineError> {
    let (matrix, report) = load_movielens_100k(path)?;
    let (train, held) = split_train_test(&matrix, settings.holdout_fraction, settings.split_seed)?;
    let (_, eval) = evaluate_split(&train, &matrix, &held, &settings.architecture, &settings.training, observe)?;
    Ok((eval, report))
}

/// [`crate::evaluate::movielens_setup`] with the usual 5% hold-out.
pub fn movielens_primary(seed: u64) -> PrimaryBuild {
    let (architecture, training) = crate::evaluate::movielens_setup(seed);
    PrimaryBuild {
        architecture,
        training,
        holdout_fraction: 0.05,
        split_seed: seed,
    }
}
