//! Three-stage title embeddings: ratings from the heaviest raters are
//! compressed by a masked autoencoder, genre indicators are appended, and a
//! second (unmasked, linear-output) autoencoder produces the final code.

use crate::autonet::{
    encode_parameters, sha256_hex, train, Activation, ArchitectureConfig, Autoencoder,
    AutonetError, LossKind, TrainConfig, TrainReport,
};
use crate::dataset::{AnimeId, GenreMatrix, RatingMatrix};
use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no user has more than {t} ratings (maximum is {max_count}); lower the threshold t")]
    EmptySelection { t: usize, max_count: usize },
    #[error("title {0} has no genre row")]
    MissingGenres(AnimeId),
    #[error("embedding data: {0}")]
    Format(String),
    #[error(transparent)]
    Autonet(#[from] AutonetError),
}

/// Which pipeline stage a set of title vectors belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Ratings by the selected top users, length `m`.
    Ratings,
    /// Stage-one bottleneck code, length `d`.
    Code,
    /// Code followed by genre indicators, length `d + g`.
    WithGenres,
    /// Final hybrid code, length `d`.
    Final,
}

/// One row of `values` per title, rows in `ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimeVectors {
    pub stage: Stage,
    pub ids: Vec<AnimeId>,
    pub values: Array2<f32>,
}

impl AnimeVectors {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, id: AnimeId) -> Option<ArrayView1<'_, f32>> {
        self.ids.iter().position(|&a| a == id).map(|i| self.values.row(i))
    }
}

/// Rows of users with more than `t` ratings, most active first; ties go to
/// the smaller user id.
pub fn select_top_users(matrix: &RatingMatrix, t: usize) -> Result<Vec<usize>, EmbeddingError> {
    let mut rows: Vec<(usize, usize)> = (0..matrix.n_users())
        .map(|r| (r, matrix.row_entries(r).len()))
        .filter(|&(_, n)| n > t)
        .collect();
    if rows.is_empty() {
        let max_count = (0..matrix.n_users())
            .map(|r| matrix.row_entries(r).len())
            .max()
            .unwrap_or(0);
        return Err(EmbeddingError::EmptySelection { t, max_count });
    }
    rows.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| matrix.user_ids()[a.0].cmp(&matrix.user_ids()[b.0]))
    });
    Ok(rows.into_iter().map(|(r, _)| r).collect())
}

/// Largest threshold that still selects at least `m` users (all users when
/// fewer than `m` have any rating).
pub fn threshold_for_size(matrix: &RatingMatrix, m: usize) -> usize {
    let mut counts: Vec<usize> = (0..matrix.n_users())
        .map(|r| matrix.row_entries(r).len())
        .collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    match counts.get(m.max(1) - 1) {
        Some(&c) if c > 0 => c - 1,
        _ => 0,
    }
}

/// Title vectors over the item columns: entry `j` is top user `j`'s rating.
pub fn build_anime_vectors(matrix: &RatingMatrix, top_users: &[usize]) -> AnimeVectors {
    let mut values = Array2::zeros((matrix.n_items(), top_users.len()));
    for (j, &row) in top_users.iter().enumerate() {
        for &(c, v) in matrix.row_entries(row) {
            values[[c as usize, j]] = v;
        }
    }
    AnimeVectors {
        stage: Stage::Ratings,
        ids: matrix.item_ids().to_vec(),
        values,
    }
}

/// Encoder widths for an autoencoder on `input_dim` features with a
/// `d`-wide code: the default body's encoder widths that fit strictly between
/// the two, or one midpoint layer when none do.
pub fn scaled_widths(input_dim: usize, d: usize) -> Vec<usize> {
    let default = ArchitectureConfig::default();
    let encoder = &default.hidden[..default.hidden.len() / 2];
    let fitting: Vec<usize> = encoder
        .iter()
        .copied()
        .filter(|&w| w > d && w < input_dim)
        .collect();
    if !fitting.is_empty() {
        fitting
    } else if input_dim > d + 1 {
        vec![(input_dim + d).div_ceil(2)]
    } else {
        Vec::new()
    }
}

/// Settings for one embedding autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Code width.
    pub d: usize,
    /// Encoder widths before the code; `None` derives them from the input.
    pub widths: Option<Vec<usize>>,
    pub train: TrainConfig,
}

impl StageConfig {
    fn architecture(&self, input_dim: usize, final_activation: Activation) -> ArchitectureConfig {
        let widths = self
            .widths
            .clone()
            .unwrap_or_else(|| scaled_widths(input_dim, self.d));
        ArchitectureConfig {
            final_activation,
            ..ArchitectureConfig::mirrored(&widths, self.d)
        }
    }
}

/// A trained stage: the model, its training curve and the codes it produced.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub model: Autoencoder<f32>,
    pub report: TrainReport,
    pub codes: AnimeVectors,
}

fn encode_stage(
    vectors: &AnimeVectors,
    config: &StageConfig,
    final_activation: Activation,
    loss: LossKind,
    out_stage: Stage,
) -> Result<StageOutput, EmbeddingError> {
    if vectors.is_empty() {
        return Err(EmbeddingError::Format("no titles to encode".into()));
    }
    let arch = config.architecture(vectors.dim(), final_activation);
    let mut model = Autoencoder::new(vectors.dim(), &arch, config.train.seed)?;
    let train_config = TrainConfig {
        loss,
        ..config.train.clone()
    };
    let report = train(&mut model, &vectors.values, &train_config)?;
    let values = model.encode_batch(vectors.values.view())?;
    Ok(StageOutput {
        model,
        report,
        codes: AnimeVectors {
            stage: out_stage,
            ids: vectors.ids.clone(),
            values,
        },
    })
}

/// Masked autoencoder over rating vectors (SELU body, ReLU output); returns
/// every title's bottleneck code.
pub fn stage1_encode(vectors: &AnimeVectors, config: &StageConfig) -> Result<StageOutput, EmbeddingError> {
    encode_stage(vectors, config, Activation::Relu, LossKind::Masked, Stage::Code)
}

/// Appends each title's genre indicators after its code.
pub fn append_genres(codes: &AnimeVectors, genres: &GenreMatrix) -> Result<AnimeVectors, EmbeddingError> {
    let d = codes.dim();
    let g = genres.n_genres();
    let mut values = Array2::zeros((codes.len(), d + g));
    for (i, &id) in codes.ids.iter().enumerate() {
        let row = genres.row(id).ok_or(EmbeddingError::MissingGenres(id))?;
        values.slice_mut(s![i, ..d]).assign(&codes.values.row(i));
        for (j, &flag) in row.iter().enumerate() {
            values[[i, d + j]] = f32::from(flag);
        }
    }
    Ok(AnimeVectors {
        stage: Stage::WithGenres,
        ids: codes.ids.clone(),
        values,
    })
}

/// Unmasked autoencoder with a linear output over code+genre vectors.
pub fn stage2_encode(vectors: &AnimeVectors, config: &StageConfig) -> Result<StageOutput, EmbeddingError> {
    encode_stage(vectors, config, Activation::None, LossKind::Unmasked, Stage::Final)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Users with more than `t` ratings feed stage one.
    pub t: usize,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

impl EmbeddingConfig {
    /// Both stages share the code width `d`.
    pub fn with_dims(t: usize, d: usize) -> Self {
        let stage = StageConfig {
            d,
            widths: None,
            train: TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            },
        };
        Self {
            t,
            stage1: stage.clone(),
            stage2: StageConfig {
                train: TrainConfig {
                    seed: 1,
                    ..stage.train.clone()
                },
                ..stage
            },
        }
    }
}

/// Provenance stored beside the embedding block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub t: usize,
    pub m: usize,
    pub d: usize,
    pub g: usize,
    pub stage1_seed: u64,
    pub stage2_seed: u64,
    pub genre_vocabulary: Vec<String>,
    pub primary_model_sha256: Option<String>,
    pub stage1_model_sha256: String,
    pub stage2_model_sha256: String,
    pub count: usize,
    /// Hex SHA-256 of the little-endian value block.
    pub values_sha256: String,
}

/// Final embeddings, one row per catalog title in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub manifest: EmbeddingManifest,
    ids: Vec<AnimeId>,
    index: HashMap<AnimeId, usize>,
    values: Array2<f32>,
}

impl EmbeddingSet {
    /// Builds a set from unordered rows; rows are sorted by id.
    pub fn new(
        ids: Vec<AnimeId>,
        values: Array2<f32>,
        mut manifest: EmbeddingManifest,
    ) -> Result<Self, EmbeddingError> {
        if ids.len() != values.nrows() {
            return Err(EmbeddingError::Format(format!(
                "{} ids for {} rows",
                ids.len(),
                values.nrows()
            )));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by_key(|&i| ids[i]);
        if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
            return Err(EmbeddingError::Format("duplicate title id".into()));
        }
        let sorted_ids: Vec<AnimeId> = order.iter().map(|&i| ids[i]).collect();
        let sorted = values.select(ndarray::Axis(0), &order);
        manifest.count = sorted_ids.len();
        manifest.d = sorted.ncols();
        manifest.values_sha256 = sha256_hex(&values_to_bytes(&sorted));
        Ok(Self::from_sorted(sorted_ids, sorted, manifest))
    }

    fn from_sorted(ids: Vec<AnimeId>, values: Array2<f32>, manifest: EmbeddingManifest) -> Self {
        let index = ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        Self {
            manifest,
            ids,
            index,
            values,
        }
    }

    /// Plain embeddings with an empty manifest, for tests and tools.
    pub fn from_points(ids: Vec<AnimeId>, values: Array2<f32>) -> Result<Self, EmbeddingError> {
        let manifest = EmbeddingManifest {
            t: 0,
            m: 0,
            d: values.ncols(),
            g: 0,
            stage1_seed: 0,
            stage2_seed: 0,
            genre_vocabulary: Vec::new(),
            primary_model_sha256: None,
            stage1_model_sha256: String::new(),
            stage2_model_sha256: String::new(),
            count: ids.len(),
            values_sha256: String::new(),
        };
        Self::new(ids, values, manifest)
    }

    pub fn ids(&self) -> &[AnimeId] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn position(&self, id: AnimeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: AnimeId) -> Option<ArrayView1<'_, f32>> {
        self.position(id).map(|i| self.values.row(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        values_to_bytes(&self.values)
    }

    /// Inverse of [`EmbeddingSet::to_bytes`]; ids are the manifest's
    /// catalog order and must be ascending.
    pub fn from_bytes(
        manifest: EmbeddingManifest,
        ids: Vec<AnimeId>,
        bytes: &[u8],
    ) -> Result<Self, EmbeddingError> {
        let expected = manifest.count * manifest.d * 4;
        if ids.len() != manifest.count || bytes.len() != expected {
            return Err(EmbeddingError::Format(format!(
                "expected {} titles / {expected} bytes, got {} / {}",
                manifest.count,
                ids.len(),
                bytes.len()
            )));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EmbeddingError::Format("ids not strictly ascending".into()));
        }
        if sha256_hex(bytes) != manifest.values_sha256 {
            return Err(EmbeddingError::Format("embedding digest mismatch".into()));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let values = Array2::from_shape_vec((manifest.count, manifest.d), floats)
            .map_err(|e| EmbeddingError::Format(e.to_string()))?;
        Ok(Self::from_sorted(ids, values, manifest))
    }
}

fn values_to_bytes(values: &Array2<f32>) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Everything the pipeline trained, kept for provenance and reporting.
#[derive(Debug, Clone)]
pub struct EmbeddingRun {
    pub set: EmbeddingSet,
    pub top_users: Vec<usize>,
    pub stage1: StageOutput,
    pub stage2: StageOutput,
}

/// Runs select → vectors → stage one → genres → stage two.
pub fn build_embeddings(
    matrix: &RatingMatrix,
    genres: &GenreMatrix,
    config: &EmbeddingConfig,
    primary_model_sha256: Option<String>,
) -> Result<EmbeddingRun, EmbeddingError> {
    if config.stage1.d != config.stage2.d {
        log::warn!(
            "stage widths differ ({} vs {}); the final code uses stage two's",
            config.stage1.d,
            config.stage2.d
        );
    }
    let top_users = select_top_users(matrix, config.t)?;
    let vectors = build_anime_vectors(matrix, &top_users);
    log::info!("stage one: {} titles x {} top users", vectors.len(), vectors.dim());
    let stage1 = stage1_encode(&vectors, &config.stage1)?;
    let hybrid = append_genres(&stage1.codes, genres)?;
    log::info!("stage two: {} titles x {} features", hybrid.len(), hybrid.dim());
    let stage2 = stage2_encode(&hybrid, &config.stage2)?;
    let manifest = EmbeddingManifest {
        t: config.t,
        m: top_users.len(),
        d: config.stage2.d,
        g: genres.n_genres(),
        stage1_seed: config.stage1.train.seed,
        stage2_seed: config.stage2.train.seed,
        genre_vocabulary: genres.vocabulary().to_vec(),
        primary_model_sha256,
        stage1_model_sha256: sha256_hex(&encode_parameters(&stage1.model)),
        stage2_model_sha256: sha256_hex(&encode_parameters(&stage2.model)),
        count: 0,
        values_sha256: String::new(),
    };
    let set = EmbeddingSet::new(
        stage2.codes.ids.clone(),
        stage2.codes.values.clone(),
        manifest,
    )?;
    Ok(EmbeddingRun {
        set,
        top_users,
        stage1,
        stage2,
    })
}
