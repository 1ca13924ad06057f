//! On-disk knowledge base: one directory, one file per artifact, and a
//! manifest holding the SHA-256 of each. Profiles live beside it as
//! append-only JSON-lines logs (see [`ProfileStore`]).
//!
//! ```text
//! manifest.json              artifact digests + build settings
//! catalog.csv users.csv ratings.csv
//! model.manifest.json model.f32 metrics.json
//! embeddings.manifest.json embeddings.f32
//! clusters.json
//! profiles/<session>.jsonl
//! ```

mod profiles;

pub use profiles::{FeedbackEntry, ProfileEvent, ProfileStore, StoredProfile};

use crate::autonet::{
    decode_model, encode_parameters, sha256_hex, ArchitectureConfig, Autoencoder, ModelManifest,
    TrainConfig,
};
use crate::dataset::{
    build_matrices, parse_anime, write_anime_csv, AnimeId, AnimeTitle, Corpus, GenreMatrix,
    ParseReport, RatingEntry, RatingMatrix, UserRecord, DEMOGRAPHIC_COLUMNS,
};
use crate::embedding::{EmbeddingConfig, EmbeddingManifest, EmbeddingSet};
use crate::evaluate::ErrorMetrics;
use crate::hybridfilter::Catalog;
use crate::spectral::{ClusterConfig, ClusterModel};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST: &str = "manifest.json";
pub const CATALOG: &str = "catalog.csv";
pub const USERS: &str = "users.csv";
pub const RATINGS: &str = "ratings.csv";
pub const MODEL_MANIFEST: &str = "model.manifest.json";
pub const MODEL_BLOB: &str = "model.f32";
pub const METRICS: &str = "metrics.json";
pub const EMBEDDINGS_MANIFEST: &str = "embeddings.manifest.json";
pub const EMBEDDINGS_BLOB: &str = "embeddings.f32";
pub const CLUSTERS: &str = "clusters.json";
pub const PROFILES_DIR: &str = "profiles";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("knowledge base is missing {0}")]
    Missing(String),
    #[error("corrupt knowledge base: {artifact}: {reason}")]
    Corrupt { artifact: String, reason: String },
    #[error("invalid knowledge base: {0}")]
    Invalid(String),
    #[error("unknown session {0}")]
    SessionNotFound(String),
    #[error("malformed session id {0:?}")]
    SessionId(String),
    #[error("session {0} already exists")]
    SessionExists(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(artifact: &str, reason: impl ToString) -> KbError {
    KbError::Corrupt {
        artifact: artifact.to_string(),
        reason: reason.to_string(),
    }
}

/// Settings behind the primary rating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimaryBuild {
    pub architecture: ArchitectureConfig,
    pub training: TrainConfig,
    pub holdout_fraction: f64,
    pub split_seed: u64,
}

/// Settings recorded by each pipeline stage that has run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub min_ratings_per_user: Option<usize>,
    pub primary: Option<PrimaryBuild>,
    pub embedding: Option<EmbeddingConfig>,
    pub clusters: Option<ClusterConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    /// File name → hex SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub build: BuildInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    /// Training item column order; input width is the demographic prefix
    /// plus one column per id.
    item_ids: Vec<AnimeId>,
    model: ModelManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingsFile {
    ids: Vec<AnimeId>,
    manifest: EmbeddingManifest,
}

/// The trained rating model and the item order of its input columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryModel {
    pub model: Autoencoder<f32>,
    pub manifest: ModelManifest,
    pub item_ids: Vec<AnimeId>,
}

impl PrimaryModel {
    /// A matrix with the model's column layout and no users, for building
    /// live input rows.
    pub fn column_layout(&self) -> RatingMatrix {
        RatingMatrix::new(Vec::new(), self.item_ids.clone())
    }
}

/// Held-out errors recorded when the primary model was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutMetrics {
    pub model: ErrorMetrics,
    pub global_average: ErrorMetrics,
    pub user_average: ErrorMetrics,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub catalog: Vec<AnimeTitle>,
    pub users: Vec<UserRecord>,
    pub ratings: Vec<RatingEntry>,
    pub primary: Option<PrimaryModel>,
    pub metrics: Option<HeldoutMetrics>,
    pub embeddings: Option<EmbeddingSet>,
    pub clusters: Option<ClusterModel>,
    pub build: BuildInfo,
}

impl KnowledgeBase {
    /// A base holding only the cleansed corpus.
    pub fn from_corpus(corpus: Corpus, min_ratings_per_user: usize) -> Self {
        let mut catalog = corpus.titles;
        catalog.sort_by_key(|t| t.anime_id);
        Self {
            catalog,
            users: corpus.users,
            ratings: corpus.ratings,
            primary: None,
            metrics: None,
            embeddings: None,
            clusters: None,
            build: BuildInfo {
                min_ratings_per_user: Some(min_ratings_per_user),
                ..BuildInfo::default()
            },
        }
    }

    pub fn corpus(&self) -> Corpus {
        Corpus {
            titles: self.catalog.clone(),
            users: self.users.clone(),
            ratings: self.ratings.clone(),
        }
    }

    pub fn matrices(&self) -> (RatingMatrix, GenreMatrix) {
        let (m, g, _) = build_matrices(&self.corpus());
        (m, g)
    }

    pub fn genre_vocabulary(&self) -> Vec<String> {
        GenreMatrix::from_titles(self.catalog.iter().map(|t| (t.anime_id, t.genres.as_slice())))
            .vocabulary()
            .to_vec()
    }

    pub fn catalog_view(&self) -> Catalog {
        Catalog::new(self.catalog.clone())
    }

    /// Cross-reference checks run on every load.
    pub fn validate(&self) -> Result<(), KbError> {
        let bad = |m: String| Err(KbError::Invalid(m));
        if self.catalog.is_empty() {
            return bad("empty catalog".into());
        }
        let ids: HashSet<AnimeId> = self.catalog.iter().map(|t| t.anime_id).collect();
        if ids.len() != self.catalog.len() {
            return bad("duplicate title id in catalog".into());
        }
        let users: HashSet<u32> = self.users.iter().map(|u| u.user_id).collect();
        if let Some(r) = self
            .ratings
            .iter()
            .find(|r| !ids.contains(&r.anime_id) || !users.contains(&r.user_id))
        {
            return bad(format!("rating ({}, {}) references an unknown user or title", r.user_id, r.anime_id));
        }
        if let Some(p) = &self.primary {
            if let Some(id) = p.item_ids.iter().find(|id| !ids.contains(id)) {
                return bad(format!("rating model column {id} is not in the catalog"));
            }
            if p.model.input_dim() != DEMOGRAPHIC_COLUMNS + p.item_ids.len() {
                return bad(format!(
                    "rating model takes {} inputs but lists {} item columns",
                    p.model.input_dim(),
                    p.item_ids.len()
                ));
            }
        }
        if let Some(e) = &self.embeddings {
            if let Some(id) = e.ids().iter().find(|id| !ids.contains(id)) {
                return bad(format!("embedded title {id} is not in the catalog"));
            }
            let vocab = self.genre_vocabulary();
            if e.manifest.genre_vocabulary != vocab {
                return bad(format!(
                    "embeddings were built with genre vocabulary {:?}, catalog has {:?}",
                    e.manifest.genre_vocabulary, vocab
                ));
            }
        }
        if let Some(c) = &self.clusters {
            c.validate().map_err(|e| KbError::Invalid(format!("clusters: {e}")))?;
            let Some(e) = &self.embeddings else {
                return bad("clusters present without embeddings".into());
            };
            let same = c.assignment.len() == e.len()
                && c.assignment.iter().zip(e.ids()).all(|(a, &b)| a.0 == b);
            if !same {
                return bad("cluster assignment does not cover exactly the embedded titles".into());
            }
        }
        Ok(())
    }

    fn artifacts(&self) -> Result<Vec<(&'static str, Vec<u8>)>, KbError> {
        let mut out = Vec::new();
        let mut buf = Vec::new();
        write_anime_csv(&mut buf, &self.catalog).map_err(|e| corrupt(CATALOG, e))?;
        out.push((CATALOG, buf));
        out.push((USERS, write_records(&self.users).map_err(|e| corrupt(USERS, e))?));
        out.push((RATINGS, write_records(&self.ratings).map_err(|e| corrupt(RATINGS, e))?));
        if let Some(p) = &self.primary {
            let file = ModelFile {
                item_ids: p.item_ids.clone(),
                model: p.manifest.clone(),
            };
            out.push((MODEL_MANIFEST, json(&file)));
            out.push((MODEL_BLOB, encode_parameters(&p.model)));
        }
        if let Some(m) = &self.metrics {
            out.push((METRICS, json(m)));
        }
        if let Some(e) = &self.embeddings {
            let file = EmbeddingsFile {
                ids: e.ids().to_vec(),
                manifest: e.manifest.clone(),
            };
            out.push((EMBEDDINGS_MANIFEST, json(&file)));
            out.push((EMBEDDINGS_BLOB, e.to_bytes()));
        }
        if let Some(c) = &self.clusters {
            out.push((CLUSTERS, json(c)));
        }
        Ok(out)
    }

    /// Writes every artifact to a temporary file, then renames them into
    /// place with the manifest last. Returns the manifest's SHA-256, which
    /// depends only on content.
    pub fn save(&self, dir: &Path) -> Result<String, KbError> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let artifacts = self.artifacts()?;
        let manifest = Manifest {
            format: FORMAT_VERSION,
            artifacts: artifacts
                .iter()
                .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
                .collect(),
            build: self.build.clone(),
        };
        let manifest_bytes = json(&manifest);
        let digest = sha256_hex(&manifest_bytes);

        let mut staged = Vec::new();
        for (name, bytes) in artifacts.iter().map(|(n, b)| (*n, b.as_slice())).chain([(MANIFEST, manifest_bytes.as_slice())]) {
            let tmp = dir.join(format!(".{name}.tmp"));
            if let Err(e) = fs::write(&tmp, bytes) {
                for t in staged.iter().map(|(t, _): &(PathBuf, &str)| t).chain([&tmp]) {
                    let _ = fs::remove_file(t);
                }
                return Err(io_err(&tmp)(e));
            }
            staged.push((tmp, name));
        }
        for (tmp, name) in staged {
            let target = dir.join(name);
            fs::rename(&tmp, &target).map_err(io_err(&target))?;
        }
        Ok(digest)
    }

    /// Reads and fully validates a saved base.
    pub fn load(dir: &Path) -> Result<Self, KbError> {
        Ok(Self::load_with_digest(dir)?.0)
    }

    /// [`KnowledgeBase::load`] plus the manifest's SHA-256.
    pub fn load_with_digest(dir: &Path) -> Result<(Self, String), KbError> {
        let manifest_path = dir.join(MANIFEST);
        let manifest_bytes = match fs::read(&manifest_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(KbError::Missing(manifest_path.display().to_string()))
            }
            Err(e) => return Err(io_err(&manifest_path)(e)),
        };
        let manifest: Manifest =
            serde_json::from_slice(&manifest_bytes).map_err(|e| corrupt(MANIFEST, e))?;
        if manifest.format != FORMAT_VERSION {
            return Err(corrupt(MANIFEST, format!("unsupported format {}", manifest.format)));
        }
        for name in manifest.artifacts.keys() {
            if !KNOWN.contains(&name.as_str()) {
                return Err(corrupt(MANIFEST, format!("unknown artifact {name}")));
            }
        }
        let read = |name: &str| -> Result<Option<Vec<u8>>, KbError> {
            let Some(expected) = manifest.artifacts.get(name) else {
                return Ok(None);
            };
            let path = dir.join(name);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(KbError::Missing(name.to_string())),
                Err(e) => return Err(io_err(&path)(e)),
            };
            if &sha256_hex(&bytes) != expected {
                return Err(corrupt(name, "content hash does not match the manifest"));
            }
            Ok(Some(bytes))
        };
        let required = |name: &str| read(name)?.ok_or_else(|| KbError::Missing(name.to_string()));

        let catalog_bytes = required(CATALOG)?;
        let mut report = ParseReport::default();
        let catalog = parse_anime(catalog_bytes.as_slice(), Path::new(CATALOG), &mut report)
            .map_err(|e| corrupt(CATALOG, e))?;
        if let Some(m) = report.malformed.first() {
            return Err(corrupt(CATALOG, format!("line {}: {}", m.line, m.reason)));
        }
        let users = read_records(&required(USERS)?).map_err(|e| corrupt(USERS, e))?;
        let ratings = read_records(&required(RATINGS)?).map_err(|e| corrupt(RATINGS, e))?;

        let primary = match (read(MODEL_MANIFEST)?, read(MODEL_BLOB)?) {
            (None, None) => None,
            (Some(meta), Some(blob)) => {
                let file: ModelFile = serde_json::from_slice(&meta).map_err(|e| corrupt(MODEL_MANIFEST, e))?;
                let model = decode_model(&file.model, &blob).map_err(|e| corrupt(MODEL_BLOB, e))?;
                Some(PrimaryModel {
                    model,
                    manifest: file.model,
                    item_ids: file.item_ids,
                })
            }
            (None, _) => return Err(KbError::Missing(MODEL_MANIFEST.into())),
            (_, None) => return Err(KbError::Missing(MODEL_BLOB.into())),
        };
        let metrics = read(METRICS)?
            .map(|b| serde_json::from_slice(&b).map_err(|e| corrupt(METRICS, e)))
            .transpose()?;
        let embeddings = match (read(EMBEDDINGS_MANIFEST)?, read(EMBEDDINGS_BLOB)?) {
            (None, None) => None,
            (Some(meta), Some(blob)) => {
                let file: EmbeddingsFile =
                    serde_json::from_slice(&meta).map_err(|e| corrupt(EMBEDDINGS_MANIFEST, e))?;
                Some(
                    EmbeddingSet::from_bytes(file.manifest, file.ids, &blob)
                        .map_err(|e| corrupt(EMBEDDINGS_BLOB, e))?,
                )
            }
            (None, _) => return Err(KbError::Missing(EMBEDDINGS_MANIFEST.into())),
            (_, None) => return Err(KbError::Missing(EMBEDDINGS_BLOB.into())),
        };
        let clusters = read(CLUSTERS)?
            .map(|b| serde_json::from_slice(&b).map_err(|e| corrupt(CLUSTERS, e)))
            .transpose()?;

        let kb = Self {
            catalog,
            users,
            ratings,
            primary,
            metrics,
            embeddings,
            clusters,
            build: manifest.build,
        };
        kb.validate()?;
        Ok((kb, sha256_hex(&manifest_bytes)))
    }

    pub fn profiles(dir: &Path) -> ProfileStore {
        ProfileStore::new(dir.join(PROFILES_DIR))
    }
}

const KNOWN: [&str; 10] = [
    CATALOG,
    USERS,
    RATINGS,
    MODEL_MANIFEST,
    MODEL_BLOB,
    METRICS,
    EMBEDDINGS_MANIFEST,
    EMBEDDINGS_BLOB,
    CLUSTERS,
    MANIFEST,
];

fn write_records<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

fn read_records<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(bytes).deserialize().collect()
}

/// Pretty JSON with a trailing newline; key order follows field order and
/// `BTreeMap` ordering, so equal values give equal bytes.
fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

#[cfg(test)]
mod tests;
