//! Catalog, user and rating corpora: parsing, cleansing and the sparse
//! matrices consumed by the rest of the pipeline.

mod cleanse;
mod matrix;
mod movielens;
mod parse;
mod split;

pub use cleanse::{cleanse, CleanseReport, Corpus};
pub use matrix::{
    build_matrices, encode_demographics, BuildReport, GenreMatrix, RatingMatrix,
    DEMOGRAPHIC_COLUMNS,
};
pub use movielens::{load_movielens_100k, MovieLensReport};
pub use parse::{
    parse_anime, parse_catalog, parse_ratings, parse_users, write_anime_csv, write_ratings_csv,
    write_users_csv, MalformedRow, ParseOptions, ParseReport, ParsedCorpus,
};
pub use split::{split_train_test, HeldOut};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub type AnimeId = u32;
pub type UserId = u32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header, expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("cleansing left an empty corpus: {0}")]
    EmptyAfterCleansing(String),
    #[error("holdout fraction must lie strictly between 0 and 1, got {0}")]
    HoldoutFraction(f64),
    #[error("rating references unknown {kind} {id}")]
    UnknownReference { kind: &'static str, id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Male encodes as 0, female as 1.
    pub fn code(self) -> u8 {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Watched,
    Dropped,
    PlanToWatch,
    Other,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Watched => "watched",
            Status::Dropped => "dropped",
            Status::PlanToWatch => "plan_to_watch",
            Status::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "watched" => Some(Status::Watched),
            "dropped" => Some(Status::Dropped),
            "plan_to_watch" => Some(Status::PlanToWatch),
            "other" => Some(Status::Other),
            _ => None,
        }
    }
}

/// One catalog record. `None` studio or source means UNKNOWN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimeTitle {
    pub anime_id: AnimeId,
    pub name: String,
    /// Sorted, deduplicated genre labels.
    pub genres: Vec<String>,
    pub studio: Option<String>,
    pub source: Option<String>,
    pub mean_score: Option<f64>,
    pub members: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub gender: Gender,
    pub age_category: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingEntry {
    pub user_id: UserId,
    pub anime_id: AnimeId,
    /// 1..=10, or 0 for unrated.
    pub score: u8,
    pub status: Status,
    pub timestamp: i64,
}

/// Age bands: <11, 11..16, 16..20, 20..27, >=27.
pub fn age_to_category(age: u32) -> u8 {
    match age {
        0..=10 => 1,
        11..=15 => 2,
        16..=19 => 3,
        20..=26 => 4,
        _ => 5,
    }
}
