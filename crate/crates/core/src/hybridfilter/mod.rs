//! Combines predicted ratings with cluster membership into two lists:
//! unrated titles inside the clusters picked by the user's latest ratings
//! ("similar"), and the best unrated titles outside them ("may like").

use crate::dataset::{encode_demographics, AnimeId, AnimeTitle, Gender, RatingMatrix, DEMOGRAPHIC_COLUMNS};
use crate::spectral::ClusterModel;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("score {0} outside 1..=10")]
    Score(u8),
    #[error("age category {0} outside 1..=5")]
    AgeCategory(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRating {
    pub anime_id: AnimeId,
    pub score: u8,
    /// Logical time; larger is later.
    pub timestamp: u64,
}

/// A user's demographics and ratings, oldest first, one entry per title.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub gender: Gender,
    pub age_category: u8,
    ratings: Vec<ProfileRating>,
}

impl UserProfile {
    pub fn new(id: impl Into<String>, gender: Gender, age_category: u8) -> Result<Self, ProfileError> {
        if !(1..=5).contains(&age_category) {
            return Err(ProfileError::AgeCategory(age_category));
        }
        Ok(Self {
            id: id.into(),
            gender,
            age_category,
            ratings: Vec::new(),
        })
    }

    /// Records a rating; re-rating a title replaces it and moves it to the end.
    pub fn rate(&mut self, anime_id: AnimeId, score: u8, timestamp: u64) -> Result<(), ProfileError> {
        if !(1..=10).contains(&score) {
            return Err(ProfileError::Score(score));
        }
        self.ratings.retain(|r| r.anime_id != anime_id);
        self.ratings.push(ProfileRating {
            anime_id,
            score,
            timestamp,
        });
        Ok(())
    }

    pub fn ratings(&self) -> &[ProfileRating] {
        &self.ratings
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// One past the latest timestamp, 0 for an empty profile.
    pub fn next_timestamp(&self) -> u64 {
        self.ratings.iter().map(|r| r.timestamp + 1).max().unwrap_or(0)
    }

    pub fn score_of(&self, anime_id: AnimeId) -> Option<u8> {
        self.ratings.iter().find(|r| r.anime_id == anime_id).map(|r| r.score)
    }

    /// The latest `n` ratings, oldest of them first.
    pub fn recent(&self, n: usize) -> &[ProfileRating] {
        &self.ratings[self.ratings.len().saturating_sub(n)..]
    }

    pub fn demographics(&self) -> [f32; DEMOGRAPHIC_COLUMNS] {
        encode_demographics(self.gender.code(), self.age_category)
    }

    /// Model input row laid out like the training matrix: demographic
    /// prefix, then one column per training item. Ratings for titles the
    /// matrix does not know are ignored.
    pub fn input_row(&self, matrix: &RatingMatrix) -> Vec<f32> {
        let mut row = vec![0.0; matrix.width()];
        row[..DEMOGRAPHIC_COLUMNS].copy_from_slice(&self.demographics());
        for r in &self.ratings {
            if let Some(c) = matrix.column_of(r.anime_id) {
                row[DEMOGRAPHIC_COLUMNS + c] = f32::from(r.score);
            }
        }
        row
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recommended {
    pub anime_id: AnimeId,
    /// Absent for popularity-only (cold-start) picks.
    pub predicted_rating: Option<f32>,
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Recommendations {
    pub similar: Vec<Recommended>,
    pub may_like: Vec<Recommended>,
    pub cold_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Scores at or above this pick the title's own cluster.
    pub like_threshold: u8,
    pub limit: usize,
    /// How many of the latest ratings select clusters.
    pub recent: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            like_threshold: 7,
            limit: 10,
            recent: 3,
        }
    }
}

/// Own cluster for a liked title, its opposite cluster otherwise.
pub fn choose_cluster(score: u8, anime_id: AnimeId, model: &ClusterModel, like_threshold: u8) -> Option<usize> {
    if score >= like_threshold {
        model.cluster_of(anime_id)
    } else {
        model.opposite_of(anime_id)
    }
}

/// Catalog lookups used for ranking.
#[derive(Debug, Clone)]
pub struct Catalog {
    titles: Vec<AnimeTitle>,
    index: HashMap<AnimeId, usize>,
}

impl Catalog {
    /// Titles are kept in ascending id order.
    pub fn new(mut titles: Vec<AnimeTitle>) -> Self {
        titles.sort_by_key(|t| t.anime_id);
        let index = titles.iter().enumerate().map(|(i, t)| (t.anime_id, i)).collect();
        Self { titles, index }
    }

    pub fn titles(&self) -> &[AnimeTitle] {
        &self.titles
    }

    pub fn len(&self) -> usize {
        self.titles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }

    pub fn get(&self, id: AnimeId) -> Option<&AnimeTitle> {
        self.index.get(&id).map(|&i| &self.titles[i])
    }

    pub fn position(&self, id: AnimeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Case-insensitive substring search over names, most popular first
    /// (ties by id).
    pub fn search(&self, query: &str, limit: usize) -> Vec<&AnimeTitle> {
        let needle = query.to_lowercase();
        let mut hits: Vec<&AnimeTitle> = self
            .titles
            .iter()
            .filter(|t| t.name.to_lowercase().contains(&needle))
            .collect();
        hits.sort_by(|a, b| b.members.cmp(&a.members).then(a.anime_id.cmp(&b.anime_id)));
        hits.truncate(limit);
        hits
    }
}

fn rank(a: &(f32, u64, AnimeId), b: &(f32, u64, AnimeId)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(b.1.cmp(&a.1))
        .then(a.2.cmp(&b.2))
}

/// Both lists for a profile. `predictions[i]` is the predicted rating of
/// `catalog.titles()[i]`. An empty profile gets [`cold_start`].
pub fn recommend(
    profile: &UserProfile,
    catalog: &Catalog,
    predictions: &[f32],
    model: &ClusterModel,
    config: &FilterConfig,
) -> Recommendations {
    assert_eq!(predictions.len(), catalog.len(), "one prediction per catalog title");
    if profile.is_empty() {
        return cold_start(catalog, config.limit);
    }
    let rated: HashSet<AnimeId> = profile.ratings().iter().map(|r| r.anime_id).collect();
    let chosen: BTreeSet<usize> = profile
        .recent(config.recent)
        .iter()
        .filter_map(|r| choose_cluster(r.score, r.anime_id, model, config.like_threshold))
        .collect();

    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for (t, &p) in catalog.titles().iter().zip(predictions) {
        if rated.contains(&t.anime_id) {
            continue;
        }
        let key = (p, t.members, t.anime_id);
        match model.cluster_of(t.anime_id) {
            Some(c) if chosen.contains(&c) => inside.push(key),
            _ => outside.push(key),
        }
    }
    let finish = |mut keys: Vec<(f32, u64, AnimeId)>| -> Vec<Recommended> {
        keys.sort_by(rank);
        keys.truncate(config.limit);
        keys.into_iter()
            .map(|(p, _, id)| Recommended {
                anime_id: id,
                predicted_rating: Some(p),
                cluster: model.cluster_of(id),
            })
            .collect()
    };
    Recommendations {
        similar: finish(inside),
        may_like: finish(outside),
        cold_start: false,
    }
}

/// Each genre's most popular title (ties by mean score, then id), ranked by
/// popularity; the first `limit` are "similar", the next `limit` "may like".
pub fn cold_start(catalog: &Catalog, limit: usize) -> Recommendations {
    let better = |a: &AnimeTitle, b: &AnimeTitle| -> bool {
        let sa = a.mean_score.unwrap_or(f64::NEG_INFINITY);
        let sb = b.mean_score.unwrap_or(f64::NEG_INFINITY);
        a.members
            .cmp(&b.members)
            .then(sa.total_cmp(&sb))
            .then(b.anime_id.cmp(&a.anime_id))
            == Ordering::Greater
    };
    let mut champions: HashMap<&str, &AnimeTitle> = HashMap::new();
    for t in catalog.titles() {
        for g in &t.genres {
            let slot = champions.entry(g.as_str()).or_insert(t);
            if better(t, slot) {
                *slot = t;
            }
        }
    }
    let mut picks: Vec<&AnimeTitle> = champions.into_values().collect();
    picks.sort_by_key(|t| t.anime_id);
    picks.dedup_by_key(|t| t.anime_id);
    picks.sort_by(|a, b| b.members.cmp(&a.members).then(a.anime_id.cmp(&b.anime_id)));
    let item = |t: &&AnimeTitle| Recommended {
        anime_id: t.anime_id,
        predicted_rating: None,
        cluster: None,
    };
    Recommendations {
        similar: picks.iter().take(limit).map(item).collect(),
        may_like: picks.iter().skip(limit).take(limit).map(item).collect(),
        cold_start: true,
    }
}

/// Fills in predicted ratings (and clusters) on popularity-only picks,
/// keeping their order.
pub fn annotate(recs: &mut Recommendations, catalog: &Catalog, predictions: &[f32], model: &ClusterModel) {
    for r in recs.similar.iter_mut().chain(recs.may_like.iter_mut()) {
        if let Some(i) = catalog.position(r.anime_id) {
            r.predicted_rating.get_or_insert(predictions[i]);
        }
        r.cluster = r.cluster.or_else(|| model.cluster_of(r.anime_id));
    }
}
