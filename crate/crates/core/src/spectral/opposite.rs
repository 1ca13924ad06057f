//! "Logically opposite" titles: for a seed title, the candidate that best
//! mirrors it through the catalog centroid, scored by a distance-ratio term
//! plus a shifted cosine term.

use super::{ClusterModel, SpectralError};
use crate::dataset::AnimeId;
use crate::embedding::EmbeddingSet;

/// Added to the seed's centroid distance so the ratio is always defined.
pub const RATIO_EPSILON: f64 = 1e-9;

/// Mean of all embeddings, in `f64`.
pub fn centroid(embeddings: &EmbeddingSet) -> Vec<f64> {
    let n = embeddings.len().max(1) as f64;
    let mut m = vec![0.0; embeddings.dim()];
    for row in embeddings.values().rows() {
        for (acc, &v) in m.iter_mut().zip(row) {
            *acc += f64::from(v);
        }
    }
    m.iter_mut().for_each(|v| *v /= n);
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OppositeScore {
    pub anime_id: AnimeId,
    /// `1 - r` for `r <= 1`, else `1 - 1/r`, with `r` the distance ratio.
    pub d_metric: f64,
    /// `cos + 1`, or `None` when the seed sits on the centroid.
    pub cosine_metric: Option<f64>,
    pub score: f64,
}

/// `d_metric` for a candidate at distance `di` from the centroid when the
/// seed is at `d0`.
pub fn d_metric(di: f64, d0: f64) -> f64 {
    let r = di / (d0 + RATIO_EPSILON);
    1.0 - if r <= 1.0 { r } else { 1.0 / r }
}

/// Scores of every title other than the one at `seed` (a row index).
pub fn opposite_scores(embeddings: &EmbeddingSet, centroid: &[f64], seed: usize) -> Vec<OppositeScore> {
    let values = embeddings.values();
    let offset = |row: usize| -> Vec<f64> {
        values
            .row(row)
            .iter()
            .zip(centroid)
            .map(|(&v, m)| f64::from(v) - m)
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let v0 = offset(seed);
    let d0 = norm(&v0);
    let degenerate = d0 == 0.0;
    let mut out = Vec::with_capacity(embeddings.len().saturating_sub(1));
    for (i, &id) in embeddings.ids().iter().enumerate() {
        if i == seed {
            continue;
        }
        let vi = offset(i);
        let di = norm(&vi);
        let dm = d_metric(di, d0);
        let cosine_metric = if degenerate {
            None
        } else if di == 0.0 {
            // A candidate on the centroid has no direction; treat it as orthogonal.
            Some(1.0)
        } else {
            let cos = vi.iter().zip(&v0).map(|(a, b)| a * b).sum::<f64>() / (di * d0);
            Some(cos.clamp(-1.0, 1.0) + 1.0)
        };
        out.push(OppositeScore {
            anime_id: id,
            d_metric: dm,
            cosine_metric,
            score: dm + cosine_metric.unwrap_or(0.0),
        });
    }
    out
}

fn best(scores: &[OppositeScore]) -> Option<AnimeId> {
    scores
        .iter()
        .min_by(|a, b| a.score.total_cmp(&b.score).then(a.anime_id.cmp(&b.anime_id)))
        .map(|s| s.anime_id)
}

fn opposite_with_centroid(
    embeddings: &EmbeddingSet,
    centroid: &[f64],
    seed: usize,
) -> AnimeId {
    let scores = opposite_scores(embeddings, centroid, seed);
    if scores.first().is_some_and(|s| s.cosine_metric.is_none()) {
        log::debug!(
            "title {} lies on the centroid; ranking by distance term only",
            embeddings.ids()[seed]
        );
    }
    best(&scores).expect("at least two titles")
}

/// The title with the lowest combined score for seed `a0`; ties go to the
/// smaller id.
pub fn opposite_anime(embeddings: &EmbeddingSet, a0: AnimeId) -> Result<AnimeId, SpectralError> {
    if embeddings.len() < 2 {
        return Err(SpectralError::Input("need at least two titles".into()));
    }
    let seed = embeddings
        .position(a0)
        .ok_or(SpectralError::UnknownTitle(a0))?;
    Ok(opposite_with_centroid(embeddings, &centroid(embeddings), seed))
}

/// Opposite cluster of every title, ascending by id.
pub fn opposite_clusters_all(
    embeddings: &EmbeddingSet,
    model: &ClusterModel,
) -> Result<Vec<(AnimeId, usize)>, SpectralError> {
    if embeddings.len() < 2 {
        return Err(SpectralError::Input("need at least two titles".into()));
    }
    let m = centroid(embeddings);
    let mut out = Vec::with_capacity(embeddings.len());
    for (seed, &id) in embeddings.ids().iter().enumerate() {
        let other = opposite_with_centroid(embeddings, &m, seed);
        let cluster = model
            .cluster_of(other)
            .ok_or(SpectralError::UnknownTitle(other))?;
        out.push((id, cluster));
    }
    Ok(out)
}
