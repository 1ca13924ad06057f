//! Spectral clustering of title embeddings over a kNN graph, eigengap-based
//! choice of the cluster count, and per-title opposite clusters.

mod affinity;
mod cluster;
pub mod eigen;
mod kmeans;
mod opposite;

pub use affinity::{knn_affinity, AffinityGraph};
pub use cluster::{
    cluster_sizes, cluster_spectrum, laplacian_spectrum, optimal_k_candidates, spectral_cluster,
    spectral_cluster_with, KCandidate, SpectralOptions,
};
pub use kmeans::{adjusted_rand_index, kmeans, kmeans_plus_plus, KMeansOptions, KMeansResult};
pub use opposite::{
    centroid, d_metric, opposite_anime, opposite_clusters_all, opposite_scores, OppositeScore,
    RATIO_EPSILON,
};

use crate::dataset::AnimeId;
use crate::embedding::EmbeddingSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("{0}")]
    Input(String),
    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),
    #[error("no k in 2..={k_max} keeps every cluster at {min_cluster_size}+ titles; lower the minimum cluster size")]
    NoCandidate { min_cluster_size: usize, k_max: usize },
    #[error("unknown title {0}")]
    UnknownTitle(AnimeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_neighbors: usize,
    pub min_cluster_size: usize,
    /// Largest k considered; defaults to `n / min_cluster_size`.
    pub k_max: Option<usize>,
    /// Overrides the eigengap choice.
    pub k: Option<usize>,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 10,
            min_cluster_size: 4,
            k_max: None,
            k: None,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn effective_k_max(&self, n: usize) -> usize {
        let limit = n.saturating_sub(1);
        self.k_max
            .unwrap_or(n / self.min_cluster_size.max(1))
            .clamp(2.min(limit), limit)
    }
}

/// Cluster assignment, centroid and opposite clusters, keyed by title id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub min_cluster_size: usize,
    pub seed: u64,
    /// `(anime_id, cluster)` ascending by id.
    pub assignment: Vec<(AnimeId, usize)>,
    /// `(anime_id, opposite cluster)` ascending by id; empty until computed.
    pub opposite: Vec<(AnimeId, usize)>,
    pub centroid: Vec<f64>,
}

fn lookup(pairs: &[(AnimeId, usize)], id: AnimeId) -> Option<usize> {
    pairs
        .binary_search_by_key(&id, |p| p.0)
        .ok()
        .map(|i| pairs[i].1)
}

impl ClusterModel {
    pub fn cluster_of(&self, id: AnimeId) -> Option<usize> {
        lookup(&self.assignment, id)
    }

    pub fn opposite_of(&self, id: AnimeId) -> Option<usize> {
        lookup(&self.opposite, id)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = AnimeId> + '_ {
        self.assignment
            .iter()
            .filter(move |p| p.1 == cluster)
            .map(|p| p.0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let labels: Vec<usize> = self.assignment.iter().map(|p| p.1).collect();
        cluster_sizes(&labels, self.k)
    }

    pub fn has_opposites(&self) -> bool {
        !self.opposite.is_empty()
    }

    /// Checks ordering, cluster range, non-empty clusters and, when present,
    /// that the opposite map covers exactly the assigned titles.
    pub fn validate(&self) -> Result<(), SpectralError> {
        let bad = |m: String| Err(SpectralError::Input(m));
        if self.assignment.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("assignment not strictly ascending by id".into());
        }
        if let Some(p) = self.assignment.iter().find(|p| p.1 >= self.k) {
            return bad(format!("title {} in cluster {} >= k = {}", p.0, p.1, self.k));
        }
        if let Some(c) = self.sizes().iter().position(|&s| s == 0) {
            return bad(format!("cluster {c} is empty"));
        }
        if self.has_opposites() {
            let same_ids = self.opposite.len() == self.assignment.len()
                && self.opposite.iter().zip(&self.assignment).all(|(a, b)| a.0 == b.0);
            if !same_ids {
                return bad("opposite map does not cover the assigned titles".into());
            }
            if let Some(p) = self.opposite.iter().find(|p| p.1 >= self.k) {
                return bad(format!("title {} has opposite cluster {} >= k", p.0, p.1));
            }
        }
        Ok(())
    }
}

/// Result of clustering a catalog: the model plus the ranked candidates.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub model: ClusterModel,
    pub candidates: Vec<KCandidate>,
}

/// kNN graph → eigengap candidates → chosen partition. Opposites are left
/// empty; see [`with_opposites`].
pub fn build_clusters(
    embeddings: &EmbeddingSet,
    config: &ClusterConfig,
    options: &SpectralOptions,
) -> Result<Clustering, SpectralError> {
    let graph = knn_affinity(embeddings, config.k_neighbors)?;
    let k_max = config.effective_k_max(graph.len());
    let candidates = match optimal_k_candidates(&graph, config.min_cluster_size, k_max, config.seed, options) {
        Ok(c) => c,
        Err(SpectralError::NoCandidate { .. }) if config.k.is_some() => Vec::new(),
        Err(e) => return Err(e),
    };
    let (k, labels) = match config.k {
        Some(k) => {
            let labels = match candidates.iter().find(|c| c.k == k) {
                Some(c) => c.labels.clone(),
                None => spectral_cluster_with(&graph, k, config.seed, options)?,
            };
            let smallest = cluster_sizes(&labels, k).into_iter().min().unwrap_or(0);
            if smallest < config.min_cluster_size {
                log::warn!(
                    "forced k = {k} leaves a cluster of {smallest} (< {})",
                    config.min_cluster_size
                );
            }
            (k, labels)
        }
        None => (candidates[0].k, candidates[0].labels.clone()),
    };
    let assignment = graph.ids().iter().copied().zip(labels).collect();
    Ok(Clustering {
        model: ClusterModel {
            k,
            min_cluster_size: config.min_cluster_size,
            seed: config.seed,
            assignment,
            opposite: Vec::new(),
            centroid: centroid(embeddings),
        },
        candidates,
    })
}

/// Fills the model's opposite map.
pub fn with_opposites(embeddings: &EmbeddingSet, mut model: ClusterModel) -> Result<ClusterModel, SpectralError> {
    model.opposite = opposite_clusters_all(embeddings, &model)?;
    Ok(model)
}
