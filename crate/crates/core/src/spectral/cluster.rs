use super::affinity::AffinityGraph;
use super::eigen::{lanczos_largest, symmetric_eigen, Eigen, LanczosOptions};
use super::kmeans::{kmeans, KMeansOptions};
use super::SpectralError;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    /// Largest graph solved with the dense eigensolver; bigger graphs use Lanczos.
    pub dense_limit: usize,
    pub kmeans: KMeansOptions,
    pub lanczos: LanczosOptions,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            dense_limit: 3000,
            kmeans: KMeansOptions::default(),
            lanczos: LanczosOptions::default(),
        }
    }
}

/// The `count` smallest eigenpairs of `L_sym = I - D^{-1/2} A D^{-1/2}`.
pub fn laplacian_spectrum(
    graph: &AffinityGraph,
    count: usize,
    options: &SpectralOptions,
) -> Result<Eigen, SpectralError> {
    let n = graph.len();
    if n <= options.dense_limit {
        let mut l = -graph.normalized_adjacency();
        l.diag_mut().mapv_inplace(|v| v + 1.0);
        symmetric_eigen(&l, count)
    } else {
        let mut eig = lanczos_largest(&graph.shifted_operator(), count, options.lanczos)?;
        // Eigenvalue mu of 2I - L is 2 - lambda; flip order back to ascending lambda.
        eig.values = eig.values.iter().rev().map(|mu| 2.0 - mu).collect();
        eig.vectors = eig.vectors.slice(s![.., ..;-1]).to_owned();
        Ok(eig)
    }
}

fn row_normalized(vectors: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut u = vectors.slice(s![.., ..k]).to_owned();
    for mut row in u.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    u
}

/// k-means over the row-normalised first `k` eigenvectors.
pub fn cluster_spectrum(
    spectrum: &Eigen,
    k: usize,
    seed: u64,
    options: &SpectralOptions,
) -> Vec<usize> {
    let u = row_normalized(&spectrum.vectors, k);
    kmeans(&u, k, seed, options.kmeans).labels
}

/// Spectral clustering of `graph` into `k` clusters.
pub fn spectral_cluster(graph: &AffinityGraph, k: usize, seed: u64) -> Result<Vec<usize>, SpectralError> {
    spectral_cluster_with(graph, k, seed, &SpectralOptions::default())
}

pub fn spectral_cluster_with(
    graph: &AffinityGraph,
    k: usize,
    seed: u64,
    options: &SpectralOptions,
) -> Result<Vec<usize>, SpectralError> {
    if k < 2 || k > graph.len() {
        return Err(SpectralError::Input(format!(
            "k must lie in 2..={}, got {k}",
            graph.len()
        )));
    }
    let components = graph.components().into_iter().max().map_or(0, |c| c + 1);
    if components > k {
        return Err(SpectralError::Input(format!(
            "graph has {components} components, more than k = {k}"
        )));
    }
    let spectrum = laplacian_spectrum(graph, k, options)?;
    Ok(cluster_spectrum(&spectrum, k, seed, options))
}

pub fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// A cluster count proposed by the eigengap, with the partition it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCandidate {
    pub k: usize,
    /// Eigengap `λ_{k+1} - λ_k`.
    pub significance: f64,
    pub smallest_cluster: usize,
    #[serde(skip)]
    pub labels: Vec<usize>,
}

/// Gaps closer than this are treated as equal and ordered by ascending k.
const GAP_RESOLUTION: f64 = 1e-9;

/// Up to three cluster counts in `2..=k_max`, by descending eigengap, whose
/// partitions keep every cluster at least `min_cluster_size` large.
pub fn optimal_k_candidates(
    graph: &AffinityGraph,
    min_cluster_size: usize,
    k_max: usize,
    seed: u64,
    options: &SpectralOptions,
) -> Result<Vec<KCandidate>, SpectralError> {
    let n = graph.len();
    if k_max < 2 || k_max >= n {
        return Err(SpectralError::Input(format!(
            "k_max must lie in 2..{n}, got {k_max}"
        )));
    }
    let spectrum = laplacian_spectrum(graph, k_max + 1, options)?;
    let lambda = &spectrum.values;
    let mut order: Vec<(usize, f64)> = (2..=k_max).map(|k| (k, lambda[k] - lambda[k - 1])).collect();
    order.sort_by_key(|&(k, gap)| (std::cmp::Reverse((gap / GAP_RESOLUTION).round() as i64), k));

    let mut out = Vec::new();
    for (k, gap) in order {
        let labels = cluster_spectrum(&spectrum, k, seed, options);
        let smallest = cluster_sizes(&labels, k).into_iter().min().unwrap_or(0);
        log::debug!("k = {k}: gap {gap:.6}, smallest cluster {smallest}");
        if smallest >= min_cluster_size {
            out.push(KCandidate {
                k,
                significance: gap,
                smallest_cluster: smallest,
                labels,
            });
            if out.len() == 3 {
                break;
            }
        }
    }
    if out.is_empty() {
        return Err(SpectralError::NoCandidate {
            min_cluster_size,
            k_max,
        });
    }
    Ok(out)
}
