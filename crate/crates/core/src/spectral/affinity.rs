use super::eigen::SymmetricOperator;
use super::SpectralError;
use crate::dataset::AnimeId;
use crate::embedding::EmbeddingSet;
use ndarray::Array2;

/// Symmetric, zero-diagonal, non-negative sparse affinity over titles.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    ids: Vec<AnimeId>,
    /// Neighbour lists sorted by node index.
    edges: Vec<Vec<(usize, f64)>>,
    /// The kNN parameter, or 0 for graphs built from an explicit matrix.
    pub k_neighbors: usize,
}

impl AffinityGraph {
    /// Builds a graph from a dense symmetric matrix; rejects asymmetry, a
    /// nonzero diagonal, negative weights and isolated nodes.
    pub fn from_dense(ids: Vec<AnimeId>, weights: &Array2<f64>) -> Result<Self, SpectralError> {
        let n = ids.len();
        if weights.dim() != (n, n) {
            return Err(SpectralError::Input(format!(
                "{n} ids for a {:?} matrix",
                weights.dim()
            )));
        }
        let mut edges = vec![Vec::new(); n];
        for i in 0..n {
            if weights[[i, i]] != 0.0 {
                return Err(SpectralError::Input(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let w = weights[[i, j]];
                if w != weights[[j, i]] || w < 0.0 || !w.is_finite() {
                    return Err(SpectralError::Input(format!("bad weight at ({i}, {j})")));
                }
                if w > 0.0 {
                    edges[i].push((j, w));
                }
            }
        }
        let graph = Self {
            ids,
            edges,
            k_neighbors: 0,
        };
        graph.check_degrees()?;
        Ok(graph)
    }

    fn check_degrees(&self) -> Result<(), SpectralError> {
        match self.edges.iter().position(Vec::is_empty) {
            Some(i) => Err(SpectralError::Input(format!("title {} has no edges", self.ids[i]))),
            None => Ok(()),
        }
    }

    pub fn ids(&self) -> &[AnimeId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.edges[node]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.edges[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|p| self.edges[i][p].1)
            .unwrap_or(0.0)
    }

    pub fn degree(&self, node: usize) -> f64 {
        self.edges[node].iter().map(|e| e.1).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.len();
        let mut a = Array2::zeros((n, n));
        for (i, row) in self.edges.iter().enumerate() {
            for &(j, w) in row {
                a[[i, j]] = w;
            }
        }
        a
    }

    /// Connected components as a node → component label map; labels follow
    /// first appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.edges[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// `D^{-1/2} A D^{-1/2}` as a dense matrix.
    pub(crate) fn normalized_adjacency(&self) -> Array2<f64> {
        let s = self.inv_sqrt_degrees();
        let n = self.len();
        let mut a = Array2::zeros((n, n));
        for (i, row) in self.edges.iter().enumerate() {
            for &(j, w) in row {
                a[[i, j]] = s[i] * w * s[j];
            }
        }
        a
    }

    fn inv_sqrt_degrees(&self) -> Vec<f64> {
        (0..self.len()).map(|i| 1.0 / self.degree(i).sqrt()).collect()
    }

    /// `I + D^{-1/2} A D^{-1/2} = 2I - L_sym`, whose largest eigenpairs are
    /// the Laplacian's smallest.
    pub(crate) fn shifted_operator(&self) -> ShiftedAdjacency<'_> {
        ShiftedAdjacency {
            graph: self,
            scale: self.inv_sqrt_degrees(),
        }
    }
}

pub(crate) struct ShiftedAdjacency<'a> {
    graph: &'a AffinityGraph,
    scale: Vec<f64>,
}

impl SymmetricOperator for ShiftedAdjacency<'_> {
    fn dim(&self) -> usize {
        self.graph.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, row) in self.graph.edges.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, w) in row {
                acc += w * self.scale[j] * x[j];
            }
            y[i] = x[i] + self.scale[i] * acc;
        }
    }
}

fn squared_distance(a: ndarray::ArrayView1<f32>, b: ndarray::ArrayView1<f32>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum()
}

/// Binary kNN graph by Euclidean distance, symmetrised by union. Equal
/// distances are broken by ascending title id.
pub fn knn_affinity(embeddings: &EmbeddingSet, k_neighbors: usize) -> Result<AffinityGraph, SpectralError> {
    let n = embeddings.len();
    if k_neighbors == 0 || k_neighbors >= n {
        return Err(SpectralError::Input(format!(
            "k_neighbors must lie in 1..{n}, got {k_neighbors}"
        )));
    }
    let values = embeddings.values();
    let ids = embeddings.ids();
    let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut candidates: Vec<(f64, AnimeId, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        candidates.clear();
        for j in (0..n).filter(|&j| j != i) {
            candidates.push((squared_distance(values.row(i), values.row(j)), ids[j], j));
        }
        let order = |a: &(f64, AnimeId, usize), b: &(f64, AnimeId, usize)| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        candidates.select_nth_unstable_by(k_neighbors - 1, order);
        chosen.push(candidates[..k_neighbors].iter().map(|c| c.2).collect());
    }
    let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in chosen.iter().enumerate() {
        for &j in list {
            edges[i].push((j, 1.0));
            edges[j].push((i, 1.0));
        }
    }
    for row in &mut edges {
        row.sort_by_key(|e| e.0);
        row.dedup_by_key(|e| e.0);
    }
    Ok(AffinityGraph {
        ids: ids.to_vec(),
        edges,
        k_neighbors,
    })
}
