//! Server-side mathematics: user similarity, adaptive-threshold adjacency,
//! graph propagation of uploaded item embeddings, the shared global
//! embedding, and upload noise.
//!
//! Everything here is a pure function of its inputs. The heavy products are
//! row-blocked with a fixed block size and dispatched over rayon, so results
//! are identical for any worker count.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::Embedding;

/// Pairwise cosine similarity between flattened client uploads.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn n_users(&self) -> usize {
        self.values.nrows()
    }

    /// Mean over all N^2 entries, diagonal included.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / (self.n_users() * self.n_users()) as f64
    }
}

/// Binary user-relation graph for one round.
#[derive(Debug, Clone)]
pub struct UserGraph {
    /// Row-major adjacency; `adjacency[(i, j)] = 1` iff `S[i][j] > gamma * s_bar`.
    pub adjacency: Array2<u8>,
    pub degrees: Vec<usize>,
    pub gamma: f64,
    pub s_bar: f64,
}

/// Neighbor-aggregation flavor for [`graph_aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphNormalization {
    /// r_i = mean of neighbor uploads (degree-normalized rows).
    RowNormalized,
    /// r_i = plain sum of neighbor uploads, `R = A^l Q`.
    Vanilla,
}

impl UserGraph {
    pub fn n_users(&self) -> usize {
        self.degrees.len()
    }

    /// Directed edge count, self-loops included.
    pub fn edge_count(&self) -> usize {
        self.degrees.iter().sum()
    }

    /// Fully connected graph on `n` nodes (the trivial uniform-average case).
    pub fn complete(n: usize) -> Self {
        UserGraph {
            adjacency: Array2::from_elem((n, n), 1),
            degrees: vec![n; n],
            gamma: 0.0,
            s_bar: 0.0,
        }
    }

    /// Give every zero-degree node a self-loop so that row-normalized
    /// aggregation falls back to the node's own upload. Returns how many
    /// nodes were repaired.
    pub fn ensure_self_loops(&mut self) -> usize {
        let mut repaired = 0;
        for i in 0..self.n_users() {
            if self.degrees[i] == 0 {
                self.adjacency[(i, i)] = 1;
                self.degrees[i] = 1;
                repaired += 1;
            }
        }
        repaired
    }

    pub fn degree_histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut hist = std::collections::BTreeMap::new();
        for &d in &self.degrees {
            *hist.entry(d).or_insert(0) += 1;
        }
        hist
    }
}

/// Fixed row-block size for the parallel products; results do not depend on
/// how blocks are scheduled across threads.
const ROW_BLOCK: usize = 128;

fn par_matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    out.axis_chunks_iter_mut(Axis(0), ROW_BLOCK)
        .into_par_iter()
        .enumerate()
        .for_each(|(bi, mut chunk)| {
            let lo = bi * ROW_BLOCK;
            let hi = lo + chunk.nrows();
            general_mat_mul(1.0, &a.slice(s![lo..hi, ..]), &b, 0.0, &mut chunk);
        });
    out
}

/// Stack per-client (M x d) uploads into one (N, M*d) row-major matrix.
fn stack_uploads(uploads: &[Embedding]) -> Result<Array2<f64>> {
    assert!(!uploads.is_empty(), "need at least one upload");
    let shape = uploads[0].dim();
    let md = shape.0 * shape.1;
    let mut stacked = Array2::zeros((uploads.len(), md));
    for (i, q) in uploads.iter().enumerate() {
        if q.dim() != shape {
            return Err(Error::ShapeMismatch {
                context: format!("upload {i}: {:?} vs {:?}", q.dim(), shape),
            });
        }
        let src = q.as_slice().expect("standard layout");
        stacked
            .row_mut(i)
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(src);
    }
    Ok(stacked)
}

fn unstack(rows: Array2<f64>, shape: (usize, usize)) -> Vec<Embedding> {
    rows.axis_iter(Axis(0))
        .map(|row| {
            Array2::from_shape_vec(shape, row.to_vec()).expect("row length matches shape")
        })
        .collect()
}

/// Cosine similarity between every pair of flattened uploads.
///
/// Errors if any upload has zero norm, naming the offending client.
pub fn similarity_matrix(uploads: &[Embedding]) -> Result<SimilarityMatrix> {
    let mut stacked = stack_uploads(uploads)?;
    for (i, mut row) in stacked.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteUpload { client: i });
        }
        if norm == 0.0 {
            return Err(Error::ZeroNormUpload { client: i });
        }
        row.mapv_inplace(|v| v / norm);
    }
    let n = stacked.nrows();
    // Gram matrix of the unit rows; only upper block pairs are computed, the
    // lower triangle is mirrored so symmetry is exact.
    let n_blocks = n.div_ceil(ROW_BLOCK);
    let pairs: Vec<(usize, usize)> = (0..n_blocks)
        .flat_map(|bi| (bi..n_blocks).map(move |bj| (bi, bj)))
        .collect();
    let products: Vec<Array2<f64>> = pairs
        .par_iter()
        .map(|&(bi, bj)| {
            let rows = (bi * ROW_BLOCK)..(bi * ROW_BLOCK + ROW_BLOCK).min(n);
            let cols = (bj * ROW_BLOCK)..(bj * ROW_BLOCK + ROW_BLOCK).min(n);
            let a = stacked.slice(s![rows, ..]);
            let b = stacked.slice(s![cols, ..]);
            let mut out = Array2::zeros((a.nrows(), b.nrows()));
            general_mat_mul(1.0, &a, &b.t(), 0.0, &mut out);
            out
        })
        .collect();
    let mut values = Array2::zeros((n, n));
    for (&(bi, bj), block) in pairs.iter().zip(&products) {
        for (di, row) in block.outer_iter().enumerate() {
            let i = bi * ROW_BLOCK + di;
            for (dj, &v) in row.iter().enumerate() {
                let j = bj * ROW_BLOCK + dj;
                let v = v.clamp(-1.0, 1.0);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
    }
    for i in 0..n {
        values[(i, i)] = 1.0;
    }
    Ok(SimilarityMatrix { values })
}

/// Threshold the similarity matrix at `gamma * mean(S)` (strict inequality)
/// into a binary adjacency with degree counts.
pub fn build_adjacency(similarity: &SimilarityMatrix, gamma: f64) -> UserGraph {
    let n = similarity.n_users();
    let s_bar = similarity.mean();
    let threshold = gamma * s_bar;
    let mut adjacency = Array2::zeros((n, n));
    let mut degrees = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if similarity.values[(i, j)] > threshold {
                adjacency[(i, j)] = 1;
                degrees[i] += 1;
            }
        }
    }
    UserGraph {
        adjacency,
        degrees,
        gamma,
        s_bar,
    }
}

/// Propagate uploads over the graph `layers` times, producing one
/// user-specific item embedding per client.
///
/// Row-normalized mode averages over neighbors and rejects isolated nodes;
/// vanilla mode sums over neighbors (`R = A^l Q`) and maps isolated nodes to
/// zero.
pub fn graph_aggregate(
    graph: &UserGraph,
    uploads: &[Embedding],
    layers: usize,
    normalization: GraphNormalization,
) -> Result<Vec<Embedding>> {
    if layers == 0 {
        return Err(Error::InvalidConfig(
            "graph aggregation needs at least one layer".into(),
        ));
    }
    let n = graph.n_users();
    if uploads.len() != n {
        return Err(Error::ShapeMismatch {
            context: format!("{} uploads for a {n}-node graph", uploads.len()),
        });
    }
    let shape = uploads[0].dim();
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        let scale = match normalization {
            GraphNormalization::RowNormalized => {
                if graph.degrees[i] == 0 {
                    return Err(Error::IsolatedNode { node: i });
                }
                1.0 / graph.degrees[i] as f64
            }
            GraphNormalization::Vanilla => 1.0,
        };
        for j in 0..n {
            if graph.adjacency[(i, j)] == 1 {
                weights[(i, j)] = scale;
            }
        }
    }
    let mut current = stack_uploads(uploads)?;
    for _ in 0..layers {
        current = par_matmul(weights.view(), current.view());
    }
    Ok(unstack(current, shape))
}

/// Globally shared item embedding: the plain average of the user-specific
/// embeddings. Under vanilla aggregation this equals the degree-weighted
/// average of the uploads, so better-connected users weigh more.
pub fn global_embedding(r: &[Embedding]) -> Embedding {
    assert!(!r.is_empty(), "need at least one embedding");
    let mut acc = r[0].clone();
    for item in &r[1..] {
        acc += item;
    }
    acc /= r.len() as f64;
    acc
}

/// Elementwise Laplace(0, delta) noise; `delta = 0` returns the input
/// unchanged, bit for bit.
pub fn add_ldp_noise(q: &Embedding, delta: f64, rng: &mut ChaCha8Rng) -> Embedding {
    assert!(delta >= 0.0, "noise scale must be nonnegative");
    if delta == 0.0 {
        return q.clone();
    }
    let mut out = q.clone();
    for v in out.iter_mut() {
        *v += rng::laplace(rng, delta);
    }
    out
}
