//! Exact metric retrieval: ball and k-nearest-neighbour queries.
//!
//! Results are sorted by `(distance, row index)`; the row index breaks
//! distance ties. Both backends compute distances with the same routine and
//! decide membership on that value, so their outputs agree exactly.

mod vptree;

use std::borrow::Cow;
use std::cmp::Ordering;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::representation::FeatureMap;

use vptree::VpTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    BruteForce,
    #[default]
    VantagePointTree,
}

/// Distance used by an index.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    /// Euclidean distance between feature-map images.
    Representation(FeatureMap),
}

/// Rows returned by a query, sorted by nondecreasing distance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievedSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl RetrievedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_sorted(neighbors: Vec<Neighbor>) -> Self {
        let (distances, indices) = neighbors.into_iter().map(|n| (n.dist, n.index)).unzip();
        RetrievedSet { indices, distances }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Neighbor {
    pub dist: f64,
    pub index: usize,
}

impl PartialEq for Neighbor {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Immutable exact index over the rows of a dataset.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    backend: Backend,
    metric: Metric,
    /// Row-major indexed coordinates (feature-map images for
    /// [`Metric::Representation`]).
    points: Vec<f64>,
    n: usize,
    dim: usize,
    input_dim: usize,
    tree: Option<VpTree>,
}

impl RetrievalIndex {
    pub fn build(data: &Dataset, metric: Metric, backend: Backend) -> Result<Self> {
        let (points, dim) = match &metric {
            Metric::Euclidean => (
                data.points().iter().copied().collect::<Vec<f64>>(),
                data.dim(),
            ),
            Metric::Representation(map) => {
                if map.input_dim() != data.dim() && !data.is_empty() {
                    return Err(Error::Build(format!(
                        "feature map expects dimension {}, data has {}",
                        map.input_dim(),
                        data.dim()
                    )));
                }
                let mapped = map.map_dataset(data);
                (mapped.points().iter().copied().collect(), map.output_dim())
            }
        };
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Build("non-finite coordinate".into()));
        }
        let n = data.len();
        let tree = match backend {
            Backend::BruteForce => None,
            Backend::VantagePointTree => Some(VpTree::build(&points, dim, n)),
        };
        let input_dim = match &metric {
            Metric::Euclidean => data.dim(),
            Metric::Representation(map) => map.input_dim(),
        };
        Ok(RetrievalIndex {
            backend,
            metric,
            points,
            n,
            dim,
            input_dim,
            tree,
        })
    }

    /// Euclidean index with the tree backend.
    pub fn euclidean(data: &Dataset) -> Result<Self> {
        RetrievalIndex::build(data, Metric::Euclidean, Backend::VantagePointTree)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Dimension of the indexed coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Indexed coordinates of row `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Maps a raw query into the indexed space.
    pub fn embed_query<'a>(&self, x: &'a [f64]) -> Result<Cow<'a, [f64]>> {
        if x.len() != self.input_dim {
            return Err(Error::domain(format!(
                "query has dimension {}, index expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite query"));
        }
        Ok(match &self.metric {
            Metric::Euclidean => Cow::Borrowed(x),
            Metric::Representation(map) => Cow::Owned(map.apply(x)),
        })
    }

    /// Rows within distance `r` of `x` (inclusive), optionally skipping
    /// row `exclude`.
    pub fn ball_query(&self, x: &[f64], r: f64, exclude: Option<usize>) -> Result<RetrievedSet> {
        if r.is_nan() || r < 0.0 {
            return Err(Error::domain(format!("negative radius {r}")));
        }
        let q = self.embed_query(x)?;
        let mut out = Vec::new();
        match &self.tree {
            Some(tree) => tree.ball(&self.points, self.dim, &q, r, exclude, &mut out),
            None => {
                for i in 0..self.n {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d = euclidean(&q, self.point(i));
                    if d <= r {
                        out.push(Neighbor { dist: d, index: i });
                    }
                }
            }
        }
        out.sort_unstable();
        Ok(RetrievedSet::from_sorted(out))
    }

    /// The `min(k, n)` nearest rows, optionally skipping row `exclude`.
    pub fn knn_query(&self, x: &[f64], k: usize, exclude: Option<usize>) -> Result<RetrievedSet> {
        if k == 0 {
            return Err(Error::domain("k must be positive"));
        }
        let q = self.embed_query(x)?;
        let neighbors = match &self.tree {
            Some(tree) => tree.knn(&self.points, self.dim, &q, k, exclude),
            None => {
                let mut all: Vec<Neighbor> = (0..self.n)
                    .filter(|&i| Some(i) != exclude)
                    .map(|i| Neighbor {
                        dist: euclidean(&q, self.point(i)),
                        index: i,
                    })
                    .collect();
                if all.len() > k {
                    all.select_nth_unstable(k - 1);
                    all.truncate(k);
                }
                all.sort_unstable();
                all
            }
        };
        Ok(RetrievedSet::from_sorted(neighbors))
    }
}

/// Empirical retrieved-set-size floor: the largest `N` such that at most a
/// `delta` fraction of training rows retrieve fewer than `N` other rows
/// within radius `r` (self excluded).
///
/// `data` must be the dataset `index` was built over.
pub fn estimate_n(data: &Dataset, index: &RetrievalIndex, r: f64, delta: f64) -> Result<usize> {
    let counts = neighbor_counts(data, index, r)?;
    Ok(lower_quantile(counts, delta))
}

/// `|R^{x_i}|` for every training row at radius `r`, self excluded.
pub fn neighbor_counts(data: &Dataset, index: &RetrievalIndex, r: f64) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::domain("neighbour counts of an empty dataset"));
    }
    if index.len() != data.len() {
        return Err(Error::domain("index was not built over this dataset"));
    }
    if !(r >= 0.0) {
        return Err(Error::domain(format!("negative radius {r}")));
    }
    let counts: Vec<Result<usize>> =
        par::map_range(data.len(), |i| Ok(index.ball_query(data.row(i), r, Some(i))?.len()));
    counts.into_iter().collect()
}

/// Largest value `N` with `#{c < N} <= delta * n`.
pub(crate) fn lower_quantile(mut counts: Vec<usize>, delta: f64) -> usize {
    counts.sort_unstable();
    let n = counts.len();
    let pos = ((delta.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n - 1);
    counts[pos]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn line(values: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Dataset::from_rows(&rows, vec![0; values.len()], 1).unwrap()
    }

    fn both(data: &Dataset) -> [RetrievalIndex; 2] {
        [
            RetrievalIndex::build(data, Metric::Euclidean, Backend::BruteForce).unwrap(),
            RetrievalIndex::build(data, Metric::Euclidean, Backend::VantagePointTree).unwrap(),
        ]
    }

    #[test]
    fn empty_index_answers_empty() {
        for idx in both(&Dataset::empty(2, 2)) {
            assert!(idx.ball_query(&[0.0, 0.0], 10.0, None).unwrap().is_empty());
            assert!(idx.knn_query(&[0.0, 0.0], 3, None).unwrap().is_empty());
        }
    }

    #[test]
    fn ball_examples() {
        let data = line(&[0.0, 1.0, 3.0]);
        for idx in both(&data) {
            let got = idx.ball_query(&[0.5], 1.0, None).unwrap();
            assert_eq!(got.indices, vec![0, 1]);
            assert_eq!(got.distances, vec![0.5, 0.5]);
            assert_eq!(idx.ball_query(&[3.0], 0.0, None).unwrap().indices, vec![2]);
            assert_eq!(idx.ball_query(&[0.0], 100.0, None).unwrap().len(), 3);
            assert!(idx.ball_query(&[0.0], -1.0, None).is_err());
            assert_eq!(idx.ball_query(&[0.0], 1.0, Some(0)).unwrap().indices, vec![1]);
        }
    }

    #[test]
    fn duplicates_are_distinct_rows() {
        let data = line(&[2.0, 2.0, 5.0, 2.0]);
        for idx in both(&data) {
            assert_eq!(idx.ball_query(&[2.0], 0.0, None).unwrap().indices, vec![0, 1, 3]);
            assert_eq!(idx.knn_query(&[2.0], 2, None).unwrap().indices, vec![0, 1]);
        }
    }

    #[test]
    fn knn_examples() {
        let data = line(&[0.0, 1.0, 3.0]);
        for idx in both(&data) {
            assert_eq!(idx.knn_query(&[1.0], 1, None).unwrap().indices, vec![1]);
            assert_eq!(idx.knn_query(&[0.5], 2, None).unwrap().indices, vec![0, 1]);
            assert_eq!(idx.knn_query(&[0.5], 10, None).unwrap().indices, vec![0, 1, 2]);
            assert!(idx.knn_query(&[0.5], 0, None).is_err());
            assert!(idx.knn_query(&[0.5, 1.0], 1, None).is_err());
        }
    }

    #[test]
    fn estimate_n_examples() {
        let data = line(&[0.0, 1.0, 3.0, 7.5]);
        let idx = RetrievalIndex::euclidean(&data).unwrap();
        assert_eq!(estimate_n(&data, &idx, 100.0, 0.3).unwrap(), 3);
        assert_eq!(estimate_n(&data, &idx, 0.0, 0.9).unwrap(), 0);
        assert!(estimate_n(&data, &idx, -1.0, 0.3).is_err());

        // 101 points with spacing 0.01: brute-force per-point counts.
        let values: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let data = line(&values);
        let idx = RetrievalIndex::euclidean(&data).unwrap();
        let mut counts: Vec<usize> = (0..values.len())
            .map(|i| {
                (0..values.len())
                    .filter(|&j| j != i && (values[i] - values[j]).abs() <= 0.1)
                    .count()
            })
            .collect();
        counts.sort_unstable();
        assert_eq!(estimate_n(&data, &idx, 0.1, 0.5).unwrap(), counts[50]);
    }

    #[test]
    fn estimate_n_monotone() {
        let mut rng = rng_from(3, 0);
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let data = Dataset::from_rows(&rows, vec![0; 150], 1).unwrap();
        let idx = RetrievalIndex::euclidean(&data).unwrap();
        let mut prev = 0;
        for step in 0..20 {
            let v = estimate_n(&data, &idx, step as f64 * 0.05, 0.2).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = 0;
        for step in 0..10 {
            let v = estimate_n(&data, &idx, 0.3, step as f64 * 0.1).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }
}
