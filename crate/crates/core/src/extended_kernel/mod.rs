//! Classification over the extended feature space of (instance, empirical
//! neighbour distribution) pairs.
//!
//! A retrieved set `R = {(x'_j, y'_j)}` is represented by its kernel mean
//! embedding `Ψ(R) = (1/|R|) Σ_j k_Z((x'_j, y'_j), ·)`. Two extended points
//! are compared with the product kernel
//!
//! ```text
//! k((x1, R1), (x2, R2)) = k_X(x1, x2) · κ(Ψ(R1), Ψ(R2))
//! ```
//!
//! where `κ` is either a Gaussian of the embedding distance or the embedding
//! inner product. The classifier is one-vs-all kernel ridge regression on
//! the resulting Gram matrix, so the learned scorer is a kernel expansion
//! over the training extended points.

mod cache;
mod kernel;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

pub use cache::{GramCache, GramCacheKey};
pub use kernel::KernelSpec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::retrieval::{RetrievalIndex, RetrievedSet};
use crate::scorer::argmax;
use kernel::{gaussian_from_sq_dist, sq_dist};

/// How labels enter the kernel `k_Z` on `X × Y`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LabelEncoding {
    /// `k_Z((x, y), (x', y')) = k(x, x') · [y = y']`.
    #[default]
    Indicator,
    /// `k_Z` evaluated on the concatenation `(x, scale · e_y)`.
    OneHot { scale: f64 },
}

/// The outer kernel `κ` on mean embeddings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    /// `exp(-‖Ψ1 - Ψ2‖² / (2σ²))`; bounded by 1, and 1/σ-Lipschitz as a
    /// feature map.
    Gaussian { bandwidth: f64 },
    /// `⟨Ψ1, Ψ2⟩`.
    Linear,
}

impl Kappa {
    /// `κ` from the inner products `⟨Ψ1,Ψ1⟩, ⟨Ψ2,Ψ2⟩, ⟨Ψ1,Ψ2⟩`.
    fn from_inner(self, aa: f64, bb: f64, ab: f64) -> f64 {
        match self {
            Kappa::Gaussian { bandwidth } => {
                gaussian_from_sq_dist((aa + bb - 2.0 * ab).max(0.0), bandwidth)
            }
            Kappa::Linear => ab,
        }
    }

    pub fn bound(&self) -> Option<f64> {
        match self {
            Kappa::Gaussian { .. } => Some(1.0),
            Kappa::Linear => None,
        }
    }
}

/// The three kernels of the extended classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSpecs {
    pub k_x: KernelSpec,
    pub k_z: KernelSpec,
    pub kappa: Kappa,
    pub label_encoding: LabelEncoding,
}

impl Default for ExtendedSpecs {
    fn default() -> Self {
        ExtendedSpecs {
            k_x: KernelSpec::Gaussian { bandwidth: 3.0 },
            k_z: KernelSpec::Gaussian { bandwidth: 3.0 },
            kappa: Kappa::Gaussian { bandwidth: 0.5 },
            label_encoding: LabelEncoding::Indicator,
        }
    }
}

impl ExtendedSpecs {
    /// `M_{k_X} · M_κ` when both factors are bounded.
    pub fn bound(&self) -> Option<f64> {
        Some(self.k_x.bound()? * self.kappa.bound()?)
    }
}

/// `k_Z((x1, y1), (x2, y2))` under `encoding`.
pub fn label_kernel(
    k_z: &KernelSpec,
    encoding: LabelEncoding,
    x1: &[f64],
    y1: usize,
    x2: &[f64],
    y2: usize,
) -> f64 {
    match encoding {
        LabelEncoding::Indicator => {
            if y1 == y2 {
                k_z.eval(x1, x2)
            } else {
                0.0
            }
        }
        LabelEncoding::OneHot { scale } => {
            let same = y1 == y2;
            match *k_z {
                KernelSpec::Gaussian { bandwidth } => {
                    let extra = if same { 0.0 } else { 2.0 * scale * scale };
                    gaussian_from_sq_dist(sq_dist(x1, x2) + extra, bandwidth)
                }
                KernelSpec::Linear => {
                    crate::erm::dot(x1, x2) + if same { scale * scale } else { 0.0 }
                }
                KernelSpec::Polynomial { degree, offset } => {
                    let ip = crate::erm::dot(x1, x2) + if same { scale * scale } else { 0.0 };
                    (ip + offset).powi(degree as i32)
                }
            }
        }
    }
}

/// A labelled point `(x, y)` borrowed from some dataset.
pub type LabeledPoint<'a> = (&'a [f64], usize);

/// `⟨Ψ(A), Ψ(B)⟩ = (1/(|A||B|)) Σ_i Σ_j k_Z(a_i, b_j)`, as an exact
/// double sum.
pub fn embedding_inner(
    a: &[LabeledPoint<'_>],
    b: &[LabeledPoint<'_>],
    k_z: &KernelSpec,
    encoding: LabelEncoding,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("mean embedding of an empty set"));
    }
    let mut total = 0.0;
    for &(xa, ya) in a {
        for &(xb, yb) in b {
            total += label_kernel(k_z, encoding, xa, ya, xb, yb);
        }
    }
    Ok(total / (a.len() * b.len()) as f64)
}

/// `‖Ψ(A) - Ψ(B)‖²`, clamped at zero.
pub fn embedding_sq_dist(
    a: &[LabeledPoint<'_>],
    b: &[LabeledPoint<'_>],
    k_z: &KernelSpec,
    encoding: LabelEncoding,
) -> Result<f64> {
    let aa = embedding_inner(a, a, k_z, encoding)?;
    let bb = embedding_inner(b, b, k_z, encoding)?;
    let ab = embedding_inner(a, b, k_z, encoding)?;
    Ok((aa + bb - 2.0 * ab).max(0.0))
}

/// An instance together with the rows it retrieved from the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint {
    pub x: Vec<f64>,
    pub retrieved: RetrievedSet,
}

impl ExtendedPoint {
    pub fn labeled<'a>(&self, train: &'a Dataset) -> Vec<LabeledPoint<'a>> {
        self.retrieved
            .indices
            .iter()
            .map(|&i| (train.row(i), train.label(i)))
            .collect()
    }
}

/// Product kernel between two extended points, computed from raw double
/// sums.
pub fn extended_kernel(
    p: &ExtendedPoint,
    q: &ExtendedPoint,
    specs: &ExtendedSpecs,
    train: &Dataset,
) -> Result<f64> {
    let a = p.labeled(train);
    let b = q.labeled(train);
    let aa = embedding_inner(&a, &a, &specs.k_z, specs.label_encoding)?;
    let bb = embedding_inner(&b, &b, &specs.k_z, specs.label_encoding)?;
    let ab = embedding_inner(&a, &b, &specs.k_z, specs.label_encoding)?;
    Ok(specs.k_x.eval(&p.x, &q.x) * specs.kappa.from_inner(aa, bb, ab))
}

/// Retrieves `R^x` within radius `r`. If the ball is empty the single
/// nearest row is used instead; `exclude` is dropped only if nothing else
/// remains.
pub fn retrieve_nonempty(
    index: &RetrievalIndex,
    x: &[f64],
    r: f64,
    exclude: Option<usize>,
) -> Result<RetrievedSet> {
    let ball = index.ball_query(x, r, exclude)?;
    if !ball.is_empty() {
        return Ok(ball);
    }
    let nearest = index.knn_query(x, 1, exclude)?;
    if !nearest.is_empty() {
        return Ok(nearest);
    }
    let nearest = index.knn_query(x, 1, None)?;
    if nearest.is_empty() {
        return Err(Error::domain("retrieval over an empty training set"));
    }
    Ok(nearest)
}

/// Extended points for every training row, each excluding itself.
pub fn training_extended_points(
    train: &Dataset,
    index: &RetrievalIndex,
    r: f64,
) -> Result<Vec<ExtendedPoint>> {
    let points: Vec<Result<ExtendedPoint>> = par::map_range(train.len(), |i| {
        Ok(ExtendedPoint {
            x: train.row(i).to_vec(),
            retrieved: retrieve_nonempty(index, train.row(i), r, Some(i))?,
        })
    });
    points.into_iter().collect()
}

/// Gram matrix of the product kernel over training extended points.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedGram {
    /// `n x n`, exactly symmetric.
    pub matrix: Array2<f64>,
    pub specs: ExtendedSpecs,
    /// Mean-embedding self inner products `⟨Ψ_i, Ψ_i⟩`.
    pub self_inner: Vec<f64>,
}

impl ExtendedGram {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Wraps a precomputed (for example cached) matrix; only the embedding
    /// self inner products are recomputed.
    pub fn from_matrix(
        matrix: Array2<f64>,
        specs: &ExtendedSpecs,
        train: &Dataset,
        points: &[ExtendedPoint],
    ) -> Result<Self> {
        if matrix.nrows() != points.len() || matrix.ncols() != points.len() {
            return Err(Error::domain("matrix size does not match the extended points"));
        }
        let self_inner = par::map_slice(points, |p| {
            let set = &p.retrieved.indices;
            let mut acc = 0.0;
            for &a in set {
                for &b in set {
                    acc += label_kernel(
                        &specs.k_z,
                        specs.label_encoding,
                        train.row(a),
                        train.label(a),
                        train.row(b),
                        train.label(b),
                    );
                }
            }
            acc / (set.len() * set.len()) as f64
        });
        Ok(ExtendedGram {
            matrix,
            specs: specs.clone(),
            self_inner,
        })
    }
}

/// [`build_extended_gram`] through an on-disk cache keyed by the training
/// set, radius and kernel settings.
pub fn build_extended_gram_cached(
    train: &Dataset,
    index: &RetrievalIndex,
    r: f64,
    specs: &ExtendedSpecs,
    cache: &GramCache,
) -> Result<(ExtendedGram, Vec<ExtendedPoint>)> {
    let key = GramCacheKey::new(train, r, specs);
    if let Some(matrix) = cache.load(&key)? {
        let points = training_extended_points(train, index, r)?;
        let gram = ExtendedGram::from_matrix(matrix, specs, train, &points)?;
        return Ok((gram, points));
    }
    let (gram, points) = build_extended_gram(train, index, r, specs)?;
    cache.store(&key, &gram.matrix)?;
    Ok((gram, points))
}

/// `Kz[a, b] = k_Z(z_a, z_b)` over all training rows, row-major.
fn label_gram(train: &Dataset, specs: &ExtendedSpecs) -> Vec<f64> {
    let n = train.len();
    let mut kz = vec![0.0; n * n];
    par::for_each_chunk_mut(&mut kz, n.max(1), |a, row| {
        let (xa, ya) = (train.row(a), train.label(a));
        for (b, v) in row.iter_mut().enumerate() {
            *v = label_kernel(&specs.k_z, specs.label_encoding, xa, ya, train.row(b), train.label(b));
        }
    });
    kz
}

/// Builds the extended points (self-excluded, with nearest-row fallback)
/// and their Gram matrix.
///
/// Embedding inner products go through the support sums
/// `P[a, j] = Σ_{b ∈ R_j} k_Z(z_a, z_b)`, so
/// `⟨Ψ_i, Ψ_j⟩ = Σ_{a ∈ R_i} P[a, j] / (|R_i||R_j|)`; only the upper
/// triangle is evaluated and mirrored.
pub fn build_extended_gram(
    train: &Dataset,
    index: &RetrievalIndex,
    r: f64,
    specs: &ExtendedSpecs,
) -> Result<(ExtendedGram, Vec<ExtendedPoint>)> {
    let points = training_extended_points(train, index, r)?;
    let cross = embedding_cross(train, &points, specs);
    let matrix = gram_from_cross(&points, &cross, specs);
    Ok((
        ExtendedGram {
            matrix,
            specs: specs.clone(),
            self_inner: cross.diag().to_vec(),
        },
        points,
    ))
}

fn embedding_cross(train: &Dataset, points: &[ExtendedPoint], specs: &ExtendedSpecs) -> Array2<f64> {
    let n = points.len();
    let kz = label_gram(train, specs);
    // support[a * n + j] = Σ_{b ∈ R_j} Kz[a, b]
    let mut support = vec![0.0; n * n];
    par::for_each_chunk_mut(&mut support, n.max(1), |a, row| {
        let kz_row = &kz[a * n..(a + 1) * n];
        for (j, v) in row.iter_mut().enumerate() {
            *v = points[j].retrieved.indices.iter().map(|&b| kz_row[b]).sum();
        }
    });
    drop(kz);
    let mut cross = vec![0.0; n * n];
    par::for_each_chunk_mut(&mut cross, n.max(1), |i, row| {
        let set = &points[i].retrieved.indices;
        for &a in set {
            let srow = &support[a * n..(a + 1) * n];
            for j in i..n {
                row[j] += srow[j];
            }
        }
        let mi = set.len() as f64;
        for j in i..n {
            row[j] /= mi * points[j].retrieved.len() as f64;
        }
    });
    for i in 0..n {
        for j in 0..i {
            cross[i * n + j] = cross[j * n + i];
        }
    }
    Array2::from_shape_vec((n, n), cross).expect("n x n")
}

fn gram_from_cross(points: &[ExtendedPoint], cross: &Array2<f64>, specs: &ExtendedSpecs) -> Array2<f64> {
    let n = points.len();
    let mut k = vec![0.0; n * n];
    par::for_each_chunk_mut(&mut k, n.max(1), |i, row| {
        for j in i..n {
            row[j] = specs.k_x.eval(&points[i].x, &points[j].x)
                * specs
                    .kappa
                    .from_inner(cross[[i, i]], cross[[j, j]], cross[[i, j]]);
        }
    });
    for i in 0..n {
        for j in 0..i {
            k[i * n + j] = k[j * n + i];
        }
    }
    Array2::from_shape_vec((n, n), k).expect("n x n")
}

/// Extended kernel classifier in representer form:
/// `f_y(·) = Σ_i α[i, y] k((x_i, R_i), ·)`.
#[derive(Debug, Clone)]
pub struct ExtendedKernelModel {
    pub points: Vec<ExtendedPoint>,
    /// `n x C`.
    pub alpha: Array2<f64>,
    pub lambda: f64,
    pub specs: ExtendedSpecs,
    pub radius: f64,
    self_inner: Vec<f64>,
}

/// One-vs-all kernel ridge: for every class `y` solves
/// `(K + nλI) α_y = t_y` with `t_y[i] = +1` if `y_i = y` and `-1` otherwise.
pub fn train_extended(
    gram: &ExtendedGram,
    points: Vec<ExtendedPoint>,
    train: &Dataset,
    lambda: f64,
    radius: f64,
) -> Result<ExtendedKernelModel> {
    let n = gram.len();
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda must be positive"));
    }
    if n == 0 || n != train.len() || points.len() != n {
        return Err(Error::domain("gram, points and labels disagree in size"));
    }
    let alpha = solve_one_vs_all(&gram.matrix, train.labels(), train.num_classes(), n as f64 * lambda)?;
    Ok(ExtendedKernelModel {
        points,
        alpha,
        lambda,
        specs: gram.specs.clone(),
        radius,
        self_inner: gram.self_inner.clone(),
    })
}

/// Solves `(K + ridge·I) A = T` for one-vs-all ±1 targets by Cholesky.
pub fn solve_one_vs_all(
    k: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    ridge: f64,
) -> Result<Array2<f64>> {
    let n = k.nrows();
    let mut system = DMatrix::from_fn(n, n, |i, j| k[[i, j]]);
    for i in 0..n {
        system[(i, i)] += ridge;
    }
    let diag: Vec<f64> = (0..n).map(|i| system[(i, i)]).collect();
    let chol = system.cholesky().ok_or_else(|| {
        let max = diag.iter().cloned().fold(f64::MIN, f64::max);
        let min = diag.iter().cloned().fold(f64::MAX, f64::min);
        Error::Numerical {
            message: "Cholesky factorisation of K + nλI failed".into(),
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        }
    })?;
    let mut alpha = Array2::zeros((n, num_classes));
    for y in 0..num_classes {
        let t = DVector::from_fn(n, |i, _| if labels[i] == y { 1.0 } else { -1.0 });
        let sol = chol.solve(&t);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                message: "non-finite ridge solution".into(),
                condition: f64::INFINITY,
            });
        }
        for i in 0..n {
            alpha[[i, y]] = sol[i];
        }
    }
    Ok(alpha)
}

impl ExtendedKernelModel {
    pub fn num_classes(&self) -> usize {
        self.alpha.ncols()
    }

    /// Kernel values `k(train_i, q)` for every training extended point.
    pub fn kernel_row(&self, q: &ExtendedPoint, train: &Dataset) -> Result<Vec<f64>> {
        if q.retrieved.is_empty() {
            return Err(Error::domain("extended point with empty retrieved set"));
        }
        let n = train.len();
        let (k_z, enc) = (&self.specs.k_z, self.specs.label_encoding);
        // colsum[t] = Σ_{b ∈ R_q} k_Z(z_t, z_b)
        let mut colsum = vec![0.0; n];
        for &b in &q.retrieved.indices {
            let (xb, yb) = (train.row(b), train.label(b));
            for (t, v) in colsum.iter_mut().enumerate() {
                *v += label_kernel(k_z, enc, train.row(t), train.label(t), xb, yb);
            }
        }
        let mq = q.retrieved.len() as f64;
        let qq = q
            .retrieved
            .indices
            .iter()
            .map(|&a| colsum[a])
            .sum::<f64>()
            / (mq * mq);
        Ok(self
            .points
            .iter()
            .zip(&self.self_inner)
            .map(|(p, &pp)| {
                let pq = p.retrieved.indices.iter().map(|&a| colsum[a]).sum::<f64>()
                    / (p.retrieved.len() as f64 * mq);
                self.specs.k_x.eval(&p.x, &q.x) * self.specs.kappa.from_inner(pp, qq, pq)
            })
            .collect())
    }

    /// Scores of an extended point.
    pub fn scores_point(&self, q: &ExtendedPoint, train: &Dataset) -> Result<Vec<f64>> {
        let row = self.kernel_row(q, train)?;
        let c = self.num_classes();
        let mut scores = vec![0.0; c];
        for (i, kv) in row.iter().enumerate() {
            for (y, s) in scores.iter_mut().enumerate() {
                *s += self.alpha[[i, y]] * kv;
            }
        }
        Ok(scores)
    }

    /// Retrieves `R^x` (radius `self.radius`, nearest-row fallback), scores
    /// and classifies. `exclude` removes one training row from retrieval,
    /// which reproduces the training extended point when `x` is that row.
    pub fn predict(
        &self,
        x: &[f64],
        index: &RetrievalIndex,
        train: &Dataset,
        exclude: Option<usize>,
    ) -> Result<(usize, Vec<f64>)> {
        let q = ExtendedPoint {
            x: x.to_vec(),
            retrieved: retrieve_nonempty(index, x, self.radius, exclude)?,
        };
        let scores = self.scores_point(&q, train)?;
        Ok((argmax(&scores), scores))
    }
}

/// Accuracy of an extended model on a test set (queries never excluded).
pub fn evaluate_extended(
    model: &ExtendedKernelModel,
    index: &RetrievalIndex,
    train: &Dataset,
    test: &Dataset,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::domain("empty test set"));
    }
    let preds: Vec<Result<usize>> =
        par::map_range(test.len(), |i| Ok(model.predict(test.row(i), index, train, None)?.0));
    let mut correct = 0;
    for (i, p) in preds.into_iter().enumerate() {
        if p? == test.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}
