//! Gaussian mixture benchmark with a linear decision boundary per cluster.
//!
//! Each cluster `i` has a centre `μ_i` and a normal `w_i`. A point drawn
//! from cluster `i` is `x ~ N(μ_i, I)` with label `[w_iᵀ(x − μ_i) > 0]`
//! (a zero projection is labelled 1). Globally the labels are far from
//! linearly separable, yet within one cluster the Bayes rule is linear.

use std::fmt::Write as _;
use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    /// `k x D`.
    pub means: Array2<f64>,
    /// `k x D`, each row nonzero.
    pub weights: Array2<f64>,
    pub mean_range: (f64, f64),
    pub seed: u64,
}

impl MixtureSpec {
    pub const DEFAULT_CLUSTERS: usize = 100;
    pub const DEFAULT_DIM: usize = 10;
    pub const DEFAULT_RANGE: (f64, f64) = (-10.0, 10.0);

    pub fn num_clusters(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Label of `x` under cluster `i`'s boundary.
    pub fn label(&self, cluster: usize, x: &[f64]) -> usize {
        let proj: f64 = self
            .weights
            .row(cluster)
            .iter()
            .zip(self.means.row(cluster))
            .zip(x)
            .map(|((w, m), v)| w * (v - m))
            .sum();
        usize::from(proj >= 0.0)
    }

    /// `key=value` sidecar recording how the spec was generated.
    pub fn write_sidecar<W: Write>(&self, mut w: W, extra: &[(&str, String)]) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "clusters={}", self.num_clusters());
        let _ = writeln!(s, "dim={}", self.dim());
        let _ = writeln!(s, "mean_low={:?}", self.mean_range.0);
        let _ = writeln!(s, "mean_high={:?}", self.mean_range.1);
        let _ = writeln!(s, "spec_seed={}", self.seed);
        for (k, v) in extra {
            let _ = writeln!(s, "{k}={v}");
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Means uniform on `[low, high]^D`, weights standard normal (redrawn in
/// the probability-zero case of an all-zero row).
pub fn sample_mixture_spec(k: usize, dim: usize, mean_range: (f64, f64), seed: u64) -> Result<MixtureSpec> {
    if k == 0 || dim == 0 {
        return Err(Error::domain("clusters and dimension must be positive"));
    }
    let (low, high) = mean_range;
    if !(low.is_finite() && high.is_finite() && low <= high) {
        return Err(Error::domain(format!("invalid mean range ({low}, {high})")));
    }
    let mut rng = rng_from(seed, 0);
    let means = Array2::from_shape_fn((k, dim), |_| {
        if low == high {
            low
        } else {
            rng.random_range(low..high)
        }
    });
    let mut rng = rng_from(seed, 1);
    let mut weights = Array2::zeros((k, dim));
    for mut row in weights.rows_mut() {
        loop {
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            if row.iter().any(|&v| v != 0.0) {
                break;
            }
        }
    }
    Ok(MixtureSpec {
        means,
        weights,
        mean_range,
        seed,
    })
}

/// `n` labelled points and the cluster each was drawn from.
pub fn sample_dataset(spec: &MixtureSpec, n: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let (k, d) = (spec.num_clusters(), spec.dim());
    let mut rng = rng_from(seed, 2);
    let mut points = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);
    for mut row in points.rows_mut() {
        let i = rng.random_range(0..k);
        for (v, m) in row.iter_mut().zip(spec.means.row(i)) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = m + z;
        }
        labels.push(spec.label(i, row.as_slice().expect("standard layout")));
        clusters.push(i);
    }
    Ok((Dataset::new(points, labels, 2)?, clusters))
}
