//! Global feature maps and the two-stage (representation + local ERM)
//! pipeline.
//!
//! A [`FeatureMap`] is learned once on the whole training set; local ERM
//! then retrieves and fits in the mapped space. [`estimate_sensitivity`]
//! measures how far the learned map moves when a single training example
//! is replaced. It samples replacements, so the value is a lower estimate
//! of the worst case.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::dataset::Dataset;
use crate::erm::{train_global, OptConfig};
use crate::error::{Error, Result};
use crate::local_erm::LocalErmConfig;
use crate::loss::LossSpec;
use crate::par;
use crate::rng::rng_from;
use crate::scorer::{Activation, Scorer, ScorerFamily};

const MAGIC: &[u8; 4] = b"LCFM";
const VERSION: u8 = 1;

/// What to learn in the first stage.
#[derive(Debug, Clone, PartialEq)]
pub enum RepresentationSpec {
    Identity,
    Pca { components: usize },
    /// Trains `x -> V(Wx + c) + b` for global classification and keeps
    /// `x -> Wx + c`.
    LinearSoftmax { dim: usize, opt: OptConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Identity {
        dim: usize,
    },
    Pca {
        mean: Array1<f64>,
        /// `k x d`, orthonormal rows sorted by decreasing variance.
        basis: Array2<f64>,
        /// Set when the data had fewer than the requested non-degenerate
        /// directions; `basis` then holds only the available ones (at
        /// least one).
        rank_deficient: bool,
    },
    LinearEmbedding {
        /// `e x d`.
        weights: Array2<f64>,
        bias: Array1<f64>,
    },
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Pca { mean, .. } => mean.len(),
            FeatureMap::LinearEmbedding { weights, .. } => weights.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Pca { basis, .. } => basis.nrows(),
            FeatureMap::LinearEmbedding { weights, .. } => weights.nrows(),
        }
    }

    pub fn is_rank_deficient(&self) -> bool {
        matches!(
            self,
            FeatureMap::Pca {
                rank_deficient: true,
                ..
            }
        )
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Identity { .. } => x.to_vec(),
            FeatureMap::Pca { mean, basis, .. } => {
                let centered = &ArrayView1::from(x) - mean;
                basis.dot(&centered).to_vec()
            }
            FeatureMap::LinearEmbedding { weights, bias } => {
                (weights.dot(&ArrayView1::from(x)) + bias).to_vec()
            }
        }
    }

    pub fn map_dataset(&self, data: &Dataset) -> Dataset {
        data.map_rows(self.output_dim(), |r| self.apply(r))
    }

    /// Versioned binary encoding:
    /// `"LCFM", u8 version, u8 kind, u32 in_dim, u32 out_dim, u8 flags`,
    /// then the row-major `f64` payload (PCA: mean, basis; linear: weights,
    /// bias; identity: nothing).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u8(VERSION)?;
        let kind = match self {
            FeatureMap::Identity { .. } => 0,
            FeatureMap::Pca { .. } => 1,
            FeatureMap::LinearEmbedding { .. } => 2,
        };
        w.write_u8(kind)?;
        w.write_u32::<LittleEndian>(self.input_dim() as u32)?;
        w.write_u32::<LittleEndian>(self.output_dim() as u32)?;
        w.write_u8(self.is_rank_deficient() as u8)?;
        let payload: Vec<f64> = match self {
            FeatureMap::Identity { .. } => vec![],
            FeatureMap::Pca { mean, basis, .. } => mean.iter().chain(basis.iter()).copied().collect(),
            FeatureMap::LinearEmbedding { weights, bias } => {
                weights.iter().chain(bias.iter()).copied().collect()
            }
        };
        for v in payload {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("not a feature-map file"));
        }
        let version = r.read_u8()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported feature-map version {version}")));
        }
        let kind = r.read_u8()?;
        let d = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let flags = r.read_u8()?;
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let shape_err = |e: ndarray::ShapeError| Error::format(e.to_string());
        match kind {
            0 => Ok(FeatureMap::Identity { dim: d }),
            1 => {
                let mean = Array1::from(read_vec(d)?);
                let basis = Array2::from_shape_vec((k, d), read_vec(k * d)?).map_err(shape_err)?;
                Ok(FeatureMap::Pca {
                    mean,
                    basis,
                    rank_deficient: flags & 1 == 1,
                })
            }
            2 => {
                let weights = Array2::from_shape_vec((k, d), read_vec(k * d)?).map_err(shape_err)?;
                let bias = Array1::from(read_vec(k)?);
                Ok(FeatureMap::LinearEmbedding { weights, bias })
            }
            other => Err(Error::format(format!("unknown feature-map kind {other}"))),
        }
    }
}

/// Learns the first-stage feature map.
pub fn fit_representation(data: &Dataset, spec: &RepresentationSpec) -> Result<FeatureMap> {
    match spec {
        RepresentationSpec::Identity => Ok(FeatureMap::Identity { dim: data.dim() }),
        RepresentationSpec::Pca { components } => fit_pca(data, *components),
        RepresentationSpec::LinearSoftmax { dim, opt } => {
            let family = ScorerFamily::Mlp {
                hidden: *dim,
                activation: Activation::Identity,
            };
            match train_global(data, &family, &LossSpec::MulticlassLogistic, opt)? {
                Scorer::Mlp { w1, b1, .. } => Ok(FeatureMap::LinearEmbedding {
                    weights: w1,
                    bias: b1,
                }),
                _ => unreachable!("MLP family yields an MLP scorer"),
            }
        }
    }
}

fn fit_pca(data: &Dataset, components: usize) -> Result<FeatureMap> {
    let (n, d) = (data.len(), data.dim());
    if components == 0 || components > d {
        return Err(Error::domain(format!(
            "cannot extract {components} components from dimension {d}"
        )));
    }
    if n < components {
        return Err(Error::domain(format!(
            "PCA with {components} components needs at least that many rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let row = data.row(i);
        for a in 0..d {
            let ca = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += ca * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(f64::MIN_POSITIVE) * d as f64;
    let usable = order
        .iter()
        .take(components)
        .take_while(|&&i| eig.eigenvalues[i] > tol)
        .count()
        .max(1);
    let mut basis = Array2::zeros((usable, d));
    for (r, &i) in order.iter().take(usable).enumerate() {
        let col = eig.eigenvectors.column(i);
        // Sign convention: the largest-magnitude entry is positive.
        let mut pivot = 0;
        for j in 1..d {
            if col[j].abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        let norm = col.norm();
        for j in 0..d {
            basis[[r, j]] = sign * col[j] / norm;
        }
    }
    Ok(FeatureMap::Pca {
        mean: Array1::from(mean),
        basis,
        rank_deficient: usable < components,
    })
}

/// Local ERM in the image of `feature_map`: retrieval distance and local
/// fitting both act on `Φ(x)`.
pub fn compose_local(feature_map: FeatureMap, config: &LocalErmConfig) -> LocalErmConfig {
    LocalErmConfig {
        feature_map: Some(feature_map),
        ..config.clone()
    }
}

/// Sampled Δ-sensitivity with replacement examples drawn from `data`
/// itself; see [`estimate_sensitivity_with_pool`].
pub fn estimate_sensitivity(
    data: &Dataset,
    spec: &RepresentationSpec,
    probes: &[Vec<f64>],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    estimate_sensitivity_with_pool(data, data, spec, probes, trials, seed)
}

/// `max_trials max_probes ‖Φ_S(p) - Φ_{S'}(p)‖₂`, where each trial builds
/// `S'` by replacing a uniformly chosen row of `S` with a uniformly chosen
/// row of `pool`. Trials run in parallel; trial `t` uses stream `t` of
/// `seed`.
pub fn estimate_sensitivity_with_pool(
    data: &Dataset,
    pool: &Dataset,
    spec: &RepresentationSpec,
    probes: &[Vec<f64>],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::domain("sensitivity needs at least two rows"));
    }
    if trials == 0 {
        return Err(Error::domain("trials must be positive"));
    }
    if pool.is_empty() || pool.dim() != data.dim() {
        return Err(Error::domain("replacement pool must be nonempty with matching dimension"));
    }
    let base = fit_representation(data, spec)?;
    let base_images: Vec<Vec<f64>> = probes.iter().map(|p| base.apply(p)).collect();
    let per_trial: Vec<Result<f64>> = par::map_range(trials, |t| {
        let mut rng = rng_from(seed, t as u64);
        let victim = rng.random_range(0..data.len());
        let donor = rng.random_range(0..pool.len());
        let replaced = replace_row(data, victim, pool.row(donor), pool.label(donor))?;
        let map = fit_representation(&replaced, spec)?;
        Ok(probes
            .iter()
            .zip(&base_images)
            .map(|(p, before)| {
                map.apply(p)
                    .iter()
                    .zip(before)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max))
    });
    per_trial
        .into_iter()
        .try_fold(0.0, |acc, v| Ok(f64::max(acc, v?)))
}

/// Copy of `data` with row `i` replaced by `(x, y)`.
pub fn replace_row(data: &Dataset, i: usize, x: &[f64], y: usize) -> Result<Dataset> {
    let mut points = data.points().to_owned();
    points.row_mut(i).assign(&ArrayView1::from(x));
    let mut labels = data.labels().to_vec();
    labels[i] = y.min(data.num_classes().saturating_sub(1));
    Dataset::new(points, labels, data.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn pca(data: &Dataset, k: usize) -> FeatureMap {
        fit_representation(data, &RepresentationSpec::Pca { components: k }).unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let data = Dataset::from_rows(&[vec![1.0, -2.0]], vec![0], 1).unwrap();
        let map = fit_representation(&data, &RepresentationSpec::Identity).unwrap();
        assert_eq!(map.apply(&[3.5, 4.0]), vec![3.5, 4.0]);
        assert_eq!(map.output_dim(), 2);
    }

    #[test]
    fn pca_exact_subspace_reconstruction() {
        // Points in span{u, v} ⊂ R^5 plus a common offset.
        let u = [1.0, 2.0, 0.0, -1.0, 0.5];
        let v = [0.0, 1.0, 1.0, 1.0, -2.0];
        let mut rng = rng_from(1, 0);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                (0..5).map(|j| 0.7 + a * u[j] + b * v[j]).collect()
            })
            .collect();
        let data = Dataset::from_rows(&rows, vec![0; 30], 1).unwrap();
        let map = pca(&data, 2);
        let FeatureMap::Pca { mean, basis, rank_deficient } = &map else { panic!() };
        assert!(!rank_deficient);
        for row in &rows {
            let z = map.apply(row);
            let recon = basis.t().dot(&Array1::from(z)) + mean;
            for (a, b) in recon.iter().zip(row) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_axis_matches_closed_form_eigenvector() {
        // Three points in the plane; the 2x2 covariance eigenproblem is
        // solved in closed form as the oracle.
        let rows = vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![4.0, 3.5]];
        let data = Dataset::from_rows(&rows, vec![0; 3], 1).unwrap();
        let mx = 2.0;
        let my = 1.5;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for r in &rows {
            sxx += (r[0] - mx) * (r[0] - mx) / 3.0;
            sxy += (r[0] - mx) * (r[1] - my) / 3.0;
            syy += (r[1] - my) * (r[1] - my) / 3.0;
        }
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let lambda = tr / 2.0 + (tr * tr / 4.0 - det).sqrt();
        let (ex, ey) = (sxy, lambda - sxx);
        let norm = (ex * ex + ey * ey).sqrt();
        let FeatureMap::Pca { basis, .. } = pca(&data, 1) else { panic!() };
        assert!((basis[[0, 0]] - ex / norm).abs() < 1e-10);
        assert!((basis[[0, 1]] - ey / norm).abs() < 1e-10);
    }

    #[test]
    fn pca_rank_deficiency_flagged() {
        let rows = vec![vec![1.0, 1.0, 0.0]; 4]
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r[0] += i as f64;
                r
            })
            .collect::<Vec<_>>();
        let data = Dataset::from_rows(&rows, vec![0; 4], 1).unwrap();
        let map = pca(&data, 3);
        assert!(map.is_rank_deficient());
        assert_eq!(map.output_dim(), 1);
        assert!(fit_representation(&data, &RepresentationSpec::Pca { components: 0 }).is_err());
        let small = data.subset(&[0]);
        assert!(fit_representation(&small, &RepresentationSpec::Pca { components: 2 }).is_err());
    }

    #[test]
    fn feature_map_binary_round_trip() {
        let mut rng = rng_from(2, 0);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels = (0..12).map(|i| i % 2).collect();
        let data = Dataset::from_rows(&rows, labels, 2).unwrap();
        let maps = [
            FeatureMap::Identity { dim: 4 },
            pca(&data, 2),
            fit_representation(
                &data,
                &RepresentationSpec::LinearSoftmax {
                    dim: 3,
                    opt: OptConfig::default(),
                },
            )
            .unwrap(),
        ];
        for map in maps {
            let mut buf = Vec::new();
            map.write_binary(&mut buf).unwrap();
            assert_eq!(buf[4], VERSION);
            assert_eq!(FeatureMap::read_binary(buf.as_slice()).unwrap(), map);
        }
    }

    #[test]
    fn sensitivity_of_identity_is_zero() {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![5.0]], vec![0, 1, 0], 2).unwrap();
        let probes = vec![vec![0.5], vec![3.0]];
        let d = estimate_sensitivity(&data, &RepresentationSpec::Identity, &probes, 5, 1).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn reinserting_the_same_row_contributes_nothing() {
        let data = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.5]], vec![0; 3], 1)
            .unwrap();
        let pool = data.subset(&[1]);
        // Only replacements of row 1 by itself give zero; with a single-row
        // pool that is the one of three outcomes checked directly.
        let same = replace_row(&data, 1, pool.row(0), 0).unwrap();
        assert_eq!(same, data);
        let spec = RepresentationSpec::Pca { components: 1 };
        let a = fit_representation(&data, &spec).unwrap();
        let b = fit_representation(&same, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pca_sensitivity_matches_two_map_recomputation() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![2.0, 1.1], vec![-0.5, 0.9]];
        let data = Dataset::from_rows(&rows, vec![0; 4], 1).unwrap();
        let pool = Dataset::from_rows(&[vec![3.0, -1.0]], vec![0], 1).unwrap();
        let spec = RepresentationSpec::Pca { components: 1 };
        let probes = vec![vec![1.0, 1.0], vec![-2.0, 0.5]];
        let got = estimate_sensitivity_with_pool(&data, &pool, &spec, &probes, 1, 9).unwrap();

        // Oracle: recover the replaced row from the same seed stream and
        // recompute both maps explicitly.
        let mut rng = rng_from(9, 0);
        let victim = rng.random_range(0..4);
        let mut rows2 = rows.clone();
        rows2[victim] = vec![3.0, -1.0];
        let d2 = Dataset::from_rows(&rows2, vec![0; 4], 1).unwrap();
        let (m1, m2) = (pca(&data, 1), pca(&d2, 1));
        let want = probes
            .iter()
            .map(|p| {
                let (a, b) = (m1.apply(p), m2.apply(p));
                ((a[0] - b[0]) * (a[0] - b[0])).sqrt()
            })
            .fold(0.0, f64::max);
        assert!((got - want).abs() < 1e-12);
        assert!(got > 0.0);
    }

    proptest! {
        #[test]
        fn pca_projection_is_one_lipschitz(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let mut rng = rng_from(4, 0);
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let data = Dataset::from_rows(&rows, vec![0; 20], 1).unwrap();
            let map = pca(&data, 2);
            let (pa, pb) = (map.apply(&a), map.apply(&b));
            let dz: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let dx: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dz <= dx + 1e-12);
            // Orthonormal rows.
            let FeatureMap::Pca { basis, .. } = &map else { unreachable!() };
            let g = basis.dot(&basis.t());
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((g[[i, j]] - want).abs() < 1e-8);
                }
            }
        }
    }
}
