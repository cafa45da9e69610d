//! Empirical risk and its minimisation by full-batch gradient descent.
//!
//! [`Objective`] is the penalised empirical risk of one scorer family on a
//! fixed set of rows; it is shared by the global baseline
//! ([`train_global`]) and by the per-query fits of local ERM.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::extended_kernel::KernelSpec;
use crate::loss::LossSpec;
use crate::rng::rng_from;
use crate::scorer::{best_other, margin_of_scores, Activation, Scorer, ScorerFamily};

/// Gradient-descent settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub max_iters: usize,
    /// First trial step of the backtracking line search.
    pub initial_step: f64,
    /// Stop when `‖∇‖ ≤ tolerance · (1 + |objective|)`.
    pub tolerance: f64,
    /// Weight of the squared-norm penalty on non-bias parameters.
    pub l2_penalty: f64,
    /// Seeds random initialisation (MLP first layer).
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            max_iters: 300,
            initial_step: 1.0,
            tolerance: 1e-6,
            l2_penalty: 1e-3,
            seed: 0,
        }
    }
}

/// Mean surrogate loss of `scorer` over `data`.
pub fn empirical_risk(scorer: &Scorer, data: &Dataset, loss: &LossSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("empirical risk of an empty dataset"));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let m = margin_of_scores(&scorer.scores(data.row(i)), data.label(i))?;
        total += loss.value(m);
    }
    Ok(total / data.len() as f64)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(scorer: &Scorer, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = (0..data.len())
        .filter(|&i| scorer.classify(data.row(i)) == data.label(i))
        .count();
    correct as f64 / data.len() as f64
}

/// Minimises the penalised empirical risk over `data` for `family`,
/// starting from the zero scorer (random first layer for MLPs).
pub fn train_global(
    data: &Dataset,
    family: &ScorerFamily,
    loss: &LossSpec,
    opt: &OptConfig,
) -> Result<Scorer> {
    if data.len() < data.num_classes() {
        return Err(Error::domain(format!(
            "need at least {} rows, got {}",
            data.num_classes(),
            data.len()
        )));
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let objective = Objective::new(data, &rows, family, *loss, opt)?;
    let (params, _) = gradient_descent(&objective, objective.initial_params(), opt)?;
    Ok(objective.to_scorer(&params))
}

#[derive(Debug, Clone)]
enum Shape {
    Linear,
    Mlp { hidden: usize, activation: Activation },
    Kernel { kernel: KernelSpec, gram: Vec<f64> },
}

/// Penalised empirical risk `mean ℓ(γ) + λ Ω` of one family on a row set.
///
/// Linear and MLP inputs are centred on the row mean internally; the
/// reparametrisation is undone in [`Objective::to_scorer`], so the function
/// class and the penalty are unchanged.
#[derive(Debug, Clone)]
pub struct Objective {
    shape: Shape,
    /// Row-major `m x d`; centred for linear/MLP, raw for kernels.
    x: Vec<f64>,
    raw: Vec<f64>,
    center: Vec<f64>,
    labels: Vec<usize>,
    m: usize,
    d: usize,
    c: usize,
    loss: LossSpec,
    l2: f64,
    seed: u64,
}

impl Objective {
    /// Objective over `rows` of `data`.
    pub fn new(
        data: &Dataset,
        rows: &[usize],
        family: &ScorerFamily,
        loss: LossSpec,
        opt: &OptConfig,
    ) -> Result<Self> {
        let d = data.dim();
        let mut raw = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            raw.extend_from_slice(data.row(i));
        }
        let labels = rows.iter().map(|&i| data.label(i)).collect();
        Objective::from_parts(raw, labels, d, data.num_classes(), family, loss, opt)
    }

    pub(crate) fn from_parts(
        raw: Vec<f64>,
        labels: Vec<usize>,
        d: usize,
        c: usize,
        family: &ScorerFamily,
        loss: LossSpec,
        opt: &OptConfig,
    ) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::domain("objective over zero rows"));
        }
        if c < 2 {
            return Err(Error::domain("need at least two classes"));
        }
        let (shape, x, center) = match family {
            ScorerFamily::Linear | ScorerFamily::Mlp { .. } => {
                let mut center = vec![0.0; d];
                for row in raw.chunks_exact(d.max(1)).take(m) {
                    for (cj, v) in center.iter_mut().zip(row) {
                        *cj += v;
                    }
                }
                center.iter_mut().for_each(|v| *v /= m as f64);
                let mut x = raw.clone();
                if d > 0 {
                    for row in x.chunks_exact_mut(d) {
                        for (v, cj) in row.iter_mut().zip(&center) {
                            *v -= cj;
                        }
                    }
                }
                let shape = match family {
                    ScorerFamily::Linear => Shape::Linear,
                    ScorerFamily::Mlp { hidden, activation } => Shape::Mlp {
                        hidden: (*hidden).max(1),
                        activation: *activation,
                    },
                    ScorerFamily::KernelMachine { .. } => unreachable!(),
                };
                (shape, x, center)
            }
            ScorerFamily::KernelMachine { kernel } => {
                let mut gram = vec![0.0; m * m];
                for i in 0..m {
                    for j in i..m {
                        let k = kernel.eval(&raw[i * d..(i + 1) * d], &raw[j * d..(j + 1) * d]);
                        gram[i * m + j] = k;
                        gram[j * m + i] = k;
                    }
                }
                (
                    Shape::Kernel {
                        kernel: kernel.clone(),
                        gram,
                    },
                    Vec::new(),
                    vec![0.0; d],
                )
            }
        };
        Ok(Objective {
            shape,
            x,
            raw,
            center,
            labels,
            m,
            d,
            c,
            loss,
            l2: opt.l2_penalty,
            seed: opt.seed,
        })
    }

    pub fn num_params(&self) -> usize {
        let (d, c) = (self.d, self.c);
        match &self.shape {
            Shape::Linear => c * d + c,
            Shape::Mlp { hidden, .. } => hidden * d + hidden + c * hidden + c,
            Shape::Kernel { .. } => self.m * c + c,
        }
    }

    /// Zero scorer, except an MLP's first layer which is drawn from
    /// `N(0, 1/d)` with the configured seed (a zero first layer is a
    /// stationary point). The output layer is zero, so the initial scores
    /// are zero in every case.
    pub fn initial_params(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params()];
        if let Shape::Mlp { hidden, .. } = self.shape {
            let mut rng = rng_from(self.seed, 0x4d4c50);
            let std = 1.0 / (self.d.max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            for v in p.iter_mut().take(hidden * self.d) {
                *v = normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.evaluate(params, None)
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; params.len()];
        let v = self.evaluate(params, Some(&mut g));
        (v, g)
    }

    /// Unpenalised mean loss at `params`.
    pub fn mean_loss(&self, params: &[f64]) -> f64 {
        let penalty = self.penalty(params);
        self.value(params) - penalty
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        let (d, c) = (self.d, self.c);
        match &self.shape {
            Shape::Linear => self.l2 * params[..c * d].iter().map(|v| v * v).sum::<f64>(),
            Shape::Mlp { hidden, .. } => {
                let w1 = &params[..hidden * d];
                let w2 = &params[hidden * d + hidden..hidden * d + hidden + c * hidden];
                self.l2 * w1.iter().chain(w2).map(|v| v * v).sum::<f64>()
            }
            Shape::Kernel { gram, .. } => {
                let m = self.m;
                let beta = &params[..m * c];
                let mut acc = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        let k = gram[i * m + j];
                        for y in 0..c {
                            acc += beta[i * c + y] * k * beta[j * c + y];
                        }
                    }
                }
                self.l2 * acc
            }
        }
    }

    /// Per-row loss given scores; accumulates `dℓ/dscores / m` into `ds`.
    #[inline]
    fn row_loss(&self, scores: &[f64], y: usize, ds: Option<&mut [f64]>) -> f64 {
        let (other, other_val) = best_other(scores, y);
        let margin = scores[y] - other_val;
        if let Some(ds) = ds {
            let g = self.loss.derivative(margin) / self.m as f64;
            ds.iter_mut().for_each(|v| *v = 0.0);
            ds[y] += g;
            ds[other] -= g;
        }
        self.loss.value(margin)
    }

    fn evaluate(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (m, d, c) = (self.m, self.d, self.c);
        let mut total = 0.0;
        let mut scores = vec![0.0; c];
        let mut ds = vec![0.0; c];
        match &self.shape {
            Shape::Linear => {
                let (w, b) = params.split_at(c * d);
                let mut grad = grad;
                for i in 0..m {
                    let xi = &self.x[i * d..(i + 1) * d];
                    for y in 0..c {
                        scores[y] = b[y] + dot(&w[y * d..(y + 1) * d], xi);
                    }
                    match grad.as_deref_mut() {
                        Some(g) => {
                            total += self.row_loss(&scores, self.labels[i], Some(&mut ds));
                            let (gw, gb) = g.split_at_mut(c * d);
                            for y in 0..c {
                                if ds[y] != 0.0 {
                                    axpy(ds[y], xi, &mut gw[y * d..(y + 1) * d]);
                                    gb[y] += ds[y];
                                }
                            }
                        }
                        None => total += self.row_loss(&scores, self.labels[i], None),
                    }
                }
                if let Some(g) = grad {
                    for (gv, wv) in g[..c * d].iter_mut().zip(w) {
                        *gv += 2.0 * self.l2 * wv;
                    }
                }
            }
            Shape::Mlp { hidden, activation } => {
                let h = *hidden;
                let w1 = &params[..h * d];
                let b1 = &params[h * d..h * d + h];
                let w2 = &params[h * d + h..h * d + h + c * h];
                let b2 = &params[h * d + h + c * h..];
                let mut act = vec![0.0; h];
                let mut dh = vec![0.0; h];
                let mut grad = grad;
                for i in 0..m {
                    let xi = &self.x[i * d..(i + 1) * d];
                    for k in 0..h {
                        act[k] = activation.apply(b1[k] + dot(&w1[k * d..(k + 1) * d], xi));
                    }
                    for y in 0..c {
                        scores[y] = b2[y] + dot(&w2[y * h..(y + 1) * h], &act);
                    }
                    match grad.as_deref_mut() {
                        Some(g) => {
                            total += self.row_loss(&scores, self.labels[i], Some(&mut ds));
                            let (gw1, rest) = g.split_at_mut(h * d);
                            let (gb1, rest) = rest.split_at_mut(h);
                            let (gw2, gb2) = rest.split_at_mut(c * h);
                            dh.iter_mut().for_each(|v| *v = 0.0);
                            for y in 0..c {
                                if ds[y] != 0.0 {
                                    axpy(ds[y], &act, &mut gw2[y * h..(y + 1) * h]);
                                    gb2[y] += ds[y];
                                    axpy(ds[y], &w2[y * h..(y + 1) * h], &mut dh);
                                }
                            }
                            for k in 0..h {
                                let delta = dh[k] * activation.derivative_from_output(act[k]);
                                if delta != 0.0 {
                                    axpy(delta, xi, &mut gw1[k * d..(k + 1) * d]);
                                    gb1[k] += delta;
                                }
                            }
                        }
                        None => total += self.row_loss(&scores, self.labels[i], None),
                    }
                }
                if let Some(g) = grad {
                    for (gv, wv) in g[..h * d].iter_mut().zip(w1) {
                        *gv += 2.0 * self.l2 * wv;
                    }
                    let off = h * d + h;
                    for (gv, wv) in g[off..off + c * h].iter_mut().zip(w2) {
                        *gv += 2.0 * self.l2 * wv;
                    }
                }
            }
            Shape::Kernel { gram, .. } => {
                let (beta, b) = params.split_at(m * c);
                // dS (m x C) is needed in full before the K-multiplication.
                let mut dscores = grad.as_ref().map(|_| vec![0.0; m * c]);
                for i in 0..m {
                    for y in 0..c {
                        scores[y] = b[y];
                    }
                    for j in 0..m {
                        let k = gram[i * m + j];
                        if k != 0.0 {
                            axpy(k, &beta[j * c..(j + 1) * c], &mut scores);
                        }
                    }
                    match dscores.as_mut() {
                        Some(dsm) => {
                            total += self.row_loss(&scores, self.labels[i], Some(&mut ds));
                            dsm[i * c..(i + 1) * c].copy_from_slice(&ds);
                        }
                        None => total += self.row_loss(&scores, self.labels[i], None),
                    }
                }
                if let (Some(g), Some(dsm)) = (grad, dscores) {
                    let (gbeta, gb) = g.split_at_mut(m * c);
                    // ∇β = K (dS + 2λβ); K symmetric.
                    let mut inner = dsm;
                    for (v, bv) in inner.iter_mut().zip(beta) {
                        *v += 2.0 * self.l2 * bv;
                    }
                    for i in 0..m {
                        for j in 0..m {
                            let k = gram[i * m + j];
                            if k != 0.0 {
                                axpy(k, &inner[j * c..(j + 1) * c], &mut gbeta[i * c..(i + 1) * c]);
                            }
                        }
                    }
                    for i in 0..m {
                        for y in 0..c {
                            gb[y] += inner[i * c + y] - 2.0 * self.l2 * beta[i * c + y];
                        }
                    }
                }
            }
        }
        total / m as f64 + self.penalty(params)
    }

    /// Converts parameters into a scorer over the original coordinates.
    pub fn to_scorer(&self, params: &[f64]) -> Scorer {
        let (d, c) = (self.d, self.c);
        match &self.shape {
            Shape::Linear => {
                let weights = Array2::from_shape_vec((c, d), params[..c * d].to_vec()).unwrap();
                let mut bias = Array1::from(params[c * d..].to_vec());
                for y in 0..c {
                    bias[y] -= dot(&params[y * d..(y + 1) * d], &self.center);
                }
                Scorer::Linear { weights, bias }
            }
            Shape::Mlp { hidden, activation } => {
                let h = *hidden;
                let w1 = Array2::from_shape_vec((h, d), params[..h * d].to_vec()).unwrap();
                let mut b1 = Array1::from(params[h * d..h * d + h].to_vec());
                for k in 0..h {
                    b1[k] -= dot(&params[k * d..(k + 1) * d], &self.center);
                }
                let off = h * d + h;
                let w2 = Array2::from_shape_vec((c, h), params[off..off + c * h].to_vec()).unwrap();
                let b2 = Array1::from(params[off + c * h..].to_vec());
                Scorer::Mlp {
                    w1,
                    b1,
                    w2,
                    b2,
                    activation: *activation,
                }
            }
            Shape::Kernel { kernel, .. } => {
                let m = self.m;
                Scorer::KernelExpansion {
                    anchors: Array2::from_shape_vec((m, d), self.raw.clone()).unwrap(),
                    alpha: Array2::from_shape_vec((m, c), params[..m * c].to_vec()).unwrap(),
                    bias: Array1::from(params[m * c..].to_vec()),
                    kernel: kernel.clone(),
                }
            }
        }
    }
}

/// Outcome statistics of a descent run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentStats {
    pub iterations: usize,
    pub objective: f64,
    pub gradient_norm: f64,
}

/// Full-batch gradient descent with Armijo backtracking. The step halves
/// until sufficient decrease holds and doubles after each accepted step, so
/// the objective never increases.
pub fn gradient_descent(
    objective: &Objective,
    mut params: Vec<f64>,
    opt: &OptConfig,
) -> Result<(Vec<f64>, DescentStats)> {
    let (mut f, mut g) = objective.value_and_gradient(&params);
    let mut step = opt.initial_step;
    let mut iterations = 0;
    let mut trial = vec![0.0; params.len()];
    loop {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if !f.is_finite() || !gnorm2.is_finite() {
            return Err(Error::OptimizationDiverged {
                iterations,
                objective: f,
            });
        }
        if iterations >= opt.max_iters || gnorm2.sqrt() <= opt.tolerance * (1.0 + f.abs()) {
            return Ok((
                params,
                DescentStats {
                    iterations,
                    objective: f,
                    gradient_norm: gnorm2.sqrt(),
                },
            ));
        }
        let mut accepted = false;
        while step > 1e-20 {
            for ((t, p), gv) in trial.iter_mut().zip(&params).zip(&g) {
                *t = p - step * gv;
            }
            let ft = objective.value(&trial);
            if ft.is_finite() && ft <= f - 0.5 * step * gnorm2 {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No representable step decreases the objective: stationary.
            return Ok((
                params,
                DescentStats {
                    iterations,
                    objective: f,
                    gradient_norm: gnorm2.sqrt(),
                },
            ));
        }
        std::mem::swap(&mut params, &mut trial);
        (f, g) = objective.value_and_gradient(&params);
        step *= 2.0;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_dataset(n: usize, d: usize, c: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed, 1);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        Dataset::from_rows(&rows, labels, c).unwrap()
    }

    fn families() -> Vec<ScorerFamily> {
        vec![
            ScorerFamily::Linear,
            ScorerFamily::Mlp {
                hidden: 4,
                activation: Activation::Tanh,
            },
            ScorerFamily::KernelMachine {
                kernel: KernelSpec::Gaussian { bandwidth: 1.3 },
            },
        ]
    }

    #[test]
    fn empirical_risk_examples() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![-1.0], vec![0.5]], vec![0, 1, 1], 2).unwrap();
        let scorer = Scorer::Linear {
            weights: ndarray::array![[1.0], [-1.0]],
            bias: ndarray::array![0.0, 0.25],
        };
        // Per-example margins, computed by hand: scores (x, -x + 0.25).
        let margins = [1.0 - (-0.75), 1.25 - (-1.0), -0.25 - 0.5];
        let oracle: f64 =
            margins.iter().map(|&m: &f64| (1.0 + (-m).exp()).ln()).sum::<f64>() / 3.0;
        let got = empirical_risk(&scorer, &ds, &LossSpec::MulticlassLogistic).unwrap();
        assert!((got - oracle).abs() < 1e-14);

        let one = ds.subset(&[0]);
        let hinge = LossSpec::MarginHinge { margin_target: 2.0 };
        assert_eq!(empirical_risk(&scorer, &one, &hinge).unwrap(), 0.25);
        let two = ds.subset(&[0, 2]);
        assert_eq!(empirical_risk(&scorer, &two, &hinge).unwrap(), (0.25 + 2.75) / 2.0);

        assert!(empirical_risk(&scorer, &Dataset::empty(1, 2), &hinge).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (t, family) in families().into_iter().enumerate() {
            for (seed, loss) in [
                LossSpec::MulticlassLogistic,
                LossSpec::SmoothedMargin { temperature: 0.5 },
            ]
            .into_iter()
            .enumerate()
            {
                let ds = random_dataset(9, 3, 3, 10 * t as u64 + seed as u64);
                let rows: Vec<usize> = (0..ds.len()).collect();
                let opt = OptConfig {
                    l2_penalty: 0.05,
                    ..OptConfig::default()
                };
                let obj = Objective::new(&ds, &rows, &family, loss, &opt).unwrap();
                let mut rng = rng_from(seed as u64, 99);
                let p: Vec<f64> = (0..obj.num_params())
                    .map(|_| rng.random_range(-0.7..0.7))
                    .collect();
                let (_, g) = obj.value_and_gradient(&p);
                for k in 0..p.len() {
                    let h = 1e-6;
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    plus[k] += h;
                    minus[k] -= h;
                    let fd = (obj.value(&plus) - obj.value(&minus)) / (2.0 * h);
                    let scale = fd.abs().max(g[k].abs()).max(1e-3);
                    assert!(
                        (fd - g[k]).abs() / scale < 1e-5,
                        "{} param {k}: fd {fd} vs {}",
                        family.name(),
                        g[k]
                    );
                }
            }
        }
    }

    #[test]
    fn separable_pair_is_fit() {
        let ds = Dataset::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]], vec![0, 1], 2).unwrap();
        let s = train_global(&ds, &ScorerFamily::Linear, &LossSpec::default(), &OptConfig::default())
            .unwrap();
        assert_eq!(accuracy(&s, &ds), 1.0);
    }

    #[test]
    fn constant_labels_predicted_everywhere() {
        let mut ds = random_dataset(30, 2, 3, 4);
        ds = Dataset::new(ds.points().to_owned(), vec![2; 30], 3).unwrap();
        for family in families() {
            let s = train_global(&ds, &family, &LossSpec::default(), &OptConfig::default()).unwrap();
            assert_eq!(accuracy(&s, &ds), 1.0, "{}", family.name());
        }
    }

    #[test]
    fn training_never_worse_than_zero_scorer() {
        for family in families() {
            let ds = random_dataset(25, 3, 3, 11);
            let s = train_global(&ds, &family, &LossSpec::default(), &OptConfig::default()).unwrap();
            let zero = Scorer::zero_linear(3, 3);
            let loss = LossSpec::default();
            assert!(
                empirical_risk(&s, &ds, &loss).unwrap()
                    <= empirical_risk(&zero, &ds, &loss).unwrap() + 1e-12
            );
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = random_dataset(20, 3, 2, 5);
        let fam = ScorerFamily::Mlp {
            hidden: 5,
            activation: Activation::Tanh,
        };
        let opt = OptConfig {
            seed: 17,
            ..OptConfig::default()
        };
        let a = train_global(&ds, &fam, &LossSpec::default(), &opt).unwrap();
        let b = train_global(&ds, &fam, &LossSpec::default(), &opt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn huge_features_report_divergence() {
        let ds = Dataset::from_rows(&[vec![1e300], vec![-1e300], vec![3e299]], vec![0, 1, 0], 2)
            .unwrap();
        let err = train_global(&ds, &ScorerFamily::Linear, &LossSpec::default(), &OptConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::OptimizationDiverged { .. }), "{err}");
    }

    #[test]
    fn too_few_rows_rejected() {
        let ds = Dataset::from_rows(&[vec![0.0]], vec![0], 3).unwrap();
        assert!(train_global(&ds, &ScorerFamily::Linear, &LossSpec::default(), &OptConfig::default())
            .is_err());
    }
}
