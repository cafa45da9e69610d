use std::time::Instant;

use crate::dataset::Dataset;
use crate::erm::{accuracy, train_global, OptConfig};
use crate::error::{Error, Result};
use crate::extended_kernel::{
    build_extended_gram, build_extended_gram_cached, train_extended, ExtendedPoint, GramCache,
};
use crate::local_erm::{evaluate_local_erm, Fallback, LocalErmConfig, RetrievalMode};
use crate::par;
use crate::representation::{compose_local, fit_representation};
use crate::retrieval::RetrievalIndex;
use crate::rng::derive_seed;
use crate::scorer::{argmax, ScorerFamily};
use crate::synthetic::{sample_dataset, sample_mixture_spec, MixtureSpec};

use super::config::{DataSource, ExperimentConfig, Method, MethodSpec};
use super::cv::{cross_validate, DEFAULT_HOLDOUT};
use super::report::{ResultRow, ResultTable};

/// Data for one experiment.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    /// Independent test set (`test_n`), used for every fold.
    pub test: Option<Dataset>,
    /// Generating spec and per-row clusters of synthetic data.
    pub mixture: Option<(MixtureSpec, Vec<usize>)>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<LoadedData> {
    match &config.data {
        DataSource::Synthetic {
            clusters,
            dim,
            mean_range,
            n,
            spec_seed,
            data_seed,
        } => {
            let spec = sample_mixture_spec(*clusters, *dim, *mean_range, *spec_seed)?;
            let (data, assignment) = sample_dataset(&spec, *n, *data_seed)?;
            let test = match config.test_n {
                Some(m) => Some(sample_dataset(&spec, m, derive_seed(*data_seed, 7))?.0),
                None => None,
            };
            Ok(LoadedData {
                data,
                test,
                mixture: Some((spec, assignment)),
            })
        }
        DataSource::File { path, num_classes } => {
            let data = if path.extension().is_some_and(|e| e == "bin") {
                Dataset::load(path)?
            } else {
                Dataset::read_csv(std::fs::File::open(path)?, *num_classes)?
            };
            Ok(LoadedData {
                data,
                test: None,
                mixture: None,
            })
        }
    }
}

/// Accuracy and retrieval statistics of one method on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodEval {
    pub accuracy: f64,
    pub mean_retrieved: f64,
    pub fallback_rate: f64,
}

fn local_config(config: &ExperimentConfig, family: &ScorerFamily, radius: f64, seed: u64) -> LocalErmConfig {
    LocalErmConfig {
        retrieval: RetrievalMode::Radius(radius),
        family: family.clone(),
        loss: config.loss,
        opt: OptConfig {
            seed,
            ..config.local_opt.clone()
        },
        fallback: Fallback::NearestNeighborLabel,
        min_retrieved: config.min_retrieved,
        feature_map: None,
        keep_local_scorer: false,
    }
}

/// Majority vote of the `k` nearest training rows; lowest label on ties.
pub fn knn_accuracy(train: &Dataset, test: &Dataset, k: usize) -> Result<f64> {
    let index = RetrievalIndex::euclidean(train)?;
    let hits: Vec<Result<bool>> = par::map_range(test.len(), |i| {
        let set = index.knn_query(test.row(i), k, None)?;
        let mut votes = vec![0.0; train.num_classes()];
        for &j in &set.indices {
            votes[train.label(j)] += 1.0;
        }
        Ok(argmax(&votes) == test.label(i))
    });
    let correct = hits.into_iter().collect::<Result<Vec<bool>>>()?.into_iter().filter(|&h| h).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Evaluates one method at one sweep value; `seed` feeds the optimisers.
pub fn evaluate_method(
    method: &MethodSpec,
    train: &Dataset,
    test: &Dataset,
    radius: f64,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<MethodEval> {
    if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
        return Err(Error::config("train and test sets disagree in dimension or classes"));
    }
    match method {
        MethodSpec::Global { family } => {
            let opt = OptConfig {
                seed,
                ..config.global_opt.clone()
            };
            let scorer = train_global(train, family, &config.loss, &opt)?;
            Ok(MethodEval {
                accuracy: accuracy(&scorer, test),
                mean_retrieved: train.len() as f64,
                fallback_rate: 0.0,
            })
        }
        MethodSpec::Local { family } => {
            let e = evaluate_local_erm(train, test, &local_config(config, family, radius, seed))?;
            Ok(MethodEval {
                accuracy: e.accuracy,
                mean_retrieved: e.mean_retrieved,
                fallback_rate: e.fallback_rate,
            })
        }
        MethodSpec::TwoStage { representation, family } => {
            let map = fit_representation(train, representation)?;
            let cfg = compose_local(map, &local_config(config, family, radius, seed));
            let e = evaluate_local_erm(train, test, &cfg)?;
            Ok(MethodEval {
                accuracy: e.accuracy,
                mean_retrieved: e.mean_retrieved,
                fallback_rate: e.fallback_rate,
            })
        }
        MethodSpec::Extended { specs, lambda } => {
            let index = RetrievalIndex::euclidean(train)?;
            let (gram, points) = match &config.gram_cache {
                Some(dir) => build_extended_gram_cached(train, &index, radius, specs, &GramCache::new(dir)?)?,
                None => build_extended_gram(train, &index, radius, specs)?,
            };
            let model = train_extended(&gram, points, train, *lambda, radius)?;
            drop(gram);
            let per_query: Vec<Result<(bool, usize, bool)>> = par::map_range(test.len(), |i| {
                let x = test.row(i);
                let ball = index.ball_query(x, radius, None)?;
                let (retrieved, fallback) = if ball.is_empty() {
                    (index.knn_query(x, 1, None)?, true)
                } else {
                    (ball, false)
                };
                let count = if fallback { 0 } else { retrieved.len() };
                let q = ExtendedPoint {
                    x: x.to_vec(),
                    retrieved,
                };
                let scores = model.scores_point(&q, train)?;
                Ok((argmax(&scores) == test.label(i), count, fallback))
            });
            let per_query = per_query.into_iter().collect::<Result<Vec<_>>>()?;
            let m = per_query.len() as f64;
            Ok(MethodEval {
                accuracy: per_query.iter().filter(|q| q.0).count() as f64 / m,
                mean_retrieved: per_query.iter().map(|q| q.1).sum::<usize>() as f64 / m,
                fallback_rate: per_query.iter().filter(|q| q.2).count() as f64 / m,
            })
        }
        MethodSpec::Knn { k } => Ok(MethodEval {
            accuracy: knn_accuracy(train, test, *k)?,
            mean_retrieved: (*k).min(train.len()) as f64,
            fallback_rate: 0.0,
        }),
    }
}

#[derive(Debug, Clone, Copy)]
enum Task {
    /// One sweep value of a sweep-dependent method.
    Sweep { method: usize, sweep: usize, fold: usize },
    /// A sweep-independent method, evaluated once and replicated.
    Flat { method: usize, fold: usize },
    /// Inner-split selection of the sweep value, then outer evaluation.
    Best { method: usize, fold: usize },
}

type Keyed = ((usize, usize, usize), ResultRow);

/// Runs every method at every sweep value on every fold. Tasks run in
/// parallel; rows come back in `(method, sweep value, fold)` order. With
/// `select_best`, rows named `<method>[best]` follow.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    let loaded = load_data(config)?;
    run_on_data(config, &loaded.data, loaded.test.as_ref())
}

pub fn run_on_data(config: &ExperimentConfig, data: &Dataset, test: Option<&Dataset>) -> Result<ResultTable> {
    if config.methods.is_empty() || config.sweep.is_empty() {
        return Err(Error::config("need at least one method and one sweep value"));
    }
    if let Some(t) = test {
        if t.dim() != data.dim() || t.num_classes() != data.num_classes() {
            return Err(Error::config("test set disagrees with training data"));
        }
    }
    let splits = cross_validate(data.len(), config.folds, derive_seed(config.seed, 2), config.holdout)?;
    let mut tasks = Vec::new();
    for (m, method) in config.methods.iter().enumerate() {
        for fold in 0..splits.len() {
            if method.spec.uses_sweep() {
                for s in 0..config.sweep.len() {
                    tasks.push(Task::Sweep { method: m, sweep: s, fold });
                }
                if config.select_best {
                    tasks.push(Task::Best { method: m, fold });
                }
            } else {
                tasks.push(Task::Flat { method: m, fold });
            }
        }
    }
    let split_data: Vec<(Dataset, Dataset)> = splits
        .iter()
        .map(|(tr, te)| {
            let train = data.subset(tr);
            let test = match test {
                Some(t) => t.clone(),
                None => data.subset(te),
            };
            (train, test)
        })
        .collect();
    let n_methods = config.methods.len();
    let results: Vec<Result<Vec<Keyed>>> = par::map_slice(&tasks, |task| {
        run_task(*task, config, &split_data, n_methods)
    });
    let mut rows: Vec<Keyed> = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(ResultTable {
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

fn task_seed(config: &ExperimentConfig, method: usize, fold: usize) -> u64 {
    derive_seed(derive_seed(config.seed, 100 + method as u64), fold as u64)
}

fn run_task(task: Task, config: &ExperimentConfig, splits: &[(Dataset, Dataset)], n_methods: usize) -> Result<Vec<Keyed>> {
    let row = |method: &Method, name: String, sweep_value: f64, fold: usize, e: MethodEval, ms: u64| {
        let _ = method;
        ResultRow {
            method: name,
            sweep_value,
            fold,
            accuracy: e.accuracy,
            mean_retrieved: e.mean_retrieved,
            fallback_rate: e.fallback_rate,
            wall_clock_ms: ms,
        }
    };
    match task {
        Task::Sweep { method, sweep, fold } => {
            let m = &config.methods[method];
            let (train, test) = &splits[fold];
            let start = Instant::now();
            let radius = config.sweep[sweep];
            let e = evaluate_method(&m.spec, train, test, radius, config, task_seed(config, method, fold))?;
            let ms = start.elapsed().as_millis() as u64;
            Ok(vec![((method, sweep, fold), row(m, m.name.clone(), radius, fold, e, ms))])
        }
        Task::Flat { method, fold } => {
            let m = &config.methods[method];
            let (train, test) = &splits[fold];
            let start = Instant::now();
            let e = evaluate_method(&m.spec, train, test, config.sweep[0], config, task_seed(config, method, fold))?;
            let ms = start.elapsed().as_millis() as u64;
            Ok(config
                .sweep
                .iter()
                .enumerate()
                .map(|(s, &v)| ((method, s, fold), row(m, m.name.clone(), v, fold, e, ms)))
                .collect())
        }
        Task::Best { method, fold } => {
            let m = &config.methods[method];
            let (train, test) = &splits[fold];
            let start = Instant::now();
            let seed = task_seed(config, method, fold);
            let inner = cross_validate(train.len(), 1, derive_seed(seed, 3), DEFAULT_HOLDOUT)?;
            let (inner_train, val) = (train.subset(&inner[0].0), train.subset(&inner[0].1));
            let mut best = (f64::NEG_INFINITY, config.sweep[0]);
            for &r in &config.sweep {
                let acc = evaluate_method(&m.spec, &inner_train, &val, r, config, seed)?.accuracy;
                if acc > best.0 {
                    best = (acc, r);
                }
            }
            let e = evaluate_method(&m.spec, train, test, best.1, config, seed)?;
            let ms = start.elapsed().as_millis() as u64;
            Ok(vec![(
                (n_methods + method, 0, fold),
                row(m, format!("{}[best]", m.name), best.1, fold, e, ms),
            )])
        }
    }
}
