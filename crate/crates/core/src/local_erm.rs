//! Local empirical risk minimisation: for each query, retrieve its
//! neighbours, fit a scorer on them alone and classify the query with it.

use std::io::Write;

use crate::dataset::Dataset;
use crate::erm::{gradient_descent, Objective, OptConfig};
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::par;
use crate::representation::FeatureMap;
use crate::retrieval::{Backend, Metric, RetrievalIndex, RetrievedSet};
use crate::scorer::{argmax, Scorer, ScorerFamily};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetrievalMode {
    Radius(f64),
    TopK(usize),
}

/// Prediction rule when fewer than `min_retrieved` rows are retrieved.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Fallback {
    #[default]
    NearestNeighborLabel,
    /// Scores the raw query with a fixed scorer.
    GlobalScorer(Scorer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalErmConfig {
    pub retrieval: RetrievalMode,
    pub family: ScorerFamily,
    pub loss: LossSpec,
    /// Iteration budget, step size, seed and the L2 penalty weight.
    pub opt: OptConfig,
    pub fallback: Fallback,
    pub min_retrieved: usize,
    /// Retrieval and fitting happen on `Φ(x)` when set; the index must then
    /// use `Metric::Representation` with the same map.
    pub feature_map: Option<FeatureMap>,
    /// Keep the fitted local scorer in each [`LocalPrediction`].
    pub keep_local_scorer: bool,
}

impl LocalErmConfig {
    pub fn new(retrieval: RetrievalMode, family: ScorerFamily) -> Self {
        LocalErmConfig {
            retrieval,
            family,
            loss: LossSpec::default(),
            opt: OptConfig::default(),
            fallback: Fallback::default(),
            min_retrieved: 2,
            feature_map: None,
            keep_local_scorer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.retrieval {
            RetrievalMode::Radius(r) if !(r > 0.0 && r.is_finite()) => {
                return Err(Error::config(format!("radius must be positive, got {r}")))
            }
            RetrievalMode::TopK(0) => return Err(Error::config("k must be at least 1")),
            _ => {}
        }
        if self.min_retrieved == 0 {
            return Err(Error::config("min_retrieved must be at least 1"));
        }
        if self.opt.l2_penalty < 0.0 {
            return Err(Error::config("l2 penalty must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPrediction {
    pub predicted_class: usize,
    pub scores: Vec<f64>,
    pub retrieved_count: usize,
    pub used_fallback: bool,
    pub local_scorer: Option<Scorer>,
}

/// Fits `config.family` on the retrieved rows only.
pub fn local_fit(retrieved: &RetrievedSet, data: &Dataset, config: &LocalErmConfig) -> Result<Scorer> {
    if retrieved.len() < config.min_retrieved.max(1) {
        return Err(Error::InsufficientNeighbors {
            retrieved: retrieved.len(),
            required: config.min_retrieved.max(1),
        });
    }
    let objective = match &config.feature_map {
        None => Objective::new(data, &retrieved.indices, &config.family, config.loss, &config.opt)?,
        Some(map) => {
            let mut raw = Vec::with_capacity(retrieved.len() * map.output_dim());
            for &i in &retrieved.indices {
                raw.extend(map.apply(data.row(i)));
            }
            let labels = retrieved.indices.iter().map(|&i| data.label(i)).collect();
            Objective::from_parts(
                raw,
                labels,
                map.output_dim(),
                data.num_classes(),
                &config.family,
                config.loss,
                &config.opt,
            )?
        }
    };
    let (params, _) = gradient_descent(&objective, objective.initial_params(), &config.opt)?;
    Ok(objective.to_scorer(&params))
}

fn retrieve(
    x: &[f64],
    index: &RetrievalIndex,
    mode: RetrievalMode,
    exclude: Option<usize>,
) -> Result<RetrievedSet> {
    match mode {
        RetrievalMode::Radius(r) => index.ball_query(x, r, exclude),
        RetrievalMode::TopK(k) => index.knn_query(x, k, exclude),
    }
}

fn one_hot(c: usize, y: usize) -> Vec<f64> {
    let mut s = vec![0.0; c];
    s[y] = 1.0;
    s
}

/// Retrieve, fit and classify one query. `exclude` drops one training row
/// from retrieval (used when the query is itself a training row).
pub fn local_predict(
    x: &[f64],
    index: &RetrievalIndex,
    data: &Dataset,
    config: &LocalErmConfig,
    exclude: Option<usize>,
) -> Result<LocalPrediction> {
    if data.is_empty() {
        return Err(Error::domain("local prediction over an empty dataset"));
    }
    if index.len() != data.len() {
        return Err(Error::domain("index was not built over this dataset"));
    }
    if let Some(map) = &config.feature_map {
        if *index.metric() != Metric::Representation(map.clone()) {
            return Err(Error::config("index metric does not match the configured feature map"));
        }
    }
    let c = data.num_classes();
    let retrieved = retrieve(x, index, config.retrieval, exclude)?;
    let count = retrieved.len();
    if count < config.min_retrieved {
        let scores = match &config.fallback {
            Fallback::NearestNeighborLabel => {
                let nn = index.knn_query(x, 1, exclude)?;
                let i = *nn
                    .indices
                    .first()
                    .ok_or_else(|| Error::domain("no row left to retrieve"))?;
                one_hot(c, data.label(i))
            }
            Fallback::GlobalScorer(s) => s.scores(x),
        };
        return Ok(LocalPrediction {
            predicted_class: argmax(&scores),
            scores,
            retrieved_count: count,
            used_fallback: true,
            local_scorer: None,
        });
    }
    if c == 1 {
        return Ok(LocalPrediction {
            predicted_class: 0,
            scores: vec![0.0],
            retrieved_count: count,
            used_fallback: false,
            local_scorer: None,
        });
    }
    let scorer = local_fit(&retrieved, data, config)?;
    let scores = match &config.feature_map {
        None => scorer.scores(x),
        Some(map) => scorer.scores(&map.apply(x)),
    };
    Ok(LocalPrediction {
        predicted_class: argmax(&scores),
        scores,
        retrieved_count: count,
        used_fallback: false,
        local_scorer: config.keep_local_scorer.then_some(scorer),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDiagnostic {
    pub query_id: usize,
    pub retrieved_count: usize,
    pub used_fallback: bool,
    pub predicted: usize,
    pub true_label: usize,
}

impl QueryDiagnostic {
    pub fn correct(&self) -> bool {
        self.predicted == self.true_label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEvaluation {
    pub accuracy: f64,
    pub fallback_rate: f64,
    pub mean_retrieved: f64,
    pub diagnostics: Vec<QueryDiagnostic>,
}

impl LocalEvaluation {
    fn from_diagnostics(diagnostics: Vec<QueryDiagnostic>) -> Self {
        let n = diagnostics.len().max(1) as f64;
        let correct = diagnostics.iter().filter(|d| d.correct()).count() as f64;
        let fallback = diagnostics.iter().filter(|d| d.used_fallback).count() as f64;
        let retrieved: usize = diagnostics.iter().map(|d| d.retrieved_count).sum();
        LocalEvaluation {
            accuracy: correct / n,
            fallback_rate: fallback / n,
            mean_retrieved: retrieved as f64 / n,
            diagnostics,
        }
    }

    /// Sorted retrieved-set sizes, one per query.
    pub fn retrieved_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.diagnostics.iter().map(|d| d.retrieved_count).collect();
        v.sort_unstable();
        v
    }

    /// CSV with header `queryId,retrievedCount,usedFallback,predicted,trueLabel,correct`.
    pub fn write_diagnostics_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["queryId", "retrievedCount", "usedFallback", "predicted", "trueLabel", "correct"])?;
        for d in &self.diagnostics {
            w.write_record([
                d.query_id.to_string(),
                d.retrieved_count.to_string(),
                d.used_fallback.to_string(),
                d.predicted.to_string(),
                d.true_label.to_string(),
                d.correct().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn build_index(train: &Dataset, config: &LocalErmConfig) -> Result<RetrievalIndex> {
    let metric = match &config.feature_map {
        Some(map) => Metric::Representation(map.clone()),
        None => Metric::Euclidean,
    };
    RetrievalIndex::build(train, metric, Backend::VantagePointTree)
}

fn evaluate_queries(
    train: &Dataset,
    queries: &Dataset,
    config: &LocalErmConfig,
    self_exclude: bool,
) -> Result<LocalEvaluation> {
    config.validate()?;
    if train.is_empty() || queries.is_empty() {
        return Err(Error::domain("training and test sets must be nonempty"));
    }
    if train.dim() != queries.dim() || train.num_classes() != queries.num_classes() {
        return Err(Error::domain(format!(
            "train is {}-dim with {} classes, test is {}-dim with {} classes",
            train.dim(),
            train.num_classes(),
            queries.dim(),
            queries.num_classes()
        )));
    }
    let index = build_index(train, config)?;
    let results: Vec<Result<QueryDiagnostic>> = par::map_range(queries.len(), |i| {
        let exclude = self_exclude.then_some(i);
        let p = local_predict(queries.row(i), &index, train, config, exclude)?;
        Ok(QueryDiagnostic {
            query_id: i,
            retrieved_count: p.retrieved_count,
            used_fallback: p.used_fallback,
            predicted: p.predicted_class,
            true_label: queries.label(i),
        })
    });
    Ok(LocalEvaluation::from_diagnostics(
        results.into_iter().collect::<Result<_>>()?,
    ))
}

/// Local ERM accuracy on a held-out set; queries are never excluded from
/// their own retrieval.
pub fn evaluate_local_erm(train: &Dataset, test: &Dataset, config: &LocalErmConfig) -> Result<LocalEvaluation> {
    evaluate_queries(train, test, config, false)
}

/// Leave-one-out evaluation on the training set: each row is excluded from
/// its own retrieved set.
pub fn evaluate_local_erm_excluding(train: &Dataset, config: &LocalErmConfig) -> Result<LocalEvaluation> {
    evaluate_queries(train, train, config, true)
}
