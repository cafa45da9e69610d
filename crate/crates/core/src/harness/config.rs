//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Unknown keys are rejected. See the project README for
//! the full key table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::erm::OptConfig;
use crate::error::{Error, Result};
use crate::extended_kernel::{ExtendedSpecs, Kappa, KernelSpec, LabelEncoding};
use crate::loss::LossSpec;
use crate::representation::RepresentationSpec;
use crate::rng::derive_seed;
use crate::scorer::{Activation, ScorerFamily};
use crate::synthetic::MixtureSpec;

use super::cv::DEFAULT_HOLDOUT;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        clusters: usize,
        dim: usize,
        mean_range: (f64, f64),
        n: usize,
        spec_seed: u64,
        data_seed: u64,
    },
    File {
        path: PathBuf,
        num_classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    Global { family: ScorerFamily },
    Local { family: ScorerFamily },
    TwoStage { representation: RepresentationSpec, family: ScorerFamily },
    Extended { specs: ExtendedSpecs, lambda: f64 },
    Knn { k: usize },
}

impl MethodSpec {
    /// Whether the sweep value changes the method's behaviour.
    pub fn uses_sweep(&self) -> bool {
        !matches!(self, MethodSpec::Global { .. } | MethodSpec::Knn { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub spec: MethodSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Size of an independent synthetic test set; `None` evaluates on the
    /// held-out fold.
    pub test_n: Option<usize>,
    pub methods: Vec<Method>,
    /// Retrieval radii.
    pub sweep: Vec<f64>,
    pub folds: usize,
    pub holdout: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub loss: LossSpec,
    pub global_opt: OptConfig,
    pub local_opt: OptConfig,
    pub min_retrieved: usize,
    pub select_best: bool,
    pub gram_cache: Option<PathBuf>,
}

/// Inputs of `locem bounds` beyond the data source.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSettings {
    pub delta: f64,
    pub eps_x: f64,
    pub eps_loc: f64,
    pub loss_lipschitz: f64,
    /// `None`: probe the fitted scorers.
    pub local_lipschitz: Option<f64>,
    pub global_lipschitz: Option<f64>,
    pub true_lipschitz: Option<f64>,
    pub sup_norm_local: Option<f64>,
    pub sup_norm_global: Option<f64>,
    pub rkhs_bound: f64,
    pub universal_constant: f64,
    pub theorem2_constants: (f64, f64, f64),
    pub mc_draws: usize,
    pub anchors: usize,
    pub sensitivity_trials: usize,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            delta: 0.05,
            eps_x: 0.0,
            eps_loc: 0.0,
            loss_lipschitz: 1.0,
            local_lipschitz: None,
            global_lipschitz: None,
            true_lipschitz: None,
            sup_norm_local: None,
            sup_norm_global: None,
            rkhs_bound: 1.0,
            universal_constant: 1.0,
            theorem2_constants: (1.0, 1.0, 1.0),
            mc_draws: 200,
            anchors: 8,
            sensitivity_trials: 4,
        }
    }
}

struct Kv {
    map: BTreeMap<String, String>,
}

impl Kv {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", no + 1)))?;
            let key = k.trim().to_string();
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {key}", no + 1)));
            }
        }
        Ok(Kv { map })
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::config(format!("{key}: cannot parse {s:?}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.map.keys().map(String::as_str).collect();
            Err(Error::config(format!("unknown keys: {}", keys.join(", "))))
        }
    }
}

/// Radii used when no `sweep` is given.
pub const DEFAULT_SWEEP: [f64; 7] = [2.5, 3.5, 4.5, 5.5, 7.0, 9.0, 12.0];

pub fn parse_config(text: &str) -> Result<(ExperimentConfig, BoundSettings)> {
    let mut kv = Kv::parse(text)?;
    let seed: u64 = kv.get("seed", 0)?;

    let data = match kv.take_str("data").as_deref() {
        None | Some("synthetic") => DataSource::Synthetic {
            clusters: kv.get("clusters", MixtureSpec::DEFAULT_CLUSTERS)?,
            dim: kv.get("dim", MixtureSpec::DEFAULT_DIM)?,
            mean_range: (
                kv.get("mean_low", MixtureSpec::DEFAULT_RANGE.0)?,
                kv.get("mean_high", MixtureSpec::DEFAULT_RANGE.1)?,
            ),
            n: kv.get("n", 10_000)?,
            spec_seed: kv.get("spec_seed", seed)?,
            data_seed: kv.get("data_seed", derive_seed(seed, 1))?,
        },
        Some(path) => DataSource::File {
            path: PathBuf::from(path),
            num_classes: kv.take("num_classes")?,
        },
    };
    let test_n: Option<usize> = kv.take("test_n")?;
    if test_n.is_some() && matches!(data, DataSource::File { .. }) {
        return Err(Error::config("test_n applies to synthetic data only"));
    }

    let loss = match kv.take_str("loss").as_deref() {
        None | Some("logistic") => LossSpec::MulticlassLogistic,
        Some("hinge") => LossSpec::MarginHinge {
            margin_target: kv.get("loss_param", 1.0)?,
        },
        Some("smoothed") => LossSpec::SmoothedMargin {
            temperature: kv.get("loss_param", 0.5)?,
        },
        Some(other) => return Err(Error::config(format!("unknown loss {other:?}"))),
    };
    let step: f64 = kv.get("step", 1.0)?;
    let tolerance: f64 = kv.get("tolerance", 1e-6)?;
    let l2: f64 = kv.get("l2", 1e-3)?;
    let global_opt = OptConfig {
        max_iters: kv.get("global_max_iters", 300)?,
        initial_step: step,
        tolerance,
        l2_penalty: l2,
        seed,
    };
    let local_opt = OptConfig {
        max_iters: kv.get("local_max_iters", 100)?,
        l2_penalty: kv.get("local_l2", l2)?,
        ..global_opt.clone()
    };

    let activation = match kv.take_str("activation").as_deref() {
        None | Some("tanh") => Activation::Tanh,
        Some("identity") => Activation::Identity,
        Some(other) => return Err(Error::config(format!("unknown activation {other:?}"))),
    };
    let mlp = ScorerFamily::Mlp {
        hidden: kv.get("mlp_hidden", 8)?,
        activation,
    };
    let local_kernel = ScorerFamily::KernelMachine {
        kernel: KernelSpec::Gaussian {
            bandwidth: kv.get("local_kernel_bandwidth", 1.0)?,
        },
    };
    let pca_components: usize = kv.get("pca_components", 5)?;
    let embed_dim: usize = kv.get("embed_dim", 5)?;
    let ext_specs = ExtendedSpecs {
        k_x: KernelSpec::Gaussian {
            bandwidth: kv.get("ext_kx", 3.0)?,
        },
        k_z: KernelSpec::Gaussian {
            bandwidth: kv.get("ext_kz", 3.0)?,
        },
        kappa: match kv.take_str("ext_kappa").as_deref() {
            Some("linear") => Kappa::Linear,
            None => Kappa::Gaussian { bandwidth: 0.5 },
            Some(v) => Kappa::Gaussian {
                bandwidth: v
                    .parse()
                    .map_err(|_| Error::config(format!("ext_kappa: cannot parse {v:?}")))?,
            },
        },
        label_encoding: match kv.take_str("ext_label").as_deref() {
            None | Some("indicator") => LabelEncoding::Indicator,
            Some("onehot") => LabelEncoding::OneHot {
                scale: kv.get("ext_onehot_scale", 1.0)?,
            },
            Some(other) => return Err(Error::config(format!("unknown ext_label {other:?}"))),
        },
    };
    let ext_lambda: f64 = kv.get("ext_lambda", 1e-3)?;
    let knn_k: usize = kv.get("knn_k", 1)?;

    let names: Vec<String> = kv
        .list("methods")?
        .unwrap_or_else(|| vec!["global-linear".to_string(), "local-linear".to_string()]);
    let mut methods = Vec::with_capacity(names.len());
    for name in names {
        let spec = match name.as_str() {
            "global-linear" => MethodSpec::Global { family: ScorerFamily::Linear },
            "global-mlp" => MethodSpec::Global { family: mlp.clone() },
            "local-linear" => MethodSpec::Local { family: ScorerFamily::Linear },
            "local-mlp" => MethodSpec::Local { family: mlp.clone() },
            "local-kernel" => MethodSpec::Local { family: local_kernel.clone() },
            "two-stage-pca" => MethodSpec::TwoStage {
                representation: RepresentationSpec::Pca { components: pca_components },
                family: ScorerFamily::Linear,
            },
            "two-stage-embed" => MethodSpec::TwoStage {
                representation: RepresentationSpec::LinearSoftmax {
                    dim: embed_dim,
                    opt: global_opt.clone(),
                },
                family: ScorerFamily::Linear,
            },
            "extended-kernel" => MethodSpec::Extended {
                specs: ext_specs.clone(),
                lambda: ext_lambda,
            },
            "knn" => MethodSpec::Knn { k: knn_k },
            other => return Err(Error::config(format!("unknown method {other:?}"))),
        };
        if methods.iter().any(|m: &Method| m.name == name) {
            return Err(Error::config(format!("method {name} listed twice")));
        }
        methods.push(Method { name, spec });
    }
    if methods.is_empty() {
        return Err(Error::config("no methods configured"));
    }
    let sweep: Vec<f64> = kv.list("sweep")?.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    if sweep.is_empty() || sweep.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::config("sweep must be a nonempty list of positive radii"));
    }

    let experiment = ExperimentConfig {
        data,
        test_n,
        methods,
        sweep,
        folds: kv.get("folds", 10)?,
        holdout: kv.get("holdout", DEFAULT_HOLDOUT)?,
        seed,
        output_dir: PathBuf::from(kv.take_str("output_dir").unwrap_or_else(|| "results".into())),
        loss,
        global_opt,
        local_opt,
        min_retrieved: kv.get("min_retrieved", 2)?,
        select_best: kv.get("select_best", false)?,
        gram_cache: kv.take_str("gram_cache").map(PathBuf::from),
    };
    if experiment.folds == 0 {
        return Err(Error::config("folds must be at least 1"));
    }
    if experiment.min_retrieved == 0 {
        return Err(Error::config("min_retrieved must be at least 1"));
    }

    let d = BoundSettings::default();
    let bounds = BoundSettings {
        delta: kv.get("delta", d.delta)?,
        eps_x: kv.get("eps_x", d.eps_x)?,
        eps_loc: kv.get("eps_loc", d.eps_loc)?,
        loss_lipschitz: kv.get("loss_lipschitz", d.loss_lipschitz)?,
        local_lipschitz: kv.take("local_lipschitz")?,
        global_lipschitz: kv.take("global_lipschitz")?,
        true_lipschitz: kv.take("true_lipschitz")?,
        sup_norm_local: kv.take("sup_norm_local")?,
        sup_norm_global: kv.take("sup_norm_global")?,
        rkhs_bound: kv.get("rkhs_bound", d.rkhs_bound)?,
        universal_constant: kv.get("universal_constant", d.universal_constant)?,
        theorem2_constants: (
            kv.get("c1", d.theorem2_constants.0)?,
            kv.get("c2", d.theorem2_constants.1)?,
            kv.get("c3", d.theorem2_constants.2)?,
        ),
        mc_draws: kv.get("mc_draws", d.mc_draws)?,
        anchors: kv.get("anchors", d.anchors)?,
        sensitivity_trials: kv.get("sensitivity_trials", d.sensitivity_trials)?,
    };
    if !(bounds.delta > 0.0 && bounds.delta < 1.0) {
        return Err(Error::config("delta must lie in (0, 1)"));
    }
    kv.finish()?;
    Ok((experiment, bounds))
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, BoundSettings)> {
    let text = std::fs::read_to_string(path)?;
    let (mut exp, bounds) = parse_config(&text)?;
    // Relative data paths resolve against the config file's directory.
    if let DataSource::File { path: data, .. } = &mut exp.data {
        if data.is_relative() {
            if let Some(dir) = path.parent() {
                *data = dir.join(&*data);
            }
        }
    }
    Ok((exp, bounds))
}
