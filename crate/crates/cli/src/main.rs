use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use locem_core::harness::{emit_reports, load_config, load_data, run_bounds, run_experiment};
use locem_core::local_erm::{local_predict, LocalErmConfig, RetrievalMode};
use locem_core::retrieval::RetrievalIndex;
use locem_core::synthetic::{sample_dataset, sample_mixture_spec, MixtureSpec};
use locem_core::{Activation, ScorerFamily};

#[derive(Parser)]
#[command(name = "locem", version, about = "Retrieval-based classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Gaussian-mixture dataset with per-cluster linear labels.
    Gen {
        #[arg(long, default_value_t = MixtureSpec::DEFAULT_CLUSTERS)]
        clusters: usize,
        #[arg(long, default_value_t = MixtureSpec::DEFAULT_DIM)]
        dim: usize,
        #[arg(short, long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = MixtureSpec::DEFAULT_RANGE.0, allow_negative_numbers = true)]
        mean_low: f64,
        #[arg(long, default_value_t = MixtureSpec::DEFAULT_RANGE.1, allow_negative_numbers = true)]
        mean_high: f64,
        #[arg(long, default_value_t = 0)]
        spec_seed: u64,
        #[arg(long, default_value_t = 1)]
        data_seed: u64,
        /// Output file; `.bin` selects the binary format, anything else CSV.
        /// A `<out>.spec` sidecar records the generator settings.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cross-validated sweep; writes results.csv, timings.csv, summary.txt
    /// and curves.svg.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Also pick the sweep value per fold on an inner validation split.
        #[arg(long)]
        select_best: bool,
        /// Overrides `output_dir` from the config.
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
    },
    /// Bound reports over the configured radius sweep.
    Bounds {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
    },
    /// Predict one point with local ERM and dump its retrieved set.
    Query {
        #[arg(short, long)]
        config: PathBuf,
        /// Comma-separated coordinates of the query.
        #[arg(long, conflicts_with = "row", allow_hyphen_values = true)]
        point: Option<String>,
        /// Use a data row as the query (excluded from its own retrieval).
        #[arg(long)]
        row: Option<usize>,
        #[arg(short, long)]
        radius: Option<f64>,
        /// Retrieve the k nearest rows instead of a ball.
        #[arg(short, long, conflicts_with = "radius")]
        k: Option<usize>,
        #[arg(long, default_value = "linear")]
        family: String,
        /// Write the retrieved set as CSV here instead of stdout.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

fn init_pool() -> Result<()> {
    let Ok(raw) = std::env::var("LOCEM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("LOCEM_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        bail!("LOCEM_THREADS must be a positive integer, got 0");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("building the thread pool")?;
    Ok(())
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad coordinate {v:?}")))
        .collect()
}

fn gen(
    clusters: usize,
    dim: usize,
    n: usize,
    range: (f64, f64),
    seeds: (u64, u64),
    out: &Path,
) -> Result<()> {
    let spec = sample_mixture_spec(clusters, dim, range, seeds.0)?;
    let (data, _) = sample_dataset(&spec, n, seeds.1)?;
    if out.extension().is_some_and(|e| e == "bin") {
        data.save(out)?;
    } else {
        data.write_csv(fs::File::create(out)?)?;
    }
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".spec");
    spec.write_sidecar(
        fs::File::create(&sidecar)?,
        &[("n", n.to_string()), ("data_seed", seeds.1.to_string())],
    )?;
    println!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn query(
    config: &Path,
    point: Option<String>,
    row: Option<usize>,
    radius: Option<f64>,
    k: Option<usize>,
    family: &str,
    dump: Option<PathBuf>,
) -> Result<()> {
    let (cfg, _) = load_config(config)?;
    let data = load_data(&cfg)?.data;
    let (x, exclude) = match (point, row) {
        (Some(p), None) => (parse_point(&p)?, None),
        (None, Some(i)) if i < data.len() => (data.row(i).to_vec(), Some(i)),
        (None, Some(i)) => bail!("row {i} out of range for {} rows", data.len()),
        _ => bail!("give exactly one of --point or --row"),
    };
    if x.len() != data.dim() {
        bail!("query has {} coordinates, data has {}", x.len(), data.dim());
    }
    let mode = match (radius, k) {
        (_, Some(k)) => RetrievalMode::TopK(k),
        (Some(r), None) => RetrievalMode::Radius(r),
        (None, None) => RetrievalMode::Radius(cfg.sweep[cfg.sweep.len() / 2]),
    };
    let family = match family {
        "linear" => ScorerFamily::Linear,
        "mlp" => ScorerFamily::Mlp {
            hidden: 8,
            activation: Activation::Tanh,
        },
        other => bail!("unknown family {other:?} (linear or mlp)"),
    };
    let mut local = LocalErmConfig::new(mode, family);
    local.loss = cfg.loss;
    local.opt = cfg.local_opt.clone();
    local.min_retrieved = cfg.min_retrieved;
    let index = RetrievalIndex::euclidean(&data)?;
    let pred = local_predict(&x, &index, &data, &local, exclude)?;
    println!("predicted class: {}", pred.predicted_class);
    println!("scores: {:?}", pred.scores);
    println!("retrieved: {}", pred.retrieved_count);
    println!("fallback: {}", pred.used_fallback);
    if let Some(i) = exclude {
        println!("true label: {}", data.label(i));
    }
    let set = match mode {
        RetrievalMode::Radius(r) => index.ball_query(&x, r, exclude)?,
        RetrievalMode::TopK(k) => index.knn_query(&x, k, exclude)?,
    };
    let mut out: Box<dyn Write> = match &dump {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let coords: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    writeln!(out, "row,distance,label,{}", coords.join(","))?;
    for (&i, d) in set.indices.iter().zip(&set.distances) {
        let xs: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{i},{d:?},{},{}", data.label(i), xs.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_pool()?;
    match cli.command {
        Command::Gen {
            clusters,
            dim,
            n,
            mean_low,
            mean_high,
            spec_seed,
            data_seed,
            out,
        } => gen(clusters, dim, n, (mean_low, mean_high), (spec_seed, data_seed), &out),
        Command::Run {
            config,
            select_best,
            output_dir,
        } => {
            let (mut cfg, _) = load_config(&config)?;
            cfg.select_best |= select_best;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let table = run_experiment(&cfg)?;
            let files = emit_reports(&table, None, &dir)?;
            print!("{}", table.summary());
            println!("results written to {}", files.results.display());
            Ok(())
        }
        Command::Bounds { config, output_dir } => {
            let (cfg, settings) = load_config(&config)?;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let run = run_bounds(&cfg, &settings)?;
            let files = run.write(&dir)?;
            print!("{}", run.text());
            println!("bound reports written to {}", files[0].display());
            Ok(())
        }
        Command::Query {
            config,
            point,
            row,
            radius,
            k,
            family,
            dump,
        } => query(&config, point, row, radius, k, &family, dump),
    }
}
