use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gnn_limit::continuum::{forward_limit, QuadratureKind, QuadratureSet};
use gnn_limit::experiment::{
    fit_rate, read_rows, run_bound_check, run_convergence, run_suites, ExperimentConfig, SuiteSelector, SuiteSizes,
};
use gnn_limit::graph::{sample_latents, KernelSpec, LatentSampler};
use gnn_limit::message_passing::AggregationFamily;
use gnn_limit::rng::{tags, SeedTree};

#[derive(Parser)]
#[command(name = "gnnlimit", version, about = "Convergence of message-passing networks on random graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure the MAE between sampled-graph outputs and the continuous limit.
    Converge {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Fit log median MAE against log n from a `converge` CSV.
    Fit {
        /// CSV written by `converge`.
        input: PathBuf,
        /// Also print the per-size medians.
        #[arg(long)]
        verbose: bool,
    },
    /// Compare observed MAE with the concentration bounds.
    Bounds {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Run property suites: equivariance, lemmas, multiset, bounded-diff or all.
    Suites {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scales every suite's instance count (1.0 = full size).
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the continuous limit at random queries and report its standard error.
    LimitCheck {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Number of uniform query points.
        #[arg(long, default_value_t = 256)]
        queries: usize,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    agg: Option<AggregationFamily>,
    /// Comma-separated list, or `a..b` for powers of two from a to b.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Quadrature nodes per replicate.
    #[arg(long)]
    quad_size: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Largest quadrature size the adequacy rule may escalate to.
    #[arg(long)]
    quad_cap: Option<usize>,
    /// monte-carlo, lattice, stratified or sobol.
    #[arg(long)]
    quad_kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho: Option<f64>,
    /// constant:V, floored-gaussian:ALPHA,BANDWIDTH or exponential:SCALE.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a == 0 || b < a {
            bail!("size range {s:?} must satisfy 0 < a <= b");
        }
        let mut out = vec![a];
        while out.last().unwrap() * 2 <= b {
            out.push(out.last().unwrap() * 2);
        }
        return Ok(out);
    }
    s.split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad size {v:?}")))
        .collect()
}

fn parse_kernel(s: &str) -> Result<KernelSpec> {
    let (name, params) = s.split_once(':').unwrap_or((s, ""));
    let nums = params
        .split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad kernel parameter {p:?}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(match (name, nums.as_slice()) {
        ("constant", [v]) => KernelSpec::Constant { value: *v },
        ("constant", []) => KernelSpec::Constant { value: 1.0 },
        ("floored-gaussian", [alpha, bandwidth]) => KernelSpec::FlooredGaussian {
            alpha: *alpha,
            bandwidth: *bandwidth,
        },
        ("exponential", [scale]) => KernelSpec::Exponential { scale: *scale },
        _ => bail!("unrecognized kernel {s:?}"),
    })
}

fn parse_quad_kind(s: &str) -> Result<QuadratureKind> {
    Ok(match s {
        "monte-carlo" => QuadratureKind::MonteCarlo,
        "lattice" => QuadratureKind::Lattice,
        "stratified" => QuadratureKind::Stratified,
        "sobol" => QuadratureKind::Sobol,
        _ => bail!("unknown quadrature kind {s:?}"),
    })
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            None => {
                let (Some(agg), Some(dim)) = (self.agg, self.dim) else {
                    bail!("either --config or both --agg and --dim are required");
                };
                ExperimentConfig::reference(agg, dim)
            }
        };
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.agg {
            cfg.agg = v;
        }
        if let Some(v) = &self.sizes {
            cfg.sizes = parse_sizes(v)?;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.quad_size {
            cfg.quadrature.size = v;
            cfg.quadrature.max_size = cfg.quadrature.max_size.max(v);
        }
        if let Some(v) = self.replicates {
            cfg.quadrature.replicates = v;
        }
        if let Some(v) = self.quad_cap {
            cfg.quadrature.max_size = v;
        }
        if let Some(v) = &self.quad_kind {
            cfg.quadrature.kind = parse_quad_kind(v)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = &self.kernel {
            cfg.kernel = Some(parse_kernel(v)?);
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

fn converge(exp: &ExperimentArgs) -> Result<ExitCode> {
    let cfg = exp.config()?;
    let table = run_convergence(&cfg)?;
    match &cfg.out {
        Some(path) => {
            table.write(path)?;
            eprintln!("wrote {} rows to {}", table.rows.len(), path.display());
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for row in &table.rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    if let Ok(fit) = fit_rate(&table.rows) {
        eprintln!(
            "slope {:.4} (theory {:.4}), r2 {:.4}",
            fit.slope,
            fit.theory_slope.unwrap_or(f64::NAN),
            fit.r2
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn fit(input: &Path, verbose: bool) -> Result<ExitCode> {
    let rows = read_rows(input).with_context(|| format!("reading {}", input.display()))?;
    let fit = fit_rate(&rows)?;
    let mut value = serde_json::json!({
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r2": fit.r2,
        "theory_slope": fit.theory_slope,
    });
    if verbose {
        value["sizes"] = serde_json::json!(fit.sizes);
        value["median_mae"] = serde_json::json!(fit.median_mae);
    }
    emit_json(&value, None)?;
    Ok(ExitCode::SUCCESS)
}

fn bounds(exp: &ExperimentArgs) -> Result<ExitCode> {
    let cfg = exp.config()?;
    let report = run_bound_check(&cfg, cfg.rho)?;
    emit_json(&serde_json::to_value(&report)?, cfg.out.as_deref())?;
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn suites(suite: &str, seed: u64, scale: f64, out: Option<&Path>) -> Result<ExitCode> {
    let selector: SuiteSelector = suite.parse()?;
    if !(scale > 0.0) {
        bail!("--scale must be positive");
    }
    let full = SuiteSizes::default();
    let scaled = |k: usize| ((k as f64 * scale).round() as usize).max(1);
    let sizes = SuiteSizes {
        equivariance: scaled(full.equivariance),
        lemmas: scaled(full.lemmas),
        multiset: scaled(full.multiset),
        bounded_diff_trials: scaled(full.bounded_diff_trials),
    };
    let report = run_suites(selector, sizes, seed)?;
    emit_json(&serde_json::to_value(&report)?, out)?;
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn limit_check(exp: &ExperimentArgs, queries: usize) -> Result<ExitCode> {
    let cfg = exp.config()?;
    let model = cfg.build_model()?;
    let q_seed = SeedTree::new(cfg.seed).child(0x9e37).seed();
    let x = sample_latents(LatentSampler::uniform(q_seed), &model.space, queries)?;
    let kind = cfg.quadrature.kind;
    let tree = SeedTree::new(cfg.seed).child2(tags::QUADRATURE, cfg.quadrature.size as u64);
    let quads = (0..cfg.quadrature.replicates)
        .map(|r| QuadratureSet::build(kind, &model.space, cfg.quadrature.size, tree.child(r as u64).seed()))
        .collect::<gnn_limit::Result<Vec<_>>>()?;
    let est = forward_limit(&model.net, &model.f0, &model.kernel, quads, x.view())?;
    if let Some(path) = &cfg.out {
        est.write_csv(x.view(), path)?;
    }
    let summary = serde_json::json!({
        "agg": cfg.agg,
        "d": cfg.dim,
        "queries": queries,
        "quadrature": { "kind": kind, "size": cfg.quadrature.size, "replicates": cfg.quadrature.replicates },
        "max_stderr": est.max_stderr(),
        "mean_stderr": est.stderr.iter().sum::<f64>() / est.stderr.len().max(1) as f64,
    });
    emit_json(&summary, None)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Converge { exp } => converge(exp),
        Command::Fit { input, verbose } => fit(input, *verbose),
        Command::Bounds { exp } => bounds(exp),
        Command::Suites { suite, seed, scale, out } => suites(suite, *seed, *scale, out.as_deref()),
        Command::LimitCheck { exp, queries } => limit_check(exp, *queries),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
