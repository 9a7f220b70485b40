use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Model};
use crate::continuum::{closed_form_max_limit, mae, LimitNetwork, QuadratureKind, QuadratureSet};
use crate::error::{Error, Result};
use crate::graph::{build_graph_in, sample_latents, sample_signal, InputMapSpec, KernelSpec, LatentSampler};
use crate::message_passing::{forward_equivariant, AggregationFamily};
use crate::rng::{tags, SeedTree};

/// The limit estimate counts as exact below this standard error.
pub const STDERR_NOISE_FLOOR: f64 = 1e-12;

/// Largest standard error tolerated, relative to the smallest observed MAE.
pub const STDERR_TO_MAE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub agg: AggregationFamily,
    pub d: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub n: usize,
    pub trial: usize,
    /// Seed of the trial's latent draw.
    pub seed: u64,
    pub mae: f64,
    pub limit_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum LimitMethod {
    ClosedFormMax,
    Quadrature {
        kind: QuadratureKind,
        size: usize,
        replicates: usize,
    },
}

/// Everything needed to interpret a result table besides the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: ExperimentConfig,
    pub kernel: KernelSpec,
    pub input_map: InputMapSpec,
    pub widths: Vec<usize>,
    pub limit: LimitMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub meta: RunMetadata,
}

impl ConvergenceTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(&self.rows, path)
    }

    /// Writes the rows to `path` and the metadata next to it as
    /// `<stem>.meta.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_csv(path)?;
        std::fs::write(path.with_extension("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }
}

pub fn write_rows(rows: &[ConvergenceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ConvergenceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Discrete outputs of one trial at every grid size.
struct Trial {
    seed: u64,
    latents: Array2<f64>,
    outputs: Vec<Array2<f64>>,
}

fn run_trial(cfg: &ExperimentConfig, model: &Model, t: usize) -> Result<Trial> {
    let seed = SeedTree::new(cfg.seed).child2(tags::LATENTS, t as u64).seed();
    let n_max = *cfg.sizes.last().expect("validated grid");
    // smaller graphs are prefixes of the largest one
    let latents = sample_latents(LatentSampler::uniform(seed), &model.space, n_max)?;
    let full = build_graph_in(latents.clone(), &model.space, &model.kernel)?;
    let z0 = sample_signal(&model.f0, &latents)?;
    let outputs = cfg
        .sizes
        .iter()
        .map(|&n| {
            let g = full.prefix(n)?;
            forward_equivariant(&model.net, &g, &z0.slice(s![..n, ..]).to_owned())
        })
        .collect::<Result<_>>()?;
    Ok(Trial { seed, latents, outputs })
}

enum Limit {
    Closed(Vec<f64>),
    Quadrature(LimitNetwork),
}

impl Limit {
    /// Limit values and per-query standard errors at `latents`.
    fn at(&self, latents: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        match self {
            Limit::Closed(v) => {
                let q = latents.nrows();
                let values = Array2::from_shape_fn((q, v.len()), |(_, k)| v[k]);
                Ok((values, vec![0.0; q]))
            }
            Limit::Quadrature(ln) => {
                let est = ln.evaluate(latents.view())?;
                Ok((est.values, est.stderr))
            }
        }
    }
}

fn closed_form(cfg: &ExperimentConfig, model: &Model) -> Option<Vec<f64>> {
    if cfg.agg != AggregationFamily::Max {
        return None;
    }
    closed_form_max_limit(&model.net, &model.f0, &model.kernel, &model.space).ok()
}

fn quadrature_limit(cfg: &ExperimentConfig, model: &Model, size: usize) -> Result<LimitNetwork> {
    let kind = cfg.quadrature.kind;
    let tree = SeedTree::new(cfg.seed).child2(tags::QUADRATURE, size as u64);
    let quads = (0..cfg.quadrature.replicates)
        .map(|r| QuadratureSet::build(kind, &model.space, size, tree.child(r as u64).seed()))
        .collect::<Result<Vec<_>>>()?;
    LimitNetwork::prepare(&model.net, &model.f0, &model.kernel, quads)
}

fn trial_rows(cfg: &ExperimentConfig, model: &Model, t: usize, trial: &Trial, limit: &Limit) -> Result<Vec<ConvergenceRow>> {
    let (values, stderr) = limit.at(&trial.latents)?;
    cfg.sizes
        .iter()
        .zip(&trial.outputs)
        .map(|(&n, z)| {
            Ok(ConvergenceRow {
                agg: cfg.agg,
                d: cfg.dim,
                layers: model.net.depth(),
                n,
                trial: t,
                seed: trial.seed,
                mae: mae(z.view(), values.slice(s![..n, ..]))?,
                limit_stderr: stderr[..n].iter().copied().fold(0.0, f64::max),
            })
        })
        .collect()
}

/// Whether the limit estimate is fine enough for the rows collected so far.
/// Returns the offending (stderr, min MAE) pair otherwise.
pub fn limit_is_adequate(rows: &[ConvergenceRow]) -> std::result::Result<(), (f64, f64)> {
    let stderr = rows.iter().map(|r| r.limit_stderr).fold(0.0, f64::max);
    let min_mae = rows.iter().map(|r| r.mae).fold(f64::INFINITY, f64::min);
    if stderr <= STDERR_NOISE_FLOOR || stderr < STDERR_TO_MAE * min_mae {
        Ok(())
    } else {
        Err((stderr, min_mae))
    }
}

/// Equivariant MAE between the network on sampled graphs and its limit, for
/// every grid size and trial.
///
/// The network and input map are fixed by the master seed; each trial draws
/// one latent sample and uses its prefixes for the smaller sizes. The limit
/// is the closed-form max limit when it applies, and a replicated quadrature
/// otherwise. The quadrature size doubles until the standard error is below
/// a tenth of the smallest MAE, failing once it would exceed the cap.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceTable> {
    let model = cfg.build_model()?;
    let trials = (0..cfg.trials).map(|t| run_trial(cfg, &model, t)).collect::<Result<Vec<_>>>()?;

    let (rows, method) = match closed_form(cfg, &model) {
        Some(v) => {
            let limit = Limit::Closed(v);
            let mut rows = Vec::new();
            for (t, trial) in trials.iter().enumerate() {
                rows.extend(trial_rows(cfg, &model, t, trial, &limit)?);
            }
            (rows, LimitMethod::ClosedFormMax)
        }
        None => {
            let mut size = cfg.quadrature.size;
            'escalate: loop {
                let limit = Limit::Quadrature(quadrature_limit(cfg, &model, size)?);
                let mut rows = Vec::new();
                for (t, trial) in trials.iter().enumerate() {
                    rows.extend(trial_rows(cfg, &model, t, trial, &limit)?);
                    // adding rows can only make the rule harder to meet
                    if let Err((stderr, min_mae)) = limit_is_adequate(&rows) {
                        if 2 * size > cfg.quadrature.max_size {
                            return Err(Error::LimitResolution {
                                stderr,
                                min_mae,
                                quad_size: size,
                                cap: cfg.quadrature.max_size,
                            });
                        }
                        size *= 2;
                        continue 'escalate;
                    }
                }
                break (
                    rows,
                    LimitMethod::Quadrature {
                        kind: cfg.quadrature.kind,
                        size,
                        replicates: cfg.quadrature.replicates,
                    },
                );
            }
        }
    };
    let mut rows = rows;
    rows.sort_by(|a, b| (a.n, a.trial).cmp(&(b.n, b.trial)));
    Ok(ConvergenceTable {
        rows,
        meta: RunMetadata {
            config: cfg.clone(),
            kernel: model.kernel_spec.clone(),
            input_map: model.input_spec.clone(),
            widths: model.net.widths(),
            limit: method,
        },
    })
}
