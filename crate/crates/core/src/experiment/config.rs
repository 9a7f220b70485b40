use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::continuum::QuadratureKind;
use crate::error::{Error, Result};
use crate::graph::{InputMap, InputMapSpec, Kernel, KernelSpec, LatentSpace};
use crate::message_passing::{AggregationFamily, Network};
use crate::rng::{tags, SeedTree};

/// How the continuous limit is integrated when no closed form applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    #[serde(default = "default_quadrature_kind")]
    pub kind: QuadratureKind,
    /// Nodes per replicate.
    pub size: usize,
    /// Independent replicates, used for the standard error.
    pub replicates: usize,
    /// Largest per-replicate size the adequacy rule may escalate to.
    pub max_size: usize,
}

fn default_quadrature_kind() -> QuadratureKind {
    QuadratureKind::Sobol
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            kind: default_quadrature_kind(),
            size: 2048,
            replicates: 8,
            max_size: 65_536,
        }
    }
}

/// One convergence or bound-check run. Every field but `dim` and `agg` has a
/// default matching the reference experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// d_1, .., d_L; every hidden width equals `dim` when omitted.
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    pub agg: AggregationFamily,
    /// Defaults to W = 1 for max and a floored Gaussian otherwise.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    /// Defaults to x -> <a, x> with a drawn from Uniform[0, 1]^d.
    #[serde(default)]
    pub input_map: Option<InputMapSpec>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Overrides the derived expectation-gap scale of normalized families.
    #[serde(default)]
    pub expectation_gap_scale: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_layers() -> usize {
    4
}

fn default_sizes() -> Vec<usize> {
    (5..=12).map(|k| 1 << k).collect()
}

fn default_trials() -> usize {
    20
}

fn default_rho() -> f64 {
    0.1
}

pub const DEFAULT_KERNEL_FLOOR: f64 = 0.1;
pub const DEFAULT_KERNEL_BANDWIDTH: f64 = 1.0;

impl ExperimentConfig {
    /// Reference configuration for a family and latent dimension.
    pub fn reference(agg: AggregationFamily, dim: usize) -> Self {
        Self {
            dim,
            layers: default_layers(),
            widths: None,
            agg,
            kernel: None,
            input_map: None,
            sizes: default_sizes(),
            trials: default_trials(),
            quadrature: QuadratureSpec::default(),
            seed: 0,
            rho: default_rho(),
            expectation_gap_scale: None,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        if self.sizes.is_empty() || self.sizes[0] < 2 {
            return Err(Error::Config("size grid must be non-empty with n >= 2".into()));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("size grid {:?} is not strictly increasing", self.sizes)));
        }
        if self.trials == 0 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        if let Some(w) = &self.widths {
            if w.len() != self.layers {
                return Err(Error::Config(format!("{} widths for {} layers", w.len(), self.layers)));
            }
            if w.contains(&0) {
                return Err(Error::Config("widths must be positive".into()));
            }
        }
        let q = &self.quadrature;
        if q.size == 0 || q.replicates == 0 || q.max_size < q.size {
            return Err(Error::Config(format!(
                "quadrature needs size >= 1, replicates >= 1 and max_size >= size, got {q:?}"
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfidence(self.rho));
        }
        if let Some(InputMapSpec::Linear { coefficients }) = &self.input_map {
            if coefficients.len() != self.dim {
                return Err(Error::Config(format!(
                    "input map has {} coefficients for dimension {}",
                    coefficients.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        self.kernel.clone().unwrap_or(match self.agg {
            AggregationFamily::Max => KernelSpec::Constant { value: 1.0 },
            _ => KernelSpec::FlooredGaussian {
                alpha: DEFAULT_KERNEL_FLOOR,
                bandwidth: DEFAULT_KERNEL_BANDWIDTH,
            },
        })
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.widths.clone().unwrap_or_else(|| vec![self.dim; self.layers])
    }

    /// Draws the network and input map fixed by the master seed.
    pub fn build_model(&self) -> Result<Model> {
        self.validate()?;
        let tree = SeedTree::new(self.seed);
        let input_spec = match &self.input_map {
            Some(spec) => spec.clone(),
            None => {
                let mut rng = tree.child(tags::INPUT_MAP).rng(0);
                InputMapSpec::Linear {
                    coefficients: (0..self.dim).map(|_| rng.random::<f64>()).collect(),
                }
            }
        };
        let f0 = InputMap::from_spec(&input_spec);
        let mut rng = tree.child(tags::NETWORK).rng(0);
        let net = Network::random(self.agg, f0.out_dim(), &self.hidden_widths(), None, &mut rng)?;
        let kernel_spec = self.kernel_spec();
        Ok(Model {
            kernel: Kernel::from_spec(&kernel_spec, self.dim),
            kernel_spec,
            input_spec,
            f0,
            net,
            space: LatentSpace::unit_cube(self.dim)?,
        })
    }
}

/// Concrete objects of a configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub f0: InputMap,
    pub input_spec: InputMapSpec,
    pub kernel: Kernel,
    pub kernel_spec: KernelSpec,
    pub space: LatentSpace,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults() {
        let c = ExperimentConfig::reference(AggregationFamily::Mean, 3);
        assert_eq!(c.sizes, vec![32, 64, 128, 256, 512, 1024, 2048, 4096]);
        assert_eq!(c.layers, 4);
        assert_eq!(c.trials, 20);
        c.validate().unwrap();
        let m = c.build_model().unwrap();
        assert_eq!(m.net.widths(), vec![1, 3, 3, 3, 3]);
        assert!(matches!(m.kernel_spec, KernelSpec::FlooredGaussian { .. }));
        assert!(m.f0.is_monotone_nondecreasing());
        let m = ExperimentConfig::reference(AggregationFamily::Max, 2).build_model().unwrap();
        assert_eq!(m.kernel.constant_value(), Some(1.0));
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"dim": 2, "agg": "max"}"#).unwrap();
        assert_eq!(c, ExperimentConfig::reference(AggregationFamily::Max, 2));
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(ExperimentConfig::from_json(r#"{"dim": 2, "agg": "max", "bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs() {
        let base = ExperimentConfig::reference(AggregationFamily::Mean, 2);
        let mut c = base.clone();
        c.sizes = vec![64, 32];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base.clone();
        c.sizes = vec![32, 32];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.rho = 0.0;
        assert_eq!(c.validate(), Err(Error::InvalidConfidence(0.0)));
        let mut c = base.clone();
        c.widths = Some(vec![2, 2]);
        assert!(c.validate().is_err());
        let mut c = base;
        c.quadrature.max_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn model_is_fixed_by_seed() {
        let c = ExperimentConfig::reference(AggregationFamily::Attn, 2);
        let a = c.build_model().unwrap();
        let b = c.build_model().unwrap();
        assert_eq!(a.net.to_json().unwrap(), b.net.to_json().unwrap());
        assert_eq!(a.input_spec, b.input_spec);
        let mut c2 = c.clone();
        c2.seed = 1;
        assert_ne!(c2.build_model().unwrap().input_spec, a.input_spec);
    }
}
