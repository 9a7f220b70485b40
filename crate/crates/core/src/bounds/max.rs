//! Bounds for max aggregation on volume-retaining latent spaces.

use serde::{Deserialize, Serialize};

use super::report::{BoundReport, Validity};
use crate::error::{Error, Result};
use crate::graph::LatentSpace;

/// (r0, kappa) such that P(B(x, r)) >= kappa Leb(B(x, r)) for all x and r <= r0,
/// with sup-norm balls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeRetention {
    pub r0: f64,
    pub kappa: f64,
    pub dim: usize,
}

impl VolumeRetention {
    pub fn new(r0: f64, kappa: f64, dim: usize) -> Result<Self> {
        if !(r0 > 0.0 && kappa > 0.0) || dim == 0 {
            return Err(Error::Precondition(format!(
                "volume retention needs r0 > 0, kappa > 0, d >= 1; got ({r0}, {kappa}, {dim})"
            )));
        }
        Ok(Self { r0, kappa, dim })
    }

    /// (1, 2^-d) for the unit hypercube.
    pub fn hypercube(dim: usize) -> Self {
        Self {
            r0: 1.0,
            kappa: 0.5f64.powi(dim as i32),
            dim,
        }
    }

    /// Uniform distribution on a box with sides s_k: a ball of radius
    /// r <= min s_k keeps at least one orthant inside the box, so
    /// kappa = 2^-d / prod s_k.
    pub fn uniform_box(space: &LatentSpace) -> Self {
        let sides: Vec<f64> = space.lower().iter().zip(space.upper()).map(|(lo, hi)| hi - lo).collect();
        let d = sides.len();
        Self {
            r0: sides.iter().copied().fold(f64::INFINITY, f64::min),
            kappa: 0.5f64.powi(d as i32) / sides.iter().product::<f64>(),
            dim: d,
        }
    }

    /// exp(-n kappa r0^d 2^d).
    fn window_base(&self, n: usize) -> f64 {
        (-(n as f64) * self.kappa * (2.0 * self.r0).powi(self.dim as i32)).exp()
    }
}

fn check_rho(rho: f64, min_rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfidence(rho));
    }
    if rho < min_rho {
        return Err(Error::ValidityWindow { rho, min_rho });
    }
    Ok(())
}

/// Deviation between the sample maximum of a lambda_g-Lipschitz map with d'
/// outputs and its supremum, holding with probability 1 - rho:
/// (lambda_g / 2) (ln(d' / rho) / (n kappa))^(1/d).
pub fn max_concentration_bound(lambda_g: f64, out_dim: usize, vr: &VolumeRetention, n: usize, rho: f64) -> Result<f64> {
    check_rho(rho, vr.window_base(n))?;
    Ok(max_term(lambda_g, out_dim as f64 / rho, vr, n))
}

fn max_term(lambda: f64, ratio: f64, vr: &VolumeRetention, n: usize) -> f64 {
    0.5 * lambda * (ratio.ln() / (n as f64 * vr.kappa)).powf(1.0 / vr.dim as f64)
}

/// Lipschitz constants of the maps y -> W(x, y) psi_l(f_(l-1)(y)):
/// lambda_l = lambda_psi_l lambda_(l-1) + |psi_l o f_(l-1)|_inf lambda_W,
/// starting from lambda_0 = Lipschitz constant of the input map.
pub fn lipschitz_cascade(lambda_f0: f64, lambda_psi: &[f64], sup_psi_f: &[f64], lambda_w: f64) -> Result<Vec<f64>> {
    if lambda_psi.len() != sup_psi_f.len() {
        return Err(Error::Shape(format!(
            "{} message constants but {} sup bounds",
            lambda_psi.len(),
            sup_psi_f.len()
        )));
    }
    let mut out = vec![lambda_f0];
    for (lp, s) in lambda_psi.iter().zip(sup_psi_f) {
        let prev = *out.last().expect("non-empty");
        out.push(lp * prev + s * lambda_w);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxBoundInputs {
    pub n: usize,
    /// d_1, .., d_L.
    pub widths: Vec<usize>,
    /// lambda_f(0), .., lambda_f(L) from [`lipschitz_cascade`].
    pub cascade: Vec<f64>,
    /// lambda_psi(1), .., lambda_psi(L).
    pub lambda_psi: Vec<f64>,
    pub volume: VolumeRetention,
}

impl MaxBoundInputs {
    fn validate(&self) -> Result<()> {
        let l = self.widths.len();
        if self.lambda_psi.len() != l || self.cascade.len() != l + 1 {
            return Err(Error::Shape(format!(
                "{} widths, {} message constants, cascade of length {}",
                l,
                self.lambda_psi.len(),
                self.cascade.len()
            )));
        }
        if self.n < 2 {
            return Err(Error::Precondition("at least two nodes are required".into()));
        }
        Ok(())
    }

    /// Smallest admissible rho for the equivariant bound: 2^(L-1) n exp(-n kappa r0^d 2^d).
    pub fn min_rho_equivariant(&self) -> f64 {
        let l = self.widths.len().max(1);
        2f64.powi(l as i32 - 1) * self.n as f64 * self.volume.window_base(self.n)
    }

    /// The invariant bound splits rho in two, doubling the window.
    pub fn min_rho_invariant(&self) -> f64 {
        2.0 * self.min_rho_equivariant()
    }
}

fn max_equivariant_terms(inputs: &MaxBoundInputs, rho: f64) -> Vec<f64> {
    let big_l = inputs.widths.len();
    (1..=big_l)
        .map(|l| {
            let amp: f64 = inputs.lambda_psi[l..].iter().product();
            let ratio = 2f64.powi((big_l + 1 - l) as i32) * inputs.n as f64 * inputs.widths[l - 1] as f64 / rho;
            amp * max_term(inputs.cascade[l], ratio, &inputs.volume, inputs.n)
        })
        .collect()
}

/// Equivariant bound sum_l B^(l,L) (lambda_f(l)/2) (ln(2^(L+1-l) n d_l / rho) / (n kappa))^(1/d)
/// with B^(l,L) the product of lambda_psi over the layers after l, and the
/// max-readout invariant bound H(rho/2) + (lambda_f(L)/2) (ln(2 d_L / rho) / (n kappa))^(1/d).
///
/// Returns a validity-window error when rho is below the admissible minimum
/// of the equivariant bound. The invariant total is omitted when only the
/// equivariant window is met.
pub fn theorem2_max_bounds(inputs: &MaxBoundInputs, rho: f64) -> Result<BoundReport> {
    inputs.validate()?;
    let min_rho = inputs.min_rho_equivariant();
    check_rho(rho, min_rho)?;
    let terms = max_equivariant_terms(inputs, rho);
    let total_equivariant = terms.iter().sum();
    let total_invariant = (rho >= inputs.min_rho_invariant()).then(|| {
        let half: f64 = max_equivariant_terms(inputs, rho / 2.0).iter().sum();
        let d_last = *inputs.widths.last().unwrap_or(&1) as f64;
        let last = *inputs.cascade.last().expect("cascade is non-empty");
        half + max_term(last, 2.0 * d_last / rho, &inputs.volume, inputs.n)
    });
    Ok(BoundReport {
        inputs: serde_json::json!({ "theorem": "max", "inputs": inputs, "rho": rho }),
        per_layer_terms: terms,
        total_equivariant,
        total_invariant,
        validity: Validity { ok: true, min_rho },
    })
}
