use serde::{Deserialize, Serialize};

/// Whether a confidence level lies inside a bound's validity window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub ok: bool,
    pub min_rho: f64,
}

/// Output of a theorem-level bound calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: serde_json::Value,
    /// Contribution of each layer to the equivariant bound.
    pub per_layer_terms: Vec<f64>,
    pub total_equivariant: f64,
    /// Present when the readout constants were supplied.
    pub total_invariant: Option<f64>,
    pub validity: Validity,
}

impl BoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}
