//! Concentration bounds relating a network on a sampled graph to its
//! continuous counterpart, and the utilities they rely on.

mod concentration;
mod constants;
mod lemmas;
mod max;
mod multiset;
mod report;

pub use concentration::{
    mcdiarmid_bound, mcdiarmid_bound_uniform, theorem1_bounds, theorem1_leading_order, LayerRegularity,
    McDiarmidInputs, ReadoutGaps, RegularityConstants,
};
pub use constants::{
    estimate_bounded_difference, example_constants, layer_params, network_max_inputs, network_mcdiarmid_inputs,
    sample_one_layer_statistic, BoundedDifferenceSetup, ExampleConstants, ExampleParams, GapOrder,
};
pub use lemmas::{coordinatewise_max, lemma_checks, LemmaReport, PropertyResult, LIPSCHITZ_SLACK};
pub use max::{lipschitz_cascade, max_concentration_bound, theorem2_max_bounds, MaxBoundInputs, VolumeRetention};
pub use multiset::{
    bottleneck, bottleneck_brute_force, has_perfect_matching, multiset_distance, sup_distance,
    weighted_multiset_distance, ElementMetric,
};
pub use report::{BoundReport, Validity};
