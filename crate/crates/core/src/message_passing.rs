//! Discrete message-passing networks.
//!
//! A layer updates node i from its own state and the multiset
//! {(z_j, w_ij)} of neighbor states and edge weights. Messages psi(z_j) are
//! computed once per layer and shared by every receiving node.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SampledGraph;
use crate::numeric::PairwiseAccumulator;

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

type MessageFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Message map psi applied to each neighbor state.
#[derive(Clone)]
pub enum MessageMap {
    /// z -> sigmoid(W z + b), elementwise.
    AffineSigmoid { weights: Array2<f64>, bias: Vec<f64> },
    Identity { dim: usize },
    /// Arbitrary map; no Lipschitz constant is derived for it.
    Custom {
        eval: MessageFn,
        in_dim: usize,
        out_dim: usize,
        sup_bound: Option<f64>,
    },
}

impl fmt::Debug for MessageMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AffineSigmoid { weights, bias } => f
                .debug_struct("AffineSigmoid")
                .field("weights", weights)
                .field("bias", bias)
                .finish(),
            Self::Identity { dim } => f.debug_struct("Identity").field("dim", dim).finish(),
            Self::Custom { in_dim, out_dim, .. } => f
                .debug_struct("Custom")
                .field("in_dim", in_dim)
                .field("out_dim", out_dim)
                .finish(),
        }
    }
}

impl MessageMap {
    pub fn affine_sigmoid(weights: Array2<f64>, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::Shape(format!(
                "bias of length {} for a {}x{} weight matrix",
                bias.len(),
                weights.nrows(),
                weights.ncols()
            )));
        }
        Ok(Self::AffineSigmoid {
            weights: weights.as_standard_layout().to_owned(),
            bias,
        })
    }

    /// Weights i.i.d. Uniform[0, 1], zero bias.
    pub fn random_affine_sigmoid<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random::<f64>());
        Self::AffineSigmoid {
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::Identity { dim }
    }

    pub fn custom<F>(eval: F, in_dim: usize, out_dim: usize, sup_bound: Option<f64>) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::Custom {
            eval: Arc::new(eval),
            in_dim,
            out_dim,
            sup_bound,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Self::AffineSigmoid { weights, .. } => weights.ncols(),
            Self::Identity { dim } => *dim,
            Self::Custom { in_dim, .. } => *in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::AffineSigmoid { weights, .. } => weights.nrows(),
            Self::Identity { dim } => *dim,
            Self::Custom { out_dim, .. } => *out_dim,
        }
    }

    /// Writes psi(z) into `out`.
    #[inline]
    pub fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Self::AffineSigmoid { weights, bias } => {
                for (k, o) in out.iter_mut().enumerate() {
                    let row = weights.row(k);
                    let row = row.as_slice().expect("standard layout");
                    let t: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                    *o = sigmoid(t + bias[k]);
                }
            }
            Self::Identity { .. } => out.copy_from_slice(z),
            Self::Custom { eval, .. } => out.copy_from_slice(&eval(z)),
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim()];
        self.apply_into(z, &mut out);
        out
    }

    /// Applies psi to every row.
    pub fn apply_rows(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((z.nrows(), self.out_dim()));
        for (src, mut dst) in z.rows().into_iter().zip(out.rows_mut()) {
            let src = src.to_vec();
            self.apply_into(&src, dst.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Upper bound on the Lipschitz constant of psi in the sup norm.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        match self {
            Self::AffineSigmoid { weights, .. } => Ok(0.25
                * weights
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max)),
            Self::Identity { .. } => Ok(1.0),
            Self::Custom { .. } => Err(Error::Unsupported(
                "Lipschitz constant of a custom message map must be supplied by the caller".into(),
            )),
        }
    }

    /// Bound on |psi(z)|_inf over inputs with |z|_inf <= `input_sup`.
    pub fn sup_bound(&self, input_sup: f64) -> Result<f64> {
        match self {
            Self::AffineSigmoid { .. } => Ok(1.0),
            Self::Identity { .. } => Ok(input_sup),
            Self::Custom { sup_bound, .. } => sup_bound.ok_or_else(|| {
                Error::Unsupported("custom message map declares no sup bound".into())
            }),
        }
    }

    /// True when every output coordinate is nondecreasing in every input.
    pub fn is_monotone_nondecreasing(&self) -> bool {
        match self {
            Self::AffineSigmoid { weights, .. } => weights.iter().all(|w| *w >= 0.0),
            Self::Identity { .. } => true,
            Self::Custom { .. } => false,
        }
    }
}

type CoefficientFn = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;

/// Attention coefficient c(z_i, z_j, w).
#[derive(Clone)]
pub enum CoefficientMap {
    /// c = epsilon + sigmoid(<a, z_i> + <b, z_j> + gamma w).
    Sigmoid {
        a: Vec<f64>,
        b: Vec<f64>,
        gamma: f64,
        epsilon: f64,
    },
    /// Caller-declared bounds alpha < c < beta and Lipschitz constant.
    Custom {
        eval: CoefficientFn,
        lower: f64,
        upper: f64,
        lipschitz: f64,
    },
}

impl fmt::Debug for CoefficientMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sigmoid { a, b, gamma, epsilon } => f
                .debug_struct("Sigmoid")
                .field("a", a)
                .field("b", b)
                .field("gamma", gamma)
                .field("epsilon", epsilon)
                .finish(),
            Self::Custom { lower, upper, lipschitz, .. } => f
                .debug_struct("Custom")
                .field("lower", lower)
                .field("upper", upper)
                .field("lipschitz", lipschitz)
                .finish(),
        }
    }
}

/// Floor added to the built-in coefficient so it stays bounded away from 0.
pub const DEFAULT_COEFFICIENT_FLOOR: f64 = 0.1;

impl CoefficientMap {
    pub fn sigmoid(a: Vec<f64>, b: Vec<f64>, gamma: f64) -> Self {
        Self::Sigmoid {
            a,
            b,
            gamma,
            epsilon: DEFAULT_COEFFICIENT_FLOOR,
        }
    }

    /// Built-in coefficient with a and b drawn from Uniform[-1, 1] and
    /// gamma from Uniform[0, 1].
    pub fn random_sigmoid<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let a = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let b = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        Self::sigmoid(a, b, rng.random())
    }

    pub fn custom<F>(eval: F, lower: f64, upper: f64, lipschitz: f64) -> Self
    where
        F: Fn(&[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self::Custom {
            eval: Arc::new(eval),
            lower,
            upper,
            lipschitz,
        }
    }

    #[inline]
    pub fn eval(&self, zi: &[f64], zj: &[f64], w: f64) -> f64 {
        match self {
            Self::Sigmoid { a, b, gamma, epsilon } => {
                epsilon + sigmoid(dot(a, zi) + dot(b, zj) + gamma * w)
            }
            Self::Custom { eval, .. } => eval(zi, zj, w),
        }
    }

    /// (alpha_c, beta_c) with alpha_c <= c <= beta_c.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::Sigmoid { epsilon, .. } => (*epsilon, 1.0 + epsilon),
            Self::Custom { lower, upper, .. } => (*lower, *upper),
        }
    }

    /// lambda_c with |c(u) - c(u')| <= lambda_c (|dz_i|_inf + |dz_j|_inf + |dw|).
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Sigmoid { a, b, gamma, .. } => {
                let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
                0.25 * l1(a).max(l1(b)).max(gamma.abs())
            }
            Self::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if let Self::Sigmoid { a, b, .. } = self {
            if a.len() != dim || b.len() != dim {
                return Err(Error::Shape(format!(
                    "coefficient vectors of length {}/{} for states of width {dim}",
                    a.len(),
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One neighbor as seen by a custom aggregation.
#[derive(Debug, Clone, Copy)]
pub struct NeighborMessage<'a> {
    pub state: &'a [f64],
    pub message: &'a [f64],
    pub weight: f64,
}

type CustomAggregationFn = Arc<dyn Fn(&[f64], &[NeighborMessage<'_>]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum AggregationKind {
    /// (1/|N|) sum_j w_ij psi(z_j).
    MeanConv,
    /// sum_j w_ij psi(z_j) / sum_j w_ij.
    DegreeNormalized,
    /// sum_j c_ij psi(z_j) / sum_j c_ij with c_ij = c(z_i, z_j, w_ij).
    Attention(CoefficientMap),
    /// Coordinatewise max_j w_ij psi(z_j).
    MaxConv,
    /// Receives the node state and its neighbor list; must not depend on the
    /// order of the list.
    Custom(CustomAggregationFn),
}

impl fmt::Debug for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MeanConv => write!(f, "MeanConv"),
            Self::DegreeNormalized => write!(f, "DegreeNormalized"),
            Self::Attention(c) => f.debug_tuple("Attention").field(c).finish(),
            Self::MaxConv => write!(f, "MaxConv"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Short names used in configs, CSV output and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationFamily {
    Mean,
    Degnorm,
    Attn,
    Max,
}

impl AggregationFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Degnorm => "degnorm",
            Self::Attn => "attn",
            Self::Max => "max",
        }
    }

    pub const ALL: [Self; 4] = [Self::Mean, Self::Degnorm, Self::Attn, Self::Max];
}

impl std::str::FromStr for AggregationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "degnorm" => Ok(Self::Degnorm),
            "attn" => Ok(Self::Attn),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl fmt::Display for AggregationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An aggregation F together with its message map psi.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub kind: AggregationKind,
    pub psi: MessageMap,
}

impl Aggregation {
    pub fn new(kind: AggregationKind, psi: MessageMap) -> Self {
        Self { kind, psi }
    }

    pub fn mean(psi: MessageMap) -> Self {
        Self::new(AggregationKind::MeanConv, psi)
    }

    pub fn degree_normalized(psi: MessageMap) -> Self {
        Self::new(AggregationKind::DegreeNormalized, psi)
    }

    pub fn attention(coeff: CoefficientMap, psi: MessageMap) -> Self {
        Self::new(AggregationKind::Attention(coeff), psi)
    }

    pub fn max(psi: MessageMap) -> Self {
        Self::new(AggregationKind::MaxConv, psi)
    }

    pub fn family(&self) -> Option<AggregationFamily> {
        match self.kind {
            AggregationKind::MeanConv => Some(AggregationFamily::Mean),
            AggregationKind::DegreeNormalized => Some(AggregationFamily::Degnorm),
            AggregationKind::Attention(_) => Some(AggregationFamily::Attn),
            AggregationKind::MaxConv => Some(AggregationFamily::Max),
            AggregationKind::Custom(_) => None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.psi.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.psi.out_dim()
    }
}

/// Reusable per-thread buffers for [`combine`].
pub(crate) struct Scratch {
    acc: PairwiseAccumulator,
    den: PairwiseAccumulator,
    out: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            acc: PairwiseAccumulator::new(dim),
            den: PairwiseAccumulator::new(1),
            out: vec![0.0; dim],
        }
    }
}

/// Precomputed per-source quantities for one layer.
pub(crate) struct LayerSources<'a> {
    pub states: ArrayView2<'a, f64>,
    pub messages: Array2<f64>,
    // <b, z_j> for the built-in attention coefficient
    key: Vec<f64>,
}

impl<'a> LayerSources<'a> {
    pub(crate) fn new(agg: &Aggregation, states: ArrayView2<'a, f64>) -> Result<Self> {
        if states.ncols() != agg.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects width {}, got {}",
                agg.in_dim(),
                states.ncols()
            )));
        }
        if !states.is_standard_layout() {
            return Err(Error::Shape("states must be in row-major layout".into()));
        }
        let messages = agg.psi.apply_rows(states);
        let key = match &agg.kind {
            AggregationKind::Attention(c) => {
                c.check_dim(agg.in_dim())?;
                match c {
                    CoefficientMap::Sigmoid { b, .. } => states
                        .rows()
                        .into_iter()
                        .map(|r| r.iter().zip(b).map(|(x, y)| x * y).sum())
                        .collect(),
                    CoefficientMap::Custom { .. } => Vec::new(),
                }
            }
            _ => Vec::new(),
        };
        Ok(Self { states, messages, key })
    }

    pub(crate) fn len(&self) -> usize {
        self.states.nrows()
    }
}

/// Applies the aggregation at one receiver.
///
/// `weights[j]` is the edge weight to source j; source `skip` (if any) is
/// left out and `count` is the neighborhood size used by MeanConv.
pub(crate) fn combine(
    agg: &Aggregation,
    self_state: &[f64],
    src: &LayerSources<'_>,
    weights: &[f64],
    skip: Option<usize>,
    scratch: &mut Scratch,
) -> Result<Vec<f64>> {
    let m = src.len();
    let count = m - usize::from(skip.is_some_and(|s| s < m));
    if count == 0 {
        return Err(Error::EmptyNeighborhood);
    }
    let row = |j: usize| src.messages.row(j).to_slice().expect("standard layout");
    let live = |j: &usize| Some(*j) != skip;
    match &agg.kind {
        AggregationKind::MeanConv => {
            scratch.acc.reset();
            for j in (0..m).filter(live) {
                scratch.acc.add_scaled(weights[j], row(j));
            }
            scratch.acc.finish_into(&mut scratch.out);
            let inv = count as f64;
            Ok(scratch.out.iter().map(|v| v / inv).collect())
        }
        AggregationKind::DegreeNormalized => {
            scratch.acc.reset();
            scratch.den.reset();
            for j in (0..m).filter(live) {
                scratch.acc.add_scaled(weights[j], row(j));
                scratch.den.add_scaled(1.0, &[weights[j]]);
            }
            let deg = scratch.den.finish()[0];
            if deg <= 0.0 {
                return Err(Error::DegenerateDegree);
            }
            scratch.acc.finish_into(&mut scratch.out);
            Ok(scratch.out.iter().map(|v| v / deg).collect())
        }
        AggregationKind::Attention(c) => {
            scratch.acc.reset();
            scratch.den.reset();
            match c {
                CoefficientMap::Sigmoid { a, gamma, epsilon, .. } => {
                    let query = dot(a, self_state);
                    for j in (0..m).filter(live) {
                        let cij = epsilon + sigmoid(query + src.key[j] + gamma * weights[j]);
                        scratch.acc.add_scaled(cij, row(j));
                        scratch.den.add_scaled(1.0, &[cij]);
                    }
                }
                CoefficientMap::Custom { eval, .. } => {
                    for j in (0..m).filter(live) {
                        let zj = src.states.row(j);
                        let zj = zj.to_slice().expect("standard layout");
                        let cij = eval(self_state, zj, weights[j]);
                        scratch.acc.add_scaled(cij, row(j));
                        scratch.den.add_scaled(1.0, &[cij]);
                    }
                }
            }
            let total = scratch.den.finish()[0];
            if total <= 0.0 {
                return Err(Error::DegenerateDegree);
            }
            scratch.acc.finish_into(&mut scratch.out);
            Ok(scratch.out.iter().map(|v| v / total).collect())
        }
        AggregationKind::MaxConv => {
            let mut out = vec![f64::NEG_INFINITY; agg.out_dim()];
            for j in (0..m).filter(live) {
                let w = weights[j];
                for (o, v) in out.iter_mut().zip(row(j)) {
                    *o = o.max(w * v);
                }
            }
            Ok(out)
        }
        AggregationKind::Custom(f) => {
            let neighbors: Vec<NeighborMessage<'_>> = (0..m)
                .filter(live)
                .map(|j| NeighborMessage {
                    state: src.states.row(j).to_slice().expect("standard layout"),
                    message: row(j),
                    weight: weights[j],
                })
                .collect();
            let out = f(self_state, &neighbors);
            if out.len() != agg.out_dim() {
                return Err(Error::Shape(format!(
                    "custom aggregation returned {} values, expected {}",
                    out.len(),
                    agg.out_dim()
                )));
            }
            Ok(out)
        }
    }
}

/// Evaluates F(z_self, {(z_j, w_j)}) for an explicit neighbor multiset.
pub fn aggregate(agg: &Aggregation, z_self: &[f64], neighbors: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood);
    }
    let d = agg.in_dim();
    if z_self.len() != d || neighbors.iter().any(|(z, _)| z.len() != d) {
        return Err(Error::Shape(format!("aggregation expects states of width {d}")));
    }
    let states = Array2::from_shape_fn((neighbors.len(), d), |(j, k)| neighbors[j].0[k]);
    let weights: Vec<f64> = neighbors.iter().map(|(_, w)| *w).collect();
    let src = LayerSources::new(agg, states.view())?;
    let mut scratch = Scratch::new(agg.out_dim());
    combine(agg, z_self, &src, &weights, None, &mut scratch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// Arithmetic mean over nodes.
    Mean,
    /// Coordinatewise max over nodes.
    Max,
}

/// Applies a readout to the rows of `z`.
pub fn readout(kind: Readout, z: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let n = z.nrows();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    match kind {
        Readout::Mean => {
            let mut acc = PairwiseAccumulator::new(z.ncols());
            for r in z.rows() {
                acc.add_scaled(1.0, &r.to_vec());
            }
            Ok(acc.finish().into_iter().map(|v| v / n as f64).collect())
        }
        Readout::Max => {
            let mut out = vec![f64::NEG_INFINITY; z.ncols()];
            for r in z.rows() {
                for (o, v) in out.iter_mut().zip(r) {
                    *o = o.max(*v);
                }
            }
            Ok(out)
        }
    }
}

/// Whether a node counts itself among its neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Neighborhood {
    #[default]
    ExcludeSelf,
    IncludeSelf,
}

/// A stack of aggregation layers with an optional readout.
#[derive(Debug, Clone)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Aggregation>,
    readout: Option<Readout>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Aggregation>, readout: Option<Readout>) -> Result<Self> {
        let mut width = input_dim;
        for (l, layer) in layers.iter().enumerate() {
            if layer.in_dim() != width {
                return Err(Error::Shape(format!(
                    "layer {} expects width {}, previous width is {width}",
                    l + 1,
                    layer.in_dim()
                )));
            }
            if let AggregationKind::Attention(c) = &layer.kind {
                c.check_dim(width)?;
            }
            width = layer.out_dim();
        }
        Ok(Self {
            input_dim,
            layers,
            readout,
        })
    }

    /// Layers of one built-in family with random affine-sigmoid messages
    /// (weights Uniform[0, 1], zero bias) and, for attention, random
    /// coefficients. `widths` lists d_1, .., d_L.
    pub fn random<R: Rng + ?Sized>(
        family: AggregationFamily,
        input_dim: usize,
        widths: &[usize],
        readout: Option<Readout>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut prev = input_dim;
        let mut layers = Vec::with_capacity(widths.len());
        for &w in widths {
            let layer = match family {
                AggregationFamily::Mean => Aggregation::mean(MessageMap::random_affine_sigmoid(w, prev, rng)),
                AggregationFamily::Degnorm => {
                    Aggregation::degree_normalized(MessageMap::random_affine_sigmoid(w, prev, rng))
                }
                AggregationFamily::Attn => {
                    let coeff = CoefficientMap::random_sigmoid(prev, rng);
                    Aggregation::attention(coeff, MessageMap::random_affine_sigmoid(w, prev, rng))
                }
                AggregationFamily::Max => Aggregation::max(MessageMap::random_affine_sigmoid(w, prev, rng)),
            };
            layers.push(layer);
            prev = w;
        }
        Self::new(input_dim, layers, readout)
    }

    pub fn layers(&self) -> &[Aggregation] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn readout(&self) -> Option<Readout> {
        self.readout
    }

    pub fn with_readout(mut self, readout: Option<Readout>) -> Self {
        self.readout = readout;
        self
    }

    /// d_0, d_1, .., d_L.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Aggregation::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Aggregation::out_dim)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkDoc::from_network(self)?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        doc.into_network()
    }
}

/// Receivers with at least this many sources are processed in parallel.
const PARALLEL_MIN_ROWS: usize = 128;

/// Runs one layer over all nodes of a graph.
fn graph_layer(
    agg: &Aggregation,
    g: &SampledGraph,
    z: ArrayView2<'_, f64>,
    hood: Neighborhood,
) -> Result<Array2<f64>> {
    let n = g.n();
    let src = LayerSources::new(agg, z)?;
    let w = g.weights();
    let node = |scratch: &mut Scratch, i: usize| {
        let wi = w.row(i);
        let skip = (hood == Neighborhood::ExcludeSelf).then_some(i);
        combine(
            agg,
            z.row(i).to_slice().expect("standard layout"),
            &src,
            wi.to_slice().expect("standard layout"),
            skip,
            scratch,
        )
    };
    let rows: Vec<Vec<f64>> = if n >= PARALLEL_MIN_ROWS {
        (0..n)
            .into_par_iter()
            .map_init(|| Scratch::new(agg.out_dim()), node)
            .collect::<Result<_>>()?
    } else {
        let mut scratch = Scratch::new(agg.out_dim());
        (0..n).map(|i| node(&mut scratch, i)).collect::<Result<_>>()?
    };
    let d = agg.out_dim();
    Ok(Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("row widths checked"))
}

fn check_signal(net: &Network, g: &SampledGraph, z: &Array2<f64>) -> Result<()> {
    if z.nrows() != g.n() || z.ncols() != net.input_dim {
        return Err(Error::Shape(format!(
            "signal is {}x{}, graph has {} nodes and the network expects width {}",
            z.nrows(),
            z.ncols(),
            g.n(),
            net.input_dim
        )));
    }
    Ok(())
}

/// Node states after the last layer, neighbors being all j != i.
pub fn forward_equivariant(net: &Network, g: &SampledGraph, z: &Array2<f64>) -> Result<Array2<f64>> {
    forward_equivariant_with(net, g, z, Neighborhood::ExcludeSelf)
}

pub fn forward_equivariant_with(
    net: &Network,
    g: &SampledGraph,
    z: &Array2<f64>,
    hood: Neighborhood,
) -> Result<Array2<f64>> {
    check_signal(net, g, z)?;
    let mut cur = z.as_standard_layout().to_owned();
    for layer in &net.layers {
        cur = graph_layer(layer, g, cur.view(), hood)?;
    }
    Ok(cur)
}

/// Readout of the equivariant output.
pub fn forward_invariant(net: &Network, g: &SampledGraph, z: &Array2<f64>) -> Result<Vec<f64>> {
    let kind = net.readout.ok_or(Error::MissingReadout)?;
    readout(kind, forward_equivariant(net, g, z)?.view())
}

// JSON document mirroring a network.

#[derive(Debug, Serialize, Deserialize)]
struct NetworkDoc {
    widths: Vec<usize>,
    layers: Vec<LayerDoc>,
    readout: Option<Readout>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    agg: AggregationFamily,
    psi: PsiDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coeff: Option<CoeffDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PsiDoc {
    AffineSigmoid { weights: Vec<Vec<f64>>, bias: Vec<f64> },
    Identity { dim: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct CoeffDoc {
    a: Vec<f64>,
    b: Vec<f64>,
    gamma: f64,
    epsilon: f64,
}

impl NetworkDoc {
    fn from_network(net: &Network) -> Result<Self> {
        let layers = net
            .layers
            .iter()
            .map(|layer| {
                let agg = layer.family().ok_or_else(|| {
                    Error::Unsupported("custom aggregations cannot be serialized".into())
                })?;
                let psi = match &layer.psi {
                    MessageMap::AffineSigmoid { weights, bias } => PsiDoc::AffineSigmoid {
                        weights: weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                        bias: bias.clone(),
                    },
                    MessageMap::Identity { dim } => PsiDoc::Identity { dim: *dim },
                    MessageMap::Custom { .. } => {
                        return Err(Error::Unsupported(
                            "custom message maps cannot be serialized".into(),
                        ))
                    }
                };
                let coeff = match &layer.kind {
                    AggregationKind::Attention(CoefficientMap::Sigmoid { a, b, gamma, epsilon }) => {
                        Some(CoeffDoc {
                            a: a.clone(),
                            b: b.clone(),
                            gamma: *gamma,
                            epsilon: *epsilon,
                        })
                    }
                    AggregationKind::Attention(CoefficientMap::Custom { .. }) => {
                        return Err(Error::Unsupported(
                            "custom coefficient maps cannot be serialized".into(),
                        ))
                    }
                    _ => None,
                };
                Ok(LayerDoc { agg, psi, coeff })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            widths: net.widths(),
            layers,
            readout: net.readout,
        })
    }

    fn into_network(self) -> Result<Network> {
        if self.widths.len() != self.layers.len() + 1 {
            return Err(Error::Config(format!(
                "{} widths for {} layers",
                self.widths.len(),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for doc in self.layers {
            let psi = match doc.psi {
                PsiDoc::AffineSigmoid { weights, bias } => {
                    let rows = weights.len();
                    let cols = weights.first().map_or(0, Vec::len);
                    if weights.iter().any(|r| r.len() != cols) {
                        return Err(Error::Config("ragged weight matrix".into()));
                    }
                    let flat: Vec<f64> = weights.into_iter().flatten().collect();
                    let w = Array2::from_shape_vec((rows, cols), flat)
                        .map_err(|e| Error::Config(e.to_string()))?;
                    MessageMap::affine_sigmoid(w, bias)?
                }
                PsiDoc::Identity { dim } => MessageMap::identity(dim),
            };
            let kind = match (doc.agg, doc.coeff) {
                (AggregationFamily::Mean, _) => AggregationKind::MeanConv,
                (AggregationFamily::Degnorm, _) => AggregationKind::DegreeNormalized,
                (AggregationFamily::Max, _) => AggregationKind::MaxConv,
                (AggregationFamily::Attn, Some(c)) => AggregationKind::Attention(CoefficientMap::Sigmoid {
                    a: c.a,
                    b: c.b,
                    gamma: c.gamma,
                    epsilon: c.epsilon,
                }),
                (AggregationFamily::Attn, None) => {
                    return Err(Error::Config("attention layer without `coeff`".into()))
                }
            };
            layers.push(Aggregation::new(kind, psi));
        }
        let net = Network::new(self.widths[0], layers, self.readout)?;
        if net.widths() != self.widths {
            return Err(Error::Config(format!(
                "declared widths {:?} disagree with layer shapes {:?}",
                self.widths,
                net.widths()
            )));
        }
        Ok(net)
    }
}
