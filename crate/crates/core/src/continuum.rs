//! Continuous counterparts of message-passing networks.
//!
//! The continuous network propagates functions f^(l) : X -> R^{d_l}. Every
//! integral against P is replaced by an average over a quadrature node set,
//! and every supremum by a maximum over the nodes. Independent node sets
//! (replicates) give a standard error for the resulting estimate.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sample_latents, sample_signal, InputMap, Kernel, LatentSampler, LatentSpace};
use crate::message_passing::{combine, Aggregation, AggregationKind, LayerSources, Network, Readout, Scratch};

/// Largest node count accepted for a tensor lattice.
pub const LATTICE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    /// i.i.d. draws from P.
    MonteCarlo,
    /// Closed tensor grid including the box faces; used for suprema.
    Lattice,
    /// One uniform draw inside each cell of a tensor grid.
    Stratified,
    /// Owen-scrambled Sobol points; independent scrambles per seed.
    Sobol,
}

/// Longest scrambled Sobol sequence available.
pub const SOBOL_CAP: usize = 1 << 16;

/// Reference nodes discretizing P.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSet {
    nodes: Array2<f64>,
    kind: QuadratureKind,
}

impl QuadratureSet {
    pub fn monte_carlo(space: &LatentSpace, m: usize, seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!("quadrature needs at least 2 nodes, got {m}")));
        }
        Ok(Self {
            nodes: sample_latents(LatentSampler::uniform(seed), space, m)?,
            kind: QuadratureKind::MonteCarlo,
        })
    }

    /// `per_axis` equally spaced points per coordinate, endpoints included.
    pub fn lattice(space: &LatentSpace, per_axis: usize) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::Config("lattice needs at least 2 points per axis".into()));
        }
        let grid = tensor_grid(space.dim(), per_axis)?;
        let nodes = Array2::from_shape_fn(grid.raw_dim(), |(m, k)| {
            let t = grid[[m, k]] as f64 / (per_axis - 1) as f64;
            space.lower()[k] + (space.upper()[k] - space.lower()[k]) * t
        });
        Ok(Self {
            nodes,
            kind: QuadratureKind::Lattice,
        })
    }

    /// One node drawn uniformly in each of `per_axis^d` congruent cells.
    pub fn stratified(space: &LatentSpace, per_axis: usize, seed: u64) -> Result<Self> {
        if per_axis < 1 || per_axis.pow(space.dim() as u32) < 2 {
            return Err(Error::Config("stratified set needs at least 2 cells".into()));
        }
        let grid = tensor_grid(space.dim(), per_axis)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Array2::zeros(grid.raw_dim());
        for (m, mut row) in nodes.rows_mut().into_iter().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                let t = (grid[[m, k]] as f64 + rng.random::<f64>()) / per_axis as f64;
                *v = space.lower()[k] + (space.upper()[k] - space.lower()[k]) * t;
            }
        }
        Ok(Self {
            nodes,
            kind: QuadratureKind::Stratified,
        })
    }

    /// First `m` points of a scrambled Sobol sequence. Balance properties
    /// are best when `m` is a power of two.
    pub fn sobol(space: &LatentSpace, m: usize, seed: u64) -> Result<Self> {
        if !(2..=SOBOL_CAP).contains(&m) {
            return Err(Error::Config(format!("scrambled Sobol set needs 2..={SOBOL_CAP} nodes, got {m}")));
        }
        if space.dim() > 256 {
            return Err(Error::Config("scrambled Sobol points exist up to dimension 256".into()));
        }
        let scramble = (crate::rng::mix64(seed) >> 32) as u32;
        let nodes = Array2::from_shape_fn((m, space.dim()), |(i, k)| {
            let t = sobol_burley::sample(i as u32, k as u32, scramble) as f64;
            space.lower()[k] + (space.upper()[k] - space.lower()[k]) * t
        });
        Ok(Self {
            nodes,
            kind: QuadratureKind::Sobol,
        })
    }

    /// Builds a set of about `m` nodes; grid kinds round to a whole number
    /// of points per axis.
    pub fn build(kind: QuadratureKind, space: &LatentSpace, m: usize, seed: u64) -> Result<Self> {
        let per_axis = || ((m as f64).powf(1.0 / space.dim() as f64).round() as usize).max(2);
        match kind {
            QuadratureKind::MonteCarlo => Self::monte_carlo(space, m, seed),
            QuadratureKind::Lattice => Self::lattice(space, per_axis()),
            QuadratureKind::Stratified => Self::stratified(space, per_axis(), seed),
            QuadratureKind::Sobol => Self::sobol(space, m, seed),
        }
    }

    /// Wraps explicit nodes as a Monte Carlo set.
    pub fn from_nodes(nodes: Array2<f64>, space: &LatentSpace) -> Result<Self> {
        if nodes.nrows() < 2 {
            return Err(Error::Config("quadrature needs at least 2 nodes".into()));
        }
        for (row, x) in nodes.rows().into_iter().enumerate() {
            if !space.contains(&x.to_vec()) {
                return Err(Error::OutsideSupport { row });
            }
        }
        Ok(Self {
            nodes: nodes.as_standard_layout().to_owned(),
            kind: QuadratureKind::MonteCarlo,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }

    pub fn nodes(&self) -> &Array2<f64> {
        &self.nodes
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }
}

fn tensor_grid(d: usize, per_axis: usize) -> Result<Array2<usize>> {
    let total = (0..d).try_fold(1usize, |acc, _| acc.checked_mul(per_axis));
    let total = match total {
        Some(t) if t <= LATTICE_CAP => t,
        _ => {
            return Err(Error::Config(format!(
                "{per_axis}^{d} grid exceeds the cap of {LATTICE_CAP} nodes"
            )))
        }
    };
    Ok(Array2::from_shape_fn((total, d), |(m, k)| (m / per_axis.pow(k as u32)) % per_axis))
}

/// A function f^(l) known through its values at the quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSignal {
    pub layer: usize,
    values: Array2<f64>,
}

impl ContinuousSignal {
    pub fn new(layer: usize, values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("signal values must be finite".into()));
        }
        Ok(Self {
            layer,
            values: values.as_standard_layout().to_owned(),
        })
    }

    /// Samples f0 at the quadrature nodes.
    pub fn sample(f0: &InputMap, quad: &QuadratureSet) -> Result<Self> {
        Self::new(0, sample_signal(f0, quad.nodes())?)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Quadrature estimate with one standard error per query.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitEstimate {
    pub values: Array2<f64>,
    /// sup-norm of the per-coordinate standard errors; 0 with one replicate.
    pub stderr: Vec<f64>,
    pub replicates: usize,
}

impl LimitEstimate {
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().copied().fold(0.0, f64::max)
    }

    /// Writes `query_index,x_1..x_d,v_1..v_dL,stderr`.
    pub fn write_csv(&self, queries: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["query_index".to_string()];
        header.extend((1..=queries.ncols()).map(|k| format!("x_{k}")));
        header.extend((1..=self.values.ncols()).map(|k| format!("v_{k}")));
        header.push("stderr".into());
        writeln!(w, "{}", header.join(","))?;
        for (q, (x, v)) in queries.rows().into_iter().zip(self.values.rows()).enumerate() {
            let mut fields = vec![q.to_string()];
            fields.extend(x.iter().map(f64::to_string));
            fields.extend(v.iter().map(f64::to_string));
            fields.push(self.stderr[q].to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

const PARALLEL_MIN_QUERIES: usize = 64;

/// Evaluates one continuous layer F(f(x), {f(y), W(x, y)}) at each query.
///
/// `query_states` holds f at the queries; only attention and custom
/// aggregations read it.
pub fn limit_layer(
    agg: &Aggregation,
    f: &ContinuousSignal,
    kernel: &Kernel,
    quad: &QuadratureSet,
    queries: ArrayView2<'_, f64>,
    query_states: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if f.values.nrows() != quad.len() {
        return Err(Error::Shape(format!(
            "signal has {} values for {} quadrature nodes",
            f.values.nrows(),
            quad.len()
        )));
    }
    let src = LayerSources::new(agg, f.values.view())?;
    eval_layer(agg, &src, kernel, quad, queries, query_states)
}

fn eval_layer(
    agg: &Aggregation,
    src: &LayerSources<'_>,
    kernel: &Kernel,
    quad: &QuadratureSet,
    queries: ArrayView2<'_, f64>,
    query_states: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let q = queries.nrows();
    if queries.ncols() != quad.dim() {
        return Err(Error::Shape(format!(
            "queries have dimension {}, quadrature {}",
            queries.ncols(),
            quad.dim()
        )));
    }
    if query_states.nrows() != q || query_states.ncols() != agg.in_dim() {
        return Err(Error::Shape(format!(
            "query states are {}x{}, expected {q}x{}",
            query_states.nrows(),
            query_states.ncols(),
            agg.in_dim()
        )));
    }
    let queries = queries.as_standard_layout();
    let query_states = query_states.as_standard_layout();
    let nodes = quad.nodes();
    let m = quad.len();
    let run = |(scratch, weights): &mut (Scratch, Vec<f64>), i: usize| {
        let x = queries.row(i);
        let x = x.to_slice().expect("standard layout");
        for (w, y) in weights.iter_mut().zip(nodes.rows()) {
            *w = kernel.eval(x, y.to_slice().expect("standard layout"));
        }
        let state = query_states.row(i);
        combine(agg, state.to_slice().expect("standard layout"), src, weights, None, scratch)
    };
    let init = || (Scratch::new(agg.out_dim()), vec![0.0; m]);
    let rows: Vec<Vec<f64>> = if q >= PARALLEL_MIN_QUERIES {
        (0..q).into_par_iter().map_init(init, run).collect::<Result<_>>()?
    } else {
        let mut s = init();
        (0..q).map(|i| run(&mut s, i)).collect::<Result<_>>()?
    };
    Ok(Array2::from_shape_vec((q, agg.out_dim()), rows.into_iter().flatten().collect())
        .expect("row widths checked"))
}

fn reads_own_state(agg: &Aggregation) -> bool {
    matches!(agg.kind, AggregationKind::Attention(_) | AggregationKind::Custom(_))
}

struct Replicate {
    quad: QuadratureSet,
    // f^(0), .., f^(L) at the nodes
    levels: Vec<ContinuousSignal>,
}

/// A continuous network whose node values have been computed for every
/// replicate, ready to be evaluated at arbitrary queries.
pub struct LimitNetwork {
    net: Network,
    f0: InputMap,
    kernel: Kernel,
    replicates: Vec<Replicate>,
}

impl LimitNetwork {
    /// Propagates f0 through every layer on each quadrature set.
    pub fn prepare(net: &Network, f0: &InputMap, kernel: &Kernel, quads: Vec<QuadratureSet>) -> Result<Self> {
        if quads.is_empty() {
            return Err(Error::Config("at least one quadrature replicate is required".into()));
        }
        if f0.out_dim() != net.input_dim() {
            return Err(Error::Shape(format!(
                "input map has width {}, network expects {}",
                f0.out_dim(),
                net.input_dim()
            )));
        }
        let replicates = quads
            .into_iter()
            .map(|quad| {
                let mut levels = vec![ContinuousSignal::sample(f0, &quad)?];
                for (l, layer) in net.layers().iter().enumerate() {
                    let prev = levels.last().expect("non-empty");
                    let next = limit_layer(layer, prev, kernel, &quad, quad.nodes().view(), prev.values.view())?;
                    levels.push(ContinuousSignal::new(l + 1, next)?);
                }
                Ok(Replicate { quad, levels })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            net: net.clone(),
            f0: f0.clone(),
            kernel: kernel.clone(),
            replicates,
        })
    }

    pub fn replicates(&self) -> usize {
        self.replicates.len()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// f^(layer) at the nodes of replicate `rep`.
    pub fn signal(&self, rep: usize, layer: usize) -> &ContinuousSignal {
        &self.replicates[rep].levels[layer]
    }

    pub fn quadrature(&self, rep: usize) -> &QuadratureSet {
        &self.replicates[rep].quad
    }

    /// f^(L) at the queries, averaged over replicates.
    pub fn evaluate(&self, queries: ArrayView2<'_, f64>) -> Result<LimitEstimate> {
        let per_rep = self
            .replicates
            .iter()
            .map(|rep| self.evaluate_replicate(rep, queries))
            .collect::<Result<Vec<_>>>()?;
        Ok(pool_replicates(&per_rep))
    }

    fn evaluate_replicate(&self, rep: &Replicate, queries: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let layers = self.net.layers();
        let big_l = layers.len();
        let q = queries.nrows();
        let queries = queries.as_standard_layout();
        if big_l == 0 {
            return sample_signal(&self.f0, &queries.to_owned());
        }
        // walk back to the deepest layer whose query state is not needed
        let mut start = big_l - 1;
        while start > 0 && reads_own_state(&layers[start]) {
            start -= 1;
        }
        let mut states = if start == 0 {
            sample_signal(&self.f0, &queries.to_owned())?
        } else {
            Array2::zeros((q, layers[start].in_dim()))
        };
        for (l, layer) in layers.iter().enumerate().skip(start) {
            let src = LayerSources::new(layer, rep.levels[l].values.view())?;
            states = eval_layer(layer, &src, &self.kernel, &rep.quad, queries.view(), states.view())?;
        }
        Ok(states)
    }

    /// Continuous readout of f^(L), averaged over replicates.
    pub fn readout(&self, kind: Readout) -> Result<LimitEstimate> {
        let per_rep: Vec<Array2<f64>> = self
            .replicates
            .iter()
            .map(|rep| {
                let v = limit_readout(kind, rep.levels.last().expect("non-empty"));
                Array2::from_shape_vec((1, v.len()), v).expect("one row")
            })
            .collect();
        Ok(pool_replicates(&per_rep))
    }
}

fn pool_replicates(per_rep: &[Array2<f64>]) -> LimitEstimate {
    let r = per_rep.len();
    let mean = per_rep.iter().fold(Array2::zeros(per_rep[0].raw_dim()), |acc, v| acc + v) / r as f64;
    let stderr = if r == 1 {
        vec![0.0; mean.nrows()]
    } else {
        let mut var = Array2::<f64>::zeros(mean.raw_dim());
        for v in per_rep {
            let d = v - &mean;
            var = var + &d * &d;
        }
        let var = var / (r - 1) as f64;
        var.axis_iter(Axis(0))
            .map(|row| row.iter().fold(0.0f64, |m, v| m.max((v / r as f64).sqrt())))
            .collect()
    };
    LimitEstimate {
        values: mean,
        stderr,
        replicates: r,
    }
}

/// Convenience wrapper around [`LimitNetwork`].
pub fn forward_limit(
    net: &Network,
    f0: &InputMap,
    kernel: &Kernel,
    quads: Vec<QuadratureSet>,
    queries: ArrayView2<'_, f64>,
) -> Result<LimitEstimate> {
    LimitNetwork::prepare(net, f0, kernel, quads)?.evaluate(queries)
}

/// Mean or coordinatewise max of the node values.
pub fn limit_readout(kind: Readout, f: &ContinuousSignal) -> Vec<f64> {
    crate::message_passing::readout(kind, f.values.view()).expect("signals have at least one node")
}

/// Exact limit of a max network with constant kernel and monotone input.
///
/// With W = c >= 0, every layer output is spatially constant and each
/// supremum sits at the top corner of the box, so the limit is
/// c psi_L(... c psi_1(f0(top corner))).
pub fn closed_form_max_limit(net: &Network, f0: &InputMap, kernel: &Kernel, space: &LatentSpace) -> Result<Vec<f64>> {
    let c = kernel
        .constant_value()
        .filter(|c| *c >= 0.0)
        .ok_or_else(|| Error::Precondition("kernel must be a nonnegative constant".into()))?;
    if !f0.is_monotone_nondecreasing() {
        return Err(Error::Precondition("input map must be coordinatewise nondecreasing".into()));
    }
    let mut z = f0.eval(&space.top_corner());
    for (l, layer) in net.layers().iter().enumerate() {
        if !matches!(layer.kind, AggregationKind::MaxConv) {
            return Err(Error::Precondition(format!("layer {} is not a max aggregation", l + 1)));
        }
        if !layer.psi.is_monotone_nondecreasing() {
            return Err(Error::Precondition(format!(
                "message map of layer {} has negative weights",
                l + 1
            )));
        }
        z = layer.psi.apply(&z).into_iter().map(|v| c * v).collect();
    }
    Ok(z)
}

/// max_i |z_i - f(X_i)|_inf.
pub fn mae(z: ArrayView2<'_, f64>, limit: ArrayView2<'_, f64>) -> Result<f64> {
    if z.dim() != limit.dim() {
        return Err(Error::Shape(format!(
            "signal is {:?} but limit values are {:?}",
            z.dim(),
            limit.dim()
        )));
    }
    Ok(z.iter().zip(limit).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message_passing::MessageMap;
    use ndarray::array;

    fn cube(d: usize) -> LatentSpace {
        LatentSpace::unit_cube(d).unwrap()
    }

    #[test]
    fn lattice_includes_faces() {
        let q = QuadratureSet::lattice(&cube(2), 3).unwrap();
        assert_eq!(q.len(), 9);
        assert!(q.nodes().rows().into_iter().any(|r| r.to_vec() == vec![1.0, 1.0]));
        assert!(q.nodes().rows().into_iter().any(|r| r.to_vec() == vec![0.0, 0.5]));
        assert!(QuadratureSet::lattice(&cube(4), 40).is_err());
    }

    #[test]
    fn stratified_has_one_node_per_cell() {
        let q = QuadratureSet::stratified(&cube(2), 4, 3).unwrap();
        let mut seen = [[0; 4]; 4];
        for r in q.nodes().rows() {
            seen[(r[0] * 4.0) as usize][(r[1] * 4.0) as usize] += 1;
        }
        assert!(seen.iter().flatten().all(|c| *c == 1));
    }

    #[test]
    fn sobol_points_form_a_net() {
        let q = QuadratureSet::sobol(&cube(2), 16, 5).unwrap();
        assert_eq!(q.kind(), QuadratureKind::Sobol);
        let mut seen = [[0; 4]; 4];
        for r in q.nodes().rows() {
            seen[(r[0] * 4.0) as usize][(r[1] * 4.0) as usize] += 1;
        }
        assert!(seen.iter().flatten().all(|c| *c == 1));
        let other = QuadratureSet::sobol(&cube(2), 16, 6).unwrap();
        assert_ne!(q.nodes(), other.nodes());
        assert_eq!(q.nodes(), QuadratureSet::sobol(&cube(2), 16, 5).unwrap().nodes());
        assert!(QuadratureSet::sobol(&cube(2), 1, 0).is_err());
        assert!(QuadratureSet::sobol(&cube(2), SOBOL_CAP + 1, 0).is_err());
        assert!(QuadratureSet::sobol(&cube(300), 16, 0).is_err());
    }

    #[test]
    fn too_few_nodes() {
        assert!(QuadratureSet::monte_carlo(&cube(1), 1, 0).is_err());
    }

    #[test]
    fn mean_of_constant_signal() {
        let quad = QuadratureSet::monte_carlo(&cube(2), 50, 1).unwrap();
        let psi = MessageMap::affine_sigmoid(array![[1.0, -2.0]], vec![0.5]).unwrap();
        let agg = Aggregation::mean(psi.clone());
        let f = ContinuousSignal::new(0, Array2::from_elem((50, 2), 0.3)).unwrap();
        let queries = array![[0.1, 0.2], [0.9, 0.4]];
        let states = Array2::from_elem((2, 2), 0.3);
        let out = limit_layer(&agg, &f, &Kernel::constant(1.0), &quad, queries.view(), states.view()).unwrap();
        let expect = psi.apply(&[0.3, 0.3])[0];
        for v in out.iter() {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn max_of_identity_on_lattice() {
        let space = cube(1);
        let quad = QuadratureSet::lattice(&space, 101).unwrap();
        let f = ContinuousSignal::sample(&InputMap::linear(vec![1.0]), &quad).unwrap();
        let agg = Aggregation::max(MessageMap::identity(1));
        let queries = array![[0.0], [0.37], [1.0]];
        let out = limit_layer(&agg, &f, &Kernel::constant(1.0), &quad, queries.view(), queries.view()).unwrap();
        assert!(out.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn exponential_kernel_integral() {
        // integral of y exp(-y) over [0, 1] is 1 - 2/e
        let space = cube(1);
        let quad = QuadratureSet::monte_carlo(&space, 100_000, 8).unwrap();
        let f = ContinuousSignal::sample(&InputMap::linear(vec![1.0]), &quad).unwrap();
        let agg = Aggregation::mean(MessageMap::identity(1));
        let kernel = Kernel::exponential(1.0, 1);
        let x = array![[0.0]];
        let out = limit_layer(&agg, &f, &kernel, &quad, x.view(), x.view()).unwrap();
        let terms: Vec<f64> = quad.nodes().iter().map(|y| y * (-y).exp()).collect();
        let mean = terms.iter().sum::<f64>() / terms.len() as f64;
        let sd = (terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (terms.len() - 1) as f64).sqrt();
        let se = sd / (terms.len() as f64).sqrt();
        let exact = 1.0 - 2.0 / std::f64::consts::E;
        assert!((out[[0, 0]] - exact).abs() < 3.0 * se, "{} vs {exact}", out[[0, 0]]);
    }

    #[test]
    fn constants_propagate_through_mean_layers() {
        let space = cube(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psis: Vec<MessageMap> = (0..3).map(|_| MessageMap::random_affine_sigmoid(2, 2, &mut rng)).collect();
        let net = Network::new(2, psis.iter().cloned().map(Aggregation::mean).collect(), None).unwrap();
        let v = vec![0.4, -0.1];
        let quads = (0..2).map(|r| QuadratureSet::monte_carlo(&space, 64, r).unwrap()).collect();
        let queries = array![[0.5, 0.5], [0.0, 1.0]];
        let est = forward_limit(&net, &InputMap::constant(v.clone()), &Kernel::constant(1.0), quads, queries.view()).unwrap();
        let mut expect = v;
        for p in &psis {
            expect = p.apply(&expect);
        }
        for row in est.values.rows() {
            for (a, b) in row.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(est.max_stderr() < 1e-14);
    }

    #[test]
    fn constant_input_is_a_fixed_point_for_all_families() {
        use crate::message_passing::{AggregationFamily, CoefficientMap};
        let space = cube(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in AggregationFamily::ALL {
            let layers: Vec<Aggregation> = (0..2)
                .map(|_| {
                    let psi = MessageMap::random_affine_sigmoid(2, 2, &mut rng);
                    match family {
                        AggregationFamily::Mean => Aggregation::mean(psi),
                        AggregationFamily::Degnorm => Aggregation::degree_normalized(psi),
                        AggregationFamily::Attn => Aggregation::attention(CoefficientMap::random_sigmoid(2, &mut rng), psi),
                        AggregationFamily::Max => Aggregation::max(psi),
                    }
                })
                .collect();
            let net = Network::new(2, layers, None).unwrap();
            let quads = vec![QuadratureSet::monte_carlo(&space, 40, 9).unwrap()];
            let queries = array![[0.2, 0.8], [0.6, 0.1], [1.0, 1.0]];
            let f0 = InputMap::constant(vec![0.7, 0.2]);
            let est = forward_limit(&net, &f0, &Kernel::constant(0.8), quads, queries.view()).unwrap();
            for row in est.values.rows() {
                assert_eq!(row, est.values.row(0), "{family}");
            }
        }
    }

    #[test]
    fn one_layer_network_matches_limit_layer() {
        let space = cube(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = Aggregation::attention(
            crate::message_passing::CoefficientMap::random_sigmoid(1, &mut rng),
            MessageMap::random_affine_sigmoid(2, 1, &mut rng),
        );
        let net = Network::new(1, vec![layer.clone()], None).unwrap();
        let f0 = InputMap::linear(vec![0.3, 0.6]);
        let kernel = Kernel::floored_gaussian(0.1, 1.0, 2);
        let quad = QuadratureSet::monte_carlo(&space, 200, 4).unwrap();
        let queries = array![[0.1, 0.1], [0.5, 0.9]];
        let est = forward_limit(&net, &f0, &kernel, vec![quad.clone()], queries.view()).unwrap();
        let f = ContinuousSignal::sample(&f0, &quad).unwrap();
        let qs = sample_signal(&f0, &queries).unwrap();
        let direct = limit_layer(&layer, &f, &kernel, &quad, queries.view(), qs.view()).unwrap();
        assert_eq!(est.values, direct);
        assert_eq!(est.stderr, vec![0.0, 0.0]);
    }

    #[test]
    fn closed_form_max() {
        let space = cube(3);
        let net = Network::new(1, vec![Aggregation::max(MessageMap::identity(1))], None).unwrap();
        let a = vec![0.2, 0.5, 0.1];
        let v = closed_form_max_limit(&net, &InputMap::linear(a), &Kernel::constant(1.0), &space).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-15);

        let psi = MessageMap::affine_sigmoid(array![[2.0]], vec![0.0]).unwrap();
        let net = Network::new(1, vec![Aggregation::max(psi)], None).unwrap();
        let v = closed_form_max_limit(&net, &InputMap::linear(vec![1.0]), &Kernel::constant(1.0), &cube(1)).unwrap();
        assert!((v[0] - 0.880797077977882).abs() < 1e-12);
    }

    #[test]
    fn closed_form_max_preconditions() {
        let space = cube(1);
        let net = Network::new(1, vec![Aggregation::max(MessageMap::identity(1))], None).unwrap();
        let f0 = InputMap::linear(vec![1.0]);
        assert!(matches!(
            closed_form_max_limit(&net, &InputMap::linear(vec![-1.0]), &Kernel::constant(1.0), &space),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            closed_form_max_limit(&net, &f0, &Kernel::exponential(1.0, 1), &space),
            Err(Error::Precondition(_))
        ));
        let neg = MessageMap::affine_sigmoid(array![[-1.0]], vec![0.0]).unwrap();
        let net = Network::new(1, vec![Aggregation::max(neg)], None).unwrap();
        assert!(closed_form_max_limit(&net, &f0, &Kernel::constant(1.0), &space).is_err());
        let net = Network::new(1, vec![Aggregation::mean(MessageMap::identity(1))], None).unwrap();
        assert!(closed_form_max_limit(&net, &f0, &Kernel::constant(1.0), &space).is_err());
    }

    #[test]
    fn lattice_max_approaches_closed_form_from_below() {
        let space = cube(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layers: Vec<Aggregation> = (0..2)
            .map(|l| Aggregation::max(MessageMap::random_affine_sigmoid(2, if l == 0 { 1 } else { 2 }, &mut rng)))
            .collect();
        let net = Network::new(1, layers, None).unwrap();
        let f0 = InputMap::linear(vec![0.4, 0.7]);
        let kernel = Kernel::constant(1.0);
        let exact = closed_form_max_limit(&net, &f0, &kernel, &space).unwrap();
        let x = array![[0.3, 0.3]];
        let mut prev = f64::NEG_INFINITY;
        for k in [3, 5, 9, 17] {
            // a grid on which the corner is not the only node near the top
            let nodes = Array2::from_shape_fn((k * k, 2), |(m, c)| {
                let i = if c == 0 { m % k } else { m / k };
                0.999 * i as f64 / (k - 1) as f64
            });
            let quad = QuadratureSet::from_nodes(nodes, &space).unwrap();
            let v = forward_limit(&net, &f0, &kernel, vec![quad], x.view()).unwrap().values;
            assert!(v[[0, 0]] >= prev);
            assert!(v[[0, 0]] <= exact[0] + 1e-15);
            prev = v[[0, 0]];
        }
        let quad = QuadratureSet::lattice(&space, 101).unwrap();
        let v = forward_limit(&net, &f0, &kernel, vec![quad], x.view()).unwrap().values;
        assert!((v[[0, 0]] - exact[0]).abs() < 1e-15);
    }

    #[test]
    fn readouts_of_signals() {
        let f = ContinuousSignal::new(1, array![[0.0], [1.0]]).unwrap();
        assert_eq!(limit_readout(Readout::Mean, &f), vec![0.5]);
        let f = ContinuousSignal::new(1, Array2::from_elem((5, 2), 0.25)).unwrap();
        assert_eq!(limit_readout(Readout::Max, &f), vec![0.25, 0.25]);
        assert_eq!(limit_readout(Readout::Mean, &f), vec![0.25, 0.25]);

        // f(y) = y(1 - y) on a 1001-point lattice attains 0.25 at y = 0.5
        let quad = QuadratureSet::lattice(&cube(1), 1001).unwrap();
        let vals = quad.nodes().mapv(|y| y * (1.0 - y));
        let m = limit_readout(Readout::Max, &ContinuousSignal::new(0, vals).unwrap())[0];
        assert!((m - 0.25).abs() <= 2.5e-7);
    }

    #[test]
    fn mae_values() {
        let z = array![[0.0, 0.0]];
        assert_eq!(mae(z.view(), z.view()).unwrap(), 0.0);
        assert!((mae(z.view(), array![[0.1, -0.2]].view()).unwrap() - 0.2).abs() < 1e-15);
        assert!(mae(z.view(), array![[0.1]].view()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_simple_fn((3, 4), || rng.random::<f64>());
        let b = Array2::from_shape_simple_fn((3, 4), || rng.random::<f64>());
        let mut worst = 0.0f64;
        for i in 0..3 {
            let mut row = 0.0f64;
            for k in 0..4 {
                row = row.max((a[[i, k]] - b[[i, k]]).abs());
            }
            worst = worst.max(row);
        }
        assert_eq!(mae(a.view(), b.view()).unwrap(), worst);
    }

    #[test]
    fn limit_csv() {
        let dir = tempfile::tempdir().unwrap();
        let est = LimitEstimate {
            values: array![[0.5, 1.5]],
            stderr: vec![0.25],
            replicates: 2,
        };
        let path = dir.path().join("limit.csv");
        est.write_csv(array![[0.1]].view(), &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(path).unwrap(),
            "query_index,x_1,v_1,v_2,stderr\n0,0.1,0.5,1.5,0.25\n"
        );
    }
}
