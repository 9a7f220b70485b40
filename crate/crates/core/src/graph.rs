//! Latent-position random graphs.
//!
//! A random graph model is a pair (W, P): node latents are drawn i.i.d. from
//! P on a box in R^d and every pair of nodes is joined by an edge of weight
//! W(x_i, x_j). Graphs are always fully connected; a zero weight is still an
//! edge.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box supporting the latent distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LatentSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidSpace(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidSpace(format!(
                    "coordinate {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit hypercube [0, 1]^d.
    pub fn unit_cube(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Largest Euclidean distance between two points of the box.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    /// The corner with every coordinate at its upper bound.
    pub fn top_corner(&self) -> Vec<f64> {
        self.upper.clone()
    }
}

/// Seeded sampler for the latent distribution P (uniform on the box).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSampler {
    pub seed: u64,
}

impl LatentSampler {
    pub fn uniform(seed: u64) -> Self {
        Self { seed }
    }
}

/// Draws `n` latents row by row from a single stream, so the first `k` rows
/// of a sample of size `n` coincide with a sample of size `k`.
pub fn sample_latents(sampler: LatentSampler, space: &LatentSpace, n: usize) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            let u: f64 = rng.random();
            *v = space.lower[k] + (space.upper[k] - space.lower[k]) * u;
        }
    }
    Ok(out)
}

/// Serializable built-in kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// W(x, y) = value.
    Constant { value: f64 },
    /// W(x, y) = alpha + (1 - alpha) exp(-|x - y|_2^2 / bandwidth^2).
    FlooredGaussian { alpha: f64, bandwidth: f64 },
    /// W(x, y) = exp(-|x - y|_2 / scale).
    Exponential { scale: f64 },
}

type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum KernelForm {
    Builtin(KernelSpec),
    Custom(KernelFn),
}

/// Symmetric kernel W with declared regularity metadata.
///
/// `lower_bound` is a constant alpha with W > alpha whenever alpha > 0, and
/// `lipschitz` bounds |W(x, y) - W(x', y)| / |x - x'|_inf (and likewise in y).
#[derive(Clone)]
pub struct Kernel {
    form: KernelForm,
    lower_bound: f64,
    lipschitz: f64,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Kernel");
        match &self.form {
            KernelForm::Builtin(spec) => s.field("spec", spec),
            KernelForm::Custom(_) => s.field("spec", &"custom"),
        };
        s.field("lower_bound", &self.lower_bound)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Kernel {
    pub fn constant(value: f64) -> Self {
        Self {
            form: KernelForm::Builtin(KernelSpec::Constant { value }),
            lower_bound: 0.0,
            lipschitz: 0.0,
        }
    }

    pub fn floored_gaussian(alpha: f64, bandwidth: f64, dim: usize) -> Self {
        let lipschitz = (1.0 - alpha) * (2.0 * dim as f64 / std::f64::consts::E).sqrt() / bandwidth;
        Self {
            form: KernelForm::Builtin(KernelSpec::FlooredGaussian { alpha, bandwidth }),
            lower_bound: alpha,
            lipschitz,
        }
    }

    pub fn exponential(scale: f64, dim: usize) -> Self {
        Self {
            form: KernelForm::Builtin(KernelSpec::Exponential { scale }),
            lower_bound: 0.0,
            lipschitz: (dim as f64).sqrt() / scale,
        }
    }

    pub fn from_spec(spec: &KernelSpec, dim: usize) -> Self {
        match *spec {
            KernelSpec::Constant { value } => Self::constant(value),
            KernelSpec::FlooredGaussian { alpha, bandwidth } => {
                Self::floored_gaussian(alpha, bandwidth, dim)
            }
            KernelSpec::Exponential { scale } => Self::exponential(scale, dim),
        }
    }

    /// Wraps an arbitrary symmetric kernel; the caller vouches for the metadata.
    pub fn custom<F>(eval: F, lower_bound: f64, lipschitz: f64) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            form: KernelForm::Custom(Arc::new(eval)),
            lower_bound,
            lipschitz,
        }
    }

    /// Overrides the declared lower bound alpha.
    pub fn with_lower_bound(mut self, alpha: f64) -> Self {
        self.lower_bound = alpha;
        self
    }

    pub fn spec(&self) -> Option<&KernelSpec> {
        match &self.form {
            KernelForm::Builtin(spec) => Some(spec),
            KernelForm::Custom(_) => None,
        }
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// The constant value, when W does not depend on its arguments.
    pub fn constant_value(&self) -> Option<f64> {
        match &self.form {
            KernelForm::Builtin(KernelSpec::Constant { value }) => Some(*value),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.form {
            KernelForm::Builtin(KernelSpec::Constant { value }) => *value,
            KernelForm::Builtin(KernelSpec::FlooredGaussian { alpha, bandwidth }) => {
                let r2 = squared_distance(x, y);
                alpha + (1.0 - alpha) * (-r2 / (bandwidth * bandwidth)).exp()
            }
            KernelForm::Builtin(KernelSpec::Exponential { scale }) => {
                (-squared_distance(x, y).sqrt() / scale).exp()
            }
            KernelForm::Custom(f) => f(x, y),
        }
    }
}

#[inline]
fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// A graph drawn from a latent-position model.
///
/// The diagonal W(x_i, x_i) is stored but aggregations never read it unless
/// self-inclusion is explicitly requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGraph {
    latents: Array2<f64>,
    weights: Array2<f64>,
}

impl SampledGraph {
    pub fn n(&self) -> usize {
        self.latents.nrows()
    }

    pub fn latents(&self) -> &Array2<f64> {
        &self.latents
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Subgraph induced by the first `n` nodes.
    pub fn prefix(&self, n: usize) -> Result<SampledGraph> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if n > self.n() {
            return Err(Error::Shape(format!("prefix of {n} nodes from a graph of {}", self.n())));
        }
        Ok(SampledGraph {
            latents: self.latents.slice(ndarray::s![..n, ..]).to_owned(),
            weights: self.weights.slice(ndarray::s![..n, ..n]).to_owned(),
        })
    }

    /// Writes the upper triangle (`i,j,w`, diagonal included) and the latents
    /// (`i,x_1..x_d`) as two CSV files.
    pub fn write_csv(&self, edges: &Path, latents: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(edges)?);
        writeln!(w, "i,j,w")?;
        let n = self.n();
        for i in 0..n {
            for j in i..n {
                writeln!(w, "{},{},{}", i, j, self.weights[[i, j]])?;
            }
        }
        w.flush()?;

        let mut w = std::io::BufWriter::new(std::fs::File::create(latents)?);
        let header: Vec<String> = std::iter::once("i".to_string())
            .chain((1..=self.latents.ncols()).map(|k| format!("x_{k}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, row) in self.latents.rows().into_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", i, vals.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Materializes the symmetric weight matrix w_ij = W(x_i, x_j).
pub fn build_graph(latents: Array2<f64>, kernel: &Kernel) -> Result<SampledGraph> {
    let n = latents.nrows();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        let xi = latents.row(i);
        let xi = xi.as_slice().expect("standard layout");
        for j in i..n {
            let xj = latents.row(j);
            let w = kernel.eval(xi, xj.as_slice().expect("standard layout"));
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::KernelRange { i, j, value: w });
            }
            weights[[i, j]] = w;
            weights[[j, i]] = w;
        }
    }
    Ok(SampledGraph { latents, weights })
}

/// Like [`build_graph`] but also checks every latent lies in `space`.
pub fn build_graph_in(latents: Array2<f64>, space: &LatentSpace, kernel: &Kernel) -> Result<SampledGraph> {
    for (row, x) in latents.rows().into_iter().enumerate() {
        if !space.contains(x.as_slice().expect("standard layout")) {
            return Err(Error::OutsideSupport { row });
        }
    }
    build_graph(latents, kernel)
}

/// Serializable built-in input maps f = f^(0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMapSpec {
    /// f(x) = <a, x>, a scalar signal.
    Linear { coefficients: Vec<f64> },
    /// f(x) = value.
    Constant { value: Vec<f64> },
}

type InputFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum InputForm {
    Builtin(InputMapSpec),
    Custom {
        eval: InputFn,
        out_dim: usize,
        lipschitz: f64,
        sup_bound: f64,
    },
}

/// Input signal f : X -> R^{d_0}.
#[derive(Clone)]
pub struct InputMap {
    form: InputForm,
}

impl fmt::Debug for InputMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            InputForm::Builtin(spec) => f.debug_tuple("InputMap").field(spec).finish(),
            InputForm::Custom { out_dim, .. } => {
                f.debug_struct("InputMap").field("custom_out_dim", out_dim).finish()
            }
        }
    }
}

impl InputMap {
    pub fn linear(coefficients: Vec<f64>) -> Self {
        Self {
            form: InputForm::Builtin(InputMapSpec::Linear { coefficients }),
        }
    }

    pub fn constant(value: Vec<f64>) -> Self {
        Self {
            form: InputForm::Builtin(InputMapSpec::Constant { value }),
        }
    }

    pub fn from_spec(spec: &InputMapSpec) -> Self {
        Self {
            form: InputForm::Builtin(spec.clone()),
        }
    }

    pub fn custom<F>(eval: F, out_dim: usize, lipschitz: f64, sup_bound: f64) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            form: InputForm::Custom {
                eval: Arc::new(eval),
                out_dim,
                lipschitz,
                sup_bound,
            },
        }
    }

    pub fn spec(&self) -> Option<&InputMapSpec> {
        match &self.form {
            InputForm::Builtin(s) => Some(s),
            InputForm::Custom { .. } => None,
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.form {
            InputForm::Builtin(InputMapSpec::Linear { .. }) => 1,
            InputForm::Builtin(InputMapSpec::Constant { value }) => value.len(),
            InputForm::Custom { out_dim, .. } => *out_dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.form {
            InputForm::Builtin(InputMapSpec::Linear { coefficients }) => {
                vec![coefficients.iter().zip(x).map(|(a, v)| a * v).sum()]
            }
            InputForm::Builtin(InputMapSpec::Constant { value }) => value.clone(),
            InputForm::Custom { eval, .. } => eval(x),
        }
    }

    /// Lipschitz constant with respect to the sup norm on the latent space.
    pub fn lipschitz(&self) -> f64 {
        match &self.form {
            InputForm::Builtin(InputMapSpec::Linear { coefficients }) => {
                coefficients.iter().map(|a| a.abs()).sum()
            }
            InputForm::Builtin(InputMapSpec::Constant { .. }) => 0.0,
            InputForm::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// sup over the box of |f(x)|_inf.
    pub fn sup_bound(&self, space: &LatentSpace) -> f64 {
        match &self.form {
            InputForm::Builtin(InputMapSpec::Linear { coefficients }) => {
                let (mut hi, mut lo) = (0.0, 0.0);
                for (k, a) in coefficients.iter().enumerate() {
                    let p = a * space.lower()[k];
                    let q = a * space.upper()[k];
                    hi += p.max(q);
                    lo += p.min(q);
                }
                f64::max(hi, -lo)
            }
            InputForm::Builtin(InputMapSpec::Constant { value }) => {
                value.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
            }
            InputForm::Custom { sup_bound, .. } => *sup_bound,
        }
    }

    /// True when every output coordinate is nondecreasing in every latent
    /// coordinate. Custom maps are never assumed monotone.
    pub fn is_monotone_nondecreasing(&self) -> bool {
        match &self.form {
            InputForm::Builtin(InputMapSpec::Linear { coefficients }) => {
                coefficients.iter().all(|a| *a >= 0.0)
            }
            InputForm::Builtin(InputMapSpec::Constant { .. }) => true,
            InputForm::Custom { .. } => false,
        }
    }
}

/// The sampling operator: row i of the result is f(latents[i]).
pub fn sample_signal(f: &InputMap, latents: &Array2<f64>) -> Result<Array2<f64>> {
    let n = latents.nrows();
    let d0 = f.out_dim();
    let mut out = Array2::zeros((n, d0));
    for (i, x) in latents.rows().into_iter().enumerate() {
        let v = f.eval(x.as_slice().expect("standard layout"));
        if v.len() != d0 {
            return Err(Error::Shape(format!(
                "input map returned {} values, expected {d0}",
                v.len()
            )));
        }
        out.row_mut(i).iter_mut().zip(v).for_each(|(o, v)| *o = v);
    }
    Ok(out)
}

/// A permutation sigma of {0, .., n-1}, stored as the images sigma(i).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &k in &images {
            if k >= n {
                return Err(Error::InvalidPermutation {
                    n,
                    reason: format!("image {k} out of range"),
                });
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidPermutation {
                    n,
                    reason: format!("image {k} repeated"),
                });
            }
        }
        Ok(Self(images))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Uniformly random permutation (Fisher-Yates).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            v.swap(i, j);
        }
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn image(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &s) in self.0.iter().enumerate() {
            inv[s] = i;
        }
        Self(inv)
    }

    /// (self o other)(i) = self(other(i)).
    pub fn compose(&self, other: &Self) -> Self {
        Self(other.0.iter().map(|&k| self.0[k]).collect())
    }

    /// sigma . Z: row sigma(i) of the result is row i of `rows`.
    pub fn apply_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        if rows.nrows() != self.len() {
            return Err(Error::Shape(format!(
                "permutation of {} elements applied to {} rows",
                self.len(),
                rows.nrows()
            )));
        }
        let mut out = Array2::zeros(rows.raw_dim());
        for (i, row) in rows.rows().into_iter().enumerate() {
            out.row_mut(self.0[i]).assign(&row);
        }
        Ok(out)
    }
}

/// Relabels a graph: weights'[i][j] = weights[sigma^-1(i)][sigma^-1(j)].
pub fn permute_graph(g: &SampledGraph, sigma: &Permutation) -> Result<SampledGraph> {
    let n = g.n();
    if sigma.len() != n {
        return Err(Error::InvalidPermutation {
            n,
            reason: format!("permutation has {} elements", sigma.len()),
        });
    }
    let inv = sigma.inverse();
    let latents = sigma.apply_rows(&g.latents)?;
    let weights = Array2::from_shape_fn((n, n), |(i, j)| g.weights[[inv.0[i], inv.0[j]]]);
    Ok(SampledGraph { latents, weights })
}
