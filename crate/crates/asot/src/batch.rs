//! Batch execution of multiple OT problems: one-by-one driver, the
//! block-diagonal-stacked Sinkhorn for size-variable distributions, and the
//! fixed-size matrix-form batched Sinkhorn shared by all entropic anchor
//! strategies.

use ndarray::{azip, Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ot::{
    euclidean_cost, gibbs_kernel, sinkhorn, solve_exact, CostMatrix, DiscreteDistribution,
    SinkhornConfig, SinkhornState,
};

/// A batch job: an ordered distribution collection plus the index pairs to
/// solve.
#[derive(Debug, Clone)]
pub struct ProblemSet {
    distributions: Vec<DiscreteDistribution>,
    pairs: Vec<(usize, usize)>,
}

impl ProblemSet {
    pub fn new(
        distributions: Vec<DiscreteDistribution>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = distributions.len();
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &pairs {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("pair ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(Error::invalid(format!("self-pair ({i}, {i})")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::invalid(format!("duplicate pair ({i}, {j})")));
            }
        }
        Ok(Self {
            distributions,
            pairs,
        })
    }

    /// All unordered pairs, each listed once.
    pub fn all_pairs(distributions: Vec<DiscreteDistribution>) -> Result<Self> {
        let n = distributions.len();
        let pairs = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::new(distributions, pairs)
    }

    pub fn distributions(&self) -> &[DiscreteDistribution] {
        &self.distributions
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Column-stacked source and target marginals of N same-size problems.
#[derive(Debug, Clone)]
pub struct BatchedMarginals {
    a: Array2<f64>,
    b: Array2<f64>,
}

impl BatchedMarginals {
    pub fn new(a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::invalid("stacked marginal shapes differ"));
        }
        for m in [&a, &b] {
            for col in m.columns() {
                let s: f64 = col.sum();
                if (s - 1.0).abs() > 1e-9 || col.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::invalid(
                        "every stacked marginal column must lie on the probability simplex",
                    ));
                }
            }
        }
        Ok(Self { a, b })
    }

    /// Stacks per-pair marginal vectors into columns.
    pub fn from_columns(cols_a: &[Array1<f64>], cols_b: &[Array1<f64>]) -> Result<Self> {
        if cols_a.len() != cols_b.len() || cols_a.is_empty() {
            return Err(Error::invalid("marginal column lists must match and be nonempty"));
        }
        let k = cols_a[0].len();
        let n = cols_a.len();
        let mut a = Array2::zeros((k, n));
        let mut b = Array2::zeros((k, n));
        for (c, (ca, cb)) in cols_a.iter().zip(cols_b).enumerate() {
            if ca.len() != k || cb.len() != k {
                return Err(Error::invalid("inconsistent marginal lengths"));
            }
            a.column_mut(c).assign(ca);
            b.column_mut(c).assign(cb);
        }
        Self::new(a, b)
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    pub fn len(&self) -> usize {
        self.a.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.a.ncols() == 0
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }
}

/// Pairwise result container. Entries not requested stay unfilled rather
/// than defaulting to zero.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    values: Array2<f64>,
    filled: Array2<bool>,
}

impl DistanceMatrix {
    pub fn unfilled(n: usize) -> Self {
        Self {
            values: Array2::zeros((n, n)),
            filled: Array2::from_elem((n, n), false),
        }
    }

    pub fn set_symmetric(&mut self, i: usize, j: usize, value: f64) {
        self.values[[i, j]] = value;
        self.values[[j, i]] = value;
        self.filled[[i, j]] = true;
        self.filled[[j, i]] = true;
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(0.0);
        }
        self.filled[[i, j]].then(|| self.values[[i, j]])
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn filled(&self) -> &Array2<bool> {
        &self.filled
    }
}

/// Matrix-form batched Sinkhorn over one shared k x k cost matrix:
/// `U = A / (K V)`, `V = B / (K^T U)` with all pair columns advanced by two
/// matrix products per iteration. Every column matches a single-pair
/// `sinkhorn` run on `(A[:,i], B[:,i])` within tight floating-point
/// tolerance (a batch of one follows the single-pair schedule exactly), and
/// a failing column flags only itself.
pub fn batched_sinkhorn_fixed(
    marginals: &BatchedMarginals,
    c_s: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<Vec<Result<f64>>> {
    cfg.validate()?;
    if c_s.nrows() != c_s.ncols() || c_s.nrows() != marginals.k() {
        return Err(Error::invalid(format!(
            "shared cost must be {k} x {k}, got {r} x {c}",
            k = marginals.k(),
            r = c_s.nrows(),
            c = c_s.ncols()
        )));
    }
    let kernel = gibbs_kernel(c_s, cfg.epsilon);
    let k = marginals.k();
    if marginals.len() == 1 {
        // degenerate batch: reuse the single-pair schedule bit-for-bit
        let a: Vec<f64> = marginals.a().column(0).to_vec();
        let b: Vec<f64> = marginals.b().column(0).to_vec();
        let mut state = SinkhornState::new(k, k);
        for _ in 0..cfg.iterations {
            state.update_u(&kernel, &a, cfg.underflow_floor);
            state.update_v(&kernel, &b, cfg.underflow_floor);
        }
        let cost = state.cost(&kernel, c_s.values());
        return Ok(vec![if cost.is_finite() {
            Ok(cost)
        } else {
            Err(Error::numeric("NaN in batched column 0"))
        }]);
    }
    let p = marginals.len();
    let floor = cfg.underflow_floor;
    let mut u = Array2::from_elem((k, p), 1.0);
    let mut v = Array2::from_elem((k, p), 1.0);
    for _ in 0..cfg.iterations {
        let den = kernel.dot(&v);
        azip!((u in &mut u, &a in marginals.a(), &d in &den) {
            *u = a / d.max(floor);
        });
        let den = kernel.t().dot(&u);
        azip!((v in &mut v, &b in marginals.b(), &d in &den) {
            *v = b / d.max(floor);
        });
    }
    // linear cost per column: sum_i u_i * ((K o C) v)_i
    let kc = &kernel * c_s.values();
    let m = kc.dot(&v);
    let results = (0..p)
        .map(|col| {
            let mut cost = 0.0;
            for i in 0..k {
                cost += u[[i, col]] * m[[i, col]];
            }
            if cost.is_finite() {
                Ok(cost)
            } else {
                Err(Error::numeric(format!("NaN in batched column {col}")))
            }
        })
        .collect();
    Ok(results)
}

/// Per-pair kernels stacked along a block diagonal, stored segmented. Only
/// in-block entries exist, so off-block positions can never leak mass.
pub(crate) struct BlockDiagKernel {
    pub blocks: Vec<Array2<f64>>,
}

impl BlockDiagKernel {
    /// Applies the stacked kernel to a vertically stacked vector.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let mut row = 0;
        let mut col = 0;
        for blk in &self.blocks {
            crate::ot::kernel_apply(blk, &v[col..col + blk.ncols()], &mut out[row..row + blk.nrows()]);
            row += blk.nrows();
            col += blk.ncols();
        }
    }

    pub fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        let mut row = 0;
        let mut col = 0;
        for blk in &self.blocks {
            crate::ot::kernel_apply_t(blk, &u[row..row + blk.nrows()], &mut out[col..col + blk.ncols()]);
            row += blk.nrows();
            col += blk.ncols();
        }
    }
}

/// Block-diagonal-stacked Sinkhorn over size-variable pairs: one stacked
/// update sequence, per-pair results identical to one-by-one runs.
pub fn bds_sinkhorn<F>(
    problems: &ProblemSet,
    metric: F,
    cfg: &SinkhornConfig,
) -> Result<Vec<Result<f64>>>
where
    F: Fn(&DiscreteDistribution, &DiscreteDistribution) -> Result<CostMatrix>,
{
    cfg.validate()?;
    let dists = problems.distributions();
    let mut costs = Vec::with_capacity(problems.pairs().len());
    let mut blocks = Vec::with_capacity(problems.pairs().len());
    let mut a_stacked = Vec::new();
    let mut b_stacked = Vec::new();
    for &(i, j) in problems.pairs() {
        let c = metric(&dists[i], &dists[j])?;
        blocks.push(gibbs_kernel(&c, cfg.epsilon));
        costs.push(c);
        a_stacked.extend(dists[i].mass().iter().copied());
        b_stacked.extend(dists[j].mass().iter().copied());
    }
    let kernel = BlockDiagKernel { blocks };
    let n_total = a_stacked.len();
    let m_total = b_stacked.len();
    let mut u = vec![1.0_f64; n_total];
    let mut v = vec![1.0_f64; m_total];
    let mut ku = vec![0.0_f64; n_total];
    let mut kv = vec![0.0_f64; m_total];
    for _ in 0..cfg.iterations {
        kernel.apply(&v, &mut ku);
        for i in 0..n_total {
            u[i] = a_stacked[i] / ku[i].max(cfg.underflow_floor);
        }
        kernel.apply_t(&u, &mut kv);
        for j in 0..m_total {
            v[j] = b_stacked[j] / kv[j].max(cfg.underflow_floor);
        }
    }
    // Extract per-block costs.
    let mut out = Vec::with_capacity(costs.len());
    let mut row = 0;
    let mut col = 0;
    for (idx, c) in costs.iter().enumerate() {
        let blk = &kernel.blocks[idx];
        let mut acc = 0.0;
        for i in 0..blk.nrows() {
            for j in 0..blk.ncols() {
                acc += u[row + i] * blk[[i, j]] * v[col + j] * c.values()[[i, j]];
            }
        }
        row += blk.nrows();
        col += blk.ncols();
        out.push(if acc.is_finite() {
            Ok(acc)
        } else {
            Err(Error::numeric(format!("NaN in stacked block {idx}")))
        });
    }
    Ok(out)
}

/// Strategy tag for [`pairwise_matrix`].
pub enum PairwiseStrategy<'a> {
    /// Exact min-cost-flow per pair, Euclidean ground cost.
    Exact,
    /// Sinkhorn per pair, one kernel instantiation per pair.
    SinkhornOneByOne(SinkhornConfig),
    /// One stacked update sequence over all pairs.
    BdsSinkhorn(SinkhornConfig),
    /// Anchor-space marginals with the shared anchor cost, chunked through
    /// the matrix-form batched solver.
    EasotBatched {
        mapped: &'a [Array1<f64>],
        anchor_cost: &'a CostMatrix,
        cfg: SinkhornConfig,
        chunk: usize,
    },
}

/// Default pair chunk for the batched entropic strategy.
pub const DEFAULT_EASOT_CHUNK: usize = 1024;

/// Fills a symmetric distance matrix for the requested pairs. Failed pairs
/// stay unfilled in the mask.
pub fn pairwise_matrix(problems: &ProblemSet, strategy: &PairwiseStrategy) -> Result<DistanceMatrix> {
    let n = problems.distributions().len();
    let mut out = DistanceMatrix::unfilled(n);
    let dists = problems.distributions();
    match strategy {
        PairwiseStrategy::Exact => {
            let results: Vec<Option<f64>> = problems
                .pairs()
                .par_iter()
                .map(|&(i, j)| {
                    let c = euclidean_cost(dists[i].samples(), dists[j].samples()).ok()?;
                    let (_, cost) = solve_exact(dists[i].mass(), dists[j].mass(), &c).ok()?;
                    Some(cost)
                })
                .collect();
            for (&(i, j), r) in problems.pairs().iter().zip(results) {
                if let Some(cost) = r {
                    out.set_symmetric(i, j, cost);
                }
            }
        }
        PairwiseStrategy::SinkhornOneByOne(cfg) => {
            let results: Vec<Option<f64>> = problems
                .pairs()
                .par_iter()
                .map(|&(i, j)| {
                    let c = euclidean_cost(dists[i].samples(), dists[j].samples()).ok()?;
                    let res = sinkhorn(dists[i].mass(), dists[j].mass(), &c, cfg).ok()?;
                    Some(res.cost)
                })
                .collect();
            for (&(i, j), r) in problems.pairs().iter().zip(results) {
                if let Some(cost) = r {
                    out.set_symmetric(i, j, cost);
                }
            }
        }
        PairwiseStrategy::BdsSinkhorn(cfg) => {
            let results = bds_sinkhorn(
                problems,
                |x, y| euclidean_cost(x.samples(), y.samples()),
                cfg,
            )?;
            for (&(i, j), r) in problems.pairs().iter().zip(results) {
                if let Ok(cost) = r {
                    out.set_symmetric(i, j, cost);
                }
            }
        }
        PairwiseStrategy::EasotBatched {
            mapped,
            anchor_cost,
            cfg,
            chunk,
        } => {
            if mapped.len() != n {
                return Err(Error::invalid("mapped marginal count must match distributions"));
            }
            let chunk = (*chunk).max(1);
            for pairs_chunk in problems.pairs().chunks(chunk) {
                let cols_a: Vec<Array1<f64>> =
                    pairs_chunk.iter().map(|&(i, _)| mapped[i].clone()).collect();
                let cols_b: Vec<Array1<f64>> =
                    pairs_chunk.iter().map(|&(_, j)| mapped[j].clone()).collect();
                let marginals = BatchedMarginals::from_columns(&cols_a, &cols_b)?;
                let results = batched_sinkhorn_fixed(&marginals, anchor_cost, cfg)?;
                for (&(i, j), r) in pairs_chunk.iter().zip(results) {
                    if let Ok(cost) = r {
                        out.set_symmetric(i, j, cost);
                    }
                }
            }
        }
    }
    Ok(out)
}
