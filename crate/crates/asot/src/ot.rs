//! Single-pair optimal transport: ground costs, the exact min-cost-flow
//! solver used as ground truth, and the Sinkhorn solver.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Tolerance within which a mass vector is normalized onto the simplex
/// instead of being rejected.
pub const MASS_TOL: f64 = 1e-6;

/// A discrete distribution: one feature vector per row plus a probability
/// mass vector.
#[derive(Debug, Clone)]
pub struct DiscreteDistribution {
    samples: Array2<f64>,
    mass: Array1<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution, normalizing `mass` if its sum is within
    /// `MASS_TOL` of one. Larger deviations are rejected.
    pub fn new(samples: Array2<f64>, mass: Array1<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::invalid("distribution needs at least one sample"));
        }
        if samples.nrows() != mass.len() {
            return Err(Error::invalid(format!(
                "sample count {} does not match mass length {}",
                samples.nrows(),
                mass.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample entry"));
        }
        if mass.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("mass entries must be finite and nonnegative"));
        }
        let total: f64 = mass.sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!(
                "mass sums to {total}, outside the simplex tolerance"
            )));
        }
        let mass = mass / total;
        Ok(Self { samples, mass })
    }

    /// Uniform mass over the given samples.
    pub fn uniform(samples: Array2<f64>) -> Result<Self> {
        let n = samples.nrows();
        if n == 0 {
            return Err(Error::invalid("distribution needs at least one sample"));
        }
        let mass = Array1::from_elem(n, 1.0 / n as f64);
        Self::new(samples, mass)
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn mass(&self) -> &Array1<f64> {
        &self.mass
    }
}

/// Ground cost matrix of one transport problem.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("cost entries must be finite and nonnegative"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// A transport plan (coupling) between two distributions.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    values: Array2<f64>,
}

impl TransportPlan {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Checks the marginal invariants against the given mass vectors.
    pub fn check_marginals(&self, a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> bool {
        if self.values.nrows() != a.len() || self.values.ncols() != b.len() {
            return false;
        }
        if self.values.iter().any(|&v| v < -0.0 || !v.is_finite()) {
            return false;
        }
        for (i, &ai) in a.iter().enumerate() {
            let row: f64 = self.values.row(i).sum();
            if (row - ai).abs() > tol {
                return false;
            }
        }
        for (j, &bj) in b.iter().enumerate() {
            let col: f64 = self.values.column(j).sum();
            if (col - bj).abs() > tol {
                return false;
            }
        }
        true
    }
}

/// Sinkhorn solver parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub iterations: usize,
    pub underflow_floor: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            iterations: 50,
            underflow_floor: 1e-300,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.underflow_floor > 0.0) {
            return Err(Error::invalid("underflow_floor must be positive"));
        }
        Ok(())
    }
}

/// Result of one Sinkhorn run; `underflow_clamped` flags that a denominator
/// hit the configured floor at least once.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    pub cost: f64,
    pub underflow_clamped: bool,
}

/// Pairwise Euclidean distances between the rows of `x` and the rows of `y`.
pub fn euclidean_cost(x: &Array2<f64>, y: &Array2<f64>) -> Result<CostMatrix> {
    if x.ncols() != y.ncols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let (n, m) = (x.nrows(), y.nrows());
    let mut values = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..x.ncols() {
                let d = x[[i, t]] - y[[j, t]];
                acc += d * d;
            }
            values[[i, j]] = acc.sqrt();
        }
    }
    CostMatrix::new(values)
}

fn check_marginal_inputs(a: &Array1<f64>, b: &Array1<f64>, c: &CostMatrix) -> Result<(f64, f64)> {
    if a.len() != c.nrows() || b.len() != c.ncols() {
        return Err(Error::invalid(format!(
            "marginal lengths ({}, {}) do not match cost shape ({}, {})",
            a.len(),
            b.len(),
            c.nrows(),
            c.ncols()
        )));
    }
    if a.iter().chain(b.iter()).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("mass entries must be finite and nonnegative"));
    }
    let sa = a.sum();
    let sb = b.sum();
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::Infeasible(format!(
            "mass sums differ: {sa} vs {sb}"
        )));
    }
    Ok((sa, sb))
}

/// Exact OT by successive shortest augmenting paths with node potentials on
/// the complete bipartite network. Deterministic: sources are drained in
/// index order and path ties resolve to the lowest node index.
pub fn solve_exact(
    a: &Array1<f64>,
    b: &Array1<f64>,
    c: &CostMatrix,
) -> Result<(TransportPlan, f64)> {
    let (sa, sb) = check_marginal_inputs(a, b, c)?;
    let n = a.len();
    let m = b.len();
    // Align the total demand with the total supply so the flow terminates
    // cleanly under floating point.
    let scale = sa / sb;
    let mut supply: Vec<f64> = a.to_vec();
    let mut demand: Vec<f64> = b.iter().map(|&v| v * scale).collect();
    let cost = c.values();

    let mut flow = Array2::<f64>::zeros((n, m));
    // Node potentials (sources 0..n, sinks n..n+m) keep every residual
    // reduced cost nonnegative so plain Dijkstra applies.
    let mut pot = vec![0.0_f64; n + m];

    const DUST: f64 = 1e-15;
    // Each augmentation saturates a source, a sink, or a backward arc; the
    // backward-arc case drains no residual supply, so the linear bound on
    // saturations does not cap the round count. A quadratic cap covers the
    // degenerate paths that only reshuffle flow.
    let max_rounds = (n + m) * (n + m) + 4;
    for _ in 0..max_rounds {
        let Some(s) = supply.iter().position(|&v| v > DUST) else {
            break;
        };
        // Dijkstra over the residual network from source s. Nodes: sources
        // 0..n, sinks n..n+m. The bipartite graph is dense, so a simple
        // O(V^2) scan is fine and fully deterministic.
        let nv = n + m;
        let mut dist = vec![f64::INFINITY; nv];
        let mut prev = vec![usize::MAX; nv];
        let mut done = vec![false; nv];
        dist[s] = 0.0;
        for _ in 0..nv {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nv {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < n {
                // forward arcs i -> j
                let i = u;
                for j in 0..m {
                    let rc = cost[[i, j]] + pot[i] - pot[n + j];
                    let nd = dist[u] + rc.max(0.0);
                    if nd < dist[n + j] {
                        dist[n + j] = nd;
                        prev[n + j] = u;
                    }
                }
            } else {
                // backward arcs j -> i, available where flow > 0
                let j = u - n;
                for i in 0..n {
                    if flow[[i, j]] > 0.0 {
                        let rc = -cost[[i, j]] + pot[n + j] - pot[i];
                        let nd = dist[u] + rc.max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        // Nearest sink with residual demand; ties break to the lowest index.
        let mut sink = usize::MAX;
        let mut best = f64::INFINITY;
        for j in 0..m {
            if demand[j] > DUST && dist[n + j] < best {
                best = dist[n + j];
                sink = j;
            }
        }
        if sink == usize::MAX {
            return Err(Error::Infeasible(
                "no augmenting path to a sink with residual demand".into(),
            ));
        }
        // Bottleneck along the path.
        let mut bottleneck = supply[s].min(demand[sink]);
        let mut v = n + sink;
        while v != s {
            let u = prev[v];
            if u >= n {
                // backward arc (sink u-n) -> (source v)
                bottleneck = bottleneck.min(flow[[v, u - n]]);
            }
            v = u;
        }
        // Apply the augmentation.
        let mut v = n + sink;
        while v != s {
            let u = prev[v];
            if u < n {
                flow[[u, v - n]] += bottleneck;
            } else {
                flow[[v, u - n]] -= bottleneck;
                if flow[[v, u - n]] < DUST {
                    flow[[v, u - n]] = 0.0;
                }
            }
            v = u;
        }
        supply[s] -= bottleneck;
        demand[sink] -= bottleneck;
        if supply[s] < DUST {
            supply[s] = 0.0;
        }
        if demand[sink] < DUST {
            demand[sink] = 0.0;
        }
        // Update potentials, capping at the chosen sink's distance so reduced
        // costs stay nonnegative even for nodes beyond it.
        for (v, dv) in dist.iter().enumerate() {
            pot[v] += dv.min(best);
        }
    }
    if supply.iter().any(|&v| v > 10.0 * MASS_TOL) {
        return Err(Error::Infeasible("supply not exhausted".into()));
    }

    let total: f64 = flow
        .indexed_iter()
        .map(|((i, j), &t)| t * cost[[i, j]])
        .sum();
    Ok((TransportPlan { values: flow }, total))
}

/// Matrix-vector product written as explicit loops so that the batched
/// solvers can reuse the exact same floating-point schedule per column.
pub(crate) fn kernel_apply(k: &Array2<f64>, v: &[f64], out: &mut [f64]) {
    for i in 0..k.nrows() {
        let mut acc = 0.0;
        for j in 0..k.ncols() {
            acc += k[[i, j]] * v[j];
        }
        out[i] = acc;
    }
}

/// Transposed product, same schedule contract as [`kernel_apply`].
pub(crate) fn kernel_apply_t(k: &Array2<f64>, u: &[f64], out: &mut [f64]) {
    for j in 0..k.ncols() {
        let mut acc = 0.0;
        for i in 0..k.nrows() {
            acc += k[[i, j]] * u[i];
        }
        out[j] = acc;
    }
}

pub(crate) fn gibbs_kernel(c: &CostMatrix, epsilon: f64) -> Array2<f64> {
    c.values().mapv(|v| (-v / epsilon).exp())
}

/// One full scaling-iteration state over a fixed kernel. Shared by the
/// single-pair solver and both batched schedules.
pub(crate) struct SinkhornState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub clamped: bool,
    scratch_n: Vec<f64>,
    scratch_m: Vec<f64>,
}

impl SinkhornState {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            u: vec![1.0; n],
            v: vec![1.0; m],
            clamped: false,
            scratch_n: vec![0.0; n],
            scratch_m: vec![0.0; m],
        }
    }

    pub fn update_u(&mut self, k: &Array2<f64>, a: &[f64], floor: f64) {
        kernel_apply(k, &self.v, &mut self.scratch_n);
        for i in 0..a.len() {
            let mut d = self.scratch_n[i];
            if d < floor {
                d = floor;
                self.clamped = true;
            }
            self.u[i] = a[i] / d;
        }
    }

    pub fn update_v(&mut self, k: &Array2<f64>, b: &[f64], floor: f64) {
        kernel_apply_t(k, &self.u, &mut self.scratch_m);
        for j in 0..b.len() {
            let mut d = self.scratch_m[j];
            if d < floor {
                d = floor;
                self.clamped = true;
            }
            self.v[j] = b[j] / d;
        }
    }

    /// Linear transport cost `<diag(u) K diag(v), C>` without materializing
    /// the plan.
    pub fn cost(&self, k: &Array2<f64>, c: &Array2<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                acc += self.u[i] * k[[i, j]] * self.v[j] * c[[i, j]];
            }
        }
        acc
    }
}

/// Entropic OT via Sinkhorn's fixed-point iterations. The reported cost is
/// the linear part `<T, C>` of the objective.
pub fn sinkhorn(
    a: &Array1<f64>,
    b: &Array1<f64>,
    c: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    check_marginal_inputs(a, b, c)?;
    let k = gibbs_kernel(c, cfg.epsilon);
    let a = a.as_slice().expect("contiguous");
    let b = b.as_slice().expect("contiguous");
    let mut state = SinkhornState::new(a.len(), b.len());
    for _ in 0..cfg.iterations {
        state.update_u(&k, a, cfg.underflow_floor);
        state.update_v(&k, b, cfg.underflow_floor);
    }
    let mut plan = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            plan[[i, j]] = state.u[i] * k[[i, j]] * state.v[j];
        }
    }
    let cost = state.cost(&k, c.values());
    if !cost.is_finite() || plan.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("NaN or infinity in Sinkhorn iterate"));
    }
    Ok(SinkhornResult {
        plan: TransportPlan { values: plan },
        cost,
        underflow_clamped: state.clamped,
    })
}
