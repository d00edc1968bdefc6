//! ASOT-k anchor learning: mini-batch k-means over pooled samples with a
//! full-batch Lloyd refinement phase, plus the one-hot nearest-anchor
//! encoder used downstream for the one-hot error bound.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::anchor::{AnchorMetric, AnchorSpace, Encoding};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KmeansConfig {
    pub k: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            k: 8,
            batch_size: 1024,
            max_iters: 300,
            seed: 0,
            tol: 1e-6,
        }
    }
}

impl KmeansConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.tol < 0.0 || !self.tol.is_finite() {
            return Err(Error::invalid("tolerance must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for t in 0..a.len() {
        let d = a[t] - b[t];
        acc += d * d;
    }
    acc
}

/// Index of the nearest center and the squared distance to it. Ties break
/// toward the lowest index.
fn nearest(x: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Total within-cluster squared error of `samples` against `centers`.
pub fn inertia(samples: ArrayView2<f64>, centers: &Array2<f64>) -> f64 {
    samples.rows().into_iter().map(|x| nearest(x, centers).1).sum()
}

/// k-means++ seeding, optionally conditioned on a set of already-fixed
/// centers (used by the nested-k fit). Returns `extra` new centers.
fn kmeanspp_extend(
    samples: ArrayView2<f64>,
    existing: &[Array1<f64>],
    extra: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Array1<f64>> {
    let s = samples.nrows();
    let mut centers: Vec<Array1<f64>> = Vec::with_capacity(extra);
    let mut d2: Vec<f64> = if existing.is_empty() {
        vec![f64::INFINITY; s]
    } else {
        samples
            .rows()
            .into_iter()
            .map(|x| {
                existing
                    .iter()
                    .map(|c| sq_dist(x, c.view()))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    for pick in 0..extra {
        let idx = if centers.is_empty() && existing.is_empty() {
            rng.gen_range(0..s)
        } else {
            let total: f64 = d2.iter().sum();
            if total <= 0.0 {
                // All samples covered exactly; fall back to round-robin
                // duplication with a tiny deterministic jitter.
                let base = samples.row(pick % s).to_owned();
                let jitter = 1e-9 * (pick as f64 + 1.0);
                centers.push(base.mapv(|v| v + jitter));
                continue;
            }
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = s - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = samples.row(idx).to_owned();
        for (i, x) in samples.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, c.view()));
        }
        centers.push(c);
    }
    centers
}

/// Mini-batch update phase (per-center decaying learning rates).
fn minibatch_phase(
    samples: ArrayView2<f64>,
    centers: &mut Array2<f64>,
    cfg: &KmeansConfig,
    rng: &mut ChaCha8Rng,
) {
    let s = samples.nrows();
    let mut counts = vec![0u64; centers.nrows()];
    for _ in 0..cfg.max_iters {
        for _ in 0..cfg.batch_size.min(s) {
            let i = rng.gen_range(0..s);
            let x = samples.row(i);
            let (c, _) = nearest(x, centers);
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            let mut row = centers.row_mut(c);
            for t in 0..row.len() {
                row[t] += eta * (x[t] - row[t]);
            }
        }
    }
}

/// Full-batch Lloyd passes; returns the per-pass inertia trace (evaluated
/// before each update), which is non-increasing.
fn lloyd_refine(
    samples: ArrayView2<f64>,
    centers: &mut Array2<f64>,
    max_passes: usize,
    tol: f64,
) -> Vec<f64> {
    let s = samples.nrows();
    let k = centers.nrows();
    let d = centers.ncols();
    let mut trace = Vec::new();
    for _ in 0..max_passes {
        let mut assign = vec![0usize; s];
        let mut resid = vec![0.0f64; s];
        let mut total = 0.0;
        for (i, x) in samples.rows().into_iter().enumerate() {
            let (c, d2) = nearest(x, centers);
            assign[i] = c;
            resid[i] = d2;
            total += d2;
        }
        trace.push(total);
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, x) in samples.rows().into_iter().enumerate() {
            let c = assign[i];
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &x;
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // Empty cluster: relocate to the sample with the largest
                // current residual.
                let worst = resid
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let target = samples.row(worst).to_owned();
                moved = moved.max(sq_dist(centers.row(c), target.view()).sqrt());
                centers.row_mut(c).assign(&target);
                resid[worst] = 0.0;
            } else {
                let new = sums.row(c).mapv(|v| v / counts[c] as f64);
                moved = moved.max(sq_dist(centers.row(c), new.view()).sqrt());
                centers.row_mut(c).assign(&new);
            }
        }
        if moved <= tol {
            break;
        }
    }
    trace
}

/// Fits `cfg.k` Euclidean anchors to the pooled samples: k-means++ seeding,
/// a mini-batch phase, then full-batch Lloyd refinement (so the
/// within-cluster error is non-increasing across full passes).
pub fn fit_kmeans(samples: &Array2<f64>, cfg: &KmeansConfig) -> Result<AnchorSpace> {
    cfg.validate()?;
    if samples.nrows() == 0 {
        return Err(Error::invalid("k-means needs at least one sample"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = kmeanspp_extend(samples.view(), &[], cfg.k, &mut rng);
    let mut centers = Array2::zeros((cfg.k, samples.ncols()));
    for (c, seed) in seeds.iter().enumerate() {
        centers.row_mut(c).assign(seed);
    }
    minibatch_phase(samples.view(), &mut centers, cfg, &mut rng);
    lloyd_refine(samples.view(), &mut centers, cfg.max_iters, cfg.tol);
    AnchorSpace::new(centers, AnchorMetric::Euclidean)
}

/// Nested-initialization fit across an ascending list of `k` values: each
/// larger anchor set is a strict superset of the previous one (old anchors
/// are frozen; only new anchors are seeded and refined), so per-sample
/// nearest-anchor residuals are monotonically non-increasing in `k`.
pub fn fit_kmeans_nested(
    samples: &Array2<f64>,
    ks: &[usize],
    cfg: &KmeansConfig,
) -> Result<Vec<AnchorSpace>> {
    cfg.validate()?;
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
        return Err(Error::invalid("k list must be nonempty, positive, strictly ascending"));
    }
    if samples.nrows() == 0 {
        return Err(Error::invalid("k-means needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fixed: Vec<Array1<f64>> = Vec::new();
    let mut spaces = Vec::with_capacity(ks.len());
    for &k in ks {
        let extra = k - fixed.len();
        let mut new = kmeanspp_extend(samples.view(), &fixed, extra, &mut rng);
        // Refine only the new anchors: assign every sample to its nearest
        // anchor over the union, then move each new anchor to the mean of
        // its assigned samples.
        for _ in 0..5 {
            let mut all = Array2::zeros((k, samples.ncols()));
            for (i, c) in fixed.iter().chain(new.iter()).enumerate() {
                all.row_mut(i).assign(c);
            }
            let mut sums = Array2::<f64>::zeros((extra, samples.ncols()));
            let mut counts = vec![0usize; extra];
            for x in samples.rows() {
                let (c, _) = nearest(x, &all);
                if c >= fixed.len() {
                    let j = c - fixed.len();
                    counts[j] += 1;
                    let mut row = sums.row_mut(j);
                    row += &x;
                }
            }
            for j in 0..extra {
                if counts[j] > 0 {
                    new[j] = sums.row(j).mapv(|v| v / counts[j] as f64);
                }
            }
        }
        fixed.extend(new);
        let mut centers = Array2::zeros((k, samples.ncols()));
        for (i, c) in fixed.iter().enumerate() {
            centers.row_mut(i).assign(c);
        }
        spaces.push(AnchorSpace::new(centers, AnchorMetric::Euclidean)?);
    }
    Ok(spaces)
}

/// Index of the nearest anchor under the Euclidean metric; ties break to
/// the lowest index.
pub fn nearest_anchor(x: ArrayView1<f64>, space: &AnchorSpace) -> Result<(usize, f64)> {
    match space.metric() {
        AnchorMetric::Euclidean => {}
        _ => return Err(Error::invalid("one-hot encoding requires a Euclidean anchor metric")),
    }
    if x.len() != space.dim() {
        return Err(Error::invalid("sample dimension does not match anchors"));
    }
    let (idx, d2) = nearest(x, space.anchors());
    Ok((idx, d2.sqrt()))
}

/// One-hot nearest-anchor encoding of a whole sample matrix, together with
/// the per-sample residual norms `||x - w_assigned||` used by the one-hot
/// error bound.
pub fn encode_onehot(samples: ArrayView2<f64>, space: &AnchorSpace) -> Result<(Encoding, Vec<f64>)> {
    let mut indices = Vec::with_capacity(samples.nrows());
    let mut residuals = Vec::with_capacity(samples.nrows());
    for x in samples.rows() {
        let (idx, r) = nearest_anchor(x, space)?;
        indices.push(idx);
        residuals.push(r);
    }
    Ok((Encoding::one_hot(&indices, space.k())?, residuals))
}
