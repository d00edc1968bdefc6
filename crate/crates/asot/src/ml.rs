//! ASOT-ML: learn anchors `W`, a Mahalanobis transform `M`, and a simplex
//! mapping network by regressing the predicted anchor-space cost
//! `f(x, y) = z_xᵀ C_s z_y` onto the true ground cost.

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::anchor::{anchor_cost, AnchorMetric, AnchorSpace, Encoding};
use crate::error::{Error, Result};
use crate::kmeans::{fit_kmeans, KmeansConfig};
use crate::nn::{AdamState, Mlp};
use crate::ot::euclidean_cost;

/// Rows whose pre-normalization l1 mass falls below this are replaced by
/// the uniform simplex row (and carry no gradient).
const FALLBACK_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MlModel {
    mapper: Mlp,
    anchors: Array2<f64>,
    m: Array2<f64>,
    c_weight: f64,
}

#[derive(Debug, Clone)]
pub struct MlTrainConfig {
    pub epochs: usize,
    pub batch_graphs: usize,
    pub pair_subsample: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub k: usize,
}

impl Default for MlTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_graphs: 500,
            pair_subsample: 512,
            seed: 0,
            learning_rate: 0.01,
            k: 8,
        }
    }
}

impl MlModel {
    /// Fresh model: mapper `(feat, 2*feat, k)` (the paper's `(5d, 10d, k)`
    /// widths expressed in terms of the preprocessed feature dimension),
    /// anchors zero until initialized, `M` the identity, `C = 100`.
    pub fn new(feat_dim: usize, k: usize, seed: u64) -> Result<Self> {
        if feat_dim == 0 || k == 0 {
            return Err(Error::invalid("feature dim and k must be positive"));
        }
        Ok(Self {
            mapper: Mlp::new(&[feat_dim, 2 * feat_dim, k], seed)?,
            anchors: Array2::zeros((k, feat_dim)),
            m: Array2::eye(feat_dim),
            c_weight: 100.0,
        })
    }

    pub fn k(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn c_weight(&self) -> f64 {
        self.c_weight
    }

    pub fn set_anchors(&mut self, anchors: Array2<f64>) -> Result<()> {
        if anchors.dim() != self.anchors.dim() {
            return Err(Error::invalid("anchor shape mismatch"));
        }
        self.anchors = anchors;
        Ok(())
    }

    /// The learned anchor space (Mahalanobis metric).
    pub fn anchor_space(&self) -> Result<AnchorSpace> {
        AnchorSpace::new(self.anchors.clone(), AnchorMetric::Mahalanobis(self.m.clone()))
    }

    pub fn num_params(&self) -> usize {
        self.mapper.num_params() + self.anchors.len() + self.m.len()
    }

    /// Flat parameters: mapper, then anchors row-major, then `M` row-major.
    pub fn params(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.mapper.params().iter().copied());
        out.extend(self.anchors.iter().copied());
        out.extend(self.m.iter().copied());
        Array1::from_vec(out)
    }

    pub fn set_params(&mut self, flat: &Array1<f64>) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid("parameter vector length mismatch"));
        }
        let np = self.mapper.num_params();
        self.mapper.set_params(flat.slice(ndarray::s![..np]))?;
        let mut offset = np;
        for v in self.anchors.iter_mut() {
            *v = flat[offset];
            offset += 1;
        }
        for v in self.m.iter_mut() {
            *v = flat[offset];
            offset += 1;
        }
        Ok(())
    }

    /// Maps samples onto the anchor simplex: mapper output, absolute value,
    /// l1 normalization. Returns the encoding and per-row fallback flags
    /// (true where an all-zero row was replaced by the uniform row).
    pub fn encode(&self, x: &Array2<f64>) -> Result<(Encoding, Vec<bool>)> {
        let raw = self.mapper.forward(x)?;
        let k = self.k();
        let mut z = Array2::zeros((x.nrows(), k));
        let mut flags = vec![false; x.nrows()];
        for (i, row) in raw.rows().into_iter().enumerate() {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            if s < FALLBACK_EPS {
                flags[i] = true;
                z.row_mut(i).fill(1.0 / k as f64);
            } else {
                for (t, &v) in row.iter().enumerate() {
                    z[[i, t]] = v.abs() / s;
                }
            }
        }
        Ok((Encoding::new(z)?, flags))
    }

    /// Predicted anchor-space cost `ziᵀ C_s zj` for two simplex rows.
    pub fn predicted_cost(&self, zi: ArrayView1<f64>, zj: ArrayView1<f64>) -> Result<f64> {
        let c_s = anchor_cost(&self.anchor_space()?)?;
        if zi.len() != self.k() || zj.len() != self.k() {
            return Err(Error::invalid("encoding row length mismatch"));
        }
        let mut acc = 0.0;
        for u in 0..self.k() {
            if zi[u] == 0.0 {
                continue;
            }
            for v in 0..self.k() {
                acc += zi[u] * zj[v] * c_s.values()[[u, v]];
            }
        }
        Ok(acc)
    }

    /// Squared-error regression loss `(C/|S|)·Σ (f(i,j) − C_true(i,j))²`
    /// over the given sample-pair subset (all pairs when `pairs` is `None`).
    pub fn loss(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        c_true: &Array2<f64>,
        pairs: Option<&[(usize, usize)]>,
    ) -> Result<f64> {
        Ok(self.loss_and_grad_impl(x, y, c_true, pairs, false)?.0)
    }

    /// Loss plus the analytic gradient in [`MlModel::params`] order.
    pub fn loss_and_grad(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        c_true: &Array2<f64>,
        pairs: Option<&[(usize, usize)]>,
    ) -> Result<(f64, Array1<f64>)> {
        let (loss, grad) = self.loss_and_grad_impl(x, y, c_true, pairs, true)?;
        Ok((loss, grad.unwrap()))
    }

    fn loss_and_grad_impl(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        c_true: &Array2<f64>,
        pairs: Option<&[(usize, usize)]>,
        want_grad: bool,
    ) -> Result<(f64, Option<Array1<f64>>)> {
        let (n, m) = (x.nrows(), y.nrows());
        if c_true.dim() != (n, m) {
            return Err(Error::invalid("ground-cost shape mismatch"));
        }
        let all_pairs: Vec<(usize, usize)>;
        let pair_list: &[(usize, usize)] = match pairs {
            Some(p) => {
                if p.iter().any(|&(i, j)| i >= n || j >= m) {
                    return Err(Error::invalid("sample-pair index out of range"));
                }
                p
            }
            None => {
                all_pairs = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
                &all_pairs
            }
        };
        if pair_list.is_empty() {
            return Err(Error::invalid("empty sample-pair list"));
        }
        let k = self.k();
        let (cache_x, raw_x) = self.mapper.forward_cached(x)?;
        let (cache_y, raw_y) = self.mapper.forward_cached(y)?;
        let (zx, flags_x) = normalize_rows(&raw_x);
        let (zy, flags_y) = normalize_rows(&raw_y);
        let space = self.anchor_space()?;
        let c_s = anchor_cost(&space)?;
        let cs = c_s.values();

        let scale = self.c_weight / pair_list.len() as f64;
        // f for each selected pair via zx_i · (C_s zy_j)
        let csy = zy.dot(&cs.t()); // m x k, row j = C_s z_j (C_s symmetric)
        let mut loss = 0.0;
        let mut g = Vec::with_capacity(pair_list.len());
        for &(i, j) in pair_list {
            let f: f64 = zx.row(i).dot(&csy.row(j));
            let r = f - c_true[[i, j]];
            loss += scale * r * r;
            g.push(2.0 * scale * r);
        }
        if !want_grad {
            return Ok((loss, None));
        }

        // dL/dC_s and dL/dz rows
        let mut gs = Array2::<f64>::zeros((k, k));
        let mut dzx = Array2::<f64>::zeros((n, k));
        let mut dzy = Array2::<f64>::zeros((m, k));
        for (t, &(i, j)) in pair_list.iter().enumerate() {
            let gij = g[t];
            for u in 0..k {
                let ziu = zx[[i, u]];
                if ziu != 0.0 {
                    for v in 0..k {
                        gs[[u, v]] += gij * ziu * zy[[j, v]];
                    }
                }
            }
            let mut row = dzx.row_mut(i);
            row.scaled_add(gij, &csy.row(j));
            // dL/dzy_j = gij * C_sᵀ zx_i = gij * C_s zx_i
            let csx_i = cs.dot(&zx.row(i));
            let mut row = dzy.row_mut(j);
            row.scaled_add(gij, &csx_i);
        }

        // dC_s -> anchors and M. C_s(u,v) = ||M (w_u - w_v)||; diagonal is
        // identically zero and contributes nothing.
        let mut d_anchors = Array2::<f64>::zeros(self.anchors.dim());
        let mut d_m = Array2::<f64>::zeros(self.m.dim());
        for u in 0..k {
            for v in u + 1..k {
                let coeff = gs[[u, v]] + gs[[v, u]];
                let dist = cs[[u, v]];
                if coeff == 0.0 || dist < 1e-12 {
                    continue;
                }
                let delta = &self.anchors.row(u) - &self.anchors.row(v);
                let e = self.m.dot(&delta); // h
                // dC/dM = e deltaᵀ / dist ; dC/dw_u = Mᵀ e / dist
                let mt_e = self.m.t().dot(&e);
                let s = coeff / dist;
                for r in 0..self.m.nrows() {
                    for t in 0..self.m.ncols() {
                        d_m[[r, t]] += s * e[r] * delta[t];
                    }
                }
                let mut row = d_anchors.row_mut(u);
                row.scaled_add(s, &mt_e);
                let mut row = d_anchors.row_mut(v);
                row.scaled_add(-s, &mt_e);
            }
        }

        // dz -> mapper raw outputs through abs + l1 normalization
        let draw_x = normalize_backward(&raw_x, &zx, &flags_x, &dzx);
        let draw_y = normalize_backward(&raw_y, &zy, &flags_y, &dzy);
        let (gx, _) = self.mapper.backward(&cache_x, &draw_x)?;
        let (gy, _) = self.mapper.backward(&cache_y, &draw_y)?;
        let mapper_grad = &gx + &gy;

        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend(mapper_grad.iter().copied());
        flat.extend(d_anchors.iter().copied());
        flat.extend(d_m.iter().copied());
        Ok((loss, Some(Array1::from_vec(flat))))
    }
}

/// abs + l1 row normalization shared by forward and backward paths.
fn normalize_rows(raw: &Array2<f64>) -> (Array2<f64>, Vec<bool>) {
    let k = raw.ncols();
    let mut z = Array2::zeros(raw.dim());
    let mut flags = vec![false; raw.nrows()];
    for (i, row) in raw.rows().into_iter().enumerate() {
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s < FALLBACK_EPS {
            flags[i] = true;
            z.row_mut(i).fill(1.0 / k as f64);
        } else {
            for (t, &v) in row.iter().enumerate() {
                z[[i, t]] = v.abs() / s;
            }
        }
    }
    (z, flags)
}

/// Backward through `z = |a| / ||a||_1`: for non-fallback rows,
/// `dL/da_t = sign(a_t)·(dL/dz_t − dL/dz·z) / s`. Fallback rows are
/// constants and carry zero gradient.
fn normalize_backward(
    raw: &Array2<f64>,
    z: &Array2<f64>,
    flags: &[bool],
    dz: &Array2<f64>,
) -> Array2<f64> {
    let mut out = Array2::zeros(raw.dim());
    for i in 0..raw.nrows() {
        if flags[i] {
            continue;
        }
        let s: f64 = raw.row(i).iter().map(|v| v.abs()).sum();
        let dot: f64 = dz.row(i).dot(&z.row(i));
        for t in 0..raw.ncols() {
            let sign = if raw[[i, t]] > 0.0 {
                1.0
            } else if raw[[i, t]] < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[[i, t]] = sign * (dz[[i, t]] - dot) / s;
        }
    }
    out
}

/// Trains ASOT-ML on a set of per-graph feature matrices. Returns the
/// model, its anchor space, and the per-epoch loss trace.
pub fn train_ml(
    graphs: &[Array2<f64>],
    cfg: &MlTrainConfig,
) -> Result<(MlModel, AnchorSpace, Vec<f64>)> {
    if graphs.is_empty() {
        return Err(Error::invalid("training needs at least one graph"));
    }
    if cfg.k == 0 || cfg.batch_graphs == 0 || cfg.pair_subsample == 0 {
        return Err(Error::invalid("k, batch size, and pair budget must be positive"));
    }
    let feat_dim = graphs[0].ncols();
    if graphs.iter().any(|g| g.ncols() != feat_dim || g.nrows() == 0) {
        return Err(Error::invalid("graphs must be nonempty with one feature dim"));
    }
    let mut model = MlModel::new(feat_dim, cfg.k, cfg.seed)?;
    // Anchor initialization from a cheap k-means fit over pooled samples.
    let total: usize = graphs.iter().map(|g| g.nrows()).sum();
    let mut pooled = Array2::zeros((total, feat_dim));
    let mut row = 0;
    for g in graphs {
        pooled
            .slice_mut(ndarray::s![row..row + g.nrows(), ..])
            .assign(g);
        row += g.nrows();
    }
    let km = fit_kmeans(
        &pooled,
        &KmeansConfig {
            k: cfg.k,
            seed: cfg.seed,
            max_iters: 50,
            ..KmeansConfig::default()
        },
    )?;
    model.set_anchors(km.anchors().clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(model.num_params(), cfg.learning_rate);
    let mut params = model.params();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_graphs.max(2)) {
            if chunk.len() < 2 {
                continue;
            }
            let mut grad = Array1::zeros(model.num_params());
            let mut batch_loss = 0.0;
            let mut pairs_in_batch = 0usize;
            for duo in chunk.chunks(2) {
                if duo.len() < 2 {
                    continue;
                }
                let (gx, gy) = (&graphs[duo[0]], &graphs[duo[1]]);
                let c_true = euclidean_cost(gx, gy)?;
                let (n, m) = (gx.nrows(), gy.nrows());
                let subset: Option<Vec<(usize, usize)>> = if n * m > cfg.pair_subsample {
                    Some(
                        (0..cfg.pair_subsample)
                            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..m)))
                            .collect(),
                    )
                } else {
                    None
                };
                let (l, g) =
                    model.loss_and_grad(gx, gy, c_true.values(), subset.as_deref())?;
                batch_loss += l;
                grad += &g;
                pairs_in_batch += 1;
            }
            if pairs_in_batch == 0 {
                continue;
            }
            grad.mapv_inplace(|v| v / pairs_in_batch as f64);
            adam.step(params.view_mut(), &grad)?;
            model.set_params(&params)?;
            epoch_loss += batch_loss / pairs_in_batch as f64;
            batches += 1;
        }
        trace.push(if batches > 0 { epoch_loss / batches as f64 } else { 0.0 });
    }
    let space = model.anchor_space()?;
    Ok((model, space, trace))
}
