//! ASOT-DL: unrolled projected-gradient near-one-hot encoder with a learned
//! dictionary `W` (columns = anchors) and a per-input shrinkage threshold
//! `λ` from a small network, trained on reconstruction + norm-ball +
//! simplex-violation losses with backprop through all unrolled layers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::anchor::{AnchorMetric, AnchorSpace, Encoding};
use crate::error::{Error, Result};
use crate::kmeans::{fit_kmeans, KmeansConfig};
use crate::nn::{softplus, softplus_prime, AdamState, Mlp};

/// Rows whose post-encoding l1 mass falls below this become uniform rows.
const FALLBACK_EPS: f64 = 1e-12;

/// Elementwise shrinkage `max(0, a - theta)`: the projection step of one
/// proximal gradient iteration toward the simplex.
pub fn simplex_project(a: ArrayView1<f64>, theta: f64) -> Array1<f64> {
    a.mapv(|v| (v - theta).max(0.0))
}

/// One near-one-hot layer: `z ← S_λ(z − Wᵀ(Wz − x))` with unit step size.
pub fn near_onehot_layer(
    z: ArrayView1<f64>,
    x: ArrayView1<f64>,
    w: ArrayView2<f64>,
    lambda: f64,
) -> Result<Array1<f64>> {
    if w.nrows() != x.len() || w.ncols() != z.len() {
        return Err(Error::invalid(format!(
            "dictionary is {}x{}, x has {}, z has {}",
            w.nrows(),
            w.ncols(),
            x.len(),
            z.len()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let r = w.dot(&z) - x;
    let g = &z - &w.t().dot(&r);
    Ok(simplex_project(g.view(), lambda))
}

#[derive(Debug, Clone)]
pub struct DlModel {
    /// `d × k`; columns are the anchors.
    dictionary: Array2<f64>,
    lambda_net: Mlp,
    layers: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct DlTrainConfig {
    pub epochs: usize,
    pub batch_graphs: usize,
    pub sample_subsample: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub k: usize,
    pub layers: usize,
}

impl Default for DlTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_graphs: 500,
            sample_subsample: 4096,
            seed: 0,
            learning_rate: 0.01,
            k: 8,
            layers: 20,
        }
    }
}

/// Per-sample intermediates of the unrolled forward pass.
struct EncodeTrace {
    /// z after each layer; `zs[0]` is the all-zero start.
    zs: Vec<Array1<f64>>,
    lambda: f64,
    /// raw (pre-softplus) lambda-net output
    raw_lambda: f64,
}

impl DlModel {
    /// Fresh model: lambda net `(feat, ⌈feat/2⌉, 1)` (the paper's
    /// `(5d, 2.5d, 1)` widths in terms of the preprocessed feature
    /// dimension), dictionary zero until initialized.
    pub fn new(feat_dim: usize, k: usize, layers: usize, seed: u64) -> Result<Self> {
        if feat_dim == 0 || k == 0 || layers == 0 {
            return Err(Error::invalid("feature dim, k, and layer count must be positive"));
        }
        let hidden = feat_dim.div_ceil(2);
        let mut lambda_net = Mlp::new(&[feat_dim, hidden, 1], seed)?;
        // Start with a small threshold (softplus(-3) ~ 0.049) so the early
        // unrolled iterations are not shrunk to zero.
        let mut p = lambda_net.params();
        let last = p.len() - 1;
        p[last] = -3.0;
        lambda_net.set_params(p.view())?;
        Ok(Self {
            dictionary: Array2::zeros((feat_dim, k)),
            lambda_net,
            layers,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        })
    }

    pub fn k(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn feat_dim(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dictionary(&self) -> &Array2<f64> {
        &self.dictionary
    }

    pub fn set_dictionary(&mut self, w: Array2<f64>) -> Result<()> {
        if w.dim() != self.dictionary.dim() {
            return Err(Error::invalid("dictionary shape mismatch"));
        }
        self.dictionary = w;
        Ok(())
    }

    /// Anchors are the dictionary columns; the shared metric is Euclidean.
    pub fn anchor_space(&self) -> Result<AnchorSpace> {
        AnchorSpace::new(self.dictionary.t().to_owned(), AnchorMetric::Euclidean)
    }

    pub fn num_params(&self) -> usize {
        self.dictionary.len() + self.lambda_net.num_params()
    }

    /// Flat parameters: dictionary row-major, then lambda-net parameters.
    pub fn params(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.dictionary.iter().copied());
        out.extend(self.lambda_net.params().iter().copied());
        Array1::from_vec(out)
    }

    pub fn set_params(&mut self, flat: &Array1<f64>) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid("parameter vector length mismatch"));
        }
        let nd = self.dictionary.len();
        for (t, v) in self.dictionary.iter_mut().enumerate() {
            *v = flat[t];
        }
        self.lambda_net.set_params(flat.slice(ndarray::s![nd..]))?;
        Ok(())
    }

    /// The per-input shrinkage threshold: lambda net through softplus.
    pub fn lambda(&self, x: ArrayView1<f64>) -> Result<f64> {
        let batch = x.insert_axis(ndarray::Axis(0)).to_owned();
        let out = self.lambda_net.forward(&batch)?;
        Ok(softplus(out[[0, 0]]))
    }

    fn unroll(&self, x: ArrayView1<f64>) -> Result<EncodeTrace> {
        let batch = x.insert_axis(ndarray::Axis(0)).to_owned();
        let raw_lambda = self.lambda_net.forward(&batch)?[[0, 0]];
        let lambda = softplus(raw_lambda);
        let mut zs = Vec::with_capacity(self.layers + 1);
        zs.push(Array1::zeros(self.k()));
        for _ in 0..self.layers {
            let next = near_onehot_layer(
                zs.last().unwrap().view(),
                x,
                self.dictionary.view(),
                lambda,
            )?;
            zs.push(next);
        }
        Ok(EncodeTrace {
            zs,
            lambda,
            raw_lambda,
        })
    }

    /// The raw near-one-hot code after `L` layers, before renormalization
    /// (what the training losses see).
    pub fn encode_raw(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut trace = self.unroll(x)?;
        Ok(trace.zs.pop().expect("unroll produces at least the initial state"))
    }

    /// Inference encoding: unrolled code renormalized onto the simplex.
    /// Returns the simplex row and a flag marking the all-zero fallback.
    pub fn encode(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, bool)> {
        let z = self.encode_raw(x)?;
        let s: f64 = z.sum();
        if s < FALLBACK_EPS {
            let k = self.k();
            Ok((Array1::from_elem(k, 1.0 / k as f64), true))
        } else {
            Ok((z.mapv(|v| v / s), false))
        }
    }

    /// Encodes a whole sample matrix into an [`Encoding`] plus fallback
    /// flags.
    pub fn encode_batch(&self, x: &Array2<f64>) -> Result<(Encoding, Vec<bool>)> {
        let mut z = Array2::zeros((x.nrows(), self.k()));
        let mut flags = vec![false; x.nrows()];
        for (i, row) in x.rows().into_iter().enumerate() {
            let (zi, flag) = self.encode(row)?;
            z.row_mut(i).assign(&zi);
            flags[i] = flag;
        }
        Ok((Encoding::new(z)?, flags))
    }

    /// The three training losses over explicit codes:
    /// `l_rc = (1/2n)Σ‖Wzᵢ−xᵢ‖²`, `l_lp = (1/n)Σ(‖zᵢ‖₂−1)²`,
    /// `l_sp = (1/n)Σ(zᵢ·1−1)²`, `total = α·l_rc + β·l_lp + γ·l_sp`.
    pub fn losses(&self, x: &Array2<f64>, z: &Array2<f64>) -> Result<(f64, f64, f64, f64)> {
        let n = x.nrows();
        if z.nrows() != n || z.ncols() != self.k() || x.ncols() != self.feat_dim() {
            return Err(Error::invalid("loss batch shape mismatch"));
        }
        if n == 0 {
            return Err(Error::invalid("empty loss batch"));
        }
        let nf = n as f64;
        let mut l_rc = 0.0;
        let mut l_lp = 0.0;
        let mut l_sp = 0.0;
        for i in 0..n {
            let zi = z.row(i);
            let r = self.dictionary.dot(&zi) - &x.row(i);
            l_rc += r.mapv(|v| v * v).sum() / (2.0 * nf);
            let norm = zi.mapv(|v| v * v).sum().sqrt();
            l_lp += (norm - 1.0).powi(2) / nf;
            l_sp += (zi.sum() - 1.0).powi(2) / nf;
        }
        let total = self.alpha * l_rc + self.beta * l_lp + self.gamma * l_sp;
        Ok((total, l_rc, l_lp, l_sp))
    }

    /// Total training loss of a batch with codes produced by the unrolled
    /// encoder (no final renormalization), and its analytic gradient in
    /// [`DlModel::params`] order.
    pub fn train_loss_and_grad(&self, x: &Array2<f64>) -> Result<(f64, Array1<f64>)> {
        let (loss, grad) = self.train_loss_impl(x, true)?;
        Ok((loss, grad.unwrap()))
    }

    /// Total training loss only (used by the finite-difference oracle).
    pub fn train_loss(&self, x: &Array2<f64>) -> Result<f64> {
        Ok(self.train_loss_impl(x, false)?.0)
    }

    fn train_loss_impl(&self, x: &Array2<f64>, want_grad: bool) -> Result<(f64, Option<Array1<f64>>)> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::invalid("empty training batch"));
        }
        if x.ncols() != self.feat_dim() {
            return Err(Error::invalid("feature dim mismatch"));
        }
        let nf = n as f64;
        let k = self.k();
        let d = self.feat_dim();
        let w = &self.dictionary;

        let mut total = 0.0;
        let mut d_w = Array2::<f64>::zeros((d, k));
        let mut d_raw_lambda = Array2::<f64>::zeros((n, 1));
        let mut traces = Vec::with_capacity(n);
        for i in 0..n {
            let trace = self.unroll(x.row(i))?;
            let z = trace.zs.last().unwrap();
            let r = w.dot(z) - &x.row(i);
            let norm = z.mapv(|v| v * v).sum().sqrt();
            let sum = z.sum();
            total += self.alpha * r.mapv(|v| v * v).sum() / (2.0 * nf)
                + self.beta * (norm - 1.0).powi(2) / nf
                + self.gamma * (sum - 1.0).powi(2) / nf;
            traces.push(trace);
        }
        if !want_grad {
            return Ok((total, None));
        }

        for (i, trace) in traces.iter().enumerate() {
            let xi = x.row(i);
            let z_final = trace.zs.last().unwrap();
            let r_final = w.dot(z_final) - &xi;
            // loss gradients at the final code
            let mut dz = w.t().dot(&r_final).mapv(|v| v * self.alpha / nf);
            let norm = z_final.mapv(|v| v * v).sum().sqrt();
            if norm > 1e-12 {
                let c = 2.0 * self.beta * (norm - 1.0) / (nf * norm);
                dz.scaled_add(c, z_final);
            }
            let c = 2.0 * self.gamma * (z_final.sum() - 1.0) / nf;
            for v in dz.iter_mut() {
                *v += c;
            }
            // direct l_rc dependence on W at the final code
            for row in 0..d {
                for col in 0..k {
                    d_w[[row, col]] += self.alpha / nf * r_final[row] * z_final[col];
                }
            }
            // backward through the unrolled layers
            let mut d_lambda = 0.0;
            for l in (0..self.layers).rev() {
                let z_in = &trace.zs[l];
                let z_out = &trace.zs[l + 1];
                // active set: z_out > 0 exactly where g - lambda > 0
                let dg = Array1::from_shape_fn(k, |t| if z_out[t] > 0.0 { dz[t] } else { 0.0 });
                d_lambda -= dg.sum();
                let r = w.dot(z_in) - &xi;
                let w_dg = w.dot(&dg);
                // g = z - Wᵀ(Wz - x):  dW += -r dgᵀ - (W dg) zᵀ
                for row in 0..d {
                    for col in 0..k {
                        d_w[[row, col]] -= r[row] * dg[col] + w_dg[row] * z_in[col];
                    }
                }
                dz = &dg - &w.t().dot(&w_dg);
            }
            d_raw_lambda[[i, 0]] = d_lambda * softplus_prime(trace.raw_lambda);
        }
        let (cache, _) = self.lambda_net.forward_cached(x)?;
        let (net_grad, _) = self.lambda_net.backward(&cache, &d_raw_lambda)?;

        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend(d_w.iter().copied());
        flat.extend(net_grad.iter().copied());
        Ok((total, Some(Array1::from_vec(flat))))
    }
}

/// Trains ASOT-DL on per-graph feature matrices. Returns the model, the
/// Euclidean anchor space over dictionary columns, and the loss trace.
/// Largest singular value of `w`, estimated by power iteration on `WᵀW`
/// from a deterministic start.
fn spectral_norm_estimate(w: &Array2<f64>) -> f64 {
    let k = w.ncols();
    if k == 0 || w.nrows() == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(k, 1.0 / (k as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..50 {
        let u = w.dot(&v);
        let next = w.t().dot(&u);
        let norm = next.dot(&next).sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        v = next / norm;
        sigma = w.dot(&v).dot(&w.dot(&v)).sqrt();
    }
    sigma
}

pub fn train_dl(
    graphs: &[Array2<f64>],
    cfg: &DlTrainConfig,
) -> Result<(DlModel, AnchorSpace, Vec<f64>)> {
    if graphs.is_empty() {
        return Err(Error::invalid("training needs at least one graph"));
    }
    if cfg.k == 0 || cfg.batch_graphs == 0 || cfg.sample_subsample == 0 || cfg.layers == 0 {
        return Err(Error::invalid("k, batch size, subsample, and layers must be positive"));
    }
    let feat_dim = graphs[0].ncols();
    if graphs.iter().any(|g| g.ncols() != feat_dim || g.nrows() == 0) {
        return Err(Error::invalid("graphs must be nonempty with one feature dim"));
    }
    let mut model = DlModel::new(feat_dim, cfg.k, cfg.layers, cfg.seed)?;
    // Dictionary initialization from a cheap k-means fit (columns=centers),
    // rescaled only if needed so the unit-step projected gradient iteration
    // is stable (spectral norm of W at most ~1, power-iteration estimate).
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
    let mut w0 = km.anchors().t().to_owned();
    let spec = spectral_norm_estimate(&w0);
    if spec > 1.0 {
        w0.mapv_inplace(|v| v / spec);
    }
    model.set_dictionary(w0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(model.num_params(), cfg.learning_rate);
    let mut params = model.params();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_graphs) {
            // pool node samples of the batch, subsample a bounded set
            let rows: Vec<(usize, usize)> = chunk
                .iter()
                .flat_map(|&g| (0..graphs[g].nrows()).map(move |r| (g, r)))
                .collect();
            let picked: Vec<(usize, usize)> = if rows.len() > cfg.sample_subsample {
                (0..cfg.sample_subsample)
                    .map(|_| rows[rng.gen_range(0..rows.len())])
                    .collect()
            } else {
                rows
            };
            let mut batch = Array2::zeros((picked.len(), feat_dim));
            for (t, &(g, r)) in picked.iter().enumerate() {
                batch.row_mut(t).assign(&graphs[g].row(r));
            }
            let (loss, grad) = model.train_loss_and_grad(&batch)?;
            adam.step(params.view_mut(), &grad)?;
            model.set_params(&params)?;
            epoch_loss += loss;
            batches += 1;
        }
        trace.push(if batches > 0 { epoch_loss / batches as f64 } else { 0.0 });
    }
    let space = model.anchor_space()?;
    Ok((model, space, trace))
}
