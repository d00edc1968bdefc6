//! Acceptance gate: one test per release criterion, each printing a single
//! PASS line with its measured numbers. Run with
//! `cargo test --test acceptance -- --nocapture` to see the measurements.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use asot::anchor::{
    anchor_cost, asot_exact, equivalence_check, map_distribution, prop1_bound, prop2_bound,
    reconstructed_cost, AnchorMetric, AnchorSpace, Encoding,
};
use asot::batch::{batched_sinkhorn_fixed, bds_sinkhorn, BatchedMarginals, ProblemSet};
use asot::data::{gin_preprocess, image_to_distribution, parse_tudataset, Graph};
use asot::dl::DlModel;
use asot::eval::rmse_upper_triangle;
use asot::kmeans::encode_onehot;
use asot::ml::MlModel;
use asot::nn::grad_check;
use asot::ot::{
    euclidean_cost, sinkhorn, solve_exact, CostMatrix, DiscreteDistribution, SinkhornConfig,
};
use asot::pipeline::{distance_matrix, preprocess_dataset, train, Method, RunConfig};

fn report(criterion: u32, detail: &str) {
    println!("criterion {criterion}: PASS ({detail})");
}

// ---------------------------------------------------------------------------
// random instance helpers
// ---------------------------------------------------------------------------

fn rand_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, d));
    for v in out.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    out
}

fn rand_masses(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let mut m = Array1::zeros(n);
    for v in m.iter_mut() {
        *v = rng.gen_range(0.1..1.0);
    }
    let total = m.sum();
    m.mapv_inplace(|v| v / total);
    m
}

fn rand_onehot(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Encoding {
    let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    Encoding::one_hot(&idx, k).unwrap()
}

fn rand_simplex(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Encoding {
    let mut z = Array2::zeros((n, k));
    for mut row in z.rows_mut() {
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen_range(0.05..1.0);
            total += *v;
        }
        row.mapv_inplace(|v| v / total);
    }
    Encoding::new(z).unwrap()
}

struct Instance {
    dx: DiscreteDistribution,
    dy: DiscreteDistribution,
    zx: Encoding,
    zy: Encoding,
    space: AnchorSpace,
}

fn rand_instance(rng: &mut ChaCha8Rng, one_hot: bool) -> Instance {
    let d = 3;
    let n = rng.gen_range(2..=20);
    let m = rng.gen_range(2..=20);
    let k = rng.gen_range(2..=8);
    let dx = DiscreteDistribution::new(rand_points(rng, n, d), rand_masses(rng, n)).unwrap();
    let dy = DiscreteDistribution::new(rand_points(rng, m, d), rand_masses(rng, m)).unwrap();
    let (zx, zy) = if one_hot {
        (rand_onehot(rng, n, k), rand_onehot(rng, m, k))
    } else {
        (rand_simplex(rng, n, k), rand_simplex(rng, m, k))
    };
    let space = AnchorSpace::new(rand_points(rng, k, d), AnchorMetric::Euclidean).unwrap();
    Instance { dx, dy, zx, zy, space }
}

fn true_w1(inst: &Instance) -> f64 {
    let c = euclidean_cost(inst.dx.samples(), inst.dy.samples()).unwrap();
    solve_exact(inst.dx.mass(), inst.dy.mass(), &c).unwrap().1
}

fn anchor_value(inst: &Instance) -> f64 {
    let c_s = anchor_cost(&inst.space).unwrap();
    let ax = map_distribution(&inst.dx, &inst.zx).unwrap();
    let bx = map_distribution(&inst.dy, &inst.zy).unwrap();
    asot_exact(&ax, &bx, &c_s).unwrap()
}

// ---------------------------------------------------------------------------
// criterion 1: the anchor-space LP equals the reconstructed-cost LP for
// one-hot encodings, to 1e-8 relative, over 100 seeded random instances.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_anchor_space_lp_matches_reconstructed_lp() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let inst = rand_instance(&mut rng, true);
        let (w_as, w_lp) =
            equivalence_check(&inst.dx, &inst.dy, &inst.zx, &inst.zy, &inst.space).unwrap();
        let rel = (w_as - w_lp).abs() / w_lp.abs().max(1.0);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-8,
            "one-hot equivalence violated: w_as={w_as}, w_lp={w_lp}, rel={rel}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs:.1}s, budget 10s");
    report(1, &format!("100 instances, worst rel gap {worst:.2e}, {secs:.2}s"));
}

// ---------------------------------------------------------------------------
// criterion 2: the entrywise-L1 reconstruction bound dominates the distance
// error on 100 dense-simplex and 100 one-hot instances, strictly whenever
// the bound is positive.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_reconstruction_bound_holds() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checked = 0;
    for &one_hot in &[false, true] {
        for _ in 0..100 {
            let inst = rand_instance(&mut rng, one_hot);
            let w1 = true_w1(&inst);
            let w_as = anchor_value(&inst);
            let c = euclidean_cost(inst.dx.samples(), inst.dy.samples()).unwrap();
            let c_s = anchor_cost(&inst.space).unwrap();
            let c_hat = reconstructed_cost(&inst.zx, &c_s, &inst.zy).unwrap();
            let bound = prop1_bound(&c_hat, &c).unwrap();
            let gap = (w_as - w1).abs();
            assert!(
                gap < bound || (bound == 0.0 && gap == 0.0),
                "bound violated ({}): gap={gap}, bound={bound}",
                if one_hot { "one-hot" } else { "dense" }
            );
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 20.0, "took {secs:.1}s, budget 20s");
    report(2, &format!("{checked} instances, {secs:.2}s"));
}

// ---------------------------------------------------------------------------
// criterion 3: the residual-norm bound for nearest-anchor one-hot encodings
// dominates the distance error on 100 Euclidean instances.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_residual_bound_holds_for_nearest_anchor() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..100 {
        let mut inst = rand_instance(&mut rng, true);
        let (zx, res_x) = encode_onehot(inst.dx.samples().view(), &inst.space).unwrap();
        let (zy, res_y) = encode_onehot(inst.dy.samples().view(), &inst.space).unwrap();
        inst.zx = zx;
        inst.zy = zy;
        let w1 = true_w1(&inst);
        let w_as = anchor_value(&inst);
        let bound = prop2_bound(&res_x, &res_y).unwrap();
        let gap = (w_as - w1).abs();
        assert!(
            gap < bound || (bound == 0.0 && gap <= 1e-12),
            "residual bound violated: gap={gap}, bound={bound}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 20.0, "took {secs:.1}s, budget 20s");
    report(3, &format!("100 instances, {secs:.2}s"));
}

// ---------------------------------------------------------------------------
// criterion 4: both batched Sinkhorn paths are transparent — every column
// matches an independent single-pair run within 1e-10, including mixed
// support sizes from 2 to 30.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_batching_is_transparent() {
    let start = Instant::now();
    let cfg = SinkhornConfig {
        epsilon: 0.05,
        iterations: 200,
        ..SinkhornConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;

    // shared-cost batches (anchor-space shape): random k x k cost, N columns
    for _ in 0..50 {
        let k = rng.gen_range(2..=10);
        let n_pairs = rng.gen_range(1..=8);
        let c = CostMatrix::new(Array2::from_shape_fn((k, k), |(i, j)| {
            if i == j {
                0.0
            } else {
                rng.gen_range(0.1..2.0)
            }
        }))
        .unwrap();
        let cols_a: Vec<Array1<f64>> = (0..n_pairs).map(|_| rand_masses(&mut rng, k)).collect();
        let cols_b: Vec<Array1<f64>> = (0..n_pairs).map(|_| rand_masses(&mut rng, k)).collect();
        let marginals = BatchedMarginals::from_columns(&cols_a, &cols_b).unwrap();
        let batched = batched_sinkhorn_fixed(&marginals, &c, &cfg).unwrap();
        for i in 0..n_pairs {
            let single = sinkhorn(&cols_a[i], &cols_b[i], &c, &cfg).unwrap().cost;
            let gap = (batched[i].as_ref().unwrap() - single).abs();
            worst = worst.max(gap);
            assert!(gap <= 1e-10, "fixed-support column {i}: gap {gap}");
        }
    }

    // block-diagonal stacking over mixed support sizes 2..=30
    for _ in 0..50 {
        let n_dists = rng.gen_range(3..=5);
        let dists: Vec<DiscreteDistribution> = (0..n_dists)
            .map(|_| {
                let n = rng.gen_range(2..=30);
                DiscreteDistribution::new(rand_points(&mut rng, n, 2), rand_masses(&mut rng, n))
                    .unwrap()
            })
            .collect();
        let problems = ProblemSet::all_pairs(dists.clone()).unwrap();
        let stacked = bds_sinkhorn(
            &problems,
            |x, y| euclidean_cost(x.samples(), y.samples()),
            &cfg,
        )
        .unwrap();
        for (&(i, j), value) in problems.pairs().iter().zip(&stacked) {
            let c = euclidean_cost(dists[i].samples(), dists[j].samples()).unwrap();
            let single = sinkhorn(dists[i].mass(), dists[j].mass(), &c, &cfg).unwrap().cost;
            let gap = (value.as_ref().unwrap() - single).abs();
            worst = worst.max(gap);
            assert!(gap <= 1e-10, "stacked pair ({i},{j}): gap {gap}");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs:.1}s, budget 10s");
    report(4, &format!("100 batches, worst column gap {worst:.2e}, {secs:.2}s"));
}

// ---------------------------------------------------------------------------
// criterion 5: at epsilon = 0.01 / 2000 iterations the entropic cost is
// within 1e-3 of the exact value and never undercuts it meaningfully.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_entropic_approximates_exact() {
    let cfg = SinkhornConfig {
        epsilon: 0.01,
        iterations: 2000,
        ..SinkhornConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = rand_masses(&mut rng, 5);
        let b = rand_masses(&mut rng, 7);
        // random costs on a 0.1 grid: every cost gap is either zero (blur
        // across exact ties is free) or ten epsilons (blur is suppressed by
        // e^-10), so 2000 iterations reach both the 1e-3 accuracy band and
        // feasibility tight enough that the entropic cost never undercuts
        let c = CostMatrix::new(Array2::from_shape_fn((5, 7), |_| {
            f64::from(rng.gen_range(0u32..=4)) * 0.1
        }))
        .unwrap();
        let exact = solve_exact(&a, &b, &c).unwrap().1;
        let entropic = sinkhorn(&a, &b, &c, &cfg).unwrap().cost;
        let gap = (entropic - exact).abs();
        worst = worst.max(gap);
        assert!(gap <= 1e-3, "gap {gap} exceeds 1e-3 (exact={exact})");
        assert!(
            entropic >= exact - 1e-9,
            "entropic {entropic} undercuts exact {exact}"
        );
    }
    report(5, &format!("50 instances 5x7, worst gap {worst:.2e}"));
}

// ---------------------------------------------------------------------------
// criterion 6: when the anchors are exactly the pooled sample points, the
// nearest-anchor encoding has zero residual and the anchor-space distance
// collapses to the true 1-Wasserstein distance.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_zero_residual_collapse() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..20 {
        let d = 3;
        let n = rng.gen_range(2..=10);
        let m = rng.gen_range(2..=10);
        let x = rand_points(&mut rng, n, d);
        let y = rand_points(&mut rng, m, d);
        let mut anchors = Array2::zeros((n + m, d));
        anchors.slice_mut(ndarray::s![..n, ..]).assign(&x);
        anchors.slice_mut(ndarray::s![n.., ..]).assign(&y);
        let space = AnchorSpace::new(anchors, AnchorMetric::Euclidean).unwrap();
        let dx = DiscreteDistribution::new(x, rand_masses(&mut rng, n)).unwrap();
        let dy = DiscreteDistribution::new(y, rand_masses(&mut rng, m)).unwrap();
        let (zx, res_x) = encode_onehot(dx.samples().view(), &space).unwrap();
        let (zy, res_y) = encode_onehot(dy.samples().view(), &space).unwrap();
        assert_eq!(prop2_bound(&res_x, &res_y).unwrap(), 0.0, "residuals must vanish");
        let inst = Instance { dx, dy, zx, zy, space };
        let w1 = true_w1(&inst);
        let w_as = anchor_value(&inst);
        assert!(
            (w_as - w1).abs() <= 1e-9,
            "collapse violated: w_as={w_as}, w1={w1}"
        );
    }
    report(6, "20 instances, anchor distance equals W1 within 1e-9");
}

// ---------------------------------------------------------------------------
// criterion 7: analytic gradients of both learned encoders agree with
// central differences to 1e-4 relative on seeded tiny instances.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_learned_encoder_gradients_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_ml = 0.0f64;
    for trial in 0..10 {
        let mut model = MlModel::new(3, 3, trial).unwrap();
        model.set_anchors(rand_points(&mut rng, 3, 3)).unwrap();
        let x = rand_points(&mut rng, 4, 3);
        let y = rand_points(&mut rng, 5, 3);
        let c_true = Array2::from_shape_fn((4, 5), |_| rng.gen_range(0.0..2.0));
        let (_, grad) = model.loss_and_grad(&x, &y, &c_true, None).unwrap();
        let params = model.params();
        let rel = grad_check(
            |p| {
                let mut probe = model.clone();
                probe.set_params(p).unwrap();
                probe.loss(&x, &y, &c_true, None).unwrap()
            },
            &params,
            &grad,
            1e-6,
        );
        worst_ml = worst_ml.max(rel);
        assert!(rel <= 1e-4, "metric-learning gradient, trial {trial}: rel {rel}");
    }

    let mut worst_dl = 0.0f64;
    for trial in 0..10 {
        let mut model = DlModel::new(3, 2, 5, trial).unwrap();
        model
            .set_dictionary(rand_points(&mut rng, 3, 2).mapv(|v| 0.5 * v))
            .unwrap();
        let x = rand_points(&mut rng, 6, 3);
        let (_, grad) = model.train_loss_and_grad(&x).unwrap();
        let params = model.params();
        let rel = grad_check(
            |p| {
                let mut probe = model.clone();
                probe.set_params(p).unwrap();
                probe.train_loss(&x).unwrap()
            },
            &params,
            &grad,
            1e-6,
        );
        worst_dl = worst_dl.max(rel);
        assert!(rel <= 1e-4, "dictionary-learning gradient, trial {trial}: rel {rel}");
    }
    report(
        7,
        &format!("10+10 instances, worst rel err ml {worst_ml:.2e} / dl {worst_dl:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// criteria 8 and 9 share one end-to-end MUTAG run.
// ---------------------------------------------------------------------------

struct MutagRun {
    rmse_asot: f64,
    rmse_easot: f64,
    pipeline_secs: f64,
    easot_dist_secs: f64,
    eot_dist_secs: f64,
}

static MUTAG: OnceLock<MutagRun> = OnceLock::new();

fn mutag_run() -> &'static MutagRun {
    MUTAG.get_or_init(|| {
        let start = Instant::now();
        let ds = parse_tudataset(Path::new("../../data"), "MUTAG").expect("MUTAG under data/");
        let features = preprocess_dataset(&ds).unwrap();
        let base = RunConfig {
            k: 28,
            seed: 0,
            ..RunConfig::default()
        };
        let train_cfg = RunConfig { method: Method::AsotK, ..base.clone() };
        let (trained, _) = train(&features, &train_cfg).unwrap();
        let asot = distance_matrix(&features, &train_cfg, Some(&trained)).unwrap();
        let emd_cfg = RunConfig { method: Method::OtEmd, ..base.clone() };
        let emd = distance_matrix(&features, &emd_cfg, None).unwrap();
        let pipeline_secs = start.elapsed().as_secs_f64();

        let easot_cfg = RunConfig { method: Method::EasotK, ..base.clone() };
        let t = Instant::now();
        let easot = distance_matrix(&features, &easot_cfg, Some(&trained)).unwrap();
        let easot_dist_secs = t.elapsed().as_secs_f64();

        let eot_cfg = RunConfig { method: Method::Eot, ..base };
        let t = Instant::now();
        let eot = distance_matrix(&features, &eot_cfg, None).unwrap();
        let eot_dist_secs = t.elapsed().as_secs_f64();
        drop(eot);

        MutagRun {
            rmse_asot: rmse_upper_triangle(&asot, &emd).unwrap(),
            rmse_easot: rmse_upper_triangle(&easot, &emd).unwrap(),
            pipeline_secs,
            easot_dist_secs,
            eot_dist_secs,
        }
    })
}

// criterion 8: the end-to-end graph pipeline reproduces the reference
// accuracy bands on MUTAG (k = 28, seed 0) within a ten-minute budget.
#[test]
fn criterion_08_mutag_accuracy_bands() {
    let run = mutag_run();
    assert!(
        run.rmse_asot <= 0.15,
        "exact anchor rmse {} exceeds 0.15",
        run.rmse_asot
    );
    assert!(
        run.rmse_easot <= 0.25,
        "entropic anchor rmse {} exceeds 0.25",
        run.rmse_easot
    );
    assert!(
        run.pipeline_secs < 600.0,
        "pipeline took {:.0}s, budget 600s",
        run.pipeline_secs
    );
    report(
        8,
        &format!(
            "rmse asot-k {:.6} (<=0.15), easot-k {:.6} (<=0.25), pipeline {:.0}s (<600s)",
            run.rmse_asot, run.rmse_easot, run.pipeline_secs
        ),
    );
}

// criterion 9: the batched entropic anchor solver beats one-by-one entropic
// OT by at least 2x wall clock on the same corpus at equal epsilon/iterations.
#[test]
fn criterion_09_batched_entropic_speedup() {
    let run = mutag_run();
    assert!(
        run.easot_dist_secs <= 0.5 * run.eot_dist_secs,
        "batched anchor time {:.2}s not within half of one-by-one {:.2}s",
        run.easot_dist_secs,
        run.eot_dist_secs
    );
    report(
        9,
        &format!(
            "easot-k dist {:.2}s vs eot {:.2}s (ratio {:.3})",
            run.easot_dist_secs,
            run.eot_dist_secs,
            run.easot_dist_secs / run.eot_dist_secs
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 10: data ingestion oracles — message passing matches the matrix
// power recurrence, image embedding matches the scalar formula exactly, and
// a hand-written dataset fixture round-trips.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_data_ingestion_oracles() {
    // message passing vs (A + (1 + eps) I)^t X
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for trial in 0..50 {
        let n = rng.gen_range(2..=8);
        let eps = if trial % 2 == 0 { 0.0 } else { 0.5 };
        let iters = rng.gen_range(1..=4);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(0.4) {
                    edges.push((u, v));
                }
            }
        }
        let x = rand_points(&mut rng, n, 2);
        let g = Graph::new(n, edges.clone(), x.clone()).unwrap();
        let out = gin_preprocess(&g, iters, eps).unwrap();
        let mut m = Array2::<f64>::eye(n) * (1.0 + eps);
        for &(u, v) in &edges {
            m[[u, v]] += 1.0;
            m[[v, u]] += 1.0;
        }
        let mut block = x.clone();
        for r in 0..=iters {
            let expected = &block;
            let got = out.node_features().slice(ndarray::s![.., r * 2..(r + 1) * 2]);
            for (a, b) in got.iter().zip(expected.iter()) {
                assert!((a - b).abs() <= 1e-12, "round {r}: {a} vs {b}");
            }
            block = m.dot(&block);
        }
    }

    // image embedding: exact scalar formula for each lit pixel
    let mut pixels = Array2::<u8>::zeros((28, 28));
    pixels[[3, 5]] = 128;
    pixels[[10, 20]] = 255;
    let d = image_to_distribution(&pixels).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.samples()[[0, 0]], 3.0 / 28.0);
    assert_eq!(d.samples()[[0, 1]], 5.0 / 28.0);
    assert_eq!(d.samples()[[0, 2]], 128.0 / 256.0);
    assert_eq!(d.samples()[[1, 2]], 255.0 / 256.0);
    assert_eq!(d.mass()[0], 0.5);

    // hand-written two-graph fixture round trip
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir_all(root.join("TOY")).unwrap();
    let raw = root.join("TOY");
    std::fs::write(raw.join("TOY_graph_indicator.txt"), "1\n1\n1\n2\n2\n").unwrap();
    std::fs::write(raw.join("TOY_A.txt"), "1, 2\n2, 1\n2, 3\n3, 2\n4, 5\n5, 4\n").unwrap();
    std::fs::write(raw.join("TOY_node_labels.txt"), "0\n1\n0\n1\n1\n").unwrap();
    std::fs::write(raw.join("TOY_graph_labels.txt"), "1\n-1\n").unwrap();
    let ds = parse_tudataset(root, "TOY").unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.graphs[0].node_count(), 3);
    assert_eq!(ds.graphs[1].node_count(), 2);
    assert_eq!(ds.graphs[0].edges(), &[(0, 1), (1, 2)]);
    assert_eq!(ds.graphs[1].edges(), &[(0, 1)]);
    assert_eq!(ds.feature_dim, 2);
    assert_eq!(ds.graphs[0].node_features().row(0).to_vec(), vec![1.0, 0.0]);
    assert_eq!(ds.graphs[0].node_features().row(1).to_vec(), vec![0.0, 1.0]);
    assert_eq!(ds.labels.as_deref(), Some(&[1, -1][..]));

    report(10, "50 message-passing oracles, exact image embedding, fixture round trip");
}
