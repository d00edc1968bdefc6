//! End-to-end orchestration shared by the CLI: dataset preprocessing,
//! method dispatch for training and pairwise distance matrices, model
//! checkpoints, and reproducibility metadata.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchor::{anchor_cost, map_distribution, AnchorSpace, Encoding};
use crate::batch::{pairwise_matrix, DistanceMatrix, PairwiseStrategy, ProblemSet, DEFAULT_EASOT_CHUNK};
use crate::data::GraphDataset;
use crate::dl::{train_dl, DlModel, DlTrainConfig};
use crate::error::{Error, Result};
use crate::kmeans::{encode_onehot, fit_kmeans, KmeansConfig};
use crate::ml::{train_ml, MlModel, MlTrainConfig};
use crate::ot::{solve_exact, CostMatrix, DiscreteDistribution, SinkhornConfig};

/// Distance-computation strategy names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OtEmd,
    Eot,
    BdsEot,
    AsotMl,
    AsotDl,
    AsotK,
    EasotMl,
    EasotDl,
    EasotK,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::OtEmd,
        Method::Eot,
        Method::BdsEot,
        Method::AsotMl,
        Method::AsotDl,
        Method::AsotK,
        Method::EasotMl,
        Method::EasotDl,
        Method::EasotK,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::OtEmd => "ot-emd",
            Method::Eot => "eot",
            Method::BdsEot => "bds-eot",
            Method::AsotMl => "asot-ml",
            Method::AsotDl => "asot-dl",
            Method::AsotK => "asot-k",
            Method::EasotMl => "easot-ml",
            Method::EasotDl => "easot-dl",
            Method::EasotK => "easot-k",
        }
    }

    /// Methods that need a trained anchor space before computing distances.
    pub fn is_learning(&self) -> bool {
        !matches!(self, Method::OtEmd | Method::Eot | Method::BdsEot)
    }

    /// Methods whose anchor-space solve is entropic rather than exact.
    pub fn is_entropic(&self) -> bool {
        matches!(
            self,
            Method::Eot | Method::BdsEot | Method::EasotMl | Method::EasotDl | Method::EasotK
        )
    }

    /// The learner behind an anchor-space method.
    fn learner(&self) -> Option<Learner> {
        match self {
            Method::AsotK | Method::EasotK => Some(Learner::Kmeans),
            Method::AsotMl | Method::EasotMl => Some(Learner::Ml),
            Method::AsotDl | Method::EasotDl => Some(Learner::Dl),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method {s:?}; expected one of: {}",
                    Method::ALL.map(|m| m.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Learner {
    Kmeans,
    Ml,
    Dl,
}

/// All knobs for one run; serialized verbatim into the metadata record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub k: usize,
    pub epsilon: f64,
    pub iterations: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_graphs: usize,
    pub learning_rate: f64,
    pub layers: usize,
    /// 0 means use every available core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::OtEmd,
            k: 8,
            epsilon: 0.1,
            iterations: 50,
            seed: 0,
            epochs: 500,
            batch_graphs: 500,
            learning_rate: 0.01,
            layers: 20,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            iterations: self.iterations,
            ..SinkhornConfig::default()
        }
    }
}

/// A trained anchor space together with whatever encoder produced it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub space: AnchorSpace,
    pub model: TrainedModel,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    /// Nearest-anchor one-hot encoding; the anchor space is the model.
    Kmeans,
    Ml(MlModel),
    Dl(DlModel),
}

/// GIN propagation rounds applied before anything else.
pub const GIN_ITERS: usize = 4;

/// Preprocesses a parsed corpus into per-graph feature matrices: GIN
/// propagation (4 rounds, eps 0, feature concatenation) followed by one
/// global rescale by the maximum sample L2 norm, so pairwise costs live at
/// unit scale regardless of the raw feature encoding.
pub fn preprocess_dataset(ds: &GraphDataset) -> Result<Vec<Array2<f64>>> {
    let mut features: Vec<Array2<f64>> = ds
        .graphs
        .iter()
        .map(|g| Ok(crate::data::gin_preprocess(g, GIN_ITERS, 0.0)?.node_features().clone()))
        .collect::<Result<_>>()?;
    normalize_global_scale(&mut features);
    Ok(features)
}

/// Divides every feature row by the single largest row L2 norm across the
/// whole corpus. A no-op when all rows are zero.
pub fn normalize_global_scale(features: &mut [Array2<f64>]) {
    let mut max_norm = 0.0f64;
    for f in features.iter() {
        for row in f.rows() {
            max_norm = max_norm.max(row.dot(&row).sqrt());
        }
    }
    if max_norm > 0.0 {
        for f in features.iter_mut() {
            f.mapv_inplace(|v| v / max_norm);
        }
    }
}

/// Uniform-mass distributions over per-graph feature rows.
pub fn feature_distributions(features: &[Array2<f64>]) -> Result<Vec<DiscreteDistribution>> {
    features
        .iter()
        .map(|f| DiscreteDistribution::uniform(f.clone()))
        .collect()
}

fn pool_samples(features: &[Array2<f64>]) -> Result<Array2<f64>> {
    if features.is_empty() {
        return Err(Error::invalid("no feature blocks to pool"));
    }
    let dim = features[0].ncols();
    let total: usize = features.iter().map(|f| f.nrows()).sum();
    let mut pooled = Array2::zeros((total, dim));
    let mut row = 0;
    for f in features {
        pooled.slice_mut(ndarray::s![row..row + f.nrows(), ..]).assign(f);
        row += f.nrows();
    }
    Ok(pooled)
}

/// Trains the anchor space for a learning method. Returns the trained
/// encoder and a per-epoch loss trace (a single final-inertia entry for
/// k-means).
pub fn train(features: &[Array2<f64>], cfg: &RunConfig) -> Result<(Trained, Vec<f64>)> {
    let learner = cfg.method.learner().ok_or_else(|| {
        Error::invalid(format!("{} is not a learning method", cfg.method))
    })?;
    match learner {
        Learner::Kmeans => {
            let pooled = pool_samples(features)?;
            let space = fit_kmeans(
                &pooled,
                &KmeansConfig {
                    k: cfg.k,
                    seed: cfg.seed,
                    ..KmeansConfig::default()
                },
            )?;
            let trace = vec![crate::kmeans::inertia(pooled.view(), space.anchors())];
            Ok((
                Trained {
                    space,
                    model: TrainedModel::Kmeans,
                },
                trace,
            ))
        }
        Learner::Ml => {
            let (model, space, trace) = train_ml(
                features,
                &MlTrainConfig {
                    epochs: cfg.epochs,
                    batch_graphs: cfg.batch_graphs,
                    seed: cfg.seed,
                    learning_rate: cfg.learning_rate,
                    k: cfg.k,
                    ..MlTrainConfig::default()
                },
            )?;
            Ok((
                Trained {
                    space,
                    model: TrainedModel::Ml(model),
                },
                trace,
            ))
        }
        Learner::Dl => {
            let (model, space, trace) = train_dl(
                features,
                &DlTrainConfig {
                    epochs: cfg.epochs,
                    batch_graphs: cfg.batch_graphs,
                    seed: cfg.seed,
                    learning_rate: cfg.learning_rate,
                    k: cfg.k,
                    layers: cfg.layers,
                    ..DlTrainConfig::default()
                },
            )?;
            Ok((
                Trained {
                    space,
                    model: TrainedModel::Dl(model),
                },
                trace,
            ))
        }
    }
}

/// Encodes one graph's features under the trained encoder.
pub fn encode_graph(trained: &Trained, features: &Array2<f64>) -> Result<Encoding> {
    match &trained.model {
        TrainedModel::Kmeans => {
            let (enc, _) = encode_onehot(features.view(), &trained.space)?;
            Ok(enc)
        }
        TrainedModel::Ml(model) => {
            let (enc, _) = model.encode(features)?;
            Ok(enc)
        }
        TrainedModel::Dl(model) => {
            let (enc, _) = model.encode_batch(features)?;
            Ok(enc)
        }
    }
}

/// Anchor-space marginals for every graph under the trained encoder.
pub fn mapped_marginals(trained: &Trained, features: &[Array2<f64>]) -> Result<Vec<Array1<f64>>> {
    features
        .iter()
        .map(|f| {
            let enc = encode_graph(trained, f)?;
            let d = DiscreteDistribution::uniform(f.clone())?;
            Ok(map_distribution(&d, &enc)?.mass().clone())
        })
        .collect()
}

fn full_values(dm: &DistanceMatrix) -> Result<Array2<f64>> {
    let n = dm.n();
    for i in 0..n {
        for j in (i + 1)..n {
            if dm.get(i, j).is_none() {
                return Err(Error::numeric(format!("pair ({i}, {j}) failed to solve")));
            }
        }
    }
    Ok(dm.values().clone())
}

/// Computes the full pairwise distance matrix for a method. `trained` must
/// be provided for anchor-space methods and is ignored otherwise.
pub fn distance_matrix(
    features: &[Array2<f64>],
    cfg: &RunConfig,
    trained: Option<&Trained>,
) -> Result<Array2<f64>> {
    let n = features.len();
    if n == 0 {
        return Err(Error::invalid("no graphs to compare"));
    }
    match cfg.method {
        Method::OtEmd => {
            let problems = ProblemSet::all_pairs(feature_distributions(features)?)?;
            full_values(&pairwise_matrix(&problems, &PairwiseStrategy::Exact)?)
        }
        Method::Eot => {
            let problems = ProblemSet::all_pairs(feature_distributions(features)?)?;
            full_values(&pairwise_matrix(
                &problems,
                &PairwiseStrategy::SinkhornOneByOne(cfg.sinkhorn()),
            )?)
        }
        Method::BdsEot => {
            let problems = ProblemSet::all_pairs(feature_distributions(features)?)?;
            full_values(&pairwise_matrix(
                &problems,
                &PairwiseStrategy::BdsSinkhorn(cfg.sinkhorn()),
            )?)
        }
        Method::AsotK | Method::AsotMl | Method::AsotDl => {
            let trained = trained
                .ok_or_else(|| Error::invalid(format!("{} needs a trained anchor space", cfg.method)))?;
            let mapped = mapped_marginals(trained, features)?;
            let c_s = anchor_cost(&trained.space)?;
            exact_anchor_matrix(&mapped, &c_s)
        }
        Method::EasotK | Method::EasotMl | Method::EasotDl => {
            let trained = trained
                .ok_or_else(|| Error::invalid(format!("{} needs a trained anchor space", cfg.method)))?;
            let mapped = mapped_marginals(trained, features)?;
            let c_s = anchor_cost(&trained.space)?;
            let problems = ProblemSet::all_pairs(feature_distributions(features)?)?;
            full_values(&pairwise_matrix(
                &problems,
                &PairwiseStrategy::EasotBatched {
                    mapped: &mapped,
                    anchor_cost: &c_s,
                    cfg: cfg.sinkhorn(),
                    chunk: DEFAULT_EASOT_CHUNK,
                },
            )?)
        }
    }
}

/// Exact anchor-space LP per pair on the shared `k x k` cost.
fn exact_anchor_matrix(mapped: &[Array1<f64>], c_s: &CostMatrix) -> Result<Array2<f64>> {
    let n = mapped.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| solve_exact(&mapped[i], &mapped[j], c_s).map(|(_, cost)| cost))
        .collect();
    let mut out = Array2::zeros((n, n));
    for (&(i, j), r) in pairs.iter().zip(results) {
        let cost = r?;
        out[[i, j]] = cost;
        out[[j, i]] = cost;
    }
    Ok(out)
}

/// Serializable model checkpoint: enough to rebuild the trained encoder
/// bit-exactly (flat parameters plus shape metadata).
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointRecord {
    method: Method,
    k: usize,
    feat_dim: usize,
    layers: usize,
    seed: u64,
    params: Vec<f64>,
    anchors: Vec<f64>,
}

/// Writes the trained encoder to a JSON checkpoint.
pub fn save_checkpoint(path: &Path, trained: &Trained, cfg: &RunConfig) -> Result<()> {
    let (params, feat_dim, layers) = match &trained.model {
        TrainedModel::Kmeans => (Vec::new(), trained.space.dim(), 0),
        TrainedModel::Ml(m) => (m.params().to_vec(), m.feat_dim(), 0),
        TrainedModel::Dl(m) => (m.params().to_vec(), m.feat_dim(), m.layers()),
    };
    let record = CheckpointRecord {
        method: cfg.method,
        k: trained.space.k(),
        feat_dim,
        layers,
        seed: cfg.seed,
        params,
        anchors: trained.space.anchors().iter().copied().collect(),
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::invalid(format!("checkpoint serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Restores a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Trained> {
    let json = std::fs::read_to_string(path)?;
    let record: CheckpointRecord = serde_json::from_str(&json)
        .map_err(|e| Error::invalid(format!("checkpoint parse: {e}")))?;
    let learner = record
        .method
        .learner()
        .ok_or_else(|| Error::invalid(format!("{} has no checkpoint", record.method)))?;
    match learner {
        Learner::Kmeans => {
            let anchors =
                Array2::from_shape_vec((record.k, record.feat_dim), record.anchors)
                    .map_err(|e| Error::invalid(format!("checkpoint anchors: {e}")))?;
            let space = AnchorSpace::new(anchors, crate::anchor::AnchorMetric::Euclidean)?;
            Ok(Trained {
                space,
                model: TrainedModel::Kmeans,
            })
        }
        Learner::Ml => {
            let mut model = MlModel::new(record.feat_dim, record.k, record.seed)?;
            model.set_params(&Array1::from_vec(record.params))?;
            let space = model.anchor_space()?;
            Ok(Trained {
                space,
                model: TrainedModel::Ml(model),
            })
        }
        Learner::Dl => {
            let mut model = DlModel::new(record.feat_dim, record.k, record.layers, record.seed)?;
            model.set_params(&Array1::from_vec(record.params))?;
            let space = model.anchor_space()?;
            Ok(Trained {
                space,
                model: TrainedModel::Dl(model),
            })
        }
    }
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn sha256_hex_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Sidecar record written next to every CLI artifact: the full config plus
/// content hashes of everything the run produced or consumed.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: RunConfig,
    pub dataset: Option<String>,
    /// Timing split in seconds: anchor training vs distance computation.
    pub train_seconds: Option<f64>,
    pub dist_seconds: Option<f64>,
    pub artifact_hashes: BTreeMap<String, String>,
}

/// Writes the metadata record, hashing each named artifact file.
pub fn write_metadata(
    path: &Path,
    cfg: &RunConfig,
    dataset: Option<&str>,
    timing: (Option<f64>, Option<f64>),
    artifacts: &[&Path],
) -> Result<()> {
    let mut artifact_hashes = BTreeMap::new();
    for artifact in artifacts {
        let name = artifact
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| artifact.display().to_string());
        artifact_hashes.insert(name, sha256_hex_file(artifact)?);
    }
    let record = RunMetadata {
        config: cfg.clone(),
        dataset: dataset.map(str::to_owned),
        train_seconds: timing.0,
        dist_seconds: timing.1,
        artifact_hashes,
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::invalid(format!("metadata serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use approx::assert_abs_diff_eq;

    fn toy_features(n_graphs: usize, seed: u64) -> Vec<Array2<f64>> {
        let ds = synth_blobs(n_graphs, (3, 6), 2, seed).unwrap();
        preprocess_dataset(&ds).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_str(m.name()).unwrap(), m);
        }
        assert!(Method::from_str("nope").is_err());
        assert!(Method::OtEmd.name() == "ot-emd");
        assert!(!Method::OtEmd.is_learning());
        assert!(Method::AsotK.is_learning());
        assert!(Method::EasotDl.is_entropic());
        assert!(!Method::AsotMl.is_entropic());
    }

    #[test]
    fn preprocessing_normalizes_to_unit_max_norm() {
        let features = toy_features(4, 0);
        let max_norm = features
            .iter()
            .flat_map(|f| f.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect::<Vec<_>>())
            .fold(0.0f64, f64::max);
        assert_abs_diff_eq!(max_norm, 1.0, epsilon = 1e-12);
        // GIN concatenation: blobs are 2-d, 4 rounds -> 10-d
        assert_eq!(features[0].ncols(), 10);
    }

    #[test]
    fn ot_emd_matrix_is_symmetric_zero_diagonal() {
        let features = toy_features(3, 1);
        let cfg = RunConfig::default();
        let m = distance_matrix(&features, &cfg, None).unwrap();
        assert_eq!(m.dim(), (3, 3));
        for i in 0..3 {
            assert_eq!(m[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(m[[i, j]], m[[j, i]]);
                assert!(m[[i, j]] >= 0.0);
            }
        }
        assert!(m[[0, 1]] > 0.0);
    }

    #[test]
    fn easot_matches_exact_anchor_at_tight_epsilon() {
        let features = toy_features(5, 2);
        let mut cfg = RunConfig {
            method: Method::AsotK,
            k: 4,
            seed: 5,
            ..RunConfig::default()
        };
        let (trained, _) = train(&features, &cfg).unwrap();
        let exact = distance_matrix(&features, &cfg, Some(&trained)).unwrap();
        cfg.method = Method::EasotK;
        cfg.epsilon = 0.01;
        cfg.iterations = 2000;
        let entropic = distance_matrix(&features, &cfg, Some(&trained)).unwrap();
        for (a, b) in exact.iter().zip(entropic.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-3);
        }
    }

    #[test]
    fn distance_matrices_are_deterministic() {
        let features = toy_features(4, 3);
        for method in [Method::OtEmd, Method::Eot, Method::AsotK, Method::EasotK] {
            let cfg = RunConfig {
                method,
                k: 3,
                seed: 7,
                ..RunConfig::default()
            };
            let trained = if method.is_learning() {
                Some(train(&features, &cfg).unwrap().0)
            } else {
                None
            };
            let a = distance_matrix(&features, &cfg, trained.as_ref()).unwrap();
            let b = distance_matrix(&features, &cfg, trained.as_ref()).unwrap();
            assert_eq!(a, b, "{method} must be bit-deterministic");
        }
    }

    #[test]
    fn anchor_methods_require_training() {
        let features = toy_features(2, 4);
        let cfg = RunConfig {
            method: Method::AsotK,
            ..RunConfig::default()
        };
        assert!(distance_matrix(&features, &cfg, None).is_err());
        let raw_cfg = RunConfig::default();
        assert!(train(&features, &raw_cfg).is_err(), "ot-emd has nothing to train");
    }

    #[test]
    fn checkpoints_round_trip_every_learner() {
        let dir = tempfile::tempdir().unwrap();
        let features = toy_features(3, 6);
        for method in [Method::AsotK, Method::AsotMl, Method::AsotDl] {
            let cfg = RunConfig {
                method,
                k: 3,
                epochs: 3,
                layers: 4,
                seed: 9,
                ..RunConfig::default()
            };
            let (trained, _) = train(&features, &cfg).unwrap();
            let path = dir.path().join(format!("{method}.ckpt.json"));
            save_checkpoint(&path, &trained, &cfg).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(trained.space.anchors(), loaded.space.anchors());
            // the restored encoder produces identical marginals
            let a = mapped_marginals(&trained, &features).unwrap();
            let b = mapped_marginals(&loaded, &features).unwrap();
            assert_eq!(a, b, "{method} checkpoint must restore bit-exactly");
        }
    }

    #[test]
    fn training_traces_have_expected_shape() {
        let features = toy_features(3, 8);
        let cfg = RunConfig {
            method: Method::AsotK,
            k: 2,
            seed: 1,
            ..RunConfig::default()
        };
        let (_, trace) = train(&features, &cfg).unwrap();
        assert_eq!(trace.len(), 1);
        assert!(trace[0] >= 0.0);

        let cfg = RunConfig {
            method: Method::AsotMl,
            k: 2,
            epochs: 5,
            seed: 1,
            ..RunConfig::default()
        };
        let (_, trace) = train(&features, &cfg).unwrap();
        assert_eq!(trace.len(), 5);
    }

    #[test]
    fn metadata_records_config_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("out.csv");
        std::fs::write(&artifact, "0,1\n1,0\n").unwrap();
        let meta_path = dir.path().join("out.meta.json");
        let cfg = RunConfig {
            method: Method::EasotK,
            k: 5,
            seed: 42,
            ..RunConfig::default()
        };
        write_metadata(
            &meta_path,
            &cfg,
            Some("blobs:2"),
            (Some(0.5), Some(1.5)),
            &[&artifact],
        )
        .unwrap();
        let parsed: RunMetadata =
            serde_json::from_str(&std::fs::read_to_string(&meta_path).unwrap()).unwrap();
        assert_eq!(parsed.config.method, Method::EasotK);
        assert_eq!(parsed.config.seed, 42);
        assert_eq!(parsed.dataset.as_deref(), Some("blobs:2"));
        assert_eq!(parsed.train_seconds, Some(0.5));
        assert_eq!(parsed.dist_seconds, Some(1.5));
        let hash = parsed.artifact_hashes.get("out.csv").unwrap();
        assert_eq!(hash, &sha256_hex_file(&artifact).unwrap());
        assert_eq!(hash.len(), 64);
    }
}
