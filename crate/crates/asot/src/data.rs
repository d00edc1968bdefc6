//! Dataset ingestion and preprocessing: TUDataset flat-file parsing,
//! GIN-style feature propagation, MNIST IDX images as point clouds, a
//! synthetic blob generator, and a binary feature cache.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read as IoRead, Write as IoWrite};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ot::DiscreteDistribution;

/// An undirected graph with per-node feature rows.
#[derive(Debug, Clone)]
pub struct Graph {
    node_count: usize,
    /// Undirected edges as local index pairs, deduplicated.
    edges: Vec<(usize, usize)>,
    /// `node_count x d`.
    node_features: Array2<f64>,
}

impl Graph {
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        node_features: Array2<f64>,
    ) -> Result<Self> {
        if node_features.nrows() != node_count {
            return Err(Error::invalid(format!(
                "feature matrix has {} rows for {} nodes",
                node_features.nrows(),
                node_count
            )));
        }
        if node_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite node feature"));
        }
        for &(u, v) in &edges {
            if u >= node_count || v >= node_count {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
        }
        Ok(Self {
            node_count,
            edges,
            node_features,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Array2<f64> {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    /// The graph's node features as a uniform-mass discrete distribution.
    pub fn to_distribution(&self) -> Result<DiscreteDistribution> {
        let n = self.node_count;
        DiscreteDistribution::new(
            self.node_features.clone(),
            Array1::from_elem(n, 1.0 / n as f64),
        )
    }
}

/// A graph corpus with one consistent feature dimension.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub graphs: Vec<Graph>,
    pub labels: Option<Vec<i64>>,
    pub feature_dim: usize,
}

impl GraphDataset {
    pub fn new(graphs: Vec<Graph>, labels: Option<Vec<i64>>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::invalid("dataset needs at least one graph"));
        }
        let feature_dim = graphs[0].feature_dim();
        if graphs.iter().any(|g| g.feature_dim() != feature_dim) {
            return Err(Error::invalid("inconsistent feature dimension across graphs"));
        }
        if let Some(l) = &labels {
            if l.len() != graphs.len() {
                return Err(Error::invalid("label count does not match graph count"));
            }
        }
        Ok(Self {
            graphs,
            labels,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(|g| g.node_count()).max().unwrap_or(0)
    }
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| parse_err(path, 0, format!("cannot open: {e}")))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        out.push(line?);
    }
    // trailing blank lines are common in the wild; drop them
    while out.last().is_some_and(|l| l.trim().is_empty()) {
        out.pop();
    }
    Ok(out)
}

fn parse_int(file: &Path, line_no: usize, token: &str) -> Result<i64> {
    token
        .trim()
        .parse::<i64>()
        .map_err(|_| parse_err(file, line_no, format!("expected integer, got {token:?}")))
}

fn parse_float(file: &Path, line_no: usize, token: &str) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| parse_err(file, line_no, format!("expected number, got {token:?}")))
}

/// Parses a TUDataset-format flat-file corpus rooted at `root/name/`.
///
/// Reads `{name}_A.txt` (comma-separated 1-based global node-id pairs,
/// typically listed in both directions; deduplicated to undirected edges),
/// `{name}_graph_indicator.txt` (1-based graph id per node), and node
/// features from `{name}_node_labels.txt` (one-hot over label values in
/// ascending order) or, when that file is absent, directly from
/// `{name}_node_attributes.txt`. `{name}_graph_labels.txt` is optional.
pub fn parse_tudataset(root: &Path, name: &str) -> Result<GraphDataset> {
    let dir = root.join(name);
    let file_of = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };

    // graph indicator: node -> graph (both 1-based in the files)
    let ind_path = file_of("graph_indicator");
    let ind_lines = read_lines(&ind_path)?;
    if ind_lines.is_empty() {
        return Err(parse_err(&ind_path, 1, "empty graph indicator"));
    }
    let mut node_graph = Vec::with_capacity(ind_lines.len());
    let mut graph_count = 0usize;
    for (i, line) in ind_lines.iter().enumerate() {
        let g = parse_int(&ind_path, i + 1, line)?;
        if g < 1 {
            return Err(parse_err(&ind_path, i + 1, format!("graph id {g} is not 1-based")));
        }
        let g = (g - 1) as usize;
        graph_count = graph_count.max(g + 1);
        node_graph.push(g);
    }
    let total_nodes = node_graph.len();
    // local node index within its graph, in file order
    let mut graph_sizes = vec![0usize; graph_count];
    let mut local_index = Vec::with_capacity(total_nodes);
    for &g in &node_graph {
        local_index.push(graph_sizes[g]);
        graph_sizes[g] += 1;
    }
    if graph_sizes.iter().any(|&s| s == 0) {
        return Err(parse_err(&ind_path, total_nodes, "a graph id in range has no nodes"));
    }

    // node features: one-hot labels, or raw attributes as a fallback
    let labels_path = file_of("node_labels");
    let features: Vec<Vec<f64>> = if labels_path.exists() {
        let lines = read_lines(&labels_path)?;
        if lines.len() != total_nodes {
            return Err(parse_err(
                &labels_path,
                lines.len(),
                format!("{} node labels for {} nodes", lines.len(), total_nodes),
            ));
        }
        let mut values = Vec::with_capacity(total_nodes);
        for (i, line) in lines.iter().enumerate() {
            values.push(parse_int(&labels_path, i + 1, line)?);
        }
        let distinct: Vec<i64> = values.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let dim = distinct.len();
        values
            .iter()
            .map(|v| {
                let slot = distinct.binary_search(v).expect("value drawn from distinct set");
                let mut row = vec![0.0; dim];
                row[slot] = 1.0;
                row
            })
            .collect()
    } else {
        let attr_path = file_of("node_attributes");
        let lines = read_lines(&attr_path)?;
        if lines.len() != total_nodes {
            return Err(parse_err(
                &attr_path,
                lines.len(),
                format!("{} attribute rows for {} nodes", lines.len(), total_nodes),
            ));
        }
        let mut rows = Vec::with_capacity(total_nodes);
        let mut dim = None;
        for (i, line) in lines.iter().enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|t| parse_float(&attr_path, i + 1, t))
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(parse_err(
                        &attr_path,
                        i + 1,
                        format!("row has {} attributes, expected {}", row.len(), d),
                    ))
                }
                _ => {}
            }
            rows.push(row);
        }
        rows
    };
    let feat_dim = features[0].len();

    // edges: 1-based global ids, deduplicated to undirected pairs
    let a_path = file_of("A");
    let a_lines = read_lines(&a_path)?;
    let mut graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for (i, line) in a_lines.iter().enumerate() {
        let mut it = line.split(',');
        let (u_tok, v_tok) = match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => return Err(parse_err(&a_path, i + 1, "expected exactly two comma-separated ids")),
        };
        let u = parse_int(&a_path, i + 1, u_tok)?;
        let v = parse_int(&a_path, i + 1, v_tok)?;
        if u < 1 || v < 1 || u as usize > total_nodes || v as usize > total_nodes {
            return Err(parse_err(
                &a_path,
                i + 1,
                format!("node id out of range 1..={total_nodes}: ({u}, {v})"),
            ));
        }
        let (u, v) = ((u - 1) as usize, (v - 1) as usize);
        if node_graph[u] != node_graph[v] {
            return Err(parse_err(&a_path, i + 1, "edge connects nodes of different graphs"));
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            graph_edges[node_graph[u]].push((local_index[key.0], local_index[key.1]));
        }
    }

    // optional graph labels
    let glabels_path = file_of("graph_labels");
    let labels = if glabels_path.exists() {
        let lines = read_lines(&glabels_path)?;
        if lines.len() != graph_count {
            return Err(parse_err(
                &glabels_path,
                lines.len(),
                format!("{} graph labels for {} graphs", lines.len(), graph_count),
            ));
        }
        let mut out = Vec::with_capacity(graph_count);
        for (i, line) in lines.iter().enumerate() {
            out.push(parse_int(&glabels_path, i + 1, line)?);
        }
        Some(out)
    } else {
        None
    };

    let mut graphs = Vec::with_capacity(graph_count);
    let mut feature_rows: Vec<Vec<usize>> = vec![Vec::new(); graph_count];
    for (node, &g) in node_graph.iter().enumerate() {
        feature_rows[g].push(node);
    }
    for g in 0..graph_count {
        let n = graph_sizes[g];
        let mut x = Array2::zeros((n, feat_dim));
        for (local, &node) in feature_rows[g].iter().enumerate() {
            for t in 0..feat_dim {
                x[[local, t]] = features[node][t];
            }
        }
        graphs.push(Graph::new(n, std::mem::take(&mut graph_edges[g]), x)?);
    }
    GraphDataset::new(graphs, labels)
}

/// GIN-style feature propagation: repeats
/// `x'_i = (1 + eps) * x_i + sum_{j in N(i)} x_j` for `iters` rounds and
/// concatenates the features of every round (including the input), giving
/// an `n x (iters+1)*d` feature matrix on the same topology.
pub fn gin_preprocess(g: &Graph, iters: usize, eps: f64) -> Result<Graph> {
    let n = g.node_count();
    let d = g.feature_dim();
    let mut rounds = Vec::with_capacity(iters + 1);
    rounds.push(g.node_features().clone());
    for _ in 0..iters {
        let prev = rounds.last().unwrap();
        let mut next = prev.mapv(|v| (1.0 + eps) * v);
        for &(u, v) in g.edges() {
            for t in 0..d {
                next[[u, t]] += prev[[v, t]];
                if u != v {
                    next[[v, t]] += prev[[u, t]];
                }
            }
        }
        rounds.push(next);
    }
    let mut out = Array2::zeros((n, (iters + 1) * d));
    for (r, block) in rounds.iter().enumerate() {
        out.slice_mut(ndarray::s![.., r * d..(r + 1) * d]).assign(block);
    }
    Graph::new(n, g.edges().to_vec(), out)
}

/// Converts a 28x28 grayscale image into a uniform discrete distribution
/// over its nonzero pixels, each embedded as `[i/28, j/28, p(i,j)/256]`.
pub fn image_to_distribution(pixels: &Array2<u8>) -> Result<DiscreteDistribution> {
    if pixels.dim() != (28, 28) {
        return Err(Error::invalid(format!(
            "expected a 28x28 image, got {}x{}",
            pixels.nrows(),
            pixels.ncols()
        )));
    }
    let mut points = Vec::new();
    for i in 0..28 {
        for j in 0..28 {
            let p = pixels[[i, j]];
            if p > 0 {
                points.push([i as f64 / 28.0, j as f64 / 28.0, p as f64 / 256.0]);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::invalid("all-zero image has no distribution"));
    }
    let count = points.len();
    let mut samples = Array2::zeros((count, 3));
    for (r, p) in points.iter().enumerate() {
        for t in 0..3 {
            samples[[r, t]] = p[t];
        }
    }
    DiscreteDistribution::new(samples, Array1::from_elem(count, 1.0 / count as f64))
}

/// Deterministic synthetic corpus: node features drawn from `n_clusters`
/// Gaussian blobs in 2-d, node counts uniform in `nodes_range` (inclusive),
/// sparse random edges. Graph labels are the majority blob of each graph.
pub fn synth_blobs(
    n_graphs: usize,
    nodes_range: (usize, usize),
    n_clusters: usize,
    seed: u64,
) -> Result<GraphDataset> {
    synth_blobs_spread(n_graphs, nodes_range, n_clusters, seed, 0.05)
}

/// [`synth_blobs`] with an explicit per-blob standard deviation.
pub fn synth_blobs_spread(
    n_graphs: usize,
    nodes_range: (usize, usize),
    n_clusters: usize,
    seed: u64,
    std_dev: f64,
) -> Result<GraphDataset> {
    let (lo, hi) = nodes_range;
    if n_graphs == 0 || n_clusters == 0 || lo == 0 || hi < lo {
        return Err(Error::invalid("blob generator needs positive, ordered arguments"));
    }
    if std_dev < 0.0 {
        return Err(Error::invalid("standard deviation must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 2;
    let mut centers = Array2::zeros((n_clusters, dim));
    for c in 0..n_clusters {
        for t in 0..dim {
            centers[[c, t]] = rng.gen_range(-1.0..1.0);
        }
    }
    let mut graphs = Vec::with_capacity(n_graphs);
    let mut labels = Vec::with_capacity(n_graphs);
    for _ in 0..n_graphs {
        let n = rng.gen_range(lo..=hi);
        let mut x = Array2::zeros((n, dim));
        let mut counts = vec![0usize; n_clusters];
        for r in 0..n {
            let c = rng.gen_range(0..n_clusters);
            counts[c] += 1;
            for t in 0..dim {
                let noise: f64 = rng.sample(StandardNormal);
                x[[r, t]] = centers[[c, t]] + std_dev * noise;
            }
        }
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(0.3) {
                    edges.push((u, v));
                }
            }
        }
        let majority = counts
            .iter()
            .enumerate()
            .max_by_key(|&(_, c)| c)
            .map(|(i, _)| i as i64)
            .unwrap_or(0);
        labels.push(majority);
        graphs.push(Graph::new(n, edges, x)?);
    }
    GraphDataset::new(graphs, Some(labels))
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(reader: &mut impl IoRead) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads an IDX image file (big-endian magic `0x00000803`) into a list of
/// `rows x cols` u8 matrices.
pub fn read_idx_images(path: &Path) -> Result<Vec<Array2<u8>>> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut reader)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::invalid(format!(
            "bad IDX image magic {magic:#010x} in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut reader)? as usize;
    let rows = read_u32_be(&mut reader)? as usize;
    let cols = read_u32_be(&mut reader)? as usize;
    let mut images = Vec::with_capacity(count);
    let mut buf = vec![0u8; rows * cols];
    for _ in 0..count {
        reader.read_exact(&mut buf)?;
        images.push(
            Array2::from_shape_vec((rows, cols), buf.clone())
                .expect("buffer length matches dims"),
        );
    }
    Ok(images)
}

/// Reads an IDX label file (big-endian magic `0x00000801`).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut reader)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::invalid(format!(
            "bad IDX label magic {magic:#010x} in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut reader)? as usize;
    let mut labels = vec![0u8; count];
    reader.read_exact(&mut labels)?;
    Ok(labels)
}

/// Seeded subset sampling: picks `per_digit` indices for every distinct
/// label value (ascending), without replacement, in a deterministic order.
pub fn sample_per_digit(labels: &[u8], per_digit: usize, seed: u64) -> Result<Vec<usize>> {
    let distinct: BTreeSet<u8> = labels.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for digit in distinct {
        let mut pool: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == digit)
            .map(|(i, _)| i)
            .collect();
        if pool.len() < per_digit {
            return Err(Error::invalid(format!(
                "digit {digit} has only {} images, need {per_digit}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        pool.truncate(per_digit);
        pool.sort_unstable();
        picked.extend(pool);
    }
    Ok(picked)
}

const CACHE_MAGIC: &[u8; 8] = b"ASOTDS\x00\x01";

/// Writes preprocessed per-graph feature blocks to a versioned binary cache
/// (row-major little-endian f64), with optional graph labels.
pub fn save_feature_cache(
    path: &Path,
    features: &[Array2<f64>],
    labels: Option<&[i64]>,
) -> Result<()> {
    if features.is_empty() {
        return Err(Error::invalid("cache needs at least one feature block"));
    }
    let dim = features[0].ncols();
    if features.iter().any(|f| f.ncols() != dim) {
        return Err(Error::invalid("inconsistent feature dimension across blocks"));
    }
    if let Some(l) = labels {
        if l.len() != features.len() {
            return Err(Error::invalid("label count does not match block count"));
        }
    }
    let mut w = std::io::BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(features.len() as u64).to_le_bytes())?;
    w.write_all(&(dim as u64).to_le_bytes())?;
    w.write_all(&(labels.is_some() as u64).to_le_bytes())?;
    for f in features {
        w.write_all(&(f.nrows() as u64).to_le_bytes())?;
    }
    if let Some(l) = labels {
        for &v in l {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for f in features {
        for v in f.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache written by [`save_feature_cache`], bit-exactly.
pub fn load_feature_cache(path: &Path) -> Result<(Vec<Array2<f64>>, Option<Vec<i64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::invalid(format!(
            "not a feature cache (bad header) in {}",
            path.display()
        )));
    }
    let mut u64_buf = [0u8; 8];
    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut u64_buf)?;
        Ok(u64::from_le_bytes(u64_buf))
    };
    let count = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let has_labels = read_u64(&mut r)? != 0;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        rows.push(read_u64(&mut r)? as usize);
    }
    let labels = if has_labels {
        let mut l = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            l.push(i64::from_le_bytes(buf));
        }
        Some(l)
    } else {
        None
    };
    let mut features = Vec::with_capacity(count);
    for &n in &rows {
        let mut block = Array2::zeros((n, dim));
        for v in block.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        features.push(block);
    }
    Ok((features, labels))
}
