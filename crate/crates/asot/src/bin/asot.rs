//! Command-line front door: training runs, pairwise distance matrices
//! under every strategy, RMSE evaluation, the k-ablation sweep, and a
//! timing comparison across methods.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use asot::data::{parse_tudataset, synth_blobs, GraphDataset};
use asot::eval::{
    error_stats, read_matrix_csv, rmse_upper_triangle, timed, write_matrix_csv, EvalReport,
};
use asot::pipeline::{
    distance_matrix, load_checkpoint, preprocess_dataset, save_checkpoint, train, write_metadata,
    Method, RunConfig, Trained,
};
use asot::{Error, Result};

/// Environment variable naming the dataset root directory.
const DATA_ROOT_ENV: &str = "ASOT_DATA_ROOT";

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "asot",
    version,
    about = "Batched 1-Wasserstein distances over learned anchor spaces"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an anchor space and write its artifacts.
    Train(TrainArgs),
    /// Compute a pairwise distance matrix CSV.
    Dist(DistArgs),
    /// Compare an approximate distance matrix against ground truth.
    Rmse(RmseArgs),
    /// Sweep the anchor count k and report RMSE and timings per k.
    AblateK(AblateArgs),
    /// Time every requested method on one dataset.
    Bench(BenchArgs),
}

/// Flags mirroring RunConfig one-to-one, plus dataset selection. A config
/// file (TOML or JSON) may supply any of them; explicit flags win.
#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML or JSON file supplying any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset spec: `tud:NAME` (flat files under the data root) or
    /// `blobs:<graphs>:<min>-<max>:<clusters>:<seed>`.
    #[arg(long)]
    dataset: Option<String>,
    /// Root directory for TUDataset corpora; defaults to $ASOT_DATA_ROOT,
    /// then `data`.
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_graphs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    /// Worker threads for pairwise computation; 1 guarantees bit-identical
    /// output, 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory receiving anchors.json, checkpoint.json, loss_trace.csv,
    /// and train.meta.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DistArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output CSV path; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint from `train`; without it, learning methods train
    /// in-process first.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct RmseArgs {
    /// Approximate distance matrix CSV.
    #[arg(long)]
    approx: PathBuf,
    /// Ground-truth distance matrix CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated anchor counts, e.g. `2,4,8`.
    #[arg(long)]
    ks: String,
    /// Ground-truth matrix CSV; computed with ot-emd when omitted.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output CSV of `k,rmse,train_seconds,dist_seconds` rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated methods to time; defaults to all nine.
    #[arg(long)]
    methods: Option<String>,
    /// Output CSV of `method,train_seconds,dist_seconds,total_seconds`.
    #[arg(long)]
    out: PathBuf,
}

/// Optional config-file fields; identical names to the flags.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    data_root: Option<PathBuf>,
    method: Option<String>,
    k: Option<usize>,
    epsilon: Option<f64>,
    iterations: Option<usize>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_graphs: Option<usize>,
    learning_rate: Option<f64>,
    layers: Option<usize>,
    threads: Option<usize>,
}

struct Resolved {
    cfg: RunConfig,
    dataset: Option<String>,
    data_root: PathBuf,
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config parse: {e}")))
    } else {
        toml::from_str(&text).map_err(|e| Error::invalid(format!("config parse: {e}")))
    }
}

fn resolve(common: &CommonArgs) -> Result<Resolved> {
    let file = match &common.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };
    let mut cfg = RunConfig::default();
    let method_name = common.method.clone().or(file.method);
    if let Some(name) = &method_name {
        cfg.method = Method::from_str(name)?;
    }
    macro_rules! pick {
        ($field:ident) => {
            if let Some(v) = common.$field.or(file.$field) {
                cfg.$field = v;
            }
        };
    }
    pick!(k);
    pick!(epsilon);
    pick!(iterations);
    pick!(seed);
    pick!(epochs);
    pick!(batch_graphs);
    pick!(learning_rate);
    pick!(layers);
    pick!(threads);
    let data_root = common
        .data_root
        .clone()
        .or(file.data_root)
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"));
    Ok(Resolved {
        cfg,
        dataset: common.dataset.clone().or(file.dataset),
        data_root,
    })
}

fn init_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parses a dataset spec into a graph corpus.
fn load_dataset(spec: &str, root: &Path) -> Result<GraphDataset> {
    if let Some(name) = spec.strip_prefix("tud:") {
        return parse_tudataset(root, name);
    }
    if let Some(rest) = spec.strip_prefix("blobs:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::invalid(
                "blobs spec is blobs:<graphs>:<min>-<max>:<clusters>:<seed>",
            ));
        }
        let graphs: usize = parts[0]
            .parse()
            .map_err(|_| Error::invalid("blobs: graph count must be an integer"))?;
        let (lo, hi) = parts[1]
            .split_once('-')
            .ok_or_else(|| Error::invalid("blobs: node range must be <min>-<max>"))?;
        let lo: usize = lo.parse().map_err(|_| Error::invalid("blobs: bad min nodes"))?;
        let hi: usize = hi.parse().map_err(|_| Error::invalid("blobs: bad max nodes"))?;
        let clusters: usize = parts[2]
            .parse()
            .map_err(|_| Error::invalid("blobs: cluster count must be an integer"))?;
        let seed: u64 = parts[3].parse().map_err(|_| Error::invalid("blobs: bad seed"))?;
        return synth_blobs(graphs, (lo, hi), clusters, seed);
    }
    Err(Error::invalid(format!(
        "unknown dataset spec {spec:?}; expected tud:NAME or blobs:..."
    )))
}

fn require_dataset(resolved: &Resolved) -> Result<Vec<ndarray::Array2<f64>>> {
    let spec = resolved
        .dataset
        .as_deref()
        .ok_or_else(|| Error::invalid("--dataset is required"))?;
    let ds = load_dataset(spec, &resolved.data_root)?;
    preprocess_dataset(&ds)
}

fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,loss")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(w, "{i},{}", asot::eval::format_sig12(*v))?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let resolved = resolve(&args.common)?;
    init_threads(resolved.cfg.threads)?;
    if !resolved.cfg.method.is_learning() {
        return Err(Error::invalid(format!(
            "{} has nothing to train",
            resolved.cfg.method
        )));
    }
    let features = require_dataset(&resolved)?;
    let (result, train_seconds) = timed(|| train(&features, &resolved.cfg));
    let (trained, trace) = result?;
    std::fs::create_dir_all(&args.out_dir)?;
    let anchors_path = args.out_dir.join("anchors.json");
    let ckpt_path = args.out_dir.join("checkpoint.json");
    let trace_path = args.out_dir.join("loss_trace.csv");
    trained.space.save_json(&anchors_path)?;
    save_checkpoint(&ckpt_path, &trained, &resolved.cfg)?;
    write_trace_csv(&trace_path, &trace)?;
    write_metadata(
        &args.out_dir.join("train.meta.json"),
        &resolved.cfg,
        resolved.dataset.as_deref(),
        (Some(train_seconds), None),
        &[&anchors_path, &ckpt_path, &trace_path],
    )?;
    println!(
        "trained {} (k={}) in {train_seconds:.3}s -> {}",
        resolved.cfg.method,
        resolved.cfg.k,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_dist(args: &DistArgs) -> Result<()> {
    let resolved = resolve(&args.common)?;
    init_threads(resolved.cfg.threads)?;
    let features = require_dataset(&resolved)?;
    let (trained, train_seconds): (Option<Trained>, f64) = if resolved.cfg.method.is_learning() {
        match &args.checkpoint {
            Some(path) => (Some(load_checkpoint(path)?), 0.0),
            None => {
                let (result, secs) = timed(|| train(&features, &resolved.cfg));
                (Some(result?.0), secs)
            }
        }
    } else {
        (None, 0.0)
    };
    let (result, dist_seconds) =
        timed(|| distance_matrix(&features, &resolved.cfg, trained.as_ref()));
    let matrix = result?;
    write_matrix_csv(&args.out, &matrix)?;
    let meta_path = args.out.with_extension("meta.json");
    let mut artifacts: Vec<&Path> = vec![&args.out];
    if let Some(ckpt) = &args.checkpoint {
        artifacts.push(ckpt);
    }
    write_metadata(
        &meta_path,
        &resolved.cfg,
        resolved.dataset.as_deref(),
        (Some(train_seconds), Some(dist_seconds)),
        &artifacts,
    )?;
    println!(
        "{} distance matrix {}x{} in {train_seconds:.3}s + {dist_seconds:.3}s -> {}",
        resolved.cfg.method,
        matrix.nrows(),
        matrix.ncols(),
        args.out.display()
    );
    Ok(())
}

fn cmd_rmse(args: &RmseArgs) -> Result<()> {
    let approx = read_matrix_csv(&args.approx)?;
    let truth = read_matrix_csv(&args.truth)?;
    let rmse = rmse_upper_triangle(&approx, &truth)?;
    let stats = error_stats(&approx, &truth)?;
    let report = EvalReport {
        rmse,
        stats,
        train_seconds: 0.0,
        dist_seconds: 0.0,
        method: String::new(),
        seed: 0,
        k: 0,
    };
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;
        std::fs::write(out, json)?;
    }
    println!("rmse {rmse}");
    Ok(())
}

fn parse_k_list(ks: &str) -> Result<Vec<usize>> {
    let list: Vec<usize> = ks
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad k value {t:?}")))
        })
        .collect::<Result<_>>()?;
    if list.is_empty() || list.contains(&0) {
        return Err(Error::invalid("k list must be nonempty positive integers"));
    }
    Ok(list)
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    use std::io::Write;
    let resolved = resolve(&args.common)?;
    init_threads(resolved.cfg.threads)?;
    if !resolved.cfg.method.is_learning() {
        return Err(Error::invalid("ablate-k needs a learning method"));
    }
    let ks = parse_k_list(&args.ks)?;
    let features = require_dataset(&resolved)?;
    let truth = match &args.truth {
        Some(path) => read_matrix_csv(path)?,
        None => {
            let emd_cfg = RunConfig {
                method: Method::OtEmd,
                ..resolved.cfg.clone()
            };
            distance_matrix(&features, &emd_cfg, None)?
        }
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(w, "k,rmse,train_seconds,dist_seconds")?;
    for &k in &ks {
        let cfg = RunConfig {
            k,
            ..resolved.cfg.clone()
        };
        let run = || -> Result<(f64, f64, f64)> {
            let (result, train_secs) = timed(|| train(&features, &cfg));
            let (trained, _) = result?;
            let (result, dist_secs) = timed(|| distance_matrix(&features, &cfg, Some(&trained)));
            let rmse = rmse_upper_triangle(&result?, &truth)?;
            Ok((rmse, train_secs, dist_secs))
        };
        match run() {
            Ok((rmse, train_secs, dist_secs)) => {
                writeln!(
                    w,
                    "{k},{},{train_secs:.6},{dist_secs:.6}",
                    asot::eval::format_sig12(rmse)
                )?;
            }
            Err(e) => {
                eprintln!("k={k} failed: {e}");
                writeln!(w, "{k},nan,nan,nan")?;
            }
        }
    }
    w.flush()?;
    println!("ablation over k={{{}}} -> {}", args.ks, args.out.display());
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    use std::io::Write;
    let resolved = resolve(&args.common)?;
    init_threads(resolved.cfg.threads)?;
    let methods: Vec<Method> = match &args.methods {
        Some(list) => list
            .split(',')
            .map(|t| Method::from_str(t.trim()))
            .collect::<Result<_>>()?,
        None => Method::ALL.to_vec(),
    };
    let features = require_dataset(&resolved)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(w, "method,train_seconds,dist_seconds,total_seconds")?;
    for method in methods {
        let cfg = RunConfig {
            method,
            ..resolved.cfg.clone()
        };
        let run = || -> Result<(f64, f64)> {
            let (trained, train_secs) = if method.is_learning() {
                let (result, secs) = timed(|| train(&features, &cfg));
                (Some(result?.0), secs)
            } else {
                (None, 0.0)
            };
            let (result, dist_secs) = timed(|| distance_matrix(&features, &cfg, trained.as_ref()));
            result?;
            Ok((train_secs, dist_secs))
        };
        match run() {
            Ok((train_secs, dist_secs)) => {
                writeln!(
                    w,
                    "{method},{train_secs:.6},{dist_secs:.6},{:.6}",
                    train_secs + dist_secs
                )?;
                eprintln!("{method}: {train_secs:.3}s + {dist_secs:.3}s");
            }
            Err(e) => {
                eprintln!("{method} failed: {e}");
                writeln!(w, "{method},nan,nan,nan")?;
            }
        }
    }
    w.flush()?;
    println!("bench -> {}", args.out.display());
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Parse { .. } | Error::Io(_) => EXIT_DATA,
        Error::Numeric(_) | Error::Infeasible(_) => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendered help/error, but normalize the exit code
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = match &cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Dist(args) => cmd_dist(args),
        Cmd::Rmse(args) => cmd_rmse(args),
        Cmd::AblateK(args) => cmd_ablate(args),
        Cmd::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
