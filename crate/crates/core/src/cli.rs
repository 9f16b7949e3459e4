//! `tandemnet` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha1::{Digest, Sha1};

use crate::codec::encode_constant_current;
use crate::data::config::{Task, TrainConfig};
use crate::data::{load_checkpoint, load_mnist, save_checkpoint, shuffle_batches, Dataset};
use crate::error::{Result, TandemError};
use crate::metrics::{fidelity, layer_mismatch, metrics_csv, synops_report, write_csv, MetricRow};
use crate::net::{DecodeMode, TandemNetwork};
use crate::train::{evaluate, metric_name, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tandemnet", version, about = "Tandem-trained spiking neural networks")]
struct Cli {
    /// Worker threads for spiking simulation (TANDEMNET_THREADS takes precedence).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network from a key=value config file.
    Train { config: PathBuf },
    /// Evaluate a checkpoint with pure spiking inference on the test split.
    Eval(EvalArgs),
    /// Write spike-count fidelity and layer mismatch reports.
    Analyze(AnalysisArgs),
    /// Report synaptic operations of the spiking network against its analog twin.
    Synops(AnalysisArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecodeArg {
    Membrane,
    Count,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Classify,
    Reconstruct,
}

#[derive(Args, Debug)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    decode: Option<DecodeArg>,
    /// Evaluate at these window sizes instead of the trained one.
    #[arg(long = "T-override", value_delimiter = ',', num_args = 1..)]
    t_override: Vec<usize>,
    #[arg(long, value_enum, default_value = "classify")]
    task: TaskArg,
    /// Evaluate only the first N test samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Also write the report to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalysisArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Seed choosing the evaluation batch from the test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for CSV reports (defaults to the checkpoint's directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &TandemError) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = std::env::var("TANDEMNET_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(cli.threads)
        .max(1);
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Train { config } => cmd_train(&config, &mut stdout),
        Command::Eval(a) => cmd_eval(&a, &mut stdout),
        Command::Analyze(a) => cmd_analyze(&a, &mut stdout),
        Command::Synops(a) => cmd_synops(&a, &mut stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn out_err(e: std::io::Error) -> TandemError {
    TandemError::io("<stdout>", e)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Git blob hash: SHA-1 of `"blob <len>\0" ++ content`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().fold(String::with_capacity(40), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.tdnn";
pub const COMPLETION_FILE: &str = "completed.txt";

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TandemError::io(path, e))
}

fn cmd_train(config: &Path, out: &mut impl std::io::Write) -> Result<()> {
    let raw = fs::read(config).map_err(|e| TandemError::io(config, e))?;
    let text =
        String::from_utf8(raw.clone()).map_err(|_| TandemError::Config("config is not UTF-8".into()))?;
    let cfg = TrainConfig::parse(&text)?;
    let data = load_mnist(&cfg.dataset_dir)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| TandemError::io(&cfg.out_dir, e))?;

    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    let ckpt_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let mut manifest = String::new();
    let _ = writeln!(manifest, "config_path={}", config.display());
    let _ = writeln!(manifest, "config_hash={}", git_blob_hash(&raw));
    let _ = writeln!(manifest, "seed={}", cfg.seed);
    let _ = writeln!(manifest, "start_unix={}", unix_now());
    let _ = writeln!(manifest, "metrics={}", metrics_path.display());
    let _ = writeln!(manifest, "checkpoint={}", ckpt_path.display());
    manifest.push_str("[resolved]\n");
    manifest.push_str(&cfg.to_kv_string());
    write_file(&cfg.out_dir.join(MANIFEST_FILE), &manifest)?;

    let mut rows: Vec<MetricRow> = Vec::new();
    write_file(&metrics_path, &metrics_csv(&rows))?;
    let outcome = train(&cfg, &data, |stats, net| {
        rows.extend(stats.rows(cfg.task));
        write_file(&metrics_path, &metrics_csv(&rows))?;
        save_checkpoint(net, &ckpt_path)?;
        writeln!(
            out,
            "epoch {}: train_loss={:.6} test_loss={:.6} test_{}={:.6}",
            stats.epoch,
            stats.train_loss,
            stats.test_loss,
            metric_name(cfg.task),
            stats.test_metric
        )
        .map_err(out_err)
    })?;
    save_checkpoint(&outcome.network, &ckpt_path)?;
    let last = outcome.history.last().map_or(f64::NAN, |s| s.test_metric);
    write_file(
        &cfg.out_dir.join(COMPLETION_FILE),
        &format!(
            "end_unix={}\nfinal_test_{}={last}\n",
            unix_now(),
            metric_name(cfg.task)
        ),
    )
}

fn load_inputs(checkpoint: &Path, data: &Path) -> Result<(TandemNetwork, Dataset)> {
    let net = load_checkpoint(checkpoint)?;
    let data = load_mnist(data)?;
    if data.shape.features() != net.input_size() {
        return Err(TandemError::Data(format!(
            "checkpoint expects {} inputs, dataset has {}",
            net.input_size(),
            data.shape.features()
        )));
    }
    Ok((net, data))
}

fn cmd_eval(a: &EvalArgs, out: &mut impl std::io::Write) -> Result<()> {
    let (mut net, mut data) = load_inputs(&a.checkpoint, &a.data)?;
    if let Some(d) = a.decode {
        net.set_decode(match d {
            DecodeArg::Membrane => DecodeMode::Membrane,
            DecodeArg::Count => DecodeMode::SpikeCount,
        });
    }
    if let Some(n) = a.limit {
        data.test.truncate(n);
    }
    let task = match a.task {
        TaskArg::Classify => Task::Classify,
        TaskArg::Reconstruct => Task::Reconstruct,
    };
    let windows = if a.t_override.is_empty() {
        vec![net.window()]
    } else {
        a.t_override.clone()
    };
    let mut report = String::from("T,metric,value\n");
    for &t in &windows {
        net.set_window(t)?;
        let r = evaluate(&net, &data.test, task, 256)?;
        let _ = writeln!(report, "{t},{},{}", metric_name(task), r.metric);
        let _ = writeln!(report, "{t},loss,{}", r.loss);
        for (class, ok, n) in r.per_class() {
            let _ = writeln!(report, "{t},class_{class}_accuracy,{}", ok as f64 / n as f64);
        }
    }
    out.write_all(report.as_bytes()).map_err(out_err)?;
    if let Some(p) = &a.out {
        write_file(p, &report)?;
    }
    Ok(())
}

/// A seeded random batch of the test split, encoded for `net`.
fn analysis_batch(
    net: &TandemNetwork,
    data: &Dataset,
    size: usize,
    seed: u64,
) -> Result<crate::codec::EncodedBatch> {
    if data.test.is_empty() {
        return Err(TandemError::Data("test split is empty".into()));
    }
    let idx = shuffle_batches(data.test.len(), size.max(1), seed)?.swap_remove(0);
    let (x, _) = data.test.gather(&idx);
    encode_constant_current(&x, net.window())
}

fn report_dir(a: &AnalysisArgs) -> Result<PathBuf> {
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a
            .checkpoint
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    fs::create_dir_all(&dir).map_err(|e| TandemError::io(&dir, e))?;
    Ok(dir)
}

/// `(lo, hi, count)` rows of a fixed-width histogram over `[lo, hi)`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

fn hist_rows(h: &[(f64, f64, usize)]) -> Vec<Vec<String>> {
    h.iter()
        .map(|(a, b, c)| vec![a.to_string(), b.to_string(), c.to_string()])
        .collect()
}

pub const ANGLE_HIST_FILE: &str = "angle_hist.csv";
pub const PCC_HIST_FILE: &str = "pcc_hist.csv";
pub const MISMATCH_FILE: &str = "mismatch.csv";
pub const ANALYSIS_SUMMARY_FILE: &str = "analysis_summary.csv";
pub const SYNOPS_FILE: &str = "synops.csv";

fn cmd_analyze(a: &AnalysisArgs, out: &mut impl std::io::Write) -> Result<()> {
    let (net, data) = load_inputs(&a.checkpoint, &a.data)?;
    let batch = analysis_batch(&net, &data, a.batch, a.seed)?;
    let dir = report_dir(a)?;
    let fid = fidelity(&net, &batch)?;
    let angles: Vec<f64> = fid.angles.iter().map(|x| x.2).collect();
    let pccs: Vec<f64> = fid.pccs.iter().map(|x| x.2).collect();
    write_csv(
        &dir.join(ANGLE_HIST_FILE),
        "bin_lo,bin_hi,count",
        &hist_rows(&histogram(&angles, 0.0, 90.0, 18)),
    )?;
    write_csv(
        &dir.join(PCC_HIST_FILE),
        "bin_lo,bin_hi,count",
        &hist_rows(&histogram(&pccs, -1.0, 1.0, 40)),
    )?;
    let mismatch = layer_mismatch(&net, &batch)?;
    let rows: Vec<Vec<String>> = mismatch
        .iter()
        .enumerate()
        .map(|(l, m)| vec![(l + 1).to_string(), m.to_string()])
        .collect();
    write_csv(&dir.join(MISMATCH_FILE), "layer,mean_abs_count_diff", &rows)?;
    let summary = vec![
        vec!["mean_angle".into(), fid.mean_angle().to_string()],
        vec!["median_pcc".into(), fid.median_pcc().to_string()],
        vec!["skipped".into(), fid.skipped.to_string()],
    ];
    write_csv(&dir.join(ANALYSIS_SUMMARY_FILE), "metric,value", &summary)?;
    writeln!(
        out,
        "mean_angle={:.4}\nmedian_pcc={:.6}",
        fid.mean_angle(),
        fid.median_pcc()
    )
    .map_err(out_err)?;
    for (l, m) in mismatch.iter().enumerate() {
        writeln!(out, "mismatch_layer_{}={m:.6}", l + 1).map_err(out_err)?;
    }
    Ok(())
}

fn cmd_synops(a: &AnalysisArgs, out: &mut impl std::io::Write) -> Result<()> {
    let (net, data) = load_inputs(&a.checkpoint, &a.data)?;
    let batch = analysis_batch(&net, &data, a.batch, a.seed)?;
    let r = synops_report(&net, &batch)?;
    let mut rows = vec![
        vec!["snn_total".to_string(), r.snn_total.to_string()],
        vec!["ann_total".to_string(), r.ann_total.to_string()],
        vec!["ratio".to_string(), r.ratio.to_string()],
    ];
    for (l, rate) in r.per_layer.iter().enumerate() {
        rows.push(vec![format!("rate_layer_{}", l + 1), rate.to_string()]);
    }
    for row in &rows {
        writeln!(out, "{}={}", row[0], row[1]).map_err(out_err)?;
    }
    write_csv(&report_dir(a)?.join(SYNOPS_FILE), "metric,value", &rows)
}
