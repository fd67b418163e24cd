mod manifest;
mod options;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use minihes_core::data::{build_aligned, parse_records};
use minihes_core::synth::LowRank;
use minihes_core::verify::{run_suite, VerifyOptions};
use minihes_core::{bench_threads, parse_ratings, seed, split_dataset, train, Delimiter, HdiDataset};
use serde::Serialize;

use manifest::{write_json, RunManifest};
use options::OptimizerFlags;

#[derive(Debug, Parser)]
#[command(
    name = "minihes",
    version,
    about = "Block-diagonal Gauss-Newton latent factor training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shuffle a rating file into train/validation/test files
    Split(SplitArgs),
    /// Train a model and write report, trace, factors, and manifest
    Train(TrainArgs),
    /// Check the kernels against dense oracles on random tiny instances
    Verify(VerifyArgs),
    /// Time fixed-length runs at several thread counts
    Bench(BenchArgs),
}

#[derive(Debug, clap::Args)]
struct SplitArgs {
    /// Rating file: one `user item rating` record per line
    #[arg(long)]
    input: PathBuf,
    /// Train, validation, and test fractions
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// auto, comma, tab, whitespace, or ::
    #[arg(long, default_value_t = Delimiter::Auto)]
    delimiter: Delimiter,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = Delimiter::Auto)]
    delimiter: Delimiter,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    optimizer: OptimizerFlags,
}

#[derive(Debug, clap::Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 6)]
    max_users: usize,
    #[arg(long, default_value_t = 6)]
    max_items: usize,
    #[arg(long, default_value_t = 4)]
    max_f: usize,
    /// Directory for verify.json
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    corrupt_operator: bool,
}

#[derive(Debug, clap::Args)]
struct BenchArgs {
    /// Rating file, split 6:2:2 with the run seed; omit for synthetic data
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = Delimiter::Auto)]
    delimiter: Delimiter,
    #[arg(long, default_value_t = 20_000)]
    synthetic_users: usize,
    #[arg(long, default_value_t = 5_000)]
    synthetic_items: usize,
    #[arg(long, default_value_t = 0.01)]
    synthetic_density: f64,
    /// Thread counts to time; the first is the speedup baseline
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    optimizer: OptimizerFlags,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_dataset(path: &Path, delimiter: Delimiter) -> Result<HdiDataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_ratings(BufReader::new(file), delimiter).with_context(|| format!("reading {}", path.display()))
}

fn write_dataset(path: &Path, data: &HdiDataset) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    data.write_canonical(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SplitConfig {
    ratios: [f64; 3],
    delimiter: String,
}

fn split(a: SplitArgs) -> Result<ExitCode> {
    let ratios: [f64; 3] = a.ratios.as_slice().try_into().context("need exactly three ratios")?;
    let data = read_dataset(&a.input, a.delimiter)?;
    let split_seed = seed::derive(a.seed, seed::SPLIT);
    let (tr, va, te) = split_dataset(&data, ratios, split_seed)?;
    create_dir(&a.out)?;

    let config = SplitConfig {
        ratios,
        delimiter: a.delimiter.to_string(),
    };
    let mut m = RunManifest::new("split", config, a.seed)?;
    m.split_seed = Some(split_seed);
    m.dataset("input", &a.input, data.len())?;
    for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
        let path = a.out.join(format!("{name}.tsv"));
        write_dataset(&path, part)?;
        m.dataset(name, &path, part.len())?;
        m.artifact(name, &path);
        println!("{name}: {} entries -> {}", part.len(), path.display());
    }
    m.write(&a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let config = a.optimizer.resolve(a.threads)?;
    let mut paths = vec![&a.train, &a.val];
    paths.extend(&a.test);
    let mut records = Vec::new();
    for p in &paths {
        let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        records.push(
            parse_records(BufReader::new(file), a.delimiter).with_context(|| format!("reading {}", p.display()))?,
        );
    }
    let sets = build_aligned(records)?;
    let (tr, va, te) = (&sets[0], &sets[1], sets.get(2));

    let (best, report) = train(tr, va, te, &config)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("train", &config, config.seed)?;
    for (role, path, d) in [("train", &a.train, tr), ("val", &a.val, va)] {
        m.dataset(role, path, d.len())?;
    }
    if let (Some(path), Some(d)) = (&a.test, te) {
        m.dataset("test", path, d.len())?;
    }

    let report_path = a.out.join("report.json");
    write_json(&report_path, &report)?;
    m.artifact("report", &report_path);
    let trace_path = a.out.join("trace.csv");
    report.write_trace_csv(BufWriter::new(File::create(&trace_path)?))?;
    m.artifact("trace", &trace_path);
    let factors_path = a.out.join("factors.bin");
    let mut w = BufWriter::new(File::create(&factors_path)?);
    best.write_snapshot(&mut w)?;
    w.flush()?;
    m.artifact("factors", &factors_path);
    m.write(&a.out)?;

    println!(
        "{}: {} epochs ({:?}), best epoch {}, validation {} {:.4}",
        config.optimizer,
        report.epochs_run,
        report.stop_reason,
        report.best_epoch,
        config.metric,
        report.best_validation
    );
    if let (Some(rmse), Some(mae)) = (report.test_rmse, report.test_mae) {
        println!("test RMSE {rmse:.4} MAE {mae:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let options = VerifyOptions {
        seed: a.seed,
        instances: a.instances,
        max_users: a.max_users,
        max_items: a.max_items,
        max_f: a.max_f,
        corrupt_operator: a.corrupt_operator,
    };
    let report = run_suite(&options)?;
    for c in &report.checks {
        let tag = if c.passed { "ok  " } else { "FAIL" };
        println!(
            "{tag} {:<48} max error {:.3e} (tolerance {:.0e})",
            c.name, c.max_error, c.tolerance
        );
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verification failed");
        Ok(ExitCode::FAILURE)
    }
}

#[derive(Serialize)]
struct BenchConfig<'a> {
    optimizer: &'a minihes_core::OptimizerConfig,
    threads: &'a [usize],
    repeats: usize,
    synthetic: Option<(usize, usize, f64)>,
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    if a.threads.is_empty() {
        bail!("need at least one thread count");
    }
    let mut config = a.optimizer.resolve(None)?;
    if a.optimizer.max_epochs.is_none() {
        config.max_epochs = 2;
    }
    let (name, data, synthetic) = match &a.input {
        Some(path) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem, read_dataset(path, a.delimiter)?, None)
        }
        None => {
            let gen = LowRank {
                num_users: a.synthetic_users,
                num_items: a.synthetic_items,
                rank: 5,
                density: a.synthetic_density,
                noise_sigma: 0.1,
                seed: config.seed,
            };
            (
                "synthetic".to_owned(),
                gen.generate()?,
                Some((gen.num_users, gen.num_items, gen.density)),
            )
        }
    };
    let split_seed = seed::derive(config.seed, seed::SPLIT);
    let (tr, va, _) = split_dataset(&data, [0.6, 0.2, 0.2], split_seed)?;
    let report = bench_threads(&name, &tr, &va, &config, &a.threads, a.repeats)?;

    create_dir(&a.out)?;
    let bench_config = BenchConfig {
        optimizer: &config,
        threads: &a.threads,
        repeats: a.repeats,
        synthetic,
    };
    let mut m = RunManifest::new("bench", &bench_config, config.seed)?;
    m.split_seed = Some(split_seed);
    if let Some(path) = &a.input {
        m.dataset("input", path, data.len())?;
    }
    let csv_path = a.out.join("speedup.csv");
    report.write_csv(BufWriter::new(File::create(&csv_path)?))?;
    m.artifact("speedup_csv", &csv_path);
    let json_path = a.out.join("speedup.json");
    write_json(&json_path, &report)?;
    m.artifact("speedup_json", &json_path);
    m.write(&a.out)?;

    println!("Dataset,Thread,Time,Speedup,Std");
    for r in &report.rows {
        println!(
            "{name},{},{:.3},{:.2},{:.3}",
            r.threads, r.median_seconds, r.speedup, r.std_seconds
        );
    }
    Ok(ExitCode::SUCCESS)
}
