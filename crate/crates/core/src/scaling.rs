//! Thread-scaling benchmark: the same fixed-length training run at several
//! worker counts, with outputs checked for bitwise equality before any
//! timing is reported.
//!
//! Each timed repeat covers the full epoch loop (update, training loss, and
//! validation pass). Pool start-up happens once per thread count, outside the
//! timed region.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::HdiDataset;
use crate::error::{Error, Result};
use crate::model::{init_factors, FactorState};
use crate::seed;
use crate::train::{train_with, FirstOrder, MiniHes, OptimizerConfig, OptimizerKind, TrainReport, UpdateRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub threads: usize,
    pub median_seconds: f64,
    pub std_seconds: f64,
    /// Median of the baseline row divided by this row's median.
    pub speedup: f64,
    pub seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub dataset: String,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub repeats: usize,
    pub baseline_threads: usize,
    pub rows: Vec<SpeedupRow>,
}

impl SpeedupReport {
    /// Columns `Dataset,Thread,Time,Speedup,Std`; times are median seconds.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["Dataset", "Thread", "Time", "Speedup", "Std"])?;
        for r in &self.rows {
            w.write_record([
                self.dataset.clone(),
                r.threads.to_string(),
                format!("{:.3}", r.median_seconds),
                format!("{:.2}", r.speedup),
                format!("{:.3}", r.std_seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row(&self, threads: usize) -> Option<&SpeedupRow> {
        self.rows.iter().find(|r| r.threads == threads)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// One fixed-length run at `threads` workers, returning the final snapshot
/// and report. Early stopping is disabled.
pub fn fixed_run(
    train: &HdiDataset,
    val: &HdiDataset,
    config: &OptimizerConfig,
    threads: usize,
) -> Result<(FactorState, TrainReport)> {
    let config = fixed_config(config, threads);
    let exec = config.executor(train)?;
    run_once(train, val, &config, &exec).map(|(s, r, _)| (s, r))
}

fn fixed_config(config: &OptimizerConfig, threads: usize) -> OptimizerConfig {
    OptimizerConfig {
        threads,
        patience: usize::MAX,
        ..config.clone()
    }
}

fn run_once(
    train: &HdiDataset,
    val: &HdiDataset,
    config: &OptimizerConfig,
    exec: &crate::parallel::Executor,
) -> Result<(FactorState, TrainReport, f64)> {
    let init = init_factors(
        train.num_users(),
        train.num_items(),
        config.f,
        seed::derive(config.seed, seed::INIT),
    )?;
    let mut rule: Box<dyn UpdateRule> = match config.optimizer {
        OptimizerKind::MiniHes => Box::new(MiniHes::new(config)?),
        _ => Box::new(FirstOrder::new(config)?),
    };
    let started = Instant::now();
    let (state, report) = train_with(rule.as_mut(), init, train, val, None, config, exec)?;
    Ok((state, report, started.elapsed().as_secs_f64()))
}

/// Times `config.max_epochs` epochs at every thread count, `repeats` times each.
/// Fails if any run's factors or per-epoch values differ from the first run.
pub fn bench_threads(
    dataset: &str,
    train: &HdiDataset,
    val: &HdiDataset,
    config: &OptimizerConfig,
    thread_counts: &[usize],
    repeats: usize,
) -> Result<SpeedupReport> {
    if thread_counts.is_empty() {
        return Err(Error::Config("need at least one thread count".into()));
    }
    if repeats < 3 {
        return Err(Error::Config(format!("need at least 3 repeats, got {repeats}")));
    }
    let mut reference: Option<(FactorState, Vec<u64>)> = None;
    let mut rows = Vec::with_capacity(thread_counts.len());
    for &threads in thread_counts {
        let config = fixed_config(config, threads);
        config.validate()?;
        let exec = config.executor(train)?;
        let mut seconds = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let (state, report, elapsed) = run_once(train, val, &config, &exec)?;
            let bits = report.value_bits();
            match &reference {
                None => reference = Some((state, bits)),
                Some((ref_state, ref_bits)) => {
                    let same_state = ref_state
                        .values()
                        .iter()
                        .zip(state.values())
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same_state || *ref_bits != bits {
                        return Err(Error::ThreadMismatch {
                            baseline: thread_counts[0],
                            other: threads,
                        });
                    }
                }
            }
            seconds.push(elapsed);
        }
        rows.push(SpeedupRow {
            threads,
            median_seconds: median(&seconds),
            std_seconds: std_dev(&seconds),
            speedup: 1.0,
            seconds,
        });
    }
    let base = rows[0].median_seconds;
    for r in &mut rows {
        r.speedup = base / r.median_seconds;
    }
    Ok(SpeedupReport {
        dataset: dataset.to_owned(),
        optimizer: config.optimizer,
        epochs: config.max_epochs,
        repeats,
        baseline_threads: thread_counts[0],
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::LowRank;

    #[test]
    fn stats_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_count_has_unit_speedup() {
        let data = LowRank {
            num_users: 30,
            num_items: 20,
            rank: 2,
            density: 0.3,
            noise_sigma: 0.01,
            seed: 1,
        }
        .generate()
        .unwrap();
        let (train, val, _) = crate::data::split_dataset(&data, [0.6, 0.2, 0.2], 3).unwrap();
        let config = OptimizerConfig {
            f: 2,
            max_epochs: 2,
            ..Default::default()
        };
        let report = bench_threads("tiny", &train, &val, &config, &[2], 3).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].speedup, 1.0);
        assert_eq!(report.rows[0].seconds.len(), 3);
        assert!(bench_threads("tiny", &train, &val, &config, &[2], 2).is_err());
        assert!(bench_threads("tiny", &train, &val, &config, &[], 3).is_err());

        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("Dataset,Thread,Time,Speedup,Std\ntiny,2,"), "{text}");
    }
}
