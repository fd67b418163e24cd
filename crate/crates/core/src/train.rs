//! Training loops: the block Gauss-Newton (Mini-Hes) update and full-batch
//! first-order baselines, sharing one early-stopping driver.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cg::{solve_all, CgSettings};
use crate::curvature::BlockOperatorContext;
use crate::data::HdiDataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, gradient_block, init_factors, loss, BlockVector, FactorState, Layout, Metrics};
use crate::parallel::{Executor, WorkPartition};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    MiniHes,
    Sgd,
    Adam,
    Yogi,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mini-hes" | "minihes" | "mini_hes" => Ok(OptimizerKind::MiniHes),
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "yogi" => Ok(OptimizerKind::Yogi),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::MiniHes => "mini-hes",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Yogi => "yogi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Rmse,
    Mae,
}

impl Metric {
    pub fn pick(self, m: Metrics) -> f64 {
        match self {
            Metric::Rmse => m.rmse,
            Metric::Mae => m.mae,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(Metric::Rmse),
            "mae" => Ok(Metric::Mae),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub optimizer: OptimizerKind,
    /// Latent dimension.
    pub f: usize,
    /// Tikhonov constant, charged once per observed entry.
    pub lambda: f64,
    /// Damping added to every curvature block (Mini-Hes only).
    pub gamma: f64,
    /// Relative CG residual tolerance (Mini-Hes only).
    pub tau: f64,
    /// CG iteration cap per block; `None` means `f`.
    pub cg_max_iters: Option<usize>,
    /// Step size for the first-order optimizers; `None` picks the optimizer default.
    pub lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    /// `None` picks the optimizer default (1e-8 for Adam, 1e-3 for Yogi).
    pub epsilon: Option<f64>,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a new best validation value.
    pub patience: usize,
    pub seed: u64,
    pub threads: usize,
    pub metric: Metric,
    /// Extension: halve γ after a loss decrease, double it after an increase.
    pub adaptive_damping: bool,
    /// Seed each block's CG with the previous epoch's increment.
    pub cg_warm_start: bool,
    /// Cut worker ranges by rating count instead of entity count.
    pub balanced_partition: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            optimizer: OptimizerKind::MiniHes,
            f: 20,
            lambda: 0.01,
            gamma: 1.0,
            tau: 0.1,
            cg_max_iters: None,
            lr: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: None,
            max_epochs: 500,
            patience: 10,
            seed: 0,
            threads: 1,
            metric: Metric::Rmse,
            adaptive_damping: false,
            cg_warm_start: false,
            balanced_partition: false,
        }
    }
}

impl OptimizerConfig {
    pub fn default_lr(kind: OptimizerKind) -> f64 {
        match kind {
            OptimizerKind::Sgd => 1e-3,
            OptimizerKind::Adam | OptimizerKind::Yogi | OptimizerKind::MiniHes => 1e-2,
        }
    }

    pub fn default_epsilon(kind: OptimizerKind) -> f64 {
        match kind {
            OptimizerKind::Yogi => 1e-3,
            _ => 1e-8,
        }
    }

    /// Copy with every optional field materialized.
    pub fn resolved(&self) -> OptimizerConfig {
        let mut c = self.clone();
        c.cg_max_iters.get_or_insert(self.f);
        c.lr.get_or_insert(Self::default_lr(self.optimizer));
        c.epsilon.get_or_insert(Self::default_epsilon(self.optimizer));
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.f == 0 {
            return bad("f must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.cg_max_iters == Some(0) {
            return bad("cg_max_iters must be at least 1".into());
        }
        let r = self.resolved();
        for (name, v) in [
            ("lambda", r.lambda),
            ("gamma", r.gamma),
            ("tau", r.tau),
            ("lr", r.lr.unwrap_or_default()),
            ("epsilon", r.epsilon.unwrap_or_default()),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("beta1", r.beta1), ("beta2", r.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        Ok(())
    }

    fn cg_settings(&self) -> Result<CgSettings> {
        CgSettings::new(self.tau, self.cg_max_iters.unwrap_or(self.f))
    }

    /// Worker pool for a run over `data`, created once per run.
    pub fn executor(&self, data: &HdiDataset) -> Result<Executor> {
        let partition = if self.balanced_partition {
            WorkPartition::balanced(data, self.threads)?
        } else {
            WorkPartition::even(data.num_users(), data.num_items(), self.threads)?
        };
        Executor::new(partition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// The configured early-stopping metric on the validation set.
    pub validation: f64,
    pub validation_rmse: f64,
    pub validation_mae: f64,
    pub seconds: f64,
    pub cg_iters: Option<u64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub optimizer: OptimizerKind,
    pub metric: Metric,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub test_rmse: Option<f64>,
    pub test_mae: Option<f64>,
    pub total_seconds: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// Per-epoch trace as CSV with a header row.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Training losses and validation values as raw bits, for exact comparison.
    pub fn value_bits(&self) -> Vec<u64> {
        self.epochs
            .iter()
            .flat_map(|e| [e.train_loss.to_bits(), e.validation.to_bits()])
            .collect()
    }
}

/// Result of one parameter update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    pub cg_iters: Option<u64>,
    pub gamma: Option<f64>,
}

/// One epoch's parameter update.
pub trait UpdateRule {
    fn step(&mut self, state: &mut FactorState, train: &HdiDataset, exec: &Executor) -> Result<StepInfo>;
}

/// Full loss gradient evaluated block by block on the executor's workers.
pub fn parallel_gradient(state: &FactorState, data: &HdiDataset, lambda: f64, exec: &Executor) -> Result<BlockVector> {
    let (grad, _) = exec.run_blocks(state.layout(), |e, out| {
        gradient_block(state, data, lambda, e, out);
        Ok(0)
    })?;
    Ok(grad)
}

/// `X <- X + ΔX` with `ΔX` from per-block CG on the damped Gauss-Newton blocks.
#[derive(Debug, Clone)]
pub struct MiniHes {
    lambda: f64,
    gamma: f64,
    cg: CgSettings,
    adaptive_damping: bool,
    warm_start: bool,
    previous_delta: Option<BlockVector>,
    previous_loss: Option<f64>,
}

impl MiniHes {
    pub fn new(config: &OptimizerConfig) -> Result<Self> {
        Ok(MiniHes {
            lambda: config.lambda,
            gamma: config.gamma,
            cg: config.cg_settings()?,
            adaptive_damping: config.adaptive_damping,
            warm_start: config.cg_warm_start,
            previous_delta: None,
            previous_loss: None,
        })
    }
}

impl UpdateRule for MiniHes {
    fn step(&mut self, state: &mut FactorState, train: &HdiDataset, exec: &Executor) -> Result<StepInfo> {
        if self.adaptive_damping && self.previous_loss.is_none() {
            self.previous_loss = Some(loss(state, train, self.lambda));
        }
        let grad = parallel_gradient(state, train, self.lambda, exec)?;
        let gamma = self.gamma;
        let (delta, stats) = {
            let ctx = BlockOperatorContext::new(state, train, self.lambda, gamma)?;
            let warm = if self.warm_start {
                self.previous_delta.as_ref()
            } else {
                None
            };
            solve_all(&ctx, &grad, &self.cg, exec, warm)?
        };
        state.apply(&delta)?;
        if self.warm_start {
            self.previous_delta = Some(delta);
        }
        if self.adaptive_damping {
            let now = loss(state, train, self.lambda);
            if let Some(before) = self.previous_loss {
                self.gamma = if now < before {
                    self.gamma * 0.5
                } else {
                    self.gamma * 2.0
                };
            }
            self.previous_loss = Some(now);
        }
        Ok(StepInfo {
            cg_iters: Some(stats.counter),
            gamma: Some(gamma),
        })
    }
}

/// Full-batch first-order updates: plain gradient descent, Adam, or Yogi.
#[derive(Debug, Clone)]
pub struct FirstOrder {
    kind: OptimizerKind,
    lambda: f64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl FirstOrder {
    pub fn new(config: &OptimizerConfig) -> Result<Self> {
        if config.optimizer == OptimizerKind::MiniHes {
            return Err(Error::Config("mini-hes is not a first-order optimizer".into()));
        }
        let r = config.resolved();
        Ok(FirstOrder {
            kind: r.optimizer,
            lambda: r.lambda,
            lr: r.lr.unwrap_or_default(),
            beta1: r.beta1,
            beta2: r.beta2,
            epsilon: r.epsilon.unwrap_or_default(),
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    /// Applies one update to `params` given `grad`.
    pub fn apply_gradient(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (x, g) in params.iter_mut().zip(grad) {
                    *x -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for k in 0..params.len() {
                    let g = grad[k];
                    self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                    self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                    let m_hat = self.m[k] / c1;
                    let v_hat = self.v[k] / c2;
                    params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerKind::Yogi => {
                // additive second-moment update, no bias correction
                for k in 0..params.len() {
                    let g = grad[k];
                    let g2 = g * g;
                    self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                    self.v[k] -= (1.0 - b2) * sign(self.v[k] - g2) * g2;
                    params[k] -= lr * self.m[k] / (self.v[k].sqrt() + eps);
                }
            }
            OptimizerKind::MiniHes => unreachable!("rejected in FirstOrder::new"),
        }
    }
}

/// Sign with `sign(0) = 0` (`f64::signum` maps zero to one).
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl UpdateRule for FirstOrder {
    fn step(&mut self, state: &mut FactorState, train: &HdiDataset, exec: &Executor) -> Result<StepInfo> {
        let grad = parallel_gradient(state, train, self.lambda, exec)?;
        self.apply_gradient(state.values_mut(), grad.values());
        Ok(StepInfo::default())
    }
}

/// Runs `rule` from `init` with early stopping on `val`, returning the
/// best-validation snapshot. Test metrics come from that snapshot.
pub fn train_with(
    rule: &mut dyn UpdateRule,
    init: FactorState,
    train: &HdiDataset,
    val: &HdiDataset,
    test: Option<&HdiDataset>,
    config: &OptimizerConfig,
    exec: &Executor,
) -> Result<(FactorState, TrainReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let mut state = init;
    let mut best = state.clone();
    let mut best_epoch = 0;
    let mut best_validation = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let epoch_started = Instant::now();
        let info = rule.step(&mut state, train, exec)?;
        let train_loss = loss(&state, train, config.lambda);
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let vm = evaluate(&state, val)?;
        let validation = config.metric.pick(vm);
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation,
            validation_rmse: vm.rmse,
            validation_mae: vm.mae,
            seconds: epoch_started.elapsed().as_secs_f64(),
            cg_iters: info.cg_iters,
            gamma: info.gamma,
        });
        if validation < best_validation {
            best_validation = validation;
            best_epoch = epoch;
            best.clone_from(&state);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    let test_metrics = test.map(|t| evaluate(&best, t)).transpose()?;
    let report = TrainReport {
        optimizer: config.optimizer,
        metric: config.metric,
        epochs_run: epochs.len(),
        epochs,
        best_epoch,
        best_validation,
        test_rmse: test_metrics.map(|m| m.rmse),
        test_mae: test_metrics.map(|m| m.mae),
        total_seconds: started.elapsed().as_secs_f64(),
        stop_reason,
    };
    Ok((best, report))
}

fn initial_state(train: &HdiDataset, config: &OptimizerConfig) -> Result<FactorState> {
    init_factors(
        train.num_users(),
        train.num_items(),
        config.f,
        seed::derive(config.seed, seed::INIT),
    )
}

fn check_universe(train: &HdiDataset, others: &[Option<&HdiDataset>]) -> Result<()> {
    let layout = Layout::for_data(train, 1);
    for d in others.iter().flatten() {
        if d.num_users() != layout.num_users || d.num_items() != layout.num_items {
            return Err(Error::Config(
                "train, validation, and test must share one entity universe".into(),
            ));
        }
    }
    Ok(())
}

pub fn train_mini_hes(
    train: &HdiDataset,
    val: &HdiDataset,
    test: Option<&HdiDataset>,
    config: &OptimizerConfig,
) -> Result<(FactorState, TrainReport)> {
    config.validate()?;
    check_universe(train, &[Some(val), test])?;
    let mut rule = MiniHes::new(config)?;
    let exec = config.executor(train)?;
    train_with(
        &mut rule,
        initial_state(train, config)?,
        train,
        val,
        test,
        config,
        &exec,
    )
}

pub fn train_first_order(
    train: &HdiDataset,
    val: &HdiDataset,
    test: Option<&HdiDataset>,
    config: &OptimizerConfig,
) -> Result<(FactorState, TrainReport)> {
    config.validate()?;
    check_universe(train, &[Some(val), test])?;
    let mut rule = FirstOrder::new(config)?;
    let exec = config.executor(train)?;
    train_with(
        &mut rule,
        initial_state(train, config)?,
        train,
        val,
        test,
        config,
        &exec,
    )
}

/// Dispatches on `config.optimizer`.
pub fn train(
    train: &HdiDataset,
    val: &HdiDataset,
    test: Option<&HdiDataset>,
    config: &OptimizerConfig,
) -> Result<(FactorState, TrainReport)> {
    match config.optimizer {
        OptimizerKind::MiniHes => train_mini_hes(train, val, test, config),
        _ => train_first_order(train, val, test, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: OptimizerKind) -> OptimizerConfig {
        OptimizerConfig {
            optimizer: kind,
            lr: Some(0.01),
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut opt = FirstOrder::new(&cfg(OptimizerKind::Adam)).unwrap();
        let mut x = [0.0];
        opt.apply_gradient(&mut x, &[1.0]);
        assert!((x[0] + 0.01).abs() < 1e-9, "{}", x[0]);
        // same magnitude regardless of gradient scale on a fresh state
        let mut opt = FirstOrder::new(&cfg(OptimizerKind::Adam)).unwrap();
        let mut y = [0.0];
        opt.apply_gradient(&mut y, &[250.0]);
        assert!((y[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn yogi_first_step() {
        let mut opt = FirstOrder::new(&cfg(OptimizerKind::Yogi)).unwrap();
        let mut x = [0.0];
        opt.apply_gradient(&mut x, &[1.0]);
        // m = 0.1, v = 0.001, step = 0.01 * 0.1 / (sqrt(0.001) + 1e-3)
        let expect = -0.01 * 0.1 / (0.001f64.sqrt() + 1e-3);
        assert!((x[0] - expect).abs() < 1e-15, "{} vs {expect}", x[0]);
    }

    #[test]
    fn sgd_step() {
        let mut opt = FirstOrder::new(&cfg(OptimizerKind::Sgd)).unwrap();
        let mut x = [1.0, 2.0];
        opt.apply_gradient(&mut x, &[10.0, -10.0]);
        assert_eq!(x, [0.9, 2.1]);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        for broken in [
            OptimizerConfig {
                f: 0,
                ..Default::default()
            },
            OptimizerConfig {
                patience: 0,
                ..Default::default()
            },
            OptimizerConfig {
                lambda: -0.1,
                ..Default::default()
            },
            OptimizerConfig {
                gamma: f64::NAN,
                ..Default::default()
            },
            OptimizerConfig {
                beta2: 1.0,
                ..Default::default()
            },
            OptimizerConfig {
                threads: 0,
                ..Default::default()
            },
            OptimizerConfig {
                cg_max_iters: Some(0),
                ..Default::default()
            },
        ] {
            assert!(broken.validate().is_err(), "{broken:?}");
        }
        assert!(FirstOrder::new(&OptimizerConfig::default()).is_err());
    }

    #[test]
    fn resolved_materializes_defaults() {
        let r = OptimizerConfig {
            f: 7,
            optimizer: OptimizerKind::Yogi,
            ..Default::default()
        }
        .resolved();
        assert_eq!(r.cg_max_iters, Some(7));
        assert_eq!(r.lr, Some(1e-2));
        assert_eq!(r.epsilon, Some(1e-3));
    }

    #[test]
    fn names_parse() {
        assert_eq!("mini-hes".parse::<OptimizerKind>().unwrap(), OptimizerKind::MiniHes);
        assert_eq!("ADAM".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert!("acprop".parse::<OptimizerKind>().is_err());
        assert_eq!("mae".parse::<Metric>().unwrap(), Metric::Mae);
    }
}
