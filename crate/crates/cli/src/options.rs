use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use minihes_core::{Metric, OptimizerConfig, OptimizerKind};

/// Optimizer flags. Unset flags fall back to the config file, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct OptimizerFlags {
    /// TOML file with optimizer settings; flags override its values
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// mini-hes, sgd, adam, or yogi
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// Latent dimension
    #[arg(long)]
    pub f: Option<usize>,
    /// Regularization constant
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Damping added to every curvature block (mini-hes)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Relative CG residual tolerance (mini-hes)
    #[arg(long)]
    pub tau: Option<f64>,
    /// CG iteration cap per block; defaults to f (mini-hes)
    #[arg(long)]
    pub cg_max_iters: Option<usize>,
    /// Learning rate (first-order optimizers)
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Stop after this many consecutive epochs without validation improvement
    #[arg(long)]
    pub patience: Option<usize>,
    /// Top-level seed; split, init, and synthetic data seeds derive from it
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validation metric for early stopping: rmse or mae
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Halve gamma after a loss decrease, double it otherwise (mini-hes)
    #[arg(long)]
    pub adaptive_damping: bool,
    /// Start each block's CG from the previous epoch's step (mini-hes)
    #[arg(long)]
    pub cg_warm_start: bool,
    /// Partition work by rating counts instead of entity counts
    #[arg(long)]
    pub balanced_partition: bool,
}

pub fn load_config_file(path: &Path) -> Result<OptimizerConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl OptimizerFlags {
    /// flags > config file > defaults
    pub fn resolve(&self, threads: Option<usize>) -> Result<OptimizerConfig> {
        let mut c = match &self.config {
            Some(path) => load_config_file(path)?,
            None => OptimizerConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        take!(optimizer, f, lambda, gamma, tau, beta1, beta2, max_epochs, patience, seed, metric);
        if self.cg_max_iters.is_some() {
            c.cg_max_iters = self.cg_max_iters;
        }
        if self.lr.is_some() {
            c.lr = self.lr;
        }
        if self.epsilon.is_some() {
            c.epsilon = self.epsilon;
        }
        if let Some(t) = threads {
            c.threads = t;
        }
        c.adaptive_damping |= self.adaptive_damping;
        c.cg_warm_start |= self.cg_warm_start;
        c.balanced_partition |= self.balanced_partition;
        c.validate()?;
        Ok(c.resolved())
    }
}
