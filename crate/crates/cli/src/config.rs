use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use spnet::pruner::{Baseline, Mode};
use spnet::trainer::{Loss, TrainConfig};

use crate::CliError;

/// Fills every `None` field of `self` from `lower`.
macro_rules! merge_fields {
    ($ty:ident { $($f:ident),* $(,)? }) => {
        impl $ty {
            pub fn merge(self, lower: $ty) -> $ty {
                $ty { $($f: self.$f.or(lower.$f)),* }
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Lenet300,
    Lenet5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DeltaChoice {
    /// Amplification constants measured on the calibration set.
    Empirical,
    /// Every layer gets the same ε.
    Flat,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommonOpts {
    /// TOML config file or a run-manifest.json to replay.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every random stream (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset: mnist:DIR, idx:IMAGES,LABELS, csv:PATH[,label=COL] or
    /// synth:N:DIM:DIST.
    #[arg(long)]
    pub data: Option<String>,
    /// Input model (SPNET manifest).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Architecture and training hyperparameters.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Fraction of the training data held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}
merge_fields!(CommonOpts { config, out, seed, data, model, preset, val_fraction });

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOpts {
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate multiplier at each decay epoch.
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    /// Comma-separated epochs at which the learning rate decays.
    #[arg(long, value_delimiter = ',')]
    pub lr_decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
}
merge_fields!(TrainOpts { epochs, batch_size, lr, lr_decay_factor, lr_decay_epochs, momentum, weight_decay, loss });

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossArg {
    CrossEntropy,
    Mse,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Loss {
        match l {
            LossArg::CrossEntropy => Loss::CrossEntropy,
            LossArg::Mse => Loss::Mse,
        }
    }
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneOpts {
    /// Fine-tuning epochs after each pruning step.
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub finetune_lr_decay_epochs: Option<Vec<usize>>,
    /// Let pruned filters and channels grow back during fine-tuning.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub free_support: Option<bool>,
}
merge_fields!(FinetuneOpts { finetune_epochs, finetune_lr_decay_epochs, free_support });

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneOpts {
    /// Relative error ε.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Failure probability δ.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Total filters to keep over all prunable layers.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Fraction of parameters to remove.
    #[arg(long)]
    pub prune_ratio: Option<f64>,
    /// rand, partial (default) or derand.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Deterministic keeps in partial mode: `auto` or a number.
    #[arg(long)]
    pub k: Option<String>,
    /// Calibration points for the sensitivities.
    #[arg(long)]
    pub calib_size: Option<usize>,
    /// Tail constant K.
    #[arg(long = "K")]
    pub k_tail: Option<f64>,
    /// Sample-size constant K'.
    #[arg(long = "K-prime")]
    pub k_prime: Option<f64>,
    /// Entries with |z| below this are not judged.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub delta_profile: Option<DeltaChoice>,
    /// Upper end of the ε search for budgets and prune ratios.
    #[arg(long)]
    pub eps_max: Option<f64>,
    /// Drop pruned filters and channels from the saved model.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub compact: Option<bool>,
    /// Iterative schedule `alpha,steps` of prune ratios `1 - 1/(i+1)^alpha`.
    #[arg(long)]
    pub schedule: Option<String>,
}
merge_fields!(PruneOpts {
    eps, delta, budget, prune_ratio, mode, k, calib_size, k_tail, k_prime, tau, delta_profile, eps_max, compact, schedule
});

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: spnet::Error| e.to_string())
}

fn parse_baseline(s: &str) -> Result<Baseline, String> {
    s.parse().map_err(|e: spnet::Error| e.to_string())
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOpts {
    /// Pruned model to compare against `--model`; defaults to `--model`.
    #[arg(long)]
    pub pruned: Option<PathBuf>,
    /// Re-prune trials per layer for the layer-wise check (0 skips it).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Held-out inputs for the end-to-end check.
    #[arg(long)]
    pub verify_inputs: Option<usize>,
}
merge_fields!(VerifyOpts { pruned, trials, verify_inputs });

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineOpts {
    /// ft, softnet or thinet.
    #[arg(long, value_parser = parse_baseline)]
    pub method: Option<Baseline>,
    /// Fraction of filters kept per layer.
    #[arg(long)]
    pub keep_fraction: Option<f64>,
}
merge_fields!(BaselineOpts { method, keep_fraction });

/// Every setting of a run. Command-line flags override a config file, which
/// overrides presets and built-in defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Option<String>,
    #[serde(flatten)]
    pub common: CommonOpts,
    #[serde(flatten)]
    pub train: TrainOpts,
    #[serde(flatten)]
    pub finetune: FinetuneOpts,
    #[serde(flatten)]
    pub prune: PruneOpts,
    #[serde(flatten)]
    pub verify: VerifyOpts,
    #[serde(flatten)]
    pub baseline: BaselineOpts,
}

impl RunConfig {
    pub fn merge(self, lower: RunConfig) -> RunConfig {
        RunConfig {
            command: self.command.or(lower.command),
            common: self.common.merge(lower.common),
            train: self.train.merge(lower.train),
            finetune: self.finetune.merge(lower.finetune),
            prune: self.prune.merge(lower.prune),
            verify: self.verify.merge(lower.verify),
            baseline: self.baseline.merge(lower.baseline),
        }
    }

    /// Reads a TOML config, or the resolved config stored in a run manifest.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            let cfg = v.get("config").cloned().unwrap_or(v);
            serde_json::from_value(cfg).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
        }
    }

    pub fn seed(&self) -> u64 {
        self.common.seed.unwrap_or(0)
    }

    pub fn out(&self) -> PathBuf {
        self.common.out.clone().unwrap_or_else(|| PathBuf::from("spnet-out"))
    }

    pub fn delta(&self) -> f64 {
        self.prune.delta.unwrap_or(1e-12)
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = match self.common.preset {
            Some(Preset::Lenet5) => TrainConfig::lenet5(),
            _ => TrainConfig::lenet300(),
        };
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs.unwrap_or(base.epochs),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            lr: t.lr.unwrap_or(base.lr),
            lr_decay_factor: t.lr_decay_factor.unwrap_or(base.lr_decay_factor),
            lr_decay_epochs: t.lr_decay_epochs.clone().unwrap_or(base.lr_decay_epochs),
            momentum: t.momentum.unwrap_or(base.momentum),
            weight_decay: t.weight_decay.unwrap_or(base.weight_decay),
            seed: self.seed(),
            loss: t.loss.map(Loss::from).unwrap_or(base.loss),
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        let base = match self.common.preset {
            Some(Preset::Lenet5) => TrainConfig::lenet5_finetune(),
            _ => TrainConfig::lenet300_finetune(),
        };
        let f = &self.finetune;
        TrainConfig {
            epochs: f.finetune_epochs.unwrap_or(base.epochs),
            lr_decay_epochs: f.finetune_lr_decay_epochs.clone().unwrap_or(base.lr_decay_epochs),
            ..self.train_config()
        }
    }
}
