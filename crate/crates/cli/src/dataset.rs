use std::path::Path;

use spnet::data::{self, Dataset, Split, SynthDist};

use crate::CliError;

/// A loaded dataset spec, split three ways.
pub struct Splits {
    pub train: Dataset,
    /// Calibration points are drawn from here.
    pub val: Dataset,
    /// Held out from both training and calibration; `None` when the source
    /// has no test part.
    pub test: Option<Dataset>,
}

impl Splits {
    /// Data for reporting error: the test split, else validation.
    pub fn eval(&self) -> &Dataset {
        self.test.as_ref().unwrap_or(&self.val)
    }

    /// Inputs never used for calibration: the test split, else training.
    pub fn fresh(&self) -> &Dataset {
        self.test.as_ref().unwrap_or(&self.train)
    }
}

/// Parses and loads `mnist:DIR`, `idx:IMAGES,LABELS`,
/// `csv:PATH[,label=COL]` or `synth:N:DIM:DIST`.
pub fn load(spec: &str, val_fraction: f64, seed: u64) -> Result<Splits, CliError> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("dataset spec {spec:?} lacks a kind prefix (mnist:, idx:, csv:, synth:)")))?;
    let (full, test) = match kind {
        "mnist" => {
            let dir = Path::new(rest);
            if !dir.is_dir() {
                return Err(CliError::missing(dir));
            }
            let (train, test) = data::load_mnist_dir(dir)?;
            (train, Some(test))
        }
        "idx" => {
            let (img, lbl) = rest
                .split_once(',')
                .ok_or_else(|| CliError::usage("idx: spec needs IMAGES,LABELS"))?;
            for p in [img, lbl] {
                if !Path::new(p).is_file() {
                    return Err(CliError::missing(Path::new(p)));
                }
            }
            (data::load_idx(img.as_ref(), lbl.as_ref())?, None)
        }
        "csv" => {
            let (path, label) = match rest.split_once(",label=") {
                Some((p, l)) => (p, Some(l)),
                None => (rest, None),
            };
            if !Path::new(path).is_file() {
                return Err(CliError::missing(Path::new(path)));
            }
            (data::load_csv(path.as_ref(), label)?, None)
        }
        "synth" => {
            let mut parts = rest.splitn(3, ':');
            let bad = || CliError::usage(format!("synth spec {spec:?} should be synth:N:DIM:DIST"));
            let n: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let dim: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let dist: SynthDist = parts.next().ok_or_else(bad)?.parse()?;
            let all = data::synth_activations(n, dim, dist, seed)?;
            // A fixed quarter is held out as the test part.
            let (rest, test) = all.split_train_val(0.25, seed ^ 0x5eed)?;
            (rest, Some(test.with_split(Split::Test)))
        }
        other => return Err(CliError::usage(format!("unknown dataset kind {other:?}"))),
    };
    let (train, val) = full.split_train_val(val_fraction, seed)?;
    Ok(Splits { train, val, test })
}
