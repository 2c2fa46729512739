//! Datasets: MNIST IDX and CSV loaders, train/validation splitting,
//! calibration draws, and synthetic activation generators.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{param_err, Error, Result};
use crate::rng::{self, purpose};
use crate::tensor::DenseTensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    None,
    Labels(Vec<usize>),
    /// `[n, k]` regression targets.
    Values(DenseTensor),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Unsplit,
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: DenseTensor,
    targets: Targets,
    split: Split,
}

impl Dataset {
    /// `inputs` is `[n, ...sample_shape]`.
    pub fn new(inputs: DenseTensor, targets: Targets, split: Split) -> Result<Self> {
        let n = inputs.shape()[0];
        let count = match &targets {
            Targets::None => n,
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.shape()[0],
        };
        if count != n {
            return Err(Error::Format(format!("{n} inputs but {count} targets")));
        }
        if inputs.ndim() < 2 {
            return Err(Error::Format("inputs must be [n, ...sample_shape]".into()));
        }
        Ok(Self {
            inputs,
            targets,
            split,
        })
    }

    pub fn from_samples(samples: &[DenseTensor], targets: Targets, split: Split) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Degenerate("empty sample list".into()))?;
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(first.shape());
        let data = samples.iter().flat_map(|s| s.data().iter().copied()).collect();
        Self::new(DenseTensor::new(shape, data)?, targets, split)
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &DenseTensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn sample(&self, i: usize) -> DenseTensor {
        self.inputs.slice_outer(i)
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        match &self.targets {
            Targets::Labels(l) => Some(l[i]),
            _ => None,
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = DenseTensor> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Rows at `indices` (repeats allowed), tagged with `split`.
    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Degenerate("empty subset".into()));
        }
        let width = self.inputs.len() / self.len();
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
        }
        let targets = match &self.targets {
            Targets::None => Targets::None,
            Targets::Labels(l) => Targets::Labels(indices.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => {
                let k = v.len() / v.shape()[0];
                let mut d = Vec::with_capacity(indices.len() * k);
                for &i in indices {
                    d.extend_from_slice(v.row(i));
                }
                Targets::Values(DenseTensor::new(vec![indices.len(), k], d)?)
            }
        };
        Dataset::new(DenseTensor::new(shape, data)?, targets, split)
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.split)
    }

    /// Disjoint random train/validation partition; `val_fraction` of the
    /// rows (rounded) go to validation.
    pub fn split_train_val(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
            return Err(param_err!("validation fraction {val_fraction} not in (0, 1)"));
        }
        let n = self.len();
        let n_val = ((n as f64) * val_fraction).round() as usize;
        if n_val == 0 || n_val == n {
            return Err(Error::Degenerate(format!(
                "cannot split {n} rows with validation fraction {val_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, &[purpose::SPLIT]));
        let (val, train) = idx.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train, Split::Train)?, self.subset(&val, Split::Val)?))
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))
}

/// Loads an IDX image file (magic `0x803`) and label file (magic `0x801`).
/// Pixels are scaled to `[0, 1]`; each sample has shape `[1, rows, cols]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lab = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    decode_idx(&img, &lab, images_path, labels_path)
}

/// Header fields `(count, rows, cols)` of an IDX image file.
pub fn idx_image_header(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    Ok((
        be_u32(bytes, 4, path)? as usize,
        be_u32(bytes, 8, path)? as usize,
        be_u32(bytes, 12, path)? as usize,
    ))
}

fn decode_idx(img: &[u8], lab: &[u8], img_path: &Path, lab_path: &Path) -> Result<Dataset> {
    let (n, rows, cols) = idx_image_header(img, img_path)?;
    let magic = be_u32(lab, 0, lab_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            lab_path.display()
        )));
    }
    let n_labels = be_u32(lab, 4, lab_path)? as usize;
    if n_labels != n {
        return Err(Error::Format(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let pixels = n * rows * cols;
    if img.len() < 16 + pixels {
        return Err(Error::Format(format!(
            "{}: truncated, expected {} pixel bytes",
            img_path.display(),
            pixels
        )));
    }
    if lab.len() < 8 + n {
        return Err(Error::Format(format!("{}: truncated", lab_path.display())));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("{}: empty image set", img_path.display())));
    }
    let data = img[16..16 + pixels].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels = lab[8..8 + n].iter().map(|&b| usize::from(b)).collect();
    Dataset::new(
        DenseTensor::new(vec![n, 1, rows, cols], data)?,
        Targets::Labels(labels),
        Split::Unsplit,
    )
}

/// Writes `ds` as IDX files. Pixel values are multiplied by 255 and rounded.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let shape = ds.sample_shape();
    let (rows, cols) = match shape {
        [1, r, c] | [r, c] => (*r, *c),
        _ => return Err(Error::Format(format!("cannot write sample shape {shape:?} as IDX images"))),
    };
    let labels = match ds.targets() {
        Targets::Labels(l) => l,
        _ => return Err(Error::Format("IDX export needs integer labels".into())),
    };
    let mut img = Vec::with_capacity(16 + ds.inputs().len());
    for v in [IDX_IMAGES_MAGIC, ds.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.inputs().data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?;
        lab.push(b);
    }
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Loads the standard four MNIST files from `dir` as `(train, test)`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?
    .with_split(Split::Train);
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?
    .with_split(Split::Test);
    Ok((train, test))
}

/// Loads a CSV file with a header row, one sample per line. The column named
/// `label_column` (if any) holds integer class labels; all other columns are
/// features.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Format(format!("{}: no column named {name:?}", path.display()))
        })?),
        None => None,
    };
    let width = headers.len() - usize::from(label_idx.is_some());
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for (c, field) in rec.iter().enumerate() {
            let field = field.trim();
            if Some(c) == label_idx {
                labels.push(field.parse::<usize>().map_err(|e| {
                    Error::Format(format!("{}:{}: label {field:?}: {e}", path.display(), line + 2))
                })?);
            } else {
                data.push(field.parse::<f64>().map_err(|e| {
                    Error::Format(format!("{}:{}: value {field:?}: {e}", path.display(), line + 2))
                })?);
            }
        }
    }
    if data.is_empty() || width == 0 {
        return Err(Error::Format(format!("{}: no samples", path.display())));
    }
    let n = data.len() / width;
    let targets = if label_idx.is_some() {
        Targets::Labels(labels)
    } else {
        Targets::None
    };
    Dataset::new(DenseTensor::new(vec![n, width], data)?, targets, Split::Unsplit)
}

/// Indices of a calibration draw: `t` uniform draws with replacement from
/// `0..n` on the calibration stream of `seed`.
pub fn calibration_indices(n: usize, t: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[purpose::CALIBRATION]);
    (0..t).map(|_| rng.random_range(0..n)).collect()
}

/// Draws `t` calibration points i.i.d. (with replacement) from `ds`, which
/// should be the validation split.
pub fn draw_calibration(ds: &Dataset, t: usize, seed: u64) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::Degenerate("cannot calibrate on an empty dataset".into()));
    }
    if t == 0 {
        return Err(param_err!("calibration size must be at least 1"));
    }
    ds.subset(&calibration_indices(ds.len(), t, seed), ds.split())
}

/// Calibration size `ceil(K' · ln(8 η* η_next / δ))`, clamped to `[1, 256]`.
pub fn default_calibration_size(delta: f64, eta_star: usize, eta_next_max: usize, k_prime: f64) -> usize {
    let t = (k_prime * (8.0 * eta_star as f64 * eta_next_max as f64 / delta).ln()).ceil();
    (t.max(1.0) as usize).min(256)
}

/// Distribution of synthetic nonnegative activation vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthDist {
    /// i.i.d. `U[0, 1)`.
    Uniform,
    /// i.i.d. `|N(0, 1)|`.
    GaussianAbs,
    /// i.i.d. `Exp(1)`.
    Exponential,
    /// With probability `mass`, the one-hot vector `e_k`; otherwise uniform.
    Pathological { k: usize, mass: f64 },
}

impl FromStr for SynthDist {
    type Err = Error;

    /// `uniform`, `gaussian_abs`, `exponential`, `pathological:k=0,mass=0.001`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let mut k = None;
        let mut mass = None;
        for kv in args.split(',').filter(|a| !a.is_empty()) {
            let (key, val) = kv
                .split_once('=')
                .ok_or_else(|| param_err!("expected key=value, got {kv:?}"))?;
            match key.trim() {
                "k" => k = Some(val.trim().parse().map_err(|_| param_err!("bad k {val:?}"))?),
                "mass" => mass = Some(val.trim().parse().map_err(|_| param_err!("bad mass {val:?}"))?),
                other => return Err(param_err!("unknown synthetic parameter {other:?}")),
            }
        }
        let dist = match name.trim() {
            "uniform" => SynthDist::Uniform,
            "gaussian_abs" => SynthDist::GaussianAbs,
            "exponential" => SynthDist::Exponential,
            "pathological" => SynthDist::Pathological {
                k: k.unwrap_or(0),
                mass: mass.unwrap_or(0.001),
            },
            other => return Err(param_err!("unknown synthetic distribution {other:?}")),
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl SynthDist {
    fn validate(&self) -> Result<()> {
        if let SynthDist::Pathological { mass, .. } = self {
            if !(0.0..=1.0).contains(mass) {
                return Err(param_err!("pathological mass {mass} not in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Fills one sample of length `dim`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            SynthDist::Uniform => out.iter_mut().for_each(|v| *v = rng.random::<f64>()),
            SynthDist::GaussianAbs => out.iter_mut().for_each(|v| {
                let g: f64 = StandardNormal.sample(rng);
                *v = g.abs();
            }),
            SynthDist::Exponential => out.iter_mut().for_each(|v| *v = Exp1.sample(rng)),
            SynthDist::Pathological { k, mass } => {
                if rng.random::<f64>() < mass {
                    out.fill(0.0);
                    out[k] = 1.0;
                } else {
                    out.iter_mut().for_each(|v| *v = rng.random::<f64>());
                }
            }
        }
    }
}

/// `n` synthetic activation vectors of length `dim`.
pub fn synth_activations(n: usize, dim: usize, dist: SynthDist, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(param_err!("synthetic dataset needs n ≥ 1 and dim ≥ 1"));
    }
    dist.validate()?;
    if let SynthDist::Pathological { k, .. } = dist {
        if k >= dim {
            return Err(param_err!("spike coordinate {k} out of range for dim {dim}"));
        }
    }
    let mut rng = rng::stream(seed, &[purpose::SYNTH]);
    let mut data = vec![0.0; n * dim];
    for row in data.chunks_exact_mut(dim) {
        dist.sample_into(&mut rng, row);
    }
    Dataset::new(DenseTensor::new(vec![n, dim], data)?, Targets::None, Split::Unsplit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn labelled(pixels: Vec<u8>, labels: Vec<usize>, rows: usize, cols: usize) -> Dataset {
        let n = labels.len();
        let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
        Dataset::new(
            DenseTensor::new(vec![n, 1, rows, cols], data).unwrap(),
            Targets::Labels(labels),
            Split::Unsplit,
        )
        .unwrap()
    }

    #[test]
    fn idx_single_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&labelled(vec![0; 4], vec![3], 2, 2), &ip, &lp).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sample(0).data(), &[0.0; 4]);
        assert_eq!(ds.label(0), Some(3));
    }

    #[test]
    fn idx_full_byte_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&labelled(vec![255, 0, 128, 1], vec![0], 2, 2), &ip, &lp).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.sample(0).data()[0], 1.0);
    }

    #[test]
    fn idx_errors() {
        let p = Path::new("x");
        let mut img = Vec::new();
        for v in [0x803u32, 2, 2, 2] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend_from_slice(&[0; 8]);
        let mut lab = Vec::new();
        for v in [0x801u32, 2] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend_from_slice(&[1, 2]);
        assert!(decode_idx(&img, &lab, p, p).is_ok());

        let mut bad = img.clone();
        bad[3] = 0x01;
        assert!(matches!(decode_idx(&bad, &lab, p, p), Err(Error::Format(_))));
        assert!(decode_idx(&img[..20], &lab, p, p).is_err());
        let mut short = lab.clone();
        short[7] = 3;
        assert!(decode_idx(&img, &short, p, p).is_err());
        assert!(decode_idx(&img[..10], &lab, p, p).is_err());
    }

    #[test]
    fn mnist_header_if_available() {
        let dir = std::env::var("SPNET_MNIST_DIR").unwrap_or_else(|_| "/root/data/mnist".into());
        let path = Path::new(&dir).join("train-images-idx3-ubyte");
        let Ok(bytes) = fs::read(&path) else { return };
        assert_eq!(idx_image_header(&bytes, &path).unwrap(), (60000, 28, 28));
    }

    #[test]
    fn csv_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "a,label,b\n0.5,1,2\n1.5,0,-1\n").unwrap();
        let ds = load_csv(&p, Some("label")).unwrap();
        assert_eq!(ds.inputs().shape(), &[2, 2]);
        assert_eq!(ds.sample(1).data(), &[1.5, -1.0]);
        assert_eq!(ds.targets(), &Targets::Labels(vec![1, 0]));
        assert!(load_csv(&p, Some("nope")).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let ds = synth_activations(100, 3, SynthDist::Uniform, 1).unwrap();
        let (train, val) = ds.split_train_val(0.1, 4).unwrap();
        assert_eq!((train.len(), val.len()), (90, 10));
        assert_eq!(train.split(), Split::Train);
        for v in val.samples() {
            assert!(train.samples().all(|t| t != v));
        }
    }

    #[test]
    fn calibration_draws() {
        let one = synth_activations(1, 4, SynthDist::Uniform, 1).unwrap();
        let c = draw_calibration(&one, 1, 9).unwrap();
        assert_eq!(c.sample(0), one.sample(0));

        let ds = synth_activations(1000, 2, SynthDist::Uniform, 2).unwrap();
        assert_eq!(draw_calibration(&ds, 64, 5).unwrap(), draw_calibration(&ds, 64, 5).unwrap());

        // replay the generator by hand
        let mut rng = rng::stream(5, &[purpose::CALIBRATION]);
        let replay: Vec<usize> = (0..64).map(|_| rng.random_range(0..1000)).collect();
        let drawn = draw_calibration(&ds, 64, 5).unwrap();
        let mut got: Vec<usize> = drawn
            .samples()
            .map(|s| (0..1000).find(|&i| ds.sample(i) == s).unwrap())
            .collect();
        let mut want = replay.clone();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);

        assert!(draw_calibration(&ds, 0, 5).is_err());
    }

    #[test]
    fn synth_ranges_and_moments() {
        let u = synth_activations(3, 5, SynthDist::Uniform, 0).unwrap();
        assert!(u.inputs().data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let never = synth_activations(500, 4, SynthDist::Pathological { k: 0, mass: 0.0 }, 0).unwrap();
        assert!(never.samples().all(|s| s.data()[1..].iter().any(|&v| v > 0.0)));

        let n = 10_000;
        let e = synth_activations(n, 1, SynthDist::Exponential, 3).unwrap();
        let mean = e.inputs().data().iter().sum::<f64>() / n as f64;
        // Exp(1) has unit standard deviation
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");

        let g = synth_activations(200, 3, SynthDist::GaussianAbs, 3).unwrap();
        assert!(g.inputs().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn synth_spec_parsing() {
        assert_eq!(
            "pathological:k=0,mass=0.001".parse::<SynthDist>().unwrap(),
            SynthDist::Pathological { k: 0, mass: 0.001 }
        );
        assert_eq!("uniform".parse::<SynthDist>().unwrap(), SynthDist::Uniform);
        assert!("pathological:k=0,mass=1.5".parse::<SynthDist>().is_err());
        assert!("cauchy".parse::<SynthDist>().is_err());
    }

    #[test]
    fn calibration_size_default() {
        assert_eq!(default_calibration_size(0.1, 10, 10, 1.0), (8000.0f64).ln().ceil() as usize);
        assert_eq!(default_calibration_size(1e-300, 1000, 1000, 10.0), 256);
    }

    proptest! {
        #[test]
        fn idx_round_trip(pixels in proptest::collection::vec(any::<u8>(), 12), l0 in 0usize..10, l1 in 0usize..10, l2 in 0usize..10) {
            let ds = labelled(pixels, vec![l0, l1, l2], 2, 2);
            let dir = tempfile::tempdir().unwrap();
            let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
            write_idx(&ds, &ip, &lp).unwrap();
            prop_assert_eq!(load_idx(&ip, &lp).unwrap(), ds);
        }
    }
}
