//! Mini-batch SGD with momentum, weight decay and step learning-rate decay.
//!
//! Backpropagation is written out per layer kind. Every reduction runs in a
//! fixed sequential order, so a run is bit-reproducible for a given seed.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{param_err, Error, Result};
use crate::model::{channel_entries, Layer, NetworkModel};
use crate::rng::{self, purpose};
use crate::tensor::{self, DenseTensor, PatchMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs (0-based) at whose start the rate is multiplied by the factor.
    pub lr_decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: Loss,
}

impl TrainConfig {
    pub fn lenet300() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_epochs: vec![30],
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            loss: Loss::CrossEntropy,
        }
    }

    pub fn lenet300_finetune() -> Self {
        Self {
            epochs: 30,
            lr_decay_epochs: vec![20, 28],
            ..Self::lenet300()
        }
    }

    pub fn lenet5() -> Self {
        Self {
            lr_decay_epochs: vec![25, 35],
            ..Self::lenet300()
        }
    }

    pub fn lenet5_finetune() -> Self {
        Self::lenet5()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(param_err!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(param_err!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay < 0.0 {
            return Err(param_err!("weight decay must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(param_err!("batch size must be positive"));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param_err!("decay epochs must be strictly increasing"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay_factor.powi(n as i32)
    }
}

/// Fully connected 784-300-100-10 network.
pub fn lenet300(seed: u64) -> NetworkModel {
    let layers = vec![
        Layer::Flatten,
        dense(300, 784),
        Layer::Relu,
        dense(100, 300),
        Layer::Relu,
        dense(10, 100),
    ];
    init(NetworkModel::new(vec![1, 28, 28], layers).expect("valid preset"), seed)
}

/// Two 5×5 conv layers (20 and 50 filters, each followed by 2×2 max
/// pooling) and two dense layers (500, 10).
pub fn lenet5(seed: u64) -> NetworkModel {
    let conv = |f: usize, c: usize| Layer::Conv {
        weight: DenseTensor::zeros(&[f, c, 5, 5]),
        bias: Some(DenseTensor::zeros(&[f])),
        stride: 1,
        padding: 0,
    };
    let layers = vec![
        conv(20, 1),
        Layer::Relu,
        Layer::MaxPool { size: 2, stride: 2 },
        conv(50, 20),
        Layer::Relu,
        Layer::MaxPool { size: 2, stride: 2 },
        Layer::Flatten,
        dense(500, 800),
        Layer::Relu,
        dense(10, 500),
    ];
    init(NetworkModel::new(vec![1, 28, 28], layers).expect("valid preset"), seed)
}

fn dense(out: usize, inp: usize) -> Layer {
    Layer::Dense {
        weight: DenseTensor::zeros(&[out, inp]),
        bias: Some(DenseTensor::zeros(&[out])),
    }
}

/// Re-initializes weights uniformly in `±sqrt(6 / (fan_in + fan_out))` and
/// zeroes biases.
pub fn init(mut model: NetworkModel, seed: u64) -> NetworkModel {
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        let Some(w) = layer.weight_mut() else { continue };
        let shape = w.shape().to_vec();
        let field: usize = shape[2..].iter().product();
        let bound = (6.0 / ((shape[0] + shape[1]) * field) as f64).sqrt();
        let mut r = rng::stream(seed, &[purpose::INIT, i as u64]);
        w.data_mut().iter_mut().for_each(|v| *v = r.random_range(-bound..bound));
        if let Some(b) = layer.bias_mut() {
            b.data_mut().fill(0.0);
        }
    }
    model
}

/// A batch of samples, each `shape`-sized, stored back to back.
#[derive(Clone, Debug)]
struct Batch {
    n: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Batch {
    fn width(&self) -> usize {
        self.shape.iter().product()
    }

    fn sample(&self, b: usize) -> &[f64] {
        let w = self.width();
        &self.data[b * w..(b + 1) * w]
    }
}

enum Cache {
    Dense(Vec<f64>),
    Conv(Vec<PatchMatrix>),
    Relu(Vec<f64>),
    MaxPool { argmax: Vec<usize>, in_width: usize, out_width: usize },
    AvgPool { in_shape: Vec<usize>, size: usize, stride: usize },
    Flatten,
}

/// `out[b, o] = Σ_k x[b, k] · w[o, k]`, accumulated in increasing `k`.
fn dense_forward(x: &[f64], w: &DenseTensor, n: usize) -> Vec<f64> {
    let [out, inp] = [w.shape()[0], w.shape()[1]];
    let wt = w.transpose().expect("2-D weight");
    let wt = wt.data();
    let mut z = vec![0.0; n * out];
    for b in 0..n {
        let zr = &mut z[b * out..(b + 1) * out];
        for (k, &xk) in x[b * inp..(b + 1) * inp].iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (o, &wv) in zr.iter_mut().zip(&wt[k * out..(k + 1) * out]) {
                *o += xk * wv;
            }
        }
    }
    z
}

fn add_bias(z: &mut [f64], bias: Option<&DenseTensor>, per: usize) {
    if let Some(b) = bias {
        let b = b.data();
        for (i, v) in z.iter_mut().enumerate() {
            *v += b[(i / per) % b.len()];
        }
    }
}

fn forward_batch(model: &NetworkModel, x: Batch, caches: Option<&mut Vec<Cache>>) -> Result<Batch> {
    let keep = caches.is_some();
    let mut store = Vec::new();
    let mut cur = x;
    for layer in model.layers() {
        let (next, cache) = match layer {
            Layer::Dense { weight, bias } => {
                let out = weight.shape()[0];
                let mut z = dense_forward(&cur.data, weight, cur.n);
                add_bias(&mut z, bias.as_ref(), 1);
                let n = cur.n;
                (Batch { n, shape: vec![out], data: z }, Cache::Dense(cur.data))
            }
            Layer::Conv { weight, bias, stride, padding } => {
                let [f, _, kh, kw] = [weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]];
                let mut data = Vec::new();
                let mut pms = Vec::with_capacity(cur.n);
                let mut shape = Vec::new();
                for b in 0..cur.n {
                    let xs = DenseTensor::new(cur.shape.clone(), cur.sample(b).to_vec())?;
                    let pm = tensor::im2col(&xs, kh, kw, *stride, *padding)?;
                    let mut z = conv_forward(weight, &pm);
                    add_bias(&mut z, bias.as_ref(), pm.num_patches());
                    shape = vec![f, pm.out_h, pm.out_w];
                    data.extend_from_slice(&z);
                    if keep {
                        pms.push(pm);
                    }
                }
                (Batch { n: cur.n, shape, data }, Cache::Conv(pms))
            }
            Layer::Relu => {
                let out: Vec<f64> = cur.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                let cache = Cache::Relu(if keep { out.clone() } else { Vec::new() });
                (Batch { data: out, ..cur }, cache)
            }
            Layer::MaxPool { size, stride } | Layer::AvgPool { size, stride } => {
                let kind = if matches!(layer, Layer::MaxPool { .. }) {
                    tensor::PoolKind::Max
                } else {
                    tensor::PoolKind::Avg
                };
                let mut data = Vec::new();
                let mut argmax = Vec::new();
                let mut shape = Vec::new();
                for b in 0..cur.n {
                    let xs = DenseTensor::new(cur.shape.clone(), cur.sample(b).to_vec())?;
                    let (o, idx) = tensor::pool2d(&xs, kind, *size, *stride)?;
                    shape = o.shape().to_vec();
                    data.extend_from_slice(o.data());
                    argmax.extend(idx);
                }
                let out_width: usize = shape.iter().product();
                let cache = match kind {
                    tensor::PoolKind::Max => Cache::MaxPool {
                        argmax,
                        in_width: cur.width(),
                        out_width,
                    },
                    tensor::PoolKind::Avg => Cache::AvgPool {
                        in_shape: cur.shape.clone(),
                        size: *size,
                        stride: *stride,
                    },
                };
                (Batch { n: cur.n, shape, data }, cache)
            }
            Layer::Flatten => {
                let w = cur.width();
                (Batch { shape: vec![w], ..cur }, Cache::Flatten)
            }
        };
        if keep {
            store.push(cache);
        }
        cur = next;
    }
    if let Some(c) = caches {
        *c = store;
    }
    Ok(cur)
}

/// `z[f, p] = Σ_k w[f, k] · patches[p, k]` for one sample.
fn conv_forward(w: &DenseTensor, pm: &PatchMatrix) -> Vec<f64> {
    let f = w.shape()[0];
    let cols = w.len() / f;
    let np = pm.num_patches();
    let pt = pm.patches.transpose().expect("2-D patches");
    let pt = pt.data();
    let mut z = vec![0.0; f * np];
    for (fi, zr) in z.chunks_exact_mut(np).enumerate() {
        for (k, &wv) in w.data()[fi * cols..(fi + 1) * cols].iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            for (o, &pv) in zr.iter_mut().zip(&pt[k * np..(k + 1) * np]) {
                *o += wv * pv;
            }
        }
    }
    z
}

/// Gradients of the loss with respect to every weight and bias, indexed by
/// layer position (`None` for parameter-free layers).
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weight: Vec<Option<DenseTensor>>,
    pub bias: Vec<Option<DenseTensor>>,
}

fn backward_batch(model: &NetworkModel, caches: Vec<Cache>, mut grad: Vec<f64>, n: usize) -> Result<Gradients> {
    let layers = model.layers();
    let mut gw: Vec<Option<DenseTensor>> = vec![None; layers.len()];
    let mut gb: Vec<Option<DenseTensor>> = vec![None; layers.len()];
    for (i, cache) in caches.into_iter().enumerate().rev() {
        let layer = &layers[i];
        grad = match (layer, cache) {
            (Layer::Dense { weight, bias }, Cache::Dense(x)) => {
                let [out, inp] = [weight.shape()[0], weight.shape()[1]];
                let mut dw = vec![0.0; out * inp];
                let mut db = vec![0.0; out];
                for b in 0..n {
                    let xr = &x[b * inp..(b + 1) * inp];
                    for o in 0..out {
                        let g = grad[b * out + o];
                        db[o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        for (d, &xv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                            *d += g * xv;
                        }
                    }
                }
                let mut dx = vec![0.0; n * inp];
                if i > 0 {
                    let w = weight.data();
                    for b in 0..n {
                        let dxr = &mut dx[b * inp..(b + 1) * inp];
                        for o in 0..out {
                            let g = grad[b * out + o];
                            if g == 0.0 {
                                continue;
                            }
                            for (d, &wv) in dxr.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                                *d += g * wv;
                            }
                        }
                    }
                }
                gw[i] = Some(DenseTensor::new(weight.shape().to_vec(), dw)?);
                gb[i] = bias.as_ref().map(|_| DenseTensor::vector(db));
                dx
            }
            (Layer::Conv { weight, bias, .. }, Cache::Conv(pms)) => {
                let f = weight.shape()[0];
                let cols = weight.len() / f;
                let mut dw = vec![0.0; weight.len()];
                let mut db = vec![0.0; f];
                let in_width: usize = pms[0].source_shape.iter().product();
                let mut dx = vec![0.0; n * in_width];
                for (b, pm) in pms.iter().enumerate() {
                    let np = pm.num_patches();
                    let g = &grad[b * f * np..(b + 1) * f * np];
                    let mut dpatch = vec![0.0; np * cols];
                    for fi in 0..f {
                        let wrow = &weight.data()[fi * cols..(fi + 1) * cols];
                        let dwrow = &mut dw[fi * cols..(fi + 1) * cols];
                        for p in 0..np {
                            let gv = g[fi * np + p];
                            db[fi] += gv;
                            if gv == 0.0 {
                                continue;
                            }
                            for (d, &pv) in dwrow.iter_mut().zip(pm.patches.row(p)) {
                                *d += gv * pv;
                            }
                            if i > 0 {
                                for (d, &wv) in dpatch[p * cols..(p + 1) * cols].iter_mut().zip(wrow) {
                                    *d += gv * wv;
                                }
                            }
                        }
                    }
                    if i > 0 {
                        let back = tensor::col2im(&DenseTensor::new(vec![np, cols], dpatch)?, pm)?;
                        dx[b * in_width..(b + 1) * in_width].copy_from_slice(back.data());
                    }
                }
                gw[i] = Some(DenseTensor::new(weight.shape().to_vec(), dw)?);
                gb[i] = bias.as_ref().map(|_| DenseTensor::vector(db));
                dx
            }
            (Layer::Relu, Cache::Relu(out)) => grad
                .iter()
                .zip(&out)
                .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
                .collect(),
            (Layer::MaxPool { .. }, Cache::MaxPool { argmax, in_width, out_width }) => {
                let mut dx = vec![0.0; n * in_width];
                for b in 0..n {
                    for k in 0..out_width {
                        dx[b * in_width + argmax[b * out_width + k]] += grad[b * out_width + k];
                    }
                }
                dx
            }
            (Layer::AvgPool { .. }, Cache::AvgPool { in_shape, size, stride }) => {
                let [c, h, w] = [in_shape[0], in_shape[1], in_shape[2]];
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let norm = (size * size) as f64;
                let (iw, ow_all) = (c * h * w, c * oh * ow);
                let mut dx = vec![0.0; n * iw];
                for b in 0..n {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad[b * ow_all + (ch * oh + oy) * ow + ox] / norm;
                                for ky in 0..size {
                                    for kx in 0..size {
                                        dx[b * iw + (ch * h + oy * stride + ky) * w + ox * stride + kx] += g;
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
            (Layer::Flatten, Cache::Flatten) => grad,
            _ => unreachable!("cache kind follows layer kind"),
        };
    }
    Ok(Gradients { weight: gw, bias: gb })
}

/// Per-sample targets of a batch.
#[derive(Clone, Copy, Debug)]
pub enum BatchTargets<'a> {
    Labels(&'a [usize]),
    /// `[batch, outputs]`, row-major.
    Values(&'a [f64]),
}

/// Mean loss over the batch and its gradient with respect to the outputs.
fn loss_grad(out: &Batch, targets: BatchTargets, loss: Loss) -> Result<(f64, Vec<f64>, usize)> {
    let k = out.width();
    let n = out.n;
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    let mut wrong = 0;
    for b in 0..n {
        let y = out.sample(b);
        let g = &mut grad[b * k..(b + 1) * k];
        let argmax = (0..k).fold(0, |best, j| if y[j] > y[best] { j } else { best });
        match (loss, targets) {
            (Loss::CrossEntropy, BatchTargets::Labels(labels)) => {
                let t = labels[b];
                if t >= k {
                    return Err(param_err!("label {t} out of range for {k} outputs"));
                }
                let mx = y[argmax];
                let sum: f64 = y.iter().map(|v| (v - mx).exp()).sum();
                total += sum.ln() + mx - y[t];
                for j in 0..k {
                    g[j] = ((y[j] - mx).exp() / sum - if j == t { 1.0 } else { 0.0 }) / n as f64;
                }
                wrong += usize::from(argmax != t);
            }
            (Loss::Mse, _) => {
                let target: Vec<f64> = match targets {
                    BatchTargets::Values(v) => v[b * k..(b + 1) * k].to_vec(),
                    BatchTargets::Labels(l) => (0..k).map(|j| f64::from(u8::from(j == l[b]))).collect(),
                };
                if let BatchTargets::Labels(l) = targets {
                    wrong += usize::from(argmax != l[b]);
                }
                let scale = (n * k) as f64;
                for j in 0..k {
                    let d = y[j] - target[j];
                    total += d * d / k as f64;
                    g[j] = 2.0 * d / scale;
                }
            }
            (Loss::CrossEntropy, BatchTargets::Values(_)) => {
                return Err(param_err!("cross-entropy needs integer labels"));
            }
        }
    }
    Ok((total / n as f64, grad, wrong))
}

fn gather(ds: &Dataset, idx: &[usize]) -> Batch {
    let shape = ds.sample_shape().to_vec();
    let w: usize = shape.iter().product();
    let src = ds.inputs().data();
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(&src[i * w..(i + 1) * w]);
    }
    Batch { n: idx.len(), shape, data }
}

fn gather_targets(ds: &Dataset, idx: &[usize]) -> Result<(Vec<usize>, Vec<f64>)> {
    match ds.targets() {
        Targets::Labels(l) => Ok((idx.iter().map(|&i| l[i]).collect(), Vec::new())),
        Targets::Values(v) => {
            let k = v.len() / ds.len();
            let mut out = Vec::with_capacity(idx.len() * k);
            for &i in idx {
                out.extend_from_slice(&v.data()[i * k..(i + 1) * k]);
            }
            Ok((Vec::new(), out))
        }
        Targets::None => Err(param_err!("training needs labels or target values")),
    }
}

fn targets_ref<'a>(ds: &Dataset, labels: &'a [usize], values: &'a [f64]) -> BatchTargets<'a> {
    match ds.targets() {
        Targets::Labels(_) => BatchTargets::Labels(labels),
        _ => BatchTargets::Values(values),
    }
}

/// Loss and parameter gradients for a batch given as `[batch, ...input]`.
pub fn batch_gradients(model: &NetworkModel, inputs: &DenseTensor, targets: BatchTargets, loss: Loss) -> Result<(f64, Gradients)> {
    let batch = Batch {
        n: inputs.shape()[0],
        shape: inputs.shape()[1..].to_vec(),
        data: inputs.data().to_vec(),
    };
    let n = batch.n;
    let mut caches = Vec::new();
    let out = forward_batch(model, batch, Some(&mut caches))?;
    let (l, g, _) = loss_grad(&out, targets, loss)?;
    Ok((l, backward_batch(model, caches, g, n)?))
}

/// Loss for a batch, without gradients.
pub fn batch_loss(model: &NetworkModel, inputs: &DenseTensor, targets: BatchTargets, loss: Loss) -> Result<f64> {
    let batch = Batch {
        n: inputs.shape()[0],
        shape: inputs.shape()[1..].to_vec(),
        data: inputs.data().to_vec(),
    };
    let out = forward_batch(model, batch, None)?;
    loss_grad(&out, targets, loss).map(|(l, _, _)| l)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub loss: f64,
    /// Misclassification rate; `None` without labels.
    pub error: Option<f64>,
    pub samples: usize,
}

/// Mean loss and classification error over a dataset.
pub fn evaluate(model: &NetworkModel, ds: &Dataset, loss: Loss) -> Result<EvalStats> {
    if ds.is_empty() {
        return Err(Error::Degenerate("cannot evaluate on an empty dataset".into()));
    }
    let labelled = matches!(ds.targets(), Targets::Labels(_));
    let mut total = 0.0;
    let mut wrong = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(256) {
        let (labels, values) = gather_targets(ds, chunk)?;
        let out = forward_batch(model, gather(ds, chunk), None)?;
        let (l, _, w) = loss_grad(&out, targets_ref(ds, &labels, &values), loss)?;
        total += l * chunk.len() as f64;
        wrong += w;
    }
    Ok(EvalStats {
        loss: total / ds.len() as f64,
        error: labelled.then(|| wrong as f64 / ds.len() as f64),
        samples: ds.len(),
    })
}

/// Which weight entries may change; `None` means all.
pub type SupportMask = Vec<Option<Vec<bool>>>;

/// Mask freezing every pruned filter (zero row of layer ℓ) and the matching
/// consumer channel of layer ℓ+1.
pub fn support_mask(model: &NetworkModel) -> Result<SupportMask> {
    let pos = model.weighted_positions();
    let mut mask: SupportMask = vec![None; model.layers().len()];
    for l in 0..model.num_prunable() {
        let c = model.coupling(l)?;
        for j in 0..c.channels {
            if !model.filter_is_zero(l, j) || !model.channel_is_zero(l, j)? {
                continue;
            }
            let wp = model.layers()[pos[l]].weight().unwrap();
            let width = wp.len() / c.channels;
            let mp = mask[pos[l]].get_or_insert_with(|| vec![true; wp.len()]);
            mp[j * width..(j + 1) * width].fill(false);
            let wc = model.layers()[c.consumer].weight().unwrap();
            let mc = mask[c.consumer].get_or_insert_with(|| vec![true; wc.len()]);
            for e in channel_entries(wc, &c, j) {
                mc[e] = false;
            }
        }
    }
    Ok(mask)
}

/// SGD with momentum and coupled L2 weight decay:
/// `v ← μ v + (g + λ w)`, `w ← w − lr · v`.
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    vel_w: Vec<Option<Vec<f64>>>,
    vel_b: Vec<Option<Vec<f64>>>,
    mask: SupportMask,
}

impl Sgd {
    pub fn new(model: &NetworkModel, momentum: f64, weight_decay: f64, mask: Option<SupportMask>) -> Self {
        let layers = model.layers();
        Self {
            momentum,
            weight_decay,
            vel_w: layers.iter().map(|l| l.weight().map(|w| vec![0.0; w.len()])).collect(),
            vel_b: layers.iter().map(|l| l.bias().map(|b| vec![0.0; b.len()])).collect(),
            mask: mask.unwrap_or_else(|| vec![None; layers.len()]),
        }
    }

    pub fn step(&mut self, model: &mut NetworkModel, grads: &Gradients, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let update = |p: &mut [f64], g: &[f64], v: &mut [f64], mask: Option<&Vec<bool>>| {
            for k in 0..p.len() {
                if mask.is_some_and(|m| !m[k]) {
                    continue;
                }
                v[k] = mu * v[k] + (g[k] + wd * p[k]);
                p[k] -= lr * v[k];
            }
        };
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            if let (Some(w), Some(g), Some(v)) = (layer.weight_mut(), &grads.weight[i], &mut self.vel_w[i]) {
                update(w.data_mut(), g.data(), v, self.mask[i].as_ref());
            }
            if let (Some(b), Some(g), Some(v)) = (layer.bias_mut(), &grads.bias[i], &mut self.vel_b[i]) {
                update(b.data_mut(), g.data(), v, None);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Trains `model` on `train`, evaluating on `val` after every epoch.
pub fn train(model: &NetworkModel, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<(NetworkModel, History)> {
    run(model, train, val, cfg, None)
}

/// Like [`train`]; with `frozen_support`, pruned filter/channel pairs stay
/// exactly zero.
pub fn finetune(model: &NetworkModel, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig, frozen_support: bool) -> Result<(NetworkModel, History)> {
    let mask = if frozen_support { Some(support_mask(model)?) } else { None };
    run(model, train, val, cfg, mask)
}

fn run(model: &NetworkModel, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig, mask: Option<SupportMask>) -> Result<(NetworkModel, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    if train.sample_shape() != model.input_shape() {
        return Err(param_err!(
            "dataset samples have shape {:?}, model expects {:?}",
            train.sample_shape(),
            model.input_shape()
        ));
    }
    let mut model = model.clone();
    let mut opt = Sgd::new(&model, cfg.momentum, cfg.weight_decay, mask);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[purpose::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (labels, values) = gather_targets(train, chunk)?;
            let batch = gather(train, chunk);
            let n = batch.n;
            let mut caches = Vec::new();
            let out = forward_batch(&model, batch, Some(&mut caches))?;
            let (l, g, _) = loss_grad(&out, targets_ref(train, &labels, &values), cfg.loss)?;
            if !l.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss became {l} at epoch {epoch}, batch {bi} (lr {lr}); try a smaller learning rate"
                )));
            }
            total += l * n as f64;
            let grads = backward_batch(&model, caches, g, n)?;
            opt.step(&mut model, &grads, lr);
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_error) = match val {
            Some(v) if !v.is_empty() => {
                let s = evaluate(&model, v, cfg.loss)?;
                (Some(s.loss), s.error)
            }
            _ => (None, None),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train loss {train_loss:.5}{}",
            val_error.map(|e| format!(" val error {:.4}", e)).unwrap_or_default()
        );
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_error,
        });
    }
    Ok((model, history))
}
