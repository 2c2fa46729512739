//! Sequential network definition, forward pass with activation capture, and
//! the filter/channel bookkeeping that structured pruning operates on.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{self, DenseTensor, PatchMatrix};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `weight: [out, in]`, `bias: [out]`.
    Dense {
        weight: DenseTensor,
        bias: Option<DenseTensor>,
    },
    /// `weight: [filters, channels, kh, kw]`, `bias: [filters]`.
    Conv {
        weight: DenseTensor,
        bias: Option<DenseTensor>,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::AvgPool { .. } => "avgpool",
            Layer::Flatten => "flatten",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv { .. })
    }

    pub fn weight(&self) -> Option<&DenseTensor> {
        match self {
            Layer::Dense { weight, .. } | Layer::Conv { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&DenseTensor> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv { bias, .. } => bias.as_ref(),
            _ => None,
        }
    }

    pub(crate) fn weight_mut(&mut self) -> Option<&mut DenseTensor> {
        match self {
            Layer::Dense { weight, .. } | Layer::Conv { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut DenseTensor> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv { bias, .. } => bias.as_mut(),
            _ => None,
        }
    }

    /// Number of filters (output units or output feature maps).
    pub fn filters(&self) -> usize {
        self.weight().map_or(0, |w| w.shape()[0])
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, bias } => {
                let [out, inp] = weight.dims2()?;
                if input != [inp] {
                    return Err(dim_err!("dense layer [{out}, {inp}] cannot consume input {input:?}"));
                }
                check_bias(bias.as_ref(), out)?;
                Ok(vec![out])
            }
            Layer::Conv {
                weight,
                bias,
                stride,
                padding,
            } => {
                let [f, c, kh, kw] = weight.dims4()?;
                let [ic, h, w] = match input {
                    [a, b, c] => [*a, *b, *c],
                    _ => return Err(dim_err!("conv layer needs [c, h, w] input, got {input:?}")),
                };
                if ic != c {
                    return Err(dim_err!("conv layer expects {c} channels, input has {ic}"));
                }
                check_bias(bias.as_ref(), f)?;
                Ok(vec![
                    f,
                    tensor::conv_output_size(h, kh, *stride, *padding)?,
                    tensor::conv_output_size(w, kw, *stride, *padding)?,
                ])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { size, stride } | Layer::AvgPool { size, stride } => match input {
                [c, h, w] => Ok(vec![
                    *c,
                    tensor::conv_output_size(*h, *size, *stride, 0)?,
                    tensor::conv_output_size(*w, *size, *stride, 0)?,
                ]),
                _ => Err(dim_err!("pooling needs [c, h, w] input, got {input:?}")),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Applies the layer to one sample. Weighted layers add their bias.
    pub fn apply(&self, x: &DenseTensor) -> Result<DenseTensor> {
        match self {
            Layer::Dense { weight, bias } => {
                let mut z = tensor::matvec(weight, x.data())?;
                if let Some(b) = bias {
                    z.iter_mut().zip(b.data()).for_each(|(z, b)| *z += b);
                }
                Ok(DenseTensor::vector(z))
            }
            Layer::Conv {
                weight,
                stride,
                padding,
                ..
            } => {
                let [_, _, kh, kw] = weight.dims4()?;
                let pm = tensor::im2col(x, kh, kw, *stride, *padding)?;
                self.apply_conv_patches(&pm)
            }
            Layer::Relu => Ok(tensor::relu(x)),
            Layer::MaxPool { size, stride } => tensor::maxpool2d(x, *size, *stride),
            Layer::AvgPool { size, stride } => tensor::avgpool2d(x, *size, *stride),
            Layer::Flatten => x.clone().reshape(&[x.len()]),
        }
    }

    fn apply_conv_patches(&self, pm: &PatchMatrix) -> Result<DenseTensor> {
        let (weight, bias) = match self {
            Layer::Conv { weight, bias, .. } => (weight, bias),
            _ => unreachable!("apply_conv_patches on non-conv layer"),
        };
        let mut z = tensor::conv2d_patches(weight, pm)?;
        if let Some(b) = bias {
            let plane = pm.num_patches();
            for (f, &bv) in b.data().iter().enumerate() {
                z.data_mut()[f * plane..(f + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
        Ok(z)
    }
}

fn check_bias(bias: Option<&DenseTensor>, out: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [out] => Err(dim_err!(
            "bias shape {:?} does not match {out} filters",
            b.shape()
        )),
        _ => Ok(()),
    }
}

/// How filters of one weighted layer feed the next weighted layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coupling {
    /// Position (in `layers`) of the layer whose filters are pruned.
    pub producer: usize,
    /// Position of the layer whose input channels are pruned.
    pub consumer: usize,
    /// Filters of the producer = input channels of the consumer.
    pub channels: usize,
    /// Consumer input columns per channel. 1 for dense→dense, `h·w` when a
    /// conv feeds a dense layer through `Flatten`, 1 for conv→conv (whose
    /// channels are a weight axis of their own).
    pub group: usize,
    pub consumer_is_conv: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Captured values around one weighted layer for a single input.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Position of the weighted layer in `layers`.
    pub position: usize,
    /// Input seen by the layer.
    pub input: DenseTensor,
    /// Receptive fields of `input` (conv layers only).
    pub patches: Option<PatchMatrix>,
    /// Layer output including bias.
    pub pre_activation: DenseTensor,
    /// Value after the non-weighted layers that follow, i.e. the input of
    /// the next weighted layer (or the network output).
    pub activation: DenseTensor,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

impl NetworkModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if !layers.iter().any(Layer::is_weighted) {
            return Err(dim_err!("a network needs at least one dense or conv layer"));
        }
        let model = Self {
            input_shape,
            layers,
        };
        model.shapes()?;
        for i in 0..model.num_weighted().saturating_sub(1) {
            model.coupling(i)?;
        }
        Ok(model)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| dim_err!("layer {i} ({}): {e}", layer.kind()))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes()
            .expect("validated at construction")
            .pop()
            .unwrap()
    }

    /// Positions of dense/conv layers.
    pub fn weighted_positions(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_weighted())
            .collect()
    }

    pub fn num_weighted(&self) -> usize {
        self.layers.iter().filter(|l| l.is_weighted()).count()
    }

    /// Number of weighted layers whose filters can be pruned (all but the last).
    pub fn num_prunable(&self) -> usize {
        self.num_weighted().saturating_sub(1)
    }

    /// Filter count η of weighted layer `l`.
    pub fn filters(&self, l: usize) -> usize {
        self.layers[self.weighted_positions()[l]].filters()
    }

    /// Coupling between weighted layer `l` and `l + 1`.
    pub fn coupling(&self, l: usize) -> Result<Coupling> {
        let pos = self.weighted_positions();
        if l + 1 >= pos.len() {
            return Err(dim_err!(
                "layer {l} has no downstream weighted layer (network has {} weighted layers)",
                pos.len()
            ));
        }
        let (producer, consumer) = (pos[l], pos[l + 1]);
        let channels = self.layers[producer].filters();
        let shapes = self.shapes()?;
        let consumer_in = &shapes[consumer];
        let (group, consumer_is_conv) = match &self.layers[consumer] {
            Layer::Conv { weight, .. } => {
                if weight.shape()[1] != channels {
                    return Err(dim_err!(
                        "conv layer {consumer} expects {} channels, producer has {channels} filters",
                        weight.shape()[1]
                    ));
                }
                (1, true)
            }
            Layer::Dense { .. } => {
                let cols = consumer_in[0];
                if cols % channels != 0 {
                    return Err(dim_err!(
                        "dense layer {consumer} has {cols} inputs, not a multiple of {channels} filters"
                    ));
                }
                (cols / channels, false)
            }
            _ => unreachable!(),
        };
        Ok(Coupling {
            producer,
            consumer,
            channels,
            group,
            consumer_is_conv,
        })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        self.forward_impl(x, false).map(|(out, _)| out)
    }

    /// Forward pass that also records every weighted layer's input,
    /// pre-activation and activation.
    pub fn forward_traced(&self, x: &DenseTensor) -> Result<(DenseTensor, ForwardTrace)> {
        self.forward_impl(x, true)
            .map(|(out, trace)| (out, trace.expect("capture requested")))
    }

    fn forward_impl(
        &self,
        x: &DenseTensor,
        capture: bool,
    ) -> Result<(DenseTensor, Option<ForwardTrace>)> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(dim_err!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            ));
        }
        let mut traces: Vec<LayerTrace> = Vec::new();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.is_weighted() {
                if let Some(last) = traces.last_mut() {
                    last.activation = cur.clone();
                }
                let (patches, z) = match layer {
                    Layer::Conv {
                        weight,
                        stride,
                        padding,
                        ..
                    } => {
                        let [_, _, kh, kw] = weight.dims4()?;
                        let pm = tensor::im2col(&cur, kh, kw, *stride, *padding)?;
                        let z = layer.apply_conv_patches(&pm)?;
                        (Some(pm), z)
                    }
                    _ => (None, layer.apply(&cur)?),
                };
                if capture {
                    traces.push(LayerTrace {
                        position: i,
                        input: cur,
                        patches,
                        pre_activation: z.clone(),
                        activation: z.clone(),
                    });
                }
                cur = z;
            } else {
                cur = layer.apply(&cur)?;
            }
        }
        if let Some(last) = traces.last_mut() {
            last.activation = cur.clone();
        }
        Ok((cur, capture.then_some(ForwardTrace { layers: traces })))
    }

    /// Count of nonzero weight and bias entries.
    pub fn size_of(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight().map_or(0, DenseTensor::count_nonzero)
                    + l.bias().map_or(0, DenseTensor::count_nonzero)
            })
            .sum()
    }

    /// Count of nonzero weight entries (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::weight)
            .map(DenseTensor::count_nonzero)
            .sum()
    }

    /// Multiply-accumulates of one forward pass through dense/conv layers,
    /// counted on the dense (uncompacted) shapes.
    pub fn macs(&self) -> usize {
        let shapes = self.shapes().expect("validated at construction");
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                Layer::Dense { weight, .. } => weight.len(),
                Layer::Conv { weight, .. } => {
                    let out = &shapes[i + 1];
                    weight.len() * out[1] * out[2]
                }
                _ => 0,
            })
            .sum()
    }

    /// Whether filter `j` of weighted layer `l` has only zero weights.
    pub fn filter_is_zero(&self, l: usize, j: usize) -> bool {
        let w = self.layers[self.weighted_positions()[l]].weight().unwrap();
        w.row(j).iter().all(|&v| v == 0.0)
    }

    /// Whether input channel `j` of the consumer in coupling `l` is all zero.
    pub fn channel_is_zero(&self, l: usize, j: usize) -> Result<bool> {
        let c = self.coupling(l)?;
        let w = self.layers[c.consumer].weight().unwrap();
        Ok(channel_entries(w, &c, j).all(|idx| w.data()[idx] == 0.0))
    }

    /// Returns a copy where, for coupling `l`, channel `j` of the consumer is
    /// multiplied by `scales[j]`; channels with scale 0 also have their
    /// producer filter zeroed (bias left as is).
    pub fn with_channel_scales(&self, l: usize, scales: &[f64]) -> Result<NetworkModel> {
        let c = self.coupling(l)?;
        if scales.len() != c.channels {
            return Err(dim_err!(
                "{} channel scales for a layer with {} filters",
                scales.len(),
                c.channels
            ));
        }
        let mut out = self.clone();
        {
            let w = out.layers[c.consumer].weight_mut().unwrap();
            for (j, &s) in scales.iter().enumerate() {
                if s == 1.0 {
                    continue;
                }
                let idx: Vec<usize> = channel_entries(w, &c, j).collect();
                let data = w.data_mut();
                for i in idx {
                    data[i] = if s == 0.0 { 0.0 } else { data[i] * s };
                }
            }
        }
        let wp = out.layers[c.producer].weight_mut().unwrap();
        let width = wp.len() / c.channels;
        for (j, &s) in scales.iter().enumerate() {
            if s == 0.0 {
                wp.data_mut()[j * width..(j + 1) * width].fill(0.0);
            }
        }
        Ok(out)
    }

    /// Physically removes pruned filter/channel pairs.
    ///
    /// A pair is removable when the consumer channel is entirely zero. The
    /// producer filter must then be zero as well (and vice versa), otherwise
    /// the zero pattern did not come from structured pruning.
    pub fn compact(&self) -> Result<NetworkModel> {
        let positions = self.weighted_positions();
        let mut keep_rows: Vec<Option<Vec<usize>>> = vec![None; self.layers.len()];
        let mut keep_cols: Vec<Option<(Coupling, Vec<usize>)>> = vec![None; self.layers.len()];
        for l in 0..self.num_prunable() {
            let c = self.coupling(l)?;
            let mut keep = Vec::new();
            for j in 0..c.channels {
                let chan_zero = self.channel_is_zero(l, j)?;
                let filt_zero = self.filter_is_zero(l, j);
                if chan_zero != filt_zero {
                    return Err(Error::Integrity(format!(
                        "weighted layer {l}: filter {j} is {} but its downstream channel is {}",
                        if filt_zero { "zero" } else { "nonzero" },
                        if chan_zero { "zero" } else { "nonzero" },
                    )));
                }
                if !chan_zero {
                    keep.push(j);
                }
            }
            if keep.is_empty() {
                return Err(Error::Degenerate(format!(
                    "every filter of weighted layer {l} is pruned"
                )));
            }
            keep_rows[positions[l]] = Some(keep.clone());
            keep_cols[positions[l + 1]] = Some((c, keep));
        }

        let mut layers = self.layers.clone();
        for (pos, layer) in layers.iter_mut().enumerate() {
            if !layer.is_weighted() {
                continue;
            }
            let mut w = layer.weight().unwrap().clone();
            let mut b = layer.bias().cloned();
            if let Some(rows) = &keep_rows[pos] {
                w = select_rows(&w, rows)?;
                b = b.map(|b| select_rows(&b, rows)).transpose()?;
            }
            if let Some((c, chans)) = &keep_cols[pos] {
                w = select_channels(&w, c, chans)?;
            }
            *layer.weight_mut().unwrap() = w;
            if let (Some(dst), Some(src)) = (layer.bias_mut(), b) {
                *dst = src;
            }
        }
        NetworkModel::new(self.input_shape.clone(), layers)
    }
}

/// Flat indices of consumer weight entries belonging to channel `j`.
pub(crate) fn channel_entries<'a>(
    w: &'a DenseTensor,
    c: &Coupling,
    j: usize,
) -> impl Iterator<Item = usize> + 'a {
    let shape = w.shape().to_vec();
    let (rows, row_len, start, len) = if c.consumer_is_conv {
        let window = shape[2] * shape[3];
        (shape[0], shape[1] * window, j * window, window)
    } else {
        (shape[0], shape[1], j * c.group, c.group)
    };
    (0..rows).flat_map(move |r| (r * row_len + start)..(r * row_len + start + len))
}

fn select_rows(t: &DenseTensor, rows: &[usize]) -> Result<DenseTensor> {
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
    DenseTensor::new(shape, data)
}

fn select_channels(w: &DenseTensor, c: &Coupling, chans: &[usize]) -> Result<DenseTensor> {
    let mut shape = w.shape().to_vec();
    let rows = shape[0];
    let (row_len, span) = if c.consumer_is_conv {
        (shape[1] * shape[2] * shape[3], shape[2] * shape[3])
    } else {
        (shape[1], c.group)
    };
    let mut data = Vec::with_capacity(rows * chans.len() * span);
    for r in 0..rows {
        let row = &w.data()[r * row_len..(r + 1) * row_len];
        for &j in chans {
            data.extend_from_slice(&row[j * span..(j + 1) * span]);
        }
    }
    if c.consumer_is_conv {
        shape[1] = chans.len();
    } else {
        shape[1] = chans.len() * c.group;
    }
    DenseTensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(rows: &[Vec<f64>]) -> Layer {
        Layer::Dense {
            weight: DenseTensor::matrix(rows),
            bias: None,
        }
    }

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_dense() {
        let m = NetworkModel::new(vec![2], vec![dense(&[vec![1.0, 0.0], vec![0.0, 1.0]])]).unwrap();
        let x = DenseTensor::vector(vec![1.0, 2.0]);
        assert_eq!(m.forward(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_then_relu_trace() {
        let m = NetworkModel::new(vec![2], vec![dense(&[vec![1.0, 1.0]]), Layer::Relu]).unwrap();
        let (out, trace) = m.forward_traced(&DenseTensor::vector(vec![-3.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[0.0]);
        assert_eq!(trace.layers[0].pre_activation.data(), &[-2.0]);
        assert_eq!(trace.layers[0].activation.data(), &[0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(NetworkModel::new(vec![3], vec![dense(&[vec![1.0, 1.0]])]).is_err());
        assert!(NetworkModel::new(vec![2], vec![Layer::Relu]).is_err());
        let m = NetworkModel::new(vec![2], vec![dense(&[vec![1.0, 1.0]])]).unwrap();
        assert!(m.forward(&DenseTensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn size_counts() {
        let m = NetworkModel::new(vec![2], vec![dense(&[vec![0.0, 0.0], vec![0.0, 0.0]])]).unwrap();
        assert_eq!(m.size_of(), 0);
        let m = NetworkModel::new(vec![2], vec![dense(&[vec![1.0, 0.0], vec![2.0, 3.0]])]).unwrap();
        assert_eq!(m.size_of(), 3);
    }

    fn conv_stack(rng: &mut ChaCha8Rng) -> NetworkModel {
        NetworkModel::new(
            vec![2, 6, 6],
            vec![
                Layer::Conv {
                    weight: rand_t(&[4, 2, 3, 3], rng),
                    bias: Some(rand_t(&[4], rng)),
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::Conv {
                    weight: rand_t(&[5, 4, 3, 3], rng),
                    bias: Some(rand_t(&[5], rng)),
                    stride: 1,
                    padding: 0,
                },
                Layer::Relu,
                Layer::MaxPool { size: 2, stride: 2 },
                Layer::Flatten,
                Layer::Dense {
                    weight: rand_t(&[3, 20], rng),
                    bias: None,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn pruning_channels_drops_size_by_filter_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = conv_stack(&mut rng);
        let before = m.layers()[2].weight().unwrap().count_nonzero();
        let pruned = m.with_channel_scales(0, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let after = pruned.layers()[2].weight().unwrap().count_nonzero();
        // f = 5 filters, k = 2 channels, 3x3 kernels
        assert_eq!(before - after, 5 * 2 * 9);
    }

    #[test]
    fn compact_preserves_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = conv_stack(&mut rng);
        let pruned = m
            .with_channel_scales(0, &[1.0, 0.0, 2.5, 1.0])
            .unwrap()
            .with_channel_scales(1, &[0.0, 1.0, 1.0, 0.0, 0.5])
            .unwrap();
        let small = pruned.compact().unwrap();
        assert_eq!(small.layers()[0].weight().unwrap().shape(), &[3, 2, 3, 3]);
        assert_eq!(small.layers()[2].weight().unwrap().shape(), &[3, 3, 3, 3]);
        assert_eq!(small.layers()[6].weight().unwrap().shape(), &[3, 12]);
        assert!(small.size_of() <= pruned.size_of());
        for _ in 0..100 {
            let x = rand_t(&[2, 6, 6], &mut rng);
            assert_eq!(pruned.forward(&x).unwrap(), small.forward(&x).unwrap());
        }
    }

    #[test]
    fn compact_dense_stack() {
        let m = NetworkModel::new(
            vec![2],
            vec![
                dense(&[vec![1.0, 2.0], vec![-1.0, 0.5]]),
                Layer::Relu,
                dense(&[vec![0.3, 0.7]]),
            ],
        )
        .unwrap();
        assert_eq!(m.compact().unwrap(), m);
        let pruned = m.with_channel_scales(0, &[1.0, 0.0]).unwrap();
        let small = pruned.compact().unwrap();
        assert_eq!(small.layers()[0].weight().unwrap().shape(), &[1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x = rand_t(&[2], &mut rng);
            assert_eq!(pruned.forward(&x).unwrap(), small.forward(&x).unwrap());
        }
        let dead = m.with_channel_scales(0, &[0.0, 0.0]).unwrap();
        assert!(matches!(dead.compact(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn compact_detects_inconsistent_zeros() {
        let m = NetworkModel::new(
            vec![2],
            vec![
                dense(&[vec![0.0, 0.0], vec![-1.0, 0.5]]),
                Layer::Relu,
                dense(&[vec![0.3, 0.7]]),
            ],
        )
        .unwrap();
        assert!(matches!(m.compact(), Err(Error::Integrity(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = conv_stack(&mut rng);
        let x = rand_t(&[2, 6, 6], &mut rng);
        assert_eq!(m.forward(&x).unwrap().data(), m.forward(&x).unwrap().data());
    }
}
