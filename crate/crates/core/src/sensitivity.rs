//! Empirical sensitivity of filters/neurons.
//!
//! For a weighted layer ℓ feeding layer ℓ+1, the contribution of channel `j`
//! to unit `i` of ℓ+1 at input `x` is measured relative to the sum of all
//! contributions of the same sign:
//!
//! ```text
//! g_ij(x) = max( pos_ij(x) / Z⁺_i(x),  neg_ij(x) / Z⁻_i(x) )
//! ```
//!
//! where `pos_ij`/`neg_ij` are the magnitudes of channel `j`'s positive and
//! negative terms `w·a`, and `Z⁺`/`Z⁻` their totals over all channels. A
//! ratio with a zero denominator counts as 0. For scalar edges (one term per
//! channel) this is exactly the classic edge sensitivity; for conv layers the
//! same rule is applied per receptive-field patch, with a channel's terms
//! being its whole kernel window.
//!
//! The sensitivity of channel `j` is `s_j = max_{x ∈ S} max_i g_ij(x)` over a
//! small calibration batch `S`, and channels are sampled with probability
//! `p_j = s_j / Σ_k s_k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::model::{Coupling, ForwardTrace, NetworkModel};

/// Sum of positive terms and magnitude of the sum of negative terms of
/// `Σ_k w_k a_k`.
pub fn sign_split(w: &[f64], a: &[f64]) -> (f64, f64) {
    w.iter().zip(a).fold((0.0, 0.0), |(p, n), (&wk, &ak)| {
        let t = wk * ak;
        if t >= 0.0 {
            (p + t, n)
        } else {
            (p, n - t)
        }
    })
}

/// Updates `out[j] = max(out[j], g_j)` for one unit/patch, with the terms
/// `w[t]·a[t]` grouped into channels of `group` consecutive entries.
pub fn accumulate_grouped(w: &[f64], a: &[f64], group: usize, pos: &mut [f64], neg: &mut [f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), a.len());
    debug_assert_eq!(w.len(), group * out.len());
    pos.fill(0.0);
    neg.fill(0.0);
    let (mut zp, mut zn) = (0.0, 0.0);
    for (j, (wc, ac)) in w.chunks_exact(group).zip(a.chunks_exact(group)).enumerate() {
        for (&wk, &ak) in wc.iter().zip(ac) {
            let t = wk * ak;
            if t >= 0.0 {
                pos[j] += t;
            } else {
                neg[j] -= t;
            }
        }
        zp += pos[j];
        zn += neg[j];
    }
    for j in 0..out.len() {
        let gp = if zp > 0.0 { pos[j] / zp } else { 0.0 };
        let gn = if zn > 0.0 { neg[j] / zn } else { 0.0 };
        let g = gp.max(gn).clamp(0.0, 1.0);
        if g > out[j] {
            out[j] = g;
        }
    }
}

/// Edge sensitivities `g_j` of one row `w` against activations `a`.
pub fn edge_sensitivity(w_row: &[f64], a: &[f64]) -> Vec<f64> {
    assert_eq!(w_row.len(), a.len(), "edge_sensitivity: length mismatch");
    let n = w_row.len();
    let mut out = vec![0.0; n];
    let (mut pos, mut neg) = (vec![0.0; n], vec![0.0; n]);
    accumulate_grouped(w_row, a, 1, &mut pos, &mut neg, &mut out);
    out
}

/// Consumer-side view of one calibration point for coupling `c`: the rows of
/// the consumer weight (`[units, row_len]` flattened) and the input vectors
/// they are applied to (the activation, or each conv patch).
pub(crate) struct ConsumerView<'a> {
    pub weight: &'a [f64],
    pub row_len: usize,
    pub inputs: Vec<&'a [f64]>,
    pub group: usize,
}

impl<'a> ConsumerView<'a> {
    pub fn new(model: &'a NetworkModel, c: &Coupling, trace: &'a ForwardTrace, l: usize) -> Self {
        let w = model.layers()[c.consumer].weight().expect("consumer is weighted");
        let lt = &trace.layers[l + 1];
        let row_len = w.len() / w.shape()[0];
        if c.consumer_is_conv {
            let pm = lt.patches.as_ref().expect("conv trace records patches");
            ConsumerView {
                weight: w.data(),
                row_len,
                inputs: (0..pm.num_patches()).map(|p| pm.patches.row(p)).collect(),
                group: pm.window(),
            }
        } else {
            ConsumerView {
                weight: w.data(),
                row_len,
                inputs: vec![lt.input.data()],
                group: c.group,
            }
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        self.weight.chunks_exact(self.row_len)
    }
}

/// `max_i max_p g_ij(x)` for every channel `j` at one traced input.
fn point_sensitivity(model: &NetworkModel, c: &Coupling, trace: &ForwardTrace, l: usize) -> Vec<f64> {
    let view = ConsumerView::new(model, c, trace, l);
    let mut out = vec![0.0; c.channels];
    let (mut pos, mut neg) = (vec![0.0; c.channels], vec![0.0; c.channels]);
    for w in view.rows() {
        for a in &view.inputs {
            accumulate_grouped(w, a, view.group, &mut pos, &mut neg, &mut out);
        }
    }
    out
}

fn traces(model: &NetworkModel, calib: &Dataset) -> Result<Vec<ForwardTrace>> {
    if calib.is_empty() {
        return Err(Error::Degenerate("empty calibration set".into()));
    }
    (0..calib.len())
        .into_par_iter()
        .map(|i| model.forward_traced(&calib.sample(i)).map(|(_, t)| t))
        .collect()
}

/// Per-point sensitivities `max_i g_ij(x)` (rows: calibration points).
fn per_point(model: &NetworkModel, l: usize, traces: &[ForwardTrace]) -> Result<Vec<Vec<f64>>> {
    let c = model.coupling(l)?;
    Ok(traces
        .par_iter()
        .map(|t| point_sensitivity(model, &c, t, l))
        .collect())
}

fn max_over_points(rows: &[Vec<f64>], channels: usize) -> Vec<f64> {
    rows.iter().fold(vec![0.0; channels], |mut acc, r| {
        acc.iter_mut().zip(r).for_each(|(a, &v)| *a = a.max(v));
        acc
    })
}

/// Neuron sensitivities of weighted layer `l` whose successor is a dense layer.
pub fn neuron_sensitivity(model: &NetworkModel, l: usize, calib: &Dataset) -> Result<Vec<f64>> {
    let c = model.coupling(l)?;
    if c.consumer_is_conv {
        return Err(dim_err!(
            "layer {l} feeds a conv layer; use channel_sensitivity"
        ));
    }
    let tr = traces(model, calib)?;
    Ok(max_over_points(&per_point(model, l, &tr)?, c.channels))
}

/// Channel sensitivities of weighted layer `l` whose successor is a conv
/// layer, maximizing over every receptive-field patch.
pub fn channel_sensitivity(model: &NetworkModel, l: usize, calib: &Dataset) -> Result<Vec<f64>> {
    let c = model.coupling(l)?;
    if !c.consumer_is_conv {
        return Err(dim_err!(
            "layer {l} feeds a dense layer; use neuron_sensitivity"
        ));
    }
    let tr = traces(model, calib)?;
    Ok(max_over_points(&per_point(model, l, &tr)?, c.channels))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    /// Tail constant `K` of the calibration assumption.
    pub k: f64,
    /// Sample-size constant `K'` of the calibration assumption.
    pub k_prime: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { k: 1.0, k_prime: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    /// Weighted-layer index ℓ whose filters these are.
    pub layer: usize,
    /// Filter count of layer ℓ+1.
    pub eta_next: usize,
    pub s: Vec<f64>,
    pub s_sum: f64,
    /// `s / s_sum`; all zero when `s_sum == 0`.
    pub p: Vec<f64>,
    /// Every sensitivity is zero: no calibration point activated the layer.
    pub all_zero: bool,
    /// Smallest `K` for which the empirical CDF satisfies the tail condition
    /// at every channel, if finite.
    pub suggested_k: Option<f64>,
}

impl LayerSensitivity {
    pub fn from_sensitivities(layer: usize, eta_next: usize, s: Vec<f64>) -> Self {
        let s_sum: f64 = s.iter().sum();
        let all_zero = s_sum == 0.0;
        let p = if all_zero {
            vec![0.0; s.len()]
        } else {
            s.iter().map(|&v| v / s_sum).collect()
        };
        Self {
            layer,
            eta_next,
            s,
            s_sum,
            p,
            all_zero,
            suggested_k: None,
        }
    }

    pub fn eta(&self) -> usize {
        self.s.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub layers: Vec<LayerSensitivity>,
    pub calib_size: usize,
    pub k: f64,
    pub k_prime: f64,
}

impl SensitivityReport {
    /// Largest filter count over prunable layers (η*).
    pub fn eta_star(&self) -> usize {
        self.layers.iter().map(LayerSensitivity::eta).max().unwrap_or(0)
    }
}

/// Smallest `K` with `F̂(M/K) ≤ exp(-1/K')` for the empirical CDF `F̂` of
/// `values`, where `M = max(values)`. `None` when no finite `K` works.
pub fn empirical_tail_constant(values: &[f64], k_prime: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let t = v.len();
    let m = *v.last()?;
    if m == 0.0 {
        return None;
    }
    let allowed = ((-1.0 / k_prime).exp() * t as f64).floor() as usize;
    if allowed >= t {
        return Some(1.0);
    }
    // F̂(y) ≤ allowed/t  ⇔  y < v[allowed]
    let y = v[allowed];
    (y > 0.0).then(|| (m / y).max(1.0))
}

/// Sensitivities of every prunable layer from one pass over `calib`.
pub fn report(model: &NetworkModel, calib: &Dataset, cfg: SensitivityConfig) -> Result<SensitivityReport> {
    let tr = traces(model, calib)?;
    let mut layers = Vec::with_capacity(model.num_prunable());
    for l in 0..model.num_prunable() {
        let c = model.coupling(l)?;
        let rows = per_point(model, l, &tr)?;
        let s = max_over_points(&rows, c.channels);
        let mut ls = LayerSensitivity::from_sensitivities(l, model.filters(l + 1), s);
        if ls.all_zero {
            log::warn!("layer {l}: every calibration point yields zero sensitivity");
        }
        ls.suggested_k = (0..c.channels)
            .filter_map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                empirical_tail_constant(&col, cfg.k_prime)
            })
            .reduce(f64::max);
        layers.push(ls);
    }
    Ok(SensitivityReport {
        layers,
        calib_size: calib.len(),
        k: cfg.k,
        k_prime: cfg.k_prime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, Targets};
    use crate::model::Layer;
    use crate::tensor::DenseTensor;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Def.-3 style enumeration: explicit sign sets, explicit sums.
    fn literal_edge(w: &[f64], a: &[f64]) -> Vec<f64> {
        let n = w.len();
        let plus: Vec<usize> = (0..n).filter(|&k| w[k] * a[k] >= 0.0).collect();
        let minus: Vec<usize> = (0..n).filter(|&k| w[k] * a[k] < 0.0).collect();
        (0..n)
            .map(|j| {
                let mut best: f64 = 0.0;
                for set in [&plus, &minus] {
                    let den: f64 = set.iter().map(|&k| w[k] * a[k]).sum();
                    if den != 0.0 {
                        best = best.max(w[j] * a[j] / den);
                    }
                }
                best.clamp(0.0, 1.0)
            })
            .collect()
    }

    fn calib(points: &[Vec<f64>]) -> Dataset {
        let samples: Vec<DenseTensor> = points.iter().map(|p| DenseTensor::vector(p.clone())).collect();
        Dataset::from_samples(&samples, Targets::None, Split::Val).unwrap()
    }

    /// Identity first layer so the calibration point is the activation itself.
    fn two_layer(next: DenseTensor) -> NetworkModel {
        let n = next.shape()[1];
        let id = DenseTensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
        NetworkModel::new(
            vec![n],
            vec![
                Layer::Dense { weight: id, bias: None },
                Layer::Relu,
                Layer::Dense { weight: next, bias: None },
            ],
        )
        .unwrap()
    }

    #[test]
    fn edge_examples() {
        assert_eq!(edge_sensitivity(&[1.0, 1.0], &[1.0, 1.0]), vec![0.5, 0.5]);
        assert_eq!(edge_sensitivity(&[1.0, -1.0], &[1.0, 1.0]), vec![1.0, 1.0]);
        assert_eq!(edge_sensitivity(&[1.0, 1.0], &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn edge_matches_literal_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-1.0..1.0) })
                .collect();
            let got = edge_sensitivity(&w, &a);
            let want = literal_edge(&w, &a);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() <= 1e-12, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn neuron_symmetric_case() {
        let m = two_layer(DenseTensor::matrix(&[vec![1.0, 1.0]]));
        let s = neuron_sensitivity(&m, 0, &calib(&[vec![2.0, 2.0], vec![0.3, 0.3]])).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn neuron_max_dominance() {
        let m = two_layer(DenseTensor::matrix(&[vec![1.0, 2.0, 1.0]]));
        let s = neuron_sensitivity(
            &m,
            0,
            &calib(&[vec![1.0, 1.0, 1.0], vec![3.0, 0.0, 0.0], vec![0.1, 2.0, 0.5]]),
        )
        .unwrap();
        assert_eq!(s[0], 1.0);
    }

    #[test]
    fn neuron_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let w = DenseTensor::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0));
        let m = two_layer(w.clone());
        let points: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.random_range(-0.5..1.0)).collect())
            .collect();
        let got = neuron_sensitivity(&m, 0, &calib(&points)).unwrap();
        let mut want = [0.0f64; 4];
        for x in &points {
            let a: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
            for i in 0..3 {
                for (j, g) in literal_edge(w.row(i), &a).into_iter().enumerate() {
                    want[j] = want[j].max(g);
                }
            }
        }
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() <= 1e-12);
        }
        assert!(channel_sensitivity(&m, 0, &calib(&points)).is_err());
    }

    fn conv_pair(rng: &mut ChaCha8Rng, k: usize, spatial: usize) -> NetworkModel {
        NetworkModel::new(
            vec![2, spatial, spatial],
            vec![
                Layer::Conv {
                    weight: DenseTensor::from_fn(&[2, 2, 1, 1], |i| [1.0, 0.0, 0.0, 1.0][i]),
                    bias: None,
                    stride: 1,
                    padding: 0,
                },
                Layer::Conv {
                    weight: DenseTensor::from_fn(&[2, 2, k, k], |_| rng.random_range(-1.0..1.0)),
                    bias: None,
                    stride: 1,
                    padding: 0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn channel_matches_patch_enumeration() {
        // 2-channel 3x3 input, two 2x2 filters, one calibration point
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = conv_pair(&mut rng, 2, 3);
        let x = DenseTensor::from_fn(&[2, 3, 3], |_| rng.random_range(-1.0..1.0));
        let ds = Dataset::from_samples(std::slice::from_ref(&x), Targets::None, Split::Val).unwrap();
        let got = channel_sensitivity(&m, 0, &ds).unwrap();

        let w = m.layers()[1].weight().unwrap();
        let mut want = [0.0f64; 2];
        for i in 0..2 {
            for py in 0..2 {
                for px in 0..2 {
                    let mut pos = [0.0; 2];
                    let mut neg = [0.0; 2];
                    for j in 0..2 {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let t = w.data()[((i * 2 + j) * 2 + ky) * 2 + kx]
                                    * x.data()[(j * 3 + py + ky) * 3 + px + kx];
                                if t >= 0.0 {
                                    pos[j] += t;
                                } else {
                                    neg[j] -= t;
                                }
                            }
                        }
                    }
                    let (zp, zn) = (pos[0] + pos[1], neg[0] + neg[1]);
                    for j in 0..2 {
                        let gp = if zp > 0.0 { pos[j] / zp } else { 0.0 };
                        let gn = if zn > 0.0 { neg[j] / zn } else { 0.0 };
                        want[j] = want[j].max(gp.max(gn));
                    }
                }
            }
        }
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() <= 1e-12, "{got:?} vs {want:?}");
        }
        assert!(neuron_sensitivity(&m, 0, &ds).is_err());
    }

    #[test]
    fn one_by_one_kernels_reduce_to_neurons() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let m = conv_pair(&mut rng, 1, 3);
        let x = DenseTensor::from_fn(&[2, 3, 3], |_| rng.random_range(0.0..1.0));
        let ds = Dataset::from_samples(std::slice::from_ref(&x), Targets::None, Split::Val).unwrap();
        let got = channel_sensitivity(&m, 0, &ds).unwrap();
        let w = m.layers()[1].weight().unwrap();
        let mut want = [0.0f64; 2];
        for pix in 0..9 {
            let a = [x.data()[pix], x.data()[9 + pix]];
            for i in 0..2 {
                for (j, g) in edge_sensitivity(w.row(i), &a).into_iter().enumerate() {
                    want[j] = want[j].max(g);
                }
            }
        }
        assert_eq!(got, want);

        // spatial 1x1 input: identical to the dense computation
        let m1 = conv_pair(&mut rng, 1, 1);
        let x1 = DenseTensor::new(vec![2, 1, 1], vec![0.7, 0.2]).unwrap();
        let ds1 = Dataset::from_samples(std::slice::from_ref(&x1), Targets::None, Split::Val).unwrap();
        let w1 = m1.layers()[1].weight().unwrap();
        let dense = two_layer(DenseTensor::new(vec![2, 2], w1.data().to_vec()).unwrap());
        assert_eq!(
            channel_sensitivity(&m1, 0, &ds1).unwrap(),
            neuron_sensitivity(&dense, 0, &calib(&[vec![0.7, 0.2]])).unwrap()
        );
    }

    #[test]
    fn single_row_nonneg_sums_to_one() {
        let m = two_layer(DenseTensor::matrix(&[vec![0.2, 1.5, 0.7, 0.0]]));
        let s = neuron_sensitivity(&m, 0, &calib(&[vec![0.3, 0.9, 0.1, 0.5]])).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let m = two_layer(DenseTensor::from_fn(&[5, 6], |_| rng.random_range(-1.0..1.0)));
        let points: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let r = report(&m, &calib(&points), SensitivityConfig::default()).unwrap();
        let l = &r.layers[0];
        assert_eq!(r.calib_size, 10);
        assert!((l.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(l.s_sum <= 6.0);
        assert!(l.s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(l.suggested_k.is_some());
    }

    #[test]
    fn all_zero_activations_flagged() {
        let m = two_layer(DenseTensor::matrix(&[vec![1.0, 1.0]]));
        let r = report(&m, &calib(&[vec![-1.0, -2.0]]), SensitivityConfig::default()).unwrap();
        assert!(r.layers[0].all_zero);
        assert_eq!(r.layers[0].p, vec![0.0, 0.0]);
    }

    #[test]
    fn tail_constant() {
        assert_eq!(empirical_tail_constant(&[0.0, 0.0], 1.0), None);
        // t = 4, exp(-1) * 4 = 1.47 -> one point may sit below M/K
        let k = empirical_tail_constant(&[0.1, 0.2, 0.4, 0.8], 1.0).unwrap();
        assert!((k - 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in 0u64..200, ca in 0.01f64..100.0, cw in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let base = edge_sensitivity(&w, &a);
            let sa: Vec<f64> = a.iter().map(|v| v * ca).collect();
            let sw: Vec<f64> = w.iter().map(|v| v * cw).collect();
            for (x, y) in base.iter().zip(edge_sensitivity(&w, &sa)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            for (x, y) in base.iter().zip(edge_sensitivity(&sw, &a)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn more_calibration_never_lowers(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = two_layer(DenseTensor::from_fn(&[3, 5], |_| rng.random_range(-1.0..1.0)));
            let pts: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..5).map(|_| rng.random_range(-0.2..1.0)).collect())
                .collect();
            let small = neuron_sensitivity(&m, 0, &calib(&pts[..3])).unwrap();
            let big = neuron_sensitivity(&m, 0, &calib(&pts)).unwrap();
            for (s, b) in small.iter().zip(&big) {
                prop_assert!(b >= s);
            }
            prop_assert!(big.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(big.iter().sum::<f64>() <= 5.0);
        }
    }
}
