//! Sampling-based filter pruning and the norm/reconstruction baselines.
//!
//! Pruning filter `j` of weighted layer ℓ always happens together with
//! channel `j` of layer ℓ+1. Sampling keeps channel `j` with multiplicity
//! `count_j` out of `m` draws from `p` and rescales it by `count_j/(m p_j)`,
//! which makes the next layer's pre-activation an unbiased estimate of the
//! original one. Filters of layer ℓ itself are never rescaled.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{param_err, Error, Result};
use crate::model::NetworkModel;
use crate::rng::{self, purpose, StreamRng};
use crate::sensitivity::{ConsumerView, LayerSensitivity, SensitivityReport};
use crate::tensor::DenseTensor;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(param_err!("{name} must lie in (0, 1), got {v}"))
    }
}

/// `C = max(3K, 1)`, the ratio bound implied by the tail constant `K`.
pub fn ratio_bound(k: f64) -> f64 {
    (3.0 * k).max(1.0)
}

/// Number of draws `m` for which each of `eta_next` pre-activations is
/// within `(1 ± eps)` with probability `1 - delta`:
/// `ceil(S·K·(6 + 2eps)·ln(4·eta_next/delta) / eps²)`.
pub fn sample_complexity(eps: f64, delta: f64, s_sum: f64, k: f64, eta_next: usize) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(param_err!("eps must be positive, got {eps}"));
    }
    check_unit("delta", delta)?;
    if !(s_sum > 0.0) || !s_sum.is_finite() {
        return Err(param_err!("sensitivity sum must be positive, got {s_sum}"));
    }
    if !(k > 0.0) {
        return Err(param_err!("K must be positive, got {k}"));
    }
    if eta_next == 0 {
        return Err(param_err!("eta_next must be at least 1"));
    }
    let m = s_sum * k * (6.0 + 2.0 * eps) * (4.0 * eta_next as f64 / delta).ln() / (eps * eps);
    Ok((m.ceil() as usize).max(1))
}

/// Draws `m'` from the renormalized remainder after keeping `S_k` worth of
/// sensitivity deterministically, with `R = S - S_k`:
/// `ceil(C·R·(2·min(1, C·R) + 2eps/3)·ln(8·eta/delta) / eps²)`.
/// Returns 0 when `R = 0`.
pub fn det_sample_complexity(eps: f64, delta: f64, s_rest: f64, k: f64, eta: usize) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(param_err!("eps must be positive, got {eps}"));
    }
    check_unit("delta", delta)?;
    if s_rest < 0.0 || !s_rest.is_finite() {
        return Err(param_err!("remaining sensitivity must be nonnegative, got {s_rest}"));
    }
    if eta == 0 {
        return Err(param_err!("eta must be at least 1"));
    }
    if s_rest == 0.0 {
        return Ok(0);
    }
    let cr = ratio_bound(k) * s_rest;
    let m = cr * (2.0 * cr.min(1.0) + 2.0 * eps / 3.0) * (8.0 * eta as f64 / delta).ln() / (eps * eps);
    Ok((m.ceil() as usize).max(1))
}

/// `E[U] = n - Σ (1 - p_j)^m`, the expected number of distinct indices in
/// `m` draws from `p`.
pub fn expected_unique(p: &[f64], m: usize) -> f64 {
    let miss: f64 = p.iter().map(|&pj| miss_probability(pj, m)).sum();
    p.len() as f64 - miss
}

fn miss_probability(p: f64, m: usize) -> f64 {
    if p >= 1.0 {
        0.0
    } else {
        ((m as f64) * (-p).ln_1p()).exp()
    }
}

/// Indices of the `k` largest values, ties broken towards the lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridAdvantage {
    pub better: bool,
    pub k: usize,
    pub m: usize,
    pub m_prime: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Whether keeping the top-`k` channels and sampling the rest retains fewer
/// distinct channels than plain sampling at the same guarantee.
pub fn hybrid_advantage(s: &[f64], k: usize, eps: f64, delta: f64, k_tail: f64, eta_star: usize) -> Result<HybridAdvantage> {
    if k >= s.len() {
        return Err(param_err!("k = {k} must be below the channel count {}", s.len()));
    }
    let s_sum: f64 = s.iter().sum();
    let m = sample_complexity(eps, delta, s_sum, k_tail, eta_star)?;
    let det = top_k(s, k);
    let s_k: f64 = det.iter().map(|&j| s[j]).sum();
    let rest = (s_sum - s_k).max(0.0);
    let rhs_sum: f64 = s.iter().map(|&v| miss_probability(v / s_sum, m)).sum();
    if rest == 0.0 {
        return Ok(HybridAdvantage {
            better: true,
            k,
            m,
            m_prime: 0,
            lhs: f64::INFINITY,
            rhs: rhs_sum,
        });
    }
    let m_prime = det_sample_complexity(eps, delta, rest, k_tail, eta_star)?;
    let mut in_det = vec![false; s.len()];
    det.iter().for_each(|&j| in_det[j] = true);
    let lhs: f64 = (0..s.len())
        .filter(|&j| !in_det[j])
        .map(|j| miss_probability(s[j] / rest, m_prime))
        .sum();
    let rhs = rhs_sum + ((2.0 / delta).ln() * (m + m_prime) as f64 / 2.0).sqrt();
    Ok(HybridAdvantage {
        better: lhs > rhs,
        k,
        m,
        m_prime,
        lhs,
        rhs,
    })
}

/// Largest `k` (scanning up from 0) for which the hybrid scheme is better;
/// 0 when it never is. Only `k` that leave positive mass to sample are
/// scanned.
pub fn auto_k(s: &[f64], eps: f64, delta: f64, k_tail: f64, eta_star: usize) -> Result<usize> {
    let live = s.iter().filter(|&&v| v > 0.0).count();
    let mut best = 0;
    for k in 0..live.min(s.len()) {
        if hybrid_advantage(s, k, eps, delta, k_tail, eta_star)?.better {
            best = k;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rand,
    Partial,
    Derand,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rand" => Ok(Mode::Rand),
            "partial" => Ok(Mode::Partial),
            "derand" => Ok(Mode::Derand),
            _ => Err(param_err!("unknown mode {s:?} (expected rand, partial or derand)")),
        }
    }
}

/// How to choose the deterministic set in partial mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KChoice {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: usize,
    pub eps: f64,
    pub delta: f64,
    pub mode: Mode,
    /// Draws (rand/partial) or deterministic keeps (derand).
    pub m: usize,
    pub det_keep: Vec<usize>,
    /// Sampling the layer would keep (nearly) everything; all channels are
    /// kept as they are.
    pub incompressible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub mode: Mode,
    pub seed: u64,
    pub layers: Vec<LayerPlan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSettings {
    pub mode: Mode,
    pub k: KChoice,
    /// Tail constant `K`.
    pub k_tail: f64,
    /// `max_ℓ η^ℓ`, used when scanning for the hybrid `k`.
    pub eta_star: usize,
}

/// Plans one layer: `m` from the sample complexity, the deterministic set
/// for partial/derand, and the incompressibility cap.
pub fn plan_layer(ls: &LayerSensitivity, eps: f64, delta: f64, cfg: &PlanSettings) -> Result<LayerPlan> {
    let eta = ls.eta();
    if ls.all_zero {
        return Err(Error::Degenerate(format!(
            "layer {}: all sensitivities are zero, cannot build a sampling distribution",
            ls.layer
        )));
    }
    let m = sample_complexity(eps, delta, ls.s_sum, cfg.k_tail, ls.eta_next)?;
    let eu = expected_unique(&ls.p, m);
    let eta_f = eta as f64;
    let mut plan = LayerPlan {
        layer: ls.layer,
        eps,
        delta,
        mode: cfg.mode,
        m,
        det_keep: Vec::new(),
        incompressible: false,
    };
    if eu > eta_f - 0.5 || (eta > 1 && m as f64 >= 3.0 * eta_f * eta_f.ln()) {
        plan.incompressible = true;
        plan.mode = Mode::Derand;
        plan.m = eta;
        plan.det_keep = (0..eta).collect();
        return Ok(plan);
    }
    match cfg.mode {
        Mode::Rand => {}
        Mode::Derand => {
            let keep = (eu.round() as usize).clamp(1, eta);
            plan.m = keep;
            plan.det_keep = top_k(&ls.s, keep);
        }
        Mode::Partial => {
            let k = match cfg.k {
                KChoice::Auto => auto_k(&ls.s, eps, delta, cfg.k_tail, cfg.eta_star.max(eta))?,
                KChoice::Fixed(k) => k.min(eta),
            };
            plan.det_keep = top_k(&ls.s, k);
            let s_k: f64 = plan.det_keep.iter().map(|&j| ls.s[j]).sum();
            let rest = (ls.s_sum - s_k).max(0.0);
            if rest == 0.0 || k == eta {
                plan.mode = Mode::Derand;
                plan.m = plan.det_keep.len();
            } else {
                plan.m = det_sample_complexity(eps, delta, rest, cfg.k_tail, ls.eta_next)?;
                let q = remainder_distribution(&ls.s, &plan.det_keep);
                if k as f64 + expected_unique(&q, plan.m) > eta_f - 0.5 {
                    plan.incompressible = true;
                    plan.mode = Mode::Derand;
                    plan.m = eta;
                    plan.det_keep = (0..eta).collect();
                }
            }
        }
    }
    Ok(plan)
}

/// `q_j = s_j / (S - S_k)` off the deterministic set, 0 on it.
pub fn remainder_distribution(s: &[f64], det: &[usize]) -> Vec<f64> {
    let mut q = s.to_vec();
    det.iter().for_each(|&j| q[j] = 0.0);
    let rest: f64 = q.iter().sum();
    if rest > 0.0 {
        q.iter_mut().for_each(|v| *v /= rest);
    }
    q
}

/// Per-layer result of pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerOutcome {
    pub layer: usize,
    /// Factor applied to each consumer channel; 0 means pruned.
    pub channel_scale: Vec<f64>,
    /// Times each channel was drawn (deterministic keeps count 0).
    pub counts: Vec<usize>,
    pub kept: Vec<usize>,
    pub unique_kept: usize,
    /// Random draws actually made.
    pub realized_m: usize,
    pub det_keep: Vec<usize>,
    pub incompressible: bool,
}

/// Draws channel scales for one layer without touching a model.
pub fn sample_scales(p: &[f64], s: &[f64], plan: &LayerPlan, rng: &mut StreamRng) -> Result<LayerOutcome> {
    let eta = p.len();
    let mut scale = vec![0.0; eta];
    let mut counts = vec![0usize; eta];
    for &j in &plan.det_keep {
        scale[j] = 1.0;
    }
    let mut realized = 0;
    if plan.mode != Mode::Derand && plan.m > 0 {
        let dist: Vec<f64> = if plan.det_keep.is_empty() {
            p.to_vec()
        } else {
            remainder_distribution(s, &plan.det_keep)
        };
        let sampler = WeightedIndex::new(&dist)
            .map_err(|e| Error::Degenerate(format!("layer {}: {e}", plan.layer)))?;
        for _ in 0..plan.m {
            counts[sampler.sample(rng)] += 1;
        }
        realized = plan.m;
        let m = plan.m as f64;
        for j in 0..eta {
            if counts[j] > 0 {
                scale[j] = counts[j] as f64 / (m * dist[j]);
            }
        }
    }
    let kept: Vec<usize> = (0..eta).filter(|&j| scale[j] != 0.0).collect();
    Ok(LayerOutcome {
        layer: plan.layer,
        unique_kept: kept.len(),
        channel_scale: scale,
        counts,
        kept,
        realized_m: realized,
        det_keep: plan.det_keep.clone(),
        incompressible: plan.incompressible,
    })
}

/// Random stream used to prune layer `layer` (trial 0) or a verification
/// re-prune (`trial > 0`).
pub fn prune_stream(seed: u64, layer: usize, trial: u64) -> StreamRng {
    rng::stream(seed, &[purpose::PRUNE, layer as u64, trial])
}

/// Prunes a single layer according to `plan`.
pub fn prune_layer(model: &NetworkModel, ls: &LayerSensitivity, plan: &LayerPlan, seed: u64) -> Result<(NetworkModel, LayerOutcome)> {
    let mut rng = prune_stream(seed, plan.layer, 0);
    let out = sample_scales(&ls.p, &ls.s, plan, &mut rng)?;
    Ok((model.with_channel_scales(plan.layer, &out.channel_scale)?, out))
}

#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub model: NetworkModel,
    pub layers: Vec<LayerOutcome>,
}

/// Builds a plan with the given per-layer `(eps, delta)`.
pub fn plan(report: &SensitivityReport, eps: &[f64], delta: &[f64], cfg: &PlanSettings, seed: u64) -> Result<PrunePlan> {
    if eps.len() != report.layers.len() || delta.len() != report.layers.len() {
        return Err(param_err!(
            "{} eps and {} delta values for {} layers",
            eps.len(),
            delta.len(),
            report.layers.len()
        ));
    }
    let layers = report
        .layers
        .iter()
        .zip(eps.iter().zip(delta))
        .map(|(ls, (&e, &d))| plan_layer(ls, e, d, cfg))
        .collect::<Result<_>>()?;
    Ok(PrunePlan {
        mode: cfg.mode,
        seed,
        layers,
    })
}

/// Prunes every planned layer. Layers use independent random streams, and
/// each touches different axes of the shared weight tensors, so the order
/// of application does not matter.
pub fn prune(model: &NetworkModel, report: &SensitivityReport, plan: &PrunePlan) -> Result<PruneOutcome> {
    let mut cur = model.clone();
    let mut layers = Vec::with_capacity(plan.layers.len());
    for lp in &plan.layers {
        let ls = report
            .layers
            .iter()
            .find(|ls| ls.layer == lp.layer)
            .ok_or_else(|| param_err!("no sensitivities for layer {}", lp.layer))?;
        let (next, out) = prune_layer(&cur, ls, lp, plan.seed)?;
        cur = next;
        layers.push(out);
    }
    Ok(PruneOutcome { model: cur, layers })
}

/// Per-channel contributions to every pre-activation entry of the layer
/// after `l`, at one input. Entry order matches the consumer's output
/// (unit-major, then spatial position).
#[derive(Clone, Debug)]
pub struct Contributions {
    pub channels: usize,
    pub entries: usize,
    /// `[entries, channels]`, row-major.
    pub values: Vec<f64>,
}

impl Contributions {
    pub fn of(model: &NetworkModel, l: usize, x: &DenseTensor) -> Result<Self> {
        let c = model.coupling(l)?;
        let (_, trace) = model.forward_traced(x)?;
        let view = ConsumerView::new(model, &c, &trace, l);
        let entries = view.rows().count() * view.inputs.len();
        let mut values = Vec::with_capacity(entries * c.channels);
        for w in view.rows() {
            for a in &view.inputs {
                for (wc, ac) in w.chunks_exact(view.group).zip(a.chunks_exact(view.group)) {
                    values.push(wc.iter().zip(ac).map(|(p, q)| p * q).sum());
                }
            }
        }
        Ok(Self {
            channels: c.channels,
            entries,
            values,
        })
    }

    pub fn entry(&self, e: usize) -> &[f64] {
        &self.values[e * self.channels..(e + 1) * self.channels]
    }

    /// Bias-free pre-activation `z`.
    pub fn z(&self) -> Vec<f64> {
        self.estimate(&vec![1.0; self.channels])
    }

    /// `(z⁺, z⁻)` per entry, from the signs of whole-channel terms.
    pub fn sign_sums(&self) -> Vec<(f64, f64)> {
        (0..self.entries)
            .map(|e| {
                self.entry(e).iter().fold((0.0, 0.0), |(p, n), &t| {
                    if t >= 0.0 {
                        (p + t, n)
                    } else {
                        (p, n - t)
                    }
                })
            })
            .collect()
    }

    /// `ẑ = Σ_j scale_j · contribution_j` per entry.
    pub fn estimate(&self, scale: &[f64]) -> Vec<f64> {
        (0..self.entries)
            .map(|e| self.entry(e).iter().zip(scale).map(|(t, s)| t * s).sum())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Largest ℓ2 filter norm.
    Ft,
    /// Largest ℓ1 filter norm.
    SoftNet,
    /// Greedy reconstruction of the next pre-activation.
    ThiNet,
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ft" => Ok(Baseline::Ft),
            "softnet" => Ok(Baseline::SoftNet),
            "thinet" => Ok(Baseline::ThiNet),
            _ => Err(param_err!("unknown baseline {s:?} (expected ft, softnet or thinet)")),
        }
    }
}

fn filter_norms(model: &NetworkModel, l: usize, power: i32) -> Vec<f64> {
    let w = model.layers()[model.weighted_positions()[l]].weight().unwrap();
    let width = w.len() / w.shape()[0];
    w.data()
        .chunks_exact(width)
        .map(|r| match power {
            1 => r.iter().map(|v| v.abs()).sum(),
            _ => r.iter().map(|v| v * v).sum::<f64>().sqrt(),
        })
        .collect()
}

/// Greedy selection: repeatedly add the channel whose inclusion minimizes
/// `max_x max_i |z_i(x) - z_i^{kept}(x)|`.
pub fn thinet_select(contribs: &[Contributions], keep: usize) -> Vec<usize> {
    let channels = contribs[0].channels;
    let targets: Vec<Vec<f64>> = contribs.iter().map(Contributions::z).collect();
    let mut partial: Vec<Vec<f64>> = contribs.iter().map(|c| vec![0.0; c.entries]).collect();
    let mut chosen = vec![false; channels];
    let mut order = Vec::with_capacity(keep);
    for _ in 0..keep {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in (0..channels).filter(|&j| !chosen[j]) {
            let mut err: f64 = 0.0;
            for ((c, z), part) in contribs.iter().zip(&targets).zip(&partial) {
                for e in 0..c.entries {
                    err = err.max((z[e] - part[e] - c.entry(e)[j]).abs());
                }
            }
            if err < best.0 {
                best = (err, j);
            }
        }
        let j = best.1;
        chosen[j] = true;
        order.push(j);
        for (c, part) in contribs.iter().zip(partial.iter_mut()) {
            for (e, v) in part.iter_mut().enumerate() {
                *v += c.entry(e)[j];
            }
        }
    }
    order.sort_unstable();
    order
}

/// Prunes layer `l` with a baseline, keeping `round(keep_fraction·η)`
/// filters (at least one) without reweighting.
pub fn baseline_prune(model: &NetworkModel, l: usize, method: Baseline, keep_fraction: f64, calib: Option<&Dataset>) -> Result<(NetworkModel, LayerOutcome)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(param_err!("keep fraction must lie in (0, 1], got {keep_fraction}"));
    }
    let eta = model.filters(l);
    model.coupling(l)?;
    let keep = ((keep_fraction * eta as f64).round() as usize).clamp(1, eta);
    let mut kept = match method {
        Baseline::Ft => top_k(&filter_norms(model, l, 2), keep),
        Baseline::SoftNet => top_k(&filter_norms(model, l, 1), keep),
        Baseline::ThiNet => {
            let calib = calib
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::Degenerate("ThiNet needs a nonempty calibration set".into()))?;
            let contribs = calib
                .samples()
                .map(|x| Contributions::of(model, l, &x))
                .collect::<Result<Vec<_>>>()?;
            thinet_select(&contribs, keep)
        }
    };
    kept.sort_unstable();
    let mut scale = vec![0.0; eta];
    kept.iter().for_each(|&j| scale[j] = 1.0);
    let pruned = model.with_channel_scales(l, &scale)?;
    Ok((
        pruned,
        LayerOutcome {
            layer: l,
            channel_scale: scale,
            counts: vec![0; eta],
            unique_kept: kept.len(),
            det_keep: kept.clone(),
            kept,
            realized_m: 0,
            incompressible: false,
        },
    ))
}
