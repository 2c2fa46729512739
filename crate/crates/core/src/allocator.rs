//! Budget allocation across layers.
//!
//! A single global `ε` is searched by bisection. Each layer gets
//! `ε / Δ^{(ℓ+1)→}`, where `Δ^{ℓ→}` is the product of the error
//! amplification constants of layer ℓ and everything after it, and
//! `δ / L` of the failure probability. The resulting expected number of
//! distinct kept filters per layer is summed and compared to the budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{param_err, Error, Result};
use crate::model::{Layer, NetworkModel};
use crate::pruner::{expected_unique, plan_layer, remainder_distribution, Contributions, KChoice, Mode, PlanSettings};
use crate::sensitivity::LayerSensitivity;

pub const DEFAULT_TAU: f64 = 1e-12;
pub const EPS_LO: f64 = 1e-6;
pub const EPS_HI: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaProfile {
    /// `Δ^ℓ ≥ 1` per prunable layer.
    pub delta_hat: Vec<f64>,
    /// `Δ^{ℓ→} = Π_{k ≥ ℓ} Δ^k`.
    pub delta_forward: Vec<f64>,
    pub tau: f64,
    /// Entries per layer whose `|z|` fell below `tau` while `z⁺ + z⁻ > 0`.
    pub floored: Vec<usize>,
}

impl DeltaProfile {
    pub fn from_deltas(delta_hat: Vec<f64>, tau: f64) -> Self {
        let mut delta_forward = delta_hat.clone();
        for l in (0..delta_forward.len().saturating_sub(1)).rev() {
            delta_forward[l] *= delta_forward[l + 1];
        }
        let floored = vec![0; delta_hat.len()];
        Self {
            delta_hat,
            delta_forward,
            tau,
            floored,
        }
    }

    /// All-ones profile for `layers` layers.
    pub fn flat(layers: usize) -> Self {
        Self::from_deltas(vec![1.0; layers], DEFAULT_TAU)
    }

    /// `Δ^{(ℓ+1)→}`, 1 past the last layer.
    pub fn downstream(&self, l: usize) -> f64 {
        self.delta_forward.get(l + 1).copied().unwrap_or(1.0)
    }
}

/// `(z⁺ + z⁻) / max(|z|, tau)` maximized over calibration inputs and
/// entries of each prunable layer's successor, floored at 1.
pub fn delta_profile(model: &NetworkModel, calib: &Dataset, tau: f64) -> Result<DeltaProfile> {
    if calib.is_empty() {
        return Err(Error::Degenerate("empty calibration set".into()));
    }
    let layers = model.num_prunable();
    let per_point: Vec<Vec<(f64, usize)>> = (0..calib.len())
        .into_par_iter()
        .map(|i| {
            let x = calib.sample(i);
            (0..layers)
                .map(|l| {
                    let c = Contributions::of(model, l, &x)?;
                    let z = c.z();
                    let mut worst: f64 = 1.0;
                    let mut floored = 0;
                    for (zi, (p, n)) in z.iter().zip(c.sign_sums()) {
                        if zi.abs() < tau && p + n > 0.0 {
                            floored += 1;
                        }
                        worst = worst.max((p + n) / zi.abs().max(tau));
                    }
                    Ok((worst, floored))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut delta_hat = vec![1.0f64; layers];
    let mut floored = vec![0; layers];
    for row in &per_point {
        for (l, &(d, f)) in row.iter().enumerate() {
            delta_hat[l] = delta_hat[l].max(d);
            floored[l] += f;
        }
    }
    let mut profile = DeltaProfile::from_deltas(delta_hat, tau);
    profile.floored = floored;
    Ok(profile)
}

/// Parameter count of a network as a function of how many filters each
/// prunable layer keeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeModel {
    filters: Vec<usize>,
    /// Weight entries per (filter, input channel) pair; for the first layer
    /// the whole input row.
    per_pair: Vec<usize>,
    first_inputs: usize,
    has_bias: Vec<bool>,
}

impl SizeModel {
    pub fn of(model: &NetworkModel) -> Result<Self> {
        let pos = model.weighted_positions();
        let mut filters = Vec::with_capacity(pos.len());
        let mut per_pair = Vec::with_capacity(pos.len());
        let mut has_bias = Vec::with_capacity(pos.len());
        let mut first_inputs = 0;
        for (w, &p) in pos.iter().enumerate() {
            let layer = &model.layers()[p];
            let wt = layer.weight().unwrap();
            filters.push(wt.shape()[0]);
            has_bias.push(layer.bias().is_some());
            let row = wt.len() / wt.shape()[0];
            if w == 0 {
                first_inputs = row;
                per_pair.push(0);
            } else {
                let chans = model.filters(w - 1);
                per_pair.push(match layer {
                    Layer::Conv { .. } => row / chans,
                    _ => model.coupling(w - 1)?.group,
                });
            }
        }
        Ok(Self {
            filters,
            per_pair,
            first_inputs,
            has_bias,
        })
    }

    /// Parameters (weights and biases) when prunable layer ℓ keeps
    /// `kept[ℓ]` filters.
    pub fn params(&self, kept: &[usize]) -> usize {
        let rows = |w: usize| kept.get(w).copied().unwrap_or(self.filters[w]);
        (0..self.filters.len())
            .map(|w| {
                let cols = if w == 0 {
                    self.first_inputs
                } else {
                    rows(w - 1) * self.per_pair[w]
                };
                rows(w) * cols + if self.has_bias[w] { rows(w) } else { 0 }
            })
            .sum()
    }

    pub fn full(&self) -> usize {
        self.params(&[])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Total kept filters over prunable layers.
    Filters(usize),
    /// Total kept parameters of the whole network.
    Params(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocOptions {
    pub k_tail: f64,
    pub eps_lo: f64,
    pub eps_hi: f64,
    /// Pruning mode whose kept count is predicted.
    pub mode: Mode,
    pub k: KChoice,
}

impl Default for AllocOptions {
    fn default() -> Self {
        Self {
            k_tail: 1.0,
            eps_lo: EPS_LO,
            eps_hi: EPS_HI,
            mode: Mode::Rand,
            k: KChoice::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAllocation {
    pub layer: usize,
    pub eps: f64,
    pub delta: f64,
    pub m: usize,
    /// Expected kept filters.
    pub n: usize,
    pub eta: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub eps: f64,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub eps_star: f64,
    pub layers: Vec<LayerAllocation>,
    /// Kept filters, or kept parameters for a parameter budget.
    pub total: usize,
    pub budget: Budget,
    pub feasible: bool,
    /// Smallest size reachable inside the search interval, when infeasible.
    pub min_achievable: Option<usize>,
    pub trace: Vec<SearchStep>,
}

impl Allocation {
    pub fn eps(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.eps).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.delta).collect()
    }

    pub fn kept(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.n).collect()
    }
}

/// `(m, expected kept filters)` of one layer at per-layer `eps`, using the
/// same plan the pruner builds for `settings`.
pub fn layer_size(ls: &LayerSensitivity, eps: f64, delta: f64, settings: &PlanSettings) -> Result<(usize, usize)> {
    let eta = ls.eta();
    let plan = plan_layer(ls, eps, delta, settings)?;
    let n = match plan.mode {
        Mode::Derand => plan.det_keep.len(),
        Mode::Rand => expected_unique(&ls.p, plan.m).round() as usize,
        Mode::Partial => {
            let q = remainder_distribution(&ls.s, &plan.det_keep);
            plan.det_keep.len() + expected_unique(&q, plan.m).round() as usize
        }
    };
    Ok((plan.m, n.clamp(1, eta)))
}

/// Per-layer `(eps, delta, m, n)` at global `eps`: each layer gets
/// `eps / Δ` of its downstream layers and an equal share of `delta`.
pub fn allocation_at(
    layers: &[LayerSensitivity],
    eps: f64,
    delta: f64,
    profile: &DeltaProfile,
    opts: &AllocOptions,
) -> Result<Vec<LayerAllocation>> {
    let d = delta / layers.len() as f64;
    let settings = PlanSettings {
        mode: opts.mode,
        k: opts.k,
        k_tail: opts.k_tail,
        eta_star: layers.iter().map(LayerSensitivity::eta).max().unwrap_or(0),
    };
    layers
        .iter()
        .enumerate()
        .map(|(i, ls)| {
            let e = eps / profile.downstream(i);
            let (m, n) = layer_size(ls, e, d, &settings)?;
            Ok(LayerAllocation {
                layer: ls.layer,
                eps: e,
                delta: d,
                m,
                n,
                eta: ls.eta(),
            })
        })
        .collect()
}

/// Bisection on `ε` so that the expected kept size meets `budget`.
///
/// For a filter budget the search stops once the total is within one
/// filter. For a parameter budget it returns the smallest `ε` whose size
/// does not exceed the budget.
pub fn allocate(
    layers: &[LayerSensitivity],
    budget: Budget,
    delta: f64,
    profile: &DeltaProfile,
    size: Option<&SizeModel>,
    opts: &AllocOptions,
) -> Result<Allocation> {
    if layers.is_empty() {
        return Err(param_err!("nothing to allocate: the network has no prunable layers"));
    }
    if profile.delta_forward.len() != layers.len() {
        return Err(param_err!(
            "delta profile covers {} layers, sensitivities {}",
            profile.delta_forward.len(),
            layers.len()
        ));
    }
    if !(opts.eps_lo > 0.0 && opts.eps_lo < opts.eps_hi) {
        return Err(param_err!("bad eps search interval [{}, {}]", opts.eps_lo, opts.eps_hi));
    }
    let total_filters: usize = layers.iter().map(LayerSensitivity::eta).sum();
    let (target, by_params) = match budget {
        Budget::Filters(n) => {
            if n < layers.len() || n >= total_filters {
                return Err(param_err!(
                    "filter budget {n} must be at least {} and below {total_filters}",
                    layers.len()
                ));
            }
            (n, false)
        }
        Budget::Params(p) => {
            if size.is_none() {
                return Err(param_err!("a parameter budget needs the network's size model"));
            }
            (p, true)
        }
    };
    let measure = |a: &[LayerAllocation]| -> usize {
        let kept: Vec<usize> = a.iter().map(|l| l.n).collect();
        match size {
            Some(s) if by_params => s.params(&kept),
            _ => kept.iter().sum(),
        }
    };
    let mut trace = Vec::new();
    let mut step = |eps: f64| -> Result<(Vec<LayerAllocation>, usize)> {
        let a = allocation_at(layers, eps, delta, profile, opts)?;
        let t = measure(&a);
        trace.push(SearchStep { eps, total: t });
        Ok((a, t))
    };
    let done = |eps_star: f64, layers: Vec<LayerAllocation>, total: usize, trace: Vec<SearchStep>, feasible: bool| Allocation {
        eps_star,
        layers,
        total,
        budget: budget.clone(),
        feasible,
        min_achievable: (!feasible).then_some(total),
        trace,
    };

    let (hi_alloc, hi_total) = step(opts.eps_hi)?;
    if hi_total > target && !(!by_params && hi_total <= target + 1) {
        log::warn!("budget {target} infeasible: smallest reachable size is {hi_total}");
        return Ok(done(opts.eps_hi, hi_alloc, hi_total, trace, false));
    }
    let (lo_alloc, lo_total) = step(opts.eps_lo)?;
    if lo_total <= target {
        return Ok(done(opts.eps_lo, lo_alloc, lo_total, trace, true));
    }
    let (mut lo, mut hi) = (opts.eps_lo, opts.eps_hi);
    let mut best = (opts.eps_hi, hi_alloc, hi_total);
    while hi - lo >= 1e-9 * hi.max(1.0) {
        let mid = (lo * hi).sqrt();
        let (a, t) = step(mid)?;
        if !by_params && t.abs_diff(target) <= 1 {
            return Ok(done(mid, a, t, trace, true));
        }
        if t > target {
            lo = mid;
        } else {
            hi = mid;
            best = (mid, a, t);
        }
    }
    let (eps_star, a, t) = best;
    Ok(done(eps_star, a, t, trace, true))
}

/// Prune-ratio schedule `1 - 1/(i+1)^α` for `i = 1..=steps`.
pub fn hyperharmonic(alpha: f64, steps: usize) -> Vec<f64> {
    (1..=steps)
        .map(|i| 1.0 - 1.0 / ((i + 1) as f64).powf(alpha))
        .collect()
}
