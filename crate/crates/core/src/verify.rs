//! Empirical checks of the pruning guarantees.
//!
//! Layer checks compare `ẑ` against `z` with the error measured relative to
//! `D_i = z_i⁺ + z_i⁻`, the sum of magnitudes of the per-channel terms. On a
//! layer whose terms are all nonnegative this is exactly `z_i`, and the
//! verdict records which of the two cases was observed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{param_err, Result};
use crate::model::NetworkModel;
use crate::pruner::{prune_stream, sample_scales, Contributions, LayerPlan, Mode};
use crate::rng::{self, purpose};
use crate::sensitivity::SensitivityReport;
use crate::tensor::DenseTensor;
use rand::Rng;

/// Entries whose denominator falls below this are excluded from checks.
pub const DEFAULT_TAU: f64 = 1e-12;

/// Trials below this count get an inconclusive verdict.
pub const MIN_TRIALS: usize = 100;

/// Denominator used for the relative error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Every per-channel term was nonnegative, so `D = z`.
    Z,
    /// Mixed signs were observed, so `D = z⁺ + z⁻`.
    SignSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
            Status::Inconclusive => 3,
        }
    }

    fn merge(self, other: Status) -> Status {
        match (self, other) {
            (Status::Fail, _) | (_, Status::Fail) => Status::Fail,
            (Status::Inconclusive, _) | (_, Status::Inconclusive) => Status::Inconclusive,
            _ => Status::Pass,
        }
    }
}

/// Binomial allowance `3·sqrt(δ(1−δ)/n)`.
pub fn slack(delta: f64, trials: usize) -> f64 {
    if trials == 0 {
        return f64::INFINITY;
    }
    3.0 * (delta * (1.0 - delta) / trials as f64).sqrt()
}

fn status(rate: f64, delta: f64, trials: usize) -> Status {
    if trials < MIN_TRIALS {
        Status::Inconclusive
    } else if rate <= delta + slack(delta, trials) {
        Status::Pass
    } else {
        Status::Fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: usize,
    pub eps: f64,
    pub delta: f64,
    pub mode: Mode,
    pub m: usize,
    pub trials: usize,
    /// Fresh sampling and a fresh input per trial.
    pub violation_rate: f64,
    /// One fixed pruned layer evaluated on each fresh input.
    pub conditional_rate: f64,
    pub conditional_inputs: usize,
    /// Entry evaluations skipped because `D < tau`.
    pub excluded_entries: usize,
    pub convention: Convention,
    pub slack: f64,
    pub status: Status,
}

struct Trial {
    violated: bool,
    excluded: usize,
    mixed: bool,
}

fn judge(c: &Contributions, scale: &[f64], eps: f64, tau: f64) -> Trial {
    let z = c.z();
    let est = c.estimate(scale);
    let mut t = Trial { violated: false, excluded: 0, mixed: false };
    for (i, (pos, neg)) in c.sign_sums().into_iter().enumerate() {
        t.mixed |= neg > 0.0;
        let d = pos + neg;
        if d < tau {
            t.excluded += 1;
            continue;
        }
        t.violated |= (est[i] - z[i]).abs() > eps * d;
    }
    t
}

/// Checks the layer-wise guarantee of `plan` on `fresh_inputs`.
///
/// Trial `t` re-prunes with stream `prune_stream(seed, ℓ, t + 1)` and a
/// uniformly drawn input. The conditional rate uses the stream of trial 0,
/// the one [`crate::pruner::prune_layer`] uses.
pub fn check_layer(model: &NetworkModel, report: &SensitivityReport, plan: &LayerPlan, trials: usize, seed: u64, fresh_inputs: &Dataset, tau: f64) -> Result<LayerVerdict> {
    let l = plan.layer;
    let ls = report
        .layers
        .iter()
        .find(|ls| ls.layer == l)
        .ok_or_else(|| param_err!("no sensitivities for layer {l}"))?;
    if fresh_inputs.is_empty() {
        return Err(param_err!("verification needs at least one fresh input"));
    }
    if trials < MIN_TRIALS {
        log::warn!("layer {l}: {trials} trials give little statistical power (want at least {MIN_TRIALS})");
    }
    let n = fresh_inputs.len();
    let joint: Vec<Trial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let idx = rng::stream(seed, &[purpose::VERIFY_INPUT, l as u64, t as u64]).random_range(0..n);
            let c = Contributions::of(model, l, &fresh_inputs.sample(idx))?;
            let out = sample_scales(&ls.p, &ls.s, plan, &mut prune_stream(seed, l, t as u64 + 1))?;
            Ok(judge(&c, &out.channel_scale, plan.eps, tau))
        })
        .collect::<Result<_>>()?;
    let fixed = sample_scales(&ls.p, &ls.s, plan, &mut prune_stream(seed, l, 0))?;
    let cond: Vec<Trial> = (0..n)
        .into_par_iter()
        .map(|i| Ok(judge(&Contributions::of(model, l, &fresh_inputs.sample(i))?, &fixed.channel_scale, plan.eps, tau)))
        .collect::<Result<_>>()?;
    let rate = |v: &[Trial]| v.iter().filter(|t| t.violated).count() as f64 / v.len().max(1) as f64;
    let violation_rate = rate(&joint);
    let mixed = joint.iter().chain(&cond).any(|t| t.mixed);
    Ok(LayerVerdict {
        layer: l,
        eps: plan.eps,
        delta: plan.delta,
        mode: plan.mode,
        m: plan.m,
        trials,
        violation_rate,
        conditional_rate: rate(&cond),
        conditional_inputs: n,
        excluded_entries: joint.iter().map(|t| t.excluded).sum(),
        convention: if mixed { Convention::SignSum } else { Convention::Z },
        slack: slack(plan.delta, trials),
        status: status(violation_rate, plan.delta, trials),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnbiasedReport {
    pub layer: usize,
    pub m: usize,
    /// Largest `|E[ẑ_i] − z_i|` from exhaustive enumeration, when run.
    pub exact_max_bias: Option<f64>,
    pub mc_draws: usize,
    /// Largest `|mean − z_i| / standard error` over entries with nonzero
    /// variance.
    pub mc_max_z_score: f64,
    /// Entries with zero sample variance whose mean differs from `z`.
    pub mc_degenerate_mismatches: usize,
    pub mc_pass: bool,
}

/// Largest channel count for which exact enumeration is attempted.
pub const EXACT_MAX_ETA: usize = 6;
/// Largest draw count for which exact enumeration is attempted.
pub const EXACT_MAX_M: usize = 3;

/// Exact expectation of `ẑ` under `m` i.i.d. draws from `p`, summing over
/// all `η^m` ordered draw sequences.
pub fn exact_expectation(c: &Contributions, p: &[f64], m: usize) -> Vec<f64> {
    let eta = p.len();
    let total = eta.pow(m as u32);
    let mut mean = vec![0.0; c.entries];
    let mut seq = vec![0usize; m];
    for code in 0..total {
        let mut r = code;
        for s in seq.iter_mut() {
            *s = r % eta;
            r /= eta;
        }
        let prob: f64 = seq.iter().map(|&j| p[j]).product();
        if prob == 0.0 {
            continue;
        }
        let mut scale = vec![0.0; eta];
        for &j in &seq {
            scale[j] += 1.0 / (m as f64 * p[j]);
        }
        for (acc, v) in mean.iter_mut().zip(c.estimate(&scale)) {
            *acc += prob * v;
        }
    }
    mean
}

/// Checks `E[ẑ] = z` for plain importance sampling with `m` draws at input
/// `x`: exactly when `η ≤ 6` and `m ≤ 3`, and by a 3σ Monte-Carlo mean test
/// over `draws` samplings.
pub fn check_unbiased(model: &NetworkModel, report: &SensitivityReport, l: usize, x: &DenseTensor, m: usize, draws: usize, seed: u64) -> Result<UnbiasedReport> {
    let ls = report
        .layers
        .iter()
        .find(|ls| ls.layer == l)
        .ok_or_else(|| param_err!("no sensitivities for layer {l}"))?;
    if m == 0 {
        return Err(param_err!("need at least one draw"));
    }
    let c = Contributions::of(model, l, x)?;
    let z = c.z();
    let exact_max_bias = (ls.eta() <= EXACT_MAX_ETA && m <= EXACT_MAX_M).then(|| {
        exact_expectation(&c, &ls.p, m)
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    let plan = LayerPlan {
        layer: l,
        eps: f64::NAN,
        delta: f64::NAN,
        mode: Mode::Rand,
        m,
        det_keep: Vec::new(),
        incompressible: false,
    };
    let mut rng = rng::stream(seed, &[purpose::VERIFY_INPUT, l as u64, u64::MAX]);
    let mut sum = vec![0.0; c.entries];
    let mut sq = vec![0.0; c.entries];
    for _ in 0..draws {
        let out = sample_scales(&ls.p, &ls.s, &plan, &mut rng)?;
        for (i, v) in c.estimate(&out.channel_scale).into_iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let nd = draws as f64;
    let mut max_z = 0.0f64;
    let mut degenerate = 0;
    for i in 0..c.entries {
        let mean = sum[i] / nd;
        let var = ((sq[i] - nd * mean * mean) / (nd - 1.0)).max(0.0);
        let se = (var / nd).sqrt();
        let scale = z[i].abs().max(1.0);
        if se <= 1e-12 * scale {
            degenerate += usize::from((mean - z[i]).abs() > 1e-9 * scale);
        } else {
            max_z = max_z.max((mean - z[i]).abs() / se);
        }
    }
    Ok(UnbiasedReport {
        layer: l,
        m,
        exact_max_bias,
        mc_draws: draws,
        mc_max_z_score: max_z,
        mc_degenerate_mismatches: degenerate,
        mc_pass: draws > 1 && max_z <= 3.0 && degenerate == 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformComparison {
    pub layer: usize,
    pub m: usize,
    pub draws: usize,
    /// Per input, the median over draws of the max-entry relative error.
    pub es_medians: Vec<f64>,
    pub uniform_medians: Vec<f64>,
    pub es_median: f64,
    pub uniform_median: f64,
    /// Fraction of inputs where the ES median is strictly lower.
    pub win_rate: f64,
    pub ties: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max_rel_error(c: &Contributions, z: &[f64], d: &[f64], scale: &[f64], tau: f64) -> f64 {
    c.estimate(scale)
        .iter()
        .zip(z.iter().zip(d))
        .filter(|(_, (_, &d))| d >= tau)
        .map(|(e, (z, d))| (e - z).abs() / d)
        .fold(0.0, f64::max)
}

/// Compares importance sampling from `p` against uniform sampling at equal
/// `m`, using `draws` samplings per input for each scheme.
pub fn compare_uniform(model: &NetworkModel, report: &SensitivityReport, l: usize, m: usize, draws: usize, inputs: &Dataset, seed: u64, tau: f64) -> Result<UniformComparison> {
    let ls = report
        .layers
        .iter()
        .find(|ls| ls.layer == l)
        .ok_or_else(|| param_err!("no sensitivities for layer {l}"))?;
    if m == 0 || draws == 0 || inputs.is_empty() {
        return Err(param_err!("need positive m, draws and inputs"));
    }
    let eta = ls.eta();
    let uniform = vec![1.0 / eta as f64; eta];
    let plan = LayerPlan {
        layer: l,
        eps: f64::NAN,
        delta: f64::NAN,
        mode: Mode::Rand,
        m,
        det_keep: Vec::new(),
        incompressible: false,
    };
    let per_input: Vec<(f64, f64)> = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let c = Contributions::of(model, l, &inputs.sample(i))?;
            let z = c.z();
            let d: Vec<f64> = c.sign_sums().iter().map(|(p, n)| p + n).collect();
            // Both schemes consume the same random numbers.
            let mut es_rng = rng::stream(seed, &[purpose::UNIFORM_BASELINE, l as u64, i as u64]);
            let mut un_rng = es_rng.clone();
            let mut es = Vec::with_capacity(draws);
            let mut un = Vec::with_capacity(draws);
            for _ in 0..draws {
                let a = sample_scales(&ls.p, &ls.s, &plan, &mut es_rng)?;
                es.push(max_rel_error(&c, &z, &d, &a.channel_scale, tau));
                let b = sample_scales(&uniform, &uniform, &plan, &mut un_rng)?;
                un.push(max_rel_error(&c, &z, &d, &b.channel_scale, tau));
            }
            Ok((median(&mut es), median(&mut un)))
        })
        .collect::<Result<_>>()?;
    let es_medians: Vec<f64> = per_input.iter().map(|p| p.0).collect();
    let uniform_medians: Vec<f64> = per_input.iter().map(|p| p.1).collect();
    let wins = per_input.iter().filter(|(a, b)| a < b).count();
    let ties = per_input.iter().filter(|(a, b)| a == b).count();
    Ok(UniformComparison {
        layer: l,
        m,
        draws,
        es_median: median(&mut es_medians.clone()),
        uniform_median: median(&mut uniform_medians.clone()),
        win_rate: wins as f64 / per_input.len() as f64,
        ties,
        es_medians,
        uniform_medians,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkVerdict {
    pub eps: f64,
    pub delta: f64,
    pub inputs: usize,
    pub violations: usize,
    pub violation_rate: f64,
    /// Output entries skipped because `|f_θ(x)| < tau`.
    pub excluded_entries: usize,
    pub slack: f64,
    pub status: Status,
}

/// Fraction of `inputs` where some output entry of `pruned` leaves
/// `(1 ± eps)·f(x)` of `orig`.
pub fn check_network(orig: &NetworkModel, pruned: &NetworkModel, eps: f64, delta: f64, inputs: &Dataset, tau: f64) -> Result<NetworkVerdict> {
    if orig.input_shape() != pruned.input_shape() || orig.output_shape() != pruned.output_shape() {
        return Err(param_err!("original and pruned networks have different input or output shapes"));
    }
    let res: Vec<(bool, usize)> = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let x = inputs.sample(i);
            let f = orig.forward(&x)?;
            let g = pruned.forward(&x)?;
            let mut bad = false;
            let mut excluded = 0;
            for (a, b) in f.data().iter().zip(g.data()) {
                if a.abs() < tau {
                    excluded += 1;
                } else {
                    bad |= (b - a).abs() > eps * a.abs();
                }
            }
            Ok((bad, excluded))
        })
        .collect::<Result<_>>()?;
    let violations = res.iter().filter(|r| r.0).count();
    let n = inputs.len();
    let rate = violations as f64 / n.max(1) as f64;
    Ok(NetworkVerdict {
        eps,
        delta,
        inputs: n,
        violations,
        violation_rate: rate,
        excluded_entries: res.iter().map(|r| r.1).sum(),
        slack: slack(delta, n),
        status: status(rate, delta, n),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeVerdict {
    pub layers: Vec<LayerVerdict>,
    pub end_to_end: Option<NetworkVerdict>,
    pub tau: f64,
    pub status: Status,
}

impl GuaranteeVerdict {
    pub fn new(layers: Vec<LayerVerdict>, end_to_end: Option<NetworkVerdict>, tau: f64) -> Self {
        let status = layers
            .iter()
            .map(|l| l.status)
            .chain(end_to_end.iter().map(|e| e.status))
            .fold(Status::Pass, Status::merge);
        let status = if layers.is_empty() && end_to_end.is_none() { Status::Inconclusive } else { status };
        Self { layers, end_to_end, tau, status }
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, Targets};
    use crate::model::Layer;
    use crate::pruner::{plan_layer, KChoice, PlanSettings};
    use crate::sensitivity::{report as sens_report, LayerSensitivity, SensitivityConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(eta: usize, out: usize, nonneg: bool, seed: u64) -> NetworkModel {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let lo = if nonneg { 0.0 } else { -1.0 };
        let mut w = |s: &[usize]| DenseTensor::from_fn(s, |_| r.random_range(lo..1.0));
        NetworkModel::new(
            vec![5],
            vec![
                Layer::Dense { weight: w(&[eta, 5]), bias: None },
                Layer::Relu,
                Layer::Dense { weight: w(&[out, eta]), bias: None },
            ],
        )
        .unwrap()
    }

    fn inputs(n: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = DenseTensor::from_fn(&[n, 5], |_| r.random_range(0.0..1.0));
        Dataset::new(x, Targets::None, Split::Test).unwrap()
    }

    fn settings() -> PlanSettings {
        PlanSettings { mode: Mode::Rand, k: KChoice::Auto, k_tail: 1.0, eta_star: 0 }
    }

    #[test]
    fn unpruned_network_has_no_violations() {
        let m = net(8, 3, false, 1);
        let v = check_network(&m, &m, 0.0, 0.1, &inputs(150, 2), DEFAULT_TAU).unwrap();
        assert_eq!(v.violations, 0);
        assert_eq!(v.status, Status::Pass);
    }

    #[test]
    fn zero_eps_flags_real_pruning() {
        let m = net(8, 3, true, 1);
        let p = m.with_channel_scales(0, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let v = check_network(&m, &p, 0.0, 0.1, &inputs(150, 2), DEFAULT_TAU).unwrap();
        assert_eq!(v.violation_rate, 1.0);
        assert_eq!(v.status, Status::Fail);
        assert_eq!(v.status.exit_code(), 2);
    }

    #[test]
    fn exact_enumeration_is_unbiased() {
        let m = net(2, 3, true, 3);
        let x = inputs(1, 4).sample(0);
        let rep = sens_report(&m, &inputs(20, 5), SensitivityConfig::default()).unwrap();
        let r = check_unbiased(&m, &rep, 0, &x, 1, 2000, 7).unwrap();
        assert!(r.exact_max_bias.unwrap() <= 1e-12);
    }

    #[test]
    fn enumeration_matches_hand_expectation() {
        // Two channels, p = (0.25, 0.75), m = 2, contributions (2, 6).
        let c = Contributions { channels: 2, entries: 1, values: vec![2.0, 6.0] };
        let mean = exact_expectation(&c, &[0.25, 0.75], 2);
        // Draw pairs: (0,0) 1/16 → 2/0.25 = 8; (1,1) 9/16 → 6/0.75 = 8;
        // mixed 6/16 → 4 + 4 = 8.
        assert!((mean[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_layer_never_violates() {
        let m = net(4, 3, true, 8);
        let ls = LayerSensitivity::from_sensitivities(0, 3, vec![1.0, 0.0, 0.0, 0.0]);
        let rep = SensitivityReport { layers: vec![ls.clone()], calib_size: 1, k: 1.0, k_prime: 1.0 };
        let plan = LayerPlan { layer: 0, eps: 1e-9, delta: 0.1, mode: Mode::Rand, m: 5, det_keep: vec![], incompressible: false };
        // Only channel 0 contributes when the others have zero weight.
        let mut layers = m.layers().to_vec();
        if let Layer::Dense { weight, .. } = &mut layers[2] {
            for o in 0..3 {
                for j in 1..4 {
                    weight.data_mut()[o * 4 + j] = 0.0;
                }
            }
        }
        let m = NetworkModel::new(vec![5], layers).unwrap();
        let v = check_layer(&m, &rep, &plan, 200, 1, &inputs(30, 9), DEFAULT_TAU).unwrap();
        assert_eq!(v.violation_rate, 0.0);
        assert_eq!(v.conditional_rate, 0.0);
        assert_eq!(v.convention, Convention::Z);
    }

    #[test]
    fn layer_check_is_deterministic_and_stamps_convention() {
        let m = net(16, 4, false, 11);
        let calib = inputs(40, 12);
        let rep = sens_report(&m, &calib, SensitivityConfig::default()).unwrap();
        let plan = plan_layer(&rep.layers[0], 0.9, 0.2, &settings()).unwrap();
        let a = check_layer(&m, &rep, &plan, 120, 3, &inputs(50, 13), DEFAULT_TAU).unwrap();
        let b = check_layer(&m, &rep, &plan, 120, 3, &inputs(50, 13), DEFAULT_TAU).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.convention, Convention::SignSum);
        let few = check_layer(&m, &rep, &plan, 20, 3, &inputs(50, 13), DEFAULT_TAU).unwrap();
        assert_eq!(few.status, Status::Inconclusive);
        assert_eq!(few.status.exit_code(), 3);
    }

    #[test]
    fn equal_sensitivities_tie_with_uniform() {
        let m = net(6, 3, true, 14);
        let ls = LayerSensitivity::from_sensitivities(0, 3, vec![0.5; 6]);
        let rep = SensitivityReport { layers: vec![ls], calib_size: 1, k: 1.0, k_prime: 1.0 };
        let c = compare_uniform(&m, &rep, 0, 4, 50, &inputs(10, 15), 2, DEFAULT_TAU).unwrap();
        assert_eq!(c.win_rate, 0.0);
        assert_eq!(c.ties, 10);
    }

    #[test]
    fn point_mass_beats_uniform() {
        let m = net(5, 2, true, 16);
        let mut layers = m.layers().to_vec();
        if let Layer::Dense { weight, .. } = &mut layers[2] {
            for o in 0..2 {
                for j in 1..5 {
                    weight.data_mut()[o * 5 + j] = 0.0;
                }
            }
        }
        let m = NetworkModel::new(vec![5], layers).unwrap();
        let ls = LayerSensitivity::from_sensitivities(0, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let rep = SensitivityReport { layers: vec![ls], calib_size: 1, k: 1.0, k_prime: 1.0 };
        let c = compare_uniform(&m, &rep, 0, 2, 401, &inputs(5, 17), 3, DEFAULT_TAU).unwrap();
        assert!(c.es_medians.iter().all(|&e| e < 1e-12));
        // Uniform misses channel 0 with probability (4/5)^2 = 0.64 per draw,
        // so its median error is 1.
        assert!(c.uniform_medians.iter().all(|&e| (e - 1.0).abs() < 1e-12), "{:?}", c.uniform_medians);
        assert_eq!(c.win_rate, 1.0);
    }

    #[test]
    fn verdict_merging() {
        let nv = |s| NetworkVerdict { eps: 0.1, delta: 0.1, inputs: 100, violations: 0, violation_rate: 0.0, excluded_entries: 0, slack: 0.09, status: s };
        assert_eq!(GuaranteeVerdict::new(vec![], Some(nv(Status::Pass)), DEFAULT_TAU).exit_code(), 0);
        assert_eq!(GuaranteeVerdict::new(vec![], None, DEFAULT_TAU).exit_code(), 3);
        assert!((slack(0.1, 1000) - 3.0 * (0.09f64 / 1000.0).sqrt()).abs() < 1e-15);
    }
}
