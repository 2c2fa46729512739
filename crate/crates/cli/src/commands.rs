use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use spnet::allocator::{self, AllocOptions, Allocation, Budget, DeltaProfile, SizeModel};
use spnet::data::{self, Dataset};
use spnet::format;
use spnet::pruner::{self, KChoice, LayerOutcome, Mode, PlanSettings, PrunePlan};
use spnet::sensitivity::{self, SensitivityConfig, SensitivityReport};
use spnet::trainer::{self, EvalStats, Loss};
use spnet::verify::{self, GuaranteeVerdict};
use spnet::NetworkModel;

use crate::config::{DeltaChoice, Preset, RunConfig};
use crate::dataset::{self, Splits};
use crate::report::{summarize, Summary};
use crate::CliError;

const DEFAULT_VAL_FRACTION: f64 = 0.1;
const DEFAULT_VERIFY_INPUTS: usize = 1000;
const DEFAULT_EPS_MAX: f64 = 1e4;
const DEFAULT_DELTA_PROFILE: DeltaChoice = DeltaChoice::Flat;

/// Files written by a run, for the reproducibility manifest.
struct Run {
    out: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
        fs::write(&p, text + "\n").map_err(|e| CliError::file(&p, e))?;
        self.outputs.push(p);
        Ok(())
    }

    fn model(&mut self, name: &str, model: &NetworkModel) -> Result<(), CliError> {
        let p = self.path(name);
        format::save(model, &p)?;
        self.outputs.push(format::blob_path(&p));
        self.outputs.push(p);
        Ok(())
    }

    fn finish(mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let mut outputs = serde_json::Map::new();
        for p in &self.outputs {
            let bytes = fs::read(p).map_err(|e| CliError::file(p, e))?;
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            outputs.insert(name, json!(format::sha256_hex(&bytes)));
        }
        let mut inputs = serde_json::Map::new();
        if let Some(m) = &cfg.common.model {
            inputs.insert("model".into(), json!(hash_file(&format::blob_path(m))?));
        }
        if let Some(d) = &cfg.common.data {
            inputs.insert("data".into(), json!(d));
        }
        let manifest = json!({
            "tool": "spnet",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "inputs": inputs,
            "outputs": outputs,
        });
        self.outputs.clear();
        self.json("run-manifest.json", &manifest)
    }
}

fn hash_file(p: &Path) -> Result<String, CliError> {
    let bytes = fs::read(p).map_err(|e| CliError::file(p, e))?;
    Ok(format::sha256_hex(&bytes))
}

pub fn run(name: &str, mut cfg: RunConfig) -> Result<u8, CliError> {
    resolve_defaults(name, &mut cfg);
    let out = cfg.out();
    fs::create_dir_all(&out).map_err(|e| CliError::file(&out, e))?;
    let mut run = Run { out, outputs: Vec::new() };
    let code = match name {
        "train" => train(&cfg, &mut run)?,
        "finetune" => finetune(&cfg, &mut run)?,
        "sensitivity" => sensitivity(&cfg, &mut run)?,
        "allocate" => allocate(&cfg, &mut run)?,
        "prune" => prune(&cfg, &mut run)?,
        "verify" => verify(&cfg, &mut run)?,
        "baseline" => baseline(&cfg, &mut run)?,
        "pipeline" => pipeline(&cfg, &mut run)?,
        "eval" => eval(&cfg, &mut run)?,
        _ => unreachable!("subcommands are fixed by the parser"),
    };
    run.finish(&cfg)?;
    Ok(code)
}

/// Writes built-in defaults into the config so the manifest records every
/// value a replay needs.
fn resolve_defaults(name: &str, cfg: &mut RunConfig) {
    cfg.common.seed.get_or_insert(0);
    cfg.common.val_fraction.get_or_insert(DEFAULT_VAL_FRACTION);
    if matches!(name, "train" | "finetune" | "pipeline") {
        let t = cfg.train_config();
        let tr = &mut cfg.train;
        tr.epochs.get_or_insert(t.epochs);
        tr.batch_size.get_or_insert(t.batch_size);
        tr.lr.get_or_insert(t.lr);
        tr.lr_decay_factor.get_or_insert(t.lr_decay_factor);
        tr.lr_decay_epochs.get_or_insert(t.lr_decay_epochs);
        tr.momentum.get_or_insert(t.momentum);
        tr.weight_decay.get_or_insert(t.weight_decay);
    }
    if matches!(name, "finetune" | "pipeline") {
        let f = cfg.finetune_config();
        cfg.finetune.finetune_epochs.get_or_insert(f.epochs);
        cfg.finetune.finetune_lr_decay_epochs.get_or_insert(f.lr_decay_epochs);
        cfg.finetune.free_support.get_or_insert(false);
    }
    if matches!(name, "sensitivity" | "allocate" | "prune" | "verify" | "pipeline") {
        let p = &mut cfg.prune;
        p.delta.get_or_insert(1e-12);
        p.mode.get_or_insert(Mode::Partial);
        p.k.get_or_insert_with(|| "auto".into());
        p.k_tail.get_or_insert(1.0);
        p.k_prime.get_or_insert(1.0);
        p.tau.get_or_insert(verify::DEFAULT_TAU);
        p.delta_profile.get_or_insert(DEFAULT_DELTA_PROFILE);
        p.eps_max.get_or_insert(DEFAULT_EPS_MAX);
        p.compact.get_or_insert(true);
    }
}

fn loss(cfg: &RunConfig) -> Loss {
    cfg.train_config().loss
}

fn load_data(cfg: &RunConfig) -> Result<Splits, CliError> {
    let spec = cfg.common.data.as_deref().ok_or_else(|| CliError::usage("--data is required"))?;
    dataset::load(spec, cfg.common.val_fraction.unwrap_or(DEFAULT_VAL_FRACTION), cfg.seed())
}

fn load_model(path: Option<&Path>) -> Result<NetworkModel, CliError> {
    let p = path.ok_or_else(|| CliError::usage("--model is required"))?;
    if !p.is_file() {
        return Err(CliError::missing(p));
    }
    Ok(format::load(p)?)
}

fn initial_model(cfg: &RunConfig) -> Result<NetworkModel, CliError> {
    match (&cfg.common.model, cfg.common.preset) {
        (Some(p), _) => load_model(Some(p)),
        (None, Some(Preset::Lenet5)) => Ok(trainer::lenet5(cfg.seed())),
        (None, _) => Ok(trainer::lenet300(cfg.seed())),
    }
}

fn error_of(model: &NetworkModel, ds: &Dataset, loss: Loss) -> Result<EvalStats, CliError> {
    Ok(trainer::evaluate(model, ds, loss)?)
}

fn print_eval(label: &str, s: &EvalStats) {
    match s.error {
        Some(e) => println!("{label}: loss {:.5}  error {:.2}%  ({} samples)", s.loss, 100.0 * e, s.samples),
        None => println!("{label}: loss {:.5}  ({} samples)", s.loss, s.samples),
    }
}

fn train(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let model = initial_model(cfg)?;
    let (model, history) = trainer::train(&model, &splits.train, Some(&splits.val), &cfg.train_config())?;
    let stats = error_of(&model, splits.eval(), loss(cfg))?;
    print_eval("test", &stats);
    run.model("model.json", &model)?;
    run.json("history.json", &history)?;
    run.json("eval.json", &stats)?;
    Ok(0)
}

fn finetune(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let model = load_model(cfg.common.model.as_deref())?;
    let frozen = !cfg.finetune.free_support.unwrap_or(false);
    let (tuned, history) = trainer::finetune(&model, &splits.train, Some(&splits.val), &cfg.finetune_config(), frozen)?;
    let stats = error_of(&tuned, splits.eval(), loss(cfg))?;
    print_eval("test", &stats);
    run.model("model.json", &tuned)?;
    run.json("history.json", &history)?;
    run.json("eval.json", &stats)?;
    Ok(0)
}

fn calibration(model: &NetworkModel, splits: &Splits, cfg: &RunConfig) -> Result<Dataset, CliError> {
    let n = model.num_prunable();
    if n == 0 {
        return Err(CliError::usage("the model has no prunable layers"));
    }
    let eta_star = (0..n).map(|l| model.filters(l)).max().unwrap_or(1);
    let eta_next = (0..n).map(|l| model.filters(l + 1)).max().unwrap_or(1);
    let t = cfg.prune.calib_size.unwrap_or_else(|| {
        data::default_calibration_size(cfg.delta(), eta_star, eta_next, cfg.prune.k_prime.unwrap_or(1.0))
    });
    Ok(data::draw_calibration(&splits.val, t, cfg.seed())?)
}

fn sens_config(cfg: &RunConfig) -> SensitivityConfig {
    SensitivityConfig {
        k: cfg.prune.k_tail.unwrap_or(1.0),
        k_prime: cfg.prune.k_prime.unwrap_or(1.0),
    }
}

fn k_choice(cfg: &RunConfig) -> Result<KChoice, CliError> {
    match cfg.prune.k.as_deref().unwrap_or("auto") {
        "auto" => Ok(KChoice::Auto),
        v => v.parse().map(KChoice::Fixed).map_err(|_| CliError::usage(format!("--k {v:?} is neither `auto` nor a count"))),
    }
}

fn alloc_options(cfg: &RunConfig) -> Result<AllocOptions, CliError> {
    Ok(AllocOptions {
        k_tail: cfg.prune.k_tail.unwrap_or(1.0),
        eps_hi: cfg.prune.eps_max.unwrap_or(DEFAULT_EPS_MAX),
        mode: cfg.prune.mode.unwrap_or(Mode::Partial),
        k: k_choice(cfg)?,
        ..AllocOptions::default()
    })
}

fn profile(model: &NetworkModel, calib: &Dataset, cfg: &RunConfig) -> Result<DeltaProfile, CliError> {
    Ok(match cfg.prune.delta_profile.unwrap_or(DEFAULT_DELTA_PROFILE) {
        DeltaChoice::Flat => DeltaProfile::flat(model.num_prunable()),
        DeltaChoice::Empirical => allocator::delta_profile(model, calib, cfg.prune.tau.unwrap_or(verify::DEFAULT_TAU))?,
    })
}

fn sensitivity(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let model = load_model(cfg.common.model.as_deref())?;
    let calib = calibration(&model, &splits, cfg)?;
    let rep = sensitivity::report(&model, &calib, sens_config(cfg))?;
    println!("{:>5} {:>6} {:>12} {:>12}", "layer", "eta", "S", "suggested K");
    for l in &rep.layers {
        let k = l.suggested_k.map_or("-".into(), |k| format!("{k:.3}"));
        println!("{:>5} {:>6} {:>12.4} {:>12}", l.layer, l.eta(), l.s_sum, k);
    }
    run.json("sensitivity.json", &rep)?;
    Ok(0)
}

/// What to size the pruned network by.
#[derive(Clone, Copy, Debug)]
enum Target {
    Eps(f64),
    Filters(usize),
    /// Fraction of the reference parameter count to remove.
    Ratio(f64),
}

fn target(cfg: &RunConfig) -> Result<Target, CliError> {
    let p = &cfg.prune;
    match (p.eps, p.budget, p.prune_ratio) {
        (Some(e), None, None) => Ok(Target::Eps(e)),
        (None, Some(n), None) => Ok(Target::Filters(n)),
        (None, None, Some(r)) if r > 0.0 && r < 1.0 => Ok(Target::Ratio(r)),
        (None, None, Some(r)) => Err(CliError::usage(format!("--prune-ratio {r} not in (0, 1)"))),
        _ => Err(CliError::usage("give exactly one of --eps, --budget, --prune-ratio")),
    }
}

struct Sized {
    report: SensitivityReport,
    profile: DeltaProfile,
    allocation: Allocation,
}

/// Sensitivities, amplification profile and per-layer `(eps, delta)` for a
/// target. `reference_params` is the size a prune ratio is measured against.
fn size_layers(model: &NetworkModel, splits: &Splits, cfg: &RunConfig, target: Target, reference_params: usize) -> Result<Sized, CliError> {
    let calib = calibration(model, splits, cfg)?;
    let report = sensitivity::report(model, &calib, sens_config(cfg))?;
    let profile = profile(model, &calib, cfg)?;
    let opts = alloc_options(cfg)?;
    let delta = cfg.delta();
    let size = SizeModel::of(model)?;
    let allocation = match target {
        Target::Eps(eps) => {
            let layers = allocator::allocation_at(&report.layers, eps, delta, &profile, &opts)?;
            let kept: Vec<usize> = layers.iter().map(|l| l.n).collect();
            Allocation {
                eps_star: eps,
                total: kept.iter().sum(),
                budget: Budget::Filters(kept.iter().sum()),
                layers,
                feasible: true,
                min_achievable: None,
                trace: Vec::new(),
            }
        }
        Target::Filters(n) => allocator::allocate(&report.layers, Budget::Filters(n), delta, &profile, None, &opts)?,
        Target::Ratio(r) => {
            let keep = ((1.0 - r) * reference_params as f64).floor() as usize;
            allocator::allocate(&report.layers, Budget::Params(keep), delta, &profile, Some(&size), &opts)?
        }
    };
    if !allocation.feasible {
        return Err(CliError {
            code: 1,
            msg: format!(
                "budget infeasible for eps up to {}: the smallest reachable size is {} ({:?}); raise --eps-max or relax the target",
                opts.eps_hi,
                allocation.min_achievable.unwrap_or(allocation.total),
                allocation.budget
            ),
        });
    }
    Ok(Sized { report, profile, allocation })
}

fn print_allocation(a: &Allocation) {
    println!("eps* = {:.6e}", a.eps_star);
    println!("{:>5} {:>6} {:>12} {:>10} {:>6}", "layer", "eta", "eps", "m", "keep");
    for l in &a.layers {
        println!("{:>5} {:>6} {:>12.4e} {:>10} {:>6}", l.layer, l.eta, l.eps, l.m, l.n);
    }
}

fn allocate(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let model = load_model(cfg.common.model.as_deref())?;
    let t = target(cfg)?;
    let s = size_layers(&model, &splits, cfg, t, model.size_of())?;
    print_allocation(&s.allocation);
    run.json("allocation.json", &json!({ "allocation": s.allocation, "delta_profile": s.profile }))?;
    Ok(0)
}

fn plan_settings(cfg: &RunConfig, report: &SensitivityReport) -> Result<PlanSettings, CliError> {
    Ok(PlanSettings {
        mode: cfg.prune.mode.unwrap_or(Mode::Partial),
        k: k_choice(cfg)?,
        k_tail: cfg.prune.k_tail.unwrap_or(1.0),
        eta_star: report.eta_star(),
    })
}

#[derive(Serialize)]
struct PruneRecord<'a> {
    allocation: &'a Allocation,
    plan: &'a PrunePlan,
    layers: &'a [LayerOutcome],
}

/// One sensitivity → allocation → sampling step. Returns the pruned model
/// (compacted when configured) and a record of what happened.
fn prune_once(model: &NetworkModel, splits: &Splits, cfg: &RunConfig, t: Target, reference_params: usize, seed: u64) -> Result<(NetworkModel, serde_json::Value), CliError> {
    let s = size_layers(model, splits, cfg, t, reference_params)?;
    let settings = plan_settings(cfg, &s.report)?;
    let plan = pruner::plan(&s.report, &s.allocation.eps(), &s.allocation.deltas(), &settings, seed)?;
    let outcome = pruner::prune(model, &s.report, &plan)?;
    let record = serde_json::to_value(PruneRecord {
        allocation: &s.allocation,
        plan: &plan,
        layers: &outcome.layers,
    })
    .map_err(|e| CliError::usage(e.to_string()))?;
    let pruned = if cfg.prune.compact.unwrap_or(true) {
        outcome.model.compact()?
    } else {
        outcome.model
    };
    Ok((pruned, record))
}

fn prune(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let model = load_model(cfg.common.model.as_deref())?;
    let t = target(cfg)?;
    let (pruned, record) = prune_once(&model, &splits, cfg, t, model.size_of(), cfg.seed())?;
    let mut summary = summarize(&model, &pruned)?;
    if has_labels(splits.eval()) {
        summary.error_before = error_of(&model, splits.eval(), loss(cfg))?.error;
        summary.error_after = error_of(&pruned, splits.eval(), loss(cfg))?.error;
    }
    summary.print();
    run.model("model.json", &pruned)?;
    run.json("prune.json", &record)?;
    run.json("summary.json", &summary)?;
    Ok(0)
}

fn has_labels(ds: &Dataset) -> bool {
    matches!(ds.targets(), data::Targets::Labels(_))
}

fn verify(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let orig = load_model(cfg.common.model.as_deref())?;
    let pruned = match &cfg.verify.pruned {
        Some(p) => load_model(Some(p))?,
        None => orig.clone(),
    };
    let eps = cfg.prune.eps.ok_or_else(|| CliError::usage("verify needs --eps"))?;
    let delta = cfg.delta();
    let tau = cfg.prune.tau.unwrap_or(verify::DEFAULT_TAU);
    let fresh = splits.fresh();
    let n = cfg.verify.verify_inputs.unwrap_or(DEFAULT_VERIFY_INPUTS).min(fresh.len());
    let held_out = fresh.head(n)?;
    let trials = cfg.verify.trials.unwrap_or(0);
    let mut layers = Vec::new();
    if trials > 0 {
        let s = size_layers(&orig, &splits, cfg, Target::Eps(eps), orig.size_of())?;
        let settings = plan_settings(cfg, &s.report)?;
        let plan = pruner::plan(&s.report, &s.allocation.eps(), &s.allocation.deltas(), &settings, cfg.seed())?;
        for lp in &plan.layers {
            layers.push(verify::check_layer(&orig, &s.report, lp, trials, cfg.seed(), fresh, tau)?);
        }
    }
    let network = verify::check_network(&orig, &pruned, eps, delta, &held_out, tau)?;
    let verdict = GuaranteeVerdict::new(layers, Some(network), tau);
    for l in &verdict.layers {
        println!(
            "layer {}: {:?} m={} violation rate {:.4} (conditional {:.4}, bound {:.3e} + {:.4}) {:?}",
            l.layer, l.mode, l.m, l.violation_rate, l.conditional_rate, l.delta, l.slack, l.status
        );
    }
    if let Some(e) = &verdict.end_to_end {
        println!(
            "network: {} / {} inputs outside (1 ± {}) (rate {:.4}, bound {:.3e} + {:.4}) {:?}",
            e.violations, e.inputs, e.eps, e.violation_rate, e.delta, e.slack, e.status
        );
    }
    println!("verdict: {:?}", verdict.status);
    run.json("verdict.json", &verdict)?;
    Ok(verdict.exit_code() as u8)
}

fn baseline(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let model = load_model(cfg.common.model.as_deref())?;
    let method = cfg.baseline.method.ok_or_else(|| CliError::usage("baseline needs --method"))?;
    let frac = cfg.baseline.keep_fraction.ok_or_else(|| CliError::usage("baseline needs --keep-fraction"))?;
    let calib = calibration(&model, &splits, cfg)?;
    let mut cur = model.clone();
    let mut outcomes = Vec::new();
    for l in 0..model.num_prunable() {
        let (next, out) = pruner::baseline_prune(&cur, l, method, frac, Some(&calib))?;
        cur = next;
        outcomes.push(out);
    }
    let pruned = cur.compact()?;
    let mut summary = summarize(&model, &pruned)?;
    if has_labels(splits.eval()) {
        summary.error_before = error_of(&model, splits.eval(), loss(cfg))?.error;
        summary.error_after = error_of(&pruned, splits.eval(), loss(cfg))?.error;
    }
    summary.print();
    run.model("model.json", &pruned)?;
    run.json("baseline.json", &outcomes)?;
    run.json("summary.json", &summary)?;
    Ok(0)
}

/// Prune ratios of the run: the schedule (cut off at `--prune-ratio` when
/// both are given) or the single target ratio.
fn ratios(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let target = cfg.prune.prune_ratio;
    let Some(s) = &cfg.prune.schedule else {
        let r = target.ok_or_else(|| CliError::usage("pipeline needs --prune-ratio or --schedule"))?;
        if !(r > 0.0 && r < 1.0) {
            return Err(CliError::usage(format!("--prune-ratio {r} not in (0, 1)")));
        }
        return Ok(vec![r]);
    };
    let bad = || CliError::usage(format!("--schedule {s:?} should be ALPHA,STEPS"));
    let (a, n) = s.split_once(',').ok_or_else(bad)?;
    let alpha: f64 = a.trim().parse().map_err(|_| bad())?;
    let steps: usize = n.trim().parse().map_err(|_| bad())?;
    let mut rs = allocator::hyperharmonic(alpha, steps);
    if let Some(t) = target {
        if let Some(i) = rs.iter().position(|&r| r >= t) {
            rs.truncate(i);
            rs.push(t);
        }
    }
    Ok(rs)
}

#[derive(Serialize)]
struct Step {
    step: usize,
    target_ratio: f64,
    summary: Summary,
    error_pruned: Option<f64>,
    error_finetuned: Option<f64>,
    prune: serde_json::Value,
}

fn pipeline(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let rs = ratios(cfg)?;
    let lo = loss(cfg);
    let base = match &cfg.common.model {
        Some(p) => load_model(Some(p))?,
        None => {
            let init = initial_model(cfg)?;
            let (m, history) = trainer::train(&init, &splits.train, Some(&splits.val), &cfg.train_config())?;
            run.json("train-history.json", &history)?;
            run.model("trained.json", &m)?;
            m
        }
    };
    let base_eval = error_of(&base, splits.eval(), lo)?;
    print_eval("unpruned", &base_eval);
    let reference = base.size_of();
    let mut cur = base.clone();
    let mut steps = Vec::new();
    for (i, &r) in rs.iter().enumerate() {
        let seed = cfg.seed().wrapping_add(i as u64);
        let (pruned, record) = prune_once(&cur, &splits, cfg, Target::Ratio(r), reference, seed)?;
        let err_pruned = error_of(&pruned, splits.eval(), lo)?.error;
        let ft = trainer::TrainConfig { seed, ..cfg.finetune_config() };
        let frozen = !cfg.finetune.free_support.unwrap_or(false);
        let (tuned, _) = trainer::finetune(&pruned, &splits.train, Some(&splits.val), &ft, frozen)?;
        let err_tuned = error_of(&tuned, splits.eval(), lo)?.error;
        let summary = summarize(&base, &tuned)?;
        println!(
            "step {}: target PR {:.2}%  PR {:.2}%  FR {:.2}%  error pruned {}  fine-tuned {}",
            i + 1,
            100.0 * r,
            summary.pr,
            summary.fr,
            pct(err_pruned),
            pct(err_tuned)
        );
        steps.push(Step {
            step: i + 1,
            target_ratio: r,
            summary,
            error_pruned: err_pruned,
            error_finetuned: err_tuned,
            prune: record,
        });
        cur = tuned;
    }
    let mut summary = summarize(&base, &cur)?;
    summary.error_before = base_eval.error;
    summary.error_after = error_of(&cur, splits.eval(), lo)?.error;
    summary.print();
    run.model("model.json", &cur)?;
    run.json("pipeline.json", &steps)?;
    run.json("summary.json", &summary)?;
    Ok(0)
}

fn pct(e: Option<f64>) -> String {
    e.map_or("-".into(), |e| format!("{:.2}%", 100.0 * e))
}

fn eval(cfg: &RunConfig, run: &mut Run) -> Result<u8, CliError> {
    let splits = load_data(cfg)?;
    let model = load_model(cfg.common.model.as_deref())?;
    let stats = error_of(&model, splits.eval(), loss(cfg))?;
    print_eval("eval", &stats);
    run.json("eval.json", &stats)?;
    Ok(0)
}
