use serde::Serialize;
use spnet::NetworkModel;

#[derive(Clone, Debug, Serialize)]
pub struct LayerRow {
    pub layer: usize,
    pub kind: &'static str,
    pub filters_before: usize,
    pub filters_after: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub params_before: usize,
    pub params_after: usize,
    pub macs_before: usize,
    pub macs_after: usize,
    /// Percentage of parameters removed.
    pub pr: f64,
    /// Percentage of multiply-accumulates removed.
    pub fr: f64,
    pub layers: Vec<LayerRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_after: Option<f64>,
}

fn filters(m: &NetworkModel) -> Vec<(&'static str, usize)> {
    m.weighted_positions()
        .iter()
        .map(|&p| {
            let l = &m.layers()[p];
            (l.kind(), l.weight().unwrap().shape()[0])
        })
        .collect()
}

/// Compares `orig` with the compacted form of `pruned`.
pub fn summarize(orig: &NetworkModel, pruned: &NetworkModel) -> spnet::Result<Summary> {
    let small = pruned.compact()?;
    let pct = |a: usize, b: usize| 100.0 * (1.0 - b as f64 / a as f64);
    let (params_before, params_after) = (orig.size_of(), small.size_of());
    let (macs_before, macs_after) = (orig.macs(), small.macs());
    let layers = filters(orig)
        .into_iter()
        .zip(filters(&small))
        .enumerate()
        .map(|(layer, ((kind, filters_before), (_, filters_after)))| LayerRow {
            layer,
            kind,
            filters_before,
            filters_after,
        })
        .collect();
    Ok(Summary {
        params_before,
        params_after,
        macs_before,
        macs_after,
        pr: pct(params_before, params_after),
        fr: pct(macs_before, macs_after),
        layers,
        error_before: None,
        error_after: None,
    })
}

impl Summary {
    pub fn print(&self) {
        println!("{:>5}  {:<6} {:>8} {:>8}", "layer", "kind", "filters", "kept");
        for r in &self.layers {
            println!("{:>5}  {:<6} {:>8} {:>8}", r.layer, r.kind, r.filters_before, r.filters_after);
        }
        println!("params {} -> {}   PR {:.2}%", self.params_before, self.params_after, self.pr);
        println!("MACs   {} -> {}   FR {:.2}%", self.macs_before, self.macs_after, self.fr);
        if let (Some(b), Some(a)) = (self.error_before, self.error_after) {
            println!("error  {:.2}% -> {:.2}%   ({:+.2})", 100.0 * b, 100.0 * a, 100.0 * (a - b));
        }
    }
}
