//! Fractional q neighborhood exposure: own treatment crossed with whether
//! the treated-neighbor share exceeds `q`.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::estimators::{bootstrap_se, gate_difference, EstimateReport, EstimatorKind, Resample, Weights};
use crate::exposure::{ExposureCondition, Positivity, ReplicateCache};
use crate::motif::{Dim, RepresentationMatrix, Shape};
use crate::randomization::ClusterPartition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FracqReport {
    pub q: f64,
    pub share_dim: String,
    /// `(Z=1, >q)`, `(Z=1, <=q)`, `(Z=0, >q)`, `(Z=0, <=q)`.
    pub cells: Vec<EstimateReport>,
    /// First cell minus last.
    pub effect: EstimateReport,
}

#[derive(Debug, Clone)]
pub struct FracqOptions<'a> {
    pub q: f64,
    pub estimator: EstimatorKind,
    pub positivity: Positivity,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
    pub clusters: Option<&'a ClusterPartition>,
}

/// Position of the treated-neighbor share (`2-1`) in the schema.
pub fn share_dim(observed: &RepresentationMatrix) -> Result<usize> {
    let target = Dim::MotifFraction { shape: Shape::Dyad, treated: 1 };
    observed
        .schema()
        .dims()
        .iter()
        .position(|d| *d == target)
        .ok_or_else(|| Error::Schema("fractional q exposure needs the 2-1 dimension".into()))
}

/// Estimate all four cells and the treated-above minus control-below gap.
/// Every cell shares one bootstrap stream, so the gap's SE is paired.
pub fn fractional_q_report(
    observed: &RepresentationMatrix,
    y: &[f64],
    cache: &ReplicateCache,
    opts: &FracqOptions<'_>,
) -> Result<FracqReport> {
    if !(0.0..=1.0).contains(&opts.q) {
        return arg(format!("q = {} outside [0,1]", opts.q));
    }
    let n = observed.node_count();
    if y.len() != n || cache.node_count() != n {
        return arg("representations, outcomes and replicate cache cover different unit counts");
    }
    let m = observed.dim_count();
    let s = share_dim(observed)?;
    let mode = match opts.clusters {
        Some(p) => Resample::Cluster(p),
        None => Resample::Unit(n),
    };
    let mut cells = Vec::with_capacity(4);
    for (treated, above) in [(true, true), (true, false), (false, true), (false, false)] {
        let cond = ExposureCondition::fractional_q(m, s, opts.q, treated, above);
        let member = cond.members(observed.as_slice(), m);
        let probs = cache.probabilities(&cond);
        let w = Weights::new(&member, &probs)?;
        let point = w.mean(y, opts.estimator).unwrap_or(f64::NAN);
        let mut rep = EstimateReport::new(cond.label.clone(), opts.estimator, point);
        rep.member_count = w.members;
        rep.positivity = opts.positivity.check(&probs);
        rep.replicates = cache.replicates();
        rep.seeds.insert("bootstrap".into(), opts.bootstrap_seed);
        rep.seeds.insert("replicates".into(), cache.master_seed);
        if !w.zero_prob.is_empty() {
            rep.flags.push(format!("excluded-zero-prob:{}", w.zero_prob.len()));
        }
        if point.is_finite() {
            match bootstrap_se(mode, opts.bootstrap, opts.bootstrap_seed, |idx| {
                w.mean_over(y, opts.estimator, idx)
            }) {
                Ok(b) => {
                    rep.se = b.se;
                    rep.bootstrap_draws = Some(b.draws);
                }
                Err(_) => {
                    rep.se = f64::NAN;
                    rep.flags.push("bootstrap-failed".into());
                }
            }
        } else {
            rep.se = f64::NAN;
            rep.flags.push("empty".into());
        }
        cells.push(rep);
    }
    let mut effect = gate_difference(&cells[0], &cells[3])?;
    effect.label = format!("fracq(q={}) effect", opts.q);
    Ok(FracqReport {
        q: opts.q,
        share_dim: observed.schema().dims()[s].to_string(),
        cells,
        effect,
    })
}

impl FracqReport {
    /// Copy without per-cell bootstrap draws.
    pub fn without_draws(&self) -> Self {
        FracqReport {
            cells: self.cells.iter().map(EstimateReport::without_draws).collect(),
            effect: self.effect.without_draws(),
            ..self.clone()
        }
    }
}
