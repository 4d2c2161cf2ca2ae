//! Nearest-neighbor exposure conditions around the all-treated and
//! all-control reference representations, swept over `K`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::estimators::{bootstrap_draws, spread, EstimatorKind, Resample, Weights};
use crate::exposure::{weighted_l1, ConditionKind, ExposureCondition, Positivity, PositivityVerdict, ReplicateCache};
use crate::motif::{ReferenceRepresentations, RepresentationMatrix};
use crate::par;
use crate::randomization::ClusterPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Identical,
    RegressionCoefficients,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricKind::Identical => "identical",
            MetricKind::RegressionCoefficients => "regression",
        })
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identical" | "l1" => Ok(MetricKind::Identical),
            "regression" | "regression-coefficients" | "regcoef" | "coef" => Ok(MetricKind::RegressionCoefficients),
            _ => Err(Error::Argument(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub intercept: f64,
    /// Signed slopes, one per dimension.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    /// Ratio of largest to smallest singular value of the design.
    pub condition_number: f64,
}

/// Weighted L1 distance over representation dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMetric {
    pub kind: MetricKind,
    pub weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostics: Option<FitDiagnostics>,
}

impl DistanceMetric {
    pub fn identical(m: usize) -> Self {
        DistanceMetric {
            kind: MetricKind::Identical,
            weights: vec![1.0; m],
            diagnostics: None,
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted_l1(&self.weights, a, b)
    }
}

/// Unit weights, or `|beta|` from an OLS fit of `y` on the observed
/// representations with an intercept.
pub fn fit_metric(reps: &RepresentationMatrix, y: &[f64], kind: MetricKind) -> Result<DistanceMetric> {
    let (n, m) = (reps.node_count(), reps.dim_count());
    if y.len() != n {
        return arg(format!("{} outcomes for {n} units", y.len()));
    }
    if kind == MetricKind::Identical {
        return Ok(DistanceMetric::identical(m));
    }
    if n <= m + 1 {
        return Err(Error::Fit(format!("regression metric needs more than {} units, got {n}", m + 1)));
    }
    let x = DMatrix::from_fn(n, m + 1, |i, j| if j == 0 { 1.0 } else { reps.get(i, j - 1) });
    let yv = DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(smin > smax * 1e-10) {
        let constant: Vec<String> = (0..m)
            .filter(|&j| {
                let c = reps.get(0, j);
                (0..n).all(|i| reps.get(i, j) == c)
            })
            .map(|j| reps.schema().dims()[j].to_string())
            .collect();
        let hint = if constant.is_empty() {
            "some dimensions are linear combinations of others".to_string()
        } else {
            format!("constant dimensions: {}", constant.join(", "))
        };
        return Err(Error::Fit(format!(
            "representation design is rank deficient ({hint}); remove the redundant dimensions from the schema"
        )));
    }
    let beta = svd
        .solve(&yv, smax * 1e-12)
        .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
    let fitted = &x * &beta;
    let ybar = yv.mean();
    let sst: f64 = yv.iter().map(|v| (v - ybar).powi(2)).sum();
    let sse: f64 = yv.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let coefficients: Vec<f64> = beta.iter().skip(1).copied().collect();
    let weights: Vec<f64> = coefficients.iter().map(|b| b.abs()).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Fit("regression produced non-finite coefficients".into()));
    }
    Ok(DistanceMetric {
        kind,
        weights,
        diagnostics: Some(FitDiagnostics {
            intercept: beta[0],
            coefficients,
            r_squared: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
            condition_number: cond,
        }),
    })
}

/// The `k` units nearest `reference`, as a condition usable on observed
/// and replicate representations alike.
pub fn knn_condition(metric: &DistanceMetric, reference: &[f64], k: usize, label: impl Into<String>) -> ExposureCondition {
    ExposureCondition {
        label: label.into(),
        kind: ConditionKind::Nearest {
            reference: reference.to_vec(),
            weights: metric.weights.clone(),
            k,
        },
    }
}

/// Rank of every unit by distance to `reference`, ties by index.
fn ranks(rows: &[f64], m: usize, metric: &DistanceMetric, reference: &[f64]) -> Vec<u32> {
    let d: Vec<f64> = rows.chunks(m).map(|r| metric.distance(reference, r)).collect();
    let mut order: Vec<u32> = (0..d.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| d[a as usize].total_cmp(&d[b as usize]).then(a.cmp(&b)));
    let mut rank = vec![0u32; d.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i as usize] = pos as u32;
    }
    rank
}

/// First grid position whose `K` admits `rank`; `grid.len()` if none.
#[inline]
fn grid_bin(sorted_grid: &[usize], rank: u32) -> usize {
    sorted_grid.partition_point(|&k| k <= rank as usize)
}

/// Replicate counts of `rank < K` for every unit and every `K` in
/// `sorted_grid`, laid out `[i][g]`.
fn grid_counts(cache: &ReplicateCache, metric: &DistanceMetric, reference: &[f64], sorted_grid: &[usize]) -> Vec<u32> {
    let (n, m, reps) = (cache.node_count(), cache.dim_count(), cache.replicates());
    let g = sorted_grid.len();
    let mut hist = vec![0u32; n * (g + 1)];
    let chunk = (par::current_threads() * 4).max(8);
    let mut start = 0;
    while start < reps {
        let end = (start + chunk).min(reps);
        let bins: Vec<Vec<u8>> = par::map_range(end - start, |off| {
            ranks(cache.block(start + off), m, metric, reference)
                .into_iter()
                .map(|r| grid_bin(sorted_grid, r) as u8)
                .collect()
        });
        for b in bins {
            for (i, bin) in b.into_iter().enumerate() {
                hist[i * (g + 1) + bin as usize] += 1;
            }
        }
        start = end;
    }
    // cumulative over the grid: rank < K_g for every bin up to g
    let mut counts = vec![0u32; n * g];
    for i in 0..n {
        let mut acc = 0;
        for j in 0..g {
            acc += hist[i * (g + 1) + j];
            counts[i * g + j] = acc;
        }
    }
    counts
}

/// One `K` of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub k_over_n: f64,
    pub mu1: f64,
    pub se1: f64,
    pub positivity_ok_1: bool,
    pub mu0: f64,
    pub se0: f64,
    pub positivity_ok_0: bool,
    pub tau: f64,
    pub se_tau: f64,
    pub violating_fraction_1: f64,
    pub violating_fraction_0: f64,
    /// Members dropped for having estimated probability 0.
    pub excluded_1: usize,
    pub excluded_0: usize,
}

impl KSweepRow {
    pub fn passes(&self) -> bool {
        self.positivity_ok_1 && self.positivity_ok_0 && self.tau.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_grid: Vec<usize>,
    pub positivity: Positivity,
    pub estimator: EstimatorKind,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
}

impl SweepConfig {
    pub fn new(k_grid: Vec<usize>) -> Self {
        SweepConfig {
            k_grid,
            positivity: Positivity::default(),
            estimator: EstimatorKind::Hajek,
            bootstrap: 500,
            bootstrap_seed: 0,
        }
    }
}

/// `{1, 2, 5, 10, 20, 50}%` of `n`, rounded, at least 1, deduplicated.
pub fn default_k_grid(n: usize) -> Vec<usize> {
    k_grid_from_fractions(n, &[0.01, 0.02, 0.05, 0.10, 0.20, 0.50])
}

pub fn k_grid_from_fractions(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * n as f64).round() as usize).clamp(1, n.max(1)))
        .collect();
    out.dedup();
    out
}

pub struct SweepData<'a> {
    pub observed: &'a RepresentationMatrix,
    pub y: &'a [f64],
    pub cache: &'a ReplicateCache,
    pub clusters: Option<&'a ClusterPartition>,
}

/// Estimate both reference conditions for every `K` in the grid.
///
/// Probabilities for the whole grid come from one ranking pass per
/// replicate. Both arms share each bootstrap resample, so `se_tau` comes
/// from paired differences.
pub fn sweep_k(
    data: &SweepData<'_>,
    metric: &DistanceMetric,
    refs: &ReferenceRepresentations,
    cfg: &SweepConfig,
) -> Result<Vec<KSweepRow>> {
    let n = data.observed.node_count();
    let m = data.observed.dim_count();
    if data.y.len() != n || data.cache.node_count() != n {
        return arg("representations, outcomes and replicate cache cover different unit counts");
    }
    if data.cache.dim_count() != m || metric.weights.len() != m || refs.r1.len() != m {
        return arg("metric, references and representations disagree on dimension count");
    }
    if cfg.k_grid.is_empty() {
        return arg("K grid is empty");
    }
    if let Some(&k) = cfg.k_grid.iter().find(|&&k| k == 0 || k > n) {
        return arg(format!("K = {k} outside 1..={n}"));
    }
    if cfg.k_grid.len() > 250 {
        return arg("K grid is limited to 250 values");
    }
    let mut sorted = cfg.k_grid.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let g = sorted.len();

    let (c1, c0) = par::join(
        || grid_counts(data.cache, metric, &refs.r1, &sorted),
        || grid_counts(data.cache, metric, &refs.r0, &sorted),
    );
    let obs = data.observed.as_slice();
    let (rank1, rank0) = (ranks(obs, m, metric, &refs.r1), ranks(obs, m, metric, &refs.r0));
    let denom = (data.cache.replicates() + 1) as f64;

    let arm = |counts: &[u32], rank: &[u32], j: usize, k: usize| -> Result<(Weights, PositivityVerdict)> {
        let probs: Vec<f64> = (0..n).map(|i| counts[i * g + j] as f64 / denom).collect();
        let member: Vec<bool> = rank.iter().map(|&r| (r as usize) < k).collect();
        Ok((Weights::new(&member, &probs)?, cfg.positivity.check(&probs)))
    };

    let mode = match data.clusters {
        Some(p) => Resample::Cluster(p),
        None => Resample::Unit(n),
    };
    let mut rows = Vec::with_capacity(cfg.k_grid.len());
    for &k in &cfg.k_grid {
        let j = sorted.binary_search(&k).expect("grid value present");
        let (w1, v1) = arm(&c1, &rank1, j, k)?;
        let (w0, v0) = arm(&c0, &rank0, j, k)?;
        let mu1 = w1.mean(data.y, cfg.estimator).unwrap_or(f64::NAN);
        let mu0 = w0.mean(data.y, cfg.estimator).unwrap_or(f64::NAN);
        let (se1, se0, se_tau) = if mu1.is_finite() && mu0.is_finite() {
            let draws = bootstrap_draws(mode, cfg.bootstrap, cfg.bootstrap_seed, |idx| {
                Ok((
                    w1.mean_over(data.y, cfg.estimator, idx)?,
                    w0.mean_over(data.y, cfg.estimator, idx)?,
                ))
            });
            match draws {
                Ok(d) => {
                    let ok: Vec<(f64, f64)> = d.into_iter().flatten().collect();
                    let a: Vec<f64> = ok.iter().map(|p| p.0).collect();
                    let b: Vec<f64> = ok.iter().map(|p| p.1).collect();
                    let t: Vec<f64> = ok.iter().map(|p| p.0 - p.1).collect();
                    (spread(&a), spread(&b), spread(&t))
                }
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            }
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        rows.push(KSweepRow {
            k,
            k_over_n: k as f64 / n as f64,
            mu1,
            se1,
            positivity_ok_1: v1.ok,
            mu0,
            se0,
            positivity_ok_0: v0.ok,
            tau: mu1 - mu0,
            se_tau,
            violating_fraction_1: v1.violating_fraction,
            violating_fraction_0: v0.violating_fraction,
            excluded_1: w1.zero_prob.len(),
            excluded_0: w0.zero_prob.len(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    /// Interference never lowers outcomes: pick the largest effect.
    NonNegative,
    /// Interference never raises outcomes: pick the smallest effect.
    NonPositive,
}

impl std::str::FromStr for Assumption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nonnegative" | "non-negative" | "positive" => Ok(Assumption::NonNegative),
            "nonpositive" | "non-positive" | "negative" => Ok(Assumption::NonPositive),
            _ => Err(Error::Argument(format!("unknown assumption {s:?}"))),
        }
    }
}

/// Choose a row among those passing positivity (and `se_cap`): the
/// extreme effect in the assumed direction, ties to the smaller `K`.
pub fn select_estimate(rows: &[KSweepRow], assumption: Assumption, se_cap: Option<f64>) -> Result<KSweepRow> {
    let mut best: Option<&KSweepRow> = None;
    for r in rows {
        if !r.passes() || se_cap.is_some_and(|cap| !(r.se_tau <= cap)) {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let (x, y) = match assumption {
                    Assumption::NonNegative => (r.tau, b.tau),
                    Assumption::NonPositive => (b.tau, r.tau),
                };
                x > y || (x == y && r.k < b.k)
            }
        };
        if better {
            best = Some(r);
        }
    }
    best.cloned().ok_or_else(|| {
        let verdicts: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "K={} pos1={} ({:.3}) pos0={} ({:.3}) se_tau={:.4}",
                    r.k, r.positivity_ok_1, r.violating_fraction_1, r.positivity_ok_0, r.violating_fraction_0, r.se_tau
                )
            })
            .collect();
        Error::Selection(format!("no K passes the filters: {}", verdicts.join("; ")))
    })
}

pub const SWEEP_HEADER: &str = "K,K_over_N,mu1,se1,pos1,mu0,se0,pos0,tau,se_tau";

pub fn write_sweep_csv<W: Write>(rows: &[KSweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k, r.k_over_n, r.mu1, r.se1, r.positivity_ok_1, r.mu0, r.se0, r.positivity_ok_0, r.tau, r.se_tau
        )?;
    }
    Ok(())
}
