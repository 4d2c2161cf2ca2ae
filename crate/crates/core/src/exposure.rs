//! Monte Carlo exposure probabilities and positivity checks.
//!
//! Replicate representations are built once and cached; every condition
//! is evaluated against the cache. The estimate for unit `i` and
//! condition `R` is `#{b : R_i^(b) in R} / (B + 1)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::graph::Graph;
use crate::motif::{MotifSchema, RepresentationBuilder, SamplingConfig, UniformSource};
use crate::par;
use crate::randomization::RandomizationDesign;
use crate::seeds;

/// Half-open interval `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        self.lo >= other.lo && self.hi <= other.hi
    }
}

/// Axis-aligned box: a product of per-dimension intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub intervals: Vec<Interval>,
}

impl BoxRegion {
    pub fn full(m: usize) -> Self {
        BoxRegion { intervals: vec![Interval::ALL; m] }
    }

    /// A box no vector can enter.
    pub fn empty(m: usize) -> Self {
        BoxRegion {
            intervals: vec![Interval { lo: 1.0, hi: 1.0 }; m],
        }
    }

    #[inline]
    pub fn contains(&self, r: &[f64]) -> bool {
        self.intervals.iter().zip(r).all(|(iv, &x)| iv.contains(x))
    }

    pub fn restrict(&self, dim: usize, iv: Interval) -> Self {
        let mut b = self.clone();
        let cur = b.intervals[dim];
        b.intervals[dim] = Interval {
            lo: cur.lo.max(iv.lo),
            hi: cur.hi.min(iv.hi),
        };
        b
    }

    pub fn is_subset_of(&self, other: &BoxRegion) -> bool {
        self.intervals
            .iter()
            .zip(&other.intervals)
            .all(|(a, b)| a.is_subset_of(b))
    }
}

/// Membership rule for an exposure condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConditionKind {
    Box(BoxRegion),
    /// The `k` units closest to `reference` under weighted L1 distance,
    /// ties broken by lower node index. Membership is evaluated by
    /// ranking within each replicate.
    Nearest {
        reference: Vec<f64>,
        weights: Vec<f64>,
        k: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureCondition {
    pub label: String,
    pub kind: ConditionKind,
}

impl ExposureCondition {
    pub fn boxed(label: impl Into<String>, region: BoxRegion) -> Self {
        ExposureCondition {
            label: label.into(),
            kind: ConditionKind::Box(region),
        }
    }

    pub fn everything(m: usize) -> Self {
        Self::boxed("all", BoxRegion::full(m))
    }

    /// Ego treated (`treated`) or in control, crossed with whether the
    /// smoothed treated-neighbor share in `share_dim` exceeds `q`.
    pub fn fractional_q(m: usize, share_dim: usize, q: f64, treated: bool, above: bool) -> Self {
        let ego = if treated {
            Interval { lo: 0.5, hi: f64::INFINITY }
        } else {
            Interval { lo: f64::NEG_INFINITY, hi: 0.5 }
        };
        let share = if above {
            Interval { lo: q, hi: f64::INFINITY }
        } else {
            Interval { lo: f64::NEG_INFINITY, hi: q }
        };
        let label = format!(
            "Z{}_share{}{q}",
            treated as u8,
            if above { ">" } else { "<=" }
        );
        Self::boxed(label, BoxRegion::full(m).restrict(0, ego).restrict(share_dim, share))
    }

    /// Membership of every unit for one matrix of rows (`N x M`).
    pub fn members(&self, rows: &[f64], m: usize) -> Vec<bool> {
        match &self.kind {
            ConditionKind::Box(b) => rows.chunks(m).map(|r| b.contains(r)).collect(),
            ConditionKind::Nearest { reference, weights, k } => {
                let d: Vec<f64> = rows.chunks(m).map(|r| weighted_l1(weights, reference, r)).collect();
                nearest_members(&d, *k)
            }
        }
    }
}

#[inline]
pub(crate) fn weighted_l1(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * (x - y).abs()).sum()
}

/// The `k` smallest distances, ties at the boundary broken by index.
pub(crate) fn nearest_members(d: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let mut out = vec![false; d.len()];
    for &i in order.iter().take(k) {
        out[i] = true;
    }
    out
}

/// Replicate representations laid out as `[b][i][m]`.
#[derive(Debug, Clone)]
pub struct ReplicateCache {
    n: usize,
    m: usize,
    replicates: usize,
    data: Vec<f64>,
    pub design_tag: String,
    pub master_seed: u64,
}

impl ReplicateCache {
    /// Draw `replicates` assignments from `design` and map each one, with
    /// fresh smoothing draws per replicate.
    pub fn build(
        builder: &RepresentationBuilder<'_>,
        design: &RandomizationDesign,
        replicates: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if replicates == 0 {
            return arg("replicate count must be at least 1");
        }
        let n = builder.node_count();
        if design.n != n {
            return arg(format!("design covers {} units, graph has {n}", design.n));
        }
        let m = builder.schema().len();
        let mut data = vec![0.0; replicates * n * m];
        let failure = std::sync::Mutex::new(None);
        par::for_each_chunk_mut(&mut data, n * m, |b, block| {
            let res = design.replicate(master_seed, b).and_then(|z| {
                let u = UniformSource::Seeded(seeds::derive(master_seed, seeds::stream::UNIFORM, b as u64));
                builder.fill(&z.z, &u, block, None)
            });
            if let Err(e) = res {
                failure.lock().unwrap().get_or_insert(e);
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        Ok(ReplicateCache {
            n,
            m,
            replicates,
            data,
            design_tag: design.tag(),
            master_seed,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dim_count(&self) -> usize {
        self.m
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    /// Representation of unit `i` in replicate `b`.
    #[inline]
    pub fn rep(&self, b: usize, i: usize) -> &[f64] {
        let o = (b * self.n + i) * self.m;
        &self.data[o..o + self.m]
    }

    #[inline]
    pub fn value(&self, b: usize, i: usize, m: usize) -> f64 {
        self.data[(b * self.n + i) * self.m + m]
    }

    /// All rows of replicate `b`.
    pub fn block(&self, b: usize) -> &[f64] {
        &self.data[b * self.n * self.m..(b + 1) * self.n * self.m]
    }

    pub fn heap_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }

    /// Number of replicates in which each unit satisfies `cond`.
    pub fn membership_counts(&self, cond: &ExposureCondition) -> Vec<u32> {
        match &cond.kind {
            ConditionKind::Box(bx) => par::map_range(self.n, |i| {
                (0..self.replicates).filter(|&b| bx.contains(self.rep(b, i))).count() as u32
            }),
            ConditionKind::Nearest { .. } => {
                let per_b = par::map_range(self.replicates, |b| cond.members(self.block(b), self.m));
                let mut counts = vec![0u32; self.n];
                for members in per_b {
                    for (c, hit) in counts.iter_mut().zip(members) {
                        *c += hit as u32;
                    }
                }
                counts
            }
        }
    }

    /// `count / (B + 1)` per unit.
    pub fn probabilities(&self, cond: &ExposureCondition) -> Vec<f64> {
        let denom = (self.replicates + 1) as f64;
        self.membership_counts(cond)
            .into_iter()
            .map(|c| c as f64 / denom)
            .collect()
    }
}

/// Estimated exposure probabilities, one column per condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureProbabilityTable {
    pub labels: Vec<String>,
    /// Row-major `N x K`.
    pub probs: Vec<f64>,
    pub replicates: usize,
    pub design_tag: String,
    pub master_seed: u64,
}

impl ExposureProbabilityTable {
    pub fn from_cache(cache: &ReplicateCache, conditions: &[ExposureCondition]) -> Self {
        let k = conditions.len();
        let cols: Vec<Vec<f64>> = conditions.iter().map(|c| cache.probabilities(c)).collect();
        let mut probs = vec![0.0; cache.n * k];
        for (j, col) in cols.iter().enumerate() {
            for (i, &p) in col.iter().enumerate() {
                probs[i * k + j] = p;
            }
        }
        ExposureProbabilityTable {
            labels: conditions.iter().map(|c| c.label.clone()).collect(),
            probs,
            replicates: cache.replicates,
            design_tag: cache.design_tag.clone(),
            master_seed: cache.master_seed,
        }
    }

    pub fn condition_count(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.probs[i * self.labels.len() + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        let kk = self.labels.len();
        self.probs.iter().skip(k).step_by(kk).copied().collect()
    }

    pub fn write_csv<W: Write>(&self, g: &Graph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["node_id".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        let k = self.labels.len();
        for i in 0..self.probs.len() / k.max(1) {
            let mut rec = vec![g.external_id(i).to_string()];
            rec.extend(self.probs[i * k..(i + 1) * k].iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "B": self.replicates,
            "design": self.design_tag,
            "master_seed": self.master_seed,
            "conditions": self.labels,
        })
    }
}

/// Build the replicate cache and evaluate every condition against it.
pub fn estimate_membership_prob(
    g: &Graph,
    design: &RandomizationDesign,
    schema: &MotifSchema,
    conditions: &[ExposureCondition],
    replicates: usize,
    master_seed: u64,
    sampling: &SamplingConfig,
) -> Result<ExposureProbabilityTable> {
    if replicates == 0 {
        return arg("replicate count must be at least 1");
    }
    for c in conditions {
        if let ConditionKind::Box(b) = &c.kind {
            if b.intervals.len() != schema.len() {
                return Err(Error::Argument(format!(
                    "condition {} has {} intervals, schema has {} dims",
                    c.label,
                    b.intervals.len(),
                    schema.len()
                )));
            }
        }
    }
    let builder = RepresentationBuilder::new(g, schema, sampling)?;
    let cache = ReplicateCache::build(&builder, design, replicates, master_seed)?;
    Ok(ExposureProbabilityTable::from_cache(&cache, conditions))
}

/// Outcome of the positivity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityVerdict {
    pub ok: bool,
    pub violating_fraction: f64,
}

/// Passes when the share of units with probability `<= epsilon` is at
/// most `delta`.
pub fn check_positivity(probs: &[f64], epsilon: f64, delta: f64) -> PositivityVerdict {
    let n = probs.len();
    let bad = probs.iter().filter(|&&p| p <= epsilon).count();
    let violating_fraction = if n == 0 { 1.0 } else { bad as f64 / n as f64 };
    PositivityVerdict {
        ok: n > 0 && violating_fraction <= delta,
        violating_fraction,
    }
}

/// Positivity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for Positivity {
    fn default() -> Self {
        Positivity { epsilon: 0.0, delta: 0.01 }
    }
}

impl Positivity {
    pub fn check(&self, probs: &[f64]) -> PositivityVerdict {
        check_positivity(probs, self.epsilon, self.delta)
    }

    /// Largest replicate count that still counts as a violation, given
    /// `B` replicates: `count / (B+1) <= epsilon`.
    pub(crate) fn count_threshold(&self, replicates: usize) -> i64 {
        let t = (self.epsilon * (replicates + 1) as f64).floor() as i64;
        // guard against floor rounding of exact products
        if ((t + 1) as f64) / ((replicates + 1) as f64) <= self.epsilon {
            t + 1
        } else {
            t
        }
    }
}
