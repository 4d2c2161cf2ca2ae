//! Honest recursive partitioning over the replicate cache.
//!
//! For a node box and a dimension, every candidate threshold is scored
//! in one ascending sweep. The sweep keeps, per training unit, how many
//! of its in-box replicates fall at or below the threshold, which gives
//! both child probabilities, the positivity counts and the weighted sums
//! behind each score in O(1) per event.

use rand::seq::SliceRandom;

use super::{Leaf, ScoreKind, ThresholdMode, TreeHyperparams, TreeNode};
use crate::error::{Error, Result};
use crate::estimators::{bootstrap_draws, Resample, Weights};
use crate::exposure::{BoxRegion, Interval, ReplicateCache};
use crate::motif::RepresentationMatrix;
use crate::par;
use crate::seeds;

/// Random honest split: `(training, estimation)` index lists.
pub fn honest_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, seeds::stream::HONEST_SPLIT, 0));
    let k = ((n as f64) * fraction).round() as usize;
    let mut train = order[..k.min(n)].to_vec();
    let mut est = order[k.min(n)..].to_vec();
    train.sort_unstable();
    est.sort_unstable();
    (train, est)
}

/// Fixed-size bitset over `(training unit, replicate)` slots.
#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn full(len: usize) -> Self {
        let mut v = vec![u64::MAX; len.div_ceil(64)];
        if len % 64 != 0 {
            *v.last_mut().unwrap() = (1u64 << (len % 64)) - 1;
        }
        Bits(v)
    }

    #[inline]
    fn get(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1u64 << (i % 64));
    }
}

pub(super) struct Fitter<'a> {
    cache: &'a ReplicateCache,
    observed: &'a RepresentationMatrix,
    y: &'a [f64],
    params: &'a TreeHyperparams,
    train: &'a [usize],
    /// Per dimension, training slots `t * B + b` ordered by replicate value.
    order: Vec<Vec<u32>>,
    thr: i64,
}

#[derive(Clone, Copy)]
struct Candidate {
    dim: usize,
    theta: f64,
    score: f64,
}

impl Candidate {
    fn better_than(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.score > o.score
                    || (self.score == o.score && (self.dim, self.theta) < (o.dim, o.theta))
            }
        }
    }
}

/// Incremental sums over one side of a split.
#[derive(Default, Clone, Copy)]
struct Side {
    w: f64,
    wy: f64,
    wyy: f64,
    w2: f64,
    w2y: f64,
    w2yy: f64,
    n: usize,
}

impl Side {
    #[inline]
    fn add(&mut self, w: f64, y: f64, sign: f64) {
        self.w += sign * w;
        self.wy += sign * w * y;
        self.wyy += sign * w * y * y;
        let w2 = w * w;
        self.w2 += sign * w2;
        self.w2y += sign * w2 * y;
        self.w2yy += sign * w2 * y * y;
    }

    fn mean(&self) -> f64 {
        self.wy / self.w
    }

    fn wsse(&self) -> f64 {
        (self.wyy - self.wy * self.wy / self.w).max(0.0)
    }

    /// Plug-in variance of the Hájek mean.
    fn var(&self) -> f64 {
        let mu = self.mean();
        let s = self.w2yy - 2.0 * mu * self.w2y + mu * mu * self.w2;
        (s / (self.w * self.w)).max(0.0)
    }
}

impl<'a> Fitter<'a> {
    pub(super) fn new(
        cache: &'a ReplicateCache,
        observed: &'a RepresentationMatrix,
        y: &'a [f64],
        params: &'a TreeHyperparams,
        train: &'a [usize],
    ) -> Self {
        let b = cache.replicates();
        let m = cache.dim_count();
        let order = par::map_range(m, |dim| {
            let mut keyed: Vec<(f64, u32)> = Vec::with_capacity(train.len() * b);
            for (t, &i) in train.iter().enumerate() {
                for r in 0..b {
                    keyed.push((cache.value(r, i, dim), (t * b + r) as u32));
                }
            }
            keyed.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            keyed.into_iter().map(|(_, s)| s).collect()
        });
        Fitter {
            cache,
            observed,
            y,
            params,
            train,
            order,
            thr: params.positivity.count_threshold(b),
        }
    }

    pub(super) fn grow(&self) -> TreeNode {
        let members: Vec<u32> = (0..self.train.len() as u32).collect();
        let bits = Bits::full(self.train.len() * self.cache.replicates());
        self.grow_node(BoxRegion::full(self.cache.dim_count()), members, bits, 0)
    }

    fn grow_node(&self, region: BoxRegion, members: Vec<u32>, bits: Bits, depth: usize) -> TreeNode {
        let n_train = members.len();
        let stop = self.params.max_depth.is_some_and(|d| depth >= d) || n_train < 2 * self.params.kappa;
        let best = if stop { None } else { self.best_split(&members, &bits) };
        let Some(c) = best else {
            return TreeNode::Leaf(Leaf::pending(region, n_train));
        };

        let (mut lm, mut rm) = (Vec::new(), Vec::new());
        for &t in &members {
            if self.observed.get(self.train[t as usize], c.dim) <= c.theta {
                lm.push(t);
            } else {
                rm.push(t);
            }
        }
        let b = self.cache.replicates();
        let (mut lb, mut rb) = (bits.clone(), bits);
        for t in 0..self.train.len() {
            let i = self.train[t];
            for r in 0..b {
                let s = t * b + r;
                if lb.get(s) {
                    if self.cache.value(r, i, c.dim) <= c.theta {
                        rb.clear(s);
                    } else {
                        lb.clear(s);
                    }
                }
            }
        }
        let lr = region.restrict(c.dim, Interval { lo: f64::NEG_INFINITY, hi: c.theta });
        let rr = region.restrict(c.dim, Interval { lo: c.theta, hi: f64::INFINITY });
        let (left, right) = par::join(
            || self.grow_node(lr, lm, lb, depth + 1),
            || self.grow_node(rr, rm, rb, depth + 1),
        );
        TreeNode::Split {
            dim: c.dim,
            theta: c.theta,
            score: c.score,
            n_train,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn best_split(&self, members: &[u32], bits: &Bits) -> Option<Candidate> {
        let b = self.cache.replicates();
        let nt = self.train.len();
        let mut in_box = vec![0u32; nt];
        for (t, c) in in_box.iter_mut().enumerate() {
            *c = (0..b).filter(|&r| bits.get(t * b + r)).count() as u32;
        }
        let mean = members.iter().map(|&t| self.y[self.train[t as usize]]).sum::<f64>() / members.len() as f64;
        let per_dim = par::map_range(self.cache.dim_count(), |dim| self.sweep(dim, members, bits, &in_box, mean));
        per_dim
            .into_iter()
            .flatten()
            .fold(None, |best, c| if c.better_than(&best) { Some(c) } else { best })
    }

    fn thresholds(&self, sorted_obs: &[(f64, u32)]) -> Vec<f64> {
        let mut vals: Vec<f64> = sorted_obs.iter().map(|x| x.0).collect();
        vals.dedup();
        // the largest value would leave the right child empty
        vals.pop();
        match self.params.threshold_mode {
            ThresholdMode::AllObserved => vals,
            ThresholdMode::Quantiles(q) if vals.len() > q && q > 0 => {
                let mut out: Vec<f64> = (1..=q).map(|k| vals[(k * (vals.len() - 1)) / q]).collect();
                out.dedup();
                out
            }
            ThresholdMode::Quantiles(_) => vals,
        }
    }

    fn sweep(&self, dim: usize, members: &[u32], bits: &Bits, in_box: &[u32], mean: f64) -> Option<Candidate> {
        let b = self.cache.replicates();
        let nt = self.train.len();
        let scale = (b + 1) as f64;
        let thr = self.thr;
        let kappa = self.params.kappa;
        let delta = self.params.positivity.delta;

        let mut sorted_obs: Vec<(f64, u32)> = members
            .iter()
            .map(|&t| (self.observed.get(self.train[t as usize], dim), t))
            .collect();
        sorted_obs.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let cands = self.thresholds(&sorted_obs);
        if cands.is_empty() {
            return None;
        }

        // 0 = not a member, 1 = right, 2 = left
        let mut side = vec![0u8; nt];
        let yc: Vec<f64> = (0..nt).map(|t| self.y[self.train[t]] - mean).collect();
        let mut below = vec![0u32; nt];
        let mut left = Side::default();
        let mut right = Side::default();
        let mut parent = Side::default();
        for &t in members {
            let t = t as usize;
            side[t] = 1;
            right.n += 1;
            if in_box[t] > 0 {
                let w = scale / in_box[t] as f64;
                right.add(w, yc[t], 1.0);
                parent.add(w, yc[t], 1.0);
            }
        }
        let mut viol_left = nt as i64;
        let mut viol_right = in_box.iter().filter(|&&c| (c as i64) <= thr).count() as i64;
        let parent_wsse = if parent.w > 0.0 { parent.wsse() } else { 0.0 };

        let order = &self.order[dim];
        let mut rp = 0;
        let mut op = 0;
        let mut best: Option<Candidate> = None;
        let weight = |c: u32| if c > 0 { Some(scale / c as f64) } else { None };

        for &theta in &cands {
            while rp < order.len() {
                let s = order[rp] as usize;
                let (t, r) = (s / b, s % b);
                if self.cache.value(r, self.train[t], dim) > theta {
                    break;
                }
                rp += 1;
                if !bits.get(s) {
                    continue;
                }
                let old_l = below[t];
                let old_r = in_box[t] - old_l;
                below[t] += 1;
                if old_l as i64 == thr {
                    viol_left -= 1;
                }
                if old_r as i64 == thr + 1 {
                    viol_right += 1;
                }
                match side[t] {
                    2 => {
                        if let Some(w) = weight(old_l) {
                            left.add(w, yc[t], -1.0);
                        }
                        left.add(scale / below[t] as f64, yc[t], 1.0);
                    }
                    1 => {
                        if let Some(w) = weight(old_r) {
                            right.add(w, yc[t], -1.0);
                        }
                        if let Some(w) = weight(old_r - 1) {
                            right.add(w, yc[t], 1.0);
                        }
                    }
                    _ => {}
                }
            }
            while op < sorted_obs.len() && sorted_obs[op].0 <= theta {
                let t = sorted_obs[op].1 as usize;
                op += 1;
                if let Some(w) = weight(in_box[t] - below[t]) {
                    right.add(w, yc[t], -1.0);
                }
                if let Some(w) = weight(below[t]) {
                    left.add(w, yc[t], 1.0);
                }
                right.n -= 1;
                left.n += 1;
                side[t] = 2;
            }

            if left.n < kappa || right.n < kappa {
                continue;
            }
            if viol_left as f64 > delta * nt as f64 || viol_right as f64 > delta * nt as f64 {
                continue;
            }
            if left.w <= 0.0 || right.w <= 0.0 {
                continue;
            }
            let score = match self.params.score {
                ScoreKind::TStat => {
                    let diff = (left.mean() - right.mean()).abs();
                    let var = left.var() + right.var();
                    if var > 0.0 {
                        diff / var.sqrt()
                    } else if diff > 0.0 {
                        f64::MAX
                    } else {
                        0.0
                    }
                }
                ScoreKind::Wsse => {
                    let (nl, nr) = (left.n as f64, right.n as f64);
                    parent_wsse - (nl * left.wsse() + nr * right.wsse()) / (nl + nr)
                }
            };
            // a zero score carries no information, whatever gamma is
            if !(score >= self.params.gamma && score > 0.0) {
                continue;
            }
            let c = Candidate { dim, theta, score };
            if c.better_than(&best) {
                best = Some(c);
            }
        }
        best
    }
}

/// Fill leaf estimates from the estimation set. Leaves get labels in
/// depth-first order and share one bootstrap stream so their draws pair
/// up across leaves.
pub(super) fn estimate_leaves(
    root: &mut TreeNode,
    cache: &ReplicateCache,
    observed: &RepresentationMatrix,
    y: &[f64],
    est: &[usize],
    params: &TreeHyperparams,
    groups: Option<&[Vec<usize>]>,
) -> Result<()> {
    let mut leaves: Vec<&mut Leaf> = Vec::new();
    root.collect_leaves_mut(&mut leaves);
    let denom = (cache.replicates() + 1) as f64;
    let ne = est.len();

    let mut weights = Vec::with_capacity(leaves.len());
    for (k, leaf) in leaves.iter_mut().enumerate() {
        leaf.label = format!("leaf{k}");
        let member: Vec<bool> = est.iter().map(|&i| leaf.region.contains(observed.row(i))).collect();
        let probs: Vec<f64> = par::map_range(ne, |p| {
            let i = est[p];
            (0..cache.replicates())
                .filter(|&b| leaf.region.contains(cache.rep(b, i)))
                .count() as f64
                / denom
        });
        let w = Weights::new(&member, &probs)?;
        leaf.n_est = member.iter().filter(|&&m| m).count();
        leaf.excluded_zero_prob = w.zero_prob.len();
        if w.members == 0 {
            return Err(Error::Fit(format!(
                "leaf {} has no estimation units with positive probability; \
                 raise honest_fraction's complement or kappa",
                leaf.label
            )));
        }
        leaf.positivity = params.positivity.check(&probs);
        weights.push(w);
    }

    let ye: Vec<f64> = est.iter().map(|&i| y[i]).collect();
    let all: Vec<usize> = (0..ne).collect();
    for (leaf, w) in leaves.iter_mut().zip(&weights) {
        leaf.mu = w.mean_over(&ye, params.estimator, &all)?;
    }

    let mode = match groups {
        Some(g) => Resample::Groups(g),
        None => Resample::Unit(ne),
    };
    let draws = bootstrap_draws(mode, params.bootstrap, params.bootstrap_seed, |idx| {
        Ok(weights
            .iter()
            .map(|w| w.mean_over(&ye, params.estimator, idx).unwrap_or(f64::NAN))
            .collect::<Vec<f64>>())
    })?;
    for (k, leaf) in leaves.iter_mut().enumerate() {
        let d: Vec<f64> = draws
            .iter()
            .map(|o| o.as_ref().map_or(f64::NAN, |v| v[k]))
            .collect();
        let ok: Vec<f64> = d.iter().copied().filter(|x| x.is_finite()).collect();
        if ok.len() * 10 < d.len() * 9 {
            return Err(Error::Fit(format!(
                "leaf {} is empty in {} of {} bootstrap resamples",
                leaf.label,
                d.len() - ok.len(),
                d.len()
            )));
        }
        leaf.se = crate::estimators::spread(&ok);
        leaf.draws = d;
    }
    Ok(())
}
