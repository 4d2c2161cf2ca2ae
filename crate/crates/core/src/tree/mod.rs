//! Honest exposure trees: axis-aligned partitions of the representation
//! space whose leaves serve as exposure conditions.

mod fit;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use fit::honest_split;

use crate::error::{Error, Result};
use crate::estimators::{gate_difference, EstimateReport, EstimatorKind, FLAG_GATE_DEGENERATE};
use crate::exposure::{BoxRegion, Positivity, PositivityVerdict, ReplicateCache};
use crate::motif::{MotifSchema, ReferenceRepresentations, RepresentationMatrix};
use crate::randomization::ClusterPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    /// Absolute difference of child means over its standard error.
    TStat,
    /// Reduction in weighted sum of squared errors.
    Wsse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// Every distinct observed training value.
    AllObserved,
    /// At most this many evenly spaced order statistics.
    Quantiles(usize),
}

impl ThresholdMode {
    /// Scan every value up to 20,000 units, 256 quantiles above.
    pub fn for_size(n: usize) -> Self {
        if n <= 20_000 {
            ThresholdMode::AllObserved
        } else {
            ThresholdMode::Quantiles(256)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHyperparams {
    pub score: ScoreKind,
    /// Minimum score for a split.
    pub gamma: f64,
    /// Minimum training units per child.
    pub kappa: usize,
    pub positivity: Positivity,
    /// Share of units used to choose splits.
    pub honest_fraction: f64,
    pub max_depth: Option<usize>,
    pub threshold_mode: ThresholdMode,
    /// Estimator for leaf means.
    pub estimator: EstimatorKind,
    /// Bootstrap draws for leaf standard errors.
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
}

impl TreeHyperparams {
    /// Defaults with an explicit `gamma`.
    pub fn new(score: ScoreKind, gamma: f64, kappa: usize) -> Self {
        TreeHyperparams {
            score,
            gamma,
            kappa,
            positivity: Positivity::default(),
            honest_fraction: 0.5,
            max_depth: None,
            threshold_mode: ThresholdMode::AllObserved,
            estimator: EstimatorKind::Hajek,
            bootstrap: 500,
            bootstrap_seed: 0,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::Argument("gamma must be non-negative".into()));
        }
        if self.kappa < 2 {
            return Err(Error::Argument("kappa must be at least 2".into()));
        }
        if !(self.honest_fraction > 0.0 && self.honest_fraction < 1.0) {
            return Err(Error::Argument("honest_fraction must lie in (0,1)".into()));
        }
        if self.bootstrap < 2 {
            return Err(Error::Argument("at least 2 bootstrap draws are required".into()));
        }
        Ok(())
    }
}

/// A leaf: one exposure condition with its estimation-set mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub label: String,
    pub region: BoxRegion,
    pub mu: f64,
    pub se: f64,
    pub n_train: usize,
    pub n_est: usize,
    /// Estimation members dropped for having probability 0.
    pub excluded_zero_prob: usize,
    /// Positivity over estimation units.
    pub positivity: PositivityVerdict,
    #[serde(skip)]
    pub draws: Vec<f64>,
}

impl Leaf {
    fn pending(region: BoxRegion, n_train: usize) -> Self {
        Leaf {
            label: String::new(),
            region,
            mu: f64::NAN,
            se: f64::NAN,
            n_train,
            n_est: 0,
            excluded_zero_prob: 0,
            positivity: PositivityVerdict { ok: true, violating_fraction: 0.0 },
            draws: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        dim: usize,
        theta: f64,
        score: f64,
        n_train: usize,
        /// `r[dim] <= theta`.
        left: Box<TreeNode>,
        /// `r[dim] > theta`.
        right: Box<TreeNode>,
    },
    Leaf(Leaf),
}

impl TreeNode {
    fn collect_leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Leaf>) {
        match self {
            TreeNode::Leaf(l) => out.push(l),
            TreeNode::Split { left, right, .. } => {
                left.collect_leaves_mut(out);
                right.collect_leaves_mut(out);
            }
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            TreeNode::Leaf(l) => out.push(l),
            TreeNode::Split { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Structure without estimates, for comparing fits.
    pub fn shape(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        self.shape_into(0, &mut out);
        out
    }

    fn shape_into(&self, depth: usize, out: &mut Vec<(usize, usize, f64)>) {
        if let TreeNode::Split { dim, theta, left, right, .. } = self {
            out.push((depth, *dim, *theta));
            left.shape_into(depth + 1, out);
            right.shape_into(depth + 1, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureTree {
    pub root: TreeNode,
    pub schema: MotifSchema,
    pub params: TreeHyperparams,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_est: usize,
}

/// Inputs shared by the fitting entry points.
pub struct TreeData<'a> {
    pub observed: &'a RepresentationMatrix,
    pub y: &'a [f64],
    pub cache: &'a ReplicateCache,
    /// Resample clusters instead of units for leaf standard errors.
    pub clusters: Option<&'a ClusterPartition>,
}

impl TreeData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.observed.node_count();
        if self.y.len() != n || self.cache.node_count() != n {
            return Err(Error::Argument(format!(
                "representations ({n}), outcomes ({}) and replicate cache ({}) disagree",
                self.y.len(),
                self.cache.node_count()
            )));
        }
        if self.cache.dim_count() != self.observed.dim_count() {
            return Err(Error::Argument("replicate cache and representations use different schemas".into()));
        }
        Ok(())
    }
}

/// Fit with a random honest split drawn from `split_seed`.
pub fn fit_tree(data: &TreeData<'_>, params: &TreeHyperparams, split_seed: u64) -> Result<ExposureTree> {
    params.check()?;
    data.check()?;
    let (train, est) = honest_split(data.observed.node_count(), params.honest_fraction, split_seed);
    fit_tree_with_split(data, params, &train, &est, split_seed)
}

/// Fit with explicit training and estimation sets.
pub fn fit_tree_with_split(
    data: &TreeData<'_>,
    params: &TreeHyperparams,
    train: &[usize],
    est: &[usize],
    split_seed: u64,
) -> Result<ExposureTree> {
    params.check()?;
    data.check()?;
    if train.is_empty() || est.is_empty() {
        return Err(Error::Fit("training and estimation sets must both be non-empty".into()));
    }
    let fitter = fit::Fitter::new(data.cache, data.observed, data.y, params, train);
    let mut root = fitter.grow();
    drop(fitter);

    let groups = data.clusters.map(|p| {
        let mut pos = vec![Vec::new(); p.cluster_count];
        for (k, &i) in est.iter().enumerate() {
            pos[p.cluster_of[i] as usize].push(k);
        }
        pos.retain(|g| !g.is_empty());
        pos
    });
    fit::estimate_leaves(&mut root, data.cache, data.observed, data.y, est, params, groups.as_deref())?;
    Ok(ExposureTree {
        root,
        schema: data.observed.schema().clone(),
        params: params.clone(),
        split_seed,
        n_train: train.len(),
        n_est: est.len(),
    })
}

impl ExposureTree {
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Leaf containing `r`; comparisons `r[dim] <= theta` go left.
    pub fn assign_leaf(&self, r: &[f64]) -> &Leaf {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(l) => return l,
                TreeNode::Split { dim, theta, left, right, .. } => {
                    node = if r[*dim] <= *theta { left } else { right };
                }
            }
        }
    }

    /// Estimate for the leaf containing `r`.
    pub fn leaf_report(&self, r: &[f64], label: &str) -> EstimateReport {
        let leaf = self.assign_leaf(r);
        let mut rep = EstimateReport::new(format!("{label}:{}", leaf.label), self.params.estimator, leaf.mu);
        rep.se = leaf.se;
        rep.bootstrap_draws = Some(leaf.draws.clone());
        rep.member_count = leaf.n_est;
        rep.positivity = leaf.positivity;
        rep.seeds.insert("bootstrap".into(), self.params.bootstrap_seed);
        rep.seeds.insert("split".into(), self.split_seed);
        rep
    }

    /// `mu(leaf(r1)) - mu(leaf(r0))` with a paired bootstrap SE. When both
    /// references share a leaf the result is 0 and flagged.
    pub fn gate_effect(&self, refs: &ReferenceRepresentations) -> Result<EstimateReport> {
        let a = self.leaf_report(&refs.r1, "treated");
        let b = self.leaf_report(&refs.r0, "control");
        let mut out = gate_difference(&a, &b)?;
        out.label = format!("tree gate {} - {}", self.assign_leaf(&refs.r1).label, self.assign_leaf(&refs.r0).label);
        if std::ptr::eq(self.assign_leaf(&refs.r1), self.assign_leaf(&refs.r0)) {
            out.point = 0.0;
            out.se = 0.0;
            out.flags.push(FLAG_GATE_DEGENERATE.into());
        }
        Ok(out)
    }

    /// Nested `{dim, theta, left, right}` / `{leaf_label, mu, se, n_train, n_est}`.
    pub fn to_json(&self) -> Value {
        fn node(n: &TreeNode, codes: &[String]) -> Value {
            match n {
                TreeNode::Leaf(l) => json!({
                    "leaf_label": l.label,
                    "mu": l.mu,
                    "se": l.se,
                    "n_train": l.n_train,
                    "n_est": l.n_est,
                    "excluded_zero_prob": l.excluded_zero_prob,
                    "positivity": l.positivity,
                }),
                TreeNode::Split { dim, theta, score, n_train, left, right } => json!({
                    "dim": dim,
                    "dim_code": codes[*dim],
                    "theta": theta,
                    "score": score,
                    "n_train": n_train,
                    "left": node(left, codes),
                    "right": node(right, codes),
                }),
            }
        }
        node(&self.root, &self.schema.codes())
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        fn walk(n: &TreeNode, codes: &[String], next: &mut usize, out: &mut String) -> usize {
            let id = *next;
            *next += 1;
            match n {
                TreeNode::Leaf(l) => {
                    let _ = writeln!(
                        out,
                        "  n{id} [shape=box, label=\"{}\\n{:.3} ± {:.3}\\nn_est={}\"];",
                        l.label, l.mu, l.se, l.n_est
                    );
                }
                TreeNode::Split { dim, theta, left, right, .. } => {
                    let _ = writeln!(out, "  n{id} [label=\"{}\"];", codes[*dim]);
                    let l = walk(left, codes, next, out);
                    let r = walk(right, codes, next, out);
                    let _ = writeln!(out, "  n{id} -> n{l} [label=\"≤ {theta:.4}\"];");
                    let _ = writeln!(out, "  n{id} -> n{r} [label=\"> {theta:.4}\"];");
                }
            }
            id
        }
        let mut out = String::from("digraph exposure_tree {\n");
        walk(&self.root, &self.schema.codes(), &mut 0, &mut out);
        out.push_str("}\n");
        out
    }

    /// Indented text rendering.
    pub fn to_ascii(&self) -> String {
        fn walk(n: &TreeNode, codes: &[String], depth: usize, out: &mut String) {
            let pad = "  ".repeat(depth);
            match n {
                TreeNode::Leaf(l) => {
                    let _ = writeln!(out, "{pad}{}: mu={:.4} se={:.4} n_est={}", l.label, l.mu, l.se, l.n_est);
                }
                TreeNode::Split { dim, theta, left, right, .. } => {
                    let _ = writeln!(out, "{pad}{} <= {theta:.4}", codes[*dim]);
                    walk(left, codes, depth + 1, out);
                    let _ = writeln!(out, "{pad}{} > {theta:.4}", codes[*dim]);
                    walk(right, codes, depth + 1, out);
                }
            }
        }
        let mut out = String::new();
        walk(&self.root, &self.schema.codes(), 0, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::ReplicateCache;
    use crate::graph::Graph;
    use crate::motif::{reference_representations, RepresentationBuilder, SamplingConfig, UniformSource};
    use crate::randomization::RandomizationDesign;
    use rand::Rng;

    fn lattice(n: usize, half: usize) -> Graph {
        let mut e = Vec::new();
        for i in 0..n {
            for d in 1..=half {
                e.push((i, (i + d) % n));
            }
        }
        Graph::from_edges(n, &e).unwrap().0
    }

    struct Fixture {
        g: Graph,
        schema: MotifSchema,
    }

    impl Fixture {
        fn new(n: usize) -> Self {
            Fixture {
                g: lattice(n, 3),
                schema: MotifSchema::parse("Z,2-1,3c-2").unwrap(),
            }
        }

        fn run(&self, seed: u64, y_of: impl Fn(&[f64]) -> f64, params: &TreeHyperparams) -> ExposureTree {
            let b = RepresentationBuilder::new(&self.g, &self.schema, &SamplingConfig::default()).unwrap();
            let design = RandomizationDesign::bernoulli(self.g.node_count(), 0.5).unwrap();
            let z = design.assign(seed).unwrap();
            let obs = b.build(&z.z, UniformSource::Seeded(seed + 1)).unwrap();
            let cache = ReplicateCache::build(&b, &design, 60, seed + 2).unwrap();
            let mut rng = crate::seeds::rng(seed, 99, 0);
            let y: Vec<f64> = (0..self.g.node_count())
                .map(|i| y_of(obs.row(i)) + 0.1 * (rng.random::<f64>() - 0.5))
                .collect();
            let data = TreeData { observed: &obs, y: &y, cache: &cache, clusters: None };
            fit_tree(&data, params, seed).unwrap()
        }
    }

    #[test]
    fn constant_outcome_single_leaf() {
        let f = Fixture::new(300);
        let p = TreeHyperparams::new(ScoreKind::TStat, 1.96, 10);
        let b = RepresentationBuilder::new(&f.g, &f.schema, &SamplingConfig::default()).unwrap();
        let design = RandomizationDesign::bernoulli(300, 0.5).unwrap();
        let obs = b.build(&design.assign(1).unwrap().z, UniformSource::Seeded(2)).unwrap();
        let cache = ReplicateCache::build(&b, &design, 30, 3).unwrap();
        let y = vec![2.5; 300];
        let t = fit_tree(&TreeData { observed: &obs, y: &y, cache: &cache, clusters: None }, &p, 4).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert!((t.leaves()[0].mu - 2.5).abs() < 1e-12);
        let refs = reference_representations(&f.schema).unwrap();
        let gate = t.gate_effect(&refs).unwrap();
        assert!(gate.has_flag(FLAG_GATE_DEGENERATE));
        assert!(gate.point.abs() < 1e-12);
    }

    #[test]
    fn planted_split_found() {
        let f = Fixture::new(800);
        let mut p = TreeHyperparams::new(ScoreKind::TStat, 1.96, 20);
        p.max_depth = Some(1);
        p.bootstrap = 50;
        let t = f.run(7, |r| 5.0 * (r[1] > 0.5) as u8 as f64, &p);
        let TreeNode::Split { dim, theta, .. } = t.root else { panic!("no split") };
        assert_eq!(dim, 1);
        assert!((0.45..=0.55).contains(&theta), "{theta}");
    }

    #[test]
    fn wsse_score_splits_too() {
        let f = Fixture::new(800);
        let mut p = TreeHyperparams::new(ScoreKind::Wsse, 1.0, 20);
        p.max_depth = Some(1);
        p.bootstrap = 50;
        let t = f.run(3, |r| 5.0 * (r[1] > 0.5) as u8 as f64, &p);
        assert!(matches!(t.root, TreeNode::Split { dim: 1, .. }));
    }

    #[test]
    fn assign_leaf_boundary_goes_left() {
        let leaf = |label: &str| {
            let mut l = Leaf::pending(BoxRegion::full(2), 0);
            l.label = label.into();
            TreeNode::Leaf(l)
        };
        let t = ExposureTree {
            root: TreeNode::Split {
                dim: 1,
                theta: 0.5,
                score: 3.0,
                n_train: 0,
                left: Box::new(leaf("l")),
                right: Box::new(leaf("r")),
            },
            schema: MotifSchema::parse("Z,2-1").unwrap(),
            params: TreeHyperparams::new(ScoreKind::TStat, 1.96, 2),
            split_seed: 0,
            n_train: 0,
            n_est: 0,
        };
        assert_eq!(t.assign_leaf(&[0.0, 0.3]).label, "l");
        assert_eq!(t.assign_leaf(&[0.0, 0.5]).label, "l");
        assert_eq!(t.assign_leaf(&[0.0, 0.51]).label, "r");
        assert!(t.to_dot().contains("≤ 0.5000"));
        assert_eq!(t.to_json()["left"]["leaf_label"], "l");
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = TreeHyperparams::new(ScoreKind::TStat, 1.96, 1);
        assert!(p.check().is_err());
        p.kappa = 5;
        p.honest_fraction = 1.0;
        assert!(p.check().is_err());
    }
}
