//! Synthetic experiments: small-world graphs, a potential-outcome model
//! with positive interference, exact ground truth and a replication harness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::estimators::{EstimateReport, EstimatorKind};
use crate::exposure::{Positivity, ReplicateCache};
use crate::fracq::{fractional_q_report, FracqOptions, FracqReport};
use crate::graph::{load_edge_list, sorted_intersection_count, AttrIdPolicy, Graph};
use crate::knn::{
    fit_metric, k_grid_from_fractions, select_estimate, sweep_k, Assumption, DistanceMetric, KSweepRow, MetricKind,
    SweepConfig, SweepData,
};
use crate::motif::{reference_representations, MotifSchema, RepresentationBuilder, SamplingConfig, UniformSource, DEFAULT_ATTR};
use crate::par;
use crate::randomization::{recursive_kl_partition, RandomizationDesign};
use crate::seeds::{self, stream};
use crate::tree::{fit_tree, ExposureTree, ScoreKind, TreeData, TreeHyperparams};

/// Ring lattice of `n` nodes joined to their `k` nearest neighbors, each
/// lattice edge rewired with probability `beta` to a uniform target that
/// is neither the source nor an existing neighbor.
pub fn generate_watts_strogatz(n: usize, k: usize, beta: f64, seed: u64) -> Result<Graph> {
    if k % 2 != 0 || k >= n {
        return arg(format!("Watts-Strogatz needs even k < n, got n={n}, k={k}"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return arg(format!("rewiring probability {beta} outside [0,1]"));
    }
    let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            adj[u].insert(v as u32);
            adj[v].insert(u as u32);
        }
    }
    let mut rng = seeds::rng(seed, stream::GRAPH, 0);
    for j in 1..=k / 2 {
        for u in 0..n {
            if rng.random::<f64>() >= beta || adj[u].len() >= n - 1 {
                continue;
            }
            let v = (u + j) % n;
            let mut w = rng.random_range(0..n);
            while w == u || adj[u].contains(&(w as u32)) {
                w = rng.random_range(0..n);
            }
            adj[u].remove(&(v as u32));
            adj[v].remove(&(u as u32));
            adj[u].insert(w as u32);
            adj[w].insert(u as u32);
        }
    }
    let edges: Vec<(usize, usize)> = adj
        .iter()
        .enumerate()
        .flat_map(|(u, s)| s.iter().filter(move |&&v| (v as usize) > u).map(move |&v| (u, v as usize)))
        .collect();
    Ok(Graph::from_edges(n, &edges)?.0)
}

/// `y_i = (1 + X_i)(1 + Z_i + sum_j w_ij Z_j) + eps_i`, with
/// `w_ij` proportional to `(X_j + 1) * common_neighbors(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeModel {
    pub x: Vec<f64>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PotentialOutcomeModel {
    pub fn node_count(&self) -> usize {
        self.x.len()
    }

    /// Non-zero interference weights of node `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.targets[r.clone()].iter().map(|&j| j as usize).zip(self.weights[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.weights[self.offsets[i]..self.offsets[i + 1]].iter().sum()
    }
}

pub const DEFAULT_NOISE_SIGMA: f64 = 0.25;

/// Build the outcome model. `X` comes from the graph's `X` attribute when
/// present, otherwise Bernoulli(0.5) draws from `seed`.
pub fn attach_outcome_model(g: &Graph, noise_sigma: f64, seed: u64) -> Result<PotentialOutcomeModel> {
    if !(noise_sigma >= 0.0) {
        return arg("noise_sigma must be non-negative");
    }
    let n = g.node_count();
    let x: Vec<f64> = match g.attr(DEFAULT_ATTR) {
        Some(col) => col.to_vec(),
        None => {
            let mut rng = seeds::rng(seed, stream::COVARIATE, 0);
            (0..n).map(|_| rng.random_bool(0.5) as u8 as f64).collect()
        }
    };
    let rows: Vec<Vec<(u32, f64)>> = par::map_range(n, |i| {
        let ni = g.neighbors(i);
        let raw: Vec<(u32, f64)> = ni
            .iter()
            .filter_map(|&j| {
                let cf = sorted_intersection_count(ni, g.neighbors(j as usize));
                (cf > 0).then(|| (j, (x[j as usize] + 1.0) * cf as f64))
            })
            .collect();
        let total: f64 = raw.iter().map(|p| p.1).sum();
        raw.into_iter().map(|(j, w)| (j, w / total)).collect()
    });
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    offsets.push(0);
    for r in rows {
        for (j, w) in r {
            targets.push(j);
            weights.push(w);
        }
        offsets.push(targets.len());
    }
    Ok(PotentialOutcomeModel {
        x,
        offsets,
        targets,
        weights,
        noise_sigma,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Noise {
    Off,
    /// Fresh draws keyed by `(node, call)`.
    Draw(u64),
}

pub fn realize_outcomes(model: &PotentialOutcomeModel, z: &[u8], noise: Noise) -> Result<Vec<f64>> {
    let n = model.node_count();
    if z.len() != n {
        return arg(format!("assignment covers {} units, model has {n}", z.len()));
    }
    Ok(par::map_range(n, |i| {
        let spill: f64 = model.row(i).map(|(j, w)| w * z[j] as f64).sum();
        let base = (1.0 + model.x[i]) * (1.0 + z[i] as f64 + spill);
        match noise {
            Noise::Off => base,
            Noise::Draw(call) => {
                let mut rng = seeds::rng(seeds::derive(model.seed, stream::NOISE, call), stream::NOISE, i as u64);
                let e: f64 = StandardNormal.sample(&mut rng);
                base + model.noise_sigma * e
            }
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mu1: f64,
    pub mu0: f64,
    pub tau: f64,
}

/// Noise-free means under the all-treated and all-control assignments.
pub fn ground_truth(model: &PotentialOutcomeModel) -> GroundTruth {
    let n = model.node_count();
    let mean = |v: u8| {
        let y = realize_outcomes(model, &vec![v; n], Noise::Off).expect("aligned");
        y.iter().sum::<f64>() / n as f64
    };
    let (mu1, mu0) = (mean(1), mean(0));
    GroundTruth { mu1, mu0, tau: mu1 - mu0 }
}

/// Mean outcome of treated minus mean outcome of control units.
pub fn naive_difference(z: &[u8], y: &[f64]) -> Result<f64> {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&zi, &yi) in z.iter().zip(y) {
        if zi == 1 {
            s1 += yi;
            n1 += 1;
        } else {
            s0 += yi;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::Estimation("naive difference needs treated and control units".into()));
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    WattsStrogatz {
        n: usize,
        k: usize,
        beta: f64,
        /// Fixed graph seed; derived from the run seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    EdgeList {
        path: PathBuf,
        #[serde(default)]
        attributes: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    Bernoulli { p: f64 },
    Cluster { p: f64, levels: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnSpec {
    pub metric: MetricKind,
    pub k_fractions: Vec<f64>,
    pub assumption: Assumption,
    pub se_cap: Option<f64>,
    /// Also sweep with the Horvitz-Thompson estimator.
    pub horvitz_thompson: bool,
    /// Also sweep on the `{Z, 2-1}` schema at the same grid.
    pub fractional_baseline: bool,
}

impl Default for KnnSpec {
    fn default() -> Self {
        KnnSpec {
            metric: MetricKind::RegressionCoefficients,
            k_fractions: vec![0.01, 0.02, 0.05, 0.10, 0.20, 0.50],
            assumption: Assumption::NonNegative,
            se_cap: None,
            horvitz_thompson: true,
            fractional_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub score: ScoreKind,
    pub gamma: f64,
    pub kappa: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub network: NetworkSpec,
    pub design: DesignSpec,
    pub schema: Vec<String>,
    pub sampling: SamplingConfig,
    pub noise_sigma: f64,
    /// Assignment replicates for exposure probabilities.
    pub replicates: usize,
    pub bootstrap: usize,
    pub positivity: Positivity,
    pub seed: u64,
    pub knn: Option<KnnSpec>,
    /// Threshold for the fractional q baseline report.
    pub fracq_q: Option<f64>,
    pub tree: Option<TreeSpec>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self::ws_bernoulli()
    }
}

impl HarnessConfig {
    /// n = 4096, k = 10, beta = 0.5, Bernoulli(0.5).
    pub fn ws_bernoulli() -> Self {
        HarnessConfig {
            network: NetworkSpec::WattsStrogatz { n: 4096, k: 10, beta: 0.5, seed: None },
            design: DesignSpec::Bernoulli { p: 0.5 },
            schema: MotifSchema::default_schema().codes(),
            sampling: SamplingConfig::default(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            replicates: 500,
            bootstrap: 500,
            positivity: Positivity::default(),
            seed: 0,
            knn: Some(KnnSpec::default()),
            fracq_q: Some(0.5),
            tree: None,
        }
    }

    /// Same network, 512 balanced clusters from recursive bisection.
    pub fn ws_cluster() -> Self {
        HarnessConfig {
            design: DesignSpec::Cluster { p: 0.5, levels: 9 },
            ..Self::ws_bernoulli()
        }
    }

    /// An edge list on disk with the default model and Bernoulli design.
    pub fn external(path: impl Into<PathBuf>) -> Self {
        HarnessConfig {
            network: NetworkSpec::EdgeList { path: path.into(), attributes: None },
            ..Self::ws_bernoulli()
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load by extension: `.toml` or JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.replicates == 0 {
            return bad("replicates", "must be at least 1".into());
        }
        if self.bootstrap < 2 {
            return bad("bootstrap", "must be at least 2".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma", "must be non-negative".into());
        }
        let p = match self.design {
            DesignSpec::Bernoulli { p } | DesignSpec::Cluster { p, .. } => p,
        };
        if !(p > 0.0 && p < 1.0) {
            return bad("design.p", format!("{p} outside (0,1)"));
        }
        MotifSchema::parse(&self.schema.join(",")).map_err(|e| Error::Config(format!("schema: {e}")))?;
        if let Some(k) = &self.knn {
            if k.k_fractions.is_empty() || k.k_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return bad("knn.k_fractions", "must be non-empty, each in (0,1]".into());
            }
        }
        if let Some(q) = self.fracq_q {
            if !(0.0..=1.0).contains(&q) {
                return bad("fracq_q", format!("{q} outside [0,1]"));
            }
        }
        Ok(())
    }

    pub fn build_graph(&self) -> Result<Graph> {
        match &self.network {
            NetworkSpec::WattsStrogatz { n, k, beta, seed } => {
                generate_watts_strogatz(*n, *k, *beta, seed.unwrap_or_else(|| seeds::labeled(self.seed, "graph")))
            }
            NetworkSpec::EdgeList { path, attributes } => {
                let edges = std::io::BufReader::new(std::fs::File::open(path)?);
                let attrs = attributes.as_ref().map(std::fs::File::open).transpose()?;
                Ok(load_edge_list(edges, attrs, AttrIdPolicy::RequireKnown)?.0)
            }
        }
    }
}

/// Everything one harness run produces.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationBundle {
    pub seed: u64,
    pub node_count: usize,
    pub edge_count: usize,
    pub design: String,
    pub treated_count: usize,
    pub truth: GroundTruth,
    pub naive: f64,
    pub metric: Option<DistanceMetric>,
    pub sweep: Vec<KSweepRow>,
    pub sweep_ht: Vec<KSweepRow>,
    pub sweep_fractional: Vec<KSweepRow>,
    pub selected: Option<KSweepRow>,
    pub selection_error: Option<String>,
    pub fracq: Option<FracqReport>,
    pub tree: Option<ExposureTree>,
    pub tree_gate: Option<EstimateReport>,
    pub seeds: BTreeMap<String, u64>,
}

impl ReplicationBundle {
    /// Sweep row with the smallest `K` that passes both positivity checks.
    pub fn smallest_passing(rows: &[KSweepRow]) -> Option<&KSweepRow> {
        rows.iter().filter(|r| r.passes()).min_by_key(|r| r.k)
    }
}

/// Design, assignment, outcomes, representations and every configured
/// analysis for one seed.
pub fn run_replication(cfg: &HarnessConfig) -> Result<ReplicationBundle> {
    cfg.validate()?;
    let mut seed_log = BTreeMap::new();
    let mut named = |name: &str| {
        let s = seeds::labeled(cfg.seed, name);
        seed_log.insert(name.to_string(), s);
        s
    };
    let (graph_seed, outcome_seed, partition_seed) = (named("graph"), named("outcome"), named("partition"));
    let (assign_seed, uniform_seed, rep_seed) = (named("assignment"), named("uniform"), named("replicates"));
    let (boot_seed, split_seed, noise_call) = (named("bootstrap"), named("honest"), named("noise"));
    if let NetworkSpec::WattsStrogatz { seed: Some(s), .. } = cfg.network {
        seed_log.insert("graph".into(), s);
    } else {
        seed_log.insert("graph".into(), graph_seed);
    }

    let mut g = cfg.build_graph()?;
    let n = g.node_count();
    let model = attach_outcome_model(&g, cfg.noise_sigma, outcome_seed)?;
    if g.attr(DEFAULT_ATTR).is_none() {
        // attribute-conditioned dims read the covariate the model drew
        g = g.with_attribute(DEFAULT_ATTR, model.x.clone())?;
    }
    let design = match cfg.design {
        DesignSpec::Bernoulli { p } => RandomizationDesign::bernoulli(n, p)?,
        DesignSpec::Cluster { p, levels } => {
            RandomizationDesign::cluster(recursive_kl_partition(&g, levels, partition_seed)?, p)?
        }
    };
    let clusters = design.partition();
    let z = design.assign(assign_seed)?;
    let y = realize_outcomes(&model, &z.z, Noise::Draw(noise_call))?;
    let truth = ground_truth(&model);
    let naive = naive_difference(&z.z, &y)?;

    let schema = MotifSchema::parse(&cfg.schema.join(","))?;
    let builder = RepresentationBuilder::new(&g, &schema, &cfg.sampling)?;
    let observed = builder.build(&z.z, UniformSource::Seeded(uniform_seed))?;
    let cache = ReplicateCache::build(&builder, &design, cfg.replicates, rep_seed)?;

    let mut bundle = ReplicationBundle {
        seed: cfg.seed,
        node_count: n,
        edge_count: g.edge_count(),
        design: design.tag(),
        treated_count: z.treated_count(),
        truth,
        naive,
        metric: None,
        sweep: Vec::new(),
        sweep_ht: Vec::new(),
        sweep_fractional: Vec::new(),
        selected: None,
        selection_error: None,
        fracq: None,
        tree: None,
        tree_gate: None,
        seeds: BTreeMap::new(),
    };

    if let Some(spec) = &cfg.knn {
        let refs = reference_representations(&schema)?;
        let metric = fit_metric(&observed, &y, spec.metric)?;
        let mut sc = SweepConfig::new(k_grid_from_fractions(n, &spec.k_fractions));
        sc.positivity = cfg.positivity;
        sc.bootstrap = cfg.bootstrap;
        sc.bootstrap_seed = boot_seed;
        let data = SweepData { observed: &observed, y: &y, cache: &cache, clusters };
        bundle.sweep = sweep_k(&data, &metric, &refs, &sc)?;
        if spec.horvitz_thompson {
            let ht = SweepConfig { estimator: EstimatorKind::HorvitzThompson, ..sc.clone() };
            bundle.sweep_ht = sweep_k(&data, &metric, &refs, &ht)?;
        }
        match select_estimate(&bundle.sweep, spec.assumption, spec.se_cap) {
            Ok(r) => bundle.selected = Some(r),
            Err(e) => bundle.selection_error = Some(e.to_string()),
        }
        bundle.metric = Some(metric);

        if spec.fractional_baseline {
            let fs = MotifSchema::fractional();
            let fb = RepresentationBuilder::new(&g, &fs, &cfg.sampling)?;
            let fobs = fb.build(&z.z, UniformSource::Seeded(uniform_seed))?;
            let fcache = ReplicateCache::build(&fb, &design, cfg.replicates, rep_seed)?;
            let fmetric = fit_metric(&fobs, &y, spec.metric)?;
            let frefs = reference_representations(&fs)?;
            let fdata = SweepData { observed: &fobs, y: &y, cache: &fcache, clusters };
            bundle.sweep_fractional = sweep_k(&fdata, &fmetric, &frefs, &sc)?;
        }
    }

    if let Some(q) = cfg.fracq_q {
        let fs = MotifSchema::fractional();
        let fb = RepresentationBuilder::new(&g, &fs, &cfg.sampling)?;
        let fobs = fb.build(&z.z, UniformSource::Seeded(uniform_seed))?;
        let fcache = ReplicateCache::build(&fb, &design, cfg.replicates, rep_seed)?;
        let opts = FracqOptions {
            q,
            estimator: EstimatorKind::Hajek,
            positivity: cfg.positivity,
            bootstrap: cfg.bootstrap,
            bootstrap_seed: boot_seed,
            clusters,
        };
        bundle.fracq = Some(fractional_q_report(&fobs, &y, &fcache, &opts)?.without_draws());
    }

    if let Some(spec) = &cfg.tree {
        let mut params = TreeHyperparams::new(spec.score, spec.gamma, spec.kappa);
        params.max_depth = spec.max_depth;
        params.positivity = cfg.positivity;
        params.bootstrap = cfg.bootstrap;
        params.bootstrap_seed = boot_seed;
        let data = TreeData { observed: &observed, y: &y, cache: &cache, clusters };
        let tree = fit_tree(&data, &params, split_seed)?;
        if let Ok(refs) = reference_representations(&schema) {
            bundle.tree_gate = Some(tree.gate_effect(&refs)?.without_draws());
        }
        bundle.tree = Some(tree);
    }

    bundle.seeds = seed_log;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(n: usize) -> Graph {
        let e: Vec<(usize, usize)> = (1..n).map(|i| (0, i)).collect();
        Graph::from_edges(n, &e).unwrap().0
    }

    #[test]
    fn ring_lattice_without_rewiring() {
        let g = generate_watts_strogatz(30, 4, 0.0, 1).unwrap();
        assert_eq!(g.edge_count(), 60);
        assert!((0..30).all(|i| g.degree(i) == 4));
        assert!(g.has_edge(0, 2) && g.has_edge(0, 28));
    }

    #[test]
    fn rewiring_preserves_edge_count() {
        for beta in [0.1, 0.5, 1.0] {
            let g = generate_watts_strogatz(500, 10, beta, 3).unwrap();
            assert_eq!(g.edge_count(), 2500);
        }
        assert!(generate_watts_strogatz(10, 3, 0.5, 0).is_err());
        assert!(generate_watts_strogatz(10, 10, 0.5, 0).is_err());
    }

    #[test]
    fn full_rewiring_destroys_clustering() {
        let g = generate_watts_strogatz(2000, 10, 1.0, 9).unwrap();
        assert!(g.average_clustering() < 0.05);
        let lattice = generate_watts_strogatz(2000, 10, 0.0, 9).unwrap();
        assert!(lattice.average_clustering() > 0.6);
    }

    #[test]
    fn star_has_no_interference() {
        let g = star(6).with_attribute("X", vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = attach_outcome_model(&g, 0.25, 0).unwrap();
        assert!((0..6).all(|i| m.row(i).count() == 0));
        let z = [1, 0, 1, 1, 0, 0];
        let y = realize_outcomes(&m, &z, Noise::Off).unwrap();
        for i in 0..6 {
            assert_eq!(y[i], (1.0 + m.x[i]) * (1.0 + z[i] as f64));
        }
        let t = ground_truth(&m);
        assert!((t.tau - m.x.iter().map(|x| 1.0 + x).sum::<f64>() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_weights() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)])
            .unwrap()
            .0
            .with_attribute("X", vec![0.0; 3])
            .unwrap();
        let m = attach_outcome_model(&g, 0.25, 0).unwrap();
        let row: Vec<(usize, f64)> = m.row(0).collect();
        assert_eq!(row, vec![(1, 0.5), (2, 0.5)]);
        let y = realize_outcomes(&m, &[0, 1, 1], Noise::Off).unwrap();
        assert_eq!(y[0], 2.0);
        assert_eq!(realize_outcomes(&m, &[0, 0, 0], Noise::Off).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn weights_normalized() {
        let g = generate_watts_strogatz(400, 6, 0.5, 2).unwrap();
        let m = attach_outcome_model(&g, 0.25, 5).unwrap();
        for i in 0..400 {
            let s = m.row_sum(i);
            assert!(s.abs() < 1e-12 || (s - 1.0).abs() < 1e-12);
            assert!(m.row(i).all(|(j, w)| w > 0.0 && g.common_neighbor_count(i, j).unwrap() > 0));
        }
    }

    #[test]
    fn noise_is_centered_and_keyed() {
        let g = generate_watts_strogatz(100, 4, 0.2, 1).unwrap();
        let m = attach_outcome_model(&g, 0.25, 5).unwrap();
        let z = vec![1u8; 100];
        let a = realize_outcomes(&m, &z, Noise::Draw(3)).unwrap();
        assert_eq!(a, realize_outcomes(&m, &z, Noise::Draw(3)).unwrap());
        assert_ne!(a, realize_outcomes(&m, &z, Noise::Draw(4)).unwrap());
        let base = realize_outcomes(&m, &z, Noise::Off).unwrap();
        let draws = 10_000;
        let mut acc = 0.0;
        for c in 0..draws {
            acc += realize_outcomes(&m, &z, Noise::Draw(c)).unwrap()[7];
        }
        assert!((acc / draws as f64 - base[7]).abs() <= 3.0 * 0.25 / 100.0);
    }

    #[test]
    fn config_roundtrip_and_errors() {
        let c = HarnessConfig::ws_cluster();
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(HarnessConfig::from_json_str(&j).unwrap(), c);
        let t = toml::to_string(&c).unwrap();
        assert_eq!(HarnessConfig::from_toml_str(&t).unwrap(), c);
        let e = HarnessConfig::from_json_str(r#"{"replicas": 3}"#).unwrap_err();
        assert!(e.to_string().contains("replicas"), "{e}");
        let mut bad = HarnessConfig::default();
        bad.replicates = 0;
        assert!(bad.validate().unwrap_err().to_string().contains("replicates"));
    }

    #[test]
    fn small_replication_runs() {
        let mut c = HarnessConfig::ws_bernoulli();
        c.network = NetworkSpec::WattsStrogatz { n: 300, k: 6, beta: 0.5, seed: None };
        c.replicates = 40;
        c.bootstrap = 30;
        c.seed = 11;
        c.tree = Some(TreeSpec { score: ScoreKind::TStat, gamma: 1.96, kappa: 20, max_depth: Some(2) });
        let b = run_replication(&c).unwrap();
        assert_eq!(b.node_count, 300);
        assert_eq!(b.sweep.len(), b.sweep_ht.len());
        assert_eq!(b.sweep.len(), b.sweep_fractional.len());
        assert!((b.truth.tau - (b.truth.mu1 - b.truth.mu0)).abs() < 1e-12);
        assert!(b.tree.is_some() && b.fracq.is_some());
        let again = run_replication(&c).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), serde_json::to_string(&again).unwrap());
    }
}
