//! Treatment-assignment designs and reproducible replicate streams.

mod kl;

pub use kl::BisectionStats;

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::graph::Graph;
use crate::par;
use crate::seeds;

/// A realised 0/1 treatment vector with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentVector {
    pub z: Vec<u8>,
    pub design_tag: String,
    pub seed: u64,
}

impl AssignmentVector {
    pub fn new(z: Vec<u8>, design_tag: impl Into<String>, seed: u64) -> Result<Self> {
        if z.iter().any(|&v| v > 1) {
            return arg("assignment entries must be 0 or 1");
        }
        Ok(AssignmentVector {
            z,
            design_tag: design_tag.into(),
            seed,
        })
    }

    pub fn constant(n: usize, treated: bool) -> Self {
        AssignmentVector {
            z: vec![treated as u8; n],
            design_tag: if treated { "all-treated" } else { "all-control" }.into(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn treated_count(&self) -> usize {
        self.z.iter().map(|&v| v as usize).sum()
    }

    /// Write `node_id,z` rows using the graph's external ids.
    pub fn write_csv<W: Write>(&self, g: &Graph, out: W) -> Result<()> {
        check_len(g, self.z.len())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node_id", "z"])?;
        for (i, &v) in self.z.iter().enumerate() {
            w.write_record([g.external_id(i), if v == 1 { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read `node_id,z` rows and align them to the graph.
    pub fn read_csv<R: Read>(g: &Graph, src: R, design_tag: &str, seed: u64) -> Result<Self> {
        let cols = read_id_table(g, src, &["z"])?;
        let z = cols[0]
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0.0 => Ok(0u8),
                1.0 => Ok(1u8),
                _ => Err(Error::Argument(format!(
                    "assignment for node {} is {v}, expected 0 or 1",
                    g.external_id(i)
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        AssignmentVector::new(z, design_tag, seed)
    }

    /// Sidecar metadata (`design_tag`, `seed`) as JSON.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({ "design_tag": self.design_tag, "seed": self.seed, "n": self.z.len() })
    }
}

fn check_len(g: &Graph, len: usize) -> Result<()> {
    if len != g.node_count() {
        return arg(format!("vector has {len} entries, graph has {} nodes", g.node_count()));
    }
    Ok(())
}

/// Read a `node_id,<cols>` CSV whose ids must match the graph exactly.
pub(crate) fn read_id_table<R: Read>(g: &Graph, src: R, want: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("node_id") {
        return Err(Error::Parse { line: 1, message: "header must start with node_id".into() });
    }
    let pos: Vec<usize> = want
        .iter()
        .map(|w| {
            header
                .iter()
                .position(|h| h == *w)
                .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column {w}") })
        })
        .collect::<Result<_>>()?;
    let n = g.node_count();
    let mut cols = vec![vec![f64::NAN; n]; want.len()];
    let mut seen = vec![false; n];
    let mut unknown = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("");
        let Some(i) = g.index_of(id) else {
            unknown.push(id.to_string());
            continue;
        };
        seen[i] = true;
        for (c, &p) in pos.iter().enumerate() {
            let raw = rec.get(p).unwrap_or("");
            cols[c][i] = raw.parse().map_err(|_| Error::Parse {
                line: k + 2,
                message: format!("{raw:?} is not numeric"),
            })?;
        }
    }
    let missing: Vec<String> = (0..n)
        .filter(|&i| !seen[i])
        .map(|i| g.external_id(i).to_string())
        .collect();
    if !unknown.is_empty() || !missing.is_empty() {
        return Err(Error::Argument(format!(
            "ids not aligned with graph: unknown {unknown:?}, missing {missing:?}"
        )));
    }
    Ok(cols)
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return arg(format!("treatment probability must lie in (0,1), got {p}"));
    }
    Ok(())
}

/// Independent Bernoulli(p) assignment of `n` units.
pub fn bernoulli_assignment(n: usize, p: f64, seed: u64) -> Result<AssignmentVector> {
    check_p(p)?;
    if n == 0 {
        return arg("n must be at least 1");
    }
    let mut rng = seeds::rng(seed, seeds::stream::ASSIGNMENT, 0);
    let z = (0..n).map(|_| (rng.random::<f64>() < p) as u8).collect();
    Ok(AssignmentVector {
        z,
        design_tag: format!("bernoulli(p={p})"),
        seed,
    })
}

/// Cluster label per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub cluster_of: Vec<u32>,
    pub cluster_count: usize,
}

impl ClusterPartition {
    pub fn new(cluster_of: Vec<u32>) -> Result<Self> {
        let cluster_count = cluster_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let p = ClusterPartition { cluster_of, cluster_count };
        if p.sizes().contains(&0) {
            return arg("cluster ids must be contiguous from 0");
        }
        Ok(p)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.cluster_count];
        for &c in &self.cluster_of {
            s[c as usize] += 1;
        }
        s
    }

    /// Member lists indexed by cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.cluster_count];
        for (i, &c) in self.cluster_of.iter().enumerate() {
            m[c as usize].push(i);
        }
        m
    }

    pub fn is_balanced(&self) -> bool {
        let s = self.sizes();
        match (s.iter().min(), s.iter().max()) {
            (Some(lo), Some(hi)) => hi - lo <= 1,
            _ => true,
        }
    }

    pub fn cut_size(&self, g: &Graph) -> usize {
        g.edges()
            .filter(|&(u, v)| self.cluster_of[u] != self.cluster_of[v])
            .count()
    }

    pub fn write_csv<W: Write>(&self, g: &Graph, out: W) -> Result<()> {
        check_len(g, self.cluster_of.len())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node_id", "cluster"])?;
        for (i, &c) in self.cluster_of.iter().enumerate() {
            w.write_record([g.external_id(i), &c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(g: &Graph, src: R) -> Result<Self> {
        let cols = read_id_table(g, src, &["cluster"])?;
        let cluster_of = cols[0]
            .iter()
            .map(|&c| {
                if c >= 0.0 && c.fract() == 0.0 {
                    Ok(c as u32)
                } else {
                    arg(format!("bad cluster id {c}"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ClusterPartition::new(cluster_of)
    }
}

/// Per-level record of the recursive bisection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionReport {
    /// One entry per bisection, grouped by level.
    pub levels: Vec<Vec<BisectionStats>>,
}

/// Recursive balanced bisection into `2^levels` clusters, each split
/// refined by Kernighan–Lin on the induced subgraph.
pub fn recursive_kl_partition(g: &Graph, levels: u32, seed: u64) -> Result<ClusterPartition> {
    recursive_kl_partition_with_report(g, levels, seed).map(|(p, _)| p)
}

pub fn recursive_kl_partition_with_report(
    g: &Graph,
    levels: u32,
    seed: u64,
) -> Result<(ClusterPartition, PartitionReport)> {
    if levels == 0 {
        return arg("levels must be at least 1");
    }
    let n = g.node_count();
    if levels >= usize::BITS || (1usize << levels) > n {
        return arg(format!("2^{levels} clusters exceed node count {n}"));
    }
    let mut parts: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut scratch = vec![u32::MAX; n];
    let mut report = PartitionReport { levels: Vec::new() };
    for level in 0..levels {
        let mut next = Vec::with_capacity(parts.len() * 2);
        let mut stats = Vec::with_capacity(parts.len());
        for (k, part) in parts.iter().enumerate() {
            let s = seeds::derive(seed, level as u64, k as u64);
            let (a, b, st) = kl::bisect(g, part, s, &mut scratch);
            stats.push(st);
            next.push(a);
            next.push(b);
        }
        report.levels.push(stats);
        parts = next;
    }
    let mut cluster_of = vec![0u32; n];
    for (c, part) in parts.iter().enumerate() {
        for &v in part {
            cluster_of[v] = c as u32;
        }
    }
    Ok((
        ClusterPartition {
            cluster_of,
            cluster_count: parts.len(),
        },
        report,
    ))
}

/// One Bernoulli(p) draw per cluster, broadcast to its members.
pub fn cluster_assignment(partition: &ClusterPartition, p: f64, seed: u64) -> Result<AssignmentVector> {
    check_p(p)?;
    let mut rng = seeds::rng(seed, seeds::stream::ASSIGNMENT, 1);
    let draws: Vec<u8> = (0..partition.cluster_count)
        .map(|_| (rng.random::<f64>() < p) as u8)
        .collect();
    Ok(AssignmentVector {
        z: partition.cluster_of.iter().map(|&c| draws[c as usize]).collect(),
        design_tag: format!("cluster(k={},p={p})", partition.cluster_count),
        seed,
    })
}

/// Probability law of the assignment vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DesignKind {
    Bernoulli,
    GraphCluster(ClusterPartition),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDesign {
    pub kind: DesignKind,
    pub p: f64,
    pub n: usize,
}

impl RandomizationDesign {
    pub fn bernoulli(n: usize, p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(RandomizationDesign { kind: DesignKind::Bernoulli, p, n })
    }

    pub fn cluster(partition: ClusterPartition, p: f64) -> Result<Self> {
        check_p(p)?;
        let n = partition.cluster_of.len();
        Ok(RandomizationDesign {
            kind: DesignKind::GraphCluster(partition),
            p,
            n,
        })
    }

    pub fn tag(&self) -> String {
        match &self.kind {
            DesignKind::Bernoulli => format!("bernoulli(p={})", self.p),
            DesignKind::GraphCluster(c) => format!("cluster(k={},p={})", c.cluster_count, self.p),
        }
    }

    pub fn partition(&self) -> Option<&ClusterPartition> {
        match &self.kind {
            DesignKind::GraphCluster(c) => Some(c),
            DesignKind::Bernoulli => None,
        }
    }

    /// Draw one assignment.
    pub fn assign(&self, seed: u64) -> Result<AssignmentVector> {
        match &self.kind {
            DesignKind::Bernoulli => bernoulli_assignment(self.n, self.p, seed),
            DesignKind::GraphCluster(c) => cluster_assignment(c, self.p, seed),
        }
    }

    /// Seed of replicate `b` under `master_seed`.
    pub fn replicate_seed(master_seed: u64, b: usize) -> u64 {
        seeds::derive(master_seed, seeds::stream::REPLICATE, b as u64)
    }

    /// Replicate `b` of the stream rooted at `master_seed`.
    pub fn replicate(&self, master_seed: u64, b: usize) -> Result<AssignmentVector> {
        self.assign(Self::replicate_seed(master_seed, b))
    }
}

/// `count` assignment replicates; replicate `b` depends only on
/// `(design, master_seed, b)`.
pub fn draw_replicates(
    design: &RandomizationDesign,
    count: usize,
    master_seed: u64,
) -> Result<Vec<AssignmentVector>> {
    if count == 0 {
        return arg("replicate count must be at least 1");
    }
    par::map_range(count, |b| design.replicate(master_seed, b))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn ring(n: usize) -> Graph {
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n, &e).unwrap().0
    }

    #[test]
    fn bernoulli_deterministic_and_checked() {
        let a = bernoulli_assignment(5, 0.5, 11).unwrap();
        let b = bernoulli_assignment(5, 0.5, 11).unwrap();
        assert_eq!(a, b);
        assert!(bernoulli_assignment(5, 0.0, 1).is_err());
        assert!(bernoulli_assignment(5, 1.0, 1).is_err());
        assert!(bernoulli_assignment(5, f64::NAN, 1).is_err());
    }

    #[test]
    fn bernoulli_mean_concentrates() {
        let n = 100_000;
        let a = bernoulli_assignment(n, 0.5, 2024).unwrap();
        let mean = a.treated_count() as f64 / n as f64;
        assert!((mean - 0.5).abs() <= 3.0 * (0.25f64 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn cluster_broadcast() {
        let part = ClusterPartition::new(vec![0, 0, 1, 1]).unwrap();
        for seed in 0..20 {
            let z = cluster_assignment(&part, 0.5, seed).unwrap().z;
            assert_eq!(z[0], z[1]);
            assert_eq!(z[2], z[3]);
        }
        let single = ClusterPartition::new(vec![0; 6]).unwrap();
        let z = cluster_assignment(&single, 0.5, 9).unwrap().z;
        assert!(z.iter().all(|&v| v == z[0]));
    }

    #[test]
    fn cluster_count_concentrates() {
        let part = ClusterPartition::new((0..512).collect()).unwrap();
        let a = cluster_assignment(&part, 0.5, 77).unwrap();
        let treated = a.treated_count() as f64;
        assert!((treated - 256.0).abs() <= 3.0 * (512.0f64 * 0.25).sqrt());
    }

    #[test]
    fn replicates_order_independent() {
        let d = RandomizationDesign::bernoulli(12, 0.5).unwrap();
        let fwd = draw_replicates(&d, 3, 5).unwrap();
        let bwd: Vec<_> = (0..3).rev().map(|b| d.replicate(5, b).unwrap()).collect();
        assert_eq!(fwd[0], bwd[2]);
        assert_eq!(fwd[2], bwd[0]);
        assert!(draw_replicates(&d, 0, 5).is_err());
    }

    #[test]
    fn replicate_rate_concentrates() {
        let d = RandomizationDesign::bernoulli(12, 0.5).unwrap();
        let reps = draw_replicates(&d, 500, 99).unwrap();
        let tol = 3.0 * (0.25f64 / 500.0).sqrt();
        for i in 0..12 {
            let rate = reps.iter().map(|r| r.z[i] as f64).sum::<f64>() / 500.0;
            assert!((rate - 0.5).abs() <= tol, "unit {i}: {rate}");
        }
    }

    #[test]
    fn partition_balanced_and_sized() {
        let g = ring(37);
        let p = recursive_kl_partition(&g, 1, 4).unwrap();
        let mut s = p.sizes();
        s.sort();
        assert_eq!(s, vec![18, 19]);
        let p3 = recursive_kl_partition(&g, 3, 4).unwrap();
        assert_eq!(p3.cluster_count, 8);
        assert!(p3.is_balanced());
        assert!(recursive_kl_partition(&g, 6, 4).is_err());
        assert!(recursive_kl_partition(&g, 0, 4).is_err());
        assert_eq!(recursive_kl_partition(&g, 3, 4).unwrap(), p3);
    }

    #[test]
    fn refinement_never_worsens() {
        let g = ring(64);
        let (_, rep) = recursive_kl_partition_with_report(&g, 4, 1).unwrap();
        for level in &rep.levels {
            for st in level {
                assert!(st.refined_cut <= st.initial_cut);
            }
        }
    }

    #[test]
    fn csv_roundtrip() {
        let g = ring(6);
        let a = bernoulli_assignment(6, 0.5, 3).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&g, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("node_id,z\n"));
        let back = AssignmentVector::read_csv(&g, buf.as_slice(), &a.design_tag, a.seed).unwrap();
        assert_eq!(back, a);

        let p = ClusterPartition::new(vec![0, 0, 1, 1, 2, 2]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&g, &mut buf).unwrap();
        assert_eq!(ClusterPartition::read_csv(&g, buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn misaligned_csv_rejected() {
        let g = ring(3);
        let err = AssignmentVector::read_csv(&g, "node_id,z\n0,1\n5,0\n".as_bytes(), "x", 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"5\"") && msg.contains("\"1\""), "{msg}");
    }
}
