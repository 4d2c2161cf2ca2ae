//! Per-node motif structure and causal motif counts.
//!
//! Everything that does not depend on the assignment (the neighbor list,
//! edges among neighbors, triangles among neighbors) is computed once per
//! node. Counting under an assignment is then linear in that structure.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::schema::{Dim, MotifSchema, Shape};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par;
use crate::seeds;

/// Neighbor sampling above a degree cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Nodes with degree above this use a neighbor sample.
    pub max_exact_degree: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            max_exact_degree: 200,
            sample_size: 100,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn exact() -> Self {
        SamplingConfig {
            max_exact_degree: usize::MAX,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.max_exact_degree < 2 || self.sample_size < 2 {
            return Err(Error::Argument(
                "max_exact_degree and sample_size must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Assignment-independent neighborhood structure for every node, in flat
/// compressed arrays. Local index `a` of node `i` refers to
/// `neighbors(i)[a]`.
#[derive(Debug, Clone)]
pub struct MotifStructure {
    nbr_off: Vec<usize>,
    nbrs: Vec<u32>,
    edge_off: Vec<usize>,
    edges: Vec<[u32; 2]>,
    tri_off: Vec<usize>,
    tris: Vec<[u32; 3]>,
    sampled: Vec<bool>,
}

struct NodeParts {
    nbrs: Vec<u32>,
    edges: Vec<[u32; 2]>,
    tris: Vec<[u32; 3]>,
    sampled: bool,
}

impl MotifStructure {
    /// Build the structure the schema needs. Pair and triangle lists are
    /// skipped when no dimension uses them.
    pub fn build(g: &Graph, schema: &MotifSchema, sampling: &SamplingConfig) -> Result<Self> {
        sampling.check()?;
        let pairs = schema.needs_pairs();
        let tris = schema.needs_triangles();
        let parts = par::map_range(g.node_count(), |i| node_parts(g, i, sampling, pairs, tris));

        let n = parts.len();
        let mut s = MotifStructure {
            nbr_off: Vec::with_capacity(n + 1),
            nbrs: Vec::new(),
            edge_off: Vec::with_capacity(n + 1),
            edges: Vec::new(),
            tri_off: Vec::with_capacity(n + 1),
            tris: Vec::new(),
            sampled: Vec::with_capacity(n),
        };
        s.nbr_off.push(0);
        s.edge_off.push(0);
        s.tri_off.push(0);
        for p in parts {
            s.nbrs.extend_from_slice(&p.nbrs);
            s.edges.extend_from_slice(&p.edges);
            s.tris.extend_from_slice(&p.tris);
            s.nbr_off.push(s.nbrs.len());
            s.edge_off.push(s.edges.len());
            s.tri_off.push(s.tris.len());
            s.sampled.push(p.sampled);
        }
        Ok(s)
    }

    pub fn node_count(&self) -> usize {
        self.sampled.len()
    }

    /// Neighbors used for counting (a sample when the node is capped).
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.nbrs[self.nbr_off[i]..self.nbr_off[i + 1]]
    }

    /// Edges among the neighbors, in local indices.
    pub fn neighbor_edges(&self, i: usize) -> &[[u32; 2]] {
        &self.edges[self.edge_off[i]..self.edge_off[i + 1]]
    }

    /// Triangles among the neighbors, in local indices.
    pub fn neighbor_triangles(&self, i: usize) -> &[[u32; 3]] {
        &self.tris[self.tri_off[i]..self.tri_off[i + 1]]
    }

    pub fn is_sampled(&self, i: usize) -> bool {
        self.sampled[i]
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        (self.nbr_off.len() + self.edge_off.len() + self.tri_off.len()) * 8
            + self.nbrs.len() * 4
            + self.edges.len() * 8
            + self.tris.len() * 12
            + self.sampled.len()
    }
}

fn node_parts(g: &Graph, i: usize, sampling: &SamplingConfig, pairs: bool, tris: bool) -> NodeParts {
    let full = g.neighbors(i);
    let sampled = full.len() > sampling.max_exact_degree;
    let nbrs: Vec<u32> = if sampled && sampling.sample_size < full.len() {
        let mut rng = seeds::rng(sampling.seed, seeds::stream::NEIGHBOR_SAMPLE, i as u64);
        let mut picked: Vec<u32> = sample(&mut rng, full.len(), sampling.sample_size)
            .into_iter()
            .map(|k| full[k])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        full.to_vec()
    };

    let mut edges = Vec::new();
    if pairs || tris {
        for (a, &u) in nbrs.iter().enumerate() {
            // merge adj(u) against the (sorted) neighbor list, keeping b > a
            let adj = g.neighbors(u as usize);
            let (mut x, mut y) = (0, a + 1);
            while x < adj.len() && y < nbrs.len() {
                match adj[x].cmp(&nbrs[y]) {
                    std::cmp::Ordering::Less => x += 1,
                    std::cmp::Ordering::Greater => y += 1,
                    std::cmp::Ordering::Equal => {
                        edges.push([a as u32, y as u32]);
                        x += 1;
                        y += 1;
                    }
                }
            }
        }
    }

    let mut triangles = Vec::new();
    if tris && !edges.is_empty() {
        // local adjacency among neighbors, forward edges only (edges are
        // emitted sorted by (a, b))
        let d = nbrs.len();
        let mut off = vec![0usize; d + 1];
        for e in &edges {
            off[e[0] as usize + 1] += 1;
        }
        for k in 0..d {
            off[k + 1] += off[k];
        }
        let fwd: Vec<u32> = edges.iter().map(|e| e[1]).collect();
        for e in &edges {
            let (a, b) = (e[0] as usize, e[1] as usize);
            let na = &fwd[off[a]..off[a + 1]];
            let nb = &fwd[off[b]..off[b + 1]];
            let (mut x, mut y) = (0, 0);
            while x < na.len() && y < nb.len() {
                match na[x].cmp(&nb[y]) {
                    std::cmp::Ordering::Less => x += 1,
                    std::cmp::Ordering::Greater => y += 1,
                    std::cmp::Ordering::Equal => {
                        triangles.push([a as u32, b as u32, na[x]]);
                        x += 1;
                        y += 1;
                    }
                }
            }
        }
    }

    NodeParts {
        nbrs,
        edges,
        tris: triangles,
        sampled,
    }
}

/// Motif totals and causal counts for one node under one assignment.
///
/// `shape[t]` holds the number of instances with `t` treated non-ego
/// members; the total is the sum over `t`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MotifCounts {
    pub dyad: [u64; 2],
    pub open_triad: [u64; 3],
    pub closed_triad: [u64; 3],
    pub open_star: [u64; 4],
    /// `(numerator, denominator)` per schema dimension for attribute
    /// conditioned dimensions, `None` elsewhere.
    pub attr: Vec<Option<(u64, u64)>>,
    pub sampled: bool,
}

impl MotifCounts {
    pub fn causal(&self, shape: Shape, treated: u8) -> u64 {
        let t = treated as usize;
        match shape {
            Shape::Dyad => self.dyad.get(t),
            Shape::OpenTriad => self.open_triad.get(t),
            Shape::ClosedTriad => self.closed_triad.get(t),
            Shape::OpenStar4 => self.open_star.get(t),
        }
        .copied()
        .unwrap_or(0)
    }

    pub fn total(&self, shape: Shape) -> u64 {
        match shape {
            Shape::Dyad => self.dyad.iter().sum(),
            Shape::OpenTriad => self.open_triad.iter().sum(),
            Shape::ClosedTriad => self.closed_triad.iter().sum(),
            Shape::OpenStar4 => self.open_star.iter().sum(),
        }
    }

    /// `(causal count, motif count)` for a non-ego dimension.
    pub fn fraction_parts(&self, dim_index: usize, dim: &Dim) -> (u64, u64) {
        match dim {
            Dim::EgoTreatment => (0, 0),
            Dim::MotifFraction { shape, treated } => (self.causal(*shape, *treated), self.total(*shape)),
            Dim::AttrConditioned { .. } => self.attr[dim_index].unwrap_or((0, 0)),
        }
    }
}

#[inline]
fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

#[inline]
fn choose3(n: u64) -> u64 {
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 6
    }
}

/// Reusable buffers for counting.
#[derive(Default)]
pub(crate) struct Scratch {
    h: Vec<[u64; 2]>,
}

/// Count motifs of node `i` under `z`. Attribute columns are resolved
/// once per schema by the caller.
pub(crate) fn count_node(
    st: &MotifStructure,
    i: usize,
    z: &[u8],
    schema: &MotifSchema,
    attr_cols: &[Option<&[f64]>],
    scratch: &mut Scratch,
) -> MotifCounts {
    let nb = st.neighbors(i);
    let n1 = nb.iter().map(|&v| z[v as usize] as u64).sum::<u64>();
    let n0 = nb.len() as u64 - n1;
    let mut c = MotifCounts {
        dyad: [n0, n1],
        sampled: st.is_sampled(i),
        ..Default::default()
    };

    if schema.needs_pairs() {
        let zl = |a: u32| z[nb[a as usize] as usize] as usize;
        let edges = st.neighbor_edges(i);
        let mut closed = [0u64; 3];
        for e in edges {
            closed[zl(e[0]) + zl(e[1])] += 1;
        }
        let all = [choose2(n0), n0 * n1, choose2(n1)];
        c.closed_triad = closed;
        c.open_triad = [all[0] - closed[0], all[1] - closed[1], all[2] - closed[2]];

        if schema.needs_triangles() {
            // independent triples = all triples minus those touching at
            // least one edge, by inclusion-exclusion over edges, wedges
            // (edge pairs sharing a vertex) and triangles
            let all3 = [choose3(n0), choose2(n0) * n1, n0 * choose2(n1), choose3(n1)];
            let mut touched = [0i64; 4];
            scratch.h.clear();
            scratch.h.resize(nb.len(), [0, 0]);
            for e in edges {
                let (a, b) = (e[0] as usize, e[1] as usize);
                let (za, zb) = (zl(e[0]), zl(e[1]));
                let s = za + zb;
                let treated_left = n1 - s as u64;
                let control_left = n0 - (2 - s) as u64;
                touched[s + 1] += treated_left as i64;
                touched[s] += control_left as i64;
                scratch.h[a][zb] += 1;
                scratch.h[b][za] += 1;
            }
            for (a, h) in scratch.h.iter().enumerate() {
                let zv = zl(a as u32);
                touched[zv] -= choose2(h[0]) as i64;
                touched[zv + 1] -= (h[0] * h[1]) as i64;
                touched[zv + 2] -= choose2(h[1]) as i64;
            }
            for t in st.neighbor_triangles(i) {
                touched[zl(t[0]) + zl(t[1]) + zl(t[2])] += 1;
            }
            for k in 0..4 {
                c.open_star[k] = (all3[k] as i64 - touched[k]) as u64;
            }
        }
    }

    if attr_cols.iter().any(Option::is_some) {
        c.attr = schema
            .dims()
            .iter()
            .zip(attr_cols)
            .map(|(d, col)| match (d, col) {
                (Dim::AttrConditioned { value, treated, .. }, Some(col)) => {
                    let mut num = 0;
                    let mut den = 0;
                    for &v in nb {
                        if col[v as usize] == *value {
                            den += 1;
                            num += (z[v as usize] == *treated) as u64;
                        }
                    }
                    Some((num, den))
                }
                _ => None,
            })
            .collect();
    } else {
        c.attr = vec![None; schema.len()];
    }
    c
}

/// Resolve attribute columns referenced by the schema.
pub(crate) fn attr_columns<'g>(g: &'g Graph, schema: &MotifSchema) -> Result<Vec<Option<&'g [f64]>>> {
    schema.validate(g)?;
    Ok(schema
        .dims()
        .iter()
        .map(|d| match d {
            Dim::AttrConditioned { column, .. } => g.attr(column),
            _ => None,
        })
        .collect())
}

/// Motif counts for node `i` under assignment `z`.
pub fn count_causal_motifs(
    g: &Graph,
    i: usize,
    z: &[u8],
    schema: &MotifSchema,
    sampling: &SamplingConfig,
) -> Result<MotifCounts> {
    if i >= g.node_count() {
        return Err(Error::Index { index: i, len: g.node_count() });
    }
    if z.len() != g.node_count() {
        return Err(Error::Argument(format!(
            "assignment has {} entries, graph has {} nodes",
            z.len(),
            g.node_count()
        )));
    }
    sampling.check()?;
    let cols = attr_columns(g, schema)?;
    let parts = node_parts(g, i, sampling, schema.needs_pairs(), schema.needs_triangles());
    let single = MotifStructure {
        nbr_off: vec![0, parts.nbrs.len()],
        nbrs: parts.nbrs,
        edge_off: vec![0, parts.edges.len()],
        edges: parts.edges,
        tri_off: vec![0, parts.tris.len()],
        tris: parts.tris,
        sampled: vec![parts.sampled],
    };
    Ok(count_node(&single, 0, z, schema, &cols, &mut Scratch::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_edge_list;

    fn schema() -> MotifSchema {
        MotifSchema::parse("Z,2-1,3o-0,3c-0,4o-0").unwrap()
    }

    #[test]
    fn path_middle_node() {
        let g = parse_edge_list("0 1\n1 2").unwrap().0;
        let c = count_causal_motifs(&g, 1, &[1, 0, 1], &schema(), &SamplingConfig::exact()).unwrap();
        assert_eq!(c.dyad, [0, 2]);
        assert_eq!(c.open_triad, [0, 0, 1]);
        assert_eq!(c.total(Shape::ClosedTriad), 0);
    }

    #[test]
    fn triangle_closed() {
        let g = parse_edge_list("0 1\n1 2\n0 2").unwrap().0;
        let c = count_causal_motifs(&g, 0, &[0, 1, 1], &schema(), &SamplingConfig::exact()).unwrap();
        assert_eq!(c.closed_triad, [0, 0, 1]);
        assert_eq!(c.total(Shape::OpenTriad), 0);
    }

    #[test]
    fn isolate_is_empty() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap().0;
        let c = count_causal_motifs(&g, 2, &[1, 1, 0], &schema(), &SamplingConfig::exact()).unwrap();
        for s in Shape::ALL {
            assert_eq!(c.total(s), 0);
        }
    }

    #[test]
    fn star4_by_brute_force() {
        // ego 0 with neighbors 1..=6; edges among neighbors form a path,
        // a triangle and an isolated vertex
        let g = parse_edge_list("0 1\n0 2\n0 3\n0 4\n0 5\n0 6\n1 2\n2 3\n4 5\n5 6\n4 6").unwrap().0;
        let nb: Vec<usize> = g.neighbors(0).iter().map(|&v| v as usize).collect();
        for mask in 0u32..128 {
            let z: Vec<u8> = (0..7).map(|k| ((mask >> k) & 1) as u8).collect();
            let c = count_causal_motifs(&g, 0, &z, &schema(), &SamplingConfig::exact()).unwrap();
            let mut expect = [0u64; 4];
            for a in 0..nb.len() {
                for b in a + 1..nb.len() {
                    for d in b + 1..nb.len() {
                        let (x, y, w) = (nb[a], nb[b], nb[d]);
                        if !g.has_edge(x, y) && !g.has_edge(x, w) && !g.has_edge(y, w) {
                            expect[(z[x] + z[y] + z[w]) as usize] += 1;
                        }
                    }
                }
            }
            assert_eq!(c.open_star, expect, "mask {mask}");
        }
    }
}
