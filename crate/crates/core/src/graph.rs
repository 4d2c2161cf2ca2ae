//! Immutable undirected graph storage and neighborhood queries.
//!
//! Nodes are re-indexed densely to `0..n` in order of first appearance.
//! Adjacency is kept in compressed sorted rows so that neighbor-set
//! intersections are linear merges.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named numeric node attributes; every column has one entry per node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttrTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl AttrTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn insert(&mut self, name: &str, values: Vec<f64>) {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name.to_string());
                self.columns.push(values);
            }
        }
    }
}

/// Simple undirected graph with dense node indices.
#[derive(Debug, Clone)]
pub struct Graph {
    offsets: Vec<usize>,
    adj: Vec<u32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    attrs: AttrTable,
}

/// Bookkeeping returned by the loaders.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub duplicate_edges: usize,
    pub self_loops: usize,
    pub attribute_only_nodes: usize,
}

impl LoadStats {
    pub fn dropped(&self) -> usize {
        self.duplicate_edges + self.self_loops
    }
}

/// What to do with attribute rows whose id never appears in the edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttrIdPolicy {
    /// Add them as isolated nodes.
    #[default]
    IncludeIsolates,
    /// Refuse the table and list the offending ids.
    RequireKnown,
}

/// Vertex-induced subgraph around a center node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoNetwork {
    pub center: usize,
    pub hop: usize,
    /// Sorted member indices.
    pub members: Vec<usize>,
    /// Induced edges `(u, v)` with `u < v`, sorted.
    pub induced_edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Build from dense edges over `0..n`. Self-loops and duplicates are
    /// dropped and counted.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<(Self, LoadStats)> {
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::from_parts(ids, edges.iter().copied(), AttrTable::default())
    }

    fn from_parts(
        ids: Vec<String>,
        edges: impl Iterator<Item = (usize, usize)>,
        attrs: AttrTable,
    ) -> Result<(Self, LoadStats)> {
        let n = ids.len();
        let mut stats = LoadStats::default();
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Index { index: u.max(v), len: n });
            }
            if u == v {
                stats.self_loops += 1;
                continue;
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            pairs.push((a as u32, b as u32));
        }
        let before = pairs.len();
        pairs.sort_unstable();
        pairs.dedup();
        stats.duplicate_edges = before - pairs.len();

        let mut deg = vec![0usize; n];
        for &(a, b) in &pairs {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut adj = vec![0u32; offsets[n]];
        for &(a, b) in &pairs {
            adj[fill[a as usize]] = b;
            fill[a as usize] += 1;
            adj[fill[b as usize]] = a;
            fill[b as usize] += 1;
        }
        for i in 0..n {
            adj[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok((
            Graph {
                offsets,
                adj,
                ids,
                index,
                attrs,
            },
            stats,
        ))
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    #[inline]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let (a, b) = if self.degree(u) <= self.degree(v) { (u, v) } else { (v, u) };
        self.neighbors(a).binary_search(&(b as u32)).is_ok()
    }

    /// Edges `(u, v)` with `u < v` in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| (v as usize) > u)
                .map(move |&v| (u, v as usize))
        })
    }

    pub fn external_id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn external_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn attrs(&self) -> &AttrTable {
        &self.attrs
    }

    pub fn attr(&self, name: &str) -> Option<&[f64]> {
        self.attrs.column(name)
    }

    /// Return a copy with `name` set to `values` (one per node).
    pub fn with_attribute(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.node_count() {
            return Err(Error::Argument(format!(
                "attribute {name} has {} entries, graph has {} nodes",
                values.len(),
                self.node_count()
            )));
        }
        self.attrs.insert(name, values);
        Ok(self)
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.node_count() {
            Err(Error::Index { index: i, len: self.node_count() })
        } else {
            Ok(())
        }
    }

    /// n-hop ego network: members reachable within `hop` steps and all
    /// graph edges among them.
    pub fn ego_network(&self, i: usize, hop: usize) -> Result<EgoNetwork> {
        self.check_node(i)?;
        let members = self.ball(i, hop);
        let mut induced_edges = Vec::new();
        for &u in &members {
            for &v in self.neighbors(u) {
                let v = v as usize;
                if v > u && members.binary_search(&v).is_ok() {
                    induced_edges.push((u, v));
                }
            }
        }
        Ok(EgoNetwork {
            center: i,
            hop,
            members,
            induced_edges,
        })
    }

    /// Sorted node set within `hop` steps of `i`.
    pub fn ball(&self, i: usize, hop: usize) -> Vec<usize> {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        seen.insert(i);
        let mut frontier = VecDeque::from([(i, 0usize)]);
        while let Some((u, d)) = frontier.pop_front() {
            if d == hop {
                continue;
            }
            for &v in self.neighbors(u) {
                if seen.insert(v as usize) {
                    frontier.push_back((v as usize, d + 1));
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Number of neighbors shared by `i` and `j`.
    pub fn common_neighbor_count(&self, i: usize, j: usize) -> Result<usize> {
        self.check_node(i)?;
        self.check_node(j)?;
        if i == j {
            return Err(Error::Argument("common_neighbor_count needs i != j".into()));
        }
        Ok(sorted_intersection_count(self.neighbors(i), self.neighbors(j)))
    }

    /// Mean local clustering coefficient; nodes of degree < 2 count as 0.
    pub fn average_clustering(&self) -> f64 {
        let n = self.node_count();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = (0..n)
            .map(|u| {
                let d = self.degree(u);
                if d < 2 {
                    return 0.0;
                }
                let links: usize = self
                    .neighbors(u)
                    .iter()
                    .map(|&v| sorted_intersection_count(self.neighbors(u), self.neighbors(v as usize)))
                    .sum();
                // each neighbor-neighbor link was seen from both ends
                links as f64 / (d * (d - 1)) as f64
            })
            .sum();
        total / n as f64
    }

    /// Write one `u v` line per edge using external ids.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        for (u, v) in self.edges() {
            writeln!(out, "{} {}", self.ids[u], self.ids[v])?;
        }
        Ok(())
    }

    /// Write the attribute table as CSV (`node_id,<columns>`).
    pub fn write_attributes<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["node_id".to_string()];
        header.extend(self.attrs.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.node_count() {
            let mut rec = vec![self.ids[i].clone()];
            rec.extend(self.attrs.columns.iter().map(|c| fmt_num(c[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Size of the intersection of two ascending slices.
#[inline]
pub fn sorted_intersection_count(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// Read an edge list (and optionally an attribute CSV) into a [`Graph`].
///
/// Edge lines hold two whitespace-separated ids; blank lines and lines
/// starting with `#` are skipped.
pub fn load_edge_list<R: BufRead, A: std::io::Read>(
    source: R,
    attr_source: Option<A>,
    policy: AttrIdPolicy,
) -> Result<(Graph, LoadStats)> {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    fn intern(s: &str, ids: &mut Vec<String>, index: &mut HashMap<String, usize>) -> usize {
        if let Some(&i) = index.get(s) {
            return i;
        }
        let i = ids.len();
        ids.push(s.to_string());
        index.insert(s.to_string(), i);
        i
    }

    let mut edges = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut parts = t.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected two node ids, got {t:?}"),
            });
        };
        let u = intern(a, &mut ids, &mut index);
        let v = intern(b, &mut ids, &mut index);
        edges.push((u, v));
    }
    let edge_nodes = ids.len();

    let mut attrs = AttrTable::default();
    let mut attr_only = 0;
    if let Some(src) = attr_source {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("node_id") {
            return Err(Error::Parse {
                line: 1,
                message: "attribute header must start with node_id".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        let mut unknown = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let id = rec.get(0).unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Parse { line, message: "empty node_id".into() });
            }
            let mut vals = Vec::with_capacity(names.len());
            for (c, name) in names.iter().enumerate() {
                let raw = rec.get(c + 1).unwrap_or("");
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column {name}: {raw:?} is not numeric"),
                })?;
                vals.push(v);
            }
            if !index.contains_key(&id) {
                match policy {
                    AttrIdPolicy::IncludeIsolates => {
                        intern(&id, &mut ids, &mut index);
                        attr_only += 1;
                    }
                    AttrIdPolicy::RequireKnown => unknown.push(id.clone()),
                }
            }
            rows.push((id, vals));
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownAttributeIds(unknown));
        }
        let mut columns = vec![vec![f64::NAN; ids.len()]; names.len()];
        for (id, vals) in rows {
            let i = index[&id];
            for (c, v) in vals.into_iter().enumerate() {
                columns[c][i] = v;
            }
        }
        attrs = AttrTable { names, columns };
    }
    debug_assert!(ids.len() >= edge_nodes);

    let (g, mut stats) = Graph::from_parts(ids, edges.into_iter(), attrs)?;
    stats.attribute_only_nodes = attr_only;
    Ok((g, stats))
}

/// Read a `node_id,y` outcome table aligned to the graph.
pub fn read_outcomes<R: std::io::Read>(g: &Graph, src: R) -> Result<Vec<f64>> {
    let y = crate::randomization::read_id_table(g, src, &["y"])?.remove(0);
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("outcome for node {} is not finite", g.external_id(i))));
    }
    Ok(y)
}

/// Convenience wrapper for in-memory edge-list text without attributes.
pub fn parse_edge_list(text: &str) -> Result<(Graph, LoadStats)> {
    load_edge_list(text.as_bytes(), None::<&[u8]>, AttrIdPolicy::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        parse_edge_list("0 1\n1 2").unwrap().0
    }

    #[test]
    fn load_simple() {
        let (g, stats) = parse_edge_list("0 1\n1 2").unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (3, 2));
        assert_eq!(stats.dropped(), 0);
    }

    #[test]
    fn load_drops_duplicates_and_loops() {
        let (g, stats) = parse_edge_list("0 1\n1 0\n1 1").unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        assert_eq!(stats.dropped(), 2);
        assert_eq!(stats.self_loops, 1);
        assert_eq!(stats.duplicate_edges, 1);
    }

    #[test]
    fn comments_and_blank_lines() {
        let (g, _) = parse_edge_list("# header\n\n5 7\n  # indented\n7 9\n").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.index_of("9"), Some(2));
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_edge_list("0 1\n1 2 3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(parse_edge_list("0\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn attributes_and_isolates() {
        let attrs = "node_id,X,age\n0,1,30\n2,0,41\n9,1,22\n";
        let (g, stats) = load_edge_list(
            "0 1\n1 2".as_bytes(),
            Some(attrs.as_bytes()),
            AttrIdPolicy::IncludeIsolates,
        )
        .unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(stats.attribute_only_nodes, 1);
        let x = g.attr("X").unwrap();
        assert_eq!(x.len(), 4);
        assert_eq!(x[0], 1.0);
        assert!(x[1].is_nan());
        assert_eq!(x[g.index_of("9").unwrap()], 1.0);
        assert_eq!(g.degree(g.index_of("9").unwrap()), 0);
    }

    #[test]
    fn unknown_attribute_ids_listed() {
        let attrs = "node_id,X\n0,1\n77,0\n88,1\n";
        let err = load_edge_list("0 1".as_bytes(), Some(attrs.as_bytes()), AttrIdPolicy::RequireKnown)
            .unwrap_err();
        match err {
            Error::UnknownAttributeIds(ids) => assert_eq!(ids, vec!["77", "88"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_numeric_attribute() {
        let attrs = "node_id,X\n0,yes\n";
        let err = load_edge_list("0 1".as_bytes(), Some(attrs.as_bytes()), AttrIdPolicy::default())
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn ego_network_path() {
        let g = path3();
        let e0 = g.ego_network(0, 0).unwrap();
        assert_eq!(e0.members, vec![0]);
        assert!(e0.induced_edges.is_empty());
        let e1 = g.ego_network(0, 1).unwrap();
        assert_eq!(e1.members, vec![0, 1]);
        assert_eq!(e1.induced_edges, vec![(0, 1)]);
        let e2 = g.ego_network(0, 2).unwrap();
        assert_eq!(e2.members, vec![0, 1, 2]);
        assert_eq!(e2.induced_edges, vec![(0, 1), (1, 2)]);
        assert!(matches!(g.ego_network(3, 1), Err(Error::Index { .. })));
    }

    #[test]
    fn common_neighbors() {
        let tri = parse_edge_list("0 1\n1 2\n0 2").unwrap().0;
        assert_eq!(tri.common_neighbor_count(0, 1).unwrap(), 1);
        let p = path3();
        assert_eq!(p.common_neighbor_count(0, 2).unwrap(), 1);
        assert_eq!(p.common_neighbor_count(0, 1).unwrap(), 0);
        assert!(matches!(p.common_neighbor_count(1, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn clustering_of_triangle_and_star() {
        let tri = parse_edge_list("0 1\n1 2\n0 2").unwrap().0;
        assert!((tri.average_clustering() - 1.0).abs() < 1e-12);
        let star = parse_edge_list("0 1\n0 2\n0 3").unwrap().0;
        assert_eq!(star.average_clustering(), 0.0);
    }
}
