//! Kernighan–Lin refinement of balanced bisections.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::graph::Graph;
use crate::seeds;

const MAX_PASSES: usize = 64;

/// Induced subgraph in local indices.
pub(crate) struct LocalGraph {
    offsets: Vec<usize>,
    adj: Vec<u32>,
}

impl LocalGraph {
    pub(crate) fn induced(g: &Graph, nodes: &[usize], scratch: &mut [u32]) -> Self {
        for (l, &v) in nodes.iter().enumerate() {
            scratch[v] = l as u32;
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        offsets.push(0);
        let mut adj = Vec::new();
        for &v in nodes {
            let start = adj.len();
            for &w in g.neighbors(v) {
                let l = scratch[w as usize];
                if l != u32::MAX && nodes.get(l as usize) == Some(&(w as usize)) {
                    adj.push(l);
                }
            }
            adj[start..].sort_unstable();
            offsets.push(adj.len());
        }
        for &v in nodes {
            scratch[v] = u32::MAX;
        }
        LocalGraph { offsets, adj }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[self.offsets[v]..self.offsets[v + 1]]
    }

    fn adjacent(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    pub(crate) fn cut(&self, side: &[u8]) -> usize {
        (0..self.len())
            .map(|u| {
                self.neighbors(u)
                    .iter()
                    .filter(|&&v| (v as usize) > u && side[v as usize] != side[u])
                    .count()
            })
            .sum()
    }

    fn gains(&self, side: &[u8]) -> Vec<i64> {
        (0..self.len())
            .map(|u| {
                self.neighbors(u)
                    .iter()
                    .map(|&v| if side[v as usize] != side[u] { 1 } else { -1 })
                    .sum()
            })
            .collect()
    }
}

/// Cut sizes before and after refinement of one bisection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BisectionStats {
    pub initial_cut: usize,
    pub refined_cut: usize,
    pub passes: usize,
}

/// Split `nodes` into two halves of sizes ⌈n/2⌉ and ⌊n/2⌋.
///
/// Starts from a random balanced split drawn from `seed`, then runs KL passes
/// until a pass yields no positive cumulative gain.
pub(crate) fn bisect(
    g: &Graph,
    nodes: &[usize],
    seed: u64,
    scratch: &mut [u32],
) -> (Vec<usize>, Vec<usize>, BisectionStats) {
    let n = nodes.len();
    let local = LocalGraph::induced(g, nodes, scratch);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, seeds::stream::PARTITION, n as u64));
    let mut side = vec![1u8; n];
    for &l in &order[..n.div_ceil(2)] {
        side[l] = 0;
    }
    let initial_cut = local.cut(&side);

    let mut passes = 0;
    while passes < MAX_PASSES {
        passes += 1;
        if !kl_pass(&local, &mut side) {
            break;
        }
    }
    let refined_cut = local.cut(&side);
    assert!(refined_cut <= initial_cut, "KL refinement increased the cut");

    let mut a = Vec::with_capacity(n.div_ceil(2));
    let mut b = Vec::with_capacity(n / 2);
    for (l, &v) in nodes.iter().enumerate() {
        if side[l] == 0 {
            a.push(v);
        } else {
            b.push(v);
        }
    }
    (
        a,
        b,
        BisectionStats {
            initial_cut,
            refined_cut,
            passes,
        },
    )
}

/// One KL pass. Returns true when the partition improved.
fn kl_pass(local: &LocalGraph, side: &mut [u8]) -> bool {
    let n = local.len();
    let mut d = local.gains(side);
    let mut tentative = side.to_vec();
    let mut locked = vec![false; n];
    let mut sets: [BTreeSet<(Reverse<i64>, u32)>; 2] = [BTreeSet::new(), BTreeSet::new()];
    for v in 0..n {
        sets[side[v] as usize].insert((Reverse(d[v]), v as u32));
    }

    let steps = sets[0].len().min(sets[1].len());
    let mut swaps = Vec::with_capacity(steps);
    let mut cumulative = 0i64;
    let mut best_total = 0i64;
    let mut best_k = 0usize;

    for k in 0..steps {
        let Some((a, b, gain)) = best_pair(local, &sets, &d) else {
            break;
        };
        sets[0].remove(&(Reverse(d[a]), a as u32));
        sets[1].remove(&(Reverse(d[b]), b as u32));
        locked[a] = true;
        locked[b] = true;
        for &(moved, from) in &[(a, 0u8), (b, 1u8)] {
            tentative[moved] = 1 - from;
            for &x in local.neighbors(moved) {
                let x = x as usize;
                if locked[x] {
                    continue;
                }
                let s = tentative[x] as usize;
                sets[s].remove(&(Reverse(d[x]), x as u32));
                d[x] += if tentative[x] == from { 2 } else { -2 };
                sets[s].insert((Reverse(d[x]), x as u32));
            }
        }
        swaps.push((a, b));
        cumulative += gain;
        if cumulative > best_total {
            best_total = cumulative;
            best_k = k + 1;
        }
    }

    if best_total <= 0 {
        return false;
    }
    for &(a, b) in &swaps[..best_k] {
        side[a] = 1;
        side[b] = 0;
    }
    true
}

/// Best unlocked swap `(a in side 0, b in side 1)` by gain
/// `D_a + D_b - 2·c_ab`, scanning both sides in (gain desc, index asc) order
/// and keeping the first strict maximum.
fn best_pair(
    local: &LocalGraph,
    sets: &[BTreeSet<(Reverse<i64>, u32)>; 2],
    d: &[i64],
) -> Option<(usize, usize, i64)> {
    let max_b = sets[1].iter().next().map(|&(Reverse(g), _)| g)?;
    let mut best: Option<(usize, usize, i64)> = None;
    for &(Reverse(da), a) in &sets[0] {
        if let Some((_, _, g)) = best {
            if da + max_b <= g {
                break;
            }
        }
        for &(Reverse(db), b) in &sets[1] {
            if let Some((_, _, g)) = best {
                if da + db <= g {
                    break;
                }
            }
            let adjacent = local.adjacent(a as usize, b as usize);
            let gain = da + db - if adjacent { 2 } else { 0 };
            if best.is_none_or(|(_, _, g)| gain > g) {
                best = Some((a as usize, b as usize, gain));
            }
            if !adjacent {
                break;
            }
        }
    }
    debug_assert!(best.is_none_or(|(a, b, g)| g == d[a] + d[b] - 2 * local.adjacent(a, b) as i64));
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn two_cliques() -> Graph {
        let mut e = vec![];
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    e.push((base + i, base + j));
                }
            }
        }
        e.push((3, 4));
        Graph::from_edges(8, &e).unwrap().0
    }

    /// Smallest cut over every balanced bisection, by enumeration.
    fn min_balanced_cut(g: &Graph) -> usize {
        let n = g.node_count();
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == n / 2)
            .map(|m| g.edges().filter(|&(u, v)| ((m >> u) & 1) != ((m >> v) & 1)).count())
            .min()
            .unwrap()
    }

    #[test]
    fn finds_clique_split() {
        let g = two_cliques();
        assert_eq!(min_balanced_cut(&g), 1);
        let nodes: Vec<usize> = (0..8).collect();
        let mut scratch = vec![u32::MAX; 8];
        for seed in 0..10 {
            let (mut a, mut b, stats) = bisect(&g, &nodes, seed, &mut scratch);
            a.sort();
            b.sort();
            assert_eq!(stats.refined_cut, 1, "seed {seed}");
            let halves = [vec![0, 1, 2, 3], vec![4, 5, 6, 7]];
            assert!(halves.contains(&a) && halves.contains(&b));
        }
    }

    #[test]
    fn odd_sizes_balanced() {
        let g = Graph::from_edges(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]).unwrap().0;
        let nodes: Vec<usize> = (0..7).collect();
        let mut scratch = vec![u32::MAX; 7];
        let (a, b, s) = bisect(&g, &nodes, 3, &mut scratch);
        assert_eq!((a.len(), b.len()), (4, 3));
        assert_eq!(s.refined_cut, 1);
    }
}
