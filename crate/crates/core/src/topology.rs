//! Measurement graph between APs and its distance-2 coloring.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Undirected AP graph with edges stored as `(l1, l2)`, `l1 < l2`, in
/// lexicographic order. Edge `m` is row `m` of the incidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ApGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    /// Link strength of the weakest accepted edge; infinite for hand-built graphs.
    pub threshold: f64,
}

impl ApGraph {
    /// Graph from an explicit edge list; endpoints may come in either order.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b || a >= num_nodes || b >= num_nodes {
                return Err(invalid(format!(
                    "bad edge ({a}, {b}) for {num_nodes} nodes"
                )));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(a, b) in &norm {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for n in &mut adjacency {
            n.sort_unstable();
        }
        Ok(Self {
            num_nodes,
            edges: norm,
            adjacency,
            threshold: f64::INFINITY,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Index of the edge joining `a` and `b`, in either order.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&(a.min(b), a.max(b))).ok()
    }

    /// `M x L` incidence matrix: `-1` at the first endpoint, `+1` at the second.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.edges.len(), self.num_nodes);
        for (m, &(l1, l2)) in self.edges.iter().enumerate() {
            b[(m, l1)] = -1.0;
            b[(m, l2)] = 1.0;
        }
        b
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Neighbors at distance one or two, sorted.
    pub fn square_neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &w in &self.adjacency[v] {
            out.push(w);
            out.extend(self.adjacency[w].iter().copied().filter(|&x| x != v));
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    sets: usize,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            sets: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
            self.sets -= 1;
        }
    }
}

/// Keeps the strongest links: the largest threshold `lambda` for which the
/// graph of links with strength `>= lambda` is connected and has at least
/// `m_min` edges.
///
/// `strength` is a symmetric `L x L` matrix (for example Frobenius norms of
/// the inter-AP channels); its diagonal is ignored.
pub fn build_graph(strength: &DMatrix<f64>, m_min: usize) -> Result<ApGraph> {
    let l = strength.nrows();
    if l < 2 || strength.ncols() != l {
        return Err(invalid("a measurement graph needs at least two APs"));
    }
    let max_edges = l * (l - 1) / 2;
    if m_min > max_edges {
        return Err(invalid(format!(
            "m_min = {m_min} exceeds the {max_edges} possible edges"
        )));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(max_edges);
    for i in 0..l {
        for j in (i + 1)..l {
            candidates.push((strength[(i, j)], i, j));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut sets = DisjointSets::new(l);
    let mut taken = 0;
    let mut lambda = f64::INFINITY;
    for &(s, i, j) in &candidates {
        if sets.sets == 1 && taken >= m_min && s < lambda {
            break;
        }
        sets.union(i, j);
        taken += 1;
        lambda = s;
    }
    let edges: Vec<(usize, usize)> = candidates[..taken]
        .iter()
        .map(|&(_, i, j)| (i, j))
        .collect();
    let mut g = ApGraph::from_edges(l, &edges)?;
    g.threshold = lambda;
    Ok(g)
}

/// Node colors such that nodes within distance two differ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub colors: Vec<usize>,
    pub num_colors: usize,
}

impl Coloring {
    /// Nodes of color `c`, ascending.
    pub fn group(&self, c: usize) -> Vec<usize> {
        (0..self.colors.len())
            .filter(|&v| self.colors[v] == c)
            .collect()
    }

    /// True when no two nodes within distance two share a color.
    pub fn is_valid_for(&self, graph: &ApGraph) -> bool {
        (0..graph.num_nodes()).all(|v| {
            graph
                .square_neighbors(v)
                .into_iter()
                .all(|w| self.colors[w] != self.colors[v])
        })
    }
}

/// Greedy Welsh-Powell coloring of the square graph.
///
/// Nodes are visited by descending square-graph degree, ties by ascending
/// index; each takes the smallest color unused by its colored square
/// neighbors. Color 0 therefore holds the first visited node.
pub fn distance2_coloring(graph: &ApGraph) -> Coloring {
    let l = graph.num_nodes();
    let square: Vec<Vec<usize>> = (0..l).map(|v| graph.square_neighbors(v)).collect();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| square[b].len().cmp(&square[a].len()).then(a.cmp(&b)));
    let mut colors = vec![usize::MAX; l];
    let mut num_colors = 0;
    for &v in &order {
        let mut used = vec![false; num_colors + 1];
        for &w in &square[v] {
            if colors[w] != usize::MAX {
                used[colors[w]] = true;
            }
        }
        let c = used.iter().position(|&u| !u).unwrap();
        colors[v] = c;
        num_colors = num_colors.max(c + 1);
    }
    Coloring { colors, num_colors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The five-AP example graph (0-based labels).
    pub(crate) fn five_ap_graph() -> ApGraph {
        ApGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 0), (1, 4), (0, 2)]).unwrap()
    }

    #[test]
    fn two_nodes() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]);
        let g = build_graph(&s, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.incidence(), DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]));
        assert_eq!(distance2_coloring(&g).num_colors, 2);
    }

    #[test]
    fn complete_when_m_min_is_max() {
        let s = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + (i * 7 + j * 3) as f64));
        let s = (&s + s.transpose()) * 0.5;
        let g = build_graph(&s, 10).unwrap();
        assert_eq!(g.num_edges(), 10);
        assert_eq!(distance2_coloring(&g).num_colors, 5);
        assert!(build_graph(&s, 11).is_err());
    }

    #[test]
    fn line_with_decaying_strengths() {
        // Nodes on a line at 0, 1, 2, 3; strength 2^-distance.
        let s = DMatrix::from_fn(4, 4, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let g = build_graph(&s, 3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(g.threshold, 0.5);
    }

    #[test]
    fn ties_at_threshold_are_kept() {
        let s = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(build_graph(&s, 2).unwrap().num_edges(), 3);
    }

    #[test]
    fn five_ap_coloring() {
        let g = five_ap_graph();
        let c = distance2_coloring(&g);
        assert_eq!(c.num_colors, 4);
        assert_eq!(c.colors[3], c.colors[4]);
        assert!(c.is_valid_for(&g));
    }

    /// Brute force: scan every distinct strength as a threshold, keep the largest feasible.
    fn brute_force(s: &DMatrix<f64>, m_min: usize) -> Vec<(usize, usize)> {
        let l = s.nrows();
        let mut lambdas: Vec<f64> = (0..l)
            .flat_map(|i| ((i + 1)..l).map(move |j| (i, j)))
            .map(|(i, j)| s[(i, j)])
            .collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        for lam in lambdas {
            let e: Vec<(usize, usize)> = (0..l)
                .flat_map(|i| ((i + 1)..l).map(move |j| (i, j)))
                .filter(|&(i, j)| s[(i, j)] >= lam)
                .collect();
            let g = ApGraph::from_edges(l, &e).unwrap();
            if g.is_connected() && e.len() >= m_min {
                return e;
            }
        }
        unreachable!()
    }

    fn sym_strengths(l: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(0u32..20, l * l).prop_map(move |v| {
            let m = DMatrix::from_fn(l, l, |i, j| v[i * l + j] as f64);
            &m + m.transpose()
        })
    }

    proptest! {
        #[test]
        fn threshold_matches_brute_force(
            (s, m_min) in (2usize..8).prop_flat_map(|l| (sym_strengths(l), 0..=(l * (l - 1) / 2)))
        ) {
            let g = build_graph(&s, m_min).unwrap();
            prop_assert!(g.is_connected());
            prop_assert!(g.num_edges() >= m_min.max(s.nrows() - 1));
            let expected = brute_force(&s, m_min);
            prop_assert_eq!(g.edges(), expected.as_slice());
        }

        #[test]
        fn coloring_is_valid(s in (2usize..=16).prop_flat_map(sym_strengths), extra in 0usize..6) {
            let l = s.nrows();
            let g = build_graph(&s, (l - 1 + extra).min(l * (l - 1) / 2)).unwrap();
            let c = distance2_coloring(&g);
            prop_assert!(c.is_valid_for(&g));
            let max_deg = (0..l).map(|v| g.neighbors(v).len()).max().unwrap();
            prop_assert!(c.num_colors > max_deg);
        }
    }
}
