//! Structure graph of `Qbar` and its chordal completion.

use std::collections::BTreeSet;

use crate::model::Interconnection;

/// Undirected graph on agent indices. Self-loops are never stored; diagonal
/// blocks are implicitly present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureGraph {
    adj: Vec<BTreeSet<usize>>,
    /// Perfect elimination order, present once the graph is known to be chordal.
    order: Option<Vec<usize>>,
}

impl StructureGraph {
    pub fn new(n: usize) -> Self {
        Self {
            adj: vec![BTreeSet::new(); n],
            order: None,
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::new(n);
        for (i, j) in edges {
            g.add_edge(i, j);
        }
        g
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i < self.adj.len() && j < self.adj.len(), "edge ({i}, {j}) out of range");
        if i != j && self.adj[i].insert(j) {
            self.adj[j].insert(i);
            self.order = None;
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].contains(&j)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    /// Edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.adj.iter().enumerate() {
            out.extend(nb.range(i + 1..).map(|&j| (i, j)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_chordal(&self) -> bool {
        self.order.is_some() || is_perfect_elimination_order(self, &mcs_elimination_order(self))
    }

    pub fn elimination_order(&self) -> Option<&[usize]> {
        self.order.as_deref()
    }

    /// Records a perfect elimination order after checking it.
    pub fn with_elimination_order(mut self, order: Vec<usize>) -> Option<Self> {
        if is_perfect_elimination_order(&self, &order) {
            self.order = Some(order);
            Some(self)
        } else {
            None
        }
    }

    /// Attaches an elimination order if the graph is chordal.
    pub fn certify_chordal(self) -> Option<Self> {
        let order = mcs_elimination_order(&self);
        self.with_elimination_order(order)
    }
}

/// `(i, j)` is an edge iff `H` couples them directly in either direction, or
/// some agent receives from both.
pub fn build_qbar_graph(h: &Interconnection) -> StructureGraph {
    let n = h.n_agents();
    let mut g = StructureGraph::new(n);
    for ((i, j), _) in h.blocks() {
        g.add_edge(i, j);
    }
    for k in 0..n {
        let sources = h.sources_of(k);
        for (a, &i) in sources.iter().enumerate() {
            for &j in &sources[a + 1..] {
                g.add_edge(i, j);
            }
        }
    }
    g
}

/// Reverse of a maximum cardinality search visit order. For a chordal graph
/// this is a perfect elimination order. Ties go to the lowest index.
pub fn mcs_elimination_order(g: &StructureGraph) -> Vec<usize> {
    let n = g.vertex_count();
    let mut weight = vec![0usize; n];
    let mut done = vec![false; n];
    let mut visit = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !done[v])
            .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
            .expect("unvisited vertex");
        done[v] = true;
        visit.push(v);
        for &u in g.neighbors(v) {
            if !done[u] {
                weight[u] += 1;
            }
        }
    }
    visit.reverse();
    visit
}

/// Checks that every vertex's later neighbours form a clique.
pub fn is_perfect_elimination_order(g: &StructureGraph, order: &[usize]) -> bool {
    let n = g.vertex_count();
    if order.len() != n {
        return false;
    }
    let mut pos = vec![usize::MAX; n];
    for (k, &v) in order.iter().enumerate() {
        if v >= n || pos[v] != usize::MAX {
            return false;
        }
        pos[v] = k;
    }
    // Standard linear-time test: for each v, its earliest later neighbour u
    // must be adjacent to all of v's other later neighbours.
    for &v in order {
        let later: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| pos[u] > pos[v]).collect();
        let Some(&u) = later.iter().min_by_key(|&&u| pos[u]) else {
            continue;
        };
        if later.iter().any(|&w| w != u && !g.has_edge(u, w)) {
            return false;
        }
    }
    true
}

/// Result of completing a graph to a chordal one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub graph: StructureGraph,
    /// Edges added, `(i, j)` with `i < j`, sorted.
    pub fill_in: Vec<(usize, usize)>,
}

/// Minimum-degree elimination with lowest-index tie breaking. Chordal inputs
/// come back unchanged, so the completion is idempotent.
pub fn chordal_completion(g: &StructureGraph) -> Completion {
    if let Some(graph) = g.clone().certify_chordal() {
        return Completion {
            graph,
            fill_in: Vec::new(),
        };
    }
    let n = g.vertex_count();
    let mut work: Vec<BTreeSet<usize>> = (0..n).map(|v| g.neighbors(v).clone()).collect();
    let mut alive = vec![true; n];
    let mut out = g.clone();
    let mut fill = BTreeSet::new();
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| (work[v].len(), v))
            .expect("live vertex");
        let nb: Vec<usize> = work[v].iter().copied().collect();
        for (a, &x) in nb.iter().enumerate() {
            for &y in &nb[a + 1..] {
                if work[x].insert(y) {
                    work[y].insert(x);
                    out.add_edge(x, y);
                    fill.insert((x.min(y), x.max(y)));
                }
            }
        }
        for &x in &nb {
            work[x].remove(&v);
        }
        alive[v] = false;
        order.push(v);
    }
    let graph = out
        .with_elimination_order(order)
        .expect("elimination game yields a perfect elimination order");
    debug_assert!(is_perfect_elimination_order(&graph, &mcs_elimination_order(&graph)));
    Completion {
        graph,
        fill_in: fill.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::model::Interconnection;

    fn h(n: usize, blocks: &[(usize, usize)]) -> Interconnection {
        let mut h = Interconnection::new(vec![1; n], vec![1; n]);
        for &(i, j) in blocks {
            h.insert(i, j, Mat::from_element(1, 1, 1.0));
        }
        h
    }

    #[test]
    fn qbar_graph_rule() {
        assert_eq!(build_qbar_graph(&h(2, &[(1, 0)])).edges(), vec![(0, 1)]);
        // fan-out from one source does not densify
        assert_eq!(
            build_qbar_graph(&h(4, &[(1, 0), (2, 0), (3, 0)])).edges(),
            vec![(0, 1), (0, 2), (0, 3)]
        );
        // fan-in does
        assert_eq!(
            build_qbar_graph(&h(3, &[(0, 1), (0, 2)])).edges(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
    }

    #[test]
    fn completion_examples() {
        let cycle = StructureGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert!(!cycle.is_chordal());
        let c = chordal_completion(&cycle);
        assert_eq!(c.fill_in, vec![(1, 3)]);
        assert!(c.graph.is_chordal());

        let tree = StructureGraph::from_edges(5, [(0, 1), (0, 2), (2, 3), (2, 4)]);
        let c = chordal_completion(&tree);
        assert!(c.fill_in.is_empty());
        assert_eq!(c.graph.edges(), tree.edges());

        let k4 = StructureGraph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert!(chordal_completion(&k4).fill_in.is_empty());
    }

    #[test]
    fn completion_is_idempotent() {
        let g = StructureGraph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]);
        let once = chordal_completion(&g);
        let twice = chordal_completion(&once.graph);
        assert!(twice.fill_in.is_empty());
        assert_eq!(once.graph.edges(), twice.graph.edges());
    }

    #[test]
    fn peo_check_rejects_bad_orders() {
        let path = StructureGraph::from_edges(3, [(0, 1), (1, 2)]);
        assert!(is_perfect_elimination_order(&path, &[0, 1, 2]));
        assert!(!is_perfect_elimination_order(&path, &[1, 0, 2]));
        assert!(!is_perfect_elimination_order(&path, &[0, 1]));
    }
}
