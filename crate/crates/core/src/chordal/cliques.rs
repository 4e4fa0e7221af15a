use crate::chordal::graph::StructureGraph;
use crate::error::{Error, Result};

/// Maximal cliques of a chordal graph, each sorted ascending, ordered by
/// smallest member, then size, then lexicographically.
pub fn maximal_cliques(g: &StructureGraph) -> Result<Vec<Vec<usize>>> {
    let order = g.elimination_order().ok_or(Error::NotChordal)?;
    let n = g.vertex_count();
    let mut pos = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    // Every maximal clique is some vertex together with its later neighbours.
    let mut candidates: Vec<Vec<usize>> = order
        .iter()
        .map(|&v| {
            let mut c: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| pos[u] > pos[v]).collect();
            c.push(v);
            c.sort_unstable();
            c
        })
        .collect();
    candidates.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    candidates.dedup();
    let mut kept: Vec<Vec<usize>> = Vec::new();
    for c in candidates {
        if !kept.iter().any(|k| is_subset(&c, k)) {
            kept.push(c);
        }
    }
    kept.sort_by(|a, b| a[0].cmp(&b[0]).then(a.len().cmp(&b.len())).then_with(|| a.cmp(b)));
    Ok(kept)
}

/// Both slices sorted ascending.
fn is_subset(a: &[usize], b: &[usize]) -> bool {
    let mut it = b.iter();
    a.iter().all(|x| it.by_ref().any(|y| y == x))
}

/// Checks that every clique is complete in `g`, no clique contains another,
/// and every edge and vertex lies in some clique.
pub fn check_clique_cover(g: &StructureGraph, cliques: &[Vec<usize>]) -> Result<()> {
    for (p, c) in cliques.iter().enumerate() {
        for (a, &i) in c.iter().enumerate() {
            for &j in &c[a + 1..] {
                if !g.has_edge(i, j) {
                    return Err(Error::CoverGap(format!(
                        "clique {p} is not complete: ({i}, {j}) missing"
                    )));
                }
            }
        }
        for (q, d) in cliques.iter().enumerate() {
            if p != q && is_subset(c, d) {
                return Err(Error::CoverGap(format!("clique {p} is contained in clique {q}")));
            }
        }
    }
    for v in 0..g.vertex_count() {
        if !cliques.iter().any(|c| c.contains(&v)) {
            return Err(Error::CoverGap(format!("vertex {v} in no clique")));
        }
    }
    for (i, j) in g.edges() {
        if !cliques.iter().any(|c| c.contains(&i) && c.contains(&j)) {
            return Err(Error::CoverGap(format!("edge ({i}, {j}) in no clique")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chordal::graph::chordal_completion;

    fn chordal(n: usize, edges: &[(usize, usize)]) -> StructureGraph {
        chordal_completion(&StructureGraph::from_edges(n, edges.iter().copied())).graph
    }

    #[test]
    fn clique_examples() {
        let path = chordal(3, &[(0, 1), (1, 2)]);
        assert_eq!(maximal_cliques(&path).unwrap(), vec![vec![0, 1], vec![1, 2]]);
        let k4 = chordal(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(maximal_cliques(&k4).unwrap(), vec![vec![0, 1, 2, 3]]);
        let tri = chordal(4, &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
        let c = maximal_cliques(&tri).unwrap();
        assert_eq!(c, vec![vec![0, 1, 2], vec![1, 2, 3]]);
        check_clique_cover(&tri, &c).unwrap();
    }

    #[test]
    fn isolated_vertices_are_singleton_cliques() {
        let g = chordal(3, &[(0, 2)]);
        assert_eq!(maximal_cliques(&g).unwrap(), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn requires_chordal_certificate() {
        let cycle = StructureGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert!(matches!(maximal_cliques(&cycle), Err(Error::NotChordal)));
    }

    #[test]
    fn cover_check_catches_nesting_and_gaps() {
        let tri = chordal(3, &[(0, 1), (1, 2), (0, 2)]);
        assert!(check_clique_cover(&tri, &[vec![0, 1, 2], vec![0, 1]]).is_err());
        assert!(check_clique_cover(&tri, &[vec![0, 1]]).is_err());
    }
}
