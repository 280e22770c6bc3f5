//! Independent vertex sets for the alternating schedule.

use crate::complex::GridTopology;

/// Partition of vertices into independent sets; color ids are dense.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexColoring {
    colors: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl VertexColoring {
    /// Builds a coloring from per-vertex colors, compacting ids to `0..k`
    /// in order of first use.
    pub fn from_colors(raw: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let colors: Vec<usize> = raw
            .iter()
            .map(|c| {
                let next = remap.len();
                *remap.entry(*c).or_insert(next)
            })
            .collect();
        let mut members = vec![Vec::new(); remap.len()];
        for (v, &c) in colors.iter().enumerate() {
            members[c].push(v);
        }
        Self { colors, members }
    }

    pub fn color(&self, v: usize) -> usize {
        self.colors[v]
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn color_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, color: usize) -> &[usize] {
        &self.members[color]
    }

    /// True iff no edge joins two vertices of the same color.
    pub fn verify_independent(&self, adjacency: &[Vec<usize>]) -> bool {
        adjacency.len() == self.colors.len()
            && adjacency
                .iter()
                .enumerate()
                .all(|(i, nbrs)| nbrs.iter().all(|&j| self.colors[i] != self.colors[j]))
    }
}

/// Two colors by lattice parity: `sum(coords) mod 2`.
pub fn grid_parity_coloring(topology: &GridTopology) -> VertexColoring {
    let colors: Vec<usize> = (0..topology.vertex_count())
        .map(|v| topology.coords(v).iter().sum::<usize>() % 2)
        .collect();
    let mut members = vec![Vec::new(), Vec::new()];
    for (v, &c) in colors.iter().enumerate() {
        members[c].push(v);
    }
    VertexColoring { colors, members }
}

/// Greedy coloring in decreasing-degree order (ties by index); uses at most
/// `max_degree + 1` colors.
pub fn greedy_coloring(adjacency: &[Vec<usize>]) -> VertexColoring {
    let n = adjacency.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| adjacency[b].len().cmp(&adjacency[a].len()).then(a.cmp(&b)));

    let mut colors = vec![usize::MAX; n];
    let mut taken = Vec::new();
    for &v in &order {
        taken.clear();
        taken.resize(adjacency[v].len() + 1, false);
        for &u in &adjacency[v] {
            let c = colors[u];
            if c < taken.len() {
                taken[c] = true;
            }
        }
        colors[v] = taken.iter().position(|&t| !t).unwrap_or(taken.len());
    }
    let count = colors.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); count];
    for (v, &c) in colors.iter().enumerate() {
        members[c].push(v);
    }
    VertexColoring { colors, members }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        adj
    }

    #[test]
    fn parity_labels() {
        let topo = GridTopology::new(&[4, 5]).unwrap();
        let c = grid_parity_coloring(&topo);
        assert_eq!(c.color(topo.index(&[0, 0])), 0);
        assert_eq!(c.color(topo.index(&[1, 0])), 1);
        assert_eq!(c.color(topo.index(&[2, 3])), 1);
        let topo3 = GridTopology::new(&[3, 3, 3]).unwrap();
        assert_eq!(grid_parity_coloring(&topo3).color(topo3.index(&[1, 1, 1])), 1);
    }

    #[test]
    fn parity_is_independent_on_grids() {
        for res in [vec![2, 2], vec![7, 3], vec![3, 4, 5]] {
            let (complex, topo, _) = crate::complex::build_grid::<f64>(&res).unwrap();
            let c = grid_parity_coloring(&topo);
            assert_eq!(c.color_count(), 2);
            assert!(c.verify_independent(complex.adjacency()));
        }
    }

    #[test]
    fn greedy_small_graphs() {
        let k3 = graph(3, &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(greedy_coloring(&k3).color_count(), 3);
        let path = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert_eq!(greedy_coloring(&path).color_count(), 2);
        let star = graph(7, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6)]);
        assert_eq!(greedy_coloring(&star).color_count(), 2);
    }

    #[test]
    fn monochrome_edge_is_detected() {
        let k2 = graph(2, &[(0, 1)]);
        assert!(!VertexColoring::from_colors(&[0, 0]).verify_independent(&k2));
        assert!(VertexColoring::from_colors(&[3, 9]).verify_independent(&k2));
    }

    #[test]
    fn from_colors_compacts_ids() {
        let c = VertexColoring::from_colors(&[5, 2, 5, 7]);
        assert_eq!(c.colors(), &[0, 1, 0, 2]);
        assert_eq!(c.members(0), &[0, 2]);
    }

    proptest! {
        #[test]
        fn greedy_is_valid_and_bounded(
            n in 1usize..50,
            raw in proptest::collection::vec((0usize..50, 0usize..50), 0..200),
        ) {
            let edges: Vec<_> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
            let adj = graph(n, &edges);
            let c = greedy_coloring(&adj);
            let max_deg = adj.iter().map(Vec::len).max().unwrap_or(0);
            prop_assert!(c.verify_independent(&adj));
            prop_assert!(c.color_count() <= max_deg + 1);
            prop_assert!((0..c.color_count()).all(|k| !c.members(k).is_empty()));
        }
    }
}
