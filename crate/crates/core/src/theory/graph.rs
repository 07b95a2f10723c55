use std::collections::HashMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::objective::Triplet;

/// Conflict graph over triplets: two triplets are adjacent when they share
/// an observation `Φ(u, x)`, i.e. the same user and a common item. Per user
/// this is a rook grid (positives as rows, negatives as columns); triplets
/// of different users are never adjacent.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyGraph {
    nodes: Vec<Triplet>,
    /// Sorted, no self-loops, symmetric.
    adj: Vec<Vec<usize>>,
}

impl DependencyGraph {
    pub fn from_triplets(nodes: Vec<Triplet>) -> Self {
        let mut by_obs: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        for (a, t) in nodes.iter().enumerate() {
            by_obs.entry((t.user, t.pos)).or_default().push(a);
            if t.neg != t.pos {
                by_obs.entry((t.user, t.neg)).or_default().push(a);
            }
        }
        let mut adj = vec![Vec::new(); nodes.len()];
        for group in by_obs.values() {
            for &a in group {
                adj[a].extend(group.iter().copied().filter(|&b| b != a));
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        DependencyGraph { nodes, adj }
    }

    /// Single user `0` with positives `0..n_pos` and negatives
    /// `n_pos..n_pos + n_neg`; nodes in row-major order.
    pub fn rook_grid(n_pos: usize, n_neg: usize) -> Self {
        let mut nodes = Vec::with_capacity(n_pos * n_neg);
        for p in 0..n_pos as u32 {
            for q in 0..n_neg as u32 {
                nodes.push(Triplet::new(p, 0, n_pos as u32 + q));
            }
        }
        Self::from_triplets(nodes)
    }

    pub fn nodes(&self) -> &[Triplet] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, a: usize) -> &[usize] {
        &self.adj[a]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.adj[a].len()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected components, each listed in ascending node order; components
    /// ordered by their smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut comp = vec![usize::MAX; self.n_nodes()];
        let mut out = Vec::new();
        for start in 0..self.n_nodes() {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            comp[start] = id;
            let mut members = vec![start];
            let mut head = 0;
            while head < members.len() {
                let a = members[head];
                head += 1;
                for &b in &self.adj[a] {
                    if comp[b] == usize::MAX {
                        comp[b] = id;
                        members.push(b);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Adjacency restricted to `members`, in local indices.
    pub(crate) fn local_adjacency(&self, members: &[usize]) -> Vec<Vec<usize>> {
        let local: HashMap<usize, usize> =
            members.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        members
            .iter()
            .map(|&g| {
                let mut v: Vec<usize> = self.adj[g]
                    .iter()
                    .filter_map(|b| local.get(b).copied())
                    .collect();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

/// One node per triplet built from the first `n_pos` positives and first
/// `n_neg` negatives of each listed user (all eligible users when `users`
/// is `None`), users in the given order, each grid row-major. A user with
/// fewer items contributes a truncated grid; one with no positive or no
/// negative contributes nothing.
pub fn build_dependency_graph(
    ds: &Dataset,
    users: Option<&[u32]>,
    caps: (usize, usize),
) -> Result<DependencyGraph> {
    let (n_pos, n_neg) = caps;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "triplet caps must be at least 1, got ({n_pos}, {n_neg})"
        )));
    }
    let users = users.unwrap_or_else(|| ds.eligible_users());
    let mut nodes = Vec::new();
    for &u in users {
        if u as usize >= ds.n_users() {
            return Err(Error::IndexOutOfRange {
                index: u as usize,
                size: ds.n_users(),
            });
        }
        let pos = &ds.positives(u)[..ds.positives(u).len().min(n_pos)];
        let neg = &ds.negatives(u)[..ds.negatives(u).len().min(n_neg)];
        for &p in pos {
            for &q in neg {
                nodes.push(Triplet::new(p, u, q));
            }
        }
    }
    Ok(DependencyGraph::from_triplets(nodes))
}
