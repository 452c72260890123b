//! Reverse Cuthill-McKee ordering.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

/// Permutation `perm[new] = old` of a symmetric graph given by adjacency
/// lists (no self loops needed). Each component starts from a
/// pseudo-peripheral vertex.
pub(crate) fn rcm(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for &seed in &by_degree {
        if seen[seed] {
            continue;
        }
        let start = peripheral(adj, seed, &seen);
        seen[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&u| !seen[u]));
            nbrs.sort_by_key(|&u| (adj[u].len(), u));
            nbrs.dedup();
            for &u in &nbrs {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Repeated BFS to the far end of the level structure while its depth grows.
fn peripheral(adj: &[Vec<usize>], seed: usize, blocked: &[bool]) -> usize {
    let mut v = seed;
    let mut depth = 0;
    for _ in 0..8 {
        let (far, d) = farthest(adj, v, blocked);
        if d <= depth {
            break;
        }
        depth = d;
        v = far;
    }
    v
}

fn farthest(adj: &[Vec<usize>], root: usize, blocked: &[bool]) -> (usize, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut best = (root, 0);
    while let Some(v) = queue.pop_front() {
        let l = level[v];
        let better = l > best.1 || (l == best.1 && adj[v].len() < adj[best.0].len());
        if better {
            best = (v, l);
        }
        for &u in &adj[v] {
            if !blocked[u] && level[u] == usize::MAX {
                level[u] = l + 1;
                queue.push_back(u);
            }
        }
    }
    best
}
