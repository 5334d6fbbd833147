//! Dinic's algorithm on integer capacities.
//!
//! Arcs are scanned in insertion order, so the flow found for a given network
//! is reproducible.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Arc {
    to: usize,
    cap: i64,
    flow: i64,
}

/// Directed network. Arc `i` is stored at slot `2i`, its residual twin at `2i + 1`.
#[derive(Debug, Clone, Default)]
pub struct MaxFlow {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl MaxFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len() / 2
    }

    pub fn add_node(&mut self) -> usize {
        self.adj.push(Vec::new());
        self.adj.len() - 1
    }

    /// Adds `u -> v` with capacity `cap` and returns its id.
    pub fn add_arc(&mut self, u: usize, v: usize, cap: i64) -> usize {
        assert!(cap >= 0, "negative capacity");
        let id = self.arcs.len() / 2;
        self.adj[u].push(self.arcs.len());
        self.arcs.push(Arc { to: v, cap, flow: 0 });
        self.adj[v].push(self.arcs.len());
        self.arcs.push(Arc { to: u, cap: 0, flow: 0 });
        id
    }

    pub fn flow(&self, arc: usize) -> i64 {
        self.arcs[2 * arc].flow
    }

    pub fn capacity(&self, arc: usize) -> i64 {
        self.arcs[2 * arc].cap
    }

    pub fn endpoints(&self, arc: usize) -> (usize, usize) {
        (self.arcs[2 * arc + 1].to, self.arcs[2 * arc].to)
    }

    /// Raises (or lowers, down to the current flow) the capacity of an arc.
    /// Existing flow stays valid, so a later [`MaxFlow::solve`] continues from it.
    pub fn set_capacity(&mut self, arc: usize, cap: i64) {
        let a = &mut self.arcs[2 * arc];
        assert!(cap >= a.flow, "capacity below current flow");
        a.cap = cap;
    }

    fn residual(&self, slot: usize) -> i64 {
        self.arcs[slot].cap - self.arcs[slot].flow
    }

    fn bfs(&self, s: usize, level: &mut [i32]) {
        level.fill(-1);
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &slot in &self.adj[u] {
                let v = self.arcs[slot].to;
                if level[v] < 0 && self.residual(slot) > 0 {
                    level[v] = level[u] + 1;
                    q.push_back(v);
                }
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: i64, level: &[i32], next: &mut [usize]) -> i64 {
        if u == t {
            return pushed;
        }
        while next[u] < self.adj[u].len() {
            let slot = self.adj[u][next[u]];
            let v = self.arcs[slot].to;
            let r = self.residual(slot);
            if r > 0 && level[v] == level[u] + 1 {
                let got = self.dfs(v, t, pushed.min(r), level, next);
                if got > 0 {
                    self.arcs[slot].flow += got;
                    self.arcs[slot ^ 1].flow -= got;
                    return got;
                }
            }
            next[u] += 1;
        }
        0
    }

    /// Augments to a maximum `s`-`t` flow and returns the flow added by this call.
    pub fn solve(&mut self, s: usize, t: usize) -> i64 {
        if s == t {
            return 0;
        }
        let n = self.adj.len();
        let mut level = vec![-1; n];
        let mut next = vec![0; n];
        let mut total = 0;
        loop {
            self.bfs(s, &mut level);
            if level[t] < 0 {
                return total;
            }
            next.fill(0);
            loop {
                let f = self.dfs(s, t, i64::MAX, &level, &mut next);
                if f == 0 {
                    break;
                }
                total += f;
            }
        }
    }

    /// Net flow out of `u`.
    pub fn excess_out(&self, u: usize) -> i64 {
        self.adj[u].iter().map(|&slot| self.arcs[slot].flow).sum()
    }

    /// Nodes reachable from `s` in the residual network.
    pub fn residual_reachable(&self, s: usize) -> Vec<bool> {
        let mut level = vec![-1; self.adj.len()];
        self.bfs(s, &mut level);
        level.into_iter().map(|l| l >= 0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_arc() {
        let mut g = MaxFlow::new(2);
        let a = g.add_arc(0, 1, 5);
        assert_eq!(g.solve(0, 1), 5);
        assert_eq!(g.flow(a), 5);
    }

    #[test]
    fn diamond_with_bottleneck() {
        let mut g = MaxFlow::new(4);
        g.add_arc(0, 1, 10);
        g.add_arc(0, 2, 10);
        g.add_arc(1, 3, 2);
        g.add_arc(2, 3, 1);
        g.add_arc(1, 2, 10);
        assert_eq!(g.solve(0, 3), 3);
    }

    #[test]
    fn needs_reverse_arc() {
        // Greedy path 0-1-2-3 must be partially undone.
        let mut g = MaxFlow::new(4);
        g.add_arc(0, 1, 1);
        g.add_arc(0, 2, 1);
        g.add_arc(1, 2, 1);
        g.add_arc(1, 3, 1);
        g.add_arc(2, 3, 1);
        assert_eq!(g.solve(0, 3), 2);
        for u in 1..3 {
            assert_eq!(g.excess_out(u), 0);
        }
    }

    #[test]
    fn disconnected_and_self() {
        let mut g = MaxFlow::new(3);
        g.add_arc(0, 1, 4);
        assert_eq!(g.solve(0, 2), 0);
        assert_eq!(g.solve(0, 0), 0);
    }

    #[test]
    fn incremental_capacity_raise() {
        let mut g = MaxFlow::new(3);
        g.add_arc(0, 1, 10);
        let b = g.add_arc(1, 2, 4);
        assert_eq!(g.solve(0, 2), 4);
        g.set_capacity(b, 7);
        assert_eq!(g.solve(0, 2), 3);
        assert_eq!(g.flow(b), 7);
        let reach = g.residual_reachable(0);
        assert!(reach[1] && !reach[2]);
    }
}
