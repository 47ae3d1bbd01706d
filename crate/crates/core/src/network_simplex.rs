//! Primal network simplex for uncapacitated min-cost flow.
//!
//! Arcs have unbounded capacity and nonnegative flow. Supplies must sum to
//! zero. The spanning-tree structure uses an artificial root with one arc per
//! node; pivots keep the tree strongly feasible so degenerate pivots cannot
//! cycle. After each pivot the tree is re-derived from its arc set, which is
//! simple and fast enough for the graph sizes in this crate.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArcState {
    Tree,
    Lower,
}

/// Solution of a min-cost flow problem.
#[derive(Debug, Clone)]
pub struct FlowSolution<T> {
    pub cost: T,
    /// Flow on each user arc, in insertion order.
    pub flow: Vec<T>,
    /// Node potentials `π` with `cost_a + π_source - π_target ≥ 0` on all arcs.
    pub potential: Vec<T>,
}

/// Builder and solver for an uncapacitated min-cost flow problem.
#[derive(Debug, Clone, Default)]
pub struct NetworkSimplex<T> {
    supply: Vec<T>,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<T>,
}

impl<T: Real> NetworkSimplex<T> {
    /// `supply[v] > 0` is net outflow, `< 0` net inflow.
    pub fn new(supply: Vec<T>) -> Self {
        Self {
            supply,
            source: Vec::new(),
            target: Vec::new(),
            cost: Vec::new(),
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cost: T) -> usize {
        self.source.push(from);
        self.target.push(to);
        self.cost.push(cost);
        self.source.len() - 1
    }

    pub fn solve(&self) -> Result<FlowSolution<T>> {
        let n = self.supply.len();
        let m = self.source.len();
        if self.cost.iter().any(|c| !c.is_finite() || *c < T::zero()) {
            return Err(Error::InvalidArgument("arc costs must be finite and nonnegative".into()));
        }
        let total: T = self.supply.iter().copied().sum();
        let scale = self
            .supply
            .iter()
            .fold(T::zero(), |acc, s| acc + s.abs())
            .max(T::min_positive_value());
        if total.abs() > T::lit(1e-9) * scale.max(T::one()) {
            return Err(Error::Infeasible(format!("supplies sum to {total}, not zero")));
        }

        let root = n;
        let max_cost = self.cost.iter().fold(T::zero(), |a, &c| a.max(c));
        let art_cost = (max_cost + T::one()) * T::from_usize_lossy(n + 1);

        let mut src = self.source.clone();
        let mut tgt = self.target.clone();
        let mut cost = self.cost.clone();
        let mut flow = vec![T::zero(); m + n];
        let mut state = vec![ArcState::Lower; m + n];
        src.resize(m + n, 0);
        tgt.resize(m + n, 0);
        cost.resize(m + n, T::zero());
        for u in 0..n {
            let e = m + u;
            state[e] = ArcState::Tree;
            if self.supply[u] >= T::zero() {
                src[e] = u;
                tgt[e] = root;
                flow[e] = self.supply[u];
            } else {
                src[e] = root;
                tgt[e] = u;
                flow[e] = -self.supply[u];
                cost[e] = art_cost;
            }
        }

        let mut tree = Tree::new(n + 1);
        tree.rebuild(root, &src, &tgt, &cost, &state);

        let eps = T::lit(1e-12) * (max_cost + T::one());
        let block = ((m as f64).sqrt().ceil() as usize).max(10).min(m.max(1));
        let mut next_arc = 0usize;
        let max_pivots = 50 * (m + n + 10) * (n + 10);
        for _pivot in 0..max_pivots {
            // Block search pricing over user arcs.
            let mut entering = None;
            let mut best = -eps;
            let mut scanned = 0;
            let mut cnt = 0;
            while scanned < m {
                let e = next_arc;
                next_arc = if next_arc + 1 == m { 0 } else { next_arc + 1 };
                scanned += 1;
                cnt += 1;
                if state[e] == ArcState::Lower {
                    let rc = cost[e] + tree.pi[src[e]] - tree.pi[tgt[e]];
                    if rc < best {
                        best = rc;
                        entering = Some(e);
                    }
                }
                if cnt >= block {
                    if entering.is_some() {
                        break;
                    }
                    cnt = 0;
                }
            }
            let Some(in_arc) = entering else {
                return self.finish(m, n, &flow, &tree.pi, &cost);
            };

            let first = src[in_arc];
            let second = tgt[in_arc];
            let join = tree.join(first, second);

            let mut delta = T::infinity();
            let mut u_out = None;
            let mut u = first;
            while u != join {
                if tree.pred_up[u] {
                    let d = flow[tree.pred[u]];
                    if d < delta {
                        delta = d;
                        u_out = Some(u);
                    }
                }
                u = tree.parent[u];
            }
            let mut u = second;
            while u != join {
                if !tree.pred_up[u] {
                    let d = flow[tree.pred[u]];
                    if d <= delta {
                        delta = d;
                        u_out = Some(u);
                    }
                }
                u = tree.parent[u];
            }
            let Some(u_out) = u_out else {
                return Err(Error::Infeasible("min-cost flow is unbounded".into()));
            };

            if delta > T::zero() {
                flow[in_arc] += delta;
                let mut u = first;
                while u != join {
                    let e = tree.pred[u];
                    if tree.pred_up[u] {
                        flow[e] -= delta;
                    } else {
                        flow[e] += delta;
                    }
                    u = tree.parent[u];
                }
                let mut u = second;
                while u != join {
                    let e = tree.pred[u];
                    if tree.pred_up[u] {
                        flow[e] += delta;
                    } else {
                        flow[e] -= delta;
                    }
                    u = tree.parent[u];
                }
            }
            let out_arc = tree.pred[u_out];
            flow[out_arc] = T::zero();
            state[out_arc] = ArcState::Lower;
            state[in_arc] = ArcState::Tree;
            tree.rebuild(root, &src, &tgt, &cost, &state);
        }
        Err(Error::LinearProgram("network simplex exceeded its pivot budget".into()))
    }

    fn finish(
        &self,
        m: usize,
        n: usize,
        flow: &[T],
        pi: &[T],
        cost: &[T],
    ) -> Result<FlowSolution<T>> {
        let scale = self.supply.iter().fold(T::one(), |a, s| a.max(s.abs()));
        for u in 0..n {
            if flow[m + u] > T::lit(1e-9) * scale {
                return Err(Error::Infeasible(
                    "no feasible flow routes all supplies".into(),
                ));
            }
        }
        let user_flow = flow[..m].to_vec();
        let total = user_flow
            .iter()
            .zip(&cost[..m])
            .fold(T::zero(), |acc, (&f, &c)| acc + f * c);
        let root_pi = pi[n];
        Ok(FlowSolution {
            cost: total,
            flow: user_flow,
            potential: pi[..n].iter().map(|&p| p - root_pi).collect(),
        })
    }
}

struct Tree<T> {
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// True when the predecessor arc points from the node to its parent.
    pred_up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<T>,
    adj: Vec<Vec<usize>>,
    queue: Vec<usize>,
}

impl<T: Real> Tree<T> {
    fn new(nodes: usize) -> Self {
        Self {
            parent: vec![usize::MAX; nodes],
            pred: vec![usize::MAX; nodes],
            pred_up: vec![false; nodes],
            depth: vec![0; nodes],
            pi: vec![T::zero(); nodes],
            adj: vec![Vec::new(); nodes],
            queue: Vec::with_capacity(nodes),
        }
    }

    fn rebuild(&mut self, root: usize, src: &[usize], tgt: &[usize], cost: &[T], state: &[ArcState]) {
        self.adj.iter_mut().for_each(Vec::clear);
        for (e, st) in state.iter().enumerate() {
            if *st == ArcState::Tree {
                self.adj[src[e]].push(e);
                self.adj[tgt[e]].push(e);
            }
        }
        self.parent.iter_mut().for_each(|p| *p = usize::MAX);
        self.parent[root] = root;
        self.depth[root] = 0;
        self.pi[root] = T::zero();
        self.queue.clear();
        self.queue.push(root);
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            for idx in 0..self.adj[u].len() {
                let e = self.adj[u][idx];
                let (v, up) = if src[e] == u { (tgt[e], false) } else { (src[e], true) };
                if self.parent[v] != usize::MAX {
                    continue;
                }
                self.parent[v] = u;
                self.pred[v] = e;
                self.pred_up[v] = up;
                self.depth[v] = self.depth[u] + 1;
                self.pi[v] = if up { self.pi[u] - cost[e] } else { self.pi[u] + cost[e] };
                self.queue.push(v);
            }
        }
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_route() {
        let mut ns = NetworkSimplex::new(vec![1.0, -1.0]);
        ns.add_arc(0, 1, 2.5);
        let sol = ns.solve().unwrap();
        assert_eq!(sol.cost, 2.5);
        assert_eq!(sol.flow, vec![1.0]);
    }

    #[test]
    fn picks_cheaper_path() {
        let mut ns = NetworkSimplex::new(vec![2.0_f64, 0.0, -2.0]);
        ns.add_arc(0, 2, 5.0);
        ns.add_arc(0, 1, 1.0);
        ns.add_arc(1, 2, 1.0);
        let sol = ns.solve().unwrap();
        assert!((sol.cost - 4.0).abs() < 1e-12);
        for (e, (&s, &t)) in ns.source.iter().zip(&ns.target).enumerate() {
            let rc = ns.cost[e] + sol.potential[s] - sol.potential[t];
            assert!(rc >= -1e-12);
        }
    }

    #[test]
    fn infeasible_supplies_are_reported() {
        let mut ns = NetworkSimplex::new(vec![1.0, -1.0]);
        ns.add_arc(1, 0, 1.0);
        assert!(ns.solve().is_err());
        assert!(NetworkSimplex::new(vec![1.0, 0.0]).solve().is_err());
    }
}
