//! Primal network simplex for the transportation problem.
//!
//! Sources `0..n1` send their weight through real arcs `i -> n1 + j` to
//! sinks. An artificial root is joined to every node (source -> root at cost
//! 0, root -> sink at cost `M`), which gives a strongly feasible starting
//! tree. Entering arcs are priced in blocks over the real arcs only; the
//! leaving arc is the last blocking arc met when walking the cycle from its
//! apex, which keeps the tree strongly feasible and rules out cycling. After
//! a pivot only the subtree cut off by the leaving arc is re-hung.

use crate::tensor::Tensor;

use super::{OtError, Result};

/// Largest number of real arcs (`n1 * n2`) the exact solver accepts.
pub const MAX_ARCS: usize = 1_000_000;

#[derive(Clone, Copy, PartialEq)]
enum Dir {
    /// The tree arc points from the node to its parent.
    Up,
    Down,
}

struct Network<'a> {
    n1: usize,
    n2: usize,
    root: usize,
    cost: &'a [f64],
    art_cost: f64,
    /// Flow on every arc: real arcs first, then one artificial per node.
    flow: Vec<f64>,
    tree: Vec<usize>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    dir: Vec<Dir>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    adj: Vec<Vec<usize>>,
    queue: Vec<usize>,
}

impl Network<'_> {
    fn n_real(&self) -> usize {
        self.n1 * self.n2
    }

    fn ends(&self, arc: usize) -> (usize, usize) {
        let e = self.n_real();
        if arc < e {
            (arc / self.n2, self.n1 + arc % self.n2)
        } else {
            let v = arc - e;
            if v < self.n1 {
                (v, self.root)
            } else {
                (self.root, v)
            }
        }
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        let e = self.n_real();
        if arc < e {
            self.cost[arc]
        } else if arc - e < self.n1 {
            0.0
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        let (u, v) = self.ends(arc);
        self.arc_cost(arc) + self.pi[u] - self.pi[v]
    }

    fn rebuild(&mut self) {
        for a in &mut self.adj {
            a.clear();
        }
        for &arc in &self.tree {
            let (u, v) = self.ends(arc);
            self.adj[u].push(arc);
            self.adj[v].push(arc);
        }
        self.queue.clear();
        self.queue.push(self.root);
        self.depth[self.root] = 0;
        self.pi[self.root] = 0.0;
        self.parent[self.root] = usize::MAX;
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            for k in 0..self.adj[u].len() {
                let arc = self.adj[u][k];
                if arc == self.pred[u] && u != self.root {
                    continue;
                }
                let (s, t) = self.ends(arc);
                let (w, dir) = if s == u { (t, Dir::Down) } else { (s, Dir::Up) };
                self.parent[w] = u;
                self.pred[w] = arc;
                self.dir[w] = dir;
                self.depth[w] = self.depth[u] + 1;
                let c = self.arc_cost(arc);
                self.pi[w] = match dir {
                    Dir::Down => self.pi[u] + c,
                    Dir::Up => self.pi[u] - c,
                };
                self.queue.push(w);
            }
        }
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    /// Pivots `entering` into the tree.
    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (first, second) = self.ends(entering);
        let join = self.join(first, second);
        let mut delta = f64::INFINITY;
        let mut out = usize::MAX;
        let mut out_first = true;
        let mut u = first;
        while u != join {
            if self.dir[u] == Dir::Up {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    out = u;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if self.dir[u] == Dir::Down {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    out = u;
                    out_first = false;
                }
            }
            u = self.parent[u];
        }
        if out == usize::MAX {
            return Err(OtError::Solver("unbounded cycle".into()));
        }
        let leaving = self.pred[out];
        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut u = first;
            while u != join {
                let a = self.pred[u];
                match self.dir[u] {
                    Dir::Up => self.flow[a] -= delta,
                    Dir::Down => self.flow[a] += delta,
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let a = self.pred[u];
                match self.dir[u] {
                    Dir::Up => self.flow[a] += delta,
                    Dir::Down => self.flow[a] -= delta,
                }
                u = self.parent[u];
            }
        }
        self.flow[leaving] = 0.0;
        let old_parent = self.parent[out];
        self.adj[out].retain(|&a| a != leaving);
        self.adj[old_parent].retain(|&a| a != leaving);
        self.adj[first].push(entering);
        self.adj[second].push(entering);
        // the cut-off subtree hangs from the entering arc's endpoint inside it
        let (inner, outer) = if out_first { (first, second) } else { (second, first) };
        self.hang(inner, outer, entering);
        Ok(())
    }

    /// Re-roots the subtree containing `inner` below `outer` via `arc`,
    /// recomputing parents, depths and potentials inside it.
    fn hang(&mut self, inner: usize, outer: usize, arc: usize) {
        self.set_child(outer, inner, arc);
        self.queue.clear();
        self.queue.push(inner);
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            for k in 0..self.adj[u].len() {
                let a = self.adj[u][k];
                if a == self.pred[u] {
                    continue;
                }
                let (s, t) = self.ends(a);
                let w = if s == u { t } else { s };
                self.set_child(u, w, a);
                self.queue.push(w);
            }
        }
    }

    fn set_child(&mut self, u: usize, w: usize, arc: usize) {
        let (s, _) = self.ends(arc);
        let dir = if s == u { Dir::Down } else { Dir::Up };
        self.parent[w] = u;
        self.pred[w] = arc;
        self.dir[w] = dir;
        self.depth[w] = self.depth[u] + 1;
        let c = self.arc_cost(arc);
        self.pi[w] = match dir {
            Dir::Down => self.pi[u] + c,
            Dir::Up => self.pi[u] - c,
        };
    }
}

/// Solves `min <P, C>` over plans with row sums `a` and column sums `b`.
///
/// `cost` is `a.len() x b.len()`. Zero-weight atoms are removed before
/// solving and get empty rows/columns in the returned plan.
pub fn transport_simplex(a: &[f64], b: &[f64], cost: &Tensor) -> Result<(f64, Tensor)> {
    if a.is_empty() || b.is_empty() {
        return Err(OtError::Empty);
    }
    if cost.rows() != a.len() || cost.cols() != b.len() {
        return Err(OtError::Length(format!(
            "cost is {}x{}, weights are {} and {}",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    if a.len() * b.len() > MAX_ARCS {
        return Err(OtError::Budget {
            n1: a.len(),
            n2: b.len(),
            max: MAX_ARCS,
        });
    }
    if !cost.is_finite() {
        return Err(OtError::NonFiniteCost);
    }
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(OtError::InvalidMeasure("all weights are zero".into()));
    }
    let (n1, n2) = (rows.len(), cols.len());
    let sub_cost: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost.get(i, j)))
        .collect();
    let flows = solve(
        &rows.iter().map(|&i| a[i]).collect::<Vec<_>>(),
        &cols.iter().map(|&j| b[j]).collect::<Vec<_>>(),
        &sub_cost,
    )?;
    let mut plan = Tensor::zeros(&[a.len(), b.len()]);
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            plan.set(i, j, flows[r * n2 + c]);
        }
    }
    debug_assert_eq!(flows.len(), n1 * n2);
    Ok((super::plan_cost(&plan, cost), plan))
}

fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let (n1, n2) = (a.len(), b.len());
    let n_real = n1 * n2;
    let nodes = n1 + n2;
    let max_cost = cost.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    // any artificial path costs more than a direct arc, so optimal flows
    // leave the artificial arcs empty
    let art_cost = 2.0 * max_cost + 1.0;
    let tol = 1e-12 * max_cost.max(f64::MIN_POSITIVE);

    let mut net = Network {
        n1,
        n2,
        root: nodes,
        cost,
        art_cost,
        flow: vec![0.0; n_real + nodes],
        tree: (n_real..n_real + nodes).collect(),
        parent: vec![0; nodes + 1],
        pred: vec![usize::MAX; nodes + 1],
        dir: vec![Dir::Up; nodes + 1],
        depth: vec![0; nodes + 1],
        pi: vec![0.0; nodes + 1],
        adj: vec![Vec::new(); nodes + 1],
        queue: Vec::with_capacity(nodes + 1),
    };
    // sources push their supply up to the root, which feeds the sinks
    for (i, &w) in a.iter().enumerate() {
        net.flow[n_real + i] = w;
    }
    for (j, &w) in b.iter().enumerate() {
        net.flow[n_real + n1 + j] = w;
    }
    net.rebuild();

    let block = ((n_real as f64).sqrt().ceil() as usize).max(10).min(n_real);
    let mut next = 0usize;
    let max_pivots = 50 * n_real + 10_000;
    let mut pivots = 0usize;
    loop {
        let mut best = usize::MAX;
        let mut best_rc = -tol;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < n_real {
            let arc = next;
            next += 1;
            if next == n_real {
                next = 0;
            }
            scanned += 1;
            in_block += 1;
            let rc = net.reduced_cost(arc);
            if rc < best_rc {
                best_rc = rc;
                best = arc;
            }
            if in_block == block {
                if best != usize::MAX {
                    break;
                }
                in_block = 0;
            }
        }
        if best == usize::MAX {
            break;
        }
        net.pivot(best)?;
        pivots += 1;
        if pivots > max_pivots {
            return Err(OtError::Solver(format!("no convergence after {pivots} pivots")));
        }
    }
    let leftover: f64 = net.flow[n_real..].iter().sum();
    if leftover > 1e-9 {
        return Err(OtError::Solver(format!(
            "artificial arcs still carry {leftover:e} units"
        )));
    }
    net.flow.truncate(n_real);
    Ok(net.flow)
}
