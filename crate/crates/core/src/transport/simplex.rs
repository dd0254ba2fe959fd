//! Network simplex for the balanced transportation problem.
//!
//! Sources `0..m` and sinks `m..m+n` are joined by a complete bipartite set of uncapacitated
//! arcs. An extra root node with big-M artificial arcs gives the initial feasible tree. Leaving
//! arcs follow the strongly feasible tree rule, which rules out cycling on degenerate pivots.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Optimal coupling of a transportation problem with its dual certificate.
#[derive(Clone, Debug)]
pub struct TransportSolution {
    /// `(source, sink, mass)` for every arc carrying positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    pub objective: f64,
    /// Dual potentials `u` (sources) and `v` (sinks) with `u_i + v_j ≤ c_ij`.
    pub source_potentials: Vec<f64>,
    pub sink_potentials: Vec<f64>,
}

struct Network<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    big: f64,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    tree_arcs: Vec<usize>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// True when `pred[v]` points from `v` to `parent[v]`.
    up: Vec<bool>,
    depth: Vec<usize>,
    pot: Vec<f64>,
}

impl<'a> Network<'a> {
    fn root(&self) -> usize {
        self.m + self.n
    }

    fn n_arcs(&self) -> usize {
        self.m * self.n + self.m + self.n
    }

    fn endpoints(&self, arc: usize) -> (usize, usize) {
        let real = self.m * self.n;
        if arc < real {
            (arc / self.n, self.m + arc % self.n)
        } else if arc < real + self.m {
            (arc - real, self.root())
        } else {
            (self.root(), self.m + (arc - real - self.m))
        }
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.m * self.n {
            self.cost[arc]
        } else {
            self.big
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        let (u, v) = self.endpoints(arc);
        self.arc_cost(arc) + self.pot[u] - self.pot[v]
    }

    fn rebuild_tree(&mut self) {
        let nodes = self.m + self.n + 1;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for &arc in &self.tree_arcs {
            let (u, v) = self.endpoints(arc);
            adj[u].push(arc);
            adj[v].push(arc);
        }
        let root = self.root();
        let mut seen = vec![false; nodes];
        seen[root] = true;
        self.parent[root] = root;
        self.depth[root] = 0;
        self.pot[root] = 0.0;
        let mut queue = VecDeque::from([root]);
        while let Some(x) = queue.pop_front() {
            for &arc in &adj[x] {
                let (u, v) = self.endpoints(arc);
                let (y, up) = if u == x { (v, false) } else { (u, true) };
                if seen[y] {
                    continue;
                }
                seen[y] = true;
                self.parent[y] = x;
                self.pred[y] = arc;
                self.up[y] = up;
                self.depth[y] = self.depth[x] + 1;
                // Tree arcs have zero reduced cost: pot[head] = pot[tail] + cost.
                let c = self.arc_cost(arc);
                self.pot[y] = if up { self.pot[x] - c } else { self.pot[x] + c };
                queue.push_back(y);
            }
        }
    }

    /// Block pricing: the most negative reduced cost within the first block that has one.
    fn entering_arc(&self, start: &mut usize, block: usize, tol: f64) -> Option<usize> {
        let total = self.n_arcs();
        let mut best = None;
        let mut best_rc = -tol;
        let mut scanned = 0;
        let mut in_block = 0;
        let mut arc = *start;
        while scanned < total {
            if !self.in_tree[arc] {
                let rc = self.reduced_cost(arc);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(arc);
                }
            }
            scanned += 1;
            in_block += 1;
            arc += 1;
            if arc == total {
                arc = 0;
            }
            if in_block == block {
                if best.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        *start = arc;
        best
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (u, v) = self.endpoints(entering);
        // Cycle: entering arc u -> v, then v up to the apex, then down from the apex to u.
        let mut v_side = Vec::new();
        let mut u_side = Vec::new();
        let (mut a, mut b) = (v, u);
        while self.depth[a] > self.depth[b] {
            v_side.push(a);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            u_side.push(b);
            b = self.parent[b];
        }
        while a != b {
            v_side.push(a);
            a = self.parent[a];
            u_side.push(b);
            b = self.parent[b];
        }
        // Walk in cycle orientation starting at the apex: apex -> u, the entering arc,
        // v -> apex. The last blocking arc leaves the tree.
        // On the u side the walk goes parent -> node: forward iff the arc points down.
        // On the v side the walk goes node -> parent: forward iff the arc points up.
        let mut delta = f64::INFINITY;
        let mut leaving = None;
        for &node in u_side.iter().rev() {
            if self.up[node] {
                let f = self.flow[self.pred[node]];
                if f <= delta {
                    delta = f;
                    leaving = Some(self.pred[node]);
                }
            }
        }
        for &node in &v_side {
            if !self.up[node] {
                let f = self.flow[self.pred[node]];
                if f <= delta {
                    delta = f;
                    leaving = Some(self.pred[node]);
                }
            }
        }
        let leaving = leaving.ok_or_else(|| Error::Numerical("unbounded transportation cycle".into()))?;
        let delta = delta.max(0.0);
        if delta > 0.0 {
            self.flow[entering] += delta;
            for &node in &u_side {
                let arc = self.pred[node];
                if self.up[node] {
                    self.flow[arc] -= delta;
                } else {
                    self.flow[arc] += delta;
                }
            }
            for &node in &v_side {
                let arc = self.pred[node];
                if self.up[node] {
                    self.flow[arc] += delta;
                } else {
                    self.flow[arc] -= delta;
                }
            }
        }
        self.flow[leaving] = 0.0;
        self.in_tree[leaving] = false;
        self.in_tree[entering] = true;
        let slot = self
            .tree_arcs
            .iter()
            .position(|&x| x == leaving)
            .expect("leaving arc is a tree arc");
        self.tree_arcs[slot] = entering;
        self.rebuild_tree();
        Ok(())
    }
}

/// Solves `min Σ c_ij x_ij` subject to row sums `supply` and column sums `demand`.
///
/// `cost` is row-major `m × n`. Masses must be positive and the totals equal up to rounding.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::Usage(
            "transport problem needs at least one source and one sink".into(),
        ));
    }
    if cost.len() != m * n {
        return Err(Error::Usage(format!(
            "cost matrix has {} entries, expected {m}x{n}",
            cost.len()
        )));
    }
    if supply.iter().chain(demand).any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Usage("transport masses must be positive and finite".into()));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Usage("transport costs must be finite and nonnegative".into()));
    }
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    // Any path through the root costs more than every real path.
    let big = 1.0 + (m + n) as f64 * (max_cost + 1.0);
    let nodes = m + n + 1;
    let n_arcs = m * n + m + n;
    let mut net = Network {
        m,
        n,
        cost,
        big,
        flow: vec![0.0; n_arcs],
        in_tree: vec![false; n_arcs],
        tree_arcs: Vec::with_capacity(m + n),
        parent: vec![0; nodes],
        pred: vec![0; nodes],
        up: vec![false; nodes],
        depth: vec![0; nodes],
        pot: vec![0.0; nodes],
    };
    for (i, &s) in supply.iter().enumerate() {
        let arc = m * n + i;
        net.flow[arc] = s;
        net.in_tree[arc] = true;
        net.tree_arcs.push(arc);
    }
    for (j, &d) in demand.iter().enumerate() {
        let arc = m * n + m + j;
        net.flow[arc] = d;
        net.in_tree[arc] = true;
        net.tree_arcs.push(arc);
    }
    net.rebuild_tree();

    let tol = 1e-12 * big;
    let block = ((n_arcs as f64).sqrt().ceil() as usize).max(10);
    let max_pivots = 50 * n_arcs + 1000;
    let mut start = 0;
    let mut pivots = 0;
    while let Some(arc) = net.entering_arc(&mut start, block, tol) {
        net.pivot(arc)?;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Numerical("network simplex exceeded its pivot budget".into()));
        }
    }

    let mut flows = Vec::new();
    let mut objective = 0.0;
    for i in 0..m {
        for j in 0..n {
            let f = net.flow[i * n + j];
            if f > 0.0 {
                flows.push((i, j, f));
                objective += f * cost[i * n + j];
            }
        }
    }
    Ok(TransportSolution {
        flows,
        objective,
        source_potentials: (0..m).map(|i| -net.pot[i]).collect(),
        sink_potentials: (0..n).map(|j| net.pot[m + j]).collect(),
    })
}
