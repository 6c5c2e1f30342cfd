//! Finite filtered probability spaces as explicit scenario trees, with the
//! processes that live on them.
//!
//! Nodes are stored parents-before-children, so ascending node order is a
//! topological order and descending order drives the backward recursions.
//! Adapted objects carry one value per node; raw objects carry one value per
//! (leaf-path, time). Leaf-paths are identified with the time-`N` nodes.
//!
//! All reductions run in fixed node order, so every reported value is
//! independent of the execution schedule.

use crate::error::{Error, Result};
use crate::separable::{self, SeparableIntegrand};
use crate::textio::{fmt_f, parse_f, parse_usize, LineScanner};

/// Caps for exhaustive stopping-time enumeration.
pub const ENUM_MAX_PERIODS: usize = 4;
pub const ENUM_MAX_LEAVES: usize = 16;

/// Deterministic time grid: strictly increasing times starting at zero and
/// strictly positive reference weights (the measure μ has full support).
#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != mu.len() {
            return Err(Error::InvalidTree("time grid needs matching times and weights".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidTree("time grid must start at t = 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidTree("times must be strictly increasing".into()));
        }
        if mu.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidTree("μ weights must be strictly positive".into()));
        }
        Ok(TimeGrid { times, mu })
    }

    /// Uniform grid on `[0, horizon]` with equal weights summing to `horizon`.
    pub fn uniform(periods: usize, horizon: f64) -> Self {
        assert!(periods >= 1);
        let n = periods + 1;
        let times = (0..n).map(|i| horizon * i as f64 / periods as f64).collect();
        let mu = vec![horizon / n as f64; n];
        TimeGrid { times, mu }
    }

    pub fn periods(&self) -> usize {
        self.times.len() - 1
    }
}

#[derive(Debug, Clone)]
struct Node {
    time_idx: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    /// Conditional probability of reaching this node from its parent (1 at the root).
    branch_prob: f64,
    /// Node μ weight (optional random measure; strictly positive).
    mu: f64,
    /// Unconditional probability of the node.
    prob: f64,
}

/// Explicit (non-recombining) scenario tree.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    nodes: Vec<Node>,
    times: Vec<f64>,
    leaves: Vec<usize>,
    /// Leaf-path indices through each node, precomputed.
    paths_through: Vec<Vec<usize>>,
}

impl ScenarioTree {
    /// Builds a tree from parallel node arrays. Node `i`'s parent must have a
    /// smaller index; the root is node 0.
    pub fn from_nodes(
        times: Vec<f64>,
        parents: Vec<Option<usize>>,
        branch_probs: Vec<f64>,
        time_idx: Vec<usize>,
        mu: Vec<f64>,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 || branch_probs.len() != n || time_idx.len() != n || mu.len() != n {
            return Err(Error::InvalidTree("node arrays must be nonempty and matching".into()));
        }
        if times.len() < 2 {
            return Err(Error::InvalidTree("need at least two time points".into()));
        }
        let periods = times.len() - 1;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidTree("times must be strictly increasing".into()));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(n);
        for i in 0..n {
            if !(mu[i] > 0.0) || !mu[i].is_finite() {
                return Err(Error::InvalidTree(format!("node {i}: μ weight must be strictly positive")));
            }
            if !(branch_probs[i] > 0.0) || branch_probs[i] > 1.0 {
                return Err(Error::InvalidTree(format!("node {i}: branch probability must be in (0, 1]")));
            }
            match parents[i] {
                None => {
                    if i != 0 {
                        return Err(Error::InvalidTree(format!("node {i}: only node 0 may be the root")));
                    }
                    if time_idx[i] != 0 {
                        return Err(Error::InvalidTree("root must sit at time index 0".into()));
                    }
                }
                Some(p) => {
                    if p >= i {
                        return Err(Error::InvalidTree(format!("node {i}: parent {p} must precede it")));
                    }
                    if time_idx[i] != nodes[p].time_idx + 1 {
                        return Err(Error::InvalidTree(format!("node {i}: time index must be parent's + 1")));
                    }
                }
            }
            let prob = match parents[i] {
                None => branch_probs[i],
                Some(p) => nodes[p].prob * branch_probs[i],
            };
            nodes.push(Node {
                time_idx: time_idx[i],
                parent: parents[i],
                children: Vec::new(),
                branch_prob: branch_probs[i],
                mu: mu[i],
                prob,
            });
            if let Some(p) = parents[i] {
                nodes[p].children.push(i);
            }
        }
        if (nodes[0].branch_prob - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTree("root probability must be 1".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.time_idx < periods {
                if node.children.is_empty() {
                    return Err(Error::InvalidTree(format!("node {i}: interior node has no children")));
                }
                let total: f64 = node.children.iter().map(|&c| nodes[c].branch_prob).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidTree(format!(
                        "node {i}: branch probabilities sum to {total}, expected 1"
                    )));
                }
            } else if !node.children.is_empty() {
                return Err(Error::InvalidTree(format!("node {i}: leaf-time node has children")));
            }
        }
        let leaves: Vec<usize> = (0..n).filter(|&i| nodes[i].time_idx == periods).collect();
        if leaves.is_empty() {
            return Err(Error::InvalidTree("tree has no leaf-time nodes".into()));
        }
        // leaf-path membership per node
        let mut paths_through: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, &leaf) in leaves.iter().enumerate() {
            let mut cur = Some(leaf);
            while let Some(c) = cur {
                paths_through[c].push(j);
                cur = nodes[c].parent;
            }
        }
        for row in paths_through.iter_mut() {
            row.sort_unstable();
        }
        Ok(ScenarioTree { nodes, times, leaves, paths_through })
    }

    /// Single deterministic path along a time grid.
    pub fn single_path(grid: &TimeGrid) -> Self {
        let n = grid.times.len();
        let parents = (0..n).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        Self::from_nodes(
            grid.times.clone(),
            parents,
            vec![1.0; n],
            (0..n).collect(),
            grid.mu.clone(),
        )
        .expect("single path construction is always valid")
    }

    /// Uniform tree with `branching` equally likely children at every node.
    pub fn uniform(grid: &TimeGrid, branching: usize) -> Self {
        assert!(branching >= 1);
        let periods = grid.periods();
        let mut parents = vec![None];
        let mut probs = vec![1.0];
        let mut tidx = vec![0usize];
        let mut mu = vec![grid.mu[0]];
        let mut frontier = vec![0usize];
        for t in 1..=periods {
            let mut next = Vec::new();
            for &p in &frontier {
                for _ in 0..branching {
                    let id = parents.len();
                    parents.push(Some(p));
                    probs.push(1.0 / branching as f64);
                    tidx.push(t);
                    mu.push(grid.mu[t]);
                    next.push(id);
                }
            }
            frontier = next;
        }
        Self::from_nodes(grid.times.clone(), parents, probs, tidx, mu)
            .expect("uniform construction is always valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn periods(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf-time node ids in ascending order; leaf-path `j` is `leaves()[j]`.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn time_idx(&self, node: usize) -> usize {
        self.nodes[node].time_idx
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.nodes[node].parent
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.nodes[node].children
    }

    pub fn branch_prob(&self, node: usize) -> f64 {
        self.nodes[node].branch_prob
    }

    pub fn prob(&self, node: usize) -> f64 {
        self.nodes[node].prob
    }

    pub fn mu(&self, node: usize) -> f64 {
        self.nodes[node].mu
    }

    /// Nodes of leaf-path `j` from the root to the leaf, one per time index.
    pub fn path_nodes(&self, leaf_idx: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.periods() + 1);
        let mut cur = Some(self.leaves[leaf_idx]);
        while let Some(n) = cur {
            path.push(n);
            cur = self.nodes[n].parent;
        }
        path.reverse();
        path
    }

    /// Leaf-path indices passing through `node`.
    pub fn leaves_through(&self, node: usize) -> &[usize] {
        &self.paths_through[node]
    }

    fn check_dim(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n_nodes() {
            return Err(Error::DimMismatch(format!(
                "{what} carries {len} entries for a tree with {} nodes",
                self.n_nodes()
            )));
        }
        Ok(())
    }
}

/// One `d`-vector per node; the finite analogue of an optional process.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn zeros(tree: &ScenarioTree, dim: usize) -> Self {
        AdaptedProcess { dim, values: vec![vec![0.0; dim]; tree.n_nodes()] }
    }

    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        let dim = values.first().map_or(0, |v| v.len());
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(Error::DimMismatch("adapted process needs uniform nonzero dimension".into()));
        }
        Ok(AdaptedProcess { dim, values })
    }

    /// Scalar (d = 1) process from one value per node.
    pub fn scalar(values: Vec<f64>) -> Self {
        AdaptedProcess { dim: 1, values: values.into_iter().map(|v| vec![v]).collect() }
    }

    pub fn node(&self, n: usize) -> &[f64] {
        &self.values[n]
    }
}

/// One `d`-vector per (leaf-path, time index); no adaptedness constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct RawProcess {
    pub dim: usize,
    /// `values[leaf_idx][time_idx]` is a `d`-vector.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl RawProcess {
    pub fn zeros(tree: &ScenarioTree, dim: usize) -> Self {
        RawProcess {
            dim,
            values: vec![vec![vec![0.0; dim]; tree.periods() + 1]; tree.n_leaves()],
        }
    }

    pub fn at(&self, leaf_idx: usize, time_idx: usize) -> &[f64] {
        &self.values[leaf_idx][time_idx]
    }

    /// Spreads an adapted process across leaf-paths.
    pub fn from_adapted(tree: &ScenarioTree, v: &AdaptedProcess) -> Self {
        let mut out = RawProcess::zeros(tree, v.dim);
        for (j, row) in out.values.iter_mut().enumerate() {
            for (i, &n) in tree.path_nodes(j).iter().enumerate() {
                row[i] = v.values[n].clone();
            }
        }
        out
    }
}

/// Stopping time: one time index per leaf-path, adapted in the sense that
/// `{τ ≤ t}` is decided by the time-`t` node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    pub time_by_leaf: Vec<usize>,
}

impl StoppingTime {
    pub fn constant(tree: &ScenarioTree, t: usize) -> Self {
        StoppingTime { time_by_leaf: vec![t; tree.n_leaves()] }
    }
}

impl ScenarioTree {
    /// Checks the adaptedness of a stopping rule: two leaf-paths sharing the
    /// time-`t` node must agree on the event `{τ ≤ t}` for every `t`.
    pub fn is_valid_stopping_time(&self, tau: &StoppingTime) -> bool {
        if tau.time_by_leaf.len() != self.n_leaves() {
            return false;
        }
        if tau.time_by_leaf.iter().any(|&t| t > self.periods()) {
            return false;
        }
        for node in 0..self.n_nodes() {
            let t = self.nodes[node].time_idx;
            if t == self.periods() {
                continue;
            }
            let leaves = self.leaves_through(node);
            let first = tau.time_by_leaf[leaves[0]] <= t;
            if leaves.iter().any(|&j| (tau.time_by_leaf[j] <= t) != first) {
                return false;
            }
        }
        true
    }

    /// Optional projection: at each node, the probability-weighted average of
    /// the raw values over the leaf-paths through it.
    pub fn optional_projection(&self, v: &RawProcess) -> AdaptedProcess {
        let mut out = AdaptedProcess::zeros(self, v.dim);
        for node in 0..self.n_nodes() {
            let t = self.nodes[node].time_idx;
            let mut acc = vec![0.0; v.dim];
            let mut mass = 0.0;
            for &j in self.leaves_through(node) {
                let w = self.prob(self.leaves[j]);
                mass += w;
                for (a, &x) in acc.iter_mut().zip(v.at(j, t)) {
                    *a += w * x;
                }
            }
            for a in acc.iter_mut() {
                *a /= mass;
            }
            out.values[node] = acc;
        }
        out
    }

    /// Whether a raw process is adapted (constant over each node's paths).
    pub fn is_adapted(&self, v: &RawProcess) -> bool {
        for node in 0..self.n_nodes() {
            let t = self.nodes[node].time_idx;
            let leaves = self.leaves_through(node);
            let first = v.at(leaves[0], t);
            if leaves.iter().any(|&j| v.at(j, t) != first) {
                return false;
            }
        }
        true
    }

    /// `E[v_τ]` for a raw process (componentwise).
    pub fn expect_at_stopping(&self, v: &RawProcess, tau: &StoppingTime) -> Vec<f64> {
        let mut acc = vec![0.0; v.dim];
        for (j, &leaf) in self.leaves.iter().enumerate() {
            let w = self.prob(leaf);
            for (a, &x) in acc.iter_mut().zip(v.at(j, tau.time_by_leaf[j])) {
                *a += w * x;
            }
        }
        acc
    }

    /// `|E[v_τ] − E[(ᵒv)_τ]|` in the max norm; zero for every stopping time
    /// by the defining property of the optional projection.
    pub fn verify_projection_identity(&self, v: &RawProcess, tau: &StoppingTime) -> f64 {
        let proj = self.optional_projection(v);
        let raw_side = self.expect_at_stopping(v, tau);
        let proj_side = self.expect_at_stopping(&RawProcess::from_adapted(self, &proj), tau);
        raw_side
            .iter()
            .zip(&proj_side)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `‖v‖_{R¹} = sup_τ E|v_τ|` via the Snell envelope of the ℓ¹ magnitude.
    pub fn r1_norm(&self, v: &AdaptedProcess) -> f64 {
        let mut snell = vec![0.0; self.n_nodes()];
        for node in (0..self.n_nodes()).rev() {
            let own: f64 = v.node(node).iter().map(|x| x.abs()).sum();
            let kids = &self.nodes[node].children;
            if kids.is_empty() {
                snell[node] = own;
            } else {
                let cont: f64 = kids.iter().map(|&c| self.nodes[c].branch_prob * snell[c]).sum();
                snell[node] = own.max(cont);
            }
        }
        snell[0]
    }

    /// `E|v_τ|` with the ℓ¹ vector magnitude, for the enumeration oracle.
    pub fn expected_abs_at_stopping(&self, v: &AdaptedProcess, tau: &StoppingTime) -> f64 {
        let mut total = 0.0;
        for (j, &leaf) in self.leaves.iter().enumerate() {
            let node = self.path_nodes(j)[tau.time_by_leaf[j]];
            let mag: f64 = v.node(node).iter().map(|x| x.abs()).sum();
            total += self.prob(leaf) * mag;
        }
        total
    }

    /// Exhaustively enumerates all stopping times. Refused above the size cap
    /// so oracles stay sub-second.
    pub fn enumerate_stopping_times(&self) -> Result<Vec<StoppingTime>> {
        if self.periods() > ENUM_MAX_PERIODS || self.n_leaves() > ENUM_MAX_LEAVES {
            return Err(Error::CapExceeded(format!(
                "stopping-time enumeration capped at {ENUM_MAX_PERIODS} periods / {ENUM_MAX_LEAVES} leaves, \
                 tree has {} periods and {} leaves",
                self.periods(),
                self.n_leaves()
            )));
        }
        Ok(self
            .stopping_patterns(0)
            .into_iter()
            .map(|by_leaf| StoppingTime { time_by_leaf: by_leaf })
            .collect())
    }

    /// All stop/continue patterns on the subtree below `node`: each pattern
    /// fixes the stopping index for every leaf-path through `node` (entries
    /// of other leaf-paths are placeholders).
    fn stopping_patterns(&self, node: usize) -> Vec<Vec<usize>> {
        let t = self.nodes[node].time_idx;
        let n_leaves = self.n_leaves();
        let stop_here = {
            let mut v = vec![0usize; n_leaves];
            for &j in self.leaves_through(node) {
                v[j] = t;
            }
            v
        };
        let mut out = vec![stop_here];
        if !self.nodes[node].children.is_empty() {
            let per_child: Vec<Vec<Vec<usize>>> = self.nodes[node]
                .children
                .iter()
                .map(|&c| self.stopping_patterns(c))
                .collect();
            let mut combos: Vec<Vec<usize>> = vec![vec![0usize; n_leaves]];
            for (ci, child_patterns) in per_child.iter().enumerate() {
                let child = self.nodes[node].children[ci];
                let child_leaves = self.leaves_through(child);
                let mut next = Vec::with_capacity(combos.len() * child_patterns.len());
                for combo in &combos {
                    for pat in child_patterns {
                        let mut merged = combo.clone();
                        for &j in child_leaves {
                            merged[j] = pat[j];
                        }
                        next.push(merged);
                    }
                }
                combos = next;
            }
            out.extend(combos);
        }
        out
    }

    /// Nodewise optional projection of a leaf-time-indexed integrand family:
    /// the conditional expectation of the integrands through each node.
    pub fn project_integrand(&self, h: &[Vec<SeparableIntegrand>]) -> Result<Vec<SeparableIntegrand>> {
        if h.len() != self.n_leaves() || h.iter().any(|row| row.len() != self.periods() + 1) {
            return Err(Error::DimMismatch(
                "integrand family must be indexed by (leaf-path, time)".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.n_nodes());
        for node in 0..self.n_nodes() {
            let t = self.nodes[node].time_idx;
            let leaves = self.leaves_through(node);
            let mass: f64 = leaves.iter().map(|&j| self.prob(self.leaves[j])).sum();
            let weights: Vec<f64> =
                leaves.iter().map(|&j| self.prob(self.leaves[j]) / mass).collect();
            let hs: Vec<&SeparableIntegrand> = leaves.iter().map(|&j| &h[j][t]).collect();
            out.push(separable::expectation(&weights, &hs)?);
        }
        Ok(out)
    }
}

// ----- serialization -----

impl ScenarioTree {
    /// `node <id> <time_index> <parent|-> <branch_prob> <mu_weight>` lines,
    /// preceded by a `times` line, wrapped in `tree` / `end`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("tree\n");
        out.push_str("times");
        for t in &self.times {
            out.push(' ');
            out.push_str(&fmt_f(*t));
        }
        out.push('\n');
        for (i, node) in self.nodes.iter().enumerate() {
            let parent = node.parent.map_or("-".to_string(), |p| p.to_string());
            out.push_str(&format!(
                "node {} {} {} {} {}\n",
                i,
                node.time_idx,
                parent,
                fmt_f(node.branch_prob),
                fmt_f(node.mu)
            ));
        }
        out.push_str("end\n");
        out
    }

    pub fn parse_block(scanner: &mut LineScanner) -> Result<ScenarioTree> {
        let start = scanner.expect("tree")?;
        let mut times = Vec::new();
        let mut parents = Vec::new();
        let mut probs = Vec::new();
        let mut tidx = Vec::new();
        let mut mu = Vec::new();
        loop {
            let (line, l) = scanner.next_line().ok_or_else(|| Error::Parse {
                line: scanner.eof_line(),
                msg: "tree block not terminated by `end`".into(),
            })?;
            if l == "end" {
                break;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            match toks[0] {
                "times" => {
                    times = toks[1..]
                        .iter()
                        .map(|t| parse_f(t, line))
                        .collect::<Result<Vec<f64>>>()?;
                }
                "node" => {
                    if toks.len() != 6 {
                        return Err(Error::Parse {
                            line,
                            msg: "node line needs `node <id> <time> <parent|-> <prob> <mu>`".into(),
                        });
                    }
                    let id = parse_usize(toks[1], line)?;
                    if id != parents.len() {
                        return Err(Error::Parse {
                            line,
                            msg: format!("node ids must be consecutive, expected {}", parents.len()),
                        });
                    }
                    tidx.push(parse_usize(toks[2], line)?);
                    parents.push(if toks[3] == "-" {
                        None
                    } else {
                        Some(parse_usize(toks[3], line)?)
                    });
                    probs.push(parse_f(toks[4], line)?);
                    mu.push(parse_f(toks[5], line)?);
                }
                other => {
                    return Err(Error::Parse { line, msg: format!("unexpected tree record {other:?}") })
                }
            }
        }
        if times.is_empty() {
            let n = tidx.iter().copied().max().unwrap_or(0) + 1;
            times = (0..n).map(|i| i as f64).collect();
        }
        Self::from_nodes(times, parents, probs, tidx, mu)
            .map_err(|e| Error::Parse { line: start, msg: e.to_string() })
    }
}

impl AdaptedProcess {
    /// `val <node_id> <v_1> … <v_d>` lines wrapped in `process <name>` / `end`.
    pub fn to_text(&self, name: &str) -> String {
        let mut out = format!("process {name}\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("val {i}"));
            for x in v {
                out.push(' ');
                out.push_str(&fmt_f(*x));
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse_block(
        scanner: &mut LineScanner,
        tree: &ScenarioTree,
    ) -> Result<(String, AdaptedProcess)> {
        let (line, header) = scanner.next_line().ok_or_else(|| Error::Parse {
            line: scanner.eof_line(),
            msg: "expected a process block".into(),
        })?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "process" {
            return Err(Error::Parse { line, msg: "expected `process <name>`".into() });
        }
        let name = toks[1].to_string();
        let mut values: Vec<Option<Vec<f64>>> = vec![None; tree.n_nodes()];
        loop {
            let (n, l) = scanner.next_line().ok_or_else(|| Error::Parse {
                line: scanner.eof_line(),
                msg: "process block not terminated by `end`".into(),
            })?;
            if l == "end" {
                break;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() < 3 || toks[0] != "val" {
                return Err(Error::Parse { line: n, msg: "expected `val <node> <v...>`".into() });
            }
            let id = parse_usize(toks[1], n)?;
            if id >= tree.n_nodes() {
                return Err(Error::Parse { line: n, msg: format!("node {id} out of range") });
            }
            values[id] = Some(toks[2..].iter().map(|t| parse_f(t, n)).collect::<Result<_>>()?);
        }
        let values: Vec<Vec<f64>> = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| Error::Parse { line, msg: format!("node {i} has no value") })
            })
            .collect::<Result<_>>()?;
        tree.check_dim(values.len(), "process")?;
        Ok((name, AdaptedProcess::from_values(values)?))
    }
}

impl RawProcess {
    /// `val <path_id>:<time> <v_1> … <v_d>` lines wrapped in
    /// `rawprocess <name>` / `end`.
    pub fn to_text(&self, name: &str) -> String {
        let mut out = format!("rawprocess {name}\n");
        for (j, row) in self.values.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                out.push_str(&format!("val {j}:{t}"));
                for x in v {
                    out.push(' ');
                    out.push_str(&fmt_f(*x));
                }
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse_block(
        scanner: &mut LineScanner,
        tree: &ScenarioTree,
    ) -> Result<(String, RawProcess)> {
        let (line, header) = scanner.next_line().ok_or_else(|| Error::Parse {
            line: scanner.eof_line(),
            msg: "expected a rawprocess block".into(),
        })?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "rawprocess" {
            return Err(Error::Parse { line, msg: "expected `rawprocess <name>`".into() });
        }
        let name = toks[1].to_string();
        let mut dim = 0usize;
        let mut values: Vec<Vec<Option<Vec<f64>>>> =
            vec![vec![None; tree.periods() + 1]; tree.n_leaves()];
        loop {
            let (n, l) = scanner.next_line().ok_or_else(|| Error::Parse {
                line: scanner.eof_line(),
                msg: "rawprocess block not terminated by `end`".into(),
            })?;
            if l == "end" {
                break;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() < 3 || toks[0] != "val" {
                return Err(Error::Parse { line: n, msg: "expected `val <path>:<time> <v...>`".into() });
            }
            let (pj, pt) = toks[1].split_once(':').ok_or_else(|| Error::Parse {
                line: n,
                msg: "raw value index must be `<path>:<time>`".into(),
            })?;
            let j = parse_usize(pj, n)?;
            let t = parse_usize(pt, n)?;
            if j >= tree.n_leaves() || t > tree.periods() {
                return Err(Error::Parse { line: n, msg: format!("index {j}:{t} out of range") });
            }
            let v: Vec<f64> = toks[2..].iter().map(|tk| parse_f(tk, n)).collect::<Result<_>>()?;
            dim = v.len();
            values[j][t] = Some(v);
        }
        let values: Vec<Vec<Vec<f64>>> = values
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| v.ok_or_else(|| Error::Parse { line, msg: "missing raw value".into() }))
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        Ok((name, RawProcess { dim, values }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plq::PlqFunction;

    fn two_leaf_tree() -> ScenarioTree {
        // root splits into two equally likely leaves at time 1
        ScenarioTree::from_nodes(
            vec![0.0, 1.0],
            vec![None, Some(0), Some(0)],
            vec![1.0, 0.5, 0.5],
            vec![0, 1, 1],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let tree = two_leaf_tree();
        // deterministic raw process is fixed by the projection
        let mut v = RawProcess::zeros(&tree, 1);
        for row in v.values.iter_mut() {
            row[0][0] = 3.0;
            row[1][0] = -1.0;
        }
        let p = tree.optional_projection(&v);
        assert_eq!(p.node(0), &[3.0]);
        assert_eq!(p.node(1), &[-1.0]);
        assert_eq!(p.node(2), &[-1.0]);

        // v at time 0 is 0 on path 1 and 2 on path 2 → projected root value 1
        let mut v = RawProcess::zeros(&tree, 1);
        v.values[1][0][0] = 2.0;
        let p = tree.optional_projection(&v);
        assert_eq!(p.node(0), &[1.0]);
        assert!(!tree.is_adapted(&v));

        // adapted processes are fixed points
        let a = AdaptedProcess::scalar(vec![0.3, 1.0, -2.0]);
        let raw = RawProcess::from_adapted(&tree, &a);
        assert!(tree.is_adapted(&raw));
        assert_eq!(tree.optional_projection(&raw), a);
    }

    #[test]
    fn projection_identity_examples() {
        let tree = two_leaf_tree();
        let mut v = RawProcess::zeros(&tree, 1);
        v.values[1][0][0] = 2.0;
        v.values[0][1][0] = -1.0;
        v.values[1][1][0] = 5.0;
        for tau in tree.enumerate_stopping_times().unwrap() {
            assert!(tree.verify_projection_identity(&v, &tau) <= 1e-12);
        }
    }

    #[test]
    fn r1_norm_examples() {
        // deterministic process: max over time of |v|
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]).unwrap();
        let path = ScenarioTree::single_path(&grid);
        let v = AdaptedProcess::scalar(vec![1.0, -3.0, 2.0]);
        assert_eq!(path.r1_norm(&v), 3.0);

        // v_0 = 0, v_1 = ±1 with probability ½ each → 1 (stop at time 1)
        let tree = two_leaf_tree();
        let v = AdaptedProcess::scalar(vec![0.0, 1.0, -1.0]);
        assert_eq!(tree.r1_norm(&v), 1.0);
    }

    #[test]
    fn snell_matches_enumeration() {
        let grid = TimeGrid::uniform(3, 1.0);
        let tree = ScenarioTree::uniform(&grid, 2);
        let vals: Vec<f64> = (0..tree.n_nodes())
            .map(|i| ((i * 2654435761) % 97) as f64 / 17.0 - 2.5)
            .collect();
        let v = AdaptedProcess::scalar(vals);
        let snell = tree.r1_norm(&v);
        let best = tree
            .enumerate_stopping_times()
            .unwrap()
            .iter()
            .map(|tau| tree.expected_abs_at_stopping(&v, tau))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((snell - best).abs() <= 1e-12, "snell {snell} vs oracle {best}");
    }

    #[test]
    fn stopping_time_enumeration_counts() {
        // one-period binary tree: stop at the root or stop at time 1
        let tree = two_leaf_tree();
        let taus = tree.enumerate_stopping_times().unwrap();
        assert_eq!(taus.len(), 2);
        for tau in &taus {
            assert!(tree.is_valid_stopping_time(tau));
        }
        // oracle: filter all maps leaves → times by adaptedness
        let mut count = 0;
        for a in 0..=1usize {
            for b in 0..=1usize {
                let tau = StoppingTime { time_by_leaf: vec![a, b] };
                if tree.is_valid_stopping_time(&tau) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, taus.len());

        // recursion count: #(node) = 1 + Π #(children)
        let grid = TimeGrid::uniform(2, 1.0);
        let tree = ScenarioTree::uniform(&grid, 2);
        let taus = tree.enumerate_stopping_times().unwrap();
        assert_eq!(taus.len(), 1 + (1 + 1) * (1 + 1));
        assert!(taus.iter().all(|t| tree.is_valid_stopping_time(t)));
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let grid = TimeGrid::uniform(5, 1.0);
        let tree = ScenarioTree::uniform(&grid, 2);
        assert!(matches!(tree.enumerate_stopping_times(), Err(Error::CapExceeded(_))));
    }

    #[test]
    fn constant_process_is_adapted() {
        let tree = two_leaf_tree();
        let raw = RawProcess::from_adapted(&tree, &AdaptedProcess::scalar(vec![1.0, 1.0, 1.0]));
        assert!(tree.is_adapted(&raw));
        // leaf-index-dependent value at time 0 is not adapted
        let mut v = RawProcess::zeros(&tree, 1);
        v.values[0][0][0] = 0.0;
        v.values[1][0][0] = 1.0;
        assert!(!tree.is_adapted(&v));
    }

    #[test]
    fn project_integrand_examples() {
        let tree = two_leaf_tree();
        // deterministic integrand is a fixed point
        let f = SeparableIntegrand::scalar(PlqFunction::half_square());
        let family = vec![vec![f.clone(), f.clone()], vec![f.clone(), f.clone()]];
        let node_h = tree.project_integrand(&family).unwrap();
        for h in &node_h {
            assert!(crate::plq::approx_eq(h.coord(0), &PlqFunction::half_square(), 1e-12));
        }

        // two leaves, equal probability: quadratics average, indicators intersect
        let f1 = SeparableIntegrand::scalar(PlqFunction::half_square().shift(-1.0).unwrap());
        let f2 = SeparableIntegrand::scalar(PlqFunction::half_square().shift(1.0).unwrap());
        let family = vec![vec![f1.clone(), f1.clone()], vec![f2.clone(), f2.clone()]];
        let node_h = tree.project_integrand(&family).unwrap();
        let expected = PlqFunction::quadratic(0.5, 0.0, 0.5);
        assert!(crate::plq::approx_eq(node_h[0].coord(0), &expected, 1e-12));

        let i1 = SeparableIntegrand::scalar(PlqFunction::indicator(0.0, 2.0));
        let i2 = SeparableIntegrand::scalar(PlqFunction::indicator(1.0, 3.0));
        let family = vec![vec![i1.clone(), i1.clone()], vec![i2.clone(), i2.clone()]];
        let node_h = tree.project_integrand(&family).unwrap();
        assert!(crate::plq::approx_eq(
            node_h[0].coord(0),
            &PlqFunction::indicator(1.0, 2.0),
            1e-12
        ));
    }

    #[test]
    fn tree_text_roundtrip() {
        let grid = TimeGrid::uniform(2, 1.0);
        let tree = ScenarioTree::uniform(&grid, 2);
        let text = tree.to_text();
        let mut scanner = LineScanner::new(&text);
        let parsed = ScenarioTree::parse_block(&mut scanner).unwrap();
        assert_eq!(parsed.n_nodes(), tree.n_nodes());
        assert_eq!(parsed.leaves(), tree.leaves());
        for i in 0..tree.n_nodes() {
            assert_eq!(parsed.prob(i), tree.prob(i));
            assert_eq!(parsed.mu(i), tree.mu(i));
        }

        let v = AdaptedProcess::scalar((0..tree.n_nodes()).map(|i| i as f64 / 3.0).collect());
        let text = v.to_text("w");
        let mut scanner = LineScanner::new(&text);
        let (name, parsed) = AdaptedProcess::parse_block(&mut scanner, &tree).unwrap();
        assert_eq!(name, "w");
        assert_eq!(parsed, v);
    }

    #[test]
    fn invalid_trees_are_rejected() {
        // branch probabilities must sum to one
        let r = ScenarioTree::from_nodes(
            vec![0.0, 1.0],
            vec![None, Some(0), Some(0)],
            vec![1.0, 0.5, 0.4],
            vec![0, 1, 1],
            vec![1.0, 1.0, 1.0],
        );
        assert!(r.is_err());
        // zero μ weight violates full support
        let r = ScenarioTree::from_nodes(
            vec![0.0, 1.0],
            vec![None, Some(0)],
            vec![1.0, 1.0],
            vec![0, 1],
            vec![1.0, 0.0],
        );
        assert!(r.is_err());
    }
}
