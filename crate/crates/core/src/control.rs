//! Discrete transcription of the singular control problem and its dual.
//!
//! The state density obeys the explicit one-step scheme
//!
//! ```text
//! c_n = c_parent + u_n μ_n + s_n,          ż_n = A z_n + B c_n + W_n,
//! z_root = 0,                              z_child = z_n + ż_n μ_n,
//! ```
//!
//! and the primal cost is `E[Σ g(ż)μ + e(ż_T) + Σ h*(u)μ + Σ (h*)^∞(s)]`.
//! The dual state is *not* discretized separately: [`adjoint_dynamics`] is
//! the exact algebraic transpose of the forward map, which makes the adjoint
//! pairing identity hold to round-off at any grid size and keeps the duality
//! gap a sum of nonnegative nodewise Fenchel residuals (see [`kkt_check`]).
//!
//! The terminal condition of the transpose is `p_N = −(η* + μ_N w*_N)`: the
//! running cost charges the final grid time as well, so the adjoint absorbs
//! that term where a continuous-time statement would read `p_T = −η*`.

pub mod solver;

use crate::error::{Error, Result};
use crate::measure::CumulativePath;
use crate::plq::{PlqFunction, SubdiffInterval};
use crate::separable::SeparableIntegrand;
use crate::textio::{fmt_f, parse_f, parse_usize, LineScanner};
use crate::tree::{AdaptedProcess, RawProcess, ScenarioTree};

/// Dense row-major `d × d` matrix; small `d`, no linear algebra beyond
/// matrix-vector products is ever needed.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    d: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(d: usize) -> Self {
        SquareMatrix { d, data: vec![0.0; d * d] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.data[i * d + i] = diag[i];
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimMismatch("matrix must be square".into()));
        }
        Ok(SquareMatrix { d, data: rows.into_iter().flatten().collect() })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for i in 0..self.d {
            let mut acc = 0.0;
            for j in 0..self.d {
                acc += self.data[i * self.d + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// `Aᵀ v`.
    pub fn tmatvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for j in 0..self.d {
            let mut acc = 0.0;
            for i in 0..self.d {
                acc += self.data[i * self.d + j] * v[i];
            }
            out[j] = acc;
        }
        out
    }

    pub fn is_diagonal(&self) -> bool {
        for i in 0..self.d {
            for j in 0..self.d {
                if i != j && self.data[i * self.d + j] != 0.0 {
                    return false;
                }
            }
        }
        true
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.data[i * self.d..(i + 1) * self.d].to_vec()).collect()
    }
}

/// Full data of one singular control problem instance.
///
/// `g` and `h` are node-indexed, `e` is leaf-indexed (by leaf-path index).
/// The conjugates, recessions and domain boxes are derived eagerly.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub tree: ScenarioTree,
    pub a_mat: SquareMatrix,
    pub b_mat: SquareMatrix,
    pub w: AdaptedProcess,
    pub g: Vec<SeparableIntegrand>,
    pub e: Vec<SeparableIntegrand>,
    pub h: Vec<SeparableIntegrand>,
    pub h_star: Vec<SeparableIntegrand>,
    pub h_star_rec: Vec<SeparableIntegrand>,
    pub g_star: Vec<SeparableIntegrand>,
    pub e_star: Vec<SeparableIntegrand>,
    /// `D = cl dom h` per node, per coordinate.
    pub d_box: Vec<Vec<(f64, f64)>>,
}

impl ControlProblem {
    pub fn new(
        tree: ScenarioTree,
        a_mat: SquareMatrix,
        b_mat: SquareMatrix,
        w: AdaptedProcess,
        g: Vec<SeparableIntegrand>,
        e: Vec<SeparableIntegrand>,
        h: Vec<SeparableIntegrand>,
    ) -> Result<Self> {
        let d = a_mat.dim();
        if b_mat.dim() != d || w.dim != d {
            return Err(Error::DimMismatch("A, B and W dimensions must agree".into()));
        }
        if w.values.len() != tree.n_nodes() {
            return Err(Error::DimMismatch("disturbance must carry one value per node".into()));
        }
        if g.len() != tree.n_nodes() || h.len() != tree.n_nodes() || e.len() != tree.n_leaves() {
            return Err(Error::DimMismatch(
                "g and h are node-indexed, e is leaf-indexed".into(),
            ));
        }
        for f in g.iter().chain(h.iter()).chain(e.iter()) {
            if f.dim() != d {
                return Err(Error::DimMismatch("integrand dimension must match the state".into()));
            }
            if !f.is_proper() {
                return Err(Error::Improper("control problem integrands must be proper".into()));
            }
        }
        let h_star: Vec<SeparableIntegrand> = h.iter().map(|f| f.conjugate()).collect::<Result<_>>()?;
        let h_star_rec: Vec<SeparableIntegrand> =
            h_star.iter().map(|f| f.recession()).collect::<Result<_>>()?;
        let g_star: Vec<SeparableIntegrand> = g.iter().map(|f| f.conjugate()).collect::<Result<_>>()?;
        let e_star: Vec<SeparableIntegrand> = e.iter().map(|f| f.conjugate()).collect::<Result<_>>()?;
        let d_box: Vec<Vec<(f64, f64)>> = h.iter().map(|f| f.domain_box()).collect::<Result<_>>()?;
        Ok(ControlProblem { tree, a_mat, b_mat, w, g, e, h, h_star, h_star_rec, g_star, e_star, d_box })
    }

    pub fn dim(&self) -> usize {
        self.a_mat.dim()
    }

    /// Leaf index of a leaf-time node.
    pub fn leaf_index(&self, node: usize) -> Option<usize> {
        self.tree.leaves().binary_search(&node).ok()
    }
}

/// State trajectory produced by the forward scheme.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Cumulative control (total, per node).
    pub c: Vec<Vec<f64>>,
    /// Cumulative state `z` (z at the root is 0; `z_n` excludes `ż_n μ_n`).
    pub z: AdaptedProcess,
    /// State density `ż_n = A z_n + B c_n + W_n`.
    pub zdot: AdaptedProcess,
}

/// Primal point: control density, singular atoms, the induced trajectory and
/// the primal objective value.
#[derive(Debug, Clone)]
pub struct PrimalSolution {
    pub u: AdaptedProcess,
    pub s: AdaptedProcess,
    pub z: AdaptedProcess,
    pub zdot: AdaptedProcess,
    pub c: CumulativePath,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dual point: running dual variable, terminal dual variable, the pathwise
/// adjoint, its optional projection and the dual objective value.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub w_star: AdaptedProcess,
    /// One vector per leaf-path.
    pub eta_star: Vec<Vec<f64>>,
    pub p: RawProcess,
    pub op: AdaptedProcess,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the forward scheme for given total per-node control increments.
/// `include_w` switches the disturbance on (the full dynamics) or off (the
/// linear part, used by the adjoint pairing and the gradient oracle).
pub(crate) fn forward_total(
    prob: &ControlProblem,
    delta: &[Vec<f64>],
    include_w: bool,
) -> Trajectory {
    let tree = &prob.tree;
    let d = prob.dim();
    let mut c = vec![vec![0.0; d]; tree.n_nodes()];
    let mut z = AdaptedProcess::zeros(tree, d);
    let mut zdot = AdaptedProcess::zeros(tree, d);
    for node in 0..tree.n_nodes() {
        for k in 0..d {
            c[node][k] = delta[node][k]
                + tree.parent(node).map_or(0.0, |p| c[p][k]);
        }
        if let Some(p) = tree.parent(node) {
            let m = tree.mu(p);
            for k in 0..d {
                z.values[node][k] = z.values[p][k] + zdot.values[p][k] * m;
            }
        }
        let az = prob.a_mat.matvec(z.node(node));
        let bc = prob.b_mat.matvec(&c[node]);
        for k in 0..d {
            zdot.values[node][k] =
                az[k] + bc[k] + if include_w { prob.w.node(node)[k] } else { 0.0 };
        }
    }
    Trajectory { c, z, zdot }
}

/// Forward dynamics from a density/atom pair: `c` accumulates
/// `u_j μ_j + s_j` along the path and the state follows the one-step scheme.
pub fn forward_dynamics(prob: &ControlProblem, u: &AdaptedProcess, s: &AdaptedProcess) -> Result<Trajectory> {
    let d = prob.dim();
    if u.dim != d || s.dim != d
        || u.values.len() != prob.tree.n_nodes()
        || s.values.len() != prob.tree.n_nodes()
    {
        return Err(Error::DimMismatch("control shapes must match the problem".into()));
    }
    let delta: Vec<Vec<f64>> = (0..prob.tree.n_nodes())
        .map(|n| {
            let m = prob.tree.mu(n);
            (0..d).map(|k| u.node(n)[k] * m + s.node(n)[k]).collect()
        })
        .collect();
    Ok(forward_total(prob, &delta, true))
}

/// Cumulative-path assembly of `(u, s)`, split into its μ-part and atoms.
pub fn control_path(prob: &ControlProblem, u: &AdaptedProcess, s: &AdaptedProcess) -> CumulativePath {
    let tree = &prob.tree;
    let d = prob.dim();
    let mut ac = AdaptedProcess::zeros(tree, d);
    let mut sing = AdaptedProcess::zeros(tree, d);
    for node in 0..tree.n_nodes() {
        let m = tree.mu(node);
        for k in 0..d {
            let (pa, ps) = match tree.parent(node) {
                Some(p) => (ac.values[p][k], sing.values[p][k]),
                None => (0.0, 0.0),
            };
            ac.values[node][k] = pa + u.node(node)[k] * m;
            sing.values[node][k] = ps + s.node(node)[k];
        }
    }
    CumulativePath { ac, sing }
}

/// Zero-control trajectory `a` and its density `ȧ = A a + W`, defined by the
/// same one-step scheme (no matrix exponential, so the shifted problem is
/// exactly consistent with the transcription).
pub fn zero_control_trajectory(prob: &ControlProblem) -> (AdaptedProcess, AdaptedProcess) {
    let delta = vec![vec![0.0; prob.dim()]; prob.tree.n_nodes()];
    let traj = forward_total(prob, &delta, true);
    (traj.z, traj.zdot)
}

/// Exact transpose of the forward map: pathwise backward recursion
/// `p_i = (I + μ_i Aᵀ) p_{i+1} − μ_i w*_i` with `p_N = −(η* + μ_N w*_N)`,
/// plus its optional projection computed by the equivalent tree recursion.
pub fn adjoint_dynamics(
    prob: &ControlProblem,
    w_star: &AdaptedProcess,
    eta_star: &[Vec<f64>],
) -> Result<(RawProcess, AdaptedProcess)> {
    let tree = &prob.tree;
    let d = prob.dim();
    if w_star.dim != d || w_star.values.len() != tree.n_nodes() {
        return Err(Error::DimMismatch("w* must carry one d-vector per node".into()));
    }
    if eta_star.len() != tree.n_leaves() || eta_star.iter().any(|v| v.len() != d) {
        return Err(Error::DimMismatch("η* must carry one d-vector per leaf-path".into()));
    }
    let mut p = RawProcess::zeros(tree, d);
    for j in 0..tree.n_leaves() {
        let path = tree.path_nodes(j);
        let n_last = *path.last().unwrap();
        let m_last = tree.mu(n_last);
        for k in 0..d {
            p.values[j][path.len() - 1][k] =
                -(eta_star[j][k] + m_last * w_star.node(n_last)[k]);
        }
        for i in (0..path.len() - 1).rev() {
            let node = path[i];
            let m = tree.mu(node);
            let succ = p.values[j][i + 1].clone();
            let at_p = prob.a_mat.tmatvec(&succ);
            for k in 0..d {
                p.values[j][i][k] = succ[k] + m * at_p[k] - m * w_star.node(node)[k];
            }
        }
    }
    // direct tree recursion for the projection; agrees with projecting `p`
    let mut op = AdaptedProcess::zeros(tree, d);
    for node in (0..tree.n_nodes()).rev() {
        let m = tree.mu(node);
        if tree.children(node).is_empty() {
            let j = prob.leaf_index(node).expect("leaf-time node");
            for k in 0..d {
                op.values[node][k] = -(eta_star[j][k] + m * w_star.node(node)[k]);
            }
        } else {
            let mut expect = vec![0.0; d];
            for &ch in tree.children(node) {
                for k in 0..d {
                    expect[k] += tree.branch_prob(ch) * op.values[ch][k];
                }
            }
            let at_e = prob.a_mat.tmatvec(&expect);
            for k in 0..d {
                op.values[node][k] = expect[k] + m * at_e[k] - m * w_star.node(node)[k];
            }
        }
    }
    Ok((p, op))
}

/// Residual of the adjoint pairing identity
/// `⟨(Ȧc, (Ȧc)_T), (w*, η*)⟩ = ⟨−Bᵀᵒp, Dc⟩` for the disturbance-free
/// linear map; zero to round-off by construction of the transpose.
pub fn pairing_identity_check(
    prob: &ControlProblem,
    u: &AdaptedProcess,
    s: &AdaptedProcess,
    w_star: &AdaptedProcess,
    eta_star: &[Vec<f64>],
) -> Result<f64> {
    let tree = &prob.tree;
    let d = prob.dim();
    let delta: Vec<Vec<f64>> = (0..tree.n_nodes())
        .map(|n| {
            let m = tree.mu(n);
            (0..d).map(|k| u.node(n)[k] * m + s.node(n)[k]).collect()
        })
        .collect();
    let linear = forward_total(prob, &delta, false);
    // left side: E[Σ ż·w* μ + ż_T·η*]
    let mut lhs = 0.0;
    for node in 0..tree.n_nodes() {
        let pnode = tree.prob(node);
        let m = tree.mu(node);
        let x = linear.zdot.node(node);
        for k in 0..d {
            lhs += pnode * m * x[k] * w_star.node(node)[k];
        }
    }
    for (j, &leaf) in tree.leaves().iter().enumerate() {
        let x = linear.zdot.node(leaf);
        let pj = tree.prob(leaf);
        for k in 0..d {
            lhs += pj * x[k] * eta_star[j][k];
        }
    }
    // right side: −Σ P_n (Bᵀᵒp)_n · Δc_n
    let (_, op) = adjoint_dynamics(prob, w_star, eta_star)?;
    let mut rhs = 0.0;
    for node in 0..tree.n_nodes() {
        let btp = prob.b_mat.tmatvec(op.node(node));
        let pnode = tree.prob(node);
        for k in 0..d {
            rhs -= pnode * btp[k] * delta[node][k];
        }
    }
    Ok((lhs - rhs).abs())
}

/// Hamiltonian value `g(z) + h*(c) − p·(Az + Bc + W)` at a node.
pub fn hamiltonian(prob: &ControlProblem, node: usize, z: &[f64], c: &[f64], p: &[f64]) -> f64 {
    let gz = prob.g[node].evaluate(z);
    let hc = prob.h_star[node].evaluate(c);
    if !gz.is_finite() || !hc.is_finite() {
        return f64::INFINITY;
    }
    let az = prob.a_mat.matvec(z);
    let bc = prob.b_mat.matvec(c);
    let mut drift = 0.0;
    for k in 0..prob.dim() {
        drift += p[k] * (az[k] + bc[k] + prob.w.node(node)[k]);
    }
    gz + hc - drift
}

/// Pointwise Hamiltonian minimization in the control argument.
#[derive(Debug, Clone)]
pub struct HamiltonianEval {
    /// `inf_c { h*(c) − q·c } = −h(q)` when `q ∈ D`, else `−∞`.
    pub value: f64,
    /// Minimum-norm minimizer `c* ∈ ∂h(q)` per coordinate (when feasible).
    pub argmin_density: Vec<f64>,
    /// Per coordinate: the direction in `{−1, 0, +1}` minimizing the
    /// recession cost `(h*)^∞(dir) − q·dir`, with the attained value.
    pub recession_argmin: Vec<(f64, f64)>,
    pub feasible: bool,
}

/// Minimizes `c ↦ h*(c) − q·c` exactly via subdifferential inversion at
/// `q = Bᵀᵒp`. Infeasible (value `−∞`) exactly when `q` leaves `D = dom h`,
/// matching the dual box constraint.
pub fn hamiltonian_argmin(prob: &ControlProblem, node: usize, q: &[f64]) -> HamiltonianEval {
    let d = prob.dim();
    let mut argmin = vec![0.0; d];
    let mut rec = Vec::with_capacity(d);
    let mut feasible = true;
    let mut value = 0.0;
    for k in 0..d {
        let hk = prob.h[node].coord(k);
        let hv = hk.evaluate(q[k]);
        if !hv.is_finite() {
            feasible = false;
        } else {
            value -= hv;
            let sub: SubdiffInterval = hk.subdifferential(q[k]);
            argmin[k] = sub.min_norm();
        }
        // recession comparison over unit directions
        let reck = prob.h_star_rec[node].coord(k);
        let plus = reck.evaluate(1.0) - q[k];
        let minus = reck.evaluate(-1.0) + q[k];
        let best = plus.min(minus).min(0.0);
        let dir = if best == 0.0 {
            0.0
        } else if plus <= minus {
            1.0
        } else {
            -1.0
        };
        rec.push((dir, best));
    }
    HamiltonianEval {
        value: if feasible { value } else { f64::NEG_INFINITY },
        argmin_density: argmin,
        recession_argmin: rec,
        feasible,
    }
}

/// Nodewise Fenchel residuals of the four optimality inclusions.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// max over nodes of `h(Bᵀᵒp) + h*(u) − u·Bᵀᵒp`.
    pub density_inclusion: f64,
    /// max over nodes of `(h*)^∞(s) − s·Bᵀᵒp`.
    pub singular_inclusion: f64,
    /// max over nodes of `g(ż) + g*(w*) − ż·w*`.
    pub running_inclusion: f64,
    /// max over leaves of `e(ż_T) + e*(η*) − ż_T·η*`.
    pub terminal_inclusion: f64,
    /// `(node, r_density, r_singular, r_running, r_terminal)` rows.
    pub per_node: Vec<(usize, f64, f64, f64, f64)>,
    /// Probability/μ-weighted sum of all residuals; equals the duality gap
    /// `primal + dual` exactly.
    pub weighted_sum: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.density_inclusion
            .max(self.singular_inclusion)
            .max(self.running_inclusion)
            .max(self.terminal_inclusion)
    }
}

/// Evaluates the four Fenchel residuals of the maximum principle at a
/// primal/dual pair. Residuals are `+∞` when the dual point violates the box
/// `Bᵀᵒp ∈ D`.
pub fn kkt_check(prob: &ControlProblem, primal: &PrimalSolution, dual: &DualSolution) -> Result<KktReport> {
    let tree = &prob.tree;
    let d = prob.dim();
    let mut report = KktReport {
        density_inclusion: 0.0,
        singular_inclusion: 0.0,
        running_inclusion: 0.0,
        terminal_inclusion: 0.0,
        per_node: Vec::with_capacity(tree.n_nodes()),
        weighted_sum: 0.0,
    };
    for node in 0..tree.n_nodes() {
        let pnode = tree.prob(node);
        let m = tree.mu(node);
        let btp = prob.b_mat.tmatvec(dual.op.node(node));
        let un = primal.u.node(node);
        let sn = primal.s.node(node);
        let zdot = primal.zdot.node(node);
        let wsn = dual.w_star.node(node);
        let mut dot_u = 0.0;
        let mut dot_s = 0.0;
        let mut dot_g = 0.0;
        for k in 0..d {
            dot_u += un[k] * btp[k];
            dot_s += sn[k] * btp[k];
            dot_g += zdot[k] * wsn[k];
        }
        let r1 = prob.h[node].evaluate(&btp) + prob.h_star[node].evaluate(un) - dot_u;
        let r2 = prob.h_star_rec[node].evaluate(sn) - dot_s;
        let r3 = prob.g[node].evaluate(zdot) + prob.g_star[node].evaluate(wsn) - dot_g;
        let r4 = if let Some(j) = prob.leaf_index(node) {
            let mut dot_e = 0.0;
            for k in 0..d {
                dot_e += zdot[k] * dual.eta_star[j][k];
            }
            prob.e[j].evaluate(zdot) + prob.e_star[j].evaluate(&dual.eta_star[j]) - dot_e
        } else {
            0.0
        };
        report.density_inclusion = report.density_inclusion.max(r1);
        report.singular_inclusion = report.singular_inclusion.max(r2);
        report.running_inclusion = report.running_inclusion.max(r3);
        report.terminal_inclusion = report.terminal_inclusion.max(r4);
        report.weighted_sum += pnode * (m * (r1 + r3) + r2 + r4);
        report.per_node.push((node, r1, r2, r3, r4));
    }
    Ok(report)
}

/// Primal objective at a density/atom pair.
pub fn primal_objective(prob: &ControlProblem, u: &AdaptedProcess, s: &AdaptedProcess) -> Result<f64> {
    let traj = forward_dynamics(prob, u, s)?;
    let tree = &prob.tree;
    let mut total = 0.0;
    for node in 0..tree.n_nodes() {
        let pnode = tree.prob(node);
        let m = tree.mu(node);
        let gv = prob.g[node].evaluate(traj.zdot.node(node));
        let hv = prob.h_star[node].evaluate(u.node(node));
        let rv = prob.h_star_rec[node].evaluate(s.node(node));
        if !gv.is_finite() || !hv.is_finite() || !rv.is_finite() {
            return Ok(f64::INFINITY);
        }
        total += pnode * (m * (gv + hv) + rv);
    }
    for (j, &leaf) in tree.leaves().iter().enumerate() {
        let ev = prob.e[j].evaluate(traj.zdot.node(leaf));
        if !ev.is_finite() {
            return Ok(f64::INFINITY);
        }
        total += tree.prob(leaf) * ev;
    }
    Ok(total)
}

/// Dual objective `E[Σ g̃*(w*)μ + ẽ*(η*) + Σ h(Bᵀᵒp)μ]`, where the tilde
/// marks the shift by the zero-control density `ȧ` (conjugate-shift law:
/// `g̃*(w) = g*(w) − ȧ·w`).
pub fn dual_objective(
    prob: &ControlProblem,
    w_star: &AdaptedProcess,
    eta_star: &[Vec<f64>],
) -> Result<f64> {
    let (_, adot) = zero_control_trajectory(prob);
    let (_, op) = adjoint_dynamics(prob, w_star, eta_star)?;
    let tree = &prob.tree;
    let d = prob.dim();
    let mut total = 0.0;
    for node in 0..tree.n_nodes() {
        let pnode = tree.prob(node);
        let m = tree.mu(node);
        let gs = prob.g_star[node].evaluate(w_star.node(node));
        let btp = prob.b_mat.tmatvec(op.node(node));
        let hv = prob.h[node].evaluate(&btp);
        if !gs.is_finite() || !hv.is_finite() {
            return Ok(f64::INFINITY);
        }
        let mut shift = 0.0;
        for k in 0..d {
            shift += adot.node(node)[k] * w_star.node(node)[k];
        }
        total += pnode * m * (gs - shift + hv);
    }
    for (j, &leaf) in tree.leaves().iter().enumerate() {
        let es = prob.e_star[j].evaluate(&eta_star[j]);
        if !es.is_finite() {
            return Ok(f64::INFINITY);
        }
        let mut shift = 0.0;
        for k in 0..d {
            shift += adot.node(leaf)[k] * eta_star[j][k];
        }
        total += tree.prob(leaf) * (es - shift);
    }
    Ok(total)
}

// ----- named instances -----

/// The `h*` with quadratic core `c²` on `|c| ≤ k/2` and linear growth
/// `k|c| − k²/4` beyond.
pub fn ls_hstar(k: f64) -> Result<PlqFunction> {
    if !(k >= 0.0) {
        return Err(Error::InvalidParam(format!("k must be nonnegative, got {k}")));
    }
    if k == 0.0 {
        return Ok(PlqFunction::zero());
    }
    PlqFunction::new(
        f64::NEG_INFINITY,
        f64::INFINITY,
        vec![-k / 2.0, k / 2.0],
        vec![
            crate::plq::Piece::new(0.0, -k, -k * k / 4.0),
            crate::plq::Piece::new(1.0, 0.0, 0.0),
            crate::plq::Piece::new(0.0, k, -k * k / 4.0),
        ],
    )
}

/// One-dimensional bounded-velocity tracking instance: `g = ½r|z|²`, no
/// terminal cost, `h = (h*)*` with `dom h = [−k, k]`, `B = 1`, `A` optional.
/// `k = 0` degenerates to `h = δ_{{0}}` (constructed, but flagged upstream).
pub fn build_ls_instance(
    r: f64,
    k: f64,
    tree: &ScenarioTree,
    a_mat: Option<SquareMatrix>,
    w: AdaptedProcess,
) -> Result<ControlProblem> {
    if !(r >= 0.0) {
        return Err(Error::InvalidParam(format!("r must be nonnegative, got {r}")));
    }
    if w.dim != 1 {
        return Err(Error::DimMismatch("this instance is one-dimensional".into()));
    }
    let hstar = ls_hstar(k)?;
    let h = hstar.conjugate()?;
    let g = PlqFunction::quadratic(0.5 * r, 0.0, 0.0);
    let nodes = tree.n_nodes();
    ControlProblem::new(
        tree.clone(),
        a_mat.unwrap_or_else(|| SquareMatrix::zeros(1)),
        SquareMatrix::identity(1),
        w,
        vec![SeparableIntegrand::scalar(g); nodes],
        vec![SeparableIntegrand::scalar(PlqFunction::zero()); tree.n_leaves()],
        vec![SeparableIntegrand::scalar(h); nodes],
    )
}

/// Irreversible-investment instance: maximize
/// `E[∫U(c)dμ − ∫D dc + U_T(c_T)]` over nondecreasing `c`, transcribed with
/// `g = −U`, `e = −U_T`, `h = δ_{(−∞, D]}` so `h*(c) = Dc + δ_{c ≥ 0}`.
/// `neg_u` is node-indexed, `neg_u_t` leaf-indexed; `d_proc` must be a
/// nonnegative adapted scalar process.
pub fn build_bk_instance(
    neg_u: Vec<PlqFunction>,
    neg_u_t: Vec<PlqFunction>,
    d_proc: &AdaptedProcess,
    tree: &ScenarioTree,
) -> Result<ControlProblem> {
    if d_proc.dim != 1 || d_proc.values.len() != tree.n_nodes() {
        return Err(Error::DimMismatch("D must be a scalar adapted process".into()));
    }
    if d_proc.values.iter().any(|v| v[0] < 0.0) {
        return Err(Error::InvalidParam("D must be nonnegative".into()));
    }
    if neg_u.len() != tree.n_nodes() || neg_u_t.len() != tree.n_leaves() {
        return Err(Error::DimMismatch("−U is node-indexed and −U_T leaf-indexed".into()));
    }
    let h: Vec<SeparableIntegrand> = (0..tree.n_nodes())
        .map(|n| {
            SeparableIntegrand::scalar(PlqFunction::indicator(
                f64::NEG_INFINITY,
                d_proc.node(n)[0],
            ))
        })
        .collect();
    ControlProblem::new(
        tree.clone(),
        SquareMatrix::zeros(1),
        SquareMatrix::identity(1),
        AdaptedProcess::zeros(tree, 1),
        neg_u.into_iter().map(SeparableIntegrand::scalar).collect(),
        neg_u_t.into_iter().map(SeparableIntegrand::scalar).collect(),
        h,
    )
}

/// Residuals of the irreversible-investment optimality conditions.
#[derive(Debug, Clone, Copy)]
pub struct BkConditions {
    /// `max (ᵒp − D)₊`: dual feasibility.
    pub feasibility: f64,
    /// `max (−dc)₊`: monotonicity of the control.
    pub monotonicity: f64,
    /// `|E Σ (D − ᵒp)·dc|`: complementary slackness.
    pub complementarity: f64,
    /// Representation `p_t = U'_T(c_T) + Σ_{j≥t} U'(c_j) μ_j` pathwise.
    pub p_representation: f64,
}

/// Checks the irreversible-investment optimality conditions at a solved
/// primal/dual pair of [`build_bk_instance`].
pub fn bk_conditions_check(
    prob: &ControlProblem,
    primal: &PrimalSolution,
    dual: &DualSolution,
    d_proc: &AdaptedProcess,
) -> Result<BkConditions> {
    let tree = &prob.tree;
    if prob.dim() != 1 {
        return Err(Error::DimMismatch("the investment conditions are one-dimensional".into()));
    }
    let mut feasibility = 0.0f64;
    let mut monotonicity = 0.0f64;
    let mut complementarity = 0.0f64;
    for node in 0..tree.n_nodes() {
        let opn = dual.op.node(node)[0];
        let dn = d_proc.node(node)[0];
        let dc = primal.u.node(node)[0] * tree.mu(node) + primal.s.node(node)[0];
        feasibility = feasibility.max(opn - dn);
        monotonicity = monotonicity.max(-dc);
        complementarity += tree.prob(node) * (dn - opn) * dc;
    }
    // p_i = U'_T(c_T) + Σ_{j≥i} U'(c_j) μ_j with U' = −(−U)' at the state
    // density (ż = c for this instance class)
    let mut p_repr = 0.0f64;
    for j in 0..tree.n_leaves() {
        let path = tree.path_nodes(j);
        let leaf = *path.last().unwrap();
        let c_t = primal.zdot.node(leaf)[0];
        let uprime_t = -prob.e[j].coord(0).subdifferential(c_t).min_norm();
        let mut tail = uprime_t;
        for i in (0..path.len()).rev() {
            let node = path[i];
            let cn = primal.zdot.node(node)[0];
            let uprime = -prob.g[node].coord(0).subdifferential(cn).min_norm();
            tail += uprime * tree.mu(node);
            p_repr = p_repr.max((dual.p.at(j, i)[0] - tail).abs());
        }
    }
    Ok(BkConditions {
        feasibility: feasibility.max(0.0),
        monotonicity: monotonicity.max(0.0),
        complementarity: complementarity.abs(),
        p_representation: p_repr,
    })
}

// ----- problem file serialization -----

impl ControlProblem {
    /// Line-oriented problem file: `dim`, `matrix A|B` blocks, the tree
    /// block, the disturbance block, and per-node/per-coordinate `plq`
    /// blocks for `g`, `e` (leaf-indexed) and `h`.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = format!("dim {d}\n");
        for (name, m) in [("A", &self.a_mat), ("B", &self.b_mat)] {
            out.push_str(&format!("matrix {name}\n"));
            for row in m.rows() {
                out.push_str("row");
                for x in row {
                    out.push(' ');
                    out.push_str(&fmt_f(x));
                }
                out.push('\n');
            }
            out.push_str("end\n");
        }
        out.push_str(&self.tree.to_text());
        out.push_str(&self.w.to_text("W"));
        for (role, per) in [("g", &self.g), ("h", &self.h)] {
            for (n, f) in per.iter().enumerate() {
                for k in 0..d {
                    out.push_str(&format!("plqblock {role} node {n} coord {k}\n"));
                    out.push_str(&f.coord(k).to_text());
                    out.push_str("end\n");
                }
            }
        }
        for (j, f) in self.e.iter().enumerate() {
            for k in 0..d {
                out.push_str(&format!("plqblock e leaf {j} coord {k}\n"));
                out.push_str(&f.coord(k).to_text());
                out.push_str("end\n");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ControlProblem> {
        let mut scanner = LineScanner::new(text);
        // dim
        let (line, l) = scanner.next_line().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty problem file".into(),
        })?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "dim" {
            return Err(Error::Parse { line, msg: "expected `dim <d>`".into() });
        }
        let d = parse_usize(toks[1], line)?;
        if d == 0 {
            return Err(Error::Parse { line, msg: "dimension must be positive".into() });
        }
        let mut a_mat = None;
        let mut b_mat = None;
        let mut tree = None;
        let mut w = None;
        // scoped integrand assignments, applied after the tree is known
        let mut defaults: [Vec<Option<PlqFunction>>; 3] =
            [vec![None; d], vec![None; d], vec![None; d]];
        let mut overrides: Vec<(usize, usize, usize, PlqFunction)> = Vec::new();
        while let Some((line, l)) = scanner.peek() {
            let toks: Vec<&str> = l.split_whitespace().collect();
            match toks[0] {
                "matrix" => {
                    scanner.next_line();
                    if toks.len() != 2 {
                        return Err(Error::Parse { line, msg: "expected `matrix A|B`".into() });
                    }
                    let mut rows = Vec::new();
                    loop {
                        let (n, rl) = scanner.next_line().ok_or_else(|| Error::Parse {
                            line: scanner.eof_line(),
                            msg: "matrix block not terminated by `end`".into(),
                        })?;
                        if rl == "end" {
                            break;
                        }
                        let rt: Vec<&str> = rl.split_whitespace().collect();
                        if rt[0] != "row" || rt.len() != d + 1 {
                            return Err(Error::Parse {
                                line: n,
                                msg: format!("expected `row` with {d} entries"),
                            });
                        }
                        rows.push(rt[1..].iter().map(|t| parse_f(t, n)).collect::<Result<Vec<f64>>>()?);
                    }
                    if rows.len() != d {
                        return Err(Error::Parse { line, msg: format!("matrix needs {d} rows") });
                    }
                    let m = SquareMatrix::from_rows(rows)
                        .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
                    match toks[1] {
                        "A" => a_mat = Some(m),
                        "B" => b_mat = Some(m),
                        other => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("unknown matrix {other:?}"),
                            })
                        }
                    }
                }
                "tree" => {
                    tree = Some(ScenarioTree::parse_block(&mut scanner)?);
                }
                "process" => {
                    let t = tree.as_ref().ok_or_else(|| Error::Parse {
                        line,
                        msg: "the tree block must precede process blocks".into(),
                    })?;
                    let (name, proc) = AdaptedProcess::parse_block(&mut scanner, t)?;
                    if name != "W" {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unexpected process {name:?}, expected W"),
                        });
                    }
                    w = Some(proc);
                }
                "plqblock" => {
                    scanner.next_line();
                    // plqblock <role> default|node <id>|leaf <j> coord <k>
                    let (role, scope, coord) = parse_plq_header(&toks, line)?;
                    let f = PlqFunction::parse_block(&mut scanner)?;
                    scanner.expect("end")?;
                    if coord >= d {
                        return Err(Error::Parse { line, msg: "coordinate out of range".into() });
                    }
                    let role_ix = match role {
                        "g" => 0,
                        "e" => 1,
                        "h" => 2,
                        other => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("unknown integrand role {other:?}"),
                            })
                        }
                    };
                    match scope {
                        Scope::Default => defaults[role_ix][coord] = Some(f),
                        Scope::Indexed(i) => overrides.push((role_ix, i, coord, f)),
                    }
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unexpected section {other:?}"),
                    })
                }
            }
        }
        let tree = tree.ok_or_else(|| Error::Parse { line: 1, msg: "missing tree block".into() })?;
        let a_mat = a_mat.unwrap_or_else(|| SquareMatrix::zeros(d));
        let b_mat = b_mat.unwrap_or_else(|| SquareMatrix::identity(d));
        let w = match w {
            Some(w) => w,
            None => AdaptedProcess::zeros(&tree, d),
        };
        let build = |role_ix: usize, count: usize| -> Result<Vec<SeparableIntegrand>> {
            let mut per: Vec<Vec<Option<PlqFunction>>> = vec![defaults[role_ix].clone(); count];
            for (r, i, k, f) in overrides.iter().filter(|(r, _, _, _)| *r == role_ix) {
                let _ = r;
                if *i >= count {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("integrand index {i} out of range"),
                    });
                }
                per[*i][*k] = Some(f.clone());
            }
            per.into_iter()
                .enumerate()
                .map(|(i, coords)| {
                    let coords: Vec<PlqFunction> = coords
                        .into_iter()
                        .enumerate()
                        .map(|(k, f)| {
                            f.ok_or_else(|| Error::Parse {
                                line: 1,
                                msg: format!("no integrand for index {i} coordinate {k}"),
                            })
                        })
                        .collect::<Result<_>>()?;
                    Ok(SeparableIntegrand::new(coords))
                })
                .collect()
        };
        let g = build(0, tree.n_nodes())?;
        let e = build(1, tree.n_leaves())?;
        let h = build(2, tree.n_nodes())?;
        ControlProblem::new(tree, a_mat, b_mat, w, g, e, h)
    }
}

enum Scope {
    Default,
    Indexed(usize),
}

fn parse_plq_header<'a>(toks: &[&'a str], line: usize) -> Result<(&'a str, Scope, usize)> {
    // forms: plqblock g default coord k | plqblock g node i coord k | plqblock e leaf j coord k
    let bad = || Error::Parse {
        line,
        msg: "expected `plqblock <g|e|h> <default|node <i>|leaf <j>> coord <k>`".into(),
    };
    if toks.len() < 5 {
        return Err(bad());
    }
    let role = toks[1];
    match toks[2] {
        "default" => {
            if toks[3] != "coord" || toks.len() != 5 {
                return Err(bad());
            }
            Ok((role, Scope::Default, parse_usize(toks[4], line)?))
        }
        "node" | "leaf" => {
            if toks.len() != 6 || toks[4] != "coord" {
                return Err(bad());
            }
            let idx = parse_usize(toks[3], line)?;
            Ok((role, Scope::Indexed(idx), parse_usize(toks[5], line)?))
        }
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TimeGrid;

    fn path_tree(mus: &[f64]) -> ScenarioTree {
        let times: Vec<f64> = (0..mus.len()).map(|i| i as f64).collect();
        let grid = TimeGrid::new(times, mus.to_vec()).unwrap();
        ScenarioTree::single_path(&grid)
    }

    fn binary_tree(periods: usize) -> ScenarioTree {
        ScenarioTree::uniform(&TimeGrid::uniform(periods, 1.0), 2)
    }

    fn rng_values(n: usize, seed: u64) -> Vec<f64> {
        // deterministic low-discrepancy-ish values in [-1, 1]
        (0..n)
            .map(|i| {
                let x = ((i as u64 + 1).wrapping_mul(6364136223846793005).wrapping_add(seed))
                    >> 33;
                (x % 20001) as f64 / 10000.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn forward_dynamics_examples() {
        // u = s = 0, W = 0 → z ≡ 0
        let tree = binary_tree(2);
        let prob = build_ls_instance(1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        let z = forward_dynamics(&prob, &AdaptedProcess::zeros(&tree, 1), &AdaptedProcess::zeros(&tree, 1))
            .unwrap();
        assert!(z.z.values.iter().all(|v| v[0] == 0.0));
        assert!(z.zdot.values.iter().all(|v| v[0] == 0.0));

        // d = 1, A = 0, B = 1, single step μ_0 = 1, u_0 = 2 → c_0 = 2, z_1 = 2
        let tree = path_tree(&[1.0, 1.0]);
        let prob = build_ls_instance(1.0, 8.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        let mut u = AdaptedProcess::zeros(&tree, 1);
        u.values[0][0] = 2.0;
        let traj = forward_dynamics(&prob, &u, &AdaptedProcess::zeros(&tree, 1)).unwrap();
        assert_eq!(traj.c[0][0], 2.0);
        assert_eq!(traj.z.values[1][0], 2.0);
    }

    #[test]
    fn forward_matches_hand_recursion() {
        // three-period path with varying μ, nonzero W, against a hand recursion
        let tree = path_tree(&[0.5, 0.25, 0.25, 0.5]);
        let w = AdaptedProcess::scalar(vec![1.0, -0.5, 0.25, 0.0]);
        let prob = build_ls_instance(1.0, 2.0, &tree, None, w).unwrap();
        let u = AdaptedProcess::scalar(vec![0.4, -0.2, 0.1, 0.0]);
        let s = AdaptedProcess::scalar(vec![0.0, 0.3, 0.0, -0.1]);
        let traj = forward_dynamics(&prob, &u, &s).unwrap();
        let mus = [0.5, 0.25, 0.25, 0.5];
        let wv = [1.0, -0.5, 0.25, 0.0];
        let uv = [0.4, -0.2, 0.1, 0.0];
        let sv = [0.0, 0.3, 0.0, -0.1];
        let mut c = 0.0;
        let mut z = 0.0;
        for i in 0..4 {
            c += uv[i] * mus[i] + sv[i];
            let zdot = c + wv[i];
            assert!((traj.c[i][0] - c).abs() < 1e-15);
            assert!((traj.z.values[i][0] - z).abs() < 1e-15);
            assert!((traj.zdot.values[i][0] - zdot).abs() < 1e-15);
            z += zdot * mus[i];
        }
    }

    #[test]
    fn zero_control_examples() {
        let tree = binary_tree(2);
        // W = 0 → a ≡ 0
        let prob = build_ls_instance(1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        let (a, adot) = zero_control_trajectory(&prob);
        assert!(a.values.iter().all(|v| v[0] == 0.0));
        assert!(adot.values.iter().all(|v| v[0] == 0.0));

        // A = 0 → ȧ = W
        let w = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 3));
        let prob = build_ls_instance(1.0, 2.0, &tree, None, w.clone()).unwrap();
        let (_, adot) = zero_control_trajectory(&prob);
        for n in 0..tree.n_nodes() {
            assert_eq!(adot.node(n)[0], w.node(n)[0]);
        }
    }

    #[test]
    fn superposition_of_forward_map() {
        // forward(u, s) = a + linear(u, s), and the linear part is additive
        let tree = binary_tree(2);
        let w = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 7));
        let a_mat = SquareMatrix::from_rows(vec![vec![0.3]]).unwrap();
        let prob = build_ls_instance(1.0, 2.0, &tree, Some(a_mat), w).unwrap();
        let u1 = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 11));
        let s1 = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 13));
        let (a, adot) = zero_control_trajectory(&prob);
        let full = forward_dynamics(&prob, &u1, &s1).unwrap();
        let delta: Vec<Vec<f64>> = (0..tree.n_nodes())
            .map(|n| vec![u1.node(n)[0] * tree.mu(n) + s1.node(n)[0]])
            .collect();
        let lin = forward_total(&prob, &delta, false);
        for n in 0..tree.n_nodes() {
            assert!((full.z.values[n][0] - a.values[n][0] - lin.z.values[n][0]).abs() < 1e-12);
            assert!(
                (full.zdot.values[n][0] - adot.values[n][0] - lin.zdot.values[n][0]).abs() < 1e-12
            );
        }
    }

    #[test]
    fn adjoint_zero_and_single_period() {
        let tree = path_tree(&[0.5, 0.25]);
        let prob = build_ls_instance(1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        // w* = 0, η* = 0 → p ≡ 0
        let (p, op) =
            adjoint_dynamics(&prob, &AdaptedProcess::zeros(&tree, 1), &[vec![0.0]]).unwrap();
        assert!(p.values[0].iter().all(|v| v[0] == 0.0));
        assert!(op.values.iter().all(|v| v[0] == 0.0));

        // A = 0, one period: hand transposition
        let w_star = AdaptedProcess::scalar(vec![2.0, -1.0]);
        let eta = vec![vec![0.5]];
        let (p, op) = adjoint_dynamics(&prob, &w_star, &eta).unwrap();
        // p_1 = −(η* + μ_1 w*_1) = −(0.5 + 0.25·(−1)) = −0.25
        assert!((p.values[0][1][0] + 0.25).abs() < 1e-15);
        // p_0 = p_1 − μ_0 w*_0 = −0.25 − 0.5·2 = −1.25
        assert!((p.values[0][0][0] + 1.25).abs() < 1e-15);
        assert_eq!(op.values[1][0], p.values[0][1][0]);
        assert_eq!(op.values[0][0], p.values[0][0][0]);
    }

    #[test]
    fn projection_of_adjoint_matches_tree_recursion() {
        let tree = binary_tree(3);
        let a_mat = SquareMatrix::from_rows(vec![vec![-0.4]]).unwrap();
        let prob =
            build_ls_instance(1.0, 2.0, &tree, Some(a_mat), AdaptedProcess::zeros(&tree, 1)).unwrap();
        let w_star = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 17));
        let eta: Vec<Vec<f64>> =
            rng_values(tree.n_leaves(), 19).into_iter().map(|x| vec![x]).collect();
        let (p, op) = adjoint_dynamics(&prob, &w_star, &eta).unwrap();
        let projected = tree.optional_projection(&p);
        for n in 0..tree.n_nodes() {
            assert!((projected.node(n)[0] - op.node(n)[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn pairing_identity_holds() {
        // all-zero inputs
        let tree = binary_tree(2);
        let prob = build_ls_instance(1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        let z = AdaptedProcess::zeros(&tree, 1);
        let r = pairing_identity_check(&prob, &z, &z, &z, &vec![vec![0.0]; tree.n_leaves()]).unwrap();
        assert_eq!(r, 0.0);

        // atom-only control against density-only dual on a 2-node path
        let tree = path_tree(&[0.5, 0.5]);
        let prob = build_ls_instance(1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        let s = AdaptedProcess::scalar(vec![1.0, 0.0]);
        let u = AdaptedProcess::zeros(&tree, 1);
        let w_star = AdaptedProcess::scalar(vec![0.7, -0.3]);
        let r = pairing_identity_check(&prob, &u, &s, &w_star, &[vec![0.0]]).unwrap();
        assert!(r <= 1e-15);

        // random instances with a full matrix
        let tree = binary_tree(3);
        let a_mat = SquareMatrix::from_rows(vec![vec![0.35]]).unwrap();
        let prob =
            build_ls_instance(1.0, 2.0, &tree, Some(a_mat), AdaptedProcess::zeros(&tree, 1)).unwrap();
        for seed in 0..20 {
            let u = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 100 + seed));
            let s = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 200 + seed));
            let w_star = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 300 + seed));
            let eta: Vec<Vec<f64>> = rng_values(tree.n_leaves(), 400 + seed)
                .into_iter()
                .map(|x| vec![x])
                .collect();
            let r = pairing_identity_check(&prob, &u, &s, &w_star, &eta).unwrap();
            assert!(r <= 1e-10, "seed {seed}: residual {r}");
        }
    }

    #[test]
    fn hamiltonian_argmin_examples() {
        let tree = path_tree(&[1.0, 1.0]);
        let prob = build_ls_instance(1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        // q at the box edge: minimizer is the junction point c* = 1
        let eval = hamiltonian_argmin(&prob, 0, &[2.0]);
        assert!(eval.feasible);
        assert!((eval.argmin_density[0] - 1.0).abs() < 1e-12);
        // the recession direction +1 attains zero cost (atoms admissible)
        assert_eq!(eval.recession_argmin[0], (0.0, 0.0));

        // symmetric h*, q = 0 → c* = 0
        let eval = hamiltonian_argmin(&prob, 0, &[0.0]);
        assert_eq!(eval.argmin_density[0], 0.0);

        // q beyond the slope cap: infeasible, objective unbounded below
        let eval = hamiltonian_argmin(&prob, 0, &[3.0]);
        assert!(!eval.feasible);
        assert_eq!(eval.value, f64::NEG_INFINITY);
        // direction +1 now has strictly negative recession cost
        assert!(eval.recession_argmin[0].1 < 0.0);

        // value agrees with -h(q) inside the box
        let eval = hamiltonian_argmin(&prob, 0, &[1.2]);
        assert!((eval.value + prob.h[0].evaluate(&[1.2])).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_value_formula() {
        let tree = path_tree(&[1.0, 1.0]);
        let w = AdaptedProcess::scalar(vec![0.5, -0.5]);
        let prob = build_ls_instance(2.0, 2.0, &tree, None, w).unwrap();
        let v = hamiltonian(&prob, 0, &[1.0], &[0.5], &[2.0]);
        // g(1) = 1, h*(0.5) = 0.25, drift = 2·(0 + 0.5 + 0.5) = 2
        assert!((v - (1.0 + 0.25 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn ls_builder_examples() {
        let tree = path_tree(&[1.0, 1.0]);
        let prob = build_ls_instance(1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        // dom h = [−2, 2]
        assert_eq!(prob.d_box[0][0], (-2.0, 2.0));
        // h(y) = y²/4 inside
        assert!((prob.h[0].evaluate(&[1.0]) - 0.25).abs() < 1e-12);

        // k = 0 degenerates to h = δ_{0}
        let prob = build_ls_instance(1.0, 0.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        assert_eq!(prob.d_box[0][0], (0.0, 0.0));

        // r = 0 → g ≡ 0
        let prob = build_ls_instance(0.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).unwrap();
        assert_eq!(prob.g[0].evaluate(&[5.0]), 0.0);

        assert!(build_ls_instance(-1.0, 2.0, &tree, None, AdaptedProcess::zeros(&tree, 1)).is_err());
    }

    #[test]
    fn bk_builder_shapes() {
        let tree = binary_tree(2);
        let neg_u: Vec<PlqFunction> =
            (0..tree.n_nodes()).map(|_| PlqFunction::quadratic(0.5, -1.0, 0.0)).collect();
        let neg_ut: Vec<PlqFunction> =
            (0..tree.n_leaves()).map(|_| PlqFunction::quadratic(0.5, -1.0, 0.0)).collect();
        let d_proc = AdaptedProcess::scalar(vec![0.8; tree.n_nodes()]);
        let prob = build_bk_instance(neg_u.clone(), neg_ut.clone(), &d_proc, &tree).unwrap();
        // h*(c) = Dc + δ_{c ≥ 0}
        assert!((prob.h_star[0].evaluate(&[2.0]) - 1.6).abs() < 1e-12);
        assert_eq!(prob.h_star[0].evaluate(&[-0.1]), f64::INFINITY);

        // negative D rejected
        let bad = AdaptedProcess::scalar(vec![-0.1; tree.n_nodes()]);
        assert!(build_bk_instance(neg_u, neg_ut, &bad, &tree).is_err());
    }

    #[test]
    fn problem_text_roundtrip() {
        let tree = binary_tree(2);
        let w = AdaptedProcess::scalar(rng_values(tree.n_nodes(), 23));
        let prob = build_ls_instance(1.0, 2.0, &tree, None, w).unwrap();
        let text = prob.to_text();
        let parsed = ControlProblem::from_text(&text).unwrap();
        assert_eq!(parsed.dim(), 1);
        assert_eq!(parsed.tree.n_nodes(), tree.n_nodes());
        for n in 0..tree.n_nodes() {
            assert_eq!(parsed.w.node(n), prob.w.node(n));
            assert!(crate::plq::approx_eq(parsed.h[n].coord(0), prob.h[n].coord(0), 1e-12));
            assert!(crate::plq::approx_eq(parsed.g[n].coord(0), prob.g[n].coord(0), 1e-12));
        }
    }
}
