//! Primal and dual solvers.
//!
//! Both problems are minimized over a flat variable vector with a composite
//! structure: a smooth coupling through the (linear) dynamics plus separable
//! PLQ terms with exact proximal maps.
//!
//! The primal is solved in the per-node *total increment* variables
//! `Δ_n = u_n μ_n + s_n`. Splitting an increment between density and atom
//! never pays: `inf { μ h*(u) + (h*)^∞(s) : uμ + s = Δ } = μ h*(Δ/μ)` because
//! a function inf-convolved with its own recession reproduces itself. The
//! solver therefore works on `μ h*(·/μ)` and the density/atom split is
//! recovered exactly afterwards (minimum-norm density, atoms take the
//! saturated excess).
//!
//! The dual is solved in the projected adjoint `q = ᵒp` directly: the map
//! `(w*, η*) ↦ ᵒp` from the transpose recursion is onto, with
//! `w*_n = [(I + μ_n Aᵀ) Σ_ch π q_ch − q_n]/μ_n` at interior nodes and the
//! leaf kernel minimized out in closed form through the inf-convolution
//! `ψ = (μ g̃ + ẽ)*`. Every `q` with finite objective is dual-feasible, so
//! box constraints are kept exactly and the reported dual value is always a
//! genuine bound.
//!
//! Each solve runs an accelerated proximal-gradient phase (step from a
//! conservative curvature bound, exact separable prox) followed by cyclic
//! exact coordinate minimization, which also polishes nonsmooth kinks. All
//! tie-breaks take the minimum-norm point, so solves are deterministic.

use crate::error::{Error, Result};
use crate::plq::PlqFunction;
use crate::tree::AdaptedProcess;

use super::{
    adjoint_dynamics, dual_objective, forward_total, primal_objective, zero_control_trajectory,
    control_path, ControlProblem, DualSolution, PrimalSolution,
};

/// Solver knobs. The budget counts elementary steps: one coordinate
/// minimization, or one variable within a proximal-gradient iteration.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub budget: usize,
    pub accel_iters: usize,
    /// Relative per-sweep objective improvement below which iteration stops.
    pub tol_objective: f64,
    /// Coordinate move size below which iteration stops.
    pub tol_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { budget: 50_000, accel_iters: 400, tol_objective: 1e-14, tol_step: 1e-11 }
    }
}

struct Vars {
    n_nodes: usize,
    dim: usize,
}

impl Vars {
    fn len(&self) -> usize {
        self.n_nodes * self.dim
    }

    fn split(&self, idx: usize) -> (usize, usize) {
        (idx / self.dim, idx % self.dim)
    }
}

fn flat_to_nodes(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(|c| c.to_vec()).collect()
}

// ----- primal -----

struct PrimalWork<'a> {
    prob: &'a ControlProblem,
    vars: Vars,
    /// Separable cost `μ_n h*_{n,k}(·/μ_n)` per variable (probability weight
    /// applied at use sites).
    phi: Vec<PlqFunction>,
    /// Sensitivities `∂ż_{j,l}/∂Δ_{n,k}`, rows indexed by variable.
    sens: Vec<Vec<f64>>,
    /// Zero-control density `ȧ`.
    adot: AdaptedProcess,
}

impl<'a> PrimalWork<'a> {
    fn new(prob: &'a ControlProblem) -> Result<Self> {
        let tree = &prob.tree;
        let dim = prob.dim();
        let vars = Vars { n_nodes: tree.n_nodes(), dim };
        let mut phi = Vec::with_capacity(vars.len());
        for n in 0..tree.n_nodes() {
            for k in 0..dim {
                phi.push(prob.h_star[n].coord(k).perspective(tree.mu(n))?);
            }
        }
        let mut sens = Vec::with_capacity(vars.len());
        for idx in 0..vars.len() {
            let (n, k) = vars.split(idx);
            let mut unit = vec![vec![0.0; dim]; tree.n_nodes()];
            unit[n][k] = 1.0;
            let lin = forward_total(prob, &unit, false);
            let mut row = vec![0.0; vars.len()];
            for j in 0..tree.n_nodes() {
                for l in 0..dim {
                    row[j * dim + l] = lin.zdot.values[j][l];
                }
            }
            sens.push(row);
        }
        let (_, adot) = zero_control_trajectory(prob);
        Ok(PrimalWork { prob, vars, phi, sens, adot })
    }

    /// Current state density from the increments (disturbance included).
    fn zdot(&self, delta: &[f64]) -> Vec<f64> {
        let dim = self.vars.dim;
        let mut zdot: Vec<f64> = self
            .adot
            .values
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        for (idx, &dv) in delta.iter().enumerate() {
            if dv != 0.0 {
                for (out, &s) in zdot.iter_mut().zip(&self.sens[idx]) {
                    *out += s * dv;
                }
            }
        }
        let _ = dim;
        zdot
    }

    fn smooth_value(&self, zdot: &[f64]) -> f64 {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let mut total = 0.0;
        for n in 0..tree.n_nodes() {
            let gv = self.prob.g[n].evaluate(&zdot[n * dim..(n + 1) * dim]);
            if !gv.is_finite() {
                return f64::INFINITY;
            }
            total += tree.prob(n) * tree.mu(n) * gv;
        }
        for (j, &leaf) in tree.leaves().iter().enumerate() {
            let ev = self.prob.e[j].evaluate(&zdot[leaf * dim..(leaf + 1) * dim]);
            if !ev.is_finite() {
                return f64::INFINITY;
            }
            total += tree.prob(leaf) * ev;
        }
        total
    }

    fn separable_value(&self, delta: &[f64]) -> f64 {
        let mut total = 0.0;
        for (idx, &dv) in delta.iter().enumerate() {
            let (n, _) = self.vars.split(idx);
            let v = self.phi[idx].evaluate(dv);
            if !v.is_finite() {
                return f64::INFINITY;
            }
            total += self.prob.tree.prob(n) * v;
        }
        total
    }

    fn objective(&self, delta: &[f64]) -> f64 {
        let zdot = self.zdot(delta);
        self.smooth_value(&zdot) + self.separable_value(delta)
    }

    /// Gradient of the smooth part via the exact transpose (minimum-norm
    /// subgradients at kinks).
    fn smooth_gradient(&self, zdot: &[f64]) -> Result<Vec<f64>> {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let mut w_like = AdaptedProcess::zeros(tree, dim);
        for n in 0..tree.n_nodes() {
            for k in 0..dim {
                w_like.values[n][k] =
                    self.prob.g[n].coord(k).subdifferential(zdot[n * dim + k]).min_norm();
            }
        }
        let mut eta_like = Vec::with_capacity(tree.n_leaves());
        for (j, &leaf) in tree.leaves().iter().enumerate() {
            let mut v = vec![0.0; dim];
            for k in 0..dim {
                v[k] = self.prob.e[j].coord(k).subdifferential(zdot[leaf * dim + k]).min_norm();
            }
            eta_like.push(v);
        }
        let (_, op) = adjoint_dynamics(self.prob, &w_like, &eta_like)?;
        let mut grad = vec![0.0; self.vars.len()];
        for idx in 0..self.vars.len() {
            let (n, k) = self.vars.split(idx);
            let btp = self.prob.b_mat.tmatvec(op.node(n));
            grad[idx] = -tree.prob(n) * btp[k];
        }
        Ok(grad)
    }

    /// Conservative Lipschitz bound for the smooth gradient: the largest
    /// integrand curvature times the squared Frobenius norm of the weighted
    /// sensitivity map.
    fn smooth_curvature_bound(&self) -> f64 {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let kappa = |f: &PlqFunction| 2.0 * f.pieces().iter().fold(0.0f64, |m, p| m.max(p.a));
        let mut total = 0.0;
        for row in &self.sens {
            for j in 0..tree.n_nodes() {
                let wj = tree.prob(j) * tree.mu(j);
                for l in 0..dim {
                    let s = row[j * dim + l];
                    if s != 0.0 {
                        total += wj * kappa(self.prob.g[j].coord(l)) * s * s;
                    }
                }
            }
            for (jj, &leaf) in tree.leaves().iter().enumerate() {
                let wj = tree.prob(leaf);
                for l in 0..dim {
                    let s = row[leaf * dim + l];
                    if s != 0.0 {
                        total += wj * kappa(self.prob.e[jj].coord(l)) * s * s;
                    }
                }
            }
        }
        total
    }

    /// Exact univariate restriction of the objective to variable `idx`.
    fn restriction(&self, delta: &[f64], zdot: &[f64], idx: usize) -> Result<PlqFunction> {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let (n, _) = self.vars.split(idx);
        let t_cur = delta[idx];
        let mut acc = self.phi[idx].scale(tree.prob(n))?;
        let row = &self.sens[idx];
        for j in 0..tree.n_nodes() {
            let wj = tree.prob(j) * tree.mu(j);
            for l in 0..dim {
                let beta = row[j * dim + l];
                if beta != 0.0 {
                    let alpha = zdot[j * dim + l] - beta * t_cur;
                    let term =
                        self.prob.g[j].coord(l).compose_affine(alpha, beta)?.scale(wj)?;
                    acc = acc.add(&term);
                }
            }
        }
        for (jj, &leaf) in tree.leaves().iter().enumerate() {
            let wj = tree.prob(leaf);
            for l in 0..dim {
                let beta = row[leaf * dim + l];
                if beta != 0.0 {
                    let alpha = zdot[leaf * dim + l] - beta * t_cur;
                    let term =
                        self.prob.e[jj].coord(l).compose_affine(alpha, beta)?.scale(wj)?;
                    acc = acc.add(&term);
                }
            }
        }
        if !acc.is_proper() {
            return Err(Error::Solver("empty coordinate restriction".into()));
        }
        Ok(acc)
    }
}

/// Canonical density/atom split of a total increment: the density takes the
/// minimum-norm minimizer of `μ h*(u) + (h*)^∞(Δ − μu)`, atoms the saturated
/// excess. Splits within round-off of a pure density are snapped to it.
fn split_increment(
    prob: &ControlProblem,
    node: usize,
    coord: usize,
    delta: f64,
) -> Result<(f64, f64)> {
    let m = prob.tree.mu(node);
    let hstar = prob.h_star[node].coord(coord);
    let rec = prob.h_star_rec[node].coord(coord);
    let objective = hstar.scale(m)?.add(&rec.compose_affine(delta, -m)?);
    let (u, _) = objective.minimize()?;
    let s = delta - u * m;
    if s.abs() <= 1e-12 * (1.0 + delta.abs()) {
        Ok((delta / m, 0.0))
    } else {
        Ok((u, s))
    }
}

/// Minimizes the transcribed primal by accelerated proximal gradient steps
/// followed by cyclic exact coordinate minimization.
pub fn solve_primal(prob: &ControlProblem, opts: &SolveOptions) -> Result<PrimalSolution> {
    let work = PrimalWork::new(prob)?;
    let nv = work.vars.len();
    let mut delta = vec![0.0; nv];
    let mut objective = work.objective(&delta);
    if !objective.is_finite() {
        return Err(Error::Solver(
            "primal objective is not finite at the zero control; no feasible start".into(),
        ));
    }
    let mut iterations = 0usize;

    // accelerated proximal-gradient phase
    let lip = work.smooth_curvature_bound();
    if lip > 0.0 {
        let tau = 1.0 / lip;
        let mut y = delta.clone();
        let mut prev = delta.clone();
        let mut theta = 1.0f64;
        for _ in 0..opts.accel_iters {
            if iterations + nv > opts.budget / 2 {
                break;
            }
            iterations += nv;
            let zdot = work.zdot(&y);
            if !work.smooth_value(&zdot).is_finite() {
                // momentum left the smooth domain; restart from the last point
                y = delta.clone();
                theta = 1.0;
                continue;
            }
            let grad = work.smooth_gradient(&zdot)?;
            let mut next = vec![0.0; nv];
            for idx in 0..nv {
                let (n, _) = work.vars.split(idx);
                let point = y[idx] - tau * grad[idx];
                next[idx] = work.phi[idx].prox(tau / prob.tree.prob(n).max(1e-300), point)?;
            }
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            for idx in 0..nv {
                y[idx] = next[idx] + beta * (next[idx] - prev[idx]);
            }
            theta = theta_next;
            prev = next.clone();
            let cand = work.objective(&next);
            if cand < objective {
                objective = cand;
                delta = next;
            }
        }
    }

    // exact coordinate-descent polish
    let mut converged = false;
    let mut zdot = work.zdot(&delta);
    while iterations < opts.budget {
        let mut max_move = 0.0f64;
        for idx in 0..nv {
            if iterations >= opts.budget {
                break;
            }
            iterations += 1;
            let restriction = work.restriction(&delta, &zdot, idx)?;
            let (t, _) = restriction.minimize()?;
            let step = t - delta[idx];
            if step != 0.0 {
                delta[idx] = t;
                for (out, &s) in zdot.iter_mut().zip(&work.sens[idx]) {
                    *out += s * step;
                }
                max_move = max_move.max(step.abs());
            }
        }
        zdot = work.zdot(&delta); // refresh against incremental drift
        let new_objective = work.smooth_value(&zdot) + work.separable_value(&delta);
        let improved = objective - new_objective;
        objective = new_objective.min(objective);
        if max_move <= opts.tol_step && improved <= opts.tol_objective * (1.0 + objective.abs()) {
            converged = true;
            break;
        }
    }

    // recover the density/atom split
    let dim = prob.dim();
    let mut u = AdaptedProcess::zeros(&prob.tree, dim);
    let mut s = AdaptedProcess::zeros(&prob.tree, dim);
    for idx in 0..nv {
        let (n, k) = work.vars.split(idx);
        let (uu, ss) = split_increment(prob, n, k, delta[idx])?;
        u.values[n][k] = uu;
        s.values[n][k] = ss;
    }
    let traj = super::forward_dynamics(prob, &u, &s)?;
    let value = primal_objective(prob, &u, &s)?;
    debug_assert!(
        (value - objective).abs() <= 1e-7 * (1.0 + objective.abs()),
        "split changed the primal value: {value} vs {objective}"
    );
    Ok(PrimalSolution {
        c: control_path(prob, &u, &s),
        z: traj.z,
        zdot: traj.zdot,
        u,
        s,
        value,
        iterations,
        converged,
    })
}

// ----- dual -----

struct DualWork<'a> {
    prob: &'a ControlProblem,
    vars: Vars,
    /// Shifted running conjugates `g̃*_{n,k} = g*_{n,k} − ȧ_{n,k}·(·)`.
    gtilde_star: Vec<Vec<PlqFunction>>,
    /// Leaf kernel reductions `ψ_{j,k} = (μ g̃ + ẽ)*` per leaf, coordinate.
    psi: Vec<Vec<PlqFunction>>,
    /// Shifted terminal conjugates `ẽ*` per leaf, coordinate (for recovery).
    etilde_star: Vec<Vec<PlqFunction>>,
}

impl<'a> DualWork<'a> {
    fn new(prob: &'a ControlProblem) -> Result<Self> {
        let tree = &prob.tree;
        let dim = prob.dim();
        let (_, adot) = zero_control_trajectory(prob);
        let mut gtilde_star = Vec::with_capacity(tree.n_nodes());
        for n in 0..tree.n_nodes() {
            let mut per = Vec::with_capacity(dim);
            for k in 0..dim {
                let shift = PlqFunction::linear(-adot.node(n)[k], 0.0);
                per.push(prob.g_star[n].coord(k).add(&shift));
            }
            gtilde_star.push(per);
        }
        let mut psi = Vec::with_capacity(tree.n_leaves());
        let mut etilde_star = Vec::with_capacity(tree.n_leaves());
        for (j, &leaf) in tree.leaves().iter().enumerate() {
            let m = tree.mu(leaf);
            let mut psi_per = Vec::with_capacity(dim);
            let mut est_per = Vec::with_capacity(dim);
            for k in 0..dim {
                let a = adot.node(leaf)[k];
                let gt = prob.g[leaf].coord(k).shift(a)?;
                let et = prob.e[j].coord(k).shift(a)?;
                let sum = gt.scale(m)?.add(&et);
                if !sum.is_proper() {
                    return Err(Error::Improper(
                        "leaf running and terminal integrands have disjoint domains".into(),
                    ));
                }
                psi_per.push(sum.conjugate()?);
                let shift = PlqFunction::linear(-a, 0.0);
                est_per.push(prob.e_star[j].coord(k).add(&shift));
            }
            psi.push(psi_per);
            etilde_star.push(est_per);
        }
        Ok(DualWork {
            prob,
            vars: Vars { n_nodes: tree.n_nodes(), dim },
            gtilde_star,
            psi,
            etilde_star,
        })
    }

    /// `w*_n(q)` at an interior node.
    fn wstar_at(&self, q: &[Vec<f64>], node: usize) -> Vec<f64> {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let m = tree.mu(node);
        let mut expect = vec![0.0; dim];
        for &ch in tree.children(node) {
            for k in 0..dim {
                expect[k] += tree.branch_prob(ch) * q[ch][k];
            }
        }
        let at_e = self.prob.a_mat.tmatvec(&expect);
        (0..dim).map(|k| (expect[k] + m * at_e[k] - q[node][k]) / m).collect()
    }

    fn objective(&self, q: &[Vec<f64>]) -> f64 {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let mut total = 0.0;
        for n in 0..tree.n_nodes() {
            let p = tree.prob(n);
            let m = tree.mu(n);
            let btq = self.prob.b_mat.tmatvec(&q[n]);
            let hv = self.prob.h[n].evaluate(&btq);
            if !hv.is_finite() {
                return f64::INFINITY;
            }
            total += p * m * hv;
            if tree.children(n).is_empty() {
                let j = self.prob.leaf_index(n).expect("leaf-time node");
                for k in 0..dim {
                    let v = self.psi[j][k].evaluate(-q[n][k]);
                    if !v.is_finite() {
                        return f64::INFINITY;
                    }
                    total += p * v;
                }
            } else {
                let w = self.wstar_at(q, n);
                for k in 0..dim {
                    let v = self.gtilde_star[n][k].evaluate(w[k]);
                    if !v.is_finite() {
                        return f64::INFINITY;
                    }
                    total += p * m * v;
                }
            }
        }
        total
    }

    /// Exact univariate restriction of the dual objective to `q[node][coord]`.
    fn restriction(&self, q: &[Vec<f64>], node: usize, coord: usize) -> Result<PlqFunction> {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let t_cur = q[node][coord];
        let mut acc = PlqFunction::zero();
        // own h-term through Bᵀ
        {
            let p = tree.prob(node);
            let m = tree.mu(node);
            let btq = self.prob.b_mat.tmatvec(&q[node]);
            for l in 0..dim {
                let beta = self.prob.b_mat.get(coord, l);
                if beta != 0.0 {
                    let alpha = btq[l] - beta * t_cur;
                    acc = acc.add(
                        &self.prob.h[node].coord(l).compose_affine(alpha, beta)?.scale(p * m)?,
                    );
                }
            }
        }
        if tree.children(node).is_empty() {
            // own leaf kernel term ψ(−q)
            let j = self.prob.leaf_index(node).expect("leaf-time node");
            let p = tree.prob(node);
            acc = acc.add(&self.psi[j][coord].compose_affine(0.0, -1.0)?.scale(p)?);
        } else {
            // own running conjugate: w*_n depends on q_n through −1/μ
            let p = tree.prob(node);
            let m = tree.mu(node);
            let w = self.wstar_at(q, node);
            let beta = -1.0 / m;
            let alpha = w[coord] - beta * t_cur;
            acc = acc.add(&self.gtilde_star[node][coord].compose_affine(alpha, beta)?.scale(p * m)?);
        }
        // parent's running conjugate: w*_par depends on q_n through
        // π_n (I + μ_par Aᵀ)[l][coord] / μ_par
        if let Some(par) = tree.parent(node) {
            let p = tree.prob(par);
            let m = tree.mu(par);
            let pi = tree.branch_prob(node);
            let w = self.wstar_at(q, par);
            for l in 0..dim {
                let mut mlk = if l == coord { 1.0 } else { 0.0 };
                mlk += m * self.prob.a_mat.get(coord, l);
                let beta = pi * mlk / m;
                if beta != 0.0 {
                    let alpha = w[l] - beta * t_cur;
                    acc = acc
                        .add(&self.gtilde_star[par][l].compose_affine(alpha, beta)?.scale(p * m)?);
                }
            }
        }
        if !acc.is_proper() {
            return Err(Error::Solver("empty dual coordinate restriction".into()));
        }
        Ok(acc)
    }

    /// Recovers `(w*, η*)` from `q`, splitting each leaf value through the
    /// inf-convolution argmin.
    fn recover(&self, q: &[Vec<f64>]) -> Result<(AdaptedProcess, Vec<Vec<f64>>)> {
        let tree = &self.prob.tree;
        let dim = self.vars.dim;
        let mut w_star = AdaptedProcess::zeros(tree, dim);
        let mut eta = vec![vec![0.0; dim]; tree.n_leaves()];
        for n in 0..tree.n_nodes() {
            if tree.children(n).is_empty() {
                let j = self.prob.leaf_index(n).expect("leaf-time node");
                let m = tree.mu(n);
                for k in 0..dim {
                    let xi = -q[n][k];
                    let objective = self.gtilde_star[n][k]
                        .scale(m)?
                        .add(&self.etilde_star[j][k].compose_affine(xi, -m)?);
                    let (w, _) = objective.minimize()?;
                    w_star.values[n][k] = w;
                    eta[j][k] = xi - m * w;
                }
            } else {
                w_star.values[n] = self.wstar_at(q, n);
            }
        }
        Ok((w_star, eta))
    }
}

/// Minimizes the dual in the projected-adjoint variables, warm-started from
/// a primal solution.
pub fn solve_dual_warm(
    prob: &ControlProblem,
    primal: &PrimalSolution,
    opts: &SolveOptions,
) -> Result<DualSolution> {
    let work = DualWork::new(prob)?;
    let tree = &prob.tree;
    let dim = prob.dim();

    // candidate from the primal optimality conditions
    let mut w_like = AdaptedProcess::zeros(tree, dim);
    for n in 0..tree.n_nodes() {
        for k in 0..dim {
            w_like.values[n][k] =
                prob.g[n].coord(k).subdifferential(primal.zdot.node(n)[k]).min_norm();
        }
    }
    let mut eta_like = vec![vec![0.0; dim]; tree.n_leaves()];
    for (j, &leaf) in tree.leaves().iter().enumerate() {
        for k in 0..dim {
            eta_like[j][k] =
                prob.e[j].coord(k).subdifferential(primal.zdot.node(leaf)[k]).min_norm();
        }
    }
    let (_, op) = adjoint_dynamics(prob, &w_like, &eta_like)?;
    let mut q: Vec<Vec<f64>> = op.values.clone();

    // repair: clip into the box when B is diagonal, then pull toward a
    // feasible anchor until the objective is finite
    if prob.b_mat.is_diagonal() {
        for n in 0..tree.n_nodes() {
            for k in 0..dim {
                let b = prob.b_mat.get(k, k);
                if b == 0.0 {
                    continue;
                }
                let (lo, hi) = prob.d_box[n][k];
                let (ql, qh) = if b > 0.0 { (lo / b, hi / b) } else { (hi / b, lo / b) };
                q[n][k] = q[n][k].clamp(ql.max(-1e300), qh.min(1e300));
            }
        }
    }
    if !work.objective(&q).is_finite() {
        let mut anchors: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut zero = vec![vec![0.0; dim]; tree.n_nodes()];
        if prob.b_mat.is_diagonal() {
            for (n, row) in zero.iter_mut().enumerate() {
                for (k, entry) in row.iter_mut().enumerate() {
                    let b = prob.b_mat.get(k, k);
                    if b == 0.0 {
                        continue;
                    }
                    let (lo, hi) = prob.d_box[n][k];
                    let (ql, qh) = if b > 0.0 { (lo / b, hi / b) } else { (hi / b, lo / b) };
                    *entry = 0f64.clamp(ql.max(-1e300), qh.min(1e300));
                }
            }
        }
        anchors.push(zero.clone());
        // strictly decreasing-in-time anchor (useful under supermartingale
        // constraints from one-sided conjugate domains)
        let mut sloped = zero;
        for (n, row) in sloped.iter_mut().enumerate() {
            for entry in row.iter_mut() {
                *entry -= 1e-3 * tree.time_idx(n) as f64;
            }
        }
        anchors.push(sloped);
        let candidate = q.clone();
        'search: for anchor in &anchors {
            for step in 1..=8 {
                let lambda = step as f64 / 8.0;
                let mut trial = candidate.clone();
                for n in 0..tree.n_nodes() {
                    for k in 0..dim {
                        trial[n][k] = (1.0 - lambda) * candidate[n][k] + lambda * anchor[n][k];
                    }
                }
                if work.objective(&trial).is_finite() {
                    q = trial;
                    break 'search;
                }
            }
        }
    }
    let mut objective = work.objective(&q);
    if !objective.is_finite() {
        // honest failure: report a non-converged, infinite dual point
        let (w_star, eta_star) = work.recover(&q)?;
        let (p, op) = adjoint_dynamics(prob, &w_star, &eta_star)?;
        return Ok(DualSolution {
            w_star,
            eta_star,
            p,
            op,
            value: f64::INFINITY,
            iterations: 0,
            converged: false,
        });
    }

    // cyclic exact coordinate descent
    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < opts.budget {
        let mut max_move = 0.0f64;
        for n in 0..tree.n_nodes() {
            for k in 0..dim {
                if iterations >= opts.budget {
                    break;
                }
                iterations += 1;
                let restriction = work.restriction(&q, n, k)?;
                let (t, _) = restriction.minimize()?;
                let step = t - q[n][k];
                if step != 0.0 {
                    q[n][k] = t;
                    max_move = max_move.max(step.abs());
                }
            }
        }
        let new_objective = work.objective(&q);
        let improved = objective - new_objective;
        objective = new_objective;
        if max_move <= opts.tol_step && improved <= opts.tol_objective * (1.0 + objective.abs()) {
            converged = true;
            break;
        }
    }

    let (w_star, eta_star) = work.recover(&q)?;
    let (p, op) = adjoint_dynamics(prob, &w_star, &eta_star)?;
    let value = dual_objective(prob, &w_star, &eta_star)?;
    debug_assert!(
        !value.is_finite() || (value - objective).abs() <= 1e-7 * (1.0 + objective.abs()),
        "dual recovery changed the value: {value} vs {objective}"
    );
    Ok(DualSolution { w_star, eta_star, p, op, value, iterations, converged })
}

/// Solves the dual; an internal primal solve provides the warm start.
pub fn solve_dual(prob: &ControlProblem, opts: &SolveOptions) -> Result<DualSolution> {
    let primal = solve_primal(prob, opts)?;
    solve_dual_warm(prob, &primal, opts)
}
