//! Expected integral functionals over scenario trees.
//!
//! `EI(v) = E Σ h(v)·μ` (with the domain box acting as an implicit indicator,
//! since a PLQ integrand is `+∞` off its closed domain) is paired against the
//! `J` functional of the conjugate integrands. The central identity is the
//! nodewise decomposition of the Fenchel gap
//!
//! ```text
//! EI(v) + J(θ) − ⟨v, θ⟩
//!   = Σ_n P_n [ μ_n·(h(v) + h*(ρ) − v·ρ) + ((h*)^∞(α) − v·α) ]
//! ```
//!
//! with `ρ` the density and `α` the atom at node `n`: both bracketed terms
//! are nonnegative Fenchel residuals, so the gap vanishes exactly when the
//! density lies in `∂h(v)` and the atom in the normal cone of the domain box
//! at `v`, node by node.

use crate::error::{Error, Result};
use crate::exec::{batch_map, ExecMode};
use crate::measure::{j_functional, pairing, RandomMeasure};
use crate::plq::PlqFunction;
use crate::separable::SeparableIntegrand;
use crate::tree::{AdaptedProcess, ScenarioTree, ENUM_MAX_LEAVES, ENUM_MAX_PERIODS};

/// A node-indexed integrand family together with its conjugates and domain
/// boxes, ready for `EI`/`EJ` evaluations.
#[derive(Debug, Clone)]
pub struct FunctionalInstance {
    pub tree: ScenarioTree,
    pub h: Vec<SeparableIntegrand>,
    pub h_star: Vec<SeparableIntegrand>,
    /// Closed domain box of `h` per node, per coordinate.
    pub boxes: Vec<Vec<(f64, f64)>>,
}

impl FunctionalInstance {
    pub fn new(tree: ScenarioTree, h: Vec<SeparableIntegrand>) -> Result<Self> {
        if h.len() != tree.n_nodes() {
            return Err(Error::DimMismatch("need one integrand per node".into()));
        }
        let dim = h[0].dim();
        for (n, hn) in h.iter().enumerate() {
            if hn.dim() != dim {
                return Err(Error::DimMismatch("integrand dimensions differ across nodes".into()));
            }
            if !hn.is_proper() {
                return Err(Error::Improper(format!("integrand at node {n} is improper")));
            }
        }
        let h_star: Vec<SeparableIntegrand> =
            h.iter().map(|hn| hn.conjugate()).collect::<Result<_>>()?;
        let boxes: Vec<Vec<(f64, f64)>> = h.iter().map(|hn| hn.domain_box()).collect::<Result<_>>()?;
        Ok(FunctionalInstance { tree, h, h_star, boxes })
    }

    pub fn dim(&self) -> usize {
        self.h[0].dim()
    }

    /// `EI(v) = E Σ h(v)·μ`, `+∞` as soon as `v` leaves a node's box.
    pub fn ei(&self, v: &AdaptedProcess) -> f64 {
        let mut total = 0.0;
        for node in 0..self.tree.n_nodes() {
            let hv = self.h[node].evaluate(v.node(node));
            if !hv.is_finite() {
                return f64::INFINITY;
            }
            total += self.tree.prob(node) * self.tree.mu(node) * hv;
        }
        total
    }

    /// `EJ(θ)` for this instance's conjugate integrands.
    pub fn ej(&self, theta: &RandomMeasure) -> Result<f64> {
        j_functional(&self.tree, &self.h_star, theta)
    }

    /// Adapted process of nodewise minimum-norm minimizers of `h`; a finite
    /// witness for the properness of `EI`.
    pub fn proper_witness(&self) -> Result<AdaptedProcess> {
        let values: Vec<Vec<f64>> =
            self.h.iter().map(|hn| hn.minimize().map(|(x, _)| x)).collect::<Result<_>>()?;
        AdaptedProcess::from_values(values)
    }

    /// Fenchel gap `EI(v) + EJ(θ) − ⟨v, θ⟩` with its exact nodewise
    /// decomposition into density and singular inclusion residuals.
    pub fn fenchel_gap(&self, v: &AdaptedProcess, theta: &RandomMeasure) -> Result<FenchelGap> {
        let ei = self.ei(v);
        let ej = self.ej(theta)?;
        if !ei.is_finite() || !ej.is_finite() {
            return Err(Error::InvalidParam(
                "fenchel_gap requires finite EI(v) and EJ(θ)".into(),
            ));
        }
        let pair = pairing(&self.tree, v, theta)?;
        let mut per_node = Vec::with_capacity(self.tree.n_nodes());
        let (mut worst_density, mut worst_atom) = (0.0f64, 0.0f64);
        for node in 0..self.tree.n_nodes() {
            let vn = v.node(node);
            let rho = theta.density.node(node);
            let alpha = theta.atoms.node(node);
            let mut dot_rho = 0.0;
            let mut dot_alpha = 0.0;
            for k in 0..self.dim() {
                dot_rho += vn[k] * rho[k];
                dot_alpha += vn[k] * alpha[k];
            }
            let density_res = self.h[node].evaluate(vn) + self.h_star[node].evaluate(rho) - dot_rho;
            let atom_res = self.h_star[node].recession()?.evaluate(alpha) - dot_alpha;
            worst_density = worst_density.max(density_res);
            worst_atom = worst_atom.max(atom_res);
            per_node.push((density_res, atom_res));
        }
        Ok(FenchelGap {
            gap: ei + ej - pair,
            max_density_residual: worst_density,
            max_atom_residual: worst_atom,
            per_node,
        })
    }

    /// Brute-force conjugate `sup_v { ⟨v, θ⟩ − EI(v) }` over adapted
    /// processes sampled on per-node grids. Adaptedness makes the sup
    /// separable across nodes and coordinates, so the grid maximization runs
    /// nodewise. Returns a rigorous resolution bound on the gap to the true
    /// supremum (valid whenever no truncation was necessary).
    pub fn conjugate_bruteforce(
        &self,
        theta: &RandomMeasure,
        points_per_axis: usize,
        mode: ExecMode,
    ) -> Result<BruteForce> {
        if self.tree.periods() > ENUM_MAX_PERIODS || self.tree.n_leaves() > ENUM_MAX_LEAVES {
            return Err(Error::CapExceeded("brute-force oracle restricted to small trees".into()));
        }
        if points_per_axis < 2 {
            return Err(Error::InvalidParam("need at least two grid points per axis".into()));
        }
        let n_nodes = self.tree.n_nodes();
        let dim = self.dim();
        let per_node: Vec<(f64, f64, bool)> = batch_map(n_nodes, mode, |node| {
            let p = self.tree.prob(node);
            let m = self.tree.mu(node);
            let mut value = 0.0;
            let mut bound = 0.0;
            let mut truncated = false;
            for k in 0..dim {
                let f = self.h[node].coord(k);
                let xi = theta.density.node(node)[k] * m + theta.atoms.node(node)[k];
                let (lo, hi) = f.domain().expect("instance integrands are proper");
                let radius = truncation_radius(f);
                let l = lo.max(-radius);
                let r = hi.min(radius);
                truncated |= l > lo || r < hi;
                if l == r {
                    value += p * (xi * l - m * f.evaluate(l));
                    continue;
                }
                let mut best = f64::NEG_INFINITY;
                for i in 0..points_per_axis {
                    let x = l + (r - l) * i as f64 / (points_per_axis - 1) as f64;
                    best = best.max(xi * x - m * f.evaluate(x));
                }
                value += p * best;
                // slope bound for φ(x) = ξx − m·h(x) on [l, r]: the derivative
                // of h is monotone, so its extremes sit at the interval ends
                let dl = f.subdifferential(l).hi;
                let dr = f.subdifferential(r).lo;
                let slope = (xi - m * dl).abs().max((xi - m * dr).abs());
                let delta = (r - l) / (points_per_axis - 1) as f64;
                bound += p * slope * delta / 2.0;
            }
            (value, bound, truncated)
        });
        let mut out = BruteForce { value: 0.0, bound: 0.0, truncated: false };
        for (v, b, t) in per_node {
            out.value += v;
            out.bound += b;
            out.truncated |= t;
        }
        Ok(out)
    }
}

/// Result of [`FunctionalInstance::fenchel_gap`].
#[derive(Debug, Clone)]
pub struct FenchelGap {
    pub gap: f64,
    pub max_density_residual: f64,
    pub max_atom_residual: f64,
    /// `(density residual, atom residual)` per node.
    pub per_node: Vec<(f64, f64)>,
}

/// Result of the brute-force conjugate oracle.
#[derive(Debug, Clone, Copy)]
pub struct BruteForce {
    pub value: f64,
    /// Rigorous bound on `sup − value` from the grid resolution.
    pub bound: f64,
    /// Whether an unbounded domain was truncated (the bound then only covers
    /// the truncated region).
    pub truncated: bool,
}

/// Unbounded brute-force domains are cut at this radius; analytic paths never
/// truncate.
pub fn truncation_radius(f: &PlqFunction) -> f64 {
    let mut m = 0.0f64;
    for &c in f.cuts() {
        m = m.max(c.abs());
    }
    if let Some((lo, hi)) = f.domain() {
        if lo.is_finite() {
            m = m.max(lo.abs());
        }
        if hi.is_finite() {
            m = m.max(hi.abs());
        }
    }
    10.0 * (1.0 + m)
}

/// Result of [`interchange_check`].
#[derive(Debug, Clone, Copy)]
pub struct Interchange {
    /// `min over selections of Σ wᵢ fᵢ(uᵢ)`, by explicit enumeration of the
    /// per-point exact candidate minimizers.
    pub enumerated: f64,
    /// `Σ wᵢ min_u fᵢ(u)` by exact per-point minimization.
    pub pointwise: f64,
    pub residual: f64,
}

/// Finite interchange rule: minimizing the weighted sum over all selections
/// equals the weighted sum of pointwise minima. The left side is computed by
/// enumerating candidate selections (domain endpoints, breakpoints and piece
/// vertices carry every PLQ minimum), the right side by exact minimization.
pub fn interchange_check(fs: &[PlqFunction], weights: &[f64]) -> Result<Interchange> {
    if fs.is_empty() || fs.len() != weights.len() {
        return Err(Error::DimMismatch("interchange needs matching functions and weights".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParam("interchange weights must be nonnegative".into()));
    }
    let mut candidate_sets: Vec<Vec<f64>> = Vec::with_capacity(fs.len());
    let mut product: usize = 1;
    for f in fs {
        f.minimize()?; // rejects improper and unbounded-below pieces
        let (lo, hi) = f.domain().expect("proper after minimize");
        let mut cands: Vec<f64> = Vec::new();
        if lo.is_finite() {
            cands.push(lo);
        }
        if hi.is_finite() {
            cands.push(hi);
        }
        cands.extend_from_slice(f.cuts());
        let bounds: Vec<f64> = std::iter::once(lo)
            .chain(f.cuts().iter().copied())
            .chain(std::iter::once(hi))
            .collect();
        for (j, p) in f.pieces().iter().enumerate() {
            if p.a > 0.0 {
                let v = -p.b / (2.0 * p.a);
                if v >= bounds[j] && v <= bounds[j + 1] {
                    cands.push(v);
                }
            } else if p.b == 0.0 {
                // flat piece: one interior sample carries its value
                let (l, r) = (bounds[j], bounds[j + 1]);
                cands.push(match (l.is_finite(), r.is_finite()) {
                    (true, true) => 0.5 * (l + r),
                    (true, false) => l + 1.0,
                    (false, true) => r - 1.0,
                    (false, false) => 0.0,
                });
            }
        }
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cands.dedup();
        product = product.saturating_mul(cands.len());
        candidate_sets.push(cands);
    }
    const MAX_SELECTIONS: usize = 4_000_000;
    if product > MAX_SELECTIONS {
        return Err(Error::CapExceeded(format!(
            "interchange enumeration of {product} selections exceeds the cap"
        )));
    }
    // odometer over the candidate product
    let mut idx = vec![0usize; fs.len()];
    let mut enumerated = f64::INFINITY;
    loop {
        let mut total = 0.0;
        for (i, f) in fs.iter().enumerate() {
            total += weights[i] * f.evaluate(candidate_sets[i][idx[i]]);
        }
        enumerated = enumerated.min(total);
        let mut pos = 0;
        loop {
            if pos == fs.len() {
                let pointwise = {
                    let mut t = 0.0;
                    for (i, f) in fs.iter().enumerate() {
                        t += weights[i] * f.minimize()?.1;
                    }
                    t
                };
                return Ok(Interchange {
                    enumerated,
                    pointwise,
                    residual: (enumerated - pointwise).abs(),
                });
            }
            idx[pos] += 1;
            if idx[pos] < candidate_sets[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plq::Piece;
    use crate::tree::TimeGrid;

    fn ls_h() -> PlqFunction {
        // h(y) = y²/4 on [-2, 2]
        PlqFunction::new(-2.0, 2.0, vec![], vec![Piece::new(0.25, 0.0, 0.0)]).unwrap()
    }

    fn single_node_instance(h: PlqFunction) -> FunctionalInstance {
        let grid = TimeGrid::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let tree = ScenarioTree::single_path(&grid);
        let hs = vec![SeparableIntegrand::scalar(h.clone()), SeparableIntegrand::scalar(h)];
        FunctionalInstance::new(tree, hs).unwrap()
    }

    #[test]
    fn ei_examples() {
        // LS h (k = 2), v ≡ 2, single path with Σμ = 1 → EI = 1
        let inst = single_node_instance(ls_h());
        let v = AdaptedProcess::scalar(vec![2.0, 2.0]);
        assert!((inst.ei(&v) - 1.0).abs() < 1e-15);

        // leaving the box at one node is the indicator at work
        let v = AdaptedProcess::scalar(vec![2.0, 2.5]);
        assert_eq!(inst.ei(&v), f64::INFINITY);

        // h ≡ 0 gives 0 for every v
        let inst = single_node_instance(PlqFunction::zero());
        let v = AdaptedProcess::scalar(vec![17.0, -3.0]);
        assert_eq!(inst.ei(&v), 0.0);
    }

    #[test]
    fn fenchel_gap_examples() {
        // v ≡ 0, θ = 0, h = ½x²: gap 0 with 0 ∈ ∂h(0)
        let inst = single_node_instance(PlqFunction::half_square());
        let v = AdaptedProcess::scalar(vec![0.0, 0.0]);
        let theta = RandomMeasure::zero(&inst.tree, 1);
        let gap = inst.fenchel_gap(&v, &theta).unwrap();
        assert!(gap.gap.abs() <= 1e-12);
        assert!(gap.max_density_residual <= 1e-12);
        assert!(gap.max_atom_residual <= 1e-12);

        // LS: v ≡ 2 at the right endpoint of D, atom +1 → singular inclusion
        // holds exactly ((h*)^∞(1) = 2 = v·1)
        let inst = single_node_instance(ls_h());
        let v = AdaptedProcess::scalar(vec![2.0, 2.0]);
        let mut theta = RandomMeasure::zero(&inst.tree, 1);
        theta.density.values[0][0] = 1.0; // ∂h(2) = [1, ∞)
        theta.density.values[1][0] = 1.0;
        theta.atoms.values[1][0] = 1.0;
        let gap = inst.fenchel_gap(&v, &theta).unwrap();
        assert!(gap.gap.abs() <= 1e-12, "gap {}", gap.gap);
        assert!(gap.max_atom_residual <= 1e-12);

        // perturbing the density off the subdifferential opens the gap
        theta.density.values[0][0] = 0.4;
        let gap = inst.fenchel_gap(&v, &theta).unwrap();
        assert!(gap.gap > 1e-3);
    }

    #[test]
    fn gap_decomposition_identity() {
        let grid = TimeGrid::uniform(2, 1.0);
        let tree = ScenarioTree::uniform(&grid, 2);
        let hs: Vec<SeparableIntegrand> =
            (0..tree.n_nodes()).map(|_| SeparableIntegrand::scalar(ls_h())).collect();
        let inst = FunctionalInstance::new(tree, hs).unwrap();
        let v = AdaptedProcess::scalar(
            (0..inst.tree.n_nodes()).map(|i| ((i as f64) * 0.37).sin()).collect(),
        );
        let mut theta = RandomMeasure::zero(&inst.tree, 1);
        for (i, row) in theta.density.values.iter_mut().enumerate() {
            row[0] = ((i as f64) * 0.71).cos();
        }
        for (i, row) in theta.atoms.values.iter_mut().enumerate() {
            row[0] = if i % 3 == 0 { 0.25 } else { 0.0 };
        }
        let gap = inst.fenchel_gap(&v, &theta).unwrap();
        let mut recon = 0.0;
        for node in 0..inst.tree.n_nodes() {
            let (dres, ares) = gap.per_node[node];
            recon += inst.tree.prob(node) * (inst.tree.mu(node) * dres + ares);
            assert!(dres >= -1e-12);
            assert!(ares >= -1e-12);
        }
        assert!((gap.gap - recon).abs() <= 1e-12);
    }

    #[test]
    fn bruteforce_examples() {
        // h = δ_{0} per node: the only feasible v is 0, so the sup is 0 = J
        let inst = single_node_instance(PlqFunction::point(0.0, 0.0));
        let theta = RandomMeasure::zero(&inst.tree, 1);
        let bf = inst.conjugate_bruteforce(&theta, 11, ExecMode::Sequential).unwrap();
        assert_eq!(bf.value, 0.0);
        assert_eq!(inst.ej(&theta).unwrap(), 0.0);

        // 1-node instance, h = ½x², θ density t: brute force → t²/2 = J
        let grid = TimeGrid::new(vec![0.0, 1.0], vec![1.0, 1e-9]).unwrap();
        let _ = grid; // a true single-node grid is not expressible; use two nodes
        let inst = single_node_instance(PlqFunction::half_square());
        let mut theta = RandomMeasure::zero(&inst.tree, 1);
        theta.density.values[0][0] = 0.8;
        theta.density.values[1][0] = 0.8;
        let j = inst.ej(&theta).unwrap();
        assert!((j - 0.5 * 0.8 * 0.8).abs() < 1e-15);
        let bf = inst.conjugate_bruteforce(&theta, 2001, ExecMode::Sequential).unwrap();
        assert!(bf.value <= j + 1e-12);
        assert!(j - bf.value <= bf.bound + 1e-12);
    }

    #[test]
    fn bruteforce_bound_shrinks_linearly() {
        let inst = single_node_instance(ls_h());
        let mut theta = RandomMeasure::zero(&inst.tree, 1);
        theta.density.values[0][0] = 0.7;
        theta.density.values[1][0] = -0.2;
        theta.atoms.values[1][0] = 0.3;
        let j = inst.ej(&theta).unwrap();
        let coarse = inst.conjugate_bruteforce(&theta, 41, ExecMode::Sequential).unwrap();
        let fine = inst.conjugate_bruteforce(&theta, 161, ExecMode::Sequential).unwrap();
        assert!(!coarse.truncated);
        assert!(coarse.value <= fine.value + 1e-12);
        assert!(fine.bound <= coarse.bound / 4.0 + 1e-12);
        // J is an upper bound on the sup here only when the atoms sit in
        // saturated directions; with density -0.2 and atom 0.3 they do not,
        // so only weak duality is asserted
        assert!(fine.value <= j + 1e-12);
    }

    #[test]
    fn interchange_examples() {
        // two points, minima 1 at 0 and 2 at 3, weights 1 → residual 0, value 3
        let f1 = PlqFunction::half_square().add(&PlqFunction::constant(1.0));
        let f2 = PlqFunction::half_square().shift(-3.0).unwrap().add(&PlqFunction::constant(2.0));
        let r = interchange_check(&[f1, f2], &[1.0, 1.0]).unwrap();
        assert!(r.residual <= 1e-15);
        assert!((r.pointwise - 3.0).abs() <= 1e-15);

        // single point
        let r = interchange_check(&[PlqFunction::abs()], &[2.5]).unwrap();
        assert!(r.residual == 0.0);

        // unbounded-below pieces are rejected
        assert!(matches!(
            interchange_check(&[PlqFunction::linear(1.0, 0.0)], &[1.0]),
            Err(Error::Unbounded)
        ));
    }

    #[test]
    fn real_valued_integrands_reject_atoms() {
        // h finite everywhere forces J(θ) = +∞ for any nonzero atom, so a
        // zero-gap pair can only have vanishing atoms
        let inst = single_node_instance(PlqFunction::half_square());
        let mut theta = RandomMeasure::zero(&inst.tree, 1);
        theta.atoms.values[1][0] = 1e-3;
        assert_eq!(inst.ej(&theta).unwrap(), f64::INFINITY);
    }

    #[test]
    fn properness_witness_is_finite() {
        let inst = single_node_instance(ls_h());
        let w = inst.proper_witness().unwrap();
        assert!(inst.ei(&w).is_finite());
    }
}
