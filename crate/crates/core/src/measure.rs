//! Optional random measures on a scenario tree, split into an absolutely
//! continuous part (a density against the node μ weights) and a singular part
//! (explicit atoms at nodes).
//!
//! The split is unique by construction: the density field always carries the
//! μ-part, the atom field always carries the singular mass. The `J` functional
//! charges the density through the integrand and the atoms through its
//! recession function, evaluated at the atom vector directly (positive
//! homogeneity makes the magnitude/direction factorization unnecessary).

use crate::error::{Error, Result};
use crate::separable::SeparableIntegrand;
use crate::textio::{fmt_f, parse_f, parse_usize, LineScanner};
use crate::tree::{AdaptedProcess, ScenarioTree};

/// Optional random measure `θ = θ^a + θ^s` with `dθ^a/dμ` per node plus one
/// atom vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMeasure {
    pub density: AdaptedProcess,
    pub atoms: AdaptedProcess,
}

impl RandomMeasure {
    pub fn new(density: AdaptedProcess, atoms: AdaptedProcess) -> Result<Self> {
        if density.dim != atoms.dim || density.values.len() != atoms.values.len() {
            return Err(Error::DimMismatch("measure parts must share shape".into()));
        }
        Ok(RandomMeasure { density, atoms })
    }

    pub fn zero(tree: &ScenarioTree, dim: usize) -> Self {
        RandomMeasure {
            density: AdaptedProcess::zeros(tree, dim),
            atoms: AdaptedProcess::zeros(tree, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.density.dim
    }

    /// Total mass `θ` places at a node: `density·μ + atom`, componentwise.
    pub fn node_mass(&self, tree: &ScenarioTree, node: usize) -> Vec<f64> {
        let m = tree.mu(node);
        self.density
            .node(node)
            .iter()
            .zip(self.atoms.node(node))
            .map(|(&d, &a)| d * m + a)
            .collect()
    }
}

/// Cumulative adapted path of bounded variation, kept as its absolutely
/// continuous and singular cumulative components (total path = `ac + sing`).
/// An increment at a node is included in the value at that node.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativePath {
    pub ac: AdaptedProcess,
    pub sing: AdaptedProcess,
}

impl CumulativePath {
    pub fn total(&self, node: usize) -> Vec<f64> {
        self.ac
            .node(node)
            .iter()
            .zip(self.sing.node(node))
            .map(|(&a, &s)| a + s)
            .collect()
    }
}

/// Bilinear pairing `⟨v, θ⟩ = E ∫ v dθ = Σ_n P_n v_n · (density_n μ_n + atom_n)`.
pub fn pairing(tree: &ScenarioTree, v: &AdaptedProcess, theta: &RandomMeasure) -> Result<f64> {
    if v.dim != theta.dim() || v.values.len() != tree.n_nodes() {
        return Err(Error::DimMismatch("pairing shapes do not match".into()));
    }
    let mut total = 0.0;
    for node in 0..tree.n_nodes() {
        let p = tree.prob(node);
        let m = tree.mu(node);
        let vn = v.node(node);
        let dn = theta.density.node(node);
        let an = theta.atoms.node(node);
        let mut dot = 0.0;
        for k in 0..v.dim {
            dot += vn[k] * (dn[k] * m + an[k]);
        }
        total += p * dot;
    }
    Ok(total)
}

/// Dual norm `‖θ‖ = esssup ‖θ‖_TV`: the maximum over leaf-paths of the ℓ¹
/// total variation accumulated along the path.
pub fn m_inf_norm(tree: &ScenarioTree, theta: &RandomMeasure) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..tree.n_leaves() {
        worst = worst.max(path_tv(tree, theta, j));
    }
    worst
}

/// ℓ¹ total variation of `θ` along leaf-path `j`.
pub fn path_tv(tree: &ScenarioTree, theta: &RandomMeasure, leaf_idx: usize) -> f64 {
    let mut tv = 0.0;
    for &n in &tree.path_nodes(leaf_idx) {
        let m = tree.mu(n);
        for k in 0..theta.dim() {
            tv += (theta.density.node(n)[k] * m).abs() + theta.atoms.node(n)[k].abs();
        }
    }
    tv
}

/// Witness for dual-norm attainment on a leaf-path (scalar measures): sign
/// pattern of the path's node masses scaled by `1/P(node)`, zero off the
/// path. Its Snell recursion telescopes to an `R¹` norm of exactly one, and
/// pairing it with `θ` returns the path's total variation.
pub fn attainment_witness(
    tree: &ScenarioTree,
    theta: &RandomMeasure,
    leaf_idx: usize,
) -> Result<AdaptedProcess> {
    if theta.dim() != 1 {
        return Err(Error::DimMismatch("attainment witness is defined for scalar measures".into()));
    }
    let mut v = AdaptedProcess::zeros(tree, 1);
    for &n in &tree.path_nodes(leaf_idx) {
        let mass = theta.node_mass(tree, n)[0];
        let sign = if mass < 0.0 { -1.0 } else { 1.0 };
        v.values[n][0] = sign / tree.prob(n);
    }
    Ok(v)
}

/// `J` functional: `E[Σ h*(density)·μ + Σ (h*)^∞(atom)]` with `+∞`-dominant
/// accounting. `h_star` is indexed by node; atoms are charged through the
/// recession function evaluated directly at the atom vector.
pub fn j_functional(
    tree: &ScenarioTree,
    h_star: &[SeparableIntegrand],
    theta: &RandomMeasure,
) -> Result<f64> {
    if h_star.len() != tree.n_nodes() {
        return Err(Error::DimMismatch("need one integrand per node".into()));
    }
    for (n, h) in h_star.iter().enumerate() {
        if !h.is_proper() {
            return Err(Error::Improper(format!("integrand at node {n} is improper")));
        }
        if h.dim() != theta.dim() {
            return Err(Error::DimMismatch("integrand and measure dimensions differ".into()));
        }
    }
    let mut total = 0.0;
    for node in 0..tree.n_nodes() {
        let p = tree.prob(node);
        let m = tree.mu(node);
        let hv = h_star[node].evaluate(theta.density.node(node));
        let rv = h_star[node].recession()?.evaluate(theta.atoms.node(node));
        if !hv.is_finite() || !rv.is_finite() {
            return Ok(f64::INFINITY);
        }
        total += p * (hv * m + rv);
    }
    Ok(total)
}

/// Differentiates a cumulative BV path into a random measure:
/// `density_n = Δac_n / μ_n`, `atom_n = Δsing_n`.
pub fn bv_to_measure(tree: &ScenarioTree, path: &CumulativePath) -> Result<RandomMeasure> {
    if path.ac.dim != path.sing.dim || path.ac.values.len() != tree.n_nodes() {
        return Err(Error::DimMismatch("path parts must share the tree's shape".into()));
    }
    let d = path.ac.dim;
    let mut density = AdaptedProcess::zeros(tree, d);
    let mut atoms = AdaptedProcess::zeros(tree, d);
    for node in 0..tree.n_nodes() {
        let m = tree.mu(node);
        for k in 0..d {
            let (prev_ac, prev_s) = match tree.parent(node) {
                Some(p) => (path.ac.node(p)[k], path.sing.node(p)[k]),
                None => (0.0, 0.0),
            };
            density.values[node][k] = (path.ac.node(node)[k] - prev_ac) / m;
            atoms.values[node][k] = path.sing.node(node)[k] - prev_s;
        }
    }
    RandomMeasure::new(density, atoms)
}

/// Accumulates a random measure into its cumulative BV path; the exact
/// inverse of [`bv_to_measure`].
pub fn measure_to_path(tree: &ScenarioTree, theta: &RandomMeasure) -> Result<CumulativePath> {
    if theta.density.values.len() != tree.n_nodes() {
        return Err(Error::DimMismatch("measure does not match the tree".into()));
    }
    let d = theta.dim();
    let mut ac = AdaptedProcess::zeros(tree, d);
    let mut sing = AdaptedProcess::zeros(tree, d);
    for node in 0..tree.n_nodes() {
        let m = tree.mu(node);
        for k in 0..d {
            let (prev_ac, prev_s) = match tree.parent(node) {
                Some(p) => (ac.node(p)[k], sing.node(p)[k]),
                None => (0.0, 0.0),
            };
            ac.values[node][k] = prev_ac + theta.density.node(node)[k] * m;
            sing.values[node][k] = prev_s + theta.atoms.node(node)[k];
        }
    }
    Ok(CumulativePath { ac, sing })
}

// ----- serialization -----

impl RandomMeasure {
    /// `den <node> <v...>` and `atom <node> <v...>` record lines wrapped in
    /// `measure <name>` / `end`. Zero records may be omitted on input.
    pub fn to_text(&self, name: &str) -> String {
        let mut out = format!("measure {name}\n");
        for (i, v) in self.density.values.iter().enumerate() {
            out.push_str(&format!("den {i}"));
            for x in v {
                out.push(' ');
                out.push_str(&fmt_f(*x));
            }
            out.push('\n');
        }
        for (i, v) in self.atoms.values.iter().enumerate() {
            out.push_str(&format!("atom {i}"));
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
    ) -> Result<(String, RandomMeasure)> {
        let (line, header) = scanner.next_line().ok_or_else(|| Error::Parse {
            line: scanner.eof_line(),
            msg: "expected a measure block".into(),
        })?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "measure" {
            return Err(Error::Parse { line, msg: "expected `measure <name>`".into() });
        }
        let name = toks[1].to_string();
        let mut dim = 1usize;
        let mut den: Vec<Option<Vec<f64>>> = vec![None; tree.n_nodes()];
        let mut atom: Vec<Option<Vec<f64>>> = vec![None; tree.n_nodes()];
        loop {
            let (n, l) = scanner.next_line().ok_or_else(|| Error::Parse {
                line: scanner.eof_line(),
                msg: "measure block not terminated by `end`".into(),
            })?;
            if l == "end" {
                break;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() < 3 || (toks[0] != "den" && toks[0] != "atom") {
                return Err(Error::Parse { line: n, msg: "expected `den|atom <node> <v...>`".into() });
            }
            let id = parse_usize(toks[1], n)?;
            if id >= tree.n_nodes() {
                return Err(Error::Parse { line: n, msg: format!("node {id} out of range") });
            }
            let v: Vec<f64> = toks[2..].iter().map(|t| parse_f(t, n)).collect::<Result<_>>()?;
            dim = v.len();
            if toks[0] == "den" {
                den[id] = Some(v);
            } else {
                atom[id] = Some(v);
            }
        }
        let fill = |slots: Vec<Option<Vec<f64>>>| -> Vec<Vec<f64>> {
            slots.into_iter().map(|v| v.unwrap_or_else(|| vec![0.0; dim])).collect()
        };
        let density = AdaptedProcess::from_values(fill(den))?;
        let atoms = AdaptedProcess::from_values(fill(atom))?;
        Ok((name, RandomMeasure::new(density, atoms)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plq::{Piece, PlqFunction};
    use crate::tree::TimeGrid;

    fn two_leaf_tree() -> ScenarioTree {
        ScenarioTree::from_nodes(
            vec![0.0, 1.0],
            vec![None, Some(0), Some(0)],
            vec![1.0, 0.5, 0.5],
            vec![0, 1, 1],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap()
    }

    fn ls_hstar(k: f64) -> SeparableIntegrand {
        SeparableIntegrand::scalar(
            PlqFunction::new(
                f64::NEG_INFINITY,
                f64::INFINITY,
                vec![-k / 2.0, k / 2.0],
                vec![
                    Piece::new(0.0, -k, -k * k / 4.0),
                    Piece::new(1.0, 0.0, 0.0),
                    Piece::new(0.0, k, -k * k / 4.0),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn unit_pairing() {
        // v ≡ 1, density ≡ 1, atoms 0, Σ μ = 1 on every path → 1
        let tree = two_leaf_tree();
        let v = AdaptedProcess::scalar(vec![1.0; 3]);
        let mut theta = RandomMeasure::zero(&tree, 1);
        for row in theta.density.values.iter_mut() {
            row[0] = 1.0;
        }
        assert!((pairing(&tree, &v, &theta).unwrap() - 1.0).abs() < 1e-15);
        assert!((m_inf_norm(&tree, &theta) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn atom_pairing() {
        // atom of mass 2 where v = 3 with node probability ½ → 3
        let tree = two_leaf_tree();
        let mut v = AdaptedProcess::zeros(&tree, 1);
        v.values[1][0] = 3.0;
        let mut theta = RandomMeasure::zero(&tree, 1);
        theta.atoms.values[1][0] = 2.0;
        assert!((pairing(&tree, &v, &theta).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_measure_norm() {
        let tree = two_leaf_tree();
        assert_eq!(m_inf_norm(&tree, &RandomMeasure::zero(&tree, 1)), 0.0);
    }

    #[test]
    fn mixed_norm_matches_path_sums() {
        let tree = two_leaf_tree();
        let mut theta = RandomMeasure::zero(&tree, 1);
        theta.density.values[0][0] = 2.0; // root: |2·0.5| = 1 on both paths
        theta.atoms.values[1][0] = -1.5; // path 0 extra 1.5
        theta.density.values[2][0] = 1.0; // path 1 extra 0.5
        let tv0 = 1.0 + 1.5;
        let tv1 = 1.0 + 0.5;
        assert!((path_tv(&tree, &theta, 0) - tv0).abs() < 1e-15);
        assert!((path_tv(&tree, &theta, 1) - tv1).abs() < 1e-15);
        assert!((m_inf_norm(&tree, &theta) - tv0).abs() < 1e-15);
    }

    #[test]
    fn attainment_witness_is_tight() {
        let tree = two_leaf_tree();
        let mut theta = RandomMeasure::zero(&tree, 1);
        theta.density.values[0][0] = 2.0;
        theta.atoms.values[1][0] = -1.5;
        theta.density.values[2][0] = 1.0;
        let norm = m_inf_norm(&tree, &theta);
        let mut best = f64::NEG_INFINITY;
        for j in 0..tree.n_leaves() {
            let w = attainment_witness(&tree, &theta, j).unwrap();
            assert!((tree.r1_norm(&w) - 1.0).abs() <= 1e-12);
            best = best.max(pairing(&tree, &w, &theta).unwrap());
        }
        assert!((best - norm).abs() <= 1e-12);
    }

    #[test]
    fn j_functional_examples() {
        let tree = two_leaf_tree();
        let hs: Vec<SeparableIntegrand> = (0..3).map(|_| ls_hstar(2.0)).collect();

        // atoms ≡ 0 collapses to E Σ h*(density) μ
        let mut theta = RandomMeasure::zero(&tree, 1);
        theta.density.values[0][0] = 0.5;
        let j = j_functional(&tree, &hs, &theta).unwrap();
        assert!((j - 0.25 * 0.5).abs() < 1e-15); // h*(0.5) = 0.25, μ = 0.5, P = 1

        // a pure atom at a ½-probability node is charged through the
        // recession: (h*)^∞(3) = 2·3 = 6, so the contribution is 3
        let mut theta = RandomMeasure::zero(&tree, 1);
        theta.atoms.values[1][0] = 3.0;
        let j = j_functional(&tree, &hs, &theta).unwrap();
        assert!((j - 0.5 * 6.0).abs() < 1e-15);

        // recession +∞ directions produce +∞
        let bounded = SeparableIntegrand::scalar(PlqFunction::half_square());
        let hs2 = vec![bounded.clone(), bounded.clone(), bounded];
        let j = j_functional(&tree, &hs2, &theta).unwrap();
        assert_eq!(j, f64::INFINITY);
    }

    #[test]
    fn bv_roundtrip() {
        let grid = TimeGrid::uniform(2, 1.0);
        let tree = ScenarioTree::uniform(&grid, 2);
        // c ≡ 0 maps to the zero measure
        let zero = CumulativePath {
            ac: AdaptedProcess::zeros(&tree, 1),
            sing: AdaptedProcess::zeros(&tree, 1),
        };
        let theta = bv_to_measure(&tree, &zero).unwrap();
        assert_eq!(theta, RandomMeasure::zero(&tree, 1));

        // single unit jump at a node: one atom of mass 1 there
        let n = tree.children(0)[1];
        let mut sing = AdaptedProcess::zeros(&tree, 1);
        let mut stack = vec![n];
        while let Some(m) = stack.pop() {
            sing.values[m][0] = 1.0;
            stack.extend_from_slice(tree.children(m));
        }
        let path = CumulativePath { ac: AdaptedProcess::zeros(&tree, 1), sing };
        let theta = bv_to_measure(&tree, &path).unwrap();
        assert_eq!(theta.atoms.values[n][0], 1.0);
        let total: f64 = theta.atoms.values.iter().map(|v| v[0].abs()).sum::<f64>();
        assert_eq!(total, 1.0);

        // round-trip is exact
        let back = measure_to_path(&tree, &theta).unwrap();
        assert_eq!(back, path);
    }

    #[test]
    fn measure_text_roundtrip() {
        let tree = two_leaf_tree();
        let mut theta = RandomMeasure::zero(&tree, 1);
        theta.density.values[0][0] = 1.25;
        theta.atoms.values[2][0] = -0.75;
        let text = theta.to_text("theta");
        let mut scanner = LineScanner::new(&text);
        let (name, parsed) = RandomMeasure::parse_block(&mut scanner, &tree).unwrap();
        assert_eq!(name, "theta");
        assert_eq!(parsed, theta);
    }
}
