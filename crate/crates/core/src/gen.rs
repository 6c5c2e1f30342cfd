//! Seeded random generators for the verification suites, plus the two named
//! demo instances.
//!
//! Everything here is deterministic in the seed (ChaCha8), so suite reports
//! are byte-identical across runs and platforms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{build_bk_instance, build_ls_instance, ControlProblem, SquareMatrix};
use crate::error::Result;
use crate::measure::RandomMeasure;
use crate::plq::{Piece, PlqFunction};
use crate::separable::SeparableIntegrand;
use crate::tree::{AdaptedProcess, ScenarioTree, TimeGrid};

pub type SuiteRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SuiteRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random valid PLQ function: convex by construction (curvatures, derivative
/// jumps and value continuity are sampled in slope space), with a mix of
/// bounded, half-bounded, unbounded and point domains.
pub fn random_plq(rng: &mut SuiteRng) -> PlqFunction {
    if rng.gen_bool(0.06) {
        return PlqFunction::point(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
    }
    if rng.gen_bool(0.12) {
        let lo = rng.gen_range(-3.0..0.5);
        return PlqFunction::indicator(lo, lo + rng.gen_range(0.2..3.0));
    }
    let n_pieces = rng.gen_range(1..=4usize);
    let mut cuts = Vec::with_capacity(n_pieces - 1);
    let mut x = rng.gen_range(-3.0..-1.0);
    for _ in 0..n_pieces - 1 {
        x += rng.gen_range(0.3..1.8);
        cuts.push(x);
    }
    let (first, last) = if cuts.is_empty() {
        (-1.0, 1.0)
    } else {
        (cuts[0], *cuts.last().unwrap())
    };
    let lo = if rng.gen_bool(0.5) { f64::NEG_INFINITY } else { first - rng.gen_range(0.3..2.0) };
    let hi = if rng.gen_bool(0.5) { f64::INFINITY } else { last + rng.gen_range(0.3..2.0) };
    let mut pieces = Vec::with_capacity(n_pieces);
    let a0 = if rng.gen_bool(0.35) { 0.0 } else { rng.gen_range(0.05..1.5) };
    pieces.push(Piece::new(a0, rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)));
    for j in 1..n_pieces {
        let cut = cuts[j - 1];
        let prev = pieces[j - 1];
        let a = if rng.gen_bool(0.35) { 0.0 } else { rng.gen_range(0.05..1.5) };
        let jump = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..1.0) };
        let b = prev.deriv(cut) + jump - 2.0 * a * cut;
        let c = prev.eval(cut) - (a * cut + b) * cut;
        pieces.push(Piece::new(a, b, c));
    }
    PlqFunction::new(lo, hi, cuts, pieces).expect("construction preserves the invariants")
}

/// Random PLQ that is bounded below (resamples until coercive).
pub fn random_plq_bounded_below(rng: &mut SuiteRng) -> PlqFunction {
    loop {
        let f = random_plq(rng);
        if f.minimize().is_ok() {
            return f;
        }
    }
}

/// Random tree with the given period cap, keeping the leaf count within
/// `max_leaves`.
pub fn random_tree(rng: &mut SuiteRng, max_periods: usize, max_leaves: usize) -> ScenarioTree {
    let periods = rng.gen_range(1..=max_periods);
    let horizon = rng.gen_range(0.5..2.0);
    let mut times = vec![0.0];
    for i in 1..=periods {
        times.push(horizon * i as f64 / periods as f64);
    }
    let mut parents: Vec<Option<usize>> = vec![None];
    let mut probs = vec![1.0];
    let mut tidx = vec![0usize];
    let mut mu = vec![rng.gen_range(0.2..1.0)];
    let mut frontier = vec![0usize];
    for t in 1..=periods {
        let mut next = Vec::new();
        let remaining = periods - t;
        let width = frontier.len();
        for &p in &frontier {
            // leaf count stays below the cap even if all later nodes branch
            let slack = max_leaves >> remaining;
            let max_branch = (slack / width).clamp(1, 3);
            let branching = rng.gen_range(1..=max_branch);
            let mut raw: Vec<f64> = (0..branching).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            for w in raw.iter_mut() {
                *w /= total;
            }
            let correction: f64 = 1.0 - raw.iter().sum::<f64>();
            raw[0] += correction;
            for w in raw {
                let id = parents.len();
                parents.push(Some(p));
                probs.push(w);
                tidx.push(t);
                mu.push(rng.gen_range(0.2..1.0));
                next.push(id);
            }
        }
        frontier = next;
    }
    ScenarioTree::from_nodes(times, parents, probs, tidx, mu)
        .expect("random construction respects the invariants")
}

pub fn random_adapted(
    rng: &mut SuiteRng,
    tree: &ScenarioTree,
    dim: usize,
    scale: f64,
) -> AdaptedProcess {
    let values = (0..tree.n_nodes())
        .map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect();
    AdaptedProcess { dim, values }
}

pub fn random_raw(
    rng: &mut SuiteRng,
    tree: &ScenarioTree,
    dim: usize,
    scale: f64,
) -> crate::tree::RawProcess {
    let mut out = crate::tree::RawProcess::zeros(tree, dim);
    for row in out.values.iter_mut() {
        for v in row.iter_mut() {
            for x in v.iter_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
    }
    out
}

pub fn random_measure(
    rng: &mut SuiteRng,
    tree: &ScenarioTree,
    dim: usize,
    scale: f64,
) -> RandomMeasure {
    let density = random_adapted(rng, tree, dim, scale);
    let mut atoms = AdaptedProcess::zeros(tree, dim);
    for row in atoms.values.iter_mut() {
        for x in row.iter_mut() {
            if rng.gen_bool(0.3) {
                *x = rng.gen_range(-scale..scale);
            }
        }
    }
    RandomMeasure { density, atoms }
}

/// Node integrand family for conjugacy experiments: strictly convex quadratic
/// cores on bounded boxes (bounded domains keep the brute-force oracle free
/// of truncation).
pub fn random_box_integrands(rng: &mut SuiteRng, tree: &ScenarioTree) -> Vec<SeparableIntegrand> {
    (0..tree.n_nodes())
        .map(|_| {
            let a = rng.gen_range(0.1..1.0);
            let b = rng.gen_range(-1.0..1.0);
            let lo = rng.gen_range(-3.0..-0.5);
            let hi = rng.gen_range(0.5..3.0);
            SeparableIntegrand::scalar(
                PlqFunction::new(lo, hi, vec![], vec![Piece::new(a, b, rng.gen_range(-0.5..0.5))])
                    .expect("single quadratic piece is valid"),
            )
        })
        .collect()
}

/// Measure whose singular part is recession-compatible with the integrand
/// family: an atom at a node points in a direction along which `h*` is
/// already affine from the density, so `EJ` matches the exact conjugate.
pub fn compatible_measure(
    rng: &mut SuiteRng,
    tree: &ScenarioTree,
    h: &[SeparableIntegrand],
) -> RandomMeasure {
    let mut theta = RandomMeasure::zero(tree, 1);
    for n in 0..tree.n_nodes() {
        let f = h[n].coord(0);
        let (lo, hi) = f.domain().expect("generator integrands are proper");
        if rng.gen_bool(0.55) {
            theta.density.values[n][0] = rng.gen_range(-3.0..3.0);
        } else {
            // saturated slope plus margin, atom with the matching sign
            let sign: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let edge = if sign > 0.0 { hi } else { lo };
            let slope = f.subdifferential(edge).min_norm();
            theta.density.values[n][0] = slope + sign * rng.gen_range(0.0..2.0);
            theta.atoms.values[n][0] = sign * rng.gen_range(0.1..1.5);
        }
    }
    theta
}

/// Zero-gap pair for the subdifferential suite: `v` in the box and a measure
/// whose density sits in `∂h(v)` with atoms only in boundary normal cones.
pub fn zero_gap_pair(
    rng: &mut SuiteRng,
    tree: &ScenarioTree,
    h: &[SeparableIntegrand],
) -> (AdaptedProcess, RandomMeasure) {
    let mut v = AdaptedProcess::zeros(tree, 1);
    let mut theta = RandomMeasure::zero(tree, 1);
    for n in 0..tree.n_nodes() {
        let f = h[n].coord(0);
        let (lo, hi) = f.domain().expect("generator integrands are proper");
        if rng.gen_bool(0.4) {
            // boundary point with a saturated density and an aligned atom
            let sign: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let edge = if sign > 0.0 { hi } else { lo };
            v.values[n][0] = edge;
            let slope = f.subdifferential(edge).min_norm();
            theta.density.values[n][0] = slope + sign * rng.gen_range(0.0..2.0);
            if rng.gen_bool(0.7) {
                theta.atoms.values[n][0] = sign * rng.gen_range(0.1..1.5);
            }
        } else {
            let x = rng.gen_range(0.9 * lo + 0.1 * hi..0.1 * lo + 0.9 * hi);
            v.values[n][0] = x;
            theta.density.values[n][0] = f.subdifferential(x).min_norm();
        }
    }
    (v, theta)
}

/// Random singular-control instance built for reliable solves: strongly
/// convex quadratic running/terminal costs, diagonal `B`, and box-domain `h`
/// with a quadratic core (so `h*` has linear tails and atoms are meaningful).
pub fn random_control_instance(rng: &mut SuiteRng, dim: usize) -> Result<ControlProblem> {
    let tree = random_tree(rng, 3, 8);
    let a_rows: Vec<Vec<f64>> =
        (0..dim).map(|_| (0..dim).map(|_| rng.gen_range(-0.4..0.4)).collect()).collect();
    let a_mat = SquareMatrix::from_rows(a_rows)?;
    let b_diag: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.6..1.4)).collect();
    let b_mat = SquareMatrix::diagonal(&b_diag);
    let w = random_adapted(rng, &tree, dim, 1.5);
    let quad = |rng: &mut SuiteRng| {
        let a = rng.gen_range(0.3..1.5);
        let x0: f64 = rng.gen_range(-1.0..1.0);
        PlqFunction::quadratic(a, -2.0 * a * x0, a * x0 * x0)
    };
    let g: Vec<SeparableIntegrand> = (0..tree.n_nodes())
        .map(|_| SeparableIntegrand::new((0..dim).map(|_| quad(rng)).collect()))
        .collect();
    let e: Vec<SeparableIntegrand> = (0..tree.n_leaves())
        .map(|_| SeparableIntegrand::new((0..dim).map(|_| quad(rng)).collect()))
        .collect();
    let h: Vec<SeparableIntegrand> = (0..tree.n_nodes())
        .map(|_| {
            SeparableIntegrand::new(
                (0..dim)
                    .map(|_| {
                        let lo = -rng.gen_range(0.5..2.5);
                        let hi = rng.gen_range(0.5..2.5);
                        let alpha = rng.gen_range(0.0..0.8);
                        let beta = rng.gen_range(-0.3..0.3);
                        PlqFunction::new(lo, hi, vec![], vec![Piece::new(alpha, beta, 0.0)])
                            .expect("single piece on a box is valid")
                    })
                    .collect(),
            )
        })
        .collect();
    ControlProblem::new(tree, a_mat, b_mat, w, g, e, h)
}

/// The default bounded-velocity tracking demo: three-period binary tree,
/// `r = 1`, `k = 2`, and a disturbance strong enough to push the control
/// into its saturation regime (so singular atoms appear at the optimum).
pub fn demo_ls_problem() -> ControlProblem {
    let grid = TimeGrid::uniform(3, 1.0);
    let tree = ScenarioTree::uniform(&grid, 2);
    let mut rng = rng_from_seed(42);
    let mut w = AdaptedProcess::zeros(&tree, 1);
    for n in 1..tree.n_nodes() {
        let parent = tree.parent(n).expect("non-root");
        let step = 2.2 / tree.time_idx(n) as f64;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        w.values[n][0] = w.values[parent][0] + sign * step * rng.gen_range(0.8..1.2);
    }
    build_ls_instance(1.0, 2.0, &tree, None, w).expect("demo parameters are valid")
}

/// The irreversible-investment demo: capped quadratic utilities
/// `U(c) = c − c²/2` for `c ≤ 1` (constant beyond), a stronger terminal
/// utility, and an adapted nonnegative price bound `D`. Returns the problem
/// together with `D` for the condition checker.
pub fn demo_bk_problem() -> (ControlProblem, AdaptedProcess) {
    let grid = TimeGrid::uniform(3, 1.0);
    let tree = ScenarioTree::uniform(&grid, 2);
    // -U(c): c²/2 − c on c ≤ 1, −½ beyond
    let neg_u = PlqFunction::new(
        f64::NEG_INFINITY,
        f64::INFINITY,
        vec![1.0],
        vec![Piece::new(0.5, -1.0, 0.0), Piece::new(0.0, 0.0, -0.5)],
    )
    .expect("capped quadratic is valid");
    let neg_ut = neg_u.scale(1.5).expect("positive scaling");
    let mut rng = rng_from_seed(7);
    let mut d_proc = AdaptedProcess::zeros(&tree, 1);
    d_proc.values[0][0] = 0.55;
    for n in 1..tree.n_nodes() {
        let parent = tree.parent(n).expect("non-root");
        let factor = if n % 2 == 0 { 0.72 } else { 0.94 };
        d_proc.values[n][0] = d_proc.values[parent][0] * factor * rng.gen_range(0.95..1.05);
    }
    let prob = build_bk_instance(
        vec![neg_u; tree.n_nodes()],
        vec![neg_ut; tree.n_leaves()],
        &d_proc,
        &tree,
    )
    .expect("demo parameters are valid");
    (prob, d_proc)
}
