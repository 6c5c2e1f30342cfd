//! Batch verification suites.
//!
//! Each suite runs one family of randomized checks at a pinned tolerance and
//! reports the worst observed residual. The acceptance test target and the
//! CLI `verify`/`demo` commands both drive these functions, so the pass/fail
//! logic lives in exactly one place.

use std::time::Instant;

use rand::Rng;

use crate::control::solver::{solve_dual_warm, solve_primal, SolveOptions};
use crate::control::{
    bk_conditions_check, kkt_check, pairing_identity_check, ControlProblem,
};
use crate::error::Result;
use crate::exec::{batch_map, ExecMode};
use crate::functional::{interchange_check, FunctionalInstance};
use crate::gen;
use crate::measure::{attainment_witness, m_inf_norm, pairing};
use crate::plq::{self, support_function};
use crate::tree::AdaptedProcess;

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub pass: bool,
    /// Worst residual observed (semantics per suite).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
    pub wall: std::time::Duration,
}

impl SuiteOutcome {
    pub fn line(&self) -> String {
        format!(
            "{}: {} (worst {:.3e}, tol {:.1e}; {})",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

fn finish(
    name: &'static str,
    start: Instant,
    worst: f64,
    tolerance: f64,
    extra_pass: bool,
    detail: String,
) -> SuiteOutcome {
    SuiteOutcome {
        name,
        pass: worst <= tolerance && extra_pass,
        worst,
        tolerance,
        detail,
        wall: start.elapsed(),
    }
}

/// Biconjugacy `f** = f` on probe grids over randomized PLQ functions.
pub fn biconjugacy(seed: u64, count: usize, tol: f64, mode: ExecMode) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let fns: Vec<_> = (0..count).map(|_| gen::random_plq(&mut rng)).collect();
    let gaps = batch_map(count, mode, |i| {
        let f = &fns[i];
        let ff = f.conjugate().and_then(|c| c.conjugate()).expect("valid plq conjugates");
        plq::max_probe_gap(f, &ff)
    });
    let mut worst = 0.0f64;
    let mut structural_ok = true;
    for g in gaps {
        match g {
            Some(g) => worst = worst.max(g),
            None => structural_ok = false,
        }
    }
    finish(
        "biconjugacy",
        start,
        worst,
        tol,
        structural_ok,
        format!("{count} random functions"),
    )
}

/// Recession identity `f^∞ = σ_{dom f*}` on probe grids.
pub fn recession_identity(seed: u64, count: usize, tol: f64, mode: ExecMode) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let fns: Vec<_> = (0..count).map(|_| gen::random_plq(&mut rng)).collect();
    let gaps = batch_map(count, mode, |i| {
        let f = &fns[i];
        let rec = f.recession().expect("proper input");
        let (lo, hi) = f.conjugate().expect("proper input").domain().expect("conjugate is proper");
        plq::max_probe_gap(&rec, &support_function(lo, hi))
    });
    let mut worst = 0.0f64;
    let mut structural_ok = true;
    for g in gaps {
        match g {
            Some(g) => worst = worst.max(g),
            None => structural_ok = false,
        }
    }
    finish(
        "recession-identity",
        start,
        worst,
        tol,
        structural_ok,
        format!("{count} random functions"),
    )
}

/// Finite interchange rule: enumeration vs pointwise minimization.
pub fn interchange(seed: u64, count: usize, tol: f64, mode: ExecMode) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let instances: Vec<(Vec<plq::PlqFunction>, Vec<f64>)> = (0..count)
        .map(|_| {
            let k = rng.gen_range(1..=5usize);
            let fs: Vec<_> = (0..k).map(|_| gen::random_plq_bounded_below(&mut rng)).collect();
            let ws: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..2.0)).collect();
            (fs, ws)
        })
        .collect();
    let residuals = batch_map(count, mode, |i| {
        let (fs, ws) = &instances[i];
        interchange_check(fs, ws).expect("bounded-below instances").residual
    });
    let worst = residuals.into_iter().fold(0.0f64, f64::max);
    finish("interchange", start, worst, tol, true, format!("{count} random instances"))
}

/// Conjugate duality of `EI`/`EJ`: the brute-force conjugate stays below the
/// `J` functional, matches it within the rigorous grid bound, and the bound
/// contracts at least fourfold under a fourfold grid refinement.
pub fn ei_ej_conjugacy(seed: u64, count: usize, mode: ExecMode) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let mut worst_rel = 0.0f64;
    let mut shrink_ok = true;
    let mut weak_ok = true;
    for _ in 0..count {
        let tree = gen::random_tree(&mut rng, 3, 8);
        let h = gen::random_box_integrands(&mut rng, &tree);
        let theta = gen::compatible_measure(&mut rng, &tree, &h);
        let inst = FunctionalInstance::new(tree, h).expect("generator instances are valid");
        let j = inst.ej(&theta).expect("finite by construction");
        let coarse = inst.conjugate_bruteforce(&theta, 101, mode).expect("within cap");
        let fine = inst.conjugate_bruteforce(&theta, 401, mode).expect("within cap");
        weak_ok &= coarse.value <= j + 1e-9 && fine.value <= j + 1e-9;
        // |bruteforce − J| within the reported resolution bound
        let gap_c = (j - coarse.value) / (1.0 + coarse.bound);
        let gap_f = (j - fine.value) / (1.0 + fine.bound);
        worst_rel = worst_rel.max((j - coarse.value) - coarse.bound);
        worst_rel = worst_rel.max((j - fine.value) - fine.bound);
        let _ = (gap_c, gap_f);
        shrink_ok &= fine.bound <= coarse.bound / 4.0 + 1e-12;
    }
    finish(
        "ei-ej-conjugacy",
        start,
        worst_rel.max(0.0),
        1e-9,
        shrink_ok && weak_ok,
        format!("{count} instances; bound contracts 4x: {shrink_ok}; weak duality: {weak_ok}"),
    )
}

/// Subdifferential characterization: zero-gap pairs satisfy both nodewise
/// inclusions within `tol`, and random perturbations produce a strictly
/// positive gap.
pub fn subdifferential_characterization(seed: u64, count: usize, tol: f64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let mut worst = 0.0f64;
    let mut perturb_ok = true;
    for _ in 0..count {
        let tree = gen::random_tree(&mut rng, 3, 8);
        let h = gen::random_box_integrands(&mut rng, &tree);
        let (v, theta) = gen::zero_gap_pair(&mut rng, &tree, &h);
        let inst = FunctionalInstance::new(tree, h).expect("generator instances are valid");
        let gap = inst.fenchel_gap(&v, &theta).expect("finite by construction");
        worst = worst.max(gap.gap.abs());
        worst = worst.max(gap.max_density_residual);
        worst = worst.max(gap.max_atom_residual);
        // perturbations of v toward the strict interior break optimality
        for _ in 0..20 {
            let mut vp = v.clone();
            let n = rng.gen_range(0..inst.tree.n_nodes());
            let (lo, hi) = inst.boxes[n][0];
            let delta = rng.gen_range(0.05..0.2);
            let x = vp.values[n][0];
            vp.values[n][0] = if hi - x > x - lo { x + delta } else { x - delta };
            let pg = inst.fenchel_gap(&vp, &theta).expect("still finite");
            perturb_ok &= pg.gap > 1e-8;
        }
    }
    finish(
        "subdifferential-characterization",
        start,
        worst,
        tol,
        perturb_ok,
        format!("{count} zero-gap pairs, 20 perturbations each break optimality: {perturb_ok}"),
    )
}

/// Snell-envelope `R¹` norm against exhaustive stopping-time enumeration.
pub fn r1_snell_vs_enumeration(seed: u64, count: usize, tol: f64, mode: ExecMode) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let cases: Vec<_> = (0..count)
        .map(|_| {
            let tree = gen::random_tree(&mut rng, 4, 16);
            let dim = if rng.gen_bool(0.3) { 2 } else { 1 };
            let v = gen::random_adapted(&mut rng, &tree, dim, 2.0);
            (tree, v)
        })
        .collect();
    let residuals = batch_map(count, mode, |i| {
        let (tree, v) = &cases[i];
        let snell = tree.r1_norm(v);
        let best = tree
            .enumerate_stopping_times()
            .expect("trees generated within the cap")
            .iter()
            .map(|tau| tree.expected_abs_at_stopping(v, tau))
            .fold(f64::NEG_INFINITY, f64::max);
        (snell - best).abs()
    });
    let worst = residuals.into_iter().fold(0.0f64, f64::max);
    finish("r1-snell-vs-enumeration", start, worst, tol, true, format!("{count} random trees"))
}

/// Dual-norm attainment: the per-path sign witnesses have unit `R¹` norm and
/// their best pairing attains `‖θ‖_{M^∞}`; random unit-ball elements never
/// exceed it.
pub fn dual_norm_attainment(seed: u64, count: usize, tol: f64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let tree = gen::random_tree(&mut rng, 3, 8);
        let theta = gen::random_measure(&mut rng, &tree, 1, 2.0);
        let norm = m_inf_norm(&tree, &theta);
        let mut attained = f64::NEG_INFINITY;
        for j in 0..tree.n_leaves() {
            let w = attainment_witness(&tree, &theta, j).expect("scalar measure");
            worst = worst.max((tree.r1_norm(&w) - 1.0).abs());
            attained = attained.max(pairing(&tree, &w, &theta).expect("shapes match"));
        }
        worst = worst.max((attained - norm).abs());
        // feasible points stay below the norm
        for _ in 0..10 {
            let v = gen::random_adapted(&mut rng, &tree, 1, 2.0);
            let r1 = tree.r1_norm(&v);
            if r1 > 0.0 {
                let p = pairing(&tree, &v, &theta).expect("shapes match") / r1;
                worst = worst.max((p - norm).max(0.0));
            }
        }
    }
    finish("dual-norm-attainment", start, worst, tol, true, format!("{count} small trees"))
}

/// Adjoint pairing identity over random (control, dual) pairs with dense
/// system matrices.
pub fn adjoint_pairing(seed: u64, count: usize, tol: f64, mode: ExecMode) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let mut cases = Vec::with_capacity(count);
    for _ in 0..count {
        let dim = if rng.gen_bool(0.4) { 2 } else { 1 };
        let prob = gen::random_control_instance(&mut rng, dim).expect("generator instances");
        let u = gen::random_adapted(&mut rng, &prob.tree, dim, 2.0);
        let s = gen::random_adapted(&mut rng, &prob.tree, dim, 2.0);
        let w_star = gen::random_adapted(&mut rng, &prob.tree, dim, 2.0);
        let eta: Vec<Vec<f64>> = (0..prob.tree.n_leaves())
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        cases.push((prob, u, s, w_star, eta));
    }
    let residuals = batch_map(count, mode, |i| {
        let (prob, u, s, w_star, eta) = &cases[i];
        pairing_identity_check(prob, u, s, w_star, eta).expect("shapes match")
    });
    let worst = residuals.into_iter().fold(0.0f64, f64::max);
    finish("adjoint-pairing", start, worst, tol, true, format!("{count} random pairs"))
}

/// One solved instance with its reports.
pub struct SolvedInstance {
    pub label: String,
    pub problem: ControlProblem,
    pub primal: crate::control::PrimalSolution,
    pub dual: crate::control::DualSolution,
    pub gap: f64,
    pub kkt: crate::control::KktReport,
    pub wall: std::time::Duration,
}

pub fn solve_and_check(label: &str, prob: ControlProblem, opts: &SolveOptions) -> Result<SolvedInstance> {
    let start = Instant::now();
    let primal = solve_primal(&prob, opts)?;
    let dual = solve_dual_warm(&prob, &primal, opts)?;
    let gap = primal.value + dual.value;
    let kkt = kkt_check(&prob, &primal, &dual)?;
    Ok(SolvedInstance {
        label: label.to_string(),
        problem: prob,
        primal,
        dual,
        gap,
        kkt,
        wall: start.elapsed(),
    })
}

/// Solves the two demo instances plus `count` random instances; used by the
/// duality-gap and maximum-principle suites.
pub fn solve_suite_instances(seed: u64, count: usize, opts: &SolveOptions) -> Result<Vec<SolvedInstance>> {
    let mut out = Vec::with_capacity(count + 2);
    out.push(solve_and_check("demo-ls", gen::demo_ls_problem(), opts)?);
    let (bk, _) = gen::demo_bk_problem();
    out.push(solve_and_check("demo-bk", bk, opts)?);
    let mut rng = gen::rng_from_seed(seed);
    for i in 0..count {
        let dim = if rng.gen_bool(0.3) { 2 } else { 1 };
        let prob = gen::random_control_instance(&mut rng, dim)?;
        out.push(solve_and_check(&format!("random-{i}"), prob, opts)?);
    }
    Ok(out)
}

/// Zero duality gap `|primal + dual| ≤ tol·(1 + |primal|)` across the solved
/// instances, with a per-solve wall-clock cap.
pub fn duality_gap(instances: &[SolvedInstance], tol: f64, max_solve: std::time::Duration) -> SuiteOutcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut timing_ok = true;
    for inst in instances {
        worst = worst.max(inst.gap.abs() / (1.0 + inst.primal.value.abs()));
        timing_ok &= inst.wall <= max_solve;
    }
    finish(
        "zero-duality-gap",
        start,
        worst,
        tol,
        timing_ok,
        format!("{} instances; all solves within {:?}: {timing_ok}", instances.len(), max_solve),
    )
}

/// Maximum principle: the four optimality residuals stay within `tol` on
/// every solved instance, and on the tracking demo the dual variable honours
/// the box `|Bᵀᵒp| ≤ k` with singular atoms appearing only at saturated
/// nodes.
pub fn maximum_principle(instances: &[SolvedInstance], tol: f64) -> SuiteOutcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut slack_ok = true;
    let mut detail = String::new();
    for inst in instances {
        worst = worst.max(inst.kkt.max_residual());
        if inst.label == "demo-ls" {
            let k = 2.0;
            let prob = &inst.problem;
            let mut n_atoms = 0usize;
            for n in 0..prob.tree.n_nodes() {
                let btp = prob.b_mat.tmatvec(inst.dual.op.node(n))[0];
                slack_ok &= btp.abs() <= k + 1e-8;
                if inst.primal.s.node(n)[0] != 0.0 {
                    n_atoms += 1;
                    slack_ok &= btp.abs() >= k - 1e-5;
                }
            }
            detail = format!("tracking demo has {n_atoms} singular atoms, box and slackness hold: {slack_ok}");
        }
    }
    finish("maximum-principle", start, worst, tol, slack_ok, detail)
}

/// Irreversible-investment optimality conditions at the solved optimum.
pub fn bk_conditions(opts: &SolveOptions) -> Result<SuiteOutcome> {
    let start = Instant::now();
    let (prob, d_proc) = gen::demo_bk_problem();
    let primal = solve_primal(&prob, opts)?;
    let dual = solve_dual_warm(&prob, &primal, opts)?;
    let c = bk_conditions_check(&prob, &primal, &dual, &d_proc)?;
    let monotone_ok = c.monotonicity <= 1e-12;
    let worst = c.feasibility.max(c.complementarity).max(c.p_representation);
    Ok(finish(
        "bk-conditions",
        start,
        worst,
        1e-6,
        monotone_ok,
        format!(
            "feas {:.2e}, dc>=0 viol {:.2e}, compl {:.2e}, p-repr {:.2e}",
            c.feasibility, c.monotonicity, c.complementarity, c.p_representation
        ),
    ))
}

/// Projection identity fuzz: `E[v_τ] = E[(ᵒv)_τ]` over random raw processes
/// and every stopping time of small random trees.
pub fn projection_identity(seed: u64, count: usize, tol: f64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let tree = gen::random_tree(&mut rng, 3, 8);
        let v = gen::random_raw(&mut rng, &tree, 1, 2.0);
        for tau in tree.enumerate_stopping_times().expect("within cap") {
            worst = worst.max(tree.verify_projection_identity(&v, &tau));
        }
    }
    finish("projection-identity", start, worst, tol, true, format!("{count} random trees"))
}

/// Hölder bound fuzz: `|⟨v, θ⟩| ≤ ‖v‖_{R¹} ‖θ‖_{M^∞}`.
pub fn pairing_bound(seed: u64, count: usize, tol: f64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = gen::rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let tree = gen::random_tree(&mut rng, 4, 16);
        let dim = if rng.gen_bool(0.3) { 2 } else { 1 };
        let v = gen::random_adapted(&mut rng, &tree, dim, 2.0);
        let theta = gen::random_measure(&mut rng, &tree, dim, 2.0);
        let p = pairing(&tree, &v, &theta).expect("shapes match").abs();
        let bound = tree.r1_norm(&v) * m_inf_norm(&tree, &theta);
        worst = worst.max(p - bound);
    }
    finish("pairing-bound", start, worst.max(0.0), tol, true, format!("{count} random pairs"))
}

/// Default solve options used by the acceptance suite and the CLI.
pub fn default_solve_options() -> SolveOptions {
    SolveOptions::default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass_quickly() {
        assert!(biconjugacy(1, 50, 1e-9, ExecMode::Sequential).pass);
        assert!(recession_identity(2, 50, 1e-9, ExecMode::Sequential).pass);
        assert!(interchange(3, 20, 1e-12, ExecMode::Sequential).pass);
        assert!(r1_snell_vs_enumeration(4, 10, 1e-12, ExecMode::Sequential).pass);
        assert!(dual_norm_attainment(5, 5, 1e-9).pass);
        assert!(projection_identity(6, 5, 1e-12).pass);
        assert!(pairing_bound(7, 20, 1e-9).pass);
    }

    #[test]
    fn conjugacy_suites_pass_on_small_batches() {
        let o = ei_ej_conjugacy(8, 5, ExecMode::Sequential);
        assert!(o.pass, "{}", o.line());
        let o = subdifferential_characterization(9, 5, 1e-6);
        assert!(o.pass, "{}", o.line());
    }

    #[test]
    fn adjoint_suite_passes_on_small_batch() {
        let o = adjoint_pairing(10, 25, 1e-10, ExecMode::Sequential);
        assert!(o.pass, "{}", o.line());
    }
}
