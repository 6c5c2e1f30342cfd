//! Univariate piecewise linear-quadratic (PLQ) convex functions.
//!
//! A [`PlqFunction`] is a closed proper convex extended-real function of one
//! real variable given exactly by finitely many quadratic pieces
//! `a·x² + b·x + c` (`a ≥ 0`) over a closed interval domain, or the improper
//! function that is identically `+∞`. The class is closed under conjugation,
//! recession, addition, nonnegative scaling, argument shifts and proximal
//! steps, and every one of those operations is computed here in closed form;
//! the only error is floating-point round-off.
//!
//! Representations are not canonical: redundant breakpoints are permitted and
//! two representations of the same function may differ structurally. Equality
//! is therefore always decided by evaluation on probe grids
//! (see [`probe_points`] and [`approx_eq`]), never by comparing coefficients.

use crate::error::{Error, Result};

const VALIDATE_TOL: f64 = 1e-9;

/// One quadratic piece `a·x² + b·x + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Piece {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Piece { a, b, c }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    pub fn deriv(&self, x: f64) -> f64 {
        2.0 * self.a * x + self.b
    }
}

/// A closed interval of slopes `[lo, hi]`, or the empty set.
///
/// Represents subdifferentials `∂f(x) = [f'₋(x), f'₊(x)]` and normal cones;
/// `lo = -∞` / `hi = +∞` encode half-lines and the whole line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubdiffInterval {
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
}

impl SubdiffInterval {
    pub fn empty() -> Self {
        SubdiffInterval { lo: f64::NAN, hi: f64::NAN, empty: true }
    }

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        SubdiffInterval { lo, hi, empty: false }
    }

    pub fn point(y: f64) -> Self {
        Self::new(y, y)
    }

    pub fn contains(&self, y: f64, tol: f64) -> bool {
        !self.empty && y >= self.lo - tol && y <= self.hi + tol
    }

    /// Element of the interval closest to zero; `NaN` when empty.
    pub fn min_norm(&self) -> f64 {
        if self.empty {
            f64::NAN
        } else {
            0f64.clamp(self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone)]
struct Repr {
    lo: f64,
    hi: f64,
    /// Interior breakpoints, strictly increasing, strictly inside `(lo, hi)`.
    cuts: Vec<f64>,
    /// `cuts.len() + 1` pieces; piece `j` lives on `[x_j, x_{j+1}]`.
    pieces: Vec<Piece>,
}

/// Closed proper convex piecewise linear-quadratic function, or the improper
/// function `≡ +∞` (empty domain).
#[derive(Debug, Clone)]
pub struct PlqFunction {
    repr: Option<Repr>,
}

impl PlqFunction {
    /// Builds a PLQ function from its domain, interior breakpoints and pieces,
    /// validating continuity, convexity and piece curvature signs.
    pub fn new(lo: f64, hi: f64, cuts: Vec<f64>, pieces: Vec<Piece>) -> Result<Self> {
        let f = Self::new_unchecked(lo, hi, cuts, pieces);
        f.validate()?;
        Ok(f)
    }

    fn new_unchecked(lo: f64, hi: f64, cuts: Vec<f64>, pieces: Vec<Piece>) -> Self {
        PlqFunction { repr: Some(Repr { lo, hi, cuts, pieces }) }
    }

    /// The improper function, identically `+∞`.
    pub fn improper() -> Self {
        PlqFunction { repr: None }
    }

    pub fn is_proper(&self) -> bool {
        self.repr.is_some()
    }

    /// Domain `[lo, hi]`, or `None` for the improper function.
    pub fn domain(&self) -> Option<(f64, f64)> {
        self.repr.as_ref().map(|r| (r.lo, r.hi))
    }

    pub fn cuts(&self) -> &[f64] {
        self.repr.as_ref().map_or(&[], |r| &r.cuts)
    }

    pub fn pieces(&self) -> &[Piece] {
        self.repr.as_ref().map_or(&[], |r| &r.pieces)
    }

    // ----- convenience constructors -----

    /// `a·x² + b·x + c` on all of ℝ (requires `a ≥ 0`).
    pub fn quadratic(a: f64, b: f64, c: f64) -> Self {
        assert!(a >= 0.0, "quadratic coefficient must be nonnegative");
        Self::new_unchecked(f64::NEG_INFINITY, f64::INFINITY, vec![], vec![Piece::new(a, b, c)])
    }

    pub fn linear(b: f64, c: f64) -> Self {
        Self::quadratic(0.0, b, c)
    }

    pub fn constant(c: f64) -> Self {
        Self::quadratic(0.0, 0.0, c)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `½x²` on ℝ, its own conjugate.
    pub fn half_square() -> Self {
        Self::quadratic(0.5, 0.0, 0.0)
    }

    /// `|x|` on ℝ.
    pub fn abs() -> Self {
        Self::new_unchecked(
            f64::NEG_INFINITY,
            f64::INFINITY,
            vec![0.0],
            vec![Piece::new(0.0, -1.0, 0.0), Piece::new(0.0, 1.0, 0.0)],
        )
    }

    /// Indicator `δ_{[lo, hi]}`: zero on the interval, `+∞` outside.
    pub fn indicator(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "indicator needs a nonempty interval");
        Self::new_unchecked(lo, hi, vec![], vec![Piece::new(0.0, 0.0, 0.0)])
    }

    /// The function with domain `{x}` and value `v` there.
    pub fn point(x: f64, v: f64) -> Self {
        assert!(x.is_finite());
        Self::new_unchecked(x, x, vec![], vec![Piece::new(0.0, 0.0, v)])
    }

    fn validate(&self) -> Result<()> {
        let r = match &self.repr {
            None => return Ok(()),
            Some(r) => r,
        };
        let fail = |msg: String| Err(Error::InvalidPlq(msg));
        if r.lo.is_nan() || r.hi.is_nan() || r.lo > r.hi {
            return fail(format!("bad domain [{}, {}]", r.lo, r.hi));
        }
        if !r.lo.is_finite() && r.lo > f64::NEG_INFINITY {
            return fail("domain_lo must be finite or -inf".into());
        }
        if r.pieces.len() != r.cuts.len() + 1 {
            return fail("piece count must be cut count + 1".into());
        }
        if r.lo == r.hi {
            if !r.cuts.is_empty() {
                return fail("point domain admits no interior breakpoints".into());
            }
            if !r.lo.is_finite() {
                return fail("point domain must be finite".into());
            }
            return Ok(());
        }
        let mut prev = r.lo;
        for &cut in &r.cuts {
            if !cut.is_finite() || cut <= prev || cut >= r.hi {
                return fail(format!("breakpoint {cut} out of order or outside ({}, {})", r.lo, r.hi));
            }
            prev = cut;
        }
        for p in &r.pieces {
            if !(p.a >= 0.0) || !p.a.is_finite() || !p.b.is_finite() || !p.c.is_finite() {
                return fail(format!("bad piece coefficients ({}, {}, {})", p.a, p.b, p.c));
            }
        }
        for (j, &cut) in r.cuts.iter().enumerate() {
            let vl = r.pieces[j].eval(cut);
            let vr = r.pieces[j + 1].eval(cut);
            if (vl - vr).abs() > VALIDATE_TOL * (1.0 + vl.abs().max(vr.abs())) {
                return fail(format!("discontinuity at breakpoint {cut}: {vl} vs {vr}"));
            }
            let dl = r.pieces[j].deriv(cut);
            let dr = r.pieces[j + 1].deriv(cut);
            if dl - dr > VALIDATE_TOL * (1.0 + dl.abs().max(dr.abs())) {
                return fail(format!("derivative decreases across breakpoint {cut}: {dl} > {dr}"));
            }
        }
        Ok(())
    }

    fn repr(&self) -> Result<&Repr> {
        self.repr
            .as_ref()
            .ok_or_else(|| Error::Improper("operation requires a proper function".into()))
    }

    /// Index of the piece whose interval contains `x` (right piece at a cut).
    fn locate(r: &Repr, x: f64) -> usize {
        r.cuts.partition_point(|&c| c <= x)
    }

    /// Evaluates the function; `+∞` outside the domain.
    pub fn evaluate(&self, x: f64) -> f64 {
        let r = match &self.repr {
            None => return f64::INFINITY,
            Some(r) => r,
        };
        if x < r.lo || x > r.hi || x.is_nan() {
            return f64::INFINITY;
        }
        r.pieces[Self::locate(r, x)].eval(x)
    }

    /// Limiting slope toward the right end of the domain (`+∞` if the domain
    /// is bounded above or the last piece is genuinely quadratic on an
    /// unbounded interval).
    fn slope_sup(r: &Repr) -> f64 {
        if r.hi.is_finite() {
            f64::INFINITY
        } else {
            let p = r.pieces.last().unwrap();
            if p.a > 0.0 {
                f64::INFINITY
            } else {
                p.b
            }
        }
    }

    fn slope_inf(r: &Repr) -> f64 {
        if r.lo.is_finite() {
            f64::NEG_INFINITY
        } else {
            let p = &r.pieces[0];
            if p.a > 0.0 {
                f64::NEG_INFINITY
            } else {
                p.b
            }
        }
    }

    /// Subdifferential `∂f(x) = [f'₋(x), f'₊(x)]`; empty outside the domain,
    /// with `±∞` on the unbounded side at finite domain endpoints.
    pub fn subdifferential(&self, x: f64) -> SubdiffInterval {
        let r = match &self.repr {
            None => return SubdiffInterval::empty(),
            Some(r) => r,
        };
        if x < r.lo || x > r.hi || x.is_nan() {
            return SubdiffInterval::empty();
        }
        if r.lo == r.hi {
            return SubdiffInterval::new(f64::NEG_INFINITY, f64::INFINITY);
        }
        let left = if x == r.lo {
            f64::NEG_INFINITY
        } else {
            // piece whose closed interval has x as an interior or right point
            let j = r.cuts.partition_point(|&c| c < x);
            r.pieces[j].deriv(x)
        };
        let right = if x == r.hi {
            f64::INFINITY
        } else {
            r.pieces[Self::locate(r, x)].deriv(x)
        };
        SubdiffInterval::new(left, right)
    }

    /// Exact global minimization.
    ///
    /// Returns `(argmin, value)` with the minimum-norm point of the argmin
    /// interval as the reported minimizer. Fails on improper or
    /// unbounded-below input.
    pub fn minimize(&self) -> Result<(f64, f64)> {
        let r = self.repr()?;
        if r.lo == r.hi {
            return Ok((r.lo, r.pieces[0].eval(r.lo)));
        }
        if Self::slope_sup(r) < 0.0 || Self::slope_inf(r) > 0.0 {
            return Err(Error::Unbounded);
        }
        let k = r.pieces.len();
        let ends = |j: usize| -> (f64, f64) {
            let l = if j == 0 { r.lo } else { r.cuts[j - 1] };
            let rr = if j == k - 1 { r.hi } else { r.cuts[j] };
            (l, rr)
        };
        let slope_at = |p: &Piece, x: f64, toward_pos: bool| -> f64 {
            if x.is_finite() {
                p.deriv(x)
            } else if p.a > 0.0 {
                if toward_pos {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                p.b
            }
        };
        // smallest x with right-derivative >= 0
        let mut xminus = r.hi;
        for j in 0..k {
            let (l, rr) = ends(j);
            let sl = slope_at(&r.pieces[j], l, false);
            let sr = slope_at(&r.pieces[j], rr, true);
            if sl >= 0.0 {
                xminus = l;
                break;
            }
            if sr >= 0.0 {
                xminus = -r.pieces[j].b / (2.0 * r.pieces[j].a);
                break;
            }
        }
        // largest x with left-derivative <= 0
        let mut xplus = r.lo;
        for j in (0..k).rev() {
            let (l, rr) = ends(j);
            let sl = slope_at(&r.pieces[j], l, false);
            let sr = slope_at(&r.pieces[j], rr, true);
            if sr <= 0.0 {
                xplus = rr;
                break;
            }
            if sl <= 0.0 {
                xplus = -r.pieces[j].b / (2.0 * r.pieces[j].a);
                break;
            }
        }
        let xminus = xminus.max(r.lo);
        let xplus = xplus.min(r.hi);
        let arg = 0f64.clamp(xminus.min(xplus), xplus.max(xminus));
        Ok((arg, self.evaluate(arg)))
    }

    /// Legendre–Fenchel conjugate `f*(y) = sup_x { xy − f(x) }`, exact.
    ///
    /// Each strictly quadratic piece contributes a dual quadratic over its
    /// slope range, each slope jump (kink) a linear dual piece, and each
    /// finite domain endpoint an outer linear dual piece.
    pub fn conjugate(&self) -> Result<PlqFunction> {
        let r = self.repr()?;
        if r.lo == r.hi {
            let v = r.pieces[0].eval(r.lo);
            return Ok(PlqFunction::linear(r.lo, -v));
        }
        let k = r.pieces.len();
        // piece interval endpoints x_0 = lo, ..., x_k = hi
        let xs: Vec<f64> = std::iter::once(r.lo)
            .chain(r.cuts.iter().copied())
            .chain(std::iter::once(r.hi))
            .collect();
        // one-sided slopes at the piece endpoints, shared between constructs
        // so junctions match bit-for-bit
        let slope = |j: usize, x: f64, toward_pos: bool| -> f64 {
            let p = &r.pieces[j];
            if x.is_finite() {
                p.deriv(x)
            } else if p.a > 0.0 {
                if toward_pos {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                p.b
            }
        };
        let s_in: Vec<f64> = (0..k).map(|j| slope(j, xs[j], false)).collect();
        let s_out: Vec<f64> = (0..k).map(|j| slope(j, xs[j + 1], true)).collect();

        // dual constructs (slope interval, dual piece) in nondecreasing slope order
        let mut constructs: Vec<(f64, f64, Piece)> = Vec::with_capacity(2 * k + 2);
        if r.lo.is_finite() {
            let v = r.pieces[0].eval(r.lo);
            constructs.push((f64::NEG_INFINITY, s_in[0], Piece::new(0.0, r.lo, -v)));
        }
        for j in 0..k {
            let p = &r.pieces[j];
            if p.a > 0.0 {
                let dual = Piece::new(
                    1.0 / (4.0 * p.a),
                    -p.b / (2.0 * p.a),
                    p.b * p.b / (4.0 * p.a) - p.c,
                );
                constructs.push((s_in[j], s_out[j], dual));
            }
            if j + 1 < k {
                // kink at the interior cut x_{j+1}
                let cut = xs[j + 1];
                if s_in[j + 1] > s_out[j] {
                    let v = r.pieces[j].eval(cut);
                    constructs.push((s_out[j], s_in[j + 1], Piece::new(0.0, cut, -v)));
                }
            }
        }
        if r.hi.is_finite() {
            let v = r.pieces[k - 1].eval(r.hi);
            constructs.push((s_out[k - 1], f64::INFINITY, Piece::new(0.0, r.hi, -v)));
        }
        let kept: Vec<(f64, f64, Piece)> =
            constructs.into_iter().filter(|&(sl, sr, _)| sr > sl).collect();
        if kept.is_empty() {
            // affine on an unbounded domain: conjugate is a point function
            let p = &r.pieces[0];
            return Ok(PlqFunction::point(p.b, -p.c));
        }
        let lo = kept[0].0;
        let hi = kept[kept.len() - 1].1;
        let cuts: Vec<f64> = kept.iter().skip(1).map(|&(sl, _, _)| sl).collect();
        let pieces: Vec<Piece> = kept.into_iter().map(|(_, _, p)| p).collect();
        let out = PlqFunction::new_unchecked(lo, hi, cuts, pieces);
        debug_assert!(out.validate().is_ok(), "conjugate produced invalid plq: {out:?}");
        Ok(out.normalize())
    }

    /// Recession function `f^∞`: positively homogeneous, piecewise linear
    /// through the origin; equals the support function of `dom f*`.
    pub fn recession(&self) -> Result<PlqFunction> {
        let r = self.repr()?;
        if r.lo == r.hi {
            return Ok(PlqFunction::point(0.0, 0.0));
        }
        Ok(two_slope_homogeneous(Self::slope_inf(r), Self::slope_sup(r)))
    }

    /// `α·f` for `α > 0`; the indicator of `cl dom f` for `α = 0`.
    pub fn scale(&self, alpha: f64) -> Result<PlqFunction> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParam(format!("scale factor must be nonnegative, got {alpha}")));
        }
        let r = self.repr()?;
        if alpha == 0.0 {
            return Ok(if r.lo == r.hi {
                PlqFunction::point(r.lo, 0.0)
            } else {
                PlqFunction::indicator(r.lo, r.hi)
            });
        }
        let pieces = r
            .pieces
            .iter()
            .map(|p| Piece::new(alpha * p.a, alpha * p.b, alpha * p.c))
            .collect();
        Ok(PlqFunction::new_unchecked(r.lo, r.hi, r.cuts.clone(), pieces))
    }

    /// Pointwise sum on the intersected domain. An empty intersection yields
    /// the improper function, which callers must check for.
    pub fn add(&self, other: &PlqFunction) -> PlqFunction {
        let (rf, rg) = match (&self.repr, &other.repr) {
            (Some(f), Some(g)) => (f, g),
            _ => return PlqFunction::improper(),
        };
        let lo = rf.lo.max(rg.lo);
        let hi = rf.hi.min(rg.hi);
        if lo > hi {
            return PlqFunction::improper();
        }
        if lo == hi {
            return PlqFunction::point(lo, self.evaluate(lo) + other.evaluate(lo));
        }
        let mut cuts: Vec<f64> = rf
            .cuts
            .iter()
            .chain(rg.cuts.iter())
            .copied()
            .filter(|&c| c > lo && c < hi)
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut pieces = Vec::with_capacity(cuts.len() + 1);
        let bounds: Vec<f64> = std::iter::once(lo)
            .chain(cuts.iter().copied())
            .chain(std::iter::once(hi))
            .collect();
        for w in bounds.windows(2) {
            let sample = interval_sample(w[0], w[1]);
            let pf = rf.pieces[Self::locate(rf, sample)];
            let pg = rg.pieces[Self::locate(rg, sample)];
            pieces.push(Piece::new(pf.a + pg.a, pf.b + pg.b, pf.c + pg.c));
        }
        let out = PlqFunction::new_unchecked(lo, hi, cuts, pieces);
        debug_assert!(out.validate().is_ok(), "add produced invalid plq: {out:?}");
        out
    }

    /// `x ↦ f(x + b)`.
    pub fn shift(&self, b: f64) -> Result<PlqFunction> {
        self.compose_affine(b, 1.0)
    }

    /// `x ↦ f(α + βx)` for `β ≠ 0`.
    pub fn compose_affine(&self, alpha: f64, beta: f64) -> Result<PlqFunction> {
        if beta == 0.0 || !beta.is_finite() || !alpha.is_finite() {
            return Err(Error::InvalidParam(format!("compose_affine needs finite α and β ≠ 0, got ({alpha}, {beta})")));
        }
        let r = self.repr()?;
        let map_back = |x: f64| (x - alpha) / beta;
        let tp = |p: &Piece| {
            Piece::new(
                p.a * beta * beta,
                2.0 * p.a * alpha * beta + p.b * beta,
                (p.a * alpha + p.b) * alpha + p.c,
            )
        };
        let (lo, hi, cuts, pieces) = if beta > 0.0 {
            (
                map_back(r.lo),
                map_back(r.hi),
                r.cuts.iter().map(|&c| map_back(c)).collect::<Vec<_>>(),
                r.pieces.iter().map(tp).collect::<Vec<_>>(),
            )
        } else {
            (
                map_back(r.hi),
                map_back(r.lo),
                r.cuts.iter().rev().map(|&c| map_back(c)).collect::<Vec<_>>(),
                r.pieces.iter().rev().map(tp).collect::<Vec<_>>(),
            )
        };
        if lo == hi {
            // collapsed by rounding of an already-point domain
            return Ok(PlqFunction::point(lo, pieces[0].eval(lo)));
        }
        // rounding of (c - alpha)/beta can land a cut on a domain endpoint
        let cuts: Vec<f64> = cuts.into_iter().filter(|&c| c > lo && c < hi).collect();
        let pieces = if cuts.len() + 1 < pieces.len() {
            let bounds: Vec<f64> = std::iter::once(lo)
                .chain(cuts.iter().copied())
                .chain(std::iter::once(hi))
                .collect();
            let mut sel = Vec::with_capacity(cuts.len() + 1);
            for w in bounds.windows(2) {
                let sample = interval_sample(w[0], w[1]);
                let orig = alpha + beta * sample;
                sel.push(tp(&r.pieces[Self::locate(r, orig.clamp(r.lo, r.hi))]));
            }
            sel
        } else {
            pieces
        };
        let out = PlqFunction::new_unchecked(lo, hi, cuts, pieces);
        debug_assert!(out.validate().is_ok(), "compose_affine produced invalid plq: {out:?}");
        Ok(out)
    }

    /// Epigraphical scaling `x ↦ m·f(x/m)` for `m > 0` (the perspective at `m`).
    pub fn perspective(&self, m: f64) -> Result<PlqFunction> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidParam(format!("perspective needs m > 0, got {m}")));
        }
        let r = self.repr()?;
        let pieces = r.pieces.iter().map(|p| Piece::new(p.a / m, p.b, p.c * m)).collect();
        let cuts = r.cuts.iter().map(|&c| c * m).collect();
        Ok(PlqFunction::new_unchecked(r.lo * m, r.hi * m, cuts, pieces))
    }

    /// Proximal point: the unique minimizer of `f(u) + (u − x)²/(2γ)`.
    pub fn prox(&self, gamma: f64, x: f64) -> Result<f64> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidParam(format!("prox step must be positive, got {gamma}")));
        }
        self.repr()?;
        let quad = PlqFunction::quadratic(1.0 / (2.0 * gamma), -x / gamma, x * x / (2.0 * gamma));
        let (u, _) = self.add(&quad).minimize()?;
        Ok(u)
    }

    /// `(1/λ)`-Lipschitz regularization `f^λ(u) = inf_{u'} { f(u') + |u − u'|/λ }`,
    /// computed exactly as `(f* + δ_{[−1/λ, 1/λ]})*`. Requires `f` bounded below.
    pub fn lipschitz_envelope(&self, lambda: f64) -> Result<PlqFunction> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParam(format!("envelope parameter must be positive, got {lambda}")));
        }
        self.minimize()?; // rejects improper and unbounded-below inputs
        let conj = self.conjugate()?;
        let boxed = conj.add(&PlqFunction::indicator(-1.0 / lambda, 1.0 / lambda));
        boxed.conjugate()
    }

    /// Merges adjacent pieces with bit-identical coefficients.
    pub fn normalize(&self) -> PlqFunction {
        let r = match &self.repr {
            None => return PlqFunction::improper(),
            Some(r) => r,
        };
        if r.cuts.is_empty() {
            return self.clone();
        }
        let mut cuts = Vec::with_capacity(r.cuts.len());
        let mut pieces = vec![r.pieces[0]];
        for (j, &cut) in r.cuts.iter().enumerate() {
            let next = r.pieces[j + 1];
            if next == *pieces.last().unwrap() {
                continue;
            }
            cuts.push(cut);
            pieces.push(next);
        }
        PlqFunction::new_unchecked(r.lo, r.hi, cuts, pieces)
    }
}

/// Weighted pointwise combination `Σ wᵢ fᵢ` with the `(0·f) = δ_{cl dom f}`
/// convention for zero weights. Weights must be nonnegative and sum to one.
/// An empty domain intersection yields the improper function.
pub fn expectation(weights: &[f64], fs: &[PlqFunction]) -> Result<PlqFunction> {
    if weights.len() != fs.len() || fs.is_empty() {
        return Err(Error::DimMismatch(format!(
            "expectation got {} weights for {} functions",
            weights.len(),
            fs.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidParam("expectation weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!("expectation weights must sum to 1, got {total}")));
    }
    let mut acc = fs[0].scale(weights[0])?;
    for (w, f) in weights.iter().zip(fs.iter()).skip(1) {
        acc = acc.add(&f.scale(*w)?);
        if !acc.is_proper() {
            return Ok(acc);
        }
    }
    Ok(acc)
}

/// Support function `σ_D(y) = sup_{x∈D} xy` of a nonempty closed interval.
pub fn support_function(lo: f64, hi: f64) -> PlqFunction {
    assert!(lo <= hi, "support function needs a nonempty interval");
    if lo == hi {
        return PlqFunction::linear(lo, 0.0);
    }
    two_slope_homogeneous(lo, hi)
}

/// Normal cone `∂δ_{[lo,hi]}(x)`: `{0}` in the interior, a half-line at a
/// boundary point, the whole line on a point interval, empty outside.
pub fn normal_cone(lo: f64, hi: f64, x: f64) -> SubdiffInterval {
    assert!(lo <= hi, "normal cone needs a nonempty interval");
    if x < lo || x > hi || x.is_nan() {
        return SubdiffInterval::empty();
    }
    let left = if x == lo { f64::NEG_INFINITY } else { 0.0 };
    let right = if x == hi { f64::INFINITY } else { 0.0 };
    SubdiffInterval::new(left, right)
}

/// Positively homogeneous function with slope `s_neg` on `u ≤ 0` and `s_pos`
/// on `u ≥ 0`; an infinite slope truncates the domain at zero on that side.
fn two_slope_homogeneous(s_neg: f64, s_pos: f64) -> PlqFunction {
    match (s_neg.is_finite(), s_pos.is_finite()) {
        (true, true) => {
            if s_neg == s_pos {
                PlqFunction::linear(s_pos, 0.0)
            } else {
                PlqFunction::new_unchecked(
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    vec![0.0],
                    vec![Piece::new(0.0, s_neg, 0.0), Piece::new(0.0, s_pos, 0.0)],
                )
            }
        }
        (true, false) => PlqFunction::new_unchecked(
            f64::NEG_INFINITY,
            0.0,
            vec![],
            vec![Piece::new(0.0, s_neg, 0.0)],
        ),
        (false, true) => {
            PlqFunction::new_unchecked(0.0, f64::INFINITY, vec![], vec![Piece::new(0.0, s_pos, 0.0)])
        }
        (false, false) => PlqFunction::point(0.0, 0.0),
    }
}

fn interval_sample(l: f64, r: f64) -> f64 {
    match (l.is_finite(), r.is_finite()) {
        (true, true) => 0.5 * (l + r),
        (true, false) => l + 1.0,
        (false, true) => r - 1.0,
        (false, false) => 0.0,
    }
}

/// Probe grid for evaluation-based comparisons: all finite domain endpoints
/// and breakpoints of the given functions, midpoints between neighbours, and
/// two far points beyond the finite feature range.
pub fn probe_points(fns: &[&PlqFunction]) -> Vec<f64> {
    let mut marks: Vec<f64> = vec![0.0];
    for f in fns {
        if let Some((lo, hi)) = f.domain() {
            if lo.is_finite() {
                marks.push(lo);
            }
            if hi.is_finite() {
                marks.push(hi);
            }
        }
        marks.extend_from_slice(f.cuts());
    }
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    marks.dedup();
    let span = (marks.last().unwrap() - marks[0]).max(1.0);
    let mut probes = Vec::with_capacity(3 * marks.len() + 2);
    probes.push(marks[0] - 1.5 * span);
    for w in marks.windows(2) {
        probes.push(w[0]);
        probes.push(0.5 * (w[0] + w[1]));
    }
    probes.push(*marks.last().unwrap());
    probes.push(marks.last().unwrap() + 1.5 * span);
    probes
}

/// Evaluation-based equality on the shared probe grid (both `+∞` counts as
/// equal); `tol` is applied in mixed absolute/relative form.
pub fn approx_eq(f: &PlqFunction, g: &PlqFunction, tol: f64) -> bool {
    max_probe_gap(f, g).map_or(false, |gap| gap <= tol)
}

/// Largest mixed abs/rel evaluation discrepancy over the probe grid, or
/// `None` when one side is `+∞` and the other finite somewhere.
pub fn max_probe_gap(f: &PlqFunction, g: &PlqFunction) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for x in probe_points(&[f, g]) {
        let (vf, vg) = (f.evaluate(x), g.evaluate(x));
        match (vf.is_finite(), vg.is_finite()) {
            (true, true) => {
                let denom = 1.0 + vf.abs().max(vg.abs());
                worst = worst.max((vf - vg).abs() / denom);
            }
            (false, false) => {}
            _ => return None,
        }
    }
    Some(worst)
}

impl PlqFunction {
    /// Serializes to the line-oriented block format:
    /// `plq <lo> <hi>` followed by one `<left_end> <a> <b> <c>` line per piece.
    pub fn to_text(&self) -> String {
        use crate::textio::fmt_f;
        let r = match &self.repr {
            None => return "plq improper\n".to_string(),
            Some(r) => r,
        };
        let mut out = format!("plq {} {}\n", fmt_f(r.lo), fmt_f(r.hi));
        for (j, p) in r.pieces.iter().enumerate() {
            let left = if j == 0 { r.lo } else { r.cuts[j - 1] };
            out.push_str(&format!(
                "{} {} {} {}\n",
                fmt_f(left),
                fmt_f(p.a),
                fmt_f(p.b),
                fmt_f(p.c)
            ));
        }
        out
    }

    /// Parses one PLQ block from the scanner. Piece lines are consumed while
    /// they consist of four numeric fields; the block header is mandatory.
    pub fn parse_block(scanner: &mut crate::textio::LineScanner) -> Result<PlqFunction> {
        use crate::textio::parse_f;
        let (line, header) = scanner.next_line().ok_or_else(|| Error::Parse {
            line: scanner.eof_line(),
            msg: "expected a plq block".into(),
        })?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.first() != Some(&"plq") {
            return Err(Error::Parse { line, msg: format!("expected `plq` header, got {header:?}") });
        }
        if toks.len() == 2 && toks[1] == "improper" {
            return Ok(PlqFunction::improper());
        }
        if toks.len() != 3 {
            return Err(Error::Parse { line, msg: "plq header needs `plq <lo> <hi>`".into() });
        }
        let lo = parse_f(toks[1], line)?;
        let hi = parse_f(toks[2], line)?;
        let mut lefts = Vec::new();
        let mut pieces = Vec::new();
        while let Some((n, l)) = scanner.peek() {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 4 || parse_f(toks[0], n).is_err() {
                break;
            }
            scanner.next_line();
            lefts.push(parse_f(toks[0], n)?);
            pieces.push(Piece::new(parse_f(toks[1], n)?, parse_f(toks[2], n)?, parse_f(toks[3], n)?));
        }
        if pieces.is_empty() {
            return Err(Error::Parse { line, msg: "plq block has no pieces".into() });
        }
        if lefts[0] != lo {
            return Err(Error::Parse {
                line,
                msg: format!("first piece must start at domain_lo ({} vs {})", lefts[0], lo),
            });
        }
        let cuts = lefts[1..].to_vec();
        PlqFunction::new(lo, hi, cuts, pieces).map_err(|e| Error::Parse { line, msg: e.to_string() })
    }

    /// Parses a standalone text block (e.g. a whole file holding one PLQ).
    pub fn from_text(text: &str) -> Result<PlqFunction> {
        let mut scanner = crate::textio::LineScanner::new(text);
        let f = Self::parse_block(&mut scanner)?;
        if let Some((line, l)) = scanner.peek() {
            return Err(Error::Parse { line, msg: format!("trailing content {l:?}") });
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_conjugate(f: &PlqFunction, y: f64) -> f64 {
        // sup over a fine grid on a truncated domain; lower bound of f*(y)
        let (lo, hi) = f.domain().unwrap();
        let radius = 10.0
            * (1.0
                + f.cuts()
                    .iter()
                    .fold(0.0f64, |m, c| m.max(c.abs()))
                    .max(if lo.is_finite() { lo.abs() } else { 0.0 })
                    .max(if hi.is_finite() { hi.abs() } else { 0.0 }));
        let l = lo.max(-radius);
        let h = hi.min(radius);
        let n = 200_001;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let x = l + (h - l) * i as f64 / (n - 1) as f64;
            best = best.max(x * y - f.evaluate(x));
        }
        best
    }

    fn ls_hstar(k: f64) -> PlqFunction {
        // c² inside |c| ≤ k/2, then linear growth at slope ±k
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
        .unwrap()
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(PlqFunction::half_square().evaluate(2.0), 2.0);
        assert_eq!(PlqFunction::indicator(0.0, 1.0).evaluate(2.0), f64::INFINITY);
        assert_eq!(PlqFunction::abs().evaluate(-3.0), 3.0);
    }

    #[test]
    fn conjugate_half_square_is_self() {
        let f = PlqFunction::half_square();
        let c = f.conjugate().unwrap();
        assert!(approx_eq(&f, &c, 1e-12));
    }

    #[test]
    fn conjugate_indicator_is_abs() {
        let c = PlqFunction::indicator(-1.0, 1.0).conjugate().unwrap();
        assert!(approx_eq(&c, &PlqFunction::abs(), 1e-12));
    }

    #[test]
    fn conjugate_ls_hstar() {
        // h(y) = y²/4 on [-2, 2] for k = 2, checked against the grid oracle
        let h = ls_hstar(2.0).conjugate().unwrap();
        let expected = PlqFunction::new(
            -2.0,
            2.0,
            vec![],
            vec![Piece::new(0.25, 0.0, 0.0)],
        )
        .unwrap();
        assert!(approx_eq(&h, &expected, 1e-12));
        for y in [-2.0, -1.3, 0.0, 0.5, 2.0] {
            let bf = brute_conjugate(&ls_hstar(2.0), y);
            assert!((bf - h.evaluate(y)).abs() < 1e-4, "y={y}: {bf} vs {}", h.evaluate(y));
        }
        assert_eq!(h.evaluate(2.5), f64::INFINITY);
    }

    #[test]
    fn recession_examples() {
        let r = PlqFunction::half_square().recession().unwrap();
        assert_eq!(r.domain(), Some((0.0, 0.0)));
        assert_eq!(r.evaluate(0.0), 0.0);

        let r = PlqFunction::abs().recession().unwrap();
        assert!(approx_eq(&r, &PlqFunction::abs(), 1e-12));

        // (h*)^∞ = 2|c| for k = 2, cross-checked against σ_{dom h}
        let r = ls_hstar(2.0).recession().unwrap();
        let two_abs = PlqFunction::abs().scale(2.0).unwrap();
        assert!(approx_eq(&r, &two_abs, 1e-12));
        let h = ls_hstar(2.0).conjugate().unwrap();
        let (dl, dh) = h.domain().unwrap();
        assert!(approx_eq(&r, &support_function(dl, dh), 1e-12));
    }

    #[test]
    fn recession_difference_quotient_limit() {
        // grid-limit oracle for the recession of the k = 2 integrand
        let f = ls_hstar(2.0);
        let xbar = 0.3;
        for u in [-1.0, 0.7, 2.0] {
            let mut prev = f64::NEG_INFINITY;
            for alpha in [1e2, 1e4, 1e6] {
                let q = (f.evaluate(xbar + alpha * u) - f.evaluate(xbar)) / alpha;
                assert!(q >= prev - 1e-9);
                prev = q;
            }
            assert!((prev - f.recession().unwrap().evaluate(u)).abs() < 1e-3);
        }
    }

    #[test]
    fn subdifferential_examples() {
        let s = PlqFunction::abs().subdifferential(0.0);
        assert_eq!((s.lo, s.hi), (-1.0, 1.0));

        let halfline = PlqFunction::indicator(0.0, f64::INFINITY);
        let s = halfline.subdifferential(0.0);
        assert_eq!((s.lo, s.hi), (f64::NEG_INFINITY, 0.0));

        let s = ls_hstar(2.0).subdifferential(1.0);
        assert_eq!((s.lo, s.hi), (2.0, 2.0));

        assert!(PlqFunction::indicator(0.0, 1.0).subdifferential(2.0).empty);
    }

    #[test]
    fn normal_cone_examples() {
        let s = normal_cone(-1.0, 2.0, 0.0);
        assert_eq!((s.lo, s.hi), (0.0, 0.0));
        let s = normal_cone(-1.0, 2.0, 2.0);
        assert_eq!((s.lo, s.hi), (0.0, f64::INFINITY));
        assert!(normal_cone(-1.0, 2.0, 3.0).empty);
    }

    #[test]
    fn support_function_examples() {
        let s = support_function(-1.0, 2.0);
        assert_eq!(s.evaluate(1.0), 2.0);
        assert_eq!(s.evaluate(-1.0), 1.0);
        let s = support_function(0.0, f64::INFINITY);
        assert!(approx_eq(&s, &PlqFunction::indicator(f64::NEG_INFINITY, 0.0), 1e-12));
        let s = support_function(0.0, 0.0);
        assert!(approx_eq(&s, &PlqFunction::zero(), 1e-12));
        // conjugate of the indicator agrees
        let c = PlqFunction::indicator(-1.0, 2.0).conjugate().unwrap();
        assert!(approx_eq(&c, &support_function(-1.0, 2.0), 1e-12));
    }

    #[test]
    fn scale_examples() {
        let two_abs = PlqFunction::abs().scale(2.0).unwrap();
        assert_eq!(two_abs.evaluate(-3.0), 6.0);
        let z = PlqFunction::half_square().scale(0.0).unwrap();
        assert!(approx_eq(&z, &PlqFunction::zero(), 1e-12));
        // α = 0 keeps the closed domain, drops the values
        let f = PlqFunction::indicator(0.0, 1.0).add(&PlqFunction::linear(1.0, 0.0));
        let z = f.scale(0.0).unwrap();
        assert!(approx_eq(&z, &PlqFunction::indicator(0.0, 1.0), 1e-12));
        assert!(PlqFunction::abs().scale(-1.0).is_err());
    }

    #[test]
    fn add_and_shift_examples() {
        let s = PlqFunction::half_square().add(&PlqFunction::abs());
        assert_eq!(s.evaluate(1.0), 1.5);

        let sh = PlqFunction::indicator(0.0, 1.0).shift(1.0).unwrap();
        assert!(approx_eq(&sh, &PlqFunction::indicator(-1.0, 0.0), 1e-12));

        // conjugate-shift law: shift(½x², 1)* = ½y² − y, against the oracle
        let c = PlqFunction::half_square().shift(1.0).unwrap().conjugate().unwrap();
        let expected = PlqFunction::quadratic(0.5, -1.0, 0.0);
        assert!(approx_eq(&c, &expected, 1e-12));
        for y in [-2.0, 0.0, 1.5] {
            let bf = brute_conjugate(&PlqFunction::half_square().shift(1.0).unwrap(), y);
            assert!((bf - expected.evaluate(y)).abs() < 1e-3);
        }

        let disjoint = PlqFunction::indicator(0.0, 1.0).add(&PlqFunction::indicator(2.0, 3.0));
        assert!(!disjoint.is_proper());
    }

    #[test]
    fn prox_examples() {
        assert_eq!(PlqFunction::zero().prox(1.0, 3.25).unwrap(), 3.25);
        let clamp = PlqFunction::indicator(-1.0, 1.0);
        assert_eq!(clamp.prox(0.7, 5.0).unwrap(), 1.0);
        assert_eq!(clamp.prox(0.7, -5.0).unwrap(), -1.0);
        assert_eq!(clamp.prox(0.7, 0.3).unwrap(), 0.3);
        assert_eq!(PlqFunction::abs().prox(1.0, 0.5).unwrap(), 0.0);
        // soft threshold above the kink
        assert!((PlqFunction::abs().prox(1.0, 2.5).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn prox_optimality_inclusion() {
        let f = ls_hstar(2.0);
        for &x in &[-3.0, -0.4, 0.0, 0.9, 4.2] {
            for &gamma in &[0.1, 1.0, 7.0] {
                let u = f.prox(gamma, x).unwrap();
                let resid = (x - u) / gamma;
                assert!(f.subdifferential(u).contains(resid, 1e-9), "x={x} γ={gamma}");
            }
        }
    }

    #[test]
    fn lipschitz_envelope_examples() {
        // δ_{0} regularizes to |u|/λ
        let env = PlqFunction::point(0.0, 0.0).lipschitz_envelope(0.5).unwrap();
        assert!(approx_eq(&env, &PlqFunction::abs().scale(2.0).unwrap(), 1e-12));
        // distance to an interval
        let env = PlqFunction::indicator(0.0, 1.0).lipschitz_envelope(1.0).unwrap();
        assert!((env.evaluate(2.0) - 1.0).abs() < 1e-12);
        // a function that is already 1-Lipschitz is a fixed point at λ = 1
        let f = PlqFunction::abs();
        assert!(approx_eq(&f.lipschitz_envelope(1.0).unwrap(), &f, 1e-12));
        // envelopes grow as λ shrinks and never exceed f
        let f = ls_hstar(2.0);
        let e1 = f.lipschitz_envelope(1.0).unwrap();
        let e2 = f.lipschitz_envelope(0.25).unwrap();
        for x in probe_points(&[&f, &e1, &e2]) {
            assert!(e1.evaluate(x) <= e2.evaluate(x) + 1e-9);
            assert!(e2.evaluate(x) <= f.evaluate(x) + 1e-9);
        }
        assert!(PlqFunction::linear(1.0, 0.0).lipschitz_envelope(1.0).is_err());
    }

    #[test]
    fn expectation_examples() {
        let f1 = PlqFunction::half_square().shift(-1.0).unwrap();
        let f2 = PlqFunction::half_square().shift(1.0).unwrap();
        let m = expectation(&[0.5, 0.5], &[f1, f2]).unwrap();
        let expected = PlqFunction::quadratic(0.5, 0.0, 0.5);
        assert!(approx_eq(&m, &expected, 1e-12));

        let f = ls_hstar(2.0);
        let same = expectation(&[1.0], std::slice::from_ref(&f)).unwrap();
        assert!(approx_eq(&same, &f, 1e-12));

        let d = expectation(
            &[0.5, 0.5],
            &[PlqFunction::indicator(0.0, 2.0), PlqFunction::indicator(1.0, 3.0)],
        )
        .unwrap();
        assert!(approx_eq(&d, &PlqFunction::indicator(1.0, 2.0), 1e-12));

        let gap = expectation(
            &[0.5, 0.5],
            &[PlqFunction::indicator(0.0, 1.0), PlqFunction::indicator(2.0, 3.0)],
        )
        .unwrap();
        assert!(!gap.is_proper());
    }

    #[test]
    fn minimize_tie_break_is_min_norm() {
        // flat bottom on [-1, 3]: report 0
        let f = PlqFunction::new(
            f64::NEG_INFINITY,
            f64::INFINITY,
            vec![-1.0, 3.0],
            vec![Piece::new(0.0, -1.0, -1.0), Piece::new(0.0, 0.0, 0.0), Piece::new(0.0, 1.0, -3.0)],
        )
        .unwrap();
        let (x, v) = f.minimize().unwrap();
        assert_eq!((x, v), (0.0, 0.0));
        // flat bottom strictly right of zero: report its left edge
        let g = f.shift(-2.0).unwrap();
        let (x, _) = g.minimize().unwrap();
        assert_eq!(x, 1.0);
    }

    #[test]
    fn conjugate_scale_law() {
        // (αf)*(y) = α f*(y/α) for α > 0
        let f = ls_hstar(2.0);
        let alpha = 1.7;
        let left = f.scale(alpha).unwrap().conjugate().unwrap();
        let fstar = f.conjugate().unwrap();
        for y in probe_points(&[&left, &fstar]) {
            let rhs = alpha * fstar.evaluate(y / alpha);
            let lhs = left.evaluate(y);
            if lhs.is_finite() || rhs.is_finite() {
                assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs().max(rhs.abs())));
            }
        }
        // conjugate(scale(0, f)) = recession(conjugate(f))
        let left = f.scale(0.0).unwrap().conjugate().unwrap();
        let right = f.conjugate().unwrap().recession().unwrap();
        assert!(approx_eq(&left, &right, 1e-9));
    }

    #[test]
    fn point_domain_roundtrip() {
        let f = PlqFunction::point(1.5, 2.0);
        let c = f.conjugate().unwrap();
        // f* is the line 1.5y - 2
        assert_eq!(c.evaluate(2.0), 1.0);
        let back = c.conjugate().unwrap();
        assert!(approx_eq(&f, &back, 1e-12));
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let f = ls_hstar(2.0);
        let text = f.to_text();
        let g = PlqFunction::from_text(&text).unwrap();
        assert_eq!(f.domain(), g.domain());
        assert_eq!(f.cuts(), g.cuts());
        assert_eq!(f.pieces(), g.pieces());

        let ind = PlqFunction::indicator(0.0, f64::INFINITY);
        let g = PlqFunction::from_text(&ind.to_text()).unwrap();
        assert_eq!(g.domain(), Some((0.0, f64::INFINITY)));
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(PlqFunction::from_text("plq 0 1\n").is_err());
        assert!(PlqFunction::from_text("plq 0\n0 0 0 0\n").is_err());
        // nonconvex piece data is rejected by validation
        let bad = "plq -inf inf\n-inf -1 0 0\n";
        assert!(PlqFunction::from_text(bad).is_err());
        // parse error carries the line number
        match PlqFunction::from_text("plq 0 one\n0 0 0 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
