//! Coordinatewise-separable multivariate integrands with box domains.
//!
//! A [`SeparableIntegrand`] is a sum `h(x) = Σ_k h_k(x_k)` of univariate PLQ
//! functions; its domain is the product box of the coordinate domains. All
//! convex-calculus operations act coordinatewise and stay exact.

use crate::error::{Error, Result};
use crate::plq::{self, PlqFunction, SubdiffInterval};

#[derive(Debug, Clone)]
pub struct SeparableIntegrand {
    coords: Vec<PlqFunction>,
}

impl SeparableIntegrand {
    pub fn new(coords: Vec<PlqFunction>) -> Self {
        assert!(!coords.is_empty(), "integrand needs at least one coordinate");
        SeparableIntegrand { coords }
    }

    pub fn scalar(f: PlqFunction) -> Self {
        Self::new(vec![f])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coord(&self, k: usize) -> &PlqFunction {
        &self.coords[k]
    }

    pub fn coords(&self) -> &[PlqFunction] {
        &self.coords
    }

    pub fn is_proper(&self) -> bool {
        self.coords.iter().all(|f| f.is_proper())
    }

    /// `h(x) = Σ_k h_k(x_k)`; `+∞` as soon as a coordinate leaves its domain.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut total = 0.0;
        for (f, &xk) in self.coords.iter().zip(x) {
            let v = f.evaluate(xk);
            if !v.is_finite() {
                return f64::INFINITY;
            }
            total += v;
        }
        total
    }

    /// The box `D = Π [lo_k, hi_k]`, i.e. the closed domain.
    pub fn domain_box(&self) -> Result<Vec<(f64, f64)>> {
        self.coords
            .iter()
            .map(|f| f.domain().ok_or_else(|| Error::Improper("integrand has an empty coordinate".into())))
            .collect()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.coords
            .iter()
            .zip(x)
            .all(|(f, &xk)| f.domain().map_or(false, |(lo, hi)| xk >= lo && xk <= hi))
    }

    pub fn conjugate(&self) -> Result<SeparableIntegrand> {
        Ok(Self::new(self.coords.iter().map(|f| f.conjugate()).collect::<Result<_>>()?))
    }

    pub fn recession(&self) -> Result<SeparableIntegrand> {
        Ok(Self::new(self.coords.iter().map(|f| f.recession()).collect::<Result<_>>()?))
    }

    /// `x ↦ h(x + b)` by coordinatewise shifts.
    pub fn shift(&self, b: &[f64]) -> Result<SeparableIntegrand> {
        debug_assert_eq!(b.len(), self.dim());
        Ok(Self::new(
            self.coords.iter().zip(b).map(|(f, &bk)| f.shift(bk)).collect::<Result<_>>()?,
        ))
    }

    pub fn subdifferential(&self, x: &[f64]) -> Vec<SubdiffInterval> {
        self.coords.iter().zip(x).map(|(f, &xk)| f.subdifferential(xk)).collect()
    }

    /// Coordinatewise proximal step.
    pub fn prox(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.coords.iter().zip(x).map(|(f, &xk)| f.prox(gamma, xk)).collect()
    }

    /// Coordinatewise exact minimization; sums the values, reports the
    /// minimum-norm minimizer per coordinate.
    pub fn minimize(&self) -> Result<(Vec<f64>, f64)> {
        let mut arg = Vec::with_capacity(self.dim());
        let mut total = 0.0;
        for f in &self.coords {
            let (x, v) = f.minimize()?;
            arg.push(x);
            total += v;
        }
        Ok((arg, total))
    }
}

/// Weighted combination of integrands, coordinatewise. Empty coordinate
/// intersections surface as improper coordinates in the result.
pub fn expectation(weights: &[f64], hs: &[&SeparableIntegrand]) -> Result<SeparableIntegrand> {
    if hs.is_empty() || weights.len() != hs.len() {
        return Err(Error::DimMismatch("expectation needs matching weights and integrands".into()));
    }
    let d = hs[0].dim();
    if hs.iter().any(|h| h.dim() != d) {
        return Err(Error::DimMismatch("integrand dimensions differ".into()));
    }
    let mut coords = Vec::with_capacity(d);
    for k in 0..d {
        let fs: Vec<PlqFunction> = hs.iter().map(|h| h.coord(k).clone()).collect();
        coords.push(plq::expectation(weights, &fs)?);
    }
    Ok(SeparableIntegrand::new(coords))
}
