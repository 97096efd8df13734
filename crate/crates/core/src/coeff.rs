//! Exact arithmetic in monomial-spanned dense subalgebras of the coefficient
//! algebra, and states on it given by moment data.
//!
//! Three engines:
//! - `Toeplitz`: monomials `S^m S*^n` in the isometry `S` (`S*S = 1`);
//! - `Laurent { dim }`: monomials `z^γ`, `γ ∈ ℤ^dim`, in `C(𝕋^dim)`;
//! - `Scalar`: the complex numbers, a single unit monomial.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoeffError {
    #[error("engine mismatch: {0} vs {1}")]
    EngineMismatch(Engine, Engine),
    #[error("monomial {monomial:?} does not belong to engine {engine}")]
    ForeignMonomial { engine: Engine, monomial: CoeffMonomial },
    #[error("invalid moment data: {0}")]
    InvalidMoments(String),
    #[error("moment data is not positive definite: smallest eigenvalue {0:e} on window {1}")]
    NotPositive(f64, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Engine {
    Toeplitz,
    Laurent { dim: usize },
    Scalar,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Engine::Toeplitz => f.write_str("toeplitz"),
            Engine::Laurent { dim } => write!(f, "laurent(d={dim})"),
            Engine::Scalar => f.write_str("scalar"),
        }
    }
}

/// A monomial; `Toeplitz { m, n }` is `S^m S*^n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoeffMonomial {
    Toeplitz { m: u64, n: u64 },
    Laurent(Vec<i64>),
    Unit,
}

impl CoeffMonomial {
    pub fn unit(engine: Engine) -> Self {
        match engine {
            Engine::Toeplitz => CoeffMonomial::Toeplitz { m: 0, n: 0 },
            Engine::Laurent { dim } => CoeffMonomial::Laurent(vec![0; dim]),
            Engine::Scalar => CoeffMonomial::Unit,
        }
    }

    pub fn belongs_to(&self, engine: Engine) -> bool {
        match (self, engine) {
            (CoeffMonomial::Toeplitz { .. }, Engine::Toeplitz) => true,
            (CoeffMonomial::Laurent(g), Engine::Laurent { dim }) => g.len() == dim,
            (CoeffMonomial::Unit, Engine::Scalar) => true,
            _ => false,
        }
    }

    pub fn is_unit(&self) -> bool {
        match self {
            CoeffMonomial::Toeplitz { m, n } => *m == 0 && *n == 0,
            CoeffMonomial::Laurent(g) => g.iter().all(|&x| x == 0),
            CoeffMonomial::Unit => true,
        }
    }

    /// Product of two monomials of the same engine.
    ///
    /// Panics if the engines differ; callers check engines first.
    pub fn mul(&self, other: &CoeffMonomial) -> CoeffMonomial {
        match (self, other) {
            (&CoeffMonomial::Toeplitz { m, n }, &CoeffMonomial::Toeplitz { m: p, n: q }) => {
                if p >= n {
                    CoeffMonomial::Toeplitz { m: m + p - n, n: q }
                } else {
                    CoeffMonomial::Toeplitz { m, n: q + n - p }
                }
            }
            (CoeffMonomial::Laurent(g), CoeffMonomial::Laurent(h)) => {
                assert_eq!(g.len(), h.len(), "Laurent dimension mismatch");
                CoeffMonomial::Laurent(g.iter().zip(h).map(|(a, b)| a + b).collect())
            }
            (CoeffMonomial::Unit, CoeffMonomial::Unit) => CoeffMonomial::Unit,
            _ => panic!("monomial engine mismatch: {self:?} * {other:?}"),
        }
    }

    pub fn adjoint(&self) -> CoeffMonomial {
        match self {
            &CoeffMonomial::Toeplitz { m, n } => CoeffMonomial::Toeplitz { m: n, n: m },
            CoeffMonomial::Laurent(g) => CoeffMonomial::Laurent(g.iter().map(|x| -x).collect()),
            CoeffMonomial::Unit => CoeffMonomial::Unit,
        }
    }

    fn write_factors(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            Ok(())
        };
        match self {
            &CoeffMonomial::Toeplitz { m, n } => {
                if m > 0 {
                    sep(f)?;
                    write!(f, "S^{m}")?;
                }
                if n > 0 {
                    sep(f)?;
                    write!(f, "S*^{n}")?;
                }
            }
            CoeffMonomial::Laurent(g) => {
                for (i, &x) in g.iter().enumerate() {
                    if x != 0 {
                        sep(f)?;
                        if g.len() == 1 {
                            write!(f, "z^{x}")?;
                        } else {
                            write!(f, "z{}^{x}", i + 1)?;
                        }
                    }
                }
            }
            CoeffMonomial::Unit => {}
        }
        Ok(())
    }
}

/// Finite linear combination of monomials of one engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientElement {
    engine: Engine,
    terms: BTreeMap<CoeffMonomial, Complex64>,
}

fn is_zero(c: Complex64) -> bool {
    c.re == 0.0 && c.im == 0.0
}

impl CoefficientElement {
    pub fn zero(engine: Engine) -> Self {
        CoefficientElement {
            engine,
            terms: BTreeMap::new(),
        }
    }

    pub fn unit(engine: Engine) -> Self {
        Self::scalar(engine, Complex64::new(1.0, 0.0))
    }

    pub fn scalar(engine: Engine, c: Complex64) -> Self {
        Self::monomial(engine, CoeffMonomial::unit(engine), c)
    }

    /// `c · mono`; panics if `mono` is foreign to `engine`.
    pub fn monomial(engine: Engine, mono: CoeffMonomial, c: Complex64) -> Self {
        assert!(mono.belongs_to(engine), "monomial {mono:?} foreign to {engine}");
        let mut terms = BTreeMap::new();
        if !is_zero(c) {
            terms.insert(mono, c);
        }
        CoefficientElement { engine, terms }
    }

    pub fn try_monomial(engine: Engine, mono: CoeffMonomial, c: Complex64) -> Result<Self, CoeffError> {
        if !mono.belongs_to(engine) {
            return Err(CoeffError::ForeignMonomial { engine, monomial: mono });
        }
        Ok(Self::monomial(engine, mono, c))
    }

    pub fn toeplitz(m: u64, n: u64) -> Self {
        Self::monomial(Engine::Toeplitz, CoeffMonomial::Toeplitz { m, n }, Complex64::new(1.0, 0.0))
    }

    pub fn laurent(gamma: &[i64]) -> Self {
        Self::monomial(
            Engine::Laurent { dim: gamma.len() },
            CoeffMonomial::Laurent(gamma.to_vec()),
            Complex64::new(1.0, 0.0),
        )
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&CoeffMonomial, Complex64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coefficient(&self, mono: &CoeffMonomial) -> Complex64 {
        self.terms.get(mono).copied().unwrap_or_default()
    }

    /// `Σ |coefficients|`; dominates the C*-norm since every monomial has norm ≤ 1.
    pub fn one_norm(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    pub fn add_term(&mut self, mono: CoeffMonomial, c: Complex64) {
        debug_assert!(mono.belongs_to(self.engine));
        if is_zero(c) {
            return;
        }
        match self.terms.entry(mono) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = *o.get() + c;
                if is_zero(sum) {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add_assign_scaled(&mut self, other: &CoefficientElement, c: Complex64) {
        assert_eq!(self.engine, other.engine, "engine mismatch in addition");
        for (m, &v) in &other.terms {
            self.add_term(m.clone(), v * c);
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero(self.engine);
        out.add_assign_scaled(self, c);
        out
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, CoeffError> {
        if self.engine != other.engine {
            return Err(CoeffError::EngineMismatch(self.engine, other.engine));
        }
        let mut out = self.clone();
        out.add_assign_scaled(other, Complex64::new(1.0, 0.0));
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, CoeffError> {
        if self.engine != other.engine {
            return Err(CoeffError::EngineMismatch(self.engine, other.engine));
        }
        let mut out = Self::zero(self.engine);
        for (a, &x) in &self.terms {
            for (b, &y) in &other.terms {
                out.add_term(a.mul(b), x * y);
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.engine);
        for (m, c) in &self.terms {
            out.add_term(m.adjoint(), c.conj());
        }
        out
    }

    /// Largest coefficient-wise modulus of `self - other`.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for (m, &c) in &self.terms {
            d = d.max((c - other.coefficient(m)).norm());
        }
        for (m, &c) in &other.terms {
            if !self.terms.contains_key(m) {
                d = d.max(c.norm());
            }
        }
        d
    }
}

impl Add for &CoefficientElement {
    type Output = CoefficientElement;
    fn add(self, rhs: &CoefficientElement) -> CoefficientElement {
        self.checked_add(rhs).expect("engine mismatch")
    }
}

impl Sub for &CoefficientElement {
    type Output = CoefficientElement;
    fn sub(self, rhs: &CoefficientElement) -> CoefficientElement {
        assert_eq!(self.engine, rhs.engine, "engine mismatch");
        let mut out = self.clone();
        out.add_assign_scaled(rhs, Complex64::new(-1.0, 0.0));
        out
    }
}

impl Neg for &CoefficientElement {
    type Output = CoefficientElement;
    fn neg(self) -> CoefficientElement {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

impl Mul for &CoefficientElement {
    type Output = CoefficientElement;
    fn mul(self, rhs: &CoefficientElement) -> CoefficientElement {
        self.checked_mul(rhs).expect("engine mismatch")
    }
}

/// Writes a complex number as `(re+imi)` using shortest round-trip digits.
pub fn write_complex(f: &mut impl fmt::Write, c: Complex64) -> fmt::Result {
    // Adding 0.0 folds negative zero into zero.
    let re = c.re + 0.0;
    if c.im < 0.0 {
        write!(f, "({}-{}i)", re, -c.im)
    } else {
        write!(f, "({}+{}i)", re, c.im + 0.0)
    }
}

impl fmt::Display for CoefficientElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (m, &c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write_complex(f, c)?;
            if !m.is_unit() {
                f.write_str(" ")?;
                m.write_factors(f)?;
            }
        }
        Ok(())
    }
}

/// Moment data of a state on the coefficient algebra.
///
/// On Toeplitz and Laurent engines every rule except `VectorState` is pulled
/// back from a probability measure on the torus, so `τ(S^m S*^n) = c(m - n)`
/// and `τ(z^γ) = ĉ(γ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Moments {
    Haar,
    /// Evaluation at `e^{iθ}` (one angle per torus coordinate).
    PointMass { theta: Vec<f64> },
    /// Poisson kernel: `c(γ) = r^{|γ|_1}`.
    Poisson { radius: f64 },
    /// Explicit one-dimensional moment table, zero outside the listed keys.
    Table { values: BTreeMap<i64, Complex64> },
    Mixture { components: Vec<(f64, Moments)> },
    /// Vector state `⟨x e_k, e_k⟩` on the Toeplitz algebra; not tracial.
    VectorState { index: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    engine: Engine,
    moments: Moments,
}

pub const DEFAULT_PD_WINDOW: usize = 8;

impl TraceSpec {
    pub fn new(engine: Engine, moments: Moments) -> Result<Self, CoeffError> {
        Self::with_window(engine, moments, DEFAULT_PD_WINDOW)
    }

    pub fn with_window(engine: Engine, moments: Moments, window: usize) -> Result<Self, CoeffError> {
        let spec = TraceSpec { engine, moments };
        spec.check_shape(&spec.moments)?;
        spec.check_positive(window)?;
        Ok(spec)
    }

    pub fn haar(engine: Engine) -> Self {
        TraceSpec {
            engine,
            moments: Moments::Haar,
        }
    }

    pub fn point_mass(engine: Engine, theta: Vec<f64>) -> Result<Self, CoeffError> {
        Self::new(engine, Moments::PointMass { theta })
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn moments(&self) -> &Moments {
        &self.moments
    }

    pub fn is_tracial(&self) -> bool {
        fn tracial(m: &Moments) -> bool {
            match m {
                Moments::VectorState { .. } => false,
                Moments::Mixture { components } => components.iter().all(|(_, c)| tracial(c)),
                _ => true,
            }
        }
        tracial(&self.moments)
    }

    fn check_shape(&self, m: &Moments) -> Result<(), CoeffError> {
        let bad = |msg: String| Err(CoeffError::InvalidMoments(msg));
        match m {
            Moments::Haar => Ok(()),
            Moments::PointMass { theta } => {
                let want = match self.engine {
                    Engine::Toeplitz => 1,
                    Engine::Laurent { dim } => dim,
                    Engine::Scalar => theta.len(),
                };
                if theta.len() != want {
                    return bad(format!("point mass needs {want} angle(s), got {}", theta.len()));
                }
                if theta.iter().any(|t| !t.is_finite()) {
                    return bad("non-finite angle".into());
                }
                Ok(())
            }
            Moments::Poisson { radius } => {
                if !(0.0..=1.0).contains(radius) {
                    return bad(format!("Poisson radius {radius} outside [0, 1]"));
                }
                Ok(())
            }
            Moments::Table { values } => {
                match self.engine {
                    Engine::Toeplitz | Engine::Laurent { dim: 1 } => {}
                    e => return bad(format!("moment tables need a one-dimensional engine, got {e}")),
                }
                let c0 = values.get(&0).copied().unwrap_or_default();
                if (c0 - Complex64::new(1.0, 0.0)).norm() > 1e-12 {
                    return bad(format!("c(0) = {c0}, expected 1"));
                }
                for (&k, &v) in values {
                    let mirror = values.get(&-k).copied().unwrap_or_default();
                    if (mirror - v.conj()).norm() > 1e-12 {
                        return bad(format!("c({}) is not the conjugate of c({k})", -k));
                    }
                }
                Ok(())
            }
            Moments::Mixture { components } => {
                if components.is_empty() {
                    return bad("empty mixture".into());
                }
                let mut total = 0.0;
                for (w, c) in components {
                    if !(*w >= 0.0) {
                        return bad(format!("negative mixture weight {w}"));
                    }
                    total += w;
                    self.check_shape(c)?;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture weights sum to {total}"));
                }
                Ok(())
            }
            Moments::VectorState { .. } => {
                if self.engine != Engine::Toeplitz {
                    return bad("vector states exist only on the Toeplitz engine".into());
                }
                Ok(())
            }
        }
    }

    /// Positive semidefiniteness of the moment matrix `[c(γ_i - γ_j)]` over a
    /// window of lattice points.
    fn check_positive(&self, window: usize) -> Result<(), CoeffError> {
        if !self.is_tracial() || window == 0 {
            return Ok(());
        }
        let points: Vec<Vec<i64>> = match self.engine {
            Engine::Scalar => return Ok(()),
            Engine::Toeplitz => (0..window as i64).map(|k| vec![k]).collect(),
            Engine::Laurent { dim } => {
                let cap = if dim == 1 { window } else { window * window };
                let mut side = 1usize;
                while (side + 1).checked_pow(dim as u32).is_some_and(|n| n <= cap) {
                    side += 1;
                }
                let mut pts = vec![Vec::new()];
                for _ in 0..dim {
                    pts = pts
                        .into_iter()
                        .flat_map(|p| {
                            (0..side as i64).map(move |k| {
                                let mut q = p.clone();
                                q.push(k);
                                q
                            })
                        })
                        .collect();
                }
                pts
            }
        };
        let n = points.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            let diff: Vec<i64> = points[i].iter().zip(&points[j]).map(|(a, b)| a - b).collect();
            self.torus_moment(&self.moments, &diff)
        });
        let eig = gram.symmetric_eigenvalues();
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-9 {
            return Err(CoeffError::NotPositive(min, n));
        }
        Ok(())
    }

    fn torus_moment(&self, m: &Moments, gamma: &[i64]) -> Complex64 {
        match m {
            Moments::Haar => {
                if gamma.iter().all(|&x| x == 0) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::default()
                }
            }
            Moments::PointMass { theta } => {
                let phase: f64 = gamma.iter().zip(theta).map(|(&g, &t)| g as f64 * t).sum();
                Complex64::from_polar(1.0, phase)
            }
            Moments::Poisson { radius } => {
                let l1: i64 = gamma.iter().map(|x| x.abs()).sum();
                Complex64::new(radius.powi(l1 as i32), 0.0)
            }
            Moments::Table { values } => values.get(&gamma[0]).copied().unwrap_or_default(),
            Moments::Mixture { components } => components
                .iter()
                .map(|(w, c)| self.torus_moment(c, gamma) * *w)
                .sum(),
            Moments::VectorState { .. } => unreachable!("vector states are not torus moments"),
        }
    }

    fn monomial_moment(&self, m: &Moments, mono: &CoeffMonomial) -> Complex64 {
        match (mono, m) {
            (CoeffMonomial::Unit, _) => Complex64::new(1.0, 0.0),
            (&CoeffMonomial::Toeplitz { m: a, n: b }, Moments::VectorState { index }) => {
                if a == b && b <= *index {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::default()
                }
            }
            (CoeffMonomial::Toeplitz { .. }, Moments::Mixture { components }) => components
                .iter()
                .map(|(w, c)| self.monomial_moment(c, mono) * *w)
                .sum(),
            (&CoeffMonomial::Toeplitz { m: a, n: b }, rule) => self.torus_moment(rule, &[a as i64 - b as i64]),
            (CoeffMonomial::Laurent(g), rule) => self.torus_moment(rule, g),
        }
    }

    pub fn eval_monomial(&self, mono: &CoeffMonomial) -> Complex64 {
        self.monomial_moment(&self.moments, mono)
    }

    /// `τ(a)`.
    pub fn eval(&self, a: &CoefficientElement) -> Result<Complex64, CoeffError> {
        if a.engine() != self.engine {
            return Err(CoeffError::EngineMismatch(self.engine, a.engine()));
        }
        Ok(a.terms().map(|(m, c)| c * self.eval_monomial(m)).sum())
    }
}

pub fn trace_eval(tau: &TraceSpec, a: &CoefficientElement) -> Result<Complex64, CoeffError> {
    tau.eval(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn t(m: u64, n: u64) -> CoefficientElement {
        CoefficientElement::toeplitz(m, n)
    }

    #[test]
    fn toeplitz_products() {
        assert_eq!(&t(1, 0) * &t(0, 1), t(1, 1));
        assert_eq!(&t(0, 1) * &t(1, 0), CoefficientElement::unit(Engine::Toeplitz));
        assert_eq!(&t(2, 3) * &t(5, 1), t(4, 1));
        assert_eq!(&t(2, 3) * &t(1, 4), t(2, 6));
        let z = &CoefficientElement::laurent(&[2]) * &CoefficientElement::laurent(&[-3]);
        assert_eq!(z, CoefficientElement::laurent(&[-1]));
        assert!(t(1, 0).checked_mul(&CoefficientElement::laurent(&[1])).is_err());
    }

    #[test]
    fn adjoints() {
        assert_eq!(t(2, 1).adjoint(), t(1, 2));
        let iz3 = CoefficientElement::laurent(&[3]).scale(c(0.0, 1.0));
        assert_eq!(iz3.adjoint(), CoefficientElement::laurent(&[-3]).scale(c(0.0, -1.0)));
        let s = CoefficientElement::scalar(Engine::Scalar, c(2.0, 3.0));
        assert_eq!(s.adjoint(), CoefficientElement::scalar(Engine::Scalar, c(2.0, -3.0)));
    }

    #[test]
    fn no_zero_coefficients() {
        let a = &t(1, 0) - &t(1, 0);
        assert!(a.is_zero());
        assert_eq!(a.to_string(), "0");
        assert!(t(1, 0).scale(c(0.0, 0.0)).is_zero());
    }

    #[test]
    fn haar_and_point_mass_moments() {
        let haar = TraceSpec::haar(Engine::Toeplitz);
        let pm = TraceSpec::point_mass(Engine::Toeplitz, vec![0.0]).unwrap();
        // Oracle: average of z^{m-n} over equally spaced points of the circle.
        let n_pts = 64;
        for m in 0..5u64 {
            for n in 0..5u64 {
                let k = m as f64 - n as f64;
                let avg: Complex64 = (0..n_pts)
                    .map(|j| Complex64::from_polar(1.0, k * 2.0 * std::f64::consts::PI * j as f64 / n_pts as f64))
                    .sum::<Complex64>()
                    / n_pts as f64;
                assert!((haar.eval(&t(m, n)).unwrap() - avg).norm() < 1e-12);
                assert_eq!(pm.eval(&t(m, n)).unwrap(), c(1.0, 0.0));
            }
        }
        let s = TraceSpec::haar(Engine::Scalar);
        assert_eq!(s.eval(&CoefficientElement::scalar(Engine::Scalar, c(2.0, 3.0))).unwrap(), c(2.0, 3.0));
        assert!(haar.eval(&CoefficientElement::laurent(&[1])).is_err());
    }

    #[test]
    fn moment_validation() {
        let mut bad = BTreeMap::new();
        bad.insert(0, c(1.0, 0.0));
        bad.insert(1, c(2.0, 0.0));
        bad.insert(-1, c(2.0, 0.0));
        assert!(matches!(
            TraceSpec::new(Engine::Toeplitz, Moments::Table { values: bad }),
            Err(CoeffError::NotPositive(..))
        ));
        let mut herm = BTreeMap::new();
        herm.insert(0, c(1.0, 0.0));
        herm.insert(1, c(0.0, 0.5));
        assert!(matches!(
            TraceSpec::new(Engine::Toeplitz, Moments::Table { values: herm }),
            Err(CoeffError::InvalidMoments(_))
        ));
        let mut fejer = BTreeMap::new();
        fejer.insert(0, c(1.0, 0.0));
        fejer.insert(1, c(0.5, 0.0));
        fejer.insert(-1, c(0.5, 0.0));
        TraceSpec::new(Engine::Toeplitz, Moments::Table { values: fejer }).unwrap();
        assert!(TraceSpec::new(Engine::Toeplitz, Moments::Poisson { radius: 1.5 }).is_err());
        let mix = Moments::Mixture {
            components: vec![(0.25, Moments::Haar), (0.75, Moments::PointMass { theta: vec![1.0] })],
        };
        TraceSpec::new(Engine::Toeplitz, mix).unwrap();
        let neg = Moments::Mixture {
            components: vec![(-0.5, Moments::Haar), (1.5, Moments::PointMass { theta: vec![1.0] })],
        };
        assert!(TraceSpec::new(Engine::Toeplitz, neg).is_err());
        TraceSpec::new(Engine::Laurent { dim: 2 }, Moments::PointMass { theta: vec![0.3, 1.1] }).unwrap();
        assert!(TraceSpec::new(Engine::Laurent { dim: 2 }, Moments::VectorState { index: 0 }).is_err());
    }

    #[test]
    fn vector_state_is_not_tracial() {
        let v = TraceSpec::new(Engine::Toeplitz, Moments::VectorState { index: 0 }).unwrap();
        assert!(!v.is_tracial());
        // S*S = 1 but SS* kills e_0.
        assert_eq!(v.eval(&(&t(0, 1) * &t(1, 0))).unwrap(), c(1.0, 0.0));
        assert_eq!(v.eval(&(&t(1, 0) * &t(0, 1))).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn display() {
        let a = &t(2, 1).scale(c(1.5, -2.0)) + &CoefficientElement::unit(Engine::Toeplitz);
        assert_eq!(a.to_string(), "(1+0i) + (1.5-2i) S^2 S*^1");
        let z = CoefficientElement::monomial(Engine::Laurent { dim: 2 }, CoeffMonomial::Laurent(vec![2, -1]), c(1.0, 0.0));
        assert_eq!(z.to_string(), "(1+0i) z1^2 z2^-1");
    }

    fn toeplitz_element() -> impl Strategy<Value = CoefficientElement> {
        prop::collection::vec((0u64..4, 0u64..4, -3i32..4, -3i32..4), 1..5).prop_map(|v| {
            let mut e = CoefficientElement::zero(Engine::Toeplitz);
            for (m, n, re, im) in v {
                e.add_term(CoeffMonomial::Toeplitz { m, n }, c(re as f64, im as f64));
            }
            e
        })
    }

    fn laurent_element() -> impl Strategy<Value = CoefficientElement> {
        prop::collection::vec((-3i64..4, -3i64..4, -3i32..4, -3i32..4), 1..5).prop_map(|v| {
            let mut e = CoefficientElement::zero(Engine::Laurent { dim: 2 });
            for (a, b, re, im) in v {
                e.add_term(CoeffMonomial::Laurent(vec![a, b]), c(re as f64, im as f64));
            }
            e
        })
    }

    fn toeplitz_traces() -> Vec<TraceSpec> {
        vec![
            TraceSpec::haar(Engine::Toeplitz),
            TraceSpec::point_mass(Engine::Toeplitz, vec![0.0]).unwrap(),
            TraceSpec::point_mass(Engine::Toeplitz, vec![0.7]).unwrap(),
            TraceSpec::new(Engine::Toeplitz, Moments::Poisson { radius: 0.5 }).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn toeplitz_mul_associative_and_unital(a in toeplitz_element(), b in toeplitz_element(), d in toeplitz_element()) {
            prop_assert_eq!(&(&a * &b) * &d, &a * &(&b * &d));
            let one = CoefficientElement::unit(Engine::Toeplitz);
            prop_assert_eq!(&a * &one, a.clone());
            prop_assert_eq!(&one * &a, a);
        }

        #[test]
        fn laurent_mul_associative(a in laurent_element(), b in laurent_element(), d in laurent_element()) {
            prop_assert_eq!(&(&a * &b) * &d, &a * &(&b * &d));
        }

        #[test]
        fn adjoint_reverses_products(a in toeplitz_element(), b in toeplitz_element()) {
            prop_assert_eq!((&a * &b).adjoint(), &b.adjoint() * &a.adjoint());
            prop_assert_eq!(a.adjoint().adjoint(), a);
        }

        #[test]
        fn toeplitz_traces_are_tracial(m in 0u64..6, n in 0u64..6, p in 0u64..6, q in 0u64..6) {
            let x = t(m, n);
            let y = t(p, q);
            for tau in toeplitz_traces() {
                let lhs = tau.eval(&(&x * &y)).unwrap();
                let rhs = tau.eval(&(&y * &x)).unwrap();
                prop_assert!((lhs - rhs).norm() < 1e-12);
            }
        }

        #[test]
        fn traces_are_positive(a in toeplitz_element(), b in laurent_element()) {
            for tau in toeplitz_traces() {
                let v = tau.eval(&(&a.adjoint() * &a)).unwrap();
                prop_assert!(v.re >= -1e-12 && v.im.abs() < 1e-12 * (1.0 + v.re.abs()));
            }
            let tau = TraceSpec::point_mass(Engine::Laurent { dim: 2 }, vec![0.4, -1.3]).unwrap();
            let v = tau.eval(&(&b.adjoint() * &b)).unwrap();
            prop_assert!(v.re >= -1e-12 && v.im.abs() < 1e-10);
        }
    }
}
