//! Normal forms in the Nica-Toeplitz algebra.
//!
//! Every element is stored as a finite sum of basis terms
//! `i_s(1^s_j) i_e(c) i_r(1^r_k)^*`, keyed by `(s, j, r, k)` with coefficient
//! `c` in the coefficient algebra. A general monomial `i_s(ξ) i_r(η)^*`
//! expands into such terms by sesquilinearity, so two elements are equal
//! exactly when their maps agree.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeff::{write_complex, CoefficientElement, Engine};
use crate::product_system::{ModuleVector, ProductSystem, SystemError};
use crate::semigroup::{ScalingHomomorphism, SemigroupElement, SemigroupError, SemigroupKind};

pub const DEFAULT_TERM_BUDGET: usize = 1_000_000;

/// Products with at least this many term pairs are split across threads.
const PARALLEL_PAIRS: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NtError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("term budget exceeded: product needs more than {budget} terms")]
    BudgetExceeded { budget: usize },
    #[error("element is not in the core: term {0} has degree ({1}, {2})")]
    NonCore(String, SemigroupElement, SemigroupElement),
    #[error("elements belong to different systems")]
    Mismatch,
}

impl From<SemigroupError> for NtError {
    fn from(e: SemigroupError) -> Self {
        NtError::System(e.into())
    }
}

/// `(s, j, r, k)` labelling `i_s(1^s_j) · i_r(1^r_k)^*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermKey {
    pub left: SemigroupElement,
    pub left_index: usize,
    pub right: SemigroupElement,
    pub right_index: usize,
}

impl TermKey {
    pub fn is_diagonal(&self) -> bool {
        self.left == self.right
    }

    fn adjoint(&self) -> TermKey {
        TermKey {
            left: self.right,
            left_index: self.right_index,
            right: self.left,
            right_index: self.left_index,
        }
    }
}

/// The spanning monomial `i_s(ξ) i_r(η)^*`.
#[derive(Clone, Debug, PartialEq)]
pub struct NtMonomial {
    pub left: ModuleVector,
    pub right: ModuleVector,
}

impl NtMonomial {
    pub fn degree(&self) -> (SemigroupElement, SemigroupElement) {
        (self.left.fiber(), self.right.fiber())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtElement {
    engine: Engine,
    kind: SemigroupKind,
    terms: BTreeMap<TermKey, CoefficientElement>,
}

impl NtElement {
    pub fn zero(engine: Engine, kind: SemigroupKind) -> Self {
        NtElement {
            engine,
            kind,
            terms: BTreeMap::new(),
        }
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn semigroup(&self) -> SemigroupKind {
        self.kind
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

    pub fn terms(&self) -> impl Iterator<Item = (&TermKey, &CoefficientElement)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, key: &TermKey) -> Option<&CoefficientElement> {
        self.terms.get(key)
    }

    pub fn add_term(&mut self, key: TermKey, c: &CoefficientElement, scale: Complex64) {
        debug_assert_eq!(c.engine(), self.engine);
        let slot = self
            .terms
            .entry(key)
            .or_insert_with(|| CoefficientElement::zero(c.engine()));
        slot.add_assign_scaled(c, scale);
        if slot.is_zero() {
            self.terms.remove(&key);
        }
    }

    fn check_same(&self, other: &Self) -> Result<(), NtError> {
        if self.engine != other.engine || self.kind != other.kind {
            return Err(NtError::Mismatch);
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, NtError> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(*k, c, Complex64::new(1.0, 0.0));
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, NtError> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(*k, c, Complex64::new(-1.0, 0.0));
        }
        Ok(out)
    }

    pub fn scale(&self, z: Complex64) -> Self {
        let mut out = Self::zero(self.engine, self.kind);
        for (k, c) in &self.terms {
            out.add_term(*k, c, z);
        }
        out
    }

    /// `(i_s(ξ) i_r(η)^*)^* = i_r(η) i_s(ξ)^*`.
    pub fn adjoint(&self) -> Self {
        let terms = self.terms.iter().map(|(k, c)| (k.adjoint(), c.adjoint())).collect();
        NtElement {
            engine: self.engine,
            kind: self.kind,
            terms,
        }
    }

    /// `Φ^δ`: keeps the terms of degree `(s, s)`.
    pub fn cond_expectation(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(k, _)| k.is_diagonal())
            .map(|(k, c)| (*k, c.clone()))
            .collect();
        NtElement {
            engine: self.engine,
            kind: self.kind,
            terms,
        }
    }

    pub fn is_core(&self) -> bool {
        self.terms.keys().all(|k| k.is_diagonal())
    }

    pub fn require_core(&self) -> Result<(), NtError> {
        match self.terms.iter().find(|(k, _)| !k.is_diagonal()) {
            None => Ok(()),
            Some((k, c)) => Err(NtError::NonCore(
                format_term(k, c),
                k.left,
                k.right,
            )),
        }
    }

    /// Distinct gauge degrees `(s, r)` present.
    pub fn degrees(&self) -> Vec<(SemigroupElement, SemigroupElement)> {
        let mut d: Vec<_> = self.terms.keys().map(|k| (k.left, k.right)).collect();
        d.sort();
        d.dedup();
        d
    }

    /// The basis terms as spanning monomials `i_s(1_j · c) i_r(1_k)^*`.
    pub fn monomials(&self, system: &ProductSystem) -> Result<Vec<NtMonomial>, NtError> {
        self.terms
            .iter()
            .map(|(k, c)| {
                Ok(NtMonomial {
                    left: system.basis_vector_with(k.left, k.left_index, c.clone())?,
                    right: system.basis_vector(k.right, k.right_index)?,
                })
            })
            .collect()
    }

    /// Largest coefficient-wise difference.
    pub fn distance(&self, other: &Self) -> f64 {
        let zero = CoefficientElement::zero(self.engine);
        let mut d: f64 = 0.0;
        for (k, c) in &self.terms {
            d = d.max(c.distance(other.terms.get(k).unwrap_or(&zero)));
        }
        for (k, c) in &other.terms {
            if !self.terms.contains_key(k) {
                d = d.max(c.distance(&zero));
            }
        }
        d
    }

    /// Analytic continuation of the dynamics: multiplies the degree-`(s, r)`
    /// part by `(N(s)/N(r))^{iz}`. Core elements are returned unchanged.
    pub fn apply_dynamics(&self, z: Complex64, scaling: &ScalingHomomorphism) -> Self {
        if self.is_core() {
            return self.clone();
        }
        let mut out = Self::zero(self.engine, self.kind);
        for (k, c) in &self.terms {
            if k.is_diagonal() {
                out.add_term(*k, c, Complex64::new(1.0, 0.0));
            } else {
                let log_ratio = scaling.ln_value(k.left) - scaling.ln_value(k.right);
                let factor = (Complex64::i() * z * log_ratio).exp();
                out.add_term(*k, c, factor);
            }
        }
        out
    }
}

fn format_term(k: &TermKey, c: &CoefficientElement) -> String {
    let mut s = String::new();
    let _ = write_term(&mut s, k, c);
    s
}

fn write_term(f: &mut impl fmt::Write, k: &TermKey, c: &CoefficientElement) -> fmt::Result {
    write!(f, "i[{}](", k.left)?;
    if c.len() == 1 {
        write!(f, "{c}")?;
    } else {
        write!(f, "({c})")?;
    }
    write!(f, "@{}) * adj(i[{}](1@{}))", k.left_index, k.right, k.right_index)
}

/// Canonical text form, readable by the expression parser.
impl fmt::Display for NtElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (k, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write_term(f, k, c)?;
        }
        Ok(())
    }
}

/// Writes a scalar prefix in the same style as coefficient literals.
pub fn format_scalar(z: Complex64) -> String {
    let mut s = String::new();
    let _ = write_complex(&mut s, z);
    s
}

/// Arithmetic context: a product system plus a term budget.
#[derive(Clone, Debug)]
pub struct NicaToeplitz {
    system: ProductSystem,
    budget: usize,
}

impl NicaToeplitz {
    pub fn new(system: ProductSystem) -> Self {
        NicaToeplitz {
            system,
            budget: DEFAULT_TERM_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn system(&self) -> &ProductSystem {
        &self.system
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn zero(&self) -> NtElement {
        NtElement::zero(self.system.engine(), self.system.semigroup())
    }

    fn check(&self, x: &NtElement) -> Result<(), NtError> {
        if x.engine != self.system.engine() || x.kind != self.system.semigroup() {
            return Err(NtError::Mismatch);
        }
        Ok(())
    }

    fn check_index(&self, s: SemigroupElement, j: usize) -> Result<(), NtError> {
        let n = self.system.basis_count(s)?;
        if j >= n {
            return Err(SystemError::IndexOutOfRange {
                fiber: s,
                index: j,
                count: n,
            }
            .into());
        }
        Ok(())
    }

    /// `i_s(1^s_j) i_e(c) i_r(1^r_k)^*`.
    pub fn term(
        &self,
        s: SemigroupElement,
        j: usize,
        r: SemigroupElement,
        k: usize,
        c: CoefficientElement,
    ) -> Result<NtElement, NtError> {
        self.check_index(s, j)?;
        self.check_index(r, k)?;
        if c.engine() != self.system.engine() {
            return Err(SystemError::from(crate::coeff::CoeffError::EngineMismatch(c.engine(), self.system.engine())).into());
        }
        let mut out = self.zero();
        out.add_term(
            TermKey {
                left: s,
                left_index: j,
                right: r,
                right_index: k,
            },
            &c,
            Complex64::new(1.0, 0.0),
        );
        Ok(out)
    }

    /// `i_s(1^s_j) i_r(1^r_k)^*`.
    pub fn basis_term(&self, s: SemigroupElement, j: usize, r: SemigroupElement, k: usize) -> Result<NtElement, NtError> {
        self.term(s, j, r, k, CoefficientElement::unit(self.system.engine()))
    }

    pub fn unit(&self) -> NtElement {
        let e = self.system.identity();
        self.basis_term(e, 0, e, 0).expect("identity fiber has one basis vector")
    }

    /// `i_e(a)`.
    pub fn embed_coefficient(&self, a: CoefficientElement) -> Result<NtElement, NtError> {
        let e = self.system.identity();
        self.term(e, 0, e, 0, a)
    }

    /// `i_s(ξ)`.
    pub fn embed(&self, xi: &ModuleVector) -> Result<NtElement, NtError> {
        let e = self.system.identity();
        let mut out = self.zero();
        for (j, a) in xi.coords().iter().enumerate() {
            out.add_term(
                TermKey {
                    left: xi.fiber(),
                    left_index: j,
                    right: e,
                    right_index: 0,
                },
                a,
                Complex64::new(1.0, 0.0),
            );
        }
        Ok(out)
    }

    /// `i_s(ξ) i_r(η)^* = Σ_{j,k} i_s(1_j) i_e(a_j b_k^*) i_r(1_k)^*`.
    pub fn from_monomial(&self, mono: &NtMonomial) -> Result<NtElement, NtError> {
        let mut out = self.zero();
        for (j, a) in mono.left.coords().iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (k, b) in mono.right.coords().iter().enumerate() {
                if b.is_zero() {
                    continue;
                }
                let c = a.checked_mul(&b.adjoint()).map_err(SystemError::from)?;
                out.add_term(
                    TermKey {
                        left: mono.left.fiber(),
                        left_index: j,
                        right: mono.right.fiber(),
                        right_index: k,
                    },
                    &c,
                    Complex64::new(1.0, 0.0),
                );
            }
        }
        Ok(out)
    }

    /// Pairs `(a, b)` with `i_r(1^r_k)^* i_g(1^g_l) = Σ i_{g'}(1_a) i_{r'}(1_b)^*`,
    /// where `g' = r^{-1}(r∨g)` and `r' = g^{-1}(r∨g)`.
    fn basis_star_pairs(
        &self,
        r: SemigroupElement,
        k: usize,
        g: SemigroupElement,
        l: usize,
    ) -> Result<(SemigroupElement, SemigroupElement, Vec<(usize, usize)>), NtError> {
        let w = r.lub(g)?;
        let gp = w.quotient(r)?;
        let rp = w.quotient(g)?;
        let n_gp = self.system.basis_count(gp)?;
        let n_rp = self.system.basis_count(rp)?;
        let mut pairs = Vec::new();
        if n_gp <= n_rp {
            for a in 0..n_gp {
                let i = self.system.index_map(r, gp, k, a);
                let (l2, b) = self.system.index_split(g, rp, i);
                if l2 == l {
                    pairs.push((a, b));
                }
            }
        } else {
            for b in 0..n_rp {
                let i = self.system.index_map(g, rp, l, b);
                let (k2, a) = self.system.index_split(r, gp, i);
                if k2 == k {
                    pairs.push((a, b));
                }
            }
        }
        Ok((gp, rp, pairs))
    }

    /// `i_r(η)^* i_g(ζ)` in normal form.
    pub fn star_product(&self, eta: &ModuleVector, zeta: &ModuleVector) -> Result<NtElement, NtError> {
        let x = self.embed(eta)?.adjoint();
        let y = self.embed(zeta)?;
        self.multiply(&x, &y)
    }

    fn term_product(
        &self,
        x: (&TermKey, &CoefficientElement),
        y: (&TermKey, &CoefficientElement),
        out: &mut Vec<(TermKey, CoefficientElement)>,
    ) -> Result<(), NtError> {
        let (kx, c) = x;
        let (ky, d) = y;
        let (gp, rp, pairs) = self.basis_star_pairs(kx.right, kx.right_index, ky.left, ky.left_index)?;
        if pairs.is_empty() {
            return Ok(());
        }
        let left = kx.left.multiply(gp)?;
        let right = ky.right.multiply(rp)?;
        let d_star = d.adjoint();
        for (a, b) in pairs {
            let left_col = self.system.left_action_column(gp, c, a);
            let right_col = self.system.left_action_column(rp, &d_star, b);
            for (nu, x_coef) in &left_col {
                let j = self.system.index_map(kx.left, gp, kx.left_index, *nu);
                for (mu, y_coef) in &right_col {
                    let k = self.system.index_map(ky.right, rp, ky.right_index, *mu);
                    let coef = x_coef.checked_mul(&y_coef.adjoint()).map_err(SystemError::from)?;
                    if coef.is_zero() {
                        continue;
                    }
                    out.push((
                        TermKey {
                            left,
                            left_index: j,
                            right,
                            right_index: k,
                        },
                        coef,
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn multiply(&self, x: &NtElement, y: &NtElement) -> Result<NtElement, NtError> {
        self.check(x)?;
        self.check(y)?;
        let produced = AtomicUsize::new(0);
        let budget = self.budget;
        let x_terms: Vec<_> = x.terms.iter().collect();
        let y_terms: Vec<_> = y.terms.iter().collect();
        let row = |xt: &(&TermKey, &CoefficientElement)| -> Result<Vec<(TermKey, CoefficientElement)>, NtError> {
            let mut out = Vec::new();
            for yt in &y_terms {
                if produced.load(Ordering::Relaxed) > budget {
                    return Err(NtError::BudgetExceeded { budget });
                }
                let before = out.len();
                self.term_product((xt.0, xt.1), (yt.0, yt.1), &mut out)?;
                produced.fetch_add(out.len() - before, Ordering::Relaxed);
            }
            Ok(out)
        };
        let rows: Vec<Result<Vec<_>, NtError>> = if x_terms.len() * y_terms.len() >= PARALLEL_PAIRS && x_terms.len() > 1 {
            x_terms.par_iter().map(row).collect()
        } else {
            x_terms.iter().map(row).collect()
        };
        let mut result = self.zero();
        let mut total = 0usize;
        let mut first_error = None;
        for r in rows {
            match r {
                Ok(v) => {
                    total += v.len();
                    if total > budget {
                        return Err(NtError::BudgetExceeded { budget });
                    }
                    for (k, c) in v {
                        result.add_term(k, &c, Complex64::new(1.0, 0.0));
                    }
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        // A row may abort because other rows pushed the shared count over the
        // budget; the total is then over budget regardless of scheduling.
        if let Some(e) = first_error {
            return Err(match e {
                NtError::BudgetExceeded { .. } => NtError::BudgetExceeded { budget },
                other => other,
            });
        }
        Ok(result)
    }

    pub fn multiply_all(&self, factors: &[&NtElement]) -> Result<NtElement, NtError> {
        let mut acc = self.unit();
        for f in factors {
            acc = self.multiply(&acc, f)?;
        }
        Ok(acc)
    }

    /// `α_s(y) = Σ_j i_s(1^s_j) y i_s(1^s_j)^*` on the core.
    pub fn alpha(&self, s: SemigroupElement, y: &NtElement) -> Result<NtElement, NtError> {
        self.check(y)?;
        y.require_core()?;
        let n = self.system.basis_count(s)?;
        let budget_needed = n.saturating_mul(y.len());
        if budget_needed > self.budget {
            return Err(NtError::BudgetExceeded { budget: self.budget });
        }
        let mut out = self.zero();
        for (k, c) in &y.terms {
            let sr = s.multiply(k.left)?;
            for j in 0..n {
                out.add_term(
                    TermKey {
                        left: sr,
                        left_index: self.system.index_map(s, k.left, j, k.left_index),
                        right: sr,
                        right_index: self.system.index_map(s, k.right, j, k.right_index),
                    },
                    c,
                    Complex64::new(1.0, 0.0),
                );
            }
        }
        Ok(out)
    }

    /// `α_s(y)` through the product formula; used to cross-check `alpha`.
    pub fn alpha_by_products(&self, s: SemigroupElement, y: &NtElement) -> Result<NtElement, NtError> {
        y.require_core()?;
        let e = self.system.identity();
        let mut out = self.zero();
        for j in 0..self.system.basis_count(s)? {
            let v = self.basis_term(s, j, e, 0)?;
            let term = self.multiply(&self.multiply(&v, y)?, &v.adjoint())?;
            out = out.checked_add(&term)?;
        }
        Ok(out)
    }

    /// `xy - yx`.
    pub fn commutator(&self, x: &NtElement, y: &NtElement) -> Result<NtElement, NtError> {
        self.multiply(x, y)?.checked_sub(&self.multiply(y, x)?)
    }
}
