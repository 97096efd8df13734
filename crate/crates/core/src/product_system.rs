//! Finite-type product systems: basis counts, index maps, left-action
//! matrices, module arithmetic in basis coordinates, and structural
//! validation.
//!
//! A fiber `X_s` has orthonormal basis `1^s_0, …, 1^s_{N_s-1}`; a vector is
//! stored by its coordinates `ξ = Σ_j 1^s_j · a_j`. The left action of a
//! monomial `a` is the matrix `L_s(a)_{νj} = ⟨1^s_ν, a · 1^s_j⟩`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeff::{CoeffError, CoeffMonomial, CoefficientElement, Engine};
use crate::semigroup::{
    critical_exponent, gcd, GrowthLaw, ScalingHomomorphism, SemigroupElement, SemigroupError, SemigroupKind,
    TruncationSet,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error("fiber mismatch: {0} vs {1}")]
    FiberMismatch(SemigroupElement, SemigroupElement),
    #[error("basis index {index} out of range for fiber {fiber} (N = {count})")]
    IndexOutOfRange {
        fiber: SemigroupElement,
        index: usize,
        count: usize,
    },
    #[error("fiber {0} is too large to index")]
    FiberTooLarge(SemigroupElement),
    #[error("invalid system parameters: {0}")]
    Parameters(String),
}

/// Which fiber traces `ftr_s(a)` can be nonzero, for `s ≠ e`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceSupport {
    Finite(Vec<SemigroupElement>),
    Unbounded,
}

/// Structural data of a finite-type product system.
///
/// Implementors supply `left_action_entry`; the column and fiber-trace
/// methods have generic defaults that built-in systems override with closed
/// forms. Validation cross-checks the two routes.
pub trait FiniteTypeSystem: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn semigroup(&self) -> SemigroupKind;
    fn engine(&self) -> Engine;
    /// `s ↦ N_s` as a growth law.
    fn basis_growth(&self) -> GrowthLaw;
    fn try_basis_count(&self, s: SemigroupElement) -> Option<usize>;
    /// `𝔪_{s,r}(j, k)`.
    fn index_map(&self, s: SemigroupElement, r: SemigroupElement, j: usize, k: usize) -> usize;
    /// `𝔪_{s,r}^{-1}(i)`.
    fn index_split(&self, s: SemigroupElement, r: SemigroupElement, i: usize) -> (usize, usize);
    /// `L_s(a)_{νj}`.
    fn left_action_entry(&self, s: SemigroupElement, a: &CoeffMonomial, nu: usize, j: usize) -> CoefficientElement;

    fn left_action_column(&self, s: SemigroupElement, a: &CoeffMonomial, j: usize) -> Vec<(usize, CoefficientElement)> {
        let n = self.try_basis_count(s).expect("fiber too large");
        (0..n)
            .map(|nu| (nu, self.left_action_entry(s, a, nu, j)))
            .filter(|(_, e)| !e.is_zero())
            .collect()
    }

    /// `ftr_s(a) = Σ_j L_s(a)_{jj}`.
    fn fiberwise_trace_monomial(&self, s: SemigroupElement, a: &CoeffMonomial) -> CoefficientElement {
        let n = self.try_basis_count(s).expect("fiber too large");
        let mut out = CoefficientElement::zero(self.engine());
        for j in 0..n {
            out.add_assign_scaled(&self.left_action_entry(s, a, j, j), Complex64::new(1.0, 0.0));
        }
        out
    }

    fn trace_support(&self, a: &CoeffMonomial) -> TraceSupport;

    fn default_generators(&self) -> Vec<CoeffMonomial> {
        match self.engine() {
            Engine::Toeplitz => vec![
                CoeffMonomial::Toeplitz { m: 1, n: 0 },
                CoeffMonomial::Toeplitz { m: 0, n: 1 },
            ],
            Engine::Laurent { dim } => (0..dim)
                .flat_map(|i| {
                    [1i64, -1].into_iter().map(move |sign| {
                        let mut g = vec![0; dim];
                        g[i] = sign;
                        CoeffMonomial::Laurent(g)
                    })
                })
                .collect(),
            Engine::Scalar => vec![CoeffMonomial::Unit],
        }
    }
}

fn ceil_div(a: u64, r: u64) -> u64 {
    a.div_ceil(r)
}

/// Transfer operator of `S ↦ S^r` on `𝒯`: `V_r^* x V_r` with `V_r e_n = e_{rn}`.
pub fn toeplitz_transfer(r: u64, m: u64, n: u64) -> Option<CoeffMonomial> {
    if m % r == n % r {
        Some(CoeffMonomial::Toeplitz {
            m: ceil_div(m, r),
            n: ceil_div(n, r),
        })
    } else {
        None
    }
}

fn divisors_above_one(n: u64, kind: SemigroupKind) -> Vec<SemigroupElement> {
    (2..=n)
        .filter(|d| n % d == 0)
        .map(|d| SemigroupElement::new(kind, d).expect("positive"))
        .collect()
}

/// `𝒯` with `S ↦ S^s`: `N_s = s`, `𝔪_{s,r}(j,k) = j + sk`, basis `1^s_j = S^j`.
#[derive(Clone, Copy, Debug, Default)]
pub struct AffineToeplitz;

impl FiniteTypeSystem for AffineToeplitz {
    fn name(&self) -> String {
        "affine-toeplitz".into()
    }

    fn semigroup(&self) -> SemigroupKind {
        SemigroupKind::NatMult
    }

    fn engine(&self) -> Engine {
        Engine::Toeplitz
    }

    fn basis_growth(&self) -> GrowthLaw {
        GrowthLaw::Power { exponent: 1.0 }
    }

    fn try_basis_count(&self, s: SemigroupElement) -> Option<usize> {
        usize::try_from(s.value()).ok()
    }

    fn index_map(&self, s: SemigroupElement, _r: SemigroupElement, j: usize, k: usize) -> usize {
        j + s.value() as usize * k
    }

    fn index_split(&self, s: SemigroupElement, _r: SemigroupElement, i: usize) -> (usize, usize) {
        let s = s.value() as usize;
        (i % s, i / s)
    }

    fn left_action_entry(&self, s: SemigroupElement, a: &CoeffMonomial, nu: usize, j: usize) -> CoefficientElement {
        let x = CoeffMonomial::Toeplitz { m: 0, n: nu as u64 }
            .mul(a)
            .mul(&CoeffMonomial::Toeplitz { m: j as u64, n: 0 });
        let CoeffMonomial::Toeplitz { m, n } = x else {
            panic!("foreign monomial {a:?}")
        };
        match toeplitz_transfer(s.value(), m, n) {
            Some(mono) => CoefficientElement::monomial(Engine::Toeplitz, mono, Complex64::new(1.0, 0.0)),
            None => CoefficientElement::zero(Engine::Toeplitz),
        }
    }

    fn left_action_column(&self, s: SemigroupElement, a: &CoeffMonomial, j: usize) -> Vec<(usize, CoefficientElement)> {
        let &CoeffMonomial::Toeplitz { m, n } = a else {
            panic!("foreign monomial {a:?}")
        };
        let sv = s.value() as i128;
        let nu = (m as i128 - n as i128 + j as i128).rem_euclid(sv) as usize;
        vec![(nu, self.left_action_entry(s, a, nu, j))]
    }

    fn fiberwise_trace_monomial(&self, s: SemigroupElement, a: &CoeffMonomial) -> CoefficientElement {
        let &CoeffMonomial::Toeplitz { m, n } = a else {
            panic!("foreign monomial {a:?}")
        };
        let sv = s.value();
        let mut out = CoefficientElement::zero(Engine::Toeplitz);
        if (m as i128 - n as i128).rem_euclid(sv as i128) != 0 {
            return out;
        }
        // For j ≥ max(m, n) the diagonal entry no longer depends on j.
        let head = sv.min(m.max(n));
        for j in 0..head {
            out.add_assign_scaled(&self.left_action_entry(s, a, j as usize, j as usize), Complex64::new(1.0, 0.0));
        }
        if head < sv {
            let tail = self.left_action_entry(s, a, head as usize, head as usize);
            out.add_assign_scaled(&tail, Complex64::new((sv - head) as f64, 0.0));
        }
        out
    }

    fn trace_support(&self, a: &CoeffMonomial) -> TraceSupport {
        let &CoeffMonomial::Toeplitz { m, n } = a else {
            panic!("foreign monomial {a:?}")
        };
        let d = m.abs_diff(n);
        if d == 0 {
            TraceSupport::Unbounded
        } else {
            TraceSupport::Finite(divisors_above_one(d, SemigroupKind::NatMult))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DilationStyle {
    /// `α_p` multiplies every coordinate by `p`; `N_p = p^d`.
    Diagonal,
    /// `α_p` multiplies the first coordinate only; `N_p = p`.
    FirstAxis,
}

/// `C(𝕋^d)` with `α_p(z^γ) = z^{pγ}` (diagonal) or `z^{(pγ_1, γ_2, …)}`.
#[derive(Clone, Debug)]
pub struct LatticeDilation {
    dim: usize,
    style: DilationStyle,
    label: String,
}

impl LatticeDilation {
    pub fn new(dim: usize, style: DilationStyle) -> Result<Self, SystemError> {
        if dim == 0 {
            return Err(SystemError::Parameters("lattice dimension must be at least 1".into()));
        }
        let style_name = match style {
            DilationStyle::Diagonal => "diagonal",
            DilationStyle::FirstAxis => "first-axis",
        };
        Ok(LatticeDilation {
            dim,
            style,
            label: format!("lattice-dilation(d={dim},{style_name})"),
        })
    }

    /// `A = C(𝕋)` with `z ↦ z^s`.
    pub fn additive_toeplitz() -> Self {
        LatticeDilation {
            dim: 1,
            style: DilationStyle::Diagonal,
            label: "additive-toeplitz".into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn style(&self) -> DilationStyle {
        self.style
    }

    fn scaled_axes(&self) -> usize {
        match self.style {
            DilationStyle::Diagonal => self.dim,
            DilationStyle::FirstAxis => 1,
        }
    }

    /// Coset representative of basis index `j` in fiber `s`, as a lattice point.
    fn digits(&self, s: u64, mut j: usize) -> Vec<i64> {
        let mut g = vec![0i64; self.dim];
        for slot in g.iter_mut().take(self.scaled_axes()) {
            *slot = (j as u64 % s) as i64;
            j /= s as usize;
        }
        g
    }

    fn undigits(&self, s: u64, g: &[i64]) -> usize {
        let mut j = 0usize;
        for &x in g.iter().take(self.scaled_axes()).rev() {
            j = j * s as usize + x as usize;
        }
        j
    }

    fn transfer(&self, s: u64, g: &[i64]) -> Option<Vec<i64>> {
        let k = self.scaled_axes();
        if g.iter().take(k).all(|x| x.rem_euclid(s as i64) == 0) {
            Some(
                g.iter()
                    .enumerate()
                    .map(|(i, &x)| if i < k { x / s as i64 } else { x })
                    .collect(),
            )
        } else {
            None
        }
    }

    fn gamma<'a>(&self, a: &'a CoeffMonomial) -> &'a [i64] {
        match a {
            CoeffMonomial::Laurent(g) if g.len() == self.dim => g,
            _ => panic!("foreign monomial {a:?}"),
        }
    }
}

impl FiniteTypeSystem for LatticeDilation {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn semigroup(&self) -> SemigroupKind {
        SemigroupKind::NatMult
    }

    fn engine(&self) -> Engine {
        Engine::Laurent { dim: self.dim }
    }

    fn basis_growth(&self) -> GrowthLaw {
        GrowthLaw::Power {
            exponent: self.scaled_axes() as f64,
        }
    }

    fn try_basis_count(&self, s: SemigroupElement) -> Option<usize> {
        usize::try_from(s.value()).ok()?.checked_pow(self.scaled_axes() as u32)
    }

    fn index_map(&self, s: SemigroupElement, r: SemigroupElement, j: usize, k: usize) -> usize {
        let (sv, rv) = (s.value(), r.value());
        let gj = self.digits(sv, j);
        let gk = self.digits(rv, k);
        let g: Vec<i64> = gj.iter().zip(&gk).map(|(a, b)| a + sv as i64 * b).collect();
        self.undigits(sv * rv, &g)
    }

    fn index_split(&self, s: SemigroupElement, r: SemigroupElement, i: usize) -> (usize, usize) {
        let sv = s.value();
        let g = self.digits(sv * r.value(), i);
        let gj: Vec<i64> = g.iter().map(|x| x % sv as i64).collect();
        let gk: Vec<i64> = g.iter().map(|x| x / sv as i64).collect();
        (self.undigits(sv, &gj), self.undigits(r.value(), &gk))
    }

    fn left_action_entry(&self, s: SemigroupElement, a: &CoeffMonomial, nu: usize, j: usize) -> CoefficientElement {
        let sv = s.value();
        let g = self.gamma(a);
        let gn = self.digits(sv, nu);
        let gj = self.digits(sv, j);
        let x: Vec<i64> = (0..self.dim).map(|i| g[i] + gj[i] - gn[i]).collect();
        match self.transfer(sv, &x) {
            Some(y) => CoefficientElement::monomial(self.engine(), CoeffMonomial::Laurent(y), Complex64::new(1.0, 0.0)),
            None => CoefficientElement::zero(self.engine()),
        }
    }

    fn left_action_column(&self, s: SemigroupElement, a: &CoeffMonomial, j: usize) -> Vec<(usize, CoefficientElement)> {
        let sv = s.value() as i64;
        let g = self.gamma(a);
        let gj = self.digits(s.value(), j);
        let k = self.scaled_axes();
        let gn: Vec<i64> = (0..self.dim)
            .map(|i| if i < k { (g[i] + gj[i]).rem_euclid(sv) } else { 0 })
            .collect();
        let nu = self.undigits(s.value(), &gn);
        vec![(nu, self.left_action_entry(s, a, nu, j))]
    }

    fn fiberwise_trace_monomial(&self, s: SemigroupElement, a: &CoeffMonomial) -> CoefficientElement {
        // Every diagonal entry equals L_s(z^γ).
        let n = self.try_basis_count(s).expect("fiber too large");
        match self.transfer(s.value(), self.gamma(a)) {
            Some(y) => CoefficientElement::monomial(self.engine(), CoeffMonomial::Laurent(y), Complex64::new(n as f64, 0.0)),
            None => CoefficientElement::zero(self.engine()),
        }
    }

    fn trace_support(&self, a: &CoeffMonomial) -> TraceSupport {
        let g = self.gamma(a);
        let common = g
            .iter()
            .take(self.scaled_axes())
            .fold(0u64, |acc, &x| gcd(acc, x.unsigned_abs()));
        if common == 0 {
            TraceSupport::Unbounded
        } else {
            TraceSupport::Finite(divisors_above_one(common, SemigroupKind::NatMult))
        }
    }
}

/// `A = ℂ` over `(ℕ, +)` with `N_n = k^n` and base-`k` digit concatenation.
#[derive(Clone, Copy, Debug)]
pub struct Cuntz {
    k: u64,
}

impl Cuntz {
    pub fn new(k: u64) -> Result<Self, SystemError> {
        if k < 2 {
            return Err(SystemError::Parameters(format!("cuntz needs k ≥ 2, got {k}")));
        }
        Ok(Cuntz { k })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    fn width(&self, s: SemigroupElement) -> usize {
        self.try_basis_count(s).expect("fiber too large")
    }
}

impl FiniteTypeSystem for Cuntz {
    fn name(&self) -> String {
        format!("cuntz({})", self.k)
    }

    fn semigroup(&self) -> SemigroupKind {
        SemigroupKind::NatAdd
    }

    fn engine(&self) -> Engine {
        Engine::Scalar
    }

    fn basis_growth(&self) -> GrowthLaw {
        GrowthLaw::Exponential { base: self.k as f64 }
    }

    fn try_basis_count(&self, s: SemigroupElement) -> Option<usize> {
        let e = u32::try_from(s.value()).ok()?;
        usize::try_from(self.k).ok()?.checked_pow(e)
    }

    fn index_map(&self, s: SemigroupElement, _r: SemigroupElement, j: usize, i: usize) -> usize {
        j + self.width(s) * i
    }

    fn index_split(&self, s: SemigroupElement, _r: SemigroupElement, i: usize) -> (usize, usize) {
        let w = self.width(s);
        (i % w, i / w)
    }

    fn left_action_entry(&self, _s: SemigroupElement, a: &CoeffMonomial, nu: usize, j: usize) -> CoefficientElement {
        assert_eq!(*a, CoeffMonomial::Unit, "foreign monomial");
        if nu == j {
            CoefficientElement::unit(Engine::Scalar)
        } else {
            CoefficientElement::zero(Engine::Scalar)
        }
    }

    fn left_action_column(&self, s: SemigroupElement, a: &CoeffMonomial, j: usize) -> Vec<(usize, CoefficientElement)> {
        vec![(j, self.left_action_entry(s, a, j, j))]
    }

    fn fiberwise_trace_monomial(&self, s: SemigroupElement, _a: &CoeffMonomial) -> CoefficientElement {
        CoefficientElement::scalar(Engine::Scalar, Complex64::new(self.basis_growth().value(s), 0.0))
    }

    fn trace_support(&self, _a: &CoeffMonomial) -> TraceSupport {
        TraceSupport::Unbounded
    }
}

/// Wraps a system and swaps two output values of one index map `𝔪_{s,r}`.
/// Used to exercise the validator.
#[derive(Clone, Debug)]
pub struct Corrupted {
    inner: Arc<dyn FiniteTypeSystem>,
    s: SemigroupElement,
    r: SemigroupElement,
    swap: (usize, usize),
}

impl Corrupted {
    pub fn new(inner: Arc<dyn FiniteTypeSystem>, s: SemigroupElement, r: SemigroupElement, swap: (usize, usize)) -> Self {
        Corrupted { inner, s, r, swap }
    }

    fn permute(&self, i: usize) -> usize {
        if i == self.swap.0 {
            self.swap.1
        } else if i == self.swap.1 {
            self.swap.0
        } else {
            i
        }
    }
}

impl FiniteTypeSystem for Corrupted {
    fn name(&self) -> String {
        format!("corrupted({})", self.inner.name())
    }

    fn semigroup(&self) -> SemigroupKind {
        self.inner.semigroup()
    }

    fn engine(&self) -> Engine {
        self.inner.engine()
    }

    fn basis_growth(&self) -> GrowthLaw {
        self.inner.basis_growth()
    }

    fn try_basis_count(&self, s: SemigroupElement) -> Option<usize> {
        self.inner.try_basis_count(s)
    }

    fn index_map(&self, s: SemigroupElement, r: SemigroupElement, j: usize, k: usize) -> usize {
        let i = self.inner.index_map(s, r, j, k);
        if (s, r) == (self.s, self.r) {
            self.permute(i)
        } else {
            i
        }
    }

    fn index_split(&self, s: SemigroupElement, r: SemigroupElement, i: usize) -> (usize, usize) {
        let i = if (s, r) == (self.s, self.r) { self.permute(i) } else { i };
        self.inner.index_split(s, r, i)
    }

    fn left_action_entry(&self, s: SemigroupElement, a: &CoeffMonomial, nu: usize, j: usize) -> CoefficientElement {
        self.inner.left_action_entry(s, a, nu, j)
    }

    fn left_action_column(&self, s: SemigroupElement, a: &CoeffMonomial, j: usize) -> Vec<(usize, CoefficientElement)> {
        self.inner.left_action_column(s, a, j)
    }

    fn fiberwise_trace_monomial(&self, s: SemigroupElement, a: &CoeffMonomial) -> CoefficientElement {
        self.inner.fiberwise_trace_monomial(s, a)
    }

    fn trace_support(&self, a: &CoeffMonomial) -> TraceSupport {
        self.inner.trace_support(a)
    }
}

/// Dense left-action matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LeftActionMatrix {
    pub size: usize,
    pub entries: Vec<CoefficientElement>,
}

impl LeftActionMatrix {
    pub fn entry(&self, nu: usize, j: usize) -> &CoefficientElement {
        &self.entries[nu * self.size + j]
    }
}

type MatrixCache = RwLock<HashMap<(SemigroupElement, CoeffMonomial), Arc<LeftActionMatrix>>>;

/// Shared handle to a product system plus a memo of left-action matrices.
#[derive(Clone)]
pub struct ProductSystem {
    inner: Arc<dyn FiniteTypeSystem>,
    cache: Arc<MatrixCache>,
}

impl fmt::Debug for ProductSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProductSystem").field("system", &self.inner).finish()
    }
}

/// Element of `X_s` in basis coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleVector {
    fiber: SemigroupElement,
    coords: Vec<CoefficientElement>,
}

impl ModuleVector {
    pub fn fiber(&self) -> SemigroupElement {
        self.fiber
    }

    pub fn coords(&self) -> &[CoefficientElement] {
        &self.coords
    }

    pub fn coord(&self, j: usize) -> &CoefficientElement {
        &self.coords[j]
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|c| c.is_zero())
    }

    pub fn one_norm(&self) -> f64 {
        self.coords.iter().map(|c| c.one_norm()).sum()
    }
}

impl ProductSystem {
    pub fn new(inner: Arc<dyn FiniteTypeSystem>) -> Self {
        ProductSystem {
            inner,
            cache: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    pub fn affine_toeplitz() -> Self {
        Self::new(Arc::new(AffineToeplitz))
    }

    pub fn additive_toeplitz() -> Self {
        Self::new(Arc::new(LatticeDilation::additive_toeplitz()))
    }

    pub fn lattice_dilation(dim: usize, style: DilationStyle) -> Result<Self, SystemError> {
        Ok(Self::new(Arc::new(LatticeDilation::new(dim, style)?)))
    }

    pub fn cuntz(k: u64) -> Result<Self, SystemError> {
        Ok(Self::new(Arc::new(Cuntz::new(k)?)))
    }

    pub fn corrupted(&self, s: SemigroupElement, r: SemigroupElement, swap: (usize, usize)) -> Self {
        Self::new(Arc::new(Corrupted::new(self.inner.clone(), s, r, swap)))
    }

    pub fn inner(&self) -> &dyn FiniteTypeSystem {
        self.inner.as_ref()
    }

    pub fn name(&self) -> String {
        self.inner.name()
    }

    pub fn semigroup(&self) -> SemigroupKind {
        self.inner.semigroup()
    }

    pub fn engine(&self) -> Engine {
        self.inner.engine()
    }

    pub fn identity(&self) -> SemigroupElement {
        self.semigroup().identity()
    }

    pub fn element(&self, value: u64) -> Result<SemigroupElement, SystemError> {
        Ok(self.semigroup().element(value)?)
    }

    pub fn basis_growth(&self) -> GrowthLaw {
        self.inner.basis_growth()
    }

    /// The default dynamics `N(s) = N_s`.
    pub fn default_scaling(&self) -> ScalingHomomorphism {
        ScalingHomomorphism::new(self.semigroup(), self.basis_growth()).expect("built-in laws fit their cones")
    }

    pub fn critical_exponent(&self, scaling: &ScalingHomomorphism) -> Result<f64, SystemError> {
        Ok(critical_exponent(scaling, &self.basis_growth())?)
    }

    pub fn basis_count(&self, s: SemigroupElement) -> Result<usize, SystemError> {
        self.check_kind(s)?;
        self.inner.try_basis_count(s).ok_or(SystemError::FiberTooLarge(s))
    }

    pub fn index_map(&self, s: SemigroupElement, r: SemigroupElement, j: usize, k: usize) -> usize {
        self.inner.index_map(s, r, j, k)
    }

    pub fn index_split(&self, s: SemigroupElement, r: SemigroupElement, i: usize) -> (usize, usize) {
        self.inner.index_split(s, r, i)
    }

    pub fn default_generators(&self) -> Vec<CoeffMonomial> {
        self.inner.default_generators()
    }

    fn check_kind(&self, s: SemigroupElement) -> Result<(), SystemError> {
        if s.kind() != self.semigroup() {
            return Err(SemigroupError::Mismatch(s.kind(), self.semigroup()).into());
        }
        Ok(())
    }

    fn check_engine(&self, a: &CoefficientElement) -> Result<(), SystemError> {
        if a.engine() != self.engine() {
            return Err(CoeffError::EngineMismatch(a.engine(), self.engine()).into());
        }
        Ok(())
    }

    /// Column `j` of `L_s(a)` as sparse `(ν, entry)` pairs, ascending in `ν`.
    pub fn left_action_column(
        &self,
        s: SemigroupElement,
        a: &CoefficientElement,
        j: usize,
    ) -> Vec<(usize, CoefficientElement)> {
        let mut acc: BTreeMap<usize, CoefficientElement> = BTreeMap::new();
        for (mono, c) in a.terms() {
            for (nu, e) in self.inner.left_action_column(s, mono, j) {
                acc.entry(nu)
                    .or_insert_with(|| CoefficientElement::zero(self.engine()))
                    .add_assign_scaled(&e, c);
            }
        }
        acc.into_iter().filter(|(_, e)| !e.is_zero()).collect()
    }

    /// Memoized dense matrix `L_s(a)` of a monomial.
    pub fn left_action_matrix(&self, s: SemigroupElement, a: &CoeffMonomial) -> Result<Arc<LeftActionMatrix>, SystemError> {
        let key = (s, a.clone());
        if let Some(m) = self.cache.read().expect("cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let n = self.basis_count(s)?;
        let mut entries = vec![CoefficientElement::zero(self.engine()); n * n];
        for j in 0..n {
            for (nu, e) in self.inner.left_action_column(s, a, j) {
                entries[nu * n + j] = e;
            }
        }
        let m = Arc::new(LeftActionMatrix { size: n, entries });
        // Concurrent fills compute identical values, so either insert wins.
        self.cache.write().expect("cache poisoned").entry(key).or_insert(m.clone());
        Ok(m)
    }

    /// `ftr_s(a) = Σ_j L_s(a)_{jj}`.
    pub fn fiberwise_trace(&self, s: SemigroupElement, a: &CoefficientElement) -> CoefficientElement {
        let mut out = CoefficientElement::zero(self.engine());
        for (mono, c) in a.terms() {
            out.add_assign_scaled(&self.inner.fiberwise_trace_monomial(s, mono), c);
        }
        out
    }

    pub fn trace_support(&self, a: &CoeffMonomial) -> TraceSupport {
        self.inner.trace_support(a)
    }

    pub fn zero_vector(&self, s: SemigroupElement) -> Result<ModuleVector, SystemError> {
        let n = self.basis_count(s)?;
        Ok(ModuleVector {
            fiber: s,
            coords: vec![CoefficientElement::zero(self.engine()); n],
        })
    }

    /// `1^s_j`.
    pub fn basis_vector(&self, s: SemigroupElement, j: usize) -> Result<ModuleVector, SystemError> {
        self.basis_vector_with(s, j, CoefficientElement::unit(self.engine()))
    }

    /// `1^s_j · a`.
    pub fn basis_vector_with(&self, s: SemigroupElement, j: usize, a: CoefficientElement) -> Result<ModuleVector, SystemError> {
        self.check_engine(&a)?;
        let mut v = self.zero_vector(s)?;
        if j >= v.coords.len() {
            return Err(SystemError::IndexOutOfRange {
                fiber: s,
                index: j,
                count: v.coords.len(),
            });
        }
        v.coords[j] = a;
        Ok(v)
    }

    pub fn vector(&self, s: SemigroupElement, coords: Vec<CoefficientElement>) -> Result<ModuleVector, SystemError> {
        let n = self.basis_count(s)?;
        if coords.len() != n {
            return Err(SystemError::IndexOutOfRange {
                fiber: s,
                index: coords.len(),
                count: n,
            });
        }
        for c in &coords {
            self.check_engine(c)?;
        }
        Ok(ModuleVector { fiber: s, coords })
    }

    /// `⟨ξ, η⟩_s = Σ_j a_j^* b_j`.
    pub fn inner_product(&self, xi: &ModuleVector, eta: &ModuleVector) -> Result<CoefficientElement, SystemError> {
        if xi.fiber != eta.fiber {
            return Err(SystemError::FiberMismatch(xi.fiber, eta.fiber));
        }
        let mut out = CoefficientElement::zero(self.engine());
        for (a, b) in xi.coords.iter().zip(&eta.coords) {
            out.add_assign_scaled(&a.adjoint().checked_mul(b)?, Complex64::new(1.0, 0.0));
        }
        Ok(out)
    }

    /// `φ_s(a) ξ`.
    pub fn left_act(&self, a: &CoefficientElement, xi: &ModuleVector) -> Result<ModuleVector, SystemError> {
        self.check_engine(a)?;
        let s = xi.fiber;
        let mut out = self.zero_vector(s)?;
        for (j, aj) in xi.coords.iter().enumerate() {
            if aj.is_zero() {
                continue;
            }
            for (nu, e) in self.left_action_column(s, a, j) {
                out.coords[nu].add_assign_scaled(&e.checked_mul(aj)?, Complex64::new(1.0, 0.0));
            }
        }
        Ok(out)
    }

    /// `ξ · b`.
    pub fn right_act(&self, xi: &ModuleVector, b: &CoefficientElement) -> Result<ModuleVector, SystemError> {
        self.check_engine(b)?;
        let coords = xi.coords.iter().map(|a| a.checked_mul(b)).collect::<Result<_, _>>()?;
        Ok(ModuleVector { fiber: xi.fiber, coords })
    }

    pub fn add_vectors(&self, xi: &ModuleVector, eta: &ModuleVector) -> Result<ModuleVector, SystemError> {
        if xi.fiber != eta.fiber {
            return Err(SystemError::FiberMismatch(xi.fiber, eta.fiber));
        }
        let coords = xi
            .coords
            .iter()
            .zip(&eta.coords)
            .map(|(a, b)| a.checked_add(b))
            .collect::<Result<_, _>>()?;
        Ok(ModuleVector { fiber: xi.fiber, coords })
    }

    /// `ξη ∈ X_{sr}`: coordinate `𝔪_{s,r}(j, ν)` is `Σ_k L_r(a_j)_{νk} b_k`.
    pub fn module_product(&self, xi: &ModuleVector, eta: &ModuleVector) -> Result<ModuleVector, SystemError> {
        let (s, r) = (xi.fiber, eta.fiber);
        let sr = s.multiply(r)?;
        let mut out = self.zero_vector(sr)?;
        for (j, aj) in xi.coords.iter().enumerate() {
            if aj.is_zero() {
                continue;
            }
            for (k, bk) in eta.coords.iter().enumerate() {
                if bk.is_zero() {
                    continue;
                }
                for (nu, e) in self.left_action_column(r, aj, k) {
                    let i = self.index_map(s, r, j, nu);
                    out.coords[i].add_assign_scaled(&e.checked_mul(bk)?, Complex64::new(1.0, 0.0));
                }
            }
        }
        Ok(out)
    }

    /// Checks every structural axiom over `trunc × generators`.
    pub fn validate(&self, trunc: &TruncationSet, generators: &[CoeffMonomial]) -> ValidationReport {
        crate::product_system::validation::run(self, trunc, generators)
    }

    pub fn check_coprime_pairs(&self, trunc: &TruncationSet) -> CoprimeReport {
        crate::product_system::validation::coprime(self, trunc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralCheck {
    pub name: String,
    pub cases: usize,
    pub passed: bool,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub system: String,
    pub bound: u64,
    pub checks: Vec<StructuralCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&StructuralCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn first_failure(&self) -> Option<&StructuralCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Counterexample to the co-prime pair condition:
/// `𝔪_{s,r}(j,m) = 𝔪_{r,s}(l,g)` and `𝔪_{s,r}(j,n) = 𝔪_{r,s}(l,h)` with
/// `(m, g) ≠ (n, h)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoprimeWitness {
    pub s: u64,
    pub r: u64,
    pub j: usize,
    pub l: usize,
    pub m: usize,
    pub n: usize,
    pub g: usize,
    pub h: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoprimeReport {
    pub pairs_checked: usize,
    pub holds: bool,
    pub witness: Option<CoprimeWitness>,
}

mod validation {
    use super::*;

    struct Recorder {
        name: &'static str,
        cases: usize,
        witness: Option<String>,
    }

    impl Recorder {
        fn new(name: &'static str) -> Self {
            Recorder {
                name,
                cases: 0,
                witness: None,
            }
        }

        fn case(&mut self, ok: bool, witness: impl FnOnce() -> String) {
            self.cases += 1;
            if !ok && self.witness.is_none() {
                self.witness = Some(witness());
            }
        }

        fn finish(self) -> StructuralCheck {
            StructuralCheck {
                name: self.name.to_string(),
                cases: self.cases,
                passed: self.witness.is_none(),
                witness: self.witness,
            }
        }
    }

    type Column = Vec<(usize, CoefficientElement)>;

    fn same_column(a: &Column, b: &Column) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0 && x.1 == y.1)
    }

    fn accumulate(acc: &mut BTreeMap<usize, CoefficientElement>, engine: Engine, nu: usize, e: &CoefficientElement) {
        acc.entry(nu)
            .or_insert_with(|| CoefficientElement::zero(engine))
            .add_assign_scaled(e, Complex64::new(1.0, 0.0));
    }

    fn finish_column(acc: BTreeMap<usize, CoefficientElement>) -> Column {
        acc.into_iter().filter(|(_, e)| !e.is_zero()).collect()
    }

    pub(super) fn run(sys: &ProductSystem, trunc: &TruncationSet, generators: &[CoeffMonomial]) -> ValidationReport {
        let mut checks = Vec::new();
        let engine = sys.engine();
        let fibers: Vec<SemigroupElement> = trunc.iter().collect();
        let e = sys.identity();

        let mut counts = Recorder::new("basis_counts");
        let mut ok_counts = true;
        counts.case(sys.basis_count(e).ok() == Some(1), || "N_e != 1".into());
        for &s in &fibers {
            for &r in &fibers {
                let (Ok(ns), Ok(nr), Ok(sr)) = (sys.basis_count(s), sys.basis_count(r), s.multiply(r)) else {
                    counts.case(false, || format!("cannot index fibers {s}, {r}"));
                    continue;
                };
                let nsr = sys.basis_count(sr).ok();
                counts.case(nsr == Some(ns * nr), || format!("N_{sr} = {nsr:?} != N_{s} N_{r} = {}", ns * nr));
            }
        }
        if counts.witness.is_some() {
            ok_counts = false;
        }
        checks.push(counts.finish());

        let mut generators_ok = Recorder::new("generators_in_engine");
        for a in generators {
            generators_ok.case(a.belongs_to(engine), || format!("{a:?} is not a {engine} monomial"));
        }
        let generators_fit = generators_ok.witness.is_none();
        checks.push(generators_ok.finish());

        if !ok_counts || !generators_fit {
            return ValidationReport {
                system: sys.name(),
                bound: trunc.bound(),
                checks,
            };
        }
        let n = |s: SemigroupElement| sys.basis_count(s).expect("checked above");

        let mut bij = Recorder::new("index_map_bijective");
        for &s in &fibers {
            for &r in &fibers {
                let sr = s.multiply(r).expect("checked above");
                let total = n(sr);
                let mut seen = vec![false; total];
                for j in 0..n(s) {
                    for k in 0..n(r) {
                        let i = sys.index_map(s, r, j, k);
                        let fresh = i < total && !seen[i];
                        bij.case(fresh, || format!("m_{{{s},{r}}}({j},{k}) = {i} repeats or exceeds {total}"));
                        if i < total {
                            seen[i] = true;
                            let back = sys.index_split(s, r, i);
                            bij.case(back == (j, k), || {
                                format!("split_{{{s},{r}}}({i}) = {back:?}, expected ({j},{k})")
                            });
                        }
                    }
                }
            }
            for j in 0..n(s) {
                let left = sys.index_map(s, e, j, 0);
                bij.case(left == j, || format!("m_{{{s},e}}({j},0) = {left}"));
                let right = sys.index_map(e, s, 0, j);
                bij.case(right == j, || format!("m_{{e,{s}}}(0,{j}) = {right}"));
            }
        }
        checks.push(bij.finish());

        let mut assoc = Recorder::new("index_map_associative");
        for &s in &fibers {
            for &r in &fibers {
                let sr = s.multiply(r).expect("checked");
                for &q in &fibers {
                    let rq = r.multiply(q).expect("checked");
                    for j in 0..n(s) {
                        for k in 0..n(r) {
                            let jk = sys.index_map(s, r, j, k);
                            for l in 0..n(q) {
                                let lhs = sys.index_map(sr, q, jk, l);
                                let rhs = sys.index_map(s, rq, j, sys.index_map(r, q, k, l));
                                assoc.case(lhs == rhs, || {
                                    format!("(s,r,q)=({s},{r},{q}), (j,k,l)=({j},{k},{l}): {lhs} != {rhs}")
                                });
                            }
                        }
                    }
                }
            }
        }
        checks.push(assoc.finish());

        let unit = CoefficientElement::unit(engine);
        let mut elements: Vec<CoefficientElement> = vec![unit.clone()];
        for a in generators {
            elements.push(CoefficientElement::monomial(engine, a.clone(), Complex64::new(1.0, 0.0)));
        }

        let mut columns = Recorder::new("left_action_columns");
        for &s in &fibers {
            for a in generators {
                for j in 0..n(s) {
                    let fast = sys.inner.left_action_column(s, a, j);
                    let slow: Column = (0..n(s))
                        .map(|nu| (nu, sys.inner.left_action_entry(s, a, nu, j)))
                        .filter(|(_, x)| !x.is_zero())
                        .collect();
                    let mut fast_sorted = fast.clone();
                    fast_sorted.retain(|(_, x)| !x.is_zero());
                    fast_sorted.sort_by_key(|p| p.0);
                    columns.case(same_column(&fast_sorted, &slow), || {
                        format!("column {j} of L_{s}({a:?}): closed form {fast:?} != entries {slow:?}")
                    });
                }
            }
        }
        checks.push(columns.finish());

        let mut unital = Recorder::new("left_action_unital");
        for &s in &fibers {
            for j in 0..n(s) {
                let col = sys.left_action_column(s, &unit, j);
                let ok = col.len() == 1 && col[0].0 == j && col[0].1 == unit;
                unital.case(ok, || format!("column {j} of L_{s}(1) = {col:?}"));
            }
        }
        checks.push(unital.finish());

        let mut hom = Recorder::new("left_action_multiplicative");
        for &s in &fibers {
            for a in &elements {
                for b in &elements {
                    let ab = a * b;
                    for j in 0..n(s) {
                        let direct = sys.left_action_column(s, &ab, j);
                        let mut acc = BTreeMap::new();
                        for (k, bk) in sys.left_action_column(s, b, j) {
                            for (nu, ak) in sys.left_action_column(s, a, k) {
                                accumulate(&mut acc, engine, nu, &(&ak * &bk));
                            }
                        }
                        let composed = finish_column(acc);
                        hom.case(same_column(&direct, &composed), || {
                            format!("L_{s}(ab) != L_{s}(a)L_{s}(b) in column {j} for a = {a}, b = {b}")
                        });
                    }
                }
            }
        }
        checks.push(hom.finish());

        let mut star = Recorder::new("left_action_adjoint");
        for &s in &fibers {
            for a in generators {
                let m = sys.left_action_matrix(s, a).expect("checked");
                let m_star = sys.left_action_matrix(s, &a.adjoint()).expect("checked");
                for nu in 0..m.size {
                    for j in 0..m.size {
                        let ok = *m_star.entry(nu, j) == m.entry(j, nu).adjoint();
                        star.case(ok, || format!("L_{s}(a*)_{{{nu},{j}}} != (L_{s}(a)_{{{j},{nu}}})* for a = {a:?}"));
                    }
                }
            }
        }
        checks.push(star.finish());

        let mut coherence = Recorder::new("fiber_coherence");
        for &s in &fibers {
            for &r in &fibers {
                let sr = s.multiply(r).expect("checked");
                for a in &elements[1..] {
                    for j in 0..n(s) {
                        let outer = sys.left_action_column(s, a, j);
                        for k in 0..n(r) {
                            let lhs = sys.left_action_column(sr, a, sys.index_map(s, r, j, k));
                            let mut acc = BTreeMap::new();
                            for (nu, x) in &outer {
                                for (mu, y) in sys.left_action_column(r, x, k) {
                                    accumulate(&mut acc, engine, sys.index_map(s, r, *nu, mu), &y);
                                }
                            }
                            let rhs = finish_column(acc);
                            coherence.case(same_column(&lhs, &rhs), || {
                                format!("(s,r)=({s},{r}), (j,k)=({j},{k}), a = {a}: L_sr column {lhs:?} != {rhs:?}")
                            });
                        }
                    }
                }
            }
        }
        checks.push(coherence.finish());

        let mut ftr = Recorder::new("fiberwise_trace");
        for &s in &fibers {
            for a in generators.iter().chain(std::iter::once(&CoeffMonomial::unit(engine))) {
                let closed = sys.inner.fiberwise_trace_monomial(s, a);
                let mut summed = CoefficientElement::zero(engine);
                for j in 0..n(s) {
                    summed.add_assign_scaled(&sys.inner.left_action_entry(s, a, j, j), Complex64::new(1.0, 0.0));
                }
                ftr.case(closed == summed, || format!("ftr_{s}({a:?}): closed form {closed} != {summed}"));
            }
        }
        checks.push(ftr.finish());

        let mut support = Recorder::new("trace_support");
        for a in generators {
            if let TraceSupport::Finite(list) = sys.trace_support(a) {
                for &s in &fibers {
                    if s.is_identity() || list.contains(&s) {
                        continue;
                    }
                    let v = sys.inner.fiberwise_trace_monomial(s, a);
                    support.case(v.is_zero(), || format!("ftr_{s}({a:?}) = {v} outside declared support"));
                }
            }
        }
        checks.push(support.finish());

        let mut inj = Recorder::new("scaling_injective");
        let scaling = sys.default_scaling();
        inj.case(scaling.is_injective_on(trunc), || "N is not injective on the truncation".into());
        checks.push(inj.finish());

        ValidationReport {
            system: sys.name(),
            bound: trunc.bound(),
            checks,
        }
    }

    pub(super) fn coprime(sys: &ProductSystem, trunc: &TruncationSet) -> CoprimeReport {
        let mut pairs = 0;
        for s in trunc.iter() {
            for r in trunc.iter() {
                if !s.glb(r).map(|g| g.is_identity()).unwrap_or(false) {
                    continue;
                }
                pairs += 1;
                let (Ok(ns), Ok(nr)) = (sys.basis_count(s), sys.basis_count(r)) else {
                    continue;
                };
                for j in 0..ns {
                    // For fixed j, the map m ↦ l must be injective.
                    let mut seen: HashMap<usize, (usize, usize)> = HashMap::new();
                    for m in 0..nr {
                        let i = sys.index_map(s, r, j, m);
                        let (l, g) = sys.index_split(r, s, i);
                        if let Some(&(n, h)) = seen.get(&l) {
                            return CoprimeReport {
                                pairs_checked: pairs,
                                holds: false,
                                witness: Some(CoprimeWitness {
                                    s: s.value(),
                                    r: r.value(),
                                    j,
                                    l,
                                    m: n,
                                    n: m,
                                    g: h,
                                    h: g,
                                }),
                            };
                        }
                        seen.insert(l, (m, g));
                    }
                }
            }
        }
        CoprimeReport {
            pairs_checked: pairs,
            holds: true,
            witness: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(v: u64) -> SemigroupElement {
        SemigroupKind::NatMult.element(v).unwrap()
    }

    fn t(a: u64, b: u64) -> CoefficientElement {
        CoefficientElement::toeplitz(a, b)
    }

    fn one() -> CoefficientElement {
        CoefficientElement::unit(Engine::Toeplitz)
    }

    /// Independent oracle: `L_r(S^a S*^b)` from matrix entries of `V_r^* x V_r`,
    /// where `x e_k = e_{k-b+a}` for `k ≥ b`.
    fn transfer_oracle(r: u64, a: u64, b: u64) -> Option<(u64, u64)> {
        let apply = |k: u64| if k >= b { Some(k - b + a) } else { None };
        // (V_r^* x V_r) e_k = e_{(rk - b + a)/r} when defined and divisible.
        let mut image = Vec::new();
        for k in 0..20u64 {
            let v = apply(r * k).filter(|v| v % r == 0).map(|v| v / r);
            image.push(v);
        }
        if image.iter().all(|v| v.is_none()) {
            return None;
        }
        // S^p S*^q sends e_k to e_{k-q+p} for k ≥ q.
        let q = image.iter().position(|v| v.is_some()).unwrap() as u64;
        let p = image[q as usize].unwrap();
        for (k, v) in image.iter().enumerate() {
            let k = k as u64;
            let expect = if k >= q { Some(k - q + p) } else { None };
            assert_eq!(*v, expect);
        }
        Some((p, q))
    }

    #[test]
    fn transfer_matches_operator_oracle() {
        for r in 1..6 {
            for a in 0..9 {
                for b in 0..9 {
                    let closed = toeplitz_transfer(r, a, b).map(|m| match m {
                        CoeffMonomial::Toeplitz { m, n } => (m, n),
                        _ => unreachable!(),
                    });
                    assert_eq!(closed, transfer_oracle(r, a, b), "r={r} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn inner_products() {
        let sys = ProductSystem::affine_toeplitz();
        let e0 = sys.basis_vector(m(2), 0).unwrap();
        let e1 = sys.basis_vector(m(2), 1).unwrap();
        assert!(sys.inner_product(&e0, &e1).unwrap().is_zero());
        let e0s = sys.basis_vector_with(m(2), 0, t(1, 0)).unwrap();
        assert_eq!(sys.inner_product(&e0s, &e0s).unwrap(), one());
        let sum = sys.add_vectors(&e0s, &e1).unwrap();
        assert_eq!(sys.inner_product(&sum, &e1).unwrap(), one());
        let e3 = sys.basis_vector(m(3), 0).unwrap();
        assert!(sys.inner_product(&e0, &e3).is_err());
    }

    #[test]
    fn left_actions() {
        let sys = ProductSystem::affine_toeplitz();
        let v = sys.left_act(&t(1, 0), &sys.basis_vector(m(2), 0).unwrap()).unwrap();
        assert_eq!(v, sys.basis_vector(m(2), 1).unwrap());
        let v = sys.left_act(&t(1, 0), &sys.basis_vector(m(2), 1).unwrap()).unwrap();
        assert_eq!(v, sys.basis_vector_with(m(2), 0, t(1, 0)).unwrap());

        let lau = ProductSystem::additive_toeplitz();
        let z = CoefficientElement::laurent(&[1]);
        let v = lau.left_act(&z, &lau.basis_vector(m(3), 2).unwrap()).unwrap();
        assert_eq!(v, lau.basis_vector_with(m(3), 0, z.clone()).unwrap());
    }

    #[test]
    fn module_products() {
        let sys = ProductSystem::affine_toeplitz();
        let p = sys
            .module_product(&sys.basis_vector(m(2), 1).unwrap(), &sys.basis_vector(m(3), 2).unwrap())
            .unwrap();
        assert_eq!(p, sys.basis_vector(m(6), 5).unwrap());
        let xi = sys.basis_vector_with(m(4), 3, t(2, 1)).unwrap();
        let a = sys.basis_vector_with(m(1), 0, t(0, 3)).unwrap();
        assert_eq!(sys.module_product(&xi, &a).unwrap(), sys.right_act(&xi, &t(0, 3)).unwrap());
        let p = sys
            .module_product(&sys.basis_vector_with(m(2), 0, t(1, 0)).unwrap(), &sys.basis_vector(m(3), 0).unwrap())
            .unwrap();
        assert_eq!(p, sys.basis_vector(m(6), 2).unwrap());
    }

    #[test]
    fn fiberwise_traces() {
        let sys = ProductSystem::affine_toeplitz();
        assert!(sys.fiberwise_trace(m(2), &t(1, 0)).is_zero());
        assert_eq!(sys.fiberwise_trace(m(2), &t(2, 0)), t(1, 0).scale(Complex64::new(2.0, 0.0)));
        let lau = ProductSystem::additive_toeplitz();
        let z3 = CoefficientElement::laurent(&[3]);
        assert!(lau.fiberwise_trace(m(2), &z3).is_zero());
        assert_eq!(
            lau.fiberwise_trace(m(3), &z3),
            CoefficientElement::laurent(&[1]).scale(Complex64::new(3.0, 0.0))
        );
    }

    #[test]
    fn builtin_systems_validate() {
        let trunc = SemigroupKind::NatMult.enumerate(8).unwrap();
        for sys in [
            ProductSystem::affine_toeplitz(),
            ProductSystem::additive_toeplitz(),
            ProductSystem::lattice_dilation(2, DilationStyle::Diagonal).unwrap(),
            ProductSystem::lattice_dilation(2, DilationStyle::FirstAxis).unwrap(),
        ] {
            let t = if sys.basis_growth() == (GrowthLaw::Power { exponent: 2.0 }) {
                SemigroupKind::NatMult.enumerate(4).unwrap()
            } else {
                trunc.clone()
            };
            let report = sys.validate(&t, &sys.default_generators());
            assert!(report.passed(), "{}: {:?}", sys.name(), report.first_failure());
            assert!(sys.check_coprime_pairs(&t).holds);
        }
        let cuntz = ProductSystem::cuntz(3).unwrap();
        let t = SemigroupKind::NatAdd.enumerate(3).unwrap();
        assert!(cuntz.validate(&t, &cuntz.default_generators()).passed());
        assert!(cuntz.check_coprime_pairs(&t).holds);
    }

    #[test]
    fn corrupted_index_map_is_caught() {
        let sys = ProductSystem::affine_toeplitz().corrupted(m(2), m(3), (0, 1));
        let trunc = SemigroupKind::NatMult.enumerate(6).unwrap();
        let report = sys.validate(&trunc, &sys.default_generators());
        assert!(report.check("index_map_bijective").unwrap().passed);
        let assoc = report.check("index_map_associative").unwrap();
        assert!(!assoc.passed);
        assert!(assoc.witness.is_some());
        let cp = sys.check_coprime_pairs(&trunc);
        assert!(!cp.holds);
        let w = cp.witness.unwrap();
        assert_eq!(sys.index_map(m(w.s), m(w.r), w.j, w.m), sys.index_map(m(w.r), m(w.s), w.l, w.g));
        assert_eq!(sys.index_map(m(w.s), m(w.r), w.j, w.n), sys.index_map(m(w.r), m(w.s), w.l, w.h));
        assert!((w.m, w.g) != (w.n, w.h));
    }

    #[test]
    fn foreign_generators_are_reported() {
        let sys = ProductSystem::affine_toeplitz();
        let trunc = SemigroupKind::NatMult.enumerate(3).unwrap();
        let report = sys.validate(&trunc, &[CoeffMonomial::Laurent(vec![1])]);
        assert!(!report.passed());
        assert_eq!(report.first_failure().unwrap().name, "generators_in_engine");
    }

    #[test]
    fn memoized_matrices_are_shared() {
        let sys = ProductSystem::affine_toeplitz();
        let a = CoeffMonomial::Toeplitz { m: 1, n: 0 };
        let x = sys.left_action_matrix(m(3), &a).unwrap();
        let y = sys.left_action_matrix(m(3), &a).unwrap();
        assert!(Arc::ptr_eq(&x, &y));
        assert_eq!(*x.entry(1, 0), one());
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let sys = sys.clone();
                let a = a.clone();
                std::thread::spawn(move || sys.left_action_matrix(m(5), &a).unwrap())
            })
            .collect();
        let mats: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(mats.windows(2).all(|w| w[0] == w[1]));
    }

    fn toeplitz_coeff() -> impl Strategy<Value = CoefficientElement> {
        prop::collection::vec((0u64..3, 0u64..3, -2i32..3), 0..3).prop_map(|v| {
            let mut e = CoefficientElement::zero(Engine::Toeplitz);
            for (a, b, c) in v {
                e.add_term(CoeffMonomial::Toeplitz { m: a, n: b }, Complex64::new(c as f64, 0.0));
            }
            e
        })
    }

    fn vector(s: u64) -> impl Strategy<Value = Vec<CoefficientElement>> {
        prop::collection::vec(toeplitz_coeff(), s as usize)
    }

    proptest! {
        #[test]
        fn module_product_is_associative(
            (s, r, q, x, y, z) in (1u64..5, 1u64..5, 1u64..5)
                .prop_flat_map(|(s, r, q)| (Just(s), Just(r), Just(q), vector(s), vector(r), vector(q)))
        ) {
            let sys = ProductSystem::affine_toeplitz();
            let x = sys.vector(m(s), x).unwrap();
            let y = sys.vector(m(r), y).unwrap();
            let z = sys.vector(m(q), z).unwrap();
            let lhs = sys.module_product(&sys.module_product(&x, &y).unwrap(), &z).unwrap();
            let rhs = sys.module_product(&x, &sys.module_product(&y, &z).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn balanced_tensor_inner_product(
            x in vector(2), xp in vector(2), y in vector(3), yp in vector(3)
        ) {
            let sys = ProductSystem::affine_toeplitz();
            let xi = sys.vector(m(2), x).unwrap();
            let xip = sys.vector(m(2), xp).unwrap();
            let eta = sys.vector(m(3), y).unwrap();
            let etap = sys.vector(m(3), yp).unwrap();
            let lhs = sys.inner_product(&sys.module_product(&xi, &eta).unwrap(), &sys.module_product(&xip, &etap).unwrap()).unwrap();
            let inner = sys.inner_product(&xi, &xip).unwrap();
            let rhs = sys.inner_product(&eta, &sys.left_act(&inner, &etap).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn toeplitz_fiber_trace_vanishes_off_divisors(a in 0u64..20, b in 0u64..20, s in 2u64..12) {
            let sys = ProductSystem::affine_toeplitz();
            let d = a.abs_diff(b);
            let v = sys.fiberwise_trace(m(s), &t(a, b));
            if d % s != 0 {
                prop_assert!(v.is_zero());
            } else {
                prop_assert!(!v.is_zero());
            }
            let mut summed = CoefficientElement::zero(Engine::Toeplitz);
            let mono = CoeffMonomial::Toeplitz { m: a, n: b };
            for j in 0..s as usize {
                summed.add_assign_scaled(&sys.inner().left_action_entry(m(s), &mono, j, j), Complex64::new(1.0, 0.0));
            }
            prop_assert_eq!(v, summed);
        }
    }
}
