//! Truncated Fock representation for scalar-coefficient systems.
//!
//! The Fock module is cut down to a divisor-complete set `S` of fibers. A
//! creation operator `l_s(1_j)` sends the basis vector `(r, k)` to
//! `(sr, 𝔪_{s,r}(j, k))` and drops it when `sr ∉ S`, so identities can only
//! break on columns whose intermediate fibers leave `S`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::json;
use thiserror::Error;

use crate::coeff::{CoeffMonomial, Engine};
use crate::nt::{NicaToeplitz, NtElement, TermKey};
use crate::product_system::{ProductSystem, SystemError};
use crate::semigroup::{ScalingHomomorphism, SemigroupElement};
use crate::verify::{CheckReport, Sampler, VerifyError};

pub const DEFAULT_DIMENSION_CAP: usize = 5000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FockError {
    #[error("the Fock oracle needs scalar coefficients, got {0}")]
    NonScalar(Engine),
    #[error("fiber set is not divisor-complete: {0} is missing")]
    NotDivisorComplete(SemigroupElement),
    #[error("Fock dimension {dim} exceeds the cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type Matrix = DMatrix<Complex64>;

#[derive(Clone, Debug)]
pub struct TruncatedFock {
    system: ProductSystem,
    fibers: Vec<SemigroupElement>,
    offsets: BTreeMap<SemigroupElement, usize>,
    dim: usize,
}

impl TruncatedFock {
    pub fn build(system: &ProductSystem, fibers: &[SemigroupElement]) -> Result<Self, FockError> {
        Self::build_with_cap(system, fibers, DEFAULT_DIMENSION_CAP)
    }

    pub fn build_with_cap(system: &ProductSystem, fibers: &[SemigroupElement], cap: usize) -> Result<Self, FockError> {
        if system.engine() != Engine::Scalar {
            return Err(FockError::NonScalar(system.engine()));
        }
        let mut sorted = fibers.to_vec();
        sorted.sort();
        sorted.dedup();
        for &s in &sorted {
            for v in 0..=s.value() {
                let Ok(d) = system.element(v) else { continue };
                if d.leq(s).map_err(SystemError::from)? && sorted.binary_search(&d).is_err() {
                    return Err(FockError::NotDivisorComplete(d));
                }
            }
        }
        let mut offsets = BTreeMap::new();
        let mut dim = 0usize;
        for &s in &sorted {
            offsets.insert(s, dim);
            dim = dim.saturating_add(system.basis_count(s)?);
            if dim > cap {
                return Err(FockError::DimensionOverflow { dim, cap });
            }
        }
        Ok(TruncatedFock {
            system: system.clone(),
            fibers: sorted,
            offsets,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fibers(&self) -> &[SemigroupElement] {
        &self.fibers
    }

    pub fn system(&self) -> &ProductSystem {
        &self.system
    }

    pub fn contains(&self, s: SemigroupElement) -> bool {
        self.offsets.contains_key(&s)
    }

    /// Position of the basis vector `(s, j)`.
    pub fn position(&self, s: SemigroupElement, j: usize) -> Option<usize> {
        self.offsets.get(&s).map(|o| o + j)
    }

    pub fn vacuum(&self) -> usize {
        self.position(self.system.identity(), 0).expect("identity fiber is present")
    }

    /// Basis labels `(s, j)` in matrix order.
    pub fn labels(&self) -> Vec<(SemigroupElement, usize)> {
        let mut out = Vec::with_capacity(self.dim);
        for &s in &self.fibers {
            for j in 0..self.system.basis_count(s).expect("fibers fit") {
                out.push((s, j));
            }
        }
        out
    }

    /// Image of `(q, i)` under `l_s(1_j) l_r(1_k)^*`, if it survives.
    fn apply_term(&self, key: &TermKey, q: SemigroupElement, i: usize) -> Option<(SemigroupElement, usize)> {
        if !key.right.leq(q).ok()? {
            return None;
        }
        let t = q.quotient(key.right).ok()?;
        let (k, rest) = self.system.index_split(key.right, t, i);
        if k != key.right_index {
            return None;
        }
        let target = key.left.multiply(t).ok()?;
        if !self.contains(target) {
            return None;
        }
        Some((target, self.system.index_map(key.left, t, key.left_index, rest)))
    }

    /// `l_s(1_j)`.
    pub fn creation(&self, s: SemigroupElement, j: usize) -> Matrix {
        let e = self.system.identity();
        let key = TermKey {
            left: s,
            left_index: j,
            right: e,
            right_index: 0,
        };
        self.term_matrix(&key, Complex64::new(1.0, 0.0))
    }

    fn term_matrix(&self, key: &TermKey, c: Complex64) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        self.add_term(&mut out, key, c);
        out
    }

    fn add_term(&self, out: &mut Matrix, key: &TermKey, c: Complex64) {
        for (col, (q, i)) in self.labels().into_iter().enumerate() {
            if let Some((t, idx)) = self.apply_term(key, q, i) {
                let row = self.position(t, idx).expect("target lies in S");
                out[(row, col)] += c;
            }
        }
    }

    /// Matrix of a normal form through `l_*`.
    pub fn represent(&self, x: &NtElement) -> Result<Matrix, FockError> {
        if x.engine() != Engine::Scalar {
            return Err(FockError::NonScalar(x.engine()));
        }
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (k, c) in x.terms() {
            self.add_term(&mut out, k, c.coefficient(&CoeffMonomial::Unit));
        }
        Ok(out)
    }

    /// Fibers `q` whose columns of `represent(x)·represent(y)` see no
    /// truncation: every intermediate fiber reached by a term of `y` is in `S`.
    pub fn interior_fibers(&self, y: &NtElement) -> Vec<SemigroupElement> {
        self.fibers
            .iter()
            .copied()
            .filter(|&q| {
                y.terms().all(|(k, _)| match k.right.leq(q) {
                    Ok(true) => {
                        let t = q.quotient(k.right).expect("right ≤ q");
                        k.left.multiply(t).map(|m| self.contains(m)).unwrap_or(false)
                    }
                    _ => true,
                })
            })
            .collect()
    }

    fn columns_of(&self, fibers: &[SemigroupElement]) -> Vec<usize> {
        let mut out = Vec::new();
        for &s in fibers {
            let o = self.offsets[&s];
            for j in 0..self.system.basis_count(s).expect("fibers fit") {
                out.push(o + j);
            }
        }
        out
    }

    /// Largest entrywise difference of two matrices on the given columns.
    pub fn column_distance(&self, a: &Matrix, b: &Matrix, fibers: &[SemigroupElement]) -> f64 {
        let mut d: f64 = 0.0;
        for col in self.columns_of(fibers) {
            for row in 0..self.dim {
                d = d.max((a[(row, col)] - b[(row, col)]).norm());
            }
        }
        d
    }

    /// `Σ_{(s,j)} N(s)^{-β} ⟨represent(y) e_{(s,j)}, e_{(s,j)}⟩ / ζ_S`.
    pub fn oracle_state(&self, y: &NtElement, scaling: &ScalingHomomorphism, beta: f64) -> Result<Complex64, FockError> {
        let m = self.represent(y)?;
        let mut num = Complex64::new(0.0, 0.0);
        let mut zeta = 0.0;
        for &s in &self.fibers {
            let w = scaling.weight(s, beta);
            let o = self.offsets[&s];
            let n = self.system.basis_count(s)?;
            let diag: Complex64 = (o..o + n).map(|p| m[(p, p)]).sum();
            num += diag * w;
            zeta += w * n as f64;
        }
        Ok(num / zeta)
    }
}

/// `represent(xy) = represent(x)·represent(y)` on interior columns for
/// sampled pairs.
pub fn check_representation(
    fock: &TruncatedFock,
    nt: &NicaToeplitz,
    sampler: &mut Sampler,
    n_samples: usize,
    max_term_fiber: u64,
) -> Result<CheckReport, VerifyError> {
    let small: Vec<SemigroupElement> = fock.fibers().iter().copied().filter(|s| s.value() <= max_term_fiber).collect();
    let mut report = CheckReport::builder("fock_product", Some(sampler.seed()));
    let mut interior_columns = 0usize;
    for _ in 0..n_samples {
        let draw = |sampler: &mut Sampler| -> Result<NtElement, VerifyError> {
            let mut x = nt.zero();
            for _ in 0..1 + sampler.below(2) {
                let s = small[sampler.below(small.len())];
                let r = small[sampler.below(small.len())];
                x = x.checked_add(&sampler.term(nt, s, r)?)?;
            }
            Ok(x)
        };
        let x = draw(sampler)?;
        let y = draw(sampler)?;
        let xy = nt.multiply(&x, &y)?;
        let lhs = fock.represent(&xy).map_err(fock_err)?;
        let rhs = fock.represent(&x).map_err(fock_err)? * fock.represent(&y).map_err(fock_err)?;
        let interior = fock.interior_fibers(&y);
        interior_columns += fock.columns_of(&interior).len();
        let dev = fock.column_distance(&lhs, &rhs, &interior);
        report.record(dev, 1e-12, || json!({"x": x.to_string(), "y": y.to_string()}));
    }
    report.detail("dimension", json!(fock.dim()));
    report.detail("interior_columns", json!(interior_columns));
    Ok(report.finish())
}

fn fock_err(e: FockError) -> VerifyError {
    VerifyError::Invalid(e.to_string())
}

/// `l_s(ξ)l_s(η)^* l_r(ζ)l_r(θ)^* = l^{(s∨r)}(i_s^{s∨r}(θ_{ξ,η}) i_r^{s∨r}(θ_{ζ,θ}))`
/// for random rank-one operators, compared on all columns.
pub fn check_nica_covariance(fock: &TruncatedFock, sampler: &mut Sampler, n_samples: usize) -> Result<CheckReport, VerifyError> {
    let sys = fock.system().clone();
    let fibers: Vec<SemigroupElement> = fock.fibers().to_vec();
    let mut report = CheckReport::builder("fock_nica_covariance", Some(sampler.seed()));
    let mut tested = 0usize;
    for _ in 0..n_samples {
        let s = fibers[sampler.below(fibers.len())];
        let r = fibers[sampler.below(fibers.len())];
        let w = s.lub(r)?;
        if !fock.contains(w) {
            continue;
        }
        tested += 1;
        let ns = sys.basis_count(s)?;
        let nr = sys.basis_count(r)?;
        let nw = sys.basis_count(w)?;
        let mut vector = |n: usize| -> Vec<Complex64> {
            (0..n)
                .map(|_| Complex64::new(sampler.unit_interval() - 0.5, sampler.unit_interval() - 0.5))
                .collect()
        };
        let (xi, eta, zeta, theta) = (vector(ns), vector(ns), vector(nr), vector(nr));
        let create = |f: SemigroupElement, v: &[Complex64]| -> Matrix {
            v.iter()
                .enumerate()
                .fold(Matrix::zeros(fock.dim(), fock.dim()), |acc, (j, c)| acc + fock.creation(f, j) * *c)
        };
        let lhs = create(s, &xi) * create(s, &eta).adjoint() * create(r, &zeta) * create(r, &theta).adjoint();

        // i_f^w(θ_{u,v}) on X_w = X_f ⊗ X_{f⁻¹w}.
        let lift = |f: SemigroupElement, u: &[Complex64], v: &[Complex64]| -> Result<Matrix, VerifyError> {
            let t = w.quotient(f)?;
            let nt_ = sys.basis_count(t)?;
            let mut m = Matrix::zeros(nw, nw);
            for a in 0..u.len() {
                for b in 0..v.len() {
                    for k in 0..nt_ {
                        m[(sys.index_map(f, t, a, k), sys.index_map(f, t, b, k))] += u[a] * v[b].conj();
                    }
                }
            }
            Ok(m)
        };
        let op = lift(s, &xi, &eta)? * lift(r, &zeta, &theta)?;
        let mut rhs = Matrix::zeros(fock.dim(), fock.dim());
        for u in 0..nw {
            for v in 0..nw {
                if op[(u, v)] != Complex64::new(0.0, 0.0) {
                    let key = TermKey {
                        left: w,
                        left_index: u,
                        right: w,
                        right_index: v,
                    };
                    fock.add_term(&mut rhs, &key, op[(u, v)]);
                }
            }
        }
        let dev = fock.column_distance(&lhs, &rhs, &fibers);
        report.record(dev, 1e-12, || json!({"s": s.value(), "r": r.value()}));
    }
    report.detail("pairs_in_range", json!(tested));
    Ok(report.finish())
}

/// `l(e_j)^* l(e_k) = δ_{jk}` on columns whose image stays in `S`.
pub fn check_toeplitz_relation(fock: &TruncatedFock, s: SemigroupElement) -> Result<CheckReport, VerifyError> {
    let sys = fock.system();
    let n = sys.basis_count(s)?;
    let representable: Vec<SemigroupElement> = fock
        .fibers()
        .iter()
        .copied()
        .filter(|q| s.multiply(*q).map(|m| fock.contains(m)).unwrap_or(false))
        .collect();
    let id = Matrix::identity(fock.dim(), fock.dim());
    let zero = Matrix::zeros(fock.dim(), fock.dim());
    let mut report = CheckReport::builder("fock_toeplitz_relation", None);
    for j in 0..n {
        for k in 0..n {
            let p = fock.creation(s, j).adjoint() * fock.creation(s, k);
            let expect = if j == k { &id } else { &zero };
            let dev = fock.column_distance(&p, expect, &representable);
            report.record(dev, 0.0, || json!({"s": s.value(), "j": j, "k": k}));
        }
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoefficientElement, TraceSpec};
    use crate::kms::{KmsContext, KmsParameters};
    use crate::semigroup::SemigroupKind;

    fn n(v: u64) -> SemigroupElement {
        SemigroupKind::NatAdd.element(v).unwrap()
    }

    fn cuntz_fock(max_len: u64) -> (ProductSystem, TruncatedFock) {
        let sys = ProductSystem::cuntz(2).unwrap();
        let fibers: Vec<_> = (0..=max_len).map(n).collect();
        let fock = TruncatedFock::build(&sys, &fibers).unwrap();
        (sys, fock)
    }

    #[test]
    fn build_examples() {
        let (_, fock) = cuntz_fock(2);
        assert_eq!(fock.dim(), 7);
        let v = fock.creation(n(1), 0).column(fock.vacuum()).into_owned();
        let target = fock.position(n(1), 0).unwrap();
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, if i == target { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
        }
        // l(e₁)^* strips the leading digit 1: (2, 𝔪(1,0)) ↦ (1, 0).
        let sys = fock.system();
        let src = fock.position(n(2), sys.index_map(n(1), n(1), 1, 0)).unwrap();
        let col = fock.creation(n(1), 1).adjoint().column(src).into_owned();
        assert_eq!(col[fock.position(n(1), 0).unwrap()], Complex64::new(1.0, 0.0));
        assert_eq!(col.iter().filter(|z| z.norm() > 0.0).count(), 1);

        let toeplitz = ProductSystem::affine_toeplitz();
        assert!(matches!(
            TruncatedFock::build(&toeplitz, &[toeplitz.identity()]),
            Err(FockError::NonScalar(_))
        ));
        assert!(matches!(TruncatedFock::build(&fock.system().clone(), &[n(0), n(2)]), Err(FockError::NotDivisorComplete(_))));
        assert!(matches!(
            TruncatedFock::build_with_cap(fock.system(), &(0..=12).map(n).collect::<Vec<_>>(), 5000),
            Err(FockError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn represent_examples() {
        let (sys, fock) = cuntz_fock(3);
        let nt = NicaToeplitz::new(sys.clone());
        assert_eq!(fock.represent(&nt.unit()).unwrap(), Matrix::identity(fock.dim(), fock.dim()));
        let p = fock.represent(&nt.alpha(n(1), &nt.unit()).unwrap()).unwrap();
        let mut expect = Matrix::identity(fock.dim(), fock.dim());
        expect[(fock.vacuum(), fock.vacuum())] = Complex64::new(0.0, 0.0);
        assert_eq!(p, expect);
    }

    #[test]
    fn oracle_matches_symbolic_state() {
        let (sys, fock) = cuntz_fock(5);
        let nt = NicaToeplitz::new(sys.clone());
        let params = KmsParameters::standard(&sys, 3.0, 5, TraceSpec::haar(Engine::Scalar)).unwrap();
        let kms = KmsContext::new(&sys, params.clone()).unwrap();
        let y = nt.basis_term(n(1), 0, n(1), 0).unwrap();
        let a = fock.oracle_state(&y, &params.scaling, 3.0).unwrap();
        let b = kms.omega_tau(&y).unwrap().value;
        assert!((a - b).norm() < 1e-12);
        let one = fock.oracle_state(&nt.unit(), &params.scaling, 3.0).unwrap();
        assert!((one - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let off = nt.term(n(2), 1, n(1), 0, CoefficientElement::unit(Engine::Scalar)).unwrap();
        assert_eq!(fock.oracle_state(&off, &params.scaling, 3.0).unwrap(), kms.kms_state(&off).unwrap().value);
    }

    #[test]
    fn sampled_oracle_checks() {
        let (sys, fock) = cuntz_fock(5);
        let nt = NicaToeplitz::new(sys.clone());
        let mut s = Sampler::new(&sys, 9, 2).unwrap();
        let r = check_representation(&fock, &nt, &mut s, 40, 2).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.details["interior_columns"].as_u64().unwrap() > 0);
        let r = check_nica_covariance(&fock, &mut s, 20).unwrap();
        assert!(r.passed, "{r:?}");
        for len in 1..3 {
            assert!(check_toeplitz_relation(&fock, n(len)).unwrap().passed);
        }
    }

    #[test]
    fn interior_is_needed() {
        // Without the interior restriction the compression breaks the
        // product rule: l(e₀)^*·l(e₀) loses the top fiber.
        let (sys, fock) = cuntz_fock(2);
        let nt = NicaToeplitz::new(sys.clone());
        let v = nt.basis_term(n(1), 0, n(0), 0).unwrap();
        let x = v.adjoint();
        let lhs = fock.represent(&nt.multiply(&x, &v).unwrap()).unwrap();
        let rhs = fock.represent(&x).unwrap() * fock.represent(&v).unwrap();
        assert!(fock.column_distance(&lhs, &rhs, fock.fibers()) > 0.5);
        let interior = fock.interior_fibers(&v);
        assert_eq!(interior, vec![n(0), n(1)]);
        assert_eq!(fock.column_distance(&lhs, &rhs, &interior), 0.0);
    }
}
