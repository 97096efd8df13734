//! Partition function, KMS states and ground states.
//!
//! The KMS state is evaluated through its series over the truncation set and
//! normalised by the truncated partition function computed from the same
//! summands, so the unit always has value exactly one.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::coeff::{CoeffError, CoefficientElement, TraceSpec};
use crate::nt::{NtElement, NtError};
use crate::product_system::{ProductSystem, SystemError};
use crate::semigroup::{
    primes_up_to, tail_bound, GrowthLaw, ScalingHomomorphism, SemigroupElement, SemigroupError, SemigroupKind,
    TruncationSet,
};

/// Summands are added in fixed chunks, then the chunk totals pairwise.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KmsError {
    #[error("β = {beta} is not above the critical exponent {critical}")]
    BelowCritical { beta: f64, critical: f64 },
    #[error("the trace must be tracial for KMS states")]
    NonTracial,
    #[error("{0}")]
    Incompatible(String),
    #[error("euler product needs a nat-mult instance with N(s) = N_s = s^d")]
    WrongInstance,
    #[error(transparent)]
    Nt(#[from] NtError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
}

impl From<SemigroupError> for KmsError {
    fn from(e: SemigroupError) -> Self {
        match e {
            SemigroupError::BelowCritical { beta, critical } => KmsError::BelowCritical { beta, critical },
            other => KmsError::System(other.into()),
        }
    }
}

/// A truncated series value with a rigorous bound on the discarded part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateValue {
    pub value: Complex64,
    pub tail: f64,
    pub truncation: u64,
}

impl StateValue {
    pub fn exact(value: Complex64, truncation: u64) -> Self {
        StateValue {
            value,
            tail: 0.0,
            truncation,
        }
    }

    /// `|self - other|` minus both tails, clamped at zero.
    pub fn excess_distance(&self, other: &StateValue) -> f64 {
        ((self.value - other.value).norm() - self.tail - other.tail).max(0.0)
    }
}

#[derive(Serialize, Deserialize)]
struct StateValueRepr {
    value: [f64; 2],
    tail: f64,
    truncation: u64,
}

impl Serialize for StateValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        StateValueRepr {
            value: [self.value.re, self.value.im],
            tail: self.tail,
            truncation: self.truncation,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = StateValueRepr::deserialize(deserializer)?;
        if !(r.tail >= 0.0) {
            return Err(serde::de::Error::custom("tail must be nonnegative"));
        }
        Ok(StateValue {
            value: Complex64::new(r.value[0], r.value[1]),
            tail: r.tail,
            truncation: r.truncation,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KmsParameters {
    pub beta: f64,
    pub scaling: ScalingHomomorphism,
    pub truncation: TruncationSet,
    pub trace: TraceSpec,
}

impl KmsParameters {
    /// Default dynamics `N(s) = N_s` and truncation `enumerate(bound)`.
    pub fn standard(system: &ProductSystem, beta: f64, bound: u64, trace: TraceSpec) -> Result<Self, KmsError> {
        Ok(KmsParameters {
            beta,
            scaling: system.default_scaling(),
            truncation: system.semigroup().enumerate(bound)?,
            trace,
        })
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        KmsParameters { beta, ..self.clone() }
    }

    pub fn with_bound(&self, bound: u64) -> Result<Self, KmsError> {
        Ok(KmsParameters {
            truncation: self.truncation.kind().enumerate(bound)?,
            ..self.clone()
        })
    }
}

/// Sums in a fixed order and shape, independent of thread scheduling.
pub fn fixed_shape_sum(values: &[Complex64]) -> Complex64 {
    let mut level: Vec<Complex64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().fold(Complex64::new(0.0, 0.0), |a, b| a + b))
        .collect();
    if level.is_empty() {
        return Complex64::new(0.0, 0.0);
    }
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|p| if p.len() == 2 { p[0] + p[1] } else { p[0] })
            .collect();
    }
    level[0]
}

/// KMS evaluation context for one system and parameter set.
#[derive(Clone, Debug)]
pub struct KmsContext {
    system: ProductSystem,
    params: KmsParameters,
    critical: f64,
    zeta: Complex64,
    zeta_tail: f64,
}

impl KmsContext {
    pub fn new(system: &ProductSystem, params: KmsParameters) -> Result<Self, KmsError> {
        check_compatible(system, &params)?;
        if !params.trace.is_tracial() {
            return Err(KmsError::NonTracial);
        }
        let critical = system.critical_exponent(&params.scaling)?;
        if !(params.beta > critical) {
            return Err(KmsError::BelowCritical {
                beta: params.beta,
                critical,
            });
        }
        let zeta_tail = tail_bound(&params.scaling, &system.basis_growth(), params.beta, params.truncation.bound())?;
        let mut ctx = KmsContext {
            system: system.clone(),
            params,
            critical,
            zeta: Complex64::new(0.0, 0.0),
            zeta_tail,
        };
        let e = system.identity();
        ctx.zeta = ctx.raw_series(e, &CoefficientElement::unit(system.engine()))?;
        Ok(ctx)
    }

    pub fn system(&self) -> &ProductSystem {
        &self.system
    }

    pub fn params(&self) -> &KmsParameters {
        &self.params
    }

    pub fn critical_exponent(&self) -> f64 {
        self.critical
    }

    pub fn bound(&self) -> u64 {
        self.params.truncation.bound()
    }

    /// Bound on `Σ_{s ∉ trunc} N(s)^{-β} N_s`.
    pub fn zeta_tail(&self) -> f64 {
        self.zeta_tail
    }

    pub fn zeta(&self) -> StateValue {
        StateValue {
            value: self.zeta,
            tail: self.zeta_tail,
            truncation: self.bound(),
        }
    }

    /// `Σ_{s = rq ∈ trunc} N(s)^{-β} τ(ftr_q(c))`.
    fn raw_series(&self, r: SemigroupElement, c: &CoefficientElement) -> Result<Complex64, KmsError> {
        let beta = self.params.beta;
        let above: Vec<SemigroupElement> = self
            .params
            .truncation
            .elements()
            .iter()
            .copied()
            .filter(|s| r.leq(*s).unwrap_or(false))
            .collect();
        let summands: Vec<Result<Complex64, CoeffError>> = above
            .par_iter()
            .map(|&s| {
                let q = s.quotient(r).expect("r ≤ s");
                let ftr = self.system.fiberwise_trace(q, c);
                Ok(self.params.trace.eval(&ftr)? * self.params.scaling.weight(s, beta))
            })
            .collect();
        let summands: Vec<Complex64> = summands.into_iter().collect::<Result<_, _>>()?;
        Ok(fixed_shape_sum(&summands))
    }

    /// `ω_τ(y)` for `y` in the core.
    pub fn omega_tau(&self, y: &NtElement) -> Result<StateValue, KmsError> {
        self.check_element(y)?;
        y.require_core()?;
        let mut value = Complex64::new(0.0, 0.0);
        let mut tail = 0.0;
        for (k, c) in y.terms() {
            if k.left_index != k.right_index {
                continue;
            }
            value += self.raw_series(k.left, c)? / self.zeta;
            // |S_∞/ζ_∞ - S_B/ζ_B| ≤ (|S_∞ - S_B| + |S_B|·|ζ_∞ - ζ_B|/ζ_B)/ζ_∞.
            tail += 2.0 * self.zeta_tail * c.one_norm() / self.zeta.norm();
        }
        Ok(StateValue {
            value,
            tail,
            truncation: self.bound(),
        })
    }

    /// `ω_τ ∘ Φ^δ`.
    pub fn kms_state(&self, x: &NtElement) -> Result<StateValue, KmsError> {
        self.omega_tau(&x.cond_expectation())
    }

    fn check_element(&self, y: &NtElement) -> Result<(), KmsError> {
        if y.engine() != self.system.engine() || y.semigroup() != self.system.semigroup() {
            return Err(KmsError::Nt(NtError::Mismatch));
        }
        Ok(())
    }
}

fn check_compatible(system: &ProductSystem, params: &KmsParameters) -> Result<(), KmsError> {
    if params.trace.engine() != system.engine() {
        return Err(CoeffError::EngineMismatch(params.trace.engine(), system.engine()).into());
    }
    if params.scaling.kind() != system.semigroup() {
        return Err(KmsError::Incompatible(format!(
            "scaling is defined on {}, system on {}",
            params.scaling.kind(),
            system.semigroup()
        )));
    }
    if params.truncation.kind() != system.semigroup() {
        return Err(KmsError::Incompatible(format!(
            "truncation set lies in {}, system in {}",
            params.truncation.kind(),
            system.semigroup()
        )));
    }
    Ok(())
}

/// Truncated partition function `ζ_N(β)`.
pub fn zeta(system: &ProductSystem, params: &KmsParameters) -> Result<StateValue, KmsError> {
    Ok(KmsContext::new(system, params.clone())?.zeta())
}

/// `Π_{p ≤ bound} (1 - p^{-d(β-1)})^{-1}`, the product form of `ζ_N(β)` when
/// `N(s) = N_s = s^d` on `nat-mult`.
pub fn euler_product(
    system: &ProductSystem,
    scaling: &ScalingHomomorphism,
    beta: f64,
    primes_bound: u64,
) -> Result<Complex64, KmsError> {
    let d = match (system.semigroup(), system.basis_growth(), scaling.law()) {
        (SemigroupKind::NatMult, GrowthLaw::Power { exponent: d }, GrowthLaw::Power { exponent: kappa })
            if scaling.kind() == SemigroupKind::NatMult && kappa == d =>
        {
            d
        }
        _ => return Err(KmsError::WrongInstance),
    };
    let exponent = d * (beta - 1.0);
    if !(exponent > 1.0) {
        return Err(KmsError::BelowCritical {
            beta,
            critical: 1.0 + 1.0 / d,
        });
    }
    let product = primes_up_to(primes_bound)
        .into_iter()
        .fold(1.0, |acc, p| acc / (1.0 - (p as f64).powf(-exponent)));
    Ok(Complex64::new(product, 0.0))
}

/// `ω̃_τ`: `τ(c)` on terms of degree `(e, e)`, zero elsewhere.
pub fn ground_state(x: &NtElement, trace: &TraceSpec) -> Result<Complex64, KmsError> {
    if x.engine() != trace.engine() {
        return Err(CoeffError::EngineMismatch(x.engine(), trace.engine()).into());
    }
    let mut value = Complex64::new(0.0, 0.0);
    for (k, c) in x.terms() {
        if k.left.is_identity() && k.right.is_identity() {
            value += trace.eval(c)?;
        }
    }
    Ok(value)
}

/// Convenience: engine of a system's coefficient algebra with Haar trace.
pub fn haar_trace(system: &ProductSystem) -> TraceSpec {
    TraceSpec::haar(system.engine())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoeffMonomial, Engine, Moments};
    use crate::nt::NicaToeplitz;
    use proptest::prelude::*;

    fn m(v: u64) -> SemigroupElement {
        SemigroupKind::NatMult.element(v).unwrap()
    }

    fn toeplitz_ctx(beta: f64, bound: u64) -> (NicaToeplitz, KmsContext) {
        let sys = ProductSystem::affine_toeplitz();
        let params = KmsParameters::standard(&sys, beta, bound, TraceSpec::haar(Engine::Toeplitz)).unwrap();
        (NicaToeplitz::new(sys.clone()), KmsContext::new(&sys, params).unwrap())
    }

    /// Partial sums of `Σ n^{-s}` with an Euler-Maclaurin remainder.
    fn riemann_zeta(s: f64) -> f64 {
        let n = 1000u32;
        let mut sum: f64 = (1..n).map(|k| (k as f64).powf(-s)).sum();
        let nf = n as f64;
        sum += nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s) + s * nf.powf(-s - 1.0) / 12.0;
        sum
    }

    #[test]
    fn zeta_examples() {
        let (_, ctx) = toeplitz_ctx(3.0, 100_000);
        let z = ctx.zeta();
        assert!(z.tail <= 1e-5 + 1e-18);
        let exact = std::f64::consts::PI.powi(2) / 6.0;
        assert!((z.value.re - exact).abs() <= z.tail);
        assert!((z.value.re - 1.644934).abs() < 1e-5);

        let cz = ProductSystem::cuntz(2).unwrap();
        let p = KmsParameters::standard(&cz, 3.0, 60, TraceSpec::haar(Engine::Scalar)).unwrap();
        let z = zeta(&cz, &p).unwrap();
        assert!((z.value.re - 4.0 / 3.0).abs() < 1e-15);

        let (_, ctx) = toeplitz_ctx(60.0, 1000);
        assert!((ctx.zeta().value.re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_small_beta_and_non_tracial_traces() {
        let sys = ProductSystem::affine_toeplitz();
        let p = KmsParameters::standard(&sys, 2.0, 100, TraceSpec::haar(Engine::Toeplitz)).unwrap();
        assert!(matches!(KmsContext::new(&sys, p), Err(KmsError::BelowCritical { .. })));
        let vs = TraceSpec::new(Engine::Toeplitz, Moments::VectorState { index: 0 }).unwrap();
        let p = KmsParameters::standard(&sys, 3.0, 100, vs).unwrap();
        assert!(matches!(KmsContext::new(&sys, p), Err(KmsError::NonTracial)));
        let cz = ProductSystem::cuntz(2).unwrap();
        let p = KmsParameters::standard(&cz, 1.0, 10, TraceSpec::haar(Engine::Scalar)).unwrap();
        assert!(KmsContext::new(&cz, p).is_err());
    }

    #[test]
    fn euler_product_examples() {
        let sys = ProductSystem::affine_toeplitz();
        let n = sys.default_scaling();
        let e3 = euler_product(&sys, &n, 3.0, 100).unwrap().re;
        let direct: f64 = primes_up_to(100).iter().map(|&p| 1.0 / (1.0 - (p as f64).powi(-2))).product();
        assert!((e3 - direct).abs() < 1e-14);
        // Independent oracle (sympy primerange product).
        assert!((e3 - 1.6419451966211163).abs() < 1e-12);
        let e4 = euler_product(&sys, &n, 4.0, 100).unwrap().re;
        assert!((e4 - riemann_zeta(3.0)).abs() < 1e-4);
        let e2 = euler_product(&sys, &n, 5.0, 2).unwrap().re;
        assert_eq!(e2, 1.0 / (1.0 - 2f64.powf(1.0 - 5.0)));
        let cz = ProductSystem::cuntz(2).unwrap();
        assert!(matches!(
            euler_product(&cz, &cz.default_scaling(), 3.0, 10),
            Err(KmsError::WrongInstance)
        ));
    }

    #[test]
    fn omega_examples() {
        let (nt, ctx) = toeplitz_ctx(3.0, 20_000);
        for r in 1..5u64 {
            for n in 0..r as usize {
                for k in 0..r as usize {
                    let y = nt.basis_term(m(r), n, m(r), k).unwrap();
                    let v = ctx.omega_tau(&y).unwrap();
                    let expect = if n == k { (r as f64).powf(-3.0) } else { 0.0 };
                    assert!((v.value - expect).norm() <= v.tail + 1e-15, "{r} {n} {k}: {v:?}");
                }
            }
            let a = nt.alpha(m(r), &nt.unit()).unwrap();
            let v = ctx.omega_tau(&a).unwrap();
            assert!((v.value.re - (r as f64).powf(-2.0)).abs() <= v.tail);
        }
        assert_eq!(ctx.kms_state(&nt.unit()).unwrap().value, Complex64::new(1.0, 0.0));
        let off = nt.basis_term(m(2), 0, m(3), 0).unwrap();
        assert_eq!(ctx.kms_state(&off).unwrap().value, Complex64::new(0.0, 0.0));
        let p = nt.basis_term(m(2), 0, m(2), 0).unwrap();
        let v = ctx.kms_state(&p).unwrap();
        assert!((v.value.re - 0.125).abs() <= v.tail);
        assert!(matches!(ctx.omega_tau(&off), Err(KmsError::Nt(NtError::NonCore(..)))));

        let lau = ProductSystem::additive_toeplitz();
        let params = KmsParameters::standard(&lau, 3.0, 2000, TraceSpec::haar(lau.engine())).unwrap();
        let lctx = KmsContext::new(&lau, params).unwrap();
        let lnt = NicaToeplitz::new(lau.clone());
        let z = lnt.embed_coefficient(CoefficientElement::laurent(&[1])).unwrap();
        assert_eq!(lctx.omega_tau(&z).unwrap().value, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn unit_is_exact_for_mixtures() {
        let sys = ProductSystem::affine_toeplitz();
        let mix = Moments::Mixture {
            components: vec![(0.1, Moments::Haar), (0.2, Moments::Poisson { radius: 0.3 }), (0.7, Moments::PointMass { theta: vec![0.4] })],
        };
        let tau = TraceSpec::new(Engine::Toeplitz, mix).unwrap();
        let params = KmsParameters::standard(&sys, 3.5, 3000, tau).unwrap();
        let ctx = KmsContext::new(&sys, params).unwrap();
        let nt = NicaToeplitz::new(sys);
        assert_eq!(ctx.kms_state(&nt.unit()).unwrap().value, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn ground_state_examples() {
        let sys = ProductSystem::affine_toeplitz();
        let nt = NicaToeplitz::new(sys);
        let tau = TraceSpec::haar(Engine::Toeplitz);
        let s = nt.embed_coefficient(CoefficientElement::toeplitz(1, 0)).unwrap();
        let ss = nt.multiply(&s, &s.adjoint()).unwrap();
        assert_eq!(ground_state(&ss, &tau).unwrap(), Complex64::new(1.0, 0.0));
        let p = nt.basis_term(m(2), 0, m(2), 0).unwrap();
        assert_eq!(ground_state(&p, &tau).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(ground_state(&nt.unit(), &tau).unwrap(), Complex64::new(1.0, 0.0));
        let vs = TraceSpec::new(Engine::Toeplitz, Moments::VectorState { index: 0 }).unwrap();
        let sts = nt.multiply(&s.adjoint(), &s).unwrap();
        assert_eq!(ground_state(&ss, &vs).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(ground_state(&sts, &vs).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn state_value_json() {
        let v = StateValue {
            value: Complex64::new(0.5, -0.25),
            tail: 1e-6,
            truncation: 100,
        };
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"value":[0.5,-0.25],"tail":1e-6,"truncation":100}"#);
        assert_eq!(serde_json::from_str::<StateValue>(&s).unwrap(), v);
    }

    #[test]
    fn fixed_shape_sum_matches_naive_sum() {
        let v: Vec<Complex64> = (0..5000).map(|i| Complex64::new(i as f64, -(i as f64) / 2.0)).collect();
        let s = fixed_shape_sum(&v);
        assert_eq!(s, Complex64::new(12_497_500.0, -6_248_750.0));
        assert_eq!(fixed_shape_sum(&[]), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn ground_limit() {
        let sys = ProductSystem::affine_toeplitz();
        let nt = NicaToeplitz::new(sys.clone());
        let tau = TraceSpec::point_mass(Engine::Toeplitz, vec![0.3]).unwrap();
        let y = nt
            .embed_coefficient(CoefficientElement::toeplitz(2, 0))
            .unwrap()
            .checked_add(&nt.basis_term(m(2), 1, m(2), 1).unwrap())
            .unwrap();
        let g = ground_state(&y, &tau).unwrap();
        let mut prev = f64::INFINITY;
        for beta in [5.0, 10.0, 20.0] {
            let params = KmsParameters::standard(&sys, beta, 2000, tau.clone()).unwrap();
            let d = (KmsContext::new(&sys, params).unwrap().kms_state(&y).unwrap().value - g).norm();
            assert!(d < prev / 10.0);
            prev = d;
        }
    }

    fn core_elements() -> impl Strategy<Value = Vec<(u64, u64, u64, u64, u64, i32, i32)>> {
        prop::collection::vec(
            (1u64..4).prop_flat_map(|s| (Just(s), 0..s, 0..s, 0u64..3, 0u64..3, -2i32..3, -2i32..3)),
            1..4,
        )
    }

    fn build(nt: &NicaToeplitz, spec: &[(u64, u64, u64, u64, u64, i32, i32)]) -> NtElement {
        let mut y = nt.zero();
        for &(s, j, k, a, b, re, im) in spec {
            let c = CoefficientElement::monomial(
                Engine::Toeplitz,
                CoeffMonomial::Toeplitz { m: a, n: b },
                Complex64::new(re as f64, im as f64),
            );
            y = y.checked_add(&nt.term(m(s), j as usize, m(s), k as usize, c).unwrap()).unwrap();
        }
        y
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn positivity(spec in core_elements(), theta in 0.0f64..6.28) {
            let sys = ProductSystem::affine_toeplitz();
            let nt = NicaToeplitz::new(sys.clone());
            let tau = TraceSpec::point_mass(Engine::Toeplitz, vec![theta]).unwrap();
            let ctx = KmsContext::new(&sys, KmsParameters::standard(&sys, 3.0, 500, tau).unwrap()).unwrap();
            let y = build(&nt, &spec);
            let v = ctx.omega_tau(&nt.multiply(&y.adjoint(), &y).unwrap()).unwrap();
            prop_assert!(v.value.re >= -v.tail - 1e-12);
            prop_assert!(v.value.im.abs() <= 1e-10);
        }

        #[test]
        fn monotone_refinement(spec in core_elements(), b in 20u64..200) {
            let sys = ProductSystem::affine_toeplitz();
            let nt = NicaToeplitz::new(sys.clone());
            let base = KmsParameters::standard(&sys, 3.0, b, TraceSpec::haar(Engine::Toeplitz)).unwrap();
            let y = build(&nt, &spec);
            let coarse = KmsContext::new(&sys, base.clone()).unwrap().omega_tau(&y).unwrap();
            let fine = KmsContext::new(&sys, base.with_bound(4 * b).unwrap()).unwrap().omega_tau(&y).unwrap();
            prop_assert!(fine.tail <= coarse.tail);
            prop_assert!((fine.value - coarse.value).norm() <= coarse.tail);
        }

        #[test]
        fn scaling_identity(s in 1u64..7, a in 0u64..4, b in 0u64..4) {
            let (nt, ctx) = toeplitz_ctx(3.0, 5000);
            let c = CoefficientElement::toeplitz(a, b);
            let base = ctx.omega_tau(&nt.embed_coefficient(c.clone()).unwrap()).unwrap();
            let w = (s as f64).powf(-3.0);
            for j in 0..s as usize {
                for l in 0..s as usize {
                    let v = nt.basis_term(m(s), j, m(1), 0).unwrap();
                    let u = nt.basis_term(m(s), l, m(1), 0).unwrap();
                    let y = nt.multiply_all(&[&v, &nt.embed_coefficient(c.clone()).unwrap(), &u.adjoint()]).unwrap();
                    let got = ctx.omega_tau(&y).unwrap();
                    let expect = if j == l { base.value * w } else { Complex64::new(0.0, 0.0) };
                    prop_assert!((got.value - expect).norm() <= got.tail + w * base.tail + 1e-12);
                }
            }
        }
    }
}
