//! Executable checks of the KMS condition, the trace property on the core,
//! the ground-state characterisation, trace reconstruction and the
//! inclusion-exclusion identity.
//!
//! Every check returns a [`CheckReport`]. Samplers are seeded ChaCha8 streams
//! and walk fiber pairs in ascending order, so a report is reproducible from
//! its seed.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::coeff::{CoeffError, CoeffMonomial, CoefficientElement, Engine, TraceSpec};
use crate::kms::{euler_product, ground_state, KmsContext, KmsError, KmsParameters, StateValue};
use crate::nt::{NicaToeplitz, NtElement, NtError};
use crate::product_system::{ProductSystem, SystemError, TraceSupport};
use crate::semigroup::{
    primes_up_to, tail_bound, SemigroupElement, SemigroupError, SemigroupKind, TruncationSet,
};

/// Tolerance for identities that hold up to floating roundoff only.
pub const STRUCTURAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Kms(#[from] KmsError),
    #[error(transparent)]
    Nt(#[from] NtError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error("{0}")]
    Invalid(String),
}

impl From<SemigroupError> for VerifyError {
    fn from(e: SemigroupError) -> Self {
        VerifyError::System(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub samples: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Value>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub details: BTreeMap<String, Value>,
}

impl CheckReport {
    pub fn builder(name: impl Into<String>, seed: Option<u64>) -> ReportBuilder {
        ReportBuilder {
            name: name.into(),
            seed,
            samples: 0,
            worst: None,
            first_failure: None,
            details: BTreeMap::new(),
        }
    }

    /// Report for a boolean structural property.
    pub fn from_flag(name: impl Into<String>, cases: usize, passed: bool, witness: Option<Value>) -> CheckReport {
        CheckReport {
            name: name.into(),
            seed: None,
            samples: cases,
            max_deviation: if passed { 0.0 } else { 1.0 },
            tolerance: 0.0,
            passed,
            witness: if passed { None } else { witness },
            details: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, key: &str, value: Value) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

/// Accumulates samples; the reported deviation and tolerance are those of the
/// sample with the largest excess `deviation - tolerance`.
#[derive(Clone, Debug)]
pub struct ReportBuilder {
    name: String,
    seed: Option<u64>,
    samples: usize,
    worst: Option<(f64, f64)>,
    first_failure: Option<Value>,
    details: BTreeMap<String, Value>,
}

impl ReportBuilder {
    pub fn record(&mut self, deviation: f64, tolerance: f64, witness: impl FnOnce() -> Value) {
        self.samples += 1;
        let excess = deviation - tolerance;
        let replace = match self.worst {
            None => true,
            Some((d, t)) => excess > d - t || excess.is_nan(),
        };
        if replace {
            self.worst = Some((deviation, tolerance));
        }
        if !(deviation <= tolerance) && self.first_failure.is_none() {
            self.first_failure = Some(witness());
        }
    }

    pub fn detail(&mut self, key: &str, value: Value) {
        self.details.insert(key.to_string(), value);
    }

    pub fn finish(self) -> CheckReport {
        let (max_deviation, tolerance) = self.worst.unwrap_or((0.0, 0.0));
        CheckReport {
            name: self.name,
            seed: self.seed,
            samples: self.samples,
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
            witness: self.first_failure,
            details: self.details,
        }
    }
}

/// Seeded source of random basis terms with fibers up to `max_fiber`.
#[derive(Clone, Debug)]
pub struct Sampler {
    rng: ChaCha8Rng,
    seed: u64,
    fibers: Vec<SemigroupElement>,
    max_exponent: u64,
    cursor: usize,
}

impl Sampler {
    pub fn new(system: &ProductSystem, seed: u64, max_fiber: u64) -> Result<Self, VerifyError> {
        let fibers = system.semigroup().enumerate(max_fiber)?.elements().to_vec();
        Ok(Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            fibers,
            max_exponent: 3,
            cursor: 0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fibers(&self) -> &[SemigroupElement] {
        &self.fibers
    }

    /// Next pair of fibers, cycling through all pairs in ascending order.
    pub fn next_fiber_pair(&mut self) -> (SemigroupElement, SemigroupElement) {
        let n = self.fibers.len();
        let i = self.cursor % (n * n);
        self.cursor += 1;
        (self.fibers[i / n], self.fibers[i % n])
    }

    pub fn fiber(&mut self) -> SemigroupElement {
        self.fibers[self.rng.gen_range(0..self.fibers.len())]
    }

    pub fn index(&mut self, system: &ProductSystem, s: SemigroupElement) -> Result<usize, VerifyError> {
        Ok(self.rng.gen_range(0..system.basis_count(s)?))
    }

    pub fn unit_interval(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn coefficient_monomial(&mut self, engine: Engine) -> CoeffMonomial {
        let e = self.max_exponent;
        match engine {
            Engine::Toeplitz => CoeffMonomial::Toeplitz {
                m: self.rng.gen_range(0..=e),
                n: self.rng.gen_range(0..=e),
            },
            Engine::Laurent { dim } => {
                CoeffMonomial::Laurent((0..dim).map(|_| self.rng.gen_range(-(e as i64)..=e as i64)).collect())
            }
            Engine::Scalar => CoeffMonomial::Unit,
        }
    }

    /// A monomial times a nonzero Gaussian-integer scalar.
    pub fn coefficient(&mut self, engine: Engine) -> CoefficientElement {
        let mono = self.coefficient_monomial(engine);
        let z = loop {
            let z = Complex64::new(self.rng.gen_range(-2..=2) as f64, self.rng.gen_range(-2..=2) as f64);
            if z != Complex64::new(0.0, 0.0) {
                break z;
            }
        };
        CoefficientElement::monomial(engine, mono, z)
    }

    /// `i_s(1_j) i_e(c) i_r(1_k)^*` with random indices and coefficient.
    pub fn term(&mut self, nt: &NicaToeplitz, s: SemigroupElement, r: SemigroupElement) -> Result<NtElement, VerifyError> {
        let sys = nt.system();
        let j = self.index(sys, s)?;
        let k = self.index(sys, r)?;
        let c = self.coefficient(sys.engine());
        Ok(nt.term(s, j, r, k, c)?)
    }
}

fn state_json(v: &StateValue) -> Value {
    serde_json::to_value(v).expect("state values serialize")
}

/// `ω(y₁y₂)` against `ω(y₂ σ_{iβ}(y₁))`.
pub fn check_kms(
    kms: &KmsContext,
    nt: &NicaToeplitz,
    sampler: &mut Sampler,
    n_samples: usize,
) -> Result<CheckReport, VerifyError> {
    let beta = kms.params().beta;
    let scaling = kms.params().scaling;
    let mut report = CheckReport::builder("kms_condition", Some(sampler.seed()));
    let mut inverted = 0usize;
    for i in 0..n_samples {
        let (s, r) = sampler.next_fiber_pair();
        let y1 = sampler.term(nt, s, r)?;
        // Half the samples pair y₁ with a term of inverse degree so that
        // the product has a nonzero diagonal part.
        let y2 = if i % 2 == 0 {
            inverted += 1;
            sampler.term(nt, r, s)?
        } else {
            let (g, h) = (sampler.fiber(), sampler.fiber());
            sampler.term(nt, g, h)?
        };
        let lhs = kms.kms_state(&nt.multiply(&y1, &y2)?)?;
        let shifted = y1.apply_dynamics(Complex64::new(0.0, beta), &scaling);
        let rhs = kms.kms_state(&nt.multiply(&y2, &shifted)?)?;
        let dev = (lhs.value - rhs.value).norm();
        let tol = lhs.tail + rhs.tail + STRUCTURAL_TOLERANCE;
        report.record(dev, tol, || {
            json!({"y1": y1.to_string(), "y2": y2.to_string(), "lhs": state_json(&lhs), "rhs": state_json(&rhs)})
        });
    }
    report.detail("beta", json!(beta));
    report.detail("truncation", json!(kms.bound()));
    report.detail("inverse_degree_pairs", json!(inverted));
    Ok(report.finish())
}

/// Which case of the trace argument a pair of core terms falls into, read
/// from the `s∧r`-components of the outer indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceCase {
    /// `k(s∧r) = m(s∧r)` and `n(s∧r) = j(s∧r)`.
    Matching,
    /// Only `m(s∧r) ≠ k(s∧r)`.
    RightMismatch,
    /// Only `j(s∧r) ≠ n(s∧r)`.
    LeftMismatch,
    /// Both components differ.
    BothMismatch,
}

impl TraceCase {
    pub const ALL: [TraceCase; 4] = [
        TraceCase::Matching,
        TraceCase::RightMismatch,
        TraceCase::LeftMismatch,
        TraceCase::BothMismatch,
    ];

    pub fn number(self) -> usize {
        match self {
            TraceCase::Matching => 1,
            TraceCase::RightMismatch => 2,
            TraceCase::LeftMismatch => 3,
            TraceCase::BothMismatch => 4,
        }
    }
}

fn glb_component(system: &ProductSystem, s: SemigroupElement, g: SemigroupElement, i: usize) -> Result<usize, VerifyError> {
    let q = s.quotient(g)?;
    Ok(system.index_split(g, q, i).0)
}

/// Replaces the `g`-component of index `i` in fiber `s`.
fn with_glb_component(system: &ProductSystem, s: SemigroupElement, g: SemigroupElement, i: usize, c: usize) -> Result<usize, VerifyError> {
    let q = s.quotient(g)?;
    let (_, rest) = system.index_split(g, q, i);
    Ok(system.index_map(g, q, c, rest))
}

pub fn classify_trace_case(
    system: &ProductSystem,
    (s, j, k): (SemigroupElement, usize, usize),
    (r, m, n): (SemigroupElement, usize, usize),
) -> Result<TraceCase, VerifyError> {
    let g = s.glb(r)?;
    let right = glb_component(system, s, g, k)? != glb_component(system, r, g, m)?;
    let left = glb_component(system, s, g, j)? != glb_component(system, r, g, n)?;
    Ok(match (right, left) {
        (false, false) => TraceCase::Matching,
        (true, false) => TraceCase::RightMismatch,
        (false, true) => TraceCase::LeftMismatch,
        (true, true) => TraceCase::BothMismatch,
    })
}

/// `ω_τ(y₁y₂) = ω_τ(y₂y₁)` for core terms `y₁ = i_s(1_j) i_e(ab*) i_s(1_k)^*`
/// and `y₂ = i_r(1_m) i_e(cd*) i_r(1_n)^*`.
pub fn check_core_trace(
    kms: &KmsContext,
    nt: &NicaToeplitz,
    sampler: &mut Sampler,
    n_samples: usize,
) -> Result<CheckReport, VerifyError> {
    let sys = nt.system().clone();
    let engine = sys.engine();
    let mut report = CheckReport::builder("core_trace", Some(sampler.seed()));
    let mut counts: BTreeMap<TraceCase, usize> = BTreeMap::new();
    let mut coprime_pairs = 0usize;
    for i in 0..n_samples {
        let (s, r) = sampler.next_fiber_pair();
        let g = s.glb(r)?;
        let j = sampler.index(&sys, s)?;
        let k = sampler.index(&sys, s)?;
        let mut m = sampler.index(&sys, r)?;
        let mut n = sampler.index(&sys, r)?;
        let width = sys.basis_count(g)?;
        if width > 1 {
            // Steer the glb components towards the case this sample targets.
            let target = TraceCase::ALL[i % 4];
            let kc = glb_component(&sys, s, g, k)?;
            let jc = glb_component(&sys, s, g, j)?;
            let other = |c: usize, off: usize| (c + off) % width;
            let off = 1 + sampler.below(width - 1);
            let (mc, nc) = match target {
                TraceCase::Matching => (kc, jc),
                TraceCase::RightMismatch => (other(kc, off), jc),
                TraceCase::LeftMismatch => (kc, other(jc, off)),
                TraceCase::BothMismatch => (other(kc, off), other(jc, off)),
            };
            m = with_glb_component(&sys, r, g, m, mc)?;
            n = with_glb_component(&sys, r, g, n, nc)?;
        }
        let case = classify_trace_case(&sys, (s, j, k), (r, m, n))?;
        *counts.entry(case).or_default() += 1;
        if g.is_identity() && !s.is_identity() && !r.is_identity() {
            coprime_pairs += 1;
        }
        let ab = sampler.coefficient(engine);
        let ab = ab.checked_mul(&sampler.coefficient(engine).adjoint())?;
        let cd = sampler.coefficient(engine);
        let cd = cd.checked_mul(&sampler.coefficient(engine).adjoint())?;
        let y1 = nt.term(s, j, s, k, ab)?;
        let y2 = nt.term(r, m, r, n, cd)?;
        let lhs = kms.omega_tau(&nt.multiply(&y1, &y2)?)?;
        let rhs = kms.omega_tau(&nt.multiply(&y2, &y1)?)?;
        let dev = (lhs.value - rhs.value).norm();
        let tol = lhs.tail + rhs.tail + STRUCTURAL_TOLERANCE;
        report.record(dev, tol, || {
            json!({"y1": y1.to_string(), "y2": y2.to_string(), "case": case.number(),
                   "lhs": state_json(&lhs), "rhs": state_json(&rhs)})
        });
    }
    let case_counts: BTreeMap<String, usize> = TraceCase::ALL
        .iter()
        .map(|c| (format!("case_{}", c.number()), counts.get(c).copied().unwrap_or(0)))
        .collect();
    report.detail("cases", json!(case_counts));
    report.detail("coprime_pairs", json!(coprime_pairs));
    report.detail("beta", json!(kms.params().beta));
    Ok(report.finish())
}

/// Ground states vanish off degree `(e, e)` and restrict to `τ(ab*)` there.
pub fn check_ground(
    trace: &TraceSpec,
    nt: &NicaToeplitz,
    sampler: &mut Sampler,
    n_samples: usize,
) -> Result<CheckReport, VerifyError> {
    let sys = nt.system().clone();
    let engine = sys.engine();
    let scaling = sys.default_scaling();
    let mut report = CheckReport::builder("ground_state", Some(sampler.seed()));
    let (mut off_identity, mut identity, mut unbounded) = (0usize, 0usize, 0usize);
    for _ in 0..n_samples {
        let (s, r) = sampler.next_fiber_pair();
        if s.is_identity() && r.is_identity() {
            identity += 1;
            let a = sampler.coefficient(engine);
            let b = sampler.coefficient(engine);
            let y = nt.multiply(&nt.embed_coefficient(a.clone())?, &nt.embed_coefficient(b.clone())?.adjoint())?;
            let got = ground_state(&y, trace)?;
            let expect = trace.eval(&a.checked_mul(&b.adjoint())?)?;
            report.record((got - expect).norm(), 0.0, || {
                json!({"a": a.to_string(), "b": b.to_string(), "got": [got.re, got.im], "expected": [expect.re, expect.im]})
            });
        } else {
            off_identity += 1;
            // Diagonal terms i_s(ξ)i_s(η)^* with s > e, and mixed degrees.
            let y = if sampler.below(2) == 0 && !s.is_identity() {
                sampler.term(nt, s, s)?
            } else {
                sampler.term(nt, s, r)?
            };
            let got = ground_state(&y, trace)?;
            report.record(got.norm(), 0.0, || json!({"y": y.to_string(), "got": [got.re, got.im]}));
        }
        // Boundedness of z ↦ ω̃(y₁σ_z(y₂)) on the upper half plane forces
        // ω̃(y₁y₂) = 0 whenever y₂ has degree (g, h) with N(g) < N(h).
        let (g, h) = (sampler.fiber(), sampler.fiber());
        if scaling.value(g) < scaling.value(h) {
            unbounded += 1;
            let y1 = {
                let (a, b) = (sampler.fiber(), sampler.fiber());
                sampler.term(nt, a, b)?
            };
            let y2 = sampler.term(nt, g, h)?;
            let got = ground_state(&nt.multiply(&y1, &y2)?, trace)?;
            report.record(got.norm(), 0.0, || {
                json!({"y1": y1.to_string(), "y2": y2.to_string(), "got": [got.re, got.im]})
            });
        }
    }
    report.detail("off_identity_samples", json!(off_identity));
    report.detail("identity_samples", json!(identity));
    report.detail("growth_samples", json!(unbounded));
    report.detail("tracial", json!(trace.is_tracial()));
    Ok(report.finish())
}

/// `|ω(i_s(1_j) i_e(a) i_s(1_l)^*) - δ_{jl} N(s)^{-β} ω(i_e(a))|` for every
/// fiber in `fibers`, all `j, l` and the given generators.
pub fn check_scaling_identity(
    kms: &KmsContext,
    nt: &NicaToeplitz,
    fibers: &[SemigroupElement],
    generators: &[CoeffMonomial],
) -> Result<CheckReport, VerifyError> {
    let sys = nt.system().clone();
    let beta = kms.params().beta;
    let scaling = kms.params().scaling;
    let e = sys.identity();
    let mut report = CheckReport::builder("scaling_identity", None);
    let mut off_diagonal = 0usize;
    for a in generators {
        let c = CoefficientElement::try_monomial(sys.engine(), a.clone(), Complex64::new(1.0, 0.0))?;
        let ia = nt.embed_coefficient(c)?;
        let base = kms.omega_tau(&ia)?;
        for &s in fibers {
            let w = scaling.weight(s, beta);
            let count = sys.basis_count(s)?;
            for j in 0..count {
                for l in 0..count {
                    let vj = nt.basis_term(s, j, e, 0)?;
                    let vl = nt.basis_term(s, l, e, 0)?;
                    let y = nt.multiply_all(&[&vj, &ia, &vl.adjoint()])?;
                    let got = kms.omega_tau(&y)?;
                    let (expect, tol) = if j == l {
                        (base.value * w, got.tail + w * base.tail + STRUCTURAL_TOLERANCE)
                    } else {
                        off_diagonal += 1;
                        (Complex64::new(0.0, 0.0), 0.0)
                    };
                    report.record((got.value - expect).norm(), tol, || {
                        json!({"s": s.value(), "j": j, "l": l, "a": format!("{a:?}"), "got": state_json(&got),
                               "expected": [expect.re, expect.im]})
                    });
                }
            }
        }
    }
    report.detail("off_diagonal_exact", json!(off_diagonal));
    Ok(report.finish())
}

/// `kms_state(y, β) → ground_state(y)` along increasing `β`, with the gap
/// at the last `β` compared against `tolerance`.
pub fn check_ground_limit(
    system: &ProductSystem,
    trace: &TraceSpec,
    ys: &[NtElement],
    betas: &[f64],
    bound: u64,
    tolerance: f64,
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::builder("ground_limit", None);
    let contexts: Vec<KmsContext> = betas
        .iter()
        .map(|&b| KmsContext::new(system, KmsParameters::standard(system, b, bound, trace.clone())?))
        .collect::<Result<_, KmsError>>()?;
    let mut shrinking = true;
    for y in ys {
        let g = ground_state(y, trace)?;
        let gaps: Vec<f64> = contexts
            .iter()
            .map(|c| Ok((c.kms_state(y)?.value - g).norm()))
            .collect::<Result<_, KmsError>>()?;
        shrinking &= gaps.windows(2).all(|w| w[1] <= w[0]);
        let last = *gaps.last().unwrap_or(&0.0);
        report.record(last, tolerance, || json!({"y": y.to_string(), "gaps": gaps}));
    }
    report.detail("betas", json!(betas));
    report.detail("monotone", json!(shrinking));
    let mut r = report.finish();
    if !shrinking {
        r.passed = false;
    }
    Ok(r)
}

/// `[i_e(a), α_s(1)] = 0` as normal forms.
pub fn check_commutation(
    nt: &NicaToeplitz,
    generators: &[CoefficientElement],
    fibers: &[SemigroupElement],
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::builder("core_commutation", None);
    let one = nt.unit();
    for a in generators {
        let ia = nt.embed_coefficient(a.clone())?;
        for &s in fibers {
            let comm = nt.commutator(&ia, &nt.alpha(s, &one)?)?;
            let dev = if comm.is_zero() { 0.0 } else { comm.distance(&nt.zero()).max(f64::MIN_POSITIVE) };
            report.record(dev, 0.0, || json!({"a": a.to_string(), "s": s.value(), "commutator": comm.to_string()}));
        }
    }
    Ok(report.finish())
}

/// Euler partial product against the truncated partition function.
///
/// Both lie below `ζ_N(β)`; the product misses at most `Σ_{n>P} n^{-σ}` and
/// the partial sum misses its tail, so the larger of the two bounds them.
pub fn check_euler(system: &ProductSystem, beta: f64, primes_bound: u64, zeta_bound: u64) -> Result<CheckReport, VerifyError> {
    let scaling = system.default_scaling();
    let product = euler_product(system, &scaling, beta, primes_bound)?.re;
    let params = KmsParameters::standard(system, beta, zeta_bound, TraceSpec::haar(system.engine()))?;
    let partial = crate::kms::zeta(system, &params)?;
    let d = match system.basis_growth() {
        crate::semigroup::GrowthLaw::Power { exponent } => exponent,
        _ => return Err(KmsError::WrongInstance.into()),
    };
    let sigma = d * (beta - 1.0);
    let product_gap = (primes_bound as f64).powf(1.0 - sigma) / (sigma - 1.0);
    let tol = product_gap.max(partial.tail);
    let dev = (product - partial.value.re).abs();
    let mut report = CheckReport::builder("euler_product", None);
    report.record(dev, tol, || json!({"product": product, "partial_sum": partial.value.re}));
    report.detail("product", json!(product));
    report.detail("partial_sum", json!(partial.value.re));
    report.detail("primes_bound", json!(primes_bound));
    report.detail("zeta_bound", json!(zeta_bound));
    Ok(report.finish())
}

/// Structural validation and the co-prime pair condition as reports.
pub fn check_structure(system: &ProductSystem, bound: u64) -> Result<Vec<CheckReport>, VerifyError> {
    let trunc = system.semigroup().enumerate(bound)?;
    let validation = system.validate(&trunc, &system.default_generators());
    let mut out: Vec<CheckReport> = validation
        .checks
        .iter()
        .map(|c| {
            CheckReport::from_flag(
                format!("structure.{}", c.name),
                c.cases,
                c.passed,
                c.witness.clone().map(Value::String),
            )
        })
        .collect();
    let coprime = system.check_coprime_pairs(&trunc);
    out.push(CheckReport::from_flag(
        "structure.coprime_pairs",
        coprime.pairs_checked,
        coprime.holds,
        coprime.witness.map(|w| serde_json::to_value(w).expect("witness serializes")),
    ));
    for r in &mut out {
        r.details.insert("system".into(), json!(system.name()));
        r.details.insert("bound".into(), json!(bound));
    }
    Ok(out)
}

/// How the vanishing condition on fiberwise traces was met.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConditionStatus {
    /// `ftr_s(a) = 0` for every `s ∉ F_a ∪ {e}` in the truncation set.
    Strict,
    /// Some nonzero `ftr_s(a)` lies outside `F_a`, but every such `s` lies
    /// above an element of `F_a'`, which is what the sieve needs.
    Sieve { outside: Vec<u64> },
    /// `F_a'` was cut off; fibers above no element of it are bounded by
    /// `residual`.
    Cutoff { cutoff: u64, residual: f64 },
    /// A nonzero `ftr_s(a)` lies above no element of `F_a'`.
    Violated { witness: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionContext {
    pub beta: f64,
    pub trace: TraceSpec,
    pub a: CoeffMonomial,
    /// `F_a'`: pairwise incomparable generators.
    pub primes: Vec<SemigroupElement>,
    /// `F_a = {p_J : ∅ ≠ J ⊆ F_a'}`.
    pub closure: Vec<SemigroupElement>,
    pub truncation: TruncationSet,
    pub prime_cutoff: Option<u64>,
}

fn join_all(elems: &[SemigroupElement], e: SemigroupElement) -> Result<SemigroupElement, SemigroupError> {
    elems.iter().try_fold(e, |acc, &p| acc.lub(p))
}

/// Subsets of `items` as bitmasks in ascending order.
fn subsets(n: usize) -> impl Iterator<Item = u64> {
    assert!(n < 63, "too many generators");
    0..(1u64 << n)
}

fn pick(items: &[SemigroupElement], mask: u64) -> Vec<SemigroupElement> {
    items
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, p)| *p)
        .collect()
}

impl ReconstructionContext {
    /// Derives `F_a'` from the trace support of `a`: its minimal elements
    /// when finite, otherwise the atoms up to `prime_cutoff`.
    pub fn new(
        system: &ProductSystem,
        beta: f64,
        trace: TraceSpec,
        a: CoeffMonomial,
        truncation: TruncationSet,
        prime_cutoff: Option<u64>,
    ) -> Result<Self, VerifyError> {
        let kind = system.semigroup();
        let primes: Vec<SemigroupElement> = match system.trace_support(&a) {
            TraceSupport::Finite(support) => {
                let mut minimal = Vec::new();
                for &s in &support {
                    let mut is_min = true;
                    for &t in &support {
                        if t != s && t.leq(s)? {
                            is_min = false;
                            break;
                        }
                    }
                    if is_min {
                        minimal.push(s);
                    }
                }
                minimal
            }
            TraceSupport::Unbounded => match prime_cutoff {
                Some(p) => kind.atoms_up_to(p),
                None => Vec::new(),
            },
        };
        let e = kind.identity();
        let mut closure = BTreeSet::new();
        for mask in subsets(primes.len()).skip(1) {
            closure.insert(join_all(&pick(&primes, mask), e)?);
        }
        let ctx = ReconstructionContext {
            beta,
            trace,
            a,
            primes,
            closure: closure.into_iter().collect(),
            truncation,
            prime_cutoff,
        };
        ctx.check_strictly_closed()?;
        Ok(ctx)
    }

    pub fn unbounded_support(&self, system: &ProductSystem) -> bool {
        matches!(system.trace_support(&self.a), TraceSupport::Unbounded)
    }

    /// `F_a` is `∨`-closed, and every `r ≠ e` below one of its elements lies
    /// in it.
    pub fn check_strictly_closed(&self) -> Result<(), VerifyError> {
        let set: BTreeSet<SemigroupElement> = self.closure.iter().copied().collect();
        for &s in &self.closure {
            for &t in &self.closure {
                if !set.contains(&s.lub(t)?) {
                    return Err(VerifyError::Invalid(format!("F_a is not ∨-closed: {s} ∨ {t}")));
                }
            }
            let below: Vec<u64> = match s.kind() {
                SemigroupKind::NatMult => (2..=s.value()).filter(|d| s.value() % d == 0).collect(),
                SemigroupKind::NatAdd => (1..=s.value()).collect(),
            };
            for v in below {
                let r = s.kind().element(v)?;
                if !set.contains(&r) {
                    return Err(VerifyError::Invalid(format!("F_a is not strictly ∨-closed: {r} ≤ {s}")));
                }
            }
        }
        Ok(())
    }

    fn coefficient(&self, engine: Engine) -> Result<CoefficientElement, VerifyError> {
        Ok(CoefficientElement::try_monomial(engine, self.a.clone(), Complex64::new(1.0, 0.0))?)
    }

    /// Scans `ftr_s(a)` over the truncation set.
    pub fn condition(&self, system: &ProductSystem) -> Result<ConditionStatus, VerifyError> {
        let a = self.coefficient(system.engine())?;
        let in_closure: BTreeSet<SemigroupElement> = self.closure.iter().copied().collect();
        let mut outside = Vec::new();
        for s in self.truncation.iter() {
            if s.is_identity() || in_closure.contains(&s) {
                continue;
            }
            if self.trace.eval(&system.fiberwise_trace(s, &a))?.norm() == 0.0 && system.fiberwise_trace(s, &a).is_zero() {
                continue;
            }
            let mut covered = false;
            for &p in &self.primes {
                if p.leq(s)? {
                    covered = true;
                    break;
                }
            }
            if !covered && !self.unbounded_support(system) {
                return Ok(ConditionStatus::Violated { witness: s.value() });
            }
            if covered {
                outside.push(s.value());
            }
        }
        if self.unbounded_support(system) {
            let cutoff = self.prime_cutoff.unwrap_or(0);
            let residual = self.residual_bound(system)?;
            return Ok(ConditionStatus::Cutoff { cutoff, residual });
        }
        if outside.is_empty() {
            Ok(ConditionStatus::Strict)
        } else {
            Ok(ConditionStatus::Sieve { outside })
        }
    }

    /// Bound on the contribution of fibers above no element of `F_a'` when
    /// `F_a'` is a cutoff of an unbounded support.
    fn residual_bound(&self, system: &ProductSystem) -> Result<f64, VerifyError> {
        let a = self.coefficient(system.engine())?;
        match system.semigroup() {
            // Every n ≥ 1 lies above the atom 1.
            SemigroupKind::NatAdd => Ok(0.0),
            // s > 1 avoiding all primes ≤ P satisfies s > P.
            SemigroupKind::NatMult => {
                let cutoff = self.prime_cutoff.unwrap_or(1);
                Ok(a.one_norm()
                    * tail_bound(&system.default_scaling(), &system.basis_growth(), self.beta, cutoff)?)
            }
        }
    }

    /// `λ_s = N_s^{-β} τ(ftr_s(a))` for `s ∈ F_a`.
    pub fn lambda_weights(&self, system: &ProductSystem) -> Result<BTreeMap<SemigroupElement, Complex64>, VerifyError> {
        let a = self.coefficient(system.engine())?;
        let mut out = BTreeMap::new();
        for &s in &self.closure {
            let n = system.basis_count(s)? as f64;
            let v = self.trace.eval(&system.fiberwise_trace(s, &a))? * n.powf(-self.beta);
            out.insert(s, v);
        }
        Ok(out)
    }
}

/// Free-function form of [`ReconstructionContext::lambda_weights`].
pub fn lambda_weights(
    ctx: &ReconstructionContext,
    system: &ProductSystem,
) -> Result<BTreeMap<SemigroupElement, Complex64>, VerifyError> {
    ctx.lambda_weights(system)
}

/// Both double sums of the inclusion-exclusion identity over `F_a'`.
pub fn check_inclusion_exclusion(ctx: &ReconstructionContext, system: &ProductSystem) -> Result<CheckReport, VerifyError> {
    if ctx.primes.is_empty() {
        return Err(VerifyError::Invalid("F_a' is empty".into()));
    }
    let lambda = ctx.lambda_weights(system)?;
    let e = system.identity();
    let mut first = Complex64::new(0.0, 0.0);
    let mut second = Complex64::new(0.0, 0.0);
    for mask in subsets(ctx.primes.len()).skip(1) {
        let j = pick(&ctx.primes, mask);
        let pj = join_all(&j, e)?;
        first += lambda[&pj];
        let sign = if j.len() % 2 == 0 { 1.0 } else { -1.0 };
        let mut inner = Complex64::new(0.0, 0.0);
        for (&s, &l) in &lambda {
            if pj.leq(s)? {
                inner += l;
            }
        }
        second += inner * sign;
    }
    let total = first + second;
    let scale: f64 = lambda.values().map(|l| l.norm()).sum();
    let mut report = CheckReport::builder("inclusion_exclusion", None);
    report.record(total.norm(), STRUCTURAL_TOLERANCE, || {
        json!({"a": format!("{:?}", ctx.a), "primes": ctx.primes.iter().map(|p| p.value()).collect::<Vec<_>>(),
               "first": [first.re, first.im], "second": [second.re, second.im]})
    });
    report.detail("primes", json!(ctx.primes.iter().map(|p| p.value()).collect::<Vec<_>>()));
    report.detail("lambda_mass", json!(scale));
    Ok(report.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Reconstruction {
    Value {
        value: [f64; 2],
        /// Bound on `|value - τ(a)|` beyond roundoff.
        bound: f64,
        condition: ConditionStatus,
        /// The reconstruction argument assumes `P` has no non-trivial minimal
        /// elements; false here means the run proceeded without it.
        minimal_elements_hypothesis: bool,
        subsets_evaluated: usize,
        subsets_skipped: usize,
    },
    NotApplicable {
        reason: String,
    },
}

impl Reconstruction {
    pub fn value(&self) -> Option<Complex64> {
        match self {
            Reconstruction::Value { value, .. } => Some(Complex64::new(value[0], value[1])),
            Reconstruction::NotApplicable { .. } => None,
        }
    }
}

/// `ζ_B · Σ_{J ⊆ F_a'} (-1)^{|J|} ω_τ(i_e(a) α_{p_J}(1))`, which recovers
/// `τ(a)` once every fiber with nonzero fiberwise trace lies above `F_a'`.
pub fn reconstruct_trace(
    ctx: &ReconstructionContext,
    nt: &NicaToeplitz,
    kms: &KmsContext,
) -> Result<Reconstruction, VerifyError> {
    let system = nt.system();
    if kms.params().beta != ctx.beta || kms.params().trace != ctx.trace || kms.params().truncation != ctx.truncation {
        return Err(VerifyError::Invalid("reconstruction context and KMS parameters disagree".into()));
    }
    if ctx.unbounded_support(system) && ctx.prime_cutoff.is_none() {
        return Ok(Reconstruction::NotApplicable {
            reason: "fiberwise traces of a never vanish and no prime cutoff was given".into(),
        });
    }
    let condition = ctx.condition(system)?;
    let bound = match &condition {
        ConditionStatus::Violated { witness } => {
            return Ok(Reconstruction::NotApplicable {
                reason: format!("fiberwise trace at s = {witness} lies above no element of F_a'"),
            })
        }
        ConditionStatus::Cutoff { residual, .. } => *residual,
        _ => 0.0,
    };
    let a = nt.embed_coefficient(ctx.coefficient(system.engine())?)?;
    let one = nt.unit();
    let e = system.identity();
    let mut sum = Complex64::new(0.0, 0.0);
    let (mut evaluated, mut skipped) = (0usize, 0usize);
    for mask in subsets(ctx.primes.len()) {
        let j = pick(&ctx.primes, mask);
        let pj = join_all(&j, e)?;
        // No truncation element lies above p_J, so the state value is 0.
        if !ctx.truncation.contains(pj) {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let y = nt.multiply(&a, &nt.alpha(pj, &one)?)?;
        let v = kms.omega_tau(&y)?.value;
        if j.len() % 2 == 0 {
            sum += v;
        } else {
            sum -= v;
        }
    }
    let value = sum * kms.zeta().value;
    Ok(Reconstruction::Value {
        value: [value.re, value.im],
        bound,
        condition,
        minimal_elements_hypothesis: !system.semigroup().has_minimal_elements(),
        subsets_evaluated: evaluated,
        subsets_skipped: skipped,
    })
}

/// Reconstruction report: `|reconstruct_trace(a) - τ(a)|` within the
/// residual bound plus roundoff.
pub fn check_reconstruction(
    ctx: &ReconstructionContext,
    nt: &NicaToeplitz,
    kms: &KmsContext,
) -> Result<CheckReport, VerifyError> {
    let rec = reconstruct_trace(ctx, nt, kms)?;
    let expect = ctx.trace.eval(&ctx.coefficient(nt.system().engine())?)?;
    let mut report = CheckReport::builder("reconstruction", None);
    match &rec {
        Reconstruction::Value { bound, .. } => {
            let got = rec.value().expect("value");
            report.record((got - expect).norm(), bound + STRUCTURAL_TOLERANCE, || {
                json!({"a": format!("{:?}", ctx.a), "got": [got.re, got.im], "expected": [expect.re, expect.im]})
            });
        }
        Reconstruction::NotApplicable { .. } => {}
    }
    report.detail("reconstruction", serde_json::to_value(&rec).expect("serializes"));
    report.detail("a", json!(format!("{:?}", ctx.a)));
    Ok(report.finish())
}

/// Primes up to `bound` as semigroup elements.
pub fn prime_elements(bound: u64) -> Vec<SemigroupElement> {
    primes_up_to(bound)
        .into_iter()
        .map(|p| SemigroupKind::NatMult.element(p).expect("primes are positive"))
        .collect()
}
