//! Positive cones of lattice-ordered abelian groups.
//!
//! Two cones are built in: the multiplicative positive integers (`nat-mult`,
//! ordered by divisibility) and the additive naturals (`nat-add`, ordered as
//! usual). Elements are canonical integers; gauge degrees elsewhere in the
//! crate are ordered pairs `(s, r)` standing for `s r^{-1}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemigroupError {
    #[error("semigroup mismatch: {0} vs {1}")]
    Mismatch(SemigroupKind, SemigroupKind),
    #[error("{0} is not an element of {1}")]
    NotAnElement(u64, SemigroupKind),
    #[error("{divisor} does not divide {value} in {kind}")]
    NotADivisor {
        kind: SemigroupKind,
        value: u64,
        divisor: u64,
    },
    #[error("overflow computing {0}")]
    Overflow(&'static str),
    #[error("bound must be at least 1, got {0}")]
    BadBound(u64),
    #[error("beta = {beta} is not above the critical exponent {critical}")]
    BelowCritical { beta: f64, critical: f64 },
    #[error("growth law {growth:?} does not fit semigroup {kind}")]
    IncompatibleGrowth { kind: SemigroupKind, growth: GrowthLaw },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemigroupKind {
    #[serde(rename = "nat-mult")]
    NatMult,
    #[serde(rename = "nat-add")]
    NatAdd,
}

impl SemigroupKind {
    pub fn name(self) -> &'static str {
        match self {
            SemigroupKind::NatMult => "nat-mult",
            SemigroupKind::NatAdd => "nat-add",
        }
    }

    pub fn identity(self) -> SemigroupElement {
        SemigroupElement {
            kind: self,
            value: self.identity_value(),
        }
    }

    fn identity_value(self) -> u64 {
        match self {
            SemigroupKind::NatMult => 1,
            SemigroupKind::NatAdd => 0,
        }
    }

    pub fn element(self, value: u64) -> Result<SemigroupElement, SemigroupError> {
        SemigroupElement::new(self, value)
    }

    /// All elements whose canonical value is at most `bound`, ascending.
    pub fn enumerate(self, bound: u64) -> Result<TruncationSet, SemigroupError> {
        if bound < 1 {
            return Err(SemigroupError::BadBound(bound));
        }
        let start = self.identity_value();
        let elements = (start..=bound)
            .map(|value| SemigroupElement { kind: self, value })
            .collect();
        Ok(TruncationSet {
            kind: self,
            bound,
            elements,
        })
    }

    /// Whether the cone has minimal non-identity elements (atoms).
    pub fn has_minimal_elements(self) -> bool {
        match self {
            SemigroupKind::NatMult => true,
            SemigroupKind::NatAdd => true,
        }
    }

    /// Atoms up to `bound`: the primes for `nat-mult`, `{1}` for `nat-add`.
    pub fn atoms_up_to(self, bound: u64) -> Vec<SemigroupElement> {
        match self {
            SemigroupKind::NatMult => primes_up_to(bound)
                .into_iter()
                .map(|p| SemigroupElement { kind: self, value: p })
                .collect(),
            SemigroupKind::NatAdd => {
                if bound >= 1 {
                    vec![SemigroupElement { kind: self, value: 1 }]
                } else {
                    Vec::new()
                }
            }
        }
    }
}

impl fmt::Display for SemigroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SemigroupKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nat-mult" => Ok(SemigroupKind::NatMult),
            "nat-add" => Ok(SemigroupKind::NatAdd),
            other => Err(format!("unknown semigroup '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemigroupElement {
    kind: SemigroupKind,
    value: u64,
}

impl SemigroupElement {
    pub fn new(kind: SemigroupKind, value: u64) -> Result<Self, SemigroupError> {
        if kind == SemigroupKind::NatMult && value == 0 {
            return Err(SemigroupError::NotAnElement(value, kind));
        }
        Ok(SemigroupElement { kind, value })
    }

    pub fn kind(self) -> SemigroupKind {
        self.kind
    }

    pub fn value(self) -> u64 {
        self.value
    }

    pub fn is_identity(self) -> bool {
        self.value == self.kind.identity_value()
    }

    fn same(self, other: Self) -> Result<(), SemigroupError> {
        if self.kind != other.kind {
            Err(SemigroupError::Mismatch(self.kind, other.kind))
        } else {
            Ok(())
        }
    }

    pub fn multiply(self, other: Self) -> Result<Self, SemigroupError> {
        self.same(other)?;
        let value = match self.kind {
            SemigroupKind::NatMult => self.value.checked_mul(other.value),
            SemigroupKind::NatAdd => self.value.checked_add(other.value),
        }
        .ok_or(SemigroupError::Overflow("product"))?;
        Ok(SemigroupElement { kind: self.kind, value })
    }

    pub fn lub(self, other: Self) -> Result<Self, SemigroupError> {
        self.same(other)?;
        let value = match self.kind {
            SemigroupKind::NatMult => {
                let g = gcd(self.value, other.value);
                (self.value / g)
                    .checked_mul(other.value)
                    .ok_or(SemigroupError::Overflow("lcm"))?
            }
            SemigroupKind::NatAdd => self.value.max(other.value),
        };
        Ok(SemigroupElement { kind: self.kind, value })
    }

    pub fn glb(self, other: Self) -> Result<Self, SemigroupError> {
        self.same(other)?;
        let value = match self.kind {
            SemigroupKind::NatMult => gcd(self.value, other.value),
            SemigroupKind::NatAdd => self.value.min(other.value),
        };
        Ok(SemigroupElement { kind: self.kind, value })
    }

    /// `self ≤ other` in the lattice order.
    pub fn leq(self, other: Self) -> Result<bool, SemigroupError> {
        self.same(other)?;
        Ok(match self.kind {
            SemigroupKind::NatMult => other.value % self.value == 0,
            SemigroupKind::NatAdd => self.value <= other.value,
        })
    }

    /// `self · s^{-1}`, defined when `s ≤ self`.
    pub fn quotient(self, s: Self) -> Result<Self, SemigroupError> {
        if !s.leq(self)? {
            return Err(SemigroupError::NotADivisor {
                kind: self.kind,
                value: self.value,
                divisor: s.value,
            });
        }
        let value = match self.kind {
            SemigroupKind::NatMult => self.value / s.value,
            SemigroupKind::NatAdd => self.value - s.value,
        };
        Ok(SemigroupElement { kind: self.kind, value })
    }
}

impl fmt::Display for SemigroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// A finite, divisor-complete family of elements together with the bound
/// that generated it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationSet {
    kind: SemigroupKind,
    bound: u64,
    elements: Vec<SemigroupElement>,
}

impl TruncationSet {
    pub fn kind(&self) -> SemigroupKind {
        self.kind
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn elements(&self) -> &[SemigroupElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = SemigroupElement> + '_ {
        self.elements.iter().copied()
    }

    pub fn contains(&self, s: SemigroupElement) -> bool {
        s.kind == self.kind && s.value <= self.bound && s.value >= self.kind.identity_value()
    }

    /// Checks that the set contains `e`, is divisor-complete, and is closed
    /// under `∧` and under those `∨` that stay below the bound.
    pub fn validate(&self) -> Result<(), String> {
        if !self.elements.iter().any(|s| s.is_identity()) {
            return Err("identity missing".into());
        }
        for &s in &self.elements {
            for &r in &self.elements {
                let meet = s.glb(r).map_err(|e| e.to_string())?;
                if !self.contains(meet) {
                    return Err(format!("glb({s},{r}) = {meet} missing"));
                }
                let join = s.lub(r).map_err(|e| e.to_string())?;
                if join.value <= self.bound && !self.contains(join) {
                    return Err(format!("lub({s},{r}) = {join} missing"));
                }
                if r.leq(s).map_err(|e| e.to_string())? && !self.contains(r) {
                    return Err(format!("divisor {r} of {s} missing"));
                }
            }
        }
        Ok(())
    }
}

/// Growth law of a multiplicative function on the cone: `s^a` on `nat-mult`
/// or `b^n` on `nat-add`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum GrowthLaw {
    Power { exponent: f64 },
    Exponential { base: f64 },
}

impl GrowthLaw {
    pub fn ln_value(&self, s: SemigroupElement) -> f64 {
        match *self {
            GrowthLaw::Power { exponent } => exponent * (s.value as f64).ln(),
            GrowthLaw::Exponential { base } => s.value as f64 * base.ln(),
        }
    }

    pub fn value(&self, s: SemigroupElement) -> f64 {
        match *self {
            GrowthLaw::Power { exponent } => (s.value as f64).powf(exponent),
            GrowthLaw::Exponential { base } => base.powf(s.value as f64),
        }
    }

    fn fits(&self, kind: SemigroupKind) -> bool {
        matches!(
            (self, kind),
            (GrowthLaw::Power { .. }, SemigroupKind::NatMult)
                | (GrowthLaw::Exponential { .. }, SemigroupKind::NatAdd)
        )
    }
}

/// Scaling homomorphism `N : P → (0, ∞)` defining the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingHomomorphism {
    kind: SemigroupKind,
    law: GrowthLaw,
}

impl ScalingHomomorphism {
    pub fn new(kind: SemigroupKind, law: GrowthLaw) -> Result<Self, SemigroupError> {
        if !law.fits(kind) {
            return Err(SemigroupError::IncompatibleGrowth { kind, growth: law });
        }
        Ok(ScalingHomomorphism { kind, law })
    }

    pub fn kind(&self) -> SemigroupKind {
        self.kind
    }

    pub fn law(&self) -> GrowthLaw {
        self.law
    }

    pub fn value(&self, s: SemigroupElement) -> f64 {
        self.law.value(s)
    }

    pub fn ln_value(&self, s: SemigroupElement) -> f64 {
        self.law.ln_value(s)
    }

    /// `N(s)^{-β}`.
    pub fn weight(&self, s: SemigroupElement, beta: f64) -> f64 {
        if s.is_identity() {
            return 1.0;
        }
        (-beta * self.ln_value(s)).exp()
    }

    pub fn is_injective_on(&self, trunc: &TruncationSet) -> bool {
        let values: Vec<f64> = trunc.iter().map(|s| self.ln_value(s)).collect();
        values.windows(2).all(|w| w[1] > w[0])
    }
}

/// Critical exponent of `Σ_s N(s)^{-β} N_s`.
pub fn critical_exponent(scaling: &ScalingHomomorphism, weights: &GrowthLaw) -> Result<f64, SemigroupError> {
    match (scaling.law, *weights) {
        (GrowthLaw::Power { exponent: kappa }, GrowthLaw::Power { exponent: d })
            if scaling.kind == SemigroupKind::NatMult =>
        {
            Ok((d + 1.0) / kappa)
        }
        (GrowthLaw::Exponential { base: lambda }, GrowthLaw::Exponential { base: k })
            if scaling.kind == SemigroupKind::NatAdd =>
        {
            Ok(k.ln() / lambda.ln())
        }
        _ => Err(SemigroupError::IncompatibleGrowth {
            kind: scaling.kind,
            growth: *weights,
        }),
    }
}

/// Rigorous upper bound on `Σ_{s ∉ enumerate(B)} N(s)^{-β} N_s`.
///
/// Power laws use the integral test, exponential laws the geometric tail.
pub fn tail_bound(
    scaling: &ScalingHomomorphism,
    weights: &GrowthLaw,
    beta: f64,
    bound: u64,
) -> Result<f64, SemigroupError> {
    let critical = critical_exponent(scaling, weights)?;
    if !(beta > critical) {
        return Err(SemigroupError::BelowCritical { beta, critical });
    }
    match (scaling.law, *weights) {
        (GrowthLaw::Power { exponent: kappa }, GrowthLaw::Power { exponent: d }) => {
            // s^{d - κβ} is decreasing, so Σ_{s>B} ≤ ∫_B^∞ x^{d-κβ} dx.
            let gap = kappa * beta - d - 1.0;
            Ok((bound as f64).powf(-gap) / gap)
        }
        (GrowthLaw::Exponential { base: lambda }, GrowthLaw::Exponential { base: k }) => {
            let ratio = (k.ln() - beta * lambda.ln()).exp();
            // Σ_{n≥B} ρ^n, which also covers the n = B term.
            Ok(ratio.powf(bound as f64) / (1.0 - ratio))
        }
        _ => unreachable!("critical_exponent rejected mismatched laws"),
    }
}

/// Non-rigorous estimate of the same tail: twice the partial sum over
/// `enumerate(4B) \ enumerate(B)`.
pub fn tail_estimate(scaling: &ScalingHomomorphism, weights: &GrowthLaw, beta: f64, bound: u64) -> f64 {
    let start = bound + 1;
    let stop = bound.saturating_mul(4);
    let mut sum = 0.0;
    for v in start..=stop {
        let s = SemigroupElement {
            kind: scaling.kind,
            value: v,
        };
        sum += (weights.ln_value(s) - beta * scaling.ln_value(s)).exp();
    }
    2.0 * sum
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn primes_up_to(bound: u64) -> Vec<u64> {
    if bound < 2 {
        return Vec::new();
    }
    let n = bound as usize;
    let mut composite = vec![false; n + 1];
    let mut primes = Vec::new();
    for i in 2..=n {
        if !composite[i] {
            primes.push(i as u64);
            let mut j = i * i;
            while j <= n {
                composite[j] = true;
                j += i;
            }
        }
    }
    primes
}

/// Distinct prime factors of `n`, ascending.
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n % p == 0 {
            out.push(p);
            while n % p == 0 {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}
