//! Text syntax for coefficients and Nica-Toeplitz elements.
//!
//! ```text
//! elem   := ["-"] term {("+" | "-") term}
//! term   := factor {["*"] factor}
//! factor := number ["i"] | "i" | "(" elem ")"
//!         | "i[" fiber "](" coords ")" | "adj(" elem ")"
//!         | "alpha[" fiber "](" elem ")" | "E(" elem ")"
//! coords := cexpr "@" index {"," cexpr "@" index}
//! cexpr  := ["-"] cterm {("+" | "-") cterm}
//! cterm  := cfactor {["*"] cfactor}
//! cfactor:= number ["i"] | "i" | "(" cexpr ")" | "S" ["^" n] | "S*" ["^" n]
//!         | "z" ["^" k] | "z" K ["^" k]
//! ```
//!
//! Whitespace is ignored. Canonical printing of [`NtElement`] parses back to
//! the same element.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

use crate::coeff::{CoeffMonomial, CoefficientElement, Engine};
use crate::nt::{NicaToeplitz, NtElement, NtError};
use crate::product_system::SystemError;
use crate::semigroup::SemigroupElement;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("parse error at position {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DslError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] NtError),
}

impl From<SystemError> for DslError {
    fn from(e: SystemError) -> Self {
        DslError::Eval(e.into())
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    nt: Option<&'a NicaToeplitz>,
    engine: Engine,
}

impl fmt::Debug for Parser<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Parser at {}", self.pos)
    }
}

impl<'a> Parser<'a> {
    fn new(src: &str, nt: Option<&'a NicaToeplitz>, engine: Engine) -> Self {
        Parser {
            chars: src.chars().collect(),
            pos: 0,
            nt,
            engine,
        }
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, DslError> {
        Err(ParseError {
            position: self.pos,
            message: message.into(),
        }
        .into())
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    /// Next non-whitespace character after the current one.
    fn peek_after(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars[self.pos + 1..].iter().copied().find(|c| !c.is_whitespace())
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), DslError> {
        if self.eat(c) {
            Ok(())
        } else {
            match self.peek() {
                Some(found) => self.error(format!("expected '{c}', found '{found}'")),
                None => self.error(format!("expected '{c}', found end of input")),
            }
        }
    }

    /// Matches a keyword followed by `next` without consuming on failure.
    fn eat_keyword(&mut self, word: &str, next: char) -> bool {
        self.skip_ws();
        let start = self.pos;
        for w in word.chars() {
            if self.chars.get(self.pos) != Some(&w) {
                self.pos = start;
                return false;
            }
            self.pos += 1;
        }
        if self.peek() == Some(next) {
            self.pos += 1;
            true
        } else {
            self.pos = start;
            false
        }
    }

    fn finish(&mut self) -> Result<(), DslError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.error(format!("unexpected '{c}'")),
        }
    }

    fn unsigned(&mut self) -> Result<u64, DslError> {
        self.skip_ws();
        let start = self.pos;
        while self.chars.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.error("expected a nonnegative integer");
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse().or_else(|_| {
            self.pos = start;
            self.error("integer out of range")
        })
    }

    fn signed(&mut self) -> Result<i64, DslError> {
        let neg = self.eat('-');
        if !neg {
            self.eat('+');
        }
        let start = self.pos;
        let v = self.unsigned()?;
        let v = i64::try_from(v).or_else(|_| {
            self.pos = start;
            self.error("integer out of range")
        })?;
        Ok(if neg { -v } else { v })
    }

    fn optional_power(&mut self) -> Result<u64, DslError> {
        if self.eat('^') {
            self.unsigned()
        } else {
            Ok(1)
        }
    }

    /// Decimal literal with optional exponent and optional `i` suffix.
    fn number(&mut self) -> Result<Complex64, DslError> {
        self.skip_ws();
        let start = self.pos;
        let digit = |p: &Self, i: usize| p.chars.get(i).is_some_and(|c| c.is_ascii_digit());
        while digit(self, self.pos) {
            self.pos += 1;
        }
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            while digit(self, self.pos) {
                self.pos += 1;
            }
        }
        if matches!(self.chars.get(self.pos), Some('e') | Some('E')) {
            let mut p = self.pos + 1;
            if matches!(self.chars.get(p), Some('+') | Some('-')) {
                p += 1;
            }
            if digit(self, p) {
                while digit(self, p) {
                    p += 1;
                }
                self.pos = p;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let v: f64 = match text.parse() {
            Ok(v) => v,
            Err(_) => {
                self.pos = start;
                return self.error(format!("malformed number '{text}'"));
            }
        };
        // An `i` suffix makes the literal imaginary unless it opens `i[`.
        if self.chars.get(self.pos) == Some(&'i') && self.chars.get(self.pos + 1) != Some(&'[') {
            self.pos += 1;
            return Ok(Complex64::new(0.0, v));
        }
        Ok(Complex64::new(v, 0.0))
    }

    // Coefficient expressions.

    fn cexpr(&mut self) -> Result<CoefficientElement, DslError> {
        let mut acc = CoefficientElement::zero(self.engine);
        let mut sign = if self.eat('-') { -1.0 } else { 1.0 };
        loop {
            let t = self.cterm()?;
            acc.add_assign_scaled(&t, Complex64::new(sign, 0.0));
            if self.eat('+') {
                sign = 1.0;
            } else if self.eat('-') {
                sign = -1.0;
            } else {
                return Ok(acc);
            }
        }
    }

    fn starts_cfactor(&mut self) -> bool {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == '.' || c == '(' || c == 'S' || c == 'z' => true,
            Some('i') => self.peek_after() != Some('['),
            _ => false,
        }
    }

    fn cterm(&mut self) -> Result<CoefficientElement, DslError> {
        let mut acc = self.cfactor()?;
        loop {
            let save = self.pos;
            let starred = self.eat('*');
            if self.starts_cfactor() {
                let f = self.cfactor()?;
                acc = acc.checked_mul(&f).map_err(SystemError::from)?;
            } else {
                self.pos = save;
                return Ok(acc);
            }
            let _ = starred;
        }
    }

    fn cfactor(&mut self) -> Result<CoefficientElement, DslError> {
        let engine = self.engine;
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.cexpr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some('i') => {
                self.pos += 1;
                Ok(CoefficientElement::scalar(engine, Complex64::i()))
            }
            Some('S') => {
                if engine != Engine::Toeplitz {
                    return self.error(format!("S is not available in the {engine} engine"));
                }
                self.pos += 1;
                let star = self.chars.get(self.pos) == Some(&'*');
                if star {
                    self.pos += 1;
                }
                let p = self.optional_power()?;
                Ok(if star {
                    CoefficientElement::toeplitz(0, p)
                } else {
                    CoefficientElement::toeplitz(p, 0)
                })
            }
            Some('z') => {
                let Engine::Laurent { dim } = engine else {
                    return self.error(format!("z is not available in the {engine} engine"));
                };
                self.pos += 1;
                let axis = if self.chars.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                    let at = self.pos;
                    let k = self.unsigned()? as usize;
                    if k == 0 || k > dim {
                        self.pos = at;
                        return self.error(format!("axis {k} outside 1..={dim}"));
                    }
                    k - 1
                } else if dim == 1 {
                    0
                } else {
                    return self.error("z needs an axis in more than one variable");
                };
                let power = if self.eat('^') { self.signed()? } else { 1 };
                let mut gamma = vec![0i64; dim];
                gamma[axis] = power;
                Ok(CoefficientElement::monomial(engine, CoeffMonomial::Laurent(gamma), Complex64::new(1.0, 0.0)))
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let z = self.number()?;
                Ok(CoefficientElement::scalar(engine, z))
            }
            Some(c) => self.error(format!("unexpected '{c}' in coefficient")),
            None => self.error("unexpected end of input in coefficient"),
        }
    }

    // Nica-Toeplitz expressions.

    fn nt(&self) -> &'a NicaToeplitz {
        self.nt.expect("element parsing needs a context")
    }

    fn elem(&mut self) -> Result<NtElement, DslError> {
        let nt = self.nt();
        let mut acc = nt.zero();
        let mut sign = if self.eat('-') { -1.0 } else { 1.0 };
        loop {
            let t = self.term()?;
            acc = acc.checked_add(&t.scale(Complex64::new(sign, 0.0)))?;
            if self.eat('+') {
                sign = 1.0;
            } else if self.eat('-') {
                sign = -1.0;
            } else {
                return Ok(acc);
            }
        }
    }

    fn starts_factor(&mut self) -> bool {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == '.' || c == '(' => true,
            Some('i') | Some('a') | Some('E') => true,
            _ => false,
        }
    }

    fn term(&mut self) -> Result<NtElement, DslError> {
        let nt = self.nt();
        let mut acc = self.factor()?;
        loop {
            let save = self.pos;
            let starred = self.eat('*');
            if self.starts_factor() {
                let f = self.factor()?;
                acc = nt.multiply(&acc, &f)?;
            } else if starred {
                return self.error("expected a factor after '*'");
            } else {
                self.pos = save;
                return Ok(acc);
            }
        }
    }

    fn fiber(&mut self) -> Result<SemigroupElement, DslError> {
        let at = self.pos;
        let v = self.unsigned()?;
        match self.nt().system().element(v) {
            Ok(s) => Ok(s),
            Err(e) => {
                self.pos = at;
                self.error(e.to_string())
            }
        }
    }

    fn factor(&mut self) -> Result<NtElement, DslError> {
        let nt = self.nt();
        if self.eat_keyword("i", '[') {
            let s = self.fiber()?;
            self.expect(']')?;
            self.expect('(')?;
            let mut out = nt.zero();
            loop {
                let c = self.cexpr()?;
                self.expect('@')?;
                let at = self.pos;
                let j = self.unsigned()? as usize;
                let t = match nt.term(s, j, nt.system().identity(), 0, c) {
                    Ok(t) => t,
                    Err(e) => {
                        self.pos = at;
                        return self.error(e.to_string());
                    }
                };
                out = out.checked_add(&t)?;
                if !self.eat(',') {
                    break;
                }
            }
            self.expect(')')?;
            return Ok(out);
        }
        if self.eat_keyword("adj", '(') {
            let x = self.elem()?;
            self.expect(')')?;
            return Ok(x.adjoint());
        }
        if self.eat_keyword("alpha", '[') {
            let s = self.fiber()?;
            self.expect(']')?;
            self.expect('(')?;
            let at = self.pos;
            let x = self.elem()?;
            self.expect(')')?;
            return match nt.alpha(s, &x) {
                Ok(y) => Ok(y),
                Err(NtError::NonCore(..)) => {
                    self.pos = at;
                    self.error("alpha needs an element of the core")
                }
                Err(e) => Err(e.into()),
            };
        }
        if self.eat_keyword("E", '(') {
            let x = self.elem()?;
            self.expect(')')?;
            return Ok(x.cond_expectation());
        }
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let x = self.elem()?;
                self.expect(')')?;
                Ok(x)
            }
            Some('i') => {
                self.pos += 1;
                Ok(nt.unit().scale(Complex64::i()))
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let z = self.number()?;
                Ok(nt.unit().scale(z))
            }
            Some(c) => self.error(format!("unexpected '{c}'")),
            None => self.error("unexpected end of input"),
        }
    }
}

/// Parses a coefficient expression such as `"(1.5+2i) S^2 S*^1 + 3"`.
pub fn parse_coefficient(src: &str, engine: Engine) -> Result<CoefficientElement, DslError> {
    let mut p = Parser::new(src, None, engine);
    let c = p.cexpr()?;
    p.finish()?;
    Ok(c)
}

/// Parses and normalises an element expression such as
/// `"E(i[2](1@0) * adj(i[3](1@0)))"`.
pub fn parse_element(src: &str, nt: &NicaToeplitz) -> Result<NtElement, DslError> {
    let mut p = Parser::new(src, Some(nt), nt.system().engine());
    let x = p.elem()?;
    p.finish()?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::product_system::{DilationStyle, ProductSystem};
    use crate::semigroup::SemigroupKind;
    use proptest::prelude::*;

    fn m(v: u64) -> SemigroupElement {
        SemigroupKind::NatMult.element(v).unwrap()
    }

    fn nt() -> NicaToeplitz {
        NicaToeplitz::new(ProductSystem::affine_toeplitz())
    }

    #[test]
    fn coefficients() {
        let t = Engine::Toeplitz;
        assert_eq!(parse_coefficient("S^2 S*^1", t).unwrap(), CoefficientElement::toeplitz(2, 1));
        assert_eq!(parse_coefficient("S S*", t).unwrap(), CoefficientElement::toeplitz(1, 1));
        assert_eq!(parse_coefficient("S* S", t).unwrap(), CoefficientElement::unit(t));
        assert_eq!(
            parse_coefficient("(1.5+2i)", t).unwrap(),
            CoefficientElement::scalar(t, Complex64::new(1.5, 2.0))
        );
        assert_eq!(
            parse_coefficient("2i*S^1 - 1e-1", t).unwrap(),
            CoefficientElement::toeplitz(1, 0)
                .scale(Complex64::new(0.0, 2.0))
                .checked_add(&CoefficientElement::scalar(t, Complex64::new(-0.1, 0.0)))
                .unwrap()
        );
        let l2 = Engine::Laurent { dim: 2 };
        assert_eq!(
            parse_coefficient("z1^2 z2^-1", l2).unwrap(),
            CoefficientElement::laurent(&[2, -1])
        );
        assert_eq!(parse_coefficient("z^-3", Engine::Laurent { dim: 1 }).unwrap(), CoefficientElement::laurent(&[-3]));
        assert!(parse_coefficient("z^2", l2).is_err());
        assert!(parse_coefficient("S^1", l2).is_err());
        let e = parse_coefficient("S^2 +", t).unwrap_err();
        assert!(matches!(e, DslError::Parse(ParseError { position: 5, .. })), "{e:?}");
    }

    #[test]
    fn elements() {
        let nt = nt();
        let p = parse_element("i[2](1@0) * adj(i[2](1@0))", &nt).unwrap();
        assert_eq!(p, nt.basis_term(m(2), 0, m(2), 0).unwrap());
        let z = parse_element("E(i[2](1@0) * adj(i[3](1@0)))", &nt).unwrap();
        assert!(z.is_zero());
        let a = parse_element("adj(i[3](S^1 S*^0 @ 2))", &nt).unwrap();
        assert_eq!(a, nt.term(m(3), 2, m(1), 0, CoefficientElement::toeplitz(1, 0)).unwrap().adjoint());
        let s = parse_element("(2-1i) * alpha[2](1) - i[1](1@0)", &nt).unwrap();
        let expect = nt
            .alpha(m(2), &nt.unit())
            .unwrap()
            .scale(Complex64::new(2.0, -1.0))
            .checked_sub(&nt.unit())
            .unwrap();
        assert_eq!(s, expect);
        assert_eq!(parse_element("3", &nt).unwrap(), nt.unit().scale(Complex64::new(3.0, 0.0)));
        let two = parse_element("i[2](1@0, S^1@1)", &nt).unwrap();
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn errors_carry_positions() {
        let nt = nt();
        let e = parse_element("i[2](1@0) * adj(i[2](1@5))", &nt).unwrap_err();
        assert!(matches!(e, DslError::Parse(ParseError { position: 23, .. })), "{e:?}");
        let e = parse_element("i[2](1@0", &nt).unwrap_err();
        assert!(matches!(e, DslError::Parse(ParseError { position: 8, .. })), "{e:?}");
        let e = parse_element("alpha[2](i[2](1@0))", &nt).unwrap_err();
        assert!(matches!(e, DslError::Parse(ParseError { position: 9, .. })), "{e:?}");
        let e = parse_element("i[0](1@0)", &nt).unwrap_err();
        assert!(matches!(e, DslError::Parse(ParseError { position: 2, .. })), "{e:?}");
        assert!(parse_element("i[2](1@0) *", &nt).is_err());
        assert!(parse_element("i[2](1@0) )", &nt).is_err());
    }

    #[test]
    fn round_trip_examples() {
        let nt = nt();
        for src in [
            "i[2]((2-1i) S^1@1) * adj(i[3](1@0))",
            "alpha[3](i[2](S^2 S*^1 + 0.25i@1) * adj(i[2](1@0)))",
            "0",
            "1e-300 * i[5](1@4)",
        ] {
            let x = parse_element(src, &nt).unwrap();
            let printed = x.to_string();
            assert_eq!(parse_element(&printed, &nt).unwrap(), x, "{src} -> {printed}");
        }
        let lat = NicaToeplitz::new(ProductSystem::lattice_dilation(2, DilationStyle::Diagonal).unwrap());
        let x = parse_element("i[2](z1^2 z2^-1@3) * adj(i[2](z2@1))", &lat).unwrap();
        assert_eq!(parse_element(&x.to_string(), &lat).unwrap(), x);
    }

    fn source() -> impl Strategy<Value = String> {
        let coeff = prop_oneof![
            Just("1".to_string()),
            (0u64..4, 0u64..4).prop_map(|(a, b)| format!("S^{a} S*^{b}")),
            (-3i32..4, -3i32..4).prop_map(|(a, b)| format!("({a}.5{b:+}i)")),
        ];
        let basis = (1u64..5, coeff).prop_flat_map(|(s, c)| (0..s).prop_map(move |j| format!("i[{s}]({c}@{j})")));
        let monomial = (basis.clone(), basis).prop_map(|(a, b)| format!("{a} * adj({b})"));
        prop::collection::vec(monomial, 1..4).prop_map(|v| v.join(" + "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn parse_print_parse_is_identity(src in source()) {
            let nt = nt();
            let x = parse_element(&src, &nt).unwrap();
            let printed = x.to_string();
            let y = parse_element(&printed, &nt).unwrap();
            prop_assert_eq!(y.to_string(), printed);
            prop_assert_eq!(y, x);
        }
    }
}
