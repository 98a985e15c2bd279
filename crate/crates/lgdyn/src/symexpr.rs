//! Symbolic rational expressions over named parameters.
//!
//! Expressions are trees over constants, parameter symbols, `+`, `-`, `*`,
//! `/` and unary negation. The constructors normalize lightly (constant
//! folding, identity removal, like-term collection, sign and fraction
//! hoisting) so that derived matrix entries stay readable, but no canonical
//! form is attempted: expression equality is decided numerically by
//! [`equivalent`], which samples random parameter environments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Divisors smaller than this in absolute value are an evaluation error.
pub const DIV_EPS: f64 = 1e-12;

/// Sample points whose divisors fall within this band are redrawn by
/// [`equivalent`] rather than reported as errors.
pub const RESAMPLE_DIV_EPS: f64 = 1e-6;

/// Relative tolerance used by [`equivalent`].
pub const EQUIV_RTOL: f64 = 1e-9;

/// A symbolic expression tree.
///
/// Normal form maintained by the constructors:
/// - `Add` and `Mul` are flattened and their operands sorted canonically;
///   `Add` holds at most one constant term (kept last), `Mul` at most one
///   constant coefficient (kept first, never `0` or `±1`).
/// - `Neg` never wraps `Const`, `Add` or another `Neg`.
/// - `Div` denominators are never constants, negations or other divisions.
#[derive(Debug, Clone, PartialEq)]
pub enum SymExpr {
    Const(f64),
    Sym(String),
    Add(Vec<SymExpr>),
    Mul(Vec<SymExpr>),
    Div(Box<SymExpr>, Box<SymExpr>),
    Neg(Box<SymExpr>),
}

/// Maps parameter symbols to numeric values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamEnv {
    map: BTreeMap<String, f64>,
}

impl ParamEnv {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds `name` to `value`, replacing any previous binding.
    pub fn bind(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.map.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.map.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// New environment with `other`'s bindings layered on top of `self`.
    pub fn merged(&self, other: &ParamEnv) -> ParamEnv {
        let mut map = self.map.clone();
        for (k, v) in &other.map {
            map.insert(k.clone(), *v);
        }
        ParamEnv { map }
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for ParamEnv {
    fn from_iter<T: IntoIterator<Item = (S, f64)>>(iter: T) -> Self {
        let mut env = ParamEnv::new();
        for (k, v) in iter {
            env.bind(k, v);
        }
        env
    }
}

/// Evaluation failure.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    /// A symbol in the expression has no binding in the environment.
    UnboundSymbol(String),
    /// A divisor evaluated to within [`DIV_EPS`] of zero.
    DivisionNearZero,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::UnboundSymbol(s) => write!(f, "unbound symbol `{s}`"),
            EvalError::DivisionNearZero => write!(f, "division by a near-zero value"),
        }
    }
}

impl std::error::Error for EvalError {}

impl SymExpr {
    pub fn num(value: f64) -> Self {
        SymExpr::Const(value)
    }

    pub fn sym(name: impl Into<String>) -> Self {
        SymExpr::Sym(name.into())
    }

    pub fn zero() -> Self {
        SymExpr::Const(0.0)
    }

    pub fn one() -> Self {
        SymExpr::Const(1.0)
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self, SymExpr::Const(c) if *c == 0.0)
    }

    pub fn is_const_one(&self) -> bool {
        matches!(self, SymExpr::Const(c) if *c == 1.0)
    }

    /// n-ary sum with flattening, constant folding and like-term collection.
    pub fn add(terms: Vec<SymExpr>) -> Self {
        let mut flat = Vec::new();
        for t in terms {
            match t {
                SymExpr::Add(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        // Collect coefficients per core term; constants accumulate separately.
        let mut const_sum = 0.0;
        let mut cores: BTreeMap<String, (f64, SymExpr)> = BTreeMap::new();
        for t in flat {
            let (coeff, core) = split_coeff(t);
            if core.is_const_one() {
                const_sum += coeff;
                continue;
            }
            let key = core.sort_key();
            match cores.get_mut(&key) {
                Some((c, _)) => *c += coeff,
                None => {
                    cores.insert(key, (coeff, core));
                }
            }
        }
        let mut out: Vec<SymExpr> = Vec::new();
        for (_, (coeff, core)) in cores {
            if coeff == 0.0 {
                continue;
            }
            out.push(scale(coeff, core));
        }
        if const_sum != 0.0 || out.is_empty() {
            out.push(SymExpr::Const(const_sum));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            SymExpr::Add(out)
        }
    }

    pub fn add2(a: SymExpr, b: SymExpr) -> Self {
        SymExpr::add(vec![a, b])
    }

    pub fn sub(a: SymExpr, b: SymExpr) -> Self {
        SymExpr::add(vec![a, SymExpr::neg(b)])
    }

    /// n-ary product. Negations are hoisted to an outer sign, division
    /// factors merge into a single fraction, and products over sums are
    /// distributed so that cancellation in later sums is structural.
    pub fn mul(factors: Vec<SymExpr>) -> Self {
        let mut coeff = 1.0;
        let mut nums: Vec<SymExpr> = Vec::new();
        let mut dens: Vec<SymExpr> = Vec::new();
        let mut stack = factors;
        stack.reverse();
        while let Some(f) = stack.pop() {
            match f {
                SymExpr::Const(c) => coeff *= c,
                SymExpr::Neg(inner) => {
                    coeff = -coeff;
                    stack.push(*inner);
                }
                SymExpr::Mul(inner) => stack.extend(inner.into_iter().rev()),
                SymExpr::Div(n, d) => {
                    stack.push(*n);
                    dens.push(*d);
                }
                other => nums.push(other),
            }
        }
        if coeff == 0.0 {
            return SymExpr::zero();
        }
        let den = if dens.is_empty() {
            SymExpr::one()
        } else {
            SymExpr::mul(dens)
        };
        // Distribute over the first sum factor, if any.
        if let Some(pos) = nums.iter().position(|f| matches!(f, SymExpr::Add(_))) {
            let sum = nums.remove(pos);
            let SymExpr::Add(terms) = sum else {
                unreachable!()
            };
            let mut parts = Vec::with_capacity(terms.len());
            for t in terms {
                let mut fs = nums.clone();
                fs.push(t);
                fs.push(SymExpr::Const(coeff));
                parts.push(SymExpr::mul(fs));
            }
            return SymExpr::div(SymExpr::add(parts), den);
        }
        nums.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let num = match nums.len() {
            0 => SymExpr::Const(coeff),
            _ => scale(coeff, SymExpr::Mul(nums)),
        };
        SymExpr::div(num, den)
    }

    pub fn mul2(a: SymExpr, b: SymExpr) -> Self {
        SymExpr::mul(vec![a, b])
    }

    /// Quotient. Panics if the divisor is the literal constant zero, which
    /// the expression invariants forbid.
    pub fn div(num: SymExpr, den: SymExpr) -> Self {
        // Normalize the denominator first: flatten nested divisions and
        // hoist signs, so `x / (a/b)` becomes `x*b / a`.
        match den {
            SymExpr::Const(c) => {
                assert!(c != 0.0, "division by literal zero");
                if c == 1.0 {
                    return num;
                }
                return SymExpr::mul(vec![SymExpr::Const(1.0 / c), num]);
            }
            SymExpr::Neg(inner) => {
                return SymExpr::neg(SymExpr::div(num, *inner));
            }
            SymExpr::Div(dn, dd) => {
                return SymExpr::div(SymExpr::mul2(num, *dd), *dn);
            }
            _ => {}
        }
        if num.is_const_zero() {
            return SymExpr::zero();
        }
        if let SymExpr::Neg(inner) = num {
            return SymExpr::neg(SymExpr::div(*inner, den));
        }
        if let SymExpr::Const(c) = num {
            if c < 0.0 {
                return SymExpr::neg(SymExpr::div(SymExpr::Const(-c), den));
            }
        }
        if let SymExpr::Div(nn, nd) = num {
            return SymExpr::div(*nn, SymExpr::mul2(*nd, den));
        }
        if num == den {
            return SymExpr::one();
        }
        // Cancel factors shared between a product numerator and the
        // denominator (whole-factor structural matches only).
        let (ncoeff, ncore) = split_coeff(num);
        let mut nfs = factors_of(ncore);
        let dfs = factors_of(den.clone());
        let mut remaining_den: Vec<SymExpr> = Vec::new();
        for d in dfs {
            if let Some(pos) = nfs.iter().position(|n| *n == d) {
                nfs.remove(pos);
            } else {
                remaining_den.push(d);
            }
        }
        let new_num = scale(
            ncoeff,
            match nfs.len() {
                0 => SymExpr::one(),
                1 => nfs.pop().unwrap(),
                _ => SymExpr::Mul(nfs),
            },
        );
        if remaining_den.is_empty() {
            return new_num;
        }
        let new_den = if remaining_den.len() == 1 {
            remaining_den.pop().unwrap()
        } else {
            SymExpr::Mul(remaining_den)
        };
        if new_num.is_const_zero() {
            return SymExpr::zero();
        }
        SymExpr::Div(Box::new(new_num), Box::new(new_den))
    }

    pub fn neg(e: SymExpr) -> Self {
        match e {
            SymExpr::Const(c) => SymExpr::Const(if c == 0.0 { 0.0 } else { -c }),
            SymExpr::Neg(inner) => *inner,
            SymExpr::Add(terms) => SymExpr::add(terms.into_iter().map(SymExpr::neg).collect()),
            // Push the sign into a sum numerator so fractions print like
            // (a + b)/d rather than -(-a - b)/d.
            SymExpr::Div(n, d) if matches!(*n, SymExpr::Add(_)) => {
                SymExpr::div(SymExpr::neg(*n), *d)
            }
            other => SymExpr::Neg(Box::new(other)),
        }
    }

    /// All parameter symbols appearing in the expression.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        self.collect_symbols(&mut set);
        set
    }

    fn collect_symbols(&self, set: &mut BTreeSet<String>) {
        match self {
            SymExpr::Const(_) => {}
            SymExpr::Sym(s) => {
                set.insert(s.clone());
            }
            SymExpr::Add(ts) | SymExpr::Mul(ts) => {
                for t in ts {
                    t.collect_symbols(set);
                }
            }
            SymExpr::Div(n, d) => {
                n.collect_symbols(set);
                d.collect_symbols(set);
            }
            SymExpr::Neg(inner) => inner.collect_symbols(set),
        }
    }

    /// Evaluates the tree under `env`.
    pub fn evaluate(&self, env: &ParamEnv) -> Result<f64, EvalError> {
        self.eval_with_div_eps(env, DIV_EPS)
    }

    fn eval_with_div_eps(&self, env: &ParamEnv, div_eps: f64) -> Result<f64, EvalError> {
        match self {
            SymExpr::Const(c) => Ok(*c),
            SymExpr::Sym(s) => env
                .get(s)
                .ok_or_else(|| EvalError::UnboundSymbol(s.clone())),
            SymExpr::Add(ts) => {
                let mut acc = 0.0;
                for t in ts {
                    acc += t.eval_with_div_eps(env, div_eps)?;
                }
                Ok(acc)
            }
            SymExpr::Mul(ts) => {
                let mut acc = 1.0;
                for t in ts {
                    acc *= t.eval_with_div_eps(env, div_eps)?;
                }
                Ok(acc)
            }
            SymExpr::Div(n, d) => {
                let dv = d.eval_with_div_eps(env, div_eps)?;
                if dv.abs() < div_eps {
                    return Err(EvalError::DivisionNearZero);
                }
                Ok(n.eval_with_div_eps(env, div_eps)? / dv)
            }
            SymExpr::Neg(inner) => Ok(-inner.eval_with_div_eps(env, div_eps)?),
        }
    }

    /// Canonical ordering key. Two structurally equal expressions share a key.
    fn sort_key(&self) -> String {
        self.to_string()
    }
}

/// Applies a numeric coefficient to a core term, keeping the sign outside.
fn scale(coeff: f64, core: SymExpr) -> SymExpr {
    if coeff == 0.0 {
        return SymExpr::zero();
    }
    if core.is_const_one() {
        return SymExpr::Const(coeff);
    }
    let mag = coeff.abs();
    let body = if mag == 1.0 {
        core
    } else {
        match core {
            SymExpr::Mul(mut fs) => {
                fs.insert(0, SymExpr::Const(mag));
                SymExpr::Mul(fs)
            }
            SymExpr::Div(n, d) => SymExpr::Div(Box::new(scale(mag, *n)), d),
            other => SymExpr::Mul(vec![SymExpr::Const(mag), other]),
        }
    };
    if coeff < 0.0 {
        SymExpr::neg(body)
    } else {
        body
    }
}

/// Splits a term into (numeric coefficient, sign-free core).
fn split_coeff(t: SymExpr) -> (f64, SymExpr) {
    match t {
        SymExpr::Const(c) => (c, SymExpr::one()),
        SymExpr::Neg(inner) => {
            let (c, core) = split_coeff(*inner);
            (-c, core)
        }
        SymExpr::Mul(fs) => {
            let mut coeff = 1.0;
            let mut rest = Vec::with_capacity(fs.len());
            for f in fs {
                match f {
                    SymExpr::Const(c) => coeff *= c,
                    other => rest.push(other),
                }
            }
            match rest.len() {
                0 => (coeff, SymExpr::one()),
                1 => (coeff, rest.pop().unwrap()),
                _ => (coeff, SymExpr::Mul(rest)),
            }
        }
        SymExpr::Div(n, d) => {
            let (c, core) = split_coeff(*n);
            if core.is_const_one() {
                (c, SymExpr::Div(Box::new(SymExpr::one()), d))
            } else {
                (c, SymExpr::Div(Box::new(core), d))
            }
        }
        other => (1.0, other),
    }
}

/// Multiplicative factors of a sign-free core.
fn factors_of(e: SymExpr) -> Vec<SymExpr> {
    match e {
        SymExpr::Mul(fs) => fs,
        SymExpr::Const(c) if c == 1.0 => vec![],
        other => vec![other],
    }
}

/// Tests numerical equality of two expressions at `trials` random parameter
/// environments drawn uniformly from `[0.1, 10]` per symbol. Draws that put
/// any divisor within [`RESAMPLE_DIV_EPS`] of zero are redrawn. Deterministic
/// for a fixed seed.
pub fn equivalent(e1: &SymExpr, e2: &SymExpr, trials: usize, seed: u64) -> bool {
    let mut symbols = e1.symbols();
    symbols.extend(e2.symbols());
    let symbols: Vec<String> = symbols.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let (v1, v2) = loop_draw(&mut rng, &symbols, e1, e2);
        let tol = EQUIV_RTOL * 1.0_f64.max(v1.abs()).max(v2.abs());
        if (v1 - v2).abs() > tol {
            return false;
        }
    }
    true
}

/// Randomized zero test: true if `e` evaluates to ~0 at every sample point.
pub fn is_zero_sampled(e: &SymExpr, trials: usize, seed: u64) -> bool {
    equivalent(e, &SymExpr::zero(), trials, seed)
}

fn loop_draw(rng: &mut ChaCha8Rng, symbols: &[String], e1: &SymExpr, e2: &SymExpr) -> (f64, f64) {
    for _ in 0..64 {
        let mut env = ParamEnv::new();
        for s in symbols {
            env.bind(s.clone(), rng.random_range(0.1..10.0));
        }
        let r1 = e1.eval_with_div_eps(&env, RESAMPLE_DIV_EPS);
        let r2 = e2.eval_with_div_eps(&env, RESAMPLE_DIV_EPS);
        match (r1, r2) {
            (Ok(v1), Ok(v2)) => return (v1, v2),
            (Err(EvalError::DivisionNearZero), _) | (_, Err(EvalError::DivisionNearZero)) => {
                continue;
            }
            (Err(e), _) | (_, Err(e)) => panic!("equivalence sampling failed: {e}"),
        }
    }
    panic!("could not sample an environment clear of near-zero divisors");
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Error from [`parse`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expression parse error: {}", self.message)
    }
}

impl std::error::Error for ParseError {}

/// Parses an infix expression such as `"k_t * GR"` or `"1/A"`.
pub fn parse(input: &str) -> Result<SymExpr, ParseError> {
    let tokens = tokenize(input)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(ParseError {
            message: format!("unexpected trailing input at token {}", p.pos),
        });
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(input: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = input.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let value = text.parse::<f64>().map_err(|_| ParseError {
                    message: format!("bad number literal `{text}`"),
                })?;
                out.push(Token::Num(value));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            _ => {
                return Err(ParseError {
                    message: format!("unexpected character `{c}`"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Result<SymExpr, ParseError> {
        let mut acc = self.term()?;
        while let Some(tok) = self.peek() {
            match tok {
                Token::Plus => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = SymExpr::add2(acc, rhs);
                }
                Token::Minus => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = SymExpr::sub(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<SymExpr, ParseError> {
        let mut acc = self.factor()?;
        while let Some(tok) = self.peek() {
            match tok {
                Token::Star => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    acc = SymExpr::mul2(acc, rhs);
                }
                Token::Slash => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    if rhs.is_const_zero() {
                        return Err(ParseError {
                            message: "division by literal zero".to_string(),
                        });
                    }
                    acc = SymExpr::div(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<SymExpr, ParseError> {
        match self.peek().cloned() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(SymExpr::neg(self.factor()?))
            }
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(SymExpr::Const(v))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                Ok(SymExpr::Sym(name))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err(ParseError {
                        message: "expected `)`".to_string(),
                    }),
                }
            }
            other => Err(ParseError {
                message: format!("expected a value, found {other:?}"),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymExpr::Const(c) if *c == 0.0 => write!(f, "0"),
            SymExpr::Const(c) => write!(f, "{c}"),
            SymExpr::Sym(s) => write!(f, "{s}"),
            SymExpr::Add(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    match t {
                        SymExpr::Neg(inner) => {
                            if i == 0 {
                                write!(f, "-{}", ProductOperand(inner))?;
                            } else {
                                write!(f, " - {}", ProductOperand(inner))?;
                            }
                        }
                        SymExpr::Const(c) if *c < 0.0 && i > 0 => {
                            write!(f, " - {}", -c)?;
                        }
                        _ => {
                            if i == 0 {
                                write!(f, "{t}")?;
                            } else {
                                write!(f, " + {t}")?;
                            }
                        }
                    }
                }
                Ok(())
            }
            SymExpr::Mul(factors) => {
                for (i, x) in factors.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "{}", ProductOperand(x))?;
                }
                Ok(())
            }
            SymExpr::Div(n, d) => {
                write!(f, "{}/{}", ProductOperand(n), DivisorOperand(d))
            }
            SymExpr::Neg(inner) => write!(f, "-{}", ProductOperand(inner)),
        }
    }
}

/// Wraps sums (and negations) in parentheses when printed inside a product.
struct ProductOperand<'a>(&'a SymExpr);

impl fmt::Display for ProductOperand<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            SymExpr::Add(_) | SymExpr::Neg(_) => write!(f, "({})", self.0),
            SymExpr::Const(c) if *c < 0.0 => write!(f, "({})", self.0),
            _ => write!(f, "{}", self.0),
        }
    }
}

/// Divisors additionally parenthesize products and quotients.
struct DivisorOperand<'a>(&'a SymExpr);

impl fmt::Display for DivisorOperand<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            SymExpr::Add(_) | SymExpr::Neg(_) | SymExpr::Mul(_) | SymExpr::Div(..) => {
                write!(f, "({})", self.0)
            }
            SymExpr::Const(c) if *c < 0.0 => write!(f, "({})", self.0),
            _ => write!(f, "{}", self.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(name: &str) -> SymExpr {
        SymExpr::sym(name)
    }

    #[test]
    fn evaluates_husky_damping_entry() {
        // (-B_FL - B_RL)/J_L at the calibrated values.
        let e = SymExpr::div(
            SymExpr::add(vec![SymExpr::neg(s("B_FL")), SymExpr::neg(s("B_RL"))]),
            s("J_L"),
        );
        let mut env = ParamEnv::new();
        env.bind("B_FL", 1.3016)
            .bind("B_RL", 1.3016)
            .bind("J_L", 0.08);
        let v = e.evaluate(&env).unwrap();
        assert!((v - (-32.54)).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn evaluates_constant_zero_under_any_env() {
        let env = ParamEnv::new();
        assert_eq!(SymExpr::zero().evaluate(&env).unwrap(), 0.0);
    }

    #[test]
    fn evaluates_motor_transformer_ratio() {
        let e = SymExpr::mul2(s("k_t"), s("GR"));
        let mut env = ParamEnv::new();
        env.bind("k_t", 0.044488).bind("GR", 78.71);
        let v = e.evaluate(&env).unwrap();
        assert!((v - 3.50165).abs() < 1e-5, "got {v}");
    }

    #[test]
    fn unbound_symbol_is_an_error() {
        let e = s("missing");
        assert_eq!(
            e.evaluate(&ParamEnv::new()),
            Err(EvalError::UnboundSymbol("missing".to_string()))
        );
    }

    #[test]
    fn near_zero_divisor_is_an_error() {
        let e = SymExpr::div(SymExpr::one(), s("x"));
        let mut env = ParamEnv::new();
        env.bind("x", 1e-13);
        assert_eq!(e.evaluate(&env), Err(EvalError::DivisionNearZero));
    }

    #[test]
    fn distributivity_is_equivalent() {
        let lhs = SymExpr::mul2(s("x"), SymExpr::add2(s("y"), s("z")));
        let rhs = SymExpr::add2(SymExpr::mul2(s("x"), s("y")), SymExpr::mul2(s("x"), s("z")));
        assert!(equivalent(&lhs, &rhs, 20, 7));
    }

    #[test]
    fn sum_and_product_are_not_equivalent() {
        let lhs = SymExpr::add2(s("x"), s("y"));
        let rhs = SymExpr::mul2(s("x"), s("y"));
        assert!(!equivalent(&lhs, &rhs, 20, 7));
    }

    #[test]
    fn like_terms_cancel_structurally() {
        let e = SymExpr::sub(SymExpr::mul2(s("a"), s("b")), SymExpr::mul2(s("b"), s("a")));
        assert!(e.is_const_zero());
    }

    #[test]
    fn division_cancels_whole_factors() {
        let e = SymExpr::div(SymExpr::mul(vec![s("a"), s("b"), s("c")]), s("b"));
        assert_eq!(e, SymExpr::mul2(s("a"), s("c")));
    }

    #[test]
    fn nested_divisions_flatten() {
        // x / (1/A) = x*A
        let e = SymExpr::div(s("x"), SymExpr::div(SymExpr::one(), s("A")));
        assert_eq!(e, SymExpr::mul2(s("A"), s("x")));
    }

    #[test]
    fn parses_and_prints_round_trip() {
        for text in [
            "k_t * GR",
            "1/A",
            "(-B_FL - B_RL)/J_L",
            "2.5e-3 + x*(y - z)",
            "-x/(y*z)",
        ] {
            let e = parse(text).unwrap();
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap_or_else(|err| {
                panic!("reparse of `{printed}` failed: {err}");
            });
            assert!(
                equivalent(&e, &reparsed, 20, 11),
                "`{text}` printed as `{printed}` is not equivalent"
            );
        }
    }

    #[test]
    fn printer_matches_paper_style() {
        let e = SymExpr::div(
            SymExpr::add(vec![SymExpr::neg(s("B_FL")), SymExpr::neg(s("B_RL"))]),
            s("J_L"),
        );
        assert_eq!(e.to_string(), "(-B_FL - B_RL)/J_L");
    }

    #[test]
    fn equivalence_is_deterministic_per_seed() {
        let a = SymExpr::mul2(s("x"), SymExpr::add2(s("y"), SymExpr::Const(1.0)));
        let b = SymExpr::add2(SymExpr::mul2(s("x"), s("y")), s("x"));
        for seed in [0u64, 1, 42, 1234] {
            assert_eq!(equivalent(&a, &b, 20, seed), equivalent(&a, &b, 20, seed));
            assert_eq!(equivalent(&a, &b, 20, seed), equivalent(&b, &a, 20, seed));
        }
    }
}
