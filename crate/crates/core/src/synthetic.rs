//! Synthetic line grammars and an in-process interpreter for them.
//!
//! A synthetic program is a tiny Python function:
//!
//! ```text
//! def f(a):
//!     v0 = a + 2
//!     v1 = v0 * a
//!     return v1 - 1
//! ```
//!
//! Every body line is drawn from a finite set of alternatives fixed per line
//! index, so the language of a grammar is the cartesian product of its
//! alternative sets and can be enumerated exhaustively. Programs are valid
//! Python, so the same fixtures can be replayed through a real sandbox.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FailureKind, ProblemSpec, Reward, TestCase};

/// Finite line grammar: a fixed prefix followed by one choice per depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub prefix: Vec<String>,
    pub alternatives: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("context does not start with the grammar prefix")]
    PrefixMismatch,
    #[error("line {depth} ({line:?}) is not an alternative at that depth")]
    NotDerivable { depth: usize, line: String },
    #[error("context is longer than the grammar")]
    TooDeep,
}

impl GrammarSpec {
    pub fn depth(&self) -> usize {
        self.alternatives.len()
    }

    pub fn language_size(&self) -> usize {
        self.alternatives.iter().map(Vec::len).product()
    }

    /// Position in the grammar reached by `context`, i.e. how many body lines
    /// it already contains.
    pub fn derive(&self, context: &[String]) -> Result<usize, GrammarError> {
        if context.len() < self.prefix.len() || context[..self.prefix.len()] != self.prefix[..] {
            return Err(GrammarError::PrefixMismatch);
        }
        let body = &context[self.prefix.len()..];
        if body.len() > self.depth() {
            return Err(GrammarError::TooDeep);
        }
        for (depth, line) in body.iter().enumerate() {
            if !self.alternatives[depth].contains(line) {
                return Err(GrammarError::NotDerivable {
                    depth,
                    line: line.clone(),
                });
            }
        }
        Ok(body.len())
    }

    /// Alternatives admissible right after `context`; empty at the end.
    pub fn next_alternatives(&self, context: &[String]) -> Result<&[String], GrammarError> {
        let depth = self.derive(context)?;
        Ok(self.alternatives.get(depth).map_or(&[][..], Vec::as_slice))
    }

    /// Every complete program, prefix included, in lexicographic choice order.
    pub fn enumerate(&self) -> Vec<Vec<String>> {
        let mut programs = vec![self.prefix.clone()];
        for alts in &self.alternatives {
            programs = programs
                .into_iter()
                .flat_map(|p| {
                    alts.iter().map(move |alt| {
                        let mut next = p.clone();
                        next.push(alt.clone());
                        next
                    })
                })
                .collect();
        }
        programs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Int(i64),
    Ident(String),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    Comma,
    Colon,
    Assign,
    EqEq,
    NotEq,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected character {0:?}")]
    BadChar(char),
    #[error("unexpected token {0}")]
    Unexpected(String),
    #[error("unexpected end of line")]
    Eol,
    #[error("{0}")]
    Structure(String),
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&ch) = chars.peek() {
        match ch {
            '#' => break,
            c if c.is_whitespace() => {
                chars.next();
            }
            c if c.is_ascii_digit() => {
                let mut num = String::new();
                while let Some(&d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                    num.push(d);
                    chars.next();
                }
                let value = num.parse().map_err(|_| ParseError::Unexpected(num.clone()))?;
                tokens.push(Token::Int(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(&d) = chars.peek().filter(|d| d.is_ascii_alphanumeric() || **d == '_') {
                    ident.push(d);
                    chars.next();
                }
                tokens.push(Token::Ident(ident));
            }
            _ => {
                chars.next();
                let tok = match ch {
                    '+' => Token::Plus,
                    '-' => Token::Minus,
                    '*' => Token::Star,
                    '(' => Token::LParen,
                    ')' => Token::RParen,
                    ',' => Token::Comma,
                    ':' => Token::Colon,
                    '=' if chars.peek() == Some(&'=') => {
                        chars.next();
                        Token::EqEq
                    }
                    '=' => Token::Assign,
                    '!' if chars.peek() == Some(&'=') => {
                        chars.next();
                        Token::NotEq
                    }
                    other => return Err(ParseError::BadChar(other)),
                };
                tokens.push(tok);
            }
        }
    }
    Ok(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Expr {
    Int(i64),
    Var(String),
    Neg(Box<Expr>),
    Bin(Box<Expr>, BinOp, Box<Expr>),
    Call(String, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Stmt {
    Assign(String, Expr),
    Return(Expr),
    Pass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Function {
    name: String,
    params: Vec<String>,
    body: Vec<Stmt>,
}

const KEYWORDS: &[&str] = &["def", "return", "assert", "pass"];

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(tokens: &'a [Token]) -> Self {
        Self { tokens, pos: 0 }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<&Token, ParseError> {
        let tok = self.tokens.get(self.pos).ok_or(ParseError::Eol)?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, want: &Token) -> Result<(), ParseError> {
        let got = self.next()?;
        if got == want {
            Ok(())
        } else {
            Err(ParseError::Unexpected(format!("{got:?}")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.next()? {
            Token::Ident(name) if !KEYWORDS.contains(&name.as_str()) => Ok(name.clone()),
            other => Err(ParseError::Unexpected(format!("{other:?}"))),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(tok) => Err(ParseError::Unexpected(format!("{tok:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(Box::new(lhs), op, Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Token::Star) {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin(Box::new(lhs), BinOp::Mul, Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.next()?.clone() {
            Token::Int(v) => Ok(Expr::Int(v)),
            Token::Minus => Ok(Expr::Neg(Box::new(self.factor()?))),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect(&Token::RParen)?;
                Ok(inner)
            }
            Token::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                if self.peek() != Some(&Token::LParen) {
                    return Ok(Expr::Var(name));
                }
                self.pos += 1;
                let mut args = Vec::new();
                if self.peek() != Some(&Token::RParen) {
                    loop {
                        args.push(self.expr()?);
                        if self.peek() == Some(&Token::Comma) {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                self.expect(&Token::RParen)?;
                Ok(Expr::Call(name, args))
            }
            other => Err(ParseError::Unexpected(format!("{other:?}"))),
        }
    }
}

fn indentation(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

fn parse_function(program: &str) -> Result<Function, ParseError> {
    let mut lines = program
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| ParseError::Structure("empty program".into()))?;
    if indentation(header) != 0 {
        return Err(ParseError::Structure("unexpected indent".into()));
    }
    let tokens = tokenize(header)?;
    let mut p = Parser::new(&tokens);
    if p.next()? != &Token::Ident("def".into()) {
        return Err(ParseError::Structure("expected a function definition".into()));
    }
    let name = p.ident()?;
    p.expect(&Token::LParen)?;
    let mut params = Vec::new();
    if p.peek() != Some(&Token::RParen) {
        loop {
            params.push(p.ident()?);
            if p.peek() == Some(&Token::Comma) {
                p.pos += 1;
            } else {
                break;
            }
        }
    }
    p.expect(&Token::RParen)?;
    p.expect(&Token::Colon)?;
    p.finish()?;

    let mut body = Vec::new();
    let mut body_indent = None;
    for line in lines {
        let indent = indentation(line);
        match body_indent {
            None if indent > 0 => body_indent = Some(indent),
            Some(expected) if indent == expected => {}
            _ => return Err(ParseError::Structure("inconsistent indentation".into())),
        }
        body.push(parse_statement(line)?);
    }
    if body.is_empty() {
        return Err(ParseError::Structure("expected an indented block".into()));
    }
    Ok(Function { name, params, body })
}

fn parse_statement(line: &str) -> Result<Stmt, ParseError> {
    let tokens = tokenize(line)?;
    let mut p = Parser::new(&tokens);
    let stmt = match p.peek() {
        Some(Token::Ident(kw)) if kw == "return" => {
            p.pos += 1;
            Stmt::Return(p.expr()?)
        }
        Some(Token::Ident(kw)) if kw == "pass" => {
            p.pos += 1;
            Stmt::Pass
        }
        _ => {
            let name = p.ident()?;
            p.expect(&Token::Assign)?;
            Stmt::Assign(name, p.expr()?)
        }
    };
    p.finish()?;
    Ok(stmt)
}

struct Assertion {
    lhs: Expr,
    negated: bool,
    rhs: Expr,
}

fn parse_assertion(src: &str) -> Result<Assertion, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser::new(&tokens);
    if p.next()? != &Token::Ident("assert".into()) {
        return Err(ParseError::Structure("expected assert".into()));
    }
    let lhs = p.expr()?;
    let negated = match p.next()? {
        Token::EqEq => false,
        Token::NotEq => true,
        other => return Err(ParseError::Unexpected(format!("{other:?}"))),
    };
    let rhs = p.expr()?;
    p.finish()?;
    Ok(Assertion { lhs, negated, rhs })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
enum RuntimeError {
    #[error("name {0:?} is not defined")]
    Name(String),
    #[error("integer overflow")]
    Overflow,
    #[error("{0} expects {1} arguments, got {2}")]
    Arity(String, usize, usize),
    #[error("unsupported operand None")]
    NoneOperand,
}

/// `None` models a Python function that falls off its end.
type Value = Option<i64>;

const MAX_CALL_DEPTH: usize = 32;

struct Interpreter<'a> {
    function: &'a Function,
}

impl Interpreter<'_> {
    fn eval(&self, expr: &Expr, env: &HashMap<&str, i64>, depth: usize) -> Result<Value, RuntimeError> {
        let int = |v: Value| v.ok_or(RuntimeError::NoneOperand);
        Ok(match expr {
            Expr::Int(v) => Some(*v),
            Expr::Var(name) => Some(*env.get(name.as_str()).ok_or_else(|| RuntimeError::Name(name.clone()))?),
            Expr::Neg(inner) => Some(
                int(self.eval(inner, env, depth)?)?
                    .checked_neg()
                    .ok_or(RuntimeError::Overflow)?,
            ),
            Expr::Bin(lhs, op, rhs) => {
                let l = int(self.eval(lhs, env, depth)?)?;
                let r = int(self.eval(rhs, env, depth)?)?;
                let out = match op {
                    BinOp::Add => l.checked_add(r),
                    BinOp::Sub => l.checked_sub(r),
                    BinOp::Mul => l.checked_mul(r),
                };
                Some(out.ok_or(RuntimeError::Overflow)?)
            }
            Expr::Call(name, args) => {
                if name != &self.function.name || depth >= MAX_CALL_DEPTH {
                    return Err(RuntimeError::Name(name.clone()));
                }
                let values = args
                    .iter()
                    .map(|a| self.eval(a, env, depth).and_then(int))
                    .collect::<Result<Vec<_>, _>>()?;
                self.call(&values, depth + 1)?
            }
        })
    }

    fn call(&self, args: &[i64], depth: usize) -> Result<Value, RuntimeError> {
        let f = self.function;
        if args.len() != f.params.len() {
            return Err(RuntimeError::Arity(f.name.clone(), f.params.len(), args.len()));
        }
        let mut env: HashMap<&str, i64> = f.params.iter().map(String::as_str).zip(args.iter().copied()).collect();
        for stmt in &f.body {
            match stmt {
                Stmt::Assign(name, expr) => {
                    let v = self.eval(expr, &env, depth)?.ok_or(RuntimeError::NoneOperand)?;
                    env.insert(name.as_str(), v);
                }
                Stmt::Return(expr) => return self.eval(expr, &env, depth),
                Stmt::Pass => {}
            }
        }
        Ok(None)
    }
}

/// Outcome of running the program against each assertion.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub reward: Reward,
    pub messages: Vec<String>,
}

/// Scores `program` against assertion tests with the same shape as a real
/// sandbox run: pass fraction, `parse_error` when the program does not parse,
/// `runtime_error` when an assertion raised instead of failing.
///
/// # Panics
/// Panics if `tests` is empty.
pub fn interpret_synthetic(program: &str, tests: &[TestCase]) -> Reward {
    run_synthetic(program, tests).reward
}

pub fn run_synthetic(program: &str, tests: &[TestCase]) -> SyntheticRun {
    assert!(!tests.is_empty(), "synthetic evaluation needs at least one test");
    let total = tests.len() as u32;
    let function = match parse_function(program) {
        Ok(f) => f,
        Err(err) => {
            return SyntheticRun {
                reward: Reward::zero(total, FailureKind::ParseError).expect("total > 0"),
                messages: vec![format!("SyntaxError: {err}")],
            }
        }
    };
    let interp = Interpreter { function: &function };
    let mut passed = 0;
    let mut raised = false;
    let mut messages = Vec::new();
    for test in tests {
        let src = &test.assertion_source;
        let outcome = parse_assertion(src)
            .map_err(|e| format!("SyntaxError in test: {e}"))
            .and_then(|a| {
                let env = HashMap::new();
                let l = interp.eval(&a.lhs, &env, 0).map_err(|e| e.to_string())?;
                let r = interp.eval(&a.rhs, &env, 0).map_err(|e| e.to_string())?;
                Ok((l == r) != a.negated)
            });
        match outcome {
            Ok(true) => passed += 1,
            Ok(false) => messages.push(format!("AssertionError: {src}")),
            Err(msg) => {
                raised = true;
                messages.push(format!("{msg}: {src}"));
            }
        }
    }
    let kind = if raised {
        FailureKind::RuntimeError
    } else {
        FailureKind::TestFailure
    };
    SyntheticRun {
        reward: Reward::from_counts(passed, total, kind).expect("passed <= total"),
        messages,
    }
}

/// Evaluates the first function defined in `program` at integer arguments.
pub fn call_synthetic(program: &str, args: &[i64]) -> Option<i64> {
    let function = parse_function(program).ok()?;
    Interpreter { function: &function }.call(args, 0).ok().flatten()
}

/// Knobs for [`synthetic_problem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticOptions {
    pub min_depth: usize,
    pub max_depth: usize,
    pub max_alternatives: usize,
    pub public_tests: usize,
    pub private_tests: usize,
    /// Shift one public expected value so the target no longer passes all.
    pub perturb_public: bool,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            min_depth: 2,
            max_depth: 4,
            max_alternatives: 3,
            public_tests: 3,
            private_tests: 3,
            perturb_public: false,
        }
    }
}

const BODY_INDENT: &str = "    ";

fn random_operand(rng: &mut ChaCha8Rng, vars: &[String]) -> String {
    if rng.random_bool(0.25) {
        rng.random_range(1..=5).to_string()
    } else {
        vars[rng.random_range(0..vars.len())].clone()
    }
}

fn random_expr(rng: &mut ChaCha8Rng, vars: &[String]) -> String {
    let lhs = vars[rng.random_range(0..vars.len())].clone();
    match rng.random_range(0..4) {
        0 => lhs,
        1 => format!("{lhs} + {}", random_operand(rng, vars)),
        2 => format!("{lhs} - {}", random_operand(rng, vars)),
        _ => format!("{lhs} * {}", random_operand(rng, vars)),
    }
}

/// A seeded synthetic problem whose hidden target lies in its own grammar
/// (unless `perturb_public` is set).
pub fn synthetic_problem(seed: u64, options: SyntheticOptions) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(options.min_depth..=options.max_depth);
    let mut vars = vec!["a".to_string()];
    let mut alternatives: Vec<Vec<String>> = Vec::with_capacity(depth);
    for level in 0..depth {
        let count = rng.random_range(2..=options.max_alternatives.max(2));
        let last = level + 1 == depth;
        let mut alts: Vec<String> = Vec::new();
        let mut attempts = 0;
        while alts.len() < count && attempts < 100 {
            attempts += 1;
            let line = if last {
                format!("{BODY_INDENT}return {}", random_expr(&mut rng, &vars))
            } else if rng.random_bool(0.1) {
                format!("{BODY_INDENT}v{level} = w{level} + 1")
            } else {
                format!("{BODY_INDENT}v{level} = {}", random_expr(&mut rng, &vars))
            };
            if !alts.contains(&line) {
                alts.push(line);
            }
        }
        if !last {
            vars.push(format!("v{level}"));
        }
        alternatives.push(alts);
    }
    let grammar = GrammarSpec {
        prefix: vec!["def f(a):".to_string()],
        alternatives,
    };

    let programs = grammar.enumerate();
    let mut inputs: Vec<i64> = (-3..=7).collect();
    inputs.shuffle(&mut rng);
    let (public_inputs, rest) = inputs.split_at(options.public_tests);
    let private_inputs = &rest[..options.private_tests];
    let mut order: Vec<usize> = (0..programs.len()).collect();
    order.shuffle(&mut rng);
    let target = order
        .into_iter()
        .map(|i| programs[i].join("\n"))
        .find(|src| {
            public_inputs
                .iter()
                .chain(private_inputs)
                .all(|&x| call_synthetic(src, &[x]).is_some())
        })
        .unwrap_or_else(|| programs[0].join("\n"));

    let expected = |x: i64| call_synthetic(&target, &[x]).unwrap_or(0);
    let mut public_tests: Vec<TestCase> = public_inputs
        .iter()
        .map(|&x| TestCase::new(format!("assert f({x}) == {}", expected(x))))
        .collect();
    if options.perturb_public {
        let x = public_inputs[0];
        public_tests[0] = TestCase::new(format!("assert f({x}) == {}", expected(x) + 1));
    }
    let private_tests = private_inputs
        .iter()
        .map(|&x| TestCase::new(format!("assert f({x}) == {}", expected(x))))
        .collect();

    ProblemSpec {
        task_id: format!("synthetic/{seed}"),
        nl_description: format!(
            "Write a function f(a) that maps the integers {} to the values asserted by the tests.",
            public_inputs.iter().map(i64::to_string).collect::<Vec<_>>().join(", ")
        ),
        starter_context: grammar.prefix.clone(),
        public_tests,
        private_tests,
        entry_point: "f".to_string(),
        synthetic_grammar: Some(grammar),
    }
}
