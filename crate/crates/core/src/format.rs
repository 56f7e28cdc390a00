//! Text format for problems.
//!
//! ```text
//! # comment
//! name projector-pair
//! vars x1 x2 hermitian    # self-adjoint letters (the default)
//! vars a b adjoint        # letters with adjoints a' b'
//! groups x1 | x2          # letters in different groups commute
//! commuting               # every letter commutes
//! rule x1^2 = x1
//! idempotent x1           # also: orthogonal, commute, anticommute, fermionic
//! minimize x1*x2 + x2*x1  # or: maximize, obj
//! >=0: -x2^2 + x2 + 1/2   # also: constraint EXPR >= 0
//! ==0: x1 + x2 - 1        # also: constraint EXPR == 0
//! ket0: 3*x1 + 2*x2 - 1
//! expect>=0: 1/3 - x1
//! ball 2
//! ```
//!
//! Products are written with `*`, `^` takes a non-negative integer, `'` is
//! the adjoint, and `/` divides by a number.

use std::fmt::Write as _;

use thiserror::Error;

use crate::algebra::{involute, is_group_rule, is_hermitian, Alphabet, Letter, Polynomial, RewriteSystem, Word};
use crate::relaxation::NcProblem;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, column {col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

fn err<T>(line: usize, col: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, col, msg: msg.into() })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str, line: usize, col0: usize) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            match text.parse::<f64>() {
                Ok(v) => out.push((Tok::Num(v), col)),
                Err(_) => return err(line, col, format!("bad number '{text}'")),
            }
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^'()".contains(c) {
            out.push((Tok::Sym(c), col));
            i += 1;
        } else {
            return err(line, col, format!("unexpected character '{c}'"));
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
    alphabet: &'a Alphabet,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        while let Some(Tok::Sym(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let t = self.term()?;
            acc = if c == '+' { acc + t } else { acc - t };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Sym('*')) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = acc.mul_free(&rhs);
                }
                Some(Tok::Sym('/')) => {
                    self.pos += 1;
                    let col = self.col();
                    let d = self.unary()?;
                    match d.as_single_term() {
                        Some((w, c)) if w.is_identity() && c != 0.0 => acc = acc.scale(1.0 / c),
                        _ => return err(self.line, col, "can only divide by a nonzero number"),
                    }
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek() {
            Some(Tok::Sym('-')) => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(Tok::Sym('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> Result<Polynomial, ParseError> {
        let mut base = self.atom()?;
        loop {
            match self.peek() {
                Some(Tok::Sym('^')) => {
                    self.pos += 1;
                    let col = self.col();
                    let n = match self.peek() {
                        Some(Tok::Num(v)) if *v >= 0.0 && v.fract() == 0.0 && *v <= 64.0 => *v as usize,
                        _ => return err(self.line, col, "exponent must be a non-negative integer"),
                    };
                    self.pos += 1;
                    let mut p = Polynomial::one();
                    for _ in 0..n {
                        p = p.mul_free(&base);
                    }
                    base = p;
                }
                Some(Tok::Sym('\'')) => {
                    self.pos += 1;
                    base = adjoint_free(&base, self.alphabet);
                }
                _ => return Ok(base),
            }
        }
    }

    fn atom(&mut self) -> Result<Polynomial, ParseError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Polynomial::constant(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                // `a'` names the adjoint letter directly
                let adjoint_named = matches!(self.peek(), Some(Tok::Sym('\'')))
                    && self.alphabet.letter(&format!("{name}'")).is_some();
                match self.alphabet.letter(&name) {
                    Some(l) => Ok(Polynomial::letter(l)),
                    None if adjoint_named => Ok(Polynomial::letter(self.alphabet.letter(&name).unwrap_or(0))),
                    None => err(self.line, col, format!("undeclared variable '{name}'")),
                }
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::Sym(')')) {
                    return err(self.line, self.col(), "expected ')'");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Sym(c)) => err(self.line, col, format!("unexpected '{c}'")),
            None => err(self.line, col, "expected an expression"),
        }
    }
}

fn adjoint_free(p: &Polynomial, alphabet: &Alphabet) -> Polynomial {
    Polynomial::from_terms(p.terms().map(|(w, c)| (involute(w, alphabet).expect("letters from this alphabet"), c)))
}

/// Parses one expression over `alphabet`; `line`/`col` locate it in a file.
pub fn parse_expr(src: &str, alphabet: &Alphabet, line: usize, col: usize) -> Result<Polynomial, ParseError> {
    let toks = tokenize(src, line, col)?;
    if toks.is_empty() {
        return err(line, col, "empty expression");
    }
    let mut p = ExprParser { toks, pos: 0, line, end_col: col + src.chars().count(), alphabet };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return err(line, p.col(), "unexpected trailing input");
    }
    Ok(e)
}

#[derive(Clone, Copy, PartialEq)]
enum Tag {
    Rule,
    Objective(bool),
    Ineq,
    Eq,
    Ket,
    Expect,
}

/// A problem file whose objective may be missing.
#[derive(Clone, Debug)]
pub struct ParsedFile {
    pub name: String,
    pub alphabet: Alphabet,
    pub rules: RewriteSystem,
    /// `(p, maximize, line, column)`.
    pub objective: Option<(Polynomial, bool, usize, usize)>,
    pub inequalities: Vec<Polynomial>,
    pub operator_equalities: Vec<Polynomial>,
    pub state_kernel: Vec<Polynomial>,
    pub expectation_ineqs: Vec<Polynomial>,
    pub ball: Option<f64>,
}

/// Parses a problem file.
pub fn parse_problem(text: &str) -> Result<NcProblem, ParseError> {
    let f = parse_file(text)?;
    let Some((obj, maximize, line, col)) = f.objective else { return err(1, 1, "missing objective (minimize/maximize)") };
    if obj.is_zero() {
        return err(line, col, "empty objective");
    }
    let hermitian =
        is_hermitian(&obj, &f.alphabet, &f.rules).map_err(|e| ParseError { line, col, msg: e.to_string() })?;
    if !hermitian {
        return err(line, col, "objective is not hermitian");
    }
    let mut problem = NcProblem::new(f.alphabet, f.rules, if maximize { -obj } else { obj });
    problem.name = f.name;
    problem.maximize = maximize;
    problem.inequalities = f.inequalities;
    problem.operator_equalities = f.operator_equalities;
    problem.state_kernel = f.state_kernel;
    problem.expectation_ineqs = f.expectation_ineqs;
    problem.ball = f.ball;
    Ok(problem)
}

/// Parses declarations and expressions without requiring an objective.
pub fn parse_file(text: &str) -> Result<ParsedFile, ParseError> {
    let mut name = String::new();
    let mut vars: Vec<(String, bool)> = Vec::new();
    let mut groups: Option<Vec<Vec<(String, usize, usize)>>> = None;
    let mut commuting = false;
    let mut shorthands: Vec<(String, Vec<(String, usize)>, usize)> = Vec::new();
    let mut exprs: Vec<(Tag, String, usize, usize)> = Vec::new();
    let mut ball = None;

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let indent = content.len() - trimmed.len();
        let col_of = |s: &str| indent + (s.as_ptr() as usize - trimmed.as_ptr() as usize) + 1;
        let (kw, rest) = match trimmed.find(|c: char| c.is_whitespace() || c == ':') {
            Some(i) if trimmed[..i].starts_with(">=0") || trimmed[..i].starts_with("==0") => (&trimmed[..3], &trimmed[3..]),
            Some(i) => (&trimmed[..i], &trimmed[i..]),
            None => (trimmed, &trimmed[trimmed.len()..]),
        };
        let rest_trim = rest.trim_start().strip_prefix(':').unwrap_or(rest.trim_start());
        let words = |s: &str| -> Vec<(String, usize)> {
            s.split_whitespace().map(|w| (w.to_string(), col_of(w))).collect()
        };
        match kw {
            "name" => name = rest_trim.trim().to_string(),
            "vars" => {
                let mut ws = words(rest_trim);
                let adjoint = ws.last().is_some_and(|w| w.0 == "adjoint");
                if adjoint || ws.last().is_some_and(|w| w.0 == "hermitian") {
                    ws.pop();
                }
                if ws.is_empty() {
                    return err(line, col_of(trimmed), "vars needs at least one name");
                }
                for (w, col) in ws {
                    let valid = w.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                        && w.chars().all(|c| c.is_alphanumeric() || c == '_');
                    if !valid {
                        return err(line, col, format!("invalid variable name '{w}'"));
                    }
                    if vars.iter().any(|v| v.0 == w) {
                        return err(line, col, format!("variable '{w}' declared twice"));
                    }
                    vars.push((w, !adjoint));
                }
            }
            "groups" => {
                let mut gs = Vec::new();
                for part in rest_trim.split('|') {
                    gs.push(words(part).into_iter().map(|(w, c)| (w, line, c)).collect::<Vec<_>>());
                }
                groups = Some(gs);
            }
            "commuting" => commuting = true,
            "idempotent" | "orthogonal" | "commute" | "anticommute" | "fermionic" => {
                shorthands.push((kw.to_string(), words(rest_trim), line));
            }
            "rule" => exprs.push((Tag::Rule, rest_trim.to_string(), line, col_of(rest_trim))),
            "minimize" | "obj" => exprs.push((Tag::Objective(false), rest_trim.to_string(), line, col_of(rest_trim))),
            "maximize" => exprs.push((Tag::Objective(true), rest_trim.to_string(), line, col_of(rest_trim))),
            ">=0" => exprs.push((Tag::Ineq, rest_trim.to_string(), line, col_of(rest_trim))),
            "==0" => exprs.push((Tag::Eq, rest_trim.to_string(), line, col_of(rest_trim))),
            "ket0" => exprs.push((Tag::Ket, rest_trim.to_string(), line, col_of(rest_trim))),
            "expect>=0" => exprs.push((Tag::Expect, rest_trim.to_string(), line, col_of(rest_trim))),
            "constraint" => {
                let (tag, body) = if let Some(b) = rest_trim.trim_end().strip_suffix(">= 0").or(rest_trim.trim_end().strip_suffix(">=0")) {
                    (Tag::Ineq, b)
                } else if let Some(b) = rest_trim.trim_end().strip_suffix("== 0").or(rest_trim.trim_end().strip_suffix("==0")) {
                    (Tag::Eq, b)
                } else {
                    return err(line, col_of(rest_trim), "constraint must end in '>= 0' or '== 0'");
                };
                exprs.push((tag, body.to_string(), line, col_of(rest_trim)));
            }
            "ball" => match rest_trim.trim().parse::<f64>() {
                Ok(c) if c > 0.0 => ball = Some(c),
                _ => return err(line, col_of(rest_trim), "ball needs a positive number"),
            },
            _ => return err(line, col_of(trimmed), format!("unknown statement '{kw}'")),
        }
    }

    if vars.is_empty() {
        return err(1, 1, "no variables declared");
    }
    let mut alphabet = Alphabet::from_variables(&vars);
    if commuting {
        alphabet = alphabet.commutative();
    } else if let Some(gs) = groups {
        let mut g = vec![usize::MAX; alphabet.len()];
        for (gi, members) in gs.iter().enumerate() {
            for (w, line, col) in members {
                let Some(l) = alphabet.letter(w) else { return err(*line, *col, format!("undeclared variable '{w}'")) };
                g[l as usize] = gi;
                let adj = alphabet.adjoint_of(l).expect("in range");
                g[adj as usize] = gi;
            }
        }
        // unlisted letters share a group of their own
        let spare = gs.len();
        for x in g.iter_mut().filter(|x| **x == usize::MAX) {
            *x = spare;
        }
        alphabet = alphabet.with_commuting_groups(g).map_err(|e| ParseError { line: 1, col: 1, msg: e.to_string() })?;
    }

    let mut rules = RewriteSystem::for_alphabet(&alphabet);
    let rule_err = |line: usize, col: usize| move |e: crate::algebra::AlgebraError| ParseError { line, col, msg: e.to_string() };
    for (kind, ws, line) in &shorthands {
        let mut letters = Vec::new();
        for (w, col) in ws {
            match alphabet.letter(w) {
                Some(l) => letters.push((l, *col)),
                None => return err(*line, *col, format!("undeclared variable '{w}'")),
            }
        }
        let col = letters.first().map_or(1, |l| l.1);
        let ls: Vec<Letter> = letters.iter().map(|l| l.0).collect();
        match kind.as_str() {
            "idempotent" => {
                for &l in &ls {
                    rules = rules.idempotent(l).map_err(rule_err(*line, col))?;
                }
            }
            "fermionic" => rules = rules.fermionic(&ls, &alphabet).map_err(rule_err(*line, col))?,
            pairwise => {
                for (i, &a) in ls.iter().enumerate() {
                    for &b in &ls[i + 1..] {
                        rules = match pairwise {
                            "orthogonal" => rules.orthogonal(a, b),
                            "commute" => rules.commute(a, b),
                            _ => rules.anticommute(a, b),
                        }
                        .map_err(rule_err(*line, col))?;
                    }
                }
            }
        }
    }

    let mut objective: Option<(Polynomial, bool, usize, usize)> = None;
    let mut problem_parts: (Vec<Polynomial>, Vec<Polynomial>, Vec<Polynomial>, Vec<Polynomial>) = Default::default();
    for (tag, src, line, col) in &exprs {
        if *tag == Tag::Rule {
            let Some(eq) = src.find('=') else { return err(*line, *col, "rule needs 'pattern = replacement'") };
            let lhs = parse_expr(&src[..eq], &alphabet, *line, *col)?;
            let rhs = parse_expr(&src[eq + 1..], &alphabet, *line, *col + eq + 1)?;
            let pattern = match lhs.as_single_term() {
                Some((w, c)) if c == 1.0 && !w.is_identity() => w.clone(),
                _ => return err(*line, *col, "rule pattern must be a single monomial"),
            };
            rules.add_rule(pattern, rhs).map_err(rule_err(*line, *col))?;
            continue;
        }
        let p = parse_expr(src, &alphabet, *line, *col)?;
        match tag {
            Tag::Objective(max) => {
                if objective.is_some() {
                    return err(*line, *col, "objective declared twice");
                }
                objective = Some((p, *max, *line, *col));
            }
            Tag::Ineq => problem_parts.0.push(p),
            Tag::Eq => problem_parts.1.push(p),
            Tag::Ket => problem_parts.2.push(p),
            Tag::Expect => problem_parts.3.push(p),
            Tag::Rule => unreachable!(),
        }
    }
    Ok(ParsedFile {
        name,
        alphabet,
        rules,
        objective,
        inequalities: problem_parts.0,
        operator_equalities: problem_parts.1,
        state_kernel: problem_parts.2,
        expectation_ineqs: problem_parts.3,
        ball,
    })
}

fn fmt_num(c: f64) -> String {
    format!("{c}")
}

fn fmt_word(w: &Word, alphabet: &Alphabet) -> String {
    w.letters().iter().map(|&l| alphabet.name(l)).collect::<Vec<_>>().join("*")
}

/// Writes a polynomial in the parser's syntax; coefficients round-trip.
pub fn format_polynomial(p: &Polynomial, alphabet: &Alphabet) -> String {
    let mut out = String::new();
    for (i, (w, c)) in p.terms().enumerate() {
        let neg = c < 0.0 || (c == 0.0 && c.is_sign_negative());
        let a = c.abs();
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        if w.is_identity() {
            out.push_str(&fmt_num(a));
        } else if a == 1.0 {
            out.push_str(&fmt_word(w, alphabet));
        } else {
            let _ = write!(out, "{}*{}", fmt_num(a), fmt_word(w, alphabet));
        }
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

/// Prints a problem so that [`parse_problem`] rebuilds it term by term.
pub fn print_problem(p: &NcProblem) -> String {
    let a = &p.alphabet;
    let mut out = String::new();
    if !p.name.is_empty() {
        let _ = writeln!(out, "name {}", p.name);
    }
    let base = a.base_letters();
    // declaration order must be preserved: emit runs of equal kind
    let mut run: Vec<&str> = Vec::new();
    let mut run_herm = true;
    for &l in &base {
        let h = a.is_self_adjoint(l);
        if !run.is_empty() && h != run_herm {
            let _ = writeln!(out, "vars {}{}", run.join(" "), if run_herm { "" } else { " adjoint" });
            run.clear();
        }
        run_herm = h;
        run.push(a.name(l));
    }
    if !run.is_empty() {
        let _ = writeln!(out, "vars {}{}", run.join(" "), if run_herm { "" } else { " adjoint" });
    }
    if let Some(g) = a.groups() {
        let distinct = {
            let mut s: Vec<usize> = base.iter().map(|&l| g[l as usize]).collect();
            s.sort_unstable();
            s.dedup();
            s.len()
        };
        let all_commute = (0..a.len()).all(|i| (0..a.len()).all(|j| i == j || g[i] != g[j]));
        if all_commute {
            out.push_str("commuting\n");
        } else if distinct > 1 {
            let mut ids: Vec<usize> = g.to_vec();
            ids.sort_unstable();
            ids.dedup();
            let parts: Vec<String> = ids
                .iter()
                .map(|&gi| base.iter().filter(|&&l| g[l as usize] == gi).map(|&l| a.name(l)).collect::<Vec<_>>().join(" "))
                .collect();
            let _ = writeln!(out, "groups {}", parts.join(" | "));
        }
    }
    for rule in p.rules.rules() {
        if is_group_rule(rule, a) {
            continue;
        }
        let _ = writeln!(out, "rule {} = {}", fmt_word(&rule.pattern, a), format_polynomial(&rule.rhs, a));
    }
    if p.maximize {
        let _ = writeln!(out, "maximize {}", format_polynomial(&(-p.objective.clone()), a));
    } else {
        let _ = writeln!(out, "minimize {}", format_polynomial(&p.objective, a));
    }
    for q in &p.inequalities {
        let _ = writeln!(out, ">=0: {}", format_polynomial(q, a));
    }
    for e in &p.operator_equalities {
        let _ = writeln!(out, "==0: {}", format_polynomial(e, a));
    }
    for r in &p.state_kernel {
        let _ = writeln!(out, "ket0: {}", format_polynomial(r, a));
    }
    for s in &p.expectation_ineqs {
        let _ = writeln!(out, "expect>=0: {}", format_polynomial(s, a));
    }
    if let Some(c) = p.ball {
        let _ = writeln!(out, "ball {}", fmt_num(c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions() {
        let a = Alphabet::from_variables(&[("x".into(), true), ("b".into(), false)]);
        let p = parse_expr("2*x^2 - (x + 1)/2 + b'*b + b*b'", &a, 1, 1).unwrap();
        assert_eq!(p.coeff(&Word::new(vec![0, 0])), 2.0);
        assert_eq!(p.coeff(&Word::letter(0)), -0.5);
        assert_eq!(p.coeff(&Word::identity()), -0.5);
        assert_eq!(p.coeff(&Word::new(vec![2, 1])), 1.0);
        let q = parse_expr("(x*b)'", &a, 1, 1).unwrap();
        assert_eq!(q.coeff(&Word::new(vec![2, 0])), 1.0);
        assert_eq!(parse_expr("1e-3*x", &a, 1, 1).unwrap().coeff(&Word::letter(0)), 1e-3);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_problem("vars x\nminimize x*y\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 12));
        assert!(e.msg.contains("undeclared"));
        let e = parse_problem("vars x\nminimize x / x\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_problem("vars x\n>=0: 1 - x^2\n").unwrap_err();
        assert!(e.msg.contains("missing objective"));
        let e = parse_problem("vars a adjoint\nminimize a\n").unwrap_err();
        assert!(e.msg.contains("hermitian"));
        assert!(parse_problem("vars x\nminimize 2x\n").is_err());
        assert!(parse_problem("vars x\nminimize x - x\n").unwrap_err().msg.contains("empty objective"));
    }

    #[test]
    fn shorthands_and_groups() {
        let p = parse_problem("vars a b adjoint\nfermionic a b\nminimize a'*a + b'*b\n==0: a'*a + b'*b - 1\n").unwrap();
        assert!(p.rules.rules().len() >= 8);
        let p = parse_problem("vars x y z\ngroups x | y z\nminimize x*y + y*x\n").unwrap();
        let back = parse_problem(&print_problem(&p)).unwrap();
        assert_eq!(p, back);
        let p = parse_problem("vars x y\ncommuting\nidempotent x y\nmaximize x*y\nball 3\n").unwrap();
        assert!(p.maximize);
        assert_eq!(parse_problem(&print_problem(&p)).unwrap(), p);
    }
}
