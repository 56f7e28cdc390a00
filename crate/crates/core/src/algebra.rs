//! The free *-algebra: letters, words, the involution, real polynomials,
//! monomial rewrite systems and canonical monomial bases of quotient rings.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Index of a generator (or of the adjoint of a generator) in an [`Alphabet`].
pub type Letter = u16;

/// Coefficients whose magnitude falls below this after arithmetic are dropped.
pub const COEFF_EPS: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("letter index {letter} out of range for an alphabet of {size} letters")]
    LetterOutOfRange { letter: Letter, size: usize },
    #[error("rewrite system did not reach a fixed point within {cap} passes while reducing {word}")]
    NonTerminating { cap: usize, word: String },
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("invalid rewrite rule: {0}")]
    InvalidRule(String),
}

/// A finite product of letters. The empty word is the algebra identity.
///
/// Words are ordered by length first and then lexicographically on letter
/// indices, which fixes the row/column order of every moment matrix.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn new(letters: Vec<Letter>) -> Self {
        Word(letters)
    }

    pub fn letter(l: Letter) -> Self {
        Word(vec![l])
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    /// Concatenation `self · other`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn push(&mut self, l: Letter) {
        self.0.push(l);
    }

    pub fn fmt_with<'a>(&'a self, alphabet: &'a Alphabet) -> WordDisplay<'a> {
        WordDisplay { word: self, alphabet }
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "∅");
        }
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

impl From<Vec<Letter>> for Word {
    fn from(v: Vec<Letter>) -> Self {
        Word(v)
    }
}

pub struct WordDisplay<'a> {
    word: &'a Word,
    alphabet: &'a Alphabet,
}

impl fmt::Display for WordDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.word.is_identity() {
            return write!(f, "1");
        }
        for (i, &l) in self.word.letters().iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            match self.alphabet.names.get(l as usize) {
                Some(name) => write!(f, "{name}")?,
                None => write!(f, "#{l}")?,
            }
        }
        Ok(())
    }
}

/// The generating letters together with the adjoint map and optional
/// commutation structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Alphabet {
    names: Vec<String>,
    adjoint: Vec<Letter>,
    groups: Option<Vec<usize>>,
}

impl Alphabet {
    /// `n` self-adjoint letters (hermitian mode).
    pub fn hermitian<S: AsRef<str>>(names: &[S]) -> Self {
        Alphabet {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            adjoint: (0..names.len() as Letter).collect(),
            groups: None,
        }
    }

    /// `n` generators plus their `n` adjoints; letter `n + i` is `x_i*`
    /// and is named `name'`.
    pub fn with_adjoints<S: AsRef<str>>(names: &[S]) -> Self {
        let vars: Vec<(String, bool)> = names.iter().map(|s| (s.as_ref().to_string(), false)).collect();
        Self::from_variables(&vars)
    }

    /// Mixed declaration: `(name, hermitian)`. Base letters come first in
    /// declaration order, followed by the adjoints of the non-hermitian ones.
    pub fn from_variables(vars: &[(String, bool)]) -> Self {
        let n = vars.len();
        let mut names: Vec<String> = vars.iter().map(|(s, _)| s.clone()).collect();
        let mut adjoint: Vec<Letter> = (0..n as Letter).collect();
        for (i, (name, herm)) in vars.iter().enumerate() {
            if !herm {
                let idx = names.len() as Letter;
                names.push(format!("{name}'"));
                adjoint[i] = idx;
                adjoint.push(i as Letter);
            }
        }
        Alphabet { names, adjoint, groups: None }
    }

    /// Declares commuting groups: `groups[l]` is the group of letter `l`;
    /// letters in distinct groups commute.
    pub fn with_commuting_groups(mut self, groups: Vec<usize>) -> Result<Self, AlgebraError> {
        if groups.len() != self.names.len() {
            return Err(AlgebraError::InvalidAlphabet(format!(
                "commuting groups cover {} letters, alphabet has {}",
                groups.len(),
                self.names.len()
            )));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    /// Every letter in its own group: all letters commute.
    pub fn commutative(mut self) -> Self {
        self.groups = Some((0..self.names.len()).collect());
        self
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, l: Letter) -> &str {
        &self.names[l as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn adjoint_of(&self, l: Letter) -> Result<Letter, AlgebraError> {
        self.adjoint
            .get(l as usize)
            .copied()
            .ok_or(AlgebraError::LetterOutOfRange { letter: l, size: self.names.len() })
    }

    pub fn is_self_adjoint(&self, l: Letter) -> bool {
        self.adjoint.get(l as usize) == Some(&l)
    }

    pub fn is_hermitian_mode(&self) -> bool {
        self.adjoint.iter().enumerate().all(|(i, &a)| i == a as usize)
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn letter(&self, name: &str) -> Option<Letter> {
        self.names.iter().position(|n| n == name).map(|i| i as Letter)
    }

    /// The base generators: self-adjoint letters and the first letter of each
    /// adjoint pair.
    pub fn base_letters(&self) -> Vec<Letter> {
        (0..self.names.len() as Letter)
            .filter(|&l| self.adjoint[l as usize] >= l)
            .collect()
    }

    pub fn letters(&self) -> impl Iterator<Item = Letter> {
        0..self.names.len() as Letter
    }

    fn check(&self, w: &Word) -> Result<(), AlgebraError> {
        for &l in w.letters() {
            if l as usize >= self.names.len() {
                return Err(AlgebraError::LetterOutOfRange { letter: l, size: self.names.len() });
            }
        }
        Ok(())
    }
}

/// `w* = w_n* … w_1*`.
pub fn involute(w: &Word, alphabet: &Alphabet) -> Result<Word, AlgebraError> {
    alphabet.check(w)?;
    Ok(Word(w.0.iter().rev().map(|&l| alphabet.adjoint[l as usize]).collect()))
}

/// Sparse real polynomial keyed by words.
#[derive(Clone, Default, PartialEq)]
pub struct Polynomial {
    terms: BTreeMap<Word, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial::default()
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::term(Word::identity(), c)
    }

    pub fn term(w: Word, c: f64) -> Self {
        let mut p = Polynomial::zero();
        p.add_term(w, c);
        p
    }

    pub fn word(w: Word) -> Self {
        Self::term(w, 1.0)
    }

    pub fn letter(l: Letter) -> Self {
        Self::word(Word::letter(l))
    }

    pub fn from_terms<I: IntoIterator<Item = (Word, f64)>>(terms: I) -> Self {
        let mut p = Polynomial::zero();
        for (w, c) in terms {
            p.add_term(w, c);
        }
        p
    }

    pub fn add_term(&mut self, w: Word, c: f64) {
        match self.terms.entry(w) {
            Entry::Vacant(e) => {
                if c.abs() >= COEFF_EPS {
                    e.insert(c);
                }
            }
            Entry::Occupied(mut e) => {
                let v = *e.get() + c;
                if v.abs() < COEFF_EPS {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Polynomial, s: f64) {
        for (w, c) in &other.terms {
            self.add_term(w.clone(), c * s);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, f64)> {
        self.terms.iter().map(|(w, &c)| (w, c))
    }

    pub fn coeff(&self, w: &Word) -> f64 {
        self.terms.get(w).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Length of the longest word; 0 for constants and the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Word::len).max().unwrap_or(0)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(w, &c)| (w.clone(), c * s)))
    }

    /// Product by plain word concatenation, without reduction.
    pub fn mul_free(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (u, a) in &self.terms {
            for (v, b) in &other.terms {
                out.add_term(u.concat(v), a * b);
            }
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// The single `(word, coeff)` term, if there is exactly one.
    pub fn as_single_term(&self) -> Option<(&Word, f64)> {
        if self.terms.len() == 1 {
            self.terms.iter().next().map(|(w, &c)| (w, c))
        } else {
            None
        }
    }

    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        (self.clone() - other.clone()).max_abs_coeff() <= tol
    }

    pub fn fmt_with<'a>(&'a self, alphabet: &'a Alphabet) -> PolyDisplay<'a> {
        PolyDisplay { poly: self, alphabet }
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.terms.iter()).finish()
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(mut self, rhs: Polynomial) -> Polynomial {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(mut self, rhs: Polynomial) -> Polynomial {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Polynomial {
    type Output = Polynomial;
    fn mul(self, s: f64) -> Polynomial {
        self.scale(s)
    }
}

pub struct PolyDisplay<'a> {
    poly: &'a Polynomial,
    alphabet: &'a Alphabet,
}

impl fmt::Display for PolyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.poly.is_zero() {
            return write!(f, "0");
        }
        for (i, (w, c)) in self.poly.terms().enumerate() {
            let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
            if i == 0 {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if w.is_identity() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{}", w.fmt_with(self.alphabet))?;
            } else {
                write!(f, "{mag}*{}", w.fmt_with(self.alphabet))?;
            }
        }
        Ok(())
    }
}

/// A monomial rewrite rule `pattern → rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub pattern: Word,
    pub rhs: Polynomial,
}

pub const DEFAULT_MAX_PASSES: usize = 512;

/// An ordered set of degree-nonincreasing monomial rules. Rules are kept
/// sorted by pattern, so two systems built from the same rules in different
/// orders are identical.
#[derive(Clone, Debug)]
pub struct RewriteSystem {
    rules: Vec<Rule>,
    by_first: HashMap<Letter, Vec<usize>>,
    max_passes: usize,
}

impl PartialEq for RewriteSystem {
    fn eq(&self, other: &Self) -> bool {
        self.rules == other.rules && self.max_passes == other.max_passes
    }
}

impl Default for RewriteSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl RewriteSystem {
    pub fn new() -> Self {
        RewriteSystem { rules: Vec::new(), by_first: HashMap::new(), max_passes: DEFAULT_MAX_PASSES }
    }

    /// Empty system plus the commutation rules implied by the alphabet's
    /// commuting groups: `b a → a b` whenever `group(b) > group(a)`.
    pub fn for_alphabet(alphabet: &Alphabet) -> Self {
        let mut rs = Self::new();
        rs.rules.extend(group_commutation_rules(alphabet));
        rs.reindex();
        rs
    }

    pub fn with_max_passes(mut self, cap: usize) -> Self {
        self.max_passes = cap;
        self
    }

    pub fn max_passes(&self) -> usize {
        self.max_passes
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Adds `pattern → rhs`. Re-adding an identical rule is a no-op; a second
    /// rule with the same pattern and a different right-hand side is rejected.
    pub fn with_rule(mut self, pattern: Word, rhs: Polynomial) -> Result<Self, AlgebraError> {
        self.add_rule(pattern, rhs)?;
        Ok(self)
    }

    pub fn add_rule(&mut self, pattern: Word, rhs: Polynomial) -> Result<(), AlgebraError> {
        if pattern.is_identity() {
            return Err(AlgebraError::InvalidRule("empty pattern".into()));
        }
        if rhs.degree() > pattern.len() {
            return Err(AlgebraError::InvalidRule(format!(
                "right-hand side of degree {} exceeds pattern length {}",
                rhs.degree(),
                pattern.len()
            )));
        }
        if rhs.coeff(&pattern) != 0.0 {
            return Err(AlgebraError::InvalidRule("right-hand side contains its own pattern".into()));
        }
        match self.rules.binary_search_by(|r| r.pattern.cmp(&pattern)) {
            Ok(i) => {
                if self.rules[i].rhs.approx_eq(&rhs, 0.0) {
                    Ok(())
                } else {
                    Err(AlgebraError::InvalidRule(format!("conflicting rules for pattern {pattern:?}")))
                }
            }
            Err(i) => {
                self.rules.insert(i, Rule { pattern, rhs });
                self.reindex();
                Ok(())
            }
        }
    }

    /// The same system without the rules for which `drop` returns true.
    pub fn without_rules<F: Fn(&Rule) -> bool>(&self, drop: F) -> Self {
        let mut rs = RewriteSystem { rules: Vec::new(), by_first: HashMap::new(), max_passes: self.max_passes };
        rs.rules = self.rules.iter().filter(|r| !drop(r)).cloned().collect();
        rs.reindex();
        rs
    }

    /// `x x → x`.
    pub fn idempotent(self, l: Letter) -> Result<Self, AlgebraError> {
        self.with_rule(Word::new(vec![l, l]), Polynomial::letter(l))
    }

    /// `a b → 0` and `b a → 0`.
    pub fn orthogonal(self, a: Letter, b: Letter) -> Result<Self, AlgebraError> {
        self.with_rule(Word::new(vec![a, b]), Polynomial::zero())?
            .with_rule(Word::new(vec![b, a]), Polynomial::zero())
    }

    /// Index-sorted commutation: for `a < b`, `b a → a b`.
    pub fn commute(self, a: Letter, b: Letter) -> Result<Self, AlgebraError> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.with_rule(Word::new(vec![hi, lo]), Polynomial::word(Word::new(vec![lo, hi])))
    }

    /// Index-sorted anticommutation: for `a < b`, `b a → −a b`.
    pub fn anticommute(self, a: Letter, b: Letter) -> Result<Self, AlgebraError> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.with_rule(Word::new(vec![hi, lo]), Polynomial::term(Word::new(vec![lo, hi]), -1.0))
    }

    /// Canonical anticommutation relations for the annihilators `modes`
    /// (their adjoints are the creators). Normal form: creators before
    /// annihilators, each run in ascending mode order.
    pub fn fermionic(mut self, modes: &[Letter], alphabet: &Alphabet) -> Result<Self, AlgebraError> {
        let mut cre = Vec::with_capacity(modes.len());
        for &a in modes {
            let c = alphabet.adjoint_of(a)?;
            if c == a {
                return Err(AlgebraError::InvalidRule(format!(
                    "fermionic mode {} must not be self-adjoint",
                    alphabet.name(a)
                )));
            }
            cre.push(c);
        }
        for i in 0..modes.len() {
            for j in 0..modes.len() {
                let (ai, aj, ci, cj) = (modes[i], modes[j], cre[i], cre[j]);
                // a_i a_j† → δ_ij − a_j† a_i
                let mut rhs = Polynomial::term(Word::new(vec![cj, ai]), -1.0);
                if i == j {
                    rhs.add_term(Word::identity(), 1.0);
                }
                self.add_rule(Word::new(vec![ai, cj]), rhs)?;
                match i.cmp(&j) {
                    Ordering::Equal => {
                        self.add_rule(Word::new(vec![ai, ai]), Polynomial::zero())?;
                        self.add_rule(Word::new(vec![ci, ci]), Polynomial::zero())?;
                    }
                    Ordering::Greater => {
                        self.add_rule(Word::new(vec![ai, aj]), Polynomial::term(Word::new(vec![aj, ai]), -1.0))?;
                        self.add_rule(Word::new(vec![ci, cj]), Polynomial::term(Word::new(vec![cj, ci]), -1.0))?;
                    }
                    Ordering::Less => {}
                }
            }
        }
        Ok(self)
    }

    fn reindex(&mut self) {
        self.rules.sort_by(|a, b| a.pattern.cmp(&b.pattern));
        self.by_first.clear();
        for (i, r) in self.rules.iter().enumerate() {
            self.by_first.entry(r.pattern.letters()[0]).or_default().push(i);
        }
    }

    fn matches_at<'a>(&'a self, w: &'a [Letter], pos: usize) -> impl Iterator<Item = usize> + 'a {
        let tail = &w[pos..];
        self.by_first
            .get(&tail[0])
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(move |&i| tail.starts_with(self.rules[i].pattern.letters()))
    }

    fn first_match(&self, w: &Word) -> Option<(usize, usize)> {
        (0..w.len()).find_map(|pos| self.matches_at(w.letters(), pos).next().map(|r| (pos, r)))
    }

    fn all_matches(&self, w: &Word) -> Vec<(usize, usize)> {
        (0..w.len())
            .flat_map(|pos| self.matches_at(w.letters(), pos).map(move |r| (pos, r)))
            .collect()
    }

    pub fn is_reducible(&self, w: &Word) -> bool {
        self.first_match(w).is_some()
    }

    /// True when no rule pattern ends at the last letter of `w`.
    fn tail_irreducible(&self, w: &Word) -> bool {
        let n = w.len();
        !self.rules.iter().any(|r| {
            let p = r.pattern.len();
            p <= n && &w.letters()[n - p..] == r.pattern.letters()
        })
    }

    fn apply(&self, w: &Word, pos: usize, rule: usize) -> impl Iterator<Item = (Word, f64)> + '_ {
        let r = &self.rules[rule];
        let prefix = w.letters()[..pos].to_vec();
        let suffix = w.letters()[pos + r.pattern.len()..].to_vec();
        r.rhs.terms().map(move |(u, c)| {
            let mut v = prefix.clone();
            v.extend_from_slice(u.letters());
            v.extend_from_slice(&suffix);
            (Word(v), c)
        })
    }

    /// Canonical form of `w` modulo the rules.
    pub fn reduce(&self, w: &Word) -> Result<Polynomial, AlgebraError> {
        Reducer::new(self).reduce(w)
    }

    pub fn reduce_poly(&self, p: &Polynomial) -> Result<Polynomial, AlgebraError> {
        Reducer::new(self).reduce_poly(p)
    }

    /// Reduction where `pick(n)` chooses which of the `n` currently matching
    /// (position, rule) pairs is applied next. Used to probe confluence.
    pub fn reduce_with<F: FnMut(usize) -> usize>(&self, w: &Word, mut pick: F) -> Result<Polynomial, AlgebraError> {
        let mut out = Polynomial::zero();
        self.reduce_with_rec(w, 1.0, 0, &mut pick, &mut out)?;
        Ok(out)
    }

    fn reduce_with_rec<F: FnMut(usize) -> usize>(
        &self,
        w: &Word,
        c: f64,
        depth: usize,
        pick: &mut F,
        out: &mut Polynomial,
    ) -> Result<(), AlgebraError> {
        if depth > self.max_passes {
            return Err(AlgebraError::NonTerminating { cap: self.max_passes, word: format!("{w:?}") });
        }
        let m = self.all_matches(w);
        if m.is_empty() {
            out.add_term(w.clone(), c);
            return Ok(());
        }
        let (pos, rule) = m[pick(m.len()) % m.len()];
        let next: Vec<(Word, f64)> = self.apply(w, pos, rule).collect();
        for (v, cv) in next {
            self.reduce_with_rec(&v, c * cv, depth + 1, pick, out)?;
        }
        Ok(())
    }
}

fn group_commutation_rules(alphabet: &Alphabet) -> Vec<Rule> {
    let Some(groups) = alphabet.groups() else {
        return Vec::new();
    };
    let mut rules = Vec::new();
    for a in alphabet.letters() {
        for b in alphabet.letters() {
            if groups[b as usize] > groups[a as usize] {
                rules.push(Rule {
                    pattern: Word::new(vec![b, a]),
                    rhs: Polynomial::word(Word::new(vec![a, b])),
                });
            }
        }
    }
    rules
}

/// Rules implied by the alphabet's commuting groups (as generated by
/// [`RewriteSystem::for_alphabet`]).
pub fn is_group_rule(rule: &Rule, alphabet: &Alphabet) -> bool {
    group_commutation_rules(alphabet).iter().any(|r| r == rule)
}

/// Leftmost-first reduction with a memo table. Not shared across threads;
/// create one per assembly.
pub struct Reducer<'a> {
    rs: &'a RewriteSystem,
    cache: HashMap<Word, Polynomial>,
}

impl<'a> Reducer<'a> {
    pub fn new(rs: &'a RewriteSystem) -> Self {
        Reducer { rs, cache: HashMap::new() }
    }

    pub fn system(&self) -> &RewriteSystem {
        self.rs
    }

    pub fn reduce(&mut self, w: &Word) -> Result<Polynomial, AlgebraError> {
        self.reduce_rec(w, 0)
    }

    fn reduce_rec(&mut self, w: &Word, depth: usize) -> Result<Polynomial, AlgebraError> {
        if let Some(p) = self.cache.get(w) {
            return Ok(p.clone());
        }
        if depth > self.rs.max_passes {
            return Err(AlgebraError::NonTerminating { cap: self.rs.max_passes, word: format!("{w:?}") });
        }
        let out = match self.rs.first_match(w) {
            None => Polynomial::word(w.clone()),
            Some((pos, rule)) => {
                let next: Vec<(Word, f64)> = self.rs.apply(w, pos, rule).collect();
                let mut acc = Polynomial::zero();
                for (v, c) in next {
                    let r = self.reduce_rec(&v, depth + 1)?;
                    acc.add_scaled(&r, c);
                }
                acc
            }
        };
        self.cache.insert(w.clone(), out.clone());
        Ok(out)
    }

    pub fn reduce_poly(&mut self, p: &Polynomial) -> Result<Polynomial, AlgebraError> {
        let mut out = Polynomial::zero();
        for (w, c) in p.terms() {
            let r = self.reduce(w)?;
            out.add_scaled(&r, c);
        }
        Ok(out)
    }

    pub fn mul(&mut self, p: &Polynomial, q: &Polynomial) -> Result<Polynomial, AlgebraError> {
        let mut out = Polynomial::zero();
        for (u, a) in p.terms() {
            for (v, b) in q.terms() {
                let r = self.reduce(&u.concat(v))?;
                out.add_scaled(&r, a * b);
            }
        }
        Ok(out)
    }

    /// Reduced `u · p · v`.
    pub fn sandwich(&mut self, u: &Word, p: &Polynomial, v: &Word) -> Result<Polynomial, AlgebraError> {
        let mut out = Polynomial::zero();
        for (w, c) in p.terms() {
            let r = self.reduce(&u.concat(w).concat(v))?;
            out.add_scaled(&r, c);
        }
        Ok(out)
    }

    pub fn adjoint(&mut self, p: &Polynomial, alphabet: &Alphabet) -> Result<Polynomial, AlgebraError> {
        let mut out = Polynomial::zero();
        for (w, c) in p.terms() {
            let r = self.reduce(&involute(w, alphabet)?)?;
            out.add_scaled(&r, c);
        }
        Ok(out)
    }
}

/// Reduced product `p · q`.
pub fn poly_mul(p: &Polynomial, q: &Polynomial, rs: &RewriteSystem) -> Result<Polynomial, AlgebraError> {
    Reducer::new(rs).mul(p, q)
}

/// `p* = Σ p_w w*`, re-reduced.
pub fn poly_adjoint(p: &Polynomial, alphabet: &Alphabet, rs: &RewriteSystem) -> Result<Polynomial, AlgebraError> {
    Reducer::new(rs).adjoint(p, alphabet)
}

pub fn is_hermitian(p: &Polynomial, alphabet: &Alphabet, rs: &RewriteSystem) -> Result<bool, AlgebraError> {
    let canon = rs.reduce_poly(p)?;
    let adj = poly_adjoint(&canon, alphabet, rs)?;
    Ok(adj.approx_eq(&canon, 1e-12 * (1.0 + canon.max_abs_coeff())))
}

/// All canonical words of length ≤ `d`, in (length, lexicographic) order.
pub fn monomial_basis(d: usize, alphabet: &Alphabet, rs: &RewriteSystem) -> Vec<Word> {
    let mut out = vec![Word::identity()];
    let mut level = vec![Word::identity()];
    for _ in 0..d {
        let mut next = Vec::new();
        for w in &level {
            for l in alphabet.letters() {
                let mut v = w.clone();
                v.push(l);
                if rs.tail_irreducible(&v) {
                    next.push(v);
                }
            }
        }
        next.sort();
        out.extend(next.iter().cloned());
        level = next;
    }
    out
}

/// `|W_d|` for the free algebra on `letters` letters with no rules.
pub fn free_word_count(letters: usize, d: usize) -> usize {
    if letters == 1 {
        return d + 1;
    }
    (letters.pow(d as u32 + 1) - 1) / (letters - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: &[Letter]) -> Word {
        Word::new(v.to_vec())
    }

    #[test]
    fn involution_rules() {
        let h = Alphabet::hermitian(&["x1", "x2"]);
        assert_eq!(involute(&Word::identity(), &h).unwrap(), Word::identity());
        assert_eq!(involute(&w(&[0, 1]), &h).unwrap(), w(&[1, 0]));

        let g = Alphabet::with_adjoints(&["a1", "a2"]);
        // a1 a2 -> a2† a1†  (letters 3, 2)
        assert_eq!(involute(&w(&[0, 1]), &g).unwrap(), w(&[3, 2]));
        assert!(matches!(
            involute(&w(&[7]), &g),
            Err(AlgebraError::LetterOutOfRange { letter: 7, size: 4 })
        ));
    }

    #[test]
    fn word_order_is_length_then_lex() {
        let mut v = vec![w(&[1, 0]), w(&[2]), Word::identity(), w(&[0, 1]), w(&[0])];
        v.sort();
        assert_eq!(v, vec![Word::identity(), w(&[0]), w(&[2]), w(&[0, 1]), w(&[1, 0])]);
    }

    #[test]
    fn idempotent_reduction() {
        let rs = RewriteSystem::new().idempotent(0).unwrap();
        assert_eq!(rs.reduce(&w(&[0, 0])).unwrap(), Polynomial::letter(0));
        assert_eq!(rs.reduce(&w(&[0, 0, 0, 1, 0, 0])).unwrap(), Polynomial::word(w(&[0, 1, 0])));
    }

    #[test]
    fn orthogonal_projectors_vanish() {
        let rs = RewriteSystem::new().orthogonal(0, 1).unwrap();
        assert!(rs.reduce(&w(&[0, 1])).unwrap().is_zero());
        assert!(rs.reduce(&w(&[2, 1, 0])).unwrap().is_zero());
    }

    #[test]
    fn fermionic_anticommutator() {
        let a = Alphabet::with_adjoints(&["a1"]);
        let rs = RewriteSystem::new().fermionic(&[0], &a).unwrap();
        // a1 a1† = 1 - a1† a1
        let r = rs.reduce(&w(&[0, 1])).unwrap();
        let expect = Polynomial::one() - Polynomial::word(w(&[1, 0]));
        assert_eq!(r, expect);
        assert!(rs.reduce(&w(&[0, 0])).unwrap().is_zero());
    }

    #[test]
    fn fermionic_normal_order_two_modes() {
        let a = Alphabet::with_adjoints(&["a1", "a2"]);
        let rs = RewriteSystem::new().fermionic(&[0, 1], &a).unwrap();
        // a2 a1 -> -a1 a2
        assert_eq!(rs.reduce(&w(&[1, 0])).unwrap(), Polynomial::term(w(&[0, 1]), -1.0));
        // a1 a2† -> -a2† a1
        assert_eq!(rs.reduce(&w(&[0, 3])).unwrap(), Polynomial::term(w(&[3, 0]), -1.0));
        // a2† a1† -> -a1† a2†
        assert_eq!(rs.reduce(&w(&[3, 2])).unwrap(), Polynomial::term(w(&[2, 3]), -1.0));
    }

    #[test]
    fn commutative_sorting() {
        let a = Alphabet::hermitian(&["x1", "x2"]).commutative();
        let rs = RewriteSystem::for_alphabet(&a);
        assert_eq!(rs.reduce(&w(&[1, 0])).unwrap(), Polynomial::word(w(&[0, 1])));
        assert_eq!(rs.reduce(&w(&[1, 0, 1, 0])).unwrap(), Polynomial::word(w(&[0, 0, 1, 1])));
    }

    #[test]
    fn group_sort_is_stable_within_group() {
        // letters 0 and 2 in group 0, letter 1 in group 1
        let a = Alphabet::hermitian(&["a0", "b1", "a2"]).with_commuting_groups(vec![0, 1, 0]).unwrap();
        let rs = RewriteSystem::for_alphabet(&a);
        assert_eq!(rs.reduce(&w(&[2, 1, 0])).unwrap(), Polynomial::word(w(&[2, 0, 1])));
    }

    #[test]
    fn non_terminating_system_is_reported() {
        let rs = RewriteSystem::new()
            .with_rule(w(&[1, 0]), Polynomial::word(w(&[0, 1])))
            .unwrap()
            .with_rule(w(&[0, 1]), Polynomial::word(w(&[1, 0])))
            .unwrap()
            .with_max_passes(50);
        assert!(matches!(rs.reduce(&w(&[0, 1])), Err(AlgebraError::NonTerminating { .. })));
    }

    #[test]
    fn degree_increasing_rule_rejected() {
        let r = RewriteSystem::new().with_rule(w(&[0]), Polynomial::word(w(&[0, 1])));
        assert!(matches!(r, Err(AlgebraError::InvalidRule(_))));
    }

    #[test]
    fn products() {
        let rs = RewriteSystem::new().idempotent(0).unwrap();
        let x1 = Polynomial::letter(0);
        let x2 = Polynomial::letter(1);
        assert_eq!(poly_mul(&x1, &x2, &rs).unwrap(), Polynomial::word(w(&[0, 1])));
        assert_eq!(poly_mul(&x1, &x1, &rs).unwrap(), x1);
        let p = Polynomial::constant(0.5) + x1.clone();
        assert!(poly_mul(&p, &Polynomial::zero(), &rs).unwrap().is_zero());
    }

    #[test]
    fn adjoints_and_hermiticity() {
        let h = Alphabet::hermitian(&["x1", "x2"]);
        let rs = RewriteSystem::new();
        let p = Polynomial::word(w(&[0, 1])) + Polynomial::word(w(&[1, 0]));
        assert_eq!(poly_adjoint(&p, &h, &rs).unwrap(), p);
        assert!(is_hermitian(&p, &h, &rs).unwrap());
        let lin = Polynomial::letter(0) * 3.0 + Polynomial::letter(1) * 2.0 - Polynomial::one();
        assert_eq!(poly_adjoint(&lin, &h, &rs).unwrap(), lin);
        assert!(!is_hermitian(&Polynomial::word(w(&[0, 1])), &h, &rs).unwrap());

        let g = Alphabet::with_adjoints(&["a1"]);
        assert_eq!(poly_adjoint(&Polynomial::letter(0), &g, &rs).unwrap(), Polynomial::letter(1));
    }

    #[test]
    fn bases() {
        let h = Alphabet::hermitian(&["x1", "x2"]);
        let b = monomial_basis(2, &h, &RewriteSystem::new());
        assert_eq!(b, vec![Word::identity(), w(&[0]), w(&[1]), w(&[0, 0]), w(&[0, 1]), w(&[1, 0]), w(&[1, 1])]);

        let rs = RewriteSystem::new().idempotent(0).unwrap();
        let b = monomial_basis(2, &h, &rs);
        assert_eq!(b, vec![Word::identity(), w(&[0]), w(&[1]), w(&[0, 1]), w(&[1, 0]), w(&[1, 1])]);

        let c = h.clone().commutative();
        let b = monomial_basis(2, &c, &RewriteSystem::for_alphabet(&c));
        assert_eq!(b.len(), 6);
        assert_eq!(b[3..], [w(&[0, 0]), w(&[0, 1]), w(&[1, 1])]);

        let g = Alphabet::with_adjoints(&["a", "b"]);
        assert_eq!(monomial_basis(3, &g, &RewriteSystem::new()).len(), free_word_count(4, 3));
        assert_eq!(monomial_basis(0, &g, &RewriteSystem::new()), vec![Word::identity()]);
    }

    #[test]
    fn drop_tiny_coefficients() {
        let mut p = Polynomial::letter(0);
        p.add_term(Word::letter(0), -1.0 + 1e-16);
        assert!(p.is_zero());
    }
}
