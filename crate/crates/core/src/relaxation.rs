//! Moment relaxations: problems over operator variables, the moment and
//! localizing matrices they induce, and their assembly into block SDPs.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::algebra::{
    involute, is_hermitian, monomial_basis, AlgebraError, Alphabet, Letter, Polynomial, Reducer, RewriteSystem,
    Word,
};
use crate::sdp::{LinearRow, LmiBlock, SdpProblem, SymSparse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxationError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("relaxation order {k} is too small: polynomials of degree {degree} need k ≥ {needed}")]
    OrderTooSmall { k: usize, degree: usize, needed: usize },
    #[error("{what} is not hermitian")]
    NonHermitian { what: String },
    #[error("word {0} is outside the moment basis")]
    WordOutsideBasis(String),
    #[error("{0}")]
    Invalid(String),
}

/// Minimize `⟨φ, p(X) φ⟩` over operators `X` and unit vectors `φ` subject to
///
/// * `q_i(X) ⪰ 0` (`inequalities`),
/// * `e_i(X) = 0` (`operator_equalities`),
/// * `r_i(X) φ = 0` (`state_kernel`),
/// * `⟨φ, s_i(X) φ⟩ ≥ 0` (`expectation_ineqs`),
/// * `C² − Σ x*x ⪰ 0` when `ball` is set,
///
/// with the algebraic relations in `rules` imposed identically.
///
/// `objective` is always the polynomial being minimized. Problems posed as
/// maximizations store the negated objective and set `maximize` so that
/// reports can state the bound with the original sign.
#[derive(Clone, Debug, PartialEq)]
pub struct NcProblem {
    pub name: String,
    pub alphabet: Alphabet,
    pub rules: RewriteSystem,
    pub objective: Polynomial,
    pub inequalities: Vec<Polynomial>,
    pub operator_equalities: Vec<Polynomial>,
    pub state_kernel: Vec<Polynomial>,
    pub expectation_ineqs: Vec<Polynomial>,
    pub ball: Option<f64>,
    pub maximize: bool,
}

impl NcProblem {
    pub fn new(alphabet: Alphabet, rules: RewriteSystem, objective: Polynomial) -> Self {
        NcProblem {
            name: String::new(),
            alphabet,
            rules,
            objective,
            inequalities: Vec::new(),
            operator_equalities: Vec::new(),
            state_kernel: Vec::new(),
            expectation_ineqs: Vec::new(),
            ball: None,
            maximize: false,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn with_inequality(mut self, q: Polynomial) -> Self {
        self.inequalities.push(q);
        self
    }

    pub fn with_operator_equality(mut self, e: Polynomial) -> Self {
        self.operator_equalities.push(e);
        self
    }

    pub fn with_state_kernel(mut self, r: Polynomial) -> Self {
        self.state_kernel.push(r);
        self
    }

    pub fn with_expectation(mut self, s: Polynomial) -> Self {
        self.expectation_ineqs.push(s);
        self
    }

    pub fn with_ball(mut self, c: f64) -> Self {
        self.ball = Some(c);
        self
    }

    /// Converts a relaxation value of the stored (minimized) objective into
    /// the bound on the problem as posed.
    pub fn reported(&self, value: f64) -> f64 {
        if self.maximize {
            -value
        } else {
            value
        }
    }

    fn all_polynomials(&self) -> impl Iterator<Item = &Polynomial> {
        std::iter::once(&self.objective)
            .chain(&self.inequalities)
            .chain(&self.operator_equalities)
            .chain(&self.state_kernel)
            .chain(&self.expectation_ineqs)
    }

    pub fn max_degree(&self) -> usize {
        let ball = if self.ball.is_some() { 2 } else { 0 };
        self.all_polynomials().map(Polynomial::degree).max().unwrap_or(0).max(ball)
    }

    /// Smallest order whose relaxation contains every declared polynomial.
    pub fn min_order(&self) -> usize {
        self.max_degree().div_ceil(2).max(1)
    }

    /// The localizing polynomials used at assembly: the declared `q_i`, the
    /// ball polynomial, and `±e` for operator equalities that could not be
    /// eliminated.
    pub fn localizers(&self) -> Vec<Polynomial> {
        let mut out = self.inequalities.clone();
        if let Some(c) = self.ball {
            out.push(ball_polynomial(&self.alphabet, c));
        }
        for e in &self.operator_equalities {
            out.push(e.clone());
            out.push(-e.clone());
        }
        out
    }

    /// Reduces all polynomials, eliminates generators solved by degree-1
    /// operator equalities, and checks hermiticity.
    pub fn normalized(&self) -> Result<NcProblem, RelaxationError> {
        let mut out = self.clone();
        let mut pending = Vec::new();
        for e in &self.operator_equalities {
            let e = out.rules.reduce_poly(e)?;
            if e.is_zero() {
                continue;
            }
            match eliminable_letter(&e, &out) {
                Some(l) => out.rules = eliminate(&out.rules, &out.alphabet, l, &e)?,
                None => pending.push(e),
            }
        }
        let rs = out.rules.clone();
        let red = |p: &Polynomial| rs.reduce_poly(p);
        out.objective = red(&out.objective)?;
        out.inequalities = out.inequalities.iter().map(red).collect::<Result<_, _>>()?;
        out.operator_equalities = pending.iter().map(red).collect::<Result<_, _>>()?;
        out.state_kernel = out.state_kernel.iter().map(red).collect::<Result<_, _>>()?;
        out.expectation_ineqs = out.expectation_ineqs.iter().map(red).collect::<Result<_, _>>()?;

        let check = |p: &Polynomial, what: String| -> Result<(), RelaxationError> {
            if is_hermitian(p, &out.alphabet, &out.rules)? {
                Ok(())
            } else {
                Err(RelaxationError::NonHermitian { what })
            }
        };
        check(&out.objective, "objective".into())?;
        for (i, q) in out.inequalities.iter().enumerate() {
            check(q, format!("inequality {}", i + 1))?;
        }
        for (i, e) in out.operator_equalities.iter().enumerate() {
            check(e, format!("operator equality {} (not eliminable)", i + 1))?;
        }
        for (i, s) in out.expectation_ineqs.iter().enumerate() {
            check(s, format!("expectation constraint {}", i + 1))?;
        }
        if let Some(c) = out.ball {
            if !(c > 0.0 && c.is_finite()) {
                return Err(RelaxationError::Invalid(format!("ball constant must be positive, got {c}")));
            }
        }
        Ok(out)
    }

    /// True when the constraints visibly bound every letter: a ball constant,
    /// or each letter satisfying `x*x + x x*` reducing below degree 2
    /// (projectors, fermionic modes), or a localizer of the form
    /// `c − Σ a_i x_i* x_i` covering the remaining letters.
    pub fn has_archimedean_witness(&self) -> bool {
        if self.ball.is_some() {
            return true;
        }
        let mut reducer = Reducer::new(&self.rules);
        let mut unbounded: HashSet<Letter> = HashSet::new();
        for l in self.alphabet.letters() {
            if self.rules.is_reducible(&Word::letter(l)) {
                continue;
            }
            let Ok(adj) = self.alphabet.adjoint_of(l) else { return false };
            let p = Polynomial::word(Word::new(vec![adj, l])) + Polynomial::word(Word::new(vec![l, adj]));
            match reducer.reduce_poly(&p) {
                Ok(r) if r.degree() < 2 => {}
                _ => {
                    unbounded.insert(l);
                }
            }
        }
        if unbounded.is_empty() {
            return true;
        }
        self.inequalities.iter().any(|q| {
            let mut covered = HashSet::new();
            for (w, c) in q.terms() {
                match w.letters() {
                    [] => {}
                    [a, b] if c < 0.0 && self.alphabet.adjoint_of(*a).ok() == Some(*b) => {
                        covered.insert(*a);
                        covered.insert(*b);
                    }
                    _ => return false,
                }
            }
            q.coeff(&Word::identity()) > 0.0 && unbounded.iter().all(|l| covered.contains(l))
        })
    }
}

/// `C² − Σ_l x_l* x_l` over every letter.
pub fn ball_polynomial(alphabet: &Alphabet, c: f64) -> Polynomial {
    let mut p = Polynomial::constant(c * c);
    for l in alphabet.letters() {
        let adj = alphabet.adjoint_of(l).expect("letter in range");
        p.add_term(Word::new(vec![adj, l]), -1.0);
    }
    p
}

/// A self-adjoint letter occurring linearly in a degree-1 `e`; the last such
/// letter is preferred.
fn eliminable_letter(e: &Polynomial, problem: &NcProblem) -> Option<Letter> {
    if e.degree() != 1 {
        return None;
    }
    // rules whose pattern avoids l survive elimination, so l must not occur
    // in their right-hand sides
    let in_surviving_rhs = |l: Letter| {
        problem.rules.rules().iter().any(|r| {
            !r.pattern.letters().contains(&l) && r.rhs.terms().any(|(w, _)| w.letters().contains(&l))
        })
    };
    let mut best = None;
    for (w, c) in e.terms() {
        if let [l] = w.letters() {
            if c.abs() > 1e-12
                && problem.alphabet.is_self_adjoint(*l)
                && !in_surviving_rhs(*l)
                && !problem.rules.is_reducible(w)
            {
                best = Some(*l);
            }
        }
    }
    best
}

/// Adds `l → −(e − c l)/c` and drops rules mentioning `l`, after checking
/// that each dropped rule still holds under the substitution.
fn eliminate(rs: &RewriteSystem, alphabet: &Alphabet, l: Letter, e: &Polynomial) -> Result<RewriteSystem, RelaxationError> {
    let lw = Word::letter(l);
    let c = e.coeff(&lw);
    let mut rhs = e.clone();
    rhs.add_term(lw.clone(), -c);
    let rhs = rhs.scale(-1.0 / c);
    let mentions = |r: &crate::algebra::Rule| r.pattern.letters().contains(&l);
    let mut next = rs.without_rules(mentions);
    next.add_rule(lw, rhs)?;
    for rule in rs.rules().iter().filter(|r| mentions(r)) {
        let lhs = next.reduce(&rule.pattern)?;
        let rhs = next.reduce_poly(&rule.rhs)?;
        if !(lhs - rhs).approx_eq(&Polynomial::zero(), 1e-12) {
            return Err(RelaxationError::Invalid(format!(
                "eliminating {} breaks the rule {} = {}",
                alphabet.name(l),
                rule.pattern.fmt_with(alphabet),
                rule.rhs.fmt_with(alphabet)
            )));
        }
    }
    Ok(next)
}

/// `⌈deg q / 2⌉`.
pub fn half_degree(q: &Polynomial) -> usize {
    q.degree().div_ceil(2)
}

/// How a canonical word's moment is expressed in the SDP variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Moment {
    /// `y_w = sign · y_var`.
    Var { var: usize, sign: f64 },
    /// Forced to zero by `w* = −w`.
    Zero,
}

/// Affine form `constant + Σ coeff · y_var`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineForm {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineForm {
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * y[v]).sum::<f64>()
    }

    fn from_map(constant: f64, acc: HashMap<usize, f64>) -> Self {
        let mut terms: Vec<(usize, f64)> = acc.into_iter().filter(|&(_, c)| c.abs() > 1e-14).collect();
        terms.sort_by_key(|t| t.0);
        AffineForm { constant, terms }
    }
}

/// Word-to-variable bookkeeping for one relaxation: the canonical words of
/// length ≤ 2k and the (real-symmetric) identification `y_w = y_{w*}`.
#[derive(Clone, Debug)]
pub struct MomentIndexMap {
    basis: Vec<Word>,
    moments: HashMap<Word, Moment>,
    var_words: Vec<Word>,
    normalization: usize,
}

impl MomentIndexMap {
    pub fn basis(&self) -> &[Word] {
        &self.basis
    }

    pub fn num_vars(&self) -> usize {
        self.var_words.len()
    }

    /// The representative word of each variable.
    pub fn var_words(&self) -> &[Word] {
        &self.var_words
    }

    pub fn normalization_var(&self) -> usize {
        self.normalization
    }

    pub fn moment(&self, w: &Word) -> Option<Moment> {
        self.moments.get(w).copied()
    }

    pub fn value(&self, y: &[f64], w: &Word) -> Option<f64> {
        self.moment(w).map(|m| match m {
            Moment::Var { var, sign } => sign * y[var],
            Moment::Zero => 0.0,
        })
    }

    /// `L_y(p)` as an affine form over the variables.
    pub fn linear_form(&self, p: &Polynomial) -> Result<AffineForm, RelaxationError> {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for (w, c) in p.terms() {
            match self.moments.get(w) {
                Some(Moment::Var { var, sign }) => *acc.entry(*var).or_insert(0.0) += c * sign,
                Some(Moment::Zero) => {}
                None => return Err(RelaxationError::WordOutsideBasis(format!("{w:?}"))),
            }
        }
        Ok(AffineForm::from_map(0.0, acc))
    }
}

/// Allocates variables lazily as words are referenced, so that every variable
/// ends up in some block or row.
struct MapBuilder<'a> {
    alphabet: &'a Alphabet,
    basis: Vec<Word>,
    in_basis: HashSet<Word>,
    moments: HashMap<Word, Moment>,
    var_words: Vec<Word>,
    pairing_rows: Vec<(Word, Polynomial)>,
}

impl<'a> MapBuilder<'a> {
    fn new(alphabet: &'a Alphabet, basis: Vec<Word>) -> Self {
        let in_basis = basis.iter().cloned().collect();
        MapBuilder {
            alphabet,
            basis,
            in_basis,
            moments: HashMap::new(),
            var_words: Vec::new(),
            pairing_rows: Vec::new(),
        }
    }

    fn moment(&mut self, w: &Word, reducer: &mut Reducer) -> Result<Moment, RelaxationError> {
        if let Some(m) = self.moments.get(w) {
            return Ok(*m);
        }
        if !self.in_basis.contains(w) {
            return Err(RelaxationError::WordOutsideBasis(format!("{}", w.fmt_with(self.alphabet))));
        }
        let adj = reducer.reduce(&involute(w, self.alphabet)?)?;
        let m = match adj.as_single_term() {
            Some((u, s)) if u == w => {
                if s > 0.0 {
                    self.new_var(w)
                } else {
                    Moment::Zero
                }
            }
            Some((u, s)) if (s.abs() - 1.0).abs() < 1e-12 && self.in_basis.contains(u) => {
                let m = self.new_var(w);
                let Moment::Var { var, .. } = m else { unreachable!() };
                self.moments.insert(u.clone(), Moment::Var { var, sign: s.signum() });
                m
            }
            _ => {
                self.pairing_rows.push((w.clone(), adj));
                self.new_var(w)
            }
        };
        self.moments.insert(w.clone(), m);
        Ok(m)
    }

    fn new_var(&mut self, w: &Word) -> Moment {
        self.var_words.push(w.clone());
        Moment::Var { var: self.var_words.len() - 1, sign: 1.0 }
    }

    fn form(&mut self, p: &Polynomial, reducer: &mut Reducer) -> Result<AffineForm, RelaxationError> {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for (w, c) in p.terms() {
            if let Moment::Var { var, sign } = self.moment(w, reducer)? {
                *acc.entry(var).or_insert(0.0) += c * sign;
            }
        }
        Ok(AffineForm::from_map(0.0, acc))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockKind {
    Moment,
    /// Index into the relaxation's localizer list.
    Localizing(usize),
}

/// A matrix of affine forms over a row basis of words.
#[derive(Clone, Debug)]
pub struct SymbolicBlock {
    pub kind: BlockKind,
    pub row_basis: Vec<Word>,
    /// Row-major, `n × n`, symmetric.
    pub entries: Vec<AffineForm>,
}

impl SymbolicBlock {
    pub fn size(&self) -> usize {
        self.row_basis.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> &AffineForm {
        &self.entries[i * self.size() + j]
    }

    pub fn evaluate(&self, y: &[f64]) -> nalgebra::DMatrix<f64> {
        let n = self.size();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.entry(i, j).eval(y))
    }

    fn compile(&self, label: String) -> LmiBlock {
        let n = self.size();
        let mut constant = SymSparse::default();
        let mut per_var: HashMap<usize, Vec<(usize, usize, f64)>> = HashMap::new();
        for i in 0..n {
            for j in i..n {
                let f = self.entry(i, j);
                if f.constant != 0.0 {
                    constant.entries.push((i, j, f.constant));
                }
                for &(v, c) in &f.terms {
                    per_var.entry(v).or_default().push((i, j, c));
                }
            }
        }
        let mut coeffs: Vec<(usize, SymSparse)> =
            per_var.into_iter().map(|(v, entries)| (v, SymSparse { entries })).collect();
        coeffs.sort_by_key(|c| c.0);
        LmiBlock { label, size: n, constant, coeffs }
    }
}

/// Provenance of an equality row of the assembled SDP.
#[derive(Clone, Debug, PartialEq)]
pub enum RowOrigin {
    /// `y_∅ = 1`.
    Normalization,
    /// `L(w r_i) = 0`.
    StateKernel { index: usize, word: Word },
    /// `y_w = L(w*)` for a word whose adjoint is not a single monomial.
    Pairing { word: Word },
}

/// An assembled relaxation of a fixed order.
#[derive(Clone, Debug)]
pub struct Relaxation {
    pub order: usize,
    /// The normalized problem (reduced polynomials, eliminated generators).
    pub problem: NcProblem,
    pub localizers: Vec<Polynomial>,
    pub map: MomentIndexMap,
    /// Block 0 is the moment matrix; block `i + 1` localizes `localizers[i]`.
    pub blocks: Vec<SymbolicBlock>,
    pub sdp: SdpProblem,
    pub eq_origins: Vec<RowOrigin>,
    pub warnings: Vec<String>,
}

impl Relaxation {
    pub fn moment_block(&self) -> &SymbolicBlock {
        &self.blocks[0]
    }

    /// `M_j(y)`: the leading principal submatrix of the moment matrix over
    /// words of length ≤ j.
    pub fn moment_matrix(&self, y: &[f64], j: usize) -> nalgebra::DMatrix<f64> {
        let full = self.blocks[0].evaluate(y);
        let n = self.blocks[0].row_basis.iter().take_while(|w| w.len() <= j).count();
        full.view((0, 0), (n, n)).into_owned()
    }
}

/// `M_k(y)` over the canonical words of length ≤ k.
pub fn build_moment_block(k: usize, problem: &NcProblem) -> Result<SymbolicBlock, RelaxationError> {
    let mut reducer = Reducer::new(&problem.rules);
    let mut mb = MapBuilder::new(&problem.alphabet, monomial_basis(2 * k, &problem.alphabet, &problem.rules));
    localizing(&Polynomial::one(), k, BlockKind::Moment, problem, &mut mb, &mut reducer)
}

/// `M_{k−d_q}(q y)`.
pub fn build_localizing_block(q: &Polynomial, k: usize, problem: &NcProblem) -> Result<SymbolicBlock, RelaxationError> {
    let mut reducer = Reducer::new(&problem.rules);
    let mut mb = MapBuilder::new(&problem.alphabet, monomial_basis(2 * k, &problem.alphabet, &problem.rules));
    localizing(q, k, BlockKind::Localizing(0), problem, &mut mb, &mut reducer)
}

fn localizing(
    q: &Polynomial,
    k: usize,
    kind: BlockKind,
    problem: &NcProblem,
    mb: &mut MapBuilder,
    reducer: &mut Reducer,
) -> Result<SymbolicBlock, RelaxationError> {
    let d = half_degree(q);
    if d > k {
        return Err(RelaxationError::OrderTooSmall { k, degree: q.degree(), needed: d });
    }
    let rows = monomial_basis(k - d, &problem.alphabet, &problem.rules);
    let n = rows.len();
    let mut entries = vec![AffineForm::default(); n * n];
    let adjoints: Vec<Word> = rows.iter().map(|v| involute(v, &problem.alphabet)).collect::<Result<_, _>>()?;
    for i in 0..n {
        for j in i..n {
            let p = reducer.sandwich(&adjoints[i], q, &rows[j])?;
            let f = mb.form(&p, reducer)?;
            entries[j * n + i] = f.clone();
            entries[i * n + j] = f;
        }
    }
    Ok(SymbolicBlock { kind, row_basis: rows, entries })
}

/// Rows `L(w r) = 0` for every canonical `w` with `|w| ≤ 2k − deg r`, deduplicated.
pub fn build_moment_vector_rows(r: &Polynomial, k: usize, problem: &NcProblem) -> Result<Vec<LinearRow>, RelaxationError> {
    let mut reducer = Reducer::new(&problem.rules);
    let mut mb = MapBuilder::new(&problem.alphabet, monomial_basis(2 * k, &problem.alphabet, &problem.rules));
    let rows = kernel_rows(r, k, problem, &mut mb, &mut reducer)?;
    Ok(rows.into_iter().map(|(_, row)| row).collect())
}

fn kernel_rows(
    r: &Polynomial,
    k: usize,
    problem: &NcProblem,
    mb: &mut MapBuilder,
    reducer: &mut Reducer,
) -> Result<Vec<(Word, LinearRow)>, RelaxationError> {
    if r.is_zero() {
        return Ok(Vec::new());
    }
    let dr = r.degree();
    if dr > 2 * k {
        return Err(RelaxationError::OrderTooSmall { k, degree: dr, needed: dr.div_ceil(2) });
    }
    let mut seen: HashSet<Vec<(usize, u64)>> = HashSet::new();
    let mut out = Vec::new();
    for w in monomial_basis(2 * k - dr, &problem.alphabet, &problem.rules) {
        let p = reducer.sandwich(&w, r, &Word::identity())?;
        let f = mb.form(&p, reducer)?;
        if f.terms.is_empty() {
            continue;
        }
        let key: Vec<(usize, u64)> = f.terms.iter().map(|&(v, c)| (v, c.to_bits())).collect();
        if seen.insert(key) {
            out.push((w, LinearRow { coeffs: f.terms, rhs: 0.0 }));
        }
    }
    Ok(out)
}

/// The single row `L(s) ≥ 0`.
pub fn build_expectation_rows(s: &Polynomial, problem: &NcProblem, k: usize) -> Result<LinearRow, RelaxationError> {
    let mut reducer = Reducer::new(&problem.rules);
    let mut mb = MapBuilder::new(&problem.alphabet, monomial_basis(2 * k, &problem.alphabet, &problem.rules));
    let f = mb.form(s, &mut reducer)?;
    Ok(LinearRow { coeffs: f.terms, rhs: 0.0 })
}

/// Assembles the order-`k` relaxation.
pub fn assemble(problem: &NcProblem, k: usize) -> Result<Relaxation, RelaxationError> {
    let problem = problem.normalized()?;
    let deg = problem.max_degree();
    if 2 * k < deg || k == 0 {
        return Err(RelaxationError::OrderTooSmall { k, degree: deg, needed: deg.div_ceil(2).max(1) });
    }
    let mut warnings = Vec::new();
    if !problem.has_archimedean_witness() {
        warnings.push(
            "no Archimedean witness among the constraints; relaxation bounds may not converge (consider a ball constant)"
                .to_string(),
        );
    }
    let localizers = problem.localizers();
    let rs = problem.rules.clone();
    let mut reducer = Reducer::new(&rs);
    let mut mb = MapBuilder::new(&problem.alphabet, monomial_basis(2 * k, &problem.alphabet, &problem.rules));

    // y_∅ is variable 0
    let norm = match mb.moment(&Word::identity(), &mut reducer)? {
        Moment::Var { var, .. } => var,
        Moment::Zero => unreachable!("the identity is self-adjoint"),
    };

    let mut blocks = vec![localizing(&Polynomial::one(), k, BlockKind::Moment, &problem, &mut mb, &mut reducer)?];
    for (i, q) in localizers.iter().enumerate() {
        blocks.push(localizing(q, k, BlockKind::Localizing(i), &problem, &mut mb, &mut reducer)?);
    }

    let mut linear_eqs = vec![LinearRow { coeffs: vec![(norm, 1.0)], rhs: 1.0 }];
    let mut eq_origins = vec![RowOrigin::Normalization];
    for (i, r) in problem.state_kernel.iter().enumerate() {
        for (w, row) in kernel_rows(r, k, &problem, &mut mb, &mut reducer)? {
            linear_eqs.push(row);
            eq_origins.push(RowOrigin::StateKernel { index: i, word: w });
        }
    }

    let mut linear_ineqs = Vec::new();
    for s in &problem.expectation_ineqs {
        let f = mb.form(s, &mut reducer)?;
        linear_ineqs.push(LinearRow { coeffs: f.terms, rhs: 0.0 });
    }

    let obj = mb.form(&problem.objective, &mut reducer)?;

    // pairing rows y_w − L(w*) = 0; allocating may reference new words, so loop
    let mut done = 0;
    while done < mb.pairing_rows.len() {
        let (w, adj) = mb.pairing_rows[done].clone();
        done += 1;
        let Moment::Var { var, .. } = mb.moment(&w, &mut reducer)? else { continue };
        let f = mb.form(&adj, &mut reducer)?;
        let mut acc: HashMap<usize, f64> = f.terms.into_iter().map(|(v, c)| (v, -c)).collect();
        *acc.entry(var).or_insert(0.0) += 1.0;
        let row = AffineForm::from_map(0.0, acc);
        if !row.terms.is_empty() {
            linear_eqs.push(LinearRow { coeffs: row.terms, rhs: 0.0 });
            eq_origins.push(RowOrigin::Pairing { word: w });
        }
    }

    let num_vars = mb.var_words.len();
    let mut objective = vec![0.0; num_vars];
    for &(v, c) in &obj.terms {
        objective[v] += c;
    }
    let sdp_blocks = blocks
        .iter()
        .map(|b| {
            let label = match b.kind {
                BlockKind::Moment => format!("moment order {k}"),
                BlockKind::Localizing(i) => format!("localizing {}", i + 1),
            };
            b.compile(label)
        })
        .collect();
    let sdp = SdpProblem {
        num_vars,
        objective,
        objective_constant: 0.0,
        blocks: sdp_blocks,
        linear_eqs,
        linear_ineqs,
    };
    let map = MomentIndexMap {
        basis: mb.basis,
        moments: mb.moments,
        var_words: mb.var_words,
        normalization: norm,
    };
    Ok(Relaxation { order: k, problem, localizers, map, blocks, sdp, eq_origins, warnings })
}

/// `L_y(p) = Σ p_w y_w`.
pub fn eval_moment_functional(y: &[f64], p: &Polynomial, map: &MomentIndexMap) -> Result<f64, RelaxationError> {
    let mut total = 0.0;
    for (w, c) in p.terms() {
        let v = map.value(y, w).ok_or_else(|| RelaxationError::WordOutsideBasis(format!("{w:?}")))?;
        total += c * v;
    }
    Ok(total)
}
