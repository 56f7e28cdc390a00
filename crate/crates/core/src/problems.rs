//! Builders for standard problem classes and a small corpus of worked
//! instances with known answers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::algebra::{is_hermitian, AlgebraError, Alphabet, Letter, Polynomial, RewriteSystem, Word};
use crate::relaxation::NcProblem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid fermion system: {0}")]
    Fermion(String),
}

/// A two-party Bell scenario. `parties[p][x]` is the number of outcomes of
/// measurement `x` of party `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct BellScenario {
    pub parties: Vec<Vec<usize>>,
    /// `((x, a), (y, b), c)`: weight `c` on `P(a b | x y)`.
    pub coefficients: Vec<((usize, usize), (usize, usize), f64)>,
    /// Let every projector commute (local hidden variable models).
    pub classical: bool,
}

impl BellScenario {
    /// CHSH in correlator form, `Σ_{xy} (−1)^{xy} ⟨A_x B_y⟩` with
    /// `⟨A_x B_y⟩ = Σ_{ab} (−1)^{a+b} P(a b | x y)`.
    pub fn chsh() -> Self {
        let mut coefficients = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                let s = if x * y == 1 { -1.0 } else { 1.0 };
                for a in 0..2 {
                    for b in 0..2 {
                        let t = if (a + b) % 2 == 0 { 1.0 } else { -1.0 };
                        coefficients.push(((x, a), (y, b), s * t));
                    }
                }
            }
        }
        BellScenario { parties: vec![vec![2, 2], vec![2, 2]], coefficients, classical: false }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        if self.parties.len() != 2 {
            return Err(ProblemError::Scenario(format!("need exactly two parties, got {}", self.parties.len())));
        }
        for (p, ms) in self.parties.iter().enumerate() {
            if ms.is_empty() {
                return Err(ProblemError::Scenario(format!("party {p} has no measurements")));
            }
            if let Some(x) = ms.iter().position(|&n| n < 2) {
                return Err(ProblemError::Scenario(format!("party {p} measurement {x} has fewer than 2 outcomes")));
            }
        }
        for &((x, a), (y, b), _) in &self.coefficients {
            let ok = x < self.parties[0].len()
                && a < self.parties[0][x]
                && y < self.parties[1].len()
                && b < self.parties[1][y];
            if !ok {
                return Err(ProblemError::Scenario(format!("coefficient index ({x},{a}),({y},{b}) out of range")));
            }
        }
        Ok(())
    }

    /// Letter of outcome `a` of measurement `x` of party `p`.
    pub fn letter(&self, p: usize, x: usize, a: usize) -> Letter {
        let before: usize = self.parties[..p].iter().flatten().sum();
        let within: usize = self.parties[p][..x].iter().sum();
        (before + within + a) as Letter
    }

    /// The classical value: the best deterministic strategy.
    pub fn classical_value(&self) -> f64 {
        let choices = |ms: &[usize]| -> Vec<Vec<usize>> {
            let mut out = vec![vec![]];
            for &n in ms {
                out = out.into_iter().flat_map(|v| (0..n).map(move |a| [v.clone(), vec![a]].concat())).collect();
            }
            out
        };
        let mut best = f64::NEG_INFINITY;
        for sa in choices(&self.parties[0]) {
            for sb in choices(&self.parties[1]) {
                let v: f64 = self
                    .coefficients
                    .iter()
                    .filter(|&&((x, a), (y, b), _)| sa[x] == a && sb[y] == b)
                    .map(|c| c.2)
                    .sum();
                best = best.max(v);
            }
        }
        best
    }
}

/// Maximizes `Σ c P(a b | x y)` over quantum (or, if `classical`, commuting)
/// projective measurements.
pub fn bell_problem(sc: &BellScenario) -> Result<NcProblem, ProblemError> {
    sc.validate()?;
    let prefix = ["A", "B"];
    let mut names = Vec::new();
    let mut groups = Vec::new();
    for (p, ms) in sc.parties.iter().enumerate() {
        for (x, &n) in ms.iter().enumerate() {
            for a in 0..n {
                names.push(format!("{}{}_{}", prefix[p], x, a));
                groups.push(p);
            }
        }
    }
    let alphabet = Alphabet::hermitian(&names);
    let alphabet = if sc.classical { alphabet.commutative() } else { alphabet.with_commuting_groups(groups)? };
    let mut rules = RewriteSystem::for_alphabet(&alphabet);
    let mut completeness = Vec::new();
    for (p, ms) in sc.parties.iter().enumerate() {
        for (x, &n) in ms.iter().enumerate() {
            let mut sum = Polynomial::constant(-1.0);
            for a in 0..n {
                let l = sc.letter(p, x, a);
                rules = rules.idempotent(l)?;
                for b in a + 1..n {
                    let m = sc.letter(p, x, b);
                    rules = if sc.classical {
                        rules.with_rule(Word::new(vec![l, m]), Polynomial::zero())?
                    } else {
                        rules.orthogonal(l, m)?
                    };
                }
                sum.add_term(Word::letter(l), 1.0);
            }
            completeness.push(sum);
        }
    }
    let mut objective = Polynomial::zero();
    for &((x, a), (y, b), c) in &sc.coefficients {
        objective.add_term(Word::new(vec![sc.letter(0, x, a), sc.letter(1, y, b)]), -c);
    }
    let mut problem = NcProblem::new(alphabet, rules, objective).named(if sc.classical { "bell-classical" } else { "bell" });
    problem.operator_equalities = completeness;
    problem.maximize = true;
    Ok(problem)
}

/// `N` electrons in `M` orbitals with Hamiltonian
/// `Σ h_ijkl a_i† a_j† a_k a_l + Σ t_ij a_i† a_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct FermionSpec {
    pub m: usize,
    pub n: usize,
    pub h: Vec<([usize; 4], f64)>,
    pub t: Vec<([usize; 2], f64)>,
}

impl FermionSpec {
    pub fn new(m: usize, n: usize) -> Self {
        FermionSpec { m, n, h: Vec::new(), t: Vec::new() }
    }

    /// Random coefficients, symmetrized so the Hamiltonian is hermitian.
    pub fn random<R: rand::Rng>(m: usize, n: usize, rng: &mut R) -> Self {
        let mut spec = FermionSpec::new(m, n);
        let mut h = std::collections::BTreeMap::new();
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let c: f64 = rng.gen_range(-1.0..1.0);
                        *h.entry([i, j, k, l]).or_insert(0.0) += 0.5 * c;
                        *h.entry([l, k, j, i]).or_insert(0.0) += 0.5 * c;
                    }
                }
            }
        }
        spec.h = h.into_iter().collect();
        let mut t = std::collections::BTreeMap::new();
        for i in 0..m {
            for j in 0..m {
                let c: f64 = rng.gen_range(-1.0..1.0);
                *t.entry([i, j]).or_insert(0.0) += 0.5 * c;
                *t.entry([j, i]).or_insert(0.0) += 0.5 * c;
            }
        }
        spec.t = t.into_iter().collect();
        spec
    }

    /// Smallest order at which the relaxation is exact: `max(N, 2)`.
    pub fn exact_order(&self) -> usize {
        self.n.max(2)
    }
}

/// Letters `a1..aM` and their adjoints `a1'..aM'`.
pub fn fermion_alphabet(m: usize) -> Alphabet {
    let names: Vec<String> = (1..=m).map(|i| format!("a{i}")).collect();
    Alphabet::with_adjoints(&names)
}

pub fn fermion_problem(spec: &FermionSpec) -> Result<NcProblem, ProblemError> {
    if spec.n > spec.m {
        return Err(ProblemError::Fermion(format!("N = {} exceeds M = {}", spec.n, spec.m)));
    }
    let alphabet = fermion_alphabet(spec.m);
    let m = spec.m;
    let modes: Vec<Letter> = (0..m as Letter).collect();
    let rules = RewriteSystem::new().fermionic(&modes, &alphabet)?;
    let ann = |i: usize| i as Letter;
    let cre = |i: usize| (m + i) as Letter;
    let mut objective = Polynomial::zero();
    for &([i, j, k, l], c) in &spec.h {
        if i.max(j).max(k).max(l) >= m {
            return Err(ProblemError::Fermion(format!("index ({i},{j},{k},{l}) out of range")));
        }
        objective.add_term(Word::new(vec![cre(i), cre(j), ann(k), ann(l)]), c);
    }
    for &([i, j], c) in &spec.t {
        if i.max(j) >= m {
            return Err(ProblemError::Fermion(format!("index ({i},{j}) out of range")));
        }
        objective.add_term(Word::new(vec![cre(i), ann(j)]), c);
    }
    let objective = rules.reduce_poly(&objective)?;
    if !is_hermitian(&objective, &alphabet, &rules)? {
        return Err(ProblemError::Fermion("Hamiltonian is not hermitian".into()));
    }
    let mut number = Polynomial::constant(-(spec.n as f64));
    for i in 0..m {
        number.add_term(Word::new(vec![cre(i), ann(i)]), 1.0);
    }
    Ok(NcProblem::new(alphabet, rules, objective).named("fermions").with_state_kernel(number))
}

/// Ground energy in the `N`-electron sector of the `2^M`-dimensional Fock
/// space (Jordan–Wigner representation).
pub fn fock_ground_energy(spec: &FermionSpec) -> f64 {
    let ops = jordan_wigner(spec.m);
    let dim = 1usize << spec.m;
    let mut h = DMatrix::zeros(dim, dim);
    for &([i, j, k, l], c) in &spec.h {
        h += ops[i].transpose() * ops[j].transpose() * &ops[k] * &ops[l] * c;
    }
    for &([i, j], c) in &spec.t {
        h += ops[i].transpose() * &ops[j] * c;
    }
    let sector: Vec<usize> = (0..dim).filter(|s| s.count_ones() as usize == spec.n).collect();
    let block = DMatrix::from_fn(sector.len(), sector.len(), |a, b| h[(sector[a], sector[b])]);
    let block = (&block + block.transpose()) * 0.5;
    block.symmetric_eigenvalues().min()
}

/// Annihilation matrices `a_i` on `(C²)^{⊗M}`; basis state `s` has mode `i`
/// occupied iff bit `i` of `s` is set.
pub fn jordan_wigner(m: usize) -> Vec<DMatrix<f64>> {
    let dim = 1usize << m;
    (0..m)
        .map(|i| {
            let mut a = DMatrix::zeros(dim, dim);
            for s in 0..dim {
                if s & (1 << i) != 0 {
                    let parity = (s & ((1 << i) - 1)).count_ones();
                    a[(s ^ (1 << i), s)] = if parity % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
            a
        })
        .collect()
}

/// The same data with all letters commuting.
pub fn commutative_problem(problem: &NcProblem) -> Result<NcProblem, ProblemError> {
    let alphabet = problem.alphabet.clone().commutative();
    let mut rules = RewriteSystem::for_alphabet(&alphabet);
    let base = RewriteSystem::for_alphabet(&alphabet);
    for rule in problem.rules.rules() {
        if crate::algebra::is_group_rule(rule, &problem.alphabet) {
            continue;
        }
        let pattern = base.reduce(&rule.pattern)?;
        match pattern.as_single_term() {
            Some((w, c)) if c == 1.0 && !rules.is_reducible(w) => rules.add_rule(w.clone(), rule.rhs.clone())?,
            _ => {}
        }
    }
    let reduce = |p: &Polynomial| rules.reduce_poly(p);
    let mut out = NcProblem::new(alphabet.clone(), rules.clone(), reduce(&problem.objective)?);
    out.name = format!("{}-commutative", problem.name);
    out.inequalities = problem.inequalities.iter().map(reduce).collect::<Result<_, _>>()?;
    out.operator_equalities = problem.operator_equalities.iter().map(reduce).collect::<Result<_, _>>()?;
    out.state_kernel = problem.state_kernel.iter().map(reduce).collect::<Result<_, _>>()?;
    out.expectation_ineqs = problem.expectation_ineqs.iter().map(reduce).collect::<Result<_, _>>()?;
    out.ball = problem.ball;
    out.maximize = problem.maximize;
    Ok(out)
}

/// Minimizes `p` over projectors `x_1..x_n` (`x_i² = x_i`).
pub fn binary_quadratic_problem(n: usize, p: Polynomial) -> Result<NcProblem, ProblemError> {
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let alphabet = Alphabet::hermitian(&names);
    let mut rules = RewriteSystem::new();
    for l in 0..n as Letter {
        rules = rules.idempotent(l)?;
    }
    let objective = rules.reduce_poly(&p)?;
    Ok(NcProblem::new(alphabet, rules, objective).named("binary-quadratic"))
}

/// `Σ_{i≤j} Q_ij x_i x_j` symmetrized, plus `Σ c_i x_i`.
pub fn quadratic_form(q: &DMatrix<f64>, c: &[f64]) -> Polynomial {
    let n = q.nrows();
    let mut p = Polynomial::zero();
    for i in 0..n {
        for j in 0..n {
            p.add_term(Word::new(vec![i as Letter, j as Letter]), 0.5 * (q[(i, j)] + q[(j, i)]));
        }
        p.add_term(Word::letter(i as Letter), c[i]);
    }
    p
}

/// Minimum of `xᵀ Q x + cᵀ x` over `{0,1}^n`, with a minimizer.
pub fn brute_force_binary(q: &DMatrix<f64>, c: &[f64]) -> (f64, Vec<f64>) {
    let n = q.nrows();
    let mut best = (f64::INFINITY, vec![]);
    for s in 0..1usize << n {
        let x = DVector::from_fn(n, |i, _| ((s >> i) & 1) as f64);
        let v = x.dot(&(q * &x)) + x.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        if v < best.0 {
            best = (v, x.iter().copied().collect());
        }
    }
    best
}

/// Known solution data for a corpus problem.
#[derive(Clone, Debug)]
pub struct Expected {
    /// `(k, p^k)`.
    pub optima: Vec<(usize, f64)>,
    /// `(k, M_k)` over the canonical basis in length-lexicographic order.
    pub moment_matrices: Vec<(usize, DMatrix<f64>)>,
    /// `(k, nonzero eigenvalues of M_k)`.
    pub eigenvalues: Vec<(usize, Vec<f64>)>,
    /// `(k, X matrices per base letter, φ)` at a flat order.
    pub optimizer: Option<(usize, Vec<DMatrix<f64>>, DVector<f64>)>,
    /// Scalar minimizer for commutative problems.
    pub point: Option<Vec<f64>>,
    pub certificate: Option<ExpectedCertificate>,
}

/// `p − λ = Σ b*b + Σ w_i q_i + Σ (f r + r* f*) + Σ g s` at order 1.
#[derive(Clone, Debug)]
pub struct ExpectedCertificate {
    pub order: usize,
    pub lambda: f64,
    pub squares: Vec<Polynomial>,
    pub localizing_weights: Vec<f64>,
    pub kernel_multipliers: Vec<Polynomial>,
    pub expectation_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: &'static str,
    pub problem: NcProblem,
    pub expected: Expected,
}

fn mat(n: usize, rows: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, rows)
}

fn poly(terms: &[(&[Letter], f64)]) -> Polynomial {
    Polynomial::from_terms(terms.iter().map(|(w, c)| (Word::new(w.to_vec()), *c)))
}

/// `min ⟨φ, (x1 x2 + x2 x1) φ⟩` with `x1² = x1` and `−x2² + x2 + 1/2 ⪰ 0`.
pub fn projector_pair_problem() -> NcProblem {
    let alphabet = Alphabet::hermitian(&["x1", "x2"]);
    let rules = RewriteSystem::new().idempotent(0).expect("valid rule");
    let objective = poly(&[(&[0, 1], 1.0), (&[1, 0], 1.0)]);
    NcProblem::new(alphabet, rules, objective)
        .named("projector-pair")
        .with_inequality(poly(&[(&[1, 1], -1.0), (&[1], 1.0), (&[], 0.5)]))
}

/// The projector pair with `(3x1 + 2x2 − 1) φ = 0` and `⟨x1⟩ ≤ 1/3`.
pub fn constrained_state_problem() -> NcProblem {
    let mut p = projector_pair_problem()
        .with_state_kernel(poly(&[(&[0], 3.0), (&[1], 2.0), (&[], -1.0)]))
        .with_expectation(poly(&[(&[0], -1.0), (&[], 1.0 / 3.0)]));
    p.name = "constrained-state".into();
    p
}

/// The three worked instances: the projector pair, its commutative variant,
/// and the variant with state constraints.
pub fn builtin_corpus() -> Vec<CorpusEntry> {
    let s3 = 3f64.sqrt();
    let s37 = 37f64.sqrt();
    let s61 = 61f64.sqrt();
    let s2 = 2f64.sqrt();
    let nc = CorpusEntry {
        name: "projector-pair",
        problem: projector_pair_problem(),
        expected: Expected {
            optima: vec![(1, -0.75), (2, -0.75)],
            moment_matrices: vec![
                (1, mat(3, &[1.0, 0.75, -0.25, 0.75, 0.75, -0.375, -0.25, -0.375, 0.25])),
                (
                    2,
                    mat(
                        6,
                        &[
                            1.0, 0.75, -0.25, -0.375, -0.375, 0.25, //
                            0.75, 0.75, -0.375, -0.375, -0.1875, 0.0, //
                            -0.25, -0.375, 0.25, 0.1875, 0.0, 0.125, //
                            -0.375, -0.375, 0.1875, 0.1875, 0.09375, 0.0, //
                            -0.375, -0.1875, 0.0, 0.09375, 0.1875, -0.1875, //
                            0.25, 0.0, 0.125, 0.0, -0.1875, 0.25,
                        ],
                    ),
                ),
            ],
            eigenvalues: vec![
                (1, vec![1.0 - s37 / 8.0, 1.0 + s37 / 8.0]),
                (2, vec![3.0 / 32.0 * (14.0 - s61), 3.0 / 32.0 * (14.0 + s61)]),
            ],
            optimizer: Some((
                2,
                vec![mat(2, &[0.75, s3 / 4.0, s3 / 4.0, 0.25]), mat(2, &[-0.25, -s3 / 4.0, -s3 / 4.0, 1.25])],
                DVector::from_vec(vec![1.0, 0.0]),
            )),
            point: None,
            certificate: Some(ExpectedCertificate {
                order: 1,
                lambda: -0.75,
                squares: vec![poly(&[(&[], -0.5), (&[0], 1.0), (&[1], 1.0)])],
                localizing_weights: vec![1.0],
                kernel_multipliers: vec![],
                expectation_weights: vec![],
            }),
        },
    };
    let commutative = CorpusEntry {
        name: "projector-pair-commutative",
        problem: commutative_problem(&projector_pair_problem()).expect("valid problem"),
        expected: Expected {
            optima: vec![(1, -0.75), (2, 1.0 - s3)],
            moment_matrices: vec![(1, mat(3, &[1.0, 0.75, -0.25, 0.75, 0.75, -0.375, -0.25, -0.375, 0.25]))],
            eigenvalues: vec![],
            optimizer: None,
            point: Some(vec![1.0, (1.0 - s3) / 2.0]),
            certificate: None,
        },
    };
    let third = 1.0 / 3.0;
    let sixth = 1.0 / 6.0;
    let constrained = CorpusEntry {
        name: "constrained-state",
        problem: constrained_state_problem(),
        expected: Expected {
            optima: vec![(1, -2.0 / 3.0), (2, -2.0 / 3.0)],
            moment_matrices: vec![
                (1, mat(3, &[1.0, third, 0.0, third, third, -third, 0.0, -third, 0.5])),
                (
                    2,
                    mat(
                        6,
                        &[
                            1.0, third, 0.0, -third, -third, 0.5, //
                            third, third, -third, -third, 0.0, -sixth, //
                            0.0, -third, 0.5, third, -sixth, 0.5, //
                            -third, -third, third, third, 0.0, sixth, //
                            -third, 0.0, -sixth, 0.0, sixth, -third, //
                            0.5, -sixth, 0.5, sixth, -third, 0.75,
                        ],
                    ),
                ),
            ],
            eigenvalues: vec![(1, vec![2.0 / 3.0, 7.0 / 6.0]), (2, vec![17.0 / 12.0, 5.0 / 3.0])],
            optimizer: Some((
                2,
                vec![mat(2, &[third, s2 / 3.0, s2 / 3.0, 2.0 / 3.0]), mat(2, &[0.0, -s2 / 2.0, -s2 / 2.0, 1.0])],
                DVector::from_vec(vec![1.0, 0.0]),
            )),
            point: None,
            certificate: Some(ExpectedCertificate {
                order: 1,
                lambda: -2.0 / 3.0,
                squares: vec![poly(&[(&[], -third), (&[0], 1.0), (&[1], 2.0 / 3.0)])],
                localizing_weights: vec![4.0 / 9.0],
                kernel_multipliers: vec![poly(&[(&[0], sixth)])],
                expectation_weights: vec![1.0],
            }),
        },
    };
    vec![nc, commutative, constrained]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Reducer;

    #[test]
    fn bell_letters_after_elimination() {
        let sc = BellScenario { parties: vec![vec![2, 3], vec![4]], coefficients: vec![], classical: false };
        let p = bell_problem(&sc).unwrap().normalized().unwrap();
        let live = p.alphabet.letters().filter(|&l| !p.rules.is_reducible(&Word::letter(l))).count();
        assert_eq!(live, 1 + 2 + 3);
        let single = BellScenario { parties: vec![vec![2]], coefficients: vec![], classical: false };
        assert!(bell_problem(&single).is_err());
    }

    #[test]
    fn classical_chsh_is_two() {
        assert_eq!(BellScenario::chsh().classical_value(), 2.0);
    }

    #[test]
    fn anticommutator() {
        let spec = FermionSpec::new(2, 1);
        let p = fermion_problem(&spec).unwrap();
        let mut red = Reducer::new(&p.rules);
        let r = red.reduce(&Word::new(vec![0, 2])).unwrap();
        let want = Polynomial::from_terms([(Word::identity(), 1.0), (Word::new(vec![2, 0]), -1.0)]);
        assert!(r.approx_eq(&want, 0.0));
        assert!(fermion_problem(&FermionSpec::new(1, 2)).is_err());
    }

    #[test]
    fn jordan_wigner_anticommutes() {
        let a = jordan_wigner(3);
        for i in 0..3 {
            for j in 0..3 {
                let ac = &a[i] * a[j].transpose() + a[j].transpose() * &a[i];
                let want = if i == j { DMatrix::identity(8, 8) } else { DMatrix::zeros(8, 8) };
                assert!((ac - want).amax() < 1e-14);
                assert!((&a[i] * &a[j] + &a[j] * &a[i]).amax() < 1e-14);
            }
        }
    }

    #[test]
    fn commutative_basis_size() {
        let free = NcProblem::new(Alphabet::hermitian(&["x1", "x2"]), RewriteSystem::new(), Polynomial::zero());
        let p = commutative_problem(&free).unwrap();
        assert_eq!(crate::algebra::monomial_basis(2, &p.alphabet, &p.rules).len(), 6);
    }

    #[test]
    fn corpus_shape() {
        let c = builtin_corpus();
        assert_eq!(c.len(), 3);
        for e in &c {
            for (_, m) in &e.expected.moment_matrices {
                assert!((m - m.transpose()).amax() < 1e-15, "{}", e.name);
            }
        }
    }
}
