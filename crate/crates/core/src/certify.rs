//! Post-solution analysis: numeric rank and the flatness test, extraction of
//! finite-dimensional optimizers, and sum-of-squares certificates read off
//! the dual blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::algebra::{AlgebraError, Alphabet, Polynomial, Reducer, Word};
use crate::relaxation::{half_degree, NcProblem, Relaxation, RelaxationError, RowOrigin};
use crate::sdp::{center_dual, SdpSolution};

pub const DEFAULT_RANK_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Relaxation(#[from] RelaxationError),
    #[error("order {k} is below the constraint half-degree {d}")]
    OrderBelowDegree { k: usize, d: usize },
    #[error("all localizing constraints have degree 0; the rank test needs d ≥ 1")]
    DegreeZero,
    #[error("moment matrix is not flat (rank {rank_k} at order k, {rank_k_minus_d} at order k − d)")]
    NotFlat { rank_k: usize, rank_k_minus_d: usize },
    #[error("kernel constraint of degree {degree} violates deg − d ≤ k at order {k}")]
    DetectionCondition { degree: usize, k: usize },
    #[error("Gram vectors are ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("operators do not commute (max commutator norm {0:.3e})")]
    NonCommuting(f64),
    #[error("dual block {block} has eigenvalue {value:.3e} below tolerance")]
    NegativeDual { block: usize, value: f64 },
    #[error("{what} has degree {degree}, bound is {bound}")]
    DegreeBound { what: String, degree: usize, bound: usize },
    #[error("solution is not optimal; no certificate available")]
    NotSolved,
}

/// Number of eigenvalues above `rank_tol · max(1, λ_max)`.
pub fn numeric_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues;
    let thr = rank_tol * eig.max().max(1.0);
    eig.iter().filter(|&&l| l > thr).count()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlatnessReport {
    pub k: usize,
    /// `max_i ⌈deg q_i / 2⌉` over the localizing constraints.
    pub d: usize,
    pub rank_k: usize,
    pub rank_k_minus_d: usize,
    pub rank_tol: f64,
    pub flat: bool,
    /// `deg r_i − d ≤ k` for every kernel constraint.
    pub detection_condition_ok: bool,
}

/// Largest localizing half-degree of the relaxation's constraints.
pub fn constraint_half_degree(rel: &Relaxation) -> usize {
    rel.localizers.iter().map(half_degree).max().unwrap_or(0)
}

/// Compares `rank M_k(y)` with `rank M_{k−d}(y)`. When every constraint has
/// degree 0 the comparison is made at `k − 1` and the report keeps `d = 0`;
/// extraction refuses such reports.
pub fn flatness_check(rel: &Relaxation, y: &[f64], rank_tol: f64) -> Result<FlatnessReport, CertifyError> {
    let k = rel.order;
    let d = constraint_half_degree(rel);
    if d > k {
        return Err(CertifyError::OrderBelowDegree { k, d });
    }
    let step = d.max(1);
    let rank_k = numeric_rank(&rel.moment_matrix(y, k), rank_tol);
    let rank_low = numeric_rank(&rel.moment_matrix(y, k - step), rank_tol);
    let detection_condition_ok = rel.problem.state_kernel.iter().all(|r| r.degree() <= k + d);
    Ok(FlatnessReport {
        k,
        d,
        rank_k,
        rank_k_minus_d: rank_low,
        rank_tol,
        flat: rank_k == rank_low,
        detection_condition_ok,
    })
}

/// A finite-dimensional realization `(X, φ)`.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub dim: usize,
    /// One matrix per letter of the alphabet; adjoint letters hold transposes
    /// and eliminated letters their substituted values.
    pub x: Vec<DMatrix<f64>>,
    pub phi: DVector<f64>,
    /// Largest `|⟨φ, w(X) φ⟩ − y_w|` over the moment basis.
    pub moment_error: f64,
    /// Largest `‖X_l − X_lᵀ‖` before symmetrizing self-adjoint letters.
    pub symmetry_error: f64,
    /// The relaxation value `L_y(p)` the realization should reproduce.
    pub objective_value: f64,
}

impl Optimizer {
    /// `w(X) v`.
    pub fn apply_word(&self, w: &Word, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for &l in w.letters().iter().rev() {
            out = &self.x[l as usize] * out;
        }
        out
    }

    pub fn word_matrix(&self, w: &Word) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim);
        for &l in w.letters() {
            m *= &self.x[l as usize];
        }
        m
    }

    pub fn eval(&self, p: &Polynomial) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (w, c) in p.terms() {
            m += self.word_matrix(w) * c;
        }
        m
    }

    /// `⟨φ, p(X) φ⟩`.
    pub fn expectation(&self, p: &Polynomial) -> f64 {
        p.terms().map(|(w, c)| c * self.phi.dot(&self.apply_word(w, &self.phi))).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExtractOptions {
    pub rank_tol: f64,
    /// Applies a random orthogonal change of basis to the Gram vectors.
    pub seed: Option<u64>,
    /// Largest accepted condition number of the spanning Gram vectors.
    pub max_condition: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { rank_tol: DEFAULT_RANK_TOL, seed: None, max_condition: 1e8 }
    }
}

fn random_orthogonal(r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(r, r, |_, _| rng.gen::<f64>() - 0.5);
    a.qr().q()
}

/// Gram columns `ḡ_w` (rank × words) of the top `rank` eigenpairs of `m`.
fn gram_vectors(m: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = m.nrows();
    DMatrix::from_fn(rank, n, |i, w| {
        let j = idx[i];
        eig.eigenvalues[j].max(0.0).sqrt() * eig.eigenvectors[(w, j)]
    })
}

/// Builds `(X, φ)` from a flat moment matrix: `φ = 1̄` and `X_l` solves
/// `X_l w̄ = (l w)‾` in least squares over the words of length ≤ k − d.
pub fn extract_optimizer(rel: &Relaxation, y: &[f64], opts: &ExtractOptions) -> Result<Optimizer, CertifyError> {
    let report = flatness_check(rel, y, opts.rank_tol)?;
    if report.d == 0 {
        return Err(CertifyError::DegreeZero);
    }
    if !report.flat {
        return Err(CertifyError::NotFlat { rank_k: report.rank_k, rank_k_minus_d: report.rank_k_minus_d });
    }
    if !report.detection_condition_ok {
        let degree = rel.problem.state_kernel.iter().map(Polynomial::degree).max().unwrap_or(0);
        return Err(CertifyError::DetectionCondition { degree, k: rel.order });
    }
    let k = rel.order;
    let block = rel.moment_block();
    let words = &block.row_basis;
    let m = rel.moment_matrix(y, k);
    let r = report.rank_k;
    let mut g = gram_vectors(&m, r);
    if let Some(seed) = opts.seed {
        g = random_orthogonal(r, seed) * g;
    }
    let column = |g: &DMatrix<f64>, p: &Polynomial| -> Option<DVector<f64>> {
        let mut v = DVector::zeros(g.nrows());
        for (w, c) in p.terms() {
            let i = words.iter().position(|u| u == w)?;
            v += g.column(i) * c;
        }
        Some(v)
    };
    let span: Vec<usize> = (0..words.len()).filter(|&i| words[i].len() + report.d <= k).collect();
    let gs = DMatrix::from_fn(r, span.len(), |a, b| g[(a, span[b])]);
    let sv = gs.clone().svd(false, false).singular_values;
    let cond = if sv.len() < r || sv.min() <= 0.0 { f64::INFINITY } else { sv.max() / sv.min() };
    if cond > opts.max_condition {
        return Err(CertifyError::IllConditioned(cond));
    }
    let gs_pinv = gs.clone().pseudo_inverse(1e-12 * sv.max()).map_err(|_| CertifyError::IllConditioned(cond))?;

    let alphabet = &rel.problem.alphabet;
    let rs = &rel.problem.rules;
    let mut reducer = Reducer::new(rs);
    let nl = alphabet.len();
    let mut x: Vec<Option<DMatrix<f64>>> = vec![None; nl];
    let mut symmetry_error: f64 = 0.0;
    for l in alphabet.letters() {
        let lw = Word::letter(l);
        if rs.is_reducible(&lw) {
            continue;
        }
        let adj = alphabet.adjoint_of(l)?;
        if adj < l {
            continue;
        }
        let mut target = DMatrix::zeros(r, span.len());
        for (b, &i) in span.iter().enumerate() {
            let p = reducer.reduce(&lw.concat(&words[i]))?;
            let col = column(&g, &p).ok_or(CertifyError::Relaxation(RelaxationError::WordOutsideBasis(format!(
                "{}",
                p.fmt_with(alphabet)
            ))))?;
            target.set_column(b, &col);
        }
        let mut xl = target * &gs_pinv;
        if adj == l {
            symmetry_error = symmetry_error.max((&xl - xl.transpose()).amax());
            xl = (&xl + xl.transpose()) * 0.5;
        } else {
            x[adj as usize] = Some(xl.transpose());
        }
        x[l as usize] = Some(xl);
    }
    // eliminated letters: evaluate their substitution
    for l in alphabet.letters() {
        if x[l as usize].is_none() {
            let p = reducer.reduce(&Word::letter(l))?;
            let mut m = DMatrix::zeros(r, r);
            for (w, c) in p.terms() {
                let mut wm = DMatrix::identity(r, r);
                for &u in w.letters() {
                    wm *= x[u as usize].as_ref().expect("substitutions use surviving letters");
                }
                m += wm * c;
            }
            x[l as usize] = Some(m);
        }
    }
    let phi = g.column(words.iter().position(Word::is_identity).expect("identity word")).into_owned();
    let mut opt = Optimizer {
        dim: r,
        x: x.into_iter().map(|m| m.expect("every letter assigned")).collect(),
        phi,
        moment_error: 0.0,
        symmetry_error,
        objective_value: crate::relaxation::eval_moment_functional(y, &rel.problem.objective, &rel.map)?,
    };
    opt.moment_error = moment_error(&opt, rel, y);
    Ok(opt)
}

/// Largest `|⟨φ, w(X) φ⟩ − y_w|` over the canonical words of length ≤ 2k.
pub fn moment_error(opt: &Optimizer, rel: &Relaxation, y: &[f64]) -> f64 {
    rel.map
        .basis()
        .iter()
        .filter_map(|w| rel.map.value(y, w).map(|v| (w, v)))
        .map(|(w, v)| (opt.phi.dot(&opt.apply_word(w, &opt.phi)) - v).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerCheck {
    /// Smallest eigenvalue of each `q_i(X)` (declared inequalities and ball).
    pub inequality_min_eig: Vec<f64>,
    /// `‖e_i(X)‖_max` for remaining operator equalities.
    pub equality_norms: Vec<f64>,
    /// `‖r_i(X) φ‖`.
    pub kernel_norms: Vec<f64>,
    /// `⟨φ, s_i(X) φ⟩`.
    pub expectations: Vec<f64>,
    /// `‖pattern(X) − rhs(X)‖_max` over the rewrite rules.
    pub rule_residual: f64,
    pub phi_norm_error: f64,
    /// `|⟨φ, p(X) φ⟩ − objective_value|`.
    pub objective_error: f64,
    pub passed: bool,
}

/// Checks a realization against the problem's constraints; passes iff every
/// violation is below `tol`.
pub fn verify_optimizer(opt: &Optimizer, problem: &NcProblem, tol: f64) -> OptimizerCheck {
    let mut q_list = problem.inequalities.clone();
    if let Some(c) = problem.ball {
        q_list.push(crate::relaxation::ball_polynomial(&problem.alphabet, c));
    }
    let inequality_min_eig: Vec<f64> = q_list
        .iter()
        .map(|q| {
            let m = opt.eval(q);
            SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.min()
        })
        .collect();
    let equality_norms = problem.operator_equalities.iter().map(|e| opt.eval(e).amax()).collect::<Vec<_>>();
    let kernel_norms: Vec<f64> = problem.state_kernel.iter().map(|r| (opt.eval(r) * &opt.phi).norm()).collect();
    let expectations: Vec<f64> = problem.expectation_ineqs.iter().map(|s| opt.expectation(s)).collect();
    let rule_residual = problem
        .rules
        .rules()
        .iter()
        .map(|rule| (opt.word_matrix(&rule.pattern) - opt.eval(&rule.rhs)).amax())
        .fold(0.0, f64::max);
    let phi_norm_error = (opt.phi.norm() - 1.0).abs();
    let objective_error = (opt.expectation(&problem.objective) - opt.objective_value).abs();
    let passed = inequality_min_eig.iter().all(|&e| e >= -tol)
        && equality_norms.iter().all(|&e| e <= tol)
        && kernel_norms.iter().all(|&e| e <= tol)
        && expectations.iter().all(|&e| e >= -tol)
        && rule_residual <= tol
        && phi_norm_error <= tol
        && objective_error <= tol;
    OptimizerCheck {
        inequality_min_eig,
        equality_norms,
        kernel_norms,
        expectations,
        rule_residual,
        phi_norm_error,
        objective_error,
        passed,
    }
}

/// One joint eigenvector of commuting self-adjoint operators.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPoint {
    /// Coordinates on the base letters, in alphabet order.
    pub coords: Vec<f64>,
    /// `|⟨v, φ⟩|²`.
    pub weight: f64,
}

/// Simultaneously diagonalizes commuting `X_i` through a random linear
/// combination and returns the joint eigenvalues.
pub fn commuting_eigen_extract(opt: &Optimizer, alphabet: &Alphabet, seed: u64, tol: f64) -> Result<Vec<ScalarPoint>, CertifyError> {
    let base = alphabet.base_letters();
    let mut worst: f64 = 0.0;
    for (i, &a) in base.iter().enumerate() {
        for &b in &base[i + 1..] {
            let (xa, xb) = (&opt.x[a as usize], &opt.x[b as usize]);
            worst = worst.max((xa * xb - xb * xa).amax());
        }
    }
    if worst > tol {
        return Err(CertifyError::NonCommuting(worst));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comb = DMatrix::zeros(opt.dim, opt.dim);
    for &l in &base {
        comb += &opt.x[l as usize] * (rng.gen::<f64>() + 0.5);
    }
    let eig = SymmetricEigen::new((&comb + comb.transpose()) * 0.5);
    let mut out = Vec::with_capacity(opt.dim);
    for j in 0..opt.dim {
        let v = eig.eigenvectors.column(j);
        let coords = base.iter().map(|&l| v.dot(&(&opt.x[l as usize] * v))).collect();
        out.push(ScalarPoint { coords, weight: v.dot(&opt.phi).powi(2) });
    }
    Ok(out)
}

/// Projector realization of an order-1 moment matrix for problems whose
/// letters are all projectors: `φ = 1̄`, `X_i` the projector onto `x̄_i`.
/// Reproduces every moment of degree ≤ 2 whenever `y_{x_i x_i} = y_{x_i}`.
pub fn projector_realization(rel: &Relaxation, y: &[f64], rank_tol: f64) -> Result<Optimizer, CertifyError> {
    let m = rel.moment_matrix(y, 1);
    let words = &rel.moment_block().row_basis;
    let r = numeric_rank(&m, rank_tol).max(1);
    let g = gram_vectors(&m, r);
    let alphabet = &rel.problem.alphabet;
    let mut x = Vec::with_capacity(alphabet.len());
    for l in alphabet.letters() {
        let i = words
            .iter()
            .position(|w| *w == Word::letter(l))
            .ok_or_else(|| RelaxationError::WordOutsideBasis(alphabet.name(l).to_string()))?;
        let v = g.column(i).into_owned();
        let n2 = v.norm_squared();
        let p = if n2 > 1e-14 { &v * v.transpose() / n2 } else { DMatrix::zeros(r, r) };
        x.push(p);
    }
    let phi = g.column(0).into_owned();
    let mut opt = Optimizer {
        dim: r,
        x,
        phi,
        moment_error: 0.0,
        symmetry_error: 0.0,
        objective_value: crate::relaxation::eval_moment_functional(y, &rel.problem.objective, &rel.map)?,
    };
    opt.moment_error = rel
        .map
        .basis()
        .iter()
        .filter(|w| w.len() <= 2)
        .filter_map(|w| rel.map.value(y, w).map(|v| (w, v)))
        .map(|(w, v)| (opt.phi.dot(&opt.apply_word(w, &opt.phi)) - v).abs())
        .fold(0.0, f64::max);
    Ok(opt)
}

/// `p − λ = Σ b*b + Σ_i Σ_j c_ij* q_i c_ij + Σ_i (f_i r_i + r_i* f_i*) + Σ_i g_i s_i`.
#[derive(Clone, Debug)]
pub struct SosCertificate {
    pub order: usize,
    pub lambda: f64,
    pub squares: Vec<Polynomial>,
    /// `(q_i, [c_ij])`, one entry per localizing constraint.
    pub localizing: Vec<(Polynomial, Vec<Polynomial>)>,
    /// `(r_i, f_i)`.
    pub kernel: Vec<(Polynomial, Polynomial)>,
    /// `(s_i, g_i)`.
    pub expectation: Vec<(Polynomial, f64)>,
    pub residual_norm: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SosOptions {
    /// Dual eigenvalues below `−neg_tol · max(1, λ_max)` are an error.
    pub neg_tol: f64,
    /// Eigenvalues below `drop_tol · max(1, λ_max)` contribute no square.
    pub drop_tol: f64,
    /// Picks a canonical point of the optimal dual face: each `f_i` has no
    /// component on the leading word of `r_i*` (moving `r* r` multiples into
    /// the squares), and the remaining freedom is resolved by the analytic
    /// center of the face.
    pub canonical: bool,
}

impl Default for SosOptions {
    fn default() -> Self {
        SosOptions { neg_tol: 1e-6, drop_tol: 1e-12, canonical: true }
    }
}

/// Squares `√μ_j Σ_a a_j[a] w_a` from the eigendecomposition of a dual block.
fn squares_of(z: &DMatrix<f64>, words: &[Word], block: usize, opts: &SosOptions) -> Result<Vec<Polynomial>, CertifyError> {
    let eig = SymmetricEigen::new((z + z.transpose()) * 0.5);
    let scale = eig.eigenvalues.max().max(1.0);
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for j in idx {
        let mu = eig.eigenvalues[j];
        if mu < -opts.neg_tol * scale {
            return Err(CertifyError::NegativeDual { block, value: mu });
        }
        if mu <= opts.drop_tol * scale {
            continue;
        }
        let s = mu.sqrt();
        let v = eig.eigenvectors.column(j);
        // fix the sign so the largest coefficient is positive
        let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, &c)| if c.abs() > acc.1 { (i, c.abs()) } else { acc });
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        out.push(Polynomial::from_terms(words.iter().cloned().zip(v.iter().map(|&c| sign * s * c))));
    }
    Ok(out)
}

/// Reads the certificate off the dual solution of an assembled relaxation.
pub fn extract_sos(rel: &Relaxation, sol: &SdpSolution, opts: &SosOptions) -> Result<SosCertificate, CertifyError> {
    if !sol.status.is_solved() {
        return Err(CertifyError::NotSolved);
    }
    let problem = &rel.problem;
    let mut reducer = Reducer::new(&problem.rules);
    let mut centered;
    let sol = if opts.canonical {
        let mut pinned = Vec::new();
        for (i, r) in problem.state_kernel.iter().enumerate() {
            let r_adj = reducer.adjoint(r, &problem.alphabet)?;
            if let Some((lead, _)) = r_adj.terms().last() {
                let row = rel.eq_origins.iter().position(|o| {
                    matches!(o, RowOrigin::StateKernel { index, word } if *index == i && word == lead)
                });
                pinned.extend(row);
            }
        }
        // constraint multipliers first, then every cone
        let mut weights = vec![1.0; rel.sdp.blocks.len() + rel.sdp.linear_ineqs.len()];
        weights[0] = 0.0;
        centered = sol.clone();
        if center_dual(&rel.sdp, &mut centered, &pinned, &weights) || center_dual(&rel.sdp, &mut centered, &pinned, &[]) {
            &centered
        } else {
            sol
        }
    } else {
        sol
    };
    let mut v = sol.dual_blocks[0].clone();
    let moment_words = rel.blocks[0].row_basis.clone();

    // kernel multipliers: L(w r_i) rows contribute Σ μ w r_i
    let mut f: Vec<Polynomial> = vec![Polynomial::zero(); problem.state_kernel.len()];
    for (origin, &mu) in rel.eq_origins.iter().zip(&sol.dual_eq_multipliers) {
        if let RowOrigin::StateKernel { index, word } = origin {
            f[*index].add_term(word.clone(), 0.5 * mu);
        }
    }
    if opts.canonical {
        for (i, r) in problem.state_kernel.iter().enumerate() {
            let r_adj = reducer.adjoint(r, &problem.alphabet)?;
            let Some((lead, lc)) = r_adj.terms().last().map(|(w, c)| (w.clone(), c)) else { continue };
            let t = f[i].coeff(&lead) / lc;
            if t == 0.0 || r.degree() > rel.order {
                continue;
            }
            // f → f − t r*, squares gain 2t · r* r (as r⃗ r⃗ᵀ over the moment basis)
            let mut rv = DVector::zeros(moment_words.len());
            let mut fits = true;
            for (w, c) in r.terms() {
                match moment_words.iter().position(|u| u == w) {
                    Some(a) => rv[a] = c,
                    None => fits = false,
                }
            }
            if !fits {
                continue;
            }
            let candidate = &v + &rv * rv.transpose() * (2.0 * t);
            let scale = candidate.amax().max(1.0);
            if SymmetricEigen::new(candidate.clone()).eigenvalues.min() < -opts.neg_tol * scale {
                continue;
            }
            v = candidate;
            f[i] = f[i].clone() - r_adj.scale(t);
        }
    }

    let squares = squares_of(&v, &moment_words, 0, opts)?;
    let mut localizing = Vec::new();
    for (i, q) in rel.localizers.iter().enumerate() {
        let block = &rel.blocks[i + 1];
        localizing.push((q.clone(), squares_of(&sol.dual_blocks[i + 1], &block.row_basis, i + 1, opts)?));
    }
    let kernel = problem.state_kernel.iter().cloned().zip(f).collect();
    let expectation = problem
        .expectation_ineqs
        .iter()
        .cloned()
        .zip(sol.dual_ineq_multipliers.iter().map(|&g| g.max(0.0)))
        .collect();
    let mut cert = SosCertificate {
        order: rel.order,
        lambda: sol.dual_obj,
        squares,
        localizing,
        kernel,
        expectation,
        residual_norm: f64::NAN,
    };
    cert.residual_norm = sos_residual(&cert, problem)?;
    Ok(cert)
}

/// `Σ b*b + Σ c* q c + Σ (f r + r* f*) + Σ g s + λ`, reduced.
pub fn expand_certificate(cert: &SosCertificate, problem: &NcProblem) -> Result<Polynomial, CertifyError> {
    let alphabet = &problem.alphabet;
    let mut red = Reducer::new(&problem.rules);
    let mut total = Polynomial::constant(cert.lambda);
    for b in &cert.squares {
        let bs = red.adjoint(b, alphabet)?;
        total = total + red.mul(&bs, b)?;
    }
    for (q, cs) in &cert.localizing {
        for c in cs {
            let cstar = red.adjoint(c, alphabet)?;
            let qc = red.mul(q, c)?;
            total = total + red.mul(&cstar, &qc)?;
        }
    }
    for (r, f) in &cert.kernel {
        let fr = red.mul(f, r)?;
        total = total + red.adjoint(&fr, alphabet)? + fr;
    }
    for (s, g) in &cert.expectation {
        total.add_scaled(s, *g);
    }
    Ok(total)
}

fn sos_residual(cert: &SosCertificate, problem: &NcProblem) -> Result<f64, CertifyError> {
    let rhs = expand_certificate(cert, problem)?;
    let p = problem.rules.reduce_poly(&problem.objective)?;
    Ok((p - rhs).max_abs_coeff())
}

/// Checks the degree bounds and returns the largest coefficient of
/// `p − λ − (certificate terms)`.
pub fn verify_sos(cert: &SosCertificate, problem: &NcProblem) -> Result<f64, CertifyError> {
    let k = cert.order;
    for b in &cert.squares {
        if b.degree() > k {
            return Err(CertifyError::DegreeBound { what: "square".into(), degree: b.degree(), bound: k });
        }
    }
    for (q, cs) in &cert.localizing {
        let bound = k.saturating_sub(half_degree(q));
        for c in cs {
            if c.degree() > bound {
                return Err(CertifyError::DegreeBound { what: "localizing multiplier".into(), degree: c.degree(), bound });
            }
        }
    }
    for (r, f) in &cert.kernel {
        let bound = (2 * k).saturating_sub(r.degree());
        if f.degree() > bound {
            return Err(CertifyError::DegreeBound { what: "kernel multiplier".into(), degree: f.degree(), bound });
        }
    }
    if cert.expectation.iter().any(|(_, g)| *g < 0.0) {
        return Err(CertifyError::DegreeBound { what: "negative expectation weight".into(), degree: 0, bound: 0 });
    }
    sos_residual(cert, problem)
}

/// `⟨φ, w(X) φ⟩` for every canonical word in `words`, from matrices indexed
/// by letter. Used by tests that build representations directly.
pub fn moments_of(x: &[DMatrix<f64>], phi: &DVector<f64>, words: &[Word]) -> Vec<f64> {
    words
        .iter()
        .map(|w| {
            let mut v = phi.clone();
            for &l in w.letters().iter().rev() {
                v = &x[l as usize] * v;
            }
            phi.dot(&v)
        })
        .collect()
}

/// Adjoint letters mapped to transposes: completes `x` given matrices for the
/// base letters in `base` order.
pub fn complete_letters(alphabet: &Alphabet, base: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let letters = alphabet.base_letters();
    let mut out: Vec<Option<DMatrix<f64>>> = vec![None; alphabet.len()];
    for (&l, m) in letters.iter().zip(base) {
        let adj = alphabet.adjoint_of(l).expect("in range");
        out[l as usize] = Some(m.clone());
        if adj != l {
            out[adj as usize] = Some(m.transpose());
        }
    }
    out.into_iter().map(|m| m.expect("every letter covered")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks() {
        assert_eq!(numeric_rank(&DMatrix::identity(3, 3), 1e-6), 3);
        let s37 = 37f64.sqrt();
        let m1 = DMatrix::from_row_slice(3, 3, &[1.0, 0.75, -0.25, 0.75, 0.75, -0.375, -0.25, -0.375, 0.25]);
        assert_eq!(numeric_rank(&m1, 1e-6), 2);
        let e = SymmetricEigen::new(m1).eigenvalues;
        let mut e: Vec<f64> = e.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!(e[0].abs() < 1e-12);
        assert!((e[1] - (1.0 - s37 / 8.0)).abs() < 1e-12);
        assert!((e[2] - (1.0 + s37 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_commuting_points() {
        let a = Alphabet::hermitian(&["x", "y"]);
        let opt = Optimizer {
            dim: 2,
            x: vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]))],
            phi: DVector::from_vec(vec![1.0, 0.0]),
            moment_error: 0.0,
            symmetry_error: 0.0,
            objective_value: 0.0,
        };
        let mut pts = commuting_eigen_extract(&opt, &a, 1, 1e-9).unwrap();
        pts.sort_by(|p, q| p.coords[0].total_cmp(&q.coords[0]));
        assert!((pts[0].coords[0] - 1.0).abs() < 1e-12 && (pts[0].coords[1] - 3.0).abs() < 1e-12);
        assert!((pts[1].coords[0] - 2.0).abs() < 1e-12 && (pts[1].coords[1] - 4.0).abs() < 1e-12);
        assert!((pts[0].weight - 1.0).abs() < 1e-12);

        let mut bad = opt.clone();
        bad.x[1] = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(commuting_eigen_extract(&bad, &a, 1, 1e-9), Err(CertifyError::NonCommuting(_))));
    }
}
