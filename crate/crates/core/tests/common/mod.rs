//! Shared helpers for integration tests: matrix representations and
//! oracles built independently of the library's own constructions.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ncpoly::algebra::Word;
use ncpoly::relaxation::Relaxation;
use rand::Rng;

pub fn word_matrix(xs: &[DMatrix<f64>], w: &Word) -> DMatrix<f64> {
    let n = xs[0].nrows();
    w.letters().iter().fold(DMatrix::identity(n, n), |acc, &l| acc * &xs[l as usize])
}

/// `y_w = ⟨φ, w(X) φ⟩` for every variable of the relaxation.
pub fn moments(rel: &Relaxation, xs: &[DMatrix<f64>], phi: &DVector<f64>) -> Vec<f64> {
    rel.map.var_words().iter().map(|w| phi.dot(&(word_matrix(xs, w) * phi))).collect()
}

/// Largest violation of the relaxation's constraints at `y`: negative block
/// eigenvalues, equality residuals, inequality shortfalls.
pub fn violation(rel: &Relaxation, y: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for b in &rel.sdp.blocks {
        let m = b.evaluate(y);
        let e = m.symmetric_eigenvalues().min();
        worst = worst.max(-e);
    }
    for r in &rel.sdp.linear_eqs {
        worst = worst.max((r.eval(y) - r.rhs).abs());
    }
    for r in &rel.sdp.linear_ineqs {
        worst = worst.max(r.rhs - r.eval(y));
    }
    worst
}

pub fn random_unit<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    let norm = v.norm();
    v / norm
}

pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5).qr().q()
}

/// Orthogonal projector of the given rank in a random basis.
pub fn random_projector<R: Rng>(n: usize, rank: usize, rng: &mut R) -> DMatrix<f64> {
    let u = random_orthogonal(n, rng);
    let d = DMatrix::from_fn(n, n, |i, j| if i == j && i < rank { 1.0 } else { 0.0 });
    &u * d * u.transpose()
}

/// Symmetric matrix with spectrum drawn uniformly from `[lo, hi]`.
pub fn random_symmetric_in<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let u = random_orthogonal(n, rng);
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { rng.gen_range(lo..=hi) } else { 0.0 });
    &u * d * u.transpose()
}

/// Annihilators on the `2^m` Fock space; basis state `s` has mode `i`
/// occupied iff bit `i` is set, and `a_i` carries the sign of the number of
/// occupied modes below `i`.
pub fn fock_annihilators(m: usize) -> Vec<DMatrix<f64>> {
    let dim = 1usize << m;
    (0..m)
        .map(|i| {
            let mut a = DMatrix::zeros(dim, dim);
            for s in 0..dim {
                if s & (1 << i) != 0 {
                    let below = (s & ((1 << i) - 1)).count_ones();
                    a[(s ^ (1 << i), s)] = if below % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
            a
        })
        .collect()
}

/// Exact ground energy of `Σ h a†a†aa + Σ t a†a` in the `n`-particle sector.
pub fn fock_ground_energy(m: usize, n: usize, h: &[([usize; 4], f64)], t: &[([usize; 2], f64)]) -> f64 {
    let a = fock_annihilators(m);
    let dim = 1usize << m;
    let mut ham = DMatrix::zeros(dim, dim);
    for &([i, j, k, l], c) in h {
        ham += a[i].transpose() * a[j].transpose() * &a[k] * &a[l] * c;
    }
    for &([i, j], c) in t {
        ham += a[i].transpose() * &a[j] * c;
    }
    let sector: Vec<usize> = (0..dim).filter(|s| s.count_ones() as usize == n).collect();
    let block = DMatrix::from_fn(sector.len(), sector.len(), |x, y| ham[(sector[x], sector[y])]);
    ((&block + block.transpose()) * 0.5).symmetric_eigenvalues().min()
}

/// `A0 B0 + A0 B1 + A1 B0 − A1 B1` with `A_x, B_y` the optimal qubit
/// observables; its largest eigenvalue is the quantum maximum.
pub fn chsh_operator_norm() -> f64 {
    let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (a0, a1) = (z.clone(), x.clone());
    let (b0, b1) = ((&z + &x) * s, (&z - &x) * s);
    let op = a0.kronecker(&b0) + a0.kronecker(&b1) + a1.kronecker(&b0) - a1.kronecker(&b1);
    op.symmetric_eigenvalues().max()
}

/// Maximum of the correlator table over deterministic ±1 strategies.
pub fn classical_correlator_max(c: &[[f64; 2]; 2]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for s in 0..16u32 {
        let v = |bit: u32| if s & (1 << bit) != 0 { 1.0 } else { -1.0 };
        let (a, b) = ([v(0), v(1)], [v(2), v(3)]);
        let val: f64 = (0..2).flat_map(|x| (0..2).map(move |y| (x, y))).map(|(x, y)| c[x][y] * a[x] * b[y]).sum();
        best = best.max(val);
    }
    best
}
