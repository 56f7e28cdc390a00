//! Block-LMI semidefinite programs in free scalar variables and a dense
//! primal-dual interior-point solver for them.
//!
//! The problem solved is
//!
//! ```text
//! minimize    bᵀy + b₀
//! subject to  Σ_v y_v F_v^j + C^j ⪰ 0      for every block j
//!             A y  = a
//!             G y ≥ g
//! ```
//!
//! Its dual is `maximize −Σ_j tr(C^j Z_j) + aᵀμ + gᵀν + b₀` subject to
//! `Σ_j tr(F_v^j Z_j) + (Aᵀμ)_v + (Gᵀν)_v = b_v`, `Z_j ⪰ 0`, `ν ≥ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Upper-triangular entries `(row, col, value)` with `row ≤ col` of a
/// symmetric matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymSparse {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    /// `tr(F G)` for symmetric `F` (this) and arbitrary `G`.
    fn trace_with(&self, g: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * g[(i, i)] } else { v * (g[(i, j)] + g[(j, i)]) })
            .sum()
    }

    fn add_scaled_to(&self, m: &mut DMatrix<f64>, s: f64) {
        for &(i, j, v) in &self.entries {
            m[(i, j)] += s * v;
            if i != j {
                m[(j, i)] += s * v;
            }
        }
    }
}

/// One linear matrix inequality `C + Σ_v y_v F_v ⪰ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlock {
    pub label: String,
    pub size: usize,
    pub constant: SymSparse,
    /// Per-variable coefficient matrices, sorted by variable id.
    pub coeffs: Vec<(usize, SymSparse)>,
}

impl LmiBlock {
    pub fn evaluate(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.to_dense(self.size);
        for (v, f) in &self.coeffs {
            f.add_scaled_to(&mut m, y[*v]);
        }
        m
    }
}

/// `Σ coeffs · y` compared against `rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * y[v]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub blocks: Vec<LmiBlock>,
    /// Rows `Σ c_v y_v = rhs`.
    pub linear_eqs: Vec<LinearRow>,
    /// Rows `Σ c_v y_v ≥ rhs`.
    pub linear_ineqs: Vec<LinearRow>,
}

impl SdpProblem {
    /// Variables that appear in no block and no linear row.
    pub fn unused_variables(&self) -> Vec<usize> {
        let mut used = vec![false; self.num_vars];
        for b in &self.blocks {
            for (v, f) in &b.coeffs {
                if !f.is_empty() {
                    used[*v] = true;
                }
            }
        }
        for r in self.linear_eqs.iter().chain(&self.linear_ineqs) {
            for &(v, c) in &r.coeffs {
                if c != 0.0 {
                    used[v] = true;
                }
            }
        }
        (0..self.num_vars).filter(|&v| !used[v]).collect()
    }

    pub fn primal_objective(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(b, y)| b * y).sum::<f64>() + self.objective_constant
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl SolveStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("numerical failure at iteration {iteration}: {what}")]
    Numerical { iteration: usize, what: String },
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Refine solved points with [`refine_kkt`], falling back to
    /// [`polish_primal`].
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { gap_tol: 1e-8, feas_tol: 1e-8, max_iter: 200, polish: true }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub y: Vec<f64>,
    /// Primal slack matrices `C + Σ y_v F_v`, one per LMI block.
    pub primal_blocks: Vec<DMatrix<f64>>,
    /// Dual matrices `Z_j`, one per LMI block.
    pub dual_blocks: Vec<DMatrix<f64>>,
    pub dual_eq_multipliers: Vec<f64>,
    pub dual_ineq_multipliers: Vec<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// `|primal − dual| / (1 + |primal|)`.
    pub gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

/// True iff `dual_obj ≤ primal_obj + gap_tol`.
pub fn check_weak_duality(sol: &SdpSolution, gap_tol: f64) -> bool {
    sol.dual_obj <= sol.primal_obj + gap_tol
}

// ---------------------------------------------------------------------------
// Internal dense representation

struct Cone {
    n: usize,
    constant: DMatrix<f64>,
    /// (var, full symmetric entry list)
    coeffs: Vec<(usize, SymSparse)>,
}

impl Cone {
    fn apply(&self, y: &DVector<f64>, with_constant: bool) -> DMatrix<f64> {
        let mut m = if with_constant { self.constant.clone() } else { DMatrix::zeros(self.n, self.n) };
        for (v, f) in &self.coeffs {
            let s = y[*v];
            if s != 0.0 {
                f.add_scaled_to(&mut m, s);
            }
        }
        m
    }

    fn adjoint_into(&self, g: &DMatrix<f64>, out: &mut DVector<f64>) {
        for (v, f) in &self.coeffs {
            out[*v] += f.trace_with(g);
        }
    }
}

/// Equality constraints reduced to `y = y0 + N z`.
struct EqualityElimination {
    y0: DVector<f64>,
    null: DMatrix<f64>,
    /// Independent rows and their pivot columns.
    rows: Vec<usize>,
    pivots: Vec<usize>,
}

/// Row-reduces `A y = a`. Returns `None` when the system is inconsistent.
fn eliminate_equalities(a_mat: &DMatrix<f64>, a_rhs: &DVector<f64>) -> Option<EqualityElimination> {
    let (p, m) = a_mat.shape();
    let mut aug = DMatrix::zeros(p, m + 1);
    aug.view_mut((0, 0), (p, m)).copy_from(a_mat);
    aug.set_column(m, a_rhs);
    let scale = a_mat.amax().max(1.0);
    let tol = 1e-11 * scale;

    let mut pivots: Vec<usize> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..p).collect();
    let mut r = 0;
    for col in 0..m {
        if r == p {
            break;
        }
        let (best, val) = (r..p)
            .map(|i| (i, aug[(i, col)].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            continue;
        }
        aug.swap_rows(r, best);
        order.swap(r, best);
        let piv = aug[(r, col)];
        for j in 0..=m {
            aug[(r, j)] /= piv;
        }
        for i in 0..p {
            if i != r {
                let f = aug[(i, col)];
                if f != 0.0 {
                    for j in 0..=m {
                        let t = aug[(r, j)];
                        aug[(i, j)] -= f * t;
                    }
                }
            }
        }
        pivots.push(col);
        rows.push(order[r]);
        r += 1;
    }
    let rhs_scale = a_rhs.amax().max(1.0);
    for i in r..p {
        if aug[(i, m)].abs() > 1e-9 * rhs_scale {
            return None;
        }
    }
    let is_pivot: Vec<bool> = {
        let mut v = vec![false; m];
        for &c in &pivots {
            v[c] = true;
        }
        v
    };
    let free: Vec<usize> = (0..m).filter(|&c| !is_pivot[c]).collect();
    let mut y0 = DVector::zeros(m);
    for (k, &c) in pivots.iter().enumerate() {
        y0[c] = aug[(k, m)];
    }
    let mut null = DMatrix::zeros(m, free.len());
    for (fi, &fc) in free.iter().enumerate() {
        null[(fc, fi)] = 1.0;
        for (k, &pc) in pivots.iter().enumerate() {
            null[(pc, fi)] = -aug[(k, fc)];
        }
    }
    Some(EqualityElimination { y0, null, rows, pivots })
}

struct Scaling {
    lambda: DVector<f64>,
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    winv: DMatrix<f64>,
}

fn nt_scaling(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let ls = s.clone().cholesky()?.l();
    let lz = z.clone().cholesky()?.l();
    let prod = lz.transpose() * &ls;
    let svd = prod.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let inv_sqrt = lambda.map(|l| 1.0 / l.sqrt());
    // R = Ls V Λ^{-1/2},  R⁻¹ = Λ^{-1/2} Uᵀ Lzᵀ
    let mut r = &ls * vt.transpose();
    for (j, mut col) in r.column_iter_mut().enumerate() {
        col *= inv_sqrt[j];
    }
    let mut rinv = u.transpose() * lz.transpose();
    for (i, mut row) in rinv.row_iter_mut().enumerate() {
        row *= inv_sqrt[i];
    }
    let winv = rinv.transpose() * &rinv;
    Some(Scaling { lambda, r, rinv, winv })
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest step `α ≤ 1/…` keeping `Λ + α Δ ⪰ 0` (Λ diagonal, positive).
fn max_step(lambda: &DVector<f64>, delta: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = delta[(i, j)] / (lambda[i] * lambda[j]).sqrt();
        }
    }
    let e = SymmetricEigen::new(sym(&m)).eigenvalues.min();
    if e >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / e
    }
}

fn frob_norm_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Solve with default tolerances.
pub fn solve_default(sdp: &SdpProblem) -> Result<SdpSolution, SdpError> {
    solve(sdp, &SolverOptions::default())
}

/// Primal-dual path-following with Nesterov–Todd scaling and Mehrotra
/// predictor-corrector steps.
pub fn solve(sdp: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    let mut sol = solve_ipm(sdp, opts)?;
    if opts.polish && sol.status.is_solved() && !refine_kkt(sdp, &mut sol, 30) {
        polish_primal(sdp, &mut sol);
    }
    Ok(sol)
}

fn solve_ipm(sdp: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    let m = sdp.num_vars;
    if sdp.objective.len() != m {
        return Err(SdpError::Malformed(format!(
            "objective has {} entries for {} variables",
            sdp.objective.len(),
            m
        )));
    }
    let mut cones: Vec<Cone> = Vec::new();
    for b in &sdp.blocks {
        for (v, f) in &b.coeffs {
            if *v >= m || f.entries.iter().any(|&(i, j, _)| i > j || j >= b.size) {
                return Err(SdpError::Malformed(format!("bad coefficient entry in block {}", b.label)));
            }
        }
        cones.push(Cone { n: b.size, constant: b.constant.to_dense(b.size), coeffs: b.coeffs.clone() });
    }
    let n_psd = cones.len();
    for row in &sdp.linear_ineqs {
        cones.push(Cone {
            n: 1,
            constant: DMatrix::from_element(1, 1, -row.rhs),
            coeffs: row.coeffs.iter().map(|&(v, c)| (v, SymSparse { entries: vec![(0, 0, c)] })).collect(),
        });
    }

    let b = DVector::from_column_slice(&sdp.objective);
    let p = sdp.linear_eqs.len();
    let mut a_mat = DMatrix::zeros(p, m);
    let mut a_rhs = DVector::zeros(p);
    for (i, row) in sdp.linear_eqs.iter().enumerate() {
        for &(v, c) in &row.coeffs {
            a_mat[(i, v)] += c;
        }
        a_rhs[i] = row.rhs;
    }

    let Some(elim) = eliminate_equalities(&a_mat, &a_rhs) else {
        return Ok(trivial_status(sdp, SolveStatus::Infeasible));
    };
    let null = &elim.null;

    let nu: usize = cones.iter().map(|c| c.n).sum();
    let b_norm = b.norm();
    let c_norm = cones.iter().map(|c| frob_norm_sq(&c.constant)).sum::<f64>().sqrt();

    // initial point
    let mut y = elim.y0.clone();
    let mut s_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(cones.len());
    let mut z_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(cones.len());
    for cone in &cones {
        let n = cone.n as f64;
        let mut fmax: f64 = 0.0;
        let mut ratio: f64 = 0.0;
        for (v, f) in &cone.coeffs {
            let fn_ = frob_norm_sq(&f.to_dense(cone.n)).sqrt();
            fmax = fmax.max(fn_);
            ratio = ratio.max((1.0 + b[*v].abs()) / (1.0 + fn_));
        }
        let s0 = cone.apply(&y, true);
        let xi = 10f64.max(n.sqrt()).max(n * ratio);
        let eta = 10f64.max(n.sqrt()).max(fmax).max(s0.amax());
        s_blocks.push(DMatrix::identity(cone.n, cone.n) * eta);
        z_blocks.push(DMatrix::identity(cone.n, cone.n) * xi);
    }

    let mut best: Option<SdpSolution> = None;
    let mut iter = 0;
    let mut mu_eq = vec![0.0; p];

    loop {
        // residuals
        let rp: Vec<DMatrix<f64>> = cones
            .iter()
            .zip(&s_blocks)
            .map(|(c, s)| c.apply(&y, true) - s)
            .collect();
        let mut az = DVector::zeros(m);
        for (c, z) in cones.iter().zip(&z_blocks) {
            c.adjoint_into(z, &mut az);
        }
        let full_rd = &b - &az;
        let rd = null.transpose() * &full_rd;
        mu_eq = equality_multipliers(&a_mat, &elim, &full_rd);
        let pobj = b.dot(&y) + sdp.objective_constant;
        let mut dobj = sdp.objective_constant;
        for (c, z) in cones.iter().zip(&z_blocks) {
            dobj -= (&c.constant).component_mul(z).sum();
        }
        dobj += mu_eq.iter().zip(a_rhs.iter()).map(|(u, a)| u * a).sum::<f64>();
        let mu = cones
            .iter()
            .zip(s_blocks.iter().zip(&z_blocks))
            .map(|(_, (s, z))| s.component_mul(z).sum())
            .sum::<f64>()
            / nu.max(1) as f64;
        let pinf = rp.iter().map(frob_norm_sq).sum::<f64>().sqrt() / (1.0 + c_norm);
        let dinf = rd.norm() / (1.0 + b_norm);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        let snapshot = |st: SolveStatus| SdpSolution {
            y: y.iter().copied().collect(),
            primal_blocks: cones.iter().take(n_psd).map(|c| c.apply(&y, true)).collect(),
            dual_blocks: z_blocks.iter().take(n_psd).cloned().collect(),
            dual_eq_multipliers: mu_eq.clone(),
            dual_ineq_multipliers: z_blocks.iter().skip(n_psd).map(|z| z[(0, 0)]).collect(),
            primal_obj: pobj,
            dual_obj: dobj,
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            status: st,
            iterations: iter,
        };

        if rel_gap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            return Ok(snapshot(SolveStatus::Optimal));
        }
        let near = rel_gap <= 1e3 * opts.gap_tol && pinf <= 1e3 * opts.feas_tol && dinf <= 1e3 * opts.feas_tol;
        if near {
            best = Some(snapshot(SolveStatus::NearOptimal));
        }

        // infeasibility / unboundedness heuristics
        if iter > 5 {
            let zscale: f64 = z_blocks.iter().map(|z| z.trace()).sum();
            let dual_ray = dobj - sdp.objective_constant;
            if zscale > 1e8 && dual_ray > 0.0 {
                let ray_res = rd.norm() / dual_ray;
                if ray_res < 1e-6 * (1.0 + b_norm) && pinf > opts.feas_tol {
                    return Ok(snapshot(SolveStatus::Infeasible));
                }
            }
            let dy = &y - &elim.y0;
            let descent = -b.dot(&dy);
            if dy.norm() > 1e8 && descent > 0.0 {
                let mut worst: f64 = 0.0;
                for c in cones.iter() {
                    let ray = c.apply(&dy, false) / descent;
                    worst = worst.min(SymmetricEigen::new(sym(&ray)).eigenvalues.min());
                }
                if worst > -1e-6 && dinf > opts.feas_tol {
                    return Ok(snapshot(SolveStatus::Unbounded));
                }
            }
        }

        if iter >= opts.max_iter {
            return Ok(best.unwrap_or_else(|| snapshot(SolveStatus::IterationLimit)));
        }
        iter += 1;

        // scaling
        let mut scal: Vec<Scaling> = Vec::with_capacity(cones.len());
        for (s, z) in s_blocks.iter().zip(&z_blocks) {
            match nt_scaling(s, z) {
                Some(sc) => scal.push(sc),
                None => {
                    return finish_on_failure(best, iter, "scaling factorization failed");
                }
            }
        }

        // Schur complement in reduced coordinates
        let mut h = DMatrix::zeros(m, m);
        for (cone, sc) in cones.iter().zip(&scal) {
            schur_accumulate(cone, &sc.winv, &mut h);
        }
        let hr = null.transpose() * &h * null;
        let hr = sym(&hr);
        let chol = match factor_schur(&hr) {
            Some(c) => c,
            None => return finish_on_failure(best, iter, "Schur complement is not positive definite"),
        };

        let direction = |t: &[DMatrix<f64>]| -> (DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
            let mut g_adj = DVector::zeros(m);
            let mut base: Vec<DMatrix<f64>> = Vec::with_capacity(cones.len());
            for ((cone, sc), (tj, rpj)) in cones.iter().zip(&scal).zip(t.iter().zip(&rp)) {
                let b0 = sc.rinv.transpose() * tj * &sc.rinv;
                let g = &b0 - &sc.winv * rpj * &sc.winv;
                cone.adjoint_into(&g, &mut g_adj);
                base.push(b0);
            }
            let rhs = null.transpose() * g_adj - &rd;
            let dz = chol.solve(&rhs);
            let dy = null * dz;
            let mut ds = Vec::with_capacity(cones.len());
            let mut dzs = Vec::with_capacity(cones.len());
            for ((cone, sc), (b0, rpj)) in cones.iter().zip(&scal).zip(base.iter().zip(&rp)) {
                let dsj = cone.apply(&dy, false) + rpj;
                let dzj = sym(&(b0 - &sc.winv * &dsj * &sc.winv));
                ds.push(dsj);
                dzs.push(dzj);
            }
            (dy, ds, dzs)
        };

        let steps = |ds: &[DMatrix<f64>], dz: &[DMatrix<f64>]| -> (f64, f64, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            let mut sts = Vec::with_capacity(scal.len());
            let mut zts = Vec::with_capacity(scal.len());
            for (sc, (dsj, dzj)) in scal.iter().zip(ds.iter().zip(dz)) {
                let st = sym(&(&sc.rinv * dsj * sc.rinv.transpose()));
                let zt = sym(&(sc.r.transpose() * dzj * &sc.r));
                ap = ap.min(max_step(&sc.lambda, &st));
                ad = ad.min(max_step(&sc.lambda, &zt));
                sts.push(st);
                zts.push(zt);
            }
            (ap, ad, sts, zts)
        };

        // predictor
        let t_aff: Vec<DMatrix<f64>> = scal.iter().map(|sc| DMatrix::from_diagonal(&(-&sc.lambda))).collect();
        let (_, ds_a, dz_a) = direction(&t_aff);
        let (ap_a, ad_a, st_a, zt_a) = steps(&ds_a, &dz_a);
        let ap_a = ap_a.min(1.0);
        let ad_a = ad_a.min(1.0);
        let mut mu_aff = 0.0;
        for (j, sc) in scal.iter().enumerate() {
            // tr((Λ + a ΔS̃)(Λ + a ΔZ̃)) in scaled space
            let mut sa = DMatrix::from_diagonal(&sc.lambda);
            sa += &st_a[j] * ap_a;
            let mut za = DMatrix::from_diagonal(&sc.lambda);
            za += &zt_a[j] * ad_a;
            mu_aff += sa.component_mul(&za).sum();
        }
        mu_aff /= nu as f64;
        let sigma = (mu_aff / mu).max(0.0).powi(3).min(1.0);

        // corrector
        let t_cor: Vec<DMatrix<f64>> = scal
            .iter()
            .enumerate()
            .map(|(j, sc)| {
                let n = sc.lambda.len();
                let cross = (&st_a[j] * &zt_a[j] + &zt_a[j] * &st_a[j]) * 0.5;
                let mut t = DMatrix::zeros(n, n);
                for a in 0..n {
                    for c in 0..n {
                        let mut rc = -cross[(a, c)];
                        if a == c {
                            rc += sigma * mu - sc.lambda[a] * sc.lambda[a];
                        }
                        t[(a, c)] = 2.0 * rc / (sc.lambda[a] + sc.lambda[c]);
                    }
                }
                t
            })
            .collect();
        let (dy, ds, dz) = direction(&t_cor);
        let (ap, ad, _, _) = steps(&ds, &dz);
        let gamma = 0.95f64.max(1.0 - 5.0 * mu.min(1.0)).min(0.995);
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) || dy.iter().any(|x| !x.is_finite()) {
            return finish_on_failure(best, iter, "non-finite search direction");
        }

        // backtrack if rounding pushed an iterate out of the cone
        let mut ap = ap;
        let mut ad = ad;
        let (new_s, new_z) = loop {
            let ns: Vec<DMatrix<f64>> = s_blocks.iter().zip(&ds).map(|(s, d)| sym(&(s + d * ap))).collect();
            let nz: Vec<DMatrix<f64>> = z_blocks.iter().zip(&dz).map(|(z, d)| sym(&(z + d * ad))).collect();
            let ok = ns.iter().chain(&nz).all(|m| m.clone().cholesky().is_some());
            if ok {
                break (ns, nz);
            }
            ap *= 0.8;
            ad *= 0.8;
            if ap.max(ad) < 1e-10 {
                return finish_on_failure(best, iter, "iterate left the cone");
            }
        };
        y += &dy * ap;
        s_blocks = new_s;
        z_blocks = new_z;
    }
}

/// Refines a solved primal point using complementarity with the dual: every
/// slack block must annihilate the dominant eigenspace of its dual block,
/// which is linear in `y`. The minimum-norm correction satisfying those
/// equations and the equality rows is accepted only if all blocks stay PSD
/// and the objective does not drift. Returns whether the point was replaced.
///
/// Interior-point iterates on degenerate faces are accurate only to about
/// `sqrt(gap)`; this recovers full accuracy whenever the dual pins down the
/// primal optimum.
pub fn polish_primal(sdp: &SdpProblem, sol: &mut SdpSolution) -> bool {
    let m = sdp.num_vars;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for r in &sdp.linear_eqs {
        rows.push(r.coeffs.clone());
        rhs.push(r.rhs);
    }
    for (r, &nu) in sdp.linear_ineqs.iter().zip(&sol.dual_ineq_multipliers) {
        let scale = 1.0 + r.coeffs.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
        if nu > 1e-6 * scale {
            rows.push(r.coeffs.clone());
            rhs.push(r.rhs);
        }
    }
    for (block, z) in sdp.blocks.iter().zip(&sol.dual_blocks) {
        let eig = SymmetricEigen::new(z.clone());
        let zmax = eig.eigenvalues.amax();
        let thr = 1e-6 * zmax.max(1.0);
        let c = block.constant.to_dense(block.size);
        let dense: Vec<(usize, DMatrix<f64>)> =
            block.coeffs.iter().map(|(v, f)| (*v, f.to_dense(block.size))).collect();
        for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam <= thr {
                continue;
            }
            let u = eig.eigenvectors.column(idx);
            let cu = &c * u;
            let fus: Vec<(usize, DVector<f64>)> = dense.iter().map(|(v, f)| (*v, f * u)).collect();
            for a in 0..block.size {
                let row: Vec<(usize, f64)> =
                    fus.iter().filter(|(_, fu)| fu[a] != 0.0).map(|(v, fu)| (*v, fu[a])).collect();
                if !row.is_empty() {
                    rows.push(row);
                    rhs.push(-cu[a]);
                }
            }
        }
    }
    if rows.is_empty() {
        return false;
    }
    let mut cm = DMatrix::zeros(rows.len(), m);
    for (i, row) in rows.iter().enumerate() {
        for &(v, c) in row {
            cm[(i, v)] += c;
        }
    }
    let d = DVector::from_vec(rhs);
    let y0 = DVector::from_column_slice(&sol.y);
    let resid = &d - &cm * &y0;
    if cm.is_empty() {
        return false;
    }
    let svd = cm.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let Ok(delta) = svd.solve(&resid, 1e-10 * smax.max(1.0)) else {
        return false;
    };
    let y1 = &y0 + &delta;
    let after = (&d - &cm * &y1).amax();
    if after > 1e-9 * (1.0 + d.amax()) || delta.amax() > 1e-2 * (1.0 + y0.amax()) {
        return false;
    }
    let y1: Vec<f64> = y1.iter().copied().collect();
    let mut blocks = Vec::with_capacity(sdp.blocks.len());
    for b in &sdp.blocks {
        let s = b.evaluate(&y1);
        let scale = s.amax().max(1.0);
        if SymmetricEigen::new(s.clone()).eigenvalues.min() < -1e-10 * scale {
            return false;
        }
        blocks.push(s);
    }
    for r in &sdp.linear_ineqs {
        if r.eval(&y1) - r.rhs < -1e-10 {
            return false;
        }
    }
    let pobj = sdp.primal_objective(&y1);
    if (pobj - sol.primal_obj).abs() > 10.0 * sol.gap.max(1e-12) * (1.0 + pobj.abs()) {
        return false;
    }
    sol.y = y1;
    sol.primal_blocks = blocks;
    sol.primal_obj = pobj;
    sol.gap = (pobj - sol.dual_obj).abs() / (1.0 + pobj.abs());
    sol.primal_infeasibility = sdp
        .linear_eqs
        .iter()
        .map(|r| (r.eval(&sol.y) - r.rhs).abs())
        .fold(0.0, f64::max);
    true
}

/// Newton refinement of a solved primal-dual pair on the optimality system
///
/// ```text
/// Nᵀ(𝒜*(Z) − b) = 0,   S_j(y) Z_j + Z_j S_j(y) = 0,   y = y0 + N z,
/// ```
///
/// which is square in `(z, Z)` and nonsingular at strictly complementary,
/// nondegenerate solutions. Steps are least-squares solves with a
/// backtracking line search on the residual norm. The refined pair is kept
/// only if it reduces the residual and stays in the cone. Returns whether
/// the solution was replaced.
pub fn refine_kkt(sdp: &SdpProblem, sol: &mut SdpSolution, max_steps: usize) -> bool {
    const MAX_UNKNOWNS: usize = 1000;
    let m = sdp.num_vars;
    let p = sdp.linear_eqs.len();
    let mut a_mat = DMatrix::zeros(p, m);
    let mut a_rhs = DVector::zeros(p);
    for (i, row) in sdp.linear_eqs.iter().enumerate() {
        for &(v, c) in &row.coeffs {
            a_mat[(i, v)] += c;
        }
        a_rhs[i] = row.rhs;
    }
    let Some(elim) = eliminate_equalities(&a_mat, &a_rhs) else { return false };
    let null = &elim.null;
    let f = null.ncols();

    let cones = cones_of(sdp);
    let tri: Vec<Vec<(usize, usize)>> =
        cones.iter().map(|c| (0..c.n).flat_map(|a| (a..c.n).map(move |b| (a, b))).collect()).collect();
    let nz: usize = tri.iter().map(Vec::len).sum();
    let unknowns = f + nz;
    if unknowns > MAX_UNKNOWNS || unknowns == 0 {
        return false;
    }
    let b = DVector::from_column_slice(&sdp.objective);

    // starting point: z from y via least squares on N
    let y_init = DVector::from_column_slice(&sol.y);
    let z0 = if f == 0 {
        DVector::zeros(0)
    } else {
        let Ok(z0) = null.clone().svd(true, true).solve(&(&y_init - &elim.y0), 1e-12) else { return false };
        z0
    };
    let mut zs: Vec<DMatrix<f64>> = sol.dual_blocks.clone();
    for &nu in &sol.dual_ineq_multipliers {
        zs.push(DMatrix::from_element(1, 1, nu));
    }
    if zs.len() != cones.len() {
        return false;
    }

    let residual = |z: &DVector<f64>, zs: &[DMatrix<f64>]| -> DVector<f64> {
        let y = &elim.y0 + null * z;
        let mut out = DVector::zeros(unknowns);
        let mut az = DVector::zeros(m);
        for (c, zj) in cones.iter().zip(zs) {
            c.adjoint_into(zj, &mut az);
        }
        out.rows_mut(0, f).copy_from(&(null.transpose() * (az - &b)));
        let mut off = f;
        for ((c, zj), t) in cones.iter().zip(zs).zip(&tri) {
            let sj = c.apply(&y, true);
            let r = &sj * zj + zj * &sj;
            for (k, &(a, bb)) in t.iter().enumerate() {
                out[off + k] = r[(a, bb)];
            }
            off += t.len();
        }
        out
    };

    let mut z = z0;
    let mut res = residual(&z, &zs);
    let start_norm = res.norm();
    let mut norm = start_norm;
    let floor = 1e-14 * (1.0 + b.amax());
    for _ in 0..max_steps {
        if norm < floor {
            break;
        }
        let y = &elim.y0 + null * &z;
        let s_now: Vec<DMatrix<f64>> = cones.iter().map(|c| c.apply(&y, true)).collect();
        let mut jac = DMatrix::zeros(unknowns, unknowns);
        // ∂/∂z of the complementarity rows, and ∂/∂Z of the dual rows
        let mut row_off = f;
        let mut col_off = f;
        for (j, c) in cones.iter().enumerate() {
            let t = &tri[j];
            let fdense: Vec<(usize, DMatrix<f64>)> = c.coeffs.iter().map(|(v, fs)| (*v, fs.to_dense(c.n))).collect();
            for i in 0..f {
                let mut ds = DMatrix::zeros(c.n, c.n);
                for (v, fv) in &fdense {
                    let w = null[(*v, i)];
                    if w != 0.0 {
                        ds += fv * w;
                    }
                }
                let r = &ds * &zs[j] + &zs[j] * &ds;
                for (k, &(a, bb)) in t.iter().enumerate() {
                    jac[(row_off + k, i)] = r[(a, bb)];
                }
            }
            for (kc, &(a, bb)) in t.iter().enumerate() {
                let mut e = DMatrix::zeros(c.n, c.n);
                e[(a, bb)] = 1.0;
                e[(bb, a)] = 1.0;
                let r = &s_now[j] * &e + &e * &s_now[j];
                for (k, &(ra, rb)) in t.iter().enumerate() {
                    jac[(row_off + k, col_off + kc)] = r[(ra, rb)];
                }
                // dual rows: Nᵀ 𝒜*(E_ab)
                for (v, fv) in &fdense {
                    let tr = if a == bb { fv[(a, a)] } else { 2.0 * fv[(a, bb)] };
                    if tr != 0.0 {
                        for i in 0..f {
                            jac[(i, col_off + kc)] += null[(*v, i)] * tr;
                        }
                    }
                }
            }
            row_off += t.len();
            col_off += t.len();
        }
        let Some(step) = newton_step(jac, &res) else { break };
        let mut alpha = 1.0;
        let mut improved = false;
        while alpha > 1e-4 {
            let zt = &z + step.rows(0, f) * alpha;
            let mut zst = zs.clone();
            let mut off = f;
            for (zj, t) in zst.iter_mut().zip(&tri) {
                for (k, &(a, bb)) in t.iter().enumerate() {
                    let d = step[off + k] * alpha;
                    zj[(a, bb)] += d;
                    if a != bb {
                        zj[(bb, a)] += d;
                    }
                }
                off += t.len();
            }
            let rt = residual(&zt, &zst);
            if rt.norm() < norm {
                improved = rt.norm() < 0.9 * norm;
                z = zt;
                zs = zst;
                res = rt;
                norm = res.norm();
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !(norm < 0.5 * start_norm) {
        return false;
    }
    let y = &elim.y0 + null * &z;
    let y: Vec<f64> = y.iter().copied().collect();
    let mut primal_blocks = Vec::new();
    for (j, c) in cones.iter().enumerate() {
        let sj = c.apply(&DVector::from_column_slice(&y), true);
        let ss = sj.amax().max(1.0);
        let zsc = zs[j].amax().max(1.0);
        if SymmetricEigen::new(sj.clone()).eigenvalues.min() < -1e-10 * ss
            || SymmetricEigen::new(zs[j].clone()).eigenvalues.min() < -1e-10 * zsc
        {
            return false;
        }
        if j < sdp.blocks.len() {
            primal_blocks.push(sj);
        }
    }
    let n_psd = sdp.blocks.len();
    let mut az = DVector::zeros(m);
    for (c, zj) in cones.iter().zip(&zs) {
        c.adjoint_into(zj, &mut az);
    }
    let full_rd = &b - &az;
    let mu_eq = equality_multipliers(&a_mat, &elim, &full_rd);
    let mut dobj = sdp.objective_constant;
    for (c, zj) in cones.iter().zip(&zs) {
        dobj -= c.constant.component_mul(zj).sum();
    }
    dobj += mu_eq.iter().zip(a_rhs.iter()).map(|(u, a)| u * a).sum::<f64>();
    let pobj = sdp.primal_objective(&y);
    sol.y = y;
    sol.primal_blocks = primal_blocks;
    sol.dual_blocks = zs[..n_psd].to_vec();
    sol.dual_ineq_multipliers = zs[n_psd..].iter().map(|z| z[(0, 0)]).collect();
    sol.dual_eq_multipliers = mu_eq;
    sol.primal_obj = pobj;
    sol.dual_obj = dobj;
    sol.gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
    sol.dual_infeasibility = (null.transpose() * full_rd).norm() / (1.0 + b.norm());
    sol.primal_infeasibility = sdp
        .linear_eqs
        .iter()
        .map(|r| (r.eval(&sol.y) - r.rhs).abs())
        .fold(0.0, f64::max);
    true
}

/// Solves `J d = −r`: LU when `J` is well determined, least squares via SVD
/// otherwise.
fn newton_step(jac: DMatrix<f64>, res: &DVector<f64>) -> Option<DVector<f64>> {
    let rhs = -res;
    if let Some(d) = jac.clone().lu().solve(&rhs) {
        let err = (&jac * &d - &rhs).norm();
        if d.iter().all(|x| x.is_finite()) && err <= 1e-10 * rhs.norm().max(1e-300) && d.amax() < 1e8 * (1.0 + rhs.amax()) {
            return Some(d);
        }
    }
    if jac.nrows() > 300 {
        // regularized normal equations; a dense SVD at this size costs seconds
        let jt = jac.transpose();
        let mut normal = &jt * &jac;
        let delta = 1e-14 * normal.diagonal().amax().max(1e-300);
        for i in 0..normal.nrows() {
            normal[(i, i)] += delta;
        }
        if let Some(ch) = normal.cholesky() {
            let d = ch.solve(&(jt * &rhs));
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
    }
    let svd = jac.svd(true, true);
    let smax = svd.singular_values.amax();
    svd.solve(&rhs, 1e-13 * smax.max(1.0)).ok()
}

/// PSD blocks followed by one 1×1 cone per inequality row.
fn cones_of(sdp: &SdpProblem) -> Vec<Cone> {
    let mut cones: Vec<Cone> = sdp
        .blocks
        .iter()
        .map(|b| Cone { n: b.size, constant: b.constant.to_dense(b.size), coeffs: b.coeffs.clone() })
        .collect();
    for row in &sdp.linear_ineqs {
        cones.push(Cone {
            n: 1,
            constant: DMatrix::from_element(1, 1, -row.rhs),
            coeffs: row.coeffs.iter().map(|&(v, c)| (v, SymSparse { entries: vec![(0, 0, c)] })).collect(),
        });
    }
    cones
}

/// Moves a solved dual point to the weighted analytic center of the optimal
/// dual face: maximizes `Σ_j w_j log det Ω_j` over `Z_j = U_j Ω_j U_jᵀ`,
/// where `U_j` spans the null space of the primal slack, subject to dual
/// feasibility and `μ_r = 0` for the rows in `pinned`. Cones are the LMI
/// blocks followed by the inequality rows; an empty `weights` means all 1.
/// Leaves `sol` untouched and returns false if the face is unbounded in the
/// free directions or the Newton iteration does not converge.
pub fn center_dual(sdp: &SdpProblem, sol: &mut SdpSolution, pinned: &[usize], weights: &[f64]) -> bool {
    const MAX_UNKNOWNS: usize = 1500;
    let cones = cones_of(sdp);
    let m = sdp.num_vars;
    let y = DVector::from_column_slice(&sol.y);
    let mut zs: Vec<DMatrix<f64>> = sol.dual_blocks.clone();
    zs.extend(sol.dual_ineq_multipliers.iter().map(|&nu| DMatrix::from_element(1, 1, nu)));
    if zs.len() != cones.len() || !(weights.is_empty() || weights.len() == cones.len()) {
        return false;
    }
    let weight = |j: usize| if weights.is_empty() { 1.0 } else { weights[j] };

    // face bases
    let mut bases = Vec::with_capacity(cones.len());
    for c in &cones {
        let eig = SymmetricEigen::new(sym(&c.apply(&y, true)));
        let thr = 1e-7 * eig.eigenvalues.amax().max(1.0);
        let cols: Vec<usize> = (0..c.n).filter(|&i| eig.eigenvalues[i] <= thr).collect();
        bases.push(DMatrix::from_fn(c.n, cols.len(), |a, b| eig.eigenvectors[(a, cols[b])]));
    }
    let tri: Vec<Vec<(usize, usize)>> =
        bases.iter().map(|u| (0..u.ncols()).flat_map(|a| (a..u.ncols()).map(move |b| (a, b))).collect()).collect();
    let nw: usize = tri.iter().map(Vec::len).sum();
    let free_rows: Vec<usize> = (0..sdp.linear_eqs.len()).filter(|r| !pinned.contains(r)).collect();
    let nx = nw + free_rows.len();
    if nw == 0 || nx + m > MAX_UNKNOWNS {
        return false;
    }

    // K x = b with x = (vech Ω, μ_free)
    let mut kmat = DMatrix::zeros(m, nx);
    let mut off = 0;
    for ((c, u), t) in cones.iter().zip(&bases).zip(&tri) {
        for (v, f) in &c.coeffs {
            let g = u.transpose() * f.to_dense(c.n) * u;
            for (k, &(a, b)) in t.iter().enumerate() {
                kmat[(*v, off + k)] += if a == b { g[(a, a)] } else { 2.0 * g[(a, b)] };
            }
        }
        off += t.len();
    }
    for (k, &r) in free_rows.iter().enumerate() {
        for &(v, c) in &sdp.linear_eqs[r].coeffs {
            kmat[(v, nw + k)] += c;
        }
    }
    let b = DVector::from_column_slice(&sdp.objective);

    let mut x = DVector::zeros(nx);
    let mut off = 0;
    for ((zj, u), t) in zs.iter().zip(&bases).zip(&tri) {
        let mut om = u.transpose() * zj * u;
        let eig = SymmetricEigen::new(sym(&om));
        if eig.eigenvalues.len() > 0 && eig.eigenvalues.min() <= 0.0 {
            let shift = 1e-6 * eig.eigenvalues.amax().max(1e-3) - eig.eigenvalues.min();
            om += DMatrix::identity(om.nrows(), om.ncols()) * shift;
        }
        for (k, &(a, bb)) in t.iter().enumerate() {
            x[off + k] = om[(a, bb)];
        }
        off += t.len();
    }
    for (k, &r) in free_rows.iter().enumerate() {
        x[nw + k] = sol.dual_eq_multipliers[r];
    }

    let unpack = |x: &DVector<f64>| -> Option<Vec<DMatrix<f64>>> {
        let mut out = Vec::with_capacity(tri.len());
        let mut off = 0;
        for (u, t) in bases.iter().zip(&tri) {
            let n = u.ncols();
            let mut om = DMatrix::zeros(n, n);
            for (k, &(a, bb)) in t.iter().enumerate() {
                om[(a, bb)] = x[off + k];
                om[(bb, a)] = x[off + k];
            }
            if n > 0 && om.clone().cholesky().is_none() {
                return None;
            }
            out.push(om);
            off += t.len();
        }
        Some(out)
    };
    // gradient of −Σ log det Ω and the KKT residual
    let grad = |oms: &[DMatrix<f64>]| -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let mut g = DVector::zeros(nx);
        let mut invs = Vec::with_capacity(oms.len());
        let mut off = 0;
        for (j, (om, t)) in oms.iter().zip(&tri).enumerate() {
            let w = om.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| DMatrix::zeros(om.nrows(), om.ncols()));
            let w = w * weight(j);
            for (k, &(a, bb)) in t.iter().enumerate() {
                g[off + k] = -(if a == bb { w[(a, a)] } else { 2.0 * w[(a, bb)] });
            }
            invs.push(w);
            off += t.len();
        }
        (g, invs)
    };
    let residual = |x: &DVector<f64>, nu: &DVector<f64>, g: &DVector<f64>| -> DVector<f64> {
        let mut r = DVector::zeros(nx + m);
        r.rows_mut(0, nx).copy_from(&(g + kmat.transpose() * nu));
        r.rows_mut(nx, m).copy_from(&(&kmat * x - &b));
        r
    };

    let Some(mut oms) = unpack(&x) else { return false };
    let mut nu = DVector::zeros(m);
    let (g, mut invs) = grad(&oms);
    let mut res = residual(&x, &nu, &g);
    let scale = 1.0 + b.amax();
    let mut converged = false;
    for _ in 0..100 {
        let primal_res = res.rows(nx, m).amax();
        if primal_res < 1e-13 * scale && res.rows(0, nx).amax() < 1e-10 {
            converged = true;
            break;
        }
        let mut kkt = DMatrix::zeros(nx + m, nx + m);
        let mut off = 0;
        for (j, (w, t)) in invs.iter().zip(&tri).enumerate() {
            let wj = weight(j);
            let w = &(if wj > 0.0 { w / wj } else { w.clone() });
            for (i, &(a, bb)) in t.iter().enumerate() {
                // W E_ab W
                let mut p = DMatrix::zeros(w.nrows(), w.ncols());
                for c in 0..w.nrows() {
                    for d in 0..w.ncols() {
                        p[(c, d)] = if a == bb {
                            w[(c, a)] * w[(a, d)]
                        } else {
                            w[(c, a)] * w[(bb, d)] + w[(c, bb)] * w[(a, d)]
                        };
                    }
                }
                for (k, &(c, d)) in t.iter().enumerate() {
                    kkt[(off + i, off + k)] = wj * if c == d { p[(c, c)] } else { 2.0 * p[(c, d)] };
                }
            }
            off += t.len();
        }
        kkt.view_mut((0, nx), (nx, m)).copy_from(&kmat.transpose());
        kkt.view_mut((nx, 0), (m, nx)).copy_from(&kmat);
        let svd = kkt.svd(true, true);
        let smax = svd.singular_values.amax();
        let Ok(step) = svd.solve(&(-&res), 1e-13 * smax.max(1.0)) else { return false };
        let norm = res.norm();
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let xt = &x + step.rows(0, nx) * alpha;
            let nut = &nu + step.rows(nx, m) * alpha;
            if let Some(o) = unpack(&xt) {
                let (gt, it) = grad(&o);
                let rt = residual(&xt, &nut, &gt);
                if rt.norm() <= (1.0 - 0.01 * alpha) * norm {
                    x = xt;
                    nu = nut;
                    oms = o;
                    invs = it;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted || x.amax() > 1e8 {
            return false;
        }
    }
    if !converged {
        return false;
    }

    let n_psd = sdp.blocks.len();
    let new_z: Vec<DMatrix<f64>> = oms.iter().zip(&bases).map(|(om, u)| u * om * u.transpose()).collect();
    let mut mu = vec![0.0; sdp.linear_eqs.len()];
    for (k, &r) in free_rows.iter().enumerate() {
        mu[r] = x[nw + k];
    }
    let mut dobj = sdp.objective_constant;
    for (c, zj) in cones.iter().zip(&new_z) {
        dobj -= c.constant.component_mul(zj).sum();
    }
    dobj += mu.iter().zip(&sdp.linear_eqs).map(|(u, r)| u * r.rhs).sum::<f64>();
    if (dobj - sol.dual_obj).abs() > 1e-7 * (1.0 + sol.dual_obj.abs()) {
        return false;
    }
    let mut az = DVector::zeros(m);
    for (c, zj) in cones.iter().zip(&new_z) {
        c.adjoint_into(zj, &mut az);
    }
    for (r, u) in sdp.linear_eqs.iter().zip(&mu) {
        for &(v, c) in &r.coeffs {
            az[v] += c * u;
        }
    }
    sol.dual_infeasibility = (&b - az).norm() / (1.0 + b.norm());
    sol.dual_blocks = new_z[..n_psd].to_vec();
    sol.dual_ineq_multipliers = new_z[n_psd..].iter().map(|z| z[(0, 0)]).collect();
    sol.dual_eq_multipliers = mu;
    sol.dual_obj = dobj;
    sol.gap = (sol.primal_obj - dobj).abs() / (1.0 + sol.primal_obj.abs());
    true
}

fn finish_on_failure(best: Option<SdpSolution>, iter: usize, what: &str) -> Result<SdpSolution, SdpError> {
    match best {
        Some(sol) => Ok(sol),
        None => Err(SdpError::Numerical { iteration: iter, what: what.to_string() }),
    }
}

fn trivial_status(sdp: &SdpProblem, status: SolveStatus) -> SdpSolution {
    SdpSolution {
        y: vec![0.0; sdp.num_vars],
        primal_blocks: sdp.blocks.iter().map(|b| DMatrix::zeros(b.size, b.size)).collect(),
        dual_blocks: sdp.blocks.iter().map(|b| DMatrix::zeros(b.size, b.size)).collect(),
        dual_eq_multipliers: vec![0.0; sdp.linear_eqs.len()],
        dual_ineq_multipliers: vec![0.0; sdp.linear_ineqs.len()],
        primal_obj: f64::NAN,
        dual_obj: f64::NAN,
        gap: f64::NAN,
        primal_infeasibility: f64::INFINITY,
        dual_infeasibility: f64::NAN,
        status,
        iterations: 0,
    }
}

struct SchurFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SchurFactor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

fn factor_schur(h: &DMatrix<f64>) -> Option<SchurFactor> {
    if h.nrows() == 0 {
        return Some(SchurFactor { chol: DMatrix::<f64>::identity(0, 0).cholesky()? });
    }
    if let Some(chol) = h.clone().cholesky() {
        return Some(SchurFactor { chol });
    }
    let scale = h.diagonal().amax().max(1e-300);
    for k in [1e-14, 1e-12, 1e-10] {
        let reg = h + DMatrix::identity(h.nrows(), h.ncols()) * (k * scale);
        if let Some(chol) = reg.cholesky() {
            return Some(SchurFactor { chol });
        }
    }
    None
}

/// `H_uv += tr(F_u W F_v W)` for every pair of variables in `cone`.
fn schur_accumulate(cone: &Cone, w: &DMatrix<f64>, h: &mut DMatrix<f64>) {
    let n = cone.n;
    for (iu, (u, fu)) in cone.coeffs.iter().enumerate() {
        // M = W F_u W
        let mut mu = DMatrix::zeros(n, n);
        for &(a, b, val) in &fu.entries {
            add_outer(&mut mu, w, a, b, val);
            if a != b {
                add_outer(&mut mu, w, b, a, val);
            }
        }
        for (v, fv) in cone.coeffs.iter().skip(iu) {
            let t = fv.trace_with(&mu);
            h[(*u, *v)] += t;
            if u != v {
                h[(*v, *u)] += t;
            }
        }
    }
}

/// `M += val · W[:, a] W[b, :]`.
fn add_outer(m: &mut DMatrix<f64>, w: &DMatrix<f64>, a: usize, b: usize, val: f64) {
    let n = w.nrows();
    for c in 0..n {
        let wb = w[(b, c)] * val;
        if wb == 0.0 {
            continue;
        }
        for r in 0..n {
            m[(r, c)] += w[(r, a)] * wb;
        }
    }
}

/// Least-squares multipliers for `Aᵀ μ = r`, restricted to independent rows.
fn equality_multipliers(a_mat: &DMatrix<f64>, elim: &EqualityElimination, r: &DVector<f64>) -> Vec<f64> {
    let p = a_mat.nrows();
    let k = elim.rows.len();
    let mut mu = vec![0.0; p];
    if k == 0 {
        return mu;
    }
    // square system on pivot columns: A_{rows, pivots}ᵀ μ_rows = r_pivots
    let mut sys = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (ci, &col) in elim.pivots.iter().enumerate() {
        for (ri, &row) in elim.rows.iter().enumerate() {
            sys[(ci, ri)] = a_mat[(row, col)];
        }
        rhs[ci] = r[col];
    }
    if let Some(sol) = sys.lu().solve(&rhs) {
        for (ri, &row) in elim.rows.iter().enumerate() {
            mu[row] = sol[ri];
        }
    }
    mu
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(entries: &[(usize, usize, f64)]) -> SymSparse {
        SymSparse { entries: entries.to_vec() }
    }

    /// min y1 s.t. [[1, y1],[y1, 1]] ⪰ 0  → −1
    #[test]
    fn two_by_two_lmi() {
        let sdp = SdpProblem {
            num_vars: 1,
            objective: vec![1.0],
            objective_constant: 0.0,
            blocks: vec![LmiBlock {
                label: "m".into(),
                size: 2,
                constant: sp(&[(0, 0, 1.0), (1, 1, 1.0)]),
                coeffs: vec![(0, sp(&[(0, 1, 1.0)]))],
            }],
            linear_eqs: vec![],
            linear_ineqs: vec![],
        };
        let sol = solve_default(&sdp).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_obj + 1.0).abs() < 1e-7, "{}", sol.primal_obj);
        assert!(check_weak_duality(&sol, 1e-8));
    }

    /// min y0 + y1 s.t. y0 + y1 ≥ 1 (ineq), y0 − y1 = 0 (eq), y0 ≥ 0 via 1×1 block.
    #[test]
    fn linear_rows() {
        let sdp = SdpProblem {
            num_vars: 2,
            objective: vec![1.0, 1.0],
            objective_constant: 0.5,
            blocks: vec![LmiBlock {
                label: "y0>=0".into(),
                size: 1,
                constant: SymSparse::default(),
                coeffs: vec![(0, sp(&[(0, 0, 1.0)]))],
            }],
            linear_eqs: vec![LinearRow { coeffs: vec![(0, 1.0), (1, -1.0)], rhs: 0.0 }],
            linear_ineqs: vec![LinearRow { coeffs: vec![(0, 1.0), (1, 1.0)], rhs: 1.0 }],
        };
        let sol = solve_default(&sdp).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_obj - 1.5).abs() < 1e-7);
        assert!((sol.dual_ineq_multipliers[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let sdp = SdpProblem {
            num_vars: 1,
            objective: vec![1.0],
            objective_constant: 0.0,
            blocks: vec![],
            linear_eqs: vec![
                LinearRow { coeffs: vec![(0, 1.0)], rhs: 0.0 },
                LinearRow { coeffs: vec![(0, 2.0)], rhs: 1.0 },
            ],
            linear_ineqs: vec![],
        };
        assert_eq!(solve_default(&sdp).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn infeasible_lmi_detected() {
        // y ≥ 1 and −y ≥ 0
        let sdp = SdpProblem {
            num_vars: 1,
            objective: vec![1.0],
            objective_constant: 0.0,
            blocks: vec![],
            linear_eqs: vec![],
            linear_ineqs: vec![
                LinearRow { coeffs: vec![(0, 1.0)], rhs: 1.0 },
                LinearRow { coeffs: vec![(0, -1.0)], rhs: 0.0 },
            ],
        };
        let sol = solve_default(&sdp).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        // min −y s.t. y ≥ 0
        let sdp = SdpProblem {
            num_vars: 1,
            objective: vec![-1.0],
            objective_constant: 0.0,
            blocks: vec![],
            linear_eqs: vec![],
            linear_ineqs: vec![LinearRow { coeffs: vec![(0, 1.0)], rhs: 0.0 }],
        };
        let sol = solve_default(&sdp).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn weak_duality_verdict_on_stub() {
        let mut sol = trivial_status(
            &SdpProblem {
                num_vars: 0,
                objective: vec![],
                objective_constant: 0.0,
                blocks: vec![],
                linear_eqs: vec![],
                linear_ineqs: vec![],
            },
            SolveStatus::Optimal,
        );
        sol.primal_obj = 1.0;
        sol.dual_obj = 1.5;
        assert!(!check_weak_duality(&sol, 1e-8));
        sol.dual_obj = 1.0 - 1e-3;
        assert!(check_weak_duality(&sol, 1e-8));
    }

    #[test]
    fn row_reduction_null_space() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let rhs = DVector::from_column_slice(&[1.0, 2.0]);
        let e = eliminate_equalities(&a, &rhs).unwrap();
        assert_eq!(e.rows.len(), 1);
        assert_eq!(e.null.ncols(), 2);
        assert!((&a * &e.y0 - &rhs).norm() < 1e-12);
        assert!((&a * &e.null).norm() < 1e-12);
    }
}
