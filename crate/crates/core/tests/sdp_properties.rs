use std::io::Write as _;
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use ncpoly::problems::builtin_corpus;
use ncpoly::relaxation::assemble;
use ncpoly::sdp::*;
use ncpoly::sdpa::{canonicalize, export_sdpa, parse_sdpa};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_sparse(m: &DMatrix<f64>) -> SymSparse {
    let mut entries = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..=j {
            if m[(i, j)] != 0.0 {
                entries.push((i, j, m[(i, j)]));
            }
        }
    }
    SymSparse { entries }
}

fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q()
}

/// An SDP with a known optimal primal-dual pair: slack `S` and dual `Z`
/// are PSD with complementary ranges, so `bᵀy*` is the optimal value.
struct Planted {
    sdp: SdpProblem,
    value: f64,
}

fn planted(rng: &mut ChaCha8Rng) -> Planted {
    let nblocks = rng.gen_range(1..=3);
    let sizes: Vec<usize> = (0..nblocks).map(|_| rng.gen_range(1..=8)).collect();
    let sym_dim: usize = sizes.iter().map(|n| n * (n + 1) / 2).sum();
    let m = rng.gen_range(1..=20.min(sym_dim.max(2) - 1).max(1));
    let y_star: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut b = vec![0.0; m];
    let mut value = 0.0;
    let mut blocks = Vec::new();
    for (j, &n) in sizes.iter().enumerate() {
        let u = random_orthogonal(n, rng);
        let r = rng.gen_range(0..=n);
        let s = DMatrix::from_fn(n, n, |i, k| if i == k && i < r { rng.gen_range(0.5..2.0) } else { 0.0 });
        let z = DMatrix::from_fn(n, n, |i, k| if i == k && i >= r { rng.gen_range(0.5..2.0) } else { 0.0 });
        let (s, z) = (&u * s * u.transpose(), &u * z * u.transpose());
        // variable 0 enters every block as the identity: a strictly
        // feasible direction
        let fs: Vec<DMatrix<f64>> =
            (0..m).map(|v| if v == 0 { DMatrix::identity(n, n) } else { random_sym(n, rng) }).collect();
        let mut c = s.clone();
        for (v, f) in fs.iter().enumerate() {
            c -= f * y_star[v];
            b[v] += f.component_mul(&z).sum();
        }
        value -= c.component_mul(&z).sum();
        blocks.push(LmiBlock {
            label: format!("b{j}"),
            size: n,
            constant: to_sparse(&c),
            coeffs: fs.iter().enumerate().map(|(v, f)| (v, to_sparse(f))).collect(),
        });
    }
    let mut linear_eqs = Vec::new();
    let mut linear_ineqs = Vec::new();
    if m > 1 && rng.gen_bool(0.5) {
        let a: Vec<(usize, f64)> = (1..m).map(|v| (v, rng.gen_range(-1.0..1.0))).collect();
        let rhs = a.iter().map(|&(v, c)| c * y_star[v]).sum();
        let mu = rng.gen_range(-1.0..1.0);
        for &(v, c) in &a {
            b[v] += mu * c;
        }
        value += mu * rhs;
        linear_eqs.push(LinearRow { coeffs: a, rhs });
    }
    if rng.gen_bool(0.5) {
        let g: Vec<(usize, f64)> = (0..m).map(|v| (v, rng.gen_range(-1.0..1.0))).collect();
        let at: f64 = g.iter().map(|&(v, c)| c * y_star[v]).sum();
        if rng.gen_bool(0.5) {
            let nu = rng.gen_range(0.5..1.5);
            for &(v, c) in &g {
                b[v] += nu * c;
            }
            value += nu * at;
            linear_ineqs.push(LinearRow { coeffs: g, rhs: at });
        } else {
            linear_ineqs.push(LinearRow { coeffs: g, rhs: at - 0.5 });
        }
    }
    let objective_constant = rng.gen_range(-1.0..1.0);
    Planted {
        sdp: SdpProblem { num_vars: m, objective: b, objective_constant, blocks, linear_eqs, linear_ineqs },
        value: value + objective_constant,
    }
}

#[test]
fn planted_optima_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SolverOptions::default();
    for case in 0..50 {
        let p = planted(&mut rng);
        let sol = solve(&p.sdp, &opts).unwrap();
        assert!(sol.status.is_solved(), "case {case}: {:?}", sol.status);
        let scale = 1.0 + p.value.abs();
        assert!((sol.primal_obj - p.value).abs() < 1e-6 * scale, "case {case}: {} vs {}", sol.primal_obj, p.value);
        assert!((sol.dual_obj - p.value).abs() < 1e-6 * scale, "case {case}: dual {} vs {}", sol.dual_obj, p.value);
        assert!(check_weak_duality(&sol, 1e-6));
        for z in &sol.dual_blocks {
            assert!(z.symmetric_eigenvalues().min() >= -opts.feas_tol, "case {case}");
        }
        for (blk, s) in p.sdp.blocks.iter().zip(&sol.primal_blocks) {
            assert!(blk.evaluate(&sol.y).relative_eq(s, 1e-9, 1e-9));
            assert!(s.symmetric_eigenvalues().min() >= -opts.feas_tol, "case {case}");
        }
        assert!(sol.dual_ineq_multipliers.iter().all(|&v| v >= -opts.feas_tol));
    }
}

#[test]
fn infeasible_lmi_is_reported() {
    // y ≥ 1 and −y ≥ 0
    let one = |v: f64| SymSparse { entries: vec![(0, 0, v)] };
    let sdp = SdpProblem {
        num_vars: 1,
        objective: vec![1.0],
        objective_constant: 0.0,
        blocks: vec![
            LmiBlock { label: "a".into(), size: 1, constant: one(-1.0), coeffs: vec![(0, one(1.0))] },
            LmiBlock { label: "b".into(), size: 1, constant: one(0.0), coeffs: vec![(0, one(-1.0))] },
        ],
        linear_eqs: vec![],
        linear_ineqs: vec![],
    };
    let sol = solve_default(&sdp);
    assert!(!matches!(sol, Ok(ref s) if s.status.is_solved()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sdpa_round_trip_is_exact(entry in 0usize..3, k in 1usize..=3, seed in any::<u64>()) {
        let mut sdp = assemble(&builtin_corpus()[entry].problem, k).unwrap().sdp;
        // perturb values so that every digit matters
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut sdp.blocks {
            for (_, f) in &mut b.coeffs {
                for e in &mut f.entries {
                    e.2 *= 1.0 + rng.gen_range(-1e-3..1e-3);
                }
            }
        }
        sdp.objective_constant = rng.gen_range(-1.0..1.0);
        let text = export_sdpa(&sdp);
        let back = parse_sdpa(&text).unwrap();
        prop_assert_eq!(&back, &canonicalize(&sdp));
        prop_assert_eq!(export_sdpa(&back), text);
        for (x, y) in back.objective.iter().zip(&sdp.objective) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn planted_sdpa_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let p = planted(&mut rng);
        let back = parse_sdpa(&export_sdpa(&p.sdp)).unwrap();
        assert_eq!(back, canonicalize(&p.sdp));
    }
}

const CVXPY_ORACLE: &str = r#"
import sys
import numpy as np
import cvxpy as cp

lines = sys.stdin.read().splitlines()
const = 0.0
data = []
for ln in lines:
    if ln.startswith('"'):
        if ln.startswith('"objective constant:'):
            const = float(ln.split(':')[1])
        continue
    data.extend(ln.replace(',', ' ').replace('{', ' ').replace('}', ' ').split())
m = int(data[0]); nb = int(data[1])
sizes = [int(s) for s in data[2:2 + nb]]
c = np.array([float(s) for s in data[2 + nb:2 + nb + m]])
F = [[np.zeros((abs(n), abs(n))) for n in sizes] for _ in range(m + 1)]
rest = data[2 + nb + m:]
for t in range(0, len(rest), 5):
    i, b, r, s = (int(v) for v in rest[t:t + 4])
    v = float(rest[t + 4])
    F[i][b - 1][r - 1, s - 1] = v
    F[i][b - 1][s - 1, r - 1] = v
x = cp.Variable(m)
cons = []
for b, n in enumerate(sizes):
    expr = sum(x[i - 1] * F[i][b] for i in range(1, m + 1)) - F[0][b]
    if n < 0:
        cons.append(cp.diag(expr) >= 0)
    else:
        cons.append((expr + expr.T) / 2 >> 0)
prob = cp.Problem(cp.Minimize(c @ x), cons)
prob.solve(solver=cp.CLARABEL)
print(prob.value + const)
"#;

/// Solves the exported order-1 relaxation of the projector pair with cvxpy
/// and compares against the known value −3/4. Skipped without python3/cvxpy.
#[test]
fn exported_sdpa_solves_elsewhere() {
    let probe = Command::new("python3").args(["-c", "import cvxpy"]).output();
    if !matches!(probe, Ok(ref o) if o.status.success()) {
        eprintln!("python3 with cvxpy unavailable; skipping");
        return;
    }
    for k in 1..=2 {
        let rel = assemble(&builtin_corpus()[0].problem, k).unwrap();
        let mut child = Command::new("python3")
            .args(["-c", CVXPY_ORACLE])
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(export_sdpa(&rel.sdp).as_bytes()).unwrap();
        let out = child.wait_with_output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
        assert!((v + 0.75).abs() < 1e-5, "k={k}: {v}");
        let ours = solve_default(&rel.sdp).unwrap();
        assert!((ours.primal_obj - v).abs() < 1e-5);
    }
}

#[test]
fn dual_objective_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let p = planted(&mut rng);
        let sol = solve_default(&p.sdp).unwrap();
        let mut d = p.sdp.objective_constant;
        for (blk, z) in p.sdp.blocks.iter().zip(&sol.dual_blocks) {
            d -= blk.constant.to_dense(blk.size).component_mul(z).sum();
        }
        d += p.sdp.linear_eqs.iter().zip(&sol.dual_eq_multipliers).map(|(r, m)| r.rhs * m).sum::<f64>();
        d += p.sdp.linear_ineqs.iter().zip(&sol.dual_ineq_multipliers).map(|(r, m)| r.rhs * m).sum::<f64>();
        assert!((d - sol.dual_obj).abs() < 1e-7 * (1.0 + d.abs()), "{d} vs {}", sol.dual_obj);
        // dual feasibility: Σ tr(F_v Z) + Aᵀμ + Gᵀν = b
        let mut r = DVector::from_vec(p.sdp.objective.clone());
        for (blk, z) in p.sdp.blocks.iter().zip(&sol.dual_blocks) {
            for (v, f) in &blk.coeffs {
                r[*v] -= f.to_dense(blk.size).component_mul(z).sum();
            }
        }
        for (row, m) in p.sdp.linear_eqs.iter().zip(&sol.dual_eq_multipliers).chain(p.sdp.linear_ineqs.iter().zip(&sol.dual_ineq_multipliers)) {
            for &(v, c) in &row.coeffs {
                r[v] -= c * m;
            }
        }
        assert!(r.amax() < 1e-6, "{}", r.amax());
    }
}
