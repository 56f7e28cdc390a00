//! Runs the hierarchy over a range of orders and collects a report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certify::{
    commuting_eigen_extract, extract_optimizer, extract_sos, flatness_check, projector_realization, verify_optimizer,
    CertifyError, ExtractOptions, Optimizer, OptimizerCheck, ScalarPoint, SosOptions, DEFAULT_RANK_TOL,
};
use crate::relaxation::{assemble, NcProblem, Relaxation};
use crate::sdp::{solve, SdpSolution, SolveStatus, SolverOptions};

/// Tolerance on `p^k ≤ p^{k+1}` and `λ^k ≤ p^k` before a warning is issued.
pub const MONOTONICITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Defaults to the smallest admissible order.
    pub k_min: Option<usize>,
    pub k_max: usize,
    pub tol: f64,
    pub rank_tol: f64,
    pub certify: bool,
    pub extract: bool,
    pub stop_on_flat: bool,
    /// Rotates the extraction basis; `None` keeps the eigenvector basis.
    pub seed: Option<u64>,
    /// Orders solved concurrently; 1 is sequential.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            k_min: None,
            k_max: 2,
            tol: 1e-8,
            rank_tol: DEFAULT_RANK_TOL,
            certify: false,
            extract: false,
            stop_on_flat: false,
            seed: None,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub k: usize,
    pub status: Option<SolveStatus>,
    /// SDP values in the minimized sign convention.
    pub primal_obj: Option<f64>,
    pub dual_obj: Option<f64>,
    /// The relaxation value in the problem's own sense (negated for maximization).
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub flat: Option<bool>,
    pub rank_k: Option<usize>,
    pub rank_k_minus_d: Option<usize>,
    pub d: Option<usize>,
    pub iterations: Option<usize>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl OrderRecord {
    pub fn solved(&self) -> bool {
        self.status.is_some_and(SolveStatus::is_solved)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub k: usize,
    /// `flat-extension` or `projector`.
    pub method: String,
    pub dimension: usize,
    /// Row-major matrices keyed by letter name.
    pub matrices: BTreeMap<String, Vec<Vec<f64>>>,
    pub phi: Vec<f64>,
    pub objective_value: f64,
    pub moment_error: f64,
    pub residuals: OptimizerCheck,
    /// Joint eigenvalues when every letter commutes.
    pub points: Option<Vec<PointReport>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub coords: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub k: usize,
    pub lambda: f64,
    pub bound: f64,
    pub residual_norm: f64,
    pub squares: usize,
    pub localizing_terms: usize,
    pub kernel_terms: usize,
    pub expectation_terms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub maximize: bool,
    pub k_min: usize,
    pub k_max: usize,
    pub seed: Option<u64>,
    pub records: Vec<OrderRecord>,
    pub optimizer: Option<OptimizerReport>,
    pub certificate: Option<CertificateReport>,
    pub warnings: Vec<String>,
    pub total_seconds: f64,
}

impl RunReport {
    pub fn empty(problem: &NcProblem) -> Self {
        RunReport {
            problem: problem.name.clone(),
            maximize: problem.maximize,
            k_min: 0,
            k_max: 0,
            seed: None,
            records: Vec::new(),
            optimizer: None,
            certificate: None,
            warnings: Vec::new(),
            total_seconds: 0.0,
        }
    }

    /// True when at least one order ran and every order solved.
    pub fn all_solved(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(OrderRecord::solved)
    }

    /// The bound of the highest solved order.
    pub fn best_bound(&self) -> Option<f64> {
        self.records.iter().rev().find(|r| r.solved()).and_then(|r| r.bound)
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn timer() -> impl Fn() -> f64 {
    let t = std::time::Instant::now();
    move || t.elapsed().as_secs_f64()
}

// no monotonic clock on wasm32-unknown-unknown
#[cfg(target_arch = "wasm32")]
fn timer() -> impl Fn() -> f64 {
    || 0.0
}

struct Solved {
    record: OrderRecord,
    rel: Option<Relaxation>,
    sol: Option<SdpSolution>,
}

fn solve_order(problem: &NcProblem, k: usize, opts: &RunOptions) -> Solved {
    let elapsed = timer();
    let mut record = OrderRecord {
        k,
        status: None,
        primal_obj: None,
        dual_obj: None,
        bound: None,
        gap: None,
        flat: None,
        rank_k: None,
        rank_k_minus_d: None,
        d: None,
        iterations: None,
        seconds: 0.0,
        error: None,
    };
    let rel = match assemble(problem, k) {
        Ok(r) => r,
        Err(e) => {
            record.error = Some(e.to_string());
            record.seconds = elapsed();
            return Solved { record, rel: None, sol: None };
        }
    };
    let solver = SolverOptions { gap_tol: opts.tol, feas_tol: opts.tol, ..SolverOptions::default() };
    let sol = match solve(&rel.sdp, &solver) {
        Ok(s) => s,
        Err(e) => {
            record.error = Some(e.to_string());
            record.seconds = elapsed();
            return Solved { record, rel: Some(rel), sol: None };
        }
    };
    record.status = Some(sol.status);
    record.iterations = Some(sol.iterations);
    if sol.status.is_solved() {
        record.primal_obj = Some(sol.primal_obj);
        record.dual_obj = Some(sol.dual_obj);
        record.bound = Some(problem.reported(sol.primal_obj));
        record.gap = Some(sol.gap);
        match flatness_check(&rel, &sol.y, opts.rank_tol) {
            Ok(f) => {
                record.flat = Some(f.flat && f.detection_condition_ok);
                record.rank_k = Some(f.rank_k);
                record.rank_k_minus_d = Some(f.rank_k_minus_d);
                record.d = Some(f.d);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
    }
    record.seconds = elapsed();
    Solved { record, rel: Some(rel), sol: Some(sol) }
}

fn solve_orders(problem: &NcProblem, orders: &[usize], opts: &RunOptions) -> Vec<Solved> {
    let threads = opts.threads.clamp(1, orders.len().max(1));
    if threads == 1 {
        let mut out = Vec::new();
        for &k in orders {
            let s = solve_order(problem, k, opts);
            let stop = opts.stop_on_flat && s.record.flat == Some(true);
            out.push(s);
            if stop {
                break;
            }
        }
        return out;
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&k) = orders.get(i) else { break };
                let s = solve_order(problem, k, opts);
                results.lock().expect("no worker panics while holding the lock").push(s);
            });
        }
    });
    let mut out = results.into_inner().expect("workers joined");
    out.sort_by_key(|s| s.record.k);
    if opts.stop_on_flat {
        if let Some(i) = out.iter().position(|s| s.record.flat == Some(true)) {
            out.truncate(i + 1);
        }
    }
    out
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn optimizer_report(k: usize, method: &str, opt: &Optimizer, problem: &NcProblem, opts: &RunOptions) -> OptimizerReport {
    let a = &problem.alphabet;
    let matrices = a.letters().map(|l| (a.name(l).to_string(), matrix_rows(&opt.x[l as usize]))).collect();
    let all_commute = a.groups().is_some_and(|g| (0..g.len()).all(|i| (0..i).all(|j| g[i] != g[j])));
    let points = if all_commute {
        commuting_eigen_extract(opt, a, opts.seed.unwrap_or(0), 1e-6).ok().map(|ps: Vec<ScalarPoint>| {
            ps.into_iter().map(|p| PointReport { coords: p.coords, weight: p.weight }).collect()
        })
    } else {
        None
    };
    OptimizerReport {
        k,
        method: method.to_string(),
        dimension: opt.dim,
        matrices,
        phi: opt.phi.iter().copied().collect(),
        objective_value: problem.reported(opt.objective_value),
        moment_error: opt.moment_error,
        residuals: verify_optimizer(opt, problem, 1e-6),
        points,
    }
}

/// Solves orders `k_min..=k_max`; per-order failures are recorded, not fatal.
pub fn run(problem: &NcProblem, opts: &RunOptions) -> RunReport {
    let elapsed = timer();
    let k_min = opts.k_min.unwrap_or_else(|| problem.min_order()).max(1);
    let mut report = RunReport::empty(problem);
    report.k_min = k_min;
    report.k_max = opts.k_max;
    report.seed = opts.seed;
    let orders: Vec<usize> = (k_min..=opts.k_max).collect();
    let solved = solve_orders(problem, &orders, opts);

    let mut prev: Option<&OrderRecord> = None;
    for s in &solved {
        let r = &s.record;
        if let (Some(p), Some(d)) = (r.primal_obj, r.dual_obj) {
            if d > p + MONOTONICITY_TOL {
                report.warnings.push(format!("order {}: dual value {d} exceeds primal value {p}", r.k));
            }
            if let Some(q) = prev.and_then(|q| q.primal_obj.map(|v| (q.k, v))) {
                if q.1 > p + MONOTONICITY_TOL {
                    report.warnings.push(format!(
                        "solver accuracy: order {} value {} exceeds order {} value {}",
                        q.0, q.1, r.k, p
                    ));
                }
            }
            prev = Some(r);
        }
    }

    if opts.extract {
        match extract_first(&solved, opts) {
            Ok(o) => report.optimizer = o,
            Err(e) => report.warnings.push(format!("extraction: {e}")),
        }
        if report.optimizer.is_none() && !report.warnings.iter().any(|w| w.starts_with("extraction")) {
            report.warnings.push("extraction: no flat order".to_string());
        }
    }

    if opts.certify {
        if let Some(s) = solved.iter().rev().find(|s| s.record.solved()) {
            let (rel, sol) = (s.rel.as_ref().expect("solved"), s.sol.as_ref().expect("solved"));
            match extract_sos(rel, sol, &SosOptions::default()) {
                Ok(c) => {
                    report.certificate = Some(CertificateReport {
                        k: s.record.k,
                        lambda: c.lambda,
                        bound: problem.reported(c.lambda),
                        residual_norm: c.residual_norm,
                        squares: c.squares.len(),
                        localizing_terms: c.localizing.iter().map(|(_, cs)| cs.len()).sum(),
                        kernel_terms: c.kernel.iter().filter(|(_, f)| !f.is_zero()).count(),
                        expectation_terms: c.expectation.iter().filter(|(_, g)| *g != 0.0).count(),
                    })
                }
                Err(e) => report.warnings.push(format!("certificate at order {}: {e}", s.record.k)),
            }
        }
    }

    report.records = solved.into_iter().map(|s| s.record).collect();
    report.total_seconds = elapsed();
    report
}

fn extract_first(solved: &[Solved], opts: &RunOptions) -> Result<Option<OptimizerReport>, CertifyError> {
    let xopts = ExtractOptions { rank_tol: opts.rank_tol, seed: opts.seed, ..ExtractOptions::default() };
    for s in solved.iter().filter(|s| s.record.flat == Some(true)) {
        let (rel, sol) = (s.rel.as_ref().expect("flat implies solved"), s.sol.as_ref().expect("flat implies solved"));
        match extract_optimizer(rel, &sol.y, &xopts) {
            Ok(opt) => return Ok(Some(optimizer_report(s.record.k, "flat-extension", &opt, &rel.problem, opts))),
            Err(CertifyError::DegreeZero) => {
                // projector-only problems: order-1 realization, kept only if it verifies
                let Some(first) = solved.iter().find(|s| s.record.k == 1 && s.record.solved()) else { continue };
                let rel1 = first.rel.as_ref().expect("solved");
                let opt = projector_realization(rel1, &first.sol.as_ref().expect("solved").y, opts.rank_tol)?;
                let rep = optimizer_report(1, "projector", &opt, &rel1.problem, opts);
                if rep.residuals.passed {
                    return Ok(Some(rep));
                }
                return Err(CertifyError::DegreeZero);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64"), 12);
            *v = serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// JSON with numbers rounded to 12 significant digits, or an aligned table.
pub fn emit_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_value(report).expect("report serializes");
            round_value(&mut v);
            serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
        }
        ReportFormat::Table => table(report),
    }
}

fn fmt_opt<T: std::fmt::Display>(x: Option<T>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn fmt_f(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.9}"))
}

fn table(report: &RunReport) -> String {
    let header = ["k", "status", "bound", "primal", "dual", "gap", "flat", "ranks", "iter", "seconds"];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &report.records {
        let status = match (&r.status, &r.error) {
            (_, Some(e)) if r.status.is_none() => format!("error: {e}"),
            (Some(s), _) => serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            _ => "-".to_string(),
        };
        let ranks = match (r.rank_k, r.rank_k_minus_d) {
            (Some(a), Some(b)) => format!("{a}/{b}"),
            _ => "-".to_string(),
        };
        rows.push(vec![
            r.k.to_string(),
            status,
            fmt_f(r.bound),
            fmt_f(r.primal_obj),
            fmt_f(r.dual_obj),
            r.gap.map_or_else(|| "-".to_string(), |g| format!("{g:.1e}")),
            fmt_opt(r.flat),
            ranks,
            fmt_opt(r.iterations),
            format!("{:.3}", r.seconds),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    if let Some(o) = &report.optimizer {
        let _ = writeln!(
            out,
            "optimizer: order {}, {}, dimension {}, moment error {:.1e}, verified {}",
            o.k, o.method, o.dimension, o.moment_error, o.residuals.passed
        );
        for p in o.points.iter().flatten() {
            let _ = writeln!(out, "  point {:?} weight {:.6}", p.coords, p.weight);
        }
    }
    if let Some(c) = &report.certificate {
        let _ = writeln!(
            out,
            "certificate: order {}, bound {:.9}, residual {:.1e}, {} squares, {} localizing, {} kernel, {} expectation",
            c.k, c.bound, c.residual_norm, c.squares, c.localizing_terms, c.kernel_terms, c.expectation_terms
        );
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::builtin_corpus;

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.1 + 0.2, 12), 0.3);
        assert_eq!(round_sig(-2.0f64.sqrt(), 12), -1.41421356237);
        assert_eq!(round_sig(1.0 / 3.0 * 1e-20, 12), 3.33333333333e-21);
    }

    #[test]
    fn corpus_run_and_json_round_trip() {
        let entry = &builtin_corpus()[0];
        let opts = RunOptions { extract: true, certify: true, ..RunOptions::default() };
        let report = run(&entry.problem, &opts);
        assert_eq!(report.records.len(), 2);
        for r in &report.records {
            assert!((r.bound.unwrap() + 0.75).abs() < 1e-6);
        }
        assert_eq!(report.records[1].flat, Some(true));
        assert_eq!(report.optimizer.as_ref().unwrap().dimension, 2);
        let json = emit_report(&report, ReportFormat::Json);
        assert!(json.contains("\"flat\": true") && json.contains("\"dimension\": 2"));
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(emit_report(&back, ReportFormat::Json), json);
        let table = emit_report(&report, ReportFormat::Table);
        assert_eq!(table.lines().take_while(|l| !l.starts_with("optimizer")).count(), 3);
    }

    #[test]
    fn empty_run() {
        let entry = &builtin_corpus()[0];
        let report = run(&entry.problem, &RunOptions { k_min: Some(3), k_max: 2, ..RunOptions::default() });
        assert!(report.records.is_empty() && !report.all_solved());
        let json = emit_report(&report, ReportFormat::Json);
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["records"], Value::Array(vec![]));
    }

    #[test]
    fn parallel_matches_sequential() {
        let entry = &builtin_corpus()[2];
        let seq = run(&entry.problem, &RunOptions { k_max: 3, ..RunOptions::default() });
        let par = run(&entry.problem, &RunOptions { k_max: 3, threads: 3, ..RunOptions::default() });
        let ks: Vec<usize> = par.records.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![1, 2, 3]);
        for (a, b) in seq.records.iter().zip(&par.records) {
            assert_eq!(a.primal_obj, b.primal_obj);
        }
    }
}
