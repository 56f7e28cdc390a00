//! Browser bindings: solve a problem file, reduce an expression to normal
//! form, export a relaxation in SDPA format.

use ncpoly::format::{format_polynomial, parse_expr, parse_file, parse_problem};
use ncpoly::relaxation::assemble;
use ncpoly::report::{emit_report, run, ReportFormat, RunOptions};
use wasm_bindgen::prelude::*;

/// Largest order accepted from the page; higher orders block the tab.
pub const MAX_ORDER: usize = 4;

pub fn solve_text(text: &str, order: usize, extract: bool, certify: bool, table: bool) -> Result<String, String> {
    if order > MAX_ORDER {
        return Err(format!("order {order} is above the demo limit {MAX_ORDER}"));
    }
    let problem = parse_problem(text).map_err(|e| e.to_string())?;
    let opts = RunOptions { k_max: order, extract, certify, ..RunOptions::default() };
    let report = run(&problem, &opts);
    Ok(emit_report(&report, if table { ReportFormat::Table } else { ReportFormat::Json }))
}

/// Normal form of `expr` under the declarations (and rules) of `decls`.
pub fn normal_form_text(decls: &str, expr: &str) -> Result<String, String> {
    let f = parse_file(decls).map_err(|e| e.to_string())?;
    let p = parse_expr(expr, &f.alphabet, 1, 1).map_err(|e| e.to_string())?;
    let r = f.rules.reduce_poly(&p).map_err(|e| e.to_string())?;
    Ok(format_polynomial(&r, &f.alphabet))
}

pub fn sdpa_text(text: &str, order: usize) -> Result<String, String> {
    if order > MAX_ORDER {
        return Err(format!("order {order} is above the demo limit {MAX_ORDER}"));
    }
    let problem = parse_problem(text).map_err(|e| e.to_string())?;
    let rel = assemble(&problem, order).map_err(|e| e.to_string())?;
    Ok(ncpoly::sdpa::export_sdpa(&rel.sdp))
}

#[wasm_bindgen]
pub fn solve(text: &str, order: usize, extract: bool, certify: bool, table: bool) -> Result<String, JsError> {
    solve_text(text, order, extract, certify, table).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn normal_form(decls: &str, expr: &str) -> Result<String, JsError> {
    normal_form_text(decls, expr).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn export_sdpa(text: &str, order: usize) -> Result<String, JsError> {
    sdpa_text(text, order).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIR: &str = "vars x1 x2\nrule x1^2 = x1\nobj x1*x2 + x2*x1\nconstraint -x2^2 + x2 + 1/2 >= 0\n";

    #[test]
    fn solves() {
        let out = solve_text(PAIR, 2, true, false, false).unwrap();
        assert!(out.contains("\"dimension\": 2"));
        assert!(solve_text(PAIR, 9, false, false, false).is_err());
        assert!(solve_text("vars x\nobj y\n", 1, false, false, false).unwrap_err().contains("line 2"));
    }

    #[test]
    fn normal_forms() {
        assert_eq!(normal_form_text("vars x1 x2\nrule x1^2 = x1\n", "x1^3*x2 - x1*x2").unwrap(), "0");
        assert_eq!(normal_form_text("vars a adjoint\nfermionic a\n", "a*a'").unwrap(), "1 - a'*a");
    }

    #[test]
    fn exports() {
        let s = sdpa_text(PAIR, 1).unwrap();
        assert!(ncpoly::sdpa::parse_sdpa(&s).is_ok());
    }
}
