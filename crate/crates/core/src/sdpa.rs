//! SDPA sparse (`.dat-s`) export and import.
//!
//! SDPA's primal form is `min cᵀx` s.t. `Σ F_i x_i − F_0 ⪰ 0`, so an LMI
//! block `C + Σ y_v F_v` is written with `F_0 = −C`. Scalar rows share one
//! diagonal block: an equality `a·y = r` becomes the pair `a·y − r ≥ 0`,
//! `−a·y + r ≥ 0`, and an inequality `g·y ≥ r` a single entry.
//!
//! Comment lines (leading `"`) record block labels, the split of the diagonal
//! block into equality pairs and inequalities, and the objective constant, so
//! that files written here parse back to the identical problem. Files without
//! those comments are read with every diagonal entry as an inequality.

use std::fmt::Write as _;

use thiserror::Error;

use crate::sdp::{LinearRow, LmiBlock, SdpProblem, SymSparse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpaError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unexpected end of input: {0}")]
    Truncated(String),
}

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 {
        "0".to_string()
    } else if (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn export_sdpa(sdp: &SdpProblem) -> String {
    let mut out = String::new();
    let n_eq = sdp.linear_eqs.len();
    let n_ineq = sdp.linear_ineqs.len();
    let diag = 2 * n_eq + n_ineq;
    let _ = writeln!(out, "\"ncpoly SDP: minimize c'x s.t. sum_i F_i x_i - F_0 psd");
    for (i, b) in sdp.blocks.iter().enumerate() {
        let _ = writeln!(out, "\"block {}: {}", i + 1, b.label);
    }
    if diag > 0 {
        let _ = writeln!(out, "\"scalar block: {n_eq} equality pairs, {n_ineq} inequalities");
    }
    if sdp.objective_constant != 0.0 {
        let _ = writeln!(out, "\"objective constant: {}", num(sdp.objective_constant));
    }
    let _ = writeln!(out, "{}", sdp.num_vars);
    let nblocks = sdp.blocks.len() + usize::from(diag > 0);
    let _ = writeln!(out, "{nblocks}");
    let mut sizes: Vec<String> = sdp.blocks.iter().map(|b| b.size.to_string()).collect();
    if diag > 0 {
        sizes.push(format!("-{diag}"));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));
    let obj: Vec<String> = sdp.objective.iter().map(|&c| num(c)).collect();
    let _ = writeln!(out, "{}", obj.join(" "));

    // entries keyed by (matrix, block, i, j) so the listing is sorted
    let mut lines: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (bi, b) in sdp.blocks.iter().enumerate() {
        for &(i, j, v) in &b.constant.entries {
            lines.push((0, bi + 1, i + 1, j + 1, -v));
        }
        for (var, f) in &b.coeffs {
            for &(i, j, v) in &f.entries {
                lines.push((var + 1, bi + 1, i + 1, j + 1, v));
            }
        }
    }
    let db = sdp.blocks.len() + 1;
    let mut pos = 1;
    for row in &sdp.linear_eqs {
        for (sign, p) in [(1.0, pos), (-1.0, pos + 1)] {
            if row.rhs != 0.0 {
                lines.push((0, db, p, p, sign * row.rhs));
            }
            for &(v, c) in &row.coeffs {
                lines.push((v + 1, db, p, p, sign * c));
            }
        }
        pos += 2;
    }
    for row in &sdp.linear_ineqs {
        if row.rhs != 0.0 {
            lines.push((0, db, pos, pos, row.rhs));
        }
        for &(v, c) in &row.coeffs {
            lines.push((v + 1, db, pos, pos, c));
        }
        pos += 1;
    }
    lines.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    for (m, b, i, j, v) in lines {
        if v != 0.0 {
            let _ = writeln!(out, "{m} {b} {i} {j} {}", num(v));
        }
    }
    out
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || matches!(c, ',' | '{' | '}' | '(' | ')'))
        .filter(|t| !t.is_empty())
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, SdpaError> {
    tok.parse()
        .map_err(|_| SdpaError::Syntax { line, msg: format!("cannot parse number {tok:?}") })
}

/// Parses SDPA sparse text back into an [`SdpProblem`].
pub fn parse_sdpa(text: &str) -> Result<SdpProblem, SdpaError> {
    let mut labels: Vec<(usize, String)> = Vec::new();
    let mut split: Option<(usize, usize)> = None;
    let mut constant = 0.0;
    let mut data: Vec<(usize, String)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let t = raw.trim();
        if let Some(c) = t.strip_prefix('"') {
            if let Some(rest) = c.strip_prefix("block ") {
                if let Some((idx, label)) = rest.split_once(": ") {
                    if let Ok(i) = idx.parse::<usize>() {
                        labels.push((i, label.to_string()));
                    }
                }
            } else if let Some(rest) = c.strip_prefix("scalar block: ") {
                let nums: Vec<usize> = rest.split(|c: char| !c.is_ascii_digit()).filter_map(|s| s.parse().ok()).collect();
                if let [e, i] = nums[..] {
                    split = Some((e, i));
                }
            } else if let Some(rest) = c.strip_prefix("objective constant: ") {
                constant = parse_num(rest.trim(), line)?;
            }
            continue;
        }
        if t.is_empty() || t.starts_with('*') {
            continue;
        }
        data.push((line, t.to_string()));
    }
    let mut it = data.into_iter();
    let mut next = |what: &str| it.next().ok_or_else(|| SdpaError::Truncated(what.to_string()));

    let (l, t) = next("variable count")?;
    let num_vars: usize = parse_num(tokens(&t).next().unwrap_or(""), l)?;
    let (l, t) = next("block count")?;
    let nblocks: usize = parse_num(tokens(&t).next().unwrap_or(""), l)?;
    let (l, t) = next("block sizes")?;
    let sizes: Vec<i64> = tokens(&t).take(nblocks).map(|s| parse_num(s, l)).collect::<Result<_, _>>()?;
    if sizes.len() != nblocks {
        return Err(SdpaError::Syntax { line: l, msg: format!("expected {nblocks} block sizes") });
    }
    let mut objective = Vec::with_capacity(num_vars);
    while objective.len() < num_vars {
        let (l, t) = next("objective vector")?;
        for s in tokens(&t) {
            if objective.len() < num_vars {
                objective.push(parse_num::<f64>(s, l)?);
            }
        }
    }

    let mut blocks: Vec<LmiBlock> = Vec::new();
    let mut block_of: Vec<Option<usize>> = Vec::new();
    let mut diag_block: Option<(usize, usize)> = None;
    for (bi, &s) in sizes.iter().enumerate() {
        if s < 0 && diag_block.is_none() {
            diag_block = Some((bi, (-s) as usize));
            block_of.push(None);
        } else {
            let label = labels
                .iter()
                .find(|(i, _)| *i == blocks.len() + 1)
                .map(|(_, l)| l.clone())
                .unwrap_or_else(|| format!("block {}", bi + 1));
            block_of.push(Some(blocks.len()));
            blocks.push(LmiBlock { label, size: s.unsigned_abs() as usize, constant: SymSparse::default(), coeffs: Vec::new() });
        }
    }
    let diag_len = diag_block.map(|d| d.1).unwrap_or(0);
    // per diagonal position: (constant in F_0, coefficients)
    let mut diag: Vec<(f64, Vec<(usize, f64)>)> = vec![(0.0, Vec::new()); diag_len];

    for (l, t) in it {
        let tk: Vec<&str> = tokens(&t).collect();
        if tk.len() < 5 {
            return Err(SdpaError::Syntax { line: l, msg: "expected `matrix block row col value`".into() });
        }
        let m: usize = parse_num(tk[0], l)?;
        let b: usize = parse_num(tk[1], l)?;
        let i: usize = parse_num(tk[2], l)?;
        let j: usize = parse_num(tk[3], l)?;
        let v: f64 = parse_num(tk[4], l)?;
        if b == 0 || b > nblocks || i == 0 || j == 0 || m > num_vars {
            return Err(SdpaError::Syntax { line: l, msg: "index out of range".into() });
        }
        let (i, j) = (i.min(j) - 1, i.max(j) - 1);
        match block_of[b - 1] {
            Some(k) => {
                let blk = &mut blocks[k];
                if j >= blk.size {
                    return Err(SdpaError::Syntax { line: l, msg: "entry outside block".into() });
                }
                if m == 0 {
                    blk.constant.entries.push((i, j, -v));
                } else {
                    match blk.coeffs.iter_mut().find(|(var, _)| *var == m - 1) {
                        Some((_, f)) => f.entries.push((i, j, v)),
                        None => blk.coeffs.push((m - 1, SymSparse { entries: vec![(i, j, v)] })),
                    }
                }
            }
            None => {
                if i != j || i >= diag_len {
                    return Err(SdpaError::Syntax { line: l, msg: "off-diagonal entry in diagonal block".into() });
                }
                if m == 0 {
                    diag[i].0 += v;
                } else {
                    diag[i].1.push((m - 1, v));
                }
            }
        }
    }
    for b in &mut blocks {
        b.coeffs.sort_by_key(|c| c.0);
        b.constant.entries.sort_by_key(|e| (e.0, e.1));
        for (_, f) in &mut b.coeffs {
            f.entries.sort_by_key(|e| (e.0, e.1));
        }
    }
    for d in &mut diag {
        d.1.sort_by_key(|c| c.0);
    }
    let (n_eq, _) = split.unwrap_or((0, diag_len));
    if 2 * n_eq > diag_len {
        return Err(SdpaError::Syntax { line: 0, msg: "scalar block comment disagrees with block size".into() });
    }
    let linear_eqs =
        (0..n_eq).map(|k| LinearRow { coeffs: diag[2 * k].1.clone(), rhs: diag[2 * k].0 }).collect();
    let linear_ineqs = diag[2 * n_eq..].iter().map(|(c, row)| LinearRow { coeffs: row.clone(), rhs: *c }).collect();
    Ok(SdpProblem { num_vars, objective, objective_constant: constant, blocks, linear_eqs, linear_ineqs })
}

/// Sorts every entry list so that problems can be compared structurally.
pub fn canonicalize(sdp: &SdpProblem) -> SdpProblem {
    let mut out = sdp.clone();
    for b in &mut out.blocks {
        b.coeffs.retain(|(_, f)| !f.is_empty());
        b.coeffs.sort_by_key(|c| c.0);
        b.constant.entries.retain(|e| e.2 != 0.0);
        b.constant.entries.sort_by_key(|e| (e.0, e.1));
        for (_, f) in &mut b.coeffs {
            f.entries.sort_by_key(|e| (e.0, e.1));
        }
    }
    for r in out.linear_eqs.iter_mut().chain(out.linear_ineqs.iter_mut()) {
        r.coeffs.retain(|c| c.1 != 0.0);
        r.coeffs.sort_by_key(|c| c.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SdpProblem {
        SdpProblem {
            num_vars: 2,
            objective: vec![0.0, 1.0],
            objective_constant: 0.25,
            blocks: vec![LmiBlock {
                label: "m".into(),
                size: 2,
                constant: SymSparse { entries: vec![(0, 0, 0.1)] },
                coeffs: vec![
                    (0, SymSparse { entries: vec![(0, 0, 1.0), (1, 1, 1.0)] }),
                    (1, SymSparse { entries: vec![(0, 1, 1.0 / 3.0)] }),
                ],
            }],
            linear_eqs: vec![LinearRow { coeffs: vec![(0, 1.0)], rhs: 1.0 }],
            linear_ineqs: vec![LinearRow { coeffs: vec![(1, -1e-20)], rhs: -2.5 }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let p = tiny();
        let text = export_sdpa(&p);
        let q = parse_sdpa(&text).unwrap();
        assert_eq!(canonicalize(&p), q);
    }

    #[test]
    fn header_layout() {
        let text = export_sdpa(&tiny());
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('"')).collect();
        assert_eq!(data[0], "2");
        assert_eq!(data[1], "2");
        assert_eq!(data[2], "2 -3");
        assert_eq!(data[3], "0 1");
        assert!(data.contains(&"0 1 1 1 -0.1"));
        assert!(data.contains(&"0 2 1 1 1"));
        assert!(data.contains(&"1 2 2 2 -1"));
    }

    #[test]
    fn plain_file_reads_diagonal_as_inequalities() {
        let text = "2\n2\n2 -1\n1 1\n0 1 1 1 -1\n1 1 1 2 0.5\n2 2 1 1 1\n";
        let p = parse_sdpa(text).unwrap();
        assert_eq!(p.linear_eqs.len(), 0);
        assert_eq!(p.linear_ineqs.len(), 1);
        assert_eq!(p.blocks[0].constant.entries, vec![(0, 0, 1.0)]);
    }

    #[test]
    fn malformed_input() {
        assert!(parse_sdpa("1\n1\n").is_err());
        assert!(parse_sdpa("1\n1\n2\n1\n1 1 3 3 1\n").is_err());
    }
}
