//! CPLEX LP text export of a big-M instance, plus a reader for the subset
//! of the format this module writes.
//!
//! Layout (variables `x0..`, `z0..`, and `u0..` when tightening is on):
//!
//! ```text
//! \ comments: dimensions, big-M, objective constant ½yᵀy
//! Minimize
//!  obj: -c0 x0 - ... + [ g00 x0 ^2 + 2 g01 x0 * x1 + ... ] / 2
//! Subject To
//!  card: z0 + ... <= T
//!  bigm_up_i: xi - M zi <= 0
//!  bigm_lo_i: xi + M zi >= 0
//!  abs_pos_i: ui - xi >= 0          (tightening)
//!  abs_neg_i: ui + xi >= 0          (tightening)
//!  l1: u0 + ... <= T*M              (tightening)
//! Bounds
//!  xi free | -M <= xi <= M
//! Binaries
//!  z0 ...
//! End
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::MiqpProblem;
use crate::error::{Error, Result};

const TERMS_PER_LINE: usize = 6;

fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

struct Expr {
    out: String,
    terms: usize,
}

impl Expr {
    fn new(prefix: &str) -> Self {
        Self {
            out: format!(" {prefix}"),
            terms: 0,
        }
    }

    fn push(&mut self, coef: f64, var: &str) {
        if self.terms > 0 && self.terms % TERMS_PER_LINE == 0 {
            self.out.push_str("\n   ");
        }
        let sign = if coef < 0.0 { '-' } else { '+' };
        if self.terms == 0 && sign == '+' {
            let _ = write!(self.out, " {} {var}", num(coef.abs()));
        } else {
            let _ = write!(self.out, " {sign} {} {var}", num(coef.abs()));
        }
        self.terms += 1;
    }

    fn raw(&mut self, s: &str) {
        self.out.push_str(s);
    }
}

/// Writes `problem` as an LP document; `with_tightening` adds the ℓ1/ℓ∞ rows.
pub fn export_lp(problem: &MiqpProblem, with_tightening: bool) -> String {
    let dict = problem.dictionary();
    let p = problem.atom_count();
    let m = problem.big_m();
    let t = problem.budget();
    let gram = dict.gram();
    let lin = dict.atoms().tr_mul(problem.y());
    let constant = 0.5 * problem.y().norm_squared();

    let mut doc = String::new();
    let _ = writeln!(doc, "\\ l0 sparse coding, big-M formulation");
    let _ = writeln!(doc, "\\ n = {} p = {p} T = {t} M = {}", dict.signal_dim(), num(m));
    let _ = writeln!(doc, "\\ objective constant 0.5*y'y = {} (not included below)", num(constant));
    let _ = writeln!(doc, "\\ tightening = {}", if with_tightening { "on" } else { "off" });
    doc.push_str("Minimize\n");

    let mut obj = Expr::new("obj:");
    for i in 0..p {
        if lin[i] != 0.0 {
            obj.push(-lin[i], &format!("x{i}"));
        }
    }
    let mut quad = Vec::new();
    for i in 0..p {
        for j in i..p {
            let g = gram[(i, j)];
            if g == 0.0 {
                continue;
            }
            if i == j {
                quad.push((g, format!("x{i} ^2")));
            } else {
                quad.push((2.0 * g, format!("x{i} * x{j}")));
            }
        }
    }
    if !quad.is_empty() {
        obj.raw(" + [");
        let terms_before = obj.terms;
        obj.terms = 0;
        for (c, v) in &quad {
            obj.push(*c, v);
        }
        obj.terms += terms_before;
        obj.raw(" ] / 2");
    }
    if obj.terms == 0 {
        obj.raw(" 0 x0");
    }
    doc.push_str(&obj.out);
    doc.push('\n');

    doc.push_str("Subject To\n");
    let mut card = Expr::new("card:");
    for i in 0..p {
        card.push(1.0, &format!("z{i}"));
    }
    let _ = writeln!(doc, "{} <= {t}", card.out);
    for i in 0..p {
        let _ = writeln!(doc, " bigm_up_{i}: x{i} - {} z{i} <= 0", num(m));
        let _ = writeln!(doc, " bigm_lo_{i}: x{i} + {} z{i} >= 0", num(m));
    }
    if with_tightening {
        for i in 0..p {
            let _ = writeln!(doc, " abs_pos_{i}: u{i} - x{i} >= 0");
            let _ = writeln!(doc, " abs_neg_{i}: u{i} + x{i} >= 0");
        }
        let mut l1 = Expr::new("l1:");
        for i in 0..p {
            l1.push(1.0, &format!("u{i}"));
        }
        let _ = writeln!(doc, "{} <= {}", l1.out, num(t as f64 * m));
    }

    doc.push_str("Bounds\n");
    for i in 0..p {
        if with_tightening {
            let _ = writeln!(doc, " -{} <= x{i} <= {}", num(m), num(m));
        } else {
            let _ = writeln!(doc, " x{i} free");
        }
    }
    if with_tightening {
        for i in 0..p {
            let _ = writeln!(doc, " 0 <= u{i} <= {}", num(m));
        }
    }
    doc.push_str("Binaries\n");
    let mut bins = String::new();
    for i in 0..p {
        if i > 0 && i % 16 == 0 {
            bins.push('\n');
        }
        let _ = write!(bins, " z{i}");
    }
    doc.push_str(&bins);
    doc.push_str("\nEnd\n");
    doc
}

/// Problem data recovered by [`read_lp`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpInstance {
    /// `DᵀD`.
    pub gram: DMatrix<f64>,
    /// `Dᵀy`.
    pub correlation: DVector<f64>,
    pub budget: usize,
    pub big_m: f64,
    pub tightening: bool,
    pub binaries: usize,
    pub big_m_rows: usize,
    pub cardinality_rows: usize,
    pub abs_rows: usize,
    pub l1_rows: usize,
    pub aux_variables: usize,
}

#[derive(PartialEq)]
enum Section {
    Preamble,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    End,
}

fn var_index(name: &str, prefix: char) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

fn parse_num(tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("bad number {tok:?} in LP document")))
}

/// Reads back a document produced by [`export_lp`].
pub fn read_lp(text: &str) -> Result<LpInstance> {
    let mut section = Section::Preamble;
    let mut objective = String::new();
    let mut rows: Vec<String> = Vec::new();
    let mut binaries = 0usize;
    let mut max_var = 0usize;
    let mut aux = std::collections::BTreeSet::new();

    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('\\') || trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "Minimize" => {
                section = Section::Objective;
                continue;
            }
            "Subject To" => {
                section = Section::Constraints;
                continue;
            }
            "Bounds" => {
                section = Section::Bounds;
                continue;
            }
            "Binaries" => {
                section = Section::Binaries;
                continue;
            }
            "End" => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {
                objective.push(' ');
                objective.push_str(trimmed);
            }
            Section::Constraints => {
                if trimmed.contains(':') {
                    rows.push(trimmed.to_string());
                } else if let Some(last) = rows.last_mut() {
                    last.push(' ');
                    last.push_str(trimmed);
                }
            }
            Section::Binaries => {
                for tok in trimmed.split_whitespace() {
                    let i = var_index(tok, 'z')
                        .ok_or_else(|| Error::InvalidArgument(format!("unexpected binary {tok}")))?;
                    max_var = max_var.max(i + 1);
                    binaries += 1;
                }
            }
            Section::Bounds | Section::Preamble | Section::End => {}
        }
    }
    if section != Section::End {
        return Err(Error::InvalidArgument("LP document lacks End".into()));
    }
    let p = max_var;
    let mut gram = DMatrix::zeros(p, p);
    let mut correlation = DVector::zeros(p);

    // Objective: linear part, then "[ ... ] / 2".
    let body = objective
        .trim()
        .strip_prefix("obj:")
        .ok_or_else(|| Error::InvalidArgument("objective row must be named obj".into()))?;
    let (linear, quadratic) = match body.find('[') {
        Some(pos) => {
            let end = body
                .rfind(']')
                .ok_or_else(|| Error::InvalidArgument("unterminated quadratic block".into()))?;
            (&body[..pos], Some(&body[pos + 1..end]))
        }
        None => (body, None),
    };
    let mut toks = linear.split_whitespace().peekable();
    let mut sign = 1.0;
    while let Some(tok) = toks.next() {
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => {
                let coef = sign * parse_num(tok)?;
                let var = toks
                    .next()
                    .ok_or_else(|| Error::InvalidArgument("dangling coefficient".into()))?;
                if let Some(i) = var_index(var, 'x') {
                    if i < p {
                        correlation[i] = -coef;
                    }
                }
                sign = 1.0;
            }
        }
    }
    if let Some(q) = quadratic {
        let toks: Vec<&str> = q.split_whitespace().collect();
        let mut k = 0;
        let mut sign = 1.0;
        while k < toks.len() {
            match toks[k] {
                "+" => {
                    sign = 1.0;
                    k += 1;
                }
                "-" => {
                    sign = -1.0;
                    k += 1;
                }
                tok => {
                    let coef = sign * parse_num(tok)?;
                    let a = toks.get(k + 1).and_then(|v| var_index(v, 'x'));
                    let op = toks.get(k + 2).copied();
                    let a = a.ok_or_else(|| Error::InvalidArgument("bad quadratic term".into()))?;
                    match op {
                        Some("^2") => {
                            gram[(a, a)] = coef;
                            k += 3;
                        }
                        Some("*") => {
                            let b = toks
                                .get(k + 3)
                                .and_then(|v| var_index(v, 'x'))
                                .ok_or_else(|| Error::InvalidArgument("bad product term".into()))?;
                            gram[(a, b)] = coef / 2.0;
                            gram[(b, a)] = coef / 2.0;
                            k += 4;
                        }
                        _ => return Err(Error::InvalidArgument("bad quadratic operator".into())),
                    }
                    sign = 1.0;
                }
            }
        }
    }

    let mut budget = None;
    let mut big_m = None;
    let mut l1_rhs = None;
    let (mut big_m_rows, mut cardinality_rows, mut abs_rows, mut l1_rows) = (0, 0, 0, 0);
    for row in &rows {
        let (name, expr) = row
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("unnamed row {row}")))?;
        let name = name.trim();
        let rhs = expr
            .split_whitespace()
            .last()
            .ok_or_else(|| Error::InvalidArgument(format!("empty row {name}")))?;
        if name == "card" {
            cardinality_rows += 1;
            budget = Some(parse_num(rhs)? as usize);
        } else if name.starts_with("bigm_") {
            big_m_rows += 1;
            let toks: Vec<&str> = expr.split_whitespace().collect();
            // "xi - M zi <= 0" / "xi + M zi >= 0"
            if toks.len() >= 3 {
                big_m.get_or_insert(parse_num(toks[2])?);
            }
        } else if name.starts_with("abs_") {
            abs_rows += 1;
            for tok in expr.split_whitespace() {
                if let Some(i) = var_index(tok, 'u') {
                    aux.insert(i);
                }
            }
        } else if name == "l1" {
            l1_rows += 1;
            l1_rhs = Some(parse_num(rhs)?);
        }
    }
    let budget = budget.ok_or_else(|| Error::InvalidArgument("missing cardinality row".into()))?;
    let big_m = big_m.ok_or_else(|| Error::InvalidArgument("missing big-M rows".into()))?;
    if let Some(r) = l1_rhs {
        let expected = budget as f64 * big_m;
        if (r - expected).abs() > 1e-12 * expected.max(1.0) {
            return Err(Error::InvalidArgument(format!("l1 row rhs {r} differs from T*M = {expected}")));
        }
    }
    Ok(LpInstance {
        gram,
        correlation,
        budget,
        big_m,
        tightening: l1_rows > 0,
        binaries,
        big_m_rows,
        cardinality_rows,
        abs_rows,
        l1_rows,
        aux_variables: aux.len(),
    })
}
