//! Plain-text dictionary files: a `rows cols` line, then one matrix row per line.

use std::fmt::Write as _;

use l0dict_core::model::Dictionary;
use nalgebra::DMatrix;

pub fn format_dictionary(dict: &Dictionary) -> String {
    let a = dict.atoms();
    let mut out = format!("{} {}\n", a.nrows(), a.ncols());
    for r in 0..a.nrows() {
        let line: Vec<String> = a.row(r).iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_dictionary(text: &str) -> Result<Dictionary, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or("empty dictionary file")?;
    let dims: Vec<usize> = head
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format!("bad dimension {t:?}")))
        .collect::<Result<_, _>>()?;
    let [n, p] = dims[..] else {
        return Err("first line must be `rows cols`".into());
    };
    let mut values = Vec::with_capacity(n * p);
    for line in lines {
        for t in line.split_whitespace() {
            values.push(t.parse::<f64>().map_err(|_| format!("bad entry {t:?}"))?);
        }
    }
    if values.len() != n * p {
        return Err(format!("expected {} entries, found {}", n * p, values.len()));
    }
    Dictionary::new(DMatrix::from_row_slice(n, p, &values)).map_err(|e| e.to_string())
}
