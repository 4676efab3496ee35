//! Results tables and the cross-method comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("results table is empty or has no completed runs")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate result for image {image}, method {method}, sigma {sigma}")]
    Duplicate { image: String, method: String, sigma: String },
    #[error("inconsistent runs: {0}")]
    Inconsistent(String),
}

pub const HEADER: &str = "image\tmethod\tsigma\tpsnr_noisy\tpsnr_average\tpsnr_weighted\tstatus";

/// One (image, method, sigma) run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub image: String,
    pub method: String,
    pub sigma: f64,
    /// NaN when unknown.
    pub psnr_noisy: f64,
    pub psnr_average: f64,
    pub psnr_weighted: f64,
    /// `ok`, or a failure description.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn format_db(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn parse_db(s: &str) -> Result<f64, String> {
    match s {
        "-" | "" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        v => v.replace(',', ".").parse().map_err(|_| format!("bad PSNR value {v:?}")),
    }
}

pub fn sigma_key(s: f64) -> String {
    format!("{s}")
}

pub fn format_table(rows: &[ResultRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.image,
            r.method,
            sigma_key(r.sigma),
            format_db(r.psnr_noisy),
            format_db(r.psnr_average),
            format_db(r.psnr_weighted),
            r.status.replace(['\t', '\n'], " ")
        );
    }
    out
}

/// Parses a table written by [`format_table`]. Decimal commas are accepted.
pub fn parse_table(text: &str) -> Result<Vec<ResultRow>, ReportError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') || line == HEADER {
            continue;
        }
        let perr = |message: String| ReportError::Parse { line: i + 1, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(perr(format!("expected 7 tab-separated fields, found {}", f.len())));
        }
        rows.push(ResultRow {
            image: f[0].into(),
            method: f[1].into(),
            sigma: f[2].parse().map_err(|_| perr(format!("bad sigma {:?}", f[2])))?,
            psnr_noisy: parse_db(f[3]).map_err(perr)?,
            psnr_average: parse_db(f[4]).map_err(perr)?,
            psnr_weighted: parse_db(f[5]).map_err(perr)?,
            status: f[6].into(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reconstruction {
    Average,
    Weighted,
}

impl Reconstruction {
    pub const ALL: [Reconstruction; 2] = [Reconstruction::Average, Reconstruction::Weighted];

    pub fn as_str(&self) -> &'static str {
        match self {
            Reconstruction::Average => "average",
            Reconstruction::Weighted => "weighted",
        }
    }

    fn of(&self, row: &ResultRow) -> f64 {
        match self {
            Reconstruction::Average => row.psnr_average,
            Reconstruction::Weighted => row.psnr_weighted,
        }
    }
}

/// Best method(s) in one (image, sigma, reconstruction) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BestCell {
    pub image: String,
    pub sigma: f64,
    pub reconstruction: Reconstruction,
    pub psnr: f64,
    pub methods: Vec<String>,
}

/// Mean of `reference − baseline` over the images where both ran.
#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub baseline: String,
    pub sigma: f64,
    pub reconstruction: Reconstruction,
    pub mean_db: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reference: String,
    pub images: Vec<String>,
    pub methods: Vec<String>,
    pub sigmas: Vec<f64>,
    pub rows: Vec<ResultRow>,
    pub best: Vec<BestCell>,
    pub improvements: Vec<Improvement>,
}

/// Values within this many dB of the cell maximum count as tied for best.
pub const TIE_DB: f64 = 1e-9;

fn first_seen(it: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    it.filter(|s| seen.insert(s.clone())).collect()
}

/// Merges completed runs, marks the best method per cell, and averages the
/// advantage of `reference` (matched case-insensitively) over every other method.
pub fn compare_report(rows: &[ResultRow], reference: &str) -> Result<Comparison, ReportError> {
    let rows: Vec<ResultRow> = rows.iter().filter(|r| r.is_ok()).cloned().collect();
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut index: BTreeMap<(String, String, String), &ResultRow> = BTreeMap::new();
    for r in &rows {
        let key = (r.image.clone(), r.method.clone(), sigma_key(r.sigma));
        if index.insert(key, r).is_some() {
            return Err(ReportError::Duplicate {
                image: r.image.clone(),
                method: r.method.clone(),
                sigma: sigma_key(r.sigma),
            });
        }
    }
    let images = first_seen(rows.iter().map(|r| r.image.clone()));
    let methods = first_seen(rows.iter().map(|r| r.method.clone()));
    let mut sigmas: Vec<f64> = Vec::new();
    for r in &rows {
        if !sigmas.contains(&r.sigma) {
            sigmas.push(r.sigma);
        }
    }
    sigmas.sort_by(f64::total_cmp);

    // Every (image, method) pair present must cover the same sigmas.
    for image in &images {
        for method in &methods {
            let have: Vec<bool> = sigmas
                .iter()
                .map(|s| index.contains_key(&(image.clone(), method.clone(), sigma_key(*s))))
                .collect();
            if have.iter().any(|&h| h) && !have.iter().all(|&h| h) {
                return Err(ReportError::Inconsistent(format!(
                    "{image}/{method} covers only some of the noise levels"
                )));
            }
        }
    }

    let mut best = Vec::new();
    for image in &images {
        for &sigma in &sigmas {
            for rec in Reconstruction::ALL {
                let cell: Vec<(&String, f64)> = methods
                    .iter()
                    .filter_map(|m| index.get(&(image.clone(), m.clone(), sigma_key(sigma))).map(|r| (m, rec.of(r))))
                    .filter(|(_, v)| !v.is_nan())
                    .collect();
                let Some(top) = cell.iter().map(|c| c.1).max_by(f64::total_cmp) else {
                    continue;
                };
                let winners = cell
                    .iter()
                    .filter(|(_, v)| *v == top || top - v <= TIE_DB)
                    .map(|(m, _)| (*m).clone())
                    .collect();
                best.push(BestCell {
                    image: image.clone(),
                    sigma,
                    reconstruction: rec,
                    psnr: top,
                    methods: winners,
                });
            }
        }
    }

    let reference_name = methods
        .iter()
        .find(|m| m.eq_ignore_ascii_case(reference))
        .cloned()
        .unwrap_or_else(|| reference.to_string());
    let mut improvements = Vec::new();
    for baseline in methods.iter().filter(|m| **m != reference_name) {
        for &sigma in &sigmas {
            for rec in Reconstruction::ALL {
                let diffs: Vec<f64> = images
                    .iter()
                    .filter_map(|image| {
                        let key = |m: &String| (image.clone(), m.clone(), sigma_key(sigma));
                        let a = rec.of(index.get(&key(&reference_name))?);
                        let b = rec.of(index.get(&key(baseline))?);
                        (a.is_finite() && b.is_finite()).then_some(a - b)
                    })
                    .collect();
                if diffs.is_empty() {
                    continue;
                }
                improvements.push(Improvement {
                    baseline: baseline.clone(),
                    sigma,
                    reconstruction: rec,
                    mean_db: diffs.iter().sum::<f64>() / diffs.len() as f64,
                    images: diffs.len(),
                });
            }
        }
    }

    Ok(Comparison {
        reference: reference_name,
        images,
        methods,
        sigmas,
        rows,
        best,
        improvements,
    })
}

impl Comparison {
    pub fn is_best(&self, image: &str, method: &str, sigma: f64, rec: Reconstruction) -> bool {
        self.best.iter().any(|c| {
            c.image == image && c.sigma == sigma && c.reconstruction == rec && c.methods.iter().any(|m| m == method)
        })
    }

    pub fn improvement(&self, baseline: &str, sigma: f64, rec: Reconstruction) -> Option<&Improvement> {
        self.improvements
            .iter()
            .find(|i| i.baseline == baseline && i.sigma == sigma && i.reconstruction == rec)
    }

    /// Markdown table with one row per (image, method) and one column per
    /// (reconstruction, sigma); the best value of each cell is in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| image | method |");
        let mut rule = String::from("|---|---|");
        for rec in Reconstruction::ALL {
            for s in &self.sigmas {
                let _ = write!(out, " {} σ={} |", rec.as_str(), sigma_key(*s));
                rule.push_str("---:|");
            }
        }
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for image in &self.images {
            for method in &self.methods {
                let row: Vec<&ResultRow> = self
                    .rows
                    .iter()
                    .filter(|r| &r.image == image && &r.method == method)
                    .collect();
                if row.is_empty() {
                    continue;
                }
                let _ = write!(out, "| {image} | {method} |");
                for rec in Reconstruction::ALL {
                    for &s in &self.sigmas {
                        let v = row.iter().find(|r| r.sigma == s).map_or(f64::NAN, |r| rec.of(r));
                        let text = format_db(v);
                        if self.is_best(image, method, s, rec) {
                            let _ = write!(out, " **{text}** |");
                        } else {
                            let _ = write!(out, " {text} |");
                        }
                    }
                }
                out.push('\n');
            }
        }
        if !self.improvements.is_empty() {
            let _ = writeln!(out, "\nMean PSNR gain of {} (dB):\n", self.reference);
            out.push_str("| baseline | reconstruction | sigma | gain | images |\n|---|---|---:|---:|---:|\n");
            for i in &self.improvements {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:+.2} | {} |",
                    i.baseline,
                    i.reconstruction.as_str(),
                    sigma_key(i.sigma),
                    i.mean_db,
                    i.images
                );
            }
        }
        out
    }

    /// `image, sigma, reconstruction, psnr, best methods` per cell.
    pub fn best_cells_tsv(&self) -> String {
        let mut out = String::from("image\tsigma\treconstruction\tpsnr\tbest\n");
        for c in &self.best {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                c.image,
                sigma_key(c.sigma),
                c.reconstruction.as_str(),
                format_db(c.psnr),
                c.methods.join(",")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(image: &str, method: &str, sigma: f64, avg: f64, wtd: f64) -> ResultRow {
        ResultRow {
            image: image.into(),
            method: method.into(),
            sigma,
            psnr_noisy: f64::NAN,
            psnr_average: avg,
            psnr_weighted: wtd,
            status: "ok".into(),
        }
    }

    #[test]
    fn table_roundtrip() {
        let mut rows = vec![row("a", "miqp", 50.0, 20.5, f64::INFINITY), row("a", "ksvd", 10.0, 30.0, 31.0)];
        rows[1].status = "failed: boom".into();
        rows[0].psnr_noisy = 14.25;
        let text = format_table(&rows);
        let back = parse_table(&text).unwrap();
        assert_eq!(format_table(&back), text);
        assert_eq!(back[0], rows[0]);
        assert!(back[1].psnr_noisy.is_nan());
    }

    #[test]
    fn single_run_is_best() {
        let c = compare_report(&[row("a", "miqp", 50.0, 20.0, 21.0)], "MIQP").unwrap();
        assert!(c.is_best("a", "miqp", 50.0, Reconstruction::Average));
        assert!(c.is_best("a", "miqp", 50.0, Reconstruction::Weighted));
        assert!(c.improvements.is_empty());
    }

    #[test]
    fn gains_and_marks() {
        let rows = vec![
            row("a", "miqp", 50.0, 22.0, 23.0),
            row("a", "iht", 50.0, 21.0, 23.5),
            row("b", "miqp", 50.0, 20.0, 20.0),
            row("b", "iht", 50.0, 17.0, 20.0),
        ];
        let c = compare_report(&rows, "miqp").unwrap();
        let g = c.improvement("iht", 50.0, Reconstruction::Average).unwrap();
        assert!((g.mean_db - 2.0).abs() < 1e-12);
        assert_eq!(g.images, 2);
        assert!(c.is_best("a", "iht", 50.0, Reconstruction::Weighted));
        assert!(!c.is_best("a", "miqp", 50.0, Reconstruction::Weighted));
        // Ties are shared.
        assert!(c.is_best("b", "iht", 50.0, Reconstruction::Weighted));
        assert!(c.is_best("b", "miqp", 50.0, Reconstruction::Weighted));
        assert!(c.to_markdown().contains("**22.0000**"));
    }

    #[test]
    fn rejects_inconsistent_runs() {
        let rows = vec![
            row("a", "miqp", 50.0, 22.0, 23.0),
            row("a", "miqp", 10.0, 22.0, 23.0),
            row("a", "iht", 50.0, 21.0, 23.5),
        ];
        assert!(matches!(compare_report(&rows, "miqp"), Err(ReportError::Inconsistent(_))));
        let dup = vec![row("a", "miqp", 50.0, 1.0, 1.0), row("a", "miqp", 50.0, 2.0, 2.0)];
        assert!(matches!(compare_report(&dup, "miqp"), Err(ReportError::Duplicate { .. })));
        assert!(matches!(compare_report(&[], "miqp"), Err(ReportError::Empty)));
    }
}
