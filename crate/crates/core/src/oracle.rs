//! Exhaustive best-subset solver for small instances.
//!
//! Enumerates every support of size at most `T` and, on each support, every
//! assignment of its coordinates to {interior, +M, −M}; the interior part is
//! solved by exact least squares. The box-constrained optimum on a support is
//! attained at one of these patterns, so the minimum over feasible patterns is
//! the exact big-M optimum. Cost grows as `Σ_k C(p, k) 3^k`; intended for
//! `p ≤ 12` or so.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dictionary;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub support: Vec<usize>,
    pub supports_enumerated: usize,
}

/// Exact minimum of `½‖y − Dx‖²` over `‖x‖₀ ≤ T`, `‖x‖∞ ≤ M`.
pub fn best_subset(y: &DVector<f64>, dict: &Dictionary, budget: usize, big_m: f64) -> Result<OracleSolution> {
    let p = dict.atom_count();
    if y.len() != dict.signal_dim() {
        return Err(Error::DimensionMismatch("signal length differs from dictionary rows".into()));
    }
    if p > 24 {
        return Err(Error::InvalidArgument(format!("{p} atoms is too many to enumerate")));
    }
    if !(big_m > 0.0) {
        return Err(Error::InvalidArgument("big-M must be positive".into()));
    }
    let budget = budget.min(p);
    let d = dict.atoms();
    let mut best = OracleSolution {
        x: DVector::zeros(p),
        objective: 0.5 * y.norm_squared(),
        support: Vec::new(),
        supports_enumerated: 1,
    };
    for mask in 1u32..(1u32 << p) {
        let size = mask.count_ones() as usize;
        if size > budget {
            continue;
        }
        best.supports_enumerated += 1;
        let support: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        if let Some((x_s, obj)) = box_least_squares_enumerated(y, &d.select_columns(&support), big_m) {
            if obj < best.objective {
                let mut x = DVector::zeros(p);
                for (r, &i) in support.iter().enumerate() {
                    x[i] = x_s[r];
                }
                best.x = x;
                best.objective = obj;
                best.support = support;
            }
        }
    }
    Ok(best)
}

fn box_least_squares_enumerated(y: &DVector<f64>, a: &DMatrix<f64>, big_m: f64) -> Option<(DVector<f64>, f64)> {
    let k = a.ncols();
    let patterns = 3usize.pow(k as u32);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for code in 0..patterns {
        let mut c = code;
        let mut x = DVector::zeros(k);
        let mut interior = Vec::new();
        for i in 0..k {
            match c % 3 {
                0 => interior.push(i),
                1 => x[i] = big_m,
                _ => x[i] = -big_m,
            }
            c /= 3;
        }
        let rhs = y - a * &x;
        if !interior.is_empty() {
            let a_f = a.select_columns(&interior);
            let sol = a_f.svd(true, true).solve(&rhs, 1e-13).ok()?;
            for (r, &i) in interior.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        if x.amax() > big_m * (1.0 + 1e-12) {
            continue;
        }
        let obj = 0.5 * (y - a * &x).norm_squared();
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((x, obj));
        }
    }
    best
}
