//! Sparse-coding phase: one independent problem per signal column.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::miqp::{build_problem, solve_miqp, SolveStatus, SolverLimits};
use crate::model::{half_squared_residual, l0_count, Dictionary, SignalBatch, SparseCode, DEFAULT_ZERO_TOLERANCE};
use crate::prox::{hard_threshold, iht_solve, lipschitz_step, IhtSettings, StepSize};

/// Sparse coder used in the coding phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coder {
    /// Exact branch-and-bound, warm-started by IHT (and the previous code if any).
    Miqp,
    Iht,
    Omp,
}

impl Coder {
    pub fn as_str(&self) -> &'static str {
        match self {
            Coder::Miqp => "miqp",
            Coder::Iht => "iht",
            Coder::Omp => "omp",
        }
    }
}

impl std::str::FromStr for Coder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "miqp" => Ok(Coder::Miqp),
            "iht" | "proximal" => Ok(Coder::Iht),
            "omp" => Ok(Coder::Omp),
            other => Err(Error::InvalidArgument(format!("unknown coder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodingOptions {
    pub limits: SolverLimits,
    pub iht: IhtSettings,
    pub alpha: f64,
    pub tightening: bool,
}

impl Default for CodingOptions {
    fn default() -> Self {
        Self {
            limits: SolverLimits::default(),
            iht: IhtSettings::default(),
            alpha: 1.5,
            tightening: true,
        }
    }
}

/// Per-column outcome of a coding pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnReport {
    pub objective: f64,
    pub gap: f64,
    pub nodes: usize,
    pub status: Option<SolveStatus>,
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodingStats {
    pub columns: Vec<ColumnReport>,
}

impl CodingStats {
    pub fn total_objective(&self) -> f64 {
        self.columns.iter().map(|c| c.objective).sum()
    }

    pub fn mean_gap(&self) -> f64 {
        mean(self.columns.iter().map(|c| c.gap))
    }

    pub fn mean_nodes(&self) -> f64 {
        mean(self.columns.iter().map(|c| c.nodes as f64))
    }

    /// Columns whose solve stopped on a limit instead of proving optimality.
    pub fn unproven(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| matches!(c.status, Some(s) if s != SolveStatus::Optimal))
            .count()
    }

    pub fn truncated(&self) -> usize {
        self.columns.iter().filter(|c| c.truncated).count()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Orthogonal matching pursuit with least-squares refitting on the support.
pub fn omp(y: &DVector<f64>, dict: &Dictionary, budget: usize) -> Result<DVector<f64>> {
    let (n, p) = (dict.signal_dim(), dict.atom_count());
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("signal has {} entries, dictionary rows = {n}", y.len())));
    }
    if budget == 0 || budget > n.min(p) {
        return Err(Error::InvalidArgument(format!("omp budget {budget} must lie in 1..={}", n.min(p))));
    }
    let d = dict.atoms();
    let mut x = DVector::zeros(p);
    let mut support: Vec<usize> = Vec::with_capacity(budget);
    let mut residual = y.clone();
    let floor = 1e-14 * y.norm().max(1e-300);
    for _ in 0..budget {
        if residual.norm() <= 1e-10 {
            break;
        }
        let corr = d.tr_mul(&residual);
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..p {
            if support.contains(&j) {
                continue;
            }
            let c = corr[j].abs();
            if pick.is_none_or(|(_, b)| c > b) {
                pick = Some((j, c));
            }
        }
        let Some((j, c)) = pick else { break };
        if c <= floor {
            break;
        }
        support.push(j);
        let a = d.select_columns(&support);
        let coef = a
            .clone()
            .svd(true, true)
            .solve(y, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("omp least squares failed: {e}")))?;
        x.fill(0.0);
        for (r, &i) in support.iter().enumerate() {
            x[i] = coef[r];
        }
        residual = y - a * coef;
    }
    Ok(x)
}

/// Codes every column of `batch` against `dict`.
///
/// `warm` optionally supplies previous codes (one column per signal) used as
/// extra MIQP warm starts. Columns run in parallel on the current rayon pool
/// and are gathered by index, so the result does not depend on thread count.
pub fn sparse_code_batch(
    batch: &SignalBatch,
    dict: &Dictionary,
    budget: usize,
    coder: Coder,
    options: &CodingOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<(SparseCode, CodingStats)> {
    let (p, l) = (dict.atom_count(), batch.len());
    if batch.signal_dim() != dict.signal_dim() {
        return Err(Error::DimensionMismatch("signal and atom dimensions differ".into()));
    }
    if budget == 0 || budget > p {
        return Err(Error::InvalidArgument(format!("budget {budget} must lie in 1..={p}")));
    }
    if let Some(w) = warm {
        if w.nrows() != p || w.ncols() != l {
            return Err(Error::DimensionMismatch("warm codes have the wrong shape".into()));
        }
    }
    options.iht.validate()?;
    options.limits.validate()?;
    let iht = match options.iht.step_size {
        StepSize::ReciprocalLipschitz => IhtSettings {
            step_size: StepSize::Fixed(lipschitz_step(dict)?),
            ..options.iht.clone()
        },
        StepSize::Fixed(_) => options.iht.clone(),
    };

    let results: Vec<Result<(DVector<f64>, ColumnReport)>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let y = batch.column(i);
            let prev = warm.map(|w| w.column(i).into_owned());
            code_column(&y, dict, budget, coder, options, &iht, prev.as_ref()).map_err(|e| Error::Column {
                column: i,
                source: Box::new(e),
            })
        })
        .collect();

    let mut codes = DMatrix::zeros(p, l);
    let mut stats = CodingStats {
        columns: Vec::with_capacity(l),
    };
    for (i, r) in results.into_iter().enumerate() {
        let (x, report) = r?;
        codes.set_column(i, &x);
        stats.columns.push(report);
    }
    Ok((SparseCode::new(codes, budget, DEFAULT_ZERO_TOLERANCE)?, stats))
}

fn code_column(
    y: &DVector<f64>,
    dict: &Dictionary,
    budget: usize,
    coder: Coder,
    options: &CodingOptions,
    iht: &IhtSettings,
    prev: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, ColumnReport)> {
    let plain = |x: DVector<f64>| -> Result<(DVector<f64>, ColumnReport)> {
        let objective = half_squared_residual(y, dict, &x)?;
        Ok((
            x,
            ColumnReport {
                objective,
                gap: 0.0,
                nodes: 0,
                status: None,
                truncated: false,
            },
        ))
    };
    match coder {
        Coder::Omp => plain(omp(y, dict, budget)?),
        Coder::Iht => plain(hard_threshold(&iht_solve(y, dict, budget, iht, None)?.x, budget)?),
        Coder::Miqp => {
            let first = iht_solve(y, dict, budget, iht, None)?;
            let iht_obj = first.objective();
            let mut warm = first.x;
            if let Some(prev) = prev {
                if l0_count(prev.as_slice(), DEFAULT_ZERO_TOLERANCE) <= budget
                    && half_squared_residual(y, dict, prev)? <= iht_obj
                {
                    warm = prev.clone();
                }
            }
            let problem = build_problem(y, dict, budget, Some(&warm), options.alpha)?.with_tightening(options.tightening);
            let sol = solve_miqp(&problem, &options.limits)?;
            Ok((
                sol.x,
                ColumnReport {
                    objective: sol.objective,
                    gap: sol.gap,
                    nodes: sol.stats.nodes_explored,
                    status: Some(sol.status),
                    truncated: sol.stats.possibly_m_truncated,
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::project_dictionary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn omp_orthonormal_matches_threshold() {
        let d = Dictionary::new(DMatrix::identity(4, 4)).unwrap();
        let y = DVector::from_vec(vec![0.5, -3.0, 2.0, 1.0]);
        let x = omp(&y, &d, 2).unwrap();
        assert!((x - hard_threshold(&y, 2).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn omp_exact_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = DMatrix::from_fn(6, 5, |_, _| rng.random_range(-1.0..1.0));
        let d = project_dictionary(m).unwrap();
        let y = d.atoms().column(3).into_owned();
        let x = omp(&y, &d, 3).unwrap();
        assert_eq!(l0_count(x.as_slice(), 1e-12), 1);
        assert!((x[3] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn omp_residual_orthogonal_to_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = DMatrix::from_fn(12, 20, |_, _| rng.random_range(-1.0..1.0));
            let d = project_dictionary(m).unwrap();
            let y = DVector::from_fn(12, |_, _| rng.random_range(-2.0..2.0));
            let x = omp(&y, &d, 4).unwrap();
            let r = &y - d.atoms() * &x;
            for j in 0..20 {
                if x[j] != 0.0 {
                    assert!(d.atoms().column(j).dot(&r).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn omp_rejects_large_budget() {
        let d = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        assert!(omp(&DVector::zeros(3), &d, 4).is_err());
    }

    #[test]
    fn coder_parse() {
        assert_eq!("MIQP".parse::<Coder>().unwrap(), Coder::Miqp);
        assert_eq!("proximal".parse::<Coder>().unwrap(), Coder::Iht);
        assert!("lasso".parse::<Coder>().is_err());
    }

    #[test]
    fn column_errors_carry_index() {
        let d = project_dictionary(DMatrix::from_element(2, 3, 0.5)).unwrap();
        let y = SignalBatch::new(DMatrix::from_element(2, 3, 1.0)).unwrap();
        let err = sparse_code_batch(&y, &d, 3, Coder::Omp, &CodingOptions::default(), None).unwrap_err();
        assert!(matches!(err, Error::Column { column: 0, .. }));
        let bad = CodingOptions {
            limits: SolverLimits {
                node_limit: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(sparse_code_batch(&y, &d, 1, Coder::Miqp, &bad, None).is_err());
    }
}
