//! Core numeric types shared by every coder and updater.
//!
//! Signals, codes and atoms are stored as columns of dense `f64` matrices.
//! A [`Dictionary`] always satisfies the unit-ball constraint on its atoms,
//! so solvers never need to re-check it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entries with magnitude at or below this value count as zero.
pub const DEFAULT_ZERO_TOLERANCE: f64 = 1e-8;

const NORM_SLACK: f64 = 1e-9;

/// An `n x p` matrix whose columns lie in the closed unit Euclidean ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps `atoms` after checking the ball constraint without modifying them.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        check_shape_and_finite(&atoms, "dictionary")?;
        for (j, col) in atoms.column_iter().enumerate() {
            if col.norm_squared() > 1.0 + NORM_SLACK {
                return Err(Error::InvalidArgument(format!(
                    "atom {j} has squared norm {} > 1",
                    col.norm_squared()
                )));
            }
        }
        Ok(Self { atoms })
    }

    /// Signal dimension `n`.
    pub fn signal_dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms `p`.
    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Reconstruction `D x` for a single code vector.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.atom_count() {
            return Err(Error::DimensionMismatch(format!(
                "code has {} entries, dictionary has {} atoms",
                x.len(),
                self.atom_count()
            )));
        }
        Ok(&self.atoms * x)
    }

    /// Gram matrix `DᵀD`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.atoms.tr_mul(&self.atoms)
    }

    /// Correlations `Dᵀy`.
    pub fn correlate(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.signal_dim() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} entries, dictionary rows = {}",
                y.len(),
                self.signal_dim()
            )));
        }
        Ok(self.atoms.tr_mul(y))
    }
}

/// A batch of `ℓ` signals of dimension `n`, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    signals: DMatrix<f64>,
}

impl SignalBatch {
    pub fn new(signals: DMatrix<f64>) -> Result<Self> {
        check_shape_and_finite(&signals, "signal batch")?;
        Ok(Self { signals })
    }

    pub fn signal_dim(&self) -> usize {
        self.signals.nrows()
    }

    pub fn len(&self) -> usize {
        self.signals.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.ncols() == 0
    }

    pub fn signals(&self) -> &DMatrix<f64> {
        &self.signals
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.signals.column(i).into_owned()
    }

    /// Batch restricted to the given columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            signals: self.signals.select_columns(columns),
        }
    }
}

/// A `p x ℓ` code matrix with at most `budget` nonzeros per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    codes: DMatrix<f64>,
    budget: usize,
    zero_tolerance: f64,
}

impl SparseCode {
    pub fn new(codes: DMatrix<f64>, budget: usize, zero_tolerance: f64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidArgument("sparsity budget must be >= 1".into()));
        }
        if !(zero_tolerance >= 0.0) {
            return Err(Error::InvalidArgument("zero tolerance must be >= 0".into()));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse code"));
        }
        for (i, col) in codes.column_iter().enumerate() {
            let count = col.iter().filter(|v| v.abs() > zero_tolerance).count();
            if count > budget {
                return Err(Error::InvalidArgument(format!(
                    "code column {i} has {count} nonzeros, budget is {budget}"
                )));
            }
        }
        Ok(Self {
            codes,
            budget,
            zero_tolerance,
        })
    }

    pub fn codes(&self) -> &DMatrix<f64> {
        &self.codes
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.codes
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn zero_tolerance(&self) -> f64 {
        self.zero_tolerance
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.codes.column(i).into_owned()
    }

    /// Number of columns using each atom.
    pub fn atom_usage(&self) -> Vec<usize> {
        self.codes
            .row_iter()
            .map(|row| row.iter().filter(|v| v.abs() > self.zero_tolerance).count())
            .collect()
    }
}

/// Radially projects every atom with norm above one back onto the unit sphere.
pub fn project_dictionary(atoms: DMatrix<f64>) -> Result<Dictionary> {
    let mut atoms = atoms;
    check_shape_and_finite(&atoms, "dictionary")?;
    for mut col in atoms.column_iter_mut() {
        let norm = col.norm();
        if norm > 1.0 {
            col /= norm;
        }
    }
    Ok(Dictionary { atoms })
}

/// `½‖y − Dx‖²`.
pub fn half_squared_residual(y: &DVector<f64>, dict: &Dictionary, x: &DVector<f64>) -> Result<f64> {
    if y.len() != dict.signal_dim() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} entries, dictionary rows = {}",
            y.len(),
            dict.signal_dim()
        )));
    }
    let r = y - dict.apply(x)?;
    Ok(0.5 * r.norm_squared())
}

/// Total objective `Σᵢ ½‖yᵢ − D xᵢ‖²` over a batch.
pub fn total_objective(batch: &SignalBatch, dict: &Dictionary, codes: &DMatrix<f64>) -> Result<f64> {
    if batch.signal_dim() != dict.signal_dim()
        || codes.nrows() != dict.atom_count()
        || codes.ncols() != batch.len()
    {
        return Err(Error::DimensionMismatch(format!(
            "Y is {}x{}, D is {}x{}, X is {}x{}",
            batch.signal_dim(),
            batch.len(),
            dict.signal_dim(),
            dict.atom_count(),
            codes.nrows(),
            codes.ncols()
        )));
    }
    let r = batch.signals() - dict.atoms() * codes;
    Ok(0.5 * r.norm_squared())
}

/// Number of entries with magnitude strictly above `zero_tolerance`.
pub fn l0_count(x: &[f64], zero_tolerance: f64) -> usize {
    x.iter().filter(|v| v.abs() > zero_tolerance).count()
}

fn check_shape_and_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidArgument(format!("{what} must be non-empty")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        let m = DMatrix::from_column_slice(3, 2, &[3.0, 4.0, 0.0, 0.3, 0.4, 0.0]);
        let d = project_dictionary(m).unwrap();
        let a = d.atoms();
        assert!((a[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((a[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(a[(2, 0)], 0.0);
        assert_eq!(a.column(1).as_slice(), &[0.3, 0.4, 0.0]);

        let z = project_dictionary(DMatrix::zeros(4, 3)).unwrap();
        assert!(z.atoms().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_rejects_non_finite() {
        let m = DMatrix::from_column_slice(2, 1, &[f64::NAN, 1.0]);
        assert!(matches!(project_dictionary(m), Err(Error::NonFinite(_))));
        let m = DMatrix::from_column_slice(2, 1, &[f64::INFINITY, 1.0]);
        assert!(project_dictionary(m).is_err());
    }

    #[test]
    fn dictionary_new_checks_ball() {
        let m = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(Dictionary::new(m).is_err());
        let m = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        assert!(Dictionary::new(m).is_ok());
    }

    #[test]
    fn residual_examples() {
        let id = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let x = DVector::zeros(2);
        assert_eq!(half_squared_residual(&y, &id, &x).unwrap(), 0.5);
        assert_eq!(half_squared_residual(&y, &id, &y).unwrap(), 0.0);

        let zero = Dictionary::new(DMatrix::zeros(3, 2)).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let x = DVector::from_vec(vec![5.0, -7.0]);
        assert_eq!(half_squared_residual(&y, &zero, &x).unwrap(), 4.5);
    }

    #[test]
    fn residual_dimension_mismatch() {
        let id = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        let y = DVector::zeros(3);
        assert!(matches!(
            half_squared_residual(&y, &id, &DVector::zeros(2)),
            Err(Error::DimensionMismatch(_))
        ));
        let y = DVector::zeros(2);
        assert!(half_squared_residual(&y, &id, &DVector::zeros(5)).is_err());
    }

    #[test]
    fn l0_examples() {
        assert_eq!(l0_count(&[0.0, 3.0, 0.0, -2.0], 0.0), 2);
        assert_eq!(l0_count(&[1e-12, 0.0], 1e-9), 0);
        assert_eq!(l0_count(&[0.0; 5], 0.0), 0);
    }

    #[test]
    fn sparse_code_enforces_budget() {
        let codes = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(SparseCode::new(codes.clone(), 1, DEFAULT_ZERO_TOLERANCE).is_err());
        let sc = SparseCode::new(codes, 2, DEFAULT_ZERO_TOLERANCE).unwrap();
        assert_eq!(sc.atom_usage(), vec![1, 1, 0]);
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(n, p)| {
            proptest::collection::vec(-10.0f64..10.0, n * p)
                .prop_map(move |v| DMatrix::from_column_slice(n, p, &v))
        })
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(m in matrix_strategy()) {
            let once = project_dictionary(m).unwrap();
            let twice = project_dictionary(once.atoms().clone()).unwrap();
            for (a, b) in once.atoms().iter().zip(twice.atoms().iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for col in once.atoms().column_iter() {
                prop_assert!(col.norm_squared() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn residual_permutation_invariant(
            m in matrix_strategy(),
            seed in any::<u64>(),
        ) {
            let d = project_dictionary(m).unwrap();
            let (n, p) = (d.signal_dim(), d.atom_count());
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let y = DVector::from_fn(n, |_, _| next());
            let x = DVector::from_fn(p, |_, _| next());
            let perm: Vec<usize> = (0..p).rev().collect();
            let dp = Dictionary::new(d.atoms().select_columns(&perm)).unwrap();
            let xp = x.select_rows(&perm);
            let a = half_squared_residual(&y, &d, &x).unwrap();
            let b = half_squared_residual(&y, &dp, &xp).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
