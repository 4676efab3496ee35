//! Dictionary-update phase and dictionary initialization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{project_dictionary, Dictionary, SignalBatch, SparseCode};

/// Dictionary-update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Updater {
    /// `D = YXᵀ(XXᵀ + εI)⁻¹`, then projection onto the unit ball.
    LeastSquares,
    /// Atom-by-atom rank-1 refit of the restricted residual.
    Ksvd,
}

impl Updater {
    pub fn as_str(&self) -> &'static str {
        match self {
            Updater::LeastSquares => "least-squares",
            Updater::Ksvd => "ksvd",
        }
    }
}

impl std::str::FromStr for Updater {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "least-squares" | "ls" | "mod" => Ok(Updater::LeastSquares),
            "ksvd" | "k-svd" => Ok(Updater::Ksvd),
            other => Err(Error::InvalidArgument(format!("unknown updater {other:?}"))),
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Picks `p` signal columns at random (without replacement when `ℓ ≥ p`) and
/// normalizes them. Zero columns become random unit vectors.
pub fn init_dictionary(batch: &SignalBatch, p: usize, seed: u64) -> Result<Dictionary> {
    if p == 0 {
        return Err(Error::InvalidArgument("atom count must be >= 1".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("cannot initialize from an empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = batch.len();
    let picks: Vec<usize> = if l >= p {
        sample(&mut rng, l, p).into_vec()
    } else {
        (0..p).map(|_| rng.random_range(0..l)).collect()
    };
    let n = batch.signal_dim();
    let mut atoms = DMatrix::zeros(n, p);
    for (j, &i) in picks.iter().enumerate() {
        let col = batch.signals().column(i);
        let norm = col.norm();
        if norm > 0.0 {
            atoms.set_column(j, &(col / norm));
        } else {
            atoms.set_column(j, &random_unit(&mut rng, n));
        }
    }
    project_dictionary(atoms)
}

/// Least-squares (MOD) update followed by projection onto the unit ball.
pub fn update_dictionary_least_squares(batch: &SignalBatch, codes: &DMatrix<f64>, ridge: f64) -> Result<Dictionary> {
    if codes.ncols() != batch.len() {
        return Err(Error::DimensionMismatch("codes and signals have different column counts".into()));
    }
    if !(ridge > 0.0) {
        return Err(Error::InvalidArgument("ridge must be positive".into()));
    }
    let p = codes.nrows();
    let mut xxt = codes * codes.transpose();
    for j in 0..p {
        xxt[(j, j)] += ridge;
    }
    let xyt = codes * batch.signals().transpose();
    let dt = xxt
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("regularized code Gram matrix is not positive definite".into()))?
        .solve(&xyt);
    project_dictionary(dt.transpose())
}

/// Result of a K-SVD sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct KsvdOutcome {
    pub dictionary: Dictionary,
    pub codes: SparseCode,
    /// Atoms no signal used; left unchanged.
    pub unused_atoms: Vec<usize>,
}

/// One K-SVD sweep over all atoms in index order. Supports are preserved.
pub fn update_dictionary_ksvd(batch: &SignalBatch, codes: &SparseCode, dict: &Dictionary) -> Result<KsvdOutcome> {
    let (n, p, l) = (dict.signal_dim(), dict.atom_count(), batch.len());
    if batch.signal_dim() != n || codes.codes().nrows() != p || codes.codes().ncols() != l {
        return Err(Error::DimensionMismatch("K-SVD inputs have inconsistent shapes".into()));
    }
    let tol = codes.zero_tolerance();
    let mut d = dict.atoms().clone();
    let mut x = codes.codes().clone();
    let mut residual = batch.signals() - &d * &x;
    let mut unused = Vec::new();

    for j in 0..p {
        let users: Vec<usize> = (0..l).filter(|&i| x[(j, i)].abs() > tol).collect();
        if users.is_empty() {
            unused.push(j);
            continue;
        }
        let atom = d.column(j).into_owned();
        let mut e = DMatrix::zeros(n, users.len());
        for (c, &i) in users.iter().enumerate() {
            e.set_column(c, &(residual.column(i) + &atom * x[(j, i)]));
        }
        let Some(leading) = leading_left_singular_vector(&e) else {
            continue;
        };
        let row = e.tr_mul(&leading);
        d.set_column(j, &leading);
        for (c, &i) in users.iter().enumerate() {
            let col = e.column(c) - &leading * row[c];
            residual.set_column(i, &col);
            x[(j, i)] = row[c];
        }
    }
    let dictionary = project_dictionary(d)?;
    let codes = SparseCode::new(x, codes.budget(), tol)?;
    Ok(KsvdOutcome {
        dictionary,
        codes,
        unused_atoms: unused,
    })
}

fn leading_left_singular_vector(e: &DMatrix<f64>) -> Option<DVector<f64>> {
    let gram = e * e.transpose();
    if gram.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::try_new(gram, 1e-14, 10_000)?;
    let (k, &top) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(top > 0.0) {
        return None;
    }
    let mut u = eig.eigenvectors.column(k).into_owned();
    let norm = u.norm();
    if !(norm > 0.0) {
        return None;
    }
    u /= norm;
    // Fix the sign so the result does not depend on the eigensolver's choice.
    let pivot = u.iamax();
    if u[pivot] < 0.0 {
        u = -u;
    }
    Some(u)
}

/// Replaces atoms used by fewer than `threshold` columns with the normalized
/// worst-reconstructed signals (one distinct signal per atom). Rows of replaced
/// atoms are zeroed. Returns the replaced atom indices.
pub fn replace_dead_atoms(
    batch: &SignalBatch,
    dict: &mut Dictionary,
    codes: &mut DMatrix<f64>,
    threshold: usize,
    zero_tolerance: f64,
) -> Vec<usize> {
    let p = dict.atom_count();
    let dead: Vec<usize> = (0..p)
        .filter(|&j| codes.row(j).iter().filter(|v| v.abs() > zero_tolerance).count() < threshold)
        .collect();
    if dead.is_empty() {
        return dead;
    }
    let residual = batch.signals() - dict.atoms() * &*codes;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let errs: Vec<f64> = residual.column_iter().map(|c| c.norm_squared()).collect();
    order.sort_by(|&a, &b| errs[b].total_cmp(&errs[a]).then(a.cmp(&b)));

    let mut atoms = dict.atoms().clone();
    let mut replaced = Vec::new();
    let mut candidates = order.into_iter();
    for &j in &dead {
        let Some(i) = candidates.by_ref().find(|&i| batch.signals().column(i).norm() > 0.0) else {
            break;
        };
        let col = batch.signals().column(i);
        atoms.set_column(j, &(col / col.norm()));
        codes.row_mut(j).fill(0.0);
        replaced.push(j);
    }
    *dict = project_dictionary(atoms).expect("replacement atoms are finite unit vectors");
    replaced
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{total_objective, DEFAULT_ZERO_TOLERANCE};

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_permutes_unit_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = project_dictionary(rand_matrix(&mut rng, 5, 6) * 10.0).unwrap().into_inner();
        let batch = SignalBatch::new(y.clone()).unwrap();
        let d = init_dictionary(&batch, 6, 42).unwrap();
        let mut seen = vec![false; 6];
        for col in d.atoms().column_iter() {
            let k = (0..6).find(|&i| (y.column(i) - col).amax() < 1e-12).expect("column of Y");
            assert!(!seen[k]);
            seen[k] = true;
        }
        assert_eq!(d, init_dictionary(&batch, 6, 42).unwrap());
    }

    #[test]
    fn init_handles_zero_and_short_batches() {
        let batch = SignalBatch::new(DMatrix::zeros(4, 2)).unwrap();
        let d = init_dictionary(&batch, 5, 3).unwrap();
        for col in d.atoms().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        assert!(init_dictionary(&batch, 0, 3).is_err());
    }

    #[test]
    fn least_squares_identity_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = rand_matrix(&mut rng, 4, 5) * 3.0;
        let batch = SignalBatch::new(y.clone()).unwrap();
        let d = update_dictionary_least_squares(&batch, &DMatrix::identity(5, 5), 1e-12).unwrap();
        let expect = project_dictionary(y).unwrap();
        assert!((d.atoms() - expect.atoms()).amax() < 1e-9);
    }

    #[test]
    fn least_squares_recovers_exact_dictionary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d0 = project_dictionary(rand_matrix(&mut rng, 6, 4)).unwrap();
        let x = rand_matrix(&mut rng, 4, 30);
        let batch = SignalBatch::new(d0.atoms() * &x).unwrap();
        let d = update_dictionary_least_squares(&batch, &x, 1e-12).unwrap();
        assert!((d.atoms() - d0.atoms()).amax() < 1e-8);
    }

    #[test]
    fn least_squares_does_not_increase_fit_when_projection_inactive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            // Small signals keep the unconstrained minimizer inside the ball.
            let y = rand_matrix(&mut rng, 6, 40) * 0.05;
            let x = rand_matrix(&mut rng, 4, 40);
            let batch = SignalBatch::new(y.clone()).unwrap();
            let old = project_dictionary(rand_matrix(&mut rng, 6, 4) * 0.3).unwrap();
            let new = update_dictionary_least_squares(&batch, &x, 1e-8).unwrap();
            let before = (&y - old.atoms() * &x).norm();
            let after = (&y - new.atoms() * &x).norm();
            assert!(after <= before + 1e-6);
        }
    }

    #[test]
    fn ksvd_single_atom_is_leading_singular_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = rand_matrix(&mut rng, 5, 8);
        let batch = SignalBatch::new(y.clone()).unwrap();
        let d = init_dictionary(&batch, 1, 0).unwrap();
        let codes = SparseCode::new(DMatrix::from_element(1, 8, 1.0), 1, DEFAULT_ZERO_TOLERANCE).unwrap();
        let out = update_dictionary_ksvd(&batch, &codes, &d).unwrap();
        let svd = y.clone().svd(true, false);
        let k = svd.singular_values.imax();
        let u = svd.u.unwrap().column(k).into_owned();
        let got = out.dictionary.atoms().column(0).into_owned();
        assert!((got.dot(&u).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ksvd_keeps_exact_fit_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d0 = project_dictionary(rand_matrix(&mut rng, 8, 6)).unwrap();
        let mut x = DMatrix::zeros(6, 25);
        for i in 0..25 {
            x[(i % 6, i)] = rng.random_range(0.5..2.0);
            x[((i + 2) % 6, i)] = rng.random_range(-2.0..-0.5);
        }
        let batch = SignalBatch::new(d0.atoms() * &x).unwrap();
        let codes = SparseCode::new(x.clone(), 2, DEFAULT_ZERO_TOLERANCE).unwrap();
        let out = update_dictionary_ksvd(&batch, &codes, &d0).unwrap();
        assert!(total_objective(&batch, &out.dictionary, out.codes.codes()).unwrap() < 1e-18);

        for _ in 0..10 {
            let y = rand_matrix(&mut rng, 8, 25);
            let batch = SignalBatch::new(y).unwrap();
            let before = total_objective(&batch, &d0, &x).unwrap();
            let out = update_dictionary_ksvd(&batch, &codes, &d0).unwrap();
            let after = total_objective(&batch, &out.dictionary, out.codes.codes()).unwrap();
            assert!(after <= before + 1e-8);
            // Supports are preserved.
            for (a, b) in x.iter().zip(out.codes.codes().iter()) {
                if *a == 0.0 {
                    assert_eq!(*b, 0.0);
                }
            }
        }
    }

    #[test]
    fn dead_atoms_take_worst_signals() {
        let y = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 3.0, 0.0, 0.5]);
        let batch = SignalBatch::new(y).unwrap();
        let mut d = Dictionary::new(DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.6, 0.8])).unwrap();
        let mut x = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let replaced = replace_dead_atoms(&batch, &mut d, &mut x, 1, DEFAULT_ZERO_TOLERANCE);
        assert_eq!(replaced, vec![1]);
        assert_eq!(d.atoms().column(1).as_slice(), &[0.0, 1.0]);
    }
}
