//! Hard thresholding and iterative hard thresholding (proximal gradient on
//! the ℓ0 ball).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{half_squared_residual, Dictionary};

/// Step size rule for [`iht_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `0.99 / λmax(DᵀD)`, see [`lipschitz_step`].
    ReciprocalLipschitz,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhtSettings {
    pub max_iterations: usize,
    pub step_size: StepSize,
    /// Stop once the relative objective decrease falls below this value.
    pub stop_tolerance: f64,
}

impl Default for IhtSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_size: StepSize::ReciprocalLipschitz,
            stop_tolerance: 1e-8,
        }
    }
}

impl IhtSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if let StepSize::Fixed(rho) = self.step_size {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::InvalidArgument(format!("fixed step must be > 0, got {rho}")));
            }
        }
        if !(self.stop_tolerance >= 0.0) {
            return Err(Error::InvalidArgument("stop_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhtResult {
    pub x: DVector<f64>,
    /// `½‖y − Dxᵏ‖²` for the starting point and every iterate.
    pub objective_trace: Vec<f64>,
}

impl IhtResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting objective")
    }
}

/// Indices of the `budget` largest magnitudes; equal magnitudes keep the lower index.
pub(crate) fn top_magnitude_indices(x: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    order.truncate(budget);
    order
}

/// Keeps the `budget` entries of largest magnitude and zeroes the rest.
pub fn hard_threshold(x: &DVector<f64>, budget: usize) -> Result<DVector<f64>> {
    if budget == 0 {
        return Err(Error::InvalidArgument("sparsity budget must be >= 1".into()));
    }
    if budget >= x.len() {
        return Ok(x.clone());
    }
    let mut out = DVector::zeros(x.len());
    for i in top_magnitude_indices(x.as_slice(), budget) {
        out[i] = x[i];
    }
    Ok(out)
}

/// Step `0.99 / L`, with `L` the largest eigenvalue of `DᵀD` from power iteration.
pub fn lipschitz_step(dict: &Dictionary) -> Result<f64> {
    let l = largest_gram_eigenvalue(dict);
    if !(l > 0.0) {
        return Err(Error::ZeroDictionary);
    }
    Ok(0.99 / l)
}

fn largest_gram_eigenvalue(dict: &Dictionary) -> f64 {
    const REL_TOL: f64 = 1e-6;
    const MAX_STEPS: usize = 1000;
    let d = dict.atoms();
    let p = d.ncols();
    // Non-symmetric start so it is not orthogonal to the leading eigenvector
    // in structured cases such as identity blocks.
    let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..MAX_STEPS {
        let w = d.tr_mul(&(d * &v));
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (rayleigh - estimate).abs() <= REL_TOL * rayleigh.abs() {
            return rayleigh.max(estimate);
        }
        estimate = rayleigh;
    }
    estimate
}

/// Proximal gradient iterations `xᵏ⁺¹ = H_T(xᵏ − ρ Dᵀ(Dxᵏ − y))`.
///
/// `x0 = None` starts from the zero vector.
pub fn iht_solve(
    y: &DVector<f64>,
    dict: &Dictionary,
    budget: usize,
    settings: &IhtSettings,
    x0: Option<&DVector<f64>>,
) -> Result<IhtResult> {
    settings.validate()?;
    if budget == 0 {
        return Err(Error::InvalidArgument("sparsity budget must be >= 1".into()));
    }
    let p = dict.atom_count();
    if y.len() != dict.signal_dim() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} entries, dictionary rows = {}",
            y.len(),
            dict.signal_dim()
        )));
    }
    let mut x = match x0 {
        Some(x0) if x0.len() != p => {
            return Err(Error::DimensionMismatch(format!(
                "x0 has {} entries, dictionary has {p} atoms",
                x0.len()
            )))
        }
        Some(x0) => x0.clone(),
        None => DVector::zeros(p),
    };
    let rho = match settings.step_size {
        StepSize::ReciprocalLipschitz => lipschitz_step(dict)?,
        StepSize::Fixed(rho) => rho,
    };
    let d = dict.atoms();
    let mut objective = half_squared_residual(y, dict, &x)?;
    let mut trace = Vec::with_capacity(settings.max_iterations + 1);
    trace.push(objective);
    for _ in 0..settings.max_iterations {
        if objective == 0.0 {
            break;
        }
        let residual = d * &x - y;
        let grad = d.tr_mul(&residual);
        x = hard_threshold(&(x - rho * grad), budget)?;
        let next = half_squared_residual(y, dict, &x)?;
        trace.push(next);
        let decrease = (objective - next) / objective;
        objective = next;
        if decrease < settings.stop_tolerance {
            break;
        }
    }
    Ok(IhtResult {
        x,
        objective_trace: trace,
    })
}
