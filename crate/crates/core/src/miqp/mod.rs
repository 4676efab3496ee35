//! Exact ℓ0-constrained sparse coding as a big-M mixed-integer QP.
//!
//! ```text
//! min ½‖y − Dx‖²  s.t.  −M zᵢ ≤ xᵢ ≤ M zᵢ,  Σ zᵢ ≤ T,  z ∈ {0,1}ᵖ
//!                       [‖x‖₁ ≤ T M,  ‖x‖∞ ≤ M]   (tightening rows)
//! ```
//!
//! [`solve_miqp`] runs a best-first branch-and-bound over `z`. Node
//! relaxations eliminate `z` in closed form (`zᵢ = |xᵢ| / M`), which leaves a
//! convex QP over a box intersected with an ℓ1 budget. [`export_lp`] writes
//! the same instance as an LP file for external solvers.

mod bnb;
mod lp;
mod qp;

use std::time::Duration;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{half_squared_residual, l0_count, Dictionary, DEFAULT_ZERO_TOLERANCE};

pub use bnb::{branch, extract_incumbent, node_relaxation, solve_miqp, Incumbent, Relaxation};
pub use lp::{export_lp, read_lp, LpInstance};

/// One sparse-coding instance with its big-M constant and optional warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqpProblem {
    y: DVector<f64>,
    dict: Dictionary,
    budget: usize,
    big_m: f64,
    warm_x: Option<DVector<f64>>,
    warm_z: Option<Vec<bool>>,
    tightening: bool,
}

impl MiqpProblem {
    pub fn new(y: DVector<f64>, dict: Dictionary, budget: usize, big_m: f64) -> Result<Self> {
        if y.len() != dict.signal_dim() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} entries, dictionary rows = {}",
                y.len(),
                dict.signal_dim()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal"));
        }
        if budget == 0 || budget > dict.atom_count() {
            return Err(Error::InvalidArgument(format!(
                "budget {budget} must lie in 1..={}",
                dict.atom_count()
            )));
        }
        if !(big_m > 0.0 && big_m.is_finite()) {
            return Err(Error::InvalidArgument(format!("big-M must be positive and finite, got {big_m}")));
        }
        Ok(Self {
            y,
            dict,
            budget,
            big_m,
            warm_x: None,
            warm_z: None,
            tightening: true,
        })
    }

    /// Attaches a warm start; its support becomes the warm indicator vector.
    pub fn with_warm_start(mut self, warm_x: DVector<f64>) -> Result<Self> {
        if warm_x.len() != self.dict.atom_count() {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} entries, dictionary has {} atoms",
                warm_x.len(),
                self.dict.atom_count()
            )));
        }
        if l0_count(warm_x.as_slice(), DEFAULT_ZERO_TOLERANCE) > self.budget {
            return Err(Error::InvalidArgument("warm start exceeds the sparsity budget".into()));
        }
        if warm_x.amax() > self.big_m {
            return Err(Error::InvalidArgument(format!(
                "warm start magnitude {} exceeds big-M {}",
                warm_x.amax(),
                self.big_m
            )));
        }
        // Entries at or below the tolerance are snapped to zero so that the
        // warm point is exactly feasible for its indicator vector.
        let warm_x = warm_x.map(|v| if v.abs() > DEFAULT_ZERO_TOLERANCE { v } else { 0.0 });
        self.warm_z = Some(warm_x.iter().map(|v| *v != 0.0).collect());
        self.warm_x = Some(warm_x);
        Ok(self)
    }

    /// Toggles the `‖x‖₁ ≤ TM`, `‖x‖∞ ≤ M` rows (on by default).
    pub fn with_tightening(mut self, on: bool) -> Self {
        self.tightening = on;
        self
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    pub fn warm_x(&self) -> Option<&DVector<f64>> {
        self.warm_x.as_ref()
    }

    pub fn warm_z(&self) -> Option<&[bool]> {
        self.warm_z.as_deref()
    }

    pub fn tightening(&self) -> bool {
        self.tightening
    }

    pub fn atom_count(&self) -> usize {
        self.dict.atom_count()
    }

    /// `½‖y − Dx‖²` for this instance.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        half_squared_residual(&self.y, &self.dict, x)
    }
}

/// Builds an instance with `M = (1 + alpha)‖warm_x‖∞`.
///
/// Without a (nonzero) warm start, `M = (1 + alpha)‖Dᵀy‖∞`; if that is zero
/// too (the signal is orthogonal to every atom) `M = 1 + alpha`.
pub fn build_problem(
    y: &DVector<f64>,
    dict: &Dictionary,
    budget: usize,
    warm_x: Option<&DVector<f64>>,
    alpha: f64,
) -> Result<MiqpProblem> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    let warm_norm = warm_x.map(|w| w.amax()).unwrap_or(0.0);
    let scale = if warm_norm > DEFAULT_ZERO_TOLERANCE {
        warm_norm
    } else {
        let corr = dict.correlate(y)?.amax();
        if corr > 0.0 {
            corr
        } else {
            1.0
        }
    };
    let big_m = (1.0 + alpha) * scale;
    let problem = MiqpProblem::new(y.clone(), dict.clone(), budget, big_m)?;
    match warm_x {
        Some(w) => {
            assert!(w.amax() <= big_m, "warm start cannot exceed its own big-M");
            problem.with_warm_start(w.clone())
        }
        None => Ok(problem),
    }
}

/// Stopping rules for [`solve_miqp`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverLimits {
    pub time_limit: Duration,
    pub node_limit: usize,
    /// Absolute optimality gap in objective units.
    pub gap_tolerance: f64,
    /// Optional early stop once `(upper − lower) / max(|upper|, 1)` falls below it.
    pub relative_gap_limit: Option<f64>,
    /// Record the global lower bound after every node.
    pub trace_bounds: bool,
}

impl Default for SolverLimits {
    fn default() -> Self {
        Self {
            time_limit: Duration::from_secs(50),
            node_limit: 1_000_000,
            gap_tolerance: 1e-6,
            relative_gap_limit: None,
            trace_bounds: false,
        }
    }
}

impl SolverLimits {
    pub fn validate(&self) -> Result<()> {
        if self.time_limit.is_zero() || self.node_limit == 0 || !(self.gap_tolerance > 0.0) {
            return Err(Error::InvalidArgument("solver limits must be positive".into()));
        }
        if let Some(r) = self.relative_gap_limit {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("relative gap limit must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    GapLimit,
    NodeLimit,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapLimit => "gap-limit",
            SolveStatus::NodeLimit => "node-limit",
            SolveStatus::TimeLimit => "time-limit",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    /// Nodes whose relaxation was solved, root included.
    pub nodes_explored: usize,
    pub relaxations_solved: usize,
    pub inner_iterations: usize,
    pub max_depth: usize,
    pub wall_time: Duration,
    /// The returned point touches the big-M box; the true ℓ0 optimum may lie outside it.
    pub possibly_m_truncated: bool,
    /// Global lower bound after each processed node (only with `trace_bounds`).
    pub lower_bound_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqpSolution {
    pub x: DVector<f64>,
    pub z: Vec<bool>,
    pub objective: f64,
    pub lower_bound: f64,
    /// `objective − lower_bound`, clamped at zero.
    pub gap: f64,
    pub status: SolveStatus,
    pub stats: SolveStats,
}

impl MiqpSolution {
    pub fn relative_gap(&self) -> f64 {
        self.gap / self.objective.abs().max(1.0)
    }
}

/// A branch-and-bound subproblem: indicators fixed to zero or one.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbNode {
    fixings: Vec<Fixing>,
    pub lower_bound: f64,
    pub relaxation_x: Option<DVector<f64>>,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixing {
    Free,
    Zero,
    One,
}

impl BnbNode {
    pub fn root(p: usize) -> Self {
        Self {
            fixings: vec![Fixing::Free; p],
            lower_bound: f64::NEG_INFINITY,
            relaxation_x: None,
            depth: 0,
        }
    }

    /// Node with the given forced-zero and forced-active index sets.
    pub fn with_fixings(p: usize, forced_zero: &[usize], forced_active: &[usize]) -> Result<Self> {
        let mut node = Self::root(p);
        for &i in forced_zero {
            *node.fixings.get_mut(i).ok_or_else(|| out_of_range(i, p))? = Fixing::Zero;
        }
        for &i in forced_active {
            let slot = node.fixings.get_mut(i).ok_or_else(|| out_of_range(i, p))?;
            if *slot == Fixing::Zero {
                return Err(Error::InvalidArgument(format!("index {i} forced both to zero and active")));
            }
            *slot = Fixing::One;
        }
        node.depth = forced_zero.len() + forced_active.len();
        Ok(node)
    }

    pub fn fixing(&self, i: usize) -> Fixing {
        self.fixings[i]
    }

    pub fn dim(&self) -> usize {
        self.fixings.len()
    }

    pub fn forced_zero(&self) -> Vec<usize> {
        self.indices(Fixing::Zero)
    }

    pub fn forced_active(&self) -> Vec<usize> {
        self.indices(Fixing::One)
    }

    pub fn free(&self) -> Vec<usize> {
        self.indices(Fixing::Free)
    }

    fn indices(&self, kind: Fixing) -> Vec<usize> {
        self.fixings
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.fixings.iter().filter(|f| **f == Fixing::One).count()
    }

    fn child(&self, index: usize, fixing: Fixing) -> Self {
        let mut fixings = self.fixings.clone();
        fixings[index] = fixing;
        Self {
            fixings,
            lower_bound: self.lower_bound,
            relaxation_x: None,
            depth: self.depth + 1,
        }
    }
}

fn out_of_range(i: usize, p: usize) -> Error {
    Error::InvalidArgument(format!("index {i} out of range for {p} atoms"))
}
