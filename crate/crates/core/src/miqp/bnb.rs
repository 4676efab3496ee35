//! Best-first branch-and-bound over the indicator vector.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::qp::BoxBudgetQp;
use super::{BnbNode, Fixing, MiqpProblem, MiqpSolution, SolveStats, SolveStatus, SolverLimits};
use crate::error::{Error, Result};
use crate::prox::top_magnitude_indices;

const FRACTIONAL_TOL: f64 = 1e-9;
const INCUMBENT_TOL: f64 = 1e-10;
/// Relative accuracy floor for inner solves, as a fraction of `½‖y‖²`.
/// Absolute targets below it are lost in rounding on large objectives.
const RELATIVE_FLOOR: f64 = 1e-13;
const MAX_INNER_ITERATIONS: usize = 5_000;

/// Continuous relaxation of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    pub x: DVector<f64>,
    /// `min(|xᵢ| / M, 1)` on free indices, the fixed value elsewhere.
    pub z: DVector<f64>,
    pub objective: f64,
    /// Certified lower bound on the node's relaxation (and integer) optimum.
    pub bound: f64,
    /// More indices forced active than the budget allows.
    pub infeasible: bool,
    pub iterations: usize,
}

/// A feasible point of the big-M problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub x: DVector<f64>,
    pub z: Vec<bool>,
    pub objective: f64,
    /// Certified lower bound of the support-restricted least squares.
    pub support_lower_bound: f64,
}

/// Quantities shared by every node of one solve.
struct Context<'a> {
    problem: &'a MiqpProblem,
    gram: DMatrix<f64>,
    lin: DVector<f64>,
    constant: f64,
    lipschitz: f64,
    inner_tol: f64,
    incumbent_tol: f64,
}

impl<'a> Context<'a> {
    fn new(problem: &'a MiqpProblem, gap_tolerance: f64) -> Self {
        let dict = problem.dictionary();
        let gram = dict.gram();
        let lin = dict.atoms().tr_mul(problem.y());
        let constant = 0.5 * problem.y().norm_squared();
        let lipschitz = gram_upper_eigenvalue(&gram);
        Self {
            problem,
            gram,
            lin,
            constant,
            lipschitz,
            inner_tol: (0.1 * gap_tolerance).max(RELATIVE_FLOOR * constant),
            incumbent_tol: INCUMBENT_TOL.max(RELATIVE_FLOOR * constant),
        }
    }

    fn qp_over(&self, vars: &[usize]) -> BoxBudgetQp {
        BoxBudgetQp {
            gram: self.gram.select_rows(vars).select_columns(vars),
            lin: DVector::from_fn(vars.len(), |r, _| self.lin[vars[r]]),
            constant: self.constant,
            bound: self.problem.big_m(),
            budgeted: vec![false; vars.len()],
            budget: None,
            global_budget: None,
            lipschitz: self.lipschitz,
        }
    }

    fn relax(&self, node: &BnbNode, warm: Option<&DVector<f64>>, cutoff: f64) -> Relaxation {
        let p = node.dim();
        let budget = self.problem.budget();
        let m = self.problem.big_m();
        let active = node.active_count();
        if active > budget {
            return Relaxation {
                x: DVector::zeros(p),
                z: DVector::zeros(p),
                objective: f64::INFINITY,
                bound: f64::INFINITY,
                infeasible: true,
                iterations: 0,
            };
        }
        let vars: Vec<usize> = (0..p).filter(|&i| node.fixing(i) != Fixing::Zero).collect();
        let mut qp = self.qp_over(&vars);
        qp.budgeted = vars.iter().map(|&i| node.fixing(i) == Fixing::Free).collect();
        qp.budget = Some((budget - active) as f64 * m);
        if self.problem.tightening() {
            qp.global_budget = Some(budget as f64 * m);
        }
        let x0 = match warm {
            Some(w) => DVector::from_fn(vars.len(), |r, _| w[vars[r]]),
            None => DVector::zeros(vars.len()),
        };
        let out = qp.solve(&x0, self.inner_tol, cutoff, MAX_INNER_ITERATIONS);
        let mut x = DVector::zeros(p);
        for (r, &i) in vars.iter().enumerate() {
            x[i] = out.x[r];
        }
        let z = DVector::from_fn(p, |i, _| match node.fixing(i) {
            Fixing::Zero => 0.0,
            Fixing::One => 1.0,
            Fixing::Free => (x[i].abs() / m).min(1.0),
        });
        Relaxation {
            x,
            z,
            objective: out.objective,
            bound: out.lower_bound,
            infeasible: false,
            iterations: out.iterations,
        }
    }

    fn incumbent(&self, node: &BnbNode, x_relax: &DVector<f64>) -> Incumbent {
        let p = node.dim();
        let active = node.forced_active();
        let slots = self.problem.budget().saturating_sub(active.len());
        let free = node.free();
        let free_mags: Vec<f64> = free.iter().map(|&i| x_relax[i]).collect();
        let mut support = active;
        support.extend(top_magnitude_indices(&free_mags, slots).into_iter().map(|r| free[r]));
        support.sort_unstable();

        let mut qp = self.qp_over(&support);
        qp.lipschitz = gram_upper_eigenvalue(&qp.gram);
        let out = qp.solve(
            &DVector::from_fn(support.len(), |r, _| x_relax[support[r]]),
            self.incumbent_tol,
            f64::INFINITY,
            4 * MAX_INNER_ITERATIONS,
        );
        let mut x = DVector::zeros(p);
        let mut z = vec![false; p];
        for (r, &i) in support.iter().enumerate() {
            x[i] = out.x[r];
            z[i] = true;
        }
        let objective = self
            .problem
            .objective(&x)
            .expect("support solution has the dictionary's dimensions");
        Incumbent {
            x,
            z,
            objective,
            support_lower_bound: out.lower_bound,
        }
    }
}

/// Upper estimate of `λmax` for a PSD matrix: power iteration with a 2% margin,
/// capped by the Gershgorin bound.
fn gram_upper_eigenvalue(gram: &DMatrix<f64>) -> f64 {
    let p = gram.nrows();
    let gershgorin = gram
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if gershgorin == 0.0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v.normalize_mut();
    let mut estimate = 0.0f64;
    for _ in 0..500 {
        let w = gram * &v;
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        if (rayleigh - estimate).abs() <= 1e-9 * rayleigh.abs() {
            estimate = rayleigh;
            break;
        }
        estimate = rayleigh;
    }
    (1.02 * estimate).min(gershgorin).max(estimate)
}

/// Solves the continuous relaxation of `node` to the default inner tolerance.
pub fn node_relaxation(problem: &MiqpProblem, node: &BnbNode) -> Result<Relaxation> {
    check_node(problem, node)?;
    let ctx = Context::new(problem, SolverLimits::default().gap_tolerance);
    Ok(ctx.relax(node, node.relaxation_x.as_ref(), f64::INFINITY))
}

/// Rounds a relaxation to a feasible point: keeps the forced-active indices
/// plus the largest free magnitudes, then refits by box-constrained least squares.
pub fn extract_incumbent(problem: &MiqpProblem, node: &BnbNode, x_relax: &DVector<f64>) -> Result<Incumbent> {
    check_node(problem, node)?;
    if x_relax.len() != problem.atom_count() {
        return Err(Error::DimensionMismatch("relaxation point length differs from atom count".into()));
    }
    let ctx = Context::new(problem, SolverLimits::default().gap_tolerance);
    Ok(ctx.incumbent(node, x_relax))
}

fn check_node(problem: &MiqpProblem, node: &BnbNode) -> Result<()> {
    if node.dim() != problem.atom_count() {
        return Err(Error::DimensionMismatch(format!(
            "node has {} indicators, problem has {} atoms",
            node.dim(),
            problem.atom_count()
        )));
    }
    Ok(())
}

/// Splits `node` on the free index whose relaxed indicator is most fractional.
///
/// Ties go to the larger `|x|`, then the lower index.
pub fn branch(node: &BnbNode, x_relax: &DVector<f64>, z_relax: &DVector<f64>) -> Result<(BnbNode, BnbNode)> {
    let mut best: Option<(f64, f64, usize)> = None;
    for i in node.free() {
        let z = z_relax[i];
        if z <= FRACTIONAL_TOL || z >= 1.0 - FRACTIONAL_TOL {
            continue;
        }
        let score = z * (1.0 - z);
        let mag = x_relax[i].abs();
        let better = match best {
            None => true,
            Some((s, m, _)) => score > s || (score == s && mag > m),
        };
        if better {
            best = Some((score, mag, i));
        }
    }
    let (_, _, index) = best.ok_or(Error::IntegralNode)?;
    Ok(split(node, index))
}

fn split(node: &BnbNode, index: usize) -> (BnbNode, BnbNode) {
    (node.child(index, Fixing::Zero), node.child(index, Fixing::One))
}

struct Open {
    node: BnbNode,
    seq: usize,
}

impl Open {
    fn bound(&self) -> f64 {
        self.node.lower_bound
    }
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    // Max-heap: lowest bound first, then deepest, then most recent.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound()
            .total_cmp(&self.bound())
            .then(self.node.depth.cmp(&other.node.depth))
            .then(self.seq.cmp(&other.seq))
    }
}

struct Search<'a> {
    ctx: Context<'a>,
    tol: f64,
    best: Option<Incumbent>,
    heap: BinaryHeap<Open>,
    pruned_min: f64,
    seq: usize,
    stats: SolveStats,
}

impl Search<'_> {
    fn upper(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.objective)
    }

    fn evaluate(&mut self, mut node: BnbNode, warm: Option<&DVector<f64>>) {
        let cutoff = self.upper() - self.tol;
        let relax = self.ctx.relax(&node, warm, cutoff);
        self.stats.nodes_explored += 1;
        self.stats.relaxations_solved += 1;
        self.stats.inner_iterations += relax.iterations;
        self.stats.max_depth = self.stats.max_depth.max(node.depth);
        if relax.infeasible {
            return;
        }
        node.lower_bound = node.lower_bound.max(relax.bound);
        if node.lower_bound >= cutoff {
            self.pruned_min = self.pruned_min.min(node.lower_bound);
            return;
        }

        let inc = self.ctx.incumbent(&node, &relax.x);
        let leaf = node.free().is_empty() || node.active_count() == self.ctx.problem.budget();
        let leaf_bound = inc.support_lower_bound;
        if inc.objective < self.upper() {
            self.best = Some(inc);
        }
        if leaf {
            // The subproblem is the support least squares just solved.
            self.pruned_min = self.pruned_min.min(node.lower_bound.max(leaf_bound));
            return;
        }
        if node.lower_bound >= self.upper() - self.tol {
            self.pruned_min = self.pruned_min.min(node.lower_bound);
            return;
        }
        node.relaxation_x = Some(relax.x);
        self.seq += 1;
        self.heap.push(Open { node, seq: self.seq });
    }

    fn global_lower_bound(&self) -> f64 {
        let open = self.heap.peek().map_or(f64::INFINITY, |o| o.bound());
        open.min(self.pruned_min)
    }

    fn expand(&mut self, node: BnbNode) {
        let x = node.relaxation_x.clone().expect("open nodes carry their relaxation");
        let m = self.ctx.problem.big_m();
        let z = DVector::from_fn(node.dim(), |i, _| match node.fixing(i) {
            Fixing::Zero => 0.0,
            Fixing::One => 1.0,
            Fixing::Free => (x[i].abs() / m).min(1.0),
        });
        let (zero, one) = match branch(&node, &x, &z) {
            Ok(children) => children,
            Err(_) => {
                // Integral relaxation whose bound is not yet tight enough:
                // split on the largest free magnitude.
                let free = node.free();
                let mags: Vec<f64> = free.iter().map(|&i| x[i]).collect();
                let pick = free[top_magnitude_indices(&mags, 1)[0]];
                split(&node, pick)
            }
        };
        let branched = (0..node.dim())
            .find(|&i| zero.fixing(i) != node.fixing(i))
            .expect("children differ from the parent in one index");
        let mut warm_zero = x.clone();
        warm_zero[branched] = 0.0;
        self.evaluate(zero, Some(&warm_zero));
        self.evaluate(one, Some(&x));
    }
}

/// Exact solve of the big-M problem by best-first branch-and-bound.
///
/// Limit exhaustion is reported through [`SolveStatus`]; the returned point is
/// always feasible and `gap` bounds its distance to the optimum.
pub fn solve_miqp(problem: &MiqpProblem, limits: &SolverLimits) -> Result<MiqpSolution> {
    limits.validate()?;
    let start = Instant::now();
    let p = problem.atom_count();
    let mut search = Search {
        ctx: Context::new(problem, limits.gap_tolerance),
        tol: limits.gap_tolerance,
        best: None,
        heap: BinaryHeap::new(),
        pruned_min: f64::INFINITY,
        seq: 0,
        stats: SolveStats::default(),
    };
    if let (Some(x), Some(z)) = (problem.warm_x(), problem.warm_z()) {
        search.best = Some(Incumbent {
            x: x.clone(),
            z: z.to_vec(),
            objective: problem.objective(x)?,
            support_lower_bound: f64::NEG_INFINITY,
        });
    }
    search.evaluate(BnbNode::root(p), problem.warm_x());

    let mut status = SolveStatus::Optimal;
    loop {
        let lower = search.global_lower_bound();
        if limits.trace_bounds {
            search.stats.lower_bound_trace.push(lower);
        }
        let Some(top) = search.heap.peek() else { break };
        let upper = search.upper();
        if top.bound() >= upper - search.tol {
            // Every open node is dominated by the incumbent.
            search.pruned_min = search.pruned_min.min(top.bound());
            search.heap.clear();
            break;
        }
        if let Some(rel) = limits.relative_gap_limit {
            if (upper - lower) / upper.abs().max(1.0) <= rel {
                status = SolveStatus::GapLimit;
                break;
            }
        }
        if search.stats.nodes_explored >= limits.node_limit {
            status = SolveStatus::NodeLimit;
            break;
        }
        if start.elapsed() >= limits.time_limit {
            status = SolveStatus::TimeLimit;
            break;
        }
        let open = search.heap.pop().expect("peeked above");
        search.expand(open.node);
    }

    let best = search.best.take().expect("the root evaluation always yields an incumbent");
    let lower_bound = search.global_lower_bound().min(best.objective);
    let gap = (best.objective - lower_bound).max(0.0);
    let mut stats = search.stats;
    stats.wall_time = start.elapsed();
    stats.possibly_m_truncated = best.x.amax() >= problem.big_m() - 1e-6;
    Ok(MiqpSolution {
        x: best.x,
        z: best.z,
        objective: best.objective,
        lower_bound,
        gap,
        status,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dictionary;

    fn identity_problem(big_m: f64) -> MiqpProblem {
        let d = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        MiqpProblem::new(DVector::from_vec(vec![3.0, -1.0, 2.0]), d, 2, big_m).unwrap()
    }

    #[test]
    fn root_relaxation_lower_bounds_integer_optimum() {
        let p = identity_problem(10.0);
        let r = node_relaxation(&p, &BnbNode::root(3)).unwrap();
        assert!(r.bound <= 0.5 + 1e-12);
        assert!(r.bound <= r.objective + 1e-12);
        // Budget 2M = 20 does not bind, so the relaxation reproduces y.
        assert!(r.objective.abs() < 1e-9);
    }

    #[test]
    fn all_zero_node_gives_half_norm() {
        let p = identity_problem(10.0);
        let node = BnbNode::with_fixings(3, &[0, 1, 2], &[]).unwrap();
        let r = node_relaxation(&p, &node).unwrap();
        assert_eq!(r.x, DVector::zeros(3));
        assert!((r.bound - 7.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_node_reported() {
        let p = identity_problem(10.0);
        let node = BnbNode::with_fixings(3, &[], &[0, 1, 2]).unwrap();
        let r = node_relaxation(&p, &node).unwrap();
        assert!(r.infeasible);
        assert_eq!(r.bound, f64::INFINITY);
    }

    #[test]
    fn incumbent_on_identity() {
        let p = identity_problem(10.0);
        let root = BnbNode::root(3);
        let r = node_relaxation(&p, &root).unwrap();
        let inc = extract_incumbent(&p, &root, &r.x).unwrap();
        assert!((&inc.x - DVector::from_vec(vec![3.0, 0.0, 2.0])).amax() < 1e-9);
        assert_eq!(inc.z, vec![true, false, true]);
        assert!((inc.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn incumbent_respects_box() {
        let p = identity_problem(2.5);
        let root = BnbNode::root(3);
        let inc = extract_incumbent(&p, &root, &DVector::from_vec(vec![3.0, -1.0, 2.0])).unwrap();
        assert!((inc.x[0] - 2.5).abs() < 1e-9);
        assert!((inc.x[2] - 2.0).abs() < 1e-9);
        assert!((inc.objective - (0.125 + 0.5)).abs() < 1e-9);
    }

    #[test]
    fn branch_rules() {
        let node = BnbNode::with_fixings(3, &[2], &[1]).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let z = DVector::from_vec(vec![0.5, 1.0, 0.0]);
        let (zero, one) = branch(&node, &x, &z).unwrap();
        assert_eq!(zero.forced_zero(), vec![0, 2]);
        assert_eq!(one.forced_active(), vec![0, 1]);

        let root = BnbNode::root(2);
        let x = DVector::from_vec(vec![2.0, -3.0]);
        let z = DVector::from_vec(vec![0.5, 0.5]);
        let (zero, _) = branch(&root, &x, &z).unwrap();
        assert_eq!(zero.forced_zero(), vec![1]);

        let z = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(branch(&root, &x, &z), Err(Error::IntegralNode)));
    }

    #[test]
    fn solve_identity_instance() {
        let p = identity_problem(7.5);
        let s = solve_miqp(&p, &SolverLimits::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective - 0.5).abs() < 1e-9);
        assert!((&s.x - DVector::from_vec(vec![3.0, 0.0, 2.0])).amax() < 1e-9);
        assert!(s.gap <= 1e-6);
    }

    #[test]
    fn full_budget_square_dictionary_is_exact() {
        let d = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.2, 0.6, 0.1, 0.0, 0.3, 0.7]);
        let dict = Dictionary::new(d.clone()).unwrap();
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x_exact = d.clone().lu().solve(&y).unwrap();
        let p = MiqpProblem::new(y, dict, 3, 2.0 * x_exact.amax()).unwrap();
        let s = solve_miqp(&p, &SolverLimits::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.objective < 1e-9);
    }
}
