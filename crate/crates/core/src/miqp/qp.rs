//! Convex QP over a box intersected with ℓ1 budgets.
//!
//! Minimizes `½xᵀGx − bᵀx + c` subject to `|xᵢ| ≤ M`, an optional budget
//! `Σ_{i∈B} |xᵢ| ≤ β` on a subset `B`, and an optional global budget
//! `Σᵢ |xᵢ| ≤ γ`. Iterates with restarted accelerated projected gradient and
//! periodically tries an active-set polish. Every iterate yields a certified
//! lower bound `f(x) + min_{s∈C} ∇f(x)ᵀ(s − x)` (the linear minimization is
//! exact for this polytope), so the reported bound is valid whether or not
//! the iteration converged.

use nalgebra::{DMatrix, DVector};

pub(crate) struct BoxBudgetQp {
    pub gram: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    pub bound: f64,
    pub budgeted: Vec<bool>,
    pub budget: Option<f64>,
    pub global_budget: Option<f64>,
    /// Upper estimate of `λmax(gram)`.
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct QpOutcome {
    pub x: DVector<f64>,
    pub objective: f64,
    pub lower_bound: f64,
    pub iterations: usize,
}

const POLISH_EVERY: usize = 16;

impl BoxBudgetQp {
    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gram * x - &self.lin
    }

    fn objective_with_grad(&self, x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        // ½xᵀGx − bᵀx = ½xᵀ(Gx − b) − ½bᵀx
        0.5 * x.dot(grad) - 0.5 * self.lin.dot(x) + self.constant
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let first = self.project_local(v);
        let Some(global) = self.global_budget else {
            return first;
        };
        if first.iter().map(|x| x.abs()).sum::<f64>() <= global * (1.0 + 1e-14) {
            return first;
        }
        // Dykstra's alternating projections between the two budget sets.
        let all = vec![true; self.dim()];
        let mut x = v.clone();
        let mut p = DVector::zeros(self.dim());
        let mut q = DVector::zeros(self.dim());
        let mut prev = x.clone();
        for _ in 0..500 {
            let a = self.project_local(&(&x + &p));
            p = &x + &p - &a;
            let b = project_capped_l1_subset(&(&a + &q), self.bound, &all, global);
            q = &a + &q - &b;
            x = b;
            if (&x - &prev).amax() <= 1e-15 * (1.0 + self.bound) {
                break;
            }
            prev = x.clone();
        }
        x
    }

    fn project_local(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.budget {
            Some(budget) => project_capped_l1_subset(v, self.bound, &self.budgeted, budget),
            None => v.map(|x| x.clamp(-self.bound, self.bound)),
        }
    }

    /// `min_{s∈C} gᵀs`, solved greedily (the constraint family is laminar).
    fn linear_minimum(&self, grad: &DVector<f64>) -> f64 {
        let m = self.bound;
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
        let mut local = self.budget.unwrap_or(f64::INFINITY);
        let mut global = self.global_budget.unwrap_or(f64::INFINITY);
        let mut value = 0.0;
        for i in order {
            if global <= 0.0 {
                break;
            }
            let g = grad[i].abs();
            if g == 0.0 {
                break;
            }
            let take = if self.budget.is_some() && self.budgeted[i] {
                let t = m.min(local).min(global);
                local -= t;
                t
            } else {
                m.min(global)
            };
            global -= take;
            value -= g * take;
        }
        value
    }

    fn certified_bound(&self, x: &DVector<f64>, grad: &DVector<f64>, objective: f64) -> f64 {
        objective + self.linear_minimum(grad) - grad.dot(x)
    }

    /// Solves from `x0` until `objective − bound ≤ tol`, the bound reaches
    /// `cutoff`, or `max_iter` iterations elapse.
    pub fn solve(&self, x0: &DVector<f64>, tol: f64, cutoff: f64, max_iter: usize) -> QpOutcome {
        let n = self.dim();
        if n == 0 {
            let objective = self.constant;
            return QpOutcome {
                x: DVector::zeros(0),
                objective,
                lower_bound: objective,
                iterations: 0,
            };
        }
        let step = 1.0 / self.lipschitz.max(f64::MIN_POSITIVE);
        let mut x = self.project(x0);
        let mut grad = self.gradient(&x);
        let mut best_x = x.clone();
        let mut best_obj = self.objective_with_grad(&x, &grad);
        let mut bound = self.certified_bound(&x, &grad, best_obj);
        let mut momentum_point = x.clone();
        let mut t = 1.0f64;
        let mut iterations = 0;

        let done = |obj: f64, lb: f64| lb >= cutoff || obj - lb <= tol;
        if done(best_obj, bound) {
            return QpOutcome {
                x: best_x,
                objective: best_obj,
                lower_bound: bound,
                iterations,
            };
        }

        while iterations < max_iter {
            iterations += 1;
            let g_mom = self.gradient(&momentum_point);
            let next = self.project(&(&momentum_point - step * &g_mom));
            let next_grad = self.gradient(&next);
            let next_obj = self.objective_with_grad(&next, &next_grad);
            bound = bound.max(self.certified_bound(&next, &next_grad, next_obj));
            if next_obj < best_obj {
                best_obj = next_obj;
                best_x = next.clone();
            }

            // Gradient-based adaptive restart.
            let restart = (&momentum_point - &next).dot(&(&next - &x)) > 0.0;
            if restart {
                t = 1.0;
                momentum_point = next.clone();
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                momentum_point = &next + ((t - 1.0) / t_next) * (&next - &x);
                t = t_next;
            }
            x = next;
            grad = next_grad;

            if done(best_obj, bound) {
                break;
            }
            if iterations % POLISH_EVERY == 0 {
                if let Some(candidate) = self.polish(&x, &grad) {
                    let cg = self.gradient(&candidate);
                    let co = self.objective_with_grad(&candidate, &cg);
                    bound = bound.max(self.certified_bound(&candidate, &cg, co));
                    if co < best_obj {
                        best_obj = co;
                        best_x = candidate.clone();
                        // Continue from the polished point.
                        x = candidate.clone();
                        momentum_point = candidate;
                        t = 1.0;
                    }
                    if done(best_obj, bound) {
                        break;
                    }
                }
            }
        }
        QpOutcome {
            x: best_x,
            objective: best_obj,
            lower_bound: bound,
            iterations,
        }
    }

    /// Guesses the active set from `x` and solves the resulting equality
    /// constrained problem exactly. Returns a feasible candidate.
    fn polish(&self, x: &DVector<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.dim();
        let m = self.bound;
        let delta = 1e-7 * m.max(1.0);
        let budget_active = self.budget.is_some_and(|b| {
            let used: f64 = (0..n).filter(|&i| self.budgeted[i]).map(|i| x[i].abs()).sum();
            used >= b - delta
        });

        let mut fixed = DVector::zeros(n);
        let mut interior = Vec::with_capacity(n);
        let mut budget_rhs = self.budget.unwrap_or(0.0);
        for i in 0..n {
            let a = x[i].abs();
            let in_budget = self.budget.is_some() && self.budgeted[i];
            if a >= m - delta && -grad[i] * x[i].signum() >= 0.0 {
                fixed[i] = m * x[i].signum();
                if in_budget {
                    budget_rhs -= m;
                }
            } else if in_budget && a <= delta {
                // stays at zero
            } else {
                interior.push(i);
            }
        }
        if interior.is_empty() {
            return Some(self.project(&fixed));
        }
        let k = interior.len();
        let rhs_base = &self.lin - &self.gram * &fixed;
        let g_ff = self.gram.select_rows(&interior).select_columns(&interior);
        let b_f = DVector::from_fn(k, |r, _| rhs_base[interior[r]]);

        let solution = if budget_active {
            let signs = DVector::from_fn(k, |r, _| {
                let i = interior[r];
                if self.budgeted[i] {
                    x[i].signum()
                } else {
                    0.0
                }
            });
            if signs.iter().all(|&s| s == 0.0) {
                g_ff.cholesky()?.solve(&b_f)
            } else {
                let mut kkt = DMatrix::zeros(k + 1, k + 1);
                kkt.view_mut((0, 0), (k, k)).copy_from(&g_ff);
                for r in 0..k {
                    kkt[(r, k)] = signs[r];
                    kkt[(k, r)] = signs[r];
                }
                let mut rhs = DVector::zeros(k + 1);
                rhs.rows_mut(0, k).copy_from(&b_f);
                rhs[k] = budget_rhs;
                let sol = kkt.lu().solve(&rhs)?;
                sol.rows(0, k).into_owned()
            }
        } else {
            g_ff.cholesky()?.solve(&b_f)
        };
        if solution.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut candidate = fixed;
        for (r, &i) in interior.iter().enumerate() {
            candidate[i] = solution[r];
        }
        Some(self.project(&candidate))
    }
}

/// Projection onto `{x : |xᵢ| ≤ M, Σ_{i∈S} |xᵢ| ≤ B}`; coordinates outside `S` are only clipped.
pub(crate) fn project_capped_l1_subset(
    v: &DVector<f64>,
    bound: f64,
    subset: &[bool],
    budget: f64,
) -> DVector<f64> {
    let mut out = v.map(|x| x.clamp(-bound, bound));
    let used: f64 = out
        .iter()
        .zip(subset)
        .filter(|(_, &s)| s)
        .map(|(x, _)| x.abs())
        .sum();
    if used <= budget {
        return out;
    }
    let mags: Vec<f64> = v
        .iter()
        .zip(subset)
        .filter(|(_, &s)| s)
        .map(|(x, _)| x.abs())
        .collect();
    let theta = capped_shrinkage_level(&mags, bound, budget.max(0.0));
    for (i, &s) in subset.iter().enumerate() {
        if s {
            let a = (v[i].abs() - theta).clamp(0.0, bound);
            out[i] = a * v[i].signum();
        }
    }
    out
}

/// Finds `θ ≥ 0` with `Σ clamp(aᵢ − θ, 0, M) = B`, given the sum at `θ = 0` exceeds `B`.
fn capped_shrinkage_level(mags: &[f64], bound: f64, budget: f64) -> f64 {
    let h = |theta: f64| -> f64 { mags.iter().map(|a| (a - theta).clamp(0.0, bound)).sum() };
    let mut points: Vec<f64> = Vec::with_capacity(2 * mags.len() + 1);
    points.push(0.0);
    for &a in mags {
        points.push(a);
        if a > bound {
            points.push(a - bound);
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut prev = points[0];
    let mut h_prev = h(prev);
    for &pt in &points[1..] {
        let h_pt = h(pt);
        if h_pt <= budget {
            if h_prev == h_pt {
                return pt;
            }
            return prev + (h_prev - budget) * (pt - prev) / (h_prev - h_pt);
        }
        prev = pt;
        h_prev = h_pt;
    }
    prev
}
