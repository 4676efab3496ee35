//! The `export-lp` and `oracle` verbs.

use std::fmt::Write as _;

use l0dict_core::imaging::{add_gaussian_noise, extract_patches};
use l0dict_core::learn::init_dictionary;
use l0dict_core::miqp::{build_problem, export_lp, solve_miqp, MiqpProblem, SolverLimits};
use l0dict_core::model::{project_dictionary, Dictionary};
use l0dict_core::oracle::best_subset;
use l0dict_core::prox::{iht_solve, IhtSettings};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::run::load_image;

#[derive(Debug, Clone)]
pub struct PatchSelection {
    pub image: String,
    pub crop: Option<usize>,
    pub sigma: f64,
    pub seed: u64,
    pub patch_size: usize,
    pub stride: usize,
    pub patch: usize,
}

/// MIQP instance for one noisy patch, warm-started by IHT, as an LP document.
///
/// Without a dictionary, one is drawn from the noisy patches with `seed`.
pub fn export_patch_lp(
    sel: &PatchSelection,
    dictionary: Option<Dictionary>,
    atoms: usize,
    budget: usize,
    alpha: f64,
    tightening: bool,
) -> l0dict_core::Result<String> {
    let (_, clean) = load_image(&sel.image, sel.crop)?;
    let noisy = add_gaussian_noise(&clean, sel.sigma, sel.seed)?;
    let grid = extract_patches(&noisy, sel.patch_size, sel.stride)?;
    if sel.patch >= grid.len() {
        return Err(l0dict_core::Error::InvalidArgument(format!(
            "patch {} out of range ({} patches)",
            sel.patch,
            grid.len()
        )));
    }
    let dict = match dictionary {
        Some(d) => d,
        None => init_dictionary(&grid.patches, atoms, sel.seed)?,
    };
    let y = grid.patches.column(sel.patch);
    let iht = iht_solve(&y, &dict, budget, &IhtSettings::default(), None)?;
    let problem = build_problem(&y, &dict, budget, Some(&iht.x), alpha)?;
    Ok(export_lp(&problem, tightening))
}

/// Seeded Gaussian instance with unit-norm atoms, `M = m_factor · ‖Dᵀy‖∞`.
pub fn random_instance(n: usize, p: usize, budget: usize, m_factor: f64, seed: u64) -> l0dict_core::Result<MiqpProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let d = project_dictionary(DMatrix::from_fn(n, p, |_, _| draw()))?;
    let y = DVector::from_fn(n, |_, _| draw());
    let m = m_factor * d.correlate(&y)?.amax();
    MiqpProblem::new(y, d, budget, m)
}

fn support_text(z: impl Iterator<Item = usize>) -> String {
    z.map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Runs the exhaustive oracle and branch and bound on the same instance.
pub fn oracle_report(problem: &MiqpProblem) -> l0dict_core::Result<String> {
    let best = best_subset(problem.y(), problem.dictionary(), problem.budget(), problem.big_m())?;
    let bnb = solve_miqp(problem, &SolverLimits::default())?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "oracle objective={:.12} support={} supports={}",
        best.objective,
        support_text(best.support.iter().copied()),
        best.supports_enumerated
    );
    let _ = writeln!(
        out,
        "bnb    objective={:.12} support={} status={} nodes={}",
        bnb.objective,
        support_text(bnb.z.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)),
        bnb.status,
        bnb.stats.nodes_explored
    );
    let _ = writeln!(out, "difference={:.3e}", (bnb.objective - best.objective).abs());
    Ok(out)
}
