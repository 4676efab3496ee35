//! Alternating dictionary learning: a sparse-coding phase with `D` fixed,
//! then a dictionary update with `X` fixed, repeated.

mod coding;
mod update;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{total_objective, Dictionary, SignalBatch, SparseCode, DEFAULT_ZERO_TOLERANCE};

pub use coding::{omp, sparse_code_batch, Coder, CodingOptions, CodingStats, ColumnReport};
pub use update::{
    init_dictionary, replace_dead_atoms, update_dictionary_ksvd, update_dictionary_least_squares, KsvdOutcome,
    Updater,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub atom_count: usize,
    pub budget: usize,
    pub outer_iterations: usize,
    pub coder: Coder,
    pub updater: Updater,
    pub coding: CodingOptions,
    pub seed: u64,
    /// Atoms used by fewer columns than this are replaced after each update.
    pub dead_atom_threshold: usize,
    pub ridge: f64,
    /// Chain each column's code into the next MIQP solve as a warm start.
    pub chain_warm_starts: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            atom_count: 100,
            budget: 20,
            outer_iterations: 30,
            coder: Coder::Miqp,
            updater: Updater::LeastSquares,
            coding: CodingOptions::default(),
            seed: 0,
            dead_atom_threshold: 1,
            ridge: 1e-8,
            chain_warm_starts: true,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self, signal_dim: usize) -> Result<()> {
        if self.outer_iterations == 0 {
            return Err(Error::InvalidArgument("outer_iterations must be >= 1".into()));
        }
        if self.atom_count == 0 {
            return Err(Error::InvalidArgument("atom count must be >= 1".into()));
        }
        if self.budget == 0 || self.budget > self.atom_count {
            return Err(Error::InvalidArgument(format!(
                "budget {} must lie in 1..={}",
                self.budget, self.atom_count
            )));
        }
        if self.coder == Coder::Omp && self.budget > signal_dim {
            return Err(Error::InvalidArgument(format!(
                "omp needs budget <= signal dimension {signal_dim}"
            )));
        }
        if !(self.ridge > 0.0) {
            return Err(Error::InvalidArgument("ridge must be positive".into()));
        }
        self.coding.limits.validate()?;
        self.coding.iht.validate()
    }
}

/// Statistics of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `Σ ½‖yᵢ − Dxᵢ‖²` after the coding phase.
    pub coding_objective: f64,
    /// Same after the dictionary update and dead-atom replacement.
    pub objective: f64,
    pub mean_gap: f64,
    pub mean_nodes: f64,
    pub unproven_columns: usize,
    pub truncated_columns: usize,
    pub replaced_atoms: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnTrace {
    /// Objective of the zero code before the first iteration.
    pub initial_objective: f64,
    pub entries: Vec<TraceEntry>,
}

impl LearnTrace {
    /// One `key=value` record per line. Wall times are written only when
    /// `with_timing` is set, so logs are reproducible by default.
    pub fn to_log(&self, with_timing: bool) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = write!(
                out,
                "iteration={} coding_objective={:.9e} objective={:.9e} mean_gap={:.6e} mean_nodes={:.3} \
                 unproven={} truncated={} replaced={}",
                e.iteration,
                e.coding_objective,
                e.objective,
                e.mean_gap,
                e.mean_nodes,
                e.unproven_columns,
                e.truncated_columns,
                e.replaced_atoms
            );
            if with_timing {
                let _ = write!(out, " wall_ms={}", e.wall_time.as_millis());
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`LearnTrace::to_log`] output. The initial objective is not logged and reads as 0.
    pub fn from_log(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut e = TraceEntry {
                iteration: 0,
                coding_objective: 0.0,
                objective: 0.0,
                mean_gap: 0.0,
                mean_nodes: 0.0,
                unproven_columns: 0,
                truncated_columns: 0,
                replaced_atoms: 0,
                wall_time: Duration::ZERO,
            };
            for field in line.split_whitespace() {
                let (k, v) = field
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("trace line {}: bad field {field}", ln + 1)))?;
                let bad = || Error::InvalidArgument(format!("trace line {}: bad value for {k}", ln + 1));
                let f = || v.parse::<f64>().map_err(|_| bad());
                let u = || v.parse::<usize>().map_err(|_| bad());
                match k {
                    "iteration" => e.iteration = u()?,
                    "coding_objective" => e.coding_objective = f()?,
                    "objective" => e.objective = f()?,
                    "mean_gap" => e.mean_gap = f()?,
                    "mean_nodes" => e.mean_nodes = f()?,
                    "unproven" => e.unproven_columns = u()?,
                    "truncated" => e.truncated_columns = u()?,
                    "replaced" => e.replaced_atoms = u()?,
                    "wall_ms" => e.wall_time = Duration::from_millis(v.parse().map_err(|_| bad())?),
                    _ => {}
                }
            }
            entries.push(e);
        }
        Ok(Self {
            initial_objective: 0.0,
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutcome {
    pub dictionary: Dictionary,
    pub codes: SparseCode,
    pub trace: LearnTrace,
}

/// Failure inside [`learn`], with the iterations completed before it.
#[derive(Debug, thiserror::Error)]
#[error("learning failed after {} iterations: {source}", trace.entries.len())]
pub struct LearnError {
    #[source]
    pub source: Error,
    pub trace: LearnTrace,
}

/// Runs the alternating procedure for `config.outer_iterations` rounds.
pub fn learn(batch: &SignalBatch, config: &LearnConfig) -> std::result::Result<LearnOutcome, LearnError> {
    let mut trace = LearnTrace::default();
    let fail = |source: Error, trace: &LearnTrace| LearnError {
        source,
        trace: trace.clone(),
    };
    config.validate(batch.signal_dim()).map_err(|e| fail(e, &trace))?;
    let mut dict = init_dictionary(batch, config.atom_count, config.seed).map_err(|e| fail(e, &trace))?;
    trace.initial_objective = 0.5 * batch.signals().norm_squared();
    let mut codes: Option<SparseCode> = None;

    for iteration in 1..=config.outer_iterations {
        let start = Instant::now();
        let warm = match (config.coder, config.chain_warm_starts, &codes) {
            (Coder::Miqp, true, Some(c)) => Some(c.codes()),
            _ => None,
        };
        let (coded, stats) = sparse_code_batch(batch, &dict, config.budget, config.coder, &config.coding, warm)
            .map_err(|e| fail(e, &trace))?;
        let coding_objective = total_objective(batch, &dict, coded.codes()).map_err(|e| fail(e, &trace))?;

        let (new_dict, new_codes) = match config.updater {
            Updater::LeastSquares => {
                let d = update_dictionary_least_squares(batch, coded.codes(), config.ridge)
                    .map_err(|e| fail(e, &trace))?;
                (d, coded.into_inner())
            }
            Updater::Ksvd => {
                let out = update_dictionary_ksvd(batch, &coded, &dict).map_err(|e| fail(e, &trace))?;
                (out.dictionary, out.codes.into_inner())
            }
        };
        dict = new_dict;
        let mut x: DMatrix<f64> = new_codes;
        let replaced = replace_dead_atoms(batch, &mut dict, &mut x, config.dead_atom_threshold, DEFAULT_ZERO_TOLERANCE);
        let objective = total_objective(batch, &dict, &x).map_err(|e| fail(e, &trace))?;
        codes = Some(SparseCode::new(x, config.budget, DEFAULT_ZERO_TOLERANCE).map_err(|e| fail(e, &trace))?);

        trace.entries.push(TraceEntry {
            iteration,
            coding_objective,
            objective,
            mean_gap: stats.mean_gap(),
            mean_nodes: stats.mean_nodes(),
            unproven_columns: stats.unproven(),
            truncated_columns: stats.truncated(),
            replaced_atoms: replaced.len(),
            wall_time: start.elapsed(),
        });
    }
    Ok(LearnOutcome {
        dictionary: dict,
        codes: codes.expect("at least one iteration ran"),
        trace,
    })
}
