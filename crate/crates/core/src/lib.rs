//! Exact ℓ0-constrained sparse coding and dictionary learning.
//!
//! The sparse-coding problem `min ½‖y − Dx‖² s.t. ‖x‖₀ ≤ T` is written as a
//! big-M mixed-integer quadratic program and solved to proven optimality by
//! a best-first branch-and-bound ([`miqp`]). Iterative hard thresholding
//! ([`prox`]) supplies warm starts and the big-M constant. [`learn`] embeds
//! the coders in an alternating dictionary-learning loop, and [`imaging`]
//! provides the patch-based denoising harness (noise, patch extraction,
//! reconstruction, PSNR, PGM I/O).
//!
//! ```
//! use l0dict_core::miqp::{build_problem, solve_miqp, SolverLimits};
//! use l0dict_core::model::Dictionary;
//! use nalgebra::{DMatrix, DVector};
//!
//! let dict = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
//! let y = DVector::from_vec(vec![3.0, -1.0, 2.0]);
//! let problem = build_problem(&y, &dict, 2, None, 1.5).unwrap();
//! let solution = solve_miqp(&problem, &SolverLimits::default()).unwrap();
//! assert!((solution.objective - 0.5).abs() < 1e-9);
//! ```

pub mod error;
pub mod imaging;
pub mod learn;
pub mod miqp;
pub mod model;
pub mod oracle;
pub mod prox;

pub use error::{Error, Result};
