//! Flat `key = value` experiment configuration with named profiles.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use l0dict_core::learn::{Coder, Updater};

/// A coder paired with its dictionary update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Exact branch-and-bound coding.
    Miqp,
    /// Iterative hard thresholding.
    Proximal,
    /// Greedy OMP coding with K-SVD atom updates.
    Ksvd,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Miqp => "miqp",
            Method::Proximal => "proximal",
            Method::Ksvd => "ksvd",
        }
    }

    pub fn coder(&self) -> Coder {
        match self {
            Method::Miqp => Coder::Miqp,
            Method::Proximal => Coder::Iht,
            Method::Ksvd => Coder::Omp,
        }
    }

    /// The configured updater, except that K-SVD always uses its own.
    pub fn updater(&self, configured: Updater) -> Updater {
        match self {
            Method::Ksvd => Updater::Ksvd,
            _ => configured,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "miqp" => Ok(Method::Miqp),
            "proximal" | "iht" => Ok(Method::Proximal),
            "ksvd" | "k-svd" | "omp" => Ok(Method::Ksvd),
            other => Err(format!("unknown method {other:?} (expected miqp, proximal or ksvd)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown profile `{0}` (expected desk or paper)")]
    Profile(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Weight given to the noisy image in the weighted reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    /// `30 / sigma`.
    Auto,
    Fixed(f64),
}

impl LambdaPolicy {
    /// `None` means the noisy image is returned unchanged (`sigma = 0` under `Auto`).
    pub fn weight(&self, sigma: f64) -> Option<f64> {
        match *self {
            LambdaPolicy::Auto if sigma == 0.0 => None,
            LambdaPolicy::Auto => Some(30.0 / sigma),
            LambdaPolicy::Fixed(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Image paths; `card` selects the built-in synthetic scene.
    pub images: Vec<String>,
    pub crop: Option<usize>,
    pub sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    /// Dictionary update for the miqp and proximal methods.
    pub updater: Updater,
    pub atoms: usize,
    pub budget: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub patch_size: usize,
    pub stride: usize,
    /// Patches drawn for learning; 0 uses every patch.
    pub subsample: usize,
    pub lambda: LambdaPolicy,
    pub remove_mean: bool,
    pub time_limit: Duration,
    pub node_limit: usize,
    pub gap_tolerance: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub profile: String,
}

pub const KEYS: &[&str] = &[
    "images",
    "crop",
    "sigmas",
    "methods",
    "updater",
    "atoms",
    "budget",
    "iterations",
    "alpha",
    "patch_size",
    "stride",
    "subsample",
    "lambda",
    "remove_mean",
    "time_limit",
    "node_limit",
    "gap_tolerance",
    "seed",
    "output",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Small runs that finish in minutes on one core.
    pub fn desk() -> Self {
        Self {
            images: vec!["card".into()],
            crop: Some(128),
            sigmas: vec![10.0, 20.0, 50.0],
            methods: vec![Method::Miqp, Method::Proximal, Method::Ksvd],
            updater: Updater::LeastSquares,
            atoms: 32,
            budget: 5,
            iterations: 10,
            alpha: 1.5,
            patch_size: 8,
            stride: 2,
            subsample: 600,
            lambda: LambdaPolicy::Auto,
            remove_mean: false,
            time_limit: Duration::from_millis(500),
            node_limit: 60,
            gap_tolerance: 1e-6,
            seed: 1,
            output: PathBuf::from("runs/desk"),
            profile: "desk".into(),
        }
    }

    /// Full-size setting: 100 atoms, sparsity 20, 30 rounds, 50 s per column.
    pub fn paper() -> Self {
        Self {
            crop: None,
            atoms: 100,
            budget: 20,
            iterations: 30,
            stride: 1,
            subsample: 36_000,
            time_limit: Duration::from_secs(50),
            node_limit: 1_000_000,
            output: PathBuf::from("runs/paper"),
            profile: "paper".into(),
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::Profile(other.into())),
        }
    }

    /// Rough upper bound on MIQP solves times the column time limit, in hours.
    pub fn worst_case_hours(&self) -> f64 {
        let solves = (self.subsample.max(1) * self.iterations) as f64;
        solves * self.time_limit.as_secs_f64() * (self.images.len() * self.sigmas.len()) as f64 / 3600.0
    }

    /// Parses a config file. A `profile` line, if present, must come first and
    /// selects the base values the other lines override.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_onto(None, text)
    }

    /// Like [`parse`](Self::parse), with `profile` taking precedence over the file's own.
    pub fn parse_onto(profile: Option<&str>, text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let file_profile = match pairs.first() {
            Some((k, v)) if k == "profile" => Some(v.as_str()),
            _ => None,
        };
        let mut config = Self::profile(profile.or(file_profile).unwrap_or("desk"))?;
        for (k, v) in &pairs {
            if k == "profile" {
                continue;
            }
            config.set(k, v)?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::Value {
            key: key.into(),
            message,
        };
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        let list = |v: &str| -> Vec<String> {
            v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
        };
        match key {
            "images" => self.images = list(value),
            "crop" => {
                self.crop = match value {
                    "none" | "0" => None,
                    v => Some(num(v).map_err(bad)?),
                }
            }
            "sigmas" => {
                self.sigmas = list(value)
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<_, _>>()
                    .map_err(bad)?
            }
            "methods" => {
                self.methods = list(value)
                    .iter()
                    .map(|s| s.parse::<Method>())
                    .collect::<Result<_, _>>()
                    .map_err(bad)?
            }
            "updater" => self.updater = value.parse().map_err(|e: l0dict_core::Error| bad(e.to_string()))?,
            "atoms" => self.atoms = num(value).map_err(bad)?,
            "budget" => self.budget = num(value).map_err(bad)?,
            "iterations" => self.iterations = num(value).map_err(bad)?,
            "alpha" => self.alpha = num(value).map_err(bad)?,
            "patch_size" => self.patch_size = num(value).map_err(bad)?,
            "stride" => self.stride = num(value).map_err(bad)?,
            "subsample" => self.subsample = num(value).map_err(bad)?,
            "lambda" => {
                self.lambda = match value {
                    "auto" => LambdaPolicy::Auto,
                    v => LambdaPolicy::Fixed(num(v).map_err(bad)?),
                }
            }
            "remove_mean" => self.remove_mean = num(value).map_err(bad)?,
            "time_limit" => {
                let secs: f64 = num(value).map_err(bad)?;
                self.time_limit = Duration::try_from_secs_f64(secs).map_err(|e| bad(e.to_string()))?;
            }
            "node_limit" => self.node_limit = num(value).map_err(bad)?,
            "gap_tolerance" => self.gap_tolerance = num(value).map_err(bad)?,
            "seed" => self.seed = num(value).map_err(bad)?,
            "output" => self.output = PathBuf::from(value),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Checks the settings against the solver and imaging preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.images.is_empty() {
            return fail("no images given".into());
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return fail("sigmas must be a non-empty list of finite values >= 0".into());
        }
        if self.methods.is_empty() {
            return fail("no methods given".into());
        }
        let n = self.patch_size * self.patch_size;
        if self.patch_size == 0 || self.stride == 0 {
            return fail("patch_size and stride must be >= 1".into());
        }
        if let Some(c) = self.crop {
            if c < self.patch_size {
                return fail(format!("crop {c} is smaller than the patch size"));
            }
        }
        if self.atoms == 0 || self.budget == 0 || self.budget > self.atoms {
            return fail(format!("need 1 <= budget <= atoms, got budget {} atoms {}", self.budget, self.atoms));
        }
        if self.methods.contains(&Method::Ksvd) && self.budget > n {
            return fail(format!("omp needs budget <= patch dimension {n}"));
        }
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be > 0".into());
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return fail("lambda must be >= 0".into());
            }
        }
        if self.time_limit.is_zero() || self.node_limit == 0 || !(self.gap_tolerance > 0.0) {
            return fail("solver limits must be positive".into());
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let _ = writeln!(out, "profile = {}", self.profile);
        let _ = writeln!(out, "images = {}", self.images.join(","));
        let _ = writeln!(out, "crop = {}", self.crop.map_or("none".into(), |c| c.to_string()));
        let _ = writeln!(out, "sigmas = {}", join(self.sigmas.iter().map(|s| s.to_string()).collect()));
        let _ = writeln!(
            out,
            "methods = {}",
            join(self.methods.iter().map(|m| m.label().to_string()).collect())
        );
        let _ = writeln!(out, "updater = {}", self.updater.as_str());
        let _ = writeln!(out, "atoms = {}", self.atoms);
        let _ = writeln!(out, "budget = {}", self.budget);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "patch_size = {}", self.patch_size);
        let _ = writeln!(out, "stride = {}", self.stride);
        let _ = writeln!(out, "subsample = {}", self.subsample);
        let lambda = match self.lambda {
            LambdaPolicy::Auto => "auto".to_string(),
            LambdaPolicy::Fixed(v) => v.to_string(),
        };
        let _ = writeln!(out, "lambda = {lambda}");
        let _ = writeln!(out, "remove_mean = {}", self.remove_mean);
        let _ = writeln!(out, "time_limit = {}", self.time_limit.as_secs_f64());
        let _ = writeln!(out, "node_limit = {}", self.node_limit);
        let _ = writeln!(out, "gap_tolerance = {}", self.gap_tolerance);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "output = {}", self.output.display());
        out
    }
}
