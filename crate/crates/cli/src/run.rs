//! End-to-end denoising runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use l0dict_core::imaging::{
    add_gaussian_noise, extract_patches, load_pgm, psnr, reconstruct_average, reconstruct_weighted, save_pgm,
    test_card, GrayImage,
};
use l0dict_core::learn::{learn, sparse_code_batch, CodingOptions, LearnConfig};
use l0dict_core::miqp::SolverLimits;
use l0dict_core::model::SignalBatch;
use nalgebra::{DMatrix, RowDVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ExperimentConfig, Method};
use crate::dictionary_io::format_dictionary;
use crate::report::{compare_report, format_table, sigma_key, ResultRow};

/// Side length of the built-in scene before cropping.
pub const CARD_SIZE: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub failures: usize,
    pub output: PathBuf,
}

/// Loads `card` (the built-in scene) or a PGM path, then center-crops.
pub fn load_image(spec: &str, crop: Option<usize>) -> l0dict_core::Result<(String, GrayImage)> {
    let (name, img) = if spec == "card" {
        ("card".to_string(), test_card(CARD_SIZE, CARD_SIZE))
    } else {
        let name = Path::new(spec)
            .file_stem()
            .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        (name, load_pgm(spec)?)
    };
    match crop {
        Some(c) if c < img.height().min(img.width()) => Ok((name, img.center_crop(c)?)),
        _ => Ok((name, img)),
    }
}

/// Seed for one (image, sigma) pair, shared by every method so they see the same noise.
fn derive_seed(base: u64, image: usize, sigma: usize) -> u64 {
    // SplitMix64 finalizer over the packed indices.
    let mut z = base ^ ((image as u64) << 32 | sigma as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Outcome {
    row: ResultRow,
    trace_log: String,
    dictionary: String,
    noisy: GrayImage,
    average: GrayImage,
    weighted: GrayImage,
}

fn learn_config(config: &ExperimentConfig, method: Method, seed: u64) -> LearnConfig {
    LearnConfig {
        atom_count: config.atoms,
        budget: config.budget,
        outer_iterations: config.iterations,
        coder: method.coder(),
        updater: method.updater(config.updater),
        coding: CodingOptions {
            limits: SolverLimits {
                time_limit: config.time_limit,
                node_limit: config.node_limit,
                gap_tolerance: config.gap_tolerance,
                ..Default::default()
            },
            alpha: config.alpha,
            ..Default::default()
        },
        seed,
        ..Default::default()
    }
}

fn run_one(
    config: &ExperimentConfig,
    name: &str,
    clean: &GrayImage,
    sigma: f64,
    method: Method,
    seed: u64,
) -> Result<Outcome, String> {
    let noisy = add_gaussian_noise(clean, sigma, seed).map_err(|e| e.to_string())?;
    let grid = extract_patches(&noisy, config.patch_size, config.stride).map_err(|e| e.to_string())?;
    let mut signals = grid.patches.signals().clone();
    let means = if config.remove_mean {
        let m = RowDVector::from_iterator(signals.ncols(), signals.column_iter().map(|c| c.mean()));
        for (j, mut col) in signals.column_iter_mut().enumerate() {
            col.add_scalar_mut(-m[j]);
        }
        Some(m)
    } else {
        None
    };
    let all = SignalBatch::new(signals).map_err(|e| e.to_string())?;
    let training = if config.subsample > 0 && config.subsample < all.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut idx = sample(&mut rng, all.len(), config.subsample).into_vec();
        idx.sort_unstable();
        all.select(&idx)
    } else {
        all.clone()
    };

    let lc = learn_config(config, method, seed.wrapping_add(2));
    let learned = learn(&training, &lc).map_err(|e| e.to_string())?;
    let (codes, _) = sparse_code_batch(&all, &learned.dictionary, lc.budget, lc.coder, &lc.coding, None)
        .map_err(|e| format!("final coding: {e}"))?;
    let mut coded: DMatrix<f64> = learned.dictionary.atoms() * codes.codes();
    if let Some(m) = &means {
        for (j, mut col) in coded.column_iter_mut().enumerate() {
            col.add_scalar_mut(m[j]);
        }
    }

    let (average, _) = reconstruct_average(&grid, &coded).map_err(|e| e.to_string())?;
    let weighted = match config.lambda.weight(sigma) {
        Some(l) => reconstruct_weighted(&noisy, &grid, &coded, l).map_err(|e| e.to_string())?.0,
        None => noisy.clone(),
    };
    let score = |img: &GrayImage| psnr(clean, img).map_err(|e| e.to_string());
    Ok(Outcome {
        row: ResultRow {
            image: name.to_string(),
            method: method.label().to_string(),
            sigma,
            psnr_noisy: score(&noisy)?,
            psnr_average: score(&average)?,
            psnr_weighted: score(&weighted)?,
            status: "ok".into(),
        },
        trace_log: learned.trace.to_log(false),
        dictionary: format_dictionary(&learned.dictionary),
        noisy,
        average,
        weighted,
    })
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io { path, source })
}

fn mkdir(path: PathBuf) -> Result<PathBuf, RunError> {
    fs::create_dir_all(&path).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Runs every (image, sigma, method) combination in order and writes
/// `results.tsv`, `report.md`, `best_cells.tsv`, `config.txt`, and per-run
/// traces, dictionaries and images under `config.output`.
///
/// A failed run is recorded in the table and the others continue.
pub fn run_denoise(config: &ExperimentConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let out = mkdir(config.output.clone())?;
    let traces = mkdir(out.join("traces"))?;
    let images_dir = mkdir(out.join("images"))?;
    let dicts = mkdir(out.join("dictionaries"))?;
    write(out.join("config.txt"), config.to_text())?;

    let mut rows = Vec::new();
    for (ii, spec) in config.images.iter().enumerate() {
        let loaded = load_image(spec, config.crop);
        for (si, &sigma) in config.sigmas.iter().enumerate() {
            let seed = derive_seed(config.seed, ii, si);
            for &method in &config.methods {
                let start = Instant::now();
                let result = match &loaded {
                    Ok((name, clean)) => run_one(config, name, clean, sigma, method, seed),
                    Err(e) => Err(format!("loading {spec}: {e}")),
                };
                let name = loaded.as_ref().map_or_else(|_| spec.clone(), |(n, _)| n.clone());
                let tag = format!("{name}_s{}_{}", sigma_key(sigma), method.label());
                match result {
                    Ok(o) => {
                        eprintln!(
                            "{tag}: average {:.2} dB, weighted {:.2} dB ({:.1} s)",
                            o.row.psnr_average,
                            o.row.psnr_weighted,
                            start.elapsed().as_secs_f64()
                        );
                        write(traces.join(format!("{tag}.log")), &o.trace_log)?;
                        write(dicts.join(format!("{tag}.txt")), &o.dictionary)?;
                        for (suffix, img) in [("noisy", &o.noisy), ("average", &o.average), ("weighted", &o.weighted)] {
                            let path = images_dir.join(format!("{tag}_{suffix}.pgm"));
                            save_pgm(img, &path).map_err(|e| RunError::Io {
                                path: path.clone(),
                                source: io::Error::other(e.to_string()),
                            })?;
                        }
                        rows.push(o.row);
                    }
                    Err(message) => {
                        eprintln!("{tag}: failed: {message}");
                        rows.push(ResultRow {
                            image: name,
                            method: method.label().to_string(),
                            sigma,
                            psnr_noisy: f64::NAN,
                            psnr_average: f64::NAN,
                            psnr_weighted: f64::NAN,
                            status: format!("failed: {message}"),
                        });
                    }
                }
            }
        }
    }

    write(out.join("results.tsv"), format_table(&rows))?;
    match compare_report(&rows, Method::Miqp.label()) {
        Ok(cmp) => {
            write(out.join("report.md"), cmp.to_markdown())?;
            write(out.join("best_cells.tsv"), cmp.best_cells_tsv())?;
        }
        Err(e) => write(out.join("report.md"), format!("No report: {e}\n"))?,
    }
    let failures = rows.iter().filter(|r| !r.is_ok()).count();
    Ok(RunSummary {
        rows,
        failures,
        output: out,
    })
}
