//! Browser bindings for the static demo page in `www/`.
//!
//! Each exported function wraps a plain Rust function of the same name with
//! an `_of` suffix, so the logic is testable natively.

use std::sync::OnceLock;

use espn::nn::Architecture;
use espn::pruning::nnz_budget;
use espn::tasks::{
    apply_permutation, mnist_from_bytes, permutation, rotate_image, PlantedConfig, RawDataset,
};
use espn::theory::{excess_risk_sweep, fit_scaling_exponent, median_by_n, ErmConfig};
use wasm_bindgen::prelude::*;

static TEST_IMAGES: &[u8] = include_bytes!("../../../data/mnist-mini/t10k-images-idx3-ubyte.gz");
static TEST_LABELS: &[u8] = include_bytes!("../../../data/mnist-mini/t10k-labels-idx1-ubyte.gz");

fn digits() -> espn::Result<&'static RawDataset> {
    static CELL: OnceLock<RawDataset> = OnceLock::new();
    if let Some(d) = CELL.get() {
        return Ok(d);
    }
    let d = mnist_from_bytes(TEST_IMAGES, TEST_LABELS)?;
    Ok(CELL.get_or_init(|| d))
}

fn js(e: espn::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Fraction of FC1024's maskable weights in use after each of `tasks` tasks,
/// when every task claims its full allocation under `alpha`.
pub fn allocation_curve_of(alpha: f64, tasks: u32) -> espn::Result<Vec<f64>> {
    let p = Architecture::fc1024().maskable_weights();
    let mut used = 0;
    let mut out = Vec::with_capacity(tasks as usize);
    for _ in 0..tasks {
        used += nnz_budget(p, used, alpha)?;
        out.push(used as f64 / p as f64);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn allocation_curve(alpha: f64, tasks: u32) -> Result<Vec<f64>, JsError> {
    allocation_curve_of(alpha, tasks).map_err(js)
}

/// Number of bundled test digits.
#[wasm_bindgen]
pub fn digit_count() -> u32 {
    digits().map_or(0, |d| d.len() as u32)
}

pub fn digit_label_of(index: u32) -> espn::Result<u32> {
    let d = digits()?;
    d.labels
        .get(index as usize)
        .copied()
        .ok_or(espn::Error::NotEnoughSamples {
            requested: index as usize + 1,
            available: d.len(),
        })
}

#[wasm_bindgen]
pub fn digit_label(index: u32) -> Result<u32, JsError> {
    digit_label_of(index).map_err(js)
}

/// 28×28 grayscale bytes of test digit `index` as seen by a task of
/// `family`: `"base"`, `"rotated"` (`param` in degrees) or `"permuted"`
/// (`param` is the permutation seed).
pub fn digit_pixels_of(family: &str, param: f64, index: u32) -> espn::Result<Vec<u8>> {
    let d = digits()?;
    if index as usize >= d.len() {
        return Err(espn::Error::NotEnoughSamples {
            requested: index as usize + 1,
            available: d.len(),
        });
    }
    let img = d.images.row(index as usize);
    let out = match family {
        "base" => img.to_vec(),
        "rotated" => rotate_image(img, d.rows, d.cols, param),
        "permuted" => apply_permutation(img, &permutation(img.len(), param as u64)),
        other => return Err(espn::Error::InvalidConfig(format!("unknown family `{other}`"))),
    };
    Ok(out.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
}

#[wasm_bindgen]
pub fn digit_pixels(family: &str, param: f64, index: u32) -> Result<Vec<u8>, JsError> {
    digit_pixels_of(family, param, index).map_err(js)
}

/// Excess risk of the shallow ERM on a planted model (d=30, r=6, T=4) with
/// `r_frz` frozen rows, for N in 50..800. Returns `[N_0, e_0, N_1, e_1, ..,
/// slope]` where the slope is the least-squares fit of log excess on log N.
pub fn excess_risk_curve_of(r_frz: u32, seed: u64) -> espn::Result<Vec<f64>> {
    let model = PlantedConfig {
        r_frz: r_frz as usize,
        ..PlantedConfig::default()
    };
    let ns = [50, 100, 200, 400, 800];
    let points = excess_risk_sweep(&model, &ns, &[seed], 5_000, &ErmConfig::default())?;
    let medians = median_by_n(&points);
    let fit = fit_scaling_exponent(&medians)?;
    let mut out: Vec<f64> = medians.iter().flat_map(|&(n, e)| [n, e]).collect();
    out.push(fit.slope);
    Ok(out)
}

#[wasm_bindgen]
pub fn excess_risk_curve(r_frz: u32, seed: u64) -> Result<Vec<f64>, JsError> {
    excess_risk_curve_of(r_frz, seed).map_err(js)
}
