//! PSNR and SSIM image-quality scores and dataset-level aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub const CSV_HEADER: &str = "method,f1,k1,detectors,n_images,psnr_mean,psnr_std,ssim_mean,ssim_std,params";

fn same_size(a: &Image2D, b: &Image2D, op: &'static str) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::shape(op, format!("{} px vs {} px", a.size(), b.size())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB. `peak` defaults to the reference
/// maximum. Identical images give `f64::INFINITY`.
pub fn psnr(test: &Image2D, reference: &Image2D, peak: Option<f64>) -> Result<f64> {
    same_size(test, reference, "psnr")?;
    let peak = peak.unwrap_or_else(|| reference.max());
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let n = test.values().len() as f64;
    let mse = test
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering: output is `(n - 10)^2`.
fn filter_valid(src: &[f64], n: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let m = n + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; n * m];
    for y in 0..n {
        for x in 0..m {
            rows[y * m + x] = (0..SSIM_WINDOW).map(|k| w[k] * src[y * n + x + k]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for y in 0..m {
        for x in 0..m {
            out[y * m + x] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(y + k) * m + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully covered 11x11 Gaussian windows,
/// with the dynamic range taken from the reference (`max - min`).
pub fn ssim(test: &Image2D, reference: &Image2D) -> Result<f64> {
    let range = reference.max() - reference.min();
    if !(range > 0.0) {
        return Err(Error::InvalidArgument(
            "ssim reference is constant (zero dynamic range)".into(),
        ));
    }
    ssim_with_range(test, reference, range)
}

pub fn ssim_with_range(test: &Image2D, reference: &Image2D, range: f64) -> Result<f64> {
    same_size(test, reference, "ssim")?;
    let n = test.size();
    if n < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {n}x{n}"
        )));
    }
    if !(range > 0.0) {
        return Err(Error::InvalidArgument("ssim dynamic range must be positive".into()));
    }
    let w = gaussian_window();
    let a = test.values();
    let b = reference.values();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, n, &w);
    let mu_b = filter_valid(b, n, &w);
    let aa = filter_valid(&prod(&|x, _| x * x), n, &w);
    let bb = filter_valid(&prod(&|_, y| y * y), n, &w);
    let ab = filter_valid(&prod(&|x, y| x * y), n, &w);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Per-image scores and `mean ± std` summary for one table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub method: String,
    pub f1: Option<usize>,
    pub k1: Option<usize>,
    pub detectors: usize,
    pub params: Option<usize>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

/// Mean and unbiased standard deviation of the finite entries.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < values.len() {
        log::warn!(
            "{} non-finite scores excluded from aggregation",
            values.len() - finite.len()
        );
    }
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

impl QualityReport {
    pub fn new(method: impl Into<String>, detectors: usize) -> Self {
        QualityReport {
            method: method.into(),
            f1: None,
            k1: None,
            detectors,
            params: None,
            psnr: Vec::new(),
            ssim: Vec::new(),
        }
    }

    pub fn n_images(&self) -> usize {
        self.psnr.len()
    }

    pub fn psnr_stats(&self) -> (f64, f64) {
        mean_std(&self.psnr)
    }

    pub fn ssim_stats(&self) -> (f64, f64) {
        mean_std(&self.ssim)
    }

    pub fn csv_row(&self) -> String {
        let (pm, ps) = self.psnr_stats();
        let (sm, ss) = self.ssim_stats();
        format!(
            "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
            self.method,
            opt(&self.f1),
            opt(&self.k1),
            self.detectors,
            self.n_images(),
            pm,
            ps,
            sm,
            ss,
            opt(&self.params)
        )
    }
}

pub fn reports_to_csv(reports: &[QualityReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Scores `restored[i]` against `targets[i]`.
pub fn score_pairs(mut report: QualityReport, restored: &[Image2D], targets: &[Image2D]) -> Result<QualityReport> {
    if restored.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    if restored.len() != targets.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} outputs for {} targets", restored.len(), targets.len()),
        ));
    }
    for (x, y) in restored.iter().zip(targets) {
        report.psnr.push(psnr(x, y, None)?);
        report.ssim.push(ssim(x, y)?);
    }
    Ok(report)
}
