//! Reconstruction quality (MSE, PSNR, SSIM on the 8-bit scale) and
//! classification summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("image side {side} is smaller than the {window}x{window} SSIM window")]
    TooSmall { side: usize, window: usize },
    #[error("{0} pixels do not form a square image")]
    NotSquare(usize),
    #[error("empty input")]
    Empty,
}

const PEAK: f64 = 255.0;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

/// Value returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

fn check(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Mean squared difference after scaling `[0, 1]` inputs to `[0, 255]`.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check(x, y)?;
    let sum: f64 = x.iter().zip(y).map(|(a, b)| (PEAK * a - PEAK * b).powi(2)).sum();
    Ok(sum / x.len() as f64)
}

/// PSNR in dB for a given 8-bit-scale MSE; [`PSNR_IDENTICAL`] when it is 0.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    Ok(psnr_from_mse(mse(x, y)?))
}

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a square image with the 1-D kernel `g`.
fn filter(img: &[f64], side: usize, g: &[f64]) -> Vec<f64> {
    let out = side - g.len() + 1;
    let mut rows = vec![0.0; side * out];
    for r in 0..side {
        for c in 0..out {
            rows[r * out + c] = g.iter().enumerate().map(|(k, w)| w * img[r * side + c + k]).sum();
        }
    }
    let mut res = vec![0.0; out * out];
    for r in 0..out {
        for c in 0..out {
            res[r * out + c] = g.iter().enumerate().map(|(k, w)| w * rows[(r + k) * out + c]).sum();
        }
    }
    res
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows of two square
/// images in `[0, 1]`.
pub fn ssim(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check(x, y)?;
    let side = (x.len() as f64).sqrt().round() as usize;
    if side * side != x.len() {
        return Err(MetricsError::NotSquare(x.len()));
    }
    if side < WINDOW {
        return Err(MetricsError::TooSmall { side, window: WINDOW });
    }
    let g = gaussian_window();
    let xs: Vec<f64> = x.iter().map(|v| v * PEAK).collect();
    let ys: Vec<f64> = y.iter().map(|v| v * PEAK).collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = filter(&xs, side, &g);
    let mu_y = filter(&ys, side, &g);
    let e_xx = filter(&sq(&xs, &xs), side, &g);
    let e_yy = filter(&sq(&ys, &ys), side, &g);
    let e_xy = filter(&sq(&xs, &ys), side, &g);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + C1) * (2.0 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Per-image metrics averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n_images: usize,
}

/// Per-image values for each pair, in order.
pub fn per_image_metrics(originals: &[Vec<f64>], recovered: &[Vec<f64>]) -> Result<Vec<MetricsRecord>, MetricsError> {
    if originals.len() != recovered.len() {
        return Err(MetricsError::LengthMismatch(originals.len(), recovered.len()));
    }
    originals
        .iter()
        .zip(recovered)
        .map(|(a, b)| {
            let m = mse(a, b)?;
            Ok(MetricsRecord { mse: m, psnr: psnr_from_mse(m), ssim: ssim(a, b)?, n_images: 1 })
        })
        .collect()
}

/// Arithmetic means of per-image MSE, PSNR and SSIM. PSNR is averaged per
/// image, not derived from the mean MSE.
pub fn batch_metrics(originals: &[Vec<f64>], recovered: &[Vec<f64>]) -> Result<MetricsRecord, MetricsError> {
    let each = per_image_metrics(originals, recovered)?;
    if each.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = each.len() as f64;
    Ok(MetricsRecord {
        mse: each.iter().map(|r| r.mse).sum::<f64>() / n,
        psnr: each.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: each.iter().map(|r| r.ssim).sum::<f64>() / n,
        n_images: each.len(),
    })
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Index of the largest entry, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean and sample standard deviation (n - 1 denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check(x, y)?;
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx)?;
    let (my, _) = mean_std(&ry)?;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0; 4], &[1.0; 4]).unwrap(), 65025.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 32512.5);
        assert!(mse(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert!(close(psnr_from_mse(65.025), 30.0, 1e-12));
        assert_eq!(psnr_from_mse(65025.0), 0.0);
        assert!(close(psnr_from_mse(650.25), 20.0, 1e-12));
        assert_eq!(psnr(&[0.5], &[0.5]).unwrap(), PSNR_IDENTICAL);
    }

    #[test]
    fn ssim_closed_forms() {
        let zeros = vec![0.0; 16 * 16];
        let ones = vec![1.0; 16 * 16];
        let expected = C1 / (PEAK * PEAK + C1);
        assert!(close(ssim(&zeros, &ones).unwrap(), expected, 1e-12));
        let flat = vec![100.0 / 255.0; 16 * 16];
        assert!(close(ssim(&flat, &flat).unwrap(), 1.0, 1e-12));
        let x: Vec<f64> = (0..256).map(|i| ((i * 31) % 17) as f64 / 16.0).collect();
        assert!(close(ssim(&x, &x).unwrap(), 1.0, 1e-12));
        assert!(matches!(ssim(&[0.0; 100], &[0.0; 100]), Err(MetricsError::TooSmall { side: 10, .. })));
    }

    #[test]
    fn batch_examples() {
        let same = vec![0.0; 16 * 16];
        let ones = vec![1.0; 16 * 16];
        let r = batch_metrics(&[same.clone(), same.clone()], &[same.clone(), ones]).unwrap();
        let expected = (1.0 + C1 / (PEAK * PEAK + C1)) / 2.0;
        assert!(close(r.ssim, expected, 1e-12));
        assert!(close(r.ssim, 0.50005, 1e-5));
        assert!(batch_metrics(&[same.clone()], &[]).is_err());
    }

    #[test]
    fn summaries() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert!(accuracy(&[], &[]).is_err());
        let (m, s) = mean_std(&[0.7, 0.9]).unwrap();
        assert!(close(m, 0.8, 1e-12) && close(s, 0.02f64.sqrt(), 1e-12));
        assert_eq!(mean_std(&[0.3]).unwrap(), (0.3, 0.0));
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn spearman_examples() {
        assert!(close(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0, 1e-12));
        assert!(close(spearman(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]).unwrap(), -1.0, 1e-12));
        // ties get averaged ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3)
        let r = spearman(&[5.0, 5.0, 7.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(close(r, 0.75f64.sqrt(), 1e-12), "{r}");
    }
}
